//! Straight-line reference implementations used to check engine output.
//!
//! These work on plain element vectors with exact wide-integer arithmetic and
//! share no code with the engine's execution path, including the narrowing
//! step.

use crate::engine::{ConvParams, PoolMode, PoolParams};
use crate::numerics::{Rounding, ScaleSpec, ACC48_MAX, ACC48_MIN};

/// Exact narrowing: clamp to 48 bits, divide by `2^shift` with the rounding
/// rule, clamp (or wrap) to 16 bits.
pub fn narrow(sum: i128, scale: ScaleSpec) -> i16 {
    let acc = sum.clamp(ACC48_MIN as i128, ACC48_MAX as i128);
    let d = 1i128 << scale.right_shift();
    let q = match scale.rounding {
        Rounding::Truncate => acc.div_euclid(d),
        Rounding::RoundHalfUp => (2 * acc + d).div_euclid(2 * d),
    };
    if scale.saturate {
        q.clamp(i16::MIN as i128, i16::MAX as i128) as i16
    } else {
        q as i16
    }
}

/// `C = A (m x k) * B (k x n)`, row-major.
pub fn gemm(a: &[i16], b: &[i16], m: usize, n: usize, k: usize, scale: ScaleSpec) -> Vec<i16> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut c = vec![0i16; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut sum = 0i128;
            for t in 0..k {
                sum += a[i * k + t] as i128 * b[t * n + j] as i128;
            }
            c[i * n + j] = narrow(sum, scale);
        }
    }
    c
}

/// Unfolds a zero-padded `[c][h][w]` tensor into a `(in_c*kh*kw) x (out_h*out_w)` matrix.
pub fn im2col(input: &[i16], p: &ConvParams) -> Vec<i16> {
    let (c, h, w) = (p.in_c as i64, p.in_h as i64, p.in_w as i64);
    let (kh, kw) = (p.kernel_h as i64, p.kernel_w as i64);
    let (s, pad) = (p.stride as i64, p.padding as i64);
    let oh = (h + 2 * pad - kh) / s + 1;
    let ow = (w + 2 * pad - kw) / s + 1;
    let cols = (oh * ow) as usize;
    let mut out = vec![0i16; (c * kh * kw) as usize * cols];
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ch * kh + ky) * kw + kx) as usize;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let y = oy * s + ky - pad;
                        let x = ox * s + kx - pad;
                        if y >= 0 && y < h && x >= 0 && x < w {
                            out[row * cols + (oy * ow + ox) as usize] = input[((ch * h + y) * w + x) as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Convolution as `weights (out_c x in_c*kh*kw) * im2col(input)`.
pub fn conv(input: &[i16], weights: &[i16], p: &ConvParams) -> Vec<i16> {
    let cols = im2col(input, p);
    let q = (p.in_c * p.kernel_h * p.kernel_w) as usize;
    let n = cols.len() / q;
    gemm(weights, &cols, p.out_c as usize, n, q, p.scale)
}

pub fn pool(input: &[i16], p: &PoolParams) -> Vec<i16> {
    let (h, w) = (p.in_h as usize, p.in_w as usize);
    let (wh, ww, s) = (p.window_h as usize, p.window_w as usize, p.stride as usize);
    let oh = (h - wh) / s + 1;
    let ow = (w - ww) / s + 1;
    let mut out = Vec::new();
    for c in 0..p.channels as usize {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut window = Vec::with_capacity(wh * ww);
                for y in oy * s..oy * s + wh {
                    window.extend_from_slice(&plane[y * w + ox * s..y * w + ox * s + ww]);
                }
                out.push(match p.mode {
                    PoolMode::Max => *window.iter().max().unwrap(),
                    PoolMode::Avg => {
                        let sum: i64 = window.iter().map(|&v| v as i64).sum();
                        (sum as f64 / window.len() as f64).trunc() as i16
                    }
                });
            }
        }
    }
    out
}

pub fn relu(input: &[i16]) -> Vec<i16> {
    input.iter().map(|&v| if v < 0 { 0 } else { v }).collect()
}
