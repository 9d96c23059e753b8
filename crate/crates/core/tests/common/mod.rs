#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds a valid manifest of `n_ops` randomly shaped operations.
pub fn random_manifest(shape_seed: u64, n_ops: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(shape_seed);
    let mut out = String::from("oracle_check = true\n");
    for i in 0..n_ops {
        out.push_str("\n[[op]]\n");
        let rounding = if rng.gen_bool(0.5) { "truncate" } else { "half_up" };
        let scale = format!("scale = {{ shift = {}, rounding = \"{rounding}\" }}\n", rng.gen_range(0..=8));
        match rng.gen_range(0..4) {
            0 => {
                let (m, n, k) = (rng.gen_range(1..=16), rng.gen_range(1..=16), rng.gen_range(1..=16));
                out.push_str(&format!(
                    "kind = \"gemm\"\nname = \"gemm{i}\"\nm = {m}\nn = {n}\nk = {k}\na = 0\nb = 1024\nc = 2048\n{scale}"
                ));
            }
            1 => {
                let (h, w) = (rng.gen_range(3..=8), rng.gen_range(3..=8));
                let kh = rng.gen_range(1..=3);
                let kw = rng.gen_range(1..=3);
                out.push_str(&format!(
                    "kind = \"conv\"\nname = \"conv{i}\"\nin_h = {h}\nin_w = {w}\nin_c = {}\nout_c = {}\n\
                     kernel_h = {kh}\nkernel_w = {kw}\nstride = {}\npadding = {}\ninput = 0\nweight = 1024\noutput = 2048\n{scale}",
                    rng.gen_range(1..=3),
                    rng.gen_range(1..=4),
                    rng.gen_range(1..=2),
                    rng.gen_range(0..=1),
                ));
            }
            2 => {
                let (h, w) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
                let mode = if rng.gen_bool(0.5) { "max" } else { "avg" };
                out.push_str(&format!(
                    "kind = \"pool\"\nname = \"pool{i}\"\nmode = \"{mode}\"\nchannels = {}\nin_h = {h}\nin_w = {w}\n\
                     window_h = {}\nwindow_w = {}\nstride = {}\ninput = 0\noutput = 2048\n",
                    rng.gen_range(1..=3),
                    rng.gen_range(1..=h.min(3)),
                    rng.gen_range(1..=w.min(3)),
                    rng.gen_range(1..=2),
                ));
            }
            _ => {
                out.push_str(&format!(
                    "kind = \"relu\"\nname = \"relu{i}\"\ncount = {}\nsrc = 0\ndst = 2048\n",
                    rng.gen_range(1..=512)
                ));
            }
        }
    }
    out
}
