//! Fixed-point arithmetic for the MAC datapath.
//!
//! Operands are 16-bit two's-complement words and products accumulate into a
//! 48-bit register, mirroring a DSP48E1-style accumulator. The datapath only
//! ever sees raw integers; [`QFormat`] is a host-side convenience for encoding
//! and decoding real values.

use thiserror::Error;

/// Largest value an [`Acc48`] can hold.
pub const ACC48_MAX: i64 = (1i64 << 47) - 1;
/// Smallest value an [`Acc48`] can hold.
pub const ACC48_MIN: i64 = -(1i64 << 47);

/// Maximum right shift accepted by [`ScaleSpec`].
pub const MAX_RIGHT_SHIFT: u8 = 47;

/// 16-bit fixed-point operand (raw two's-complement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Fixed16(pub i16);

impl Fixed16 {
    pub const ZERO: Fixed16 = Fixed16(0);
    pub const MAX: Fixed16 = Fixed16(i16::MAX);
    pub const MIN: Fixed16 = Fixed16(i16::MIN);

    #[inline]
    pub const fn raw(self) -> i16 {
        self.0
    }

    #[inline]
    pub fn to_le_bytes(self) -> [u8; 2] {
        self.0.to_le_bytes()
    }

    #[inline]
    pub fn from_le_bytes(bytes: [u8; 2]) -> Self {
        Fixed16(i16::from_le_bytes(bytes))
    }
}

impl From<i16> for Fixed16 {
    fn from(raw: i16) -> Self {
        Fixed16(raw)
    }
}

/// 48-bit saturating accumulator.
///
/// `overflow` is sticky: once an accumulation saturates, every value derived
/// from it by further [`mac`] calls keeps the flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Acc48 {
    raw: i64,
    overflow: bool,
}

impl Acc48 {
    pub const ZERO: Acc48 = Acc48 { raw: 0, overflow: false };

    /// Builds an accumulator from a wide value, saturating into 48 bits.
    pub fn saturating_from(value: i128) -> Self {
        if value > ACC48_MAX as i128 {
            Acc48 { raw: ACC48_MAX, overflow: true }
        } else if value < ACC48_MIN as i128 {
            Acc48 { raw: ACC48_MIN, overflow: true }
        } else {
            Acc48 { raw: value as i64, overflow: false }
        }
    }

    #[inline]
    pub const fn raw(self) -> i64 {
        self.raw
    }

    #[inline]
    pub const fn overflowed(self) -> bool {
        self.overflow
    }
}

/// Multiply-accumulate: `acc + a * b`, saturated to 48 bits.
#[inline]
pub fn mac(acc: Acc48, a: Fixed16, b: Fixed16) -> Acc48 {
    // |acc| < 2^47 and |a*b| <= 2^30, so the i64 sum cannot wrap.
    let sum = acc.raw + (a.0 as i64) * (b.0 as i64);
    let mut out = Acc48::saturating_from(sum as i128);
    out.overflow |= acc.overflow;
    out
}

/// Rounding applied to the bits discarded by a right shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    /// Drop the low bits (arithmetic shift, i.e. round toward negative infinity).
    #[default]
    Truncate,
    /// Add half an LSB before dropping: `floor(x / 2^s + 1/2)`.
    RoundHalfUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScaleError {
    #[error("right shift {0} exceeds the maximum of {MAX_RIGHT_SHIFT}")]
    ShiftTooLarge(u32),
}

/// Writeback narrowing policy from [`Acc48`] to [`Fixed16`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScaleSpec {
    right_shift: u8,
    pub rounding: Rounding,
    pub saturate: bool,
}

impl Default for ScaleSpec {
    fn default() -> Self {
        ScaleSpec { right_shift: 0, rounding: Rounding::Truncate, saturate: true }
    }
}

// Register encoding: bits[5:0] shift, bit 8 round-half-up, bit 9 wrap (disable saturation).
const SCALE_SHIFT_MASK: u32 = 0x3F;
const SCALE_ROUND_BIT: u32 = 1 << 8;
const SCALE_WRAP_BIT: u32 = 1 << 9;

impl ScaleSpec {
    pub fn new(right_shift: u32, rounding: Rounding) -> Result<Self, ScaleError> {
        if right_shift > MAX_RIGHT_SHIFT as u32 {
            return Err(ScaleError::ShiftTooLarge(right_shift));
        }
        Ok(ScaleSpec { right_shift: right_shift as u8, rounding, saturate: true })
    }

    #[inline]
    pub fn right_shift(&self) -> u32 {
        self.right_shift as u32
    }

    /// Packs the policy into the scale parameter register layout.
    pub fn to_word(&self) -> u32 {
        let mut w = self.right_shift as u32 & SCALE_SHIFT_MASK;
        if self.rounding == Rounding::RoundHalfUp {
            w |= SCALE_ROUND_BIT;
        }
        if !self.saturate {
            w |= SCALE_WRAP_BIT;
        }
        w
    }

    /// Inverse of [`ScaleSpec::to_word`]. Unused bits are ignored.
    pub fn from_word(word: u32) -> Result<Self, ScaleError> {
        let rounding = if word & SCALE_ROUND_BIT != 0 { Rounding::RoundHalfUp } else { Rounding::Truncate };
        let mut spec = ScaleSpec::new(word & SCALE_SHIFT_MASK, rounding)?;
        spec.saturate = word & SCALE_WRAP_BIT == 0;
        Ok(spec)
    }
}

/// Narrows an accumulator to 16 bits, returning whether the result was clamped.
pub fn requantize_flagged(acc: Acc48, scale: ScaleSpec) -> (Fixed16, bool) {
    let x = acc.raw;
    let s = scale.right_shift();
    let shifted = match scale.rounding {
        Rounding::Truncate => x >> s,
        Rounding::RoundHalfUp if s == 0 => x,
        // x + 2^(s-1) stays within i64 because |x| < 2^47.
        Rounding::RoundHalfUp => (x + (1i64 << (s - 1))) >> s,
    };
    if !scale.saturate {
        return (Fixed16(shifted as i16), false);
    }
    if shifted > i16::MAX as i64 {
        (Fixed16::MAX, true)
    } else if shifted < i16::MIN as i64 {
        (Fixed16::MIN, true)
    } else {
        (Fixed16(shifted as i16), false)
    }
}

/// Narrows an accumulator to 16 bits under `scale`.
#[inline]
pub fn requantize(acc: Acc48, scale: ScaleSpec) -> Fixed16 {
    requantize_flagged(acc, scale).0
}

#[inline]
pub fn relu_scalar(x: Fixed16) -> Fixed16 {
    Fixed16(x.0.max(0))
}

/// Host-side Q-format used to encode and decode real numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QFormat {
    pub frac_bits: u8,
}

impl Default for QFormat {
    fn default() -> Self {
        QFormat { frac_bits: 8 }
    }
}

impl QFormat {
    /// The raw value representing 1.0.
    pub fn one(&self) -> i32 {
        1 << self.frac_bits
    }

    /// Rounds to nearest and saturates into 16 bits.
    pub fn encode(&self, value: f64) -> Fixed16 {
        let scaled = (value * self.one() as f64).round();
        Fixed16(scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16)
    }

    pub fn decode(&self, x: Fixed16) -> f64 {
        x.0 as f64 / self.one() as f64
    }
}
