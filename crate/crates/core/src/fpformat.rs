//! Bit-exact functional models of the custom floating-point format.
//!
//! A value of format `(we, wf)` occupies `we + wf + 3` bits laid out
//! (msb to lsb) as `exception(2) | sign(1) | exponent(we) | fraction(wf)`.
//! There are no subnormals: zero, infinity and NaN are encoded in the
//! exception field instead of reserved exponent values, so every exponent
//! pattern of a normal number is usable.
//!
//! | exception | meaning  |
//! |-----------|----------|
//! | `00`      | zero     |
//! | `01`      | normal   |
//! | `10`      | infinity |
//! | `11`      | NaN      |
//!
//! Arithmetic goes through f64: operands are decoded exactly, the operation
//! runs in f64 and the result is rounded once into the target format. For
//! `wf <= 23` the f64 intermediate carries at least `2 * (wf + 1) + 2` bits,
//! so the final rounding is correct for add, sub, mul, div and sqrt.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::ArithKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FpError {
    #[error("unsupported float format ({we},{wf}): need 2 <= we <= 10 and 1 <= wf <= 23")]
    UnsupportedFormat { we: u32, wf: u32 },
    #[error("operand 0x{bits:x} does not fit in {width} bits")]
    WidthMismatch { bits: u64, width: u32 },
    #[error("`{0}` is not supported by this operation")]
    UnsupportedKind(ArithKind),
    #[error("Taylor order {0} out of range (1..=20)")]
    TaylorOrder(usize),
}

/// `(we, wf)` exponent/fraction widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FloatFormat {
    we: u32,
    wf: u32,
}

pub const EXC_ZERO: u64 = 0b00;
pub const EXC_NORMAL: u64 = 0b01;
pub const EXC_INF: u64 = 0b10;
pub const EXC_NAN: u64 = 0b11;

impl FloatFormat {
    pub fn new(we: u32, wf: u32) -> Result<Self, FpError> {
        if !(2..=10).contains(&we) || !(1..=23).contains(&wf) {
            return Err(FpError::UnsupportedFormat { we, wf });
        }
        Ok(FloatFormat { we, wf })
    }

    pub fn we(&self) -> u32 {
        self.we
    }

    pub fn wf(&self) -> u32 {
        self.wf
    }

    /// Exception bits + sign + exponent + fraction.
    pub fn total_width(&self) -> u32 {
        self.we + self.wf + 3
    }

    pub fn bias(&self) -> i32 {
        (1 << (self.we - 1)) - 1
    }

    pub fn min_exp(&self) -> i32 {
        -self.bias()
    }

    pub fn max_exp(&self) -> i32 {
        (1 << self.we) - 1 - self.bias()
    }

    pub fn min_normal(&self) -> f64 {
        pow2(self.min_exp())
    }

    pub fn max_value(&self) -> f64 {
        (2.0 - pow2(-(self.wf as i32))) * pow2(self.max_exp())
    }

    fn mask(&self) -> u64 {
        (1u64 << self.total_width()) - 1
    }

    pub fn fields(&self, v: FPValue) -> Fields {
        let b = v.0;
        Fields {
            exception: (b >> (self.we + self.wf + 1)) & 0b11,
            sign: (b >> (self.we + self.wf)) & 1 == 1,
            exponent: (b >> self.wf) & ((1 << self.we) - 1),
            fraction: b & ((1 << self.wf) - 1),
        }
    }

    pub fn pack(&self, f: Fields) -> FPValue {
        FPValue(
            (f.exception << (self.we + self.wf + 1))
                | ((f.sign as u64) << (self.we + self.wf))
                | ((f.exponent & ((1 << self.we) - 1)) << self.wf)
                | (f.fraction & ((1 << self.wf) - 1)),
        )
    }

    fn special(&self, exception: u64, sign: bool) -> FPValue {
        // NaN carries no sign.
        let sign = sign && exception != EXC_NAN;
        self.pack(Fields { exception, sign, exponent: 0, fraction: 0 })
    }

    pub fn zero(&self) -> FPValue {
        self.special(EXC_ZERO, false)
    }

    pub fn nan(&self) -> FPValue {
        self.special(EXC_NAN, false)
    }

    pub fn infinity(&self, negative: bool) -> FPValue {
        self.special(EXC_INF, negative)
    }

    /// Round-to-nearest-even into this format; overflow goes to infinity and
    /// anything below the minimum normal flushes to (signed) zero.
    pub fn encode(&self, x: f64) -> FPValue {
        if x.is_nan() {
            return self.nan();
        }
        let sign = x.is_sign_negative();
        if x == 0.0 {
            return self.special(EXC_ZERO, sign);
        }
        if x.is_infinite() {
            return self.special(EXC_INF, sign);
        }
        let bits = x.abs().to_bits();
        let raw_exp = (bits >> 52) as i32;
        if raw_exp == 0 {
            // f64 subnormals sit far below every supported minimum normal.
            return self.special(EXC_ZERO, sign);
        }
        let mut exp = raw_exp - 1023;
        let mant = (bits & ((1u64 << 52) - 1)) | (1u64 << 52);
        let shift = 52 - self.wf;
        let mut q = mant >> shift;
        let rem = mant & ((1u64 << shift) - 1);
        let half = 1u64 << (shift - 1);
        if rem > half || (rem == half && q & 1 == 1) {
            q += 1;
        }
        if q == 1u64 << (self.wf + 1) {
            q >>= 1;
            exp += 1;
        }
        if exp > self.max_exp() {
            return self.special(EXC_INF, sign);
        }
        if exp < self.min_exp() {
            return self.special(EXC_ZERO, sign);
        }
        self.pack(Fields {
            exception: EXC_NORMAL,
            sign,
            exponent: (exp + self.bias()) as u64,
            fraction: q & ((1u64 << self.wf) - 1),
        })
    }

    /// Exact f64 value of `v`. Exponent/fraction of non-normal values are ignored.
    pub fn decode(&self, v: FPValue) -> f64 {
        let f = self.fields(v);
        let signed = |x: f64| if f.sign { -x } else { x };
        match f.exception {
            EXC_ZERO => signed(0.0),
            EXC_INF => signed(f64::INFINITY),
            EXC_NAN => f64::NAN,
            _ => {
                let exp = f.exponent as i64 - self.bias() as i64 + 1023;
                let bits = ((f.sign as u64) << 63) | ((exp as u64) << 52) | (f.fraction << (52 - self.wf));
                f64::from_bits(bits)
            }
        }
    }

    /// Canonical form: exponent and fraction cleared for non-normal values,
    /// sign cleared for NaN.
    pub fn canonicalize(&self, v: FPValue) -> FPValue {
        let f = self.fields(FPValue(v.0 & self.mask()));
        if f.exception == EXC_NORMAL {
            self.pack(f)
        } else {
            self.special(f.exception, f.sign)
        }
    }

    pub fn check(&self, v: FPValue) -> Result<(), FpError> {
        if v.0 & !self.mask() != 0 {
            Err(FpError::WidthMismatch { bits: v.0, width: self.total_width() })
        } else {
            Ok(())
        }
    }

    /// Apply any operator kind. Operand count must match the kind's arity.
    pub fn apply(&self, kind: ArithKind, ops: &[FPValue]) -> FPValue {
        let mut x = [0.0; 3];
        for (slot, &v) in x.iter_mut().zip(ops) {
            *slot = self.decode(v);
        }
        self.encode(apply_f64(kind, &x[..ops.len()]))
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.we, self.wf)
    }
}

impl std::str::FromStr for FloatFormat {
    type Err = String;

    /// Parses `we,wf`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (we, wf) = s.split_once(',').ok_or_else(|| format!("expected `we,wf`, got `{s}`"))?;
        let we = we.trim().parse::<u32>().map_err(|e| format!("bad exponent width: {e}"))?;
        let wf = wf.trim().parse::<u32>().map_err(|e| format!("bad fraction width: {e}"))?;
        FloatFormat::new(we, wf).map_err(|e| e.to_string())
    }
}

/// Decomposed fields of an [`FPValue`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fields {
    pub exception: u64,
    pub sign: bool,
    pub exponent: u64,
    pub fraction: u64,
}

/// Raw bit pattern of a value in some [`FloatFormat`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FPValue(pub u64);

impl FPValue {
    pub fn bits(self) -> u64 {
        self.0
    }
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

/// Reference f64 semantics of every operator kind.
///
/// Comparison results are 1.0 (true) or 0.0 (false); `select` takes its
/// first operand when the condition is nonzero. `max` propagates NaN and
/// otherwise follows the IEEE total order, so `max(-0, +0) = +0`. `fmac`
/// is `a * b + c` evaluated in f64.
pub fn apply_f64(kind: ArithKind, x: &[f64]) -> f64 {
    match kind {
        ArithKind::Addf => x[0] + x[1],
        ArithKind::Subf => x[0] - x[1],
        ArithKind::Mulf => x[0] * x[1],
        ArithKind::Divf => x[0] / x[1],
        ArithKind::Sqrtf => x[0].sqrt(),
        ArithKind::Fmac => x[0] * x[1] + x[2],
        ArithKind::Neg => -x[0],
        ArithKind::Max => {
            if x[0].is_nan() || x[1].is_nan() {
                f64::NAN
            } else if x[0].total_cmp(&x[1]).is_ge() {
                x[0]
            } else {
                x[1]
            }
        }
        ArithKind::Relu => {
            if x[0].is_nan() {
                f64::NAN
            } else if x[0] > 0.0 {
                x[0]
            } else {
                0.0
            }
        }
        ArithKind::Cmpfugt => {
            if x[0].is_nan() || x[1].is_nan() || x[0] > x[1] {
                1.0
            } else {
                0.0
            }
        }
        ArithKind::Select => {
            if x[0] != 0.0 {
                x[1]
            } else {
                x[2]
            }
        }
    }
}

pub fn encode(x: f64, fmt: FloatFormat) -> FPValue {
    fmt.encode(x)
}

pub fn decode(v: FPValue, fmt: FloatFormat) -> f64 {
    fmt.decode(v)
}

const BINOPS: [ArithKind; 5] = [ArithKind::Addf, ArithKind::Subf, ArithKind::Mulf, ArithKind::Divf, ArithKind::Max];
const UNOPS: [ArithKind; 3] = [ArithKind::Sqrtf, ArithKind::Neg, ArithKind::Relu];

pub fn fp_binop(kind: ArithKind, a: FPValue, b: FPValue, fmt: FloatFormat) -> Result<FPValue, FpError> {
    if !BINOPS.contains(&kind) {
        return Err(FpError::UnsupportedKind(kind));
    }
    fmt.check(a)?;
    fmt.check(b)?;
    Ok(fmt.apply(kind, &[a, b]))
}

pub fn fp_unop(kind: ArithKind, a: FPValue, fmt: FloatFormat) -> Result<FPValue, FpError> {
    if !UNOPS.contains(&kind) {
        return Err(FpError::UnsupportedKind(kind));
    }
    fmt.check(a)?;
    Ok(fmt.apply(kind, &[a]))
}

/// Single-rounded `a * b + c`.
pub fn fp_fmac(a: FPValue, b: FPValue, c: FPValue, fmt: FloatFormat) -> Result<FPValue, FpError> {
    for v in [a, b, c] {
        fmt.check(v)?;
    }
    Ok(fmt.apply(ArithKind::Fmac, &[a, b, c]))
}

/// Taylor coefficients `[1/0!, 1/1!, ..., 1/k!]` of `exp`.
pub fn exp_coefficients(k: usize) -> Result<Vec<f64>, FpError> {
    if !(1..=20).contains(&k) {
        return Err(FpError::TaylorOrder(k));
    }
    let mut fact = 1u64;
    let mut coeffs = vec![1.0];
    for n in 1..=k as u64 {
        fact *= n;
        coeffs.push(1.0 / fact as f64);
    }
    Ok(coeffs)
}

/// Horner evaluation `(..(c_k * x + c_{k-1}) * x + ..) + c_0` in f64, with
/// the same operation order the lowered loop nests use.
pub fn horner_exp(x: f64, coeffs: &[f64]) -> f64 {
    let k = coeffs.len() - 1;
    let mut p = coeffs[k];
    for i in (0..k).rev() {
        p = coeffs[i] + p * x;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(we: u32, wf: u32) -> FloatFormat {
        FloatFormat::new(we, wf).unwrap()
    }

    #[test]
    fn widths() {
        assert_eq!(f(5, 4).total_width(), 12);
        assert_eq!(f(5, 11).total_width(), 19);
        assert_eq!(f(5, 3).total_width(), 11);
        assert!(FloatFormat::new(1, 4).is_err());
        assert!(FloatFormat::new(5, 0).is_err());
        assert!(FloatFormat::new(5, 24).is_err());
    }

    #[test]
    fn encode_one() {
        let fmt = f(5, 4);
        let v = fmt.encode(1.0);
        let fl = fmt.fields(v);
        assert_eq!(fl, Fields { exception: 0b01, sign: false, exponent: 0b01111, fraction: 0 });
        assert_eq!(v.bits(), 0b01_0_01111_0000);
    }

    #[test]
    fn encode_zero_is_all_clear() {
        for fmt in [f(5, 4), f(5, 11), f(8, 23)] {
            assert_eq!(fmt.encode(0.0).bits(), 0);
        }
    }

    #[test]
    fn overflow_to_infinity() {
        let fmt = f(5, 4);
        assert_eq!(fmt.max_exp(), 16);
        let max = (2.0 - 2f64.powi(-4)) * 2f64.powi(16);
        assert_eq!(fmt.max_value(), max);
        assert_eq!(fmt.decode(fmt.encode(max)), max);
        assert_eq!(fmt.fields(fmt.encode(2f64.powi(17))).exception, EXC_INF);
        // Below half an ulp stays finite; the tie rounds to even, which overflows.
        assert_eq!(fmt.decode(fmt.encode(max + 2f64.powi(10))), max);
        assert_eq!(fmt.fields(fmt.encode(max + 2f64.powi(11))).exception, EXC_INF);
        assert_eq!(fmt.encode(-2f64.powi(17)), fmt.infinity(true));
    }

    #[test]
    fn underflow_flushes_to_zero() {
        let fmt = f(5, 4);
        assert_eq!(fmt.min_normal(), 2f64.powi(-15));
        assert_eq!(fmt.decode(fmt.encode(2f64.powi(-15))), 2f64.powi(-15));
        assert_eq!(fmt.encode(2f64.powi(-16)), fmt.zero());
        let neg = fmt.encode(-2f64.powi(-16));
        assert_eq!(fmt.fields(neg).exception, EXC_ZERO);
        assert!(fmt.fields(neg).sign);
        // Just below min normal rounds up into range.
        assert_eq!(fmt.decode(fmt.encode(2f64.powi(-15) * (1.0 - 1e-9))), 2f64.powi(-15));
    }

    #[test]
    fn round_to_nearest_even() {
        let fmt = f(5, 4);
        // 1 + 1/32 is halfway between 1 and 1 + 1/16: ties to even (1.0).
        assert_eq!(fmt.decode(fmt.encode(1.0 + 1.0 / 32.0)), 1.0);
        // 1 + 3/32 is halfway between 1+1/16 and 1+2/16: ties to even (1+2/16).
        assert_eq!(fmt.decode(fmt.encode(1.0 + 3.0 / 32.0)), 1.125);
        assert_eq!(fmt.decode(fmt.encode(1.0 + 1.0 / 32.0 + 1e-9)), 1.0625);
        // Carry into the exponent.
        assert_eq!(fmt.decode(fmt.encode(1.99)), 2.0);
    }

    #[test]
    fn nan_and_specials() {
        let fmt = f(5, 4);
        assert_eq!(fmt.encode(f64::NAN), fmt.nan());
        assert!(fmt.decode(fmt.nan()).is_nan());
        assert_eq!(fmt.decode(fmt.infinity(false)), f64::INFINITY);
        let inf = fmt.infinity(false);
        assert_eq!(fmt.apply(ArithKind::Subf, &[inf, inf]), fmt.nan());
        assert_eq!(fmt.apply(ArithKind::Mulf, &[fmt.zero(), inf]), fmt.nan());
        assert_eq!(fmt.apply(ArithKind::Divf, &[fmt.encode(1.0), fmt.zero()]), inf);
        assert_eq!(fmt.apply(ArithKind::Sqrtf, &[fmt.encode(-4.0)]), fmt.nan());
        assert_eq!(fmt.apply(ArithKind::Sqrtf, &[fmt.encode(4.0)]), fmt.encode(2.0));
    }

    #[test]
    fn add_exact_cancellation() {
        let fmt = f(5, 4);
        let r = fp_binop(ArithKind::Addf, fmt.encode(1.0), fmt.encode(-1.0), fmt).unwrap();
        assert_eq!(fmt.fields(r).exception, EXC_ZERO);
    }

    #[test]
    fn fmac_exact_case() {
        let fmt = f(5, 4);
        let r = fp_fmac(fmt.encode(1.5), fmt.encode(2.0), fmt.encode(0.25), fmt).unwrap();
        // 1.5 * 2 + 0.25 = 3.25 = 1.625 * 2 which fits in four fraction bits.
        assert_eq!(1.5 * 2.0 + 0.25, 3.25);
        assert_eq!(r, fmt.encode(3.25));
        assert_eq!(fmt.decode(r), 3.25);
    }

    #[test]
    fn fmac_rounds_once() {
        let fmt = f(5, 4);
        // a*b = 1.0625^2 = 1.12890625 (needs 8 fraction bits); + c.
        let a = fmt.encode(1.0625);
        let c = fmt.encode(-1.125);
        let fused = fmt.apply(ArithKind::Fmac, &[a, a, c]);
        let unfused = fmt.apply(ArithKind::Addf, &[fmt.apply(ArithKind::Mulf, &[a, a]), c]);
        assert_eq!(fmt.decode(fused), 0.00390625);
        assert_eq!(fmt.decode(unfused), 0.0);
    }

    #[test]
    fn relu_semantics() {
        let fmt = f(5, 4);
        let r = fp_unop(ArithKind::Relu, fmt.encode(-3.0), fmt).unwrap();
        assert_eq!(r, fmt.zero());
        assert_eq!(fmt.apply(ArithKind::Relu, &[fmt.encode(-0.0)]), fmt.zero());
        assert_eq!(fmt.apply(ArithKind::Relu, &[fmt.infinity(true)]), fmt.zero());
        assert_eq!(fmt.apply(ArithKind::Relu, &[fmt.nan()]), fmt.nan());
        assert_eq!(fmt.apply(ArithKind::Relu, &[fmt.encode(2.5)]), fmt.encode(2.5));
    }

    #[test]
    fn max_and_neg() {
        let fmt = f(5, 4);
        let pz = fmt.encode(0.0);
        let nz = fmt.encode(-0.0);
        assert_eq!(fmt.apply(ArithKind::Max, &[pz, nz]), pz);
        assert_eq!(fmt.apply(ArithKind::Max, &[nz, pz]), pz);
        assert_eq!(fmt.apply(ArithKind::Max, &[fmt.encode(-1.0), fmt.infinity(true)]), fmt.encode(-1.0));
        assert_eq!(fmt.apply(ArithKind::Max, &[fmt.nan(), fmt.encode(1.0)]), fmt.nan());
        assert_eq!(fmt.apply(ArithKind::Neg, &[fmt.encode(1.5)]), fmt.encode(-1.5));
        assert_eq!(fmt.apply(ArithKind::Neg, &[pz]), nz);
        assert_eq!(fmt.apply(ArithKind::Neg, &[fmt.nan()]), fmt.nan());
    }

    #[test]
    fn width_mismatch_and_kind_errors() {
        let fmt = f(5, 4);
        let wide = FPValue(1 << 12);
        assert_eq!(
            fp_binop(ArithKind::Addf, wide, fmt.zero(), fmt),
            Err(FpError::WidthMismatch { bits: 1 << 12, width: 12 })
        );
        assert!(fp_unop(ArithKind::Addf, fmt.zero(), fmt).is_err());
        assert!(fp_binop(ArithKind::Relu, fmt.zero(), fmt.zero(), fmt).is_err());
    }

    #[test]
    fn taylor_coefficients() {
        assert_eq!(exp_coefficients(1).unwrap(), vec![1.0, 1.0]);
        let c4 = exp_coefficients(4).unwrap();
        assert_eq!(c4[4], 1.0 / 24.0);
        // The exact sum 65/24 rounds to 2.7083333333333335; Horner order in
        // f64 lands one ulp below it.
        let exact = 65.0f64 / 24.0;
        assert_eq!(exact, 2.7083333333333335);
        let h = horner_exp(1.0, &c4);
        assert_eq!(h, 2.708333333333333);
        assert_eq!(exact.to_bits() - h.to_bits(), 1);
        assert_eq!(horner_exp(0.0, &exp_coefficients(6).unwrap()), 1.0);
        assert!(exp_coefficients(0).is_err());
        assert!(exp_coefficients(21).is_err());
        assert_eq!(exp_coefficients(20).unwrap().len(), 21);
    }

    #[test]
    fn format_parsing() {
        assert_eq!("5,4".parse::<FloatFormat>().unwrap(), f(5, 4));
        assert!("5".parse::<FloatFormat>().is_err());
        assert!("1,4".parse::<FloatFormat>().is_err());
    }
}
