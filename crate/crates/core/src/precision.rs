//! Working-precision scalars.
//!
//! Every elementary operation on a [`Real`] is rounded to nearest-even in its
//! format. `f64` and `f32` use the hardware; binary16 is emulated by [`Half`],
//! which evaluates each operation in binary64 and rounds the result once. A
//! single `+ - * /` of binary16 operands is exact in binary64, so the emulated
//! result is the correctly rounded one.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

/// IEEE 754 interchange formats supported as working precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarKind {
    #[serde(rename = "f16")]
    Binary16,
    #[serde(rename = "f32")]
    Binary32,
    #[serde(rename = "f64")]
    Binary64,
}

impl ScalarKind {
    pub const ALL: [ScalarKind; 3] = [ScalarKind::Binary16, ScalarKind::Binary32, ScalarKind::Binary64];

    /// Distance from 1.0 to the next representable number.
    pub fn epsilon(self) -> f64 {
        match self {
            ScalarKind::Binary16 => 2f64.powi(-10),
            ScalarKind::Binary32 => 2f64.powi(-23),
            ScalarKind::Binary64 => 2f64.powi(-52),
        }
    }

    pub fn max_finite(self) -> f64 {
        match self {
            ScalarKind::Binary16 => 65504.0,
            ScalarKind::Binary32 => f32::MAX as f64,
            ScalarKind::Binary64 => f64::MAX,
        }
    }

    pub fn min_positive_subnormal(self) -> f64 {
        match self {
            ScalarKind::Binary16 => 2f64.powi(-24),
            ScalarKind::Binary32 => 2f64.powi(-149),
            ScalarKind::Binary64 => f64::from_bits(1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::Binary16 => "f16",
            ScalarKind::Binary32 => "f32",
            ScalarKind::Binary64 => "f64",
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f16" | "float16" | "binary16" => Ok(ScalarKind::Binary16),
            "f32" | "float32" | "binary32" => Ok(ScalarKind::Binary32),
            "f64" | "float64" | "binary64" => Ok(ScalarKind::Binary64),
            other => Err(Error::Usage(format!("unknown precision '{other}' (expected f16, f32 or f64)"))),
        }
    }
}

const F16_MIN_NORMAL: f64 = 6.103_515_625e-5; // 2^-14
const F16_OVERFLOW: f64 = 65520.0; // halfway between max finite and 2^16

/// Round a binary64 value to the nearest binary16 value (ties to even).
///
/// Overflow goes to ±∞, underflow to subnormals or signed zero; NaN passes
/// through. The result is returned as the (exactly representable) `f64`.
pub fn round_f16(x: f64) -> f64 {
    let ax = x.abs();
    if ax.is_nan() {
        return x;
    }
    if ax >= F16_OVERFLOW {
        return f64::INFINITY.copysign(x);
    }
    let r = if ax < F16_MIN_NORMAL {
        // Fixed quantum 2^-24 below the normal range.
        (ax * 16_777_216.0).round_ties_even() / 16_777_216.0
    } else {
        // Keep 10 of the 52 fraction bits; a carry into the exponent is correct.
        const DROP: u32 = 42;
        const HALF: u64 = 1 << (DROP - 1);
        const MASK: u64 = (1 << DROP) - 1;
        let bits = ax.to_bits();
        let rem = bits & MASK;
        let mut kept = bits & !MASK;
        if rem > HALF || (rem == HALF && (kept >> DROP) & 1 == 1) {
            kept += 1 << DROP;
        }
        f64::from_bits(kept)
    };
    r.copysign(x)
}

/// Round a binary64 value into `kind`.
pub fn round_to(kind: ScalarKind, x: f64) -> f64 {
    match kind {
        ScalarKind::Binary16 => round_f16(x),
        ScalarKind::Binary32 => x as f32 as f64,
        ScalarKind::Binary64 => x,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// One correctly rounded arithmetic operation in `kind`.
pub fn arith(kind: ScalarKind, op: ArithOp, a: f64, b: f64) -> f64 {
    let exact = match op {
        ArithOp::Add => a + b,
        ArithOp::Sub => a - b,
        ArithOp::Mul => a * b,
        ArithOp::Div => a / b,
    };
    round_to(kind, exact)
}

/// Scalar used for all arithmetic of a run.
pub trait Real:
    Copy
    + Default
    + fmt::Debug
    + fmt::Display
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const KIND: ScalarKind;

    /// Round a binary64 value into this format.
    fn from_f64(x: f64) -> Self;
    /// Exact widening conversion.
    fn to_f64(self) -> f64;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn sqrt(self) -> Self {
        Self::from_f64(self.to_f64().sqrt())
    }
    fn abs(self) -> Self {
        Self::from_f64(self.to_f64().abs())
    }
    fn is_finite(self) -> bool {
        self.to_f64().is_finite()
    }
    /// Logistic function, correctly rounded from a binary64 evaluation.
    fn sigmoid(self) -> Self {
        Self::from_f64(1.0 / (1.0 + (-self.to_f64()).exp()))
    }
}

impl Real for f64 {
    const KIND: ScalarKind = ScalarKind::Binary64;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const KIND: ScalarKind = ScalarKind::Binary32;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Emulated IEEE binary16. The payload is always exactly representable in
/// binary16 and is stored widened to `f32`.
#[derive(Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Half(f32);

impl Half {
    #[inline(always)]
    fn round(x: f64) -> Self {
        Half(round_f16(x) as f32)
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}h", self.0)
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

impl Real for Half {
    const KIND: ScalarKind = ScalarKind::Binary16;
    #[inline(always)]
    fn from_f64(x: f64) -> Self {
        Half::round(x)
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self.0 as f64
    }
    #[inline(always)]
    fn abs(self) -> Self {
        Half(self.0.abs())
    }
}

macro_rules! half_binop {
    ($tr:ident, $f:ident, $tra:ident, $fa:ident, $op:tt) => {
        impl $tr for Half {
            type Output = Half;
            #[inline(always)]
            fn $f(self, rhs: Half) -> Half {
                Half::round(self.0 as f64 $op rhs.0 as f64)
            }
        }
        impl $tra for Half {
            #[inline(always)]
            fn $fa(&mut self, rhs: Half) {
                *self = *self $op rhs;
            }
        }
    };
}

half_binop!(Add, add, AddAssign, add_assign, +);
half_binop!(Sub, sub, SubAssign, sub_assign, -);
half_binop!(Mul, mul, MulAssign, mul_assign, *);
half_binop!(Div, div, DivAssign, div_assign, /);

impl Neg for Half {
    type Output = Half;
    #[inline(always)]
    fn neg(self) -> Half {
        Half(-self.0)
    }
}

impl Sum for Half {
    fn sum<I: Iterator<Item = Half>>(iter: I) -> Half {
        iter.fold(Half::default(), |acc, x| acc + x)
    }
}

/// Round every entry of a binary64 slice into `T`.
pub fn round_slice<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::from_f64(x)).collect()
}

pub fn widen_slice<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.to_f64()).collect()
}

/// Pairwise (tree) summation in working precision; each addition is rounded.
///
/// Halves are split at the largest power of two below the length, so the
/// association is a fixed function of the length alone.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let split = n.next_power_of_two() / 2;
            pairwise_sum(&xs[..split]) + pairwise_sum(&xs[split..])
        }
    }
}

/// Accumulates a stream of equally sized vectors with pairwise association.
///
/// Works like a binary counter: slot `i` holds the sum of `2^i` inputs, and
/// equal-sized partial sums are merged as soon as both exist. Memory is
/// `O(log n)` vectors and the association depends only on the input count.
pub struct PairwiseAccumulator<T: Real> {
    len: usize,
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> PairwiseAccumulator<T> {
    pub fn new(len: usize) -> Self {
        PairwiseAccumulator { len, slots: Vec::new() }
    }

    pub fn push(&mut self, v: Vec<T>) {
        assert_eq!(v.len(), self.len, "accumulator length mismatch");
        let mut carry = v;
        let mut level = 0;
        loop {
            if level == self.slots.len() {
                self.slots.push(None);
            }
            match self.slots[level].take() {
                None => {
                    self.slots[level] = Some(carry);
                    return;
                }
                Some(mut older) => {
                    for (o, c) in older.iter_mut().zip(&carry) {
                        *o += *c;
                    }
                    carry = older;
                    level += 1;
                }
            }
        }
    }

    /// Combine the remaining partial sums, smallest first.
    pub fn finish(self) -> Vec<T> {
        let mut total: Option<Vec<T>> = None;
        for slot in self.slots.into_iter().flatten() {
            total = Some(match total {
                None => slot,
                Some(small) => {
                    let mut big = slot;
                    for (b, s) in big.iter_mut().zip(&small) {
                        *b += *s;
                    }
                    big
                }
            });
        }
        total.unwrap_or_else(|| vec![T::zero(); self.len])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f16_rounding_examples() {
        assert_eq!(round_to(ScalarKind::Binary16, 1.0), 1.0);
        assert_eq!(round_to(ScalarKind::Binary16, 2049.0), 2048.0);
        assert_eq!(round_to(ScalarKind::Binary16, 2051.0), 2052.0);
        assert_eq!(round_to(ScalarKind::Binary16, 1e-8), 0.0);
        assert_eq!(round_to(ScalarKind::Binary16, 65504.0), 65504.0);
        assert_eq!(round_to(ScalarKind::Binary16, 65519.9), 65504.0);
        assert_eq!(round_to(ScalarKind::Binary16, 65520.0), f64::INFINITY);
        assert_eq!(round_to(ScalarKind::Binary16, -1e6), f64::NEG_INFINITY);
        assert_eq!(round_to(ScalarKind::Binary16, 2f64.powi(-24)), 2f64.powi(-24));
        // Exactly half the smallest subnormal ties to zero.
        assert_eq!(round_to(ScalarKind::Binary16, 2f64.powi(-25)), 0.0);
        assert!(round_to(ScalarKind::Binary16, -1e-9).is_sign_negative());
        assert!(round_to(ScalarKind::Binary16, f64::NAN).is_nan());
    }

    #[test]
    fn arith_examples() {
        let k16 = ScalarKind::Binary16;
        assert_eq!(arith(k16, ArithOp::Add, 2048.0, 1.0), 2048.0);
        for kind in ScalarKind::ALL {
            assert_eq!(arith(kind, ArithOp::Add, 0.375, 0.0), 0.375);
        }
        let one_plus = 1.0 + 2f64.powi(-24);
        let a = round_to(ScalarKind::Binary32, one_plus);
        assert_eq!(arith(ScalarKind::Binary32, ArithOp::Sub, a, 1.0), 0.0);
    }

    #[test]
    fn kind_constants() {
        assert_eq!(ScalarKind::Binary16.epsilon(), 9.765625e-4);
        assert_eq!(ScalarKind::Binary32.epsilon(), f32::EPSILON as f64);
        assert_eq!(ScalarKind::Binary64.epsilon(), f64::EPSILON);
        assert_eq!(ScalarKind::Binary16.min_positive_subnormal(), 5.960464477539063e-8);
        assert_eq!("f16".parse::<ScalarKind>().unwrap(), ScalarKind::Binary16);
        assert!("bf16".parse::<ScalarKind>().is_err());
    }

    #[test]
    fn half_ops_round_each_step() {
        let a = Half::from_f64(2048.0);
        let b = Half::from_f64(1.0);
        assert_eq!((a + b).to_f64(), 2048.0);
        assert_eq!((b / Half::from_f64(3.0)).to_f64(), round_f16(1.0 / 3.0));
    }

    #[test]
    fn pairwise_sum_order_is_fixed() {
        let xs: Vec<f64> = (1..=7).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 28.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
        // Stagnation in sequential binary16 summation is avoided.
        let xs = vec![Half::from_f64(1e-3); 8192];
        let seq: Half = xs.iter().copied().sum();
        let tree = pairwise_sum(&xs);
        let exact = 8192.0 * round_f16(1e-3);
        assert!((tree.to_f64() - exact).abs() / exact < 2e-3);
        assert!((seq.to_f64() - exact).abs() / exact > 0.1);
    }

    #[test]
    fn accumulator_matches_tree() {
        let vecs: Vec<Vec<f64>> = (0..13).map(|i| vec![i as f64, 1.0]).collect();
        let mut acc = PairwiseAccumulator::new(2);
        for v in vecs {
            acc.push(v);
        }
        assert_eq!(acc.finish(), vec![78.0, 13.0]);
        assert_eq!(PairwiseAccumulator::<f32>::new(3).finish(), vec![0.0; 3]);
    }
}
