//! Dense numeric core: scalar abstraction, matrices, activations, a
//! reverse-mode gradient tape and a finite-difference oracle.

mod gradcheck;
mod matrix;
mod tape;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use matrix::DenseMatrix;
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. `f64` is the verification precision, `f32`
/// is permitted for training.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + FromStr + Send + Sync + 'static
{
    /// Checkpoint dtype code.
    const DTYPE: u8;
    const NAME: &'static str;

    fn from_f64_lossy(x: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from the front of `bytes`. Caller guarantees length.
    fn read_le(bytes: &[u8]) -> Self;

    fn width() -> usize;
}

impl Real for f64 {
    const DTYPE: u8 = 2;
    const NAME: &'static str = "f64";

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }

    fn width() -> usize {
        8
    }
}

impl Real for f32 {
    const DTYPE: u8 = 1;
    const NAME: &'static str = "f32";

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(b)
    }

    fn width() -> usize {
        4
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn tanh<T: Real>(x: T) -> T {
    x.tanh()
}

/// Softmax with max-subtraction.
pub fn softmax_row<T: Real>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input at index {i}")));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked<T: Real>(v: &[T]) -> Vec<T> {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    for x in &mut out {
        *x = *x / sum;
    }
    out
}

/// `log(sum(exp(v)))` with max-subtraction.
pub(crate) fn log_sum_exp<T: Real>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let p = softmax_row(&[0.0f64, 0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_reference_values() {
        // exp(k) / (e + e^2 + e^3), evaluated directly
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let want = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        let p = softmax_row(&[1.0f64, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let frozen = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in p.iter().zip(frozen) {
            assert!((a - b).abs() < 5e-9);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax_row(&[0.3f64, -1.2, 2.5, 0.0]).unwrap();
        let b = softmax_row(&[100.3f64, 98.8, 102.5, 100.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax_row::<f64>(&[]).is_err());
        assert!(matches!(softmax_row(&[0.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(softmax_row(&[0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn sigmoid_and_tanh_values() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(tanh(0.0f64), 0.0);
        assert!((sigmoid(2.0f64) - 0.8807970779).abs() < 1e-10);
        assert!((sigmoid(2.0f64) - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-16);
        for &x in &[-30.0, -5.5, -1e-3, 0.7, 4.0, 35.0f64] {
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() <= 1e-15);
            assert!(tanh(x) > -1.0 && tanh(x) < 1.0 || x.abs() > 15.0);
        }
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let v = [0.5f64, -2.0, 1.5];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&v) - naive).abs() < 1e-14);
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-50.0f64..50.0, 1..40), c in -100.0f64..100.0) {
            let p = softmax_row(&v).unwrap();
            let s: f64 = p.iter().sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
            proptest::prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax_row(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_is_monotone(a in -40.0f64..40.0, b in -40.0f64..40.0) {
            if a < b {
                proptest::prop_assert!(sigmoid(a) <= sigmoid(b));
                proptest::prop_assert!(tanh(a) <= tanh(b));
            }
        }
    }
}
