use super::Real;
use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `theta`.
pub fn finite_difference_gradient<T, F>(mut f: F, theta: &[T], eps: T) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&[T]) -> T,
{
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument("eps must be positive".into()));
    }
    let two = T::one() + T::one();
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let up = f(&point);
        point[i] = orig - eps;
        let down = f(&point);
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at coordinate {i} of the finite-difference probe"
            )));
        }
        grad.push((up - down) / (two * eps));
    }
    Ok(grad)
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error<T: Real>(a: T, b: T) -> T {
    let floor = T::from_f64_lossy(1e-8);
    (a - b).abs() / floor.max(a.abs() + b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let g = finite_difference_gradient(|t: &[f64]| t[0] * t[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let g = finite_difference_gradient(|_: &[f64]| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_names_coordinate() {
        let err = finite_difference_gradient(|t: &[f64]| if t[1] > 0.0 { f64::NAN } else { t[0] }, &[1.0, 0.0], 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn rejects_non_positive_eps() {
        assert!(finite_difference_gradient(|t: &[f64]| t[0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn relative_error_is_stable_near_zero() {
        assert_eq!(relative_error(0.0f64, 0.0), 0.0);
        assert!(relative_error(1e-12f64, 0.0) < 1e-3);
        assert!((relative_error(1.0f64, 3.0) - 0.5).abs() < 1e-15);
    }
}
