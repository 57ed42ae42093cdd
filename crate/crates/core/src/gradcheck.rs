//! Central finite-difference helpers for checking hand-written gradients.

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for [`relative_error`]; below it errors are effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-4;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// `(f(h) - f(-h)) / 2h` for a function of a scalar perturbation.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// Finite-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            central_difference(
                |d| {
                    probe[i] = x[i] + d;
                    let v = f(&probe);
                    probe[i] = x[i];
                    v
                },
                h,
            )
        })
        .collect()
}

/// Largest relative error between `analytic` and the numeric gradient of `f`.
pub fn worst_mismatch(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> Option<Mismatch> {
    assert_eq!(x.len(), analytic.len(), "gradient length must match input");
    numeric_gradient(f, x, h)
        .into_iter()
        .zip(analytic)
        .enumerate()
        .map(|(index, (numeric, &analytic))| Mismatch {
            index,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        })
        .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
}

/// Worst mismatch if it exceeds [`DEFAULT_TOLERANCE`], otherwise `None`.
pub fn gradient_failure(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> Option<Mismatch> {
    worst_mismatch(f, x, analytic, h).filter(|m| m.relative_error > DEFAULT_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = numeric_gradient(f, &[2.0, -1.0], DEFAULT_STEP);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
        let worst = worst_mismatch(f, &[2.0, -1.0], &[4.0, 3.0], DEFAULT_STEP).unwrap();
        assert!(worst.relative_error < 1e-8);
        let bad = worst_mismatch(f, &[2.0, -1.0], &[4.0, 2.0], DEFAULT_STEP).unwrap();
        assert_eq!(bad.index, 1);
    }
}
