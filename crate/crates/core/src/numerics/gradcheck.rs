//! Central finite differences, the oracle every analytic gradient in the
//! model is checked against.

use crate::error::{Error, Result};

pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if eps <= 0.0 {
        return Err(Error::Usage(format!("eps must be positive, got {eps}")));
    }
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let fp = f(&probe);
        probe[i] = x[i] - eps;
        let fm = f(&probe);
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value probing coordinate {i}"
            )));
        }
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid_scalar, Rng};

    #[test]
    fn quadratic() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn linear_sum() {
        let g = finite_diff_grad(|x| x.iter().sum(), &[1.0, -2.0, 0.5], 1e-5).unwrap();
        for gi in g {
            assert!((gi - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let g = finite_diff_grad(|x| sigmoid_scalar(x[0]), &[0.0], 1e-5).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn non_finite_reports_index() {
        // probing x[1] - eps goes negative and ln turns NaN there
        let err = finite_diff_grad(|x| x[0] + x[1].ln(), &[1.0, 1e-6], 1e-5).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn quadratic_form_matches_analytic() {
        // f(x) = 0.5 x^T Q x with symmetric Q; grad = Qx
        let mut rng = Rng::new(99);
        let n = 6;
        let mut q = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.uniform(-1.0, 1.0);
                q[i][j] = v;
                q[j][i] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let f = |y: &[f64]| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += 0.5 * y[i] * q[i][j] * y[j];
                }
            }
            acc
        };
        let g = finite_diff_grad(f, &x, 1e-6).unwrap();
        for i in 0..n {
            let analytic: f64 = (0..n).map(|j| q[i][j] * x[j]).sum();
            let denom = analytic.abs().max(1e-8);
            assert!(
                ((g[i] - analytic) / denom).abs() < 1e-6,
                "coordinate {i}: {} vs {}",
                g[i],
                analytic
            );
        }
    }
}
