use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Result of one ordinary least squares regression with classical inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub f_statistic: f64,
    pub f_p_value: f64,
    /// Residual standard error `sqrt(SSR / (n - p))`.
    pub sigma: f64,
    pub n_obs: usize,
    pub df_resid: usize,
    pub has_intercept: bool,
    pub ssr: f64,
    pub sst: f64,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

/// Relative size below which a QR pivot marks a column as dependent on the
/// columns to its left.
const RANK_TOL: f64 = 1e-9;

/// Fits `y = X b + e` by Householder QR.
///
/// An intercept is recognised as any column identically equal to one; it
/// switches R² and the F test to their centred forms. `names` may be empty.
pub fn ols_fit(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} responses"),
            found: format!("{}", y.len()),
        });
    }
    if p == 0 {
        return Err(Error::InsufficientData("design matrix has no columns".into()));
    }
    if n <= p {
        return Err(Error::InsufficientData(format!("{n} observations for {p} regressors")));
    }
    let names: Vec<String> = if names.len() == p {
        names.to_vec()
    } else {
        (0..p).map(|j| format!("x{j}")).collect()
    };

    let qr = x.clone().qr();
    let r = qr.r();
    let dependent: Vec<String> = (0..p)
        .filter(|&j| {
            let col_norm = x.column(j).norm();
            col_norm == 0.0 || libm::fabs(r[(j, j)]) <= RANK_TOL * col_norm
        })
        .map(|j| names[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient { columns: names.clone() })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient { columns: names.clone() })?;

    let resid = &yv - x * &beta;
    let ssr = resid.dot(&resid);
    let has_intercept = (0..p).any(|j| x.column(j).iter().all(|&v| v == 1.0));
    let y_mean = stats::mean(y);
    let sst: f64 = if has_intercept {
        y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum()
    } else {
        y.iter().map(|v| v * v).sum()
    };

    let df_resid = n - p;
    let sigma2 = ssr / df_resid as f64;
    let sigma = libm::sqrt(sigma2);

    let mut std_errors = Vec::with_capacity(p);
    let mut t_values = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for j in 0..p {
        // diag((X'X)^-1) = row norms of R^-1
        let v: f64 = r_inv.row(j).iter().map(|a| a * a).sum();
        let se = sigma * libm::sqrt(v);
        let t = if se > 0.0 {
            beta[j] / se
        } else if beta[j] == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(beta[j])
        };
        std_errors.push(se);
        t_values.push(t);
        p_values.push(stats::student_t_two_sided(t, df_resid as f64));
    }

    let r_squared = if sst > 0.0 {
        let r2 = 1.0 - ssr / sst;
        if has_intercept {
            r2.clamp(0.0, 1.0)
        } else {
            r2
        }
    } else {
        0.0
    };
    let df_model = if has_intercept { p - 1 } else { p };
    let adj_r_squared = if df_model == 0 {
        r_squared
    } else {
        let dof_total = if has_intercept { n - 1 } else { n };
        1.0 - (1.0 - r_squared) * dof_total as f64 / df_resid as f64
    };
    let explained = (sst - ssr).max(0.0);
    let (f_statistic, f_p_value) = if df_model == 0 {
        (0.0, 1.0)
    } else if ssr > 0.0 {
        let f = (explained / df_model as f64) / sigma2;
        (f, stats::f_upper_tail(f, df_model as f64, df_resid as f64))
    } else if explained > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };

    Ok(OlsFit {
        names,
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_values,
        p_values,
        r_squared,
        adj_r_squared,
        f_statistic,
        f_p_value,
        sigma,
        n_obs: n,
        df_resid,
        has_intercept,
        ssr,
        sst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_intercept(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { 1.0 } else { xs[i] })
    }

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let fit = ols_fit(&with_intercept(&xs), &ys, &[]).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.sigma < 1e-10);
        assert!(fit.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn constant_response() {
        let xs = [0.0, 1.0, 2.0, 5.0, 7.0];
        let ys = [3.0; 5];
        let fit = ols_fit(&with_intercept(&xs), &ys, &[]).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
        assert!(fit.coefficients[1].abs() < 1e-12);
        assert_eq!(fit.r_squared, 0.0);
        assert!(fit.f_statistic >= 0.0);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64,
        });
        let names = vec!["const".into(), "a".into(), "twice_a".into()];
        let err = ols_fit(&x, &[1.0, 2.0, 0.0, 4.0, 3.0, 1.0], &names).unwrap_err();
        assert_eq!(
            err,
            Error::RankDeficient {
                columns: vec!["twice_a".into()]
            }
        );
    }

    #[test]
    fn rejects_short_samples() {
        let x = with_intercept(&[1.0, 2.0]);
        assert!(ols_fit(&x, &[1.0, 2.0], &[]).is_err());
        assert!(ols_fit(&x, &[1.0], &[]).is_err());
    }

    #[test]
    fn inference_matches_textbook_example() {
        // Residuals and standard errors checked against a closed form for
        // simple regression: se(b1) = sigma / sqrt(Sxx).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 - 1.5 * x + rng.random_range(-1.0..1.0)).collect();
        let fit = ols_fit(&with_intercept(&xs), &ys, &[]).unwrap();
        let mx = stats::mean(&xs);
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        assert!((fit.std_errors[1] - fit.sigma / libm::sqrt(sxx)).abs() < 1e-12);
        // F equals t^2 for a single regressor
        assert!((fit.f_statistic - fit.t_values[1] * fit.t_values[1]).abs() < 1e-8);
        assert!((fit.f_p_value - fit.p_values[1]).abs() < 1e-10);
    }
}
