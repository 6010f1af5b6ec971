//! Pooled single-factor regressions of forward returns on trailing factor growth.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::area::{AreaCode, Year};
use crate::econometrics::ols_fit;
use crate::error::{invalid, Error, Result};
use crate::factors::FactorPanel;
use crate::panel::Panel;

/// Years of factor history accumulated into the regressor.
pub const TRAILING_WINDOW: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub area_code: AreaCode,
    pub year: Year,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEvalReport {
    pub factor: String,
    pub horizon: u32,
    pub n_obs: usize,
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    pub slope_t: f64,
    pub slope_p_value: f64,
    pub r_squared: f64,
    pub f_statistic: f64,
    pub f_p_value: f64,
    /// Factor keys without a matching forward return (or vice versa).
    pub unmatched: usize,
    pub scatter: Vec<ScatterPoint>,
}

/// Regresses `horizon`-year forward index returns on the factor's trailing
/// three-year cumulative growth, pooled over all areas and years.
pub fn evaluate_factor_linear(factor: &FactorPanel, index: &Panel, horizon: u32) -> Result<LinearEvalReport> {
    if !(1..=4).contains(&horizon) {
        return Err(invalid("horizon", "must lie in 1..=4"));
    }
    let x = factor.panel.trailing_cum_growth(TRAILING_WINDOW)?.panel;
    let y = index.forward_return(horizon)?.panel;
    let scatter: Vec<ScatterPoint> = x
        .inner_join(&y)
        .map(|(area_code, year, x, y)| ScatterPoint { area_code, year, x, y })
        .collect();
    let n = scatter.len();
    if n <= 2 {
        return Err(Error::InsufficientData(format!(
            "{n} joined observations for factor {}",
            factor.panel.name()
        )));
    }
    let unmatched = x.len() + y.len() - 2 * n;
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { scatter[i].x });
    let ys: Vec<f64> = scatter.iter().map(|p| p.y).collect();
    let fit = ols_fit(&design, &ys, &["const".into(), "factor".into()])?;
    Ok(LinearEvalReport {
        factor: factor.panel.name().into(),
        horizon,
        n_obs: n,
        slope: fit.coefficients[1],
        intercept: fit.coefficients[0],
        slope_std_error: fit.std_errors[1],
        slope_t: fit.t_values[1],
        slope_p_value: fit.p_values[1],
        r_squared: fit.r_squared,
        f_statistic: fit.f_statistic,
        f_p_value: fit.f_p_value,
        unmatched,
        scatter,
    })
}

/// Ranking signal of a factor: trailing cumulative growth over `window`
/// years, sign-flipped when `invert` is set.
pub fn strategy_signal(factor: &FactorPanel, window: u32, invert: bool) -> Result<Panel> {
    let cum = factor.panel.trailing_cum_growth(window)?.panel;
    let name = format!("{}_signal", factor.panel.name());
    Ok(if invert {
        cum.map_values(&name, |v| -v).panel
    } else {
        cum.with_name(name)
    })
}
