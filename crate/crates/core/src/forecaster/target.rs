use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::area::Year;
use crate::error::{invalid, Result};
use crate::panel::{Panel, PanelKind, YearStats};
use crate::stats;

pub const TARGET_HORIZON: u32 = 4;
/// Lower bound on the volatility dividing cumulative returns.
pub const VOLATILITY_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTargets {
    pub panel: Panel,
    /// Keys whose volatility fell below the floor.
    pub floored: usize,
}

/// Cumulative return over `(t, t + horizon]` divided by the sample standard
/// deviation of its annual returns, floored at `floor`. Requires the index in
/// every year from `t` to `t + horizon`.
pub fn risk_adjusted_target(index: &Panel, horizon: u32, floor: f64) -> Result<RawTargets> {
    if horizon < 2 {
        return Err(invalid("horizon", "volatility needs at least two annual returns"));
    }
    if !(floor > 0.0) {
        return Err(invalid("floor", "must be positive"));
    }
    let mut panel = Panel::new("risk_adjusted_return", "ratio", PanelKind::Level);
    let mut floored = 0;
    let h = horizon as Year;
    let mut returns = Vec::with_capacity(horizon as usize);
    for area in index.areas() {
        let series: BTreeMap<Year, f64> = index.series(area).collect();
        for (&t, &start) in &series {
            returns.clear();
            let mut prev = start;
            for s in t + 1..=t + h {
                let Some(&v) = series.get(&s) else { break };
                returns.push(v / prev - 1.0);
                prev = v;
            }
            if returns.len() != horizon as usize || !(start > 0.0) {
                continue;
            }
            let sd = stats::sample_sd(&returns);
            let denom = if sd < floor {
                floored += 1;
                floor
            } else {
                sd
            };
            let value = (prev / start - 1.0) / denom;
            if value.is_finite() {
                panel.insert(area, t, value)?;
            }
        }
    }
    Ok(RawTargets { panel, floored })
}

/// Per-year target moments frozen from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNormalizer {
    pub per_year: BTreeMap<Year, YearStats>,
    /// Used for years without training statistics: average of the per-year
    /// means and standard deviations.
    pub fallback: YearStats,
}

impl TargetNormalizer {
    /// Fits on `(year, raw target)` pairs from the training set.
    pub fn fit(samples: impl IntoIterator<Item = (Year, f64)>) -> Result<Self> {
        let mut by_year: BTreeMap<Year, Vec<f64>> = BTreeMap::new();
        for (y, v) in samples {
            by_year.entry(y).or_default().push(v);
        }
        let per_year: BTreeMap<Year, YearStats> = by_year
            .into_iter()
            .map(|(y, v)| (y, YearStats::from_values(v.iter().copied())))
            .filter(|(_, s)| s.is_usable())
            .collect();
        if per_year.is_empty() {
            return Err(crate::Error::ZeroVariance(
                "no training year has target dispersion".into(),
            ));
        }
        let n = per_year.len() as f64;
        let fallback = YearStats {
            mean: per_year.values().map(|s| s.mean).sum::<f64>() / n,
            sd: per_year.values().map(|s| s.sd).sum::<f64>() / n,
            count: 0,
        };
        Ok(Self { per_year, fallback })
    }

    pub fn stats_for(&self, year: Year) -> &YearStats {
        self.per_year.get(&year).unwrap_or(&self.fallback)
    }

    pub fn apply(&self, year: Year, raw: f64) -> f64 {
        self.stats_for(year).apply(raw)
    }

    pub fn invert(&self, year: Year, z: f64) -> f64 {
        let s = self.stats_for(year);
        z * s.sd + s.mean
    }
}
