//! Time-dummy hedonic price index for one municipality.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ols::{ols_fit, OlsFit};
use super::pca::{pca_reduce, PcaModel};
use crate::area::{AreaCode, Year};
use crate::error::{Error, Result};
use crate::panel::{Panel, PanelKind};
use crate::transactions::{expand_categoricals, ExpandConfig, Indexability, TransactionRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HedonicConfig {
    pub variance_target: f64,
    pub expand: ExpandConfig,
    pub threshold: Indexability,
}

impl Default for HedonicConfig {
    fn default() -> Self {
        Self {
            variance_target: 0.95,
            expand: ExpandConfig::default(),
            threshold: Indexability::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexPoint {
    pub year: Year,
    pub value: f64,
    /// Growth on the previous calendar year; absent for the first year and
    /// after gaps.
    pub yoy: Option<f64>,
}

/// Base-100 price index of one municipality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceIndex {
    pub area_code: AreaCode,
    pub base_year: Year,
    pub points: Vec<IndexPoint>,
}

impl PriceIndex {
    /// Builds an index from `(year, value)` pairs, rescaled so the base year
    /// equals exactly 100, with year-on-year growth derived from the values.
    pub fn from_levels(area_code: AreaCode, base_year: Year, levels: &[(Year, f64)]) -> Result<Self> {
        let mut levels = levels.to_vec();
        levels.sort_by_key(|l| l.0);
        let base = levels
            .iter()
            .find(|l| l.0 == base_year)
            .map(|l| l.1)
            .ok_or_else(|| Error::InsufficientData(format!("base year {base_year} missing")))?;
        if !(base > 0.0) || levels.iter().any(|l| !(l.1 > 0.0 && l.1.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "levels",
                reason: "index values must be positive and finite".into(),
            });
        }
        let mut points: Vec<IndexPoint> = Vec::with_capacity(levels.len());
        for &(year, v) in &levels {
            let value = if year == base_year { 100.0 } else { 100.0 * v / base };
            let yoy = points
                .last()
                .filter(|p| p.year == year - 1)
                .map(|p| value / p.value - 1.0);
            points.push(IndexPoint { year, value, yoy });
        }
        Ok(Self {
            area_code,
            base_year,
            points,
        })
    }

    pub fn value(&self, year: Year) -> Option<f64> {
        self.points.iter().find(|p| p.year == year).map(|p| p.value)
    }

    pub fn to_panel(&self) -> Result<Panel> {
        Panel::from_triples(
            "price_index",
            PanelKind::Level,
            self.points.iter().map(|p| (self.area_code, p.year, p.value)),
        )
        .map(|p| p.with_unit("index"))
    }
}

/// Collects per-municipality indices into one level panel.
pub fn indices_to_panel(indices: &[PriceIndex]) -> Result<Panel> {
    let mut panel = Panel::new("price_index", "index", PanelKind::Level);
    for idx in indices {
        for p in &idx.points {
            panel.insert(idx.area_code, p.year, p.value)?;
        }
    }
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedonicDiagnostics {
    pub n_transactions: usize,
    pub years: Vec<Year>,
    /// Years with too few transactions to be indexed.
    pub sparse_years: Vec<Year>,
    pub n_columns: usize,
    pub n_components: usize,
    pub dropped_columns: Vec<String>,
    pub r_squared: f64,
    pub f_statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedonicIndex {
    pub index: PriceIndex,
    pub ols: OlsFit,
    /// Absent when no attribute column survives expansion.
    pub pca: Option<PcaModel>,
    pub diagnostics: HedonicDiagnostics,
}

/// Expands attributes, standardises them, keeps the principal components
/// covering the configured share of variance, regresses log unit price on an
/// intercept, year dummies and the components, and converts the dummy
/// coefficients into a base-100 index whose base is the second available
/// year.
pub fn build_hedonic_index(records: &[TransactionRecord], config: &HedonicConfig) -> Result<HedonicIndex> {
    let area = records
        .first()
        .map(|r| r.area_code)
        .ok_or_else(|| Error::InsufficientData("no transactions".into()))?;
    if records.iter().any(|r| r.area_code != area) {
        return Err(Error::InvalidParameter {
            name: "records",
            reason: "records span several municipalities".into(),
        });
    }

    let mut per_year: BTreeMap<Year, usize> = BTreeMap::new();
    for r in records {
        *per_year.entry(r.year).or_default() += 1;
    }
    let sparse_years: Vec<Year> = per_year
        .iter()
        .filter(|(_, &c)| c < config.threshold.min_per_year)
        .map(|(&y, _)| y)
        .collect();
    let kept: Vec<TransactionRecord> = records
        .iter()
        .filter(|r| !sparse_years.contains(&r.year))
        .cloned()
        .collect();
    if kept.len() < config.threshold.min_total {
        return Err(Error::InsufficientData(format!(
            "area {area}: {} usable transactions, {} required",
            kept.len(),
            config.threshold.min_total
        )));
    }
    let years: Vec<Year> = per_year.keys().copied().filter(|y| !sparse_years.contains(y)).collect();
    if years.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "area {area}: {} indexable year(s), at least 2 required",
            years.len()
        )));
    }

    let (frame, expand_diag) = expand_categoricals(&kept, &config.expand)?;
    let n = frame.n_rows();

    // standardise; columns can become constant after sparse-year removal
    let mut dropped_columns: Vec<String> = expand_diag
        .all_missing
        .iter()
        .chain(&expand_diag.zero_variance)
        .chain(&expand_diag.over_cap)
        .cloned()
        .collect();
    let mut std_cols: Vec<Vec<f64>> = Vec::new();
    for j in 0..frame.n_cols() {
        let col: Vec<f64> = frame.column(j).collect();
        let m = crate::stats::mean(&col);
        let sd = crate::stats::sample_sd(&col);
        if sd.is_finite() && sd > 1e-12 {
            std_cols.push(col.iter().map(|v| (v - m) / sd).collect());
        } else {
            dropped_columns.push(frame.columns[j].clone());
        }
    }

    let (pca, components) = if std_cols.is_empty() {
        (None, DMatrix::<f64>::zeros(n, 0))
    } else {
        let x = DMatrix::from_fn(n, std_cols.len(), |i, j| std_cols[j][i]);
        let (model, reduced) = pca_reduce(&x, config.variance_target)?;
        (Some(model), reduced)
    };

    let k = components.ncols();
    let n_dummies = years.len() - 1;
    let p = 1 + n_dummies + k;
    let design = DMatrix::from_fn(n, p, |i, j| {
        if j == 0 {
            1.0
        } else if j <= n_dummies {
            f64::from((frame.years[i] == years[j]) as u8)
        } else {
            components[(i, j - 1 - n_dummies)]
        }
    });
    let mut names: Vec<String> = Vec::with_capacity(p);
    names.push("const".into());
    names.extend(years[1..].iter().map(|y| format!("year_{y}")));
    names.extend((1..=k).map(|c| format!("pc_{c}")));

    let ols = ols_fit(&design, &frame.response, &names)?;

    let mut gamma: Vec<(Year, f64)> = Vec::with_capacity(years.len());
    gamma.push((years[0], 0.0));
    for (i, &y) in years[1..].iter().enumerate() {
        gamma.push((y, ols.coefficients[1 + i]));
    }
    let base_year = years[1];
    let base_gamma = gamma[1].1;
    let levels: Vec<(Year, f64)> = gamma.iter().map(|&(y, g)| (y, libm::exp(g - base_gamma))).collect();
    let index = PriceIndex::from_levels(area, base_year, &levels)?;

    let diagnostics = HedonicDiagnostics {
        n_transactions: n,
        years,
        sparse_years,
        n_columns: std_cols.len(),
        n_components: k,
        dropped_columns,
        r_squared: ols.r_squared,
        f_statistic: ols.f_statistic,
    };
    Ok(HedonicIndex {
        index,
        ols,
        pca,
        diagnostics,
    })
}
