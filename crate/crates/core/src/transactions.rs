//! Typed transaction records and their expansion into a numeric design frame.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::area::{AreaCode, Year, MAX_PANEL_YEAR};
use crate::error::{Error, Result};
use crate::stats;

/// First year covered by the transaction survey.
pub const FIRST_TRANSACTION_YEAR: Year = 2005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AttributeValue {
    Numeric(f64),
    Category(String),
    /// Several levels reported in one cell.
    Categories(Vec<String>),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub area_code: AreaCode,
    pub year: Year,
    /// Total trade price in JPY.
    pub trade_price: f64,
    /// Floor or land area in square metres.
    pub unit_area: f64,
    pub attributes: Vec<(String, AttributeValue)>,
}

impl TransactionRecord {
    pub fn new(
        area_code: AreaCode,
        year: Year,
        trade_price: f64,
        unit_area: f64,
        attributes: Vec<(String, AttributeValue)>,
    ) -> Result<Self> {
        if !(trade_price.is_finite() && trade_price > 0.0) {
            return Err(Error::InvalidRecord(format!("trade price {trade_price}")));
        }
        if !(unit_area.is_finite() && unit_area > 0.0) {
            return Err(Error::InvalidRecord(format!("unit area {unit_area}")));
        }
        if !(FIRST_TRANSACTION_YEAR..=MAX_PANEL_YEAR).contains(&year) {
            return Err(Error::InvalidRecord(format!("year {year}")));
        }
        Ok(Self {
            area_code,
            year,
            trade_price,
            unit_area,
            attributes,
        })
    }

    /// Hedonic response: log price per square metre.
    pub fn log_unit_price(&self) -> f64 {
        libm::log(self.trade_price / self.unit_area)
    }
}

/// Splits a multi-valued categorical cell on any of `delimiters`, trimming
/// whitespace and discarding empty pieces.
pub fn split_multi(cell: &str, delimiters: &[char]) -> AttributeValue {
    let parts: Vec<String> = cell
        .split(|c| delimiters.contains(&c))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(ToString::to_string)
        .collect();
    match parts.len() {
        0 => AttributeValue::Missing,
        1 => AttributeValue::Category(parts.into_iter().next().unwrap_or_default()),
        _ => AttributeValue::Categories(parts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpandConfig {
    /// When set, only these attribute fields are expanded.
    pub include: Option<Vec<String>>,
    pub exclude: Vec<String>,
    pub max_columns: usize,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            include: None,
            exclude: Vec::new(),
            max_columns: 75,
        }
    }
}

/// Numeric design for one municipality: one row per transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignFrame {
    pub columns: Vec<String>,
    /// Row-major `n_rows x columns.len()`.
    pub data: Vec<f64>,
    /// `ln(trade_price / unit_area)` per row.
    pub response: Vec<f64>,
    pub years: Vec<Year>,
}

impl DesignFrame {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.n_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        let c = self.n_cols();
        (0..self.n_rows()).map(move |i| self.data[i * c + j])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpandDiagnostics {
    pub all_missing: Vec<String>,
    pub zero_variance: Vec<String>,
    pub over_cap: Vec<String>,
    pub imputed_cells: usize,
}

enum FieldData {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<Vec<String>>>),
}

struct Candidate {
    name: String,
    values: Vec<f64>,
    numeric: bool,
}

/// Expands typed attributes into indicator and imputed numeric columns.
///
/// Categorical levels (including each level of a multi-valued cell) become
/// indicator columns, missing cells get a per-field `missing` indicator, and
/// numeric fields are median-imputed. Constant and all-missing columns are
/// dropped. When more than `max_columns` remain, numeric columns are kept
/// first and indicators are ranked by how balanced they are.
pub fn expand_categoricals(
    records: &[TransactionRecord],
    config: &ExpandConfig,
) -> Result<(DesignFrame, ExpandDiagnostics)> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no transactions to expand".into()));
    }
    let n = records.len();
    let mut order: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for r in records {
        for (name, _) in &r.attributes {
            if seen.insert(name.clone()) {
                order.push(name.clone());
            }
        }
    }
    order.retain(|f| config.include.as_ref().is_none_or(|inc| inc.contains(f)) && !config.exclude.contains(f));

    let mut diagnostics = ExpandDiagnostics::default();
    let mut candidates: Vec<Candidate> = Vec::new();

    for field in &order {
        let lookup = |r: &TransactionRecord| {
            r.attributes
                .iter()
                .find(|(k, _)| k == field)
                .map(|(_, v)| v.clone())
                .unwrap_or(AttributeValue::Missing)
        };
        let is_categorical = records
            .iter()
            .any(|r| matches!(lookup(r), AttributeValue::Category(_) | AttributeValue::Categories(_)));
        let data = if is_categorical {
            FieldData::Categorical(
                records
                    .iter()
                    .map(|r| match lookup(r) {
                        AttributeValue::Category(c) => Some(vec![c]),
                        AttributeValue::Categories(cs) => Some(cs),
                        AttributeValue::Numeric(x) => Some(vec![format!("{x}")]),
                        AttributeValue::Missing => None,
                    })
                    .collect(),
            )
        } else {
            FieldData::Numeric(
                records
                    .iter()
                    .map(|r| match lookup(r) {
                        AttributeValue::Numeric(x) if x.is_finite() => Some(x),
                        _ => None,
                    })
                    .collect(),
            )
        };

        match data {
            FieldData::Numeric(vals) => {
                let observed: Vec<f64> = vals.iter().flatten().copied().collect();
                if observed.is_empty() {
                    diagnostics.all_missing.push(field.clone());
                    continue;
                }
                let med = stats::median(&observed);
                let missing = n - observed.len();
                diagnostics.imputed_cells += missing;
                candidates.push(Candidate {
                    name: field.clone(),
                    values: vals.iter().map(|v| v.unwrap_or(med)).collect(),
                    numeric: true,
                });
                if missing > 0 {
                    candidates.push(Candidate {
                        name: format!("{field}=missing"),
                        values: vals.iter().map(|v| f64::from(v.is_none() as u8)).collect(),
                        numeric: false,
                    });
                }
            }
            FieldData::Categorical(cells) => {
                if cells.iter().all(Option::is_none) {
                    diagnostics.all_missing.push(field.clone());
                    continue;
                }
                let levels: BTreeSet<&str> = cells
                    .iter()
                    .flatten()
                    .flat_map(|c| c.iter().map(String::as_str))
                    .collect();
                for level in levels {
                    candidates.push(Candidate {
                        name: format!("{field}={level}"),
                        values: cells
                            .iter()
                            .map(|c| f64::from(c.as_ref().is_some_and(|c| c.iter().any(|l| l == level)) as u8))
                            .collect(),
                        numeric: false,
                    });
                }
                if cells.iter().any(Option::is_none) {
                    candidates.push(Candidate {
                        name: format!("{field}=missing"),
                        values: cells.iter().map(|c| f64::from(c.is_none() as u8)).collect(),
                        numeric: false,
                    });
                }
            }
        }
    }

    candidates.retain(|c| {
        let first = c.values[0];
        let constant = c.values.iter().all(|&v| v == first);
        if constant {
            diagnostics.zero_variance.push(c.name.clone());
        }
        !constant
    });

    if candidates.len() > config.max_columns {
        // numeric first, then indicators by minority-class count
        let mut ranked: Vec<(usize, bool, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ones = c.values.iter().filter(|&&v| v != 0.0).count();
                (i, c.numeric, ones.min(n - ones))
            })
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
        let mut keep: Vec<usize> = ranked.iter().take(config.max_columns).map(|r| r.0).collect();
        keep.sort_unstable();
        let keep_set: BTreeSet<usize> = keep.iter().copied().collect();
        let mut kept = Vec::with_capacity(keep.len());
        for (i, c) in candidates.into_iter().enumerate() {
            if keep_set.contains(&i) {
                kept.push(c);
            } else {
                diagnostics.over_cap.push(c.name);
            }
        }
        candidates = kept;
    }

    let cols = candidates.len();
    let mut data = vec![0.0; n * cols];
    for (j, c) in candidates.iter().enumerate() {
        for (i, &v) in c.values.iter().enumerate() {
            data[i * cols + j] = v;
        }
    }
    let frame = DesignFrame {
        columns: candidates.into_iter().map(|c| c.name).collect(),
        data,
        response: records.iter().map(TransactionRecord::log_unit_price).collect(),
        years: records.iter().map(|r| r.year).collect(),
    };
    Ok((frame, diagnostics))
}

/// Minimum sample a municipality needs before an index is built for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Indexability {
    pub min_total: usize,
    pub min_per_year: usize,
}

impl Default for Indexability {
    fn default() -> Self {
        Self {
            min_total: 100,
            min_per_year: 5,
        }
    }
}

/// Groups records by municipality, preserving input order within each group.
pub fn group_by_area(records: &[TransactionRecord]) -> BTreeMap<AreaCode, Vec<TransactionRecord>> {
    let mut out: BTreeMap<AreaCode, Vec<TransactionRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.area_code).or_default().push(r.clone());
    }
    out
}
