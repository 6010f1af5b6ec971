use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::area::{AreaCode, Year};
use crate::error::{invalid, Error, Result};
use crate::panel::Panel;
use crate::spatial::{nearest_neighbors, Centroid};

/// Shortest history accepted when short windows are enabled.
pub const MIN_SHORT_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub lookback: usize,
    /// Neighbours joined to each window; 0 disables spatial features.
    pub neighbors: usize,
    /// Indices into the own-feature list repeated for each neighbour.
    pub neighbor_features: Vec<usize>,
    pub allow_short_windows: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            lookback: 5,
            neighbors: 0,
            neighbor_features: Vec::new(),
            allow_short_windows: false,
        }
    }
}

impl WindowConfig {
    pub fn width(&self, n_features: usize) -> usize {
        n_features + self.neighbors * (self.neighbor_features.len() + 1)
    }
}

/// One `lookback x width` input window, row-major, oldest row first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub area_code: AreaCode,
    pub anchor: Year,
    pub values: Vec<f64>,
    /// `true` where a cell has no data; such cells hold 0 in `values`.
    pub masked: Vec<bool>,
    /// Leading rows that pad a short history.
    pub padded_rows: usize,
    pub raw_target: f64,
    pub target: f64,
    pub weight: f64,
}

impl WindowSample {
    pub fn row(&self, r: usize, width: usize) -> &[f64] {
        &self.values[r * width..(r + 1) * width]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<String>,
    /// Own feature names, the first `columns` entries.
    pub features: Vec<String>,
    pub lookback: usize,
    pub samples: Vec<WindowSample>,
    /// Anchors skipped because an own feature was missing.
    pub incomplete: usize,
    /// Samples whose population was unavailable (weight 1).
    pub unweighted: usize,
}

impl Dataset {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn subset(&self, keep: impl Fn(&WindowSample) -> bool) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            columns: self.columns.clone(),
            features: self.features.clone(),
            lookback: self.lookback,
            incomplete: 0,
            unweighted: 0,
        }
    }
}

/// `1 + log10(population)`, never below 1.
pub fn sample_weight(population: f64) -> f64 {
    if population >= 1.0 {
        1.0 + libm::log10(population)
    } else {
        1.0
    }
}

/// Assembles windows for every `(area, t)` with a target and complete own
/// features over the lookback (or, with short windows, at least
/// [`MIN_SHORT_WINDOW`] trailing complete rows).
///
/// Columns: own features, then for each neighbour in ascending distance its
/// distance followed by its selected features. Missing neighbour cells are
/// masked.
pub fn build_windows(
    features: &[Panel],
    targets: &Panel,
    population: &Panel,
    centroids: &[Centroid],
    config: &WindowConfig,
) -> Result<Dataset> {
    if features.is_empty() {
        return Err(invalid("features", "at least one feature panel is required"));
    }
    if config.lookback == 0 {
        return Err(invalid("lookback", "must be positive"));
    }
    if let Some(&j) = config.neighbor_features.iter().find(|&&j| j >= features.len()) {
        return Err(invalid("neighbor_features", format!("index {j} out of range")));
    }
    if config.neighbors > 0 && config.neighbor_features.is_empty() {
        return Err(invalid("neighbor_features", "required when neighbours are enabled"));
    }
    let names: Vec<String> = features.iter().map(|p| String::from(p.name())).collect();
    let mut columns = names.clone();
    for n in 0..config.neighbors {
        columns.push(format!("nb{}_distance", n + 1));
        for &j in &config.neighbor_features {
            columns.push(format!("nb{}_{}", n + 1, names[j]));
        }
    }
    let width = columns.len();
    debug_assert_eq!(width, config.width(features.len()));

    let knn = if config.neighbors > 0 {
        nearest_neighbors(centroids, config.neighbors)?
    } else {
        BTreeMap::new()
    };

    let lookback = config.lookback as Year;
    let mut samples = Vec::new();
    let mut incomplete = 0;
    let mut unweighted = 0;
    for obs in targets.iter() {
        let (area, t) = (obs.area_code, obs.year);
        let complete = |y: Year| features.iter().all(|p| p.contains(area, y));
        let mut rows = 0usize;
        while rows < config.lookback && complete(t - rows as Year) {
            rows += 1;
        }
        let ok = rows == config.lookback || (config.allow_short_windows && rows >= MIN_SHORT_WINDOW);
        if !ok {
            incomplete += 1;
            continue;
        }
        let padded = config.lookback - rows;
        let mut values = alloc::vec![0.0; config.lookback * width];
        let mut masked = alloc::vec![false; config.lookback * width];
        let neigh = knn.get(&area);
        for r in 0..config.lookback {
            let year = t - lookback + 1 + r as Year;
            let row = &mut values[r * width..(r + 1) * width];
            let mrow = &mut masked[r * width..(r + 1) * width];
            if r < padded {
                mrow.iter_mut().for_each(|m| *m = true);
                continue;
            }
            for (c, p) in features.iter().enumerate() {
                row[c] = p.get(area, year).unwrap_or(0.0);
            }
            let mut c = features.len();
            for n in 0..config.neighbors {
                let nb = neigh.and_then(|v| v.get(n));
                match nb {
                    Some(nb) => row[c] = nb.distance_km,
                    None => mrow[c] = true,
                }
                c += 1;
                for &j in &config.neighbor_features {
                    match nb.and_then(|nb| features[j].get(nb.area_code, year)) {
                        Some(v) => row[c] = v,
                        None => mrow[c] = true,
                    }
                    c += 1;
                }
            }
        }
        let weight = match population.latest_at_or_before(area, t) {
            Some((_, p)) => sample_weight(p),
            None => {
                unweighted += 1;
                1.0
            }
        };
        samples.push(WindowSample {
            area_code: area,
            anchor: t,
            values,
            masked,
            padded_rows: padded,
            raw_target: obs.value,
            target: obs.value,
            weight,
        });
    }
    Ok(Dataset {
        columns,
        features: names,
        lookback: config.lookback,
        samples,
        incomplete,
        unweighted,
    })
}

/// Anchor-year split whose training targets end before the first feature
/// year of any test window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub first_test_anchor: Year,
    pub last_test_anchor: Year,
    pub lookback: usize,
    pub horizon: u32,
}

impl TemporalSplit {
    /// Latest anchor whose target interval `(t, t + horizon]` precedes the
    /// first test feature year.
    pub fn last_train_anchor(&self) -> Year {
        self.first_test_anchor - self.lookback as Year - self.horizon as Year
    }

    pub fn is_train(&self, anchor: Year) -> bool {
        anchor <= self.last_train_anchor()
    }

    pub fn is_test(&self, anchor: Year) -> bool {
        (self.first_test_anchor..=self.last_test_anchor).contains(&anchor)
    }

    /// Test anchors are the last `n_test_years` anchor years of `dataset`.
    pub fn latest(dataset: &Dataset, n_test_years: usize, horizon: u32) -> Result<Self> {
        let mut years: Vec<Year> = dataset.samples.iter().map(|s| s.anchor).collect();
        years.sort_unstable();
        years.dedup();
        if n_test_years == 0 || years.len() <= n_test_years {
            return Err(Error::InsufficientData(format!(
                "{} anchor years cannot hold {n_test_years} test years",
                years.len()
            )));
        }
        Ok(Self {
            first_test_anchor: years[years.len() - n_test_years],
            last_test_anchor: years[years.len() - 1],
            lookback: dataset.lookback,
            horizon,
        })
    }

    pub fn apply(&self, dataset: &Dataset) -> Result<(Dataset, Dataset)> {
        let train = dataset.subset(|s| self.is_train(s.anchor));
        let test = dataset.subset(|s| self.is_test(s.anchor));
        let first_test_feature = self.first_test_anchor - self.lookback as Year + 1;
        // every training target interval must end before any test feature year
        for s in &train.samples {
            if s.anchor + self.horizon as Year >= first_test_feature {
                return Err(invalid(
                    "split",
                    format!("training anchor {} overlaps test windows", s.anchor),
                ));
            }
        }
        if train.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no training anchor at or before {}",
                self.last_train_anchor()
            )));
        }
        Ok((train, test))
    }
}
