//! Factor panels derived from demographic, fiscal, housing and price data.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::area::AreaCode;
use crate::error::{invalid, Result};
use crate::panel::{Derived, Diagnostics, Panel, PanelKind};
use crate::spatial::{nearest_neighbors, Centroid};

/// Distances below this floor (km) are clamped before inverse weighting.
pub const MIN_NEIGHBOR_DISTANCE_KM: f64 = 0.1;
/// Gap bridged when interpolating the five-yearly dwelling survey.
pub const DWELLING_SURVEY_GAP: u32 = 5;

/// A factor panel with its accumulation kind and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPanel {
    pub panel: Panel,
    pub provenance: String,
    pub diagnostics: Diagnostics,
}

impl FactorPanel {
    fn new(panel: Panel, provenance: &str, diagnostics: Diagnostics) -> Self {
        Self {
            panel,
            provenance: provenance.into(),
            diagnostics,
        }
    }

    pub fn kind(&self) -> PanelKind {
        self.panel.kind()
    }
}

/// `(in - out) / population` on keys present in all three panels.
///
/// Non-positive populations are dropped; ratios outside `(-1, 1)` are kept
/// but flagged.
pub fn net_migration_ratio(in_mig: &Panel, out_mig: &Panel, population: &Panel) -> FactorPanel {
    let mut panel = Panel::new("net_migration_ratio", "ratio", PanelKind::FlowRatio);
    let mut diag = Diagnostics::default();
    for (area, year, inflow, outflow) in in_mig.inner_join(out_mig) {
        let Some(pop) = population.get(area, year) else {
            diag.dropped += 1;
            continue;
        };
        if pop <= 0.0 {
            diag.dropped += 1;
            continue;
        }
        let ratio = (inflow - outflow) / pop;
        if !(-1.0 < ratio && ratio < 1.0) {
            diag.flagged += 1;
        }
        // keys come from validated panels
        let _ = panel.insert(area, year, ratio);
    }
    FactorPanel::new(panel, "in_migration, out_migration, population", diag)
}

/// One-year percentage change of total taxable income.
pub fn taxable_income_growth(income: &Panel) -> Result<FactorPanel> {
    let Derived { panel, diagnostics } = income.pct_change(1)?;
    Ok(FactorPanel::new(
        panel.with_name("taxable_income_growth"),
        "taxable_income",
        diagnostics,
    ))
}

/// Annual construction starts over the linearly interpolated dwelling stock.
pub fn new_dwellings_ratio(starts: &Panel, stock_survey: &Panel) -> Result<FactorPanel> {
    let interp = stock_survey.interpolate_gaps(DWELLING_SURVEY_GAP)?;
    let mut diag = interp.diagnostics;
    let mut panel = Panel::new("new_dwellings_ratio", "ratio", PanelKind::FlowRatio);
    for o in starts.iter() {
        match interp.panel.get(o.area_code, o.year) {
            Some(stock) if stock > 0.0 => {
                let _ = panel.insert(o.area_code, o.year, o.value / stock);
            }
            _ => diag.dropped += 1,
        }
    }
    Ok(FactorPanel::new(panel, "new_starts, dwelling_stock", diag))
}

/// Annual index returns, whose trailing three-year compounding is the
/// historical price growth.
pub fn annual_return_factor(index: &Panel) -> Result<FactorPanel> {
    let Derived { panel, diagnostics } = index.clone().with_kind(PanelKind::Level).pct_change(1)?;
    Ok(FactorPanel::new(
        panel.with_name("annual_return"),
        "price_index",
        diagnostics,
    ))
}

/// Mean-reversion signal: negated trailing three-year price growth.
pub fn historical_return_signal(index: &Panel) -> Result<FactorPanel> {
    let level = index.clone().with_kind(PanelKind::Level);
    let cum = level.trailing_cum_growth(3)?;
    let neg = cum.panel.map_values("historical_return_signal", |v| -v);
    let mut diag = cum.diagnostics;
    diag.merge(&neg.diagnostics);
    Ok(FactorPanel::new(
        neg.panel.with_kind(PanelKind::Growth),
        "price_index",
        diag,
    ))
}

/// Inverse-distance weighted mean of the same-year returns of each area's
/// `k` geometrically nearest neighbours (those with a return that year).
pub fn neighbor_return_factor(index: &Panel, centroids: &[Centroid], k: usize) -> Result<FactorPanel> {
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    let indexed: Vec<AreaCode> = index.areas();
    let usable: Vec<Centroid> = centroids
        .iter()
        .filter(|c| indexed.binary_search(&c.area_code).is_ok())
        .copied()
        .collect();
    let knn = nearest_neighbors(&usable, k)?;
    let returns = index.clone().with_kind(PanelKind::Level).pct_change(1)?.panel;

    let mut panel = Panel::new("neighbor_return", "ratio", PanelKind::Growth);
    let mut diag = Diagnostics::default();
    for o in index.iter() {
        let Some(neigh) = knn.get(&o.area_code) else {
            diag.dropped += 1;
            continue;
        };
        let (mut num, mut den) = (0.0, 0.0);
        for n in neigh {
            if let Some(r) = returns.get(n.area_code, o.year) {
                let w = 1.0 / n.distance_km.max(MIN_NEIGHBOR_DISTANCE_KM);
                num += w * r;
                den += w;
            }
        }
        if den > 0.0 {
            let _ = panel.insert(o.area_code, o.year, num / den);
        } else {
            diag.dropped += 1;
        }
    }
    Ok(FactorPanel::new(panel, "price_index, centroids", diag))
}
