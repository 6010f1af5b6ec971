//! Cross-sectional time series keyed by `(area_code, year)`.
//!
//! Missing data is always represented by absence. Every transform returns a
//! [`Derived`] carrying the output panel together with a tally of the
//! observations it could not produce.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::area::{AreaCode, Year, MAX_PANEL_YEAR, MIN_PANEL_YEAR};
use crate::error::{invalid, Error, Result};

/// How a panel's values accumulate over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PanelKind {
    /// Stocks and indices: cumulative growth is `p(t) / p(t - w) - 1`.
    #[default]
    Level,
    /// Period growth rates: cumulative growth compounds `prod(1 + g) - 1`.
    Growth,
    /// Per-period flow ratios: cumulative growth is the plain sum.
    FlowRatio,
}

/// One `(year, area_code, value)` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelObservation {
    pub year: Year,
    pub area_code: AreaCode,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    name: String,
    unit: String,
    kind: PanelKind,
    values: BTreeMap<(AreaCode, Year), f64>,
}

/// Tally emitted alongside every derived panel.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Observations that could not be produced (bad denominators, gaps).
    pub dropped: usize,
    /// Observations that were produced but flagged.
    pub flagged: usize,
    /// Years flagged as degenerate (e.g. zero cross-sectional variance).
    pub flagged_years: Vec<Year>,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.dropped += other.dropped;
        self.flagged += other.flagged;
        self.flagged_years.extend_from_slice(&other.flagged_years);
        self.flagged_years.sort_unstable();
        self.flagged_years.dedup();
    }
}

/// A panel produced by a transform plus its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Derived {
    pub panel: Panel,
    pub diagnostics: Diagnostics,
}

fn check_year(year: Year) -> Result<()> {
    if (MIN_PANEL_YEAR..=MAX_PANEL_YEAR).contains(&year) {
        Ok(())
    } else {
        Err(Error::YearOutOfRange(year))
    }
}

impl Panel {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, kind: PanelKind) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            kind,
            values: BTreeMap::new(),
        }
    }

    pub fn from_observations<I>(
        name: impl Into<String>,
        unit: impl Into<String>,
        kind: PanelKind,
        observations: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = PanelObservation>,
    {
        let mut panel = Self::new(name, unit, kind);
        for obs in observations {
            panel.insert(obs.area_code, obs.year, obs.value)?;
        }
        Ok(panel)
    }

    /// Builds a panel from `(area, year, value)` triples.
    pub fn from_triples<I>(name: &str, kind: PanelKind, triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (AreaCode, Year, f64)>,
    {
        let mut panel = Self::new(name, "", kind);
        for (a, y, v) in triples {
            panel.insert(a, y, v)?;
        }
        Ok(panel)
    }

    pub fn insert(&mut self, area: AreaCode, year: Year, value: f64) -> Result<()> {
        check_year(year)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { area, year });
        }
        if self.values.insert((area, year), value).is_some() {
            return Err(Error::DuplicateKey { area, year });
        }
        Ok(())
    }

    /// Keys produced by transforms come from an already valid panel.
    fn put(&mut self, area: AreaCode, year: Year, value: f64) {
        debug_assert!(value.is_finite());
        self.values.insert((area, year), value);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn kind(&self) -> PanelKind {
        self.kind
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn with_kind(mut self, kind: PanelKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, area: AreaCode, year: Year) -> Option<f64> {
        self.values.get(&(area, year)).copied()
    }

    pub fn contains(&self, area: AreaCode, year: Year) -> bool {
        self.values.contains_key(&(area, year))
    }

    /// Observations sorted by `(area_code, year)`.
    pub fn iter(&self) -> impl Iterator<Item = PanelObservation> + '_ {
        self.values
            .iter()
            .map(|(&(area_code, year), &value)| PanelObservation { year, area_code, value })
    }

    /// Distinct area codes in ascending order.
    pub fn areas(&self) -> Vec<AreaCode> {
        let mut out: Vec<AreaCode> = self.values.keys().map(|k| k.0).collect();
        out.dedup();
        out
    }

    /// Distinct years in ascending order.
    pub fn years(&self) -> Vec<Year> {
        let mut out: Vec<Year> = self.values.keys().map(|k| k.1).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `(year, value)` pairs for one area in chronological order.
    pub fn series(&self, area: AreaCode) -> impl Iterator<Item = (Year, f64)> + '_ {
        self.values
            .range((area, Year::MIN)..=(area, Year::MAX))
            .map(|(&(_, y), &v)| (y, v))
    }

    /// `(area, value)` pairs observed in one year, ascending by area.
    pub fn cross_section(&self, year: Year) -> Vec<(AreaCode, f64)> {
        self.values
            .iter()
            .filter(|(k, _)| k.1 == year)
            .map(|(k, &v)| (k.0, v))
            .collect()
    }

    /// Latest observation for `area` at or before `year`.
    pub fn latest_at_or_before(&self, area: AreaCode, year: Year) -> Option<(Year, f64)> {
        self.values
            .range((area, Year::MIN)..=(area, year))
            .next_back()
            .map(|(&(_, y), &v)| (y, v))
    }

    /// Inner join on `(area, year)`; rows ascend by `(area, year)`.
    pub fn inner_join<'a>(&'a self, other: &'a Panel) -> impl Iterator<Item = (AreaCode, Year, f64, f64)> + 'a {
        self.values
            .iter()
            .filter_map(move |(&(a, y), &x)| other.get(a, y).map(|z| (a, y, x, z)))
    }

    /// Applies `f` to every value, keeping keys. Non-finite results are dropped.
    pub fn map_values(&self, name: &str, mut f: impl FnMut(f64) -> f64) -> Derived {
        let mut out = Panel::new(name, self.unit.clone(), self.kind);
        let mut diagnostics = Diagnostics::default();
        for (&(a, y), &v) in &self.values {
            let r = f(v);
            if r.is_finite() {
                out.put(a, y, r);
            } else {
                diagnostics.dropped += 1;
            }
        }
        Derived {
            panel: out,
            diagnostics,
        }
    }

    fn derived_shell(&self, suffix: &str, kind: PanelKind) -> Panel {
        Panel::new(format!("{}_{}", self.name, suffix), "ratio", kind)
    }

    /// Percentage change over `periods` years: `p(t) / p(t - periods) - 1`.
    ///
    /// The first `periods` years of each area are silently absent; interior
    /// gaps and non-positive denominators are counted as dropped.
    pub fn pct_change(&self, periods: u32) -> Result<Derived> {
        if periods == 0 {
            return Err(invalid("periods", "must be positive"));
        }
        let lag = periods as Year;
        let mut out = self.derived_shell(&format!("pct{periods}"), PanelKind::Growth);
        let mut diagnostics = Diagnostics::default();
        for area in self.areas() {
            let first = match self.series(area).next() {
                Some((y, _)) => y,
                None => continue,
            };
            for (year, value) in self.series(area) {
                if year - lag < first {
                    continue;
                }
                match self.get(area, year - lag) {
                    Some(base) if base > 0.0 => out.put(area, year, value / base - 1.0),
                    _ => diagnostics.dropped += 1,
                }
            }
        }
        Ok(Derived {
            panel: out,
            diagnostics,
        })
    }

    /// Cumulative growth over the trailing `window` years, using the rule
    /// selected by the panel kind.
    pub fn trailing_cum_growth(&self, window: u32) -> Result<Derived> {
        if window == 0 {
            return Err(invalid("window", "must be positive"));
        }
        if self.kind == PanelKind::Level {
            let mut d = self.pct_change(window)?;
            d.panel.name = format!("{}_cum{window}", self.name);
            return Ok(d);
        }
        let w = window as Year;
        let mut out = self.derived_shell(&format!("cum{window}"), PanelKind::Growth);
        let mut diagnostics = Diagnostics::default();
        for area in self.areas() {
            let first = match self.series(area).next() {
                Some((y, _)) => y,
                None => continue,
            };
            for (year, _) in self.series(area) {
                if year - w + 1 < first {
                    continue;
                }
                let window_values: Option<Vec<f64>> = (year - w + 1..=year).map(|s| self.get(area, s)).collect();
                let Some(vals) = window_values else {
                    diagnostics.dropped += 1;
                    continue;
                };
                let cum = match self.kind {
                    PanelKind::FlowRatio => vals.iter().sum::<f64>(),
                    _ => vals.iter().fold(1.0, |acc, g| acc * (1.0 + g)) - 1.0,
                };
                if cum.is_finite() {
                    out.put(area, year, cum);
                } else {
                    diagnostics.dropped += 1;
                }
            }
        }
        Ok(Derived {
            panel: out,
            diagnostics,
        })
    }

    /// Return realised over the next `horizon` years, stamped at the start year.
    pub fn forward_return(&self, horizon: u32) -> Result<Derived> {
        if !(1..=4).contains(&horizon) {
            return Err(invalid("horizon", "must lie in 1..=4"));
        }
        let h = horizon as Year;
        let mut out = self.derived_shell(&format!("fwd{horizon}"), PanelKind::Growth);
        let mut diagnostics = Diagnostics::default();
        for area in self.areas() {
            let last = match self.series(area).last() {
                Some((y, _)) => y,
                None => continue,
            };
            for (year, value) in self.series(area) {
                if year + h > last {
                    continue;
                }
                match self.get(area, year + h) {
                    Some(future) if value > 0.0 => out.put(area, year, future / value - 1.0),
                    _ => diagnostics.dropped += 1,
                }
            }
        }
        Ok(Derived {
            panel: out,
            diagnostics,
        })
    }

    /// Z-scores each year's cross-section with the population standard
    /// deviation. Years with zero spread are set to zero and flagged.
    pub fn normalize_per_year(&self) -> Derived {
        let mut by_year: BTreeMap<Year, Vec<(AreaCode, f64)>> = BTreeMap::new();
        for (&(a, y), &v) in &self.values {
            by_year.entry(y).or_default().push((a, v));
        }
        let mut out = Panel::new(format!("{}_z", self.name), "z", self.kind);
        let mut diagnostics = Diagnostics::default();
        for (year, rows) in by_year {
            let stats = YearStats::from_values(rows.iter().map(|r| r.1));
            let degenerate = !stats.is_usable();
            if degenerate {
                diagnostics.flagged_years.push(year);
                diagnostics.flagged += rows.len();
            }
            for (a, v) in rows {
                let z = if degenerate { 0.0 } else { stats.apply(v) };
                out.put(a, year, z);
            }
        }
        Derived {
            panel: out,
            diagnostics,
        }
    }

    /// Linear interpolation between known years no more than `max_gap` apart.
    pub fn interpolate_gaps(&self, max_gap: u32) -> Result<Derived> {
        if max_gap == 0 {
            return Err(invalid("max_gap", "must be positive"));
        }
        let mut out = Panel::new(format!("{}_interp", self.name), self.unit.clone(), self.kind);
        let mut diagnostics = Diagnostics::default();
        for area in self.areas() {
            let known: Vec<(Year, f64)> = self.series(area).collect();
            for &(y, v) in &known {
                out.put(area, y, v);
            }
            for pair in known.windows(2) {
                let ((y0, v0), (y1, v1)) = (pair[0], pair[1]);
                let gap = y1 - y0;
                if gap <= 1 {
                    continue;
                }
                if gap > max_gap as Year {
                    diagnostics.dropped += (gap - 1) as usize;
                    continue;
                }
                for y in y0 + 1..y1 {
                    let frac = f64::from(y - y0) / f64::from(gap);
                    out.put(area, y, v0 + (v1 - v0) * frac);
                }
            }
        }
        Ok(Derived {
            panel: out,
            diagnostics,
        })
    }

    /// Keeps only observations whose key satisfies `keep`.
    pub fn filter(&self, mut keep: impl FnMut(AreaCode, Year, f64) -> bool) -> Panel {
        let mut out = Panel::new(self.name.clone(), self.unit.clone(), self.kind);
        for (&(a, y), &v) in &self.values {
            if keep(a, y, v) {
                out.put(a, y, v);
            }
        }
        out
    }

    /// Moves every observation `offset` years (positive = later). Keys that
    /// leave the supported year range are dropped.
    pub fn shift_years(&self, offset: Year) -> Derived {
        let mut out = Panel::new(self.name.clone(), self.unit.clone(), self.kind);
        let mut diagnostics = Diagnostics::default();
        for (&(a, y), &v) in &self.values {
            let ny = y + offset;
            if check_year(ny).is_ok() {
                out.put(a, ny, v);
            } else {
                diagnostics.dropped += 1;
            }
        }
        Derived {
            panel: out,
            diagnostics,
        }
    }
}

/// Cross-sectional moments of one year, population convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YearStats {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl YearStats {
    pub fn from_values(values: impl Iterator<Item = f64> + Clone) -> Self {
        let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return Self {
                mean: 0.0,
                sd: 0.0,
                count: 0,
            };
        }
        let mean = sum / n as f64;
        let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
        Self {
            mean,
            sd: libm::sqrt(ss / n as f64),
            count: n,
        }
    }

    /// Spread large enough to divide by.
    pub fn is_usable(&self) -> bool {
        self.count > 0 && self.sd > 1e-12 * (1.0 + libm::fabs(self.mean))
    }

    pub fn apply(&self, value: f64) -> f64 {
        (value - self.mean) / self.sd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn area(c: u32) -> AreaCode {
        AreaCode::new(c).unwrap()
    }

    fn series(code: u32, start: Year, values: &[f64], kind: PanelKind) -> Panel {
        Panel::from_triples(
            "t",
            kind,
            values
                .iter()
                .enumerate()
                .map(|(i, &v)| (area(code), start + i as Year, v)),
        )
        .unwrap()
    }

    #[test]
    fn pct_change_minato() {
        let p = series(13103, 2006, &[100.0, 126.84], PanelKind::Level);
        let d = p.pct_change(1).unwrap();
        let g = d.panel.get(area(13103), 2007).unwrap();
        assert!((g - 0.2684).abs() < 1e-12);
        assert!(d.panel.get(area(13103), 2006).is_none());
    }

    #[test]
    fn pct_change_trivial_cases() {
        let flat = series(1, 2000, &[5.0, 5.0, 5.0], PanelKind::Level)
            .pct_change(1)
            .unwrap()
            .panel;
        assert_eq!(flat.iter().map(|o| o.value).collect::<Vec<_>>(), vec![0.0, 0.0]);

        let two = series(1, 2000, &[2.0, 3.0, 6.0], PanelKind::Level)
            .pct_change(2)
            .unwrap()
            .panel;
        assert_eq!(two.len(), 1);
        assert_eq!(two.get(area(1), 2002), Some(2.0));
    }

    #[test]
    fn pct_change_counts_bad_denominators() {
        let p = series(1, 2000, &[0.0, 3.0, -1.0, 2.0], PanelKind::Level);
        let d = p.pct_change(1).unwrap();
        assert_eq!(d.panel.len(), 1);
        assert_eq!(d.diagnostics.dropped, 2);

        let mut gap = series(2, 2000, &[1.0, 2.0], PanelKind::Level);
        gap.insert(area(2), 2004, 3.0).unwrap();
        let d = gap.pct_change(1).unwrap();
        assert_eq!(d.panel.len(), 1);
        assert_eq!(d.diagnostics.dropped, 1);
        assert!(p.pct_change(0).is_err());
    }

    #[test]
    fn trailing_growth_rules() {
        let lv = series(1, 2000, &[100.0, 110.0, 121.0, 133.1], PanelKind::Level);
        let g = lv.trailing_cum_growth(3).unwrap().panel;
        assert!((g.get(area(1), 2003).unwrap() - 0.331).abs() < 1e-12);
        assert_eq!(g.len(), 1);

        let fl = series(1, 2000, &[0.01, 0.02, 0.03], PanelKind::FlowRatio);
        let g = fl.trailing_cum_growth(3).unwrap().panel;
        assert!((g.get(area(1), 2002).unwrap() - 0.06).abs() < 1e-15);

        let gr = series(1, 2000, &[0.1, 0.1, 0.1], PanelKind::Growth);
        let g = gr.trailing_cum_growth(3).unwrap().panel;
        assert!((g.get(area(1), 2002).unwrap() - 0.331).abs() < 1e-12);
    }

    #[test]
    fn forward_return_cases() {
        let mut p = Panel::new("i", "", PanelKind::Level);
        p.insert(area(1), 2000, 100.0).unwrap();
        p.insert(area(1), 2002, 121.0).unwrap();
        let f = p.forward_return(2).unwrap().panel;
        assert!((f.get(area(1), 2000).unwrap() - 0.21).abs() < 1e-12);

        let flat = series(1, 2000, &[3.0; 6], PanelKind::Level);
        for k in 1..=4 {
            assert!(flat.forward_return(k).unwrap().panel.iter().all(|o| o.value == 0.0));
        }
        assert!(flat.forward_return(0).is_err());
        assert!(flat.forward_return(5).is_err());
    }

    #[test]
    fn normalize_cases() {
        let p = Panel::from_triples(
            "x",
            PanelKind::Level,
            [(area(1), 2000, 1.0), (area(2), 2000, 2.0), (area(3), 2000, 3.0)],
        )
        .unwrap();
        let z = p.normalize_per_year().panel;
        let expect = libm::sqrt(1.5);
        assert!((z.get(area(1), 2000).unwrap() + expect).abs() < 1e-12);
        assert!(z.get(area(2), 2000).unwrap().abs() < 1e-12);
        assert!((z.get(area(3), 2000).unwrap() - expect).abs() < 1e-12);

        let same = Panel::from_triples("x", PanelKind::Level, [(area(1), 2000, 7.0), (area(2), 2000, 7.0)]).unwrap();
        let d = same.normalize_per_year();
        assert!(d.panel.iter().all(|o| o.value == 0.0));
        assert_eq!(d.diagnostics.flagged_years, vec![2000]);
    }

    #[test]
    fn interpolation_cases() {
        let mut p = Panel::new("stock", "dwellings", PanelKind::Level);
        p.insert(area(1), 2013, 1000.0).unwrap();
        p.insert(area(1), 2018, 1500.0).unwrap();
        let i = p.interpolate_gaps(5).unwrap().panel;
        assert_eq!(i.get(area(1), 2015), Some(1200.0));
        assert_eq!(i.len(), 6);
        assert!(i.get(area(1), 2019).is_none());

        let d = p.interpolate_gaps(4).unwrap();
        assert_eq!(d.panel.len(), 2);
        assert_eq!(d.diagnostics.dropped, 4);

        let single = series(9, 2001, &[4.0], PanelKind::Level);
        assert_eq!(
            single.interpolate_gaps(5).unwrap().panel,
            single.clone().with_name("t_interp")
        );
    }

    #[test]
    fn insert_validates() {
        let mut p = Panel::new("x", "", PanelKind::Level);
        assert_eq!(p.insert(area(1), 1900, 1.0), Err(Error::YearOutOfRange(1900)));
        assert!(p.insert(area(1), 2000, f64::NAN).is_err());
        p.insert(area(1), 2000, 1.0).unwrap();
        assert!(matches!(p.insert(area(1), 2000, 2.0), Err(Error::DuplicateKey { .. })));
    }

    fn ragged_panel() -> impl Strategy<Value = Panel> {
        proptest::collection::vec((1u32..6, 2000i32..2016, 0.5f64..200.0), 1..80).prop_map(|rows| {
            let mut p = Panel::new("r", "", PanelKind::Level);
            for (a, y, v) in rows {
                let _ = p.insert(area(a), y, v);
            }
            p
        })
    }

    proptest! {
        #[test]
        fn window_one_equals_pct_change(p in ragged_panel()) {
            let a = p.trailing_cum_growth(1).unwrap().panel;
            let b = p.pct_change(1).unwrap().panel;
            prop_assert_eq!(a.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
        }

        #[test]
        fn forward_shift_equals_pct_change(p in ragged_panel()) {
            let fwd = p.forward_return(1).unwrap().panel.shift_years(1).panel;
            let pct = p.pct_change(1).unwrap().panel;
            prop_assert_eq!(fwd.iter().collect::<Vec<_>>(), pct.iter().collect::<Vec<_>>());
        }

        #[test]
        fn recomposition_matches_level_ratio(p in ragged_panel(), w in 1u32..4) {
            let g = p.pct_change(1).unwrap().panel;
            let cum = p.pct_change(w).unwrap().panel;
            for o in cum.iter() {
                let prod: Option<f64> = (o.year - w as Year + 1..=o.year)
                    .map(|y| g.get(o.area_code, y).map(|x| 1.0 + x))
                    .product();
                if let Some(prod) = prod {
                    prop_assert!((prod - (1.0 + o.value)).abs() < 1e-9 * (1.0 + o.value.abs()));
                }
            }
        }

        #[test]
        fn normalization_moments_and_idempotence(p in ragged_panel()) {
            let z = p.normalize_per_year();
            for year in z.panel.years() {
                if z.diagnostics.flagged_years.contains(&year) { continue; }
                let s = YearStats::from_values(z.panel.cross_section(year).into_iter().map(|r| r.1));
                prop_assert!(s.mean.abs() < 1e-9);
                prop_assert!((s.sd - 1.0).abs() < 1e-9);
            }
            let twice = z.panel.normalize_per_year().panel;
            for (a, b) in z.panel.iter().zip(twice.iter()) {
                prop_assert!((a.value - b.value).abs() < 1e-9);
            }
        }

        #[test]
        fn normalization_preserves_rank(p in ragged_panel()) {
            let z = p.normalize_per_year().panel;
            for year in p.years() {
                let raw = p.cross_section(year);
                for &(a, x) in &raw {
                    for &(b, y) in &raw {
                        if x < y {
                            prop_assert!(z.get(a, year).unwrap() <= z.get(b, year).unwrap());
                        }
                    }
                }
            }
        }

        #[test]
        fn interpolation_projects_onto_known(p in ragged_panel(), gap in 1u32..6) {
            let i = p.interpolate_gaps(gap).unwrap().panel;
            for o in p.iter() {
                prop_assert_eq!(i.get(o.area_code, o.year), Some(o.value));
            }
            for o in i.iter() {
                let first = p.series(o.area_code).next().unwrap().0;
                let last = p.series(o.area_code).last().unwrap().0;
                prop_assert!(o.year >= first && o.year <= last);
            }
        }

        #[test]
        fn transforms_are_pure(p in ragged_panel()) {
            prop_assert_eq!(p.pct_change(2).unwrap(), p.pct_change(2).unwrap());
            prop_assert_eq!(p.normalize_per_year(), p.normalize_per_year());
        }
    }
}
