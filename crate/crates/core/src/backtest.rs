//! Decile long-short backtests with overlapping annual cohorts and a
//! random-signal baseline.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::area::{AreaCode, Year};
use crate::error::{invalid, Error, Result};
use crate::panel::Panel;
use crate::stats;

pub const DEFAULT_UNIVERSE_SIZE: usize = 500;
pub const DEFAULT_FRACTION: f64 = 0.1;
pub const DEFAULT_BASELINE_PORTFOLIOS: usize = 1000;
/// Percentiles reported for the baseline NAV bands.
pub const BAND_PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub signal: Panel,
    /// Years each cohort is held.
    pub horizon: u32,
    pub universe_size: usize,
    /// Share of the universe in each leg.
    pub fraction: f64,
    pub seed: u64,
}

impl StrategySpec {
    pub fn new(signal: Panel, horizon: u32) -> Self {
        Self {
            signal,
            horizon,
            universe_size: DEFAULT_UNIVERSE_SIZE,
            fraction: DEFAULT_FRACTION,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 0.5) {
            return Err(invalid("fraction", "must lie in (0, 0.5]"));
        }
        if self.universe_size == 0 {
            return Err(invalid("universe_size", "must be positive"));
        }
        Ok(())
    }
}

/// Investable areas per entry year.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Universe {
    pub members: BTreeMap<Year, Vec<AreaCode>>,
    /// Years in which fewer candidates than the requested size existed.
    pub short_years: Vec<Year>,
}

impl Universe {
    /// Every area of `index` in every year it is observed.
    pub fn all(index: &Panel) -> Self {
        let mut members: BTreeMap<Year, Vec<AreaCode>> = BTreeMap::new();
        for obs in index.iter() {
            members.entry(obs.year).or_default().push(obs.area_code);
        }
        Self {
            members,
            short_years: Vec::new(),
        }
    }

    pub fn at(&self, year: Year) -> &[AreaCode] {
        self.members.get(&year).map_or(&[], Vec::as_slice)
    }
}

/// For each year, the `size` areas with the highest population in their most
/// recent observation at or before that year. Equal populations resolve to
/// the lower area code.
pub fn build_universe(population: &Panel, size: usize, years: &[Year]) -> Result<Universe> {
    if size == 0 {
        return Err(invalid("size", "must be positive"));
    }
    let areas = population.areas();
    let mut out = Universe::default();
    for &year in years {
        let mut ranked: Vec<(f64, AreaCode)> = areas
            .iter()
            .filter_map(|&a| population.latest_at_or_before(a, year).map(|(_, p)| (p, a)))
            .collect();
        if ranked.len() < size {
            out.short_years.push(year);
        }
        ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        ranked.truncate(size);
        let mut members: Vec<AreaCode> = ranked.into_iter().map(|(_, a)| a).collect();
        members.sort_unstable();
        out.members.insert(year, members);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub entry_year: Year,
    /// Ascending area codes.
    pub long: Vec<AreaCode>,
    pub short: Vec<AreaCode>,
    /// A signal tie straddles a leg cutoff, so membership rests on area order.
    pub degenerate: bool,
}

/// Legs hold `ceil(fraction * |universe|)` areas.
pub fn leg_size(universe_len: usize, fraction: f64) -> usize {
    let raw = fraction * universe_len as f64;
    (libm::ceil(raw - 1e-9 * raw.max(1.0)) as usize).max(1)
}

fn by_signal(a: &(f64, AreaCode), b: &(f64, AreaCode)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn rank_candidates(mut cand: Vec<(f64, AreaCode)>, n_leg: usize, entry_year: Year) -> Cohort {
    // Candidates are totally ordered by (signal, area): short takes the
    // first n_leg, long the last n_leg.
    let m = cand.len();
    cand.select_nth_unstable_by(m - n_leg, by_signal);
    let long_min = cand[m - n_leg].0;
    let (rest, long) = cand.split_at_mut(m - n_leg);
    rest.select_nth_unstable_by(n_leg - 1, by_signal);
    let short_max = rest[n_leg - 1].0;
    let middle = &rest[n_leg..];
    let mid_max = middle.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let mid_min = middle.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let degenerate = if middle.is_empty() {
        short_max == long_min
    } else {
        mid_min == short_max || mid_max == long_min
    };
    let mut long: Vec<AreaCode> = long.iter().map(|c| c.1).collect();
    let mut short: Vec<AreaCode> = rest[..n_leg].iter().map(|c| c.1).collect();
    long.sort_unstable();
    short.sort_unstable();
    Cohort {
        entry_year,
        long,
        short,
        degenerate,
    }
}

/// Long the top and short the bottom `fraction` of the universe by signal.
/// Only areas with a signal in `entry_year` are eligible.
pub fn rank_cohort(signal: &Panel, universe: &[AreaCode], entry_year: Year, fraction: f64) -> Result<Cohort> {
    if !(fraction > 0.0 && fraction <= 0.5) {
        return Err(invalid("fraction", "must lie in (0, 0.5]"));
    }
    let cand: Vec<(f64, AreaCode)> = universe
        .iter()
        .filter_map(|&a| signal.get(a, entry_year).map(|s| (s, a)))
        .collect();
    let n_leg = leg_size(universe.len(), fraction);
    if cand.len() < 2 * n_leg {
        return Err(Error::InsufficientCoverage {
            year: entry_year,
            available: cand.len(),
            required: 2 * n_leg,
        });
    }
    Ok(rank_candidates(cand, n_leg, entry_year))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BacktestDiagnostics {
    /// Entry years skipped for lack of signal coverage: `(year, available, required)`.
    pub skipped_entries: Vec<(Year, usize, usize)>,
    /// Positions marked flat for one year because the index was missing.
    pub filled_marks: usize,
    /// Positions closed after the index stayed missing beyond one year.
    pub dropped_positions: usize,
    /// Holding years in which no cohort contributed a return.
    pub empty_years: Vec<Year>,
    pub degenerate_entries: usize,
    /// NAV reached zero; later returns are not compounded.
    pub wiped_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub horizon: u32,
    /// NAV axis: the first entry year followed by each holding year.
    pub years: Vec<Year>,
    /// `nav[0] = 1`, compounded from `returns`.
    pub nav: Vec<f64>,
    /// Portfolio return of `years[i + 1]`.
    pub returns: Vec<f64>,
    pub cagr: f64,
    /// Undefined for fewer than two returns or zero dispersion.
    pub sharpe: Option<f64>,
    pub cohorts: Vec<Cohort>,
    pub diagnostics: BacktestDiagnostics,
}

impl BacktestResult {
    pub fn terminal_nav(&self) -> f64 {
        *self.nav.last().unwrap_or(&1.0)
    }
}

/// `NAV_T^(1/T) - 1` over `T` holding years.
pub fn cagr(nav: &[f64]) -> f64 {
    let t = nav.len().saturating_sub(1);
    if t == 0 {
        return 0.0;
    }
    let end = nav[t];
    if end <= 0.0 {
        return -1.0;
    }
    libm::pow(end, 1.0 / t as f64) - 1.0
}

/// Mean over sample standard deviation of periodic returns.
pub fn sharpe(returns: &[f64]) -> Option<f64> {
    let sd = stats::sample_sd(returns);
    (sd.is_finite() && sd > 0.0).then(|| stats::mean(returns) / sd)
}

struct Position {
    mark: f64,
    mark_year: Year,
    open: bool,
}

/// Entry years considered: years with index observations that precede the
/// last index year.
fn entry_years(index: &Panel) -> Vec<Year> {
    let years = index.years();
    match years.last() {
        Some(&last) => years.into_iter().filter(|&y| y < last).collect(),
        None => Vec::new(),
    }
}

fn simulate(
    horizon: u32,
    fraction: f64,
    index: &Panel,
    universe: &Universe,
    signal_at: &mut dyn FnMut(AreaCode, Year) -> Option<f64>,
) -> Result<BacktestResult> {
    let entries = entry_years(index);
    let last_year = *index
        .years()
        .last()
        .ok_or_else(|| Error::InsufficientData("empty index panel".into()))?;
    let mut diag = BacktestDiagnostics::default();
    let mut cohorts = Vec::new();
    for &t in &entries {
        let members = universe.at(t);
        if members.is_empty() {
            continue;
        }
        let n_leg = leg_size(members.len(), fraction);
        let cand: Vec<(f64, AreaCode)> = members
            .iter()
            .filter(|&&a| index.contains(a, t))
            .filter_map(|&a| signal_at(a, t).map(|s| (s, a)))
            .collect();
        if cand.len() < 2 * n_leg {
            diag.skipped_entries.push((t, cand.len(), 2 * n_leg));
            continue;
        }
        let cohort = rank_candidates(cand, n_leg, t);
        if cohort.degenerate {
            diag.degenerate_entries += 1;
        }
        cohorts.push(cohort);
    }
    let Some(first_entry) = cohorts.first().map(|c| c.entry_year) else {
        return Err(Error::InsufficientData(
            "no entry year has enough signal coverage".into(),
        ));
    };

    // per cohort, per leg: positions carried across holding years
    let mut books: Vec<(Vec<Position>, Vec<Position>)> = cohorts
        .iter()
        .map(|c| {
            let open = |a: &AreaCode| Position {
                mark: index.get(*a, c.entry_year).unwrap_or(f64::NAN),
                mark_year: c.entry_year,
                open: true,
            };
            (c.long.iter().map(open).collect(), c.short.iter().map(open).collect())
        })
        .collect();

    let mut years = alloc::vec![first_entry];
    let mut nav = alloc::vec![1.0];
    let mut returns = Vec::new();
    for s in first_entry + 1..=last_year {
        let mut spreads = Vec::new();
        for (cohort, (long, short)) in cohorts.iter().zip(books.iter_mut()) {
            let t = cohort.entry_year;
            if !(t < s && s <= t + horizon as Year) {
                continue;
            }
            let mut leg_mean = |areas: &[AreaCode], book: &mut [Position]| -> Option<f64> {
                let mut sum = 0.0;
                let mut n = 0usize;
                for (a, p) in areas.iter().zip(book.iter_mut()) {
                    if !p.open {
                        continue;
                    }
                    match index.get(*a, s) {
                        Some(v) => {
                            sum += v / p.mark - 1.0;
                            p.mark = v;
                            p.mark_year = s;
                        }
                        None if s - p.mark_year == 1 => diag.filled_marks += 1,
                        None => {
                            p.open = false;
                            diag.dropped_positions += 1;
                            continue;
                        }
                    }
                    n += 1;
                }
                (n > 0).then(|| sum / n as f64)
            };
            let l = leg_mean(&cohort.long, long);
            let sh = leg_mean(&cohort.short, short);
            if let (Some(l), Some(sh)) = (l, sh) {
                spreads.push(l - sh);
            }
        }
        let r = if spreads.is_empty() {
            diag.empty_years.push(s);
            0.0
        } else {
            spreads.iter().sum::<f64>() / spreads.len() as f64
        };
        let prev = *nav.last().unwrap_or(&1.0);
        let mut next = prev * (1.0 + r);
        if diag.wiped_out || next <= 0.0 {
            diag.wiped_out = true;
            next = 0.0;
        }
        returns.push(r);
        nav.push(next);
        years.push(s);
    }
    Ok(BacktestResult {
        horizon,
        cagr: cagr(&nav),
        sharpe: sharpe(&returns),
        years,
        nav,
        returns,
        cohorts,
        diagnostics: diag,
    })
}

/// Runs the long-short strategy: every entry year opens an equal-weighted
/// cohort held for `spec.horizon` years; each holding year's portfolio return
/// is the mean spread of the active cohorts.
pub fn run_long_short(spec: &StrategySpec, index: &Panel, universe: &Universe) -> Result<BacktestResult> {
    spec.validate()?;
    simulate(spec.horizon, spec.fraction, index, universe, &mut |a, y| {
        spec.signal.get(a, y)
    })
}

/// Standard-normal noise on every key of the strategy signal, seeded with
/// `spec.seed + i`.
pub fn noise_signal(spec: &StrategySpec, i: u64) -> BTreeMap<(AreaCode, Year), f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(i));
    spec.signal
        .iter()
        .map(|o| ((o.area_code, o.year), StandardNormal.sample(&mut rng)))
        .collect()
}

/// Portfolio `i` of the random baseline.
pub fn baseline_portfolio(spec: &StrategySpec, index: &Panel, universe: &Universe, i: u64) -> Result<BacktestResult> {
    spec.validate()?;
    let noise = noise_signal(spec, i);
    simulate(spec.horizon, spec.fraction, index, universe, &mut |a, y| {
        noise.get(&(a, y)).copied()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavBand {
    pub year: Year,
    /// Values at [`BAND_PERCENTILES`].
    pub percentiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub n_portfolios: usize,
    pub bands: Vec<NavBand>,
    /// Sorted ascending.
    pub terminal_navs: Vec<f64>,
    /// Sorted ascending.
    pub cagrs: Vec<f64>,
    /// Defined Sharpe ratios, sorted ascending.
    pub sharpes: Vec<f64>,
    pub median_terminal_nav: f64,
}

impl BaselineSummary {
    /// Percentile of a strategy CAGR within the baseline, in `[0, 100]`.
    pub fn cagr_percentile(&self, cagr: f64) -> f64 {
        stats::percentile_rank(&self.cagrs, cagr)
    }

    pub fn cagr_quantile(&self, q: f64) -> f64 {
        stats::quantile_sorted(&self.cagrs, q)
    }
}

/// Order-independent summary of baseline portfolios sharing one NAV axis.
pub fn summarize_baseline(results: &[BacktestResult]) -> Result<BaselineSummary> {
    let first = results
        .first()
        .ok_or_else(|| Error::InsufficientData("no baseline portfolios".into()))?;
    let years = first.years.clone();
    let mut bands = Vec::with_capacity(years.len());
    for (j, &year) in years.iter().enumerate() {
        let mut col = Vec::with_capacity(results.len());
        for r in results {
            let v = match r.years.get(j) {
                Some(&y) if y == year => r.nav[j],
                _ => {
                    return Err(Error::ShapeMismatch {
                        expected: alloc::format!("NAV axis starting {}", years[0]),
                        found: alloc::format!("{:?}", r.years.first()),
                    })
                }
            };
            col.push(v);
        }
        col.sort_by(f64::total_cmp);
        let mut percentiles = [0.0; 5];
        for (p, q) in percentiles.iter_mut().zip(BAND_PERCENTILES) {
            *p = stats::quantile_sorted(&col, q / 100.0);
        }
        bands.push(NavBand { year, percentiles });
    }
    let mut terminal_navs: Vec<f64> = results.iter().map(BacktestResult::terminal_nav).collect();
    let mut cagrs: Vec<f64> = results.iter().map(|r| r.cagr).collect();
    let mut sharpes: Vec<f64> = results.iter().filter_map(|r| r.sharpe).collect();
    terminal_navs.sort_by(f64::total_cmp);
    cagrs.sort_by(f64::total_cmp);
    sharpes.sort_by(f64::total_cmp);
    Ok(BaselineSummary {
        n_portfolios: results.len(),
        bands,
        median_terminal_nav: stats::quantile_sorted(&terminal_navs, 0.5),
        terminal_navs,
        cagrs,
        sharpes,
    })
}

/// `n_portfolios` noise-signal portfolios, run sequentially.
pub fn random_baseline(
    spec: &StrategySpec,
    index: &Panel,
    universe: &Universe,
    n_portfolios: usize,
) -> Result<BaselineSummary> {
    let runs = (0..n_portfolios as u64)
        .map(|i| baseline_portfolio(spec, index, universe, i))
        .collect::<Result<Vec<_>>>()?;
    summarize_baseline(&runs)
}
