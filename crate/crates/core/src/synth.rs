//! Synthetic municipalities with known price dynamics, factor panels and
//! transactions, for recovery tests and end-to-end runs.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::area::{AreaCode, Year, MIN_PANEL_YEAR};
use crate::econometrics::PriceIndex;
use crate::error::{invalid, Result};
use crate::panel::{Panel, PanelKind};
use crate::spatial::Centroid;
use crate::transactions::{AttributeValue, TransactionRecord, FIRST_TRANSACTION_YEAR};

/// First synthetic area code.
pub const SYNTH_AREA_BASE: u32 = 50_001;
/// Years of latent history simulated before the first index year.
pub const BURN_IN_YEARS: i32 = 5;
const SURVEY_PERIOD: i32 = 5;
const SURVEY_PHASE: i32 = 3;

pub const FLOOR_PLANS: [&str; 4] = ["1K", "1LDK", "2LDK", "3LDK"];
pub const STRUCTURES: [&str; 3] = ["RC", "SRC", "Wood"];

/// Log-price effects of the generated attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEffects {
    pub building_age: f64,
    pub time_to_station: f64,
    pub breadth: f64,
    /// One effect per entry of [`FLOOR_PLANS`].
    pub floor_plan: [f64; 4],
    pub structure: [f64; 3],
    pub use_residential: f64,
    pub use_office: f64,
}

impl Default for AttributeEffects {
    fn default() -> Self {
        Self {
            building_age: -0.01,
            time_to_station: -0.005,
            breadth: 0.01,
            floor_plan: [0.0, 0.05, 0.10, 0.15],
            structure: [0.0, 0.04, -0.08],
            use_residential: 0.03,
            use_office: -0.02,
        }
    }
}

/// Loadings of next-year log price growth on current factor values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorLoadings {
    pub migration: f64,
    pub income_growth: f64,
    /// Applied to the new-dwellings ratio in excess of its long-run mean.
    pub dwellings: f64,
    /// Applied to the trailing three-year log price change.
    pub reversal: f64,
    pub idiosyncratic_sd: f64,
    pub macro_mean: f64,
    pub macro_sd: f64,
}

impl Default for FactorLoadings {
    fn default() -> Self {
        Self {
            migration: 3.0,
            income_growth: 0.5,
            dwellings: 1.0,
            reversal: -0.2,
            idiosyncratic_sd: 0.02,
            macro_mean: 0.01,
            macro_sd: 0.015,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_areas: usize,
    pub first_year: Year,
    pub n_years: usize,
    /// Transactions per area and year.
    pub intensity: usize,
    /// Standard deviation of the log unit-price disturbance.
    pub sigma: f64,
    pub seed: u64,
    /// Shared log time effects overriding the simulated dynamics, one per year.
    pub gamma: Option<Vec<f64>>,
    pub effects: AttributeEffects,
    pub loadings: FactorLoadings,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_areas: 20,
            first_year: 2006,
            n_years: 15,
            intensity: 500,
            sigma: 0.1,
            seed: 0,
            gamma: None,
            effects: AttributeEffects::default(),
            loadings: FactorLoadings::default(),
        }
    }
}

impl SynthSpec {
    pub fn last_year(&self) -> Year {
        self.first_year + self.n_years as Year - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_areas == 0 || self.n_areas as u32 > 99_999 - SYNTH_AREA_BASE {
            return Err(invalid("n_areas", "must lie in 1..=49998"));
        }
        if self.n_years < 2 {
            return Err(invalid("n_years", "at least two years are required"));
        }
        if self.first_year < FIRST_TRANSACTION_YEAR || self.first_year - BURN_IN_YEARS < MIN_PANEL_YEAR {
            return Err(invalid("first_year", "precedes the transaction record"));
        }
        if self.last_year() > crate::area::MAX_PANEL_YEAR {
            return Err(invalid("n_years", "runs past the supported year range"));
        }
        if self.intensity == 0 {
            return Err(invalid("intensity", "must be at least 1"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be finite and non-negative"));
        }
        if let Some(g) = &self.gamma {
            if g.len() != self.n_years || g.iter().any(|v| !v.is_finite()) {
                return Err(invalid("gamma", "needs one finite value per year"));
            }
        }
        Ok(())
    }
}

/// Ground truth and observable data of one synthetic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub transactions: Vec<TransactionRecord>,
    pub population: Panel,
    pub in_migration: Panel,
    pub out_migration: Panel,
    pub taxable_income: Panel,
    pub taxpayers: Panel,
    /// Observed only in survey years.
    pub dwelling_stock: Panel,
    pub new_starts: Panel,
    pub centroids: Vec<Centroid>,
    /// Log time effects per area over the index years.
    pub log_levels: Panel,
    pub true_index: Vec<PriceIndex>,
    pub true_index_panel: Panel,
    /// Forward returns of the true index for horizons 1 to 4.
    pub forward_returns: Vec<Panel>,
}

struct AreaPath {
    code: AreaCode,
    /// Log time effect per year from the burn-in start.
    gamma: Vec<f64>,
    population: Vec<f64>,
    migration: Vec<f64>,
    per_capita_income: Vec<f64>,
    dwelling_rate: Vec<f64>,
    stock: Vec<f64>,
    intercept: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn simulate_paths(spec: &SynthSpec) -> Vec<AreaPath> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let span = spec.n_years + BURN_IN_YEARS as usize;
    let load = &spec.loadings;
    let macro_shocks: Vec<f64> = (0..span)
        .map(|_| load.macro_mean + load.macro_sd * normal(&mut rng))
        .collect();
    (0..spec.n_areas)
        .map(|i| {
            let code = AreaCode::new(SYNTH_AREA_BASE + i as u32).expect("validated area count");
            let mut pop = libm::exp(libm::log(60_000.0) + 0.8 * normal(&mut rng)).max(2_000.0);
            let mig_mean = 0.002 * normal(&mut rng);
            let mut mig = mig_mean;
            let mut income = 3_000.0 * libm::exp(0.2 * normal(&mut rng));
            let mut inc_g = 0.01;
            let dw_mean = 0.01 + 0.002 * normal(&mut rng);
            let mut dw = dw_mean;
            let mut stock = pop * 0.45;
            let mut path = AreaPath {
                code,
                gamma: Vec::with_capacity(span),
                population: Vec::with_capacity(span),
                migration: Vec::with_capacity(span),
                per_capita_income: Vec::with_capacity(span),
                dwelling_rate: Vec::with_capacity(span),
                stock: Vec::with_capacity(span),
                intercept: libm::log(300_000.0) + 0.5 * (rng.random::<f64>() - 0.5),
            };
            let mut gamma = 0.0;
            for t in 0..span {
                if t > 0 {
                    let g = &path.gamma;
                    let past = if t >= 4 { g[t - 1] - g[t - 4] } else { 0.0 };
                    let step = macro_shocks[t]
                        + load.migration * path.migration[t - 1]
                        + load.income_growth
                            * (path.per_capita_income[t - 1] / path.per_capita_income[t.saturating_sub(2)] - 1.0)
                        + load.dwellings * (path.dwelling_rate[t - 1] - 0.01)
                        + load.reversal * past
                        + load.idiosyncratic_sd * normal(&mut rng);
                    gamma += step;
                    mig = mig_mean + 0.7 * (mig - mig_mean) + 0.002 * normal(&mut rng);
                    inc_g = 0.01 + 0.6 * (inc_g - 0.01) + 0.015 * normal(&mut rng);
                    income *= 1.0 + inc_g;
                    dw = dw_mean + 0.7 * (dw - dw_mean) + 0.002 * normal(&mut rng);
                    pop *= 1.0 + mig - 0.002;
                    stock *= 1.0 + path.dwelling_rate[t - 1] - 0.005;
                }
                path.gamma.push(gamma);
                path.population.push(pop);
                path.migration.push(mig);
                path.per_capita_income.push(income);
                path.dwelling_rate.push(dw.max(0.0));
                path.stock.push(stock);
            }
            path
        })
        .collect()
}

fn push(panel: &mut Panel, area: AreaCode, year: Year, v: f64) {
    panel
        .insert(area, year, v)
        .expect("generated keys are unique and finite");
}

fn pick<'a>(rng: &mut ChaCha8Rng, levels: &[&'a str]) -> (usize, &'a str) {
    let i = rng.random_range(0..levels.len());
    (i, levels[i])
}

fn draw_transaction(
    rng: &mut ChaCha8Rng,
    noise: &Normal<f64>,
    effects: &AttributeEffects,
    area: AreaCode,
    year: Year,
    log_level: f64,
) -> TransactionRecord {
    let age = rng.random_range(0.0..40.0);
    let station = rng.random_range(1.0..30.0);
    let breadth = rng.random_range(4.0..12.0);
    let (plan_i, plan) = pick(rng, &FLOOR_PLANS);
    let (structure_i, structure) = pick(rng, &STRUCTURES);
    let u: f64 = rng.random();
    let (uses, use_effect): (Vec<String>, f64) = if u < 0.15 {
        (vec!["Residential".into()], effects.use_residential)
    } else if u < 0.3 {
        (vec!["Office".into()], effects.use_office)
    } else {
        (
            vec!["Residential".into(), "Office".into()],
            effects.use_residential + effects.use_office,
        )
    };
    let log_unit = log_level
        + effects.building_age * age
        + effects.time_to_station * station
        + effects.breadth * breadth
        + effects.floor_plan[plan_i]
        + effects.structure[structure_i]
        + use_effect
        + noise.sample(rng);
    let unit_area = rng.random_range(20.0..200.0);
    let attributes = vec![
        ("BuildingAge".into(), AttributeValue::Numeric(age)),
        ("TimeToNearestStation".into(), AttributeValue::Numeric(station)),
        ("Breadth".into(), AttributeValue::Numeric(breadth)),
        ("FloorPlan".into(), AttributeValue::Category(plan.into())),
        ("Structure".into(), AttributeValue::Category(structure.into())),
        ("Use".into(), AttributeValue::Categories(uses)),
    ];
    TransactionRecord::new(area, year, libm::exp(log_unit) * unit_area, unit_area, attributes)
        .expect("generated transactions are valid")
}

/// Simulates latent area dynamics, observable factor panels and, unless
/// `spec.intensity` transactions per area-year are not wanted, transactions.
///
/// Output is a pure function of `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    synth_impl(spec, true)
}

/// As [`synth_generate`] without drawing transactions; every other field is
/// identical.
pub fn synth_truth(spec: &SynthSpec) -> Result<SynthData> {
    synth_impl(spec, false)
}

fn synth_impl(spec: &SynthSpec, with_transactions: bool) -> Result<SynthData> {
    spec.validate()?;
    let paths = simulate_paths(spec);
    let start = spec.first_year - BURN_IN_YEARS;
    let burn = BURN_IN_YEARS as usize;

    let mut population = Panel::new("population", "persons", PanelKind::Level);
    let mut in_migration = Panel::new("in_migration", "persons", PanelKind::Level);
    let mut out_migration = Panel::new("out_migration", "persons", PanelKind::Level);
    let mut taxable_income = Panel::new("taxable_income", "thousand JPY", PanelKind::Level);
    let mut taxpayers = Panel::new("taxpayers", "persons", PanelKind::Level);
    let mut dwelling_stock = Panel::new("dwelling_stock", "dwellings", PanelKind::Level);
    let mut new_starts = Panel::new("new_starts", "dwellings", PanelKind::Level);
    let mut log_levels = Panel::new("log_level", "log", PanelKind::Level);
    let mut true_index = Vec::with_capacity(paths.len());

    for p in &paths {
        for (t, year) in (start..=spec.last_year()).enumerate() {
            let pop = libm::round(p.population[t]);
            let flow = |share: f64| libm::round(pop * share);
            push(&mut population, p.code, year, pop);
            push(&mut in_migration, p.code, year, flow(0.04 + p.migration[t] / 2.0));
            push(&mut out_migration, p.code, year, flow(0.04 - p.migration[t] / 2.0));
            let payers = libm::round(pop * 0.45);
            push(&mut taxpayers, p.code, year, payers);
            push(
                &mut taxable_income,
                p.code,
                year,
                libm::round(payers * p.per_capita_income[t]),
            );
            if (year - SURVEY_PHASE).rem_euclid(SURVEY_PERIOD) == 0 {
                push(&mut dwelling_stock, p.code, year, libm::round(p.stock[t]));
            }
            push(
                &mut new_starts,
                p.code,
                year,
                libm::round(p.stock[t] * p.dwelling_rate[t]),
            );
        }
        let gammas: Vec<(Year, f64)> = (0..spec.n_years)
            .map(|i| {
                let g = match &spec.gamma {
                    Some(g) => g[i],
                    None => p.gamma[burn + i],
                };
                (spec.first_year + i as Year, g)
            })
            .collect();
        for &(y, g) in &gammas {
            push(&mut log_levels, p.code, y, g);
        }
        let levels: Vec<(Year, f64)> = gammas.iter().map(|&(y, g)| (y, libm::exp(g))).collect();
        true_index.push(PriceIndex::from_levels(p.code, spec.first_year + 1, &levels)?);
    }

    let mut centroid_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    centroid_rng.set_stream(3);
    let centroids = paths
        .iter()
        .map(|p| Centroid {
            area_code: p.code,
            x_km: centroid_rng.random_range(0.0..300.0),
            y_km: centroid_rng.random_range(0.0..300.0),
        })
        .collect();

    let mut transactions = Vec::new();
    if with_transactions {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(2);
        let noise = Normal::new(0.0, spec.sigma).map_err(|_| invalid("sigma", "not a valid standard deviation"))?;
        transactions.reserve(spec.n_areas * spec.n_years * spec.intensity);
        for p in &paths {
            for y in spec.first_year..=spec.last_year() {
                let g = log_levels.get(p.code, y).unwrap_or(0.0);
                for _ in 0..spec.intensity {
                    transactions.push(draw_transaction(
                        &mut rng,
                        &noise,
                        &spec.effects,
                        p.code,
                        y,
                        p.intercept + g,
                    ));
                }
            }
        }
    }

    let true_index_panel = crate::econometrics::indices_to_panel(&true_index)?;
    let forward_returns = (1..=4)
        .map(|k| true_index_panel.forward_return(k).map(|d| d.panel))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthData {
        transactions,
        population,
        in_migration,
        out_migration,
        taxable_income,
        taxpayers,
        dwelling_stock,
        new_starts,
        centroids,
        log_levels,
        true_index,
        true_index_panel,
        forward_returns,
    })
}

/// A market of i.i.d. annual returns with a common mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub n_areas: usize,
    pub first_year: Year,
    pub n_years: usize,
    pub drift: f64,
    pub volatility: f64,
    pub seed: u64,
}

impl Default for MarketSpec {
    fn default() -> Self {
        Self {
            n_areas: 600,
            first_year: 2006,
            n_years: 15,
            drift: 0.0,
            volatility: 0.05,
            seed: 0,
        }
    }
}

/// Index and population panels of a random-walk market. Populations are
/// constant and distinct so universe ranking is stable.
pub fn synth_market(spec: &MarketSpec) -> Result<(Panel, Panel)> {
    if spec.n_areas == 0 || spec.n_areas as u32 > 99_999 - SYNTH_AREA_BASE || spec.n_years < 2 {
        return Err(invalid("market", "needs at least one area and two years"));
    }
    if !(spec.volatility >= 0.0 && spec.volatility.is_finite()) {
        return Err(invalid("volatility", "must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut index = Panel::new("price_index", "index", PanelKind::Level);
    let mut population = Panel::new("population", "persons", PanelKind::Level);
    for i in 0..spec.n_areas {
        let code = AreaCode::new(SYNTH_AREA_BASE + i as u32).expect("validated area count");
        let mut level = 100.0;
        for k in 0..spec.n_years {
            let year = spec.first_year + k as Year;
            if k > 0 {
                level *= (1.0 + spec.drift + spec.volatility * normal(&mut rng)).max(0.01);
            }
            index.insert(code, year, level)?;
            population.insert(code, year, (10_000 + 100 * (spec.n_areas - i)) as f64)?;
        }
    }
    Ok((index, population))
}
