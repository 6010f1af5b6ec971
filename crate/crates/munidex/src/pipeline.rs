//! Pipeline stages behind the command line. Each stage reads files, writes
//! fixed-name artifacts into the output directory and logs what it consumed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use munidex_core::backtest::{build_universe, run_long_short, StrategySpec, BAND_PERCENTILES};
use munidex_core::econometrics::{HedonicDiagnostics, PriceIndex};
use munidex_core::factors::{self, FactorPanel};
use munidex_core::forecaster::{
    build_windows, decile_report, risk_adjusted_target, train, Dataset, ModelConfig, TemporalSplit, WindowConfig,
};
use munidex_core::signals::{evaluate_factor_linear, strategy_signal};
use munidex_core::spatial::Centroid;
use munidex_core::synth::synth_generate;
use munidex_core::transactions::group_by_area;
use munidex_core::{AreaCode, Diagnostics, Panel, PanelKind, Year};
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::config::{ForecasterSection, RunConfig};
use crate::error::{Error, Result};
use crate::formats::{self, IndexRow};
use crate::manifest::InputLog;
use crate::mlit::{parse_transactions, write_transactions};
use crate::model_file::{read_model, write_model, ModelFile};
use crate::parallel::{self, PoolRunner};
use crate::ssds::{load_factor_csv, SchemaId};

pub const TRANSACTIONS_FILE: &str = "transactions.csv";
pub const CENTROIDS_FILE: &str = "centroids.csv";
pub const TRUE_INDEX_FILE: &str = "true_index.csv";
pub const INDEX_FILE: &str = "index.csv";
pub const MODEL_FILE: &str = "model.bin";

/// Shared state of one stage run.
pub struct Stage {
    pub out: PathBuf,
    pub config: RunConfig,
    pub pool: ThreadPool,
    pub inputs: InputLog,
    pub written: Vec<PathBuf>,
}

impl Stage {
    pub fn new(out: &Path, config: RunConfig, jobs: usize) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        Ok(Self {
            out: out.to_path_buf(),
            config,
            pool: parallel::pool(jobs)?,
            inputs: InputLog::default(),
            written: Vec::new(),
        })
    }

    fn input<'a>(&mut self, path: &'a Path) -> Result<&'a Path> {
        self.inputs.record(path)?;
        Ok(path)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.written.push(p.clone());
        p
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.output(name);
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let path = self.output(name);
        let mut w = csv::Writer::from_writer(formats::create(&path)?);
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    fn save_panel(&mut self, name: &str, panel: &Panel) -> Result<()> {
        let path = self.output(name);
        formats::save_panel(panel, &path)
    }
}

/// Observed-versus-reference deltas for headline metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub value: f64,
    pub reference: f64,
    /// `value - reference`.
    pub delta: f64,
}

pub fn load_reference(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(toml::from_str(&text)?)
}

pub fn compare(values: &[(&str, Option<f64>)], reference: &BTreeMap<String, f64>) -> BTreeMap<String, Comparison> {
    values
        .iter()
        .filter_map(|(k, v)| {
            let value = (*v)?;
            let r = *reference.get(*k)?;
            Some((
                (*k).to_string(),
                Comparison {
                    value,
                    reference: r,
                    delta: value - r,
                },
            ))
        })
        .collect()
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Serialize)]
struct SynthSummary {
    n_transactions: usize,
    n_areas: usize,
    first_year: Year,
    last_year: Year,
}

pub fn synth(stage: &mut Stage, seed: u64) -> Result<()> {
    let spec = stage.config.synth.spec(seed);
    let data = synth_generate(&spec)?;
    let path = stage.output(TRANSACTIONS_FILE);
    write_transactions(&data.transactions, formats::create(&path)?, &stage.config.columns)?;
    let panels = [
        (SchemaId::Population, &data.population),
        (SchemaId::InMigration, &data.in_migration),
        (SchemaId::OutMigration, &data.out_migration),
        (SchemaId::TaxableIncome, &data.taxable_income),
        (SchemaId::Taxpayers, &data.taxpayers),
        (SchemaId::DwellingStock, &data.dwelling_stock),
        (SchemaId::NewStarts, &data.new_starts),
    ];
    for (id, panel) in panels {
        stage.save_panel(&id.file_name(), panel)?;
    }
    let path = stage.output(CENTROIDS_FILE);
    formats::write_centroids(&data.centroids, formats::create(&path)?)?;
    let path = stage.output(TRUE_INDEX_FILE);
    formats::write_index(&formats::index_rows(&data.true_index), formats::create(&path)?)?;
    stage.write_json(
        "synth_summary.json",
        &SynthSummary {
            n_transactions: data.transactions.len(),
            n_areas: spec.n_areas,
            first_year: spec.first_year,
            last_year: spec.last_year(),
        },
    )
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Serialize)]
struct IngestReport {
    transactions: Option<crate::mlit::ParseDiagnostics>,
    panels: BTreeMap<String, usize>,
    warnings: Vec<String>,
}

/// Validates raw inputs and rewrites them in canonical form.
pub fn ingest(stage: &mut Stage, transactions: Option<&Path>, tables: Option<&Path>) -> Result<()> {
    let mut report = IngestReport {
        transactions: None,
        panels: BTreeMap::new(),
        warnings: Vec::new(),
    };
    if let Some(t) = transactions {
        let t = stage.input(t)?;
        let (records, diag) = parse_transactions(formats::open(t)?, &stage.config.columns)?;
        let path = stage.output(TRANSACTIONS_FILE);
        write_transactions(&records, formats::create(&path)?, &stage.config.columns)?;
        report.transactions = Some(diag);
    }
    if let Some(dir) = tables {
        for id in SchemaId::ALL {
            let p = dir.join(id.file_name());
            if !p.is_file() {
                report.warnings.push(format!("{id}: no table in {}", dir.display()));
                continue;
            }
            stage.input(&p)?;
            let loaded = load_factor_csv(formats::open(&p)?, id)?;
            report.panels.insert(id.to_string(), loaded.panel.len());
            report.warnings.extend(loaded.warnings);
            stage.save_panel(&id.file_name(), &loaded.panel)?;
        }
        let c = dir.join(CENTROIDS_FILE);
        if c.is_file() {
            stage.input(&c)?;
            let cents = formats::read_centroids(formats::open(&c)?)?;
            let path = stage.output(CENTROIDS_FILE);
            formats::write_centroids(&cents, formats::create(&path)?)?;
        }
    }
    if transactions.is_none() && tables.is_none() {
        return Err(Error::Invalid(
            "nothing to ingest: pass --transactions and/or --tables".into(),
        ));
    }
    stage.write_json("ingest_diagnostics.json", &report)
}

// ---------------------------------------------------------------- index

#[derive(Debug, Serialize)]
struct AreaReport {
    area_code: AreaCode,
    diagnostics: Option<HedonicDiagnostics>,
    skipped: Option<String>,
}

pub fn index(stage: &mut Stage, transactions: &Path) -> Result<()> {
    let t = stage.input(transactions)?;
    let (records, parse) = parse_transactions(formats::open(t)?, &stage.config.columns)?;
    let groups: Vec<(AreaCode, Vec<_>)> = group_by_area(&records).into_iter().collect();
    let built = parallel::hedonic_indices(&stage.pool, &groups, &stage.config.hedonic);
    let mut indices: Vec<PriceIndex> = Vec::new();
    let mut areas = Vec::new();
    for (area, res) in built {
        match res {
            Ok(h) => {
                indices.push(h.index);
                areas.push(AreaReport {
                    area_code: area,
                    diagnostics: Some(h.diagnostics),
                    skipped: None,
                });
            }
            Err(e) => areas.push(AreaReport {
                area_code: area,
                diagnostics: None,
                skipped: Some(e.to_string()),
            }),
        }
    }
    if indices.is_empty() {
        return Err(munidex_core::Error::InsufficientData("no municipality could be indexed".into()).into());
    }
    let path = stage.output(INDEX_FILE);
    formats::write_index(&formats::index_rows(&indices), formats::create(&path)?)?;
    stage.write_json(
        "index_diagnostics.json",
        &serde_json::json!({ "parse": parse, "areas": areas }),
    )
}

// ---------------------------------------------------------------- factor

/// Factors the command line can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorName {
    Migration,
    Income,
    Dwellings,
    #[value(name = "mean_reversion")]
    MeanReversion,
    Neighbors,
    Returns,
}

impl FactorName {
    pub fn as_str(self) -> &'static str {
        match self {
            FactorName::Migration => "migration",
            FactorName::Income => "income",
            FactorName::Dwellings => "dwellings",
            FactorName::MeanReversion => "mean_reversion",
            FactorName::Neighbors => "neighbors",
            FactorName::Returns => "returns",
        }
    }
}

/// Metadata written beside every factor CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMeta {
    pub name: String,
    pub kind: PanelKind,
    pub unit: String,
    pub provenance: String,
    pub diagnostics: Diagnostics,
}

/// Municipal statistics tables and centroids of one data directory.
pub struct Tables {
    pub panels: BTreeMap<SchemaId, Panel>,
    pub centroids: Option<Vec<Centroid>>,
}

impl Tables {
    pub fn get(&self, id: SchemaId) -> Result<&Panel> {
        self.panels
            .get(&id)
            .ok_or_else(|| Error::Invalid(format!("data directory lacks {}", id.file_name())))
    }

    pub fn centroids(&self) -> Result<&[Centroid]> {
        self.centroids
            .as_deref()
            .ok_or_else(|| Error::Invalid(format!("data directory lacks {CENTROIDS_FILE}")))
    }
}

pub fn load_tables(stage: &mut Stage, dir: &Path) -> Result<Tables> {
    let mut panels = BTreeMap::new();
    for id in SchemaId::ALL {
        let p = dir.join(id.file_name());
        if p.is_file() {
            stage.input(&p)?;
            panels.insert(id, load_factor_csv(formats::open(&p)?, id)?.panel);
        }
    }
    let c = dir.join(CENTROIDS_FILE);
    let centroids = if c.is_file() {
        stage.input(&c)?;
        Some(formats::read_centroids(formats::open(&c)?)?)
    } else {
        None
    };
    Ok(Tables { panels, centroids })
}

fn load_index(stage: &mut Stage, path: &Path) -> Result<Panel> {
    let p = stage.input(path)?;
    formats::load_index_panel(p)
}

pub fn compute_factor(
    name: FactorName,
    tables: &Tables,
    index: Option<&Panel>,
    neighbors: usize,
) -> Result<FactorPanel> {
    let need_index = || index.ok_or_else(|| Error::Invalid(format!("factor {} needs --index", name.as_str())));
    Ok(match name {
        FactorName::Migration => factors::net_migration_ratio(
            tables.get(SchemaId::InMigration)?,
            tables.get(SchemaId::OutMigration)?,
            tables.get(SchemaId::Population)?,
        ),
        FactorName::Income => factors::taxable_income_growth(tables.get(SchemaId::TaxableIncome)?)?,
        FactorName::Dwellings => {
            factors::new_dwellings_ratio(tables.get(SchemaId::NewStarts)?, tables.get(SchemaId::DwellingStock)?)?
        }
        FactorName::MeanReversion => factors::historical_return_signal(need_index()?)?,
        FactorName::Returns => factors::annual_return_factor(need_index()?)?,
        FactorName::Neighbors => factors::neighbor_return_factor(need_index()?, tables.centroids()?, neighbors)?,
    })
}

pub fn factor_file_name(name: FactorName) -> String {
    format!("factor_{}.csv", name.as_str())
}

pub fn factor(stage: &mut Stage, name: FactorName, data: &Path, index: Option<&Path>, neighbors: usize) -> Result<()> {
    let tables = load_tables(stage, data)?;
    let index = match index {
        Some(p) => Some(load_index(stage, p)?),
        None => None,
    };
    let f = compute_factor(name, &tables, index.as_ref(), neighbors)?;
    let file = factor_file_name(name);
    stage.save_panel(&file, &f.panel)?;
    let meta = FactorMeta {
        name: f.panel.name().into(),
        kind: f.kind(),
        unit: f.panel.unit().into(),
        provenance: f.provenance.clone(),
        diagnostics: f.diagnostics.clone(),
    };
    stage.write_json(&file.replace(".csv", ".json"), &meta)
}

/// Reads a factor CSV and the metadata file beside it.
pub fn load_factor_file(stage: &mut Stage, path: &Path) -> Result<FactorPanel> {
    let meta_path = path.with_extension("json");
    let meta: FactorMeta = if meta_path.is_file() {
        stage.input(&meta_path)?;
        serde_json::from_str(&std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?
    } else {
        return Err(Error::Invalid(format!(
            "{} has no metadata file {}",
            path.display(),
            meta_path.display()
        )));
    };
    stage.input(path)?;
    let panel = formats::load_panel(path, &meta.name, meta.kind)?.with_unit(meta.unit);
    Ok(FactorPanel {
        panel,
        provenance: meta.provenance,
        diagnostics: meta.diagnostics,
    })
}

// ---------------------------------------------------------------- eval-linear

pub fn eval_linear(stage: &mut Stage, factor: &Path, index: &Path, horizons: &[u32]) -> Result<()> {
    let f = load_factor_file(stage, factor)?;
    let idx = load_index(stage, index)?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for &h in horizons {
        let mut r = evaluate_factor_linear(&f, &idx, h)?;
        for p in &r.scatter {
            rows.push(vec![
                h.to_string(),
                p.area_code.to_string(),
                p.year.to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ]);
        }
        r.scatter.clear();
        reports.push(r);
    }
    stage.write_csv("scatter.csv", &["horizon", "area_code", "year", "x", "y"], rows)?;
    stage.write_json("eval_linear.json", &reports)
}

// ---------------------------------------------------------------- backtest

pub struct BacktestArgs<'a> {
    pub signal: &'a Path,
    pub index: &'a Path,
    pub population: &'a Path,
    pub horizon: u32,
    pub seed: u64,
    pub invert: bool,
    pub reference: Option<&'a Path>,
}

#[derive(Debug, Serialize)]
struct BacktestReport {
    signal: String,
    horizon: u32,
    invert: bool,
    signal_window: u32,
    universe_size: usize,
    fraction: f64,
    cagr: f64,
    sharpe: Option<f64>,
    terminal_nav: f64,
    baseline_portfolios: usize,
    baseline_median_terminal_nav: f64,
    baseline_cagr_p5: f64,
    baseline_cagr_p50: f64,
    baseline_cagr_p95: f64,
    /// Percentile of the strategy CAGR within the baseline.
    cagr_percentile: f64,
    short_universe_years: Vec<Year>,
    diagnostics: munidex_core::backtest::BacktestDiagnostics,
    reference: BTreeMap<String, Comparison>,
}

pub fn backtest(stage: &mut Stage, args: &BacktestArgs<'_>) -> Result<()> {
    let cfg = stage.config.backtest.clone();
    let factor = load_factor_file(stage, args.signal)?;
    let index = load_index(stage, args.index)?;
    let p = stage.input(args.population)?;
    let population = load_factor_csv(formats::open(p)?, SchemaId::Population)?.panel;
    let signal = if cfg.signal_window == 0 {
        let name = format!("{}_signal", factor.panel.name());
        if args.invert {
            factor.panel.map_values(&name, |v| -v).panel
        } else {
            factor.panel.clone().with_name(name)
        }
    } else {
        strategy_signal(&factor, cfg.signal_window, args.invert)?
    };
    let universe = build_universe(&population, cfg.universe_size, &index.years())?;
    let spec = StrategySpec {
        signal,
        horizon: args.horizon,
        universe_size: cfg.universe_size,
        fraction: cfg.fraction,
        seed: args.seed,
    };
    let result = run_long_short(&spec, &index, &universe)?;
    let base = parallel::random_baseline(&stage.pool, &spec, &index, &universe, cfg.baseline_portfolios)?;
    let reference = match args.reference {
        Some(r) => compare(
            &[("cagr", Some(result.cagr)), ("sharpe", result.sharpe)],
            &load_reference(stage.input(r)?)?,
        ),
        None => BTreeMap::new(),
    };
    let report = BacktestReport {
        signal: factor.panel.name().into(),
        horizon: args.horizon,
        invert: args.invert,
        signal_window: cfg.signal_window,
        universe_size: cfg.universe_size,
        fraction: cfg.fraction,
        cagr: result.cagr,
        sharpe: result.sharpe,
        terminal_nav: result.terminal_nav(),
        baseline_portfolios: base.n_portfolios,
        baseline_median_terminal_nav: base.median_terminal_nav,
        baseline_cagr_p5: base.cagr_quantile(0.05),
        baseline_cagr_p50: base.cagr_quantile(0.5),
        baseline_cagr_p95: base.cagr_quantile(0.95),
        cagr_percentile: base.cagr_percentile(result.cagr),
        short_universe_years: universe.short_years.clone(),
        diagnostics: result.diagnostics.clone(),
        reference,
    };
    stage.write_json("backtest.json", &report)?;
    let nav_rows = result.years.iter().enumerate().map(|(i, y)| {
        vec![
            y.to_string(),
            result.nav[i].to_string(),
            if i == 0 {
                String::new()
            } else {
                result.returns[i - 1].to_string()
            },
        ]
    });
    stage.write_csv("nav.csv", &["year", "nav", "return"], nav_rows.collect::<Vec<_>>())?;
    let mut header = vec!["year".to_string()];
    header.extend(BAND_PERCENTILES.iter().map(|p| format!("p{p}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let band_rows: Vec<Vec<String>> = base
        .bands
        .iter()
        .map(|b| {
            let mut r = vec![b.year.to_string()];
            r.extend(b.percentiles.iter().map(f64::to_string));
            r
        })
        .collect();
    stage.write_csv("baseline_bands.csv", &header, band_rows)
}

// ---------------------------------------------------------------- forecaster

/// Own feature names in column order.
pub const OWN_FEATURES: [&str; 6] = [
    "annual_return",
    "taxable_income_growth",
    "taxpayer_growth",
    "net_migration_ratio",
    "new_dwellings_ratio",
    "neighbor_return",
];

/// Feature panels in [`OWN_FEATURES`] order.
pub fn feature_panels(tables: &Tables, index: &Panel, neighbors: usize) -> Result<Vec<Panel>> {
    let taxpayer = tables.get(SchemaId::Taxpayers)?.pct_change(1)?.panel;
    let panels = vec![
        factors::annual_return_factor(index)?.panel,
        factors::taxable_income_growth(tables.get(SchemaId::TaxableIncome)?)?.panel,
        taxpayer,
        compute_factor(FactorName::Migration, tables, Some(index), neighbors)?.panel,
        compute_factor(FactorName::Dwellings, tables, Some(index), neighbors)?.panel,
        factors::neighbor_return_factor(index, tables.centroids()?, neighbors.max(1))?.panel,
    ];
    Ok(panels
        .into_iter()
        .zip(OWN_FEATURES)
        .map(|(p, n)| p.with_name(n))
        .collect())
}

pub fn window_config(cfg: &ForecasterSection) -> Result<WindowConfig> {
    let neighbor_features = cfg
        .neighbor_features
        .iter()
        .map(|n| {
            OWN_FEATURES
                .iter()
                .position(|f| f == n)
                .ok_or_else(|| Error::Invalid(format!("unknown neighbour feature `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowConfig {
        lookback: cfg.model.lookback,
        neighbors: cfg.neighbors,
        neighbor_features,
        allow_short_windows: cfg.allow_short_windows,
    })
}

/// Windows with raw risk-adjusted targets for every area and anchor.
pub fn forecaster_dataset(tables: &Tables, index: &Panel, cfg: &ForecasterSection) -> Result<Dataset> {
    let features = feature_panels(tables, index, cfg.neighbors)?;
    let targets = risk_adjusted_target(index, cfg.model.horizon, cfg.volatility_floor)?;
    let centroids: &[Centroid] = if cfg.neighbors > 0 { tables.centroids()? } else { &[] };
    Ok(build_windows(
        &features,
        &targets.panel,
        tables.get(SchemaId::Population)?,
        centroids,
        &window_config(cfg)?,
    )?)
}

#[derive(Debug, Serialize)]
struct SplitReport {
    split: TemporalSplit,
    last_train_anchor: Year,
    n_train: usize,
    n_test: usize,
    incomplete_windows: usize,
    unweighted_samples: usize,
    n_params: usize,
    columns: Vec<String>,
}

pub fn train_stage(stage: &mut Stage, data: &Path, index: &Path, seed: u64) -> Result<()> {
    let cfg = stage.config.forecaster.clone();
    let tables = load_tables(stage, data)?;
    let idx = load_index(stage, index)?;
    let ds = forecaster_dataset(&tables, &idx, &cfg)?;
    let split = TemporalSplit::latest(&ds, cfg.test_years, cfg.model.horizon)?;
    let (train_set, test_set) = split.apply(&ds)?;
    let trained = train(&train_set, Some(&test_set), &cfg.model, seed, &PoolRunner(&stage.pool))?;
    let path = stage.output(MODEL_FILE);
    write_model(
        &ModelFile {
            trained: trained.clone(),
            split: Some(split),
        },
        formats::create(&path)?,
    )?;
    let rows: Vec<Vec<String>> = trained
        .history
        .iter()
        .map(|h| {
            vec![
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.test_loss.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    stage.write_csv("history.csv", &["epoch", "train_loss", "test_loss"], rows)?;
    stage.write_json(
        "split.json",
        &SplitReport {
            split,
            last_train_anchor: split.last_train_anchor(),
            n_train: train_set.len(),
            n_test: test_set.len(),
            incomplete_windows: ds.incomplete,
            unweighted_samples: ds.unweighted,
            n_params: trained.model.n_params(),
            columns: trained.columns.clone(),
        },
    )
}

fn load_model_file(stage: &mut Stage, path: &Path) -> Result<ModelFile> {
    let p = stage.input(path)?;
    read_model(formats::open(p)?)
}

/// Samples the model is scored on: the stored test anchors unless `all`.
fn scoring_set(stage: &mut Stage, model: &ModelFile, data: &Path, index: &Path, all: bool) -> Result<Dataset> {
    let mut cfg = stage.config.forecaster.clone();
    cfg.model = ModelConfig {
        lookback: model.trained.model.config.lookback,
        horizon: model.trained.model.config.horizon,
        ..cfg.model
    };
    let tables = load_tables(stage, data)?;
    let idx = load_index(stage, index)?;
    let ds = forecaster_dataset(&tables, &idx, &cfg)?;
    if ds.columns != model.trained.columns {
        return Err(Error::Invalid(format!(
            "dataset columns {:?} do not match the model's {:?}",
            ds.columns, model.trained.columns
        )));
    }
    Ok(match (&model.split, all) {
        (Some(s), false) => ds.subset(|w| s.is_test(w.anchor)),
        _ => ds,
    })
}

pub fn evaluate(
    stage: &mut Stage,
    model: &Path,
    data: &Path,
    index: &Path,
    all: bool,
    reference: Option<&Path>,
) -> Result<()> {
    let mf = load_model_file(stage, model)?;
    let ds = scoring_set(stage, &mf, data, index, all)?;
    let preds = mf.trained.predict(&ds)?;
    let r2 = mf.trained.evaluate_r2(&ds)?;
    let loss = mf.trained.evaluate_loss(&ds)?;
    let reference = match reference {
        Some(r) => compare(&[("r_squared", Some(r2))], &load_reference(stage.input(r)?)?),
        None => BTreeMap::new(),
    };
    let anchors: std::collections::BTreeSet<Year> = ds.samples.iter().map(|s| s.anchor).collect();
    stage.write_json(
        "evaluation.json",
        &serde_json::json!({
            "n_samples": ds.len(),
            "anchors": anchors,
            "r_squared": r2,
            "weighted_loss": loss,
            "reference": reference,
        }),
    )?;
    let rows: Vec<Vec<String>> = preds
        .iter()
        .map(|p| {
            vec![
                p.area_code.to_string(),
                p.anchor.to_string(),
                p.prediction.to_string(),
                p.target.to_string(),
                p.weight.to_string(),
            ]
        })
        .collect();
    stage.write_csv(
        "predictions.csv",
        &["area_code", "anchor", "prediction", "target", "weight"],
        rows,
    )
}

pub fn report_deciles(
    stage: &mut Stage,
    model: &Path,
    data: &Path,
    index: &Path,
    seed: u64,
    n_samples: usize,
    all: bool,
) -> Result<()> {
    let mf = load_model_file(stage, model)?;
    let ds = scoring_set(stage, &mf, data, index, all)?;
    let preds = mf.trained.predict(&ds)?;
    let traj = decile_report(&ds, &preds, n_samples, seed)?;
    let mut rows = Vec::new();
    for t in &traj {
        for (year, v) in &t.points {
            rows.push(vec![
                format!("{:?}", t.decile).to_lowercase(),
                t.area_code.to_string(),
                t.anchor.to_string(),
                t.prediction.to_string(),
                t.feature.clone(),
                year.to_string(),
                v.to_string(),
            ]);
        }
    }
    stage.write_csv(
        "deciles.csv",
        &[
            "decile",
            "area_code",
            "anchor",
            "prediction",
            "feature",
            "year",
            "value",
        ],
        rows,
    )
}

/// Index rows read from disk, for callers that need reported YoY values.
pub fn read_index_rows(path: &Path) -> Result<Vec<IndexRow>> {
    formats::read_index(formats::open(path)?)
}
