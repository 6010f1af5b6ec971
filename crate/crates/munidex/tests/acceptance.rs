//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test -p munidex --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use munidex::config::ForecasterSection;
use munidex::formats::read_index;
use munidex::manifest::{read_manifest, MANIFEST_FILE};
use munidex::parallel::{self, PoolRunner};
use munidex::pipeline::{compare, forecaster_dataset, Tables};
use munidex::ssds::SchemaId;
use munidex_core::backtest::{build_universe, run_long_short, StrategySpec, Universe};
use munidex_core::econometrics::{ols_fit, pca_reduce, HedonicConfig, PriceIndex};
use munidex_core::forecaster::{
    train, Dataset, ModelConfig, TargetNormalizer, TemporalSplit, Transformer, TARGET_HORIZON,
};
use munidex_core::signals::evaluate_factor_linear;
use munidex_core::synth::{synth_generate, synth_market, synth_truth, MarketSpec, SynthData, SynthSpec};
use munidex_core::transactions::group_by_area;
use munidex_core::{factors, AreaCode, Panel, PanelKind, Year};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn FnOnce() -> Verdict + 'a>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let pool = parallel::pool(0).expect("thread pool");
    let criteria: Vec<(&str, Check)> = vec![
        ("index recovery", Box::new(|| index_recovery(&pool).into())),
        ("ols/pca oracle equivalence", Box::new(|| ols_pca_oracle().into())),
        ("index table fixture", Box::new(|| index_fixture().into())),
        ("backtest invariants", Box::new(|| backtest_invariants(&pool).into())),
        ("planted signal separation", Box::new(|| planted_signal(&pool).into())),
        ("forecaster property suite", Box::new(|| forecaster_suite(&pool).into())),
        ("licensed-data headline comparison", Box::new(licensed_data)),
        ("end-to-end determinism", Box::new(|| determinism().into())),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Verdict::Pass(d) => println!("PASS {} {name} ({secs:.1}s): {d}", i + 1),
            Verdict::Fail(d) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1}s): {d}", i + 1);
            }
            Verdict::Conditional(d) => println!("COND {} {name} ({secs:.1}s): {d}", i + 1),
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

enum Verdict {
    Pass(String),
    Fail(String),
    /// Not evaluable without external inputs; never counts as a pass.
    Conditional(String),
}

impl From<Outcome> for Verdict {
    fn from(o: Outcome) -> Self {
        match o {
            Ok(d) => Verdict::Pass(d),
            Err(d) => Verdict::Fail(d),
        }
    }
}

// ---------------------------------------------------------------- 1

const RECOVERY_TOLERANCE: f64 = 0.02;
const NOISELESS_TOLERANCE: f64 = 1e-6;
const RECOVERY_TIME_LIMIT: Duration = Duration::from_secs(120);

fn worst_recovery_error(pool: &rayon::ThreadPool, spec: &SynthSpec) -> Result<f64, String> {
    let data = synth_generate(spec).map_err(|e| e.to_string())?;
    let groups: Vec<_> = group_by_area(&data.transactions).into_iter().collect();
    let built = parallel::hedonic_indices(pool, &groups, &HedonicConfig::default());
    ensure!(
        built.len() == data.true_index.len(),
        "{} areas indexed of {}",
        built.len(),
        data.true_index.len()
    );
    let mut worst: f64 = 0.0;
    for ((area, est), truth) in built.into_iter().zip(&data.true_index) {
        ensure!(area == truth.area_code, "area order differs at {area}");
        let est = est.map_err(|e| format!("{area}: {e}"))?;
        for p in &truth.points {
            let e = est
                .index
                .value(p.year)
                .ok_or_else(|| format!("{area} lacks {}", p.year))?;
            worst = worst.max(((e - p.value) / p.value).abs());
        }
    }
    Ok(worst)
}

fn index_recovery(pool: &rayon::ThreadPool) -> Outcome {
    let started = Instant::now();
    let spec = SynthSpec {
        n_areas: 20,
        n_years: 15,
        intensity: 500,
        sigma: 0.1,
        seed: 1,
        ..SynthSpec::default()
    };
    let noisy = worst_recovery_error(pool, &spec)?;
    let elapsed = started.elapsed();
    ensure!(
        noisy <= RECOVERY_TOLERANCE,
        "max relative error {noisy:.4} > {RECOVERY_TOLERANCE}"
    );
    ensure!(elapsed < RECOVERY_TIME_LIMIT, "took {elapsed:?}");
    let clean = worst_recovery_error(pool, &SynthSpec { sigma: 0.0, ..spec })?;
    ensure!(clean <= NOISELESS_TOLERANCE, "noiseless max relative error {clean:e}");
    Ok(format!(
        "max rel. error {noisy:.4} (sigma 0.1, {:.1}s), {clean:.1e} (sigma 0)",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 2

const ORACLE_INSTANCES: usize = 200;
const ORACLE_TOLERANCE: f64 = 1e-8;
const VARIANCE_TARGET: f64 = 0.95;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `(XᵀX)⁻¹Xᵀy` with Gauss-Jordan inversion.
fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; 2 * p]; p];
    for (i, row) in a.iter_mut().enumerate() {
        for j in 0..p {
            row[j] = x.iter().map(|r| r[i] * r[j]).sum();
        }
        row[p + i] = 1.0;
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-12 {
            return None;
        }
        a.swap(c, piv);
        let d = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..p {
            if r != c {
                let f = a[r][c];
                let pivot_row = a[c].clone();
                a[r].iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    let xty: Vec<f64> = (0..p).map(|j| x.iter().zip(y).map(|(r, yi)| r[j] * yi).sum()).collect();
    Some((0..p).map(|i| (0..p).map(|j| a[i][p + j] * xty[j]).sum()).collect())
}

fn standardized(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let latent = 1 + rng.random_range(0..cols);
    let mix: Vec<f64> = (0..latent * cols).map(|_| normal(rng)).collect();
    let mut m = DMatrix::from_fn(rows, cols, |_, _| 0.0);
    for i in 0..rows {
        let z: Vec<f64> = (0..latent).map(|_| normal(rng)).collect();
        for j in 0..cols {
            m[(i, j)] = (0..latent).map(|l| z[l] * mix[l * cols + j]).sum::<f64>() + 0.05 * normal(rng);
        }
    }
    for j in 0..cols {
        let mean = m.column(j).mean();
        let sd = (m.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (rows - 1) as f64).sqrt();
        for i in 0..rows {
            m[(i, j)] = (m[(i, j)] - mean) / sd;
        }
    }
    m
}

fn ols_pca_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_beta: f64 = 0.0;
    let mut worst_ortho: f64 = 0.0;
    for inst in 0..ORACLE_INSTANCES {
        let p = rng.random_range(1..7);
        let n = rng.random_range(p + 3..80);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| std::iter::once(1.0).chain((0..p).map(|_| normal(&mut rng))).collect())
            .collect();
        let beta: Vec<f64> = (0..=p).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.3 * normal(&mut rng))
            .collect();
        let x = DMatrix::from_fn(n, p + 1, |i, j| rows[i][j]);
        let fit = ols_fit(&x, &y, &[]).map_err(|e| format!("instance {inst}: {e}"))?;
        let oracle = normal_equations(&rows, &y).ok_or_else(|| format!("instance {inst}: oracle singular"))?;
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            worst_beta = worst_beta.max((a - b).abs());
        }
        ensure!(
            worst_beta <= ORACLE_TOLERANCE,
            "instance {inst}: coefficient gap {worst_beta:e}"
        );

        let d = rng.random_range(2..9);
        let m = rng.random_range(5..60);
        let xs = standardized(m, d, &mut rng);
        let (model, reduced) = pca_reduce(&xs, VARIANCE_TARGET).map_err(|e| format!("instance {inst}: {e}"))?;
        let k = model.n_components;
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = model
                    .component(a)
                    .iter()
                    .zip(model.component(b))
                    .map(|(u, v)| u * v)
                    .sum();
                worst_ortho = worst_ortho.max((dot - if a == b { 1.0 } else { 0.0 }).abs());
            }
        }
        ensure!(
            worst_ortho <= ORACLE_TOLERANCE,
            "instance {inst}: orthonormality gap {worst_ortho:e}"
        );
        let (mut err, mut total) = (0.0, 0.0);
        for i in 0..m {
            for j in 0..d {
                let c = xs[(i, j)] - model.mean[j];
                let back: f64 = (0..k).map(|q| reduced[(i, q)] * model.component(q)[j]).sum();
                err += (c - back).powi(2);
                total += c * c;
            }
        }
        ensure!(
            err / total <= 1.0 - VARIANCE_TARGET + 1e-9,
            "instance {inst}: reconstruction loses {:.4}",
            err / total
        );
        ensure!(
            model.retained_ratio() >= VARIANCE_TARGET,
            "instance {inst}: retained {}",
            model.retained_ratio()
        );
        let before: f64 = model.explained_variance_ratio[..k - 1].iter().sum();
        ensure!(
            before < VARIANCE_TARGET,
            "instance {inst}: {k} components are not minimal"
        );
    }
    Ok(format!(
        "{ORACLE_INSTANCES} instances, max coefficient gap {worst_beta:.1e}, max orthonormality gap {worst_ortho:.1e}"
    ))
}

// ---------------------------------------------------------------- 3

const REPORTED_GROWTH_TOLERANCE: f64 = 0.005;

fn index_fixture() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/minato_index.csv");
    let rows = read_index(std::fs::File::open(&path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    munidex::formats::write_index(&rows, &mut buf).map_err(|e| e.to_string())?;
    ensure!(
        read_index(&buf[..]).map_err(|e| e.to_string())? == rows,
        "round trip changed rows"
    );
    let levels: Vec<(Year, f64)> = rows.iter().map(|r| (r.year, r.index)).collect();
    let idx = PriceIndex::from_levels(rows[0].area_code, rows[0].year, &levels).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (r, p) in rows.iter().zip(&idx.points) {
        if let (Some(reported), Some(recomputed)) = (r.yoy, p.yoy) {
            worst = worst.max((reported - recomputed).abs());
            checked += 1;
        }
    }
    ensure!(checked == 10, "{checked} comparable years");
    ensure!(worst <= REPORTED_GROWTH_TOLERANCE, "growth gap {worst:.4}");
    Ok(format!(
        "{} rows round-trip, {checked} growth values within {worst:.4}",
        rows.len()
    ))
}

// ---------------------------------------------------------------- 4

const SHIFT_TOLERANCE: f64 = 1e-12;
const BASELINE_PORTFOLIOS: usize = 1000;
const BASELINE_MEDIAN_BAND: f64 = 0.02;
const BASELINE_TIME_LIMIT: Duration = Duration::from_secs(60);

fn returns_of(index: &Panel) -> BTreeMap<AreaCode, Vec<(Year, f64)>> {
    index
        .areas()
        .into_iter()
        .map(|a| {
            let s: Vec<(Year, f64)> = index.series(a).collect();
            (a, s.windows(2).map(|w| (w[1].0, w[1].1 / w[0].1 - 1.0)).collect())
        })
        .collect()
}

/// Index whose every annual return is shifted by `c`.
fn shifted_index(index: &Panel, c: f64) -> Panel {
    let mut out = Panel::new("price_index", "index", PanelKind::Level);
    for (area, rets) in returns_of(index) {
        let (y0, mut level) = index.series(area).next().expect("non-empty series");
        out.insert(area, y0, level).expect("fresh key");
        for (y, r) in rets {
            level *= 1.0 + r + c;
            out.insert(area, y, level).expect("fresh key");
        }
    }
    out
}

fn noise_panel(index: &Panel, seed: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Panel::from_triples(
        "noise",
        PanelKind::Level,
        index
            .iter()
            .map(|o| (o.area_code, o.year, normal(&mut rng)))
            .collect::<Vec<_>>(),
    )
    .expect("unique keys")
}

fn backtest_invariants(pool: &rayon::ThreadPool) -> Outcome {
    let mut worst_shift: f64 = 0.0;
    for trial in 0..20u64 {
        let (index, _) = synth_market(&MarketSpec {
            n_areas: 60,
            n_years: 10,
            drift: 0.01,
            volatility: 0.03,
            seed: trial,
            ..MarketSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let h = 1 + (trial % 4) as u32;
        let c = 0.02 * (trial as f64 - 10.0) / 10.0;
        let moved = shifted_index(&index, c);
        let spec = StrategySpec::new(noise_panel(&index, 100 + trial), h);
        let base = run_long_short(&spec, &index, &Universe::all(&index)).map_err(|e| e.to_string())?;
        let shift = run_long_short(&spec, &moved, &Universe::all(&moved)).map_err(|e| e.to_string())?;
        for (a, b) in base.returns.iter().zip(&shift.returns) {
            worst_shift = worst_shift.max((a - b).abs());
        }
        let warped = spec.signal.map_values("warped", |v| v.exp() + v * v * v).panel;
        let mono = run_long_short(
            &StrategySpec {
                signal: warped,
                ..spec.clone()
            },
            &index,
            &Universe::all(&index),
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            base.nav.iter().zip(&mono.nav).all(|(a, b)| a.to_bits() == b.to_bits()),
            "trial {trial}: monotone transform changed the NAV"
        );
    }
    ensure!(
        worst_shift <= SHIFT_TOLERANCE,
        "constant shift moved returns by {worst_shift:e}"
    );

    let (index, population) = synth_market(&MarketSpec {
        seed: 77,
        ..MarketSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let universe = build_universe(&population, 500, &index.years()).map_err(|e| e.to_string())?;
    let mut medians = Vec::new();
    for h in 1..=4 {
        let started = Instant::now();
        let spec = StrategySpec {
            seed: 5 + u64::from(h),
            ..StrategySpec::new(noise_panel(&index, 9), h)
        };
        let base = parallel::random_baseline(pool, &spec, &index, &universe, BASELINE_PORTFOLIOS)
            .map_err(|e| e.to_string())?;
        let elapsed = started.elapsed();
        ensure!(elapsed < BASELINE_TIME_LIMIT, "horizon {h}: baseline took {elapsed:?}");
        ensure!(
            (base.median_terminal_nav - 1.0).abs() <= BASELINE_MEDIAN_BAND,
            "horizon {h}: median terminal NAV {:.4}",
            base.median_terminal_nav
        );
        medians.push(format!("{:.4}", base.median_terminal_nav));
    }
    Ok(format!(
        "shift gap {worst_shift:.1e}, monotone NAV bit-identical, baseline medians {} (h=1..4)",
        medians.join("/")
    ))
}

// ---------------------------------------------------------------- 5

fn planted_signal(pool: &rayon::ThreadPool) -> Outcome {
    let (index, population) = synth_market(&MarketSpec {
        seed: 31,
        ..MarketSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let universe = build_universe(&population, 500, &index.years()).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for h in 1..=4 {
        let signal = index.forward_return(h).map_err(|e| e.to_string())?.panel;
        let spec = StrategySpec {
            seed: 40 + u64::from(h),
            ..StrategySpec::new(signal, h)
        };
        let result = run_long_short(&spec, &index, &universe).map_err(|e| e.to_string())?;
        let base = parallel::random_baseline(pool, &spec, &index, &universe, BASELINE_PORTFOLIOS)
            .map_err(|e| e.to_string())?;
        let p95 = base.cagr_quantile(0.95);
        ensure!(
            result.cagr > p95,
            "horizon {h}: CAGR {:.4} <= baseline p95 {p95:.4}",
            result.cagr
        );
        lines.push(format!("h{h} {:.3}>{:.3}", result.cagr, p95));
    }
    Ok(lines.join(", "))
}

// ---------------------------------------------------------------- 6

const GRADIENT_TOLERANCE: f64 = 1e-4;
const OVERFIT_SAMPLES: usize = 32;
const OVERFIT_LOSS: f64 = 1e-2;
const OVERFIT_TIME_LIMIT: Duration = Duration::from_secs(120);
const MOMENT_TOLERANCE: f64 = 1e-9;

fn tables_of(d: &SynthData) -> Tables {
    let panels = [
        (SchemaId::Population, &d.population),
        (SchemaId::InMigration, &d.in_migration),
        (SchemaId::OutMigration, &d.out_migration),
        (SchemaId::TaxableIncome, &d.taxable_income),
        (SchemaId::Taxpayers, &d.taxpayers),
        (SchemaId::DwellingStock, &d.dwelling_stock),
        (SchemaId::NewStarts, &d.new_starts),
    ];
    Tables {
        panels: panels.into_iter().map(|(k, p)| (k, p.clone())).collect(),
        centroids: Some(d.centroids.clone()),
    }
}

fn synthetic_windows() -> Result<(Dataset, ForecasterSection), String> {
    let d = synth_truth(&SynthSpec {
        n_areas: 40,
        n_years: 24,
        seed: 6,
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = ForecasterSection::default();
    let ds = forecaster_dataset(&tables_of(&d), &d.true_index_panel, &cfg).map_err(|e| e.to_string())?;
    Ok((ds, cfg))
}

fn forecaster_suite(pool: &rayon::ThreadPool) -> Outcome {
    let (ds, cfg) = synthetic_windows()?;
    let width = ds.width();

    // analytic gradient against central differences on a down-sized model
    let small = ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_hidden: 24,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = Transformer::new(&small, width, 3).map_err(|e| e.to_string())?;
    let batch: Vec<_> = ds.samples.iter().step_by(97).take(4).collect();
    let wsum: f64 = batch.iter().map(|s| s.weight).sum();
    let loss = |m: &Transformer| -> f64 {
        batch
            .iter()
            .map(|s| s.weight * (m.predict(&s.values, s.padded_rows).unwrap() - s.raw_target).powi(2))
            .sum::<f64>()
            / wsum
    };
    let mut grad = vec![0.0; model.n_params()];
    for s in &batch {
        model
            .accumulate_gradient(
                &s.values,
                s.padded_rows,
                None,
                |p| 2.0 * s.weight * (p - s.raw_target) / wsum,
                &mut grad,
            )
            .map_err(|e| e.to_string())?;
    }
    let first_query = model
        .tensors()
        .iter()
        .find(|t| t.name.contains("q"))
        .map(|t| t.offset)
        .unwrap_or(0);
    let mut worst_grad: f64 = 0.0;
    for i in first_query..first_query + 10 {
        let h = 1e-5;
        let (mut plus, mut minus) = (model.clone(), model.clone());
        plus.params[i] += h;
        minus.params[i] -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        worst_grad = worst_grad.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
    }
    ensure!(
        worst_grad <= GRADIENT_TOLERANCE,
        "gradient relative error {worst_grad:e}"
    );

    // causal masking: perturbing row r leaves every layer's rows < r untouched
    let x0 = &ds.samples[0].values;
    let base = model.layer_outputs(x0, 0).map_err(|e| e.to_string())?;
    let d_model = small.d_model;
    for r in 1..ds.lookback {
        let mut x = x0.clone();
        x[r * width] += 1.0;
        let moved = model.layer_outputs(&x, 0).map_err(|e| e.to_string())?;
        for (a, b) in base.iter().zip(&moved) {
            ensure!(a[..r * d_model] == b[..r * d_model], "row {r} leaked into earlier rows");
            ensure!(
                a[r * d_model..] != b[r * d_model..],
                "row {r} perturbation had no effect"
            );
        }
    }

    // split hygiene and frozen per-year target moments
    let split = TemporalSplit::latest(&ds, cfg.test_years, TARGET_HORIZON).map_err(|e| e.to_string())?;
    let (train_set, test_set) = split.apply(&ds).map_err(|e| e.to_string())?;
    let first_test_feature = split.first_test_anchor - ds.lookback as Year + 1;
    for s in &train_set.samples {
        ensure!(
            s.anchor + (TARGET_HORIZON as Year) < first_test_feature,
            "training anchor {} overlaps test features",
            s.anchor
        );
    }
    for s in &test_set.samples {
        ensure!(split.is_test(s.anchor), "test anchor {}", s.anchor);
    }
    let norm =
        TargetNormalizer::fit(train_set.samples.iter().map(|s| (s.anchor, s.raw_target))).map_err(|e| e.to_string())?;
    let mut by_year: BTreeMap<Year, Vec<f64>> = BTreeMap::new();
    for s in &train_set.samples {
        by_year
            .entry(s.anchor)
            .or_default()
            .push(norm.apply(s.anchor, s.raw_target));
    }
    let mut worst_moment: f64 = 0.0;
    for z in by_year.values() {
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_moment = worst_moment.max(mean.abs()).max((sd - 1.0).abs());
    }
    ensure!(
        worst_moment <= MOMENT_TOLERANCE,
        "training-year moments off by {worst_moment:e}"
    );
    let mut perturbed = train_set.clone();
    perturbed.samples.extend(test_set.samples.iter().cloned().map(|mut s| {
        s.raw_target += 1e3;
        s
    }));
    let refit = TargetNormalizer::fit(
        perturbed
            .samples
            .iter()
            .filter(|s| split.is_train(s.anchor))
            .map(|s| (s.anchor, s.raw_target)),
    )
    .map_err(|e| e.to_string())?;
    ensure!(refit == norm, "test targets reached the normalizer");
    ensure!(
        test_set.samples.iter().all(|s| !norm.per_year.contains_key(&s.anchor)),
        "test years carry their own moments"
    );

    // capacity: the default architecture memorises a small set
    let subset = Dataset {
        samples: ds
            .samples
            .iter()
            .step_by(ds.len() / OVERFIT_SAMPLES)
            .take(OVERFIT_SAMPLES)
            .cloned()
            .collect(),
        ..ds.clone()
    };
    ensure!(subset.len() == OVERFIT_SAMPLES, "{} overfit samples", subset.len());
    let overfit = ModelConfig {
        dropout: 0.0,
        batch_size: 32,
        epochs: 500,
        ..ModelConfig::default()
    };
    let started = Instant::now();
    let trained = train(&subset, None, &overfit, 17, &PoolRunner(pool)).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let fit_loss = trained.evaluate_loss(&subset).map_err(|e| e.to_string())?;
    ensure!(
        fit_loss < OVERFIT_LOSS,
        "training weighted MSE {fit_loss:e} after 500 epochs"
    );
    ensure!(elapsed < OVERFIT_TIME_LIMIT, "overfit took {elapsed:?}");
    Ok(format!(
        "grad rel. error {worst_grad:.1e}, causal mask holds, moments within {worst_moment:.1e}, \
         {} train / {} test windows clean, overfit MSE {fit_loss:.1e} in {:.1}s",
        train_set.len(),
        test_set.len(),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- 7

const PUBLISHED_MIGRATION_4Y_CAGR: f64 = 0.0457;
const PUBLISHED_MIGRATION_4Y_SHARPE: f64 = 1.48;
const PUBLISHED_TEST_R2: f64 = 0.28;
/// Directory holding licensed data in the documented input schema.
const LICENSED_DATA_ENV: &str = "MUNIDEX_LICENSED_DATA";

fn reference_table() -> BTreeMap<String, f64> {
    [
        ("cagr", PUBLISHED_MIGRATION_4Y_CAGR),
        ("sharpe", PUBLISHED_MIGRATION_4Y_SHARPE),
        ("r_squared", PUBLISHED_TEST_R2),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Slopes whose sign the criterion fixes: positive for the flow factors,
/// negative for the trailing cumulative return.
fn sign_violations(slopes: &[(&str, u32, f64)]) -> Vec<String> {
    slopes
        .iter()
        .filter(|(name, _, s)| {
            if *name == "historical_return" {
                *s >= 0.0
            } else {
                *s <= 0.0
            }
        })
        .map(|(n, h, s)| format!("{n}@{h}y slope {s:.4}"))
        .collect()
}

fn licensed_data() -> Verdict {
    let Some(dir) = std::env::var_os(LICENSED_DATA_ENV).map(PathBuf::from) else {
        return match synthetic_proxy() {
            Ok(d) => Verdict::Conditional(format!(
                "not evaluated, {LICENSED_DATA_ENV} unset; synthetic proxy: {d}"
            )),
            Err(e) => Verdict::Fail(format!("synthetic proxy: {e}")),
        };
    };
    licensed_run(&dir).into()
}

fn synthetic_proxy() -> Outcome {
    let d = synth_truth(&SynthSpec {
        n_areas: 300,
        seed: 11,
        ..SynthSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let idx = &d.true_index_panel;
    let f = |r: munidex_core::Result<factors::FactorPanel>| r.map_err(|e| e.to_string());
    let named = [
        (
            "migration",
            factors::net_migration_ratio(&d.in_migration, &d.out_migration, &d.population),
        ),
        ("income", f(factors::taxable_income_growth(&d.taxable_income))?),
        (
            "dwellings",
            f(factors::new_dwellings_ratio(&d.new_starts, &d.dwelling_stock))?,
        ),
        ("historical_return", f(factors::annual_return_factor(idx))?),
    ];
    let mut slopes = Vec::new();
    for (name, factor) in &named {
        let h = if *name == "historical_return" { 1 } else { 4 };
        let r = evaluate_factor_linear(factor, idx, h).map_err(|e| e.to_string())?;
        slopes.push((*name, h, r.slope));
    }
    let bad = sign_violations(&slopes);
    ensure!(bad.is_empty(), "sign disagreement: {}", bad.join(", "));
    let deltas = compare(&[("cagr", Some(0.05)), ("sharpe", None)], &reference_table());
    ensure!(
        deltas.len() == 1 && (deltas["cagr"].delta - (0.05 - PUBLISHED_MIGRATION_4Y_CAGR)).abs() < 1e-15,
        "delta report mechanics"
    );
    Ok(format!(
        "planted slope signs agree ({})",
        slopes
            .iter()
            .map(|(n, h, s)| format!("{n}@{h}y {s:+.3}"))
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

fn licensed_run(data: &Path) -> Outcome {
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let w = work.path();
    let reference = w.join("reference.toml");
    let text: String = reference_table().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    std::fs::write(&reference, text).map_err(|e| e.to_string())?;
    let mut base: Vec<String> = Vec::new();
    if let Some(cfg) = std::env::var_os("MUNIDEX_LICENSED_CONFIG") {
        base.extend(["--config".into(), cfg.to_string_lossy().into_owned()]);
    }
    let run = |args: &[&str]| -> Result<(), String> {
        let mut full = base.clone();
        full.extend(args.iter().map(|s| s.to_string()));
        cli(w, &full)
    };
    let d = data.to_string_lossy().into_owned();
    run(&[
        "--out",
        "i",
        "index",
        "--transactions",
        &format!("{d}/transactions.csv"),
    ])?;
    let mut slopes = Vec::new();
    for (factor, label) in [
        ("migration", "migration"),
        ("income", "income"),
        ("dwellings", "dwellings"),
        ("mean_reversion", "historical_return"),
    ] {
        let out = format!("f_{factor}");
        run(&[
            "--out",
            &out,
            "factor",
            "--factor",
            factor,
            "--data",
            &d,
            "--index",
            "i/index.csv",
        ])?;
        let e = format!("e_{factor}");
        run(&[
            "--out",
            &e,
            "eval-linear",
            "--factor",
            &format!("{out}/factor_{factor}.csv"),
            "--index",
            "i/index.csv",
            "--horizons",
            "2,4",
        ])?;
        let json: serde_json::Value = read_json(&w.join(&e).join("eval_linear.json"))?;
        for r in json.as_array().into_iter().flatten() {
            let h = r["horizon"].as_u64().unwrap_or(0) as u32;
            let s = r["slope"].as_f64().unwrap_or(f64::NAN);
            // the mean-reversion signal is the negated trailing return
            slopes.push((label, h, if factor == "mean_reversion" { -s } else { s }));
        }
    }
    let pop = format!("{d}/{}", SchemaId::Population.file_name());
    let reference = reference.to_string_lossy().into_owned();
    run(&[
        "--out",
        "b",
        "backtest",
        "--signal",
        "f_migration/factor_migration.csv",
        "--index",
        "i/index.csv",
        "--population",
        &pop,
        "--horizon",
        "4",
        "--seed",
        "1",
        "--reference",
        &reference,
    ])?;
    run(&[
        "--out",
        "t",
        "train",
        "--data",
        &d,
        "--index",
        "i/index.csv",
        "--seed",
        "1",
    ])?;
    run(&[
        "--out",
        "v",
        "evaluate",
        "--model",
        "t/model.bin",
        "--data",
        &d,
        "--index",
        "i/index.csv",
        "--reference",
        &reference,
    ])?;
    let bt = read_json(&w.join("b/backtest.json"))?;
    let ev = read_json(&w.join("v/evaluation.json"))?;
    let mut report = Vec::new();
    for (k, v) in bt["reference"]
        .as_object()
        .into_iter()
        .flatten()
        .chain(ev["reference"].as_object().into_iter().flatten())
    {
        let num = |f: &str| v[f].as_f64().unwrap_or(f64::NAN);
        report.push(format!(
            "{k} {:.4} vs {:.4} ({:+.4})",
            num("value"),
            num("reference"),
            num("delta")
        ));
    }
    let bad = sign_violations(&slopes);
    ensure!(
        bad.is_empty(),
        "sign disagreement: {}; {}",
        bad.join(", "),
        report.join("; ")
    );
    Ok(format!("slope signs agree; {}", report.join("; ")))
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 8

const PIPELINE_CONFIG: &str = "[synth]
n_years = 24
intensity = 80
[backtest]
universe_size = 20
baseline_portfolios = 100
[forecaster.model]
d_model = 16
n_heads = 2
n_layers = 1
d_hidden = 16
epochs = 4
batch_size = 16
";

fn cli(dir: &Path, args: &[String]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_munidex"))
        .current_dir(dir)
        .env_remove("MUNIDEX_OUT")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Runs the whole pipeline and returns each stage's artifact digests.
fn pipeline(dir: &Path, jobs: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>, String> {
    std::fs::write(dir.join("run.toml"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let stages: [&[&str]; 9] = [
        &["--out", "s", "synth", "--seed", "7"],
        &["--out", "i", "index", "--transactions", "s/transactions.csv"],
        &[
            "--out",
            "f",
            "factor",
            "--factor",
            "migration",
            "--data",
            "s",
            "--index",
            "i/index.csv",
        ],
        &[
            "--out",
            "e",
            "eval-linear",
            "--factor",
            "f/factor_migration.csv",
            "--index",
            "i/index.csv",
        ],
        &[
            "--out",
            "b",
            "backtest",
            "--signal",
            "f/factor_migration.csv",
            "--index",
            "i/index.csv",
            "--population",
            "s/population.csv",
            "--horizon",
            "4",
            "--seed",
            "3",
        ],
        &[
            "--out",
            "t",
            "train",
            "--data",
            "s",
            "--index",
            "i/index.csv",
            "--seed",
            "5",
        ],
        &[
            "--out",
            "v",
            "evaluate",
            "--model",
            "t/model.bin",
            "--data",
            "s",
            "--index",
            "i/index.csv",
        ],
        &[
            "--out",
            "d",
            "report-deciles",
            "--model",
            "t/model.bin",
            "--data",
            "s",
            "--index",
            "i/index.csv",
            "--seed",
            "9",
        ],
        &[
            "--out",
            "g",
            "ingest",
            "--transactions",
            "s/transactions.csv",
            "--tables",
            "s",
        ],
    ];
    let mut digests = BTreeMap::new();
    for args in stages {
        let mut full: Vec<String> = ["--config", "run.toml", "--jobs", jobs].map(String::from).to_vec();
        full.extend(args.iter().map(|s| s.to_string()));
        cli(dir, &full)?;
        let m = read_manifest(&dir.join(args[1]).join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
        digests.insert(m.subcommand.clone(), m.outputs);
    }
    Ok(digests)
}

fn determinism() -> Outcome {
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let first = pipeline(a.path(), "1")?;
    let second = pipeline(b.path(), "4")?;
    let n: usize = first.values().map(BTreeMap::len).sum();
    for (stage, files) in &first {
        for (file, digest) in files {
            ensure!(
                second[stage].get(file) == Some(digest),
                "{stage}: {file} differs between runs"
            );
        }
        ensure!(second[stage].len() == files.len(), "{stage}: artifact sets differ");
    }
    Ok(format!(
        "{} stages, {n} artifacts byte-identical (1 vs 4 worker threads)",
        first.len()
    ))
}
