//! Training loop, evaluation and decile reports for [`Transformer`].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, WindowSample};
use super::model::{ModelConfig, Transformer};
use super::target::TargetNormalizer;
use crate::area::{AreaCode, Year};
use crate::error::{invalid, Error, Result};

/// Samples per gradient chunk. Chunk gradients are summed in chunk order, so
/// the result does not depend on how chunks are scheduled.
pub const CHUNK_SIZE: usize = 8;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// `sum w (p - y)^2 / sum w`.
pub fn weighted_loss(pred: &[f64], target: &[f64], weight: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != weight.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions, targets and weights", pred.len()),
            found: format!("{} targets, {} weights", target.len(), weight.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if weight.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("weight", "weights must be positive"));
    }
    let num: f64 = pred
        .iter()
        .zip(target)
        .zip(weight)
        .map(|((p, y), w)| w * (p - y) * (p - y))
        .sum();
    Ok(num / weight.iter().sum::<f64>())
}

/// `1 - SS_res / SS_tot` with the mean taken over `actual`.
pub fn r_squared(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", actual.len()),
            found: format!("{}", pred.len()),
        });
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let sst: f64 = actual.iter().map(|y| (y - mean) * (y - mean)).sum();
    if !(sst > 0.0) {
        return Err(Error::ZeroVariance("test targets are constant".into()));
    }
    let ssr: f64 = pred.iter().zip(actual).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(1.0 - ssr / sst)
}

/// Per-column standardisation fitted on observed training cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl FeatureScaler {
    /// Padding rows and masked cells are excluded; columns with no spread
    /// keep unit scale.
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        let w = dataset.width();
        let mut sum = vec![0.0; w];
        let mut sq = vec![0.0; w];
        let mut n = vec![0usize; w];
        for s in &dataset.samples {
            for r in s.padded_rows..dataset.lookback {
                for c in 0..w {
                    let i = r * w + c;
                    if !s.masked[i] {
                        sum[c] += s.values[i];
                        n[c] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..w)
            .map(|c| if n[c] > 0 { sum[c] / n[c] as f64 } else { 0.0 })
            .collect();
        for s in &dataset.samples {
            for r in s.padded_rows..dataset.lookback {
                for c in 0..w {
                    let i = r * w + c;
                    if !s.masked[i] {
                        sq[c] += (s.values[i] - mean[c]) * (s.values[i] - mean[c]);
                    }
                }
            }
        }
        if n.iter().all(|&k| k == 0) {
            return Err(Error::InsufficientData("no observed feature cells".into()));
        }
        let sd = (0..w)
            .map(|c| {
                let v = if n[c] > 0 { libm::sqrt(sq[c] / n[c] as f64) } else { 0.0 };
                if v > 1e-12 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, sd })
    }

    /// Scaled window; masked and padded cells become 0.
    pub fn transform(&self, sample: &WindowSample) -> Vec<f64> {
        let w = self.mean.len();
        sample
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let (r, c) = (i / w, i % w);
                if r < sample.padded_rows || sample.masked[i] {
                    0.0
                } else {
                    (v - self.mean[c]) / self.sd[c]
                }
            })
            .collect()
    }
}

/// A window ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub x: Vec<f64>,
    pub padded: usize,
    pub target: f64,
    pub weight: f64,
}

/// Gradient and weighted squared error of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkResult {
    pub grad: Vec<f64>,
    pub weighted_sq_error: f64,
}

/// Schedules chunk evaluations. Implementations must return results in
/// chunk index order.
pub trait ChunkRunner {
    fn run(&self, n_chunks: usize, job: &(dyn Fn(usize) -> Result<ChunkResult> + Sync)) -> Vec<Result<ChunkResult>>;
}

/// Evaluates chunks one after another.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl ChunkRunner for Sequential {
    fn run(&self, n_chunks: usize, job: &(dyn Fn(usize) -> Result<ChunkResult> + Sync)) -> Vec<Result<ChunkResult>> {
        (0..n_chunks).map(job).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Weighted loss over the epoch's training batches (dropout active).
    pub train_loss: f64,
    /// Weighted loss on the test set in evaluation mode.
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: Transformer,
    pub scaler: FeatureScaler,
    pub normalizer: TargetNormalizer,
    pub columns: Vec<String>,
    pub features: Vec<String>,
    pub history: Vec<EpochRecord>,
    pub seed: u64,
}

/// One model output with its normalised target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub area_code: AreaCode,
    pub anchor: Year,
    pub prediction: f64,
    pub target: f64,
    pub weight: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Dropout seed of the sample at `position` of `epoch`'s shuffled order.
fn dropout_seed(seed: u64, epoch: usize, position: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ epoch as u64) ^ position as u64)
}

/// Scales features and normalises targets with frozen statistics.
pub fn prepare(dataset: &Dataset, scaler: &FeatureScaler, normalizer: &TargetNormalizer) -> Vec<Prepared> {
    dataset
        .samples
        .iter()
        .map(|s| Prepared {
            x: scaler.transform(s),
            padded: s.padded_rows,
            target: normalizer.apply(s.anchor, s.raw_target),
            weight: s.weight,
        })
        .collect()
}

/// Weighted-loss gradient over `batch`, accumulated chunk by chunk.
/// Returns the weighted loss. `seeds[i]` drives dropout for `batch[i]`.
pub fn batch_gradient(
    model: &Transformer,
    batch: &[&Prepared],
    seeds: Option<&[u64]>,
    runner: &dyn ChunkRunner,
    grad: &mut [f64],
) -> Result<f64> {
    let wsum: f64 = batch.iter().map(|s| s.weight).sum();
    let n_params = model.n_params();
    let n_chunks = batch.len().div_ceil(CHUNK_SIZE);
    let job = |c: usize| -> Result<ChunkResult> {
        let mut g = vec![0.0; n_params];
        let mut err = 0.0;
        for i in c * CHUNK_SIZE..((c + 1) * CHUNK_SIZE).min(batch.len()) {
            let s = batch[i];
            let p = model.accumulate_gradient(
                &s.x,
                s.padded,
                seeds.map(|v| v[i]),
                |p| 2.0 * s.weight * (p - s.target) / wsum,
                &mut g,
            )?;
            err += s.weight * (p - s.target) * (p - s.target);
        }
        Ok(ChunkResult {
            grad: g,
            weighted_sq_error: err,
        })
    };
    grad.fill(0.0);
    let mut err = 0.0;
    for r in runner.run(n_chunks, &job) {
        let r = r?;
        for (a, b) in grad.iter_mut().zip(&r.grad) {
            *a += b;
        }
        err += r.weighted_sq_error;
    }
    Ok(err / wsum)
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(BETA1, f64::from(self.step));
        let c2 = 1.0 - libm::pow(BETA2, f64::from(self.step));
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *p *= decay;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + ADAM_EPS);
        }
    }
}

fn eval_loss(model: &Transformer, data: &[Prepared]) -> Result<f64> {
    let mut preds = Vec::with_capacity(data.len());
    for s in data {
        preds.push(model.predict(&s.x, s.padded)?);
    }
    let y: Vec<f64> = data.iter().map(|s| s.target).collect();
    let w: Vec<f64> = data.iter().map(|s| s.weight).collect();
    weighted_loss(&preds, &y, &w)
}

/// Fits scaler and target statistics on `train`, then runs mini-batch AdamW
/// for `config.epochs` epochs. Batch order comes from `seed` alone.
pub fn train(
    train: &Dataset,
    test: Option<&Dataset>,
    config: &ModelConfig,
    seed: u64,
    runner: &dyn ChunkRunner,
) -> Result<TrainedModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if train.lookback != config.lookback {
        return Err(Error::ShapeMismatch {
            expected: format!("lookback {}", config.lookback),
            found: format!("lookback {}", train.lookback),
        });
    }
    let normalizer = TargetNormalizer::fit(train.samples.iter().map(|s| (s.anchor, s.raw_target)))?;
    let scaler = FeatureScaler::fit(train)?;
    let train_data = prepare(train, &scaler, &normalizer);
    let test_data = test.filter(|t| !t.is_empty()).map(|t| prepare(t, &scaler, &normalizer));
    let mut model = Transformer::new(config, train.width(), seed)?;
    let mut opt = AdamW::new(model.n_params(), config.learning_rate, config.weight_decay);
    let mut grad = vec![0.0; model.n_params()];
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(seed);
    shuffle.set_stream(7);
    let dropout = config.dropout > 0.0;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut wtotal = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Prepared> = idx.iter().map(|&i| &train_data[i]).collect();
            let seeds: Vec<u64> = (0..batch.len())
                .map(|i| dropout_seed(seed, epoch, b * config.batch_size + i))
                .collect();
            let loss = batch_gradient(&model, &batch, dropout.then_some(&seeds[..]), runner, &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, loss });
            }
            opt.step(&mut model.params, &grad);
            let w: f64 = batch.iter().map(|s| s.weight).sum();
            total += loss * w;
            wtotal += w;
        }
        let test_loss = match &test_data {
            Some(d) => Some(eval_loss(&model, d)?),
            None => None,
        };
        let train_loss = total / wtotal;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: train_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            test_loss,
        });
    }
    Ok(TrainedModel {
        model,
        scaler,
        normalizer,
        columns: train.columns.clone(),
        features: train.features.clone(),
        history,
        seed,
    })
}

impl TrainedModel {
    fn check_columns(&self, dataset: &Dataset) -> Result<()> {
        if dataset.columns != self.columns || dataset.lookback != self.model.config.lookback {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {:?}", self.model.config.lookback, self.columns),
                found: format!("{} x {:?}", dataset.lookback, dataset.columns),
            });
        }
        Ok(())
    }

    /// Evaluation-mode predictions against frozen-normalised targets.
    pub fn predict(&self, dataset: &Dataset) -> Result<Vec<Prediction>> {
        self.check_columns(dataset)?;
        dataset
            .samples
            .iter()
            .map(|s| {
                let x = self.scaler.transform(s);
                Ok(Prediction {
                    area_code: s.area_code,
                    anchor: s.anchor,
                    prediction: self.model.predict(&x, s.padded_rows)?,
                    target: self.normalizer.apply(s.anchor, s.raw_target),
                    weight: s.weight,
                })
            })
            .collect()
    }

    pub fn evaluate_r2(&self, dataset: &Dataset) -> Result<f64> {
        let preds = self.predict(dataset)?;
        let p: Vec<f64> = preds.iter().map(|x| x.prediction).collect();
        let y: Vec<f64> = preds.iter().map(|x| x.target).collect();
        r_squared(&p, &y)
    }

    pub fn evaluate_loss(&self, dataset: &Dataset) -> Result<f64> {
        let preds = self.predict(dataset)?;
        let p: Vec<f64> = preds.iter().map(|x| x.prediction).collect();
        let y: Vec<f64> = preds.iter().map(|x| x.target).collect();
        let w: Vec<f64> = preds.iter().map(|x| x.weight).collect();
        weighted_loss(&p, &y, &w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decile {
    Bottom,
    Top,
}

/// Raw own-feature history of one selected sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub decile: Decile,
    pub area_code: AreaCode,
    pub anchor: Year,
    pub prediction: f64,
    pub feature: String,
    /// `(year, value)` for observed rows, oldest first.
    pub points: Vec<(Year, f64)>,
}

/// Indices of the bottom and top `ceil(n / 10)` predictions, ordered by
/// `(prediction, area, anchor)`.
pub fn decile_members(preds: &[Prediction]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&preds[i], &preds[j]);
        a.prediction
            .total_cmp(&b.prediction)
            .then(a.area_code.cmp(&b.area_code))
            .then(a.anchor.cmp(&b.anchor))
    });
    let n = order.len().div_ceil(10);
    let top = order.split_off(order.len() - n);
    order.truncate(n);
    (order, top)
}

/// Samples `n_samples` windows from each extreme decile of `preds` (aligned
/// with `dataset.samples`) and emits their raw own-feature trajectories.
pub fn decile_report(dataset: &Dataset, preds: &[Prediction], n_samples: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let aligned = preds.len() == dataset.len()
        && preds
            .iter()
            .zip(&dataset.samples)
            .all(|(p, s)| p.area_code == s.area_code && p.anchor == s.anchor);
    if !aligned {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions aligned with the dataset", dataset.len()),
            found: format!("{} predictions", preds.len()),
        });
    }
    if dataset.len() < 20 {
        return Err(Error::InsufficientData(format!(
            "{} samples, 20 required",
            dataset.len()
        )));
    }
    let (bottom, top) = decile_members(preds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = dataset.width();
    let mut out = Vec::new();
    for (decile, members) in [(Decile::Top, top), (Decile::Bottom, bottom)] {
        let mut chosen: Vec<usize> = members
            .choose_multiple(&mut rng, n_samples.min(members.len()))
            .copied()
            .collect();
        chosen.sort_unstable();
        for i in chosen {
            let (s, p) = (&dataset.samples[i], &preds[i]);
            let first = s.anchor - dataset.lookback as Year + 1;
            for (f, name) in dataset.features.iter().enumerate() {
                let points = (s.padded_rows..dataset.lookback)
                    .filter(|&r| !s.masked[r * w + f])
                    .map(|r| (first + r as Year, s.values[r * w + f]))
                    .collect();
                out.push(Trajectory {
                    decile,
                    area_code: s.area_code,
                    anchor: s.anchor,
                    prediction: p.prediction,
                    feature: name.clone(),
                    points,
                });
            }
        }
    }
    Ok(out)
}
