//! Decoder-only transformer over short yearly windows, with hand-written
//! backpropagation.
//!
//! Per window row: linear embedding, sinusoidal position code, then
//! `n_layers` post-norm blocks of causal multi-head self-attention and a ReLU
//! feed-forward network; the last row feeds a scalar linear head. Dropout
//! sites: after the position code, on each attention output, inside the
//! feed-forward network and on its output.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_hidden: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
    pub lookback: usize,
    pub horizon: u32,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_layers: 4,
            d_hidden: 128,
            dropout: 0.1,
            learning_rate: 3e-4,
            weight_decay: 1.0,
            lookback: 5,
            horizon: 4,
            batch_size: 64,
            epochs: 200,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_hidden", self.d_hidden),
            ("lookback", self.lookback),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|p| p.1 == 0) {
            return Err(invalid("model", format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(invalid("d_model", "must be divisible by n_heads"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout", "must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    embed_w: usize,
    embed_b: usize,
    layers: Vec<LayerOffsets>,
    head_w: usize,
    head_b: usize,
    total: usize,
    tensors: Vec<TensorInfo>,
}

impl Layout {
    fn new(cfg: &ModelConfig, width: usize) -> Self {
        let (d, h) = (cfg.d_model, cfg.d_hidden);
        let mut tensors = Vec::new();
        let mut at = 0usize;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = at;
            at += shape.iter().product::<usize>();
            tensors.push(TensorInfo { name, shape, offset });
            offset
        };
        let embed_w = add("embed.weight".into(), vec![width, d]);
        let embed_b = add("embed.bias".into(), vec![d]);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            layers.push(LayerOffsets {
                wq: add(p("attn.q.weight"), vec![d, d]),
                bq: add(p("attn.q.bias"), vec![d]),
                wk: add(p("attn.k.weight"), vec![d, d]),
                bk: add(p("attn.k.bias"), vec![d]),
                wv: add(p("attn.v.weight"), vec![d, d]),
                bv: add(p("attn.v.bias"), vec![d]),
                wo: add(p("attn.out.weight"), vec![d, d]),
                bo: add(p("attn.out.bias"), vec![d]),
                ln1_g: add(p("norm1.weight"), vec![d]),
                ln1_b: add(p("norm1.bias"), vec![d]),
                w1: add(p("ff.1.weight"), vec![d, h]),
                b1: add(p("ff.1.bias"), vec![h]),
                w2: add(p("ff.2.weight"), vec![h, d]),
                b2: add(p("ff.2.bias"), vec![d]),
                ln2_g: add(p("norm2.weight"), vec![d]),
                ln2_b: add(p("norm2.bias"), vec![d]),
            });
        }
        let head_w = add("head.weight".into(), vec![d]);
        let head_b = add("head.bias".into(), vec![1]);
        Self {
            embed_w,
            embed_b,
            layers,
            head_w,
            head_b,
            total: at,
            tensors,
        }
    }
}

/// Number of trainable parameters for `config` and input width `width`.
pub fn parameter_count(config: &ModelConfig, width: usize) -> usize {
    Layout::new(config, width).total
}

/// Sinusoidal position code, `rows x d` row-major.
pub fn positional_encoding(rows: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; rows * d];
    for pos in 0..rows {
        for i in (0..d).step_by(2) {
            let freq = libm::pow(10_000.0, -(i as f64) / d as f64);
            let angle = pos as f64 * freq;
            pe[pos * d + i] = libm::sin(angle);
            if i + 1 < d {
                pe[pos * d + i + 1] = libm::cos(angle);
            }
        }
    }
    pe
}

/// `out = x W + b` for `rows x n_in` inputs and `n_in x n_out` weights.
fn linear(x: &[f64], rows: usize, n_in: usize, w: &[f64], b: &[f64], out: &mut [f64]) {
    let n_out = b.len();
    for r in 0..rows {
        let o = &mut out[r * n_out..(r + 1) * n_out];
        o.copy_from_slice(b);
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wr = &w[k * n_out..(k + 1) * n_out];
            for (oj, &wj) in o.iter_mut().zip(wr) {
                *oj += xv * wj;
            }
        }
    }
}

/// Accumulates weight, bias and (optionally) input gradients of [`linear`].
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    x: &[f64],
    rows: usize,
    n_in: usize,
    n_out: usize,
    w: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        for (dbj, &g) in db.iter_mut().zip(dyr) {
            *dbj += g;
        }
        let xr = &x[r * n_in..(r + 1) * n_in];
        for (k, &xv) in xr.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let dwr = &mut dw[k * n_out..(k + 1) * n_out];
            for (dwj, &g) in dwr.iter_mut().zip(dyr) {
                *dwj += xv * g;
            }
        }
    }
    if let Some(dx) = dx {
        for r in 0..rows {
            let dyr = &dy[r * n_out..(r + 1) * n_out];
            for k in 0..n_in {
                let wr = &w[k * n_out..(k + 1) * n_out];
                let s: f64 = wr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                dx[r * n_in + k] += s;
            }
        }
    }
}

struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &[f64], rows: usize, d: usize, g: &[f64], b: &[f64], out: &mut [f64]) -> NormCache {
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / libm::sqrt(var + LN_EPS);
        inv_std[r] = inv;
        for j in 0..d {
            let h = (xr[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = g[j] * h + b[j];
        }
    }
    NormCache { xhat, inv_std }
}

#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    cache: &NormCache,
    rows: usize,
    d: usize,
    g: &[f64],
    dy: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
    dx: &mut [f64],
) {
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[r * d + j] = cache.inv_std[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
}

/// Inverted dropout mask; empty when inactive.
fn dropout_mask(rng: Option<&mut ChaCha8Rng>, p: f64, n: usize) -> Vec<f64> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            (0..n)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect()
        }
        _ => Vec::new(),
    }
}

fn apply_mask(x: &mut [f64], mask: &[f64]) {
    if !mask.is_empty() {
        x.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
}

/// Row `i` may attend to `j <= i` unless `j` is padding; padding rows see
/// only themselves.
fn allowed(i: usize, j: usize, padded: usize) -> bool {
    j <= i && (j >= padded || j == i)
}

struct LayerCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `n_heads x rows x rows` attention weights.
    probs: Vec<f64>,
    attn: Vec<f64>,
    mask_attn: Vec<f64>,
    norm1: NormCache,
    y1: Vec<f64>,
    pre_relu: Vec<f64>,
    mask_hidden: Vec<f64>,
    hidden: Vec<f64>,
    mask_ff: Vec<f64>,
    norm2: NormCache,
}

struct Trace {
    mask_embed: Vec<f64>,
    layers: Vec<LayerCache>,
    output: Vec<f64>,
    prediction: f64,
}

/// Transformer weights with their configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub config: ModelConfig,
    pub input_width: usize,
    pub params: Vec<f64>,
}

impl Transformer {
    /// Linear weights uniform in `+-1/sqrt(fan_in)`; attention projections
    /// Glorot-uniform with zero biases; norms at identity.
    pub fn new(config: &ModelConfig, input_width: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_width == 0 {
            return Err(invalid("input_width", "must be positive"));
        }
        let layout = Layout::new(config, input_width);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(11);
        let mut uniform = |slice: &mut [f64], bound: f64| {
            slice.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        };
        let (d, h) = (config.d_model, config.d_hidden);
        let fan = |n: usize| 1.0 / libm::sqrt(n as f64);
        let glorot = libm::sqrt(6.0 / (2 * d) as f64);
        uniform(
            &mut params[layout.embed_w..layout.embed_w + input_width * d],
            fan(input_width),
        );
        uniform(&mut params[layout.embed_b..layout.embed_b + d], fan(input_width));
        for o in &layout.layers {
            for w in [o.wq, o.wk, o.wv] {
                uniform(&mut params[w..w + d * d], glorot);
            }
            uniform(&mut params[o.wo..o.wo + d * d], fan(d));
            params[o.ln1_g..o.ln1_g + d].fill(1.0);
            params[o.ln2_g..o.ln2_g + d].fill(1.0);
            uniform(&mut params[o.w1..o.w1 + d * h], fan(d));
            uniform(&mut params[o.b1..o.b1 + h], fan(d));
            uniform(&mut params[o.w2..o.w2 + h * d], fan(h));
            uniform(&mut params[o.b2..o.b2 + d], fan(h));
        }
        uniform(&mut params[layout.head_w..layout.head_w + d], fan(d));
        uniform(&mut params[layout.head_b..layout.head_b + 1], fan(d));
        Ok(Self {
            config: config.clone(),
            input_width,
            params,
        })
    }

    /// Rebuilds a model from stored parameters.
    pub fn from_parts(config: ModelConfig, input_width: usize, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = parameter_count(&config, input_width);
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} parameters"),
                found: format!("{}", params.len()),
            });
        }
        Ok(Self {
            config,
            input_width,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        Layout::new(&self.config, self.input_width).tensors
    }

    fn check_input(&self, x: &[f64], padded: usize) -> Result<()> {
        let want = self.config.lookback * self.input_width;
        if x.len() != want {
            return Err(Error::ShapeMismatch {
                expected: format!("{} x {} window", self.config.lookback, self.input_width),
                found: format!("{} values", x.len()),
            });
        }
        if padded >= self.config.lookback {
            return Err(invalid("padded", "at least one row must carry data"));
        }
        Ok(())
    }

    fn run(&self, x: &[f64], padded: usize, mut rng: Option<&mut ChaCha8Rng>) -> Trace {
        let cfg = &self.config;
        let (t, d, hd, nh) = (cfg.lookback, cfg.d_model, cfg.d_hidden, cfg.n_heads);
        let dh = d / nh;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let p = &self.params;
        let lay = Layout::new(cfg, self.input_width);
        let w = self.input_width;
        let p_drop = cfg.dropout;

        let mut z = vec![0.0; t * d];
        linear(
            x,
            t,
            w,
            &p[lay.embed_w..lay.embed_w + w * d],
            &p[lay.embed_b..lay.embed_b + d],
            &mut z,
        );
        for (zi, pe) in z.iter_mut().zip(positional_encoding(t, d)) {
            *zi += pe;
        }
        let mask_embed = dropout_mask(rng.as_deref_mut(), p_drop, t * d);
        apply_mask(&mut z, &mask_embed);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for o in &lay.layers {
            let input = z.clone();
            let mut q = vec![0.0; t * d];
            let mut k = vec![0.0; t * d];
            let mut v = vec![0.0; t * d];
            linear(&input, t, d, &p[o.wq..o.wq + d * d], &p[o.bq..o.bq + d], &mut q);
            linear(&input, t, d, &p[o.wk..o.wk + d * d], &p[o.bk..o.bk + d], &mut k);
            linear(&input, t, d, &p[o.wv..o.wv + d * d], &p[o.bv..o.bv + d], &mut v);
            let mut probs = vec![0.0; nh * t * t];
            let mut attn = vec![0.0; t * d];
            for h in 0..nh {
                let c0 = h * dh;
                for i in 0..t {
                    let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..t {
                        if allowed(i, j, padded) {
                            let s: f64 = (0..dh).map(|c| q[i * d + c0 + c] * k[j * d + c0 + c]).sum::<f64>() * scale;
                            row[j] = s;
                            max = max.max(s);
                        }
                    }
                    let mut sum = 0.0;
                    for j in 0..t {
                        if allowed(i, j, padded) {
                            row[j] = libm::exp(row[j] - max);
                            sum += row[j];
                        } else {
                            row[j] = 0.0;
                        }
                    }
                    for j in 0..t {
                        row[j] /= sum;
                        if row[j] != 0.0 {
                            for c in 0..dh {
                                attn[i * d + c0 + c] += row[j] * v[j * d + c0 + c];
                            }
                        }
                    }
                }
            }
            let mut out = vec![0.0; t * d];
            linear(&attn, t, d, &p[o.wo..o.wo + d * d], &p[o.bo..o.bo + d], &mut out);
            let mask_attn = dropout_mask(rng.as_deref_mut(), p_drop, t * d);
            apply_mask(&mut out, &mask_attn);
            for (r, x) in out.iter_mut().zip(&input) {
                *r += x;
            }
            let mut y1 = vec![0.0; t * d];
            let norm1 = layer_norm(&out, t, d, &p[o.ln1_g..o.ln1_g + d], &p[o.ln1_b..o.ln1_b + d], &mut y1);

            let mut pre_relu = vec![0.0; t * hd];
            linear(&y1, t, d, &p[o.w1..o.w1 + d * hd], &p[o.b1..o.b1 + hd], &mut pre_relu);
            let mut hidden: Vec<f64> = pre_relu.iter().map(|&u| u.max(0.0)).collect();
            let mask_hidden = dropout_mask(rng.as_deref_mut(), p_drop, t * hd);
            apply_mask(&mut hidden, &mask_hidden);
            let mut ff = vec![0.0; t * d];
            linear(&hidden, t, hd, &p[o.w2..o.w2 + hd * d], &p[o.b2..o.b2 + d], &mut ff);
            let mask_ff = dropout_mask(rng.as_deref_mut(), p_drop, t * d);
            apply_mask(&mut ff, &mask_ff);
            for (r, x) in ff.iter_mut().zip(&y1) {
                *r += x;
            }
            let norm2 = layer_norm(&ff, t, d, &p[o.ln2_g..o.ln2_g + d], &p[o.ln2_b..o.ln2_b + d], &mut z);
            layers.push(LayerCache {
                input,
                q,
                k,
                v,
                probs,
                attn,
                mask_attn,
                norm1,
                y1,
                pre_relu,
                mask_hidden,
                hidden,
                mask_ff,
                norm2,
            });
        }
        let last = &z[(t - 1) * d..t * d];
        let prediction = p[lay.head_b]
            + last
                .iter()
                .zip(&p[lay.head_w..lay.head_w + d])
                .map(|(a, b)| a * b)
                .sum::<f64>();
        Trace {
            mask_embed,
            layers,
            output: z,
            prediction,
        }
    }

    fn backward(&self, x: &[f64], padded: usize, trace: &Trace, dpred: f64, grad: &mut [f64]) {
        let cfg = &self.config;
        let (t, d, hd, nh) = (cfg.lookback, cfg.d_model, cfg.d_hidden, cfg.n_heads);
        let dh = d / nh;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let p = &self.params;
        let lay = Layout::new(cfg, self.input_width);
        let w = self.input_width;

        let mut dz = vec![0.0; t * d];
        let last = &trace.output[(t - 1) * d..t * d];
        for j in 0..d {
            grad[lay.head_w + j] += dpred * last[j];
            dz[(t - 1) * d + j] = dpred * p[lay.head_w + j];
        }
        grad[lay.head_b] += dpred;

        for (o, c) in lay.layers.iter().zip(&trace.layers).rev() {
            // second sublayer
            let mut dr2 = vec![0.0; t * d];
            {
                let (dg, db) = split_pair(grad, o.ln2_g, o.ln2_b, d);
                layer_norm_backward(&c.norm2, t, d, &p[o.ln2_g..o.ln2_g + d], &dz, dg, db, &mut dr2);
            }
            let mut dy1 = dr2.clone();
            let mut dff = dr2;
            apply_mask(&mut dff, &c.mask_ff);
            let mut dhidden = vec![0.0; t * hd];
            {
                let (dw, db) = split_pair_sized(grad, o.w2, hd * d, o.b2, d);
                linear_backward(
                    &c.hidden,
                    t,
                    hd,
                    d,
                    &p[o.w2..o.w2 + hd * d],
                    &dff,
                    dw,
                    db,
                    Some(&mut dhidden),
                );
            }
            apply_mask(&mut dhidden, &c.mask_hidden);
            for (g, &u) in dhidden.iter_mut().zip(&c.pre_relu) {
                if u <= 0.0 {
                    *g = 0.0;
                }
            }
            {
                let (dw, db) = split_pair_sized(grad, o.w1, d * hd, o.b1, hd);
                linear_backward(
                    &c.y1,
                    t,
                    d,
                    hd,
                    &p[o.w1..o.w1 + d * hd],
                    &dhidden,
                    dw,
                    db,
                    Some(&mut dy1),
                );
            }
            // first sublayer
            let mut dr1 = vec![0.0; t * d];
            {
                let (dg, db) = split_pair(grad, o.ln1_g, o.ln1_b, d);
                layer_norm_backward(&c.norm1, t, d, &p[o.ln1_g..o.ln1_g + d], &dy1, dg, db, &mut dr1);
            }
            let mut dinput = dr1.clone();
            let mut dout = dr1;
            apply_mask(&mut dout, &c.mask_attn);
            let mut dattn = vec![0.0; t * d];
            {
                let (dw, db) = split_pair_sized(grad, o.wo, d * d, o.bo, d);
                linear_backward(
                    &c.attn,
                    t,
                    d,
                    d,
                    &p[o.wo..o.wo + d * d],
                    &dout,
                    dw,
                    db,
                    Some(&mut dattn),
                );
            }
            let mut dq = vec![0.0; t * d];
            let mut dk = vec![0.0; t * d];
            let mut dv = vec![0.0; t * d];
            let mut dprob = vec![0.0; t];
            for h in 0..nh {
                let c0 = h * dh;
                for i in 0..t {
                    let row = &c.probs[(h * t + i) * t..(h * t + i + 1) * t];
                    let mut dot = 0.0;
                    for j in 0..t {
                        if row[j] == 0.0 && !allowed(i, j, padded) {
                            dprob[j] = 0.0;
                            continue;
                        }
                        let mut s = 0.0;
                        for cc in 0..dh {
                            let da = dattn[i * d + c0 + cc];
                            s += da * c.v[j * d + c0 + cc];
                            dv[j * d + c0 + cc] += row[j] * da;
                        }
                        dprob[j] = s;
                        dot += row[j] * s;
                    }
                    for j in 0..t {
                        if !allowed(i, j, padded) {
                            continue;
                        }
                        let ds = row[j] * (dprob[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for cc in 0..dh {
                            dq[i * d + c0 + cc] += ds * c.k[j * d + c0 + cc];
                            dk[j * d + c0 + cc] += ds * c.q[i * d + c0 + cc];
                        }
                    }
                }
            }
            for (wo, bo, dy) in [(o.wq, o.bq, &dq), (o.wk, o.bk, &dk), (o.wv, o.bv, &dv)] {
                let (dw, db) = split_pair_sized(grad, wo, d * d, bo, d);
                linear_backward(&c.input, t, d, d, &p[wo..wo + d * d], dy, dw, db, Some(&mut dinput));
            }
            dz = dinput;
        }
        apply_mask(&mut dz, &trace.mask_embed);
        let (dw, db) = split_pair_sized(grad, lay.embed_w, w * d, lay.embed_b, d);
        linear_backward(x, t, w, d, &p[lay.embed_w..lay.embed_w + w * d], &dz, dw, db, None);
    }

    /// Evaluation-mode prediction for one window with `padded` leading
    /// padding rows.
    pub fn predict(&self, x: &[f64], padded: usize) -> Result<f64> {
        self.check_input(x, padded)?;
        Ok(self.run(x, padded, None).prediction)
    }

    /// Per-layer block outputs (`n_layers` entries of `lookback x d_model`)
    /// in evaluation mode.
    pub fn layer_outputs(&self, x: &[f64], padded: usize) -> Result<Vec<Vec<f64>>> {
        self.check_input(x, padded)?;
        let tr = self.run(x, padded, None);
        let mut outs: Vec<Vec<f64>> = tr.layers.iter().skip(1).map(|l| l.input.clone()).collect();
        outs.push(tr.output);
        Ok(outs)
    }

    /// Forward and backward pass for one window. `dloss` maps the prediction
    /// to the loss derivative; gradients are added into `grad`. Dropout is
    /// active when `dropout_seed` is set.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        padded: usize,
        dropout_seed: Option<u64>,
        dloss: impl FnOnce(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_input(x, padded)?;
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} gradient entries", self.params.len()),
                found: format!("{}", grad.len()),
            });
        }
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let trace = self.run(x, padded, rng.as_mut());
        let g = dloss(trace.prediction);
        self.backward(x, padded, &trace, g, grad);
        Ok(trace.prediction)
    }
}

fn split_pair(grad: &mut [f64], a: usize, b: usize, n: usize) -> (&mut [f64], &mut [f64]) {
    split_pair_sized(grad, a, n, b, n)
}

/// Disjoint mutable views `grad[a..a+na]` and `grad[b..b+nb]` with `a < b`.
fn split_pair_sized(grad: &mut [f64], a: usize, na: usize, b: usize, nb: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + na <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + na], &mut hi[..nb])
}
