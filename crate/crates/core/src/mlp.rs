//! Fully connected ReLU network with a SoftMax head over the T2 grid.
//!
//! Two input conventions share the backbone: `miml` sees the normalized
//! echo amplitudes only, `p2t2` sees amplitudes followed by the echo times in
//! seconds. Everything is f64 and batched through ndarray matrix products.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bootstrap::sample_subset;
use crate::distribution::{w1_unchecked, T2Distribution};
use crate::error::{dim, param, Error, Result};
use crate::grid::T2Grid;
use crate::io::{ensure_parent, sha256_hex};
use crate::rng::{derive_labeled, seeded, stream_rng, Rng};
use crate::schedule::EchoSignal;
use crate::synth::Dataset;

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const HIDDEN_LAYERS: usize = 12;
pub const HIDDEN_WIDTH: usize = 256;
const LOG_EPS: f64 = 1e-12;
/// Echo times enter the network in seconds.
pub const TE_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Miml,
    P2t2,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Miml => "miml",
            Variant::P2t2 => "p2t2",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "miml" => Ok(Variant::Miml),
            "p2t2" => Ok(Variant::P2t2),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

impl Variant {
    pub fn input_len(self, echoes: usize) -> usize {
        match self {
            Variant::Miml => echoes,
            Variant::P2t2 => 2 * echoes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsetMode {
    #[default]
    Full,
    RandomM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub loss: LossKind,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 256,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            loss: LossKind::CrossEntropy,
            seed: 0,
            validation_fraction: 0.1,
            hidden_layers: HIDDEN_LAYERS,
            hidden_width: HIDDEN_WIDTH,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(param("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(param("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(param("validation_fraction must be in [0, 1)"));
        }
        if self.hidden_width == 0 {
            return Err(param("hidden_width must be >= 1"));
        }
        Ok(())
    }
}

/// Provenance and learning curves of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainMeta {
    pub dataset_hash: String,
    pub epochs: usize,
    pub seed: u64,
    pub subset_mode: SubsetMode,
    pub config: Option<TrainConfig>,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Validation loss per epoch.
    pub val_curve: Vec<f64>,
    /// Loss on the training split before the first update.
    pub initial_loss: Option<f64>,
    /// Mean W1 (ms) between prediction and truth on the validation split.
    pub val_mean_w1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerJson {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    variant: Variant,
    input_echoes: usize,
    layer_dims: Vec<usize>,
    grid: T2Grid,
    weights: Vec<LayerJson>,
    train_meta: TrainMeta,
}

/// Weights of one affine layer: `w` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    variant: Variant,
    input_echoes: usize,
    layers: Vec<Layer>,
    grid: Arc<T2Grid>,
    pub train_meta: TrainMeta,
}

/// Gradients laid out like [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

/// Row-wise SoftMax with max subtraction.
pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Mean loss of predictions `p` against targets `t` (rows are samples).
pub fn loss_value(p: &ArrayView2<f64>, t: &ArrayView2<f64>, kind: LossKind) -> f64 {
    let n = p.nrows() as f64;
    match kind {
        LossKind::CrossEntropy => {
            -Zip::from(p).and(t).fold(0.0, |acc, &pi, &ti| acc + ti * (pi + LOG_EPS).ln()) / n
        }
        LossKind::Mse => Zip::from(p).and(t).fold(0.0, |acc, &pi, &ti| acc + (pi - ti).powi(2)) / n,
    }
}

/// Gradient of [`loss_value`] with respect to the logits.
pub fn logit_gradient(p: &ArrayView2<f64>, t: &ArrayView2<f64>, kind: LossKind) -> Array2<f64> {
    let n = p.nrows() as f64;
    let mut g = match kind {
        LossKind::CrossEntropy => Zip::from(p).and(t).map_collect(|&pi, &ti| -ti / (pi + LOG_EPS) / n),
        LossKind::Mse => Zip::from(p).and(t).map_collect(|&pi, &ti| 2.0 * (pi - ti) / n),
    };
    // SoftMax Jacobian: dz = p ⊙ (g − ⟨g, p⟩)
    for (mut gr, pr) in g.rows_mut().into_iter().zip(p.rows()) {
        let dot: f64 = gr.iter().zip(pr.iter()).map(|(a, b)| a * b).sum();
        Zip::from(&mut gr).and(&pr).for_each(|gi, &pi| *gi = pi * (*gi - dot));
    }
    g
}

/// Network input for one signal: `s` alone, or `s ⊕ TE/1000`.
pub fn assemble_input(variant: Variant, normalized: &[f64], te_ms: Option<&[f64]>) -> Result<Vec<f64>> {
    match (variant, te_ms) {
        (Variant::Miml, Some(_)) => Err(Error::Contract("miml models take no echo times".into())),
        (Variant::P2t2, None) => Err(Error::Contract("p2t2 models need echo times".into())),
        (Variant::Miml, None) => Ok(normalized.to_vec()),
        (Variant::P2t2, Some(te)) => {
            if te.len() != normalized.len() {
                return Err(dim(format!("{} amplitudes but {} echo times", normalized.len(), te.len())));
            }
            let mut x = normalized.to_vec();
            x.extend(te.iter().map(|t| t * TE_SCALE));
            Ok(x)
        }
    }
}

impl MlpModel {
    /// Freshly initialized network (He-uniform weights, zero biases).
    pub fn new(
        variant: Variant,
        input_echoes: usize,
        hidden: &[usize],
        grid: &Arc<T2Grid>,
        seed: u64,
    ) -> Result<Self> {
        if input_echoes == 0 {
            return Err(param("model needs at least one input echo"));
        }
        let mut dims = vec![variant.input_len(input_echoes)];
        dims.extend_from_slice(hidden);
        dims.push(grid.len());
        let mut rng = seeded(derive_labeled(seed, "init"));
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                Layer {
                    w: Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..bound)),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(MlpModel {
            variant,
            input_echoes,
            layers,
            grid: Arc::clone(grid),
            train_meta: TrainMeta::default(),
        })
    }

    /// The standard 12 × 256 backbone.
    pub fn standard(variant: Variant, input_echoes: usize, grid: &Arc<T2Grid>, seed: u64) -> Result<Self> {
        MlpModel::new(variant, input_echoes, &[HIDDEN_WIDTH; HIDDEN_LAYERS], grid, seed)
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Number of echoes the model expects.
    pub fn input_echoes(&self) -> usize {
        self.input_echoes
    }

    pub fn input_len(&self) -> usize {
        self.variant.input_len(self.input_echoes)
    }

    pub fn grid(&self) -> &Arc<T2Grid> {
        &self.grid
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].w.ncols()];
        d.extend(self.layers.iter().map(|l| l.w.nrows()));
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Logits for a batch of assembled inputs, plus the hidden activations
    /// (input first) needed for backprop.
    fn forward_trace(&self, x: &ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w.t());
            z += &layer.b;
            acts.push(a);
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        (acts, a)
    }

    /// SoftMax outputs for a batch of assembled inputs (one row per sample).
    pub fn forward_batch(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_len() {
            return Err(dim(format!(
                "input has {} features, model expects {}",
                x.ncols(),
                self.input_len()
            )));
        }
        let (_, mut z) = self.forward_trace(x);
        softmax_rows(&mut z);
        Ok(z)
    }

    /// Predict from first-echo-normalized amplitudes and, for p2t2, the echo times in ms.
    pub fn forward(&self, normalized: &[f64], te_ms: Option<&[f64]>) -> Result<T2Distribution> {
        if normalized.len() != self.input_echoes {
            return Err(dim(format!(
                "signal has {} echoes, model expects {}",
                normalized.len(),
                self.input_echoes
            )));
        }
        let x = assemble_input(self.variant, normalized, te_ms)?;
        let x = Array2::from_shape_vec((1, x.len()), x).map_err(|e| dim(e.to_string()))?;
        let p = self.forward_batch(&x.view())?;
        T2Distribution::from_unnormalized(&self.grid, p.row(0).to_vec())
    }

    /// Normalize an echo train and predict, passing echo times when the variant needs them.
    pub fn predict(&self, signal: &EchoSignal) -> Result<T2Distribution> {
        let s = signal.normalized_amplitudes();
        match self.variant {
            Variant::Miml => self.forward(&s, None),
            Variant::P2t2 => self.forward(&s, Some(&signal.echo_times)),
        }
    }

    /// Assembled input row for a signal (normalized here).
    pub fn input_row(&self, signal: &EchoSignal) -> Result<Vec<f64>> {
        if signal.len() != self.input_echoes {
            return Err(dim(format!(
                "signal has {} echoes, model expects {}",
                signal.len(),
                self.input_echoes
            )));
        }
        let s = signal.normalized_amplitudes();
        match self.variant {
            Variant::Miml => assemble_input(self.variant, &s, None),
            Variant::P2t2 => assemble_input(self.variant, &s, Some(&signal.echo_times)),
        }
    }

    /// Batch loss and its gradient with respect to every weight and bias.
    pub fn loss_and_grad(
        &self,
        x: &ArrayView2<f64>,
        targets: &ArrayView2<f64>,
        kind: LossKind,
    ) -> Result<(f64, Gradients)> {
        if x.nrows() == 0 {
            return Err(param("empty batch"));
        }
        if x.ncols() != self.input_len() || targets.ncols() != self.grid.len() || targets.nrows() != x.nrows() {
            return Err(dim("batch shape does not match the model"));
        }
        let (acts, mut z) = self.forward_trace(x);
        softmax_rows(&mut z);
        let loss = loss_value(&z.view(), targets, kind);
        let mut dz = logit_gradient(&z.view(), targets, kind);
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a_prev = &acts[l];
            let dw = dz.t().dot(a_prev);
            let db = dz.sum_axis(Axis(0));
            grads.push(Layer { w: dw, b: db });
            if l > 0 {
                let mut da = dz.dot(&self.layers[l].w);
                Zip::from(&mut da).and(a_prev).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                dz = da;
            }
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// Write the model as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            variant: self.variant,
            input_echoes: self.input_echoes,
            layer_dims: self.layer_dims(),
            grid: (*self.grid).clone(),
            weights: self
                .layers
                .iter()
                .map(|l| LayerJson {
                    w: l.w.rows().into_iter().map(|r| r.to_vec()).collect(),
                    b: l.b.to_vec(),
                })
                .collect(),
            train_meta: self.train_meta.clone(),
        };
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &file)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Read and validate a model written by [`MlpModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))
            .map_err(|e| corrupt(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: file.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let dims = &file.layer_dims;
        if dims.len() < 2 || file.weights.len() != dims.len() - 1 {
            return Err(Error::Validation("layer_dims do not match the weight list".into()));
        }
        if dims[0] != file.variant.input_len(file.input_echoes) {
            return Err(Error::Validation(format!(
                "a {} model with {} echoes needs {} inputs, file has {}",
                file.variant,
                file.input_echoes,
                file.variant.input_len(file.input_echoes),
                dims[0]
            )));
        }
        if dims[dims.len() - 1] != file.grid.len() {
            return Err(Error::Validation("output width differs from grid size".into()));
        }
        let mut layers = Vec::with_capacity(file.weights.len());
        for (k, lj) in file.weights.into_iter().enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            if lj.w.len() != fan_out || lj.w.iter().any(|r| r.len() != fan_in) || lj.b.len() != fan_out {
                return Err(Error::Validation(format!("layer {k} has the wrong shape")));
            }
            let flat: Vec<f64> = lj.w.into_iter().flatten().collect();
            if flat.iter().chain(&lj.b).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("layer {k} has non-finite weights")));
            }
            layers.push(Layer {
                w: Array2::from_shape_vec((fan_out, fan_in), flat).map_err(|e| corrupt(e.to_string()))?,
                b: Array1::from(lj.b),
            });
        }
        Ok(MlpModel {
            variant: file.variant,
            input_echoes: file.input_echoes,
            layers,
            grid: Arc::new(file.grid),
            train_meta: file.train_meta,
        })
    }
}

/// Identifies a generated dataset by its manifest (config and seed fix every byte).
pub fn dataset_fingerprint(data: &Dataset) -> String {
    sha256_hex(serde_json::to_string(&data.manifest).unwrap_or_default().as_bytes())
}

enum OptState {
    Adam { m: Vec<Layer>, v: Vec<Layer>, t: i32 },
    Sgd { vel: Vec<Layer> },
}

fn zeros_like(layers: &[Layer]) -> Vec<Layer> {
    layers
        .iter()
        .map(|l| Layer {
            w: Array2::zeros(l.w.raw_dim()),
            b: Array1::zeros(l.b.raw_dim()),
        })
        .collect()
}

impl OptState {
    fn new(kind: Optimizer, layers: &[Layer]) -> Self {
        match kind {
            Optimizer::Adam => OptState::Adam {
                m: zeros_like(layers),
                v: zeros_like(layers),
                t: 0,
            },
            Optimizer::SgdMomentum => OptState::Sgd { vel: zeros_like(layers) },
        }
    }

    fn step(&mut self, params: &mut [Layer], grads: &Gradients, lr: f64) {
        match self {
            OptState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for (((p, g), m), v) in params.iter_mut().zip(&grads.layers).zip(m).zip(v) {
                    let upd = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                    };
                    Zip::from(&mut p.w).and(&g.w).and(&mut m.w).and(&mut v.w).for_each(upd);
                    Zip::from(&mut p.b).and(&g.b).and(&mut m.b).and(&mut v.b).for_each(upd);
                }
            }
            OptState::Sgd { vel } => {
                const MU: f64 = 0.9;
                for ((p, g), u) in params.iter_mut().zip(&grads.layers).zip(vel) {
                    let upd = |p: &mut f64, g: &f64, u: &mut f64| {
                        *u = MU * *u - lr * g;
                        *p += *u;
                    };
                    Zip::from(&mut p.w).and(&g.w).and(&mut u.w).for_each(upd);
                    Zip::from(&mut p.b).and(&g.b).and(&mut u.b).for_each(upd);
                }
            }
        }
    }
}

/// Assemble network inputs for `rows` of `data`, drawing echo subsets when needed.
fn batch_inputs(
    model: &MlpModel,
    data: &Dataset,
    rows: &[usize],
    mode: SubsetMode,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let n_all = data.schedule().n_echoes();
    let m = model.input_echoes;
    let mut x = Array2::zeros((rows.len(), model.input_len()));
    let mut t = Array2::zeros((rows.len(), data.grid.len()));
    for (r, &i) in rows.iter().enumerate() {
        let s = &data.samples[i];
        let full = s.signal_noisy.normalized_amplitudes();
        let idx: Vec<usize> = match mode {
            SubsetMode::Full => (0..n_all).collect(),
            SubsetMode::RandomM => sample_subset(n_all, m, rng)?,
        };
        let amps: Vec<f64> = idx.iter().map(|&k| full[k]).collect();
        let te: Vec<f64> = idx.iter().map(|&k| s.signal_noisy.echo_times[k]).collect();
        let row = match model.variant {
            Variant::Miml => assemble_input(Variant::Miml, &amps, None)?,
            Variant::P2t2 => assemble_input(Variant::P2t2, &amps, Some(&te))?,
        };
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
        t.row_mut(r).assign(&ndarray::ArrayView1::from(s.truth.weights()));
    }
    Ok((x, t))
}

/// Train a fresh network on `data`.
///
/// `Full` uses every echo; `RandomM` draws, per sample and epoch, a fresh
/// subset of `m` echoes that always contains the first one.
pub fn train(
    variant: Variant,
    data: &Dataset,
    mode: SubsetMode,
    m: usize,
    config: &TrainConfig,
) -> Result<MlpModel> {
    config.validate()?;
    let n_all = data.schedule().n_echoes();
    let echoes = match mode {
        SubsetMode::Full => n_all,
        SubsetMode::RandomM => {
            if m > n_all || m < 2 {
                return Err(param(format!("subset size {m} outside 2..={n_all}")));
            }
            m
        }
    };
    let hidden = vec![config.hidden_width; config.hidden_layers];
    let mut model = MlpModel::new(variant, echoes, &hidden, &data.grid, config.seed)?;

    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    order.shuffle(&mut seeded(derive_labeled(config.seed, "split")));
    let n_val = (data.samples.len() as f64 * config.validation_fraction).round() as usize;
    let (val_rows, train_rows) = order.split_at(n_val);
    let val_rows = {
        let mut v = val_rows.to_vec();
        v.sort_unstable();
        v
    };
    let mut train_rows = train_rows.to_vec();
    train_rows.sort_unstable();

    // Validation subsets are drawn once so the curve is comparable across epochs.
    let val_batch = if val_rows.is_empty() {
        None
    } else {
        let mut vrng = stream_rng(derive_labeled(config.seed, "validation"), 0);
        Some(batch_inputs(&model, data, &val_rows, mode, &mut vrng)?)
    };
    let eval_loss = |model: &MlpModel, xb: &Array2<f64>, tb: &Array2<f64>| -> Result<f64> {
        let mut total = 0.0;
        for start in (0..xb.nrows()).step_by(1024) {
            let end = (start + 1024).min(xb.nrows());
            let p = model.forward_batch(&xb.slice(ndarray::s![start..end, ..]))?;
            total += loss_value(&p.view(), &tb.slice(ndarray::s![start..end, ..]), config.loss) * (end - start) as f64;
        }
        Ok(total / xb.nrows() as f64)
    };

    let mut rng = stream_rng(derive_labeled(config.seed, "train"), 0);
    let mut opt = OptState::new(config.optimizer, &model.layers);
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = Vec::with_capacity(config.epochs);
    let initial_loss = if train_rows.is_empty() {
        None
    } else {
        let probe: Vec<usize> = train_rows.iter().copied().take(2048).collect();
        let mut prng = stream_rng(derive_labeled(config.seed, "probe"), 0);
        let (xb, tb) = batch_inputs(&model, data, &probe, mode, &mut prng)?;
        Some(eval_loss(&model, &xb, &tb)?)
    };
    for _epoch in 0..config.epochs {
        let mut perm = train_rows.clone();
        perm.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in perm.chunks(config.batch_size) {
            let (xb, tb) = batch_inputs(&model, data, chunk, mode, &mut rng)?;
            let (loss, grads) = model.loss_and_grad(&xb.view(), &tb.view(), config.loss)?;
            opt.step(&mut model.layers, &grads, config.learning_rate);
            sum += loss * chunk.len() as f64;
        }
        loss_curve.push(if perm.is_empty() { f64::NAN } else { sum / perm.len() as f64 });
        if let Some((xv, tv)) = &val_batch {
            val_curve.push(eval_loss(&model, xv, tv)?);
        }
    }
    let val_mean_w1 = match &val_batch {
        Some((xv, _)) => {
            let p = model.forward_batch(&xv.view())?;
            let w: f64 = p
                .rows()
                .into_iter()
                .zip(&val_rows)
                .map(|(row, &i)| w1_unchecked(&row.to_vec(), data.samples[i].truth.weights(), data.grid.values()))
                .sum();
            Some(w / val_rows.len() as f64)
        }
        None => None,
    };
    model.train_meta = TrainMeta {
        dataset_hash: dataset_fingerprint(data),
        epochs: config.epochs,
        seed: config.seed,
        subset_mode: mode,
        config: Some(config.clone()),
        loss_curve,
        val_curve,
        initial_loss,
        val_mean_w1,
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, GenerationConfig};
    use ndarray::array;

    fn grid() -> Arc<T2Grid> {
        Arc::new(T2Grid::default_log())
    }

    #[test]
    fn standard_shape() {
        let m = MlpModel::standard(Variant::P2t2, 32, &grid(), 1).unwrap();
        let d = m.layer_dims();
        assert_eq!(d.len(), 14);
        assert_eq!(d[0], 64);
        assert!(d[1..13].iter().all(|&w| w == 256));
        assert_eq!(d[13], 60);
        assert_eq!(MlpModel::standard(Variant::Miml, 32, &grid(), 1).unwrap().input_len(), 32);
    }

    #[test]
    fn softmax_contract_even_for_extreme_inputs() {
        let m = MlpModel::new(Variant::Miml, 4, &[8, 8], &grid(), 2).unwrap();
        for x in [[1.0, 0.5, 0.2, 0.1], [1e300, -1e300, 1e200, 0.0], [0.0; 4]] {
            let p = m.forward(&x, None).unwrap();
            assert!(p.weights().iter().all(|&v| v >= 0.0));
            assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_contracts() {
        let m = MlpModel::new(Variant::P2t2, 3, &[8], &grid(), 3).unwrap();
        let s = [1.0, 0.6, 0.3];
        let te = [10.0, 20.0, 30.0];
        assert_eq!(m.forward(&s, Some(&te)).unwrap(), m.forward(&s, Some(&te)).unwrap());
        assert!(matches!(m.forward(&s, None), Err(Error::Contract(_))));
        assert!(matches!(m.forward(&s[..2], Some(&te[..2])), Err(Error::Dimension(_))));
        let mi = MlpModel::new(Variant::Miml, 3, &[8], &grid(), 3).unwrap();
        assert!(matches!(mi.forward(&s, Some(&te)), Err(Error::Contract(_))));
    }

    #[test]
    fn batch_rows_equal_single_forward_bitwise() {
        let m = MlpModel::new(Variant::P2t2, 14, &[256, 256, 256], &grid(), 4).unwrap();
        let mut rng = seeded(5);
        let rows: Vec<Vec<f64>> = (0..37)
            .map(|_| (0..28).map(|_| rng.random::<f64>()).collect())
            .collect();
        let x = Array2::from_shape_fn((37, 28), |(i, j)| rows[i][j]);
        let p = m.forward_batch(&x.view()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let xi = Array2::from_shape_vec((1, 28), r.clone()).unwrap();
            let pi = m.forward_batch(&xi.view()).unwrap();
            assert_eq!(pi.row(0), p.row(i));
        }
    }

    #[test]
    fn cross_entropy_minimum_at_truth() {
        let t = array![[0.2, 0.5, 0.3]];
        let z = t.mapv(f64::ln);
        let mut p = z.clone();
        softmax_rows(&mut p);
        let loss = loss_value(&p.view(), &t.view(), LossKind::CrossEntropy);
        let entropy: f64 = -t.iter().map(|v| v * v.ln()).sum::<f64>();
        assert!((loss - entropy).abs() < 1e-10);
        let g = logit_gradient(&p.view(), &t.view(), LossKind::CrossEntropy);
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn mse_two_bin_toy() {
        let p = array![[1.0, 0.0]];
        let t = array![[0.0, 1.0]];
        assert_eq!(loss_value(&p.view(), &t.view(), LossKind::Mse), 2.0);
        let p = array![[0.75, 0.25], [0.5, 0.5]];
        let t = array![[0.25, 0.75], [0.5, 0.5]];
        assert_eq!(loss_value(&p.view(), &t.view(), LossKind::Mse), 0.25);
    }

    fn tiny_data(count: usize) -> Dataset {
        generate_dataset(
            &GenerationConfig {
                count,
                ..Default::default()
            },
            17,
        )
        .unwrap()
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            hidden_layers: 2,
            hidden_width: 16,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let d = tiny_data(20);
        let m = train(Variant::P2t2, &d, SubsetMode::Full, 32, &tiny_config(0)).unwrap();
        assert!(m.train_meta.loss_curve.is_empty());
        let fresh = MlpModel::new(Variant::P2t2, 32, &[16, 16], &d.grid, 3).unwrap();
        assert_eq!(m.layers(), fresh.layers());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let d = tiny_data(200);
        let a = train(Variant::P2t2, &d, SubsetMode::RandomM, 14, &tiny_config(5)).unwrap();
        let b = train(Variant::P2t2, &d, SubsetMode::RandomM, 14, &tiny_config(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.input_echoes(), 14);
        let first = a.train_meta.initial_loss.unwrap();
        assert!(*a.train_meta.loss_curve.last().unwrap() < first);
        assert!(matches!(
            train(Variant::P2t2, &d, SubsetMode::RandomM, 33, &tiny_config(1)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny_data(30);
        let m = train(Variant::Miml, &d, SubsetMode::Full, 32, &tiny_config(1)).unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = MlpModel::load(&path).unwrap();
        assert_eq!(back, m);
        let mut rng = seeded(9);
        for _ in 0..100 {
            let x: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
            assert_eq!(m.forward(&x, None).unwrap(), back.forward(&x, None).unwrap());
        }
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(MlpModel::load(&path), Err(Error::Corrupt { .. })));
        std::fs::write(&path, text.replacen("\"variant\":\"miml\"", "\"variant\":\"p2t2\"", 1)).unwrap();
        assert!(matches!(MlpModel::load(&path), Err(Error::Validation(_))));
    }
}
