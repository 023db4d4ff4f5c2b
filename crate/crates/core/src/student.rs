//! Feed-forward student network trained on teacher query/mixup pairs with
//! the imitation (MSE) loss, Adam with decoupled weight decay, and a
//! step learning-rate schedule.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::SequencePair;

const CKPT_MAGIC: &[u8; 8] = b"EDMLP\0\0\0";
const CKPT_VERSION: u32 = 1;

pub const DEFAULT_HIDDEN: [usize; 3] = [80, 80, 80];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// How series are scaled before reaching the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the fixed `normalization_scale` (the society population).
    #[default]
    Population,
    /// Divide each pair by the peak of its own observation, falling back to
    /// `normalization_scale` for an all-zero observation.
    Peak,
}

impl Normalization {
    fn tag(self) -> u8 {
        match self {
            Normalization::Population => 0,
            Normalization::Peak => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Normalization::Population),
            1 => Some(Normalization::Peak),
            _ => None,
        }
    }

    /// Divisor applied to `observation` and to the matching target.
    pub fn factor(self, normalization_scale: f64, observation: &[f64]) -> f64 {
        match self {
            Normalization::Population => normalization_scale,
            Normalization::Peak => {
                let peak = observation.iter().copied().fold(0.0, f64::max);
                if peak > 0.0 {
                    peak
                } else {
                    normalization_scale
                }
            }
        }
    }
}

/// Affine layer `y = x W + b`, with `W` stored as `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub normalization: Normalization,
    /// Series are divided by this before the network and multiplied back after.
    pub normalization_scale: f64,
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases alike.
    pub fn new(dims: &[usize], normalization_scale: f64, seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("bad layer dimensions {dims:?}")));
        }
        if !(normalization_scale.is_finite() && normalization_scale > 0.0) {
            return Err(Error::config(format!(
                "normalization scale must be positive, got {normalization_scale}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((d[0], d[1]), || rng.random_range(-bound..bound));
                let bias = Array1::from_shape_simple_fn(d[1], || rng.random_range(-bound..bound));
                Layer { weights, bias }
            })
            .collect();
        Ok(MlpModel {
            layers,
            activation: Activation::Relu,
            normalization: Normalization::Population,
            normalization_scale,
        })
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Divisor used for `observation` at both training and prediction time.
    pub fn scale_for(&self, observation: &[f64]) -> f64 {
        self.normalization
            .factor(self.normalization_scale, observation)
    }

    /// The default student: calibration window in, 80-80-80 hidden,
    /// calibration + projection window out.
    pub fn student(
        calibration_len: usize,
        projection_len: usize,
        normalization_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![calibration_len];
        dims.extend(DEFAULT_HIDDEN);
        dims.push(calibration_len + projection_len);
        MlpModel::new(&dims, normalization_scale, seed)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weights.nrows()];
        d.extend(self.layers.iter().map(|l| l.weights.ncols()));
        d
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.ncols())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Batched forward pass on scaled inputs, one row per example.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Error::check_len(self.input_len(), x.ncols(), "network input")?;
        Ok(self.forward_cached(x).pop().unwrap_or_else(|| x.to_owned()))
    }

    /// Forward pass for one scaled input.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let out = self.forward_batch(x.insert_axis(Axis(0)))?;
        Ok(out.row(0).to_owned())
    }

    /// Activations after every layer (the last entry is the linear output).
    fn forward_cached(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let mut z = input.dot(&layer.weights);
            z += &layer.bias;
            if k + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Gradients of the mean-squared-error loss over `(x, y)` (scaled), and
    /// the loss itself. Weight decay is not included.
    pub fn backward(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(f64, Gradients)> {
        Error::check_len(self.input_len(), x.ncols(), "network input")?;
        Error::check_len(self.output_len(), y.ncols(), "network target")?;
        Error::check_len(x.nrows(), y.nrows(), "batch rows")?;
        if x.nrows() == 0 {
            return Err(Error::config("empty batch"));
        }
        let acts = self.forward_cached(x);
        let pred = acts.last().expect("at least one layer");
        let diff = pred - &y;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: 0,
                batch: 0,
                loss,
            });
        }
        let mut delta = diff * (2.0 / count);
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let input = if k == 0 { x } else { acts[k - 1].view() };
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut back = delta.dot(&self.layers[k].weights.t());
                Zip::from(&mut back).and(&acts[k - 1]).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer {
                weights: gw,
                bias: gb,
            });
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("model has no layers"));
        }
        for w in self.layers.windows(2) {
            if w[0].weights.ncols() != w[1].weights.nrows() {
                return Err(Error::config("layer dimension chain is inconsistent"));
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::config("bias length does not match layer width"));
            }
        }
        if !self.params_finite() {
            return Err(Error::InvalidState(
                "model has non-finite parameters".into(),
            ));
        }
        Ok(())
    }
}

/// Mean of squared differences over every position.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    Error::check_len(target.len(), pred.len(), "loss prediction vs target")?;
    if pred.is_empty() {
        return Err(Error::config("loss of empty sequences"));
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.1,
            weight_decay: 1e-5,
            epochs: 300,
            lr_decay_epochs: vec![100, 200],
            lr_decay_factor: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be positive"));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lr_decay_factor", self.lr_decay_factor),
            ("eps", self.eps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam moment decays must lie in [0, 1)"));
        }
        if let Some(e) = self
            .lr_decay_epochs
            .iter()
            .find(|&&e| e == 0 || e >= self.epochs)
        {
            return Err(Error::config(format!(
                "decay epoch {e} must lie strictly inside 1..{}",
                self.epochs
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
}

impl Adam {
    fn new(model: &MlpModel) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let (b1, b2, eps, wd) = (cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
        let apply = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
        };
        for (k, layer) in model.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&grads.layers[k].weights)
                .and(&mut self.m[k].weights)
                .and(&mut self.v[k].weights)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
            Zip::from(&mut layer.bias)
                .and(&grads.layers[k].bias)
                .and(&mut self.m[k].bias)
                .and(&mut self.v[k].bias)
                .for_each(|p, &g, m, v| apply(p, g, m, v));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Sample-weighted mean training loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Trains `model` in place of its current parameters on already-scaled
/// inputs and targets (one row per example).
pub fn train(
    mut model: MlpModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    Error::check_len(model.input_len(), inputs.ncols(), "training inputs")?;
    Error::check_len(model.output_len(), targets.ncols(), "training targets")?;
    Error::check_len(inputs.nrows(), targets.nrows(), "training rows")?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::config("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = inputs.select(Axis(0), idx);
            let yb = targets.select(Axis(0), idx);
            let (loss, grads) = model.backward(xb.view(), yb.view()).map_err(|e| match e {
                Error::Divergence { loss, .. } => Error::Divergence {
                    epoch,
                    batch: b,
                    loss,
                },
                other => other,
            })?;
            total += loss * idx.len() as f64;
            adam.update(&mut model, &grads, lr, cfg);
        }
        let mean = total / n as f64;
        log::debug!("epoch {epoch}: lr = {lr:e}, loss = {mean:e}");
        history.push(mean);
    }
    if !model.params_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            batch: 0,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Stacks observation/projection pairs into scaled training matrices.
pub fn training_matrices(
    pairs: &[&SequencePair],
    normalization: Normalization,
    normalization_scale: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::config("empty training set"))?;
    let (cal, out) = (first.observation.len(), first.projection.len());
    let mut x = Array2::zeros((pairs.len(), cal));
    let mut y = Array2::zeros((pairs.len(), out));
    for (r, p) in pairs.iter().enumerate() {
        Error::check_len(cal, p.observation.len(), "training observation")?;
        Error::check_len(out, p.projection.len(), "training projection")?;
        let scale = normalization.factor(normalization_scale, &p.observation);
        x.row_mut(r)
            .assign(&ArrayView1::from(&p.observation).mapv(|v| v / scale));
        y.row_mut(r)
            .assign(&ArrayView1::from(&p.projection).mapv(|v| v / scale));
    }
    Ok((x, y))
}

/// Builds the default student for the pairs' window lengths and trains it.
pub fn train_student(
    pairs: &[&SequencePair],
    cfg: &TrainConfig,
    normalization: Normalization,
    normalization_scale: f64,
    init_seed: u64,
) -> Result<TrainOutcome> {
    let (x, y) = training_matrices(pairs, normalization, normalization_scale)?;
    let cal = x.ncols();
    let model = MlpModel::student(cal, y.ncols() - cal, normalization_scale, init_seed)?
        .with_normalization(normalization);
    train(model, &x, &y, cfg)
}

/// Forecast in persons/day: scale, run the network, unscale, clamp at zero.
pub fn predict(model: &MlpModel, observation: &[f64]) -> Result<Vec<f64>> {
    Error::check_len(
        model.input_len(),
        observation.len(),
        "observation vs network input",
    )?;
    let scale = model.scale_for(observation);
    let x = ArrayView1::from(observation).mapv(|v| v / scale);
    let out = model.forward(x.view())?;
    Ok(out.iter().map(|v| (v * scale).max(0.0)).collect())
}

impl MlpModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Little-endian layout:
    ///
    /// ```text
    /// magic "EDMLP\0\0\0" | version u32 | activation u8 | normalization u8
    /// normalization_scale f64
    /// n_layers u32 | dims (n_layers + 1) x u32
    /// per layer: weights (in x out, row-major) f64, bias (out) f64
    /// ```
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_u32::<LittleEndian>(CKPT_VERSION)?;
        w.write_u8(self.activation.tag())?;
        w.write_u8(self.normalization.tag())?;
        w.write_f64::<LittleEndian>(self.normalization_scale)?;
        w.write_u32::<LittleEndian>(self.layers.len() as u32)?;
        for d in self.dims() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        MlpModel::read_from(&mut r).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                Error::format(path, "truncated checkpoint")
            }
            Error::Format { reason, .. } => Error::format(path, reason),
            other => other,
        })
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(Error::format("<checkpoint>", "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CKPT_VERSION {
            return Err(Error::format(
                "<checkpoint>",
                format!("unsupported version {version}"),
            ));
        }
        let activation = Activation::from_tag(r.read_u8()?)
            .ok_or_else(|| Error::format("<checkpoint>", "unknown activation"))?;
        let normalization = Normalization::from_tag(r.read_u8()?)
            .ok_or_else(|| Error::format("<checkpoint>", "unknown normalization"))?;
        let normalization_scale = r.read_f64::<LittleEndian>()?;
        let n_layers = r.read_u32::<LittleEndian>()? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::format(
                "<checkpoint>",
                format!("implausible layer count {n_layers}"),
            ));
        }
        let mut dims = vec![0u32; n_layers + 1];
        r.read_u32_into::<LittleEndian>(&mut dims)?;
        let mut layers = Vec::with_capacity(n_layers);
        for d in dims.windows(2) {
            let (i, o) = (d[0] as usize, d[1] as usize);
            let mut wbuf = vec![0.0; i * o];
            r.read_f64_into::<LittleEndian>(&mut wbuf)?;
            let mut bbuf = vec![0.0; o];
            r.read_f64_into::<LittleEndian>(&mut bbuf)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((i, o), wbuf)
                    .map_err(|e| Error::format("<checkpoint>", e.to_string()))?,
                bias: Array1::from(bbuf),
            });
        }
        let model = MlpModel {
            layers,
            activation,
            normalization,
            normalization_scale,
        };
        model
            .validate()
            .map_err(|e| Error::format("<checkpoint>", e.to_string()))?;
        Ok(model)
    }
}

/// Writes `epoch,learning_rate,mean_loss` rows.
pub fn write_loss_history(path: &Path, cfg: &TrainConfig, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "learning_rate", "mean_loss"])?;
    for (e, l) in history.iter().enumerate() {
        w.write_record([
            e.to_string(),
            cfg.learning_rate_at(e).to_string(),
            l.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};

    fn forward_rows(model: &MlpModel, x: ArrayView2<f64>) -> Vec<Array1<f64>> {
        (0..x.nrows())
            .map(|r| model.forward(x.slice(s![r, ..])).unwrap())
            .collect()
    }

    fn zero_model(dims: &[usize]) -> MlpModel {
        let mut m = MlpModel::new(dims, 1.0, 0).unwrap();
        for l in &mut m.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        m
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = zero_model(&[4, 3, 5]);
        let out = m.forward(array![1.0, -2.0, 3.0, 0.5].view()).unwrap();
        assert_eq!(out, Array1::<f64>::zeros(5));
    }

    #[test]
    fn hand_worked_two_neuron_network() {
        // 2 -> 2 (relu) -> 1
        let mut m = zero_model(&[2, 2, 1]);
        m.layers[0].weights = array![[1.0, -1.0], [2.0, 0.5]];
        m.layers[0].bias = array![0.5, -3.0];
        m.layers[1].weights = array![[2.0], [-4.0]];
        m.layers[1].bias = array![1.0];
        // x = (1, 1): z1 = (1 + 2 + 0.5, -1 + 0.5 - 3) = (3.5, -3.5) -> relu (3.5, 0)
        // y = 2 * 3.5 + 1 = 8
        let y = m.forward(array![1.0, 1.0].view()).unwrap();
        assert_eq!(y, array![8.0]);
        // x = (-1, 2): z1 = (-1 + 4 + 0.5, 1 + 1 - 3) = (3.5, -1) -> (3.5, 0) -> 8
        // x = (0, -1): z1 = (-2 + 0.5, -0.5 - 3) -> (0, 0) -> 1
        assert_eq!(m.forward(array![0.0, -1.0].view()).unwrap(), array![1.0]);
    }

    #[test]
    fn batched_forward_equals_single_forwards() {
        let m = MlpModel::new(&[6, 5, 4, 3], 1.0, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_simple_fn((9, 6), || rng.random_range(-1.0..1.0));
        let batch = m.forward_batch(x.view()).unwrap();
        for (r, single) in forward_rows(&m, x.view()).iter().enumerate() {
            for (a, b) in batch.row(r).iter().zip(single) {
                assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
            }
        }
        assert!(m.forward(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn loss_examples() {
        let y = [1.0, -2.0, 3.5];
        assert_eq!(mse_loss(&y, &y).unwrap(), 0.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 0.5).collect();
        assert_eq!(mse_loss(&shifted, &y).unwrap(), 0.25);
        // (1, 4, 0, 9, 0.25) / 5 = 14.25 / 5
        let p = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = [2.0, 0.0, 3.0, 7.0, 5.5];
        assert!((mse_loss(&p, &t).unwrap() - 2.85).abs() < 1e-15);
        assert!(mse_loss(&p, &t[..4]).is_err());
    }

    #[test]
    fn zero_error_batch_has_zero_gradient() {
        let m = MlpModel::new(&[3, 4, 2], 1.0, 5).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-0.3, 0.0, 0.9]];
        let y = m.forward_batch(x.view()).unwrap();
        let (loss, g) = m.backward(x.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        for l in &g.layers {
            assert!(l.weights.iter().chain(l.bias.iter()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let m = MlpModel::new(&[3, 4, 2], 1.0, 6).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-0.3, 0.4, 0.9]];
        let y = array![[1.0, 0.0], [0.5, -0.5]];
        let xx = ndarray::concatenate![Axis(0), x, x];
        let yy = ndarray::concatenate![Axis(0), y, y];
        let (l1, g1) = m.backward(x.view(), y.view()).unwrap();
        let (l2, g2) = m.backward(xx.view(), yy.view()).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (u, v) in a
                .weights
                .iter()
                .chain(a.bias.iter())
                .zip(b.weights.iter().chain(b.bias.iter()))
            {
                assert!((u - v).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn non_finite_loss_is_divergence() {
        let m = MlpModel::new(&[2, 2], 1.0, 0).unwrap();
        let x = array![[f64::NAN, 0.0]];
        let y = array![[0.0, 0.0]];
        assert!(matches!(
            m.backward(x.view(), y.view()),
            Err(Error::Divergence { .. })
        ));
        let cfg = TrainConfig {
            epochs: 2,
            lr_decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let err = train(m, &x, &y, &cfg).unwrap_err();
        assert!(matches!(
            err,
            Error::Divergence {
                epoch: 0,
                batch: 0,
                ..
            }
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let m = MlpModel::new(&[3, 4, 2], 1.0, 8).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-0.3, 0.4, 0.9]];
        let y = array![[1.0, 0.0], [0.5, -0.5]];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            lr_decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let out = train(m.clone(), &x, &y, &cfg).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.loss_history.len(), 5);
    }

    #[test]
    fn schedule_and_config_validation() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.learning_rate_at(0), 0.1);
        assert!((cfg.learning_rate_at(100) - 0.01).abs() < 1e-15);
        assert!((cfg.learning_rate_at(299) - 0.001).abs() < 1e-15);
        let bad = TrainConfig {
            lr_decay_epochs: vec![300],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn memorizes_a_single_pair() {
        let obs: Vec<f64> = (0..10).map(|t| 3.0 + t as f64).collect();
        let proj: Vec<f64> = (0..14)
            .map(|t| 3.0 + t as f64 + 0.1 * (t as f64).powi(2))
            .collect();
        let pair = SequencePair {
            observation: obs,
            projection: proj,
            provenance: crate::pool::Provenance::Query {
                grid_indices: vec![],
            },
        };
        let scale = 20.0;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 2000,
            lr_decay_epochs: vec![],
            ..TrainConfig::default()
        };
        let out = train_student(&[&pair], &cfg, Normalization::Population, scale, 1).unwrap();
        let target: Vec<f64> = pair.projection.iter().map(|v| v / scale).collect();
        let mean = target.iter().sum::<f64>() / target.len() as f64;
        let var = target.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / target.len() as f64;
        let final_loss = *out.loss_history.last().unwrap();
        assert!(
            final_loss <= 1e-6 * var,
            "loss {final_loss} vs variance {var}"
        );

        let pred = predict(&out.model, &pair.observation).unwrap();
        for (p, t) in pred.iter().zip(&pair.projection) {
            assert!((p - t).abs() < 1e-2 * t.abs().max(1.0));
        }
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let m = MlpModel::student(12, 3, 1e5, 2).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        let back = MlpModel::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.dims(), vec![12, 80, 80, 80, 15]);

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            MlpModel::read_from(&mut bad.as_slice()),
            Err(Error::Format { .. })
        ));
        assert!(MlpModel::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn predict_checks_length_and_clamps() {
        let mut m = zero_model(&[3, 2]);
        m.layers[0].bias = array![-1.0, 2.0];
        m.normalization_scale = 10.0;
        assert_eq!(predict(&m, &[0.0; 3]).unwrap(), vec![0.0, 20.0]);
        assert!(predict(&m, &[0.0; 4]).is_err());
    }

    #[test]
    fn peak_normalization_scales_by_observation_max() {
        let mut m = zero_model(&[3, 2]).with_normalization(Normalization::Peak);
        m.layers[0].bias = array![0.5, 1.5];
        m.normalization_scale = 10.0;
        assert_eq!(predict(&m, &[2.0, 8.0, 4.0]).unwrap(), vec![4.0, 12.0]);
        // all-zero observation falls back to the fixed scale
        assert_eq!(predict(&m, &[0.0; 3]).unwrap(), vec![5.0, 15.0]);

        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(MlpModel::read_from(&mut bytes.as_slice()).unwrap(), m);
        bytes[13] = 7;
        assert!(matches!(
            MlpModel::read_from(&mut bytes.as_slice()),
            Err(Error::Format { .. })
        ));
    }
}
