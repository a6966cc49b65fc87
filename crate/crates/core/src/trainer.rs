//! Dense ReLU softmax classifier trained with SGD + momentum.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::dropmix::{dropmix_step, DropMixConfig};
use crate::error::{Error, Result};
use crate::msda::{GradientSaliency, InputGradients, KernelSpec, Method, SaliencyProvider};
use crate::rng::{keys, RngStream};
use crate::tensor::{validate_distributions, LabeledBatch, Tensor};

/// Anything that maps feature rows to class probabilities.
pub trait Classifier {
    fn n_outputs(&self) -> usize;
    fn predict_proba(&self, features: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weights: Tensor,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    pub layers: Vec<Layer>,
}

/// Parameter gradients in the same layout as [`Mlp::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub layers: Vec<Layer>,
}

impl Grads {
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(&l.bias).copied())
            .collect()
    }
}

fn softmax_row(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `out[n, m] = a[n, k] * w[k, m] + b[m]`
fn affine(a: &[f64], n: usize, k: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let m = b.len();
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &wv) in orow.iter_mut().zip(&w[p * m..(p + 1) * m]) {
                *o += x * wv;
            }
        }
    }
    out
}

struct Activations {
    /// Inputs to each layer; `inputs[0]` is the feature batch.
    inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weights: Tensor::zeros(vec![w[0], w[1]]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Mlp {
            widths: widths.to_vec(),
            layers,
        })
    }

    /// He-scaled uniform weights `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// zero biases; layer `l` draws from the `(INIT, l)` child stream.
    pub fn init(widths: &[usize], stream: &RngStream) -> Result<Self> {
        let mut m = Mlp::zeros(widths)?;
        for (l, layer) in m.layers.iter_mut().enumerate() {
            let mut s = stream.derive(keys::INIT, l as u64);
            let bound = (6.0 / widths[l] as f64).sqrt();
            for w in layer.weights.data_mut() {
                *w = (2.0 * s.uniform() - 1.0) * bound;
            }
        }
        Ok(m)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.data().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters for a model with {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut it = flat.iter();
        for l in &mut self.layers {
            for (w, v) in l.weights.data_mut().iter_mut().zip(&mut it) {
                *w = *v;
            }
            for (b, v) in l.bias.iter_mut().zip(&mut it) {
                *b = *v;
            }
        }
        Ok(())
    }

    fn check_input(&self, features: &Tensor) -> Result<()> {
        if features.shape().len() != 2 || features.row_len() != self.n_inputs() {
            return Err(Error::Shape(format!(
                "features {:?} for a model with {} inputs",
                features.shape(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    fn activations(&self, features: &Tensor) -> Result<Activations> {
        self.check_input(features)?;
        let n = features.rows();
        let mut inputs = vec![features.data().to_vec()];
        let last = self.layers.len() - 1;
        let mut logits = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = affine(
                &inputs[l],
                n,
                self.widths[l],
                layer.weights.data(),
                &layer.bias,
            );
            if l == last {
                logits = z;
            } else {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
                inputs.push(z);
            }
        }
        Ok(Activations { inputs, logits })
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        let act = self.activations(features)?;
        let m = *self.widths.last().unwrap();
        let mut p = act.logits;
        for row in p.chunks_mut(m) {
            softmax_row(row);
        }
        Tensor::new(vec![features.rows(), m], p)
    }

    /// Backpropagates `d_logits` (already scaled) and returns parameter
    /// gradients together with the gradient with respect to the input.
    fn backward(
        &self,
        act: &Activations,
        mut delta: Vec<f64>,
        n: usize,
        want_input: bool,
    ) -> (Grads, Vec<f64>) {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let (k, m) = (self.widths[l], self.widths[l + 1]);
            let a = &act.inputs[l];
            let mut gw = vec![0.0; k * m];
            let mut gb = vec![0.0; m];
            for i in 0..n {
                let drow = &delta[i * m..(i + 1) * m];
                for (g, &d) in gb.iter_mut().zip(drow) {
                    *g += d;
                }
                for p in 0..k {
                    let x = a[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    for (g, &d) in gw[p * m..(p + 1) * m].iter_mut().zip(drow) {
                        *g += x * d;
                    }
                }
            }
            grads.push(Layer {
                weights: Tensor::new(vec![k, m], gw).expect("gradient shape"),
                bias: gb,
            });
            if l == 0 && !want_input {
                break;
            }
            let w = self.layers[l].weights.data();
            let mut prev = vec![0.0; n * k];
            for i in 0..n {
                let drow = &delta[i * m..(i + 1) * m];
                for p in 0..k {
                    // ReLU gate for hidden inputs; layer 0 input is raw features
                    if l > 0 && a[i * k + p] <= 0.0 {
                        continue;
                    }
                    prev[i * k + p] = w[p * m..(p + 1) * m]
                        .iter()
                        .zip(drow)
                        .map(|(wv, d)| wv * d)
                        .sum();
                }
            }
            delta = prev;
        }
        grads.reverse();
        (Grads { layers: grads }, delta)
    }
}

impl Classifier for Mlp {
    fn n_outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn predict_proba(&self, features: &Tensor) -> Result<Tensor> {
        self.forward(features)
    }
}

impl InputGradients for Mlp {
    fn input_gradients(&self, batch: &LabeledBatch) -> Result<Tensor> {
        check_batch(self, batch)?;
        let act = self.activations(&batch.features)?;
        let m = self.n_outputs();
        let mut delta = act.logits.clone();
        for (i, row) in delta.chunks_mut(m).enumerate() {
            softmax_row(row);
            for (d, y) in row.iter_mut().zip(batch.labels.row(i)) {
                *d -= y;
            }
        }
        let (_, dx) = self.backward(&act, delta, batch.len(), true);
        Tensor::new(batch.features.shape().to_vec(), dx)
    }
}

fn check_batch(model: &Mlp, batch: &LabeledBatch) -> Result<()> {
    if batch.n_classes() != model.n_outputs() {
        return Err(Error::Shape(format!(
            "{} label columns for a model with {} outputs",
            batch.n_classes(),
            model.n_outputs()
        )));
    }
    validate_distributions(&batch.labels)
}

/// Mean soft-label cross-entropy `-sum y log p` and its exact gradients.
pub fn loss_and_grads(model: &Mlp, batch: &LabeledBatch) -> Result<(f64, Grads)> {
    check_batch(model, batch)?;
    let act = model.activations(&batch.features)?;
    let (n, m) = (batch.len(), model.n_outputs());
    let mut loss = 0.0;
    let mut delta = act.logits.clone();
    for (i, row) in delta.chunks_mut(m).enumerate() {
        let y = batch.labels.row(i);
        let lse = log_sum_exp(row);
        for (z, &t) in row.iter().zip(y) {
            if t > 0.0 {
                loss -= t * (z - lse);
            }
        }
        softmax_row(row);
        for (d, &t) in row.iter_mut().zip(y) {
            *d = (*d - t) / n as f64;
        }
    }
    let (grads, _) = model.backward(&act, delta, n, false);
    Ok((loss / n as f64, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            epochs: 60,
            learning_rate: 0.1,
            decay_factor: 0.1,
            decay_epochs: vec![30, 45],
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter("decay epochs must be strictly increasing".into()));
        }
        if self.decay_epochs.iter().any(|&e| e >= self.epochs) && self.epochs > 0 {
            return Err(Error::Parameter("decay epochs must be < epochs".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Parameter("batch size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Parameter("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.decay_factor.powi(decays as i32)
    }
}

/// Per-batch augmentation applied during training.
#[derive(Clone, Debug, PartialEq)]
pub enum Augmentation {
    None,
    Msda(KernelSpec),
    DropMix(DropMixConfig),
}

impl Augmentation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Augmentation::None => Ok(()),
            Augmentation::Msda(k) => k.validate(),
            Augmentation::DropMix(c) => c.validate(),
        }
    }

    fn apply(&self, model: &Mlp, batch: LabeledBatch, step: &RngStream) -> Result<(LabeledBatch, bool)> {
        let saliency = GradientSaliency(model);
        let provider: Option<&dyn SaliencyProvider> = Some(&saliency);
        match self {
            Augmentation::None => Ok((batch, false)),
            Augmentation::Msda(k) => {
                let (out, plan) = k.apply(&batch, step, provider)?;
                Ok((out, plan.method != Method::None))
            }
            Augmentation::DropMix(c) => {
                let (out, plan) = dropmix_step(&batch, c, step, provider)?;
                Ok((out, plan.method != Method::None))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub log: Vec<EpochLog>,
    pub steps: usize,
    pub mixed_steps: usize,
}

fn accuracy(model: &Mlp, data: &Dataset) -> Result<f64> {
    let p = model.forward(&data.features)?;
    let correct = (0..data.len())
        .filter(|&i| argmax(p.row(i)) == data.labels[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` in place of a copy and returns it with a per-epoch log.
///
/// Epoch `e` shuffles with the `(SHUFFLE, e)` stream; global step `t`
/// augments with the `(MIX, t)` stream. Batches shorter than two samples
/// are skipped.
pub fn train(
    model: &Mlp,
    data: &Dataset,
    schedule: &TrainSchedule,
    aug: &Augmentation,
    stream: &RngStream,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    aug.validate()?;
    if data.n_features() != model.n_inputs() || data.n_classes != model.n_outputs() {
        return Err(Error::Shape(format!(
            "dataset ({} features, {} classes) vs model widths {:?}",
            data.n_features(),
            data.n_classes,
            model.widths()
        )));
    }
    let mut model = model.clone();
    let mut velocity: Vec<Layer> = model
        .layers
        .iter()
        .map(|l| Layer {
            weights: Tensor::zeros(l.weights.shape().to_vec()),
            bias: vec![0.0; l.bias.len()],
        })
        .collect();
    let mut log = Vec::with_capacity(schedule.epochs);
    let (mut step, mut mixed_steps) = (0usize, 0usize);
    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let order = stream.derive(keys::SHUFFLE, epoch as u64).permutation(data.len());
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(schedule.batch_size) {
            if idx.len() < 2 {
                continue;
            }
            let batch = data.batch(idx)?;
            let (batch, mixed) = aug.apply(&model, batch, &stream.derive(keys::MIX, step as u64))?;
            mixed_steps += mixed as usize;
            let (loss, grads) = loss_and_grads(&model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
            for ((layer, g), v) in model.layers.iter_mut().zip(&grads.layers).zip(&mut velocity) {
                let pairs = layer
                    .weights
                    .data_mut()
                    .iter_mut()
                    .chain(layer.bias.iter_mut())
                    .zip(g.weights.data().iter().chain(&g.bias))
                    .zip(v.weights.data_mut().iter_mut().chain(v.bias.iter_mut()));
                for ((w, &gw), vel) in pairs {
                    let d = gw + schedule.weight_decay * *w;
                    *vel = schedule.momentum * *vel + d;
                    *w -= lr * *vel;
                }
            }
            loss_sum += loss;
            batches += 1;
            step += 1;
        }
        let eval_acc = eval.map(|e| accuracy(&model, e)).transpose()?;
        log.push(EpochLog {
            epoch,
            lr,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            eval_acc,
        });
    }
    Ok(TrainOutcome {
        model,
        log,
        steps: step,
        mixed_steps,
    })
}

/// `epoch,lr,train_loss,eval_acc` rows.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,train_loss,eval_acc\n");
    for e in log {
        let acc = e.eval_acc.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.lr, e.train_loss, acc));
    }
    out
}

const MXMD_MAGIC: &[u8; 4] = b"MXMD";
const MXMD_VERSION: u32 = 1;

/// Checkpoint layout: magic `MXMD`, u32 version, u32 layer-width count,
/// u32 widths, then per layer the `[fan_in, fan_out]` weights row-major
/// followed by the biases, all little-endian f64.
pub fn encode_model(model: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + model.widths.len() * 4 + model.n_params() * 8);
    out.extend_from_slice(MXMD_MAGIC);
    out.extend_from_slice(&MXMD_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.widths.len() as u32).to_le_bytes());
    for &w in &model.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for v in model.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Mlp> {
    let u32_at = |off: usize| {
        bytes
            .get(off..off + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format(off, "truncated header"))
    };
    if bytes.get(..4) != Some(MXMD_MAGIC.as_slice()) {
        return Err(Error::format(0, "bad magic, expected MXMD"));
    }
    if u32_at(4)? != MXMD_VERSION {
        return Err(Error::format(4, "unsupported version"));
    }
    let n = u32_at(8)? as usize;
    let widths = (0..n)
        .map(|i| u32_at(12 + 4 * i).map(|w| w as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut model = Mlp::zeros(&widths).map_err(|_| Error::format(12, "invalid widths"))?;
    let start = 12 + 4 * n;
    let need = start + model.n_params() * 8;
    if bytes.len() != need {
        return Err(Error::format(
            bytes.len().min(need),
            format!("expected {need} bytes, found {}", bytes.len()),
        ));
    }
    let params: Vec<f64> = bytes[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.set_params(&params)?;
    Ok(model)
}

pub fn save_model(model: &Mlp, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Mlp> {
    decode_model(&fs::read(path)?)
}
