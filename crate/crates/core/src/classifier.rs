//! Multi-output model with a softmax head, trained by minibatch Adam on
//! cross-entropy.
//!
//! Pixels `p ∈ {0..255}` enter as `x = 2p/255 - 1`. The default basis is
//! `L_0, …, L_{b-1}`, so with `c = 1` every factor starts at exactly 1 and the
//! 784-fold products start at 1 as well.

use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PltmError, Result};
use crate::idx::{mnist_paths, read_idx, IdxData};
use crate::legendre::{dot, eval_basis_into, BasisFamily, BasisSpec, Interval};
use crate::model::{init_model, InitConfig, LtmModel};
use crate::optim::{AdamConfig, AdamState};

pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images as rows of reals in `[-1, 1]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistDataset {
    dim: usize,
    images: Vec<f64>,
    labels: Vec<u8>,
    pub split: Split,
}

impl MnistDataset {
    pub fn new(dim: usize, images: Vec<f64>, labels: Vec<u8>, split: Split) -> Result<Self> {
        if dim == 0 || images.len() != dim * labels.len() {
            return Err(PltmError::ShapeMismatch {
                expected: dim * labels.len(),
                actual: images.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| usize::from(l) >= CLASSES) {
            return Err(PltmError::InvalidParameter {
                name: "labels",
                reason: format!("label {l} out of range"),
            });
        }
        Ok(Self {
            dim,
            images,
            labels,
            split,
        })
    }

    pub fn from_idx(raw: &IdxData, split: Split) -> Result<Self> {
        let images = raw.pixels.iter().map(|&p| 2.0 * f64::from(p) / 255.0 - 1.0).collect();
        Self::new(raw.rows * raw.cols, images, raw.labels.clone(), split)
    }

    pub fn load(images_path: &Path, labels_path: &Path, split: Split) -> Result<Self> {
        Self::from_idx(&read_idx(images_path, labels_path)?, split)
    }

    /// Loads `train-*` or `t10k-*` from a directory holding the standard files.
    pub fn load_dir(dir: &Path, split: Split) -> Result<Self> {
        let prefix = match split {
            Split::Train => "train",
            Split::Test => "t10k",
        };
        let (i, l) = mnist_paths(dir, prefix);
        Self::load(&i, &l, split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self, n: usize) -> &[f64] {
        &self.images[n * self.dim..(n + 1) * self.dim]
    }

    pub fn label(&self, n: usize) -> usize {
        usize::from(self.labels[n])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Samples `range` as a new dataset.
    pub fn slice(&self, range: Range<usize>, split: Split) -> Self {
        Self {
            dim: self.dim,
            images: self.images[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
            split,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub rank: usize,
    pub bases: usize,
    pub family: BasisFamily,
    pub init: InitConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            bases: 3,
            family: BasisFamily::LegendreFromZero,
            init: InitConfig::default(),
            adam: AdamConfig {
                lr: 3e-4,
                ..AdamConfig::default()
            },
            epochs: 20,
            batch_size: 128,
            shuffle_seed: 0,
        }
    }
}

impl ClassifierConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("rank", self.rank),
            ("bases", self.bases),
            ("epochs", self.epochs),
            ("batch-size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(PltmError::InvalidParameter {
                    name,
                    reason: "must be at least 1".into(),
                });
            }
        }
        if !(self.adam.lr > 0.0) {
            return Err(PltmError::InvalidParameter {
                name: "lr",
                reason: format!("learning rate must be positive, got {}", self.adam.lr),
            });
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<BasisSpec> {
        BasisSpec::new(Interval::reference(), self.family, self.bases)
    }
}

/// `c` such that `c·P_1` has geometric-mean magnitude 1 over the pixels of
/// `data`, keeping the initial 784-fold products near 1.
pub fn calibrated_init_c(basis: &BasisSpec, data: &MnistDataset) -> f64 {
    let mut vals = vec![0.0; basis.count];
    let mut scratch = Vec::new();
    let mut log_sum = 0.0;
    for &x in &data.images {
        eval_basis_into(basis, x, &mut scratch, &mut vals);
        log_sum += vals[0].abs().max(1e-12).ln();
    }
    (-log_sum / data.images.len().max(1) as f64).exp()
}

/// Gradient of the loss with respect to the coefficients and output weights,
/// laid out like [`LtmModel::coeffs`] and [`LtmModel::out_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub coeffs: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ModelGradient {
    fn zeros(model: &LtmModel) -> Self {
        Self {
            coeffs: vec![0.0; model.coeffs().len()],
            weights: vec![0.0; model.outputs() * model.rank()],
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
    }

    fn scale(&mut self, s: f64) {
        self.coeffs.iter_mut().chain(self.weights.iter_mut()).for_each(|g| *g *= s);
    }
}

/// Per-thread buffers for one forward pass.
struct Workspace {
    table: Vec<f64>,
    scratch: Vec<f64>,
    factors: Vec<f64>,
    prefix: Vec<f64>,
    suffix: Vec<f64>,
    terms: Vec<f64>,
    logits: Vec<f64>,
}

impl Workspace {
    fn new(model: &LtmModel) -> Self {
        let (r, d, b) = (model.rank(), model.dim(), model.bases());
        Self {
            table: vec![0.0; d * b],
            scratch: Vec::with_capacity(b + 2),
            factors: vec![0.0; r * d],
            prefix: vec![0.0; r * (d + 1)],
            suffix: vec![0.0; r * (d + 1)],
            terms: vec![0.0; r],
            logits: vec![0.0; model.outputs()],
        }
    }

    /// Fills `terms` and `logits`; with `keep` also the prefix/suffix products
    /// needed for the backward pass.
    fn forward(&mut self, model: &LtmModel, x: &[f64], keep: bool) {
        let (r, d, b) = (model.rank(), model.dim(), model.bases());
        for (j, &xj) in x.iter().enumerate() {
            eval_basis_into(model.basis(), xj, &mut self.scratch, &mut self.table[j * b..(j + 1) * b]);
        }
        for i in 0..r {
            let f = &mut self.factors[i * d..(i + 1) * d];
            for (j, fj) in f.iter_mut().enumerate() {
                *fj = dot(model.factor(i, j), &self.table[j * b..(j + 1) * b]);
            }
            if keep {
                let pre = &mut self.prefix[i * (d + 1)..(i + 1) * (d + 1)];
                pre[0] = 1.0;
                for j in 0..d {
                    pre[j + 1] = pre[j] * f[j];
                }
                let suf = &mut self.suffix[i * (d + 1)..(i + 1) * (d + 1)];
                suf[d] = 1.0;
                for j in (0..d).rev() {
                    suf[j] = suf[j + 1] * f[j];
                }
                self.terms[i] = pre[d];
            } else {
                self.terms[i] = f.iter().product();
            }
        }
        for (l, z) in self.logits.iter_mut().enumerate() {
            *z = (0..r).map(|i| model.weight(l, i) * self.terms[i]).sum();
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Summed loss of `samples`, with the summed gradient added into `grad`.
fn accumulate(
    model: &LtmModel,
    data: &MnistDataset,
    samples: &[usize],
    ws: &mut Workspace,
    grad: &mut ModelGradient,
) -> f64 {
    let (r, d, b, m) = (model.rank(), model.dim(), model.bases(), model.outputs());
    let mut loss = 0.0;
    let mut dz = vec![0.0; m];
    for &n in samples {
        ws.forward(model, data.image(n), true);
        let y = data.label(n);
        let lse = log_sum_exp(&ws.logits);
        loss += lse - ws.logits[y];
        for (l, g) in dz.iter_mut().enumerate() {
            *g = (ws.logits[l] - lse).exp() - if l == y { 1.0 } else { 0.0 };
        }
        for i in 0..r {
            let mut g_term = 0.0;
            for (l, &g) in dz.iter().enumerate() {
                grad.weights[l * r + i] += g * ws.terms[i];
                g_term += g * model.weight(l, i);
            }
            let pre = &ws.prefix[i * (d + 1)..];
            let suf = &ws.suffix[i * (d + 1)..];
            let block = &mut grad.coeffs[i * d * b..(i + 1) * d * b];
            for j in 0..d {
                let s = g_term * pre[j] * suf[j + 1];
                for (gk, &p) in block[j * b..(j + 1) * b].iter_mut().zip(&ws.table[j * b..(j + 1) * b]) {
                    *gk += s * p;
                }
            }
        }
    }
    loss
}

const CHUNK: usize = 16;

fn check_model(model: &LtmModel, data: &MnistDataset) -> Result<()> {
    if model.out_weights().is_none() || model.outputs() != CLASSES {
        return Err(PltmError::Unsupported(format!(
            "classification needs a model with {CLASSES} outputs"
        )));
    }
    if model.dim() != data.dim() {
        return Err(PltmError::ShapeMismatch {
            expected: model.dim(),
            actual: data.dim(),
        });
    }
    Ok(())
}

/// Mean cross-entropy of the samples `batch` (indices into `data`) and its
/// gradient. Work is split into fixed chunks that are summed in order, so the
/// result does not depend on the number of threads.
pub fn cross_entropy_loss(
    model: &LtmModel,
    data: &MnistDataset,
    batch: &[usize],
) -> Result<(f64, ModelGradient)> {
    check_model(model, data)?;
    if batch.is_empty() {
        return Err(PltmError::InvalidParameter {
            name: "batch",
            reason: "empty batch".into(),
        });
    }
    let parts: Vec<(f64, ModelGradient)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = Workspace::new(model);
            let mut grad = ModelGradient::zeros(model);
            let loss = accumulate(model, data, chunk, &mut ws, &mut grad);
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = ModelGradient::zeros(model);
    for (l, g) in &parts {
        loss += l;
        grad.add(g);
    }
    let inv = 1.0 / batch.len() as f64;
    grad.scale(inv);
    Ok((loss * inv, grad))
}

/// Index of the largest logit, lowest index on ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (l, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = l;
        }
    }
    best
}

/// Predicted class of every sample.
pub fn predict(model: &LtmModel, data: &MnistDataset) -> Result<Vec<usize>> {
    check_model(model, data)?;
    Ok((0..data.len())
        .into_par_iter()
        .map_init(
            || Workspace::new(model),
            |ws, n| {
                ws.forward(model, data.image(n), false);
                argmax(&ws.logits)
            },
        )
        .collect())
}

/// Fraction of samples whose predicted class matches the label.
pub fn evaluate(model: &LtmModel, data: &MnistDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(PltmError::InvalidParameter {
            name: "data",
            reason: "cannot evaluate on an empty dataset".into(),
        });
    }
    let predicted = predict(model, data)?;
    let correct = predicted
        .iter()
        .enumerate()
        .filter(|&(n, &p)| p == data.label(n))
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Smallest and largest `log10 |rank term|` over the first `probe` samples.
pub fn term_magnitude_range(model: &LtmModel, data: &MnistDataset, probe: usize) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for n in 0..probe.min(data.len()) {
        for v in model.log10_term_magnitudes(data.image(n))? {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub log10_term_range: (f64, f64),
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LtmModel,
    pub epochs: Vec<EpochSummary>,
}

/// Trains a fresh model on `train`; the result depends only on the config.
pub fn train_classifier(config: &ClassifierConfig, train: &MnistDataset) -> Result<TrainOutcome> {
    train_classifier_with(config, train, |_| {})
}

/// As [`train_classifier`], reporting after every epoch.
pub fn train_classifier_with(
    config: &ClassifierConfig,
    train: &MnistDataset,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(PltmError::InvalidParameter {
            name: "train",
            reason: "empty training set".into(),
        });
    }
    let start = Instant::now();
    let basis = config.basis()?;
    let mut model = init_model(config.rank, train.dim(), basis, Some(CLASSES), &config.init)?;
    let mut adam_a = AdamState::new(model.coeffs().len(), config.adam);
    let mut adam_w = AdamState::new(CLASSES * config.rank, config.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = cross_entropy_loss(&model, train, batch)?;
            step += 1;
            if !loss.is_finite() {
                return Err(PltmError::NonFiniteLoss {
                    iteration: step,
                    value: loss,
                });
            }
            total += loss * batch.len() as f64;
            adam_a.step(model.coeffs_mut(), &grad.coeffs)?;
            if let Some(w) = model.out_weights_mut() {
                adam_w.step(w, &grad.weights)?;
            }
        }
        let summary = EpochSummary {
            epoch,
            mean_loss: total / train.len() as f64,
            log10_term_range: term_magnitude_range(&model, train, 32)?,
            elapsed_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&summary);
        epochs.push(summary);
    }
    Ok(TrainOutcome { model, epochs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::max_relative_deviation;
    use rand::Rng;

    fn synthetic(n: usize, dim: usize, seed: u64) -> MnistDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|_| rng.gen_range(0..CLASSES as u8)).collect();
        MnistDataset::new(dim, images, labels, Split::Train).unwrap()
    }

    fn random_model(rank: usize, dim: usize, b: usize, seed: u64) -> LtmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, b).unwrap();
        let coeffs = (0..rank * dim * b).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = (0..CLASSES * rank).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LtmModel::from_parts(rank, dim, basis, coeffs, Some(w)).unwrap()
    }

    #[test]
    fn uniform_logits_cost_ln_10() {
        let data = synthetic(5, 4, 1);
        let mut model = random_model(3, 4, 2, 2);
        model.out_weights_mut().unwrap().fill(0.0);
        let (loss, _) = cross_entropy_loss(&model, &data, &[0, 1, 2, 3, 4]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15, "{loss}");
    }

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert_eq!(p, vec![0.5, 0.5, 0.0]);
        let p = softmax(&[0.0; 10]);
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-16));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = synthetic(6, 4, 3);
        let batch: Vec<usize> = (0..6).collect();
        for seed in 0..3 {
            let model = random_model(3, 4, 2, 10 + seed);
            let (_, grad) = cross_entropy_loss(&model, &data, &batch).unwrap();
            let loss_at = |coeffs: &[f64], weights: &[f64]| {
                let m = LtmModel::from_parts(3, 4, *model.basis(), coeffs.to_vec(), Some(weights.to_vec())).unwrap();
                cross_entropy_loss(&m, &data, &batch).unwrap().0
            };
            let w = model.out_weights().unwrap();
            let fd_a = crate::numeric::central_difference(|a| loss_at(a, w), model.coeffs(), 1e-6);
            let fd_w = crate::numeric::central_difference(|w| loss_at(model.coeffs(), w), w, 1e-6);
            assert!(max_relative_deviation(&grad.coeffs, &fd_a, 1e-3) < 1e-5);
            assert!(max_relative_deviation(&grad.weights, &fd_w, 1e-3) < 1e-5);
        }
    }

    #[test]
    fn confident_correct_prediction_has_near_zero_loss() {
        let data = MnistDataset::new(2, vec![0.3, -0.2], vec![4], Split::Test).unwrap();
        let basis = BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, 2).unwrap();
        let mut w = vec![0.0; CLASSES];
        w[4] = 200.0;
        let model = LtmModel::from_parts(1, 2, basis, vec![1.0, 0.0, 1.0, 0.0], Some(w)).unwrap();
        let (loss, _) = cross_entropy_loss(&model, &data, &[0]).unwrap();
        assert!(loss < 1e-80, "{loss}");
        assert_eq!(evaluate(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.0; 10]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    }

    #[test]
    fn constant_model_accuracy_is_the_class_frequency() {
        let data = synthetic(50, 3, 4);
        let basis = BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, 2).unwrap();
        let mut w = vec![0.0; CLASSES];
        w[7] = 1.0;
        let model = LtmModel::from_parts(1, 3, basis, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0], Some(w)).unwrap();
        let sevens = data.labels().iter().filter(|&&l| l == 7).count();
        assert_eq!(evaluate(&model, &data).unwrap(), sevens as f64 / 50.0);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = synthetic(40, 6, 5);
        let cfg = ClassifierConfig {
            rank: 4,
            bases: 3,
            epochs: 3,
            batch_size: 8,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = train_classifier(&cfg, &data).unwrap();
        let b = train_classifier(&cfg, &data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epochs.len(), 3);
        assert!(a.epochs[2].mean_loss < a.epochs[0].mean_loss);
        let other = train_classifier(&ClassifierConfig { shuffle_seed: 9, ..cfg }, &data).unwrap();
        assert_ne!(a.model, other.model);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = synthetic(4, 3, 6);
        assert!(MnistDataset::new(3, vec![0.0; 5], vec![1, 2], Split::Train).is_err());
        assert!(MnistDataset::new(1, vec![0.0], vec![10], Split::Train).is_err());
        let single = LtmModel::from_parts(
            1,
            3,
            BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, 1).unwrap(),
            vec![1.0; 3],
            None,
        )
        .unwrap();
        assert!(cross_entropy_loss(&single, &data, &[0]).is_err());
        let model = random_model(2, 3, 2, 7);
        assert!(cross_entropy_loss(&model, &data, &[]).is_err());
        let cfg = ClassifierConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(train_classifier(&cfg, &data).is_err());
    }

    #[test]
    fn calibration_is_one_for_a_constant_first_basis() {
        let data = synthetic(10, 5, 8);
        let basis = BasisSpec::new(Interval::reference(), BasisFamily::LegendreFromZero, 3).unwrap();
        assert_eq!(calibrated_init_c(&basis, &data), 1.0);
        let plain = BasisSpec::new(Interval::reference(), BasisFamily::PlainLegendre, 3).unwrap();
        assert!(calibrated_init_c(&plain, &data) > 1.0);
    }
}
