//! Softmax classifier trained by per-instance SGD under an OT loss, plus
//! ranking metrics.
//!
//! The model predicts `h(x; W) = softmax(Wᵀx)`. For a tangent loss gradient
//! `g` with respect to `h`, the chain rule through the softmax Jacobian
//! `diag(h) − hhᵀ` gives `∂ℓ/∂W = x (h ⊙ g − h (hᵀg))ᵀ`.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::measures::neg_entropy;
use crate::rot_loss::{loss_gradient_from_plan, rot_loss_with_gradient, smooth_target, LabelSpace, RotLossConfig};
use crate::sinkhorn::{entropic_ot, SinkhornConfig};

/// Magic bytes opening a model checkpoint.
pub const MODEL_MAGIC: &[u8; 8] = b"ROTMODEL";
/// Checkpoint format version.
pub const MODEL_VERSION: u8 = 1;

/// Per-sample losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// `M × L` weight matrix of a softmax model.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    weights: Array2<f64>,
}

impl SoftmaxModel {
    /// All-zero weights, which predict the uniform distribution.
    pub fn zeros(feature_dim: usize, label_count: usize) -> Self {
        Self {
            weights: Array2::zeros((feature_dim, label_count)),
        }
    }

    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::InvalidParameter("model needs M, L >= 1".into()));
        }
        if weights.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn label_count(&self) -> usize {
        self.weights.ncols()
    }

    /// Writes the checkpoint: magic, version byte, `M` and `L` as `u64`,
    /// then row-major `f64` weights, all little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = Vec::with_capacity(25 + 8 * self.weights.len());
        bytes.extend_from_slice(MODEL_MAGIC);
        bytes.push(MODEL_VERSION);
        bytes.extend_from_slice(&(self.feature_dim() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.label_count() as u64).to_le_bytes());
        for &w in self.weights.iter() {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 25 || &bytes[..8] != MODEL_MAGIC {
            return Err(Error::format(path, "not a model checkpoint"));
        }
        if bytes[8] != MODEL_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint version {}", bytes[8]),
            ));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let (m, l) = (word(9) as usize, word(17) as usize);
        let expected = m
            .checked_mul(l)
            .and_then(|c| c.checked_mul(8))
            .and_then(|c| c.checked_add(25))
            .ok_or_else(|| Error::format(path, "checkpoint dimensions overflow"))?;
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("{m}x{l} checkpoint needs {expected} bytes, file has {}", bytes.len()),
            ));
        }
        let values: Vec<f64> = bytes[25..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_weights(Array2::from_shape_vec((m, l), values).expect("length checked"))
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// `softmax(Wᵀx)` with the largest logit subtracted first.
pub fn softmax_forward(model: &SoftmaxModel, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != model.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "instance features vs model",
            expected: model.feature_dim(),
            found: x.len(),
        });
    }
    Ok(softmax(model.weights.t().dot(&x)))
}

fn softmax(logits: Array1<f64>) -> Array1<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.mapv(|z| (z - mx).exp());
    let total = e.sum();
    e / total
}

/// Per-sample training loss.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// Entropic `W₂²` with squared Euclidean ground cost at weight `lambda_gamma`.
    W22 {
        lambda_gamma: f64,
        sinkhorn: SinkhornConfig,
        target_smoothing_alpha: f64,
    },
    /// Robust OT loss.
    Rot(RotLossConfig),
}

impl LossKind {
    /// `W₂²` loss with the same defaults as [`RotLossConfig`].
    pub fn w22() -> Self {
        let d = RotLossConfig::default();
        LossKind::W22 {
            lambda_gamma: d.lambda_gamma,
            sinkhorn: d.sinkhorn,
            target_smoothing_alpha: d.target_smoothing_alpha,
        }
    }

    fn smoothing(&self) -> f64 {
        match self {
            LossKind::W22 {
                target_smoothing_alpha, ..
            } => *target_smoothing_alpha,
            LossKind::Rot(cfg) => cfg.target_smoothing_alpha,
        }
    }
}

/// Settings for [`sgd_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Coefficient of `‖W‖²`.
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 50,
            weight_decay: 0.0005,
            seed: 0,
            loss: LossKind::Rot(RotLossConfig::default()),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        match &self.loss {
            LossKind::Rot(cfg) => cfg.validate(),
            LossKind::W22 {
                lambda_gamma,
                sinkhorn,
                target_smoothing_alpha,
            } => {
                if !(*lambda_gamma > 0.0) {
                    return Err(Error::InvalidParameter("lambda_gamma must be positive".into()));
                }
                if !(0.0..1.0).contains(target_smoothing_alpha) {
                    return Err(Error::InvalidParameter("target smoothing must lie in [0, 1)".into()));
                }
                sinkhorn.validate()
            }
        }
    }
}

/// Loss and training state shared across samples.
struct Objective<'a> {
    kind: &'a LossKind,
    labels: &'a LabelSpace,
    sq_dist: Option<Array2<f64>>,
}

impl<'a> Objective<'a> {
    fn new(kind: &'a LossKind, labels: &'a LabelSpace) -> Self {
        let sq_dist = matches!(kind, LossKind::W22 { .. }).then(|| labels.squared_distances());
        Self { kind, labels, sq_dist }
    }

    /// Loss value and tangent gradient with respect to `h`.
    fn evaluate(&self, h: ArrayView1<'_, f64>, y_hat: ArrayView1<'_, f64>) -> Result<(f64, Array1<f64>)> {
        match self.kind {
            LossKind::Rot(cfg) => {
                let (out, grad) = rot_loss_with_gradient(h, y_hat, self.labels, cfg)?;
                Ok((out.value, grad))
            }
            LossKind::W22 {
                lambda_gamma, sinkhorn, ..
            } => {
                let cost = self.sq_dist.as_ref().expect("built for W22");
                let cfg = SinkhornConfig {
                    lambda_beta: *lambda_gamma,
                    ..*sinkhorn
                };
                let out = entropic_ot(cost.view(), h, y_hat, &cfg)?;
                let plan = out.plan.matrix();
                let value = out.plan.cost(cost.view()) + lambda_gamma * neg_entropy(plan);
                let grad = loss_gradient_from_plan(cost.view(), plan, *lambda_gamma)?;
                Ok((value, grad))
            }
        }
    }
}

/// Chains a tangent gradient `g` through the softmax: `h ⊙ g − h (hᵀg)`.
fn softmax_backward(h: ArrayView1<'_, f64>, g: ArrayView1<'_, f64>) -> Array1<f64> {
    let hg = h.dot(&g);
    Array1::from_shape_fn(h.len(), |l| h[l] * (g[l] - hg))
}

/// Loss of one instance and its gradient with respect to `W` (without the
/// weight-decay term).
pub fn sample_loss_and_gradient(
    model: &SoftmaxModel,
    x: ArrayView1<'_, f64>,
    y_hat: ArrayView1<'_, f64>,
    loss: &LossKind,
    labels: &LabelSpace,
) -> Result<(f64, Array2<f64>)> {
    check_label_space(model.label_count(), labels)?;
    let objective = Objective::new(loss, labels);
    let h = softmax_forward(model, x)?;
    let (value, g) = objective.evaluate(h.view(), y_hat)?;
    let dz = softmax_backward(h.view(), g.view());
    let grad = Array2::from_shape_fn(model.weights.dim(), |(m, l)| x[m] * dz[l]);
    Ok((value, grad))
}

fn check_label_space(label_count: usize, labels: &LabelSpace) -> Result<()> {
    if labels.len() != label_count {
        return Err(Error::DimensionMismatch {
            context: "label embeddings vs label count",
            expected: label_count,
            found: labels.len(),
        });
    }
    Ok(())
}

/// Progress of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch.
    pub mean_loss: f64,
    pub seconds: f64,
}

/// Trained model and per-epoch history.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: SoftmaxModel,
    pub epochs: Vec<EpochStats>,
}

/// Trains from zero weights, calling `on_epoch` after each epoch.
///
/// Every sample applies `W ← W − η (x dzᵀ + 2·weight_decay·W)`.
pub fn sgd_train_with(
    dataset: &Dataset,
    cfg: &TrainConfig,
    labels: &LabelSpace,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    check_label_space(dataset.label_count(), labels)?;
    let objective = Objective::new(&cfg.loss, labels);
    let alpha = cfg.loss.smoothing();
    let targets = (0..dataset.len())
        .map(|i| smooth_target(dataset.label_vector(i).view(), alpha))
        .collect::<Result<Vec<_>>>()?;
    let mut model = SoftmaxModel::zeros(dataset.feature_dim(), dataset.label_count());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eta = cfg.learning_rate;
    let decay = 2.0 * cfg.weight_decay;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let x = dataset.feature_row(i);
            let h = softmax_forward(&model, x)?;
            // An exact zero means the logit spread overflowed the softmax range.
            if h.iter().any(|&p| !p.is_finite() || p == 0.0) {
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            let (loss, g) = objective.evaluate(h.view(), targets[i].view())?;
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { epoch, loss });
            }
            total += loss;
            if eta == 0.0 {
                continue;
            }
            let dz = softmax_backward(h.view(), g.view());
            for (mut row, &xm) in model.weights.outer_iter_mut().zip(x.iter()) {
                for (w, &d) in row.iter_mut().zip(dz.iter()) {
                    *w -= eta * (xm * d + decay * *w);
                }
            }
        }
        if model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / dataset.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainReport { model, epochs: history })
}

/// [`sgd_train_with`] without a progress callback.
pub fn sgd_train(dataset: &Dataset, cfg: &TrainConfig, labels: &LabelSpace) -> Result<TrainReport> {
    sgd_train_with(dataset, cfg, labels, |_| {})
}

/// Ranking quality of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Micro-averaged AUC over all (instance, label) pairs.
    pub auc: f64,
    /// Mean over instances of the average precision of the label ranking.
    pub map: f64,
}

/// `N × L` matrix of predicted label distributions.
pub fn predict(model: &SoftmaxModel, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((features.nrows(), model.label_count()));
    for (i, x) in features.outer_iter().enumerate() {
        out.row_mut(i).assign(&softmax_forward(model, x)?);
    }
    Ok(out)
}

pub fn evaluate(model: &SoftmaxModel, dataset: &Dataset) -> Result<Evaluation> {
    if model.feature_dim() != dataset.feature_dim() {
        return Err(Error::DimensionMismatch {
            context: "model feature dimension vs dataset",
            expected: model.feature_dim(),
            found: dataset.feature_dim(),
        });
    }
    if model.label_count() != dataset.label_count() {
        return Err(Error::DimensionMismatch {
            context: "model label count vs dataset",
            expected: model.label_count(),
            found: dataset.label_count(),
        });
    }
    let scores = predict(model, dataset.features())?;
    let relevance = dataset.label_matrix();
    Ok(Evaluation {
        auc: micro_auc(scores.view(), relevance.view())?,
        map: mean_average_precision(scores.view(), relevance.view())?,
    })
}

fn check_scores(scores: ArrayView2<'_, f64>, relevance: ArrayView2<'_, f64>) -> Result<()> {
    if scores.dim() != relevance.dim() {
        return Err(Error::DimensionMismatch {
            context: "scores vs relevance",
            expected: relevance.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("scores"));
    }
    Ok(())
}

/// AUC over all score/relevance pairs (relevance > 0 is positive), with
/// tied scores given their average rank.
pub fn micro_auc(scores: ArrayView2<'_, f64>, relevance: ArrayView2<'_, f64>) -> Result<f64> {
    check_scores(scores, relevance)?;
    let mut pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(relevance.iter())
        .map(|(&s, &r)| (s, r > 0.0))
        .collect();
    let positives = pairs.iter().filter(|p| p.1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("AUC needs both positive and negative labels"));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let rank = (i + j + 1) as f64 / 2.0;
        rank_sum += rank * pairs[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean over instances with at least one relevant label of the average
/// precision of the score ranking (ties keep label order).
pub fn mean_average_precision(scores: ArrayView2<'_, f64>, relevance: ArrayView2<'_, f64>) -> Result<f64> {
    check_scores(scores, relevance)?;
    let mut total = 0.0;
    let mut counted = 0;
    for (s, r) in scores.outer_iter().zip(relevance.outer_iter()) {
        let relevant = r.iter().filter(|&&x| x > 0.0).count();
        if relevant == 0 {
            continue;
        }
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let mut hits = 0;
        let mut ap = 0.0;
        for (k, &l) in order.iter().enumerate() {
            if r[l] > 0.0 {
                hits += 1;
                ap += hits as f64 / (k + 1) as f64;
            }
        }
        total += ap / relevant as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("mAP needs an instance with a relevant label"));
    }
    Ok(total / counted as f64)
}
