//! Frame-level cross-entropy training, learning-rate schedules, gradient
//! verification and evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::tensor::{Rng, Tensor};
use crate::topology::{ArchitectureSpec, NetParams, Network};

/// Default global-norm clipping threshold.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;
/// Default fraction of a dataset held out (from its tail) for validation.
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrDecay {
    Geometric,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub lr_start: f64,
    pub lr_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    pub seed: u64,
    #[serde(default = "default_decay")]
    pub decay: LrDecay,
    /// Global gradient-norm clipping threshold; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_decay() -> LrDecay {
    LrDecay::Geometric
}

fn default_clip() -> Option<f64> {
    Some(DEFAULT_CLIP_NORM)
}

fn default_validation_fraction() -> f64 {
    DEFAULT_VALIDATION_FRACTION
}

impl TrainingSchedule {
    pub fn new(lr_start: f64, lr_end: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainingSchedule {
            lr_start,
            lr_end,
            epochs,
            batch_size,
            momentum: 0.0,
            seed,
            decay: LrDecay::Geometric,
            clip_norm: default_clip(),
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    /// 1e-3 decaying to 1e-5 over 4 epochs.
    pub fn acoustic(seed: u64) -> Self {
        TrainingSchedule::new(1e-3, 1e-5, 4, 16, seed)
    }

    /// 1e-5 decaying to 1e-7 over 4 epochs.
    pub fn adaptation(seed: u64) -> Self {
        TrainingSchedule::new(1e-5, 1e-7, 4, 16, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start.is_finite() && self.lr_end.is_finite()) || self.lr_end < 0.0 || self.lr_start < self.lr_end {
            return Err(Error::config(format!(
                "learning rates must satisfy lr_start ≥ lr_end ≥ 0, got {} → {}",
                self.lr_start, self.lr_end
            )));
        }
        if self.decay == LrDecay::Geometric && self.lr_end == 0.0 && self.lr_start > 0.0 {
            return Err(Error::config("geometric decay cannot reach a learning rate of 0"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!("clip_norm must be positive, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config(format!(
                "validation_fraction must lie in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total_steps`; hits both endpoints exactly.
pub fn lr_at(s: &TrainingSchedule, step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::config("total_steps must be positive"));
    }
    if step > total_steps {
        return Err(Error::config(format!("step {step} exceeds total_steps {total_steps}")));
    }
    if step == 0 {
        return Ok(s.lr_start);
    }
    if step == total_steps || s.lr_start == s.lr_end {
        return Ok(s.lr_end);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(match s.decay {
        LrDecay::Geometric => s.lr_start * (s.lr_end / s.lr_start).powf(frac),
        LrDecay::Linear => s.lr_start + (s.lr_end - s.lr_start) * frac,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSequence {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(Error::dim(format!("features must be T×D, got {:?}", features.shape())));
        }
        if labels.len() != features.rows() {
            return Err(Error::data(format!(
                "{} labels for {} frames",
                labels.len(),
                features.rows()
            )));
        }
        Ok(LabeledSequence { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean negative log-likelihood of `labels` and its gradient with respect
/// to the logits that produced `log_probs`.
pub fn cross_entropy_loss(log_probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if log_probs.ndim() != 2 || log_probs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::dim(format!(
            "{} labels against log-probs of shape {:?}",
            labels.len(),
            log_probs.shape()
        )));
    }
    let k = log_probs.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::data(format!("label {bad} out of range for {k} classes")));
    }
    let t_len = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = log_probs.map(f64::exp);
    for (t, &l) in labels.iter().enumerate() {
        loss -= log_probs.row(t)[l];
        grad.row_mut(t)[l] -= 1.0;
    }
    Ok((loss / t_len, grad.scale(1.0 / t_len)))
}

/// Loss of one sequence and the parameter gradient.
pub fn sequence_gradient(net: &Network, seq: &LabeledSequence) -> Result<(f64, NetParams)> {
    let pass = net.forward(&seq.features)?;
    let (loss, g) = cross_entropy_loss(&pass.output.log_probs, &seq.labels)?;
    let (grads, _) = net.backward(&pass, &g)?;
    Ok((loss, grads))
}

/// Mean over sequences of the per-sequence loss.
pub fn batch_loss(net: &Network, batch: &[LabeledSequence]) -> Result<f64> {
    let mut total = 0.0;
    for seq in batch {
        let lp = net.log_probs(&seq.features)?;
        total += cross_entropy_loss(&lp, &seq.labels)?.0;
    }
    Ok(total / batch.len() as f64)
}

/// [`batch_loss`] together with its gradient.
pub fn batch_gradient(net: &Network, batch: &[LabeledSequence]) -> Result<(f64, NetParams)> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut acc = net.params.zeros_like();
    let mut total = 0.0;
    for seq in batch {
        let (loss, g) = sequence_gradient(net, seq)?;
        total += loss;
        for ((_, a), (_, b)) in acc.tensors_mut().into_iter().zip(g.tensors()) {
            a.add_assign(b)?;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    for (_, a) in acc.tensors_mut() {
        for v in a.data_mut() {
            *v *= scale;
        }
    }
    Ok((total * scale, acc))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Frame-weighted mean negative log-likelihood.
    pub loss: f64,
    pub frame_error: f64,
    pub frames: usize,
}

pub fn evaluate(net: &Network, data: &[LabeledSequence]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::data("cannot evaluate on an empty dataset"));
    }
    let mut loss = 0.0;
    let mut errors = 0usize;
    let mut frames = 0usize;
    for seq in data {
        let lp = net.log_probs(&seq.features)?;
        let (l, _) = cross_entropy_loss(&lp, &seq.labels)?;
        loss += l * seq.len() as f64;
        errors += lp.argmax_rows().iter().zip(&seq.labels).filter(|(p, l)| p != l).count();
        frames += seq.len();
    }
    Ok(Evaluation {
        loss: loss / frames as f64,
        frame_error: errors as f64 / frames as f64,
        frames,
    })
}

/// [`evaluate`] for stored parameters.
pub fn evaluate_model(
    spec: &ArchitectureSpec,
    params: &ModelParameters,
    data: &[LabeledSequence],
) -> Result<Evaluation> {
    evaluate(&Network::from_model(spec, params)?, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_frame_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ModelParameters,
    pub log: Vec<EpochMetrics>,
}

/// Splits off the validation tail: the last `floor(n · fraction)` items.
pub fn split_validation(data: &[LabeledSequence], fraction: f64) -> (&[LabeledSequence], &[LabeledSequence]) {
    let n_val = ((data.len() as f64) * fraction).floor() as usize;
    let n_val = n_val.min(data.len().saturating_sub(1));
    data.split_at(data.len() - n_val)
}

/// Trains freshly initialised parameters (seeded by the schedule) on the
/// head of `data`, validating on its tail.
pub fn train(spec: &ArchitectureSpec, data: &[LabeledSequence], s: &TrainingSchedule) -> Result<TrainOutcome> {
    s.validate()?;
    let net = Network::init(spec, s.seed)?;
    let (tr, val) = split_validation(data, s.validation_fraction);
    let mut out = train_network(net, tr, val, s)?;
    out.model.meta.seed = Some(s.seed);
    out.model.meta.schedule = Some(serde_json::to_value(s)?);
    Ok(out)
}

/// Continues training `net` on `train_data` (every sequence is used for
/// updates), reporting validation metrics on `val_data` when non-empty.
pub fn train_network(
    mut net: Network,
    train_data: &[LabeledSequence],
    val_data: &[LabeledSequence],
    s: &TrainingSchedule,
) -> Result<TrainOutcome> {
    s.validate()?;
    if train_data.is_empty() {
        return Err(Error::data("training data is empty"));
    }
    let in_dim = net.spec().input_dim;
    if let Some(bad) = train_data.iter().chain(val_data).find(|q| q.features.cols() != in_dim) {
        return Err(Error::dim(format!(
            "architecture expects {in_dim} features per frame, data has {}",
            bad.features.cols()
        )));
    }
    let batches_per_epoch = train_data.len().div_ceil(s.batch_size);
    let total = s.epochs * batches_per_epoch;
    let mut shuffle_rng = Rng::derive(s.seed, 1);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut velocity = (s.momentum > 0.0).then(|| net.params.zeros_like());
    let mut checkpoint = net.params.clone();
    let mut log = Vec::with_capacity(s.epochs);
    let mut step = 0usize;
    let mut lr = s.lr_start;
    for epoch in 1..=s.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(s.batch_size) {
            let batch: Vec<LabeledSequence> = chunk.iter().map(|&i| train_data[i].clone()).collect();
            let result = batch_gradient(&net, &batch);
            let (loss, mut grads) = match result {
                Ok(v) if v.0.is_finite() => v,
                Ok(_) | Err(Error::Numeric(_)) => {
                    return Err(diverged(&net, checkpoint, epoch, step));
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss;
            lr = if total > 1 {
                lr_at(s, step, total - 1)?
            } else {
                s.lr_start
            };
            step += 1;
            if lr == 0.0 {
                continue;
            }
            if let Some(c) = s.clip_norm {
                let norm = grads.sum_squares().sqrt();
                if norm > c {
                    let f = c / norm;
                    for (_, g) in grads.tensors_mut() {
                        for v in g.data_mut() {
                            *v *= f;
                        }
                    }
                }
            }
            checkpoint.clone_from(&net.params);
            let update = match velocity.as_mut() {
                Some(v) => {
                    for ((_, vt), (_, g)) in v.tensors_mut().into_iter().zip(grads.tensors()) {
                        for (a, b) in vt.data_mut().iter_mut().zip(g.data()) {
                            *a = s.momentum * *a + b;
                        }
                    }
                    &*v
                }
                None => &grads,
            };
            for ((_, p), (_, u)) in net.params.tensors_mut().into_iter().zip(update.tensors()) {
                for (a, b) in p.data_mut().iter_mut().zip(u.data()) {
                    *a -= lr * b;
                }
            }
        }
        let train_loss = loss_sum / batches_per_epoch as f64;
        let (val_loss, val_frame_error) = if val_data.is_empty() {
            (None, None)
        } else {
            match evaluate(&net, val_data) {
                Ok(e) if e.loss.is_finite() => (Some(e.loss), Some(e.frame_error)),
                Ok(_) | Err(Error::Numeric(_)) => return Err(diverged(&net, checkpoint, epoch, step)),
                Err(e) => return Err(e),
            }
        };
        log.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_frame_error,
        });
    }
    if net.params.tensors().iter().any(|(_, t)| t.check_finite().is_err()) {
        return Err(diverged(&net, checkpoint, s.epochs, step));
    }
    let mut model = net.to_model();
    model.meta.schedule = Some(serde_json::to_value(s)?);
    Ok(TrainOutcome { model, log })
}

fn diverged(net: &Network, checkpoint: NetParams, epoch: usize, step: usize) -> Error {
    let mut last = net.clone();
    last.params = checkpoint;
    Error::Training {
        message: format!("non-finite loss in epoch {epoch} after {step} updates"),
        checkpoint: Box::new(last.to_model()),
    }
}

pub fn write_metrics_csv(path: &Path, log: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "lr", "train_loss", "val_loss", "val_frame_error"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in log {
        w.write_record([
            m.epoch.to_string(),
            m.lr.to_string(),
            m.train_loss.to_string(),
            opt(m.val_loss),
            opt(m.val_frame_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation moved some ReLU across its kink.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct GradCheckOptions {
    /// Check at most this many coordinates per tensor, chosen at random.
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares the analytic gradient of the batch loss with central
/// differences at every parameter coordinate.
pub fn grad_check(
    spec: &ArchitectureSpec,
    params: &ModelParameters,
    batch: &[LabeledSequence],
    epsilon: f64,
) -> Result<GradCheckReport> {
    let net = Network::from_model(spec, params)?;
    grad_check_network(&net, batch, epsilon, GradCheckOptions::default())
}

pub fn grad_check_network(
    net: &Network,
    batch: &[LabeledSequence],
    epsilon: f64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, analytic) = batch_gradient(net, batch)?;
    grad_check_against(net, batch, epsilon, &analytic, opts)
}

/// Central-difference check of a supplied gradient.
pub fn grad_check_against(
    net: &Network,
    batch: &[LabeledSequence],
    epsilon: f64,
    analytic: &NetParams,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::config(format!(
            "epsilon must lie in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let signature = |n: &Network| -> Result<Vec<u64>> {
        batch
            .iter()
            .map(|q| Ok(n.forward(&q.features)?.relu_signature()))
            .collect()
    };
    let base_sig = signature(net)?;
    let mut rng = Rng::derive(opts.seed, 7);
    let mut work = net.clone();
    let analytic: Vec<(String, Tensor)> = analytic.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut groups = Vec::with_capacity(analytic.len());
    for (ti, (name, grad)) in analytic.iter().enumerate() {
        let mut coords: Vec<usize> = (0..grad.len()).collect();
        if let Some(m) = opts.max_per_tensor {
            if coords.len() > m {
                rng.shuffle(&mut coords);
                coords.truncate(m);
                coords.sort_unstable();
            }
        }
        let mut group = GroupError {
            name: name.clone(),
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        };
        for i in coords {
            let orig = net.params.tensors()[ti].1.data()[i];
            let mut eval_at = |v: f64| -> Result<(f64, bool)> {
                work.params.tensors_mut()[ti].1.data_mut()[i] = v;
                let kinked = signature(&work)? != base_sig;
                Ok((batch_loss(&work, batch)?, kinked))
            };
            let (fp, kp) = eval_at(orig + epsilon)?;
            let (fm, km) = eval_at(orig - epsilon)?;
            work.params.tensors_mut()[ti].1.data_mut()[i] = orig;
            if kp || km {
                group.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * epsilon);
            group.max_rel_error = group.max_rel_error.max(relative_error(grad.data()[i], numeric));
            group.checked += 1;
        }
        groups.push(group);
    }
    Ok(GradCheckReport { groups })
}
