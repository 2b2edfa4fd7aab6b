//! Low-learning-rate fine-tuning of a seed model on target-domain data and
//! elementwise averaging of the seed with its fine-tuned version.

use crate::error::{Error, Result};
use crate::model::{ModelMeta, ModelParameters, Provenance};
use crate::tensor::Tensor;
use crate::topology::{ArchitectureSpec, Network};
use crate::training::{split_validation, train_network, EpochMetrics, LabeledSequence, TrainingSchedule};

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub model: ModelParameters,
    pub log: Vec<EpochMetrics>,
}

/// Fine-tunes a copy of `seed` on `target_data`. The seed is not modified.
pub fn adapt(
    seed: &ModelParameters,
    spec: &ArchitectureSpec,
    target_data: &[LabeledSequence],
    schedule: &TrainingSchedule,
) -> Result<AdaptOutcome> {
    let fp = spec.fingerprint();
    if seed.fingerprint != fp {
        return Err(Error::Compatibility(format!(
            "seed model fingerprint {} does not match architecture {fp}",
            seed.fingerprint
        )));
    }
    let net = Network::from_model(spec, seed)?;
    let (tr, val) = split_validation(target_data, schedule.validation_fraction);
    let out = train_network(net, tr, val, schedule)?;
    let mut model = out.model;
    model.meta = ModelMeta {
        provenance: Provenance::Adapted,
        seed: seed.meta.seed,
        schedule: Some(serde_json::to_value(schedule)?),
        parents: vec![seed.checksum()],
    };
    Ok(AdaptOutcome { model, log: out.log })
}

/// `(1 − alpha)·a + alpha·b` for every tensor.
///
/// Coordinates on which the parents agree are copied, and the endpoint
/// weights return a parent's values unchanged, so the result is bitwise
/// symmetric at `alpha = 0.5` and idempotent.
pub fn average_parameters(a: &ModelParameters, b: &ModelParameters, alpha: f64) -> Result<ModelParameters> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    a.check_compatible(b)?;
    let mut tensors = a.tensors.clone();
    for (name, t) in tensors.iter_mut() {
        let o = &b.tensors[name];
        *t = mix(t, o, alpha);
    }
    let mut out = ModelParameters::new(tensors, a.fingerprint.clone());
    out.meta = ModelMeta {
        provenance: Provenance::Averaged,
        seed: a.meta.seed,
        schedule: None,
        parents: vec![a.checksum(), b.checksum()],
    };
    Ok(out)
}

fn mix(a: &Tensor, b: &Tensor, alpha: f64) -> Tensor {
    let mut out = a.clone();
    for (x, &y) in out.data_mut().iter_mut().zip(b.data()) {
        *x = if alpha == 0.0 || *x == y {
            *x
        } else if alpha == 1.0 {
            y
        } else {
            (1.0 - alpha) * *x + alpha * y
        };
    }
    out
}
