//! Two-domain synthetic frame-labelling task.
//!
//! A latent class `z_t` is drawn independently per frame and emits
//! `x_t ~ N(margin · e_{z_t} + shift, noise² I)`. The frame label is the
//! class `h` frames back (`y_t = z_{t-h}`, and `z_t` for the first `h`
//! frames), so a model has to carry information across time.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};
use crate::training::LabeledSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainShift {
    /// Length of the offset added to every frame of domain B, along a fixed
    /// alternating-sign direction.
    pub mean_shift: f64,
    /// Class priors of domain B are proportional to `exp(-skew · k / (K-1))`.
    pub prior_skew: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Distance of each class mean from the origin.
    pub margin: f64,
    /// Per-dimension noise standard deviation.
    pub noise: f64,
    /// Label delay in frames.
    pub horizon: usize,
    pub domain_b: DomainShift,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            feature_dim: 12,
            num_classes: 8,
            min_len: 20,
            max_len: 40,
            margin: 4.0,
            noise: 1.0,
            horizon: 2,
            domain_b: DomainShift {
                mean_shift: 2.0,
                prior_skew: 1.5,
            },
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::config("horizon must be at least 1"));
        }
        if self.num_classes < 2 || self.feature_dim < self.num_classes {
            return Err(Error::config(format!(
                "need 2 ≤ classes ≤ feature_dim, got {} classes in {} dimensions",
                self.num_classes, self.feature_dim
            )));
        }
        if self.min_len < 1 || self.max_len < self.min_len {
            return Err(Error::config("sequence lengths must satisfy 1 ≤ min_len ≤ max_len"));
        }
        if !(self.margin.is_finite() && self.noise.is_finite() && self.noise > 0.0) {
            return Err(Error::config("margin must be finite and noise positive"));
        }
        if !(self.domain_b.mean_shift.is_finite() && self.domain_b.prior_skew.is_finite()) {
            return Err(Error::config("domain shift parameters must be finite"));
        }
        Ok(())
    }

    /// Unit-norm alternating-sign direction of the domain-B offset.
    pub fn shift_direction(&self) -> Vec<f64> {
        let s = 1.0 / (self.feature_dim as f64).sqrt();
        (0..self.feature_dim).map(|i| if i % 2 == 0 { s } else { -s }).collect()
    }

    pub fn priors(&self, domain: Domain) -> Vec<f64> {
        let k = self.num_classes;
        let skew = match domain {
            Domain::A => 0.0,
            Domain::B => self.domain_b.prior_skew,
        };
        let w: Vec<f64> = (0..k).map(|c| (-skew * c as f64 / (k - 1) as f64).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    /// Bayes-optimal frame error on domain A:
    /// `1 − ∫ φ(u) Φ(u + margin/noise)^(K−1) du`.
    pub fn bayes_error(&self) -> f64 {
        let n = Normal::standard();
        let d = self.margin / self.noise;
        let k = (self.num_classes - 1) as i32;
        let f = |u: f64| n.pdf(u) * n.cdf(u + d).powi(k);
        // Composite Simpson on [-12, 12].
        let (a, b, m) = (-12.0, 12.0, 4000);
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        1.0 - s * h / 3.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub domain_a: Vec<LabeledSequence>,
    pub domain_b: Vec<LabeledSequence>,
}

/// `n` sequences from each domain. Domain A uses RNG stream 0xA and domain
/// B stream 0xB of `seed`, so the two are independent.
pub fn gen_synthetic(spec: &SyntheticTaskSpec, n: usize, seed: u64) -> Result<SyntheticDataset> {
    Ok(SyntheticDataset {
        domain_a: gen_domain(spec, Domain::A, n, seed)?,
        domain_b: gen_domain(spec, Domain::B, n, seed)?,
    })
}

pub fn gen_domain(spec: &SyntheticTaskSpec, domain: Domain, n: usize, seed: u64) -> Result<Vec<LabeledSequence>> {
    spec.validate()?;
    if n < 1 {
        return Err(Error::config("at least one sequence is required"));
    }
    let stream = match domain {
        Domain::A => 0xA,
        Domain::B => 0xB,
    };
    let mut rng = Rng::derive(seed, stream);
    let priors = spec.priors(domain);
    let offset: Vec<f64> = match domain {
        Domain::A => vec![0.0; spec.feature_dim],
        Domain::B => spec
            .shift_direction()
            .into_iter()
            .map(|u| u * spec.domain_b.mean_shift)
            .collect(),
    };
    (0..n)
        .map(|_| {
            let t = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
            let z: Vec<usize> = (0..t).map(|_| rng.categorical(&priors)).collect();
            let mut data = Vec::with_capacity(t * spec.feature_dim);
            for &c in &z {
                for (j, o) in offset.iter().enumerate() {
                    let mean = if j == c { spec.margin } else { 0.0 };
                    data.push(mean + o + spec.noise * rng.normal());
                }
            }
            let labels = (0..t)
                .map(|i| if i < spec.horizon { z[i] } else { z[i - spec.horizon] })
                .collect();
            LabeledSequence::new(Tensor::matrix(t, spec.feature_dim, data)?, labels)
        })
        .collect()
}
