//! Tree-structured Parzen estimator over a box, and the combination-weight
//! tuner built on it.

use serde::{Deserialize, Serialize};

use super::mbr::{edit_distance, mbr_decode, MbrConfig};
use super::union::{lattice_union, CombinationWeights};
use super::Lattice;
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    /// Fraction of observations forming the "good" set.
    pub gamma: f64,
    /// Candidates drawn from the good density per proposal.
    pub candidates: usize,
    /// Uniformly random observations before the model is used.
    pub warmup: usize,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: 0.25,
            candidates: 24,
            warmup: 10,
            lower: 0.0,
            upper: 2.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub history: Vec<Observation>,
    /// Every finite observation had the same value.
    pub flat: bool,
}

/// Size of the good set for `n` observations: `ceil(gamma · n)`.
pub fn good_set_size(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64) - 1e-12).ceil().max(1.0) as usize
}

/// One-dimensional Gaussian kernel density with Silverman's bandwidth,
/// mixed with a uniform prior over the box so the search keeps exploring.
struct Kde {
    points: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Kde {
    fn new(points: Vec<f64>, lo: f64, hi: f64) -> Self {
        let width = hi - lo;
        let n = points.len() as f64;
        let mean = points.iter().sum::<f64>() / n;
        let sd = (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut bw = 1.06 * sd * n.powf(-0.2);
        if bw <= 0.0 || !bw.is_finite() {
            bw = 0.1 * width;
        }
        // Keeps a tight cluster of good points from collapsing the search.
        let floor = (width / (n + 1.0).min(100.0)).max(1e-3 * width);
        Kde {
            points,
            bandwidth: bw.max(floor),
            lo,
            hi,
        }
    }

    fn log_density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = h * (2.0 * std::f64::consts::PI).sqrt();
        let s: f64 = self
            .points
            .iter()
            .map(|p| (-0.5 * ((x - p) / h).powi(2)).exp() / norm)
            .sum();
        let prior = 1.0 / (self.hi - self.lo);
        ((s + prior) / (self.points.len() as f64 + 1.0)).ln()
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        let k = rng.below(self.points.len() + 1);
        if k == self.points.len() {
            return rng.uniform(self.lo, self.hi);
        }
        // Truncated rather than clamped, so no mass piles up on the bounds.
        for _ in 0..64 {
            let x = self.points[k] + self.bandwidth * rng.normal();
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        self.points[k]
    }
}

fn validate(dim: usize, budget: usize, cfg: &TpeConfig) -> Result<()> {
    if dim == 0 {
        return Err(Error::config("search space must have at least one dimension"));
    }
    if budget < 10 {
        return Err(Error::config(format!("budget must be at least 10, got {budget}")));
    }
    if !(cfg.lower < cfg.upper) || !(0.0 < cfg.gamma && cfg.gamma < 1.0) || cfg.candidates == 0 {
        return Err(Error::config("invalid TPE configuration"));
    }
    Ok(())
}

fn finish(history: Vec<Observation>) -> Result<TuneResult> {
    let finite: Vec<&Observation> = history.iter().filter(|o| o.value.is_finite()).collect();
    let best = finite
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .ok_or_else(|| Error::Optimization("no observation produced a finite objective".into()))?;
    let flat = finite.iter().all(|o| (o.value - finite[0].value).abs() <= 1e-12);
    Ok(TuneResult {
        best: best.x.clone(),
        best_value: best.value,
        flat,
        history: history.clone(),
    })
}

/// Minimises `f` over `[lower, upper]^dim` with `budget` evaluations.
pub fn tpe_minimize(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    dim: usize,
    budget: usize,
    cfg: &TpeConfig,
) -> Result<TuneResult> {
    validate(dim, budget, cfg)?;
    let mut rng = Rng::derive(cfg.seed, 0x7e);
    let mut history: Vec<Observation> = Vec::with_capacity(budget);
    for k in 0..budget {
        let x: Vec<f64> = if k < cfg.warmup.max(2) {
            (0..dim).map(|_| rng.uniform(cfg.lower, cfg.upper)).collect()
        } else {
            let mut order: Vec<usize> = (0..history.len()).collect();
            order.sort_by(|&a, &b| history[a].value.total_cmp(&history[b].value).then(a.cmp(&b)));
            let n_good = good_set_size(history.len(), cfg.gamma).min(history.len() - 1);
            let (good, bad) = order.split_at(n_good);
            let models: Vec<(Kde, Kde)> = (0..dim)
                .map(|d| {
                    (
                        Kde::new(good.iter().map(|&i| history[i].x[d]).collect(), cfg.lower, cfg.upper),
                        Kde::new(bad.iter().map(|&i| history[i].x[d]).collect(), cfg.lower, cfg.upper),
                    )
                })
                .collect();
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..cfg.candidates {
                let cand: Vec<f64> = models.iter().map(|(l, _)| l.sample(&mut rng)).collect();
                let score: f64 = cand
                    .iter()
                    .zip(&models)
                    .map(|(&x, (l, g))| l.log_density(x) - g.log_density(x))
                    .sum();
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, cand));
                }
            }
            best.expect("at least one candidate").1
        };
        let value = f(&x)?;
        history.push(Observation { x, value });
    }
    finish(history)
}

/// Uniform random search with the same interface, for comparison.
pub fn random_search(
    mut f: impl FnMut(&[f64]) -> Result<f64>,
    dim: usize,
    budget: usize,
    cfg: &TpeConfig,
) -> Result<TuneResult> {
    validate(dim, budget, cfg)?;
    let mut rng = Rng::derive(cfg.seed, 0x5a);
    let mut history = Vec::with_capacity(budget);
    for _ in 0..budget {
        let x: Vec<f64> = (0..dim).map(|_| rng.uniform(cfg.lower, cfg.upper)).collect();
        let value = f(&x)?;
        history.push(Observation { x, value });
    }
    finish(history)
}

/// Corpus WER of MBR decoding the union of each utterance's system
/// lattices under `w`; all-zero system weights score +∞.
pub fn combination_wer(
    systems: &[Vec<Lattice>],
    refs: &[Vec<String>],
    w: &CombinationWeights,
    mbr: &MbrConfig,
) -> Result<f64> {
    if w.system.iter().all(|&x| x == 0.0) {
        return Ok(f64::INFINITY);
    }
    let n_utts = refs.len();
    if systems.iter().any(|s| s.len() != n_utts) {
        return Err(Error::data("every system needs one lattice per reference"));
    }
    let mut errors = 0usize;
    let mut words = 0usize;
    for (u, r) in refs.iter().enumerate() {
        let ls: Vec<Lattice> = systems.iter().map(|s| s[u].clone()).collect();
        let union = lattice_union(&ls, w)?;
        let h = mbr_decode(&union, &w.scales(), mbr)?;
        errors += edit_distance(r, &h.words).distance;
        words += r.len();
    }
    if words == 0 {
        return Err(Error::data("references contain no words"));
    }
    Ok(errors as f64 / words as f64)
}

/// Tunes per-system weights on a development set. LM scale, insertion
/// penalty and scaling mode are taken from `base`.
pub fn tune_weights_tpe(
    systems: &[Vec<Lattice>],
    refs: &[Vec<String>],
    budget: usize,
    base: &CombinationWeights,
    mbr: &MbrConfig,
    cfg: &TpeConfig,
) -> Result<(CombinationWeights, TuneResult)> {
    if systems.is_empty() {
        return Err(Error::data("no systems to combine"));
    }
    let objective = |x: &[f64]| {
        let w = CombinationWeights {
            system: x.to_vec(),
            ..base.clone()
        };
        combination_wer(systems, refs, &w, mbr)
    };
    let r = tpe_minimize(objective, systems.len(), budget, cfg)?;
    let w = CombinationWeights {
        system: r.best.clone(),
        ..base.clone()
    };
    Ok((w, r))
}
