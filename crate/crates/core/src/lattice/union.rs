//! Merging several systems' lattices under a shared super-start and
//! super-end.

use serde::{Deserialize, Serialize};

use super::posterior::{forward_backward, Scales};
use super::{LatArc, Lattice};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnionScaling {
    /// System i enters with log-weight `ln w_i − ln Z_i`, where `Z_i` is
    /// its total path score: the union's path posteriors are the
    /// `w`-weighted mixture of the systems' posteriors.
    #[default]
    Posterior,
    /// Every arc score of system i is multiplied by `w_i`.
    LogLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationWeights {
    pub system: Vec<f64>,
    pub lm_scale: f64,
    #[serde(default)]
    pub insertion_penalty: f64,
    #[serde(default)]
    pub scaling: UnionScaling,
}

impl CombinationWeights {
    pub fn uniform(systems: usize) -> Self {
        CombinationWeights {
            system: vec![1.0; systems],
            lm_scale: 1.0,
            insertion_penalty: 0.0,
            scaling: UnionScaling::Posterior,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.system.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("system weights must be finite and nonnegative"));
        }
        if !self.system.iter().any(|&w| w > 0.0) {
            return Err(Error::config("at least one system weight must be positive"));
        }
        if !(self.lm_scale.is_finite() && self.insertion_penalty.is_finite()) {
            return Err(Error::config("LM scale and insertion penalty must be finite"));
        }
        Ok(())
    }

    /// Scales used to score the union (acoustic scale 1).
    pub fn scales(&self) -> Scales {
        Scales {
            acoustic: 1.0,
            lm: self.lm_scale,
            insertion_penalty: self.insertion_penalty,
        }
    }
}

/// Union of lattices sharing one word table. Node 0 is a new start linked
/// by ε-arcs to each input's start; each input's end links to a new end.
/// Under [`UnionScaling::Posterior`] a system with weight 0 contributes no
/// paths.
pub fn lattice_union(ls: &[Lattice], w: &CombinationWeights) -> Result<Lattice> {
    if ls.is_empty() {
        return Err(Error::data("union of zero lattices"));
    }
    if w.system.len() != ls.len() {
        return Err(Error::config(format!(
            "{} weights for {} lattices",
            w.system.len(),
            ls.len()
        )));
    }
    w.validate()?;
    let words = ls[0].words().to_vec();
    if ls.iter().any(|l| l.words() != words.as_slice()) {
        return Err(Error::data("lattices must share one word table; relabel them first"));
    }
    let scales = w.scales();
    let mut times = vec![ls.iter().map(|l| l.times()[0]).min().unwrap_or(0)];
    let mut arcs = Vec::new();
    let mut exits = Vec::new();
    for (l, &wi) in ls.iter().zip(&w.system) {
        let (entry, factor) = match w.scaling {
            UnionScaling::Posterior => {
                if wi == 0.0 {
                    continue;
                }
                (wi.ln() - forward_backward(l, &scales)?.log_z, 1.0)
            }
            UnionScaling::LogLinear => (0.0, wi),
        };
        let off = times.len();
        times.extend_from_slice(l.times());
        arcs.push(LatArc {
            from: 0,
            to: off + l.start(),
            word: None,
            acoustic: entry,
            lm: 0.0,
        });
        for a in l.arcs() {
            arcs.push(LatArc {
                from: a.from + off,
                to: a.to + off,
                word: a.word,
                acoustic: factor * a.acoustic,
                lm: factor * a.lm,
            });
        }
        exits.push(off + l.end());
    }
    let end = times.len();
    times.push(ls.iter().map(|l| l.times()[l.end()]).max().unwrap_or(0));
    for e in exits {
        arcs.push(LatArc {
            from: e,
            to: end,
            word: None,
            acoustic: 0.0,
            lm: 0.0,
        });
    }
    Lattice::new(words, times, arcs)
}
