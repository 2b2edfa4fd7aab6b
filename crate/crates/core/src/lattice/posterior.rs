//! Arc posteriors and best paths.

use serde::{Deserialize, Serialize};

use super::Lattice;
use crate::error::{Error, Result};

/// How arc fields combine into one log-score:
/// `acoustic·ac + lm·lm − insertion_penalty` per word arc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub acoustic: f64,
    pub lm: f64,
    #[serde(default)]
    pub insertion_penalty: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Scales {
            acoustic: 1.0,
            lm: 1.0,
            insertion_penalty: 0.0,
        }
    }
}

impl Scales {
    pub fn arc_score(&self, l: &Lattice, i: usize) -> f64 {
        let a = &l.arcs()[i];
        let pen = if a.word.is_some() { self.insertion_penalty } else { 0.0 };
        self.acoustic * a.acoustic + self.lm * a.lm - pen
    }
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posteriors {
    /// Log forward scores per node.
    pub alpha: Vec<f64>,
    /// Log backward scores per node.
    pub beta: Vec<f64>,
    /// Log of the total score of all complete paths.
    pub log_z: f64,
    /// Posterior probability of each arc.
    pub arc: Vec<f64>,
}

pub fn forward_backward(l: &Lattice, scales: &Scales) -> Result<Posteriors> {
    let n = l.num_nodes();
    let scores: Vec<f64> = (0..l.arcs().len()).map(|i| scales.arc_score(l, i)).collect();
    let out = l.out_arcs();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[l.start()] = 0.0;
    for &v in l.topo_order() {
        if alpha[v] == f64::NEG_INFINITY {
            continue;
        }
        for &i in &out[v] {
            let t = l.arcs()[i].to;
            alpha[t] = log_add(alpha[t], alpha[v] + scores[i]);
        }
    }
    let mut beta = vec![f64::NEG_INFINITY; n];
    beta[l.end()] = 0.0;
    for &v in l.topo_order().iter().rev() {
        for &i in &out[v] {
            beta[v] = log_add(beta[v], scores[i] + beta[l.arcs()[i].to]);
        }
    }
    let log_z = alpha[l.end()];
    if !log_z.is_finite() {
        return Err(Error::Structure("no finite-scoring path reaches the end node".into()));
    }
    let arc = l
        .arcs()
        .iter()
        .zip(&scores)
        .map(|(a, s)| (alpha[a.from] + s + beta[a.to] - log_z).exp())
        .collect();
    Ok(Posteriors {
        alpha,
        beta,
        log_z,
        arc,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPath {
    pub arcs: Vec<usize>,
    pub words: Vec<u32>,
    pub score: f64,
}

/// The `k` highest-scoring complete paths, best first. Ties are broken by
/// arc indices so the result is deterministic.
pub fn k_best_paths(l: &Lattice, scales: &Scales, k: usize) -> Vec<ScoredPath> {
    if k == 0 {
        return Vec::new();
    }
    let n = l.num_nodes();
    let inc = l.in_arcs();
    // Per node: (score, arc into node, rank at the arc's source).
    let mut lists: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); n];
    lists[l.start()].push((0.0, usize::MAX, 0));
    for &v in l.topo_order() {
        if v == l.start() {
            continue;
        }
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for &i in &inc[v] {
            let s = scales.arc_score(l, i);
            for (r, e) in lists[l.arcs()[i].from].iter().enumerate() {
                cand.push((e.0 + s, i, r));
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cand.truncate(k);
        lists[v] = cand;
    }
    lists[l.end()]
        .iter()
        .enumerate()
        .map(|(r, &(score, _, _))| {
            let mut arcs = Vec::new();
            let (mut v, mut rank) = (l.end(), r);
            while v != l.start() {
                let (_, i, pr) = lists[v][rank];
                arcs.push(i);
                v = l.arcs()[i].from;
                rank = pr;
            }
            arcs.reverse();
            let words = arcs.iter().filter_map(|&i| l.arcs()[i].word).collect();
            ScoredPath { arcs, words, score }
        })
        .collect()
}

/// The single best path (maximum a posteriori).
pub fn best_path(l: &Lattice, scales: &Scales) -> ScoredPath {
    k_best_paths(l, scales, 1).remove(0)
}
