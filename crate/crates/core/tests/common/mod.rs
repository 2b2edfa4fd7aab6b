//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use denselab::lattice::{LatArc, Lattice, Scales};
use denselab::tensor::{Rng, Tensor};
use denselab::training::LabeledSequence;

/// Random sequences with uniform features in [-1, 1] and random labels.
pub fn toy_sequences(n: usize, len: usize, dim: usize, classes: usize, seed: u64) -> Vec<LabeledSequence> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let f = Tensor::uniform(&[len, dim], 1.0, &mut rng);
            let labels = (0..len).map(|_| rng.below(classes)).collect();
            LabeledSequence::new(f, labels).unwrap()
        })
        .collect()
}

pub fn table(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

/// Random layered DAG with at most `max_arcs` arcs over `table`, with
/// ε-arcs at rate `eps_rate`.
pub fn random_lattice(rng: &mut Rng, table: &[String], max_arcs: usize, eps_rate: f64) -> Lattice {
    loop {
        let layers = 2 + rng.below(3);
        let mut times = vec![0u32];
        let mut layer_nodes: Vec<Vec<usize>> = vec![vec![0]];
        for l in 1..layers {
            let width = 1 + rng.below(2);
            let ids: Vec<usize> = (0..width).map(|k| times.len() + k).collect();
            times.extend(std::iter::repeat_n(l as u32, width));
            layer_nodes.push(ids);
        }
        times.push(layers as u32);
        let end = times.len() - 1;
        layer_nodes.push(vec![end]);
        let mut arcs = Vec::new();
        for l in 0..layer_nodes.len() - 1 {
            for &to in &layer_nodes[l + 1] {
                for &from in &layer_nodes[l] {
                    for _ in 0..rng.below(3) {
                        let word = if rng.unit() < eps_rate {
                            None
                        } else {
                            Some(rng.below(table.len()) as u32)
                        };
                        arcs.push(LatArc {
                            from,
                            to,
                            word,
                            acoustic: rng.uniform(-3.0, 0.0),
                            lm: rng.uniform(-2.0, 0.0),
                        });
                    }
                }
            }
        }
        if arcs.is_empty() || arcs.len() > max_arcs {
            continue;
        }
        if let Ok(l) = Lattice::new(table.to_vec(), times.clone(), arcs) {
            return l;
        }
    }
}

/// Every start-to-end path as (word strings, score), by depth-first search
/// over the raw arc list.
pub fn brute_paths(l: &Lattice, s: &Scales) -> Vec<(Vec<String>, f64)> {
    fn go(
        l: &Lattice,
        s: &Scales,
        node: usize,
        words: &mut Vec<String>,
        score: f64,
        out: &mut Vec<(Vec<String>, f64)>,
    ) {
        if node == l.end() {
            out.push((words.clone(), score));
            return;
        }
        for a in l.arcs().iter().filter(|a| a.from == node) {
            let mut arc = s.acoustic * a.acoustic + s.lm * a.lm;
            if let Some(w) = a.word {
                arc -= s.insertion_penalty;
                words.push(l.word(w).to_string());
            }
            go(l, s, a.to, words, score + arc, out);
            if a.word.is_some() {
                words.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(l, s, l.start(), &mut Vec::new(), 0.0, &mut out);
    out
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Distinct word sequences with posteriors, from the brute-force paths.
pub fn brute_sequence_posteriors(l: &Lattice, s: &Scales) -> BTreeMap<Vec<String>, f64> {
    let paths = brute_paths(l, s);
    let z = log_sum_exp(paths.iter().map(|p| p.1));
    let mut by_seq: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for (w, sc) in paths {
        by_seq.entry(w).or_default().push(sc);
    }
    by_seq
        .into_iter()
        .map(|(w, v)| (w, (log_sum_exp(v) - z).exp()))
        .collect()
}

/// Levenshtein distance by the textbook recursion with memoisation.
pub fn levenshtein(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let v = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], &b[1..], memo)
                .min(go(&a[1..], b, memo))
                .min(go(a, &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut BTreeMap::new())
}

/// Expected-edit-distance minimiser over the lattice's own sequences; ties
/// within 1e-9 go to the lexicographically smallest sequence.
pub fn brute_mbr(l: &Lattice, s: &Scales) -> (Vec<String>, f64) {
    let post = brute_sequence_posteriors(l, s);
    let risks: Vec<(Vec<String>, f64)> = post
        .keys()
        .map(|c| (c.clone(), post.iter().map(|(w, p)| p * levenshtein(w, c) as f64).sum()))
        .collect();
    let min = risks.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * min.abs().max(1.0);
    // BTreeMap order is already lexicographic.
    risks.into_iter().find(|r| r.1 <= min + tol).unwrap()
}

/// Sentences from a random first-order Markov chain over `vocab` words.
pub fn markov_corpus(vocab: usize, sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = Rng::new(seed);
    let words: Vec<String> = (0..vocab).map(|i| format!("v{i}")).collect();
    let trans: Vec<Vec<f64>> = (0..=vocab)
        .map(|_| (0..=vocab).map(|_| rng.unit().powi(3)).collect())
        .collect();
    (0..sentences)
        .map(|_| {
            let mut out = Vec::new();
            let mut prev = vocab;
            loop {
                let next = rng.categorical(&trans[prev]);
                if next == vocab || out.len() >= 12 {
                    if !out.is_empty() {
                        break;
                    }
                    continue;
                }
                out.push(words[next].clone());
                prev = next;
            }
            out
        })
        .collect()
}
