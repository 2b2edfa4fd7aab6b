//! Replacing lattice LM scores with a stronger language model's.

use std::collections::BTreeMap;

use super::posterior::{k_best_paths, Scales};
use super::{LatArc, Lattice};
use crate::error::{Error, Result};
use crate::langmodel::{NGramModel, RnnLm, Vocabulary};

pub enum Scorer<'a> {
    NGram(&'a NGramModel),
    /// Rescores the `nbest` best paths under `scales` and rebuilds the
    /// lattice as their union of chains.
    Rnn {
        lm: &'a RnnLm,
        nbest: usize,
        scales: Scales,
    },
}

/// Lattice word ids mapped into the scorer's vocabulary (`<unk>` for
/// out-of-vocabulary words, an error when the scorer has none).
fn map_words(l: &Lattice, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let mut missing = Vec::new();
    let ids = l
        .words()
        .iter()
        .map(|w| match vocab.id_or_unk(w) {
            Ok(i) => i,
            Err(_) => {
                missing.push(w.clone());
                0
            }
        })
        .collect();
    if missing.is_empty() {
        Ok(ids)
    } else {
        Err(Error::Vocabulary(missing))
    }
}

/// Sets every arc's LM field to `lm_scale` times the scorer's natural-log
/// probability of the arc's word in context; arcs entering the end node
/// also carry the end-of-sentence probability.
pub fn rescore_lattice(l: &Lattice, scorer: &Scorer, lm_scale: f64) -> Result<Lattice> {
    match scorer {
        Scorer::NGram(m) => rescore_ngram(l, m, lm_scale),
        Scorer::Rnn { lm, nbest, scales } => rescore_rnn(l, lm, *nbest, scales, lm_scale),
    }
}

fn rescore_ngram(l: &Lattice, m: &NGramModel, lm_scale: f64) -> Result<Lattice> {
    let ids = map_words(l, m.vocab())?;
    let bos = m
        .vocab()
        .bos()
        .ok_or_else(|| Error::data("n-gram vocabulary lacks <s>"))?;
    let eos = m
        .vocab()
        .eos()
        .ok_or_else(|| Error::data("n-gram vocabulary lacks </s>"))?;
    let keep = m.order() - 1;
    let trim = |h: &mut Vec<u32>| {
        if h.len() > keep {
            h.drain(..h.len() - keep);
        }
    };
    let mut start_hist = vec![bos];
    trim(&mut start_hist);

    // Expanded states are (node, history); the end node is shared.
    let mut state_ids: BTreeMap<(usize, Vec<u32>), usize> = BTreeMap::new();
    let mut states: Vec<(usize, Vec<u32>)> = Vec::new();
    let mut per_node: Vec<Vec<usize>> = vec![Vec::new(); l.num_nodes()];
    let mut intern = |node: usize, h: Vec<u32>, states: &mut Vec<(usize, Vec<u32>)>, per_node: &mut Vec<Vec<usize>>| {
        *state_ids.entry((node, h.clone())).or_insert_with(|| {
            states.push((node, h));
            per_node[node].push(states.len() - 1);
            states.len() - 1
        })
    };
    intern(l.start(), start_hist, &mut states, &mut per_node);
    let out = l.out_arcs();
    let mut new_arcs: Vec<(usize, usize, &LatArc, f64)> = Vec::new();
    for &v in l.topo_order() {
        if v == l.end() {
            continue;
        }
        let mut here = per_node[v].clone();
        here.sort_by(|a, b| states[*a].1.cmp(&states[*b].1));
        for s in here {
            let hist = states[s].1.clone();
            for &i in &out[v] {
                let a = &l.arcs()[i];
                let mut next = hist.clone();
                let mut lp = 0.0;
                if let Some(w) = a.word {
                    lp += m.logprob_ids(&hist, ids[w as usize]);
                    next.push(ids[w as usize]);
                    trim(&mut next);
                }
                let to_state = if a.to == l.end() {
                    lp += m.logprob_ids(&next, eos);
                    intern(a.to, Vec::new(), &mut states, &mut per_node)
                } else {
                    intern(a.to, next, &mut states, &mut per_node)
                };
                new_arcs.push((s, to_state, a, lp));
            }
        }
    }
    // Renumber so the shared end comes last.
    let end_state = per_node[l.end()][0];
    let mut remap = vec![0usize; states.len()];
    let mut next_id = 0;
    for (i, r) in remap.iter_mut().enumerate() {
        if i != end_state {
            *r = next_id;
            next_id += 1;
        }
    }
    remap[end_state] = next_id;
    let mut times = vec![0u32; states.len()];
    for (i, (node, _)) in states.iter().enumerate() {
        times[remap[i]] = l.times()[*node];
    }
    let arcs = new_arcs
        .into_iter()
        .map(|(from, to, a, lp)| LatArc {
            from: remap[from],
            to: remap[to],
            word: a.word,
            acoustic: a.acoustic,
            lm: lm_scale * lp,
        })
        .collect();
    Lattice::new(l.words().to_vec(), times, arcs)
}

fn rescore_rnn(l: &Lattice, lm: &RnnLm, nbest: usize, scales: &Scales, lm_scale: f64) -> Result<Lattice> {
    if nbest == 0 {
        return Err(Error::config("N-best size must be positive"));
    }
    map_words(l, &lm.vocab)?;
    let paths = k_best_paths(l, scales, nbest);
    let mut times = vec![l.times()[l.start()]];
    let mut arcs = Vec::new();
    let end_time = l.times()[l.end()];
    let mut chain_ends = Vec::new();
    for p in &paths {
        let words: Vec<&str> = p.words.iter().map(|&w| l.word(w)).collect();
        let lps = lm.token_logprobs(&words)?;
        let word_arcs: Vec<&LatArc> = p
            .arcs
            .iter()
            .map(|&i| &l.arcs()[i])
            .filter(|a| a.word.is_some())
            .collect();
        let acoustic: f64 = p.arcs.iter().map(|&i| l.arcs()[i].acoustic).sum();
        let eps_acoustic: f64 = p
            .arcs
            .iter()
            .map(|&i| &l.arcs()[i])
            .filter(|a| a.word.is_none())
            .map(|a| a.acoustic)
            .sum();
        let mut prev = 0usize;
        if word_arcs.is_empty() {
            times.push(end_time);
            let node = times.len() - 1;
            arcs.push(LatArc {
                from: 0,
                to: node,
                word: None,
                acoustic,
                lm: lm_scale * lps[0],
            });
            chain_ends.push(node);
            continue;
        }
        let last = word_arcs.len() - 1;
        for (k, a) in word_arcs.iter().enumerate() {
            times.push(l.times()[a.to]);
            let node = times.len() - 1;
            let mut lp = lps[k];
            if k == last {
                lp += lps[k + 1];
            }
            // ε-arc acoustic scores ride on the first word arc.
            let ac = if k == 0 { a.acoustic + eps_acoustic } else { a.acoustic };
            arcs.push(LatArc {
                from: prev,
                to: node,
                word: a.word,
                acoustic: ac,
                lm: lm_scale * lp,
            });
            prev = node;
        }
        chain_ends.push(prev);
    }
    let end = times.len();
    times.push(end_time);
    for e in chain_ends {
        arcs.push(LatArc {
            from: e,
            to: end,
            word: None,
            acoustic: 0.0,
            lm: 0.0,
        });
    }
    Lattice::new(l.words().to_vec(), times, arcs)
}
