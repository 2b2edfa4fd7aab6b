//! Minimum-Bayes-risk decoding under word edit distance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::posterior::{forward_backward, k_best_paths, log_add, Scales};
use super::Lattice;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
/// Insertions are hypothesis words without a reference counterpart.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            d[i * w + j] = sub.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    // Backtrace preferring the diagonal, then deletions.
    let mut c = EditCounts {
        distance: d[n * w + m],
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hyp[j - 1]);
            if d[i * w + j] == d[(i - 1) * w + j - 1] + diff {
                c.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i * w + j] == d[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// Corpus word error rate: total edits over total reference words.
pub fn word_error_rate<S: AsRef<str>>(refs: &[Vec<S>], hyps: &[Vec<S>]) -> Result<f64> {
    if refs.len() != hyps.len() {
        return Err(Error::data(format!(
            "{} references for {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let words: usize = refs.iter().map(Vec::len).sum();
    if words == 0 {
        return Err(Error::data("references contain no words"));
    }
    let errors: usize = refs
        .iter()
        .zip(hyps)
        .map(|(r, h)| {
            let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
            let h: Vec<&str> = h.iter().map(AsRef::as_ref).collect();
            edit_distance(&r, &h).distance
        })
        .sum();
    Ok(errors as f64 / words as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbrConfig {
    /// Evaluate exactly when the lattice has at most this many distinct
    /// word sequences.
    pub max_exact: usize,
    /// Enumerate paths only when there are at most this many.
    pub path_cap: usize,
    /// Size of the N-best list used otherwise.
    pub nbest: usize,
    /// N-best sequences more than this many nats below the best are dropped.
    pub beam: f64,
}

impl Default for MbrConfig {
    fn default() -> Self {
        MbrConfig {
            max_exact: 2_000,
            path_cap: 200_000,
            nbest: 1000,
            beam: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub words: Vec<String>,
    /// Posterior probability of the word sequence.
    pub posterior: f64,
    /// Expected edit distance to the lattice's word sequences.
    pub risk: f64,
    /// Whether the whole candidate set was used (otherwise an N-best list).
    pub exact: bool,
}

/// Distinct word sequences with their normalised posteriors, and whether
/// the set is complete.
pub fn sequence_posteriors(l: &Lattice, scales: &Scales, cfg: &MbrConfig) -> Result<(Vec<(Vec<u32>, f64)>, bool)> {
    if l.arcs().is_empty() {
        return Err(Error::data("cannot decode a lattice without arcs"));
    }
    let fb = forward_backward(l, scales)?;
    if let Some(paths) = l.enumerate_paths(cfg.path_cap) {
        let mut agg: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for p in paths {
            let s = p.score(scales);
            let e = agg.entry(p.words).or_insert(f64::NEG_INFINITY);
            *e = log_add(*e, s);
        }
        if agg.len() <= cfg.max_exact {
            return Ok((agg.into_iter().map(|(w, s)| (w, (s - fb.log_z).exp())).collect(), true));
        }
    }
    let mut agg: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for p in k_best_paths(l, scales, cfg.nbest) {
        let e = agg.entry(p.words).or_insert(f64::NEG_INFINITY);
        *e = log_add(*e, p.score);
    }
    let best = agg.values().copied().fold(f64::NEG_INFINITY, f64::max);
    agg.retain(|_, s| *s >= best - cfg.beam);
    let z = agg.values().fold(f64::NEG_INFINITY, |a, &b| log_add(a, b));
    Ok((agg.into_iter().map(|(w, s)| (w, (s - z).exp())).collect(), false))
}

/// Picks the lattice word sequence with the least expected edit distance.
/// Ties (within 1e-9 relative) go to the lexicographically smallest word
/// sequence, then the shortest.
pub fn mbr_decode(l: &Lattice, scales: &Scales, cfg: &MbrConfig) -> Result<Hypothesis> {
    let (seqs, exact) = sequence_posteriors(l, scales, cfg)?;
    let risks: Vec<f64> = seqs
        .iter()
        .map(|(c, _)| seqs.iter().map(|(s, p)| p * edit_distance(s, c).distance as f64).sum())
        .collect();
    let min = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * min.abs().max(1.0);
    let strings: Vec<Vec<&str>> = seqs
        .iter()
        .map(|(c, _)| c.iter().map(|&w| l.word(w)).collect())
        .collect();
    let best = (0..seqs.len())
        .filter(|&i| risks[i] <= min + tol)
        .min_by(|&a, &b| {
            strings[a]
                .cmp(&strings[b])
                .then(strings[a].len().cmp(&strings[b].len()))
        })
        .expect("at least one candidate");
    Ok(Hypothesis {
        words: strings[best].iter().map(|w| w.to_string()).collect(),
        posterior: seqs[best].1,
        risk: risks[best],
        exact,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::lattice::testutil::*;
    use crate::lattice::{linear_lattice, LatArc};

    /// Plain recursive definition with memoisation, independent of the
    /// table-filling implementation.
    fn oracle(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut BTreeMap<(usize, usize), usize>) -> usize {
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

    #[test]
    fn simple_edits() {
        let a = ["a", "b", "c"];
        assert_eq!(edit_distance(&a, &a).distance, 0);
        let c = edit_distance(&a, &["a", "x", "c"]);
        assert_eq!((c.distance, c.substitutions), (1, 1));
        let c = edit_distance(&a, &["a", "c"]);
        assert_eq!((c.distance, c.deletions), (1, 1));
        let c = edit_distance(&a, &["a", "b", "c", "d"]);
        assert_eq!((c.distance, c.insertions), (1, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn matches_oracle(a in prop::collection::vec(0u8..4, 0..9), b in prop::collection::vec(0u8..4, 0..9)) {
            let c = edit_distance(&a, &b);
            prop_assert_eq!(c.distance, oracle(&a, &b));
            prop_assert_eq!(c.distance, c.substitutions + c.insertions + c.deletions);
            prop_assert_eq!(b.len() + c.deletions, a.len() + c.insertions);
        }

        #[test]
        fn metric_axioms(
            a in prop::collection::vec(0u8..3, 0..7),
            b in prop::collection::vec(0u8..3, 0..7),
            c in prop::collection::vec(0u8..3, 0..7),
        ) {
            let d = |x: &[u8], y: &[u8]| edit_distance(x, y).distance;
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert_eq!(d(&a, &a), 0);
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        }
    }

    #[test]
    fn single_path_zero_risk() {
        let l = linear_lattice(&table(&["a", "b"]), &["b", "a"], -1.0).unwrap();
        let h = mbr_decode(&l, &Scales::default(), &MbrConfig::default()).unwrap();
        assert_eq!(h.words, vec!["b", "a"]);
        assert_eq!(h.risk, 0.0);
    }

    fn two_path(pb: f64, px: f64) -> Lattice {
        let t = table(&["a", "b", "c", "x"]);
        let arc = |from, to, w: u32, ac: f64| LatArc {
            from,
            to,
            word: Some(w),
            acoustic: ac,
            lm: 0.0,
        };
        Lattice::new(
            t,
            vec![0, 1, 2, 3],
            vec![
                arc(0, 1, 0, 0.0),
                arc(1, 2, 1, pb.ln()),
                arc(1, 2, 3, px.ln()),
                arc(2, 3, 2, 0.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn two_path_risk() {
        let h = mbr_decode(&two_path(0.6, 0.4), &Scales::default(), &MbrConfig::default()).unwrap();
        assert_eq!(h.words, vec!["a", "b", "c"]);
        assert!((h.risk - 0.4).abs() < 1e-12);
    }

    #[test]
    fn symmetric_tie_is_lexicographic() {
        let h = mbr_decode(&two_path(0.5, 0.5), &Scales::default(), &MbrConfig::default()).unwrap();
        assert_eq!(h.words, vec!["a", "b", "c"]);
    }

    #[test]
    fn empty_lattice_is_data_error() {
        let l = Lattice::new(vec![], vec![0], vec![]).unwrap();
        assert!(matches!(
            mbr_decode(&l, &Scales::default(), &MbrConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn nbest_fallback_agrees_on_small_lattices() {
        let t = table(&["a", "b", "c"]);
        let mut rng = crate::tensor::Rng::new(3);
        for _ in 0..50 {
            let l = random_lattice(&mut rng, &t, 16, 0.2);
            let exact = mbr_decode(&l, &Scales::default(), &MbrConfig::default()).unwrap();
            let cfg = MbrConfig {
                max_exact: 0,
                nbest: 100_000,
                beam: f64::INFINITY,
                ..Default::default()
            };
            let approx = mbr_decode(&l, &Scales::default(), &cfg).unwrap();
            assert!(exact.exact && !approx.exact);
            assert_eq!(exact.words, approx.words);
        }
    }
}
