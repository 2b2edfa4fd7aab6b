//! Word lattices: validation, text I/O, path enumeration and relabeling,
//! plus the combination pipeline built on them (posteriors, MBR decoding,
//! union, rescoring, weight tuning).
//!
//! Text format (one record per line, fields separated by any whitespace):
//!
//! ```text
//! LATTICE v1 <num_nodes> <num_arcs>
//! W <id> <word>                       word table, ids 0..
//! N <id> <time_index>                 nodes, ids 0..; 0 is the start, the last is the end
//! A <from> <to> <word|<eps>> <acoustic> <lm>
//! ```
//!
//! Scores are natural-log values printed with 9 significant digits, so
//! text → lattice → text is exact.

pub mod mbr;
pub mod posterior;
pub mod rescore;
pub mod tpe;
pub mod union;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use mbr::{edit_distance, mbr_decode, word_error_rate, EditCounts, Hypothesis, MbrConfig};
pub use posterior::{best_path, forward_backward, k_best_paths, Posteriors, Scales, ScoredPath};
pub use rescore::{rescore_lattice, Scorer};
pub use tpe::{good_set_size, random_search, tpe_minimize, tune_weights_tpe, Observation, TpeConfig, TuneResult};
pub use union::{lattice_union, CombinationWeights, UnionScaling};

pub const EPS: &str = "<eps>";

#[derive(Clone, Debug, PartialEq)]
pub struct LatArc {
    pub from: usize,
    pub to: usize,
    /// Index into the word table; `None` for ε.
    pub word: Option<u32>,
    pub acoustic: f64,
    pub lm: f64,
}

/// A word lattice whose start is node 0 and whose end is the last node.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    words: Vec<String>,
    times: Vec<u32>,
    arcs: Vec<LatArc>,
    topo: Vec<usize>,
}

/// One complete path: its words and score sums.
#[derive(Clone, Debug, PartialEq)]
pub struct PathInfo {
    pub words: Vec<u32>,
    pub acoustic: f64,
    pub lm: f64,
    pub arcs: Vec<usize>,
}

impl PathInfo {
    pub fn score(&self, s: &Scales) -> f64 {
        s.acoustic * self.acoustic + s.lm * self.lm - s.insertion_penalty * self.words.len() as f64
    }
}

impl Lattice {
    /// Validates and builds: ids in range, finite scores, acyclic, times
    /// non-decreasing along arcs and every arc on a start → end path.
    pub fn new(words: Vec<String>, times: Vec<u32>, arcs: Vec<LatArc>) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::Structure("lattice has no nodes".into()));
        }
        if words
            .iter()
            .any(|w| w == EPS || w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(Error::data(
                "word table entries must be non-empty, whitespace-free and not <eps>",
            ));
        }
        let distinct: BTreeSet<&String> = words.iter().collect();
        if distinct.len() != words.len() {
            return Err(Error::data("word table contains duplicates"));
        }
        for (i, a) in arcs.iter().enumerate() {
            if a.from >= n || a.to >= n {
                return Err(Error::Structure(format!("arc {i} references a missing node")));
            }
            if a.word.is_some_and(|w| w as usize >= words.len()) {
                return Err(Error::Structure(format!("arc {i} references a missing word id")));
            }
            if !(a.acoustic.is_finite() && a.lm.is_finite()) {
                return Err(Error::Structure(format!("arc {i} has a non-finite score")));
            }
            if times[a.to] < times[a.from] {
                return Err(Error::Structure(format!("arc {i} goes back in time")));
            }
        }
        // Kahn's algorithm, smallest ready node first.
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, a) in arcs.iter().enumerate() {
            indeg[a.to] += 1;
            out[a.from].push(i);
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            topo.push(v);
            for &i in &out[v] {
                let t = arcs[i].to;
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.insert(t);
                }
            }
        }
        if topo.len() != n {
            return Err(Error::Structure("lattice contains a cycle".into()));
        }
        let (start, end) = (0, n - 1);
        let mut fwd = vec![false; n];
        fwd[start] = true;
        for &v in &topo {
            if fwd[v] {
                for &i in &out[v] {
                    fwd[arcs[i].to] = true;
                }
            }
        }
        let mut bwd = vec![false; n];
        bwd[end] = true;
        for &v in topo.iter().rev() {
            if out[v].iter().any(|&i| bwd[arcs[i].to]) {
                bwd[v] = true;
            }
        }
        if !fwd[end] {
            return Err(Error::Structure("end node is unreachable from the start".into()));
        }
        if let Some(i) = arcs.iter().position(|a| !(fwd[a.from] && bwd[a.to])) {
            return Err(Error::Structure(format!("arc {i} lies on no start → end path")));
        }
        Ok(Lattice {
            words,
            times,
            arcs,
            topo,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    pub fn arcs(&self) -> &[LatArc] {
        &self.arcs
    }

    pub fn num_nodes(&self) -> usize {
        self.times.len()
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn end(&self) -> usize {
        self.times.len() - 1
    }

    /// Nodes in topological order.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn word_strings(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.words[i as usize].clone()).collect()
    }

    /// Arc indices leaving each node.
    pub fn out_arcs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_nodes()];
        for (i, a) in self.arcs.iter().enumerate() {
            out[a.from].push(i);
        }
        out
    }

    /// Arc indices entering each node.
    pub fn in_arcs(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.num_nodes()];
        for (i, a) in self.arcs.iter().enumerate() {
            inc[a.to].push(i);
        }
        inc
    }

    /// Number of complete paths (saturating).
    pub fn path_count(&self) -> u128 {
        let mut count = vec![0u128; self.num_nodes()];
        count[self.start()] = 1;
        let out = self.out_arcs();
        for &v in &self.topo {
            for &i in &out[v] {
                let t = self.arcs[i].to;
                count[t] = count[t].saturating_add(count[v]);
            }
        }
        count[self.end()]
    }

    /// Every complete path, or `None` when there are more than `cap`.
    pub fn enumerate_paths(&self, cap: usize) -> Option<Vec<PathInfo>> {
        if self.path_count() > cap as u128 {
            return None;
        }
        let out = self.out_arcs();
        let mut paths = Vec::new();
        let mut stack: Vec<(usize, Vec<usize>)> = vec![(self.start(), Vec::new())];
        while let Some((v, arcs)) = stack.pop() {
            if v == self.end() {
                let mut p = PathInfo {
                    words: Vec::new(),
                    acoustic: 0.0,
                    lm: 0.0,
                    arcs: arcs.clone(),
                };
                for &i in &arcs {
                    let a = &self.arcs[i];
                    p.acoustic += a.acoustic;
                    p.lm += a.lm;
                    p.words.extend(a.word);
                }
                paths.push(p);
                continue;
            }
            for &i in out[v].iter().rev() {
                let mut next = arcs.clone();
                next.push(i);
                stack.push((self.arcs[i].to, next));
            }
        }
        Some(paths)
    }

    /// Same graph with scores replaced by `f(arc)`.
    pub fn map_scores(&self, f: impl Fn(&LatArc) -> (f64, f64)) -> Result<Lattice> {
        let arcs = self
            .arcs
            .iter()
            .map(|a| {
                let (acoustic, lm) = f(a);
                LatArc {
                    acoustic,
                    lm,
                    ..a.clone()
                }
            })
            .collect();
        Lattice::new(self.words.clone(), self.times.clone(), arcs)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("LATTICE v1 {} {}\n", self.num_nodes(), self.arcs.len());
        for (i, w) in self.words.iter().enumerate() {
            let _ = writeln!(s, "W {i} {w}");
        }
        for (i, t) in self.times.iter().enumerate() {
            let _ = writeln!(s, "N {i} {t}");
        }
        for a in &self.arcs {
            let w = a.word.map_or(EPS, |w| self.words[w as usize].as_str());
            let _ = writeln!(s, "A {} {} {w} {} {}", a.from, a.to, fmt_g9(a.acoustic), fmt_g9(a.lm));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
            .filter(|(_, f)| !f.is_empty());
        let (ln, head) = lines.next().ok_or_else(|| perr(0, "empty lattice file".into()))?;
        if head.len() != 4 || head[0] != "LATTICE" {
            return Err(perr(ln, "expected `LATTICE v1 <nodes> <arcs>`".into()));
        }
        if head[1] != "v1" {
            return Err(Error::Version {
                expected: 1,
                found: head[1].trim_start_matches('v').parse().unwrap_or(0),
            });
        }
        let num =
            |ln: usize, s: &str| -> Result<usize> { s.parse().map_err(|_| perr(ln, format!("bad integer `{s}`"))) };
        let n_nodes = num(ln, head[2])?;
        let n_arcs = num(ln, head[3])?;
        let mut words: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, u32> = BTreeMap::new();
        let mut times = Vec::with_capacity(n_nodes);
        let mut arcs = Vec::with_capacity(n_arcs);
        for (ln, f) in lines {
            match f[0] {
                "W" => {
                    if f.len() != 3 || !times.is_empty() || !arcs.is_empty() {
                        return Err(perr(ln, "word lines are `W <id> <word>` and precede nodes".into()));
                    }
                    if num(ln, f[1])? != words.len() {
                        return Err(perr(ln, "word ids must be consecutive from 0".into()));
                    }
                    if index.insert(f[2].to_string(), words.len() as u32).is_some() {
                        return Err(perr(ln, format!("duplicate word `{}`", f[2])));
                    }
                    words.push(f[2].to_string());
                }
                "N" => {
                    if f.len() != 3 || !arcs.is_empty() {
                        return Err(perr(ln, "node lines are `N <id> <time>` and precede arcs".into()));
                    }
                    if num(ln, f[1])? != times.len() {
                        return Err(perr(ln, "node ids must be consecutive from 0".into()));
                    }
                    let t: u32 = f[2].parse().map_err(|_| perr(ln, format!("bad time `{}`", f[2])))?;
                    times.push(t);
                }
                "A" => {
                    if f.len() != 6 {
                        return Err(perr(ln, "arc lines are `A <from> <to> <word> <ac> <lm>`".into()));
                    }
                    let word = if f[3] == EPS {
                        None
                    } else {
                        Some(
                            *index
                                .get(f[3])
                                .ok_or_else(|| perr(ln, format!("word `{}` not in table", f[3])))?,
                        )
                    };
                    let score = |s: &str| -> Result<f64> {
                        let v: f64 = s.parse().map_err(|_| perr(ln, format!("bad score `{s}`")))?;
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(perr(ln, format!("non-finite score `{s}`")))
                        }
                    };
                    arcs.push(LatArc {
                        from: num(ln, f[1])?,
                        to: num(ln, f[2])?,
                        word,
                        acoustic: score(f[4])?,
                        lm: score(f[5])?,
                    });
                }
                other => return Err(perr(ln, format!("unknown record type `{other}`"))),
            }
        }
        if times.len() != n_nodes || arcs.len() != n_arcs {
            return Err(perr(
                0,
                format!(
                    "header declares {n_nodes} nodes and {n_arcs} arcs, found {} and {}",
                    times.len(),
                    arcs.len()
                ),
            ));
        }
        Lattice::new(words, times, arcs)
    }
}

/// `%.9g`: 9 significant digits, trailing zeros removed, exponent form
/// outside [1e-5, 1e9).
pub fn fmt_g9(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..9).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip(mant), exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        strip(&format!("{v:.decimals$}"))
    }
}

/// Maps source word ids onto a target table.
#[derive(Clone, Debug, PartialEq)]
pub struct WordMapping {
    pub target: Vec<String>,
    pub map: Vec<Option<u32>>,
}

impl WordMapping {
    /// Aligns `source` to `target` after applying `normalize` to source words.
    pub fn align(source: &[String], target: &[String], normalize: impl Fn(&str) -> String) -> Self {
        let index: BTreeMap<&str, u32> = target.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
        let map = source
            .iter()
            .map(|w| index.get(normalize(w).as_str()).copied())
            .collect();
        WordMapping {
            target: target.to_vec(),
            map,
        }
    }
}

/// Rewrites arc labels onto the mapping's target table.
pub fn relabel_words(l: &Lattice, mapping: &WordMapping) -> Result<Lattice> {
    let mut missing: BTreeSet<String> = BTreeSet::new();
    let mut arcs = l.arcs.clone();
    for a in &mut arcs {
        if let Some(w) = a.word {
            match mapping.map.get(w as usize).copied().flatten() {
                Some(t) => a.word = Some(t),
                None => {
                    missing.insert(l.words[w as usize].clone());
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Vocabulary(missing.into_iter().collect()));
    }
    Lattice::new(mapping.target.clone(), l.times.clone(), arcs)
}

/// Relabels every lattice onto one shared, sorted table of normalised words.
pub fn relabel_to_shared(ls: &[Lattice], normalize: impl Fn(&str) -> String) -> Result<Vec<Lattice>> {
    let shared: BTreeSet<String> = ls.iter().flat_map(|l| l.words.iter().map(|w| normalize(w))).collect();
    let target: Vec<String> = shared.into_iter().collect();
    ls.iter()
        .map(|l| relabel_words(l, &WordMapping::align(&l.words, &target, &normalize)))
        .collect()
}

/// A left-to-right chain spelling `words`; handy for references and tests.
pub fn linear_lattice(table: &[String], words: &[&str], acoustic: f64) -> Result<Lattice> {
    let index: BTreeMap<&str, u32> = table.iter().enumerate().map(|(i, w)| (w.as_str(), i as u32)).collect();
    let mut arcs = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        let id = *index.get(w).ok_or_else(|| Error::Vocabulary(vec![w.to_string()]))?;
        arcs.push(LatArc {
            from: i,
            to: i + 1,
            word: Some(id),
            acoustic,
            lm: 0.0,
        });
    }
    Lattice::new(table.to_vec(), (0..=words.len() as u32).collect(), arcs)
}
