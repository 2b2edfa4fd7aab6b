//! Backoff n-gram models: interpolated absolute discounting (optionally
//! Kneser–Ney), relative-entropy pruning and ARPA text I/O.
//!
//! Probabilities are stored as base-10 logarithms, exactly as they appear
//! in ARPA files, so reading a written model reproduces it bit for bit.
//! [`ngram_logprob`] reports natural logarithms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Bound;

use serde::{Deserialize, Serialize};

use super::{Vocabulary, BOS, EOS};
use crate::error::{Error, Result};

/// Log10 value standing in for probability zero.
pub const LOG10_ZERO: f64 = -99.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Discount {
    /// `n1 / (n1 + 2 n2)` from the count-of-counts of each order.
    Estimated,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    pub discount: Discount,
    #[serde(default)]
    pub kneser_ney: bool,
}

impl NGramConfig {
    pub fn new(order: usize) -> Self {
        NGramConfig {
            order,
            discount: Discount::Estimated,
            kneser_ney: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NGramEntry {
    /// log10 P(w | h).
    pub logp: f64,
    /// log10 backoff weight, present only when the n-gram is a context of
    /// some stored longer n-gram.
    pub bow: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocabulary,
    /// `tables[k - 1]` holds the k-grams keyed by their full id tuple.
    tables: Vec<BTreeMap<Vec<u32>, NGramEntry>>,
}

fn to_log10(p: f64) -> f64 {
    if p > 0.0 {
        p.log10().max(LOG10_ZERO)
    } else {
        LOG10_ZERO
    }
}

fn pow10(l: f64) -> f64 {
    10f64.powf(l)
}

impl NGramModel {
    /// Builds a model from explicit tables (unigrams must cover the whole
    /// vocabulary). Backoff weights are taken as given.
    pub fn from_tables(vocab: Vocabulary, tables: Vec<BTreeMap<Vec<u32>, NGramEntry>>) -> Result<Self> {
        if tables.is_empty() {
            return Err(Error::config("an n-gram model needs at least one order"));
        }
        if vocab.bos().is_none() || vocab.eos().is_none() {
            return Err(Error::data(format!("vocabulary must contain {BOS} and {EOS}")));
        }
        for (k, t) in tables.iter().enumerate() {
            if let Some(bad) = t
                .keys()
                .find(|g| g.len() != k + 1 || g.iter().any(|&i| i as usize >= vocab.len()))
            {
                return Err(Error::data(format!("malformed {}-gram key {bad:?}", k + 1)));
            }
        }
        if tables[0].len() != vocab.len() {
            return Err(Error::data("unigram table must list every vocabulary word"));
        }
        Ok(NGramModel {
            order: tables.len(),
            vocab,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn tables(&self) -> &[BTreeMap<Vec<u32>, NGramEntry>] {
        &self.tables
    }

    pub fn entry(&self, gram: &[u32]) -> Option<&NGramEntry> {
        self.tables.get(gram.len().checked_sub(1)?)?.get(gram)
    }

    pub fn num_entries(&self) -> usize {
        self.tables.iter().map(BTreeMap::len).sum()
    }

    /// Words that can be predicted: the vocabulary minus `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = u32> + '_ {
        let bos = self.vocab.bos();
        (0..self.vocab.len() as u32).filter(move |&i| Some(i) != bos)
    }

    /// log10 P(w | context) by the backoff recursion. Only the last
    /// `order − 1` context ids matter.
    pub fn logprob10_ids(&self, context: &[u32], w: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut ctx = &context[context.len() - keep..];
        let mut acc = 0.0;
        let mut gram = Vec::with_capacity(keep + 1);
        loop {
            gram.clear();
            gram.extend_from_slice(ctx);
            gram.push(w);
            if let Some(e) = self.tables[ctx.len()].get(&gram) {
                return acc + e.logp;
            }
            if ctx.is_empty() {
                return acc + LOG10_ZERO;
            }
            if let Some(b) = self.tables[ctx.len() - 1].get(ctx).and_then(|e| e.bow) {
                acc += b;
            }
            ctx = &ctx[1..];
        }
    }

    /// Natural-log P(w | context) on ids.
    pub fn logprob_ids(&self, context: &[u32], w: u32) -> f64 {
        self.logprob10_ids(context, w) * std::f64::consts::LN_10
    }

    fn prob_ids(&self, context: &[u32], w: u32) -> f64 {
        pow10(self.logprob10_ids(context, w))
    }

    /// Recomputes every backoff weight from the stored probabilities, from
    /// the lowest order up.
    fn recompute_backoffs(&mut self) {
        for k in 1..self.order {
            self.recompute_backoffs_of_order(k);
        }
    }

    /// Backoff weights of the k-gram contexts from the (k+1)-gram table.
    fn recompute_backoffs_of_order(&mut self, k: usize) {
        let mut bows: Vec<(Vec<u32>, Option<f64>)> = Vec::with_capacity(self.tables[k - 1].len());
        for h in self.tables[k - 1].keys() {
            let mut numer = 1.0;
            let mut denom = 1.0;
            let mut any = false;
            for (g, e) in children(&self.tables[k], h) {
                any = true;
                numer -= pow10(e.logp);
                denom -= self.prob_ids(&h[1..], g[k]);
            }
            let bow = any.then(|| {
                if numer <= 0.0 {
                    LOG10_ZERO
                } else if denom <= 1e-15 {
                    0.0
                } else {
                    to_log10(numer / denom)
                }
            });
            bows.push((h.clone(), bow));
        }
        for (h, b) in bows {
            self.tables[k - 1].get_mut(&h).expect("key from table").bow = b;
        }
    }

    /// Serialises to ARPA text.
    pub fn to_arpa(&self) -> String {
        let mut s = String::from("\n\\data\\\n");
        for (k, t) in self.tables.iter().enumerate() {
            let _ = writeln!(s, "ngram {}={}", k + 1, t.len());
        }
        for (k, t) in self.tables.iter().enumerate() {
            let _ = write!(s, "\n\\{}-grams:\n", k + 1);
            for (g, e) in t {
                let words: Vec<&str> = g.iter().map(|&i| self.vocab.word(i)).collect();
                let _ = write!(s, "{}\t{}", e.logp, words.join(" "));
                if let Some(b) = e.bow {
                    let _ = write!(s, "\t{b}");
                }
                s.push('\n');
            }
        }
        s.push_str("\n\\end\\\n");
        s
    }

    /// Parses ARPA text. Unigram order defines the vocabulary ids.
    pub fn from_arpa(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut counts: Vec<usize> = Vec::new();
        // Header.
        loop {
            let (ln, l) = lines.next().ok_or_else(|| perr(0, "missing \\data\\ section".into()))?;
            if l == "\\data\\" {
                break;
            }
            if !l.is_empty() {
                return Err(perr(ln, format!("unexpected text before \\data\\: `{l}`")));
            }
        }
        let mut pending = None;
        for (ln, l) in lines.by_ref() {
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix("ngram ") {
                let (k, n) = rest
                    .split_once('=')
                    .ok_or_else(|| perr(ln, format!("malformed count line `{l}`")))?;
                let k: usize = k.trim().parse().map_err(|_| perr(ln, format!("bad order `{k}`")))?;
                let n: usize = n.trim().parse().map_err(|_| perr(ln, format!("bad count `{n}`")))?;
                if k != counts.len() + 1 {
                    return Err(perr(ln, format!("order {k} listed out of sequence")));
                }
                counts.push(n);
            } else {
                pending = Some((ln, l));
                break;
            }
        }
        if counts.is_empty() {
            return Err(perr(0, "no ngram counts in \\data\\ section".into()));
        }
        let order = counts.len();
        let mut words: Vec<String> = Vec::new();
        let mut index: std::collections::HashMap<String, u32> = Default::default();
        let mut raw: Vec<Vec<(Vec<String>, NGramEntry, usize)>> = vec![Vec::new(); order];
        let mut current: Option<usize> = None;
        let mut ended = false;
        let mut handle = |ln: usize, l: &str, current: &mut Option<usize>| -> Result<bool> {
            if l.is_empty() {
                return Ok(false);
            }
            if l == "\\end\\" {
                return Ok(true);
            }
            if let Some(h) = l.strip_prefix('\\').and_then(|r| r.strip_suffix("-grams:")) {
                let k: usize = h.parse().map_err(|_| perr(ln, format!("bad section header `{l}`")))?;
                if k == 0 || k > order {
                    return Err(perr(ln, format!("section for undeclared order {k}")));
                }
                *current = Some(k);
                return Ok(false);
            }
            let k = current.ok_or_else(|| perr(ln, format!("entry outside any section: `{l}`")))?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != k + 1 && fields.len() != k + 2 {
                return Err(perr(
                    ln,
                    format!("expected {k} words, a log-prob and an optional backoff"),
                ));
            }
            let num = |s: &str| -> Result<f64> {
                let v: f64 = s.parse().map_err(|_| perr(ln, format!("bad number `{s}`")))?;
                if v.is_nan() {
                    return Err(perr(ln, "NaN in model".into()));
                }
                Ok(v)
            };
            let logp = num(fields[0])?;
            let bow = if fields.len() == k + 2 {
                Some(num(fields[k + 1])?)
            } else {
                None
            };
            let ws: Vec<String> = fields[1..=k].iter().map(|s| s.to_string()).collect();
            if k == 1 {
                if index.contains_key(&ws[0]) {
                    return Err(perr(ln, format!("duplicate unigram `{}`", ws[0])));
                }
                index.insert(ws[0].clone(), words.len() as u32);
                words.push(ws[0].clone());
            }
            raw[k - 1].push((ws, NGramEntry { logp, bow }, ln));
            Ok(false)
        };
        if let Some((ln, l)) = pending {
            ended = handle(ln, l, &mut current)?;
        }
        if !ended {
            for (ln, l) in lines {
                if handle(ln, l, &mut current)? {
                    ended = true;
                    break;
                }
            }
        }
        if !ended {
            return Err(perr(0, "missing \\end\\ marker".into()));
        }
        let vocab = Vocabulary::new(words)?;
        let mut tables = vec![BTreeMap::new(); order];
        for (k, entries) in raw.into_iter().enumerate() {
            if entries.len() != counts[k] {
                return Err(perr(
                    0,
                    format!(
                        "{}-gram section has {} entries, header says {}",
                        k + 1,
                        entries.len(),
                        counts[k]
                    ),
                ));
            }
            for (ws, e, ln) in entries {
                let ids = ws
                    .iter()
                    .map(|w| {
                        vocab
                            .id(w)
                            .ok_or_else(|| perr(ln, format!("word `{w}` missing from unigrams")))
                    })
                    .collect::<Result<Vec<u32>>>()?;
                if tables[k].insert(ids, e).is_some() {
                    return Err(perr(ln, "duplicate n-gram".into()));
                }
            }
        }
        NGramModel::from_tables(vocab, tables)
    }
}

/// Entries of `table` whose key starts with `prefix` (one word longer).
fn children<'a>(
    table: &'a BTreeMap<Vec<u32>, NGramEntry>,
    prefix: &'a [u32],
) -> impl Iterator<Item = (&'a Vec<u32>, &'a NGramEntry)> + 'a {
    table
        .range::<Vec<u32>, _>((Bound::Included(prefix.to_vec()), Bound::Unbounded))
        .take_while(move |(g, _)| g.starts_with(prefix))
}

fn estimate_discount(counts: &BTreeMap<Vec<u32>, f64>) -> f64 {
    let n1 = counts.values().filter(|&&c| c == 1.0).count() as f64;
    let n2 = counts.values().filter(|&&c| c == 2.0).count() as f64;
    if n1 + 2.0 * n2 == 0.0 {
        0.5
    } else {
        (n1 / (n1 + 2.0 * n2)).min(1.0)
    }
}

/// Trains on `corpus` (sentences without boundary tokens; they are added)
/// over the vocabulary built from the corpus.
pub fn train_ngram<S: AsRef<str>>(corpus: &[Vec<S>], config: &NGramConfig) -> Result<NGramModel> {
    train_ngram_with_vocab(corpus, Vocabulary::from_corpus(corpus), config)
}

/// Trains over a fixed vocabulary; corpus words outside it count as `<unk>`.
pub fn train_ngram_with_vocab<S: AsRef<str>>(
    corpus: &[Vec<S>],
    vocab: Vocabulary,
    config: &NGramConfig,
) -> Result<NGramModel> {
    let n = config.order;
    if n == 0 {
        return Err(Error::config("n-gram order must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::data("cannot train an n-gram model on an empty corpus"));
    }
    if let Discount::Fixed(d) = config.discount {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::config(format!("discount must lie in [0, 1], got {d}")));
        }
    }
    let bos = vocab
        .bos()
        .ok_or_else(|| Error::data(format!("vocabulary lacks {BOS}")))?;
    let eos = vocab
        .eos()
        .ok_or_else(|| Error::data(format!("vocabulary lacks {EOS}")))?;

    let mut counts: Vec<BTreeMap<Vec<u32>, f64>> = vec![BTreeMap::new(); n];
    for sent in corpus {
        let mut ids = vec![bos];
        ids.extend(vocab.encode(sent)?);
        ids.push(eos);
        for i in 1..ids.len() {
            for k in 1..=n.min(i + 1) {
                *counts[k - 1].entry(ids[i + 1 - k..=i].to_vec()).or_insert(0.0) += 1.0;
            }
        }
    }
    if config.kneser_ney {
        // Lower orders count distinct left extensions, except n-grams that
        // begin at the sentence start, which have none.
        for k in (1..n).rev() {
            let mut cont: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            for g in counts[k].keys() {
                *cont.entry(g[1..].to_vec()).or_insert(0.0) += 1.0;
            }
            for (g, c) in counts[k - 1].iter_mut() {
                if g[0] != bos {
                    *c = cont.get(g).copied().unwrap_or(0.0);
                }
            }
            counts[k - 1].retain(|_, c| *c > 0.0);
        }
    }
    let discounts: Vec<f64> = counts
        .iter()
        .map(|c| match config.discount {
            Discount::Fixed(d) => d,
            Discount::Estimated => estimate_discount(c),
        })
        .collect();

    // Unigrams: discounted frequency plus uniform share of the held-back mass.
    let mut uni = BTreeMap::new();
    let total: f64 = counts[0].values().sum();
    let types = counts[0].len() as f64;
    let support = (vocab.len() - 1) as f64;
    let d1 = discounts[0];
    for w in 0..vocab.len() as u32 {
        let logp = if w == bos {
            LOG10_ZERO
        } else {
            let c = counts[0].get(&vec![w]).copied().unwrap_or(0.0);
            to_log10((c - d1).max(0.0) / total + d1 * types / total / support)
        };
        uni.insert(vec![w], NGramEntry { logp, bow: None });
    }
    let mut model = NGramModel {
        order: 1,
        vocab,
        tables: vec![uni],
    };

    for k in 2..=n {
        let d = discounts[k - 1];
        let mut hist: BTreeMap<&[u32], (f64, f64)> = BTreeMap::new();
        for (g, &c) in &counts[k - 1] {
            let e = hist.entry(&g[..k - 1]).or_insert((0.0, 0.0));
            e.0 += c;
            e.1 += 1.0;
        }
        let mut table = BTreeMap::new();
        for (g, &c) in &counts[k - 1] {
            let (ch, types) = hist[&g[..k - 1]];
            let lower = model.prob_ids(&g[1..k - 1], g[k - 1]);
            let p = (c - d).max(0.0) / ch + d * types / ch * lower;
            table.insert(
                g.clone(),
                NGramEntry {
                    logp: to_log10(p),
                    bow: None,
                },
            );
        }
        // Histories of k-grams are stored (k−1)-grams; `<s>` alone is a
        // unigram and every longer history was itself counted.
        model.tables.push(table);
        model.order = k;
        model.recompute_backoffs_of_order(k - 1);
    }
    Ok(model)
}

/// log P(word | context) in nats; out-of-vocabulary words map to `<unk>`.
pub fn ngram_logprob<S: AsRef<str>>(m: &NGramModel, context: &[S], word: &str) -> Result<f64> {
    let ctx = m.vocab.encode(context)?;
    let w = m.vocab.id_or_unk(word)?;
    Ok(m.logprob_ids(&ctx, w))
}

/// Probability of the history under the model (the leading `<s>` counts
/// as certain).
fn history_prob(m: &NGramModel, h: &[u32]) -> f64 {
    let bos = m.vocab.bos();
    let mut lp = 0.0;
    for i in 0..h.len() {
        if i == 0 && Some(h[0]) == bos {
            continue;
        }
        lp += m.logprob10_ids(&h[..i], h[i]);
    }
    pow10(lp)
}

/// Relative-entropy increase (nats) caused by removing each entry of order
/// ≥ 2 on its own, with the backoff weight of its context renormalised.
pub fn prune_criteria(m: &NGramModel) -> BTreeMap<Vec<u32>, f64> {
    let mut out = BTreeMap::new();
    for k in 2..=m.order {
        let table = &m.tables[k - 1];
        let mut hist: BTreeMap<&[u32], (f64, f64)> = BTreeMap::new();
        for (g, e) in table {
            let s = hist.entry(&g[..k - 1]).or_insert((1.0, 1.0));
            s.0 -= pow10(e.logp);
            s.1 -= m.prob_ids(&g[1..k - 1], g[k - 1]);
        }
        for (g, e) in table {
            let h = &g[..k - 1];
            let (numer, denom) = hist[h];
            let p = pow10(e.logp);
            let p_low = m.prob_ids(&g[1..k - 1], g[k - 1]);
            let new_numer = numer + p;
            let new_denom = denom + p_low;
            let ln_alpha_new = new_numer.ln() - new_denom.ln();
            let mut kl = p * (p.ln() - p_low.ln() - ln_alpha_new);
            if numer > 0.0 && denom > 0.0 {
                kl += numer * (numer.ln() - denom.ln() - ln_alpha_new);
            }
            out.insert(g.clone(), history_prob(m, h) * kl);
        }
    }
    out
}

/// Removes entries whose [`prune_criteria`] value falls below their order's
/// threshold (`thresholds[k − 2]` for order k), keeping any entry that is
/// the context of a surviving longer entry, then renormalises.
pub fn prune_ngram(m: &NGramModel, thresholds: &[f64]) -> Result<NGramModel> {
    if thresholds.len() != m.order.saturating_sub(1) {
        return Err(Error::config(format!(
            "a {}-gram model needs {} pruning thresholds, got {}",
            m.order,
            m.order.saturating_sub(1),
            thresholds.len()
        )));
    }
    if let Some(t) = thresholds.iter().find(|t| t.is_nan() || **t < 0.0) {
        return Err(Error::config(format!(
            "pruning thresholds must be nonnegative, got {t}"
        )));
    }
    let crit = prune_criteria(m);
    let mut out = m.clone();
    for k in (2..=m.order).rev() {
        let theta = thresholds[k - 2];
        let longer: Option<&BTreeMap<Vec<u32>, NGramEntry>> = out.tables.get(k);
        let is_context = |g: &Vec<u32>| longer.is_some_and(|t| children(t, g).next().is_some());
        let drop: Vec<Vec<u32>> = out.tables[k - 1]
            .keys()
            .filter(|g| theta > 0.0 && crit[*g] < theta && !is_context(g))
            .cloned()
            .collect();
        for g in drop {
            out.tables[k - 1].remove(&g);
        }
    }
    out.recompute_backoffs();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn corpus(seed: u64, n: usize) -> Vec<Vec<String>> {
        let words = ["a", "b", "c", "d", "e"];
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| {
                let len = 1 + rng.below(6);
                let mut prev = rng.below(5);
                (0..len)
                    .map(|_| {
                        prev = if rng.unit() < 0.6 { (prev + 1) % 5 } else { rng.below(5) };
                        words[prev].to_string()
                    })
                    .collect()
            })
            .collect()
    }

    fn normalization_error(m: &NGramModel, ctx: &[u32]) -> f64 {
        let s: f64 = m.predictable().map(|w| m.logprob_ids(ctx, w).exp()).sum();
        (s - 1.0).abs()
    }

    fn random_context(m: &NGramModel, rng: &mut Rng) -> Vec<u32> {
        let len = rng.below(m.order());
        let preds: Vec<u32> = m.predictable().filter(|&w| Some(w) != m.vocab().eos()).collect();
        let mut ctx: Vec<u32> = (0..len).map(|_| preds[rng.below(preds.len())]).collect();
        if rng.unit() < 0.5 {
            ctx.insert(0, m.vocab().bos().unwrap());
        }
        ctx
    }

    #[test]
    fn deterministic_bigram() {
        let c: Vec<Vec<&str>> = (0..10).map(|_| vec!["a", "b"]).collect();
        let m = train_ngram(&c, &NGramConfig::new(2)).unwrap();
        let p = ngram_logprob(&m, &["a"], "b").unwrap().exp();
        // No singletons or doubletons: discount 0.5, so P = 0.95 + 0.05·P(b).
        let pb = ngram_logprob(&m, &[] as &[&str], "b").unwrap().exp();
        assert!((p - (0.95 + 0.05 * pb)).abs() < 1e-12);
        assert!(p > 0.95);
    }

    #[test]
    fn unigram_hand_count() {
        // Tokens: a a b </s> | a </s>  → N = 6, counts a3 b1 </s>2, 3 types.
        let c = vec![vec!["a", "a", "b"], vec!["a"]];
        let m = train_ngram(
            &c,
            &NGramConfig {
                order: 1,
                discount: Discount::Fixed(0.5),
                kneser_ney: false,
            },
        )
        .unwrap();
        // Support: <unk>, </s>, a, b.
        let floor = 0.5 * 3.0 / 6.0 / 4.0;
        let expect = [
            ("a", 2.5 / 6.0 + floor),
            ("b", 0.5 / 6.0 + floor),
            ("</s>", 1.5 / 6.0 + floor),
            ("<unk>", floor),
        ];
        for (w, p) in expect {
            let got = ngram_logprob(&m, &[] as &[&str], w).unwrap().exp();
            assert!((got - p).abs() < 1e-12, "{w}: {got} vs {p}");
        }
    }

    #[test]
    fn uniform_unigram_is_minus_log_v() {
        let vocab = Vocabulary::new(["<s>", "</s>", "x", "y"].map(String::from).to_vec()).unwrap();
        let mut t = BTreeMap::new();
        let lp = to_log10(1.0 / 3.0);
        t.insert(
            vec![0],
            NGramEntry {
                logp: LOG10_ZERO,
                bow: None,
            },
        );
        for w in 1..4 {
            t.insert(vec![w], NGramEntry { logp: lp, bow: None });
        }
        let m = NGramModel::from_tables(vocab, vec![t]).unwrap();
        for w in ["x", "y", "</s>"] {
            assert!((ngram_logprob(&m, &["x"], w).unwrap() + 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn stored_trigram_exact_and_unseen_positive() {
        let c = corpus(1, 60);
        let m = train_ngram(&c, &NGramConfig::new(3)).unwrap();
        let (g, e) = m.tables()[2].iter().next().unwrap();
        assert_eq!(m.logprob10_ids(&g[..2], g[2]), e.logp);
        for ctx in [vec![], vec![3], vec![1, 4]] {
            for w in m.predictable() {
                assert!(m.logprob_ids(&ctx, w) > -1e3);
            }
        }
    }

    #[test]
    fn normalization_sweep() {
        for kn in [false, true] {
            let c = corpus(2, 80);
            let m = train_ngram(
                &c,
                &NGramConfig {
                    order: 3,
                    discount: Discount::Estimated,
                    kneser_ney: kn,
                },
            )
            .unwrap();
            let mut rng = Rng::new(5);
            for _ in 0..100 {
                let ctx = random_context(&m, &mut rng);
                assert!(normalization_error(&m, &ctx) < 1e-9, "ctx {ctx:?}");
            }
        }
    }

    #[test]
    fn arpa_round_trip_bit_exact() {
        let m = train_ngram(&corpus(3, 50), &NGramConfig::new(3)).unwrap();
        let text = m.to_arpa();
        let back = NGramModel::from_arpa(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_arpa(), text);
    }

    #[test]
    fn arpa_errors_have_lines() {
        let m = train_ngram(&corpus(3, 5), &NGramConfig::new(2)).unwrap();
        let text = m.to_arpa().replacen("\\2-grams:\n", "\\2-grams:\nnotanumber a b\n", 1);
        assert!(matches!(NGramModel::from_arpa(&text), Err(Error::Parse { line, .. }) if line > 0));
        assert!(NGramModel::from_arpa("garbage").is_err());
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let m = train_ngram(&corpus(4, 50), &NGramConfig::new(3)).unwrap();
        let p = prune_ngram(&m, &[0.0, 0.0]).unwrap();
        for (a, b) in m.tables().iter().zip(p.tables()) {
            assert!(a.keys().eq(b.keys()));
        }
    }

    #[test]
    fn infinite_threshold_reduces_to_unigram() {
        let m = train_ngram(&corpus(4, 50), &NGramConfig::new(2)).unwrap();
        let p = prune_ngram(&m, &[f64::INFINITY]).unwrap();
        assert!(p.tables()[1].is_empty());
        assert!(p.tables()[0].values().all(|e| e.bow.is_none()));
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let ctx = random_context(&p, &mut rng);
            assert!(normalization_error(&p, &ctx) < 1e-9);
        }
    }

    /// Exact relative entropy of the conditional at `h` between the model
    /// and the model with one entry removed, summed over the vocabulary.
    fn brute_force_criterion(m: &NGramModel, g: &[u32]) -> f64 {
        let mut reduced = m.clone();
        reduced.tables[g.len() - 1].remove(g);
        reduced.recompute_backoffs();
        let h = &g[..g.len() - 1];
        let kl: f64 = m
            .predictable()
            .map(|w| {
                let p = m.logprob_ids(h, w);
                p.exp() * (p - reduced.logprob_ids(h, w))
            })
            .sum();
        history_prob(m, h) * kl
    }

    #[test]
    fn criterion_matches_brute_force() {
        let m = train_ngram(&corpus(6, 30), &NGramConfig::new(3)).unwrap();
        let crit = prune_criteria(&m);
        for (g, &c) in &crit {
            let b = brute_force_criterion(&m, g);
            assert!((c - b).abs() <= 1e-9 * b.abs().max(1e-6), "{g:?}: {c} vs {b}");
        }
        // The pruned entry set equals the oracle's, context closure included.
        let theta = [1e-3, 1e-3];
        let p = prune_ngram(&m, &theta).unwrap();
        let mut expect: Vec<Vec<u32>> = Vec::new();
        for k in (2..=3).rev() {
            for g in m.tables()[k - 1].keys() {
                let ctx = expect.iter().any(|e| e.len() == k + 1 && e.starts_with(g));
                if brute_force_criterion(&m, g) >= theta[k - 2] || ctx {
                    expect.push(g.clone());
                }
            }
        }
        let got: Vec<Vec<u32>> = p.tables()[1..].iter().rev().flat_map(|t| t.keys().cloned()).collect();
        let mut e = expect.clone();
        e.sort();
        let mut gsorted = got.clone();
        gsorted.sort();
        assert_eq!(gsorted, e);
        assert!(p.num_entries() < m.num_entries());
    }

    #[test]
    fn pruning_is_monotone_and_normalized() {
        let m = train_ngram(&corpus(7, 80), &NGramConfig::new(3)).unwrap();
        let levels = [0.0, 1e-5, 1e-4, 1e-3, 1e-2];
        let mut prev: Option<NGramModel> = None;
        let mut rng = Rng::new(3);
        for &t in &levels {
            let p = prune_ngram(&m, &[t, t]).unwrap();
            for _ in 0..20 {
                let ctx = random_context(&p, &mut rng);
                assert!(normalization_error(&p, &ctx) < 1e-9);
            }
            if let Some(q) = &prev {
                for (a, b) in p.tables().iter().zip(q.tables()) {
                    assert!(a.keys().all(|g| b.contains_key(g)));
                }
            }
            prev = Some(p);
        }
    }

    #[test]
    fn bad_thresholds() {
        let m = train_ngram(&corpus(7, 5), &NGramConfig::new(3)).unwrap();
        assert!(matches!(prune_ngram(&m, &[0.1]), Err(Error::Config(_))));
        assert!(matches!(prune_ngram(&m, &[0.1, -1.0]), Err(Error::Config(_))));
        assert!(matches!(
            train_ngram(&[] as &[Vec<String>], &NGramConfig::new(2)),
            Err(Error::Data(_))
        ));
    }
}
