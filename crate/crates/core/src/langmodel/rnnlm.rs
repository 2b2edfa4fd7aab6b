//! Recurrent word language model trained with a penalty on the spread of
//! the softmax log-normaliser.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Vocabulary;
use crate::error::{Error, Result};
use crate::layers::{
    affine_backward, affine_forward, log_softmax_rows, lstm_layer_backward, lstm_layer_forward, AffineParams, LayerIo,
    LstmCache, LstmParams,
};
use crate::model::{hex, ModelParameters};
use crate::tensor::{Rng, Tensor};
use crate::training::{lr_at, TrainingSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnLmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Weight of the log-normaliser variance penalty.
    pub lambda: f64,
}

impl Default for RnnLmConfig {
    fn default() -> Self {
        RnnLmConfig {
            embed_dim: 64,
            hidden_dim: 64,
            layers: 2,
            lambda: 0.1,
        }
    }
}

impl RnnLmConfig {
    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::config("RNN LM dimensions and depth must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnLm {
    pub config: RnnLmConfig,
    pub vocab: Vocabulary,
    /// `V × embed_dim`.
    pub embedding: Tensor,
    pub layers: Vec<LstmParams>,
    pub output: AffineParams,
}

struct LmPass {
    ids: Vec<u32>,
    layers: Vec<LayerIo<LstmCache>>,
    top: Tensor,
    log_probs: Tensor,
    log_z: Tensor,
}

impl RnnLm {
    pub fn init(vocab: Vocabulary, config: RnnLmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let v = vocab.len();
        if v == 0 {
            return Err(Error::config("empty vocabulary"));
        }
        let mut rng = Rng::new(seed);
        let embedding = Tensor::uniform(&[v, config.embed_dim], 0.1, &mut rng);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let in_dim = if l == 0 { config.embed_dim } else { config.hidden_dim };
            layers.push(LstmParams::init(in_dim, config.hidden_dim, &mut rng));
        }
        let output = AffineParams::init(config.hidden_dim, v, &mut rng);
        Ok(RnnLm {
            config,
            vocab,
            embedding,
            layers,
            output,
        })
    }

    /// Hash of dimensions and vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "rnnlm:{}:{}:{}",
            self.config.embed_dim, self.config.hidden_dim, self.config.layers
        ));
        for w in self.vocab.words() {
            h.update([0u8]);
            h.update(w.as_bytes());
        }
        hex(&h.finalize()[..16])
    }

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("emb".to_string(), &self.embedding)];
        for (l, p) in self.layers.iter().enumerate() {
            out.extend(p.tensors().into_iter().map(|(n, t)| (format!("l{l}.{n}"), t)));
        }
        out.extend(self.output.tensors().into_iter().map(|(n, t)| (format!("out.{n}"), t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("emb".to_string(), &mut self.embedding)];
        for (l, p) in self.layers.iter_mut().enumerate() {
            out.extend(p.tensors_mut().into_iter().map(|(n, t)| (format!("l{l}.{n}"), t)));
        }
        out.extend(
            self.output
                .tensors_mut()
                .into_iter()
                .map(|(n, t)| (format!("out.{n}"), t)),
        );
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn to_model(&self) -> ModelParameters {
        let tensors: BTreeMap<String, Tensor> = self.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        ModelParameters::new(tensors, self.fingerprint())
    }

    pub fn from_model(vocab: Vocabulary, config: RnnLmConfig, model: &ModelParameters) -> Result<Self> {
        let mut lm = RnnLm::init(vocab, config, 0)?;
        let fp = lm.fingerprint();
        if model.fingerprint != fp {
            return Err(Error::Fingerprint {
                expected: fp,
                found: model.fingerprint.clone(),
            });
        }
        if model.tensors.len() != lm.tensors().len() {
            return Err(Error::Compatibility("RNN LM tensor set differs".into()));
        }
        for (name, t) in lm.tensors_mut() {
            let src = model
                .tensors
                .get(&name)
                .filter(|s| s.shape() == t.shape())
                .ok_or_else(|| Error::Compatibility(format!("tensor `{name}` missing or mis-shaped")))?;
            *t = src.clone();
        }
        Ok(lm)
    }

    fn forward(&self, ids: &[u32]) -> Result<LmPass> {
        let e = self.config.embed_dim;
        let mut x = Tensor::zeros(&[ids.len(), e]);
        for (t, &i) in ids.iter().enumerate() {
            if i as usize >= self.vocab.len() {
                return Err(Error::data(format!("word id {i} outside vocabulary")));
            }
            x.row_mut(t).copy_from_slice(self.embedding.row(i as usize));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for p in &self.layers {
            let io = lstm_layer_forward(p, &h)?;
            h = io.output.clone();
            layers.push(io);
        }
        let logits = affine_forward(&self.output, &h)?;
        let (log_probs, log_z) = log_softmax_rows(&logits)?;
        Ok(LmPass {
            ids: ids.to_vec(),
            layers,
            top: h,
            log_probs,
            log_z,
        })
    }

    fn backward(&self, pass: &LmPass, grad_logits: &Tensor, acc: &mut RnnLm) -> Result<()> {
        let (mut g, go) = affine_backward(&self.output, &pass.top, grad_logits)?;
        acc.output.w.add_assign(&go.w)?;
        acc.output.b.add_assign(&go.b)?;
        for (l, (p, io)) in self.layers.iter().zip(&pass.layers).enumerate().rev() {
            let (dx, gp) = lstm_layer_backward(p, io, &g)?;
            for ((_, a), (_, b)) in acc.layers[l].tensors_mut().into_iter().zip(gp.tensors()) {
                a.add_assign(b)?;
            }
            g = dx;
        }
        for (t, &i) in pass.ids.iter().enumerate() {
            let row = acc.embedding.row_mut(i as usize);
            for (a, b) in row.iter_mut().zip(g.row(t)) {
                *a += b;
            }
        }
        Ok(())
    }

    fn sentence_ids<S: AsRef<str>>(&self, words: &[S]) -> Result<(Vec<u32>, Vec<u32>)> {
        let bos = self.vocab.bos().ok_or_else(|| Error::data("vocabulary lacks <s>"))?;
        let eos = self.vocab.eos().ok_or_else(|| Error::data("vocabulary lacks </s>"))?;
        let ids = self.vocab.encode(words)?;
        let mut input = vec![bos];
        input.extend(&ids);
        let mut target = ids;
        target.push(eos);
        Ok((input, target))
    }

    /// Natural-log probability of the sentence including `</s>`.
    pub fn sentence_logprob<S: AsRef<str>>(&self, words: &[S]) -> Result<f64> {
        Ok(self.token_logprobs(words)?.iter().sum())
    }

    /// Per-token natural-log probabilities of `words` followed by `</s>`.
    pub fn token_logprobs<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<f64>> {
        let (input, target) = self.sentence_ids(words)?;
        let pass = self.forward(&input)?;
        Ok(target
            .iter()
            .enumerate()
            .map(|(t, &w)| pass.log_probs.row(t)[w as usize])
            .collect())
    }

    /// Log-normalisers of every position of every sentence.
    pub fn log_normalizers<S: AsRef<str>>(&self, corpus: &[Vec<S>]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for s in corpus {
            let (input, _) = self.sentence_ids(s)?;
            out.extend_from_slice(self.forward(&input)?.log_z.data());
        }
        Ok(out)
    }
}

/// Population variance; 0 for fewer than two values.
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    // Shifting by the first value keeps the result exactly 0 for constants.
    let m = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n;
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnnLmEpoch {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over batches of cross-entropy plus the weighted penalty.
    pub loss: f64,
    /// Mean over batches of the cross-entropy alone.
    pub cross_entropy: f64,
    /// Variance of log Z over every training position after the epoch.
    pub variance: f64,
}

#[derive(Clone, Debug)]
pub struct RnnLmOutcome {
    pub model: RnnLm,
    pub epochs: Vec<RnnLmEpoch>,
}

/// Loss, cross-entropy and penalty of a batch, accumulating the gradient
/// into `acc`.
fn batch_step(lm: &RnnLm, batch: &[(Vec<u32>, Vec<u32>)], acc: &mut RnnLm) -> Result<(f64, f64, f64)> {
    let passes = batch.iter().map(|(i, _)| lm.forward(i)).collect::<Result<Vec<_>>>()?;
    let n: usize = batch.iter().map(|(_, t)| t.len()).sum();
    let nf = n as f64;
    let all_z: Vec<f64> = passes.iter().flat_map(|p| p.log_z.data().iter().copied()).collect();
    let mean_z = all_z.iter().sum::<f64>() / nf;
    let var = variance(&all_z);
    let lambda = lm.config.lambda;
    let mut ce = 0.0;
    for (pass, (_, target)) in passes.iter().zip(batch) {
        let mut g = pass.log_probs.map(f64::exp);
        for (t, &w) in target.iter().enumerate() {
            ce -= pass.log_probs.row(t)[w as usize];
            let z = pass.log_z.data()[t];
            let row = g.row_mut(t);
            let pen = if lambda != 0.0 {
                lambda * 2.0 * (z - mean_z)
            } else {
                0.0
            };
            for v in row.iter_mut() {
                *v *= (1.0 + pen) / nf;
            }
            row[w as usize] -= 1.0 / nf;
        }
        lm.backward(pass, &g, acc)?;
    }
    let ce = ce / nf;
    Ok((ce + lambda * var, ce, var))
}

/// Trains on `corpus` (sentences without boundary tokens) by mini-batch SGD.
pub fn train_rnnlm<S: AsRef<str>>(
    corpus: &[Vec<S>],
    vocab: &Vocabulary,
    config: &RnnLmConfig,
    schedule: &TrainingSchedule,
) -> Result<RnnLmOutcome> {
    schedule.validate()?;
    if corpus.is_empty() {
        return Err(Error::data("cannot train an RNN LM on an empty corpus"));
    }
    let mut lm = RnnLm::init(vocab.clone(), config.clone(), schedule.seed)?;
    let data = corpus.iter().map(|s| lm.sentence_ids(s)).collect::<Result<Vec<_>>>()?;
    let batches_per_epoch = data.len().div_ceil(schedule.batch_size);
    let total = schedule.epochs * batches_per_epoch;
    let mut rng = Rng::derive(schedule.seed, 1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epochs = Vec::with_capacity(schedule.epochs);
    let mut step = 0;
    let mut lr = schedule.lr_start;
    for epoch in 1..=schedule.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut ce_sum) = (0.0, 0.0);
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(Vec<u32>, Vec<u32>)> = chunk.iter().map(|&i| data[i].clone()).collect();
            let mut grad = lm.zeros_like();
            let (loss, ce, _) = batch_step(&lm, &batch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    message: format!("non-finite RNN LM loss in epoch {epoch}"),
                    checkpoint: Box::new(lm.to_model()),
                });
            }
            loss_sum += loss;
            ce_sum += ce;
            lr = if total > 1 {
                lr_at(schedule, step, total - 1)?
            } else {
                schedule.lr_start
            };
            step += 1;
            if lr == 0.0 {
                continue;
            }
            let mut scale = lr;
            if let Some(c) = schedule.clip_norm {
                let norm = grad.tensors().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt();
                if norm > c {
                    scale *= c / norm;
                }
            }
            for ((_, p), (_, g)) in lm.tensors_mut().into_iter().zip(grad.tensors()) {
                for (a, b) in p.data_mut().iter_mut().zip(g.data()) {
                    *a -= scale * b;
                }
            }
        }
        let var = variance(&lm.log_normalizers(corpus)?);
        epochs.push(RnnLmEpoch {
            epoch,
            lr,
            loss: loss_sum / batches_per_epoch as f64,
            cross_entropy: ce_sum / batches_per_epoch as f64,
            variance: var,
        });
    }
    Ok(RnnLmOutcome { model: lm, epochs })
}

/// log P(word | history) in nats; the history starts after `<s>`.
pub fn rnnlm_logprob<S: AsRef<str>>(m: &RnnLm, history: &[S], word: &str) -> Result<f64> {
    let bos = m.vocab.bos().ok_or_else(|| Error::data("vocabulary lacks <s>"))?;
    let mut input = vec![bos];
    let hist = m.vocab.encode(history)?;
    input.extend(hist.iter().copied().skip_while(|&i| i == bos));
    let w = m.vocab.id_or_unk(word)?;
    let pass = m.forward(&input)?;
    Ok(pass.log_probs.row(input.len() - 1)[w as usize])
}
