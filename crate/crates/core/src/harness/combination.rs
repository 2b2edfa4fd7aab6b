//! Word lattices from frame posteriors and the system-combination study.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::experiments::{sweep_schedule, StackConfig};
use super::report::{format_table, ExperimentReport};
use super::synthetic::{gen_domain, Domain, SyntheticTaskSpec};
use crate::error::{Error, Result};
use crate::langmodel::{train_ngram, train_rnnlm, NGramConfig, RnnLmConfig, Vocabulary};
use crate::lattice::tpe::combination_wer;
use crate::lattice::{
    mbr_decode, random_search, rescore_lattice, tune_weights_tpe, word_error_rate, CombinationWeights, LatArc, Lattice,
    MbrConfig, Scales, Scorer, TpeConfig, UnionScaling,
};
use crate::tensor::Tensor;
use crate::topology::Network;
use crate::training::{train, LabeledSequence, TrainingSchedule};

/// Anything that assigns per-frame class log-posteriors to a sequence.
pub trait PosteriorSource {
    fn log_posteriors(&self, seq: &LabeledSequence) -> Result<Tensor>;
}

impl PosteriorSource for Network {
    fn log_posteriors(&self, seq: &LabeledSequence) -> Result<Tensor> {
        self.log_probs(&seq.features)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Half {
    First,
    Second,
}

/// A system built from the reference labels: confident and right on one
/// half of every sequence, and on the other half favouring the next class
/// over the right one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSystem {
    pub num_classes: usize,
    pub weak: Half,
    /// Posterior of the correct class outside the weak half.
    pub strong_correct: f64,
    /// Posterior of the correct class inside the weak half.
    pub weak_correct: f64,
    /// Posterior of the competing class inside the weak half.
    pub weak_wrong: f64,
}

impl PlantedSystem {
    pub fn new(num_classes: usize, weak: Half) -> Self {
        PlantedSystem {
            num_classes,
            weak,
            strong_correct: 0.9,
            weak_correct: 0.35,
            weak_wrong: 0.6,
        }
    }

    /// Two systems whose weak halves do not overlap.
    pub fn complementary_pair(num_classes: usize) -> [Self; 2] {
        [
            PlantedSystem::new(num_classes, Half::First),
            PlantedSystem::new(num_classes, Half::Second),
        ]
    }
}

impl PosteriorSource for PlantedSystem {
    fn log_posteriors(&self, seq: &LabeledSequence) -> Result<Tensor> {
        let k = self.num_classes;
        if k < 3 {
            return Err(Error::config("planted systems need at least 3 classes"));
        }
        let rest_weak = (1.0 - self.weak_correct - self.weak_wrong) / (k - 2) as f64;
        let rest_strong = (1.0 - self.strong_correct) / (k - 1) as f64;
        if !(rest_weak > 0.0 && rest_strong > 0.0) {
            return Err(Error::config(
                "planted posteriors must leave mass for the other classes",
            ));
        }
        let t = seq.len();
        let mut data = Vec::with_capacity(t * k);
        for (i, &y) in seq.labels.iter().enumerate() {
            let first = 2 * i < t;
            let weak = first == (self.weak == Half::First);
            for c in 0..k {
                let p = if !weak {
                    if c == y {
                        self.strong_correct
                    } else {
                        rest_strong
                    }
                } else if c == y {
                    self.weak_correct
                } else if c == (y + 1) % k {
                    self.weak_wrong
                } else {
                    rest_weak
                };
                data.push(p.ln());
            }
        }
        Tensor::matrix(t, k, data)
    }
}

/// Segmentation rule turning frame posteriors into a word lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSynthesis {
    /// Parallel word arcs per segment.
    pub top: usize,
    /// Arcs scoring more than this many nats below the segment's best are
    /// dropped.
    pub beam: f64,
}

impl Default for LatticeSynthesis {
    fn default() -> Self {
        LatticeSynthesis { top: 3, beam: 3.0 }
    }
}

/// Word for class `k`.
pub fn class_word(k: usize) -> String {
    format!("w{k}")
}

pub fn class_words(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(class_word).collect()
}

/// Reference transcript: one word per run of identical labels.
pub fn reference_words(labels: &[usize]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut last = None;
    for &y in labels {
        if last != Some(y) {
            out.push(class_word(y));
            last = Some(y);
        }
    }
    out
}

/// Segments are runs of identical frame argmax. Each segment contributes up
/// to `top` parallel word arcs (its best-scoring classes) whose acoustic
/// score is the summed log-posterior over the segment's frames.
pub fn posterior_lattice(log_post: &Tensor, synth: &LatticeSynthesis) -> Result<Lattice> {
    if synth.top == 0 || !(synth.beam >= 0.0) {
        return Err(Error::config("lattice synthesis needs top ≥ 1 and a nonnegative beam"));
    }
    let (t, k) = (log_post.rows(), log_post.cols());
    if t == 0 {
        return Err(Error::data("cannot build a lattice for an empty sequence"));
    }
    let best = log_post.argmax_rows();
    let mut bounds = vec![0];
    for i in 1..t {
        if best[i] != best[i - 1] {
            bounds.push(i);
        }
    }
    bounds.push(t);
    let mut arcs = Vec::new();
    for (s, w) in bounds.windows(2).enumerate() {
        let mut scores: Vec<(f64, usize)> = (0..k)
            .map(|c| ((w[0]..w[1]).map(|i| log_post.row(i)[c]).sum(), c))
            .collect();
        scores.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let top = scores[0].0;
        for &(score, c) in scores.iter().take(synth.top) {
            if score >= top - synth.beam {
                arcs.push(LatArc {
                    from: s,
                    to: s + 1,
                    word: Some(c as u32),
                    acoustic: score,
                    lm: 0.0,
                });
            }
        }
    }
    let times = bounds.iter().map(|&b| b as u32).collect();
    Lattice::new(class_words(k), times, arcs)
}

/// Lattices of one system for a set of sequences.
pub fn system_lattices(
    source: &dyn PosteriorSource,
    data: &[LabeledSequence],
    synth: &LatticeSynthesis,
) -> Result<Vec<Lattice>> {
    data.iter()
        .map(|q| posterior_lattice(&source.log_posteriors(q)?, synth))
        .collect()
}

/// Corpus WER of MBR-decoding each lattice.
pub fn lattice_wer(lattices: &[Lattice], refs: &[Vec<String>], scales: &Scales, mbr: &MbrConfig) -> Result<f64> {
    let hyps = lattices
        .iter()
        .map(|l| mbr_decode(l, scales, mbr).map(|h| h.words))
        .collect::<Result<Vec<_>>>()?;
    word_error_rate(refs, &hyps)
}

/// Corpus WER of MBR-decoding the per-utterance union of `systems`.
pub fn union_wer(
    systems: &[&[Lattice]],
    refs: &[Vec<String>],
    weights: &CombinationWeights,
    mbr: &MbrConfig,
) -> Result<f64> {
    let owned: Vec<Vec<Lattice>> = systems.iter().map(|s| s.to_vec()).collect();
    combination_wer(&owned, refs, weights, mbr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Trained {
        name: String,
        stack: StackConfig,
        schedule: TrainingSchedule,
    },
    Planted {
        name: String,
        system: PlantedSystem,
    },
}

impl SystemConfig {
    pub fn name(&self) -> &str {
        match self {
            SystemConfig::Trained { name, .. } | SystemConfig::Planted { name, .. } => name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationStudyConfig {
    pub task: SyntheticTaskSpec,
    pub train_sequences: usize,
    pub dev_sequences: usize,
    pub test_sequences: usize,
    pub systems: Vec<SystemConfig>,
    pub synthesis: LatticeSynthesis,
    pub lm_scale: f64,
    pub insertion_penalty: f64,
    pub ngram: NGramConfig,
    pub rnnlm: RnnLmConfig,
    pub rnnlm_schedule: TrainingSchedule,
    /// N-best depth for RNN LM rescoring.
    pub rnn_nbest: usize,
    pub mbr: MbrConfig,
    pub tpe: TpeConfig,
    pub budget: usize,
    pub seed: u64,
}

impl Default for CombinationStudyConfig {
    fn default() -> Self {
        // Short utterances keep the lattices small enough for exact MBR.
        let task = SyntheticTaskSpec {
            min_len: 8,
            max_len: 12,
            ..Default::default()
        };
        let mut lm_schedule = TrainingSchedule::new(0.5, 0.05, 4, 8, 0);
        lm_schedule.momentum = 0.9;
        lm_schedule.validation_fraction = 0.0;
        let trained = |name: &str, stack: StackConfig| SystemConfig::Trained {
            name: name.into(),
            stack,
            schedule: sweep_schedule(),
        };
        CombinationStudyConfig {
            systems: vec![
                trained(
                    "residual-L2",
                    StackConfig {
                        mode: crate::topology::ConnectivityMode::Residual,
                        layers: 2,
                        cell_dim: 16,
                        block_size: 5,
                    },
                ),
                trained(
                    "dense-L4",
                    StackConfig {
                        mode: crate::topology::ConnectivityMode::Dense,
                        layers: 4,
                        cell_dim: 16,
                        block_size: 2,
                    },
                ),
            ],
            task,
            train_sequences: 2000,
            dev_sequences: 60,
            test_sequences: 100,
            synthesis: LatticeSynthesis::default(),
            lm_scale: 0.5,
            insertion_penalty: 0.0,
            ngram: NGramConfig::new(4),
            rnnlm: RnnLmConfig {
                embed_dim: 16,
                hidden_dim: 16,
                layers: 1,
                lambda: 0.1,
            },
            rnnlm_schedule: lm_schedule,
            rnn_nbest: 20,
            mbr: MbrConfig::default(),
            tpe: TpeConfig::default(),
            budget: 30,
            seed: 0,
        }
    }
}

/// WERs of one rescoring condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    /// `none`, `ngram` or `rnn`.
    pub condition: String,
    /// Test WER of each system alone.
    pub system_wer: Vec<f64>,
    /// Test WER of the union with equal weights.
    pub uniform_wer: f64,
    /// Test WER of the union with weights tuned on the dev split.
    pub tuned_wer: f64,
    pub tuned_weights: Vec<f64>,
    pub dev_best_wer: f64,
    /// Best dev WER of random search at the same budget.
    pub random_dev_best_wer: f64,
}

#[derive(Clone, Debug)]
pub struct CombinationStudyResult {
    pub systems: Vec<String>,
    pub conditions: Vec<ConditionResult>,
    /// Test WER of the first system combined with itself.
    pub self_combination_wer: f64,
    pub report: ExperimentReport,
}

struct Split {
    data: Vec<LabeledSequence>,
    refs: Vec<Vec<String>>,
}

fn split(task: &SyntheticTaskSpec, n: usize, seed: u64) -> Result<Split> {
    let data = gen_domain(task, Domain::A, n, seed)?;
    let refs = data.iter().map(|q| reference_words(&q.labels)).collect();
    Ok(Split { data, refs })
}

/// Builds each system, turns its dev/test posteriors into lattices, and
/// reports single-system, uniform-union and tuned-union WERs without
/// rescoring and after n-gram and RNN LM rescoring.
pub fn run_combination_study(cfg: &CombinationStudyConfig, out: Option<&Path>) -> Result<CombinationStudyResult> {
    if cfg.systems.len() < 2 {
        return Err(Error::config("the combination study needs at least two systems"));
    }
    let started = Instant::now();
    let train_split = split(&cfg.task, cfg.train_sequences, cfg.seed)?;
    let dev = split(&cfg.task, cfg.dev_sequences, cfg.seed.wrapping_add(0xde5))?;
    let test = split(&cfg.task, cfg.test_sequences, cfg.seed.wrapping_add(0x7e57))?;

    let mut dev_lats: Vec<Vec<Lattice>> = Vec::new();
    let mut test_lats: Vec<Vec<Lattice>> = Vec::new();
    for sys in &cfg.systems {
        let source: Box<dyn PosteriorSource> = match sys {
            SystemConfig::Trained { stack, schedule, .. } => {
                let spec = stack.build(&cfg.task)?;
                let model = train(&spec, &train_split.data, schedule)?.model;
                Box::new(Network::from_model(&spec, &model)?)
            }
            SystemConfig::Planted { system, .. } => Box::new(system.clone()),
        };
        dev_lats.push(system_lattices(source.as_ref(), &dev.data, &cfg.synthesis)?);
        test_lats.push(system_lattices(source.as_ref(), &test.data, &cfg.synthesis)?);
    }

    let corpus = &train_split.refs;
    let mut vocab_words: Vec<Vec<String>> = corpus.clone();
    vocab_words.push(class_words(cfg.task.num_classes));
    let vocab = Vocabulary::from_corpus(&vocab_words);
    let ngram = train_ngram(corpus, &cfg.ngram)?;
    let mut lm_schedule = cfg.rnnlm_schedule.clone();
    lm_schedule.seed = cfg.seed;
    let rnn = train_rnnlm(corpus, &vocab, &cfg.rnnlm, &lm_schedule)?.model;

    let weights = |system: Vec<f64>| CombinationWeights {
        system,
        lm_scale: cfg.lm_scale,
        insertion_penalty: cfg.insertion_penalty,
        scaling: UnionScaling::Posterior,
    };
    let uniform = weights(vec![1.0; cfg.systems.len()]);
    let scales = uniform.scales();
    let rescore_all = |sets: &[Vec<Lattice>], scorer: Option<&Scorer>| -> Result<Vec<Vec<Lattice>>> {
        sets.iter()
            .map(|ls| {
                ls.iter()
                    .map(|l| match scorer {
                        Some(s) => rescore_lattice(l, s, 1.0),
                        None => Ok(l.clone()),
                    })
                    .collect()
            })
            .collect()
    };
    let ngram_scorer = Scorer::NGram(&ngram);
    let rnn_scorer = Scorer::Rnn {
        lm: &rnn,
        nbest: cfg.rnn_nbest,
        scales,
    };
    let mut conditions = Vec::new();
    for (name, scorer) in [
        ("none", None),
        ("ngram", Some(&ngram_scorer)),
        ("rnn", Some(&rnn_scorer)),
    ] {
        let dev_c = rescore_all(&dev_lats, scorer)?;
        let test_c = rescore_all(&test_lats, scorer)?;
        let system_wer = test_c
            .iter()
            .map(|ls| lattice_wer(ls, &test.refs, &scales, &cfg.mbr))
            .collect::<Result<Vec<_>>>()?;
        let uniform_wer = combination_wer(&test_c, &test.refs, &uniform, &cfg.mbr)?;
        let (tuned, tpe) = tune_weights_tpe(&dev_c, &dev.refs, cfg.budget, &uniform, &cfg.mbr, &cfg.tpe)?;
        let random = random_search(
            |x: &[f64]| combination_wer(&dev_c, &dev.refs, &weights(x.to_vec()), &cfg.mbr),
            cfg.systems.len(),
            cfg.budget,
            &cfg.tpe,
        )?;
        conditions.push(ConditionResult {
            condition: name.to_string(),
            system_wer,
            uniform_wer,
            tuned_wer: combination_wer(&test_c, &test.refs, &tuned, &cfg.mbr)?,
            tuned_weights: tuned.system,
            dev_best_wer: tpe.best_value,
            random_dev_best_wer: random.best_value,
        });
    }
    let self_combination_wer = union_wer(
        &[test_lats[0].as_slice(), test_lats[0].as_slice()],
        &test.refs,
        &weights(vec![1.0, 1.0]),
        &cfg.mbr,
    )?;
    let systems: Vec<String> = cfg.systems.iter().map(|s| s.name().to_string()).collect();
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_combination_csv(&dir.join("combination.csv"), &systems, &conditions)?;
        outputs.push("combination.csv".to_string());
    }
    let report = ExperimentReport {
        experiment: "combination-study".into(),
        config: serde_json::to_value(cfg)?,
        seeds: vec![cfg.seed],
        metrics: serde_json::json!({
            "systems": systems,
            "conditions": conditions,
            "self_combination_wer": self_combination_wer,
        }),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        outputs,
    };
    if let Some(dir) = out {
        report.save(&dir.join("report.json"))?;
    }
    Ok(CombinationStudyResult {
        systems,
        conditions,
        self_combination_wer,
        report,
    })
}

pub fn write_combination_csv(path: &Path, systems: &[String], conditions: &[ConditionResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["condition", "system", "test_wer"])?;
    for c in conditions {
        for (name, wer) in systems.iter().zip(&c.system_wer) {
            w.write_record([c.condition.as_str(), name, &wer.to_string()])?;
        }
        w.write_record([c.condition.as_str(), "union-uniform", &c.uniform_wer.to_string()])?;
        w.write_record([c.condition.as_str(), "union-tuned", &c.tuned_wer.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn combination_table(systems: &[String], conditions: &[ConditionResult]) -> String {
    let mut header: Vec<&str> = vec!["condition"];
    header.extend(systems.iter().map(String::as_str));
    header.extend(["union-uniform", "union-tuned", "dev-tpe", "dev-random"]);
    let rows: Vec<Vec<String>> = conditions
        .iter()
        .map(|c| {
            let mut r = vec![c.condition.clone()];
            r.extend(c.system_wer.iter().map(|w| format!("{w:.4}")));
            r.extend([c.uniform_wer, c.tuned_wer, c.dev_best_wer, c.random_dev_best_wer].map(|w| format!("{w:.4}")));
            r
        })
        .collect();
    format_table(&header, &rows)
}
