//! Randomised invariants across modules.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

use common::*;
use denselab::adaptation::average_parameters;
use denselab::harness::{gen_synthetic, load_model, save_model, SyntheticTaskSpec};
use denselab::langmodel::ngram::{prune_ngram, train_ngram, Discount, NGramConfig, NGramModel};
use denselab::lattice::{
    best_path, edit_distance, forward_backward, lattice_union, mbr_decode, tpe_minimize, CombinationWeights, Lattice,
    MbrConfig, Scales, TpeConfig,
};
use denselab::layers::affine::log_softmax_rows;
use denselab::tensor::{Rng, Tensor};
use denselab::topology::{build_stack, ArchitectureSpec, ConnectivityMode, Network};
use denselab::training::{lr_at, TrainingSchedule};

fn words() -> Vec<String> {
    table(&["a", "b", "c"])
}

/// Word sequences with their scores, sorted, for multiset comparison.
fn path_multiset(l: &Lattice, s: &Scales) -> Vec<(Vec<String>, f64)> {
    let mut v = brute_paths(l, s);
    v.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    v
}

fn expected_risk(post: &BTreeMap<Vec<String>, f64>, hyp: &[String]) -> f64 {
    post.iter().map(|(w, p)| p * levenshtein(w, hyp) as f64).sum()
}

fn ngram_sum_error(m: &NGramModel, ctx: &[u32]) -> f64 {
    let s: f64 = m.predictable().map(|w| m.logprob_ids(ctx, w).exp()).sum();
    (s - 1.0).abs()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: Some(Box::new(FileFailurePersistence::Off)), ..ProptestConfig::with_cases(64) })]

    #[test]
    fn lattice_text_round_trip(seed in any::<u64>()) {
        let l = random_lattice(&mut Rng::new(seed), &words(), 12, 0.2);
        let text = l.to_text();
        let back = Lattice::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
    }

    #[test]
    fn union_preserves_paths(seed in any::<u64>(), w0 in 0.1f64..3.0, w1 in 0.1f64..3.0) {
        let mut rng = Rng::new(seed);
        let ls = [random_lattice(&mut rng, &words(), 6, 0.2), random_lattice(&mut rng, &words(), 6, 0.2)];
        let s = Scales::default();
        let u = lattice_union(&ls, &CombinationWeights { system: vec![w0, w1], ..CombinationWeights::uniform(2) }).unwrap();
        // Each system's paths shifted by ln w_i - ln Z_i.
        let mut want = Vec::new();
        for (l, w) in ls.iter().zip([w0, w1]) {
            let paths = brute_paths(l, &s);
            let z = log_sum_exp(paths.iter().map(|p| p.1));
            want.extend(paths.into_iter().map(|(ws, sc)| (ws, sc + w.ln() - z)));
        }
        want.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let got = path_multiset(&u, &s);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(&g.0, &w.0);
            prop_assert!((g.1 - w.1).abs() < 1e-9, "{} vs {}", g.1, w.1);
        }
    }

    #[test]
    fn path_posteriors_sum_to_one(seed in any::<u64>(), lm in 0.0f64..2.0, pen in -1.0f64..1.0) {
        let l = random_lattice(&mut Rng::new(seed), &words(), 12, 0.2);
        let s = Scales { acoustic: 1.0, lm, insertion_penalty: pen };
        let log_z = forward_backward(&l, &s).unwrap().log_z;
        let total: f64 = brute_paths(&l, &s).iter().map(|p| (p.1 - log_z).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum {total}");
    }

    #[test]
    fn mbr_risk_not_above_map(seed in any::<u64>()) {
        let l = random_lattice(&mut Rng::new(seed), &words(), 12, 0.2);
        let s = Scales::default();
        let h = mbr_decode(&l, &s, &MbrConfig::default()).unwrap();
        let post = brute_sequence_posteriors(&l, &s);
        let map = l.word_strings(&best_path(&l, &s).words);
        prop_assert!(expected_risk(&post, &h.words) <= expected_risk(&post, &map) + 1e-9);
        prop_assert!((expected_risk(&post, &h.words) - h.risk).abs() < 1e-9);
    }

    #[test]
    fn weighting_one_system_keeps_its_mbr(seed in any::<u64>(), w in 0.01f64..100.0) {
        let l = random_lattice(&mut Rng::new(seed), &words(), 12, 0.2);
        let cw = CombinationWeights { system: vec![w], ..CombinationWeights::uniform(1) };
        let u = lattice_union(std::slice::from_ref(&l), &cw).unwrap();
        let cfg = MbrConfig::default();
        let alone = mbr_decode(&l, &cw.scales(), &cfg).unwrap();
        let weighted = mbr_decode(&u, &cw.scales(), &cfg).unwrap();
        prop_assert_eq!(alone.words, weighted.words);
    }

    #[test]
    fn edit_distance_counts_are_consistent(
        a in prop::collection::vec(0u8..3, 0..8),
        b in prop::collection::vec(0u8..3, 0..8),
    ) {
        let e = edit_distance(&a, &b);
        prop_assert!(e.distance <= a.len().max(b.len()));
        prop_assert!(e.distance >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn log_softmax_rows_normalise(rows in prop::collection::vec(prop::collection::vec(-700.0f64..700.0, 1..6), 1..4)) {
        let k = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(k, 0.0); r }).collect();
        let (lp, log_z) = log_softmax_rows(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for t in 0..lp.rows() {
            let s: f64 = lp.row(t).iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(log_z.data()[t].is_finite());
        }
    }

    #[test]
    fn lr_schedule_is_monotone(
        hi in 1e-4f64..1.0, ratio in 1e-3f64..1.0, total in 1usize..200, exponential in any::<bool>(),
    ) {
        let mut s = TrainingSchedule { lr_start: hi, lr_end: hi * ratio, epochs: 1, batch_size: 1, ..sweep() };
        if !exponential {
            s.decay = denselab::training::LrDecay::Linear;
        }
        prop_assert_eq!(lr_at(&s, 0, total).unwrap(), s.lr_start);
        prop_assert_eq!(lr_at(&s, total, total).unwrap(), s.lr_end);
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = lr_at(&s, step, total).unwrap();
            prop_assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn tpe_stays_in_box(seed in any::<u64>(), lower in -3.0f64..0.0, width in 0.1f64..4.0, dim in 1usize..4) {
        let cfg = TpeConfig { lower, upper: lower + width, seed, warmup: 4, ..TpeConfig::default() };
        let r = tpe_minimize(|x| Ok(x.iter().map(|v| (v - lower - width / 3.0).powi(2)).sum()), dim, 16, &cfg).unwrap();
        for o in &r.history {
            prop_assert!(o.x.iter().all(|v| (lower..=lower + width).contains(v)), "{:?}", o.x);
        }
        let best = r.history.iter().map(|o| o.value).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(best, r.best_value);
    }
}

fn sweep() -> TrainingSchedule {
    denselab::harness::sweep_schedule()
}

fn random_stack(mode: u8, layers: usize, d: usize, block: usize) -> ArchitectureSpec {
    build_stack(ConnectivityMode::ALL[mode as usize % 3], layers, 5, d, block, 4).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: Some(Box::new(FileFailurePersistence::Off)), ..ProptestConfig::with_cases(16) })]

    #[test]
    fn ngram_normalised_before_and_after_pruning(
        seed in any::<u64>(), kn in any::<bool>(), theta in 0.0f64..1e-2, ctx_seed in any::<u64>(),
    ) {
        let corpus = markov_corpus(6, 60, seed);
        let m = train_ngram(&corpus, &NGramConfig { order: 3, discount: Discount::Estimated, kneser_ney: kn }).unwrap();
        let pruned = prune_ngram(&m, &[theta, theta]).unwrap();
        let preds: Vec<u32> = m.predictable().filter(|&w| Some(w) != m.vocab().eos()).collect();
        let mut rng = Rng::new(ctx_seed);
        for _ in 0..10 {
            let mut ctx: Vec<u32> = (0..rng.below(3)).map(|_| preds[rng.below(preds.len())]).collect();
            if rng.unit() < 0.5 {
                ctx.insert(0, m.vocab().bos().unwrap());
            }
            prop_assert!(ngram_sum_error(&m, &ctx) < 1e-6, "full model, ctx {:?}", ctx);
            prop_assert!(ngram_sum_error(&pruned, &ctx) < 1e-6, "pruned model, ctx {:?}", ctx);
        }
    }

    #[test]
    fn pruning_is_monotone(seed in any::<u64>(), t1 in 0.0f64..1e-2, t2 in 0.0f64..1e-2) {
        let corpus = markov_corpus(6, 60, seed);
        let m = train_ngram(&corpus, &NGramConfig::new(3)).unwrap();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let small = prune_ngram(&m, &[lo, lo]).unwrap();
        let large = prune_ngram(&m, &[hi, hi]).unwrap();
        for (k, table) in large.tables().iter().enumerate() {
            for g in table.keys() {
                prop_assert!(small.tables()[k].contains_key(g), "{:?} kept at {} but pruned at {}", g, hi, lo);
            }
        }
    }

    #[test]
    fn fingerprint_survives_json(mode in 0u8..3, layers in 1usize..6, d in 1usize..9, block in 1usize..4) {
        let spec = random_stack(mode, layers, d, block);
        let back = ArchitectureSpec::from_json(&spec.to_json()).unwrap();
        prop_assert_eq!(back.fingerprint(), spec.fingerprint());
    }

    #[test]
    fn dense_growth_formula(m in 1usize..6, d in 1usize..9, input in 1usize..20) {
        let block = denselab::topology::DenseBlockSpec::uniform_lstm(m, d);
        let dims = block.layer_input_dims(input);
        prop_assert_eq!(dims[0], input);
        for (l, &dim) in dims.iter().enumerate() {
            prop_assert_eq!(dim, input + l * d);
        }
        prop_assert_eq!(block.output_dim(), m * d);
    }

    #[test]
    fn init_is_reproducible_and_persists(mode in 0u8..3, layers in 1usize..4, d in 1usize..6, seed in any::<u64>()) {
        let spec = random_stack(mode, layers, d, 2);
        let a = Network::init(&spec, seed).unwrap().to_model();
        let b = Network::init(&spec, seed).unwrap().to_model();
        prop_assert!(a.bitwise_eq(&b));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&a, &path).unwrap();
        let back = load_model(&path).unwrap();
        prop_assert!(back.bitwise_eq(&a));
        prop_assert_eq!(back.checksum(), a.checksum());
    }

    #[test]
    fn half_average_is_symmetric(mode in 0u8..3, layers in 1usize..4, s1 in any::<u64>(), s2 in any::<u64>()) {
        let spec = random_stack(mode, layers, 4, 2);
        let a = Network::init(&spec, s1).unwrap().to_model();
        let b = Network::init(&spec, s2).unwrap().to_model();
        let ab = average_parameters(&a, &b, 0.5).unwrap();
        let ba = average_parameters(&b, &a, 0.5).unwrap();
        prop_assert!(ab.bitwise_eq(&ba));
    }

    #[test]
    fn synthetic_data_is_deterministic_and_in_range(seed in any::<u64>(), min_len in 1usize..6, extra in 0usize..6) {
        let spec = SyntheticTaskSpec { min_len, max_len: min_len + extra, ..SyntheticTaskSpec::default() };
        let a = gen_synthetic(&spec, 5, seed).unwrap();
        prop_assert_eq!(&a, &gen_synthetic(&spec, 5, seed).unwrap());
        for s in a.domain_a.iter().chain(&a.domain_b) {
            prop_assert!((spec.min_len..=spec.max_len).contains(&s.labels.len()));
            prop_assert_eq!(s.features.shape(), &[s.labels.len(), spec.feature_dim][..]);
            prop_assert!(s.labels.iter().all(|&k| k < spec.num_classes));
        }
    }
}
