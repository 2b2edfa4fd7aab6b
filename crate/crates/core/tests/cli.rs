//! End-to-end runs of the `denselab` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_denselab"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn summary(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {:?}", o))
}

const TRAIN_CONFIG: &str = r#"{
  "stack": {"mode": "dense", "layers": 2, "cell_dim": 6, "block_size": 2},
  "schedule": {"lr_start": 0.2, "lr_end": 0.05, "epochs": 2, "batch_size": 4, "momentum": 0.9, "seed": 0}
}"#;

#[test]
fn train_eval_adapt_average_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = run(dir, &["--seed", "5", "--out", "data", "gen-data", "--sequences", "30"]);
    assert!(o.status.success(), "{o:?}");
    let s = summary(&o);
    assert_eq!(s["command"], "gen-data");
    assert!(s["bayes_error_a"].as_f64().unwrap() < 0.05);
    assert!(!o.stderr.is_empty(), "tables go to stderr");

    std::fs::write(dir.join("train.json"), TRAIN_CONFIG).unwrap();
    let train = |out: &str| {
        run(
            dir,
            &[
                "--config",
                "train.json",
                "--seed",
                "3",
                "--out",
                out,
                "train",
                "--data",
                "data/domain_a.json",
            ],
        )
    };
    let (a, b) = (train("m1"), train("m2"));
    assert!(a.status.success(), "{a:?}");
    assert_eq!(summary(&a)["checksum"], summary(&b)["checksum"]);
    assert_eq!(
        std::fs::read(dir.join("m1/model.bin")).unwrap(),
        std::fs::read(dir.join("m2/model.bin")).unwrap()
    );
    let metrics = std::fs::read_to_string(dir.join("m1/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,"));

    let e = run(
        dir,
        &[
            "eval",
            "--arch",
            "m1/arch.json",
            "--model",
            "m1/model.json",
            "--data",
            "data/domain_b.json",
        ],
    );
    let ev = summary(&e)["evaluation"].clone();
    assert!((0.0..=1.0).contains(&ev["frame_error"].as_f64().unwrap()));

    let ad = run(
        dir,
        &[
            "--out",
            "ad",
            "adapt",
            "--arch",
            "m1/arch.json",
            "--model",
            "m1/model.json",
            "--data",
            "data/domain_b.json",
        ],
    );
    assert!(ad.status.success(), "{ad:?}");
    let seed_sum = summary(&a)["checksum"].clone();
    assert_eq!(summary(&ad)["parents"][0], seed_sum);

    let av = run(
        dir,
        &[
            "--out",
            "av",
            "average",
            "--arch",
            "m1/arch.json",
            "--a",
            "m1/model.json",
            "--b",
            "ad/adapted.json",
        ],
    );
    let parents = summary(&av)["parents"].clone();
    assert_eq!(parents[0], seed_sum);
    assert_eq!(parents[1], summary(&ad)["checksum"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(run(dir, &["--out", "data", "gen-data", "--sequences", "12"])
        .status
        .success());

    std::fs::write(dir.join("bad.json"), "{\"stack\": 3}").unwrap();
    let o = run(dir, &["--config", "bad.json", "train", "--data", "data/domain_a.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(summary(&o)["exit_code"], 2);

    let o = run(dir, &["train", "--data", "missing.json"]);
    assert_eq!(o.status.code(), Some(3));

    let diverge = r#"{"stack": {"mode": "plain", "layers": 1, "cell_dim": 4},
        "schedule": {"lr_start": 1.5e308, "lr_end": 1.5e308, "epochs": 3, "batch_size": 2, "seed": 0, "clip_norm": null}}"#;
    std::fs::write(dir.join("diverge.json"), diverge).unwrap();
    let o = run(
        dir,
        &["--config", "diverge.json", "train", "--data", "data/domain_a.json"],
    );
    assert_eq!(o.status.code(), Some(4), "{o:?}");
}

const LATTICE: &str = "LATTICE v1 3 3
W 0 a
W 1 b
N 0 0
N 1 1
N 2 2
A 0 1 a -0.1 0
A 0 1 b -2.0 0
A 1 2 b -0.5 0
";

#[test]
fn decode_combine_and_malformed_lattice() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("x.lat"), LATTICE).unwrap();
    let o = run(dir, &["decode", "x.lat"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(summary(&o)["results"][0]["words"], serde_json::json!(["a", "b"]));

    let o = run(dir, &["--out", "u", "combine", "x.lat", "x.lat"]);
    assert_eq!(summary(&o)["words"], serde_json::json!(["a", "b"]));
    let union = std::fs::read_to_string(dir.join("u/union.lat")).unwrap();
    assert!(union.starts_with("LATTICE v1"));

    std::fs::write(dir.join("bad.lat"), LATTICE.replace("A 1 2 b", "A 1 9 b")).unwrap();
    assert_eq!(run(dir, &["decode", "bad.lat"]).status.code(), Some(3));
}
