//! `denselab` command-line tool.
//!
//! Every subcommand prints a JSON summary on stdout and human-readable
//! tables on stderr. Exit codes: 0 success, 2 configuration error, 3 data
//! error, 4 numeric or training error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use denselab::adaptation::{adapt, average_parameters};
use denselab::harness::combination::combination_table;
use denselab::harness::experiments::{adapt_table, sweep_table};
use denselab::harness::report::format_table;
use denselab::harness::{
    adapt_study_schedule, gen_synthetic, load_model_for, run_adapt_study, run_combination_study, run_depth_sweep,
    save_model, sweep_schedule, AdaptStudyConfig, CombinationStudyConfig, ExperimentReport, StackConfig, SweepConfig,
    SyntheticTaskSpec,
};
use denselab::langmodel::NGramModel;
use denselab::lattice::tpe::combination_wer;
use denselab::lattice::{
    best_path, lattice_union, mbr_decode, relabel_to_shared, rescore_lattice, tune_weights_tpe, CombinationWeights,
    Lattice, MbrConfig, Scales, Scorer, TpeConfig, UnionScaling,
};
use denselab::model::ModelParameters;
use denselab::topology::{build_stack, ArchitectureSpec, ConnectivityMode};
use denselab::training::{evaluate_model, train, write_metrics_csv, LabeledSequence, TrainingSchedule};
use denselab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "denselab",
    version,
    about = "Dense recurrent acoustic models, adaptation and lattice combination"
)]
struct Cli {
    /// Seed for data generation, training and tuning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-domain dataset.
    GenData {
        #[arg(long, default_value_t = 200)]
        sequences: usize,
    },
    /// Train an acoustic model from scratch.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Frame error and loss of a stored model.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train every (mode, depth, seed) cell of a depth sweep.
    SweepDepth,
    /// Fine-tune a model on target data, or run the adaptation study.
    Adapt {
        #[command(flatten)]
        model: Option<ModelArgs>,
        #[arg(long, requires = "model")]
        data: Option<PathBuf>,
        /// Run the seed/adapted/averaged study instead.
        #[arg(long, conflicts_with_all = ["model", "data"])]
        study: bool,
    },
    /// Interpolate two compatible models.
    Average {
        #[arg(long)]
        arch: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Weight of `b`.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// Decode lattices (MBR by default).
    Decode {
        #[arg(required = true)]
        lattices: Vec<PathBuf>,
        #[command(flatten)]
        scales: ScaleArgs,
        /// Single best path instead of MBR.
        #[arg(long)]
        best: bool,
    },
    /// Replace lattice LM scores with an ARPA n-gram model.
    Rescore {
        #[arg(required = true)]
        lattices: Vec<PathBuf>,
        #[arg(long)]
        arpa: PathBuf,
        /// Multiplier applied to the new LM scores.
        #[arg(long, default_value_t = 1.0)]
        lm_weight: f64,
    },
    /// Union one lattice per system and MBR-decode, or run the combination study.
    Combine {
        lattices: Vec<PathBuf>,
        /// Comma-separated per-system weights (default: equal).
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        #[command(flatten)]
        scales: ScaleArgs,
        #[arg(long, conflicts_with = "lattices")]
        study: bool,
    },
    /// Tune per-system combination weights on a dev set with TPE.
    TuneWeights {
        /// Directory of lattices for one system; repeat per system.
        #[arg(long = "system", required = true)]
        systems: Vec<PathBuf>,
        /// Reference transcripts, one line per lattice in file-name order.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value_t = 50)]
        budget: usize,
        #[command(flatten)]
        scales: ScaleArgs,
    },
    /// Summarise a saved experiment report, optionally re-running it.
    Report {
        report: PathBuf,
        #[arg(long)]
        rerun: bool,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Architecture JSON written by `train`.
    #[arg(long)]
    arch: PathBuf,
    /// Model manifest.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct ScaleArgs {
    #[arg(long, default_value_t = 1.0)]
    acoustic_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    insertion_penalty: f64,
}

impl ScaleArgs {
    fn scales(&self) -> Scales {
        Scales {
            acoustic: self.acoustic_scale,
            lm: self.lm_scale,
            insertion_penalty: self.insertion_penalty,
        }
    }
}

/// Configuration of `train`. `arch` overrides `stack` when present.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainConfig {
    #[serde(default = "default_stack")]
    stack: StackConfig,
    #[serde(default)]
    arch: Option<ArchitectureSpec>,
    /// Output classes; inferred from the labels when absent.
    #[serde(default)]
    num_classes: Option<usize>,
    #[serde(default = "sweep_schedule")]
    schedule: TrainingSchedule,
}

fn default_stack() -> StackConfig {
    StackConfig {
        mode: ConnectivityMode::Dense,
        layers: 4,
        cell_dim: 16,
        block_size: 2,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stack: default_stack(),
            arch: None,
            num_classes: None,
            schedule: sweep_schedule(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            emit(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            emit(&json!({"error": e.to_string(), "exit_code": e.exit_code()}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Writes the JSON summary; a closed stdout is not an error.
fn emit(v: &Value) {
    let text = serde_json::to_string_pretty(v).unwrap_or_default();
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Reads the `--config` file, or the default when none was given. Malformed
/// configuration is a configuration error.
fn config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    config_or(cli, T::default)
}

fn config_or<T: DeserializeOwned>(cli: &Cli, default: impl FnOnce() -> T) -> Result<T> {
    match &cli.config {
        None => Ok(default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out)?;
    Ok(&cli.out)
}

fn load_arch_model(m: &ModelArgs) -> Result<(ArchitectureSpec, ModelParameters)> {
    let spec: ArchitectureSpec = read_json(&m.arch)?;
    let params = load_model_for(&spec, &m.model)?;
    Ok((spec, params))
}

fn read_lattice(path: &Path) -> Result<Lattice> {
    Lattice::from_text(&fs::read_to_string(path)?)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::GenData { sequences } => gen_data(cli, *sequences),
        Command::Train { data } => train_cmd(cli, data),
        Command::Eval { model, data } => {
            let (spec, params) = load_arch_model(model)?;
            let data: Vec<LabeledSequence> = read_json(data)?;
            let ev = evaluate_model(&spec, &params, &data)?;
            eprintln!(
                "{}",
                format_table(
                    &["frames", "loss", "frame_error"],
                    &[vec![
                        ev.frames.to_string(),
                        format!("{:.4}", ev.loss),
                        format!("{:.4}", ev.frame_error)
                    ]]
                )
            );
            Ok(json!({"command": "eval", "evaluation": ev, "checksum": params.checksum()}))
        }
        Command::SweepDepth => {
            let mut cfg: SweepConfig = config(cli)?;
            if let Some(s) = cli.seed {
                cfg.data_seed = s;
            }
            let r = run_depth_sweep(&cfg, Some(out_dir(cli)?))?;
            eprintln!("{}", sweep_table(&r.curves));
            Ok(
                json!({"command": "sweep-depth", "curves": r.curves, "rows": r.rows.len(),
                      "outputs": r.report.outputs, "wall_clock_secs": r.report.wall_clock_secs}),
            )
        }
        Command::Adapt { model, data, study } => {
            if *study {
                let cfg: AdaptStudyConfig = config(cli)?;
                let r = run_adapt_study(&cfg, Some(out_dir(cli)?))?;
                eprintln!("{}", adapt_table(&r.grids));
                let holds = r.grids.iter().filter(|g| g.all_directions()).count();
                return Ok(json!({"command": "adapt", "study": true, "grids": r.grids,
                                 "seeds_with_all_directions": holds, "outputs": r.report.outputs}));
            }
            let (Some(model), Some(data)) = (model, data) else {
                return Err(Error::config("adapt needs --arch, --model and --data, or --study"));
            };
            adapt_cmd(cli, model, data)
        }
        Command::Average { arch, a, b, alpha } => {
            let spec: ArchitectureSpec = read_json(arch)?;
            let ma = load_model_for(&spec, a)?;
            let mb = load_model_for(&spec, b)?;
            let avg = average_parameters(&ma, &mb, *alpha)?;
            let path = out_dir(cli)?.join("averaged.json");
            save_model(&avg, &path)?;
            eprintln!("averaged {} and {} with alpha {alpha}", a.display(), b.display());
            Ok(
                json!({"command": "average", "model": path_str(&path), "checksum": avg.checksum(),
                      "parents": avg.meta.parents}),
            )
        }
        Command::Decode { lattices, scales, best } => decode_cmd(lattices, &scales.scales(), *best),
        Command::Rescore {
            lattices,
            arpa,
            lm_weight,
        } => {
            let lm = NGramModel::from_arpa(&fs::read_to_string(arpa)?)?;
            let dir = out_dir(cli)?;
            let mut outputs = Vec::new();
            for p in lattices {
                let l = rescore_lattice(&read_lattice(p)?, &Scorer::NGram(&lm), *lm_weight)?;
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("lattice");
                let dest = dir.join(format!("{stem}.rescored.lat"));
                fs::write(&dest, l.to_text())?;
                outputs.push(path_str(&dest));
            }
            eprintln!("rescored {} lattice(s) with a {}-gram model", outputs.len(), lm.order());
            Ok(json!({"command": "rescore", "outputs": outputs}))
        }
        Command::Combine {
            lattices,
            weights,
            scales,
            study,
        } => {
            if *study {
                let mut cfg: CombinationStudyConfig = config(cli)?;
                if let Some(s) = cli.seed {
                    cfg.seed = s;
                }
                let r = run_combination_study(&cfg, Some(out_dir(cli)?))?;
                eprintln!("{}", combination_table(&r.systems, &r.conditions));
                return Ok(json!({"command": "combine", "study": true, "systems": r.systems,
                                 "conditions": r.conditions, "self_combination_wer": r.self_combination_wer,
                                 "outputs": r.report.outputs}));
            }
            combine_cmd(cli, lattices, weights.clone(), &scales.scales())
        }
        Command::TuneWeights {
            systems,
            refs,
            budget,
            scales,
        } => tune_cmd(cli, systems, refs, *budget, &scales.scales()),
        Command::Report { report, rerun } => report_cmd(cli, report, *rerun),
    }
}

fn gen_data(cli: &Cli, sequences: usize) -> Result<Value> {
    let spec: SyntheticTaskSpec = config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    let ds = gen_synthetic(&spec, sequences, seed)?;
    let dir = out_dir(cli)?;
    write_json(&dir.join("task.json"), &spec)?;
    write_json(&dir.join("domain_a.json"), &ds.domain_a)?;
    write_json(&dir.join("domain_b.json"), &ds.domain_b)?;
    let frames = |d: &[LabeledSequence]| d.iter().map(LabeledSequence::len).sum::<usize>();
    let bayes = spec.bayes_error();
    eprintln!(
        "{}",
        format_table(
            &["domain", "sequences", "frames"],
            &[
                vec![
                    "A".into(),
                    ds.domain_a.len().to_string(),
                    frames(&ds.domain_a).to_string()
                ],
                vec![
                    "B".into(),
                    ds.domain_b.len().to_string(),
                    frames(&ds.domain_b).to_string()
                ],
            ]
        )
    );
    Ok(json!({
        "command": "gen-data",
        "seed": seed,
        "sequences": sequences,
        "bayes_error_a": bayes,
        "outputs": ["task.json", "domain_a.json", "domain_b.json"],
    }))
}

fn train_cmd(cli: &Cli, data: &Path) -> Result<Value> {
    let mut cfg: TrainConfig = config(cli)?;
    if let Some(s) = cli.seed {
        cfg.schedule.seed = s;
    }
    let data: Vec<LabeledSequence> = read_json(data)?;
    let first = data.first().ok_or_else(|| Error::data("training data is empty"))?;
    let spec = match cfg.arch.clone() {
        Some(a) => a,
        None => {
            let classes = match cfg.num_classes {
                Some(k) => k,
                None => data.iter().flat_map(|q| q.labels.iter()).max().map_or(1, |m| m + 1),
            };
            let st = &cfg.stack;
            build_stack(
                st.mode,
                st.layers,
                first.features.cols(),
                st.cell_dim,
                st.block_size,
                classes,
            )?
        }
    };
    let out = train(&spec, &data, &cfg.schedule)?;
    let dir = out_dir(cli)?;
    write_json(&dir.join("arch.json"), &spec)?;
    save_model(&out.model, &dir.join("model.json"))?;
    write_metrics_csv(&dir.join("metrics.csv"), &out.log)?;
    eprintln!("{}", epoch_table(&out.log));
    Ok(json!({
        "command": "train",
        "config": cfg,
        "fingerprint": spec.fingerprint(),
        "checksum": out.model.checksum(),
        "epochs": out.log,
        "outputs": ["arch.json", "model.json", "model.bin", "metrics.csv"],
    }))
}

fn epoch_table(log: &[denselab::training::EpochMetrics]) -> String {
    let num = |x: f64| {
        if x.abs() < 1e6 {
            format!("{x:.4}")
        } else {
            format!("{x:.4e}")
        }
    };
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), num);
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                format!("{:.3e}", m.lr),
                num(m.train_loss),
                f(m.val_loss),
                f(m.val_frame_error),
            ]
        })
        .collect();
    format_table(&["epoch", "lr", "train_loss", "val_loss", "val_frame_error"], &rows)
}

fn adapt_cmd(cli: &Cli, model: &ModelArgs, data: &Path) -> Result<Value> {
    let (spec, seed_model) = load_arch_model(model)?;
    let data: Vec<LabeledSequence> = read_json(data)?;
    let mut schedule: TrainingSchedule = config_or(cli, adapt_study_schedule)?;
    if let Some(s) = cli.seed {
        schedule.seed = s;
    }
    let out = adapt(&seed_model, &spec, &data, &schedule)?;
    let dir = out_dir(cli)?;
    save_model(&out.model, &dir.join("adapted.json"))?;
    write_metrics_csv(&dir.join("adapt_metrics.csv"), &out.log)?;
    eprintln!("{}", epoch_table(&out.log));
    Ok(json!({
        "command": "adapt",
        "schedule": schedule,
        "checksum": out.model.checksum(),
        "parents": out.model.meta.parents,
        "epochs": out.log,
        "outputs": ["adapted.json", "adapted.bin", "adapt_metrics.csv"],
    }))
}

fn decode_cmd(paths: &[PathBuf], scales: &Scales, best: bool) -> Result<Value> {
    let mbr = MbrConfig::default();
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for p in paths {
        let l = read_lattice(p)?;
        let entry = if best {
            let bp = best_path(&l, scales);
            let words = l.word_strings(&bp.words);
            rows.push(vec![path_str(p), words.join(" "), format!("{:.4}", bp.score)]);
            json!({"lattice": path_str(p), "words": words, "score": bp.score})
        } else {
            let h = mbr_decode(&l, scales, &mbr)?;
            rows.push(vec![path_str(p), h.words.join(" "), format!("{:.4}", h.risk)]);
            json!({"lattice": path_str(p), "words": h.words, "posterior": h.posterior, "risk": h.risk, "exact": h.exact})
        };
        results.push(entry);
    }
    let last = if best { "score" } else { "risk" };
    eprintln!("{}", format_table(&["lattice", "hypothesis", last], &rows));
    Ok(json!({"command": "decode", "method": if best { "best-path" } else { "mbr" }, "results": results}))
}

fn weights_for(n: usize, given: Option<Vec<f64>>, scales: &Scales) -> Result<CombinationWeights> {
    let system = given.unwrap_or_else(|| vec![1.0; n]);
    if system.len() != n {
        return Err(Error::config(format!("{} weights for {n} systems", system.len())));
    }
    let w = CombinationWeights {
        system,
        lm_scale: scales.lm,
        insertion_penalty: scales.insertion_penalty,
        scaling: UnionScaling::Posterior,
    };
    w.validate()?;
    Ok(w)
}

fn combine_cmd(cli: &Cli, paths: &[PathBuf], weights: Option<Vec<f64>>, scales: &Scales) -> Result<Value> {
    if paths.len() < 2 {
        return Err(Error::config("combine needs at least two lattices, or --study"));
    }
    let ls = paths.iter().map(|p| read_lattice(p)).collect::<Result<Vec<_>>>()?;
    let shared = relabel_to_shared(&ls, str::to_string)?;
    let w = weights_for(ls.len(), weights, scales)?;
    let union = lattice_union(&shared, &w)?;
    let h = mbr_decode(&union, &w.scales(), &MbrConfig::default())?;
    let dest = out_dir(cli)?.join("union.lat");
    fs::write(&dest, union.to_text())?;
    eprintln!(
        "{}",
        format_table(
            &["systems", "hypothesis", "risk"],
            &[vec![ls.len().to_string(), h.words.join(" "), format!("{:.4}", h.risk)]]
        )
    );
    Ok(
        json!({"command": "combine", "weights": w.system, "words": h.words, "posterior": h.posterior,
              "risk": h.risk, "exact": h.exact, "union": path_str(&dest)}),
    )
}

/// Lattice files of a directory in file-name order.
fn lattice_dir(dir: &Path) -> Result<Vec<Lattice>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "lat"));
    files.sort();
    files.iter().map(|p| read_lattice(p)).collect()
}

fn tune_cmd(cli: &Cli, dirs: &[PathBuf], refs: &Path, budget: usize, scales: &Scales) -> Result<Value> {
    let systems = dirs.iter().map(|d| lattice_dir(d)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<String>> = fs::read_to_string(refs)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    for (d, s) in dirs.iter().zip(&systems) {
        if s.len() != refs.len() {
            return Err(Error::data(format!(
                "{} holds {} lattices for {} references",
                d.display(),
                s.len(),
                refs.len()
            )));
        }
    }
    // Put each utterance's lattices on one word table.
    let mut systems = systems;
    for u in 0..refs.len() {
        let shared = relabel_to_shared(
            &systems.iter().map(|s| s[u].clone()).collect::<Vec<_>>(),
            str::to_string,
        )?;
        for (s, l) in systems.iter_mut().zip(shared) {
            s[u] = l;
        }
    }
    let mut tpe: TpeConfig = config(cli)?;
    if let Some(s) = cli.seed {
        tpe.seed = s;
    }
    let base = weights_for(systems.len(), None, scales)?;
    let mbr = MbrConfig::default();
    let uniform_wer = combination_wer(&systems, &refs, &base, &mbr)?;
    let (tuned, result) = tune_weights_tpe(&systems, &refs, budget, &base, &mbr, &tpe)?;
    let dest = out_dir(cli)?.join("weights.json");
    write_json(&dest, &tuned)?;
    let rows: Vec<Vec<String>> = dirs
        .iter()
        .zip(&tuned.system)
        .map(|(d, w)| vec![path_str(d), format!("{w:.4}")])
        .collect();
    eprintln!("{}", format_table(&["system", "weight"], &rows));
    eprintln!("dev WER: uniform {uniform_wer:.4}, tuned {:.4}", result.best_value);
    Ok(
        json!({"command": "tune-weights", "budget": budget, "weights": tuned, "uniform_wer": uniform_wer,
              "best_wer": result.best_value, "flat": result.flat, "output": path_str(&dest)}),
    )
}

fn report_cmd(cli: &Cli, path: &Path, rerun: bool) -> Result<Value> {
    let report: ExperimentReport = read_json(path)?;
    eprintln!(
        "{}",
        format_table(
            &["experiment", "seeds", "wall_clock_secs", "outputs"],
            &[vec![
                report.experiment.clone(),
                report.seeds.len().to_string(),
                format!("{:.1}", report.wall_clock_secs),
                report.outputs.join(" "),
            ]]
        )
    );
    if !rerun {
        return Ok(json!({"command": "report", "report": report}));
    }
    let dir = out_dir(cli)?;
    let cfg = report.config.clone();
    let bad = |e: serde_json::Error| Error::config(format!("report config: {e}"));
    let metrics = match report.experiment.as_str() {
        "depth-sweep" => {
            let cfg: SweepConfig = serde_json::from_value(cfg).map_err(bad)?;
            let r = run_depth_sweep(&cfg, Some(dir))?;
            eprintln!("{}", sweep_table(&r.curves));
            r.report.metrics
        }
        "adapt-study" => {
            let cfg: AdaptStudyConfig = serde_json::from_value(cfg).map_err(bad)?;
            let r = run_adapt_study(&cfg, Some(dir))?;
            eprintln!("{}", adapt_table(&r.grids));
            r.report.metrics
        }
        "combination-study" => {
            let cfg: CombinationStudyConfig = serde_json::from_value(cfg).map_err(bad)?;
            let r = run_combination_study(&cfg, Some(dir))?;
            eprintln!("{}", combination_table(&r.systems, &r.conditions));
            r.report.metrics
        }
        other => return Err(Error::config(format!("unknown experiment `{other}`"))),
    };
    Ok(
        json!({"command": "report", "rerun": true, "experiment": report.experiment,
              "metrics": metrics, "matches_original": metrics == report.metrics}),
    )
}
