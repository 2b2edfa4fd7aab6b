//! Depth sweep and adaptation study drivers.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::{format_table, ExperimentReport};
use super::synthetic::{gen_domain, gen_synthetic, Domain, SyntheticTaskSpec};
use crate::adaptation::{adapt, average_parameters};
use crate::error::{Error, Result};
use crate::model::ModelParameters;
use crate::topology::{build_stack, ArchitectureSpec, ConnectivityMode, Network};
use crate::training::{evaluate, train, TrainingSchedule};

/// A plain, residual or dense LSTM stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub mode: ConnectivityMode,
    pub layers: usize,
    pub cell_dim: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
}

fn default_block_size() -> usize {
    5
}

impl StackConfig {
    pub fn build(&self, task: &SyntheticTaskSpec) -> Result<ArchitectureSpec> {
        build_stack(
            self.mode,
            self.layers,
            task.feature_dim,
            self.cell_dim,
            self.block_size,
            task.num_classes,
        )
    }
}

/// Schedule used for the depth sweep: momentum SGD on mini-batches of 4,
/// 0.3 decaying to 0.1 over 6 epochs.
pub fn sweep_schedule() -> TrainingSchedule {
    let mut s = TrainingSchedule::new(0.3, 0.1, 6, 4, 0);
    s.momentum = 0.9;
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub task: SyntheticTaskSpec,
    /// Domain-A sequences; the validation tail comes out of these.
    pub sequences: usize,
    pub data_seed: u64,
    pub modes: Vec<ConnectivityMode>,
    pub depths: Vec<usize>,
    pub cell_dim: usize,
    pub block_size: usize,
    pub seeds: Vec<u64>,
    /// Template schedule; its seed is replaced by each cell's seed.
    pub schedule: TrainingSchedule,
    /// Worker threads; the output does not depend on it.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

fn default_threads() -> usize {
    1
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            task: SyntheticTaskSpec::default(),
            sequences: 2000,
            data_seed: 1,
            modes: vec![
                ConnectivityMode::Plain,
                ConnectivityMode::Residual,
                ConnectivityMode::Dense,
            ],
            depths: vec![2, 6, 10, 16, 20],
            cell_dim: 16,
            block_size: 5,
            seeds: (0..5).collect(),
            schedule: sweep_schedule(),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: ConnectivityMode,
    pub depth: usize,
    pub seed: u64,
    pub params: usize,
    pub val_loss: Option<f64>,
    pub val_frame_error: Option<f64>,
    /// Training error message when the cell failed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mode: ConnectivityMode,
    pub depth: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub failed: usize,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub curves: Vec<CurvePoint>,
    pub report: ExperimentReport,
}

impl SweepResult {
    pub fn row(&self, mode: ConnectivityMode, depth: usize, seed: u64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.depth == depth && r.seed == seed)
    }

    pub fn curve(&self, mode: ConnectivityMode, depth: usize) -> Option<&CurvePoint> {
        self.curves.iter().find(|c| c.mode == mode && c.depth == depth)
    }
}

fn run_cell(
    cfg: &SweepConfig,
    data: &[crate::training::LabeledSequence],
    cell: (ConnectivityMode, usize, u64),
) -> SweepRow {
    let (mode, depth, seed) = cell;
    let mut row = SweepRow {
        mode,
        depth,
        seed,
        params: 0,
        val_loss: None,
        val_frame_error: None,
        error: None,
    };
    let result = build_stack(
        mode,
        depth,
        cfg.task.feature_dim,
        cfg.cell_dim,
        cfg.block_size,
        cfg.task.num_classes,
    )
    .and_then(|spec| {
        row.params = Network::init(&spec, seed)?.num_params();
        let mut s = cfg.schedule.clone();
        s.seed = seed;
        train(&spec, data, &s)
    });
    match result {
        Ok(out) => {
            let last = out.log.last();
            row.val_loss = last.and_then(|m| m.val_loss);
            row.val_frame_error = last.and_then(|m| m.val_frame_error);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Trains every (mode, depth, seed) cell on one shared dataset and records
/// the final validation metrics. Cell failures are recorded, not raised.
/// Writes `sweep.csv` and `report.json` into `out` when given.
pub fn run_depth_sweep(cfg: &SweepConfig, out: Option<&Path>) -> Result<SweepResult> {
    if cfg.depths.is_empty() || cfg.modes.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::config("depth sweep needs at least one mode, depth and seed"));
    }
    if cfg.schedule.validation_fraction <= 0.0 {
        return Err(Error::config("depth sweep needs a validation fraction above 0"));
    }
    cfg.schedule.validate()?;
    let started = Instant::now();
    let data = gen_synthetic(&cfg.task, cfg.sequences, cfg.data_seed)?.domain_a;
    let mut cells = Vec::new();
    for &mode in &cfg.modes {
        for &depth in &cfg.depths {
            for &seed in &cfg.seeds {
                cells.push((mode, depth, seed));
            }
        }
    }
    let slots: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.threads.max(1).min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let row = run_cell(cfg, &data, cells[i]);
                slots.lock().expect("no worker panicked")[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect();
    let mut curves = Vec::new();
    for &mode in &cfg.modes {
        for &depth in &cfg.depths {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.mode == mode && r.depth == depth)
                .filter_map(|r| r.val_frame_error)
                .collect();
            let n = errs.len();
            curves.push(CurvePoint {
                mode,
                depth,
                mean: (n > 0).then(|| errs.iter().sum::<f64>() / n as f64),
                min: errs.iter().copied().reduce(f64::min),
                max: errs.iter().copied().reduce(f64::max),
                failed: cfg.seeds.len() - n,
            });
        }
    }
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
        outputs.push("sweep.csv".to_string());
    }
    let report = ExperimentReport {
        experiment: "depth-sweep".into(),
        config: serde_json::to_value(cfg)?,
        seeds: cfg.seeds.clone(),
        metrics: serde_json::json!({ "rows": rows, "curves": curves }),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        outputs,
    };
    if let Some(dir) = out {
        report.save(&dir.join("report.json"))?;
    }
    Ok(SweepResult { rows, curves, report })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "mode",
        "depth",
        "seed",
        "params",
        "val_loss",
        "val_frame_error",
        "error",
    ])?;
    for r in rows {
        w.write_record([
            r.mode.as_str().to_string(),
            r.depth.to_string(),
            r.seed.to_string(),
            r.params.to_string(),
            opt(r.val_loss),
            opt(r.val_frame_error),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_table(curves: &[CurvePoint]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into());
    let rows: Vec<Vec<String>> = curves
        .iter()
        .map(|c| {
            vec![
                c.mode.as_str().to_string(),
                c.depth.to_string(),
                f(c.mean),
                f(c.min),
                f(c.max),
                c.failed.to_string(),
            ]
        })
        .collect();
    format_table(&["mode", "depth", "mean_err", "min_err", "max_err", "failed"], &rows)
}

/// Schedule used to adapt the seed model to domain B. The learning rates
/// keep the 100× decay of the standard adaptation schedule but start
/// higher, since the desk-scale models see only a few hundred updates.
pub fn adapt_study_schedule() -> TrainingSchedule {
    let mut s = TrainingSchedule::new(0.1, 0.001, 3, 4, 0);
    s.momentum = 0.9;
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptStudyConfig {
    pub task: SyntheticTaskSpec,
    pub stack: StackConfig,
    /// Domain-A sequences for the seed model.
    pub seed_sequences: usize,
    /// Domain-B sequences mixed into the seed model's training data.
    #[serde(default)]
    pub seed_mix_b: usize,
    /// Domain-B sequences used for adaptation.
    pub adapt_sequences: usize,
    /// Held-out sequences per domain for the error grid.
    pub test_sequences: usize,
    pub seed_schedule: TrainingSchedule,
    pub adapt_schedule: TrainingSchedule,
    /// Weight of the adapted model in the average.
    pub alpha: f64,
    pub seeds: Vec<u64>,
}

impl Default for AdaptStudyConfig {
    fn default() -> Self {
        AdaptStudyConfig {
            task: SyntheticTaskSpec::default(),
            stack: StackConfig {
                mode: ConnectivityMode::Dense,
                layers: 4,
                cell_dim: 16,
                block_size: 2,
            },
            seed_sequences: 1000,
            seed_mix_b: 0,
            adapt_sequences: 200,
            test_sequences: 300,
            seed_schedule: sweep_schedule(),
            adapt_schedule: adapt_study_schedule(),
            alpha: 0.5,
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Seed,
    Adapted,
    Averaged,
}

impl ModelRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelRole::Seed => "seed",
            ModelRole::Adapted => "adapted",
            ModelRole::Averaged => "averaged",
        }
    }
}

/// Frame errors of the three models on both domains for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptGrid {
    pub seed: u64,
    /// `[seed, adapted, averaged] × [A, B]`.
    pub errors: [[f64; 2]; 3],
}

impl AdaptGrid {
    pub fn get(&self, role: ModelRole, domain: Domain) -> f64 {
        let r = match role {
            ModelRole::Seed => 0,
            ModelRole::Adapted => 1,
            ModelRole::Averaged => 2,
        };
        self.errors[r][usize::from(domain == Domain::B)]
    }

    /// Adapted model better on B than the seed.
    pub fn b_improves(&self) -> bool {
        self.get(ModelRole::Adapted, Domain::B) < self.get(ModelRole::Seed, Domain::B)
    }

    /// Adapted model worse on A than the seed.
    pub fn a_degrades(&self) -> bool {
        self.get(ModelRole::Adapted, Domain::A) > self.get(ModelRole::Seed, Domain::A)
    }

    /// Averaged model no worse on A than the adapted one.
    pub fn averaged_recovers_a(&self) -> bool {
        self.get(ModelRole::Averaged, Domain::A) <= self.get(ModelRole::Adapted, Domain::A)
    }

    /// Averaged model no worse on B than the seed.
    pub fn averaged_keeps_b(&self) -> bool {
        self.get(ModelRole::Averaged, Domain::B) <= self.get(ModelRole::Seed, Domain::B)
    }

    pub fn all_directions(&self) -> bool {
        self.b_improves() && self.a_degrades() && self.averaged_recovers_a() && self.averaged_keeps_b()
    }
}

#[derive(Clone, Debug)]
pub struct AdaptStudyResult {
    pub grids: Vec<AdaptGrid>,
    /// Seed, adapted and averaged models per seed.
    pub models: Vec<[ModelParameters; 3]>,
    pub report: ExperimentReport,
}

/// Independent seed for held-out data, distinct from the training seed.
fn test_seed(seed: u64) -> u64 {
    seed ^ 0x7e57_da7a_0000_0000
}

/// Trains a seed model on domain A, adapts it on domain B and averages
/// the two, per seed. Writes `adapt.csv` and `report.json` into `out`.
pub fn run_adapt_study(cfg: &AdaptStudyConfig, out: Option<&Path>) -> Result<AdaptStudyResult> {
    if cfg.seeds.is_empty() {
        return Err(Error::config("adapt study needs at least one seed"));
    }
    let started = Instant::now();
    let spec = cfg.stack.build(&cfg.task)?;
    let mut grids = Vec::new();
    let mut models = Vec::new();
    for &seed in &cfg.seeds {
        let mut train_data = gen_domain(&cfg.task, Domain::A, cfg.seed_sequences, seed)?;
        if cfg.seed_mix_b > 0 {
            // Interleave so the validation tail stays mostly domain A.
            let mix = gen_domain(&cfg.task, Domain::B, cfg.seed_mix_b, seed.wrapping_add(1))?;
            let every = (train_data.len() / mix.len()).max(1);
            let mut merged = Vec::with_capacity(train_data.len() + mix.len());
            let mut m = mix.into_iter();
            for (i, q) in train_data.into_iter().enumerate() {
                merged.push(q);
                if (i + 1) % every == 0 {
                    merged.extend(m.next());
                }
            }
            merged.extend(m);
            train_data = merged;
        }
        let adapt_data = gen_domain(&cfg.task, Domain::B, cfg.adapt_sequences, seed.wrapping_add(2))?;
        let test_a = gen_domain(&cfg.task, Domain::A, cfg.test_sequences, test_seed(seed))?;
        let test_b = gen_domain(&cfg.task, Domain::B, cfg.test_sequences, test_seed(seed))?;

        let mut s = cfg.seed_schedule.clone();
        s.seed = seed;
        let seed_model = train(&spec, &train_data, &s)?.model;
        let mut a = cfg.adapt_schedule.clone();
        a.seed = seed;
        let adapted = adapt(&seed_model, &spec, &adapt_data, &a)?.model;
        let averaged = average_parameters(&seed_model, &adapted, cfg.alpha)?;
        let mut errors = [[0.0; 2]; 3];
        for (r, m) in [&seed_model, &adapted, &averaged].into_iter().enumerate() {
            let net = Network::from_model(&spec, m)?;
            errors[r] = [
                evaluate(&net, &test_a)?.frame_error,
                evaluate(&net, &test_b)?.frame_error,
            ];
        }
        grids.push(AdaptGrid { seed, errors });
        models.push([seed_model, adapted, averaged]);
    }
    let mut outputs = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_adapt_csv(&dir.join("adapt.csv"), &grids)?;
        outputs.push("adapt.csv".to_string());
    }
    let holds = grids.iter().filter(|g| g.all_directions()).count();
    let report = ExperimentReport {
        experiment: "adapt-study".into(),
        config: serde_json::to_value(cfg)?,
        seeds: cfg.seeds.clone(),
        metrics: serde_json::json!({ "grids": grids, "seeds_with_all_directions": holds }),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        outputs,
    };
    if let Some(dir) = out {
        report.save(&dir.join("report.json"))?;
    }
    Ok(AdaptStudyResult { grids, models, report })
}

pub fn write_adapt_csv(path: &Path, grids: &[AdaptGrid]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "model", "domain", "frame_error"])?;
    for g in grids {
        for role in [ModelRole::Seed, ModelRole::Adapted, ModelRole::Averaged] {
            for (d, name) in [(Domain::A, "A"), (Domain::B, "B")] {
                w.write_record([
                    g.seed.to_string(),
                    role.as_str().into(),
                    name.into(),
                    g.get(role, d).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn adapt_table(grids: &[AdaptGrid]) -> String {
    let rows: Vec<Vec<String>> = grids
        .iter()
        .flat_map(|g| {
            [ModelRole::Seed, ModelRole::Adapted, ModelRole::Averaged].map(|role| {
                vec![
                    g.seed.to_string(),
                    role.as_str().to_string(),
                    format!("{:.4}", g.get(role, Domain::A)),
                    format!("{:.4}", g.get(role, Domain::B)),
                ]
            })
        })
        .collect();
    format_table(&["seed", "model", "err_A", "err_B"], &rows)
}
