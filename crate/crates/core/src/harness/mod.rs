//! Synthetic data, experiment drivers, model persistence and reports.

pub mod combination;
pub mod experiments;
pub mod persist;
pub mod report;
pub mod synthetic;

pub use combination::{
    posterior_lattice, reference_words, run_combination_study, system_lattices, CombinationStudyConfig,
    CombinationStudyResult, ConditionResult, Half, LatticeSynthesis, PlantedSystem, PosteriorSource, SystemConfig,
};
pub use experiments::{
    adapt_study_schedule, run_adapt_study, run_depth_sweep, sweep_schedule, AdaptGrid, AdaptStudyConfig,
    AdaptStudyResult, CurvePoint, ModelRole, StackConfig, SweepConfig, SweepResult, SweepRow,
};
pub use persist::{load_model, load_model_for, save_model, Manifest, FORMAT_VERSION};
pub use report::ExperimentReport;
pub use synthetic::{gen_domain, gen_synthetic, Domain, DomainShift, SyntheticDataset, SyntheticTaskSpec};
