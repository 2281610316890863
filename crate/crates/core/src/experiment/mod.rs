//! Configured runs: TOML parsing and validation, pipeline dispatch and the
//! run manifest.

mod config;
mod run;

pub use config::{
    config_hash, parse_config, parse_config_file, parse_config_in, BoxSpec, BumpSpec, ChainConfig, ExperimentConfig,
    GridSpec, NodeCount, NormSpec, PairKind, PairSpec, ReconConfig, StabilityConfig, ThreeBallConfig, UcpConfig,
    UcpField,
};
pub use run::{
    run, run_specfun_check, Artifact, Command, RunManifest, SpecfunArgs, StageReport, UcpCheck, MANIFEST_FILE,
};
