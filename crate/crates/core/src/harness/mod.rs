//! Configuration, manifests and the experiment drivers behind the CLI.

mod config;
mod experiments;
mod manifest;

pub use config::{
    FourierTerm, InitialDensity, KernelTableSection, McKeanVlasovSection, MetricSection, NoiseSection, ParticleSection,
    RunConfig, SpdeSection,
};
pub use experiments::{
    converge, kernel_table, mv_check, simulate_particles, solve_spde, ConvergeSummary, MvRow, MvSummary,
    INITIAL_SAMPLING_GRID,
};
pub use manifest::{config_hash, sha256_file, verify_artifacts, with_threads, OutputDir, RunManifest, SeedRecord};
