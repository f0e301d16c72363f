//! Experiment drivers: configuration, synthetic languages, transfer grids
//! and data-size sweeps, and report rendering.

pub mod config;
pub mod grid;
pub mod report;
pub mod synth;

pub use config::{ArchConfig, ExperimentConfig, LanguagePaths, SweepSide};
pub use grid::{
    run_datasize_sweep, run_transfer_grid, run_with_data, subsample, subsample_indices, CellMetrics, GridData,
    GridReport, GridRow,
};
pub use report::{parse_report, render_report, ReportFormat};
pub use synth::{
    generate_synthetic_pair, synthetic_chains, synthetic_family, write_synthetic_family, MarkovChain, SplitSizes,
    SynthSource, SynthSpec,
};
