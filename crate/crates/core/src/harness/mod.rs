//! Monte Carlo experiments on sampled fields and the statistics they report.

pub mod clt;
pub mod coboundary;
pub mod counterexample;
pub mod functional;
pub mod gh;
pub mod gof;
pub mod output;
pub mod sampler;
pub mod variance;

pub use clt::{
    run_annealed_clt, run_quenched_clt, CltResult, CltRow, ExperimentSpec, Regime, CLT_CSV_HEADER,
    MIN_GOF_REPLICATES,
};
pub use coboundary::{coboundary_residuals, CoboundaryReport, CoboundaryRunSpec, COBOUNDARY_CSV_HEADER};
pub use counterexample::{
    analytic_exceedance, counterexample_probe, moment_evidence, MomentEvidence, ProbeReport, ProbeSpec,
    PROBE_CSV_HEADER,
};
pub use functional::{
    dyadic_pairs, quarter_grid, run_functional_fdd, tightness_moment_probe, BlockSpec, FunctionalReport,
    FunctionalSpec, RectPair, TightnessReport, TightnessSpec, UnitRect, COVARIANCE_CSV_HEADER,
};
pub use gh::{gh_check, GhReport, GhSpec, GH_CSV_HEADER};
pub use gof::{degenerate_report, dkw_band, gof_stats, normal_cdf, EmpiricalDistribution, GofReport, Verdict};
pub use output::{csv_num, fmt_g, CsvTable};
pub use sampler::{frozen_past, replicate_base, resolve_threads, run_parallel, FieldSampler};
pub use variance::{annealed_variance, estimate_sigma2, long_run_variance, EstimateMethod, VarianceEstimate};
