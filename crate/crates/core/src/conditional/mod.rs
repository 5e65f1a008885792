//! Conditional expectations given quadrant sigma-fields, the projection
//! and truncation algebra, and structure checks.

pub mod con1;
pub mod functional;
pub mod ops;
pub mod verify;

pub use con1::{check_con1, check_con1_with, ConditionGrid, GridCell, GridMethod, GridOptions};
pub use functional::{
    FootprintFunctional, QuadrantSigma, Site, Tabulated, DEFAULT_CUTOFF, UNBOUNDED,
};
pub use ops::{
    cond_exp, cond_exp_exact, cond_exp_mc, cond_exp_with, projection, projection_in,
    projection_table, truncation_split, truncation_split_table, Arithmetic,
};
pub use verify::{
    default_ortho_offsets, verify_commuting, verify_omd_at, verify_ortho, VerificationReport,
    VerifyOptions, Witness,
};
