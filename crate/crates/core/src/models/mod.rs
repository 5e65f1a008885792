//! Field classes, their innovations and the coefficient conditions.

pub mod field;
pub mod innovation;
pub mod kernel;
pub mod lattice;
pub mod moment;
pub mod ulevels;

pub use field::{
    make_u_field, CoboundarySpec, CompiledModel, FieldKind, FieldModel, Node, ScaleField,
    ScaleNode, SiteOffset,
};
pub use innovation::{Drawer, InnovationSpec, Support};
pub use kernel::{
    check_lin, check_volt, lin_b_coeffs, volterra_c_coeffs, ConditionScan, Kernel, VolterraCoeffs,
};
pub use lattice::{
    eval_field, field_window, sample_innovations, sample_into, ChannelSamplers, FrozenPast,
    InnovationLattice, PastSource, SeedRecord,
};
pub use moment::MomentFunctional;
pub use ulevels::{
    level_prob, level_series, level_value, smallest_level_at_least, u_moment_series,
    MomentSeries, ULevelSampler,
};
