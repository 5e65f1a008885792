//! Lattice points, half-open boxes and rectangular partial sums.

pub mod index;
pub mod path;
pub mod prefix;

pub use index::{IndexVec, Rect, RectPoints};
pub use path::{increment, parse_rational, scaled_path, scaled_rect, ScaledPathGrid};
pub use prefix::{PrefixSumTable, DEFAULT_MAX_DIM};
