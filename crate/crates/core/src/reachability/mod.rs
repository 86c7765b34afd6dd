//! Grid-based Hamilton-Jacobi reachability for a single circular keep-out set.
//!
//! Value functions are solved once for an obstacle at the origin; because the
//! dynamics are translation invariant, any other disk of the same radius is
//! handled by evaluating in that disk's frame.

mod grid;
mod library;
mod solver;
mod value;

pub use grid::{Grid3, AXIS_THETA, AXIS_X, AXIS_Y};
pub use library::{
    build_library, is_superset_reachable, library_file_name, load_library, parse_range, save_library,
};
pub use solver::{solve_hji, SolverSettings};
pub use value::{signed_distance_payoff, KeepOutDisk, Sample, ValueFunction, VALUE_SCHEMA};
