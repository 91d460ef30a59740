//! Carnot-Caratheodory distance on the grid and the Kantorovich-Rubinstein
//! distance between grid densities.

pub mod eikonal;
pub mod oracle;
pub mod transport;

pub use eikonal::{cc_all_pairs, cc_sweep, comparison_constants, x2_axis_exponent, CCDistanceTable, Source};
pub use oracle::{cc_oracle, cc_oracle_from};
pub use transport::{d1_distance, d1_dual_gap, TransportMethod, TransportOptions, TransportPlan};
