//! Shared fixtures for the benchmarks: the gain sets of the reference scenarios.

use formstab_core::{laplacian_from_adjacency, CouplingGainVector, GainVector, Topology};
use nalgebra::DMatrix;

/// Class II gains whose stability switches with the delay.
pub const SWITCHING: GainVector = GainVector::new(6.0, 0.0, 0.3, 0.0);

/// Gains stable for every delay.
pub const ABSOLUTELY_STABLE: GainVector = GainVector::new(2.0, 3.0, 1.5, 1.2);

/// Coupling used with [`ABSOLUTELY_STABLE`] in the coupled scenario.
pub const COUPLING: CouplingGainVector = CouplingGainVector::new(3.0, 3.0, -0.5, 0.0);

/// Gains of the large-delay circle.
pub const CIRCLE: GainVector = GainVector::new(3.0, 6.0, 0.0, 0.0);
pub const CIRCLE_COUPLING: CouplingGainVector = CouplingGainVector::new(0.0, 0.0, -2.0, 0.0);

/// Gains of the master stability field with a complex-plane boundary.
pub const FIELD: GainVector = GainVector::new(0.0, 6.0, 1.5, 3.0);
pub const FIELD_COUPLING: CouplingGainVector = CouplingGainVector::new(3.0, 1.0, 0.0, 0.0);

/// Three agents with Laplacian spectrum {0, 4, 5}.
pub fn three_agents() -> Topology {
    let a = DMatrix::from_row_slice(3, 3, &[0.0, 2.0, 1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 0.0]);
    laplacian_from_adjacency(&a).expect("valid adjacency")
}
