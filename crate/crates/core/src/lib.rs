//! Stability analysis of inertial multi-agent formations under delayed PD
//! control: characteristic spectra, delay-independent classification,
//! bifurcation curves, master stability maps and direct simulation.

pub mod error;
pub mod linalg;
pub mod model;
pub mod spectrum;
pub mod acs;
pub mod bifurcation;
pub mod msf;
pub mod simulate;

pub use error::{Error, Result};
pub use model::{
    build_feedback_matrices, laplacian_eigenvalues, laplacian_from_adjacency, mode_system,
    CouplingGainVector, FeedbackMatrices, FormationSpec, GainVector, ModeSystem, Topology,
};
pub use num_complex::Complex64;
pub use spectrum::{
    argument_principle_count, char_roots, char_value, lambda_max, strongly_unstable_spectrum,
    CharacteristicRoot, RootWindow, SpectrumResult,
};
pub use msf::{
    circle_convergence_metric, intersection_angles, large_delay_asymptote, msf_field, msf_field_with, msf_value, self_intersections,
    AsymptoticCurve, IntersectionAngle, MsfField, MsfGridSpec, SelfIntersection,
};
pub use simulate::{
    control_input, decay_rate_fit, default_dt, integrate, log_slope_fit, modal_error_norms, AgentState, HistoryPolicy,
    SimulationConfig, TrajectoryLog, TrajectorySpec,
};
