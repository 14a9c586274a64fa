//! Detecting finite-time blowup in ODEs and PDEs and continuing the
//! evolution through infinity by switching to a chart in which the
//! singularity is regular.

pub mod compactify;
pub mod complex_flows;
pub mod mn_scaling;
pub mod ode;
pub mod pde;
pub mod protocol;

pub use ode::{
    integrate_until, rhs_eval, IntegratorConfig, OdeError, OdeProblem, Rhs, Sample, Sign,
    Termination, TrajectorySegment,
};
pub use protocol::{
    cross_infinity, detect_power_law, good_equation_for, Branch, Chart, ChartState,
    ChartedTrajectory, CrossingOptions, CrossingRecord, PowerLawFit, ProtocolError,
};
