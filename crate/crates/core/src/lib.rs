//! Solver, simulator and equilibrium checks for an interbank mean-field game
//! in which each bank steers its reserves only through controlled jumps.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the bottom of this file fix it to `f64`, which is what the command-line
//! tool uses.

// Negated comparisons are used on purpose so that NaN fails every guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cost;
pub mod equilibrium;
pub mod implicit;
pub mod output;
pub mod params;
pub mod riccati;
pub mod scalar;
pub mod sim;

pub use cost::{
    estimate_costs, nash_deviation_test, path_costs, running_cost, terminal_cost, CostError, CostReport,
    DeviationReport, PathCost, PlayerCost,
};
pub use equilibrium::{
    adjoint_ansatz, best_response_pointwise, gain_from_phi, gain_value, hamiltonian, AdjointState, EquilibriumError,
    FeedbackGain, GainMode, SquareMatrix,
};
pub use implicit::{
    constants, domain_check, transform_residual, DomainCheck, ImplicitError, ResidualSummary, TransformConstants,
};
pub use params::{ConfigError, InitialLaw, ModelParams, ParamError, Players, RawParams, CONFIG_KEYS};
pub use riccati::{
    phi_rhs, psi_terminal, solve_phi, solve_phi_with, solve_psi_direct, solve_psi_direct_with, OdeError, OdeKind,
    OdeSolution, PhiCoefficients, SolverOptions, TimeGrid,
};
pub use scalar::Scalar;
pub use sim::{
    empirical_mean_flow, simulate_limit, simulate_nplayer, JumpEvent, MeanFlow, MeanReference, PathBundle,
    PlayerStrategy, SimConfig, SimError, StrategySpec,
};

pub type ModelParamsF64 = ModelParams<f64>;
pub type TimeGridF64 = TimeGrid<f64>;
pub type OdeSolutionF64 = OdeSolution<f64>;
pub type FeedbackGainF64 = FeedbackGain<f64>;
pub type StrategySpecF64 = StrategySpec<f64>;
pub type PathBundleF64 = PathBundle<f64>;
pub type MeanFlowF64 = MeanFlow<f64>;
pub type CostReportF64 = CostReport<f64>;
pub type DeviationReportF64 = DeviationReport<f64>;
