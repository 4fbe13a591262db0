//! Numerical engine for exponential-utility hedging in pure-jump markets.
//!
//! The engine canonicalizes the driving jump measure to a finite atomic one,
//! which makes every measure integral exact and compound-Poisson simulation
//! exact. On top of that sit:
//!
//! - [`levy`]: atomic jump measures, the entropic penalty `g_a`, norm
//!   machinery and a midpoint-rule discretizer for continuous densities;
//! - [`market`]: the `(phi, psi)` and `(beta, gamma)` market
//!   parameterizations and the drift/jump-intensity well-posedness check;
//! - [`generator`]: pointwise minimization of the utility generator with
//!   analytic derivatives and explicit minimizer bounds;
//! - [`affine`]: closed-form value/control/strategy paths for affine log
//!   claims on an untraded asset driven by the same jumps;
//! - [`exp_ansatz`]: closed-form solutions for linear generators with
//!   exponential terminal conditions;
//! - [`mc`]: exact-transition Monte Carlo simulation of the forward state
//!   and wealth, martingale diagnostics and pathwise residuals.

pub mod affine;
pub mod error;
pub mod exp_ansatz;
pub mod generator;
pub mod levy;
pub mod market;
pub mod mc;
pub mod quad;

pub use affine::{
    claim_from_log, solve_affine, AffineBsdeSolution, AffineClaim, AffineForward,
    DEFAULT_GRID_NODES,
};
pub use error::{EngineError, Result};
pub use exp_ansatz::{solve_exp, Coefficient, ExpBsdeSolution, ExpClaim, LinearGenerator};
pub use generator::{
    generator_value, lambda_d1, lambda_d2, lambda_value, minimize, minimizer_bounds, Minimum,
    MinimizerBounds,
};
pub use levy::{
    discretize_density, entropic_norm, equivalence_constant, g_alpha, l2_norm_sq, JumpAtom,
    LevyMeasure, MarkFunction,
};
pub use market::{
    check_wellposed, classify_support, from_log_params, to_log_params, ConstraintSet,
    LogPriceParams, MarketModel, SupportClass, WellPosedReport,
};
pub use mc::{
    bsde_residual, bsde_residual_exp, optimality_report, simulate_forward, simulate_wealth,
    Diagnostics, PathConfig, SimPath,
};
