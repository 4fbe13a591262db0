//! Closed-form hedging solution for affine log claims.
//!
//! The forward state is the pair `R = (N, Xi)` of traded log price and
//! logspread, an affine process
//!
//! ```text
//! dR = (beta_vec + B_mat R) dt + Sigma_vec dW + ∫ gamma_vec(x) dÑ .
//! ```
//!
//! For a terminal payoff `F(r) = <a, r> + v` the value decomposes as
//! `Y_t = <Gamma(t), R_t> + omega(t)` with `Gamma` solving the linear ODE
//! `-Gamma' = B_mat^T Gamma, Gamma(T) = a` (closed form here) and `omega`
//! a plain time integral of the minimized generator along `Gamma`. The
//! controls are `Z_t = <Gamma, Sigma_vec>` and
//! `U_t(x) = <Gamma, gamma_vec(x)>`, and the optimal strategy is the
//! pointwise minimizer of the generator with jump control `U_t`, a
//! deterministic function of time.

use crate::error::{EngineError, Result};
use crate::generator::{minimize, minimizer_bounds, Minimum};
use crate::levy::MarkFunction;
use crate::market::{check_wellposed, classify_support, ConstraintSet, MarketModel};
use crate::quad::{cumulative_integral_from_right, grid_step, linear_interp, uniform_grid};

/// Default node count for solver grids.
pub const DEFAULT_GRID_NODES: usize = 2001;

/// Parameters of the two-dimensional affine forward process.
///
/// The drift matrix has zero first row (the log price has no mean
/// reversion) and the Brownian exposure has zero first component (the
/// Brownian motion drives only the spread).
#[derive(Debug, Clone)]
pub struct AffineForward {
    beta_vec: [f64; 2],
    b_mat: [[f64; 2]; 2],
    sigma_vec: [f64; 2],
    gamma: MarkFunction,
    gamma_xi: MarkFunction,
    r0: [f64; 2],
}

impl AffineForward {
    /// `beta_vec = (beta, b)`, `b_mat` with zero first row, `sigma_vec =
    /// (0, Sigma)` with `Sigma >= 0`, jump coefficients `(gamma, gamma_xi)`
    /// sampled on `n_atoms` marks, initial state `r0 = (n, xi)`.
    pub fn new(
        beta_vec: [f64; 2],
        b_mat: [[f64; 2]; 2],
        sigma_vec: [f64; 2],
        gamma: MarkFunction,
        gamma_xi: MarkFunction,
        r0: [f64; 2],
    ) -> Result<Self> {
        if b_mat[0][0] != 0.0 || b_mat[0][1] != 0.0 {
            return Err(EngineError::InvalidModel(
                "drift matrix must have zero first row".to_string(),
            ));
        }
        if sigma_vec[0] != 0.0 {
            return Err(EngineError::InvalidModel(
                "Brownian exposure must have zero first component".to_string(),
            ));
        }
        if !(sigma_vec[1] >= 0.0) || !sigma_vec[1].is_finite() {
            return Err(EngineError::InvalidModel(format!(
                "spread volatility must be nonnegative and finite, got {}",
                sigma_vec[1]
            )));
        }
        if gamma.len() != gamma_xi.len() {
            return Err(EngineError::IncompatibleFunction {
                expected: gamma.len(),
                got: gamma_xi.len(),
            });
        }
        Ok(Self {
            beta_vec,
            b_mat,
            sigma_vec,
            gamma,
            gamma_xi,
            r0,
        })
    }

    /// Build the forward process from a market model and spread parameters:
    /// the log-price drift and jump coefficient come from the log-price
    /// parameterization of the market.
    pub fn from_market(
        m: &MarketModel,
        spread_level: f64,
        mean_reversion: f64,
        sigma: f64,
        gamma_xi: MarkFunction,
        r0: [f64; 2],
    ) -> Result<Self> {
        let lp = crate::market::to_log_params(m)?;
        Self::new(
            [lp.beta, spread_level],
            [[0.0, 0.0], [0.0, -mean_reversion]],
            [0.0, sigma],
            lp.gamma,
            gamma_xi,
            r0,
        )
    }

    pub fn beta_vec(&self) -> [f64; 2] {
        self.beta_vec
    }

    pub fn b_mat(&self) -> [[f64; 2]; 2] {
        self.b_mat
    }

    pub fn sigma_vec(&self) -> [f64; 2] {
        self.sigma_vec
    }

    pub fn gamma(&self) -> &MarkFunction {
        &self.gamma
    }

    pub fn gamma_xi(&self) -> &MarkFunction {
        &self.gamma_xi
    }

    pub fn r0(&self) -> [f64; 2] {
        self.r0
    }

    /// Spread mean-reversion rate (the negated (2,2) drift entry).
    pub fn mean_reversion(&self) -> f64 {
        -self.b_mat[1][1]
    }

    /// Coupling of the spread into the log-price column ((2,1) drift entry).
    pub fn coupling(&self) -> f64 {
        self.b_mat[1][0]
    }

    pub fn volatility(&self) -> f64 {
        self.sigma_vec[1]
    }
}

/// Affine terminal payoff `F(r) = <a, r> + v`.
#[derive(Debug, Clone, Copy)]
pub struct AffineClaim {
    pub a: [f64; 2],
    pub v: f64,
}

impl AffineClaim {
    pub fn payoff(&self, r: [f64; 2]) -> f64 {
        self.a[0] * r[0] + self.a[1] * r[1] + self.v
    }
}

/// Claim `coeff * log(price of the untraded asset) + offset`. With the
/// untraded price `I = exp(N - Xi)` this is affine in the state:
/// `a = (coeff, -coeff)`, `v = offset`.
pub fn claim_from_log(coeff: f64, offset: f64) -> AffineClaim {
    AffineClaim {
        a: [coeff, -coeff],
        v: offset,
    }
}

/// Closed-form solution of `-Gamma' = B_mat^T Gamma, Gamma(T) = a` for the
/// zero-first-row drift structure: with mean reversion `B` and coupling `q`,
///
/// ```text
/// Gamma_2(t) = a_2 exp(-B (T - t))
/// Gamma_1(t) = a_1 + q a_2 (T - t) phi1(B (T - t)) ,
/// ```
///
/// where `phi1(z) = (1 - e^{-z})/z` (continuous at 0).
#[derive(Debug, Clone, Copy)]
pub struct GammaPath {
    a: [f64; 2],
    mean_reversion: f64,
    coupling: f64,
    horizon: f64,
}

pub(crate) fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - z / 2.0 + z * z / 6.0
    } else {
        -(-z).exp_m1() / z
    }
}

impl GammaPath {
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let tau = self.horizon - t;
        let b = self.mean_reversion;
        let g2 = self.a[1] * (-b * tau).exp();
        let g1 = self.a[0] + self.coupling * self.a[1] * tau * phi1(b * tau);
        [g1, g2]
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Solve the terminal-value ODE for `Gamma` in closed form.
pub fn solve_gamma(fwd: &AffineForward, claim: &AffineClaim, horizon: f64) -> GammaPath {
    GammaPath {
        a: claim.a,
        mean_reversion: fwd.mean_reversion(),
        coupling: fwd.coupling(),
        horizon,
    }
}

/// Jump control `U_t(x) = <Gamma(t), gamma_vec(x)>` as a mark function.
pub fn jump_control(fwd: &AffineForward, gamma: &GammaPath, t: f64) -> MarkFunction {
    let g = gamma.eval(t);
    MarkFunction::linear_combination(g[0], &fwd.gamma, g[1], &fwd.gamma_xi)
        .expect("gamma and gamma_xi validated at construction")
}

/// Optimal strategy at the grid nodes: at each node the generator is
/// minimized with jump control `U_t`. Deterministic in time.
pub fn strategy_path(
    m: &MarketModel,
    fwd: &AffineForward,
    claim: &AffineClaim,
    c_set: &ConstraintSet,
    grid: &[f64],
) -> Result<Vec<Minimum>> {
    let report = check_wellposed(m);
    if !report.passes {
        return Err(EngineError::NotWellPosed(report.reason));
    }
    let gamma = solve_gamma(fwd, claim, m.horizon());
    grid.iter()
        .map(|&t| {
            let u = jump_control(fwd, &gamma, t);
            minimize(m, &u, c_set)
        })
        .collect()
}

/// Integrate the scalar terminal-value ODE for `omega`:
/// `omega(t) = v + ∫_t^T rhs(s) ds` with
/// `rhs = <Gamma, beta_vec> + lambda_min + a/2 <Sigma_vec, Gamma>^2`
/// (the minimized jump part already contains `-pi* phi`).
/// Composite Simpson on the grid, fourth order.
pub fn solve_omega(
    m: &MarketModel,
    fwd: &AffineForward,
    claim: &AffineClaim,
    minima: &[Minimum],
    grid: &[f64],
) -> Result<Vec<f64>> {
    if minima.len() != grid.len() {
        return Err(EngineError::InvalidArgument(format!(
            "strategy path has {} nodes, grid has {}",
            minima.len(),
            grid.len()
        )));
    }
    let gamma = solve_gamma(fwd, claim, m.horizon());
    let alpha = m.alpha();
    let rhs: Vec<f64> = grid
        .iter()
        .zip(minima)
        .map(|(&t, min)| {
            let g = gamma.eval(t);
            let z = g[0] * fwd.sigma_vec[0] + g[1] * fwd.sigma_vec[1];
            g[0] * fwd.beta_vec[0] + g[1] * fwd.beta_vec[1] + min.lambda_min + 0.5 * alpha * z * z
        })
        .collect();
    let integral = cumulative_integral_from_right(&rhs, grid_step(grid));
    Ok(integral.iter().map(|i| claim.v + i).collect())
}

/// Value, controls and optimal strategy for an affine claim, sampled on a
/// uniform grid. Immutable after construction; evaluators are pure.
#[derive(Debug, Clone)]
pub struct AffineBsdeSolution {
    grid: Vec<f64>,
    gamma: GammaPath,
    omega: Vec<f64>,
    pi_star: Vec<f64>,
    claim: AffineClaim,
    c_set: ConstraintSet,
    sigma_vec: [f64; 2],
    gamma_marks: MarkFunction,
    gamma_xi_marks: MarkFunction,
    /// Largest derivative residual of the pointwise minimizations.
    pub max_d1_residual: f64,
}

/// Point values of the solution triple.
#[derive(Debug, Clone)]
pub struct SolutionPoint {
    pub y: f64,
    pub z: f64,
    pub u: MarkFunction,
}

/// Solve the full problem for an affine claim on `n_nodes` uniform nodes.
pub fn solve_affine(
    m: &MarketModel,
    fwd: &AffineForward,
    claim: &AffineClaim,
    c_set: &ConstraintSet,
    n_nodes: usize,
) -> Result<AffineBsdeSolution> {
    let grid = uniform_grid(m.horizon(), n_nodes)?;
    let minima = strategy_path(m, fwd, claim, c_set, &grid)?;
    let omega = solve_omega(m, fwd, claim, &minima, &grid)?;
    let gamma = solve_gamma(fwd, claim, m.horizon());
    let max_d1_residual = minima
        .iter()
        .map(|mn| mn.d1_residual.abs())
        .fold(0.0, f64::max);
    Ok(AffineBsdeSolution {
        grid,
        gamma,
        omega,
        pi_star: minima.iter().map(|mn| mn.pi_star).collect(),
        claim: *claim,
        c_set: *c_set,
        sigma_vec: fwd.sigma_vec,
        gamma_marks: fwd.gamma.clone(),
        gamma_xi_marks: fwd.gamma_xi.clone(),
        max_d1_residual,
    })
}

impl AffineBsdeSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.gamma.horizon()
    }

    pub fn claim(&self) -> &AffineClaim {
        &self.claim
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.c_set
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(EngineError::InvalidTime { t, horizon });
        }
        Ok(())
    }

    pub fn gamma(&self, t: f64) -> [f64; 2] {
        self.gamma.eval(t)
    }

    /// `omega(t)`, linear interpolation between grid nodes. Exact at `T`.
    pub fn omega(&self, t: f64) -> f64 {
        linear_interp(&self.grid, &self.omega, t)
    }

    pub fn omega_nodes(&self) -> &[f64] {
        &self.omega
    }

    /// Optimal strategy at `t`, linear interpolation between grid nodes.
    pub fn pi_star(&self, t: f64) -> f64 {
        linear_interp(&self.grid, &self.pi_star, t)
    }

    pub fn pi_star_nodes(&self) -> &[f64] {
        &self.pi_star
    }

    pub fn sup_pi_star(&self) -> f64 {
        self.pi_star.iter().map(|p| p.abs()).fold(0.0, f64::max)
    }

    /// Brownian control `Z_t = <Gamma(t), Sigma_vec>`.
    pub fn z(&self, t: f64) -> f64 {
        let g = self.gamma.eval(t);
        g[0] * self.sigma_vec[0] + g[1] * self.sigma_vec[1]
    }

    /// Jump control `U_t(x) = <Gamma(t), gamma_vec(x)>`.
    pub fn u(&self, t: f64) -> MarkFunction {
        let g = self.gamma.eval(t);
        MarkFunction::linear_combination(g[0], &self.gamma_marks, g[1], &self.gamma_xi_marks)
            .expect("validated at construction")
    }

    /// Value `Y(t, r) = <Gamma(t), r> + omega(t)`.
    pub fn y(&self, t: f64, state: [f64; 2]) -> f64 {
        let g = self.gamma.eval(t);
        g[0] * state[0] + g[1] * state[1] + self.omega(t)
    }

    /// Evaluate the full triple at `(t, state)`; errors outside `[0, T]`.
    pub fn evaluate(&self, t: f64, state: [f64; 2]) -> Result<SolutionPoint> {
        self.check_time(t)?;
        Ok(SolutionPoint {
            y: self.y(t, state),
            z: self.z(t),
            u: self.u(t),
        })
    }

    /// Minimizer-bound interval at time `t` (mixed-sign support only).
    pub fn bounds_at(
        &self,
        m: &MarketModel,
    ) -> Result<Vec<crate::generator::MinimizerBounds>> {
        if !classify_support(m).is_mixed() {
            return Err(EngineError::BoundsUnavailable(
                "jump coefficient must charge both signs".to_string(),
            ));
        }
        self.grid
            .iter()
            .map(|&t| minimizer_bounds(m, &self.u(t)))
            .collect()
    }
}
