//! Closed-form solution for linear generators with exponential terminal
//! condition.
//!
//! For the same affine forward process, a terminal payoff
//! `F(r) = exp(<a, r>) w + v` and a generator affine-linear in the value and
//! controls,
//!
//! ```text
//! f(s, y, z, u) = c_y(s) y + c_z(s) z + c_u(s) ∫ u dν + c(s) ,
//! ```
//!
//! the solution factorizes as `Y_t = exp(<Gamma, R_t>) omega(t) + xi(t)`.
//! `Gamma` is the same linear ODE as in the affine case; `omega` solves a
//! scalar linear ODE with rate
//!
//! ```text
//! kappa = 1/2 <Sigma, Gamma>^2 + <Gamma, beta> + ∫ (e^{<Gamma,gamma>} - 1 - <Gamma,gamma>) dν
//!       + c_y + c_z <Gamma, Sigma> + c_u ∫ (e^{<Gamma,gamma>} - 1) dν
//! ```
//!
//! and is computed through the unconditionally stable closed form
//! `omega(t) = w exp(∫_t^T kappa)`; `xi` is the time-reversed linear ODE
//! `-xi' = c_y xi + c` handled with the same running-integral machinery.

use crate::affine::{solve_gamma, AffineForward, GammaPath};
use crate::error::{EngineError, Result};
use crate::levy::{LevyMeasure, MarkFunction};
use crate::quad::{cumulative_integral_from_right, grid_step, linear_interp, uniform_grid};

/// A time-dependent generator coefficient: a constant or a table with
/// linear interpolation (the hypotheses only require continuity).
#[derive(Debug, Clone)]
pub enum Coefficient {
    Constant(f64),
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl Coefficient {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Tabulated { times, values } => linear_interp(times, values, t),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant(c) if c.is_finite() => Ok(()),
            Self::Constant(c) => Err(EngineError::InvalidArgument(format!(
                "coefficient must be finite, got {c}"
            ))),
            Self::Tabulated { times, values } => {
                if times.len() != values.len() || times.len() < 2 {
                    return Err(EngineError::InvalidArgument(
                        "tabulated coefficient needs matching times/values with >= 2 samples"
                            .to_string(),
                    ));
                }
                if times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(EngineError::InvalidArgument(
                        "tabulated coefficient times must be strictly increasing".to_string(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(EngineError::InvalidArgument(
                        "tabulated coefficient values must be finite".to_string(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Generator `f = c_y y + c_z z + c_u ∫ u dν + c` with continuous
/// time-dependent coefficients.
#[derive(Debug, Clone)]
pub struct LinearGenerator {
    pub c_y: Coefficient,
    pub c_z: Coefficient,
    pub c_u: Coefficient,
    pub c: Coefficient,
}

impl LinearGenerator {
    pub fn validate(&self) -> Result<()> {
        self.c_y.validate()?;
        self.c_z.validate()?;
        self.c_u.validate()?;
        self.c.validate()
    }
}

/// Exponential terminal payoff `F(r) = exp(<a, r>) w + v`.
#[derive(Debug, Clone, Copy)]
pub struct ExpClaim {
    pub a: [f64; 2],
    pub w: f64,
    pub v: f64,
}

impl ExpClaim {
    pub fn payoff(&self, r: [f64; 2]) -> f64 {
        (self.a[0] * r[0] + self.a[1] * r[1]).exp() * self.w + self.v
    }
}

/// Solution of the linear-generator problem on a uniform grid.
#[derive(Debug, Clone)]
pub struct ExpBsdeSolution {
    grid: Vec<f64>,
    gamma: GammaPath,
    omega: Vec<f64>,
    xi: Vec<f64>,
    claim: ExpClaim,
    sigma_vec: [f64; 2],
    gamma_marks: MarkFunction,
    gamma_xi_marks: MarkFunction,
}

/// Point values of the solution triple.
#[derive(Debug, Clone)]
pub struct ExpSolutionPoint {
    pub y: f64,
    pub z: f64,
    pub u: MarkFunction,
}

/// Solve for `(Gamma, omega, xi)` on `n_nodes` uniform nodes over
/// `[0, horizon]`.
pub fn solve_exp(
    fwd: &AffineForward,
    measure: &LevyMeasure,
    gen: &LinearGenerator,
    claim: &ExpClaim,
    horizon: f64,
    n_nodes: usize,
) -> Result<ExpBsdeSolution> {
    gen.validate()?;
    if fwd.gamma().len() != measure.len() {
        return Err(EngineError::IncompatibleFunction {
            expected: measure.len(),
            got: fwd.gamma().len(),
        });
    }
    let grid = uniform_grid(horizon, n_nodes)?;
    let h = grid_step(&grid);
    let affine_claim = crate::affine::AffineClaim { a: claim.a, v: 0.0 };
    let gamma = solve_gamma(fwd, &affine_claim, horizon);

    // per-node rate of the omega ODE
    let kappa: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let g = gamma.eval(t);
            let zs = g[0] * fwd.sigma_vec()[0] + g[1] * fwd.sigma_vec()[1];
            let drift = g[0] * fwd.beta_vec()[0] + g[1] * fwd.beta_vec()[1];
            let gg = fwd.gamma().values();
            let gx = fwd.gamma_xi().values();
            let jump_full = measure.sum_atoms(|i, _| {
                let e = g[0] * gg[i] + g[1] * gx[i];
                e.exp() - 1.0 - e
            });
            let jump_lin = measure.sum_atoms(|i, _| {
                let e = g[0] * gg[i] + g[1] * gx[i];
                e.exp() - 1.0
            });
            0.5 * zs * zs + drift + jump_full + gen.c_y.eval(t) + gen.c_z.eval(t) * zs
                + gen.c_u.eval(t) * jump_lin
        })
        .collect();
    let kappa_int = cumulative_integral_from_right(&kappa, h);
    let omega: Vec<f64> = kappa_int.iter().map(|k| claim.w * k.exp()).collect();

    // xi(t) = e^{A(t)} (v + ∫_t^T c(s) e^{-A(s)} ds), A(t) = ∫_t^T c_y
    let cy: Vec<f64> = grid.iter().map(|&t| gen.c_y.eval(t)).collect();
    let a_int = cumulative_integral_from_right(&cy, h);
    let q: Vec<f64> = grid
        .iter()
        .zip(&a_int)
        .map(|(&t, &a)| gen.c.eval(t) * (-a).exp())
        .collect();
    let q_int = cumulative_integral_from_right(&q, h);
    let xi: Vec<f64> = a_int
        .iter()
        .zip(&q_int)
        .map(|(&a, &j)| a.exp() * (claim.v + j))
        .collect();

    Ok(ExpBsdeSolution {
        grid,
        gamma,
        omega,
        xi,
        claim: *claim,
        sigma_vec: fwd.sigma_vec(),
        gamma_marks: fwd.gamma().clone(),
        gamma_xi_marks: fwd.gamma_xi().clone(),
    })
}

impl ExpBsdeSolution {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.gamma.horizon()
    }

    pub fn claim(&self) -> &ExpClaim {
        &self.claim
    }

    pub fn gamma(&self, t: f64) -> [f64; 2] {
        self.gamma.eval(t)
    }

    pub fn omega(&self, t: f64) -> f64 {
        linear_interp(&self.grid, &self.omega, t)
    }

    pub fn xi(&self, t: f64) -> f64 {
        linear_interp(&self.grid, &self.xi, t)
    }

    pub fn omega_nodes(&self) -> &[f64] {
        &self.omega
    }

    pub fn xi_nodes(&self) -> &[f64] {
        &self.xi
    }

    /// `exp(<Gamma(t), state>) omega(t)`, the state-dependent factor shared
    /// by the value and both controls.
    pub fn exp_factor(&self, t: f64, state: [f64; 2]) -> f64 {
        let g = self.gamma.eval(t);
        (g[0] * state[0] + g[1] * state[1]).exp() * self.omega(t)
    }

    pub fn y(&self, t: f64, state: [f64; 2]) -> f64 {
        self.exp_factor(t, state) + self.xi(t)
    }

    pub fn z(&self, t: f64, state: [f64; 2]) -> f64 {
        let g = self.gamma.eval(t);
        self.exp_factor(t, state) * (g[0] * self.sigma_vec[0] + g[1] * self.sigma_vec[1])
    }

    /// Jump control `U_t(x) = exp_factor * (e^{<Gamma, gamma_vec(x)>} - 1)`.
    pub fn u(&self, t: f64, state: [f64; 2]) -> MarkFunction {
        let g = self.gamma.eval(t);
        let e = self.exp_factor(t, state);
        let gg = self.gamma_marks.values();
        let gx = self.gamma_xi_marks.values();
        MarkFunction::from_values(
            (0..gg.len())
                .map(|i| e * ((g[0] * gg[i] + g[1] * gx[i]).exp() - 1.0))
                .collect(),
        )
    }

    /// Per-atom factors `e^{<Gamma(t), gamma_vec(x_i)>} - 1` (state-free part
    /// of the jump control).
    pub fn jump_factors(&self, t: f64) -> Vec<f64> {
        let g = self.gamma.eval(t);
        let gg = self.gamma_marks.values();
        let gx = self.gamma_xi_marks.values();
        (0..gg.len())
            .map(|i| (g[0] * gg[i] + g[1] * gx[i]).exp() - 1.0)
            .collect()
    }

    pub fn evaluate(&self, t: f64, state: [f64; 2]) -> Result<ExpSolutionPoint> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(EngineError::InvalidTime { t, horizon });
        }
        Ok(ExpSolutionPoint {
            y: self.y(t, state),
            z: self.z(t, state),
            u: self.u(t, state),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::JumpAtom;
    use crate::quad::rk4;
    use approx::assert_relative_eq;

    fn measure() -> LevyMeasure {
        LevyMeasure::new(vec![
            JumpAtom { x: 0.1, mass: 2.0 },
            JumpAtom { x: -0.1, mass: 3.0 },
        ])
        .unwrap()
    }

    fn forward(measure: &LevyMeasure) -> AffineForward {
        let gamma = MarkFunction::identity(measure).map(f64::ln_1p);
        AffineForward::new(
            [0.02, -0.05],
            [[0.0, 0.0], [0.0, -1.0]],
            [0.0, 0.2],
            gamma,
            MarkFunction::zero(measure.len()),
            [0.0, 0.1],
        )
        .unwrap()
    }

    fn constant_gen(cy: f64, cz: f64, cu: f64, c: f64) -> LinearGenerator {
        LinearGenerator {
            c_y: Coefficient::Constant(cy),
            c_z: Coefficient::Constant(cz),
            c_u: Coefficient::Constant(cu),
            c: Coefficient::Constant(c),
        }
    }

    #[test]
    fn all_zero_configuration_constant_value() {
        let ms = measure();
        let fwd = forward(&ms);
        let gen = constant_gen(0.0, 0.0, 0.0, 0.0);
        let claim = ExpClaim { a: [0.0, 0.0], w: 2.0, v: 1.5 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 101).unwrap();
        for &t in &[0.0, 0.4, 1.0] {
            assert_eq!(sol.omega(t), 2.0);
            assert_eq!(sol.xi(t), 1.5);
            assert_eq!(sol.y(t, [0.3, -0.7]), 3.5);
            assert_eq!(sol.z(t, [0.3, -0.7]), 0.0);
        }
    }

    #[test]
    fn terminal_values_exact() {
        let ms = measure();
        let fwd = forward(&ms);
        let gen = constant_gen(0.3, -0.1, 0.2, 0.05);
        let claim = ExpClaim { a: [0.5, -0.5], w: 1.2, v: -0.4 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 101).unwrap();
        let g = sol.gamma(1.0);
        assert_eq!(g, claim.a);
        assert_eq!(*sol.omega_nodes().last().unwrap(), claim.w);
        assert_eq!(*sol.xi_nodes().last().unwrap(), claim.v);
        let state = [0.2, -0.1];
        assert_relative_eq!(sol.y(1.0, state), claim.payoff(state), epsilon = 1e-14);
    }

    #[test]
    fn xi_constant_cy_analytic() {
        // c_y = k constant, c = 0, a = 0, w = 0: xi(t) = v e^{k (T - t)}
        let ms = measure();
        let fwd = forward(&ms);
        let k = 0.8;
        let gen = constant_gen(k, 0.0, 0.0, 0.0);
        let claim = ExpClaim { a: [0.0, 0.0], w: 0.0, v: 2.0 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 201).unwrap();
        for &t in &[0.0, 0.3, 0.9] {
            assert_relative_eq!(sol.xi(t), 2.0 * (k * (1.0 - t)).exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn omega_xi_match_rk4_oracle() {
        let ms = measure();
        let fwd = forward(&ms);
        let gen = LinearGenerator {
            c_y: Coefficient::Tabulated {
                times: vec![0.0, 0.5, 1.0],
                values: vec![0.2, 0.5, 0.1],
            },
            c_z: Coefficient::Constant(-0.3),
            c_u: Coefficient::Constant(0.4),
            c: Coefficient::Constant(0.07),
        };
        let claim = ExpClaim { a: [0.6, -0.8], w: 1.1, v: 0.3 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 2001).unwrap();

        let gamma = solve_gamma(
            &fwd,
            &crate::affine::AffineClaim { a: claim.a, v: 0.0 },
            1.0,
        );
        let kappa = |t: f64| {
            let g = gamma.eval(t);
            let zs = g[1] * 0.2;
            let gg = fwd.gamma().values();
            let gx = fwd.gamma_xi().values();
            let jump_full = ms.sum_atoms(|i, _| {
                let e = g[0] * gg[i] + g[1] * gx[i];
                e.exp() - 1.0 - e
            });
            let jump_lin = ms.sum_atoms(|i, _| {
                let e = g[0] * gg[i] + g[1] * gx[i];
                e.exp() - 1.0
            });
            0.5 * zs * zs
                + g[0] * fwd.beta_vec()[0]
                + g[1] * fwd.beta_vec()[1]
                + jump_full
                + gen.c_y.eval(t)
                + gen.c_z.eval(t) * zs
                + gen.c_u.eval(t) * jump_lin
        };
        for &t in &[0.0, 0.25, 0.7] {
            // integrate omega' = kappa omega and xi' = -(c_y xi + c)
            // backwards from T as initial-value problems in s = T - u
            let omega_oracle = rk4(
                |s, w| kappa(1.0 - s) * w,
                0.0,
                1.0 - t,
                claim.w,
                4000,
            );
            let xi_oracle = rk4(
                |s, x| gen.c_y.eval(1.0 - s) * x + gen.c.eval(1.0 - s),
                0.0,
                1.0 - t,
                claim.v,
                4000,
            );
            assert_relative_eq!(sol.omega(t), omega_oracle, epsilon = 1e-8);
            assert_relative_eq!(sol.xi(t), xi_oracle, epsilon = 1e-8);
        }
    }

    #[test]
    fn controls_vanish_when_w_zero() {
        let ms = measure();
        let fwd = forward(&ms);
        let gen = constant_gen(0.3, -0.1, 0.2, 0.05);
        let claim = ExpClaim { a: [0.5, -0.5], w: 0.0, v: 1.0 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 101).unwrap();
        for &t in &[0.0, 0.5, 1.0] {
            assert_eq!(sol.z(t, [0.4, 0.2]), 0.0);
            assert!(sol.u(t, [0.4, 0.2]).values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_exponent_kills_controls() {
        let ms = measure();
        let fwd = forward(&ms);
        let gen = constant_gen(0.1, 0.2, 0.0, 0.0);
        let claim = ExpClaim { a: [0.0, 0.0], w: 3.0, v: 2.0 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 101).unwrap();
        assert_eq!(sol.z(0.5, [1.0, 1.0]), 0.0);
        assert!(sol.u(0.5, [1.0, 1.0]).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn evaluate_checks_horizon() {
        let ms = measure();
        let fwd = forward(&ms);
        let gen = constant_gen(0.0, 0.0, 0.0, 0.0);
        let claim = ExpClaim { a: [0.0, 0.0], w: 1.0, v: 2.0 };
        let sol = solve_exp(&fwd, &ms, &gen, &claim, 1.0, 11).unwrap();
        assert_eq!(sol.evaluate(1.0, [0.0, 0.0]).unwrap().y, 3.0);
        assert!(sol.evaluate(1.1, [0.0, 0.0]).is_err());
    }
}
