//! Monte Carlo simulation of the forward state and wealth, martingale
//! diagnostics and pathwise residuals.
//!
//! Jumps are drawn as an exact compound Poisson process (exponential waiting
//! times at the total intensity, atom picked by mass); between events the
//! logspread uses the exact Ornstein-Uhlenbeck transition with the Brownian
//! grid increment and the OU convolution integral sampled *jointly* from
//! their exact Gaussian law. Both state components apply compensated-jump
//! drift corrections, so simulated paths follow the same dynamics the
//! solvers assume.
//!
//! Every path owns a counter-based RNG substream derived from
//! `(seed, path index)`: path `i` is the same regardless of batch size or
//! thread count, and all reductions use pairwise summation in path order,
//! making reports bit-identical across thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::affine::{phi1, AffineBsdeSolution, AffineClaim, AffineForward};
use crate::error::{EngineError, Result};
use crate::exp_ansatz::{ExpBsdeSolution, LinearGenerator};
use crate::generator::generator_value;
use crate::levy::{pairwise_sum, LevyMeasure};
use crate::market::MarketModel;
use crate::quad::{grid_step, uniform_grid};

/// Simulation batch parameters.
#[derive(Debug, Clone, Copy)]
pub struct PathConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub horizon: f64,
}

impl PathConfig {
    fn validate(&self) -> Result<()> {
        if self.n_paths < 1 || self.n_steps < 1 {
            return Err(EngineError::InvalidArgument(
                "need at least one path and one step".to_string(),
            ));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(EngineError::InvalidArgument(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// One simulated path, sampled on the grid, with the exact jump events.
///
/// `x_vals` and `y_vals` stay empty until filled by [`simulate_wealth`] and
/// a solution evaluator respectively. `w_increments[j]` is the Brownian
/// increment over `(times[j], times[j+1]]`.
#[derive(Debug, Clone, Default)]
pub struct SimPath {
    pub times: Vec<f64>,
    pub n_vals: Vec<f64>,
    pub xi_vals: Vec<f64>,
    pub x_vals: Vec<f64>,
    pub y_vals: Vec<f64>,
    pub w_increments: Vec<f64>,
    /// `(jump time, atom index)`, in time order.
    pub jump_events: Vec<(f64, usize)>,
}

impl SimPath {
    pub fn state_at(&self, node: usize) -> [f64; 2] {
        [self.n_vals[node], self.xi_vals[node]]
    }
}

/// RNG substream for one path. ChaCha streams keyed by the path index keep
/// paths independent of the batch size.
fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index.wrapping_add(1));
    rng
}

/// Conditional variance of the OU convolution integral given the Brownian
/// increment, over a step of length `delta` with `z = rate * delta`:
/// `delta * (phi1(2z) - phi1(z)^2)`. Series branch avoids cancellation.
fn ou_cond_var(z: f64, delta: f64) -> f64 {
    let v = if z.abs() < 1e-2 {
        z * z / 12.0 - z * z * z / 12.0 + 17.0 * z * z * z * z / 360.0
    } else {
        phi1(2.0 * z) - phi1(z) * phi1(z)
    };
    (delta * v).max(0.0)
}

/// Precomputed per-batch data for exact forward sampling.
pub struct ForwardSampler<'a> {
    grid: &'a [f64],
    /// Compensated log-price drift `beta - ∫ gamma dν`.
    drift_n: f64,
    /// Compensated spread reversion level `b - ∫ gamma_xi dν`.
    b_eff: f64,
    mean_rev: f64,
    sigma: f64,
    gamma: Vec<f64>,
    gamma_xi: Vec<f64>,
    cum_mass: Vec<f64>,
    total_mass: f64,
    r0: [f64; 2],
}

impl<'a> ForwardSampler<'a> {
    pub fn new(fwd: &AffineForward, m: &MarketModel, grid: &'a [f64]) -> Result<Self> {
        if fwd.coupling() != 0.0 {
            return Err(EngineError::InvalidModel(
                "forward simulation requires a diagonal drift matrix".to_string(),
            ));
        }
        let measure = m.measure();
        if fwd.gamma().len() != measure.len() {
            return Err(EngineError::IncompatibleFunction {
                expected: measure.len(),
                got: fwd.gamma().len(),
            });
        }
        if grid.len() < 2 {
            return Err(EngineError::InvalidArgument(
                "simulation grid needs at least 2 nodes".to_string(),
            ));
        }
        let gamma_mean = measure.integrate(fwd.gamma())?;
        let gamma_xi_mean = measure.integrate(fwd.gamma_xi())?;
        let mut cum_mass = Vec::with_capacity(measure.len());
        let mut acc = 0.0;
        for a in measure.atoms() {
            acc += a.mass;
            cum_mass.push(acc);
        }
        Ok(Self {
            grid,
            drift_n: fwd.beta_vec()[0] - gamma_mean,
            b_eff: fwd.beta_vec()[1] - gamma_xi_mean,
            mean_rev: fwd.mean_reversion(),
            sigma: fwd.volatility(),
            gamma: fwd.gamma().values().to_vec(),
            gamma_xi: fwd.gamma_xi().values().to_vec(),
            cum_mass,
            total_mass: measure.total_mass(),
            r0: fwd.r0(),
        })
    }

    fn pick_atom(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rand::Rng::random::<f64>(rng) * self.total_mass;
        // first index with cumulative mass strictly above u; zero-mass atoms
        // can never be selected
        match self
            .cum_mass
            .binary_search_by(|c| c.partial_cmp(&u).unwrap())
        {
            Ok(i) => (i + 1).min(self.cum_mass.len() - 1),
            Err(i) => i.min(self.cum_mass.len() - 1),
        }
    }

    /// Advance `(n, xi)` over a jump-free span of length `delta`, returning
    /// the Brownian increment.
    fn advance(&self, rng: &mut ChaCha8Rng, delta: f64, n: &mut f64, xi: &mut f64) -> f64 {
        if delta <= 0.0 {
            return 0.0;
        }
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let dw = delta.sqrt() * z1;
        *n += self.drift_n * delta;
        let z = self.mean_rev * delta;
        let conv = phi1(z) * dw + ou_cond_var(z, delta).sqrt() * z2;
        *xi = *xi * (-z).exp() + self.b_eff * delta * phi1(z) + self.sigma * conv;
        dw
    }

    /// Simulate one path; deterministic in `(seed, path_index)`.
    pub fn sample_path(&self, seed: u64, path_index: u64) -> SimPath {
        let n_nodes = self.grid.len();
        let mut rng = path_rng(seed, path_index);
        let mut n_vals = vec![0.0; n_nodes];
        let mut xi_vals = vec![0.0; n_nodes];
        let mut w_increments = vec![0.0; n_nodes - 1];
        let mut jump_events = Vec::new();

        let (mut n, mut xi) = (self.r0[0], self.r0[1]);
        n_vals[0] = n;
        xi_vals[0] = xi;
        let mut t = self.grid[0];
        let mut next_jump = if self.total_mass > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            t + e / self.total_mass
        } else {
            f64::INFINITY
        };

        for node in 1..n_nodes {
            let t_node = self.grid[node];
            let mut w_acc = 0.0;
            while next_jump < t_node {
                w_acc += self.advance(&mut rng, next_jump - t, &mut n, &mut xi);
                t = next_jump;
                let k = self.pick_atom(&mut rng);
                n += self.gamma[k];
                xi += self.gamma_xi[k];
                jump_events.push((t, k));
                let e: f64 = Exp1.sample(&mut rng);
                next_jump = t + e / self.total_mass;
            }
            w_acc += self.advance(&mut rng, t_node - t, &mut n, &mut xi);
            t = t_node;
            n_vals[node] = n;
            xi_vals[node] = xi;
            w_increments[node - 1] = w_acc;
        }

        SimPath {
            times: self.grid.to_vec(),
            n_vals,
            xi_vals,
            x_vals: Vec::new(),
            y_vals: Vec::new(),
            w_increments,
            jump_events,
        }
    }
}

/// Simulate a batch of forward paths (state components only).
pub fn simulate_forward(
    fwd: &AffineForward,
    m: &MarketModel,
    cfg: &PathConfig,
) -> Result<Vec<SimPath>> {
    cfg.validate()?;
    let grid = uniform_grid(cfg.horizon, cfg.n_steps + 1)?;
    let sampler = ForwardSampler::new(fwd, m, &grid)?;
    Ok((0..cfg.n_paths)
        .into_par_iter()
        .map(|i| sampler.sample_path(cfg.seed, i as u64))
        .collect())
}

/// Wealth values at the grid nodes for a deterministic strategy:
/// left-endpoint (predictable) drift integration between nodes, exact jump
/// contributions at the jump times, compensated jump drift.
fn wealth_values(
    m: &MarketModel,
    strategy: &(impl Fn(f64) -> f64 + ?Sized),
    x0: f64,
    path: &SimPath,
) -> Vec<f64> {
    let comp_drift = m.phi() - m.psi_mean();
    let psi = m.psi().values();
    let times = &path.times;
    let mut x_vals = vec![0.0; times.len()];
    x_vals[0] = x0;
    let mut ev = path.jump_events.iter().peekable();
    for j in 1..times.len() {
        let mut x = x_vals[j - 1] + strategy(times[j - 1]) * comp_drift * (times[j] - times[j - 1]);
        while let Some(&&(tau, k)) = ev.peek() {
            if tau < times[j] {
                x += strategy(tau) * psi[k];
                ev.next();
            } else {
                break;
            }
        }
        x_vals[j] = x;
    }
    x_vals
}

/// Fill `x_vals` on every path for the given strategy and initial wealth.
pub fn simulate_wealth(
    m: &MarketModel,
    strategy: &(impl Fn(f64) -> f64 + Sync),
    x0: f64,
    paths: &mut [SimPath],
) {
    paths
        .par_iter_mut()
        .for_each(|p| p.x_vals = wealth_values(m, strategy, x0, p));
}

/// Fill `y_vals` on every path from the closed-form solution.
pub fn fill_value_path(sol: &AffineBsdeSolution, paths: &mut [SimPath]) {
    paths.par_iter_mut().for_each(|p| {
        p.y_vals = p
            .times
            .iter()
            .enumerate()
            .map(|(j, &t)| sol.y(t, p.state_at(j)))
            .collect();
    });
}

/// Sample mean and standard error (`std / sqrt(n)`).
#[derive(Debug, Clone, Copy)]
pub struct UtilityStat {
    pub mean: f64,
    pub se: f64,
}

fn stat(samples: &[f64]) -> UtilityStat {
    let n = samples.len();
    let mean = pairwise_sum(samples) / n as f64;
    if n < 2 {
        return UtilityStat { mean, se: 0.0 };
    }
    let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    UtilityStat {
        mean,
        se: (var / n as f64).sqrt(),
    }
}

/// Utility diagnostics for one strategy (the optimum or a perturbation).
#[derive(Debug, Clone)]
pub struct StrategyReport {
    /// Constant offset added to the optimal strategy (0 for the optimum).
    pub offset: f64,
    /// Mean of `U(X_t - Y_t)` at the checkpoints.
    pub series: Vec<UtilityStat>,
    /// Mean of `U(X_T - B)`.
    pub terminal: UtilityStat,
    /// Paired per-path difference of terminal utility against the optimum.
    pub diff_mean: f64,
    pub diff_se: f64,
}

/// Empirical optimality diagnostics.
///
/// Under the optimal strategy the utility of the hedged position is a
/// martingale, so its mean is time-constant; under any admissible
/// perturbation it is a supermartingale, so the terminal mean cannot exceed
/// the optimum's.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub checkpoint_times: Vec<f64>,
    /// The martingale level `U(x0 - Y0)`.
    pub reference_utility: f64,
    pub y0: f64,
    pub optimal: StrategyReport,
    pub perturbed: Vec<StrategyReport>,
    pub residual_rms: f64,
    /// Grid step of the simulation.
    pub step: f64,
}

impl Diagnostics {
    /// Time-constancy of the mean utility under the optimum: every
    /// checkpoint mean within `k` standard errors of the reference level.
    pub fn martingale_within(&self, k: f64) -> bool {
        self.optimal
            .series
            .iter()
            .all(|s| (s.mean - self.reference_utility).abs() <= k * s.se.max(f64::MIN_POSITIVE))
    }

    /// No perturbation beats the optimum by more than `k` standard errors
    /// of the paired difference.
    pub fn supermartingale_within(&self, k: f64) -> bool {
        self.perturbed
            .iter()
            .all(|p| p.diff_mean <= k * p.diff_se.max(f64::MIN_POSITIVE))
    }

    /// Residual tolerance `5 sqrt(h) (1 + |Y0|)`.
    pub fn residual_bound(&self) -> f64 {
        5.0 * self.step.sqrt() * (1.0 + self.y0.abs())
    }

    pub fn residual_ok(&self) -> bool {
        self.residual_rms <= self.residual_bound()
    }

    pub fn all_pass(&self) -> bool {
        self.martingale_within(3.0) && self.supermartingale_within(3.0) && self.residual_ok()
    }
}

/// Evenly spaced checkpoint node indices including both endpoints.
fn checkpoint_indices(n_steps: usize, n_checkpoints: usize) -> Vec<usize> {
    let nc = n_checkpoints.clamp(2, n_steps + 1);
    let mut idx: Vec<usize> = (0..nc)
        .map(|k| ((k as f64) * (n_steps as f64) / (nc - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx
}

/// Run the empirical optimality check: simulate forward paths, compare the
/// utility of the hedged position under the optimal strategy (martingale,
/// time-constant mean) and under constant-offset perturbations
/// (supermartingale, terminal mean no higher), and compute the pathwise
/// value-reconstruction residual.
#[allow(clippy::too_many_arguments)]
pub fn optimality_report(
    m: &MarketModel,
    fwd: &AffineForward,
    claim: &AffineClaim,
    sol: &AffineBsdeSolution,
    perturbations: &[f64],
    cfg: &PathConfig,
    x0: f64,
    n_checkpoints: usize,
) -> Result<Diagnostics> {
    cfg.validate()?;
    let grid = uniform_grid(cfg.horizon, cfg.n_steps + 1)?;
    let sampler = ForwardSampler::new(fwd, m, &grid)?;
    let tables = AffineResidualTables::new(sol, m, fwd, &grid)?;
    let cp = checkpoint_indices(cfg.n_steps, n_checkpoints);
    let alpha = m.alpha();
    let n_cp = cp.len();
    let n_pert = perturbations.len();

    struct PerPath {
        utility: Vec<f64>,  // (1 + n_pert) x n_cp, row-major
        terminal: Vec<f64>, // 1 + n_pert
        residual: f64,
    }

    let per_path: Vec<PerPath> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let path = sampler.sample_path(cfg.seed, i as u64);
            let y_cp: Vec<f64> = cp
                .iter()
                .map(|&j| sol.y(grid[j], path.state_at(j)))
                .collect();
            let terminal_b = claim.payoff(path.state_at(cfg.n_steps));
            let mut utility = Vec::with_capacity((1 + n_pert) * n_cp);
            let mut terminal = Vec::with_capacity(1 + n_pert);
            for s in 0..=n_pert {
                let offset = if s == 0 { 0.0 } else { perturbations[s - 1] };
                let strat = |t: f64| sol.pi_star(t) + offset;
                let x_vals = wealth_values(m, &strat, x0, &path);
                for (c, &j) in cp.iter().enumerate() {
                    utility.push(-(-alpha * (x_vals[j] - y_cp[c])).exp());
                }
                terminal.push(-(-alpha * (x_vals[cfg.n_steps] - terminal_b)).exp());
            }
            let residual = tables.residual_one(&path);
            PerPath {
                utility,
                terminal,
                residual,
            }
        })
        .collect();

    // sequential pairwise reductions in path order
    let collect_series = |s: usize| -> Vec<UtilityStat> {
        (0..n_cp)
            .map(|c| {
                let samples: Vec<f64> =
                    per_path.iter().map(|p| p.utility[s * n_cp + c]).collect();
                stat(&samples)
            })
            .collect()
    };
    let collect_terminal =
        |s: usize| -> Vec<f64> { per_path.iter().map(|p| p.terminal[s]).collect() };

    let base_terminal = collect_terminal(0);
    let optimal = StrategyReport {
        offset: 0.0,
        series: collect_series(0),
        terminal: stat(&base_terminal),
        diff_mean: 0.0,
        diff_se: 0.0,
    };
    let perturbed: Vec<StrategyReport> = (0..n_pert)
        .map(|s| {
            let term = collect_terminal(s + 1);
            let diffs: Vec<f64> = term
                .iter()
                .zip(&base_terminal)
                .map(|(a, b)| a - b)
                .collect();
            let d = stat(&diffs);
            StrategyReport {
                offset: perturbations[s],
                series: collect_series(s + 1),
                terminal: stat(&term),
                diff_mean: d.mean,
                diff_se: d.se,
            }
        })
        .collect();

    let residuals: Vec<f64> = per_path.iter().map(|p| p.residual * p.residual).collect();
    let residual_rms = (pairwise_sum(&residuals) / cfg.n_paths as f64).sqrt();

    let y0 = sol.y(0.0, fwd.r0());
    Ok(Diagnostics {
        checkpoint_times: cp.iter().map(|&j| grid[j]).collect(),
        reference_utility: -(-alpha * (x0 - y0)).exp(),
        y0,
        optimal,
        perturbed,
        residual_rms,
        step: grid_step(&grid),
    })
}

/// Per-grid-node tables for the affine value reconstruction. The generator,
/// Brownian control and jump compensator are deterministic functions of
/// time, so their time integrals are shared by all paths.
struct AffineResidualTables {
    z: Vec<f64>,
    /// Left-endpoint time integral of the generator over `[0, T]`.
    int_f: f64,
    /// Left-endpoint time integral of `∫ U_t dν` over `[0, T]`.
    int_comp: f64,
    h: f64,
    gamma_marks: Vec<f64>,
    gamma_xi_marks: Vec<f64>,
    claim: AffineClaim,
    y0: f64,
    sol_gamma: Vec<[f64; 2]>,
    grid0: f64,
}

impl AffineResidualTables {
    fn new(
        sol: &AffineBsdeSolution,
        m: &MarketModel,
        fwd: &AffineForward,
        grid: &[f64],
    ) -> Result<Self> {
        let h = grid_step(grid);
        let mut z = Vec::with_capacity(grid.len());
        let mut f = Vec::with_capacity(grid.len());
        let mut comp = Vec::with_capacity(grid.len());
        for &t in grid {
            let zt = sol.z(t);
            let ut = sol.u(t);
            z.push(zt);
            f.push(generator_value(m, zt, &ut, sol.constraint())?);
            comp.push(m.measure().integrate(&ut)?);
        }
        let int_f = pairwise_sum(&f[..grid.len() - 1]) * h;
        let int_comp = pairwise_sum(&comp[..grid.len() - 1]) * h;
        Ok(Self {
            z,
            int_f,
            int_comp,
            h,
            gamma_marks: fwd.gamma().values().to_vec(),
            gamma_xi_marks: fwd.gamma_xi().values().to_vec(),
            claim: *sol.claim(),
            y0: sol.y(0.0, fwd.r0()),
            sol_gamma: grid.iter().map(|&t| sol.gamma(t)).collect(),
            grid0: grid[0],
        })
    }

    /// Jump control at the jump time (deterministic in time).
    fn u_at(&self, g: [f64; 2], atom: usize) -> f64 {
        g[0] * self.gamma_marks[atom] + g[1] * self.gamma_xi_marks[atom]
    }

    /// `Gamma` near an arbitrary time from the node table; linear
    /// interpolation is second order in h, well below the Euler-order terms
    /// of the reconstruction.
    fn gamma_at(&self, tau: f64) -> [f64; 2] {
        let j = (((tau - self.grid0) / self.h).floor() as usize).min(self.sol_gamma.len() - 2);
        let w = ((tau - self.grid0) / self.h - j as f64).clamp(0.0, 1.0);
        let a = self.sol_gamma[j];
        let b = self.sol_gamma[j + 1];
        [a[0] * (1.0 - w) + b[0] * w, a[1] * (1.0 - w) + b[1] * w]
    }

    /// Reconstruct the initial value from the terminal payoff and the
    /// discretized integrals, and subtract the closed form.
    fn residual_one(&self, path: &SimPath) -> f64 {
        let n = path.times.len();
        let mut int_zdw = 0.0;
        for j in 0..n - 1 {
            int_zdw += self.z[j] * path.w_increments[j];
        }
        let mut jumps = 0.0;
        for &(tau, k) in &path.jump_events {
            let g = self.gamma_at(tau);
            jumps += self.u_at(g, k);
        }
        let terminal = self.claim.payoff(path.state_at(n - 1));
        let y0_rec = terminal + self.int_f - int_zdw - (jumps - self.int_comp);
        y0_rec - self.y0
    }
}

/// RMS over paths of the difference between the reconstructed and
/// closed-form initial value for the affine solution.
///
/// Per path the reconstruction is
/// `Y0 ~ F(R_T) + Σ f(t_j) h - Σ Z(t_j) ΔW_j - [Σ U(tau_k)(x_k) - Σ (∫U_{t_j} dν) h]`
/// with the generator evaluated through the pointwise minimization.
pub fn bsde_residual(
    sol: &AffineBsdeSolution,
    m: &MarketModel,
    fwd: &AffineForward,
    paths: &[SimPath],
) -> Result<f64> {
    if paths.is_empty() {
        return Err(EngineError::InvalidArgument("no paths given".to_string()));
    }
    let tables = AffineResidualTables::new(sol, m, fwd, &paths[0].times)?;
    let sq: Vec<f64> = paths
        .par_iter()
        .map(|p| {
            let r = tables.residual_one(p);
            r * r
        })
        .collect();
    Ok((pairwise_sum(&sq) / paths.len() as f64).sqrt())
}

/// Streaming variant of [`bsde_residual`]: simulates the paths internally
/// so large batches never sit in memory at once.
pub fn bsde_residual_streaming(
    sol: &AffineBsdeSolution,
    m: &MarketModel,
    fwd: &AffineForward,
    cfg: &PathConfig,
) -> Result<f64> {
    cfg.validate()?;
    let grid = uniform_grid(cfg.horizon, cfg.n_steps + 1)?;
    let sampler = ForwardSampler::new(fwd, m, &grid)?;
    let tables = AffineResidualTables::new(sol, m, fwd, &grid)?;
    let sq: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_path(cfg.seed, i as u64);
            let r = tables.residual_one(&p);
            r * r
        })
        .collect();
    Ok((pairwise_sum(&sq) / cfg.n_paths as f64).sqrt())
}

/// Per-grid-node tables for the linear-generator value reconstruction. The
/// controls depend on the state, so per node only the state-free factors
/// are cached; the state enters through one exponential per node and path.
struct ExpResidualTables {
    g: Vec<[f64; 2]>,
    omega: Vec<f64>,
    xi: Vec<f64>,
    sz: Vec<f64>,
    jf: Vec<Vec<f64>>,
    jf_int: Vec<f64>,
    cy: Vec<f64>,
    cz: Vec<f64>,
    cu: Vec<f64>,
    cc: Vec<f64>,
    h: f64,
    grid0: f64,
    y0: f64,
    claim: crate::exp_ansatz::ExpClaim,
}

impl ExpResidualTables {
    fn new(
        sol: &ExpBsdeSolution,
        gen: &LinearGenerator,
        fwd: &AffineForward,
        measure: &LevyMeasure,
        grid: &[f64],
    ) -> Self {
        let sigma = fwd.sigma_vec();
        let g: Vec<[f64; 2]> = grid.iter().map(|&t| sol.gamma(t)).collect();
        let jf: Vec<Vec<f64>> = grid.iter().map(|&t| sol.jump_factors(t)).collect();
        let jf_int: Vec<f64> = jf
            .iter()
            .map(|row| measure.sum_atoms(|i, _| row[i]))
            .collect();
        Self {
            sz: g
                .iter()
                .map(|gv| gv[0] * sigma[0] + gv[1] * sigma[1])
                .collect(),
            omega: grid.iter().map(|&t| sol.omega(t)).collect(),
            xi: grid.iter().map(|&t| sol.xi(t)).collect(),
            jf,
            jf_int,
            cy: grid.iter().map(|&t| gen.c_y.eval(t)).collect(),
            cz: grid.iter().map(|&t| gen.c_z.eval(t)).collect(),
            cu: grid.iter().map(|&t| gen.c_u.eval(t)).collect(),
            cc: grid.iter().map(|&t| gen.c.eval(t)).collect(),
            g,
            h: grid_step(grid),
            grid0: grid[0],
            y0: sol.y(grid[0], fwd.r0()),
            claim: *sol.claim(),
        }
    }

    /// Jump controls are evaluated at the left grid node (predictable
    /// convention) since they depend on the pre-jump state.
    fn residual_one(&self, p: &SimPath) -> f64 {
        let n = p.times.len();
        let mut int_f = 0.0;
        let mut int_zdw = 0.0;
        let mut comp = 0.0;
        for j in 0..n - 1 {
            let e = (self.g[j][0] * p.n_vals[j] + self.g[j][1] * p.xi_vals[j]).exp()
                * self.omega[j];
            let y = e + self.xi[j];
            let z = e * self.sz[j];
            let ju = e * self.jf_int[j];
            int_f += (self.cy[j] * y + self.cz[j] * z + self.cu[j] * ju + self.cc[j]) * self.h;
            int_zdw += z * p.w_increments[j];
            comp += ju * self.h;
        }
        let mut jumps = 0.0;
        for &(tau, k) in &p.jump_events {
            let j = (((tau - self.grid0) / self.h).floor() as usize).min(n - 2);
            let e = (self.g[j][0] * p.n_vals[j] + self.g[j][1] * p.xi_vals[j]).exp()
                * self.omega[j];
            jumps += e * self.jf[j][k];
        }
        let terminal = self.claim.payoff(p.state_at(n - 1));
        terminal + int_f - int_zdw - (jumps - comp) - self.y0
    }
}

/// RMS initial-value reconstruction residual for the linear-generator
/// solution over an in-memory batch.
pub fn bsde_residual_exp(
    sol: &ExpBsdeSolution,
    gen: &LinearGenerator,
    fwd: &AffineForward,
    measure: &LevyMeasure,
    paths: &[SimPath],
) -> Result<f64> {
    if paths.is_empty() {
        return Err(EngineError::InvalidArgument("no paths given".to_string()));
    }
    let tables = ExpResidualTables::new(sol, gen, fwd, measure, &paths[0].times);
    let sq: Vec<f64> = paths
        .par_iter()
        .map(|p| {
            let r = tables.residual_one(p);
            r * r
        })
        .collect();
    Ok((pairwise_sum(&sq) / paths.len() as f64).sqrt())
}

/// Streaming variant of [`bsde_residual_exp`]: simulates paths internally.
pub fn bsde_residual_exp_streaming(
    sol: &ExpBsdeSolution,
    gen: &LinearGenerator,
    fwd: &AffineForward,
    m: &MarketModel,
    cfg: &PathConfig,
) -> Result<f64> {
    cfg.validate()?;
    let grid = uniform_grid(cfg.horizon, cfg.n_steps + 1)?;
    let sampler = ForwardSampler::new(fwd, m, &grid)?;
    let tables = ExpResidualTables::new(sol, gen, fwd, m.measure(), &grid);
    let sq: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_path(cfg.seed, i as u64);
            let r = tables.residual_one(&p);
            r * r
        })
        .collect();
    Ok((pairwise_sum(&sq) / cfg.n_paths as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{claim_from_log, solve_affine};
    use crate::levy::{JumpAtom, MarkFunction};
    use crate::market::ConstraintSet;
    use approx::assert_relative_eq;

    fn mixed_market(phi: f64, alpha: f64) -> MarketModel {
        let measure = LevyMeasure::new(vec![
            JumpAtom { x: 0.1, mass: 2.0 },
            JumpAtom { x: -0.1, mass: 3.0 },
        ])
        .unwrap();
        let psi = MarkFunction::identity(&measure);
        MarketModel::new(measure, psi, phi, alpha, 1.0).unwrap()
    }

    fn forward(m: &MarketModel, b: f64, mean_rev: f64, sigma: f64, xi0: f64) -> AffineForward {
        AffineForward::from_market(
            m,
            b,
            mean_rev,
            sigma,
            MarkFunction::zero(m.measure().len()),
            [0.0, xi0],
        )
        .unwrap()
    }

    fn cfg(n_paths: usize, n_steps: usize, seed: u64) -> PathConfig {
        PathConfig {
            n_paths,
            n_steps,
            seed,
            horizon: 1.0,
        }
    }

    #[test]
    fn no_jumps_deterministic_log_price() {
        let measure = LevyMeasure::new(vec![JumpAtom { x: 0.1, mass: 0.0 }]).unwrap();
        let psi = MarkFunction::identity(&measure);
        let m = MarketModel::new(measure, psi, 0.0, 1.0, 1.0).unwrap();
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.5);
        let paths = simulate_forward(&fwd, &m, &cfg(3, 16, 7)).unwrap();
        let beta = fwd.beta_vec()[0];
        for p in &paths {
            assert!(p.jump_events.is_empty());
            for (j, &t) in p.times.iter().enumerate() {
                assert_relative_eq!(p.n_vals[j], beta * t, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_spread_decay() {
        // Sigma = 0, b = 0, gamma_xi = 0: Xi_t = xi0 e^{-Bt}
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.3, 0.0, 0.8);
        let paths = simulate_forward(&fwd, &m, &cfg(2, 10, 3)).unwrap();
        for p in &paths {
            for (j, &t) in p.times.iter().enumerate() {
                assert_relative_eq!(p.xi_vals[j], 0.8 * (-1.3 * t).exp(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jump_count_matches_poisson_mean() {
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.0);
        let n_paths = 10_000;
        let paths = simulate_forward(&fwd, &m, &cfg(n_paths, 4, 11)).unwrap();
        let counts: Vec<f64> = paths.iter().map(|p| p.jump_events.len() as f64).collect();
        let s = stat(&counts);
        // Poisson(5): mean 5, sd sqrt(5)
        assert!(
            (s.mean - 5.0).abs() <= 3.0 * s.se,
            "mean {} se {}",
            s.mean,
            s.se
        );
    }

    #[test]
    fn compensation_identity() {
        // E[N_T - n0 - beta T] = 0: the compensated jump integral is a martingale
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.0);
        let paths = simulate_forward(&fwd, &m, &cfg(10_000, 4, 13)).unwrap();
        let beta = fwd.beta_vec()[0];
        let devs: Vec<f64> = paths
            .iter()
            .map(|p| p.n_vals[p.n_vals.len() - 1] - beta * 1.0)
            .collect();
        let s = stat(&devs);
        assert!(s.mean.abs() <= 3.0 * s.se, "mean {} se {}", s.mean, s.se);
    }

    #[test]
    fn ou_stationary_distribution_preserved() {
        // with Xi_0 ~ N(b/B, Sigma^2/(2B)) the terminal spread keeps that law
        let m = mixed_market(0.05, 2.0);
        let b = 0.4;
        let mean_rev = 1.5;
        let sigma = 0.3;
        let stat_mean = b / mean_rev;
        let stat_var: f64 = sigma * sigma / (2.0 * mean_rev);
        let n_paths = 4000;
        let mut rng = path_rng(999, 0);
        let terminals: Vec<f64> = (0..n_paths)
            .map(|i| {
                let g: f64 = StandardNormal.sample(&mut rng);
                let xi0 = stat_mean + stat_var.sqrt() * g;
                let fwd = forward(&m, b, mean_rev, sigma, xi0);
                let grid = uniform_grid(1.0, 9).unwrap();
                let sampler = ForwardSampler::new(&fwd, &m, &grid).unwrap();
                let p = sampler.sample_path(1000, i as u64);
                *p.xi_vals.last().unwrap()
            })
            .collect();
        let s = stat(&terminals);
        assert!(
            (s.mean - stat_mean).abs() <= 3.0 * s.se,
            "mean {} expected {stat_mean}",
            s.mean
        );
        let sq: Vec<f64> = terminals
            .iter()
            .map(|x| (x - s.mean) * (x - s.mean))
            .collect();
        let var = pairwise_sum(&sq) / (n_paths - 1) as f64;
        let var_se = var * (2.0 / (n_paths - 1) as f64).sqrt();
        assert!(
            (var - stat_var).abs() <= 3.0 * var_se,
            "var {var} expected {stat_var}"
        );
    }

    #[test]
    fn paths_bit_identical_and_batch_independent() {
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.1);
        let a = simulate_forward(&fwd, &m, &cfg(4, 32, 42)).unwrap();
        let b = simulate_forward(&fwd, &m, &cfg(4, 32, 42)).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.n_vals, pb.n_vals);
            assert_eq!(pa.xi_vals, pb.xi_vals);
            assert_eq!(pa.w_increments, pb.w_increments);
            assert_eq!(pa.jump_events, pb.jump_events);
        }
        // path i does not depend on the batch size
        let big = simulate_forward(&fwd, &m, &cfg(8, 32, 42)).unwrap();
        assert_eq!(a[2].n_vals, big[2].n_vals);
        assert_eq!(a[3].xi_vals, big[3].xi_vals);
    }

    #[test]
    fn wealth_zero_strategy_constant() {
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.0);
        let mut paths = simulate_forward(&fwd, &m, &cfg(3, 16, 5)).unwrap();
        simulate_wealth(&m, &|_| 0.0, 1.25, &mut paths);
        for p in &paths {
            assert!(p.x_vals.iter().all(|&x| x == 1.25));
        }
    }

    #[test]
    fn wealth_hand_values() {
        // no-jump path, pi = 1, phi = 0.05, ∫psi dν = -0.1, T = 1, x0 = 0:
        // X_T = (0.05 + 0.1) * 1 = 0.15; one jump at the psi = 0.1 atom adds 0.1
        let measure = LevyMeasure::new(vec![
            JumpAtom { x: 0.1, mass: 2.0 },
            JumpAtom { x: -0.3, mass: 1.0 },
        ])
        .unwrap();
        let psi = MarkFunction::identity(&measure); // mean = 0.2 - 0.3 = -0.1
        let m = MarketModel::new(measure, psi, 0.05, 1.0, 1.0).unwrap();

        let times = uniform_grid(1.0, 5).unwrap();
        let mut path = SimPath {
            times: times.clone(),
            n_vals: vec![0.0; 5],
            xi_vals: vec![0.0; 5],
            x_vals: vec![],
            y_vals: vec![],
            w_increments: vec![0.0; 4],
            jump_events: vec![],
        };
        let x = wealth_values(&m, &|_| 1.0, 0.0, &path);
        assert_relative_eq!(x[4], 0.15, epsilon = 1e-12);

        // atom index 1 is the mark 0.1 (sorted ascending: -0.3, 0.1)
        path.jump_events.push((0.4, 1));
        let x = wealth_values(&m, &|_| 1.0, 0.0, &path);
        assert_relative_eq!(x[4], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn residual_zero_for_trivial_configuration() {
        // zero claim, zero drift, Sigma = 0: everything vanishes identically
        let m = mixed_market(0.0, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.0, 0.3);
        let claim = AffineClaim {
            a: [0.0, 0.0],
            v: 0.0,
        };
        let sol = solve_affine(&m, &fwd, &claim, &ConstraintSet::AllReals, 101).unwrap();
        let paths = simulate_forward(&fwd, &m, &cfg(50, 64, 21)).unwrap();
        let rms = bsde_residual(&sol, &m, &fwd, &paths).unwrap();
        assert!(rms < 1e-14, "rms = {rms}");
    }

    #[test]
    fn residual_decreases_under_step_doubling() {
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.1);
        let claim = claim_from_log(1.0, 0.0);
        let sol = solve_affine(&m, &fwd, &claim, &ConstraintSet::AllReals, 2001).unwrap();
        let mut last = f64::INFINITY;
        for n_steps in [125, 250, 500, 1000] {
            let rms = bsde_residual_streaming(&sol, &m, &fwd, &cfg(400, n_steps, 33)).unwrap();
            assert!(rms < last, "rms {rms} at {n_steps} steps, previous {last}");
            last = rms;
        }
    }

    #[test]
    fn utility_translation_scales_samples_and_keeps_ranking() {
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.1);
        let claim = claim_from_log(1.0, 0.0);
        let sol = solve_affine(&m, &fwd, &claim, &ConstraintSet::AllReals, 501).unwrap();
        let perturbations = [-0.5, 0.25, 1.0];
        let c = cfg(300, 200, 77);
        let d0 = optimality_report(&m, &fwd, &claim, &sol, &perturbations, &c, 0.0, 5).unwrap();
        let shift = 0.7;
        let d1 = optimality_report(&m, &fwd, &claim, &sol, &perturbations, &c, shift, 5).unwrap();
        let scale = (-m.alpha() * shift).exp();
        for (a, b) in d0.optimal.series.iter().zip(&d1.optimal.series) {
            assert_relative_eq!(a.mean * scale, b.mean, max_relative = 1e-12);
        }
        // ranking of terminal means identical
        let rank = |d: &Diagnostics| {
            let mut order: Vec<usize> = (0..d.perturbed.len()).collect();
            order.sort_by(|&i, &j| {
                d.perturbed[i]
                    .terminal
                    .mean
                    .partial_cmp(&d.perturbed[j].terminal.mean)
                    .unwrap()
            });
            order
        };
        assert_eq!(rank(&d0), rank(&d1));
    }

    #[test]
    fn optimality_zero_offset_coincides() {
        let m = mixed_market(0.05, 2.0);
        let fwd = forward(&m, 0.0, 1.0, 0.2, 0.1);
        let claim = claim_from_log(1.0, 0.0);
        let sol = solve_affine(&m, &fwd, &claim, &ConstraintSet::AllReals, 501).unwrap();
        let d =
            optimality_report(&m, &fwd, &claim, &sol, &[0.0], &cfg(200, 100, 9), 0.0, 4).unwrap();
        let p = &d.perturbed[0];
        assert_eq!(p.diff_mean, 0.0);
        assert_eq!(p.diff_se, 0.0);
        for (a, b) in d.optimal.series.iter().zip(&p.series) {
            assert_eq!(a.mean, b.mean);
        }
    }

    #[test]
    fn checkpoints_cover_endpoints() {
        let idx = checkpoint_indices(2000, 20);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 2000);
        assert_eq!(idx.len(), 20);
    }
}
