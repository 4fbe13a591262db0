//! Subcommand implementations.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use jumphedge::affine::solve_affine as solve_affine_core;
use jumphedge::exp_ansatz::solve_exp as solve_exp_core;
use jumphedge::generator::{minimize, minimizer_bounds};
use jumphedge::levy::{l2_norm_sq, pairwise_sum, MarkFunction};
use jumphedge::market::{check_wellposed, classify_support};
use jumphedge::mc::{optimality_report, ForwardSampler, PathConfig};
use jumphedge::quad::uniform_grid;

use crate::config::RunConfig;
use crate::output::{fmt_f64, write_csv, write_line_chart};
use crate::CliError;

pub struct Options {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub steps: Option<usize>,
    pub svg: bool,
}

impl Options {
    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)?;
        Ok(())
    }

    fn path_config(&self, cfg: &RunConfig, horizon: f64) -> Result<PathConfig, CliError> {
        let mc = cfg.mc()?;
        Ok(PathConfig {
            n_paths: self.paths.unwrap_or(mc.n_paths),
            n_steps: self.steps.unwrap_or(mc.n_steps),
            seed: self.seed.unwrap_or(mc.seed),
            horizon,
        })
    }
}

pub fn check(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let m = cfg.market_model()?;
    let report = check_wellposed(&m);
    println!(
        "well-posedness: {}",
        if report.passes { "PASS" } else { "FAIL" }
    );
    println!("  reason:    {}", report.reason);
    println!(
        "  support:   positive={} negative={}",
        report.support.has_positive, report.support.has_negative
    );
    println!("  drift:     {}", fmt_f64(report.drift));
    println!("  jump mean: {}", fmt_f64(report.jump_mean));
    Ok(if report.passes {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

pub fn optimal_strategy(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let m = cfg.market_model()?;
    let c_set = cfg.constraint()?;
    let u = MarkFunction::zero(m.measure().len());
    let min = minimize(&m, &u, &c_set)?;
    println!("pi_star    = {}", fmt_f64(min.pi_star));
    println!("lambda_min = {}", fmt_f64(min.lambda_min));
    println!("|lambda'|  = {:.3e}", min.d1_residual.abs());
    let mut row = vec![min.pi_star, min.lambda_min, min.d1_residual];
    let mut header = vec!["pi_star", "lambda_min", "d1_residual"];
    if classify_support(&m).is_mixed() {
        let b = minimizer_bounds(&m, &u)?;
        println!("bounds     = [{}, {}]", fmt_f64(b.lower), fmt_f64(b.upper));
        header.extend_from_slice(&["lower_bound", "upper_bound"]);
        row.extend_from_slice(&[b.lower, b.upper]);
    }
    opts.ensure_out()?;
    write_csv(
        &opts.out.join("optimal_strategy.csv"),
        &header,
        std::iter::once(row),
    )?;
    Ok(ExitCode::SUCCESS)
}

pub fn solve_affine(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let m = cfg.market_model()?;
    let fwd = cfg.forward(&m)?;
    let claim = cfg.affine_claim()?;
    let c_set = cfg.constraint()?;
    let sol = solve_affine_core(&m, &fwd, &claim, &c_set, cfg.grid_nodes())?;

    opts.ensure_out()?;
    let grid = sol.grid().to_vec();
    write_csv(
        &opts.out.join("solution.csv"),
        &["t", "Gamma1", "Gamma2", "omega", "pi_star", "Z"],
        grid.iter().map(|&t| {
            let g = sol.gamma(t);
            vec![t, g[0], g[1], sol.omega(t), sol.pi_star(t), sol.z(t)]
        }),
    )?;

    // run report: strategy size, bounds actually bracketing it, and the
    // solver tolerances achieved
    let sup_pi = sol.sup_pi_star();
    let sup_u_l2 = grid
        .iter()
        .map(|&t| l2_norm_sq(m.measure(), &sol.u(t)).unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    let y0 = sol.y(0.0, fwd.r0());
    let mut report = String::new();
    report.push_str(&format!("grid_nodes = {}\n", grid.len()));
    report.push_str(&format!("y0 = {}\n", fmt_f64(y0)));
    report.push_str(&format!("sup_pi_star = {}\n", fmt_f64(sup_pi)));
    report.push_str(&format!("sup_jump_control_l2_sq = {}\n", fmt_f64(sup_u_l2)));
    report.push_str(&format!(
        "max_derivative_residual = {}\n",
        fmt_f64(sol.max_d1_residual)
    ));
    report.push_str(&format!(
        "derivative_tolerance = {}\n",
        fmt_f64(1e-12 * (1.0 + m.phi().abs()))
    ));
    if classify_support(&m).is_mixed() {
        let bounds = sol.bounds_at(&m)?;
        let lo = bounds.iter().map(|b| b.lower).fold(f64::INFINITY, f64::min);
        let hi = bounds
            .iter()
            .map(|b| b.upper)
            .fold(f64::NEG_INFINITY, f64::max);
        report.push_str(&format!("minimizer_bounds_lower = {}\n", fmt_f64(lo)));
        report.push_str(&format!("minimizer_bounds_upper = {}\n", fmt_f64(hi)));
    }
    fs::write(opts.out.join("run_report.toml"), report)?;

    if opts.svg {
        let pi: Vec<f64> = grid.iter().map(|&t| sol.pi_star(t)).collect();
        let om: Vec<f64> = grid.iter().map(|&t| sol.omega(t)).collect();
        let zz: Vec<f64> = grid.iter().map(|&t| sol.z(t)).collect();
        write_line_chart(
            &opts.out.join("solution.svg"),
            "cross-hedge solution",
            &grid,
            &[
                ("pi_star".to_string(), pi),
                ("omega".to_string(), om),
                ("Z".to_string(), zz),
            ],
        )?;
    }
    println!(
        "solved on {} nodes: y0 = {}, sup|pi*| = {}",
        grid.len(),
        fmt_f64(y0),
        fmt_f64(sup_pi)
    );
    Ok(ExitCode::SUCCESS)
}

pub fn solve_exp(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let m = cfg.market_model()?;
    let fwd = cfg.forward(&m)?;
    let claim = cfg.exp_claim()?;
    let gen = cfg.linear_generator()?;
    let sol = solve_exp_core(
        &fwd,
        m.measure(),
        &gen,
        &claim,
        m.horizon(),
        cfg.grid_nodes(),
    )?;

    opts.ensure_out()?;
    let grid = sol.grid().to_vec();
    write_csv(
        &opts.out.join("solution_exp.csv"),
        &["t", "Gamma1", "Gamma2", "omega", "xi"],
        grid.iter().map(|&t| {
            let g = sol.gamma(t);
            vec![t, g[0], g[1], sol.omega(t), sol.xi(t)]
        }),
    )?;
    if opts.svg {
        let om: Vec<f64> = grid.iter().map(|&t| sol.omega(t)).collect();
        let xi: Vec<f64> = grid.iter().map(|&t| sol.xi(t)).collect();
        write_line_chart(
            &opts.out.join("solution_exp.svg"),
            "linear-generator solution",
            &grid,
            &[("omega".to_string(), om), ("xi".to_string(), xi)],
        )?;
    }
    let y0 = sol.y(0.0, fwd.r0());
    println!("solved on {} nodes: y0 = {}", grid.len(), fmt_f64(y0));
    Ok(ExitCode::SUCCESS)
}

pub fn simulate(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let m = cfg.market_model()?;
    let fwd = cfg.forward(&m)?;
    let pc = opts.path_config(cfg, m.horizon())?;
    let grid = uniform_grid(pc.horizon, pc.n_steps + 1)?;
    let sampler = ForwardSampler::new(&fwd, &m, &grid)?;

    // summary at up to 201 evenly spaced nodes
    let n_summary = 201.min(pc.n_steps + 1);
    let idx: Vec<usize> = (0..n_summary)
        .map(|k| (k as f64 * pc.n_steps as f64 / (n_summary - 1) as f64).round() as usize)
        .collect();

    use rayon::prelude::*;
    struct PerPath {
        n: Vec<f64>,
        xi: Vec<f64>,
        jumps: f64,
    }
    let per_path: Vec<PerPath> = (0..pc.n_paths)
        .into_par_iter()
        .map(|i| {
            let p = sampler.sample_path(pc.seed, i as u64);
            PerPath {
                n: idx.iter().map(|&j| p.n_vals[j]).collect(),
                xi: idx.iter().map(|&j| p.xi_vals[j]).collect(),
                jumps: p.jump_events.len() as f64,
            }
        })
        .collect();

    let np = pc.n_paths as f64;
    let stats = |get: &dyn Fn(&PerPath, usize) -> f64, c: usize| {
        let samples: Vec<f64> = per_path.iter().map(|p| get(p, c)).collect();
        let mean = pairwise_sum(&samples) / np;
        let sq: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let se = if samples.len() > 1 {
            (pairwise_sum(&sq) / (np - 1.0) / np).sqrt()
        } else {
            0.0
        };
        (mean, se)
    };

    opts.ensure_out()?;
    write_csv(
        &opts.out.join("paths_summary.csv"),
        &["t", "mean_n", "se_n", "mean_xi", "se_xi"],
        (0..idx.len()).map(|c| {
            let (mn, sn) = stats(&|p, c| p.n[c], c);
            let (mx, sx) = stats(&|p, c| p.xi[c], c);
            vec![grid[idx[c]], mn, sn, mx, sx]
        }),
    )?;
    let jumps: Vec<f64> = per_path.iter().map(|p| p.jumps).collect();
    let mean_jumps = pairwise_sum(&jumps) / np;
    println!(
        "simulated {} paths x {} steps, mean jump count {}",
        pc.n_paths,
        pc.n_steps,
        fmt_f64(mean_jumps)
    );
    if opts.svg {
        let ts: Vec<f64> = idx.iter().map(|&j| grid[j]).collect();
        let mn: Vec<f64> = (0..idx.len()).map(|c| stats(&|p, c| p.n[c], c).0).collect();
        let mx: Vec<f64> = (0..idx.len())
            .map(|c| stats(&|p, c| p.xi[c], c).0)
            .collect();
        write_line_chart(
            &opts.out.join("paths_summary.svg"),
            "forward path means",
            &ts,
            &[("mean_n".to_string(), mn), ("mean_xi".to_string(), mx)],
        )?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(cfg: &RunConfig, opts: &Options) -> Result<ExitCode, CliError> {
    let m = cfg.market_model()?;
    let gate = check_wellposed(&m);
    if !gate.passes {
        return Err(CliError {
            code: 2,
            message: format!("optimization not well-posed: {}", gate.reason),
        });
    }
    let fwd = cfg.forward(&m)?;
    let claim = cfg.affine_claim()?;
    let c_set = cfg.constraint()?;
    let sol = solve_affine_core(&m, &fwd, &claim, &c_set, cfg.grid_nodes())?;
    let pc = opts.path_config(cfg, m.horizon())?;
    let x0 = cfg.mc()?.x0.unwrap_or(0.0);
    let perturbations = cfg.perturbations();
    let diag = optimality_report(
        &m,
        &fwd,
        &claim,
        &sol,
        &perturbations,
        &pc,
        x0,
        cfg.checkpoints(),
    )?;

    opts.ensure_out()?;
    write_csv(
        &opts.out.join("utility_series.csv"),
        &["t", "mean_utility", "se"],
        diag.checkpoint_times
            .iter()
            .zip(&diag.optimal.series)
            .map(|(&t, s)| vec![t, s.mean, s.se]),
    )?;
    write_csv(
        &opts.out.join("perturbations.csv"),
        &[
            "offset",
            "terminal_mean",
            "terminal_se",
            "diff_mean",
            "diff_se",
            "pass",
        ],
        diag.perturbed.iter().map(|p| {
            let pass = (p.diff_mean <= 3.0 * p.diff_se.max(f64::MIN_POSITIVE)) as u8;
            vec![
                p.offset,
                p.terminal.mean,
                p.terminal.se,
                p.diff_mean,
                p.diff_se,
                pass as f64,
            ]
        }),
    )?;
    write_csv(
        &opts.out.join("residual.csv"),
        &["residual_rms", "step", "bound", "pass"],
        std::iter::once(vec![
            diag.residual_rms,
            diag.step,
            diag.residual_bound(),
            diag.residual_ok() as u8 as f64,
        ]),
    )?;
    if opts.svg {
        let means: Vec<f64> = diag.optimal.series.iter().map(|s| s.mean).collect();
        let ses: Vec<f64> = diag.optimal.series.iter().map(|s| s.se).collect();
        write_line_chart(
            &opts.out.join("utility_series.svg"),
            "mean utility of the hedged position",
            &diag.checkpoint_times,
            &[
                ("mean_utility".to_string(), means),
                ("se".to_string(), ses),
            ],
        )?;
    }

    let martingale = diag.martingale_within(3.0);
    let supermartingale = diag.supermartingale_within(3.0);
    let residual = diag.residual_ok();
    println!(
        "martingale (time-constant mean utility):   {}",
        if martingale { "PASS" } else { "FAIL" }
    );
    println!(
        "supermartingale (no perturbation better):  {}",
        if supermartingale { "PASS" } else { "FAIL" }
    );
    println!(
        "value reconstruction residual {} <= {}:    {}",
        fmt_f64(diag.residual_rms),
        fmt_f64(diag.residual_bound()),
        if residual { "PASS" } else { "FAIL" }
    );
    if martingale && supermartingale && residual {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::numerical(
            "verification checks failed (see CSV reports)".to_string(),
        ))
    }
}
