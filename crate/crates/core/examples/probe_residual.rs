use jumphedge::affine::{claim_from_log, solve_affine, AffineForward};
use jumphedge::levy::{JumpAtom, LevyMeasure, MarkFunction};
use jumphedge::market::{ConstraintSet, MarketModel};
use jumphedge::mc::{bsde_residual_streaming, PathConfig};

fn main() {
    let measure = LevyMeasure::new(vec![
        JumpAtom { x: 0.1, mass: 2.0 },
        JumpAtom { x: -0.1, mass: 3.0 },
    ])
    .unwrap();
    let psi = MarkFunction::identity(&measure);
    let m = MarketModel::new(measure, psi, 0.05, 2.0, 1.0).unwrap();
    let fwd =
        AffineForward::from_market(&m, 0.0, 1.0, 0.2, MarkFunction::zero(2), [0.0, 0.1]).unwrap();
    let claim = claim_from_log(1.0, 0.0);
    let sol = solve_affine(&m, &fwd, &claim, &ConstraintSet::AllReals, 2001).unwrap();
    let y0 = sol.y(0.0, fwd.r0());
    println!("y0 = {y0}");
    let mut prev = None;
    for n_steps in [1000usize, 2000, 4000, 8000] {
        let t0 = std::time::Instant::now();
        let rms = bsde_residual_streaming(
            &sol,
            &m,
            &fwd,
            &PathConfig {
                n_paths: 10_000,
                n_steps,
                seed: 4242,
                horizon: 1.0,
            },
        )
        .unwrap();
        let h: f64 = 1.0 / n_steps as f64;
        let bound = 5.0 * h.sqrt() * (1.0 + y0.abs());
        let ratio = prev.map(|p: f64| p / rms).unwrap_or(f64::NAN);
        println!(
            "steps {n_steps:5}  rms {rms:.6e}  bound {bound:.3e}  ratio {ratio:.3}  ({:.1?})",
            t0.elapsed()
        );
        prev = Some(rms);
    }
}
