//! Pointwise minimization of the utility generator.
//!
//! For a jump control `u` and strategy `pi` the jump part of the generator is
//!
//! ```text
//! lambda(pi) = ∫ g_a(u(x) - pi * psi(x)) dν - pi * phi ,
//! ```
//!
//! a smooth convex function with analytic derivatives
//!
//! ```text
//! lambda'(pi)  = ∫ psi (1 - exp(-a (pi psi - u))) dν - phi
//! lambda''(pi) = ∫ a psi^2 exp(-a (pi psi - u)) dν >= 0 .
//! ```
//!
//! [`minimize`] finds the constrained minimizer with a safeguarded Newton
//! iteration on `lambda'`, bracketed either by the explicit minimizer bounds
//! (mixed-sign jump support) or by geometric bracket growth (single-signed,
//! well-posed). The full generator value adds the quadratic Brownian term
//! `a/2 z^2`.

use crate::error::{EngineError, Result};
use crate::levy::{entropic_norm, g_alpha, MarkFunction};
use crate::market::{check_wellposed, classify_support, ConstraintSet, MarketModel};

fn check_u(m: &MarketModel, u: &MarkFunction) -> Result<()> {
    if u.len() != m.measure().len() {
        return Err(EngineError::IncompatibleFunction {
            expected: m.measure().len(),
            got: u.len(),
        });
    }
    Ok(())
}

/// Jump part of the generator at strategy `pi`.
pub fn lambda_value(m: &MarketModel, u: &MarkFunction, pi: f64) -> Result<f64> {
    check_u(m, u)?;
    Ok(lambda_value_unchecked(m, u, pi))
}

fn lambda_value_unchecked(m: &MarketModel, u: &MarkFunction, pi: f64) -> f64 {
    let alpha = m.alpha();
    let psi = m.psi().values();
    let uv = u.values();
    m.measure()
        .sum_atoms(|i, _| g_alpha(alpha, uv[i] - pi * psi[i]))
        - pi * m.phi()
}

/// First derivative of `lambda`.
pub fn lambda_d1(m: &MarketModel, u: &MarkFunction, pi: f64) -> Result<f64> {
    check_u(m, u)?;
    Ok(lambda_d1_unchecked(m, u, pi))
}

fn lambda_d1_unchecked(m: &MarketModel, u: &MarkFunction, pi: f64) -> f64 {
    let alpha = m.alpha();
    let psi = m.psi().values();
    let uv = u.values();
    m.measure()
        .sum_atoms(|i, _| psi[i] * (1.0 - (-alpha * (pi * psi[i] - uv[i])).exp()))
        - m.phi()
}

/// Second derivative of `lambda`; nonnegative (convexity).
pub fn lambda_d2(m: &MarketModel, u: &MarkFunction, pi: f64) -> Result<f64> {
    check_u(m, u)?;
    Ok(lambda_d2_unchecked(m, u, pi))
}

fn lambda_d2_unchecked(m: &MarketModel, u: &MarkFunction, pi: f64) -> f64 {
    let alpha = m.alpha();
    let psi = m.psi().values();
    let uv = u.values();
    m.measure()
        .sum_atoms(|i, _| alpha * psi[i] * psi[i] * (-alpha * (pi * psi[i] - uv[i])).exp())
}

/// Explicit a-priori bounds on the minimizer, available for mixed-sign jump
/// support.
#[derive(Debug, Clone, Copy)]
pub struct MinimizerBounds {
    pub lower: f64,
    pub upper: f64,
    /// Threshold into the positive tail: `ν(psi > pos_threshold) > 0`.
    pub pos_threshold: f64,
    /// Threshold into the negative tail: `ν(psi < -neg_threshold) > 0`.
    pub neg_threshold: f64,
}

/// Compute the explicit minimizer bounds
///
/// ```text
/// -3‖u‖∞/C - 2|phi|/(a ν(psi>C) C²) - √2 √|u|_a / (√(a ν(psi>C)) C)
///     <= pi* <=
///  3‖u‖∞/c + 2|phi|/(a ν(psi<-c) c²) + √2 √|u|_a / (√(a ν(psi<-c)) c)
/// ```
///
/// with `C` half the largest positive psi value and `c` half the magnitude
/// of the most negative one, so both tails keep strictly positive mass.
/// Errors with [`EngineError::BoundsUnavailable`] on single-signed support.
pub fn minimizer_bounds(m: &MarketModel, u: &MarkFunction) -> Result<MinimizerBounds> {
    check_u(m, u)?;
    let support = classify_support(m);
    if !support.is_mixed() {
        return Err(EngineError::BoundsUnavailable(
            "jump coefficient must charge both signs".to_string(),
        ));
    }
    let psi = m.psi();
    let mut max_pos = 0.0_f64;
    let mut max_neg = 0.0_f64;
    for (a, &p) in m.measure().atoms().iter().zip(psi.values()) {
        if a.mass > 0.0 {
            if p > 0.0 {
                max_pos = max_pos.max(p);
            } else if p < 0.0 {
                max_neg = max_neg.max(-p);
            }
        }
    }
    let pos_threshold = max_pos / 2.0;
    let neg_threshold = max_neg / 2.0;
    let mass_pos = m.measure().mass_where(psi, |p| p > pos_threshold)?;
    let mass_neg = m.measure().mass_where(psi, |p| p < -neg_threshold)?;
    debug_assert!(mass_pos > 0.0 && mass_neg > 0.0);

    let alpha = m.alpha();
    let phi_abs = m.phi().abs();
    let sup_u = m.measure().ess_sup(u)?;
    let ent = entropic_norm(m.measure(), alpha, u)?;

    let tail = |threshold: f64, mass: f64| {
        3.0 * sup_u / threshold
            + 2.0 * phi_abs / (alpha * mass * threshold * threshold)
            + (2.0 * ent).sqrt() / ((alpha * mass).sqrt() * threshold)
    };
    Ok(MinimizerBounds {
        lower: -tail(pos_threshold, mass_pos),
        upper: tail(neg_threshold, mass_neg),
        pos_threshold,
        neg_threshold,
    })
}

/// Result of the pointwise minimization.
#[derive(Debug, Clone, Copy)]
pub struct Minimum {
    pub pi_star: f64,
    pub lambda_min: f64,
    /// `lambda'` at the reported minimizer (diagnostic).
    pub d1_residual: f64,
    pub iterations: usize,
}

const MAX_ITERS: usize = 200;

/// Derivative tolerance: `|lambda'| <= 1e-12 (1 + |phi|)`.
fn d1_tolerance(m: &MarketModel) -> f64 {
    1e-12 * (1.0 + m.phi().abs())
}

/// Minimize `lambda` over the constraint set.
///
/// Requires the model to pass [`check_wellposed`]. The unconstrained root of
/// `lambda'` is found by safeguarded Newton with bisection fallback inside a
/// bracket from [`minimizer_bounds`] (mixed support) or geometric expansion
/// from zero (single-signed support); interval constraints clamp the root,
/// which is exact by convexity. Termination: `|lambda'| <= 1e-12 (1+|phi|)`
/// or bracket width `<= 1e-14` (or float resolution).
pub fn minimize(m: &MarketModel, u: &MarkFunction, c_set: &ConstraintSet) -> Result<Minimum> {
    minimize_from(m, u, c_set, None)
}

/// [`minimize`] with an explicit Newton starting point (used to confirm
/// uniqueness: independent starts must agree on the root).
pub fn minimize_from(
    m: &MarketModel,
    u: &MarkFunction,
    c_set: &ConstraintSet,
    start: Option<f64>,
) -> Result<Minimum> {
    check_u(m, u)?;
    let report = check_wellposed(m);
    if !report.passes {
        return Err(EngineError::NotWellPosed(report.reason));
    }
    let support = report.support;

    // without jump risk the well-posed case is phi = 0 and lambda is constant
    // in everything but the penalty, minimized at 0
    if support.is_degenerate() {
        let pi = c_set.project(0.0);
        return Ok(Minimum {
            pi_star: pi,
            lambda_min: lambda_value_unchecked(m, u, pi),
            d1_residual: 0.0,
            iterations: 0,
        });
    }

    let (mut lo, mut hi) = initial_bracket(m, u, support.is_mixed())?;
    if lo == hi {
        let pi = c_set.project(lo);
        return Ok(Minimum {
            pi_star: pi,
            lambda_min: lambda_value_unchecked(m, u, pi),
            d1_residual: lambda_d1_unchecked(m, u, pi),
            iterations: 0,
        });
    }

    // ensure the bracket straddles the root; lambda' is increasing
    let mut expand = 1.0_f64.max((hi - lo).abs());
    let mut guard = 0;
    while lambda_d1_unchecked(m, u, lo) > 0.0 {
        lo -= expand;
        expand *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(EngineError::NonConvergence(
                "could not bracket the root of lambda' from below".to_string(),
            ));
        }
    }
    let mut expand = 1.0_f64.max((hi - lo).abs());
    while lambda_d1_unchecked(m, u, hi) < 0.0 {
        hi += expand;
        expand *= 2.0;
        guard += 1;
        if guard > 400 {
            return Err(EngineError::NonConvergence(
                "could not bracket the root of lambda' from above".to_string(),
            ));
        }
    }

    let tol = d1_tolerance(m);
    let mut pi = match start {
        Some(s) => s.clamp(lo, hi),
        None => 0.5 * (lo + hi),
    };
    let mut d1 = lambda_d1_unchecked(m, u, pi);
    let mut iterations = 0;
    while d1.abs() > tol && (hi - lo) > 1e-14 && iterations < MAX_ITERS {
        if d1 > 0.0 {
            hi = pi;
        } else {
            lo = pi;
        }
        let d2 = lambda_d2_unchecked(m, u, pi);
        let newton = pi - d1 / d2;
        pi = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        // adjacent floats: the bracket cannot shrink further
        if pi <= lo || pi >= hi {
            pi = 0.5 * (lo + hi);
            if pi <= lo || pi >= hi {
                break;
            }
        }
        d1 = lambda_d1_unchecked(m, u, pi);
        iterations += 1;
    }

    // polish: a couple of plain Newton steps sharpen the root to float
    // resolution so that independent starts coincide
    for _ in 0..2 {
        let d2 = lambda_d2_unchecked(m, u, pi);
        if !(d2 > 0.0) {
            break;
        }
        let next = pi - lambda_d1_unchecked(m, u, pi) / d2;
        if next.is_finite() && lambda_d1_unchecked(m, u, next).abs() <= d1.abs() {
            pi = next;
            d1 = lambda_d1_unchecked(m, u, pi);
        } else {
            break;
        }
    }

    let pi_star = c_set.project(pi);
    Ok(Minimum {
        pi_star,
        lambda_min: lambda_value_unchecked(m, u, pi_star),
        d1_residual: lambda_d1_unchecked(m, u, pi_star),
        iterations,
    })
}

/// Initial bracket for the root of `lambda'`.
fn initial_bracket(m: &MarketModel, u: &MarkFunction, mixed: bool) -> Result<(f64, f64)> {
    if mixed {
        let b = minimizer_bounds(m, u)?;
        Ok((b.lower, b.upper))
    } else {
        // single-signed, well-posed: lambda' changes sign somewhere; grow a
        // symmetric bracket geometrically
        let scale = {
            let sup_psi = m.measure().ess_sup(m.psi())?;
            if sup_psi > 0.0 {
                1.0 / (m.alpha() * sup_psi)
            } else {
                1.0
            }
        };
        let mut r = scale;
        for _ in 0..200 {
            if lambda_d1_unchecked(m, u, -r) <= 0.0 && lambda_d1_unchecked(m, u, r) >= 0.0 {
                return Ok((-r, r));
            }
            r *= 2.0;
        }
        Err(EngineError::NonConvergence(
            "geometric bracket expansion failed".to_string(),
        ))
    }
}

/// Full generator value `f(t, z, u) = min_pi lambda(pi) + a/2 z^2`.
pub fn generator_value(
    m: &MarketModel,
    z: f64,
    u: &MarkFunction,
    c_set: &ConstraintSet,
) -> Result<f64> {
    let min = minimize(m, u, c_set)?;
    Ok(min.lambda_min + 0.5 * m.alpha() * z * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{JumpAtom, LevyMeasure};
    use approx::assert_relative_eq;

    fn model(pairs: &[(f64, f64)], psi: Vec<f64>, phi: f64, alpha: f64) -> MarketModel {
        let measure = LevyMeasure::new(
            pairs
                .iter()
                .map(|&(x, mass)| JumpAtom { x, mass })
                .collect(),
        )
        .unwrap();
        MarketModel::new(measure, MarkFunction::from_values(psi), phi, alpha, 1.0).unwrap()
    }

    /// The standard mixed-sign test model: psi = (0.1, -0.1) with masses
    /// (2, 3). Atoms sort ascending, so index 0 is the negative mark.
    fn mixed_model(phi: f64, alpha: f64) -> MarketModel {
        model(&[(0.1, 2.0), (-0.1, 3.0)], vec![-0.1, 0.1], phi, alpha)
    }

    #[test]
    fn lambda_at_zero_is_entropic_norm() {
        let m = mixed_model(0.05, 2.0);
        let u = MarkFunction::from_values(vec![0.3, -0.2]);
        let want = entropic_norm(m.measure(), m.alpha(), &u).unwrap();
        assert_relative_eq!(lambda_value(&m, &u, 0.0).unwrap(), want, epsilon = 1e-14);
    }

    #[test]
    fn lambda_zero_everything() {
        let m = mixed_model(0.05, 2.0);
        let u = MarkFunction::zero(2);
        assert_eq!(lambda_value(&m, &u, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn lambda_oracle_sum() {
        // independent summation oracle at pi = 1
        let m = mixed_model(0.05, 2.0);
        let u = MarkFunction::zero(2);
        let mut oracle = 0.0;
        for (a, &p) in m.measure().atoms().iter().zip(m.psi().values()) {
            let y = 0.0 - 1.0 * p;
            oracle += ((2.0 * y as f64).exp() - 2.0 * y - 1.0) / 2.0 * a.mass;
        }
        oracle -= 1.0 * 0.05;
        assert_relative_eq!(lambda_value(&m, &u, 1.0).unwrap(), oracle, epsilon = 1e-13);
    }

    #[test]
    fn d1_at_origin_zero_u() {
        let m = mixed_model(0.37, 1.5);
        let u = MarkFunction::zero(2);
        assert_relative_eq!(lambda_d1(&m, &u, 0.0).unwrap(), -0.37, epsilon = 1e-14);
    }

    #[test]
    fn d1_vanishes_at_closed_form_root() {
        // single atom psi = 0.1, mass 2, alpha = 1, phi = 0.1:
        // root of lambda' is -ln(1 - phi/(psi*mass))/(alpha*psi) = ln(2)/0.1
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        let u = MarkFunction::zero(1);
        let root = std::f64::consts::LN_2 / 0.1;
        assert!(lambda_d1(&m, &u, root).unwrap().abs() < 1e-14);
        assert!(lambda_d1(&m, &u, 6.93147).unwrap().abs() < 1e-5);
    }

    #[test]
    fn d2_hand_value_and_degenerate() {
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        let u = MarkFunction::zero(1);
        assert_relative_eq!(lambda_d2(&m, &u, 0.0).unwrap(), 0.02, epsilon = 1e-15);

        let m0 = model(&[(0.1, 2.0)], vec![0.0], 0.0, 1.0);
        assert_eq!(lambda_d2(&m0, &MarkFunction::zero(1), 3.0).unwrap(), 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = mixed_model(0.05, 2.0);
        let u = MarkFunction::from_values(vec![0.2, -0.1]);
        for &pi in &[-2.0, -0.3, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd1 = (lambda_value(&m, &u, pi + h).unwrap()
                - lambda_value(&m, &u, pi - h).unwrap())
                / (2.0 * h);
            let an1 = lambda_d1(&m, &u, pi).unwrap();
            assert_relative_eq!(an1, fd1, max_relative = 1e-6, epsilon = 1e-9);

            // the second difference needs a larger step to stay above roundoff
            let h = 1e-4;
            let fd2 = (lambda_value(&m, &u, pi + h).unwrap()
                - 2.0 * lambda_value(&m, &u, pi).unwrap()
                + lambda_value(&m, &u, pi - h).unwrap())
                / (h * h);
            let an2 = lambda_d2(&m, &u, pi).unwrap();
            assert_relative_eq!(an2, fd2, max_relative = 1e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn bounds_hand_value() {
        // u = 0, psi = (0.1,-0.1), masses (2,3), phi = 0.05, alpha = 2:
        // thresholds 0.05, tail masses  v(psi>0.05)=2, v(psi<-0.05)=3:
        // upper = 2*0.05/(2*3*0.0025) = 6.666..., lower = -2*0.05/(2*2*0.0025) = -10
        let m = mixed_model(0.05, 2.0);
        let b = minimizer_bounds(&m, &MarkFunction::zero(2)).unwrap();
        assert_relative_eq!(b.pos_threshold, 0.05, epsilon = 1e-15);
        assert_relative_eq!(b.neg_threshold, 0.05, epsilon = 1e-15);
        assert_relative_eq!(b.upper, 0.1 / (2.0 * 3.0 * 0.0025), epsilon = 1e-12);
        assert_relative_eq!(b.lower, -10.0, epsilon = 1e-12);
    }

    #[test]
    fn bounds_collapse_for_zero_data() {
        let m = mixed_model(0.0, 2.0);
        let b = minimizer_bounds(&m, &MarkFunction::zero(2)).unwrap();
        assert_eq!(b.lower, 0.0);
        assert_eq!(b.upper, 0.0);
        let min = minimize(&m, &MarkFunction::zero(2), &ConstraintSet::AllReals).unwrap();
        assert_eq!(min.pi_star, 0.0);
        assert_eq!(min.lambda_min, 0.0);
    }

    #[test]
    fn bounds_unavailable_single_signed() {
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        assert!(matches!(
            minimizer_bounds(&m, &MarkFunction::zero(1)),
            Err(EngineError::BoundsUnavailable(_))
        ));
    }

    #[test]
    fn minimize_single_atom_closed_form() {
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        let u = MarkFunction::zero(1);
        let min = minimize(&m, &u, &ConstraintSet::AllReals).unwrap();
        let expected = -(1.0_f64 - 0.1 / (0.1 * 2.0)).ln() / (1.0 * 0.1);
        assert_relative_eq!(min.pi_star, expected, epsilon = 1e-10);
        assert_relative_eq!(min.pi_star, 6.931472, epsilon = 1e-6);
    }

    #[test]
    fn minimize_mixed_example_against_bisection_oracle() {
        // independent bisection on a hand-coded derivative:
        // 0.2(1-e^{-0.2 pi}) - 0.3(1-e^{0.2 pi}) - 0.05 = 0
        let d1 = |pi: f64| {
            0.2 * (1.0 - (-0.2 * pi).exp()) - 0.3 * (1.0 - (0.2 * pi).exp()) - 0.05
        };
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if d1(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert_relative_eq!(oracle, 0.494, epsilon = 5e-4);

        let m = mixed_model(0.05, 2.0);
        let min = minimize(&m, &MarkFunction::zero(2), &ConstraintSet::AllReals).unwrap();
        assert_relative_eq!(min.pi_star, oracle, epsilon = 1e-10);
    }

    #[test]
    fn minimize_rejects_ill_posed() {
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.3, 1.0);
        let r = minimize(&m, &MarkFunction::zero(1), &ConstraintSet::AllReals);
        assert!(matches!(r, Err(EngineError::NotWellPosed(_))));
        // and lambda decreases along growing pi (no minimum out there)
        let u = MarkFunction::zero(1);
        let l10 = lambda_value(&m, &u, 10.0).unwrap();
        let l100 = lambda_value(&m, &u, 100.0).unwrap();
        let l1000 = lambda_value(&m, &u, 1000.0).unwrap();
        assert!(l10 > l100 && l100 > l1000);
    }

    #[test]
    fn minimize_clamps_to_interval() {
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        let u = MarkFunction::zero(1);
        let c = ConstraintSet::interval(-1.0, 2.0).unwrap();
        let min = minimize(&m, &u, &c).unwrap();
        assert_eq!(min.pi_star, 2.0); // unconstrained root ~6.93 clamped
        assert_relative_eq!(
            min.lambda_min,
            lambda_value(&m, &u, 2.0).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn minimize_two_starts_agree() {
        let m = mixed_model(0.05, 2.0);
        let u = MarkFunction::from_values(vec![0.4, -0.3]);
        let a = minimize_from(&m, &u, &ConstraintSet::AllReals, Some(-9.0)).unwrap();
        let b = minimize_from(&m, &u, &ConstraintSet::AllReals, Some(6.0)).unwrap();
        assert!((a.pi_star - b.pi_star).abs() < 1e-10);
    }

    #[test]
    fn minimum_no_higher_than_origin() {
        let m = mixed_model(-0.12, 1.3);
        let u = MarkFunction::from_values(vec![0.25, 0.6]);
        let min = minimize(&m, &u, &ConstraintSet::AllReals).unwrap();
        let at_zero = lambda_value(&m, &u, 0.0).unwrap();
        assert!(min.lambda_min <= at_zero + 1e-14);
    }

    #[test]
    fn generator_value_quadratic_term() {
        let m = mixed_model(0.0, 2.0);
        let u = MarkFunction::zero(2);
        let c = ConstraintSet::AllReals;
        assert_eq!(generator_value(&m, 0.0, &u, &c).unwrap(), 0.0);
        assert_relative_eq!(generator_value(&m, 1.0, &u, &c).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn generator_value_single_atom_example() {
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        let u = MarkFunction::zero(1);
        let min = minimize(&m, &u, &ConstraintSet::AllReals).unwrap();
        let f = generator_value(&m, 0.0, &u, &ConstraintSet::AllReals).unwrap();
        assert_relative_eq!(f, min.lambda_min, epsilon = 1e-14);
    }
}
