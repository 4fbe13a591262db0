//! Market parameterizations and well-posedness of the hedging problem.
//!
//! The traded asset follows a pure-jump stochastic-exponential dynamics with
//! drift `phi` and jump coefficient `psi(x) > -1`; the equivalent log-price
//! parameterization uses `gamma = log(1 + psi)` and
//! `beta = phi - ∫ (e^gamma - 1 - gamma) dν`. The pointwise strategy
//! minimization is coercive exactly when the drift does not dominate the
//! jump intensity on single-signed jump support; [`check_wellposed`] encodes
//! those inequalities.

use crate::error::{EngineError, Result};
use crate::levy::{LevyMeasure, MarkFunction};

/// Market model: jump measure, jump coefficient, drift, risk aversion and
/// horizon. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MarketModel {
    measure: LevyMeasure,
    psi: MarkFunction,
    phi: f64,
    alpha: f64,
    horizon: f64,
}

impl MarketModel {
    pub fn new(
        measure: LevyMeasure,
        psi: MarkFunction,
        phi: f64,
        alpha: f64,
        horizon: f64,
    ) -> Result<Self> {
        if psi.len() != measure.len() {
            return Err(EngineError::IncompatibleFunction {
                expected: measure.len(),
                got: psi.len(),
            });
        }
        for (a, &p) in measure.atoms().iter().zip(psi.values()) {
            if a.mass > 0.0 && p <= -1.0 {
                return Err(EngineError::InvalidModel(format!(
                    "psi({}) = {p} <= -1 at an atom of positive mass; price would not stay positive",
                    a.x
                )));
            }
            if !p.is_finite() {
                return Err(EngineError::InvalidModel(format!(
                    "psi({}) = {p} is not finite",
                    a.x
                )));
            }
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(EngineError::InvalidModel(format!(
                "risk aversion must be positive and finite, got {alpha}"
            )));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(EngineError::InvalidModel(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if !phi.is_finite() {
            return Err(EngineError::InvalidModel(format!(
                "drift must be finite, got {phi}"
            )));
        }
        Ok(Self {
            measure,
            psi,
            phi,
            alpha,
            horizon,
        })
    }

    pub fn measure(&self) -> &LevyMeasure {
        &self.measure
    }

    pub fn psi(&self) -> &MarkFunction {
        &self.psi
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `∫ psi dν`, the jump contribution to the expected relative return.
    pub fn psi_mean(&self) -> f64 {
        self.measure
            .integrate(&self.psi)
            .expect("psi validated at construction")
    }
}

/// Log-price parameterization `(beta, gamma)` with `gamma = log(1 + psi)`.
#[derive(Debug, Clone)]
pub struct LogPriceParams {
    pub beta: f64,
    pub gamma: MarkFunction,
}

/// Convert a market model to its log-price parameterization.
///
/// `gamma = log(1 + psi)` atomwise and
/// `beta = phi - ∫ (e^gamma - 1 - gamma) dν = phi - ∫ (psi - log(1+psi)) dν`.
pub fn to_log_params(m: &MarketModel) -> Result<LogPriceParams> {
    // construction only guards positive-mass atoms; gamma must be finite on all
    for (a, &p) in m.measure.atoms().iter().zip(m.psi.values()) {
        if p <= -1.0 {
            return Err(EngineError::InvalidModel(format!(
                "psi({}) = {p} <= -1; log(1 + psi) undefined",
                a.x
            )));
        }
    }
    let gamma = m.psi.map(f64::ln_1p);
    let correction = m
        .measure
        .sum_atoms(|i, _| m.psi.values()[i] - gamma.values()[i]);
    Ok(LogPriceParams {
        beta: m.phi - correction,
        gamma,
    })
}

/// Rebuild a market model from log-price parameters:
/// `psi = e^gamma - 1`, `phi = beta + ∫ (e^gamma - 1 - gamma) dν`.
pub fn from_log_params(
    lp: &LogPriceParams,
    measure: LevyMeasure,
    alpha: f64,
    horizon: f64,
) -> Result<MarketModel> {
    if lp.gamma.len() != measure.len() {
        return Err(EngineError::IncompatibleFunction {
            expected: measure.len(),
            got: lp.gamma.len(),
        });
    }
    let psi = lp.gamma.map(f64::exp_m1);
    let correction = measure.sum_atoms(|i, _| psi.values()[i] - lp.gamma.values()[i]);
    MarketModel::new(measure, psi, lp.beta + correction, alpha, horizon)
}

/// Which sides of zero the jump coefficient charges (zero-mass atoms ignored).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportClass {
    pub has_positive: bool,
    pub has_negative: bool,
}

impl SupportClass {
    pub fn is_mixed(&self) -> bool {
        self.has_positive && self.has_negative
    }

    pub fn is_degenerate(&self) -> bool {
        !self.has_positive && !self.has_negative
    }
}

/// Classify the sign support of `psi` over positive-mass atoms.
pub fn classify_support(m: &MarketModel) -> SupportClass {
    let mut has_positive = false;
    let mut has_negative = false;
    for (a, &p) in m.measure.atoms().iter().zip(m.psi.values()) {
        if a.mass > 0.0 {
            if p > 0.0 {
                has_positive = true;
            } else if p < 0.0 {
                has_negative = true;
            }
        }
    }
    SupportClass {
        has_positive,
        has_negative,
    }
}

/// Outcome of the well-posedness check.
#[derive(Debug, Clone)]
pub struct WellPosedReport {
    pub passes: bool,
    pub reason: String,
    pub support: SupportClass,
    /// Drift `phi`.
    pub drift: f64,
    /// Jump mean `∫ psi dν`.
    pub jump_mean: f64,
}

/// Check that the pointwise strategy minimization admits a minimum.
///
/// Mixed-sign jump support passes unconditionally. Single-signed support
/// passes iff the drift is dominated by the jump mean in the right
/// direction (`phi < ∫ psi dν` for positive jumps, reversed for negative).
/// Without jump risk (`psi = 0` on all positive-mass atoms) the generator is
/// linear in the strategy, so only `phi = 0` is admissible.
pub fn check_wellposed(m: &MarketModel) -> WellPosedReport {
    let support = classify_support(m);
    let jump_mean = m.psi_mean();
    let phi = m.phi;
    let (passes, reason) = if support.is_mixed() {
        (
            true,
            "jumps on both sides of zero: minimization coercive for any drift".to_string(),
        )
    } else if support.has_positive {
        if phi < jump_mean {
            (
                true,
                format!("positive jumps only and phi = {phi} < {jump_mean} = jump mean"),
            )
        } else {
            (
                false,
                format!(
                    "positive jumps only and phi = {phi} >= {jump_mean} = jump mean: \
                     generator unbounded below"
                ),
            )
        }
    } else if support.has_negative {
        if phi > jump_mean {
            (
                true,
                format!("negative jumps only and phi = {phi} > {jump_mean} = jump mean"),
            )
        } else {
            (
                false,
                format!(
                    "negative jumps only and phi = {phi} <= {jump_mean} = jump mean: \
                     generator unbounded below"
                ),
            )
        }
    } else if phi == 0.0 {
        (true, "no jump risk and zero drift".to_string())
    } else {
        (
            false,
            format!("no jump risk but drift {phi} != 0: generator linear and unbounded"),
        )
    };
    WellPosedReport {
        passes,
        reason,
        support,
        drift: phi,
        jump_mean,
    }
}

/// Closed constraint set for the strategy, required to contain zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSet {
    /// Unconstrained strategies.
    AllReals,
    /// Closed interval `[lower, upper]` with `lower <= 0 <= upper`;
    /// infinite endpoints are allowed.
    Interval { lower: f64, upper: f64 },
}

impl ConstraintSet {
    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() {
            return Err(EngineError::InvalidArgument(
                "constraint bounds must not be NaN".to_string(),
            ));
        }
        if !(lower <= 0.0 && 0.0 <= upper) {
            return Err(EngineError::InvalidArgument(format!(
                "constraint [{lower}, {upper}] must contain zero"
            )));
        }
        if lower == f64::NEG_INFINITY && upper == f64::INFINITY {
            return Ok(Self::AllReals);
        }
        Ok(Self::Interval { lower, upper })
    }

    /// Nearest point of the set; by convexity of the objective this is the
    /// constrained minimizer when applied to the unconstrained one.
    pub fn project(&self, x: f64) -> f64 {
        match *self {
            Self::AllReals => x,
            Self::Interval { lower, upper } => x.clamp(lower, upper),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Self::AllReals => true,
            Self::Interval { lower, upper } => lower <= x && x <= upper,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::JumpAtom;
    use approx::assert_relative_eq;

    fn measure(pairs: &[(f64, f64)]) -> LevyMeasure {
        LevyMeasure::new(
            pairs
                .iter()
                .map(|&(x, mass)| JumpAtom { x, mass })
                .collect(),
        )
        .unwrap()
    }

    fn model(pairs: &[(f64, f64)], psi: Vec<f64>, phi: f64, alpha: f64) -> MarketModel {
        MarketModel::new(
            measure(pairs),
            MarkFunction::from_values(psi),
            phi,
            alpha,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn log_params_zero_psi() {
        let m = model(&[(0.1, 2.0), (-0.1, 3.0)], vec![0.0, 0.0], 0.7, 1.0);
        let lp = to_log_params(&m).unwrap();
        assert!(lp.gamma.values().iter().all(|&g| g == 0.0));
        assert_eq!(lp.beta, 0.7);
    }

    #[test]
    fn log_params_single_atom_hand_value() {
        // psi = e - 1, mass 1, phi = 0: gamma = 1, beta = -(e - 2)
        let m = model(&[(0.5, 1.0)], vec![1.0_f64.exp() - 1.0], 0.0, 1.0);
        let lp = to_log_params(&m).unwrap();
        assert_relative_eq!(lp.gamma.values()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(lp.beta, -(1.0_f64.exp() - 2.0), epsilon = 1e-14);
    }

    #[test]
    fn from_log_params_hand_value() {
        // gamma = 0.1, mass 2, beta = 0: psi = e^0.1 - 1, phi = 2(e^0.1 - 1 - 0.1)
        let lp = LogPriceParams {
            beta: 0.0,
            gamma: MarkFunction::from_values(vec![0.1]),
        };
        let m = from_log_params(&lp, measure(&[(0.1, 2.0)]), 1.0, 1.0).unwrap();
        assert_relative_eq!(m.psi().values()[0], 0.1_f64.exp() - 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            m.phi(),
            2.0 * (0.1_f64.exp() - 1.0 - 0.1),
            epsilon = 1e-14
        );
        assert_relative_eq!(m.phi(), 0.010342, epsilon = 1e-6);
    }

    #[test]
    fn log_param_round_trip() {
        let m = model(
            &[(0.2, 1.5), (-0.3, 0.7), (0.05, 2.0)],
            vec![0.25, -0.2, 0.01],
            0.04,
            2.0,
        );
        let lp = to_log_params(&m).unwrap();
        let back = from_log_params(&lp, m.measure().clone(), m.alpha(), m.horizon()).unwrap();
        for (a, b) in m.psi().values().iter().zip(back.psi().values()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(m.phi(), back.phi(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_psi_below_minus_one() {
        let r = MarketModel::new(
            measure(&[(0.1, 2.0)]),
            MarkFunction::from_values(vec![-1.5]),
            0.0,
            1.0,
            1.0,
        );
        assert!(matches!(r, Err(EngineError::InvalidModel(_))));
    }

    #[test]
    fn support_classification() {
        // mark functions align with atoms sorted by mark ascending
        let m = model(&[(0.1, 2.0), (-0.1, 3.0)], vec![-0.1, 0.1], 0.0, 1.0);
        assert_eq!(
            classify_support(&m),
            SupportClass {
                has_positive: true,
                has_negative: true
            }
        );

        let m = model(&[(0.1, 2.0)], vec![0.1], 0.0, 1.0);
        assert_eq!(
            classify_support(&m),
            SupportClass {
                has_positive: true,
                has_negative: false
            }
        );

        // zero-mass atoms ignored
        let m = model(&[(0.1, 2.0), (-0.1, 0.0)], vec![-0.1, 0.1], 0.0, 1.0);
        assert_eq!(
            classify_support(&m),
            SupportClass {
                has_positive: true,
                has_negative: false
            }
        );
    }

    #[test]
    fn wellposed_positive_only_drift_conditions() {
        // phi = 0.1 < 0.2 = psi mean: pass
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
        assert!(check_wellposed(&m).passes);
        // phi = 0.3 >= 0.2: fail
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.3, 1.0);
        assert!(!check_wellposed(&m).passes);
        // boundary phi = 0.2 fails (strict inequality)
        let m = model(&[(0.1, 2.0)], vec![0.1], 0.2, 1.0);
        assert!(!check_wellposed(&m).passes);
    }

    #[test]
    fn wellposed_mixed_any_drift() {
        for phi in [-5.0, 0.0, 17.0] {
            let m = model(&[(0.1, 2.0), (-0.1, 3.0)], vec![0.1, -0.1], phi, 1.0);
            assert!(check_wellposed(&m).passes, "phi={phi}");
        }
    }

    #[test]
    fn wellposed_negative_only() {
        let m = model(&[(-0.1, 3.0)], vec![-0.1], 0.1, 1.0);
        assert!(check_wellposed(&m).passes); // 0.1 > -0.3
        let m = model(&[(-0.1, 3.0)], vec![-0.1], -0.5, 1.0);
        assert!(!check_wellposed(&m).passes);
    }

    #[test]
    fn wellposed_degenerate_needs_zero_drift() {
        let m = model(&[(0.1, 2.0)], vec![0.0], 0.0, 1.0);
        let r = check_wellposed(&m);
        assert!(r.passes);
        assert!(r.reason.contains("no jump risk"));
        let m = model(&[(0.1, 2.0)], vec![0.0], 0.01, 1.0);
        assert!(!check_wellposed(&m).passes);
    }

    #[test]
    fn wellposed_scale_invariance() {
        // scaling masses and drift by the same positive constant preserves
        // the verdict
        for scale in [0.5, 2.0, 10.0] {
            let base = model(&[(0.1, 2.0)], vec![0.1], 0.1, 1.0);
            let scaled = model(&[(0.1, 2.0 * scale)], vec![0.1], 0.1 * scale, 1.0);
            assert_eq!(check_wellposed(&base).passes, check_wellposed(&scaled).passes);

            let base = model(&[(0.1, 2.0)], vec![0.1], 0.3, 1.0);
            let scaled = model(&[(0.1, 2.0 * scale)], vec![0.1], 0.3 * scale, 1.0);
            assert_eq!(check_wellposed(&base).passes, check_wellposed(&scaled).passes);
        }
    }

    #[test]
    fn constraint_set_validation_and_projection() {
        assert!(ConstraintSet::interval(0.5, 1.0).is_err()); // excludes 0
        assert!(ConstraintSet::interval(-1.0, 2.0).is_ok());
        assert_eq!(
            ConstraintSet::interval(f64::NEG_INFINITY, f64::INFINITY).unwrap(),
            ConstraintSet::AllReals
        );
        let c = ConstraintSet::interval(-1.0, 2.0).unwrap();
        assert_eq!(c.project(5.0), 2.0);
        assert_eq!(c.project(-3.0), -1.0);
        assert_eq!(c.project(0.7), 0.7);
    }
}
