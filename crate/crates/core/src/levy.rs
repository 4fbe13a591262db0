//! Finite atomic jump measures and the entropic penalty.
//!
//! The driving jump measure is represented as a finite list of atoms
//! `(x_i, m_i)` with nonzero marks `x_i` and nonnegative intensities `m_i`
//! (expected jumps per unit time). Every integral against the measure is an
//! exact finite sum, and compound-Poisson simulation of the associated point
//! process is exact as well. Continuous jump densities enter through
//! [`discretize_density`], which truncates near zero and at the tails.
//!
//! The entropic penalty
//!
//! ```text
//! g_a(y) = (exp(a*y) - a*y - 1) / a
//! ```
//!
//! is the convex cost appearing in the jump part of the utility generator;
//! `|u|_a = ∫ g_a(u) dν` is its integrated form.

use crate::error::{EngineError, Result};

/// One atom of the jump measure: a nonzero mark and its intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    /// Jump mark, must be nonzero.
    pub x: f64,
    /// Intensity (expected jumps per unit time), must be nonnegative.
    pub mass: f64,
}

/// A finite atomic jump measure, atoms sorted by mark.
#[derive(Debug, Clone)]
pub struct LevyMeasure {
    atoms: Vec<JumpAtom>,
    total_mass: f64,
}

impl LevyMeasure {
    /// Build a measure from atoms. Sorts by mark and validates that marks are
    /// nonzero, finite and distinct, and that masses are nonnegative.
    pub fn new(mut atoms: Vec<JumpAtom>) -> Result<Self> {
        for a in &atoms {
            if !a.x.is_finite() || a.x == 0.0 {
                return Err(EngineError::InvalidArgument(format!(
                    "atom mark must be finite and nonzero, got {}",
                    a.x
                )));
            }
            if !a.mass.is_finite() || a.mass < 0.0 {
                return Err(EngineError::InvalidArgument(format!(
                    "atom mass must be finite and nonnegative, got {}",
                    a.mass
                )));
            }
        }
        atoms.sort_by(|a, b| a.x.partial_cmp(&b.x).expect("finite marks"));
        if atoms.windows(2).any(|w| w[0].x == w[1].x) {
            return Err(EngineError::InvalidArgument(
                "duplicate atom marks".to_string(),
            ));
        }
        let total_mass = pairwise_sum_by(&atoms, |a| a.mass);
        Ok(Self { atoms, total_mass })
    }

    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total intensity of the measure (the compound-Poisson event rate).
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    fn check_compatible(&self, f: &MarkFunction) -> Result<()> {
        if f.len() != self.len() {
            return Err(EngineError::IncompatibleFunction {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// Exact integral `∫ f dν = Σ f(x_i) m_i`.
    pub fn integrate(&self, f: &MarkFunction) -> Result<f64> {
        self.check_compatible(f)?;
        Ok(self.sum_atoms(|i, _| f.values()[i]))
    }

    /// Exact sum `Σ g(i, atom_i) * mass_i` without length checks.
    pub(crate) fn sum_atoms(&self, g: impl Fn(usize, &JumpAtom) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| g(i, a) * a.mass)
            .collect();
        pairwise_sum(&terms)
    }

    /// Essential supremum of `|u|`: the largest `|u_i|` over atoms with
    /// positive mass (zero-mass atoms carry no measure).
    pub fn ess_sup(&self, u: &MarkFunction) -> Result<f64> {
        self.check_compatible(u)?;
        Ok(self
            .atoms
            .iter()
            .zip(u.values())
            .filter(|(a, _)| a.mass > 0.0)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max))
    }

    /// Total mass of atoms whose `values` entry satisfies the predicate.
    pub fn mass_where(&self, values: &MarkFunction, pred: impl Fn(f64) -> bool) -> Result<f64> {
        self.check_compatible(values)?;
        let terms: Vec<f64> = self
            .atoms
            .iter()
            .zip(values.values())
            .filter(|(_, v)| pred(**v))
            .map(|(a, _)| a.mass)
            .collect();
        Ok(pairwise_sum(&terms))
    }
}

/// A function of the jump mark, sampled at the atoms of a measure.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkFunction(Vec<f64>);

impl MarkFunction {
    pub fn from_values(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// The constant function `c` on a measure with `len` atoms.
    pub fn constant(len: usize, c: f64) -> Self {
        Self(vec![c; len])
    }

    pub fn zero(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// The identity function `x -> x` sampled at the atom marks.
    pub fn identity(measure: &LevyMeasure) -> Self {
        Self(measure.atoms().iter().map(|a| a.x).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    /// `c1 * f1 + c2 * f2`, atomwise.
    pub fn linear_combination(c1: f64, f1: &Self, c2: f64, f2: &Self) -> Result<Self> {
        if f1.len() != f2.len() {
            return Err(EngineError::IncompatibleFunction {
                expected: f1.len(),
                got: f2.len(),
            });
        }
        Ok(Self(
            f1.0.iter()
                .zip(&f2.0)
                .map(|(a, b)| c1 * a + c2 * b)
                .collect(),
        ))
    }
}

/// Entropic penalty `g_a(y) = (exp(a*y) - a*y - 1) / a`.
///
/// Nonnegative, strictly convex, and quadratic near the origin. Close to
/// zero the direct formula cancels catastrophically, so for `|a*y| < 1e-4`
/// the series `a*y^2/2 + a^2*y^3/6` is used; at the switch point both
/// branches agree to well below 1e-15. Overflow saturates to `+inf`.
pub fn g_alpha(alpha: f64, y: f64) -> f64 {
    debug_assert!(alpha > 0.0, "risk aversion must be positive");
    let z = alpha * y;
    if z.abs() < 1e-4 {
        alpha * y * y / 2.0 + alpha * alpha * y * y * y / 6.0
    } else {
        (z.exp_m1() - z) / alpha
    }
}

/// Integrated entropic penalty `|u|_a = ∫ g_a(u) dν`.
pub fn entropic_norm(measure: &LevyMeasure, alpha: f64, u: &MarkFunction) -> Result<f64> {
    measure.check_compatible(u)?;
    Ok(measure.sum_atoms(|i, _| g_alpha(alpha, u.values()[i])))
}

/// Squared L2 norm `∫ u^2 dν`.
pub fn l2_norm_sq(measure: &LevyMeasure, u: &MarkFunction) -> Result<f64> {
    measure.check_compatible(u)?;
    Ok(measure.sum_atoms(|i, _| {
        let v = u.values()[i];
        v * v
    }))
}

/// Ratio `g_a(h) / h^2`, continuously extended by `a/2` at the origin.
fn penalty_ratio(alpha: f64, h: f64) -> f64 {
    if h == 0.0 {
        alpha / 2.0
    } else {
        g_alpha(alpha, h) / (h * h)
    }
}

/// Constant `K >= 1` such that every mark function `u` with
/// `ess sup |u| <= bound` satisfies the sandwich
///
/// ```text
/// |u|_a / K  <=  ∫ u^2 dν  <=  K * |u|_a .
/// ```
///
/// The ratio `g_a(h)/h^2` tends to `a/2` at the origin and is monotone on
/// each half-line, so its range over `[-bound, bound]` is bracketed by the
/// values near zero together with a dense scan of `[eps, bound]` on both
/// sides (eps = 1e-3, 1e4 scan points per unit). `K` is the larger of the
/// reciprocal lower bound and the upper bound of the ratio.
///
/// `K` depends only on `alpha` and `bound`, so the sandwich holds on any
/// measure; the measure argument fixes the signature to the integrals it
/// certifies.
pub fn equivalence_constant(_measure: &LevyMeasure, alpha: f64, bound: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(EngineError::InvalidArgument(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(EngineError::InvalidArgument(format!(
            "bound must be positive and finite, got {bound}"
        )));
    }
    let eps = 1e-3_f64.min(bound);
    let mut lo = alpha / 2.0;
    let mut hi = alpha / 2.0;
    let mut take = |r: f64| {
        lo = lo.min(r);
        hi = hi.max(r);
    };
    take(penalty_ratio(alpha, eps));
    take(penalty_ratio(alpha, -eps));
    if bound > eps {
        let n = (((bound - eps) * 1e4).ceil() as usize).max(2);
        for i in 0..=n {
            let h = eps + (bound - eps) * (i as f64) / (n as f64);
            take(penalty_ratio(alpha, h));
            take(penalty_ratio(alpha, -h));
        }
    }
    Ok((1.0 / lo).max(hi).max(1.0))
}

/// Midpoint-rule discretization of a jump density over intervals that
/// exclude zero.
///
/// Each segment `(a, b)` must satisfy `a < b` and `0 ∉ [a, b]`; the atom
/// budget `n_atoms` is split across segments proportionally to their length
/// (at least one cell per segment, remainders to the largest fractional
/// parts). Atom mark = cell midpoint, mass = density(midpoint) * cell width.
/// Deterministic for fixed inputs; total mass converges to the density
/// integral at second order in 1/n for smooth densities.
pub fn discretize_density(
    density: impl Fn(f64) -> f64,
    segments: &[(f64, f64)],
    n_atoms: usize,
) -> Result<LevyMeasure> {
    if segments.is_empty() {
        return Err(EngineError::InvalidSupport("no segments given".to_string()));
    }
    if n_atoms < segments.len() {
        return Err(EngineError::InvalidArgument(format!(
            "need at least one atom per segment: {} atoms for {} segments",
            n_atoms,
            segments.len()
        )));
    }
    for &(a, b) in segments {
        if !a.is_finite() || !b.is_finite() || a >= b {
            return Err(EngineError::InvalidSupport(format!(
                "segment [{a}, {b}] is not a proper finite interval"
            )));
        }
        if a <= 0.0 && b >= 0.0 {
            return Err(EngineError::InvalidSupport(format!(
                "segment [{a}, {b}] contains zero"
            )));
        }
    }
    let total_len: f64 = segments.iter().map(|(a, b)| b - a).sum();

    // Proportional allocation: floor, then hand out the remainder by largest
    // fractional part (ties broken by segment index).
    let ideal: Vec<f64> = segments
        .iter()
        .map(|(a, b)| n_atoms as f64 * (b - a) / total_len)
        .collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| (v.floor() as usize).max(1)).collect();
    let mut assigned: usize = counts.iter().sum();
    if assigned > n_atoms {
        return Err(EngineError::InvalidArgument(format!(
            "atom budget {n_atoms} too small for {} segments",
            segments.len()
        )));
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&i, &j| {
        let fi = ideal[i] - ideal[i].floor();
        let fj = ideal[j] - ideal[j].floor();
        fj.partial_cmp(&fi).unwrap().then(i.cmp(&j))
    });
    let mut k = 0;
    while assigned < n_atoms {
        counts[order[k % order.len()]] += 1;
        assigned += 1;
        k += 1;
    }

    let mut atoms = Vec::with_capacity(n_atoms);
    for (&(a, b), &cells) in segments.iter().zip(&counts) {
        let w = (b - a) / cells as f64;
        for i in 0..cells {
            let mid = a + (i as f64 + 0.5) * w;
            let d = density(mid);
            if !d.is_finite() || d < 0.0 {
                return Err(EngineError::InvalidArgument(format!(
                    "density must be finite and nonnegative, got {d} at {mid}"
                )));
            }
            atoms.push(JumpAtom {
                x: mid,
                mass: d * w,
            });
        }
    }
    LevyMeasure::new(atoms)
}

/// Pairwise (tree) summation: order-independent reductions reproduce exactly
/// across thread counts.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn pairwise_sum_by<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    let vals: Vec<f64> = items.iter().map(f).collect();
    pairwise_sum(&vals)
}
