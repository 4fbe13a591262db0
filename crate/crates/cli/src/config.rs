//! TOML run configuration and assembly of engine objects.
//!
//! Unknown keys are rejected everywhere so typos fail loudly. Atoms are
//! given as repeated `[[levy.atom]]` entries; per-atom arrays (`psi`,
//! `gamma_Xi`) follow the order the atoms are written in, and are permuted
//! together with them when the measure sorts by mark.

use serde::Deserialize;

use jumphedge::affine::{claim_from_log, AffineClaim, AffineForward};
use jumphedge::exp_ansatz::{Coefficient, ExpClaim, LinearGenerator};
use jumphedge::levy::{JumpAtom, LevyMeasure, MarkFunction};
use jumphedge::market::{ConstraintSet, MarketModel};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub levy: LevySection,
    pub market: MarketSection,
    pub constraint: Option<ConstraintSection>,
    pub spread: Option<SpreadSection>,
    pub claim: Option<ClaimSection>,
    pub generator: Option<GeneratorSection>,
    pub mc: Option<McSection>,
    pub solver: Option<SolverSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevySection {
    pub atom: Vec<AtomCfg>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomCfg {
    pub x: f64,
    pub mass: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub phi: f64,
    pub alpha: f64,
    pub horizon: f64,
    /// Per-atom jump coefficient, in the order atoms are written;
    /// defaults to the atom marks.
    pub psi: Option<Vec<f64>>,
    /// Initial log price.
    pub n0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub lower: Bound,
    pub upper: Bound,
}

/// A finite number or the strings `"inf"` / `"-inf"`.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Number(f64),
    Text(String),
}

impl Bound {
    fn resolve(&self) -> Result<f64, CliError> {
        match self {
            Bound::Number(v) => Ok(*v),
            Bound::Text(s) => match s.trim() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(CliError::config(format!(
                    "constraint bound must be a number, \"inf\" or \"-inf\", got \"{other}\""
                ))),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpreadSection {
    pub b: f64,
    #[serde(rename = "B")]
    pub mean_reversion: f64,
    #[serde(rename = "Sigma")]
    pub sigma: f64,
    /// Per-atom spread jump coefficient; defaults to zero.
    #[serde(rename = "gamma_Xi")]
    pub gamma_xi: Option<Vec<f64>>,
    /// Initial logspread.
    pub xi0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimSection {
    #[serde(rename = "type")]
    pub kind: String,
    // log claim
    pub coeff: Option<f64>,
    pub offset: Option<f64>,
    // exponential claim
    pub a: Option<[f64; 2]>,
    pub w: Option<f64>,
    pub v: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub c_y: CoefCfg,
    pub c_z: CoefCfg,
    pub c_u: CoefCfg,
    pub c: CoefCfg,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum CoefCfg {
    Constant(f64),
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl CoefCfg {
    fn to_coefficient(&self) -> Coefficient {
        match self {
            CoefCfg::Constant(c) => Coefficient::Constant(*c),
            CoefCfg::Table { times, values } => Coefficient::Tabulated {
                times: times.clone(),
                values: values.clone(),
            },
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Initial wealth; defaults to zero.
    pub x0: Option<f64>,
    /// Strategy offsets checked by `verify`; defaults to 20 values evenly
    /// spaced in [-1, 1].
    pub perturbations: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub grid_nodes: Option<usize>,
    pub checkpoints: Option<usize>,
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::config(format!("config error: {e}")))
}

/// Atom order as written in the config, after the measure sorts by mark:
/// permutation such that `sorted[i] = written[perm[i]]`.
fn sort_permutation(atoms: &[AtomCfg]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..atoms.len()).collect();
    idx.sort_by(|&i, &j| atoms[i].x.partial_cmp(&atoms[j].x).unwrap());
    idx
}

fn permute(values: &[f64], perm: &[usize]) -> Vec<f64> {
    perm.iter().map(|&i| values[i]).collect()
}

impl RunConfig {
    pub fn measure(&self) -> Result<LevyMeasure, CliError> {
        if self.levy.atom.is_empty() {
            return Err(CliError::config("[levy] needs at least one atom".into()));
        }
        if self
            .levy
            .atom
            .iter()
            .any(|a| !a.x.is_finite() || a.x == 0.0)
        {
            return Err(CliError::config(
                "[levy] atom marks must be finite and nonzero".into(),
            ));
        }
        LevyMeasure::new(
            self.levy
                .atom
                .iter()
                .map(|a| JumpAtom {
                    x: a.x,
                    mass: a.mass,
                })
                .collect(),
        )
        .map_err(CliError::from)
    }

    /// Reorder a per-atom array from config order to sorted-measure order.
    fn atom_aligned(&self, values: &[f64], what: &str) -> Result<Vec<f64>, CliError> {
        if values.len() != self.levy.atom.len() {
            return Err(CliError::config(format!(
                "{what} has {} entries but [levy] has {} atoms",
                values.len(),
                self.levy.atom.len()
            )));
        }
        Ok(permute(values, &sort_permutation(&self.levy.atom)))
    }

    pub fn market_model(&self) -> Result<MarketModel, CliError> {
        let measure = self.measure()?;
        let psi = match &self.market.psi {
            Some(values) => MarkFunction::from_values(self.atom_aligned(values, "[market] psi")?),
            None => MarkFunction::identity(&measure),
        };
        MarketModel::new(
            measure,
            psi,
            self.market.phi,
            self.market.alpha,
            self.market.horizon,
        )
        .map_err(CliError::from)
    }

    pub fn constraint(&self) -> Result<ConstraintSet, CliError> {
        match &self.constraint {
            None => Ok(ConstraintSet::AllReals),
            Some(c) => ConstraintSet::interval(c.lower.resolve()?, c.upper.resolve()?)
                .map_err(CliError::from),
        }
    }

    pub fn forward(&self, m: &MarketModel) -> Result<AffineForward, CliError> {
        let spread = self
            .spread
            .as_ref()
            .ok_or_else(|| CliError::config("missing [spread] section".into()))?;
        let gamma_xi = match &spread.gamma_xi {
            Some(values) => {
                MarkFunction::from_values(self.atom_aligned(values, "[spread] gamma_Xi")?)
            }
            None => MarkFunction::zero(m.measure().len()),
        };
        let n0 = self.market.n0.unwrap_or(0.0);
        let xi0 = spread.xi0.unwrap_or(0.0);
        AffineForward::from_market(
            m,
            spread.b,
            spread.mean_reversion,
            spread.sigma,
            gamma_xi,
            [n0, xi0],
        )
        .map_err(CliError::from)
    }

    pub fn affine_claim(&self) -> Result<AffineClaim, CliError> {
        let claim = self
            .claim
            .as_ref()
            .ok_or_else(|| CliError::config("missing [claim] section".into()))?;
        match claim.kind.as_str() {
            "log" => {
                let coeff = claim
                    .coeff
                    .ok_or_else(|| CliError::config("[claim] type=\"log\" needs coeff".into()))?;
                Ok(claim_from_log(coeff, claim.offset.unwrap_or(0.0)))
            }
            other => Err(CliError::config(format!(
                "this command needs a log claim, got type=\"{other}\""
            ))),
        }
    }

    pub fn exp_claim(&self) -> Result<ExpClaim, CliError> {
        let claim = self
            .claim
            .as_ref()
            .ok_or_else(|| CliError::config("missing [claim] section".into()))?;
        match claim.kind.as_str() {
            "exp" => Ok(ExpClaim {
                a: claim
                    .a
                    .ok_or_else(|| CliError::config("[claim] type=\"exp\" needs a".into()))?,
                w: claim
                    .w
                    .ok_or_else(|| CliError::config("[claim] type=\"exp\" needs w".into()))?,
                v: claim.v.unwrap_or(0.0),
            }),
            other => Err(CliError::config(format!(
                "this command needs an exponential claim, got type=\"{other}\""
            ))),
        }
    }

    pub fn linear_generator(&self) -> Result<LinearGenerator, CliError> {
        let g = self
            .generator
            .as_ref()
            .ok_or_else(|| CliError::config("missing [generator] section".into()))?;
        let gen = LinearGenerator {
            c_y: g.c_y.to_coefficient(),
            c_z: g.c_z.to_coefficient(),
            c_u: g.c_u.to_coefficient(),
            c: g.c.to_coefficient(),
        };
        gen.validate()?;
        Ok(gen)
    }

    pub fn mc(&self) -> Result<&McSection, CliError> {
        self.mc
            .as_ref()
            .ok_or_else(|| CliError::config("missing [mc] section".into()))
    }

    pub fn grid_nodes(&self) -> usize {
        self.solver
            .as_ref()
            .and_then(|s| s.grid_nodes)
            .unwrap_or(jumphedge::DEFAULT_GRID_NODES)
    }

    pub fn checkpoints(&self) -> usize {
        self.solver
            .as_ref()
            .and_then(|s| s.checkpoints)
            .unwrap_or(20)
    }

    pub fn perturbations(&self) -> Vec<f64> {
        if let Some(mc) = &self.mc {
            if let Some(p) = &mc.perturbations {
                return p.clone();
            }
        }
        // 20 offsets evenly spaced in [-1, 1]
        (0..20)
            .map(|k| -1.0 + 2.0 * k as f64 / 19.0)
            .collect()
    }
}
