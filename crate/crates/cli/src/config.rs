//! Run configuration. See `docs/config.md` for the JSON schema.

use std::ops::RangeInclusive;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ultranet::grid::Domain;
use ultranet::net::{BlowupRule, ClassifyOptions};
use ultranet::problems::{
    default_boundary_data, sawtooth_spec, sign_perturbed_spec, singular_spec, BubbleInitializer, InverseSquare,
    DEFAULT_THETA,
};
use ultranet::solver::{LbfgsOptions, ProblemSpec, Sampler, SolveOptions};

use crate::CliError;

/// Inclusive level range, written `"A..B"` or `[A, B]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelRange {
    pub first: u32,
    pub last: u32,
}

impl LevelRange {
    pub fn new(first: u32, last: u32) -> Result<Self, CliError> {
        if last < first || last - first + 1 < ultranet::net::MIN_NET_LEN as u32 {
            return Err(CliError::Config(format!(
                "level range {first}..{last} must hold at least {} levels",
                ultranet::net::MIN_NET_LEN
            )));
        }
        Ok(LevelRange { first, last })
    }

    pub fn range(&self) -> RangeInclusive<u32> {
        self.first..=self.last
    }
}

impl FromStr for LevelRange {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("level range {s:?} is not of the form A..B"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let b = b.strip_prefix('=').unwrap_or(b);
        LevelRange::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

impl Serialize for LevelRange {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}..{}", self.first, self.last))
    }
}

impl<'de> Deserialize<'de> for LevelRange {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Pair([u32; 2]),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::Pair([a, b]) => LevelRange::new(a, b).map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainConfig {
    fn build(&self) -> Result<Domain, CliError> {
        Ok(Domain::new(self.lower.clone(), self.upper.clone())?)
    }
}

/// Boundary data for the singular problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryChoice {
    /// `+1` for `x₀ ≤` midline, `-1` beyond.
    Default,
    Constant(f64),
    /// `g(x) = gradient · x + offset`.
    Affine { gradient: Vec<f64>, offset: f64 },
}

/// Potential `a` of the quotient problem. Radial choices have their minimum
/// at `center` (default: the domain centre).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialChoice {
    Zero,
    /// `amplitude · |x - center|`
    Cone { amplitude: f64, center: Option<Vec<f64>> },
    /// `amplitude · |x - center|²`
    Quadratic { amplitude: f64, center: Option<Vec<f64>> },
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_delta() -> f64 {
    0.25
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}

impl Default for BubbleConfig {
    fn default() -> Self {
        BubbleConfig { epsilon: default_epsilon(), delta: default_delta(), theta: default_theta(), center: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    Sawtooth,
    Singular {
        #[serde(default)]
        domain: Option<DomainConfig>,
        #[serde(default = "default_boundary")]
        boundary: BoundaryChoice,
    },
    SignPerturbed {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        domain: Option<DomainConfig>,
        #[serde(default = "default_potential")]
        potential: PotentialChoice,
        #[serde(default)]
        bubble: BubbleConfig,
        #[serde(default = "default_radius")]
        concentration_radius: f64,
    },
}

fn default_boundary() -> BoundaryChoice {
    BoundaryChoice::Default
}
fn default_dim() -> usize {
    3
}
fn default_potential() -> PotentialChoice {
    PotentialChoice::Zero
}
fn default_radius() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub warm_start: bool,
    pub multistart: usize,
    pub multistart_node_cap: usize,
    pub perturbation: f64,
    pub gradient_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolveOptions::default();
        SolverConfig {
            warm_start: s.warm_start,
            multistart: s.multistart,
            multistart_node_cap: s.multistart_node_cap,
            perturbation: s.perturbation,
            gradient_tol: s.lbfgs.tol,
            max_iter: s.lbfgs.max_iter,
            memory: s.lbfgs.memory,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub rtol: f64,
    pub atol: f64,
    pub cutoff: f64,
    pub kappa: f64,
    pub blowup_m0: f64,
    pub blowup_exponent: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        let c = ClassifyOptions::default();
        let b = BlowupRule::default();
        ClassifyConfig {
            rtol: c.rtol,
            atol: c.atol,
            cutoff: c.cutoff,
            kappa: c.kappa,
            blowup_m0: b.m0,
            blowup_exponent: b.gamma,
        }
    }
}

impl ClassifyConfig {
    pub fn options(&self) -> ClassifyOptions {
        ClassifyOptions { rtol: self.rtol, atol: self.atol, cutoff: self.cutoff, kappa: self.kappa }
    }

    pub fn blowup(&self) -> BlowupRule {
        BlowupRule { m0: self.blowup_m0, gamma: self.blowup_exponent }
    }
}

/// Which solution dumps to write per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DumpMode {
    None,
    Binary,
    Csv,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub levels: Option<LevelRange>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default = "default_dumps")]
    pub dumps: DumpMode,
}

fn default_dumps() -> DumpMode {
    DumpMode::Binary
}

impl RunConfig {
    pub fn new(problem: ProblemConfig) -> Self {
        RunConfig {
            problem,
            levels: None,
            seed: 0,
            solver: SolverConfig::default(),
            classify: ClassifyConfig::default(),
            dumps: default_dumps(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid run config: {e}")))
    }

    /// Fills in the problem's default level range.
    pub fn resolved(mut self) -> Self {
        if self.levels.is_none() {
            let (a, b) = match self.problem {
                ProblemConfig::Sawtooth => (3, 8),
                ProblemConfig::Singular { .. } => (3, 6),
                ProblemConfig::SignPerturbed { .. } => (2, 5),
            };
            self.levels = Some(LevelRange { first: a, last: b });
        }
        self
    }

    pub fn level_range(&self) -> LevelRange {
        self.clone().resolved().levels.expect("resolved")
    }

    pub fn solve_options(&self) -> SolveOptions {
        let s = &self.solver;
        SolveOptions {
            lbfgs: LbfgsOptions { memory: s.memory, max_iter: s.max_iter, tol: s.gradient_tol, ..LbfgsOptions::default() },
            warm_start: s.warm_start,
            multistart: s.multistart,
            seed: self.seed,
            multistart_node_cap: s.multistart_node_cap,
            perturbation: s.perturbation,
            ..SolveOptions::default()
        }
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(&self.clone().resolved()).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        config_hash(&self.canonical_json())
    }

    pub fn domain(&self) -> Result<Domain, CliError> {
        match &self.problem {
            ProblemConfig::Sawtooth => Ok(sawtooth_spec().domain),
            ProblemConfig::Singular { domain, .. } => match domain {
                Some(d) => d.build(),
                None => Ok(Domain::unit(2)?),
            },
            ProblemConfig::SignPerturbed { dim, domain, .. } => match domain {
                Some(d) => d.build(),
                None => Ok(Domain::unit(*dim)?),
            },
        }
    }

    /// Builds the problem; failures here are configuration errors.
    pub fn build_spec(&self) -> Result<ProblemSpec, CliError> {
        let domain = self.domain()?;
        let spec = match &self.problem {
            ProblemConfig::Sawtooth => sawtooth_spec(),
            ProblemConfig::Singular { boundary, .. } => {
                let g: Sampler = match boundary {
                    BoundaryChoice::Default => default_boundary_data(&domain),
                    BoundaryChoice::Constant(c) => {
                        let c = *c;
                        Arc::new(move |_: &[f64]| c)
                    }
                    BoundaryChoice::Affine { gradient, offset } => {
                        if gradient.len() != domain.dim() {
                            return Err(CliError::Config("affine boundary gradient has the wrong dimension".into()));
                        }
                        let (gr, off) = (gradient.clone(), *offset);
                        Arc::new(move |x: &[f64]| gr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + off)
                    }
                };
                singular_spec(Arc::new(InverseSquare), g, domain)?
            }
            ProblemConfig::SignPerturbed { dim, potential, bubble, .. } => {
                if domain.dim() != *dim {
                    return Err(CliError::Config(format!("domain dimension {} differs from dim {dim}", domain.dim())));
                }
                let start = BubbleInitializer {
                    epsilon: bubble.epsilon,
                    delta: bubble.delta,
                    theta: bubble.theta,
                    center: bubble.center.clone().unwrap_or_else(|| centre(&domain)),
                };
                sign_perturbed_spec(self.potential_sampler(potential, &domain)?, domain, start)?
            }
        };
        Ok(spec)
    }

    fn potential_sampler(&self, p: &PotentialChoice, domain: &Domain) -> Result<Option<Sampler>, CliError> {
        let dist2 = |c: Vec<f64>| move |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let check = |c: &Option<Vec<f64>>| -> Result<Vec<f64>, CliError> {
            let c = c.clone().unwrap_or_else(|| centre(domain));
            if c.len() != domain.dim() {
                return Err(CliError::Config("potential centre has the wrong dimension".into()));
            }
            Ok(c)
        };
        Ok(match p {
            PotentialChoice::Zero => None,
            PotentialChoice::Constant(v) => {
                let v = *v;
                Some(Arc::new(move |_: &[f64]| v))
            }
            PotentialChoice::Cone { amplitude, center } => {
                let (a, d) = (*amplitude, dist2(check(center)?));
                Some(Arc::new(move |x: &[f64]| a * d(x).sqrt()))
            }
            PotentialChoice::Quadratic { amplitude, center } => {
                let (a, d) = (*amplitude, dist2(check(center)?));
                Some(Arc::new(move |x: &[f64]| a * d(x)))
            }
        })
    }

    /// Point where the potential attains its isolated minimum, if any.
    pub fn potential_minimum(&self) -> Result<Option<Vec<f64>>, CliError> {
        let ProblemConfig::SignPerturbed { potential, .. } = &self.problem else {
            return Ok(None);
        };
        let domain = self.domain()?;
        Ok(match potential {
            PotentialChoice::Cone { center, .. } | PotentialChoice::Quadratic { center, .. } => {
                Some(center.clone().unwrap_or_else(|| centre(&domain)))
            }
            PotentialChoice::Zero | PotentialChoice::Constant(_) => None,
        })
    }
}

fn centre(d: &Domain) -> Vec<f64> {
    d.lower().iter().zip(d.upper()).map(|(a, b)| 0.5 * (a + b)).collect()
}

pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Applies an RFC 7386 merge patch.
pub fn merge_patch(target: &mut serde_json::Value, patch: &serde_json::Value) {
    use serde_json::Value;
    match patch {
        Value::Object(p) => {
            if !target.is_object() {
                *target = Value::Object(Default::default());
            }
            let t = target.as_object_mut().expect("object");
            for (k, v) in p {
                if v.is_null() {
                    t.remove(k);
                } else {
                    merge_patch(t.entry(k.clone()).or_insert(Value::Null), v);
                }
            }
        }
        other => *target = other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_ranges() {
        let r: LevelRange = "3..8".parse().unwrap();
        assert_eq!(r.range(), 3..=8);
        assert_eq!("2..=4".parse::<LevelRange>().unwrap().range(), 2..=4);
        assert!("3..4".parse::<LevelRange>().is_err());
        assert!("8..3".parse::<LevelRange>().is_err());
        assert!("x".parse::<LevelRange>().is_err());
    }

    #[test]
    fn parses_and_hashes() {
        let c = RunConfig::from_json(r#"{"problem":{"kind":"sawtooth"},"levels":[3,8]}"#).unwrap();
        let d = RunConfig::from_json(r#"{"problem":{"kind":"sawtooth"}}"#).unwrap();
        assert_eq!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 16);
        let e = RunConfig::from_json(r#"{"problem":{"kind":"sawtooth"},"seed":1}"#).unwrap();
        assert_ne!(c.hash(), e.hash());
        assert!(RunConfig::from_json(r#"{"problem":{"kind":"sawtooth"},"bogus":1}"#).is_err());
        let back = RunConfig::from_json(&c.canonical_json()).unwrap();
        assert_eq!(back, c.resolved());
    }

    #[test]
    fn sign_perturbed_config() {
        let c = RunConfig::from_json(
            r#"{"problem":{"kind":"sign-perturbed","potential":{"cone":{"amplitude":10.0,"center":null}}}}"#,
        )
        .unwrap();
        let spec = c.build_spec().unwrap();
        assert_eq!(spec.domain.dim(), 3);
        assert_eq!(c.potential_minimum().unwrap(), Some(vec![0.5; 3]));
        assert!(spec.lower_bound.is_some());
    }

    #[test]
    fn vanishing_boundary_data_is_a_config_error() {
        let c = RunConfig::from_json(
            r#"{"problem":{"kind":"singular","boundary":{"affine":{"gradient":[1.0,0.0],"offset":-0.5}}}}"#,
        )
        .unwrap();
        match c.build_spec() {
            Err(CliError::Config(msg)) => assert!(msg.contains("boundary node"), "{msg}"),
            other => panic!("expected config error, got {:?}", other.map(|s| s.name)),
        }
    }

    #[test]
    fn merge_patch_rules() {
        let mut base = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge_patch(&mut base, &serde_json::json!({"a": {"b": 5, "c": null}, "e": [1]}));
        assert_eq!(base, serde_json::json!({"a": {"b": 5}, "d": 3, "e": [1]}));
    }
}
