//! Galerkin-net minimization: one finite-dimensional minimization per level,
//! collected into a net, then split into functional and singular parts.

mod lbfgs;

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use lbfgs::{minimize, LbfgsOptions, LbfgsOutcome, Problem};

use crate::calculus::galerkin::prolong;
use crate::calculus::{inner, norm, restrict, GridFunction, TestFunction};
use crate::error::{usage, Error, Result};
use crate::grid::{build_level, Domain, GridLevel, NodeSet};
use crate::net::{pointwise_standard_part, BlowupRule, ClassifyOptions, Net};
use crate::par;

pub type Sampler = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type Initializer = Arc<dyn Fn(&Arc<GridLevel>) -> Result<GridFunction> + Send + Sync>;

#[derive(Clone)]
pub enum Boundary {
    Free,
    /// Values pinned to `g` on every box-boundary node.
    Dirichlet(Sampler),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    None,
    /// The functional is a scale-invariant quotient; minimizers are rescaled
    /// to unit norm in `L^exponent` afterwards.
    UnitNorm { exponent: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Feasibility {
    Any,
    /// No nodal value may vanish or change sign during a line search.
    NonZero { floor: f64 },
}

/// A functional that can be specialised to one level.
pub trait Functional: Send + Sync {
    fn at_level(&self, level: &Arc<GridLevel>) -> Result<Box<dyn LevelFunctional>>;
}

pub trait LevelFunctional: Send + Sync {
    /// Value and gradient with respect to every nodal value.
    fn value_grad(&self, u: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, u: &[f64]) -> Result<f64> {
        Ok(self.value_grad(u)?.0)
    }

    /// Norm defining the constraint set, if any.
    fn constraint_norm(&self, _u: &[f64]) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Domain,
    pub functional: Arc<dyn Functional>,
    pub boundary: Boundary,
    pub constraint: Constraint,
    pub feasibility: Feasibility,
    /// Certified lower bound on every level value.
    pub lower_bound: Option<f64>,
    /// Level spaces are nested and the functional is evaluated exactly on
    /// them, so level values must not increase.
    pub nested: bool,
    pub initializer: Option<Initializer>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("constraint", &self.constraint)
            .field("feasibility", &self.feasibility)
            .field("lower_bound", &self.lower_bound)
            .field("nested", &self.nested)
            .finish()
    }
}

impl ProblemSpec {
    /// Pinned value per node (`None` for free nodes).
    pub fn pinned(&self, level: &GridLevel) -> Result<Vec<Option<f64>>> {
        match &self.boundary {
            Boundary::Free => Ok(vec![None; level.node_count()]),
            Boundary::Dirichlet(g) => (0..level.node_count())
                .map(|a| {
                    if !level.is_boundary(a) {
                        return Ok(None);
                    }
                    let x = level.point(a);
                    let v = g(&x);
                    if v.is_finite() {
                        Ok(Some(v))
                    } else {
                        Err(Error::Evaluation { node: a, coords: x, value: v })
                    }
                })
                .collect(),
        }
    }

    pub fn free_nodes(&self, level: &GridLevel) -> Result<Vec<usize>> {
        Ok(self
            .pinned(level)?
            .iter()
            .enumerate()
            .filter_map(|(a, p)| p.is_none().then_some(a))
            .collect())
    }

    fn feasible(&self, u: &[f64]) -> bool {
        match self.feasibility {
            Feasibility::Any => u.iter().all(|v| v.is_finite()),
            Feasibility::NonZero { floor } => u.iter().all(|v| v.is_finite() && v.abs() > floor),
        }
    }

    /// Checks that `u` meets the boundary condition and feasibility predicate.
    pub fn check_admissible(&self, u: &GridFunction) -> Result<()> {
        for (a, p) in self.pinned(u.level())?.iter().enumerate() {
            if let Some(g) = p {
                if (u.get(a) - g).abs() > 1e-12 * g.abs().max(1.0) {
                    return usage(format!("value {} at boundary node {a} differs from data {g}", u.get(a)));
                }
            }
        }
        if let Feasibility::NonZero { floor } = self.feasibility {
            if let Some(a) = u.values().iter().position(|v| v.abs() <= floor) {
                return usage(format!("node {a} at {:?} violates the nonzero constraint", u.level().point(a)));
            }
        }
        Ok(())
    }

    /// The problem's initializer, or zero with the boundary data pinned.
    pub fn initial(&self, level: &Arc<GridLevel>) -> Result<GridFunction> {
        if let Some(init) = &self.initializer {
            return init(level);
        }
        let pinned = self.pinned(level)?;
        GridFunction::new(level.clone(), pinned.iter().map(|p| p.unwrap_or(0.0)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartKind {
    Given,
    WarmStart,
    Initializer,
    Random(usize),
}

#[derive(Clone, Debug)]
pub struct MinResult {
    pub level: u32,
    pub u: GridFunction,
    pub value: f64,
    /// `‖∇J‖` over free nodes in the `M⁻¹` metric (the `L²` norm of the
    /// strong residual).
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub start: StartKind,
    pub seconds: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub lbfgs: LbfgsOptions,
    pub warm_start: bool,
    /// Random starts per level in addition to the deterministic ones.
    pub multistart: usize,
    pub seed: u64,
    /// Random starts are skipped on levels with more nodes than this.
    pub multistart_node_cap: usize,
    /// Relative amplitude of the multiplicative perturbation for random starts.
    pub perturbation: f64,
    pub monotone_slack: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            lbfgs: LbfgsOptions::default(),
            warm_start: true,
            multistart: 3,
            seed: 0,
            multistart_node_cap: 50_000,
            perturbation: 0.5,
            monotone_slack: 1e-10,
        }
    }
}

struct LevelProblem<'a> {
    spec: &'a ProblemSpec,
    functional: &'a dyn LevelFunctional,
    base: Vec<f64>,
    free: &'a [usize],
}

impl LevelProblem<'_> {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut u = self.base.clone();
        for (&a, &v) in self.free.iter().zip(x) {
            u[a] = v;
        }
        u
    }
}

impl Problem for LevelProblem<'_> {
    fn eval(&self, x: &[f64]) -> Result<Option<(f64, Vec<f64>)>> {
        let u = self.full(x);
        if !self.spec.feasible(&u) {
            return Ok(None);
        }
        let (f, g) = self.functional.value_grad(&u)?;
        if !f.is_finite() {
            return Ok(None);
        }
        Ok(Some((f, self.free.iter().map(|&a| g[a]).collect())))
    }

    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        match self.spec.feasibility {
            Feasibility::Any => f64::INFINITY,
            Feasibility::NonZero { .. } => x
                .iter()
                .zip(d)
                .filter(|(xi, di)| *xi * *di < 0.0)
                .map(|(xi, di)| -xi / di)
                .fold(f64::INFINITY, f64::min),
        }
    }
}

fn minimize_prepared(
    spec: &ProblemSpec,
    functional: &dyn LevelFunctional,
    init: &GridFunction,
    free: &[usize],
    opts: &LbfgsOptions,
    start: StartKind,
) -> Result<MinResult> {
    spec.check_admissible(init)?;
    let t0 = Instant::now();
    let level = init.level().clone();
    let problem = LevelProblem { spec, functional, base: init.values().to_vec(), free };
    let x0: Vec<f64> = free.iter().map(|&a| init.get(a)).collect();
    let mass: Vec<f64> = free.iter().map(|&a| level.weight(a)).collect();
    let out = lbfgs::minimize(&problem, x0, &mass, opts)?;
    let mut u = problem.full(&out.x);
    if let Constraint::UnitNorm { .. } = spec.constraint {
        if let Some(n) = functional.constraint_norm(&u)? {
            if n > 0.0 {
                u.iter_mut().for_each(|v| *v /= n);
            }
        }
    }
    Ok(MinResult {
        level: level.level(),
        u: GridFunction::new(level, u)?,
        value: out.f,
        grad_norm: out.grad_norm,
        iterations: out.iterations,
        evaluations: out.evaluations,
        converged: out.converged,
        start,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Minimizes the problem over the nodal space of `init`'s level, starting
/// from `init`.
pub fn minimize_level(spec: &ProblemSpec, init: &GridFunction, opts: &LbfgsOptions) -> Result<MinResult> {
    let level = init.level();
    if level.domain() != &spec.domain {
        return Err(Error::LevelMismatch(format!("{} is not a level of the problem domain", level.key())));
    }
    let functional = spec.functional.at_level(level)?;
    let free = spec.free_nodes(level)?;
    minimize_prepared(spec, functional.as_ref(), init, &free, opts, StartKind::Given)
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub results: Net<MinResult>,
    /// Some level did not converge.
    pub partial: bool,
    /// Levels whose value rose above the previous one on a nested problem.
    pub monotone_violations: Vec<u32>,
    /// Levels whose value fell below the certified lower bound.
    pub lower_bound_violations: Vec<u32>,
}

impl SolveReport {
    pub fn values(&self) -> Net<f64> {
        self.results.map(|r| r.value)
    }

    pub fn minimizers(&self) -> Net<GridFunction> {
        self.results.map(|r| r.u.clone())
    }
}

fn perturbed(base: &GridFunction, pinned: &[Option<f64>], seed: u64, amplitude: f64) -> Result<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = base
        .values()
        .iter()
        .zip(pinned)
        .map(|(&v, p)| match p {
            Some(g) => *g,
            None => v * (1.0 + amplitude * rng.gen_range(-1.0..1.0)),
        })
        .collect();
    GridFunction::new(base.level().clone(), vals)
}

/// Solves every level of `levels`, optionally warm-starting each level from
/// the prolonged minimizer of the previous one.
pub fn solve_net(spec: &ProblemSpec, levels: std::ops::RangeInclusive<u32>, opts: &SolveOptions) -> Result<SolveReport> {
    if levels.clone().count() < crate::net::MIN_NET_LEN {
        return usage(format!("a solve needs at least {} levels", crate::net::MIN_NET_LEN));
    }
    let mut entries: Vec<(u32, f64, MinResult)> = Vec::new();
    let mut monotone_violations = Vec::new();
    let mut lower_bound_violations = Vec::new();
    for n in levels {
        let level = build_level(&spec.domain, n)?;
        let functional = spec.functional.at_level(&level)?;
        let free = spec.free_nodes(&level)?;
        let pinned = spec.pinned(&level)?;
        let mut starts: Vec<(StartKind, GridFunction)> = Vec::new();
        if opts.warm_start {
            if let Some((_, _, prev)) = entries.last() {
                let mut warm = prolong(&prev.u, &level)?.into_values();
                for (v, p) in warm.iter_mut().zip(&pinned) {
                    if let Some(g) = p {
                        *v = *g;
                    }
                }
                let warm = GridFunction::new(level.clone(), warm)?;
                if spec.check_admissible(&warm).is_ok() {
                    starts.push((StartKind::WarmStart, warm));
                } else {
                    log::info!("level {n}: prolonged start is not admissible, skipped");
                }
            }
        }
        let init = spec.initial(&level)?;
        if level.node_count() <= opts.multistart_node_cap {
            for k in 0..opts.multistart {
                let seed = opts.seed ^ ((n as u64) << 32) ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                starts.push((StartKind::Random(k), perturbed(&init, &pinned, seed, opts.perturbation)?));
            }
        }
        starts.insert(usize::from(starts.first().is_some_and(|s| s.0 == StartKind::WarmStart)), (StartKind::Initializer, init));
        let outcomes: Vec<Result<MinResult>> = par::map_jobs(&starts, |(kind, u0)| {
            minimize_prepared(spec, functional.as_ref(), u0, &free, &opts.lbfgs, *kind)
        });
        let mut results = Vec::new();
        for r in outcomes {
            results.push(r?);
        }
        let best = results
            .iter()
            .filter(|r| r.converged)
            .min_by(|a, b| a.value.total_cmp(&b.value))
            .or_else(|| results.iter().min_by(|a, b| a.value.total_cmp(&b.value)))
            .cloned()
            .expect("at least one start");
        log::info!(
            "level {n}: value {:.12e} grad {:.3e} iters {} start {:?} converged {}",
            best.value,
            best.grad_norm,
            best.iterations,
            best.start,
            best.converged
        );
        if spec.nested {
            if let Some((_, _, prev)) = entries.last() {
                if best.value > prev.value + opts.monotone_slack {
                    monotone_violations.push(n);
                }
            }
        }
        if let Some(lb) = spec.lower_bound {
            if best.value < lb - opts.monotone_slack {
                lower_bound_violations.push(n);
            }
        }
        entries.push((n, level.h(), best));
    }
    let partial = entries.iter().any(|e| !e.2.converged) || !monotone_violations.is_empty();
    Ok(SolveReport { results: Net::new(entries)?, partial, monotone_violations, lower_bound_violations })
}

/// Bumps centred at the middle of the domain and at points shifted along
/// the first axis, each with a quarter of the shortest extent as radius.
pub fn default_battery(domain: &Domain) -> Vec<TestFunction> {
    let dim = domain.dim();
    let center: Vec<f64> = (0..dim).map(|a| 0.5 * (domain.lower()[a] + domain.upper()[a])).collect();
    let ext = (0..dim).map(|a| domain.extent(a)).fold(f64::INFINITY, f64::min);
    let r = 0.25 * ext;
    [0.0, -0.2, 0.2]
        .iter()
        .map(|s| {
            let mut c = center.clone();
            c[0] += s * domain.extent(0);
            TestFunction::bump(c, r)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SplitOptions {
    pub classify: ClassifyOptions,
    pub blowup: BlowupRule,
    pub battery: Vec<TestFunction>,
}

impl SplitOptions {
    pub fn for_domain(domain: &Domain) -> Self {
        SplitOptions {
            classify: ClassifyOptions::default(),
            blowup: BlowupRule::default(),
            battery: default_battery(domain),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splitting {
    /// Functional part on the coarsest level.
    pub w: GridFunction,
    pub singular: NodeSet,
    pub unclassified: NodeSet,
    /// `ψ_n = u_n - w°_n` with `w°_n` the P1 prolongation of `w`.
    pub psi: Net<GridFunction>,
    pub psi_norms: Vec<f64>,
    /// `⟨ψ_n, φ⟩` for each battery function (outer) and level (inner).
    pub pairings: Vec<Vec<f64>>,
    /// `max |u_n - w°_n - ψ_n|` over levels and nodes.
    pub reconstruction_error: f64,
}

pub fn split(minimizers: &Net<GridFunction>, opts: &SplitOptions) -> Result<Splitting> {
    let sp = pointwise_standard_part(minimizers, &opts.classify, &opts.blowup)?;
    let mut psi_entries = Vec::new();
    let mut psi_norms = Vec::new();
    let mut pairings = vec![Vec::new(); opts.battery.len()];
    let mut reconstruction_error = 0.0f64;
    for (n, h, u) in minimizers.iter() {
        let w_n = prolong(&sp.w, u.level())?;
        let psi = u.combine(1.0, &w_n, -1.0)?;
        for a in 0..u.values().len() {
            let e = (u.get(a) - w_n.get(a) - psi.get(a)).abs();
            reconstruction_error = reconstruction_error.max(e);
        }
        psi_norms.push(norm(&psi));
        for (k, phi) in opts.battery.iter().enumerate() {
            let phi_n = restrict(|x| phi.value(x), u.level())?;
            pairings[k].push(inner(&psi, &phi_n)?);
        }
        psi_entries.push((n, h, psi));
    }
    Ok(Splitting {
        w: sp.w,
        singular: sp.singular,
        unclassified: sp.unclassified,
        psi: Net::new(psi_entries)?,
        psi_norms,
        pairings,
        reconstruction_error,
    })
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ResidualReport {
    /// Max over free nodes of `|∂J/∂u_a| / d(a)`.
    pub strong_max: f64,
    /// Weighted `L²` norm of the same.
    pub strong_l2: f64,
    /// `|dJ[u](φ°)| / ‖φ°‖` for each battery function.
    pub weak: Vec<f64>,
    pub weak_max: f64,
}

/// Euler–Lagrange residuals of `u`: the strong form per free node (the
/// gradient divided by the quadrature weight) and the weak form against the
/// test battery.
pub fn verify_euler_lagrange(spec: &ProblemSpec, u: &GridFunction, battery: &[TestFunction]) -> Result<ResidualReport> {
    let level = u.level();
    let functional = spec.functional.at_level(level)?;
    let (_, g) = functional.value_grad(u.values())?;
    let free = spec.free_nodes(level)?;
    let mut strong_max = 0.0f64;
    let mut strong_sq = 0.0;
    for &a in &free {
        let r = g[a] / level.weight(a);
        strong_max = strong_max.max(r.abs());
        strong_sq += r * r * level.weight(a);
    }
    let mut is_free = vec![false; level.node_count()];
    free.iter().for_each(|&a| is_free[a] = true);
    let mut weak = Vec::with_capacity(battery.len());
    for phi in battery {
        let p = restrict(|x| phi.value(x), level)?;
        let pn = norm(&p);
        if pn == 0.0 {
            weak.push(0.0);
            continue;
        }
        let d: f64 = (0..level.node_count()).filter(|&a| is_free[a]).map(|a| g[a] * p.get(a)).sum();
        weak.push(d.abs() / pn);
    }
    let weak_max = weak.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(ResidualReport { strong_max, strong_l2: strong_sq.sqrt(), weak, weak_max })
}

/// Largest relative discrepancy between the analytic gradient and central
/// finite differences at `samples` random free nodes.
pub fn check_gradient(spec: &ProblemSpec, u: &GridFunction, samples: usize, seed: u64) -> Result<f64> {
    let level = u.level();
    let functional = spec.functional.at_level(level)?;
    let (_, g) = functional.value_grad(u.values())?;
    let free = spec.free_nodes(level)?;
    if free.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let a = free[rng.gen_range(0..free.len())];
        let eps = 1e-6 * u.get(a).abs().max(1e-3);
        let mut up = u.values().to_vec();
        up[a] += eps;
        let mut dn = u.values().to_vec();
        dn[a] -= eps;
        let fd = (functional.value(&up)? - functional.value(&dn)?) / (2.0 * eps);
        worst = worst.max((fd - g[a]).abs() / (g[a].abs().max(1e-3 * scale)));
    }
    Ok(worst)
}
