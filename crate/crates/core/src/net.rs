//! Level-indexed nets and their standard-part classification.
//!
//! A net is read along the chain of nested levels. Its "standard part" is
//! decided from the tail: increments that shrink like a power of `h` give a
//! Richardson-extrapolated limit, monotone growth gives `±∞`, anything else is
//! reported as unclassified rather than guessed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::GridFunction;
use crate::error::{usage, Error, Result};
use crate::grid::{GridLevel, NodeSet};

/// Minimum number of entries in a net.
pub const MIN_NET_LEN: usize = 3;

/// `(level, h, payload)` triples with strictly increasing levels.
#[derive(Clone, Debug)]
pub struct Net<T> {
    entries: Vec<(u32, f64, T)>,
}

impl<T> Net<T> {
    pub fn new(entries: Vec<(u32, f64, T)>) -> Result<Self> {
        if entries.len() < MIN_NET_LEN {
            return usage(format!("a net needs at least {MIN_NET_LEN} entries, got {}", entries.len()));
        }
        if entries.windows(2).any(|w| w[1].0 <= w[0].0) {
            return usage("net levels must be strictly increasing");
        }
        if entries.iter().any(|e| !(e.1 > 0.0 && e.1.is_finite())) {
            return usage("net spacings must be positive");
        }
        Ok(Net { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64, &T)> {
        self.entries.iter().map(|(n, h, t)| (*n, *h, t))
    }

    pub fn levels(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn payloads(&self) -> impl Iterator<Item = &T> {
        self.entries.iter().map(|e| &e.2)
    }

    pub fn last(&self) -> (u32, f64, &T) {
        let e = self.entries.last().expect("nets are never empty");
        (e.0, e.1, &e.2)
    }

    pub fn first(&self) -> (u32, f64, &T) {
        let e = &self.entries[0];
        (e.0, e.1, &e.2)
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Net<U> {
        Net { entries: self.entries.iter().map(|(n, h, t)| (*n, *h, f(t))).collect() }
    }
}

impl Net<f64> {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.2).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value")]
pub enum Kind {
    Standard(f64),
    InfinitePlus,
    InfiniteMinus,
    Unclassified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub kind: Kind,
    /// The last (up to three) increments `x_{i+1} - x_i`.
    pub increments: Vec<f64>,
    /// Decay order `p` of the increments for a convergent tail, or the growth
    /// exponent `q` in `1/h` otherwise.
    pub exponent: Option<f64>,
    pub confidence: Confidence,
}

impl Classification {
    pub fn standard_value(&self) -> Option<f64> {
        match self.kind {
            Kind::Standard(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self.kind, Kind::InfinitePlus | Kind::InfiniteMinus)
    }

    /// True for an unclassified tail whose magnitude still grows in `1/h`.
    pub fn has_growth(&self) -> bool {
        self.kind == Kind::Unclassified && self.exponent.is_some_and(|q| q > 0.0)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            Kind::Standard(_) => "standard",
            Kind::InfinitePlus => "infinite_plus",
            Kind::InfiniteMinus => "infinite_minus",
            Kind::Unclassified => "unclassified",
        }
    }

    /// Flat JSON record `{kind, value, exponent, confidence}`.
    pub fn to_record(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind_name(),
            "value": self.standard_value(),
            "exponent": self.exponent,
            "confidence": self.confidence,
            "increments": self.increments,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Magnitude beyond which monotone growth counts as divergence.
    pub cutoff: f64,
    /// `x` counts as infinitesimal at spacing `h` when `|x| ≤ kappa·h`.
    pub kappa: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions { rtol: 1e-6, atol: 1e-9, cutoff: 1e6, kappa: 10.0 }
    }
}

impl ClassifyOptions {
    /// Absolute thresholds rescaled for a net multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let a = alpha.abs();
        ClassifyOptions { atol: self.atol * a, cutoff: self.cutoff * a, kappa: self.kappa * a, ..*self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.cutoff > 0.0 && self.kappa > 0.0) {
            return usage("classification tolerances must be positive");
        }
        Ok(())
    }
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Number of trailing increments used to fit the decay order.
const FIT_WINDOW: usize = 4;
const P_MIN: f64 = 0.3;
const P_MAX: f64 = 6.0;

pub fn classify(net: &Net<f64>, opts: &ClassifyOptions) -> Result<Classification> {
    opts.validate()?;
    let x = net.values();
    let h = net.spacings();
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation { node: i, coords: vec![h[i]], value: x[i] });
    }
    let k = x.len() - 1;
    let d: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let increments = d[d.len().saturating_sub(3)..].to_vec();
    let tol = |v: f64| opts.atol + opts.rtol * v.abs();

    // Cauchy tail at the stated tolerances.
    if d[k - 1].abs() <= tol(x[k]) && d[k - 2].abs() <= tol(x[k - 1]) {
        return Ok(Classification {
            kind: Kind::Standard(x[k]),
            increments,
            exponent: None,
            confidence: Confidence::High,
        });
    }

    // Increments decaying like h^p: the remaining tail is summable.
    let start = d.len().saturating_sub(FIT_WINDOW);
    let tail: Vec<(f64, f64)> = (start..d.len())
        .filter(|&i| d[i] != 0.0)
        .map(|i| (h[i + 1].ln(), d[i].abs().ln()))
        .collect();
    if tail.len() >= 2 && d[k - 1] != 0.0 {
        let (lx, ly): (Vec<f64>, Vec<f64>) = tail.into_iter().unzip();
        let p = slope(&lx, &ly);
        if p >= P_MIN {
            let same_sign = d[k - 1] * d[k - 2] > 0.0;
            let (value, confidence) = if p <= P_MAX && same_sign {
                let r = (h[k] / h[k - 1]).powf(p);
                (x[k] + d[k - 1] * r / (1.0 - r), Confidence::High)
            } else {
                (x[k], Confidence::Low)
            };
            return Ok(Classification {
                kind: Kind::Standard(value),
                increments,
                exponent: Some(p),
                confidence,
            });
        }
    }

    // Growth in 1/h.
    let last3 = &x[k - 2..];
    let inv_h: Vec<f64> = h[k - 2..].iter().map(|v| -v.ln()).collect();
    let q = if last3.iter().all(|v| *v != 0.0) {
        Some(slope(&inv_h, &last3.iter().map(|v| v.abs().ln()).collect::<Vec<_>>()))
    } else {
        None
    };
    let monotone = last3.windows(2).all(|w| w[1].abs() > w[0].abs() && w[1] * w[0] > 0.0);
    if monotone && (x[k].abs() > opts.cutoff || q.is_some_and(|q| q > 0.0)) {
        let kind = if x[k] > 0.0 { Kind::InfinitePlus } else { Kind::InfiniteMinus };
        return Ok(Classification { kind, increments, exponent: q, confidence: Confidence::High });
    }
    Ok(Classification { kind: Kind::Unclassified, increments, exponent: q, confidence: Confidence::Low })
}

/// True when the net classifies as a standard value below `kappa·h` at the
/// finest level.
pub fn is_infinitesimal(net: &Net<f64>, opts: &ClassifyOptions) -> Result<bool> {
    let c = classify(net, opts)?;
    let (_, h, _) = net.last();
    Ok(c.standard_value().is_some_and(|v| v.abs() <= opts.atol + opts.kappa * h))
}

/// Extra blow-up rule for pointwise standard parts: a node is singular when
/// `|u_n| > m0 · h_n^{-gamma}` at the finest level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlowupRule {
    pub m0: f64,
    pub gamma: f64,
}

impl Default for BlowupRule {
    fn default() -> Self {
        BlowupRule { m0: 10.0, gamma: 0.5 }
    }
}

#[derive(Clone, Debug)]
pub struct PointwiseStandardPart {
    /// Standard part on the coarsest level, zero on the singular set.
    pub w: GridFunction,
    pub singular: NodeSet,
    /// Nodes that are neither standard nor singular; `w` holds the finest value.
    pub unclassified: NodeSet,
    pub classes: Vec<Classification>,
}

/// Classifies, node by node, the values of a grid-function net at the points
/// of its coarsest level.
pub fn pointwise_standard_part(
    net: &Net<GridFunction>,
    opts: &ClassifyOptions,
    blowup: &BlowupRule,
) -> Result<PointwiseStandardPart> {
    let (_, _, first) = net.first();
    let coarse: Arc<GridLevel> = first.level().clone();
    for (n, _, u) in net.iter() {
        if u.level().level() != n {
            return Err(Error::LevelMismatch(format!("net entry {n} holds {}", u.level().key())));
        }
        if u.level().domain() != coarse.domain() {
            return Err(Error::LevelMismatch("net levels do not share a domain".into()));
        }
    }
    let maps: Vec<Vec<usize>> = net
        .iter()
        .map(|(_, _, u)| {
            (0..coarse.node_count())
                .map(|a| coarse.embed(a, u.level()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let spacings = net.spacings();
    let levels = net.levels();
    let payloads: Vec<&GridFunction> = net.payloads().collect();
    let (_, h_last, _) = net.last();
    let classes: Vec<Classification> = crate::par::map_jobs(
        &(0..coarse.node_count()).collect::<Vec<_>>(),
        |&a| {
            let entries = (0..payloads.len())
                .map(|i| (levels[i], spacings[i], payloads[i].get(maps[i][a])))
                .collect();
            classify(&Net::new(entries)?, opts)
        },
    )
    .into_iter()
    .collect::<Result<_>>()?;
    let last = payloads[payloads.len() - 1];
    let mut w = vec![0.0; coarse.node_count()];
    let mut singular = Vec::new();
    let mut unclassified = Vec::new();
    let bound = blowup.m0 * h_last.powf(-blowup.gamma);
    for (a, c) in classes.iter().enumerate() {
        let finest = last.get(maps[maps.len() - 1][a]);
        if c.is_infinite() || c.has_growth() || finest.abs() > bound {
            singular.push(a);
        } else if let Some(v) = c.standard_value() {
            w[a] = v;
        } else {
            w[a] = finest;
            unclassified.push(a);
        }
    }
    Ok(PointwiseStandardPart {
        w: GridFunction::new(coarse.clone(), w)?,
        singular: NodeSet::new(&coarse, singular)?,
        unclassified: NodeSet::new(&coarse, unclassified)?,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::restrict;
    use crate::grid::{build_level, Domain};

    fn net(levels: std::ops::RangeInclusive<u32>, f: impl Fn(u32, f64) -> f64) -> Net<f64> {
        Net::new(
            levels
                .map(|n| {
                    let h = 0.5f64.powi(n as i32);
                    (n, h, f(n, h))
                })
                .collect(),
        )
        .unwrap()
    }

    fn opts() -> ClassifyOptions {
        ClassifyOptions::default()
    }

    #[test]
    fn short_net_rejected() {
        assert!(Net::new(vec![(0, 1.0, 0.0), (1, 0.5, 0.0)]).is_err());
        assert!(Net::new(vec![(0, 1.0, 0.0), (2, 0.5, 0.0), (1, 0.25, 0.0)]).is_err());
    }

    #[test]
    fn geometric_tails() {
        let c = classify(&net(3..=8, |_, h| h), &opts()).unwrap();
        assert!(c.standard_value().unwrap().abs() < 1e-12);
        let c = classify(&net(3..=8, |_, h| 2.0 + 3.0 * h), &opts()).unwrap();
        assert!((c.standard_value().unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(c.confidence, Confidence::High);
        assert!((c.exponent.unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn divergent_tails() {
        let c = classify(&net(3..=8, |n, _| 2f64.powi(n as i32)), &opts()).unwrap();
        assert_eq!(c.kind, Kind::InfinitePlus);
        let c = classify(&net(3..=8, |_, h| 2.0 * h.ln()), &opts()).unwrap();
        assert_eq!(c.kind, Kind::InfiniteMinus);
        let c = classify(&net(0..=3, |n, _| 1e7 * (n + 1) as f64), &opts()).unwrap();
        assert_eq!(c.kind, Kind::InfinitePlus);
    }

    #[test]
    fn oscillation_is_unclassified() {
        let c = classify(&net(3..=8, |n, _| (n as f64).sin()), &opts()).unwrap();
        assert_eq!(c.kind, Kind::Unclassified);
    }

    #[test]
    fn constant_net_is_cauchy() {
        let c = classify(&net(0..=2, |_, _| 4.25), &opts()).unwrap();
        assert_eq!(c.kind, Kind::Standard(4.25));
    }

    #[test]
    fn infinitesimals() {
        assert!(is_infinitesimal(&net(3..=8, |_, h| h), &opts()).unwrap());
        assert!(!is_infinitesimal(&net(3..=8, |_, h| 1.0 + h), &opts()).unwrap());
        assert!(is_infinitesimal(&net(3..=8, |n, h| h * (n as f64).sin()), &opts()).unwrap());
    }

    #[test]
    fn record_shape() {
        let c = classify(&net(3..=8, |_, h| 1.0 + h), &opts()).unwrap();
        let r = c.to_record();
        assert_eq!(r["kind"], "standard");
        assert!(r["value"].as_f64().is_some());
        assert_eq!(r["confidence"], "high");
    }

    #[test]
    fn pointwise_parts() {
        let domain = Domain::unit(1).unwrap();
        let mk = |f: &dyn Fn(u32, &[f64]) -> f64| {
            Net::new(
                (2..=5)
                    .map(|n| {
                        let g = build_level(&domain, n).unwrap();
                        (n, g.h(), restrict(|x| f(n, x), &g).unwrap())
                    })
                    .collect(),
            )
            .unwrap()
        };
        let smooth = mk(&|_, x| x[0] * x[0]);
        let p = pointwise_standard_part(&smooth, &opts(), &BlowupRule::default()).unwrap();
        assert!(p.singular.is_empty());
        for a in 0..p.w.values().len() {
            let x = p.w.level().coord(a, 0);
            assert_eq!(p.w.get(a), x * x);
        }
        let spike = mk(&|n, x| if x[0] == 0.5 { n as f64 } else { x[0] });
        let p = pointwise_standard_part(&spike, &opts(), &BlowupRule::default()).unwrap();
        assert_eq!(p.singular.indices(), &[2]);
        assert_eq!(p.w.get(2), 0.0);
    }
}
