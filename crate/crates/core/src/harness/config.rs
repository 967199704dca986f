//! JSON run configuration and the objects it describes.

use std::path::Path;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::Deserialize;
use thiserror::Error;

use crate::exprlang::{parse, EvalError, Expr, ParseError, Var};
use crate::geometry::{DomainChart, DomainMetric, GeometryError, MetricExprs, TargetGeometry};
use crate::polyharmonic::{OrderSpec, PolyError};
use crate::pullback::{MapComponents, PullbackError, SmoothMap};
use crate::quadrature::QuadratureGrid;
use crate::variation::Diffeo;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error("in {field}: {source}")]
    Parse { field: String, source: ParseError },
    #[error("in {field}: {source}")]
    Eval { field: String, source: EvalError },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pullback(#[from] PullbackError),
    #[error(transparent)]
    Order(#[from] PolyError),
}

/// A number, or an expression such as `"2*pi"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Num(f64),
    Text(String),
}

impl Scalar {
    fn value(&self, field: &str) -> Result<f64, ConfigError> {
        match self {
            Scalar::Num(v) => Ok(*v),
            Scalar::Text(t) => parse(t, &[])
                .map_err(|source| ConfigError::Parse { field: field.into(), source })?
                .eval_real(&[], &[])
                .map_err(|source| ConfigError::Eval { field: field.into(), source }),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dim: usize,
    #[serde(default)]
    pub metric: Option<Vec<Vec<String>>>,
    /// `[lo, hi]` per coordinate; defaults to `[0, 2π]`
    #[serde(default)]
    pub r#box: Option<Vec<[Scalar; 2]>>,
    /// defaults to all periodic
    #[serde(default)]
    pub periodic: Option<Vec<bool>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default)]
    pub catalog: Option<String>,
    #[serde(default)]
    pub metric: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nodes: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffeoSpec {
    pub forward: Vec<String>,
    #[serde(default)]
    pub inverse: Option<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub eta: f64,
    pub max_steps: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub target: TargetSpec,
    pub map: Vec<String>,
    pub orders: Vec<usize>,
    pub grid: GridSpec,
    pub samples: SampleSpec,
    #[serde(default)]
    pub omega: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub diffeo: Option<DiffeoSpec>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
}

/// Everything a run needs, parsed and cross-checked.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub map: SmoothMap,
    pub orders: Vec<OrderSpec>,
    pub grid: QuadratureGrid,
    pub samples: Vec<Vec<f64>>,
    pub omega: Option<MetricExprs>,
    pub diffeo: Option<Diffeo>,
    pub flow: Option<FlowSpec>,
}

fn parse_all(texts: &[String], vars: &[Var], field: &str) -> Result<Vec<Expr>, ConfigError> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| parse(t, vars).map_err(|source| ConfigError::Parse { field: format!("{field}[{i}]"), source }))
        .collect()
}

fn parse_matrix(rows: &[Vec<String>], vars: Vec<Var>, dim: usize, field: &str) -> Result<MetricExprs, ConfigError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(ConfigError::Invalid(format!("{field} must be {dim}x{dim}")));
    }
    let exprs = rows
        .iter()
        .enumerate()
        .map(|(i, r)| parse_all(r, &vars, &format!("{field}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricExprs::new(vars, exprs)?)
}

/// Uniform points in the box from a SplitMix64 stream: each coordinate is
/// `lo + (hi - lo) * (next_u64 >> 11) * 2^-53`.
pub fn sample_points(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            bounds
                .iter()
                .map(|(lo, hi)| lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 * (-53f64).exp2()))
                .collect()
        })
        .collect()
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn domain_chart(&self) -> Result<DomainChart, ConfigError> {
        let m = self.domain.dim;
        if m == 0 || m > 3 {
            return Err(ConfigError::Invalid(format!("domain.dim = {m} is outside 1..=3")));
        }
        let metric = match &self.domain.metric {
            Some(rows) => parse_matrix(rows, Var::xs(m), m, "domain.metric")?,
            None => MetricExprs::flat(Var::xs(m)),
        };
        let bounds = match &self.domain.r#box {
            Some(b) if b.len() != m => return Err(ConfigError::Invalid(format!("domain.box needs {m} entries"))),
            Some(b) => b
                .iter()
                .enumerate()
                .map(|(i, [lo, hi])| {
                    let f = format!("domain.box[{i}]");
                    Ok((lo.value(&f)?, hi.value(&f)?))
                })
                .collect::<Result<Vec<_>, ConfigError>>()?,
            None => vec![(0.0, std::f64::consts::TAU); m],
        };
        if bounds.iter().any(|(lo, hi)| !(lo < hi)) {
            return Err(ConfigError::Invalid("domain.box entries need lo < hi".into()));
        }
        let periodic = self.domain.periodic.clone().unwrap_or_else(|| vec![true; m]);
        if periodic.len() != m {
            return Err(ConfigError::Invalid(format!("domain.periodic needs {m} entries")));
        }
        Ok(DomainChart::new(DomainMetric::Exprs(metric), bounds, periodic)?)
    }

    pub fn target_geometry(&self) -> Result<TargetGeometry, ConfigError> {
        let n = self.map.len();
        let t = &self.target;
        match (&t.catalog, &t.metric) {
            (Some(_), Some(_)) => Err(ConfigError::Invalid("target takes either catalog or metric".into())),
            (None, None) => Err(ConfigError::Invalid("target needs catalog or metric".into())),
            (None, Some(rows)) => Ok(TargetGeometry::custom(parse_matrix(rows, Var::ys(n), n, "target.metric")?)?),
            (Some(name), None) => {
                let r = t.radius.unwrap_or(1.0);
                Ok(match name.as_str() {
                    "euclidean" => TargetGeometry::euclidean(n)?,
                    "sphere" | "sphere_stereographic" => TargetGeometry::sphere_stereographic(n, r)?,
                    "hyperbolic" | "hyperbolic_ball" => TargetGeometry::hyperbolic_ball(n, r)?,
                    other => return Err(ConfigError::Invalid(format!("unknown target catalog '{other}'"))),
                })
            }
        }
    }

    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let domain = self.domain_chart()?;
        let m = domain.dim();
        if self.map.is_empty() || self.map.len() > 3 {
            return Err(ConfigError::Invalid("map needs between 1 and 3 components".into()));
        }
        let target = self.target_geometry()?;
        let comps = parse_all(&self.map, &Var::xs(m), "map")?;
        let map = SmoothMap::new(domain.clone(), target, MapComponents::Exprs(comps))?;
        if self.orders.is_empty() {
            return Err(ConfigError::Invalid("orders must not be empty".into()));
        }
        let orders = self.orders.iter().map(|&k| OrderSpec::new(k)).collect::<Result<_, _>>()?;
        if self.grid.nodes == 0 {
            return Err(ConfigError::Invalid("grid.nodes must be positive".into()));
        }
        let grid = QuadratureGrid::for_chart(&domain, self.grid.nodes);
        let samples = sample_points(domain.bounds(), self.samples.count, self.samples.seed);
        let omega = self.omega.as_ref().map(|rows| parse_matrix(rows, Var::xs(m), m, "omega")).transpose()?;
        let diffeo = match &self.diffeo {
            Some(d) => {
                if d.forward.len() != m || d.inverse.as_ref().is_some_and(|i| i.len() != m) {
                    return Err(ConfigError::Invalid(format!("diffeo needs {m} components")));
                }
                Some(Diffeo {
                    forward: parse_all(&d.forward, &Var::xs(m), "diffeo.forward")?,
                    inverse: d.inverse.as_ref().map(|i| parse_all(i, &Var::xs(m), "diffeo.inverse")).transpose()?,
                })
            }
            None => None,
        };
        if let Some(f) = &self.flow {
            if !(f.eta > 0.0 && f.tol >= 0.0) {
                return Err(ConfigError::Invalid("flow needs eta > 0 and tol >= 0".into()));
            }
        }
        Ok(Prepared { map, orders, grid, samples, omega, diffeo, flow: self.flow.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPHERE: &str = r#"{
        "domain": {"dim": 2, "box": [[0, "2*pi"], ["0", "2*pi"]], "periodic": [true, true]},
        "target": {"catalog": "sphere", "radius": 1.0},
        "map": ["0.5*sin(x1)", "0.3*cos(x2)"],
        "orders": [2, 3],
        "grid": {"nodes": 8},
        "samples": {"count": 5, "seed": 42}
    }"#;

    #[test]
    fn parses_and_prepares() {
        let p = RunConfig::from_json(SPHERE).unwrap().prepare().unwrap();
        assert_eq!(p.map.m(), 2);
        assert_eq!(p.map.domain().bounds()[1], (0.0, std::f64::consts::TAU));
        assert_eq!(p.orders.len(), 2);
        assert_eq!(p.samples.len(), 5);
        assert!(p.omega.is_none() && p.diffeo.is_none() && p.flow.is_none());
    }

    #[test]
    fn samples_reproducible_and_in_box() {
        let b = [(0.0, 1.0), (-2.0, 3.0)];
        let a = sample_points(&b, 100, 7);
        assert_eq!(a, sample_points(&b, 100, 7));
        assert_ne!(a, sample_points(&b, 100, 8));
        assert!(a.iter().all(|p| (0.0..1.0).contains(&p[0]) && (-2.0..3.0).contains(&p[1])));
    }

    #[test]
    fn first_sample_matches_splitmix_reference() {
        // SplitMix64 with seed 0 yields 0xe220a8397b1dcdaf first.
        let p = sample_points(&[(0.0, 1.0)], 1, 0);
        assert_eq!(p[0][0], (0xe220a8397b1dcdafu64 >> 11) as f64 / (1u64 << 53) as f64);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = SPHERE.replace("\"sphere\"", "\"torus\"");
        assert!(matches!(RunConfig::from_json(&bad).unwrap().prepare(), Err(ConfigError::Invalid(_))));
        let bad = SPHERE.replace("0.5*sin(x1)", "0.5*sin(x3)");
        assert!(matches!(RunConfig::from_json(&bad).unwrap().prepare(), Err(ConfigError::Parse { .. })));
        let bad = SPHERE.replace("[2, 3]", "[7]");
        assert!(matches!(RunConfig::from_json(&bad).unwrap().prepare(), Err(ConfigError::Order(_))));
        assert!(RunConfig::from_json("{\"domain\": 3}").is_err());
        let bad = SPHERE.replace("\"samples\"", "\"colour\": 1, \"samples\"");
        assert!(RunConfig::from_json(&bad).is_err());
    }
}
