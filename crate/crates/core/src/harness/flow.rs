//! Discrete L² gradient flow `φ ← φ - η d`, `d = ±τ_k(φ)`, on a flat torus.
//!
//! The map is carried as a truncated Fourier series per component plus a
//! linear winding term. Each step transforms `τ_k` sampled on the grid and
//! updates the coefficients directly, so round-off in modes the map does not
//! use is discarded instead of being amplified by the high-order operator.

use std::f64::consts::TAU;

use crate::geometry::bundle_inner;
use crate::polyharmonic::{energy, tension_k_at, OrderSpec};
use crate::pullback::{FourierComponent, FourierMode, MapComponents, SmoothMap};
use crate::quadrature::QuadratureGrid;
use crate::stress::conservation_residual;

use super::config::FlowSpec;
use super::{ConfigError, HarnessError};

/// Transform coefficients below this fraction of the sampled maximum are
/// treated as round-off.
const COEFF_FLOOR: f64 = 1e-12;
/// Backtracking gives up once `η` has been halved this many times in a row.
const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    pub step: usize,
    pub eta: f64,
    pub energy: f64,
    pub max_tension: f64,
    /// worst relative conservation residual over the samples; absent for k = 1
    pub max_conservation: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowOutcome {
    Converged,
    /// `η` underflowed without finding a decreasing step.
    Stagnated,
    StepBudget,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub spec: OrderSpec,
    pub steps: Vec<FlowStep>,
    pub outcome: FlowOutcome,
    pub map: SmoothMap,
}

impl Trajectory {
    pub fn last(&self) -> &FlowStep {
        self.steps.last().expect("trajectory starts with the initial state")
    }

    /// Number of accepted steps.
    pub fn accepted(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "eta", "energy", "max_tension", "max_conservation"]).expect("in-memory csv");
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                format!("{:e}", s.eta),
                format!("{:e}", s.energy),
                format!("{:e}", s.max_tension),
                s.max_conservation.map(|c| format!("{c:e}")).unwrap_or_default(),
            ])
            .expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }
}

/// Wave vectors resolved by `nodes` points per direction, one of each `±w`.
fn wave_vectors(m: usize, nodes: usize) -> Vec<Vec<i32>> {
    let kmax = ((nodes - 1) / 2) as i32;
    let side = (2 * kmax + 1) as usize;
    let mut out = Vec::new();
    for idx in 0..side.pow(m as u32) {
        let mut r = idx;
        let w: Vec<i32> = (0..m)
            .map(|_| {
                let v = (r % side) as i32 - kmax;
                r /= side;
                v
            })
            .rev()
            .collect();
        if w.iter().find(|v| **v != 0).is_some_and(|v| *v > 0) {
            out.push(w);
        }
    }
    out
}

/// Fourier coefficients of periodic samples `f` at the grid nodes, with
/// modes below `COEFF_FLOOR * max|f|` dropped.
fn transform(points: &[Vec<f64>], f: &[f64], waves: &[Vec<i32>]) -> (f64, Vec<FourierMode>) {
    let count = f.len() as f64;
    let top = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = COEFF_FLOOR * top;
    let mean = crate::quadrature::compensated_sum(f.iter().copied()) / count;
    let modes = waves
        .iter()
        .filter_map(|w| {
            let (mut a, mut b) = (0.0, 0.0);
            for (p, v) in points.iter().zip(f) {
                let th: f64 = w.iter().zip(p).map(|(k, x)| *k as f64 * x).sum();
                a += v * th.cos();
                b += v * th.sin();
            }
            let (a, b) = (2.0 * a / count, 2.0 * b / count);
            (a.hypot(b) > floor).then(|| FourierMode { wave: w.clone(), cos: a, sin: b })
        })
        .collect();
    (if mean.abs() > floor { mean } else { 0.0 }, modes)
}

fn check_flat_torus(map: &SmoothMap, grid: &QuadratureGrid) -> Result<(), HarnessError> {
    let d = map.domain();
    let bad = |why: &str| HarnessError::Config(ConfigError::Invalid(format!("flow needs a flat 2π-torus domain: {why}")));
    if !d.all_periodic() {
        return Err(bad("every coordinate must be periodic"));
    }
    if d.bounds().iter().any(|(lo, hi)| ((hi - lo) - TAU).abs() > 1e-12) {
        return Err(bad("box sides must have length 2π"));
    }
    for p in grid.points() {
        let g = d.metric().value(&p).map_err(|e| HarnessError::Numeric(e.to_string()))?;
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if (v - if i == j { 1.0 } else { 0.0 }).abs() > 1e-14 {
                    return Err(bad("metric is not the identity"));
                }
            }
        }
    }
    Ok(())
}

/// Winding `w` per component and the Fourier series of `φ - w·x`.
pub fn fourier_fit(map: &SmoothMap, grid: &QuadratureGrid) -> Result<Vec<FourierComponent>, HarnessError> {
    let m = map.m();
    let points = grid.points();
    let base: Vec<f64> = map.domain().bounds().iter().map(|b| b.0).collect();
    let at_base = map.values(&base)?;
    let mut linear = vec![vec![0.0; m]; map.n()];
    for i in 0..m {
        let mut shifted = base.clone();
        shifted[i] += TAU;
        let v = map.values(&shifted)?;
        for (a, l) in linear.iter_mut().enumerate() {
            l[i] = (v[a] - at_base[a]) / TAU;
        }
    }
    let values = grid.evaluate(|x| map.values(x))?;
    let waves = wave_vectors(m, grid.nodes());
    Ok((0..map.n())
        .map(|a| {
            let f: Vec<f64> = points
                .iter()
                .zip(&values)
                .map(|(p, v)| v[a] - linear[a].iter().zip(p).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            let (constant, modes) = transform(&points, &f, &waves);
            FourierComponent { constant, linear: linear[a].clone(), modes }
        })
        .collect())
}

/// `φ - η d` in coefficient space, `d` given by its transform.
fn step_components(phi: &[FourierComponent], d: &[(f64, Vec<FourierMode>)], eta: f64) -> Vec<FourierComponent> {
    phi.iter()
        .zip(d)
        .map(|(c, (d0, dm))| {
            let mut out = c.clone();
            out.constant -= eta * d0;
            for md in dm {
                match out.modes.iter_mut().find(|o| o.wave == md.wave) {
                    Some(o) => {
                        o.cos -= eta * md.cos;
                        o.sin -= eta * md.sin;
                    }
                    None => out.modes.push(FourierMode { wave: md.wave.clone(), cos: -eta * md.cos, sin: -eta * md.sin }),
                }
            }
            out
        })
        .collect()
}

struct State {
    map: SmoothMap,
    tension: Vec<Vec<f64>>,
    record: FlowStep,
}

fn measure(
    map: SmoothMap,
    spec: OrderSpec,
    grid: &QuadratureGrid,
    samples: &[Vec<f64>],
    step: usize,
    eta: f64,
    e: f64,
) -> Result<State, HarnessError> {
    let pairs = grid.evaluate(|x| -> Result<(Vec<f64>, f64), HarnessError> {
        let t = tension_k_at(&map, x, spec)?.total();
        let h = map.target().metric().value(&map.values(x)?).map_err(|e| HarnessError::Numeric(e.to_string()))?;
        let norm = bundle_inner(&h, &t, &t).sqrt();
        Ok((t, norm))
    })?;
    let max_tension = pairs.iter().fold(0.0f64, |a, p| a.max(p.1));
    let tension = pairs.into_iter().map(|p| p.0).collect();
    let max_conservation = if spec.k >= 2 {
        let rel: Vec<f64> = samples
            .iter()
            .map(|x| Ok(conservation_residual(&map, x, spec)?.relative()))
            .collect::<Result<_, HarnessError>>()?;
        Some(rel.into_iter().fold(0.0f64, f64::max))
    } else {
        None
    };
    Ok(State { map, tension, record: FlowStep { step, eta, energy: e, max_tension, max_conservation } })
}

/// Run the flow for the order `spec` from `map`.
pub fn run_flow(
    map: &SmoothMap,
    spec: OrderSpec,
    grid: &QuadratureGrid,
    samples: &[Vec<f64>],
    params: &FlowSpec,
) -> Result<Trajectory, HarnessError> {
    check_flat_torus(map, grid)?;
    let points = grid.points();
    let waves = wave_vectors(map.m(), grid.nodes());
    let phi0 = map.with_components(MapComponents::Fourier(fourier_fit(map, grid)?))?;
    let e0 = energy(&phi0, spec, grid)?;
    let mut state = measure(phi0, spec, grid, samples, 0, params.eta, e0)?;
    let mut steps = vec![state.record.clone()];
    let mut eta = params.eta;
    let outcome = loop {
        if state.record.max_tension <= params.tol {
            break FlowOutcome::Converged;
        }
        if steps.len() > params.max_steps {
            break FlowOutcome::StepBudget;
        }
        let MapComponents::Fourier(comps) = state.map.components().clone() else {
            unreachable!("flow maps are Fourier series")
        };
        let d: Vec<(f64, Vec<FourierMode>)> = (0..map.n())
            .map(|a| {
                let f: Vec<f64> = state.tension.iter().map(|t| t[a]).collect();
                transform(&points, &f, &waves)
            })
            .collect();
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            for sign in [1.0, -1.0] {
                let cand = state.map.with_components(MapComponents::Fourier(step_components(&comps, &d, sign * eta)))?;
                let e = energy(&cand, spec, grid)?;
                if e < state.record.energy {
                    accepted = Some((cand, e));
                    break;
                }
            }
            if accepted.is_some() {
                break;
            }
            eta /= 2.0;
        }
        let Some((next, e)) = accepted else {
            break FlowOutcome::Stagnated;
        };
        state = measure(next, spec, grid, samples, steps.len(), eta, e)?;
        steps.push(state.record.clone());
    };
    Ok(Trajectory { spec, steps, outcome, map: state.map })
}
