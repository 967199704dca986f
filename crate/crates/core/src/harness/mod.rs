//! Configuration-driven verification runs, the gradient-flow experiment and
//! report output. The binary in `main.rs` is a thin shell over this.

pub mod config;
pub mod flow;
pub mod report;

use rayon::prelude::*;
use thiserror::Error;

pub use config::{ConfigError, Prepared, RunConfig};
pub use report::{Format, Report, Row};

use crate::polyharmonic::{energy, OrderSpec, PolyError};
use crate::pullback::{SmoothMap, TensionTower};
use crate::quadrature::QuadratureGrid;
use crate::stress::{conservation_residual, stress_value, trace_closed_form};
use crate::variation::{diffeo_invariance_report, first_variation_check, VariationError};
use report::{point_label, INTEGRAL};

pub const CONSERVATION_TOL: f64 = 1e-7;
pub const TRACE_POINT_TOL: f64 = 1e-10;
pub const TRACE_INTEGRAL_TOL: f64 = 1e-8;
pub const FIRST_VARIATION_TOL: f64 = 1e-5;
pub const INVARIANCE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Chart exits, loss of definiteness and similar failures of the
    /// numerics themselves, as opposed to a check missing its tolerance.
    #[error("numeric domain error: {0}")]
    Numeric(String),
    #[error("cannot write {path}: {source}")]
    Output { path: String, source: std::io::Error },
}

impl From<PolyError> for HarnessError {
    fn from(e: PolyError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl From<VariationError> for HarnessError {
    fn from(e: VariationError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl From<crate::pullback::PullbackError> for HarnessError {
    fn from(e: crate::pullback::PullbackError) -> Self {
        HarnessError::Numeric(e.to_string())
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Output { .. } => 2,
            HarnessError::Numeric(_) => 3,
        }
    }
}

fn pointwise_rows(map: &SmoothMap, spec: OrderSpec, x: &[f64]) -> Result<[Row; 2], HarnessError> {
    let c = conservation_residual(map, x, spec)?;
    let ctx = map.context(x, spec.stress_order())?;
    let tw = TensionTower::build(&ctx, spec.stress_depth())?;
    let tr = stress_value(&ctx, &tw, spec)?.trace(&ctx.ginv_values());
    let (closed, scale) = trace_closed_form(&ctx, &tw, spec)?;
    let label = point_label(x);
    Ok([
        Row::new("conservation", spec.k, label.clone(), c.max_residual(), c.scale, CONSERVATION_TOL),
        Row::new("trace_pointwise", spec.k, label, (tr - closed).abs(), scale, TRACE_POINT_TOL),
    ])
}

/// `∫ tr S_k dV` and `(m/2 - k) E_k`.
pub fn integrated_trace(map: &SmoothMap, spec: OrderSpec, grid: &QuadratureGrid) -> Result<(f64, f64, f64), HarnessError> {
    spec.check_stress()?;
    let lhs = grid.integrate(|x| -> Result<f64, HarnessError> {
        let ctx = map.context(x, spec.stress_order())?;
        let tw = TensionTower::build(&ctx, spec.stress_depth())?;
        Ok(stress_value(&ctx, &tw, spec)?.trace(&ctx.ginv_values()) * ctx.vol.value())
    })?;
    let e = energy(map, spec, grid)?;
    let rhs = (map.m() as f64 / 2.0 - spec.k as f64) * e;
    Ok((lhs, rhs, e))
}

/// Every check the configuration enables, one row per check, order and
/// point (or integral).
pub fn verify(p: &Prepared) -> Result<Report, HarnessError> {
    let mut report = Report::default();
    let periodic = p.map.domain().all_periodic();
    for &spec in &p.orders {
        if spec.k >= 2 {
            let rows: Vec<[Row; 2]> =
                p.samples.par_iter().map(|x| pointwise_rows(&p.map, spec, x)).collect::<Result<_, _>>()?;
            let (cons, traces): (Vec<Row>, Vec<Row>) = rows.into_iter().map(|[a, b]| (a, b)).unzip();
            report.rows.extend(cons);
            report.rows.extend(traces);
            if periodic {
                let (lhs, rhs, e) = integrated_trace(&p.map, spec, &p.grid)?;
                let scale = lhs.abs().max(rhs.abs()).max(e.abs());
                report.push(Row::new("trace_integral", spec.k, INTEGRAL.into(), (lhs - rhs).abs(), scale, TRACE_INTEGRAL_TOL));
                if let Some(omega) = &p.omega {
                    let fv = first_variation_check(&p.map, spec, omega, &p.grid)?;
                    report.push(Row::new(
                        "first_variation",
                        spec.k,
                        INTEGRAL.into(),
                        (fv.lhs - fv.rhs).abs(),
                        fv.scale(),
                        FIRST_VARIATION_TOL,
                    ));
                }
            }
        }
        if let (Some(u), true) = (&p.diffeo, periodic) {
            let r = diffeo_invariance_report(&p.map, u, spec, &p.grid, &p.samples)?;
            for (name, d, at) in [
                ("diffeo_tension", r.tension, "samples"),
                ("diffeo_laplacian", r.laplacian, "samples"),
                ("diffeo_energy", r.energy, INTEGRAL),
            ] {
                report.push(Row::new(name, spec.k, at.into(), d.residual, d.scale, INVARIANCE_TOL));
            }
        }
    }
    Ok(report)
}

/// `E_k` of the configured map.
pub fn energy_of(p: &Prepared, k: usize) -> Result<f64, HarnessError> {
    let spec = OrderSpec::new(k).map_err(ConfigError::from)?;
    if !p.map.domain().all_periodic() {
        return Err(ConfigError::Invalid("energy needs a periodic domain".into()).into());
    }
    Ok(energy(&p.map, spec, &p.grid)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn config(map: &str, extra: &str) -> Prepared {
        RunConfig::from_json(&format!(
            r#"{{"domain": {{"dim": 1}}, "target": {{"catalog": "euclidean"}}, "map": ["{map}"],
                "orders": [2, 3], "grid": {{"nodes": 32}}, "samples": {{"count": 6, "seed": 3}} {extra}}}"#
        ))
        .unwrap()
        .prepare()
        .unwrap()
    }

    #[test]
    fn sine_integrated_trace_oracle() {
        let p = config("sin(x1)", "");
        let (lhs, rhs, _) = integrated_trace(&p.map, OrderSpec::new(2).unwrap(), &p.grid).unwrap();
        assert!((lhs + 1.5 * PI).abs() <= 1e-8 * 1.5 * PI, "{lhs}");
        assert!((rhs + 1.5 * PI).abs() <= 1e-8 * 1.5 * PI, "{rhs}");
    }

    #[test]
    fn sine_verify_passes() {
        let p = config("sin(x1)", r#", "omega": [["0.3 + 0.1*cos(x1)"]], "diffeo": {"forward": ["x1 + 0.3*sin(x1)"]}"#);
        let r = verify(&p).unwrap();
        assert!(r.all_passed(), "{}", String::from_utf8(r.emit(Format::Text)).unwrap());
        // 6 conservation + 6 trace + 1 integral + 1 variation + 3 invariance, per order
        assert_eq!(r.rows.len(), 2 * 17);
    }

    #[test]
    fn identity_rows_exactly_zero() {
        let p = config("x1", "");
        let r = verify(&p).unwrap();
        assert!(r.rows.iter().all(|row| row.residual == 0.0), "{:?}", r.rows);
    }

    #[test]
    fn chart_exit_is_numeric() {
        let p = RunConfig::from_json(
            r#"{"domain": {"dim": 1}, "target": {"catalog": "hyperbolic"}, "map": ["2*sin(x1)"],
                "orders": [2], "grid": {"nodes": 8}, "samples": {"count": 20, "seed": 1}}"#,
        )
        .unwrap()
        .prepare()
        .unwrap();
        let e = verify(&p).unwrap_err();
        assert_eq!(e.exit_code(), 3, "{e}");
    }
}
