//! Variations of the domain metric `g_t = g + tω`: volume element, tension
//! field and rough Laplacian, the first-variation identity
//! `d/dt E_k = ∫⟨S_k, ω⟩ dV`, and invariance under domain diffeomorphisms.

use thiserror::Error;

use crate::exprlang::{EvalError, Expr, Var};
use crate::geometry::{
    check_positive_definite, levi_civita, mat_values, metric_inverse_volume, DomainMetric,
    GeometryError, Mat, MetricExprs,
};
use crate::jets::Jet;
use crate::polyharmonic::{energy, OrderSpec, PolyError};
use crate::pullback::{PointContext, PullbackError, Section, SmoothMap, TensionTower};
use crate::quadrature::QuadratureGrid;
use crate::stress::stress_value;

/// Step of the `t` finite differences; the stencil is `±h, ±h/2`.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VariationError {
    #[error("g + tω is not positive definite at t = {t} and x = {point:?}")]
    IndefiniteStencil { t: f64, point: Vec<f64> },
    #[error("Jacobian of the diffeomorphism is singular at {0:?}")]
    SingularJacobian(Vec<f64>),
    #[error("not a valid diffeomorphism: {0}")]
    NotDiffeo(String),
    #[error("the base map must use expression components and an expression metric")]
    Unsupported,
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Pullback(#[from] PullbackError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// `(4 D_{h/2} - D_h) / 3` with central differences `D`.
pub fn richardson<F, E>(h: f64, f: F) -> Result<f64, E>
where
    F: Fn(f64) -> Result<f64, E>,
{
    let d = |s: f64| -> Result<f64, E> { Ok((f(s)? - f(-s)?) / (2.0 * s)) };
    let dh = d(h)?;
    let dh2 = d(h / 2.0)?;
    Ok((4.0 * dh2 - dh) / 3.0)
}

/// Componentwise [`richardson`] for vector-valued functions.
pub fn richardson_vec<F, E>(h: f64, f: F) -> Result<Vec<f64>, E>
where
    F: Fn(f64) -> Result<Vec<f64>, E>,
{
    let (p1, m1, p2, m2) = (f(h)?, f(-h)?, f(h / 2.0)?, f(-h / 2.0)?);
    Ok((0..p1.len())
        .map(|a| {
            let dh = (p1[a] - m1[a]) / (2.0 * h);
            let dh2 = (p2[a] - m2[a]) / h;
            (4.0 * dh2 - dh) / 3.0
        })
        .collect())
}

fn base_metric(map: &SmoothMap) -> Result<&MetricExprs, VariationError> {
    match map.domain().metric() {
        DomainMetric::Exprs(g) => Ok(g),
        DomainMetric::PulledBack { .. } => Err(VariationError::Unsupported),
    }
}

/// The map over the perturbed domain `(M, g + tω)`.
pub fn perturbed_map(map: &SmoothMap, omega: &MetricExprs, t: f64) -> Result<SmoothMap, VariationError> {
    let g = base_metric(map)?.perturbed(omega.exprs(), t);
    Ok(map.with_domain(map.domain().with_metric(DomainMetric::Exprs(g)))?)
}

/// `½ g^{ij} ω_ij sqrt det g` from values.
pub fn volume_variation_value(g: &Mat<f64>, omega: &Mat<f64>) -> Result<f64, GeometryError> {
    let (ginv, vol) = metric_inverse_volume(g)?;
    let mut tr = 0.0;
    for i in 0..g.len() {
        for j in 0..g.len() {
            tr += ginv[i][j] * omega[i][j];
        }
    }
    Ok(0.5 * tr * vol)
}

/// `d/dt sqrt det(g + tω)` at `t = 0`, by the closed form.
pub fn volume_variation(g: &MetricExprs, omega: &MetricExprs, x: &[f64]) -> Result<f64, VariationError> {
    Ok(volume_variation_value(&g.value(x)?, &omega.value(x)?)?)
}

/// Raised `ω^{ij}` and the pieces `∇_iω^{ki}` and `∇^k tr ω` at the point.
struct OmegaData {
    raised: Mat<f64>,
    div_raised: Vec<f64>,
    grad_trace: Vec<f64>,
}

fn omega_data(ctx: &PointContext, omega: &MetricExprs) -> Result<OmegaData, VariationError> {
    let m = ctx.m;
    let vars = Var::xs(m);
    let w: Mat<Jet> = omega
        .exprs()
        .iter()
        .map(|r| r.iter().map(|e| e.eval_jet(&vars, &ctx.x, 1)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let ginv = ctx.ginv_values();
    let wv = mat_values(&w);
    let mut raised = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            for a in 0..m {
                for b in 0..m {
                    raised[i][j] += ginv[i][a] * ginv[j][b] * wv[a][b];
                }
            }
        }
    }
    let div = crate::stress::divergence(ctx, &w)?;
    let div_raised = (0..m).map(|k| (0..m).map(|a| ginv[k][a] * div.value[a]).sum()).collect();
    let mut tr = w[0][0].zeros_like();
    for i in 0..m {
        for j in 0..m {
            tr += &ctx.ginv[i][j].truncate(1) * &w[i][j];
        }
    }
    let dtr: Vec<f64> = (0..m).map(|a| tr.partial1(a)).collect();
    let grad_trace = (0..m).map(|k| (0..m).map(|a| ginv[k][a] * dtr[a]).sum()).collect();
    Ok(OmegaData { raised, div_raised, grad_trace })
}

/// `d/dt τ_{g+tω}(φ) = -ω^{ij}(∇dφ)_ij - (∇_iω^{ki})∂_kφ + ½(∇^k tr ω)∂_kφ`.
pub fn tension_variation(map: &SmoothMap, omega: &MetricExprs, x: &[f64]) -> Result<Vec<f64>, VariationError> {
    let ctx = map.context(x, 2)?;
    let od = omega_data(&ctx, omega)?;
    let b = ctx.second_fundamental_form()?;
    let d = ctx.dphi_values();
    let mut out = vec![0.0; ctx.n];
    for (a, o) in out.iter_mut().enumerate() {
        for i in 0..ctx.m {
            for j in 0..ctx.m {
                *o -= od.raised[i][j] * b[i][j].0[a].value();
            }
        }
        for k in 0..ctx.m {
            *o += (-od.div_raised[k] + 0.5 * od.grad_trace[k]) * d[k][a];
        }
    }
    Ok(out)
}

/// `(d/dt Δ_{g+tω}) V = ω^{ij}(∇_i∇_j - Γ^k_{ij}∇_k)V + (∇_iω^{ji})∇_jV - ½(∇^k tr ω)∇_kV`
/// for a section given by component expressions in `x`.
pub fn laplacian_variation(
    map: &SmoothMap,
    omega: &MetricExprs,
    section: &[Expr],
    x: &[f64],
) -> Result<Vec<f64>, VariationError> {
    let ctx = map.context(x, 2)?;
    let od = omega_data(&ctx, omega)?;
    let v = section_jets(section, x, 2)?;
    let hess = ctx.hessian(&v)?;
    let grad = ctx.nabla(&v)?;
    let mut out = vec![0.0; ctx.n];
    for (a, o) in out.iter_mut().enumerate() {
        for i in 0..ctx.m {
            for j in 0..ctx.m {
                *o += od.raised[i][j] * hess[i][j].0[a].value();
            }
        }
        for k in 0..ctx.m {
            *o += (od.div_raised[k] - 0.5 * od.grad_trace[k]) * grad[k].0[a].value();
        }
    }
    Ok(out)
}

pub fn section_jets(section: &[Expr], x: &[f64], order: usize) -> Result<Section, VariationError> {
    let vars = Var::xs(x.len());
    Ok(Section(section.iter().map(|e| e.eval_jet(&vars, x, order)).collect::<Result<_, _>>()?))
}

/// `Δ_g V` at `x` for a section given by expressions.
pub fn rough_laplacian_of(map: &SmoothMap, section: &[Expr], x: &[f64]) -> Result<Vec<f64>, VariationError> {
    let ctx = map.context(x, 2)?;
    Ok(ctx.rough_laplacian(&section_jets(section, x, 2)?)?.values())
}

/// Finite-difference oracle for [`tension_variation`].
pub fn tension_variation_fd(map: &SmoothMap, omega: &MetricExprs, x: &[f64], h: f64) -> Result<Vec<f64>, VariationError> {
    richardson_vec(h, |t| -> Result<Vec<f64>, VariationError> {
        let ctx = perturbed_map(map, omega, t)?.context(x, 2)?;
        Ok(ctx.tension()?.values())
    })
}

/// Finite-difference oracle for [`laplacian_variation`].
pub fn laplacian_variation_fd(
    map: &SmoothMap,
    omega: &MetricExprs,
    section: &[Expr],
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>, VariationError> {
    richardson_vec(h, |t| rough_laplacian_of(&perturbed_map(map, omega, t)?, section, x))
}

/// Positive definiteness of `g + tω` at every grid node for `t = ±h`
/// (the half steps then follow by convexity).
pub fn check_stencil(map: &SmoothMap, omega: &MetricExprs, grid: &QuadratureGrid, h: f64) -> Result<(), VariationError> {
    let g = base_metric(map)?;
    for t in [h, -h] {
        let gt = g.perturbed(omega.exprs(), t);
        for p in grid.points() {
            let v = gt.value(&p)?;
            if check_positive_definite(&v).is_err() {
                return Err(VariationError::IndefiniteStencil { t, point: p });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstVariation {
    /// finite difference of `E_k(g + tω)` at `t = 0`
    pub lhs: f64,
    /// `∫ ⟨S_k, ω⟩ dV`
    pub rhs: f64,
    /// `E_k(g)`
    pub energy: f64,
}

impl FirstVariation {
    pub fn scale(&self) -> f64 {
        self.lhs.abs().max(self.rhs.abs()).max(self.energy.abs())
    }

    pub fn relative(&self) -> f64 {
        let r = (self.lhs - self.rhs).abs();
        if r == 0.0 {
            0.0
        } else {
            r / self.scale()
        }
    }
}

/// `∫ g^{ia} g^{jb} S_ij ω_ab dV`.
pub fn stress_pairing(map: &SmoothMap, spec: OrderSpec, omega: &MetricExprs, grid: &QuadratureGrid) -> Result<f64, VariationError> {
    spec.check_stress().map_err(VariationError::Poly)?;
    grid.integrate(|x| -> Result<f64, VariationError> {
        let ctx = map.context(x, spec.stress_order())?;
        let tw = TensionTower::build(&ctx, spec.stress_depth())?;
        let s = stress_value(&ctx, &tw, spec)?;
        let w = crate::geometry::SymTwoTensor::from_upper(&omega.value(x)?);
        Ok(s.inner(&w, &ctx.ginv_values()) * ctx.vol.value())
    })
}

/// Both sides of `d/dt E_k(φ, g + tω) = ∫⟨S_k, ω⟩ dV`.
pub fn first_variation_check(
    map: &SmoothMap,
    spec: OrderSpec,
    omega: &MetricExprs,
    grid: &QuadratureGrid,
) -> Result<FirstVariation, VariationError> {
    check_stencil(map, omega, grid, FD_STEP)?;
    let lhs = richardson(FD_STEP, |t| -> Result<f64, VariationError> {
        Ok(energy(&perturbed_map(map, omega, t)?, spec, grid)?)
    })?;
    let rhs = stress_pairing(map, spec, omega, grid)?;
    let e = energy(map, spec, grid)?;
    Ok(FirstVariation { lhs, rhs, energy: e })
}

/// Pullback metric and its Christoffel symbols computed two ways.
#[derive(Debug, Clone, PartialEq)]
pub struct PulledBackGeometry {
    pub metric: Mat<f64>,
    /// from the transformation law
    pub gamma_law: Vec<Mat<f64>>,
    /// from the Levi-Civita formula applied to `u*g`
    pub gamma_direct: Vec<Mat<f64>>,
}

impl PulledBackGeometry {
    pub fn max_discrepancy(&self) -> f64 {
        self.gamma_law
            .iter()
            .flatten()
            .flatten()
            .zip(self.gamma_direct.iter().flatten().flatten())
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

fn inverse_small(a: &Mat<f64>) -> Option<Mat<f64>> {
    let m = a.len();
    let det = match m {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
    };
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut inv = vec![vec![0.0; m]; m];
    match m {
        1 => inv[0][0] = 1.0 / det,
        2 => {
            inv[0][0] = a[1][1] / det;
            inv[0][1] = -a[0][1] / det;
            inv[1][0] = -a[1][0] / det;
            inv[1][1] = a[0][0] / det;
        }
        _ => {
            for (i, row) in inv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    *v = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
                }
            }
        }
    }
    Some(inv)
}

/// `(u*g)_ij` and `Γ(u*g)` at `x`, the latter both by
/// `Γ^k_ij(u*g) = ∂_iu^r ∂_ju^s (∂x^k/∂u^t) Γ^t_rs(g)(u) + ∂_i∂_j u^t (∂x^k/∂u^t)`
/// and by Levi-Civita from the pulled-back metric jets.
pub fn pullback_metric_and_christoffel(
    u: &[Expr],
    g: &MetricExprs,
    x: &[f64],
) -> Result<PulledBackGeometry, VariationError> {
    let m = g.dim();
    let uj = crate::geometry::map_jets(u, x, 2)?;
    let ux: Vec<f64> = uj.iter().map(Jet::value).collect();
    let jac: Mat<f64> = (0..m).map(|r| (0..m).map(|i| uj[r].partial1(i)).collect()).collect();
    let jinv = inverse_small(&jac).ok_or_else(|| VariationError::SingularJacobian(x.to_vec()))?;
    let second: Vec<Mat<f64>> = (0..m)
        .map(|t| {
            (0..m)
                .map(|i| (0..m).map(|j| uj[t].derivative(i).and_then(|d| d.derivative(j)).map(|d| d.value())).collect())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(GeometryError::from)?;
    let gamma_g: Vec<Mat<f64>> = g.christoffel(&ux, 0)?.iter().map(mat_values).collect();
    let mut gamma_law = vec![vec![vec![0.0; m]; m]; m];
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                let mut acc = 0.0;
                for t in 0..m {
                    let mut inner = second[t][i][j];
                    for r in 0..m {
                        for s in 0..m {
                            inner += jac[r][i] * jac[s][j] * gamma_g[t][r][s];
                        }
                    }
                    acc += jinv[k][t] * inner;
                }
                gamma_law[k][i][j] = acc;
            }
        }
    }

    let pm = DomainMetric::PulledBack { base: g.clone(), map: u.to_vec() };
    let gj = pm.jets_at(x, 1)?;
    let (ginv, _) = crate::geometry::jet_inverse(&gj)?;
    let dg: Vec<Mat<Jet>> = (0..m)
        .map(|r| {
            gj.iter()
                .map(|row| row.iter().map(|e| e.derivative(r)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(GeometryError::from)?;
    let gamma_direct = levi_civita(&ginv, &dg).iter().map(mat_values).collect();
    Ok(PulledBackGeometry { metric: mat_values(&gj), gamma_law, gamma_direct })
}

/// A self-map of the domain chart, optionally with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffeo {
    pub forward: Vec<Expr>,
    pub inverse: Option<Vec<Expr>>,
}

impl Diffeo {
    /// Jacobian determinant positive at the samples, periodic coordinates
    /// shifted by exactly one period, and `u(u^{-1}(x)) = x` when an inverse
    /// is given.
    pub fn validate(&self, map: &SmoothMap, samples: &[Vec<f64>]) -> Result<(), VariationError> {
        let m = map.m();
        if self.forward.len() != m {
            return Err(VariationError::NotDiffeo(format!("needs {m} components")));
        }
        let vars = Var::xs(m);
        let eval = |es: &[Expr], p: &[f64]| -> Result<Vec<f64>, EvalError> {
            es.iter().map(|e| e.eval_real(&vars, p)).collect()
        };
        for p in samples {
            let uj = crate::geometry::map_jets(&self.forward, p, 1)?;
            let jac: Mat<f64> = (0..m).map(|r| (0..m).map(|i| uj[r].partial1(i)).collect()).collect();
            let det = crate::geometry::leading_minors(&jac).last().copied().unwrap_or(0.0);
            if det <= 0.0 {
                return Err(VariationError::SingularJacobian(p.clone()));
            }
            let up = eval(&self.forward, p)?;
            for (i, &(lo, hi)) in map.domain().bounds().iter().enumerate() {
                if !map.domain().periodic()[i] {
                    continue;
                }
                let mut q = p.clone();
                q[i] += hi - lo;
                let uq = eval(&self.forward, &q)?;
                for (r, (a, b)) in uq.iter().zip(&up).enumerate() {
                    let expect = if r == i { hi - lo } else { 0.0 };
                    if ((a - b) - expect).abs() > 1e-10 * (hi - lo) {
                        return Err(VariationError::NotDiffeo(format!("coordinate {} is not a degree-one circle map", i + 1)));
                    }
                }
            }
            if let Some(inv) = &self.inverse {
                let back = eval(&self.forward, &eval(inv, p)?)?;
                if back.iter().zip(p).any(|(a, b)| (a - b).abs() > 1e-10) {
                    return Err(VariationError::NotDiffeo(format!("inverse fails at {p:?}")));
                }
            }
        }
        Ok(())
    }
}

/// A residual with the magnitude it is measured against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub residual: f64,
    pub scale: f64,
}

impl Discrepancy {
    pub fn relative(&self) -> f64 {
        if self.residual == 0.0 {
            0.0
        } else {
            self.residual / self.scale
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceReport {
    /// `τ_{u*g}(φ∘u)(x)` against `τ_g(φ)(u(x))`, worst over the samples
    pub tension: Discrepancy,
    /// same for `Δ^j τ`, `j = 1..=J`
    pub laplacian: Discrepancy,
    /// `E_k(φ∘u, u*g)` against `E_k(φ, g)`
    pub energy: Discrepancy,
}

fn rel(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let s = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    (d, s)
}

/// Compare `φ` over `(M, g)` with `φ∘u` over `(M, u*g)`.
pub fn diffeo_invariance_report(
    map: &SmoothMap,
    u: &Diffeo,
    spec: OrderSpec,
    grid: &QuadratureGrid,
    samples: &[Vec<f64>],
) -> Result<InvarianceReport, VariationError> {
    u.validate(map, samples)?;
    let moved = map.precompose(&u.forward)?;
    let vars = Var::xs(map.m());
    let depth = spec.tension_depth().max(1);
    let order = crate::pullback::tower_order(depth);
    let (mut td, mut ts, mut ld, mut ls) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for x in samples {
        let ux: Vec<f64> = u.forward.iter().map(|e| e.eval_real(&vars, x)).collect::<Result<_, _>>()?;
        let a_ctx = moved.context(x, order)?;
        let b_ctx = map.context(&ux, order)?;
        let a = TensionTower::build(&a_ctx, depth)?;
        let b = TensionTower::build(&b_ctx, depth)?;
        let (d, s) = rel(&a.t_value(0)?, &b.t_value(0)?);
        td = td.max(d);
        ts = ts.max(s);
        for j in 1..=depth as isize {
            let (d, s) = rel(&a.t_value(j)?, &b.t_value(j)?);
            ld = ld.max(d);
            ls = ls.max(s);
        }
    }
    let e0 = energy(map, spec, grid)?;
    let e1 = energy(&moved, spec, grid)?;
    Ok(InvarianceReport {
        tension: Discrepancy { residual: td, scale: ts },
        laplacian: Discrepancy { residual: ld, scale: ls },
        energy: Discrepancy { residual: (e1 - e0).abs(), scale: e0.abs().max(e1.abs()) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use crate::geometry::{DomainChart, TargetGeometry};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sym(m: usize, t: &[&[&str]]) -> MetricExprs {
        MetricExprs::parse(Var::xs(m), &t.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect::<Vec<_>>())
            .unwrap()
    }

    fn sine() -> SmoothMap {
        SmoothMap::from_strings(DomainChart::flat_torus(1).unwrap(), TargetGeometry::euclidean(1).unwrap(), &["sin(x1)"])
            .unwrap()
    }

    #[test]
    fn volume_variation_examples() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(volume_variation_value(&id, &id).unwrap(), 1.0);
        assert_eq!(volume_variation_value(&id, &vec![vec![0.0; 2]; 2]).unwrap(), 0.0);
        let g = sym(2, &[&["2 + sin(x1)", "0.3*x2"], &["0.3*x2", "1 + x1^2"]]);
        let w = sym(2, &[&["cos(x2)", "0.5"], &["0.5", "x1*x2"]]);
        let x = [0.4, 0.9];
        let exact = volume_variation(&g, &w, &x).unwrap();
        let fd = richardson(1e-4, |t| -> Result<f64, GeometryError> {
            Ok(metric_inverse_volume(&g.perturbed(w.exprs(), t).value(&x)?)?.1)
        })
        .unwrap();
        assert!((exact - fd).abs() <= 1e-8 * exact.abs(), "{exact} {fd}");
    }

    #[test]
    fn conformal_tension_variation() {
        let c = 0.7;
        let w = sym(1, &[&["0.7"]]);
        let x = 1.1;
        let v = tension_variation(&sine(), &w, &[x]).unwrap();
        assert_relative_eq!(v[0], -c * (-x.sin()), max_relative = 1e-14);
        let zero = sym(1, &[&["0"]]);
        assert_eq!(tension_variation(&sine(), &zero, &[x]).unwrap(), vec![0.0]);
    }

    #[test]
    fn conformal_laplacian_variation() {
        let w = sym(1, &[&["0.7"]]);
        let x = 1.1;
        let sec = vec![parse("sin(x1)", &Var::xs(1)).unwrap()];
        let v = laplacian_variation(&sine(), &w, &sec, &[x]).unwrap();
        assert_relative_eq!(v[0], -0.7 * x.sin(), max_relative = 1e-14);
    }

    fn sphere_map(domain: DomainChart) -> SmoothMap {
        SmoothMap::from_strings(
            domain,
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.5*sin(x1) + 0.3*cos(x2)", "0.4*cos(x1)*sin(x2)"],
        )
        .unwrap()
    }

    #[test]
    fn lemma_variations_match_fd() {
        let g = sym(2, &[&["2 + 0.5*sin(x1)", "0.2*cos(x2)"], &["0.2*cos(x2)", "1.5 + 0.3*cos(x1 + x2)"]]);
        let f = sphere_map(DomainChart::torus_with_metric(g).unwrap());
        let w = sym(2, &[&["0.3*cos(x1)", "0.2*sin(x1 + x2)"], &["0.2*sin(x1 + x2)", "0.4*sin(x2)"]]);
        let sec: Vec<Expr> = ["cos(x1)*sin(x2)", "0.5 + sin(2*x1)"].iter().map(|s| parse(s, &Var::xs(2)).unwrap()).collect();
        let x = [0.8, 2.6];
        let a = tension_variation(&f, &w, &x).unwrap();
        let b = tension_variation_fd(&f, &w, &x, FD_STEP).unwrap();
        let (d, s) = rel(&a, &b);
        assert!(d <= 1e-6 * s, "{a:?} {b:?}");
        let a = laplacian_variation(&f, &w, &sec, &x).unwrap();
        let b = laplacian_variation_fd(&f, &w, &sec, &x, FD_STEP).unwrap();
        let (d, s) = rel(&a, &b);
        assert!(d <= 1e-6 * s, "{a:?} {b:?}");
    }

    #[test]
    fn first_variation_sine_conformal() {
        // E_2(g_t) = π (1+t)^{-3/2} for g_t = (1+t) dx².
        let grid = QuadratureGrid::for_chart(sine().domain(), 32);
        let r = first_variation_check(&sine(), OrderSpec::new(2).unwrap(), &sym(1, &[&["1"]]), &grid).unwrap();
        assert!((r.lhs + 1.5 * PI).abs() < 1e-6, "{r:?}");
        assert!((r.rhs + 1.5 * PI).abs() < 1e-12, "{r:?}");
        let z = first_variation_check(&sine(), OrderSpec::new(3).unwrap(), &sym(1, &[&["0"]]), &grid).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
    }

    #[test]
    fn indefinite_stencil_reported() {
        let grid = QuadratureGrid::for_chart(sine().domain(), 8);
        let w = sym(1, &[&["-2000"]]);
        assert!(matches!(
            first_variation_check(&sine(), OrderSpec::new(2).unwrap(), &w, &grid),
            Err(VariationError::IndefiniteStencil { .. })
        ));
    }

    #[test]
    fn christoffel_transformation_law() {
        let g1 = sym(1, &[&["1"]]);
        let u = vec![parse("x1 + 0.3*sin(x1)", &Var::xs(1)).unwrap()];
        for x in [0.2, 1.7, 4.0] {
            let p = pullback_metric_and_christoffel(&u, &g1, &[x]).unwrap();
            assert!(p.max_discrepancy() <= 1e-10, "{p:?}");
            assert_relative_eq!(p.metric[0][0], (1.0 + 0.3 * x.cos()).powi(2), max_relative = 1e-14);
        }
        let g2 = sym(2, &[&["2 + sin(x1)", "0.3*cos(x2)"], &["0.3*cos(x2)", "1.5"]]);
        let u2: Vec<Expr> = ["x1 + 0.2*sin(x1 + x2)", "x2 + 0.1*cos(x1)"].iter().map(|s| parse(s, &Var::xs(2)).unwrap()).collect();
        let p = pullback_metric_and_christoffel(&u2, &g2, &[0.4, 1.1]).unwrap();
        assert!(p.max_discrepancy() <= 1e-10, "{p:?}");
        // identity and translation
        let id: Vec<Expr> = ["x1", "x2"].iter().map(|s| parse(s, &Var::xs(2)).unwrap()).collect();
        let p = pullback_metric_and_christoffel(&id, &g2, &[0.4, 1.1]).unwrap();
        assert_eq!(p.metric, g2.value(&[0.4, 1.1]).unwrap());
        let tr: Vec<Expr> = ["x1 + 0.5", "x2 - 1"].iter().map(|s| parse(s, &Var::xs(2)).unwrap()).collect();
        let p = pullback_metric_and_christoffel(&tr, &MetricExprs::flat(Var::xs(2)), &[0.4, 1.1]).unwrap();
        assert_eq!(p.metric, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(p.gamma_law.iter().flatten().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn invariance_identity_and_warp() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(1).unwrap(),
            TargetGeometry::sphere_stereographic(1, 1.0).unwrap(),
            &["0.5*sin(x1) + 0.2*cos(2*x1)"],
        )
        .unwrap();
        let grid = QuadratureGrid::for_chart(f.domain(), 64);
        let samples: Vec<Vec<f64>> = [0.3, 1.9, 4.4].iter().map(|x| vec![*x]).collect();
        let id = Diffeo { forward: vec![parse("x1", &Var::xs(1)).unwrap()], inverse: None };
        let r = diffeo_invariance_report(&f, &id, OrderSpec::new(2).unwrap(), &grid, &samples).unwrap();
        assert_eq!((r.tension.residual, r.laplacian.residual, r.energy.residual), (0.0, 0.0, 0.0));
        let warp = Diffeo { forward: vec![parse("x1 + 0.3*sin(x1)", &Var::xs(1)).unwrap()], inverse: None };
        for k in 2..=5 {
            let r = diffeo_invariance_report(&f, &warp, OrderSpec::new(k).unwrap(), &grid, &samples).unwrap();
            assert!(
                r.tension.relative() <= 1e-8 && r.laplacian.relative() <= 1e-8 && r.energy.relative() <= 1e-8,
                "k={k} {r:?}"
            );
        }
    }

    #[test]
    fn bad_diffeos_rejected() {
        let f = sine();
        let s = vec![vec![0.5]];
        let fold = Diffeo { forward: vec![parse("x1 + 2*sin(x1)", &Var::xs(1)).unwrap()], inverse: None };
        assert!(fold.validate(&f, &[vec![3.0]]).is_err());
        let degree2 = Diffeo { forward: vec![parse("2*x1", &Var::xs(1)).unwrap()], inverse: None };
        assert!(matches!(degree2.validate(&f, &s), Err(VariationError::NotDiffeo(_))));
        let shift = Diffeo {
            forward: vec![parse("x1 + 1", &Var::xs(1)).unwrap()],
            inverse: Some(vec![parse("x1 - 1", &Var::xs(1)).unwrap()]),
        };
        assert!(shift.validate(&f, &s).is_ok());
    }
}
