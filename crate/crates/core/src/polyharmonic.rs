//! Order-k tension fields and the energies `E_k`.
//!
//! The orthonormal-frame sums `R(X, dφ(e_j)) dφ(e_j)` are evaluated as
//! `g^{ij} R(X, dφ(∂_i)) dφ(∂_j)`.

use thiserror::Error;

use crate::geometry::{apply_riemann, bundle_inner};
use crate::pullback::{PointContext, PullbackError, SmoothMap, TensionTower};
use crate::quadrature::QuadratureGrid;

pub const MAX_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("order k = {0} is outside the supported range 1..=5")]
    UnsupportedOrder(usize),
    #[error("order k = {0} has no stress-energy tensor here (k = 1 is the Dirichlet energy)")]
    NoStressForOrder(usize),
    #[error("energy quadrature needs every domain coordinate to be periodic")]
    NotPeriodic,
    #[error(transparent)]
    Pullback(#[from] PullbackError),
}

/// `k = 2s` or `k = 2s + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderSpec {
    pub k: usize,
    pub s: usize,
    pub even: bool,
}

impl OrderSpec {
    pub fn new(k: usize) -> Result<Self, PolyError> {
        if !(1..=MAX_K).contains(&k) {
            return Err(PolyError::UnsupportedOrder(k));
        }
        Ok(OrderSpec { k, s: k / 2, even: k % 2 == 0 })
    }

    /// Tower depth needed by `τ_k`.
    pub fn tension_depth(&self) -> usize {
        if self.even {
            2 * self.s - 1
        } else {
            2 * self.s
        }
    }

    /// Map-jet order needed by `τ_k`.
    pub fn tension_order(&self) -> usize {
        if self.even {
            4 * self.s
        } else {
            4 * self.s + 2
        }
    }

    /// Tower depth needed by `S_k`.
    pub fn stress_depth(&self) -> usize {
        if self.even {
            2 * self.s - 2
        } else {
            2 * self.s - 1
        }
    }

    /// Map-jet order needed for the value of `S_k`.
    pub fn stress_order(&self) -> usize {
        if self.even {
            4 * self.s - 1
        } else {
            4 * self.s + 1
        }
    }

    /// Map-jet order needed for `div S_k` and `τ_k` together.
    pub fn conservation_order(&self) -> usize {
        self.tension_order().max(self.stress_order() + 1)
    }

    /// Map-jet order needed for the energy density.
    pub fn energy_order(&self) -> usize {
        match (self.k, self.even) {
            (1, _) => 1,
            (_, true) => 2 * self.s,
            (_, false) => 2 * self.s + 1,
        }
    }

    pub fn check_stress(&self) -> Result<(), PolyError> {
        if self.k < 2 {
            return Err(PolyError::NoStressForOrder(self.k));
        }
        Ok(())
    }
}

pub(crate) fn idx(j: usize, minus: usize) -> isize {
    j as isize - minus as isize
}

/// `Σ g^{ij} R(X_i, Y_i) dφ_j`.
pub fn curvature_contraction(ctx: &PointContext, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<f64> {
    let ginv = ctx.ginv_values();
    let d = ctx.dphi_values();
    let mut out = vec![0.0; ctx.n];
    for i in 0..ctx.m {
        for j in 0..ctx.m {
            if ginv[i][j] == 0.0 {
                continue;
            }
            let r = apply_riemann(&ctx.riemann, &xs[i], &ys[i], &d[j]);
            for (o, v) in out.iter_mut().zip(r) {
                *o += ginv[i][j] * v;
            }
        }
    }
    out
}

/// The signed contributions whose sum is `τ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensionTerms {
    pub terms: Vec<Vec<f64>>,
}

impl TensionTerms {
    pub fn total(&self) -> Vec<f64> {
        let n = self.terms[0].len();
        (0..n).map(|a| self.terms.iter().map(|t| t[a]).sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn repeat(v: Vec<f64>, m: usize) -> Vec<Vec<f64>> {
    vec![v; m]
}

fn grads(tw: &TensionTower, j: isize, m: usize) -> Result<Vec<Vec<f64>>, PullbackError> {
    (0..m).map(|i| tw.g_value(j, i)).collect()
}

fn neg(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| -x).collect()
}

/// `τ_{2s}`:
/// `Δ^{2s-1}τ - R(Δ^{2s-2}τ, dφ_j)dφ_j
///  + Σ_{l=1}^{s-1} [R(Δ^{s-l-1}τ, ∇_jΔ^{s+l-2}τ) - R(∇_jΔ^{s-l-1}τ, Δ^{s+l-2}τ)] dφ_j`.
pub fn tension_even(ctx: &PointContext, tw: &TensionTower, s: usize) -> Result<TensionTerms, PullbackError> {
    let m = ctx.m;
    let d = ctx.dphi_values();
    let mut terms = vec![tw.t_value(idx(2 * s, 1))?];
    terms.push(neg(curvature_contraction(ctx, &repeat(tw.t_value(idx(2 * s, 2))?, m), &d)));
    for l in 1..s {
        let a = idx(s, l + 1);
        let b = idx(s + l, 2);
        terms.push(curvature_contraction(ctx, &repeat(tw.t_value(a)?, m), &grads(tw, b, m)?));
        terms.push(neg(curvature_contraction(ctx, &grads(tw, a, m)?, &repeat(tw.t_value(b)?, m))));
    }
    Ok(TensionTerms { terms })
}

/// `τ_{2s+1}`:
/// `Δ^{2s}τ - R(Δ^{2s-1}τ, dφ_j)dφ_j
///  - Σ_{l=1}^{s-1} [R(∇_jΔ^{s+l-1}τ, Δ^{s-l-1}τ) - R(Δ^{s+l-1}τ, ∇_jΔ^{s-l-1}τ)] dφ_j
///  - R(∇_jΔ^{s-1}τ, Δ^{s-1}τ) dφ_j`.
pub fn tension_odd(ctx: &PointContext, tw: &TensionTower, s: usize) -> Result<TensionTerms, PullbackError> {
    let m = ctx.m;
    let d = ctx.dphi_values();
    let mut terms = vec![tw.t_value(idx(2 * s, 0))?];
    terms.push(neg(curvature_contraction(ctx, &repeat(tw.t_value(idx(2 * s, 1))?, m), &d)));
    for l in 1..s {
        let a = idx(s + l, 1);
        let b = idx(s, l + 1);
        terms.push(neg(curvature_contraction(ctx, &grads(tw, a, m)?, &repeat(tw.t_value(b)?, m))));
        terms.push(curvature_contraction(ctx, &repeat(tw.t_value(a)?, m), &grads(tw, b, m)?));
    }
    let c = idx(s, 1);
    terms.push(neg(curvature_contraction(ctx, &grads(tw, c, m)?, &repeat(tw.t_value(c)?, m))));
    Ok(TensionTerms { terms })
}

/// `τ_k` from a tower of sufficient depth; `τ_1 = τ`.
pub fn tension_k(ctx: &PointContext, tw: &TensionTower, spec: OrderSpec) -> Result<TensionTerms, PullbackError> {
    if spec.even {
        tension_even(ctx, tw, spec.s)
    } else {
        tension_odd(ctx, tw, spec.s)
    }
}

/// Builds the context and tower and returns `τ_k` at `x`.
pub fn tension_k_at(map: &SmoothMap, x: &[f64], spec: OrderSpec) -> Result<TensionTerms, PolyError> {
    let ctx = map.context(x, spec.tension_order())?;
    let tw = TensionTower::build(&ctx, spec.tension_depth())?;
    Ok(tension_k(&ctx, &tw, spec)?)
}

/// Triharmonic equation written as `Δ²τ - R(Δτ, dφ_i)dφ_i - R(∇_iτ, τ)dφ_i`,
/// coded independently of [`tension_odd`].
pub fn triharmonic_operator(ctx: &PointContext, tw: &TensionTower) -> Result<Vec<f64>, PullbackError> {
    let ginv = ctx.ginv_values();
    let d = ctx.dphi_values();
    let lap2 = tw.t_value(2)?;
    let lap = tw.t_value(1)?;
    let tau = tw.t_value(0)?;
    let mut out = lap2;
    for i in 0..ctx.m {
        let gt = tw.g_value(0, i)?;
        for j in 0..ctx.m {
            let a = apply_riemann(&ctx.riemann, &lap, &d[i], &d[j]);
            let b = apply_riemann(&ctx.riemann, &gt, &tau, &d[j]);
            for al in 0..ctx.n {
                out[al] -= ginv[i][j] * (a[al] + b[al]);
            }
        }
    }
    Ok(out)
}

/// Bitension in the form `-Δτ - tr R(dφ, τ)dφ`; this is `-τ_2`.
pub fn bitension_alternative(ctx: &PointContext, tw: &TensionTower) -> Result<Vec<f64>, PullbackError> {
    let ginv = ctx.ginv_values();
    let d = ctx.dphi_values();
    let tau = tw.t_value(0)?;
    let mut out = neg(tw.t_value(1)?);
    for i in 0..ctx.m {
        for j in 0..ctx.m {
            let r = apply_riemann(&ctx.riemann, &d[i], &tau, &d[j]);
            for al in 0..ctx.n {
                out[al] -= ginv[i][j] * r[al];
            }
        }
    }
    Ok(out)
}

/// Energy density without the volume factor: `|dφ|²`, `|Δ^{s-1}τ|²` or
/// `|∇Δ^{s-1}τ|²`.
pub fn energy_density(ctx: &PointContext, tw: Option<&TensionTower>, spec: OrderSpec) -> Result<f64, PullbackError> {
    if spec.k == 1 {
        return Ok(ctx.dirichlet_density());
    }
    let tw = tw.ok_or(PullbackError::InsufficientOrder { required: spec.energy_order(), available: ctx.order })?;
    let h = ctx.h_values();
    let j = idx(spec.s, 1);
    if spec.even {
        let t = tw.t_value(j)?;
        Ok(bundle_inner(&h, &t, &t))
    } else {
        let ginv = ctx.ginv_values();
        let g = grads(tw, j, ctx.m)?;
        let mut acc = 0.0;
        for a in 0..ctx.m {
            for b in 0..ctx.m {
                acc += ginv[a][b] * bundle_inner(&h, &g[a], &g[b]);
            }
        }
        Ok(acc)
    }
}

/// Energy density times `sqrt det g` at `x`.
pub fn energy_integrand(map: &SmoothMap, x: &[f64], spec: OrderSpec) -> Result<f64, PolyError> {
    let ctx = map.context(x, spec.energy_order())?;
    let tw = if spec.k == 1 { None } else { Some(TensionTower::build(&ctx, spec.s - 1)?) };
    Ok(energy_density(&ctx, tw.as_ref(), spec)? * ctx.vol.value())
}

/// `E_k(φ)` by the periodic trapezoidal rule.
pub fn energy(map: &SmoothMap, spec: OrderSpec, grid: &QuadratureGrid) -> Result<f64, PolyError> {
    if !map.domain().all_periodic() {
        return Err(PolyError::NotPeriodic);
    }
    grid.integrate(|x| energy_integrand(map, x, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::Var;
    use crate::geometry::{DomainChart, DomainMetric, MetricExprs, TargetGeometry};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn torus_line(expr: &str) -> SmoothMap {
        SmoothMap::from_strings(DomainChart::flat_torus(1).unwrap(), TargetGeometry::euclidean(1).unwrap(), &[expr])
            .unwrap()
    }

    fn real_line(expr: &str) -> SmoothMap {
        let d = DomainChart::new(DomainMetric::Exprs(MetricExprs::flat(Var::xs(1))), vec![(-5.0, 5.0)], vec![false])
            .unwrap();
        SmoothMap::from_strings(d, TargetGeometry::euclidean(1).unwrap(), &[expr]).unwrap()
    }

    #[test]
    fn order_bookkeeping() {
        let o: Vec<_> = (1..=5).map(|k| OrderSpec::new(k).unwrap()).collect();
        assert_eq!(o.iter().map(|s| s.tension_order()).collect::<Vec<_>>(), vec![2, 4, 6, 8, 10]);
        assert_eq!(o[1..].iter().map(|s| s.stress_order()).collect::<Vec<_>>(), vec![3, 5, 7, 9]);
        assert_eq!(o[1..].iter().map(|s| s.conservation_order()).collect::<Vec<_>>(), vec![4, 6, 8, 10]);
        assert_eq!(o.iter().map(|s| s.energy_order()).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);
        assert!(OrderSpec::new(0).is_err());
        assert!(OrderSpec::new(6).is_err());
    }

    #[test]
    fn minimal_order_suffices() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.4*sin(x1) + 0.2*cos(x2)", "0.3*cos(x1 - x2)"],
        )
        .unwrap();
        let x = [0.4, 1.3];
        for k in 1..=5 {
            let spec = OrderSpec::new(k).unwrap();
            let a = {
                let ctx = f.context(&x, spec.tension_order()).unwrap();
                tension_k(&ctx, &TensionTower::build(&ctx, spec.tension_depth()).unwrap(), spec).unwrap().total()
            };
            let b = {
                let ctx = f.context(&x, spec.tension_order() + 2).unwrap();
                tension_k(&ctx, &TensionTower::build(&ctx, spec.tension_depth()).unwrap(), spec).unwrap().total()
            };
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0), "k={k}: {u} {v}");
            }
            let ctx = f.context(&x, spec.tension_order() - 1).unwrap();
            assert!(TensionTower::build(&ctx, spec.tension_depth()).is_err());
        }
    }

    #[test]
    fn quartic_witnesses() {
        let f = real_line("x1^4");
        for x in [0.3, -1.2] {
            let t3 = tension_k_at(&f, &[x], OrderSpec::new(3).unwrap()).unwrap().total();
            let t4 = tension_k_at(&f, &[x], OrderSpec::new(4).unwrap()).unwrap().total();
            assert_eq!(t3, vec![0.0]);
            assert_eq!(t4, vec![0.0]);
            let ctx = f.context(&[x], 4).unwrap();
            assert_eq!(TensionTower::build(&ctx, 1).unwrap().t_value(1).unwrap(), vec![-24.0]);
        }
    }

    #[test]
    fn sine_tensions() {
        let f = torus_line("sin(x1)");
        let x = 0.9;
        for k in [2, 3] {
            let t = tension_k_at(&f, &[x], OrderSpec::new(k).unwrap()).unwrap().total();
            assert_relative_eq!(t[0], -x.sin(), max_relative = 1e-13);
        }
    }

    #[test]
    fn sine_energies() {
        let f = torus_line("sin(x1)");
        let grid = QuadratureGrid::for_chart(f.domain(), 64);
        assert_relative_eq!(energy(&f, OrderSpec::new(2).unwrap(), &grid).unwrap(), PI, max_relative = 1e-12);
        assert_relative_eq!(energy(&f, OrderSpec::new(3).unwrap(), &grid).unwrap(), PI, max_relative = 1e-12);
    }

    #[test]
    fn circle_map_energies() {
        for k in 1..4 {
            let f = torus_line(&format!("{k}*x1"));
            let grid = QuadratureGrid::for_chart(f.domain(), 16);
            let e1 = energy(&f, OrderSpec::new(1).unwrap(), &grid).unwrap();
            assert_relative_eq!(e1, 2.0 * PI * (k * k) as f64, max_relative = 1e-13);
            assert_eq!(energy(&f, OrderSpec::new(2).unwrap(), &grid).unwrap(), 0.0);
        }
    }

    #[test]
    fn energy_requires_periodic() {
        let f = real_line("x1");
        let grid = QuadratureGrid::for_chart(f.domain(), 8);
        assert_eq!(energy(&f, OrderSpec::new(2).unwrap(), &grid), Err(PolyError::NotPeriodic));
    }

    fn sphere_map() -> SmoothMap {
        SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.5*sin(x1) + 0.3*cos(x2)", "0.4*cos(x1)*sin(x2) + 0.1"],
        )
        .unwrap()
    }

    #[test]
    fn triharmonic_cross_check() {
        let f = sphere_map();
        for x in [[0.2, 0.9], [2.5, 4.0], [5.1, 1.7]] {
            let ctx = f.context(&x, 6).unwrap();
            let tw = TensionTower::build(&ctx, 2).unwrap();
            let a = tension_odd(&ctx, &tw, 1).unwrap();
            let b = triharmonic_operator(&ctx, &tw).unwrap();
            for (u, v) in a.total().iter().zip(&b) {
                assert!((u - v).abs() <= 1e-10 * a.max_abs(), "{u} {v}");
            }
        }
    }

    #[test]
    fn bitension_sign_relation() {
        // The two written forms of the bitension field differ by an overall sign.
        let f = sphere_map();
        let ctx = f.context(&[1.0, 2.0], 4).unwrap();
        let tw = TensionTower::build(&ctx, 1).unwrap();
        let a = tension_even(&ctx, &tw, 1).unwrap();
        let b = bitension_alternative(&ctx, &tw).unwrap();
        for (u, v) in a.total().iter().zip(&b) {
            assert!((u + v).abs() <= 1e-12 * a.max_abs(), "{u} {v}");
        }
    }

    #[test]
    fn flat_target_degenerates_to_iterated_laplacian() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::euclidean(2).unwrap(),
            &["sin(x1)*cos(x2)", "cos(2*x1) + sin(x2)"],
        )
        .unwrap();
        let x = [0.3, 0.8];
        for k in 2..=5 {
            let spec = OrderSpec::new(k).unwrap();
            let ctx = f.context(&x, spec.tension_order()).unwrap();
            let tw = TensionTower::build(&ctx, spec.tension_depth()).unwrap();
            let t = tension_k(&ctx, &tw, spec).unwrap().total();
            let lap = tw.t_value(spec.tension_depth() as isize).unwrap();
            for (u, v) in t.iter().zip(&lap) {
                assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn nonnegative_energy() {
        let f = sphere_map();
        let grid = QuadratureGrid::for_chart(f.domain(), 12);
        for k in 1..=4 {
            assert!(energy(&f, OrderSpec::new(k).unwrap(), &grid).unwrap() > 0.0);
        }
    }
}
