//! Stress-energy tensors `S_k`, their traces, covariant divergence and the
//! conservation law `div S_k = -⟨τ_k, dφ⟩`.

use crate::geometry::{bundle_inner, Mat, SymTwoTensor};
use crate::jets::Jet;
use crate::polyharmonic::{idx, tension_k, OrderSpec, PolyError};
use crate::pullback::{PointContext, PullbackError, Section, SmoothMap, TensionTower};

struct Pieces<'a> {
    ctx: &'a PointContext,
    tw: &'a TensionTower,
    r: usize,
}

impl Pieces<'_> {
    fn t(&self, j: isize) -> Result<Section, PullbackError> {
        self.tw.t_at(j, self.r)
    }

    fn g(&self, j: isize) -> Result<Vec<Section>, PullbackError> {
        (0..self.ctx.m).map(|i| self.tw.g_at(j, i, self.r)).collect()
    }

    fn dphi(&self) -> Vec<Section> {
        self.ctx.dphi.iter().map(|row| Section(row.iter().map(|j| j.truncate(self.r)).collect())).collect()
    }

    fn ip(&self, a: &Section, b: &Section) -> Jet {
        self.ctx.inner_jet(a, b)
    }

    /// `g^{ij}⟨A_i, B_j⟩`
    fn gip(&self, a: &[Section], b: &[Section]) -> Jet {
        let m = self.ctx.m;
        let mut acc = self.ip(&a[0], &b[0]).zeros_like();
        for i in 0..m {
            for j in 0..m {
                acc += &self.ctx.ginv[i][j].truncate(self.r) * &self.ip(&a[i], &b[j]);
            }
        }
        acc
    }
}

/// `S_k(∂_a, ∂_b)` as jets of order `r`:
///
/// `g_ab (L - ⟨τ, Δ^p τ⟩ - ⟨dφ, ∇Δ^p τ⟩ + Σ_l [-⟨Δ^{s-l}τ, Δ^q τ⟩ + ⟨∇Δ^{s-l-1}τ, ∇Δ^q τ⟩])
///  - Σ_l [⟨∇_aΔ^{s-l-1}τ, ∇_bΔ^q τ⟩ + (a↔b)] + ⟨dφ_a, ∇_bΔ^p τ⟩ + ⟨dφ_b, ∇_aΔ^p τ⟩`
///
/// with `p = 2s-2`, `q = s+l-2`, `L = ½|Δ^{s-1}τ|²` for even `k` and
/// `p = 2s-1`, `q = s+l-1`, `L = ½|∇Δ^{s-1}τ|²` plus the extra term
/// `-⟨∇_aΔ^{s-1}τ, ∇_bΔ^{s-1}τ⟩` for odd `k`.
pub fn stress_jets(ctx: &PointContext, tw: &TensionTower, spec: OrderSpec, r: usize) -> Result<Mat<Jet>, PolyError> {
    spec.check_stress()?;
    let pc = Pieces { ctx, tw, r };
    let s = spec.s;
    let m = ctx.m;
    let p = if spec.even { idx(2 * s, 2) } else { idx(2 * s, 1) };
    let q = |l: usize| if spec.even { idx(s + l, 2) } else { idx(s + l, 1) };
    let top = idx(s, 1);

    let dphi = pc.dphi();
    let gp = pc.g(p)?;
    let mut scalar = if spec.even {
        let t = pc.t(top)?;
        pc.ip(&t, &t).scale(0.5)
    } else {
        let g = pc.g(top)?;
        pc.gip(&g, &g).scale(0.5)
    };
    scalar -= &pc.ip(&pc.t(0)?, &pc.t(p)?);
    scalar -= &pc.gip(&dphi, &gp);
    let mut cross = Vec::new();
    for l in 1..s {
        scalar -= &pc.ip(&pc.t(idx(s, l))?, &pc.t(q(l))?);
        let ga = pc.g(idx(s, l + 1))?;
        let gb = pc.g(q(l))?;
        scalar += &pc.gip(&ga, &gb);
        cross.push((ga, gb));
    }
    let gtop = if spec.even { None } else { Some(pc.g(top)?) };

    let zero = scalar.zeros_like();
    let mut out = vec![vec![zero; m]; m];
    for a in 0..m {
        for b in a..m {
            let mut v = &ctx.g[a][b].truncate(r) * &scalar;
            for (ga, gb) in &cross {
                v -= &pc.ip(&ga[a], &gb[b]);
                v -= &pc.ip(&ga[b], &gb[a]);
            }
            v += &pc.ip(&dphi[a], &gp[b]);
            v += &pc.ip(&dphi[b], &gp[a]);
            if let Some(g) = &gtop {
                v -= &pc.ip(&g[a], &g[b]);
            }
            out[b][a] = v.clone();
            out[a][b] = v;
        }
    }
    Ok(out)
}

pub fn stress_value(ctx: &PointContext, tw: &TensionTower, spec: OrderSpec) -> Result<SymTwoTensor, PolyError> {
    let s = stress_jets(ctx, tw, spec, 0)?;
    Ok(SymTwoTensor::from_upper(&crate::geometry::mat_values(&s)))
}

pub fn stress_even(ctx: &PointContext, tw: &TensionTower, s: usize) -> Result<SymTwoTensor, PolyError> {
    stress_value(ctx, tw, OrderSpec::new(2 * s)?)
}

pub fn stress_odd(ctx: &PointContext, tw: &TensionTower, s: usize) -> Result<SymTwoTensor, PolyError> {
    stress_value(ctx, tw, OrderSpec::new(2 * s + 1)?)
}

/// `S_k` at `x`, building the context at the minimal order.
pub fn stress_at(map: &SmoothMap, x: &[f64], spec: OrderSpec) -> Result<SymTwoTensor, PolyError> {
    spec.check_stress()?;
    let ctx = map.context(x, spec.stress_order())?;
    let tw = TensionTower::build(&ctx, spec.stress_depth())?;
    stress_value(&ctx, &tw, spec)
}

/// The triharmonic stress tensor written out directly:
/// `g_ij(½|∇τ|² - ⟨τ, Δτ⟩ - ⟨dφ, ∇Δτ⟩) - ⟨∇_iτ, ∇_jτ⟩ + ⟨dφ_i, ∇_jΔτ⟩ + ⟨dφ_j, ∇_iΔτ⟩`.
pub fn stress_triharmonic(ctx: &PointContext, tw: &TensionTower) -> Result<SymTwoTensor, PullbackError> {
    let m = ctx.m;
    let h = ctx.h_values();
    let ginv = ctx.ginv_values();
    let g: Vec<Vec<f64>> = crate::geometry::mat_values(&ctx.g);
    let d = ctx.dphi_values();
    let tau = tw.t_value(0)?;
    let lap = tw.t_value(1)?;
    let nt: Vec<Vec<f64>> = (0..m).map(|i| tw.g_value(0, i)).collect::<Result<_, _>>()?;
    let nl: Vec<Vec<f64>> = (0..m).map(|i| tw.g_value(1, i)).collect::<Result<_, _>>()?;
    let mut grad_sq = 0.0;
    let mut dphi_nl = 0.0;
    for i in 0..m {
        for j in 0..m {
            grad_sq += ginv[i][j] * bundle_inner(&h, &nt[i], &nt[j]);
            dphi_nl += ginv[i][j] * bundle_inner(&h, &d[i], &nl[j]);
        }
    }
    let scalar = 0.5 * grad_sq - bundle_inner(&h, &tau, &lap) - dphi_nl;
    let mut out = SymTwoTensor::zeros(m);
    for i in 0..m {
        for j in i..m {
            let v = g[i][j] * scalar - bundle_inner(&h, &nt[i], &nt[j])
                + bundle_inner(&h, &d[i], &nl[j])
                + bundle_inner(&h, &d[j], &nl[i]);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Closed-form trace `g^{ij}S_ij` and the largest individual term.
pub fn trace_closed_form(ctx: &PointContext, tw: &TensionTower, spec: OrderSpec) -> Result<(f64, f64), PolyError> {
    spec.check_stress()?;
    let m = ctx.m;
    let mf = m as f64;
    let s = spec.s;
    let h = ctx.h_values();
    let ginv = ctx.ginv_values();
    let d = ctx.dphi_values();
    let grads = |j: isize| -> Result<Vec<Vec<f64>>, PullbackError> { (0..m).map(|i| tw.g_value(j, i)).collect() };
    let gip = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                acc += ginv[i][j] * bundle_inner(&h, &a[i], &b[j]);
            }
        }
        acc
    };
    let p = if spec.even { idx(2 * s, 2) } else { idx(2 * s, 1) };
    let q = |l: usize| if spec.even { idx(s + l, 2) } else { idx(s + l, 1) };
    let top = idx(s, 1);
    let mut terms = Vec::new();
    if spec.even {
        let t = tw.t_value(top)?;
        terms.push(0.5 * mf * bundle_inner(&h, &t, &t));
    } else {
        let g = grads(top)?;
        terms.push((0.5 * mf - 1.0) * gip(&g, &g));
    }
    terms.push((2.0 - mf) * gip(&d, &grads(p)?));
    terms.push(-mf * bundle_inner(&h, &tw.t_value(0)?, &tw.t_value(p)?));
    for l in 1..s {
        terms.push(-mf * bundle_inner(&h, &tw.t_value(idx(s, l))?, &tw.t_value(q(l))?));
        terms.push((mf - 2.0) * gip(&grads(idx(s, l + 1))?, &grads(q(l))?));
    }
    let value = terms.iter().sum();
    let scale = terms.iter().fold(0.0f64, |a, t| a.max(t.abs()));
    Ok((value, scale))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub value: Vec<f64>,
    /// largest single product entering any component
    pub scale: f64,
}

/// `(div S)_i = g^{jk}(∂_k S_ij - Γ^l_{ki} S_lj - Γ^l_{kj} S_il)` for a
/// symmetric tensor given as jets of order at least one.
pub fn divergence(ctx: &PointContext, s: &Mat<Jet>) -> Result<Divergence, PullbackError> {
    let m = ctx.m;
    let ginv = ctx.ginv_values();
    let gamma: Vec<Vec<Vec<f64>>> = ctx
        .gamma_m
        .iter()
        .map(|a| a.iter().map(|r| r.iter().map(Jet::value).collect()).collect())
        .collect();
    let sv: Mat<f64> = crate::geometry::mat_values(s);
    let mut ds = vec![vec![vec![0.0; m]; m]; m];
    for (i, row) in s.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            for (k, dk) in ds[i][j].iter_mut().enumerate() {
                *dk = e.partial1(k);
            }
        }
    }
    if s[0][0].order() == 0 {
        return Err(crate::jets::JetError::OrderExhausted.into());
    }
    let mut value = vec![0.0; m];
    let mut scale = 0.0f64;
    for (i, vi) in value.iter_mut().enumerate() {
        for j in 0..m {
            for k in 0..m {
                let w = ginv[j][k];
                if w == 0.0 {
                    continue;
                }
                let t = w * ds[i][j][k];
                scale = scale.max(t.abs());
                let mut acc = t;
                for l in 0..m {
                    let a = w * gamma[l][k][i] * sv[l][j];
                    let b = w * gamma[l][k][j] * sv[i][l];
                    scale = scale.max(a.abs()).max(b.abs());
                    acc -= a + b;
                }
                *vi += acc;
            }
        }
    }
    Ok(Divergence { value, scale })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConservationResidual {
    pub div: Vec<f64>,
    /// `-⟨τ_k, dφ(∂_i)⟩`
    pub rhs: Vec<f64>,
    pub residual: Vec<f64>,
    pub scale: f64,
}

impl ConservationResidual {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    /// Residual over scale; zero when both vanish.
    pub fn relative(&self) -> f64 {
        let r = self.max_residual();
        if r == 0.0 {
            0.0
        } else {
            r / self.scale
        }
    }
}

/// `div S_k + ⟨τ_k, dφ⟩` at `x`.
pub fn conservation_residual(map: &SmoothMap, x: &[f64], spec: OrderSpec) -> Result<ConservationResidual, PolyError> {
    spec.check_stress()?;
    let ctx = map.context(x, spec.conservation_order())?;
    let tw = TensionTower::build(&ctx, spec.tension_depth())?;
    let s = stress_jets(&ctx, &tw, spec, 1)?;
    let div = divergence(&ctx, &s)?;
    let tension = tension_k(&ctx, &tw, spec)?;
    let total = tension.total();
    let h = ctx.h_values();
    let d = ctx.dphi_values();
    let mut scale = div.scale;
    let mut rhs = Vec::with_capacity(ctx.m);
    for di in &d {
        rhs.push(-bundle_inner(&h, &total, di));
        for t in &tension.terms {
            scale = scale.max(bundle_inner(&h, t, di).abs());
        }
    }
    let residual = div.value.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    Ok(ConservationResidual { div: div.value, rhs, residual, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::{parse, Var};
    use crate::geometry::{DomainChart, MetricExprs, TargetGeometry};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sine() -> SmoothMap {
        SmoothMap::from_strings(DomainChart::flat_torus(1).unwrap(), TargetGeometry::euclidean(1).unwrap(), &["sin(x1)"])
            .unwrap()
    }

    #[test]
    fn sine_s2_at_zero() {
        let s = stress_at(&sine(), &[0.0], OrderSpec::new(2).unwrap()).unwrap();
        assert_relative_eq!(s.get(0, 0), -1.0, max_relative = 1e-14);
    }

    #[test]
    fn sine_s3_oracle() {
        // 1-D flat: τ = -sin, Δτ = -sin, so
        // S_3 = ½τ'² - τΔτ - φ'(Δτ)' - τ'² + 2φ'(Δτ)' = -3/2 cos² - sin².
        for x in [PI / 2.0, 0.4, 2.2] {
            let s = stress_at(&sine(), &[x], OrderSpec::new(3).unwrap()).unwrap();
            let (c, sn) = (x.cos(), x.sin());
            let oracle = -1.5 * c * c - sn * sn;
            assert!((s.get(0, 0) - oracle).abs() <= 1e-14, "{} {}", s.get(0, 0), oracle);
        }
    }

    #[test]
    fn sine_odd_trace_oracle() {
        // m = 1, k = 3: (½-1)|τ'|² + ⟨φ', (Δτ)'⟩ - ⟨τ, Δτ⟩ = -½cos² - cos² - sin²
        let x = 1.3;
        let ctx = sine().context(&[x], 6).unwrap();
        let tw = TensionTower::build(&ctx, 2).unwrap();
        let (v, _) = trace_closed_form(&ctx, &tw, OrderSpec::new(3).unwrap()).unwrap();
        let (c, s) = (x.cos(), x.sin());
        assert!((v - (-1.5 * c * c - s * s)).abs() < 1e-14);
    }

    #[test]
    fn s3_matches_direct_formula() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.5*sin(x1) + 0.3*cos(x2)", "0.4*cos(x1)*sin(x2)"],
        )
        .unwrap();
        let ctx = f.context(&[0.7, 1.9], 5).unwrap();
        let tw = TensionTower::build(&ctx, 1).unwrap();
        let a = stress_odd(&ctx, &tw, 1).unwrap();
        let b = stress_triharmonic(&ctx, &tw).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-12 * b.max_abs().max(1.0));
            }
        }
    }

    #[test]
    fn sine_conservation_k3_termwise() {
        // div S_3 = d/dx(-3/2 cos² - sin²) = sin cos and τ_3 = -sin.
        let x = 0.8;
        let r = conservation_residual(&sine(), &[x], OrderSpec::new(3).unwrap()).unwrap();
        let expect_div = x.sin() * x.cos();
        assert!((r.div[0] - expect_div).abs() < 1e-13, "{} {}", r.div[0], expect_div);
        assert!((r.rhs[0] - x.sin() * x.cos()).abs() < 1e-13);
    }

    #[test]
    fn conservation_on_sphere() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.5*sin(x1) + 0.3*cos(x2)", "0.4*cos(x1)*sin(x2) + 0.1*sin(2*x1)"],
        )
        .unwrap();
        for k in 2..=5 {
            let r = conservation_residual(&f, &[0.9, 2.3], OrderSpec::new(k).unwrap()).unwrap();
            assert!(r.relative() <= 1e-7, "k={k} rel={} {:?}", r.relative(), r);
        }
    }

    #[test]
    fn divergence_of_metric_vanishes() {
        let metric = MetricExprs::parse(
            Var::xs(2),
            &[vec!["2 + sin(x1)".into(), "0.2*cos(x2)".into()], vec!["0.2*cos(x2)".into(), "1.5 + cos(x1+x2)".into()]],
        )
        .unwrap();
        let f = SmoothMap::from_strings(
            DomainChart::torus_with_metric(metric).unwrap(),
            TargetGeometry::euclidean(1).unwrap(),
            &["x1"],
        )
        .unwrap();
        let ctx = f.context(&[0.3, 1.2], 3).unwrap();
        let g = crate::geometry::truncate_mat(&ctx.g, 2);
        let d = divergence(&ctx, &g).unwrap();
        assert!(d.value.iter().all(|v| v.abs() <= 1e-14 * d.scale.max(1.0)), "{:?}", d);
        let c: Mat<Jet> = vec![vec![Jet::constant(1.5, 2, 1).unwrap(); 2]; 2];
        let flat = SmoothMap::from_strings(DomainChart::flat_torus(2).unwrap(), TargetGeometry::euclidean(1).unwrap(), &["x1"])
            .unwrap();
        let ctx = flat.context(&[0.3, 1.2], 2).unwrap();
        assert_eq!(divergence(&ctx, &c).unwrap().value, vec![0.0, 0.0]);
    }

    #[test]
    fn divergence_finite_difference() {
        let texts = [["sin(x1)*cos(x2)", "x1*x2^2"], ["x1*x2^2", "exp(0.3*x1) + x2"]];
        let vars = Var::xs(2);
        let e: Vec<Vec<_>> = texts.iter().map(|r| r.iter().map(|t| parse(t, &vars).unwrap()).collect()).collect();
        let x = [0.7, 0.4];
        let jets: Mat<Jet> = e.iter().map(|r| r.iter().map(|t| t.eval_jet(&vars, &x, 1).unwrap()).collect()).collect();
        let flat = SmoothMap::from_strings(DomainChart::flat_torus(2).unwrap(), TargetGeometry::euclidean(1).unwrap(), &["x1"])
            .unwrap();
        let ctx = flat.context(&x, 2).unwrap();
        let d = divergence(&ctx, &jets).unwrap();
        let h = 1e-4;
        for i in 0..2 {
            let mut fd = 0.0;
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                fd += (e[i][j].eval_real(&vars, &xp).unwrap() - e[i][j].eval_real(&vars, &xm).unwrap()) / (2.0 * h);
            }
            assert!((d.value[i] - fd).abs() < 1e-7, "{} {}", d.value[i], fd);
        }
    }

    #[test]
    fn no_stress_for_dirichlet() {
        assert_eq!(stress_at(&sine(), &[0.0], OrderSpec::new(1).unwrap()), Err(PolyError::NoStressForOrder(1)));
    }
}
