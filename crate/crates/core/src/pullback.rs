//! Calculus on the pullback bundle `φ*TN` at a point: the differential,
//! second fundamental form, tension field, the induced connection, the rough
//! Laplacian and the tower of iterated Laplacians of the tension field.
//!
//! Every quantity is carried as jets in the domain variables around the
//! evaluation point. A covariant derivative consumes one jet order and a
//! Laplacian two, so a map evaluated at order `D` yields `Δ^j τ` with
//! `D - 2 - 2j` orders left.

use thiserror::Error;

use crate::exprlang::{EvalError, Expr, Var};
use crate::geometry::{
    check_positive_definite, jet_inverse, levi_civita, mat_values, riemann_values, Christoffel, DomainChart,
    DomainMetric, GeometryError, Mat, Riemann, TargetGeometry,
};
use crate::jets::{Jet, JetError, Layout, MAX_VARS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PullbackError {
    #[error("jet order {available} is insufficient, {required} required")]
    InsufficientOrder { required: usize, available: usize },
    #[error("tower of depth {depth} has no entry {index}")]
    TowerTooShallow { index: isize, depth: usize },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Truncated Fourier series in the domain coordinates plus a linear winding
/// part: `c + w·x + Σ a cos(k·x) + b sin(k·x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierComponent {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub modes: Vec<FourierMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FourierMode {
    pub wave: Vec<i32>,
    pub cos: f64,
    pub sin: f64,
}

impl FourierComponent {
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant + self.linear.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        for md in &self.modes {
            let th: f64 = md.wave.iter().zip(x).map(|(k, xi)| *k as f64 * xi).sum();
            v += md.cos * th.cos() + md.sin * th.sin();
        }
        v
    }

    /// Taylor coefficients in closed form: the `β` coefficient of
    /// `cos(w·x)` is `w^β / β! · cos^{(|β|)}(w·x)`, and likewise for `sin`.
    fn jet(&self, x: &[f64], order: usize) -> Result<Jet, JetError> {
        let m = x.len();
        let layout = Layout::get(m, order)?;
        let monos = layout.monomials();
        let mut c = vec![0.0; monos.len()];
        c[0] = self.constant + self.linear.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        if order >= 1 {
            for (i, w) in self.linear.iter().enumerate() {
                let mut e = [0u8; MAX_VARS];
                e[i] = 1;
                c[layout.index_of(&e).expect("degree one monomial")] += w;
            }
        }
        let mut fact = vec![1.0; order + 1];
        for n in 1..=order {
            fact[n] = fact[n - 1] * n as f64;
        }
        for md in &self.modes {
            let th: f64 = md.wave.iter().zip(x).map(|(k, xi)| *k as f64 * xi).sum();
            let (sn, cs) = th.sin_cos();
            // n-th derivative of a cos t + b sin t, period four in n
            let d = [
                md.cos * cs + md.sin * sn,
                -md.cos * sn + md.sin * cs,
                -md.cos * cs - md.sin * sn,
                md.cos * sn - md.sin * cs,
            ];
            for (slot, beta) in c.iter_mut().zip(monos) {
                let mut coef = 1.0;
                let mut deg = 0;
                for (k, &e) in md.wave.iter().zip(beta.iter()) {
                    coef *= (*k as f64).powi(e as i32) / fact[e as usize];
                    deg += e as usize;
                }
                *slot += coef * d[deg % 4];
            }
        }
        Jet::from_coeffs(m, order, c)
    }
}

/// Component functions of a map.
#[derive(Debug, Clone, PartialEq)]
pub enum MapComponents {
    Exprs(Vec<Expr>),
    Fourier(Vec<FourierComponent>),
}

impl MapComponents {
    pub fn len(&self) -> usize {
        match self {
            MapComponents::Exprs(e) => e.len(),
            MapComponents::Fourier(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn jets(&self, x: &[f64], order: usize) -> Result<Vec<Jet>, PullbackError> {
        match self {
            MapComponents::Exprs(es) => {
                let vars = Var::xs(x.len());
                Ok(es.iter().map(|e| e.eval_jet(&vars, x, order)).collect::<Result<_, _>>()?)
            }
            MapComponents::Fourier(fs) => Ok(fs.iter().map(|f| f.jet(x, order)).collect::<Result<_, _>>()?),
        }
    }

    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>, PullbackError> {
        match self {
            MapComponents::Exprs(es) => {
                let vars = Var::xs(x.len());
                Ok(es.iter().map(|e| e.eval_real(&vars, x)).collect::<Result<_, _>>()?)
            }
            MapComponents::Fourier(fs) => Ok(fs.iter().map(|f| f.value(x)).collect()),
        }
    }
}

/// A map `φ: (M, g) → (N, h)` between charted manifolds.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothMap {
    domain: DomainChart,
    target: TargetGeometry,
    components: MapComponents,
}

impl SmoothMap {
    pub fn new(domain: DomainChart, target: TargetGeometry, components: MapComponents) -> Result<Self, PullbackError> {
        if components.len() != target.dim() {
            return Err(PullbackError::Shape(format!(
                "map has {} components, target has dimension {}",
                components.len(),
                target.dim()
            )));
        }
        if let MapComponents::Exprs(es) = &components {
            let allowed = Var::xs(domain.dim());
            if let Some(v) = es.iter().flat_map(|e| e.vars()).find(|v| !allowed.contains(v)) {
                return Err(PullbackError::Shape(format!("map uses variable {v} outside the domain")));
            }
        }
        if let MapComponents::Fourier(fs) = &components {
            let m = domain.dim();
            if fs.iter().any(|f| f.linear.len() != m || f.modes.iter().any(|md| md.wave.len() != m)) {
                return Err(PullbackError::Shape(format!("Fourier data must have {m} entries per wave vector")));
            }
        }
        Ok(SmoothMap { domain, target, components })
    }

    /// Parse component expressions in `x1..xm`.
    pub fn from_strings(domain: DomainChart, target: TargetGeometry, comps: &[&str]) -> Result<Self, PullbackError> {
        let vars = Var::xs(domain.dim());
        let es = comps
            .iter()
            .map(|c| crate::exprlang::parse(c, &vars).map_err(GeometryError::from))
            .collect::<Result<Vec<_>, _>>()?;
        SmoothMap::new(domain, target, MapComponents::Exprs(es))
    }

    pub fn domain(&self) -> &DomainChart {
        &self.domain
    }

    pub fn target(&self) -> &TargetGeometry {
        &self.target
    }

    pub fn components(&self) -> &MapComponents {
        &self.components
    }

    pub fn with_domain(&self, domain: DomainChart) -> Result<Self, PullbackError> {
        SmoothMap::new(domain, self.target.clone(), self.components.clone())
    }

    pub fn with_components(&self, components: MapComponents) -> Result<Self, PullbackError> {
        SmoothMap::new(self.domain.clone(), self.target.clone(), components)
    }

    pub fn m(&self) -> usize {
        self.domain.dim()
    }

    pub fn n(&self) -> usize {
        self.target.dim()
    }

    pub fn values(&self, x: &[f64]) -> Result<Vec<f64>, PullbackError> {
        self.domain.check_point(x)?;
        self.components.values(x)
    }

    /// All pointwise data at `x` with map jets of order `order`.
    pub fn context(&self, x: &[f64], order: usize) -> Result<PointContext, PullbackError> {
        if order < 1 {
            return Err(PullbackError::InsufficientOrder { required: 1, available: order });
        }
        self.domain.check_point(x)?;
        let m = self.m();
        let n = self.n();
        let phi = self.components.jets(x, order)?;
        let y: Vec<f64> = phi.iter().map(Jet::value).collect();
        self.target.check_point(&y)?;

        let dphi: Mat<Jet> = (0..m)
            .map(|i| phi.iter().map(|p| p.derivative(i)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()?;

        let g = self.domain.metric().jets_at(x, order)?;
        check_positive_definite(&mat_values(&g))?;
        let (ginv, det) = jet_inverse(&g)?;
        let vol = det.sqrt()?;
        let dg: Vec<Mat<Jet>> = (0..m)
            .map(|r| {
                g.iter()
                    .map(|row| row.iter().map(|e| e.derivative(r)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        let gamma_m = levi_civita(&ginv, &dg);
        let lower = order - 1;
        let gamma_trace: Vec<Jet> = (0..m)
            .map(|k| {
                let mut acc = gamma_m[0][0][0].zeros_like();
                for i in 0..m {
                    for j in 0..m {
                        acc += &ginv[i][j].truncate(lower) * &gamma_m[k][i][j];
                    }
                }
                acc
            })
            .collect();

        let (h, dh) = self.target.metric().composed(&phi)?;
        let (hinv, _) = jet_inverse(&h)?;
        let gamma_n = levi_civita(&hinv, &dh);
        let conn: Vec<Mat<Jet>> = (0..m)
            .map(|i| {
                (0..n)
                    .map(|a| {
                        (0..n)
                            .map(|c| {
                                let mut acc = dphi[i][0].zeros_like();
                                for b in 0..n {
                                    acc += &gamma_n[a][b][c] * &dphi[i][b];
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let riemann = riemann_values(&self.target.curvature(&y, 0)?);

        Ok(PointContext {
            x: x.to_vec(),
            m,
            n,
            order,
            phi,
            dphi,
            g,
            ginv,
            vol,
            gamma_m,
            gamma_trace,
            h,
            gamma_n,
            conn,
            riemann,
        })
    }

    /// `φ ∘ u` over the domain carrying `u*g`. Requires expression components
    /// and an expression domain metric.
    pub fn precompose(&self, u: &[Expr]) -> Result<SmoothMap, PullbackError> {
        let m = self.m();
        if u.len() != m {
            return Err(PullbackError::Shape(format!("diffeomorphism needs {m} components")));
        }
        let base = match self.domain.metric() {
            DomainMetric::Exprs(g) => g.clone(),
            DomainMetric::PulledBack { .. } => {
                return Err(PullbackError::Shape("cannot pull back an already pulled-back metric".into()))
            }
        };
        let comps = match &self.components {
            MapComponents::Exprs(es) => es
                .iter()
                .map(|e| {
                    e.substitute(&|v| match v {
                        Var::X(i) => u.get(i as usize).cloned(),
                        Var::Y(_) => None,
                    })
                })
                .collect(),
            MapComponents::Fourier(_) => {
                return Err(PullbackError::Shape("precomposition needs expression components".into()))
            }
        };
        let domain = self.domain.with_metric(DomainMetric::PulledBack { base, map: u.to_vec() });
        SmoothMap::new(domain, self.target.clone(), MapComponents::Exprs(comps))
    }
}

/// A section of `φ*TN` near the evaluation point: `n` jets in `x`. Its jet
/// order is the remaining differentiation budget.
#[derive(Debug, Clone)]
pub struct Section(pub Vec<Jet>);

impl Section {
    pub fn order(&self) -> usize {
        self.0[0].order()
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(Jet::value).collect()
    }

    pub fn truncate(&self, order: usize) -> Section {
        Section(self.0.iter().map(|j| j.truncate(order)).collect())
    }

    pub fn zeros_like(&self) -> Section {
        Section(self.0.iter().map(Jet::zeros_like).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |a, j| a.max(j.value().abs()))
    }
}

/// Everything the local formulas need at one point, with map jets of order `D`:
/// `φ, g, g^{-1}, sqrt det g, h(φ)` at order `D`; `dφ`, both Christoffel
/// families and the connection matrices at order `D - 1`.
#[derive(Debug, Clone)]
pub struct PointContext {
    pub x: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub order: usize,
    pub phi: Vec<Jet>,
    /// `dphi[i][α] = ∂_i φ^α`
    pub dphi: Mat<Jet>,
    pub g: Mat<Jet>,
    pub ginv: Mat<Jet>,
    pub vol: Jet,
    pub gamma_m: Christoffel,
    /// `g^{ij} Γ^k_{ij}`
    pub gamma_trace: Vec<Jet>,
    pub h: Mat<Jet>,
    /// target Christoffels at `φ(x)` as jets in `x`
    pub gamma_n: Christoffel,
    /// `conn[i][α][γ] = Γ^α_{βγ}(φ) ∂_i φ^β`, so `∇_i V = ∂_i V + conn[i] V`
    pub conn: Vec<Mat<Jet>>,
    /// target curvature at `φ(x)`
    pub riemann: Riemann<f64>,
}

fn tr(j: &Jet, r: usize) -> Jet {
    j.truncate(r)
}

impl PointContext {
    pub fn ginv_values(&self) -> Mat<f64> {
        mat_values(&self.ginv)
    }

    pub fn h_values(&self) -> Mat<f64> {
        mat_values(&self.h)
    }

    pub fn dphi_values(&self) -> Mat<f64> {
        mat_values(&self.dphi)
    }

    pub fn phi_values(&self) -> Vec<f64> {
        self.phi.iter().map(Jet::value).collect()
    }

    /// `dphi[i]` as a section of order `D - 1`.
    pub fn differential(&self) -> Vec<Section> {
        self.dphi.iter().map(|row| Section(row.clone())).collect()
    }

    /// `|dφ|² = g^{ij} h_{αβ} ∂_iφ^α ∂_jφ^β` at the point.
    pub fn dirichlet_density(&self) -> f64 {
        let ginv = self.ginv_values();
        let h = self.h_values();
        let d = self.dphi_values();
        let mut acc = 0.0;
        for i in 0..self.m {
            for j in 0..self.m {
                acc += ginv[i][j] * crate::geometry::bundle_inner(&h, &d[i], &d[j]);
            }
        }
        acc
    }

    /// `⟨V, W⟩` as a jet at the lower of the two orders.
    pub fn inner_jet(&self, v: &Section, w: &Section) -> Jet {
        let r = v.order().min(w.order());
        let mut acc = v.0[0].truncate(r).zeros_like();
        for a in 0..self.n {
            let va = tr(&v.0[a], r);
            for b in 0..self.n {
                acc += &(&tr(&self.h[a][b], r) * &va) * &tr(&w.0[b], r);
            }
        }
        acc
    }

    /// `∇_i V` for every coordinate direction; consumes one order.
    pub fn nabla(&self, v: &Section) -> Result<Vec<Section>, PullbackError> {
        let r = v.order();
        if r == 0 {
            return Err(JetError::OrderExhausted.into());
        }
        let low: Vec<Jet> = v.0.iter().map(|c| c.truncate(r - 1)).collect();
        (0..self.m)
            .map(|i| {
                let comps = (0..self.n)
                    .map(|a| {
                        let mut acc = v.0[a].derivative(i)?;
                        for (c, lc) in low.iter().enumerate() {
                            acc += &tr(&self.conn[i][a][c], r - 1) * lc;
                        }
                        Ok(acc)
                    })
                    .collect::<Result<Vec<_>, PullbackError>>()?;
                Ok(Section(comps))
            })
            .collect()
    }

    /// `∇²V(∂_i, ∂_j) = ∇_i∇_j V - Γ^k_{ij} ∇_k V`; consumes two orders.
    pub fn hessian(&self, v: &Section) -> Result<Vec<Vec<Section>>, PullbackError> {
        let w = self.nabla(v)?;
        self.hessian_from_grad(&w)
    }

    pub fn hessian_from_grad(&self, w: &[Section]) -> Result<Vec<Vec<Section>>, PullbackError> {
        let r = w[0].order();
        if r == 0 {
            return Err(JetError::OrderExhausted.into());
        }
        let low: Vec<Section> = w.iter().map(|s| s.truncate(r - 1)).collect();
        let nw: Vec<Vec<Section>> = w.iter().map(|s| self.nabla(s)).collect::<Result<_, _>>()?;
        let mut out = vec![Vec::with_capacity(self.m); self.m];
        for i in 0..self.m {
            for j in 0..self.m {
                let mut s = nw[j][i].clone();
                for (k, lk) in low.iter().enumerate() {
                    let gk = tr(&self.gamma_m[k][i][j], r - 1);
                    for a in 0..self.n {
                        s.0[a] -= &gk * &lk.0[a];
                    }
                }
                out[i].push(s);
            }
        }
        Ok(out)
    }

    /// `ΔV = -g^{ij}(∇_i∇_j V - Γ^k_{ij}∇_k V)`; consumes two orders.
    pub fn rough_laplacian(&self, v: &Section) -> Result<Section, PullbackError> {
        let w = self.nabla(v)?;
        self.laplacian_from_grad(&w)
    }

    /// Laplacian of a section given its covariant derivatives `w[j] = ∇_j V`.
    pub fn laplacian_from_grad(&self, w: &[Section]) -> Result<Section, PullbackError> {
        let r = w[0].order();
        if r == 0 {
            return Err(JetError::OrderExhausted.into());
        }
        let mut acc: Vec<Jet> = w[0].truncate(r - 1).zeros_like().0;
        for (j, wj) in w.iter().enumerate() {
            let nj = self.nabla(wj)?;
            for (i, nij) in nj.iter().enumerate() {
                let gij = tr(&self.ginv[i][j], r - 1);
                for a in 0..self.n {
                    acc[a] -= &gij * &nij.0[a];
                }
            }
            let ck = tr(&self.gamma_trace[j], r - 1);
            for a in 0..self.n {
                acc[a] += &ck * &tr(&wj.0[a], r - 1);
            }
        }
        Ok(Section(acc))
    }

    /// `(∇dφ)^α_{ij} = ∂_i∂_jφ^α - Γ^k_{ij}∂_kφ^α + Γ^α_{βγ}∂_iφ^β∂_jφ^γ`,
    /// order `D - 2`, symmetric in `i, j` by construction.
    pub fn second_fundamental_form(&self) -> Result<Vec<Vec<Section>>, PullbackError> {
        let r = self.order - 1;
        if r == 0 {
            return Err(PullbackError::InsufficientOrder { required: 2, available: self.order });
        }
        let low: Mat<Jet> = self.dphi.iter().map(|row| row.iter().map(|j| j.truncate(r - 1)).collect()).collect();
        let zero = low[0][0].zeros_like();
        let mut out = vec![vec![Section(vec![zero.clone(); self.n]); self.m]; self.m];
        for i in 0..self.m {
            for j in i..self.m {
                let mut comps = Vec::with_capacity(self.n);
                for a in 0..self.n {
                    let mut acc = self.dphi[j][a].derivative(i)?;
                    for (k, lk) in low.iter().enumerate() {
                        acc -= &tr(&self.gamma_m[k][i][j], r - 1) * &lk[a];
                    }
                    for c in 0..self.n {
                        acc += &tr(&self.conn[i][a][c], r - 1) * &low[j][c];
                    }
                    comps.push(acc);
                }
                out[j][i] = Section(comps.clone());
                out[i][j] = Section(comps);
            }
        }
        Ok(out)
    }

    /// `τ = g^{ij}(∇dφ)_{ij}` at order `D - 2`.
    pub fn tension(&self) -> Result<Section, PullbackError> {
        let b = self.second_fundamental_form()?;
        let r = self.order - 2;
        let mut acc = b[0][0].zeros_like().0;
        for i in 0..self.m {
            for j in 0..self.m {
                let gij = tr(&self.ginv[i][j], r);
                for a in 0..self.n {
                    acc[a] += &gij * &b[i][j].0[a];
                }
            }
        }
        Ok(Section(acc))
    }
}

/// Map-jet order needed for a tower of depth `depth`.
pub fn tower_order(depth: usize) -> usize {
    2 * depth + 2
}

/// `T_j = Δ^j τ` for `j = 0..=J` and `G_j = ∇T_j` wherever `T_j` has a
/// jet order left. `T_j` carries order `D - 2 - 2j`, `G_j` one less.
#[derive(Debug, Clone)]
pub struct TensionTower {
    depth: usize,
    t: Vec<Section>,
    g: Vec<Option<Vec<Section>>>,
}

impl TensionTower {
    pub fn build(ctx: &PointContext, depth: usize) -> Result<Self, PullbackError> {
        let required = tower_order(depth);
        if ctx.order < required {
            return Err(PullbackError::InsufficientOrder { required, available: ctx.order });
        }
        let mut t = vec![ctx.tension()?];
        let mut g = Vec::with_capacity(depth + 1);
        for j in 0..=depth {
            let grad = if t[j].order() >= 1 { Some(ctx.nabla(&t[j])?) } else { None };
            if j < depth {
                let next = ctx.laplacian_from_grad(grad.as_ref().expect("order checked above"))?;
                t.push(next);
            }
            g.push(grad);
        }
        Ok(TensionTower { depth, t, g })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// `T_j` truncated to `order`; `T_{-1} = 0`.
    pub fn t_at(&self, j: isize, order: usize) -> Result<Section, PullbackError> {
        if j < 0 {
            return self.zero_section(order);
        }
        let s = self.t.get(j as usize).ok_or(PullbackError::TowerTooShallow { index: j, depth: self.depth })?;
        if s.order() < order {
            return Err(PullbackError::InsufficientOrder { required: order, available: s.order() });
        }
        Ok(s.truncate(order))
    }

    /// `∇_i T_j` truncated to `order`; `G_{-1} = 0`.
    pub fn g_at(&self, j: isize, i: usize, order: usize) -> Result<Section, PullbackError> {
        if j < 0 {
            return self.zero_section(order);
        }
        let entry = self.g.get(j as usize).ok_or(PullbackError::TowerTooShallow { index: j, depth: self.depth })?;
        let grad = entry.as_ref().ok_or(PullbackError::InsufficientOrder {
            required: order + 1,
            available: self.t[j as usize].order(),
        })?;
        if grad[i].order() < order {
            return Err(PullbackError::InsufficientOrder { required: order, available: grad[i].order() });
        }
        Ok(grad[i].truncate(order))
    }

    fn zero_section(&self, order: usize) -> Result<Section, PullbackError> {
        let nv = self.t[0].0[0].num_vars();
        let z = Jet::constant(0.0, nv, order)?;
        Ok(Section(vec![z; self.t[0].0.len()]))
    }

    pub fn t_value(&self, j: isize) -> Result<Vec<f64>, PullbackError> {
        Ok(self.t_at(j, 0)?.values())
    }

    pub fn g_value(&self, j: isize, i: usize) -> Result<Vec<f64>, PullbackError> {
        Ok(self.g_at(j, i, 0)?.values())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MetricExprs;
    use approx::assert_relative_eq;

    fn line_map(expr: &str) -> SmoothMap {
        SmoothMap::from_strings(DomainChart::flat_torus(1).unwrap(), TargetGeometry::euclidean(1).unwrap(), &[expr])
            .unwrap()
    }

    fn real_line_map(expr: &str) -> SmoothMap {
        let d = DomainChart::new(
            DomainMetric::Exprs(MetricExprs::flat(Var::xs(1))),
            vec![(-10.0, 10.0)],
            vec![false],
        )
        .unwrap();
        SmoothMap::from_strings(d, TargetGeometry::euclidean(1).unwrap(), &[expr]).unwrap()
    }

    #[test]
    fn differential_examples() {
        let id = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::euclidean(2).unwrap(),
            &["x1", "x2"],
        )
        .unwrap();
        let ctx = id.context(&[1.0, 2.0], 1).unwrap();
        assert_eq!(ctx.dphi_values(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let ctx = line_map("sin(x1)").context(&[0.0], 1).unwrap();
        assert_eq!(ctx.dphi_values(), vec![vec![1.0]]);
        let ctx = line_map("3*x1").context(&[0.7], 1).unwrap();
        assert_eq!(ctx.dirichlet_density(), 9.0);
    }

    #[test]
    fn second_fundamental_form_examples() {
        let affine = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::euclidean(2).unwrap(),
            &["2*x1 - x2 + 1", "x1 + 3*x2"],
        )
        .unwrap();
        let b = affine.context(&[0.4, 0.9], 3).unwrap().second_fundamental_form().unwrap();
        assert!(b.iter().flatten().flat_map(|s| s.0.iter()).all(|j| j.max_abs() == 0.0));
        let x = 1.3;
        let b = real_line_map("x1^4").context(&[x], 2).unwrap().second_fundamental_form().unwrap();
        assert_relative_eq!(b[0][0].values()[0], 12.0 * x * x, max_relative = 1e-14);
    }

    #[test]
    fn sff_symmetry_exact() {
        let d = DomainChart::torus_with_metric(
            MetricExprs::parse(
                Var::xs(2),
                &[vec!["2 + sin(x1)".into(), "0.3*cos(x2)".into()], vec!["0.3*cos(x2)".into(), "1.5".into()]],
            )
            .unwrap(),
        )
        .unwrap();
        let f = SmoothMap::from_strings(
            d,
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.4*sin(x1) + 0.1*cos(x2)", "0.3*cos(x1 + x2)"],
        )
        .unwrap();
        let b = f.context(&[0.3, 1.1], 4).unwrap().second_fundamental_form().unwrap();
        for a in 0..2 {
            assert_eq!(b[0][1].0[a].coeffs(), b[1][0].0[a].coeffs());
        }
    }

    #[test]
    fn tension_examples() {
        for k in 1..4 {
            let f = line_map(&format!("{k}*x1"));
            let t = f.context(&[0.5], 2).unwrap().tension().unwrap();
            assert_eq!(t.values(), vec![0.0]);
        }
        let x = 0.8;
        let t = line_map("sin(x1)").context(&[x], 2).unwrap().tension().unwrap();
        assert_relative_eq!(t.values()[0], -x.sin(), max_relative = 1e-14);
        // identity on a curved chart is totally geodesic
        let s = TargetGeometry::sphere_stereographic(2, 1.0).unwrap();
        let d = DomainChart::new(
            DomainMetric::Exprs(s.metric().rename_vars(Var::xs(2))),
            vec![(-2.0, 2.0), (-2.0, 2.0)],
            vec![false, false],
        )
        .unwrap();
        let id = SmoothMap::from_strings(d, s, &["x1", "x2"]).unwrap();
        let t = id.context(&[0.3, -0.6], 2).unwrap().tension().unwrap();
        assert!(t.max_abs() < 1e-14, "{:?}", t.values());
    }

    #[test]
    fn nabla_examples() {
        let sphere = TargetGeometry::sphere_stereographic(2, 1.0).unwrap();
        let f = line_map("x1");
        let ctx = f.context(&[0.4], 3).unwrap();
        let c = Section(vec![Jet::constant(2.0, 1, 2).unwrap()]);
        assert_eq!(ctx.nabla(&c).unwrap()[0].values(), vec![0.0]);
        let x = 0.4;
        let v = Section(vec![Jet::variable(0, x, 1, 2).unwrap().sin()]);
        assert_relative_eq!(ctx.nabla(&v).unwrap()[0].values()[0], x.cos(), max_relative = 1e-15);

        // Leibniz rule on a sphere target
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            sphere,
            &["0.5*sin(x1) + 0.2*cos(x2)", "0.4*cos(x1) * sin(x2)"],
        )
        .unwrap();
        let ctx = f.context(&[0.7, 2.1], 4).unwrap();
        let v = ctx.differential()[0].clone();
        let w = ctx.differential()[1].clone();
        let vw = ctx.inner_jet(&v, &w);
        let nv = ctx.nabla(&v).unwrap();
        let nw = ctx.nabla(&w).unwrap();
        for i in 0..2 {
            let lhs = vw.derivative(i).unwrap().value();
            let rhs = ctx.inner_jet(&nv[i], &w.truncate(2)).value() + ctx.inner_jet(&v.truncate(2), &nw[i]).value();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn laplacian_examples() {
        let ctx = real_line_map("x1").context(&[0.6], 3).unwrap();
        let v = Section(vec![Jet::variable(0, 0.6, 1, 2).unwrap().powi(2).unwrap()]);
        assert_relative_eq!(ctx.rough_laplacian(&v).unwrap().values()[0], -2.0, max_relative = 1e-15);
        let x = 0.6;
        let v = Section(vec![Jet::variable(0, x, 1, 2).unwrap().sin()]);
        assert_relative_eq!(ctx.rough_laplacian(&v).unwrap().values()[0], x.sin(), max_relative = 1e-14);
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::sphere_stereographic(2, 1.0).unwrap(),
            &["0.5*sin(x1)", "0.4*cos(x2)"],
        )
        .unwrap();
        let ctx = f.context(&[0.7, 2.1], 4).unwrap();
        let c = Section(vec![Jet::constant(0.0, 2, 3).unwrap(); 2]);
        assert_eq!(ctx.rough_laplacian(&c).unwrap().values(), vec![0.0, 0.0]);
        assert!(matches!(ctx.rough_laplacian(&c.truncate(1)), Err(PullbackError::Jet(JetError::OrderExhausted))));
    }

    #[test]
    fn tower_sin() {
        let x = 1.1;
        let f = line_map("sin(x1)");
        let ctx = f.context(&[x], tower_order(3) + 1).unwrap();
        let tw = TensionTower::build(&ctx, 3).unwrap();
        for j in 0..=3 {
            assert_relative_eq!(tw.t_value(j).unwrap()[0], -x.sin(), max_relative = 1e-13);
            assert_relative_eq!(tw.g_value(j, 0).unwrap()[0], -x.cos(), max_relative = 1e-13);
        }
        assert_eq!(tw.t_value(-1).unwrap(), vec![0.0]);
    }

    #[test]
    fn tower_quartic() {
        let x = 0.7;
        let ctx = real_line_map("x1^4").context(&[x], tower_order(3)).unwrap();
        let tw = TensionTower::build(&ctx, 3).unwrap();
        assert_relative_eq!(tw.t_value(0).unwrap()[0], 12.0 * x * x, max_relative = 1e-14);
        assert_relative_eq!(tw.t_value(1).unwrap()[0], -24.0, max_relative = 1e-14);
        assert_eq!(tw.t_value(2).unwrap()[0], 0.0);
        assert_eq!(tw.t_value(3).unwrap()[0], 0.0);
        let short = real_line_map("x1^4").context(&[x], 7).unwrap();
        assert_eq!(
            TensionTower::build(&short, 3).unwrap_err(),
            PullbackError::InsufficientOrder { required: 8, available: 7 }
        );
    }

    #[test]
    fn tower_gradients_recomputed() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(2).unwrap(),
            TargetGeometry::hyperbolic_ball(2, 1.0).unwrap(),
            &["0.3*sin(x1) + 0.1*cos(x2)", "0.2*sin(x1 + x2)"],
        )
        .unwrap();
        let ctx = f.context(&[0.4, 1.7], 7).unwrap();
        let tw = TensionTower::build(&ctx, 2).unwrap();
        for j in 0..2 {
            let t = tw.t_at(j, 7 - 2 - 2 * j as usize).unwrap();
            let g = ctx.nabla(&t).unwrap();
            for (i, gi) in g.iter().enumerate() {
                let stored = tw.g_value(j, i).unwrap();
                for (a, b) in gi.values().iter().zip(&stored) {
                    assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn flat_target_tension_is_laplace_beltrami() {
        // τ^α = g^{ij}(∂_i∂_jφ^α - Γ^k_ij ∂_kφ^α) = (1/√g) ∂_i(√g g^{ij} ∂_jφ^α)
        let metric = MetricExprs::parse(
            Var::xs(2),
            &[vec!["2 + sin(x1)".into(), "0.2".into()], vec!["0.2".into(), "1 + 0.5*cos(x2)^2".into()]],
        )
        .unwrap();
        let d = DomainChart::torus_with_metric(metric.clone()).unwrap();
        let f = SmoothMap::from_strings(d, TargetGeometry::euclidean(1).unwrap(), &["sin(x1)*cos(2*x2)"]).unwrap();
        let x = [0.9, 0.3];
        let ctx = f.context(&x, 2).unwrap();
        let tau = ctx.tension().unwrap().values()[0];
        // independent divergence form
        let g = metric.jets_at(&x, 1).unwrap();
        let (ginv, det) = jet_inverse(&g).unwrap();
        let sq = det.sqrt().unwrap();
        let phi = crate::exprlang::parse("sin(x1)*cos(2*x2)", &Var::xs(2)).unwrap().eval_jet(&Var::xs(2), &x, 2).unwrap();
        let mut lb = 0.0;
        for i in 0..2 {
            let mut flux = sq.zeros_like();
            for j in 0..2 {
                flux += &(&sq * &ginv[i][j]) * &phi.derivative(j).unwrap().truncate(1);
            }
            lb += flux.derivative(i).unwrap().value();
        }
        lb /= sq.value();
        assert!((tau - lb).abs() <= 1e-12 * lb.abs().max(1.0), "{tau} {lb}");
    }

    #[test]
    fn chart_exit_rejected() {
        let f = SmoothMap::from_strings(
            DomainChart::flat_torus(1).unwrap(),
            TargetGeometry::hyperbolic_ball(1, 1.0).unwrap(),
            &["2*sin(x1)"],
        )
        .unwrap();
        assert!(matches!(
            f.context(&[1.5], 2),
            Err(PullbackError::Geometry(GeometryError::ChartViolation { .. }))
        ));
    }

    #[test]
    fn fourier_jet_matches_expression() {
        let f = FourierComponent {
            constant: 0.4,
            linear: vec![1.0, -0.5],
            modes: vec![
                FourierMode { wave: vec![1, -2], cos: 0.3, sin: -0.7 },
                FourierMode { wave: vec![0, 3], cos: 0.0, sin: 0.25 },
            ],
        };
        let e = crate::exprlang::parse(
            "0.4 + x1 - 0.5*x2 + 0.3*cos(x1 - 2*x2) - 0.7*sin(x1 - 2*x2) + 0.25*sin(3*x2)",
            &Var::xs(2),
        )
        .unwrap();
        let x = [0.7, 2.1];
        let a = f.jet(&x, 6).unwrap();
        let b = e.eval_jet(&Var::xs(2), &x, 6).unwrap();
        for (p, q) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((p - q).abs() <= 1e-13 * (1.0 + q.abs()), "{p} {q}");
        }
        assert!((a.value() - f.value(&x)).abs() < 1e-15);
    }
}
