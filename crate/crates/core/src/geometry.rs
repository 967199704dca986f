//! Charted Riemannian manifolds: metrics given by expression matrices,
//! Levi-Civita Christoffel symbols, the curvature tensor and the built-in
//! constant-curvature targets.
//!
//! Index conventions: `gamma[k][i][j]` is `Γ^k_{ij}` and `riemann[a][b][c][d]`
//! is `R^a_{bcd}` with `(R(X,Y)Z)^a = R^a_{bcd} X^c Y^d Z^b` and
//! `R(X,Y)Z = ∇_X∇_Y Z - ∇_Y∇_X Z - ∇_[X,Y] Z`.

use thiserror::Error;

use crate::exprlang::{parse, EvalError, Expr, ParseError, Var};
use crate::jets::{Jet, JetError};

pub type Mat<T> = Vec<Vec<T>>;
/// `Γ^k_{ij}` as `[k][i][j]`.
pub type Christoffel = Vec<Vec<Vec<Jet>>>;
/// `R^a_{bcd}` as `[a][b][c][d]`.
pub type Riemann<T> = Vec<Vec<Vec<Vec<T>>>>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("metric is not positive definite (leading minors {0:?})")]
    NotPositiveDefinite(Vec<f64>),
    #[error("singular matrix (determinant {0})")]
    Singular(f64),
    #[error("metric expression matrix is not symmetric at ({0}, {1})")]
    AsymmetricMetric(usize, usize),
    #[error("dimension {0} outside supported range 1..=3")]
    Dimension(usize),
    #[error("{0}")]
    Shape(String),
    #[error("point {point:?} leaves the chart: {reason}")]
    ChartViolation { point: Vec<f64>, reason: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Jet(#[from] JetError),
}

/// A symmetric 2-tensor value at a point; only the upper triangle is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTwoTensor {
    dim: usize,
    upper: Vec<f64>,
}

impl SymTwoTensor {
    pub fn zeros(dim: usize) -> Self {
        SymTwoTensor { dim, upper: vec![0.0; dim * (dim + 1) / 2] }
    }

    /// Upper triangle of `m` is used; the lower triangle is ignored.
    pub fn from_upper(m: &Mat<f64>) -> Self {
        let dim = m.len();
        let mut t = SymTwoTensor::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                t.set(i, j, m[i][j]);
            }
        }
        t
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        a * self.dim - a * (a + 1) / 2 + b
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.slot(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.upper[s] = v;
    }

    pub fn to_matrix(&self) -> Mat<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.get(i, j)).collect()).collect()
    }

    /// `g^{ia} g^{jb} S_ij W_ab`.
    pub fn inner(&self, other: &SymTwoTensor, ginv: &Mat<f64>) -> f64 {
        let m = self.dim;
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        acc += ginv[i][a] * ginv[j][b] * self.get(i, j) * other.get(a, b);
                    }
                }
            }
        }
        acc
    }

    /// `g^{ij} S_ij`.
    pub fn trace(&self, ginv: &Mat<f64>) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += ginv[i][j] * self.get(i, j);
            }
        }
        acc
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn det3(g: &Mat<f64>) -> f64 {
    match g.len() {
        1 => g[0][0],
        2 => g[0][0] * g[1][1] - g[0][1] * g[1][0],
        _ => {
            g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
                + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0])
        }
    }
}

/// Leading principal minors; all positive iff the symmetric matrix is
/// positive definite.
pub fn leading_minors(g: &Mat<f64>) -> Vec<f64> {
    (1..=g.len())
        .map(|k| {
            let sub: Mat<f64> = g[..k].iter().map(|r| r[..k].to_vec()).collect();
            det3(&sub)
        })
        .collect()
}

pub fn check_positive_definite(g: &Mat<f64>) -> Result<(), GeometryError> {
    let minors = leading_minors(g);
    if minors.iter().all(|&d| d > 0.0 && d.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NotPositiveDefinite(minors))
    }
}

/// Inverse and `sqrt(det g)` of a positive-definite metric value, `m <= 3`.
pub fn metric_inverse_volume(g: &Mat<f64>) -> Result<(Mat<f64>, f64), GeometryError> {
    let m = g.len();
    if !(1..=3).contains(&m) || g.iter().any(|r| r.len() != m) {
        return Err(GeometryError::Dimension(m));
    }
    let det = det3(g);
    if det <= 0.0 || !det.is_finite() {
        return Err(GeometryError::Singular(det));
    }
    let inv = match m {
        1 => vec![vec![1.0 / det]],
        2 => vec![vec![g[1][1] / det, -g[0][1] / det], vec![-g[1][0] / det, g[0][0] / det]],
        _ => {
            let mut inv = vec![vec![0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    inv[i][j] = (g[r0][c0] * g[r1][c1] - g[r0][c1] * g[r1][c0]) / det;
                }
            }
            inv
        }
    };
    Ok((inv, det.sqrt()))
}

/// Jet-valued inverse and determinant by the adjugate formula.
pub fn jet_inverse(g: &Mat<Jet>) -> Result<(Mat<Jet>, Jet), GeometryError> {
    let m = g.len();
    let det = match m {
        1 => g[0][0].clone(),
        2 => &g[0][0] * &g[1][1] - &g[0][1] * &g[1][0],
        3 => {
            let c0 = &g[1][1] * &g[2][2] - &g[1][2] * &g[2][1];
            let c1 = &g[1][0] * &g[2][2] - &g[1][2] * &g[2][0];
            let c2 = &g[1][0] * &g[2][1] - &g[1][1] * &g[2][0];
            &g[0][0] * &c0 - &g[0][1] * &c1 + &g[0][2] * &c2
        }
        _ => return Err(GeometryError::Dimension(m)),
    };
    if det.value() <= 0.0 || !det.value().is_finite() {
        return Err(GeometryError::Singular(det.value()));
    }
    let rdet = det.recip()?;
    let inv = match m {
        1 => vec![vec![rdet.clone()]],
        2 => vec![
            vec![&g[1][1] * &rdet, -(&g[0][1] * &rdet)],
            vec![-(&g[1][0] * &rdet), &g[0][0] * &rdet],
        ],
        _ => {
            let mut inv = vec![Vec::with_capacity(3), Vec::with_capacity(3), Vec::with_capacity(3)];
            for (i, row) in inv.iter_mut().enumerate() {
                for j in 0..3 {
                    let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                    let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                    let cof = &g[r0][c0] * &g[r1][c1] - &g[r0][c1] * &g[r1][c0];
                    row.push(&cof * &rdet);
                }
            }
            inv
        }
    };
    Ok((inv, det))
}

pub fn truncate_mat(a: &Mat<Jet>, order: usize) -> Mat<Jet> {
    a.iter().map(|r| r.iter().map(|j| j.truncate(order)).collect()).collect()
}

pub fn mat_values(a: &Mat<Jet>) -> Mat<f64> {
    a.iter().map(|r| r.iter().map(Jet::value).collect()).collect()
}

/// Levi-Civita connection `Γ^k_{ij} = ½ g^{kr}(∂_i g_{rj} + ∂_j g_{ri} - ∂_r g_{ij})`
/// from the inverse metric and `dg[r][i][j] = ∂_r g_ij`. The result has the
/// order of `dg`; it is symmetric in `i, j` by construction.
pub fn levi_civita(ginv: &Mat<Jet>, dg: &[Mat<Jet>]) -> Christoffel {
    let m = ginv.len();
    let order = dg[0][0][0].order();
    let ginv = truncate_mat(ginv, order);
    // first kind: Γ_{r,ij}
    let mut first = vec![vec![vec![None::<Jet>; m]; m]; m];
    for r in 0..m {
        for i in 0..m {
            for j in i..m {
                let v = (&dg[i][r][j] + &dg[j][r][i] - &dg[r][i][j]).scale(0.5);
                first[r][i][j] = Some(v);
            }
        }
    }
    let zero = ginv[0][0].zeros_like();
    let mut gamma = vec![vec![vec![zero.clone(); m]; m]; m];
    for k in 0..m {
        for i in 0..m {
            for j in i..m {
                let mut acc = zero.clone();
                for r in 0..m {
                    acc += &ginv[k][r] * first[r][i][j].as_ref().expect("upper triangle filled");
                }
                gamma[k][j][i] = acc.clone();
                gamma[k][i][j] = acc;
            }
        }
    }
    gamma
}

/// Riemann tensor from Christoffel jets and their derivatives;
/// `dgamma[c][a][i][j] = ∂_c Γ^a_{ij}`. Result has the order of `dgamma`.
pub fn riemann_from(gamma: &Christoffel, dgamma: &[Christoffel]) -> Riemann<Jet> {
    let n = gamma.len();
    let order = dgamma[0][0][0][0].order();
    let g: Christoffel = gamma.iter().map(|m| truncate_mat(m, order)).collect();
    let zero = g[0][0][0].zeros_like();
    let mut r = vec![vec![vec![vec![zero.clone(); n]; n]; n]; n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    if c == d {
                        continue;
                    }
                    if d < c {
                        r[a][b][c][d] = -&r[a][b][d][c];
                        continue;
                    }
                    let mut acc = &dgamma[c][a][d][b] - &dgamma[d][a][c][b];
                    for l in 0..n {
                        acc += &g[a][c][l] * &g[l][d][b];
                        acc -= &g[a][d][l] * &g[l][c][b];
                    }
                    r[a][b][c][d] = acc;
                }
            }
        }
    }
    r
}

pub fn riemann_values(r: &Riemann<Jet>) -> Riemann<f64> {
    r.iter()
        .map(|a| a.iter().map(|b| b.iter().map(|c| c.iter().map(Jet::value).collect()).collect()).collect())
        .collect()
}

/// `(R(X,Y)Z)^a = R^a_{bcd} X^c Y^d Z^b`.
pub fn apply_riemann(r: &Riemann<f64>, x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    let n = r.len();
    let mut out = vec![0.0; n];
    for (a, o) in out.iter_mut().enumerate() {
        for b in 0..n {
            if z[b] == 0.0 {
                continue;
            }
            for c in 0..n {
                for d in 0..n {
                    *o += r[a][b][c][d] * x[c] * y[d] * z[b];
                }
            }
        }
    }
    out
}

/// `⟨V, W⟩ = h_{αβ} V^α W^β`.
pub fn bundle_inner(h: &Mat<f64>, v: &[f64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, va) in v.iter().enumerate() {
        for (b, wb) in w.iter().enumerate() {
            acc += h[a][b] * va * wb;
        }
    }
    acc
}

/// A symmetric matrix of expressions in a fixed set of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricExprs {
    vars: Vec<Var>,
    exprs: Mat<Expr>,
}

impl MetricExprs {
    pub fn new(vars: Vec<Var>, exprs: Mat<Expr>) -> Result<Self, GeometryError> {
        let m = vars.len();
        if !(1..=3).contains(&m) {
            return Err(GeometryError::Dimension(m));
        }
        if exprs.len() != m || exprs.iter().any(|r| r.len() != m) {
            return Err(GeometryError::Shape(format!("metric must be {m}x{m}")));
        }
        for i in 0..m {
            for j in i + 1..m {
                if exprs[i][j] != exprs[j][i] {
                    return Err(GeometryError::AsymmetricMetric(i, j));
                }
            }
        }
        Ok(MetricExprs { vars, exprs })
    }

    pub fn parse(vars: Vec<Var>, text: &[Vec<String>]) -> Result<Self, GeometryError> {
        let exprs = text
            .iter()
            .map(|r| r.iter().map(|s| parse(s, &vars)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        MetricExprs::new(vars, exprs)
    }

    pub fn flat(vars: Vec<Var>) -> Self {
        let m = vars.len();
        let exprs = (0..m)
            .map(|i| (0..m).map(|j| Expr::Num(if i == j { 1.0 } else { 0.0 })).collect())
            .collect();
        MetricExprs { vars, exprs }
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn exprs(&self) -> &Mat<Expr> {
        &self.exprs
    }

    /// The same matrix with its variables replaced positionally by `vars`.
    pub fn rename_vars(&self, vars: Vec<Var>) -> MetricExprs {
        let map = |v: Var| self.vars.iter().position(|w| *w == v).map(|i| Expr::Var(vars[i]));
        let exprs = self.exprs.iter().map(|r| r.iter().map(|e| e.substitute(&map)).collect()).collect();
        MetricExprs { vars, exprs }
    }

    /// `g + t ω`.
    pub fn perturbed(&self, omega: &Mat<Expr>, t: f64) -> MetricExprs {
        let exprs = self
            .exprs
            .iter()
            .zip(omega)
            .map(|(gr, wr)| gr.iter().zip(wr).map(|(g, w)| g.plus_scaled(t, w)).collect())
            .collect();
        MetricExprs { vars: self.vars.clone(), exprs }
    }

    pub fn value(&self, point: &[f64]) -> Result<Mat<f64>, GeometryError> {
        let m = self.dim();
        let mut out = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in i..m {
                let v = self.exprs[i][j].eval_real(&self.vars, point)?;
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        Ok(out)
    }

    /// Evaluate the upper triangle with variables bound to `args`,
    /// evaluating structurally identical entries once.
    fn eval_with(&self, args: &[Jet]) -> Result<Mat<Jet>, GeometryError> {
        let m = self.dim();
        let unit = args[0].zeros_like();
        let bindings: Vec<(Var, Jet)> = self.vars.iter().copied().zip(args.iter().cloned()).collect();
        let mut seen: Vec<(&Expr, Jet)> = Vec::new();
        let mut out = vec![vec![unit.clone(); m]; m];
        for i in 0..m {
            for j in i..m {
                let e = &self.exprs[i][j];
                let v = if e.is_zero_literal() {
                    unit.clone()
                } else if let Some((_, v)) = seen.iter().find(|(s, _)| *s == e) {
                    v.clone()
                } else {
                    let v = e.eval_bound(&unit, &bindings)?;
                    seen.push((e, v.clone()));
                    v
                };
                out[j][i] = v.clone();
                out[i][j] = v;
            }
        }
        Ok(out)
    }

    /// Metric jets in its own variables at `point`.
    pub fn jets_at(&self, point: &[f64], order: usize) -> Result<Mat<Jet>, GeometryError> {
        let m = self.dim();
        let args = point
            .iter()
            .enumerate()
            .map(|(i, &p)| Jet::variable(i, p, m, order))
            .collect::<Result<Vec<_>, _>>()?;
        self.eval_with(&args)
    }

    /// The metric composed with a map given by jets: returns `g(ψ)` at the
    /// order of `args` and `∂_β g(ψ)` one order lower, for every variable `β`.
    /// The derivatives use one auxiliary jet variable.
    pub fn composed(&self, args: &[Jet]) -> Result<(Mat<Jet>, Vec<Mat<Jet>>), GeometryError> {
        if args.len() != self.dim() {
            return Err(GeometryError::Shape(format!("{} arguments for a {}-dim metric", args.len(), self.dim())));
        }
        let base = self.eval_with(args)?;
        let nv = args[0].num_vars();
        let order = args[0].order();
        if order == 0 {
            return Err(JetError::OrderExhausted.into());
        }
        let ext: Vec<Jet> = args.iter().map(|a| a.extend_vars(nv + 1)).collect::<Result<_, _>>()?;
        let eps = Jet::variable(nv, 0.0, nv + 1, order)?;
        let lower_zero = args[0].truncate(order - 1).zeros_like();
        let m = self.dim();
        let mut derivs = Vec::with_capacity(m);
        for (beta, var) in self.vars.iter().enumerate() {
            let depends = self.exprs.iter().flatten().any(|e| e.vars().contains(var));
            if !depends {
                derivs.push(vec![vec![lower_zero.clone(); m]; m]);
                continue;
            }
            let mut shifted = ext.clone();
            shifted[beta] += &eps;
            let full = self.eval_with(&shifted)?;
            let d = full
                .iter()
                .map(|r| r.iter().map(Jet::linear_part_in_last).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            derivs.push(d);
        }
        Ok((base, derivs))
    }

    /// Christoffel symbols in the metric's own variables, as jets of
    /// `order_needed` at `point`.
    pub fn christoffel(&self, point: &[f64], order_needed: usize) -> Result<Christoffel, GeometryError> {
        let g = self.jets_at(point, order_needed + 1)?;
        check_positive_definite(&mat_values(&g))?;
        let (ginv, _) = jet_inverse(&g)?;
        let dg = (0..self.dim())
            .map(|r| {
                g.iter()
                    .map(|row| row.iter().map(|e| e.derivative(r)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(levi_civita(&ginv, &dg))
    }

    /// Curvature tensor in the metric's own variables, jets of `order_needed`.
    pub fn curvature(&self, point: &[f64], order_needed: usize) -> Result<Riemann<Jet>, GeometryError> {
        let gamma = self.christoffel(point, order_needed + 1)?;
        let n = self.dim();
        let dgamma = (0..n)
            .map(|c| {
                gamma
                    .iter()
                    .map(|a| {
                        a.iter()
                            .map(|row| row.iter().map(|e| e.derivative(c)).collect::<Result<Vec<_>, _>>())
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(riemann_from(&gamma, &dgamma))
    }
}

/// Built-in targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Catalog {
    Euclidean,
    /// Round sphere of the given radius in stereographic coordinates,
    /// `h = 4 r² δ / (1 + |y|²)²`, sectional curvature `1/r²`.
    SphereStereographic { radius: f64 },
    /// Poincaré ball of the given radius, `h = 4 r² δ / (1 - |y|²)²` on
    /// `|y| < 1`, sectional curvature `-1/r²`.
    HyperbolicBall { radius: f64 },
}

impl Catalog {
    pub fn curvature_constant(&self) -> f64 {
        match *self {
            Catalog::Euclidean => 0.0,
            Catalog::SphereStereographic { radius } => 1.0 / (radius * radius),
            Catalog::HyperbolicBall { radius } => -1.0 / (radius * radius),
        }
    }
}

/// Charted target manifold `(N, h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGeometry {
    metric: MetricExprs,
    catalog: Option<Catalog>,
}

fn conformal_metric(n: usize, factor: &str) -> Result<MetricExprs, GeometryError> {
    let vars = Var::ys(n);
    let text: Vec<Vec<String>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { factor.to_string() } else { "0".to_string() }).collect())
        .collect();
    MetricExprs::parse(vars, &text)
}

fn radius_sq_expr(n: usize) -> String {
    (1..=n).map(|a| format!("y{a}^2")).collect::<Vec<_>>().join(" + ")
}

impl TargetGeometry {
    pub fn euclidean(n: usize) -> Result<Self, GeometryError> {
        if !(1..=3).contains(&n) {
            return Err(GeometryError::Dimension(n));
        }
        Ok(TargetGeometry { metric: MetricExprs::flat(Var::ys(n)), catalog: Some(Catalog::Euclidean) })
    }

    pub fn sphere_stereographic(n: usize, radius: f64) -> Result<Self, GeometryError> {
        if !(1..=3).contains(&n) {
            return Err(GeometryError::Dimension(n));
        }
        let r2 = radius * radius;
        let factor = format!("{:?} / (1 + {})^2", 4.0 * r2, radius_sq_expr(n));
        Ok(TargetGeometry {
            metric: conformal_metric(n, &factor)?,
            catalog: Some(Catalog::SphereStereographic { radius }),
        })
    }

    pub fn hyperbolic_ball(n: usize, radius: f64) -> Result<Self, GeometryError> {
        if !(1..=3).contains(&n) {
            return Err(GeometryError::Dimension(n));
        }
        let r2 = radius * radius;
        let factor = format!("{:?} / (1 - ({}))^2", 4.0 * r2, radius_sq_expr(n));
        Ok(TargetGeometry {
            metric: conformal_metric(n, &factor)?,
            catalog: Some(Catalog::HyperbolicBall { radius }),
        })
    }

    pub fn custom(metric: MetricExprs) -> Result<Self, GeometryError> {
        if metric.vars().iter().any(|v| matches!(v, Var::X(_))) {
            return Err(GeometryError::Shape("target metric must use y variables".into()));
        }
        Ok(TargetGeometry { metric, catalog: None })
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn metric(&self) -> &MetricExprs {
        &self.metric
    }

    pub fn catalog(&self) -> Option<Catalog> {
        self.catalog
    }

    /// Reject points outside the chart or where `h` fails to be positive definite.
    pub fn check_point(&self, y: &[f64]) -> Result<(), GeometryError> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::ChartViolation { point: y.to_vec(), reason: "non-finite coordinate".into() });
        }
        if let Some(Catalog::HyperbolicBall { .. }) = self.catalog {
            let r2: f64 = y.iter().map(|v| v * v).sum();
            if r2 >= 1.0 {
                return Err(GeometryError::ChartViolation {
                    point: y.to_vec(),
                    reason: "outside the unit ball".into(),
                });
            }
        }
        let h = self.metric.value(y).map_err(|e| GeometryError::ChartViolation {
            point: y.to_vec(),
            reason: e.to_string(),
        })?;
        check_positive_definite(&h).map_err(|e| GeometryError::ChartViolation {
            point: y.to_vec(),
            reason: e.to_string(),
        })
    }

    pub fn christoffel(&self, y: &[f64], order_needed: usize) -> Result<Christoffel, GeometryError> {
        self.check_point(y)?;
        self.metric.christoffel(y, order_needed)
    }

    pub fn curvature(&self, y: &[f64], order_needed: usize) -> Result<Riemann<Jet>, GeometryError> {
        self.check_point(y)?;
        self.metric.curvature(y, order_needed)
    }
}

/// Domain metric, either explicit expressions or the pullback `u*g` of an
/// expression metric by a self-map `u` of the chart.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainMetric {
    Exprs(MetricExprs),
    PulledBack { base: MetricExprs, map: Vec<Expr> },
}

impl DomainMetric {
    pub fn dim(&self) -> usize {
        match self {
            DomainMetric::Exprs(g) => g.dim(),
            DomainMetric::PulledBack { base, .. } => base.dim(),
        }
    }

    /// Metric jets in the domain variables at `x`.
    pub fn jets_at(&self, x: &[f64], order: usize) -> Result<Mat<Jet>, GeometryError> {
        match self {
            DomainMetric::Exprs(g) => g.jets_at(x, order),
            DomainMetric::PulledBack { base, map } => pullback_metric_jets(base, map, x, order),
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<Mat<f64>, GeometryError> {
        match self {
            DomainMetric::Exprs(g) => g.value(x),
            _ => Ok(mat_values(&self.jets_at(x, 0)?)),
        }
    }
}

/// Jets of the components of `u` at `x`.
pub fn map_jets(map: &[Expr], x: &[f64], order: usize) -> Result<Vec<Jet>, GeometryError> {
    let vars = Var::xs(x.len());
    Ok(map.iter().map(|e| e.eval_jet(&vars, x, order)).collect::<Result<Vec<_>, _>>()?)
}

/// `(u*g)_ij = g_rs(u(x)) ∂_i u^r ∂_j u^s` as jets of `order`.
pub fn pullback_metric_jets(base: &MetricExprs, map: &[Expr], x: &[f64], order: usize) -> Result<Mat<Jet>, GeometryError> {
    let m = base.dim();
    let u = map_jets(map, x, order + 1)?;
    let du: Mat<Jet> = (0..m)
        .map(|i| u.iter().map(|ur| ur.derivative(i)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    let u_trunc: Vec<Jet> = u.iter().map(|j| j.truncate(order)).collect();
    let g = base.eval_with(&u_trunc)?;
    let zero = u_trunc[0].zeros_like();
    let mut out = vec![vec![zero.clone(); m]; m];
    for i in 0..m {
        for j in i..m {
            let mut acc = zero.clone();
            for r in 0..m {
                for s in 0..m {
                    acc += &(&g[r][s] * &du[i][r]) * &du[j][s];
                }
            }
            out[j][i] = acc.clone();
            out[i][j] = acc;
        }
    }
    Ok(out)
}

/// Charted domain `(M, g)`: metric, coordinate box and periodicity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainChart {
    metric: DomainMetric,
    bounds: Vec<(f64, f64)>,
    periodic: Vec<bool>,
}

impl DomainChart {
    pub fn new(metric: DomainMetric, bounds: Vec<(f64, f64)>, periodic: Vec<bool>) -> Result<Self, GeometryError> {
        let m = metric.dim();
        if bounds.len() != m || periodic.len() != m {
            return Err(GeometryError::Shape(format!("box and periodic flags must have {m} entries")));
        }
        if bounds.iter().any(|(a, b)| !(a < b)) {
            return Err(GeometryError::Shape("every box interval must have lo < hi".into()));
        }
        Ok(DomainChart { metric, bounds, periodic })
    }

    /// Flat torus `[0, 2π)^m`.
    pub fn flat_torus(m: usize) -> Result<Self, GeometryError> {
        if !(1..=3).contains(&m) {
            return Err(GeometryError::Dimension(m));
        }
        DomainChart::new(
            DomainMetric::Exprs(MetricExprs::flat(Var::xs(m))),
            vec![(0.0, 2.0 * std::f64::consts::PI); m],
            vec![true; m],
        )
    }

    /// Periodic torus `[0, 2π)^m` with the given metric expressions.
    pub fn torus_with_metric(metric: MetricExprs) -> Result<Self, GeometryError> {
        let m = metric.dim();
        DomainChart::new(DomainMetric::Exprs(metric), vec![(0.0, 2.0 * std::f64::consts::PI); m], vec![true; m])
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn metric(&self) -> &DomainMetric {
        &self.metric
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn all_periodic(&self) -> bool {
        self.periodic.iter().all(|&p| p)
    }

    pub fn with_metric(&self, metric: DomainMetric) -> Self {
        DomainChart { metric, bounds: self.bounds.clone(), periodic: self.periodic.clone() }
    }

    /// Non-periodic coordinates must lie in the box.
    pub fn check_point(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::Shape(format!("point has {} coordinates, chart has {}", x.len(), self.dim())));
        }
        for (i, &xi) in x.iter().enumerate() {
            let (lo, hi) = self.bounds[i];
            if !xi.is_finite() || (!self.periodic[i] && !(lo..=hi).contains(&xi)) {
                return Err(GeometryError::ChartViolation {
                    point: x.to_vec(),
                    reason: format!("coordinate {} outside [{lo}, {hi}]", i + 1),
                });
            }
        }
        Ok(())
    }

    /// Domain Christoffel symbols at `x` as jets of `order_needed`.
    pub fn christoffel(&self, x: &[f64], order_needed: usize) -> Result<Christoffel, GeometryError> {
        let g = self.metric.jets_at(x, order_needed + 1)?;
        check_positive_definite(&mat_values(&g))?;
        let (ginv, _) = jet_inverse(&g)?;
        let dg = (0..self.dim())
            .map(|r| {
                g.iter()
                    .map(|row| row.iter().map(|e| e.derivative(r)).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(levi_civita(&ginv, &dg))
    }
}
