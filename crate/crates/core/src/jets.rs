//! Truncated multivariate Taylor polynomials ("jets").
//!
//! A [`Jet`] stores the coefficients of a polynomial in `num_vars` variables,
//! truncated at total degree `order`, expanded around some point. Coefficients
//! are kept in graded-lexicographic order: all monomials of degree 0, then all
//! of degree 1, and so on. Inside one degree block the monomials are sorted
//! lexicographically descending on their exponent vectors (`x1^d` first).
//!
//! Because the order of monomials inside a degree block does not depend on the
//! truncation order, truncating a jet is a prefix slice of its coefficients.
//!
//! `coeff(β)` is the Taylor coefficient and `extract_partial(β)` is the true
//! partial derivative `β! · coeff(β)`.

use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

/// Largest number of variables a jet may carry.
pub const MAX_VARS: usize = 4;
/// Largest truncation order.
pub const MAX_ORDER: usize = 12;

/// An exponent vector. Unused trailing slots are zero.
pub type MultiIndex = [u8; MAX_VARS];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("variable index {index} out of range for {num_vars} variables")]
    IndexOutOfRange { index: usize, num_vars: usize },
    #[error("unsupported jet shape: {num_vars} variables, order {order}")]
    UnsupportedShape { num_vars: usize, order: usize },
    #[error("jet shape mismatch: ({0}, {1}) vs ({2}, {3})")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("division by a jet with zero constant term")]
    ZeroDivisor,
    #[error("{func} is undefined at {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("multi-index of degree {degree} exceeds jet order {order}")]
    OrderExceeded { degree: usize, order: usize },
    #[error("jet order exhausted: cannot differentiate an order-0 jet")]
    OrderExhausted,
}

/// Monomial bookkeeping shared by every jet of the same shape.
#[derive(Debug)]
pub struct Layout {
    num_vars: usize,
    order: usize,
    monomials: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
    /// `(i, j, k)`: `out[k] += a[i] * b[j]`.
    mul_table: Vec<(u32, u32, u32)>,
    /// Per variable: `(src, dst, factor)` mapping into the layout of order - 1.
    deriv: Vec<Vec<(u32, u32, f64)>>,
    /// `degree_start[d]` is the first index of degree `d`; has `order + 2` entries.
    degree_start: Vec<usize>,
}

fn monomials_of_degree(num_vars: usize, degree: usize, out: &mut Vec<MultiIndex>) {
    fn rec(var: usize, num_vars: usize, left: usize, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if var + 1 == num_vars {
            cur[var] = left as u8;
            out.push(*cur);
            cur[var] = 0;
            return;
        }
        for e in (0..=left).rev() {
            cur[var] = e as u8;
            rec(var + 1, num_vars, left - e, cur, out);
        }
        cur[var] = 0;
    }
    let mut cur = [0u8; MAX_VARS];
    rec(0, num_vars, degree, &mut cur, out);
}

fn degree(m: &MultiIndex) -> usize {
    m.iter().map(|&e| e as usize).sum()
}

fn factorial(n: usize) -> f64 {
    (2..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `binomial(n, k)` as a float; exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

impl Layout {
    fn build(num_vars: usize, order: usize) -> Layout {
        let mut monomials = Vec::with_capacity(binomial(num_vars + order, order));
        let mut degree_start = Vec::with_capacity(order + 2);
        for d in 0..=order {
            degree_start.push(monomials.len());
            monomials_of_degree(num_vars, d, &mut monomials);
        }
        degree_start.push(monomials.len());
        let index: HashMap<MultiIndex, usize> =
            monomials.iter().enumerate().map(|(i, m)| (*m, i)).collect();

        let mut mul_table = Vec::new();
        for (i, a) in monomials.iter().enumerate() {
            let da = degree(a);
            for (j, b) in monomials[..degree_start[order - da + 1]].iter().enumerate() {
                let mut c = [0u8; MAX_VARS];
                for v in 0..MAX_VARS {
                    c[v] = a[v] + b[v];
                }
                mul_table.push((i as u32, j as u32, index[&c] as u32));
            }
        }

        let mut deriv = Vec::with_capacity(num_vars);
        for v in 0..num_vars {
            let mut table = Vec::new();
            if order > 0 {
                for (src, m) in monomials.iter().enumerate() {
                    if m[v] == 0 || degree(m) > order {
                        continue;
                    }
                    let mut lower = *m;
                    lower[v] -= 1;
                    // The order-1 layout enumerates the same monomials as a prefix.
                    table.push((src as u32, index[&lower] as u32, m[v] as f64));
                }
            }
            deriv.push(table);
        }

        Layout { num_vars, order, monomials, index, mul_table, deriv, degree_start }
    }

    /// Shared layout for the given shape.
    pub fn get(num_vars: usize, order: usize) -> Result<Arc<Layout>, JetError> {
        if num_vars == 0 || num_vars > MAX_VARS || order > MAX_ORDER {
            return Err(JetError::UnsupportedShape { num_vars, order });
        }
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Layout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("layout cache poisoned");
        Ok(guard
            .entry((num_vars, order))
            .or_insert_with(|| Arc::new(Layout::build(num_vars, order)))
            .clone())
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn index_of(&self, beta: &MultiIndex) -> Option<usize> {
        self.index.get(beta).copied()
    }
}

/// A truncated multivariate Taylor polynomial.
#[derive(Clone)]
pub struct Jet {
    layout: Arc<Layout>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("num_vars", &self.layout.num_vars)
            .field("order", &self.layout.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

/// Elementary functions understood by [`Jet::elementary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementary {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    PowReal(f64),
}

/// Binary operations understood by [`Jet::arith`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

fn pad(beta: &[u8]) -> Result<MultiIndex, JetError> {
    if beta.len() > MAX_VARS {
        return Err(JetError::IndexOutOfRange { index: beta.len(), num_vars: MAX_VARS });
    }
    let mut m = [0u8; MAX_VARS];
    m[..beta.len()].copy_from_slice(beta);
    Ok(m)
}

impl Jet {
    pub fn constant(value: f64, num_vars: usize, order: usize) -> Result<Jet, JetError> {
        let layout = Layout::get(num_vars, order)?;
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = value;
        Ok(Jet { layout, coeffs })
    }

    /// The coordinate function `x^index` expanded at `value`.
    pub fn variable(index: usize, value: f64, num_vars: usize, order: usize) -> Result<Jet, JetError> {
        if index >= num_vars {
            return Err(JetError::IndexOutOfRange { index, num_vars });
        }
        let mut jet = Jet::constant(value, num_vars, order)?;
        if order > 0 {
            // Degree-1 block is e_0, e_1, ... in that order.
            jet.coeffs[1 + index] = 1.0;
        }
        Ok(jet)
    }

    pub fn from_coeffs(num_vars: usize, order: usize, coeffs: Vec<f64>) -> Result<Jet, JetError> {
        let layout = Layout::get(num_vars, order)?;
        if coeffs.len() != layout.len() {
            return Err(JetError::ShapeMismatch(num_vars, order, num_vars, coeffs.len()));
        }
        Ok(Jet { layout, coeffs })
    }

    /// A constant living in the same space as `self`.
    pub fn lift(&self, value: f64) -> Jet {
        let mut coeffs = vec![0.0; self.coeffs.len()];
        coeffs[0] = value;
        Jet { layout: self.layout.clone(), coeffs }
    }

    pub fn zeros_like(&self) -> Jet {
        self.lift(0.0)
    }

    pub fn num_vars(&self) -> usize {
        self.layout.num_vars
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Constant term.
    #[inline]
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeff(&self, beta: &[u8]) -> Result<f64, JetError> {
        let m = pad(beta)?;
        if beta.len() > self.num_vars() && beta[self.num_vars()..].iter().any(|&e| e != 0) {
            return Err(JetError::IndexOutOfRange { index: beta.len() - 1, num_vars: self.num_vars() });
        }
        let d = degree(&m);
        if d > self.order() {
            return Err(JetError::OrderExceeded { degree: d, order: self.order() });
        }
        Ok(self.coeffs[self.layout.index[&m]])
    }

    /// Mixed partial derivative `∂^β` at the expansion point.
    pub fn extract_partial(&self, beta: &[u8]) -> Result<f64, JetError> {
        let c = self.coeff(beta)?;
        Ok(beta.iter().fold(c, |acc, &e| acc * factorial(e as usize)))
    }

    /// First partial derivative at the expansion point.
    pub fn partial1(&self, var: usize) -> f64 {
        if self.order() == 0 {
            0.0
        } else {
            self.coeffs[1 + var]
        }
    }

    fn check_shape(&self, other: &Jet) -> Result<(), JetError> {
        if Arc::ptr_eq(&self.layout, &other.layout) {
            return Ok(());
        }
        Err(JetError::ShapeMismatch(self.num_vars(), self.order(), other.num_vars(), other.order()))
    }

    /// Checked binary arithmetic. Shapes must match exactly.
    pub fn arith(&self, other: &Jet, op: ArithOp) -> Result<Jet, JetError> {
        self.check_shape(other)?;
        Ok(match op {
            ArithOp::Add => self + other,
            ArithOp::Sub => self - other,
            ArithOp::Mul => self * other,
            ArithOp::Div => self.checked_div(other)?,
        })
    }

    fn mul_into(&self, other: &Jet, out: &mut [f64]) {
        let a = &self.coeffs;
        let b = &other.coeffs;
        for &(i, j, k) in &self.layout.mul_table {
            out[k as usize] += a[i as usize] * b[j as usize];
        }
    }

    pub fn checked_div(&self, other: &Jet) -> Result<Jet, JetError> {
        self.check_shape(other)?;
        let mut q = self * &other.recip()?;
        // a0 * (1/b0) can be off by an ulp from a0 / b0.
        q.coeffs[0] = self.value() / other.value();
        Ok(q)
    }

    pub fn recip(&self) -> Result<Jet, JetError> {
        let a0 = self.value();
        if a0 == 0.0 {
            return Err(JetError::ZeroDivisor);
        }
        // 1/(a0 + h) = Σ (-1)^k h^k / a0^(k+1)
        let mut c = Vec::with_capacity(self.order() + 1);
        let mut p = 1.0 / a0;
        for _ in 0..=self.order() {
            c.push(p);
            p *= -1.0 / a0;
        }
        Ok(self.compose_series(&c))
    }

    /// `f(a)` where `c[k] = f^(k)(a0) / k!`, evaluated by Horner's rule in the
    /// nilpotent part `a - a0`.
    fn compose_series(&self, c: &[f64]) -> Jet {
        let order = self.order();
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut acc = self.lift(c[order]);
        for k in (0..order).rev() {
            acc = &acc * &h;
            acc.coeffs[0] += c[k];
        }
        acc
    }

    pub fn elementary(&self, f: Elementary) -> Result<Jet, JetError> {
        let a0 = self.value();
        let n = self.order();
        let mut c = Vec::with_capacity(n + 1);
        match f {
            Elementary::Sin | Elementary::Cos => {
                let (s, co) = a0.sin_cos();
                let cycle = match f {
                    Elementary::Sin => [s, co, -s, -co],
                    _ => [co, -s, -co, s],
                };
                for k in 0..=n {
                    c.push(cycle[k % 4] / factorial(k));
                }
            }
            Elementary::Exp => {
                let e = a0.exp();
                for k in 0..=n {
                    c.push(e / factorial(k));
                }
            }
            Elementary::Log => {
                if a0 <= 0.0 || !a0.is_finite() {
                    return Err(JetError::Domain { func: "log", value: a0 });
                }
                c.push(a0.ln());
                let mut p = 1.0;
                for k in 1..=n {
                    p /= a0;
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    c.push(sign * p / k as f64);
                }
            }
            Elementary::Sqrt => return self.pow_real_named(0.5, "sqrt"),
            Elementary::PowReal(p) => return self.pow_real_named(p, "pow"),
        }
        Ok(self.compose_series(&c))
    }

    fn pow_real_named(&self, p: f64, name: &'static str) -> Result<Jet, JetError> {
        let a0 = self.value();
        let ok = if self.order() == 0 { a0 >= 0.0 } else { a0 > 0.0 };
        if !ok || !a0.is_finite() {
            return Err(JetError::Domain { func: name, value: a0 });
        }
        let mut c = Vec::with_capacity(self.order() + 1);
        let mut term = a0.powf(p);
        for k in 0..=self.order() {
            c.push(term);
            term *= (p - k as f64) / ((k + 1) as f64 * a0);
        }
        Ok(self.compose_series(&c))
    }

    pub fn sin(&self) -> Jet {
        self.elementary(Elementary::Sin).expect("sin is total")
    }

    pub fn cos(&self) -> Jet {
        self.elementary(Elementary::Cos).expect("cos is total")
    }

    pub fn exp(&self) -> Jet {
        self.elementary(Elementary::Exp).expect("exp is total")
    }

    pub fn ln(&self) -> Result<Jet, JetError> {
        self.elementary(Elementary::Log)
    }

    pub fn sqrt(&self) -> Result<Jet, JetError> {
        self.elementary(Elementary::Sqrt)
    }

    /// Integer power by repeated multiplication, so a zero base is fine for
    /// nonnegative exponents.
    pub fn powi(&self, n: i32) -> Result<Jet, JetError> {
        let mut base = self.clone();
        let mut e = n.unsigned_abs();
        let mut acc = self.lift(1.0);
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        if n < 0 {
            acc.recip()
        } else {
            Ok(acc)
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { layout: self.layout.clone(), coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Jet) {
        debug_assert!(Arc::ptr_eq(&self.layout, &other.layout));
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }

    /// Same polynomial truncated to a lower order.
    pub fn truncate(&self, order: usize) -> Jet {
        if order >= self.order() {
            return self.clone();
        }
        let layout = Layout::get(self.num_vars(), order).expect("smaller shape is valid");
        let n = layout.len();
        Jet { layout, coeffs: self.coeffs[..n].to_vec() }
    }

    /// `∂/∂x^var`, one order lower.
    pub fn derivative(&self, var: usize) -> Result<Jet, JetError> {
        if var >= self.num_vars() {
            return Err(JetError::IndexOutOfRange { index: var, num_vars: self.num_vars() });
        }
        if self.order() == 0 {
            return Err(JetError::OrderExhausted);
        }
        let layout = Layout::get(self.num_vars(), self.order() - 1)?;
        let mut coeffs = vec![0.0; layout.len()];
        for &(src, dst, f) in &self.layout.deriv[var] {
            coeffs[dst as usize] = f * self.coeffs[src as usize];
        }
        Ok(Jet { layout, coeffs })
    }

    /// Embed into a space with more variables; the new variables do not appear.
    pub fn extend_vars(&self, num_vars: usize) -> Result<Jet, JetError> {
        if num_vars == self.num_vars() {
            return Ok(self.clone());
        }
        if num_vars < self.num_vars() {
            return Err(JetError::ShapeMismatch(self.num_vars(), self.order(), num_vars, self.order()));
        }
        let layout = Layout::get(num_vars, self.order())?;
        let mut coeffs = vec![0.0; layout.len()];
        for (m, c) in self.layout.monomials.iter().zip(&self.coeffs) {
            coeffs[layout.index[m]] = *c;
        }
        Ok(Jet { layout, coeffs })
    }

    /// Coefficient of the last variable to the first power, as a jet in the
    /// remaining variables of one order lower. With `ε` the last variable this
    /// is `∂f/∂ε` restricted to `ε = 0`.
    pub fn linear_part_in_last(&self) -> Result<Jet, JetError> {
        let nv = self.num_vars();
        if nv < 2 {
            return Err(JetError::UnsupportedShape { num_vars: nv - 1, order: self.order() });
        }
        if self.order() == 0 {
            return Err(JetError::OrderExhausted);
        }
        let layout = Layout::get(nv - 1, self.order() - 1)?;
        let mut coeffs = vec![0.0; layout.len()];
        for (dst, m) in layout.monomials.iter().enumerate() {
            let mut full = *m;
            full[nv - 1] = 1;
            coeffs[dst] = self.coeffs[self.layout.index[&full]];
        }
        Ok(Jet { layout, coeffs })
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Index range of the degree-`d` block.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        self.layout.degree_start[d]..self.layout.degree_start[d + 1]
    }
}

impl<'a> Add<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn add(self, rhs: &'a Jet) -> Jet {
        assert!(Arc::ptr_eq(&self.layout, &rhs.layout), "jet shape mismatch in add");
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn sub(self, rhs: &'a Jet) -> Jet {
        assert!(Arc::ptr_eq(&self.layout, &rhs.layout), "jet shape mismatch in sub");
        Jet {
            layout: self.layout.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl<'a> Mul<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn mul(self, rhs: &'a Jet) -> Jet {
        assert!(Arc::ptr_eq(&self.layout, &rhs.layout), "jet shape mismatch in mul");
        let mut out = vec![0.0; self.coeffs.len()];
        self.mul_into(rhs, &mut out);
        Jet { layout: self.layout.clone(), coeffs: out }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c = -*c);
        self
    }
}

macro_rules! owned_binops {
    ($($tr:ident $method:ident),*) => {$(
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet { (&self).$method(&rhs) }
        }
        impl<'a> $tr<&'a Jet> for Jet {
            type Output = Jet;
            fn $method(self, rhs: &'a Jet) -> Jet { (&self).$method(rhs) }
        }
        impl<'a> $tr<Jet> for &'a Jet {
            type Output = Jet;
            fn $method(self, rhs: Jet) -> Jet { self.$method(&rhs) }
        }
    )*};
}
owned_binops!(Add add, Sub sub, Mul mul);

impl AddAssign<&Jet> for Jet {
    fn add_assign(&mut self, rhs: &Jet) {
        assert!(Arc::ptr_eq(&self.layout, &rhs.layout), "jet shape mismatch in add");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a += b;
        }
    }
}

impl AddAssign<Jet> for Jet {
    fn add_assign(&mut self, rhs: Jet) {
        *self += &rhs;
    }
}

impl SubAssign<&Jet> for Jet {
    fn sub_assign(&mut self, rhs: &Jet) {
        assert!(Arc::ptr_eq(&self.layout, &rhs.layout), "jet shape mismatch in sub");
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a -= b;
        }
    }
}

impl SubAssign<Jet> for Jet {
    fn sub_assign(&mut self, rhs: Jet) {
        *self -= &rhs;
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        self.coeffs.iter_mut().for_each(|c| *c *= rhs);
        self
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.coeffs[0] += rhs;
        self
    }
}

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        self.clone() + rhs
    }
}
