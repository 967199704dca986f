//! A small arithmetic expression language for metric components, map
//! components, diffeomorphisms and variation tensors.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' ['-'] INTEGER)*
//! primary := NUMBER | 'pi' | VAR | FUNC '(' expr ')' | '(' expr ')'
//! VAR     := x1..x4 | y1..y4
//! FUNC    := sin | cos | exp | log | sqrt
//! ```
//!
//! `^` binds tighter than unary minus, so `-x1^2` is `-(x1^2)`. Exponents must
//! be integer literals; real powers are written with `exp` and `log`.

use std::fmt;

use thiserror::Error;

use crate::jets::{Jet, JetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Domain coordinate, zero-based.
    X(u8),
    /// Target coordinate, zero-based.
    Y(u8),
}

impl Var {
    /// `x1`, `x2`, ... for `dim` coordinates.
    pub fn xs(dim: usize) -> Vec<Var> {
        (0..dim as u8).map(Var::X).collect()
    }

    pub fn ys(dim: usize) -> Vec<Var> {
        (0..dim as u8).map(Var::Y).collect()
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::Y(i) => write!(f, "y{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("variable {var} at offset {offset} is not allowed here")]
    VariableNotAllowed { offset: usize, var: Var },
    #[error("exponent at offset {offset} must be an integer literal")]
    NonLiteralExponent { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no value bound for variable {0}")]
    Unbound(Var),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("{func} is undefined at {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("division by zero")]
    DivisionByZero,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'^' => out.push((Tok::Caret, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number '{s}'"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax { offset: start, message: format!("unexpected character '{ch}'") });
            }
        }
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    allowed: &'a [Var],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn syntax<T>(&self, message: &str) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.offset(), message: message.to_string() })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while *self.peek() == Tok::Caret {
            self.bump();
            let at = self.offset();
            let negative = if *self.peek() == Tok::Minus {
                self.bump();
                true
            } else {
                false
            };
            match self.peek().clone() {
                Tok::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                    self.bump();
                    let e = v as i32;
                    base = Expr::Pow(Box::new(base), if negative { -e } else { e });
                }
                Tok::End => return self.syntax("expected exponent"),
                _ => return Err(ParseError::NonLiteralExponent { offset: at }),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.syntax("expected ')'");
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                if name == "pi" {
                    return Ok(Expr::Pi);
                }
                if let Some(f) = Func::from_name(&name) {
                    if *self.peek() != Tok::LParen {
                        return self.syntax("expected '(' after function name");
                    }
                    self.bump();
                    let arg = self.expr()?;
                    if *self.peek() != Tok::RParen {
                        return self.syntax("expected ')'");
                    }
                    self.bump();
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                let var = parse_var(&name).ok_or(ParseError::UnknownIdentifier { offset, name: name.clone() })?;
                if !self.allowed.contains(&var) {
                    return Err(ParseError::VariableNotAllowed { offset, var });
                }
                Ok(Expr::Var(var))
            }
            Tok::End => Err(ParseError::Syntax { offset, message: "unexpected end of input".into() }),
            t => Err(ParseError::Syntax { offset, message: format!("unexpected token {t:?}") }),
        }
    }
}

fn parse_var(name: &str) -> Option<Var> {
    let (kind, digits) = name.split_at(1);
    let idx: u8 = digits.parse().ok()?;
    if !(1..=4).contains(&idx) || digits.starts_with('0') {
        return None;
    }
    match kind {
        "x" => Some(Var::X(idx - 1)),
        "y" => Some(Var::Y(idx - 1)),
        _ => None,
    }
}

/// Parse `text`, accepting only variables in `allowed`.
pub fn parse(text: &str, allowed: &[Var]) -> Result<Expr, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, pos: 0, allowed };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

/// Values an expression can be evaluated in.
pub trait ExprScalar: Clone + Sized {
    fn constant_like(&self, c: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn div(&self, o: &Self) -> Result<Self, EvalError>;
    fn powi(&self, n: i32) -> Result<Self, EvalError>;
    fn call(&self, f: Func) -> Result<Self, EvalError>;
}

impl ExprScalar for f64 {
    fn constant_like(&self, c: f64) -> f64 {
        c
    }
    fn add(&self, o: &f64) -> f64 {
        self + o
    }
    fn sub(&self, o: &f64) -> f64 {
        self - o
    }
    fn mul(&self, o: &f64) -> f64 {
        self * o
    }
    fn neg(&self) -> f64 {
        -self
    }
    fn div(&self, o: &f64) -> Result<f64, EvalError> {
        if *o == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(self / o)
    }
    fn powi(&self, n: i32) -> Result<f64, EvalError> {
        if n < 0 && *self == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(f64::powi(*self, n))
    }
    fn call(&self, f: Func) -> Result<f64, EvalError> {
        Ok(match f {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Exp => self.exp(),
            Func::Log => {
                if *self <= 0.0 {
                    return Err(EvalError::Domain { func: "log", value: *self });
                }
                self.ln()
            }
            Func::Sqrt => {
                if *self < 0.0 {
                    return Err(EvalError::Domain { func: "sqrt", value: *self });
                }
                f64::sqrt(*self)
            }
        })
    }
}

fn lift_jet_err(e: JetError) -> EvalError {
    match e {
        JetError::Domain { func, value } => EvalError::Domain { func, value },
        JetError::ZeroDivisor => EvalError::DivisionByZero,
        other => EvalError::Jet(other),
    }
}

impl ExprScalar for Jet {
    fn constant_like(&self, c: f64) -> Jet {
        self.lift(c)
    }
    fn add(&self, o: &Jet) -> Jet {
        self + o
    }
    fn sub(&self, o: &Jet) -> Jet {
        self - o
    }
    fn mul(&self, o: &Jet) -> Jet {
        self * o
    }
    fn neg(&self) -> Jet {
        -self
    }
    fn div(&self, o: &Jet) -> Result<Jet, EvalError> {
        self.checked_div(o).map_err(lift_jet_err)
    }
    fn powi(&self, n: i32) -> Result<Jet, EvalError> {
        Jet::powi(self, n).map_err(lift_jet_err)
    }
    fn call(&self, f: Func) -> Result<Jet, EvalError> {
        let r = match f {
            Func::Sin => Ok(self.sin()),
            Func::Cos => Ok(self.cos()),
            Func::Exp => Ok(self.exp()),
            Func::Log => self.ln(),
            Func::Sqrt => Jet::sqrt(self),
        };
        r.map_err(lift_jet_err)
    }
}

impl Expr {
    /// Evaluate with variables looked up in `env`. `unit` fixes the space
    /// literals are lifted into.
    pub fn eval<S: ExprScalar>(&self, unit: &S, env: &dyn Fn(Var) -> Option<S>) -> Result<S, EvalError> {
        Ok(match self {
            Expr::Num(v) => unit.constant_like(*v),
            Expr::Pi => unit.constant_like(std::f64::consts::PI),
            Expr::Var(v) => env(*v).ok_or(EvalError::Unbound(*v))?,
            Expr::Neg(a) => a.eval(unit, env)?.neg(),
            Expr::Add(a, b) => a.eval(unit, env)?.add(&b.eval(unit, env)?),
            Expr::Sub(a, b) => a.eval(unit, env)?.sub(&b.eval(unit, env)?),
            Expr::Mul(a, b) => a.eval(unit, env)?.mul(&b.eval(unit, env)?),
            Expr::Div(a, b) => a.eval(unit, env)?.div(&b.eval(unit, env)?)?,
            Expr::Pow(a, n) => a.eval(unit, env)?.powi(*n)?,
            Expr::Call(f, a) => a.eval(unit, env)?.call(*f)?,
        })
    }

    /// Plain real evaluation; `point[i]` is the value of `vars[i]`.
    pub fn eval_real(&self, vars: &[Var], point: &[f64]) -> Result<f64, EvalError> {
        self.eval(&0.0, &|v| vars.iter().position(|w| *w == v).and_then(|i| point.get(i).copied()))
    }

    /// Jet of the expression at `point`, one jet variable per entry of `vars`.
    pub fn eval_jet(&self, vars: &[Var], point: &[f64], order: usize) -> Result<Jet, EvalError> {
        let n = vars.len();
        let jets = point
            .iter()
            .enumerate()
            .map(|(i, &p)| Jet::variable(i, p, n, order))
            .collect::<Result<Vec<_>, _>>()?;
        let unit = Jet::constant(0.0, n, order)?;
        self.eval(&unit, &|v| vars.iter().position(|w| *w == v).and_then(|i| jets.get(i).cloned()))
    }

    /// Evaluate with each variable bound to a jet.
    pub fn eval_bound(&self, unit: &Jet, bindings: &[(Var, Jet)]) -> Result<Jet, EvalError> {
        self.eval(unit, &|v| bindings.iter().find(|(w, _)| *w == v).map(|(_, j)| j.clone()))
    }

    /// Replace variables by expressions.
    pub fn substitute(&self, map: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        let sub = |e: &Expr| Box::new(e.substitute(map));
        match self {
            Expr::Num(_) | Expr::Pi => self.clone(),
            Expr::Var(v) => map(*v).unwrap_or_else(|| self.clone()),
            Expr::Neg(a) => Expr::Neg(sub(a)),
            Expr::Add(a, b) => Expr::Add(sub(a), sub(b)),
            Expr::Sub(a, b) => Expr::Sub(sub(a), sub(b)),
            Expr::Mul(a, b) => Expr::Mul(sub(a), sub(b)),
            Expr::Div(a, b) => Expr::Div(sub(a), sub(b)),
            Expr::Pow(a, n) => Expr::Pow(sub(a), *n),
            Expr::Call(f, a) => Expr::Call(*f, sub(a)),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        fn walk(e: &Expr, out: &mut Vec<Var>) {
            match e {
                Expr::Num(_) | Expr::Pi => {}
                Expr::Var(v) => {
                    if !out.contains(v) {
                        out.push(*v)
                    }
                }
                Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => walk(a, out),
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                    walk(a, out);
                    walk(b, out)
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.sort();
        out
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// `a + t * b`, used to build perturbed metrics.
    pub fn plus_scaled(&self, t: f64, other: &Expr) -> Expr {
        Expr::Add(
            Box::new(self.clone()),
            Box::new(Expr::Mul(Box::new(Expr::Num(t)), Box::new(other.clone()))),
        )
    }

    /// True for a literal zero.
    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }
}

/// Canonical printed form: every compound subexpression is parenthesized,
/// literals use the shortest round-trip representation.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, n) => write!(f, "({a}^{n})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
