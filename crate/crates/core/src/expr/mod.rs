//! Expression trees for the functions that define a fast-slow system.
//!
//! Expressions are built by [`parse_expr`] from a small infix language or
//! programmatically through the folding constructors ([`Expr::sum`],
//! [`Expr::product`], ...). They evaluate at a point `(x, y)` and carry an
//! exact symbolic derivative, so Jacobians never rely on differencing.

mod diff;
mod parse;
mod print;

pub use parse::{parse_expr, ParseError, ParseErrorKind};

use nalgebra::DMatrix;
use thiserror::Error;

/// Whether a variable belongs to the slow block `x` or the fast block `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarClass {
    Slow,
    Fast,
}

/// A variable reference. `index` is zero-based; the text form is one-based
/// (`x1` is `Var::slow(0)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    pub class: VarClass,
    pub index: usize,
}

impl Var {
    pub const fn slow(index: usize) -> Self {
        Var { class: VarClass::Slow, index }
    }

    pub const fn fast(index: usize) -> Self {
        Var { class: VarClass::Fast, index }
    }
}

impl std::fmt::Display for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.class {
            VarClass::Slow => write!(f, "x{}", self.index + 1),
            VarClass::Fast => write!(f, "y{}", self.index + 1),
        }
    }
}

/// Declared variable dimensions: `x1..xn` and `y1..ym`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarContext {
    pub n: usize,
    pub m: usize,
}

impl VarContext {
    pub const fn new(n: usize, m: usize) -> Self {
        VarContext { n, m }
    }

    /// Context for functions of the slow variables only.
    pub const fn slow_only(n: usize) -> Self {
        VarContext { n, m: 0 }
    }

    pub fn contains(&self, v: Var) -> bool {
        match v.class {
            VarClass::Slow => v.index < self.n,
            VarClass::Fast => v.index < self.m,
        }
    }
}

/// Unary functions available in the expression language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Tanh,
    Exp,
    Sin,
    Cos,
    Ln,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Tanh, Func::Exp, Func::Sin, Func::Cos, Func::Ln, Func::Sqrt];

    pub fn name(self) -> &'static str {
        match self {
            Func::Tanh => "tanh",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn apply(self, v: f64) -> Result<f64, EvalError> {
        let out = match self {
            Func::Tanh => v.tanh(),
            Func::Exp => v.exp(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Ln => {
                if v <= 0.0 {
                    return Err(EvalError::LogDomain(v));
                }
                v.ln()
            }
            Func::Sqrt => {
                if v < 0.0 {
                    return Err(EvalError::SqrtDomain(v));
                }
                v.sqrt()
            }
        };
        finite(out)
    }
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Quotient(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("ln of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("variable {0} is not bound at the evaluation point")]
    Unbound(Var),
}

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

impl Expr {
    pub const ZERO: Expr = Expr::Const(0.0);
    pub const ONE: Expr = Expr::Const(1.0);

    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// Evaluates at the point `(x, y)`. Any non-finite intermediate is an
    /// error.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => {
                let slot = match v.class {
                    VarClass::Slow => x.get(v.index),
                    VarClass::Fast => y.get(v.index),
                };
                slot.copied().ok_or(EvalError::Unbound(*v))
            }
            Expr::Sum(terms) => {
                let mut acc = 0.0;
                for (i, t) in terms.iter().enumerate() {
                    let v = t.eval(x, y)?;
                    acc = if i == 0 { v } else { acc + v };
                }
                finite(acc)
            }
            Expr::Product(factors) => {
                let mut acc = 1.0;
                for (i, t) in factors.iter().enumerate() {
                    let v = t.eval(x, y)?;
                    acc = if i == 0 { v } else { acc * v };
                }
                finite(acc)
            }
            Expr::Quotient(a, b) => {
                let num = a.eval(x, y)?;
                let den = b.eval(x, y)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                finite(num / den)
            }
            Expr::Pow(a, k) => {
                let base = a.eval(x, y)?;
                if *k < 0 && base == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                finite(base.powi(*k))
            }
            Expr::Neg(a) => Ok(-a.eval(x, y)?),
            Expr::Call(f, a) => f.apply(a.eval(x, y)?),
        }
    }

    /// Evaluates an expression that depends on the slow variables only.
    pub fn eval_slow(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.eval(x, &[])
    }

    /// Calls `visit` on every variable reference in the tree.
    pub fn for_each_var(&self, visit: &mut impl FnMut(Var)) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => visit(*v),
            Expr::Sum(ch) | Expr::Product(ch) => ch.iter().for_each(|c| c.for_each_var(visit)),
            Expr::Quotient(a, b) => {
                a.for_each_var(visit);
                b.for_each_var(visit);
            }
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Call(_, a) => a.for_each_var(visit),
        }
    }

    /// First variable outside `ctx`, if any.
    pub fn dangling_var(&self, ctx: VarContext) -> Option<Var> {
        let mut found = None;
        self.for_each_var(&mut |v| {
            if found.is_none() && !ctx.contains(v) {
                found = Some(v);
            }
        });
        found
    }

    pub fn depends_on_class(&self, class: VarClass) -> bool {
        let mut hit = false;
        self.for_each_var(&mut |v| hit |= v.class == class);
        hit
    }

    /// Replaces every fast variable `y_j` with `values[j]`.
    pub fn substitute_fast(&self, values: &[Expr]) -> Expr {
        self.map_vars(&|v| match v.class {
            VarClass::Fast => values.get(v.index).cloned(),
            VarClass::Slow => None,
        })
    }

    fn map_vars(&self, repl: &dyn Fn(Var) -> Option<Expr>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => repl(*v).unwrap_or(Expr::Var(*v)),
            Expr::Sum(ch) => Expr::sum(ch.iter().map(|c| c.map_vars(repl)).collect()),
            Expr::Product(ch) => Expr::product(ch.iter().map(|c| c.map_vars(repl)).collect()),
            Expr::Quotient(a, b) => Expr::div(a.map_vars(repl), b.map_vars(repl)),
            Expr::Pow(a, k) => Expr::powi(a.map_vars(repl), *k),
            Expr::Neg(a) => Expr::neg(a.map_vars(repl)),
            Expr::Call(f, a) => Expr::call(*f, a.map_vars(repl)),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Sum(ch) | Expr::Product(ch) => 1 + ch.iter().map(Expr::size).sum::<usize>(),
            Expr::Quotient(a, b) => 1 + a.size() + b.size(),
            Expr::Pow(a, _) | Expr::Neg(a) | Expr::Call(_, a) => 1 + a.size(),
        }
    }

    // Folding constructors. They fold constants, flatten nested sums and
    // products and merge numeric coefficients of identical sum terms. Nothing
    // else is rewritten.

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, Expr::neg(b)])
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::product(vec![a, b])
    }

    pub fn scale(c: f64, e: Expr) -> Expr {
        Expr::product(vec![Expr::Const(c), e])
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        for t in terms {
            match t {
                Expr::Sum(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        let mut constant = 0.0;
        let mut merged: Vec<(f64, Expr)> = Vec::new();
        for t in flat {
            let (coef, core) = split_coefficient(t);
            match core {
                None => constant += coef,
                Some(core) => {
                    if let Some(slot) = merged.iter_mut().find(|(_, c)| *c == core) {
                        slot.0 += coef;
                    } else {
                        merged.push((coef, core));
                    }
                }
            }
        }
        let mut out: Vec<Expr> = merged
            .into_iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(c, core)| attach_coefficient(c, core))
            .collect();
        if constant != 0.0 || !constant.is_finite() {
            out.push(Expr::Const(constant));
        }
        match out.len() {
            0 => Expr::ZERO,
            1 => out.pop().unwrap(),
            _ => Expr::Sum(out),
        }
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut constant = 1.0;
        let mut rest = Vec::with_capacity(factors.len());
        let mut stack: Vec<Expr> = factors.into_iter().rev().collect();
        while let Some(f) = stack.pop() {
            match f {
                Expr::Const(c) => constant *= c,
                Expr::Product(inner) => stack.extend(inner.into_iter().rev()),
                Expr::Neg(inner) => {
                    constant = -constant;
                    stack.push(*inner);
                }
                other => rest.push(other),
            }
        }
        if constant == 0.0 {
            return Expr::ZERO;
        }
        if rest.is_empty() {
            return Expr::Const(constant);
        }
        if constant == 1.0 && rest.len() == 1 {
            return rest.pop().unwrap();
        }
        if constant == -1.0 && rest.len() == 1 {
            return Expr::Neg(Box::new(rest.pop().unwrap()));
        }
        if constant != 1.0 {
            rest.insert(0, Expr::Const(constant));
        }
        Expr::Product(rest)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            Expr::Product(mut f) if matches!(f.first(), Some(Expr::Const(_))) => {
                if let Expr::Const(c) = &mut f[0] {
                    *c = -*c;
                }
                if f.len() == 2 && f[0] == Expr::ONE {
                    f.pop().unwrap()
                } else {
                    Expr::Product(f)
                }
            }
            other => Expr::Neg(Box::new(other)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (_, Expr::Const(d)) if *d == 1.0 => a,
            (Expr::Const(n), Expr::Const(d)) if *d != 0.0 && (n / d).is_finite() => {
                Expr::Const(n / d)
            }
            (Expr::Const(n), _) if *n == 0.0 => Expr::ZERO,
            _ => Expr::Quotient(Box::new(a), Box::new(b)),
        }
    }

    pub fn powi(a: Expr, k: i32) -> Expr {
        match (k, &a) {
            (0, _) => Expr::ONE,
            (1, _) => a,
            (_, Expr::Const(c)) if c.powi(k).is_finite() && !(k < 0 && *c == 0.0) => {
                Expr::Const(c.powi(k))
            }
            _ => Expr::Pow(Box::new(a), k),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Expr::Const(c) = a {
            if let Ok(v) = f.apply(c) {
                return Expr::Const(v);
            }
        }
        Expr::Call(f, Box::new(a))
    }
}

/// Splits a sum term into a numeric coefficient and a non-constant core.
/// Constants return `None` as the core.
fn split_coefficient(t: Expr) -> (f64, Option<Expr>) {
    match t {
        Expr::Const(c) => (c, None),
        Expr::Neg(inner) => {
            let (c, core) = split_coefficient(*inner);
            (-c, core)
        }
        Expr::Product(mut f) if matches!(f.first(), Some(Expr::Const(_))) => {
            let c = f.remove(0).as_const().unwrap();
            let core = if f.len() == 1 { f.pop().unwrap() } else { Expr::Product(f) };
            (c, Some(core))
        }
        other => (1.0, Some(other)),
    }
}

fn attach_coefficient(c: f64, core: Expr) -> Expr {
    if c == 1.0 {
        core
    } else {
        Expr::product(vec![Expr::Const(c), core])
    }
}

/// Rectangular matrix of expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn from_rows(rows: Vec<Vec<Expr>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged expression matrix");
        ExprMatrix { rows: r, cols: c, entries: rows.into_iter().flatten().collect() }
    }

    /// Jacobian of `exprs` with respect to `vars`, shape `exprs.len() x vars.len()`.
    pub fn jacobian(exprs: &[Expr], vars: &[Var]) -> Self {
        let entries = exprs
            .iter()
            .flat_map(|e| vars.iter().map(move |v| e.differentiate(*v)))
            .collect();
        ExprMatrix { rows: exprs.len(), cols: vars.len(), entries }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = self.get(i, j).eval(x, y)?;
            }
        }
        Ok(out)
    }
}

/// Slow variables `x1..xn` as a list.
pub fn slow_vars(n: usize) -> Vec<Var> {
    (0..n).map(Var::slow).collect()
}

/// Fast variables `y1..ym` as a list.
pub fn fast_vars(m: usize) -> Vec<Var> {
    (0..m).map(Var::fast).collect()
}

/// Evaluates a vector of expressions.
pub fn eval_all(exprs: &[Expr], x: &[f64], y: &[f64]) -> Result<Vec<f64>, EvalError> {
    exprs.iter().map(|e| e.eval(x, y)).collect()
}
