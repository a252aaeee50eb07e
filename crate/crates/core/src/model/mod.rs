//! Fast-slow system definition, regions and run configuration.

mod file;
mod matexp;

pub use file::{load_system, parse_system, LoadError, SystemFile};
pub use matexp::{matrix_exp_bound, spectral_norm, BoundCertificate, ExpBound};

use crate::expr::{fast_vars, slow_vars, EvalError, Expr, ExprMatrix, Var, VarContext};
use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use thiserror::Error;

pub const DEFAULT_HURWITZ_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("matrix A is not Hurwitz: max real part of eigenvalues is {max_real:e}")]
    NotHurwitz { max_real: f64 },
    #[error("matrix A must be {m}x{m}, got {rows}x{cols}")]
    MatrixShape { m: usize, rows: usize, cols: usize },
    #[error("matrix A has non-finite entries")]
    NonFiniteMatrix,
    #[error("expected {expected} {what} expression(s), got {found}")]
    ExprCount { what: &'static str, expected: usize, found: usize },
    #[error("{what}{index} references undeclared variable {var}")]
    DanglingVariable { what: &'static str, index: usize, var: Var },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid regions: {0}")]
    InvalidRegions(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Closed axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`. Whether the
/// boundary belongs to a region is decided by the caller (`L` is open).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ModelError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(ModelError::InvalidBox("bounds must have equal, nonzero length".into()));
        }
        for (i, (a, b)) in lo.iter().zip(&hi).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(ModelError::InvalidBox(format!("axis {} has a non-finite bound", i + 1)));
            }
            if a >= b {
                return Err(ModelError::InvalidBox(format!("axis {} is empty: [{a}, {b}]", i + 1)));
            }
        }
        Ok(BoxRegion { lo, hi })
    }

    /// Cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, ModelError> {
        BoxRegion::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn contains_closed(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v >= a && v <= b)
    }

    pub fn contains_open(&self, p: &[f64]) -> bool {
        p.len() == self.dim() && p.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| v > a && v < b)
    }

    /// Maps a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.lo.iter().zip(&self.hi)).map(|(t, (a, b))| a + t * (b - a)).collect()
    }

    /// Smallest face-to-face gap between `self` and the boundary of `outer`;
    /// positive iff `self` lies in the interior of `outer`.
    pub fn gap_to_boundary_of(&self, outer: &BoxRegion) -> f64 {
        (0..self.dim())
            .map(|i| (self.lo[i] - outer.lo[i]).min(outer.hi[i] - self.hi[i]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Cartesian product `self x other`.
    pub fn product(&self, other: &BoxRegion) -> BoxRegion {
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        BoxRegion { lo, hi }
    }

    /// Box grown by `r` on every side.
    pub fn inflate(&self, r: f64) -> Result<BoxRegion, ModelError> {
        BoxRegion::new(self.lo.iter().map(|a| a - r).collect(), self.hi.iter().map(|b| b + r).collect())
    }
}

impl std::fmt::Display for BoxRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for i in 0..self.dim() {
            if i > 0 {
                f.write_str(" x ")?;
            }
            write!(f, "[{}, {}]", self.lo[i], self.hi[i])?;
        }
        Ok(())
    }
}

/// Slow boxes `K` and `K~`, open fast box `L`. `D = K x L` and
/// `D~ = Int K~ x L`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionSet {
    pub k: BoxRegion,
    pub k_tilde: BoxRegion,
    pub l: BoxRegion,
}

impl RegionSet {
    pub fn new(k: BoxRegion, k_tilde: BoxRegion, l: BoxRegion) -> Result<Self, ModelError> {
        if k.dim() != k_tilde.dim() {
            return Err(ModelError::InvalidRegions(format!(
                "K has dimension {} but Ktilde has dimension {}",
                k.dim(),
                k_tilde.dim()
            )));
        }
        let gap = k.gap_to_boundary_of(&k_tilde);
        if gap <= 0.0 {
            return Err(ModelError::InvalidRegions(format!(
                "K must lie strictly inside the interior of Ktilde (gap {gap})"
            )));
        }
        Ok(RegionSet { k, k_tilde, l })
    }

    /// `(x, y) in D = K x L`.
    pub fn in_d(&self, x: &[f64], y: &[f64]) -> bool {
        self.k.contains_closed(x) && self.l.contains_open(y)
    }

    /// `(x, y) in D~ = Int K~ x L`.
    pub fn in_d_tilde(&self, x: &[f64], y: &[f64]) -> bool {
        self.k_tilde.contains_open(x) && self.l.contains_open(y)
    }

    /// Closure of `D` as one box in `(x, y)` space.
    pub fn d_closure(&self) -> BoxRegion {
        self.k.product(&self.l)
    }

    /// Closure of `D~` as one box in `(x, y)` space.
    pub fn d_tilde_closure(&self) -> BoxRegion {
        self.k_tilde.product(&self.l)
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<(), ModelError> {
        if self.k.dim() != n || self.l.dim() != m {
            return Err(ModelError::InvalidRegions(format!(
                "regions have dimensions ({}, {}) but the system has n={n}, m={m}",
                self.k.dim(),
                self.l.dim()
            )));
        }
        Ok(())
    }
}

/// Eigenvalue of `A` as a `(re, im)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex<f64>> for Eigenvalue {
    fn from(c: Complex<f64>) -> Self {
        Eigenvalue { re: c.re, im: c.im }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub eigenvalues: Vec<Eigenvalue>,
    pub max_real: f64,
    pub margin: f64,
    pub hurwitz: bool,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.hurwitz && self.problems.is_empty()
    }
}

/// Eigenvalues of a square matrix, sorted by real part then imaginary part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Eigenvalue> {
    let mut ev: Vec<Eigenvalue> = a.complex_eigenvalues().iter().map(|c| Eigenvalue::from(*c)).collect();
    ev.sort_by(|p, q| p.re.total_cmp(&q.re).then(p.im.total_cmp(&q.im)));
    ev
}

/// Checks shape, variable references and the Hurwitz property of the raw
/// system parts without constructing a [`FastSlowSystem`].
pub fn validate_system(n: usize, m: usize, f: &[Expr], a: &DMatrix<f64>, h: &[Expr], margin: f64) -> ValidationReport {
    let mut problems = Vec::new();
    if f.len() != n {
        problems.push(ModelError::ExprCount { what: "slow", expected: n, found: f.len() }.to_string());
    }
    if h.len() != m {
        problems.push(ModelError::ExprCount { what: "fast", expected: m, found: h.len() }.to_string());
    }
    for (i, e) in f.iter().enumerate() {
        if let Some(var) = e.dangling_var(VarContext::new(n, m)) {
            problems.push(ModelError::DanglingVariable { what: "f", index: i + 1, var }.to_string());
        }
    }
    for (j, e) in h.iter().enumerate() {
        if let Some(var) = e.dangling_var(VarContext::slow_only(n)) {
            problems.push(ModelError::DanglingVariable { what: "h", index: j + 1, var }.to_string());
        }
    }
    let square = a.nrows() == m && a.ncols() == m;
    if !square {
        problems.push(ModelError::MatrixShape { m, rows: a.nrows(), cols: a.ncols() }.to_string());
    }
    let finite = a.iter().all(|v| v.is_finite());
    if !finite {
        problems.push(ModelError::NonFiniteMatrix.to_string());
    }
    let (eigenvalues, max_real) = if square && finite && m > 0 {
        let ev = eigenvalues(a);
        let max_real = ev.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
        (ev, max_real)
    } else {
        (Vec::new(), f64::NAN)
    };
    ValidationReport { hurwitz: max_real < -margin, eigenvalues, max_real, margin, problems }
}

/// `dx/dt = f(x, y)`, `eps dy/dt = A y + h(x)` with `A` Hurwitz.
#[derive(Debug, Clone)]
pub struct FastSlowSystem {
    n: usize,
    m: usize,
    f: Vec<Expr>,
    a: DMatrix<f64>,
    h: Vec<Expr>,
    a_inv: DMatrix<f64>,
    report: ValidationReport,
    f_x: ExprMatrix,
    f_y: ExprMatrix,
    h_x: ExprMatrix,
}

impl FastSlowSystem {
    pub fn new(f: Vec<Expr>, a: DMatrix<f64>, h: Vec<Expr>) -> Result<Self, ModelError> {
        Self::with_margin(f, a, h, DEFAULT_HURWITZ_MARGIN)
    }

    pub fn with_margin(f: Vec<Expr>, a: DMatrix<f64>, h: Vec<Expr>, margin: f64) -> Result<Self, ModelError> {
        let n = f.len();
        let m = h.len();
        if n == 0 || m == 0 {
            return Err(ModelError::InvalidConfig("system needs n >= 1 and m >= 1".into()));
        }
        if a.nrows() != m || a.ncols() != m {
            return Err(ModelError::MatrixShape { m, rows: a.nrows(), cols: a.ncols() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteMatrix);
        }
        for (i, e) in f.iter().enumerate() {
            if let Some(var) = e.dangling_var(VarContext::new(n, m)) {
                return Err(ModelError::DanglingVariable { what: "f", index: i + 1, var });
            }
        }
        for (j, e) in h.iter().enumerate() {
            if let Some(var) = e.dangling_var(VarContext::slow_only(n)) {
                return Err(ModelError::DanglingVariable { what: "h", index: j + 1, var });
            }
        }
        let report = validate_system(n, m, &f, &a, &h, margin);
        if !report.hurwitz {
            return Err(ModelError::NotHurwitz { max_real: report.max_real });
        }
        let a_inv = a.clone().try_inverse().ok_or(ModelError::NotHurwitz { max_real: report.max_real })?;
        let f_x = ExprMatrix::jacobian(&f, &slow_vars(n));
        let f_y = ExprMatrix::jacobian(&f, &fast_vars(m));
        let h_x = ExprMatrix::jacobian(&h, &slow_vars(n));
        Ok(FastSlowSystem { n, m, f, a, h, a_inv, report, f_x, f_y, h_x })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn f(&self) -> &[Expr] {
        &self.f
    }

    pub fn h(&self) -> &[Expr] {
        &self.h
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn validation(&self) -> &ValidationReport {
        &self.report
    }

    pub fn context(&self) -> VarContext {
        VarContext::new(self.n, self.m)
    }

    /// `f(x, y)` written into `out`.
    pub fn slow_field_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.f) {
            *o = e.eval(x, y)?;
        }
        Ok(())
    }

    pub fn slow_field(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.n];
        self.slow_field_into(x, y, &mut out)?;
        Ok(out)
    }

    /// `A y + h(x)` written into `out`.
    pub fn fast_field_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = self.h[j].eval_slow(x)?;
            for (k, yk) in y.iter().enumerate() {
                acc += self.a[(j, k)] * yk;
            }
            *o = acc;
        }
        Ok(())
    }

    pub fn fast_field(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.m];
        self.fast_field_into(x, y, &mut out)?;
        Ok(out)
    }

    pub fn h_values(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.h.iter().map(|e| e.eval_slow(x)).collect()
    }

    /// Jacobian of the slow-time vector field `(f, (A y + h)/eps)` at `(x, y)`.
    pub fn full_jacobian(&self, x: &[f64], y: &[f64], eps: f64) -> Result<DMatrix<f64>, EvalError> {
        let (n, m) = (self.n, self.m);
        let mut j = DMatrix::zeros(n + m, n + m);
        let fx = self.f_x.eval(x, y)?;
        let fy = self.f_y.eval(x, y)?;
        let hx = self.h_x.eval(x, &[])?;
        j.view_mut((0, 0), (n, n)).copy_from(&fx);
        j.view_mut((0, n), (n, m)).copy_from(&fy);
        j.view_mut((n, 0), (m, n)).copy_from(&(hx / eps));
        j.view_mut((n, n), (m, m)).copy_from(&(&self.a / eps));
        Ok(j)
    }

    /// Symbolic Jacobian of `(f, A y + h)` over `(x, y)`; row signs match the
    /// slow-time field for every `eps > 0`.
    pub fn full_jacobian_exprs(&self) -> ExprMatrix {
        let (n, m) = (self.n, self.m);
        let mut rows = Vec::with_capacity(n + m);
        for i in 0..n {
            let mut row: Vec<Expr> = (0..n).map(|k| self.f_x.get(i, k).clone()).collect();
            row.extend((0..m).map(|k| self.f_y.get(i, k).clone()));
            rows.push(row);
        }
        for j in 0..m {
            let mut row: Vec<Expr> = (0..n).map(|k| self.h_x.get(j, k).clone()).collect();
            row.extend((0..m).map(|k| Expr::Const(self.a[(j, k)])));
            rows.push(row);
        }
        ExprMatrix::from_rows(rows)
    }

    pub fn f_x(&self) -> &ExprMatrix {
        &self.f_x
    }

    pub fn f_y(&self) -> &ExprMatrix {
        &self.f_y
    }

    pub fn h_x(&self) -> &ExprMatrix {
        &self.h_x
    }
}

/// Numerical settings shared by simulation and analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub epsilon: f64,
    pub atol: f64,
    pub rtol: f64,
    pub t_max: f64,
    /// Output sampling interval in slow time.
    pub sample_dt: f64,
    pub conv_tol: f64,
    pub cycle_tol: f64,
    /// Fraction of the time span discarded before looking for a cycle.
    pub transient_fraction: f64,
    /// Below this `eps` the full system is integrated in fast time.
    pub stiff_threshold: f64,
    pub seed: u64,
    pub samples: usize,
    pub max_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            epsilon: 0.05,
            atol: 1e-10,
            rtol: 1e-8,
            t_max: 200.0,
            sample_dt: 0.02,
            conv_tol: 1e-3,
            cycle_tol: 1e-2,
            transient_fraction: 0.5,
            stiff_threshold: 1e-3,
            seed: 0,
            samples: 500,
            max_steps: 5_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("epsilon", self.epsilon),
            ("atol", self.atol),
            ("rtol", self.rtol),
            ("tmax", self.t_max),
            ("sample_dt", self.sample_dt),
            ("conv_tol", self.conv_tol),
            ("cycle_tol", self.cycle_tol),
            ("stiff_threshold", self.stiff_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.transient_fraction) {
            return Err(ModelError::InvalidConfig("transient_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        SimConfig { epsilon, ..self.clone() }
    }
}
