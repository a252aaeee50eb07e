//! Reduced system on the critical manifold and first-order slow-manifold
//! expansion.
//!
//! The critical manifold is `y = m0(x) = -A^{-1} h(x)`. Substituting
//! `m_eps = m0 + eps m1` into the invariance identity
//! `eps m_eps'(x) f(x, m_eps(x)) = A m_eps(x) + h(x)` and collecting the
//! `O(eps)` terms gives `m1 = A^{-1} m0'(x) f(x, m0(x))`.

use crate::expr::{eval_all, slow_vars, EvalError, Expr, ExprMatrix};
use crate::model::FastSlowSystem;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error("expansion order must be 0 or 1, got {0}")]
    UnsupportedOrder(u8),
    #[error("expansion terms disagree in length: m0 has {m0}, m1 has {m1}")]
    TermShape { m0: usize, m1: usize },
}

/// `dx/dt = F(x) = f(x, m0(x))` with its symbolic Jacobian.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    m0: Vec<Expr>,
    field: Vec<Expr>,
    jacobian: ExprMatrix,
}

impl ReducedSystem {
    /// A reduced system given directly by its vector field `F(x)`, with no
    /// fast variables behind it.
    pub fn from_field(field: Vec<Expr>) -> Self {
        let jacobian = ExprMatrix::jacobian(&field, &slow_vars(field.len()));
        ReducedSystem { m0: Vec::new(), field, jacobian }
    }

    pub fn n(&self) -> usize {
        self.field.len()
    }

    pub fn m0(&self) -> &[Expr] {
        &self.m0
    }

    pub fn field(&self) -> &[Expr] {
        &self.field
    }

    pub fn jacobian_exprs(&self) -> &ExprMatrix {
        &self.jacobian
    }

    pub fn eval_field(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        eval_all(&self.field, x, &[])
    }

    pub fn field_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, e) in out.iter_mut().zip(&self.field) {
            *o = e.eval_slow(x)?;
        }
        Ok(())
    }

    pub fn m0_values(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        eval_all(&self.m0, x, &[])
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        self.jacobian.eval(x, &[])
    }
}

/// Builds `m0 = -A^{-1} h` and `F(x) = f(x, m0(x))`.
pub fn reduce(sys: &FastSlowSystem) -> ReducedSystem {
    let neg_inv = -sys.a_inv();
    let m0 = linear_combination(&neg_inv, sys.h());
    let field: Vec<Expr> = sys.f().iter().map(|fi| fi.substitute_fast(&m0)).collect();
    let jacobian = ExprMatrix::jacobian(&field, &slow_vars(sys.n()));
    ReducedSystem { m0, field, jacobian }
}

/// Numeric Jacobian of the reduced field at `x`.
pub fn reduced_jacobian(rs: &ReducedSystem, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
    rs.jacobian(x)
}

/// `M e` for a numeric matrix and an expression vector.
fn linear_combination(mat: &DMatrix<f64>, exprs: &[Expr]) -> Vec<Expr> {
    (0..mat.nrows())
        .map(|j| {
            Expr::sum(
                exprs
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mat[(j, *k)] != 0.0)
                    .map(|(k, e)| Expr::scale(mat[(j, k)], e.clone()))
                    .collect(),
            )
        })
        .collect()
}

/// `m_eps(x) = m0(x) + eps m1(x)` truncated at `order`.
#[derive(Debug, Clone)]
pub struct SlowManifoldApprox {
    order: u8,
    m0: Vec<Expr>,
    m1: Vec<Expr>,
    m0_jac: ExprMatrix,
    m1_jac: ExprMatrix,
}

impl SlowManifoldApprox {
    /// Manifold approximation from explicit terms over `n` slow variables.
    /// With `order == 0` the `m1` terms are ignored.
    pub fn from_terms(n: usize, m0: Vec<Expr>, m1: Vec<Expr>, order: u8) -> Result<Self, ReductionError> {
        if order > 1 {
            return Err(ReductionError::UnsupportedOrder(order));
        }
        let m1 = if order == 0 { vec![Expr::ZERO; m0.len()] } else { m1 };
        if m1.len() != m0.len() {
            return Err(ReductionError::TermShape { m0: m0.len(), m1: m1.len() });
        }
        let vars = slow_vars(n);
        let m0_jac = ExprMatrix::jacobian(&m0, &vars);
        let m1_jac = ExprMatrix::jacobian(&m1, &vars);
        Ok(SlowManifoldApprox { order, m0, m1, m0_jac, m1_jac })
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn m0(&self) -> &[Expr] {
        &self.m0
    }

    pub fn m1(&self) -> &[Expr] {
        &self.m1
    }

    pub fn eval(&self, x: &[f64], eps: f64) -> Result<Vec<f64>, EvalError> {
        let mut y = eval_all(&self.m0, x, &[])?;
        if self.order == 1 {
            for (yj, e) in y.iter_mut().zip(&self.m1) {
                *yj += eps * e.eval_slow(x)?;
            }
        }
        Ok(y)
    }

    /// `m_eps'(x)`, shape `m x n`.
    pub fn jacobian(&self, x: &[f64], eps: f64) -> Result<DMatrix<f64>, EvalError> {
        let mut j = self.m0_jac.eval(x, &[])?;
        if self.order == 1 {
            j += self.m1_jac.eval(x, &[])? * eps;
        }
        Ok(j)
    }

    /// The expansion as expressions at a fixed `eps`.
    pub fn terms_at(&self, eps: f64) -> Vec<Expr> {
        self.m0
            .iter()
            .zip(&self.m1)
            .map(|(a, b)| Expr::add(a.clone(), Expr::scale(eps, b.clone())))
            .collect()
    }
}

/// Slow-manifold expansion of order 0 (`m0`) or 1 (`m0 + eps m1`).
pub fn expand_manifold(sys: &FastSlowSystem, order: u8) -> Result<SlowManifoldApprox, ReductionError> {
    if order > 1 {
        return Err(ReductionError::UnsupportedOrder(order));
    }
    let rs = reduce(sys);
    let n = sys.n();
    let m0 = rs.m0.clone();
    let m1 = if order == 0 {
        vec![Expr::ZERO; sys.m()]
    } else {
        // m0'(x) F(x), then A^{-1} applied on the left.
        let m0_jac = ExprMatrix::jacobian(&m0, &slow_vars(n));
        let drift: Vec<Expr> = (0..sys.m())
            .map(|k| Expr::sum((0..n).map(|l| Expr::mul(m0_jac.get(k, l).clone(), rs.field[l].clone())).collect()))
            .collect();
        linear_combination(sys.a_inv(), &drift)
    };
    SlowManifoldApprox::from_terms(n, m0, m1, order)
}

/// Invariance residual `|| eps m_eps'(x) f(x, m_eps(x)) - A m_eps(x) - h(x) ||_2`.
pub fn manifold_defect(
    sys: &FastSlowSystem,
    approx: &SlowManifoldApprox,
    x: &[f64],
    eps: f64,
) -> Result<f64, EvalError> {
    let y = approx.eval(x, eps)?;
    let fv = DVector::from_vec(sys.slow_field(x, &y)?);
    let jac = approx.jacobian(x, eps)?;
    let fast = DVector::from_vec(sys.fast_field(x, &y)?);
    Ok((jac * fv * eps - fast).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, Var, VarContext};

    fn system(f: &str, a: f64, h: &str) -> FastSlowSystem {
        FastSlowSystem::new(
            vec![parse_expr(f, VarContext::new(1, 1)).unwrap()],
            DMatrix::from_element(1, 1, a),
            vec![parse_expr(h, VarContext::slow_only(1)).unwrap()],
        )
        .unwrap()
    }

    fn intro() -> FastSlowSystem {
        system("-x1 - y1", -1.0, "x1")
    }

    fn counterexample() -> FastSlowSystem {
        system("y1 - (x1^3/3 - x1)", -1.0, "-4*tanh(x1)")
    }

    #[test]
    fn intro_reduces_to_minus_two_x() {
        let rs = reduce(&intro());
        assert_eq!(rs.m0()[0], Expr::var(Var::slow(0)));
        assert_eq!(rs.field()[0].to_string(), "-2*x1");
        assert_eq!(reduced_jacobian(&rs, &[0.37]).unwrap()[(0, 0)], -2.0);
    }

    #[test]
    fn counterexample_reduction() {
        let rs = reduce(&counterexample());
        for x in [-3.0f64, -0.4, 0.0, 1.1, 2.5] {
            let m0 = rs.m0_values(&[x]).unwrap()[0];
            assert!((m0 + 4.0 * x.tanh()).abs() < 1e-14);
            let want = -4.0 * x.tanh() - x.powi(3) / 3.0 + x;
            assert!((rs.eval_field(&[x]).unwrap()[0] - want).abs() < 1e-13);
        }
        // d/dx(-4 tanh x - x^3/3 + x) at 0 = -4 + 1.
        assert_eq!(reduced_jacobian(&rs, &[0.0]).unwrap()[(0, 0)], -3.0);
    }

    #[test]
    fn zero_forcing_gives_zero_manifold() {
        let sys = system("-x1 + y1^2", -2.0, "0");
        let rs = reduce(&sys);
        assert!(rs.m0()[0].is_zero());
        assert_eq!(rs.eval_field(&[1.5]).unwrap()[0], -1.5);
    }

    #[test]
    fn odd_cubic_jacobian_at_origin() {
        let rs = ReducedSystem::from_field(vec![parse_expr("x1 - x1^3", VarContext::slow_only(1)).unwrap()]);
        assert_eq!(reduced_jacobian(&rs, &[0.0]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn intro_first_order_term() {
        let approx = expand_manifold(&intro(), 1).unwrap();
        assert_eq!(approx.m1()[0].to_string(), "2*x1");
        // Exact invariant line y = kx solves eps k^2 + (eps - 1) k + 1 = 0.
        let eps: f64 = 1e-3;
        let k = ((1.0 - eps) - ((1.0 - eps).powi(2) - 4.0 * eps).sqrt()) / (2.0 * eps);
        let y = approx.eval(&[1.0], eps).unwrap()[0];
        assert!((y - k).abs() < 10.0 * eps * eps);
    }

    #[test]
    fn equilibrium_manifold_has_no_correction() {
        // f(x, m0(x)) = 0 identically.
        let sys = system("y1 - x1", -1.0, "x1");
        let approx = expand_manifold(&sys, 1).unwrap();
        for x in [-1.0, 0.3, 2.0] {
            assert_eq!(approx.m1()[0].eval_slow(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn counterexample_first_order_vanishes_at_origin() {
        let approx = expand_manifold(&counterexample(), 1).unwrap();
        assert_eq!(approx.m1()[0].eval_slow(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn defect_examples() {
        let sys = intro();
        let zeroth = expand_manifold(&sys, 0).unwrap();
        assert!(manifold_defect(&sys, &zeroth, &[0.7], 0.0).unwrap() < 1e-12);
        let d = manifold_defect(&sys, &zeroth, &[1.0], 0.1).unwrap();
        assert!((d - 0.2).abs() < 1e-12);

        let eps: f64 = 0.1;
        let k = ((1.0 - eps) - ((1.0 - eps).powi(2) - 4.0 * eps).sqrt()) / (2.0 * eps);
        assert!((k - 1.0 - eps * k * (1.0 + k)).abs() < 1e-14);
        let line = SlowManifoldApprox::from_terms(1, vec![Expr::scale(k, Expr::var(Var::slow(0)))], vec![], 0).unwrap();
        for x in [-1.0, 0.25, 1.0] {
            assert!(manifold_defect(&sys, &line, &[x], eps).unwrap() < 1e-10);
        }
    }

    #[test]
    fn rejects_higher_orders() {
        assert_eq!(expand_manifold(&intro(), 2).unwrap_err(), ReductionError::UnsupportedOrder(2));
    }
}
