//! Exponential decay bound `||exp(A t)|| <= C exp(beta t)` for Hurwitz `A`,
//! in the spectral norm.

use super::{eigenvalues, ModelError, DEFAULT_HURWITZ_MARGIN};
use nalgebra::DMatrix;
use serde::Serialize;

const SAFETY: f64 = 1.25;
const COARSE_POINTS: usize = 400;
const DENSE_POINTS: usize = 4000;
/// Grid end in units of `1/|beta|`; past it the ratio has decayed like `exp(-20)`.
const HORIZON: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundCertificate {
    /// `mu_2(A) <= beta`, so `||exp(A t)|| <= exp(mu_2 t) <= exp(beta t)` and `C = 1`.
    LogNorm { mu: f64 },
    /// `C` is the sampled maximum of `||exp(A t)|| exp(-beta t)` times the
    /// safety factor, re-checked on a denser grid.
    Sampled { t_end: f64, coarse_max: f64, dense_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpBound {
    pub c: f64,
    pub beta: f64,
    pub max_real: f64,
    pub certificate: BoundCertificate,
}

impl ExpBound {
    pub fn holds_at(&self, a: &DMatrix<f64>, t: f64) -> bool {
        spectral_norm(&(a * t).exp()) <= self.c * (self.beta * t).exp() * (1.0 + 1e-12) + 1e-300
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.clone().svd(false, false).singular_values.max()
}

fn ratio(a: &DMatrix<f64>, beta: f64, t: f64) -> f64 {
    spectral_norm(&(a * t).exp()) * (-beta * t).exp()
}

fn grid(t_end: f64, points: usize) -> impl Iterator<Item = f64> {
    // Geometric from t_end * 1e-6 plus a uniform pass, so both the initial
    // transient and the decay tail are covered.
    let start = t_end * 1e-6;
    let q = (t_end / start).powf(1.0 / (points - 1) as f64);
    let geometric = (0..points).map(move |i| start * q.powi(i as i32));
    let uniform = (0..=points).map(move |i| t_end * i as f64 / points as f64);
    std::iter::once(0.0).chain(geometric).chain(uniform)
}

/// Returns `(C, beta)` with `beta = max Re(lambda) / 2`.
pub fn matrix_exp_bound(a: &DMatrix<f64>) -> Result<ExpBound, ModelError> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(ModelError::MatrixShape { m: a.nrows(), rows: a.nrows(), cols: a.ncols() });
    }
    let max_real = eigenvalues(a).iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    if !(max_real < -DEFAULT_HURWITZ_MARGIN) {
        return Err(ModelError::NotHurwitz { max_real });
    }
    let beta = 0.5 * max_real;
    let sym = (a + a.transpose()) * 0.5;
    let mu = sym.symmetric_eigenvalues().max();
    if mu <= beta {
        return Ok(ExpBound { c: 1.0, beta, max_real, certificate: BoundCertificate::LogNorm { mu } });
    }
    let t_end = HORIZON / beta.abs();
    let coarse_max = grid(t_end, COARSE_POINTS).map(|t| ratio(a, beta, t)).fold(1.0, f64::max);
    let mut c = SAFETY * coarse_max;
    let dense_max = grid(t_end, DENSE_POINTS).map(|t| ratio(a, beta, t)).fold(1.0, f64::max);
    if dense_max > c {
        c = SAFETY * dense_max;
    }
    Ok(ExpBound { c, beta, max_real, certificate: BoundCertificate::Sampled { t_end, coarse_max, dense_max } })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_decay() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let b = matrix_exp_bound(&a).unwrap();
        assert_eq!(b.c, 1.0);
        assert_eq!(b.beta, -0.5);
    }

    #[test]
    fn diagonal_decay() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -3.0]));
        let b = matrix_exp_bound(&a).unwrap();
        assert_eq!(b.c, 1.0);
        assert!((b.beta + 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_hurwitz_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(matrix_exp_bound(&a), Err(ModelError::NotHurwitz { .. })));
        assert!(matrix_exp_bound(&DMatrix::from_element(1, 1, 1.0)).is_err());
    }

    #[test]
    fn triangular_matches_closed_form_oracle() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 5.0, 0.0, -2.0]);
        let b = matrix_exp_bound(&a).unwrap();
        assert!((b.beta + 0.5).abs() < 1e-12);
        // exp(At) = [[e^-t, 5(e^-t - e^-2t)], [0, e^-2t]]; spectral norm from
        // the 2x2 singular-value formula.
        let oracle = |t: f64| {
            let (p, q, r) = ((-t).exp(), 5.0 * ((-t).exp() - (-2.0 * t).exp()), (-2.0 * t).exp());
            let fro2 = p * p + q * q + r * r;
            let det = p * r;
            let s = ((fro2 + (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt();
            s * (0.5 * t).exp()
        };
        let oracle_max = (0..=50_000).map(|i| oracle(50.0 * i as f64 / 50_000.0)).fold(0.0, f64::max);
        assert!(b.c >= oracle_max, "C={} below oracle sup {oracle_max}", b.c);
        assert!(b.c <= SAFETY * oracle_max * 1.001, "C={} too loose vs {oracle_max}", b.c);
    }
}
