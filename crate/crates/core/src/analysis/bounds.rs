use crate::expr::{slow_vars, EvalError, ExprMatrix};
use crate::model::{matrix_exp_bound, BoxRegion, FastSlowSystem, ModelError, RegionSet};
use crate::monotone::halton_points;
use crate::reduction::ReducedSystem;
use crate::sim::Trajectory;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use super::regions::SUP_SAFETY;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("delta must be positive and finite, got {0}")]
    BadDelta(f64),
    #[error("M must be positive and finite, got {0}")]
    BadM(f64),
    #[error("C must be at least 1 and beta negative, got C = {c}, beta = {beta}")]
    BadDecay { c: f64, beta: f64 },
    #[error("initial fiber distance must be finite and non-negative, got {0}")]
    BadDistance(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttractionBound {
    pub c: f64,
    pub beta: f64,
    pub m_bound: f64,
    pub delta: f64,
    pub z0_norm: f64,
    pub eps_max: f64,
    /// Fast-time entry time into the band.
    pub t0_prime: f64,
    /// Slow-time entry time at `eps_max`.
    pub t0: f64,
}

impl AttractionBound {
    pub fn t0_prime_for(&self, z0_norm: f64) -> f64 {
        t0_prime(self.c, self.beta, self.delta, z0_norm)
    }

    pub fn t0_at(&self, eps: f64) -> f64 {
        eps * self.t0_prime
    }

    /// Slow-time entry time for a trajectory that starts `z0_norm` off the
    /// manifold, at `eps`.
    pub fn t0_for(&self, z0_norm: f64, eps: f64) -> f64 {
        eps * self.t0_prime_for(z0_norm)
    }
}

fn t0_prime(c: f64, beta: f64, delta: f64, z0_norm: f64) -> f64 {
    let ratio = 4.0 * c * z0_norm / delta;
    if ratio <= 1.0 + 4.0 * f64::EPSILON {
        return 0.0;
    }
    ratio.ln() / beta.abs()
}

/// Both formulas for given decay constants `(C, beta)`.
pub fn attraction_bound_with(c: f64, beta: f64, m_bound: f64, delta: f64, z0_norm: f64) -> Result<AttractionBound, BoundError> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(BoundError::BadDelta(delta));
    }
    if !(m_bound.is_finite() && m_bound > 0.0) {
        return Err(BoundError::BadM(m_bound));
    }
    if !(c.is_finite() && c >= 1.0 && beta.is_finite() && beta < 0.0) {
        return Err(BoundError::BadDecay { c, beta });
    }
    if !(z0_norm.is_finite() && z0_norm >= 0.0) {
        return Err(BoundError::BadDistance(z0_norm));
    }
    let eps_max = delta * beta.abs() / (8.0 * m_bound * c);
    let tp = t0_prime(c, beta, delta, z0_norm);
    Ok(AttractionBound { c, beta, m_bound, delta, z0_norm, eps_max, t0_prime: tp, t0: eps_max * tp })
}

/// `(C, beta)` from the exponential bound of `a`, then both formulas.
pub fn attraction_bound(a: &DMatrix<f64>, m_bound: f64, delta: f64, z0_norm: f64) -> Result<AttractionBound, BoundError> {
    let e = matrix_exp_bound(a)?;
    attraction_bound_with(e.c, e.beta, m_bound, delta, z0_norm)
}

fn grid(region: &BoxRegion, per_axis: usize) -> Vec<Vec<f64>> {
    let d = region.dim();
    if d > 4 {
        let mut pts = halton_points(region, 8192);
        for mask in 0..(1usize << d.min(12)) {
            pts.push((0..d).map(|k| if mask >> k & 1 == 1 { region.hi()[k] } else { region.lo()[k] }).collect());
        }
        return pts;
    }
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|k| {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    region.lo()[k] + region.widths()[k] * i as f64 / (per_axis - 1) as f64
                })
                .collect()
        })
        .collect()
}

/// `1.1 * sup ||m0'(x) f(x, y)||` over a grid on the closure of `D`.
pub fn estimate_m(sys: &FastSlowSystem, rs: &ReducedSystem, regions: &RegionSet) -> Result<f64, EvalError> {
    let n = sys.n();
    let dm0 = ExprMatrix::jacobian(rs.m0(), &slow_vars(n));
    let per_axis = match n + sys.m() {
        1 | 2 => 201,
        3 => 41,
        _ => 15,
    };
    let mut sup = 0.0f64;
    for p in grid(&regions.d_closure(), per_axis) {
        let (x, y) = p.split_at(n);
        let j = dm0.eval(x, &[])?;
        let f = nalgebra::DVector::from_vec(sys.slow_field(x, y)?);
        sup = sup.max((j * f).norm());
    }
    Ok(SUP_SAFETY * sup)
}

/// Half the distance from `m0(K)` to the boundary of `L`, sampled.
pub fn default_delta(rs: &ReducedSystem, regions: &RegionSet) -> Result<f64, EvalError> {
    let per_axis = match rs.n() {
        1 => 2001,
        2 => 101,
        3 => 21,
        _ => 9,
    };
    let mut gap = f64::INFINITY;
    for x in grid(&regions.k, per_axis) {
        let y = rs.m0_values(&x)?;
        for (j, v) in y.iter().enumerate() {
            gap = gap.min(v - regions.l.lo()[j]).min(regions.l.hi()[j] - v);
        }
    }
    Ok(gap / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandCheck {
    /// Slow-time entry time for this trajectory.
    pub t0: f64,
    pub z0_norm: f64,
    pub checked: usize,
    pub violations: usize,
    /// Largest `|y - m0(x)|` at stored points with `t >= t0`.
    pub max_distance: f64,
}

impl BandCheck {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Checks `|y - m0(x)| <= delta / 2` at every stored point with `t >= T0`,
/// with `T0` computed from this trajectory's own initial fiber distance.
pub fn band_capture(rs: &ReducedSystem, traj: &Trajectory, bound: &AttractionBound, eps: f64) -> Result<BandCheck, EvalError> {
    let dist = |i: usize| -> Result<f64, EvalError> {
        let m0 = rs.m0_values(traj.slow(i))?;
        Ok(traj.fast(i).iter().zip(&m0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    };
    let z0_norm = dist(0)?;
    let t0 = bound.t0_for(z0_norm, eps);
    let mut check = BandCheck { t0, z0_norm, checked: 0, violations: 0, max_distance: 0.0 };
    for (i, &t) in traj.times().iter().enumerate() {
        if t < t0 {
            continue;
        }
        let d = dist(i)?;
        check.checked += 1;
        check.max_distance = check.max_distance.max(d);
        if d > bound.delta / 2.0 {
            check.violations += 1;
        }
    }
    Ok(check)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityClass {
    Stable,
    Repelling,
    Saddle,
    CenterBorderline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanarClassification {
    pub class: StabilityClass,
    pub trace: f64,
    pub det: f64,
}

/// Planar classification from the signs of trace and determinant.
pub fn trace_det_classify(j: &DMatrix<f64>) -> Option<PlanarClassification> {
    if j.nrows() != 2 || j.ncols() != 2 {
        return None;
    }
    let trace = j[(0, 0)] + j[(1, 1)];
    let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
    let scale = j.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
    let zero_tr = trace.abs() <= 1e-12 * scale;
    let zero_det = det.abs() <= 1e-12 * scale * scale;
    let class = if zero_det {
        StabilityClass::CenterBorderline
    } else if det < 0.0 {
        StabilityClass::Saddle
    } else if zero_tr {
        StabilityClass::CenterBorderline
    } else if trace < 0.0 {
        StabilityClass::Stable
    } else {
        StabilityClass::Repelling
    };
    Some(PlanarClassification { class, trace, det })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_arithmetic() {
        let b = attraction_bound_with(1.0, -1.0, 5.0, 0.4, 0.0).unwrap();
        assert!((b.eps_max - 0.01).abs() < 1e-15);
        assert_eq!(b.t0_prime, 0.0);
        let b = attraction_bound_with(2.0, -3.0, 10.0, 0.3, 1.0).unwrap();
        assert!((b.eps_max - 0.005625).abs() < 1e-15);
        assert!((b.t0_prime - (8.0f64 / 0.3).ln() / 3.0).abs() < 1e-14);
        assert!((b.t0_prime - 1.0945).abs() < 1e-4);
        assert!((b.t0_at(0.001) - 1e-3 * b.t0_prime).abs() < 1e-18);
    }

    #[test]
    fn short_start_needs_no_time() {
        let b = attraction_bound_with(1.5, -0.7, 3.0, 0.6, 0.1).unwrap();
        assert_eq!(b.t0_prime, 0.0);
        assert_eq!(b.t0_prime_for(0.6 / 6.0), 0.0);
        assert!(b.t0_prime_for(0.6 / 6.0 * 1.01) > 0.0);
    }

    #[test]
    fn from_matrix_uses_exp_bound() {
        let a = DMatrix::from_element(1, 1, -2.0);
        let b = attraction_bound(&a, 5.0, 0.4, 1.0).unwrap();
        assert_eq!(b.c, 1.0);
        assert_eq!(b.beta, -1.0);
        assert!((b.eps_max - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(attraction_bound_with(1.0, -1.0, 5.0, 0.0, 1.0), Err(BoundError::BadDelta(_))));
        assert!(matches!(attraction_bound_with(1.0, -1.0, -5.0, 0.4, 1.0), Err(BoundError::BadM(_))));
        assert!(matches!(attraction_bound_with(1.0, 0.5, 5.0, 0.4, 1.0), Err(BoundError::BadDecay { .. })));
        let a = DMatrix::from_element(1, 1, 1.0);
        assert!(attraction_bound(&a, 5.0, 0.4, 1.0).is_err());
    }

    #[test]
    fn planar_classes() {
        let eps = 2.0;
        let j = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -4.0 / eps, -1.0 / eps]);
        let c = trace_det_classify(&j).unwrap();
        assert_eq!(c.class, StabilityClass::Repelling);
        assert_eq!(c.trace, 0.5);
        assert!((c.det - 1.5).abs() < 1e-15);
        let s = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        assert_eq!(trace_det_classify(&s).unwrap().class, StabilityClass::Stable);
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        assert_eq!(trace_det_classify(&d).unwrap().class, StabilityClass::Saddle);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(trace_det_classify(&r).unwrap().class, StabilityClass::CenterBorderline);
        assert!(trace_det_classify(&DMatrix::identity(3, 3)).is_none());
    }
}
