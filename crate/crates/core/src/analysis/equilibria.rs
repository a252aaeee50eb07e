use crate::expr::EvalError;
use crate::model::{eigenvalues, BoxRegion, Eigenvalue};
use crate::monotone::halton_points;
use crate::reduction::ReducedSystem;
use nalgebra::DVector;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumOptions {
    /// Dedup radius as a fraction of the box diameter.
    pub dedup_factor: f64,
    pub residual_tol: f64,
    /// Starting points for multistart mode (used when `n > 4`).
    pub multistart: usize,
    /// Stop subdividing once this many cells survive a level.
    pub max_cells: usize,
    pub max_newton: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions { dedup_factor: 1e-6, residual_tol: 1e-10, multistart: 512, max_cells: 20_000, max_newton: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    pub residual: f64,
    /// Eigenvalues of `J_F(x)`.
    pub eigenvalues: Vec<Eigenvalue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSet {
    pub points: Vec<Equilibrium>,
    pub dedup_radius: f64,
    pub mode: &'static str,
    pub starts: usize,
    pub failed_starts: usize,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn max_depth(n: usize) -> usize {
    match n {
        1 => 14,
        2 => 9,
        3 => 6,
        _ => 5,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Clone)]
struct Cell {
    center: Vec<f64>,
    half: Vec<f64>,
}

impl Cell {
    fn corners(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.center.len();
        (0..1usize << n).map(move |mask| {
            (0..n).map(|k| if mask >> k & 1 == 1 { self.center[k] + self.half[k] } else { self.center[k] - self.half[k] }).collect()
        })
    }

    fn children(&self) -> impl Iterator<Item = Cell> + '_ {
        let n = self.center.len();
        let half: Vec<f64> = self.half.iter().map(|h| h / 2.0).collect();
        (0..1usize << n).map(move |mask| Cell {
            center: (0..n).map(|k| if mask >> k & 1 == 1 { self.center[k] + half[k] } else { self.center[k] - half[k] }).collect(),
            half: half.clone(),
        })
    }
}

/// True unless some component of `F` provably keeps one strict sign on the
/// cell, judged from the corners, the center and a first-order bound.
fn may_contain_root(rs: &ReducedSystem, cell: &Cell) -> bool {
    let n = rs.n();
    let (Ok(fc), Ok(jc)) = (rs.eval_field(&cell.center), rs.jacobian(&cell.center)) else {
        return true;
    };
    let corners: Vec<Option<Vec<f64>>> = cell.corners().map(|c| rs.eval_field(&c).ok()).collect();
    for i in 0..n {
        let spread: f64 = (0..n).map(|k| jc[(i, k)].abs() * cell.half[k]).sum();
        if fc[i].abs() <= 1.5 * spread {
            continue;
        }
        let s = fc[i].signum();
        if corners.iter().all(|c| c.as_ref().is_some_and(|v| v[i].signum() == s && v[i] != 0.0)) {
            return false;
        }
    }
    true
}

/// Damped Newton: the step is halved up to 20 times until the residual
/// decreases.
fn newton(rs: &ReducedSystem, start: &[f64], opts: &EquilibriumOptions) -> Option<(Vec<f64>, f64)> {
    let mut x = start.to_vec();
    let mut f = rs.eval_field(&x).ok()?;
    let mut r = norm(&f);
    for _ in 0..opts.max_newton {
        if r < 1e-14 {
            break;
        }
        let j = rs.jacobian(&x).ok()?;
        let step = j.lu().solve(&DVector::from_vec(f.clone()))?;
        let mut lambda = 1.0;
        let mut improved = None;
        for _ in 0..=20 {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a - lambda * d).collect();
            if let Ok(fc) = rs.eval_field(&cand) {
                let rc = norm(&fc);
                if rc < r {
                    improved = Some((cand, fc, rc));
                    break;
                }
            }
            lambda /= 2.0;
        }
        match improved {
            Some((cand, fc, rc)) => {
                let moved = norm(&x.iter().zip(&cand).map(|(a, b)| a - b).collect::<Vec<_>>());
                x = cand;
                f = fc;
                r = rc;
                if moved <= 1e-15 * (1.0 + norm(&x)) {
                    break;
                }
            }
            None => break,
        }
    }
    (r < opts.residual_tol).then_some((x, r))
}

fn sort_key(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Zeros of `F` in the interior of `k_tilde`.
pub fn find_equilibria(rs: &ReducedSystem, k_tilde: &BoxRegion, opts: &EquilibriumOptions) -> Result<EquilibriumSet, EvalError> {
    let n = rs.n();
    let dedup_radius = opts.dedup_factor * k_tilde.diameter();
    let (starts, mode): (Vec<Vec<f64>>, &'static str) = if n <= 4 {
        let mut cells = vec![Cell { center: k_tilde.center(), half: k_tilde.widths().iter().map(|w| w / 2.0).collect() }];
        for _ in 0..max_depth(n) {
            let next: Vec<Cell> = cells.iter().flat_map(|c| c.children().collect::<Vec<_>>()).filter(|c| may_contain_root(rs, c)).collect();
            if next.len() > opts.max_cells {
                break;
            }
            cells = next;
        }
        (cells.into_iter().map(|c| c.center).collect(), "subdivision")
    } else {
        (halton_points(k_tilde, opts.multistart), "multistart")
    };

    let mut found: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut failed = 0;
    for s in &starts {
        match newton(rs, s, opts) {
            Some((x, r)) if k_tilde.contains_open(&x) => {
                let dup = found.iter_mut().find(|(y, _)| norm(&x.iter().zip(y.iter()).map(|(a, b)| a - b).collect::<Vec<_>>()) <= dedup_radius);
                match dup {
                    Some(existing) if r < existing.1 => *existing = (x, r),
                    Some(_) => {}
                    None => found.push((x, r)),
                }
            }
            Some(_) => {}
            None => failed += 1,
        }
    }
    found.sort_by(|a, b| sort_key(&a.0, &b.0));
    let points = found
        .into_iter()
        .map(|(x, residual)| {
            let eigenvalues = eigenvalues(&rs.jacobian(&x)?);
            Ok(Equilibrium { x, residual, eigenvalues })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EquilibriumSet { points, dedup_radius, mode, starts: starts.len(), failed_starts: failed })
}
