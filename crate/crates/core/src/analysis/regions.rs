use crate::expr::{eval_all, EvalError, Expr, VarClass};
use crate::model::{BoxRegion, FastSlowSystem, ModelError, RegionSet};
use crate::monotone::halton_points;
use serde::Serialize;
use thiserror::Error;

/// Sampled bounds are inflated by this factor.
pub const SUP_SAFETY: f64 = 1.1;
/// `b_j = B_FACTOR * M_j / d_j`.
pub const B_FACTOR: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("A must be diagonal with negative entries (entry ({row}, {col}) = {value})")]
    NotDiagonal { row: usize, col: usize, value: f64 },
    #[error("f{index} is not of the form gamma(y) - beta(x): term `{term}` mixes slow and fast variables")]
    MixedTerm { index: usize, term: String },
    #[error("supplied {0} bounds, expected one per fast variable")]
    BoundCount(usize),
    #[error("bound M{index} must be positive and finite, got {value}")]
    BadBound { index: usize, value: f64 },
    #[error("beta{index} does not exceed N{index} = {n_bound} on the {side} side within |x{index}| <= {limit:e}")]
    BetaUnbounded { index: usize, side: &'static str, n_bound: f64, limit: f64 },
    #[error("a-bounds did not settle after {0} rounds")]
    NoFixedPoint(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The system written as `x_i' = gamma_i(y) - beta_i(x)`,
/// `eps y_j' = -d_j y_j - alpha_j(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleForm {
    pub gamma: Vec<Expr>,
    pub beta: Vec<Expr>,
    pub alpha: Vec<Expr>,
    pub d: Vec<f64>,
}

fn terms(e: &Expr) -> Vec<Expr> {
    match e {
        Expr::Sum(ts) => ts.clone(),
        other => vec![other.clone()],
    }
}

pub fn example_form(sys: &FastSlowSystem) -> Result<ExampleForm, SynthesisError> {
    let a = sys.a();
    let m = sys.m();
    for r in 0..m {
        for c in 0..m {
            let v = a[(r, c)];
            if (r == c && v >= 0.0) || (r != c && v != 0.0) {
                return Err(SynthesisError::NotDiagonal { row: r, col: c, value: v });
            }
        }
    }
    let mut gamma = Vec::new();
    let mut beta = Vec::new();
    for (i, fi) in sys.f().iter().enumerate() {
        let (mut g, mut b) = (Vec::new(), Vec::new());
        for t in terms(fi) {
            let slow = t.depends_on_class(VarClass::Slow);
            let fast = t.depends_on_class(VarClass::Fast);
            match (slow, fast) {
                (true, true) => return Err(SynthesisError::MixedTerm { index: i + 1, term: t.to_string() }),
                (false, true) => g.push(t),
                _ => b.push(Expr::neg(t)),
            }
        }
        gamma.push(Expr::sum(g));
        beta.push(Expr::sum(b));
    }
    let alpha = sys.h().iter().map(|h| Expr::neg(h.clone())).collect();
    let d = (0..m).map(|j| -a[(j, j)]).collect();
    Ok(ExampleForm { gamma, beta, alpha, d })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Synthesis {
    pub regions: RegionSet,
    /// `M_j` with `|alpha_j| <= M_j`.
    pub m_bounds: Vec<f64>,
    /// Whether `M` was supplied rather than sampled.
    pub m_supplied: bool,
    pub b: Vec<f64>,
    pub n_bounds: Vec<f64>,
    /// Unrounded thresholds, then the rounded `a_{i,1}` and `a_{i,2}`.
    pub a_raw: Vec<(f64, f64)>,
    pub a_upper: Vec<f64>,
    pub a_lower: Vec<f64>,
    pub rounds: usize,
}

/// Half-width of the box over which `sup |alpha_j|` is sampled.
const ALPHA_SPAN: f64 = 100.0;
const ALPHA_SAMPLES: usize = 4096;
const GAMMA_GRID: usize = 33;
const FACE_SAMPLES: usize = 64;
const SCAN_POINTS: usize = 2000;
const MAX_ROUNDS: usize = 50;

fn sampled_alpha_sup(form: &ExampleForm, n: usize) -> Result<Vec<f64>, SynthesisError> {
    let region = BoxRegion::cube(n, -ALPHA_SPAN, ALPHA_SPAN)?;
    let mut pts = halton_points(&region, ALPHA_SAMPLES);
    pts.push(vec![0.0; n]);
    for k in 0..n {
        for s in [-1.0, 1.0] {
            let mut p = vec![0.0; n];
            p[k] = s * ALPHA_SPAN;
            pts.push(p);
        }
    }
    let mut sup = vec![0.0f64; form.alpha.len()];
    for p in &pts {
        for (j, v) in eval_all(&form.alpha, p, &[])?.into_iter().enumerate() {
            sup[j] = sup[j].max(v.abs());
        }
    }
    Ok(sup.into_iter().map(|s| SUP_SAFETY * s).collect())
}

fn grid_points(region: &BoxRegion) -> Vec<Vec<f64>> {
    let d = region.dim();
    if d > 3 {
        let mut pts = halton_points(region, 4096);
        for mask in 0..(1usize << d.min(12)) {
            pts.push((0..d).map(|k| if mask >> k & 1 == 1 { region.hi()[k] } else { region.lo()[k] }).collect());
        }
        return pts;
    }
    let total = GAMMA_GRID.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|k| {
                    let i = idx % GAMMA_GRID;
                    idx /= GAMMA_GRID;
                    region.lo()[k] + (region.hi()[k] - region.lo()[k]) * i as f64 / (GAMMA_GRID - 1) as f64
                })
                .collect()
        })
        .collect()
}

fn gamma_sup(form: &ExampleForm, b: &[f64]) -> Result<Vec<f64>, SynthesisError> {
    let n = form.gamma.len();
    if b.is_empty() {
        return Ok(form.gamma.iter().map(|g| g.eval(&[], &[]).map(f64::abs)).collect::<Result<_, _>>()?);
    }
    let region = BoxRegion::new(b.iter().map(|v| -v).collect(), b.to_vec())?;
    let mut sup = vec![0.0f64; n];
    for p in grid_points(&region) {
        for (i, g) in form.gamma.iter().enumerate() {
            sup[i] = sup[i].max(g.eval(&[], &p)?.abs());
        }
    }
    Ok(sup)
}

/// `min` (upper side) or `max` (lower side) of `beta_i` over the face
/// `x_i = u` with the other coordinates in `others`.
fn face_extreme(beta: &Expr, i: usize, u: f64, others: &Option<BoxRegion>, upper: bool) -> Result<f64, EvalError> {
    let n_other = others.as_ref().map_or(0, |o| o.dim());
    let mut pts = match others {
        Some(o) => {
            let mut v = halton_points(o, FACE_SAMPLES);
            for mask in 0..(1usize << n_other.min(10)) {
                v.push((0..n_other).map(|k| if mask >> k & 1 == 1 { o.hi()[k] } else { o.lo()[k] }).collect());
            }
            v.push(o.center());
            v
        }
        None => vec![vec![]],
    };
    let mut best = if upper { f64::INFINITY } else { f64::NEG_INFINITY };
    for p in pts.iter_mut() {
        let mut x = p.clone();
        x.insert(i, u);
        let v = beta.eval_slow(&x)?;
        best = if upper { best.min(v) } else { best.max(v) };
    }
    Ok(best)
}

/// Smallest threshold `a >= 0` past which `beta_i` stays beyond `N_i` on the
/// given side, found by an outward scan to bracket the last crossing and
/// bisection inside the bracket.
fn threshold(beta: &Expr, i: usize, n_bound: f64, others: &Option<BoxRegion>, upper: bool) -> Result<f64, SynthesisError> {
    let sign = if upper { 1.0 } else { -1.0 };
    let good = |u: f64| -> Result<bool, EvalError> {
        let v = face_extreme(beta, i, sign * u, others, upper)?;
        Ok(if upper { v > n_bound } else { v < -n_bound })
    };
    let mut limit = 1.0;
    while !good(limit)? {
        limit *= 2.0;
        if limit > 1e12 {
            return Err(SynthesisError::BetaUnbounded {
                index: i + 1,
                side: if upper { "upper" } else { "lower" },
                n_bound,
                limit,
            });
        }
    }
    let span = 2.0 * limit;
    let mut last_bad: Option<usize> = None;
    for k in 0..=SCAN_POINTS {
        if !good(span * k as f64 / SCAN_POINTS as f64)? {
            last_bad = Some(k);
        }
    }
    let Some(k) = last_bad else { return Ok(0.0) };
    let (mut lo, mut hi) = (span * k as f64 / SCAN_POINTS as f64, span * (k + 1) as f64 / SCAN_POINTS as f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if good(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn round_up(raw: f64, beta: &Expr, i: usize, n_bound: f64, others: &Option<BoxRegion>, upper: bool) -> Result<f64, EvalError> {
    let mut a = raw.ceil().max(1.0);
    loop {
        let u = if upper { a } else { -a };
        let v = face_extreme(beta, i, u, others, upper)?;
        if (upper && v > n_bound) || (!upper && v < -n_bound) {
            return Ok(a);
        }
        a += 1.0;
    }
}

/// Builds `L = prod (-b_j, b_j)`, `K = prod [-a_{i,2}, a_{i,1}]` and
/// `K~ = K` inflated by 1. The `a` bounds are rounded up to integers and,
/// for `n > 1`, iterated until they hold with the other coordinates
/// ranging over the resulting `K~`.
pub fn synthesize_regions(sys: &FastSlowSystem, m_bounds: Option<&[f64]>) -> Result<Synthesis, SynthesisError> {
    let form = example_form(sys)?;
    let (n, m) = (sys.n(), sys.m());
    let m_supplied = m_bounds.is_some();
    let m_bounds = match m_bounds {
        Some(v) if v.len() != m => return Err(SynthesisError::BoundCount(v.len())),
        Some(v) => v.to_vec(),
        None => sampled_alpha_sup(&form, n)?,
    };
    for (j, &v) in m_bounds.iter().enumerate() {
        if !(v > 0.0 && v.is_finite()) {
            return Err(SynthesisError::BadBound { index: j + 1, value: v });
        }
    }
    let b: Vec<f64> = m_bounds.iter().zip(&form.d).map(|(mj, dj)| B_FACTOR * mj / dj).collect();
    let n_bounds = gamma_sup(&form, &b)?;

    let mut upper = vec![1.0; n];
    let mut lower = vec![1.0; n];
    let mut raw = vec![(0.0, 0.0); n];
    let mut rounds = 0;
    loop {
        rounds += 1;
        let k_tilde = BoxRegion::new(lower.iter().map(|a| -a - 1.0).collect(), upper.iter().map(|a| a + 1.0).collect())?;
        let mut new_upper = Vec::with_capacity(n);
        let mut new_lower = Vec::with_capacity(n);
        for i in 0..n {
            let others = (n > 1).then(|| {
                let lo: Vec<f64> = (0..n).filter(|&k| k != i).map(|k| k_tilde.lo()[k]).collect();
                let hi: Vec<f64> = (0..n).filter(|&k| k != i).map(|k| k_tilde.hi()[k]).collect();
                BoxRegion::new(lo, hi).expect("K~ faces are nonempty")
            });
            let ru = threshold(&form.beta[i], i, n_bounds[i], &others, true)?;
            let rl = threshold(&form.beta[i], i, n_bounds[i], &others, false)?;
            raw[i] = (ru, rl);
            new_upper.push(round_up(ru, &form.beta[i], i, n_bounds[i], &others, true)?);
            new_lower.push(round_up(rl, &form.beta[i], i, n_bounds[i], &others, false)?);
        }
        let settled = new_upper == upper && new_lower == lower;
        upper = new_upper;
        lower = new_lower;
        if settled || n == 1 {
            break;
        }
        if rounds >= MAX_ROUNDS {
            return Err(SynthesisError::NoFixedPoint(rounds));
        }
    }
    let k = BoxRegion::new(lower.iter().map(|a| -a).collect(), upper.clone())?;
    let k_tilde = k.inflate(1.0)?;
    let l = BoxRegion::new(b.iter().map(|v| -v).collect(), b.clone())?;
    let regions = RegionSet::new(k, k_tilde, l)?;
    Ok(Synthesis { regions, m_bounds, m_supplied, b, n_bounds, a_raw: raw, a_upper: upper, a_lower: lower, rounds })
}
