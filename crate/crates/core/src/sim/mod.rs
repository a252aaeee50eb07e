//! Integration of the full, fast-time and reduced systems, outcome
//! classification, near-return cycle detection and asymptotic-phase fits.

mod dopri;

pub use dopri::{Control, DenseStep, Dopri5, Stats, StepError};

use crate::expr::EvalError;
use crate::model::{BoxRegion, FastSlowSystem, RegionSet, SimConfig};
use crate::reduction::{expand_manifold, ReducedSystem};
use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

/// Distances below this are treated as integration noise by the phase fit.
pub const PHASE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("offset too small: initial distance {distance:e} is below the noise floor")]
    OffsetTooSmall { distance: f64 },
    #[error("fit window holds only {points} samples")]
    EmptyWindow { points: usize },
    #[error("degenerate linearization: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", content = "detail", rename_all = "snake_case")]
pub enum Termination {
    TMax,
    Escaped,
    StepFailure(String),
}

/// Samples of a solution at increasing stamps. `states` is row-major with
/// `n + m` values per stamp (`m = 0` for reduced trajectories).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    n: usize,
    m: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    end_velocity: Vec<f64>,
    termination: Termination,
    stats: Stats,
}

impl Trajectory {
    pub fn new(n: usize, m: usize, times: Vec<f64>, states: Vec<f64>, end_velocity: Vec<f64>, termination: Termination) -> Self {
        assert_eq!(states.len(), times.len() * (n + m), "state buffer does not match stamps");
        Trajectory { n, m, times, states, end_velocity, termination, stats: Stats::default() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.states[i * d..(i + 1) * d]
    }

    pub fn slow(&self, i: usize) -> &[f64] {
        &self.state(i)[..self.n]
    }

    pub fn fast(&self, i: usize) -> &[f64] {
        &self.state(i)[self.n..]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least the initial sample")
    }

    /// `dz/dt` at the last accepted step, in slow time.
    pub fn end_velocity(&self) -> &[f64] {
        &self.end_velocity
    }

    pub fn termination(&self) -> &Termination {
        &self.termination
    }

    pub fn stats(&self) -> Stats {
        self.stats
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.states.chunks_exact(self.dim().max(1)))
    }
}

fn stamps(t_max: f64, dt: f64) -> Vec<f64> {
    let count = (t_max / dt).floor() as usize;
    let mut out: Vec<f64> = (0..=count).map(|k| k as f64 * dt).collect();
    if t_max - out[count] > 1e-9 * dt {
        out.push(t_max);
    } else {
        out[count] = t_max;
    }
    out
}

fn check_finite(what: &str, v: &[f64]) -> Result<(), SimError> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(SimError::InvalidInput(format!("{what} has non-finite entries")))
    }
}

/// Runs `solver` on `rhs`, which must return `dz/ds` for `s = t / scale`,
/// and records the solution at the slow-time stamps.
fn run<F>(
    solver: &Dopri5,
    mut rhs: F,
    z0: &[f64],
    (n, m): (usize, usize),
    scale: f64,
    t_stamps: &[f64],
    inside: Option<&dyn Fn(&[f64]) -> bool>,
) -> Trajectory
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let dim = n + m;
    let mut times = Vec::with_capacity(t_stamps.len());
    let mut states = Vec::with_capacity(t_stamps.len() * dim);
    times.push(t_stamps[0]);
    states.extend_from_slice(z0);
    let mut end_velocity = vec![0.0; dim];
    let _ = rhs(0.0, z0, &mut end_velocity);
    end_velocity.iter_mut().for_each(|v| *v /= scale);

    if let Some(inside) = inside {
        if !inside(z0) {
            return Trajectory { n, m, times, states, end_velocity, termination: Termination::Escaped, stats: Stats::default() };
        }
    }

    let mut z = z0.to_vec();
    let mut next = 1;
    let mut buf = vec![0.0; dim];
    let mut escaped = false;
    let s_end = t_stamps[t_stamps.len() - 1] / scale;
    let result = solver.solve(&mut rhs, 0.0, &mut z, s_end, |step| {
        for (v, d) in end_velocity.iter_mut().zip(step.dy) {
            *v = d / scale;
        }
        while next < t_stamps.len() && t_stamps[next] / scale <= step.t {
            if t_stamps[next] / scale == step.t {
                buf.copy_from_slice(step.y);
            } else {
                step.interpolate(t_stamps[next] / scale, &mut buf);
            }
            if let Some(inside) = inside {
                if !inside(&buf) {
                    escaped = true;
                }
            }
            times.push(t_stamps[next]);
            states.extend_from_slice(&buf);
            next += 1;
            if escaped {
                return Control::Stop;
            }
        }
        if let Some(inside) = inside {
            if !inside(step.y) {
                times.push(step.t * scale);
                states.extend_from_slice(step.y);
                escaped = true;
                return Control::Stop;
            }
        }
        Control::Continue
    });
    let (termination, stats) = match result {
        Ok(stats) => (if escaped { Termination::Escaped } else { Termination::TMax }, stats),
        Err(e) => (Termination::StepFailure(e.to_string()), Stats::default()),
    };
    Trajectory { n, m, times, states, end_velocity, termination, stats }
}

fn solver_for(cfg: &SimConfig) -> Dopri5 {
    Dopri5::new(cfg.atol, cfg.rtol).with_max_steps(cfg.max_steps)
}

/// Integrates `x' = f(x, y)`, `eps y' = Ay + h(x)` from `ic = (x0, y0)` up to
/// `cfg.t_max`. Below `cfg.stiff_threshold` the fast time `tau = t / eps` is
/// used internally; stamps are always reported in slow time. When `within`
/// is given, the run stops as soon as a state leaves `D~`.
pub fn integrate_full(
    sys: &FastSlowSystem,
    eps: f64,
    ic: &[f64],
    cfg: &SimConfig,
    within: Option<&RegionSet>,
) -> Result<Trajectory, SimError> {
    let (n, m) = (sys.n(), sys.m());
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SimError::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    if ic.len() != n + m {
        return Err(SimError::InvalidInput(format!("initial condition has {} entries, expected {}", ic.len(), n + m)));
    }
    check_finite("initial condition", ic)?;
    cfg.validate().map_err(|e| SimError::InvalidInput(e.to_string()))?;

    let scale = if eps < cfg.stiff_threshold { eps } else { 1.0 };
    let fast_gain = if scale == eps { 1.0 } else { scale / eps };
    let rhs = |_s: f64, z: &[f64], dz: &mut [f64]| {
        let (x, y) = z.split_at(n);
        let (dx, dy) = dz.split_at_mut(n);
        sys.slow_field_into(x, y, dx)?;
        sys.fast_field_into(x, y, dy)?;
        if scale != 1.0 {
            dx.iter_mut().for_each(|v| *v *= scale);
        }
        if fast_gain != 1.0 {
            dy.iter_mut().for_each(|v| *v *= fast_gain);
        }
        Ok(())
    };
    let inside = within.map(|r| move |z: &[f64]| r.in_d_tilde(&z[..n], &z[n..]));
    let inside_ref = inside.as_ref().map(|f| f as &dyn Fn(&[f64]) -> bool);
    Ok(run(&solver_for(cfg), rhs, ic, (n, m), scale, &stamps(cfg.t_max, cfg.sample_dt), inside_ref))
}

/// Integrates `x' = F(x)` up to `cfg.t_max`, optionally stopping on exit
/// from the open box `within`.
pub fn integrate_reduced(
    rs: &ReducedSystem,
    x0: &[f64],
    cfg: &SimConfig,
    within: Option<&BoxRegion>,
) -> Result<Trajectory, SimError> {
    if x0.len() != rs.n() {
        return Err(SimError::InvalidInput(format!("initial condition has {} entries, expected {}", x0.len(), rs.n())));
    }
    check_finite("initial condition", x0)?;
    cfg.validate().map_err(|e| SimError::InvalidInput(e.to_string()))?;
    let rhs = |_t: f64, x: &[f64], dx: &mut [f64]| rs.field_into(x, dx);
    let inside = within.map(|b| move |z: &[f64]| b.contains_open(z));
    let inside_ref = inside.as_ref().map(|f| f as &dyn Fn(&[f64]) -> bool);
    Ok(run(&solver_for(cfg), rhs, x0, (rs.n(), 0), 1.0, &stamps(cfg.t_max, cfg.sample_dt), inside_ref))
}

/// Solution of `z' = rhs(t, z)`, `z(0) = z0`, at the increasing `stamps`
/// (the first of which must be `0`).
pub fn sample_flow<F>(solver: &Dopri5, rhs: F, z0: &[f64], stamps: &[f64]) -> Result<Vec<Vec<f64>>, StepError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
{
    let mut out = vec![z0.to_vec()];
    let mut z = z0.to_vec();
    let mut next = 1;
    let t_end = stamps[stamps.len() - 1];
    if stamps.len() == 1 {
        return Ok(out);
    }
    solver.solve(rhs, 0.0, &mut z, t_end, |step| {
        while next < stamps.len() && stamps[next] <= step.t {
            let mut buf = vec![0.0; z0.len()];
            if stamps[next] == step.t {
                buf.copy_from_slice(step.y);
            } else {
                step.interpolate(stamps[next], &mut buf);
            }
            out.push(buf);
            next += 1;
        }
        Control::Continue
    })?;
    while out.len() < stamps.len() {
        out.push(z.clone());
    }
    Ok(out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Converged { equilibrium: usize },
    LimitCycle { period: f64 },
    Escaped,
    Undecided,
}

/// Classifies a finished trajectory against known equilibria, given as full
/// state vectors of the same dimension.
pub fn classify(traj: &Trajectory, equilibria: &[Vec<f64>], cfg: &SimConfig) -> Outcome {
    match traj.termination() {
        Termination::Escaped => return Outcome::Escaped,
        Termination::StepFailure(_) => return Outcome::Undecided,
        Termination::TMax => {}
    }
    let last = traj.last_state();
    let nearest = equilibria
        .iter()
        .enumerate()
        .map(|(i, e)| (i, dist(e, last)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((i, d)) = nearest {
        if d < cfg.conv_tol && norm(traj.end_velocity()) < cfg.conv_tol {
            return Outcome::Converged { equilibrium: i };
        }
    }
    match detect_limit_cycle(traj, cfg) {
        Some(c) => Outcome::LimitCycle { period: c.period },
        None => Outcome::Undecided,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleEstimate {
    pub period: f64,
    /// Time of the matched earlier passage.
    pub t_return: f64,
    pub return_distance: f64,
    pub diameter: f64,
}

/// Distance from `p` to the segment `[a, b]` and the parameter of the foot.
fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..p.len() {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let s = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let d: f64 = (0..p.len()).map(|i| (p[i] - (a[i] + s * (b[i] - a[i]))).powi(2)).sum::<f64>().sqrt();
    (d, s)
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv)
}

fn diameter(traj: &Trajectory, from: usize, to: usize) -> f64 {
    let stride = ((to - from) / 800).max(1);
    let idx: Vec<usize> = (from..=to).step_by(stride).collect();
    let mut best: f64 = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        for &j in &idx[k + 1..] {
            best = best.max(dist(traj.state(i), traj.state(j)));
        }
    }
    best
}

/// Looks backwards from the last sample for the most recent earlier passage
/// through the same point in the same direction.
pub fn detect_limit_cycle(traj: &Trajectory, cfg: &SimConfig) -> Option<CycleEstimate> {
    let len = traj.len();
    if len < 8 {
        return None;
    }
    let times = traj.times();
    let t_cut = times[0] + cfg.transient_fraction * (times[len - 1] - times[0]);
    let start = times.partition_point(|&t| t < t_cut);
    let last = len - 1;
    if last < start + 6 {
        return None;
    }
    let z_last = traj.state(last);
    let dim = traj.dim();
    let mut v_last: Vec<f64> = traj.end_velocity().to_vec();
    if norm(&v_last) == 0.0 || v_last.len() != dim {
        v_last = (0..dim).map(|i| z_last[i] - traj.state(last - 1)[i]).collect();
    }

    let mut departed = false;
    let mut best: Option<(usize, f64, f64)> = None;
    for j in (start..last - 1).rev() {
        let (a, b) = (traj.state(j), traj.state(j + 1));
        if !departed {
            departed = dist(a, z_last) > 2.0 * cfg.cycle_tol;
            continue;
        }
        let (d, s) = segment_distance(z_last, a, b);
        if d < cfg.cycle_tol {
            if best.is_none_or(|(_, bd, _)| d < bd) {
                best = Some((j, d, s));
            }
        } else if let Some((bj, _, _)) = best {
            let seg: Vec<f64> = (0..dim).map(|i| traj.state(bj + 1)[i] - traj.state(bj)[i]).collect();
            if cosine(&seg, &v_last) > 0.99 {
                break;
            }
            best = None;
        }
    }
    let (j, d, s) = best?;
    let seg: Vec<f64> = (0..dim).map(|i| traj.state(j + 1)[i] - traj.state(j)[i]).collect();
    if cosine(&seg, &v_last) <= 0.99 {
        return None;
    }
    let diam = diameter(traj, j, last);
    if diam <= 10.0 * cfg.conv_tol || d >= 1e-2 * diam {
        return None;
    }
    let t_return = times[j] + s * (times[j + 1] - times[j]);
    Some(CycleEstimate { period: times[last] - t_return, t_return, return_distance: d, diameter: diam })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseEstimate {
    /// Fitted exponential rate `alpha` of `|phi_t(p') - phi_t(q)|`.
    pub rate: f64,
    pub initial_distance: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub r_squared: f64,
    /// `p` and its fiber partner `p'` on the slow manifold.
    pub base: Vec<f64>,
    pub partner: Vec<f64>,
    pub perturbed: Vec<f64>,
}

/// Real spectral projector onto the `keep` eigenvalues of largest real part.
fn leading_projector(j: &DMatrix<f64>, keep: usize) -> Result<DMatrix<f64>, SimError> {
    let d = j.nrows();
    let mut ev: Vec<Complex<f64>> = j.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let jc: DMatrix<Complex<f64>> = j.map(|v| Complex::new(v, 0.0));
    let mut vecs = DMatrix::<Complex<f64>>::zeros(d, d);
    for (col, lam) in ev.iter().enumerate() {
        let shifted = &jc - DMatrix::<Complex<f64>>::identity(d, d) * *lam;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| SimError::Degenerate("SVD failed".into()))?;
        let k = svd.singular_values.argmin().0;
        for r in 0..d {
            vecs[(r, col)] = v_t[(k, r)].conj();
        }
    }
    let inv = vecs.clone().try_inverse().ok_or_else(|| SimError::Degenerate("eigenvectors are not independent".into()))?;
    let mask = DMatrix::<Complex<f64>>::from_diagonal(&DVector::from_fn(d, |i, _| {
        if i < keep { Complex::new(1.0, 0.0) } else { Complex::new(0.0, 0.0) }
    }));
    Ok((vecs * mask * inv).map(|c| c.re))
}

/// Estimates the transverse contraction rate near the slow manifold.
///
/// `p = (x0, m_eps(x0))` uses the first-order expansion and
/// `q = p + (0, offset)`. The comparison orbit starts at `p'`, the point of
/// the local slow eigenspace through `p` that shares `q`'s linearized fiber,
/// so that `q - p'` has no component along the slow directions.
pub fn asymptotic_phase_estimate(
    sys: &FastSlowSystem,
    eps: f64,
    x0: &[f64],
    offset: &[f64],
    cfg: &SimConfig,
) -> Result<PhaseEstimate, SimError> {
    let (n, m) = (sys.n(), sys.m());
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SimError::InvalidInput(format!("epsilon must be positive, got {eps}")));
    }
    if x0.len() != n || offset.len() != m {
        return Err(SimError::InvalidInput(format!("expected {n} slow and {m} offset entries")));
    }
    check_finite("base point", x0)?;
    check_finite("offset", offset)?;
    if norm(offset) < 10.0 * PHASE_FLOOR {
        return Err(SimError::OffsetTooSmall { distance: norm(offset) });
    }
    let approx = expand_manifold(sys, 1).map_err(|e| SimError::InvalidInput(e.to_string()))?;
    let y0 = approx.eval(x0, eps)?;
    let p: Vec<f64> = x0.iter().chain(&y0).copied().collect();
    let q: Vec<f64> = p.iter().enumerate().map(|(i, v)| if i < n { *v } else { v + offset[i - n] }).collect();

    let jac = sys.full_jacobian(x0, &y0, eps)?;
    let proj = leading_projector(&jac, n)?;
    let diff = DVector::from_iterator(n + m, q.iter().zip(&p).map(|(a, b)| a - b));
    let shift = &proj * diff;
    let partner: Vec<f64> = p.iter().zip(shift.iter()).map(|(a, s)| a + s).collect();
    let initial = dist(&q, &partner);
    if initial < 10.0 * PHASE_FLOOR {
        return Err(SimError::OffsetTooSmall { distance: initial });
    }

    let mut ev: Vec<f64> = jac.complex_eigenvalues().iter().map(|c| c.re).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let fast_rate = ev[n..].iter().map(|r| r.abs()).fold(f64::INFINITY, f64::min);
    if !(fast_rate > 0.0 && fast_rate.is_finite()) {
        return Err(SimError::Degenerate("no contracting fast direction".into()));
    }
    let t_end = (1.5 * (initial / PHASE_FLOOR).ln() / fast_rate).min(cfg.t_max);
    let dt = (0.02 / fast_rate).min(cfg.sample_dt);
    let stamps = stamps(t_end, dt);
    let solver = Dopri5::new(cfg.atol.min(1e-14), cfg.rtol.min(1e-12)).with_max_steps(cfg.max_steps);
    let rhs = |_t: f64, z: &[f64], dz: &mut [f64]| {
        let (x, y) = z.split_at(n);
        let (dx, dy) = dz.split_at_mut(n);
        sys.slow_field_into(x, y, dx)?;
        sys.fast_field_into(x, y, dy)?;
        dy.iter_mut().for_each(|v| *v /= eps);
        Ok(())
    };
    let a = sample_flow(&solver, rhs, &q, &stamps)?;
    let b = sample_flow(&solver, rhs, &partner, &stamps)?;

    let (lo, hi) = (10.0 * PHASE_FLOOR, initial / 10.0);
    let pts: Vec<(f64, f64)> = stamps
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(t, (za, zb))| (*t, dist(za, zb)))
        .filter(|(_, d)| *d >= lo && *d <= hi)
        .map(|(t, d)| (t, d.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(SimError::EmptyWindow { points: pts.len() });
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let stl: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ml)).sum();
    let sll: f64 = pts.iter().map(|p| (p.1 - ml).powi(2)).sum();
    let slope = stl / stt;
    let r_squared = if sll > 0.0 { stl * stl / (stt * sll) } else { 1.0 };
    Ok(PhaseEstimate {
        rate: -slope,
        initial_distance: initial,
        window: (lo, hi),
        points: pts.len(),
        r_squared,
        base: p,
        partner,
        perturbed: q,
    })
}
