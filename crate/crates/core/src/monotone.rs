//! Jacobian sign structure, orthant-cone consistency and direct checks of
//! eventually positive flow derivatives.

use crate::expr::{EvalError, ExprMatrix};
use crate::model::BoxRegion;
use crate::reduction::ReducedSystem;
use crate::sim::{Control, Dopri5, StepError};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Samples with `|value| <= ZERO_TOL` count as zero.
pub const ZERO_TOL: f64 = 1e-12;
const MAX_WITNESSES: usize = 8;

const PRIMES: [u32; 24] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

/// The `i`-th Halton point in `[0, 1)^dim`, starting at index 1 so the
/// origin corner is never used.
pub fn halton(i: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "Halton sequence limited to {} dimensions", PRIMES.len());
    (0..dim).map(|k| radical_inverse(i as u64 + 1, PRIMES[k])).collect()
}

/// Deterministic low-discrepancy points inside `region`.
pub fn halton_points(region: &BoxRegion, count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|i| region.from_unit(&halton(i, region.dim()))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Pos,
    #[serde(rename = "-")]
    Neg,
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "mixed")]
    Mixed,
}

impl Sign {
    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Pos => "+",
            Sign::Neg => "-",
            Sign::Zero => "0",
            Sign::Mixed => "mixed",
        }
    }

    fn definite(self) -> Option<bool> {
        match self {
            Sign::Pos => Some(true),
            Sign::Neg => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SignCounts {
    pub pos: usize,
    pub neg: usize,
    pub zero: usize,
}

impl SignCounts {
    pub fn sign(&self) -> Sign {
        match (self.pos > 0, self.neg > 0) {
            (true, true) => Sign::Mixed,
            (true, false) => Sign::Pos,
            (false, true) => Sign::Neg,
            (false, false) => Sign::Zero,
        }
    }

    fn record(&mut self, v: f64) {
        if v > ZERO_TOL {
            self.pos += 1;
        } else if v < -ZERO_TOL {
            self.neg += 1;
        } else {
            self.zero += 1;
        }
    }
}

/// Sampled sign of every Jacobian entry, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignPattern {
    n: usize,
    counts: Vec<SignCounts>,
}

impl SignPattern {
    /// Pattern with the given entry signs, as if observed once each.
    pub fn from_signs(n: usize, signs: &[Sign]) -> Self {
        assert_eq!(signs.len(), n * n, "sign pattern must be square");
        let counts = signs
            .iter()
            .map(|s| match s {
                Sign::Pos => SignCounts { pos: 1, ..Default::default() },
                Sign::Neg => SignCounts { neg: 1, ..Default::default() },
                Sign::Zero => SignCounts { zero: 1, ..Default::default() },
                Sign::Mixed => SignCounts { pos: 1, neg: 1, zero: 0 },
            })
            .collect();
        SignPattern { n, counts }
    }

    /// Pattern of a constant numeric matrix.
    pub fn of_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut counts = vec![SignCounts::default(); n * n];
        for i in 0..n {
            for j in 0..n {
                counts[i * n + j].record(m[(i, j)]);
            }
        }
        SignPattern { n, counts }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> Sign {
        self.counts[i * self.n + j].sign()
    }

    pub fn counts(&self, i: usize, j: usize) -> SignCounts {
        self.counts[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<Sign>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

impl Serialize for SignPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl fmt::Display for SignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            let row: Vec<&str> = (0..self.n).map(|j| self.get(i, j).symbol()).collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

/// Sign classification of a square Jacobian sampled over `region`. The
/// first `n_slow` coordinates of each region point feed slow variables, the
/// rest fast ones.
pub fn sign_pattern(j: &ExprMatrix, region: &BoxRegion, n_slow: usize, samples: usize) -> Result<SignPattern, EvalError> {
    assert_eq!(j.rows(), j.cols(), "sign pattern needs a square Jacobian");
    let n = j.rows();
    let mut counts = vec![SignCounts::default(); n * n];
    for p in halton_points(region, samples.max(1)) {
        let (x, y) = p.split_at(n_slow.min(p.len()));
        let m = j.eval(x, y)?;
        for r in 0..n {
            for c in 0..n {
                counts[r * n + c].record(m[(r, c)]);
            }
        }
    }
    Ok(SignPattern { n, counts })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonotoneError {
    #[error("entry ({row}, {col}) changes sign over the region")]
    MixedEntry { row: usize, col: usize },
}

/// Union-find where each node stores its parity relative to its parent.
struct ParityDsu {
    parent: Vec<usize>,
    parity: Vec<u8>,
    rank: Vec<u8>,
}

impl ParityDsu {
    fn new(n: usize) -> Self {
        ParityDsu { parent: (0..n).collect(), parity: vec![0; n], rank: vec![0; n] }
    }

    fn find(&mut self, i: usize) -> (usize, u8) {
        let p = self.parent[i];
        if p == i {
            return (i, 0);
        }
        let (root, par) = self.find(p);
        self.parent[i] = root;
        self.parity[i] ^= par;
        (root, self.parity[i])
    }

    /// Records `sigma_a * sigma_b = (-1)^rel`; false on contradiction.
    fn union(&mut self, a: usize, b: usize, rel: u8) -> bool {
        let (ra, pa) = self.find(a);
        let (rb, pb) = self.find(b);
        if ra == rb {
            return pa ^ pb == rel;
        }
        let (hi, lo) = if self.rank[ra] >= self.rank[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[lo] = hi;
        self.parity[lo] = pa ^ pb ^ rel;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        true
    }
}

/// Finds `sigma` in `{+1, -1}^N` with `sigma_i sigma_j sign(J_ij) >= 0` for
/// every definite off-diagonal entry, or `None` when no orthant works.
pub fn orthant_consistency(p: &SignPattern) -> Result<Option<Vec<i8>>, MonotoneError> {
    let n = p.n();
    for i in 0..n {
        for j in 0..n {
            if i != j && p.get(i, j) == Sign::Mixed {
                return Err(MonotoneError::MixedEntry { row: i, col: j });
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if let (Some(a), Some(b)) = (p.get(i, j).definite(), p.get(j, i).definite()) {
                if a != b {
                    return Ok(None);
                }
            }
        }
    }
    let mut dsu = ParityDsu::new(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if let Some(pos) = p.get(i, j).definite() {
                if !dsu.union(i, j, u8::from(!pos)) {
                    return Ok(None);
                }
            }
        }
    }
    Ok(Some((0..n).map(|i| if dsu.find(i).1 == 0 { 1 } else { -1 }).collect()))
}

/// Whether `sigma` turns every definite off-diagonal entry nonnegative.
pub fn orthant_ok(p: &SignPattern, sigma: &[i8]) -> bool {
    let n = p.n();
    (0..n).all(|i| {
        (0..n).all(|j| {
            i == j
                || match p.get(i, j).definite() {
                    Some(pos) => (sigma[i] * sigma[j] > 0) == pos,
                    None => true,
                }
        })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignWitness {
    pub row: usize,
    pub col: usize,
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CooperativityReport {
    pub passed: bool,
    pub samples: usize,
    pub strictly_positive: bool,
    pub strongly_connected: bool,
    pub pattern: SignPattern,
    pub witnesses: Vec<SignWitness>,
}

fn strongly_connected(n: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let e = if forward { edge(u, v) } else { edge(v, u) };
                if u != v && e && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n <= 1 || (reach(true) && reach(false))
}

/// Strict positivity of the sampled off-diagonal entries of `J_F` and strong
/// connectivity of the graph they span.
pub fn cooperativity_check(rs: &ReducedSystem, region: &BoxRegion, samples: usize) -> Result<CooperativityReport, EvalError> {
    let n = rs.n();
    let mut counts = vec![SignCounts::default(); n * n];
    let mut witnesses = Vec::new();
    let samples = samples.max(1);
    for p in halton_points(region, samples) {
        let m = rs.jacobian(&p)?;
        for r in 0..n {
            for c in 0..n {
                let v = m[(r, c)];
                counts[r * n + c].record(v);
                if r != c && v <= ZERO_TOL && witnesses.len() < MAX_WITNESSES {
                    witnesses.push(SignWitness { row: r, col: c, point: p.clone(), value: v });
                }
            }
        }
    }
    let pattern = SignPattern { n, counts };
    let strictly_positive = (0..n).all(|i| {
        (0..n).all(|j| {
            let c = pattern.counts(i, j);
            i == j || (c.neg == 0 && c.zero == 0)
        })
    });
    let strongly_connected = strongly_connected(n, |i, j| pattern.counts(j, i).pos > 0);
    Ok(CooperativityReport {
        passed: strictly_positive && strongly_connected,
        samples,
        strictly_positive,
        strongly_connected,
        pattern,
        witnesses,
    })
}

/// `phi_t(z0)` and `Phi(t) = d phi_t / d z` from the variational equation.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDerivative {
    pub t: f64,
    pub z0: Vec<f64>,
    pub z: Vec<f64>,
    pub phi: DMatrix<f64>,
}

fn variational_rhs(rs: &ReducedSystem) -> impl Fn(f64, &[f64], &mut [f64]) -> Result<(), EvalError> + '_ {
    let n = rs.n();
    move |_t, w, dw| {
        let (z, phi) = w.split_at(n);
        rs.field_into(z, &mut dw[..n])?;
        let j = rs.jacobian(z)?;
        // Phi is stored row-major.
        for r in 0..n {
            for c in 0..n {
                dw[n + r * n + c] = (0..n).map(|k| j[(r, k)] * phi[k * n + c]).sum();
            }
        }
        Ok(())
    }
}

fn variational_start(z0: &[f64]) -> Vec<f64> {
    let n = z0.len();
    let mut w = z0.to_vec();
    w.extend((0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }));
    w
}

fn unpack(n: usize, t: f64, z0: &[f64], w: &[f64]) -> FlowDerivative {
    FlowDerivative { t, z0: z0.to_vec(), z: w[..n].to_vec(), phi: DMatrix::from_row_slice(n, n, &w[n..]) }
}

/// Co-integrates `z' = F(z)` and `Phi' = J_F(z) Phi` with `Phi(0) = I`.
pub fn flow_derivative(rs: &ReducedSystem, z0: &[f64], t: f64, solver: &Dopri5) -> Result<FlowDerivative, StepError> {
    let mut w = variational_start(z0);
    solver.solve(variational_rhs(rs), 0.0, &mut w, t, |_| Control::Continue)?;
    Ok(unpack(rs.n(), t, z0, &w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpdOptions {
    pub t0: f64,
    pub t1: f64,
    pub ic_samples: usize,
    pub tol: f64,
    /// Evenly spaced checks on `[t0, t1]`, in addition to every accepted step.
    pub checkpoints: usize,
    pub atol: f64,
    pub rtol: f64,
}

impl Default for EpdOptions {
    fn default() -> Self {
        EpdOptions { t0: 1.0, t1: 5.0, ic_samples: 64, tol: 1e-9, checkpoints: 41, atol: 1e-12, rtol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpdWitness {
    pub ic: Vec<f64>,
    pub t: f64,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpdReport {
    pub checked: usize,
    pub passed: usize,
    pub na: usize,
    pub failed: usize,
    pub t0: f64,
    pub t1: f64,
    pub tol: f64,
    /// Smallest `Phi` entry seen on `[t0, t1]` over all applicable ICs.
    pub min_entry: f64,
    pub witnesses: Vec<EpdWitness>,
    pub errors: Vec<String>,
}

impl EpdReport {
    pub fn all_passed(&self) -> bool {
        self.checked > 0 && self.passed == self.checked && self.errors.is_empty()
    }
}

enum IcResult {
    NotApplicable,
    Checked { min: f64, witness: Option<EpdWitness> },
    Failed(String),
}

fn epd_one(rs: &ReducedSystem, region: &BoxRegion, z0: &[f64], opts: &EpdOptions) -> IcResult {
    let n = rs.n();
    let solver = Dopri5::new(opts.atol, opts.rtol);
    let mut w = variational_start(z0);
    let mut left = false;
    let mut min = f64::INFINITY;
    let mut witness: Option<EpdWitness> = None;
    let checks: Vec<f64> = if opts.checkpoints <= 1 {
        vec![opts.t0]
    } else {
        (0..opts.checkpoints).map(|k| opts.t0 + (opts.t1 - opts.t0) * k as f64 / (opts.checkpoints - 1) as f64).collect()
    };
    let mut next = 0;
    let mut buf = vec![0.0; n + n * n];
    let inspect = |t: f64, w: &[f64], min: &mut f64, witness: &mut Option<EpdWitness>| {
        for (k, &v) in w[n..].iter().enumerate() {
            if v < *min {
                *min = v;
            }
            if v <= opts.tol && witness.as_ref().is_none_or(|wit| v < wit.value) {
                *witness = Some(EpdWitness { ic: z0.to_vec(), t, row: k / n, col: k % n, value: v });
            }
        }
    };
    let result = solver.solve(variational_rhs(rs), 0.0, &mut w, opts.t1, |step| {
        if !region.contains_closed(&step.y[..n]) {
            left = true;
            return Control::Stop;
        }
        while next < checks.len() && checks[next] <= step.t {
            step.interpolate(checks[next], &mut buf);
            inspect(checks[next], &buf, &mut min, &mut witness);
            next += 1;
        }
        if step.t >= opts.t0 {
            inspect(step.t, step.y, &mut min, &mut witness);
        }
        Control::Continue
    });
    match result {
        Err(e) => IcResult::Failed(e.to_string()),
        Ok(_) if left => IcResult::NotApplicable,
        Ok(_) => IcResult::Checked { min, witness },
    }
}

/// Direct check that every entry of `Phi(t)` exceeds `tol` for
/// `t in [t0, t1]`, for sampled ICs whose orbit stays in `region`.
pub fn eventual_positivity(rs: &ReducedSystem, region: &BoxRegion, opts: &EpdOptions) -> EpdReport {
    assert!(opts.t0 > 0.0 && opts.t0 < opts.t1, "need 0 < t0 < t1");
    let ics = halton_points(region, opts.ic_samples.max(1));
    let results: Vec<IcResult> = ics.par_iter().map(|z0| epd_one(rs, region, z0, opts)).collect();
    let mut report = EpdReport {
        checked: 0,
        passed: 0,
        na: 0,
        failed: 0,
        t0: opts.t0,
        t1: opts.t1,
        tol: opts.tol,
        min_entry: f64::INFINITY,
        witnesses: Vec::new(),
        errors: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            IcResult::NotApplicable => report.na += 1,
            IcResult::Failed(e) => report.errors.push(format!("ic {i}: {e}")),
            IcResult::Checked { min, witness } => {
                report.checked += 1;
                report.min_entry = report.min_entry.min(min);
                match witness {
                    None => report.passed += 1,
                    Some(w) => {
                        report.failed += 1;
                        if report.witnesses.len() < MAX_WITNESSES {
                            report.witnesses.push(w);
                        }
                    }
                }
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderViolation {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub component: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub passed: bool,
    pub checked: usize,
    pub na: usize,
    pub horizon: f64,
    pub violations: Vec<OrderViolation>,
}

fn end_state(rs: &ReducedSystem, region: &BoxRegion, z0: &[f64], t: f64, solver: &Dopri5) -> Option<Vec<f64>> {
    let mut z = z0.to_vec();
    let mut left = false;
    let ok = solver.solve(
        |_, z, dz| rs.field_into(z, dz),
        0.0,
        &mut z,
        t,
        |step| {
            if region.contains_closed(step.y) {
                Control::Continue
            } else {
                left = true;
                Control::Stop
            }
        },
    );
    (ok.is_ok() && !left).then_some(z)
}

/// Samples ordered pairs `z <= z'` in `region` and checks
/// `phi_T(z) <= phi_T(z') + tol` componentwise.
pub fn order_preservation_test(rs: &ReducedSystem, region: &BoxRegion, pair_samples: usize, horizon: f64, tol: f64) -> OrderReport {
    assert!(horizon > 0.0, "horizon must be positive");
    let n = rs.n();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..pair_samples)
        .map(|i| {
            let u = halton(i, 2 * n);
            let lo = region.from_unit(&u[..n]);
            let hi = (0..n).map(|k| lo[k] + u[n + k] * (region.hi()[k] - lo[k])).collect();
            (lo, hi)
        })
        .collect();
    let solver = Dopri5::new(1e-12, 1e-10);
    let results: Vec<Option<Option<OrderViolation>>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let fa = end_state(rs, region, a, horizon, &solver)?;
            let fb = end_state(rs, region, b, horizon, &solver)?;
            let worst = (0..n).map(|k| (k, fa[k] - fb[k])).max_by(|p, q| p.1.total_cmp(&q.1))?;
            Some((worst.1 > tol).then(|| OrderViolation { lower: a.clone(), upper: b.clone(), component: worst.0, gap: worst.1 }))
        })
        .collect();
    let mut report = OrderReport { passed: true, checked: 0, na: 0, horizon, violations: Vec::new() };
    for r in results {
        match r {
            None => report.na += 1,
            Some(v) => {
                report.checked += 1;
                if let Some(v) = v {
                    report.passed = false;
                    if report.violations.len() < MAX_WITNESSES {
                        report.violations.push(v);
                    }
                }
            }
        }
    }
    report.passed &= report.checked > 0;
    report
}
