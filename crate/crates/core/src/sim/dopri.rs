//! Dormand–Prince 5(4) with PI step control and the 4th-order continuous
//! extension, after Hairer, Nørsett & Wanner.

use crate::expr::EvalError;
use thiserror::Error;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    Underflow { t: f64, h: f64 },
    #[error("step limit {limit} reached at t = {t}")]
    MaxSteps { t: f64, limit: usize },
    #[error("domain error at t = {t}: {source}")]
    Domain { t: f64, source: EvalError },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

impl StepError {
    pub fn time(&self) -> f64 {
        match self {
            StepError::Underflow { t, .. }
            | StepError::MaxSteps { t, .. }
            | StepError::Domain { t, .. }
            | StepError::NonFinite { t } => *t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub atol: f64,
    pub rtol: f64,
    pub max_steps: usize,
    /// Upper bound on `|h|`; infinite by default.
    pub h_max: f64,
}

impl Dopri5 {
    pub fn new(atol: f64, rtol: f64) -> Self {
        Dopri5 { atol, rtol, max_steps: 5_000_000, h_max: f64::INFINITY }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// One accepted step with its continuous extension.
pub struct DenseStep<'a> {
    pub t_old: f64,
    pub t: f64,
    pub y: &'a [f64],
    /// `dy/dt` at `t`.
    pub dy: &'a [f64],
    h: f64,
    rcont: &'a [Vec<f64>; 5],
}

impl DenseStep<'_> {
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t_old) / self.h;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }
}

struct Work {
    k: [Vec<f64>; 7],
    y1: Vec<f64>,
    ytmp: Vec<f64>,
    err: Vec<f64>,
    rcont: [Vec<f64>; 5],
}

impl Work {
    fn new(dim: usize) -> Self {
        let v = || vec![0.0; dim];
        Work {
            k: [v(), v(), v(), v(), v(), v(), v()],
            y1: v(),
            ytmp: v(),
            err: v(),
            rcont: [v(), v(), v(), v(), v()],
        }
    }
}

impl Dopri5 {
    fn error_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let sum: f64 = y0
            .iter()
            .zip(y1)
            .zip(err)
            .map(|((a, b), e)| {
                let sk = self.atol + self.rtol * a.abs().max(b.abs());
                (e / sk).powi(2)
            })
            .sum();
        (sum / y0.len().max(1) as f64).sqrt()
    }

    fn initial_step<F>(&self, f: &mut F, t0: f64, y0: &[f64], f0: &[f64], dir: f64, span: f64, work: &mut Work) -> Result<f64, StepError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
    {
        let dim = y0.len().max(1) as f64;
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..y0.len() {
            let sk = self.atol + self.rtol * y0[i].abs();
            dnf += (f0[i] / sk).powi(2);
            dny += (y0[i] / sk).powi(2);
        }
        let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
        h = h.min(self.h_max).min(span);
        for i in 0..y0.len() {
            work.ytmp[i] = y0[i] + dir * h * f0[i];
        }
        f(t0 + dir * h, &work.ytmp, &mut work.k[1]).map_err(|source| StepError::Domain { t: t0, source })?;
        let mut der2 = 0.0;
        for i in 0..y0.len() {
            let sk = self.atol + self.rtol * y0[i].abs();
            der2 += ((work.k[1][i] - f0[i]) / sk).powi(2);
        }
        let der2 = (der2 / dim).sqrt() / h;
        let der12 = der2.abs().max((dnf / dim).sqrt());
        let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
        Ok((100.0 * h).min(h1).min(self.h_max).min(span))
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t_end`, calling `observe`
    /// after every accepted step. The final state is left in `y`.
    pub fn solve<F, O>(&self, mut f: F, t0: f64, y: &mut [f64], t_end: f64, mut observe: O) -> Result<Stats, StepError>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), EvalError>,
        O: FnMut(&DenseStep<'_>) -> Control,
    {
        let dim = y.len();
        let mut stats = Stats::default();
        if t_end == t0 {
            return Ok(stats);
        }
        let dir = (t_end - t0).signum();
        let span = (t_end - t0).abs();
        let mut w = Work::new(dim);
        let mut t = t0;
        let domain = |t: f64| move |source| StepError::Domain { t, source };

        f(t, y, &mut w.k[0]).map_err(domain(t))?;
        stats.evaluations += 1;
        let mut h = self.initial_step(&mut f, t0, y, &w.k[0].clone(), dir, span, &mut w)?;
        stats.evaluations += 1;
        let mut facold: f64 = 1e-4;
        let mut last_rejected = false;
        let expo1 = 0.2 - BETA * 0.75;

        loop {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(StepError::MaxSteps { t, limit: self.max_steps });
            }
            if h.abs() <= 10.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(StepError::Underflow { t, h });
            }
            let mut last = false;
            if (t + dir * h - t_end) * dir >= 0.0 {
                h = (t_end - t).abs();
                last = true;
            }
            let hs = dir * h;

            let (k, ytmp) = (&mut w.k, &mut w.ytmp);
            for i in 0..dim {
                ytmp[i] = y[i] + hs * A21 * k[0][i];
            }
            f(t + C2 * hs, ytmp, &mut k[1]).map_err(domain(t))?;
            for i in 0..dim {
                ytmp[i] = y[i] + hs * (A31 * k[0][i] + A32 * k[1][i]);
            }
            f(t + C3 * hs, ytmp, &mut k[2]).map_err(domain(t))?;
            for i in 0..dim {
                ytmp[i] = y[i] + hs * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            f(t + C4 * hs, ytmp, &mut k[3]).map_err(domain(t))?;
            for i in 0..dim {
                ytmp[i] = y[i] + hs * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            f(t + C5 * hs, ytmp, &mut k[4]).map_err(domain(t))?;
            for i in 0..dim {
                ytmp[i] = y[i]
                    + hs * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
            }
            f(t + hs, ytmp, &mut k[5]).map_err(domain(t))?;
            for i in 0..dim {
                w.y1[i] = y[i]
                    + hs * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
            }
            f(t + hs, &w.y1, &mut k[6]).map_err(domain(t))?;
            stats.evaluations += 6;
            if w.y1.iter().any(|v| !v.is_finite()) {
                return Err(StepError::NonFinite { t });
            }
            for i in 0..dim {
                w.err[i] = hs
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            }
            let err = self.error_norm(y, &w.y1, &w.err);
            if !err.is_finite() {
                return Err(StepError::NonFinite { t });
            }

            let fac11 = err.powf(expo1);
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            if err <= 1.0 {
                facold = err.max(1e-4);
                stats.accepted += 1;
                for i in 0..dim {
                    let ydiff = w.y1[i] - y[i];
                    let bspl = hs * k[0][i] - ydiff;
                    w.rcont[0][i] = y[i];
                    w.rcont[1][i] = ydiff;
                    w.rcont[2][i] = bspl;
                    w.rcont[3][i] = ydiff - hs * k[6][i] - bspl;
                    w.rcont[4][i] = hs
                        * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
                }
                let t_old = t;
                t = if last { t_end } else { t + hs };
                y.copy_from_slice(&w.y1);
                let (head, tail) = w.k.split_at_mut(6);
                head[0].copy_from_slice(&tail[0]);
                let step = DenseStep { t_old, t, y, dy: &w.k[0], h: hs, rcont: &w.rcont };
                if observe(&step) == Control::Stop || last {
                    return Ok(stats);
                }
                let mut hnew = h / fac;
                if last_rejected {
                    hnew = hnew.min(h);
                }
                h = hnew.min(self.h_max);
                last_rejected = false;
            } else {
                stats.rejected += 1;
                h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
                last_rejected = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), EvalError> {
        dy[0] = -2.0 * y[0];
        Ok(())
    }

    #[test]
    fn exponential_decay_end_point() {
        let mut y = [1.0];
        Dopri5::new(1e-12, 1e-10).solve(decay, 0.0, &mut y, 5.0, |_| Control::Continue).unwrap();
        assert!((y[0] - (-10.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn dense_output_tracks_solution() {
        let mut y = [1.0, 0.0];
        let mut worst: f64 = 0.0;
        let mut out = [0.0; 2];
        Dopri5::new(1e-11, 1e-11)
            .solve(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                    Ok(())
                },
                0.0,
                &mut y,
                10.0,
                |s| {
                    for j in 0..=8 {
                        let t = s.t_old + (s.t - s.t_old) * j as f64 / 8.0;
                        s.interpolate(t, &mut out);
                        worst = worst.max((out[0] - t.cos()).abs()).max((out[1] + t.sin()).abs());
                    }
                    Control::Continue
                },
            )
            .unwrap();
        assert!(worst < 1e-8, "dense output error {worst:e}");
    }

    #[test]
    fn backwards_in_time() {
        let mut y = [(-2.0f64).exp()];
        Dopri5::new(1e-12, 1e-12).solve(decay, 1.0, &mut y, 0.0, |_| Control::Continue).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn observer_can_stop() {
        let mut y = [1.0];
        let mut seen = 0;
        Dopri5::new(1e-8, 1e-8)
            .solve(decay, 0.0, &mut y, 100.0, |_| {
                seen += 1;
                if seen == 3 {
                    Control::Stop
                } else {
                    Control::Continue
                }
            })
            .unwrap();
        assert_eq!(seen, 3);
    }

    #[test]
    fn blow_up_is_reported() {
        let mut y = [1.0];
        let err = Dopri5::new(1e-8, 1e-8)
            .solve(
                |_, y, dy| {
                    dy[0] = y[0] * y[0];
                    Ok(())
                },
                0.0,
                &mut y,
                2.0,
                |_| Control::Continue,
            )
            .unwrap_err();
        assert!(err.time() < 1.0 + 1e-6);
    }
}
