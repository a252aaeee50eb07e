use super::equilibria::{find_equilibria, EquilibriumOptions};
use crate::expr::EvalError;
use crate::model::{FastSlowSystem, RegionSet, SimConfig};
use crate::reduction::reduce;
use crate::sim::{classify, integrate_full, Outcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CensusError {
    #[error("need at least one sample")]
    NoSamples,
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("region dimensions do not match the system: {0}")]
    Regions(String),
    #[error("could not build a worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConvergedCounts {
    pub total: usize,
    /// Keyed by index into `equilibria`.
    pub per_equilibrium: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutcomeCounts {
    pub converged: ConvergedCounts,
    pub limit_cycle: usize,
    pub escaped: usize,
    pub undecided: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasinCensus {
    pub seed: u64,
    pub epsilon: f64,
    pub n_samples: usize,
    pub outcomes: OutcomeCounts,
    pub fraction_converged: f64,
    /// Lifted equilibria `(x*, m0(x*))`.
    pub equilibria: Vec<Vec<f64>>,
    pub diagnostics: Vec<String>,
}

/// The `index`-th initial condition, uniform over `D = K x L`. Each index
/// draws from its own stream, so the draw does not depend on scheduling.
pub fn census_ic(regions: &RegionSet, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let d = regions.d_closure();
    (0..d.dim()).map(|k| d.lo()[k] + rng.random::<f64>() * d.widths()[k]).collect()
}

pub fn census_ics(regions: &RegionSet, seed: u64, count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|i| census_ic(regions, seed, i)).collect()
}

/// Equilibria of the reduced flow in `Int K~`, lifted onto the graph of `m0`.
pub fn lifted_equilibria(sys: &FastSlowSystem, regions: &RegionSet) -> Result<Vec<Vec<f64>>, EvalError> {
    let rs = reduce(sys);
    let set = find_equilibria(&rs, &regions.k_tilde, &EquilibriumOptions::default())?;
    set.points
        .into_iter()
        .map(|e| {
            let mut z = e.x.clone();
            z.extend(rs.m0_values(&e.x)?);
            Ok(z)
        })
        .collect()
}

fn tally(outcomes: &[Outcome], equilibria: usize) -> OutcomeCounts {
    let mut per_equilibrium: BTreeMap<usize, usize> = (0..equilibria).map(|i| (i, 0)).collect();
    let mut counts = OutcomeCounts {
        converged: ConvergedCounts { total: 0, per_equilibrium: BTreeMap::new() },
        limit_cycle: 0,
        escaped: 0,
        undecided: 0,
    };
    for o in outcomes {
        match o {
            Outcome::Converged { equilibrium } => {
                counts.converged.total += 1;
                *per_equilibrium.entry(*equilibrium).or_default() += 1;
            }
            Outcome::LimitCycle { .. } => counts.limit_cycle += 1,
            Outcome::Escaped => counts.escaped += 1,
            Outcome::Undecided => counts.undecided += 1,
        }
    }
    counts.converged.per_equilibrium = per_equilibrium;
    counts
}

/// Simulates `samples` initial conditions drawn uniformly over `D` and
/// classifies each. `jobs = 0` uses the global pool.
pub fn basin_census(
    sys: &FastSlowSystem,
    regions: &RegionSet,
    eps: f64,
    samples: usize,
    seed: u64,
    cfg: &SimConfig,
    jobs: usize,
) -> Result<BasinCensus, CensusError> {
    if samples == 0 {
        return Err(CensusError::NoSamples);
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CensusError::BadEpsilon(eps));
    }
    regions.check_dims(sys.n(), sys.m()).map_err(|e| CensusError::Regions(e.to_string()))?;
    let equilibria = lifted_equilibria(sys, regions)?;

    let one = |i: usize| -> (Outcome, Option<String>) {
        let ic = census_ic(regions, seed, i);
        match integrate_full(sys, eps, &ic, cfg, Some(regions)) {
            Ok(traj) => {
                let note = match traj.termination() {
                    crate::sim::Termination::StepFailure(msg) => Some(format!("sample {i}: {msg}")),
                    _ => None,
                };
                (classify(&traj, &equilibria, cfg), note)
            }
            Err(e) => (Outcome::Undecided, Some(format!("sample {i}: {e}"))),
        }
    };
    let results: Vec<(Outcome, Option<String>)> = if jobs == 1 {
        (0..samples).map(one).collect()
    } else if jobs == 0 {
        (0..samples).into_par_iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CensusError::Pool(e.to_string()))?;
        pool.install(|| (0..samples).into_par_iter().map(one).collect())
    };

    let outcomes: Vec<Outcome> = results.iter().map(|r| r.0).collect();
    let diagnostics = results.into_iter().filter_map(|r| r.1).collect();
    let counts = tally(&outcomes, equilibria.len());
    Ok(BasinCensus {
        seed,
        epsilon: eps,
        n_samples: samples,
        fraction_converged: counts.converged.total as f64 / samples as f64,
        outcomes: counts,
        equilibria,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, VarContext};
    use crate::model::BoxRegion;
    use nalgebra::DMatrix;

    fn intro() -> (FastSlowSystem, RegionSet) {
        let sys = FastSlowSystem::new(
            vec![parse_expr("-x1 - y1", VarContext::new(1, 1)).unwrap()],
            DMatrix::from_element(1, 1, -1.0),
            vec![parse_expr("x1", VarContext::slow_only(1)).unwrap()],
        )
        .unwrap();
        let r = RegionSet::new(BoxRegion::cube(1, -1.0, 1.0).unwrap(), BoxRegion::cube(1, -1.5, 1.5).unwrap(), BoxRegion::cube(1, -2.0, 2.0).unwrap()).unwrap();
        (sys, r)
    }

    #[test]
    fn ics_are_uniform_and_reproducible() {
        let (_, r) = intro();
        let a = census_ics(&r, 3, 2000);
        assert_eq!(a, census_ics(&r, 3, 2000));
        assert_ne!(a, census_ics(&r, 4, 2000));
        assert!(a.iter().all(|p| r.d_closure().contains_closed(p)));
        let mean_x = a.iter().map(|p| p[0]).sum::<f64>() / a.len() as f64;
        let mean_y = a.iter().map(|p| p[1]).sum::<f64>() / a.len() as f64;
        // Standard errors are 1/sqrt(3 * 2000) and 2/sqrt(3 * 2000).
        assert!(mean_x.abs() < 0.05 && mean_y.abs() < 0.1);
        assert_eq!(census_ic(&r, 3, 17), a[17]);
    }

    #[test]
    fn stable_linear_system_all_converge() {
        let (sys, r) = intro();
        let cfg = SimConfig { t_max: 40.0, ..SimConfig::default() };
        let c = basin_census(&sys, &r, 0.1, 40, 1, &cfg, 2).unwrap();
        assert_eq!(c.outcomes.converged.total, 40, "{c:?}");
        assert_eq!(c.fraction_converged, 1.0);
        assert_eq!(c.outcomes.converged.per_equilibrium[&0], 40);
        assert_eq!(c.equilibria, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn parallel_matches_serial() {
        let (sys, r) = intro();
        let cfg = SimConfig { t_max: 20.0, ..SimConfig::default() };
        let a = basin_census(&sys, &r, 0.2, 24, 9, &cfg, 1).unwrap();
        let b = basin_census(&sys, &r, 0.2, 24, 9, &cfg, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counts_sum_to_samples() {
        let outs = [Outcome::Converged { equilibrium: 1 }, Outcome::Escaped, Outcome::LimitCycle { period: 2.0 }, Outcome::Undecided];
        let t = tally(&outs, 2);
        assert_eq!(t.converged.total + t.limit_cycle + t.escaped + t.undecided, outs.len());
        assert_eq!(t.converged.per_equilibrium, BTreeMap::from([(0, 0), (1, 1)]));
    }

    #[test]
    fn rejects_empty_census() {
        let (sys, r) = intro();
        assert!(matches!(basin_census(&sys, &r, 0.1, 0, 0, &SimConfig::default(), 1), Err(CensusError::NoSamples)));
    }
}
