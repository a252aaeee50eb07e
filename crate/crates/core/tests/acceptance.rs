use fastslow::analysis::{
    attraction_bound, attraction_bound_with, band_capture, basin_census, census_ics, default_delta, estimate_m, find_equilibria, lifted_equilibria,
    synthesize_regions, trace_det_classify, StabilityClass,
};
use fastslow::expr::{parse_expr, VarContext};
use fastslow::model::{load_system, FastSlowSystem, RegionSet, SimConfig, SystemFile};
use fastslow::monotone::{flow_derivative, orthant_consistency, sign_pattern, Sign, SignPattern};
use fastslow::reduction::{expand_manifold, manifold_defect, reduce, ReducedSystem};
use fastslow::sim::{asymptotic_phase_estimate, classify, integrate_full, Dopri5, Outcome};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::PathBuf;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

fn system_file(name: &str) -> SystemFile {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(name);
    load_system(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn counterexample_regions(sys: &FastSlowSystem) -> RegionSet {
    synthesize_regions(sys, Some(&[4.0])).expect("region synthesis").regions
}

fn reduction_exactness() -> Verdict {
    let sf = system_file("intro.fsys");
    let rs = reduce(&sf.system);
    let printed = rs.field()[0].to_string();
    ensure(printed == "-2*x1", format!("reduced field printed as {printed}"))?;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let x = -10.0 + 20.0 * i as f64 / 999.0;
        let v = rs.eval_field(&[x]).map_err(|e| e.to_string())?[0];
        worst = worst.max((v + 2.0 * x).abs());
    }
    ensure(worst < 1e-12, format!("max |F(x) + 2x| = {worst:e}"))?;
    Ok(format!("F = {printed}, max |F(x)+2x| = {worst:e} over 1000 points"))
}

fn brute_force_orthant(p: &SignPattern) -> bool {
    let n = p.n();
    (0..1u32 << n).any(|mask| {
        let s = |i: usize| if mask >> i & 1 == 1 { -1i32 } else { 1 };
        (0..n).all(|i| {
            (0..n).all(|j| {
                i == j
                    || match p.get(i, j) {
                        Sign::Pos => s(i) * s(j) > 0,
                        Sign::Neg => s(i) * s(j) < 0,
                        _ => true,
                    }
            })
        })
    })
}

fn orthant_obstruction() -> Verdict {
    let intro = system_file("intro.fsys");
    let p = sign_pattern(&intro.system.full_jacobian_exprs(), &intro.regions.d_tilde_closure(), 1, 64).map_err(|e| e.to_string())?;
    ensure(orthant_consistency(&p) == Ok(None), format!("intro pattern {p} admits an orthant"))?;
    let fig = system_file("figure4.fsys");
    let q = sign_pattern(&fig.system.full_jacobian_exprs(), &fig.regions.d_tilde_closure(), 2, 256).map_err(|e| e.to_string())?;
    ensure(orthant_consistency(&q) == Ok(None), format!("four-variable pattern {q} admits an orthant"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut found = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=10);
        let signs: Vec<Sign> = (0..n * n)
            .map(|_| match rng.random_range(0..10) {
                0..=3 => Sign::Zero,
                4..=6 => Sign::Pos,
                _ => Sign::Neg,
            })
            .collect();
        let pat = SignPattern::from_signs(n, &signs);
        let fast = orthant_consistency(&pat).map_err(|e| e.to_string())?;
        let brute = brute_force_orthant(&pat);
        ensure(fast.is_some() == brute, format!("disagreement on {pat}"))?;
        if let Some(sigma) = fast {
            found += 1;
            for i in 0..n {
                for j in 0..n {
                    let prod = (sigma[i] * sigma[j]) as i32;
                    let ok = i == j
                        || match pat.get(i, j) {
                            Sign::Pos => prod > 0,
                            Sign::Neg => prod < 0,
                            _ => true,
                        };
                    ensure(ok, format!("returned orthant violates entry ({i}, {j}) of {pat}"))?;
                }
            }
        }
    }
    Ok(format!("both patterns obstructed; 500 random patterns agree with exhaustive search ({found} consistent)"))
}

fn converged_to_origin(outcomes: &fastslow::analysis::OutcomeCounts, equilibria: &[Vec<f64>]) -> usize {
    equilibria
        .iter()
        .enumerate()
        .filter(|(_, e)| e.iter().all(|v| v.abs() < 1e-9))
        .map(|(i, _)| outcomes.converged.per_equilibrium.get(&i).copied().unwrap_or(0))
        .sum()
}

fn small_epsilon_convergence() -> Verdict {
    let sf = system_file("counterexample.fsys");
    let regions = counterexample_regions(&sf.system);
    let cfg = SimConfig { t_max: 200.0, conv_tol: 1e-3, ..sf.config.clone() };
    let c = basin_census(&sf.system, &regions, 0.05, 500, 7, &cfg, 1).map_err(|e| e.to_string())?;
    let origin = converged_to_origin(&c.outcomes, &c.equilibria);
    let frac = origin as f64 / 500.0;
    ensure(frac >= 0.99, format!("only {origin}/500 converged to the origin: {:?}", c.outcomes))?;
    ensure(c.outcomes.escaped == 0, format!("{} escaped", c.outcomes.escaped))?;
    Ok(format!("{origin}/500 converged to the origin, 0 escaped, K = {:?}", (regions.k.lo(), regions.k.hi())))
}

fn large_epsilon_failure() -> Verdict {
    let sf = system_file("counterexample.fsys");
    let regions = counterexample_regions(&sf.system);
    let eps = 2.0;
    let cfg = sf.config.with_epsilon(eps);
    let equilibria = lifted_equilibria(&sf.system, &regions).map_err(|e| e.to_string())?;
    let traj = integrate_full(&sf.system, eps, &[0.1, 0.1], &cfg, Some(&regions)).map_err(|e| e.to_string())?;
    let outcome = classify(&traj, &equilibria, &cfg);
    let period = match outcome {
        Outcome::LimitCycle { period } => period,
        other => return Err(format!("ic (0.1, 0.1) classified {other:?}")),
    };
    let c = basin_census(&sf.system, &regions, eps, 200, 7, &cfg, 0).map_err(|e| e.to_string())?;
    ensure(c.outcomes.converged.total == 0, format!("{} of 200 converged", c.outcomes.converged.total))?;
    let j = sf.system.full_jacobian(&[0.0], &[0.0], eps).map_err(|e| e.to_string())?;
    let pc = trace_det_classify(&j).ok_or("not planar")?;
    ensure(pc.trace == 1.0 - 1.0 / eps, format!("trace {}", pc.trace))?;
    ensure(pc.det > 0.0, format!("determinant {}", pc.det))?;
    ensure(pc.class == StabilityClass::Repelling, format!("class {:?}", pc.class))?;
    Ok(format!(
        "limit cycle with period {period:.4}; census: 0 converged, {} limit cycle, {} undecided; trace {}, det {} (repelling)",
        c.outcomes.limit_cycle, c.outcomes.undecided, pc.trace, pc.det
    ))
}

fn mean_defect(sys: &FastSlowSystem, regions: &RegionSet, eps: f64) -> Result<f64, String> {
    let approx = expand_manifold(sys, 1).map_err(|e| e.to_string())?;
    let (lo, hi) = (regions.k.lo()[0], regions.k.hi()[0]);
    let pts = 201;
    let mut sum = 0.0;
    for i in 0..pts {
        let x = lo + (hi - lo) * i as f64 / (pts - 1) as f64;
        sum += manifold_defect(sys, &approx, &[x], eps).map_err(|e| e.to_string())?;
    }
    Ok(sum / pts as f64)
}

fn manifold_defect_order() -> Verdict {
    let mut notes = Vec::new();
    for name in ["intro.fsys", "counterexample.fsys"] {
        let sf = system_file(name);
        for eps in [0.1, 0.05, 0.025] {
            let ratio = mean_defect(&sf.system, &sf.regions, eps / 2.0)? / mean_defect(&sf.system, &sf.regions, eps)?;
            ensure((0.175..=0.325).contains(&ratio), format!("{name} at eps = {eps}: ratio {ratio}"))?;
            notes.push(format!("{ratio:.4}"));
        }
    }
    Ok(format!("defect ratios {}", notes.join(", ")))
}

fn asymptotic_phase() -> Verdict {
    let sf = system_file("intro.fsys");
    let cfg = sf.config.clone();
    let a1 = asymptotic_phase_estimate(&sf.system, 0.1, &[0.5], &[0.1], &cfg).map_err(|e| e.to_string())?;
    let a2 = asymptotic_phase_estimate(&sf.system, 0.05, &[0.5], &[0.1], &cfg).map_err(|e| e.to_string())?;
    let oracle = (11.0 + 41f64.sqrt()) / 2.0;
    let r = a1.rate / oracle;
    ensure((0.5..=2.0).contains(&r), format!("rate {} vs oracle {oracle}", a1.rate))?;
    let ratio = a2.rate / a1.rate;
    ensure((1.5..=2.5).contains(&ratio), format!("rate ratio {ratio}"))?;
    Ok(format!("rate {:.4} (oracle {oracle:.4}), ratio {ratio:.4}", a1.rate))
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> ReducedSystem {
    let ctx = VarContext::slow_only(n);
    let field = (1..=n)
        .map(|i| {
            let mut terms = vec![format!("{:.3}*x{i}", -rng.random_range(0.5..2.0))];
            for j in 1..=n {
                if j != i {
                    terms.push(format!("{:.3}*tanh(x{j})", rng.random_range(-1.5..1.5)));
                }
            }
            terms.push(format!("{:.3}*sin(x{})", rng.random_range(-0.5..0.5), rng.random_range(1..=n)));
            terms.push(format!("{:.3}*x{i}^3", -rng.random_range(0.0..0.2)));
            parse_expr(&terms.join(" + "), ctx).unwrap()
        })
        .collect();
    ReducedSystem::from_field(field)
}

fn variational_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let solver = Dopri5::new(1e-13, 1e-12);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.random_range(1..=4);
        let rs = random_field(&mut rng, n);
        let z0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let t = rng.random_range(0.5..2.0);
        let fd = flow_derivative(&rs, &z0, t, &solver).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let mut num = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut plus = z0.clone();
            let mut minus = z0.clone();
            plus[k] += h;
            minus[k] -= h;
            let zp = flow_derivative(&rs, &plus, t, &solver).map_err(|e| e.to_string())?.z;
            let zm = flow_derivative(&rs, &minus, t, &solver).map_err(|e| e.to_string())?.z;
            for r in 0..n {
                num[(r, k)] = (zp[r] - zm[r]) / (2.0 * h);
            }
        }
        let scale = num.amax().max(1e-300);
        let err = (&fd.phi - &num).amax() / scale;
        worst = worst.max(err);
        ensure(err <= 1e-4, format!("case {case}: relative error {err:e}"))?;
    }
    let coop = ReducedSystem::from_field(vec![
        parse_expr("-2*x1 + x2", VarContext::slow_only(2)).unwrap(),
        parse_expr("x1 - 2*x2", VarContext::slow_only(2)).unwrap(),
    ]);
    let mut closed = 0.0f64;
    for t in [0.5f64, 1.0, 2.0] {
        let fd = flow_derivative(&coop, &[0.3, -0.2], t, &solver).map_err(|e| e.to_string())?;
        let e = (-2.0 * t).exp();
        let want = DMatrix::from_row_slice(2, 2, &[e * t.cosh(), e * t.sinh(), e * t.sinh(), e * t.cosh()]);
        closed = closed.max((&fd.phi - want).amax());
    }
    ensure(closed < 1e-6, format!("closed form error {closed:e}"))?;
    Ok(format!("worst relative error vs central differences {worst:.2e}; closed form error {closed:.2e}"))
}

fn attraction_bounds() -> Verdict {
    let b = attraction_bound_with(1.0, -1.0, 5.0, 0.4, 1.0).map_err(|e| e.to_string())?;
    ensure((b.eps_max - 0.01).abs() < 1e-15, format!("eps_max {}", b.eps_max))?;
    for c in [1.0, 1.5, 3.0] {
        for delta in [0.1, 0.4, 1.0] {
            let edge = delta / (4.0 * c);
            for z in [0.0, edge / 2.0, edge] {
                let t = attraction_bound_with(c, -0.8, 2.0, delta, z).map_err(|e| e.to_string())?.t0_prime;
                ensure(t == 0.0, format!("T0' = {t} for |z0| = {z} <= delta/(4C) = {edge}"))?;
            }
        }
    }
    let cs = [1.0, 1.3, 2.0, 4.0];
    let betas = [-0.2, -0.5, -1.0, -3.0];
    let deltas = [0.05, 0.2, 0.5, 1.0];
    let ms = [0.5, 1.0, 5.0, 20.0];
    let e = |c: f64, beta: f64, d: f64, m: f64| attraction_bound_with(c, beta, m, d, 1.0).unwrap().eps_max;
    let mut pairs = 0;
    for (ci, &c) in cs.iter().enumerate() {
        for (bi, &beta) in betas.iter().enumerate() {
            for (di, &d) in deltas.iter().enumerate() {
                for (mi, &m) in ms.iter().enumerate() {
                    let here = e(c, beta, d, m);
                    if ci + 1 < cs.len() {
                        ensure(e(cs[ci + 1], beta, d, m) < here, "not decreasing in C")?;
                    }
                    if bi + 1 < betas.len() {
                        ensure(e(c, betas[bi + 1], d, m) > here, "not increasing in |beta|")?;
                    }
                    if di + 1 < deltas.len() {
                        ensure(e(c, beta, deltas[di + 1], m) > here, "not increasing in delta")?;
                    }
                    if mi + 1 < ms.len() {
                        ensure(e(c, beta, d, ms[mi + 1]) < here, "not decreasing in M")?;
                    }
                    pairs += 1;
                }
            }
        }
    }

    let sf = system_file("counterexample.fsys");
    let regions = counterexample_regions(&sf.system);
    let rs = reduce(&sf.system);
    let m_bound = estimate_m(&sf.system, &rs, &regions).map_err(|e| e.to_string())?;
    let delta = default_delta(&rs, &regions).map_err(|e| e.to_string())?;
    let bound = attraction_bound(sf.system.a(), m_bound, delta, 0.0).map_err(|e| e.to_string())?;
    let eps = bound.eps_max / 2.0;
    let cfg = SimConfig { t_max: 20.0, ..sf.config.with_epsilon(eps) };
    let ics = census_ics(&regions, 11, 100);
    let checks: Vec<_> = ics
        .par_iter()
        .map(|ic| {
            let traj = integrate_full(&sf.system, eps, ic, &cfg, Some(&regions)).map_err(|e| e.to_string())?;
            band_capture(&rs, &traj, &bound, eps).map_err(|e| e.to_string())
        })
        .collect::<Result<_, String>>()?;
    let bad = checks.iter().filter(|c| !c.passed()).count();
    let widest = checks.iter().map(|c| c.max_distance).fold(0.0f64, f64::max);
    ensure(bad == 0, format!("{bad} of 100 trajectories left the band after T0"))?;
    Ok(format!(
        "eps_max(1,-1,0.4,5) = {}; monotone on {pairs} grid points; band capture at eps = {eps:.3e} (M = {m_bound:.3}, delta = {delta:.3}): 100/100, widest {widest:.2e} <= {:.3}",
        b.eps_max,
        delta / 2.0
    ))
}

fn equilibrium_finder() -> Verdict {
    let ctx = VarContext::slow_only(1);
    let cubic = ReducedSystem::from_field(vec![parse_expr("x1 - x1^3", ctx).unwrap()]);
    let set = find_equilibria(&cubic, &fastslow::model::BoxRegion::cube(1, -2.0, 2.0).unwrap(), &Default::default()).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = set.points.iter().map(|e| e.x[0]).collect();
    ensure(xs.len() == 3, format!("cubic roots {xs:?}"))?;
    for (x, want) in xs.iter().zip([-1.0, 0.0, 1.0]) {
        ensure((x - want).abs() < 1e-9, format!("cubic roots {xs:?}"))?;
    }
    ensure(set.points.iter().all(|e| e.residual < 1e-9), "cubic residual too large")?;
    let sf = system_file("counterexample.fsys");
    let rs = reduce(&sf.system);
    let set = find_equilibria(&rs, &fastslow::model::BoxRegion::cube(1, -4.0, 4.0).unwrap(), &Default::default()).map_err(|e| e.to_string())?;
    ensure(set.len() == 1 && set.points[0].x[0].abs() < 1e-9 && set.points[0].residual < 1e-9, format!("{:?}", set.points))?;
    Ok(format!("cubic roots {xs:?}; reduced counterexample field has only the origin"))
}

fn determinism() -> Verdict {
    let sf = system_file("counterexample.fsys");
    let regions = counterexample_regions(&sf.system);
    let mut notes = Vec::new();
    for (eps, samples) in [(0.05, 500), (2.0, 200)] {
        let cfg = sf.config.with_epsilon(eps);
        let serial = basin_census(&sf.system, &regions, eps, samples, 7, &cfg, 1).map_err(|e| e.to_string())?;
        let parallel = basin_census(&sf.system, &regions, eps, samples, 7, &cfg, 8).map_err(|e| e.to_string())?;
        let a = serde_json::to_string(&serial).unwrap();
        let b = serde_json::to_string(&parallel).unwrap();
        ensure(a == b, format!("census JSON differs at eps = {eps}"))?;
        notes.push(format!("eps = {eps}: {} bytes identical", a.len()));
    }
    Ok(notes.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Duration); 10] = [
        ("reduction exactness", reduction_exactness, Duration::from_secs(1)),
        ("orthant obstruction", orthant_obstruction, Duration::from_secs(5)),
        ("small-epsilon convergence", small_epsilon_convergence, Duration::from_secs(120)),
        ("large-epsilon failure", large_epsilon_failure, Duration::from_secs(60)),
        ("slow-manifold defect order", manifold_defect_order, Duration::from_secs(10)),
        ("asymptotic phase", asymptotic_phase, Duration::from_secs(5)),
        ("variational correctness", variational_correctness, Duration::from_secs(30)),
        ("attraction bound", attraction_bounds, Duration::from_secs(60)),
        ("equilibrium finder", equilibrium_finder, Duration::from_secs(1)),
        ("determinism", determinism, Duration::from_secs(300)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let verdict = verdict.and_then(|d| if took <= *budget { Ok(d) } else { Err(format!("{d}; took {took:.2?}, budget {budget:?}")) });
        match verdict {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({took:.2?}) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({took:.2?}) {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
