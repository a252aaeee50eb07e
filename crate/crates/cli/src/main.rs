mod output;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use fastslow::analysis::{
    basin_census, check_hypotheses, find_equilibria, lifted_equilibria, synthesize_regions, trace_det_classify, EquilibriumOptions, HypothesisOptions,
    HypothesisReport, PlanarClassification, Synthesis,
};
use fastslow::model::{eigenvalues, load_system, Eigenvalue, RegionSet, SimConfig, SystemFile};
use fastslow::monotone::{
    cooperativity_check, eventual_positivity, halton_points, orthant_consistency, sign_pattern, CooperativityReport, EpdOptions, EpdWitness, MonotoneError,
    SignPattern,
};
use fastslow::reduction::{expand_manifold, manifold_defect, reduce};
use fastslow::sim::{asymptotic_phase_estimate, classify, integrate_full, integrate_reduced, Outcome, Trajectory};
use output::{manifest_path, sha256_hex, to_json, write_atomic, Manifest};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "fastslow", version, about = "Analyse fast-slow systems x' = f(x, y), eps y' = A y + h(x)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the artifact here (atomically) plus a `<out>.manifest.json` sidecar.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed from the system file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sampled checks and censuses; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Absolute integration tolerance.
    #[arg(long = "tol-abs", global = true)]
    tol_abs: Option<f64>,
    /// Relative integration tolerance.
    #[arg(long = "tol-rel", global = true)]
    tol_rel: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// System file.
    system: PathBuf,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Integration horizon in slow time.
    #[arg(long)]
    tmax: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct RegionChoice {
    /// Build K, Ktilde and L from the system's structure instead of reading them.
    #[arg(long)]
    synthesize: bool,
    /// Bounds M_j on |alpha_j| for synthesis; sampled when omitted.
    #[arg(long = "m-bound", value_delimiter = ',')]
    m_bound: Vec<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Report the standing hypotheses at the working epsilon.
    Check {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        regions: RegionChoice,
        #[arg(long, default_value_t = 256)]
        face_samples: usize,
    },
    /// Print the reduced system x' = f(x, m0(x)) and the manifold terms;
    /// --out writes a table of their values over K as CSV.
    Reduce {
        system: PathBuf,
        #[arg(long, default_value_t = 101)]
        samples: usize,
    },
    /// First-order slow-manifold expansion and its invariance defect.
    Manifold {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        order: u8,
    },
    /// Equilibria of the reduced flow in Ktilde and their stability.
    Equilibria {
        #[command(flatten)]
        common: Common,
    },
    /// Sign structure, orthant order and eventual positivity checks.
    Monotone {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long = "ic-samples", default_value_t = 32)]
        ic_samples: usize,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 5.0)]
        t1: f64,
    },
    /// Integrate one trajectory and write it as CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Initial state `x1,..,xn,y1,..,ym` (`x1,..,xn` with --reduced).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        ic: Vec<f64>,
        /// Integrate the reduced system instead.
        #[arg(long)]
        reduced: bool,
    },
    /// Fit the rate at which a nearby orbit approaches its fiber partner.
    Phase {
        #[command(flatten)]
        common: Common,
        /// Base point on the slow manifold; defaults to the center of K.
        #[arg(long = "x0", value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// Fast-direction offset; defaults to 0.1 along y1.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        offset: Vec<f64>,
    },
    /// Classify the long-run behaviour of random initial conditions in D.
    Census {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        regions: RegionChoice,
        #[arg(long)]
        samples: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Check { .. } => "check",
            Command::Reduce { .. } => "reduce",
            Command::Manifold { .. } => "manifold",
            Command::Equilibria { .. } => "equilibria",
            Command::Monotone { .. } => "monotone",
            Command::Simulate { .. } => "simulate",
            Command::Phase { .. } => "phase",
            Command::Census { .. } => "census",
        }
    }

    fn system(&self) -> &PathBuf {
        match self {
            Command::Reduce { system, .. } => system,
            Command::Check { common, .. }
            | Command::Manifold { common, .. }
            | Command::Equilibria { common }
            | Command::Monotone { common, .. }
            | Command::Simulate { common, .. }
            | Command::Phase { common, .. }
            | Command::Census { common, .. } => &common.system,
        }
    }

    fn common(&self) -> Option<&Common> {
        match self {
            Command::Reduce { .. } => None,
            Command::Check { common, .. }
            | Command::Manifold { common, .. }
            | Command::Equilibria { common }
            | Command::Monotone { common, .. }
            | Command::Simulate { common, .. }
            | Command::Phase { common, .. }
            | Command::Census { common, .. } => Some(common),
        }
    }
}

/// Exit status 1: the input or the analysed system is invalid.
/// Exit status 2: the computation itself failed.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome_<T> = Result<T, Failure>;

trait Classify<T> {
    fn invalid(self) -> Outcome_<T>;
    fn runtime(self) -> Outcome_<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome_<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }
    fn runtime(self) -> Outcome_<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// What a subcommand produced: the artifact, an optional short note for the
/// terminal when the artifact goes to a file, and whether the analysed
/// system failed a check.
struct Artifact {
    body: String,
    summary: String,
    rejected: bool,
}

impl Artifact {
    fn json<T: Serialize>(value: &T, summary: String) -> Outcome_<Self> {
        Ok(Artifact { body: to_json(value).runtime()?, summary, rejected: false })
    }
}

struct Context_ {
    file: SystemFile,
    config: SimConfig,
    jobs: usize,
}

fn resolve(cli: &Cli) -> Outcome_<Context_> {
    let path = cli.command.system();
    let file = load_system(path).with_context(|| format!("cannot load system file {}", path.display())).invalid()?;
    let mut config = file.config.clone();
    if let Some(c) = cli.command.common() {
        if let Some(e) = c.epsilon {
            config.epsilon = e;
        }
        if let Some(t) = c.tmax {
            config.t_max = t;
        }
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(a) = cli.tol_abs {
        config.atol = a;
    }
    if let Some(r) = cli.tol_rel {
        config.rtol = r;
    }
    if let Command::Census { samples: Some(n), .. } = &cli.command {
        config.samples = *n;
    }
    config.validate().context("invalid configuration").invalid()?;
    Ok(Context_ { file, config, jobs: cli.jobs })
}

fn regions_for(ctx: &Context_, choice: &RegionChoice) -> Outcome_<(RegionSet, Option<Synthesis>)> {
    if !choice.synthesize {
        if !choice.m_bound.is_empty() {
            return Err(Failure::Invalid(anyhow!("--m-bound only applies together with --synthesize")));
        }
        return Ok((ctx.file.regions.clone(), None));
    }
    let bounds = (!choice.m_bound.is_empty()).then_some(choice.m_bound.as_slice());
    let s = synthesize_regions(&ctx.file.system, bounds).context("region synthesis failed").invalid()?;
    Ok((s.regions.clone(), Some(s)))
}

fn fmt_point(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|c| format!("{c:.6}")).collect();
    format!("({})", parts.join(", "))
}

#[derive(Serialize)]
struct CheckOutput<'a> {
    regions: &'a RegionSet,
    synthesis: Option<&'a Synthesis>,
    #[serde(flatten)]
    report: &'a HypothesisReport,
}

fn run_check(ctx: &Context_, choice: &RegionChoice, face_samples: usize) -> Outcome_<Artifact> {
    let (regions, synthesis) = regions_for(ctx, choice)?;
    let opts = HypothesisOptions { face_samples, ..HypothesisOptions::default() };
    let report = check_hypotheses(&ctx.file.system, &regions, ctx.config.epsilon, &opts).runtime()?;
    let mut summary = String::new();
    for h in &report.hypotheses {
        let _ = writeln!(summary, "{}: {}", h.id, serde_json::to_value(h.status).unwrap().as_str().unwrap_or("?"));
    }
    summary.push_str(if report.all_pass { "all hypotheses pass" } else { "some hypotheses fail" });
    let mut art = Artifact::json(&CheckOutput { regions: &regions, synthesis: synthesis.as_ref(), report: &report }, summary)?;
    art.rejected = !report.all_pass;
    Ok(art)
}

/// Points of `K` for sampled tables: a uniform grid in one dimension,
/// Halton points otherwise.
fn k_samples(k: &fastslow::model::BoxRegion, count: usize) -> Vec<Vec<f64>> {
    if k.dim() == 1 {
        let steps = count.max(2) - 1;
        (0..=steps).map(|i| vec![k.lo()[0] + k.widths()[0] * i as f64 / steps as f64]).collect()
    } else {
        halton_points(k, count)
    }
}

fn run_reduce(ctx: &Context_, samples: usize) -> Outcome_<Artifact> {
    let sys = &ctx.file.system;
    let rs = reduce(sys);
    let approx = expand_manifold(sys, 1).invalid()?;
    let (n, m) = (sys.n(), sys.m());
    let mut text = String::new();
    for (i, f) in rs.field().iter().enumerate() {
        let _ = writeln!(text, "F{}(x) = {f}", i + 1);
    }
    for (j, e) in approx.m0().iter().enumerate() {
        let _ = writeln!(text, "m0_{}(x) = {e}", j + 1);
    }
    for (j, e) in approx.m1().iter().enumerate() {
        let _ = writeln!(text, "m1_{}(x) = {e}", j + 1);
    }
    let mut table = String::new();
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x{i}"))
        .chain((1..=n).map(|i| format!("F{i}")))
        .chain((1..=m).map(|j| format!("m0_{j}")))
        .chain((1..=m).map(|j| format!("m1_{j}")))
        .collect();
    let _ = writeln!(table, "{}", header.join(","));
    for x in k_samples(&ctx.file.regions.k, samples) {
        let mut row = x.clone();
        row.extend(rs.eval_field(&x).runtime()?);
        row.extend(rs.m0_values(&x).runtime()?);
        for e in approx.m1() {
            row.push(e.eval_slow(&x).runtime()?);
        }
        let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
        let _ = writeln!(table, "{}", cells.join(","));
    }
    Ok(Artifact { body: table, summary: text.trim_end().to_string(), rejected: false })
}

#[derive(Serialize)]
struct DefectSummary {
    samples: usize,
    mean_at_epsilon: f64,
    mean_at_half_epsilon: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct ManifoldOutput {
    order: u8,
    epsilon: f64,
    m0: Vec<String>,
    m1: Vec<String>,
    m_epsilon: Vec<String>,
    defect: DefectSummary,
}

fn run_manifold(ctx: &Context_, order: u8) -> Outcome_<Artifact> {
    let sys = &ctx.file.system;
    let approx = expand_manifold(sys, order).invalid()?;
    let eps = ctx.config.epsilon;
    let k = &ctx.file.regions.k;
    let pts = k_samples(k, if k.dim() == 1 { 201 } else { 512 });
    let mean = |e: f64| -> Outcome_<f64> {
        let mut s = 0.0;
        for p in &pts {
            s += manifold_defect(sys, &approx, p, e).runtime()?;
        }
        Ok(s / pts.len() as f64)
    };
    let (full, half) = (mean(eps)?, mean(eps / 2.0)?);
    let out = ManifoldOutput {
        order,
        epsilon: eps,
        m0: approx.m0().iter().map(ToString::to_string).collect(),
        m1: approx.m1().iter().map(ToString::to_string).collect(),
        m_epsilon: approx.terms_at(eps).iter().map(ToString::to_string).collect(),
        defect: DefectSummary { samples: pts.len(), mean_at_epsilon: full, mean_at_half_epsilon: half, ratio: half / full },
    };
    let mut summary = String::new();
    for (j, m) in out.m_epsilon.iter().enumerate() {
        let _ = writeln!(summary, "y{} = {m}", j + 1);
    }
    let _ = write!(summary, "mean defect {full:.3e} at eps = {eps}, ratio at eps/2 = {:.4}", half / full);
    Artifact::json(&out, summary)
}

#[derive(Serialize)]
struct EquilibriumEntry {
    x: Vec<f64>,
    state: Vec<f64>,
    residual: f64,
    reduced_eigenvalues: Vec<Eigenvalue>,
    full_eigenvalues: Vec<Eigenvalue>,
    planar: Option<PlanarClassification>,
}

#[derive(Serialize)]
struct EquilibriaOutput {
    epsilon: f64,
    mode: &'static str,
    dedup_radius: f64,
    starts: usize,
    failed_starts: usize,
    equilibria: Vec<EquilibriumEntry>,
}

fn run_equilibria(ctx: &Context_) -> Outcome_<Artifact> {
    let sys = &ctx.file.system;
    let rs = reduce(sys);
    let eps = ctx.config.epsilon;
    let set = find_equilibria(&rs, &ctx.file.regions.k_tilde, &EquilibriumOptions::default()).runtime()?;
    let mut entries = Vec::new();
    for e in &set.points {
        let y = rs.m0_values(&e.x).runtime()?;
        let j = sys.full_jacobian(&e.x, &y, eps).runtime()?;
        entries.push(EquilibriumEntry {
            state: e.x.iter().chain(&y).copied().collect(),
            x: e.x.clone(),
            residual: e.residual,
            reduced_eigenvalues: e.eigenvalues.clone(),
            full_eigenvalues: eigenvalues(&j),
            planar: trace_det_classify(&j),
        });
    }
    let mut summary = format!("{} equilibria in Ktilde", entries.len());
    for e in &entries {
        let _ = write!(summary, "\n{}", fmt_point(&e.x));
        if let Some(p) = &e.planar {
            let _ = write!(summary, " {}", serde_json::to_value(p.class).unwrap().as_str().unwrap_or("?"));
        }
    }
    let out = EquilibriaOutput { epsilon: eps, mode: set.mode, dedup_radius: set.dedup_radius, starts: set.starts, failed_starts: set.failed_starts, equilibria: entries };
    Artifact::json(&out, summary)
}

#[derive(Serialize)]
struct OrthantResult {
    consistent: bool,
    sigma: Option<Vec<i8>>,
    mixed_entry: Option<(usize, usize)>,
}

fn orthant(p: &SignPattern) -> OrthantResult {
    match orthant_consistency(p) {
        Ok(sigma) => OrthantResult { consistent: sigma.is_some(), sigma, mixed_entry: None },
        Err(MonotoneError::MixedEntry { row, col }) => OrthantResult { consistent: false, sigma: None, mixed_entry: Some((row, col)) },
    }
}

#[derive(Serialize)]
struct ReducedOrder {
    pattern: SignPattern,
    #[serde(flatten)]
    orthant: OrthantResult,
}

#[derive(Serialize)]
struct EpdSummary {
    checked: usize,
    passed: usize,
    na: usize,
    failed: usize,
    t0: f64,
    t1: f64,
    tol: f64,
    min_entry: f64,
    errors: Vec<String>,
}

#[derive(Serialize)]
struct MonotoneOutput {
    pattern: SignPattern,
    #[serde(flatten)]
    orthant: OrthantResult,
    reduced: ReducedOrder,
    cooperativity: CooperativityReport,
    epd: EpdSummary,
    witnesses: Vec<EpdWitness>,
}

fn run_monotone(ctx: &Context_, samples: usize, ic_samples: usize, t0: f64, t1: f64) -> Outcome_<Artifact> {
    let sys = &ctx.file.system;
    let regions = &ctx.file.regions;
    if !(t0 > 0.0 && t1 > t0) {
        return Err(Failure::Invalid(anyhow!("need 0 < t0 < t1, got t0 = {t0}, t1 = {t1}")));
    }
    let rs = reduce(sys);
    let full_pattern = sign_pattern(&sys.full_jacobian_exprs(), &regions.d_tilde_closure(), sys.n(), samples).runtime()?;
    let reduced_pattern = sign_pattern(rs.jacobian_exprs(), &regions.k_tilde, sys.n(), samples).runtime()?;
    let cooperativity = cooperativity_check(&rs, &regions.k_tilde, samples).runtime()?;
    let opts = EpdOptions { t0, t1, ic_samples, atol: ctx.config.atol.min(1e-12), rtol: ctx.config.rtol.min(1e-10), ..EpdOptions::default() };
    let epd = eventual_positivity(&rs, &regions.k_tilde, &opts);
    let out = MonotoneOutput {
        orthant: orthant(&full_pattern),
        pattern: full_pattern,
        reduced: ReducedOrder { orthant: orthant(&reduced_pattern), pattern: reduced_pattern },
        cooperativity,
        epd: EpdSummary {
            checked: epd.checked,
            passed: epd.passed,
            na: epd.na,
            failed: epd.failed,
            t0: epd.t0,
            t1: epd.t1,
            tol: epd.tol,
            min_entry: epd.min_entry,
            errors: epd.errors,
        },
        witnesses: epd.witnesses,
    };
    let summary = format!(
        "full system orthant-consistent: {}\nreduced system orthant-consistent: {}\ncooperativity sufficient condition: {}\neventual positivity: {}/{} passed, {} not applicable",
        out.orthant.consistent,
        out.reduced.orthant.consistent,
        out.cooperativity.passed,
        out.epd.passed,
        out.epd.checked,
        out.epd.na
    );
    Artifact::json(&out, summary)
}

fn csv(traj: &Trajectory, n: usize, m: usize) -> String {
    let mut s = String::from("t");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    for j in 1..=m {
        let _ = write!(s, ",y{j}");
    }
    s.push('\n');
    for (t, z) in traj.iter() {
        let _ = write!(s, "{t}");
        for v in z {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

fn run_simulate(ctx: &Context_, ic: &[f64], reduced: bool) -> Outcome_<Artifact> {
    let sys = &ctx.file.system;
    let regions = &ctx.file.regions;
    let cfg = &ctx.config;
    let (traj, outcome) = if reduced {
        let rs = reduce(sys);
        let traj = integrate_reduced(&rs, ic, cfg, Some(&regions.k_tilde)).invalid()?;
        let eq: Vec<Vec<f64>> = find_equilibria(&rs, &regions.k_tilde, &EquilibriumOptions::default()).runtime()?.points.into_iter().map(|e| e.x).collect();
        let outcome = classify(&traj, &eq, cfg);
        (traj, outcome)
    } else {
        let traj = integrate_full(sys, cfg.epsilon, ic, cfg, Some(regions)).invalid()?;
        let eq = lifted_equilibria(sys, regions).runtime()?;
        let outcome = classify(&traj, &eq, cfg);
        (traj, outcome)
    };
    let body = csv(&traj, sys.n(), if reduced { 0 } else { sys.m() });
    let summary = format!(
        "{} samples to t = {}, ended {}, outcome {}",
        traj.len(),
        traj.last_time(),
        serde_json::to_string(traj.termination()).unwrap(),
        describe(&outcome)
    );
    Ok(Artifact { body, summary, rejected: false })
}

fn describe(o: &Outcome) -> String {
    match o {
        Outcome::Converged { equilibrium } => format!("converged to equilibrium {equilibrium}"),
        Outcome::LimitCycle { period } => format!("limit cycle with period {period:.6}"),
        Outcome::Escaped => "escaped".into(),
        Outcome::Undecided => "undecided".into(),
    }
}

fn run_phase(ctx: &Context_, x0: &[f64], offset: &[f64]) -> Outcome_<Artifact> {
    let sys = &ctx.file.system;
    let x0 = if x0.is_empty() { ctx.file.regions.k.center() } else { x0.to_vec() };
    let offset = if offset.is_empty() {
        let mut o = vec![0.0; sys.m()];
        o[0] = 0.1;
        o
    } else {
        offset.to_vec()
    };
    let est = asymptotic_phase_estimate(sys, ctx.config.epsilon, &x0, &offset, &ctx.config).invalid()?;
    let summary = format!("rate {:.6} over [{:.4}, {:.4}] from {} samples, r^2 = {:.6}", est.rate, est.window.0, est.window.1, est.points, est.r_squared);
    Artifact::json(&est, summary)
}

fn run_census(ctx: &Context_, choice: &RegionChoice) -> Outcome_<Artifact> {
    let (regions, _) = regions_for(ctx, choice)?;
    let cfg = &ctx.config;
    let c = basin_census(&ctx.file.system, &regions, cfg.epsilon, cfg.samples, cfg.seed, cfg, ctx.jobs).runtime()?;
    let o = &c.outcomes;
    let summary = format!(
        "{} samples: {} converged, {} limit cycle, {} escaped, {} undecided",
        c.n_samples, o.converged.total, o.limit_cycle, o.escaped, o.undecided
    );
    Artifact::json(&c, summary)
}

fn execute(cli: &Cli) -> Outcome_<bool> {
    let start = Instant::now();
    if cli.jobs > 0 {
        // Only fails when a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global();
    }
    let ctx = resolve(cli)?;
    let art = match &cli.command {
        Command::Check { regions, face_samples, .. } => run_check(&ctx, regions, *face_samples)?,
        Command::Reduce { samples, .. } => run_reduce(&ctx, *samples)?,
        Command::Manifold { order, .. } => run_manifold(&ctx, *order)?,
        Command::Equilibria { .. } => run_equilibria(&ctx)?,
        Command::Monotone { samples, ic_samples, t0, t1, .. } => run_monotone(&ctx, *samples, *ic_samples, *t0, *t1)?,
        Command::Simulate { ic, reduced, .. } => run_simulate(&ctx, ic, *reduced)?,
        Command::Phase { x0, offset, .. } => run_phase(&ctx, x0, offset)?,
        Command::Census { regions, .. } => run_census(&ctx, regions)?,
    };
    match &cli.out {
        Some(out) => {
            write_atomic(out, art.body.as_bytes()).runtime()?;
            let system_path = cli.command.system();
            let system_bytes = std::fs::read(system_path).with_context(|| format!("cannot re-read {}", system_path.display())).runtime()?;
            let manifest = Manifest {
                command: cli.command.name(),
                argv: std::env::args().collect(),
                system_file: system_path.display().to_string(),
                system_sha256: sha256_hex(&system_bytes),
                config: &ctx.config,
                seed: ctx.config.seed,
                jobs: cli.jobs,
                tool_version: env!("CARGO_PKG_VERSION"),
                output: out.display().to_string(),
                output_sha256: sha256_hex(art.body.as_bytes()),
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            write_atomic(&manifest_path(out), to_json(&manifest).runtime()?.as_bytes()).runtime()?;
            println!("{}", art.summary);
            println!("wrote {}", out.display());
        }
        None => {
            if matches!(cli.command, Command::Reduce { .. }) {
                println!("{}", art.summary);
            } else {
                print!("{}", art.body);
                if matches!(cli.command, Command::Simulate { .. }) {
                    eprintln!("{}", art.summary);
                }
            }
        }
    }
    Ok(!art.rejected)
}

/// Library errors already embed their sources in the message, so a cause
/// that the previous link quotes verbatim is dropped.
fn render(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if parts.last().is_some_and(|p| p.contains(&text)) {
            continue;
        }
        parts.push(text);
    }
    parts.join(": ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(2)
        }
    }
}
