//! Command-line surface: competitive-ratio certification, ratio curves,
//! Monte Carlo simulation with dominance reports, and direct evaluation of
//! the bound functions.
//!
//! Exit codes: 0 on success or a passing check, 1 on usage errors, 2 when a
//! certification or dominance check fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prophet_core::hfn::{h_eval, HQuery};
use prophet_core::instance::{derived_stats, gen_hard_instance, Instance};
use prophet_core::matching::{
    brute_force_offline, check_lp, gamma_car, gamma_mam, hybrid_bound_check,
    mam_bound_components, normalize_regular, CarAlgorithm, HybridAlgorithm, MamAlgorithm,
    MatchingInstance, BRUTE_FORCE_PROFILE_CAP, HYBRID_TARGET, MAM_BETA0, MAM_BETA1,
};
use prophet_core::montecarlo::{
    dominance_report, estimate, EdgeKey, MatchAlgorithm, MatchRunner, PairKey, PolicyRunner,
};
use prophet_core::ratio::{certify_grid, gamma_eval, optimize_betas, GammaPoint, SSchedule, SearchSpec};
use prophet_core::secretary::{
    policy_constant, policy_main, policy_step, z_select, Policy, STEP_BETA,
};

/// Environment variable consulted for the default thread count.
const THREADS_ENV: &str = "PROPHET_KIT_THREADS";

#[derive(Parser)]
#[command(
    name = "prophet-kit",
    about = "Prophet secretary and matching algorithms with ratio certification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the ratio function on an epsilon grid with error accounting.
    Certify(CertifyArgs),
    /// Emit the MAM/CAR/hybrid ratio curves and the monotonicity curves.
    Curves(CurvesArgs),
    /// Run Monte Carlo trials and check the per-item/per-edge bounds.
    Simulate(SimulateArgs),
    /// Evaluate h_s(x).
    H(HArgs),
    /// Evaluate the ratio function at one point.
    Gamma(GammaArgs),
    /// Generate instances.
    Gen(GenArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Tier {
    Ci,
    Full,
}

#[derive(Args)]
struct CertifyArgs {
    /// ci: eps=1/200, target 0.66, s=2. full: eps=1/10000, the three-piece
    /// schedule, target 0.688 (0.686 with --s 2).
    #[arg(long, value_enum, default_value = "ci")]
    tier: Tier,
    /// Grid step; must divide 1. Overrides the tier default.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Certification target. Overrides the tier default.
    #[arg(long, allow_negative_numbers = true)]
    target: Option<f64>,
    /// Fixed invariant parameter s (conflicts with --schedule).
    #[arg(long)]
    s: Option<f64>,
    /// Named schedule: "paper" (s = 3 / 2.5 / 2 by x0 range).
    #[arg(long)]
    schedule: Option<String>,
    /// Worker threads (default: PROPHET_KIT_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Write the certificate JSON here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CurvesArgs {
    /// Grid step over x (and h).
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Output directory for ratios.csv and monotonicity.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyName {
    Constant,
    Step,
    Main,
    Mam,
    Car,
    Hybrid,
}

#[derive(Args)]
struct SimulateArgs {
    /// Which algorithm to run. constant/step/main read a prophet secretary
    /// instance; mam/car/hybrid read a matching instance.
    #[arg(long, value_enum)]
    policy: PolicyName,
    /// Instance file (JSON).
    #[arg(long, conflicts_with = "gen_hard")]
    input: Option<PathBuf>,
    /// Generate the hard family instead of reading a file: "n,p".
    #[arg(long)]
    gen_hard: Option<String>,
    /// Number of trials.
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    /// Master seed; trial t uses stream seed + t.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (default: PROPHET_KIT_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Invariant parameter for the main policy.
    #[arg(long, default_value_t = 2.0)]
    s: f64,
    /// Step threshold for the step policy.
    #[arg(long, default_value_t = STEP_BETA)]
    beta: f64,
    /// Write the trial report JSON here.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the dominance rows as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct HArgs {
    #[arg(long)]
    s: f64,
    #[arg(long)]
    x: f64,
}

#[derive(Args)]
struct GammaArgs {
    #[arg(long)]
    x0: f64,
    #[arg(long)]
    h0: f64,
    #[arg(long, default_value_t = 2.0)]
    s: f64,
    /// "b0,b1,b2"; omitted: search for the best betas.
    #[arg(long)]
    betas: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    kind: GenKind,
}

#[derive(Subcommand)]
enum GenKind {
    /// One large item (value 1/p w.p. p) plus n small i.i.d. items.
    Hard {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    // Usage problems exit 1; failed checks exit 2.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Certify(args) => cmd_certify(args),
        Command::Curves(args) => cmd_curves(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::H(args) => cmd_h(args),
        Command::Gamma(args) => cmd_gamma(args),
        Command::Gen(args) => cmd_gen(args),
    }
}

fn resolve_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
        .max(1)
}

fn write_or_print(path: &Option<PathBuf>, contents: &str, what: &str) -> Result<()> {
    match path {
        Some(path) => {
            std::fs::write(path, contents)
                .with_context(|| format!("writing {what} to {}", path.display()))?;
            println!("{what} written to {}", path.display());
        }
        None => println!("{contents}"),
    }
    Ok(())
}

fn cmd_certify(args: CertifyArgs) -> Result<ExitCode> {
    if args.s.is_some() && args.schedule.is_some() {
        bail!("--s conflicts with --schedule");
    }
    let schedule = if let Some(name) = &args.schedule {
        match name.as_str() {
            "paper" => SSchedule::paper(),
            other => bail!("unknown schedule {other:?} (expected \"paper\")"),
        }
    } else if let Some(s) = args.s {
        if !(s > 1.0) {
            bail!("--s must exceed 1");
        }
        SSchedule::constant(s)
    } else {
        match args.tier {
            Tier::Ci => SSchedule::constant(2.0),
            Tier::Full => SSchedule::paper(),
        }
    };
    let epsilon = args.epsilon.unwrap_or(match args.tier {
        Tier::Ci => 1.0 / 200.0,
        Tier::Full => 1.0 / 10_000.0,
    });
    let target = args.target.unwrap_or(match (args.tier, args.s) {
        (Tier::Ci, _) => 0.66,
        (Tier::Full, None) => 0.688,
        (Tier::Full, Some(_)) => 0.686,
    });
    let threads = resolve_threads(args.threads);
    println!(
        "# certify tier={} epsilon={epsilon} target={target} schedule=\"{}\" threads={threads}",
        match args.tier {
            Tier::Ci => "ci",
            Tier::Full => "full",
        },
        schedule.describe()
    );
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .ok();

    let started = std::time::Instant::now();
    let cert = certify_grid(epsilon, &schedule, target);
    println!(
        "cells={} passed={} elapsed={:.1}s",
        cert.cells,
        cert.passed,
        started.elapsed().as_secs_f64()
    );
    println!(
        "worst cell: x0={} h0={} s={} gamma={:.9} margin={:+.3e} betas=({:.6},{:.6},{:.6})",
        cert.worst.x0,
        cert.worst.h0,
        cert.worst.s,
        cert.worst.gamma,
        cert.worst.margin,
        cert.worst.betas.0,
        cert.worst.betas.1,
        cert.worst.betas.2,
    );
    if let Some(path) = &args.output {
        std::fs::write(path, cert.to_json())
            .with_context(|| format!("writing certificate to {}", path.display()))?;
        println!("certificate written to {}", path.display());
    }
    Ok(if cert.passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_curves(args: CurvesArgs) -> Result<ExitCode> {
    if !(args.step > 0.0 && args.step <= 1e-3) {
        bail!("--step must lie in (0, 1e-3]");
    }
    println!("# curves step={} out_dir={}", args.step, args.out_dir.display());
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let n = (1.0 / args.step).round() as usize;

    let mut ratios = String::from("x,gamma_mam,gamma_car,hybrid\n");
    for k in 0..=n {
        let x = k as f64 / n as f64;
        let mam = gamma_mam(x);
        let car = gamma_car(x);
        let hybrid = 0.8 * mam + 0.2 * car;
        ratios.push_str(&format!("{x},{mam},{car},{hybrid}\n"));
    }
    let ratios_path = args.out_dir.join("ratios.csv");
    std::fs::write(&ratios_path, ratios)
        .with_context(|| format!("writing {}", ratios_path.display()))?;

    let mut mono = String::from("h,f1,f2\n");
    for k in 0..=n {
        let h = k as f64 / n as f64;
        let (f1, f2) = mam_bound_components(h);
        mono.push_str(&format!("{h},{f1},{f2}\n"));
    }
    let mono_path = args.out_dir.join("monotonicity.csv");
    std::fs::write(&mono_path, mono)
        .with_context(|| format!("writing {}", mono_path.display()))?;

    let (passed, worst_x, worst) = hybrid_bound_check(args.step.min(1e-3));
    println!("curves written to {} and {}", ratios_path.display(), mono_path.display());
    println!("hybrid bound: min {worst:.6} at x={worst_x} (target {HYBRID_TARGET}): passed={passed}");
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn load_instance(args: &SimulateArgs) -> Result<Instance> {
    if let Some(spec) = &args.gen_hard {
        let (n, p) = spec
            .split_once(',')
            .and_then(|(n, p)| Some((n.trim().parse().ok()?, p.trim().parse().ok()?)))
            .ok_or_else(|| anyhow!("--gen-hard expects \"n,p\""))?;
        return gen_hard_instance(n, p).map_err(|e| anyhow!("generating instance: {e}"));
    }
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| anyhow!("--input or --gen-hard is required"))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Instance::parse(&text).map_err(|e| anyhow!("parsing {}: {e}", path.display()))
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let threads = resolve_threads(args.threads);
    println!(
        "# simulate policy={:?} trials={} seed={} threads={threads}",
        policy_label(args.policy),
        args.trials,
        args.seed
    );
    match args.policy {
        PolicyName::Constant | PolicyName::Step | PolicyName::Main => {
            simulate_secretary(&args, threads)
        }
        PolicyName::Mam | PolicyName::Car | PolicyName::Hybrid => {
            simulate_matching(&args, threads)
        }
    }
}

fn policy_label(p: PolicyName) -> &'static str {
    match p {
        PolicyName::Constant => "constant",
        PolicyName::Step => "step",
        PolicyName::Main => "main",
        PolicyName::Mam => "mam",
        PolicyName::Car => "car",
        PolicyName::Hybrid => "hybrid",
    }
}

fn simulate_secretary(args: &SimulateArgs, threads: usize) -> Result<ExitCode> {
    let inst = load_instance(args)?;
    let stats = derived_stats(&inst);
    let (policy, gamma_star): (Policy, Option<f64>) = match args.policy {
        PolicyName::Constant => (policy_constant(&stats), None),
        PolicyName::Step => {
            if !(0.0..=1.0).contains(&args.beta) {
                bail!("--beta must lie in [0, 1]");
            }
            (policy_step(&stats, args.beta), None)
        }
        PolicyName::Main => {
            let zt = z_select(&stats, args.s).map_err(|e| anyhow!("{e}"))?;
            let (betas, gamma) =
                optimize_betas(stats.x0(), zt.h0(), args.s, &SearchSpec::default());
            println!(
                "main policy: x0={:.6} h0={:.6} betas=({:.4},{:.4},{:.4}) gamma*={gamma:.6}",
                stats.x0(),
                zt.h0(),
                betas.0,
                betas.1,
                betas.2
            );
            (policy_main(&stats, &zt, betas), Some(gamma))
        }
        _ => unreachable!(),
    };

    let runner = PolicyRunner { inst: &inst, policy: &policy, prophet: stats.prophet() };
    let report = estimate(&runner, args.trials, args.seed, threads);

    // Per-pair theoretical bounds: the proven per-pair acceptance guarantee.
    let mut bounds = BTreeMap::new();
    match args.policy {
        PolicyName::Constant => {
            let factor = 1.0 - (-1.0f64).exp();
            for i in 0..stats.len() {
                for k in 0..stats.support_len(i) {
                    bounds.insert(PairKey { item: i, value_idx: k }, factor * stats.x(i, k));
                }
            }
        }
        PolicyName::Step => {
            // Exact closed-form acceptance probability under step rates.
            let h: f64 = (0..stats.len())
                .flat_map(|i| (0..stats.support_len(i)).map(move |k| (i, k)))
                .map(|(i, k)| (2.0 * stats.x(i, k) - stats.prob(i, k)).max(0.0))
                .sum();
            let beta = args.beta;
            let ia = (1.0 - (-h * beta).exp()) / h;
            let ib = ((-h * beta).exp() - (-(2.0 - h) + (2.0 - 2.0 * h) * beta).exp()) / (2.0 - h);
            for i in 0..stats.len() {
                for k in 0..stats.support_len(i) {
                    let rho = stats.rho(i, k);
                    let p = stats.prob(i, k);
                    let first = (2.0 * rho - 1.0).max(0.0);
                    bounds.insert(
                        PairKey { item: i, value_idx: k },
                        p * (first * ia + (2.0 * rho - first) * ib),
                    );
                }
            }
        }
        PolicyName::Main => {
            let gamma = gamma_star.expect("main policy computes gamma");
            for i in 0..stats.len() {
                for k in 0..stats.support_len(i) {
                    bounds.insert(PairKey { item: i, value_idx: k }, gamma * stats.x(i, k));
                }
            }
        }
        _ => unreachable!(),
    }
    let dom = dominance_report(&report, &bounds);
    println!(
        "trials={} value_ratio={:.6} (prophet {:.6}) wall={:.2}s",
        report.trials, report.value_ratio, report.benchmark, report.wall_seconds
    );
    println!("dominance: passed={} over {} keys", dom.passed, dom.rows.len());
    if let Some(path) = &args.output {
        write_or_print(&Some(path.clone()), &report.to_json(), "report")?;
    }
    if let Some(path) = &args.csv {
        write_or_print(&Some(path.clone()), &dom.to_csv(), "dominance csv")?;
    }
    Ok(if dom.passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn simulate_matching(args: &SimulateArgs, threads: usize) -> Result<ExitCode> {
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| anyhow!("matching policies require --input"))?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let inst = MatchingInstance::parse(&text).map_err(|e| anyhow!("parsing: {e}"))?;
    if let Ok(Err(violation)) = check_lp(&inst.graph, &inst.x) {
        bail!("input x is not LP-feasible: {violation}");
    }
    let (graph, x) = normalize_regular(&inst.graph, &inst.x);

    let benchmark = match brute_force_offline(&inst.graph) {
        Ok(value) => value,
        Err(_) => {
            let objective = inst.x.objective(&inst.graph);
            println!(
                "# offline enumeration exceeds {BRUTE_FORCE_PROFILE_CAP} profiles; \
                 using the LP objective {objective:.6} as benchmark"
            );
            objective
        }
    };

    let algorithm = match args.policy {
        PolicyName::Mam => MatchAlgorithm::Mam(MamAlgorithm::new(&graph, &x, MAM_BETA0, MAM_BETA1)),
        PolicyName::Car => MatchAlgorithm::Car(CarAlgorithm::new(&graph, &x)),
        PolicyName::Hybrid => MatchAlgorithm::Hybrid(HybridAlgorithm::new(&graph, &x)),
        _ => unreachable!(),
    };
    let runner = MatchRunner {
        algorithm,
        original_online: inst.graph.online_len(),
        original_offline: inst.graph.offline_len(),
        benchmark,
    };
    let report = estimate(&runner, args.trials, args.seed, threads);

    let mut bounds = BTreeMap::new();
    for i in 0..inst.graph.online_len() {
        for u in 0..inst.graph.offline_len() {
            for v in 0..inst.graph.types_len() {
                let xv = inst.x.get(i, u, v);
                if xv <= 0.0 {
                    continue;
                }
                let xu = x.x_u(u);
                let factor = match args.policy {
                    PolicyName::Mam => gamma_mam(xu),
                    PolicyName::Car => gamma_car(xu),
                    PolicyName::Hybrid => HYBRID_TARGET,
                    _ => unreachable!(),
                };
                bounds.insert(EdgeKey { i, u, v }, factor * xv);
            }
        }
    }
    let dom = dominance_report(&report, &bounds);
    println!(
        "trials={} matched_weight_ratio={:.6} (benchmark {:.6}) wall={:.2}s",
        report.trials, report.value_ratio, report.benchmark, report.wall_seconds
    );
    println!("dominance: passed={} over {} edges", dom.passed, dom.rows.len());
    if let Some(path) = &args.output {
        write_or_print(&Some(path.clone()), &report.to_json(), "report")?;
    }
    if let Some(path) = &args.csv {
        write_or_print(&Some(path.clone()), &dom.to_csv(), "dominance csv")?;
    }
    Ok(if dom.passed { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_h(args: HArgs) -> Result<ExitCode> {
    if !(args.s > 1.0) {
        bail!("--s must exceed 1");
    }
    if !(0.0..=1.0).contains(&args.x) {
        bail!("--x must lie in [0, 1]");
    }
    println!("# h s={} x={}", args.s, args.x);
    let value = h_eval(&HQuery::new(args.s, args.x));
    println!("h_{}({}) = {:.12}", args.s, args.x, value);
    Ok(ExitCode::SUCCESS)
}

fn cmd_gamma(args: GammaArgs) -> Result<ExitCode> {
    println!(
        "# gamma x0={} h0={} s={} betas={}",
        args.x0,
        args.h0,
        args.s,
        args.betas.as_deref().unwrap_or("(search)")
    );
    match &args.betas {
        Some(spec) => {
            let parts: Vec<f64> = spec
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| anyhow!("--betas expects \"b0,b1,b2\""))?;
            if parts.len() != 3 {
                bail!("--betas expects exactly three values");
            }
            let pt = GammaPoint::new(args.x0, args.h0, args.s, (parts[0], parts[1], parts[2]))
                .map_err(|e| anyhow!("{e}"))?;
            let value = gamma_eval(&pt).map_err(|e| anyhow!("{e}"))?;
            println!("gamma = {value:.12}");
        }
        None => {
            let (betas, value) =
                optimize_betas(args.x0, args.h0, args.s, &SearchSpec::default());
            println!(
                "best betas = ({:.6}, {:.6}, {:.6})  gamma = {value:.12}",
                betas.0, betas.1, betas.2
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode> {
    match args.kind {
        GenKind::Hard { n, p, output } => {
            if n == 0 {
                bail!("--n must be at least 1");
            }
            if !(p > 0.0 && p <= 1.0) {
                bail!("--p must lie in (0, 1]");
            }
            println!("# gen hard n={n} p={p}");
            let inst = gen_hard_instance(n, p).map_err(|e| anyhow!("{e}"))?;
            write_or_print(&output, &inst.to_json(), "instance")?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

