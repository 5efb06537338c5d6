//! Command-line front end: solve an instance file, run benchmark suites,
//! or run the self-verification property suite.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sdcut::bench::{run_bench, write_csv, BenchConfig, Suite};
use sdcut::io::load_instance;
use sdcut::linalg::StructureHint;
use sdcut::solvers::parse_config_file;
use sdcut::verify::run_verify;
use sdcut::{relax, solve_relaxed, Error, SolveOptions, SolverKind};

#[derive(Parser)]
#[command(name = "sdcut", about = "Binary quadratic programs via a regularized semidefinite relaxation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file and print bounds.
    Solve(SolveArgs),
    /// Run a benchmark suite and write a CSV.
    Bench(BenchArgs),
    /// Run the brute-force/finite-difference property suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Instance file path.
    instance: PathBuf,
    /// Solver: qn (quasi-Newton) or sn (smoothing Newton).
    #[arg(long, default_value = "qn")]
    solver: String,
    /// Regularization parameter γ > 0 (applied after normalization).
    #[arg(long, default_value_t = 1e3)]
    gamma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stopping tolerance on the relative dual change.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Randomized rounding samples.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// key=value config file; flags override file entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the full result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// bisection-dense, bisection-sparse or matching.
    #[arg(long)]
    suite: String,
    /// Comma-separated sizes (graph nodes; source counts for matching).
    #[arg(long, value_delimiter = ',', default_value = "200")]
    sizes: Vec<usize>,
    /// Random instances per size.
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 1e3)]
    gamma: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-instance timeout in minutes.
    #[arg(long, default_value_t = 10.0)]
    timeout_min: f64,
    /// Suite worker threads (also SDCUT_BENCH_THREADS).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 12)]
    n_max: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Serialize)]
struct ResultDoc {
    instance: String,
    n: usize,
    m: usize,
    solver: SolverKind,
    gamma: f64,
    termination: String,
    iterations: usize,
    dual_objective: f64,
    lower_bound: f64,
    upper_bound: f64,
    rank: usize,
    wall_time_s: f64,
    samples_used: usize,
    infeasible_skipped: usize,
    best_x: Vec<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode, Error> {
    if args.gamma <= 0.0 || !args.gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("--gamma must be > 0, got {}", args.gamma)));
    }
    if args.samples == 0 {
        return Err(Error::InvalidArgument("--samples must be >= 1".into()));
    }
    let solver: SolverKind = args.solver.parse()?;
    let mut opts = SolveOptions {
        solver,
        gamma: args.gamma,
        samples: args.samples,
        seed: args.seed,
        ..Default::default()
    };
    if let Some(path) = &args.config {
        for (key, value) in parse_config_file(path)? {
            apply_config(&mut opts, &key, &value)?;
        }
    }
    if let Some(tol) = args.tol {
        opts.qn.tol = tol;
        opts.sn.tol = tol;
    }
    if let Some(mi) = args.max_iters {
        opts.qn.max_iters = mi;
        opts.sn.max_iters = mi;
    }

    let bqp = load_instance(&args.instance)?;
    let p = relax(&bqp, opts.gamma)?;
    if opts.solver == SolverKind::Sn && p.structure != StructureHint::Dense && p.dim() > 500 {
        eprintln!(
            "warning: the smoothing Newton solver needs a full dense factorization each \
             iteration; the quasi-Newton solver exploits sparse structure and is recommended \
             at this size (n = {})",
            p.dim()
        );
    }
    let report = solve_relaxed(&bqp, &p, &opts)?;

    println!(
        "instance: {} (n = {}, m = {}, family = {:?})",
        args.instance.display(),
        bqp.n,
        p.num_constraints(),
        bqp.family
    );
    println!("solver: {}  gamma: {:e}  seed: {}", opts.solver, opts.gamma, opts.seed);
    println!(
        "termination: {} after {} iterations ({} dual evaluations, {:.3}s)",
        report.solve.termination,
        report.solve.iterations,
        report.solve.dual_evals,
        report.solve.wall_time.as_secs_f64()
    );
    println!("dual objective (normalized): {:.9}", report.solve.d_star);
    println!("u* norm: {:.6e}  rank(X*): {}", report.solve.u_star.norm(), report.rank);
    println!(
        "rounding: best of {} samples ({} infeasible skipped)",
        report.rounding.samples_used, report.rounding.infeasible_skipped
    );
    println!("upper bound: {:.9}", report.upper);
    println!("lower bound: {:.9}", report.lower);

    if let Some(out) = &args.out {
        let doc = ResultDoc {
            instance: args.instance.display().to_string(),
            n: bqp.n,
            m: p.num_constraints(),
            solver: opts.solver,
            gamma: opts.gamma,
            termination: report.solve.termination.to_string(),
            iterations: report.solve.iterations,
            dual_objective: report.solve.d_star,
            lower_bound: report.lower,
            upper_bound: report.upper,
            rank: report.rank,
            wall_time_s: report.solve.wall_time.as_secs_f64(),
            samples_used: report.rounding.samples_used,
            infeasible_skipped: report.rounding.infeasible_skipped,
            best_x: report.rounding.best_x.iter().copied().collect(),
        };
        std::fs::write(out, serde_json::to_string_pretty(&doc).expect("serializable"))?;
    }
    Ok(if report.solve.converged() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn apply_config(opts: &mut SolveOptions, key: &str, value: &str) -> Result<(), Error> {
    let bad = |k: &str, v: &str| Error::InvalidArgument(format!("bad config value for {k}: {v}"));
    match key {
        "solver" => opts.solver = value.parse()?,
        "gamma" => {
            opts.gamma = value.parse().map_err(|_| bad(key, value))?;
            if opts.gamma <= 0.0 {
                return Err(Error::InvalidArgument("gamma must be > 0".into()));
            }
        }
        "samples" => opts.samples = value.parse().map_err(|_| bad(key, value))?,
        "seed" => opts.seed = value.parse().map_err(|_| bad(key, value))?,
        _ => {
            let known_qn = opts.qn.set(key, value)?;
            let known_sn = opts.sn.set(key, value)?;
            if !known_qn && !known_sn {
                return Err(Error::InvalidArgument(format!("unknown config key {key:?}")));
            }
        }
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode, Error> {
    if args.gamma <= 0.0 || !args.gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("--gamma must be > 0, got {}", args.gamma)));
    }
    let suite: Suite = args.suite.parse()?;
    let cfg = BenchConfig {
        suite,
        sizes: args.sizes,
        seeds: args.seeds,
        gamma: args.gamma,
        samples: args.samples,
        base_seed: args.seed,
        timeout: Duration::from_secs_f64(args.timeout_min * 60.0),
        threads: args.threads,
        ..Default::default()
    };
    let rows = run_bench(&cfg)?;
    let mut file = std::fs::File::create(&args.out)?;
    write_csv(&rows, &mut file)?;
    println!("{} rows -> {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let report = run_verify(args.n_max, args.trials, args.seed)?;
    report.print(&mut std::io::stdout())?;
    Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
