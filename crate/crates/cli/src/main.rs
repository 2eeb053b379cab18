//! Command-line front end: environment generation, online/offline runs,
//! invariant sweeps, and coverage reports.
//!
//! Exit codes: 0 success, 1 validation failure (bad arguments, invalid
//! models, failed invariant suites), 2 I/O errors.
//!
//! Option precedence for runs: command-line flags override values from
//! `--config` (a JSON object with the same field names); anything missing
//! falls back to built-in defaults.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lowrank_rl::harness::experiment::{
    read_env, read_policy, write_env, AlgorithmSpec, BehaviorSpec,
    ExperimentSpec,
};
use lowrank_rl::harness::{generate_env, run_suite, EnvKind, EnvSpec, SuiteKind};
use lowrank_rl::mdp::{LowRankMdp, Policy};
use lowrank_rl::models::ModelClass;
use lowrank_rl::rep_lcb::coverage_report;
use lowrank_rl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lowrank-rl",
    about = "Representation-learning RL experiments on low-rank MDPs",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark environment and its model class.
    GenEnv(GenEnvArgs),
    /// Run the online algorithm (or a bonus-free baseline) over seeds.
    RunUcb(RunUcbArgs),
    /// Run the offline algorithm over a grid of dataset sizes and seeds.
    RunLcb(RunLcbArgs),
    /// Run a seeded invariant sweep suite.
    CheckInvariants(CheckInvariantsArgs),
    /// Coverage report of a policy against a behavior policy.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct GenEnvArgs {
    /// latent_variable | block | comblock | random_lowrank
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 10)]
    num_states: usize,
    #[arg(long, default_value_t = 2)]
    num_actions: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    /// Candidates in the model class, truth included (comblock derives its
    /// own class from the lock length).
    #[arg(long, default_value_t = 16)]
    class_size: usize,
    #[arg(long, default_value_t = 6)]
    lock_length: usize,
    #[arg(long, default_value_t = 1.0)]
    stay_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    concentration: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_max: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_min: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Environment JSON output path.
    #[arg(long)]
    out: PathBuf,
    /// Model-class JSON output path (defaults to `<out>` with `.class.json`).
    #[arg(long)]
    class_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunUcbArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    class: PathBuf,
    /// JSON file with default run options (flags override it).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    c_alpha: Option<f64>,
    #[arg(long)]
    c_lambda: Option<f64>,
    /// Repeatable: one run per seed.
    #[arg(long = "seed", required = true)]
    seeds: Vec<u64>,
    /// Bonus-free epsilon-greedy control instead of the bonus-driven run.
    #[arg(long)]
    baseline_epsilon: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for per-seed CSVs, aggregate, and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunLcbArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    class: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Behavior policy: "uniform", "mix-opt:<w>", "avoid-opt:<eps>", or a
    /// policy JSON path.
    #[arg(long)]
    behavior: String,
    /// Repeatable dataset sizes, e.g. `--n 500 --n 2000 --n 8000`.
    #[arg(long = "n", required = true)]
    n_grid: Vec<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    c_alpha: Option<f64>,
    #[arg(long)]
    c_lambda: Option<f64>,
    #[arg(long = "seed", required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckInvariantsArgs {
    /// core | mle | ucb | lcb
    #[arg(long)]
    suite: String,
    /// Number of seeded instances per check.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

#[derive(Args)]
struct CoverageArgs {
    #[arg(long)]
    env: PathBuf,
    /// Comparator policy: "uniform", "optimal", or a policy JSON path.
    #[arg(long)]
    policy: String,
    /// Behavior policy: "uniform", "mix-opt:<w>", "avoid-opt:<eps>", or a
    /// policy JSON path.
    #[arg(long)]
    behavior: String,
}

/// Optional run defaults loaded from `--config`.
#[derive(Debug, Default, serde::Deserialize)]
struct FileConfig {
    episodes: Option<usize>,
    delta: Option<f64>,
    c_alpha: Option<f64>,
    c_lambda: Option<f64>,
    workers: Option<usize>,
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.clone(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(p.clone(), e))
        }
    }
}

fn parse_env_kind(kind: &str) -> Result<EnvKind> {
    match kind {
        "latent_variable" => Ok(EnvKind::LatentVariable),
        "block" => Ok(EnvKind::Block),
        "comblock" => Ok(EnvKind::Comblock),
        "random_lowrank" => Ok(EnvKind::RandomLowRank),
        other => Err(Error::InvalidConfig(format!(
            "unknown env kind {other:?} (latent_variable|block|comblock|random_lowrank)"
        ))),
    }
}

fn parse_behavior(text: &str) -> Result<BehaviorParse> {
    if text == "uniform" {
        return Ok(BehaviorParse::Spec(BehaviorSpec::Uniform));
    }
    if let Some(w) = text.strip_prefix("mix-opt:") {
        let weight: f64 = w
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad mix-opt weight {w:?}")))?;
        return Ok(BehaviorParse::Spec(BehaviorSpec::MixOptimal { weight }));
    }
    if let Some(e) = text.strip_prefix("avoid-opt:") {
        let epsilon: f64 = e
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad avoid-opt epsilon {e:?}")))?;
        return Ok(BehaviorParse::Spec(BehaviorSpec::AvoidOptimal { epsilon }));
    }
    Ok(BehaviorParse::File(PathBuf::from(text)))
}

enum BehaviorParse {
    Spec(BehaviorSpec),
    File(PathBuf),
}

fn gen_env(args: GenEnvArgs) -> Result<()> {
    let kind = parse_env_kind(&args.kind)?;
    let spec = EnvSpec {
        kind,
        num_states: args.num_states,
        num_actions: args.num_actions,
        dim: args.dim,
        gamma: args.gamma,
        class_size: args.class_size,
        lock_length: args.lock_length,
        stay_prob: args.stay_prob,
        concentration: args.concentration,
        emission_concentration: args.concentration,
        noise_max: args.noise_max,
        noise_min: args.noise_min,
        seed: args.seed,
    };
    let spec = if kind == EnvKind::Comblock {
        EnvSpec {
            num_states: args.lock_length + 1,
            dim: args.lock_length + 1,
            ..spec
        }
    } else {
        spec
    };
    let generated = generate_env(&spec)?;
    write_env(&generated.env, &args.out)?;
    let class_path = args
        .class_out
        .unwrap_or_else(|| args.out.with_extension("class.json"));
    generated.class.to_json_file(&class_path)?;
    println!(
        "wrote environment to {} and class ({} candidates) to {}",
        args.out.display(),
        generated.class.len(),
        class_path.display()
    );
    if let Some(v) = generated.optimal_value {
        println!("analytic optimal value: {v}");
    }
    Ok(())
}

fn require_matching_class(env: &LowRankMdp, class: &ModelClass) -> Result<()> {
    if class.num_states() != env.num_states() || class.num_actions() != env.num_actions() {
        return Err(Error::InvalidConfig(format!(
            "class shape {}x{} does not match environment {}x{}",
            class.num_states(),
            class.num_actions(),
            env.num_states(),
            env.num_actions()
        )));
    }
    Ok(())
}

/// Rebuild an `EnvSpec` that round-trips through the already-generated
/// environment: runs load concrete env/class files, so the experiment runner
/// receives them via a pass-through spec.
fn run_ucb(args: RunUcbArgs) -> Result<()> {
    let env = read_env(&args.env)?;
    let class = ModelClass::from_json_file(&args.class)?;
    require_matching_class(&env, &class)?;
    let file = load_file_config(&args.config)?;
    let episodes = args.episodes.or(file.episodes).unwrap_or(2000);
    let delta = args.delta.or(file.delta).unwrap_or(0.1);
    let c_alpha = args.c_alpha.or(file.c_alpha).unwrap_or(1.0);
    let c_lambda = args.c_lambda.or(file.c_lambda).unwrap_or(1.0);
    let workers = args.workers.or(file.workers);

    let algorithm = match args.baseline_epsilon {
        None => AlgorithmSpec::RepUcb {
            episodes,
            delta,
            c_alpha,
            c_lambda,
        },
        Some(epsilon) if epsilon >= 1.0 => AlgorithmSpec::BaselineUniform {
            episodes,
            delta,
            c_lambda,
        },
        Some(epsilon) => AlgorithmSpec::BaselineEpsGreedy {
            episodes,
            delta,
            c_lambda,
            epsilon,
        },
    };
    let manifest = lowrank_rl::harness::experiment::run_loaded_experiment(
        &env,
        &class,
        &ExperimentSpec {
            env: placeholder_env_spec(&env),
            algorithm,
            seeds: args.seeds,
            workers,
        },
        &args.out,
    )?;
    println!(
        "wrote {} per-seed CSVs and {} under {}",
        manifest.per_seed_files.len(),
        manifest.aggregate_file,
        args.out.display()
    );
    Ok(())
}

fn run_lcb(args: RunLcbArgs) -> Result<()> {
    let env = read_env(&args.env)?;
    let class = ModelClass::from_json_file(&args.class)?;
    require_matching_class(&env, &class)?;
    let file = load_file_config(&args.config)?;
    let delta = args.delta.or(file.delta).unwrap_or(0.1);
    let c_alpha = args.c_alpha.or(file.c_alpha).unwrap_or(1.0);
    let c_lambda = args.c_lambda.or(file.c_lambda).unwrap_or(1.0);
    let behavior = match parse_behavior(&args.behavior)? {
        BehaviorParse::Spec(spec) => spec,
        BehaviorParse::File(path) => {
            // Concrete policies enter the experiment spec as an explicit
            // matrix via a wrapper file; load and convert.
            let policy = read_policy(&path)?;
            BehaviorSpec::Explicit {
                probs: policy_rows(&policy),
            }
        }
    };
    let manifest = lowrank_rl::harness::experiment::run_loaded_experiment(
        &env,
        &class,
        &ExperimentSpec {
            env: placeholder_env_spec(&env),
            algorithm: AlgorithmSpec::RepLcb {
                n_grid: args.n_grid,
                delta,
                c_alpha,
                c_lambda,
                behavior,
            },
            seeds: args.seeds,
            workers: args.workers.or(file.workers),
        },
        &args.out,
    )?;
    println!(
        "wrote {} per-seed CSVs and {} under {}",
        manifest.per_seed_files.len(),
        manifest.aggregate_file,
        args.out.display()
    );
    Ok(())
}

fn policy_rows(policy: &Policy) -> Vec<Vec<f64>> {
    (0..policy.num_states())
        .map(|s| (0..policy.num_actions()).map(|a| policy.prob(s, a)).collect())
        .collect()
}

fn check_invariants(args: CheckInvariantsArgs) -> Result<()> {
    let suite: SuiteKind = args
        .suite
        .parse()
        .map_err(Error::InvalidConfig)?;
    let report = run_suite(suite, args.seeds)?;
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        if c.detail.is_empty() {
            println!("{status} {}", c.name);
        } else {
            println!("{status} {} ({})", c.name, c.detail);
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "invariant suite {:?} failed",
            args.suite
        )))
    }
}

fn load_comparator(env: &LowRankMdp, text: &str) -> Result<Policy> {
    match text {
        "uniform" => Ok(Policy::uniform(env.num_states(), env.num_actions())),
        "optimal" => lowrank_rl::harness::experiment::optimal_policy(env, 1e-8),
        path => read_policy(Path::new(path)),
    }
}

fn coverage(args: CoverageArgs) -> Result<()> {
    let env = read_env(&args.env)?;
    let policy = load_comparator(&env, &args.policy)?;
    let behavior = match parse_behavior(&args.behavior)? {
        BehaviorParse::Spec(spec) => spec.build(&env, 1e-8)?,
        BehaviorParse::File(path) => read_policy(&path)?,
    };
    let report = coverage_report(&env, &policy, &behavior)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::json(args.env.clone(), e))?
    );
    Ok(())
}

fn placeholder_env_spec(env: &LowRankMdp) -> EnvSpec {
    // The loaded-environment path records geometry only; generation fields
    // are not used when the environment comes from a file.
    EnvSpec {
        kind: EnvKind::LatentVariable,
        num_states: env.num_states(),
        num_actions: env.num_actions(),
        dim: env.dim(),
        gamma: env.gamma(),
        class_size: 0,
        lock_length: 0,
        stay_prob: 1.0,
        concentration: 0.0,
        emission_concentration: 0.0,
        noise_max: 0.5,
        noise_min: 0.01,
        seed: 0,
    }
}

fn run() -> Result<()> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                e.print().ok();
                std::process::exit(1);
            }
            // --help / --version
            e.print().ok();
            std::process::exit(0);
        }
    };
    match cli.command {
        Command::GenEnv(args) => gen_env(args),
        Command::RunUcb(args) => run_ucb(args),
        Command::RunLcb(args) => run_lcb(args),
        Command::CheckInvariants(args) => check_invariants(args),
        Command::Coverage(args) => coverage(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
