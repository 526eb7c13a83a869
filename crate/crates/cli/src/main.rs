use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safeloco_core::eval::{
    emit_trajectory_svg, evaluate_agent, run_ablation, run_episode, AblationPlan, EvalSetup, MeanPolicy, Trajectory,
};
use safeloco_core::trainer::{run_training, Agent, Mode};
use safeloco_core::world::Scenario;
use safeloco_core::{Error, Result, RunConfig};

const SEED_ENV: &str = "SAFELOCO_SEED";

#[derive(Parser, Debug)]
#[command(name = "safeloco", version, about = "Safe LiDAR navigation with constrained RL")]
struct Cli {
    /// Worker threads for environments and evaluation trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and write runs/<name>/{config.json,metrics.csv,ckpt_*}.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one scenario.
    Eval(EvalArgs),
    /// Train and evaluate every mode, writing table2.csv and table3.csv.
    Ablate(AblateArgs),
    /// Run one deterministic episode and dump the per-step trajectory CSV.
    Replay(ReplayArgs),
    /// Render a trajectory CSV over its scenario as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// Training scenario; repeat to build a mix.
    #[arg(long)]
    scenario: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Run name (defaults to the config's).
    #[arg(long)]
    name: Option<String>,
    /// Parent directory of the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint base path, e.g. runs/demo/ckpt_2000000 (extension optional).
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Config used for the environment (defaults to the run's config.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// LiDAR ring indices to blank out.
    #[arg(long = "mask-ring")]
    mask_ring: Vec<usize>,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment steps per mode.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    #[arg(long, default_value = "runs")]
    runs: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dump: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "mask-ring")]
    mask_ring: Vec<usize>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    /// Episode seed used to lay out the scenario's randomized obstacles.
    #[arg(long)]
    seed: Option<u64>,
    /// Legend label; the three training modes get their own colours.
    #[arg(long, default_value = "trajectory")]
    label: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Json(_) => 2,
        Error::Numerical(_) => 3,
        Error::MissingArtifact(_) => 4,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 4,
        _ => 1,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config_at(SEED_ENV, format!("`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Command-line seed, then `SAFELOCO_SEED`, then `fallback`.
fn resolve_seed(arg: Option<u64>, fallback: u64) -> Result<u64> {
    Ok(match arg {
        Some(s) => s,
        None => env_seed()?.unwrap_or(fallback),
    })
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn checkpoint_base(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

/// Explicit config, else the `config.json` saved next to the checkpoint, else defaults.
fn config_for_checkpoint(explicit: Option<&Path>, ckpt: &Path) -> Result<RunConfig> {
    if let Some(p) = explicit {
        return RunConfig::load(p);
    }
    let beside = ckpt.parent().map(|d| d.join("config.json"));
    match beside {
        Some(p) if p.exists() => RunConfig::load(&p),
        _ => Ok(RunConfig::default()),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = &a.mode {
        cfg.train.mode = Mode::parse(m)?;
    }
    if !a.scenario.is_empty() {
        cfg.train.scenarios = a.scenario.clone();
    }
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
    }
    if let Some(n) = a.name {
        cfg.run_name = n;
    }
    cfg.seed = resolve_seed(a.seed, cfg.seed)?;
    cfg.validate()?;
    let dir = a.out.join(&cfg.run_name);
    let outcome = run_training(&cfg, &dir, &mut |m| {
        log::info!(
            "step {} reward {:.4} J_C [{:.3} {:.3} {:.3}] success {:.2} level {} kl {:.4}",
            m.step,
            m.reward,
            m.j_c[0],
            m.j_c[1],
            m.j_c[2],
            m.success_rate,
            m.level,
            m.update.approx_kl
        )
    })?;
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

fn load_agent(ckpt: &Path, cfg: &RunConfig) -> Result<Agent> {
    let base = checkpoint_base(ckpt);
    let (agent, _) = Agent::load(&base, cfg.env.layout(), Some(&cfg.hash()))?;
    Ok(agent)
}

fn mode_label(ckpt: &Path) -> String {
    ckpt.parent()
        .and_then(|d| d.join("config.json").exists().then(|| RunConfig::load(&d.join("config.json")).ok()))
        .flatten()
        .map(|c| c.train.mode.to_string())
        .unwrap_or_else(|| "policy".into())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let base = checkpoint_base(&a.ckpt);
    let cfg = config_for_checkpoint(a.config.as_deref(), &base)?;
    let agent = load_agent(&base, &cfg)?;
    let scenario = Scenario::load(&a.scenario)?;
    let mut setup = EvalSetup::new(cfg.env.clone(), cfg.cbf, cfg.eval.level);
    setup.masked_rings = a.mask_ring.clone();
    let seed = resolve_seed(a.seed, cfg.eval.seed)?;
    let mut label = mode_label(&base);
    if !a.mask_ring.is_empty() {
        let rings: Vec<String> = a.mask_ring.iter().map(|r| r.to_string()).collect();
        label = format!("{label}_mask{}", rings.join("-"));
    }
    let trials = a.trials.unwrap_or(cfg.eval.trials);
    let (report, _) = evaluate_agent(&agent, &setup, &scenario, &label, trials, seed)?;
    let dir = a.out.join(&cfg.run_name);
    report.save(&dir)?;
    println!(
        "{} {}: success {:.3} t_unsafe {:.2}s t_uncomfortable {:.2}s over {} trials",
        report.scenario, report.mode, report.success_rate, report.mean_t_unsafe, report.mean_t_uncomfortable, report.n_trials
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.seed = resolve_seed(a.seed, cfg.seed)?;
    cfg.validate()?;
    let plan = AblationPlan {
        modes: Mode::ALL.to_vec(),
        budget: a.budget.unwrap_or(cfg.train.total_steps),
    };
    let reports = a.out.join(&cfg.run_name);
    let outcome = run_ablation(&cfg, &plan, &a.runs, &reports, &mut |msg| log::info!("{msg}"))?;
    print!("{}", outcome.table2_csv());
    print!("{}", outcome.table3_csv());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<()> {
    let base = checkpoint_base(&a.ckpt);
    let cfg = config_for_checkpoint(a.config.as_deref(), &base)?;
    let agent = load_agent(&base, &cfg)?;
    let scenario = Scenario::load(&a.scenario)?;
    let mut setup = EvalSetup::new(cfg.env.clone(), cfg.cbf, cfg.eval.level);
    setup.masked_rings = a.mask_ring;
    let seed = resolve_seed(a.seed, cfg.eval.seed)?;
    let traj = run_episode(&setup, &scenario, seed, &mut MeanPolicy(&agent))?;
    if let Some(dir) = a.dump.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    traj.save_csv(&a.dump)?;
    let s = traj.summary.unwrap_or_default();
    println!(
        "{} steps, success {}, collided {}, t_unsafe {:.2}s",
        s.length, s.success, s.collided, s.t_unsafe
    );
    Ok(())
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let scenario = Scenario::load(&a.scenario)?;
    let traj = Trajectory::load_csv(&a.traj, &scenario.name, cfg.env.dt)?;
    let seed = resolve_seed(a.seed, cfg.eval.seed)?;
    let mut env = safeloco_core::env::Env::new(cfg.env.clone(), cfg.cbf)?;
    env.reset(&scenario, seed, cfg.eval.level)?;
    emit_trajectory_svg(
        &a.out,
        env.world(),
        scenario.goal_region(),
        &[(a.label.as_str(), &traj)],
        cfg.env.unsafe_distance,
        cfg.env.comfort_distance,
    )?;
    println!("{}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(j) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::config_at("train.gamma", "bad")), 2);
        assert_eq!(exit_code(&Error::numerical("nan")), 3);
        assert_eq!(exit_code(&Error::MissingArtifact("ckpt".into())), 4);
        let nf = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(exit_code(&Error::Io(nf)), 4);
        assert_eq!(exit_code(&Error::usage("x")), 1);
    }

    #[test]
    fn checkpoint_extension_is_optional() {
        assert_eq!(checkpoint_base(Path::new("r/ckpt_5.json")), PathBuf::from("r/ckpt_5"));
        assert_eq!(checkpoint_base(Path::new("r/ckpt_5")), PathBuf::from("r/ckpt_5"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
