//! `korteweg-lab`: runs the numerical studies from TOML experiment configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use korteweg_lab::config::load;
use korteweg_lab::{exit, parallel, run_study, LabError, OutputDir, Study};

#[derive(Debug, Parser)]
#[command(name = "korteweg-lab", version, about = "Numerical laboratory for the Euler-Korteweg system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single run of the configured system.
    Simulate(RunArgs),
    /// Mass, momentum and energy conservation with the energy-drift order.
    EnergyBalance(RunArgs),
    /// Relative-energy stability against perturbed initial data.
    WeakStrong(RunArgs),
    /// Vanishing-capillarity rate (Set1 or Set2).
    Capillarity(RunArgs),
    /// Large-friction rate against the Cahn-Hilliard lift.
    Friction(RunArgs),
    /// Space-time mollification checks.
    MollifyCheck(RunArgs),
    /// Cahn-Hilliard spinodal growth rates and free-energy decay.
    Spinodal(RunArgs),
    /// Parse and validate a config without running anything.
    ValidateConfig(ValidateArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Override a config value, e.g. `--set grid.points=128`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory (default: `experiment.output_dir` or `out/<study>`).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Worker threads for independent runs (default: all cores;
    /// KORTEWEG_LAB_THREADS takes precedence).
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write gnuplot scripts next to the CSV files.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Validate for this study instead of the one implied by the config.
    #[arg(long, value_parser = parse_study)]
    study: Option<Study>,
}

fn parse_study(s: &str) -> Result<Study, String> {
    Study::ALL
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| format!("unknown study `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn run(command: Command) -> Result<i32, LabError> {
    let (study, args) = match command {
        Command::ValidateConfig(args) => return validate(&args),
        Command::Simulate(a) => (Study::Simulate, a),
        Command::EnergyBalance(a) => (Study::EnergyBalance, a),
        Command::WeakStrong(a) => (Study::WeakStrong, a),
        Command::Capillarity(a) => (Study::Capillarity, a),
        Command::Friction(a) => (Study::Friction, a),
        Command::MollifyCheck(a) => (Study::MollifyCheck, a),
        Command::Spinodal(a) => (Study::Spinodal, a),
    };
    let cfg = load(&args.config.config, &args.config.overrides)?;
    cfg.validate(study)?;
    let root = args.output.clone().unwrap_or_else(|| cfg.output_dir(study));
    let out = OutputDir::prepare(&root, args.force)?.with_plots(args.gnuplot);
    out.write_text("resolved.toml", &cfg.to_toml())?;
    out.write_text("overrides.txt", &overrides_text(&args.config.overrides))?;
    let jobs = parallel::resolve_jobs(args.jobs);
    log::info!("{}: writing to {} with {jobs} worker(s)", study.name(), root.display());

    let report = run_study(study, &cfg, &out, jobs)?;
    let mut passed = true;
    for check in report.checks() {
        passed &= check.passed;
        println!("{} {}: {}", if check.passed { "PASS" } else { "FAIL" }, check.name, check.detail);
    }
    Ok(if passed { exit::SUCCESS } else { exit::CHECK_FAILED })
}

fn overrides_text(overrides: &[String]) -> String {
    overrides.iter().map(|o| format!("{o}\n")).collect()
}

fn validate(args: &ValidateArgs) -> Result<i32, LabError> {
    let cfg = load(&args.config.config, &args.config.overrides)?;
    let study = args.study.unwrap_or_else(|| implied_study(&cfg, &args.config.config));
    cfg.validate(study)?;
    println!("{}: valid for {}", args.config.config.display(), study.name());
    print!("{}", cfg.describe());
    Ok(exit::SUCCESS)
}

/// The study a config is written for: the one whose name the file stem
/// starts with, else the most specific one its experiment section implies.
fn implied_study(cfg: &korteweg_lab::ExperimentConfig, path: &Path) -> Study {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().replace('_', "-"))
        .unwrap_or_default();
    if let Some(s) = Study::ALL.into_iter().find(|s| stem.starts_with(s.name())) {
        return s;
    }
    let e = &cfg.experiment;
    if e.setting.is_some() {
        Study::Capillarity
    } else if !e.amplitudes.is_empty() {
        Study::WeakStrong
    } else {
        Study::Simulate
    }
}
