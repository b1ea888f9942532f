use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbcsf::config::{RawConfig, RunConfig};
use fbcsf::pipeline::{pipeline_exit_code, sweep, Pipeline, Stage, StageOutcome};

/// Free-boundary curve shortening flow: simulation, rescaling and rate analysis.
#[derive(Parser)]
#[command(name = "fbcsf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (flat `key = value` text).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Treat warnings as errors.
    #[arg(long)]
    strict: bool,
    /// Override a configuration key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the flow and write trajectory.csv and checkpoints.
    Simulate(Common),
    /// Fit the extinction time and point.
    EstimateExtinction(Common),
    /// Move the extinction point to the origin and the barrier normal to -e2.
    Normalize(Common),
    /// Compute the modulation parameters and rescaled time.
    Modulate(Common),
    /// Norms, residuals and exponent fits.
    Analyze(Common),
    /// Decay exponents of the linearized problem.
    LinearSpectrum(Common),
    /// Compare against the independent polygonal solver.
    OracleCompare(Common),
    /// Summarize acceptance flags; exits 4 if any fails.
    Report(Common),
    /// Run every stage in order.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Stop after this stage.
        #[arg(long, value_name = "NAME")]
        stage: Option<String>,
    },
    /// Run independent pipelines over values of one key (parallelism capped by FBCSF_THREADS).
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Key to vary.
        #[arg(long, value_name = "KEY")]
        param: String,
        /// One value per run. Repeatable.
        #[arg(long = "value", value_name = "VALUE", required = true)]
        values: Vec<String>,
    },
}

fn load(common: &Common) -> Result<RawConfig, String> {
    let text = fs::read_to_string(&common.config).map_err(|e| format!("{}: {e}", common.config.display()))?;
    let mut raw = RawConfig::parse(&text).map_err(|e| format!("{}: {e}", common.config.display()))?;
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| format!("--set expects key=value, got '{o}'"))?;
        raw.set(k.trim(), v).map_err(|e| format!("--set {o}: {e}"))?;
    }
    Ok(raw)
}

fn report_warnings(stage: Stage, outcome: &StageOutcome) {
    for w in &outcome.warnings {
        eprintln!("warning [{}]: {w}", stage.name());
    }
}

fn single(stage: Stage, config: &RunConfig, out: Option<&Path>, strict: bool) -> i32 {
    let pipeline = Pipeline::new(config, out);
    match pipeline.run_stage(stage) {
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Ok(outcome) => {
            report_warnings(stage, &outcome);
            if stage == Stage::Report {
                if let Ok(text) = fs::read_to_string(pipeline.out.join("report.txt")) {
                    print!("{text}");
                }
                if outcome.acceptance.values().any(|v| !v) {
                    return 4;
                }
            }
            if strict && !outcome.warnings.is_empty() {
                stage.exit_code()
            } else {
                0
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, stage) = match &cli.command {
        Command::Simulate(c) => (c, Some(Stage::Simulate)),
        Command::EstimateExtinction(c) => (c, Some(Stage::EstimateExtinction)),
        Command::Normalize(c) => (c, Some(Stage::Normalize)),
        Command::Modulate(c) => (c, Some(Stage::Modulate)),
        Command::Analyze(c) => (c, Some(Stage::Analyze)),
        Command::LinearSpectrum(c) => (c, Some(Stage::LinearSpectrum)),
        Command::OracleCompare(c) => (c, Some(Stage::OracleCompare)),
        Command::Report(c) => (c, Some(Stage::Report)),
        Command::Pipeline { common, .. } | Command::Sweep { common, .. } => (common, None),
    };
    let raw = match load(common) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let config = match RunConfig::from_raw(&raw) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(1);
        }
    };
    let out = common.out.as_deref();
    let code = match (&cli.command, stage) {
        (_, Some(stage)) => single(stage, &config, out, common.strict),
        (Command::Pipeline { stage, .. }, None) => {
            let last = match stage.as_deref().map(|s| (s, Stage::from_name(s))) {
                None => None,
                Some((_, Some(st))) => Some(st),
                Some((s, None)) => {
                    eprintln!("error: unknown stage '{s}'");
                    return ExitCode::from(1);
                }
            };
            let result = Pipeline::new(&config, out).run_all(last);
            match &result {
                Err(e) => eprintln!("error: {e}"),
                Ok(outcomes) => {
                    for (st, o) in outcomes {
                        report_warnings(*st, o);
                        for (k, v) in &o.acceptance {
                            println!("{k:<28} {}", if *v { "pass" } else { "FAIL" });
                        }
                    }
                }
            }
            pipeline_exit_code(&result, common.strict)
        }
        (Command::Sweep { param, values, .. }, None) => {
            let dir = out.map_or_else(|| config.output.dir.clone(), Path::to_path_buf);
            match sweep(&raw, param, values, &dir, common.strict) {
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
                Ok(rows) => {
                    for r in &rows {
                        println!("{param}={} exit {} {}", r.value, r.exit_code, r.message);
                    }
                    rows.iter().map(|r| r.exit_code).max().unwrap_or(0)
                }
            }
        }
        _ => unreachable!(),
    };
    ExitCode::from(code as u8)
}
