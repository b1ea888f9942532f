//! The command chain. Every stage reads its inputs from the output directory
//! and writes its artifacts back there, so any stage can be re-run alone.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{analyze, AnalysisReport, TheoremCheck};
use rayon::prelude::*;

use crate::config::{RawConfig, RunConfig};
use crate::error::Error;
use crate::geometry::ConvexDomain;
use crate::io::{self, ChecksFile};
use crate::linearized::spectrum;
use crate::modulation::build_series;
use crate::oracle::{compare_solvers, oracle_run, Polyline};
use crate::solver::{estimate_extinction, make_initial, normalize_trajectory, run, ExtinctionEstimate, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    EstimateExtinction,
    Normalize,
    Modulate,
    Analyze,
    LinearSpectrum,
    OracleCompare,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Simulate,
        Stage::EstimateExtinction,
        Stage::Normalize,
        Stage::Modulate,
        Stage::Analyze,
        Stage::LinearSpectrum,
        Stage::OracleCompare,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::EstimateExtinction => "estimate-extinction",
            Stage::Normalize => "normalize",
            Stage::Modulate => "modulate",
            Stage::Analyze => "analyze",
            Stage::LinearSpectrum => "linear-spectrum",
            Stage::OracleCompare => "oracle-compare",
            Stage::Report => "report",
        }
    }

    pub fn from_name(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.name() == s)
    }

    /// 2 for the solver stages, 3 for modulation, 4 for analysis and reporting.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Simulate | Stage::EstimateExtinction | Stage::Normalize => 2,
            Stage::Modulate => 3,
            _ => 4,
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self.source {
            Error::Config { .. } => 1,
            _ => self.stage.exit_code(),
        }
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {}

/// Everything a stage may report back without failing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageOutcome {
    pub warnings: Vec<String>,
    /// Set by the report stage: named acceptance flags.
    pub acceptance: BTreeMap<String, bool>,
}

const CHECKPOINTS: &str = "checkpoints";
const NORMALIZED: &str = "normalized";
const EXTINCTION: &str = "extinction.json";
const STANDARD_DOMAIN: &str = "domain_standard.json";
const CHECKS: &str = "checks.json";

/// Largest `sqrt(2 (T - t)) kappa` (or its inverse) tolerated before warning.
pub const PINCHING_LIMIT: f64 = 10.0;

pub struct Pipeline<'a> {
    pub config: &'a RunConfig,
    pub out: PathBuf,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a RunConfig, out: Option<&Path>) -> Self {
        Pipeline {
            config,
            out: out.map_or_else(|| config.output.dir.clone(), Path::to_path_buf),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageOutcome, StageError> {
        let wrap = |source: Error| StageError { stage, source };
        fs::create_dir_all(&self.out).map_err(|e| wrap(e.into()))?;
        let outcome = match stage {
            Stage::Simulate => self.simulate(),
            Stage::EstimateExtinction => self.estimate(),
            Stage::Normalize => self.normalize(),
            Stage::Modulate => self.modulate(),
            Stage::Analyze => self.analyze(),
            Stage::LinearSpectrum => self.linear_spectrum(),
            Stage::OracleCompare => self.oracle_compare(),
            Stage::Report => self.report(),
        }
        .map_err(wrap)?;
        let acceptance = match io::read_json::<io::RunManifest>(&self.path(io::MANIFEST)) {
            Ok(m) if outcome.acceptance.is_empty() => m.acceptance,
            _ => outcome.acceptance.clone(),
        };
        io::write_manifest(&self.out, &self.config.run_id, &self.config.hash(), acceptance).map_err(wrap)?;
        Ok(outcome)
    }

    /// Runs every stage in order, stopping after `last` if given. Returns the
    /// outcomes so far; the report outcome (if reached) carries the acceptance flags.
    pub fn run_all(&self, last: Option<Stage>) -> Result<Vec<(Stage, StageOutcome)>, StageError> {
        let mut out = vec![];
        for stage in Stage::ALL {
            let enabled = match stage {
                Stage::LinearSpectrum => self.config.linear.enabled,
                Stage::OracleCompare => self.config.oracle.enabled,
                _ => true,
            };
            if enabled {
                out.push((stage, self.run_stage(stage)?));
            }
            if Some(stage) == last {
                break;
            }
        }
        Ok(out)
    }

    fn domain(&self) -> Result<ConvexDomain, Error> {
        self.config.domain.build()
    }

    fn simulate(&self) -> Result<StageOutcome, Error> {
        let cfg = self.config;
        let domain = self.domain()?;
        let s0 = make_initial(&domain, cfg.initial.r0, &cfg.perturbation(), cfg.initial.theta_window, cfg.solver.n)?;
        let traj = run(&s0, &domain, &cfg.solver.options)?;
        io::write_trajectory(&self.out, CHECKPOINTS, &traj)?;
        let mut outcome = StageOutcome::default();
        let contact = traj
            .samples
            .iter()
            .map(|s| s.r_lo.abs().max(s.r_hi.abs()))
            .fold(0.0, f64::max);
        if contact > 1e-6 {
            outcome.warnings.push(format!("largest boundary-condition residual {contact:.3e}"));
        }
        Ok(outcome)
    }

    fn raw_trajectory(&self) -> Result<Trajectory, Error> {
        io::read_trajectory(&self.out, CHECKPOINTS)
    }

    fn estimate(&self) -> Result<StageOutcome, Error> {
        let traj = self.raw_trajectory()?;
        let est = estimate_extinction(&traj, &self.domain()?)?;
        io::write_json(&self.path(EXTINCTION), &est)?;
        let mut outcome = StageOutcome::default();
        // pinching of sqrt(2 (T - t)) kappa along the run
        let mut worst = 1.0f64;
        for s in traj.samples.iter().filter(|s| s.t < est.t_ext) {
            let scale = (2.0 * (est.t_ext - s.t)).sqrt();
            worst = worst.max(scale * s.kappa_max).max(1.0 / (scale * s.kappa_min));
        }
        if worst >= PINCHING_LIMIT {
            outcome.warnings.push(format!("curvature pinching constant {worst:.3} >= {PINCHING_LIMIT}"));
        }
        Ok(outcome)
    }

    fn extinction(&self) -> Result<ExtinctionEstimate, Error> {
        io::read_json(&self.path(EXTINCTION))
    }

    fn normalize(&self) -> Result<StageOutcome, Error> {
        let traj = self.raw_trajectory()?;
        let est = self.extinction()?;
        let (standard, normalized) = normalize_trajectory(&traj, &self.domain()?, &est)?;
        io::write_json(&self.path(STANDARD_DOMAIN), &standard)?;
        io::write_checkpoints(&self.path(NORMALIZED), &normalized.checkpoints)?;
        Ok(StageOutcome::default())
    }

    fn normalized(&self) -> Result<(ConvexDomain, Trajectory), Error> {
        let domain = io::read_json(&self.path(STANDARD_DOMAIN))?;
        let traj = Trajectory {
            samples: vec![],
            checkpoints: io::read_checkpoints(&self.path(NORMALIZED))?,
            meta: io::read_json(&self.path("run.json"))?,
        };
        Ok((domain, traj))
    }

    fn modulate(&self) -> Result<StageOutcome, Error> {
        let (domain, traj) = self.normalized()?;
        let est = self.extinction()?;
        let series = build_series(&traj, &domain, est.t_ext, &self.config.modulation)?;
        io::write_modulation_csv(&self.path("modulation.csv"), &series)?;
        Ok(StageOutcome::default())
    }

    fn analyze(&self) -> Result<StageOutcome, Error> {
        let (domain, traj) = self.normalized()?;
        let est = self.extinction()?;
        let series = io::read_modulation_csv(&self.path("modulation.csv"), est.t_ext)?;
        let report = analyze(&traj, &domain, &series, &self.config.analysis.options)?;
        io::write_analysis_csv(&self.path("analysis.csv"), &report.rows)?;
        if let Some(id) = &report.identities {
            io::write_residuals_csv(&self.path("residuals.csv"), &id.rows)?;
        }
        fs::write(self.path("rates.txt"), io::rates_text(&report.checks))?;
        io::write_json(&self.path(CHECKS), &ChecksFile::of(&report))?;
        if self.config.output.plots {
            write_plots(&self.path("plots"), &report)?;
        }
        let mut outcome = StageOutcome::default();
        for c in &report.checks {
            if c.fit.is_none() && c.pass != Some(true) {
                outcome.warnings.push(format!("{}: {}", c.observable, c.note));
            }
        }
        Ok(outcome)
    }

    fn linear_spectrum(&self) -> Result<StageOutcome, Error> {
        let rows = spectrum(&self.config.linear.modes, &self.config.linear.options)?;
        io::write_spectrum_csv(&self.path("spectrum.csv"), &rows)?;
        Ok(StageOutcome::default())
    }

    fn oracle_compare(&self) -> Result<StageOutcome, Error> {
        let traj = self.raw_trajectory()?;
        let est = self.extinction()?;
        let domain = self.domain()?;
        let horizon = self.config.oracle.horizon * est.t_ext;
        let times: Vec<f64> = traj.checkpoints.iter().map(|c| c.t).filter(|&t| t <= horizon).collect();
        let opts = &self.config.oracle.options;
        let start = Polyline::from_arc(traj.checkpoints[0].t, &traj.checkpoints[0].arc, opts.m);
        let lines = oracle_run(&start, &domain, &times, opts)?;
        let cmp = compare_solvers(&traj, &lines, &times)?;
        io::write_oracle_csv(&self.path("oracle_traj.csv"), &lines)?;
        io::write_compare_csv(&self.path("compare.csv"), &cmp.rows)?;
        let mut outcome = StageOutcome::default();
        let worst = lines
            .iter()
            .map(|l| {
                let (a, b) = l.orthogonality_residuals();
                a.max(b)
            })
            .fold(0.0, f64::max);
        if worst > 1e-3 {
            outcome.warnings.push(format!("oracle orthogonality residual {worst:.3e} rad"));
        }
        Ok(outcome)
    }

    fn report(&self) -> Result<StageOutcome, Error> {
        let cfg = self.config;
        let checks: ChecksFile = io::read_json(&self.path(CHECKS))?;
        let mut flags = BTreeMap::new();
        let mut text = String::new();
        let gated = checks.checks.iter().filter(|_| cfg.analysis.gate_exponents);
        for c in gated.filter(|c| c.pass.is_some()) {
            flags.insert(format!("exponent.{}", c.observable), c.pass == Some(true));
        }
        let tol = cfg.analysis.identity_tol;
        match &checks.identities_settled {
            Some(m) => {
                flags.insert("identity.area_law".into(), m.area_law <= tol);
                flags.insert("identity.evolution".into(), m.worst_identity() <= tol);
                text.push_str(&format!(
                    "identity residuals after t >= T/4: area {:.3e}, evolution {:.3e} (tolerance {tol:.1e})\n",
                    m.area_law,
                    m.worst_identity()
                ));
            }
            None => text.push_str("identity residuals: too few checkpoints\n"),
        }
        if cfg.linear.enabled {
            let rows = io::read_spectrum_csv(&self.path("spectrum.csv"))?;
            for r in rows {
                let ok = (r.fitted - r.expected).abs() <= cfg.analysis.spectrum_tol * r.expected.abs();
                flags.insert(format!("spectrum.j{}", r.j), ok);
                text.push_str(&format!("linear mode {}: fitted {:.6} expected {:.1}\n", r.j, r.fitted, r.expected));
            }
        }
        if cfg.oracle.enabled {
            let rows = io::read_compare_csv(&self.path("compare.csv"))?;
            let max = rows.iter().map(|r| r.distance).fold(0.0, f64::max);
            flags.insert("oracle.hausdorff".into(), max <= cfg.analysis.oracle_tol);
            text.push_str(&format!("dual-solver Hausdorff distance: {max:.3e}\n"));
        }
        text.push_str("\nexponent fits\n");
        text.push_str(&io::rates_text(&checks.checks));
        text.push_str("\nacceptance\n");
        for (k, v) in &flags {
            text.push_str(&format!("{:<28} {}\n", k, if *v { "pass" } else { "FAIL" }));
        }
        fs::write(self.path("report.txt"), text)?;
        Ok(StageOutcome {
            warnings: vec![],
            acceptance: flags,
        })
    }
}

fn write_plots(dir: &Path, report: &AnalysisReport) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let columns: Vec<&str> = io::ANALYSIS_HEADER.split(',').collect();
    let col = |name: &str| columns.iter().position(|c| *c == name).map(|i| i + 1);
    // only series fitted against t~ are columns of analysis.csv
    fn source(c: &TheoremCheck) -> Option<&str> {
        match c.observable.as_str() {
            "kappa_dev" | "I0" | "I1" | "L2" | "C0" | "C1" | "C2" | "bc_scale" => Some(c.observable.as_str()),
            _ => None,
        }
    }
    for c in &report.checks {
        let (Some(y), Some(x)) = (source(c).and_then(col), col("t_tilde")) else {
            continue;
        };
        fs::write(dir.join(format!("{}.gp", c.observable)), io::plot_script(c, y, x))?;
    }
    Ok(())
}

/// Exit status of a full pipeline: 0 when every enabled acceptance flag holds,
/// 4 when one fails, or the failing stage's code.
pub fn pipeline_exit_code(result: &Result<Vec<(Stage, StageOutcome)>, StageError>, strict: bool) -> i32 {
    match result {
        Err(e) => e.exit_code(),
        Ok(outcomes) => {
            let failed = outcomes.iter().any(|(_, o)| o.acceptance.values().any(|v| !v));
            let warned = outcomes.iter().any(|(_, o)| !o.warnings.is_empty());
            if failed || (strict && warned) {
                4
            } else {
                0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub dir: PathBuf,
    pub exit_code: i32,
    pub message: String,
}

/// Upper bound on concurrent sweep runs, from `FBCSF_THREADS` (default: all cores).
pub fn sweep_threads() -> usize {
    std::env::var("FBCSF_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs one full pipeline per value of `key`, each in its own `out/<key>=<value>`.
pub fn sweep(base: &RawConfig, key: &str, values: &[String], out: &Path, strict: bool) -> Result<Vec<SweepRow>, Error> {
    let mut configs = vec![];
    for v in values {
        let mut raw = base.clone();
        raw.set(key, v)?;
        let dir = out.join(format!("{key}={v}"));
        raw.set("output.dir", &dir.to_string_lossy())?;
        configs.push((v.clone(), dir, RunConfig::from_raw(&raw)?));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        configs
            .par_iter()
            .map(|(value, dir, cfg)| {
                let result = Pipeline::new(cfg, Some(dir)).run_all(None);
                SweepRow {
                    value: value.clone(),
                    dir: dir.clone(),
                    exit_code: pipeline_exit_code(&result, strict),
                    message: result.err().map_or_else(String::new, |e| e.to_string()),
                }
            })
            .collect()
    });
    fs::create_dir_all(out)?;
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut w = csv::Writer::from_path(out.join("sweep.csv")).map_err(csv_err)?;
    w.write_record(["value", "exit_code", "message"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.value.as_str(), &r.exit_code.to_string(), &r.message]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}
