//! Run configuration: flat `key = value` lines with dotted section prefixes.
//!
//! ```text
//! # comment
//! domain.kind = disk
//! domain.params = 1.0
//! initial.r0 = 0.3
//! initial.perturbation = 0, 0.01, 0.01, 0.01
//! solver.n = 512
//! ```
//!
//! Unknown keys, duplicates and out-of-range values are rejected with the line
//! number. `domain.kind` is required; everything else has a default.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::analysis::{AnalysisOptions, SPECTRAL_HARMONICS};
use crate::error::{Error, Result};
use crate::geometry::{ConvexDomain, DomainKind, Frame};
use crate::linearized::LinearOptions;
use crate::modulation::{ModulationOptions, Multiplier, SigmaForm};
use crate::oracle::OracleOptions;
use crate::solver::SolverOptions;

const KEYS: &[&str] = &[
    "domain.kind",
    "domain.params",
    "domain.frame",
    "initial.r0",
    "initial.perturbation",
    "initial.theta_window",
    "initial.random_modes",
    "initial.random_amplitude",
    "solver.n",
    "solver.cfl",
    "solver.stop_angle_gap",
    "solver.stop_time_fraction",
    "solver.sample_stride",
    "solver.checkpoint_dtt",
    "solver.checkpoint_stride",
    "solver.max_steps",
    "solver.t_max",
    "solver.richardson",
    "modulation.multiplier",
    "modulation.sigma_form",
    "analysis.harmonics",
    "analysis.spectral_harmonics",
    "analysis.window",
    "analysis.margin",
    "analysis.curve_samples",
    "analysis.identity_tol",
    "analysis.spectrum_tol",
    "analysis.oracle_tol",
    "analysis.gate_exponents",
    "linear.enabled",
    "linear.modes",
    "linear.n",
    "linear.horizon",
    "linear.steps",
    "oracle.enabled",
    "oracle.m",
    "oracle.cfl",
    "oracle.horizon",
    "output.dir",
    "output.plots",
    "run.id",
    "seed",
];

/// Parsed `key = value` pairs with the line each came from (0 for overrides).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (usize, String)>,
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_err(line_no, format!("expected 'key = value', got '{content}'")))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(config_err(line_no, format!("unknown key '{key}'")));
            }
            if let Some((first, _)) = raw.entries.get(key) {
                return Err(config_err(line_no, format!("duplicate key '{key}' (first on line {first})")));
            }
            raw.entries.insert(key.to_string(), (line_no, value.trim().to_string()));
        }
        Ok(raw)
    }

    /// Replaces or adds a value, as from the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(config_err(0, format!("unknown key '{key}'")));
        }
        self.entries.insert(key.to_string(), (0, value.trim().to_string()));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }
}

fn parse_one<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| config_err(line, format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| parse_one(line, key, s.trim())).collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(config_err(line, format!("{key}: expected true or false, got '{v}'"))),
    }
}

struct Reader<'a> {
    raw: &'a RawConfig,
}

impl Reader<'_> {
    fn scalar<T: FromStr + PartialOrd + Copy + std::fmt::Display>(&self, key: &str, default: T, lo: T, hi: T) -> Result<T> {
        let Some((line, v)) = self.raw.get(key) else {
            return Ok(default);
        };
        let x: T = parse_one(line, key, v)?;
        if !(x >= lo && x <= hi) {
            return Err(config_err(line, format!("{key} = {x} is outside [{lo}, {hi}]")));
        }
        Ok(x)
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw.get(key) {
            Some((line, v)) => parse_list(line, key, v),
            None => Ok(default),
        }
    }

    fn pair(&self, key: &str) -> Result<Option<(usize, (f64, f64))>> {
        let Some((line, v)) = self.raw.get(key) else {
            return Ok(None);
        };
        let xs: Vec<f64> = parse_list(line, key, v)?;
        if xs.len() != 2 {
            return Err(config_err(line, format!("{key}: expected two numbers")));
        }
        Ok(Some((line, (xs[0], xs[1]))))
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw.get(key) {
            Some((line, v)) => parse_bool(line, key, v),
            None => Ok(default),
        }
    }

    fn line(&self, key: &str) -> usize {
        self.raw.get(key).map_or(0, |(l, _)| l)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainBlock {
    pub kind: DomainKind,
    pub params: Vec<f64>,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialBlock {
    pub r0: f64,
    pub perturbation: Vec<f64>,
    pub theta_window: Option<(f64, f64)>,
    /// Number of leading cosine modes that receive a seeded random coefficient.
    pub random_modes: usize,
    pub random_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverBlock {
    /// Grid intervals; validated by the solver (N >= 16), not here.
    pub n: usize,
    pub options: SolverOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisBlock {
    pub options: AnalysisOptions,
    /// Largest settled identity residual accepted.
    pub identity_tol: f64,
    /// Relative tolerance on the linear spectrum exponents.
    pub spectrum_tol: f64,
    /// Largest dual-solver Hausdorff distance accepted.
    pub oracle_tol: f64,
    /// Whether the exponent fits count toward acceptance. Off for exact
    /// solutions, whose deviations are pure discretization error.
    pub gate_exponents: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearBlock {
    pub enabled: bool,
    pub modes: Vec<usize>,
    pub options: LinearOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBlock {
    pub enabled: bool,
    pub options: OracleOptions,
    /// Comparison horizon as a fraction of the extinction time.
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputBlock {
    pub dir: PathBuf,
    /// Emit gnuplot scripts next to the fitted series.
    pub plots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub domain: DomainBlock,
    pub initial: InitialBlock,
    pub solver: SolverBlock,
    pub modulation: ModulationOptions,
    pub analysis: AnalysisBlock,
    pub linear: LinearBlock,
    pub oracle: OracleBlock,
    pub output: OutputBlock,
    pub seed: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_raw(&RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let r = Reader { raw };
        let (kind_line, kind) = raw
            .get("domain.kind")
            .ok_or_else(|| config_err(0, "missing domain block (domain.kind is required)"))?;
        let kind = DomainKind::from_str(kind).map_err(|e| config_err(kind_line, e.to_string()))?;
        let params: Vec<f64> = r.list("domain.params", vec![])?;
        let frame = match raw.get("domain.frame") {
            None => Frame::identity(),
            Some((line, v)) => {
                let xs: Vec<f64> = parse_list(line, "domain.frame", v)?;
                if xs.len() != 3 {
                    return Err(config_err(line, "domain.frame: expected rotation, tx, ty"));
                }
                Frame {
                    rotation: xs[0],
                    translation: [xs[1], xs[2]],
                }
            }
        };
        let domain = DomainBlock { kind, params, frame };
        // surface domain errors at the line that declared the parameters
        domain
            .build()
            .map_err(|e| config_err(r.line("domain.params").max(kind_line), e.to_string()))?;

        let theta_window = match r.pair("initial.theta_window")? {
            Some((line, (a, b))) if !(a < b) => {
                return Err(config_err(line, "initial.theta_window: expected lo < hi"));
            }
            other => other.map(|(_, w)| w),
        };
        let initial = InitialBlock {
            r0: r.scalar("initial.r0", 0.3, f64::MIN_POSITIVE, 1e6)?,
            perturbation: r.list("initial.perturbation", vec![])?,
            theta_window,
            random_modes: r.scalar("initial.random_modes", 0, 0, 64)?,
            random_amplitude: r.scalar("initial.random_amplitude", 0.0, 0.0, 1.0)?,
        };

        let d = SolverOptions::default();
        let run_id = raw.get("run.id").map_or("run", |(_, v)| v).to_string();
        let t_max = match raw.get("solver.t_max") {
            None => None,
            Some(_) => Some(r.scalar("solver.t_max", 1.0, 0.0, f64::MAX)?),
        };
        let solver = SolverBlock {
            n: r.scalar("solver.n", 256, 1, 1 << 16)?,
            options: SolverOptions {
                cfl: r.scalar("solver.cfl", d.cfl, 1e-6, 10.0)?,
                stop_angle_gap: r.scalar("solver.stop_angle_gap", d.stop_angle_gap, 1e-8, 1.0)?,
                stop_time_fraction: r.scalar("solver.stop_time_fraction", d.stop_time_fraction, 1e-12, 0.5)?,
                sample_stride: r.scalar("solver.sample_stride", d.sample_stride, 1, 1 << 20)?,
                checkpoint_dtt: r.scalar("solver.checkpoint_dtt", d.checkpoint_dtt, 0.0, 10.0)?,
                checkpoint_stride: r.scalar("solver.checkpoint_stride", d.checkpoint_stride, 0, usize::MAX)?,
                max_steps: r.scalar("solver.max_steps", d.max_steps, 0, usize::MAX)?,
                t_max,
                richardson: r.boolean("solver.richardson", d.richardson)?,
                max_halvings: d.max_halvings,
                run_id: run_id.clone(),
            },
        };

        let multiplier = match raw.get("modulation.multiplier") {
            None => Multiplier::default(),
            Some((_, "big")) => Multiplier::Big,
            Some((_, "small")) => Multiplier::Small,
            Some((line, v)) => return Err(config_err(line, format!("modulation.multiplier: expected big or small, got '{v}'"))),
        };
        let sigma_form = match raw.get("modulation.sigma_form") {
            None => SigmaForm::default(),
            Some((_, "translated")) => SigmaForm::Translated,
            Some((_, "literal")) => SigmaForm::Literal,
            Some((line, v)) => {
                return Err(config_err(line, format!("modulation.sigma_form: expected translated or literal, got '{v}'")))
            }
        };

        let da = AnalysisOptions::default();
        let harmonics = r.scalar("analysis.harmonics", da.harmonics, 2, 4096)?;
        let window = match r.pair("analysis.window")? {
            Some((line, (a, b))) if !(0.0 <= a && a < b && b <= 1.0) => {
                return Err(config_err(line, "analysis.window: expected 0 <= lo < hi <= 1"));
            }
            Some((_, w)) => w,
            None => da.window,
        };
        let analysis = AnalysisBlock {
            options: AnalysisOptions {
                harmonics,
                spectral_harmonics: r.scalar("analysis.spectral_harmonics", SPECTRAL_HARMONICS, harmonics, 1 << 16)?,
                window,
                margin: r.scalar("analysis.margin", da.margin, 0.0, 1.0)?,
                curve_samples: r.scalar("analysis.curve_samples", da.curve_samples, 100, 1 << 20)?,
            },
            identity_tol: r.scalar("analysis.identity_tol", 1e-3, 0.0, 1.0)?,
            spectrum_tol: r.scalar("analysis.spectrum_tol", 0.02, 0.0, 1.0)?,
            oracle_tol: r.scalar("analysis.oracle_tol", 1e-2, 0.0, 1.0)?,
            gate_exponents: r.boolean("analysis.gate_exponents", true)?,
        };

        let dl = LinearOptions::default();
        let linear_n = r.scalar("linear.n", dl.n, 16, 1 << 16)?;
        let modes: Vec<usize> = r.list("linear.modes", vec![0, 1, 2, 3])?;
        if let Some(j) = modes.iter().find(|&&j| j > linear_n / 8) {
            return Err(config_err(r.line("linear.modes"), format!("linear.modes: mode {j} exceeds linear.n / 8")));
        }
        let linear_horizon = r.scalar("linear.horizon", dl.horizon, 1e-6, 100.0)?;
        let linear_steps = r.scalar("linear.steps", dl.steps, 1, 1 << 24)?;
        if linear_horizon / linear_steps as f64 > std::f64::consts::PI / linear_n as f64 {
            return Err(config_err(r.line("linear.steps"), "linear: horizon / steps must not exceed pi / linear.n"));
        }
        let linear = LinearBlock {
            enabled: r.boolean("linear.enabled", true)?,
            modes,
            options: LinearOptions {
                n: linear_n,
                horizon: linear_horizon,
                steps: linear_steps,
            },
        };

        let dor = OracleOptions::default();
        let oracle = OracleBlock {
            enabled: r.boolean("oracle.enabled", false)?,
            options: OracleOptions {
                m: r.scalar("oracle.m", dor.m, 10, 1 << 20)?,
                cfl: r.scalar("oracle.cfl", dor.cfl, 1e-6, 0.5)?,
            },
            // front tracking is only trusted away from extinction
            horizon: r.scalar("oracle.horizon", 0.5, 1e-6, 0.7)?,
        };

        let output = OutputBlock {
            dir: PathBuf::from(raw.get("output.dir").map_or("out", |(_, v)| v)),
            plots: r.boolean("output.plots", false)?,
        };

        Ok(RunConfig {
            run_id,
            domain,
            initial,
            solver,
            modulation: ModulationOptions { multiplier, sigma_form },
            analysis,
            linear,
            oracle,
            output,
            seed: r.scalar("seed", 0u64, 0, u64::MAX)?,
        })
    }

    /// Every effective value, one `key = value` per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let f = |x: f64| format!("{x:e}");
        let fl = |xs: &[f64]| xs.iter().map(|x| f(*x)).collect::<Vec<_>>().join(", ");
        let s = &self.solver.options;
        let a = &self.analysis.options;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("run.id", self.run_id.clone());
        put("seed", self.seed.to_string());
        put("domain.kind", self.domain.kind.to_string());
        put("domain.params", fl(&self.domain.params));
        let fr = &self.domain.frame;
        put("domain.frame", fl(&[fr.rotation, fr.translation[0], fr.translation[1]]));
        put("initial.r0", f(self.initial.r0));
        put("initial.perturbation", fl(&self.initial.perturbation));
        if let Some((a, b)) = self.initial.theta_window {
            put("initial.theta_window", fl(&[a, b]));
        }
        put("initial.random_modes", self.initial.random_modes.to_string());
        put("initial.random_amplitude", f(self.initial.random_amplitude));
        put("solver.n", self.solver.n.to_string());
        put("solver.cfl", f(s.cfl));
        put("solver.stop_angle_gap", f(s.stop_angle_gap));
        put("solver.stop_time_fraction", f(s.stop_time_fraction));
        put("solver.sample_stride", s.sample_stride.to_string());
        put("solver.checkpoint_dtt", f(s.checkpoint_dtt));
        put("solver.checkpoint_stride", s.checkpoint_stride.to_string());
        put("solver.max_steps", s.max_steps.to_string());
        if let Some(t) = s.t_max {
            put("solver.t_max", f(t));
        }
        put("solver.richardson", s.richardson.to_string());
        put(
            "modulation.multiplier",
            match self.modulation.multiplier {
                Multiplier::Big => "big",
                Multiplier::Small => "small",
            }
            .into(),
        );
        put(
            "modulation.sigma_form",
            match self.modulation.sigma_form {
                SigmaForm::Translated => "translated",
                SigmaForm::Literal => "literal",
            }
            .into(),
        );
        put("analysis.harmonics", a.harmonics.to_string());
        put("analysis.spectral_harmonics", a.spectral_harmonics.to_string());
        put("analysis.window", fl(&[a.window.0, a.window.1]));
        put("analysis.margin", f(a.margin));
        put("analysis.curve_samples", a.curve_samples.to_string());
        put("analysis.identity_tol", f(self.analysis.identity_tol));
        put("analysis.spectrum_tol", f(self.analysis.spectrum_tol));
        put("analysis.oracle_tol", f(self.analysis.oracle_tol));
        put("analysis.gate_exponents", self.analysis.gate_exponents.to_string());
        put("linear.enabled", self.linear.enabled.to_string());
        put(
            "linear.modes",
            self.linear.modes.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(", "),
        );
        put("linear.n", self.linear.options.n.to_string());
        put("linear.horizon", f(self.linear.options.horizon));
        put("linear.steps", self.linear.options.steps.to_string());
        put("oracle.enabled", self.oracle.enabled.to_string());
        put("oracle.m", self.oracle.options.m.to_string());
        put("oracle.cfl", f(self.oracle.options.cfl));
        put("oracle.horizon", f(self.oracle.horizon));
        put("output.dir", self.output.dir.display().to_string());
        put("output.plots", self.output.plots.to_string());
        out
    }

    /// SHA-256 of [`RunConfig::to_text`] without the output directory, which does
    /// not affect results.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("output.dir"))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cosine coefficients of the initial perturbation, including the seeded random part.
    pub fn perturbation(&self) -> Vec<f64> {
        let init = &self.initial;
        let mut p = init.perturbation.clone();
        if init.random_modes > 0 && init.random_amplitude > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            if p.len() < init.random_modes {
                p.resize(init.random_modes, 0.0);
            }
            for c in p.iter_mut().take(init.random_modes) {
                *c += rng.random_range(-init.random_amplitude..=init.random_amplitude);
            }
        }
        p
    }
}

impl DomainBlock {
    pub fn build(&self) -> Result<ConvexDomain> {
        Ok(ConvexDomain::new(self.kind, self.params.clone())?.with_frame(self.frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DISK: &str = "
# disk run
domain.kind = disk
domain.params = 1.0
initial.r0 = 0.3
initial.perturbation = 0, 0.01, 0.01, 0.01   # mixed
solver.n = 512
";

    #[test]
    fn parses_and_defaults() {
        let c = RunConfig::parse(DISK).unwrap();
        assert_eq!(c.domain.kind, DomainKind::Disk);
        assert_eq!(c.initial.perturbation, vec![0.0, 0.01, 0.01, 0.01]);
        assert_eq!(c.solver.n, 512);
        assert_eq!(c.solver.options.stop_angle_gap, 1e-2);
        assert_eq!(c.analysis.options.window, (0.4, 0.95));
        assert_eq!(c.linear.modes, vec![0, 1, 2, 3]);
        assert!(!c.oracle.enabled);
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = RunConfig::parse(DISK).unwrap();
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        let mut raw = RawConfig::parse(DISK).unwrap();
        raw.set("output.dir", "elsewhere").unwrap();
        assert_eq!(RunConfig::from_raw(&raw).unwrap().hash(), c.hash());
        raw.set("solver.n", "256").unwrap();
        assert_ne!(RunConfig::from_raw(&raw).unwrap().hash(), c.hash());
    }

    #[test]
    fn unknown_key_is_named_with_its_line() {
        let e = RunConfig::parse("domain.kind = disk\ndomain.params = 1\nsolver.grid = 5\n").unwrap_err();
        match e {
            Error::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("solver.grid"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_domain_block() {
        assert!(matches!(RunConfig::parse("solver.n = 64\n"), Err(Error::Config { .. })));
    }

    #[test]
    fn rejections() {
        for (text, line) in [
            ("domain.kind = disk\ndomain.params = -1\n", 2),
            ("domain.kind = torus\n", 1),
            ("domain.kind = halfplane\nsolver.cfl = 0\n", 2),
            ("domain.kind = halfplane\nanalysis.window = 0.9, 0.4\n", 2),
            ("domain.kind = halfplane\ninitial.r0 = abc\n", 2),
            ("domain.kind = halfplane\ndomain.kind = disk\n", 2),
            ("domain.kind = halfplane\njust words\n", 2),
            ("domain.kind = halfplane\nlinear.n = 16\nlinear.modes = 3\n", 3),
            ("domain.kind = halfplane\noracle.horizon = 0.9\n", 2),
        ] {
            match RunConfig::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn small_grids_are_left_to_the_solver() {
        let c = RunConfig::parse("domain.kind = halfplane\nsolver.n = 8\n").unwrap();
        assert_eq!(c.solver.n, 8);
    }

    #[test]
    fn seeded_perturbations_are_reproducible() {
        let text = "domain.kind = halfplane\ninitial.random_modes = 4\ninitial.random_amplitude = 0.01\nseed = 7\n";
        let a = RunConfig::parse(text).unwrap().perturbation();
        let b = RunConfig::parse(text).unwrap().perturbation();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|c| c.abs() <= 0.01));
        let other = RunConfig::parse(&text.replace("seed = 7", "seed = 8")).unwrap().perturbation();
        assert_ne!(a, other);
    }
}
