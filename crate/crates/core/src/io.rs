//! On-disk artifacts. Floats are written with 17 significant digits so every
//! file round-trips bit for bit.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{AnalysisReport, AnalysisRow, IdentityMaxima, IdentityRow, TheoremCheck};
use crate::error::{Error, Result};
use crate::geometry::SupportArc;
use crate::linearized::SpectrumRow;
use crate::modulation::{ModulationSample, ModulationSeries};
use crate::oracle::{ComparisonRow, Polyline};
use crate::solver::{DiagnosticsSample, FlowState, Trajectory, TrajectoryMeta};

pub const TRAJECTORY_HEADER: &str = "t,theta_lo,theta_hi,Theta,area,moment,kappa_min,kappa_max,r_lo,r_hi";
pub const MODULATION_HEADER: &str = "t,t_tilde,lambda,Lambda,p,L,B,U_resid,q_resid";
pub const ANALYSIS_HEADER: &str = "t,t_tilde,Lambda,I0,I1,L2,C0,C1,C2,C3,C4,hausdorff,sigma0_hat,sigma1_hat,bc_scale,\
quad_quadrature,quad_spectral,quad_bound,e_kappa,e_sigma,kappa_dev,res1,res2,ext_L2,ext_C0";
pub const RESIDUALS_HEADER: &str = "t,area_law,theta_ev,dUdt,dUdt_solved,dqdt,q4";
pub const SPECTRUM_HEADER: &str = "j,expected,fitted,stderr";
pub const ORACLE_HEADER: &str = "t,i,x,y";
pub const COMPARE_HEADER: &str = "t,hausdorff";

pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(what: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        what: what.display().to_string(),
        message: message.into(),
    }
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header.split(','))
        .and_then(|_| rows.into_iter().try_for_each(|r| w.write_record(r)))
        .map_err(|e| parse_err(path, e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Numeric rows of a CSV file whose header must equal `header`.
fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let found: Vec<String> = r
        .headers()
        .map_err(|e| parse_err(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if found.join(",") != header {
        return Err(parse_err(path, format!("unexpected header '{}'", found.join(","))));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
            rec.iter()
                .map(|v| v.parse::<f64>().map_err(|_| parse_err(path, format!("row {}: bad number '{v}'", i + 1))))
                .collect()
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// Header lines `t`, `theta_lo`, `theta_hi`, `N`, then `N + 1` rows `theta_i sigma_i`.
pub fn write_checkpoint(path: &Path, state: &FlowState) -> Result<()> {
    let arc = &state.arc;
    let mut s = String::new();
    s.push_str(&format!("t {}\ntheta_lo {}\ntheta_hi {}\nN {}\n", fmt(state.t), fmt(arc.theta_lo), fmt(arc.theta_hi), arc.n()));
    for (th, sg) in arc.thetas().zip(&arc.sigma) {
        s.push_str(&format!("{} {}\n", fmt(th), fmt(*sg)));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<FlowState> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut header = |name: &str| -> Result<String> {
        let line = lines.next().ok_or_else(|| parse_err(path, format!("missing '{name}' line")))?;
        match line.split_once(' ') {
            Some((k, v)) if k == name => Ok(v.trim().to_string()),
            _ => Err(parse_err(path, format!("expected '{name}', got '{line}'"))),
        }
    };
    let num = |v: String| v.parse::<f64>().map_err(|_| parse_err(path, format!("bad number '{v}'")));
    let t = num(header("t")?)?;
    let lo = num(header("theta_lo")?)?;
    let hi = num(header("theta_hi")?)?;
    let n_text = header("N")?;
    let n: usize = n_text.parse().map_err(|_| parse_err(path, format!("bad N '{n_text}'")))?;
    let sigma = lines
        .map(|l| {
            let v = l.split_whitespace().nth(1).ok_or_else(|| parse_err(path, format!("bad row '{l}'")))?;
            v.parse::<f64>().map_err(|_| parse_err(path, format!("bad number '{v}'")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if sigma.len() != n + 1 {
        return Err(parse_err(path, format!("expected {} rows, found {}", n + 1, sigma.len())));
    }
    Ok(FlowState::new(t, SupportArc::new(lo, hi, sigma)?))
}

fn checkpoint_name(k: usize) -> String {
    format!("ckpt_{k:05}.txt")
}

pub fn write_checkpoints(dir: &Path, states: &[FlowState]) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    states
        .iter()
        .enumerate()
        .try_for_each(|(k, s)| write_checkpoint(&dir.join(checkpoint_name(k)), s))
}

pub fn read_checkpoints(dir: &Path) -> Result<Vec<FlowState>> {
    let mut out = vec![];
    loop {
        let p = dir.join(checkpoint_name(out.len()));
        if !p.exists() {
            break;
        }
        out.push(read_checkpoint(&p)?);
    }
    if out.is_empty() {
        return Err(parse_err(dir, "no checkpoints"));
    }
    Ok(out)
}

pub fn write_trajectory_csv(path: &Path, samples: &[DiagnosticsSample]) -> Result<()> {
    write_csv(
        path,
        TRAJECTORY_HEADER,
        samples.iter().map(|s| {
            [s.t, s.theta_lo, s.theta_hi, s.big_theta, s.area, s.moment, s.kappa_min, s.kappa_max, s.r_lo, s.r_hi]
                .into_iter()
                .map(fmt)
                .collect()
        }),
    )
}

/// The angular rate is not part of the file and reads back as NaN.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<DiagnosticsSample>> {
    Ok(read_csv(path, TRAJECTORY_HEADER)?
        .into_iter()
        .map(|r| DiagnosticsSample {
            t: r[0],
            theta_lo: r[1],
            theta_hi: r[2],
            big_theta: r[3],
            area: r[4],
            moment: r[5],
            kappa_min: r[6],
            kappa_max: r[7],
            r_lo: r[8],
            r_hi: r[9],
            dtheta_dt: f64::NAN,
        })
        .collect())
}

/// `trajectory.csv`, `run.json` and the checkpoint directory under `dir`.
pub fn write_trajectory(dir: &Path, checkpoint_dir: &str, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectory_csv(&dir.join("trajectory.csv"), &traj.samples)?;
    write_json(&dir.join("run.json"), &traj.meta)?;
    write_checkpoints(&dir.join(checkpoint_dir), &traj.checkpoints)
}

pub fn read_trajectory(dir: &Path, checkpoint_dir: &str) -> Result<Trajectory> {
    Ok(Trajectory {
        samples: read_trajectory_csv(&dir.join("trajectory.csv"))?,
        checkpoints: read_checkpoints(&dir.join(checkpoint_dir))?,
        meta: read_json::<TrajectoryMeta>(&dir.join("run.json"))?,
    })
}

pub fn write_modulation_csv(path: &Path, series: &ModulationSeries) -> Result<()> {
    write_csv(
        path,
        MODULATION_HEADER,
        series.samples.iter().map(|s| {
            [s.t, s.t_tilde, s.lambda, s.big_lambda, s.p, s.l, s.b, s.u_resid, s.q_resid]
                .into_iter()
                .map(fmt)
                .collect()
        }),
    )
}

pub fn read_modulation_csv(path: &Path, t_ext: f64) -> Result<ModulationSeries> {
    let samples = read_csv(path, MODULATION_HEADER)?
        .into_iter()
        .map(|r| ModulationSample {
            t: r[0],
            t_tilde: r[1],
            lambda: r[2],
            big_lambda: r[3],
            p: r[4],
            l: r[5],
            b: r[6],
            u_resid: r[7],
            q_resid: r[8],
        })
        .collect();
    Ok(ModulationSeries { samples, t_ext })
}

fn analysis_values(r: &AnalysisRow) -> [f64; 25] {
    [
        r.t,
        r.t_tilde,
        r.big_lambda,
        r.i0,
        r.i1,
        r.l2,
        r.c0,
        r.c1,
        r.c2,
        r.c3,
        r.c4,
        r.hausdorff,
        r.sigma0_hat,
        r.sigma1_hat,
        r.bc_scale,
        r.quad_quadrature,
        r.quad_spectral,
        r.quad_bound,
        r.e_kappa,
        r.e_sigma,
        r.kappa_dev(),
        r.res1,
        r.res2,
        r.ext_l2,
        r.ext_c0,
    ]
}

pub fn write_analysis_csv(path: &Path, rows: &[AnalysisRow]) -> Result<()> {
    write_csv(path, ANALYSIS_HEADER, rows.iter().map(|r| analysis_values(r).into_iter().map(fmt).collect()))
}

pub fn read_analysis_csv(path: &Path) -> Result<Vec<AnalysisRow>> {
    Ok(read_csv(path, ANALYSIS_HEADER)?
        .into_iter()
        .map(|v| AnalysisRow {
            t: v[0],
            t_tilde: v[1],
            big_lambda: v[2],
            i0: v[3],
            i1: v[4],
            l2: v[5],
            c0: v[6],
            c1: v[7],
            c2: v[8],
            c3: v[9],
            c4: v[10],
            hausdorff: v[11],
            sigma0_hat: v[12],
            sigma1_hat: v[13],
            bc_scale: v[14],
            quad_quadrature: v[15],
            quad_spectral: v[16],
            quad_bound: v[17],
            e_kappa: v[18],
            e_sigma: v[19],
            res1: v[21],
            res2: v[22],
            ext_l2: v[23],
            ext_c0: v[24],
        })
        .collect())
}

pub fn write_residuals_csv(path: &Path, rows: &[IdentityRow]) -> Result<()> {
    write_csv(
        path,
        RESIDUALS_HEADER,
        rows.iter().map(|r| {
            [r.t, r.area_law, r.theta_ev, r.dudt, r.dudt_solved, r.dqdt, r.q4]
                .into_iter()
                .map(fmt)
                .collect()
        }),
    )
}

pub fn write_spectrum_csv(path: &Path, rows: &[SpectrumRow]) -> Result<()> {
    write_csv(
        path,
        SPECTRUM_HEADER,
        rows.iter()
            .map(|r| vec![r.j.to_string(), fmt(r.expected), fmt(r.fitted), fmt(r.stderr)]),
    )
}

pub fn read_spectrum_csv(path: &Path) -> Result<Vec<SpectrumRow>> {
    Ok(read_csv(path, SPECTRUM_HEADER)?
        .into_iter()
        .map(|r| SpectrumRow {
            j: r[0] as usize,
            expected: r[1],
            fitted: r[2],
            stderr: r[3],
        })
        .collect())
}

pub fn write_oracle_csv(path: &Path, lines: &[Polyline]) -> Result<()> {
    write_csv(
        path,
        ORACLE_HEADER,
        lines.iter().flat_map(|l| {
            l.points
                .iter()
                .enumerate()
                .map(move |(i, p)| vec![fmt(l.t), i.to_string(), fmt(p[0]), fmt(p[1])])
        }),
    )
}

pub fn write_compare_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    write_csv(path, COMPARE_HEADER, rows.iter().map(|r| vec![fmt(r.t), fmt(r.distance)]))
}

pub fn read_compare_csv(path: &Path) -> Result<Vec<ComparisonRow>> {
    Ok(read_csv(path, COMPARE_HEADER)?
        .into_iter()
        .map(|r| ComparisonRow { t: r[0], distance: r[1] })
        .collect())
}

/// Exponent fits and identity maxima, the inputs of the report stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecksFile {
    pub t_ext: f64,
    pub flat_barrier: bool,
    pub checks: Vec<TheoremCheck>,
    pub identities_all: Option<IdentityMaxima>,
    pub identities_settled: Option<IdentityMaxima>,
}

impl ChecksFile {
    pub fn of(report: &AnalysisReport) -> Self {
        ChecksFile {
            t_ext: report.t_ext,
            flat_barrier: report.flat_barrier,
            checks: report.checks.clone(),
            identities_all: report.identities.as_ref().map(|i| i.all),
            identities_settled: report.identities.as_ref().map(|i| i.settled),
        }
    }
}

/// Human-readable exponent table.
pub fn rates_text(checks: &[TheoremCheck]) -> String {
    let mut s = format!(
        "{:<12} {:<8} {:>10} {:>10} {:>9} {:>22} {:>4}  {:<6} {}\n",
        "observable", "vs", "exponent", "stderr", "predicted", "window", "pts", "pass", "note"
    );
    for c in checks {
        let (e, se, w, n) = match &c.fit {
            Some(f) => (
                format!("{:.4}", f.exponent),
                format!("{:.2e}", f.stderr),
                format!("[{:.4}, {:.4}]", f.window.0, f.window.1),
                f.n_points.to_string(),
            ),
            None => ("-".into(), "-".into(), "-".into(), "-".into()),
        };
        let pass = match c.pass {
            Some(true) => "yes",
            Some(false) => "NO",
            None => "n/a",
        };
        s.push_str(&format!(
            "{:<12} {:<8} {:>10} {:>10} {:>9.2} {:>22} {:>4}  {:<6} {}\n",
            c.observable, c.variable, e, se, c.predicted, w, n, pass, c.note
        ));
    }
    s
}

/// A gnuplot script for one fitted series of `analysis.csv` (columns are 1-based).
/// The fitted exponent is fixed and only the prefactor is refitted for display.
pub fn plot_script(check: &TheoremCheck, column: usize, x_column: usize) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset logscale y\nset xlabel '{}'\nset ylabel '|{}|'\n",
        check.variable, check.observable
    );
    let data = format!("'../analysis.csv' using {x_column}:(abs(column({column})))");
    match &check.fit {
        Some(f) => {
            s.push_str(&format!(
                "k = {:.6}\nA = 1\nf(x) = A * exp(-k * x)\nfit [{}:{}] f(x) {data} via A\n",
                f.exponent,
                fmt(f.window.0),
                fmt(f.window.1)
            ));
            s.push_str(&format!("plot {data} with points, f(x) title sprintf('exponent %.3f', k) with lines\n"));
        }
        None => s.push_str(&format!("plot {data} with points\n")),
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub files: Vec<ManifestFile>,
    pub acceptance: BTreeMap<String, bool>,
}

pub const MANIFEST: &str = "manifest.json";

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else if p != root.join(MANIFEST) {
            out.push(p);
        }
    }
    Ok(())
}

/// Rewrites the manifest with every file currently under `dir`.
pub fn write_manifest(dir: &Path, run_id: &str, config_hash: &str, acceptance: BTreeMap<String, bool>) -> Result<RunManifest> {
    let mut paths = vec![];
    list_files(dir, dir, &mut paths)?;
    let files = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            Ok(ManifestFile {
                path: p.strip_prefix(dir).unwrap_or(p).display().to_string(),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut versions = BTreeMap::new();
    versions.insert("fbcsf".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("format".to_string(), "1".to_string());
    let manifest = RunManifest {
        run_id: run_id.to_string(),
        config_hash: config_hash.to_string(),
        versions,
        created: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        files,
        acceptance,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let arc = SupportArc::from_fn(0.1, PI - 0.2, 32, |t| 0.3 + 0.01 * (3.0 * t).cos() + 1e-17).unwrap();
        let s = FlowState::new(0.012_345_678_901_234_568, arc);
        let p = dir.path().join("c.txt");
        write_checkpoint(&p, &s).unwrap();
        let back = read_checkpoint(&p).unwrap();
        assert_eq!(back, s);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t 1.2345678901234568e-2\ntheta_lo "));
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sample = DiagnosticsSample {
            t: 0.1,
            theta_lo: 0.2,
            theta_hi: 2.9,
            big_theta: 2.7,
            area: 0.14,
            moment: -1e-9,
            kappa_min: 3.0,
            kappa_max: 3.5,
            r_lo: 0.0,
            r_hi: 1e-12,
            dtheta_dt: 0.5,
        };
        let p = dir.path().join("trajectory.csv");
        write_trajectory_csv(&p, &[sample, sample]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRAJECTORY_HEADER);
        let back = read_trajectory_csv(&p).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].area, 0.14);
        assert!(back[0].dtheta_dt.is_nan());
    }

    #[test]
    fn modulation_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let s = ModulationSample {
            t: 0.1,
            t_tilde: 0.7,
            lambda: 2.0,
            big_lambda: 2.01,
            p: 1e-3,
            l: 1.01,
            b: -2e-3,
            u_resid: 1e-15,
            q_resid: -1e-16,
        };
        let series = ModulationSeries {
            samples: vec![s],
            t_ext: 0.5,
        };
        let p = dir.path().join("modulation.csv");
        write_modulation_csv(&p, &series).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next().unwrap(), MODULATION_HEADER);
        assert_eq!(read_modulation_csv(&p, 0.5).unwrap(), series);
        assert!(matches!(read_trajectory_csv(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn manifest_lists_files_with_sizes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "hello").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/b.txt"), "xy").unwrap();
        let m = write_manifest(dir.path(), "r", "abc", BTreeMap::new()).unwrap();
        assert_eq!(m.files.len(), 2);
        assert_eq!(m.files[0].path, "a.txt");
        assert_eq!(m.files[0].bytes, 5);
        assert_eq!(m.files[1].path, "sub/b.txt");
        let again = write_manifest(dir.path(), "r", "abc", BTreeMap::new()).unwrap();
        assert_eq!(again.files, m.files);
    }
}
