//! Scaling `lambda(t)` and horizontal translation `p(t)` chosen so that the
//! area quantity `U(t)` and the centre-of-mass quantity `q(t)` vanish, plus
//! the rescaled time and the coefficients `L`, `B` derived from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    area_unchecked, mu_by_parts, mu_sigma, nu_functional, nu_sigma, ConvexDomain, SupportArc, THREE_HALVES_PI,
};
use crate::numerics::{derivative_series, fd_weights};
use crate::solver::{big_lambda, FlowState, Trajectory};
use std::f64::consts::FRAC_PI_2;

/// Which factor multiplies `{sigma_S}` in the area condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Multiplier {
    /// `Lambda(t)`, as in the definition of `U(t)`.
    #[default]
    Big,
    /// The unknown `lambda(t)` itself; makes the condition quadratic in `lambda`.
    Small,
}

/// Form of the barrier integral in the centre-of-mass condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaForm {
    /// `int (x - p)(sigma_S - p cos) / kappa_S`, which cancels the barrier part of `3 q(U^p)`.
    #[default]
    Translated,
    /// `int x sigma_S / kappa_S`, untranslated.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModulationOptions {
    pub multiplier: Multiplier,
    pub sigma_form: SigmaForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationSample {
    pub t: f64,
    pub t_tilde: f64,
    pub lambda: f64,
    #[serde(rename = "Lambda")]
    pub big_lambda: f64,
    pub p: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub u_resid: f64,
    pub q_resid: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModulationSeries {
    pub samples: Vec<ModulationSample>,
    pub t_ext: f64,
}

/// Barrier support values at the two contacts, `(sigma_S(3pi/2 + lo), sigma_S(pi/2 + hi))`.
pub fn contact_support(arc: &SupportArc, domain: &ConvexDomain) -> (f64, f64) {
    (
        domain.support(THREE_HALVES_PI + arc.theta_lo).h,
        domain.support(FRAC_PI_2 + arc.theta_hi).h,
    )
}

fn sigma_sum(arc: &SupportArc, domain: &ConvexDomain) -> f64 {
    let (a, b) = contact_support(arc, domain);
    a + b
}

/// `U(t) = 2 lambda^2 |U| - Theta - lambda^2 mu_S - m {sigma_S}` with `m = Lambda` or `lambda`.
pub fn u_functional(arc: &SupportArc, domain: &ConvexDomain, lambda: f64, big: f64, multiplier: Multiplier) -> f64 {
    let m = match multiplier {
        Multiplier::Big => big,
        Multiplier::Small => lambda,
    };
    let two_area_minus_sigma = 2.0 * area_unchecked(arc, domain) - mu_sigma(arc, domain);
    lambda * lambda * two_area_minus_sigma - arc.width() - m * sigma_sum(arc, domain)
}

/// Scaling that makes `U(t)` vanish.
pub fn solve_lambda(state: &FlowState, domain: &ConvexDomain, t_ext: f64) -> Result<f64> {
    solve_lambda_with(state, domain, t_ext, Multiplier::Big)
}

pub fn solve_lambda_with(state: &FlowState, domain: &ConvexDomain, t_ext: f64, multiplier: Multiplier) -> Result<f64> {
    if state.t >= t_ext {
        return Err(Error::InvalidArc(format!("checkpoint time {} not before T = {t_ext}", state.t)));
    }
    let arc = &state.arc;
    let denom = 2.0 * area_unchecked(arc, domain) - mu_sigma(arc, domain);
    let scale = arc.width() * arc.sigma.iter().map(|s| s * s).sum::<f64>() / arc.sigma.len() as f64;
    if !(denom > 1e-12 * scale) {
        return Err(Error::DegenerateDenominator(denom));
    }
    let theta = arc.width();
    let s_sum = sigma_sum(arc, domain);
    let lambda = match multiplier {
        Multiplier::Big => {
            let num = theta + big_lambda(t_ext, state.t) * s_sum;
            if num <= 0.0 {
                return Err(Error::DegenerateDenominator(num));
            }
            (num / denom).sqrt()
        }
        Multiplier::Small => (s_sum + (s_sum * s_sum + 4.0 * denom * theta).sqrt()) / (2.0 * denom),
    };
    Ok(lambda)
}

/// The bracket of `q(t)` without the `lambda^3` factor:
/// `3 q(U^p) - int_S (X.e1) sigma_S / kappa_S - Lambda^-2 [gamma . e2]`.
pub fn q_bracket(arc: &SupportArc, domain: &ConvexDomain, p: f64, big: f64, form: SigmaForm) -> f64 {
    let (a, b) = arc.endpoints();
    let jump_y = b[1] - a[1];
    let sigma_part = match form {
        SigmaForm::Translated => 0.0,
        SigmaForm::Literal => nu_sigma(arc, domain, p) - nu_sigma(arc, domain, 0.0),
    };
    nu_functional(arc, p) + sigma_part - jump_y / (big * big)
}

/// Translation that makes `q(t)` vanish: the real root of smallest magnitude.
pub fn solve_p(state: &FlowState, domain: &ConvexDomain, lambda: f64, t_ext: f64) -> Result<f64> {
    solve_p_with(state, domain, lambda, t_ext, SigmaForm::Translated)
}

pub fn solve_p_with(state: &FlowState, domain: &ConvexDomain, lambda: f64, t_ext: f64, form: SigmaForm) -> Result<f64> {
    let _ = lambda; // q(t) = lambda^3 * bracket, so the root does not depend on lambda > 0
    let arc = &state.arc;
    let big = big_lambda(t_ext, state.t);
    let g = |p: f64| q_bracket(arc, domain, p, big, form);
    let scale = arc.sigma.iter().map(|s| s.abs()).sum::<f64>() / arc.sigma.len() as f64;
    // the bracket is quadratic in p; recover its coefficients exactly
    let (gm, g0, gp) = (g(-scale), g(0.0), g(scale));
    let a = (gp + gm - 2.0 * g0) / (2.0 * scale * scale);
    let b = (gp - gm) / (2.0 * scale);
    let c = g0;
    let roots = quadratic_roots(a, b, c, scale)?;
    let mut p = roots[0];
    if roots.len() == 2 && (roots[1] - roots[0]).abs() < 1e-3 * scale {
        return Err(Error::AmbiguousRoot(roots[0], roots[1]));
    }
    // polish against the bracket itself (adaptive barrier quadrature in the literal form)
    for _ in 0..8 {
        let d = 1e-6 * scale;
        let slope = (g(p + d) - g(p - d)) / (2.0 * d);
        if slope == 0.0 {
            break;
        }
        let step = g(p) / slope;
        p -= step;
        if step.abs() <= 1e-15 * scale {
            break;
        }
    }
    Ok(p)
}

/// Real roots of `a p^2 + b p + c`, ordered by magnitude.
fn quadratic_roots(a: f64, b: f64, c: f64, scale: f64) -> Result<Vec<f64>> {
    let tiny = 1e-14 * (b.abs() + c.abs() / scale);
    if a.abs() * scale <= tiny {
        if b == 0.0 {
            return Err(Error::NoRealRoot);
        }
        return Ok(vec![-c / b]);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < -1e-14 * b * b.max(4.0 * (a * c).abs()) {
        return Err(Error::NoRealRoot);
    }
    let sq = disc.max(0.0).sqrt();
    // numerically stable pair
    let qv = -0.5 * (b + b.signum() * sq);
    let mut roots = if qv == 0.0 {
        vec![0.0, 0.0]
    } else {
        vec![qv / a, c / qv]
    };
    roots.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    Ok(roots)
}

/// `sigma~ = lambda (sigma - p cos theta)` on the same angles.
pub fn rescale_state(state: &FlowState, lambda: f64, p: f64) -> SupportArc {
    let arc = &state.arc;
    let sigma = arc
        .thetas()
        .zip(&arc.sigma)
        .map(|(th, s)| lambda * (s - p * th.cos()))
        .collect();
    SupportArc {
        theta_lo: arc.theta_lo,
        theta_hi: arc.theta_hi,
        sigma,
    }
}

/// Three-point derivative on non-uniform nodes (one-sided at the ends).
fn three_point_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(1).min(n - 3);
            let w = fd_weights(x[i], &x[start..start + 3], 1);
            w.iter().zip(&y[start..start + 3]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Per-checkpoint `lambda`, `p`, rescaled time and the coefficients `L`, `B`.
///
/// The rescaled time integrates `lambda^2 = r Lambda^2` with `r` linear between
/// checkpoints and `int Lambda^2 dt = log((T - t_a) / (T - t_b)) / 2` exact.
pub fn build_series(
    traj: &Trajectory,
    domain: &ConvexDomain,
    t_ext: f64,
    opts: &ModulationOptions,
) -> Result<ModulationSeries> {
    let ckpts: Vec<&FlowState> = traj.checkpoints.iter().filter(|c| c.t < t_ext).collect();
    if ckpts.len() < 3 {
        return Err(Error::InsufficientData("need at least three checkpoints before T".into()));
    }
    let solved: Vec<(f64, f64, f64, f64)> = ckpts
        .par_iter()
        .enumerate()
        .map(|(index, state)| {
            let big = big_lambda(t_ext, state.t);
            let lambda = solve_lambda_with(state, domain, t_ext, opts.multiplier).map_err(|e| e.at_checkpoint(index))?;
            let p = solve_p_with(state, domain, lambda, t_ext, opts.sigma_form).map_err(|e| e.at_checkpoint(index))?;
            let u = u_functional(&state.arc, domain, lambda, big, opts.multiplier);
            let q = lambda.powi(3) * q_bracket(&state.arc, domain, p, big, opts.sigma_form);
            Ok((lambda, p, u, q))
        })
        .collect::<Result<_>>()?;

    let mut t_tilde = Vec::with_capacity(ckpts.len());
    let mut acc = -0.5 * (2.0 * (t_ext - ckpts[0].t)).ln();
    t_tilde.push(acc);
    for k in 1..ckpts.len() {
        let (t0, t1) = (ckpts[k - 1].t, ckpts[k].t);
        let r0 = (solved[k - 1].0 / big_lambda(t_ext, t0)).powi(2);
        let r1 = (solved[k].0 / big_lambda(t_ext, t1)).powi(2);
        acc += 0.5 * (r0 + r1) * 0.5 * ((t_ext - t0) / (t_ext - t1)).ln();
        t_tilde.push(acc);
    }
    if t_tilde.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InsufficientData("rescaled time is not increasing (duplicate checkpoints)".into()));
    }
    let log_lambda: Vec<f64> = solved.iter().map(|s| s.0.ln()).collect();
    let ps: Vec<f64> = solved.iter().map(|s| s.1).collect();
    let dl = three_point_derivative(&t_tilde, &log_lambda);
    let dp = three_point_derivative(&t_tilde, &ps);

    let samples = ckpts
        .iter()
        .enumerate()
        .map(|(k, c)| ModulationSample {
            t: c.t,
            t_tilde: t_tilde[k],
            lambda: solved[k].0,
            big_lambda: big_lambda(t_ext, c.t),
            p: solved[k].1,
            l: dl[k],
            b: -solved[k].0 * dp[k],
            u_resid: solved[k].2,
            q_resid: solved[k].3,
        })
        .collect();
    Ok(ModulationSeries { samples, t_ext })
}

/// Residuals of `U(t) = 0` and `q(t) = 0` re-evaluated along an independent
/// quadrature path (`mu` integrated by parts) at the solved values.
pub fn recheck_residuals(state: &FlowState, domain: &ConvexDomain, sample: &ModulationSample) -> (f64, f64) {
    let arc = &state.arc;
    let u = sample.lambda.powi(2) * mu_by_parts(arc) - arc.width() - sample.big_lambda * sigma_sum(arc, domain);
    let p = sample.p;
    // nu_p from the moments of the translated curve: x - p and sigma - p cos
    let sigma_p: Vec<f64> = arc.thetas().zip(&arc.sigma).map(|(th, s)| s - p * th.cos()).collect();
    let shifted = SupportArc {
        theta_lo: arc.theta_lo,
        theta_hi: arc.theta_hi,
        sigma: sigma_p,
    };
    let (a, b) = arc.endpoints();
    let q = sample.lambda.powi(3)
        * (nu_functional(&shifted, 0.0) - (b[1] - a[1]) / sample.big_lambda.powi(2));
    (u, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaOdeReport {
    /// `sup |lambda_t / lambda^3 - 1| * Lambda`.
    pub sup_scaled: f64,
    /// Set when the scaled deviation keeps growing over the last third of the series.
    pub growth: bool,
    pub values: Vec<(f64, f64)>,
}

/// Finite-difference check of `lambda_t / lambda^3 = 1 + O(1 / Lambda)`.
pub fn lambda_ode_check(series: &ModulationSeries) -> Result<LambdaOdeReport> {
    let n = series.samples.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 samples, got {n}")));
    }
    // differentiate log(lambda) in s = log(Lambda), where it is smooth up to T:
    // lambda_t / lambda^3 = (dlog lambda / ds) (Lambda / lambda)^2
    let s: Vec<f64> = series.samples.iter().map(|s| s.big_lambda.ln()).collect();
    let log_lam: Vec<f64> = series.samples.iter().map(|s| s.lambda.ln()).collect();
    let d = derivative_series(&s, &log_lam);
    let values: Vec<(f64, f64)> = series
        .samples
        .iter()
        .zip(&d)
        .map(|(s, dl)| {
            let ratio = dl * (s.big_lambda / s.lambda).powi(2);
            (s.t_tilde, (ratio - 1.0).abs() * s.big_lambda)
        })
        .collect();
    let sup_scaled = values.iter().map(|v| v.1).fold(0.0, f64::max);
    let third = n / 3;
    let mid_max = values[third..2 * third].iter().map(|v| v.1).fold(0.0, f64::max);
    let end_max = values[2 * third..].iter().map(|v| v.1).fold(0.0, f64::max);
    Ok(LambdaOdeReport {
        sup_scaled,
        growth: end_max > 4.0 * mid_max.max(f64::MIN_POSITIVE) && end_max > 1.0,
        values,
    })
}

/// Boundedness monitors along a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monitors {
    pub sup_lambda_gap: f64,
    pub sup_p_scaled: f64,
    pub sup_l_env: f64,
    pub sup_b_env: f64,
    pub ntv_min: f64,
    pub ntv_max: f64,
}

/// `sup |lambda - Lambda|`, `sup |p| Lambda^2`, `sup |L - 1| e^t~`, `sup |B| e^t~`
/// and the range of `e^-t~ Lambda`.
pub fn monitors(series: &ModulationSeries) -> Monitors {
    let mut m = Monitors {
        sup_lambda_gap: 0.0,
        sup_p_scaled: 0.0,
        sup_l_env: 0.0,
        sup_b_env: 0.0,
        ntv_min: f64::INFINITY,
        ntv_max: 0.0,
    };
    for s in &series.samples {
        let e = s.t_tilde.exp();
        m.sup_lambda_gap = m.sup_lambda_gap.max((s.lambda - s.big_lambda).abs());
        m.sup_p_scaled = m.sup_p_scaled.max(s.p.abs() * s.big_lambda.powi(2));
        m.sup_l_env = m.sup_l_env.max((s.l - 1.0).abs() * e);
        m.sup_b_env = m.sup_b_env.max(s.b.abs() * e);
        let ntv = s.big_lambda / e;
        m.ntv_min = m.ntv_min.min(ntv);
        m.ntv_max = m.ntv_max.max(ntv);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::TrajectoryMeta;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn semicircle_state(t_ext: f64, t: f64, n: usize) -> FlowState {
        let r = (2.0 * (t_ext - t)).sqrt();
        FlowState::new(t, SupportArc::from_fn(0.0, PI, n, |_| r).unwrap())
    }

    #[test]
    fn lambda_examples() {
        let hp = ConvexDomain::halfplane();
        let s = semicircle_state(0.5, 0.3, 64);
        assert_abs_diff_eq!(solve_lambda(&s, &hp, 0.5).unwrap(), big_lambda(0.5, 0.3), epsilon = 1e-12);
        let r = 0.7;
        let s = FlowState::new(0.0, SupportArc::from_fn(0.0, PI, 64, |_| r).unwrap());
        assert_abs_diff_eq!(solve_lambda(&s, &hp, 1.0).unwrap(), 1.0 / r, epsilon = 1e-12);
    }

    #[test]
    fn lambda_matches_bisection_on_disk() {
        let disk = ConvexDomain::disk(1.0).unwrap();
        let s = crate::solver::make_initial(&disk, 0.3, &[0.0, 0.01, 0.01], None, 256).unwrap();
        let t_ext = 0.05;
        let lam = solve_lambda(&s, &disk, t_ext).unwrap();
        let big = big_lambda(t_ext, 0.0);
        let (mut a, mut b) = (1e-3, 100.0);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if u_functional(&s.arc, &disk, m, big, Multiplier::Big) > 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        assert_abs_diff_eq!(lam, 0.5 * (a + b), epsilon = 1e-10);
    }

    #[test]
    fn p_examples() {
        let hp = ConvexDomain::halfplane();
        let s = FlowState::new(0.0, SupportArc::from_fn(0.0, PI, 256, |t| 1.0 + 0.05 * (2.0 * t).cos()).unwrap());
        assert_abs_diff_eq!(solve_p(&s, &hp, 1.0, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        let d = 0.15;
        let s = FlowState::new(0.0, SupportArc::from_fn(0.0, PI, 1024, |t| 1.0 + d * t.cos()).unwrap());
        assert_abs_diff_eq!(solve_p(&s, &hp, 1.0, 1.0).unwrap(), d, epsilon = 1e-9);
    }

    #[test]
    fn p_self_residual_on_disk() {
        let disk = ConvexDomain::disk(1.0).unwrap();
        let s = crate::solver::make_initial(&disk, 0.3, &[0.0, 0.01, 0.0, 0.01], None, 256).unwrap();
        for form in [SigmaForm::Translated, SigmaForm::Literal] {
            let p = solve_p_with(&s, &disk, 3.0, 0.05, form).unwrap();
            let big = big_lambda(0.05, 0.0);
            assert!(q_bracket(&s.arc, &disk, p, big, form).abs() <= 1e-9);
        }
    }

    #[test]
    fn rescale_examples() {
        let s = FlowState::new(0.0, SupportArc::from_fn(0.0, PI, 32, |t| 1.0 + 0.2 * t.cos()).unwrap());
        assert_eq!(rescale_state(&s, 1.0, 0.0), s.arc);
        let r = rescale_state(&s, 1.0, 0.2);
        assert!(r.sigma.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let s = semicircle_state(0.5, 0.25, 32);
        let r = rescale_state(&s, big_lambda(0.5, 0.25), 0.0);
        assert!(r.sigma.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn quadratic_roots_cases() {
        assert!(matches!(quadratic_roots(1.0, 0.0, 1.0, 1.0), Err(Error::NoRealRoot)));
        let r = quadratic_roots(1.0, -3.0, 2.0, 1.0).unwrap();
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r[1], 2.0, epsilon = 1e-15);
        let r = quadratic_roots(0.0, 2.0, -1.0, 1.0).unwrap();
        assert_eq!(r, vec![0.5]);
    }

    fn exact_series(n: usize) -> ModulationSeries {
        let t_ext = 0.5;
        let checkpoints = (0..n)
            .map(|k| {
                let tau = t_ext * (-(k as f64) * 0.1).exp();
                semicircle_state(t_ext, t_ext - tau, 64)
            })
            .collect();
        let traj = Trajectory {
            samples: vec![],
            checkpoints,
            meta: TrajectoryMeta::default(),
        };
        build_series(&traj, &ConvexDomain::halfplane(), t_ext, &ModulationOptions::default()).unwrap()
    }

    #[test]
    fn exact_semicircle_series() {
        let series = exact_series(40);
        for s in &series.samples {
            assert_abs_diff_eq!(s.lambda, s.big_lambda, epsilon = 1e-10 * s.big_lambda);
            assert_abs_diff_eq!(s.p, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.t_tilde, -0.5 * (2.0 * (0.5 - s.t)).ln(), epsilon = 1e-10);
            assert_abs_diff_eq!(s.l, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s.b, 0.0, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(series.samples[0].t_tilde, -0.5 * (2.0f64 * 0.5).ln(), epsilon = 1e-15);
        let report = lambda_ode_check(&series).unwrap();
        assert!(report.sup_scaled < 1e-3, "{}", report.sup_scaled);
        assert!(!report.growth);
    }

    #[test]
    fn ode_check_needs_samples() {
        let series = exact_series(3);
        assert!(matches!(lambda_ode_check(&series), Err(Error::InsufficientData(_))));
    }
}
