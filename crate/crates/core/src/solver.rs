//! Time stepping of `sigma_t = -1 / (sigma_thth + sigma)` on the moving angle
//! interval, coupled to the endpoint ODEs, and post-hoc extinction estimates.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    area_unchecked, check_contact, curvature_of_arc, first_moment_unchecked, sigma_arc_angles, ConvexDomain,
    Frame, Point, SupportArc, CONTACT_TOL, THREE_HALVES_PI,
};
use crate::numerics::{BandMatrix, D1_END, D1_NEAR, D2_NEAR};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub arc: SupportArc,
}

impl FlowState {
    pub fn new(t: f64, arc: SupportArc) -> Self {
        FlowState { t, arc }
    }
}

/// Scalar diagnostics of one time slice.
///
/// After [`normalize_trajectory`] the angles are expressed in the standard
/// frame; `moment` stays the first moment of the frame the run used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSample {
    pub t: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub big_theta: f64,
    pub area: f64,
    pub moment: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub r_lo: f64,
    pub r_hi: f64,
    pub dtheta_dt: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub run_id: String,
    pub n: usize,
    pub domain_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<DiagnosticsSample>,
    pub checkpoints: Vec<FlowState>,
    pub meta: TrajectoryMeta,
}

/// Extinction time `T`, extinction point and the outward normal of the barrier there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionEstimate {
    pub t_ext: f64,
    pub t_fixed_point: f64,
    pub p_star: Point,
    pub normal_angle: f64,
    /// Root-mean-square misfit of the area model, relative to `pi (T - t)`.
    pub residual: f64,
    /// Range of `(pi - Theta) / sqrt(2 (T - t))` once `T - t <= T / 2`.
    pub gap_ratio: (f64, f64),
}

impl ExtinctionEstimate {
    /// Self-similar scale `Lambda(t) = 1 / sqrt(2 (T - t))`.
    pub fn lambda(&self, t: f64) -> f64 {
        big_lambda(self.t_ext, t)
    }
}

pub fn big_lambda(t_ext: f64, t: f64) -> f64 {
    1.0 / (2.0 * (t_ext - t)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Multiplier on the time-step caps.
    pub cfl: f64,
    /// Stop once `pi - Theta` drops below this (curved barrier).
    pub stop_angle_gap: f64,
    /// Stop once `T_est - t < stop_time_fraction * T_est` (flat barrier).
    pub stop_time_fraction: f64,
    /// Record diagnostics every this many accepted steps.
    pub sample_stride: usize,
    /// Spacing of checkpoints in the estimated rescaled time `-log(2(T_est - t)) / 2`.
    pub checkpoint_dtt: f64,
    /// Additionally checkpoint every this many steps (0 disables).
    pub checkpoint_stride: usize,
    pub max_steps: usize,
    pub t_max: Option<f64>,
    /// Combine a full step with two half steps (second order in time).
    pub richardson: bool,
    pub max_halvings: usize,
    pub run_id: String,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            cfl: 1.0,
            stop_angle_gap: 1e-2,
            stop_time_fraction: 1e-4,
            sample_stride: 10,
            checkpoint_dtt: 0.02,
            checkpoint_stride: 0,
            max_steps: 10_000_000,
            t_max: None,
            richardson: true,
            max_halvings: 20,
            run_id: "run".into(),
        }
    }
}

/// `(d theta_lo / dt, d theta_hi / dt)`.
pub fn endpoint_rates(state: &FlowState, domain: &ConvexDomain) -> Result<(f64, f64)> {
    let kappa = curvature_of_arc(&state.arc)?;
    endpoint_rates_with(&state.arc, domain, kappa[0], kappa[kappa.len() - 1])
}

fn endpoint_rates_with(arc: &SupportArc, domain: &ConvexDomain, k_lo: f64, k_hi: f64) -> Result<(f64, f64)> {
    if domain.is_flat() {
        return Ok((0.0, 0.0));
    }
    let (psi_hi, psi_lo) = sigma_arc_angles(arc.theta_lo, arc.theta_hi);
    let ks_hi = domain.eval(psi_hi)?.kappa;
    let ks_lo = domain.eval(psi_lo)?.kappa;
    Ok((-ks_lo * k_lo, ks_hi * k_hi))
}

/// Neumann residuals `(sigma_theta(lo) + sigma_S(3pi/2 + lo), sigma_theta(hi) - sigma_S(pi/2 + hi))`.
pub fn bc_residuals(state: &FlowState, domain: &ConvexDomain) -> (f64, f64) {
    let (d_lo, d_hi) = state.arc.end_slopes();
    let (g_lo, g_hi) = neumann_data(domain, state.arc.theta_lo, state.arc.theta_hi);
    (d_lo - g_lo, d_hi - g_hi)
}

/// Prescribed slopes at the two ends.
fn neumann_data(domain: &ConvexDomain, theta_lo: f64, theta_hi: f64) -> (f64, f64) {
    (
        -domain.support(THREE_HALVES_PI + theta_lo).h,
        domain.support(FRAC_PI_2 + theta_hi).h,
    )
}

/// One linearly implicit Euler step on the mapped grid `s in [0, 1]`.
pub fn step(state: &FlowState, domain: &ConvexDomain, dt: f64) -> Result<FlowState> {
    if dt == 0.0 {
        return Ok(state.clone());
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::StepRejected(format!("invalid time step {dt}")));
    }
    let arc = &state.arc;
    let n = arc.n();
    let w_old = arc.radius_of_curvature();
    if let Some((index, &radius)) = w_old.iter().enumerate().find(|(_, w)| **w <= 0.0) {
        return Err(Error::ConvexityLost { index, radius });
    }
    let (rate_lo, rate_hi) = endpoint_rates_with(arc, domain, 1.0 / w_old[0], 1.0 / w_old[n])?;
    let theta_lo = arc.theta_lo + dt * rate_lo;
    let theta_hi = arc.theta_hi + dt * rate_hi;
    if theta_hi <= theta_lo {
        return Err(Error::StepRejected("angle interval collapsed".into()));
    }
    let h = (theta_hi - theta_lo) / n as f64;
    let h2 = h * h;

    let st = Stencils::new();
    let mut m = BandMatrix::zeros(n + 1, 4, 4);
    let mut rhs = vec![0.0; n + 1];
    for i in 1..n {
        let s = i as f64 / n as f64;
        let a = (1.0 - s) * rate_lo + s * rate_hi;
        let k = dt / (w_old[i] * w_old[i]);
        let mut row = [0.0; 9];
        let (first, d2, d1) = st.interior(i, n);
        for (r, c) in row.iter_mut().zip(d2) {
            *r -= k * c / h2;
        }
        for (r, c) in row.iter_mut().zip(d1) {
            *r -= dt * a * c / h;
        }
        row[i - first] += 1.0 - k;
        for (off, &v) in row.iter().enumerate().take(6) {
            if v != 0.0 {
                m.set(i, first + off, v);
            }
        }
        rhs[i] = arc.sigma[i] - 2.0 * dt / w_old[i];
    }
    let (g_lo, g_hi) = neumann_data(domain, theta_lo, theta_hi);
    for (mm, &w) in st.end_d1.iter().enumerate() {
        m.set(0, mm, w);
        m.set(n, n - mm, -w);
    }
    rhs[0] = 12.0 * h * g_lo;
    rhs[n] = 12.0 * h * g_hi;

    let sigma = m
        .solve(&rhs)
        .ok_or_else(|| Error::StepRejected("singular banded system".into()))?;
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::StepRejected("non-finite update".into()));
    }
    let next = FlowState {
        t: state.t + dt,
        arc: SupportArc {
            theta_lo,
            theta_hi,
            sigma,
        },
    };
    let w_new = next.arc.radius_of_curvature();
    for (index, (&wn, &wo)) in w_new.iter().zip(&w_old).enumerate() {
        if wn <= 0.0 {
            return Err(Error::ConvexityLost { index, radius: wn });
        }
        if (1..n).contains(&index) && (wn / wo - 1.0).abs() > MAX_RADIUS_CHANGE {
            return Err(Error::StepRejected(format!(
                "radius of curvature changed by factor {:.3} at node {index}",
                wn / wo
            )));
        }
    }
    Ok(next)
}

/// Unit-spacing weights of the fourth-order stencils used by [`step`].
struct Stencils {
    /// One-sided first derivative at an end node (five points, numerators over 12).
    end_d1: [f64; 5],
    /// First derivative at the node next to an end (five points).
    near_d1: [f64; 5],
    /// Second derivative at the node next to an end (six points).
    near_d2: [f64; 6],
}

impl Stencils {
    fn new() -> Self {
        let scale = |w: &[f64]| -> Vec<f64> { w.iter().map(|v| v / 12.0).collect() };
        Stencils {
            end_d1: D1_END,
            near_d1: scale(&D1_NEAR).try_into().expect("five weights"),
            near_d2: scale(&D2_NEAR).try_into().expect("six weights"),
        }
    }

    /// First column and the second- and first-derivative weights for interior node `i`.
    fn interior(&self, i: usize, n: usize) -> (usize, [f64; 9], [f64; 9]) {
        let mut d2 = [0.0; 9];
        let mut d1 = [0.0; 9];
        if i == 1 {
            d2[..6].copy_from_slice(&self.near_d2);
            d1[..5].copy_from_slice(&self.near_d1);
            (0, d2, d1)
        } else if i == n - 1 {
            // mirror image; odd derivatives change sign
            for m in 0..6 {
                d2[5 - m] = self.near_d2[m];
            }
            for m in 0..5 {
                d1[5 - m] = -self.near_d1[m];
            }
            (n - 5, d2, d1)
        } else {
            d2[..5].copy_from_slice(&[-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0]);
            d1[..5].copy_from_slice(&[1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0]);
            (i - 2, d2, d1)
        }
    }
}

/// Largest relative change of the radius of curvature accepted in one step.
const MAX_RADIUS_CHANGE: f64 = 0.25;

/// `2 S(S(dt/2), dt/2) - S(dt)`, with the Neumann rows re-imposed afterwards.
pub fn richardson_step(state: &FlowState, domain: &ConvexDomain, dt: f64) -> Result<FlowState> {
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let full = step(state, domain, dt)?;
    let half = step(&step(state, domain, 0.5 * dt)?, domain, 0.5 * dt)?;
    let theta_lo = 2.0 * half.arc.theta_lo - full.arc.theta_lo;
    let theta_hi = 2.0 * half.arc.theta_hi - full.arc.theta_hi;
    let mut sigma: Vec<f64> = half
        .arc
        .sigma
        .iter()
        .zip(&full.arc.sigma)
        .map(|(a, b)| 2.0 * a - b)
        .collect();
    let n = sigma.len() - 1;
    let h = (theta_hi - theta_lo) / n as f64;
    let (g_lo, g_hi) = neumann_data(domain, theta_lo, theta_hi);
    let w = Stencils::new().end_d1;
    let tail_lo: f64 = (1..5).map(|m| w[m] * sigma[m]).sum();
    let tail_hi: f64 = (1..5).map(|m| w[m] * sigma[n - m]).sum();
    sigma[0] = (12.0 * h * g_lo - tail_lo) / w[0];
    sigma[n] = -(12.0 * h * g_hi + tail_hi) / w[0];
    let next = FlowState {
        t: state.t + dt,
        arc: SupportArc {
            theta_lo,
            theta_hi,
            sigma,
        },
    };
    curvature_of_arc(&next.arc)?;
    Ok(next)
}

/// Diagnostics of a single state.
pub fn diagnose(state: &FlowState, domain: &ConvexDomain) -> Result<DiagnosticsSample> {
    let kappa = curvature_of_arc(&state.arc)?;
    let n = kappa.len() - 1;
    let (rate_lo, rate_hi) = endpoint_rates_with(&state.arc, domain, kappa[0], kappa[n])?;
    let (r_lo, r_hi) = bc_residuals(state, domain);
    let arc = &state.arc;
    Ok(DiagnosticsSample {
        t: state.t,
        theta_lo: arc.theta_lo,
        theta_hi: arc.theta_hi,
        big_theta: arc.width(),
        area: area_unchecked(arc, domain),
        moment: first_moment_unchecked(arc, domain, 0.0),
        kappa_min: kappa.iter().cloned().fold(f64::INFINITY, f64::min),
        kappa_max: kappa.iter().cloned().fold(0.0, f64::max),
        r_lo,
        r_hi,
        dtheta_dt: rate_hi - rate_lo,
    })
}

/// Extinction time guess `t + |U| / Theta`, from `d|U|/dt = -Theta`.
fn extinction_guess(state: &FlowState, domain: &ConvexDomain) -> f64 {
    state.t + area_unchecked(&state.arc, domain) / state.arc.width()
}

fn choose_dt(state: &FlowState, t_est: f64, cfl: f64) -> f64 {
    let w_min = state
        .arc
        .radius_of_curvature()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let h = state.arc.spacing();
    let diffusive = h * h * w_min * w_min;
    let remaining = (t_est - state.t) / 50.0;
    let advective = h * w_min * w_min.min(1.0);
    cfl * diffusive.min(remaining).min(advective)
}

/// Runs the flow from `state0` until the stop criterion, a step limit or `t_max`.
pub fn run(state0: &FlowState, domain: &ConvexDomain, opts: &SolverOptions) -> Result<Trajectory> {
    let mut traj = Trajectory {
        samples: Vec::new(),
        checkpoints: Vec::new(),
        meta: TrajectoryMeta {
            run_id: opts.run_id.clone(),
            n: state0.arc.n(),
            domain_hash: domain.fingerprint(),
        },
    };
    let wrap = |t: f64, steps: usize, e: Error| Error::Run {
        t,
        steps,
        source: Box::new(e),
    };
    let mut state = state0.clone();
    let mut last_sample = diagnose(&state, domain).map_err(|e| wrap(state.t, 0, e))?;
    traj.samples.push(last_sample);
    traj.checkpoints.push(state.clone());

    let rescaled_time = |t_est: f64, t: f64| -0.5 * (2.0 * (t_est - t)).max(f64::MIN_POSITIVE).ln();
    let mut t_est = extinction_guess(&state, domain);
    let mut last_ckpt_tt = rescaled_time(t_est, state.t);
    let mut steps = 0usize;
    let mut sampled_last = true;
    let mut checkpointed_last = true;

    loop {
        let stop = if domain.is_flat() {
            t_est - state.t < opts.stop_time_fraction * t_est
        } else {
            PI - state.arc.width() < opts.stop_angle_gap
        };
        if stop || steps >= opts.max_steps || opts.t_max.is_some_and(|tm| state.t >= tm) {
            break;
        }
        let mut dt = choose_dt(&state, t_est, opts.cfl);
        if let Some(tm) = opts.t_max {
            dt = dt.min(tm - state.t);
        }
        let mut attempt = 0;
        let next = loop {
            let trial = if opts.richardson {
                richardson_step(&state, domain, dt)
            } else {
                step(&state, domain, dt)
            };
            match trial {
                Ok(s) => break s,
                Err(Error::StepRejected(_) | Error::ConvexityLost { .. }) if attempt < opts.max_halvings => {
                    attempt += 1;
                    dt *= 0.5;
                }
                Err(e) => return Err(wrap(state.t, steps, e)),
            }
        };
        state = next;
        steps += 1;
        t_est = extinction_guess(&state, domain);
        sampled_last = false;
        checkpointed_last = false;
        if opts.sample_stride > 0 && steps.is_multiple_of(opts.sample_stride) {
            last_sample = diagnose(&state, domain).map_err(|e| wrap(state.t, steps, e))?;
            traj.samples.push(last_sample);
            sampled_last = true;
        }
        let tt = rescaled_time(t_est, state.t);
        let by_time = opts.checkpoint_dtt > 0.0 && tt >= last_ckpt_tt + opts.checkpoint_dtt;
        let by_stride = opts.checkpoint_stride > 0 && steps.is_multiple_of(opts.checkpoint_stride);
        if by_time || by_stride {
            traj.checkpoints.push(state.clone());
            last_ckpt_tt = tt;
            checkpointed_last = true;
        }
    }
    if !sampled_last {
        last_sample = diagnose(&state, domain).map_err(|e| wrap(state.t, steps, e))?;
        traj.samples.push(last_sample);
    }
    if !checkpointed_last {
        traj.checkpoints.push(state);
    }
    Ok(traj)
}

/// Initial state `sigma = r0 + sum eps_j cos(j phi) + alpha cos + beta sin`
/// with `phi = pi (theta - theta_lo) / Theta`.
///
/// The translation `(alpha, beta)` places the unperturbed circle of radius
/// `r0` orthogonal to the barrier. The contact angles are then re-solved from
/// the value conditions for the perturbed end values, and a bump supported on
/// a quarter of the interval at each end removes the remaining slope mismatch.
///
/// `perturbation[j]` is the coefficient of `cos(j phi)`; `theta_window` is the
/// initial guess for the contact angles (ignored for flat barriers, whose
/// window is fixed by the barrier normal).
pub fn make_initial(
    domain: &ConvexDomain,
    r0: f64,
    perturbation: &[f64],
    theta_window: Option<(f64, f64)>,
    n: usize,
) -> Result<FlowState> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(Error::InvalidArc(format!("r0 must be positive, got {r0}")));
    }
    if n < SupportArc::MIN_INTERVALS {
        return Err(Error::InvalidArc(format!(
            "need N >= {} intervals, got {n}",
            SupportArc::MIN_INTERVALS
        )));
    }
    let end_lo = r0 + perturbation.iter().sum::<f64>();
    let end_hi = r0
        + perturbation
            .iter()
            .enumerate()
            .map(|(j, e)| if j % 2 == 0 { *e } else { -*e })
            .sum::<f64>();

    let (theta_lo, theta_hi, alpha, beta) = if domain.is_flat() {
        let psi = domain.flat_normal_angle();
        // centre the base circle on the barrier line
        let c = crate::geometry::normal(psi);
        let d = domain.flat_offset();
        (psi - THREE_HALVES_PI, psi - FRAC_PI_2, d * c[0], d * c[1])
    } else {
        let rot = domain.frame.rotation;
        let guess = theta_window.unwrap_or((rot + 0.25, rot + PI - 0.25));
        let (lo, hi, a, b) = solve_contact(domain, r0, r0, guess)?;
        let (lo, hi) = refine_contact_angles(domain, (lo, hi), (a, b), end_lo, end_hi)?;
        (lo, hi, a, b)
    };

    let width = theta_hi - theta_lo;
    let base = SupportArc::from_fn(theta_lo, theta_hi, n, |th| {
        let phi = PI * (th - theta_lo) / width;
        r0 + alpha * th.cos()
            + beta * th.sin()
            + perturbation
                .iter()
                .enumerate()
                .map(|(j, e)| e * (j as f64 * phi).cos())
                .sum::<f64>()
    })?;

    let ell = 0.25 * width;
    let bump = |x: f64| if (0.0..1.0).contains(&x) { x * (1.0 - x).powi(3) } else { 0.0 };
    let h = base.spacing();
    let left: Vec<f64> = (0..=n).map(|i| ell * bump(i as f64 * h / ell)).collect();
    let right: Vec<f64> = (0..=n).map(|i| ell * bump((n - i) as f64 * h / ell)).collect();
    let (g_lo, g_hi) = neumann_data(domain, theta_lo, theta_hi);
    let (d_lo, d_hi) = base.end_slopes();
    let unit = |v: &[f64]| SupportArc::new(theta_lo, theta_hi, v.to_vec()).map(|a| a.end_slopes());
    let (bl, _) = unit(&left)?;
    let (_, br) = unit(&right)?;
    let c_lo = (g_lo - d_lo) / bl;
    let c_hi = (g_hi - d_hi) / br;
    let sigma: Vec<f64> = (0..=n)
        .map(|i| base.sigma[i] + c_lo * left[i] + c_hi * right[i])
        .collect();
    let arc = SupportArc::new(theta_lo, theta_hi, sigma)?;
    curvature_of_arc(&arc)?;
    check_contact(&arc, domain, CONTACT_TOL)?;
    Ok(FlowState { t: 0.0, arc })
}

/// Solves for `(theta_lo, theta_hi, alpha, beta)` such that the profile with
/// end values `end_lo + alpha cos + beta sin` (resp. `end_hi`) and zero end
/// slopes before translation meets the barrier orthogonally at both ends.
///
/// For given angles the two Neumann conditions are linear in the translation;
/// the remaining value conditions `sigma(lo) = h'(3pi/2 + lo)` and
/// `sigma(hi) = -h'(pi/2 + hi)` are solved by Newton in the two angles. On a
/// disk the solutions form a one-parameter family (rotations about the
/// centre), so the Newton step is regularized and takes the minimum-norm
/// correction, which keeps the window close to the initial guess.
fn solve_contact(domain: &ConvexDomain, end_lo: f64, end_hi: f64, guess: (f64, f64)) -> Result<(f64, f64, f64, f64)> {
    let translation = |lo: f64, hi: f64| -> Option<(f64, f64)> {
        let (sl, cl) = lo.sin_cos();
        let (sh, ch) = hi.sin_cos();
        let m = [[-sl, cl], [-sh, ch]];
        let rhs = [
            -domain.support(THREE_HALVES_PI + lo).h,
            domain.support(FRAC_PI_2 + hi).h,
        ];
        solve_dense(m, rhs).map(|x| (x[0], x[1]))
    };
    let residual = |lo: f64, hi: f64| -> Option<[f64; 2]> {
        let (a, b) = translation(lo, hi)?;
        Some([
            end_lo + a * lo.cos() + b * lo.sin() - domain.support(THREE_HALVES_PI + lo).dh,
            end_hi + a * hi.cos() + b * hi.sin() + domain.support(FRAC_PI_2 + hi).dh,
        ])
    };
    let (mut lo, mut hi) = guess;
    if hi - lo > PI - 0.05 {
        // the translation solve degenerates at a full half turn
        let mid = 0.5 * (lo + hi);
        lo = mid - 0.5 * (PI - 0.05);
        hi = mid + 0.5 * (PI - 0.05);
    }
    let tol = 1e-14 * domain.scale().max(end_lo.abs()).max(end_hi.abs());
    // first keep the window centred on the guess and adjust only its width;
    // this is exact whenever the barrier is rotation invariant
    let mid = 0.5 * (lo + hi);
    let mut half = 0.5 * (hi - lo);
    for _ in 0..100 {
        let Some(f) = residual(mid - half, mid + half) else { break };
        if f[0].abs() <= tol && f[1].abs() <= tol {
            break;
        }
        let eps = 1e-7;
        let (Some(fp), Some(fm)) = (residual(mid - half - eps, mid + half + eps), residual(mid - half + eps, mid + half - eps))
        else {
            break;
        };
        let j = [(fp[0] - fm[0]) / (2.0 * eps), (fp[1] - fm[1]) / (2.0 * eps)];
        let jj = j[0] * j[0] + j[1] * j[1];
        if jj == 0.0 {
            break;
        }
        let d = ((j[0] * f[0] + j[1] * f[1]) / jj).clamp(-0.25, 0.25);
        let next = half - d;
        if !(next > 0.0 && next < 0.5 * PI) || d.abs() < 1e-17 {
            break;
        }
        half = next;
    }
    lo = mid - half;
    hi = mid + half;
    let fail = || {
        Error::ContactSolveFailed(format!(
            "no contact configuration for end values ({end_lo:.6}, {end_hi:.6})"
        ))
    };
    for _ in 0..200 {
        let f = residual(lo, hi).ok_or_else(fail)?;
        if f[0].abs() <= tol && f[1].abs() <= tol {
            if !(lo < hi && hi - lo < PI) {
                return Err(fail());
            }
            let (a, b) = translation(lo, hi).ok_or_else(fail)?;
            domain.check_convex(FRAC_PI_2 + hi, THREE_HALVES_PI + lo, 256)?;
            return Ok((lo, hi, a, b));
        }
        let eps = 1e-7;
        let mut jac = [[0.0; 2]; 2];
        for (k, (dl, dh)) in [(eps, 0.0), (0.0, eps)].into_iter().enumerate() {
            let fp = residual(lo + dl, hi + dh).ok_or_else(fail)?;
            let fm = residual(lo - dl, hi - dh).ok_or_else(fail)?;
            jac[0][k] = (fp[0] - fm[0]) / (2.0 * eps);
            jac[1][k] = (fp[1] - fm[1]) / (2.0 * eps);
        }
        let jtj = [
            [jac[0][0] * jac[0][0] + jac[1][0] * jac[1][0], jac[0][0] * jac[0][1] + jac[1][0] * jac[1][1]],
            [jac[0][0] * jac[0][1] + jac[1][0] * jac[1][1], jac[0][1] * jac[0][1] + jac[1][1] * jac[1][1]],
        ];
        let mu = 1e-12 * (jtj[0][0] + jtj[1][1]).max(f64::MIN_POSITIVE);
        let g = [jac[0][0] * f[0] + jac[1][0] * f[1], jac[0][1] * f[0] + jac[1][1] * f[1]];
        let dx = solve_dense([[jtj[0][0] + mu, jtj[0][1]], [jtj[1][0], jtj[1][1] + mu]], g).ok_or_else(fail)?;
        let damp = (0.25 / dx[0].abs().max(dx[1].abs())).min(1.0);
        lo -= damp * dx[0];
        hi -= damp * dx[1];
        if !(lo.is_finite() && hi.is_finite()) || hi - lo >= PI || hi <= lo {
            return Err(fail());
        }
    }
    Err(fail())
}

/// Newton on the two contact value conditions for the perturbed end values,
/// with the translation of the base circle held fixed. The equations decouple.
fn refine_contact_angles(
    domain: &ConvexDomain,
    start: (f64, f64),
    (a, b): (f64, f64),
    end_lo: f64,
    end_hi: f64,
) -> Result<(f64, f64)> {
    let tol = 1e-14 * domain.scale().max(end_lo.abs()).max(end_hi.abs());
    let (mut lo, mut hi) = start;
    for _ in 0..100 {
        let s_lo = domain.support(THREE_HALVES_PI + lo);
        let s_hi = domain.support(FRAC_PI_2 + hi);
        let f = [
            end_lo + a * lo.cos() + b * lo.sin() - s_lo.dh,
            end_hi + a * hi.cos() + b * hi.sin() + s_hi.dh,
        ];
        if f[0].abs() <= tol && f[1].abs() <= tol {
            if lo < hi && hi - lo < PI {
                domain.check_convex(FRAC_PI_2 + hi, THREE_HALVES_PI + lo, 256)?;
                return Ok((lo, hi));
            }
            break;
        }
        let j = [
            -a * lo.sin() + b * lo.cos() - s_lo.d2h,
            -a * hi.sin() + b * hi.cos() + s_hi.d2h,
        ];
        if j[0] == 0.0 || j[1] == 0.0 {
            break;
        }
        lo -= (f[0] / j[0]).clamp(-0.25, 0.25);
        hi -= (f[1] / j[1]).clamp(-0.25, 0.25);
    }
    Err(Error::ContactSolveFailed(format!(
        "no contact angles for end values ({end_lo:.6}, {end_hi:.6})"
    )))
}

/// Gaussian elimination with partial pivoting for a small dense system.
fn solve_dense<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..N {
            let m = a[row][col] / a[col][col];
            for k in col..N {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Extinction time from the area series and the extinction point from the
/// last checkpoint.
pub fn estimate_extinction(traj: &Trajectory, domain: &ConvexDomain) -> Result<ExtinctionEstimate> {
    let (first, last) = match (traj.samples.first(), traj.samples.last()) {
        (Some(a), Some(b)) if traj.samples.len() >= 5 => (a, b),
        _ => return Err(Error::InsufficientData("need at least five samples".into())),
    };
    if PI - last.big_theta >= 0.2 && last.area >= 0.05 * first.area {
        return Err(Error::InsufficientData(format!(
            "run stopped too early (pi - Theta = {:.3e}, area ratio {:.3e})",
            PI - last.big_theta,
            last.area / first.area
        )));
    }
    // |U| = int_t^T Theta with Theta ~ pi - g sqrt(T - s): average pi - 2g/3
    let t_fp = last.t + last.area / (PI - 2.0 / 3.0 * (PI - last.big_theta));

    let remaining = t_fp - last.t;
    let window: Vec<&DiagnosticsSample> = traj
        .samples
        .iter()
        .filter(|s| t_fp - s.t <= 10.0 * remaining)
        .collect();
    if window.len() < 5 {
        return Err(Error::InsufficientData("fewer than five samples in the last decade".into()));
    }
    let (t_ls, c, residual) = fit_area_model(&window, t_fp, last.big_theta);
    if (t_ls - t_fp).abs() > 0.01 * (t_ls - last.t) {
        return Err(Error::InconsistentFit {
            fixed_point: t_fp,
            least_squares: t_ls,
        });
    }
    let _ = c;

    let ckpt = traj
        .checkpoints
        .last()
        .ok_or_else(|| Error::InsufficientData("no checkpoints".into()))?;
    let (a, b) = ckpt.arc.endpoints();
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (psi_hi, psi_lo) = sigma_arc_angles(ckpt.arc.theta_lo, ckpt.arc.theta_hi);
    let (normal_angle, p_star) = domain.project(mid, 0.5 * (psi_hi + psi_lo));

    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in traj.samples.iter().filter(|s| t_ls - s.t <= 0.5 * t_ls && s.t < t_ls) {
        let r = (PI - s.big_theta) / (2.0 * (t_ls - s.t)).sqrt();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(ExtinctionEstimate {
        t_ext: t_ls,
        t_fixed_point: t_fp,
        p_star,
        normal_angle,
        residual,
        gap_ratio: (lo, hi),
    })
}

/// Gauss-Newton fit of `|U| = pi (T - t) + c (T - t)^{3/2}` with relative weights.
fn fit_area_model(window: &[&DiagnosticsSample], t0: f64, theta_last: f64) -> (f64, f64, f64) {
    let tau_last = (t0 - window[window.len() - 1].t).max(f64::MIN_POSITIVE);
    let mut t_ext = t0;
    let mut c = -2.0 / 3.0 * (PI - theta_last) / tau_last.sqrt();
    let residuals = |t_ext: f64, c: f64| -> Vec<(f64, f64, f64, f64)> {
        window
            .iter()
            .map(|s| {
                let tau = (t_ext - s.t).max(0.0);
                let scale = PI * (t0 - s.t).max(f64::MIN_POSITIVE);
                let model = PI * tau + c * tau * tau.sqrt();
                // residual, d/dT, d/dc, weight
                (
                    (s.area - model) / scale,
                    -(PI + 1.5 * c * tau.sqrt()) / scale,
                    -(tau * tau.sqrt()) / scale,
                    1.0,
                )
            })
            .collect()
    };
    for _ in 0..50 {
        let r = residuals(t_ext, c);
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (ri, j1, j2, _) in &r {
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            b1 += j1 * ri;
            b2 += j2 * ri;
        }
        let det = a11 * a22 - a12 * a12;
        if det.abs() < f64::MIN_POSITIVE {
            break;
        }
        let d_t = (a22 * b1 - a12 * b2) / det;
        let d_c = (a11 * b2 - a12 * b1) / det;
        t_ext -= d_t;
        c -= d_c;
        if d_t.abs() <= 1e-15 * t_ext.abs().max(1e-300) {
            break;
        }
    }
    let r = residuals(t_ext, c);
    let rms = (r.iter().map(|(ri, ..)| ri * ri).sum::<f64>() / r.len() as f64).sqrt();
    (t_ext, c, rms)
}

/// Moves the domain and all checkpoints into standard position about the
/// estimated extinction point.
pub fn normalize_trajectory(
    traj: &Trajectory,
    domain: &ConvexDomain,
    estimate: &ExtinctionEstimate,
) -> Result<(ConvexDomain, Trajectory)> {
    let standard = crate::geometry::standardize_frame(domain, estimate.p_star, estimate.normal_angle)?;
    let motion = Frame::standardizing(estimate.p_star, estimate.normal_angle);
    let checkpoints = traj
        .checkpoints
        .iter()
        .map(|c| FlowState {
            t: c.t,
            arc: motion.transform_arc(&c.arc),
        })
        .collect();
    let samples = traj
        .samples
        .iter()
        .map(|s| DiagnosticsSample {
            theta_lo: s.theta_lo + motion.rotation,
            theta_hi: s.theta_hi + motion.rotation,
            ..*s
        })
        .collect();
    Ok((
        standard.clone(),
        Trajectory {
            samples,
            checkpoints,
            meta: TrajectoryMeta {
                domain_hash: standard.fingerprint(),
                ..traj.meta.clone()
            },
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn semicircle(r: f64, n: usize) -> FlowState {
        FlowState::new(0.0, SupportArc::from_fn(0.0, PI, n, |_| r).unwrap())
    }

    #[test]
    fn endpoint_rate_examples() {
        let hp = ConvexDomain::halfplane();
        assert_eq!(endpoint_rates(&semicircle(0.7, 64), &hp).unwrap(), (0.0, 0.0));

        let r = 0.3;
        let arc = SupportArc::from_fn(0.3, PI - 0.3, 128, |_| r).unwrap();
        let state = FlowState::new(0.0, arc);
        let disk = ConvexDomain::disk(1.0).unwrap();
        let (lo, hi) = endpoint_rates(&state, &disk).unwrap();
        assert_abs_diff_eq!(hi, 1.0 / r, epsilon = 1e-10);
        assert_abs_diff_eq!(lo, -1.0 / r, epsilon = 1e-10);

        let disk2 = ConvexDomain::disk(2.0).unwrap();
        let (lo, _) = endpoint_rates(&state, &disk2).unwrap();
        assert_abs_diff_eq!(lo, -1.0 / (2.0 * r), epsilon = 1e-10);
    }

    #[test]
    fn one_step_tracks_the_shrinking_semicircle() {
        let hp = ConvexDomain::halfplane();
        let dt = 1e-3;
        let next = step(&semicircle(1.0, 64), &hp, dt).unwrap();
        let exact = (1.0f64 - 2.0 * dt).sqrt();
        for s in &next.arc.sigma {
            assert!((s - exact).abs() < 2.0 * dt * dt, "{s} vs {exact}");
        }
        let rich = richardson_step(&semicircle(1.0, 64), &hp, dt).unwrap();
        for s in &rich.arc.sigma {
            assert!((s - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let hp = ConvexDomain::halfplane();
        let s = semicircle(0.5, 32);
        assert_eq!(step(&s, &hp, 0.0).unwrap(), s);
    }

    #[test]
    fn symmetric_data_stays_symmetric() {
        let disk = ConvexDomain::disk(1.0).unwrap();
        let mut state = make_initial(&disk, 0.3, &[0.0, 0.0, 0.02], None, 128).unwrap();
        for _ in 0..5 {
            state = step(&state, &disk, 1e-5).unwrap();
        }
        let n = state.arc.n();
        assert_abs_diff_eq!(state.arc.theta_lo + state.arc.theta_hi, PI, epsilon = 1e-12);
        for i in 0..=n {
            assert_abs_diff_eq!(state.arc.sigma[i], state.arc.sigma[n - i], epsilon = 1e-12);
        }
    }

    #[test]
    fn bc_residual_examples() {
        let hp = ConvexDomain::halfplane();
        let (a, b) = bc_residuals(&semicircle(1.0, 64), &hp);
        assert_eq!((a, b), (0.0, 0.0));
        let disk = ConvexDomain::disk(1.0).unwrap();
        let (a, b) = bc_residuals(&semicircle(1.0, 64), &disk);
        assert_abs_diff_eq!(a, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 0.0, epsilon = 1e-15);
        let s = FlowState::new(0.0, SupportArc::from_fn(0.0, PI, 256, |t| 1.0 + 0.1 * (2.0 * t).cos()).unwrap());
        let (a, b) = bc_residuals(&s, &hp);
        // one-sided stencil error only
        assert!(a.abs() < 1e-4 && b.abs() < 1e-4);
    }

    #[test]
    fn make_initial_examples() {
        let hp = ConvexDomain::halfplane();
        let s = make_initial(&hp, 1.0, &[], None, 64).unwrap();
        assert_eq!((s.arc.theta_lo, s.arc.theta_hi), (0.0, PI));
        assert!(s.arc.sigma.iter().all(|v| (v - 1.0).abs() < 1e-15));

        let s = make_initial(&hp, 1.0, &[0.0, 0.0, 0.05], None, 256).unwrap();
        for (th, v) in s.arc.thetas().zip(&s.arc.sigma) {
            assert_abs_diff_eq!(*v, 1.0 + 0.05 * (2.0 * th).cos(), epsilon = 1e-5);
        }

        let disk = ConvexDomain::disk(1.0).unwrap();
        // circle of radius 0.3 orthogonal to the unit circle centred at (0, 1):
        // centre (0, 1 - sqrt(1 + r^2)), contact normals at tan(theta_lo) = r
        let r = 0.3f64;
        let s = make_initial(&disk, r, &[], None, 256).unwrap();
        assert_abs_diff_eq!(s.arc.theta_lo, r.atan(), epsilon = 1e-13);
        assert_abs_diff_eq!(s.arc.theta_hi, PI - s.arc.theta_lo, epsilon = 1e-13);
        let cy = 1.0 - (1.0 + r * r).sqrt();
        for (th, v) in s.arc.thetas().zip(&s.arc.sigma) {
            assert_abs_diff_eq!(*v, r + cy * th.sin(), epsilon = 1e-6);
        }
        let (a, b) = bc_residuals(&s, &disk);
        assert!(a.abs() <= 1e-8 && b.abs() <= 1e-8);
    }

    #[test]
    fn make_initial_rejects_unreachable_contact() {
        let disk = ConvexDomain::disk(1.0).unwrap();
        assert!(matches!(
            make_initial(&disk, 0.3, &[0.0, 5.0], None, 64),
            Err(Error::ContactSolveFailed(_))
        ));
    }

    #[test]
    fn zero_length_run_has_one_sample() {
        let hp = ConvexDomain::halfplane();
        let opts = SolverOptions {
            max_steps: 0,
            ..SolverOptions::default()
        };
        let traj = run(&semicircle(1.0, 32), &hp, &opts).unwrap();
        assert_eq!(traj.samples.len(), 1);
        assert_eq!(traj.checkpoints.len(), 1);
    }

    fn synthetic(t_ext: f64, c: f64, n: usize) -> Trajectory {
        let samples = (0..n)
            .map(|i| {
                let tau = t_ext * (1.0 - i as f64 / n as f64).powi(3).max(1e-6);
                let t = t_ext - tau;
                DiagnosticsSample {
                    t,
                    theta_lo: 0.0,
                    theta_hi: PI + 1.5 * c * tau.sqrt(),
                    big_theta: PI + 1.5 * c * tau.sqrt(),
                    area: PI * tau + c * tau.powf(1.5),
                    moment: 0.0,
                    kappa_min: 1.0,
                    kappa_max: 1.0,
                    r_lo: 0.0,
                    r_hi: 0.0,
                    dtheta_dt: 0.0,
                }
            })
            .collect();
        Trajectory {
            samples,
            checkpoints: vec![FlowState::new(0.0, SupportArc::from_fn(0.0, PI, 32, |_| 0.01).unwrap())],
            meta: TrajectoryMeta::default(),
        }
    }

    #[test]
    fn extinction_from_synthetic_series() {
        let hp = ConvexDomain::halfplane();
        let est = estimate_extinction(&synthetic(0.5, 0.0, 400), &hp).unwrap();
        assert_abs_diff_eq!(est.t_ext, 0.5, epsilon = 1e-6);
        let est = estimate_extinction(&synthetic(0.2, 0.3, 400), &hp).unwrap();
        assert_abs_diff_eq!(est.t_ext, 0.2, epsilon = 1e-5);
        assert_abs_diff_eq!(est.lambda(0.0), 1.0 / 0.4f64.sqrt(), epsilon = 1e-4);
    }

    #[test]
    fn extinction_needs_a_finished_run() {
        let mut traj = synthetic(0.5, 0.0, 50);
        for s in &mut traj.samples {
            s.big_theta = PI - 0.8;
            s.area = 1.0;
        }
        assert!(matches!(
            estimate_extinction(&traj, &ConvexDomain::halfplane()),
            Err(Error::InsufficientData(_))
        ));
    }
}
