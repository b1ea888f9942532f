//! Convex barriers and evolving arcs, both described by support functions
//! parametrised by the angle of the outward normal.
//!
//! A curve with support function `sigma(theta)` has position
//! `X = sigma N + sigma_theta T` with `N = (cos, sin)` and `T = (-sin, cos)`,
//! and curvature `1 / (sigma_thth + sigma)`. The barrier `Sigma = dOmega` is
//! handled the same way through [`ConvexDomain::support`]; the arc's endpoint
//! at `theta_lo` touches `Sigma` where its normal angle is `3pi/2 + theta_lo`,
//! the endpoint at `theta_hi` where it is `pi/2 + theta_hi`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{adaptive_simpson, d1_4th, d1_left_4th, d1_right_4th, d2_4th, simpson};

pub const THREE_HALVES_PI: f64 = 1.5 * PI;

/// Largest Fourier harmonic accepted for a barrier support function.
pub const MAX_HARMONICS: usize = 64;

/// Relative tolerance for an arc endpoint to count as sitting on the barrier.
pub const CONTACT_TOL: f64 = 1e-6;

/// Absolute tolerance of the adaptive quadrature on barrier arcs.
pub const SIGMA_QUAD_TOL: f64 = 1e-10;

pub type Point = [f64; 2];

#[inline]
pub fn normal(theta: f64) -> Point {
    [theta.cos(), theta.sin()]
}

#[inline]
pub fn tangent(theta: f64) -> Point {
    [-theta.sin(), theta.cos()]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn rotate(p: Point, angle: f64) -> Point {
    let (s, c) = angle.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

/// Sum of a quantity over the two endpoints.
pub fn boundary_sum(f_lo: f64, f_hi: f64) -> f64 {
    f_lo + f_hi
}

/// Jump of a quantity across the arc, upper end minus lower end.
pub fn boundary_diff(f_lo: f64, f_hi: f64) -> f64 {
    f_hi - f_lo
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    HalfPlane,
    Disk,
    Ellipse,
    Fourier,
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainKind::HalfPlane => "halfplane",
            DomainKind::Disk => "disk",
            DomainKind::Ellipse => "ellipse",
            DomainKind::Fourier => "fourier",
        })
    }
}

impl FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "halfplane" | "half-plane" => Ok(DomainKind::HalfPlane),
            "disk" => Ok(DomainKind::Disk),
            "ellipse" => Ok(DomainKind::Ellipse),
            "fourier" => Ok(DomainKind::Fourier),
            other => Err(Error::InvalidDomain(format!("unknown domain kind '{other}'"))),
        }
    }
}

/// Rigid motion `X -> R(rotation) X + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub rotation: f64,
    pub translation: Point,
}

impl Default for Frame {
    fn default() -> Self {
        Frame::identity()
    }
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            rotation: 0.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let r = rotate(p, self.rotation);
        [r[0] + self.translation[0], r[1] + self.translation[1]]
    }

    /// The motion that performs `self` first and then `after`.
    pub fn then(&self, after: &Frame) -> Frame {
        let t = after.apply(self.translation);
        Frame {
            rotation: self.rotation + after.rotation,
            translation: t,
        }
    }

    /// Support function of the moved curve: `sigma'(theta + rot) = sigma(theta) + t . N(theta + rot)`.
    pub fn transform_arc(&self, arc: &SupportArc) -> SupportArc {
        let sigma = arc
            .thetas()
            .zip(&arc.sigma)
            .map(|(th, s)| s + dot(self.translation, normal(th + self.rotation)))
            .collect();
        SupportArc {
            theta_lo: arc.theta_lo + self.rotation,
            theta_hi: arc.theta_hi + self.rotation,
            sigma,
        }
    }

    /// Motion taking `p` to the origin and the normal angle `normal_angle` to `3pi/2`.
    pub fn standardizing(p: Point, normal_angle: f64) -> Frame {
        let rotation = THREE_HALVES_PI - normal_angle;
        let rp = rotate(p, rotation);
        Frame {
            rotation,
            translation: [-rp[0], -rp[1]],
        }
    }
}

/// Support function value and derivatives of the barrier at one angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub h: f64,
    pub dh: f64,
    pub d2h: f64,
}

impl Support {
    pub fn radius(&self) -> f64 {
        self.d2h + self.h
    }
}

/// Result of [`ConvexDomain::eval`]: `(sigma_S, dsigma_S, kappa_S)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSample {
    pub sigma: f64,
    pub dsigma: f64,
    pub kappa: f64,
}

/// The barrier `Sigma = dOmega` of a convex planar domain.
///
/// Parameters per kind (raw frame, before `frame` is applied):
/// * `halfplane`: `[c]` for `{y >= c}` (default `c = 0`);
/// * `disk`: `[R]` centred at `(0, R)`, or `[R, cx, cy]`;
/// * `ellipse`: `[a, b]` (semi-axes along x and y) centred at `(0, b)`, or `[a, b, cx, cy]`;
/// * `fourier`: `[a0, a1, b1, a2, b2, ...]` for `h(theta) = a0 + sum a_k cos k theta + b_k sin k theta`.
///
/// The default centres put the lowest boundary point at the origin with
/// outward normal `-e2`, which is the standard position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexDomain {
    pub kind: DomainKind,
    pub params: Vec<f64>,
    pub frame: Frame,
}

impl ConvexDomain {
    pub fn new(kind: DomainKind, params: Vec<f64>) -> Result<Self> {
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidDomain("non-finite parameter".into()));
        }
        let bad = |m: &str| Err(Error::InvalidDomain(format!("{kind}: {m}")));
        match kind {
            DomainKind::HalfPlane => {
                if params.len() > 1 {
                    return bad("expects at most one parameter (offset c)");
                }
            }
            DomainKind::Disk => {
                if !(params.len() == 1 || params.len() == 3) || params[0] <= 0.0 {
                    return bad("expects [R] or [R, cx, cy] with R > 0");
                }
            }
            DomainKind::Ellipse => {
                if !(params.len() == 2 || params.len() == 4) || params[0] <= 0.0 || params[1] <= 0.0 {
                    return bad("expects [a, b] or [a, b, cx, cy] with a, b > 0");
                }
            }
            DomainKind::Fourier => {
                if params.is_empty() || params.len().is_multiple_of(2) {
                    return bad("expects [a0, a1, b1, ..., aK, bK]");
                }
                if (params.len() - 1) / 2 > MAX_HARMONICS {
                    return bad("at most 64 harmonics");
                }
            }
        }
        Ok(ConvexDomain {
            kind,
            params,
            frame: Frame::identity(),
        })
    }

    pub fn halfplane() -> Self {
        ConvexDomain::new(DomainKind::HalfPlane, vec![]).unwrap()
    }

    pub fn disk(radius: f64) -> Result<Self> {
        ConvexDomain::new(DomainKind::Disk, vec![radius])
    }

    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        ConvexDomain::new(DomainKind::Ellipse, vec![a, b])
    }

    pub fn fourier(coefficients: Vec<f64>) -> Result<Self> {
        ConvexDomain::new(DomainKind::Fourier, coefficients)
    }

    pub fn with_frame(mut self, frame: Frame) -> Self {
        self.frame = frame;
        self
    }

    /// Flat barriers have zero curvature and freeze the contact angles.
    pub fn is_flat(&self) -> bool {
        self.kind == DomainKind::HalfPlane
    }

    /// Outward normal angle of a flat barrier in the current frame.
    pub fn flat_normal_angle(&self) -> f64 {
        THREE_HALVES_PI + self.frame.rotation
    }

    /// Support value of a flat barrier in its normal direction.
    pub fn flat_offset(&self) -> f64 {
        let c = self.params.first().copied().unwrap_or(0.0);
        -c + dot(self.frame.translation, normal(self.flat_normal_angle()))
    }

    /// Characteristic length used to scale tolerances.
    pub fn scale(&self) -> f64 {
        match self.kind {
            DomainKind::HalfPlane => 1.0,
            DomainKind::Disk => self.params[0],
            DomainKind::Ellipse => self.params[0].max(self.params[1]),
            DomainKind::Fourier => self.params.iter().map(|v| v.abs()).sum::<f64>().max(f64::MIN_POSITIVE),
        }
    }

    fn raw_support(&self, a: f64) -> Support {
        let p = &self.params;
        match self.kind {
            DomainKind::HalfPlane => Support {
                h: self.flat_offset(),
                dh: 0.0,
                d2h: 0.0,
            },
            DomainKind::Disk => {
                let r = p[0];
                let c = if p.len() == 3 { [p[1], p[2]] } else { [0.0, r] };
                let n = normal(a);
                Support {
                    h: r + dot(c, n),
                    dh: dot(c, tangent(a)),
                    d2h: -dot(c, n),
                }
            }
            DomainKind::Ellipse => {
                let (ax, by) = (p[0], p[1]);
                let c = if p.len() == 4 { [p[2], p[3]] } else { [0.0, by] };
                let (s, co) = a.sin_cos();
                let g = ax * ax * co * co + by * by * s * s;
                let dg = (by * by - ax * ax) * (2.0 * a).sin();
                let d2g = 2.0 * (by * by - ax * ax) * (2.0 * a).cos();
                let root = g.sqrt();
                let n = normal(a);
                Support {
                    h: root + dot(c, n),
                    dh: dg / (2.0 * root) + dot(c, tangent(a)),
                    d2h: d2g / (2.0 * root) - dg * dg / (4.0 * g * root) - dot(c, n),
                }
            }
            DomainKind::Fourier => {
                let mut h = p[0];
                let mut dh = 0.0;
                let mut d2h = 0.0;
                for k in 1..=(p.len() - 1) / 2 {
                    let (ak, bk) = (p[2 * k - 1], p[2 * k]);
                    let kf = k as f64;
                    let (s, c) = (kf * a).sin_cos();
                    h += ak * c + bk * s;
                    dh += kf * (-ak * s + bk * c);
                    d2h -= kf * kf * (ak * c + bk * s);
                }
                Support { h, dh, d2h }
            }
        }
    }

    /// Support function of the barrier and its first two derivatives in the
    /// current frame. For a flat barrier this is the constant line offset.
    pub fn support(&self, theta: f64) -> Support {
        if self.is_flat() {
            return self.raw_support(theta);
        }
        let raw = self.raw_support(theta - self.frame.rotation);
        let t = self.frame.translation;
        let n = dot(t, normal(theta));
        Support {
            h: raw.h + n,
            dh: raw.dh + dot(t, tangent(theta)),
            d2h: raw.d2h - n,
        }
    }

    /// Barrier curvature at a normal angle, without the convexity check.
    pub fn curvature(&self, theta: f64) -> f64 {
        if self.is_flat() {
            0.0
        } else {
            1.0 / self.support(theta).radius()
        }
    }

    /// `(sigma_S, dsigma_S, kappa_S)` at a normal angle.
    pub fn eval(&self, theta: f64) -> Result<DomainSample> {
        let s = self.support(theta);
        if self.is_flat() {
            return Ok(DomainSample {
                sigma: s.h,
                dsigma: 0.0,
                kappa: 0.0,
            });
        }
        let radius = s.radius();
        if radius <= 0.0 {
            return Err(Error::NonConvexDomain { theta, radius });
        }
        Ok(DomainSample {
            sigma: s.h,
            dsigma: s.dh,
            kappa: 1.0 / radius,
        })
    }

    /// Verifies uniform convexity on a whole angular range by sampling.
    pub fn check_convex(&self, lo: f64, hi: f64, samples: usize) -> Result<()> {
        for i in 0..=samples {
            let th = lo + (hi - lo) * i as f64 / samples as f64;
            self.eval(th)?;
        }
        Ok(())
    }

    /// Boundary point whose outward normal has angle `psi` (curved barriers).
    pub fn boundary_point(&self, psi: f64) -> Point {
        let s = self.support(psi);
        let n = normal(psi);
        let t = tangent(psi);
        [s.h * n[0] + s.dh * t[0], s.h * n[1] + s.dh * t[1]]
    }

    /// Nearest boundary point to `p`, returned with its normal angle.
    pub fn project(&self, p: Point, guess: f64) -> (f64, Point) {
        if self.is_flat() {
            let psi = self.flat_normal_angle();
            let n = normal(psi);
            let off = dot(p, n) - self.flat_offset();
            return (psi, [p[0] - off * n[0], p[1] - off * n[1]]);
        }
        let mut psi = guess;
        for _ in 0..60 {
            let s = self.support(psi);
            let g = dot(p, tangent(psi)) - s.dh;
            let dg = -dot(p, normal(psi)) - s.d2h;
            if dg == 0.0 {
                break;
            }
            let step = (g / dg).clamp(-0.5, 0.5);
            psi -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        (psi, self.boundary_point(psi))
    }

    /// Stable short fingerprint of the domain description.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.kind.to_string().as_bytes());
        for p in &self.params {
            hasher.update(p.to_bits().to_le_bytes());
        }
        hasher.update(self.frame.rotation.to_bits().to_le_bytes());
        hasher.update(self.frame.translation[0].to_bits().to_le_bytes());
        hasher.update(self.frame.translation[1].to_bits().to_le_bytes());
        hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Re-expresses `domain` so that `p_star` is the origin and the outward normal
/// there is `-e2`. The composed motion is kept in `frame`.
pub fn standardize_frame(domain: &ConvexDomain, p_star: Point, normal_angle: f64) -> Result<ConvexDomain> {
    let tol = CONTACT_TOL * domain.scale();
    let residual = if domain.is_flat() {
        let angle_gap = ((normal_angle - domain.flat_normal_angle()) / TAU).round() * TAU
            - (normal_angle - domain.flat_normal_angle());
        (dot(p_star, normal(domain.flat_normal_angle())) - domain.flat_offset())
            .abs()
            .max(angle_gap.abs())
    } else {
        distance(domain.boundary_point(normal_angle), p_star)
    };
    if residual > tol {
        return Err(Error::PointNotOnBoundary { residual });
    }
    let motion = Frame::standardizing(p_star, normal_angle);
    let mut out = domain.clone();
    out.frame = domain.frame.then(&motion);
    Ok(out)
}

/// Support function of an evolving arc sampled on a uniform angle grid.
///
/// Construction checks only the grid shape; convexity is checked by
/// [`curvature_of_arc`] where it matters.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportArc {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub sigma: Vec<f64>,
}

impl SupportArc {
    pub const MIN_INTERVALS: usize = 16;

    pub fn new(theta_lo: f64, theta_hi: f64, sigma: Vec<f64>) -> Result<Self> {
        if !(theta_lo.is_finite() && theta_hi.is_finite()) || theta_lo >= theta_hi {
            return Err(Error::InvalidArc(format!("need theta_lo < theta_hi, got [{theta_lo}, {theta_hi}]")));
        }
        if sigma.len() < Self::MIN_INTERVALS + 1 {
            return Err(Error::InvalidArc(format!(
                "need N >= {} intervals, got {}",
                Self::MIN_INTERVALS,
                sigma.len().saturating_sub(1)
            )));
        }
        if sigma.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArc("non-finite sample".into()));
        }
        Ok(SupportArc {
            theta_lo,
            theta_hi,
            sigma,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(theta_lo: f64, theta_hi: f64, n: usize, f: F) -> Result<Self> {
        let h = (theta_hi - theta_lo) / n as f64;
        let sigma = (0..=n).map(|i| f(theta_lo + i as f64 * h)).collect();
        SupportArc::new(theta_lo, theta_hi, sigma)
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.sigma.len() - 1
    }

    pub fn width(&self) -> f64 {
        self.theta_hi - self.theta_lo
    }

    pub fn spacing(&self) -> f64 {
        self.width() / self.n() as f64
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.theta_lo + i as f64 * self.spacing()
    }

    pub fn thetas(&self) -> impl Iterator<Item = f64> + '_ {
        let h = self.spacing();
        (0..self.sigma.len()).map(move |i| self.theta_lo + i as f64 * h)
    }

    pub fn dsigma(&self) -> Vec<f64> {
        d1_4th(&self.sigma, self.spacing())
    }

    /// One-sided fourth-order slopes at the two ends (the boundary-condition stencil).
    pub fn end_slopes(&self) -> (f64, f64) {
        let h = self.spacing();
        (d1_left_4th(&self.sigma, h), d1_right_4th(&self.sigma, h))
    }

    /// Radius of curvature `sigma_thth + sigma`, fourth order.
    pub fn radius_of_curvature(&self) -> Vec<f64> {
        d2_4th(&self.sigma, self.spacing())
            .iter()
            .zip(&self.sigma)
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        simpson(values, self.spacing())
    }

    /// Position of the two endpoints. Uses the one-sided slopes of the
    /// boundary-condition stencil so that contact and Neumann data agree.
    pub fn endpoints(&self) -> (Point, Point) {
        let (d_lo, d_hi) = self.end_slopes();
        (
            position(self.theta_lo, self.sigma[0], d_lo),
            position(self.theta_hi, self.sigma[self.n()], d_hi),
        )
    }
}

#[inline]
pub fn position(theta: f64, sigma: f64, dsigma: f64) -> Point {
    let (s, c) = theta.sin_cos();
    [sigma * c - dsigma * s, sigma * s + dsigma * c]
}

/// Pointwise curvature `1 / (D2 sigma + sigma)`; fails if the arc is not convex.
pub fn curvature_of_arc(arc: &SupportArc) -> Result<Vec<f64>> {
    arc.radius_of_curvature()
        .into_iter()
        .enumerate()
        .map(|(index, w)| {
            if w > 0.0 {
                Ok(1.0 / w)
            } else {
                Err(Error::ConvexityLost { index, radius: w })
            }
        })
        .collect()
}

pub fn reconstruct_curve(arc: &SupportArc) -> Vec<Point> {
    let ds = arc.dsigma();
    arc.thetas()
        .zip(arc.sigma.iter().zip(&ds))
        .map(|(th, (s, d))| position(th, *s, *d))
        .collect()
}

/// `mu(sigma) = int sigma (sigma_thth + sigma) dtheta` over the arc.
pub fn mu_functional(arc: &SupportArc) -> f64 {
    let w = arc.radius_of_curvature();
    let f: Vec<f64> = arc.sigma.iter().zip(&w).map(|(s, w)| s * w).collect();
    arc.integrate(&f)
}

/// Same value as [`mu_functional`] via `int (sigma^2 - sigma_theta^2) + [sigma sigma_theta]`.
pub fn mu_by_parts(arc: &SupportArc) -> f64 {
    let ds = arc.dsigma();
    let f: Vec<f64> = arc.sigma.iter().zip(&ds).map(|(s, d)| s * s - d * d).collect();
    let n = arc.n();
    arc.integrate(&f) + arc.sigma[n] * ds[n] - arc.sigma[0] * ds[0]
}

/// Normal-angle interval `[pi/2 + theta_hi, 3pi/2 + theta_lo]` of the barrier
/// piece between the two contacts.
pub fn sigma_arc_angles(theta_lo: f64, theta_hi: f64) -> (f64, f64) {
    (FRAC_PI_2 + theta_hi, THREE_HALVES_PI + theta_lo)
}

/// Distance of each arc endpoint from the barrier point it should touch.
pub fn contact_residuals(arc: &SupportArc, domain: &ConvexDomain) -> (f64, f64) {
    let (x_lo, x_hi) = arc.endpoints();
    if domain.is_flat() {
        let n = normal(domain.flat_normal_angle());
        let d = domain.flat_offset();
        return ((dot(x_lo, n) - d).abs(), (dot(x_hi, n) - d).abs());
    }
    let (psi_hi_end, psi_lo_end) = sigma_arc_angles(arc.theta_lo, arc.theta_hi);
    (
        distance(x_lo, domain.boundary_point(psi_lo_end)),
        distance(x_hi, domain.boundary_point(psi_hi_end)),
    )
}

fn contact_scale(arc: &SupportArc) -> f64 {
    let (a, b) = arc.endpoints();
    distance(a, b).max(arc.sigma.iter().fold(0.0f64, |m, s| m.max(s.abs())))
}

/// Checks that both endpoints sit on the barrier within `rel_tol` of the arc size.
pub fn check_contact(arc: &SupportArc, domain: &ConvexDomain, rel_tol: f64) -> Result<()> {
    let (r_lo, r_hi) = contact_residuals(arc, domain);
    let residual = r_lo.max(r_hi);
    if residual > rel_tol * contact_scale(arc) {
        return Err(Error::ContactMismatch { residual });
    }
    Ok(())
}

/// `mu_Sigma = int_Sigma X . N_Sigma ds` over the barrier piece between the contacts.
pub fn mu_sigma(arc: &SupportArc, domain: &ConvexDomain) -> f64 {
    if domain.is_flat() {
        let (a, b) = arc.endpoints();
        return domain.flat_offset() * distance(a, b);
    }
    let (from, to) = sigma_arc_angles(arc.theta_lo, arc.theta_hi);
    adaptive_simpson(
        &|psi: f64| {
            let s = domain.support(psi);
            s.h * s.radius()
        },
        from,
        to,
        SIGMA_QUAD_TOL,
    )
}

/// `int_Sigma (x - p)(sigma_Sigma - p cos psi) ds`, the barrier part of `3 q(U^p)`.
pub fn nu_sigma(arc: &SupportArc, domain: &ConvexDomain, p: f64) -> f64 {
    if domain.is_flat() {
        let (a, b) = arc.endpoints();
        let psi = domain.flat_normal_angle();
        let x_mid = 0.5 * (a[0] + b[0]);
        return distance(a, b) * (x_mid - p) * (domain.flat_offset() - p * psi.cos());
    }
    let (from, to) = sigma_arc_angles(arc.theta_lo, arc.theta_hi);
    adaptive_simpson(
        &|psi: f64| {
            let s = domain.support(psi);
            let (sn, cs) = psi.sin_cos();
            let x = s.h * cs - s.dh * sn;
            (x - p) * (s.h - p * cs) * s.radius()
        },
        from,
        to,
        SIGMA_QUAD_TOL,
    )
}

/// `nu_p(sigma) = int (x - p)(sigma - p cos) (sigma_thth + sigma) dtheta` over the arc,
/// with `x = sigma cos - sigma_theta sin` the first coordinate of the curve.
pub fn nu_functional(arc: &SupportArc, p: f64) -> f64 {
    let ds = arc.dsigma();
    let w = arc.radius_of_curvature();
    let f: Vec<f64> = arc
        .thetas()
        .enumerate()
        .map(|(i, th)| {
            let (sn, cs) = th.sin_cos();
            let x = arc.sigma[i] * cs - ds[i] * sn;
            (x - p) * (arc.sigma[i] - p * cs) * w[i]
        })
        .collect();
    arc.integrate(&f)
}

/// Area enclosed by the arc and the barrier, `(mu(sigma) + mu_Sigma) / 2`,
/// without checking contact.
pub fn area_unchecked(arc: &SupportArc, domain: &ConvexDomain) -> f64 {
    0.5 * (mu_functional(arc) + mu_sigma(arc, domain))
}

/// Area enclosed by the arc and the barrier.
pub fn enclosed_area(arc: &SupportArc, domain: &ConvexDomain) -> Result<f64> {
    check_contact(arc, domain, CONTACT_TOL)?;
    Ok(area_unchecked(arc, domain))
}

/// First moment `q(U^p) = int_{U - p e1} x dX`, without checking contact.
pub fn first_moment_unchecked(arc: &SupportArc, domain: &ConvexDomain, p: f64) -> f64 {
    (nu_functional(arc, p) + nu_sigma(arc, domain, p)) / 3.0
}

pub fn first_moment(arc: &SupportArc, domain: &ConvexDomain, p: f64) -> Result<f64> {
    check_contact(arc, domain, CONTACT_TOL)?;
    Ok(first_moment_unchecked(arc, domain, p))
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(points: &[Point]) -> f64 {
    let n = points.len();
    0.5 * (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}
