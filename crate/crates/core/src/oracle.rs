//! Lagrangian front tracking for the free-boundary flow, kept independent of the
//! support-function discretization so the two solvers can check each other.
//!
//! Points move by the curvature vector of the circle through each point and its
//! two neighbours. An endpoint uses a ghost neighbour mirrored across the barrier
//! tangent, which makes the local circle cross the barrier at a right angle, and
//! is then projected back onto the barrier. The polyline is re-spaced uniformly in
//! chord length after every step.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::analysis::{distance_to_polyline, sample_curve};
use crate::error::{Error, Result};
use crate::geometry::{dot, normal, polygon_area, tangent, ConvexDomain, Point, SupportArc, THREE_HALVES_PI};
use crate::solver::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub t: f64,
    pub points: Vec<Point>,
    /// A closed curve ignores the barrier entirely.
    pub closed: bool,
    /// Barrier normal angles at the first and last point (open curves).
    pub psi: (f64, f64),
}

impl Polyline {
    /// The curve of a support arc, ordered from the `theta_lo` end, re-spaced to `m` points.
    pub fn from_arc(t: f64, arc: &SupportArc, m: usize) -> Self {
        let dense = sample_curve(arc, 16 * m.max(arc.n()));
        Polyline {
            t,
            points: respace(&dense, m, false),
            closed: false,
            psi: (THREE_HALVES_PI + arc.theta_lo, FRAC_PI_2 + arc.theta_hi),
        }
    }

    pub fn circle(center: Point, radius: f64, m: usize) -> Self {
        Polyline {
            t: 0.0,
            points: (0..m)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / m as f64;
                    [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
                })
                .collect(),
            closed: true,
            psi: (0.0, 0.0),
        }
    }

    fn segments(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |i| dist(self.points[i], self.points[(i + 1) % n]))
    }

    pub fn min_spacing(&self) -> f64 {
        self.segments().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_spacing(&self) -> f64 {
        let (s, c) = self.segments().fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
        s / c as f64
    }

    /// Turning angle between the two end normals of an open curve, in `(0, 2 pi)`.
    pub fn turning_angle(&self) -> f64 {
        (self.psi.1 - self.psi.0 + PI).rem_euclid(2.0 * PI)
    }

    /// Area enclosed by the curve and the barrier piece between its ends.
    pub fn enclosed_area(&self, domain: &ConvexDomain) -> f64 {
        if self.closed || domain.is_flat() {
            return polygon_area(&self.points).abs();
        }
        let mut ring = self.points.clone();
        let (from, mut to) = (self.psi.1, self.psi.0);
        while to < from {
            to += 2.0 * PI;
        }
        let k = 4 * self.points.len();
        ring.extend((1..k).map(|i| domain.boundary_point(from + (to - from) * i as f64 / k as f64)));
        polygon_area(&ring).abs()
    }

    /// Angles between the curve and the barrier normal at the two ends, from the
    /// circle through the three outermost points.
    pub fn orthogonality_residuals(&self) -> (f64, f64) {
        let p = &self.points;
        let n = p.len();
        let end = |a: Point, b: Point, c: Point, psi: f64| {
            let tc = match circumcenter(a, b, c) {
                Some(o) => {
                    let r = [a[0] - o[0], a[1] - o[1]];
                    [-r[1], r[0]]
                }
                None => [b[0] - a[0], b[1] - a[1]],
            };
            let len = (tc[0] * tc[0] + tc[1] * tc[1]).sqrt();
            let nn = normal(psi);
            ((tc[0] * nn[1] - tc[1] * nn[0]) / len).abs().min(1.0).asin()
        };
        (
            end(p[0], p[1], p[2], self.psi.0),
            end(p[n - 1], p[n - 2], p[n - 3], self.psi.1),
        )
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn circumcenter(a: Point, b: Point, c: Point) -> Option<Point> {
    let u = [a[0] - b[0], a[1] - b[1]];
    let w = [c[0] - b[0], c[1] - b[1]];
    let d = 2.0 * (u[0] * w[1] - u[1] * w[0]);
    let (uu, ww) = (u[0] * u[0] + u[1] * u[1], w[0] * w[0] + w[1] * w[1]);
    if d.abs() <= 1e-14 * uu.max(ww) {
        return None;
    }
    Some([b[0] + (w[1] * uu - u[1] * ww) / d, b[1] + (u[0] * ww - w[0] * uu) / d])
}

/// Curvature vector at `b`: towards the circumcentre, with length `1 / R`.
fn curvature_vector(a: Point, b: Point, c: Point) -> Point {
    match circumcenter(a, b, c) {
        Some(o) => {
            let r = [o[0] - b[0], o[1] - b[1]];
            let r2 = r[0] * r[0] + r[1] * r[1];
            [r[0] / r2, r[1] / r2]
        }
        None => [0.0, 0.0],
    }
}

/// Mirror image of `p` across the line through `o` with direction `tau`.
fn reflect(p: Point, o: Point, tau: Point) -> Point {
    let d = [p[0] - o[0], p[1] - o[1]];
    let s = 2.0 * dot(d, tau);
    [o[0] + s * tau[0] - d[0], o[1] + s * tau[1] - d[1]]
}

fn catmull_rom(p0: Point, p1: Point, p2: Point, p3: Point, u: f64) -> Point {
    let f = |k: usize| {
        0.5 * (2.0 * p1[k]
            + (p2[k] - p0[k]) * u
            + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * u * u
            + (3.0 * p1[k] - p0[k] - 3.0 * p2[k] + p3[k]) * u * u * u)
    };
    [f(0), f(1)]
}

/// `m` points spaced uniformly in chord length along the Catmull-Rom curve through `points`.
pub fn respace(points: &[Point], m: usize, closed: bool) -> Vec<Point> {
    let n = points.len();
    let segs = if closed { n } else { n - 1 };
    let at = |i: isize| -> Point {
        if closed {
            points[i.rem_euclid(n as isize) as usize]
        } else if i < 0 {
            [2.0 * points[0][0] - points[1][0], 2.0 * points[0][1] - points[1][1]]
        } else if i as usize >= n {
            let (a, b) = (points[n - 1], points[n - 2]);
            [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
        } else {
            points[i as usize]
        }
    };
    let mut s = vec![0.0; segs + 1];
    for i in 0..segs {
        s[i + 1] = s[i] + dist(at(i as isize), at(i as isize + 1));
    }
    let total = s[segs];
    let count = if closed { m } else { m - 1 };
    let mut out = Vec::with_capacity(m);
    let mut seg = 0;
    for k in 0..m {
        if !closed && k == m - 1 {
            out.push(points[n - 1]);
            break;
        }
        let target = total * k as f64 / count as f64;
        while seg + 1 < segs && s[seg + 1] <= target {
            seg += 1;
        }
        let len = s[seg + 1] - s[seg];
        let u = if len > 0.0 { ((target - s[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let i = seg as isize;
        out.push(catmull_rom(at(i - 1), at(i), at(i + 1), at(i + 2), u));
    }
    out
}

/// Ratio bounds of segment length to the mean, checked before re-spacing.
pub const SPACING_BOUNDS: (f64, f64) = (0.2, 5.0);

/// One explicit step of size `dt`, followed by re-spacing.
pub fn oracle_step(line: &Polyline, domain: &ConvexDomain, dt: f64) -> Result<Polyline> {
    let p = &line.points;
    let n = p.len();
    let mut next = p.clone();
    let mut psi = line.psi;
    if line.closed {
        for i in 0..n {
            let k = curvature_vector(p[(i + n - 1) % n], p[i], p[(i + 1) % n]);
            next[i] = [p[i][0] + dt * k[0], p[i][1] + dt * k[1]];
        }
    } else {
        for i in 1..n - 1 {
            let k = curvature_vector(p[i - 1], p[i], p[i + 1]);
            next[i] = [p[i][0] + dt * k[0], p[i][1] + dt * k[1]];
        }
        let mut end = |i: usize, inner: usize, guess: f64| -> f64 {
            let ghost = reflect(p[inner], p[i], tangent(guess));
            let k = curvature_vector(ghost, p[i], p[inner]);
            let moved = [p[i][0] + dt * k[0], p[i][1] + dt * k[1]];
            let (psi_new, on) = domain.project(moved, guess);
            next[i] = on;
            psi_new
        };
        psi.0 = end(0, 1, line.psi.0);
        psi.1 = end(n - 1, n - 2, line.psi.1);
    }
    let moved = Polyline {
        t: line.t + dt,
        points: next,
        closed: line.closed,
        psi,
    };
    let mean = moved.mean_spacing();
    let (lo, hi) = moved
        .segments()
        .fold((f64::INFINITY, 0.0f64), |(a, b), d| (a.min(d), b.max(d)));
    if lo < SPACING_BOUNDS.0 * mean || hi > SPACING_BOUNDS.1 * mean {
        return Err(Error::SpacingCollapse(lo / mean));
    }
    Ok(Polyline {
        points: respace(&moved.points, n, line.closed),
        ..moved
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Points on the polyline.
    pub m: usize,
    /// `dt = cfl * (min spacing)^2`.
    pub cfl: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { m: 400, cfl: 0.2 }
    }
}

/// Advances `initial` and returns the polyline at each of the increasing `times`.
pub fn oracle_run(initial: &Polyline, domain: &ConvexDomain, times: &[f64], opts: &OracleOptions) -> Result<Vec<Polyline>> {
    let mut line = initial.clone();
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while line.t < target {
            let h = line.min_spacing();
            let dt = (opts.cfl * h * h).min(target - line.t);
            let mut next = oracle_step(&line, domain, dt)?;
            if target - next.t <= 1e-14 * target.abs().max(1.0) {
                next.t = target;
            }
            line = next;
        }
        out.push(line.clone());
    }
    Ok(out)
}

/// Symmetric Hausdorff distance between two polylines, measured from the vertices
/// of each to the segments of the other.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let one = |x: &[Point], y: &[Point]| {
        x.par_iter()
            .map(|&p| distance_to_polyline(p, y))
            .reduce(|| 0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub max: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Times closer than this (relative) are treated as the same instant.
pub const TIME_MATCH: f64 = 1e-9;

/// Hausdorff distance between the support-function curve and the oracle curve at
/// each sample time present in both.
pub fn compare_solvers(traj: &Trajectory, oracle: &[Polyline], sample_times: &[f64]) -> Result<Comparison> {
    let same = |a: f64, b: f64| (a - b).abs() <= TIME_MATCH * a.abs().max(b.abs()).max(1e-300);
    let pairs: Vec<_> = sample_times
        .iter()
        .filter_map(|&t| {
            let c = traj.checkpoints.iter().find(|c| same(c.t, t))?;
            let o = oracle.iter().find(|o| same(o.t, t))?;
            Some((t, c, o))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let rows: Vec<ComparisonRow> = pairs
        .iter()
        .map(|(t, c, o)| {
            let curve = sample_curve(&c.arc, 8 * o.points.len().max(c.arc.n()));
            ComparisonRow {
                t: *t,
                distance: hausdorff(&curve, &o.points),
            }
        })
        .collect();
    Ok(Comparison {
        max: rows.iter().map(|r| r.distance).fold(0.0, f64::max),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{FlowState, TrajectoryMeta};
    use approx::assert_abs_diff_eq;

    fn radius(line: &Polyline, center: Point) -> (f64, f64) {
        line.points.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| {
            let r = dist(*p, center);
            (a.min(r), b.max(r))
        })
    }

    #[test]
    fn shrinking_semicircle() {
        let hp = ConvexDomain::halfplane();
        let arc = SupportArc::from_fn(0.0, PI, 64, |_| 1.0).unwrap();
        let start = Polyline::from_arc(0.0, &arc, 400);
        let times: Vec<f64> = (1..=4).map(|k| 0.1 * k as f64 * 0.5).collect();
        let lines = oracle_run(&start, &hp, &times, &OracleOptions::default()).unwrap();
        for (t, line) in times.iter().zip(&lines) {
            assert_eq!(line.t, *t);
            let exact = (1.0 - 2.0 * t).sqrt();
            let (lo, hi) = radius(line, [0.0, 0.0]);
            assert!((lo - exact).abs() <= 1e-4 * exact && (hi - exact).abs() <= 1e-4 * exact, "{t}: {lo} {hi} {exact}");
            let (a, b) = line.orthogonality_residuals();
            assert!(a <= 1e-3 && b <= 1e-3);
            assert!(line.points[0][1].abs() < 1e-15 && line.points[399][1].abs() < 1e-15);
        }
    }

    #[test]
    fn zero_step_only_respaces() {
        // equal chords are a fixed point of the re-spacing
        let line = Polyline {
            t: 0.0,
            points: (0..200).map(|i| {
                let a = PI * i as f64 / 199.0;
                [a.cos(), a.sin()]
            }).collect(),
            closed: false,
            psi: (THREE_HALVES_PI, THREE_HALVES_PI),
        };
        let same = oracle_step(&line, &ConvexDomain::halfplane(), 0.0).unwrap();
        for (a, b) in line.points.iter().zip(&same.points) {
            assert!(dist(*a, *b) <= 1e-12);
        }
        // a re-spaced curve is nearly one
        let arc = SupportArc::from_fn(0.0, PI, 64, |_| 1.0).unwrap();
        let line = Polyline::from_arc(0.0, &arc, 200);
        let again = oracle_step(&line, &ConvexDomain::halfplane(), 0.0).unwrap();
        for (a, b) in line.points.iter().zip(&again.points) {
            assert!(dist(*a, *b) <= 1e-6);
        }
        let c = Polyline::circle([0.3, -0.2], 1.0, 100);
        let same = oracle_step(&c, &ConvexDomain::halfplane(), 0.0).unwrap();
        for (a, b) in c.points.iter().zip(&same.points) {
            assert!(dist(*a, *b) <= 1e-12);
        }
    }

    #[test]
    fn round_circle() {
        let c = Polyline::circle([0.3, -0.2], 1.0, 300);
        let lines = oracle_run(&c, &ConvexDomain::halfplane(), &[0.2, 0.4], &OracleOptions::default()).unwrap();
        for line in &lines {
            let exact = (1.0 - 2.0 * line.t).sqrt();
            let (lo, hi) = radius(line, [0.3, -0.2]);
            assert_abs_diff_eq!(lo, exact, epsilon = 1e-4 * exact);
            assert_abs_diff_eq!(hi, exact, epsilon = 1e-4 * exact);
        }
    }

    #[test]
    fn area_decreases_at_the_turning_angle() {
        let disk = ConvexDomain::disk(1.0).unwrap();
        let s0 = crate::solver::make_initial(&disk, 0.3, &[0.0, 0.0, 0.02], None, 128).unwrap();
        let line = Polyline::from_arc(0.0, &s0.arc, 300);
        let opts = OracleOptions::default();
        let dt = 1e-4;
        let lines = oracle_run(&line, &disk, &[0.005, 0.005 + dt], &opts).unwrap();
        let rate = (lines[1].enclosed_area(&disk) - lines[0].enclosed_area(&disk)) / dt;
        let theta = lines[0].turning_angle();
        assert!((rate + theta).abs() <= 0.01 * theta, "{rate} vs {theta}");
        let (a, b) = lines[1].orthogonality_residuals();
        assert!(a <= 1e-3 && b <= 1e-3, "{a} {b}");
    }

    #[test]
    fn respacing_is_uniform() {
        let pts: Vec<Point> = (0..=50).map(|i| {
            let a = PI * (i as f64 / 50.0).powi(2);
            [a.cos(), a.sin()]
        }).collect();
        let r = respace(&pts, 200, false);
        let line = Polyline { t: 0.0, points: r, closed: false, psi: (0.0, 0.0) };
        assert!(line.min_spacing() >= 0.9 * line.mean_spacing());
        assert_eq!(line.points[0], pts[0]);
        assert_eq!(line.points[199], pts[50]);
    }

    #[test]
    fn spacing_collapse_is_reported() {
        let mut pts: Vec<Point> = (0..20).map(|i| [i as f64 * 0.1, 0.0]).collect();
        pts[10] = [0.905, 0.0];
        let line = Polyline { t: 0.0, points: pts, closed: false, psi: (THREE_HALVES_PI, THREE_HALVES_PI) };
        assert!(matches!(
            oracle_step(&line, &ConvexDomain::halfplane(), 0.0),
            Err(Error::SpacingCollapse(_))
        ));
    }

    #[test]
    fn comparison_of_identical_curves() {
        let arcs: Vec<FlowState> = [0.0, 0.1]
            .iter()
            .map(|&t| FlowState::new(t, SupportArc::from_fn(0.0, PI, 128, |_| (1.0 - 2.0 * t).sqrt()).unwrap()))
            .collect();
        let oracle: Vec<Polyline> = arcs.iter().map(|c| Polyline::from_arc(c.t, &c.arc, 400)).collect();
        let traj = Trajectory {
            samples: vec![],
            checkpoints: arcs,
            meta: TrajectoryMeta::default(),
        };
        let cmp = compare_solvers(&traj, &oracle, &[0.0, 0.1, 0.3]).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        // only the chord error of the 400-point polyline remains
        assert!(cmp.max <= 1e-5);
        assert!(matches!(compare_solvers(&traj, &oracle, &[0.5]), Err(Error::NoOverlap)));
    }

    #[test]
    fn hausdorff_of_offset_curves() {
        let a: Vec<Point> = (0..=100).map(|i| [i as f64 / 100.0, 0.0]).collect();
        let b: Vec<Point> = (0..=100).map(|i| [i as f64 / 100.0, 0.01]).collect();
        assert_abs_diff_eq!(hausdorff(&a, &b), 0.01, epsilon = 1e-15);
        assert_eq!(hausdorff(&a, &a), 0.0);
    }
}
