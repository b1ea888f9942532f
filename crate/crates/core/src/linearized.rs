//! The linearized rescaled problem `v_t = v_thth + 2 v` on `[0, pi]` with
//! homogeneous Neumann data, whose cosine modes evolve as `exp((2 - j^2) t)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::analysis::{fit_rate, RateFit};
use crate::error::Result;
use crate::numerics::{fit_line, solve_tridiagonal};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearState {
    pub t_tilde: f64,
    /// Values on `N + 1` uniform nodes of `[0, pi]`.
    pub v: Vec<f64>,
}

impl LinearState {
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        LinearState {
            t_tilde: 0.0,
            v: (0..=n).map(|i| f(PI * i as f64 / n as f64)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.v.len() - 1
    }

    pub fn spacing(&self) -> f64 {
        PI / self.n() as f64
    }

    /// One-sided second-order estimates of `v'` at both ends.
    pub fn neumann_residuals(&self) -> (f64, f64) {
        let (v, h) = (&self.v, self.spacing());
        let n = self.n();
        (
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h),
            (3.0 * v[n] - 4.0 * v[n - 1] + v[n - 2]) / (2.0 * h),
        )
    }
}

/// Tridiagonal rows `(lower, diag, upper)` of `alpha M + beta (D + 2 M)`, where `D` is
/// the three-point Laplacian and `M = tridiag(1, 10, 1) / 12` the compact (Numerov)
/// mass matrix, both closed by even reflection at the ends.
fn rows(n: usize, h: f64, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let off_m = 1.0 / 12.0;
    let diag_m = 10.0 / 12.0;
    let off = (alpha + 2.0 * beta) * off_m + beta / (h * h);
    let diag = (alpha + 2.0 * beta) * diag_m - 2.0 * beta / (h * h);
    let mut lower = vec![off; n + 1];
    let mut upper = vec![off; n + 1];
    lower[0] = 0.0;
    upper[n] = 0.0;
    // the reflected neighbour doubles the inward coupling
    upper[0] = 2.0 * off;
    lower[n] = 2.0 * off;
    (lower, vec![diag; n + 1], upper)
}

fn apply(lower: &[f64], diag: &[f64], upper: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len() - 1;
    (0..=n)
        .map(|i| {
            let mut s = diag[i] * v[i];
            if i > 0 {
                s += lower[i] * v[i - 1];
            }
            if i < n {
                s += upper[i] * v[i + 1];
            }
            s
        })
        .collect()
}

/// Crank-Nicolson steps of size `dtt`.
///
/// The compact spatial operator is fourth order and has the sampled
/// `cos(j theta)` as exact eigenvectors, so mode shapes are preserved to round-off.
pub fn linear_evolve(state: &LinearState, dtt: f64, steps: usize) -> LinearState {
    let n = state.n();
    let h = state.spacing();
    let (la, da, ua) = rows(n, h, 1.0, -0.5 * dtt);
    let (lb, db, ub) = rows(n, h, 1.0, 0.5 * dtt);
    let mut v = state.v.clone();
    for _ in 0..steps {
        let rhs = apply(&lb, &db, &ub, &v);
        v = solve_tridiagonal(&la, &da, &ua, &rhs).expect("diagonally dominant system");
    }
    LinearState {
        t_tilde: state.t_tilde + dtt * steps as f64,
        v,
    }
}

/// Trapezoid inner product on the uniform grid; the sampled cosines are orthogonal under it.
fn inner(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() - 1;
    let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (s - 0.5 * (a[0] * b[0] + a[n] * b[n])) * PI / n as f64
}

fn cosine(n: usize, j: usize) -> Vec<f64> {
    (0..=n).map(|i| (j as f64 * PI * i as f64 / n as f64).cos()).collect()
}

/// Coefficient of `cos(j theta)` in `v`.
pub fn mode_amplitude(v: &[f64], j: usize) -> f64 {
    let c = cosine(v.len() - 1, j);
    inner(v, &c) / inner(&c, &c)
}

/// Normalized correlation of `v` with `cos(j theta)`.
pub fn mode_correlation(v: &[f64], j: usize) -> f64 {
    let c = cosine(v.len() - 1, j);
    inner(v, &c) / (inner(v, v) * inner(&c, &c)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOptions {
    pub n: usize,
    pub horizon: f64,
    pub steps: usize,
}

impl Default for LinearOptions {
    fn default() -> Self {
        LinearOptions {
            n: 256,
            horizon: 1.0,
            steps: 1000,
        }
    }
}

/// Evolves `cos(j theta)` over the horizon and fits its log amplitude against `t~`.
///
/// # Panics
/// If `j > N / 8` or the step exceeds the grid spacing.
pub fn mode_decay_fit(j: usize, opts: &LinearOptions) -> Result<RateFit> {
    assert!(j <= opts.n / 8, "mode {j} is under-resolved on {} cells", opts.n);
    let dtt = opts.horizon / opts.steps as f64;
    assert!(dtt <= PI / opts.n as f64, "step {dtt} exceeds the grid spacing");
    let mut state = LinearState::from_fn(opts.n, |x| (j as f64 * x).cos());
    let mut t = vec![0.0];
    let mut a = vec![mode_amplitude(&state.v, j)];
    for _ in 0..opts.steps {
        state = linear_evolve(&state, dtt, 1);
        t.push(state.t_tilde);
        a.push(mode_amplitude(&state.v, j));
    }
    fit_rate(&t, &a, (0.0, state.t_tilde))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub j: usize,
    /// `j^2 - 2`, the decay exponent of the continuous problem.
    pub expected: f64,
    pub fitted: f64,
    pub stderr: f64,
}

pub fn spectrum(modes: &[usize], opts: &LinearOptions) -> Result<Vec<SpectrumRow>> {
    modes
        .par_iter()
        .map(|&j| {
            let fit = mode_decay_fit(j, opts)?;
            Ok(SpectrumRow {
                j,
                expected: (j * j) as f64 - 2.0,
                fitted: fit.exponent,
                stderr: fit.stderr,
            })
        })
        .collect()
}

/// Observed order of the fitted exponents as the grid is refined (slope of
/// `log |fitted - expected|` against `log N`, negated).
pub fn spatial_order(j: usize, grids: &[usize], horizon: f64) -> Result<f64> {
    let mut x = vec![];
    let mut y = vec![];
    for &n in grids {
        // time error kept far below the spatial one
        let opts = LinearOptions {
            n,
            horizon,
            steps: 40 * n,
        };
        let fit = mode_decay_fit(j, &opts)?;
        x.push((n as f64).ln());
        y.push((fit.exponent - ((j * j) as f64 - 2.0)).abs().ln());
    }
    Ok(-fit_line(&x, &y).slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn mode_three_decays_by_exp_minus_seven_tenths() {
        let s0 = LinearState::from_fn(256, |x| (3.0 * x).cos());
        let s = linear_evolve(&s0, 0.1 / 100.0, 100);
        assert_abs_diff_eq!(s.t_tilde, 0.1, epsilon = 1e-14);
        let expected = (-0.7f64).exp();
        assert_abs_diff_eq!(expected, 0.496585, epsilon = 1e-6);
        for (i, v) in s.v.iter().enumerate() {
            let x = PI * i as f64 / 256.0;
            assert_abs_diff_eq!(*v, expected * (3.0 * x).cos(), epsilon = 1e-4 * expected);
        }
    }

    #[test]
    fn unstable_modes_grow() {
        let opts = LinearOptions {
            n: 128,
            horizon: 1.0,
            steps: 1000,
        };
        let s = linear_evolve(&LinearState::from_fn(128, |x| x.cos()), 1e-3, 1000);
        assert_abs_diff_eq!(mode_amplitude(&s.v, 1), 1f64.exp(), epsilon = 1e-5);
        let s = linear_evolve(&LinearState::from_fn(128, |_| 1.0), 1e-3, 1000);
        for v in &s.v {
            assert_abs_diff_eq!(*v, 2f64.exp(), epsilon = 1e-5);
        }
        assert_abs_diff_eq!(mode_decay_fit(0, &opts).unwrap().exponent, -2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(mode_decay_fit(1, &opts).unwrap().exponent, -1.0, epsilon = 1e-5);
    }

    #[test]
    fn fitted_exponents() {
        let rows = spectrum(&[0, 1, 2, 3], &LinearOptions::default()).unwrap();
        let tol = [0.02, 0.02, 0.02, 0.1];
        for (r, t) in rows.iter().zip(tol) {
            assert_abs_diff_eq!(r.fitted, r.expected, epsilon = t);
        }
        assert_eq!(rows[2].expected, 2.0);
        assert_eq!(rows[3].expected, 7.0);
    }

    #[test]
    fn spatial_error_is_fourth_order() {
        let order = spatial_order(4, &[32, 64, 128], 0.2).unwrap();
        assert!(order > 3.8, "order {order}");
    }

    #[test]
    fn modes_keep_their_shape_and_neumann_data() {
        for j in 0..=5 {
            let s = linear_evolve(&LinearState::from_fn(128, |x| (j as f64 * x).cos()), 5e-3, 200);
            assert!(mode_correlation(&s.v, j) >= 1.0 - 1e-6);
            let (a, b) = s.neumann_residuals();
            // the one-sided estimate itself carries O(h^2)
            assert!(a.abs() <= 1e-2 && b.abs() <= 1e-2);
        }
    }

    #[test]
    #[should_panic]
    fn under_resolved_mode_is_rejected() {
        let _ = mode_decay_fit(5, &LinearOptions { n: 32, horizon: 0.1, steps: 100 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn evolution_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let u = LinearState::from_fn(64, |x| c[0] + c[1] * (2.0 * x).cos() + c[2] * x * x);
            let w = LinearState::from_fn(64, |x| c[3] * (x - 1.0).abs());
            let sum = LinearState {
                t_tilde: 0.0,
                v: u.v.iter().zip(&w.v).map(|(p, q)| a * p + b * q).collect(),
            };
            let eu = linear_evolve(&u, 0.01, 20);
            let ew = linear_evolve(&w, 0.01, 20);
            let es = linear_evolve(&sum, 0.01, 20);
            for i in 0..=64 {
                let expected = a * eu.v[i] + b * ew.v[i];
                prop_assert!((es.v[i] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }
}
