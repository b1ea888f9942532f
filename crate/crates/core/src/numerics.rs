//! Grid calculus shared by the solver and the analysis passes: finite
//! difference stencils, quadrature, a tridiagonal solver and least squares.

/// Finite-difference weights for the `order`-th derivative at `x0` from the
/// given nodes (Fornberg's recursion). Works for non-uniform nodes.
pub fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<f64> {
    let n = nodes.len();
    assert!(n > order, "need more nodes than the derivative order");
    // c[j][k]: weight of node j for derivative k
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Weights on integer offsets (unit spacing).
pub fn unit_stencil(x0: f64, offsets: std::ops::Range<i32>, order: usize) -> Vec<f64> {
    let nodes: Vec<f64> = offsets.map(f64::from).collect();
    fd_weights(x0, &nodes, order)
}

fn apply(u: &[f64], start: usize, w: &[f64]) -> f64 {
    w.iter().zip(&u[start..start + w.len()]).map(|(a, b)| a * b).sum()
}

/// Numerators (over 12, unit spacing) of the one-sided fourth-order stencils
/// at an end node and at its neighbour, ordered from the end inwards. Integer
/// numerators keep constants exactly in the kernel.
pub const D1_END: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
pub const D1_NEAR: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
pub const D2_END: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
pub const D2_NEAR: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];

/// Fourth-order first derivative on a uniform grid (one-sided near the ends).
pub fn d1_4th(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    assert!(n >= 5);
    let (w0, w1) = (D1_END, D1_NEAR);
    let mut d = vec![0.0; n];
    d[0] = apply(u, 0, &w0) / (12.0 * h);
    d[1] = apply(u, 0, &w1) / (12.0 * h);
    for i in 2..n - 2 {
        d[i] = (-u[i + 2] + 8.0 * u[i + 1] - 8.0 * u[i - 1] + u[i - 2]) / (12.0 * h);
    }
    // mirrored stencils pick up a sign flip for odd derivatives
    let tail: Vec<f64> = u[n - 5..].iter().rev().copied().collect();
    d[n - 1] = -apply(&tail, 0, &w0) / (12.0 * h);
    d[n - 2] = -apply(&tail, 0, &w1) / (12.0 * h);
    d
}

/// Fourth-order one-sided first derivative at the left end.
pub fn d1_left_4th(u: &[f64], h: f64) -> f64 {
    apply(u, 0, &D1_END) / (12.0 * h)
}

/// Fourth-order one-sided first derivative at the right end.
pub fn d1_right_4th(u: &[f64], h: f64) -> f64 {
    let n = u.len();
    -D1_END.iter().enumerate().map(|(m, w)| w * u[n - 1 - m]).sum::<f64>() / (12.0 * h)
}

/// Second-order one-sided first derivative at the left end.
pub fn d1_left_2nd(u: &[f64], h: f64) -> f64 {
    (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
}

/// Second-order one-sided first derivative at the right end.
pub fn d1_right_2nd(u: &[f64], h: f64) -> f64 {
    let n = u.len();
    (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h)
}

/// Second-order second derivative: central inside, one-sided at the ends.
pub fn d2_2nd(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    assert!(n >= 4);
    let h2 = h * h;
    let mut d = vec![0.0; n];
    d[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h2;
    for i in 1..n - 1 {
        d[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) / h2;
    }
    d[n - 1] = (2.0 * u[n - 1] - 5.0 * u[n - 2] + 4.0 * u[n - 3] - u[n - 4]) / h2;
    d
}

/// Fourth-order second derivative on a uniform grid.
pub fn d2_4th(u: &[f64], h: f64) -> Vec<f64> {
    let n = u.len();
    assert!(n >= 6);
    let h2 = h * h;
    let (w0, w1) = (D2_END, D2_NEAR);
    let mut d = vec![0.0; n];
    d[0] = apply(u, 0, &w0) / (12.0 * h2);
    d[1] = apply(u, 0, &w1) / (12.0 * h2);
    for i in 2..n - 2 {
        d[i] = (-u[i - 2] + 16.0 * u[i - 1] - 30.0 * u[i] + 16.0 * u[i + 1] - u[i + 2]) / (12.0 * h2);
    }
    let tail: Vec<f64> = u[n - 6..].iter().rev().copied().collect();
    d[n - 1] = apply(&tail, 0, &w0) / (12.0 * h2);
    d[n - 2] = apply(&tail, 0, &w1) / (12.0 * h2);
    d
}

/// Composite Simpson rule on `n + 1` uniformly spaced samples. An odd number
/// of intervals closes with Simpson's 3/8 rule on the last three.
pub fn simpson(f: &[f64], h: f64) -> f64 {
    let intervals = f.len() - 1;
    assert!(intervals >= 2, "simpson needs at least two intervals");
    let even = if intervals.is_multiple_of(2) { intervals } else { intervals - 3 };
    let mut s = 0.0;
    if even > 0 {
        s += f[0] + f[even];
        for i in 1..even {
            s += if i % 2 == 1 { 4.0 * f[i] } else { 2.0 * f[i] };
        }
        s *= h / 3.0;
    }
    if even != intervals {
        let k = even;
        s += 3.0 * h / 8.0 * (f[k] + 3.0 * f[k + 1] + 3.0 * f[k + 2] + f[k + 3]);
    }
    s
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
/// A reversed interval yields the negated integral.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Thomas algorithm. `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return None;
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 || !beta.is_finite() {
            return None;
        }
        if i + 1 < n {
            c[i] = upper[i] / beta;
        }
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored by rows
/// with room for the fill-in of partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Sets entry `(i, j)`; panics outside the declared band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside the band");
        let k = self.slot(i, j);
        self.data[k] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Gaussian elimination with partial pivoting; `None` if singular.
    pub fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let (kl, reach) = (self.kl, self.kl + self.ku);
        let mut b = rhs.to_vec();
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let piv = (k..=last)
                .max_by(|&a, &c| self.get(a, k).abs().total_cmp(&self.get(c, k).abs()))
                .unwrap_or(k);
            if self.get(piv, k) == 0.0 || !self.get(piv, k).is_finite() {
                return None;
            }
            let right = (k + reach).min(n - 1);
            if piv != k {
                for j in k..=right {
                    let (a, c) = (self.slot(k, j), self.slot(piv, j));
                    self.data.swap(a, c);
                }
                b.swap(k, piv);
            }
            let d = self.get(k, k);
            let len = right - k + 1;
            let pivot_start = self.slot(k, k);
            for i in k + 1..=last {
                let start = self.slot(i, k);
                let f = self.data[start] / d;
                if f == 0.0 {
                    continue;
                }
                // rows are stored contiguously, so the pivot row precedes row i
                let (head, tail) = self.data.split_at_mut(start);
                let src = &head[pivot_start..pivot_start + len];
                for (x, &v) in tail[..len].iter_mut().zip(src) {
                    *x -= f * v;
                }
                b[i] -= f * b[k];
            }
        }
        for k in (0..n).rev() {
            let right = (k + reach).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=right {
                acc -= self.get(k, j) * b[j];
            }
            b[k] = acc / self.get(k, k);
        }
        Some(b)
    }
}

/// Ordinary least squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ssr: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_stderr = if x.len() > 2 && sxx > 0.0 {
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LineFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Time derivative of a sampled series at every sample, using a five-point
/// (fourth-order) stencil on the possibly non-uniform abscissae.
pub fn derivative_series(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    assert!(n >= 5, "need at least five samples");
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(2).min(n - 5);
            let w = fd_weights(t[i], &t[start..start + 5], 1);
            w.iter().zip(&y[start..start + 5]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Six-point Lagrange interpolation of samples `u` on the uniform grid
/// `x0 + i h` (the stencil shifts inward near the ends).
pub fn interp_uniform(u: &[f64], x0: f64, h: f64, x: f64) -> f64 {
    let n = u.len();
    let width = 6.min(n);
    let pos = (x - x0) / h;
    let centre = pos.floor() as i64 - (width as i64 / 2 - 1);
    let start = centre.clamp(0, (n - width) as i64) as usize;
    let nodes: Vec<f64> = (start..start + width).map(|i| i as f64).collect();
    let w = fd_weights(pos, &nodes, 0);
    w.iter().zip(&u[start..start + width]).map(|(a, b)| a * b).sum()
}

/// Four-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
    (-0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_26, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_85),
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interpolation_is_exact_for_quintics() {
        let f = |x: f64| 1.0 - 2.0 * x + 0.5 * x.powi(3) - 0.1 * x.powi(5);
        let u: Vec<f64> = (0..11).map(|i| f(0.2 * i as f64)).collect();
        for x in [0.0, 0.13, 0.95, 1.77, 2.0] {
            assert_abs_diff_eq!(interp_uniform(&u, 0.0, 0.2, x), f(x), epsilon = 1e-12);
        }
    }

    #[test]
    fn gauss4_integrates_degree_seven() {
        let s: f64 = GAUSS4.iter().map(|(x, w)| w * x.powi(6)).sum();
        assert_abs_diff_eq!(s, 2.0 / 7.0, epsilon = 1e-15);
    }

    #[test]
    fn fornberg_reproduces_classic_stencils() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], -2.0, epsilon = 1e-14);
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0], 1);
        assert_abs_diff_eq!(w[0], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w[2], -0.5, epsilon = 1e-14);
    }

    #[test]
    fn one_sided_weights_match_fornberg() {
        let check = |w: &[f64], x0: f64, order: usize| {
            let f = unit_stencil(x0, 0..w.len() as i32, order);
            for (a, b) in w.iter().zip(&f) {
                assert_abs_diff_eq!(a / 12.0, b, epsilon = 1e-12);
            }
        };
        check(&D1_END, 0.0, 1);
        check(&D1_NEAR, 1.0, 1);
        check(&D2_END, 0.0, 2);
        check(&D2_NEAR, 1.0, 2);
    }

    #[test]
    fn derivative_orders() {
        let n = 64;
        let h = 1.0 / n as f64;
        let u: Vec<f64> = (0..=n).map(|i| (2.0 * i as f64 * h).sin()).collect();
        let d1 = d1_4th(&u, h);
        let d2 = d2_4th(&u, h);
        for i in 0..=n {
            let x = i as f64 * h;
            assert_abs_diff_eq!(d1[i], 2.0 * (2.0 * x).cos(), epsilon = 1e-6);
            assert_abs_diff_eq!(d2[i], -4.0 * (2.0 * x).sin(), epsilon = 2e-5);
        }
        let d2 = d2_2nd(&u, h);
        assert_abs_diff_eq!(d2[0], 0.0, epsilon = 5e-3);
    }

    #[test]
    fn simpson_even_and_odd() {
        for n in [16usize, 17] {
            let h = std::f64::consts::PI / n as f64;
            let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).sin()).collect();
            assert_abs_diff_eq!(simpson(&f, h), 2.0, epsilon = 1e-4);
        }
        let tol = 1e-12;
        assert_abs_diff_eq!(adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, tol), 1f64.exp() - 1.0, epsilon = 1e-11);
        assert_abs_diff_eq!(adaptive_simpson(&|x: f64| x, 1.0, 0.0, tol), -0.5, epsilon = 1e-14);
    }

    #[test]
    fn thomas_matches_dense() {
        let lower = [0.0, 1.0, 1.0, 1.0];
        let diag = [4.0, 4.0, 4.0, 4.0];
        let upper = [1.0, 1.0, 1.0, 0.0];
        let x = [1.0, -2.0, 3.0, 0.5];
        let rhs: Vec<f64> = (0..4)
            .map(|i| {
                diag[i] * x[i]
                    + if i > 0 { lower[i] * x[i - 1] } else { 0.0 }
                    + if i < 3 { upper[i] * x[i + 1] } else { 0.0 }
            })
            .collect();
        let sol = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(sol[i], x[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn banded_solve_with_pivoting() {
        let n = 9;
        let (kl, ku) = (2, 3);
        let mut m = BandMatrix::zeros(n, kl, ku);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                // small diagonal forces row exchanges
                let v = if i == j { 0.01 * (i as f64 + 1.0) } else { 1.0 + ((3 * i + 5 * j) % 7) as f64 };
                m.set(i, j, v);
                dense[i][j] = v;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.2).collect();
        let rhs: Vec<f64> = dense.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
        let sol = m.solve(&rhs).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(sol[i], x[i], epsilon = 1e-11);
        }
        assert!(BandMatrix::zeros(3, 1, 1).solve(&[1.0, 1.0, 1.0]).is_none());
    }

    #[test]
    fn derivative_series_on_nonuniform_nodes() {
        let t: Vec<f64> = (0..20).map(|i| (i as f64 * 0.1).powf(1.3)).collect();
        let y: Vec<f64> = t.iter().map(|v| v.powi(3)).collect();
        let d = derivative_series(&t, &y);
        for (ti, di) in t.iter().zip(&d) {
            assert_abs_diff_eq!(*di, 3.0 * ti * ti, epsilon = 1e-10);
        }
    }
}
