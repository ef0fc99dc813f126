//! One-dimensional numerics on the graded vertical mesh: finite-difference
//! stencils, a clamped cubic spline and Gauss-Legendre rules.
//!
//! Every vertical integral in the crate (kernels, Biot-Savart, boundary
//! moments) integrates the cubic spline interpolant of nodal data, so these
//! routines fix the accuracy of the whole solver.

use num_complex::Complex64;

/// Nodes in a finite-difference stencil. Seven points give sixth-order
/// interior first derivatives on smooth meshes.
pub const STENCIL_WIDTH: usize = 7;

/// Finite-difference weights (Fornberg) for derivatives `0..=order` at `x0`.
///
/// Returns `w[k][j]`: weight of `nodes[j]` in the `k`-th derivative.
pub fn fornberg_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
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
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = t;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (t, 1.0) } else { (p1, p0) };
            dp = n as f64 * (t * pn - pn1) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - t);
        w[i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

#[derive(Debug, Clone)]
struct Stencil {
    start: usize,
    weights: [f64; STENCIL_WIDTH],
}

/// Precomputed operators on a fixed set of increasing nodes.
#[derive(Debug, Clone)]
pub struct VerticalOps {
    z: Vec<f64>,
    h: Vec<f64>,
    d1: Vec<Stencil>,
    // Thomas factorisation of the clamped-spline system in the second
    // derivatives M: sub/diag/super diagonals after elimination.
    spline_sub: Vec<f64>,
    spline_diag_inv: Vec<f64>,
    spline_sup: Vec<f64>,
}

impl VerticalOps {
    pub fn new(z: &[f64]) -> Self {
        let n = z.len();
        assert!(n >= STENCIL_WIDTH, "need at least {STENCIL_WIDTH} nodes");
        let h: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();

        let half = STENCIL_WIDTH / 2;
        let d1 = (0..n)
            .map(|j| {
                let start = j.saturating_sub(half).min(n - STENCIL_WIDTH);
                let w = fornberg_weights(z[j], &z[start..start + STENCIL_WIDTH], 1);
                let mut weights = [0.0; STENCIL_WIDTH];
                weights.copy_from_slice(&w[1]);
                Stencil { start, weights }
            })
            .collect();

        // Tridiagonal system for M with clamped ends.
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        diag[0] = 2.0 * h[0];
        sup[0] = h[0];
        for i in 1..n - 1 {
            sub[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            sup[i] = h[i];
        }
        sub[n - 1] = h[n - 2];
        diag[n - 1] = 2.0 * h[n - 2];

        let mut diag_inv = vec![0.0; n];
        let mut cprime = vec![0.0; n];
        diag_inv[0] = 1.0 / diag[0];
        cprime[0] = sup[0] * diag_inv[0];
        for i in 1..n {
            let d = diag[i] - sub[i] * cprime[i - 1];
            diag_inv[i] = 1.0 / d;
            cprime[i] = sup[i] * diag_inv[i];
        }

        Self {
            z: z.to_vec(),
            h,
            d1,
            spline_sub: sub,
            spline_diag_inv: diag_inv,
            spline_sup: cprime,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.z
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// First derivative at every node.
    pub fn derivative(&self, y: &[Complex64]) -> Vec<Complex64> {
        self.d1.iter().map(|s| apply_stencil(s, y)).collect()
    }

    pub fn derivative_real(&self, y: &[f64]) -> Vec<f64> {
        self.d1
            .iter()
            .map(|s| {
                s.weights
                    .iter()
                    .zip(&y[s.start..s.start + STENCIL_WIDTH])
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect()
    }

    /// `z * d/dz`, exact zero at the wall.
    pub fn conormal(&self, y: &[Complex64]) -> Vec<Complex64> {
        let mut d = self.derivative(y);
        for (dj, zj) in d.iter_mut().zip(&self.z) {
            *dj *= *zj;
        }
        d
    }

    fn derivative_at(&self, j: usize, y: &[Complex64]) -> Complex64 {
        apply_stencil(&self.d1[j], y)
    }

    /// Second derivatives of the clamped cubic spline through `y`, with end
    /// slopes taken from the finite-difference stencils.
    pub fn spline_second_derivatives(&self, y: &[Complex64]) -> Vec<Complex64> {
        let n = self.z.len();
        let h = &self.h;
        let mut rhs = vec![Complex64::new(0.0, 0.0); n];
        let s0 = (y[1] - y[0]) / h[0];
        rhs[0] = 6.0 * (s0 - self.derivative_at(0, y));
        for i in 1..n - 1 {
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        let sl = (y[n - 1] - y[n - 2]) / h[n - 2];
        rhs[n - 1] = 6.0 * (self.derivative_at(n - 1, y) - sl);

        // Forward sweep then back substitution.
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        d[0] = rhs[0] * self.spline_diag_inv[0];
        for i in 1..n {
            d[i] = (rhs[i] - self.spline_sub[i] * d[i - 1]) * self.spline_diag_inv[i];
        }
        for i in (0..n - 1).rev() {
            let next = d[i + 1];
            d[i] -= self.spline_sup[i] * next;
        }
        d
    }

    /// Spline value inside cell `i` at local coordinate `b` in `[0, 1]`.
    #[inline]
    pub fn spline_eval_cell(
        &self,
        i: usize,
        b: f64,
        y: &[Complex64],
        m: &[Complex64],
    ) -> Complex64 {
        let [cy0, cy1, cm0, cm1] = spline_basis(self.h[i], b);
        y[i] * cy0 + y[i + 1] * cy1 + m[i] * cm0 + m[i + 1] * cm1
    }

    /// Cell containing `x` (clamped to the mesh) and the local coordinate.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.z.len();
        if x <= self.z[0] {
            return (0, 0.0);
        }
        if x >= self.z[n - 1] {
            return (n - 2, 1.0);
        }
        let i = match self.z.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        (i, (x - self.z[i]) / self.h[i])
    }

    pub fn spline_eval(&self, x: f64, y: &[Complex64], m: &[Complex64]) -> Complex64 {
        let (i, b) = self.locate(x);
        self.spline_eval_cell(i, b, y, m)
    }

    /// Exact integral of the spline over the whole mesh.
    pub fn spline_integral(&self, y: &[Complex64], m: &[Complex64]) -> Complex64 {
        self.h
            .iter()
            .enumerate()
            .map(|(i, &h)| h * (y[i] + y[i + 1]) * 0.5 - h * h * h * (m[i] + m[i + 1]) / 24.0)
            .sum()
    }

    /// Exact integral of the spline over `[a, b]` (clipped to the mesh).
    pub fn spline_integral_between(
        &self,
        a: f64,
        b: f64,
        y: &[Complex64],
        m: &[Complex64],
    ) -> Complex64 {
        let zmax = *self.z.last().unwrap();
        let a = a.max(0.0).max(self.z[0]);
        let b = b.min(zmax);
        if b <= a {
            return Complex64::new(0.0, 0.0);
        }
        let (ia, ba) = self.locate(a);
        let (ib, bb) = self.locate(b);
        let mut total = Complex64::new(0.0, 0.0);
        for i in ia..=ib {
            let lo = if i == ia { ba } else { 0.0 };
            let hi = if i == ib { bb } else { 1.0 };
            if hi <= lo {
                continue;
            }
            total += self.h[i] * cell_poly_integral(self.h[i], lo, hi, [y[i], y[i + 1], m[i], m[i + 1]]);
        }
        total
    }
}

#[inline]
fn apply_stencil(s: &Stencil, y: &[Complex64]) -> Complex64 {
    s.weights
        .iter()
        .zip(&y[s.start..s.start + STENCIL_WIDTH])
        .map(|(w, v)| v * *w)
        .sum()
}

/// Coefficients of `(y_i, y_{i+1}, M_i, M_{i+1})` in the spline on a cell
/// of width `h` at local coordinate `b`.
#[inline]
pub fn spline_basis(h: f64, b: f64) -> [f64; 4] {
    let a = 1.0 - b;
    let h26 = h * h / 6.0;
    [a, b, (a * a * a - a) * h26, (b * b * b - b) * h26]
}

/// Integral over `b` in `[lo, hi]` (local coordinate, not scaled by h) of the
/// spline cubic with coefficients `c = (y_i, y_{i+1}, M_i, M_{i+1})`.
fn cell_poly_integral(h: f64, lo: f64, hi: f64, c: [Complex64; 4]) -> Complex64 {
    // Antiderivatives of the four basis functions in b.
    let h26 = h * h / 6.0;
    let f = |b: f64| -> [f64; 4] {
        let a = 1.0 - b;
        [
            -(a * a) / 2.0,
            b * b / 2.0,
            h26 * (-(a * a * a * a) / 4.0 + a * a / 2.0),
            h26 * (b * b * b * b / 4.0 - b * b / 2.0),
        ]
    };
    let fh = f(hi);
    let fl = f(lo);
    (0..4).map(|k| c[k] * (fh[k] - fl[k])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graded(n: usize) -> Vec<f64> {
        let beta: f64 = 3.0;
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                4.0 * ((beta * s).exp() - 1.0) / (beta.exp() - 1.0)
            })
            .collect()
    }

    fn cplx(v: Vec<f64>) -> Vec<Complex64> {
        v.into_iter().map(|x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(11)).sum();
        assert!((s - 1.0 / 12.0).abs() < 1e-15);
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fornberg_reproduces_polynomial_derivatives() {
        let nodes = [0.0, 0.1, 0.25, 0.5, 0.8];
        let w = fornberg_weights(0.3, &nodes, 2);
        let d1: f64 = w[1].iter().zip(&nodes).map(|(w, x)| w * x.powi(3)).sum();
        assert!((d1 - 3.0 * 0.09).abs() < 1e-12);
        let d2: f64 = w[2].iter().zip(&nodes).map(|(w, x)| w * x.powi(3)).sum();
        assert!((d2 - 6.0 * 0.3).abs() < 1e-11);
    }

    #[test]
    fn derivative_is_high_order_on_graded_mesh() {
        let z = graded(256);
        let ops = VerticalOps::new(&z);
        let y = cplx(z.iter().map(|&x| (-x * x).exp() * x.sin()).collect());
        let d = ops.derivative(&y);
        let err = z
            .iter()
            .zip(&d)
            .map(|(&x, dv)| {
                let exact = (-x * x).exp() * (x.cos() - 2.0 * x * x.sin());
                (dv.re - exact).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-7, "err = {err}");
    }

    #[test]
    fn spline_integral_is_accurate() {
        let z = graded(128);
        let ops = VerticalOps::new(&z);
        let y = cplx(z.iter().map(|&x| (-x).exp()).collect());
        let m = ops.spline_second_derivatives(&y);
        let exact = 1.0 - (-4.0f64).exp();
        let got = ops.spline_integral(&y, &m).re;
        assert!((got - exact).abs() < 1e-8, "{got} vs {exact}");
        let part = ops.spline_integral_between(0.3, 1.7, &y, &m).re;
        let exact_part = (-0.3f64).exp() - (-1.7f64).exp();
        assert!((part - exact_part).abs() < 1e-8);
    }

    #[test]
    fn spline_interpolates_nodes_and_midpoints() {
        let z = graded(96);
        let ops = VerticalOps::new(&z);
        let f = |x: f64| x * x * (-x * x).exp();
        let y = cplx(z.iter().map(|&x| f(x)).collect());
        let m = ops.spline_second_derivatives(&y);
        for i in 0..z.len() - 1 {
            let v = ops.spline_eval_cell(i, 0.0, &y, &m);
            assert!((v.re - y[i].re).abs() < 1e-15);
            let mid = 0.5 * (z[i] + z[i + 1]);
            let vm = ops.spline_eval(mid, &y, &m);
            assert!((vm.re - f(mid)).abs() < 5e-6, "cell {i}");
        }
    }
}
