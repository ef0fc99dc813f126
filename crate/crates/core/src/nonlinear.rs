//! Dealiased products of spectral fields, the vortex nonlinearity
//! `N = omega . grad u - u . grad omega`, and its wall moments.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::biot_savart::{recover, Recovery};
use crate::error::{Error, Result};
use crate::field::{apply_derivative, DerivativeKind, Grid, SpectralVectorField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn smooth_size(min: usize) -> usize {
    (min..)
        .find(|&n| {
            let mut r = n;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .unwrap()
}

/// Padded FFT grid for products of fields truncated at `|xi|_inf <= K`.
///
/// With `M >= 3K + 1` points per direction the truncated convolution is
/// exact; outputs beyond `dealias_bound = floor(2K/3)` are then zeroed.
#[derive(Clone)]
pub struct ProductPlan {
    k: usize,
    m: usize,
    dealias_bound: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for ProductPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProductPlan")
            .field("k", &self.k)
            .field("m", &self.m)
            .field("dealias_bound", &self.dealias_bound)
            .finish()
    }
}

impl ProductPlan {
    pub fn new(k: usize) -> Self {
        let m = smooth_size(3 * k + 1);
        let mut planner = FftPlanner::new();
        Self {
            k,
            m,
            dealias_bound: 2 * k / 3,
            fwd: planner.plan_fft(m, FftDirection::Forward),
            inv: planner.plan_fft(m, FftDirection::Inverse),
        }
    }

    pub fn fft_size(&self) -> usize {
        self.m
    }

    pub fn dealias_bound(&self) -> usize {
        self.dealias_bound
    }

    pub fn keeps(&self, xi: [i32; 2]) -> bool {
        let b = self.dealias_bound as i32;
        xi[0].abs() <= b && xi[1].abs() <= b
    }

    fn slot(&self, xi: [i32; 2]) -> usize {
        let m = self.m as i32;
        (xi[0].rem_euclid(m) * m + xi[1].rem_euclid(m)) as usize
    }

    /// Physical values of one level `z_j` of one component.
    fn to_physical(&self, grid: &Grid, f: &SpectralVectorField, comp: usize, j: usize, buf: &mut [Complex64]) {
        buf.iter_mut().for_each(|v| *v = ZERO);
        for (mi, &xi) in grid.modes().iter().enumerate() {
            buf[self.slot(xi)] = f.profile(mi, comp)[j];
        }
        let mut col = vec![ZERO; self.m];
        self.transform(buf, &self.inv, &mut col);
    }

    /// `f + i g` at level `z_j` for two real-valued fields.
    fn to_physical_pair(
        &self,
        grid: &Grid,
        f: (&SpectralVectorField, usize),
        g: (&SpectralVectorField, usize),
        j: usize,
        buf: &mut [Complex64],
        col: &mut [Complex64],
    ) {
        buf.iter_mut().for_each(|v| *v = ZERO);
        for (mi, &xi) in grid.modes().iter().enumerate() {
            buf[self.slot(xi)] = f.0.profile(mi, f.1)[j] + I * g.0.profile(mi, g.1)[j];
        }
        self.transform(buf, &self.inv, col);
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>, col: &mut [Complex64]) {
        let m = self.m;
        plan.process(buf);
        for c in 0..m {
            for r in 0..m {
                col[r] = buf[r * m + c];
            }
            plan.process(col);
            for r in 0..m {
                buf[r * m + c] = col[r];
            }
        }
    }

    /// Splits the forward transform of `a + i b` (both real) into the masked
    /// spectra of `a` and `b`, written to components `comps`.
    fn unpack_pair(&self, grid: &Grid, z: &[Complex64], out: &mut [Complex64], j: usize, nz: usize, comps: [usize; 2]) {
        let scale = 1.0 / (self.m * self.m) as f64;
        for (mi, &xi) in grid.modes().iter().enumerate() {
            let (a, b) = if self.keeps(xi) {
                let p = z[self.slot(xi)];
                let q = z[self.slot([-xi[0], -xi[1]])].conj();
                ((p + q) * (0.5 * scale), (p - q) * (-0.5 * scale) * I)
            } else {
                (ZERO, ZERO)
            };
            out[(mi * 3 + comps[0]) * nz + j] = a;
            if comps[1] != comps[0] {
                out[(mi * 3 + comps[1]) * nz + j] = b;
            }
        }
    }
}

/// Dealiased product `(f_a g_b)_xi = sum_eta f_{a,eta} g_{b,xi-eta}` of
/// component `a` of `f` and component `b` of `g`, returned in component 1
/// (index 0) of the result.
pub fn spectral_product(
    plan: &ProductPlan,
    f: &SpectralVectorField,
    a: usize,
    g: &SpectralVectorField,
    b: usize,
) -> Result<SpectralVectorField> {
    if !f.grid().same_as(g.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = f.grid().clone();
    if plan.k != grid.k() {
        return Err(Error::GridMismatch);
    }
    let nz = grid.nz();
    let mm = plan.m * plan.m;
    let levels: Vec<Vec<Complex64>> = (0..nz)
        .into_par_iter()
        .map(|j| {
            let mut x = vec![ZERO; mm];
            let mut y = vec![ZERO; mm];
            plan.to_physical(&grid, f, a, j, &mut x);
            plan.to_physical(&grid, g, b, j, &mut y);
            for (p, q) in x.iter_mut().zip(&y) {
                *p *= q;
            }
            let mut col = vec![ZERO; plan.m];
            plan.transform(&mut x, &plan.fwd, &mut col);
            x
        })
        .collect();
    let mut out = SpectralVectorField::zeros(grid.clone());
    let scale = 1.0 / mm as f64;
    for (mi, &xi) in grid.modes().iter().enumerate() {
        if !plan.keeps(xi) {
            continue;
        }
        let s = plan.slot(xi);
        let p = out.profile_mut(mi, 0);
        for j in 0..nz {
            p[j] = levels[j][s] * scale;
        }
    }
    Ok(out)
}

/// Direct `O(K^4)` truncated convolution, masked like [`spectral_product`].
pub fn direct_product(
    plan: &ProductPlan,
    f: &SpectralVectorField,
    a: usize,
    g: &SpectralVectorField,
    b: usize,
) -> Result<SpectralVectorField> {
    if !f.grid().same_as(g.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = f.grid().clone();
    let nz = grid.nz();
    let mut out = SpectralVectorField::zeros(grid.clone());
    for (mi, &xi) in grid.modes().iter().enumerate() {
        if !plan.keeps(xi) {
            continue;
        }
        let mut acc = vec![ZERO; nz];
        for (ei, &eta) in grid.modes().iter().enumerate() {
            if let Some(r) = grid.mode_index([xi[0] - eta[0], xi[1] - eta[1]]) {
                let (p, q) = (f.profile(ei, a), g.profile(r, b));
                for j in 0..nz {
                    acc[j] += p[j] * q[j];
                }
            }
        }
        out.profile_mut(mi, 0).copy_from_slice(&acc);
    }
    Ok(out)
}

/// How the vertical advection `u_3 d_z omega` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assembly {
    /// `(u_3 / z)(z d_z omega)`.
    Conormal,
    /// `u_3 (d_z omega)`.
    Direct,
}

/// Nonlinearity for a given vorticity, reusing a velocity recovery.
pub fn nonlinearity_with(
    plan: &ProductPlan,
    omega: &SpectralVectorField,
    rec: &Recovery,
    assembly: Assembly,
) -> Result<SpectralVectorField> {
    let grid = omega.grid().clone();
    if plan.k != grid.k() {
        return Err(Error::GridMismatch);
    }
    let nz = grid.nz();
    let mm = plan.m * plan.m;
    let dx_w = apply_derivative(omega, [1, 0, 0], DerivativeKind::Conormal);
    let dy_w = apply_derivative(omega, [0, 1, 0], DerivativeKind::Conormal);
    let (dz_w, adv) = match assembly {
        Assembly::Conormal => (apply_derivative(omega, [0, 0, 1], DerivativeKind::Conormal), &rec.u3_over_z),
        Assembly::Direct => (apply_derivative(omega, [0, 0, 1], DerivativeKind::Plain), &rec.u),
    };
    let dx_u = apply_derivative(&rec.u, [1, 0, 0], DerivativeKind::Conormal);
    let dy_u = apply_derivative(&rec.u, [0, 1, 0], DerivativeKind::Conormal);
    let du = [&dx_u, &dy_u, &rec.du_dz];

    // physical fields are real, so two of them share one complex transform
    let mut inputs: Vec<(&SpectralVectorField, usize)> = vec![(omega, 0), (omega, 1), (omega, 2), (&rec.u, 0), (&rec.u, 1), (adv, 2)];
    for i in 0..3 {
        inputs.extend([(du[0], i), (du[1], i), (du[2], i), (&dx_w, i), (&dy_w, i), (&dz_w, i)]);
    }
    let mut data = vec![ZERO; grid.n_modes() * 3 * nz];
    let levels: Vec<[Vec<Complex64>; 2]> = (0..nz)
        .into_par_iter()
        .map(|j| {
            let mut col = vec![ZERO; plan.m];
            let phys: Vec<Vec<Complex64>> = inputs
                .chunks(2)
                .map(|pair| {
                    let mut b = vec![ZERO; mm];
                    plan.to_physical_pair(&grid, pair[0], pair[1], j, &mut b, &mut col);
                    b
                })
                .collect();
            let val = |q: usize, p: usize| {
                let c = phys[q / 2][p];
                if q % 2 == 0 {
                    c.re
                } else {
                    c.im
                }
            };
            let mut out = [vec![ZERO; mm], vec![ZERO; mm]];
            for i in 0..3 {
                let base = 6 + 6 * i;
                for p in 0..mm {
                    let stretch = val(0, p) * val(base, p) + val(1, p) * val(base + 1, p) + val(2, p) * val(base + 2, p);
                    let advect = val(3, p) * val(base + 3, p) + val(4, p) * val(base + 4, p) + val(5, p) * val(base + 5, p);
                    let r = stretch - advect;
                    match i {
                        0 => out[0][p].re = r,
                        1 => out[0][p].im = r,
                        _ => out[1][p].re = r,
                    }
                }
            }
            for o in out.iter_mut() {
                plan.transform(o, &plan.fwd, &mut col);
            }
            out
        })
        .collect();
    for (j, lv) in levels.iter().enumerate() {
        plan.unpack_pair(&grid, &lv[0], &mut data, j, nz, [0, 1]);
        plan.unpack_pair(&grid, &lv[1], &mut data, j, nz, [2, 2]);
    }
    let mut n = SpectralVectorField::zeros(grid.clone());
    n.raw_mut().copy_from_slice(&data);
    if !n.is_finite() {
        return Err(Error::NonFinite("nonlinearity"));
    }
    n.symmetrize();
    Ok(n)
}

/// `N = omega_h . grad_h u + omega_3 d_z u - u_h . grad_h omega - (u_3/z)(z d_z omega)`.
pub fn nonlinearity_n(plan: &ProductPlan, omega: &SpectralVectorField) -> Result<SpectralVectorField> {
    let rec = recover(omega)?;
    nonlinearity_with(plan, omega, &rec, Assembly::Conormal)
}

/// Wall moments `B_xi = int_0^inf e^{-|xi| z} N_xi dz` of all three components.
pub fn boundary_data_b(omega: &SpectralVectorField, n: &SpectralVectorField) -> Result<Vec<[Complex64; 3]>> {
    if !omega.grid().same_as(n.grid()) {
        return Err(Error::GridMismatch);
    }
    let grid = n.grid().clone();
    let tables = grid.moment_tables();
    let ops = grid.ops();
    Ok((0..grid.n_modes())
        .into_par_iter()
        .map(|mi| {
            [0, 1, 2].map(|c| {
                let y = n.profile(mi, c);
                tables.wall_moment(mi, y, &ops.spline_second_derivatives(y))
            })
        })
        .collect())
}

/// Explicit-DFT collocation of `omega . grad u - u . grad omega` on an
/// `L x L` grid using `d_z` for the vertical terms; the result is projected
/// back and masked like [`nonlinearity_n`]. Slow; meant as a reference.
pub fn collocation_nonlinearity(
    plan: &ProductPlan,
    omega: &SpectralVectorField,
    points: usize,
) -> Result<SpectralVectorField> {
    let rec = recover(omega)?;
    let grid = omega.grid().clone();
    let nz = grid.nz();
    let dz_w = apply_derivative(omega, [0, 0, 1], DerivativeKind::Plain);
    let l = points;
    let two_pi = 2.0 * std::f64::consts::PI;
    let xs: Vec<f64> = (0..l).map(|p| two_pi * p as f64 / l as f64).collect();
    let phase = |xi: [i32; 2], a: usize, b: usize| Complex64::from_polar(1.0, xi[0] as f64 * xs[a] + xi[1] as f64 * xs[b]);
    let eval = |f: &dyn Fn(usize, [i32; 2]) -> Complex64| -> Vec<f64> {
        let mut out = vec![0.0; l * l];
        for a in 0..l {
            for b in 0..l {
                let mut s = ZERO;
                for (mi, &xi) in grid.modes().iter().enumerate() {
                    s += f(mi, xi) * phase(xi, a, b);
                }
                out[a * l + b] = s.re;
            }
        }
        out
    };
    let mut n = SpectralVectorField::zeros(grid.clone());
    for j in 0..nz {
        let u: Vec<Vec<f64>> = (0..3).map(|c| eval(&|m, _| rec.u.profile(m, c)[j])).collect();
        let w: Vec<Vec<f64>> = (0..3).map(|c| eval(&|m, _| omega.profile(m, c)[j])).collect();
        for i in 0..3 {
            let d_u = [
                eval(&|m, xi| I * xi[0] as f64 * rec.u.profile(m, i)[j]),
                eval(&|m, xi| I * xi[1] as f64 * rec.u.profile(m, i)[j]),
                eval(&|m, _| rec.du_dz.profile(m, i)[j]),
            ];
            let d_w = [
                eval(&|m, xi| I * xi[0] as f64 * omega.profile(m, i)[j]),
                eval(&|m, xi| I * xi[1] as f64 * omega.profile(m, i)[j]),
                eval(&|m, _| dz_w.profile(m, i)[j]),
            ];
            let vals: Vec<f64> = (0..l * l)
                .map(|p| (0..3).map(|q| w[q][p] * d_u[q][p] - u[q][p] * d_w[q][p]).sum())
                .collect();
            for (mi, &xi) in grid.modes().iter().enumerate() {
                if !plan.keeps(xi) {
                    continue;
                }
                let mut s = ZERO;
                for a in 0..l {
                    for b in 0..l {
                        s += phase(xi, a, b).conj() * vals[a * l + b];
                    }
                }
                n.profile_mut(mi, i)[j] = s / (l * l) as f64;
            }
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{make_grid, make_initial_data, InitialSpec, PhysParams, Preset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(k: usize, nz: usize, z_max: f64) -> Arc<Grid> {
        Arc::new(make_grid(k, nz, z_max, 1e-2, 0.5).unwrap())
    }

    fn random_field(g: &Arc<Grid>, seed: u64, band: i32) -> SpectralVectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SpectralVectorField::zeros(g.clone());
        for (mi, &xi) in g.modes().iter().enumerate() {
            if xi[0].abs() > band || xi[1].abs() > band {
                continue;
            }
            for c in 0..3 {
                let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                for (v, &z) in f.profile_mut(mi, c).iter_mut().zip(g.z()) {
                    *v = Complex64::new(a, b) * (-(z - 0.5 * a.abs()).powi(2)).exp();
                }
            }
        }
        f.symmetrize();
        f
    }

    fn rel(a: &SpectralVectorField, b: &SpectralVectorField) -> f64 {
        a.sub(b).unwrap().l2_norm_sq().sqrt() / b.l2_norm_sq().sqrt().max(1e-300)
    }

    #[test]
    fn fft_sizes_are_smooth() {
        assert_eq!(ProductPlan::new(8).fft_size(), 25);
        assert_eq!(ProductPlan::new(4).fft_size(), 15);
        assert_eq!(ProductPlan::new(8).dealias_bound(), 5);
    }

    #[test]
    fn constant_factor_product() {
        let g = grid(3, 32, 4.0);
        let plan = ProductPlan::new(3);
        let f = random_field(&g, 1, 1);
        let mut c = SpectralVectorField::zeros(g.clone());
        let z0 = g.mode_index([0, 0]).unwrap();
        c.profile_mut(z0, 0).iter_mut().for_each(|v| *v = Complex64::new(2.5, 0.0));
        let p = spectral_product(&plan, &c, 0, &f, 1).unwrap();
        for (mi, &xi) in g.modes().iter().enumerate() {
            if !plan.keeps(xi) {
                continue;
            }
            for (a, b) in p.profile(mi, 0).iter().zip(f.profile(mi, 1)) {
                assert!((a - b * 2.5).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn single_mode_square() {
        let g = grid(3, 32, 4.0);
        let plan = ProductPlan::new(3);
        let mut f = SpectralVectorField::zeros(g.clone());
        let m = g.mode_index([1, 0]).unwrap();
        for (v, &z) in f.profile_mut(m, 0).iter_mut().zip(g.z()) {
            *v = Complex64::new(z, 1.0);
        }
        let p = spectral_product(&plan, &f, 0, &f, 0).unwrap();
        let m2 = g.mode_index([2, 0]).unwrap();
        for (mi, _) in g.modes().iter().enumerate() {
            for (j, v) in p.profile(mi, 0).iter().enumerate() {
                let expect = if mi == m2 { f.profile(m, 0)[j].powi(2) } else { ZERO };
                assert!((v - expect).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn fft_product_equals_direct_convolution() {
        let g = grid(4, 24, 4.0);
        let plan = ProductPlan::new(4);
        let f = random_field(&g, 5, 4);
        let h = random_field(&g, 6, 4);
        let a = spectral_product(&plan, &f, 0, &h, 2).unwrap();
        let b = direct_product(&plan, &f, 0, &h, 2).unwrap();
        assert!(rel(&a, &b) < 1e-13);
    }

    #[test]
    fn shear_has_no_nonlinearity() {
        let g = grid(2, 64, 4.0);
        let plan = ProductPlan::new(2);
        let w = make_initial_data(&InitialSpec { preset: Preset::Shear, amplitude: 1.0 }, &g, &PhysParams::default()).unwrap();
        let n = nonlinearity_n(&plan, &w).unwrap();
        assert!(n.max_abs() < 1e-14);
    }

    #[test]
    fn zero_vorticity_zero_nonlinearity() {
        let g = grid(2, 32, 4.0);
        let plan = ProductPlan::new(2);
        let n = nonlinearity_n(&plan, &SpectralVectorField::zeros(g)).unwrap();
        assert_eq!(n.max_abs(), 0.0);
    }

    #[test]
    fn conormal_and_direct_assemblies_agree() {
        let g = grid(4, 64, 4.0);
        let plan = ProductPlan::new(4);
        let w = make_initial_data(&InitialSpec { preset: Preset::Random { seed: 2 }, amplitude: 1.0 }, &g, &PhysParams::default()).unwrap();
        let rec = recover(&w).unwrap();
        let a = nonlinearity_with(&plan, &w, &rec, Assembly::Conormal).unwrap();
        let b = nonlinearity_with(&plan, &w, &rec, Assembly::Direct).unwrap();
        assert!(rel(&a, &b) < 1e-12, "{}", rel(&a, &b));
    }

    #[test]
    fn matches_collocation_and_is_quadratic() {
        let g = grid(4, 48, 4.0);
        let plan = ProductPlan::new(4);
        let w = make_initial_data(&InitialSpec { preset: Preset::Random { seed: 9 }, amplitude: 1.0 }, &g, &PhysParams::default()).unwrap();
        let n = nonlinearity_n(&plan, &w).unwrap();
        let c = collocation_nonlinearity(&plan, &w, 12).unwrap();
        assert!(n.max_abs() > 1e-3);
        assert!(rel(&n, &c) < 1e-10, "{}", rel(&n, &c));
        let n3 = nonlinearity_n(&plan, &w.scaled(3.0)).unwrap();
        assert!(rel(&n3, &n.scaled(9.0)) < 1e-12);
    }

    #[test]
    fn boundary_moment_of_exponential() {
        let g = grid(1, 256, 8.0);
        let mut n = SpectralVectorField::zeros(g.clone());
        let m = g.mode_index([1, 0]).unwrap();
        for (v, &z) in n.profile_mut(m, 0).iter_mut().zip(g.z()) {
            *v = Complex64::new((-z).exp(), 0.0);
        }
        let b = boundary_data_b(&n, &n).unwrap();
        assert!((b[m][0].re - 0.5).abs() < 1e-4 * 0.5);
        assert_eq!(b[m][1], ZERO);
    }
}
