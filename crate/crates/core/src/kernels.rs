//! One-dimensional Green's functions in `z` for the per-mode Stokes problem
//! `f_t = nu (f_zz - |xi|^2 f)` on the half line, and their discrete
//! counterparts acting on mesh profiles.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{xi_norm, Grid, SpectralVectorField};
use crate::special::{erfc, erfcx};
use crate::vertical::gauss_legendre_unit;

/// Arguments of a kernel evaluation `G(t, z, zbar)` for a mode of size `xi_mag`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelQuery {
    pub t: f64,
    pub nu: f64,
    pub xi_mag: f64,
    pub z: f64,
    pub zbar: f64,
}

impl KernelQuery {
    pub fn new(t: f64, nu: f64, xi_mag: f64, z: f64, zbar: f64) -> Self {
        Self { t, nu, xi_mag, z, zbar }
    }

    fn check(&self) -> Result<()> {
        if !(self.t > 0.0) {
            return Err(Error::InvalidArgument(format!("kernel time t = {} must be positive", self.t)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidArgument(format!("nu = {} must be positive", self.nu)));
        }
        if !(self.xi_mag >= 0.0) || !(self.z >= 0.0) || !(self.zbar >= 0.0) {
            return Err(Error::InvalidArgument("xi_mag, z, zbar must be nonnegative".into()));
        }
        Ok(())
    }

    /// `b = |xi| + nu^{-1/2}`.
    pub fn b(&self) -> f64 {
        self.xi_mag + 1.0 / self.nu.sqrt()
    }
}

#[inline]
fn gauss(nu_t: f64, d: f64) -> f64 {
    (-d * d / (4.0 * nu_t)).exp() / (4.0 * PI * nu_t).sqrt()
}

/// Half-line heat kernel with reflecting image, damped by `e^{-nu |xi|^2 t}`.
pub fn heat_neumann(q: &KernelQuery) -> Result<f64> {
    q.check()?;
    let nt = q.nu * q.t;
    let damp = (-q.nu * q.xi_mag * q.xi_mag * q.t).exp();
    Ok((gauss(nt, q.z - q.zbar) + gauss(nt, q.z + q.zbar)) * damp)
}

/// Half-line heat kernel with absorbing image.
pub fn heat_dirichlet(q: &KernelQuery) -> Result<f64> {
    q.check()?;
    if q.z == 0.0 || q.zbar == 0.0 {
        return Ok(0.0);
    }
    let nt = q.nu * q.t;
    let damp = (-q.nu * q.xi_mag * q.xi_mag * q.t).exp();
    Ok((gauss(nt, q.z - q.zbar) - gauss(nt, q.z + q.zbar)).max(0.0) * damp)
}

/// `R = k e^{-k s} erfc(s / (2 sqrt(nu t)) - k sqrt(nu t))` with `s = z + zbar`,
/// the correction turning the Neumann kernel into the Robin kernel for
/// `(d_z + k) f = 0`.
pub(crate) fn residual_raw(nu_t: f64, k: f64, s: f64) -> f64 {
    if k == 0.0 {
        return 0.0;
    }
    let r = nu_t.sqrt();
    let y = s / (2.0 * r) - k * r;
    if y > 0.0 {
        k * erfcx(y) * (-s * s / (4.0 * nu_t) - k * k * nu_t).exp()
    } else {
        k * (-k * s).exp() * erfc(y)
    }
}

pub fn robin_residual(q: &KernelQuery) -> Result<f64> {
    q.check()?;
    Ok(residual_raw(q.nu * q.t, q.xi_mag, q.z + q.zbar))
}

/// Green's function of `f_t = nu (f_zz - |xi|^2 f)` with `(d_z + |xi|) f = 0` at the wall.
pub fn robin_g1(q: &KernelQuery) -> Result<f64> {
    Ok(heat_neumann(q)? + robin_residual(q)?)
}

/// The envelope `b e^{-theta b s} + (nu t)^{-1/2} e^{-theta s^2 / (nu t)} e^{-nu k^2 t / 8}`.
pub fn residual_envelope(q: &KernelQuery, theta: f64) -> f64 {
    let b = q.b();
    let s = q.z + q.zbar;
    let nt = q.nu * q.t;
    b * (-theta * b * s).exp()
        + (-theta * s * s / nt).exp() * (-nt * q.xi_mag * q.xi_mag / 8.0).exp() / nt.sqrt()
}

fn log_residual(nu_t: f64, k: f64, s: f64) -> f64 {
    let r = nu_t.sqrt();
    let y = s / (2.0 * r) - k * r;
    if y > 0.0 {
        k.ln() + erfcx(y).ln() - s * s / (4.0 * nu_t) - k * k * nu_t
    } else {
        k.ln() - k * s + erfc(y).ln()
    }
}

fn log_envelope(nu: f64, t: f64, k: f64, s: f64, theta: f64) -> f64 {
    let b = k + 1.0 / nu.sqrt();
    let nt = nu * t;
    let x = b.ln() - theta * b * s;
    let y = -theta * s * s / nt - nt * k * k / 8.0 - 0.5 * nt.ln();
    let m = x.max(y);
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// Log-spaced sample set for the residual bound fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitGrid {
    pub times: Vec<f64>,
    /// used for both `z` and `zbar`
    pub heights: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl Default for FitGrid {
    fn default() -> Self {
        let logspace = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
        };
        let mut heights = vec![0.0];
        heights.extend(logspace(-4.0, 4f64.log10(), 25));
        Self {
            times: logspace(-3.0, 0.0, 13),
            heights,
            thetas: (1..=800).map(|i| 0.005 * i as f64).collect(),
        }
    }
}

/// Result of fitting `|G_1 - H| <= C (envelope with rate theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualFit {
    pub nu: f64,
    /// largest sampled theta whose constant is at most twice `c_floor`
    pub theta: f64,
    pub c: f64,
    /// constant needed as theta goes to zero
    pub c_floor: f64,
}

/// Smallest `C` with `|R| <= C envelope(theta)` over the samples.
pub fn residual_constant(nu: f64, xi_mags: &[f64], grid: &FitGrid, theta: f64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for &k in xi_mags.iter().filter(|&&k| k > 0.0) {
        for &t in &grid.times {
            for &z in &grid.heights {
                for &zb in &grid.heights {
                    let s = z + zb;
                    worst = worst.max(log_residual(nu * t, k, s) - log_envelope(nu, t, k, s, theta));
                }
            }
        }
    }
    worst.exp()
}

pub fn fit_residual_bound(nu: f64, xi_mags: &[f64], grid: &FitGrid) -> Result<ResidualFit> {
    if !(nu > 0.0 && nu <= 1.0) || grid.thetas.is_empty() {
        return Err(Error::InvalidArgument(format!("residual fit with nu = {nu}")));
    }
    let cs: Vec<f64> = grid.thetas.par_iter().map(|&th| residual_constant(nu, xi_mags, grid, th)).collect();
    let c_floor = cs[0];
    let (theta, c) = grid
        .thetas
        .iter()
        .zip(&cs)
        .filter(|(_, &c)| c <= 2.0 * c_floor)
        .map(|(&t, &c)| (t, c))
        .last()
        .unwrap_or((grid.thetas[0], c_floor));
    Ok(ResidualFit { nu, theta, c, c_floor })
}

/// Banded linear map acting on a profile through its cubic spline:
/// `(A f)_i = sum_j wy_ij y_j + wm_ij M_j` where `M` are spline second derivatives.
#[derive(Debug, Clone, Default)]
pub struct ProfileOperator {
    rows: Vec<BandRow>,
}

#[derive(Debug, Clone, Default)]
struct BandRow {
    start: usize,
    wy: Vec<f64>,
    wm: Vec<f64>,
}

const GL_POINTS: usize = 8;

impl ProfileOperator {
    /// Product-integration weights of `int_0^{Z_max} K(z_i, zbar) p(zbar) dzbar`
    /// where `p` is the spline of the data. `window(z_i)` bounds the support
    /// of `K(z_i, .)` and `max_sub` the quadrature panel length.
    fn build<K, W>(z: &[f64], window: W, max_sub: f64, kernel: K) -> Self
    where
        K: Fn(f64, f64) -> f64 + Sync,
        W: Fn(f64) -> (f64, f64) + Sync,
    {
        let (gx, gw) = gauss_legendre_unit(GL_POINTS);
        let n = z.len();
        let z_max = z[n - 1];
        let rows = (0..n)
            .into_par_iter()
            .map(|i| {
                let zi = z[i];
                let (lo, hi) = window(zi);
                let (lo, hi) = (lo.max(0.0), hi.min(z_max));
                if !(hi > lo) {
                    return BandRow::default();
                }
                let c0 = cell_of(z, lo);
                let c1 = cell_of(z, hi);
                let width = c1 - c0 + 2;
                let mut wy = vec![0.0; width];
                let mut wm = vec![0.0; width];
                for c in c0..=c1 {
                    let (za, zb) = (z[c], z[c + 1]);
                    let h = zb - za;
                    let a = za.max(lo);
                    let b = zb.min(hi);
                    if !(b > a) {
                        continue;
                    }
                    let nsub = ((b - a) / max_sub).ceil().max(1.0) as usize;
                    let len = (b - a) / nsub as f64;
                    let mut mu = [0.0f64; 4];
                    for s in 0..nsub {
                        let x0 = a + s as f64 * len;
                        for (u, w) in gx.iter().zip(&gw) {
                            let x = x0 + u * len;
                            let kv = kernel(zi, x) * w * len;
                            let bl = (x - za) / h;
                            mu[0] += kv;
                            mu[1] += kv * bl;
                            mu[2] += kv * bl * bl;
                            mu[3] += kv * bl * bl * bl;
                        }
                    }
                    let j = c - c0;
                    let h26 = h * h / 6.0;
                    wy[j] += mu[0] - mu[1];
                    wy[j + 1] += mu[1];
                    wm[j] += h26 * (-2.0 * mu[1] + 3.0 * mu[2] - mu[3]);
                    wm[j + 1] += h26 * (mu[3] - mu[1]);
                }
                BandRow { start: c0, wy, wm }
            })
            .collect();
        Self { rows }
    }

    /// `out += scale * A (y, m)`.
    pub fn apply_add(&self, y: &[Complex64], m: &[Complex64], scale: f64, out: &mut [Complex64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            let mut acc = Complex64::new(0.0, 0.0);
            let ys = &y[row.start..row.start + row.wy.len()];
            let ms = &m[row.start..row.start + row.wm.len()];
            for j in 0..row.wy.len() {
                acc += ys[j] * row.wy[j] + ms[j] * row.wm[j];
            }
            *o += acc * scale;
        }
    }

    pub fn apply(&self, y: &[Complex64], m: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.rows.len()];
        self.apply_add(y, m, 1.0, &mut out);
        out
    }
}

fn cell_of(z: &[f64], x: f64) -> usize {
    let n = z.len();
    match z.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => i.min(n - 2),
        Err(i) => i.saturating_sub(1).min(n - 2),
    }
}

/// Gaussian part of the Neumann (`sign = 1`) or Dirichlet (`sign = -1`)
/// kernel at time `tau`, without the `e^{-nu k^2 tau}` factor.
pub fn heat_operator(z: &[f64], nu: f64, tau: f64, sign: f64) -> ProfileOperator {
    let nt = nu * tau;
    let sigma = (2.0 * nt).sqrt();
    let reach = 10.0 * sigma;
    let mut op = ProfileOperator::build(
        z,
        |zi| (zi - reach, zi + reach),
        0.5 * sigma,
        |zi, x| gauss(nt, zi - x) + sign * gauss(nt, zi + x),
    );
    if sign < 0.0 {
        let row = &mut op.rows[0];
        row.wy.iter_mut().for_each(|w| *w = 0.0);
        row.wm.iter_mut().for_each(|w| *w = 0.0);
    }
    op
}

/// Support bound in `s = z + zbar` beyond which `R < 1e-19 k`.
fn residual_reach(nt: f64, k: f64) -> f64 {
    (40.0 / k).min(2.0 * k * nt + 13.0 * nt.sqrt())
}

/// Robin correction `R` as an operator.
pub fn residual_operator(z: &[f64], nu: f64, tau: f64, k: f64) -> ProfileOperator {
    let nt = nu * tau;
    let reach = residual_reach(nt, k);
    ProfileOperator::build(
        z,
        |zi| (0.0, reach - zi),
        0.5 * nt.sqrt().min(1.0 / k),
        |zi, x| residual_raw(nt, k, zi + x),
    )
}

/// Distinct values of `|xi|^2` on a grid and the class of every mode.
#[derive(Debug, Clone)]
pub struct ModeClasses {
    k2: Vec<i32>,
    of_mode: Vec<usize>,
}

impl ModeClasses {
    pub fn new(grid: &Grid) -> Self {
        let mut map = BTreeMap::new();
        for xi in grid.modes() {
            let n = map.len();
            map.entry(xi[0] * xi[0] + xi[1] * xi[1]).or_insert(n);
        }
        let k2: Vec<i32> = map.keys().copied().collect();
        let of_mode = grid
            .modes()
            .iter()
            .map(|xi| k2.binary_search(&(xi[0] * xi[0] + xi[1] * xi[1])).unwrap())
            .collect();
        Self { k2, of_mode }
    }
    pub fn len(&self) -> usize {
        self.k2.len()
    }
    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }
    pub fn k(&self, class: usize) -> f64 {
        (self.k2[class] as f64).sqrt()
    }
    pub fn class_of(&self, mode: usize) -> usize {
        self.of_mode[mode]
    }
}

/// Unit vectors along and across `xi`; `None` for the zero mode.
pub(crate) fn mode_frame(xi: [i32; 2]) -> Option<([f64; 2], [f64; 2])> {
    let k = xi_norm(xi);
    if k == 0.0 {
        return None;
    }
    let par = [xi[0] as f64 / k, xi[1] as f64 / k];
    Some((par, [-par[1], par[0]]))
}

/// The solution operator `G(tau)` of the linear Stokes system for all modes.
///
/// Per mode `xi != 0` the horizontal vorticity splits into the component
/// along `xi` (reflecting wall) and across `xi` (Robin wall
/// `(d_z + |xi|) f = 0`); `omega_3` sees an absorbing wall. The zero mode
/// is reflecting in both horizontal components.
#[derive(Debug, Clone)]
pub struct StokesPropagator {
    tau: f64,
    nu: f64,
    neumann: ProfileOperator,
    dirichlet: ProfileOperator,
    residual: Vec<ProfileOperator>,
    classes: ModeClasses,
}

impl StokesPropagator {
    pub fn new(grid: &Grid, nu: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !(nu > 0.0) {
            return Err(Error::InvalidArgument(format!("propagator needs tau > 0, nu > 0 (got {tau}, {nu})")));
        }
        let z = grid.z();
        let classes = ModeClasses::new(grid);
        let residual = (0..classes.len())
            .map(|c| {
                let k = classes.k(c);
                if k == 0.0 {
                    ProfileOperator { rows: vec![BandRow::default(); z.len()] }
                } else {
                    residual_operator(z, nu, tau, k)
                }
            })
            .collect();
        Ok(Self {
            tau,
            nu,
            neumann: heat_operator(z, nu, tau, 1.0),
            dirichlet: heat_operator(z, nu, tau, -1.0),
            residual,
            classes,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn classes(&self) -> &ModeClasses {
        &self.classes
    }

    /// `out += scale * G(tau) w` for one mode; `w` and `m` hold the three
    /// profiles and their spline second derivatives.
    pub fn apply_mode_add(
        &self,
        mode: usize,
        xi: [i32; 2],
        w: &[Complex64],
        m: &[Complex64],
        scale: f64,
        out: &mut [Complex64],
    ) {
        let nz = w.len() / 3;
        let class = self.classes.class_of(mode);
        let k = self.classes.k(class);
        let damp = (-self.nu * k * k * self.tau).exp() * scale;
        let (w1, w2, w3) = (&w[..nz], &w[nz..2 * nz], &w[2 * nz..]);
        let (m1, m2, m3) = (&m[..nz], &m[nz..2 * nz], &m[2 * nz..]);
        {
            let o3 = &mut out[2 * nz..];
            self.dirichlet.apply_add(w3, m3, damp, o3);
        }
        match mode_frame(xi) {
            None => {
                let (o1, rest) = out.split_at_mut(nz);
                self.neumann.apply_add(w1, m1, damp, o1);
                self.neumann.apply_add(w2, m2, damp, &mut rest[..nz]);
            }
            Some((par, perp)) => {
                let proj = |a: &[Complex64], b: &[Complex64], e: [f64; 2]| -> Vec<Complex64> {
                    a.iter().zip(b).map(|(x, y)| x * e[0] + y * e[1]).collect()
                };
                let wp = proj(w1, w2, par);
                let mp = proj(m1, m2, par);
                let wq = proj(w1, w2, perp);
                let mq = proj(m1, m2, perp);
                let mut gp = vec![Complex64::new(0.0, 0.0); nz];
                let mut gq = vec![Complex64::new(0.0, 0.0); nz];
                self.neumann.apply_add(&wp, &mp, damp, &mut gp);
                self.neumann.apply_add(&wq, &mq, damp, &mut gq);
                self.residual[class].apply_add(&wq, &mq, scale, &mut gq);
                for j in 0..nz {
                    out[j] += gp[j] * par[0] + gq[j] * perp[0];
                    out[nz + j] += gp[j] * par[1] + gq[j] * perp[1];
                }
            }
        }
    }

    /// `G(tau) omega` for a whole field.
    pub fn apply(&self, omega: &SpectralVectorField) -> SpectralVectorField {
        let grid = omega.grid().clone();
        let ops = grid.ops();
        let nz = grid.nz();
        SpectralVectorField::from_modes(grid.clone(), |mi, xi, out| {
            let w = omega.mode_data(mi);
            let mut m = Vec::with_capacity(3 * nz);
            for c in 0..3 {
                m.extend(ops.spline_second_derivatives(&w[c * nz..(c + 1) * nz]));
            }
            self.apply_mode_add(mi, xi, w, &m, 1.0, out);
        })
    }
}

/// Wall-trace kernels `int_0^dt G(tau, z, 0) phi(tau) dtau` for the two hat
/// functions `phi = tau/dt` (weight of the boundary data at the start of a
/// step) and `phi = 1 - tau/dt` (weight of the data at the end).
#[derive(Debug, Clone)]
pub struct TraceKernels {
    /// Per mode class: `[neumann_start, neumann_end, robin_start, robin_end]`.
    per_class: Vec<[Vec<f64>; 4]>,
    classes: ModeClasses,
}

const TRACE_PANELS: usize = 8;

impl TraceKernels {
    pub fn new(grid: &Grid, nu: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("trace kernels need dt > 0".into()));
        }
        let classes = ModeClasses::new(grid);
        let (gx, gw) = gauss_legendre_unit(GL_POINTS);
        let root = dt.sqrt();
        // tau = v^2 removes the tau^{-1/2} singularity at the wall.
        let mut nodes = Vec::new();
        for p in 0..TRACE_PANELS {
            for (x, w) in gx.iter().zip(&gw) {
                let v = (p as f64 + x) * root / TRACE_PANELS as f64;
                nodes.push((v * v, 2.0 * v * w * root / TRACE_PANELS as f64));
            }
        }
        let per_class = (0..classes.len())
            .into_par_iter()
            .map(|c| {
                let k = classes.k(c);
                let mut out: [Vec<f64>; 4] = Default::default();
                for v in out.iter_mut() {
                    *v = vec![0.0; grid.nz()];
                }
                for (j, &z) in grid.z().iter().enumerate() {
                    for &(tau, w) in &nodes {
                        let nt = nu * tau;
                        let hn = 2.0 * gauss(nt, z) * (-nt * k * k).exp();
                        let r = residual_raw(nt, k, z);
                        let (a, b) = (tau / dt, 1.0 - tau / dt);
                        out[0][j] += w * hn * a;
                        out[1][j] += w * hn * b;
                        out[2][j] += w * (hn + r) * a;
                        out[3][j] += w * (hn + r) * b;
                    }
                }
                out
            })
            .collect();
        Ok(Self { per_class, classes })
    }

    /// `out -= trace(B_start, B_end)` for one mode; `b` holds the three
    /// wall moments `int e^{-|xi| z} N dz`.
    pub fn apply_mode_sub(
        &self,
        mode: usize,
        xi: [i32; 2],
        b_start: [Complex64; 3],
        b_end: [Complex64; 3],
        out: &mut [Complex64],
    ) {
        let nz = out.len() / 3;
        let tr = &self.per_class[self.classes.class_of(mode)];
        match mode_frame(xi) {
            None => {
                for j in 0..nz {
                    out[j] -= b_start[0] * tr[0][j] + b_end[0] * tr[1][j];
                    out[nz + j] -= b_start[1] * tr[0][j] + b_end[1] * tr[1][j];
                }
            }
            Some((par, perp)) => {
                let i = Complex64::new(0.0, 1.0);
                let along = |b: &[Complex64; 3]| b[0] * par[0] + b[1] * par[1] - i * b[2];
                let across = |b: &[Complex64; 3]| b[0] * perp[0] + b[1] * perp[1];
                let (p0, p1) = (along(&b_start), along(&b_end));
                let (q0, q1) = (across(&b_start), across(&b_end));
                for j in 0..nz {
                    let gp = p0 * tr[0][j] + p1 * tr[1][j];
                    let gq = q0 * tr[2][j] + q1 * tr[3][j];
                    out[j] -= gp * par[0] + gq * perp[0];
                    out[nz + j] -= gp * par[1] + gq * perp[1];
                }
            }
        }
    }
}
