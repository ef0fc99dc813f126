//! Velocity recovery `u = curl (-Delta)^{-1} omega` mode by mode.
//!
//! For `k = |xi| > 0` and a profile `w` the building blocks are
//!
//! ```text
//! P(z) = int_0^z e^{-k(z - s)} (1 - e^{-2ks}) w(s) ds      (A - C)
//! S(z) = int_0^z e^{-k(z - s)} (1 + e^{-2ks}) w(s) ds      (A + C)
//! D(z) = int_z^inf e^{-k(s - z)} w(s) ds
//! ```
//!
//! from which the Dirichlet and Neumann potentials of `-d_zz + k^2` follow:
//! `W^D = (P + (1 - e^{-2kz}) D) / 2k`, `d_z W^D = (-P + (1 + e^{-2kz}) D) / 2`,
//! `W^N = (S + (1 + e^{-2kz}) D) / 2k`, `d_z W^N = (-S + (1 - e^{-2kz}) D) / 2`.
//! The horizontal components use the Dirichlet potential and the vertical one
//! the Neumann potential, which makes `div W = 0` and hence `curl u = omega`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{xi_norm, Grid, Mode, SpectralVectorField};
use crate::kernels::ModeClasses;
use crate::vertical::{gauss_legendre_unit, spline_basis};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const GL_POINTS: usize = 8;

/// Relative reality defect tolerated on input vorticity.
pub const REALITY_TOL: f64 = 1e-9;

/// One scalar vertical profile of a single mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeProfile {
    pub xi: Mode,
    pub values: Vec<Complex64>,
}

struct Moments {
    p: Vec<Complex64>,
    s: Vec<Complex64>,
    d: Vec<Complex64>,
}

/// Per mode class and cell, the weights of `(y_j, y_{j+1}, M_j, M_{j+1})`
/// in the cell contributions to `P`, `S` and `D`, plus cell decay factors.
#[derive(Debug, Clone)]
pub(crate) struct MomentTables {
    classes: ModeClasses,
    /// `[class][cell] -> [P, S, D] x 4 spline weights`
    cells: Vec<Vec<[[f64; 4]; 3]>>,
    decay: Vec<Vec<f64>>,
    /// `e^{-k z_j}`
    wall: Vec<Vec<f64>>,
}

impl MomentTables {
    pub(crate) fn new(grid: &Grid) -> Self {
        let classes = ModeClasses::new(grid);
        let (gx, gw) = gauss_legendre_unit(GL_POINTS);
        let z = grid.z();
        let h = grid.ops().spacing();
        let mut cells = Vec::with_capacity(classes.len());
        let mut decay = Vec::with_capacity(classes.len());
        let mut wall = Vec::with_capacity(classes.len());
        for c in 0..classes.len() {
            let k = classes.k(c);
            let mut tab = Vec::with_capacity(h.len());
            for (j, &hj) in h.iter().enumerate() {
                let mut t = [[0.0; 4]; 3];
                for (b, w) in gx.iter().zip(&gw) {
                    let basis = spline_basis(hj, *b);
                    let x = z[j] + b * hj;
                    let up = (-k * (1.0 - b) * hj).exp();
                    let two = (-2.0 * k * x).exp_m1();
                    let kern = [up * -two, up * (2.0 + two), (-k * b * hj).exp()];
                    for (row, kv) in t.iter_mut().zip(kern) {
                        for (r, bv) in row.iter_mut().zip(basis) {
                            *r += bv * kv * w * hj;
                        }
                    }
                }
                tab.push(t);
            }
            cells.push(tab);
            decay.push(h.iter().map(|&hj| (-k * hj).exp()).collect());
            wall.push(z.iter().map(|&zj| (-k * zj).exp()).collect());
        }
        Self { classes, cells, decay, wall }
    }

    fn moments(&self, mode: usize, y: &[Complex64], m: &[Complex64]) -> Moments {
        let c = self.classes.class_of(mode);
        let tab = &self.cells[c];
        let decay = &self.decay[c];
        let n = y.len();
        let mut p = vec![ZERO; n];
        let mut s = vec![ZERO; n];
        let mut d = vec![ZERO; n];
        let cell = |j: usize, r: usize| {
            let w = &tab[j][r];
            y[j] * w[0] + y[j + 1] * w[1] + m[j] * w[2] + m[j + 1] * w[3]
        };
        for j in 0..n - 1 {
            p[j + 1] = p[j] * decay[j] + cell(j, 0);
            s[j + 1] = s[j] * decay[j] + cell(j, 1);
        }
        for j in (0..n - 1).rev() {
            d[j] = d[j + 1] * decay[j] + cell(j, 2);
        }
        Moments { p, s, d }
    }

    /// `int_0^{Z_max} e^{-|xi| z} y dz` for the mode's class.
    pub(crate) fn wall_moment(&self, mode: usize, y: &[Complex64], m: &[Complex64]) -> Complex64 {
        let c = self.classes.class_of(mode);
        let tab = &self.cells[c];
        let wall = &self.wall[c];
        (0..y.len() - 1)
            .map(|j| {
                let w = &tab[j][2];
                (y[j] * w[0] + y[j + 1] * w[1] + m[j] * w[2] + m[j + 1] * w[3]) * wall[j]
            })
            .sum()
    }
}

/// Cell recurrences for `P`, `S`, `D` for an arbitrary `k`; the cached
/// tables cover the grid's own modes.
fn moments(grid: &Grid, k: f64, y: &[Complex64], m: &[Complex64], gl: &(Vec<f64>, Vec<f64>)) -> Moments {
    let z = grid.z();
    let n = z.len();
    let (gx, gw) = gl;
    let mut p = vec![ZERO; n];
    let mut s = vec![ZERO; n];
    let mut d = vec![ZERO; n];
    let h = grid.ops().spacing();
    let mut cp = vec![ZERO; n - 1];
    let mut cs = vec![ZERO; n - 1];
    let mut cd = vec![ZERO; n - 1];
    for j in 0..n - 1 {
        let hj = h[j];
        let (mut ip, mut is, mut id) = (ZERO, ZERO, ZERO);
        for (b, w) in gx.iter().zip(gw) {
            let [c0, c1, c2, c3] = spline_basis(hj, *b);
            let f = (y[j] * c0 + y[j + 1] * c1 + m[j] * c2 + m[j + 1] * c3) * (w * hj);
            let x = z[j] + b * hj;
            let up = (-k * (1.0 - b) * hj).exp();
            let two = (-2.0 * k * x).exp_m1();
            ip += f * (up * -two);
            is += f * (up * (2.0 + two));
            id += f * (-k * b * hj).exp();
        }
        cp[j] = ip;
        cs[j] = is;
        cd[j] = id;
    }
    for j in 0..n - 1 {
        let decay = (-k * h[j]).exp();
        p[j + 1] = p[j] * decay + cp[j];
        s[j + 1] = s[j] * decay + cs[j];
    }
    for j in (0..n - 1).rev() {
        d[j] = d[j + 1] * (-k * h[j]).exp() + cd[j];
    }
    Moments { p, s, d }
}

fn spline_m(grid: &Grid, y: &[Complex64]) -> Vec<Complex64> {
    grid.ops().spline_second_derivatives(y)
}

fn check_profile(grid: &Grid, w: &ModeProfile) -> Result<f64> {
    if w.values.len() != grid.nz() {
        return Err(Error::GridMismatch);
    }
    if w.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::NonFinite("mode profile"));
    }
    let k = xi_norm(w.xi);
    if k == 0.0 {
        return Err(Error::InvalidArgument("grad_inv_laplacian needs |xi| >= 1".into()));
    }
    Ok(k)
}

/// `int_0^{Z_max} e^{-k z} y(z) dz` with the spline of `y`.
pub fn exp_moment(grid: &Grid, k: f64, y: &[Complex64]) -> Complex64 {
    let (gx, gw) = gauss_legendre_unit(GL_POINTS);
    let m = spline_m(grid, y);
    let z = grid.z();
    let h = grid.ops().spacing();
    let mut total = ZERO;
    for j in 0..z.len() - 1 {
        let hj = h[j];
        for (b, w) in gx.iter().zip(&gw) {
            let [c0, c1, c2, c3] = spline_basis(hj, *b);
            let f = y[j] * c0 + y[j + 1] * c1 + m[j] * c2 + m[j + 1] * c3;
            total += f * (w * hj * (-k * (z[j] + b * hj)).exp());
        }
    }
    total
}

/// `d_dir (-Delta)^{-1} w` with the Dirichlet inverse: `i xi_dir W^D` for
/// `dir = 1, 2` and `d_z W^D` for `dir = 3`.
pub fn grad_inv_laplacian(grid: &Grid, w: &ModeProfile, dir: usize) -> Result<ModeProfile> {
    inv_laplacian_derivative(grid, w, dir, false)
}

/// As [`grad_inv_laplacian`] with the Neumann inverse.
pub fn grad_inv_laplacian_neumann(grid: &Grid, w: &ModeProfile, dir: usize) -> Result<ModeProfile> {
    inv_laplacian_derivative(grid, w, dir, true)
}

fn inv_laplacian_derivative(grid: &Grid, w: &ModeProfile, dir: usize, neumann: bool) -> Result<ModeProfile> {
    let k = check_profile(grid, w)?;
    if !(1..=3).contains(&dir) {
        return Err(Error::InvalidArgument(format!("direction {dir} not in 1..=3")));
    }
    let gl = gauss_legendre_unit(GL_POINTS);
    let mo = moments(grid, k, &w.values, &spline_m(grid, &w.values), &gl);
    let values = grid
        .z()
        .iter()
        .enumerate()
        .map(|(j, &z)| {
            let (pot, dpot) = potentials(k, z, mo.p[j], mo.s[j], mo.d[j], neumann);
            match dir {
                1 => I * w.xi[0] as f64 * pot,
                2 => I * w.xi[1] as f64 * pot,
                _ => dpot,
            }
        })
        .collect();
    Ok(ModeProfile { xi: w.xi, values })
}

#[inline]
fn potentials(k: f64, z: f64, p: Complex64, s: Complex64, d: Complex64, neumann: bool) -> (Complex64, Complex64) {
    let em = (-2.0 * k * z).exp_m1(); // e^{-2kz} - 1
    if neumann {
        ((s + d * (2.0 + em)) / (2.0 * k), (-s - d * em) * 0.5)
    } else {
        ((p - d * em) / (2.0 * k), (-p + d * (2.0 + em)) * 0.5)
    }
}

/// Velocity, its vertical derivative and `u_3 / z` for every mode.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub u: SpectralVectorField,
    pub du_dz: SpectralVectorField,
    /// `u_3 / z` in component 3 (index 2); components 1, 2 are zero.
    pub u3_over_z: SpectralVectorField,
}

fn check_vorticity(omega: &SpectralVectorField) -> Result<()> {
    if !omega.is_finite() {
        return Err(Error::NonFinite("vorticity"));
    }
    omega.check_reality(REALITY_TOL)
}

/// Everything the nonlinearity needs from one pass over the modes.
pub fn recover(omega: &SpectralVectorField) -> Result<Recovery> {
    check_vorticity(omega)?;
    let grid = omega.grid().clone();
    let nz = grid.nz();
    let tables = grid.moment_tables();
    let per_mode: Vec<(Vec<Complex64>, Vec<Complex64>, Vec<Complex64>)> = (0..grid.n_modes())
        .into_par_iter()
        .map(|mi| recover_mode(&grid, mi, omega.mode_data(mi), tables))
        .collect();
    let mut u = SpectralVectorField::zeros(grid.clone());
    let mut du = SpectralVectorField::zeros(grid.clone());
    let mut q = SpectralVectorField::zeros(grid.clone());
    for (mi, (a, b, c)) in per_mode.into_iter().enumerate() {
        u.mode_data_mut(mi).copy_from_slice(&a);
        du.mode_data_mut(mi).copy_from_slice(&b);
        q.mode_data_mut(mi)[2 * nz..].copy_from_slice(&c);
    }
    Ok(Recovery { u, du_dz: du, u3_over_z: q })
}

fn recover_mode(
    grid: &Grid,
    mode: usize,
    w: &[Complex64],
    tables: &MomentTables,
) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
    let xi = grid.modes()[mode];
    let nz = grid.nz();
    let z = grid.z();
    let k = xi_norm(xi);
    let mut u = vec![ZERO; 3 * nz];
    let mut du = vec![ZERO; 3 * nz];
    let mut q = vec![ZERO; nz];
    let prof = |c: usize| &w[c * nz..(c + 1) * nz];
    if k == 0.0 {
        // u_1 = -int_z^inf omega_2, u_2 = int_z^inf omega_1
        let t1 = tables.moments(mode, prof(0), &spline_m(grid, prof(0))).d;
        let t2 = tables.moments(mode, prof(1), &spline_m(grid, prof(1))).d;
        for j in 0..nz {
            u[j] = -t2[j];
            u[nz + j] = t1[j];
            du[j] = prof(1)[j];
            du[nz + j] = -prof(0)[j];
        }
        return (u, du, q);
    }
    let (ix, iy) = (I * xi[0] as f64, I * xi[1] as f64);
    let mo: Vec<Moments> = (0..3).map(|c| tables.moments(mode, prof(c), &spline_m(grid, prof(c)))).collect();
    for j in 0..nz {
        let zj = z[j];
        let (w1, dw1) = potentials(k, zj, mo[0].p[j], mo[0].s[j], mo[0].d[j], false);
        let (w2, dw2) = potentials(k, zj, mo[1].p[j], mo[1].s[j], mo[1].d[j], false);
        let (w3, dw3) = potentials(k, zj, mo[2].p[j], mo[2].s[j], mo[2].d[j], true);
        let k2 = k * k;
        u[j] = iy * w3 - dw2;
        u[nz + j] = dw1 - ix * w3;
        u[2 * nz + j] = if j == 0 { ZERO } else { ix * w2 - iy * w1 };
        // d_zz W = k^2 W - omega
        du[j] = iy * dw3 - (w2 * k2 - prof(1)[j]);
        du[nz + j] = (w1 * k2 - prof(0)[j]) - ix * dw3;
        du[2 * nz + j] = ix * dw2 - iy * dw1;
        q[j] = if j == 0 { du[2 * nz] } else { u[2 * nz + j] / zj };
    }
    (u, du, q)
}

/// `u = curl (-Delta)^{-1} omega`.
pub fn velocity_from_vorticity(omega: &SpectralVectorField) -> Result<SpectralVectorField> {
    Ok(recover(omega)?.u)
}

/// `u_3 / z`, returned in component 3 (index 2) of the field.
pub fn u3_over_z(omega: &SpectralVectorField) -> Result<SpectralVectorField> {
    Ok(recover(omega)?.u3_over_z)
}

/// All nine derivatives `d_j u_i`.
#[derive(Debug, Clone)]
pub struct VelocityGradient {
    pub u: SpectralVectorField,
    /// `d[j]` holds `d_j u` (all three components), `j = 0, 1, 2` for `x, y, z`.
    pub d: [SpectralVectorField; 3],
}

impl VelocityGradient {
    /// Profile of `d_j u_i` at mode index `m`.
    pub fn component(&self, i: usize, j: usize, m: usize) -> &[Complex64] {
        self.d[j].profile(m, i)
    }
}

pub fn velocity_gradient(omega: &SpectralVectorField) -> Result<VelocityGradient> {
    let rec = recover(omega)?;
    Ok(gradient_from_recovery(&rec))
}

pub(crate) fn gradient_from_recovery(rec: &Recovery) -> VelocityGradient {
    let grid = rec.u.grid().clone();
    let horiz = |axis: usize| {
        SpectralVectorField::from_modes(grid.clone(), |m, xi, out| {
            let f = I * xi[axis] as f64;
            for (o, v) in out.iter_mut().zip(rec.u.mode_data(m)) {
                *o = v * f;
            }
        })
    };
    VelocityGradient { u: rec.u.clone(), d: [horiz(0), horiz(1), rec.du_dz.clone()] }
}
