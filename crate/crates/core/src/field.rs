//! Spectral fields on the half space T^2 x R_+: the graded vertical grid,
//! per-mode complex profiles, conormal derivatives and initial data.

use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vertical::VerticalOps;

pub type Mode = [i32; 2];

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Wall-cell size relative to `min(sqrt(nu_min), 1/Nz)`.
pub const GRADE_FACTOR: f64 = 0.25;

/// Horizontal mode set `|xi_1|, |xi_2| <= K` and graded vertical mesh
/// `z = Z_max (e^{beta s} - 1) / (e^beta - 1)`, `s` uniform in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Grid {
    k: usize,
    nz: usize,
    z_max: f64,
    mu0: f64,
    nu_min: f64,
    beta: f64,
    z: Vec<f64>,
    weights: Vec<f64>,
    modes: Vec<Mode>,
    ops: VerticalOps,
    moment_tables: OnceLock<crate::biot_savart::MomentTables>,
}

/// Serializable description of a grid, used by the dump sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: usize,
    pub nz: usize,
    pub z_max: f64,
    pub nu_min: f64,
    pub mu0: f64,
    pub beta: f64,
    pub z_nodes: Vec<f64>,
}

fn graded_nodes(nz: usize, z_max: f64, beta: f64) -> Vec<f64> {
    let denom = beta.exp_m1();
    let mut z: Vec<f64> = (0..nz)
        .map(|i| {
            let s = i as f64 / (nz - 1) as f64;
            z_max * (beta * s).exp_m1() / denom
        })
        .collect();
    z[0] = 0.0;
    z[nz - 1] = z_max;
    z
}

/// Grading exponent: the smallest beta meeting both the wall-cell bound and
/// the requirement of `Nz/4` nodes inside `[0, 10 sqrt(nu_min)]`.
fn grading_exponent(nz: usize, z_max: f64, nu_min: f64) -> f64 {
    let first_cell_target = GRADE_FACTOR * nu_min.sqrt().min(1.0 / nz as f64);
    let layer = 10.0 * nu_min.sqrt();
    let ok = |beta: f64| {
        let z = graded_nodes(nz, z_max, beta);
        let in_layer = z.iter().filter(|&&v| v <= layer).count();
        z[1] <= first_cell_target && 4 * in_layer >= nz
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    while !ok(hi) {
        hi *= 2.0;
        if hi > 200.0 {
            return hi;
        }
    }
    if ok(lo) {
        return lo;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub fn make_grid(k: usize, nz: usize, z_max: f64, nu_min: f64, mu0: f64) -> Result<Grid> {
    if k < 1 {
        return Err(Error::InvalidGrid("K must be at least 1".into()));
    }
    if nz < 16 {
        return Err(Error::InvalidGrid(format!("Nz = {nz} < 16")));
    }
    if !(mu0 > 0.0) {
        return Err(Error::InvalidGrid(format!("mu0 = {mu0} must be positive")));
    }
    if !(z_max > 1.0 + mu0) {
        return Err(Error::InvalidGrid(format!(
            "Z_max = {z_max} must exceed 1 + mu0 = {}",
            1.0 + mu0
        )));
    }
    if !(nu_min > 0.0 && nu_min <= 1.0) {
        return Err(Error::InvalidGrid(format!("nu_min = {nu_min} outside (0, 1]")));
    }
    let beta = grading_exponent(nz, z_max, nu_min);
    let z = graded_nodes(nz, z_max, beta);
    Grid::from_parts(k, z_max, mu0, nu_min, beta, z)
}

impl Grid {
    fn from_parts(k: usize, z_max: f64, mu0: f64, nu_min: f64, beta: f64, z: Vec<f64>) -> Result<Self> {
        let nz = z.len();
        if z.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("z nodes not strictly increasing".into()));
        }
        let mut weights = vec![0.0; nz];
        for i in 0..nz - 1 {
            let h = z[i + 1] - z[i];
            weights[i] += 0.5 * h;
            weights[i + 1] += 0.5 * h;
        }
        let kk = k as i32;
        let modes = (-kk..=kk)
            .flat_map(|a| (-kk..=kk).map(move |b| [a, b]))
            .collect();
        let ops = VerticalOps::new(&z);
        Ok(Self { k, nz, z_max, mu0, nu_min, beta, z, weights, modes, ops, moment_tables: OnceLock::new() })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        if spec.z_nodes.len() != spec.nz {
            return Err(Error::InvalidGrid("z_nodes length differs from nz".into()));
        }
        Self::from_parts(spec.k, spec.z_max, spec.mu0, spec.nu_min, spec.beta, spec.z_nodes.clone())
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            k: self.k,
            nz: self.nz,
            z_max: self.z_max,
            nu_min: self.nu_min,
            mu0: self.mu0,
            beta: self.beta,
            z_nodes: self.z.clone(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }
    pub fn nz(&self) -> usize {
        self.nz
    }
    pub fn z_max(&self) -> f64 {
        self.z_max
    }
    pub fn mu0(&self) -> f64 {
        self.mu0
    }
    pub fn nu_min(&self) -> f64 {
        self.nu_min
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn z(&self) -> &[f64] {
        &self.z
    }
    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn ops(&self) -> &VerticalOps {
        &self.ops
    }
    pub(crate) fn moment_tables(&self) -> &crate::biot_savart::MomentTables {
        self.moment_tables.get_or_init(|| crate::biot_savart::MomentTables::new(self))
    }
    pub fn min_spacing(&self) -> f64 {
        self.ops.spacing().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Horizontal modes in lexicographic order; this order is used by every
    /// reduction over modes.
    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }
    pub fn mode_index(&self, xi: Mode) -> Option<usize> {
        let k = self.k as i32;
        if xi[0].abs() > k || xi[1].abs() > k {
            return None;
        }
        let side = 2 * self.k + 1;
        Some((xi[0] + k) as usize * side + (xi[1] + k) as usize)
    }
    /// Index of `-xi`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        self.n_modes() - 1 - idx
    }

    /// Same mesh and mode set.
    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || (self.k == other.k && self.z == other.z)
    }
}

pub fn xi_norm(xi: Mode) -> f64 {
    ((xi[0] * xi[0] + xi[1] * xi[1]) as f64).sqrt()
}

/// Physical parameters entering the equations and the norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    pub nu: f64,
    pub mu0: f64,
    pub gamma: f64,
    pub eps0: f64,
    pub a: f64,
    pub theta0: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self { nu: 1e-2, mu0: 0.5, gamma: 1.0, eps0: 0.125, a: 0.25, theta0: 0.25 }
    }
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return bad(format!("nu = {} outside (0, 1]", self.nu));
        }
        if !(self.mu0 > 0.0) {
            return bad(format!("mu0 = {} must be positive", self.mu0));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma = {} must be positive", self.gamma));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return bad(format!("eps0 = {} outside (0, 1)", self.eps0));
        }
        if !(self.a > 0.0 && self.a < 0.5) {
            return bad(format!("a = {} outside (0, 1/2)", self.a));
        }
        if !(self.theta0 > 0.0) {
            return bad(format!("theta0 = {} must be positive", self.theta0));
        }
        Ok(())
    }
}

/// Three complex vertical profiles per horizontal mode.
///
/// Storage is `[mode][component][z]`, modes in [`Grid::modes`] order.
#[derive(Debug, Clone)]
pub struct SpectralVectorField {
    grid: Arc<Grid>,
    data: Vec<Complex64>,
}

impl SpectralVectorField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let len = grid.n_modes() * 3 * grid.nz();
        Self { grid, data: vec![ZERO; len] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn offset(&self, mode: usize, comp: usize) -> usize {
        (mode * 3 + comp) * self.grid.nz()
    }

    pub fn profile(&self, mode: usize, comp: usize) -> &[Complex64] {
        let o = self.offset(mode, comp);
        &self.data[o..o + self.grid.nz()]
    }

    pub fn profile_mut(&mut self, mode: usize, comp: usize) -> &mut [Complex64] {
        let o = self.offset(mode, comp);
        let nz = self.grid.nz();
        &mut self.data[o..o + nz]
    }

    /// The three profiles of one mode, contiguous.
    pub fn mode_data(&self, mode: usize) -> &[Complex64] {
        let o = self.offset(mode, 0);
        &self.data[o..o + 3 * self.grid.nz()]
    }

    pub fn mode_data_mut(&mut self, mode: usize) -> &mut [Complex64] {
        let o = self.offset(mode, 0);
        let n = 3 * self.grid.nz();
        &mut self.data[o..o + n]
    }

    pub fn raw(&self) -> &[Complex64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Build a field mode by mode; `f` fills the `3 * Nz` values of a mode.
    pub fn from_modes<F>(grid: Arc<Grid>, f: F) -> Self
    where
        F: Fn(usize, Mode, &mut [Complex64]) + Sync,
    {
        use rayon::prelude::*;
        let nz = grid.nz();
        let mut field = Self::zeros(grid.clone());
        field
            .data
            .par_chunks_mut(3 * nz)
            .enumerate()
            .for_each(|(m, chunk)| f(m, grid.modes()[m], chunk));
        field
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest deviation from `f_{-xi} = conj(f_xi)` relative to `max_abs`.
    pub fn reality_defect(&self) -> (f64, Option<Mode>) {
        let mut worst = 0.0;
        let mut at = None;
        for m in 0..self.grid.n_modes() {
            let c = self.grid.conjugate_index(m);
            for (a, b) in self.mode_data(m).iter().zip(self.mode_data(c)) {
                let d = (a - b.conj()).norm();
                if d > worst {
                    worst = d;
                    at = Some(self.grid.modes()[m]);
                }
            }
        }
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        (worst / scale, at)
    }

    pub fn check_reality(&self, tol: f64) -> Result<()> {
        let (defect, at) = self.reality_defect();
        if defect > tol {
            let m = at.unwrap_or([0, 0]);
            return Err(Error::RealityViolation(m[0], m[1]));
        }
        Ok(())
    }

    /// Replace each pair `(xi, -xi)` by its Hermitian average.
    pub fn symmetrize(&mut self) {
        let n = self.grid.n_modes();
        let w = 3 * self.grid.nz();
        for m in 0..n {
            let c = n - 1 - m;
            if c < m {
                break;
            }
            for j in 0..w {
                let a = self.data[m * w + j];
                let b = self.data[c * w + j];
                let avg = 0.5 * (a + b.conj());
                self.data[m * w + j] = avg;
                self.data[c * w + j] = avg.conj();
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { grid: self.grid.clone(), data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// `sum_xi int |f_xi|^2 dz` with the grid's trapezoid weights.
    pub fn l2_norm_sq(&self) -> f64 {
        let w = self.grid.quad_weights();
        let nz = self.grid.nz();
        self.data
            .chunks(nz)
            .map(|p| p.iter().zip(w).map(|(v, w)| v.norm_sqr() * w).sum::<f64>())
            .sum()
    }
}

/// Multi-index of a conormal derivative `D = (d_x, d_y, z d_z)`.
pub type MultiIndex = [u32; 3];

/// `D^alpha f` for `|alpha| <= 2`: Fourier multipliers `(i xi_1)^a1 (i xi_2)^a2`
/// first, then `alpha_3` applications of `z d_z` on the mesh.
pub fn conormal_derivative(f: &SpectralVectorField, alpha: MultiIndex) -> Result<SpectralVectorField> {
    let order: u32 = alpha.iter().sum();
    if order > 2 {
        return Err(Error::InvalidArgument(format!("|alpha| = {order} > 2")));
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("conormal_derivative input"));
    }
    Ok(apply_derivative(f, alpha, DerivativeKind::Conormal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum DerivativeKind {
    Conormal,
    Plain,
}

/// Horizontal multipliers then `alpha_3` vertical factors (`z d_z` or `d_z`).
pub(crate) fn apply_derivative(
    f: &SpectralVectorField,
    alpha: MultiIndex,
    kind: DerivativeKind,
) -> SpectralVectorField {
    let grid = f.grid().clone();
    let nz = grid.nz();
    SpectralVectorField::from_modes(grid.clone(), |m, xi, out| {
        let mult = I.powu(alpha[0] + alpha[1])
            * (xi[0] as f64).powi(alpha[0] as i32)
            * (xi[1] as f64).powi(alpha[1] as i32);
        for c in 0..3 {
            let mut p: Vec<Complex64> = f.profile(m, c).iter().map(|v| v * mult).collect();
            for _ in 0..alpha[2] {
                p = match kind {
                    DerivativeKind::Conormal => grid.ops().conormal(&p),
                    DerivativeKind::Plain => grid.ops().derivative(&p),
                };
            }
            out[c * nz..(c + 1) * nz].copy_from_slice(&p);
        }
    })
}

/// Initial-data catalog. Every preset is `omega_0 = curl curl A` for a vector
/// potential `A_xi(z) = phi(z) c_xi` with `phi = z^2 e^{-z^2}`, so
/// `u_0 = curl A` is divergence free and vanishes at the wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Preset {
    /// `A = phi(z) e^{ix} (1, 0, 0)` plus its conjugate.
    SingleRoll,
    /// `A = phi(z) (1, 0, 0)` on the zero mode only.
    Shear,
    /// `A = phi(z) (cos y, cos x, 0)` (times 2): a three-dimensional flow
    /// with vortex stretching and a wall pressure gradient.
    CrossRoll,
    /// Seeded random coefficients on `|xi|_inf <= 2`.
    Random { seed: u64 },
}

impl Preset {
    pub fn parse(name: &str, seed: u64) -> Result<Self> {
        match name {
            "single-roll" => Ok(Preset::SingleRoll),
            "shear" => Ok(Preset::Shear),
            "cross-roll" => Ok(Preset::CrossRoll),
            "random" => Ok(Preset::Random { seed }),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::SingleRoll => "single-roll",
            Preset::Shear => "shear",
            Preset::CrossRoll => "cross-roll",
            Preset::Random { .. } => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    pub preset: Preset,
    pub amplitude: f64,
}

pub fn phi(z: f64) -> [f64; 4] {
    // phi, phi', phi'', phi'''
    let g = (-z * z).exp();
    let z2 = z * z;
    [
        z2 * g,
        (2.0 * z - 2.0 * z2 * z) * g,
        (2.0 - 10.0 * z2 + 4.0 * z2 * z2) * g,
        (-24.0 * z + 36.0 * z2 * z - 8.0 * z2 * z2 * z) * g,
    ]
}

fn potential_modes(spec: &InitialSpec, k: usize) -> Vec<(Mode, [Complex64; 3])> {
    let a = spec.amplitude;
    let c = |x: f64, y: f64, z: f64| [Complex64::new(x * a, 0.0), Complex64::new(y * a, 0.0), Complex64::new(z * a, 0.0)];
    match &spec.preset {
        Preset::SingleRoll => vec![([1, 0], c(1.0, 0.0, 0.0)), ([-1, 0], c(1.0, 0.0, 0.0))],
        Preset::Shear => vec![([0, 0], c(1.0, 0.0, 0.0))],
        Preset::CrossRoll => vec![
            ([0, 1], c(1.0, 0.0, 0.0)),
            ([0, -1], c(1.0, 0.0, 0.0)),
            ([1, 0], c(0.0, 1.0, 0.0)),
            ([-1, 0], c(0.0, 1.0, 0.0)),
        ],
        Preset::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let kk = (k as i32).min(2);
            let mut out = Vec::new();
            for x in -kk..=kk {
                for y in -kk..=kk {
                    // upper half-plane representatives; the rest by conjugation
                    if x < 0 || (x == 0 && y < 0) {
                        continue;
                    }
                    let scale = a / (1.0 + (x * x + y * y) as f64);
                    let mut cf = [Complex64::new(0.0, 0.0); 3];
                    for v in cf.iter_mut() {
                        let re = rng.random_range(-1.0..1.0);
                        let im = if x == 0 && y == 0 { 0.0 } else { rng.random_range(-1.0..1.0) };
                        *v = Complex64::new(re, im) * scale;
                    }
                    out.push(([x, y], cf));
                    if x != 0 || y != 0 {
                        out.push(([-x, -y], [cf[0].conj(), cf[1].conj(), cf[2].conj()]));
                    }
                }
            }
            out
        }
    }
}

/// `u = curl A` and `u'` for a single mode with `A = phi(z) c`.
fn mode_velocity(xi: Mode, c: &[Complex64; 3], z: f64) -> ([Complex64; 3], [Complex64; 3], [Complex64; 3]) {
    let [p0, p1, p2, p3] = phi(z);
    let ix = I * xi[0] as f64;
    let iy = I * xi[1] as f64;
    // u^(n) uses phi^(n) and phi^(n+1)
    let vel = |q0: f64, q1: f64| {
        [
            iy * c[2] * q0 - c[1] * q1,
            c[0] * q1 - ix * c[2] * q0,
            (ix * c[1] - iy * c[0]) * q0,
        ]
    };
    (vel(p0, p1), vel(p1, p2), vel(p2, p3))
}

fn curl_mode(xi: Mode, u: &[Complex64; 3], du: &[Complex64; 3]) -> [Complex64; 3] {
    let ix = I * xi[0] as f64;
    let iy = I * xi[1] as f64;
    [iy * u[2] - du[1], du[0] - ix * u[2], ix * u[1] - iy * u[0]]
}

fn fill_from_potential<F>(spec: &InitialSpec, grid: &Arc<Grid>, f: F) -> SpectralVectorField
where
    F: Fn(Mode, &[Complex64; 3], f64) -> [Complex64; 3],
{
    let mut field = SpectralVectorField::zeros(grid.clone());
    let nz = grid.nz();
    for (xi, c) in potential_modes(spec, grid.k()) {
        let Some(m) = grid.mode_index(xi) else { continue };
        let data = field.mode_data_mut(m);
        for (j, &z) in grid.z().iter().enumerate() {
            let v = f(xi, &c, z);
            for comp in 0..3 {
                data[comp * nz + j] += v[comp];
            }
        }
    }
    field
}

/// Initial vorticity `omega_0 = curl u_0`, evaluated analytically.
pub fn make_initial_data(spec: &InitialSpec, grid: &Arc<Grid>, params: &PhysParams) -> Result<SpectralVectorField> {
    params.validate()?;
    if !spec.amplitude.is_finite() {
        return Err(Error::InvalidArgument("amplitude must be finite".into()));
    }
    let mut omega = fill_from_potential(spec, grid, |xi, c, z| {
        let (u, du, _) = mode_velocity(xi, c, z);
        curl_mode(xi, &u, &du)
    });
    // omega_3 = i xi_1 u_2 - i xi_2 u_1 vanishes at the wall since phi(0) = phi'(0) = 0.
    for m in 0..grid.n_modes() {
        omega.profile_mut(m, 2)[0] = ZERO;
    }
    Ok(omega)
}

/// Analytic velocity `u_0 = curl A` of a preset.
pub fn initial_velocity(spec: &InitialSpec, grid: &Arc<Grid>) -> SpectralVectorField {
    fill_from_potential(spec, grid, |xi, c, z| mode_velocity(xi, c, z).0)
}

/// Analytic `d_z omega_0` of a preset (test oracle for divergence checks).
pub fn initial_vorticity_dz(spec: &InitialSpec, grid: &Arc<Grid>) -> SpectralVectorField {
    fill_from_potential(spec, grid, |xi, c, z| {
        let (_, du, d2u) = mode_velocity(xi, c, z);
        curl_mode(xi, &du, &d2u)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(k: usize, nz: usize) -> Arc<Grid> {
        Arc::new(make_grid(k, nz, 4.0, 1e-2, 0.5).unwrap())
    }

    #[test]
    fn grid_boundary_nodes_are_forced() {
        let g = make_grid(1, 16, 3.0, 1.0, 0.5).unwrap();
        assert_eq!(g.z()[0], 0.0);
        assert_eq!(*g.z().last().unwrap(), 3.0);
        let total: f64 = g.quad_weights().iter().sum();
        assert!((total - 3.0).abs() < 1e-14);
        assert!(g.quad_weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn grid_concentrates_nodes_in_the_layer() {
        let g = make_grid(8, 192, 4.0, 1e-3, 0.5).unwrap();
        let layer = 10.0 * 1e-3f64.sqrt();
        let count = g.z().iter().filter(|&&z| z <= layer).count();
        assert!(count >= 48, "only {count} nodes in the layer");
        assert!(g.z()[1] <= 0.25 * 1e-3f64.sqrt().min(1.0 / 192.0) + 1e-15);
    }

    #[test]
    fn grid_rejects_short_domain() {
        assert!(matches!(make_grid(8, 192, 1.4, 1e-3, 0.5), Err(Error::InvalidGrid(_))));
        assert!(make_grid(0, 32, 4.0, 1e-2, 0.5).is_err());
        assert!(make_grid(2, 8, 4.0, 1e-2, 0.5).is_err());
    }

    #[test]
    fn mode_indexing_round_trips() {
        let g = grid(3, 32);
        for (i, &xi) in g.modes().iter().enumerate() {
            assert_eq!(g.mode_index(xi), Some(i));
            let c = g.conjugate_index(i);
            assert_eq!(g.modes()[c], [-xi[0], -xi[1]]);
        }
        assert_eq!(g.mode_index([4, 0]), None);
    }

    #[test]
    fn conormal_identity_and_multiplier() {
        let g = grid(2, 64);
        let mut f = SpectralVectorField::zeros(g.clone());
        let m = g.mode_index([1, 0]).unwrap();
        for v in f.profile_mut(m, 0) {
            *v = Complex64::new(2.0, 0.0);
        }
        let id = conormal_derivative(&f, [0, 0, 0]).unwrap();
        assert_eq!(id.raw(), f.raw());
        let dx = conormal_derivative(&f, [1, 0, 0]).unwrap();
        assert!(dx.profile(m, 0).iter().all(|v| (v - Complex64::new(0.0, 2.0)).norm() < 1e-15));
    }

    #[test]
    fn conormal_vertical_factor_on_z_squared() {
        let g = grid(1, 256);
        let mut f = SpectralVectorField::zeros(g.clone());
        let m = g.mode_index([0, 0]).unwrap();
        for (v, &z) in f.profile_mut(m, 2).iter_mut().zip(g.z()) {
            *v = Complex64::new(z * z, 0.0);
        }
        let d = conormal_derivative(&f, [0, 0, 1]).unwrap();
        let num: f64 = d.profile(m, 2).iter().zip(g.z()).map(|(v, &z)| (v.re - 2.0 * z * z).powi(2)).sum();
        let den: f64 = g.z().iter().map(|&z| (2.0 * z * z).powi(2)).sum();
        assert!((num / den).sqrt() <= 1e-3);
    }

    #[test]
    fn conormal_rejects_high_order() {
        let g = grid(1, 32);
        let f = SpectralVectorField::zeros(g);
        assert!(conormal_derivative(&f, [1, 1, 1]).is_err());
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(matches!(Preset::parse("double-helix", 0), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let g = grid(2, 32);
        let spec = InitialSpec { preset: Preset::CrossRoll, amplitude: 0.0 };
        let w = make_initial_data(&spec, &g, &PhysParams::default()).unwrap();
        assert_eq!(w.max_abs(), 0.0);
    }

    #[test]
    fn presets_vanish_at_the_wall_and_are_real() {
        let g = grid(2, 64);
        for preset in [Preset::SingleRoll, Preset::Shear, Preset::CrossRoll, Preset::Random { seed: 7 }] {
            let spec = InitialSpec { preset, amplitude: 1.0 };
            let w = make_initial_data(&spec, &g, &PhysParams::default()).unwrap();
            for m in 0..g.n_modes() {
                assert_eq!(w.profile(m, 2)[0], ZERO);
            }
            w.check_reality(1e-14).unwrap();
        }
    }
}
