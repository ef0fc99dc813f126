//! Weighted analytic and Sobolev norms of vorticity fields, evaluated on the
//! real trace `z in [0, 1 + mu]`, and the cumulative triple norm.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{apply_derivative, xi_norm, DerivativeKind, MultiIndex, PhysParams, SpectralVectorField};

/// Offset of the last sampled `mu` below `mu0 - gamma t`.
pub const MU_ENDPOINT_OFFSET: f64 = 5e-4;

/// Constants `C`, `C'` for which the weight decay bound holds.
pub const WEIGHT_DECAY_C: f64 = 1.0;
pub const WEIGHT_DECAY_C_PRIME: f64 = 1.0;

const FIRST_ORDER: [MultiIndex; 4] = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]];
const SECOND_ORDER: [MultiIndex; 6] = [[2, 0, 0], [1, 1, 0], [1, 0, 1], [0, 2, 0], [0, 1, 1], [0, 0, 2]];
/// Highest total order in the `Z` norm.
pub const Z_ORDER: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub phys: PhysParams,
    pub mu_samples: usize,
}

impl NormParams {
    pub fn new(phys: PhysParams, mu_samples: usize) -> Result<Self> {
        let p = Self { phys, mu_samples };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.phys.validate()?;
        if self.mu_samples < 8 {
            return Err(Error::InvalidArgument(format!("mu_samples = {} < 8", self.mu_samples)));
        }
        Ok(())
    }

    /// `mu0 / (2 gamma)`.
    pub fn t_max(&self) -> f64 {
        self.phys.mu0 / (2.0 * self.phys.gamma)
    }

    /// `mu_samples - 1` uniform points in `(0, mu0 - gamma t)` plus one just
    /// below the endpoint.
    pub fn mu_grid(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t <= self.t_max()) {
            return Err(Error::TimeOutOfRange { t, t_max: self.t_max() });
        }
        let top = self.phys.mu0 - self.phys.gamma * t;
        let n = self.mu_samples;
        let mut mus: Vec<f64> = (1..n).map(|i| top * i as f64 / n as f64).collect();
        mus.push(top - MU_ENDPOINT_OFFSET.min(0.5 * top / n as f64));
        Ok(mus)
    }
}

/// `w(z) = max(sqrt(nu), z)` on `[0, 1]`, 1 beyond.
pub fn weight_w(z: f64, nu: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::InvalidArgument(format!("weight at z = {z} < 0")));
    }
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu = {nu} outside (0, 1]")));
    }
    Ok(if z <= 1.0 { nu.sqrt().max(z) } else { 1.0 })
}

fn w_unchecked(z: f64, sqrt_nu: f64) -> f64 {
    if z <= 1.0 {
        sqrt_nu.max(z)
    } else {
        1.0
    }
}

/// Split of `||f||_{X_mu}` into the weighted horizontal part and the
/// unweighted vertical part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XBreakdown {
    pub horizontal: f64,
    pub vertical: f64,
}

impl XBreakdown {
    pub fn total(&self) -> f64 {
        self.horizontal + self.vertical
    }
}

fn check_mu(mu: f64, p: &PhysParams) -> Result<()> {
    if !(mu >= 0.0 && mu < p.mu0) {
        return Err(Error::InvalidArgument(format!("mu = {mu} outside [0, mu0 = {})", p.mu0)));
    }
    Ok(())
}

fn x_mu_unchecked(f: &SpectralVectorField, mu: f64, p: &PhysParams) -> XBreakdown {
    let grid = f.grid();
    let top = 1.0 + mu;
    let z = grid.z();
    let last = z.partition_point(|&v| v <= top);
    let sqrt_nu = p.nu.sqrt();
    let per_mode: Vec<(f64, f64)> = (0..grid.n_modes())
        .into_par_iter()
        .map(|mi| {
            let k = xi_norm(grid.modes()[mi]);
            let (a, b, c) = (f.profile(mi, 0), f.profile(mi, 1), f.profile(mi, 2));
            let (mut h, mut v) = (0.0f64, 0.0f64);
            for j in 0..last {
                let e = (p.eps0 * (top - z[j]).max(0.0) * k).exp();
                let mag = (a[j].norm_sqr() + b[j].norm_sqr()).sqrt();
                h = h.max(e * w_unchecked(z[j], sqrt_nu) * mag);
                v = v.max(e * c[j].norm());
            }
            (h, v)
        })
        .collect();
    let (mut horizontal, mut vertical) = (0.0, 0.0);
    for (h, v) in per_mode {
        horizontal += h;
        vertical += v;
    }
    XBreakdown { horizontal, vertical }
}

/// `||f||_{X_mu}` on the nodes of `[0, 1 + mu]`.
pub fn norm_x_mu(f: &SpectralVectorField, mu: f64, p: &PhysParams) -> Result<XBreakdown> {
    check_mu(mu, p)?;
    p.validate()?;
    Ok(x_mu_unchecked(f, mu, p))
}

/// `int_a^b` of the piecewise-linear interpolant of `vals`.
fn linear_integral(z: &[f64], vals: &[f64], a: f64, b: f64) -> f64 {
    let mut s = 0.0;
    for j in 0..z.len() - 1 {
        let (lo, hi) = (z[j].max(a), z[j + 1].min(b));
        if hi <= lo {
            continue;
        }
        let h = z[j + 1] - z[j];
        let at = |x: f64| vals[j] + (vals[j + 1] - vals[j]) * (x - z[j]) / h;
        s += 0.5 * (hi - lo) * (at(lo) + at(hi));
    }
    s
}

fn y_mu_unchecked(f: &SpectralVectorField, mu: f64) -> f64 {
    let grid = f.grid();
    let z = grid.z();
    let per_mode: Vec<f64> = (0..grid.n_modes())
        .into_par_iter()
        .map(|mi| {
            let mult = 1.0 + xi_norm(grid.modes()[mi]);
            (0..3)
                .map(|c| {
                    let abs: Vec<f64> = f.profile(mi, c).iter().map(|v| v.norm()).collect();
                    linear_integral(z, &abs, 0.0, 1.0 + mu)
                })
                .sum::<f64>()
                * mult
        })
        .collect();
    per_mode.iter().sum()
}

/// `sum_xi (1 + |xi|) sum_c ||f_{c,xi}||_{L^1(0, 1 + mu)}`.
pub fn norm_y_mu(f: &SpectralVectorField, mu: f64, p: &PhysParams) -> Result<f64> {
    check_mu(mu, p)?;
    Ok(y_mu_unchecked(f, mu))
}

/// One row of the per-`mu` table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuRow {
    pub mu: f64,
    /// `||f||_{X_mu}`
    pub x_mu: f64,
    pub x_horizontal: f64,
    pub x_vertical: f64,
    /// weighted derivative sum entering `X(t)`
    pub x_combined: f64,
    /// `Y_mu` of `(1 + |grad_h|) f`
    pub y_mu: f64,
    pub y_combined: f64,
    pub s_mu: f64,
}

struct Derivatives {
    first: Vec<SpectralVectorField>,
    second: Vec<SpectralVectorField>,
}

fn conormal_family(f: &SpectralVectorField) -> Derivatives {
    let take = |set: &[MultiIndex]| set.iter().map(|&a| apply_derivative(f, a, DerivativeKind::Conormal)).collect();
    Derivatives { first: take(&FIRST_ORDER), second: take(&SECOND_ORDER) }
}

fn combined<F: Fn(&SpectralVectorField) -> f64>(d: &Derivatives, factor: f64, norm: F) -> f64 {
    d.first.iter().map(&norm).sum::<f64>() + factor * d.second.iter().map(&norm).sum::<f64>()
}

/// `X(t)`: sup over the `mu` grid of the derivative sum with the
/// `(mu0 - mu - gamma t)^{1/2 + a}` factor on second derivatives.
pub fn norm_x_of_t(f: &SpectralVectorField, t: f64, np: &NormParams) -> Result<f64> {
    np.validate()?;
    let d = conormal_family(f);
    let p = &np.phys;
    let mut best: f64 = 0.0;
    for mu in np.mu_grid(t)? {
        let factor = (p.mu0 - mu - p.gamma * t).powf(0.5 + p.a);
        best = best.max(combined(&d, factor, |g| x_mu_unchecked(g, mu, p).total()));
    }
    Ok(best)
}

/// `Y(t)` with the per-`mu` combined values.
pub fn norm_y(f: &SpectralVectorField, t: f64, np: &NormParams) -> Result<(Vec<(f64, f64)>, f64)> {
    np.validate()?;
    let d = conormal_family(f);
    let p = &np.phys;
    let mut table = Vec::new();
    let mut best: f64 = 0.0;
    for mu in np.mu_grid(t)? {
        let factor = (p.mu0 - mu - p.gamma * t).powf(p.a);
        let v = combined(&d, factor, |g| y_mu_unchecked(g, mu));
        best = best.max(v);
        table.push((mu, v));
    }
    Ok((table, best))
}

/// Smooth ramp: 0 below 1/4, 1 above 1/2.
pub fn psi_bar(z: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let s = (z - 0.25) / 0.25;
    let (a, b) = (h(s), h(1.0 - s));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// `phi(z) = z psi_bar(z)`.
pub fn cutoff_phi(z: f64) -> f64 {
    z * psi_bar(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevNorms {
    pub s_mu: f64,
    pub s: f64,
    pub z: f64,
    /// `Z` with `z 1_{z >= 1/2}` replaced by the smooth cutoff `phi`.
    pub z_phi: f64,
}

/// Per mode, `int_a^{Z_max} weight(z)^2 sum_c |f_c|^2`.
fn weighted_sq<W: Fn(f64) -> f64 + Sync>(f: &SpectralVectorField, a: f64, weight: W) -> Vec<f64> {
    let grid = f.grid();
    let z = grid.z();
    (0..grid.n_modes())
        .into_par_iter()
        .map(|mi| {
            let vals: Vec<f64> = (0..z.len())
                .map(|j| {
                    let s: f64 = (0..3).map(|c| f.profile(mi, c)[j].norm_sqr()).sum();
                    weight(z[j]).powi(2) * s
                })
                .collect();
            linear_integral(z, &vals, a, grid.z_max())
        })
        .collect()
}

fn s_mu_unchecked(f: &SpectralVectorField, mu: f64) -> f64 {
    weighted_sq(f, 1.0 + mu, |z| z).iter().map(|v| v.sqrt()).sum()
}

fn z_from_tables(tables: &[Vec<f64>], modes: &[[i32; 2]]) -> f64 {
    let mut total = 0.0;
    for order in 0..=Z_ORDER {
        for a3 in 0..=order {
            for a1 in 0..=(order - a3) {
                let a2 = order - a3 - a1;
                let sq: f64 = modes
                    .iter()
                    .zip(&tables[a3 as usize])
                    .map(|(xi, q)| (xi[0] as f64).powi(2 * a1 as i32) * (xi[1] as f64).powi(2 * a2 as i32) * q)
                    .sum();
                total += sq.sqrt();
            }
        }
    }
    total
}

/// `S_mu`, `S`, `Z` and the cutoff variant of `Z`; vertical derivatives are
/// repeated mesh derivatives.
pub fn norm_s_and_z(f: &SpectralVectorField, mu: f64) -> Result<SobolevNorms> {
    let grid = f.grid().clone();
    if !(mu >= 0.0) {
        return Err(Error::InvalidArgument(format!("mu = {mu} < 0")));
    }
    if 1.0 + mu >= grid.z_max() {
        return Err(Error::InvalidGrid(format!("Z_max = {} does not extend beyond 1 + mu", grid.z_max())));
    }
    let s_mu = s_mu_unchecked(f, mu);
    let mut dz = vec![f.clone()];
    for _ in 0..Z_ORDER {
        let next = apply_derivative(dz.last().unwrap(), [0, 0, 1], DerivativeKind::Plain);
        dz.push(next);
    }
    let plain: Vec<Vec<f64>> = dz.iter().map(|g| weighted_sq(g, 0.5, |z| z)).collect();
    let smooth: Vec<Vec<f64>> = dz.iter().map(|g| weighted_sq(g, 0.0, cutoff_phi)).collect();
    let s = plain[0].iter().sum::<f64>().sqrt();
    Ok(SobolevNorms {
        s_mu,
        s,
        z: z_from_tables(&plain, grid.modes()),
        z_phi: z_from_tables(&smooth, grid.modes()),
    })
}

/// Fitted exponential decay rate `r` in `sum_z |f_xi| ~ e^{-r |xi|}`, or
/// `None` with fewer than two distinct nonzero shells.
pub fn spectral_decay_rate(f: &SpectralVectorField) -> Option<f64> {
    let grid = f.grid();
    let w = grid.quad_weights();
    let amp: Vec<(f64, f64)> = (0..grid.n_modes())
        .map(|mi| {
            let s: f64 = (0..3)
                .map(|c| f.profile(mi, c).iter().zip(w).map(|(v, w)| v.norm() * w).sum::<f64>())
                .sum();
            (xi_norm(grid.modes()[mi]), s)
        })
        .collect();
    let peak = amp.iter().map(|a| a.1).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = amp.into_iter().filter(|a| a.1 > 1e-13 * peak && a.1 > 0.0).map(|(k, s)| (k, s.ln())).collect();
    let first = pts.first()?.0;
    if pts.iter().all(|p| p.0 == first) {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub t: f64,
    pub x_t: f64,
    pub y_t: f64,
    pub z: f64,
    pub s: f64,
    pub z_phi: f64,
    pub triple: f64,
    pub table: Vec<MuRow>,
    pub spectral_decay: Option<f64>,
}

/// `|||f|||_t = X(t) + Y(t) + Z` with per-`mu` breakdowns.
pub fn cumulative_norm(f: &SpectralVectorField, t: f64, np: &NormParams) -> Result<NormReport> {
    np.validate()?;
    if !f.is_finite() {
        return Err(Error::NonFinite("norm input"));
    }
    let p = &np.phys;
    let mus = np.mu_grid(t)?;
    let d = conormal_family(f);
    let mut table = Vec::with_capacity(mus.len());
    let (mut x_t, mut y_t): (f64, f64) = (0.0, 0.0);
    for &mu in &mus {
        let gap = p.mu0 - mu - p.gamma * t;
        let xb = x_mu_unchecked(f, mu, p);
        let x_combined = combined(&d, gap.powf(0.5 + p.a), |g| x_mu_unchecked(g, mu, p).total());
        let y_combined = combined(&d, gap.powf(p.a), |g| y_mu_unchecked(g, mu));
        x_t = x_t.max(x_combined);
        y_t = y_t.max(y_combined);
        table.push(MuRow {
            mu,
            x_mu: xb.total(),
            x_horizontal: xb.horizontal,
            x_vertical: xb.vertical,
            x_combined,
            y_mu: y_mu_unchecked(f, mu),
            y_combined,
            s_mu: s_mu_unchecked(f, mu),
        });
    }
    let sz = norm_s_and_z(f, 0.0)?;
    Ok(NormReport {
        t,
        x_t,
        y_t,
        z: sz.z,
        s: sz.s,
        z_phi: sz.z_phi,
        triple: x_t + y_t + sz.z,
        table,
        spectral_decay: spectral_decay_rate(f),
    })
}

/// Outcome of the sampled weight-property check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCheck {
    pub samples: usize,
    /// failures of properties (a) to (e)
    pub failures: [usize; 5],
}

impl WeightCheck {
    pub fn passed(&self) -> bool {
        self.failures.iter().all(|&f| f == 0)
    }
}

/// Samples `(y, z, nu)` and counts violations of: monotonicity, doubling
/// (`C = 2`), the bounds `sqrt(nu) <= w <= 1`, `y <= C w(y)`, and the
/// decay bound with [`WEIGHT_DECAY_C`], [`WEIGHT_DECAY_C_PRIME`].
pub fn check_weight_properties(samples: usize, mu0: f64, seed: u64) -> Result<WeightCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = 1.0 + mu0;
    let slack = 1e-15;
    let mut failures = [0usize; 5];
    for _ in 0..samples {
        let nu = 10f64.powf(rng.random_range(-8.0..=0.0));
        let sq = nu.sqrt();
        let a = rng.random_range(0.0..=top);
        let b = rng.random_range(0.0..=top);
        let (y, z) = if a <= b { (a, b) } else { (b, a) };
        let (wy, wz) = (weight_w(y, nu)?, weight_w(z, nu)?);
        if wy > wz * (1.0 + slack) {
            failures[0] += 1;
        }
        // doubling: any y with y/2 <= z
        let y2 = rng.random_range(0.0..=(2.0 * z).min(top));
        if weight_w(y2, nu)? > 2.0 * wz * (1.0 + slack) {
            failures[1] += 1;
        }
        if wy < sq * (1.0 - slack) || wy > 1.0 {
            failures[2] += 1;
        }
        let c = if y <= 1.0 { 1.0 } else { top };
        if y > c * wy * (1.0 + slack) {
            failures[3] += 1;
        }
        if wy * (-y / (WEIGHT_DECAY_C * sq)).exp() > WEIGHT_DECAY_C_PRIME * sq * (1.0 + slack) {
            failures[4] += 1;
        }
    }
    Ok(WeightCheck { samples, failures })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use num_complex::Complex64;

    use super::*;
    use crate::field::{make_grid, make_initial_data, Grid, InitialSpec, Preset};

    fn grid(nz: usize) -> Arc<Grid> {
        Arc::new(make_grid(2, nz, 4.0, 1e-2, 0.5).unwrap())
    }

    fn params() -> NormParams {
        NormParams::new(PhysParams::default(), 8).unwrap()
    }

    fn single(g: &Arc<Grid>, xi: [i32; 2], comp: usize, prof: impl Fn(f64) -> f64) -> SpectralVectorField {
        let mut f = SpectralVectorField::zeros(g.clone());
        let mi = g.mode_index(xi).unwrap();
        let z = g.z().to_vec();
        for (v, z) in f.profile_mut(mi, comp).iter_mut().zip(&z) {
            *v = Complex64::new(prof(*z), 0.0);
        }
        f
    }

    #[test]
    fn weight_examples() {
        assert_eq!(weight_w(0.5, 0.01).unwrap(), 0.5);
        assert!((weight_w(0.0, 0.04).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(weight_w(1.2, 1e-4).unwrap(), 1.0);
        assert!(weight_w(-0.1, 0.01).is_err());
    }

    #[test]
    fn weight_properties_hold() {
        let c = check_weight_properties(10_000, 0.5, 7).unwrap();
        assert!(c.passed(), "{c:?}");
    }

    #[test]
    fn x_mu_examples() {
        let g = grid(64);
        let p = PhysParams::default();
        let zero = SpectralVectorField::zeros(g.clone());
        assert_eq!(norm_x_mu(&zero, 0.2, &p).unwrap().total(), 0.0);
        let f = single(&g, [0, 0], 2, |_| 1.0);
        let x = norm_x_mu(&f, 0.3, &p).unwrap();
        assert!((x.vertical - 1.0).abs() < 1e-15 && x.horizontal == 0.0);
        let p = PhysParams { nu: 0.04, mu0: 1.0, ..Default::default() };
        let f = single(&g, [1, 0], 0, |z| if z == 0.0 { 1.0 } else { 0.0 });
        let x = norm_x_mu(&f, 0.5, &p).unwrap();
        let want = (0.125f64 * 1.5).exp() * 0.2;
        assert!((x.horizontal - want).abs() < 1e-14, "{} {want}", x.horizontal);
        assert!(norm_x_mu(&f, 1.0, &p).is_err());
    }

    #[test]
    fn y_examples() {
        let g = grid(64);
        let p = PhysParams::default();
        let f = single(&g, [0, 0], 1, |_| 1.0);
        assert!((norm_y_mu(&f, 0.3, &p).unwrap() - 1.3).abs() < 1e-13);
        let h = single(&g, [1, 0], 1, |_| 1.0);
        assert!((norm_y_mu(&h, 0.3, &p).unwrap() - 2.6).abs() < 1e-13);
    }

    #[test]
    fn s_example() {
        let g = Arc::new(make_grid(1, 2048, 4.0, 1.0, 0.5).unwrap());
        let f = single(&g, [0, 0], 0, |z| if (1.0..=2.0).contains(&z) { 1.0 } else { 0.0 });
        let s = norm_s_and_z(&f, 0.0).unwrap();
        assert!((s.s_mu - (7.0f64 / 3.0).sqrt()).abs() < 1e-2, "{}", s.s_mu);
        assert!(s.z >= s.s);
    }

    #[test]
    fn zero_field_zero_report() {
        let g = grid(32);
        let r = cumulative_norm(&SpectralVectorField::zeros(g), 0.0, &params()).unwrap();
        assert_eq!(r.triple, 0.0);
        assert!(r.table.iter().all(|row| row.x_mu == 0.0 && row.y_mu == 0.0));
    }

    #[test]
    fn mu_grid_shape() {
        let np = params();
        let mus = np.mu_grid(0.1).unwrap();
        assert_eq!(mus.len(), 8);
        let top = 0.5 - 0.1;
        assert!(top - mus[7] <= 1e-3 && mus[7] < top);
        assert!(mus.windows(2).all(|w| w[1] > w[0]));
        assert!(np.mu_grid(0.25).is_ok());
        assert!(np.mu_grid(0.26).is_err());
    }

    #[test]
    fn report_structure_and_monotonicity() {
        let g = grid(96);
        let w = make_initial_data(&InitialSpec { preset: Preset::SingleRoll, amplitude: 1.0 }, &g, &PhysParams::default()).unwrap();
        let np = params();
        let r = cumulative_norm(&w, 0.0, &np).unwrap();
        assert!((r.triple - (r.x_t + r.y_t + r.z)).abs() <= 1e-12 * r.triple);
        assert!(r.table.windows(2).all(|p| p[1].x_mu >= p[0].x_mu));
        let later = norm_x_of_t(&w, 0.1, &np).unwrap();
        assert!(later <= norm_x_of_t(&w, 0.0, &np).unwrap());
        let c = cumulative_norm(&w.scaled(-2.5), 0.0, &np).unwrap();
        assert!((c.triple - 2.5 * r.triple).abs() <= 1e-12 * c.triple);
    }

    #[test]
    fn psi_bar_ramp() {
        assert_eq!(psi_bar(0.2), 0.0);
        assert_eq!(psi_bar(0.6), 1.0);
        let v: Vec<f64> = (0..=100).map(|i| psi_bar(0.25 + 0.0025 * i as f64)).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
    }
}
