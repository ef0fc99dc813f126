use std::sync::Arc;

use halfspace_core::biot_savart::recover;
use halfspace_core::dump::{field_from_csv, field_to_csv};
use halfspace_core::field::{make_grid, Grid, PhysParams, SpectralVectorField};
use halfspace_core::harness::{content_hash, ExperimentConfig};
use halfspace_core::nonlinear::{nonlinearity_n, ProductPlan};
use halfspace_core::norms::{norm_x_mu, norm_y_mu};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> Arc<Grid> {
    Arc::new(make_grid(2, 32, 4.0, 1e-2, 0.5).unwrap())
}

/// Real field with a smooth profile that vanishes at the wall and decays.
fn field(g: &Arc<Grid>, seed: u64) -> SpectralVectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = SpectralVectorField::zeros(g.clone());
    for m in 0..g.n_modes() {
        for c in 0..3 {
            let a = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let z: Vec<f64> = g.z().to_vec();
            for (v, z) in f.profile_mut(m, c).iter_mut().zip(z) {
                *v = a * z * z * (-z * z).exp();
            }
        }
    }
    f.symmetrize();
    f
}

fn rel(a: &SpectralVectorField, b: &SpectralVectorField) -> f64 {
    (a.sub(b).unwrap().l2_norm_sq() / b.l2_norm_sq().max(1e-300)).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn biot_savart_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = grid();
        let (w1, w2) = (field(&g, s1), field(&g, s2));
        let mut w = w1.scaled(a);
        w.axpy(b, &w2).unwrap();
        let mut expect = recover(&w1).unwrap().u.scaled(a);
        expect.axpy(b, &recover(&w2).unwrap().u).unwrap();
        let got = recover(&w).unwrap().u;
        prop_assert!(rel(&got, &expect) < 1e-12);
    }

    #[test]
    fn nonlinearity_preserves_reality(seed in 0u64..1000) {
        let g = grid();
        let n = nonlinearity_n(&ProductPlan::new(2), &field(&g, seed)).unwrap();
        let (defect, _) = n.reality_defect();
        prop_assert!(defect <= 1e-12 * n.max_abs().max(1.0));
    }

    #[test]
    fn recovered_velocity_is_real(seed in 0u64..1000) {
        let g = grid();
        let u = recover(&field(&g, seed)).unwrap().u;
        prop_assert!(u.reality_defect().0 <= 1e-13 * u.max_abs().max(1.0));
    }

    #[test]
    fn weighted_norms_are_homogeneous(seed in 0u64..1000, c in -10.0f64..10.0, mu in 0.0f64..0.5) {
        let g = grid();
        let p = PhysParams::default();
        let f = field(&g, seed);
        let fc = f.scaled(c);
        let (x, xc) = (norm_x_mu(&f, mu, &p).unwrap().total(), norm_x_mu(&fc, mu, &p).unwrap().total());
        let (y, yc) = (norm_y_mu(&f, mu, &p).unwrap(), norm_y_mu(&fc, mu, &p).unwrap());
        prop_assert!((xc - c.abs() * x).abs() <= 1e-12 * x * c.abs().max(1.0));
        prop_assert!((yc - c.abs() * y).abs() <= 1e-12 * y * c.abs().max(1.0));
    }

    #[test]
    fn csv_round_trip_is_bit_exact(bits in proptest::collection::vec(any::<u64>(), 8)) {
        let g = Arc::new(make_grid(1, 16, 2.0, 1e-2, 0.5).unwrap());
        let mut f = SpectralVectorField::zeros(g.clone());
        let len = f.raw().len();
        for (i, b) in bits.iter().enumerate() {
            let v = f64::from_bits(*b);
            let v = if v.is_finite() { v } else { 0.5 };
            f.raw_mut()[i * 7 % len] = Complex64::new(v, -v);
        }
        let back = field_from_csv(&field_to_csv(&f), g).unwrap();
        for (a, b) in f.raw().iter().zip(back.raw()) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn config_hash_tracks_content(nu in 1e-4f64..1e-1) {
        let text = format!("nu = {nu}\nT = 0.1\n");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(cfg.nu, nu);
        prop_assert_eq!(content_hash(text.as_bytes()), content_hash(text.clone().as_bytes()));
        prop_assert_ne!(content_hash(text.as_bytes()), content_hash(format!("{text}\n").as_bytes()));
    }
}
