use mpotomo::statesim::{ghz_density, maximally_mixed, pure_product, purity, random_mpdo, MpdoConfig};
use mpotomo::C64;
use nalgebra::DMatrix;

fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    // Hermitian spectrum via the real symmetric embedding [[A, -B], [B, A]].
    let d = h.nrows();
    let real = DMatrix::from_fn(2 * d, 2 * d, |i, j| {
        let z = h[(i % d, j % d)];
        match (i < d, j < d) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    real.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

#[test]
fn random_mpdo_draws_are_density_operators() {
    for n in 1..=4 {
        for kappa in 1..=3 {
            let cfg = MpdoConfig::new(n, kappa, 100 + n as u64 * 10 + kappa as u64).with_k_l(2);
            let rho = random_mpdo(&cfg).unwrap();
            assert!(rho.max_rank() <= kappa * kappa);
            let dense = rho.to_dense().unwrap();
            assert!((dense.trace() - C64::new(1.0, 0.0)).norm() <= 1e-10);
            assert!(dense.hermitian_deviation() <= 1e-10);
            assert!(min_eigenvalue(dense.matrix()) >= -1e-10);
            let p = purity(&rho);
            assert!(p <= 1.0 + 1e-10 && p >= 1.0 / 2f64.powi(n as i32) - 1e-10);
        }
    }
}

#[test]
fn reference_states_match_explicit_matrices() {
    let ghz = ghz_density(3).unwrap().to_dense().unwrap();
    let mut psi = DMatrix::zeros(8, 8);
    for (i, j) in [(0, 0), (0, 7), (7, 0), (7, 7)] {
        psi[(i, j)] = C64::new(0.5, 0.0);
    }
    assert!((ghz.matrix() - psi).iter().all(|z| z.norm() <= 1e-12));

    let mixed = maximally_mixed(3, 2).unwrap().to_dense().unwrap();
    assert!((mixed.matrix() - DMatrix::identity(8, 8) * C64::new(0.125, 0.0)).iter().all(|z| z.norm() <= 1e-12));

    let basis = pure_product("101").unwrap().to_dense().unwrap();
    let mut e = DMatrix::zeros(8, 8);
    e[(5, 5)] = C64::new(1.0, 0.0);
    assert!((basis.matrix() - e).iter().all(|z| z.norm() <= 1e-12));
}

#[test]
fn config_json_defaults_and_seed_determinism() {
    let cfg: MpdoConfig = serde_json::from_str(r#"{"n": 3, "kappa": 2, "seed": 7}"#).unwrap();
    assert_eq!(cfg, MpdoConfig::new(3, 2, 7));
    let a = random_mpdo(&cfg).unwrap();
    let b = random_mpdo(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(random_mpdo(&MpdoConfig::new(0, 1, 0)).is_err());
}
