use std::f64::consts::PI;

use mvflow_core::spectral::{Basis, BasisConfig, BasisFamily, ModalVector};
use mvflow_core::Error;
use proptest::prelude::*;

fn basis(dim: usize, family: BasisFamily, modes: usize) -> Basis {
    Basis::new(BasisConfig::unit_box(dim, family, modes)).unwrap()
}

fn stretched(family: BasisFamily) -> Basis {
    Basis::new(BasisConfig {
        dim: 2,
        lengths: vec![1.5, 0.75],
        family,
        modes: 5,
        grid: 16,
    })
    .unwrap()
}

fn family() -> impl Strategy<Value = BasisFamily> {
    prop_oneof![Just(BasisFamily::Sine), Just(BasisFamily::Fourier)]
}

fn coefficients(b: &Basis, seed: &[f64]) -> ModalVector {
    ModalVector((0..b.len()).map(|i| seed[i % seed.len()] * (1.0 + i as f64).sin()).collect())
}

#[test]
fn sine_eigenvalues_match_closed_form() {
    let b = basis(2, BasisFamily::Sine, 4);
    for m in 0..b.n_scalar() {
        let [i, j, _] = b.mode_index(m);
        let k2 = PI * PI * (((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64);
        assert!((b.laplace_eigenvalue(m) - k2).abs() < 1e-10 * k2);
        assert!((b.tri_laplace_eigenvalue(m) - k2.powi(3)).abs() < 1e-10 * k2.powi(3));
    }
}

#[test]
fn fourier_eigenvalues_match_closed_form() {
    let b = basis(1, BasisFamily::Fourier, 5);
    let expected = [0.0, 1.0, 1.0, 4.0, 4.0].map(|q: f64| 4.0 * PI * PI * q);
    for (m, e) in expected.iter().enumerate() {
        assert!((b.laplace_eigenvalue(m) - e).abs() < 1e-10 * e.max(1.0));
    }
}

#[test]
fn gram_matrix_is_identity() {
    for f in [BasisFamily::Sine, BasisFamily::Fourier] {
        let b = stretched(f);
        let g = b.gram_matrix();
        let n = b.n_scalar();
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g[i * n + j] - e).abs() < 1e-12, "{f:?} ({i},{j}) {}", g[i * n + j]);
            }
        }
    }
}

#[test]
fn synthesis_matches_pointwise_modes() {
    for f in [BasisFamily::Sine, BasisFamily::Fourier] {
        let b = stretched(f);
        let m = 7;
        let mut c = vec![0.0; b.n_scalar()];
        c[m] = 1.0;
        let grid = b.synthesize_scalar(&c);
        for g in 0..b.n_grid() {
            assert!((grid[g] - b.mode_value(m, b.point(g))).abs() < 1e-12);
        }
    }
}

#[test]
fn derivative_of_a_single_mode_is_exact() {
    let b = stretched(BasisFamily::Sine);
    let m = 8;
    let [i, j, _] = b.mode_index(m);
    let (kx, ky) = ((i + 1) as f64 * PI / 1.5, (j + 1) as f64 * PI / 0.75);
    let amp = (2.0 / 1.5f64).sqrt() * (2.0 / 0.75f64).sqrt();
    let mut c = vec![0.0; b.n_scalar()];
    c[m] = 1.0;
    let dx = b.synthesize_scalar_derivative(&c, 0);
    for g in 0..b.n_grid() {
        let x = b.point(g);
        let exact = amp * kx * (kx * x[0]).cos() * (ky * x[1]).sin();
        assert!((dx[g] - exact).abs() < 1e-11);
    }
}

#[test]
fn flux_divergence_of_a_sine_flux() {
    let b = basis(1, BasisFamily::Sine, 4);
    let flux = vec![b.sample(|x| (3.0 * PI * x[0]).sin())];
    let div = b.flux_divergence(&flux).unwrap();
    for g in 0..b.n_grid() {
        let x = b.point(g)[0];
        assert!((div[g] - 3.0 * PI * (3.0 * PI * x).cos()).abs() < 1e-11);
    }
}

#[test]
fn density_gradient_of_a_cosine() {
    let b = basis(2, BasisFamily::Sine, 4);
    let rho = b.sample(|x| 1.0 + 0.2 * (2.0 * PI * x[0]).cos() * (PI * x[1]).cos());
    let grad = b.density_gradient(&rho).unwrap();
    for g in 0..b.n_grid() {
        let x = b.point(g);
        let gx = -0.4 * PI * (2.0 * PI * x[0]).sin() * (PI * x[1]).cos();
        let gy = -0.2 * PI * (2.0 * PI * x[0]).cos() * (PI * x[1]).sin();
        assert!((grad[0][g] - gx).abs() < 1e-11 && (grad[1][g] - gy).abs() < 1e-11);
    }
}

#[test]
fn density_diffusion_damps_each_cosine() {
    let b = basis(1, BasisFamily::Sine, 4);
    let rho = b.sample(|x| 2.0 + (2.0 * PI * x[0]).cos());
    let coeff = 0.01;
    let out = b.density_diffuse(&rho, coeff).unwrap();
    let damp = 1.0 / (1.0 + coeff * 4.0 * PI * PI);
    for g in 0..b.n_grid() {
        let x = b.point(g)[0];
        assert!((out[g] - (2.0 + damp * (2.0 * PI * x).cos())).abs() < 1e-12);
    }
}

#[test]
fn grid_mismatches_are_errors() {
    let b = basis(1, BasisFamily::Sine, 4);
    assert!(matches!(b.project_scalar(&[1.0]), Err(Error::GridMismatch { .. })));
    assert!(matches!(b.synthesize(&ModalVector::zeros(1)), Err(Error::LengthMismatch { .. })));
    let short = BasisConfig {
        grid: 4,
        ..BasisConfig::unit_box(1, BasisFamily::Sine, 4)
    };
    assert!(Basis::new(short).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent(f in family(), d in 1usize..=3, seed in prop::collection::vec(-1.0f64..1.0, 1..8)) {
        let b = basis(d, f, if d == 3 { 3 } else { 5 });
        let c = coefficients(&b, &seed);
        let back = b.project(&b.synthesize(&c).unwrap()).unwrap();
        for (x, y) in c.0.iter().zip(&back.0) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_self_adjoint(f in family(), a in prop::collection::vec(-1.0f64..1.0, 3), k in 1usize..6) {
        let b = stretched(f);
        let u = b.sample(|x| a[0] * (x[0] * k as f64).sin() + a[1] * x[1] * x[1]);
        let v = b.sample(|x| a[2] + (x[0] - x[1]).cos());
        let pu = b.synthesize_scalar(&b.project_scalar(&u).unwrap());
        let pv = b.synthesize_scalar(&b.project_scalar(&v).unwrap());
        let lhs = b.inner(&pu, &v);
        let rhs = b.inner(&u, &pv);
        prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn parseval(f in family(), seed in prop::collection::vec(-1.0f64..1.0, 1..8)) {
        let b = stretched(f);
        let c = coefficients(&b, &seed);
        let u = b.synthesize(&c).unwrap();
        let l2: f64 = u.iter().map(|comp| b.inner(comp, comp)).sum();
        prop_assert!((l2 - c.dot(&c)).abs() < 1e-12 * c.dot(&c).max(1.0));
    }

    #[test]
    fn tri_laplacian_is_self_adjoint(f in family(), s1 in prop::collection::vec(-1.0f64..1.0, 1..6), s2 in prop::collection::vec(-1.0f64..1.0, 1..6)) {
        let b = basis(2, f, 4);
        let c1 = coefficients(&b, &s1);
        let c2 = coefficients(&b, &s2);
        let a = b.tri_laplacian(&c1).unwrap().dot(&c2);
        let r = c1.dot(&b.tri_laplacian(&c2).unwrap());
        prop_assert!((a - r).abs() <= 1e-12 * a.abs().max(1.0));
        prop_assert!(b.tri_laplacian(&c1).unwrap().dot(&c1) <= 0.0);
    }

    #[test]
    fn gradient_pairing_integrates_by_parts(f in family(), seed in prop::collection::vec(-1.0f64..1.0, 1..6)) {
        // <grad u, grad w> pairing equals |kappa|^2 c on a single component
        let b = basis(2, f, 4);
        let c = coefficients(&b, &seed);
        let grad = b.velocity_gradient(&c).unwrap();
        let paired = b.pair_with_gradients(&grad).unwrap();
        let ns = b.n_scalar();
        for (i, p) in paired.0.iter().enumerate() {
            let e = b.laplace_eigenvalue(i % ns) * c.0[i];
            prop_assert!((p - e).abs() < 1e-9 * e.abs().max(1.0), "{} vs {}", p, e);
        }
    }

    #[test]
    fn transport_and_diffusion_keep_the_mean(f in family(), a in -0.5f64..0.5, k in 1usize..4, coeff in 0.0f64..0.1) {
        let b = basis(2, f, 6);
        let rho = b.sample(|x| 1.0 + a * (k as f64 * PI * x[0]).cos());
        let u = b.sample(|x| (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        let flux = vec![rho.iter().zip(&u).map(|(r, v)| r * v).collect(), u.clone()];
        let div = b.flux_divergence(&flux).unwrap();
        prop_assert!(b.integrate(&div).abs() < 1e-14);
        let m0 = b.integrate(&rho);
        let m1 = b.integrate(&b.density_diffuse(&rho, coeff).unwrap());
        prop_assert!((m1 - m0).abs() <= 4.0 * f64::EPSILON * m0);
    }
}
