use mvflow_core::constitutive::{ConstitutiveModel, PotentialFamily, SymTensor};
use mvflow_core::Error;
use proptest::prelude::*;

fn tensor(dim: usize, entries: &[f64]) -> SymTensor {
    let mut it = entries.iter().copied();
    SymTensor::from_upper(dim, |_, _| it.next().unwrap())
}

fn model_strategy() -> impl Strategy<Value = ConstitutiveModel> {
    prop_oneof![
        (1.2f64..4.0, 0.05f64..2.0).prop_map(|(p, s)| ConstitutiveModel::new(
            PotentialFamily::PowerLaw { p, scale: s },
            1.0,
            2.0
        )
        .unwrap()),
        (0.05f64..2.0, 0.0f64..1.0).prop_map(|(mu, l)| ConstitutiveModel::newtonian(mu, l, 1.0, 1.4).unwrap()),
    ]
}

fn strain_strategy() -> impl Strategy<Value = SymTensor> {
    (1usize..=3).prop_flat_map(|d| {
        prop::collection::vec(-3.0f64..3.0, d * (d + 1) / 2).prop_map(move |e| tensor(d, &e))
    })
}

/// Independent closed form of the power-law potential.
fn power_law_oracle(p: f64, scale: f64, d: &SymTensor) -> f64 {
    let n2: f64 = (0..d.dim())
        .flat_map(|i| (0..d.dim()).map(move |j| (i, j)))
        .map(|(i, j)| d.get(i, j).powi(2))
        .sum();
    scale / p * ((1.0 + n2).powf(p / 2.0) - 1.0)
}

#[test]
fn power_law_reference_values() {
    let m = ConstitutiveModel::new(PotentialFamily::PowerLaw { p: 4.0, scale: 2.0 }, 1.0, 2.0).unwrap();
    // |D|^2 = 1: 2/4 * (2^2 - 1)
    let d = tensor(2, &[1.0, 0.0, 0.0]);
    assert!((m.potential_value(&d) - 1.5).abs() < 1e-14);
    // S = 2 * (1+1)^1 * D
    assert!((m.stress_of_strain(&d).get(0, 0) - 4.0).abs() < 1e-14);
    let m = ConstitutiveModel::new(PotentialFamily::PowerLaw { p: 1.5, scale: 1.0 }, 1.0, 2.0).unwrap();
    let d = tensor(1, &[3f64.sqrt()]);
    assert!((m.potential_value(&d) - (8f64.sqrt() - 1.0) / 1.5).abs() < 1e-14);
}

#[test]
fn newtonian_conjugate_reference_value() {
    // mu = 2, lambda = 1, d = 2: F*(I) = (2 - 1/4 * 4) / 4
    let m = ConstitutiveModel::newtonian(2.0, 1.0, 1.0, 2.0).unwrap();
    let s = SymTensor::identity(2);
    assert!((m.conjugate_value(&s).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn pressure_reference_values() {
    let m = ConstitutiveModel::newtonian(1.0, 0.0, 2.0, 3.0).unwrap();
    assert_eq!(m.pressure_value(2.0).unwrap(), 16.0);
    // 2 (8 - 2) / 2
    assert_eq!(m.pressure_potential(2.0).unwrap(), 6.0);
    assert!(matches!(m.pressure_value(-1.0), Err(Error::NegativeDensity(_))));
    assert!(matches!(m.pressure_potential(0.0), Err(Error::NegativeDensity(_))));
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(ConstitutiveModel::power_law(1.0, 1.0, 2.0).is_err());
    assert!(ConstitutiveModel::newtonian(0.0, 0.0, 1.0, 2.0).is_err());
    assert!(ConstitutiveModel::newtonian(1.0, -0.1, 1.0, 2.0).is_err());
    assert!(ConstitutiveModel::newtonian(1.0, 0.0, 1.0, 1.0).is_err());
    assert!(ConstitutiveModel::newtonian(1.0, 0.0, 0.0, 2.0).is_err());
}

#[test]
fn envelope_check_reports_worst_sample() {
    let m = ConstitutiveModel::power_law(3.0, 1.0, 2.0).unwrap();
    assert!(m.envelope_check(&[]).is_none());
    let samples = vec![SymTensor::identity(2), SymTensor::zeros(2)];
    let r = m.envelope_check(&samples).unwrap();
    assert_eq!(r.violation, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn power_law_matches_closed_form(p in 1.2f64..4.0, scale in 0.05f64..2.0, d in strain_strategy()) {
        let m = ConstitutiveModel::new(PotentialFamily::PowerLaw { p, scale }, 1.0, 2.0).unwrap();
        let f = m.potential_value(&d);
        let o = power_law_oracle(p, scale, &d);
        prop_assert!((f - o).abs() <= 1e-12 * o.abs().max(1.0));
    }

    #[test]
    fn stress_is_the_gradient(m in model_strategy(), d in strain_strategy()) {
        let s = m.stress_of_strain(&d);
        let h = 1e-6;
        for i in 0..d.dim() {
            for j in i..d.dim() {
                let fd = (m.potential_value(&d.perturbed(i, j, h)) - m.potential_value(&d.perturbed(i, j, -h))) / (2.0 * h);
                // off-diagonal perturbations move both (i, j) and (j, i)
                let exact = if i == j { s.get(i, j) } else { 2.0 * s.get(i, j) };
                prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{} vs {}", fd, exact);
            }
        }
    }

    #[test]
    fn fenchel_equality_on_the_graph(m in model_strategy(), d in strain_strategy()) {
        let s = m.stress_of_strain(&d);
        let gap = m.fenchel_gap(&s, &d).unwrap();
        let scale = m.potential_value(&d).abs().max(s.ddot(&d).abs()).max(1.0);
        prop_assert!(gap.abs() <= 1e-10 * scale, "gap {}", gap);
    }

    #[test]
    fn fenchel_young_inequality(m in model_strategy(), d in strain_strategy(), e in prop::collection::vec(-5.0f64..5.0, 6)) {
        let s = tensor(d.dim(), &e[..d.dim() * (d.dim() + 1) / 2]);
        let gap = m.fenchel_gap(&s, &d).unwrap();
        prop_assert!(gap >= -1e-10 * s.norm().max(1.0).powi(4), "gap {}", gap);
    }

    #[test]
    fn stress_is_monotone(m in model_strategy(), a in strain_strategy(), e in prop::collection::vec(-3.0f64..3.0, 6)) {
        let b = tensor(a.dim(), &e[..a.dim() * (a.dim() + 1) / 2]);
        let lhs = m.stress_of_strain(&a).sub(&m.stress_of_strain(&b)).ddot(&a.sub(&b));
        prop_assert!(lhs >= -1e-12 * a.sub(&b).norm_sq().max(1.0));
    }

    #[test]
    fn pressure_potential_identities(a in 0.1f64..5.0, gamma in 1.05f64..3.0, rho in 0.05f64..10.0) {
        let m = ConstitutiveModel::newtonian(1.0, 0.0, a, gamma).unwrap();
        let h = 1e-5 * rho;
        let dp = (m.potential_energy(rho + h) - m.potential_energy(rho - h)) / (2.0 * h);
        // rho P'(rho) - P(rho) = p(rho)
        let lhs = rho * dp - m.potential_energy(rho);
        prop_assert!((lhs - m.pressure(rho)).abs() <= 1e-6 * m.pressure(rho).max(1.0));
        let d2 = (m.potential_energy(rho + h) - 2.0 * m.potential_energy(rho) + m.potential_energy(rho - h)) / (h * h);
        let exact = m.potential_curvature(rho);
        prop_assert!((d2 - exact).abs() <= 1e-4 * exact.max(1.0));
        prop_assert!((exact - m.pressure_slope(rho) / rho).abs() <= 1e-12 * exact);
    }

    #[test]
    fn envelope_is_an_n_function_below_the_potential(m in model_strategy(), d in strain_strategy(), t in 0.0f64..10.0, s in 0.0f64..1.0) {
        prop_assert!(m.envelope(d.norm()) <= m.potential_value(&d) + 1e-12 * m.potential_value(&d).max(1.0));
        prop_assert_eq!(m.envelope(0.0), 0.0);
        // convexity along a chord
        let mid = m.envelope(s * t);
        prop_assert!(mid <= s * m.envelope(t) + 1e-12 * m.envelope(t).max(1.0));
        // superlinear growth
        prop_assert!(m.envelope(1e4) / 1e4 > m.envelope(1e2) / 1e2);
    }
}
