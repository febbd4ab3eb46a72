//! One-dimensional dense re-implementation of a full step.

use std::f64::consts::PI;

use mvflow_core::constitutive::ConstitutiveModel;
use mvflow_core::noise::{sample_increments, NoiseModel};
use mvflow_core::solver::{Level, Solver, SolverParams, SolverState};
use mvflow_core::spectral::{Basis, BasisConfig, BasisFamily, ModalVector};
use nalgebra::{DMatrix, DVector};

const N: usize = 3;
const G: usize = 9;

fn nodes() -> Vec<f64> {
    (0..G).map(|j| (j as f64 + 0.5) / G as f64).collect()
}

fn omega(m: usize, x: f64) -> f64 {
    2f64.sqrt() * ((m + 1) as f64 * PI * x).sin()
}

fn omega_x(m: usize, x: f64) -> f64 {
    2f64.sqrt() * (m + 1) as f64 * PI * ((m + 1) as f64 * PI * x).cos()
}

/// Spectral derivative of grid data through an interpolating family `basis(k, x)`.
fn spectral_derivative(f: &[f64], value: impl Fn(usize, f64) -> f64, slope: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let x = nodes();
    let a = DMatrix::from_fn(G, G, |j, k| value(k, x[j]));
    let coef = a.lu().solve(&DVector::from_column_slice(f)).unwrap();
    let b = DMatrix::from_fn(G, G, |j, k| slope(k, x[j]));
    (b * coef).iter().copied().collect()
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

fn psi(alpha: f64, r: f64) -> f64 {
    if r <= alpha || r >= 1.0 / alpha {
        0.0
    } else if r < 2.0 * alpha {
        smoothstep((r - alpha) / alpha)
    } else if r <= 0.5 / alpha {
        1.0
    } else {
        smoothstep((1.0 / alpha - r) * 2.0 * alpha)
    }
}

fn phi(alpha: f64, s: f64) -> f64 {
    if s <= 0.5 / alpha {
        1.0
    } else {
        smoothstep((1.0 / alpha - s) * 2.0 * alpha)
    }
}

pub struct Setup {
    pub mu_shear: f64,
    pub gamma: f64,
    pub mu: f64,
    pub eps: f64,
    pub r: f64,
    pub alpha: f64,
    pub amp: f64,
    pub modes: usize,
    pub dt: f64,
}

fn oracle_step(s: &Setup, rho0: &[f64], c0: &[f64], dw: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let x = nodes();
    let h = 1.0 / G as f64;
    let norm = c0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let z = norm - s.r;
    let chi = if z <= 0.0 { 1.0 } else if z >= 1.0 { 0.0 } else { 1.0 - z * z * (3.0 - 2.0 * z) };
    let u: Vec<f64> = x.iter().map(|&xj| (0..N).map(|m| c0[m] * omega(m, xj)).sum()).collect();
    let ux: Vec<f64> = x.iter().map(|&xj| (0..N).map(|m| c0[m] * omega_x(m, xj)).sum()).collect();

    // continuity
    let flux: Vec<f64> = (0..G).map(|j| chi * rho0[j] * u[j]).collect();
    let div = spectral_derivative(
        &flux,
        |k, x| (((k + 1) as f64) * PI * x).sin(),
        |k, x| ((k + 1) as f64) * PI * (((k + 1) as f64) * PI * x).cos(),
    );
    let mut rho: Vec<f64> = (0..G).map(|j| rho0[j] - s.dt * div[j]).collect();
    if s.eps > 0.0 {
        let a = DMatrix::from_fn(G, G, |j, k| (k as f64 * PI * x[j]).cos());
        let coef = a.clone().lu().solve(&DVector::from_column_slice(&rho)).unwrap();
        let damped = DVector::from_fn(G, |k, _| coef[k] / (1.0 + s.dt * s.eps * (k as f64 * PI).powi(2)));
        rho = (a * damped).iter().copied().collect();
    }

    // momentum
    let proj = |f: &dyn Fn(usize) -> f64, m: usize| (0..G).map(|j| f(j) * omega(m, x[j])).sum::<f64>() * h;
    let mass = DMatrix::from_fn(N, N, |i, k| (0..G).map(|j| rho0[j] * omega(i, x[j]) * omega(k, x[j])).sum::<f64>() * h);
    let b0 = &mass * DVector::from_column_slice(c0);
    let mut b = DVector::zeros(N);
    for m in 0..N {
        let explicit: f64 = (0..G)
            .map(|j| {
                let t = rho0[j] * u[j] * chi * u[j] - s.mu_shear * ux[j] + chi * rho0[j].powf(s.gamma);
                t * omega_x(m, x[j])
            })
            .sum::<f64>()
            * h;
        b[m] = b0[m] + s.dt * explicit;
    }
    for k in 1..=s.modes {
        // profile: scalar mode k-1 rescaled to unit sup norm
        let fk = |j: usize| {
            s.amp / k as f64 * psi(s.alpha, rho0[j]) * phi(s.alpha, u[j].abs()) * omega(k - 1, x[j]) / 2f64.sqrt()
        };
        let pf: Vec<f64> = (0..N).map(|m| proj(&fk, m)).collect();
        let hk = |j: usize| rho0[j] * (0..N).map(|m| pf[m] * omega(m, x[j])).sum::<f64>();
        for m in 0..N {
            b[m] += proj(&hk, m) * dw[k - 1];
        }
    }
    for m in 0..N {
        b[m] /= 1.0 + s.dt * s.eps * ((m + 1) as f64 * PI).powi(2);
    }
    let mut lhs = DMatrix::from_fn(N, N, |i, k| (0..G).map(|j| rho[j] * omega(i, x[j]) * omega(k, x[j])).sum::<f64>() * h);
    for m in 0..N {
        lhs[(m, m)] += s.dt * s.mu * ((m + 1) as f64 * PI).powi(6);
    }
    let c = lhs.lu().solve(&b).unwrap();
    (rho, c.iter().copied().collect())
}

/// Largest density and velocity deviations between the solver and the oracle after one step.
pub fn run_case(s: &Setup) -> (f64, f64) {
    let basis = Basis::new(BasisConfig {
        dim: 1,
        lengths: vec![1.0],
        family: BasisFamily::Sine,
        modes: N,
        grid: G,
    })
    .unwrap();
    let model = ConstitutiveModel::newtonian(s.mu_shear, 0.0, 1.0, s.gamma).unwrap();
    let noise = NoiseModel::new(s.modes, s.alpha, s.amp).unwrap();
    let params = SolverParams {
        level: Level::Regularized {
            mu: s.mu,
            epsilon: s.eps,
            r: s.r,
        },
        dt: s.dt,
        t_final: s.dt,
        cfl_safety: 10.0,
        guard: None,
        checkpoint_every: 0,
    };
    let rho0 = basis.sample(|x| 1.0 + 0.3 * (PI * x[0]).cos() + 0.1 * (3.0 * PI * x[0]).cos());
    let c0 = vec![0.4, -0.25, 0.1];
    let state = SolverState::new(&basis, rho0.clone(), ModalVector(c0.clone()), 11, 3).unwrap();
    let next = Solver::new(&basis, &model, &noise, &params).step(&state).unwrap();
    let dw = sample_increments(state.noise_key(), s.dt, s.modes).dw;
    let (rho, c) = oracle_step(s, &rho0, &c0, &dw);
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    (gap(&next.rho, &rho), gap(&next.c.0, &c))
}

pub fn regularized_case() -> Setup {
    Setup {
        mu_shear: 0.1,
        gamma: 2.0,
        mu: 1e-4,
        eps: 0.05,
        r: 10.0,
        alpha: 0.25,
        amp: 1.0,
        modes: 3,
        dt: 1e-3,
    }
}

/// `|c| - R` lies inside (0, 1), so the transport and pressure are damped by chi.
pub fn cutoff_band_case() -> Setup {
    Setup {
        mu_shear: 0.05,
        gamma: 1.4,
        mu: 0.0,
        eps: 0.0,
        r: 0.2,
        alpha: 0.3,
        amp: 0.5,
        modes: 2,
        dt: 2e-3,
    }
}
