//! Truncated cylindrical Wiener noise with density- and velocity-dependent cutoffs.
//!
//! The coefficient of mode `k` is `G_k(rho, u) = rho F_k(rho, u)` with
//! `F_k = f_k psi(rho) phi(|u|) b_k(x)`, `f_k = amplitude / k`. `psi` is 1 on
//! `[2 alpha, 1/(2 alpha)]` and 0 outside `[alpha, 1/alpha]`, `phi` is 1 on `[0, 1/(2 alpha)]`
//! and 0 beyond `1/alpha`; both blend with the C1 cubic smoothstep. The profile `b_k`
//! is a low scalar mode of the velocity basis, rescaled to unit sup norm, pointing along
//! axis `(k - 1) mod d`.
//!
//! Increments are drawn from a counter-based stream: every `(seed, path, step, k)`
//! seeds its own generator, so a path can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Basis, BasisFamily, ModalVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Number of retained Wiener modes `K`.
    pub modes: usize,
    /// Cutoff level, `0 < alpha <= 1/3`.
    pub alpha: f64,
    /// `f_k = amplitude / k`.
    pub amplitude: f64,
}

/// Independent `N(0, dt)` increments of the retained modes.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrement {
    pub dt: f64,
    pub dw: Vec<f64>,
}

/// Position of one increment in the counter-based stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseKey {
    pub seed: u64,
    pub path: u64,
    pub step: u64,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a tuple of counters into one 64-bit seed.
pub fn mix_key(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908u64, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Generator for an auxiliary stream (initial data, etc.) of a path.
pub fn stream_rng(seed: u64, path: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(&[seed, path, u64::MAX, stream]))
}

pub fn sample_increments(key: NoiseKey, dt: f64, modes: usize) -> WienerIncrement {
    let scale = dt.sqrt();
    let dw = (0..modes as u64)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_key(&[key.seed, key.path, key.step, k]));
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    WienerIncrement { dt, dw }
}

/// `3 s^2 - 2 s^3` clamped to `[0, 1]`.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl NoiseModel {
    pub fn new(modes: usize, alpha: f64, amplitude: f64) -> Result<Self> {
        let m = Self {
            modes,
            alpha,
            amplitude,
        };
        m.validate()?;
        Ok(m)
    }

    /// Noise switched off.
    pub fn off() -> Self {
        Self {
            modes: 0,
            alpha: 0.25,
            amplitude: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "noise cutoff alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.alpha > 1.0 / 3.0 {
            return Err(Error::InvalidParameter(format!(
                "noise cutoff alpha must not exceed 1/3 for a 1-Lipschitz velocity cutoff, got {}",
                self.alpha
            )));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.modes > 0 && self.amplitude > 0.0
    }

    /// `f_k` for `k = 1..=K`.
    pub fn coefficient(&self, k: usize) -> f64 {
        self.amplitude / k as f64
    }

    pub fn coefficient_sq_sum(&self) -> f64 {
        (1..=self.modes).map(|k| self.coefficient(k).powi(2)).sum()
    }

    /// Bound on the discarded tail `sum_{k > K} f_k^2 <= amplitude^2 / K`.
    pub fn tail_bound(&self) -> f64 {
        if self.modes == 0 {
            f64::INFINITY
        } else {
            self.amplitude * self.amplitude / self.modes as f64
        }
    }

    /// Density cutoff `psi_alpha`.
    pub fn density_cutoff(&self, rho: f64) -> f64 {
        let a = self.alpha;
        if rho <= a || rho >= 1.0 / a {
            0.0
        } else if rho < 2.0 * a {
            smoothstep((rho - a) / a)
        } else if rho <= 0.5 / a {
            1.0
        } else {
            smoothstep((1.0 / a - rho) / (0.5 / a))
        }
    }

    /// Velocity cutoff `phi_alpha`, Lipschitz constant `3 alpha <= 1`.
    pub fn velocity_cutoff(&self, speed: f64) -> f64 {
        let a = self.alpha;
        if speed <= 0.5 / a {
            1.0
        } else {
            smoothstep((1.0 / a - speed) / (0.5 / a))
        }
    }

    /// Lipschitz constant of [`Self::velocity_cutoff`].
    pub fn velocity_cutoff_lipschitz(&self) -> f64 {
        3.0 * self.alpha
    }

    /// Scalar mode index and direction of the profile `b_k`.
    pub fn profile_mode(&self, basis: &Basis, k: usize) -> Result<(usize, usize)> {
        let d = basis.dim();
        let j = (k - 1) / d;
        let order = low_mode_order(basis);
        let m = *order.get(j).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "noise mode {k} needs more scalar modes than the basis provides ({})",
                basis.n_scalar()
            ))
        })?;
        Ok((m, (k - 1) % d))
    }

    /// Grid profile `b_k` (vector field with unit sup norm).
    pub fn profile(&self, basis: &Basis, k: usize) -> Result<Vec<Vec<f64>>> {
        let (m, dir) = self.profile_mode(basis, k)?;
        let scale = 1.0 / mode_sup(basis, m);
        let mut c = vec![0.0; basis.n_scalar()];
        c[m] = scale;
        let s = basis.synthesize_scalar(&c);
        Ok((0..basis.dim())
            .map(|a| if a == dir { s.clone() } else { vec![0.0; basis.n_grid()] })
            .collect())
    }

    /// Pointwise factor `f_k psi(rho) phi(|u|)`.
    fn factor(&self, k: usize, rho: f64, speed: f64) -> f64 {
        self.coefficient(k) * self.density_cutoff(rho) * self.velocity_cutoff(speed)
    }

    /// `F_k(rho, u)` on the grid.
    pub fn field(&self, basis: &Basis, k: usize, rho: &[f64], u: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let speed = speeds(u, basis.n_grid());
        let b = self.profile(basis, k)?;
        Ok(b.into_iter()
            .map(|comp| {
                comp.iter()
                    .enumerate()
                    .map(|(g, v)| self.factor(k, rho[g], speed[g]) * v)
                    .collect()
            })
            .collect())
    }

    /// `G_k = rho F_k(rho, u)` on the grid.
    pub fn diffusion_coefficient(
        &self,
        basis: &Basis,
        k: usize,
        rho: &[f64],
        u: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let mut f = self.field(basis, k, rho, u)?;
        for comp in f.iter_mut() {
            for (v, r) in comp.iter_mut().zip(rho) {
                *v *= r;
            }
        }
        Ok(f)
    }

    /// Projected coefficients of every retained mode at the state `(rho, u)`.
    pub fn columns(&self, basis: &Basis, rho: &[f64], u: &[Vec<f64>]) -> Result<NoiseColumns> {
        let mut projected = Vec::with_capacity(self.modes);
        let mut columns = Vec::with_capacity(self.modes);
        let mut ito = 0.0;
        if self.is_active() {
            for k in 1..=self.modes {
                let f = self.field(basis, k, rho, u)?;
                let pf = basis.project(&f)?;
                let h = basis.synthesize(&pf)?;
                let weighted: Vec<Vec<f64>> = h
                    .iter()
                    .map(|comp| comp.iter().zip(rho).map(|(v, r)| v * r).collect())
                    .collect();
                let energy: f64 = h
                    .iter()
                    .zip(&weighted)
                    .map(|(a, b)| basis.inner(a, b))
                    .sum();
                ito += 0.5 * energy;
                columns.push(basis.project(&weighted)?);
                projected.push(pf);
            }
        }
        Ok(NoiseColumns {
            projected,
            columns,
            ito_density: ito,
        })
    }

    /// `sum_k Pi_n[rho Pi_n[F_k]] dW_k`.
    pub fn momentum_noise_increment(
        &self,
        basis: &Basis,
        rho: &[f64],
        u: &[Vec<f64>],
        dw: &WienerIncrement,
    ) -> Result<ModalVector> {
        let cols = self.columns(basis, rho, u)?;
        Ok(cols.increment(basis.len(), &dw.dw))
    }
}

/// Per-mode projections entering the momentum equation.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseColumns {
    /// `Pi_n F_k` coefficients.
    pub projected: Vec<ModalVector>,
    /// `Pi_n[rho Pi_n F_k]` coefficients.
    pub columns: Vec<ModalVector>,
    /// `1/2 sum_k int rho |Pi_n F_k|^2` (Ito correction per unit time).
    pub ito_density: f64,
}

impl NoiseColumns {
    pub fn increment(&self, len: usize, dw: &[f64]) -> ModalVector {
        let mut out = ModalVector::zeros(len);
        for (col, w) in self.columns.iter().zip(dw) {
            out.axpy(*w, col);
        }
        out
    }
}

/// `|u|` at every grid point.
pub fn speeds(u: &[Vec<f64>], n_grid: usize) -> Vec<f64> {
    (0..n_grid)
        .map(|g| u.iter().map(|c| c[g] * c[g]).sum::<f64>().sqrt())
        .collect()
}

/// Scalar modes sorted by total index, then lexicographically.
fn low_mode_order(basis: &Basis) -> Vec<usize> {
    let d = basis.dim();
    let mut order: Vec<usize> = (0..basis.n_scalar()).collect();
    order.sort_by_key(|&m| {
        let idx = basis.mode_index(m);
        (idx[..d].iter().sum::<usize>(), idx)
    });
    order
}

/// Sup norm of scalar mode `m` over the box.
fn mode_sup(basis: &Basis, m: usize) -> f64 {
    let idx = basis.mode_index(m);
    basis
        .config()
        .lengths
        .iter()
        .enumerate()
        .map(|(a, l)| match basis.family() {
            BasisFamily::Fourier if idx[a] == 0 => 1.0 / l.sqrt(),
            _ => (2.0 / l).sqrt(),
        })
        .product()
}
