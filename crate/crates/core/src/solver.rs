//! Semi-implicit Euler-Maruyama integration of the Galerkin system.
//!
//! The density lives on the grid; the evolved momentum unknown is `b = Pi_n(rho u)` in
//! modal coefficients and the velocity `c` is recovered through the density-weighted Gram
//! solve. One step from `(rho, c, b)`:
//!
//! 1. `v = chi(|c| - R) u` is the transport velocity (`chi = 1` at the base level);
//! 2. `rho* = rho - dt div(rho v)`, then `(1 - dt eps Laplace) rho' = rho*`;
//! 3. `b* = b + dt [ <rho u (x) v - S(Du) + chi p(rho) I, grad w> ] + sum_k Pi_n[rho Pi_n F_k] dW_k`;
//! 4. `b~ = b* / (1 + dt eps |kappa|^2)`;
//! 5. `(M(rho') + dt mu |kappa|^6) c' = b~` and `b' = b~ - dt mu |kappa|^6 c'`.
//!
//! Everything explicit is evaluated at the old state. The base level runs the same code
//! with `mu = eps = 0` and `chi = 1`, so both levels agree bit-exactly whenever the cutoff
//! is inactive.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::diagnostics::{EnergyTerms, LedgerRow};
use crate::error::{Error, Result};
use crate::noise::{self, NoiseColumns, NoiseKey, NoiseModel, WienerIncrement};
use crate::spectral::{apply_separable, sym_of_gradient, tensor_at, Basis, BasisFamily, ModalVector, Mat};

/// Discretization level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Level {
    Regularized { mu: f64, epsilon: f64, r: f64 },
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub level: Level,
    pub dt: f64,
    pub t_final: f64,
    pub cfl_safety: f64,
    /// Stopping guard `R`: the path is frozen once `|c| > R`. `None` disables stopping.
    pub guard: Option<f64>,
    /// Snapshot every this many steps (0: initial and final state only).
    pub checkpoint_every: usize,
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "final time must be positive, got {}",
                self.t_final
            )));
        }
        if !(self.cfl_safety > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "CFL safety factor must be positive, got {}",
                self.cfl_safety
            )));
        }
        if let Level::Regularized { mu, epsilon, r } = self.level {
            if !(mu >= 0.0 && epsilon >= 0.0 && r > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "regularized level needs mu >= 0, epsilon >= 0, R > 0, got ({mu}, {epsilon}, {r})"
                )));
            }
        }
        if let Some(g) = self.guard {
            if !(g > 0.0) {
                return Err(Error::InvalidParameter(format!("stopping guard must be positive, got {g}")));
            }
        }
        self.steps()?;
        Ok(())
    }

    /// Number of steps `T / dt`, which must be an integer.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.t_final / self.dt).round();
        if n < 1.0 || (n * self.dt - self.t_final).abs() > 1e-9 * self.t_final {
            return Err(Error::InvalidParameter(format!(
                "final time {} is not an integer multiple of dt {}",
                self.t_final, self.dt
            )));
        }
        Ok(n as usize)
    }

    pub fn mu(&self) -> f64 {
        match self.level {
            Level::Regularized { mu, .. } => mu,
            Level::Base => 0.0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self.level {
            Level::Regularized { epsilon, .. } => epsilon,
            Level::Base => 0.0,
        }
    }

    /// Cutoff factor `chi(|c| - R)` at the regularized level, 1 at the base level.
    pub fn cutoff_factor(&self, norm: f64) -> f64 {
        match self.level {
            Level::Regularized { r, .. } => chi(norm - r),
            Level::Base => 1.0,
        }
    }
}

/// C1 cutoff: 1 on `(-inf, 0]`, 0 on `[1, inf)`, cubic in between.
pub fn chi(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// `[u]_R = chi(|u| - R) u` in coefficient space.
pub fn velocity_cutoff(c: &ModalVector, r: f64) -> ModalVector {
    let f = chi(c.norm() - r);
    if f == 1.0 {
        c.clone()
    } else {
        c.scaled(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub step: u64,
    pub rho: Vec<f64>,
    /// Velocity coefficients.
    pub c: ModalVector,
    /// Momentum coefficients `Pi_n(rho u)`.
    pub b: ModalVector,
    pub seed: u64,
    pub path: u64,
    pub stopped: bool,
    pub tau: Option<f64>,
}

impl SolverState {
    /// Builds a state from density and velocity, computing the momentum coefficients.
    pub fn new(basis: &Basis, rho: Vec<f64>, c: ModalVector, seed: u64, path: u64) -> Result<Self> {
        let b = mass_apply(basis, &rho, &c)?;
        Ok(Self {
            t: 0.0,
            step: 0,
            rho,
            c,
            b,
            seed,
            path,
            stopped: false,
            tau: None,
        })
    }

    pub fn noise_key(&self) -> NoiseKey {
        NoiseKey {
            seed: self.seed,
            path: self.path,
            step: self.step,
        }
    }
}

/// Scalar block `M_ij = int rho omega_i omega_j` by separable quadrature.
pub fn mass_matrix(basis: &Basis, rho: &[f64]) -> Result<DMatrix<f64>> {
    if rho.len() != basis.n_grid() {
        return Err(Error::GridMismatch {
            expected: basis.n_grid(),
            found: rho.len(),
        });
    }
    let d = basis.dim();
    let n = basis.config().modes;
    let ns = basis.n_scalar();
    let mats: Vec<Option<&Mat>> = basis.axes().iter().map(|ax| Some(&ax.pair)).collect();
    let pairs = apply_separable(rho, basis.grid_shape(), &mats);
    let index = &basis.axes()[0].pair_index;
    let np = index.len();
    let mut m = DMatrix::zeros(ns, ns);
    for (flat, v) in pairs.iter().enumerate() {
        let mut kl = [(0usize, 0usize); 3];
        let mut rest = flat;
        for a in (0..d).rev() {
            kl[a] = index[rest % np];
            rest /= np;
        }
        // every orientation of the per-axis unordered pairs maps to the same entry
        for mask in 0..(1usize << d) {
            let mut i = 0;
            let mut j = 0;
            for (a, &(k, l)) in kl.iter().enumerate().take(d) {
                let (x, y) = if mask >> a & 1 == 1 { (l, k) } else { (k, l) };
                i = i * n + x;
                j = j * n + y;
            }
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// `M c` applied componentwise.
pub fn mass_apply(basis: &Basis, rho: &[f64], c: &ModalVector) -> Result<ModalVector> {
    if c.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            found: c.len(),
        });
    }
    let u = basis.synthesize(c)?;
    let weighted: Vec<Vec<f64>> = u
        .iter()
        .map(|comp| comp.iter().zip(rho).map(|(a, r)| a * r).collect())
        .collect();
    basis.project(&weighted)
}

/// Solves `(M(rho) + diag(shift)) c = rhs` blockwise with one Cholesky factorization.
pub fn shifted_mass_solve(
    basis: &Basis,
    rho: &[f64],
    shift: Option<&[f64]>,
    rhs: &ModalVector,
) -> Result<ModalVector> {
    if rhs.len() != basis.len() {
        return Err(Error::LengthMismatch {
            expected: basis.len(),
            found: rhs.len(),
        });
    }
    let mut m = mass_matrix(basis, rho)?;
    if let Some(s) = shift {
        for (i, v) in s.iter().enumerate() {
            m[(i, i)] += v;
        }
    }
    let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let ns = basis.n_scalar();
    let mut out = Vec::with_capacity(rhs.len());
    for a in 0..basis.dim() {
        let col = DVector::from_column_slice(rhs.component(a, ns));
        out.extend(chol.solve(&col).iter());
    }
    Ok(ModalVector(out))
}

/// Solves `M(rho) c = rhs`.
pub fn assemble_mass_solve(basis: &Basis, rho: &[f64], rhs: &ModalVector) -> Result<ModalVector> {
    shifted_mass_solve(basis, rho, None, rhs)
}

/// Smooth random initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialLaw {
    pub rho_min: f64,
    pub rho_max: f64,
    /// Highest cosine index per axis of the random density profile.
    pub density_modes: usize,
    /// Root-mean-square coefficient norm of the velocity before the tail factor.
    pub velocity_scale: f64,
    /// Spectral decay exponent of the velocity coefficients.
    pub velocity_decay: f64,
    /// Log-standard deviation of a mean-one lognormal amplitude (0: none).
    pub velocity_tail: f64,
    /// Per-axis count of excited velocity modes (0: all). Draws do not depend on the
    /// resolution as long as it is at least this count.
    #[serde(default)]
    pub velocity_modes: usize,
}

impl InitialLaw {
    pub fn equilibrium() -> Self {
        Self {
            rho_min: 1.0,
            rho_max: 1.0,
            density_modes: 1,
            velocity_scale: 0.0,
            velocity_decay: 2.0,
            velocity_tail: 0.0,
            velocity_modes: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho_max && self.rho_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density band must satisfy 0 < min <= max, got [{}, {}]",
                self.rho_min, self.rho_max
            )));
        }
        if !(self.velocity_scale >= 0.0 && self.velocity_tail >= 0.0 && self.velocity_decay >= 0.0) {
            return Err(Error::InvalidParameter(
                "velocity scale, decay and tail must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Samples `(rho0, c0)` from the law with the generator `rng`.
pub fn sample_initial_data<R: Rng>(
    law: &InitialLaw,
    basis: &Basis,
    rng: &mut R,
) -> Result<(Vec<f64>, ModalVector)> {
    law.validate()?;
    let d = basis.dim();
    let mid = 0.5 * (law.rho_min + law.rho_max);
    let half = 0.5 * (law.rho_max - law.rho_min);

    let kmax = law.density_modes.max(1);
    let shape = vec![kmax + 1; d];
    let count: usize = shape.iter().product();
    let mut profile = vec![0.0; basis.n_grid()];
    let mut amps = Vec::with_capacity(count);
    let period_factor = match basis.family() {
        BasisFamily::Sine => std::f64::consts::PI,
        BasisFamily::Fourier => 2.0 * std::f64::consts::PI,
    };
    let points = basis.points();
    for flat in 1..count {
        let mut idx = [0usize; 3];
        let mut rest = flat;
        for a in (0..d).rev() {
            idx[a] = rest % (kmax + 1);
            rest /= kmax + 1;
        }
        let k2: f64 = idx[..d].iter().map(|k| (*k * *k) as f64).sum();
        let amp: f64 = StandardNormal.sample(rng);
        let amp = amp / (1.0 + k2);
        amps.push(amp);
        let mut phases = [0.0; 3];
        for ph in phases.iter_mut().take(d) {
            let z: f64 = rng.random();
            *ph = match basis.family() {
                BasisFamily::Sine => 0.0,
                BasisFamily::Fourier => 2.0 * std::f64::consts::PI * z,
            };
        }
        for (g, x) in points.iter().enumerate() {
            let mut v = amp;
            for a in 0..d {
                let l = basis.config().lengths[a];
                v *= (period_factor * idx[a] as f64 * x[a] / l + phases[a]).cos();
            }
            profile[g] += v;
        }
    }
    let peak: f64 = amps.iter().map(|a| a.abs()).sum();
    let rho: Vec<f64> = profile
        .iter()
        .map(|s| {
            let s = if peak > 0.0 { s / peak } else { 0.0 };
            (mid + half * s).clamp(law.rho_min, law.rho_max)
        })
        .collect();

    let ns = basis.n_scalar();
    let n = basis.config().modes;
    let kv = if law.velocity_modes == 0 { n } else { law.velocity_modes.min(n) };
    let excited: Vec<usize> = (0..ns)
        .filter(|&m| basis.mode_index(m)[..d].iter().all(|&j| j < kv))
        .collect();
    let weights: Vec<f64> = excited
        .iter()
        .map(|&m| {
            let k2 = basis.laplace_eigenvalue(m) / (std::f64::consts::PI * std::f64::consts::PI);
            (1.0 + k2).powf(-law.velocity_decay)
        })
        .collect();
    let total: f64 = weights.iter().sum::<f64>() * d as f64;
    let tail = if law.velocity_tail > 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        (law.velocity_tail * z - 0.5 * law.velocity_tail * law.velocity_tail).exp()
    } else {
        1.0
    };
    let mut c = ModalVector::zeros(basis.len());
    for a in 0..d {
        for (&m, w) in excited.iter().zip(&weights) {
            let z: f64 = StandardNormal.sample(rng);
            c.0[a * ns + m] = law.velocity_scale * tail * z * (w / total).sqrt();
        }
    }
    if law.velocity_scale == 0.0 {
        c = ModalVector::zeros(basis.len());
    }
    Ok((rho, c))
}

/// Fields and terms evaluated at one state, shared by the step and the diagnostics.
#[derive(Debug, Clone)]
pub struct StateTerms {
    pub u: Vec<Vec<f64>>,
    /// `grad u`, entry `a * d + b` = `d_b u_a`.
    pub grad_u: Vec<Vec<f64>>,
    pub sym_grad: Vec<Vec<f64>>,
    pub stress: Vec<Vec<f64>>,
    pub chi: f64,
    /// `div(rho v)` on the grid.
    pub mass_flux_divergence: Vec<f64>,
    /// `<rho u (x) v - S + chi p I, grad w>` in modal coefficients.
    pub explicit: ModalVector,
    /// `-mu |kappa|^6 c - eps |kappa|^2 b`.
    pub implicit: ModalVector,
    pub noise: NoiseColumns,
    pub energy: EnergyTerms,
    pub max_transport_speed: f64,
    pub sound_speed: f64,
}

/// Increments realized over one step (left-point evaluations).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepIncrements {
    pub noise_work: f64,
    pub qv_predicted: f64,
    pub qv_realized: f64,
}

pub struct Solver<'a> {
    pub basis: &'a Basis,
    pub model: &'a ConstitutiveModel,
    pub noise: &'a NoiseModel,
    pub params: &'a SolverParams,
}

impl<'a> Solver<'a> {
    pub fn new(
        basis: &'a Basis,
        model: &'a ConstitutiveModel,
        noise: &'a NoiseModel,
        params: &'a SolverParams,
    ) -> Self {
        Self {
            basis,
            model,
            noise,
            params,
        }
    }

    pub fn terms(&self, state: &SolverState) -> Result<StateTerms> {
        let basis = self.basis;
        let d = basis.dim();
        let ng = basis.n_grid();
        let rho = &state.rho;
        let u = basis.synthesize(&state.c)?;
        let grad_u = basis.velocity_gradient(&state.c)?;
        let sym_grad = sym_of_gradient(&grad_u, d);
        let chi = self.params.cutoff_factor(state.c.norm());

        let mut stress = vec![vec![0.0; ng]; d * d];
        for g in 0..ng {
            let s = self.model.stress_of_strain(&tensor_at(&sym_grad, d, g));
            for a in 0..d {
                for b in 0..d {
                    stress[a * d + b][g] = s.get(a, b);
                }
            }
        }

        let flux: Vec<Vec<f64>> = u
            .iter()
            .map(|comp| comp.iter().zip(rho).map(|(v, r)| chi * v * r).collect())
            .collect();
        let mass_flux_divergence = basis.flux_divergence(&flux)?;

        let mut tensor = vec![vec![0.0; ng]; d * d];
        for a in 0..d {
            for b in 0..d {
                let t = &mut tensor[a * d + b];
                let s = &stress[a * d + b];
                for g in 0..ng {
                    t[g] = rho[g] * u[a][g] * chi * u[b][g] - s[g];
                    if a == b {
                        t[g] += chi * self.model.pressure(rho[g]);
                    }
                }
            }
        }
        let explicit = basis.pair_with_gradients(&tensor)?;

        let mu = self.params.mu();
        let eps = self.params.epsilon();
        let ns = basis.n_scalar();
        let implicit = ModalVector(
            (0..basis.len())
                .map(|i| {
                    let m = i % ns;
                    -mu * basis.tri_laplace_eigenvalue(m) * state.c.0[i]
                        - eps * basis.laplace_eigenvalue(m) * state.b.0[i]
                })
                .collect(),
        );

        let noise = self.noise.columns(basis, rho, &u)?;
        let energy = crate::diagnostics::energy_terms_from_fields(
            basis, self.model, self.params, state, &u, &grad_u, &sym_grad, &stress, chi, noise.ito_density,
        )?;

        let max_speed = (0..ng)
            .map(|g| u.iter().map(|c| c[g] * c[g]).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let sound_speed = self.model.pressure_slope(energy.max_rho).sqrt();
        Ok(StateTerms {
            u,
            grad_u,
            sym_grad,
            stress,
            chi,
            mass_flux_divergence,
            explicit,
            implicit,
            noise,
            energy,
            max_transport_speed: chi * max_speed,
            sound_speed,
        })
    }

    /// Largest admissible step for the current state.
    pub fn cfl_limit(&self, terms: &StateTerms) -> f64 {
        let speed = terms.max_transport_speed.max(terms.sound_speed);
        if speed > 0.0 {
            self.params.cfl_safety * self.basis.min_spacing() / speed
        } else {
            f64::INFINITY
        }
    }

    /// One step from `state` given its precomputed terms and the Wiener increment.
    pub fn advance(
        &self,
        state: &SolverState,
        terms: &StateTerms,
        dw: &WienerIncrement,
    ) -> Result<(SolverState, StepIncrements)> {
        let basis = self.basis;
        let dt = self.params.dt;
        let limit = self.cfl_limit(terms);
        if dt > limit {
            return Err(Error::CflViolation {
                t: state.t,
                dt,
                limit,
            });
        }
        let eps = self.params.epsilon();
        let mu = self.params.mu();
        let ns = basis.n_scalar();

        let mut rho: Vec<f64> = state
            .rho
            .iter()
            .zip(&terms.mass_flux_divergence)
            .map(|(r, f)| r - dt * f)
            .collect();
        if eps > 0.0 {
            rho = basis.density_diffuse(&rho, dt * eps)?;
        }
        let t_next = (state.step + 1) as f64 * dt;
        let min_rho = rho.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_rho > 0.0) {
            return Err(Error::PositivityLost {
                t: t_next,
                min_rho,
            });
        }

        let noise_inc = terms.noise.increment(basis.len(), &dw.dw);
        let mut b = state.b.clone();
        b.axpy(dt, &terms.explicit);
        b.axpy(1.0, &noise_inc);
        if eps > 0.0 {
            for (i, x) in b.0.iter_mut().enumerate() {
                *x /= 1.0 + dt * eps * basis.laplace_eigenvalue(i % ns);
            }
        }
        let c = if mu > 0.0 {
            let shift: Vec<f64> = (0..ns)
                .map(|m| dt * mu * basis.tri_laplace_eigenvalue(m))
                .collect();
            let c = shifted_mass_solve(basis, &rho, Some(&shift), &b)?;
            for (i, x) in b.0.iter_mut().enumerate() {
                *x -= shift[i % ns] * c.0[i];
            }
            c
        } else {
            assemble_mass_solve(basis, &rho, &b)?
        };

        let increments = StepIncrements {
            noise_work: noise_inc.dot(&state.c),
            qv_predicted: dt
                * terms
                    .noise
                    .columns
                    .iter()
                    .map(|g| g.dot(g))
                    .sum::<f64>(),
            qv_realized: noise_inc.dot(&noise_inc),
        };
        let mut next = SolverState {
            t: t_next,
            step: state.step + 1,
            rho,
            c,
            b,
            seed: state.seed,
            path: state.path,
            stopped: false,
            tau: None,
        };
        if let Some(g) = self.params.guard {
            stopping_time_update(&mut next, g);
        }
        Ok((next, increments))
    }

    /// Computes the terms, draws the keyed increment and advances one step.
    pub fn step(&self, state: &SolverState) -> Result<SolverState> {
        if state.stopped {
            return Ok(state.clone());
        }
        let terms = self.terms(state)?;
        let dw = noise::sample_increments(state.noise_key(), self.params.dt, self.noise.modes);
        Ok(self.advance(state, &terms, &dw)?.0)
    }
}

/// One regularized step; `params.level` must be `Regularized`.
pub fn step_regularized(
    state: &SolverState,
    params: &SolverParams,
    model: &ConstitutiveModel,
    noise: &NoiseModel,
    basis: &Basis,
) -> Result<SolverState> {
    if !matches!(params.level, Level::Regularized { .. }) {
        return Err(Error::InvalidParameter("step_regularized needs a regularized level".into()));
    }
    Solver::new(basis, model, noise, params).step(state)
}

/// One base-level step (`mu = eps = 0`, no velocity cutoff).
pub fn step_base(
    state: &SolverState,
    params: &SolverParams,
    model: &ConstitutiveModel,
    noise: &NoiseModel,
    basis: &Basis,
) -> Result<SolverState> {
    let base = SolverParams {
        level: Level::Base,
        ..params.clone()
    };
    Solver::new(basis, model, noise, &base).step(state)
}

/// Marks the state stopped at its current time when `|c| > guard`.
pub fn stopping_time_update(state: &mut SolverState, guard: f64) {
    if !state.stopped && state.c.norm() > guard {
        state.stopped = true;
        state.tau = Some(state.t);
    }
}

/// Observer hook called once per visited state (before it is advanced, and for the final state).
pub trait PathObserver {
    fn observe(
        &mut self,
        basis: &Basis,
        state: &SolverState,
        terms: &StateTerms,
        increment: Option<&WienerIncrement>,
    );
}

impl PathObserver for () {
    fn observe(&mut self, _: &Basis, _: &SolverState, _: &StateTerms, _: Option<&WienerIncrement>) {}
}

/// Stored copy of a state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub step: u64,
    pub rho: Vec<f64>,
    pub c: ModalVector,
    pub stopped: bool,
}

impl Snapshot {
    fn of(state: &SolverState) -> Self {
        Self {
            t: state.t,
            step: state.step,
            rho: state.rho.clone(),
            c: state.c.clone(),
            stopped: state.stopped,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathOutput {
    pub seed: u64,
    pub path: u64,
    pub snapshots: Vec<Snapshot>,
    pub ledger: Vec<LedgerRow>,
    pub tau: Option<f64>,
    pub final_state: SolverState,
}

/// Everything needed to integrate one path.
#[derive(Debug, Clone)]
pub struct PathSpec<'a> {
    pub basis: &'a Basis,
    pub model: &'a ConstitutiveModel,
    pub noise: &'a NoiseModel,
    pub params: &'a SolverParams,
    pub law: &'a InitialLaw,
}

/// Samples initial data for `(seed, path)` and integrates to `T` or the stopping time.
pub fn solve_path(spec: &PathSpec<'_>, seed: u64, path: u64) -> Result<PathOutput> {
    solve_path_observed(spec, seed, path, &mut ())
}

pub fn solve_path_observed(
    spec: &PathSpec<'_>,
    seed: u64,
    path: u64,
    observer: &mut dyn PathObserver,
) -> Result<PathOutput> {
    spec.params.validate()?;
    let mut rng = noise::stream_rng(seed, path, 0);
    let (rho, c) = sample_initial_data(spec.law, spec.basis, &mut rng)?;
    let state = SolverState::new(spec.basis, rho, c, seed, path)?;
    integrate_from(spec, state, observer)
}

/// Integrates an explicit initial state.
pub fn integrate_from(
    spec: &PathSpec<'_>,
    mut state: SolverState,
    observer: &mut dyn PathObserver,
) -> Result<PathOutput> {
    spec.params.validate()?;
    let solver = Solver::new(spec.basis, spec.model, spec.noise, spec.params);
    let steps = spec.params.steps()?;
    let dt = spec.params.dt;
    if let Some(g) = spec.params.guard {
        stopping_time_update(&mut state, g);
    }
    let wrap = |t: f64| move |e: Error| Error::StepFailed { t, source: Box::new(e) };

    let mut snapshots = vec![Snapshot::of(&state)];
    let mut ledger = Vec::with_capacity(steps + 1);
    let mut frozen: Option<LedgerRow> = None;
    for n in 0..=steps {
        if let Some(row) = frozen.as_mut() {
            row.t = n as f64 * dt;
            ledger.push(row.clone());
            continue;
        }
        let terms = solver.terms(&state).map_err(wrap(state.t))?;
        let mut row = LedgerRow::from_terms(state.t, &terms.energy, state.stopped);
        if n == steps || state.stopped {
            observer.observe(spec.basis, &state, &terms, None);
            ledger.push(row.clone());
            if state.stopped {
                frozen = Some(row.frozen());
            }
            continue;
        }
        let dw = noise::sample_increments(state.noise_key(), dt, spec.noise.modes);
        observer.observe(spec.basis, &state, &terms, Some(&dw));
        let (next, inc) = solver.advance(&state, &terms, &dw).map_err(wrap(state.t))?;
        row.noise_work_increment = inc.noise_work;
        row.qv_predicted = inc.qv_predicted;
        row.qv_realized = inc.qv_realized;
        ledger.push(row);
        state = next;
        let every = spec.params.checkpoint_every;
        if (every > 0 && (state.step as usize).is_multiple_of(every)) || state.step as usize == steps || state.stopped {
            snapshots.push(Snapshot::of(&state));
        }
    }
    Ok(PathOutput {
        seed: state.seed,
        path: state.path,
        snapshots,
        ledger,
        tau: state.tau,
        final_state: state,
    })
}
