//! Finite-dimensional velocity spaces on a box, their projections and spectral operators.
//!
//! Velocity components are expanded in tensor products of one-dimensional modes:
//! `sqrt(2/L) sin(k pi x / L)` for the Dirichlet family (midpoint grid) or the real
//! Fourier modes for the periodic family (uniform grid starting at 0). The vector basis is
//! the scalar basis times the coordinate unit vectors, so a [`ModalVector`] is stored
//! component-major: coefficient `(a, m)` lives at `a * n_scalar + m`.
//!
//! Grid fields are row-major over the axes (axis 0 slowest). Vector fields are `Vec` of
//! components; tensor fields are `Vec` of `d * d` entries indexed `a * d + b`.
//!
//! The density lives on the grid and is transformed with the Neumann-compatible family
//! (cosine for Dirichlet velocity, Fourier for periodic) at full grid resolution.

mod axis;

pub use axis::{apply_separable, contract_axis, dot, AxisOps, Mat};

use serde::{Deserialize, Serialize};

use crate::constitutive::SymTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    /// Homogeneous Dirichlet velocity, Neumann density.
    Sine,
    /// Periodic box.
    Fourier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub family: BasisFamily,
    /// Modes per axis for each velocity component.
    pub modes: usize,
    /// Quadrature points per axis.
    pub grid: usize,
}

impl BasisConfig {
    /// Unit box with the default 3/2-rule grid `3 * modes`.
    pub fn unit_box(dim: usize, family: BasisFamily, modes: usize) -> Self {
        Self {
            dim,
            lengths: vec![1.0; dim],
            family,
            modes,
            grid: 3 * modes,
        }
    }

    /// Smallest admissible grid for `modes` modes per axis.
    pub fn min_grid(family: BasisFamily, modes: usize) -> usize {
        let top = match family {
            BasisFamily::Sine => modes,
            BasisFamily::Fourier => modes / 2,
        };
        2 * top + 1
    }
}

/// Velocity coefficients, component-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalVector(pub Vec<f64>);

impl ModalVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &ModalVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// Coefficient-space Euclidean norm, equal to the L2 norm of the synthesized field.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &ModalVector) {
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += factor * y;
        }
    }

    pub fn component(&self, a: usize, n_scalar: usize) -> &[f64] {
        &self.0[a * n_scalar..(a + 1) * n_scalar]
    }
}

/// Selector for [`Basis::differentiate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    SymGradient,
    Divergence,
    TriLaplacian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Derivative {
    /// `d * d` grid fields, `D[a * d + b]`.
    SymGradient(Vec<Vec<f64>>),
    Divergence(Vec<f64>),
    /// `-|kappa|^6 c`.
    TriLaplacian(ModalVector),
}

#[derive(Debug, Clone)]
pub struct Basis {
    config: BasisConfig,
    axes: Vec<AxisOps>,
    grid_shape: Vec<usize>,
    mode_shape: Vec<usize>,
    n_scalar: usize,
    n_grid: usize,
    cell_volume: f64,
    volume: f64,
    mode_indices: Vec<[usize; 3]>,
    wave_sq: Vec<f64>,
    tri: Vec<f64>,
    dens_wave_sq: Vec<f64>,
}

impl Basis {
    pub fn new(config: BasisConfig) -> Result<Self> {
        let d = config.dim;
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        if config.lengths.len() != d {
            return Err(Error::InvalidParameter(format!(
                "expected {d} box lengths, got {}",
                config.lengths.len()
            )));
        }
        if let Some(l) = config.lengths.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "box lengths must be positive, got {l}"
            )));
        }
        if config.modes < 1 {
            return Err(Error::InvalidParameter("at least one mode is required".into()));
        }
        let required = BasisConfig::min_grid(config.family, config.modes);
        if config.grid < required {
            return Err(Error::ResolutionTooLow {
                axis: 0,
                grid: config.grid,
                required,
            });
        }

        let n = config.modes;
        let axes: Vec<AxisOps> = config
            .lengths
            .iter()
            .map(|&l| AxisOps::new(config.family, l, n, config.grid))
            .collect();
        let grid_shape = vec![config.grid; d];
        let mode_shape = vec![n; d];
        let n_scalar = n.pow(d as u32);
        let n_grid = config.grid.pow(d as u32);
        let cell_volume: f64 = axes.iter().map(|a| a.spacing).product();
        let volume: f64 = config.lengths.iter().product();

        let mode_indices: Vec<[usize; 3]> = (0..n_scalar).map(|m| unravel(m, &mode_shape)).collect();
        let wave_sq: Vec<f64> = mode_indices
            .iter()
            .map(|idx| (0..d).map(|a| axes[a].wavenumbers[idx[a]].powi(2)).sum())
            .collect();
        let tri = wave_sq.iter().map(|k2| k2 * k2 * k2).collect();
        let dens_wave_sq = (0..n_grid)
            .map(|g| {
                let idx = unravel(g, &grid_shape);
                (0..d)
                    .map(|a| axes[a].dens_wavenumbers[idx[a]].powi(2))
                    .sum()
            })
            .collect();

        Ok(Self {
            config,
            axes,
            grid_shape,
            mode_shape,
            n_scalar,
            n_grid,
            cell_volume,
            volume,
            mode_indices,
            wave_sq,
            tri,
            dens_wave_sq,
        })
    }

    pub fn config(&self) -> &BasisConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn family(&self) -> BasisFamily {
        self.config.family
    }

    pub fn axes(&self) -> &[AxisOps] {
        &self.axes
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub fn mode_shape(&self) -> &[usize] {
        &self.mode_shape
    }

    /// Number of scalar modes `n^d`.
    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    /// Length of a velocity [`ModalVector`], `d * n^d`.
    pub fn len(&self) -> usize {
        self.n_scalar * self.config.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Smallest grid spacing.
    pub fn min_spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| a.spacing)
            .fold(f64::INFINITY, f64::min)
    }

    /// Per-axis indices of scalar mode `m` (unused trailing axes are 0).
    pub fn mode_index(&self, m: usize) -> [usize; 3] {
        self.mode_indices[m]
    }

    /// `|kappa|^2` of scalar mode `m`, the eigenvalue of `-Laplace`.
    pub fn laplace_eigenvalue(&self, m: usize) -> f64 {
        self.wave_sq[m]
    }

    /// `|kappa|^6` of scalar mode `m`, the eigenvalue of `-Laplace^3`.
    pub fn tri_laplace_eigenvalue(&self, m: usize) -> f64 {
        self.tri[m]
    }

    /// `|kappa|^2` per density mode (full grid resolution).
    pub fn density_laplace_eigenvalues(&self) -> &[f64] {
        &self.dens_wave_sq
    }

    /// Coordinates of grid point `g`.
    pub fn point(&self, g: usize) -> [f64; 3] {
        let idx = unravel(g, &self.grid_shape);
        let mut x = [0.0; 3];
        for a in 0..self.dim() {
            x[a] = self.axes[a].nodes[idx[a]];
        }
        x
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.n_grid).map(|g| self.point(g)).collect()
    }

    /// Samples `f` on the grid.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..self.n_grid).map(|g| f(self.point(g))).collect()
    }

    /// Value of scalar mode `m` at an arbitrary point.
    pub fn mode_value(&self, m: usize, x: [f64; 3]) -> f64 {
        let idx = self.mode_indices[m];
        (0..self.dim())
            .map(|a| {
                let l = self.config.lengths[a];
                match self.config.family {
                    BasisFamily::Sine => {
                        let k = (idx[a] + 1) as f64 * (std::f64::consts::PI / l);
                        (2.0 / l).sqrt() * (k * x[a]).sin()
                    }
                    BasisFamily::Fourier => {
                        let mm = idx[a];
                        let k = mm.div_ceil(2) as f64 * (2.0 * std::f64::consts::PI / l);
                        if mm == 0 {
                            1.0 / l.sqrt()
                        } else if mm % 2 == 1 {
                            (2.0 / l).sqrt() * (k * x[a]).cos()
                        } else {
                            (2.0 / l).sqrt() * (k * x[a]).sin()
                        }
                    }
                }
            })
            .product()
    }

    fn check_grid(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n_grid {
            return Err(Error::GridMismatch {
                expected: self.n_grid,
                found: f.len(),
            });
        }
        Ok(())
    }

    fn check_len(&self, c: &ModalVector) -> Result<()> {
        if c.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                found: c.len(),
            });
        }
        Ok(())
    }

    fn per_axis<'a>(&'a self, pick: impl Fn(usize, &'a AxisOps) -> &'a Mat) -> Vec<Option<&'a Mat>> {
        self.axes
            .iter()
            .enumerate()
            .map(|(a, ax)| Some(pick(a, ax)))
            .collect()
    }

    /// `<f, omega_m>` for every scalar mode.
    pub fn project_scalar(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_grid(f)?;
        Ok(apply_separable(
            f,
            &self.grid_shape,
            &self.per_axis(|_, ax| &ax.proj),
        ))
    }

    /// `<f, d_axis omega_m>` for every scalar mode.
    pub fn project_scalar_derivative(&self, f: &[f64], axis: usize) -> Result<Vec<f64>> {
        self.check_grid(f)?;
        Ok(apply_separable(
            f,
            &self.grid_shape,
            &self.per_axis(|a, ax| if a == axis { &ax.dproj } else { &ax.proj }),
        ))
    }

    /// Grid values of `sum_m c_m omega_m`.
    pub fn synthesize_scalar(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.n_scalar);
        apply_separable(c, &self.mode_shape, &self.per_axis(|_, ax| &ax.eval))
    }

    /// Grid values of `d_axis sum_m c_m omega_m`.
    pub fn synthesize_scalar_derivative(&self, c: &[f64], axis: usize) -> Vec<f64> {
        assert_eq!(c.len(), self.n_scalar);
        apply_separable(
            c,
            &self.mode_shape,
            &self.per_axis(|a, ax| if a == axis { &ax.deval } else { &ax.eval }),
        )
    }

    /// Componentwise projection of a grid vector field.
    pub fn project(&self, f: &[Vec<f64>]) -> Result<ModalVector> {
        if f.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: f.len(),
            });
        }
        let mut out = Vec::with_capacity(self.len());
        for comp in f {
            out.extend(self.project_scalar(comp)?);
        }
        Ok(ModalVector(out))
    }

    pub fn synthesize(&self, c: &ModalVector) -> Result<Vec<Vec<f64>>> {
        self.check_len(c)?;
        Ok((0..self.dim())
            .map(|a| self.synthesize_scalar(c.component(a, self.n_scalar)))
            .collect())
    }

    /// `grad u` on the grid, entry `a * d + b` holding `d_b u_a`.
    pub fn velocity_gradient(&self, c: &ModalVector) -> Result<Vec<Vec<f64>>> {
        self.check_len(c)?;
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                out.push(self.synthesize_scalar_derivative(c.component(a, self.n_scalar), b));
            }
        }
        Ok(out)
    }

    pub fn sym_gradient(&self, c: &ModalVector) -> Result<Vec<Vec<f64>>> {
        let g = self.velocity_gradient(c)?;
        Ok(sym_of_gradient(&g, self.dim()))
    }

    pub fn divergence(&self, c: &ModalVector) -> Result<Vec<f64>> {
        self.check_len(c)?;
        let mut div = vec![0.0; self.n_grid];
        for a in 0..self.dim() {
            let da = self.synthesize_scalar_derivative(c.component(a, self.n_scalar), a);
            for (x, y) in div.iter_mut().zip(da) {
                *x += y;
            }
        }
        Ok(div)
    }

    /// `-Laplace^3` eigenvalues applied with a minus sign: `-|kappa|^6 c`.
    pub fn tri_laplacian(&self, c: &ModalVector) -> Result<ModalVector> {
        self.check_len(c)?;
        Ok(ModalVector(
            c.0.iter()
                .enumerate()
                .map(|(i, x)| -self.tri[i % self.n_scalar] * x)
                .collect(),
        ))
    }

    pub fn differentiate(&self, c: &ModalVector, op: DiffOp) -> Result<Derivative> {
        Ok(match op {
            DiffOp::SymGradient => Derivative::SymGradient(self.sym_gradient(c)?),
            DiffOp::Divergence => Derivative::Divergence(self.divergence(c)?),
            DiffOp::TriLaplacian => Derivative::TriLaplacian(self.tri_laplacian(c)?),
        })
    }

    /// Weak divergence pairing: coefficient `(a, m)` is `sum_b <G_ab, d_b omega_m>`
    /// for a `d * d` grid tensor field `G`.
    pub fn pair_with_gradients(&self, g: &[Vec<f64>]) -> Result<ModalVector> {
        let d = self.dim();
        if g.len() != d * d {
            return Err(Error::LengthMismatch {
                expected: d * d,
                found: g.len(),
            });
        }
        let mut out = vec![0.0; self.len()];
        for a in 0..d {
            let dst = &mut out[a * self.n_scalar..(a + 1) * self.n_scalar];
            for b in 0..d {
                let part = self.project_scalar_derivative(&g[a * d + b], b)?;
                for (x, y) in dst.iter_mut().zip(part) {
                    *x += y;
                }
            }
        }
        Ok(ModalVector(out))
    }

    /// Quadrature integral of a grid scalar.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.n_grid);
        compensated_sum(f) * self.cell_volume
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        dot(f, g) * self.cell_volume
    }

    /// Scalar Gram matrix `<omega_i, omega_j>` by quadrature (row-major).
    pub fn gram_matrix(&self) -> Vec<f64> {
        let n = self.n_scalar;
        let fields: Vec<Vec<f64>> = (0..n)
            .map(|m| {
                let mut e = vec![0.0; n];
                e[m] = 1.0;
                self.synthesize_scalar(&e)
            })
            .collect();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = self.inner(&fields[i], &fields[j]);
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    }

    fn density_ops<'a>(&'a self, axis: usize, pick: impl Fn(&'a AxisOps) -> &'a Mat) -> Vec<Option<&'a Mat>> {
        (0..self.dim())
            .map(|a| if a == axis { Some(pick(&self.axes[a])) } else { None })
            .collect()
    }

    /// Gradient of a grid scalar with the Neumann/periodic extension (density, pressure).
    pub fn density_gradient(&self, rho: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_grid(rho)?;
        Ok((0..self.dim())
            .map(|a| apply_separable(rho, &self.grid_shape, &self.density_ops(a, |ax| &ax.d_even)))
            .collect())
    }

    /// `sum_a d_a flux_a` for fluxes vanishing on the faces (Dirichlet family) or periodic.
    pub fn flux_divergence(&self, flux: &[Vec<f64>]) -> Result<Vec<f64>> {
        if flux.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                found: flux.len(),
            });
        }
        let mut out = vec![0.0; self.n_grid];
        for (a, f) in flux.iter().enumerate() {
            self.check_grid(f)?;
            let part = apply_separable(f, &self.grid_shape, &self.density_ops(a, |ax| &ax.d_odd));
            for (x, y) in out.iter_mut().zip(part) {
                *x += y;
            }
        }
        // the grid mean vanishes exactly; drop its rounding residue
        let mean = crate::diagnostics::pairwise_sum(&out) / self.n_grid as f64;
        for x in out.iter_mut() {
            *x -= mean;
        }
        Ok(out)
    }

    pub fn density_to_modes(&self, rho: &[f64]) -> Result<Vec<f64>> {
        self.check_grid(rho)?;
        let mats: Vec<Option<&Mat>> = self.axes.iter().map(|ax| Some(&ax.dens_fwd)).collect();
        Ok(apply_separable(rho, &self.grid_shape, &mats))
    }

    pub fn density_from_modes(&self, modes: &[f64]) -> Result<Vec<f64>> {
        self.check_grid(modes)?;
        let mats: Vec<Option<&Mat>> = self.axes.iter().map(|ax| Some(&ax.dens_inv)).collect();
        Ok(apply_separable(modes, &self.grid_shape, &mats))
    }

    /// Spectral Laplacian of a grid scalar with the Neumann/periodic extension.
    pub fn density_laplacian(&self, rho: &[f64]) -> Result<Vec<f64>> {
        let mut m = self.density_to_modes(rho)?;
        for (x, k2) in m.iter_mut().zip(&self.dens_wave_sq) {
            *x *= -k2;
        }
        self.density_from_modes(&m)
    }

    /// Solves `(1 - coeff * Laplace) r = rho` in the density modes.
    pub fn density_diffuse(&self, rho: &[f64], coeff: f64) -> Result<Vec<f64>> {
        if coeff == 0.0 {
            self.check_grid(rho)?;
            return Ok(rho.to_vec());
        }
        let mut m = self.density_to_modes(rho)?;
        for (x, k2) in m.iter_mut().zip(&self.dens_wave_sq) {
            *x /= 1.0 + coeff * k2;
        }
        // the mean is invariant; remove the rounding residue of the transforms from the update
        let mut delta: Vec<f64> = self
            .density_from_modes(&m)?
            .iter()
            .zip(rho)
            .map(|(a, b)| a - b)
            .collect();
        let mean = compensated_sum(&delta) / self.n_grid as f64;
        for x in delta.iter_mut() {
            *x -= mean;
        }
        Ok(rho.iter().zip(&delta).map(|(r, x)| r + x).collect())
    }
}

/// Symmetric part of a velocity gradient field (`d * d` entries).
pub fn sym_of_gradient(g: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            if a == b {
                out.push(g[a * d + a].clone());
            } else {
                out.push(
                    g[a * d + b]
                        .iter()
                        .zip(&g[b * d + a])
                        .map(|(x, y)| 0.5 * (x + y))
                        .collect(),
                );
            }
        }
    }
    out
}

/// Tensor at grid point `g` of a `d * d` tensor field.
/// Neumaier-compensated sum.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn tensor_at(field: &[Vec<f64>], d: usize, g: usize) -> SymTensor {
    SymTensor::from_upper(d, |a, b| field[a * d + b][g])
}

fn unravel(mut flat: usize, shape: &[usize]) -> [usize; 3] {
    let mut idx = [0; 3];
    for a in (0..shape.len()).rev() {
        idx[a] = flat % shape[a];
        flat /= shape[a];
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn single_mode_on_pi_interval() {
        let b = Basis::new(BasisConfig {
            dim: 1,
            lengths: vec![PI],
            family: BasisFamily::Sine,
            modes: 1,
            grid: 3,
        })
        .unwrap();
        assert_eq!(b.tri_laplace_eigenvalue(0), 1.0);
        let x = [0.7, 0.0, 0.0];
        assert!((b.mode_value(0, x) - (2.0 / PI).sqrt() * 0.7f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn tri_laplace_eigenvalues_are_k_to_the_sixth() {
        let b = Basis::new(BasisConfig {
            dim: 1,
            lengths: vec![PI],
            family: BasisFamily::Sine,
            modes: 8,
            grid: 24,
        })
        .unwrap();
        for m in 0..8 {
            assert_eq!(b.tri_laplace_eigenvalue(m), ((m + 1) as f64).powi(6));
        }
    }

    #[test]
    fn grid_below_margin_is_rejected() {
        let err = Basis::new(BasisConfig {
            dim: 2,
            lengths: vec![1.0, 1.0],
            family: BasisFamily::Sine,
            modes: 8,
            grid: 16,
        })
        .unwrap_err();
        assert_eq!(
            err,
            Error::ResolutionTooLow {
                axis: 0,
                grid: 16,
                required: 17
            }
        );
    }

    #[test]
    fn gram_is_identity() {
        for family in [BasisFamily::Sine, BasisFamily::Fourier] {
            for dim in [1, 2] {
                let b = Basis::new(BasisConfig::unit_box(dim, family, 8)).unwrap();
                let g = b.gram_matrix();
                let n = b.n_scalar();
                for i in 0..n {
                    for j in 0..n {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((g[i * n + j] - e).abs() < 1e-10, "{family:?} {i} {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn projecting_a_basis_function_gives_a_unit_coefficient() {
        let b = Basis::new(BasisConfig::unit_box(2, BasisFamily::Sine, 4)).unwrap();
        let f = b.sample(|x| b.mode_value(3, x));
        let c = b.project_scalar(&f).unwrap();
        for (m, v) in c.iter().enumerate() {
            let e = if m == 3 { 1.0 } else { 0.0 };
            assert!((v - e).abs() < 1e-10);
        }
    }

    #[test]
    fn divergence_of_single_sine_mode() {
        let b = Basis::new(BasisConfig {
            dim: 1,
            lengths: vec![PI],
            family: BasisFamily::Sine,
            modes: 4,
            grid: 12,
        })
        .unwrap();
        let k = 3.0;
        let mut c = ModalVector::zeros(4);
        c.0[2] = (PI / 2.0).sqrt();
        let div = b.divergence(&c).unwrap();
        for g in 0..b.n_grid() {
            let x = b.point(g)[0];
            assert!((div[g] - k * (k * x).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn trace_of_sym_gradient_is_divergence() {
        let b = Basis::new(BasisConfig::unit_box(3, BasisFamily::Fourier, 4)).unwrap();
        let mut s = 11;
        let c = ModalVector((0..b.len()).map(|_| lcg(&mut s)).collect());
        let dsym = b.sym_gradient(&c).unwrap();
        let div = b.divergence(&c).unwrap();
        for g in 0..b.n_grid() {
            let tr = dsym[0][g] + dsym[4][g] + dsym[8][g];
            assert!((tr - div[g]).abs() < 1e-12);
        }
    }

    #[test]
    fn density_diffusion_conserves_mass() {
        let b = Basis::new(BasisConfig::unit_box(2, BasisFamily::Sine, 6)).unwrap();
        let rho = b.sample(|x| 1.0 + 0.3 * (5.0 * x[0]).sin() * x[1]);
        let r = b.density_diffuse(&rho, 0.1).unwrap();
        assert!((b.integrate(&rho) - b.integrate(&r)).abs() < 1e-14);
    }

    #[test]
    fn flux_divergence_integrates_to_zero() {
        for family in [BasisFamily::Sine, BasisFamily::Fourier] {
            let b = Basis::new(BasisConfig::unit_box(2, family, 5)).unwrap();
            let f0 = b.sample(|x| (x[0] * 3.0).exp() * (1.0 + x[1]));
            let f1 = b.sample(|x| (x[0] - x[1]).cos());
            let div = b.flux_divergence(&[f0, f1]).unwrap();
            assert!(b.integrate(&div).abs() < 1e-12);
        }
    }
}
