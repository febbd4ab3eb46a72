//! Convex dissipation potentials, their conjugates, and the barotropic pressure law.
//!
//! Two potential families are supported:
//!
//! * power law, `F(D) = (nu/p) [(1 + |D|^2)^{p/2} - 1]`, shifted so that `F(0) = 0`;
//!   the stress `S = nu (1 + |D|^2)^{(p-2)/2} D` is unaffected by the shift;
//! * Newtonian, `F(D) = mu/2 |D|^2 + lambda/2 (tr D)^2`.
//!
//! The pressure is isentropic, `p(rho) = a rho^gamma`, with the potential
//! `P(rho) = rho * int_1^rho p(z)/z^2 dz = a (rho^gamma - rho) / (gamma - 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric `d x d` tensor (`d <= 3`) stored as a full 3x3 array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor {
    dim: usize,
    m: [[f64; 3]; 3],
}

impl SymTensor {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=3).contains(&dim), "tensor dimension must be 1, 2 or 3");
        Self {
            dim,
            m: [[0.0; 3]; 3],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            t.m[i][i] = 1.0;
        }
        t
    }

    /// Builds a tensor from `entries(i, j)` for `i <= j`; the lower triangle is mirrored.
    pub fn from_upper(dim: usize, mut entries: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let v = entries(i, j);
                t.m[i][j] = v;
                t.m[j][i] = v;
            }
        }
        t
    }

    /// Symmetric part `(A + A^T) / 2` of a (not necessarily symmetric) matrix.
    pub fn sym_part(dim: usize, a: impl Fn(usize, usize) -> f64) -> Self {
        Self::from_upper(dim, |i, j| 0.5 * (a(i, j) + a(j, i)))
    }

    /// Fails with `InvalidParameter` if `rows` is not a symmetric square array.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if !(1..=3).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParameter(
                "tensor must be a square array of size 1, 2 or 3".into(),
            ));
        }
        for i in 0..dim {
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::InvalidParameter("tensor is not symmetric".into()));
                }
            }
        }
        Ok(Self::from_upper(dim, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    /// Frobenius contraction `A : B`.
    pub fn ddot(&self, other: &SymTensor) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.m[i][j] * other.m[i][j];
            }
        }
        s
    }

    pub fn norm_sq(&self) -> f64 {
        self.ddot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = *self;
        for row in t.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        t
    }

    pub fn add(&self, other: &SymTensor) -> Self {
        let mut t = *self;
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] += other.m[i][j];
            }
        }
        t
    }

    pub fn sub(&self, other: &SymTensor) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// Entry `(i, j)` with a small perturbation applied symmetrically.
    pub fn perturbed(&self, i: usize, j: usize, delta: f64) -> Self {
        let mut t = *self;
        t.m[i][j] += delta;
        if i != j {
            t.m[j][i] += delta;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialFamily {
    /// Shear-thinning (`p < 2`) or shear-thickening (`p > 2`) power law with viscosity scale `scale`.
    PowerLaw { p: f64, scale: f64 },
    Newtonian { mu: f64, lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstitutiveModel {
    pub family: PotentialFamily,
    pub pressure_a: f64,
    pub pressure_gamma: f64,
}

/// Outcome of comparing `F(D)` with the family envelope `g(|D|)` on a sample cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    /// `max_k (g(|D_k|) - F(D_k))`; non-positive when the envelope holds.
    pub max_excess: f64,
    /// `max(0, max_excess)`.
    pub violation: f64,
    pub worst_index: usize,
}

impl ConstitutiveModel {
    pub fn new(family: PotentialFamily, pressure_a: f64, pressure_gamma: f64) -> Result<Self> {
        let model = Self {
            family,
            pressure_a,
            pressure_gamma,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn power_law(p: f64, pressure_a: f64, pressure_gamma: f64) -> Result<Self> {
        Self::new(
            PotentialFamily::PowerLaw { p, scale: 1.0 },
            pressure_a,
            pressure_gamma,
        )
    }

    pub fn newtonian(mu: f64, lambda: f64, pressure_a: f64, pressure_gamma: f64) -> Result<Self> {
        Self::new(
            PotentialFamily::Newtonian { mu, lambda },
            pressure_a,
            pressure_gamma,
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            PotentialFamily::PowerLaw { p, scale } => {
                if !(p > 1.0 && p.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "power-law exponent must exceed 1, got {p}"
                    )));
                }
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "power-law scale must be positive, got {scale}"
                    )));
                }
            }
            PotentialFamily::Newtonian { mu, lambda } => {
                if !(mu > 0.0 && mu.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "shear viscosity must be positive, got {mu}"
                    )));
                }
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "bulk viscosity must be non-negative, got {lambda}"
                    )));
                }
            }
        }
        if !(self.pressure_a > 0.0 && self.pressure_a.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pressure coefficient must be positive, got {}",
                self.pressure_a
            )));
        }
        if !(self.pressure_gamma > 1.0 && self.pressure_gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "adiabatic exponent must exceed 1, got {}",
                self.pressure_gamma
            )));
        }
        Ok(())
    }

    /// Radial profile `f(t)` of an isotropic potential, `F(D) = f(|D|)`.
    fn radial(&self, t: f64) -> f64 {
        self.radial_sq(t * t)
    }

    fn radial_sq(&self, t2: f64) -> f64 {
        match self.family {
            PotentialFamily::PowerLaw { p, scale } => {
                // (1+x)^{p/2} - 1 evaluated without cancellation for small x
                scale / p * (0.5 * p * t2.ln_1p()).exp_m1()
            }
            PotentialFamily::Newtonian { mu, .. } => 0.5 * mu * t2,
        }
    }

    fn radial_slope(&self, t: f64) -> f64 {
        match self.family {
            PotentialFamily::PowerLaw { p, scale } => {
                scale * t * (1.0 + t * t).powf(0.5 * (p - 2.0))
            }
            PotentialFamily::Newtonian { mu, .. } => mu * t,
        }
    }

    fn radial_curvature(&self, t: f64) -> f64 {
        match self.family {
            PotentialFamily::PowerLaw { p, scale } => {
                let s = 1.0 + t * t;
                scale * s.powf(0.5 * (p - 4.0)) * (1.0 + (p - 1.0) * t * t)
            }
            PotentialFamily::Newtonian { mu, .. } => mu,
        }
    }

    /// Energy density `F(D)`.
    pub fn potential_value(&self, d: &SymTensor) -> f64 {
        match self.family {
            PotentialFamily::PowerLaw { .. } => self.radial_sq(d.norm_sq()),
            PotentialFamily::Newtonian { mu, lambda } => {
                let tr = d.trace();
                0.5 * mu * d.norm_sq() + 0.5 * lambda * tr * tr
            }
        }
    }

    /// Stress `S = grad F(D)`.
    pub fn stress_of_strain(&self, d: &SymTensor) -> SymTensor {
        match self.family {
            PotentialFamily::PowerLaw { p, scale } => {
                let factor = scale * (1.0 + d.norm_sq()).powf(0.5 * (p - 2.0));
                d.scaled(factor)
            }
            PotentialFamily::Newtonian { mu, lambda } => {
                let tr = d.trace();
                d.scaled(mu)
                    .add(&SymTensor::identity(d.dim()).scaled(lambda * tr))
            }
        }
    }

    /// Convex conjugate `F*(S) = sup_D (S:D - F(D))`.
    pub fn conjugate_value(&self, s: &SymTensor) -> Result<f64> {
        match self.family {
            PotentialFamily::Newtonian { mu, lambda } => {
                let tr = s.trace();
                let dim = s.dim() as f64;
                Ok((s.norm_sq() - lambda / (mu + dim * lambda) * tr * tr) / (2.0 * mu))
            }
            PotentialFamily::PowerLaw { .. } => self.radial_conjugate(s.norm()),
        }
    }

    /// `sup_{t >= 0} (s t - f(t))` for the radial profile, solved on the first-order
    /// condition `f'(t) = s` by bisection-safeguarded Newton iteration.
    fn radial_conjugate(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(0.0);
        }
        if !s.is_finite() {
            return Err(Error::MaximizerNotBracketed { magnitude: s });
        }
        let mut lo = 0.0_f64;
        let mut hi = 1.0_f64;
        while self.radial_slope(hi) < s {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() || hi > 1e150 {
                return Err(Error::MaximizerNotBracketed { magnitude: s });
            }
        }
        let tol = 1e-12 * s.max(1.0);
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let r = self.radial_slope(t) - s;
            if r.abs() <= tol {
                break;
            }
            if r < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - r / self.radial_curvature(t);
            t = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(s * t - self.radial(t))
    }

    /// `F(D) + F*(S) - S:D`, non-negative with equality iff `S` lies in the subdifferential at `D`.
    pub fn fenchel_gap(&self, s: &SymTensor, d: &SymTensor) -> Result<f64> {
        Ok(self.potential_value(d) + self.conjugate_value(s)? - s.ddot(d))
    }

    pub fn pressure_value(&self, rho: f64) -> Result<f64> {
        if !(rho >= 0.0) {
            return Err(Error::NegativeDensity(rho));
        }
        Ok(self.pressure(rho))
    }

    pub fn pressure_potential(&self, rho: f64) -> Result<f64> {
        if !(rho > 0.0) {
            return Err(Error::NegativeDensity(rho));
        }
        Ok(self.potential_energy(rho))
    }

    /// `a rho^gamma` without the sign check, for grid loops over validated densities.
    #[inline]
    pub fn pressure(&self, rho: f64) -> f64 {
        self.pressure_a * rho.powf(self.pressure_gamma)
    }

    #[inline]
    pub fn pressure_slope(&self, rho: f64) -> f64 {
        self.pressure_a * self.pressure_gamma * rho.powf(self.pressure_gamma - 1.0)
    }

    #[inline]
    pub fn potential_energy(&self, rho: f64) -> f64 {
        let g = self.pressure_gamma;
        self.pressure_a * (rho.powf(g) - rho) / (g - 1.0)
    }

    /// `P''(rho) = p'(rho) / rho`.
    #[inline]
    pub fn potential_curvature(&self, rho: f64) -> f64 {
        self.pressure_a * self.pressure_gamma * rho.powf(self.pressure_gamma - 2.0)
    }

    /// The family's N-function lower envelope `g` with `F(D) >= g(|D|)`.
    pub fn envelope(&self, t: f64) -> f64 {
        self.envelope_sq(t * t)
    }

    fn envelope_sq(&self, t2: f64) -> f64 {
        match self.family {
            PotentialFamily::PowerLaw { .. } => self.radial_sq(t2),
            PotentialFamily::Newtonian { mu, .. } => 0.5 * mu * t2,
        }
    }

    /// Returns `None` for an empty sample list.
    pub fn envelope_check(&self, samples: &[SymTensor]) -> Option<EnvelopeReport> {
        let mut best: Option<(usize, f64)> = None;
        for (k, d) in samples.iter().enumerate() {
            let excess = self.envelope_sq(d.norm_sq()) - self.potential_value(d);
            if best.is_none_or(|(_, e)| excess > e) {
                best = Some((k, excess));
            }
        }
        best.map(|(worst_index, max_excess)| EnvelopeReport {
            max_excess,
            violation: max_excess.max(0.0),
            worst_index,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(dim: usize, v: f64) -> SymTensor {
        SymTensor::identity(dim).scaled(v)
    }

    #[test]
    fn newtonian_identity_energy() {
        let m = ConstitutiveModel::newtonian(1.0, 0.0, 1.0, 2.0).unwrap();
        assert_eq!(m.potential_value(&SymTensor::identity(3)), 1.5);
    }

    #[test]
    fn power_law_three_reference_value() {
        let m = ConstitutiveModel::power_law(3.0, 1.0, 2.0).unwrap();
        // |D|^2 = 3
        let f = m.potential_value(&SymTensor::identity(3));
        assert!((f - 7.0 / 3.0).abs() < 1e-14, "{f}");
    }

    #[test]
    fn power_law_two_is_newtonian() {
        let pl = ConstitutiveModel::power_law(2.0, 1.0, 2.0).unwrap();
        let nw = ConstitutiveModel::newtonian(1.0, 0.0, 1.0, 2.0).unwrap();
        let d = SymTensor::from_upper(2, |i, j| 0.3 + i as f64 - 0.7 * j as f64);
        assert!((pl.potential_value(&d) - nw.potential_value(&d)).abs() < 1e-14);
        let s = pl.stress_of_strain(&d);
        assert!(s.sub(&d).norm() < 1e-15);
    }

    #[test]
    fn zero_strain_gives_zero_stress() {
        for m in [
            ConstitutiveModel::power_law(1.5, 1.0, 2.0).unwrap(),
            ConstitutiveModel::newtonian(2.0, 0.5, 1.0, 2.0).unwrap(),
        ] {
            assert_eq!(m.stress_of_strain(&SymTensor::zeros(3)).norm(), 0.0);
            assert_eq!(m.potential_value(&SymTensor::zeros(3)), 0.0);
            assert_eq!(m.conjugate_value(&SymTensor::zeros(3)).unwrap(), 0.0);
        }
    }

    #[test]
    fn newtonian_conjugate_closed_form() {
        let m = ConstitutiveModel::newtonian(2.0, 0.0, 1.0, 2.0).unwrap();
        // |S|^2 = 8
        let s = diag(2, 2.0);
        assert!((m.conjugate_value(&s).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn power_law_subcritical_gap_vanishes() {
        let m = ConstitutiveModel::power_law(1.5, 1.0, 2.0).unwrap();
        let d = diag(1, 2.0);
        let s = m.stress_of_strain(&d);
        assert!(m.fenchel_gap(&s, &d).unwrap().abs() < 1e-8);
    }

    #[test]
    fn pressure_law_values_and_errors() {
        let m = ConstitutiveModel::power_law(3.0, 1.0, 2.0).unwrap();
        assert_eq!(m.pressure_value(0.0).unwrap(), 0.0);
        assert_eq!(m.pressure_value(3.0).unwrap(), 9.0);
        assert_eq!(m.pressure_value(-1.0), Err(Error::NegativeDensity(-1.0)));
        assert_eq!(m.pressure_potential(1.0).unwrap(), 0.0);
        assert_eq!(m.pressure_potential(2.0).unwrap(), 2.0);
        assert!(matches!(
            m.pressure_potential(0.0),
            Err(Error::NegativeDensity(_))
        ));
    }

    #[test]
    fn envelope_is_tight_for_both_families() {
        let samples: Vec<_> = (0..20)
            .map(|k| SymTensor::from_upper(3, |i, j| (k as f64 * 0.37 + i as f64 - j as f64).sin()))
            .collect();
        let pl = ConstitutiveModel::power_law(3.0, 1.0, 2.0).unwrap();
        assert_eq!(pl.envelope_check(&samples).unwrap().violation, 0.0);
        let nw = ConstitutiveModel::newtonian(1.0, 0.0, 1.0, 2.0).unwrap();
        assert_eq!(nw.envelope_check(&samples).unwrap().violation, 0.0);
        assert!(nw.envelope_check(&[]).is_none());
    }

    #[test]
    fn bracket_failure_is_reported() {
        // p close to 1 with a huge stress: the maximizer escapes any finite bracket
        let m = ConstitutiveModel::power_law(1.0 + 1e-9, 1.0, 2.0).unwrap();
        let s = diag(1, 10.0);
        assert!(matches!(
            m.conjugate_value(&s),
            Err(Error::MaximizerNotBracketed { .. })
        ));
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(ConstitutiveModel::power_law(1.0, 1.0, 2.0).is_err());
        assert!(ConstitutiveModel::power_law(2.0, 1.0, 1.0).is_err());
        assert!(ConstitutiveModel::newtonian(0.0, 0.0, 1.0, 2.0).is_err());
        assert!(ConstitutiveModel::newtonian(1.0, -1.0, 1.0, 2.0).is_err());
        assert!(SymTensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0]]).is_err());
    }
}
