//! Energy ledgers and the numerical checks built on them.
//!
//! A ledger row holds instantaneous values at its time `t` (energies, dissipation rates,
//! the Ito correction rate) plus the noise work and quadratic-variation increments of the
//! step that starts at `t`. Time integrals of rates use the left point, matching the
//! Euler-Maruyama step.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::constitutive::ConstitutiveModel;
use crate::error::{Error, Result};
use crate::spectral::{tensor_at, Basis, BasisFamily, ModalVector};
use crate::solver::{PathObserver, SolverParams, SolverState, Snapshot, StateTerms};
use crate::noise::WienerIncrement;

/// Quadrature values of the energy and dissipation terms at one state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub kinetic: f64,
    pub potential: f64,
    pub dissipation_f: f64,
    pub dissipation_fstar: f64,
    /// `int S : Du`.
    pub stress_power: f64,
    /// `1/2 sum_k int rho |Pi_n F_k|^2`.
    pub ito_correction: f64,
    /// `mu int |grad^3 u|^2`.
    pub dissipation_mu: f64,
    /// `eps int rho |grad u|^2`.
    pub dissipation_eps_u: f64,
    /// `eps int P''(rho) |grad rho|^2`.
    pub dissipation_eps_rho: f64,
    /// `int rho log rho`.
    pub entropy: f64,
    /// `int rho div v` for the transport velocity `v`.
    pub rho_div_u: f64,
    /// `eps int |grad rho|^2 / rho`.
    pub eps_fisher: f64,
    /// `sup |div v|`.
    pub div_u_sup: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub norm_u: f64,
}

impl EnergyTerms {
    pub fn energy(&self) -> f64 {
        self.kinetic + self.potential
    }

    /// Total dissipation rate entering the energy balance.
    pub fn dissipation(&self) -> f64 {
        self.dissipation_f
            + self.dissipation_fstar
            + self.dissipation_mu
            + self.dissipation_eps_u
            + self.dissipation_eps_rho
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn energy_terms_from_fields(
    basis: &Basis,
    model: &ConstitutiveModel,
    params: &SolverParams,
    state: &SolverState,
    u: &[Vec<f64>],
    grad_u: &[Vec<f64>],
    sym_grad: &[Vec<f64>],
    stress: &[Vec<f64>],
    chi: f64,
    ito: f64,
) -> Result<EnergyTerms> {
    let d = basis.dim();
    let ng = basis.n_grid();
    let w = basis.cell_volume();
    let rho = &state.rho;
    let eps = params.epsilon();
    let mu = params.mu();

    let mut t = EnergyTerms {
        min_rho: f64::INFINITY,
        max_rho: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    let mut fsum = 0.0;
    let mut fstar = 0.0;
    let mut power = 0.0;
    let mut entropy = 0.0;
    let mut rho_div = 0.0;
    let mut div_sup = 0.0f64;
    let mut grad_sq_weighted = 0.0;
    for g in 0..ng {
        let r = rho[g];
        let speed2: f64 = u.iter().map(|c| c[g] * c[g]).sum();
        kinetic += 0.5 * r * speed2;
        potential += model.potential_energy(r);
        let dg = tensor_at(sym_grad, d, g);
        let sg = tensor_at(stress, d, g);
        fsum += model.potential_value(&dg);
        fstar += model.conjugate_value(&sg)?;
        power += sg.ddot(&dg);
        entropy += r * r.ln();
        let div: f64 = (0..d).map(|a| grad_u[a * d + a][g]).sum::<f64>() * chi;
        rho_div += r * div;
        div_sup = div_sup.max(div.abs());
        let gu2: f64 = grad_u.iter().map(|c| c[g] * c[g]).sum();
        grad_sq_weighted += r * gu2;
        t.min_rho = t.min_rho.min(r);
        t.max_rho = t.max_rho.max(r);
    }
    t.kinetic = kinetic * w;
    t.potential = potential * w;
    t.dissipation_f = fsum * w;
    t.dissipation_fstar = fstar * w;
    t.stress_power = power * w;
    t.entropy = entropy * w;
    t.rho_div_u = rho_div * w;
    t.div_u_sup = div_sup;
    t.mass = basis.integrate(rho);
    t.norm_u = state.c.norm();
    t.ito_correction = ito;
    if mu > 0.0 {
        let ns = basis.n_scalar();
        t.dissipation_mu = mu
            * state
                .c
                .0
                .iter()
                .enumerate()
                .map(|(i, x)| basis.tri_laplace_eigenvalue(i % ns) * x * x)
                .sum::<f64>();
    }
    if eps > 0.0 {
        let grad_rho = basis.density_gradient(rho)?;
        let mut pot = 0.0;
        let mut fisher = 0.0;
        for g in 0..ng {
            let gr2: f64 = grad_rho.iter().map(|c| c[g] * c[g]).sum();
            pot += model.potential_curvature(rho[g]) * gr2;
            fisher += gr2 / rho[g];
        }
        t.dissipation_eps_u = eps * grad_sq_weighted * w;
        t.dissipation_eps_rho = eps * pot * w;
        t.eps_fisher = eps * fisher * w;
    }
    Ok(t)
}

/// Kinetic, potential and dissipation-split integrals of a state.
pub fn energy_terms(
    state: &SolverState,
    model: &ConstitutiveModel,
    basis: &Basis,
    params: &SolverParams,
) -> Result<EnergyTerms> {
    let noise = crate::noise::NoiseModel::off();
    let solver = crate::solver::Solver::new(basis, model, &noise, params);
    Ok(solver.terms(state)?.energy)
}

/// One ledger record.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub dissipation_f: f64,
    pub dissipation_fstar: f64,
    pub ito_correction: f64,
    pub noise_work_increment: f64,
    pub mass: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub norm_u: f64,
    pub stopped: bool,
    pub dissipation_mu: f64,
    pub dissipation_eps_u: f64,
    pub dissipation_eps_rho: f64,
    pub entropy: f64,
    pub rho_div_u: f64,
    pub eps_fisher: f64,
    pub div_u_sup: f64,
    pub qv_predicted: f64,
    pub qv_realized: f64,
}

pub const LEDGER_COLUMNS: [&str; 21] = [
    "t",
    "kinetic",
    "potential",
    "dissipation_F",
    "dissipation_Fstar",
    "ito_correction",
    "noise_work_increment",
    "mass",
    "min_rho",
    "max_rho",
    "norm_u",
    "stopped",
    "dissipation_mu",
    "dissipation_eps_u",
    "dissipation_eps_rho",
    "entropy",
    "rho_div_u",
    "eps_fisher",
    "div_u_sup",
    "qv_predicted",
    "qv_realized",
];

impl LedgerRow {
    pub fn from_terms(t: f64, e: &EnergyTerms, stopped: bool) -> Self {
        Self {
            t,
            kinetic: e.kinetic,
            potential: e.potential,
            dissipation_f: e.dissipation_f,
            dissipation_fstar: e.dissipation_fstar,
            ito_correction: e.ito_correction,
            noise_work_increment: 0.0,
            mass: e.mass,
            min_rho: e.min_rho,
            max_rho: e.max_rho,
            norm_u: e.norm_u,
            stopped,
            dissipation_mu: e.dissipation_mu,
            dissipation_eps_u: e.dissipation_eps_u,
            dissipation_eps_rho: e.dissipation_eps_rho,
            entropy: e.entropy,
            rho_div_u: e.rho_div_u,
            eps_fisher: e.eps_fisher,
            div_u_sup: e.div_u_sup,
            qv_predicted: 0.0,
            qv_realized: 0.0,
        }
    }

    /// Copy of a stopped row with every rate and increment zeroed.
    pub fn frozen(&self) -> Self {
        Self {
            t: self.t,
            kinetic: self.kinetic,
            potential: self.potential,
            mass: self.mass,
            min_rho: self.min_rho,
            max_rho: self.max_rho,
            norm_u: self.norm_u,
            entropy: self.entropy,
            stopped: true,
            ..Default::default()
        }
    }

    pub fn energy(&self) -> f64 {
        self.kinetic + self.potential
    }

    pub fn dissipation(&self) -> f64 {
        self.explicit_dissipation() + self.implicit_dissipation()
    }

    /// Stress dissipation, treated explicitly by the scheme.
    pub fn explicit_dissipation(&self) -> f64 {
        self.dissipation_f + self.dissipation_fstar
    }

    /// Hyperviscous and artificial-diffusion dissipation, treated implicitly by the scheme.
    pub fn implicit_dissipation(&self) -> f64 {
        self.dissipation_mu + self.dissipation_eps_u + self.dissipation_eps_rho
    }

    fn values(&self) -> [f64; 21] {
        [
            self.t,
            self.kinetic,
            self.potential,
            self.dissipation_f,
            self.dissipation_fstar,
            self.ito_correction,
            self.noise_work_increment,
            self.mass,
            self.min_rho,
            self.max_rho,
            self.norm_u,
            if self.stopped { 1.0 } else { 0.0 },
            self.dissipation_mu,
            self.dissipation_eps_u,
            self.dissipation_eps_rho,
            self.entropy,
            self.rho_div_u,
            self.eps_fisher,
            self.div_u_sup,
            self.qv_predicted,
            self.qv_realized,
        ]
    }

    fn from_values(v: &[f64; 21]) -> Self {
        Self {
            t: v[0],
            kinetic: v[1],
            potential: v[2],
            dissipation_f: v[3],
            dissipation_fstar: v[4],
            ito_correction: v[5],
            noise_work_increment: v[6],
            mass: v[7],
            min_rho: v[8],
            max_rho: v[9],
            norm_u: v[10],
            stopped: v[11] != 0.0,
            dissipation_mu: v[12],
            dissipation_eps_u: v[13],
            dissipation_eps_rho: v[14],
            entropy: v[15],
            rho_div_u: v[16],
            eps_fisher: v[17],
            div_u_sup: v[18],
            qv_predicted: v[19],
            qv_realized: v[20],
        }
    }
}

/// Writes the ledger as CSV with a header row; floats use shortest round-trip formatting.
pub fn write_ledger_csv<W: Write>(rows: &[LedgerRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", LEDGER_COLUMNS.join(","))?;
    for row in rows {
        let line: Vec<String> = row
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 11 { format!("{}", *v as u8) } else { format!("{v:?}") })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_ledger_csv<R: BufRead>(input: R) -> Result<Vec<LedgerRow>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::IncompleteLedger("missing header".into()))?
        .map_err(|e| Error::IncompleteLedger(e.to_string()))?;
    if header.trim() != LEDGER_COLUMNS.join(",") {
        return Err(Error::IncompleteLedger(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::IncompleteLedger(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut v = [0.0; 21];
        let mut count = 0;
        for (i, field) in line.split(',').enumerate() {
            if i >= 21 {
                count = 22;
                break;
            }
            v[i] = field.trim().parse().map_err(|_| {
                Error::IncompleteLedger(format!("row {}: cannot parse {field:?}", lineno + 1))
            })?;
            count += 1;
        }
        if count != 21 {
            return Err(Error::IncompleteLedger(format!(
                "row {}: expected 21 fields",
                lineno + 1
            )));
        }
        rows.push(LedgerRow::from_values(&v));
    }
    Ok(rows)
}

fn check_ledger(rows: &[LedgerRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::IncompleteLedger("no rows".into()));
    }
    for (i, w) in rows.windows(2).enumerate() {
        if !(w[1].t > w[0].t) {
            return Err(Error::IncompleteLedger(format!("time not increasing at row {}", i + 1)));
        }
    }
    if let Some(i) = rows.iter().position(|r| r.values().iter().any(|v| !v.is_finite())) {
        return Err(Error::IncompleteLedger(format!("non-finite value in row {i}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMode {
    /// `E(t) - E(0) + int dissipation - int Ito`.
    Deterministic,
    /// The deterministic residual minus the realized noise work.
    PathwiseStochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub mode: ResidualMode,
    /// Residual at every ledger time.
    pub series: Vec<f64>,
    pub final_residual: f64,
    pub max_residual: f64,
    /// Energy scale `max(E(0), int dissipation)` for relative tolerances.
    pub scale: f64,
}

/// Energy-balance residual along one ledger. Explicit rates enter as left-point sums and
/// implicit ones as right-point sums, matching the time discretization.
pub fn ledger_residual(rows: &[LedgerRow], mode: ResidualMode) -> Result<ResidualReport> {
    check_ledger(rows)?;
    let e0 = rows[0].energy();
    let mut series = Vec::with_capacity(rows.len());
    let mut diss = 0.0;
    let mut ito = 0.0;
    let mut work = 0.0;
    series.push(0.0);
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !a.stopped {
            let dt = b.t - a.t;
            diss += dt * (a.explicit_dissipation() + b.implicit_dissipation());
            ito += dt * a.ito_correction;
            work += a.noise_work_increment;
        }
        let mut r = b.energy() - e0 + diss - ito;
        if mode == ResidualMode::PathwiseStochastic {
            r -= work;
        }
        series.push(r);
    }
    let final_residual = *series.last().unwrap();
    let max_residual = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ResidualReport {
        mode,
        series,
        final_residual,
        max_residual,
        scale: e0.abs().max(diss),
    })
}

/// Normal-approximation confidence interval for a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const Z95: f64 = 1.959963984540054;

/// Mean and 95% interval; pairwise summation keeps the result order-stable.
pub fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len();
    if n == 0 {
        return MeanCi {
            n,
            mean: f64::NAN,
            std_error: f64::NAN,
            lower: f64::NAN,
            upper: f64::NAN,
        };
    }
    let mean = pairwise_sum(values) / n as f64;
    let var = if n > 1 {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    let se = (var / n as f64).sqrt();
    MeanCi {
        n,
        mean,
        std_error: se,
        lower: mean - Z95 * se,
        upper: mean + Z95 * se,
    }
}

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResidual {
    pub finals: Vec<f64>,
    pub ci: MeanCi,
    /// The interval contains a value `<= 0`.
    pub covers_nonpositive: bool,
}

/// Mean over paths of the final residual (martingale term averaged out), with a 95% CI.
pub fn ensemble_residual(ledgers: &[Vec<LedgerRow>]) -> Result<EnsembleResidual> {
    let finals = ledgers
        .iter()
        .map(|l| ledger_residual(l, ResidualMode::Deterministic).map(|r| r.final_residual))
        .collect::<Result<Vec<_>>>()?;
    let ci = mean_ci(&finals);
    Ok(EnsembleResidual {
        covers_nonpositive: ci.lower <= 0.0,
        finals,
        ci,
    })
}

/// Path summary used by the moment and stopping reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub initial_energy: f64,
    pub sup_energy: f64,
    /// `int_0^T int S : Du`.
    pub stress_work: f64,
    /// `int_0^T int F(Du)`.
    pub potential_work: f64,
    pub sup_norm_sq: f64,
    pub survived: bool,
    pub tau: Option<f64>,
    pub final_time: f64,
}

pub fn summarize_path(rows: &[LedgerRow]) -> Result<PathSummary> {
    check_ledger(rows)?;
    let mut stress = 0.0;
    let mut f = 0.0;
    for w in rows.windows(2) {
        if !w[0].stopped {
            let dt = w[1].t - w[0].t;
            stress += dt * (w[0].dissipation_f + w[0].dissipation_fstar);
            f += dt * w[0].dissipation_f;
        }
    }
    let first_stop = rows.iter().find(|r| r.stopped);
    Ok(PathSummary {
        initial_energy: rows[0].energy(),
        sup_energy: rows.iter().map(|r| r.energy()).fold(f64::NEG_INFINITY, f64::max),
        stress_work: stress,
        potential_work: f,
        sup_norm_sq: rows.iter().map(|r| r.norm_u * r.norm_u).fold(0.0, f64::max),
        survived: first_stop.is_none(),
        tau: first_stop.map(|r| r.t),
        final_time: rows.last().unwrap().t,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub n: usize,
    pub paths: usize,
    pub sup_energy_moment: MeanCi,
    pub stress_work_moment: MeanCi,
    pub initial_moment: f64,
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub r: f64,
    pub constant: f64,
    pub rows: Vec<MomentRow>,
    pub bounded: bool,
}

/// `E[sup E]^r` and `E[int int S:Du]^r` per resolution against `C (E[E0^r] + 1)`, with `C`
/// fitted on the first (smallest) resolution.
pub fn moment_report(ladder: &[(usize, Vec<PathSummary>)], r: f64) -> Result<MomentReport> {
    if r < 2.0 {
        return Err(Error::InvalidParameter(format!("moment order must be at least 2, got {r}")));
    }
    if ladder.is_empty() || ladder.iter().any(|(_, p)| p.is_empty()) {
        return Err(Error::InvalidParameter("moment report needs nonempty ensembles".into()));
    }
    let mut rows: Vec<MomentRow> = ladder
        .iter()
        .map(|(n, paths)| {
            let e: Vec<f64> = paths.iter().map(|p| p.sup_energy.max(0.0).powf(r)).collect();
            let s: Vec<f64> = paths.iter().map(|p| p.stress_work.max(0.0).powf(r)).collect();
            let e0: Vec<f64> = paths.iter().map(|p| p.initial_energy.max(0.0).powf(r)).collect();
            MomentRow {
                n: *n,
                paths: paths.len(),
                sup_energy_moment: mean_ci(&e),
                stress_work_moment: mean_ci(&s),
                initial_moment: pairwise_sum(&e0) / e0.len() as f64,
                bound: 0.0,
                within_bound: true,
            }
        })
        .collect();
    let first = &rows[0];
    let constant =
        first.sup_energy_moment.mean.max(first.stress_work_moment.mean) / (first.initial_moment + 1.0);
    let mut bounded = true;
    for row in rows.iter_mut() {
        row.bound = constant * (row.initial_moment + 1.0);
        row.within_bound =
            row.sup_energy_moment.lower <= row.bound && row.stress_work_moment.lower <= row.bound;
        bounded &= row.within_bound;
    }
    Ok(MomentReport {
        r,
        constant,
        rows,
        bounded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseBounds {
    pub min_rho: f64,
    pub max_rho: f64,
    pub sup_norm_u: f64,
    pub positive: bool,
    /// Every row lies within `[lo e^{-I(t)}, hi e^{I(t)}]`, `I(t) = int_0^t |div v|_inf`.
    pub within_characteristic_band: bool,
    pub worst_band_excess: f64,
}

/// Extrema over the ledger and the characteristics band for initial band `(lo, hi)`.
pub fn pointwise_bounds(rows: &[LedgerRow], band: (f64, f64)) -> Result<PointwiseBounds> {
    check_ledger(rows)?;
    let mut integral = 0.0;
    let mut worst = f64::NEG_INFINITY;
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            let prev = &rows[i - 1];
            if !prev.stopped {
                integral += (row.t - prev.t) * prev.div_u_sup.max(row.div_u_sup);
            }
        }
        let lo = band.0 * (-integral).exp();
        let hi = band.1 * integral.exp();
        worst = worst.max(lo - row.min_rho).max(row.max_rho - hi);
    }
    let tol = 1e-12 * band.1.max(1.0);
    Ok(PointwiseBounds {
        min_rho: rows.iter().map(|r| r.min_rho).fold(f64::INFINITY, f64::min),
        max_rho: rows.iter().map(|r| r.max_rho).fold(f64::NEG_INFINITY, f64::max),
        sup_norm_u: rows.iter().map(|r| r.norm_u).fold(0.0, f64::max),
        positive: rows.iter().all(|r| r.min_rho > 0.0),
        within_characteristic_band: worst <= tol,
        worst_band_excess: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrliczCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Norm constant `c` in `g0(t) = g(t / c)`.
pub fn orlicz_constant(basis: &Basis) -> f64 {
    let lmax = basis.config().lengths.iter().copied().fold(1.0, f64::max);
    (basis.dim() as f64).sqrt() * lmax
}

/// `int g0(|u|)` against `3 int F(Du)` for a Dirichlet-family velocity.
pub fn orlicz_velocity_check(
    c: &ModalVector,
    model: &ConstitutiveModel,
    basis: &Basis,
    tol: f64,
) -> Result<OrliczCheck> {
    if basis.family() != BasisFamily::Sine {
        return Err(Error::WrongBasisFamily);
    }
    let d = basis.dim();
    let u = basis.synthesize(c)?;
    let dsym = basis.sym_gradient(c)?;
    let k = orlicz_constant(basis);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for g in 0..basis.n_grid() {
        let speed = u.iter().map(|comp| comp[g] * comp[g]).sum::<f64>().sqrt();
        lhs += model.envelope(speed / k);
        rhs += model.potential_value(&tensor_at(&dsym, d, g));
    }
    let lhs = lhs * basis.cell_volume();
    let rhs = 3.0 * rhs * basis.cell_volume();
    Ok(OrliczCheck {
        lhs,
        rhs,
        pass: lhs <= rhs + tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// Cumulative residual of `d/dt int rho log rho + int rho div v + eps int |grad rho|^2/rho`.
    pub series: Vec<f64>,
    pub max_abs: f64,
    /// Largest value of the eps term `-eps int |grad rho|^2 / rho` (must be <= 0).
    pub max_eps_term: f64,
}

/// Entropy balance along a ledger, trapezoid rule in time.
pub fn entropy_residual(rows: &[LedgerRow]) -> Result<EntropyReport> {
    check_ledger(rows)?;
    let mut series = vec![0.0];
    let mut acc = 0.0;
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.stopped {
            series.push(acc);
            continue;
        }
        let dt = b.t - a.t;
        acc += b.entropy - a.entropy
            + 0.5 * dt * (a.rho_div_u + a.eps_fisher + b.rho_div_u + b.eps_fisher);
        series.push(acc);
    }
    Ok(EntropyReport {
        max_abs: series.iter().fold(0.0, |m, v| m.max(v.abs())),
        max_eps_term: rows
            .iter()
            .map(|r| -r.eps_fisher)
            .fold(f64::NEG_INFINITY, f64::max),
        series,
    })
}

/// Smooth compactly supported test function: a bump per axis times a low polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    /// Canonical profile `0..5`.
    Canonical(usize),
    Constant(f64),
}

pub const CANONICAL_TESTS: usize = 5;

/// `exp(1 - 1/(1 - s^2))` on `|s| < 1` with its first two derivatives in `s`.
fn bump(s: f64) -> (f64, f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let v = (1.0 - 1.0 / q).exp();
    let g1 = -2.0 * s / (q * q);
    let g2 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
    (v, v * g1, v * (g1 * g1 + g2))
}

impl TestFunction {
    /// Value, gradient and Laplacian at `x` on a box with edge lengths `lengths`.
    pub fn eval(&self, x: [f64; 3], lengths: &[f64]) -> (f64, [f64; 3], f64) {
        let d = lengths.len();
        let j = match *self {
            TestFunction::Constant(v) => return (v, [0.0; 3], 0.0),
            TestFunction::Canonical(j) => j,
        };
        const HALF_WIDTH: f64 = 0.4;
        let mut y = [0.0; 3];
        let mut b = [(1.0, 0.0, 0.0); 3];
        for a in 0..d {
            y[a] = x[a] / lengths[a];
            let s = (y[a] - 0.5) / HALF_WIDTH;
            let (v, d1, d2) = bump(s);
            let k = 1.0 / (HALF_WIDTH * lengths[a]);
            b[a] = (v, d1 * k, d2 * k * k);
        }
        let last = d - 1;
        let second = 1.min(last);
        // polynomial in scaled coordinates and its derivatives (value, grad, hessian diagonal)
        let mut pg = [0.0; 3];
        let mut ph = [0.0; 3];
        let pv = match j % CANONICAL_TESTS {
            0 => 1.0,
            1 => {
                pg[0] = 1.0 / lengths[0];
                y[0]
            }
            2 => {
                pg[second] = 1.0 / lengths[second];
                y[second]
            }
            3 => {
                pg[0] = 2.0 * y[0] / lengths[0];
                ph[0] = 2.0 / (lengths[0] * lengths[0]);
                y[0] * y[0]
            }
            _ => {
                if last == 0 {
                    pg[0] = 2.0 * (y[0] - 0.5) / lengths[0];
                    ph[0] = 2.0 / (lengths[0] * lengths[0]);
                    (y[0] - 0.5) * (y[0] - 0.5)
                } else {
                    pg[0] = y[last] / lengths[0];
                    pg[last] = y[0] / lengths[last];
                    y[0] * y[last]
                }
            }
        };
        let bump_all: f64 = (0..d).map(|a| b[a].0).product();
        let mut grad = [0.0; 3];
        let mut lap = 0.0;
        for a in 0..d {
            let others: f64 = (0..d).filter(|&o| o != a).map(|o| b[o].0).product();
            let db = b[a].1 * others;
            let d2b = b[a].2 * others;
            grad[a] = db * pv + bump_all * pg[a];
            lap += d2b * pv + 2.0 * db * pg[a] + bump_all * ph[a];
        }
        (bump_all * pv, grad, lap)
    }

    pub fn canonical_set() -> Vec<TestFunction> {
        (0..CANONICAL_TESTS).map(TestFunction::Canonical).collect()
    }
}

/// Accumulates weak-form integrals of the continuity and momentum equations along a path.
///
/// Continuity: `int rho(T) phi - int rho(0) phi - int_0^T int (-div_h(rho v) + eps Laplace_h rho) phi`,
/// with the spectral divergence and Laplacian of the scheme, so the residual is the time
/// discretization error alone.
/// Momentum (test field `psi_j = phi_j e_{j mod d}` projected onto the velocity space):
/// `<b(T) - b(0), q> - int_0^T drift . q` with the martingale `sum_k <G_k, q> dW_k` tracked
/// separately. Time integrals of the drift use the trapezoid rule; the stochastic integral
/// uses the left point.
#[derive(Debug, Clone)]
pub struct WeakFormProbe {
    tests: Vec<TestFunction>,
    epsilon: f64,
    phi: Vec<Vec<f64>>,
    q: Vec<ModalVector>,
    last_t: Option<f64>,
    cont_first: Vec<f64>,
    cont_last: Vec<f64>,
    cont_integral: Vec<f64>,
    cont_rate: Vec<f64>,
    mom_first: Vec<f64>,
    mom_last: Vec<f64>,
    mom_integral: Vec<f64>,
    mom_rate: Vec<f64>,
    martingale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormResidual {
    pub continuity: Vec<f64>,
    /// Momentum residual with the realized martingale removed (discretization part).
    pub momentum_deterministic: Vec<f64>,
    /// Momentum residual without the martingale term; mean zero over an ensemble.
    pub momentum_stochastic: Vec<f64>,
    pub martingale: Vec<f64>,
}

impl WeakFormProbe {
    pub fn new(basis: &Basis, tests: Vec<TestFunction>, epsilon: f64) -> Result<Self> {
        let d = basis.dim();
        let lengths = basis.config().lengths.clone();
        let points = basis.points();
        let mut phi = Vec::new();
        let mut q = Vec::new();
        for (j, t) in tests.iter().enumerate() {
            let v: Vec<f64> = points.iter().map(|x| t.eval(*x, &lengths).0).collect();
            let field: Vec<Vec<f64>> = (0..d)
                .map(|a| if a == j % d { v.clone() } else { vec![0.0; v.len()] })
                .collect();
            q.push(basis.project(&field)?);
            phi.push(v);
        }
        let m = tests.len();
        Ok(Self {
            tests,
            epsilon,
            phi,
            q,
            last_t: None,
            cont_first: vec![0.0; m],
            cont_last: vec![0.0; m],
            cont_integral: vec![0.0; m],
            cont_rate: vec![0.0; m],
            mom_first: vec![0.0; m],
            mom_last: vec![0.0; m],
            mom_integral: vec![0.0; m],
            mom_rate: vec![0.0; m],
            martingale: vec![0.0; m],
        })
    }

    pub fn tests(&self) -> &[TestFunction] {
        &self.tests
    }

    pub fn residual(&self) -> WeakFormResidual {
        let m = self.tests.len();
        let continuity = (0..m)
            .map(|j| self.cont_last[j] - self.cont_first[j] - self.cont_integral[j])
            .collect();
        let stochastic: Vec<f64> = (0..m)
            .map(|j| self.mom_last[j] - self.mom_first[j] - self.mom_integral[j])
            .collect();
        WeakFormResidual {
            continuity,
            momentum_deterministic: stochastic
                .iter()
                .zip(&self.martingale)
                .map(|(s, w)| s - w)
                .collect(),
            momentum_stochastic: stochastic,
            martingale: self.martingale.clone(),
        }
    }
}

impl PathObserver for WeakFormProbe {
    fn observe(
        &mut self,
        basis: &Basis,
        state: &SolverState,
        terms: &StateTerms,
        increment: Option<&WienerIncrement>,
    ) {
        let rho = &state.rho;
        let mut drift = terms.explicit.clone();
        drift.axpy(1.0, &terms.implicit);
        let mut density_rate: Vec<f64> = terms.mass_flux_divergence.iter().map(|v| -v).collect();
        if self.epsilon > 0.0 {
            let lap = basis
                .density_laplacian(rho)
                .expect("density matches the basis grid");
            for (r, l) in density_rate.iter_mut().zip(lap) {
                *r += self.epsilon * l;
            }
        }
        for j in 0..self.tests.len() {
            let value = basis.inner(rho, &self.phi[j]);
            let rate = basis.inner(&density_rate, &self.phi[j]);
            let mom_value = state.b.dot(&self.q[j]);
            let mom_rate = drift.dot(&self.q[j]);
            match self.last_t {
                None => {
                    self.cont_first[j] = value;
                    self.mom_first[j] = mom_value;
                }
                Some(t0) => {
                    let h = state.t - t0;
                    self.cont_integral[j] += 0.5 * h * (self.cont_rate[j] + rate);
                    self.mom_integral[j] += 0.5 * h * (self.mom_rate[j] + mom_rate);
                }
            }
            self.cont_last[j] = value;
            self.cont_rate[j] = rate;
            self.mom_last[j] = mom_value;
            self.mom_rate[j] = mom_rate;
            if let Some(inc) = increment {
                let w: f64 = terms
                    .noise
                    .columns
                    .iter()
                    .zip(&inc.dw)
                    .map(|(col, dw)| col.dot(&self.q[j]) * dw)
                    .sum();
                self.martingale[j] += w;
            }
        }
        self.last_t = Some(state.t);
    }
}

/// Ensemble summary of weak-form residuals per test function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormEnsemble {
    pub continuity_max_abs: Vec<f64>,
    pub momentum_deterministic_max_abs: Vec<f64>,
    pub momentum_stochastic: Vec<MeanCi>,
    /// `|mean| <= 4 SE` for every test function.
    pub stochastic_mean_within_4se: bool,
}

pub fn weak_form_ensemble(residuals: &[WeakFormResidual]) -> WeakFormEnsemble {
    let m = residuals.first().map_or(0, |r| r.continuity.len());
    let col_max = |f: &dyn Fn(&WeakFormResidual) -> &Vec<f64>| -> Vec<f64> {
        (0..m)
            .map(|j| residuals.iter().map(|r| f(r)[j].abs()).fold(0.0, f64::max))
            .collect()
    };
    let stochastic: Vec<MeanCi> = (0..m)
        .map(|j| {
            let v: Vec<f64> = residuals.iter().map(|r| r.momentum_stochastic[j]).collect();
            mean_ci(&v)
        })
        .collect();
    WeakFormEnsemble {
        continuity_max_abs: col_max(&|r| &r.continuity),
        momentum_deterministic_max_abs: col_max(&|r| &r.momentum_deterministic),
        stochastic_mean_within_4se: stochastic
            .iter()
            .all(|c| c.mean.abs() <= 4.0 * c.std_error || (c.mean == 0.0 && c.std_error == 0.0)),
        momentum_stochastic: stochastic,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub predicted_total: f64,
    pub realized_total: f64,
    /// Per-path realized / predicted ratio.
    pub ratio: MeanCi,
    pub covers_one: bool,
}

/// Realized quadratic variation of the projected martingale increments against
/// `sum_k int |Pi_n[rho Pi_n F_k]|^2 dt`, per path.
pub fn martingale_qv_check(ledgers: &[Vec<LedgerRow>]) -> QvReport {
    let mut ratios = Vec::new();
    let mut predicted_total = 0.0;
    let mut realized_total = 0.0;
    for l in ledgers {
        let p: f64 = l.iter().map(|r| r.qv_predicted).sum();
        let q: f64 = l.iter().map(|r| r.qv_realized).sum();
        predicted_total += p;
        realized_total += q;
        if p > 0.0 {
            ratios.push(q / p);
        }
    }
    if ratios.is_empty() {
        let ci = MeanCi {
            n: 0,
            mean: 1.0,
            std_error: 0.0,
            lower: 1.0,
            upper: 1.0,
        };
        return QvReport {
            predicted_total,
            realized_total,
            ratio: ci,
            covers_one: realized_total == 0.0,
        };
    }
    let ratio = mean_ci(&ratios);
    QvReport {
        predicted_total,
        realized_total,
        covers_one: ratio.lower <= 1.0 && 1.0 <= ratio.upper,
        ratio,
    }
}

/// `a_R = sqrt(R)`, `b_R = ln(R) / 2`, so that `a_R e^{b_R} = R`.
pub fn stopping_schedule(r: f64) -> (f64, f64) {
    (r.sqrt(), 0.5 * r.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingRow {
    pub r: f64,
    pub a_r: f64,
    pub b_r: f64,
    pub paths: usize,
    pub survival: f64,
    pub p_a: f64,
    pub p_b: f64,
    pub p_s: f64,
    /// Paths in `A and B` but not in `S` (must be 0).
    pub nesting_violations: usize,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTable {
    pub rows: Vec<StoppingRow>,
    pub fitted_c: f64,
    pub survival_nondecreasing: bool,
    /// Paths surviving a smaller guard but stopped at a larger one.
    pub pathwise_nesting_violations: usize,
}

/// Stopping statistics over a guard ladder; `ladder[j] = (R_j, per-path summaries)` with the
/// same path order for every guard.
pub fn stopping_statistics(ladder: &[(f64, Vec<PathSummary>)]) -> Result<StoppingTable> {
    let mut sorted: Vec<&(f64, Vec<PathSummary>)> = ladder.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rows = Vec::new();
    let mut fitted_c: f64 = 0.0;
    for (r, paths) in sorted.iter().map(|x| (x.0, &x.1)) {
        if paths.is_empty() {
            return Err(Error::InvalidParameter(format!("no paths for guard {r}")));
        }
        let (a_r, b_r) = stopping_schedule(r);
        let n = paths.len() as f64;
        let mut count = [0usize; 4];
        let mut viol = 0;
        for p in paths {
            let in_a = (-p.potential_work).exp() * p.sup_norm_sq <= a_r;
            let in_b = p.potential_work <= b_r;
            let in_s = p.sup_norm_sq <= a_r * b_r.exp();
            count[0] += p.survived as usize;
            count[1] += in_a as usize;
            count[2] += in_b as usize;
            count[3] += in_s as usize;
            if in_a && in_b && !in_s {
                viol += 1;
            }
        }
        let p_s = count[3] as f64 / n;
        fitted_c = fitted_c.max((1.0 - p_s) / (1.0 / a_r + 1.0 / b_r));
        rows.push(StoppingRow {
            r,
            a_r,
            b_r,
            paths: paths.len(),
            survival: count[0] as f64 / n,
            p_a: count[1] as f64 / n,
            p_b: count[2] as f64 / n,
            p_s,
            nesting_violations: viol,
            envelope: 0.0,
        });
    }
    for row in rows.iter_mut() {
        row.envelope = 1.0 - fitted_c / row.a_r - fitted_c / row.b_r;
    }
    let survival_nondecreasing = rows.windows(2).all(|w| w[1].survival >= w[0].survival);
    let mut pathwise = 0;
    for w in sorted.windows(2) {
        for (lo, hi) in w[0].1.iter().zip(&w[1].1) {
            if lo.survived && !hi.survived {
                pathwise += 1;
            }
        }
    }
    Ok(StoppingTable {
        rows,
        fitted_c,
        survival_nondecreasing,
        pathwise_nesting_violations: pathwise,
    })
}

/// Fenchel split check on a snapshot: `int S:Du` against `int (F(Du) + F*(S))`.
pub fn fenchel_consistency(
    snapshot: &Snapshot,
    model: &ConstitutiveModel,
    basis: &Basis,
) -> Result<(f64, f64)> {
    let d = basis.dim();
    let dsym = basis.sym_gradient(&snapshot.c)?;
    let mut power = 0.0;
    let mut split = 0.0;
    for g in 0..basis.n_grid() {
        let dg = tensor_at(&dsym, d, g);
        let s = model.stress_of_strain(&dg);
        power += s.ddot(&dg);
        split += model.potential_value(&dg) + model.conjugate_value(&s)?;
    }
    Ok((power * basis.cell_volume(), split * basis.cell_volume()))
}
