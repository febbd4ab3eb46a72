//! Empirical Young measures, pairings, concentration defects and equi-integrability.
//!
//! Solver samples live in the state space `(r, w, S, D)` of dimension `1 + d + 2 d^2`
//! (full `d x d` tensors, row-major). Cells partition `(t, x)`; every cell carries a
//! uniformly weighted cloud with the provenance `(path, t, x)` of each sample.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constitutive::{ConstitutiveModel, SymTensor};
use crate::diagnostics::pairwise_sum;
use crate::error::{Error, Result};
use crate::solver::Snapshot;
use crate::spectral::{tensor_at, Basis};

/// Length of the solver state vector `(r, w, S, D)` in dimension `d`.
pub fn state_len(d: usize) -> usize {
    1 + d + 2 * d * d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub path: u64,
    pub t: f64,
    pub x: [f64; 3],
    pub z: Vec<f64>,
}

/// Rectangular partition of `[t0, t1] x box`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub t_range: (f64, f64),
    pub t_cells: usize,
    pub lengths: Vec<f64>,
    pub x_cells: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.t_cells * self.x_cells.iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bin(v: f64, lo: f64, hi: f64, cells: usize) -> usize {
        if hi <= lo {
            return 0;
        }
        let k = ((v - lo) / (hi - lo) * cells as f64).floor();
        (k.max(0.0) as usize).min(cells - 1)
    }

    /// Cell of a sample; time is the slowest index.
    pub fn cell_of(&self, t: f64, x: [f64; 3]) -> usize {
        let mut idx = Self::bin(t, self.t_range.0, self.t_range.1, self.t_cells);
        for (a, &m) in self.x_cells.iter().enumerate() {
            idx = idx * m + Self::bin(x[a], 0.0, self.lengths[a], m);
        }
        idx
    }

    /// Space-time volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        let dt = (self.t_range.1 - self.t_range.0).max(0.0) / self.t_cells as f64;
        let dx: f64 = self
            .lengths
            .iter()
            .zip(&self.x_cells)
            .map(|(l, m)| l / *m as f64)
            .product();
        if dt > 0.0 {
            dt * dx
        } else {
            dx
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub samples: Vec<Sample>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalYoungMeasure {
    pub partition: Partition,
    pub state_dim: usize,
    pub cells: Vec<Cell>,
}

/// Buckets samples into the partition with uniform weights per cell.
pub fn build_empirical(samples: Vec<Sample>, partition: Partition) -> Result<EmpiricalYoungMeasure> {
    let state_dim = samples.first().map_or(0, |s| s.z.len());
    if let Some(s) = samples.iter().find(|s| s.z.len() != state_dim) {
        return Err(Error::LengthMismatch {
            expected: state_dim,
            found: s.z.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| s.z.first().is_some_and(|r| *r < 0.0)) {
        return Err(Error::NegativeDensity(s.z[0]));
    }
    let mut cells: Vec<Vec<Sample>> = vec![Vec::new(); partition.len()];
    for s in samples {
        let c = partition.cell_of(s.t, s.x);
        cells[c].push(s);
    }
    if let Some(empty) = cells.iter().position(|c| c.is_empty()) {
        return Err(Error::EmptyCell(empty));
    }
    let cells = cells
        .into_iter()
        .map(|samples| {
            let w = 1.0 / samples.len() as f64;
            Cell {
                weights: vec![w; samples.len()],
                samples,
            }
        })
        .collect();
    Ok(EmpiricalYoungMeasure {
        partition,
        state_dim,
        cells,
    })
}

/// Grid samples `(r, w, S, D)` of the snapshots of one path.
pub fn solver_samples(
    basis: &Basis,
    model: &ConstitutiveModel,
    path: u64,
    snapshots: &[Snapshot],
) -> Result<Vec<Sample>> {
    let d = basis.dim();
    let points = basis.points();
    let mut out = Vec::with_capacity(snapshots.len() * basis.n_grid());
    for snap in snapshots {
        let u = basis.synthesize(&snap.c)?;
        let dsym = basis.sym_gradient(&snap.c)?;
        for (g, x) in points.iter().enumerate() {
            let dg = tensor_at(&dsym, d, g);
            let s = model.stress_of_strain(&dg);
            let mut z = Vec::with_capacity(state_len(d));
            z.push(snap.rho[g]);
            z.extend(u.iter().map(|c| c[g]));
            for a in 0..d {
                for b in 0..d {
                    z.push(s.get(a, b));
                }
            }
            for a in 0..d {
                for b in 0..d {
                    z.push(dg.get(a, b));
                }
            }
            out.push(Sample {
                path,
                t: snap.t,
                x: *x,
                z,
            });
        }
    }
    Ok(out)
}

impl EmpiricalYoungMeasure {
    /// `<nu_cell, G(x, .)>` for every cell.
    pub fn pair(&self, g: impl Fn([f64; 3], &[f64]) -> f64) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| {
                let terms: Vec<f64> = c
                    .samples
                    .iter()
                    .zip(&c.weights)
                    .map(|(s, w)| w * g(s.x, &s.z))
                    .collect();
                pairwise_sum(&terms)
            })
            .collect()
    }

    /// Serializes as CSV: `cell,weight,path,t,x0,x1,x2,z0,...`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["cell".to_string(), "weight".into(), "path".into(), "t".into()];
        header.extend(["x0", "x1", "x2"].iter().map(|s| s.to_string()));
        header.extend((0..self.state_dim).map(|i| format!("z{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (k, c) in self.cells.iter().enumerate() {
            for (s, w) in c.samples.iter().zip(&c.weights) {
                let mut line = format!("{k},{w:?},{},{:?},{:?},{:?},{:?}", s.path, s.t, s.x[0], s.x[1], s.x[2]);
                for v in &s.z {
                    line.push_str(&format!(",{v:?}"));
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Cellwise `(<nu, S:D>, <nu, F(D) + F*(S)>)` for solver samples in dimension `d`.
pub fn fenchel_pairing(
    measure: &EmpiricalYoungMeasure,
    model: &ConstitutiveModel,
    d: usize,
) -> Result<Vec<(f64, f64)>> {
    if measure.state_dim != state_len(d) {
        return Err(Error::LengthMismatch {
            expected: state_len(d),
            found: measure.state_dim,
        });
    }
    let s_at = 1 + d;
    let d_at = 1 + d + d * d;
    let tensor = |z: &[f64], at: usize| SymTensor::from_upper(d, |a, b| z[at + a * d + b]);
    measure
        .cells
        .iter()
        .map(|cell| {
            let mut power = Vec::with_capacity(cell.samples.len());
            let mut split = Vec::with_capacity(cell.samples.len());
            for (smp, w) in cell.samples.iter().zip(&cell.weights) {
                let (s, dg) = (tensor(&smp.z, s_at), tensor(&smp.z, d_at));
                power.push(w * s.ddot(&dg));
                split.push(w * (model.potential_value(&dg) + model.conjugate_value(&s)?));
            }
            Ok((pairwise_sum(&power), pairwise_sum(&split)))
        })
        .collect()
}

/// Sampled field `U_n` with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleField {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SampleField {
    /// Midpoint samples of `f` on `(0, length)` with `m` points.
    pub fn on_interval(length: f64, m: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let h = length / m as f64;
        let points: Vec<[f64; 3]> = (0..m).map(|j| [(j as f64 + 0.5) * h, 0.0, 0.0]).collect();
        Self {
            values: points.iter().map(|x| f(x[0])).collect(),
            weights: vec![h; m],
            points,
        }
    }

    /// `int G(U)`.
    pub fn integral(&self, g: impl Fn(&[f64]) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| w * g(v))
            .collect();
        pairwise_sum(&terms)
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `T_M(z) = z min(1, M / |z|)`.
pub fn truncate(z: &[f64], m: f64) -> Vec<f64> {
    let n = norm(z);
    if n <= m {
        z.to_vec()
    } else {
        z.iter().map(|v| v * m / n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    pub ladder: Vec<f64>,
    pub resolutions: Vec<f64>,
    /// `tail_g[j][i][c]`: `int_cell G(U) - G(T_M U)` for truncation `j`, field `i`, cell `c`.
    pub tail_g: Vec<Vec<Vec<f64>>>,
    pub tail_f: Vec<Vec<Vec<f64>>>,
    /// Young part `int_cell G(T_M U)` at the largest truncation.
    pub young_g: Vec<Vec<f64>>,
    /// Limits in the resolution (last-two-points extrapolation) per truncation and cell.
    pub g_limit: Vec<Vec<f64>>,
    pub f_limit: Vec<Vec<f64>>,
    /// Defect measures at the largest truncation.
    pub g_inf: Vec<f64>,
    pub f_inf: Vec<f64>,
    /// Extrapolated Young part per cell.
    pub young_limit: Vec<f64>,
    /// Cells where `|F_inf| <= G_inf + tol` fails.
    pub violations: Vec<usize>,
}

/// Richardson-style limit of `a(n) = a_inf + c / n` from the last two points.
fn extrapolate(ns: &[f64], values: &[f64]) -> f64 {
    match ns.len() {
        0 => 0.0,
        1 => values[0],
        k => {
            let (n1, n2) = (ns[k - 2], ns[k - 1]);
            let (a1, a2) = (values[k - 2], values[k - 1]);
            (n2 * a2 - n1 * a1) / (n2 - n1)
        }
    }
}

/// Concentration defect of `F`, `G` along a sequence of fields on cells of `(0, L)^d`.
#[allow(clippy::too_many_arguments)]
pub fn defect_estimate(
    sequence: &[(f64, SampleField)],
    lengths: &[f64],
    x_cells: &[usize],
    f: impl Fn(&[f64]) -> f64,
    g: impl Fn(&[f64]) -> f64,
    ladder: &[f64],
    tol: f64,
) -> Result<DefectEstimate> {
    if sequence.is_empty() || ladder.is_empty() {
        return Err(Error::InvalidParameter("defect estimate needs fields and truncations".into()));
    }
    let partition = Partition {
        t_range: (0.0, 0.0),
        t_cells: 1,
        lengths: lengths.to_vec(),
        x_cells: x_cells.to_vec(),
    };
    let nc = partition.len();
    let mut index = 0;
    for (_, field) in sequence {
        for z in &field.values {
            let (fv, gv) = (f(z), g(z));
            if fv.abs() > gv + 1e-12 * gv.abs().max(1.0) {
                return Err(Error::DominationViolated {
                    index,
                    f: fv.abs(),
                    g: gv,
                });
            }
            index += 1;
        }
    }
    let resolutions: Vec<f64> = sequence.iter().map(|(n, _)| *n).collect();
    let per_cell = |field: &SampleField, h: &dyn Fn(&[f64]) -> f64| -> Vec<f64> {
        let mut acc = vec![Vec::new(); nc];
        for ((x, z), w) in field.points.iter().zip(&field.values).zip(&field.weights) {
            acc[partition.cell_of(0.0, *x)].push(w * h(z));
        }
        acc.iter().map(|v| pairwise_sum(v)).collect()
    };
    let mut tail_g = Vec::new();
    let mut tail_f = Vec::new();
    let mut young_g = Vec::new();
    for &m in ladder {
        let mut tg = Vec::new();
        let mut tf = Vec::new();
        let mut yg = Vec::new();
        for (_, field) in sequence {
            tg.push(per_cell(field, &|z| g(z) - g(&truncate(z, m))));
            tf.push(per_cell(field, &|z| f(z) - f(&truncate(z, m))));
            yg.push(per_cell(field, &|z| g(&truncate(z, m))));
        }
        tail_g.push(tg);
        tail_f.push(tf);
        young_g = yg;
    }
    let limit = |tails: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<f64>> {
        tails
            .iter()
            .map(|per_field| {
                (0..nc)
                    .map(|c| {
                        let vals: Vec<f64> = per_field.iter().map(|cells| cells[c]).collect();
                        extrapolate(&resolutions, &vals)
                    })
                    .collect()
            })
            .collect()
    };
    let g_limit = limit(&tail_g);
    let f_limit = limit(&tail_f);
    let g_inf = g_limit.last().unwrap().clone();
    let f_inf = f_limit.last().unwrap().clone();
    let young_limit = (0..nc)
        .map(|c| {
            let vals: Vec<f64> = young_g.iter().map(|cells| cells[c]).collect();
            extrapolate(&resolutions, &vals)
        })
        .collect();
    let violations = (0..nc)
        .filter(|&c| f_inf[c].abs() > g_inf[c] + tol)
        .collect();
    Ok(DefectEstimate {
        ladder: ladder.to_vec(),
        resolutions,
        tail_g,
        tail_f,
        young_g,
        g_limit,
        f_limit,
        g_inf,
        f_inf,
        young_limit,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub name: String,
    /// `int g(|U_n|)` per field.
    pub integrals: Vec<f64>,
    pub sup: f64,
    /// Log-log slope of the integrals against the resolution over the last two fields.
    pub growth_exponent: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquiIntegrabilityReport {
    pub candidates: Vec<CandidateVerdict>,
    pub ladder: Vec<f64>,
    /// `sup_n int (|U_n| - M)_+` per truncation level.
    pub tail_sup: Vec<f64>,
    /// `sup_n int |U_n|`.
    pub l1_sup: f64,
    pub equi_integrable: bool,
}

/// Growth exponents below this count as bounded.
pub const GROWTH_THRESHOLD: f64 = 0.1;
/// Tails below this fraction of the L1 bound at the largest truncation count as vanishing.
pub const TAIL_THRESHOLD: f64 = 0.05;

pub fn equi_integrability_check(
    family: &[(f64, SampleField)],
    candidates: &[(&str, &dyn Fn(f64) -> f64)],
    ladder: &[f64],
) -> Result<EquiIntegrabilityReport> {
    if family.is_empty() {
        return Err(Error::InvalidParameter("empty family".into()));
    }
    let ns: Vec<f64> = family.iter().map(|(n, _)| *n).collect();
    let verdicts = candidates
        .iter()
        .map(|(name, g)| {
            let integrals: Vec<f64> = family.iter().map(|(_, f)| f.integral(|z| g(norm(z)))).collect();
            let k = integrals.len();
            let growth = if k >= 2 && integrals[k - 2] > 0.0 && integrals[k - 1] > 0.0 {
                (integrals[k - 1] / integrals[k - 2]).ln() / (ns[k - 1] / ns[k - 2]).ln()
            } else {
                0.0
            };
            CandidateVerdict {
                name: name.to_string(),
                sup: integrals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                bounded: growth < GROWTH_THRESHOLD,
                growth_exponent: growth,
                integrals,
            }
        })
        .collect();
    let tail_sup: Vec<f64> = ladder
        .iter()
        .map(|&m| {
            family
                .iter()
                .map(|(_, f)| f.integral(|z| (norm(z) - m).max(0.0)))
                .fold(0.0, f64::max)
        })
        .collect();
    let l1_sup = family
        .iter()
        .map(|(_, f)| f.integral(norm))
        .fold(0.0, f64::max);
    let last_tail = tail_sup.last().copied().unwrap_or(0.0);
    Ok(EquiIntegrabilityReport {
        candidates: verdicts,
        ladder: ladder.to_vec(),
        equi_integrable: last_tail <= TAIL_THRESHOLD * l1_sup.max(f64::MIN_POSITIVE),
        tail_sup,
        l1_sup,
    })
}

/// One resolution of a defect ladder: snapshots of a run at `modes`.
#[derive(Debug, Clone)]
pub struct LadderRun<'a> {
    pub basis: &'a Basis,
    pub snapshots: &'a [Snapshot],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectLadderRow {
    pub t: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    /// `E_coarse - <nu_fine, 1/2 r |w|^2 + P(r)>`, signed.
    pub energy_gap: f64,
    /// Jensen defect `int <nu, E> - E(<nu, r>, <nu, m>)` over coarse cells (>= 0).
    pub defect: f64,
    /// Total variation of the convective defect `<nu, m (x) m / r> - m (x) m / r`.
    pub theta: f64,
    /// Total variation of the pressure defect `<nu, p(r)> - p(<nu, r>)`.
    pub lambda: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectLadder {
    pub rows: Vec<DefectLadderRow>,
    /// Constant in `|Theta| + |Lambda| <= C D` for this pressure law.
    pub domination_constant: f64,
    pub defect_decays: bool,
    pub energy_gap_decays: bool,
    pub all_dominated: bool,
}

/// Defect surrogates between consecutive resolutions of matched runs.
pub fn energy_defect_ladder(
    runs: &[LadderRun<'_>],
    model: &ConstitutiveModel,
    tol: f64,
) -> Result<DefectLadder> {
    if runs.len() < 2 {
        return Err(Error::LadderMismatch("at least two resolutions are required".into()));
    }
    for w in runs.windows(2) {
        let (a, b) = (w[0].basis.config(), w[1].basis.config());
        if a.dim != b.dim || a.lengths != b.lengths || a.family != b.family {
            return Err(Error::LadderMismatch("runs differ in domain or basis family".into()));
        }
        if a.modes >= b.modes {
            return Err(Error::LadderMismatch("resolutions must increase".into()));
        }
        if w[0].snapshots.len() != w[1].snapshots.len()
            || w[0]
                .snapshots
                .iter()
                .zip(w[1].snapshots)
                .any(|(x, y)| (x.t - y.t).abs() > 1e-12 * x.t.abs().max(1.0))
        {
            return Err(Error::LadderMismatch("checkpoint times differ".into()));
        }
    }
    let gamma = model.pressure_gamma;
    let c_dom = 2.0f64.max(gamma - 1.0);
    let mut rows = Vec::new();
    for w in runs.windows(2) {
        let (coarse, fine) = (&w[0], &w[1]);
        for (sc, sf) in coarse.snapshots.iter().zip(fine.snapshots) {
            rows.push(ladder_row(coarse.basis, fine.basis, sc, sf, model, c_dom, tol)?);
        }
    }
    let checkpoints = runs[0].snapshots.len();
    let levels = runs.len() - 1;
    let series = |f: &dyn Fn(&DefectLadderRow) -> f64| -> bool {
        (0..checkpoints).all(|k| {
            (1..levels).all(|j| {
                let prev = f(&rows[(j - 1) * checkpoints + k]);
                let cur = f(&rows[j * checkpoints + k]);
                cur <= prev + tol
            })
        })
    };
    let defect_decays = series(&|r| r.defect);
    let energy_gap_decays = series(&|r| r.energy_gap.abs());
    let all_dominated = rows.iter().all(|r| r.dominated);
    Ok(DefectLadder {
        rows,
        domination_constant: c_dom,
        defect_decays,
        energy_gap_decays,
        all_dominated,
    })
}

fn ladder_row(
    coarse: &Basis,
    fine: &Basis,
    sc: &Snapshot,
    sf: &Snapshot,
    model: &ConstitutiveModel,
    c_dom: f64,
    tol: f64,
) -> Result<DefectLadderRow> {
    let d = coarse.dim();
    let energy = |basis: &Basis, snap: &Snapshot| -> Result<f64> {
        let u = basis.synthesize(&snap.c)?;
        let vals: Vec<f64> = (0..basis.n_grid())
            .map(|g| {
                let r = snap.rho[g];
                0.5 * r * u.iter().map(|c| c[g] * c[g]).sum::<f64>() + model.potential_energy(r)
            })
            .collect();
        Ok(pairwise_sum(&vals) * basis.cell_volume())
    };
    let energy_gap = energy(coarse, sc)? - energy(fine, sf)?;

    // fine samples bucketed by nearest coarse grid point
    let nc = coarse.n_grid();
    let u = fine.synthesize(&sf.c)?;
    let mut count = vec![0usize; nc];
    let mut mean_r = vec![0.0; nc];
    let mut mean_m = vec![[0.0; 3]; nc];
    let mut mean_e = vec![0.0; nc];
    let mut mean_mm = vec![[[0.0; 3]; 3]; nc];
    let mut mean_p = vec![0.0; nc];
    let nodes: Vec<&[f64]> = coarse.axes().iter().map(|a| a.nodes.as_slice()).collect();
    let cshape = coarse.grid_shape();
    for g in 0..fine.n_grid() {
        let x = fine.point(g);
        let mut cell = 0;
        for a in 0..d {
            let nearest = nodes[a]
                .iter()
                .enumerate()
                .min_by(|p, q| (p.1 - x[a]).abs().total_cmp(&(q.1 - x[a]).abs()))
                .map(|(i, _)| i)
                .unwrap();
            cell = cell * cshape[a] + nearest;
        }
        let r = sf.rho[g];
        count[cell] += 1;
        mean_r[cell] += r;
        mean_p[cell] += model.pressure(r);
        let mut m = [0.0; 3];
        for a in 0..d {
            m[a] = r * u[a][g];
            mean_m[cell][a] += m[a];
        }
        let kin: f64 = (0..d).map(|a| m[a] * m[a]).sum::<f64>() / (2.0 * r);
        mean_e[cell] += kin + model.potential_energy(r);
        for a in 0..d {
            for b in 0..d {
                mean_mm[cell][a][b] += m[a] * m[b] / r;
            }
        }
    }
    if let Some(empty) = count.iter().position(|c| *c == 0) {
        return Err(Error::EmptyCell(empty));
    }
    let vol = coarse.cell_volume();
    let mut defect = Vec::with_capacity(nc);
    let mut theta = Vec::with_capacity(nc);
    let mut lambda = Vec::with_capacity(nc);
    for c in 0..nc {
        let k = count[c] as f64;
        let r = mean_r[c] / k;
        let m: Vec<f64> = (0..d).map(|a| mean_m[c][a] / k).collect();
        let e_bar = m.iter().map(|v| v * v).sum::<f64>() / (2.0 * r) + model.potential_energy(r);
        defect.push(vol * (mean_e[c] / k - e_bar));
        // Theta is positive semidefinite, so its trace is its total variation
        let tr: f64 = (0..d).map(|a| mean_mm[c][a][a] / k - m[a] * m[a] / r).sum();
        theta.push(vol * tr.abs());
        lambda.push(vol * (mean_p[c] / k - model.pressure(r)).abs());
    }
    let defect = pairwise_sum(&defect);
    let theta = pairwise_sum(&theta);
    let lambda = pairwise_sum(&lambda);
    Ok(DefectLadderRow {
        t: sc.t,
        n_coarse: coarse.config().modes,
        n_fine: fine.config().modes,
        energy_gap,
        defect,
        theta,
        lambda,
        dominated: theta + lambda <= c_dom * defect + tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_preserves_direction() {
        let z = [3.0, 4.0];
        let t = truncate(&z, 1.0);
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] - 0.8).abs() < 1e-15);
        assert_eq!(truncate(&z, 10.0), z.to_vec());
    }

    #[test]
    fn extrapolation_is_exact_for_one_over_n() {
        let ns = [64.0, 128.0];
        let vals: Vec<f64> = ns.iter().map(|n| 1.0 - 4.0 / n).collect();
        assert!((extrapolate(&ns, &vals) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_cells_are_reported() {
        let samples = vec![Sample {
            path: 0,
            t: 0.0,
            x: [0.1, 0.0, 0.0],
            z: vec![1.0],
        }];
        let p = Partition {
            t_range: (0.0, 0.0),
            t_cells: 1,
            lengths: vec![1.0],
            x_cells: vec![2],
        };
        assert_eq!(build_empirical(samples, p).unwrap_err(), Error::EmptyCell(1));
    }
}
