//! Diagnostics over a finished run directory.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use mvflow_core::diagnostics::{
    ensemble_residual, fenchel_consistency, ledger_residual, martingale_qv_check, orlicz_velocity_check,
    stopping_statistics, summarize_path, weak_form_ensemble, LedgerRow, ResidualMode, StoppingTable,
    WeakFormResidual, Z95,
};
use mvflow_core::solver::Snapshot;
use mvflow_core::spectral::{Basis, BasisFamily};
use mvflow_core::young::{
    build_empirical, energy_defect_ladder, fenchel_pairing, solver_samples, DefectLadder, LadderRun, Partition,
};

use crate::artifacts::{read_json, read_ledger, read_snapshots, write_atomic, write_json, RunManifest};
use crate::config::RunConfig;
use crate::ensemble::{Group, PathFailure};
use crate::error::{Result, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckFamily {
    Completion,
    Conservation,
    Energy,
    Martingale,
    WeakForm,
    Orlicz,
    Fenchel,
    Stopping,
    DefectLadder,
}

impl CheckFamily {
    pub const ALL: [CheckFamily; 9] = [
        CheckFamily::Completion,
        CheckFamily::Conservation,
        CheckFamily::Energy,
        CheckFamily::Martingale,
        CheckFamily::WeakForm,
        CheckFamily::Orlicz,
        CheckFamily::Fenchel,
        CheckFamily::Stopping,
        CheckFamily::DefectLadder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckFamily::Completion => "completion",
            CheckFamily::Conservation => "conservation",
            CheckFamily::Energy => "energy",
            CheckFamily::Martingale => "martingale",
            CheckFamily::WeakForm => "weak_form",
            CheckFamily::Orlicz => "orlicz",
            CheckFamily::Fenchel => "fenchel",
            CheckFamily::Stopping => "stopping",
            CheckFamily::DefectLadder => "defect_ladder",
        }
    }
}

impl FromStr for CheckFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CheckFamily::ALL
            .into_iter()
            .find(|f| f.name() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown check family `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub family: CheckFamily,
    pub name: String,
    pub group: String,
    pub pass: bool,
    pub measured: Option<f64>,
    pub tolerance: Option<f64>,
    pub detail: String,
}

/// Mass drift allowed per unit time, relative to the initial mass.
pub const MASS_DRIFT_RATE: f64 = 1e-12;

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub group: String,
    pub mode: String,
    pub paths: usize,
    pub mean_final: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub max_residual: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleRow {
    pub group: String,
    pub paths: usize,
    pub predicted_total: f64,
    pub realized_total: f64,
    pub ratio_mean: Option<f64>,
    pub ratio_lower: Option<f64>,
    pub ratio_upper: Option<f64>,
    pub covers_one: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakFormRow {
    pub group: String,
    pub test: usize,
    pub continuity_max_abs: f64,
    pub momentum_deterministic_max_abs: f64,
    pub stochastic_mean: Option<f64>,
    pub stochastic_std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub run: String,
    pub config_hash: String,
    pub checks: Vec<Check>,
    pub energy: Vec<EnergyRow>,
    pub martingale: Vec<MartingaleRow>,
    pub weak_form: Vec<WeakFormRow>,
    pub stopping: Option<StoppingTable>,
    pub defect_ladder: Option<DefectLadder>,
    pub pass: bool,
}

struct GroupData {
    group: Group,
    ledgers: Vec<(u64, Vec<LedgerRow>)>,
    failures: Vec<PathFailure>,
}

fn load_groups(dir: &Path) -> Result<(RunConfig, RunManifest, Vec<GroupData>)> {
    let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
    let config_path = dir.join("config.json");
    let text = fs::read_to_string(&config_path).map_err(|_| RunError::MissingArtifact(config_path.clone()))?;
    let config = RunConfig::from_json(&text).map_err(|e| RunError::Parse {
        path: config_path,
        message: e.to_string(),
    })?;
    let groups: Vec<Group> = read_json(&dir.join("groups.json"))?;
    let mut data = Vec::new();
    for group in groups {
        let mut ledgers = Vec::new();
        let mut failures = Vec::new();
        for k in 0..group.paths {
            let pdir = group.path_dir(dir, k);
            let err = pdir.join("error.json");
            if err.exists() {
                failures.push(read_json(&err)?);
                continue;
            }
            ledgers.push((k, read_ledger(&pdir.join("ledger.csv"))?));
        }
        data.push(GroupData {
            group,
            ledgers,
            failures,
        });
    }
    Ok((config, manifest, data))
}

/// Runs the selected check families (all when `None`) and writes `diagnostics.json`.
pub fn analyze_run(dir: &Path, selection: Option<&[CheckFamily]>) -> Result<Diagnostics> {
    let (config, manifest, data) = load_groups(dir)?;
    let wanted = |f: CheckFamily| selection.is_none_or(|s| s.contains(&f));
    let mut checks = Vec::new();
    let mut energy = Vec::new();
    let mut martingale = Vec::new();
    let mut weak_form = Vec::new();

    for gd in &data {
        let g = &gd.group;
        let label = g.label.clone();
        let noise_active = g.noise(&config).is_active();
        let ledgers: Vec<Vec<LedgerRow>> = gd.ledgers.iter().map(|(_, l)| l.clone()).collect();
        if wanted(CheckFamily::Completion) {
            checks.push(Check {
                family: CheckFamily::Completion,
                name: "paths_completed".into(),
                group: label.clone(),
                pass: gd.failures.is_empty(),
                measured: Some(gd.failures.len() as f64),
                tolerance: Some(0.0),
                detail: gd
                    .failures
                    .iter()
                    .map(|f| format!("path {}: {}", f.path, f.error))
                    .collect::<Vec<_>>()
                    .join("; "),
            });
        }
        if wanted(CheckFamily::Conservation) {
            // allowance 1e-12 t m0 plus four ulps of m0, the resolution of the mass itself
            let mut ratio: f64 = 0.0;
            let mut min_rho = f64::INFINITY;
            for l in &ledgers {
                let m0 = l[0].mass;
                let scale = m0.abs().max(1.0);
                for row in l {
                    min_rho = min_rho.min(row.min_rho);
                    let allowance = MASS_DRIFT_RATE * row.t * scale + 4.0 * f64::EPSILON * scale;
                    ratio = ratio.max((row.mass - m0).abs() / allowance);
                }
            }
            checks.push(Check {
                family: CheckFamily::Conservation,
                name: "mass_drift".into(),
                group: label.clone(),
                pass: ratio <= 1.0,
                measured: finite(ratio),
                tolerance: Some(1.0),
                detail: "max |m(t) - m(0)| / (1e-12 t m(0) + 4 eps m(0))".into(),
            });
            checks.push(Check {
                family: CheckFamily::Conservation,
                name: "min_density".into(),
                group: label.clone(),
                pass: min_rho > 0.0,
                measured: finite(min_rho),
                tolerance: Some(0.0),
                detail: "minimum density over all ledger rows".into(),
            });
        }
        if wanted(CheckFamily::Energy) && !ledgers.is_empty() {
            if noise_active {
                let rep = ensemble_residual(&ledgers)?;
                energy.push(EnergyRow {
                    group: label.clone(),
                    mode: "stochastic".into(),
                    paths: ledgers.len(),
                    mean_final: finite(rep.ci.mean),
                    lower: finite(rep.ci.lower),
                    upper: finite(rep.ci.upper),
                    max_residual: None,
                    tolerance: Some(0.0),
                });
                checks.push(Check {
                    family: CheckFamily::Energy,
                    name: "ensemble_residual_ci".into(),
                    group: label.clone(),
                    pass: rep.covers_nonpositive,
                    measured: finite(rep.ci.lower),
                    tolerance: Some(0.0),
                    detail: format!("mean {:e} +/- {:e}", rep.ci.mean, rep.ci.upper - rep.ci.mean),
                });
            } else {
                let dt = config.solver.dt;
                let mut worst = f64::NEG_INFINITY;
                let mut finals = Vec::new();
                for l in &ledgers {
                    let rep = ledger_residual(l, ResidualMode::Deterministic)?;
                    // roundoff floor for runs at rest, where the energy scale vanishes
                    let floor = f64::EPSILON * l.first().map_or(1.0, |r| r.mass.abs());
                    worst = worst.max(rep.max_residual / (dt * rep.scale).max(floor));
                    finals.push(rep.final_residual);
                }
                let tol = config.diagnostics.energy_tolerance;
                energy.push(EnergyRow {
                    group: label.clone(),
                    mode: "deterministic".into(),
                    paths: ledgers.len(),
                    mean_final: finite(finals.iter().sum::<f64>() / finals.len() as f64),
                    lower: None,
                    upper: None,
                    max_residual: finite(worst),
                    tolerance: Some(tol),
                });
                checks.push(Check {
                    family: CheckFamily::Energy,
                    name: "deterministic_residual".into(),
                    group: label.clone(),
                    pass: worst <= tol,
                    measured: finite(worst),
                    tolerance: Some(tol),
                    detail: "max residual in units of dt * energy scale".into(),
                });
            }
        }
        if wanted(CheckFamily::Martingale) && noise_active && !ledgers.is_empty() {
            let rep = martingale_qv_check(&ledgers);
            martingale.push(MartingaleRow {
                group: label.clone(),
                paths: rep.ratio.n,
                predicted_total: rep.predicted_total,
                realized_total: rep.realized_total,
                ratio_mean: finite(rep.ratio.mean),
                ratio_lower: finite(rep.ratio.lower),
                ratio_upper: finite(rep.ratio.upper),
                covers_one: rep.covers_one,
            });
            checks.push(Check {
                family: CheckFamily::Martingale,
                name: "quadratic_variation_ratio".into(),
                group: label.clone(),
                pass: rep.covers_one,
                measured: finite(rep.ratio.mean),
                tolerance: finite(Z95 * rep.ratio.std_error),
                detail: "realized / predicted quadratic variation, 95% CI must cover 1".into(),
            });
        }
        if wanted(CheckFamily::WeakForm) && config.diagnostics.weak_form {
            let mut residuals: Vec<WeakFormResidual> = Vec::new();
            for (k, _) in &gd.ledgers {
                residuals.push(read_json(&g.path_dir(dir, *k).join("weak_form.json"))?);
            }
            if !residuals.is_empty() {
                let ens = weak_form_ensemble(&residuals);
                for j in 0..ens.continuity_max_abs.len() {
                    weak_form.push(WeakFormRow {
                        group: label.clone(),
                        test: j,
                        continuity_max_abs: ens.continuity_max_abs[j],
                        momentum_deterministic_max_abs: ens.momentum_deterministic_max_abs[j],
                        stochastic_mean: finite(ens.momentum_stochastic[j].mean),
                        stochastic_std_error: finite(ens.momentum_stochastic[j].std_error),
                    });
                }
                if noise_active {
                    let worst = ens
                        .momentum_stochastic
                        .iter()
                        .map(|c| if c.std_error > 0.0 { c.mean.abs() / c.std_error } else { 0.0 })
                        .fold(0.0, f64::max);
                    checks.push(Check {
                        family: CheckFamily::WeakForm,
                        name: "stochastic_momentum_mean".into(),
                        group: label.clone(),
                        pass: ens.stochastic_mean_within_4se,
                        measured: finite(worst),
                        tolerance: Some(4.0),
                        detail: "max |mean| / SE over test functions".into(),
                    });
                }
            }
        }
        let need_snaps = wanted(CheckFamily::Orlicz) || wanted(CheckFamily::Fenchel);
        if need_snaps && config.diagnostics.snapshots && !gd.ledgers.is_empty() {
            let basis = g.basis(&config)?;
            let mut orlicz: f64 = f64::NEG_INFINITY;
            let mut fenchel: f64 = 0.0;
            for (k, _) in &gd.ledgers {
                for snap in read_snapshots(&g.path_dir(dir, *k))? {
                    if wanted(CheckFamily::Orlicz) && basis.family() == BasisFamily::Sine {
                        let o = orlicz_velocity_check(&snap.c, &config.model, &basis, 0.0)?;
                        orlicz = orlicz.max(o.lhs - o.rhs);
                    }
                    if wanted(CheckFamily::Fenchel) {
                        let (power, split) = fenchel_consistency(&snap, &config.model, &basis)?;
                        fenchel = fenchel.max((power - split).abs() / power.abs().max(1.0));
                    }
                }
            }
            if wanted(CheckFamily::Orlicz) && basis.family() == BasisFamily::Sine {
                checks.push(Check {
                    family: CheckFamily::Orlicz,
                    name: "orlicz_velocity_bound".into(),
                    group: label.clone(),
                    pass: orlicz <= 1e-10,
                    measured: finite(orlicz),
                    tolerance: Some(1e-10),
                    detail: "max over checkpoints of int g0(|u|) - 3 int F(Du)".into(),
                });
            }
            if wanted(CheckFamily::Fenchel) {
                checks.push(Check {
                    family: CheckFamily::Fenchel,
                    name: "fenchel_split".into(),
                    group: label.clone(),
                    pass: fenchel <= 1e-8,
                    measured: finite(fenchel),
                    tolerance: Some(1e-8),
                    detail: "relative |int S:Du - int (F + F*)| per checkpoint".into(),
                });
            }
        }
    }

    let guard_groups: Vec<&GroupData> = data
        .iter()
        .filter(|g| g.group.guard.is_some() && !g.group.deterministic)
        .collect();
    let mut stopping = None;
    if wanted(CheckFamily::Stopping) && guard_groups.len() > 1 {
        // paths completed under every guard, in path order
        let common: Vec<u64> = guard_groups[0]
            .ledgers
            .iter()
            .map(|(k, _)| *k)
            .filter(|k| guard_groups.iter().all(|g| g.ledgers.iter().any(|(j, _)| j == k)))
            .collect();
        let mut ladder = Vec::new();
        for gd in &guard_groups {
            let summaries = gd
                .ledgers
                .iter()
                .filter(|(k, _)| common.contains(k))
                .map(|(_, l)| summarize_path(l))
                .collect::<mvflow_core::Result<Vec<_>>>()?;
            ladder.push((gd.group.guard.unwrap(), summaries));
        }
        let paths_match = !common.is_empty();
        let table = stopping_statistics(&ladder)?;
        let nesting: usize = table.rows.iter().map(|r| r.nesting_violations).sum();
        checks.push(Check {
            family: CheckFamily::Stopping,
            name: "survival_monotone".into(),
            group: "ladder".into(),
            pass: table.survival_nondecreasing && paths_match,
            measured: Some(table.rows.last().map_or(0.0, |r| r.survival)),
            tolerance: None,
            detail: table
                .rows
                .iter()
                .map(|r| format!("R={}: {}", r.r, r.survival))
                .collect::<Vec<_>>()
                .join(", "),
        });
        checks.push(Check {
            family: CheckFamily::Stopping,
            name: "event_nesting".into(),
            group: "ladder".into(),
            pass: nesting == 0 && table.pathwise_nesting_violations == 0,
            measured: Some((nesting + table.pathwise_nesting_violations) as f64),
            tolerance: Some(0.0),
            detail: "A and B within S per guard; survivors of a smaller guard survive larger ones".into(),
        });
        stopping = Some(table);
    }

    let mut defect_ladder = None;
    if wanted(CheckFamily::DefectLadder) && !config.diagnostics.defect_ladder.is_empty() {
        let ladder = compute_defect_ladder(dir, &config, &data)?;
        checks.push(Check {
            family: CheckFamily::DefectLadder,
            name: "defect_decay".into(),
            group: "ladder".into(),
            pass: ladder.defect_decays,
            measured: ladder.rows.last().map(|r| r.defect),
            tolerance: None,
            detail: format!("energy gap decays: {}", ladder.energy_gap_decays),
        });
        checks.push(Check {
            family: CheckFamily::DefectLadder,
            name: "defect_domination".into(),
            group: "ladder".into(),
            pass: ladder.all_dominated,
            measured: Some(ladder.domination_constant),
            tolerance: None,
            detail: "|Theta| + |Lambda| <= C D at every checkpoint".into(),
        });
        defect_ladder = Some(ladder);
    }

    let pass = checks.iter().all(|c| c.pass);
    let diagnostics = Diagnostics {
        run: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config_hash: manifest.config_hash,
        checks,
        energy,
        martingale,
        weak_form,
        stopping,
        defect_ladder,
        pass,
    };
    write_json(&dir.join("diagnostics.json"), &diagnostics)?;
    Ok(diagnostics)
}

fn compute_defect_ladder(dir: &Path, config: &RunConfig, data: &[GroupData]) -> Result<DefectLadder> {
    let mut bases = Vec::new();
    let mut snaps: Vec<Vec<Snapshot>> = Vec::new();
    for gd in data.iter().filter(|g| g.group.deterministic) {
        if !gd.failures.is_empty() {
            return Err(RunError::MissingArtifact(gd.group.path_dir(dir, 0).join("ledger.csv")));
        }
        bases.push(gd.group.basis(config)?);
        snaps.push(read_snapshots(&gd.group.path_dir(dir, 0))?);
    }
    let runs: Vec<LadderRun<'_>> = bases
        .iter()
        .zip(&snaps)
        .map(|(basis, s)| LadderRun { basis, snapshots: s })
        .collect();
    Ok(energy_defect_ladder(&runs, &config.model, 1e-12)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YmReport {
    pub group: String,
    pub cells: usize,
    pub samples: usize,
    /// Largest cellwise `|<nu, S:D> - <nu, F + F*>| / max(1, |<nu, S:D>|)`.
    pub fenchel_max_error: f64,
    pub fenchel_pass: bool,
    pub defect_ladder: Option<DefectLadder>,
    pub pass: bool,
}

/// Builds the empirical Young measure of the first stochastic group and writes `ym/`.
pub fn ym_analyze(dir: &Path) -> Result<YmReport> {
    let (config, _, data) = load_groups(dir)?;
    let gd = data
        .iter()
        .find(|g| !g.group.deterministic)
        .ok_or_else(|| RunError::MissingArtifact(dir.join("paths")))?;
    let basis: Basis = gd.group.basis(&config)?;
    let mut samples = Vec::new();
    for (k, _) in &gd.ledgers {
        let snaps = read_snapshots(&gd.group.path_dir(dir, *k))?;
        samples.extend(solver_samples(&basis, &config.model, *k, &snaps)?);
    }
    let partition = Partition {
        t_range: (0.0, config.solver.t_final),
        t_cells: config.diagnostics.ym_time_cells,
        lengths: config.domain.lengths.clone(),
        x_cells: vec![config.diagnostics.ym_space_cells; config.domain.dim],
    };
    let n_samples = samples.len();
    let measure = build_empirical(samples, partition)?;
    let pairs = fenchel_pairing(&measure, &config.model, config.domain.dim)?;
    let fenchel_max_error = pairs
        .iter()
        .map(|(p, s)| (p - s).abs() / p.abs().max(1.0))
        .fold(0.0, f64::max);
    let ym = dir.join("ym");
    let mut csv = Vec::new();
    measure.write_csv(&mut csv).map_err(RunError::io(&ym))?;
    write_atomic(&ym.join("measure.csv"), &csv)?;
    write_json(&ym.join("partition.json"), &measure.partition)?;
    let defect_ladder = if config.diagnostics.defect_ladder.is_empty() {
        None
    } else {
        Some(compute_defect_ladder(dir, &config, &data)?)
    };
    let fenchel_pass = fenchel_max_error <= 1e-8;
    let pass = fenchel_pass
        && defect_ladder
            .as_ref()
            .is_none_or(|l| l.defect_decays && l.all_dominated);
    let report = YmReport {
        group: gd.group.label.clone(),
        cells: measure.cells.len(),
        samples: n_samples,
        fenchel_max_error,
        fenchel_pass,
        defect_ladder,
        pass,
    };
    write_json(&ym.join("report.json"), &report)?;
    Ok(report)
}
