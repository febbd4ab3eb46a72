//! Parallel ensemble execution into a run directory.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mvflow_core::diagnostics::{
    ledger_residual, mean_ci, write_ledger_csv, LedgerRow, MeanCi, ResidualMode, WeakFormProbe,
    TestFunction,
};
use mvflow_core::noise::{mix_key, NoiseModel};
use mvflow_core::solver::{solve_path_observed, PathOutput, PathSpec, SolverParams};
use mvflow_core::spectral::Basis;

use crate::artifacts::{self, write_atomic, write_json, FileEntry, PathSeed, RunManifest};
use crate::config::RunConfig;
use crate::error::{Result, RunError};

/// One family of paths sharing basis, guard and noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub label: String,
    /// Directory relative to the run root holding `paths/<k>`.
    pub dir: String,
    pub modes: usize,
    pub grid: usize,
    pub guard: Option<f64>,
    pub deterministic: bool,
    pub paths: u64,
}

impl Group {
    pub fn path_dir(&self, root: &Path, k: u64) -> PathBuf {
        let base = if self.dir.is_empty() {
            root.to_path_buf()
        } else {
            root.join(&self.dir)
        };
        base.join("paths").join(k.to_string())
    }

    pub fn basis(&self, config: &RunConfig) -> Result<Basis> {
        let mut b = config.basis_config();
        b.modes = self.modes;
        b.grid = self.grid;
        Ok(Basis::new(b)?)
    }

    pub fn noise(&self, config: &RunConfig) -> NoiseModel {
        if self.deterministic {
            NoiseModel::off()
        } else {
            config.noise
        }
    }

    pub fn params(&self, config: &RunConfig) -> SolverParams {
        config.solver_params(self.guard)
    }
}

/// Label of a guard ladder entry.
pub fn guard_label(r: f64) -> String {
    format!("R_{r:?}")
}

/// Groups of a run: the guard ladder (or the single primary ensemble) plus the defect ladder.
pub fn groups(config: &RunConfig) -> Vec<Group> {
    let ladder = config.guard_ladder();
    let mut out: Vec<Group> = if ladder.len() == 1 {
        vec![Group {
            label: "primary".into(),
            dir: String::new(),
            modes: config.domain.modes,
            grid: config.domain.grid,
            guard: ladder[0],
            deterministic: false,
            paths: config.ensemble.paths,
        }]
    } else {
        ladder
            .iter()
            .map(|g| {
                let label = guard_label(g.unwrap());
                Group {
                    dir: format!("ladder/{label}"),
                    label,
                    modes: config.domain.modes,
                    grid: config.domain.grid,
                    guard: *g,
                    deterministic: false,
                    paths: config.ensemble.paths,
                }
            })
            .collect()
    };
    for &n in &config.diagnostics.defect_ladder {
        let label = format!("n_{n}");
        out.push(Group {
            dir: format!("ladder/{label}"),
            label,
            modes: n,
            grid: 3 * n,
            guard: None,
            deterministic: true,
            paths: 1,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub path: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub paths: u64,
    pub completed: u64,
    pub failures: Vec<PathFailure>,
    pub stopped: u64,
    pub min_rho: f64,
    pub max_mass_drift: f64,
    /// Final energy residual with the realized noise work kept, mean over paths.
    pub final_residual: MeanCi,
    pub max_pathwise_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub groups: Vec<GroupSummary>,
    pub failed_paths: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: EnsembleSummary,
}

impl RunOutcome {
    pub fn all_paths_completed(&self) -> bool {
        self.summary.failed_paths == 0
    }
}

/// Output directory after the `MVFLOW_OUT` root override.
pub fn output_dir(config: &RunConfig) -> PathBuf {
    let dir = PathBuf::from(&config.output.dir);
    match std::env::var_os("MVFLOW_OUT") {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

/// Worker count after the `MVFLOW_WORKERS` override (0: available parallelism).
pub fn worker_count(config: &RunConfig) -> usize {
    let configured = std::env::var("MVFLOW_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(config.ensemble.workers);
    if configured > 0 {
        configured
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(RunError::io(dir))?;
        let empty = entries.next().is_none();
        let previous = dir.join("manifest.json").exists() || dir.join("config.json").exists();
        if !empty {
            if !previous {
                return Err(RunError::OutputOccupied(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(RunError::io(dir))?;
        }
    }
    fs::create_dir_all(dir).map_err(RunError::io(dir))
}

struct PathRecord {
    path: u64,
    ledger: Option<Vec<LedgerRow>>,
    error: Option<String>,
}

/// Runs every group of `config` into `output_dir(config)`.
pub fn run_ensemble(config: &RunConfig) -> Result<RunOutcome> {
    run_ensemble_in(config, &output_dir(config), worker_count(config))
}

pub fn run_ensemble_in(config: &RunConfig, dir: &Path, workers: usize) -> Result<RunOutcome> {
    config.validate()?;
    prepare_dir(dir)?;
    let config_json = config.to_json();
    write_atomic(&dir.join("config.json"), config_json.as_bytes())?;
    write_atomic(&dir.join("config.kv"), config.to_kv().as_bytes())?;
    let groups = groups(config);
    write_json(&dir.join("groups.json"), &groups)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| RunError::config("ensemble.workers", e.to_string()))?;
    let mut summaries = Vec::new();
    let mut seeds = Vec::new();
    let seed = config.ensemble.seed;
    for group in &groups {
        let basis = group.basis(config)?;
        let noise = group.noise(config);
        let params = group.params(config);
        let records: Vec<PathRecord> = pool.install(|| {
            (0..group.paths)
                .into_par_iter()
                .map(|k| run_one(config, group, &basis, &noise, &params, dir, k))
                .collect()
        });
        for k in 0..group.paths {
            seeds.push(PathSeed {
                group: group.label.clone(),
                path: k,
                seed,
                key: mix_key(&[seed, k]),
            });
        }
        summaries.push(summarize_group(group, &records));
    }
    let summary = EnsembleSummary {
        failed_paths: summaries.iter().map(|g| g.failures.len() as u64).sum(),
        groups: summaries,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let manifest = RunManifest {
        config_hash: artifacts::hex64(artifacts::fnv1a64(config_json.as_bytes())),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds,
        files: artifacts::inventory(dir)?,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        manifest,
        summary,
    })
}

fn run_one(
    config: &RunConfig,
    group: &Group,
    basis: &Basis,
    noise: &NoiseModel,
    params: &SolverParams,
    root: &Path,
    k: u64,
) -> PathRecord {
    let seed = config.ensemble.seed;
    let attempt = catch_unwind(AssertUnwindSafe(|| -> Result<(PathOutput, Option<WeakFormProbe>)> {
        let spec = PathSpec {
            basis,
            model: &config.model,
            noise,
            params,
            law: &config.initial,
        };
        if config.diagnostics.weak_form {
            let mut probe = WeakFormProbe::new(basis, TestFunction::canonical_set(), params.epsilon())?;
            let out = solve_path_observed(&spec, seed, k, &mut probe)?;
            Ok((out, Some(probe)))
        } else {
            Ok((solve_path_observed(&spec, seed, k, &mut ())?, None))
        }
    }));
    let outcome = match attempt {
        Ok(r) => r,
        Err(panic) => Err(RunError::config(
            format!("path {k}"),
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()),
        )),
    };
    let final_dir = group.path_dir(root, k);
    let staging = final_dir.with_file_name(format!(".{k}.staging"));
    let written = (|| -> Result<Option<Vec<LedgerRow>>> {
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(RunError::io(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(RunError::io(&staging))?;
        let ledger = match &outcome {
            Ok((out, probe)) => {
                let mut csv = Vec::new();
                write_ledger_csv(&out.ledger, &mut csv).map_err(RunError::io(&staging))?;
                write_atomic(&staging.join("ledger.csv"), &csv)?;
                if config.diagnostics.snapshots {
                    let params_json = serde_json::json!({
                        "model": config.model,
                        "noise": noise,
                        "solver": params,
                    });
                    for (i, snap) in out.snapshots.iter().enumerate() {
                        artifacts::write_snapshot(
                            &staging.join("snapshots"),
                            i,
                            snap,
                            basis,
                            seed,
                            k,
                            &params_json,
                        )?;
                    }
                }
                if let Some(p) = probe {
                    write_json(&staging.join("weak_form.json"), &p.residual())?;
                }
                Some(out.ledger.clone())
            }
            Err(e) => {
                write_json(
                    &staging.join("error.json"),
                    &PathFailure {
                        path: k,
                        error: e.to_string(),
                    },
                )?;
                None
            }
        };
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(RunError::io(&final_dir))?;
        }
        fs::rename(&staging, &final_dir).map_err(RunError::io(&final_dir))?;
        Ok(ledger)
    })();
    match (written, outcome) {
        (Ok(ledger), Ok(_)) => PathRecord {
            path: k,
            ledger,
            error: None,
        },
        (Ok(_), Err(e)) | (Err(e), _) => PathRecord {
            path: k,
            ledger: None,
            error: Some(e.to_string()),
        },
    }
}

fn summarize_group(group: &Group, records: &[PathRecord]) -> GroupSummary {
    let mut failures = Vec::new();
    let mut finals = Vec::new();
    let mut max_res = f64::NEG_INFINITY;
    let mut min_rho = f64::INFINITY;
    let mut drift: f64 = 0.0;
    let mut stopped = 0;
    for r in records {
        match (&r.ledger, &r.error) {
            (Some(l), None) => {
                let m0 = l[0].mass;
                for row in l {
                    min_rho = min_rho.min(row.min_rho);
                    drift = drift.max((row.mass - m0).abs());
                }
                stopped += l.iter().any(|row| row.stopped) as u64;
                if let Ok(rep) = ledger_residual(l, ResidualMode::Deterministic) {
                    finals.push(rep.final_residual);
                    max_res = max_res.max(rep.max_residual);
                }
            }
            (_, err) => failures.push(PathFailure {
                path: r.path,
                error: err.clone().unwrap_or_default(),
            }),
        }
    }
    GroupSummary {
        label: group.label.clone(),
        paths: group.paths,
        completed: records.len() as u64 - failures.len() as u64,
        failures,
        stopped,
        min_rho,
        max_mass_drift: drift,
        final_residual: mean_ci(&finals),
        max_pathwise_residual: max_res,
    }
}

/// Recomputes the file inventory of a finished run.
pub fn checksums(dir: &Path) -> Result<Vec<FileEntry>> {
    artifacts::inventory(dir)
}
