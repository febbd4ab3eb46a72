//! Acceptance suite. Prints one PASS/FAIL line per criterion; exits nonzero on any failure.
//! Numeric arguments select a subset, e.g. `cargo test --test acceptance -- 3 9`.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use mvflow::analyze::{analyze_run, CheckFamily, Diagnostics};
use mvflow::core::constitutive::{ConstitutiveModel, PotentialFamily, SymTensor};
use mvflow::core::diagnostics::read_ledger_csv;
use mvflow::core::spectral::{Basis, BasisConfig, BasisFamily, ModalVector};
use mvflow::core::young::{build_empirical, defect_estimate, equi_integrability_check, Partition, Sample, SampleField};
use mvflow::ensemble::{checksums, run_ensemble_in, RunOutcome};
use mvflow::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String), String>;

struct Criterion {
    id: usize,
    name: &'static str,
    run: fn(&Env) -> Verdict,
}

struct Env {
    root: PathBuf,
    default_run: OnceLock<Result<(RunOutcome, Diagnostics), String>>,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn config(kv: &str) -> Result<RunConfig, String> {
    RunConfig::from_kv(kv).map_err(err)
}

fn run(config: &RunConfig, dir: &Path) -> Result<RunOutcome, String> {
    let out = run_ensemble_in(config, dir, workers()).map_err(err)?;
    if !out.all_paths_completed() {
        return Err(format!("{} paths failed in {}", out.summary.failed_paths, dir.display()));
    }
    Ok(out)
}

fn run_and_analyze(config: &RunConfig, dir: &Path, only: Option<&[CheckFamily]>) -> Result<Diagnostics, String> {
    run(config, dir)?;
    analyze_run(dir, only).map_err(err)
}

fn check<'a>(d: &'a Diagnostics, family: CheckFamily, name: &str) -> Result<&'a mvflow::analyze::Check, String> {
    d.checks
        .iter()
        .find(|c| c.family == family && c.name == name)
        .ok_or_else(|| format!("missing check {}/{name}", family.name()))
}

const DEFAULT_SCALE: &str = "
ensemble.paths = 64
ensemble.seed = 2024
";

impl Env {
    /// Default desk-scale ensemble: d = 2, n = 16, grid 48, dt 1e-3, T 0.5, 64 paths, noise on.
    fn default_run(&self) -> Result<&(RunOutcome, Diagnostics), String> {
        self.default_run
            .get_or_init(|| {
                let c = config(DEFAULT_SCALE)?;
                let dir = self.root.join("default");
                let out = run(&c, &dir)?;
                let d = analyze_run(&dir, None).map_err(err)?;
                Ok((out, d))
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, dim: usize, range: f64) -> SymTensor {
    SymTensor::from_upper(dim, |_, _| rng.random_range(-range..range))
}

fn constitutive_suite(_: &Env) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut graph_gap, mut fy_min, mut fd_err) = (0.0f64, f64::INFINITY, 0.0f64);
    for draw in 0..1000 {
        let family = match draw % 4 {
            0 => PotentialFamily::PowerLaw { p: 1.5, scale: rng.random_range(0.05..2.0) },
            1 => PotentialFamily::PowerLaw { p: 2.0, scale: rng.random_range(0.05..2.0) },
            2 => PotentialFamily::PowerLaw { p: 3.0, scale: rng.random_range(0.05..2.0) },
            _ => PotentialFamily::Newtonian {
                mu: rng.random_range(0.05..2.0),
                lambda: rng.random_range(0.0..1.0),
            },
        };
        let m = ConstitutiveModel::new(family, 1.0, 2.0).map_err(err)?;
        let dim = rng.random_range(1..=3);
        let d = random_tensor(&mut rng, dim, 3.0);
        let s = m.stress_of_strain(&d);
        graph_gap = graph_gap.max(m.fenchel_gap(&s, &d).map_err(err)?.abs());
        let other = random_tensor(&mut rng, dim, 5.0);
        fy_min = fy_min.min(m.fenchel_gap(&other, &d).map_err(err)?);
        let h = 1e-6;
        for i in 0..dim {
            for j in i..dim {
                let fd = (m.potential_value(&d.perturbed(i, j, h)) - m.potential_value(&d.perturbed(i, j, -h))) / (2.0 * h);
                let exact = if i == j { s.get(i, j) } else { 2.0 * s.get(i, j) };
                fd_err = fd_err.max((fd - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    let pass = graph_gap <= 1e-10 && fy_min >= -1e-12 && fd_err <= 1e-6;
    Ok((pass, format!("max graph gap {graph_gap:.2e}, min Fenchel-Young gap {fy_min:.2e}, max FD error {fd_err:.2e}")))
}

fn spectral_suite(_: &Env) -> Verdict {
    let (mut idem, mut adj, mut pars, mut eig) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for family in [BasisFamily::Sine, BasisFamily::Fourier] {
        let b = Basis::new(BasisConfig {
            dim: 2,
            lengths: vec![1.5, 0.75],
            family,
            modes: 8,
            grid: 24,
        })
        .map_err(err)?;
        let c = ModalVector((0..b.len()).map(|i| (1.0 + i as f64).sin() / (1.0 + 0.1 * i as f64)).collect());
        let u = b.synthesize(&c).map_err(err)?;
        let back = b.project(&u).map_err(err)?;
        idem = idem.max(c.0.iter().zip(&back.0).fold(0.0, |m, (x, y)| m.max((x - y).abs())));
        let l2: f64 = u.iter().map(|comp| b.inner(comp, comp)).sum();
        pars = pars.max((l2 - c.dot(&c)).abs() / c.dot(&c));
        let f = b.sample(|x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let g = b.sample(|x| 0.5 + (x[0] - 2.0 * x[1]).cos());
        let pf = b.synthesize_scalar(&b.project_scalar(&f).map_err(err)?);
        let pg = b.synthesize_scalar(&b.project_scalar(&g).map_err(err)?);
        let (lhs, rhs) = (b.inner(&pf, &g), b.inner(&f, &pg));
        adj = adj.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    let b = Basis::new(BasisConfig::unit_box(2, BasisFamily::Sine, 8)).map_err(err)?;
    for m in 0..b.n_scalar() {
        let [i, j, _] = b.mode_index(m);
        let k2 = PI * PI * (((i + 1) * (i + 1) + (j + 1) * (j + 1)) as f64);
        let mut e = ModalVector::zeros(b.len());
        e.0[m] = 1.0;
        let out = b.tri_laplacian(&e).map_err(err)?;
        let off = out.0.iter().enumerate().filter(|(q, _)| *q != m).fold(0.0f64, |a, (_, v)| a.max(v.abs()));
        eig = eig.max((-out.0[m] - k2.powi(3)).abs() / k2.powi(3)).max(off);
    }
    let pass = idem <= 1e-10 && adj <= 1e-10 && pars <= 1e-10 && eig <= 4.0 * f64::EPSILON;
    Ok((
        pass,
        format!("idempotence {idem:.2e}, self-adjointness {adj:.2e}, Parseval {pars:.2e}, k^6 relative {eig:.2e}"),
    ))
}

fn solver_oracle(_: &Env) -> Verdict {
    let (r1, c1) = oracle::run_case(&oracle::regularized_case());
    let (r2, c2) = oracle::run_case(&oracle::cutoff_band_case());
    let worst = r1.max(c1).max(r2).max(c2);
    Ok((worst <= 1e-10, format!("max deviation {worst:.2e} over two one-step cases")))
}

fn conservation(env: &Env) -> Verdict {
    let (out, _) = env.default_run()?;
    let mut worst_rate = 0.0f64;
    let mut min_rho = f64::INFINITY;
    let mut paths = 0;
    for k in 0..out.manifest.seeds.len() as u64 {
        let file = out.dir.join("paths").join(k.to_string()).join("ledger.csv");
        let rows = read_ledger_csv(fs::read_to_string(&file).map_err(err)?.as_bytes()).map_err(err)?;
        let m0 = rows[0].mass;
        for r in &rows {
            min_rho = min_rho.min(r.min_rho);
            let drift = (r.mass - m0).abs() / m0;
            if r.t > 0.0 {
                worst_rate = worst_rate.max(drift / r.t);
            } else if drift > 0.0 {
                worst_rate = f64::INFINITY;
            }
        }
        paths += 1;
    }
    let pass = worst_rate <= 1e-12 && min_rho > 0.0;
    Ok((pass, format!("{paths} paths, max |m(t) - m(0)| / (t m(0)) {worst_rate:.2e}, min rho {min_rho:.4}")))
}

fn deterministic_kv(model: &str, dt: f64) -> String {
    format!(
        "{model}
domain.modes = 8
domain.grid = 24
solver.dt = {dt}
solver.t_final = 0.1
solver.checkpoint_every = 0
noise.amplitude = 0
diagnostics.snapshots = false
diagnostics.weak_form = true
"
    )
}

const NEWTONIAN: &str = "model.family.kind = newtonian";
const POWER_LAW: &str = "model.family.kind = power_law\nmodel.family.p = 3\nmodel.family.scale = 0.05";

fn energy_halving(env: &Env) -> Verdict {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, model) in [("newtonian", NEWTONIAN), ("power_law", POWER_LAW)] {
        let mut finals = Vec::new();
        let mut worst: f64 = 0.0;
        for dt in [2e-3, 1e-3, 5e-4] {
            let c = config(&deterministic_kv(model, dt))?;
            let d = run_and_analyze(&c, &env.root.join(format!("energy_{name}_{dt}")), Some(&[CheckFamily::Energy]))?;
            let ch = check(&d, CheckFamily::Energy, "deterministic_residual")?;
            pass &= ch.pass;
            worst = worst.max(ch.measured.unwrap_or(f64::INFINITY));
            finals.push(d.energy[0].mean_final.ok_or("missing residual")?.abs());
        }
        let ratios = [finals[0] / finals[1], finals[1] / finals[2]];
        pass &= ratios.iter().all(|r| (1.6..=2.5).contains(r));
        detail.push(format!(
            "{name}: max residual {worst:.2} dt*scale (tol 25), halving ratios {:.3} {:.3}",
            ratios[0], ratios[1]
        ));
    }
    Ok((pass, detail.join("; ")))
}

fn stochastic_energy(env: &Env) -> Verdict {
    let (_, d) = env.default_run()?;
    let e = d.energy.iter().find(|e| e.mode == "stochastic").ok_or("missing stochastic energy row")?;
    let lower = e.lower.ok_or("missing CI")?;
    let c = config(
        "
domain.modes = 8
domain.grid = 24
solver.t_final = 0.1
solver.checkpoint_every = 0
noise.modes = 1
ensemble.paths = 256
ensemble.seed = 7
diagnostics.snapshots = false
diagnostics.weak_form = false
",
    )?;
    let q = run_and_analyze(&c, &env.root.join("qv"), Some(&[CheckFamily::Martingale]))?;
    let m = q.martingale.first().ok_or("missing martingale row")?;
    let pass = lower <= 0.0 && m.covers_one;
    Ok((
        pass,
        format!(
            "energy residual mean {:.3e}, CI [{lower:.3e}, {:.3e}] ({} paths); QV ratio {:.3}, CI [{:.3}, {:.3}] ({} paths, K = 1)",
            e.mean_final.unwrap_or(f64::NAN),
            e.upper.unwrap_or(f64::NAN),
            e.paths,
            m.ratio_mean.unwrap_or(f64::NAN),
            m.ratio_lower.unwrap_or(f64::NAN),
            m.ratio_upper.unwrap_or(f64::NAN),
            m.paths
        ),
    ))
}

fn orlicz(env: &Env) -> Verdict {
    let (_, d) = env.default_run()?;
    let c = check(d, CheckFamily::Orlicz, "orlicz_velocity_bound")?;
    let v = c.measured.ok_or("missing measurement")?;
    Ok((c.pass && v <= 1e-10, format!("max over checkpoints of int g0(|u|) - 3 int F(Du) = {v:.4e}")))
}

fn weak_form(env: &Env) -> Verdict {
    let mut maxima = Vec::new();
    for dt in [1e-3, 5e-4] {
        let c = config(&deterministic_kv(NEWTONIAN, dt))?;
        let d = run_and_analyze(&c, &env.root.join(format!("weak_{dt}")), Some(&[CheckFamily::WeakForm]))?;
        let cont = d.weak_form.iter().map(|r| r.continuity_max_abs).fold(0.0, f64::max);
        let mom = d.weak_form.iter().map(|r| r.momentum_deterministic_max_abs).fold(0.0, f64::max);
        maxima.push((cont, mom));
    }
    let rc = maxima[0].0 / maxima[1].0;
    let rm = maxima[0].1 / maxima[1].1;
    let (_, d) = env.default_run()?;
    let rows: Vec<_> = d.weak_form.iter().filter(|r| r.stochastic_std_error.is_some()).collect();
    let worst_se = rows
        .iter()
        .map(|r| r.stochastic_mean.unwrap_or(f64::NAN).abs() / r.stochastic_std_error.unwrap_or(f64::NAN))
        .fold(0.0, f64::max);
    let pass = (1.6..=2.5).contains(&rc) && (1.6..=2.5).contains(&rm) && rows.len() == 5 && worst_se <= 4.0;
    Ok((
        pass,
        format!(
            "continuity halving ratio {rc:.3}, momentum halving ratio {rm:.3}; stochastic mean max {worst_se:.2} SE over {} test functions",
            rows.len()
        ),
    ))
}

const STOPPING: &str = "
domain.modes = 8
domain.grid = 24
solver.dt = 1e-4
solver.t_final = 0.02
solver.checkpoint_every = 100
solver.guards = [4, 8, 16]
solver.level = regularized
solver.epsilon = 0.05
solver.mu = 1e-4
initial.velocity_scale = 2.5
initial.velocity_tail = 1.0
ensemble.paths = 64
ensemble.seed = 11
diagnostics.snapshots = false
diagnostics.weak_form = false
";

fn stopping(env: &Env) -> Verdict {
    let c = config(STOPPING)?;
    let d = run_and_analyze(&c, &env.root.join("stopping"), Some(&[CheckFamily::Stopping]))?;
    let t = d.stopping.as_ref().ok_or("missing stopping table")?;
    let schedule = t.rows.iter().map(|r| (r.a_r * r.b_r.exp() - r.r).abs() / r.r).fold(0.0, f64::max);
    let nesting: usize = t.rows.iter().map(|r| r.nesting_violations).sum::<usize>() + t.pathwise_nesting_violations;
    let pass = t.survival_nondecreasing && nesting == 0 && schedule <= 1e-12 && t.rows.len() == 3;
    let survival: Vec<String> = t.rows.iter().map(|r| format!("R={}: {:.4}", r.r, r.survival)).collect();
    Ok((
        pass,
        format!("survival {}; nesting violations {nesting}; schedule error {schedule:.1e}", survival.join(", ")),
    ))
}

fn young_fixtures(_: &Env) -> Verdict {
    let osc = |n: usize| move |x: f64| if (2.0 * PI * n as f64 * x).sin() >= 0.0 { 1.0 } else { -1.0 };
    let conc = |n: usize| move |x: f64| if x < 1.0 / n as f64 { n as f64 } else { 0.0 };

    let n = 512;
    let u = osc(n);
    let m = 16 * n;
    let samples: Vec<Sample> = (0..m)
        .map(|j| {
            let x = (j as f64 + 0.5) / m as f64;
            Sample {
                path: 0,
                t: 0.0,
                x: [x, 0.0, 0.0],
                z: vec![1.0, u(x)],
            }
        })
        .collect();
    let partition = Partition {
        t_range: (0.0, 0.0),
        t_cells: 1,
        lengths: vec![1.0],
        x_cells: vec![8],
    };
    let nu = build_empirical(samples, partition).map_err(err)?;
    let first = nu.pair(|_, z| z[1]).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let second = nu.pair(|_, z| z[1] * z[1]).iter().fold(0.0f64, |a, v| a.max((v - 1.0).abs()));

    let sequence: Vec<(f64, SampleField)> = [256usize, 512, 1024]
        .iter()
        .map(|&n| {
            let u = conc(n);
            (n as f64, SampleField::on_interval(1.0, 8 * n, move |x| vec![u(x)]))
        })
        .collect();
    let est = defect_estimate(&sequence, &[1.0], &[4], |z| 0.5 * z[0], |z| z[0].abs(), &[4.0, 16.0, 64.0], 1e-12)
        .map_err(err)?;
    let defect: f64 = est.g_inf.iter().sum();
    let dominated = est.f_inf.iter().zip(&est.g_inf).all(|(f, g)| f.abs() <= g + 1e-12);

    let ns = [128usize, 256, 512, 1024];
    let fields: Vec<(f64, SampleField)> = ns
        .iter()
        .map(|&n| {
            let u = conc(n);
            (n as f64, SampleField::on_interval(1.0, 4 * n, move |x| vec![u(x)]))
        })
        .collect();
    let square = |t: f64| t * t;
    let linear = |t: f64| t;
    let cands: [(&str, &dyn Fn(f64) -> f64); 2] = [("square", &square), ("linear", &linear)];
    let r = equi_integrability_check(&fields, &cands, &[2.0, 8.0, 32.0]).map_err(err)?;
    let exact = r.candidates[0]
        .integrals
        .iter()
        .zip(ns)
        .all(|(v, n)| (v - n as f64).abs() <= 1e-9 * n as f64);
    let verdicts = exact && !r.candidates[0].bounded && r.candidates[1].bounded && !r.equi_integrable;

    let pass = first <= 0.01 && second <= 0.01 && (defect - 1.0).abs() <= 0.02 && dominated && verdicts;
    Ok((
        pass,
        format!(
            "oscillation |<nu, z>| {first:.2e}, |<nu, z^2> - 1| {second:.2e}; concentration defect {defect:.4}, dominated {dominated}; int g = n divergence detected {verdicts} (growth exponent {:.3})",
            r.candidates[0].growth_exponent
        ),
    ))
}

const LADDER: &str = "
domain.modes = 8
domain.grid = 24
solver.t_final = 0.1
solver.checkpoint_every = 20
noise.amplitude = 0
initial.velocity_modes = 4
diagnostics.defect_ladder = [8, 16, 32]
diagnostics.weak_form = false
";

fn defect_ladder(env: &Env) -> Verdict {
    let c = config(LADDER)?;
    let d = run_and_analyze(&c, &env.root.join("ladder"), Some(&[CheckFamily::DefectLadder]))?;
    let l = d.defect_ladder.as_ref().ok_or("missing defect ladder")?;
    let pass = l.defect_decays && l.energy_gap_decays && l.all_dominated && !l.rows.is_empty();
    let worst = l
        .rows
        .iter()
        .map(|r| (r.theta.abs() + r.lambda.abs()) / (l.domination_constant * r.defect).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok((
        pass,
        format!(
            "{} rows, Jensen defect decays {}, energy gap decays {}, max (|Theta| + |Lambda|) / (C D) {worst:.3} with C = {}",
            l.rows.len(),
            l.defect_decays,
            l.energy_gap_decays,
            l.domination_constant
        ),
    ))
}

fn reproducibility(env: &Env) -> Verdict {
    let mut detail = Vec::new();
    let mut pass = true;
    for (name, kv) in [("stopping", STOPPING.to_string()), ("energy", deterministic_kv(NEWTONIAN, 1e-3))] {
        let c = config(&kv)?;
        let a = run_ensemble_in(&c, &env.root.join(format!("rerun_{name}_a")), 1).map_err(err)?;
        let b = run_ensemble_in(&c, &env.root.join(format!("rerun_{name}_b")), workers().max(2)).map_err(err)?;
        let (ca, cb) = (checksums(&a.dir).map_err(err)?, checksums(&b.dir).map_err(err)?);
        let same = ca == cb && a.manifest == b.manifest;
        pass &= same;
        detail.push(format!("{name}: {} files identical {same}", ca.len()));
    }
    Ok((pass, detail.join("; ")))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "constitutive suite", run: constitutive_suite },
        Criterion { id: 2, name: "spectral suite", run: spectral_suite },
        Criterion { id: 3, name: "solver oracle equivalence", run: solver_oracle },
        Criterion { id: 4, name: "conservation and positivity", run: conservation },
        Criterion { id: 5, name: "deterministic energy inequality", run: energy_halving },
        Criterion { id: 6, name: "stochastic energy statistics", run: stochastic_energy },
        Criterion { id: 7, name: "Orlicz bound", run: orlicz },
        Criterion { id: 8, name: "weak-form residuals", run: weak_form },
        Criterion { id: 9, name: "stopping statistics", run: stopping },
        Criterion { id: 10, name: "Young-measure fixtures", run: young_fixtures },
        Criterion { id: 11, name: "defect ladder", run: defect_ladder },
        Criterion { id: 12, name: "reproducibility", run: reproducibility },
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let env = Env {
        root: tmp.path().to_path_buf(),
        default_run: OnceLock::new(),
    };
    let mut failed = 0;
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let start = Instant::now();
        let (pass, detail) = match (c.run)(&env) {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {:>2} {}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" }, c.id, c.name);
        if !pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
