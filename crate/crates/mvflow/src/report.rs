//! Flat CSV tables from one or more `diagnostics.json` files.

use std::path::{Path, PathBuf};

use crate::analyze::Diagnostics;
use crate::artifacts::{read_json, write_atomic};
use crate::error::Result;

pub const CHECKS_HEADER: &str = "run,family,name,group,pass,measured,tolerance";
pub const ENERGY_HEADER: &str = "run,group,mode,paths,mean_final,lower,upper,max_residual,tolerance";
pub const MARTINGALE_HEADER: &str =
    "run,group,paths,predicted_total,realized_total,ratio_mean,ratio_lower,ratio_upper,covers_one";
pub const WEAK_FORM_HEADER: &str =
    "run,group,test,continuity_max_abs,momentum_deterministic_max_abs,stochastic_mean,stochastic_std_error";
pub const STOPPING_HEADER: &str = "run,r,a_r,b_r,paths,survival,p_a,p_b,p_s,nesting_violations,envelope";
pub const DEFECT_HEADER: &str = "run,t,n_coarse,n_fine,energy_gap,defect,theta,lambda,dominated";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Accepts `diagnostics.json` files or run directories containing one.
pub fn load_diagnostics(inputs: &[PathBuf]) -> Result<Vec<Diagnostics>> {
    inputs
        .iter()
        .map(|p| {
            let file = if p.is_dir() { p.join("diagnostics.json") } else { p.clone() };
            read_json(&file)
        })
        .collect()
}

/// Writes one CSV per check family into `out`; returns the written files.
pub fn emit_report(diagnostics: &[Diagnostics], out: &Path) -> Result<Vec<PathBuf>> {
    let mut checks = vec![CHECKS_HEADER.to_string()];
    let mut energy = vec![ENERGY_HEADER.to_string()];
    let mut martingale = vec![MARTINGALE_HEADER.to_string()];
    let mut weak = vec![WEAK_FORM_HEADER.to_string()];
    let mut stopping_rows = Vec::new();
    let mut defect = vec![DEFECT_HEADER.to_string()];
    for d in diagnostics {
        let run = &d.run;
        for c in &d.checks {
            checks.push(format!(
                "{run},{},{},{},{},{},{}",
                c.family.name(),
                c.name,
                c.group,
                c.pass,
                opt(c.measured),
                opt(c.tolerance)
            ));
        }
        for e in &d.energy {
            energy.push(format!(
                "{run},{},{},{},{},{},{},{},{}",
                e.group,
                e.mode,
                e.paths,
                opt(e.mean_final),
                opt(e.lower),
                opt(e.upper),
                opt(e.max_residual),
                opt(e.tolerance)
            ));
        }
        for m in &d.martingale {
            martingale.push(format!(
                "{run},{},{},{},{},{},{},{},{}",
                m.group,
                m.paths,
                m.predicted_total,
                m.realized_total,
                opt(m.ratio_mean),
                opt(m.ratio_lower),
                opt(m.ratio_upper),
                m.covers_one
            ));
        }
        for w in &d.weak_form {
            weak.push(format!(
                "{run},{},{},{},{},{},{}",
                w.group,
                w.test,
                w.continuity_max_abs,
                w.momentum_deterministic_max_abs,
                opt(w.stochastic_mean),
                opt(w.stochastic_std_error)
            ));
        }
        if let Some(table) = &d.stopping {
            for r in &table.rows {
                stopping_rows.push((
                    r.r,
                    format!(
                        "{run},{},{},{},{},{},{},{},{},{},{}",
                        r.r, r.a_r, r.b_r, r.paths, r.survival, r.p_a, r.p_b, r.p_s, r.nesting_violations, r.envelope
                    ),
                ));
            }
        }
        if let Some(ladder) = &d.defect_ladder {
            for r in &ladder.rows {
                defect.push(format!(
                    "{run},{},{},{},{},{},{},{},{}",
                    r.t, r.n_coarse, r.n_fine, r.energy_gap, r.defect, r.theta, r.lambda, r.dominated
                ));
            }
        }
    }
    stopping_rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut stopping = vec![STOPPING_HEADER.to_string()];
    stopping.extend(stopping_rows.into_iter().map(|(_, line)| line));

    let tables = [
        ("checks.csv", checks),
        ("energy.csv", energy),
        ("martingale.csv", martingale),
        ("weak_form.csv", weak),
        ("stopping.csv", stopping),
        ("defect_ladder.csv", defect),
    ];
    let mut written = Vec::new();
    for (name, lines) in tables {
        let path = out.join(name);
        let mut text = lines.join("\n");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
