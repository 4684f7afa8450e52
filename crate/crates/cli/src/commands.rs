use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use dosedesign::apportion::apportion as round_design;
use dosedesign::closed_form::{emax_global_conditions, min_supported_case};
use dosedesign::optimize::{locally_optimal, maximize, Objective, OptimizationResult, OptimizerSettings, RESULT_CERTIFY_TOL};
use dosedesign::verify::{kappa_curve, CompoundSensitivity, DSensitivity, OptimalityCertificate, Sensitivity, DEFAULT_CERTIFY_GRID, DEFAULT_CERTIFY_TOL};
use dosedesign::{Candidate, Design, ModelFamily, ModelSpec, SharingPattern};

use crate::csvio::{fmt_num, read_design, write_design, write_exact, write_kappa, write_table};
use crate::exit::CliError;
use crate::study::{self, Criterion, Study};
use crate::Common;

struct Loaded {
    study: Study,
    settings: OptimizerSettings,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let study = study::load(&common.spec)?;
    for w in &study.warnings {
        eprintln!("warning: {w}");
    }
    let mut settings = study.optimizer.clone();
    if let Some(seed) = common.seed {
        settings.seed = seed;
    }
    if let Some(r) = common.restarts {
        settings.restarts = r;
    }
    settings.validate().map_err(|e| CliError::validation(format!("flags: {e}")))?;
    if let Some(tol) = common.tol {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(CliError::validation("tol: must be positive"));
        }
    }
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
    Ok(Loaded { study, settings })
}

/// Candidates with their locally optimal reference designs.
fn candidates(study: &Study, settings: &OptimizerSettings) -> Result<Vec<Candidate>, CliError> {
    study
        .candidates
        .iter()
        .map(|(id, spec, prior)| {
            let reference = locally_optimal(spec, settings)?;
            Ok(Candidate::new(id.clone(), spec.clone(), *prior, reference.design)?)
        })
        .collect()
}

fn objective(study: &Study, settings: &OptimizerSettings) -> Result<(Objective, Vec<Candidate>), CliError> {
    match study.criterion {
        Criterion::LocallyD => Ok((Objective::LocallyD(study.candidates[0].1.clone()), Vec::new())),
        Criterion::Compound => {
            let c = candidates(study, settings)?;
            Ok((Objective::Compound(c.clone()), c))
        }
    }
}

fn criterion_name(c: Criterion) -> &'static str {
    match c {
        Criterion::LocallyD => "log_det",
        Criterion::Compound => "compound_efficiency",
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::numerical(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn design_table(names: &[String], design: &Design) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>10} {:>16} {:>14}", "group", "lambda", "dose", "weight");
    for ((name, g), l) in names.iter().zip(design.groups()).zip(design.lambda()) {
        for (k, (d, w)) in g.iter().enumerate() {
            let (n, lam) = if k == 0 { (name.as_str(), format!("{l:.6}")) } else { ("", String::new()) };
            let _ = writeln!(s, "{n:<16} {lam:>10} {d:>16.6} {w:>14.6}");
        }
    }
    s
}

fn certificate_summary(cert: &OptimalityCertificate) -> Value {
    json!({
        "pass": cert.pass,
        "tol": cert.tol,
        "bound": cert.m,
        "max_ratio": cert.max_ratio(),
        "support_gap": cert.support_gap(),
    })
}

fn require(common: &Common, cert: &OptimalityCertificate) -> Result<(), CliError> {
    if common.require_certificate && !cert.pass {
        return Err(CliError::certification(format!(
            "certificate failed: max sensitivity ratio {} and support gap {} at tol {}",
            cert.max_ratio(),
            cert.support_gap(),
            cert.tol
        )));
    }
    Ok(())
}

fn compute(loaded: &Loaded) -> Result<(OptimizationResult, Objective, Vec<Candidate>), CliError> {
    let (obj, cands) = objective(&loaded.study, &loaded.settings)?;
    let res = match &obj {
        Objective::LocallyD(spec) => locally_optimal(spec, &loaded.settings)?,
        Objective::Compound(_) => maximize(&obj, &loaded.settings)?,
    };
    Ok((res, obj, cands))
}

pub fn design(common: &Common) -> Result<(), CliError> {
    let mut loaded = load(common)?;
    if let Some(g) = common.grid {
        loaded.settings.grid_density = g;
        loaded.settings.validate().map_err(|e| CliError::validation(format!("flags: {e}")))?;
    }
    let (res, obj, cands) = compute(&loaded)?;
    let tol = common.tol.unwrap_or(RESULT_CERTIFY_TOL);
    let cert = if tol == res.certificate.tol {
        res.certificate.clone()
    } else {
        obj.certify(&res.design, tol, DEFAULT_CERTIFY_GRID)?
    };
    write_design(&common.out.join("design.csv"), &res.design)?;
    write_text(&common.out.join("design.txt"), &design_table(&loaded.study.group_names, &res.design))?;
    let efficiencies: serde_json::Map<String, Value> = cands
        .iter()
        .map(|c| c.efficiency(&res.design).map(|e| (c.id.clone(), json!(e))))
        .collect::<Result<_, _>>()?;
    let summary = json!({
        "criterion_kind": criterion_name(loaded.study.criterion),
        "criterion": res.criterion,
        "method": format!("{:?}", res.method),
        "case": res.case.as_ref().map(|c| c.case.as_str()),
        "certificate": certificate_summary(&cert),
        "efficiencies": efficiencies,
        "restart_criteria": res.restart_criteria,
        "seed": loaded.settings.seed,
        "warnings": loaded.study.warnings,
    });
    write_json(&common.out.join("summary.json"), &summary)?;
    println!("{} = {}", criterion_name(loaded.study.criterion), fmt_num(res.criterion));
    println!(
        "certificate: {} (max ratio {}, support gap {}, tol {})",
        if cert.pass { "pass" } else { "FAIL" },
        fmt_num(cert.max_ratio()),
        fmt_num(cert.support_gap()),
        tol
    );
    require(common, &cert)
}

pub fn certify(common: &Common, design_path: &Path) -> Result<(), CliError> {
    let loaded = load(common)?;
    let design = read_design(design_path, loaded.study.group_names.len())?;
    let tol = common.tol.unwrap_or(DEFAULT_CERTIFY_TOL);
    let grid = common.grid.unwrap_or(DEFAULT_CERTIFY_GRID);
    if grid < 2 {
        return Err(CliError::validation("grid: at least two grid points are required"));
    }
    let (obj, _) = objective(&loaded.study, &loaded.settings)?;
    if let Objective::LocallyD(spec) = &obj {
        design.validate_for(spec)?;
    }
    let criterion = obj.evaluate(&design)?;
    let cert = obj.certify(&design, tol, grid)?;
    let sens: Box<dyn Sensitivity> = match &obj {
        Objective::LocallyD(spec) => Box::new(DSensitivity::new(spec, &design)?),
        Objective::Compound(c) => Box::new(CompoundSensitivity::new(c, &design)?),
    };
    write_kappa(&common.out.join("kappa.csv"), &kappa_curve(sens.as_ref(), grid)?)?;
    let mut value = serde_json::to_value(&cert).map_err(|e| CliError::numerical(e.to_string()))?;
    value["criterion_kind"] = json!(criterion_name(loaded.study.criterion));
    value["criterion"] = json!(criterion);
    write_json(&common.out.join("certificate.json"), &value)?;
    println!("{} = {}", criterion_name(loaded.study.criterion), fmt_num(criterion));
    println!(
        "certificate: {} (max ratio {}, support gap {}, tol {})",
        if cert.pass { "pass" } else { "FAIL" },
        fmt_num(cert.max_ratio()),
        fmt_num(cert.support_gap()),
        tol
    );
    require(common, &cert)
}

fn label(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub fn efficiency(common: &Common, designs: &[PathBuf]) -> Result<(), CliError> {
    let loaded = load(common)?;
    let cands = candidates(&loaded.study, &loaded.settings)?;
    let mut header = vec!["design".to_string()];
    header.extend(cands.iter().map(|c| c.id.clone()));
    header.push("g_c".into());
    let mut rows = Vec::with_capacity(designs.len());
    for path in designs {
        let design = read_design(path, loaded.study.group_names.len())?;
        let mut row = vec![label(path)];
        let mut gc = 0.0;
        for c in &cands {
            design.validate_for(&c.spec)?;
            let e = c.efficiency(&design)?;
            gc += c.prior * e;
            row.push(fmt_num(e));
        }
        row.push(fmt_num(gc));
        println!("{}", row.join(","));
        rows.push(row);
    }
    write_table(&common.out.join("efficiency.csv"), &header, &rows)
}

pub fn optimality_region(out: &Path, r: f64, n: usize) -> Result<(), CliError> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(CliError::validation("r: must be positive"));
    }
    if n == 0 {
        return Err(CliError::validation("n: must be positive"));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let header: Vec<String> = ["theta1", "theta2", "r", "case", "holds", "slack"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let step = 1.0 / (n + 1) as f64;
    for a in 1..=n {
        for b in a + 1..=n {
            let (t1, t2) = (a as f64 * step, b as f64 * step);
            let spec = ModelSpec::new(
                ModelFamily::Emax,
                SharingPattern::SharedLocationScale,
                vec![0.0, 1.0],
                vec![vec![t1], vec![t2]],
                vec![r, 1.0],
                vec![1.0, 1.0],
            )?;
            let case = min_supported_case(&spec)?;
            let cond = emax_global_conditions(&spec, &case)?;
            rows.push(vec![
                fmt_num(t1),
                fmt_num(t2),
                fmt_num(r),
                case.case.as_str().to_string(),
                cond.holds.to_string(),
                fmt_num(cond.slack),
            ]);
        }
    }
    write_table(&out.join("region.csv"), &header, &rows)
}

pub fn apportion(common: &Common, design_path: Option<&Path>, n: Option<usize>) -> Result<(), CliError> {
    let loaded = load(common)?;
    let n = n
        .or(loaded.study.n_total)
        .ok_or_else(|| CliError::validation("n_total: required for apportion (set it in the study or pass --n)"))?;
    let design = match design_path {
        Some(p) => read_design(p, loaded.study.group_names.len())?,
        None => compute(&loaded)?.0.design,
    };
    let exact = round_design(&design, n)?;
    write_exact(&common.out.join("exact.csv"), &exact)?;
    for (name, g) in loaded.study.group_names.iter().zip(&exact.groups) {
        println!("{name}: {} subjects", g.total());
    }
    Ok(())
}
