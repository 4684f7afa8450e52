//! CSV input and output. Every number is written with 12 significant digits.

use std::path::Path;

use dosedesign::apportion::ExactDesign;
use dosedesign::verify::KappaSample;
use dosedesign::{Design, GroupDesign};

use crate::exit::CliError;

/// `%.12g`-style formatting: 12 significant digits, trailing zeros removed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        trim_zeros(s)
    } else {
        let s = format!("{v:.11e}");
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        format!("{}e{}", trim_zeros(mant.to_string()), e)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_row(w: &mut csv::Writer<std::fs::File>, row: &[String], path: &Path) -> Result<(), CliError> {
    w.write_record(row).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Columns `group, dose, group_weight, lambda`; groups are numbered from 1.
pub fn write_design(path: &Path, design: &Design) -> Result<(), CliError> {
    let mut w = writer(path)?;
    write_row(&mut w, &["group".into(), "dose".into(), "group_weight".into(), "lambda".into()], path)?;
    for (i, (g, l)) in design.groups().iter().zip(design.lambda()).enumerate() {
        for (d, wt) in g.iter() {
            write_row(&mut w, &[(i + 1).to_string(), fmt_num(d), fmt_num(wt), fmt_num(*l)], path)?;
        }
    }
    finish(w, path)
}

#[derive(Debug, serde::Deserialize)]
struct DesignRow {
    group: usize,
    dose: f64,
    group_weight: f64,
    lambda: f64,
}

/// Reads a design written by [`write_design`]; groups without rows get zero allocation.
pub fn read_design(path: &Path, n_groups: usize) -> Result<Design, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("design: {}: {e}", path.display())))?;
    let mut points = vec![Vec::new(); n_groups];
    let mut weights = vec![Vec::new(); n_groups];
    let mut lambda: Vec<Option<f64>> = vec![None; n_groups];
    for (line, row) in r.deserialize::<DesignRow>().enumerate() {
        let row = row.map_err(|e| CliError::validation(format!("design: {e}")))?;
        if row.group == 0 || row.group > n_groups {
            return Err(CliError::validation(format!(
                "design: row {}: group {} outside 1..={n_groups}",
                line + 1,
                row.group
            )));
        }
        let g = row.group - 1;
        match lambda[g] {
            Some(l) if l != row.lambda => {
                return Err(CliError::validation(format!(
                    "design: row {}: inconsistent lambda for group {}",
                    line + 1,
                    row.group
                )))
            }
            _ => lambda[g] = Some(row.lambda),
        }
        points[g].push(row.dose);
        weights[g].push(row.group_weight);
    }
    let mut groups = Vec::with_capacity(n_groups);
    for (p, w) in points.into_iter().zip(weights) {
        groups.push(if p.is_empty() { None } else { Some(GroupDesign::new(p, w)?) });
    }
    let lambda = lambda.into_iter().map(|l| l.unwrap_or(0.0)).collect();
    Ok(Design::new(groups, lambda)?)
}

/// Columns `group, dose, kappa, m`.
pub fn write_kappa(path: &Path, samples: &[KappaSample]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    write_row(&mut w, &["group".into(), "dose".into(), "kappa".into(), "m".into()], path)?;
    for s in samples {
        write_row(&mut w, &[(s.group + 1).to_string(), fmt_num(s.dose), fmt_num(s.kappa), fmt_num(s.m)], path)?;
    }
    finish(w, path)
}

/// Columns `group, dose, count`.
pub fn write_exact(path: &Path, exact: &ExactDesign) -> Result<(), CliError> {
    let mut w = writer(path)?;
    write_row(&mut w, &["group".into(), "dose".into(), "count".into()], path)?;
    for (i, g) in exact.groups.iter().enumerate() {
        for (d, c) in g.points.iter().zip(&g.counts) {
            write_row(&mut w, &[(i + 1).to_string(), fmt_num(*d), c.to_string()], path)?;
        }
    }
    finish(w, path)
}

/// Generic table: a header and rows of preformatted cells.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    write_row(&mut w, header, path)?;
    for r in rows {
        write_row(&mut w, r, path)?;
    }
    finish(w, path)
}
