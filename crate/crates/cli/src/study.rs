//! Study file: groups, candidate models, criterion and optimizer overrides.

use serde::Deserialize;

use dosedesign::optimize::OptimizerSettings;
use dosedesign::{ModelFamily, ModelSpec, SharingPattern};

use crate::exit::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub name: String,
    pub dmax: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateEntry {
    pub id: String,
    pub family: String,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub sharing: String,
    pub theta_shared: Vec<f64>,
    pub theta_group: Vec<Vec<f64>>,
    #[serde(default = "default_prior")]
    pub prior: f64,
}

fn default_prior() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum Criterion {
    #[serde(rename = "locally_D")]
    LocallyD,
    #[serde(rename = "compound")]
    Compound,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub groups: Vec<GroupEntry>,
    pub candidates: Vec<CandidateEntry>,
    pub criterion: Criterion,
    #[serde(default)]
    pub optimizer: Option<OptimizerSettings>,
    #[serde(default)]
    pub n_total: Option<usize>,
}

/// A validated study: one model per candidate with normalized priors.
#[derive(Debug, Clone)]
pub struct Study {
    pub group_names: Vec<String>,
    pub candidates: Vec<(String, ModelSpec, f64)>,
    pub criterion: Criterion,
    pub optimizer: OptimizerSettings,
    pub n_total: Option<usize>,
    pub warnings: Vec<String>,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::validation(format!("{field}: {}", message.into()))
}

fn family_of(c: &CandidateEntry) -> Result<ModelFamily, CliError> {
    let field = format!("candidates[{}].family", c.id);
    let family = match c.family.as_str() {
        "emax" => ModelFamily::Emax,
        "sigmoid_emax" => match c.gamma {
            Some(gamma) => ModelFamily::SigmoidEmax { gamma },
            None => return Err(invalid(&format!("candidates[{}].gamma", c.id), "required for sigmoid_emax")),
        },
        "linlog" => ModelFamily::LinearInLog,
        "exponential" => ModelFamily::Exponential,
        other => return Err(invalid(&field, format!("unknown family `{other}`"))),
    };
    if c.gamma.is_some() && c.family != "sigmoid_emax" {
        return Err(invalid(&format!("candidates[{}].gamma", c.id), "only allowed for sigmoid_emax"));
    }
    Ok(family)
}

fn sharing_of(c: &CandidateEntry) -> Result<SharingPattern, CliError> {
    match c.sharing.as_str() {
        "location" => Ok(SharingPattern::SharedLocation),
        "location_scale" => Ok(SharingPattern::SharedLocationScale),
        other => Err(invalid(&format!("candidates[{}].sharing", c.id), format!("unknown sharing `{other}`"))),
    }
}

impl StudyFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::validation(format!("study file: {e}")))
    }

    pub fn validate(self) -> Result<Study, CliError> {
        if self.groups.is_empty() {
            return Err(invalid("groups", "must be non-empty"));
        }
        if self.candidates.is_empty() {
            return Err(invalid("candidates", "must be non-empty"));
        }
        if self.criterion == Criterion::LocallyD && self.candidates.len() != 1 {
            return Err(invalid(
                "criterion",
                format!("locally_D requires exactly one candidate, got {}", self.candidates.len()),
            ));
        }
        for (i, g) in self.groups.iter().enumerate() {
            if !(g.dmax > 0.0 && g.dmax.is_finite()) {
                return Err(invalid(&format!("groups[{i}].dmax"), "must be positive"));
            }
            if !(g.sigma2 > 0.0 && g.sigma2.is_finite()) {
                return Err(invalid(&format!("groups[{i}].sigma2"), "must be positive"));
            }
        }
        let dmax: Vec<f64> = self.groups.iter().map(|g| g.dmax).collect();
        let sigma2: Vec<f64> = self.groups.iter().map(|g| g.sigma2).collect();
        let mut ids = std::collections::BTreeSet::new();
        let mut candidates = Vec::with_capacity(self.candidates.len());
        for c in &self.candidates {
            if !ids.insert(c.id.clone()) {
                return Err(invalid("candidates", format!("duplicate id `{}`", c.id)));
            }
            if c.theta_group.len() != self.groups.len() {
                return Err(invalid(
                    &format!("candidates[{}].theta_group", c.id),
                    format!("expected {} groups, got {}", self.groups.len(), c.theta_group.len()),
                ));
            }
            if !(c.prior >= 0.0 && c.prior.is_finite()) {
                return Err(invalid(&format!("candidates[{}].prior", c.id), "must be nonnegative"));
            }
            let spec = ModelSpec::new(
                family_of(c)?,
                sharing_of(c)?,
                c.theta_shared.clone(),
                c.theta_group.clone(),
                sigma2.clone(),
                dmax.clone(),
            )
            .map_err(|e| CliError::validation(format!("candidates[{}].{e}", c.id)))?;
            candidates.push((c.id.clone(), spec, c.prior));
        }
        let mut warnings = Vec::new();
        let total: f64 = candidates.iter().map(|c| c.2).sum();
        if !(total > 0.0) {
            return Err(invalid("candidates", "priors must have a positive sum"));
        }
        if (total - 1.0).abs() > 1e-12 {
            warnings.push(format!("priors sum to {total}; normalizing to one"));
            for c in &mut candidates {
                c.2 /= total;
            }
        }
        let optimizer = self.optimizer.unwrap_or_default();
        optimizer.validate().map_err(|e| CliError::validation(format!("optimizer.{e}")))?;
        Ok(Study {
            group_names: self.groups.into_iter().map(|g| g.name).collect(),
            candidates,
            criterion: self.criterion,
            optimizer,
            n_total: self.n_total,
            warnings,
        })
    }
}

pub fn load(path: &std::path::Path) -> Result<Study, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("spec: cannot read {}: {e}", path.display())))?;
    StudyFile::parse(&text)?.validate()
}
