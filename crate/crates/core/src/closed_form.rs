//! Analytic optimal designs: the composed shared-location design, the
//! minimally supported designs for two groups with shared location and scale,
//! the sufficient conditions for their global optimality in the Emax family,
//! support-size bounds and the placebo reallocation.

use serde::{Deserialize, Serialize};

use crate::design::{Design, GroupDesign};
use crate::error::{DesignError, Result};
use crate::model::{ModelFamily, ModelSpec, SharingPattern};

/// Interior support point of the three-point locally D-optimal design for a
/// single group with parameters `(location, effect, theta)` on `[0, dmax]`.
pub fn single_model_interior(family: ModelFamily, theta: f64, dmax: f64) -> Result<f64> {
    match family.canonical() {
        ModelFamily::Emax => Ok(theta * dmax / (dmax + 2.0 * theta)),
        ModelFamily::Exponential => {
            let u = dmax / theta;
            if u > crate::model::MAX_EXP_ARGUMENT {
                return Err(DesignError::Overflow { ratio: u });
            }
            // ((D - t) e^(D/t) + t) / (e^(D/t) - 1) rearranged
            Ok(dmax - theta + dmax / u.exp_m1())
        }
        ModelFamily::LinearInLog => Ok(((dmax + theta) * theta * (dmax / theta).ln_1p() - theta * dmax) / dmax),
        ModelFamily::SigmoidEmax { .. } => Err(DesignError::NoClosedForm(
            "sigmoid Emax with Hill coefficient other than one".into(),
        )),
    }
}

/// Builds the shared-location design from per-group interior points:
/// the lowest-variance group gets `{0, x, dmax}` and the others `{x, dmax}`,
/// equally weighted, with allocations proportional to the group support sizes.
pub fn compose_shared_location(spec: &ModelSpec, interior: &[f64]) -> Result<Design> {
    let n = spec.n_groups();
    if interior.len() != n {
        return Err(DesignError::invalid(
            "interior",
            format!("expected {n} interior points, got {}", interior.len()),
        ));
    }
    let first = spec.min_variance_group();
    let m = (1 + 2 * n) as f64;
    let mut groups = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    for (i, (&x, &dmax)) in interior.iter().zip(spec.dmax()).enumerate() {
        if !(x > 0.0 && x < dmax) {
            return Err(DesignError::Precondition(format!(
                "interior point {x} of group {i} is not inside (0, {dmax})"
            )));
        }
        if i == first {
            groups.push(GroupDesign::uniform(vec![0.0, x, dmax])?);
            lambda.push(3.0 / m);
        } else {
            groups.push(GroupDesign::uniform(vec![x, dmax])?);
            lambda.push(2.0 / m);
        }
    }
    Design::from_groups(groups, lambda)
}

/// Locally D-optimal design for the shared-location pattern with an Emax,
/// exponential or linear-in-log family.
pub fn shared_location_optimal(spec: &ModelSpec) -> Result<Design> {
    if spec.sharing() != SharingPattern::SharedLocation {
        return Err(DesignError::Precondition("shared-location pattern required".into()));
    }
    let family = spec.family();
    let interior = (0..spec.n_groups())
        .map(|i| single_model_interior(family, spec.ed50(i), spec.dmax()[i]))
        .collect::<Result<Vec<_>>>()?;
    compose_shared_location(spec, &interior)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// Three points in the first group, one in the second.
    A,
    /// Two points in each group.
    B,
    /// One point in the first group, three in the second.
    C,
}

impl CaseTag {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseTag::A => "A",
            CaseTag::B => "B",
            CaseTag::C => "C",
        }
    }
}

/// Which minimally supported structure applies, in the canonical group order
/// (group 0 has the smaller scaled ED50).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinSupportedCase {
    pub case: CaseTag,
    /// Boundary between cases B and C on the variance ratio.
    pub threshold: f64,
    /// Variance ratio in canonical order.
    pub ratio: f64,
    /// Scaled ED50 values in canonical order.
    pub theta_bar: [f64; 2],
    /// `permutation[k]` is the original index of canonical group `k`.
    pub permutation: [usize; 2],
}

fn check_min_supported(spec: &ModelSpec) -> Result<()> {
    if spec.sharing() != SharingPattern::SharedLocationScale {
        return Err(DesignError::Precondition("shared location and scale pattern required".into()));
    }
    if spec.n_groups() != 2 {
        return Err(DesignError::Precondition(format!(
            "exactly two groups required, got {}",
            spec.n_groups()
        )));
    }
    if matches!(spec.family().canonical(), ModelFamily::SigmoidEmax { .. }) {
        return Err(DesignError::NoClosedForm("sigmoid Emax with Hill coefficient other than one".into()));
    }
    Ok(())
}

/// `g(theta, x)` from the threshold of the exponential and linear-in-log
/// structures, on the unit dose range.
fn threshold_g(family: ModelFamily, theta: f64, x: f64) -> f64 {
    match family {
        ModelFamily::Exponential => {
            let v = 1.0 + (x - 1.0) * (x / theta).exp() - x * ((x - 1.0) / theta).exp();
            v * v
        }
        ModelFamily::LinearInLog => {
            let l1 = (1.0 / theta).ln_1p();
            let lx = (x / theta).ln_1p();
            let a = (1.0 + theta) * l1 * lx;
            let b = x / ((x + theta) * lx) - 1.0 / ((1.0 + theta) * l1);
            a * a * b * b
        }
        _ => unreachable!("threshold_g is only defined for exponential and linear-in-log"),
    }
}

/// Case selection for two groups with shared location and scale.
pub fn min_supported_case(spec: &ModelSpec) -> Result<MinSupportedCase> {
    check_min_supported(spec)?;
    let tb = [spec.ed50(0) / spec.dmax()[0], spec.ed50(1) / spec.dmax()[1]];
    let permutation = if tb[0] < tb[1] {
        [0, 1]
    } else if tb[0] > tb[1] {
        [1, 0]
    } else {
        return Err(DesignError::Precondition(
            "scaled ED50 values must differ between the two groups".into(),
        ));
    };
    let theta_bar = [tb[permutation[0]], tb[permutation[1]]];
    if theta_bar[1] >= 1.0 {
        return Err(DesignError::Precondition(format!(
            "scaled ED50 values must be below one, got {}",
            theta_bar[1]
        )));
    }
    let s = spec.sigma2();
    let ratio = s[permutation[0]] / s[permutation[1]];
    let family = spec.family().canonical();
    let threshold = match family {
        ModelFamily::Emax => ((1.0 + theta_bar[1]) / (1.0 + theta_bar[0])).powi(6),
        _ => {
            let x0 = single_model_interior(family, theta_bar[0], 1.0)?;
            let x1 = single_model_interior(family, theta_bar[1], 1.0)?;
            threshold_g(family, theta_bar[0], x0) / threshold_g(family, theta_bar[1], x1)
        }
    };
    let case = if ratio <= 1.0 {
        CaseTag::A
    } else if ratio <= threshold {
        CaseTag::B
    } else {
        CaseTag::C
    };
    Ok(MinSupportedCase { case, threshold, ratio, theta_bar, permutation })
}

/// Minimally supported design of the given structure, in the original group
/// order and dose units.
pub fn min_supported_design(spec: &ModelSpec, case: &MinSupportedCase, tag: CaseTag) -> Result<Design> {
    check_min_supported(spec)?;
    let family = spec.family().canonical();
    let [g0, g1] = case.permutation;
    let d = spec.dmax();
    let x0 = single_model_interior(family, spec.ed50(g0), d[g0])?;
    let x1 = single_model_interior(family, spec.ed50(g1), d[g1])?;
    let (y, z) = match family {
        ModelFamily::Emax => (spec.ed50(g1), spec.ed50(g0)),
        _ => (d[g1], d[g0]),
    };
    let (first, second, mu) = match tag {
        CaseTag::A => (GroupDesign::uniform(vec![0.0, x0, d[g0]])?, GroupDesign::dirac(y), [0.75, 0.25]),
        CaseTag::B => (GroupDesign::uniform(vec![x0, d[g0]])?, GroupDesign::uniform(vec![0.0, y])?, [0.5, 0.5]),
        CaseTag::C => (GroupDesign::dirac(z), GroupDesign::uniform(vec![0.0, x1, d[g1]])?, [0.25, 0.75]),
    };
    let mut groups = vec![None, None];
    let mut lambda = vec![0.0; 2];
    groups[g0] = Some(first);
    groups[g1] = Some(second);
    lambda[g0] = mu[0];
    lambda[g1] = mu[1];
    Design::new(groups, lambda)
}

/// Locally D-optimal design among designs with four support points over
/// two groups, together with the selected case.
pub fn min_supported_optimal(spec: &ModelSpec) -> Result<(Design, MinSupportedCase)> {
    let case = min_supported_case(spec)?;
    let design = min_supported_design(spec, &case, case.case)?;
    Ok((design, case))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalCondition {
    pub holds: bool,
    /// Left-hand side minus right-hand side of the inequality.
    pub slack: f64,
}

/// Right-hand side of the case-A inequality; the case-C inequality is the same
/// expression with the roles of the groups swapped and `r` inverted.
fn rhs_outer(t: f64, r: f64) -> f64 {
    (r * 6.0 * t * (t + 1.0) * (2.0 * t + 1.0).powi(2) - (1.0 - r)) / (6.0 + 2.0 * r * t * (1.0 + 2.0 * t))
}

fn rhs_middle(t: f64, r: f64) -> f64 {
    (t * t * (1.0 + 2.0 * t).powi(2) + r * (1.0 + t).powi(2) * (1.0 + 4.0 * t + 20.0 * t * t) - 1.0)
        / (6.0 + 2.0 * t * (1.0 + 2.0 * t))
}

/// Evaluates the inequality under which the minimally supported Emax design
/// of `tag` is optimal among all designs. Sufficient for cases A and C,
/// necessary and sufficient for case B.
pub fn emax_global_conditions_for(theta_bar: [f64; 2], ratio: f64, tag: CaseTag) -> GlobalCondition {
    let [t1, t2] = theta_bar;
    let slack = match tag {
        CaseTag::A => t2 - rhs_outer(t1, ratio),
        CaseTag::B => t2 - rhs_middle(t1, ratio),
        CaseTag::C => t1 - rhs_outer(t2, 1.0 / ratio),
    };
    GlobalCondition { holds: slack >= 0.0, slack }
}

pub fn emax_global_conditions(spec: &ModelSpec, case: &MinSupportedCase) -> Result<GlobalCondition> {
    check_min_supported(spec)?;
    if spec.family().canonical() != ModelFamily::Emax {
        return Err(DesignError::Precondition("Emax family required".into()));
    }
    Ok(emax_global_conditions_for(case.theta_bar, case.ratio, case.case))
}

/// Upper bound on the support of some optimal design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportBound {
    pub per_group: Vec<usize>,
    pub total: usize,
    pub includes_zero: Vec<bool>,
    pub includes_dmax: Vec<bool>,
}

/// Support-size bound with boundary-point obligations. Sigmoid Emax uses the
/// Emax bound after the power substitution `u = d^gamma`.
pub fn support_bound(spec: &ModelSpec) -> SupportBound {
    let n = spec.n_groups();
    match spec.family() {
        ModelFamily::Exponential => SupportBound {
            per_group: vec![3; n],
            total: 3 * n,
            includes_zero: vec![false; n],
            includes_dmax: vec![true; n],
        },
        _ => {
            let first = spec.min_variance_group();
            SupportBound {
                per_group: (0..n).map(|i| if i == first { 3 } else { 2 }).collect(),
                total: 2 * n + 1,
                includes_zero: (0..n).map(|i| i == first).collect(),
                includes_dmax: vec![true; n],
            }
        }
    }
}

/// Moves every placebo observation to the lowest-variance group. The
/// information matrix does not decrease in the Loewner order.
pub fn placebo_shift(spec: &ModelSpec, eta: &Design) -> Result<Design> {
    eta.validate_for(spec)?;
    let target = spec.min_variance_group();
    let moved = eta.joint().iter().any(|&(g, d, w)| g != target && d == 0.0 && w > 0.0);
    if !moved {
        return Ok(eta.clone());
    }
    let entries: Vec<(usize, f64, f64)> = eta
        .joint()
        .into_iter()
        .map(|(g, d, w)| if d == 0.0 { (target, d, w) } else { (g, d, w) })
        .collect();
    Design::from_joint(spec.n_groups(), &entries)
}
