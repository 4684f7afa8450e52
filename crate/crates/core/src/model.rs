//! Dose-response families, parameter-sharing patterns and the per-group
//! gradient vectors that feed the information matrix.
//!
//! Every family is written as `f0(d, theta)` where `theta` is an ED50-type
//! parameter in dose units and `f0` depends on the dose only through `d / theta`:
//!
//! | family          | f0(d, theta)                          |
//! |-----------------|---------------------------------------|
//! | Emax            | d / (theta + d)                       |
//! | sigmoid Emax    | d^g / (theta^g + d^g)                 |
//! | linear-in-log   | ln(d / theta + 1)                     |
//! | exponential     | exp(d / theta) - 1                    |
//!
//! Two sharing patterns combine `f0` into the group mean:
//!
//! * shared location: `theta1 + a_i * f0(d, b_i)`, parameters `(theta1 | a_i, b_i)`;
//! * shared location and scale: `t1 + t2 * f0(d, b_i)`, parameters `(t1, t2 | b_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};

/// Largest `d / theta` accepted by the exponential family.
pub const MAX_EXP_ARGUMENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelFamily {
    Emax,
    SigmoidEmax { gamma: f64 },
    LinearInLog,
    Exponential,
}

impl ModelFamily {
    /// Sigmoid Emax with unit Hill coefficient collapses onto Emax.
    pub fn canonical(self) -> Self {
        match self {
            ModelFamily::SigmoidEmax { gamma } if gamma == 1.0 => ModelFamily::Emax,
            other => other,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Emax => "emax",
            ModelFamily::SigmoidEmax { .. } => "sigmoid_emax",
            ModelFamily::LinearInLog => "linlog",
            ModelFamily::Exponential => "exponential",
        }
    }

    /// Returns `(f0, d f0 / d theta)` at dose `dose`.
    pub fn base(&self, dose: f64, theta: f64) -> Result<(f64, f64)> {
        match *self {
            ModelFamily::Emax => {
                let s = theta + dose;
                Ok((dose / s, -dose / (s * s)))
            }
            ModelFamily::SigmoidEmax { gamma } => {
                if dose == 0.0 {
                    return Ok((0.0, 0.0));
                }
                // ratio^g with ratio = theta / d, written to avoid overflow of d^g
                let q = (gamma * (theta / dose).ln()).exp();
                let f = 1.0 / (1.0 + q);
                // d f / d theta = -(g / theta) * q / (1 + q)^2
                let df = -(gamma / theta) * q * f * f;
                Ok((f, df))
            }
            ModelFamily::LinearInLog => {
                let f = (dose / theta).ln_1p();
                Ok((f, -dose / (theta * (theta + dose))))
            }
            ModelFamily::Exponential => {
                let u = dose / theta;
                if u > MAX_EXP_ARGUMENT {
                    return Err(DesignError::Overflow { ratio: u });
                }
                let e = u.exp();
                Ok((u.exp_m1(), -(u / theta) * e))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let ModelFamily::SigmoidEmax { gamma } = *self {
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(DesignError::invalid(
                    "gamma",
                    format!("Hill coefficient must be positive, got {gamma}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SharingPattern {
    /// Common placebo effect; group-specific (maximum effect, ED50).
    SharedLocation,
    /// Common placebo effect and scale; group-specific ED50.
    SharedLocationScale,
}

impl SharingPattern {
    /// Number of shared parameters `p`.
    pub fn shared_len(self) -> usize {
        match self {
            SharingPattern::SharedLocation => 1,
            SharingPattern::SharedLocationScale => 2,
        }
    }

    /// Number of group-specific parameters `q`.
    pub fn group_len(self) -> usize {
        match self {
            SharingPattern::SharedLocation => 2,
            SharingPattern::SharedLocationScale => 1,
        }
    }

    /// Index of the ED50-type parameter inside a group block.
    pub fn ed50_index(self) -> usize {
        match self {
            SharingPattern::SharedLocation => 1,
            SharingPattern::SharedLocationScale => 0,
        }
    }
}

/// One dose-response family with its sharing pattern and a parameter guess
/// for every group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    family: ModelFamily,
    sharing: SharingPattern,
    theta_shared: Vec<f64>,
    theta_group: Vec<Vec<f64>>,
    sigma2: Vec<f64>,
    dmax: Vec<f64>,
}

impl ModelSpec {
    pub fn new(
        family: ModelFamily,
        sharing: SharingPattern,
        theta_shared: Vec<f64>,
        theta_group: Vec<Vec<f64>>,
        sigma2: Vec<f64>,
        dmax: Vec<f64>,
    ) -> Result<Self> {
        family.validate()?;
        let n = theta_group.len();
        if n == 0 {
            return Err(DesignError::invalid("theta_group", "at least one group is required"));
        }
        if theta_shared.len() != sharing.shared_len() {
            return Err(DesignError::invalid(
                "theta_shared",
                format!("expected {} values, got {}", sharing.shared_len(), theta_shared.len()),
            ));
        }
        if sigma2.len() != n || dmax.len() != n {
            return Err(DesignError::invalid(
                "groups",
                format!(
                    "{n} parameter groups but {} variances and {} dose ranges",
                    sigma2.len(),
                    dmax.len()
                ),
            ));
        }
        for (i, block) in theta_group.iter().enumerate() {
            if block.len() != sharing.group_len() {
                return Err(DesignError::invalid(
                    "theta_group",
                    format!("group {i}: expected {} values, got {}", sharing.group_len(), block.len()),
                ));
            }
            let ed50 = block[sharing.ed50_index()];
            if !(ed50 > 0.0 && ed50.is_finite()) {
                return Err(DesignError::invalid(
                    "theta_group",
                    format!("group {i}: ED50-type parameter must be positive, got {ed50}"),
                ));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(DesignError::invalid("theta_group", format!("group {i}: non-finite value")));
            }
        }
        if theta_shared.iter().any(|v| !v.is_finite()) {
            return Err(DesignError::invalid("theta_shared", "non-finite value"));
        }
        if let Some(s) = sigma2.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(DesignError::invalid("sigma2", format!("variances must be positive, got {s}")));
        }
        if let Some(d) = dmax.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
            return Err(DesignError::invalid("dmax", format!("dose ranges must be positive, got {d}")));
        }
        Ok(Self { family, sharing, theta_shared, theta_group, sigma2, dmax })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn sharing(&self) -> SharingPattern {
        self.sharing
    }

    pub fn n_groups(&self) -> usize {
        self.theta_group.len()
    }

    /// Dimension `m = p + q M` of the full parameter vector.
    pub fn n_params(&self) -> usize {
        self.sharing.shared_len() + self.sharing.group_len() * self.n_groups()
    }

    pub fn theta_shared(&self) -> &[f64] {
        &self.theta_shared
    }

    pub fn theta_group(&self, group: usize) -> &[f64] {
        &self.theta_group[group]
    }

    pub fn ed50(&self, group: usize) -> f64 {
        self.theta_group[group][self.sharing.ed50_index()]
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn dmax(&self) -> &[f64] {
        &self.dmax
    }

    /// Flattened `(theta_shared, theta_group[0], ..., theta_group[M-1])`.
    pub fn theta(&self) -> Vec<f64> {
        let mut out = self.theta_shared.clone();
        for block in &self.theta_group {
            out.extend_from_slice(block);
        }
        out
    }

    /// Rebuilds a spec of the same shape from a flattened parameter vector.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(DesignError::invalid(
                "theta",
                format!("expected {} values, got {}", self.n_params(), theta.len()),
            ));
        }
        let p = self.sharing.shared_len();
        let q = self.sharing.group_len();
        let groups = (0..self.n_groups()).map(|i| theta[p + i * q..p + (i + 1) * q].to_vec()).collect();
        Self::new(self.family, self.sharing, theta[..p].to_vec(), groups, self.sigma2.clone(), self.dmax.clone())
    }

    pub fn with_sigma2(&self, sigma2: Vec<f64>) -> Result<Self> {
        Self::new(self.family, self.sharing, self.theta_shared.clone(), self.theta_group.clone(), sigma2, self.dmax.clone())
    }

    /// Variance ratio `sigma2[0] / sigma2[1]`; only meaningful for two groups.
    pub fn variance_ratio(&self) -> f64 {
        self.sigma2[0] / self.sigma2[1]
    }

    /// Lowest-variance group; ties go to the lowest index.
    pub fn min_variance_group(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.sigma2.iter().enumerate() {
            if *s < self.sigma2[best] {
                best = i;
            }
        }
        best
    }

    /// Offset of the group block of `group` inside the full parameter vector.
    pub fn block_offset(&self, group: usize) -> usize {
        self.sharing.shared_len() + group * self.sharing.group_len()
    }

    fn check(&self, group: usize, dose: f64) -> Result<()> {
        if group >= self.n_groups() {
            return Err(DesignError::GroupIndex { group, n_groups: self.n_groups() });
        }
        let dmax = self.dmax[group];
        if !(dose >= 0.0 && dose <= dmax) {
            return Err(DesignError::DoseOutOfRange { group, dose, dmax });
        }
        Ok(())
    }

    /// Mean response of `group` at `dose`.
    pub fn eval_mean(&self, group: usize, dose: f64) -> Result<f64> {
        self.check(group, dose)?;
        let block = &self.theta_group[group];
        let ed50 = block[self.sharing.ed50_index()];
        let (f0, _) = self.family.base(dose, ed50)?;
        Ok(match self.sharing {
            SharingPattern::SharedLocation => self.theta_shared[0] + block[0] * f0,
            SharingPattern::SharedLocationScale => self.theta_shared[0] + self.theta_shared[1] * f0,
        })
    }

    /// Gradient of the group mean with respect to `(theta_shared, theta_group[group])`,
    /// without the `1 / sigma` scaling or the embedding into the full vector.
    pub fn local_gradient(&self, group: usize, dose: f64) -> Result<Vec<f64>> {
        self.check(group, dose)?;
        let block = &self.theta_group[group];
        let ed50 = block[self.sharing.ed50_index()];
        let (f0, df0) = self.family.base(dose, ed50)?;
        Ok(match self.sharing {
            SharingPattern::SharedLocation => vec![1.0, f0, block[0] * df0],
            SharingPattern::SharedLocationScale => vec![1.0, f0, self.theta_shared[1] * df0],
        })
    }

    /// Embedded gradient `h_i(d)` of length `m`: the local gradient divided by
    /// `sigma_i`, written into the shared block and the block of `group`, zeros elsewhere.
    pub fn gradient(&self, group: usize, dose: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_params()];
        self.gradient_into(group, dose, &mut out)?;
        Ok(out)
    }

    /// Same as [`ModelSpec::gradient`] but writes into `out` (length `m`).
    pub fn gradient_into(&self, group: usize, dose: f64, out: &mut [f64]) -> Result<()> {
        let local = self.local_gradient(group, dose)?;
        let scale = 1.0 / self.sigma2[group].sqrt();
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = self.sharing.shared_len();
        let q = self.sharing.group_len();
        for k in 0..p {
            out[k] = local[k] * scale;
        }
        let off = self.block_offset(group);
        for k in 0..q {
            out[off + k] = local[p + k] * scale;
        }
        Ok(())
    }

    /// Maps every group onto the unit dose range.
    ///
    /// Doses become `d / dmax_i` and ED50-type parameters `theta_i / dmax_i`.
    /// The embedded gradients satisfy `h(d) = P h_unit(d / dmax)` with `P`
    /// diagonal, carrying `1 / dmax_i` on the ED50 entries, so log determinants
    /// differ by the constant [`DoseMap::log_det_offset`] and D-efficiencies are unchanged.
    pub fn rescale_to_unit(&self) -> (ModelSpec, DoseMap) {
        let idx = self.sharing.ed50_index();
        let groups = self
            .theta_group
            .iter()
            .zip(&self.dmax)
            .map(|(block, dmax)| {
                let mut b = block.clone();
                b[idx] /= dmax;
                b
            })
            .collect();
        let unit = ModelSpec {
            family: self.family,
            sharing: self.sharing,
            theta_shared: self.theta_shared.clone(),
            theta_group: groups,
            sigma2: self.sigma2.clone(),
            dmax: vec![1.0; self.n_groups()],
        };
        (unit, DoseMap { dmax: self.dmax.clone() })
    }
}

/// Forward and backward dose maps between the original dose ranges and `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseMap {
    dmax: Vec<f64>,
}

impl DoseMap {
    pub fn to_unit(&self, group: usize, dose: f64) -> f64 {
        dose / self.dmax[group]
    }

    pub fn from_unit(&self, group: usize, t: f64) -> f64 {
        t * self.dmax[group]
    }

    pub fn dmax(&self) -> &[f64] {
        &self.dmax
    }

    /// `log det M(original) - log det M(unit)` for the same design; one ED50
    /// entry per group contributes `-2 ln dmax_i`.
    pub fn log_det_offset(&self) -> f64 {
        -2.0 * self.dmax.iter().map(|d| d.ln()).sum::<f64>()
    }
}
