//! Approximate designs, information matrices and the D / compound criteria.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DesignError, Result};
use crate::model::ModelSpec;

/// Eigenvalue ratio, after scaling to unit diagonal, below which an
/// information matrix counts as singular.
pub const SINGULARITY_RATIO: f64 = 1e-12;

/// Relative distance under which two support points are merged.
pub const DEFAULT_MERGE_TOL: f64 = 1e-9;

/// Sums further than this from one are rejected instead of renormalized.
const NORMALIZE_SLACK: f64 = 1e-6;

/// Probability measure on the dose range of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDesign {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GroupDesign {
    /// Sorts the support, merges points closer than `1e-9 * max(1, max dose)`
    /// and renormalizes weights that sum to one up to `1e-6`.
    pub fn new(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let scale = points.iter().fold(1.0f64, |a, p| a.max(p.abs()));
        Self::with_merge_tol(points, weights, DEFAULT_MERGE_TOL * scale)
    }

    /// Like [`GroupDesign::new`] with an absolute merge tolerance.
    pub fn with_merge_tol(points: Vec<f64>, weights: Vec<f64>, tol: f64) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(DesignError::invalid(
                "weights",
                format!("{} points but {} weights", points.len(), weights.len()),
            ));
        }
        if points.is_empty() {
            return Err(DesignError::invalid("points", "a group design needs at least one point"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(DesignError::invalid("points", "non-finite dose"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(DesignError::invalid("weights", "weights must be positive"));
        }
        let mut pairs: Vec<(f64, f64)> = points.into_iter().zip(weights).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (p, w) in pairs {
            match merged.last_mut() {
                Some(last) if p - last.0 <= tol => last.1 += w,
                _ => merged.push((p, w)),
            }
        }
        let total: f64 = merged.iter().map(|x| x.1).sum();
        if (total - 1.0).abs() > NORMALIZE_SLACK {
            return Err(DesignError::invalid("weights", format!("weights sum to {total}, expected 1")));
        }
        let (points, weights) = merged.into_iter().map(|(p, w)| (p, w / total)).unzip();
        Ok(Self { points, weights })
    }

    /// One-point design.
    pub fn dirac(dose: f64) -> Self {
        Self { points: vec![dose], weights: vec![1.0] }
    }

    /// Equal weights on the given (distinct) points.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let n = points.len();
        Self::new(points, vec![w; n])
    }

    fn empty() -> Self {
        Self { points: Vec::new(), weights: Vec::new() }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mass at dose zero.
    pub fn placebo_weight(&self) -> f64 {
        self.points.iter().zip(&self.weights).filter(|(p, _)| **p == 0.0).map(|(_, w)| *w).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Design `(xi_1, ..., xi_M, mu)`: one measure per group plus the group allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    groups: Vec<GroupDesign>,
    lambda: Vec<f64>,
}

impl Design {
    /// Groups with zero allocation must carry an empty support; pass `None` for those.
    pub fn new(groups: Vec<Option<GroupDesign>>, lambda: Vec<f64>) -> Result<Self> {
        if groups.len() != lambda.len() {
            return Err(DesignError::invalid(
                "lambda",
                format!("{} groups but {} allocations", groups.len(), lambda.len()),
            ));
        }
        if groups.is_empty() {
            return Err(DesignError::invalid("groups", "a design needs at least one group"));
        }
        if lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(DesignError::invalid("lambda", "allocations must be nonnegative"));
        }
        let total: f64 = lambda.iter().sum();
        if (total - 1.0).abs() > NORMALIZE_SLACK {
            return Err(DesignError::invalid("lambda", format!("allocations sum to {total}, expected 1")));
        }
        let mut out = Vec::with_capacity(groups.len());
        for (i, (g, l)) in groups.into_iter().zip(&lambda).enumerate() {
            match (g, *l > 0.0) {
                (Some(g), true) => out.push(g),
                (None, false) => out.push(GroupDesign::empty()),
                (Some(_), false) => {
                    return Err(DesignError::invalid(
                        "groups",
                        format!("group {i} has zero allocation but a nonempty support"),
                    ))
                }
                (None, true) => {
                    return Err(DesignError::invalid(
                        "groups",
                        format!("group {i} has positive allocation but no support"),
                    ))
                }
            }
        }
        let lambda = lambda.iter().map(|l| l / total).collect();
        Ok(Self { groups: out, lambda })
    }

    /// Every group allocated.
    pub fn from_groups(groups: Vec<GroupDesign>, lambda: Vec<f64>) -> Result<Self> {
        Self::new(groups.into_iter().map(Some).collect(), lambda)
    }

    /// Builds a design from joint masses `w = lambda_i * xi_ij` over `(group, dose)` pairs.
    pub fn from_joint(n_groups: usize, entries: &[(usize, f64, f64)]) -> Result<Self> {
        let mut pts = vec![Vec::new(); n_groups];
        let mut ws = vec![Vec::new(); n_groups];
        for &(g, d, w) in entries {
            if g >= n_groups {
                return Err(DesignError::GroupIndex { group: g, n_groups });
            }
            if w > 0.0 {
                pts[g].push(d);
                ws[g].push(w);
            }
        }
        let total: f64 = ws.iter().flatten().sum();
        if !(total > 0.0) {
            return Err(DesignError::invalid("weights", "design carries no mass"));
        }
        let mut groups = Vec::with_capacity(n_groups);
        let mut lambda = Vec::with_capacity(n_groups);
        for (p, w) in pts.into_iter().zip(ws) {
            let l: f64 = w.iter().sum();
            if l > 0.0 {
                let w = w.iter().map(|x| x / l).collect();
                groups.push(Some(GroupDesign::new(p, w)?));
            } else {
                groups.push(None);
            }
            lambda.push(l / total);
        }
        Self::new(groups, lambda)
    }

    pub fn groups(&self) -> &[GroupDesign] {
        &self.groups
    }

    pub fn group(&self, i: usize) -> &GroupDesign {
        &self.groups[i]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total number of support points over all groups.
    pub fn support_size(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    /// Joint masses `(group, dose, lambda_i * xi_ij)`.
    pub fn joint(&self) -> Vec<(usize, f64, f64)> {
        let mut out = Vec::with_capacity(self.support_size());
        for (i, (g, l)) in self.groups.iter().zip(&self.lambda).enumerate() {
            for (d, w) in g.iter() {
                out.push((i, d, l * w));
            }
        }
        out
    }

    /// Applies a per-group dose map to every support point.
    pub fn map_doses(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let groups = self
            .groups
            .iter()
            .enumerate()
            .map(|(i, g)| {
                if g.is_empty() {
                    Ok(None)
                } else {
                    let pts = g.points.iter().map(|d| f(i, *d)).collect();
                    GroupDesign::new(pts, g.weights.clone()).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(groups, self.lambda.clone())
    }

    /// Checks group count and dose ranges against a model.
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        if self.n_groups() != spec.n_groups() {
            return Err(DesignError::invalid(
                "groups",
                format!("design has {} groups, model has {}", self.n_groups(), spec.n_groups()),
            ));
        }
        for (i, g) in self.groups.iter().enumerate() {
            let dmax = spec.dmax()[i];
            if let Some(d) = g.points.iter().find(|d| !(**d >= 0.0 && **d <= dmax)) {
                return Err(DesignError::DoseOutOfRange { group: i, dose: *d, dmax });
            }
        }
        Ok(())
    }
}

/// Symmetric information matrix with its log determinant.
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    matrix: DMatrix<f64>,
    logdet: f64,
}

impl InfoMatrix {
    /// Symmetrizes `matrix` and computes its log determinant from the eigenvalues;
    /// `-inf` when the smallest/largest eigenvalue ratio of the unit-diagonal
    /// scaling is below [`SINGULARITY_RATIO`].
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let logdet = log_det_symmetric(&sym);
        Self { matrix: sym, logdet }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn is_singular(&self) -> bool {
        self.logdet == f64::NEG_INFINITY
    }

    /// Solves `M x = b` through a Cholesky factorization.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if self.is_singular() {
            return Err(DesignError::SingularInformation);
        }
        let chol = self.matrix.clone().cholesky().ok_or(DesignError::SingularInformation)?;
        Ok(chol.solve(b))
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }
}

fn log_det_symmetric(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return f64::NEG_INFINITY;
    }
    // unit-diagonal scaling makes the singularity test independent of parameter units
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (diag[i] * diag[j]).sqrt());
    let eig = SymmetricEigen::new(scaled).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min / max < SINGULARITY_RATIO {
        return f64::NEG_INFINITY;
    }
    eig.iter().map(|v| v.ln()).sum::<f64>() + diag.iter().map(|d| d.ln()).sum::<f64>()
}

/// Per-group matrix `M^(i)(xi_i) = sum_j xi_ij h_i(d_j) h_i(d_j)^T` (without `lambda_i`).
pub fn group_information(spec: &ModelSpec, group: usize, design: &GroupDesign) -> Result<DMatrix<f64>> {
    let m = spec.n_params();
    let mut out = DMatrix::zeros(m, m);
    let mut h = vec![0.0; m];
    for (d, w) in design.iter() {
        spec.gradient_into(group, d, &mut h)?;
        let hv = DVector::from_column_slice(&h);
        out.ger(w, &hv, &hv, 1.0);
    }
    Ok(out)
}

/// `M(xi) = sum_i lambda_i M^(i)(xi_i)`.
pub fn information_matrix(spec: &ModelSpec, design: &Design) -> Result<InfoMatrix> {
    design.validate_for(spec)?;
    let m = spec.n_params();
    let mut total = DMatrix::zeros(m, m);
    for (i, (g, l)) in design.groups().iter().zip(design.lambda()).enumerate() {
        if *l > 0.0 {
            total += group_information(spec, i, g)? * *l;
        }
    }
    Ok(InfoMatrix::from_matrix(total))
}

/// D-criterion `log det M`, `-inf` for singular matrices.
pub fn log_det_criterion(info: &InfoMatrix) -> f64 {
    info.logdet()
}

/// `(det M(xi) / det M(reference))^(1/m)` under `spec`; zero when `design` is singular.
pub fn d_efficiency(spec: &ModelSpec, design: &Design, reference: &Design) -> Result<f64> {
    let reference_logdet = information_matrix(spec, reference)?.logdet();
    if reference_logdet == f64::NEG_INFINITY {
        return Err(DesignError::SingularInformation);
    }
    let ld = information_matrix(spec, design)?.logdet();
    Ok(efficiency_from_logdet(ld, reference_logdet, spec.n_params()))
}

pub(crate) fn efficiency_from_logdet(logdet: f64, reference_logdet: f64, m: usize) -> f64 {
    if logdet == f64::NEG_INFINITY {
        0.0
    } else {
        ((logdet - reference_logdet) / m as f64).exp()
    }
}

/// One model of a compound criterion: the model, its prior weight and the
/// locally optimal reference design it is measured against.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub id: String,
    pub spec: ModelSpec,
    pub prior: f64,
    reference: Design,
    reference_logdet: f64,
}

impl Candidate {
    pub fn new(id: impl Into<String>, spec: ModelSpec, prior: f64, reference: Design) -> Result<Self> {
        let id = id.into();
        if !(prior >= 0.0 && prior.is_finite()) {
            return Err(DesignError::invalid("prior", format!("candidate `{id}`: prior must be nonnegative")));
        }
        let reference_logdet = information_matrix(&spec, &reference)?.logdet();
        if reference_logdet == f64::NEG_INFINITY {
            return Err(DesignError::SingularReference(id));
        }
        Ok(Self { id, spec, prior, reference, reference_logdet })
    }

    pub fn reference(&self) -> &Design {
        &self.reference
    }

    pub fn reference_logdet(&self) -> f64 {
        self.reference_logdet
    }

    /// D-efficiency of `design` relative to this candidate's reference.
    pub fn efficiency(&self, design: &Design) -> Result<f64> {
        let ld = information_matrix(&self.spec, design)?.logdet();
        Ok(efficiency_from_logdet(ld, self.reference_logdet, self.spec.n_params()))
    }

    /// Same model and reference with another prior weight.
    pub fn with_prior(&self, prior: f64) -> Self {
        Self { prior, ..self.clone() }
    }
}

/// Checks priors sum to one and all candidates share the design spaces.
pub fn validate_candidates(candidates: &[Candidate]) -> Result<()> {
    let first = candidates.first().ok_or_else(|| DesignError::invalid("candidates", "must be non-empty"))?;
    let total: f64 = candidates.iter().map(|c| c.prior).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(DesignError::invalid("prior", format!("priors sum to {total}, expected 1")));
    }
    for c in candidates {
        if c.spec.dmax() != first.spec.dmax() {
            return Err(DesignError::invalid(
                "candidates",
                format!("candidate `{}` uses different dose ranges", c.id),
            ));
        }
    }
    Ok(())
}

/// `g_c(xi) = sum_k prior_k Eff_k(xi)`.
pub fn compound_criterion(candidates: &[Candidate], design: &Design) -> Result<f64> {
    validate_candidates(candidates)?;
    candidates
        .iter()
        .filter(|c| c.prior > 0.0)
        .map(|c| c.efficiency(design).map(|e| c.prior * e))
        .sum()
}
