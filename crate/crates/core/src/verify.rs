//! Equivalence-theorem checks: sensitivity functions, certificates and
//! sensitivity-curve samples.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::{efficiency_from_logdet, information_matrix, validate_candidates, Candidate, Design};
use crate::error::{DesignError, Result};
use crate::model::ModelSpec;

pub const DEFAULT_CERTIFY_TOL: f64 = 1e-6;
pub const DEFAULT_CERTIFY_GRID: usize = 2001;
const REFINE_REL_TOL: f64 = 1e-10;
const MAX_REFINED_PEAKS: usize = 64;

/// `h^T M^{-1} h` for one model, backed by a Cholesky factor of `M`.
#[derive(Debug, Clone)]
pub struct KappaEvaluator {
    spec: ModelSpec,
    /// Factor of `S M S` with `S = diag(M)^{-1/2}`.
    chol: Cholesky<f64, Dyn>,
    scale: DVector<f64>,
    logdet: f64,
}

impl KappaEvaluator {
    pub fn new(spec: &ModelSpec, design: &Design) -> Result<Self> {
        let info = information_matrix(spec, design)?;
        Self::from_matrix(spec, info.matrix().clone(), info.logdet())
    }

    pub(crate) fn from_matrix(spec: &ModelSpec, matrix: DMatrix<f64>, logdet: f64) -> Result<Self> {
        if logdet == f64::NEG_INFINITY {
            return Err(DesignError::SingularInformation);
        }
        let n = matrix.nrows();
        let scale = DVector::from_fn(n, |i, _| 1.0 / matrix[(i, i)].sqrt());
        let scaled = DMatrix::from_fn(n, n, |i, j| matrix[(i, j)] * scale[i] * scale[j]);
        let chol = scaled.cholesky().ok_or(DesignError::SingularInformation)?;
        Ok(Self { spec: spec.clone(), chol, scale, logdet })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    pub fn kappa(&self, group: usize, dose: f64) -> Result<f64> {
        let h = DVector::from_vec(self.spec.gradient(group, dose)?);
        Ok(self.quad(&h))
    }

    pub(crate) fn quad(&self, h: &DVector<f64>) -> f64 {
        let y = h.component_mul(&self.scale);
        let x = self.chol.solve(&y);
        y.dot(&x)
    }
}

/// `kappa_i(d) = h_i(d)^T M^{-1}(xi) h_i(d)`.
pub fn kappa(spec: &ModelSpec, design: &Design, group: usize, dose: f64) -> Result<f64> {
    KappaEvaluator::new(spec, design)?.kappa(group, dose)
}

/// Directional-derivative function checked by the equivalence theorem.
pub trait Sensitivity: Sync {
    fn value(&self, group: usize, dose: f64) -> Result<f64>;
    /// Value the sensitivity attains on the support of an optimal design.
    fn bound(&self) -> f64;
    fn n_groups(&self) -> usize;
    fn dmax(&self, group: usize) -> f64;
}

/// Sensitivity of the D-criterion for one model; bound `m`.
#[derive(Debug, Clone)]
pub struct DSensitivity {
    eval: KappaEvaluator,
}

impl DSensitivity {
    pub fn new(spec: &ModelSpec, design: &Design) -> Result<Self> {
        Ok(Self { eval: KappaEvaluator::new(spec, design)? })
    }
}

impl Sensitivity for DSensitivity {
    fn value(&self, group: usize, dose: f64) -> Result<f64> {
        self.eval.kappa(group, dose)
    }

    fn bound(&self) -> f64 {
        self.eval.spec.n_params() as f64
    }

    fn n_groups(&self) -> usize {
        self.eval.spec.n_groups()
    }

    fn dmax(&self, group: usize) -> f64 {
        self.eval.spec.dmax()[group]
    }
}

/// Normalized sensitivity of the compound criterion:
/// `psi(i, d) = sum_k c_k kappa_k(i, d)` with
/// `c_k = prior_k Eff_k / m_k / sum_l prior_l Eff_l`; bound one.
#[derive(Debug, Clone)]
pub struct CompoundSensitivity {
    terms: Vec<(KappaEvaluator, f64)>,
}

impl CompoundSensitivity {
    pub fn new(candidates: &[Candidate], design: &Design) -> Result<Self> {
        validate_candidates(candidates)?;
        let mut terms = Vec::new();
        let mut total = 0.0;
        for c in candidates.iter().filter(|c| c.prior > 0.0) {
            let eval = KappaEvaluator::new(&c.spec, design)?;
            let m = c.spec.n_params();
            let eff = efficiency_from_logdet(eval.logdet, c.reference_logdet(), m);
            let weight = c.prior * eff;
            total += weight;
            terms.push((eval, weight / m as f64));
        }
        for t in &mut terms {
            t.1 /= total;
        }
        Ok(Self { terms })
    }
}

impl Sensitivity for CompoundSensitivity {
    fn value(&self, group: usize, dose: f64) -> Result<f64> {
        let mut s = 0.0;
        for (eval, c) in &self.terms {
            s += c * eval.kappa(group, dose)?;
        }
        Ok(s)
    }

    fn bound(&self) -> f64 {
        1.0
    }

    fn n_groups(&self) -> usize {
        self.terms[0].0.spec.n_groups()
    }

    fn dmax(&self, group: usize) -> f64 {
        self.terms[0].0.spec.dmax()[group]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCertificate {
    pub max_kappa: f64,
    pub argmax_dose: f64,
    pub support_kappas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCertificate {
    pub pass: bool,
    /// Bound the sensitivity must respect: `m` for D, one for the compound criterion.
    pub m: f64,
    pub per_group: Vec<GroupCertificate>,
    pub tol: f64,
    pub grid_density: usize,
    pub refinement_iters: usize,
}

impl OptimalityCertificate {
    /// Largest sensitivity over all groups relative to the bound.
    pub fn max_ratio(&self) -> f64 {
        self.per_group.iter().map(|g| g.max_kappa).fold(f64::NEG_INFINITY, f64::max) / self.m
    }

    /// Largest deviation from the bound at a support point, relative to the bound.
    pub fn support_gap(&self) -> f64 {
        self.per_group
            .iter()
            .flat_map(|g| g.support_kappas.iter())
            .map(|k| (k - self.m).abs())
            .fold(0.0, f64::max)
            / self.m
    }
}

/// Golden-section maximization on `[a, b]`; returns `(x, f(x), iterations)`.
pub(crate) fn golden_max(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let mut iters = 0;
    while (b - a).abs() > tol && iters < 200 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
        iters += 1;
    }
    Ok(if fc >= fd { (c, fc, iters) } else { (d, fd, iters) })
}

/// Scan points for `[0, dmax]`: a uniform grid, a log-spaced grid reaching
/// down to `1e-6 * dmax` and any extra points, sorted and deduplicated.
pub(crate) fn scan_grid(dmax: f64, density: usize, extra: &[f64]) -> Vec<f64> {
    let n = density.max(2);
    let mut pts: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64 * dmax).collect();
    let n_log = (n / 2).max(2);
    let lo = (1e-6f64).ln();
    for k in 0..n_log {
        pts.push(dmax * (lo * (1.0 - k as f64 / (n_log - 1) as f64)).exp());
    }
    pts.extend(extra.iter().copied().filter(|x| *x >= 0.0 && *x <= dmax));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Maximum of `f` over `[0, dmax]` by grid scan plus golden-section refinement
/// of the largest local maxima. Returns `(argmax, max, refinement iterations)`.
pub(crate) fn maximize_on_interval(
    mut f: impl FnMut(f64) -> Result<f64>,
    dmax: f64,
    density: usize,
    extra: &[f64],
) -> Result<(f64, f64, usize)> {
    let grid = scan_grid(dmax, density, extra);
    let vals = grid.iter().map(|x| f(*x)).collect::<Result<Vec<_>>>()?;
    let n = grid.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&k| (k == 0 || vals[k] >= vals[k - 1]) && (k + 1 == n || vals[k] >= vals[k + 1]))
        .collect();
    peaks.sort_by(|a, b| vals[*b].total_cmp(&vals[*a]).then(a.cmp(b)));
    peaks.truncate(MAX_REFINED_PEAKS);
    let (mut best_x, mut best_v) = (grid[peaks[0]], vals[peaks[0]]);
    let mut total_iters = 0;
    for &k in &peaks {
        let a = grid[k.saturating_sub(1)];
        let b = grid[(k + 1).min(n - 1)];
        if b > a {
            let (x, v, it) = golden_max(&mut f, a, b, REFINE_REL_TOL * dmax.max(f64::MIN_POSITIVE))?;
            total_iters += it;
            if v > best_v {
                best_x = x;
                best_v = v;
            }
        }
        if vals[k] > best_v {
            best_x = grid[k];
            best_v = vals[k];
        }
    }
    Ok((best_x, best_v, total_iters))
}

/// Scans every group's dose range and applies the pass rule
/// `max sensitivity <= bound (1 + tol)` and `|sensitivity - bound| <= bound tol`
/// at every support point.
pub fn certify_with(sens: &dyn Sensitivity, design: &Design, tol: f64, grid_density: usize) -> Result<OptimalityCertificate> {
    let bound = sens.bound();
    let mut per_group = Vec::with_capacity(sens.n_groups());
    let mut pass = true;
    let mut refinement_iters = 0;
    for i in 0..sens.n_groups() {
        let g = design.group(i);
        let (argmax, max, iters) = maximize_on_interval(|d| sens.value(i, d), sens.dmax(i), grid_density, g.points())?;
        refinement_iters += iters;
        let support_kappas = g.points().iter().map(|d| sens.value(i, *d)).collect::<Result<Vec<_>>>()?;
        if max > bound * (1.0 + tol) {
            pass = false;
        }
        if design.lambda()[i] > 0.0 && support_kappas.iter().any(|k| (k - bound).abs() > bound * tol) {
            pass = false;
        }
        per_group.push(GroupCertificate { max_kappa: max, argmax_dose: argmax, support_kappas });
    }
    Ok(OptimalityCertificate { pass, m: bound, per_group, tol, grid_density, refinement_iters })
}

/// Equivalence-theorem certificate for local D-optimality.
pub fn certify(spec: &ModelSpec, design: &Design, tol: f64, grid_density: usize) -> Result<OptimalityCertificate> {
    design.validate_for(spec)?;
    certify_with(&DSensitivity::new(spec, design)?, design, tol, grid_density)
}

/// Certificate for the compound criterion (bound one).
pub fn certify_compound(
    candidates: &[Candidate],
    design: &Design,
    tol: f64,
    grid_density: usize,
) -> Result<OptimalityCertificate> {
    certify_with(&CompoundSensitivity::new(candidates, design)?, design, tol, grid_density)
}

/// One sample of a sensitivity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaSample {
    pub group: usize,
    pub dose: f64,
    pub kappa: f64,
    pub m: f64,
}

/// Sensitivity on a uniform grid of `points` doses per group.
pub fn kappa_curve(sens: &dyn Sensitivity, points: usize) -> Result<Vec<KappaSample>> {
    let n = points.max(2);
    let mut out = Vec::with_capacity(n * sens.n_groups());
    for i in 0..sens.n_groups() {
        let dmax = sens.dmax(i);
        for k in 0..n {
            let dose = k as f64 / (n - 1) as f64 * dmax;
            out.push(KappaSample { group: i, dose, kappa: sens.value(i, dose)?, m: sens.bound() });
        }
    }
    Ok(out)
}

/// `sum_i lambda_i sum_j xi_ij kappa_i(d_ij)`, equal to `m` for every nonsingular design.
pub fn trace_identity(spec: &ModelSpec, design: &Design) -> Result<f64> {
    let eval = KappaEvaluator::new(spec, design)?;
    design.joint().iter().map(|&(g, d, w)| eval.kappa(g, d).map(|k| w * k)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{min_supported_case, min_supported_design, CaseTag};
    use crate::model::{ModelFamily, SharingPattern};

    fn emax_ls(tb: (f64, f64)) -> ModelSpec {
        ModelSpec::new(
            ModelFamily::Emax,
            SharingPattern::SharedLocationScale,
            vec![0.0, 1.0],
            vec![vec![tb.0], vec![tb.1]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v, _) = golden_max(|x| Ok(-(x - 0.3) * (x - 0.3)), 0.0, 1.0, 1e-12).unwrap();
        assert!((x - 0.3).abs() < 1e-9);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn case_a_certifies_inside_region() {
        let spec = emax_ls((0.2, 0.5));
        let case = min_supported_case(&spec).unwrap();
        let d = min_supported_design(&spec, &case, CaseTag::A).unwrap();
        let cert = certify(&spec, &d, 1e-8, DEFAULT_CERTIFY_GRID).unwrap();
        assert!(cert.pass, "{cert:?}");
        assert_eq!(cert.m, 4.0);
    }

    #[test]
    fn case_a_fails_outside_region() {
        let spec = emax_ls((0.2, 0.25));
        let case = min_supported_case(&spec).unwrap();
        let d = min_supported_design(&spec, &case, CaseTag::A).unwrap();
        let cert = certify(&spec, &d, 1e-6, DEFAULT_CERTIFY_GRID).unwrap();
        assert!(!cert.pass);
        let dense = (0..10_000).map(|k| kappa(&spec, &d, 1, k as f64 / 9999.0).unwrap()).fold(0.0, f64::max);
        assert!(dense > 4.0);
    }

    #[test]
    fn trace_identity_on_arbitrary_design() {
        let spec = emax_ls((0.2, 0.5));
        let d = Design::from_groups(
            vec![
                crate::design::GroupDesign::new(vec![0.0, 0.1, 0.7, 1.0], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
                crate::design::GroupDesign::new(vec![0.3, 0.9], vec![0.5, 0.5]).unwrap(),
            ],
            vec![0.6, 0.4],
        )
        .unwrap();
        assert!((trace_identity(&spec, &d).unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn singular_design_is_an_error() {
        let spec = emax_ls((0.2, 0.5));
        let d = Design::from_groups(
            vec![crate::design::GroupDesign::dirac(0.0), crate::design::GroupDesign::dirac(0.0)],
            vec![0.5, 0.5],
        )
        .unwrap();
        assert_eq!(kappa(&spec, &d, 0, 0.5), Err(DesignError::SingularInformation));
    }
}
