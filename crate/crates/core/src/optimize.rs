//! Numerical maximization of the D and compound criteria by vertex exchange
//! with Newton reweighting on the joint simplex over `(group, dose)` pairs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::{
    compose_shared_location, emax_global_conditions, min_supported_optimal, placebo_shift, shared_location_optimal,
    support_bound, MinSupportedCase,
};
use crate::design::{compound_criterion, information_matrix, validate_candidates, Candidate, Design, GroupDesign};
use crate::error::{DesignError, Result};
use crate::model::{ModelFamily, ModelSpec, SharingPattern};
use crate::verify::{certify, certify_compound, golden_max, maximize_on_interval, OptimalityCertificate};

/// Tolerance of the certificate attached to every result.
pub const RESULT_CERTIFY_TOL: f64 = 1e-4;
const DROP_WEIGHT: f64 = 1e-6;
const NEWTON_ITERS: usize = 100;
const CLOSED_FORM_CERTIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSettings {
    pub restarts: usize,
    pub grid_density: usize,
    pub exchange_iters: usize,
    pub weight_iters: usize,
    pub collapse_tol: f64,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            restarts: 20,
            grid_density: 201,
            exchange_iters: 200,
            weight_iters: 500,
            collapse_tol: 1e-4,
            convergence_tol: 1e-9,
            seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("restarts", self.restarts as f64),
            ("grid_density", self.grid_density as f64),
            ("exchange_iters", self.exchange_iters as f64),
            ("weight_iters", self.weight_iters as f64),
            ("collapse_tol", self.collapse_tol),
            ("convergence_tol", self.convergence_tol),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DesignError::invalid(field, "must be positive"));
            }
        }
        if self.grid_density < 2 {
            return Err(DesignError::invalid("grid_density", "at least two grid points are required"));
        }
        Ok(())
    }
}

/// What is being maximized.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `log det M` for one model.
    LocallyD(ModelSpec),
    /// Prior-weighted mean of D-efficiencies.
    Compound(Vec<Candidate>),
}

impl Objective {
    pub fn evaluate(&self, design: &Design) -> Result<f64> {
        match self {
            Objective::LocallyD(spec) => Ok(information_matrix(spec, design)?.logdet()),
            Objective::Compound(c) => compound_criterion(c, design),
        }
    }

    pub fn certify(&self, design: &Design, tol: f64, grid_density: usize) -> Result<OptimalityCertificate> {
        match self {
            Objective::LocallyD(spec) => certify(spec, design, tol, grid_density),
            Objective::Compound(c) => certify_compound(c, design, tol, grid_density),
        }
    }

    fn first_spec(&self) -> &ModelSpec {
        match self {
            Objective::LocallyD(spec) => spec,
            Objective::Compound(c) => &c[0].spec,
        }
    }
}

/// How a design was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Shared-location formula with analytic interior points.
    ClosedForm,
    /// Shared-location composition of numerically optimized single-group designs.
    Composed,
    /// Minimally supported design confirmed optimal.
    MinimallySupported,
    /// Vertex-exchange optimizer.
    Numerical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub design: Design,
    pub criterion: f64,
    pub certificate: OptimalityCertificate,
    /// Criterion after each exchange iteration of the winning restart.
    pub trace: Vec<f64>,
    /// Whether the certificate passed at [`RESULT_CERTIFY_TOL`].
    pub converged: bool,
    pub method: Method,
    pub case: Option<MinSupportedCase>,
    /// Final criterion of every restart, in restart order (`-inf` if singular).
    pub restart_criteria: Vec<f64>,
}

struct Term {
    spec: ModelSpec,
    prior: f64,
    ref_logdet: f64,
    m: f64,
}

/// Internal form of an objective; the compound value is `sum prior_k Eff_k`,
/// the D value `log det`.
struct Problem {
    terms: Vec<Term>,
    log_mode: bool,
    dmax: Vec<f64>,
    q: usize,
    m_max: usize,
}

struct State {
    chols: Vec<Cholesky<f64, Dyn>>,
    logdets: Vec<f64>,
    phi: f64,
}

#[derive(Clone)]
struct Support {
    pts: Vec<(usize, f64)>,
    w: Vec<f64>,
    /// `grads[j][k]`: gradient of point `j` under term `k`.
    grads: Vec<Vec<DVector<f64>>>,
}

impl Support {
    fn len(&self) -> usize {
        self.pts.len()
    }

    fn remove(&mut self, j: usize) {
        self.pts.remove(j);
        self.w.remove(j);
        self.grads.remove(j);
    }

    fn normalize(&mut self) {
        let s: f64 = self.w.iter().sum();
        self.w.iter_mut().for_each(|w| *w /= s);
    }

    fn prune(&mut self, below: f64) {
        let mut j = 0;
        while j < self.len() {
            if self.w[j] <= below {
                self.remove(j);
            } else {
                j += 1;
            }
        }
        self.normalize();
    }

    fn entries(&self) -> Vec<(usize, f64, f64)> {
        self.pts.iter().zip(&self.w).map(|(&(g, d), &w)| (g, d, w)).collect()
    }
}

impl Problem {
    fn new(objective: &Objective) -> Result<Self> {
        let (terms, log_mode) = match objective {
            Objective::LocallyD(spec) => (
                vec![Term { spec: spec.clone(), prior: 1.0, ref_logdet: 0.0, m: spec.n_params() as f64 }],
                true,
            ),
            Objective::Compound(cands) => {
                validate_candidates(cands)?;
                let terms = cands
                    .iter()
                    .filter(|c| c.prior > 0.0)
                    .map(|c| Term {
                        spec: c.spec.clone(),
                        prior: c.prior,
                        ref_logdet: c.reference_logdet(),
                        m: c.spec.n_params() as f64,
                    })
                    .collect();
                (terms, false)
            }
        };
        let first = &objective.first_spec();
        let q = terms.iter().map(|t: &Term| t.spec.sharing().group_len()).max().unwrap_or(1);
        let m_max = terms.iter().map(|t| t.spec.n_params()).max().unwrap_or(1);
        Ok(Self { terms, log_mode, dmax: first.dmax().to_vec(), q, m_max })
    }

    fn n_groups(&self) -> usize {
        self.dmax.len()
    }

    fn grads(&self, g: usize, d: f64) -> Result<Vec<DVector<f64>>> {
        self.terms.iter().map(|t| t.spec.gradient(g, d).map(DVector::from_vec)).collect()
    }

    fn support(&self, pts: Vec<(usize, f64)>, w: Vec<f64>) -> Result<Support> {
        let grads = pts.iter().map(|&(g, d)| self.grads(g, d)).collect::<Result<Vec<_>>>()?;
        Ok(Support { pts, w, grads })
    }

    fn state_with(&self, grads: &[Vec<DVector<f64>>], w: &[f64]) -> Option<State> {
        let mut chols = Vec::with_capacity(self.terms.len());
        let mut logdets = Vec::with_capacity(self.terms.len());
        for (k, t) in self.terms.iter().enumerate() {
            let m = t.spec.n_params();
            let mut mat = DMatrix::zeros(m, m);
            for (gj, wj) in grads.iter().zip(w) {
                if *wj > 0.0 {
                    mat.ger(*wj, &gj[k], &gj[k], 1.0);
                }
            }
            let chol = mat.cholesky()?;
            let l = chol.l_dirty();
            let diag = l.diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
            if !(lo > 0.0) || (lo / hi).powi(2) < 1e-15 {
                return None;
            }
            logdets.push(2.0 * diag.iter().map(|v| v.ln()).sum::<f64>());
            chols.push(chol);
        }
        let phi = if self.log_mode {
            logdets[0]
        } else {
            self.terms.iter().zip(&logdets).map(|(t, ld)| t.prior * ((ld - t.ref_logdet) / t.m).exp()).sum()
        };
        Some(State { chols, logdets, phi })
    }

    fn state(&self, sup: &Support) -> Option<State> {
        self.state_with(&sup.grads, &sup.w)
    }

    fn phi(&self, sup: &Support) -> f64 {
        self.state(sup).map_or(f64::NEG_INFINITY, |s| s.phi)
    }

    /// Coefficients `c_k` with `psi = sum_k c_k kappa_k` and `sum_j w_j psi_j = 1`.
    fn coefs(&self, st: &State) -> Vec<f64> {
        if self.log_mode {
            return vec![1.0 / self.terms[0].m];
        }
        let raw: Vec<f64> = self
            .terms
            .iter()
            .zip(&st.logdets)
            .map(|(t, ld)| t.prior * ((ld - t.ref_logdet) / t.m).exp() / t.m)
            .collect();
        let total: f64 = self.terms.iter().zip(&raw).map(|(t, r)| r * t.m).sum();
        raw.into_iter().map(|r| r / total).collect()
    }

    fn psi_grads(&self, st: &State, coefs: &[f64], grads: &[DVector<f64>]) -> f64 {
        grads.iter().zip(&st.chols).zip(coefs).map(|((h, c), ck)| ck * h.dot(&c.solve(h))).sum()
    }

    fn psi_at(&self, st: &State, coefs: &[f64], g: usize, d: f64) -> Result<f64> {
        Ok(self.psi_grads(st, coefs, &self.grads(g, d)?))
    }

    /// Gradient and Hessian of the objective with respect to the joint weights.
    fn derivatives(&self, sup: &Support, st: &State) -> (DVector<f64>, DMatrix<f64>) {
        let n = sup.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for (k, t) in self.terms.iter().enumerate() {
            let m = t.spec.n_params();
            let g = DMatrix::from_fn(m, n, |r, c| sup.grads[c][k][r]);
            let x = st.chols[k].solve(&g);
            let a = g.transpose() * x;
            if self.log_mode {
                for i in 0..n {
                    grad[i] += a[(i, i)];
                    for j in 0..n {
                        hess[(i, j)] -= a[(i, j)] * a[(i, j)];
                    }
                }
            } else {
                let s = t.prior * ((st.logdets[k] - t.ref_logdet) / t.m).exp();
                for i in 0..n {
                    grad[i] += s * a[(i, i)] / t.m;
                    for j in 0..n {
                        hess[(i, j)] += s * (a[(i, i)] * a[(j, j)] / (t.m * t.m) - a[(i, j)] * a[(i, j)] / t.m);
                    }
                }
            }
        }
        (grad, hess)
    }

    /// Multiplicative sweeps `w <- w psi` while they increase the objective.
    fn multiplicative(&self, sup: &mut Support, sweeps: usize) {
        let Some(mut st) = self.state(sup) else { return };
        for _ in 0..sweeps {
            let coefs = self.coefs(&st);
            let psi: Vec<f64> = sup.grads.iter().map(|g| self.psi_grads(&st, &coefs, g)).collect();
            let spread = psi.iter().fold(0.0f64, |a, p| a.max((p - 1.0).abs()));
            if spread < 1e-3 {
                break;
            }
            let old = sup.w.clone();
            for (w, p) in sup.w.iter_mut().zip(&psi) {
                *w *= p;
            }
            sup.normalize();
            match self.state(sup) {
                Some(next) if next.phi >= st.phi => st = next,
                _ => {
                    sup.w = old;
                    break;
                }
            }
        }
    }

    /// Damped Newton on the simplex with an active-set ratio test. Weights that
    /// reach zero are removed.
    fn newton(&self, sup: &mut Support, max_iter: usize) -> f64 {
        let Some(mut st) = self.state(sup) else { return f64::NEG_INFINITY };
        for _ in 0..max_iter {
            let n = sup.len();
            if n <= 1 {
                break;
            }
            let (grad, hess) = self.derivatives(sup, &st);
            let gbar: f64 = grad.iter().zip(&sup.w).map(|(g, w)| g * w).sum();
            let resid = grad.iter().fold(0.0f64, |a, g| a.max((g - gbar).abs()));
            if resid <= 1e-13 * gbar.abs() {
                break;
            }
            let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
            for i in 0..n {
                kkt[(i, i)] -= 1e-10 * scale;
                kkt[(i, n)] = 1.0;
                kkt[(n, i)] = 1.0;
            }
            let mut rhs = DVector::zeros(n + 1);
            for i in 0..n {
                rhs[i] = -grad[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { break };
            let delta: Vec<f64> = sol.iter().take(n).copied().collect();
            let mut alpha_max = f64::INFINITY;
            let mut blocking = None;
            for (j, (dj, wj)) in delta.iter().zip(&sup.w).enumerate() {
                if *dj < 0.0 {
                    let a = wj / -dj;
                    if a < alpha_max {
                        alpha_max = a;
                        blocking = Some(j);
                    }
                }
            }
            let mut alpha = alpha_max.min(1.0);
            let mut accepted = None;
            for _ in 0..40 {
                let mut w: Vec<f64> = sup.w.iter().zip(&delta).map(|(w, d)| (w + alpha * d).max(0.0)).collect();
                if alpha == alpha_max {
                    if let Some(b) = blocking {
                        w[b] = 0.0;
                    }
                }
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                if let Some(next) = self.state_with(&sup.grads, &w) {
                    if next.phi > st.phi {
                        accepted = Some((w, next));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some((w, next)) = accepted else { break };
            sup.w = w;
            st = next;
            if sup.w.iter().any(|w| *w == 0.0) {
                sup.prune(0.0);
            }
        }
        st.phi
    }

    fn optimize_weights(&self, sup: &mut Support, weight_iters: usize) -> f64 {
        self.multiplicative(sup, weight_iters.min(50));
        self.newton(sup, NEWTON_ITERS.min(weight_iters))
    }

    /// Best dose per group by the normalized sensitivity.
    fn best_points(&self, sup: &Support, grid: usize) -> Result<Vec<(usize, f64, f64)>> {
        let st = self.state(sup).ok_or(DesignError::SingularInformation)?;
        let coefs = self.coefs(&st);
        (0..self.n_groups())
            .map(|g| {
                let extra: Vec<f64> = sup.pts.iter().filter(|p| p.0 == g).map(|p| p.1).collect();
                let (d, v, _) = maximize_on_interval(|d| self.psi_at(&st, &coefs, g, d), self.dmax[g], grid, &extra)?;
                Ok((g, d, v))
            })
            .collect()
    }

    /// Adds `(g, d)` with the line-searched mass that maximizes the objective.
    fn add_point(&self, sup: &mut Support, g: usize, d: f64) -> Result<()> {
        let grads = self.grads(g, d)?;
        let base = self.phi(sup);
        let mut trial = sup.clone();
        trial.pts.push((g, d));
        trial.w.push(0.0);
        trial.grads.push(grads);
        let n = trial.len();
        let eval = |alpha: f64, t: &mut Support| {
            for j in 0..n - 1 {
                t.w[j] = sup.w[j] * (1.0 - alpha);
            }
            t.w[n - 1] = alpha;
            self.phi(t)
        };
        let mut t = trial.clone();
        let (alpha, v, _) = golden_max(|a| Ok(eval(a, &mut t)), 0.0, 0.999, 1e-7)?;
        if v > base {
            eval(alpha, &mut trial);
            *sup = trial;
        }
        Ok(())
    }

    /// Coordinate-wise golden-section moves of every support dose inside the
    /// gap between its neighbours of the same group.
    fn polish(&self, sup: &mut Support) -> Result<()> {
        let mut current = self.phi(sup);
        for j in 0..sup.len() {
            let (g, d0) = sup.pts[j];
            let dmax = self.dmax[g];
            let lo = sup.pts.iter().filter(|p| p.0 == g && p.1 < d0).map(|p| p.1).fold(0.0, f64::max);
            let hi = sup.pts.iter().filter(|p| p.0 == g && p.1 > d0).map(|p| p.1).fold(dmax, f64::min);
            if hi <= lo {
                continue;
            }
            let mut trial = sup.clone();
            let mut f = |d: f64| -> Result<f64> {
                trial.pts[j].1 = d;
                trial.grads[j] = self.grads(g, d)?;
                Ok(self.phi(&trial))
            };
            let (x, v, _) = golden_max(&mut f, lo, hi, 1e-10 * dmax)?;
            let mut best = (d0, current);
            if v > best.1 {
                best = (x, v);
            }
            for edge in [0.0, dmax] {
                if (edge == lo || edge == hi) && !sup.pts.iter().any(|p| p.0 == g && p.1 == edge) {
                    let fe = f(edge)?;
                    if fe >= best.1 {
                        best = (edge, fe);
                    }
                }
            }
            if best.0 != d0 {
                sup.pts[j].1 = best.0;
                sup.grads[j] = self.grads(g, best.0)?;
                current = best.1;
            }
        }
        Ok(())
    }

    /// Merges doses of the same group closer than `tol * dmax`, keeping the
    /// location of the heavier point (or of a boundary point), and drops tiny weights.
    fn collapse(&self, sup: &Support, tol: f64) -> Result<Support> {
        let mut order: Vec<usize> = (0..sup.len()).collect();
        order.sort_by(|a, b| sup.pts[*a].0.cmp(&sup.pts[*b].0).then(sup.pts[*a].1.total_cmp(&sup.pts[*b].1)));
        let mut pts: Vec<(usize, f64)> = Vec::new();
        let mut w: Vec<f64> = Vec::new();
        for j in order {
            let (g, d) = sup.pts[j];
            let wj = sup.w[j];
            if let (Some(last), Some(lw)) = (pts.last_mut(), w.last_mut()) {
                if last.0 == g && d - last.1 <= tol * self.dmax[g] {
                    let boundary = |x: f64| x == 0.0 || x == self.dmax[g];
                    let keep_new = !boundary(last.1) && (boundary(d) || wj > *lw);
                    if keep_new {
                        last.1 = d;
                    }
                    *lw += wj;
                    continue;
                }
            }
            pts.push((g, d));
            w.push(wj);
        }
        let mut out = self.support(pts, w)?;
        out.prune(DROP_WEIGHT);
        Ok(out)
    }

    fn design(&self, sup: &Support) -> Result<Design> {
        Design::from_joint(self.n_groups(), &sup.entries())
    }

    /// One full exchange run from `start`.
    fn run(&self, start: Support, settings: &OptimizerSettings) -> Result<(Support, f64, Vec<f64>)> {
        let mut sup = start;
        sup.normalize();
        let mut phi = self.optimize_weights(&mut sup, settings.weight_iters);
        if phi == f64::NEG_INFINITY {
            return Err(DesignError::SingularInformation);
        }
        let mut trace = vec![phi];
        let mut stalls = 0;
        for _ in 0..settings.exchange_iters {
            let prev = phi;
            let best = self.best_points(&sup, settings.grid_density)?;
            let max_psi = best.iter().map(|b| b.2).fold(f64::NEG_INFINITY, f64::max);
            for &(g, d, v) in &best {
                if v > 1.0 + 1e-12 {
                    self.add_point(&mut sup, g, d)?;
                }
            }
            self.optimize_weights(&mut sup, settings.weight_iters);
            self.polish(&mut sup)?;
            let before_cleanup = self.optimize_weights(&mut sup, settings.weight_iters);
            let mut cleaned = self.collapse(&sup, settings.collapse_tol)?;
            let after = self.optimize_weights(&mut cleaned, settings.weight_iters);
            phi = if after >= before_cleanup - 1e-13 * before_cleanup.abs().max(1.0) {
                sup = cleaned;
                after
            } else {
                before_cleanup
            };
            if phi < prev {
                // numerical noise only; never report a decrease
                phi = prev;
            }
            trace.push(phi);
            let gain = phi - prev;
            if gain < settings.convergence_tol {
                stalls += 1;
                if max_psi - 1.0 < 1e-7 || stalls >= 3 {
                    break;
                }
            } else {
                stalls = 0;
            }
        }
        Ok((sup, phi, trace))
    }

    fn initial_support(&self, rng: &mut ChaCha8Rng, bounds: &[usize]) -> Result<Support> {
        let mut pts = Vec::new();
        for (g, (&dmax, &max)) in self.dmax.iter().zip(bounds).enumerate() {
            let lo = self.q + 1;
            let k = rng.gen_range(lo..=max.max(lo));
            let mut group = Vec::with_capacity(k);
            if rng.gen_bool(0.7) {
                group.push(0.0);
            }
            if rng.gen_bool(0.7) {
                group.push(dmax);
            }
            while group.len() < k {
                let d = if rng.gen_bool(0.5) {
                    rng.gen_range(0.0..dmax)
                } else {
                    dmax * (rng.gen_range((1e-4f64).ln()..0.0)).exp()
                };
                group.push(d);
            }
            pts.extend(group.into_iter().map(|d| (g, d)));
        }
        let n = pts.len();
        self.support(pts, vec![1.0 / n as f64; n])
    }

    fn default_support(&self) -> Result<Support> {
        let mut pts = Vec::new();
        for (g, &dmax) in self.dmax.iter().enumerate() {
            pts.push((g, 0.0));
            pts.push((g, dmax));
            let k = self.m_max.max(2);
            for j in 0..k {
                let e = -3.0 + 3.0 * (j as f64 + 0.5) / k as f64;
                pts.push((g, dmax * 10f64.powf(e)));
            }
        }
        let n = pts.len();
        self.support(pts, vec![1.0 / n as f64; n])
    }

    fn restart_start(&self, index: usize, settings: &OptimizerSettings, seed_design: Option<&Design>, bounds: &[usize]) -> Result<Support> {
        if index == 0 {
            if let Some(d) = seed_design {
                let e = d.joint();
                return self.support(e.iter().map(|x| (x.0, x.1)).collect(), e.iter().map(|x| x.2).collect());
            }
            return self.default_support();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let mut sup = self.initial_support(&mut rng, bounds)?;
        for _ in 0..10 {
            if self.state(&sup).is_some() {
                break;
            }
            let g = rng.gen_range(0..self.n_groups());
            let d = rng.gen_range(0.0..=self.dmax[g]);
            sup.pts.push((g, d));
            sup.grads.push(self.grads(g, d)?);
            sup.w.push(1.0);
            let n = sup.len() as f64;
            sup.w.iter_mut().for_each(|w| *w = 1.0 / n);
        }
        Ok(sup)
    }
}

/// Support-size caps used when drawing random starting designs.
fn start_bounds(objective: &Objective) -> Vec<usize> {
    let spec = objective.first_spec();
    match objective {
        Objective::LocallyD(s) => support_bound(s).per_group,
        Objective::Compound(c) => {
            let m = c.iter().map(|x| x.spec.n_params()).max().unwrap_or(1);
            vec![m; spec.n_groups()]
        }
    }
}

fn shares_variances(objective: &Objective) -> bool {
    match objective {
        Objective::LocallyD(_) => true,
        Objective::Compound(c) => c.iter().all(|x| x.spec.sigma2() == c[0].spec.sigma2()),
    }
}

/// Maximizes `objective` by vertex exchange from several starting designs.
pub fn maximize(objective: &Objective, settings: &OptimizerSettings) -> Result<OptimizationResult> {
    maximize_from(objective, None, settings)
}

/// Like [`maximize`] with the first restart started from `seed_design`.
pub fn maximize_from(
    objective: &Objective,
    seed_design: Option<&Design>,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult> {
    settings.validate()?;
    let problem = Problem::new(objective)?;
    let bounds = start_bounds(objective);
    let runs: Vec<Result<(Support, f64, Vec<f64>)>> = (0..settings.restarts)
        .into_par_iter()
        .map(|r| {
            let start = problem.restart_start(r, settings, seed_design, &bounds)?;
            problem.run(start, settings)
        })
        .collect();
    let mut best: Option<(usize, Support, f64, Vec<f64>)> = None;
    let mut restart_criteria = Vec::with_capacity(runs.len());
    let mut failures = Vec::new();
    for (i, run) in runs.into_iter().enumerate() {
        match run {
            Ok((sup, phi, trace)) => {
                restart_criteria.push(phi);
                if best.as_ref().map_or(true, |b| phi > b.2) {
                    best = Some((i, sup, phi, trace));
                }
            }
            Err(e) => {
                restart_criteria.push(f64::NEG_INFINITY);
                failures.push(format!("restart {i}: {e}"));
            }
        }
    }
    let Some((_, sup, _, trace)) = best else {
        return Err(DesignError::OptimizationFailed(format!(
            "all {} restarts failed ({})",
            settings.restarts,
            failures.join("; ")
        )));
    };
    let mut design = problem.design(&sup)?;
    let mut criterion = objective.evaluate(&design)?;
    if shares_variances(objective) {
        let shifted = placebo_shift(objective.first_spec(), &design)?;
        let value = objective.evaluate(&shifted)?;
        if value >= criterion - 1e-12 * criterion.abs().max(1.0) {
            design = shifted;
            criterion = value;
        }
    }
    let certificate = objective.certify(&design, RESULT_CERTIFY_TOL, crate::verify::DEFAULT_CERTIFY_GRID)?;
    Ok(OptimizationResult {
        converged: certificate.pass,
        design,
        criterion,
        certificate,
        trace,
        method: Method::Numerical,
        case: None,
        restart_criteria,
    })
}

/// Optimal weights on a fixed support of `(group, dose)` pairs.
pub fn weight_optimize(objective: &Objective, support: &[(usize, f64)], settings: &OptimizerSettings) -> Result<(Design, f64)> {
    settings.validate()?;
    if support.is_empty() {
        return Err(DesignError::invalid("support", "must be non-empty"));
    }
    let problem = Problem::new(objective)?;
    for (i, a) in support.iter().enumerate() {
        if support[..i].iter().any(|b| b == a) {
            let rank = rank_of(&problem, support)?;
            return Err(DesignError::RankDeficient { rank, needed: support.len() });
        }
    }
    let rank = rank_of(&problem, support)?;
    let needed = support.len().min(problem.m_max);
    if rank < needed {
        return Err(DesignError::RankDeficient { rank, needed });
    }
    let n = support.len();
    let mut sup = problem.support(support.to_vec(), vec![1.0 / n as f64; n])?;
    if problem.state(&sup).is_none() {
        return Err(DesignError::SingularInformation);
    }
    problem.optimize_weights(&mut sup, settings.weight_iters);
    let design = problem.design(&sup)?;
    let value = objective.evaluate(&design)?;
    Ok((design, value))
}

/// Smallest rank of the gradient matrix over the terms of the problem.
fn rank_of(problem: &Problem, support: &[(usize, f64)]) -> Result<usize> {
    let mut rank = usize::MAX;
    for k in 0..problem.terms.len() {
        let cols = support
            .iter()
            .map(|&(g, d)| problem.terms[k].spec.gradient(g, d).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let g = DMatrix::from_columns(&cols);
        rank = rank.min(g.rank(1e-10 * g.norm().max(1e-300)));
    }
    Ok(rank)
}

fn certified(objective: &Objective, design: Design, method: Method, case: Option<MinSupportedCase>) -> Result<OptimizationResult> {
    let criterion = objective.evaluate(&design)?;
    let certificate = objective.certify(&design, RESULT_CERTIFY_TOL, crate::verify::DEFAULT_CERTIFY_GRID)?;
    Ok(OptimizationResult {
        converged: certificate.pass,
        design,
        criterion,
        trace: vec![criterion],
        certificate,
        method,
        case,
        restart_criteria: Vec::new(),
    })
}

/// Single-group problem for group `i` of a shared-location model.
fn single_group(spec: &ModelSpec, i: usize) -> Result<ModelSpec> {
    ModelSpec::new(
        spec.family(),
        spec.sharing(),
        spec.theta_shared().to_vec(),
        vec![spec.theta_group(i).to_vec()],
        vec![spec.sigma2()[i]],
        vec![spec.dmax()[i]],
    )
}

/// Interior point of a numerically optimized single-group design when it has
/// the form `{0, x, dmax}` with equal weights.
fn numeric_interior(spec: &ModelSpec, i: usize, settings: &OptimizerSettings) -> Result<Option<f64>> {
    let single = single_group(spec, i)?;
    let res = maximize(&Objective::LocallyD(single), settings)?;
    let g = res.design.group(0);
    let dmax = spec.dmax()[i];
    let ok = g.len() == 3
        && g.points()[0] == 0.0
        && g.points()[2] == dmax
        && g.weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-4);
    Ok(ok.then(|| g.points()[1]))
}

/// Locally D-optimal design through the analytic results where they apply,
/// falling back to the optimizer otherwise.
pub fn locally_optimal(spec: &ModelSpec, settings: &OptimizerSettings) -> Result<OptimizationResult> {
    let objective = Objective::LocallyD(spec.clone());
    let family = spec.family().canonical();
    match (spec.sharing(), family) {
        (SharingPattern::SharedLocation, ModelFamily::SigmoidEmax { .. }) => {
            let mut interior = Vec::with_capacity(spec.n_groups());
            for i in 0..spec.n_groups() {
                match numeric_interior(spec, i, settings)? {
                    Some(x) => interior.push(x),
                    None => return maximize(&objective, settings),
                }
            }
            let design = compose_shared_location(spec, &interior)?;
            let res = certified(&objective, design, Method::Composed, None)?;
            if res.converged {
                Ok(res)
            } else {
                maximize_from(&objective, Some(&res.design), settings)
            }
        }
        (SharingPattern::SharedLocation, _) => certified(&objective, shared_location_optimal(spec)?, Method::ClosedForm, None),
        (SharingPattern::SharedLocationScale, ModelFamily::SigmoidEmax { .. }) => maximize(&objective, settings),
        (SharingPattern::SharedLocationScale, _) if spec.n_groups() == 2 => {
            let attempt = min_supported_optimal(spec);
            let (design, case) = match attempt {
                Ok(x) => x,
                Err(DesignError::Precondition(_)) => return maximize(&objective, settings),
                Err(e) => return Err(e),
            };
            let accept = if family == ModelFamily::Emax {
                emax_global_conditions(spec, &case)?.holds
            } else {
                certify(spec, &design, CLOSED_FORM_CERTIFY_TOL, crate::verify::DEFAULT_CERTIFY_GRID)?.pass
            };
            if accept {
                certified(&objective, design, Method::MinimallySupported, Some(case))
            } else {
                let mut res = maximize_from(&objective, Some(&design), settings)?;
                res.case = Some(case);
                Ok(res)
            }
        }
        _ => maximize(&objective, settings),
    }
}

/// Improves `design` by exchange steps started from it; the result respects
/// the log-determinant ordering `log det(result) >= log det(design)`.
pub fn improve(spec: &ModelSpec, design: &Design, settings: &OptimizerSettings) -> Result<OptimizationResult> {
    let s = OptimizerSettings { restarts: 1, ..settings.clone() };
    maximize_from(&Objective::LocallyD(spec.clone()), Some(design), &s)
}

/// Every group design in `design` has equal weights.
pub fn has_equal_weights(design: &Design, tol: f64) -> bool {
    design.groups().iter().all(|g: &GroupDesign| {
        let u = 1.0 / g.len().max(1) as f64;
        g.weights().iter().all(|w| (w - u).abs() <= tol)
    })
}
