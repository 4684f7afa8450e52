//! Reference implementations written from the model formulas, sharing no code
//! with the library.

#![allow(dead_code)]

use dosedesign::{Design, ModelFamily, ModelSpec, SharingPattern};
use rand::Rng;

pub fn f0(family: ModelFamily, d: f64, theta: f64) -> f64 {
    match family {
        ModelFamily::Emax => d / (theta + d),
        ModelFamily::SigmoidEmax { gamma } => d.powf(gamma) / (theta.powf(gamma) + d.powf(gamma)),
        ModelFamily::LinearInLog => (d / theta + 1.0).ln(),
        ModelFamily::Exponential => (d / theta).exp() - 1.0,
    }
}

/// Mean of `group` at `d` for the full parameter vector `(shared, block_1, ..., block_M)`.
pub fn mean(spec: &ModelSpec, theta: &[f64], group: usize, d: f64) -> f64 {
    let fam = spec.family();
    match spec.sharing() {
        SharingPattern::SharedLocation => {
            let a = theta[1 + 2 * group];
            let b = theta[2 + 2 * group];
            theta[0] + a * f0(fam, d, b)
        }
        SharingPattern::SharedLocationScale => {
            let b = theta[2 + group];
            theta[0] + theta[1] * f0(fam, d, b)
        }
    }
}

/// Analytic derivative of `f0` in its ED50-type argument.
pub fn df0(family: ModelFamily, d: f64, theta: f64) -> f64 {
    match family {
        ModelFamily::Emax => -d / ((theta + d) * (theta + d)),
        ModelFamily::SigmoidEmax { gamma } => {
            if d == 0.0 {
                return 0.0;
            }
            let u = d.powf(gamma);
            let v = theta.powf(gamma);
            -gamma * theta.powf(gamma - 1.0) * u / ((v + u) * (v + u))
        }
        ModelFamily::LinearInLog => -d / (theta * (theta + d)),
        ModelFamily::Exponential => -(d / (theta * theta)) * (d / theta).exp(),
    }
}

/// Embedded gradient divided by `sigma`, written from the formulas.
pub fn gradient(spec: &ModelSpec, group: usize, d: f64) -> Vec<f64> {
    let theta = spec.theta();
    let fam = spec.family();
    let m = theta.len();
    let s = spec.sigma2()[group].sqrt();
    let mut h = vec![0.0; m];
    match spec.sharing() {
        SharingPattern::SharedLocation => {
            let a = theta[1 + 2 * group];
            let b = theta[2 + 2 * group];
            h[0] = 1.0;
            h[1 + 2 * group] = f0(fam, d, b);
            h[2 + 2 * group] = a * df0(fam, d, b);
        }
        SharingPattern::SharedLocationScale => {
            let b = theta[2 + group];
            h[0] = 1.0;
            h[1] = f0(fam, d, b);
            h[2 + group] = theta[1] * df0(fam, d, b);
        }
    }
    h.iter().map(|v| v / s).collect()
}

pub fn info(spec: &ModelSpec, design: &Design) -> Vec<Vec<f64>> {
    let m = spec.n_params();
    let mut out = vec![vec![0.0; m]; m];
    for (g, d, w) in design.joint() {
        let h = gradient(spec, g, d);
        for a in 0..m {
            for b in 0..m {
                out[a][b] += w * h[a] * h[b];
            }
        }
    }
    out
}

/// `ln |det A|` by Gaussian elimination with partial pivoting; `-inf` when singular.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return f64::NEG_INFINITY;
        }
        a.swap(c, p);
        total += a[c][c].abs().ln();
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    total
}

pub fn logdet(spec: &ModelSpec, design: &Design) -> f64 {
    log_abs_det(info(spec, design))
}

/// `h^T M^{-1} h` by solving with Gaussian elimination.
pub fn kappa(spec: &ModelSpec, design: &Design, group: usize, d: f64) -> f64 {
    let m = info(spec, design);
    let h = gradient(spec, group, d);
    let x = solve(m, h.clone());
    h.iter().zip(&x).map(|(a, b)| a * b).sum()
}

pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

pub fn emax_ls(tb: [f64; 2], sigma2: [f64; 2]) -> ModelSpec {
    ls(ModelFamily::Emax, tb, sigma2)
}

/// Two groups, shared location and scale, unit dose ranges.
pub fn ls(family: ModelFamily, tb: [f64; 2], sigma2: [f64; 2]) -> ModelSpec {
    ModelSpec::new(
        family,
        SharingPattern::SharedLocationScale,
        vec![0.2, 1.3],
        vec![vec![tb[0]], vec![tb[1]]],
        sigma2.to_vec(),
        vec![1.0, 1.0],
    )
    .unwrap()
}

pub fn random_family<R: Rng>(rng: &mut R) -> ModelFamily {
    match rng.gen_range(0..4) {
        0 => ModelFamily::Emax,
        1 => ModelFamily::SigmoidEmax { gamma: rng.gen_range(0.5..4.0) },
        2 => ModelFamily::LinearInLog,
        _ => ModelFamily::Exponential,
    }
}

/// Random model with `n` groups and moderate parameters.
pub fn random_spec<R: Rng>(rng: &mut R, family: ModelFamily, sharing: SharingPattern, n: usize) -> ModelSpec {
    let dmax: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..500.0)).collect();
    let sigma2: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..3.0)).collect();
    // keeps exp(d / theta) moderate so information entries stay O(1e4) at most
    let lo = if family == ModelFamily::Exponential { 0.2 } else { 0.05 };
    let ed50 = |rng: &mut R, d: f64| d * rng.gen_range(lo..0.9);
    let (shared, groups) = match sharing {
        SharingPattern::SharedLocation => (
            vec![rng.gen_range(-2.0..2.0)],
            dmax.iter().map(|d| vec![rng.gen_range(0.2..3.0), ed50(rng, *d)]).collect(),
        ),
        SharingPattern::SharedLocationScale => (
            vec![rng.gen_range(-2.0..2.0), rng.gen_range(0.2..3.0)],
            dmax.iter().map(|d| vec![ed50(rng, *d)]).collect(),
        ),
    };
    ModelSpec::new(family, sharing, shared, groups, sigma2, dmax).unwrap()
}

/// Random design with `k` points per group drawn uniformly on each range.
pub fn random_design<R: Rng>(rng: &mut R, spec: &ModelSpec, k: usize) -> Design {
    let n = spec.n_groups();
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let dmax = spec.dmax()[i];
        let pts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..dmax)).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        groups.push(dosedesign::GroupDesign::new(pts, raw.iter().map(|w| w / s).collect()).unwrap());
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Design::from_groups(groups, raw.iter().map(|l| l / s).collect()).unwrap()
}

/// Random design whose `k` points per group sit in the middle halves of `k`
/// equal strata, so no two points nearly coincide.
pub fn random_spread_design<R: Rng>(rng: &mut R, spec: &ModelSpec, k: usize) -> Design {
    let n = spec.n_groups();
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let dmax = spec.dmax()[i];
        let pts: Vec<f64> = (0..k).map(|j| (j as f64 + rng.gen_range(0.25..0.75)) / k as f64 * dmax).collect();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        groups.push(dosedesign::GroupDesign::new(pts, raw.iter().map(|w| w / s).collect()).unwrap());
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Design::from_groups(groups, raw.iter().map(|l| l / s).collect()).unwrap()
}

fn det4(m: [[f64; 4]; 4]) -> f64 {
    let mut a = m;
    let mut det = 1.0;
    for c in 0..4 {
        let mut p = c;
        for r in c + 1..4 {
            if a[r][c].abs() > a[p][c].abs() {
                p = r;
            }
        }
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(c, p);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

/// Best log determinant of each four-point structure for two groups on unit
/// ranges with variances `(r, 1)`: `[{0,x,1}/{y}, {x,1}/{0,y}, {z}/{0,x,1}]`.
/// Free points run over `k / n`, `k = 1..=n`; joint weights are one quarter,
/// so `log det M = 4 ln(1/4) + 2 ln |det G|` with `G` the gradient rows.
pub fn brute_force_structures(family: ModelFamily, tb: [f64; 2], r: f64, n: usize) -> [f64; 3] {
    let spec = ls(family, tb, [r, 1.0]);
    let row = |g: usize, d: f64| -> [f64; 4] {
        let h = gradient(&spec, g, d);
        [h[0], h[1], h[2], h[3]]
    };
    let grid: Vec<f64> = (1..=n).map(|k| k as f64 / n as f64).collect();
    let r0: Vec<[f64; 4]> = grid.iter().map(|d| row(0, *d)).collect();
    let r1: Vec<[f64; 4]> = grid.iter().map(|d| row(1, *d)).collect();
    let (z0, z1, o0, o1) = (row(0, 0.0), row(1, 0.0), row(0, 1.0), row(1, 1.0));
    let mut best = [0.0f64; 3];
    for a in &r0 {
        for b in &r1 {
            let dets = [det4([z0, *a, o0, *b]), det4([*a, o0, z1, *b]), det4([*a, z1, *b, o1])];
            for k in 0..3 {
                best[k] = best[k].max(dets[k].abs());
            }
        }
    }
    let offset = 4.0 * 0.25f64.ln();
    best.map(|d| if d > 0.0 { offset + 2.0 * d.ln() } else { f64::NEG_INFINITY })
}
