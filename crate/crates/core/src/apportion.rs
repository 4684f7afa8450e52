//! Rounding of approximate designs to integer sample sizes.

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::{DesignError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactGroup {
    pub points: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ExactGroup {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDesign {
    pub groups: Vec<ExactGroup>,
    pub n: usize,
}

/// Largest-remainder split of `total` according to `weights`, with a lower
/// bound per entry. Ties go to the lowest index.
fn largest_remainder(weights: &[f64], total: usize, minimum: &[usize]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let quota: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut alloc: Vec<usize> = quota.iter().zip(minimum).map(|(q, m)| (q.floor() as usize).max(*m)).collect();
    let mut sum: usize = alloc.iter().sum();
    while sum < total {
        let mut best = 0;
        let mut best_gap = f64::NEG_INFINITY;
        for (j, (q, a)) in quota.iter().zip(&alloc).enumerate() {
            let gap = q - *a as f64;
            if gap > best_gap {
                best_gap = gap;
                best = j;
            }
        }
        alloc[best] += 1;
        sum += 1;
    }
    while sum > total {
        let mut best = None;
        let mut best_gap = f64::INFINITY;
        for (j, (q, a)) in quota.iter().zip(&alloc).enumerate() {
            if *a > minimum[j] {
                let gap = q - *a as f64;
                if gap < best_gap {
                    best_gap = gap;
                    best = Some(j);
                }
            }
        }
        // callers guarantee sum(minimum) <= total
        let j = best.expect("minimums exceed total");
        alloc[j] -= 1;
        sum -= 1;
    }
    alloc
}

/// Efficient rounding: `n` is first split across groups by `lambda`, then each
/// group total across its doses by the group weights. Every support point gets
/// at least one subject.
pub fn apportion(design: &Design, n: usize) -> Result<ExactDesign> {
    let support = design.support_size();
    if n < support {
        return Err(DesignError::SampleTooSmall { n, support });
    }
    let minimum: Vec<usize> = design.groups().iter().map(|g| g.len()).collect();
    let per_group = largest_remainder(design.lambda(), n, &minimum);
    let groups = design
        .groups()
        .iter()
        .zip(per_group)
        .map(|(g, ni)| {
            let counts = if g.is_empty() { Vec::new() } else { largest_remainder(g.weights(), ni, &vec![1; g.len()]) };
            ExactGroup { points: g.points().to_vec(), counts }
        })
        .collect();
    Ok(ExactDesign { groups, n })
}
