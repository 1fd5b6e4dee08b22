//! Exact 1-D two-means split of class mean log-densities.

use crate::error::{Error, Result};

/// Separation score at or above which two groups count as distinct modes.
pub const BIMODALITY_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGroups {
    /// Indices (into the input) of the lower-valued group.
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    /// Midpoint between the largest `low` and the smallest `high` value.
    pub threshold: f64,
    /// Between-group over within-group variance at the optimal split.
    pub separation: f64,
    /// Set when all values coincide; everything is then in `low`.
    pub unimodal: bool,
}

impl DensityGroups {
    pub fn is_bimodal(&self) -> bool {
        !self.unimodal && self.separation >= BIMODALITY_THRESHOLD
    }
}

pub fn detect_density_groups(means: &[f64]) -> Result<DensityGroups> {
    let n = means.len();
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {n}")));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::Validation("class means must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| means[i]).collect();

    if sorted[0] == sorted[n - 1] {
        return Ok(DensityGroups {
            low: (0..n).collect(),
            high: Vec::new(),
            threshold: sorted[0],
            separation: 0.0,
            unimodal: true,
        });
    }

    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let ss = |a: usize, b: usize| {
        let cnt = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a] - s * s / cnt).max(0.0)
    };
    let total = ss(0, n);
    let (split, within) = (1..n)
        .map(|s| (s, ss(0, s) + ss(s, n)))
        .fold((1, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let between = (total - within).max(0.0);
    let separation = if within > 0.0 { between / within } else { f64::INFINITY };

    let mut low: Vec<usize> = order[..split].to_vec();
    let mut high: Vec<usize> = order[split..].to_vec();
    low.sort_unstable();
    high.sort_unstable();
    Ok(DensityGroups {
        low,
        high,
        threshold: 0.5 * (sorted[split - 1] + sorted[split]),
        separation,
        unimodal: false,
    })
}
