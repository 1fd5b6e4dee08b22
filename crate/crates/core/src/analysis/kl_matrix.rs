use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::mean_std;
use crate::predictive::{kl_between_predictives, KlConfig, KlEstimate, PredictiveModel};

pub const DEFAULT_MIN_CLASS_SIZE: usize = 100;

/// Pairwise divergences between class predictives. `entries[i][j]` is the
/// divergence of class `classes[j]`'s predictive from class `classes[i]`'s,
/// estimated with draws from class `i`. The matrix is not symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct KlMatrix {
    pub classes: Vec<u32>,
    pub entries: Vec<Vec<KlEstimate>>,
    pub off_diagonal_mean: f64,
    pub off_diagonal_std: f64,
}

impl KlMatrix {
    pub fn get(&self, from: u32, to: u32) -> Option<&KlEstimate> {
        let i = self.classes.iter().position(|&c| c == from)?;
        let j = self.classes.iter().position(|&c| c == to)?;
        Some(&self.entries[i][j])
    }
}

/// Stream seed for one (from, to) pair; every entry draws independently.
fn pair_seed(seed: u64, i: usize, j: usize) -> u64 {
    seed ^ ((i as u64) << 32 | j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn between_class_kl_matrix(
    models: &BTreeMap<u32, PredictiveModel>,
    config: &KlConfig,
    min_class_size: usize,
) -> Result<KlMatrix> {
    config.validate()?;
    let eligible: Vec<(u32, &PredictiveModel)> = models
        .iter()
        .filter(|(_, m)| m.len() >= min_class_size)
        .map(|(&c, m)| (c, m))
        .collect();
    if eligible.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 classes with >= {min_class_size} examples, found {}",
            eligible.len()
        )));
    }
    let k = eligible.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let flat = pairs
        .par_iter()
        .map(|&(i, j)| {
            let cfg = KlConfig {
                seed: pair_seed(config.seed, i, j),
                ..config.clone()
            };
            kl_between_predictives(eligible[i].1, eligible[j].1, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let entries: Vec<Vec<KlEstimate>> = flat.chunks(k).map(<[KlEstimate]>::to_vec).collect();
    let off: Vec<f64> = pairs
        .iter()
        .filter(|(i, j)| i != j)
        .map(|&(i, j)| entries[i][j].estimate)
        .collect();
    let (off_diagonal_mean, off_diagonal_std) = mean_std(&off).expect("k >= 2");
    Ok(KlMatrix {
        classes: eligible.iter().map(|(c, _)| *c).collect(),
        entries,
        off_diagonal_mean,
        off_diagonal_std,
    })
}
