use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::groups::DensityGroups;
use crate::error::{Error, Result};
use crate::math::mean_std;
use crate::predictive::PredictiveModel;
use crate::representation::RepresentationDataset;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleLogDensity {
    /// Row index in the analysed dataset.
    pub example: usize,
    pub class: u32,
    pub log_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSummary {
    pub class: u32,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Per-example class-conditional log-densities and their per-class summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDensityReport {
    /// Sorted ascending by mean log-density.
    pub classes: Vec<ClassSummary>,
    /// One record per example, in dataset order.
    pub records: Vec<ExampleLogDensity>,
}

/// Class-level split into low- and high-density groups.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassGroups {
    pub low: BTreeSet<u32>,
    pub high: BTreeSet<u32>,
}

impl ClassDensityReport {
    /// Class means in report order.
    pub fn class_means(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.mean).collect()
    }

    /// Map group indices (into [`class_means`](Self::class_means)) to class ids.
    pub fn class_groups(&self, groups: &DensityGroups) -> ClassGroups {
        ClassGroups {
            low: groups.low.iter().map(|&i| self.classes[i].class).collect(),
            high: groups.high.iter().map(|&i| self.classes[i].class).collect(),
        }
    }
}

/// Log-density of every example under its own class model, summarized per
/// class. Models are evaluated in-sample.
pub fn class_log_density_stats(
    models: &BTreeMap<u32, PredictiveModel>,
    data: &RepresentationDataset,
) -> Result<ClassDensityReport> {
    let missing: Vec<u32> = data
        .class_histogram()
        .keys()
        .copied()
        .filter(|c| !models.contains_key(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Configuration(format!("no fitted model for classes {missing:?}")));
    }
    if let Some((c, m)) = models.iter().find(|(_, m)| m.prior().dim() != data.dim()) {
        return Err(Error::Configuration(format!(
            "model for class {c} is {}-dimensional, data is {}-dimensional",
            m.prior().dim(),
            data.dim()
        )));
    }
    let records: Vec<ExampleLogDensity> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let class = data.labels()[i];
            ExampleLogDensity {
                example: i,
                class,
                log_density: models[&class].posterior_predictive_logpdf(data.row(i)),
            }
        })
        .collect();

    let mut per_class: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in &records {
        per_class.entry(r.class).or_default().push(r.log_density);
    }
    let mut classes: Vec<ClassSummary> = per_class
        .into_iter()
        .map(|(class, v)| {
            let (mean, std) = mean_std(&v).expect("non-empty class");
            ClassSummary {
                class,
                count: v.len(),
                mean,
                std,
            }
        })
        .collect();
    classes.sort_by(|a, b| a.mean.total_cmp(&b.mean).then(a.class.cmp(&b.class)));
    Ok(ClassDensityReport { classes, records })
}
