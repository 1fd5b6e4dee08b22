//! Generative classification with class-conditional predictives and
//! empirical class priors, plus F-score helpers.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::predictive::PredictiveModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub predictions: Vec<u32>,
    /// Macro F-score, when truth labels were supplied.
    pub macro_f: Option<f64>,
    pub per_class_f: BTreeMap<u32, f64>,
}

/// Class priors proportional to each model's training-set size.
pub fn empirical_priors(models: &BTreeMap<u32, PredictiveModel>) -> BTreeMap<u32, f64> {
    let total: usize = models.values().map(PredictiveModel::len).sum();
    models
        .iter()
        .map(|(&c, m)| (c, m.len() as f64 / total as f64))
        .collect()
}

/// `argmax_c ln p(x | c) + ln p(c)`; ties go to the smallest class id.
pub fn generative_classify(
    models: &BTreeMap<u32, PredictiveModel>,
    priors: &BTreeMap<u32, f64>,
    queries: ArrayView2<'_, f64>,
    truth: Option<&[u32]>,
) -> Result<Classification> {
    if models.is_empty() {
        return Err(Error::Configuration("no class models".into()));
    }
    let total: f64 = priors.values().sum();
    if (total - 1.0).abs() > 1e-9 || priors.values().any(|&p| !(p >= 0.0)) {
        return Err(Error::Parameter(format!("class priors must sum to 1, got {total}")));
    }
    if let Some(c) = models.keys().find(|c| !priors.contains_key(c)) {
        return Err(Error::Configuration(format!("no prior for class {c}")));
    }
    let d = models.values().next().expect("non-empty").prior().dim();
    if queries.ncols() != d {
        return Err(Error::Parameter(format!(
            "queries have {} columns, models are {d}-dimensional",
            queries.ncols()
        )));
    }
    if let Some(t) = truth {
        if t.len() != queries.nrows() {
            return Err(Error::Parameter(format!("{} truth labels for {} queries", t.len(), queries.nrows())));
        }
    }
    let queries = queries.as_standard_layout();
    let predictions: Vec<u32> = (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let x = queries.row(i);
            let x = x.as_slice().expect("standard layout");
            let mut best: Option<(u32, f64)> = None;
            for (&c, m) in models {
                let score = m.posterior_predictive_logpdf(x) + priors[&c].ln();
                if best.is_none_or(|(_, b)| score > b) {
                    best = Some((c, score));
                }
            }
            best.expect("non-empty").0
        })
        .collect();
    let (macro_f, per_class_f) = match truth {
        Some(t) => {
            let predicted: Vec<Option<u32>> = predictions.iter().copied().map(Some).collect();
            (Some(macro_f_score(t, &predicted)), per_class_f_scores(t, &predicted))
        }
        None => (None, BTreeMap::new()),
    };
    Ok(Classification {
        predictions,
        macro_f,
        per_class_f,
    })
}

/// F1 per class over the union of true and predicted labels. A `None`
/// prediction (abstention) counts as a miss for the true class only.
pub fn per_class_f_scores(truth: &[u32], predicted: &[Option<u32>]) -> BTreeMap<u32, f64> {
    let classes: BTreeSet<u32> = truth
        .iter()
        .copied()
        .chain(predicted.iter().flatten().copied())
        .collect();
    classes
        .into_iter()
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (&t, &p) in truth.iter().zip(predicted) {
                match (t == c, p == Some(c)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            (c, 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        })
        .collect()
}

/// Unweighted mean of [`per_class_f_scores`]; 0 for empty input.
pub fn macro_f_score(truth: &[u32], predicted: &[Option<u32>]) -> f64 {
    let per = per_class_f_scores(truth, predicted);
    if per.is_empty() {
        0.0
    } else {
        per.values().sum::<f64>() / per.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::niw::NiwParams;
    use crate::sampler::Snapshot;
    use ndarray::{array, Array2};

    fn model_at(center: f64, n: usize) -> PredictiveModel {
        let data = Array2::from_shape_fn((n, 1), |(i, _)| center + (i as f64 - (n as f64 - 1.0) / 2.0) * 0.1);
        let prior = NiwParams::new(vec![center], 1.0, 3.0, vec![0.1]).unwrap();
        let snap = Snapshot { alpha: 1.0, assignments: vec![0; n] };
        PredictiveModel::new(vec![snap], data, prior).unwrap()
    }

    #[test]
    fn three_class_confusion_by_hand() {
        let truth = [0, 0, 0, 1, 1, 2];
        let pred = [Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)];
        let f = per_class_f_scores(&truth, &pred);
        // class 0: tp2 fp0 fn1 -> 4/5; class 1: tp1 fp1 fn1 -> 1/2; class 2: tp1 fp1 fn0 -> 2/3
        assert!((f[&0] - 0.8).abs() < 1e-12);
        assert!((f[&1] - 0.5).abs() < 1e-12);
        assert!((f[&2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((macro_f_score(&truth, &pred) - (0.8 + 0.5 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn certain_prior_always_wins() {
        let mut models = BTreeMap::new();
        models.insert(0, model_at(0.0, 5));
        models.insert(1, model_at(10.0, 5));
        let priors: BTreeMap<u32, f64> = [(0, 0.0), (1, 1.0)].into_iter().collect();
        let r = generative_classify(&models, &priors, array![[0.0], [10.0], [-3.0]].view(), None).unwrap();
        assert_eq!(r.predictions, vec![1, 1, 1]);
    }

    #[test]
    fn ties_go_to_smaller_id() {
        let mut models = BTreeMap::new();
        models.insert(7, model_at(1.0, 4));
        models.insert(3, model_at(1.0, 4));
        let priors: BTreeMap<u32, f64> = [(3, 0.5), (7, 0.5)].into_iter().collect();
        let r = generative_classify(&models, &priors, array![[1.0], [1.3]].view(), Some(&[3, 7])).unwrap();
        assert_eq!(r.predictions, vec![3, 3]);
        assert!(r.macro_f.is_some());
    }

    #[test]
    fn invalid_inputs() {
        let mut models = BTreeMap::new();
        models.insert(0, model_at(0.0, 3));
        let ok: BTreeMap<u32, f64> = [(0, 1.0)].into_iter().collect();
        let bad: BTreeMap<u32, f64> = [(0, 0.7)].into_iter().collect();
        assert!(generative_classify(&models, &bad, array![[0.0]].view(), None).is_err());
        assert!(matches!(
            generative_classify(&models, &ok, array![[0.0, 1.0]].view(), None),
            Err(Error::Parameter(_))
        ));
        let pri = empirical_priors(&models);
        assert_eq!(pri[&0], 1.0);
    }
}
