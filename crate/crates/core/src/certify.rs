//! Randomized-smoothing certification against a black-box base classifier:
//! Monte-Carlo top-class selection, a one-sided Clopper–Pearson lower bound
//! on the top-class probability, and the certified L2 radius `σ Φ⁻¹(p̄)`.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::analysis::classify::macro_f_score;
use crate::error::{Error, Result};
use crate::math::mean_std;

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyConfig {
    pub sigma: f64,
    /// Selection draws.
    pub n0: usize,
    /// Estimation draws.
    pub n: usize,
    /// Failure probability.
    pub alpha: f64,
    pub seed: u64,
    /// Noisy inputs per classifier call.
    pub batch_size: usize,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            n0: 100,
            n: 100_000,
            alpha: 1e-3,
            seed: 0,
            batch_size: 1000,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.n0 == 0 || self.n == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("n0, n and batch_size must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Base classifier evaluated on batches of (noisy) inputs, one row per input.
pub trait BaseClassifier {
    fn classify(&mut self, inputs: ArrayView2<'_, f64>) -> Result<Vec<u32>>;
}

impl<F> BaseClassifier for F
where
    F: FnMut(ArrayView1<'_, f64>) -> u32,
{
    fn classify(&mut self, inputs: ArrayView2<'_, f64>) -> Result<Vec<u32>> {
        Ok(inputs.outer_iter().map(self).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CertifyOutcome {
    Abstain,
    Certified { class: u32, radius: f64, p_lower: f64 },
}

impl CertifyOutcome {
    pub fn is_abstain(&self) -> bool {
        matches!(self, CertifyOutcome::Abstain)
    }

    pub fn class(&self) -> Option<u32> {
        match self {
            CertifyOutcome::Abstain => None,
            CertifyOutcome::Certified { class, .. } => Some(*class),
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            CertifyOutcome::Abstain => None,
            CertifyOutcome::Certified { radius, .. } => Some(*radius),
        }
    }
}

const BISECTION_TOL: f64 = 1e-12;

/// One-sided exact lower confidence bound on a binomial proportion: the
/// `alpha`-quantile of Beta(k, n − k + 1), i.e. the `p` solving
/// `P[Binomial(n, p) ≥ k] = alpha`. Zero when `k = 0`.
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::Parameter(format!("need 0 <= k <= n and n >= 1, got k = {k}, n = {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let (a, b) = (k as f64, (n - k + 1) as f64);
    // I_p(a, b) = P[Bin(n, p) >= k] is increasing in p.
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Abstain unless `p_lower > 1/2`; otherwise certify `class` with radius
/// `sigma · Φ⁻¹(p_lower)`.
pub fn decide(class: u32, p_lower: f64, sigma: f64) -> CertifyOutcome {
    if p_lower > 0.5 {
        CertifyOutcome::Certified {
            class,
            radius: sigma * normal_quantile(p_lower),
            p_lower,
        }
    } else {
        CertifyOutcome::Abstain
    }
}

fn noisy_counts<C, R>(
    classifier: &mut C,
    x: ArrayView1<'_, f64>,
    draws: usize,
    config: &CertifyConfig,
    rng: &mut R,
) -> Result<std::collections::BTreeMap<u32, u64>>
where
    C: BaseClassifier + ?Sized,
    R: Rng + ?Sized,
{
    let d = x.len();
    let mut counts = std::collections::BTreeMap::new();
    let mut remaining = draws;
    while remaining > 0 {
        let batch = remaining.min(config.batch_size);
        let noisy = Array2::from_shape_fn((batch, d), |(_, j)| {
            let z: f64 = rng.sample(StandardNormal);
            x[j] + config.sigma * z
        });
        let labels = classifier.classify(noisy.view())?;
        if labels.len() != batch {
            return Err(Error::Evaluation(format!(
                "classifier returned {} labels for {batch} inputs",
                labels.len()
            )));
        }
        for l in labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        remaining -= batch;
    }
    Ok(counts)
}

/// Certify `x` under Gaussian smoothing of `classifier`.
pub fn certify<C, R>(classifier: &mut C, x: ArrayView1<'_, f64>, config: &CertifyConfig, rng: &mut R) -> Result<CertifyOutcome>
where
    C: BaseClassifier + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    let selection = noisy_counts(classifier, x, config.n0, config, rng)?;
    // most frequent; ties toward the smaller class id
    let top = selection
        .iter()
        .fold(None, |best: Option<(u32, u64)>, (&c, &k)| match best {
            Some((_, bk)) if bk >= k => best,
            _ => Some((c, k)),
        })
        .map(|(c, _)| c)
        .expect("n0 >= 1");
    let estimation = noisy_counts(classifier, x, config.n, config, rng)?;
    let k = estimation.get(&top).copied().unwrap_or(0);
    let p_lower = clopper_pearson_lower(k, config.n as u64, config.alpha)?;
    Ok(decide(top, p_lower, config.sigma))
}

/// One certified example with its density bin and true label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinnedOutcome {
    pub bin: usize,
    pub truth: u32,
    pub outcome: CertifyOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinCertification {
    pub bin: usize,
    pub count: usize,
    /// Over non-abstaining outcomes; `None` when there are none.
    pub mean_radius: Option<f64>,
    pub std_radius: Option<f64>,
    /// Fraction of outcomes that did not abstain.
    pub classification_rate: Option<f64>,
    /// Macro F-score with abstentions counted as errors.
    pub f_score_abstain_as_error: Option<f64>,
    /// Macro F-score over non-abstaining outcomes only.
    pub f_score_certified_only: Option<f64>,
}

/// Per-bin radius statistics, classification rate and F-scores for bins
/// `0..bins`. Empty bins yield rows of `None`.
pub fn certification_report(outcomes: &[BinnedOutcome], bins: usize) -> Vec<BinCertification> {
    (0..bins)
        .map(|bin| {
            let rows: Vec<&BinnedOutcome> = outcomes.iter().filter(|o| o.bin == bin).collect();
            let radii: Vec<f64> = rows.iter().filter_map(|o| o.outcome.radius()).collect();
            let (mean_radius, std_radius) = match mean_std(&radii) {
                Some((m, s)) => (Some(m), Some(s)),
                None => (None, None),
            };
            let classification_rate = (!rows.is_empty()).then(|| radii.len() as f64 / rows.len() as f64);
            let truth: Vec<u32> = rows.iter().map(|o| o.truth).collect();
            let predicted: Vec<Option<u32>> = rows.iter().map(|o| o.outcome.class()).collect();
            let f_all = (!rows.is_empty()).then(|| macro_f_score(&truth, &predicted));
            let certified: Vec<(u32, Option<u32>)> = rows
                .iter()
                .filter(|o| !o.outcome.is_abstain())
                .map(|o| (o.truth, o.outcome.class()))
                .collect();
            let f_cert = (!certified.is_empty()).then(|| {
                let (t, p): (Vec<u32>, Vec<Option<u32>>) = certified.into_iter().unzip();
                macro_f_score(&t, &p)
            });
            BinCertification {
                bin,
                count: rows.len(),
                mean_radius,
                std_radius,
                classification_rate,
                f_score_abstain_as_error: f_all,
                f_score_certified_only: f_cert,
            }
        })
        .collect()
}
