//! Monte-Carlo posterior predictive built from retained chain snapshots, and
//! KL-divergence estimates against tractable reference densities.
//!
//! Each snapshot `t` induces a conditional predictive: a Student-t mixture
//! with weights `n_k / (n + α)` plus the prior predictive with weight
//! `α / (n + α)`. The full predictive averages these conditionals (in the log
//! domain). KL estimates draw `m` points from every conditional and average
//! `log p(x | D, c_t) − log q(x)`.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{log_mean_exp, log_sum_exp, mean_std, sample_log_weights};
use crate::niw::{ComponentStats, NiwParams};
use crate::sampler::{chain_rng, Snapshot};

/// Anything with an evaluable log-density.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &[f64]) -> f64;
}

/// Variance floor of [`DiagonalGaussian`].
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variances: Vec<f64>,
    log_norm: f64,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if mean.len() != variances.len() || mean.is_empty() {
            return Err(Error::Parameter("mean and variances must have equal, non-zero length".into()));
        }
        if mean.iter().chain(&variances).any(|v| !v.is_finite()) || variances.iter().any(|&v| v < 0.0) {
            return Err(Error::Parameter("invalid Gaussian parameters".into()));
        }
        let variances: Vec<f64> = variances.into_iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
        let log_norm = -0.5
            * variances
                .iter()
                .map(|v| (2.0 * std::f64::consts::PI * v).ln())
                .sum::<f64>();
        Ok(Self {
            mean,
            variances,
            log_norm,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variances)
            .map(|(m, v)| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }
}

impl LogDensity for DiagonalGaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let q: f64 = x
            .iter()
            .zip(&self.mean)
            .zip(&self.variances)
            .map(|((a, m), v)| (a - m).powi(2) / v)
            .sum();
        self.log_norm - 0.5 * q
    }
}

/// Diagonal Gaussian matching the column means and population variances.
pub fn max_entropy_reference(data: ArrayView2<'_, f64>) -> Result<DiagonalGaussian> {
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = data.mean_axis(Axis(0)).expect("n >= 2");
    let var = data.var_axis(Axis(0), 0.0);
    DiagonalGaussian::new(mean.to_vec(), var.to_vec())
}

/// Mixture induced by one snapshot. The last weight belongs to the prior
/// predictive ("new component").
#[derive(Debug, Clone)]
struct SnapshotMixture {
    components: Vec<ComponentStats>,
    log_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PredictiveModel {
    snapshots: Vec<Snapshot>,
    data: Array2<f64>,
    prior: NiwParams,
    prior_stats: ComponentStats,
    mixtures: Vec<SnapshotMixture>,
}

impl PredictiveModel {
    pub fn new(snapshots: Vec<Snapshot>, data: Array2<f64>, prior: NiwParams) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Parameter("a predictive model needs at least one snapshot".into()));
        }
        let (n, d) = data.dim();
        if d != prior.dim() {
            return Err(Error::Parameter(format!("data has {d} columns, prior is {}-dimensional", prior.dim())));
        }
        if let Some(bad) = snapshots.iter().position(|s| s.assignments.len() != n) {
            return Err(Error::Parameter(format!(
                "snapshot {bad} has {} assignments for {n} rows",
                snapshots[bad].assignments.len()
            )));
        }
        let data = data.as_standard_layout().into_owned();
        let rows = data.as_slice().expect("standard layout");
        let mixtures = snapshots
            .par_iter()
            .map(|s| build_mixture(s, rows, d, &prior))
            .collect::<Result<Vec<_>>>()?;
        let prior_stats = ComponentStats::empty(&prior);
        Ok(Self {
            snapshots,
            data,
            prior,
            prior_stats,
            mixtures,
        })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn n_snapshots(&self) -> usize {
        self.snapshots.len()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn prior(&self) -> &NiwParams {
        &self.prior
    }

    /// Training rows the model was fitted to.
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    /// Normalized mixture weights of snapshot `t`; the last entry is the
    /// new-component weight `α / (n + α)`.
    pub fn conditional_weights(&self, t: usize) -> Vec<f64> {
        self.mixtures[t].log_weights.iter().map(|w| w.exp()).collect()
    }

    /// `ln p(x | D, c_t)`.
    pub fn conditional_logpdf(&self, t: usize, x: &[f64]) -> f64 {
        let mix = &self.mixtures[t];
        let mut terms = Vec::with_capacity(mix.log_weights.len());
        for (stats, lw) in mix.components.iter().zip(&mix.log_weights) {
            terms.push(lw + stats.log_predictive(&self.prior, x));
        }
        terms.push(mix.log_weights[mix.components.len()] + self.prior_stats.log_predictive(&self.prior, x));
        log_sum_exp(&terms)
    }

    /// `ln p(x | D)`: log-mean-exp of the snapshot conditionals.
    pub fn posterior_predictive_logpdf(&self, x: &[f64]) -> f64 {
        let per: Vec<f64> = (0..self.n_snapshots())
            .map(|t| self.conditional_logpdf(t, x))
            .collect();
        log_mean_exp(&per)
    }

    pub fn sample_conditional<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<f64> {
        let mix = &self.mixtures[t];
        let k = sample_log_weights(&mix.log_weights, rng.random::<f64>());
        let stats = mix.components.get(k).unwrap_or(&self.prior_stats);
        stats.sample_predictive(&self.prior, rng)
    }

    /// `count` draws stratified across snapshots: each snapshot gets
    /// `count / T` draws and the first `count % T` snapshots one more.
    pub fn sample_posterior_predictive<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<PredictiveDraws> {
        if count == 0 {
            return Err(Error::Parameter("draw count must be at least 1".into()));
        }
        let t_count = self.n_snapshots();
        let (base, extra) = (count / t_count, count % t_count);
        let d = self.prior.dim();
        let mut values = Vec::with_capacity(count * d);
        let mut source = Vec::with_capacity(count);
        for t in 0..t_count {
            let m = base + usize::from(t < extra);
            for _ in 0..m {
                values.extend(self.sample_conditional(t, rng));
                source.push(t);
            }
        }
        Ok(PredictiveDraws {
            draws: Array2::from_shape_vec((count, d), values).expect("shape"),
            source,
        })
    }
}

impl LogDensity for PredictiveModel {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.posterior_predictive_logpdf(x)
    }
}

/// A single snapshot's conditional predictive, usable as a reference density.
pub struct ConditionalPredictive<'a> {
    pub model: &'a PredictiveModel,
    pub snapshot: usize,
}

impl LogDensity for ConditionalPredictive<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.model.conditional_logpdf(self.snapshot, x)
    }
}

fn build_mixture(s: &Snapshot, rows: &[f64], d: usize, prior: &NiwParams) -> Result<SnapshotMixture> {
    let mut groups: std::collections::BTreeMap<u64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &a) in s.assignments.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    let n = s.assignments.len() as f64;
    let log_total = (n + s.alpha).ln();
    let mut components = Vec::with_capacity(groups.len());
    let mut log_weights = Vec::with_capacity(groups.len() + 1);
    for members in groups.values() {
        let stats = ComponentStats::from_rows(prior, members.iter().map(|&i| &rows[i * d..(i + 1) * d]))?;
        log_weights.push((members.len() as f64).ln() - log_total);
        components.push(stats);
    }
    log_weights.push(s.alpha.ln() - log_total);
    debug_assert!((log_weights.iter().map(|w| w.exp()).sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(SnapshotMixture {
        components,
        log_weights,
    })
}

/// Draws with the index of the snapshot each one came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub draws: Array2<f64>,
    pub source: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlConfig {
    /// Draws per snapshot (`m`).
    pub samples_per_snapshot: usize,
    pub seed: u64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            samples_per_snapshot: 1024,
            seed: 0,
        }
    }
}

impl KlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_snapshot == 0 {
            return Err(Error::Parameter("samples_per_snapshot must be at least 1".into()));
        }
        Ok(())
    }
}

/// Monte-Carlo KL estimate in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    /// `+inf` when the reference assigned zero density to any draw.
    pub estimate: f64,
    /// Standard error of the mean over the finite terms.
    pub stderr: f64,
    pub n_snapshots: usize,
    pub samples_per_snapshot: usize,
    /// Draws on which the reference log-density was `-inf`.
    pub infinite_terms: usize,
}

/// `(1/nm) Σ_t Σ_s [ln p(x_st | D, c_t) − ln q(x_st)]` with `x_st` drawn from
/// the `t`-th conditional predictive.
pub fn kl_to_reference(model: &PredictiveModel, q: &dyn LogDensity, config: &KlConfig) -> Result<KlEstimate> {
    config.validate()?;
    if q.dim() != model.dim() {
        return Err(Error::Parameter(format!(
            "reference is {}-dimensional, model is {}-dimensional",
            q.dim(),
            model.dim()
        )));
    }
    let m = config.samples_per_snapshot;
    let per_snapshot: Vec<(Vec<f64>, usize)> = (0..model.n_snapshots())
        .into_par_iter()
        .map(|t| {
            let mut rng: ChaCha8Rng = chain_rng(config.seed);
            rng.set_stream(t as u64);
            let mut terms = Vec::with_capacity(m);
            let mut infinite = 0;
            for _ in 0..m {
                let x = model.sample_conditional(t, &mut rng);
                let lq = q.log_density(&x);
                if lq == f64::NEG_INFINITY {
                    infinite += 1;
                    continue;
                }
                terms.push(model.conditional_logpdf(t, &x) - lq);
            }
            (terms, infinite)
        })
        .collect();
    let infinite_terms: usize = per_snapshot.iter().map(|(_, i)| i).sum();
    let terms: Vec<f64> = per_snapshot.into_iter().flat_map(|(t, _)| t).collect();
    let (mean, sd) = mean_std(&terms).unwrap_or((f64::NAN, f64::NAN));
    let stderr = if terms.len() > 1 {
        sd * (terms.len() as f64 / (terms.len() - 1) as f64).sqrt() / (terms.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(KlEstimate {
        estimate: if infinite_terms > 0 { f64::INFINITY } else { mean },
        stderr,
        n_snapshots: model.n_snapshots(),
        samples_per_snapshot: m,
        infinite_terms,
    })
}

/// KL from `q_model`'s full posterior predictive to `p_model`'s.
pub fn kl_between_predictives(p_model: &PredictiveModel, q_model: &PredictiveModel, config: &KlConfig) -> Result<KlEstimate> {
    kl_to_reference(p_model, q_model, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn prior_1d() -> NiwParams {
        NiwParams::new(vec![0.0], 1.0, 3.0, vec![2.0]).unwrap()
    }

    fn hand_model() -> PredictiveModel {
        // counts {2, 1}, alpha = 1
        let data = array![[0.0], [0.5], [4.0]];
        let snap = Snapshot { alpha: 1.0, assignments: vec![7, 7, 9] };
        PredictiveModel::new(vec![snap], data, prior_1d()).unwrap()
    }

    /// Student-t density written out directly from the NIW posterior.
    fn student_t(x: f64, prior: &NiwParams, rows: &[f64]) -> f64 {
        use statrs::function::gamma::gamma;
        let n = rows.len() as f64;
        let mean = if rows.is_empty() { 0.0 } else { rows.iter().sum::<f64>() / n };
        let kn = prior.kappa0() + n;
        let nun = prior.nu0() + n;
        let mun = (prior.kappa0() * prior.mu0()[0] + n * mean) / kn;
        let s: f64 = rows.iter().map(|r| (r - mean).powi(2)).sum();
        let psin = prior.psi0()[0] + s + prior.kappa0() * n / kn * (mean - prior.mu0()[0]).powi(2);
        let dof = nun;
        let scale2 = psin * (kn + 1.0) / (kn * dof);
        gamma((dof + 1.0) / 2.0) / gamma(dof / 2.0) / (dof * std::f64::consts::PI * scale2).sqrt()
            * (1.0 + (x - mun).powi(2) / (dof * scale2)).powf(-(dof + 1.0) / 2.0)
    }

    #[test]
    fn hand_mixture_matches_direct_sum() {
        let model = hand_model();
        let p = prior_1d();
        for x in [-3.0, 0.2, 2.0, 4.1, 9.0] {
            let direct = 0.5 * student_t(x, &p, &[0.0, 0.5])
                + 0.25 * student_t(x, &p, &[4.0])
                + 0.25 * student_t(x, &p, &[]);
            assert!((model.conditional_logpdf(0, &[x]) - direct.ln()).abs() < 1e-10, "x = {x}");
        }
        let w = model.conditional_weights(0);
        assert_eq!(w.len(), 3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_mixture_is_single_component() {
        let data = array![[0.0], [1.0], [2.5]];
        let p = prior_1d();
        let snap = Snapshot { alpha: 1e-300, assignments: vec![1, 1, 1] };
        let model = PredictiveModel::new(vec![snap], data.clone(), p.clone()).unwrap();
        let stats = ComponentStats::from_rows(&p, data.outer_iter().map(|r| r.to_slice().unwrap())).unwrap();
        for x in [-1.0, 0.7, 5.0] {
            assert!((model.conditional_logpdf(0, &[x]) - stats.log_predictive(&p, &[x])).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_single_and_duplicated_snapshots() {
        let model = hand_model();
        let x = [1.3];
        assert_eq!(model.posterior_predictive_logpdf(&x), model.conditional_logpdf(0, &x));
        let snap = model.snapshots()[0].clone();
        let tripled = PredictiveModel::new(vec![snap.clone(), snap.clone(), snap], model.data().to_owned(), prior_1d()).unwrap();
        assert!((tripled.posterior_predictive_logpdf(&x) - model.posterior_predictive_logpdf(&x)).abs() < 1e-12);
    }

    #[test]
    fn stratified_draws() {
        let model = hand_model();
        let snap = model.snapshots()[0].clone();
        let model = PredictiveModel::new(vec![snap.clone(), snap.clone(), snap], model.data().to_owned(), prior_1d()).unwrap();
        let mut rng = chain_rng(1);
        let draws = model.sample_posterior_predictive(9, &mut rng).unwrap();
        assert_eq!(draws.source, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
        let again = model.sample_posterior_predictive(9, &mut chain_rng(1)).unwrap();
        assert_eq!(draws, again);
        let uneven = model.sample_posterior_predictive(4, &mut rng).unwrap();
        assert_eq!(uneven.source, vec![0, 0, 1, 2]);
        assert!(model.sample_posterior_predictive(0, &mut rng).is_err());
    }

    #[test]
    fn max_entropy_examples() {
        let g = max_entropy_reference(array![[1.0], [3.0]].view()).unwrap();
        assert_eq!(g.mean(), &[2.0]);
        assert_eq!(g.variances(), &[1.0]);
        let g = max_entropy_reference(array![[1.0, -1.0], [-1.0, 1.0]].view()).unwrap();
        assert_eq!(g.mean(), &[0.0, 0.0]);
        assert_eq!(g.variances(), &[1.0, 1.0]);
        let g = max_entropy_reference(array![[2.0, 0.0], [2.0, 1.0]].view()).unwrap();
        assert_eq!(g.variances()[0], VARIANCE_FLOOR);
        assert!(matches!(
            max_entropy_reference(array![[1.0]].view()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn self_reference_gives_exact_zero() {
        let model = hand_model();
        let q = ConditionalPredictive { model: &model, snapshot: 0 };
        let kl = kl_to_reference(&model, &q, &KlConfig { samples_per_snapshot: 64, seed: 3 }).unwrap();
        assert_eq!(kl.estimate, 0.0);
        assert_eq!(kl.n_snapshots, 1);
        assert_eq!(kl.samples_per_snapshot, 64);
    }

    struct Nowhere;
    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density(&self, _: &[f64]) -> f64 {
            f64::NEG_INFINITY
        }
    }

    #[test]
    fn zero_reference_density_is_infinite() {
        let kl = kl_to_reference(&hand_model(), &Nowhere, &KlConfig { samples_per_snapshot: 8, seed: 0 }).unwrap();
        assert_eq!(kl.estimate, f64::INFINITY);
        assert_eq!(kl.infinite_terms, 8);
    }

    #[test]
    fn kl_checks_dimension() {
        let q = DiagonalGaussian::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            kl_to_reference(&hand_model(), &q, &KlConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn model_rejects_bad_snapshots() {
        let p = prior_1d();
        assert!(PredictiveModel::new(vec![], array![[0.0]], p.clone()).is_err());
        let snap = Snapshot { alpha: 1.0, assignments: vec![0, 0] };
        assert!(PredictiveModel::new(vec![snap], array![[0.0]], p).is_err());
    }
}
