//! Normal-Inverse-Wishart conjugate analytics.
//!
//! A component's posterior is carried as sufficient statistics: the count,
//! the running sum and a lower Cholesky factor of the posterior scale `Ψn`.
//! Adding or removing one observation is a rank-1 update/downdate of that
//! factor:
//!
//! ```text
//! Ψ(n+1) = Ψn + κn/(κn+1) · (x − μn)(x − μn)ᵀ
//! Ψ(n−1) = Ψn − κn/(κn−1) · (x − μn)(x − μn)ᵀ
//! ```
//!
//! The posterior predictive is a multivariate Student-t with `νn − d + 1`
//! degrees of freedom, location `μn` and scale `Ψn (κn+1) / (κn (νn−d+1))`.

use std::f64::consts::PI;

use ndarray::ArrayView2;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;

/// NIW hyperparameters `(μ0, κ0, ν0, Ψ0)`. `psi0` is row-major `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwParams {
    mu0: Vec<f64>,
    kappa0: f64,
    nu0: f64,
    psi0: Vec<f64>,
    chol_psi0: Vec<f64>,
}

impl NiwParams {
    pub fn new(mu0: Vec<f64>, kappa0: f64, nu0: f64, psi0: Vec<f64>) -> Result<Self> {
        let d = mu0.len();
        if d == 0 {
            return Err(Error::Parameter("NIW dimension must be at least 1".into()));
        }
        if psi0.len() != d * d {
            return Err(Error::Parameter(format!(
                "psi0 has {} entries, expected {}",
                psi0.len(),
                d * d
            )));
        }
        if !(kappa0 > 0.0) || !kappa0.is_finite() {
            return Err(Error::Parameter(format!("kappa0 must be positive, got {kappa0}")));
        }
        if !(nu0 > d as f64 - 1.0) || !nu0.is_finite() {
            return Err(Error::Parameter(format!("nu0 must exceed d - 1 = {}, got {nu0}", d - 1)));
        }
        if mu0.iter().chain(&psi0).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite NIW hyperparameter".into()));
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (psi0[i * d + j], psi0[j * d + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Parameter("psi0 is not symmetric".into()));
                }
            }
        }
        let chol_psi0 = linalg::cholesky(&psi0, d)
            .ok_or_else(|| Error::Parameter("psi0 is not positive definite".into()))?;
        Ok(Self {
            mu0,
            kappa0,
            nu0,
            psi0,
            chol_psi0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn nu0(&self) -> f64 {
        self.nu0
    }

    pub fn psi0(&self) -> &[f64] {
        &self.psi0
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Parameter(format!(
                "dimension mismatch: prior is {}-dimensional, got {got}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Batch conjugate update of `prior` with the rows of `observations`.
pub fn posterior_update(prior: &NiwParams, observations: ArrayView2<'_, f64>) -> Result<NiwParams> {
    let d = prior.dim();
    prior.check_dim(observations.ncols())?;
    let n = observations.nrows();
    if n == 0 {
        return Ok(prior.clone());
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for row in observations.outer_iter() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    let kappa_n = prior.kappa0 + nf;
    let nu_n = prior.nu0 + nf;
    let mu_n: Vec<f64> = (0..d)
        .map(|j| (prior.kappa0 * prior.mu0[j] + nf * mean[j]) / kappa_n)
        .collect();

    let mut psi = prior.psi0.clone();
    for row in observations.outer_iter() {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in 0..d {
                psi[i * d + j] += ci * (row[j] - mean[j]);
            }
        }
    }
    let shrink = prior.kappa0 * nf / kappa_n;
    for i in 0..d {
        let di = mean[i] - prior.mu0[i];
        for j in 0..d {
            psi[i * d + j] += shrink * di * (mean[j] - prior.mu0[j]);
        }
    }
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let avg = 0.5 * (psi[i * d + j] + psi[j * d + i]);
            psi[i * d + j] = avg;
            psi[j * d + i] = avg;
        }
    }
    let chol = linalg::cholesky_jittered(&psi, d)?;
    Ok(NiwParams {
        mu0: mu_n,
        kappa0: kappa_n,
        nu0: nu_n,
        psi0: linalg::reconstruct(&chol, d),
        chol_psi0: chol,
    })
}

/// Sufficient statistics of one mixture component, with the posterior scale
/// kept as a Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentStats {
    count: usize,
    sum: Vec<f64>,
    chol_psi: Vec<f64>,
    log_det: f64,
    // cached predictive pieces, refreshed on every change
    mean: Vec<f64>,
    log_norm: f64,
}

impl ComponentStats {
    /// Statistics of an empty component (the prior itself).
    pub fn empty(prior: &NiwParams) -> Self {
        let d = prior.dim();
        let mut s = Self {
            count: 0,
            sum: vec![0.0; d],
            chol_psi: prior.chol_psi0.clone(),
            log_det: 0.0,
            mean: Vec::new(),
            log_norm: 0.0,
        };
        s.refresh(prior);
        s
    }

    /// Batch construction from rows.
    pub fn from_rows<'a>(prior: &NiwParams, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let d = prior.dim();
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.is_empty() {
            return Ok(Self::empty(prior));
        }
        let mut flat = Vec::with_capacity(rows.len() * d);
        for r in &rows {
            prior.check_dim(r.len())?;
            check_finite(r)?;
            flat.extend_from_slice(r);
        }
        let view = ArrayView2::from_shape((rows.len(), d), &flat).expect("shape checked");
        let post = posterior_update(prior, view)?;
        let mut sum = vec![0.0; d];
        for r in &rows {
            for (s, v) in sum.iter_mut().zip(r.iter()) {
                *s += v;
            }
        }
        let mut s = Self {
            count: rows.len(),
            sum,
            chol_psi: post.chol_psi0,
            log_det: 0.0,
            mean: Vec::new(),
            log_norm: 0.0,
        };
        s.refresh(prior);
        Ok(s)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn chol_psi(&self) -> &[f64] {
        &self.chol_psi
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    /// Posterior location `μn`.
    pub fn posterior_mean(&self) -> &[f64] {
        &self.mean
    }

    /// Posterior scale `Ψn`, reconstructed from the factor.
    pub fn psi(&self) -> Vec<f64> {
        linalg::reconstruct(&self.chol_psi, self.dim())
    }

    pub fn posterior(&self, prior: &NiwParams) -> NiwParams {
        NiwParams {
            mu0: self.mean.clone(),
            kappa0: prior.kappa0 + self.count as f64,
            nu0: prior.nu0 + self.count as f64,
            psi0: self.psi(),
            chol_psi0: self.chol_psi.clone(),
        }
    }

    fn kappa_n(&self, prior: &NiwParams) -> f64 {
        prior.kappa0 + self.count as f64
    }

    /// Degrees of freedom of the Student-t predictive.
    pub fn predictive_dof(&self, prior: &NiwParams) -> f64 {
        prior.nu0 + self.count as f64 - self.dim() as f64 + 1.0
    }

    fn refresh(&mut self, prior: &NiwParams) {
        let d = self.dim();
        let kappa_n = self.kappa_n(prior);
        self.mean = (0..d)
            .map(|j| (prior.kappa0 * prior.mu0[j] + self.sum[j]) / kappa_n)
            .collect();
        self.log_det = linalg::log_det(&self.chol_psi, d);
        let dof = self.predictive_dof(prior);
        let df = d as f64;
        self.log_norm = ln_gamma(0.5 * (dof + df))
            - ln_gamma(0.5 * dof)
            - 0.5 * df * (dof * PI).ln()
            - 0.5 * (self.log_det + df * ((kappa_n + 1.0) / (kappa_n * dof)).ln());
    }

    pub fn add_observation(&mut self, x: &[f64], prior: &NiwParams) -> Result<()> {
        prior.check_dim(x.len())?;
        check_finite(x)?;
        let d = self.dim();
        let kappa_n = self.kappa_n(prior);
        let scale = (kappa_n / (kappa_n + 1.0)).sqrt();
        let mut v: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| scale * (a - m)).collect();
        linalg::rank1_update(&mut self.chol_psi, &mut v, d);
        self.count += 1;
        for (s, a) in self.sum.iter_mut().zip(x) {
            *s += a;
        }
        self.refresh(prior);
        Ok(())
    }

    /// Inverse of [`add_observation`](Self::add_observation). On error the
    /// statistics are left unchanged.
    pub fn remove_observation(&mut self, x: &[f64], prior: &NiwParams) -> Result<()> {
        prior.check_dim(x.len())?;
        if self.count == 0 {
            return Err(Error::Underflow);
        }
        if self.count == 1 {
            *self = Self::empty(prior);
            return Ok(());
        }
        let d = self.dim();
        let kappa_n = self.kappa_n(prior);
        let scale = (kappa_n / (kappa_n - 1.0)).sqrt();
        let mut v: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| scale * (a - m)).collect();
        let mut chol = self.chol_psi.clone();
        linalg::rank1_downdate(&mut chol, &mut v, d)?;
        self.chol_psi = chol;
        self.count -= 1;
        for (s, a) in self.sum.iter_mut().zip(x) {
            *s -= a;
        }
        self.refresh(prior);
        Ok(())
    }

    /// Log posterior-predictive (Student-t) density at `x`.
    pub fn log_predictive(&self, prior: &NiwParams, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let mut diff = [0.0f64; 64];
        let mut heap;
        let diff: &mut [f64] = if d <= 64 {
            &mut diff[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        for ((o, a), m) in diff.iter_mut().zip(x).zip(&self.mean) {
            *o = a - m;
        }
        let r2 = linalg::solve_norm_sq(&self.chol_psi, diff, d);
        let kappa_n = self.kappa_n(prior);
        let dof = self.predictive_dof(prior);
        self.log_norm - 0.5 * (dof + d as f64) * (kappa_n / (kappa_n + 1.0) * r2).ln_1p()
    }

    /// One draw from the Student-t predictive: a Gaussian draw scaled by an
    /// inverse chi-square factor.
    pub fn sample_predictive<R: Rng + ?Sized>(&self, prior: &NiwParams, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let dof = self.predictive_dof(prior);
        let kappa_n = self.kappa_n(prior);
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let u: f64 = ChiSquared::new(dof).expect("dof > 0").sample(rng);
        let scale = ((kappa_n + 1.0) / (kappa_n * u)).sqrt();
        let lz = linalg::lower_mul(&self.chol_psi, &z, d);
        self.mean
            .iter()
            .zip(lz)
            .map(|(m, v)| m + scale * v)
            .collect()
    }

    /// Largest relative deviation of the incremental `Ψn` from a batch
    /// recomputation over `rows`.
    pub fn batch_deviation<'a>(
        &self,
        prior: &NiwParams,
        rows: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<f64> {
        let batch = Self::from_rows(prior, rows)?;
        if batch.count != self.count {
            return Ok(f64::INFINITY);
        }
        let a = self.psi();
        let b = batch.psi();
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let dev_psi = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
        let sscale = batch.sum.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let dev_sum = self
            .sum
            .iter()
            .zip(&batch.sum)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
            / sscale;
        Ok(dev_psi.max(dev_sum))
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("observation contains non-finite values".into()));
    }
    Ok(())
}
