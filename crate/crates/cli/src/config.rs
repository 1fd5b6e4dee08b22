//! Run configuration, read from a TOML file. Every key is optional; missing
//! keys take the defaults below.
//!
//! ```toml
//! seed = 0
//! min_class_size = 100
//! memorization_threshold = 0.9
//! bins = 50
//!
//! [svd]
//! targets = [16, 16, 64, 64]   # output dims per stage index
//!
//! [sampler]
//! sweeps = 400
//! burn_in = 320
//! thin = 4
//! block_size = 4
//! resample_alpha = true
//! # initial_alpha = 1.0
//!
//! [kl]
//! samples_per_snapshot = 1024
//!
//! [certify]
//! sigma = 0.5
//! n0 = 100
//! n = 100000
//! alpha = 0.001
//! batch_size = 1000
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use repdensity::certify::CertifyConfig;
use repdensity::{Error, KlConfig, SamplerConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub min_class_size: usize,
    pub memorization_threshold: f64,
    pub bins: usize,
    pub svd: SvdSection,
    pub sampler: SamplerSection,
    pub kl: KlSection,
    pub certify: CertifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            min_class_size: repdensity::analysis::DEFAULT_MIN_CLASS_SIZE,
            memorization_threshold: repdensity::analysis::DEFAULT_MEMORIZATION_THRESHOLD,
            bins: repdensity::analysis::DEFAULT_BINS,
            svd: SvdSection::default(),
            sampler: SamplerSection::default(),
            kl: KlSection::default(),
            certify: CertifySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdSection {
    pub targets: Vec<usize>,
}

impl Default for SvdSection {
    fn default() -> Self {
        Self { targets: vec![16, 16, 64, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub block_size: usize,
    pub resample_alpha: bool,
    pub initial_alpha: Option<f64>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            sweeps: d.sweeps,
            burn_in: d.burn_in,
            thin: d.thin,
            block_size: d.block_size,
            resample_alpha: d.resample_alpha,
            initial_alpha: d.initial_alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlSection {
    pub samples_per_snapshot: usize,
}

impl Default for KlSection {
    fn default() -> Self {
        Self { samples_per_snapshot: KlConfig::default().samples_per_snapshot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub sigma: f64,
    pub n0: usize,
    pub n: usize,
    pub alpha: f64,
    pub batch_size: usize,
}

impl Default for CertifySection {
    fn default() -> Self {
        let d = CertifyConfig::default();
        Self { sigma: d.sigma, n0: d.n0, n: d.n, alpha: d.alpha, batch_size: d.batch_size }
    }
}

/// Per-purpose seeds derived from the global one so that, e.g., class 3's
/// chain and class 3's KL draws never share a stream.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0xA076_1D64_78BD_642F) ^ index.wrapping_mul(0xE703_7ED1_A0B4_28DB);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const SEED_FIT: u64 = 1;
pub const SEED_KL: u64 = 2;
pub const SEED_CERTIFY: u64 = 3;
pub const SEED_SUBSETS: u64 = 4;

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| Error::Io { path: p.to_path_buf(), source })?;
                toml::from_str(&text).map_err(|e| CliError::Config {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.sampler_config(0).validate()?;
        self.kl_config(0).validate()?;
        self.certify_config().validate()?;
        if self.bins == 0 {
            return Err(Error::Parameter("bins must be at least 1".into()));
        }
        if self.svd.targets.contains(&0) {
            return Err(Error::Parameter("svd targets must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            sweeps: s.sweeps,
            burn_in: s.burn_in,
            thin: s.thin,
            block_size: s.block_size,
            seed,
            resample_alpha: s.resample_alpha,
            initial_alpha: s.initial_alpha,
        }
    }

    pub fn kl_config(&self, seed: u64) -> KlConfig {
        KlConfig { samples_per_snapshot: self.kl.samples_per_snapshot, seed }
    }

    pub fn certify_config(&self) -> CertifyConfig {
        let c = &self.certify;
        CertifyConfig {
            sigma: c.sigma,
            n0: c.n0,
            n: c.n,
            alpha: c.alpha,
            seed: derive_seed(self.seed, SEED_CERTIFY, 0),
            batch_size: c.batch_size,
        }
    }
}
