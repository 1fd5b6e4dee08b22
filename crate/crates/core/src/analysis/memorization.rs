//! Memorization scores from training-trial records, and the memorized /
//! least-memorized / random example subsets.
//!
//! Trial file layout (little-endian):
//!
//! ```text
//! "TRLS" | version u16 = 1 | n_examples u64 | n_trials u64
//!        | n_trials x (inclusion bitmask, correctness bitmask)
//! ```
//!
//! Each bitmask takes `ceil(n_examples / 8)` bytes, bit `i % 8` of byte
//! `i / 8` describing example `i`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::sampler::chain_rng;

pub const TRIALS_MAGIC: &[u8; 4] = b"TRLS";
pub const TRIALS_VERSION: u16 = 1;
pub const DEFAULT_MEMORIZATION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    /// Whether each example was in this trial's training set.
    pub included: Vec<bool>,
    /// Whether the trained model classified each example correctly.
    pub correct: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecords {
    n_examples: usize,
    trials: Vec<Trial>,
}

impl TrialRecords {
    pub fn new(n_examples: usize, trials: Vec<Trial>) -> Result<Self> {
        if let Some(t) = trials
            .iter()
            .position(|t| t.included.len() != n_examples || t.correct.len() != n_examples)
        {
            return Err(Error::Validation(format!(
                "trial {t} masks do not cover {n_examples} examples"
            )));
        }
        Ok(Self { n_examples, trials })
    }

    pub fn n_examples(&self) -> usize {
        self.n_examples
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(TRIALS_MAGIC)?;
        w.write_all(&TRIALS_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_examples as u64).to_le_bytes())?;
        w.write_all(&(self.trials.len() as u64).to_le_bytes())?;
        for t in &self.trials {
            w.write_all(&pack_bits(&t.included))?;
            w.write_all(&pack_bits(&t.correct))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 22];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated trial-records header".into()))?;
        if &header[..4] != TRIALS_MAGIC {
            return Err(Error::Format("bad magic, expected \"TRLS\"".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != TRIALS_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(header[6..14].try_into().unwrap()) as usize;
        let n_trials = u64::from_le_bytes(header[14..22].try_into().unwrap()) as usize;
        let mask_len = n.div_ceil(8);
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)
            .map_err(|e| Error::Corruption(e.to_string()))?;
        if Some(payload.len()) != (2 * mask_len).checked_mul(n_trials) {
            return Err(Error::Corruption(format!(
                "{n_trials} trials over {n} examples need {} bytes, found {}",
                2 * mask_len * n_trials,
                payload.len()
            )));
        }
        let trials = if mask_len == 0 {
            vec![Trial { included: vec![], correct: vec![] }; n_trials]
        } else {
            payload
                .chunks_exact(2 * mask_len)
                .map(|c| Trial {
                    included: unpack_bits(&c[..mask_len], n),
                    correct: unpack_bits(&c[mask_len..], n),
                })
                .collect()
        };
        Self::new(n, trials)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Per-example `P̂[correct | included] − P̂[correct | excluded]`.
pub fn memorization_from_trials(records: &TrialRecords) -> Result<Vec<f64>> {
    let n = records.n_examples;
    let mut inc = vec![(0u64, 0u64); n];
    let mut exc = vec![(0u64, 0u64); n];
    for t in &records.trials {
        for i in 0..n {
            let slot = if t.included[i] { &mut inc[i] } else { &mut exc[i] };
            slot.0 += u64::from(t.correct[i]);
            slot.1 += 1;
        }
    }
    let undefined: Vec<usize> = (0..n).filter(|&i| inc[i].1 == 0 || exc[i].1 == 0).collect();
    if !undefined.is_empty() {
        return Err(Error::UndefinedScore(undefined));
    }
    Ok((0..n)
        .map(|i| inc[i].0 as f64 / inc[i].1 as f64 - exc[i].0 as f64 / exc[i].1 as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationSubsets {
    /// Examples scoring above the threshold, ascending by index.
    pub memorized: Vec<usize>,
    /// The same number of examples with the smallest scores.
    pub least_memorized: Vec<usize>,
    /// The same number drawn uniformly from all examples.
    pub random: Vec<usize>,
    /// Classes with at least `min_class_size` members in every subset.
    pub eligible_classes: Vec<u32>,
}

pub fn select_memorization_subsets(
    scores: &[f64],
    labels: &[u32],
    threshold: f64,
    min_class_size: usize,
    seed: u64,
) -> Result<MemorizationSubsets> {
    if scores.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} scores for {} examples",
            scores.len(),
            labels.len()
        )));
    }
    let memorized: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    if memorized.is_empty() {
        return Err(Error::EmptySubset(format!("no example scores above {threshold}")));
    }
    let count = memorized.len();
    let mut by_score: Vec<usize> = (0..scores.len()).collect();
    by_score.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut least_memorized = by_score[..count].to_vec();
    least_memorized.sort_unstable();
    let mut rng = chain_rng(seed);
    let mut random = sample(&mut rng, scores.len(), count).into_vec();
    random.sort_unstable();

    let class_counts = |idx: &[usize]| {
        let mut m: BTreeMap<u32, usize> = BTreeMap::new();
        for &i in idx {
            *m.entry(labels[i]).or_insert(0) += 1;
        }
        m
    };
    let (cm, cl, cr) = (
        class_counts(&memorized),
        class_counts(&least_memorized),
        class_counts(&random),
    );
    let eligible_classes = cm
        .iter()
        .filter(|(c, &k)| {
            k >= min_class_size
                && cl.get(c).copied().unwrap_or(0) >= min_class_size
                && cr.get(c).copied().unwrap_or(0) >= min_class_size
        })
        .map(|(&c, _)| c)
        .collect();
    Ok(MemorizationSubsets {
        memorized,
        least_memorized,
        random,
        eligible_classes,
    })
}
