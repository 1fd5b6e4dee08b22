//! Collapsed Gibbs sampling over component assignments of a Dirichlet-process
//! Gaussian mixture with an NIW base measure.
//!
//! Component parameters are integrated out; the chain state is the vector of
//! assignments, the per-component sufficient statistics and the concentration
//! `alpha`. Two transition kernels are provided: the plain single-site sweep
//! and the block sweep, which re-draws the assignments of `b` observations at a
//! time, each independently from its conditional given the state outside the
//! block. Blocks are consecutive runs of a fresh random permutation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};

use crate::error::{Error, Result};
use crate::math::sample_log_weights;
use crate::niw::{ComponentStats, NiwParams};

pub type ComponentId = u64;

/// Seeded random stream used by every sampler in the crate.
pub type ChainRng = ChaCha8Rng;

pub fn chain_rng(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Total passes over the data.
    pub sweeps: usize,
    /// Leading passes that are discarded.
    pub burn_in: usize,
    /// Keep every `thin`-th pass after burn-in.
    pub thin: usize,
    pub block_size: usize,
    pub seed: u64,
    pub resample_alpha: bool,
    /// Starting concentration; drawn from Gamma(1, 1) when `None`.
    pub initial_alpha: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            sweeps: 400,
            burn_in: 320,
            thin: 4,
            block_size: 4,
            seed: 0,
            resample_alpha: true,
            initial_alpha: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.sweeps {
            return Err(Error::Parameter(format!(
                "burn_in ({}) must be smaller than sweeps ({})",
                self.burn_in, self.sweeps
            )));
        }
        if self.thin == 0 {
            return Err(Error::Parameter("thin must be at least 1".into()));
        }
        if self.block_size == 0 {
            return Err(Error::Parameter("block_size must be at least 1".into()));
        }
        if let Some(a) = self.initial_alpha {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Parameter(format!("initial alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// Whether the pass with zero-based index `sweep` is retained.
    pub fn retains(&self, sweep: usize) -> bool {
        sweep >= self.burn_in && (sweep - self.burn_in).is_multiple_of(self.thin)
    }

    pub fn retained_count(&self) -> usize {
        (0..self.sweeps).filter(|&s| self.retains(s)).count()
    }
}

/// Retained chain state: assignments and concentration only. Component
/// statistics are rebuilt from the data when needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub alpha: f64,
    pub assignments: Vec<ComponentId>,
}

impl Snapshot {
    /// Assignments relabelled `0, 1, ...` in order of first appearance.
    pub fn canonical_labels(&self) -> Vec<usize> {
        canonical_labels(&self.assignments)
    }

    pub fn component_count(&self) -> usize {
        let mut ids = self.assignments.clone();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

pub fn canonical_labels(assignments: &[ComponentId]) -> Vec<usize> {
    let mut seen: Vec<ComponentId> = Vec::new();
    assignments
        .iter()
        .map(|a| match seen.iter().position(|s| s == a) {
            Some(p) => p,
            None => {
                seen.push(*a);
                seen.len() - 1
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    assignments: Vec<ComponentId>,
    components: BTreeMap<ComponentId, ComponentStats>,
    alpha: f64,
    step_index: u64,
    next_id: ComponentId,
}

impl ChainState {
    pub fn assignments(&self) -> &[ComponentId] {
        &self.assignments
    }

    pub fn components(&self) -> &BTreeMap<ComponentId, ComponentStats> {
        &self.components
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            alpha: self.alpha,
            assignments: self.assignments.clone(),
        }
    }

    /// Checks every structural invariant of the state.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if !(self.alpha > 0.0) {
            return Err(format!("alpha = {} is not positive", self.alpha));
        }
        let mut counts: BTreeMap<ComponentId, usize> = BTreeMap::new();
        for &a in &self.assignments {
            *counts.entry(a).or_insert(0) += 1;
        }
        if counts.len() != self.components.len() {
            return Err(format!(
                "{} assigned components but {} in the table",
                counts.len(),
                self.components.len()
            ));
        }
        for (id, stats) in &self.components {
            if stats.count() == 0 {
                return Err(format!("component {id} is empty"));
            }
            if counts.get(id) != Some(&stats.count()) {
                return Err(format!(
                    "component {id} stores count {} but has {:?} members",
                    stats.count(),
                    counts.get(id)
                ));
            }
            if *id >= self.next_id {
                return Err(format!("component id {id} was never issued"));
            }
        }
        Ok(())
    }

    /// Largest relative deviation of any component's incremental statistics
    /// from a batch recomputation.
    pub fn max_batch_deviation(&self, data: ArrayView2<'_, f64>, prior: &NiwParams) -> Result<f64> {
        let rows = RowData::new(data);
        let mut worst = 0.0f64;
        for (id, stats) in &self.components {
            let dev = stats.batch_deviation(prior, self.member_rows(&rows, *id))?;
            worst = worst.max(dev);
        }
        Ok(worst)
    }

    fn member_rows<'a>(&'a self, rows: &'a RowData<'a>, id: ComponentId) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == id)
            .map(move |(i, _)| rows.row(i))
    }

    fn debug_check(&self) {
        if cfg!(debug_assertions) {
            if let Err(e) = self.check_invariants() {
                panic!("chain invariant violated: {e}");
            }
        }
    }
}

/// Row-major view of the training matrix.
struct RowData<'a> {
    values: std::borrow::Cow<'a, [f64]>,
    d: usize,
}

impl<'a> RowData<'a> {
    fn new(data: ArrayView2<'a, f64>) -> Self {
        let d = data.ncols();
        let values = match data.to_slice() {
            Some(s) => std::borrow::Cow::Borrowed(s),
            None => std::borrow::Cow::Owned(data.iter().copied().collect()),
        };
        Self { values, d }
    }

    fn len(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.values.len() / self.d
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }
}

pub fn init_chain(data: ArrayView2<'_, f64>, prior: &NiwParams, config: &SamplerConfig) -> Result<ChainState> {
    config.validate()?;
    let mut rng = chain_rng(config.seed);
    init_with_rng(data, prior, config, &mut rng)
}

fn init_with_rng<R: Rng + ?Sized>(
    data: ArrayView2<'_, f64>,
    prior: &NiwParams,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<ChainState> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::Parameter("cannot start a chain on empty data".into()));
    }
    if data.ncols() != prior.dim() {
        return Err(Error::Parameter(format!(
            "data has {} columns, prior is {}-dimensional",
            data.ncols(),
            prior.dim()
        )));
    }
    let rows = RowData::new(data);
    let stats = ComponentStats::from_rows(prior, (0..n).map(|i| rows.row(i)))?;
    let alpha = match config.initial_alpha {
        Some(a) => a,
        None => Gamma::new(1.0, 1.0).expect("valid gamma").sample(rng),
    };
    let mut components = BTreeMap::new();
    components.insert(0, stats);
    Ok(ChainState {
        assignments: vec![0; n],
        components,
        alpha,
        step_index: 0,
        next_id: 1,
    })
}

enum Choice {
    Existing(ComponentId),
    New,
}

/// Working context for one pass: data rows, prior and the cached
/// prior-predictive log-density of each row.
struct Mover<'a> {
    rows: RowData<'a>,
    prior: &'a NiwParams,
    prior_lp: Vec<f64>,
    detached: Vec<bool>,
    ids: Vec<ComponentId>,
    log_weights: Vec<f64>,
}

impl<'a> Mover<'a> {
    fn new(data: ArrayView2<'a, f64>, prior: &'a NiwParams) -> Result<Self> {
        if data.ncols() != prior.dim() {
            return Err(Error::Parameter("data and prior dimensions differ".into()));
        }
        let rows = RowData::new(data);
        let empty = ComponentStats::empty(prior);
        let prior_lp = (0..rows.len())
            .map(|i| empty.log_predictive(prior, rows.row(i)))
            .collect();
        let n = rows.len();
        Ok(Self {
            rows,
            prior,
            prior_lp,
            detached: vec![false; n],
            ids: Vec::new(),
            log_weights: Vec::new(),
        })
    }

    fn check_len(&self, state: &ChainState) -> Result<()> {
        if state.len() != self.rows.len() {
            return Err(Error::Parameter(format!(
                "state has {} assignments for {} rows",
                state.len(),
                self.rows.len()
            )));
        }
        Ok(())
    }

    /// Take observation `i` out of its component.
    fn detach(&mut self, state: &mut ChainState, i: usize) -> Result<()> {
        let id = state.assignments[i];
        let x = self.rows.row(i);
        self.detached[i] = true;
        let stats = state.components.get_mut(&id).expect("assigned component exists");
        match stats.remove_observation(x, self.prior) {
            Ok(()) => {}
            Err(Error::Numerical(_)) => {
                // Downdate lost definiteness: rebuild from the remaining members.
                let rows = &self.rows;
                let detached = &self.detached;
                let members = state
                    .assignments
                    .iter()
                    .enumerate()
                    .filter(|&(j, &a)| a == id && !detached[j])
                    .map(|(j, _)| rows.row(j));
                *stats = ComponentStats::from_rows(self.prior, members)?;
            }
            Err(e) => return Err(e),
        }
        if stats.count() == 0 {
            state.components.remove(&id);
        }
        Ok(())
    }

    /// Draw a component for detached observation `i` given the current table.
    fn choose<R: Rng + ?Sized>(&mut self, state: &ChainState, i: usize, rng: &mut R) -> Choice {
        let x = self.rows.row(i);
        self.ids.clear();
        self.log_weights.clear();
        for (&id, stats) in &state.components {
            self.ids.push(id);
            self.log_weights
                .push((stats.count() as f64).ln() + stats.log_predictive(self.prior, x));
        }
        self.log_weights.push(state.alpha.ln() + self.prior_lp[i]);
        let pick = sample_log_weights(&self.log_weights, rng.random::<f64>());
        if pick < self.ids.len() {
            Choice::Existing(self.ids[pick])
        } else {
            Choice::New
        }
    }

    fn attach(&mut self, state: &mut ChainState, i: usize, choice: Choice) -> Result<()> {
        let x = self.rows.row(i);
        let id = match choice {
            Choice::Existing(id) => id,
            Choice::New => {
                let id = state.next_id;
                state.next_id += 1;
                state.components.insert(id, ComponentStats::empty(self.prior));
                id
            }
        };
        state
            .components
            .get_mut(&id)
            .expect("chosen component exists")
            .add_observation(x, self.prior)?;
        state.assignments[i] = id;
        self.detached[i] = false;
        Ok(())
    }

    fn plain_sweep<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R) -> Result<()> {
        for i in 0..state.len() {
            self.detach(state, i)?;
            let choice = self.choose(state, i, rng);
            self.attach(state, i, choice)?;
            debug_assert_eq!(
                state.components.values().map(|c| c.count()).sum::<usize>(),
                state.len()
            );
        }
        Ok(())
    }

    fn block_sweep<R: Rng + ?Sized>(&mut self, state: &mut ChainState, rng: &mut R, block_size: usize) -> Result<()> {
        let mut order: Vec<usize> = (0..state.len()).collect();
        order.shuffle(rng);
        let mut choices = Vec::with_capacity(block_size);
        for block in order.chunks(block_size) {
            for &i in block {
                self.detach(state, i)?;
            }
            choices.clear();
            for &i in block {
                choices.push(self.choose(state, i, rng));
            }
            // Each "new" draw opens its own component.
            for (&i, choice) in block.iter().zip(choices.drain(..)) {
                self.attach(state, i, choice)?;
            }
            debug_assert_eq!(
                state.components.values().map(|c| c.count()).sum::<usize>(),
                state.len()
            );
        }
        Ok(())
    }
}

/// One single-site pass in index order.
pub fn plain_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: ArrayView2<'_, f64>,
    prior: &NiwParams,
    rng: &mut R,
) -> Result<()> {
    let mut mover = Mover::new(data, prior)?;
    mover.check_len(state)?;
    mover.plain_sweep(state, rng)?;
    state.step_index += 1;
    state.debug_check();
    Ok(())
}

/// One block pass: permute, cut into consecutive blocks of `block_size`
/// (the last one may be shorter) and re-draw each block.
pub fn block_gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: ArrayView2<'_, f64>,
    prior: &NiwParams,
    rng: &mut R,
    block_size: usize,
) -> Result<()> {
    if block_size == 0 {
        return Err(Error::Parameter("block size must be at least 1".into()));
    }
    let mut mover = Mover::new(data, prior)?;
    mover.check_len(state)?;
    mover.block_sweep(state, rng, block_size)?;
    state.step_index += 1;
    state.debug_check();
    Ok(())
}

/// Auxiliary-variable update of `alpha` under its Gamma(1, 1) prior, given
/// the current number of components and observations.
pub fn resample_alpha<R: Rng + ?Sized>(state: &mut ChainState, rng: &mut R) {
    let k = state.component_count().max(1);
    state.alpha = draw_alpha(state.alpha, k, state.len(), rng);
}

const ALPHA_SHAPE: f64 = 1.0;
const ALPHA_RATE: f64 = 1.0;

pub(crate) fn draw_alpha<R: Rng + ?Sized>(alpha: f64, k: usize, n: usize, rng: &mut R) -> f64 {
    let n = n.max(1) as f64;
    let k = k as f64;
    let eta: f64 = Beta::new(alpha + 1.0, n).expect("valid beta").sample(rng);
    let rate = ALPHA_RATE - eta.ln();
    let odds = (ALPHA_SHAPE + k - 1.0) / (n * rate);
    let shape = if rng.random::<f64>() < odds / (1.0 + odds) {
        ALPHA_SHAPE + k
    } else {
        ALPHA_SHAPE + k - 1.0
    };
    let draw: f64 = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng);
    draw.max(f64::MIN_POSITIVE)
}

/// Sweeps between batch-consistency spot checks in [`run`].
pub const DRIFT_CHECK_INTERVAL: usize = 50;
const DRIFT_TOLERANCE: f64 = 1e-6;

/// Run a block-Gibbs chain under `config` and return the retained snapshots.
pub fn run(data: ArrayView2<'_, f64>, prior: &NiwParams, config: &SamplerConfig) -> Result<Vec<Snapshot>> {
    config.validate()?;
    let mut rng = chain_rng(config.seed);
    let mut state = init_with_rng(data, prior, config, &mut rng)?;
    let mut mover = Mover::new(data, prior)?;
    let mut retained = Vec::with_capacity(config.retained_count());
    for sweep in 0..config.sweeps {
        mover.block_sweep(&mut state, &mut rng, config.block_size)?;
        state.step_index += 1;
        if config.resample_alpha {
            resample_alpha(&mut state, &mut rng);
        }
        state.debug_check();
        if (sweep + 1) % DRIFT_CHECK_INTERVAL == 0 {
            repair_drift(&mut state, &mover.rows, prior)?;
        }
        if config.retains(sweep) {
            retained.push(state.snapshot());
        }
    }
    Ok(retained)
}

fn repair_drift(state: &mut ChainState, rows: &RowData<'_>, prior: &NiwParams) -> Result<()> {
    let ids: Vec<ComponentId> = state.components.keys().copied().collect();
    for id in ids {
        let dev = state.components[&id].batch_deviation(prior, state.member_rows(rows, id))?;
        if dev > DRIFT_TOLERANCE {
            let rebuilt = ComponentStats::from_rows(prior, state.member_rows(rows, id))?;
            state.components.insert(id, rebuilt);
        }
    }
    Ok(())
}

/// Pairwise co-clustering frequencies (`n x n`) over a set of snapshots.
pub fn co_clustering(snapshots: &[Snapshot]) -> Array2<f64> {
    let n = snapshots.first().map_or(0, |s| s.assignments.len());
    let mut m = Array2::zeros((n, n));
    for s in snapshots {
        for i in 0..n {
            for j in 0..n {
                if s.assignments[i] == s.assignments[j] {
                    m[[i, j]] += 1.0;
                }
            }
        }
    }
    if !snapshots.is_empty() {
        m /= snapshots.len() as f64;
    }
    m
}

pub const ARCHIVE_MAGIC: &[u8; 4] = b"DPSS";
pub const ARCHIVE_VERSION: u16 = 1;

/// Snapshot archive:
/// `"DPSS" | version u16 | n u64 | d u64 | count u64 | count x (alpha f64, n x u64)`.
pub fn write_snapshots<W: Write>(mut w: W, d: usize, snapshots: &[Snapshot]) -> std::io::Result<()> {
    let n = snapshots.first().map_or(0, |s| s.assignments.len());
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    w.write_all(&(n as u64).to_le_bytes())?;
    w.write_all(&(d as u64).to_le_bytes())?;
    w.write_all(&(snapshots.len() as u64).to_le_bytes())?;
    for s in snapshots {
        assert_eq!(s.assignments.len(), n, "snapshots must share one dataset");
        w.write_all(&s.alpha.to_le_bytes())?;
        for &a in &s.assignments {
            w.write_all(&a.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Returns `(n, d, snapshots)`.
pub fn read_snapshots<R: Read>(mut r: R) -> Result<(usize, usize, Vec<Snapshot>)> {
    let mut header = [0u8; 30];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated snapshot archive header".into()))?;
    if &header[0..4] != ARCHIVE_MAGIC {
        return Err(Error::Format("bad magic, expected \"DPSS\"".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != ARCHIVE_VERSION {
        return Err(Error::Format(format!("unsupported archive version {version}")));
    }
    let n = u64::from_le_bytes(header[6..14].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(header[14..22].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[22..30].try_into().unwrap()) as usize;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)
        .map_err(|e| Error::Corruption(e.to_string()))?;
    let per = 8 * (n + 1);
    if Some(payload.len()) != per.checked_mul(count) {
        return Err(Error::Corruption(format!(
            "archive declares {count} snapshots of {n} assignments, payload has {} bytes",
            payload.len()
        )));
    }
    let snapshots = payload
        .chunks_exact(per.max(1))
        .map(|chunk| {
            let alpha = f64::from_le_bytes(chunk[..8].try_into().unwrap());
            let assignments = chunk[8..]
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Snapshot { alpha, assignments }
        })
        .collect::<Vec<_>>();
    for s in &snapshots {
        if !(s.alpha > 0.0) || !s.alpha.is_finite() {
            return Err(Error::Validation(format!("snapshot alpha {} is not positive", s.alpha)));
        }
    }
    Ok((n, d, snapshots))
}

pub fn save_snapshots(path: impl AsRef<Path>, d: usize, snapshots: &[Snapshot]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_snapshots(&mut w, d, snapshots).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_snapshots(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Snapshot>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshots(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn unit_prior(d: usize) -> NiwParams {
        let mut psi = vec![0.0; d * d];
        for i in 0..d {
            psi[i * d + i] = 1.0;
        }
        NiwParams::new(vec![0.0; d], 1.0, d as f64 + 2.0, psi).unwrap()
    }

    fn two_clusters(n_each: usize, seed: u64) -> Array2<f64> {
        let mut rng = chain_rng(seed);
        Array2::from_shape_fn((2 * n_each, 1), |(i, _)| {
            let c = if i < n_each { -100.0 } else { 100.0 };
            let z: f64 = rng.sample(StandardNormal);
            c + z
        })
    }

    #[test]
    fn default_schedule_keeps_twenty() {
        let c = SamplerConfig::default();
        assert_eq!((c.sweeps, c.burn_in, c.thin, c.block_size), (400, 320, 4, 4));
        assert!(c.resample_alpha);
        assert_eq!(c.retained_count(), 20);
        let c = SamplerConfig {
            sweeps: 10,
            burn_in: 0,
            thin: 1,
            ..Default::default()
        };
        assert_eq!(c.retained_count(), 10);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SamplerConfig { burn_in: 400, ..Default::default() },
            SamplerConfig { thin: 0, ..Default::default() },
            SamplerConfig { block_size: 0, ..Default::default() },
            SamplerConfig { initial_alpha: Some(0.0), ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn init_puts_everything_in_one_component() {
        let data = array![[1.0, 2.0], [0.0, 1.0], [3.0, 3.0], [1.0, -1.0], [2.0, 0.5]];
        let prior = unit_prior(2);
        let config = SamplerConfig { seed: 3, ..Default::default() };
        let s = init_chain(data.view(), &prior, &config).unwrap();
        assert_eq!(s.component_count(), 1);
        assert_eq!(s.components()[&0].count(), 5);
        assert_eq!(s, init_chain(data.view(), &prior, &config).unwrap());
        assert!(s.alpha() > 0.0);
        let batch = crate::niw::posterior_update(&prior, data.view()).unwrap();
        let psi = s.components()[&0].psi();
        assert!(psi.iter().zip(batch.psi0()).all(|(a, b)| (a - b).abs() < 1e-12));
        s.check_invariants().unwrap();
    }

    #[test]
    fn empty_data_rejected() {
        let data = Array2::<f64>::zeros((0, 2));
        assert!(matches!(
            init_chain(data.view(), &unit_prior(2), &SamplerConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn new_component_weight_vanishes_with_alpha() {
        let data = array![[0.0], [0.1], [0.2]];
        let prior = unit_prior(1);
        let mut state = init_chain(
            data.view(),
            &prior,
            &SamplerConfig { initial_alpha: Some(1e-300), ..Default::default() },
        )
        .unwrap();
        let mut rng = chain_rng(1);
        for _ in 0..200 {
            plain_gibbs_sweep(&mut state, data.view(), &prior, &mut rng).unwrap();
            assert_eq!(state.component_count(), 1);
        }
    }

    #[test]
    fn sweeps_keep_a_valid_partition() {
        let data = two_clusters(10, 5);
        let prior = crate::representation::derive_prior(data.view()).unwrap();
        let mut state = init_chain(data.view(), &prior, &SamplerConfig::default()).unwrap();
        let mut rng = chain_rng(2);
        for sweep in 0..20 {
            if sweep % 2 == 0 {
                plain_gibbs_sweep(&mut state, data.view(), &prior, &mut rng).unwrap();
            } else {
                block_gibbs_sweep(&mut state, data.view(), &prior, &mut rng, 3).unwrap();
            }
            state.check_invariants().unwrap();
            let total: usize = state.components().values().map(|c| c.count()).sum();
            assert_eq!(total, 20);
        }
        assert_eq!(state.step_index(), 20);
        assert!(state.max_batch_deviation(data.view(), &prior).unwrap() < 1e-6);
    }

    #[test]
    fn separated_clusters_are_found() {
        let data = two_clusters(20, 7);
        let prior = crate::representation::derive_prior(data.view()).unwrap();
        let config = SamplerConfig { sweeps: 300, burn_in: 150, thin: 1, seed: 11, ..Default::default() };
        let snaps = run(data.view(), &prior, &config).unwrap();
        let truth: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let good = snaps.iter().filter(|s| s.canonical_labels() == truth).count();
        assert!(good as f64 >= 0.95 * snaps.len() as f64, "{good}/{}", snaps.len());
    }

    #[test]
    fn run_is_deterministic() {
        let data = two_clusters(8, 1);
        let prior = crate::representation::derive_prior(data.view()).unwrap();
        let config = SamplerConfig { sweeps: 30, burn_in: 5, thin: 5, seed: 99, ..Default::default() };
        let a = run(data.view(), &prior, &config).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, run(data.view(), &prior, &config).unwrap());
        let other = run(data.view(), &prior, &SamplerConfig { seed: 100, ..config }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn alpha_stays_positive() {
        let mut rng = chain_rng(4);
        let mut alpha = 1.0;
        for k in 1..50 {
            alpha = draw_alpha(alpha, k, 100, &mut rng);
            assert!(alpha > 0.0);
        }
    }

    /// Mean of p(alpha | K, n) ∝ e^-alpha · alpha^K · Γ(alpha) / Γ(alpha + n)
    /// by trapezoid integration.
    fn conditional_alpha_mean(k: usize, n: usize) -> f64 {
        use statrs::function::gamma::ln_gamma;
        let log_p = |a: f64| -a + k as f64 * a.ln() + ln_gamma(a) - ln_gamma(a + n as f64);
        let (mut z, mut m) = (0.0, 0.0);
        let h = 1e-4;
        for i in 1..400_000 {
            let a = i as f64 * h;
            let p = log_p(a).exp();
            z += p;
            m += a * p;
        }
        m / z
    }

    fn empirical_alpha_mean(k: usize, n: usize, draws: usize, seed: u64) -> f64 {
        let mut rng = chain_rng(seed);
        let mut alpha = 1.0;
        for _ in 0..1000 {
            alpha = draw_alpha(alpha, k, n, &mut rng);
        }
        let mut sum = 0.0;
        for _ in 0..draws {
            alpha = draw_alpha(alpha, k, n, &mut rng);
            sum += alpha;
        }
        sum / draws as f64
    }

    #[test]
    fn alpha_conditional_single_observation() {
        let exact = conditional_alpha_mean(1, 1);
        assert!((exact - 1.0).abs() < 1e-3, "{exact}");
        let emp = empirical_alpha_mean(1, 1, 100_000, 8);
        assert!((emp - exact).abs() < 0.01 * exact, "{emp} vs {exact}");
    }

    #[test]
    fn alpha_grows_with_component_count() {
        let (lo, hi) = (conditional_alpha_mean(2, 100), conditional_alpha_mean(20, 100));
        let (elo, ehi) = (empirical_alpha_mean(2, 100, 10_000, 9), empirical_alpha_mean(20, 100, 10_000, 10));
        assert!(ehi > elo);
        assert!((elo - lo).abs() < 0.05 * lo, "{elo} vs {lo}");
        assert!((ehi - hi).abs() < 0.05 * hi, "{ehi} vs {hi}");
    }

    #[test]
    fn archive_round_trip_and_errors() {
        let snaps = vec![
            Snapshot { alpha: 0.5, assignments: vec![0, 0, 3] },
            Snapshot { alpha: 1.5, assignments: vec![4, 5, 4] },
        ];
        let mut buf = Vec::new();
        write_snapshots(&mut buf, 7, &snaps).unwrap();
        let (n, d, back) = read_snapshots(&buf[..]).unwrap();
        assert_eq!((n, d), (3, 7));
        assert_eq!(back, snaps);

        let mut bad = buf.clone();
        bad[1] = b'X';
        assert!(matches!(read_snapshots(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(read_snapshots(&buf[..buf.len() - 8]), Err(Error::Corruption(_))));
    }

    #[test]
    fn canonical_relabelling() {
        assert_eq!(canonical_labels(&[7, 3, 7, 9]), vec![0, 1, 0, 2]);
        let co = co_clustering(&[Snapshot { alpha: 1.0, assignments: vec![1, 1, 2] }]);
        assert_eq!(co[[0, 1]], 1.0);
        assert_eq!(co[[0, 2]], 0.0);
    }
}
