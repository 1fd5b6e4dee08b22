use super::report::{ClassDensityReport, ClassGroups};
use crate::error::{Error, Result};
use crate::math::mean_std;

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct BinSummary {
    pub bin: usize,
    pub size: usize,
    pub mean_log_density: f64,
    pub std_log_density: f64,
    pub mean_memorization: Option<f64>,
    pub std_memorization: Option<f64>,
    /// Fraction of the bin's examples from low-density classes.
    pub low_fraction: Option<f64>,
    pub high_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityBinning {
    /// Example ids per bin, ascending log-density within and across bins.
    pub bins: Vec<Vec<usize>>,
    pub summaries: Vec<BinSummary>,
}

/// Sort examples by log-density and cut them into `bins` contiguous bins of
/// near-equal size; the first `n % bins` bins take one extra example.
///
/// `memorization`, when given, is indexed by example id.
pub fn density_bins(
    report: &ClassDensityReport,
    memorization: Option<&[f64]>,
    groups: Option<&ClassGroups>,
    bins: usize,
) -> Result<DensityBinning> {
    let n = report.records.len();
    if bins == 0 || bins > n {
        return Err(Error::Parameter(format!("cannot split {n} examples into {bins} bins")));
    }
    if let Some(mem) = memorization {
        if let Some(r) = report.records.iter().find(|r| r.example >= mem.len()) {
            return Err(Error::Parameter(format!("no memorization score for example {}", r.example)));
        }
    }
    let mut sorted = report.records.clone();
    // `+ 0.0` folds -0.0 into 0.0 so the two tie
    sorted.sort_by(|a, b| (a.log_density + 0.0).total_cmp(&(b.log_density + 0.0)).then(a.example.cmp(&b.example)));

    let (base, extra) = (n / bins, n % bins);
    let mut out_bins = Vec::with_capacity(bins);
    let mut summaries = Vec::with_capacity(bins);
    let mut start = 0;
    for bin in 0..bins {
        let size = base + usize::from(bin < extra);
        let members = &sorted[start..start + size];
        start += size;

        let logp: Vec<f64> = members.iter().map(|r| r.log_density).collect();
        let (mean_log_density, std_log_density) = mean_std(&logp).expect("bins are non-empty");
        let (mean_memorization, std_memorization) = match memorization {
            Some(mem) => {
                let v: Vec<f64> = members.iter().map(|r| mem[r.example]).collect();
                let (m, s) = mean_std(&v).expect("bins are non-empty");
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        let frac = |set: &std::collections::BTreeSet<u32>| {
            members.iter().filter(|r| set.contains(&r.class)).count() as f64 / size as f64
        };
        summaries.push(BinSummary {
            bin,
            size,
            mean_log_density,
            std_log_density,
            mean_memorization,
            std_memorization,
            low_fraction: groups.map(|g| frac(&g.low)),
            high_fraction: groups.map(|g| frac(&g.high)),
        });
        out_bins.push(members.iter().map(|r| r.example).collect());
    }
    Ok(DensityBinning {
        bins: out_bins,
        summaries,
    })
}
