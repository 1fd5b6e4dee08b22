//! Representation datasets: binary I/O, SVD projection, per-class splitting
//! and data-derived NIW priors.
//!
//! File layout (little-endian):
//!
//! ```text
//! "REPR" | version u16 = 1 | precision u8 (4 | 8) | reserved u8 = 0
//!        | n u64 | d u64 | tag_len u16 | tag bytes (UTF-8)
//!        | labels n x u32 | rows n*d floats, row-major
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::niw::NiwParams;

pub const REPR_MAGIC: &[u8; 4] = b"REPR";
pub const REPR_VERSION: u16 = 1;

/// Per-dimension variance floor used by [`derive_prior`].
pub const PRIOR_VARIANCE_FLOOR: f64 = 1e-9;
/// Prior pseudo-count used by [`derive_prior`].
pub const PRIOR_KAPPA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_marker(m: u8) -> Result<Self> {
        match m {
            4 => Ok(Precision::F32),
            8 => Ok(Precision::F64),
            other => Err(Error::Format(format!("unsupported precision marker {other}"))),
        }
    }
}

/// An `n x d` matrix of pooled activations with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationDataset {
    rows: Array2<f64>,
    labels: Vec<u32>,
    stage: String,
    precision: Precision,
}

impl RepresentationDataset {
    pub fn new(
        rows: Array2<f64>,
        labels: Vec<u32>,
        stage: impl Into<String>,
        precision: Precision,
    ) -> Result<Self> {
        if labels.len() != rows.nrows() {
            return Err(Error::Validation(format!(
                "{} labels for {} rows",
                labels.len(),
                rows.nrows()
            )));
        }
        if let Some(bad) = first_non_finite_row(rows.view()) {
            return Err(Error::Validation(format!("non-finite value in row {bad}")));
        }
        let stage = stage.into();
        if stage.len() > u16::MAX as usize {
            return Err(Error::Validation("stage tag longer than 65535 bytes".into()));
        }
        Ok(Self {
            rows,
            labels,
            stage,
            precision,
        })
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.rows.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn into_rows(self) -> Array2<f64> {
        self.rows
    }

    /// Row count per class id.
    pub fn class_histogram(&self) -> BTreeMap<u32, usize> {
        let mut hist = BTreeMap::new();
        for &l in &self.labels {
            *hist.entry(l).or_insert(0) += 1;
        }
        hist
    }

    pub fn class_indices(&self, class: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let rows = self.rows.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self {
            rows: rows.as_standard_layout().into_owned(),
            labels,
            stage: self.stage.clone(),
            precision: self.precision,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let (n, d) = self.rows.dim();
        w.write_all(REPR_MAGIC)?;
        w.write_all(&REPR_VERSION.to_le_bytes())?;
        w.write_all(&[self.precision.width() as u8, 0])?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&(d as u64).to_le_bytes())?;
        w.write_all(&(self.stage.len() as u16).to_le_bytes())?;
        w.write_all(self.stage.as_bytes())?;
        for &l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        for &v in self.rows.iter() {
            match self.precision {
                Precision::F32 => w.write_all(&(v as f32).to_le_bytes())?,
                Precision::F64 => w.write_all(&v.to_le_bytes())?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 24];
        read_header_bytes(&mut r, &mut header)?;
        if &header[0..4] != REPR_MAGIC {
            return Err(Error::Format("bad magic, expected \"REPR\"".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != REPR_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let precision = Precision::from_marker(header[6])?;
        if header[7] != 0 {
            return Err(Error::Format("reserved byte is not zero".into()));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let d = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;

        let mut tag_len = [0u8; 2];
        read_header_bytes(&mut r, &mut tag_len)?;
        let mut tag = vec![0u8; u16::from_le_bytes(tag_len) as usize];
        read_header_bytes(&mut r, &mut tag)?;
        let stage = String::from_utf8(tag)
            .map_err(|_| Error::Format("stage tag is not valid UTF-8".into()))?;

        let expected = n
            .checked_mul(d)
            .and_then(|nd| nd.checked_mul(precision.width()))
            .and_then(|b| b.checked_add(n.checked_mul(4)?))
            .ok_or_else(|| Error::Corruption(format!("header dimensions {n}x{d} overflow")))?;
        let mut payload = Vec::with_capacity(expected);
        r.read_to_end(&mut payload)
            .map_err(|e| Error::Corruption(e.to_string()))?;
        if payload.len() != expected {
            return Err(Error::Corruption(format!(
                "header declares {n} rows x {d} columns ({expected} payload bytes), found {}",
                payload.len()
            )));
        }

        let (label_bytes, value_bytes) = payload.split_at(n * 4);
        let labels: Vec<u32> = label_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let values: Vec<f64> = match precision {
            Precision::F32 => value_bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Precision::F64 => value_bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        let rows = Array2::from_shape_vec((n, d), values)
            .map_err(|e| Error::Corruption(e.to_string()))?;
        Self::new(rows, labels, stage, precision)
    }
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated header".into()),
        _ => Error::Format(e.to_string()),
    })
}

fn first_non_finite_row(rows: ArrayView2<'_, f64>) -> Option<usize> {
    rows.outer_iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
}

pub fn load_representations(path: impl AsRef<Path>) -> Result<RepresentationDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    RepresentationDataset::read_from(BufReader::new(file))
}

pub fn write_representations(path: impl AsRef<Path>, data: &RepresentationDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    data.write_to(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows grouped by class id; within-class order follows the input.
pub fn split_by_class(data: &RepresentationDataset) -> BTreeMap<u32, RepresentationDataset> {
    data.class_histogram()
        .keys()
        .map(|&c| (c, data.select(&data.class_indices(c))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SvdTarget {
    /// Keep exactly this many right-singular vectors.
    Dims(usize),
    /// Keep the fewest vectors whose captured variance reaches this fraction.
    VarianceFraction(f64),
}

/// Centered projection onto the leading right-singular vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdProjection {
    pub center: Array1<f64>,
    /// `d x d'`, orthonormal columns.
    pub basis: Array2<f64>,
    pub singular_values: Vec<f64>,
    pub variance_captured: f64,
    /// Every singular value of the centered data, non-increasing.
    pub all_singular_values: Vec<f64>,
}

impl SvdProjection {
    pub fn project(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.center.len() {
            return Err(Error::Parameter(format!(
                "rows have {} columns, projection expects {}",
                rows.ncols(),
                self.center.len()
            )));
        }
        let centered = &rows - &self.center.view().insert_axis(Axis(0));
        Ok(centered.dot(&self.basis))
    }

    /// Map projected rows back to the input space.
    pub fn reconstruct(&self, projected: ArrayView2<'_, f64>) -> Array2<f64> {
        projected.dot(&self.basis.t()) + self.center.view().insert_axis(Axis(0))
    }

    pub fn output_dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Cumulative captured-variance curve for `d' = 1..=d`.
    pub fn variance_curve(&self) -> Vec<f64> {
        variance_curve(&self.all_singular_values)
    }
}

fn variance_curve(singular_values: &[f64]) -> Vec<f64> {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    singular_values
        .iter()
        .map(|s| {
            acc += s * s;
            if total > 0.0 {
                (acc / total).min(1.0)
            } else {
                1.0
            }
        })
        .collect()
}

pub fn svd_reduce(
    data: &RepresentationDataset,
    target: SvdTarget,
) -> Result<(RepresentationDataset, SvdProjection)> {
    let (n, d) = data.rows.dim();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if let SvdTarget::Dims(k) = target {
        if k > d {
            return Err(Error::Parameter(format!("target dimension {k} exceeds input dimension {d}")));
        }
    }
    if let SvdTarget::VarianceFraction(f) = target {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Parameter(format!("variance fraction {f} outside [0, 1]")));
        }
    }

    let center = data.rows.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &data.rows - &center.view().insert_axis(Axis(0));

    // Zero rows leave the right-singular vectors unchanged and guarantee a
    // full set of d vectors even when n < d.
    let m = n.max(d);
    let padded = DMatrix::from_fn(m, d, |i, j| if i < n { centered[[i, j]] } else { 0.0 });
    let svd = padded.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not produce right-singular vectors".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let all_singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();

    let curve = variance_curve(&all_singular_values);
    let k = match target {
        SvdTarget::Dims(k) => k,
        SvdTarget::VarianceFraction(f) => curve
            .iter()
            .position(|&c| c >= f)
            .map(|p| p + 1)
            .unwrap_or(d),
    };

    let mut basis = Array2::zeros((d, k));
    for (col, &src) in order.iter().take(k).enumerate() {
        let v = v_t.row(src);
        // Deterministic sign: the largest-magnitude entry is positive.
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            basis[[j, col]] = sign * v[j];
        }
    }

    let projection = SvdProjection {
        center,
        basis,
        singular_values: all_singular_values[..k].to_vec(),
        variance_captured: if k == 0 { 0.0 } else { curve[k - 1] },
        all_singular_values,
    };
    let projected = centered.dot(&projection.basis);
    let reduced = RepresentationDataset::new(
        projected,
        data.labels.clone(),
        data.stage.clone(),
        data.precision,
    )?;
    Ok((reduced, projection))
}

/// Weakly-informative NIW prior from the data: location at the column mean,
/// `kappa0 = 0.01`, `nu0 = d + 2` and `psi0 = diag(var) * (nu0 - d - 1)` so the
/// prior-expected covariance is the empirical diagonal covariance.
pub fn derive_prior(rows: ArrayView2<'_, f64>) -> Result<NiwParams> {
    let (n, d) = rows.dim();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if d == 0 {
        return Err(Error::Parameter("zero-dimensional data".into()));
    }
    let mean = rows.mean_axis(Axis(0)).expect("n >= 2");
    let var = rows.var_axis(Axis(0), 0.0);
    let nu0 = d as f64 + 2.0;
    let factor = nu0 - d as f64 - 1.0;
    let mut psi0 = vec![0.0; d * d];
    for j in 0..d {
        psi0[j * d + j] = var[j].max(PRIOR_VARIANCE_FLOOR) * factor;
    }
    NiwParams::new(mean.to_vec(), PRIOR_KAPPA, nu0, psi0)
}
