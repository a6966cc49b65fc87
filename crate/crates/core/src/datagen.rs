//! Synthetic datasets with engineered fragile classes, the `.mxds` file
//! format, and a reader for CIFAR binary batches.
//!
//! Robust classes are Gaussian clusters around orthonormal unit directions.
//! Fragile classes sit on the direction of a robust "host" class at larger
//! magnitudes (rungs `1 + k * (scale - 1)`), so their identity is carried by
//! feature scale only. Any convex combination with another sample shrinks
//! that scale and moves the mix out of the fragile band well before a robust
//! sample would lose its own label, and mixes of a host with an outer rung
//! land squarely on the inner rungs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keys, RngStream};
use crate::tensor::{LabeledBatch, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn tag(self) -> u32 {
        match self {
            Split::Train => 0,
            Split::Eval => 1,
        }
    }

    fn from_tag(tag: u32) -> Option<Split> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Eval),
            _ => None,
        }
    }
}

/// Per-channel normalization constants applied at ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: Split,
    pub normalization: Option<ChannelNorm>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "features {:?} vs {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
            return Err(Error::Validation(format!("label {bad} >= n_classes {n_classes}")));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
            split,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.row_len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &c in &self.labels {
            counts[c] += 1;
        }
        counts
    }

    /// Indices of all samples of class `c`.
    pub fn indices_of(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == c).collect()
    }

    /// One-hot batch over the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> Result<LabeledBatch> {
        let classes: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        LabeledBatch::from_hard(self.features.select_rows(idx), &classes, self.n_classes)
    }

    /// Per-class feature means.
    pub fn centroids(&self) -> Vec<Vec<f64>> {
        let f = self.n_features();
        let mut sums = vec![vec![0.0; f]; self.n_classes];
        let counts = self.class_counts();
        for i in 0..self.len() {
            for (s, &v) in sums[self.labels[i]].iter_mut().zip(self.features.row(i)) {
                *s += v;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            if n > 0 {
                s.iter_mut().for_each(|v| *v /= n as f64);
            }
        }
        sums
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragilitySpec {
    pub n_classes: usize,
    pub n_fragile: usize,
    /// Expected radius of the isotropic cluster noise.
    pub overlap: f64,
    /// When false, fragile classes get their own direction like any robust class.
    pub magnitude_coding: bool,
    pub n_features: usize,
    /// Center norm of the first magnitude rung (robust centers have norm 1).
    /// Rung `k` sits at `1 + k * (fragile_scale - 1)`.
    pub fragile_scale: f64,
    /// Magnitude-coded classes stacked on each host direction.
    pub fragile_per_host: usize,
    /// Fraction of training labels swapped for a uniformly drawn other class.
    /// Evaluation labels are always clean.
    #[serde(default)]
    pub label_noise: f64,
}

impl Default for FragilitySpec {
    fn default() -> Self {
        FragilitySpec {
            n_classes: 8,
            n_fragile: 2,
            overlap: 0.6,
            magnitude_coding: true,
            n_features: 16,
            fragile_scale: 1.7,
            fragile_per_host: 2,
            label_noise: 0.0,
        }
    }
}

impl FragilitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Parameter("need at least two classes".into()));
        }
        if self.n_fragile > self.n_classes {
            return Err(Error::Parameter(format!(
                "n_fragile {} > n_classes {}",
                self.n_fragile, self.n_classes
            )));
        }
        if !(self.overlap >= 0.0) || !self.overlap.is_finite() {
            return Err(Error::Parameter(format!("overlap {} must be >= 0", self.overlap)));
        }
        let dirs = self.n_directions();
        if self.magnitude_coding && self.fragile_per_host == 0 {
            return Err(Error::Parameter("fragile_per_host must be >= 1".into()));
        }
        if self.magnitude_coding && self.n_fragile > dirs * self.fragile_per_host {
            return Err(Error::Parameter(format!(
                "{} fragile classes do not fit on {dirs} hosts with {} rungs each",
                self.n_fragile, self.fragile_per_host
            )));
        }
        if dirs > self.n_features {
            return Err(Error::Parameter(format!(
                "{dirs} class directions do not fit in {} features",
                self.n_features
            )));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::Parameter(format!("label_noise {} must lie in [0, 1)", self.label_noise)));
        }
        if self.magnitude_coding && !(self.fragile_scale > 1.0) {
            return Err(Error::Parameter("fragile_scale must exceed 1".into()));
        }
        Ok(())
    }

    fn n_directions(&self) -> usize {
        if self.magnitude_coding {
            self.n_classes - self.n_fragile
        } else {
            self.n_classes
        }
    }

    /// Fragile classes occupy the last `n_fragile` indices.
    pub fn fragile_classes(&self) -> Vec<usize> {
        (self.n_classes - self.n_fragile..self.n_classes).collect()
    }

    pub fn robust_classes(&self) -> Vec<usize> {
        (0..self.n_classes - self.n_fragile).collect()
    }

    /// The robust class whose direction a fragile class shares.
    pub fn host_of(&self, class: usize) -> Option<usize> {
        self.rung_of(class).map(|(host, _)| host)
    }

    /// `(host, rung)` of a magnitude-coded class; rungs count from 1.
    pub fn rung_of(&self, class: usize) -> Option<(usize, usize)> {
        let first = self.n_classes - self.n_fragile;
        (self.magnitude_coding && class >= first && class < self.n_classes).then(|| {
            let f = class - first;
            (f / self.fragile_per_host, f % self.fragile_per_host + 1)
        })
    }

    /// Center norm of a class.
    pub fn scale_of(&self, class: usize) -> f64 {
        match self.rung_of(class) {
            Some((_, rung)) => 1.0 + rung as f64 * (self.fragile_scale - 1.0),
            None => 1.0,
        }
    }

    /// Class centers; depend only on the stream's address.
    pub fn centers(&self, stream: &RngStream) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut s = stream.derive(keys::CENTERS, 0);
        let f = self.n_features;
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        while dirs.len() < self.n_directions() {
            let mut v: Vec<f64> = (0..f).map(|_| s.normal()).collect();
            for d in &dirs {
                let dot: f64 = v.iter().zip(d).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(d).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|a| *a /= norm);
            dirs.push(v);
        }
        Ok((0..self.n_classes)
            .map(|c| {
                let dir = &dirs[self.host_of(c).unwrap_or(c)];
                dir.iter().map(|a| a * self.scale_of(c)).collect()
            })
            .collect())
    }
}

/// Generates one class-balanced split. Centers come from `stream`'s address;
/// samples come from a split-specific child stream, so train and eval never
/// share draws.
pub fn make_blobs(
    spec: &FragilitySpec,
    n_per_class: usize,
    split: Split,
    stream: &RngStream,
) -> Result<Dataset> {
    if n_per_class < 1 {
        return Err(Error::Parameter("n_per_class must be >= 1".into()));
    }
    let centers = spec.centers(stream)?;
    let key = match split {
        Split::Train => keys::TRAIN_SPLIT,
        Split::Eval => keys::EVAL_SPLIT,
    };
    let mut s = stream.derive(key, 0);
    let f = spec.n_features;
    let sd = spec.overlap / (f as f64).sqrt();
    let n = n_per_class * spec.n_classes;
    let mut data = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // interleave classes so any prefix is near-balanced
        let c = i % spec.n_classes;
        for &m in &centers[c] {
            // stored as f32 on disk; quantize now so files round-trip exactly
            data.push((m + sd * s.normal()) as f32 as f64);
        }
        labels.push(c);
    }
    if split == Split::Train && spec.label_noise > 0.0 {
        // separate child stream: features do not depend on the noise level
        let mut ns = stream.derive(keys::LABEL_NOISE, 0);
        for y in &mut labels {
            if ns.uniform() < spec.label_noise {
                *y = (*y + 1 + ns.below(spec.n_classes - 1)) % spec.n_classes;
            }
        }
    }
    Dataset::new(Tensor::new(vec![n, f], data)?, labels, spec.n_classes, split)
}

const MXDS_MAGIC: &[u8; 4] = b"MXDS";
const MXDS_VERSION: u32 = 1;
const MXDS_HEADER: usize = 24;

/// Serializes to the `.mxds` layout: a 24-byte header (magic, version,
/// n_samples, n_features, n_classes, split tag as little-endian u32) followed
/// by f32 features and u32 labels.
pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(MXDS_HEADER + d.features.len() * 4 + d.len() * 4);
    out.extend_from_slice(MXDS_MAGIC);
    for v in [
        MXDS_VERSION,
        d.len() as u32,
        d.n_features() as u32,
        d.n_classes as u32,
        d.split.tag(),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in d.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &c in &d.labels {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(offset, "truncated"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < MXDS_HEADER {
        return Err(Error::format(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != MXDS_MAGIC {
        return Err(Error::format(0, "bad magic, expected MXDS"));
    }
    let version = read_u32(bytes, 4)?;
    if version != MXDS_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let n = read_u32(bytes, 8)? as usize;
    let f = read_u32(bytes, 12)? as usize;
    let m = read_u32(bytes, 16)? as usize;
    let split = Split::from_tag(read_u32(bytes, 20)?)
        .ok_or_else(|| Error::format(20, "unknown split tag"))?;
    if n == 0 || f == 0 || m == 0 {
        return Err(Error::format(8, "zero extent in header"));
    }
    let need = MXDS_HEADER + n * f * 4 + n * 4;
    if bytes.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("payload truncated: header declares {n} samples, need {need} bytes"),
        ));
    }
    if bytes.len() > need {
        return Err(Error::format(need, "trailing bytes after label block"));
    }
    let mut data = Vec::with_capacity(n * f);
    let mut off = MXDS_HEADER;
    for _ in 0..n * f {
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
        off += 4;
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = read_u32(bytes, off)? as usize;
        if c >= m {
            return Err(Error::format(off, format!("label {c} >= n_classes {m}")));
        }
        labels.push(c);
        off += 4;
    }
    Dataset::new(Tensor::new(vec![n, f], data)?, labels, m, split)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

const CIFAR_PIXELS: usize = 3072;

/// Reads a CIFAR-10 (`n_classes == 10`, one label byte) or CIFAR-100
/// (`n_classes == 100`, coarse + fine label bytes; the fine label is used)
/// binary batch. Pixels are scaled to `[0, 1]` and then normalized per
/// channel with the file's own mean and standard deviation.
pub fn ingest_cifar_binary(path: &Path, n_classes: usize) -> Result<Dataset> {
    decode_cifar(&fs::read(path)?, n_classes)
}

pub fn decode_cifar(bytes: &[u8], n_classes: usize) -> Result<Dataset> {
    let label_bytes = match n_classes {
        10 => 1,
        100 => 2,
        other => return Err(Error::Parameter(format!("n_classes must be 10 or 100, got {other}"))),
    };
    let row = label_bytes + CIFAR_PIXELS;
    if bytes.is_empty() {
        return Err(Error::format(0, "empty CIFAR file"));
    }
    if !bytes.len().is_multiple_of(row) {
        return Err(Error::format(
            bytes.len() - bytes.len() % row,
            format!("file size {} is not a multiple of row size {row}", bytes.len()),
        ));
    }
    let n = bytes.len() / row;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for i in 0..n {
        let start = i * row;
        let label = bytes[start + label_bytes - 1] as usize;
        if label >= n_classes {
            return Err(Error::format(
                start + label_bytes - 1,
                format!("label {label} >= n_classes {n_classes}"),
            ));
        }
        labels.push(label);
        data.extend(
            bytes[start + label_bytes..start + row]
                .iter()
                .map(|&p| p as f64 / 255.0),
        );
    }
    let plane = CIFAR_PIXELS / 3;
    let mut norm = ChannelNorm {
        mean: vec![0.0; 3],
        std: vec![0.0; 3],
    };
    for ch in 0..3 {
        let vals = || (0..n).flat_map(|i| data[i * CIFAR_PIXELS + ch * plane..][..plane].iter());
        let count = (n * plane) as f64;
        let mean = vals().sum::<f64>() / count;
        let var = vals().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        norm.mean[ch] = mean;
        norm.std[ch] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    for i in 0..n {
        for ch in 0..3 {
            for v in &mut data[i * CIFAR_PIXELS + ch * plane..][..plane] {
                *v = ((*v - norm.mean[ch]) / norm.std[ch]) as f32 as f64;
            }
        }
    }
    let mut d = Dataset::new(
        Tensor::new(vec![n, CIFAR_PIXELS], data)?,
        labels,
        n_classes,
        Split::Train,
    )?;
    d.normalization = Some(norm);
    Ok(d)
}
