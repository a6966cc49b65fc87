//! Dense row-major `f64` tensors and labeled batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("extents must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Builds a `[rows.len(), width]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Tensor::new(vec![rows.len(), width], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    /// Leading extent.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all extents after the first.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Gathers rows by index into a new tensor with the same trailing shape.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `lambda * a + (1 - lambda) * b`.
    pub fn lerp(a: &Tensor, b: &Tensor, lambda: f64) -> Result<Tensor> {
        if a.shape != b.shape {
            return Err(Error::Shape(format!(
                "lerp operands {:?} vs {:?}",
                a.shape, b.shape
            )));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!("lambda {lambda} outside [0, 1]")));
        }
        if lambda == 1.0 {
            return Ok(a.clone());
        }
        if lambda == 0.0 {
            return Ok(b.clone());
        }
        let mu = 1.0 - lambda;
        let data = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| lambda * x + mu * y)
            .collect();
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }
}

/// Convenience wrapper around [`Tensor::lerp`].
pub fn tensor_lerp(a: &Tensor, b: &Tensor, lambda: f64) -> Result<Tensor> {
    Tensor::lerp(a, b, lambda)
}

/// Feature rows paired with one label distribution per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub features: Tensor,
    pub labels: Tensor,
}

/// Tolerance on label-row sums.
pub const LABEL_SUM_TOL: f64 = 1e-9;

impl LabeledBatch {
    pub fn new(features: Tensor, labels: Tensor) -> Result<Self> {
        if labels.shape().len() != 2 || features.rows() != labels.rows() {
            return Err(Error::Shape(format!(
                "features {:?} vs labels {:?}",
                features.shape(),
                labels.shape()
            )));
        }
        Ok(LabeledBatch { features, labels })
    }

    /// One-hot labels from class indices.
    pub fn from_hard(features: Tensor, classes: &[usize], n_classes: usize) -> Result<Self> {
        let mut labels = vec![0.0; classes.len() * n_classes];
        for (i, &c) in classes.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::Validation(format!("class {c} >= {n_classes}")));
            }
            labels[i * n_classes + c] = 1.0;
        }
        LabeledBatch::new(features, Tensor::new(vec![classes.len(), n_classes], labels)?)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.labels.shape()[1]
    }

    /// Checks every label row is a probability distribution.
    pub fn validate_labels(&self) -> Result<()> {
        validate_distributions(&self.labels)
    }
}

pub fn validate_distributions(t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let row = t.row(i);
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Validation(format!("row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > LABEL_SUM_TOL {
            return Err(Error::Validation(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}
