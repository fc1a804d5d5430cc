//! Domain types shared by every detector.
//!
//! Values are held as `f64` in memory; feature files store `f32`. Every
//! constructor validates its invariants, so a value of any of these types is
//! always well formed and can be shared read-only between threads.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Label value reserved for "unlabeled" rows.
pub const UNLABELED: i64 = -1;

/// `rows × dim` row-major matrix of feature vectors for one network layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f64>,
    layer_name: String,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f64>, layer_name: impl Into<String>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        let expected = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::Overflow(format!("{rows}x{dim} elements")))?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(FeatureMatrix {
            rows,
            dim,
            values,
            layer_name: layer_name.into(),
        })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], layer_name: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        FeatureMatrix::new(rows.len(), dim, values, layer_name)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn with_layer_name(mut self, name: impl Into<String>) -> Self {
        self.layer_name = name.into();
        self
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(indices.len(), self.dim, values, self.layer_name.clone())
    }

    /// Column-wise mean of all rows.
    pub fn mean_row(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for row in self.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }
}

/// Features with optional ground-truth and classifier-predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: FeatureMatrix,
    labels: Option<Vec<i64>>,
    predicted_labels: Option<Vec<i64>>,
}

fn check_labels(what: &str, labels: &[i64], rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::invalid(format!(
            "{what} has {} entries for {rows} rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l < UNLABELED) {
        return Err(Error::invalid(format!("{what} contains invalid class id {bad}")));
    }
    Ok(())
}

impl LabeledDataset {
    pub fn new(
        features: FeatureMatrix,
        labels: Option<Vec<i64>>,
        predicted_labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            check_labels("labels", l, features.rows())?;
        }
        if let Some(p) = &predicted_labels {
            check_labels("predicted labels", p, features.rows())?;
        }
        Ok(LabeledDataset {
            features,
            labels,
            predicted_labels,
        })
    }

    pub fn unlabeled(features: FeatureMatrix) -> Self {
        LabeledDataset {
            features,
            labels: None,
            predicted_labels: None,
        }
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn predicted_labels(&self) -> Option<&[i64]> {
        self.predicted_labels.as_deref()
    }

    pub fn into_features(self) -> FeatureMatrix {
        self.features
    }

    /// `max(label) + 1`, or 0 when there are no usable labels.
    pub fn num_classes(&self) -> usize {
        self.labels
            .iter()
            .flatten()
            .copied()
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Row indices grouped by ground-truth class, ascending by class id.
    ///
    /// Fails when labels are missing or any row is unlabeled.
    pub fn class_indices(&self) -> Result<BTreeMap<i64, Vec<usize>>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("training data must carry class labels"))?;
        let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            if l == UNLABELED {
                return Err(Error::invalid(format!("row {i} is unlabeled")));
            }
            groups.entry(l).or_default().push(i);
        }
        Ok(groups)
    }
}

/// One `channels × height × width` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SpatialFeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "spatial map must be non-empty, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Overflow(format!("{channels}x{height}x{width} elements")))?;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        let plane = height * width;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / plane,
                col: pos % plane,
            });
        }
        Ok(SpatialFeatureMap {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `height × width` plane of one channel, row-major.
    pub fn channel(&self, k: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[k * plane..(k + 1) * plane]
    }
}

/// A sequence of equally shaped spatial maps plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    layer_name: String,
    maps: Vec<SpatialFeatureMap>,
    labels: Option<Vec<i64>>,
    predicted_labels: Option<Vec<i64>>,
}

impl SpatialDataset {
    pub fn new(
        layer_name: impl Into<String>,
        maps: Vec<SpatialFeatureMap>,
        labels: Option<Vec<i64>>,
        predicted_labels: Option<Vec<i64>>,
    ) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("spatial dataset must contain at least one map"))?
            .shape();
        if let Some(bad) = maps.iter().find(|m| m.shape() != first) {
            return Err(Error::invalid(format!(
                "spatial maps differ in shape: {first:?} vs {:?}",
                bad.shape()
            )));
        }
        if let Some(l) = &labels {
            check_labels("labels", l, maps.len())?;
        }
        if let Some(p) = &predicted_labels {
            check_labels("predicted labels", p, maps.len())?;
        }
        Ok(SpatialDataset {
            layer_name: layer_name.into(),
            maps,
            labels,
            predicted_labels,
        })
    }

    pub fn layer_name(&self) -> &str {
        &self.layer_name
    }

    pub fn maps(&self) -> &[SpatialFeatureMap] {
        &self.maps
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.maps[0].shape()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn predicted_labels(&self) -> Option<&[i64]> {
        self.predicted_labels.as_deref()
    }
}

/// Contents of a feature file: flat vectors or spatial maps.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureFile {
    Flat(LabeledDataset),
    Spatial(SpatialDataset),
}

impl FeatureFile {
    pub fn rows(&self) -> usize {
        match self {
            FeatureFile::Flat(d) => d.features().rows(),
            FeatureFile::Spatial(s) => s.maps().len(),
        }
    }

    pub fn layer_name(&self) -> &str {
        match self {
            FeatureFile::Flat(d) => d.features().layer_name(),
            FeatureFile::Spatial(s) => s.layer_name(),
        }
    }
}

/// Confidence scores for in-distribution and OoD test samples.
///
/// Orientation is fixed crate-wide: a larger score means "more
/// in-distribution".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    in_scores: Vec<f64>,
    out_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Result<Self> {
        if in_scores.is_empty() || out_scores.is_empty() {
            return Err(Error::invalid(
                "both in-distribution and OoD score arrays must be non-empty",
            ));
        }
        for (which, scores) in [("in", &in_scores), ("out", &out_scores)] {
            if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite {which}-distribution score at index {i}"
                )));
            }
        }
        Ok(ScoreSet {
            in_scores,
            out_scores,
        })
    }

    pub fn in_scores(&self) -> &[f64] {
        &self.in_scores
    }

    pub fn out_scores(&self) -> &[f64] {
        &self.out_scores
    }
}
