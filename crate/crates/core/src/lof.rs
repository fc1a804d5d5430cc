//! Local Outlier Factor as a fit/score novelty detector.
//!
//! Fitting stores, for every reference point `p`, its k-distance and local
//! reachability density
//!
//! ```text
//! reach_dist(p, o) = max(k_distance(o), d(p, o))
//! lrd(p)           = |N_k(p)| / Σ_{o ∈ N_k(p)} reach_dist(p, o)
//! ```
//!
//! where `N_k(p)` holds every other reference point within `k_distance(p)`
//! (more than `k` on ties). A query is scored against the stored points
//! without being inserted:
//!
//! ```text
//! lof(q) = Σ_{o ∈ N_k(q)} lrd(o) / (|N_k(q)| · lrd(q))
//! ```
//!
//! and its confidence is `−lof(q)`.
//!
//! In per-class mode a separate model is kept for each class and a query is
//! scored only against the model of its predicted class (or of the class
//! whose centroid is nearest, when no prediction is given).

use rayon::prelude::*;

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::knn::{self, ExactIndex, Metric, Neighborhood};

/// Reachability sums below this are clamped so duplicate points yield a
/// large but finite density.
pub const MIN_REACH_SUM: f64 = 1e-300;

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LofMode {
    Global,
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LofConfig {
    pub k: usize,
    pub metric: Metric,
    pub mode: LofMode,
}

impl Default for LofConfig {
    fn default() -> Self {
        LofConfig {
            k: DEFAULT_K,
            metric: Metric::Euclidean,
            mode: LofMode::Global,
        }
    }
}

impl LofConfig {
    /// Global model, Euclidean distance.
    pub fn lof(k: usize) -> Self {
        LofConfig {
            k,
            metric: Metric::Euclidean,
            mode: LofMode::Global,
        }
    }

    /// One model per class, cosine distance.
    pub fn lof_d(k: usize) -> Self {
        LofConfig {
            k,
            metric: Metric::Cosine,
            mode: LofMode::PerClass,
        }
    }
}

/// Fitted state for one reference set.
#[derive(Debug, Clone)]
pub struct LofGroup {
    class: Option<i64>,
    index: ExactIndex,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
    centroid: Vec<f64>,
}

impl LofGroup {
    fn fit(points: FeatureMatrix, class: Option<i64>, k: usize, metric: Metric) -> Result<Self> {
        if points.rows() <= k {
            return Err(Error::InsufficientPoints {
                k,
                got: points.rows(),
                class,
            });
        }
        let centroid = points.mean_row();
        let index = ExactIndex::new(points, metric)?;

        let hoods: Vec<Neighborhood> = (0..index.len())
            .into_par_iter()
            .map(|i| index.neighborhood(index.points().row(i), k, Some(i)))
            .collect::<Result<_>>()?;
        let k_distance: Vec<f64> = hoods.iter().map(|h| h.k_distance).collect();
        let lrd = hoods
            .iter()
            .map(|h| local_reachability_density(h, &k_distance))
            .collect();
        Ok(LofGroup {
            class,
            index,
            k_distance,
            lrd,
            centroid,
        })
    }

    fn from_parts(
        class: Option<i64>,
        points: FeatureMatrix,
        metric: Metric,
        k_distance: Vec<f64>,
        lrd: Vec<f64>,
    ) -> Result<Self> {
        if k_distance.len() != points.rows() || lrd.len() != points.rows() {
            return Err(Error::invalid("stored LOF arrays do not match reference count"));
        }
        if lrd.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("stored LRD values must be positive and finite"));
        }
        let centroid = points.mean_row();
        Ok(LofGroup {
            class,
            index: ExactIndex::new(points, metric)?,
            k_distance,
            lrd,
            centroid,
        })
    }

    pub fn class(&self) -> Option<i64> {
        self.class
    }

    pub fn points(&self) -> &FeatureMatrix {
        self.index.points()
    }

    pub fn k_distances(&self) -> &[f64] {
        &self.k_distance
    }

    pub fn lrds(&self) -> &[f64] {
        &self.lrd
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    fn lof(&self, query: &[f64], k: usize) -> Result<f64> {
        let hood = self.index.neighborhood(query, k, None)?;
        let query_lrd = local_reachability_density(&hood, &self.k_distance);
        let n = hood.neighbors.len() as f64;
        let mean_neighbor_lrd = hood.neighbors.iter().map(|o| self.lrd[o.index] / n).sum::<f64>();
        Ok(mean_neighbor_lrd / query_lrd)
    }
}

fn local_reachability_density(hood: &Neighborhood, k_distance: &[f64]) -> f64 {
    let reach_sum: f64 = hood
        .neighbors
        .iter()
        .map(|o| k_distance[o.index].max(o.distance))
        .sum();
    hood.neighbors.len() as f64 / reach_sum.max(MIN_REACH_SUM)
}

#[derive(Debug, Clone)]
pub struct LofModel {
    config: LofConfig,
    groups: Vec<LofGroup>,
}

/// Fits a LOF model on `train`. Per-class mode needs labels and more than
/// `k` points in every class.
pub fn fit_lof(train: &LabeledDataset, config: LofConfig) -> Result<LofModel> {
    if config.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let features = train.features();
    let groups = match config.mode {
        LofMode::Global => vec![LofGroup::fit(features.clone(), None, config.k, config.metric)?],
        LofMode::PerClass => train
            .class_indices()?
            .into_iter()
            .map(|(class, rows)| {
                let points = features.select_rows(&rows)?;
                LofGroup::fit(points, Some(class), config.k, config.metric)
            })
            .collect::<Result<_>>()?,
    };
    Ok(LofModel { config, groups })
}

impl LofModel {
    /// Reassembles a model from persisted state.
    pub fn from_parts(config: LofConfig, groups: Vec<(Option<i64>, FeatureMatrix, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("LOF model needs at least one reference group"));
        }
        let groups = groups
            .into_iter()
            .map(|(class, points, kd, lrd)| {
                if points.rows() <= config.k {
                    return Err(Error::InsufficientPoints {
                        k: config.k,
                        got: points.rows(),
                        class,
                    });
                }
                LofGroup::from_parts(class, points, config.metric, kd, lrd)
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = groups[0].points().dim();
        if groups.iter().any(|g| g.points().dim() != dim) {
            return Err(Error::invalid("LOF reference groups differ in dimension"));
        }
        Ok(LofModel { config, groups })
    }

    pub fn config(&self) -> &LofConfig {
        &self.config
    }

    pub fn groups(&self) -> &[LofGroup] {
        &self.groups
    }

    pub fn dim(&self) -> usize {
        self.groups[0].points().dim()
    }

    fn group_for_class(&self, class: i64) -> Result<&LofGroup> {
        self.groups
            .iter()
            .find(|g| g.class == Some(class))
            .ok_or(Error::UnknownClass(class))
    }

    /// Class whose centroid is nearest to `query` under the model's metric.
    pub fn nearest_class(&self, query: &[f64]) -> Result<Option<i64>> {
        if self.config.mode == LofMode::Global {
            return Ok(None);
        }
        let mut best: Option<(f64, i64)> = None;
        for g in &self.groups {
            let d = knn::distance(query, &g.centroid, self.config.metric)?;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, g.class.expect("per-class group carries a class")));
            }
        }
        Ok(best.map(|(_, c)| c))
    }

    fn select_group(&self, query: &[f64], predicted_class: Option<i64>) -> Result<&LofGroup> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        match self.config.mode {
            LofMode::Global => Ok(&self.groups[0]),
            LofMode::PerClass => {
                let class = match predicted_class {
                    Some(c) if c >= 0 => c,
                    Some(_) | None => self.nearest_class(query)?.expect("per-class model"),
                };
                self.group_for_class(class)
            }
        }
    }

    /// Raw local outlier factor of `query` (≈1 for inliers, larger for outliers).
    pub fn lof(&self, query: &[f64], predicted_class: Option<i64>) -> Result<f64> {
        self.select_group(query, predicted_class)?.lof(query, self.config.k)
    }

    /// Confidence `−lof(query)`; larger means more in-distribution.
    pub fn score(&self, query: &[f64], predicted_class: Option<i64>) -> Result<f64> {
        self.lof(query, predicted_class).map(|v| -v)
    }

    /// Scores every row of `queries`. Negative entries in `predicted` fall
    /// back to nearest-centroid selection.
    pub fn score_matrix(&self, queries: &FeatureMatrix, predicted: Option<&[i64]>) -> Result<Vec<f64>> {
        if let Some(p) = predicted {
            if p.len() != queries.rows() {
                return Err(Error::invalid(format!(
                    "{} predicted labels for {} queries",
                    p.len(),
                    queries.rows()
                )));
            }
        }
        (0..queries.rows())
            .into_par_iter()
            .map(|i| self.score(queries.row(i), predicted.map(|p| p[i])))
            .collect()
    }
}
