//! Exact k-nearest-neighbor search by full scan.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Euclidean,
    /// `1 − a·b / (‖a‖‖b‖)`. Zero-norm vectors are rejected.
    Cosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// Neighbors within the k-distance, sorted by (distance, index).
/// Holds at least `k` entries, more when several points tie at the k-distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub neighbors: Vec<Neighbor>,
    pub k_distance: f64,
}

#[inline]
pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            let d = x[j] - y[j];
            acc[j] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance between two vectors under `metric`.
pub fn distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    match metric {
        Metric::Euclidean => Ok(squared_euclidean(a, b).sqrt()),
        Metric::Cosine => {
            let (na, nb) = (norm(a), norm(b));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::ZeroNorm);
            }
            Ok(cosine_from_parts(dot(a, b), na, nb))
        }
    }
}

#[inline]
fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Reference points prepared for repeated exact searches.
#[derive(Debug, Clone)]
pub struct ExactIndex {
    points: FeatureMatrix,
    metric: Metric,
    norms: Vec<f64>,
}

impl ExactIndex {
    pub fn new(points: FeatureMatrix, metric: Metric) -> Result<Self> {
        let norms = match metric {
            Metric::Euclidean => Vec::new(),
            Metric::Cosine => {
                let norms: Vec<f64> = points.iter_rows().map(norm).collect();
                if norms.iter().any(|&n| n == 0.0) {
                    return Err(Error::ZeroNorm);
                }
                norms
            }
        };
        Ok(ExactIndex {
            points,
            metric,
            norms,
        })
    }

    pub fn points(&self) -> &FeatureMatrix {
        &self.points
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    /// Distances from `query` to every reference point, in index order.
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.points.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.points.dim(),
                got: query.len(),
            });
        }
        match self.metric {
            Metric::Euclidean => Ok(self
                .points
                .iter_rows()
                .map(|r| squared_euclidean(query, r).sqrt())
                .collect()),
            Metric::Cosine => {
                let nq = norm(query);
                if nq == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                Ok(self
                    .points
                    .iter_rows()
                    .zip(&self.norms)
                    .map(|(r, &nr)| cosine_from_parts(dot(query, r), nq, nr))
                    .collect())
            }
        }
    }

    /// The `k` nearest points, sorted by distance with ties broken by index.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.check_k(k, 0)?;
        let mut all = to_neighbors(self.distances(query)?, None);
        all.select_nth_unstable_by(k - 1, by_distance_then_index);
        all.truncate(k);
        all.sort_unstable_by(by_distance_then_index);
        Ok(all)
    }

    /// All points within the k-distance of `query`. `exclude` removes one
    /// reference index from consideration (a training point's own entry).
    pub fn neighborhood(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Result<Neighborhood> {
        self.check_k(k, exclude.is_some() as usize)?;
        let dists = self.distances(query)?;
        Ok(neighborhood_from_distances(dists, k, exclude))
    }

    fn check_k(&self, k: usize, excluded: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let available = self.len() - excluded;
        if k > available {
            return Err(Error::InsufficientPoints {
                k,
                got: available,
                class: None,
            });
        }
        Ok(())
    }
}

fn to_neighbors(dists: Vec<f64>, exclude: Option<usize>) -> Vec<Neighbor> {
    dists
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(index, distance)| Neighbor { index, distance })
        .collect()
}

pub(crate) fn neighborhood_from_distances(dists: Vec<f64>, k: usize, exclude: Option<usize>) -> Neighborhood {
    let mut all = to_neighbors(dists, exclude);
    let (_, kth, _) = all.select_nth_unstable_by(k - 1, by_distance_then_index);
    let k_distance = kth.distance;
    let mut neighbors: Vec<Neighbor> = all.into_iter().filter(|n| n.distance <= k_distance).collect();
    neighbors.sort_unstable_by(by_distance_then_index);
    Neighborhood {
        neighbors,
        k_distance,
    }
}

/// One-shot exact k-NN of `query` among the rows of `refs`.
pub fn knn(query: &[f64], refs: &FeatureMatrix, k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
    if k >= refs.rows() {
        return Err(Error::InsufficientPoints {
            k,
            got: refs.rows(),
            class: None,
        });
    }
    ExactIndex::new(refs.clone(), metric)?.knn(query, k)
}
