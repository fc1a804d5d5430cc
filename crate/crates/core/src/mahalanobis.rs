//! Class-conditional Gaussian baseline scored by squared Mahalanobis distance.
//!
//! Confidence is `−min_c (x − μ_c)ᵀ (Σ + εI)⁻¹ (x − μ_c)`, so it is never
//! positive and equals zero exactly at a class mean. The covariance is either
//! shared across classes (`Tied`, pooled within-class scatter divided by the
//! total sample count) or estimated separately per class.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};

/// Relative ridge `ε = RIDGE_START · trace(Σ)/d` used by [`Regularization::Auto`].
pub const RIDGE_START: f64 = 1e-6;
/// Escalation stops once the ridge would exceed `RIDGE_CAP · trace(Σ)/d`.
pub const RIDGE_CAP: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMode {
    Tied,
    PerClass,
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceMode::Tied => "tied",
            CovarianceMode::PerClass => "per_class",
        })
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "tied" | "shared" => Ok(CovarianceMode::Tied),
            "per_class" | "full" => Ok(CovarianceMode::PerClass),
            other => Err(Error::invalid(format!("unknown covariance mode {other:?}"))),
        }
    }
}

/// Starting ridge added to the covariance diagonal before factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// `1e-6 · trace(Σ)/d`.
    Auto,
    /// An absolute ε ≥ 0.
    Fixed(f64),
}

impl FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Regularization::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("epsilon must be 'auto' or a number, got {s:?}")))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be finite and ≥ 0, got {v}")));
        }
        Ok(Regularization::Fixed(v))
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularization::Auto => f.write_str("auto"),
            Regularization::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MahalanobisConfig {
    pub covariance: CovarianceMode,
    pub epsilon: Regularization,
}

impl Default for MahalanobisConfig {
    fn default() -> Self {
        MahalanobisConfig {
            covariance: CovarianceMode::Tied,
            epsilon: Regularization::Auto,
        }
    }
}

/// A covariance estimate with its regularized inverse.
#[derive(Debug, Clone)]
pub struct Precision {
    covariance: DMatrix<f64>,
    epsilon: f64,
    precision: DMatrix<f64>,
}

impl Precision {
    /// Inverts `Σ + εI` through a Cholesky factorization, escalating ε by
    /// ×10 on failure until it passes `RIDGE_CAP · trace(Σ)/d`.
    pub fn regularize(covariance: DMatrix<f64>, start: Regularization) -> Result<Self> {
        let d = covariance.nrows();
        let scale = covariance.trace() / d as f64;
        let cap = RIDGE_CAP * scale;
        let mut eps = match start {
            Regularization::Auto => RIDGE_START * scale,
            Regularization::Fixed(v) => v,
        };
        loop {
            let mut shifted = covariance.clone();
            for i in 0..d {
                shifted[(i, i)] += eps;
            }
            if let Some(chol) = shifted.cholesky() {
                let mut precision = chol.inverse();
                symmetrize(&mut precision);
                if precision.iter().all(|v| v.is_finite()) {
                    return Ok(Precision {
                        covariance,
                        epsilon: eps,
                        precision,
                    });
                }
            }
            let next = if eps == 0.0 { RIDGE_START * scale } else { eps * 10.0 };
            if !(next > eps && next <= cap * (1.0 + 1e-12)) {
                return Err(Error::Numeric(format!(
                    "covariance is not positive definite even with ridge {eps:e} (cap {cap:e})"
                )));
            }
            eps = next;
        }
    }

    /// Rebuilds from stored covariance, ridge, and precision.
    pub fn from_parts(covariance: DMatrix<f64>, epsilon: f64, precision: DMatrix<f64>) -> Result<Self> {
        let d = covariance.nrows();
        if covariance.ncols() != d || precision.shape() != (d, d) {
            return Err(Error::invalid("covariance and precision must be square and equal-sized"));
        }
        Ok(Precision {
            covariance,
            epsilon,
            precision,
        })
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    mode: CovarianceMode,
    classes: Vec<i64>,
    means: Vec<DVector<f64>>,
    /// One entry when tied, one per class otherwise.
    precisions: Vec<Precision>,
}

fn centered(features: &FeatureMatrix, rows: &[usize], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = features.dim();
    DMatrix::from_fn(rows.len(), d, |i, j| features.row(rows[i])[j] - mean[j])
}

/// Fits class means and a (tied or per-class) covariance. Every class needs
/// at least two samples.
pub fn fit_mahalanobis(train: &LabeledDataset, config: MahalanobisConfig) -> Result<MahalanobisModel> {
    if let Regularization::Fixed(v) = config.epsilon {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be finite and ≥ 0, got {v}")));
        }
    }
    let features = train.features();
    let d = features.dim();
    let groups = train.class_indices()?;
    for (&class, rows) in &groups {
        if rows.len() < 2 {
            return Err(Error::InsufficientPoints {
                k: 1,
                got: rows.len(),
                class: Some(class),
            });
        }
    }

    let mut classes = Vec::with_capacity(groups.len());
    let mut means = Vec::with_capacity(groups.len());
    let mut scatters = Vec::with_capacity(groups.len());
    for (&class, rows) in &groups {
        let mut mean = DVector::zeros(d);
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean /= rows.len() as f64;
        let xc = centered(features, rows, &mean);
        let scatter = xc.transpose() * &xc;
        classes.push(class);
        means.push(mean);
        scatters.push((scatter, rows.len()));
    }

    let precisions = match config.covariance {
        CovarianceMode::Tied => {
            let n: usize = scatters.iter().map(|(_, n)| n).sum();
            let mut pooled = DMatrix::zeros(d, d);
            for (s, _) in &scatters {
                pooled += s;
            }
            pooled /= n as f64;
            vec![Precision::regularize(pooled, config.epsilon)?]
        }
        CovarianceMode::PerClass => scatters
            .into_iter()
            .map(|(s, n)| Precision::regularize(s / n as f64, config.epsilon))
            .collect::<Result<_>>()?,
    };

    Ok(MahalanobisModel {
        mode: config.covariance,
        classes,
        means,
        precisions,
    })
}

impl MahalanobisModel {
    pub fn from_parts(
        mode: CovarianceMode,
        classes: Vec<i64>,
        means: Vec<DVector<f64>>,
        precisions: Vec<Precision>,
    ) -> Result<Self> {
        if classes.is_empty() || classes.len() != means.len() {
            return Err(Error::invalid("class ids and means must be non-empty and aligned"));
        }
        let expected = match mode {
            CovarianceMode::Tied => 1,
            CovarianceMode::PerClass => classes.len(),
        };
        if precisions.len() != expected {
            return Err(Error::invalid(format!(
                "{mode} covariance needs {expected} precision matrices, got {}",
                precisions.len()
            )));
        }
        let d = means[0].len();
        if means.iter().any(|m| m.len() != d) || precisions.iter().any(|p| p.precision.nrows() != d) {
            return Err(Error::invalid("stored means and precisions differ in dimension"));
        }
        Ok(MahalanobisModel {
            mode,
            classes,
            means,
            precisions,
        })
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn precisions(&self) -> &[Precision] {
        &self.precisions
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn precision_for(&self, class_pos: usize) -> &DMatrix<f64> {
        match self.mode {
            CovarianceMode::Tied => &self.precisions[0].precision,
            CovarianceMode::PerClass => &self.precisions[class_pos].precision,
        }
    }

    /// Squared Mahalanobis distance from `query` to every class, in class order.
    pub fn squared_distances(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        Ok(self
            .means
            .iter()
            .enumerate()
            .map(|(c, mean)| {
                let diff = DVector::from_fn(mean.len(), |j, _| query[j] - mean[j]);
                let pd = self.precision_for(c) * &diff;
                diff.dot(&pd).max(0.0)
            })
            .collect())
    }

    /// Class id of the closest Gaussian.
    pub fn closest_class(&self, query: &[f64]) -> Result<i64> {
        let dists = self.squared_distances(query)?;
        let pos = argmin(&dists);
        Ok(self.classes[pos])
    }

    /// Confidence `−min_c` squared distance.
    pub fn score(&self, query: &[f64]) -> Result<f64> {
        let dists = self.squared_distances(query)?;
        Ok(-dists[argmin(&dists)])
    }

    /// Scores every row with one matrix product per class.
    pub fn score_matrix(&self, queries: &FeatureMatrix) -> Result<Vec<f64>> {
        if queries.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: queries.dim(),
            });
        }
        let m = queries.rows();
        let x = DMatrix::from_row_slice(m, queries.dim(), queries.values());
        let mut best = vec![f64::INFINITY; m];
        for (c, mean) in self.means.iter().enumerate() {
            let mut diff = x.clone();
            for (j, mut col) in diff.column_iter_mut().enumerate() {
                col.add_scalar_mut(-mean[j]);
            }
            let projected = &diff * self.precision_for(c);
            for (i, b) in best.iter_mut().enumerate() {
                let q = diff.row(i).dot(&projected.row(i)).max(0.0);
                if q < *b {
                    *b = q;
                }
            }
        }
        Ok(best.into_iter().map(|q| -q).collect())
    }
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}
