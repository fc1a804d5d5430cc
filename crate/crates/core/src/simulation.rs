//! Synthetic Mahalanobis-vs-LOF experiment over growing dimensionality.
//!
//! In-distribution data are two isotropic unit-variance Gaussian classes
//! centred at `[0]_d` and `[−1]_d`; OoD samples come from a unit-variance
//! Gaussian centred at `[r/√d]_d`, whose mean has Euclidean norm `r` for
//! every `d`.
//!
//! Randomness: each `(d, seed)` cell draws from a ChaCha20 stream seeded with
//! `seed_from_u64(seed)` and stream id `d`, sampling standard normals with
//! `rand_distr::StandardNormal` in this order: class 0 training rows, class 1
//! training rows, in-distribution test rows (first half class 0, remainder
//! class 1), OoD test rows. Each row is filled coordinate by coordinate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{FeatureMatrix, LabeledDataset, ScoreSet};
use crate::error::{Error, Result};
use crate::knn::Metric;
use crate::lof::{fit_lof, LofConfig, LofMode, DEFAULT_K};
use crate::mahalanobis::{fit_mahalanobis, CovarianceMode, MahalanobisConfig, Regularization};
use crate::metrics::{evaluate, EvalReport};

/// Default OoD offset `r`, chosen by [`calibrate_offset`] over
/// `6.0, 6.5, …, 12.0` with seeds 0–4 against the reference AUROC curves.
pub const DEFAULT_OFFSET: f64 = 8.0;

/// Dimensionalities of the reference sweep.
pub const REFERENCE_DIMS: [usize; 11] = [1, 100, 200, 300, 400, 500, 600, 700, 800, 900, 1000];

/// Reference AUROC values (Mahalanobis, LOF) the offset is calibrated against.
pub const AUROC_ANCHORS: [(usize, f64, f64); 3] = [
    (100, 99.2658, 99.2898),
    (400, 90.014175, 93.25665),
    (1000, 54.62775, 82.720025),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SimDetector {
    Mahalanobis,
    Lof,
}

impl fmt::Display for SimDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimDetector::Mahalanobis => "mahalanobis",
            SimDetector::Lof => "lof",
        })
    }
}

impl FromStr for SimDetector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mahalanobis" | "mahal" => Ok(SimDetector::Mahalanobis),
            "lof" => Ok(SimDetector::Lof),
            other => Err(Error::invalid(format!("unknown simulation detector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dims: Vec<usize>,
    pub n_train_per_class: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    pub offset: f64,
    pub seeds: Vec<u64>,
    pub detectors: Vec<SimDetector>,
    pub k: usize,
    /// Covariance model of the Mahalanobis baseline.
    pub covariance: CovarianceMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dims: REFERENCE_DIMS.to_vec(),
            n_train_per_class: 1000,
            n_test_in: 1000,
            n_test_out: 1000,
            offset: DEFAULT_OFFSET,
            seeds: (0..5).collect(),
            detectors: vec![SimDetector::Mahalanobis, SimDetector::Lof],
            k: DEFAULT_K,
            covariance: CovarianceMode::PerClass,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::invalid("dims must be a non-empty list of positive integers"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        for (what, n) in [
            ("n_train_per_class", self.n_train_per_class),
            ("n_test_in", self.n_test_in),
            ("n_test_out", self.n_test_out),
        ] {
            if n < self.k + 1 {
                return Err(Error::invalid(format!("{what} = {n} must be at least k + 1 = {}", self.k + 1)));
            }
        }
        if !(self.offset.is_finite() && self.offset > 0.0) {
            return Err(Error::invalid(format!("offset r must be positive, got {}", self.offset)));
        }
        if self.seeds.is_empty() || self.detectors.is_empty() {
            return Err(Error::invalid("seeds and detectors must be non-empty"));
        }
        Ok(())
    }
}

/// One generated `(d, seed)` cell.
#[derive(Debug, Clone)]
pub struct SimData {
    pub train: LabeledDataset,
    pub test_in: FeatureMatrix,
    pub test_out: FeatureMatrix,
}

/// Per-coordinate value of the OoD mean, `r/√d`.
pub fn ood_mean_coordinate(offset: f64, d: usize) -> f64 {
    offset / (d as f64).sqrt()
}

fn gaussian_rows(rng: &mut ChaCha20Rng, rows: usize, d: usize, mean: f64, out: &mut Vec<f64>) {
    out.reserve(rows * d);
    for _ in 0..rows * d {
        let z: f64 = rng.sample(StandardNormal);
        out.push(mean + z);
    }
}

pub fn generate(config: &SimConfig, d: usize, seed: u64) -> Result<SimData> {
    config.validate()?;
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(d as u64);
    let n = config.n_train_per_class;

    let mut train = Vec::new();
    gaussian_rows(&mut rng, n, d, 0.0, &mut train);
    gaussian_rows(&mut rng, n, d, -1.0, &mut train);
    let labels: Vec<i64> = std::iter::repeat_n(0, n).chain(std::iter::repeat_n(1, n)).collect();

    let first_half = config.n_test_in.div_ceil(2);
    let mut test_in = Vec::new();
    gaussian_rows(&mut rng, first_half, d, 0.0, &mut test_in);
    gaussian_rows(&mut rng, config.n_test_in - first_half, d, -1.0, &mut test_in);

    let mut test_out = Vec::new();
    gaussian_rows(&mut rng, config.n_test_out, d, ood_mean_coordinate(config.offset, d), &mut test_out);

    Ok(SimData {
        train: LabeledDataset::new(FeatureMatrix::new(2 * n, d, train, "sim")?, Some(labels), None)?,
        test_in: FeatureMatrix::new(config.n_test_in, d, test_in, "sim")?,
        test_out: FeatureMatrix::new(config.n_test_out, d, test_out, "sim")?,
    })
}

/// The LOF variant used by the simulation: per-cluster Euclidean models,
/// each query scored against the cluster with the nearest centroid.
pub fn simulation_lof_config(k: usize) -> LofConfig {
    LofConfig {
        k,
        metric: Metric::Euclidean,
        mode: LofMode::PerClass,
    }
}

/// Fits `detector` on `data.train` and scores both test sets.
pub fn score_cell(config: &SimConfig, data: &SimData, detector: SimDetector) -> Result<ScoreSet> {
    let (in_scores, out_scores) = match detector {
        SimDetector::Mahalanobis => {
            let model = fit_mahalanobis(
                &data.train,
                MahalanobisConfig {
                    covariance: config.covariance,
                    epsilon: Regularization::Auto,
                },
            )?;
            (model.score_matrix(&data.test_in)?, model.score_matrix(&data.test_out)?)
        }
        SimDetector::Lof => {
            let model = fit_lof(&data.train, simulation_lof_config(config.k))?;
            (
                model.score_matrix(&data.test_in, None)?,
                model.score_matrix(&data.test_out, None)?,
            )
        }
    };
    ScoreSet::new(in_scores, out_scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub detector: SimDetector,
    pub seed: u64,
    pub report: EvalReport,
}

/// Runs every `(d, seed, detector)` cell; rows sorted by `(d, detector, seed)`.
pub fn run_sweep(config: &SimConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let cells: Vec<(usize, u64)> = config
        .dims
        .iter()
        .flat_map(|&d| config.seeds.iter().map(move |&s| (d, s)))
        .collect();
    let mut rows: Vec<SweepRow> = cells
        .into_par_iter()
        .map(|(d, seed)| {
            let data = generate(config, d, seed)?;
            config
                .detectors
                .iter()
                .map(|&det| {
                    let scores = score_cell(config, &data, det)?;
                    Ok(SweepRow {
                        d,
                        detector: det,
                        seed,
                        report: evaluate(&scores).named(det.to_string(), format!("sim-d{d}-r{}", config.offset)),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    rows.sort_by_key(|r| (r.d, r.detector, r.seed));
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "d,detector,seed,tnr95,auroc,dtacc,aupr";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.d, r.detector, r.seed, r.report.tnr_at_tpr95, r.report.auroc, r.report.dtacc, r.report.aupr
        )?;
    }
    Ok(())
}

/// Seed-averaged metrics for one `(d, detector)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub d: usize,
    pub detector: SimDetector,
    pub tnr95: f64,
    pub auroc: f64,
    pub dtacc: f64,
    pub aupr: f64,
}

/// Averages sweep rows over seeds, sorted by `(d, detector)`.
pub fn average_over_seeds(rows: &[SweepRow]) -> Vec<CurvePoint> {
    let mut keys: Vec<(usize, SimDetector)> = rows.iter().map(|r| (r.d, r.detector)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(d, detector)| {
            let sel: Vec<&EvalReport> = rows
                .iter()
                .filter(|r| r.d == d && r.detector == detector)
                .map(|r| &r.report)
                .collect();
            let n = sel.len() as f64;
            let avg = |f: fn(&EvalReport) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            CurvePoint {
                d,
                detector,
                tnr95: avg(|r| r.tnr_at_tpr95),
                auroc: avg(|r| r.auroc),
                dtacc: avg(|r| r.dtacc),
                aupr: avg(|r| r.aupr),
            }
        })
        .collect()
}

pub fn curve_point(points: &[CurvePoint], d: usize, detector: SimDetector) -> Option<&CurvePoint> {
    points.iter().find(|p| p.d == d && p.detector == detector)
}

/// Squared AUROC error of each candidate offset against [`AUROC_ANCHORS`],
/// in grid order.
pub fn calibrate_offset(base: &SimConfig, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&r| {
            let config = SimConfig {
                offset: r,
                dims: AUROC_ANCHORS.iter().map(|a| a.0).collect(),
                detectors: vec![SimDetector::Mahalanobis, SimDetector::Lof],
                ..base.clone()
            };
            let points = average_over_seeds(&run_sweep(&config)?);
            let sse = AUROC_ANCHORS
                .iter()
                .map(|&(d, maha, lof)| {
                    let m = curve_point(&points, d, SimDetector::Mahalanobis).unwrap().auroc;
                    let l = curve_point(&points, d, SimDetector::Lof).unwrap().auroc;
                    (m - maha).powi(2) + (l - lof).powi(2)
                })
                .sum();
            Ok((r, sse))
        })
        .collect()
}
