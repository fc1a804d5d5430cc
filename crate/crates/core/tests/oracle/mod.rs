//! Independent reference implementations used by the integration tests and
//! the acceptance harness. Everything here is written straight from the
//! definitions, with no shared code paths into the library.

#![allow(dead_code)]

use oodkit::data::{LabeledDataset, ScoreSet, SpatialFeatureMap};
use oodkit::lof::{fit_lof, LofConfig, LofMode};
use oodkit::mahalanobis::{fit_mahalanobis, CovarianceMode, MahalanobisConfig, Regularization};
use oodkit::metrics;
use oodkit::pooling::{pool, PoolingMethod, PoolingSpec};
use oodkit::{FeatureMatrix, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect()).collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_rows(rows, "oracle").unwrap()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        return 0.0;
    }
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------- LOF

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    (1.0 - ab / (aa.sqrt() * bb.sqrt())).clamp(0.0, 2.0)
}

/// LOF as defined by Breunig et al., O(n²) and allocation-happy.
pub struct NaiveLof {
    pub points: Vec<Vec<f64>>,
    pub k: usize,
    pub dist: fn(&[f64], &[f64]) -> f64,
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
}

impl NaiveLof {
    pub fn new(points: Vec<Vec<f64>>, k: usize, dist: fn(&[f64], &[f64]) -> f64) -> Self {
        let n = points.len();
        let mut k_distance = vec![0.0; n];
        for p in 0..n {
            let mut ds: Vec<f64> = (0..n).filter(|&o| o != p).map(|o| dist(&points[p], &points[o])).collect();
            ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            k_distance[p] = ds[k - 1];
        }
        let mut lrd = vec![0.0; n];
        for p in 0..n {
            let mut count = 0usize;
            let mut sum = 0.0;
            for o in 0..n {
                if o == p {
                    continue;
                }
                let d = dist(&points[p], &points[o]);
                if d <= k_distance[p] {
                    count += 1;
                    sum += f64::max(k_distance[o], d);
                }
            }
            lrd[p] = count as f64 / f64::max(sum, 1e-300);
        }
        NaiveLof {
            points,
            k,
            dist,
            k_distance,
            lrd,
        }
    }

    pub fn lof(&self, q: &[f64]) -> f64 {
        let ds: Vec<f64> = self.points.iter().map(|o| (self.dist)(q, o)).collect();
        let mut sorted = ds.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kd = sorted[self.k - 1];
        let mut count = 0usize;
        let mut reach = 0.0;
        let mut neighbor_lrd = 0.0;
        for (o, &d) in ds.iter().enumerate() {
            if d <= kd {
                count += 1;
                reach += f64::max(self.k_distance[o], d);
                neighbor_lrd += self.lrd[o];
            }
        }
        let lrd_q = count as f64 / f64::max(reach, 1e-300);
        neighbor_lrd / (count as f64 * lrd_q)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LofOracleOutcome {
    pub datasets: usize,
    pub values_checked: usize,
    pub max_rel_lrd: f64,
    pub max_rel_kdist: f64,
    pub max_rel_lof: f64,
}

/// Fits `count` random global Euclidean LOF models (n ≤ 200, d ≤ 10,
/// k cycling through 1, 5, 20) and compares every stored k-distance and LRD
/// plus the LOF of 20 random queries against [`NaiveLof`].
pub fn lof_oracle_suite(count: usize, seed: u64) -> LofOracleOutcome {
    let mut rng = seeded(seed);
    let mut out = LofOracleOutcome::default();
    for i in 0..count {
        let k = [1, 5, 20][i % 3];
        let d = 1 + i % 10;
        let n = rng.random_range(k + 2..=200);
        let spread = rng.random_range(0.1..10.0);
        let mut rows = uniform_rows(&mut rng, n, d, -spread, spread);
        // A few exact duplicates and grid points make tie sets non-trivial.
        if i % 5 == 0 {
            for r in rows.iter_mut() {
                for v in r.iter_mut() {
                    *v = v.round();
                }
            }
        }
        let model = fit_lof(&LabeledDataset::unlabeled(matrix(&rows)), LofConfig::lof(k)).unwrap();
        let oracle = NaiveLof::new(rows, k, euclidean);
        let group = &model.groups()[0];
        for p in 0..n {
            out.max_rel_kdist = out.max_rel_kdist.max(rel_err(group.k_distances()[p], oracle.k_distance[p]));
            out.max_rel_lrd = out.max_rel_lrd.max(rel_err(group.lrds()[p], oracle.lrd[p]));
            out.values_checked += 2;
        }
        for q in uniform_rows(&mut rng, 20, d, -1.5 * spread, 1.5 * spread) {
            let got = model.lof(&q, None).unwrap();
            out.max_rel_lof = out.max_rel_lof.max(rel_err(got, oracle.lof(&q)));
            out.values_checked += 1;
        }
        out.datasets += 1;
    }
    out
}

/// Per-class cosine LOF (`LOF_D` style) against one naive model per class.
pub fn lof_d_oracle_max_rel(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d = rng.random_range(2..=8);
        let k = rng.random_range(1..=10);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3i64 {
            let n = rng.random_range(k + 2..=60);
            let center: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            for r in uniform_rows(&mut rng, n, d, -1.0, 1.0) {
                rows.push(r.iter().zip(&center).map(|(a, b)| a + b).collect::<Vec<_>>());
                labels.push(c);
            }
        }
        let ds = LabeledDataset::new(matrix(&rows), Some(labels.clone()), None).unwrap();
        let model = fit_lof(&ds, LofConfig::lof_d(k)).unwrap();
        assert_eq!(model.config().mode, LofMode::PerClass);
        for c in 0..3i64 {
            let class_rows: Vec<Vec<f64>> =
                rows.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r.clone()).collect();
            let oracle = NaiveLof::new(class_rows, k, cosine);
            for q in uniform_rows(&mut rng, 5, d, -4.0, 4.0) {
                worst = worst.max(rel_err(model.lof(&q, Some(c)).unwrap(), oracle.lof(&q)));
            }
        }
    }
    worst
}

// ---------------------------------------------------------------- k-NN

/// Indices and distances of the k nearest rows, ties to the lower index.
pub fn brute_knn(query: &[f64], rows: &[Vec<f64>], k: usize, metric: Metric) -> Vec<(usize, f64)> {
    let dist = match metric {
        Metric::Euclidean => euclidean,
        Metric::Cosine => cosine,
    };
    let mut all: Vec<(usize, f64)> = rows.iter().enumerate().map(|(i, r)| (i, dist(query, r))).collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

// ---------------------------------------------------------- Mahalanobis

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap()).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix in oracle");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn quad_form(diff: &[f64], p: &[Vec<f64>]) -> f64 {
    let n = diff.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += diff[i] * p[i][j] * diff[j];
        }
    }
    s
}

/// Dense class-conditional Gaussian scorer: means, covariance by the
/// textbook formula, `(Σ + εI)⁻¹` by Gauss-Jordan, confidence = −min distance.
pub struct NaiveMahalanobis {
    pub means: Vec<Vec<f64>>,
    pub precisions: Vec<Vec<Vec<f64>>>,
}

pub enum Ridge {
    Fixed(f64),
    /// 1e-6 · trace / d of each covariance.
    Auto,
}

impl NaiveMahalanobis {
    pub fn new(rows: &[Vec<f64>], labels: &[i64], per_class: bool, ridge: Ridge) -> Self {
        let d = rows[0].len();
        let mut classes: Vec<i64> = labels.to_vec();
        classes.sort();
        classes.dedup();
        let mut means = Vec::new();
        let mut scatters = Vec::new();
        let mut counts = Vec::new();
        for &c in &classes {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            let n = members.len() as f64;
            let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let mut s = vec![vec![0.0; d]; d];
            for r in &members {
                for i in 0..d {
                    for j in 0..d {
                        s[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
                    }
                }
            }
            means.push(mean);
            scatters.push(s);
            counts.push(members.len());
        }
        let covs: Vec<Vec<Vec<f64>>> = if per_class {
            scatters
                .iter()
                .zip(&counts)
                .map(|(s, &n)| s.iter().map(|r| r.iter().map(|v| v / n as f64).collect()).collect())
                .collect()
        } else {
            let total: usize = counts.iter().sum();
            let mut pooled = vec![vec![0.0; d]; d];
            for s in &scatters {
                for i in 0..d {
                    for j in 0..d {
                        pooled[i][j] += s[i][j];
                    }
                }
            }
            vec![pooled.iter().map(|r| r.iter().map(|v| v / total as f64).collect()).collect()]
        };
        let precisions = covs
            .into_iter()
            .map(|mut c| {
                let eps = match ridge {
                    Ridge::Fixed(e) => e,
                    Ridge::Auto => 1e-6 * (0..d).map(|i| c[i][i]).sum::<f64>() / d as f64,
                };
                for (i, row) in c.iter_mut().enumerate() {
                    row[i] += eps;
                }
                invert(&c)
            })
            .collect();
        NaiveMahalanobis { means, precisions }
    }

    pub fn score(&self, q: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for (c, mean) in self.means.iter().enumerate() {
            let p = &self.precisions[c.min(self.precisions.len() - 1)];
            let diff: Vec<f64> = q.iter().zip(mean).map(|(a, b)| a - b).collect();
            best = best.min(quad_form(&diff, p));
        }
        -best
    }
}

/// Random class-structured training data: `classes` blobs in `d` dims with
/// anisotropic spread.
pub fn gaussian_like_classes(rng: &mut ChaCha8Rng, d: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<i64>) {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mix: Vec<Vec<f64>> = uniform_rows(rng, d, d, -1.0, 1.0);
    for c in 0..classes {
        let n = rng.random_range(3 * d + 10..=80);
        let center: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        for z in uniform_rows(rng, n, d, -1.0, 1.0) {
            let x: Vec<f64> = (0..d)
                .map(|i| center[i] + z[i] + 0.5 * (0..d).map(|j| mix[i][j] * z[j]).sum::<f64>())
                .collect();
            rows.push(x);
            labels.push(c as i64);
        }
    }
    (rows, labels)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MahalanobisOracleOutcome {
    pub problems: usize,
    pub scores_checked: usize,
    pub max_rel: f64,
}

/// Random 2–8 dimensional problems in both covariance modes and with fixed
/// and automatic ridges; 50 queries each against [`NaiveMahalanobis`].
pub fn mahalanobis_oracle_suite(count: usize, seed: u64) -> MahalanobisOracleOutcome {
    let mut rng = seeded(seed);
    let mut out = MahalanobisOracleOutcome::default();
    for i in 0..count {
        let d = 2 + i % 7;
        let classes = 2 + i % 2;
        let (rows, labels) = gaussian_like_classes(&mut rng, d, classes);
        let per_class = i % 2 == 1;
        let (reg, ridge) = if i % 3 == 0 {
            (Regularization::Auto, Ridge::Auto)
        } else {
            let e = [0.0, 1e-3][i % 3 - 1];
            (Regularization::Fixed(e), Ridge::Fixed(e))
        };
        let config = MahalanobisConfig {
            covariance: if per_class {
                CovarianceMode::PerClass
            } else {
                CovarianceMode::Tied
            },
            epsilon: reg,
        };
        let ds = LabeledDataset::new(matrix(&rows), Some(labels.clone()), None).unwrap();
        let model = fit_mahalanobis(&ds, config).unwrap();
        let oracle = NaiveMahalanobis::new(&rows, &labels, per_class, ridge);
        let queries = uniform_rows(&mut rng, 50, d, -8.0, 8.0);
        let batch = model.score_matrix(&matrix(&queries)).unwrap();
        for (q, b) in queries.iter().zip(&batch) {
            let want = oracle.score(q);
            out.max_rel = out.max_rel.max(rel_err(model.score(q).unwrap(), want)).max(rel_err(*b, want));
            out.scores_checked += 2;
        }
        out.problems += 1;
    }
    out
}

/// Applies a random well-conditioned affine map to train and queries with
/// ε = 0 and reports the worst relative change in score.
pub fn affine_invariance_max_rel(count: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let d = 2 + i % 7;
        let (rows, labels) = gaussian_like_classes(&mut rng, d, 2);
        let a: Vec<Vec<f64>> = (0..d)
            .map(|r| (0..d).map(|c| rng.random_range(-0.5..0.5) + if r == c { 2.0 } else { 0.0 }).collect())
            .collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let map = |x: &Vec<f64>| -> Vec<f64> {
            (0..d).map(|r| b[r] + (0..d).map(|c| a[r][c] * x[c]).sum::<f64>()).collect()
        };
        let config = MahalanobisConfig {
            covariance: if i % 2 == 0 {
                CovarianceMode::Tied
            } else {
                CovarianceMode::PerClass
            },
            epsilon: Regularization::Fixed(0.0),
        };
        let fit = |r: &[Vec<f64>]| {
            fit_mahalanobis(&LabeledDataset::new(matrix(r), Some(labels.clone()), None).unwrap(), config).unwrap()
        };
        let base = fit(&rows);
        let moved = fit(&rows.iter().map(map).collect::<Vec<_>>());
        assert_eq!(base.precisions()[0].epsilon(), 0.0);
        assert_eq!(moved.precisions()[0].epsilon(), 0.0);
        for q in uniform_rows(&mut rng, 30, d, -6.0, 6.0) {
            worst = worst.max(rel_err(moved.score(&map(&q)).unwrap(), base.score(&q).unwrap()));
        }
    }
    worst
}

// ------------------------------------------------------------- metrics

/// Mann-Whitney statistic by explicit pair counting; percent.
pub fn pairwise_auroc(inn: &[f64], out: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in inn {
        for &b in out {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    100.0 * wins / (inn.len() * out.len()) as f64
}

fn distinct_desc(inn: &[f64], out: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = inn.iter().chain(out).copied().collect();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

fn accepted(xs: &[f64], t: f64) -> usize {
    xs.iter().filter(|&&x| x >= t).count()
}

/// Trapezoidal area under the empirical ROC curve; percent.
pub fn trapezoid_auroc(inn: &[f64], out: &[f64]) -> f64 {
    let (ni, no) = (inn.len() as f64, out.len() as f64);
    let mut pts = vec![(0.0, 0.0)];
    for t in distinct_desc(inn, out) {
        pts.push((accepted(out, t) as f64 / no, accepted(inn, t) as f64 / ni));
    }
    let mut area = 0.0;
    for w in pts.windows(2) {
        area += (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0;
    }
    100.0 * area
}

/// Balanced accuracy maximized over every threshold, counting by rescan.
pub fn sweep_dtacc(inn: &[f64], out: &[f64]) -> f64 {
    let (ni, no) = (inn.len() as f64, out.len() as f64);
    let mut best = 0.5;
    for t in distinct_desc(inn, out) {
        let acc = 0.5 * accepted(inn, t) as f64 / ni + 0.5 * (1.0 - accepted(out, t) as f64 / no);
        if acc > best {
            best = acc;
        }
    }
    100.0 * best
}

/// Step-wise precision-recall integral, counting by rescan.
pub fn sweep_aupr(inn: &[f64], out: &[f64]) -> f64 {
    let ni = inn.len() as f64;
    let mut prev = 0.0;
    let mut area = 0.0;
    for t in distinct_desc(inn, out) {
        let tp = accepted(inn, t);
        let fp = accepted(out, t);
        let recall = tp as f64 / ni;
        area += (recall - prev) * (tp as f64 / (tp + fp) as f64);
        prev = recall;
    }
    100.0 * area
}

/// TNR at the largest in-score threshold keeping ≥ 95% of in-scores.
pub fn sweep_tnr95(inn: &[f64], out: &[f64]) -> f64 {
    let tau = inn
        .iter()
        .copied()
        .filter(|&t| 100 * accepted(inn, t) >= 95 * inn.len())
        .fold(f64::NEG_INFINITY, f64::max);
    100.0 * out.iter().filter(|&&x| x < tau).count() as f64 / out.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricsOracleOutcome {
    pub fixtures: usize,
    pub max_auroc_trapezoid_gap: f64,
    pub max_auroc_pairwise_gap: f64,
    pub exact_mismatches: usize,
    pub hand_cases_ok: bool,
}

/// Integer-score fixtures with heavy ties plus continuous ones.
pub fn metrics_oracle_suite(count: usize, seed: u64) -> MetricsOracleOutcome {
    let mut rng = seeded(seed);
    let mut out = MetricsOracleOutcome::default();
    for i in 0..count {
        let ni = rng.random_range(1..=60);
        let no = rng.random_range(1..=60);
        let (inn, oo): (Vec<f64>, Vec<f64>) = if i % 2 == 0 {
            let hi = rng.random_range(1..=12);
            let shift = rng.random_range(-3..=3);
            (
                (0..ni).map(|_| (rng.random_range(0..=hi) + shift) as f64).collect(),
                (0..no).map(|_| rng.random_range(0..=hi) as f64).collect(),
            )
        } else {
            (
                (0..ni).map(|_| rng.random_range(-1.0..2.0)).collect(),
                (0..no).map(|_| rng.random_range(-2.0..1.0)).collect(),
            )
        };
        let set = ScoreSet::new(inn.clone(), oo.clone()).unwrap();
        let auroc = metrics::auroc(&set);
        out.max_auroc_trapezoid_gap = out.max_auroc_trapezoid_gap.max((auroc - trapezoid_auroc(&inn, &oo)).abs());
        out.max_auroc_pairwise_gap = out.max_auroc_pairwise_gap.max((auroc - pairwise_auroc(&inn, &oo)).abs());
        if i % 2 == 0 {
            let exact = metrics::detection_accuracy(&set) == sweep_dtacc(&inn, &oo)
                && metrics::aupr(&set) == sweep_aupr(&inn, &oo)
                && metrics::tnr_at_tpr95(&set) == sweep_tnr95(&inn, &oo);
            if !exact {
                out.exact_mismatches += 1;
            }
        }
        out.fixtures += 1;
    }
    out.hand_cases_ok = metric_hand_cases();
    out
}

fn metric_hand_cases() -> bool {
    let perfect = metrics::evaluate(&ScoreSet::new(vec![0.9, 0.8], vec![0.3, 0.1]).unwrap());
    let tie = metrics::evaluate(&ScoreSet::new(vec![0.5], vec![0.5]).unwrap());
    let same = metrics::evaluate(&ScoreSet::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap());
    let three_of_four = metrics::auroc(&ScoreSet::new(vec![0.9, 0.4], vec![0.6, 0.1]).unwrap());
    [perfect.auroc, perfect.tnr_at_tpr95, perfect.dtacc, perfect.aupr] == [100.0; 4]
        && tie.auroc == 50.0
        && same.auroc == 50.0
        && three_of_four == 75.0
}

// ------------------------------------------------------------- pooling

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> SpatialFeatureMap {
    let values = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
    SpatialFeatureMap::new(c, h, w, values).unwrap()
}

pub fn pooled(map: &SpatialFeatureMap, method: PoolingMethod, p: f64) -> Vec<f64> {
    pool(map, &PoolingSpec::new(method).with_gem_power(p)).unwrap().values
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PoolingOutcome {
    pub maps: usize,
    pub max_gem1_gap_diff: f64,
    pub order_violations: usize,
    pub max_gem64_rel_gap: f64,
}

/// Largest spatial side used by [`pooling_suite`]. gem(64) ≥ gmp · m^(-1/64)
/// for m locations, so the 5% closeness check is only guaranteed for m ≤ 26.
pub const POOLING_MAX_SIDE: usize = 5;

/// Random non-negative maps up to 16 channels and `POOLING_MAX_SIDE` squared.
pub fn pooling_suite(count: usize, seed: u64) -> PoolingOutcome {
    let mut rng = seeded(seed);
    let mut out = PoolingOutcome::default();
    for _ in 0..count {
        let (c, h, w) = (
            rng.random_range(1..=16),
            rng.random_range(1..=POOLING_MAX_SIDE),
            rng.random_range(1..=POOLING_MAX_SIDE),
        );
        let map = random_map(&mut rng, c, h, w);
        let gap = pooled(&map, PoolingMethod::Gap, 3.0);
        let gmp = pooled(&map, PoolingMethod::Gmp, 3.0);
        let gem1 = pooled(&map, PoolingMethod::Gem, 1.0);
        let gem64 = pooled(&map, PoolingMethod::Gem, 64.0);
        for k in 0..c {
            out.max_gem1_gap_diff = out.max_gem1_gap_diff.max((gem1[k] - gap[k]).abs());
            out.max_gem64_rel_gap = out.max_gem64_rel_gap.max((gmp[k] - gem64[k]).abs() / gmp[k]);
        }
        for p in [1.0, 1.5, 2.0, 3.0, 4.5, 8.0, 16.0, 64.0] {
            let gem = pooled(&map, PoolingMethod::Gem, p);
            for k in 0..c {
                let slack = 1e-12 * gmp[k];
                if gap[k] > gem[k] + slack || gem[k] > gmp[k] + slack {
                    out.order_violations += 1;
                }
            }
        }
        out.maps += 1;
    }
    out
}
