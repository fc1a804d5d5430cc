//! End-to-end run: pool → fit → score (per layer) → ensemble → evaluate.
//!
//! Configuration is a plain-text key-value file, grammar version 1:
//!
//! ```text
//! # comment lines start with '#'; inline comments need a space before '#'
//! version      = 1                     # required
//! detector     = lof                   # lof | lof_d | mahalanobis
//! k            = 20                    # LOF neighbors
//! metric       = euclidean             # LOF metric override (euclidean | cosine)
//! covariance   = tied                  # Mahalanobis: tied | per_class
//! epsilon      = auto                  # Mahalanobis ridge: auto | number ≥ 0
//! pooling      = gap                   # applied to spatial inputs: gap | gmp | gem | crow | a+b
//! gem_p        = 3
//! layers       = penultimate           # comma list; the lists below align with it
//! train        = train.oodf
//! test_in      = test_in.oodf
//! test_out     = test_out.oodf
//! val_in       = val_in.oodf           # optional, multi-layer only
//! val_out      = val_out.oodf          # optional, multi-layer only
//! val_fraction = 0.2                   # split used when val_* are absent
//! seed         = 0
//! output_dir   = out
//! benchmark    = my-benchmark
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Overrides (e.g. from command-line flags) replace file values.
//!
//! With more than one layer the per-layer scores are combined by weights
//! fitted on validation scores. When no validation files are given, the
//! first `val_fraction` of a seeded shuffle of each test set is held out for
//! fitting and the rest is evaluated.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use crate::data::{FeatureFile, LabeledDataset, ScoreSet};
use crate::detector::{DetectorSpec, FittedDetector};
use crate::ensemble::{combine, fit_weights, LayerScores};
use crate::error::{Error, Result};
use crate::knn::Metric;
use crate::lof::LofConfig;
use crate::mahalanobis::{CovarianceMode, MahalanobisConfig, Regularization};
use crate::metrics::{evaluate, format_table, EvalReport};
use crate::oodf::read_feature_file;
use crate::pooling::{pool_dataset, PoolingMethod, PoolingSpec, DEFAULT_GEM_POWER};
use crate::scores::write_scores;

pub const CONFIG_VERSION: &str = "1";

const KEYS: &[&str] = &[
    "version",
    "detector",
    "k",
    "metric",
    "covariance",
    "epsilon",
    "pooling",
    "gem_p",
    "layers",
    "train",
    "test_in",
    "test_out",
    "val_in",
    "val_out",
    "val_fraction",
    "seed",
    "output_dir",
    "benchmark",
];

#[derive(Debug, Clone, PartialEq)]
pub struct LayerInputs {
    pub name: String,
    pub train: PathBuf,
    pub test_in: PathBuf,
    pub test_out: PathBuf,
    pub val_in: Option<PathBuf>,
    pub val_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub detector: DetectorSpec,
    pub pooling: PoolingSpec,
    pub layers: Vec<LayerInputs>,
    pub val_fraction: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub benchmark: String,
}

/// Splits `key = value` lines into a map, rejecting unknown or repeated keys.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected key = value", lineno + 1)))?;
        let key = key.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(Error::invalid(format!("config line {}: unknown key {key:?}", lineno + 1)));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::invalid(format!("config line {}: duplicate key {key:?}", lineno + 1)));
        }
    }
    Ok(map)
}

fn strip_comment(line: &str) -> &str {
    if line.trim_start().starts_with('#') {
        return "";
    }
    match line.find(" #").or_else(|| line.find("\t#")) {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn list(value: Option<&String>) -> Vec<String> {
    value
        .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

fn parse_num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::invalid(format!("config key {key}: cannot parse {v:?}"))),
    }
}

impl PipelineConfig {
    /// Builds a config from file text plus overrides; overrides win.
    pub fn from_text(text: &str, base_dir: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = parse_key_values(text)?;
        for (k, v) in overrides {
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::invalid(format!("unknown config key {k:?}")));
            }
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(&map, base_dir)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, base, overrides)
    }

    pub fn from_map(map: &BTreeMap<String, String>, base_dir: &Path) -> Result<Self> {
        match map.get("version").map(String::as_str) {
            Some(CONFIG_VERSION) => {}
            Some(v) => return Err(Error::invalid(format!("unsupported config version {v:?}"))),
            None => return Err(Error::invalid("config must declare version = 1")),
        }

        let detector_name = map.get("detector").map(String::as_str).unwrap_or("lof");
        let detector = match DetectorSpec::from_name(detector_name)? {
            DetectorSpec::Lof(base) => {
                let metric = match map.get("metric") {
                    Some(m) => m.parse::<Metric>()?,
                    None => base.metric,
                };
                DetectorSpec::Lof(LofConfig {
                    k: parse_num(map, "k", base.k)?,
                    metric,
                    mode: base.mode,
                })
            }
            DetectorSpec::Mahalanobis(_) => DetectorSpec::Mahalanobis(MahalanobisConfig {
                covariance: map
                    .get("covariance")
                    .map(|v| v.parse::<CovarianceMode>())
                    .transpose()?
                    .unwrap_or(CovarianceMode::Tied),
                epsilon: map
                    .get("epsilon")
                    .map(|v| v.parse::<Regularization>())
                    .transpose()?
                    .unwrap_or(Regularization::Auto),
            }),
        };

        let method: PoolingMethod = map.get("pooling").map(String::as_str).unwrap_or("gap").parse()?;
        let pooling = PoolingSpec::new(method).with_gem_power(parse_num(map, "gem_p", DEFAULT_GEM_POWER)?);
        pooling.validate()?;

        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let train = list(map.get("train"));
        let test_in = list(map.get("test_in"));
        let test_out = list(map.get("test_out"));
        let val_in = list(map.get("val_in"));
        let val_out = list(map.get("val_out"));
        let mut names = list(map.get("layers"));
        if names.is_empty() {
            names = (0..train.len()).map(|i| format!("layer_{i}")).collect();
        }
        if names.is_empty() {
            return Err(Error::invalid("config needs at least one train file"));
        }
        for (key, v) in [("train", &train), ("test_in", &test_in), ("test_out", &test_out)] {
            if v.len() != names.len() {
                return Err(Error::invalid(format!(
                    "config key {key} lists {} files for {} layers",
                    v.len(),
                    names.len()
                )));
            }
        }
        for (key, v) in [("val_in", &val_in), ("val_out", &val_out)] {
            if !v.is_empty() && v.len() != names.len() {
                return Err(Error::invalid(format!(
                    "config key {key} lists {} files for {} layers",
                    v.len(),
                    names.len()
                )));
            }
        }
        if val_in.is_empty() != val_out.is_empty() {
            return Err(Error::invalid("val_in and val_out must be given together"));
        }
        let layers = (0..names.len())
            .map(|i| LayerInputs {
                name: names[i].clone(),
                train: resolve(train[i].clone()),
                test_in: resolve(test_in[i].clone()),
                test_out: resolve(test_out[i].clone()),
                val_in: val_in.get(i).cloned().map(resolve),
                val_out: val_out.get(i).cloned().map(resolve),
            })
            .collect();

        let val_fraction: f64 = parse_num(map, "val_fraction", 0.2)?;
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::invalid(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
        }

        Ok(PipelineConfig {
            detector,
            pooling,
            layers,
            val_fraction,
            seed: parse_num(map, "seed", 0)?,
            output_dir: resolve(map.get("output_dir").cloned().unwrap_or_else(|| "oodkit-out".into())),
            benchmark: map.get("benchmark").cloned().unwrap_or_else(|| "benchmark".into()),
        })
    }

    /// Every input file referenced by the config.
    pub fn input_files(&self) -> Vec<&Path> {
        self.layers
            .iter()
            .flat_map(|l| {
                [Some(&l.train), Some(&l.test_in), Some(&l.test_out), l.val_in.as_ref(), l.val_out.as_ref()]
                    .into_iter()
                    .flatten()
                    .map(PathBuf::as_path)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EvalReport,
    pub artifacts: Vec<PathBuf>,
}

/// Loads a feature file and pools it if spatial; returns the dataset and how
/// many maps had negative activations clamped.
pub fn load_features(path: &Path, pooling: &PoolingSpec) -> Result<(LabeledDataset, usize)> {
    match read_feature_file(path)? {
        FeatureFile::Flat(d) => Ok((d, 0)),
        FeatureFile::Spatial(s) => pool_dataset(&s, pooling),
    }
}

fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha20Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64) * fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::invalid(format!(
            "cannot split {n} test samples into validation fraction {fraction}"
        )));
    }
    let test = idx.split_off(n_val);
    Ok((idx, test))
}

fn pick(scores: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| scores[i]).collect()
}

struct LayerRun {
    test_in: Vec<f64>,
    test_out: Vec<f64>,
    val: Option<(Vec<f64>, Vec<f64>)>,
}

/// Runs the whole pipeline. On failure a `FAILED` marker naming the stage
/// is left in the output directory next to any partial artifacts.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e).in_stage("setup"))?;
    let marker = out_dir.join("FAILED");
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e).in_stage("setup"))?;
    }
    let mut artifacts = Vec::new();
    let result = run_stages(config, &mut artifacts);
    if let Err(e) = &result {
        let _ = std::fs::write(
            &marker,
            format!("pipeline failed: {e}\npartial artifacts: {}\n", artifacts.len()),
        );
    }
    result.map(|report| PipelineOutput { report, artifacts })
}

fn run_stages(config: &PipelineConfig, artifacts: &mut Vec<PathBuf>) -> Result<EvalReport> {
    for path in config.input_files() {
        if !path.is_file() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            )
            .in_stage("setup"));
        }
    }
    let out_dir = &config.output_dir;
    let multi = config.layers.len() > 1;
    let mut clamped = 0usize;
    let mut runs = Vec::new();
    for layer in &config.layers {
        let stage = |s: &str| format!("{s} [{}]", layer.name);
        let mut load = |p: &Path| -> Result<LabeledDataset> {
            let (d, c) = load_features(p, &config.pooling).map_err(|e| e.in_stage(stage("load")))?;
            clamped += c;
            Ok(d)
        };
        let train = load(&layer.train)?;
        let test_in = load(&layer.test_in)?;
        let test_out = load(&layer.test_out)?;
        let val = match (&layer.val_in, &layer.val_out) {
            (Some(a), Some(b)) => Some((load(a)?, load(b)?)),
            _ => None,
        };

        let model = FittedDetector::fit(&config.detector, &train).map_err(|e| e.in_stage(stage("fit")))?;
        let model_path = out_dir.join(format!("model_{}.oodm", layer.name));
        model.save(&model_path).map_err(|e| e.in_stage(stage("save model")))?;
        artifacts.push(model_path);

        let score = |d: &LabeledDataset| model.score(d).map_err(|e| e.in_stage(stage("score")));
        let run = LayerRun {
            test_in: score(&test_in)?,
            test_out: score(&test_out)?,
            val: match &val {
                Some((a, b)) => Some((score(a)?, score(b)?)),
                None => None,
            },
        };
        for (suffix, s) in [("in", &run.test_in), ("out", &run.test_out)] {
            let path = out_dir.join(format!("scores_{}_{suffix}.csv", layer.name));
            write_scores(&path, s).map_err(|e| e.in_stage(stage("write scores")))?;
            artifacts.push(path);
        }
        runs.push(run);
    }

    let names: Vec<String> = config.layers.iter().map(|l| l.name.clone()).collect();
    let mut context = json!({
        "detector": config.detector.to_string(),
        "pooling": config.pooling.method.to_string(),
        "gem_p": config.pooling.gem_power,
        "layers": names,
        "clamped_maps": clamped,
        "seed": config.seed,
    });

    let (final_in, final_out) = if !multi {
        context["ensemble"] = json!("single layer, no weights fitted");
        (runs[0].test_in.clone(), runs[0].test_out.clone())
    } else {
        let ensemble = |e: Error| e.in_stage("ensemble");
        let n_in = runs[0].test_in.len();
        let n_out = runs[0].test_out.len();
        if runs.iter().any(|r| r.test_in.len() != n_in || r.test_out.len() != n_out) {
            return Err(ensemble(Error::invalid("layers have different test-set sizes")));
        }
        let (val_in, val_out, eval_in, eval_out);
        if runs.iter().all(|r| r.val.is_some()) {
            val_in = runs.iter().map(|r| r.val.as_ref().unwrap().0.clone()).collect::<Vec<_>>();
            val_out = runs.iter().map(|r| r.val.as_ref().unwrap().1.clone()).collect::<Vec<_>>();
            eval_in = runs.iter().map(|r| r.test_in.clone()).collect::<Vec<_>>();
            eval_out = runs.iter().map(|r| r.test_out.clone()).collect::<Vec<_>>();
            context["validation"] = json!({ "source": "files" });
        } else {
            let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
            let (vi, ti) = split_indices(n_in, config.val_fraction, &mut rng).map_err(ensemble)?;
            let (vo, to) = split_indices(n_out, config.val_fraction, &mut rng).map_err(ensemble)?;
            val_in = runs.iter().map(|r| pick(&r.test_in, &vi)).collect();
            val_out = runs.iter().map(|r| pick(&r.test_out, &vo)).collect();
            eval_in = runs.iter().map(|r| pick(&r.test_in, &ti)).collect();
            eval_out = runs.iter().map(|r| pick(&r.test_out, &to)).collect();
            context["validation"] = json!({
                "source": "split of test sets",
                "fraction": config.val_fraction,
                "seed": config.seed,
                "n_val_in": vi.len(),
                "n_val_out": vo.len(),
            });
        }
        let fit = fit_weights(
            &LayerScores::new(names.clone(), val_in).map_err(ensemble)?,
            &LayerScores::new(names.clone(), val_out).map_err(ensemble)?,
        )
        .map_err(ensemble)?;
        let weights_path = out_dir.join("weights.txt");
        fit.weights.save(&weights_path).map_err(ensemble)?;
        artifacts.push(weights_path);
        context["dropped_layers"] = json!(fit.dropped_layers);
        let combined_in =
            combine(&LayerScores::new(names.clone(), eval_in).map_err(ensemble)?, &fit.weights).map_err(ensemble)?;
        let combined_out =
            combine(&LayerScores::new(names.clone(), eval_out).map_err(ensemble)?, &fit.weights).map_err(ensemble)?;
        for (suffix, s) in [("in", &combined_in), ("out", &combined_out)] {
            let path = out_dir.join(format!("scores_combined_{suffix}.csv"));
            write_scores(&path, s).map_err(ensemble)?;
            artifacts.push(path);
        }
        (combined_in, combined_out)
    };

    let scores = ScoreSet::new(final_in, final_out).map_err(|e| e.in_stage("evaluate"))?;
    let report = evaluate(&scores).named(config.detector.to_string(), config.benchmark.clone());
    context["report"] = serde_json::to_value(&report).expect("report serializes");

    let json_path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&context).expect("context serializes");
    text.push('\n');
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e).in_stage("write report"))?;
    artifacts.push(json_path);
    let table_path = out_dir.join("report.txt");
    std::fs::write(&table_path, format_table(std::slice::from_ref(&report)))
        .map_err(|e| Error::io(&table_path, e).in_stage("write report"))?;
    artifacts.push(table_path);
    Ok(report)
}
