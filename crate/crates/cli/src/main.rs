use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use oodkit::error::{Error, ErrorKind, Result};
use oodkit::metrics::format_table;
use oodkit::pipeline::{load_features, run_pipeline, PipelineConfig};
use oodkit::pooling::{pool_dataset, DEFAULT_GEM_POWER};
use oodkit::scores::{read_scores, write_scores};
use oodkit::simulation::{average_over_seeds, write_sweep_csv, DEFAULT_OFFSET, REFERENCE_DIMS};
use oodkit::{
    combine, evaluate, fit_weights, read_feature_file, run_sweep, write_feature_file, CovarianceMode, DetectorSpec,
    EnsembleWeights, FeatureFile, FittedDetector, LayerScores, LofConfig, MahalanobisConfig, Metric, PoolingMethod,
    PoolingSpec, Regularization, ScoreSet, SimConfig, SimDetector,
};

/// Out-of-distribution detection on feature embeddings.
///
/// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric failure.
#[derive(Debug, Parser)]
#[command(name = "oodkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pool a spatial OODF file (n × c × h × w) into flat features (n × d).
    Pool(PoolArgs),
    /// Fit a detector on training features and save it as an OODM model.
    Fit(FitArgs),
    /// Score features with a saved model; larger = more in-distribution.
    Score(ScoreArgs),
    /// Fit per-layer ensemble weights on validation scores.
    EnsembleFit(EnsembleFitArgs),
    /// Combine per-layer scores with fitted weights.
    Combine(CombineArgs),
    /// Evaluate in/out score files: TNR at 95% TPR, AUROC, detection accuracy, AUPR-In.
    Eval(EvalArgs),
    /// Run the synthetic dimensionality sweep and write one CSV row per (d, detector, seed).
    Simulate(SimulateArgs),
    /// Run pool → fit → score → ensemble → eval from a config file.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct PoolingFlags {
    /// Pooling for spatial inputs: gap, gmp, gem, crow, or a '+'-joined concatenation
    #[arg(long, default_value = "gap")]
    method: PoolingMethod,
    /// GeM exponent
    #[arg(long, default_value_t = DEFAULT_GEM_POWER)]
    gem_p: f64,
}

impl PoolingFlags {
    fn spec(&self) -> PoolingSpec {
        PoolingSpec::new(self.method.clone()).with_gem_power(self.gem_p)
    }
}

#[derive(Debug, Args)]
struct PoolArgs {
    #[command(flatten)]
    pooling: PoolingFlags,
    /// Spatial OODF input
    #[arg(long = "in")]
    input: PathBuf,
    /// Flat OODF output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// lof, lof_d, or mahalanobis
    #[arg(long, default_value = "lof")]
    detector: String,
    /// LOF neighbor count
    #[arg(long)]
    k: Option<usize>,
    /// LOF metric: euclidean or cosine
    #[arg(long)]
    metric: Option<Metric>,
    /// Mahalanobis ridge: auto or a number ≥ 0
    #[arg(long, default_value = "auto")]
    epsilon: Regularization,
    /// Mahalanobis covariance: tied or per_class
    #[arg(long, default_value = "tied")]
    covariance: CovarianceMode,
    #[command(flatten)]
    pooling: PoolingFlags,
    /// Training features (OODF with labels for per-class detectors, or CSV)
    #[arg(long)]
    train: PathBuf,
    /// Model output (OODM)
    #[arg(long)]
    out: PathBuf,
}

impl FitArgs {
    fn spec(&self) -> Result<DetectorSpec> {
        Ok(match DetectorSpec::from_name(&self.detector)? {
            DetectorSpec::Lof(base) => DetectorSpec::Lof(LofConfig {
                k: self.k.unwrap_or(base.k),
                metric: self.metric.unwrap_or(base.metric),
                mode: base.mode,
            }),
            DetectorSpec::Mahalanobis(_) => DetectorSpec::Mahalanobis(MahalanobisConfig {
                covariance: self.covariance,
                epsilon: self.epsilon,
            }),
        })
    }
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Model (OODM)
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    pooling: PoolingFlags,
    /// Features to score
    #[arg(long = "in")]
    input: PathBuf,
    /// Score CSV output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EnsembleFitArgs {
    /// Validation in-distribution score files, one per layer
    #[arg(long, value_delimiter = ',', required = true)]
    in_scores: Vec<PathBuf>,
    /// Validation OoD score files, one per layer
    #[arg(long, value_delimiter = ',', required = true)]
    out_scores: Vec<PathBuf>,
    /// Layer names; defaults to layer_0, layer_1, …
    #[arg(long, value_delimiter = ',')]
    layers: Vec<String>,
    /// Weights output (key-value text)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CombineArgs {
    /// Weights file from ensemble-fit
    #[arg(long)]
    weights: PathBuf,
    /// Score files, one per layer
    #[arg(long, value_delimiter = ',', required = true)]
    scores: Vec<PathBuf>,
    /// Layer names; defaults to layer_0, layer_1, …
    #[arg(long, value_delimiter = ',')]
    layers: Vec<String>,
    /// Combined score CSV output
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// In-distribution score CSV
    #[arg(long)]
    in_scores: PathBuf,
    /// OoD score CSV
    #[arg(long)]
    out_scores: PathBuf,
    /// JSON report output
    #[arg(long)]
    report: Option<PathBuf>,
    /// Detector label for the report
    #[arg(long, default_value = "detector")]
    detector: String,
    /// Benchmark label for the report
    #[arg(long, default_value = "benchmark")]
    benchmark: String,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Comma-separated dimensionalities
    #[arg(long, value_delimiter = ',', default_values_t = REFERENCE_DIMS)]
    dims: Vec<usize>,
    /// Norm of the OoD mean
    #[arg(long, default_value_t = DEFAULT_OFFSET)]
    r: f64,
    /// Seeds as an inclusive range "a..b" or a comma list
    #[arg(long, default_value = "0..4")]
    seeds: String,
    /// Training samples per class
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    /// In-distribution test samples
    #[arg(long, default_value_t = 1000)]
    n_test_in: usize,
    /// OoD test samples
    #[arg(long, default_value_t = 1000)]
    n_test_out: usize,
    /// LOF neighbor count
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Mahalanobis covariance: tied or per_class
    #[arg(long, default_value = "per_class")]
    covariance: CovarianceMode,
    /// Detectors to run
    #[arg(long, value_delimiter = ',', default_value = "mahalanobis,lof")]
    detectors: Vec<String>,
    /// CSV output; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Pipeline config file
    #[arg(long)]
    config: PathBuf,
    /// Override any config key (repeatable): --set key=value
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    detector: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    covariance: Option<String>,
    #[arg(long)]
    pooling: Option<String>,
    #[arg(long)]
    gem_p: Option<String>,
    #[arg(long)]
    val_fraction: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    benchmark: Option<String>,
}

impl PipelineArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("--set expects key=value, got {kv:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let flags = [
            ("detector", &self.detector),
            ("k", &self.k),
            ("metric", &self.metric),
            ("epsilon", &self.epsilon),
            ("covariance", &self.covariance),
            ("pooling", &self.pooling),
            ("gem_p", &self.gem_p),
            ("val_fraction", &self.val_fraction),
            ("seed", &self.seed),
            ("output_dir", &self.output_dir),
            ("benchmark", &self.benchmark),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        Ok(out)
    }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Invalid(format!("cannot parse seeds {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn layer_names(given: &[String], n: usize) -> Result<Vec<String>> {
    if given.is_empty() {
        return Ok((0..n).map(|i| format!("layer_{i}")).collect());
    }
    if given.len() != n {
        return Err(Error::Invalid(format!("{} layer names for {n} score files", given.len())));
    }
    Ok(given.to_vec())
}

fn read_layers(paths: &[PathBuf], names: Vec<String>) -> Result<LayerScores> {
    let scores = paths.iter().map(read_scores).collect::<Result<Vec<_>>>()?;
    LayerScores::new(names, scores)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pool(a) => {
            let spatial = match read_feature_file(&a.input)? {
                FeatureFile::Spatial(s) => s,
                FeatureFile::Flat(_) => {
                    return Err(Error::Invalid(format!("{}: input is already flat", a.input.display())))
                }
            };
            let (pooled, clamped) = pool_dataset(&spatial, &a.pooling.spec())?;
            if clamped > 0 {
                eprintln!("warning: clamped negative activations to 0 in {clamped} maps before GeM");
            }
            write_feature_file(&FeatureFile::Flat(pooled), &a.out)
        }
        Command::Fit(a) => {
            let spec = a.spec()?;
            let (train, _) = load_features(&a.train, &a.pooling.spec())?;
            FittedDetector::fit(&spec, &train)?.save(&a.out)
        }
        Command::Score(a) => {
            let model = FittedDetector::load(&a.model)?;
            let (data, _) = load_features(&a.input, &a.pooling.spec())?;
            write_scores(&a.out, &model.score(&data)?)
        }
        Command::EnsembleFit(a) => {
            if a.in_scores.len() != a.out_scores.len() {
                return Err(Error::Invalid("need one OoD score file per in-distribution score file".into()));
            }
            let names = layer_names(&a.layers, a.in_scores.len())?;
            let fit = fit_weights(&read_layers(&a.in_scores, names.clone())?, &read_layers(&a.out_scores, names)?)?;
            for l in &fit.dropped_layers {
                eprintln!("warning: layer {l:?} has constant validation scores and gets zero weight");
            }
            fit.weights.save(&a.out)
        }
        Command::Combine(a) => {
            let weights = EnsembleWeights::load(&a.weights)?;
            let names = layer_names(&a.layers, a.scores.len())?;
            write_scores(&a.out, &combine(&read_layers(&a.scores, names)?, &weights)?)
        }
        Command::Eval(a) => {
            let scores = ScoreSet::new(read_scores(&a.in_scores)?, read_scores(&a.out_scores)?)?;
            let report = evaluate(&scores).named(a.detector, a.benchmark);
            if let Some(path) = &a.report {
                let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
                text.push('\n');
                write_text(path, &text)?;
            }
            print!("{}", format_table(std::slice::from_ref(&report)));
            Ok(())
        }
        Command::Simulate(a) => {
            let detectors = a
                .detectors
                .iter()
                .map(|d| d.parse::<SimDetector>())
                .collect::<Result<Vec<_>>>()?;
            let config = SimConfig {
                dims: a.dims,
                n_train_per_class: a.n_train,
                n_test_in: a.n_test_in,
                n_test_out: a.n_test_out,
                offset: a.r,
                seeds: parse_seeds(&a.seeds)?,
                detectors,
                k: a.k,
                covariance: a.covariance,
            };
            let rows = run_sweep(&config)?;
            match &a.out {
                Some(path) => {
                    let io = |e| Error::Io {
                        path: path.clone(),
                        source: e,
                    };
                    let mut w = BufWriter::new(File::create(path).map_err(io)?);
                    write_sweep_csv(&rows, &mut w).map_err(io)?;
                    w.flush().map_err(io)?;
                    for p in average_over_seeds(&rows) {
                        println!(
                            "d={:<5} {:<12} tnr95={:6.2} auroc={:6.2} dtacc={:6.2} aupr={:6.2}",
                            p.d,
                            p.detector.to_string(),
                            p.tnr95,
                            p.auroc,
                            p.dtacc,
                            p.aupr
                        );
                    }
                }
                None => {
                    let stdout = std::io::stdout();
                    write_sweep_csv(&rows, stdout.lock()).map_err(|e| Error::Io {
                        path: PathBuf::from("<stdout>"),
                        source: e,
                    })?;
                }
            }
            Ok(())
        }
        Command::Pipeline(a) => {
            let config = PipelineConfig::from_file(&a.config, &a.overrides()?)?;
            let out = run_pipeline(&config)?;
            print!("{}", format_table(std::slice::from_ref(&out.report)));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Io => 2,
                ErrorKind::Numeric => 3,
            })
        }
    }
}
