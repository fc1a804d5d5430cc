#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use oodkit::data::{FeatureFile, LabeledDataset, SpatialDataset, SpatialFeatureMap};
use oodkit::oodf::write_feature_file;
use oodkit::simulation::{generate, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn oodkit<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_oodkit")).args(args).output().expect("spawn oodkit");
    Outcome {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

/// Writes two simulated layers (flat) and one spatial layer with labels.
pub fn write_inputs(dir: &Path, d: usize, n: usize) {
    for (prefix, dim, seed) in [("a", d, 0u64), ("b", d / 2 + 1, 1)] {
        let cfg = SimConfig {
            dims: vec![dim],
            n_train_per_class: n,
            n_test_in: n,
            n_test_out: n,
            seeds: vec![seed],
            ..SimConfig::default()
        };
        let data = generate(&cfg, dim, seed).unwrap();
        write_feature_file(&FeatureFile::Flat(data.train), dir.join(format!("{prefix}_train.oodf"))).unwrap();
        for (name, m) in [("in", data.test_in), ("out", data.test_out)] {
            let f = FeatureFile::Flat(LabeledDataset::unlabeled(m));
            write_feature_file(&f, dir.join(format!("{prefix}_{name}.oodf"))).unwrap();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let maps: Vec<SpatialFeatureMap> = (0..40)
        .map(|i| {
            let bump = if i < 20 { 0.0 } else { 1.5 };
            let v = (0..4 * 3 * 3).map(|_| rng.random_range(-0.2..1.0) + bump).collect();
            SpatialFeatureMap::new(4, 3, 3, v).unwrap()
        })
        .collect();
    let labels: Vec<i64> = (0..40).map(|i| i / 20).collect();
    let spatial = SpatialDataset::new("conv5", maps, Some(labels.clone()), Some(labels)).unwrap();
    write_feature_file(&FeatureFile::Spatial(spatial), dir.join("maps.oodf")).unwrap();
}

/// Runs every subcommand once, writing into `out`; returns the files produced.
pub fn run_workflow(inputs: &Path, out: &Path) -> Result<Vec<PathBuf>, String> {
    std::fs::create_dir_all(out).unwrap();
    let i = |f: &str| p(&inputs.join(f));
    let o = |f: &str| p(&out.join(f));
    let mut steps: Vec<Vec<String>> = Vec::new();
    let mut step = |args: &[&str]| steps.push(args.iter().map(|s| s.to_string()).collect());

    step(&["pool", "--method", "gem", "--gem-p", "3", "--in", &i("maps.oodf"), "--out", &o("pooled_gem.oodf")]);
    step(&["pool", "--method", "crow+gap", "--in", &i("maps.oodf"), "--out", &o("pooled_mix.oodf")]);
    step(&["fit", "--detector", "lof_d", "--k", "5", "--train", &o("pooled_mix.oodf"), "--out", &o("maps.oodm")]);
    step(&["score", "--model", &o("maps.oodm"), "--in", &i("maps.oodf"), "--method", "crow+gap", "--out", &o("maps.csv")]);
    for (layer, det) in [("a", "lof"), ("b", "mahalanobis")] {
        let model = o(&format!("{layer}.oodm"));
        step(&["fit", "--detector", det, "--train", &i(&format!("{layer}_train.oodf")), "--out", &model]);
        for split in ["in", "out"] {
            step(&[
                "score",
                "--model",
                &model,
                "--in",
                &i(&format!("{layer}_{split}.oodf")),
                "--out",
                &o(&format!("{layer}_{split}.csv")),
            ]);
        }
    }
    step(&["fit", "--detector", "mahalanobis", "--covariance", "per_class", "--epsilon", "1e-4", "--train", &i("a_train.oodf"), "--out", &o("a_pc.oodm")]);
    let ins = format!("{},{}", o("a_in.csv"), o("b_in.csv"));
    let outs = format!("{},{}", o("a_out.csv"), o("b_out.csv"));
    step(&["ensemble-fit", "--in-scores", &ins, "--out-scores", &outs, "--layers", "a,b", "--out", &o("weights.txt")]);
    step(&["combine", "--weights", &o("weights.txt"), "--scores", &ins, "--layers", "a,b", "--out", &o("combined_in.csv")]);
    step(&["combine", "--weights", &o("weights.txt"), "--scores", &outs, "--layers", "a,b", "--out", &o("combined_out.csv")]);
    step(&["eval", "--in-scores", &o("combined_in.csv"), "--out-scores", &o("combined_out.csv"), "--report", &o("eval.json")]);
    step(&["simulate", "--dims", "1,30", "--seeds", "0..1", "--n-train", "120", "--n-test-in", "80", "--n-test-out", "80", "--out", &o("sim.csv")]);

    let config = format!(
        "version = 1\nlayers = a, b\ntrain = {}, {}\ntest_in = {}, {}\ntest_out = {}, {}\nseed = 3\noutput_dir = pipe\n",
        i("a_train.oodf"),
        i("b_train.oodf"),
        i("a_in.oodf"),
        i("b_in.oodf"),
        i("a_out.oodf"),
        i("b_out.oodf"),
    );
    std::fs::write(out.join("pipeline.cfg"), config).unwrap();
    step(&["pipeline", "--config", &o("pipeline.cfg"), "--detector", "lof", "--set", "k=10"]);

    for args in steps {
        let r = oodkit(&args);
        if r.code != 0 {
            return Err(format!("oodkit {} exited {}: {}", args.join(" "), r.code, r.stderr.trim()));
        }
    }
    let mut files = Vec::new();
    collect(out, &mut files);
    files.sort();
    Ok(files)
}

fn collect(dir: &Path, files: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            collect(&path, files);
        } else {
            files.push(path);
        }
    }
}

/// Runs the workflow twice in separate directories and lists files whose
/// bytes differ (or exist in only one run).
pub fn determinism_check(root: &Path) -> Result<(usize, Vec<String>), String> {
    let inputs = root.join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    write_inputs(&inputs, 24, 150);
    let a = run_workflow(&inputs, &root.join("run_a"))?;
    let b = run_workflow(&inputs, &root.join("run_b"))?;
    let rel = |base: &Path, v: &[PathBuf]| -> Vec<PathBuf> {
        v.iter().map(|f| f.strip_prefix(base).unwrap().to_path_buf()).collect()
    };
    let (ra, rb) = (rel(&root.join("run_a"), &a), rel(&root.join("run_b"), &b));
    let mut diffs = Vec::new();
    if ra != rb {
        diffs.push("file sets differ".to_string());
    }
    for f in &ra {
        let x = std::fs::read(root.join("run_a").join(f)).unwrap();
        let y = std::fs::read(root.join("run_b").join(f)).unwrap_or_default();
        if x != y {
            diffs.push(f.display().to_string());
        }
    }
    Ok((ra.len(), diffs))
}
