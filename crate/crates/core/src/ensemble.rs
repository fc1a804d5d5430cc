//! Weighted combination of per-layer confidence scores.
//!
//! `combined_i = bias + Σ_ℓ α_ℓ · s_{ℓ,i}`. Weights come from a logistic
//! regression separating validation in-distribution scores (label 1) from
//! validation OoD scores (label 0). A single layer with `α = [1]` and zero
//! bias is the last-layer-only mode and needs no fitting.

use std::path::Path;

use crate::error::{Error, Result};

pub const LEARNING_RATE: f64 = 0.1;
pub const ITERATIONS: usize = 2000;
pub const L2_STRENGTH: f64 = 1e-4;

/// Per-layer confidence arrays of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    names: Vec<String>,
    scores: Vec<Vec<f64>>,
}

impl LayerScores {
    pub fn new(names: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if names.is_empty() || names.len() != scores.len() {
            return Err(Error::invalid(format!(
                "need ≥ 1 layer with one name per score array, got {} names and {} arrays",
                names.len(),
                scores.len()
            )));
        }
        let len = scores[0].len();
        for (name, s) in names.iter().zip(&scores) {
            if s.len() != len {
                return Err(Error::invalid(format!(
                    "layer {name:?} has {} scores, expected {len}",
                    s.len()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {name:?} has non-finite scores")));
            }
        }
        Ok(LayerScores { names, scores })
    }

    /// The degenerate single-layer set.
    pub fn single(name: impl Into<String>, scores: Vec<f64>) -> Result<Self> {
        LayerScores::new(vec![name.into()], vec![scores])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.scores[l]
    }

    pub fn num_layers(&self) -> usize {
        self.names.len()
    }

    pub fn num_samples(&self) -> usize {
        self.scores[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeight {
    pub layer: String,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleWeights {
    pub layers: Vec<LayerWeight>,
    pub bias: f64,
}

impl EnsembleWeights {
    pub fn new(names: &[String], alpha: &[f64], bias: f64) -> Result<Self> {
        if names.len() != alpha.len() {
            return Err(Error::invalid("one weight per layer is required"));
        }
        if !bias.is_finite() || alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("ensemble weights must be finite"));
        }
        if let Some(n) = names.iter().find(|n| n.trim().is_empty() || n.contains(['\n', '\r']) || n.trim() != n.as_str()) {
            return Err(Error::invalid(format!("invalid layer name {n:?}")));
        }
        Ok(EnsembleWeights {
            layers: names
                .iter()
                .zip(alpha)
                .map(|(n, &a)| LayerWeight {
                    layer: n.clone(),
                    alpha: a,
                })
                .collect(),
            bias,
        })
    }

    /// `α = 1` for the only layer, zero bias.
    pub fn identity(name: impl Into<String>) -> Self {
        EnsembleWeights {
            layers: vec![LayerWeight {
                layer: name.into(),
                alpha: 1.0,
            }],
            bias: 0.0,
        }
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.layers.iter().map(|w| w.alpha).collect()
    }

    /// Plain-text key-value form: one `bias = …` line and one
    /// `alpha.<layer> = …` line per layer, in layer order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# oodkit ensemble weights\n");
        s.push_str(&format!("bias = {}\n", self.bias));
        for w in &self.layers {
            s.push_str(&format!("alpha.{} = {}\n", w.layer, w.alpha));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut bias = None;
        let mut names = Vec::new();
        let mut alpha = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::invalid(format!("weights line {}: {line:?}", lineno + 1));
            let (key, value) = line.rsplit_once('=').ok_or_else(bad)?;
            let value: f64 = value.trim().parse().map_err(|_| bad())?;
            let key = key.trim();
            if key == "bias" {
                if bias.replace(value).is_some() {
                    return Err(Error::invalid("weights file repeats bias"));
                }
            } else if let Some(name) = key.strip_prefix("alpha.") {
                if names.iter().any(|n| n == name) {
                    return Err(Error::invalid(format!("weights file repeats layer {name:?}")));
                }
                names.push(name.to_string());
                alpha.push(value);
            } else {
                return Err(bad());
            }
        }
        let bias = bias.ok_or_else(|| Error::invalid("weights file has no bias"))?;
        if names.is_empty() {
            return Err(Error::invalid("weights file has no layers"));
        }
        EnsembleWeights::new(&names, &alpha, bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EnsembleWeights::from_text(&text)
    }
}

/// Applies `weights` to `scores`, matching layers by name.
pub fn combine(scores: &LayerScores, weights: &EnsembleWeights) -> Result<Vec<f64>> {
    if weights.layers.len() != scores.num_layers() {
        return Err(Error::invalid(format!(
            "{} weights for {} layers",
            weights.layers.len(),
            scores.num_layers()
        )));
    }
    let mut out = vec![weights.bias; scores.num_samples()];
    for w in &weights.layers {
        let l = scores
            .names
            .iter()
            .position(|n| *n == w.layer)
            .ok_or_else(|| Error::invalid(format!("no scores for weighted layer {:?}", w.layer)))?;
        for (o, s) in out.iter_mut().zip(&scores.scores[l]) {
            *o += w.alpha * s;
        }
    }
    Ok(out)
}

/// Fitted weights plus the layers that were dropped for having no variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleFit {
    pub weights: EnsembleWeights,
    pub dropped_layers: Vec<String>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression by full-batch gradient descent on standardized
/// per-layer scores (zero init, fixed step count), de-standardized on return.
pub fn fit_weights(val_in: &LayerScores, val_out: &LayerScores) -> Result<EnsembleFit> {
    if val_in.names != val_out.names {
        return Err(Error::invalid("validation in/out scores must cover the same layers"));
    }
    let layers = val_in.num_layers();
    let n = val_in.num_samples() + val_out.num_samples();

    let mut mean = vec![0.0; layers];
    let mut sd = vec![0.0; layers];
    for l in 0..layers {
        let all = || val_in.scores[l].iter().chain(&val_out.scores[l]);
        let m = all().sum::<f64>() / n as f64;
        let var = all().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        mean[l] = m;
        sd[l] = var.sqrt();
    }
    let active: Vec<usize> = (0..layers).filter(|&l| sd[l] > 0.0 && sd[l].is_finite()).collect();
    let dropped_layers = (0..layers)
        .filter(|l| !active.contains(l))
        .map(|l| val_in.names[l].clone())
        .collect();

    // Standardized design matrix, row-major over active layers.
    let width = active.len();
    let mut x = Vec::with_capacity(n * width);
    let mut y = Vec::with_capacity(n);
    for (set, label) in [(val_in, 1.0), (val_out, 0.0)] {
        for i in 0..set.num_samples() {
            for &l in &active {
                x.push((set.scores[l][i] - mean[l]) / sd[l]);
            }
            y.push(label);
        }
    }

    let mut w = vec![0.0; width];
    let mut b = 0.0;
    let mut grad = vec![0.0; width];
    for _ in 0..ITERATIONS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &target) in x.chunks_exact(width.max(1)).zip(&y) {
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = sigmoid(z) - target;
            for (g, a) in grad.iter_mut().zip(row) {
                *g += err * a;
            }
            grad_b += err;
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= LEARNING_RATE * (g / n as f64 + L2_STRENGTH * *wj);
        }
        b -= LEARNING_RATE * grad_b / n as f64;
    }

    let mut alpha = vec![0.0; layers];
    let mut bias = b;
    for (j, &l) in active.iter().enumerate() {
        alpha[l] = w[j] / sd[l];
        bias -= w[j] * mean[l] / sd[l];
    }
    Ok(EnsembleFit {
        weights: EnsembleWeights::new(&val_in.names, &alpha, bias)?,
        dropped_layers,
    })
}
