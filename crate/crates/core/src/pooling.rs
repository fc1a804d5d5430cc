//! Spatial-to-vector aggregation of convolutional activations.

use std::fmt;
use std::str::FromStr;

use crate::data::{FeatureMatrix, LabeledDataset, SpatialDataset, SpatialFeatureMap};
use crate::error::{Error, Result};

pub const DEFAULT_GEM_POWER: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PoolingMethod {
    /// Per-channel mean.
    Gap,
    /// Per-channel max.
    Gmp,
    /// Generalized mean `((1/hw) Σ x^p)^(1/p)`.
    Gem,
    /// Cross-dimensional weighting: spatial and channel re-weighted sum.
    Crow,
    /// Outputs of each method, concatenated in order.
    Concat(Vec<PoolingMethod>),
}

impl PoolingMethod {
    fn output_len(&self, channels: usize) -> usize {
        match self {
            PoolingMethod::Concat(parts) => parts.iter().map(|p| p.output_len(channels)).sum(),
            _ => channels,
        }
    }
}

impl fmt::Display for PoolingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolingMethod::Gap => f.write_str("gap"),
            PoolingMethod::Gmp => f.write_str("gmp"),
            PoolingMethod::Gem => f.write_str("gem"),
            PoolingMethod::Crow => f.write_str("crow"),
            PoolingMethod::Concat(parts) => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

/// Accepts `gap`, `gmp`, `gem`, `crow`, or several joined by `+` or `,`
/// (e.g. `gap+gmp`) for concatenation.
impl FromStr for PoolingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['+', ',']).map(str::trim).collect();
        if parts.len() > 1 {
            let methods = parts
                .into_iter()
                .map(|p| p.parse())
                .collect::<Result<Vec<_>>>()?;
            return Ok(PoolingMethod::Concat(methods));
        }
        match s.trim().to_ascii_lowercase().as_str() {
            "gap" | "avg" | "mean" => Ok(PoolingMethod::Gap),
            "gmp" | "max" => Ok(PoolingMethod::Gmp),
            "gem" => Ok(PoolingMethod::Gem),
            "crow" => Ok(PoolingMethod::Crow),
            other => Err(Error::invalid(format!("unknown pooling method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolingSpec {
    pub method: PoolingMethod,
    pub gem_power: f64,
}

impl PoolingSpec {
    pub fn new(method: PoolingMethod) -> Self {
        PoolingSpec {
            method,
            gem_power: DEFAULT_GEM_POWER,
        }
    }

    pub fn with_gem_power(mut self, p: f64) -> Self {
        self.gem_power = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gem_power.is_finite() && self.gem_power > 0.0) {
            return Err(Error::invalid(format!(
                "GeM power must be finite and positive, got {}",
                self.gem_power
            )));
        }
        fn check(m: &PoolingMethod) -> Result<()> {
            match m {
                PoolingMethod::Concat(parts) if parts.is_empty() => {
                    Err(Error::invalid("concat pooling needs at least one method"))
                }
                PoolingMethod::Concat(parts) => parts.iter().try_for_each(check),
                _ => Ok(()),
            }
        }
        check(&self.method)
    }
}

/// A pooled vector. `clamped_negatives` is set when GeM or CroW met
/// negative activations and treated them as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Vec<f64>,
    pub clamped_negatives: bool,
}

pub fn pool(map: &SpatialFeatureMap, spec: &PoolingSpec) -> Result<Pooled> {
    spec.validate()?;
    let mut out = Pooled {
        values: Vec::with_capacity(spec.method.output_len(map.channels())),
        clamped_negatives: false,
    };
    pool_into(map, &spec.method, spec.gem_power, &mut out);
    Ok(out)
}

fn pool_into(map: &SpatialFeatureMap, method: &PoolingMethod, p: f64, out: &mut Pooled) {
    let c = map.channels();
    if let PoolingMethod::Concat(parts) = method {
        for part in parts {
            pool_into(map, part, p, out);
        }
        return;
    }
    if map.height() * map.width() == 1 {
        out.values.extend_from_slice(map.values());
        return;
    }
    match method {
        PoolingMethod::Gap => out.values.extend((0..c).map(|k| mean(map.channel(k)))),
        PoolingMethod::Gmp => out
            .values
            .extend((0..c).map(|k| map.channel(k).iter().copied().fold(f64::NEG_INFINITY, f64::max))),
        PoolingMethod::Gem => {
            for k in 0..c {
                let plane = map.channel(k);
                out.clamped_negatives |= plane.iter().any(|&x| x < 0.0);
                let m = plane.iter().map(|&x| x.max(0.0).powf(p)).sum::<f64>() / plane.len() as f64;
                out.values.push(m.powf(1.0 / p));
            }
        }
        PoolingMethod::Crow => {
            out.clamped_negatives |= map.values().iter().any(|&x| x < 0.0);
            out.values.extend(crow(map));
        }
        PoolingMethod::Concat(_) => unreachable!(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn crow(map: &SpatialFeatureMap) -> Vec<f64> {
    let c = map.channels();
    let hw = map.height() * map.width();

    let mut spatial = vec![0.0; hw];
    for k in 0..c {
        for (s, &x) in spatial.iter_mut().zip(map.channel(k)) {
            *s += x.max(0.0);
        }
    }
    let norm = spatial.iter().map(|s| s * s).sum::<f64>().sqrt();
    let alpha: Vec<f64> = spatial
        .iter()
        .map(|&s| if s > 0.0 { (s / norm).sqrt() } else { 0.0 })
        .collect();

    let nonzero: Vec<f64> = (0..c)
        .map(|k| map.channel(k).iter().filter(|&&x| x > 0.0).count() as f64 / hw as f64)
        .collect();
    let total: f64 = nonzero.iter().sum();

    (0..c)
        .map(|k| {
            let q = nonzero[k];
            if q == 0.0 {
                return 0.0;
            }
            let beta = (total / q).ln();
            let weighted: f64 = map
                .channel(k)
                .iter()
                .zip(&alpha)
                .map(|(&x, &a)| a * x.max(0.0))
                .sum();
            beta * weighted
        })
        .collect()
}

/// Pools every map of a spatial dataset into a flat dataset, keeping labels.
/// Returns the dataset and the number of maps that had negatives clamped.
pub fn pool_dataset(data: &SpatialDataset, spec: &PoolingSpec) -> Result<(LabeledDataset, usize)> {
    spec.validate()?;
    let dim = spec.method.output_len(data.shape().0);
    let mut values = Vec::with_capacity(dim * data.maps().len());
    let mut clamped = 0;
    for map in data.maps() {
        let pooled = pool(map, spec)?;
        clamped += pooled.clamped_negatives as usize;
        values.extend(pooled.values);
    }
    let features = FeatureMatrix::new(data.maps().len(), dim, values, data.layer_name())?;
    let ds = LabeledDataset::new(
        features,
        data.labels().map(<[i64]>::to_vec),
        data.predicted_labels().map(<[i64]>::to_vec),
    )?;
    Ok((ds, clamped))
}
