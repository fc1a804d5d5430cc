//! Uniform fit/score surface over the LOF and Mahalanobis detectors, and the
//! OODM model container.
//!
//! OODM layout (little-endian):
//!
//! ```text
//! magic      4 bytes "OODM"
//! version    u16     1
//! name_len   u16     + UTF-8 layer name
//! kind       u8      1 = LOF, 2 = Mahalanobis
//! LOF:
//!   k u32 · metric u8 (0 euclidean, 1 cosine) · mode u8 (0 global, 1 per-class)
//!   groups u32 · dim u64
//!   per group: class i64 (−1 for global) · n u64 · points f64[n·dim]
//!              · k_distance f64[n] · lrd f64[n]
//! Mahalanobis:
//!   covariance u8 (0 tied, 1 per-class) · classes u32 · dim u64
//!   per class: id i64 · mean f64[dim]
//!   per precision (1 if tied, else one per class):
//!              epsilon f64 · covariance f64[dim²] · precision f64[dim²]  (row-major)
//! ```

use std::fmt;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::data::{FeatureMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::knn::Metric;
use crate::lof::{fit_lof, LofConfig, LofMode, LofModel};
use crate::mahalanobis::{fit_mahalanobis, CovarianceMode, MahalanobisConfig, MahalanobisModel, Precision};

pub const MODEL_MAGIC: &[u8; 4] = b"OODM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorSpec {
    Lof(LofConfig),
    Mahalanobis(MahalanobisConfig),
}

impl DetectorSpec {
    /// Parses `lof`, `lof_d`, or `mahalanobis` with the default settings of each.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "lof" => Ok(DetectorSpec::Lof(LofConfig::default())),
            "lof_d" | "lofd" => Ok(DetectorSpec::Lof(LofConfig::lof_d(crate::lof::DEFAULT_K))),
            "mahalanobis" | "mahal" => Ok(DetectorSpec::Mahalanobis(MahalanobisConfig::default())),
            other => Err(Error::invalid(format!(
                "unknown detector {other:?} (expected lof, lof_d or mahalanobis)"
            ))),
        }
    }
}

impl fmt::Display for DetectorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DetectorSpec::Lof(c) => {
                let base = match c.mode {
                    LofMode::Global => "LOF",
                    LofMode::PerClass => "LOF_D",
                };
                write!(f, "{base}(k={}, {})", c.k, c.metric)
            }
            DetectorSpec::Mahalanobis(c) => write!(f, "Mahalanobis({}, eps={})", c.covariance, c.epsilon),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Detector {
    Lof(LofModel),
    Mahalanobis(MahalanobisModel),
}

#[derive(Debug, Clone)]
pub struct FittedDetector {
    pub layer_name: String,
    pub detector: Detector,
}

impl FittedDetector {
    pub fn fit(spec: &DetectorSpec, train: &LabeledDataset) -> Result<Self> {
        let detector = match spec {
            DetectorSpec::Lof(c) => Detector::Lof(fit_lof(train, *c)?),
            DetectorSpec::Mahalanobis(c) => Detector::Mahalanobis(fit_mahalanobis(train, *c)?),
        };
        Ok(FittedDetector {
            layer_name: train.features().layer_name().to_string(),
            detector,
        })
    }

    pub fn spec(&self) -> DetectorSpec {
        match &self.detector {
            Detector::Lof(m) => DetectorSpec::Lof(*m.config()),
            Detector::Mahalanobis(m) => DetectorSpec::Mahalanobis(MahalanobisConfig {
                covariance: m.mode(),
                epsilon: crate::mahalanobis::Regularization::Fixed(m.precisions()[0].epsilon()),
            }),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.detector {
            Detector::Lof(m) => m.dim(),
            Detector::Mahalanobis(m) => m.dim(),
        }
    }

    /// Confidence for every row. Per-class LOF uses the dataset's predicted
    /// labels when present, nearest centroid otherwise.
    pub fn score(&self, data: &LabeledDataset) -> Result<Vec<f64>> {
        match &self.detector {
            Detector::Lof(m) => m.score_matrix(data.features(), data.predicted_labels()),
            Detector::Mahalanobis(m) => m.score_matrix(data.features()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FittedDetector::decode(&bytes)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let name_len = u16::try_from(self.layer_name.len())
            .map_err(|_| Error::Overflow("layer name too long".into()))?;
        out.extend_from_slice(MODEL_MAGIC);
        out.write_u16::<LittleEndian>(MODEL_VERSION).unwrap();
        out.write_u16::<LittleEndian>(name_len).unwrap();
        out.extend_from_slice(self.layer_name.as_bytes());
        let put_f64s = |out: &mut Vec<u8>, xs: &[f64]| {
            for &x in xs {
                out.write_f64::<LittleEndian>(x).unwrap();
            }
        };
        match &self.detector {
            Detector::Lof(m) => {
                let c = m.config();
                out.write_u8(1).unwrap();
                out.write_u32::<LittleEndian>(
                    u32::try_from(c.k).map_err(|_| Error::Overflow("k".into()))?,
                )
                .unwrap();
                out.write_u8(match c.metric {
                    Metric::Euclidean => 0,
                    Metric::Cosine => 1,
                })
                .unwrap();
                out.write_u8(match c.mode {
                    LofMode::Global => 0,
                    LofMode::PerClass => 1,
                })
                .unwrap();
                out.write_u32::<LittleEndian>(m.groups().len() as u32).unwrap();
                out.write_u64::<LittleEndian>(m.dim() as u64).unwrap();
                for g in m.groups() {
                    out.write_i64::<LittleEndian>(g.class().unwrap_or(-1)).unwrap();
                    out.write_u64::<LittleEndian>(g.points().rows() as u64).unwrap();
                    put_f64s(&mut out, g.points().values());
                    put_f64s(&mut out, g.k_distances());
                    put_f64s(&mut out, g.lrds());
                }
            }
            Detector::Mahalanobis(m) => {
                out.write_u8(2).unwrap();
                out.write_u8(match m.mode() {
                    CovarianceMode::Tied => 0,
                    CovarianceMode::PerClass => 1,
                })
                .unwrap();
                out.write_u32::<LittleEndian>(m.classes().len() as u32).unwrap();
                out.write_u64::<LittleEndian>(m.dim() as u64).unwrap();
                for (id, mean) in m.classes().iter().zip(m.means()) {
                    out.write_i64::<LittleEndian>(*id).unwrap();
                    put_f64s(&mut out, mean.as_slice());
                }
                for p in m.precisions() {
                    out.write_f64::<LittleEndian>(p.epsilon()).unwrap();
                    // nalgebra is column-major; the transpose gives row-major order.
                    put_f64s(&mut out, p.covariance().transpose().as_slice());
                    put_f64s(&mut out, p.precision().transpose().as_slice());
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(Cursor::new(bytes));
        let magic = r.bytes(4)?;
        if magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                expected: "OODM".into(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let name_len = r.u16()? as usize;
        let layer_name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| Error::invalid("model layer name is not UTF-8"))?;
        let detector = match r.u8()? {
            1 => {
                let k = r.u32()? as usize;
                let metric = match r.u8()? {
                    0 => Metric::Euclidean,
                    1 => Metric::Cosine,
                    v => return Err(Error::invalid(format!("unknown metric code {v}"))),
                };
                let mode = match r.u8()? {
                    0 => LofMode::Global,
                    1 => LofMode::PerClass,
                    v => return Err(Error::invalid(format!("unknown LOF mode code {v}"))),
                };
                let n_groups = r.u32()? as usize;
                let dim = r.count()?;
                let mut groups = Vec::new();
                for _ in 0..n_groups {
                    let class = r.i64()?;
                    let n = r.count()?;
                    let points = FeatureMatrix::new(n, dim, r.f64s(n.saturating_mul(dim))?, layer_name.clone())?;
                    let kd = r.f64s(n)?;
                    let lrd = r.f64s(n)?;
                    let class = (mode == LofMode::PerClass).then_some(class);
                    groups.push((class, points, kd, lrd));
                }
                Detector::Lof(LofModel::from_parts(LofConfig { k, metric, mode }, groups)?)
            }
            2 => {
                let mode = match r.u8()? {
                    0 => CovarianceMode::Tied,
                    1 => CovarianceMode::PerClass,
                    v => return Err(Error::invalid(format!("unknown covariance code {v}"))),
                };
                let n_classes = r.u32()? as usize;
                let dim = r.count()?;
                let mut classes = Vec::new();
                let mut means = Vec::new();
                for _ in 0..n_classes {
                    classes.push(r.i64()?);
                    means.push(DVector::from_vec(r.f64s(dim)?));
                }
                let n_prec = match mode {
                    CovarianceMode::Tied => 1,
                    CovarianceMode::PerClass => n_classes,
                };
                let mut precisions = Vec::new();
                let sq = dim.checked_mul(dim).ok_or_else(|| Error::Overflow("dim²".into()))?;
                for _ in 0..n_prec {
                    let eps = r.f64()?;
                    let cov = DMatrix::from_row_slice(dim, dim, &r.f64s(sq)?);
                    let prec = DMatrix::from_row_slice(dim, dim, &r.f64s(sq)?);
                    precisions.push(Precision::from_parts(cov, eps, prec)?);
                }
                Detector::Mahalanobis(MahalanobisModel::from_parts(mode, classes, means, precisions)?)
            }
            v => return Err(Error::invalid(format!("unknown detector kind {v}"))),
        };
        if r.0.position() != bytes.len() as u64 {
            return Err(Error::invalid("trailing bytes after model payload"));
        }
        Ok(FittedDetector {
            layer_name,
            detector,
        })
    }
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn remaining(&self) -> u64 {
        self.0.get_ref().len() as u64 - self.0.position()
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        if (n as u64) > self.remaining() {
            return Err(Error::Truncated(format!("model needs {n} more bytes")));
        }
        let mut buf = vec![0; n];
        self.0.read_exact(&mut buf).expect("length checked");
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        self.0.read_u8().map_err(|_| Error::Truncated("model header".into()))
    }

    fn u16(&mut self) -> Result<u16> {
        self.0
            .read_u16::<LittleEndian>()
            .map_err(|_| Error::Truncated("model header".into()))
    }

    fn u32(&mut self) -> Result<u32> {
        self.0
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Truncated("model header".into()))
    }

    fn i64(&mut self) -> Result<i64> {
        self.0
            .read_i64::<LittleEndian>()
            .map_err(|_| Error::Truncated("model header".into()))
    }

    fn count(&mut self) -> Result<usize> {
        let v = self
            .0
            .read_u64::<LittleEndian>()
            .map_err(|_| Error::Truncated("model header".into()))?;
        usize::try_from(v).map_err(|_| Error::Overflow(format!("count {v}")))
    }

    fn f64(&mut self) -> Result<f64> {
        self.0
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::Truncated("model payload".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if (n as u64).saturating_mul(8) > self.remaining() {
            return Err(Error::Truncated(format!("model payload needs {n} more values")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
