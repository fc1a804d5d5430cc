//! OODF feature files, plus a CSV fallback for hand-made fixtures.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "OODF"
//! version    u16      1
//! flags      u16      bit0 labels, bit1 predicted labels, bit2 spatial
//! name_len   u16      followed by name_len bytes of UTF-8 layer name
//! n          u64      row count
//! dims       u64      flat: d
//!            3 × u64  spatial: c, h, w
//! payload    f32      n·d (or n·c·h·w) values, row-major
//! labels     i64      n values, only if bit0
//! predicted  i64      n values, only if bit1
//! ```
//!
//! A 1×1 flat matrix named `layer_0` with no labels is 37 bytes.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::{FeatureFile, FeatureMatrix, LabeledDataset, SpatialDataset, SpatialFeatureMap};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OODF";
pub const VERSION: u16 = 1;

const FLAG_LABELS: u16 = 1;
const FLAG_PREDICTED: u16 = 1 << 1;
const FLAG_SPATIAL: u16 = 1 << 2;

fn to_f32(v: f64, row: usize, col: usize) -> Result<f32> {
    let x = v as f32;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite { row, col })
    }
}

/// Serializes a feature file to bytes.
pub fn encode(file: &FeatureFile) -> Result<Vec<u8>> {
    let (name, labels, predicted) = match file {
        FeatureFile::Flat(d) => (d.features().layer_name(), d.labels(), d.predicted_labels()),
        FeatureFile::Spatial(s) => (s.layer_name(), s.labels(), s.predicted_labels()),
    };
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::Overflow(format!("layer name of {} bytes", name.len())))?;

    let mut flags = 0u16;
    if labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if predicted.is_some() {
        flags |= FLAG_PREDICTED;
    }
    if matches!(file, FeatureFile::Spatial(_)) {
        flags |= FLAG_SPATIAL;
    }

    let n = file.rows();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(VERSION).unwrap();
    out.write_u16::<LittleEndian>(flags).unwrap();
    out.write_u16::<LittleEndian>(name_len).unwrap();
    out.extend_from_slice(name.as_bytes());
    out.write_u64::<LittleEndian>(n as u64).unwrap();

    match file {
        FeatureFile::Flat(d) => {
            let f = d.features();
            out.write_u64::<LittleEndian>(f.dim() as u64).unwrap();
            out.reserve(f.values().len() * 4);
            for (i, &v) in f.values().iter().enumerate() {
                out.write_f32::<LittleEndian>(to_f32(v, i / f.dim(), i % f.dim())?)
                    .unwrap();
            }
        }
        FeatureFile::Spatial(s) => {
            let (c, h, w) = s.shape();
            for v in [c, h, w] {
                out.write_u64::<LittleEndian>(v as u64).unwrap();
            }
            let per_row = c * h * w;
            for (r, map) in s.maps().iter().enumerate() {
                for (j, &v) in map.values().iter().enumerate() {
                    out.write_f32::<LittleEndian>(to_f32(v, r, j)?).unwrap();
                }
                debug_assert_eq!(map.values().len(), per_row);
            }
        }
    }
    for l in [labels, predicted].into_iter().flatten() {
        for &v in l {
            out.write_i64::<LittleEndian>(v).unwrap();
        }
    }
    Ok(out)
}

fn truncated(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |_| Error::Truncated(format!("while reading {what}"))
}

fn read_count(cur: &mut Cursor<&[u8]>, what: &str) -> Result<usize> {
    let v = cur.read_u64::<LittleEndian>().map_err(truncated(what))?;
    usize::try_from(v).map_err(|_| Error::Overflow(format!("{what} = {v}")))
}

/// Parses an OODF byte buffer.
pub fn decode(bytes: &[u8]) -> Result<FeatureFile> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = cur.read_u16::<LittleEndian>().map_err(truncated("version"))?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = cur.read_u16::<LittleEndian>().map_err(truncated("flags"))?;
    if flags & !(FLAG_LABELS | FLAG_PREDICTED | FLAG_SPATIAL) != 0 {
        return Err(Error::invalid(format!("unknown flag bits {flags:#06x}")));
    }
    let name_len = cur.read_u16::<LittleEndian>().map_err(truncated("name length"))? as usize;
    let mut name = vec![0u8; name_len];
    cur.read_exact(&mut name).map_err(truncated("layer name"))?;
    let name = String::from_utf8(name).map_err(|_| Error::invalid("layer name is not UTF-8"))?;

    let n = read_count(&mut cur, "row count")?;
    let spatial = flags & FLAG_SPATIAL != 0;
    let dims: Vec<usize> = if spatial {
        vec![
            read_count(&mut cur, "channels")?,
            read_count(&mut cur, "height")?,
            read_count(&mut cur, "width")?,
        ]
    } else {
        vec![read_count(&mut cur, "dimension")?]
    };
    let per_row = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Overflow(format!("dims {dims:?}")))?;
    let total = n
        .checked_mul(per_row)
        .ok_or_else(|| Error::Overflow(format!("{n} rows of {per_row} values")))?;

    let remaining = bytes.len() as u64 - cur.position();
    let label_arrays = (flags & FLAG_LABELS != 0) as u64 + (flags & FLAG_PREDICTED != 0) as u64;
    let needed = (total as u64)
        .checked_mul(4)
        .and_then(|p| p.checked_add(label_arrays.checked_mul(n as u64)?.checked_mul(8)?))
        .ok_or_else(|| Error::Overflow("payload size".into()))?;
    if remaining < needed {
        return Err(Error::Truncated(format!(
            "payload needs {needed} bytes, {remaining} available"
        )));
    }
    if remaining > needed {
        return Err(Error::invalid(format!(
            "{} trailing bytes after payload",
            remaining - needed
        )));
    }

    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        values.push(f64::from(cur.read_f32::<LittleEndian>().map_err(truncated("payload"))?));
    }
    let mut read_labels = |present: bool| -> Result<Option<Vec<i64>>> {
        if !present {
            return Ok(None);
        }
        (0..n)
            .map(|_| cur.read_i64::<LittleEndian>().map_err(truncated("labels")))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    let labels = read_labels(flags & FLAG_LABELS != 0)?;
    let predicted = read_labels(flags & FLAG_PREDICTED != 0)?;

    if spatial {
        let maps = values
            .chunks_exact(per_row.max(1))
            .map(|chunk| SpatialFeatureMap::new(dims[0], dims[1], dims[2], chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureFile::Spatial(SpatialDataset::new(name, maps, labels, predicted)?))
    } else {
        let features = FeatureMatrix::new(n, dims[0], values, name)?;
        Ok(FeatureFile::Flat(LabeledDataset::new(features, labels, predicted)?))
    }
}

/// Writes `file` to `path`. Nothing is written if validation fails.
pub fn write_feature_file(file: &FeatureFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(file)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an OODF file. Files with a `.csv` extension go through
/// [`parse_feature_csv`] without a label column.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv && !bytes.starts_with(MAGIC) {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::invalid(format!("{} is not UTF-8 text", path.display())))?;
        let layer = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv");
        return parse_feature_csv(&text, false, layer).map(FeatureFile::Flat);
    }
    decode(&bytes)
}

/// Reads a flat feature file, rejecting spatial layouts.
pub fn read_flat_features(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    match read_feature_file(path)? {
        FeatureFile::Flat(d) => Ok(d),
        FeatureFile::Spatial(_) => Err(Error::invalid(format!(
            "{} holds spatial maps; pool it to flat features first",
            path.display()
        ))),
    }
}

/// Parses comma-separated rows without a header. When `with_labels` is set,
/// the final column holds an integer class id.
pub fn parse_feature_csv(text: &str, with_labels: bool, layer_name: &str) -> Result<LabeledDataset> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if with_labels {
            let raw = fields.pop().filter(|_| !fields.is_empty()).ok_or_else(|| {
                Error::invalid(format!("line {}: missing label column", lineno + 1))
            })?;
            let label = raw.parse::<i64>().map_err(|_| {
                Error::invalid(format!("line {}: label {raw:?} is not an integer", lineno + 1))
            })?;
            labels.push(label);
        }
        match dim {
            None => dim = Some(fields.len()),
            Some(d) if d != fields.len() => {
                return Err(Error::invalid(format!(
                    "line {}: expected {d} values, found {}",
                    lineno + 1,
                    fields.len()
                )))
            }
            _ => {}
        }
        for f in fields {
            let v = f.parse::<f64>().map_err(|_| {
                Error::invalid(format!("line {}: {f:?} is not a number", lineno + 1))
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let features = FeatureMatrix::new(rows, dim.unwrap_or(0), values, layer_name)?;
    LabeledDataset::new(features, with_labels.then_some(labels), None)
}
