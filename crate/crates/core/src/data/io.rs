//! Embedding file formats.
//!
//! Binary layout, all little-endian:
//!
//! ```text
//! magic     4 bytes  "ULFE"
//! version   u32      1
//! N         u64      rows
//! D         u64      dimension
//! has_lbl   u8       0 or 1
//! C         u32      class count
//! features  N·D f32  row-major
//! labels    N u32    present only when has_lbl = 1
//! ```
//!
//! The CSV fallback has header `label,f0,...,f{D-1}`; the label cell is empty
//! for unlabeled rows.

use std::fs;
use std::path::Path;

use super::EmbeddingSet;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"ULFE";
pub const EMBEDDING_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1 + 4;

pub fn encode_embeddings(set: &EmbeddingSet) -> Vec<u8> {
    let n = set.len();
    let has_labels = set.labels().is_some();
    let mut out = Vec::with_capacity(HEADER_LEN + set.features().len() * 4 + n * 4);
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u64).to_le_bytes());
    out.push(has_labels as u8);
    out.extend_from_slice(&(set.class_count() as u32).to_le_bytes());
    for &x in set.features() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    if let Some(labels) = set.labels() {
        for &y in labels {
            out.extend_from_slice(&y.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the binary format. `path` is only used in error messages.
pub fn decode_embeddings(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != EMBEDDING_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: EMBEDDING_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let n = r.u64()?;
    let d = r.u64()?;
    let has_labels = match r.take(1)?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("has_labels byte is {other}"),
            })
        }
    };
    let c = r.u32()? as usize;
    if d < 2 || n < 1 {
        return Err(Error::DimensionMismatch(format!(
            "{}: header declares N={n} D={d}; need N >= 1 and D >= 2",
            path.display()
        )));
    }
    let cells = n
        .checked_mul(d)
        .and_then(|x| usize::try_from(x).ok())
        .ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("N·D overflows ({n}·{d})"),
        })?;
    let payload = cells as u64 * 4 + if has_labels { n * 4 } else { 0 };
    let expected = HEADER_LEN as u64 + payload;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed: expected,
            found: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    let features: Vec<f32> = r
        .take(cells * 4)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = if has_labels {
        let l: Vec<u32> = r
            .take(n as usize * 4)?
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(bad) = l.iter().find(|&&y| y as usize >= c) {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("label {bad} out of range for C={c}"),
            });
        }
        Some(l)
    } else {
        None
    };
    EmbeddingSet::new(features, d as usize, labels, c)
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes `set` to `path`; a `.csv` extension selects the CSV fallback.
pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        return save_embeddings_csv(set, path);
    }
    fs::write(path, encode_embeddings(set)).map_err(|e| Error::io(path, e))
}

/// Reads `path`; a `.csv` extension selects the CSV fallback.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    if is_csv(path) {
        return load_embeddings_csv(path, None);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes, path)
}

pub fn save_embeddings_csv(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..set.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..set.len() {
        let mut rec = vec![set.label(i).map(|y| y.to_string()).unwrap_or_default()];
        rec.extend(set.row(i).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads the CSV fallback. Without `class_count`, C is one past the largest
/// label. Either every row carries a label or none does.
pub fn load_embeddings_csv(
    path: impl AsRef<Path>,
    class_count: Option<usize>,
) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let header = r.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let dim = header.len().saturating_sub(1);
    if header.get(0) != Some("label")
        || (0..dim).any(|j| header.get(j + 1) != Some(format!("f{j}").as_str()))
    {
        return Err(malformed("header must be label,f0,...,f{D-1}".into()));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut unlabeled_rows = 0usize;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        if rec.len() != dim + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} row {}: {} cells, expected {}",
                path.display(),
                line + 1,
                rec.len(),
                dim + 1
            )));
        }
        match rec.get(0).unwrap().trim() {
            "" => unlabeled_rows += 1,
            s => labels.push(
                s.parse::<u32>()
                    .map_err(|e| malformed(format!("row {}: label {s:?}: {e}", line + 1)))?,
            ),
        }
        for cell in rec.iter().skip(1) {
            features.push(
                cell.trim()
                    .parse::<f32>()
                    .map_err(|e| malformed(format!("row {}: value {cell:?}: {e}", line + 1)))?,
            );
        }
    }
    let labels = match (labels.is_empty(), unlabeled_rows) {
        (true, _) => None,
        (false, 0) => Some(labels),
        _ => return Err(malformed("mix of labeled and unlabeled rows".into())),
    };
    let c = class_count.unwrap_or_else(|| {
        labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m as usize + 1)
    });
    EmbeddingSet::new(features, dim, labels, c)
}
