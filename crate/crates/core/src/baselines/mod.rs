//! Static comparison methods over step embeddings: exact t-SNE, Gaussian
//! KDE landscapes and pseudo multiple-choice sets.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod kde;
pub mod mcq;
pub mod tsne;

pub use kde::{kde_landscape, Bandwidth, LandscapeGrid, LandscapeSpec};
pub use mcq::{pseudo_mcq, ChoiceSet, McqReport};
pub use tsne::{tsne, TsneConfig, TsneResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub trace_id: String,
    pub step_index: i64,
    pub vector: Vec<f64>,
}

/// Checks uniform dimension, finite entries and unique `(trace_id, step)`.
pub fn validate_embeddings(records: &[EmbeddingRecord]) -> Result<usize> {
    let Some(first) = records.first() else {
        return Err(Error::Empty("no embeddings".into()));
    };
    let d = first.vector.len();
    if d == 0 {
        return Err(Error::invalid("embedding dimension is 0"));
    }
    let mut seen = HashSet::new();
    for (k, r) in records.iter().enumerate() {
        if r.vector.len() != d {
            return Err(Error::InvalidRecord {
                line: k + 1,
                message: format!("dimension {} differs from {d}", r.vector.len()),
            });
        }
        if r.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRecord {
                line: k + 1,
                message: "non-finite embedding entry".into(),
            });
        }
        if !seen.insert((r.trace_id.as_str(), r.step_index)) {
            return Err(Error::InvalidRecord {
                line: k + 1,
                message: format!("duplicate embedding for {} step {}", r.trace_id, r.step_index),
            });
        }
    }
    Ok(d)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    validate_embeddings(&out)?;
    Ok(out)
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
