//! Probability tables produced outside this process.
//!
//! Wire format, one record per line (UTF-8 JSON Lines):
//!
//! ```text
//! {"id": 17, "model": "roberta", "probs": [0.0312, 0.9688]}
//! ```
//!
//! `probs` is `[P(negative), P(positive)]` and `id` is the document's
//! canonical corpus id. A record whose probabilities sum to within
//! [`SUM_TOLERANCE`] of one is renormalized; anything further off is rejected.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::ProbabilityDistribution;
use crate::error::{Error, Result};

pub const SUM_TOLERANCE: f64 = 1e-3;

/// Missing ids listed in an alignment error.
const MISSING_ID_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbabilityRecord {
    pub id: u64,
    pub model: String,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub model: String,
    pub by_id: BTreeMap<u64, ProbabilityDistribution>,
}

impl PredictionTable {
    pub fn new(
        model: impl Into<String>,
        rows: impl IntoIterator<Item = (u64, ProbabilityDistribution)>,
    ) -> Result<Self> {
        let model = model.into();
        let mut by_id = BTreeMap::new();
        for (id, p) in rows {
            if by_id.insert(id, p).is_some() {
                return Err(Error::InvalidInput(format!(
                    "model `{model}` has duplicate id {id}"
                )));
            }
        }
        Ok(Self { model, by_id })
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&ProbabilityDistribution> {
        self.by_id.get(&id)
    }
}

pub fn load_probability_file(path: impl AsRef<Path>) -> Result<PredictionTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let at = |line: usize, message: String| Error::ProbabilityFile {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut model: Option<String> = None;
    let mut by_id = BTreeMap::new();
    for (offset, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line_no = offset + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ProbabilityRecord = serde_json::from_str(&line)
            .map_err(|e| at(line_no, format!("malformed record: {e}")))?;
        if let Some(p) = record.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(at(
                line_no,
                format!("probability {p} outside [0, 1] at line {line_no}"),
            ));
        }
        let sum = record.probs[0] + record.probs[1];
        let dist = ProbabilityDistribution::renormalized(record.probs, SUM_TOLERANCE)
            .map_err(|_| at(line_no, format!("probabilities sum to {sum} at line {line_no}")))?;
        match &model {
            None => model = Some(record.model.clone()),
            Some(m) if *m != record.model => {
                return Err(at(
                    line_no,
                    format!("model `{}` differs from `{m}` seen earlier", record.model),
                ));
            }
            Some(_) => {}
        }
        if by_id.insert(record.id, dist).is_some() {
            return Err(at(line_no, format!("duplicate id {}", record.id)));
        }
    }
    let model = model.ok_or_else(|| {
        Error::EmptyDataset(format!("{} contains no probability records", path.display()))
    })?;
    Ok(PredictionTable { model, by_id })
}

/// Writes one record per id, in ascending id order.
pub fn write_probability_file(path: impl AsRef<Path>, table: &PredictionTable) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut out = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for (&id, p) in &table.by_id {
        let record = ProbabilityRecord {
            id,
            model: table.model.clone(),
            probs: p.as_array(),
        };
        serde_json::to_writer(&mut out, &record).map_err(|e| Error::json("probability record", e))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Matrix with one row per requested id and one column per table, in the
/// order given.
pub fn align(tables: &[PredictionTable], ids: &[u64]) -> Result<Vec<Vec<ProbabilityDistribution>>> {
    for table in tables {
        let missing: Vec<u64> = ids
            .iter()
            .copied()
            .filter(|id| !table.by_id.contains_key(id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingIds {
                model: table.model.clone(),
                count: missing.len(),
                ids: missing.into_iter().take(MISSING_ID_LIMIT).collect(),
            });
        }
    }
    Ok(ids
        .iter()
        .map(|id| tables.iter().map(|t| t.by_id[id]).collect())
        .collect())
}
