//! JSON Lines training-set records.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::doc::{at_line, QueryParagraph};
use crate::error::{validation, Error, Result};
use crate::heads::ClassLabel;

use super::labels::{EntryRef, StepLabels};

/// One line of a training or evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRecord {
    /// Also the key prefix of this query's unit vectors in an embedding file.
    pub query_id: String,
    pub doc_id: String,
    pub query: QueryParagraph,
    /// Positives keyed by hop number (`"0"`, `"1"`, …).
    pub labels: BTreeMap<String, Vec<EntryRef>>,
    #[serde(default)]
    pub drop: bool,
    #[serde(default)]
    pub class: Option<ClassLabel>,
    /// Entries that must all be retrieved for strict accuracy.
    #[serde(default)]
    pub evidence: Vec<EntryRef>,
    /// Reference answer strings for EM/F1.
    #[serde(default)]
    pub answers: Vec<String>,
}

impl TrainRecord {
    pub fn step_labels(&self) -> Result<StepLabels> {
        StepLabels::from_map(&self.labels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.query_id.is_empty() || self.doc_id.is_empty() {
            return Err(validation("query_id and doc_id must be non-empty"));
        }
        self.query.validate()?;
        let labels = self.step_labels()?;
        if labels.n_hops() > self.query.hops() {
            return Err(validation(format!(
                "labels for {} hops but the query has {} units",
                labels.n_hops(),
                self.query.hops()
            )));
        }
        Ok(())
    }
}

pub fn parse_train_line(line: &str) -> Result<TrainRecord> {
    let rec: TrainRecord = serde_json::from_str(line).map_err(|e| Error::Schema(e.to_string()))?;
    rec.validate()?;
    Ok(rec)
}

/// Reads every record, including ones marked `drop`; query ids must be unique.
pub fn read_train_records<R: BufRead>(reader: R) -> Result<Vec<TrainRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_train_line(&line).map_err(|e| at_line(e, n + 1))?;
        if !seen.insert(rec.query_id.clone()) {
            return Err(validation(format!("line {}: duplicate query id `{}`", n + 1, rec.query_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_train_records<W: Write>(mut w: W, records: &[TrainRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
