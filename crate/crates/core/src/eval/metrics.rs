//! Retrieval, classification and answer metrics.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::heads::ClassLabel;
use crate::hop::RetrievalTrace;
use crate::index::{CombinedIndex, EntryKind};
use crate::text::{answer_tokens, normalize_answer};
use crate::train::EntryRef;

/// Metrics of one evaluation run; absent fields were not measured.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_queries: usize,
    pub hits_at_1: Option<f64>,
    pub evidence_coverage: Option<f64>,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub easy_acc: Option<f64>,
    pub strict_acc: Option<f64>,
    pub throughput_qps: Option<f64>,
}

impl MetricReport {
    /// Human-readable two-column table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<18} {}\n", "queries", self.n_queries);
        for (name, v) in [
            ("hits@1", self.hits_at_1),
            ("evidence_coverage", self.evidence_coverage),
            ("em", self.em),
            ("f1", self.f1),
            ("easy_acc", self.easy_acc),
            ("strict_acc", self.strict_acc),
            ("throughput_qps", self.throughput_qps),
        ] {
            if let Some(v) = v {
                out.push_str(&format!("{name:<18} {v:.4}\n"));
            }
        }
        out
    }
}

fn check_aligned(a: &[String], b: &[String]) -> Result<()> {
    if a.len() != b.len() {
        return Err(validation(format!("{} predictions for {} gold entries", a.len(), b.len())));
    }
    if let Some(i) = (0..a.len()).find(|&i| a[i] != b[i]) {
        return Err(validation(format!("id mismatch at {i}: {} vs {}", a[i], b[i])));
    }
    if a.is_empty() {
        return Err(validation("no predictions to score"));
    }
    Ok(())
}

/// Fraction of queries whose top-ranked sentence is a gold sentence.
///
/// `pred_ids[i]`/`gold_ids[i]` must name the same query.
pub fn hits_at_1(pred_ids: &[String], top: &[Option<EntryRef>], gold_ids: &[String], gold: &[Vec<EntryRef>]) -> Result<f64> {
    check_aligned(pred_ids, gold_ids)?;
    if top.len() != pred_ids.len() || gold.len() != gold_ids.len() {
        return Err(validation("ids and values are not the same length"));
    }
    let hits = top.iter().zip(gold).filter(|(t, g)| t.is_some_and(|t| g.contains(&t))).count();
    Ok(hits as f64 / top.len() as f64)
}

/// `(easy, strict)`: class accuracy, and class accuracy that also requires every
/// evidence entry to be among the retrieved entries.
pub fn strict_accuracy(
    class_preds: &[ClassLabel],
    class_gold: &[ClassLabel],
    retrieved: &[BTreeSet<EntryRef>],
    evidence: &[Vec<EntryRef>],
) -> Result<(f64, f64)> {
    let n = class_preds.len();
    if class_gold.len() != n || retrieved.len() != n || evidence.len() != n {
        return Err(validation("strict accuracy inputs are not aligned"));
    }
    if n == 0 {
        return Err(validation("no predictions to score"));
    }
    let mut easy = 0;
    let mut strict = 0;
    for i in 0..n {
        if class_preds[i] == class_gold[i] {
            easy += 1;
            if evidence[i].iter().all(|e| retrieved[i].contains(e)) {
                strict += 1;
            }
        }
    }
    Ok((easy as f64 / n as f64, strict as f64 / n as f64))
}

/// Fraction of queries whose evidence is entirely retrieved.
pub fn evidence_coverage(retrieved: &[BTreeSet<EntryRef>], evidence: &[Vec<EntryRef>]) -> Result<f64> {
    if retrieved.len() != evidence.len() || retrieved.is_empty() {
        return Err(validation("coverage inputs are empty or not aligned"));
    }
    let covered = retrieved.iter().zip(evidence).filter(|(r, e)| e.iter().all(|x| r.contains(x))).count();
    Ok(covered as f64 / retrieved.len() as f64)
}

/// Every entry a trace touched: retrieved entries plus all sentences of retrieved paragraphs.
pub fn retrieved_set(trace: &RetrievalTrace, index: &CombinedIndex) -> BTreeSet<EntryRef> {
    let mut out = BTreeSet::new();
    for r in &trace.records {
        if r.kind == EntryKind::Paragraph {
            out.insert(EntryRef::paragraph(r.para_idx));
        }
        for &e in &r.sentences {
            let ent = index.entry(e);
            out.insert(EntryRef::sentence(ent.para_idx, ent.sent_idx.expect("sentence entry")));
        }
    }
    out
}

/// Normalized exact match and token F1, each maximized over the gold answers.
pub fn em_f1(pred: &str, golds: &[String]) -> (f64, f64) {
    let pred_norm = normalize_answer(pred);
    let pred_toks = answer_tokens(pred);
    let mut best = (0.0f64, 0.0f64);
    for gold in golds {
        let em = if normalize_answer(gold) == pred_norm { 1.0 } else { 0.0 };
        let f1 = token_f1(&pred_toks, &answer_tokens(gold));
        best = (best.0.max(em), best.1.max(f1));
    }
    best
}

fn token_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred == gold { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}
