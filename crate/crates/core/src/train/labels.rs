//! Per-hop positive labels and the heuristics that derive them from raw answers.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::doc::StructuredDocument;
use crate::error::{validation, Error, Result};
use crate::index::{CombinedIndex, EntryKind};
use crate::text::{answer_tokens, lower_tokens, normalize_answer};

/// Minimum paragraph BLEU for a conversational example to be kept.
pub const BLEU_KEEP_THRESHOLD: f64 = 0.7;

/// A paragraph (`sent = None`) or sentence, by position in its document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntryRef {
    pub kind: EntryKind,
    pub para: usize,
    #[serde(default)]
    pub sent: Option<usize>,
}

impl EntryRef {
    pub fn paragraph(para: usize) -> Self {
        Self { kind: EntryKind::Paragraph, para, sent: None }
    }

    pub fn sentence(para: usize, sent: usize) -> Self {
        Self { kind: EntryKind::Sentence, para, sent: Some(sent) }
    }

    /// Entry index in `index`.
    pub fn resolve(&self, index: &CombinedIndex) -> Result<usize> {
        let consistent = match self.kind {
            EntryKind::Paragraph => self.sent.is_none(),
            EntryKind::Sentence => self.sent.is_some(),
        };
        if !consistent {
            return Err(validation(format!("{:?} label with sentence {:?}", self.kind, self.sent)));
        }
        index
            .entry_of(self.para, self.sent)
            .ok_or_else(|| validation(format!("label ({}, {:?}) not in index {}", self.para, self.sent, index.doc_id())))
    }
}

/// Positive entries for each hop. An empty set marks an unsupervised hop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLabels {
    pub hops: Vec<Vec<EntryRef>>,
}

impl StepLabels {
    pub fn new(hops: Vec<Vec<EntryRef>>) -> Self {
        let hops = hops
            .into_iter()
            .map(|mut h| {
                h.sort();
                h.dedup();
                h
            })
            .collect();
        Self { hops }
    }

    pub fn n_hops(&self) -> usize {
        self.hops.len()
    }

    pub fn is_supervised(&self, hop: usize) -> bool {
        self.hops.get(hop).is_some_and(|h| !h.is_empty())
    }

    /// Entry indices per hop; fails if any label is missing from the index.
    pub fn resolve(&self, index: &CombinedIndex) -> Result<Vec<Vec<usize>>> {
        self.hops.iter().map(|h| h.iter().map(|r| r.resolve(index)).collect()).collect()
    }

    /// Wire form keyed by hop number.
    pub fn to_map(&self) -> BTreeMap<String, Vec<EntryRef>> {
        self.hops.iter().enumerate().map(|(t, h)| (t.to_string(), h.clone())).collect()
    }

    pub fn from_map(map: &BTreeMap<String, Vec<EntryRef>>) -> Result<Self> {
        let mut hops: Vec<Vec<EntryRef>> = Vec::new();
        for (k, refs) in map {
            let t: usize = k.parse().map_err(|_| Error::Schema(format!("labels: hop key {k:?} is not an integer")))?;
            if hops.len() <= t {
                hops.resize(t + 1, Vec::new());
            }
            hops[t] = refs.clone();
        }
        Ok(Self::new(hops))
    }
}

/// Token-level BLEU with uniform weights and no brevity penalty.
///
/// Orders run from 1 to `min(max_n, |candidate|)`; any zero precision gives 0.
pub fn bleu_no_bp<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(validation("BLEU needs non-empty candidate and reference"));
    }
    if max_n == 0 {
        return Err(validation("BLEU needs max_n ≥ 1"));
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let orders = max_n.min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
        for g in refr.windows(n) {
            *ref_counts.entry(g).or_default() += 1;
        }
        let mut cand_counts: HashMap<&[&str], usize> = HashMap::new();
        for g in cand.windows(n) {
            *cand_counts.entry(g).or_default() += 1;
        }
        let clipped: usize = cand_counts.iter().map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0))).sum();
        let total = cand.len() + 1 - n;
        if clipped == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    Ok((log_sum / orders as f64).exp())
}

/// Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token edit distance between two token lists.
pub fn edit_distance<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let a: Vec<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: Vec<&str> = b.iter().map(AsRef::as_ref).collect();
    levenshtein(&a, &b)
}

/// Result of conversational labeling.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelOutcome {
    Labels { labels: StepLabels, best_bleu: f64 },
    /// The best paragraph BLEU fell below the keep threshold.
    Dropped { best_bleu: f64 },
}

/// Labels from a gold snippet and gold sentences: the paragraph with the highest
/// BLEU against the snippet, plus the closest document sentence for each gold
/// sentence, form one positive set used at every hop.
pub fn build_distant_labels_conversational(
    doc: &StructuredDocument,
    gold_snippet: &str,
    gold_sentences: &[String],
    hops: usize,
) -> Result<LabelOutcome> {
    if doc.paragraphs.is_empty() {
        return Err(validation(format!("document {} is empty", doc.id)));
    }
    if hops == 0 {
        return Err(validation("labels need at least one hop"));
    }
    let snippet = answer_tokens(gold_snippet);
    if snippet.is_empty() {
        return Err(validation("gold snippet is empty"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (p, para) in doc.paragraphs.iter().enumerate() {
        let reference = answer_tokens(&para.text());
        if reference.is_empty() {
            continue;
        }
        let b = bleu_no_bp(&snippet, &reference, 4)?;
        if best.is_none_or(|(_, bb)| b > bb) {
            best = Some((p, b));
        }
    }
    let (best_para, best_bleu) = best.ok_or_else(|| validation("no paragraph has scorable text"))?;
    if best_bleu < BLEU_KEEP_THRESHOLD {
        return Ok(LabelOutcome::Dropped { best_bleu });
    }
    let mut positives = vec![EntryRef::paragraph(best_para)];
    let doc_tokens: Vec<(usize, usize, Vec<String>)> =
        doc.sentences().map(|s| (s.para_idx, s.sent_idx, lower_tokens(&s.text))).collect();
    for gold in gold_sentences {
        let g = lower_tokens(gold);
        let mut closest: Option<(usize, usize, usize)> = None;
        for (p, s, toks) in &doc_tokens {
            let d = edit_distance(&g, toks);
            if closest.is_none_or(|(_, _, bd)| d < bd) {
                closest = Some((*p, *s, d));
            }
        }
        if let Some((p, s, _)) = closest {
            positives.push(EntryRef::sentence(p, s));
        }
    }
    Ok(LabelOutcome::Labels { labels: StepLabels::new(vec![positives; hops]), best_bleu })
}

/// Labels from an answer string: sentences whose normalized text contains the
/// normalized answer are positives at hop 2 onward, their paragraphs at hop 1.
pub fn build_distant_labels_extractive(doc: &StructuredDocument, answer: &str, hops: usize) -> Result<StepLabels> {
    let needle = normalize_answer(answer);
    if needle.is_empty() {
        return Err(validation("answer is empty after normalization"));
    }
    if hops < 2 {
        return Err(validation("extractive labels need at least two hops"));
    }
    let sentences: Vec<EntryRef> = doc
        .sentences()
        .filter(|s| normalize_answer(&s.text).contains(&needle))
        .map(|s| EntryRef::sentence(s.para_idx, s.sent_idx))
        .collect();
    if sentences.is_empty() {
        return Err(Error::Label(format!("answer {answer:?} not found in document {}", doc.id)));
    }
    let paragraphs: Vec<EntryRef> = sentences.iter().map(|s| EntryRef::paragraph(s.para)).collect();
    let mut hops_out = vec![paragraphs];
    hops_out.extend(std::iter::repeat_n(sentences, hops - 1));
    Ok(StepLabels::new(hops_out))
}
