//! The combined paragraph + sentence retrieval index of one document.
//!
//! Entries are stored in document order `p_0, s_0^0, …, p_1, s_0^1, …` with all
//! vectors packed into one contiguous `f32` block of stride `dim`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::doc::StructuredDocument;
use crate::embed::{embed_sentences, EmbeddingProvider};
use crate::error::{validation, Error, Result};
use crate::linalg::{check_dim, dot_mixed, narrow, softmax, widen, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Paragraph,
    Sentence,
}

impl EntryKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paragraph" | "para" | "p" => Some(Self::Paragraph),
            "sentence" | "sent" | "s" => Some(Self::Sentence),
            _ => None,
        }
    }
}

/// How paragraph entries get their vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Paragraph vectors are fixed at build time.
    Agnostic,
    /// Paragraph vectors are realized per query as an attention-weighted sum of sentences.
    QueryDependentDeferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub kind: EntryKind,
    pub para_idx: usize,
    /// `None` for paragraph entries.
    pub sent_idx: Option<usize>,
}

/// Where one paragraph and its sentences live in the entry list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphSpan {
    pub entry: usize,
    pub sentences: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedIndex {
    doc_id: String,
    dim: usize,
    regime: Regime,
    entries: Vec<IndexEntry>,
    values: Vec<f32>,
    paragraphs: Vec<ParagraphSpan>,
}

/// Raw vectors of one paragraph, used to assemble an index directly.
#[derive(Debug, Clone)]
pub struct ParagraphVectors {
    /// Ignored for the deferred regime; `None` means the sentence mean.
    pub paragraph: Option<Vec<f32>>,
    pub sentences: Vec<Vec<f32>>,
}

impl CombinedIndex {
    /// Assembles an index from per-paragraph vectors.
    pub fn from_vectors(doc_id: impl Into<String>, dim: usize, regime: Regime, paragraphs: Vec<ParagraphVectors>) -> Result<Self> {
        if dim == 0 {
            return Err(validation("index dimension must be positive"));
        }
        if paragraphs.is_empty() {
            return Err(validation("index needs at least one paragraph"));
        }
        let n_entries: usize = paragraphs.iter().map(|p| 1 + p.sentences.len()).sum();
        if n_entries > u32::MAX as usize {
            return Err(validation("too many entries for one document"));
        }
        let mut index = Self {
            doc_id: doc_id.into(),
            dim,
            regime,
            entries: Vec::with_capacity(n_entries),
            values: Vec::with_capacity(n_entries * dim),
            paragraphs: Vec::with_capacity(paragraphs.len()),
        };
        for (p, pv) in paragraphs.into_iter().enumerate() {
            if pv.sentences.is_empty() {
                return Err(validation(format!("paragraph {p} has no sentences")));
            }
            for s in &pv.sentences {
                check_dim("sentence vector", dim, s.len())?;
            }
            let para_vec = match regime {
                Regime::QueryDependentDeferred => vec![0.0; dim],
                Regime::Agnostic => match pv.paragraph {
                    Some(v) => {
                        check_dim("paragraph vector", dim, v.len())?;
                        v
                    }
                    None => {
                        let widened: Vec<Vector> = pv.sentences.iter().map(|s| widen(s)).collect();
                        narrow(&crate::embed::paragraph_embedding_agnostic(&widened)?)
                    }
                },
            };
            let entry = index.entries.len();
            index.entries.push(IndexEntry { kind: EntryKind::Paragraph, para_idx: p, sent_idx: None });
            index.values.extend_from_slice(&para_vec);
            for (j, s) in pv.sentences.iter().enumerate() {
                index.entries.push(IndexEntry { kind: EntryKind::Sentence, para_idx: p, sent_idx: Some(j) });
                index.values.extend_from_slice(s);
            }
            index.paragraphs.push(ParagraphSpan { entry, sentences: entry + 1..index.entries.len() });
        }
        if index.values.iter().any(|v| !v.is_finite()) {
            return Err(validation("index vectors must be finite"));
        }
        Ok(index)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &IndexEntry {
        &self.entries[i]
    }

    pub fn paragraphs(&self) -> &[ParagraphSpan] {
        &self.paragraphs
    }

    pub fn n_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }

    /// Stored vector of entry `i`. Deferred paragraph entries hold zeros.
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_deferred(&self, i: usize) -> bool {
        self.regime == Regime::QueryDependentDeferred && self.entries[i].kind == EntryKind::Paragraph
    }

    /// Entry index of paragraph `para` (when `sent` is `None`) or of one of its sentences.
    pub fn entry_of(&self, para: usize, sent: Option<usize>) -> Option<usize> {
        let span = self.paragraphs.get(para)?;
        match sent {
            None => Some(span.entry),
            Some(j) => {
                let e = span.sentences.start + j;
                (e < span.sentences.end).then_some(e)
            }
        }
    }

    /// Widened sentence vectors of paragraph `para`.
    pub fn sentence_vectors(&self, para: usize) -> Vec<Vector> {
        self.paragraphs[para].sentences.clone().map(|e| widen(self.vector(e))).collect()
    }

    /// View over the sentence entries only, for sentence-only baselines.
    pub fn sentence_only(&self) -> SentenceOnlyView<'_> {
        SentenceOnlyView { index: self }
    }
}

/// Sentence entries of an index, in order.
pub struct SentenceOnlyView<'a> {
    index: &'a CombinedIndex,
}

impl SentenceOnlyView<'_> {
    pub fn entries(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.index.len()).filter(|&i| self.index.entries[i].kind == EntryKind::Sentence)
    }
}

/// Builds the combined index of `doc` with vectors from `provider`.
pub fn build_index(doc: &StructuredDocument, provider: &dyn EmbeddingProvider, regime: Regime) -> Result<CombinedIndex> {
    doc.validate()?;
    let mut paragraphs = Vec::with_capacity(doc.paragraphs.len());
    for (i, p) in doc.paragraphs.iter().enumerate() {
        let sentences = embed_sentences(provider, &doc.id, i, p)?;
        let paragraph = match regime {
            Regime::Agnostic => provider.paragraph_vector(&doc.id, i)?,
            Regime::QueryDependentDeferred => None,
        };
        paragraphs.push(ParagraphVectors { paragraph, sentences });
    }
    CombinedIndex::from_vectors(doc.id.clone(), provider.dim(), regime, paragraphs)
}

/// Query-local scratch for realized query-dependent paragraph weights.
#[derive(Debug, Clone, Default)]
pub struct ScoreScratch {
    alphas: Vec<Option<Vec<f64>>>,
}

impl ScoreScratch {
    pub fn clear(&mut self) {
        self.alphas.iter_mut().for_each(|a| *a = None);
    }

    /// Attention weights realized for paragraph `para` during the last scoring pass.
    pub fn alpha(&self, para: usize) -> Option<&[f64]> {
        self.alphas.get(para).and_then(|a| a.as_deref())
    }

    fn store(&mut self, n_paragraphs: usize, para: usize, alpha: Vec<f64>) {
        if self.alphas.len() < n_paragraphs {
            self.alphas.resize(n_paragraphs, None);
        }
        self.alphas[para] = Some(alpha);
    }
}

/// Inner-product score of `q` against every entry passing `mask`, in entry order.
pub fn score_all(q: &[f64], index: &CombinedIndex, mask: Option<EntryKind>) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    score_into(q, index, mask, &mut out, &mut ScoreScratch::default())?;
    Ok(out)
}

/// Scoring with caller-owned buffers; realized deferred weights land in `scratch`.
pub fn score_into(
    q: &[f64],
    index: &CombinedIndex,
    mask: Option<EntryKind>,
    out: &mut Vec<(usize, f64)>,
    scratch: &mut ScoreScratch,
) -> Result<()> {
    score_batch_into(&[q], index, mask, std::slice::from_mut(out), std::slice::from_mut(scratch))
}

/// [`score_into`] for several queries in one pass over the index.
///
/// Each row is loaded once and scored against every query, which matters when
/// the index does not fit in cache. Scores are bit-identical to scoring each
/// query on its own.
pub fn score_batch_into(
    queries: &[&[f64]],
    index: &CombinedIndex,
    mask: Option<EntryKind>,
    outs: &mut [Vec<(usize, f64)>],
    scratches: &mut [ScoreScratch],
) -> Result<()> {
    if outs.len() != queries.len() || scratches.len() != queries.len() {
        return Err(validation("one output buffer and scratch per query"));
    }
    for q in queries {
        check_dim("query", index.dim, q.len())?;
    }
    for (out, scratch) in outs.iter_mut().zip(scratches.iter_mut()) {
        out.clear();
        scratch.clear();
    }
    let deferred = index.regime == Regime::QueryDependentDeferred;
    let want_paragraphs = mask != Some(EntryKind::Sentence);
    let want_sentences = mask != Some(EntryKind::Paragraph);
    for (p, span) in index.paragraphs.iter().enumerate() {
        if want_paragraphs {
            if deferred {
                for (b, q) in queries.iter().enumerate() {
                    let z: Vec<f64> = span.sentences.clone().map(|e| dot_mixed(index.vector(e), q)).collect();
                    let alpha = softmax(&z);
                    let s = alpha.iter().zip(&z).map(|(a, z)| a * z).sum();
                    scratches[b].store(index.paragraphs.len(), p, alpha);
                    outs[b].push((span.entry, s));
                }
            } else {
                let row = index.vector(span.entry);
                for (b, q) in queries.iter().enumerate() {
                    outs[b].push((span.entry, dot_mixed(row, q)));
                }
            }
        }
        if want_sentences {
            for e in span.sentences.clone() {
                let row = index.vector(e);
                for (b, q) in queries.iter().enumerate() {
                    outs[b].push((e, dot_mixed(row, q)));
                }
            }
        }
    }
    Ok(())
}

/// Highest-scoring entry; ties go to the lowest entry index.
pub fn argmax_entry(scores: &[(usize, f64)]) -> Result<(usize, f64)> {
    let mut best = *scores.first().ok_or_else(|| validation("argmax over an empty score list"))?;
    for &(i, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && i < best.0) {
            best = (i, s);
        }
    }
    Ok(best)
}

const HIDX_MAGIC: &[u8; 4] = b"HIDX";
const HIDX_VERSION: u32 = 1;
const HIDX_HEADER: usize = 20;

const KIND_PARAGRAPH: u8 = 0;
const KIND_SENTENCE: u8 = 1;
const KIND_DEFERRED_PARAGRAPH: u8 = 2;

impl CombinedIndex {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(HIDX_MAGIC)?;
        w.write_all(&HIDX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.paragraphs.len() as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (i, e) in self.entries.iter().enumerate() {
            let kind = match (e.kind, self.regime) {
                (EntryKind::Sentence, _) => KIND_SENTENCE,
                (EntryKind::Paragraph, Regime::Agnostic) => KIND_PARAGRAPH,
                (EntryKind::Paragraph, Regime::QueryDependentDeferred) => KIND_DEFERRED_PARAGRAPH,
            };
            w.write_all(&[kind])?;
            w.write_all(&(e.para_idx as i32).to_le_bytes())?;
            w.write_all(&e.sent_idx.map_or(-1, |s| s as i32).to_le_bytes())?;
            for v in self.vector(i) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Decodes an index. The file format carries no document id, so the caller supplies it.
    pub fn read<R: Read>(mut r: R, doc_id: impl Into<String>) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::decode(&bytes, doc_id.into())
    }

    fn decode(bytes: &[u8], doc_id: String) -> Result<Self> {
        if bytes.len() < HIDX_HEADER {
            if bytes.len() >= 4 && &bytes[..4] != HIDX_MAGIC {
                return Err(Error::Format("bad index file magic".into()));
            }
            return Err(truncated("index header"));
        }
        if &bytes[..4] != HIDX_MAGIC {
            return Err(Error::Format(format!("bad index file magic {:?}", &bytes[..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let version = u32_at(4);
        if version != HIDX_VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let dim = u32_at(8) as usize;
        let n_paragraphs = u32_at(12) as usize;
        let n_entries = u32_at(16) as usize;
        if dim == 0 || n_paragraphs == 0 || n_entries < 2 * n_paragraphs {
            return Err(Error::Format(format!(
                "inconsistent index header: dim {dim}, {n_paragraphs} paragraphs, {n_entries} entries"
            )));
        }
        let record = 9 + 4 * dim;
        let body = bytes.len() - HIDX_HEADER;
        let expected = n_entries * record;
        if body != expected {
            // A body that splits evenly into records of another width means the header dim is wrong.
            if body % n_entries == 0 && (body / n_entries) > 9 && (body / n_entries - 9) % 4 == 0 {
                return Err(Error::Format(format!(
                    "header dim {dim} does not match record size {} (dim {})",
                    body / n_entries,
                    (body / n_entries - 9) / 4
                )));
            }
            if body < expected {
                return Err(truncated("index records"));
            }
            return Err(Error::Format("trailing bytes after index records".into()));
        }

        let mut regime = None;
        let mut entries = Vec::with_capacity(n_entries);
        let mut values = Vec::with_capacity(n_entries * dim);
        let mut paragraphs: Vec<ParagraphSpan> = Vec::with_capacity(n_paragraphs);
        for i in 0..n_entries {
            let rec = &bytes[HIDX_HEADER + i * record..HIDX_HEADER + (i + 1) * record];
            let kind = rec[0];
            let para = i32::from_le_bytes([rec[1], rec[2], rec[3], rec[4]]);
            let sent = i32::from_le_bytes([rec[5], rec[6], rec[7], rec[8]]);
            let vec_start = values.len();
            values.extend(rec[9..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
            match kind {
                KIND_PARAGRAPH | KIND_DEFERRED_PARAGRAPH => {
                    let r = if kind == KIND_PARAGRAPH { Regime::Agnostic } else { Regime::QueryDependentDeferred };
                    if *regime.get_or_insert(r) != r {
                        return Err(Error::Format("index mixes deferred and materialized paragraphs".into()));
                    }
                    if para != paragraphs.len() as i32 || sent != -1 {
                        return Err(Error::Format(format!("entry {i}: unexpected paragraph ({para}, {sent})")));
                    }
                    if let Some(last) = paragraphs.last() {
                        if last.sentences.is_empty() {
                            return Err(Error::Format(format!("paragraph {} has no sentences", paragraphs.len() - 1)));
                        }
                    }
                    paragraphs.push(ParagraphSpan { entry: i, sentences: i + 1..i + 1 });
                    entries.push(IndexEntry { kind: EntryKind::Paragraph, para_idx: para as usize, sent_idx: None });
                }
                KIND_SENTENCE => {
                    let span = paragraphs
                        .last_mut()
                        .ok_or_else(|| Error::Format("sentence entry before any paragraph".into()))?;
                    let expect_sent = (span.sentences.end - span.sentences.start) as i32;
                    if para != span_para(span, &entries) || sent != expect_sent {
                        return Err(Error::Format(format!("entry {i}: unexpected sentence ({para}, {sent})")));
                    }
                    span.sentences.end = i + 1;
                    entries.push(IndexEntry { kind: EntryKind::Sentence, para_idx: para as usize, sent_idx: Some(sent as usize) });
                }
                other => return Err(Error::Format(format!("entry {i}: unknown kind byte {other}"))),
            }
            if values[vec_start..].iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("entry {i}: non-finite vector")));
            }
        }
        if paragraphs.len() != n_paragraphs || paragraphs.last().is_some_and(|p| p.sentences.is_empty()) {
            return Err(Error::Format("paragraph count or layout does not match header".into()));
        }
        Ok(Self { doc_id, dim, regime: regime.unwrap_or(Regime::Agnostic), entries, values, paragraphs })
    }
}

fn span_para(span: &ParagraphSpan, entries: &[IndexEntry]) -> i32 {
    entries[span.entry].para_idx as i32
}

fn truncated(what: &str) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated {what}")))
}

pub fn save_index(index: &CombinedIndex, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    index.write(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Loads an index; the document id is taken from the file stem.
pub fn load_index(path: &Path) -> Result<CombinedIndex> {
    let doc_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    CombinedIndex::read(BufReader::new(File::open(path)?), doc_id)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn index_strategy() -> impl Strategy<Value = CombinedIndex> {
        prop::collection::vec(prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 3), 1..4), 1..4).prop_map(|ps| {
            CombinedIndex::from_vectors(
                "d",
                3,
                Regime::Agnostic,
                ps.into_iter().map(|s| ParagraphVectors { paragraph: None, sentences: s }).collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_argmax(idx in index_strategy(), q in prop::collection::vec(-2.0f64..2.0, 3), k in 1u32..4) {
            // power-of-two factors keep the scaled f32 values exact
            let lambda = (1u32 << k) as f32;
            let mut scaled = idx.clone();
            for i in 0..scaled.len() {
                scaled.vector_mut(i).iter_mut().for_each(|v| *v *= lambda);
            }
            let a = score_all(&q, &idx, None).unwrap();
            let b = score_all(&q, &scaled, None).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 * lambda as f64 - y.1).abs() < 1e-9);
            }
            prop_assert_eq!(argmax_entry(&a).unwrap().0, argmax_entry(&b).unwrap().0);
        }

        #[test]
        fn sentence_mask_equals_sentence_only_scores(idx in index_strategy(), q in prop::collection::vec(-2.0f64..2.0, 3)) {
            let masked = score_all(&q, &idx, Some(EntryKind::Sentence)).unwrap();
            let naive: Vec<(usize, f64)> = idx
                .sentence_only()
                .entries()
                .map(|e| (e, idx.vector(e).iter().zip(&q).map(|(a, b)| *a as f64 * b).sum()))
                .collect();
            prop_assert_eq!(masked.len(), naive.len());
            for (x, y) in masked.iter().zip(&naive) {
                prop_assert_eq!(x.0, y.0);
                prop_assert!((x.1 - y.1).abs() < 1e-6);
            }
        }

        #[test]
        fn round_trip_is_bit_identical(idx in index_strategy()) {
            let mut bytes = Vec::new();
            idx.write(&mut bytes).unwrap();
            let back = CombinedIndex::read(&bytes[..], "d").unwrap();
            let mut again = Vec::new();
            back.write(&mut again).unwrap();
            prop_assert_eq!(bytes, again);
            prop_assert_eq!(back, idx);
        }
    }
}
