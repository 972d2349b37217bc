//! Structured documents and query paragraphs.
//!
//! A document is a two-level hierarchy: paragraphs made of sentences. Inputs
//! arrive as generic JSON Lines records, table rows, or sectioned papers, and
//! are all reduced to [`StructuredDocument`].

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::text::split_sentences;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub para_idx: usize,
    pub sent_idx: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paragraph {
    pub id: String,
    pub sentences: Vec<Sentence>,
    pub title: Option<String>,
}

impl Paragraph {
    /// Builds a paragraph at position `para_idx`, assigning sentence ids and indices.
    pub fn new(id: impl Into<String>, para_idx: usize, title: Option<String>, texts: Vec<String>) -> Result<Self> {
        let id = id.into();
        if texts.is_empty() {
            return Err(validation(format!("paragraph `{id}` has no sentences")));
        }
        let mut sentences = Vec::with_capacity(texts.len());
        for (sent_idx, text) in texts.into_iter().enumerate() {
            if text.trim().is_empty() {
                return Err(validation(format!("paragraph `{id}` sentence {sent_idx} is blank")));
            }
            sentences.push(Sentence { id: format!("{id}.s{sent_idx}"), text, para_idx, sent_idx });
        }
        Ok(Self { id, sentences, title })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Title (if any) followed by all sentences, space separated.
    pub fn text(&self) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(self.sentences.len() + 1);
        if let Some(title) = self.title.as_deref().filter(|t| !t.trim().is_empty()) {
            parts.push(title);
        }
        parts.extend(self.sentences.iter().map(|s| s.text.as_str()));
        parts.join(" ")
    }

    fn reindex(&mut self, para_idx: usize) {
        for s in &mut self.sentences {
            s.para_idx = para_idx;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredDocument {
    pub id: String,
    pub paragraphs: Vec<Paragraph>,
}

impl StructuredDocument {
    /// Validates and assembles a document; paragraph positions are taken from list order.
    pub fn new(id: impl Into<String>, mut paragraphs: Vec<Paragraph>) -> Result<Self> {
        let id = id.into();
        if paragraphs.is_empty() {
            return Err(validation(format!("document `{id}` has no paragraphs")));
        }
        for (i, p) in paragraphs.iter_mut().enumerate() {
            p.reindex(i);
        }
        let doc = Self { id, paragraphs };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (i, p) in self.paragraphs.iter().enumerate() {
            if p.sentences.is_empty() {
                return Err(validation(format!("paragraph `{}` has no sentences", p.id)));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(validation(format!("duplicate id `{}` in document `{}`", p.id, self.id)));
            }
            for (j, s) in p.sentences.iter().enumerate() {
                if s.text.trim().is_empty() {
                    return Err(validation(format!("blank sentence `{}`", s.id)));
                }
                if s.para_idx != i || s.sent_idx != j {
                    return Err(validation(format!("sentence `{}` has inconsistent indices", s.id)));
                }
                if !ids.insert(s.id.as_str()) {
                    return Err(validation(format!("duplicate id `{}` in document `{}`", s.id, self.id)));
                }
            }
        }
        Ok(())
    }

    pub fn sentence_count(&self) -> usize {
        self.paragraphs.iter().map(Paragraph::len).sum()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.paragraphs.iter().flat_map(|p| p.sentences.iter())
    }

    pub fn sentence(&self, para_idx: usize, sent_idx: usize) -> Option<&Sentence> {
        self.paragraphs.get(para_idx)?.sentences.get(sent_idx)
    }

    pub fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            id: self.id.clone(),
            paragraphs: self
                .paragraphs
                .iter()
                .map(|p| ParagraphRecord {
                    id: p.id.clone(),
                    title: p.title.clone(),
                    sentences: p.sentences.iter().map(|s| s.text.clone()).collect(),
                })
                .collect(),
        }
    }
}

/// Wire form of one JSON Lines document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRecord {
    pub id: String,
    pub paragraphs: Vec<ParagraphRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParagraphRecord {
    pub id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub sentences: Vec<String>,
}

/// Builds a document from an already-decoded record.
pub fn parse_document(record: DocumentRecord) -> Result<StructuredDocument> {
    let paragraphs = record
        .paragraphs
        .into_iter()
        .enumerate()
        .map(|(i, p)| Paragraph::new(p.id, i, p.title, p.sentences))
        .collect::<Result<Vec<_>>>()?;
    StructuredDocument::new(record.id, paragraphs)
}

/// Parses one JSON Lines record.
pub fn parse_document_line(line: &str) -> Result<StructuredDocument> {
    let record: DocumentRecord = serde_json::from_str(line).map_err(|e| Error::Schema(e.to_string()))?;
    parse_document(record)
}

/// Reads a JSON Lines stream of documents, skipping blank lines.
pub fn read_documents<R: BufRead>(reader: R) -> Result<Vec<StructuredDocument>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document_line(&line).map_err(|e| at_line(e, n + 1))?;
        if !seen.insert(doc.id.clone()) {
            return Err(validation(format!("line {}: duplicate document id `{}`", n + 1, doc.id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_documents<W: Write>(mut writer: W, docs: &[StructuredDocument]) -> Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut writer, &doc.to_record()).map_err(|e| Error::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub(crate) fn at_line(err: Error, line: usize) -> Error {
    match err {
        Error::Schema(m) => Error::Schema(format!("line {line}: {m}")),
        Error::Validation(m) => Error::Validation(format!("line {line}: {m}")),
        other => other,
    }
}

/// Turns one table row into a paragraph.
///
/// Each header and each cell becomes its own sentence; sentences hyperlinked
/// from a cell follow that cell directly. `linked_texts` may be empty (no links
/// anywhere) or aligned with `headers`.
pub fn linearize_table_row(
    id: impl Into<String>,
    para_idx: usize,
    headers: &[String],
    cells: &[String],
    linked_texts: &[Vec<String>],
) -> Result<Paragraph> {
    let id = id.into();
    if headers.len() != cells.len() {
        return Err(validation(format!(
            "row `{id}`: {} headers but {} cells",
            headers.len(),
            cells.len()
        )));
    }
    if !linked_texts.is_empty() && linked_texts.len() != headers.len() {
        return Err(validation(format!(
            "row `{id}`: {} link lists for {} cells",
            linked_texts.len(),
            headers.len()
        )));
    }
    let n_links: usize = linked_texts.iter().map(Vec::len).sum();
    let mut texts = Vec::with_capacity(2 * headers.len() + n_links);
    for (i, (h, c)) in headers.iter().zip(cells).enumerate() {
        texts.push(h.clone());
        texts.push(c.clone());
        if let Some(links) = linked_texts.get(i) {
            texts.extend(links.iter().cloned());
        }
    }
    Paragraph::new(id, para_idx, None, texts)
}

/// One row of a table as it appears in table input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub cells: Vec<String>,
    #[serde(default)]
    pub links: Vec<Vec<String>>,
}

/// A table with hyperlinked cell text, one JSON object per line in `ingest --format table`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub id: String,
    pub headers: Vec<String>,
    pub rows: Vec<TableRow>,
}

/// Linearizes a whole table: one paragraph per row.
pub fn linearize_table(table: &TableRecord) -> Result<StructuredDocument> {
    let paragraphs = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| linearize_table_row(format!("{}.row{i}", table.id), i, &table.headers, &row.cells, &row.links))
        .collect::<Result<Vec<_>>>()?;
    StructuredDocument::new(table.id.clone(), paragraphs)
}

/// A node of a sectioned paper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub title: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub children: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub id: String,
    pub sections: Vec<Section>,
}

/// Linearizes a section tree.
///
/// Every leaf section becomes a paragraph; a section with children and its own
/// text contributes an extra paragraph for that text, placed before its
/// children. The first sentence of each paragraph is the title path, e.g.
/// `"Experiments. Setup."`.
pub fn linearize_paper(id: impl Into<String>, sections: &[Section]) -> Result<StructuredDocument> {
    let id = id.into();
    if sections.is_empty() {
        return Err(validation(format!("paper `{id}` has no sections")));
    }
    let mut paragraphs = Vec::new();
    let mut path = Vec::new();
    for s in sections {
        walk_section(&id, s, &mut path, &mut paragraphs)?;
    }
    StructuredDocument::new(id, paragraphs)
}

fn walk_section<'a>(
    doc_id: &str,
    section: &'a Section,
    path: &mut Vec<&'a str>,
    out: &mut Vec<Paragraph>,
) -> Result<()> {
    path.push(section.title.trim());
    let has_text = !section.text.trim().is_empty();
    if section.children.is_empty() || has_text {
        let heading = title_sentence(path);
        let mut texts: Vec<String> = heading.into_iter().collect();
        texts.extend(split_sentences(&section.text));
        if !texts.is_empty() {
            let idx = out.len();
            out.push(Paragraph::new(format!("{doc_id}.p{idx}"), idx, None, texts)?);
        }
    }
    for child in &section.children {
        walk_section(doc_id, child, path, out)?;
    }
    path.pop();
    Ok(())
}

fn title_sentence(path: &[&str]) -> Option<String> {
    let parts: Vec<String> = path
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| if t.ends_with(['.', '!', '?']) { t.to_string() } else { format!("{t}.") })
        .collect();
    (!parts.is_empty()).then(|| parts.join(" "))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Conversational,
    MultiHop,
}

/// The query split into sub-question units, one query vector per unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryParagraph {
    pub units: Vec<String>,
    pub kind: QueryKind,
}

/// Reserved marker for the `n`-th dummy question (1-based).
pub fn dummy_marker(n: usize) -> String {
    format!("[NULL_{n}]")
}

pub fn is_dummy_marker(unit: &str) -> bool {
    unit.strip_prefix("[NULL_")
        .and_then(|rest| rest.strip_suffix(']'))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

/// Renders a follow-up question and its answer as a single query unit.
pub fn render_followup(question: &str, answer: &str) -> String {
    format!("Q: {question} A: {answer}")
}

pub fn build_conversational_query(q0: &str, followups: &[(String, String)]) -> Result<QueryParagraph> {
    if q0.trim().is_empty() {
        return Err(validation("initial question is empty"));
    }
    let mut units = Vec::with_capacity(1 + followups.len());
    units.push(q0.to_string());
    units.extend(followups.iter().map(|(f, a)| render_followup(f, a)));
    Ok(QueryParagraph { units, kind: QueryKind::Conversational })
}

/// Appends `hops - 1` distinct dummy questions after the original question.
pub fn build_multihop_query(q0: &str, hops: usize) -> Result<QueryParagraph> {
    if hops < 1 {
        return Err(validation("multi-hop query needs at least one hop"));
    }
    if q0.trim().is_empty() {
        return Err(validation("initial question is empty"));
    }
    let mut units = vec![q0.to_string()];
    units.extend((1..hops).map(dummy_marker));
    Ok(QueryParagraph { units, kind: QueryKind::MultiHop })
}

impl QueryParagraph {
    pub fn validate(&self) -> Result<()> {
        if self.units.is_empty() {
            return Err(validation("query paragraph has no units"));
        }
        if self.units[0].trim().is_empty() || is_dummy_marker(&self.units[0]) {
            return Err(validation("first query unit must be the original question"));
        }
        if self.kind == QueryKind::MultiHop {
            for (t, u) in self.units.iter().enumerate().skip(1) {
                if *u != dummy_marker(t) {
                    return Err(validation(format!("multi-hop unit {t} must be `{}`", dummy_marker(t))));
                }
            }
        }
        Ok(())
    }

    pub fn hops(&self) -> usize {
        self.units.len()
    }
}
