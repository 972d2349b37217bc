//! Synthetic documents with planted multi-hop chains.
//!
//! Every paragraph has one "bridge" sentence carrying a marker direction `e`
//! shared by the whole dataset. A query's first vector points at the mean of a
//! gold paragraph. The gold sentence of the next hop lives in another paragraph
//! and is close to `M·(I − e·eᵀ)·bridge` for a fixed orthogonal `M`. Reaching it
//! requires picking the bridge out of the retrieved paragraph and transforming
//! it, which the mixing step can learn but a single dense hop cannot do.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::doc::{build_multihop_query, Paragraph, StructuredDocument};
use crate::embed::{embed_query_units, EmbeddingProvider, query_unit_key, sentence_key, EmbeddingTable, FileProvider};
use crate::error::{validation, Result};
use crate::index::{argmax_entry, build_index, score_all, CombinedIndex, EntryKind, Regime};
use crate::linalg::{dot, narrow, widen, Vector};
use crate::train::{EntryRef, StepLabels, TrainExample, TrainRecord, TrainSet};

/// Weight of the marker direction added to each bridge sentence before normalizing.
const MARKER_WEIGHT: f64 = 1.0;
/// Norm of the noise added to each chained sentence.
const CHAIN_NOISE: f64 = 0.3;
/// Norm of the first query vector.
const QUERY_SCALE: f64 = 4.0;
/// Relative noise on the first query vector.
const QUERY_NOISE: f64 = 0.3;
/// Norm of the later (dummy-question) query vectors.
const LATER_QUERY_NORM: f64 = 0.3;
/// Required gap between the planted argmax and the runner-up.
const MIN_MARGIN: f64 = 1e-3;
const MAX_ATTEMPTS: usize = 10_000;

/// Fraction of queries in the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_docs: usize,
    pub paras_per_doc: usize,
    pub sents_per_para: usize,
    pub dim: usize,
    pub hops: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_docs == 0 || self.paras_per_doc == 0 || self.sents_per_para == 0 || self.dim == 0 || self.hops == 0 {
            return Err(validation("synthetic spec fields must all be positive"));
        }
        if self.hops > 1 && (self.paras_per_doc < 2 || self.sents_per_para < 2) {
            return Err(validation("multi-hop chains need at least two paragraphs and two sentences per paragraph"));
        }
        if self.hops > 1 && self.paras_per_doc * (self.sents_per_para - 1) < self.hops - 1 {
            return Err(validation("too few sentences to plant a chain of this length"));
        }
        if self.dim < 2 {
            return Err(validation("synthetic data needs dimension ≥ 2"));
        }
        Ok(())
    }

    /// Documents in the training split; the rest are held out.
    pub fn n_train_docs(&self) -> usize {
        (self.n_docs as f64 * TRAIN_FRACTION).floor() as usize
    }
}

/// The planted gold entry of every hop for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldChain {
    pub query_id: String,
    pub doc_id: String,
    /// Bridge sentence inside the hop-1 paragraph.
    pub bridge: EntryRef,
    /// Hop 1 gold paragraph, then one gold sentence per later hop.
    pub hops: Vec<EntryRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub documents: Vec<StructuredDocument>,
    /// Queries grouped by document, in document order.
    pub records: Vec<TrainRecord>,
    pub embeddings: EmbeddingTable,
    pub chains: Vec<GoldChain>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(v: Vector) -> Vector {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    normalized(gaussian(rng, dim))
}

/// Random orthogonal matrix by Gram-Schmidt over Gaussian rows, row-major.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vector> {
    let mut rows: Vec<Vector> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = gaussian(rng, dim);
        for r in &rows {
            let c = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows
}

/// The planted hop transform: `M·(I − e·eᵀ)·x`.
fn chain_map(m: &[Vector], marker: &[f64], x: &[f64]) -> Vector {
    let c = dot(marker, x);
    let stripped: Vector = x.iter().zip(marker).map(|(a, e)| a - c * e).collect();
    m.iter().map(|row| dot(row, &stripped)).collect()
}

fn unique_argmax(scores: &[(usize, f64)], want: usize) -> bool {
    let Ok((best, top)) = argmax_entry(scores) else { return false };
    best == want && scores.iter().all(|&(e, s)| e == want || s < top - MIN_MARGIN)
}

struct PlantedQuery {
    vectors: Vec<Vec<f32>>,
    gold_para: usize,
    chain: Vec<(usize, usize)>,
}

struct PlantedDoc {
    sentences: Vec<Vec<Vec<f32>>>,
    slots: Vec<usize>,
    queries: Vec<PlantedQuery>,
}

/// Queries planted per document: one per paragraph, as far as free sentence slots allow.
fn queries_per_doc(spec: &SynthSpec) -> usize {
    if spec.hops == 1 {
        return spec.paras_per_doc;
    }
    let free = spec.paras_per_doc * (spec.sents_per_para - 1);
    spec.paras_per_doc.min(free / (spec.hops - 1))
}

fn plant_doc(rng: &mut ChaCha8Rng, spec: &SynthSpec, m: &[Vector], marker: &[f64]) -> Result<PlantedDoc> {
    let (np, ns, dim) = (spec.paras_per_doc, spec.sents_per_para, spec.dim);
    let n_queries = queries_per_doc(spec);
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let mut sents: Vec<Vec<Vector>> = (0..np).map(|_| (0..ns).map(|_| random_unit(rng, dim)).collect()).collect();
        let slots: Vec<usize> = (0..np).map(|_| rng.random_range(0..ns)).collect();
        for (p, &b) in slots.iter().enumerate() {
            let v: Vector = sents[p][b].iter().zip(marker).map(|(x, e)| x + MARKER_WEIGHT * e).collect();
            sents[p][b] = normalized(v);
        }
        let mut gold_paras: Vec<usize> = (0..np).collect();
        gold_paras.shuffle(rng);
        gold_paras.truncate(n_queries);
        let mut free: Vec<(usize, usize)> =
            (0..np).flat_map(|p| (0..ns).map(move |s| (p, s))).filter(|&(p, s)| s != slots[p]).collect();
        let mut chains = Vec::with_capacity(n_queries);
        for &gp in &gold_paras {
            let mut chain = Vec::with_capacity(spec.hops - 1);
            let mut prev = (gp, slots[gp]);
            for _ in 1..spec.hops {
                let candidates: Vec<usize> = (0..free.len()).filter(|&i| free[i].0 != prev.0).collect();
                if candidates.is_empty() {
                    continue 'attempt;
                }
                let (p, s) = free.swap_remove(candidates[rng.random_range(0..candidates.len())]);
                let noise = gaussian(rng, dim);
                let target = chain_map(m, marker, &sents[prev.0][prev.1]);
                let v: Vector = target.iter().zip(&noise).map(|(t, n)| t + CHAIN_NOISE * n / (dim as f64).sqrt()).collect();
                sents[p][s] = normalized(v);
                chain.push((p, s));
                prev = (p, s);
            }
            chains.push(chain);
        }

        let stored: Vec<Vec<Vec<f32>>> = sents.iter().map(|p| p.iter().map(|s| narrow(s)).collect()).collect();
        let index = CombinedIndex::from_vectors(
            "planted",
            dim,
            Regime::Agnostic,
            stored.iter().map(|p| crate::index::ParagraphVectors { paragraph: None, sentences: p.clone() }).collect(),
        )?;
        let mut queries = Vec::with_capacity(n_queries);
        for (&gp, chain) in gold_paras.iter().zip(chains) {
            let dir = normalized(widen(index.vector(index.paragraphs()[gp].entry)));
            let noise = gaussian(rng, dim);
            let q0: Vector = dir.iter().zip(&noise).map(|(d, n)| d + QUERY_NOISE * n / (dim as f64).sqrt()).collect();
            let q0 = narrow(&normalized(q0).into_iter().map(|x| QUERY_SCALE * x).collect::<Vector>());
            let para_scores = score_all(&widen(&q0), &index, Some(EntryKind::Paragraph))?;
            if !unique_argmax(&para_scores, index.paragraphs()[gp].entry) {
                continue 'attempt;
            }
            let mut prev = (gp, slots[gp]);
            for &(p, s) in &chain {
                let x = widen(&stored[prev.0][prev.1]);
                let scores = score_all(&chain_map(m, marker, &x), &index, Some(EntryKind::Sentence))?;
                if !unique_argmax(&scores, index.entry_of(p, Some(s)).expect("planted sentence")) {
                    continue 'attempt;
                }
                prev = (p, s);
            }
            let mut vectors = vec![q0];
            for _ in 1..spec.hops {
                vectors.push(narrow(&random_unit(rng, dim).into_iter().map(|x| LATER_QUERY_NORM * x).collect::<Vector>()));
            }
            queries.push(PlantedQuery { vectors, gold_para: gp, chain });
        }
        return Ok(PlantedDoc { sentences: stored, slots, queries });
    }
    Err(validation("could not plant chains with unique argmaxes; increase the dimension"))
}

/// Generates documents, labeled queries (one per paragraph where sentence slots
/// allow) and all vectors.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = random_orthogonal(&mut rng, spec.dim);
    let marker = random_unit(&mut rng, spec.dim);
    let mut documents = Vec::with_capacity(spec.n_docs);
    let mut records = Vec::new();
    let mut chains = Vec::new();
    let mut embeddings = EmbeddingTable::new(spec.dim);

    for i in 0..spec.n_docs {
        let planted = plant_doc(&mut rng, spec, &m, &marker)?;
        let doc_id = format!("synth{}-doc{i}", spec.seed);
        let paragraphs = (0..spec.paras_per_doc)
            .map(|p| {
                let texts = (0..spec.sents_per_para).map(|s| format!("Document {i} paragraph {p} sentence {s}.")).collect();
                Paragraph::new(format!("{doc_id}.p{p}"), p, None, texts)
            })
            .collect::<Result<Vec<_>>>()?;
        let doc = StructuredDocument::new(doc_id.clone(), paragraphs)?;
        for (p, para) in planted.sentences.iter().enumerate() {
            for (s, v) in para.iter().enumerate() {
                embeddings.insert(sentence_key(&doc_id, p, s), v.clone())?;
            }
        }
        for (j, q) in planted.queries.iter().enumerate() {
            let query_id = format!("synth{}-doc{i}-q{j}", spec.seed);
            for (t, v) in q.vectors.iter().enumerate() {
                embeddings.insert(query_unit_key(&query_id, t), v.clone())?;
            }
            let bridge = EntryRef::sentence(q.gold_para, planted.slots[q.gold_para]);
            let mut gold = vec![EntryRef::paragraph(q.gold_para)];
            gold.extend(q.chain.iter().map(|&(p, s)| EntryRef::sentence(p, s)));
            let mut label_hops = vec![vec![gold[0], bridge]];
            label_hops.extend(gold[1..].iter().map(|g| vec![*g]));
            let mut evidence = vec![bridge];
            evidence.extend_from_slice(&gold[1..]);
            let answers = gold
                .last()
                .and_then(|g| g.sent.map(|s| doc.paragraphs[g.para].sentences[s].text.clone()))
                .into_iter()
                .collect();
            records.push(TrainRecord {
                query_id: query_id.clone(),
                doc_id: doc_id.clone(),
                query: build_multihop_query(&format!("Follow chain {j} planted in document {i}."), spec.hops)?,
                labels: StepLabels::new(label_hops).to_map(),
                drop: false,
                class: None,
                evidence,
                answers,
            });
            chains.push(GoldChain { query_id, doc_id: doc_id.clone(), bridge, hops: gold });
        }
        documents.push(doc);
    }
    Ok(SynthData { spec: *spec, documents, records, embeddings, chains })
}

/// Builds indices and query vectors through the file-backed provider.
///
/// Records are matched to documents by id; records marked `drop` are skipped.
pub fn build_train_set(
    documents: &[StructuredDocument],
    records: &[TrainRecord],
    embeddings: &EmbeddingTable,
    regime: Regime,
) -> Result<TrainSet> {
    build_train_set_with(documents, records, &FileProvider::new(embeddings.clone()), regime)
}

/// [`build_train_set`] over any provider.
pub fn build_train_set_with(
    documents: &[StructuredDocument],
    records: &[TrainRecord],
    provider: &dyn EmbeddingProvider,
    regime: Regime,
) -> Result<TrainSet> {
    let mut indices = Vec::with_capacity(documents.len());
    let mut by_id = std::collections::HashMap::new();
    for doc in documents {
        by_id.insert(doc.id.as_str(), indices.len());
        indices.push(build_index(doc, provider, regime)?);
    }
    let mut examples = Vec::with_capacity(records.len());
    for rec in records.iter().filter(|r| !r.drop) {
        let &index = by_id
            .get(rec.doc_id.as_str())
            .ok_or_else(|| validation(format!("query {} refers to unknown document {}", rec.query_id, rec.doc_id)))?;
        let queries = embed_query_units(provider, &rec.query_id, &rec.query)?;
        let positives = rec.step_labels()?.resolve(&indices[index])?;
        examples.push(TrainExample { query_id: rec.query_id.clone(), index, queries, positives, class: rec.class });
    }
    Ok(TrainSet { indices, examples })
}

impl SynthData {
    pub fn train_set(&self, regime: Regime) -> Result<TrainSet> {
        build_train_set(&self.documents, &self.records, &self.embeddings, regime)
    }
}

/// Splits by document: queries on the first `n_train_docs` indices train, the rest test.
pub fn split_by_document(set: TrainSet, n_train_docs: usize) -> (TrainSet, TrainSet) {
    let (train_ex, test_ex): (Vec<_>, Vec<_>) = set.examples.into_iter().partition(|e| e.index < n_train_docs);
    let train = TrainSet { indices: set.indices.clone(), examples: train_ex };
    let test = TrainSet { indices: set.indices, examples: test_ex };
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec { n_docs: 1, paras_per_doc: 3, sents_per_para: 4, dim: 8, hops: 2, seed }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = synth_generate(&spec(7)).unwrap();
        let b = synth_generate(&spec(7)).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.embeddings.write(&mut ba).unwrap();
        b.embeddings.write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(a, synth_generate(&spec(8)).unwrap());
    }

    #[test]
    fn planted_chains_are_unique_argmaxes() {
        for seed in 0..5 {
            let s = SynthSpec { n_docs: 20, paras_per_doc: 10, sents_per_para: 5, dim: 32, hops: 3, seed };
            let data = synth_generate(&s).unwrap();
            let set = data.train_set(Regime::Agnostic).unwrap();
            for (ex, chain) in set.examples.iter().zip(&data.chains) {
                let idx = &set.indices[ex.index];
                let scores = score_all(&ex.queries[0], idx, Some(EntryKind::Paragraph)).unwrap();
                let (best, _) = argmax_entry(&scores).unwrap();
                assert_eq!(best, chain.hops[0].resolve(idx).unwrap());
                assert_eq!(chain.hops.len(), 3);
                assert_ne!(chain.hops[1].para, chain.hops[0].para);
                assert_ne!(chain.hops[2].para, chain.hops[1].para);
            }
        }
    }

    #[test]
    fn labels_and_split() {
        let s = SynthSpec { n_docs: 10, paras_per_doc: 4, sents_per_para: 3, dim: 16, hops: 2, seed: 1 };
        let data = synth_generate(&s).unwrap();
        let set = data.train_set(Regime::Agnostic).unwrap();
        assert_eq!(set.examples.len(), 40);
        assert_eq!(set.examples[0].positives.len(), 2);
        assert_eq!(set.examples[0].positives[0].len(), 2);
        let (train, test) = split_by_document(set, s.n_train_docs());
        assert_eq!((train.examples.len(), test.examples.len()), (32, 8));
        assert!(test.examples.iter().all(|e| e.index >= 8));
        assert!(data.records.iter().all(|r| r.validate().is_ok()));
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec { hops: 0, ..spec(1) }.validate().is_err());
        assert!(SynthSpec { paras_per_doc: 1, ..spec(1) }.validate().is_err());
        assert!(SynthSpec { paras_per_doc: 1, hops: 1, ..spec(1) }.validate().is_ok());
        assert!(SynthSpec { sents_per_para: 1, ..spec(1) }.validate().is_err());
        assert_eq!(queries_per_doc(&SynthSpec { paras_per_doc: 2, sents_per_para: 2, hops: 3, ..spec(1) }), 1);
    }
}
