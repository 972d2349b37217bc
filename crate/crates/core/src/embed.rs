//! Embedding providers and paragraph embeddings.
//!
//! The neural encoder is replaced by a provider contract. Two providers exist:
//! [`ToyProvider`], a platform-stable hash embedding, and [`FileProvider`],
//! which serves vectors from an `HMIX` embedding file.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::doc::{is_dummy_marker, Paragraph, QueryParagraph};
use crate::error::{validation, Error, Result};
use crate::linalg::{check_dim, dot, softmax, weighted_sum, widen, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    ToyDeterministic,
    FromFile,
}

/// Supplies fixed-dimension vectors for sentences, paragraphs and query units.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn mode(&self) -> ProviderMode;

    fn sentence_vector(&self, doc_id: &str, para_idx: usize, sent_idx: usize, text: &str) -> Result<Vec<f32>>;

    /// An explicit query-agnostic paragraph vector, when the provider has one.
    fn paragraph_vector(&self, doc_id: &str, para_idx: usize) -> Result<Option<Vec<f32>>>;

    /// Vector for query unit `t`; `text` is what the encoder would see.
    fn query_unit_vector(&self, query_id: &str, t: usize, text: &str) -> Result<Vec<f32>>;
}

pub fn sentence_key(doc_id: &str, para_idx: usize, sent_idx: usize) -> String {
    format!("{doc_id}|{para_idx}|{sent_idx}")
}

pub fn paragraph_key(doc_id: &str, para_idx: usize) -> String {
    format!("{doc_id}|{para_idx}|PARA")
}

pub fn query_unit_key(query_id: &str, t: usize) -> String {
    format!("{query_id}|unit{t}")
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Stable 64-bit string hash seeded with `seed`.
///
/// FNV-1a over the four little-endian bytes of `seed` followed by the UTF-8
/// bytes of `text`, then the SplitMix64 finalizer.
pub fn stable_hash(text: &str, seed: u32) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(text.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Deterministic pseudo-embedding: component `k` is `(h(text, k) mod 2001 - 1000) / 1000`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyProvider {
    dim: usize,
}

impl ToyProvider {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(validation("embedding dimension must be positive"));
        }
        Ok(Self { dim })
    }

    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        (0..self.dim)
            .map(|k| {
                let h = stable_hash(text, k as u32);
                ((h % 2001) as i32 - 1000) as f32 / 1000.0
            })
            .collect()
    }
}

impl EmbeddingProvider for ToyProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::ToyDeterministic
    }

    fn sentence_vector(&self, _doc: &str, _p: usize, _s: usize, text: &str) -> Result<Vec<f32>> {
        Ok(self.embed_text(text))
    }

    fn paragraph_vector(&self, _doc: &str, _p: usize) -> Result<Option<Vec<f32>>> {
        Ok(None)
    }

    fn query_unit_vector(&self, _query_id: &str, _t: usize, text: &str) -> Result<Vec<f32>> {
        Ok(self.embed_text(text))
    }
}

/// Keyed `f32` vectors of one dimension; the in-memory form of an `HMIX` file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

const HMIX_MAGIC: &[u8; 4] = b"HMIX";
const HMIX_VERSION: u32 = 1;

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        check_dim("embedding", self.dim, vector.len())?;
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(validation("embedding has non-finite components"));
        }
        self.entries.insert(key.into(), vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(HMIX_MAGIC)?;
        w.write_all(&HMIX_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for (key, vec) in &self.entries {
            w.write_all(&(key.len() as u32).to_le_bytes())?;
            w.write_all(key.as_bytes())?;
            for v in vec {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HMIX_MAGIC {
            return Err(Error::Format(format!("bad embedding file magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != HMIX_VERSION {
            return Err(Error::Format(format!("unsupported embedding file version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        if dim == 0 {
            return Err(Error::Format("embedding file declares dimension 0".into()));
        }
        let count = read_u64(&mut r)?;
        let mut table = Self::new(dim);
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..count {
            let klen = read_u32(&mut r)? as usize;
            let mut kbytes = vec![0u8; klen];
            r.read_exact(&mut kbytes)?;
            let key = String::from_utf8(kbytes).map_err(|_| Error::Format("embedding key is not UTF-8".into()))?;
            r.read_exact(&mut buf)?;
            let vec: Vec<f32> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            if table.entries.contains_key(&key) {
                return Err(Error::Format(format!("duplicate embedding key `{key}`")));
            }
            if vec.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("non-finite vector for `{key}`")));
            }
            table.entries.insert(key, vec);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after declared record count".into()));
        }
        Ok(table)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Serves vectors from an [`EmbeddingTable`].
#[derive(Debug, Clone)]
pub struct FileProvider {
    table: EmbeddingTable,
}

impl FileProvider {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    fn lookup(&self, key: String) -> Result<Vec<f32>> {
        self.table.get(&key).map(<[f32]>::to_vec).ok_or(Error::Lookup(key))
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.table.dim
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::FromFile
    }

    fn sentence_vector(&self, doc_id: &str, para_idx: usize, sent_idx: usize, _text: &str) -> Result<Vec<f32>> {
        self.lookup(sentence_key(doc_id, para_idx, sent_idx))
    }

    fn paragraph_vector(&self, doc_id: &str, para_idx: usize) -> Result<Option<Vec<f32>>> {
        Ok(self.table.get(&paragraph_key(doc_id, para_idx)).map(<[f32]>::to_vec))
    }

    fn query_unit_vector(&self, query_id: &str, t: usize, _text: &str) -> Result<Vec<f32>> {
        self.lookup(query_unit_key(query_id, t))
    }
}

/// One vector per sentence of `paragraph`, in order.
pub fn embed_sentences(
    provider: &dyn EmbeddingProvider,
    doc_id: &str,
    para_idx: usize,
    paragraph: &Paragraph,
) -> Result<Vec<Vec<f32>>> {
    paragraph
        .sentences
        .iter()
        .map(|s| {
            let v = provider.sentence_vector(doc_id, para_idx, s.sent_idx, &s.text)?;
            check_dim("sentence embedding", provider.dim(), v.len())?;
            Ok(v)
        })
        .collect()
}

/// Text the encoder sees for unit `t`: dummies carry the original question after the marker.
pub fn query_unit_text(qp: &QueryParagraph, t: usize) -> String {
    let unit = &qp.units[t];
    if t > 0 && is_dummy_marker(unit) {
        format!("{unit} {}", qp.units[0])
    } else {
        unit.clone()
    }
}

/// Query vectors `q_0 … q_n`, one per unit.
pub fn embed_query_units(provider: &dyn EmbeddingProvider, query_id: &str, qp: &QueryParagraph) -> Result<Vec<Vector>> {
    qp.validate()?;
    (0..qp.units.len())
        .map(|t| {
            let v = provider.query_unit_vector(query_id, t, &query_unit_text(qp, t))?;
            check_dim("query embedding", provider.dim(), v.len())?;
            Ok(widen(&v))
        })
        .collect()
}

/// Query-agnostic paragraph vector: arithmetic mean of the sentence vectors.
pub fn paragraph_embedding_agnostic(sent_vecs: &[Vector]) -> Result<Vector> {
    if sent_vecs.is_empty() {
        return Err(validation("cannot aggregate an empty paragraph"));
    }
    let dim = sent_vecs[0].len();
    let mut mean = vec![0.0; dim];
    for v in sent_vecs {
        check_dim("sentence embedding", dim, v.len())?;
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = sent_vecs.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Query-dependent paragraph vector `Σ_j α_j s_j` with `α = softmax(qᵀ s_j)`.
pub fn paragraph_embedding_query_dep(q: &[f64], sent_vecs: &[Vector]) -> Result<(Vector, Vec<f64>)> {
    if sent_vecs.is_empty() {
        return Err(validation("cannot aggregate an empty paragraph"));
    }
    for s in sent_vecs {
        check_dim("sentence embedding", q.len(), s.len())?;
    }
    let scores: Vec<f64> = sent_vecs.iter().map(|s| dot(q, s)).collect();
    let alpha = softmax(&scores);
    Ok((weighted_sum(&alpha, sent_vecs), alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doc::{build_multihop_query, Paragraph};

    // Independent re-statement of the documented hash scheme.
    fn oracle_component(text: &str, k: u32) -> f32 {
        let mut h: u64 = 14695981039346656037;
        let mut bytes = k.to_le_bytes().to_vec();
        bytes.extend_from_slice(text.as_bytes());
        for b in bytes {
            h = (h ^ b as u64).wrapping_mul(1099511628211);
        }
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(13787848793156543929);
        z = (z ^ (z >> 27)).wrapping_mul(10723151780598845931);
        z ^= z >> 31;
        let m = (z % 2001) as f64;
        ((m - 1000.0) / 1000.0) as f32
    }

    #[test]
    fn toy_scheme_matches_hand_computation() {
        let toy = ToyProvider::new(4).unwrap();
        let v = toy.embed_text("ab");
        let expected: Vec<f32> = (0..4).map(|k| oracle_component("ab", k)).collect();
        assert_eq!(v, expected);
        assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn toy_is_deterministic() {
        let toy = ToyProvider::new(16).unwrap();
        assert_eq!(toy.embed_text("same"), toy.embed_text("same"));
        assert_ne!(toy.embed_text("same"), toy.embed_text("other"));
    }

    #[test]
    fn embeds_each_sentence() {
        let toy = ToyProvider::new(8).unwrap();
        let p = Paragraph::new("p", 0, None, vec!["a".into(), "b".into(), "a".into()]).unwrap();
        let vecs = embed_sentences(&toy, "d", 0, &p).unwrap();
        assert_eq!(vecs.len(), 3);
        assert!(vecs.iter().all(|v| v.len() == 8));
        assert_eq!(vecs[0], vecs[2]);
    }

    #[test]
    fn dummy_units_see_the_question() {
        let toy = ToyProvider::new(8).unwrap();
        let qp = build_multihop_query("which gulf is north", 3).unwrap();
        assert_eq!(query_unit_text(&qp, 1), "[NULL_1] which gulf is north");
        let qs = embed_query_units(&toy, "q", &qp).unwrap();
        assert_eq!(qs.len(), 3);
        assert_ne!(qs[0], qs[1]);
        assert_ne!(qs[1], qs[2]);
    }

    #[test]
    fn file_provider_missing_key_names_it() {
        let provider = FileProvider::new(EmbeddingTable::new(2));
        let p = Paragraph::new("p", 0, None, vec!["a".into()]).unwrap();
        match embed_sentences(&provider, "doc", 3, &p) {
            Err(Error::Lookup(k)) => assert_eq!(k, "doc|3|0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_provider_passes_paragraph_vector_through() {
        let mut t = EmbeddingTable::new(2);
        t.insert("doc|0|PARA", vec![0.25, -4.0]).unwrap();
        let provider = FileProvider::new(t);
        assert_eq!(provider.paragraph_vector("doc", 0).unwrap(), Some(vec![0.25, -4.0]));
        assert_eq!(provider.paragraph_vector("doc", 1).unwrap(), None);
    }

    #[test]
    fn agnostic_mean() {
        assert_eq!(paragraph_embedding_agnostic(&[vec![3.0, -1.0]]).unwrap(), vec![3.0, -1.0]);
        assert_eq!(paragraph_embedding_agnostic(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(paragraph_embedding_agnostic(&[]), Err(Error::Validation(_))));
    }

    #[test]
    fn query_dependent_examples() {
        let (p, a) = paragraph_embedding_query_dep(&[0.3, 0.1], &[vec![2.0, 5.0]]).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(p, vec![2.0, 5.0]);

        let (p, a) = paragraph_embedding_query_dep(&[1.0, 1.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);

        // e/(e+1) computed by hand
        let e = std::f64::consts::E;
        let (p, a) = paragraph_embedding_query_dep(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((a[0] - e / (e + 1.0)).abs() < 1e-12 && (a[0] - 0.73106).abs() < 1e-5);
        assert!((a[1] - 1.0 / (e + 1.0)).abs() < 1e-12 && (a[1] - 0.26894).abs() < 1e-5);
        assert!((p[0] - a[0]).abs() < 1e-12 && (p[1] - a[1]).abs() < 1e-12);

        assert!(matches!(paragraph_embedding_query_dep(&[1.0], &[vec![1.0, 0.0]]), Err(Error::Validation(_))));
    }

    #[test]
    fn hmix_rejects_bad_headers() {
        let mut t = EmbeddingTable::new(3);
        t.insert("k", vec![1.0, 2.0, 3.0]).unwrap();
        let mut bytes = Vec::new();
        t.write(&mut bytes).unwrap();
        assert_eq!(EmbeddingTable::read(&bytes[..]).unwrap(), t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(EmbeddingTable::read(&bad[..]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(EmbeddingTable::read(&bad[..]), Err(Error::Format(_))));
        // dim too large for the records: runs out of bytes
        let mut bad = bytes.clone();
        bad[8] = 4;
        assert!(matches!(EmbeddingTable::read(&bad[..]), Err(Error::Io(_))));
        // dim too small: leftover bytes
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(EmbeddingTable::read(&bad[..]), Err(Error::Format(_))));
        assert!(matches!(EmbeddingTable::read(&bytes[..bytes.len() - 1]), Err(Error::Io(_))));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn vecs(dim: usize) -> impl Strategy<Value = Vec<Vector>> {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, dim), 1..6)
    }

    proptest! {
        #[test]
        fn query_dep_stays_in_convex_hull(q in prop::collection::vec(-2.0f64..2.0, 3), s in vecs(3)) {
            let (p, alpha) = paragraph_embedding_query_dep(&q, &s).unwrap();
            prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(alpha.iter().all(|a| *a > 0.0));
            for c in 0..3 {
                let lo = s.iter().map(|v| v[c]).fold(f64::INFINITY, f64::min);
                let hi = s.iter().map(|v| v[c]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(p[c] >= lo - 1e-12 && p[c] <= hi + 1e-12);
            }
        }

        #[test]
        fn softmax_is_shift_invariant(scores in prop::collection::vec(-20.0f64..20.0, 1..8), c in -50.0f64..50.0) {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let a = softmax(&scores);
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
