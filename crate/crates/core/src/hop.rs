//! The multi-hop retrieve → mix → update loop.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::index::{argmax_entry, score_batch_into, CombinedIndex, EntryKind, ScoreScratch};
use crate::linalg::{check_dim, dot, softmax, weighted_sum, widen, Matrix, Vector};

pub const NUM_CLASSES: usize = 4;

/// Learnable parameters shared across hops.
///
/// * `w_q` (`2·dim × dim`) projects `[query; sentence]` to a mixed vector.
/// * `v` (`dim`) scores mixed sentence vectors inside a retrieved paragraph.
/// * `u` (`dim`) pools mixed vectors across hops for classification.
/// * `w_c` (`dim × 4`) maps the pooled vector to class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixParams {
    pub dim: usize,
    pub w_q: Matrix,
    pub v: Vector,
    pub u: Vector,
    pub w_c: Matrix,
}

impl MixParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            w_q: Matrix::zeros(2 * dim, dim),
            v: vec![0.0; dim],
            u: vec![0.0; dim],
            w_c: Matrix::zeros(dim, NUM_CLASSES),
        }
    }

    /// Gaussian initialization with standard deviation `1/sqrt(fan_in)` per tensor.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |n: usize, fan_in: usize| -> Vec<f64> {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        let w_q = Matrix { rows: 2 * dim, cols: dim, data: fill(2 * dim * dim, 2 * dim) };
        let v = fill(dim, dim);
        let u = fill(dim, dim);
        let w_c = Matrix { rows: dim, cols: NUM_CLASSES, data: fill(dim * NUM_CLASSES, dim) };
        Self { dim, w_q, v, u, w_c }
    }

    /// Selector parameters: `W_q = [I; 0]`, so mixing returns the query.
    pub fn query_selector(dim: usize) -> Self {
        let mut p = Self::zeros(dim);
        for i in 0..dim {
            p.w_q.set(i, i, 1.0);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let shapes_ok = self.w_q.rows == 2 * d
            && self.w_q.cols == d
            && self.w_q.data.len() == 2 * d * d
            && self.v.len() == d
            && self.u.len() == d
            && self.w_c.rows == d
            && self.w_c.cols == NUM_CLASSES
            && self.w_c.data.len() == d * NUM_CLASSES;
        if !shapes_ok {
            return Err(validation(format!("mix parameters have wrong shapes for dim {d}")));
        }
        if !self.is_finite() {
            return Err(validation("mix parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w_q.is_finite() && self.w_c.is_finite() && self.v.iter().chain(&self.u).all(|x| x.is_finite())
    }

    pub fn n_params(&self) -> usize {
        self.w_q.data.len() + self.v.len() + self.u.len() + self.w_c.data.len()
    }

    /// All parameters in the order `w_q, v, u, w_c`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.w_q.data);
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.w_c.data);
        out
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(dim);
        if flat.len() != p.n_params() {
            return Err(validation(format!("expected {} parameters, got {}", p.n_params(), flat.len())));
        }
        let (wq, rest) = flat.split_at(2 * dim * dim);
        let (v, rest) = rest.split_at(dim);
        let (u, wc) = rest.split_at(dim);
        p.w_q.data.copy_from_slice(wq);
        p.v.copy_from_slice(v);
        p.u.copy_from_slice(u);
        p.w_c.data.copy_from_slice(wc);
        Ok(p)
    }
}

/// Ordered per-hop query vectors and the index of the hop about to run.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryState {
    vectors: Vec<Vector>,
    current_hop: usize,
}

impl QueryState {
    pub fn new(vectors: Vec<Vector>) -> Result<Self> {
        let dim = vectors.first().ok_or_else(|| validation("query state needs at least one vector"))?.len();
        for v in &vectors {
            check_dim("query vector", dim, v.len())?;
        }
        Ok(Self { vectors, current_hop: 0 })
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn current_hop(&self) -> usize {
        self.current_hop
    }

    pub fn current(&self) -> &[f64] {
        &self.vectors[self.current_hop]
    }

    pub fn hops(&self) -> usize {
        self.vectors.len()
    }

    /// Moves to the next hop without touching its query vector.
    pub fn advance(&mut self) -> Result<()> {
        if self.current_hop + 1 >= self.vectors.len() {
            return Err(Error::State(format!("no hop after {}", self.current_hop)));
        }
        self.current_hop += 1;
        Ok(())
    }
}

/// Residual update: `q_{t+1} ← q_{t+1} + q̃`, then advances to hop `t+1`.
pub fn update_query(mut state: QueryState, q_tilde: &[f64]) -> Result<QueryState> {
    let next = state.current_hop + 1;
    if next >= state.vectors.len() {
        return Err(Error::State(format!("hop {} has no successor to update", state.current_hop)));
    }
    check_dim("mixed vector", state.vectors[next].len(), q_tilde.len())?;
    for (q, d) in state.vectors[next].iter_mut().zip(q_tilde) {
        *q += d;
    }
    state.current_hop = next;
    Ok(state)
}

fn project(params: &MixParams, query_part: &[f64], query_scale: f64, s: &[f64]) -> Vector {
    let mut k = vec![0.0; params.dim];
    if query_scale == 1.0 {
        params.w_q.add_transpose_mul_block(0, query_part, &mut k);
    } else {
        let scaled: Vector = query_part.iter().map(|x| query_scale * x).collect();
        params.w_q.add_transpose_mul_block(0, &scaled, &mut k);
    }
    params.w_q.add_transpose_mul_block(params.dim, s, &mut k);
    k
}

/// Mixing for a retrieved sentence: `k = W_qᵀ [q; s]`, `q̃ = k`. Returns `(q̃, k)`.
pub fn mix_sentence(q: &[f64], s: &[f64], params: &MixParams) -> Result<(Vector, Vector)> {
    check_dim("query", params.dim, q.len())?;
    check_dim("sentence", params.dim, s.len())?;
    let k = project(params, q, 1.0, s);
    Ok((k.clone(), k))
}

/// Result of mixing a retrieved paragraph.
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphMix {
    pub q_tilde: Vector,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub k_vectors: Vec<Vector>,
}

/// Mixing for a retrieved paragraph with `α_j = softmax(qᵀ s_j)`.
pub fn mix_paragraph(q: &[f64], sent_vecs: &[Vector], params: &MixParams) -> Result<ParagraphMix> {
    check_dim("query", params.dim, q.len())?;
    let scores: Vec<f64> = sent_vecs
        .iter()
        .map(|s| check_dim("sentence", params.dim, s.len()).map(|_| dot(q, s)))
        .collect::<Result<_>>()?;
    if scores.is_empty() {
        return Err(validation("cannot mix an empty paragraph"));
    }
    mix_paragraph_with_alpha(q, sent_vecs, softmax(&scores), params)
}

/// Paragraph mixing with precomputed sentence weights `α`:
/// `k_j = W_qᵀ [α_j q; s_j]`, `β = softmax(vᵀ k_j)`, `q̃ = Σ_j β_j k_j`.
pub fn mix_paragraph_with_alpha(q: &[f64], sent_vecs: &[Vector], alpha: Vec<f64>, params: &MixParams) -> Result<ParagraphMix> {
    if sent_vecs.is_empty() || alpha.len() != sent_vecs.len() {
        return Err(validation("sentence weights do not match the paragraph"));
    }
    check_dim("query", params.dim, q.len())?;
    let mut k_vectors = Vec::with_capacity(sent_vecs.len());
    for (a, s) in alpha.iter().zip(sent_vecs) {
        check_dim("sentence", params.dim, s.len())?;
        k_vectors.push(project(params, q, *a, s));
    }
    let gate: Vec<f64> = k_vectors.iter().map(|k| dot(&params.v, k)).collect();
    let beta = softmax(&gate);
    let q_tilde = weighted_sum(&beta, &k_vectors);
    Ok(ParagraphMix { q_tilde, alpha, beta, k_vectors })
}

/// Per-hop retrieval masks and whether residual updates are applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopOptions {
    pub masks: Vec<Option<EntryKind>>,
    pub update: bool,
}

impl HopOptions {
    /// Every hop scores the whole combined index.
    pub fn unmasked(hops: usize) -> Self {
        Self { masks: vec![None; hops], update: true }
    }

    /// First hop retrieves a paragraph, later hops retrieve sentences.
    pub fn extractive(hops: usize) -> Self {
        let masks = (0..hops).map(|t| Some(if t == 0 { EntryKind::Paragraph } else { EntryKind::Sentence })).collect();
        Self { masks, update: true }
    }

    pub fn sentence_only(hops: usize) -> Self {
        Self { masks: vec![Some(EntryKind::Sentence); hops], update: true }
    }

    pub fn without_update(mut self) -> Self {
        self.update = false;
        self
    }

    pub fn hops(&self) -> usize {
        self.masks.len()
    }
}

/// Everything computed during one hop.
#[derive(Debug, Clone, PartialEq)]
pub struct HopRecord {
    pub hop: usize,
    /// The query vector `q_t` used at this hop (after earlier residual updates).
    pub query: Vector,
    /// Scores of every entry passing this hop's mask, in entry order.
    pub scores: Vec<(usize, f64)>,
    pub retrieved: usize,
    pub kind: EntryKind,
    pub para_idx: usize,
    pub sent_idx: Option<usize>,
    pub score: f64,
    /// Entry indices of the sentences that were mixed.
    pub sentences: Vec<usize>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub k_vectors: Vec<Vector>,
    pub q_tilde: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalTrace {
    pub records: Vec<HopRecord>,
    /// `(para_idx, sent_idx)` of the final hop when it retrieved a sentence.
    pub final_sentence: Option<(usize, usize)>,
}

impl RetrievalTrace {
    /// Entry indices of every sentence returned by any hop, in retrieval order.
    pub fn retrieved_sentences(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for r in &self.records {
            for &e in &r.sentences {
                if !out.contains(&e) {
                    out.push(e);
                }
            }
        }
        out
    }
}

/// Wall-clock time spent in each stage of [`run_hops`], summed over calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub score: Duration,
    pub mix: Duration,
    pub update: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.score + self.mix + self.update
    }
}

/// Runs every hop: score → argmax → mix → residual update (skipped after the last hop).
pub fn run_hops(state: QueryState, index: &CombinedIndex, params: &MixParams, opts: &HopOptions) -> Result<RetrievalTrace> {
    Ok(run_hops_inner(vec![state], index, params, opts, None)?.pop().expect("one trace"))
}

/// [`run_hops`] that also accumulates per-stage timings.
pub fn run_hops_profiled(
    state: QueryState,
    index: &CombinedIndex,
    params: &MixParams,
    opts: &HopOptions,
    times: &mut StageTimes,
) -> Result<RetrievalTrace> {
    Ok(run_hops_inner(vec![state], index, params, opts, Some(times))?.pop().expect("one trace"))
}

/// Runs several queries against one index in lockstep, one scoring pass per hop.
///
/// Traces are identical to running [`run_hops`] on each query.
pub fn run_hops_batch(
    states: Vec<QueryState>,
    index: &CombinedIndex,
    params: &MixParams,
    opts: &HopOptions,
    times: Option<&mut StageTimes>,
) -> Result<Vec<RetrievalTrace>> {
    run_hops_inner(states, index, params, opts, times)
}

fn run_hops_inner(
    mut states: Vec<QueryState>,
    index: &CombinedIndex,
    params: &MixParams,
    opts: &HopOptions,
    mut times: Option<&mut StageTimes>,
) -> Result<Vec<RetrievalTrace>> {
    for state in &states {
        if opts.hops() != state.hops() {
            return Err(validation(format!("{} hop masks for {} query vectors", opts.hops(), state.hops())));
        }
        if state.current_hop != 0 {
            return Err(Error::State("query state has already been advanced".into()));
        }
    }
    check_dim("mix parameters", index.dim(), params.dim)?;
    let n = states.len();
    let mut scratches = vec![ScoreScratch::default(); n];
    let mut records: Vec<Vec<HopRecord>> = (0..n).map(|_| Vec::with_capacity(opts.hops())).collect();
    let mut clock = Instant::now();
    let mut lap = |slot: fn(&mut StageTimes) -> &mut Duration, times: &mut Option<&mut StageTimes>| {
        if let Some(t) = times.as_deref_mut() {
            let now = Instant::now();
            *slot(t) += now - clock;
            clock = now;
        }
    };

    for (t, mask) in opts.masks.iter().enumerate() {
        let queries: Vec<Vector> = states.iter().map(|s| s.current().to_vec()).collect();
        let refs: Vec<&[f64]> = queries.iter().map(Vec::as_slice).collect();
        let mut scores = vec![Vec::new(); n];
        score_batch_into(&refs, index, *mask, &mut scores, &mut scratches)?;
        let best = scores.iter().map(|s| argmax_entry(s)).collect::<Result<Vec<_>>>()?;
        lap(|t| &mut t.score, &mut times);

        let mut hop_records = Vec::with_capacity(n);
        for (((query, scores), (retrieved, score)), scratch) in queries.into_iter().zip(scores).zip(best).zip(&scratches) {
            hop_records.push(mix_record(t, query, scores, retrieved, score, index, params, scratch)?);
        }
        lap(|t| &mut t.mix, &mut times);

        if t + 1 < opts.hops() {
            states = states
                .into_iter()
                .zip(&hop_records)
                .map(|(mut state, record)| {
                    if opts.update {
                        update_query(state, &record.q_tilde)
                    } else {
                        state.advance()?;
                        Ok(state)
                    }
                })
                .collect::<Result<_>>()?;
        }
        lap(|t| &mut t.update, &mut times);
        for (r, record) in records.iter_mut().zip(hop_records) {
            r.push(record);
        }
    }

    Ok(records
        .into_iter()
        .map(|records| {
            let final_sentence = records.last().and_then(|r| r.sent_idx.map(|s| (r.para_idx, s)));
            RetrievalTrace { records, final_sentence }
        })
        .collect())
}

/// Mixes the entry retrieved at hop `t` into a [`HopRecord`].
#[allow(clippy::too_many_arguments)]
fn mix_record(
    t: usize,
    query: Vector,
    scores: Vec<(usize, f64)>,
    retrieved: usize,
    score: f64,
    index: &CombinedIndex,
    params: &MixParams,
    scratch: &ScoreScratch,
) -> Result<HopRecord> {
    let entry = *index.entry(retrieved);
    Ok(match entry.kind {
        EntryKind::Sentence => {
            let s = widen(index.vector(retrieved));
            let (q_tilde, k) = mix_sentence(&query, &s, params)?;
            HopRecord {
                hop: t,
                query,
                scores,
                retrieved,
                kind: entry.kind,
                para_idx: entry.para_idx,
                sent_idx: entry.sent_idx,
                score,
                sentences: vec![retrieved],
                alpha: None,
                beta: None,
                k_vectors: vec![k],
                q_tilde,
            }
        }
        EntryKind::Paragraph => {
            let span = &index.paragraphs()[entry.para_idx];
            let sent_vecs = index.sentence_vectors(entry.para_idx);
            let mix = match scratch.alpha(entry.para_idx) {
                Some(alpha) => mix_paragraph_with_alpha(&query, &sent_vecs, alpha.to_vec(), params)?,
                None => mix_paragraph(&query, &sent_vecs, params)?,
            };
            HopRecord {
                hop: t,
                query,
                scores,
                retrieved,
                kind: entry.kind,
                para_idx: entry.para_idx,
                sent_idx: None,
                score,
                sentences: span.sentences.clone().collect(),
                alpha: Some(mix.alpha),
                beta: Some(mix.beta),
                k_vectors: mix.k_vectors,
                q_tilde: mix.q_tilde,
            }
        }
    })
}

/// One line of a trace dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub query_id: Option<String>,
    pub hop: usize,
    pub retrieved: RetrievedRef,
    pub score: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub kind: EntryKind,
    pub para: usize,
    pub sent: Option<usize>,
}

impl RetrievalTrace {
    pub fn to_lines(&self, query_id: Option<&str>) -> Vec<TraceLine> {
        self.records
            .iter()
            .map(|r| TraceLine {
                query_id: query_id.map(str::to_owned),
                hop: r.hop,
                retrieved: RetrievedRef { kind: r.kind, para: r.para_idx, sent: r.sent_idx },
                score: r.score,
                alpha: r.alpha.clone().unwrap_or_default(),
                beta: r.beta.clone().unwrap_or_default(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{ParagraphVectors, Regime};
    use rand::Rng;

    fn rand_params(dim: usize, seed: u64) -> MixParams {
        MixParams::random(dim, seed)
    }

    #[test]
    fn selector_returns_the_query() {
        let p = MixParams::query_selector(3);
        let (qt, k) = mix_sentence(&[1.0, -2.0, 0.5], &[9.0, 9.0, 9.0], &p).unwrap();
        assert_eq!(qt, vec![1.0, -2.0, 0.5]);
        assert_eq!(k, qt);
    }

    #[test]
    fn zero_projection_gives_zero() {
        let (qt, _) = mix_sentence(&[1.0, 2.0], &[3.0, 4.0], &MixParams::zeros(2)).unwrap();
        assert_eq!(qt, vec![0.0, 0.0]);
    }

    #[test]
    fn mix_sentence_matches_hand_multiply() {
        let mut p = MixParams::zeros(2);
        // W_q rows: [0.5, -1], [2, 0.25], [1, 1], [-3, 0.5]
        p.w_q = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![1.0, 1.0], vec![-3.0, 0.5]]).unwrap();
        let q = [0.2, -0.4];
        let s = [1.5, 2.0];
        let x = [0.2, -0.4, 1.5, 2.0];
        let expected = [
            x[0] * 0.5 + x[1] * 2.0 + x[2] * 1.0 + x[3] * -3.0,
            x[0] * -1.0 + x[1] * 0.25 + x[2] * 1.0 + x[3] * 0.5,
        ];
        let (qt, _) = mix_sentence(&q, &s, &p).unwrap();
        assert!((qt[0] - expected[0]).abs() < 1e-12 && (qt[1] - expected[1]).abs() < 1e-12);
        assert!(matches!(mix_sentence(&[1.0], &s, &p), Err(Error::Validation(_))));
    }

    #[test]
    fn singleton_paragraph_equals_sentence_mix() {
        let p = rand_params(5, 1);
        let q = vec![0.3, -0.1, 0.8, 0.0, -2.0];
        let s = vec![1.0, 0.5, -0.5, 0.25, 0.1];
        let mix = mix_paragraph(&q, &[s.clone()], &p).unwrap();
        let (qt, _) = mix_sentence(&q, &s, &p).unwrap();
        assert_eq!(mix.alpha, vec![1.0]);
        assert_eq!(mix.beta, vec![1.0]);
        assert_eq!(mix.q_tilde, qt);
    }

    #[test]
    fn identical_sentences_split_evenly() {
        let p = rand_params(3, 2);
        let s = vec![0.4, -0.2, 1.0];
        let mix = mix_paragraph(&[1.0, 1.0, 1.0], &[s.clone(), s], &p).unwrap();
        assert_eq!(mix.alpha, vec![0.5, 0.5]);
        assert_eq!(mix.beta, vec![0.5, 0.5]);
        assert_eq!(mix.k_vectors[0], mix.k_vectors[1]);
        for (a, b) in mix.q_tilde.iter().zip(&mix.k_vectors[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mix_paragraph_matches_scalar_oracle() {
        let p = rand_params(2, 9);
        let q: [f64; 2] = [0.7, -1.1];
        let s: [[f64; 2]; 2] = [[0.3, 0.9], [-1.2, 0.4]];
        // α by hand
        let z0 = q[0] * s[0][0] + q[1] * s[0][1];
        let z1 = q[0] * s[1][0] + q[1] * s[1][1];
        let a0 = 1.0 / (1.0 + (z1 - z0).exp());
        let a = [a0, 1.0 - a0];
        let w = |r: usize, c: usize| p.w_q.get(r, c);
        let mut k = [[0.0; 2]; 2];
        for j in 0..2 {
            for c in 0..2 {
                k[j][c] = w(0, c) * a[j] * q[0] + w(1, c) * a[j] * q[1] + w(2, c) * s[j][0] + w(3, c) * s[j][1];
            }
        }
        let g0 = p.v[0] * k[0][0] + p.v[1] * k[0][1];
        let g1 = p.v[0] * k[1][0] + p.v[1] * k[1][1];
        let b0 = 1.0 / (1.0 + (g1 - g0).exp());
        let b = [b0, 1.0 - b0];
        let qt = [b[0] * k[0][0] + b[1] * k[1][0], b[0] * k[0][1] + b[1] * k[1][1]];

        let mix = mix_paragraph(&q, &[s[0].to_vec(), s[1].to_vec()], &p).unwrap();
        for c in 0..2 {
            assert!((mix.q_tilde[c] - qt[c]).abs() < 1e-12);
            assert!((mix.alpha[c] - a[c]).abs() < 1e-12);
            assert!((mix.beta[c] - b[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn update_examples() {
        let st = QueryState::new(vec![vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap();
        let st0 = update_query(st.clone(), &[0.0, 0.0]).unwrap();
        assert_eq!(st0.vectors()[1], vec![1.0, 2.0]);
        let st1 = update_query(st, &[0.5, -1.0]).unwrap();
        assert_eq!(st1.vectors()[1], vec![1.5, 1.0]);
        assert_eq!(st1.current_hop(), 1);
        assert!(matches!(update_query(st1, &[0.0, 0.0]), Err(Error::State(_))));
    }

    #[test]
    fn two_updates_chain_through_updated_query() {
        let p = rand_params(2, 4);
        let q = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![-1.0, 2.0]];
        let s1 = [0.3, -0.7];
        let s2 = [1.1, 0.2];
        let st = QueryState::new(q.clone()).unwrap();
        let (m0, _) = mix_sentence(&q[0], &s1, &p).unwrap();
        let st = update_query(st, &m0).unwrap();
        let (m1, _) = mix_sentence(st.current(), &s2, &p).unwrap();
        let st = update_query(st, &m1).unwrap();

        // unrolled oracle
        let q1: Vec<f64> = (0..2).map(|c| q[1][c] + m0[c]).collect();
        let mut m1_oracle = [0.0; 2];
        for c in 0..2 {
            m1_oracle[c] = p.w_q.get(0, c) * q1[0] + p.w_q.get(1, c) * q1[1] + p.w_q.get(2, c) * s2[0] + p.w_q.get(3, c) * s2[1];
        }
        for c in 0..2 {
            assert!((st.vectors()[2][c] - (q[2][c] + m1_oracle[c])).abs() < 1e-12);
        }
    }

    fn basis(dim: usize, k: usize) -> Vec<f32> {
        (0..dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn single_hop_orthonormal_retrieval() {
        let idx = CombinedIndex::from_vectors(
            "d",
            6,
            Regime::Agnostic,
            vec![
                ParagraphVectors { paragraph: Some(basis(6, 0)), sentences: vec![basis(6, 1), basis(6, 2)] },
                ParagraphVectors { paragraph: Some(basis(6, 3)), sentences: vec![basis(6, 4), basis(6, 5)] },
            ],
        )
        .unwrap();
        let st = QueryState::new(vec![widen(idx.vector(3))]).unwrap();
        let trace = run_hops(st, &idx, &rand_params(6, 0), &HopOptions::unmasked(1)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.records[0].retrieved, 3);

        let st = QueryState::new(vec![widen(idx.vector(4))]).unwrap();
        let trace = run_hops(st, &idx, &rand_params(6, 0), &HopOptions::sentence_only(1)).unwrap();
        assert_eq!(trace.records[0].retrieved, 4);
        assert_eq!(trace.final_sentence, Some((1, 0)));
    }

    #[test]
    fn singleton_paragraph_hop_updates_like_a_sentence() {
        let dim = 4;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r = || (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<f32>>();
        let target = r();
        let idx = CombinedIndex::from_vectors(
            "d",
            dim,
            Regime::Agnostic,
            vec![
                ParagraphVectors { paragraph: None, sentences: vec![target.clone()] },
                ParagraphVectors { paragraph: None, sentences: vec![r(), r()] },
            ],
        )
        .unwrap();
        let params = rand_params(dim, 8);
        let q0: Vec<f64> = widen(&target).iter().map(|x| x * 10.0).collect();
        let q1 = vec![0.1, 0.2, -0.3, 0.4];
        let st = QueryState::new(vec![q0.clone(), q1.clone()]).unwrap();
        let trace = run_hops(st, &idx, &params, &HopOptions::extractive(2)).unwrap();
        assert_eq!(trace.records[0].retrieved, 0);
        let (mixed, _) = mix_sentence(&q0, &widen(&target), &params).unwrap();
        for c in 0..dim {
            assert!((trace.records[1].query[c] - (q1[c] + mixed[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn no_update_leaves_next_query_alone() {
        let idx = CombinedIndex::from_vectors(
            "d",
            2,
            Regime::Agnostic,
            vec![ParagraphVectors { paragraph: None, sentences: vec![vec![1.0, 0.0], vec![0.0, 1.0]] }],
        )
        .unwrap();
        let st = QueryState::new(vec![vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let trace = run_hops(st, &idx, &rand_params(2, 1), &HopOptions::unmasked(2).without_update()).unwrap();
        assert_eq!(trace.records[1].query, vec![0.0, 3.0]);
    }

    #[test]
    fn mask_count_must_match() {
        let idx = CombinedIndex::from_vectors(
            "d",
            2,
            Regime::Agnostic,
            vec![ParagraphVectors { paragraph: None, sentences: vec![vec![1.0, 0.0]] }],
        )
        .unwrap();
        let st = QueryState::new(vec![vec![1.0, 0.0]]).unwrap();
        assert!(run_hops(st, &idx, &rand_params(2, 1), &HopOptions::unmasked(2)).is_err());
    }

    #[test]
    fn trace_lines_serialize() {
        let idx = CombinedIndex::from_vectors(
            "d",
            2,
            Regime::Agnostic,
            vec![ParagraphVectors { paragraph: None, sentences: vec![vec![1.0, 0.0], vec![0.0, 1.0]] }],
        )
        .unwrap();
        let st = QueryState::new(vec![vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let trace = run_hops(st, &idx, &rand_params(2, 1), &HopOptions::extractive(2)).unwrap();
        let line = serde_json::to_value(&trace.to_lines(None)[0]).unwrap();
        assert_eq!(line["retrieved"]["kind"], "paragraph");
        assert_eq!(line["alpha"].as_array().unwrap().len(), 2);
        assert!(line.get("query_id").is_none());
    }
}
