//! Taped forward pass over all hops and its hand-written reverse pass.
//!
//! Retrieval is a hard argmax: gradients flow through scores, mixing and the
//! residual update, never through which entry was selected.

use crate::error::{validation, Error, Result};
use crate::heads::{classification_loss, classify_vectors, ClassLabel, Classification};
use crate::hop::{run_hops, HopOptions, MixParams, QueryState, RetrievalTrace};
use crate::index::{CombinedIndex, EntryKind};
use crate::linalg::{axpy, dot, dot_mixed, softmax, softmax_backward, widen, Matrix, Vector};

use super::loss::{loss_and_grad, MultiPositiveRule};

/// Which inputs receive gradients besides the mixing parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GradTargets {
    pub query_vecs: bool,
    pub sentence_vecs: bool,
}

/// One training instance with labels already resolved to entry indices.
#[derive(Debug, Clone, Copy)]
pub struct Instance<'a> {
    pub index: &'a CombinedIndex,
    pub queries: &'a [Vector],
    /// Positive entry indices per hop; an empty set leaves that hop unsupervised.
    pub positives: &'a [Vec<usize>],
    pub class: Option<ClassLabel>,
}

struct Tape {
    score_grads: Vec<Option<Vec<f64>>>,
    class_grad: Option<[f64; 4]>,
}

/// Result of a forward pass.
pub struct Forward {
    pub loss: f64,
    pub hop_losses: Vec<Option<f64>>,
    pub class_loss: Option<f64>,
    pub trace: RetrievalTrace,
    pub classification: Option<Classification>,
    tape: Option<Tape>,
}

impl Forward {
    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// Entry retrieved at each hop.
    pub fn path(&self) -> Vec<usize> {
        self.trace.records.iter().map(|r| r.retrieved).collect()
    }
}

/// Gradients of the total loss; shapes mirror [`MixParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub w_q: Matrix,
    pub v: Vector,
    pub u: Vector,
    pub w_c: Matrix,
    /// Gradient per initial query vector, when requested.
    pub queries: Option<Vec<Vector>>,
    /// Gradient per stored sentence vector (`n_entries × dim`, zero rows for paragraphs).
    pub entries: Option<Vec<f64>>,
    /// Largest relative error against central differences, when checked.
    pub fd_max_rel_error: Option<f64>,
}

impl GradReport {
    pub fn zeros(dim: usize) -> Self {
        let p = MixParams::zeros(dim);
        Self { w_q: p.w_q, v: p.v, u: p.u, w_c: p.w_c, queries: None, entries: None, fd_max_rel_error: None }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.w_q.data.clone();
        out.extend_from_slice(&self.v);
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.w_c.data);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    /// `self += other`, including optional parts present in both.
    pub fn accumulate(&mut self, other: &GradReport) {
        axpy(1.0, &other.w_q.data, &mut self.w_q.data);
        axpy(1.0, &other.v, &mut self.v);
        axpy(1.0, &other.u, &mut self.u);
        axpy(1.0, &other.w_c.data, &mut self.w_c.data);
    }
}

/// Runs all hops, computing every supervised hop loss and the classification loss.
pub fn forward(
    inst: &Instance<'_>,
    params: &MixParams,
    opts: &HopOptions,
    rule: MultiPositiveRule,
    taped: bool,
) -> Result<Forward> {
    if inst.positives.len() > opts.hops() {
        return Err(validation(format!("labels cover {} hops but only {} run", inst.positives.len(), opts.hops())));
    }
    for &p in inst.positives.iter().flatten() {
        if p >= inst.index.len() {
            return Err(validation(format!("label entry {p} out of range for {} entries", inst.index.len())));
        }
    }
    let state = QueryState::new(inst.queries.to_vec())?;
    let trace = run_hops(state, inst.index, params, opts)?;

    let mut loss = 0.0;
    let mut hop_losses = Vec::with_capacity(trace.records.len());
    let mut score_grads = Vec::with_capacity(trace.records.len());
    for (t, rec) in trace.records.iter().enumerate() {
        match inst.positives.get(t).filter(|p| !p.is_empty()) {
            Some(pos) => {
                let (l, g) = loss_and_grad(&rec.scores, pos, rule)?;
                loss += l;
                hop_losses.push(Some(l));
                score_grads.push(Some(g));
            }
            None => {
                hop_losses.push(None);
                score_grads.push(None);
            }
        }
    }

    let (classification, class_loss, class_grad) = match inst.class {
        Some(gold) => {
            let ks: Vec<&Vector> = trace.records.iter().flat_map(|r| &r.k_vectors).collect();
            let c = classify_vectors(&ks, params)?;
            let l = classification_loss(&c.logits, gold.index())?;
            let probs = c.logits.probs();
            let mut g = probs;
            g[gold.index()] -= 1.0;
            loss += l;
            (Some(c), Some(l), Some(g))
        }
        None => (None, None, None),
    };

    let tape = taped.then_some(Tape { score_grads, class_grad });
    Ok(Forward { loss, hop_losses, class_loss, trace, classification, tape })
}

/// Reverse pass over a taped forward.
pub fn backward(fwd: &Forward, inst: &Instance<'_>, params: &MixParams, opts: &HopOptions, targets: GradTargets) -> Result<GradReport> {
    let tape = fwd.tape.as_ref().ok_or_else(|| Error::State("backward called without a taped forward pass".into()))?;
    let dim = params.dim;
    let index = inst.index;
    let records = &fwd.trace.records;
    let n_hops = records.len();
    let mut grads = GradReport::zeros(dim);
    let mut g_entries = targets.sentence_vecs.then(|| vec![0.0; index.len() * dim]);

    // Classification head: gradients into u, W_c and every mixed vector.
    let mut g_ks: Vec<Vec<Vector>> = records.iter().map(|r| vec![vec![0.0; dim]; r.k_vectors.len()]).collect();
    if let (Some(g_m), Some(cls)) = (tape.class_grad, fwd.classification.as_ref()) {
        for r in 0..dim {
            for c in 0..4 {
                grads.w_c.data[r * 4 + c] += cls.k_tilde[r] * g_m[c];
            }
        }
        let g_kt: Vector = (0..dim).map(|r| (0..4).map(|c| params.w_c.get(r, c) * g_m[c]).sum()).collect();
        let flat: Vec<(usize, usize)> =
            records.iter().enumerate().flat_map(|(t, r)| (0..r.k_vectors.len()).map(move |j| (t, j))).collect();
        let g_gamma: Vec<f64> = flat.iter().map(|&(t, j)| dot(&g_kt, &records[t].k_vectors[j])).collect();
        let g_gate = softmax_backward(&cls.gamma, &g_gamma);
        for (n, &(t, j)) in flat.iter().enumerate() {
            let k = &records[t].k_vectors[j];
            axpy(g_gate[n], k, &mut grads.u);
            axpy(cls.gamma[n], &g_kt, &mut g_ks[t][j]);
            axpy(g_gate[n], &params.u, &mut g_ks[t][j]);
        }
    }

    let mut g_query_total: Vec<Vector> = vec![vec![0.0; dim]; n_hops];
    for t in (0..n_hops).rev() {
        let rec = &records[t];
        let q = &rec.query;
        let mut g_q = vec![0.0; dim];

        if let Some(g_scores) = &tape.score_grads[t] {
            for (&(e, _), &gf) in rec.scores.iter().zip(g_scores) {
                if gf == 0.0 {
                    continue;
                }
                if index.is_deferred(e) {
                    let para = index.entry(e).para_idx;
                    let span = index.paragraphs()[para].sentences.clone();
                    let z: Vec<f64> = span.clone().map(|s| dot_mixed(index.vector(s), q)).collect();
                    let alpha = softmax(&z);
                    let f: f64 = alpha.iter().zip(&z).map(|(a, z)| a * z).sum();
                    for ((s, a), zj) in span.zip(&alpha).zip(&z) {
                        let coef = gf * a * (1.0 + zj - f);
                        add_mixed(coef, index.vector(s), &mut g_q);
                        if let Some(ge) = g_entries.as_mut() {
                            axpy(coef, q, &mut ge[s * dim..(s + 1) * dim]);
                        }
                    }
                } else {
                    add_mixed(gf, index.vector(e), &mut g_q);
                    if let (Some(ge), EntryKind::Sentence) = (g_entries.as_mut(), index.entry(e).kind) {
                        axpy(gf, q, &mut ge[e * dim..(e + 1) * dim]);
                    }
                }
            }
        }

        let g_qtilde = if t + 1 < n_hops && opts.update { g_query_total[t + 1].clone() } else { vec![0.0; dim] };
        match rec.kind {
            EntryKind::Sentence => {
                let e = rec.retrieved;
                let s = widen(index.vector(e));
                let mut g_k = g_qtilde;
                axpy(1.0, &g_ks[t][0], &mut g_k);
                accumulate_projection(&mut grads.w_q, q, 1.0, &s, &g_k);
                let (gq_part, gs_part) = project_input_grad(params, &g_k);
                axpy(1.0, &gq_part, &mut g_q);
                if let Some(ge) = g_entries.as_mut() {
                    axpy(1.0, &gs_part, &mut ge[e * dim..(e + 1) * dim]);
                }
            }
            EntryKind::Paragraph => {
                let alpha = rec.alpha.as_ref().expect("paragraph hop records alpha");
                let beta = rec.beta.as_ref().expect("paragraph hop records beta");
                let ks = &rec.k_vectors;
                let g_beta: Vec<f64> = ks.iter().map(|k| dot(&g_qtilde, k)).collect();
                let g_gate = softmax_backward(beta, &g_beta);
                let mut g_alpha = vec![0.0; ks.len()];
                let sent_entries = &rec.sentences;
                for j in 0..ks.len() {
                    let mut g_k = g_ks[t][j].clone();
                    axpy(beta[j], &g_qtilde, &mut g_k);
                    axpy(g_gate[j], &params.v, &mut g_k);
                    axpy(g_gate[j], &ks[j], &mut grads.v);
                    let s = widen(index.vector(sent_entries[j]));
                    accumulate_projection(&mut grads.w_q, q, alpha[j], &s, &g_k);
                    let (g_aq, g_s) = project_input_grad(params, &g_k);
                    axpy(alpha[j], &g_aq, &mut g_q);
                    g_alpha[j] = dot(q, &g_aq);
                    if let Some(ge) = g_entries.as_mut() {
                        let e = sent_entries[j];
                        axpy(1.0, &g_s, &mut ge[e * dim..(e + 1) * dim]);
                    }
                }
                let g_z = softmax_backward(alpha, &g_alpha);
                for (j, &e) in sent_entries.iter().enumerate() {
                    add_mixed(g_z[j], index.vector(e), &mut g_q);
                    if let Some(ge) = g_entries.as_mut() {
                        axpy(g_z[j], q, &mut ge[e * dim..(e + 1) * dim]);
                    }
                }
            }
        }
        g_query_total[t] = g_q;
    }

    if targets.query_vecs {
        grads.queries = Some(g_query_total);
    }
    grads.entries = g_entries;
    Ok(grads)
}

fn add_mixed(a: f64, x: &[f32], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi as f64;
    }
}

/// `∂W_q += [a·q; s] ⊗ g_k`.
fn accumulate_projection(g_w: &mut Matrix, q: &[f64], a: f64, s: &[f64], g_k: &[f64]) {
    let dim = q.len();
    for (r, &x) in q.iter().enumerate() {
        let x = a * x;
        if x != 0.0 {
            axpy(x, g_k, &mut g_w.data[r * dim..(r + 1) * dim]);
        }
    }
    for (r, &x) in s.iter().enumerate() {
        if x != 0.0 {
            axpy(x, g_k, &mut g_w.data[(dim + r) * dim..(dim + r + 1) * dim]);
        }
    }
}

/// Gradient with respect to the two halves of the projection input.
fn project_input_grad(params: &MixParams, g_k: &[f64]) -> (Vector, Vector) {
    let d = params.dim;
    (params.w_q.mul_block(0, d, g_k), params.w_q.mul_block(d, d, g_k))
}
