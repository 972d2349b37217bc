//! Final evidence ranking and conversational answer classification.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::hop::{MixParams, RetrievalTrace, NUM_CLASSES};
use crate::index::{score_all, CombinedIndex, EntryKind};
use crate::linalg::{check_dim, dot, log_sum_exp, softmax, weighted_sum, Vector};
use crate::text::normalize_spacing;

/// Weights of the paragraph score (`lambda1`) and the sparse overlap term (`lambda2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl FusionWeights {
    pub const HYBRIDQA: Self = Self { lambda1: 1.5, lambda2: 3.0 };
    pub const QASPER: Self = Self { lambda1: 0.5, lambda2: 0.0 };
    pub const DENSE_ONLY: Self = Self { lambda1: 0.0, lambda2: 0.0 };

    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !lambda1.is_finite() || !lambda2.is_finite() {
            return Err(validation("fusion weights must be finite"));
        }
        Ok(Self { lambda1, lambda2 })
    }
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self::HYBRIDQA
    }
}

/// A fused score for one sentence entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedSentence {
    pub entry: usize,
    pub para: usize,
    pub sent: usize,
    pub score: f64,
}

/// Fused score for every sentence, in entry order:
/// `q1·s + lambda1·q0·p + lambda2·lcs_len(question, paragraph text)`.
///
/// The paragraph term is shared by all sentences of a paragraph. Deferred paragraph
/// vectors are realized against `q0`.
pub fn fused_sentence_scores(
    q0: &[f64],
    q1: &[f64],
    index: &CombinedIndex,
    weights: FusionWeights,
    question_text: &str,
    paragraph_texts: &[String],
) -> Result<Vec<RankedSentence>> {
    check_dim("first query", index.dim(), q0.len())?;
    check_dim("second query", index.dim(), q1.len())?;
    if paragraph_texts.len() != index.n_paragraphs() {
        return Err(validation(format!(
            "{} paragraph texts for {} paragraphs",
            paragraph_texts.len(),
            index.n_paragraphs()
        )));
    }
    let para_scores = score_all(q0, index, Some(EntryKind::Paragraph))?;
    let sent_scores = score_all(q1, index, Some(EntryKind::Sentence))?;
    let question = normalize_spacing(question_text);
    let shared: Vec<f64> = para_scores
        .iter()
        .zip(paragraph_texts)
        .map(|(&(_, dense), text)| {
            let sparse = if weights.lambda2 == 0.0 { 0 } else { lcs_normalized(&question, &normalize_spacing(text)) };
            weights.lambda1 * dense + weights.lambda2 * sparse as f64
        })
        .collect();
    Ok(sent_scores
        .into_iter()
        .map(|(entry, dense)| {
            let e = index.entry(entry);
            RankedSentence {
                entry,
                para: e.para_idx,
                sent: e.sent_idx.expect("sentence entry"),
                score: dense + shared[e.para_idx],
            }
        })
        .collect())
}

/// Sorts by descending score; ties keep entry order.
pub fn rank(mut scored: Vec<RankedSentence>) -> Vec<RankedSentence> {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.entry.cmp(&b.entry)));
    scored
}

/// Length in characters of the longest common contiguous substring, after
/// lowercasing and collapsing whitespace.
pub fn lcs_len(a: &str, b: &str) -> usize {
    lcs_normalized(&normalize_spacing(a), &normalize_spacing(b))
}

fn lcs_normalized(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for &ca in &a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Answer classes, in logit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Yes,
    No,
    Irrelevant,
    Inquire,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [Self::Yes, Self::No, Self::Irrelevant, Self::Inquire];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| validation(format!("class index {i} out of range")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Yes => "yes",
            Self::No => "no",
            Self::Irrelevant => "irrelevant",
            Self::Inquire => "inquire",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Label(format!("unknown class {s:?}")))
    }
}

/// Logits over the four answer classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassLogits {
    pub m: [f64; NUM_CLASSES],
}

impl ClassLogits {
    pub fn probs(&self) -> [f64; NUM_CLASSES] {
        let p = softmax(&self.m);
        [p[0], p[1], p[2], p[3]]
    }

    /// Highest logit; ties go to the earlier class.
    pub fn predicted(&self) -> ClassLabel {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.m[i] > self.m[best] {
                best = i;
            }
        }
        ClassLabel::ALL[best]
    }
}

/// Pooling weights and the pooled vector behind a set of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub gamma: Vec<f64>,
    pub k_tilde: Vector,
    pub logits: ClassLogits,
}

/// Pools the mixed vectors of every hop with `γ = softmax(u·k)` and maps the pooled
/// vector through `W_c`.
pub fn classify_conversation(trace: &RetrievalTrace, params: &MixParams) -> Result<Classification> {
    let ks: Vec<&Vector> = trace.records.iter().flat_map(|r| &r.k_vectors).collect();
    classify_vectors(&ks, params)
}

pub(crate) fn classify_vectors(ks: &[&Vector], params: &MixParams) -> Result<Classification> {
    if ks.is_empty() {
        return Err(validation("classification needs at least one mixed vector"));
    }
    for k in ks {
        check_dim("mixed vector", params.dim, k.len())?;
    }
    let gate: Vec<f64> = ks.iter().map(|k| dot(&params.u, k)).collect();
    let gamma = softmax(&gate);
    let owned: Vec<Vector> = ks.iter().map(|k| (*k).clone()).collect();
    let k_tilde = weighted_sum(&gamma, &owned);
    let m = params.w_c.transpose_mul(&k_tilde);
    Ok(Classification { gamma, k_tilde, logits: ClassLogits { m: [m[0], m[1], m[2], m[3]] } })
}

/// Softmax cross entropy of the logits against class index `gold`.
pub fn classification_loss(logits: &ClassLogits, gold: usize) -> Result<f64> {
    if gold >= NUM_CLASSES {
        return Err(validation(format!("class index {gold} out of range")));
    }
    Ok(log_sum_exp(logits.m) - logits.m[gold])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hop::{run_hops, HopOptions, QueryState};
    use crate::index::{ParagraphVectors, Regime};
    use crate::linalg::Matrix;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_len("abc", "zabcy"), 3);
        assert_eq!(lcs_len("abc", "xyz"), 0);
        assert_eq!(lcs_len("abcxy", "xyabc"), 3);
        assert_eq!(lcs_len("Hello   World", "hello world!"), 11);
        assert_eq!(lcs_len("", "abc"), 0);
    }

    #[test]
    fn class_loss_examples() {
        let uniform = ClassLogits { m: [0.0; 4] };
        assert!(close(classification_loss(&uniform, 2).unwrap(), 4f64.ln(), 1e-12));
        let l = classification_loss(&ClassLogits { m: [1.0, 0.0, 0.0, 0.0] }, 0).unwrap();
        let e = std::f64::consts::E;
        assert!(close(l, -(e / (e + 3.0)).ln(), 1e-12));
        assert!(close(l, 0.7436684, 1e-6));
        let big = classification_loss(&ClassLogits { m: [800.0, 0.0, 0.0, 0.0] }, 0).unwrap();
        assert!(big >= 0.0 && big < 1e-300);
        assert!(matches!(classification_loss(&uniform, 4), Err(Error::Validation(_))));
    }

    #[test]
    fn class_labels_round_trip() {
        for (i, c) in ClassLabel::ALL.into_iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ClassLabel::parse(c.as_str()).unwrap(), c);
            assert_eq!(serde_json::to_value(c).unwrap(), c.as_str());
        }
        assert!(ClassLabel::parse("maybe").is_err());
    }

    fn params_with_wc(dim: usize) -> MixParams {
        let mut p = MixParams::random(dim, 3);
        p.w_c = Matrix::from_rows(&(0..dim).map(|r| (0..4).map(|c| (r * 4 + c) as f64 * 0.1 - 0.5).collect()).collect::<Vec<_>>()).unwrap();
        p
    }

    #[test]
    fn singleton_and_identical_pooling() {
        let p = params_with_wc(3);
        let k = vec![0.5, -1.0, 2.0];
        let c = classify_vectors(&[&k], &p).unwrap();
        assert_eq!(c.gamma, vec![1.0]);
        let m = p.w_c.transpose_mul(&k);
        assert_eq!(c.logits.m.to_vec(), m);

        let c = classify_vectors(&[&k, &k, &k], &p).unwrap();
        for (a, b) in c.k_tilde.iter().zip(&k) {
            assert!(close(*a, *b, 1e-12));
        }
        assert!(classify_vectors(&[], &p).is_err());
    }

    #[test]
    fn classify_matches_scalar_oracle() {
        let p = params_with_wc(3);
        let ks = [vec![0.1, 0.2, 0.3], vec![-0.5, 0.4, 1.0], vec![2.0, -1.0, 0.0], vec![0.3, 0.3, -0.7]];
        let refs: Vec<&Vector> = ks.iter().collect();
        let c = classify_vectors(&refs, &p).unwrap();
        let a: Vec<f64> = ks.iter().map(|k| p.u[0] * k[0] + p.u[1] * k[1] + p.u[2] * k[2]).collect();
        let z: f64 = a.iter().map(|x| x.exp()).sum();
        let g: Vec<f64> = a.iter().map(|x| x.exp() / z).collect();
        let kt: Vec<f64> = (0..3).map(|d| (0..4).map(|j| g[j] * ks[j][d]).sum()).collect();
        for j in 0..4 {
            assert!(close(c.gamma[j], g[j], 1e-12));
        }
        for cl in 0..4 {
            let m: f64 = (0..3).map(|d| p.w_c.get(d, cl) * kt[d]).sum();
            assert!(close(c.logits.m[cl], m, 1e-12));
        }
    }

    #[test]
    fn classify_uses_all_hops() {
        let idx = CombinedIndex::from_vectors(
            "d",
            3,
            Regime::Agnostic,
            vec![ParagraphVectors { paragraph: None, sentences: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]] }],
        )
        .unwrap();
        let p = params_with_wc(3);
        let st = QueryState::new(vec![vec![1.0, 0.5, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let trace = run_hops(st, &idx, &p, &HopOptions::extractive(2)).unwrap();
        let c = classify_conversation(&trace, &p).unwrap();
        assert_eq!(c.gamma.len(), 3);
    }

    fn two_paragraph_index() -> CombinedIndex {
        CombinedIndex::from_vectors(
            "d",
            2,
            Regime::Agnostic,
            vec![
                ParagraphVectors { paragraph: Some(vec![1.0, 0.0]), sentences: vec![vec![0.5, 0.5], vec![0.0, 1.0]] },
                ParagraphVectors { paragraph: Some(vec![0.0, 1.0]), sentences: vec![vec![1.0, 0.25]] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn fusion_matches_termwise_oracle() {
        let idx = two_paragraph_index();
        let q0 = [0.2, 0.8];
        let q1 = [1.0, -0.5];
        let texts = vec!["Rudolf Svensson won gold".to_string(), "Other text".to_string()];
        let question = "Who won gold?";
        let w = FusionWeights::HYBRIDQA;
        let got = fused_sentence_scores(&q0, &q1, &idx, w, question, &texts).unwrap();
        let l0 = lcs_len(question, &texts[0]) as f64;
        let l1 = lcs_len(question, &texts[1]) as f64;
        assert_eq!(l0, 9.0); // " won gold"
        let expected = [
            (1.0 * 0.5 - 0.5 * 0.5) + 1.5 * 0.2 + 3.0 * l0,
            (-0.5) + 1.5 * 0.2 + 3.0 * l0,
            (1.0 - 0.5 * 0.25) + 1.5 * 0.8 + 3.0 * l1,
        ];
        assert_eq!(got.len(), 3);
        for (g, e) in got.iter().zip(expected) {
            assert!(close(g.score, e, 1e-9), "{} vs {e}", g.score);
        }
        // shared terms cancel inside one paragraph
        let dense = score_all(&q1, &idx, Some(EntryKind::Sentence)).unwrap();
        assert!(close(got[0].score - got[1].score, dense[0].1 - dense[1].1, 1e-12));
    }

    #[test]
    fn fusion_rejects_misaligned_texts() {
        let idx = two_paragraph_index();
        let r = fused_sentence_scores(&[0.0, 0.0], &[0.0, 0.0], &idx, FusionWeights::HYBRIDQA, "q", &["a".into()]);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn weights_must_be_finite() {
        assert!(FusionWeights::new(f64::NAN, 0.0).is_err());
        assert_eq!(FusionWeights::new(0.5, 0.0).unwrap(), FusionWeights::QASPER);
    }
}
