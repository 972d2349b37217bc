//! Per-hop retrieval loss over softmaxed entry scores.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::index::{score_all, CombinedIndex, EntryKind};
use crate::linalg::log_sum_exp;

/// How several positives at one hop combine into a loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiPositiveRule {
    /// `−log Σ_pos p`: maximize total probability mass on the positives.
    #[default]
    #[serde(rename = "marginal")]
    MarginalLog,
    /// `−Σ_pos log p`.
    #[serde(rename = "sumce")]
    SumCE,
}

impl MultiPositiveRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "marginal" | "marginallog" | "marginal_log" => Some(Self::MarginalLog),
            "sumce" | "sum_ce" => Some(Self::SumCE),
            _ => None,
        }
    }
}

/// Loss for hop `t` with query `q` against entries passing `mask`.
pub fn step_loss(
    q: &[f64],
    index: &CombinedIndex,
    positives: &[usize],
    mask: Option<EntryKind>,
    rule: MultiPositiveRule,
) -> Result<f64> {
    for &p in positives {
        if p >= index.len() {
            return Err(validation(format!("label entry {p} out of range for {} entries", index.len())));
        }
    }
    let scores = score_all(q, index, mask)?;
    Ok(loss_and_grad(&scores, positives, rule)?.0)
}

/// Loss and `∂loss/∂score` for scores aligned with `scores`.
///
/// Positives that are not among the scored entries are ignored; at least one must remain.
pub fn loss_and_grad(scores: &[(usize, f64)], positives: &[usize], rule: MultiPositiveRule) -> Result<(f64, Vec<f64>)> {
    if positives.is_empty() {
        return Err(validation("a supervised hop needs at least one positive"));
    }
    let is_pos: Vec<bool> = scores.iter().map(|(e, _)| positives.contains(e)).collect();
    let n_pos = is_pos.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(validation("no positive entry passes this hop's mask"));
    }
    let lse = log_sum_exp(scores.iter().map(|s| s.1));
    let probs: Vec<f64> = scores.iter().map(|s| (s.1 - lse).exp()).collect();
    match rule {
        MultiPositiveRule::MarginalLog => {
            let lse_pos = log_sum_exp(scores.iter().zip(&is_pos).filter(|(_, &p)| p).map(|(s, _)| s.1));
            let loss = (lse - lse_pos).max(0.0);
            let grad = scores
                .iter()
                .zip(&probs)
                .zip(&is_pos)
                .map(|(((_, s), p), &pos)| if pos { p - (s - lse_pos).exp() } else { *p })
                .collect();
            Ok((loss, grad))
        }
        MultiPositiveRule::SumCE => {
            let loss = scores.iter().zip(&is_pos).filter(|(_, &p)| p).map(|(s, _)| lse - s.1).sum::<f64>();
            let k = n_pos as f64;
            let grad = probs.iter().zip(&is_pos).map(|(p, &pos)| k * p - if pos { 1.0 } else { 0.0 }).collect();
            Ok((loss, grad))
        }
    }
}
