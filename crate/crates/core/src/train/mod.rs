//! End-to-end training of the mixing parameters from per-hop labels.

mod checkpoint;
mod dataset;
mod labels;
mod loss;
mod tape;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use dataset::{parse_train_line, read_train_records, write_train_records, TrainRecord};
pub use labels::{
    bleu_no_bp, build_distant_labels_conversational, build_distant_labels_extractive, edit_distance, levenshtein,
    EntryRef, LabelOutcome, StepLabels, BLEU_KEEP_THRESHOLD,
};
pub use loss::{loss_and_grad, step_loss, MultiPositiveRule};
pub use tape::{backward, forward, Forward, GradReport, GradTargets, Instance};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::heads::ClassLabel;
use crate::hop::{HopOptions, MixParams};
use crate::index::CombinedIndex;
use crate::linalg::{check_dim, Vector};

/// Which tensors are updated by [`fit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    pub mix_params: bool,
    pub query_vecs: bool,
    pub sentence_vecs: bool,
}

impl Default for Trainable {
    fn default() -> Self {
        Self { mix_params: true, query_vecs: false, sentence_vecs: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Must be finite and non-negative; zero leaves every tensor untouched.
    pub learning_rate: f64,
    /// Number of passes over the training set.
    pub steps: usize,
    /// Drives minibatch shuffling.
    pub seed: u64,
    pub multi_positive_rule: MultiPositiveRule,
    pub trainable: Trainable,
    /// Heavy-ball momentum on the mixing parameters; 0 is plain gradient descent.
    pub momentum: f64,
    /// Examples per update; `None` uses the full set.
    pub batch_size: Option<usize>,
    pub hop_options: HopOptions,
}

impl TrainConfig {
    pub fn new(hop_options: HopOptions) -> Self {
        Self {
            learning_rate: 0.1,
            steps: 100,
            seed: 0,
            multi_positive_rule: MultiPositiveRule::default(),
            trainable: Trainable::default(),
            momentum: 0.0,
            batch_size: None,
            hop_options,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(validation(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(validation(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == Some(0) {
            return Err(validation("batch size must be positive"));
        }
        Ok(())
    }
}

/// A labeled query against one of the set's indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub query_id: String,
    /// Position of the example's document in [`TrainSet::indices`].
    pub index: usize,
    pub queries: Vec<Vector>,
    /// Positive entry indices per hop.
    pub positives: Vec<Vec<usize>>,
    pub class: Option<ClassLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub indices: Vec<CombinedIndex>,
    pub examples: Vec<TrainExample>,
}

impl TrainSet {
    pub fn validate(&self) -> Result<()> {
        for ex in &self.examples {
            let idx = self
                .indices
                .get(ex.index)
                .ok_or_else(|| validation(format!("example {} points at missing index {}", ex.query_id, ex.index)))?;
            for q in &ex.queries {
                check_dim("query vector", idx.dim(), q.len())?;
            }
            for &p in ex.positives.iter().flatten() {
                if p >= idx.len() {
                    return Err(validation(format!("example {}: label entry {p} out of range", ex.query_id)));
                }
            }
        }
        Ok(())
    }

    pub fn instance(&self, i: usize) -> Instance<'_> {
        let ex = &self.examples[i];
        Instance { index: &self.indices[ex.index], queries: &ex.queries, positives: &ex.positives, class: ex.class }
    }
}

/// Total loss and its gradients for one instance.
pub fn loss_and_gradients(
    inst: &Instance<'_>,
    params: &MixParams,
    opts: &HopOptions,
    rule: MultiPositiveRule,
    targets: GradTargets,
) -> Result<(f64, GradReport)> {
    let fwd = forward(inst, params, opts, rule, true)?;
    let grads = backward(&fwd, inst, params, opts, targets)?;
    Ok((fwd.loss, grads))
}

/// Mean total loss over the set, without gradients.
pub fn mean_loss(set: &TrainSet, params: &MixParams, opts: &HopOptions, rule: MultiPositiveRule) -> Result<f64> {
    let losses: Vec<f64> = (0..set.examples.len())
        .into_par_iter()
        .map(|i| forward(&set.instance(i), params, opts, rule, false).map(|f| f.loss))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub params: MixParams,
    /// Mean loss of each pass, measured during that pass.
    pub epoch_losses: Vec<f64>,
}

/// Gradient descent over the summed per-hop and classification losses.
///
/// Per-example gradients are computed in parallel and reduced in example order,
/// so results do not depend on thread count. Trainable query and sentence
/// vectors are updated in place inside `set`.
pub fn fit(set: &mut TrainSet, init: MixParams, config: &TrainConfig) -> Result<FitReport> {
    config.validate()?;
    init.validate()?;
    set.validate()?;
    if set.examples.is_empty() {
        return Err(validation("training set is empty"));
    }
    let n = set.examples.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let targets = GradTargets { query_vecs: config.trainable.query_vecs, sentence_vecs: config.trainable.sentence_vecs };
    let lr = config.learning_rate;
    let mut params = init;
    let mut velocity = vec![0.0; params.n_params()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(config.steps);
    let mut step = 0;

    for _ in 0..config.steps {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_total = 0.0;
        for chunk in order.chunks(batch) {
            let results: Vec<(f64, GradReport)> = {
                let set_ref: &TrainSet = set;
                let params_ref = &params;
                chunk
                    .par_iter()
                    .map(|&i| {
                        loss_and_gradients(&set_ref.instance(i), params_ref, &config.hop_options, config.multi_positive_rule, targets)
                    })
                    .collect::<Result<_>>()?
            };
            let scale = 1.0 / chunk.len() as f64;
            let mut total = GradReport::zeros(params.dim);
            for (&i, (loss, g)) in chunk.iter().zip(&results) {
                if !loss.is_finite() || !g.is_finite() {
                    return Err(Error::Training {
                        step,
                        detail: format!("example {} produced loss {loss} or a non-finite gradient", set.examples[i].query_id),
                    });
                }
                epoch_total += loss;
                total.accumulate(g);
            }
            if lr > 0.0 {
                if config.trainable.mix_params {
                    let mut flat = params.to_flat();
                    for ((p, v), g) in flat.iter_mut().zip(&mut velocity).zip(total.to_flat()) {
                        *v = config.momentum * *v + g * scale;
                        *p -= lr * *v;
                    }
                    params = MixParams::from_flat(params.dim, &flat)?;
                }
                apply_input_updates(set, chunk, &results, lr * scale);
                if !params.is_finite() {
                    return Err(Error::Training { step, detail: "parameters became non-finite".into() });
                }
            }
            step += 1;
        }
        epoch_losses.push(epoch_total / n as f64);
    }
    Ok(FitReport { params, epoch_losses })
}

fn apply_input_updates(set: &mut TrainSet, chunk: &[usize], results: &[(f64, GradReport)], step: f64) {
    for (&i, (_, g)) in chunk.iter().zip(results) {
        if let Some(gq) = &g.queries {
            for (q, d) in set.examples[i].queries.iter_mut().zip(gq) {
                for (x, dx) in q.iter_mut().zip(d) {
                    *x -= step * dx;
                }
            }
        }
        if let Some(ge) = &g.entries {
            let index = &mut set.indices[set.examples[i].index];
            let dim = index.dim();
            for e in 0..index.len() {
                let row = &ge[e * dim..(e + 1) * dim];
                if row.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for (x, dx) in index.vector_mut(e).iter_mut().zip(row) {
                    *x = (*x as f64 - step * dx) as f32;
                }
            }
        }
    }
}

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Whether some perturbation changed which entries were retrieved, making the
    /// loss locally non-smooth at this instance.
    pub path_changed: bool,
    pub report: GradReport,
}

/// Denominator floor of the relative error, so exact zeros compare sensibly.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks gradients of every mixing parameter with central differences of step `h`.
pub fn gradcheck(inst: &Instance<'_>, params: &MixParams, opts: &HopOptions, rule: MultiPositiveRule, h: f64) -> Result<GradCheck> {
    let fwd = forward(inst, params, opts, rule, true)?;
    let base_path = fwd.path();
    let mut report = backward(&fwd, inst, params, opts, GradTargets::default())?;
    let analytic = report.to_flat();
    let flat = params.to_flat();
    let mut max_rel_error: f64 = 0.0;
    let mut path_changed = false;
    for i in 0..flat.len() {
        let eval = |delta: f64| -> Result<(f64, Vec<usize>)> {
            let mut p = flat.clone();
            p[i] += delta;
            let f = forward(inst, &MixParams::from_flat(params.dim, &p)?, opts, rule, false)?;
            Ok((f.loss, f.path()))
        };
        let (up, path_up) = eval(h)?;
        let (dn, path_dn) = eval(-h)?;
        path_changed |= path_up != base_path || path_dn != base_path;
        let numeric = (up - dn) / (2.0 * h);
        max_rel_error = max_rel_error.max(relative_error(analytic[i], numeric));
    }
    report.fd_max_rel_error = Some(max_rel_error);
    Ok(GradCheck { max_rel_error, path_changed, report })
}
