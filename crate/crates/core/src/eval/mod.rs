//! Metrics, the synthetic benchmark and the throughput bench.

pub mod bench;
pub mod metrics;
pub mod synth;

pub use synth::{build_train_set, build_train_set_with};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hop::{run_hops, HopOptions, MixParams, QueryState, RetrievalTrace};
use crate::index::Regime;
use crate::train::{fit, EntryRef, MultiPositiveRule, TrainConfig, TrainSet, Trainable};

/// Runs every example of `set`, in parallel, returning traces in example order.
pub fn run_all(set: &TrainSet, params: &MixParams, opts: &HopOptions) -> Result<Vec<RetrievalTrace>> {
    set.examples
        .par_iter()
        .map(|ex| run_hops(QueryState::new(ex.queries.clone())?, &set.indices[ex.index], params, opts))
        .collect()
}

/// Hits@1 of the final hop's retrieved entry against the final hop's positives.
pub fn final_hop_hits(set: &TrainSet, params: &MixParams, opts: &HopOptions) -> Result<f64> {
    let traces = run_all(set, params, opts)?;
    let ids: Vec<String> = set.examples.iter().map(|e| e.query_id.clone()).collect();
    let mut top = Vec::with_capacity(traces.len());
    let mut gold = Vec::with_capacity(traces.len());
    for (ex, trace) in set.examples.iter().zip(&traces) {
        let idx = &set.indices[ex.index];
        let to_ref = |e: usize| {
            let ent = idx.entry(e);
            EntryRef { kind: ent.kind, para: ent.para_idx, sent: ent.sent_idx }
        };
        top.push(trace.final_sentence.map(|(p, s)| EntryRef::sentence(p, s)));
        gold.push(ex.positives.last().map(|p| p.iter().map(|&e| to_ref(e)).collect()).unwrap_or_default());
    }
    metrics::hits_at_1(&ids, &top, &ids, &gold)
}

/// Model variants compared on the synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Paragraph at hop 1, sentences afterwards, residual update on.
    Full,
    /// As `Full` without the residual query update.
    NoUpdate,
    /// Every hop retrieves sentences only.
    SentenceOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoUpdate, Variant::SentenceOnly];

    pub fn hop_options(self, hops: usize) -> HopOptions {
        match self {
            Variant::Full => HopOptions::extractive(hops),
            Variant::NoUpdate => HopOptions::extractive(hops).without_update(),
            Variant::SentenceOnly => HopOptions::sentence_only(hops),
        }
    }
}

/// Training recipe for the synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRecipe {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch_size: Option<usize>,
    pub init_seed: u64,
}

impl Default for SynthRecipe {
    fn default() -> Self {
        Self { learning_rate: 0.2, momentum: 0.9, steps: 20, batch_size: Some(32), init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub untrained_hits: f64,
    pub trained_hits: f64,
    pub train_hits: f64,
    pub epoch_losses: Vec<f64>,
    #[serde(skip)]
    pub params: Option<MixParams>,
}

/// Trains one variant on the training split and scores both splits.
pub fn run_variant(train: &TrainSet, test: &TrainSet, dim: usize, hops: usize, variant: Variant, recipe: &SynthRecipe) -> Result<VariantResult> {
    let opts = variant.hop_options(hops);
    let init = MixParams::random(dim, recipe.init_seed);
    let untrained_hits = final_hop_hits(test, &init, &opts)?;
    let mut config = TrainConfig::new(opts.clone());
    config.learning_rate = recipe.learning_rate;
    config.momentum = recipe.momentum;
    config.steps = recipe.steps;
    config.batch_size = recipe.batch_size;
    config.seed = recipe.init_seed;
    config.multi_positive_rule = MultiPositiveRule::MarginalLog;
    config.trainable = Trainable::default();
    let mut train = train.clone();
    let report = fit(&mut train, init, &config)?;
    Ok(VariantResult {
        variant,
        untrained_hits,
        trained_hits: final_hop_hits(test, &report.params, &opts)?,
        train_hits: final_hop_hits(&train, &report.params, &opts)?,
        epoch_losses: report.epoch_losses,
        params: Some(report.params),
    })
}

/// Generates the synthetic data for `spec`, splits it and runs every requested variant.
pub fn run_synth(spec: &synth::SynthSpec, variants: &[Variant], recipe: &SynthRecipe) -> Result<Vec<VariantResult>> {
    let data = synth::synth_generate(spec)?;
    let set = data.train_set(Regime::Agnostic)?;
    let (train, test) = synth::split_by_document(set, spec.n_train_docs());
    variants.iter().map(|&v| run_variant(&train, &test, spec.dim, spec.hops, v, recipe)).collect()
}
