//! Throughput of the full hop pipeline.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::hop::{run_hops_batch, run_hops_profiled, HopOptions, MixParams, QueryState, StageTimes};
use crate::index::{CombinedIndex, ParagraphVectors, Regime};
use crate::linalg::Vector;

/// Minimum number of queries for a throughput measurement.
pub const MIN_QUERIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub queries: usize,
    pub batch: usize,
    pub parallel: bool,
    pub threads: usize,
    pub entries: usize,
    pub dim: usize,
    pub hops: usize,
    pub total_secs: f64,
    pub qps: f64,
    /// Seconds spent per stage, summed over queries (and threads when parallel).
    pub score_secs: f64,
    pub mix_secs: f64,
    pub update_secs: f64,
}

impl BenchReport {
    pub fn table(&self) -> String {
        format!(
            "entries {}  dim {}  hops {}  queries {}  batch {}  threads {}\n\
             qps      {:.1}\n\
             total    {:.4}s\n\
             score    {:.4}s\n\
             mix      {:.4}s\n\
             update   {:.4}s\n",
            self.entries,
            self.dim,
            self.hops,
            self.queries,
            self.batch,
            self.threads,
            self.qps,
            self.total_secs,
            self.score_secs,
            self.mix_secs,
            self.update_secs
        )
    }
}

/// A random index with `paragraphs × (1 + sents_per_para)` entries of unit-ish vectors.
pub fn random_index(paragraphs: usize, sents_per_para: usize, dim: usize, seed: u64) -> Result<CombinedIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f32).sqrt();
    let pv = (0..paragraphs)
        .map(|_| ParagraphVectors {
            paragraph: None,
            sentences: (0..sents_per_para)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0) * scale * 1.7).collect())
                .collect(),
        })
        .collect();
    CombinedIndex::from_vectors("bench", dim, Regime::Agnostic, pv)
}

/// Random per-hop query vectors.
pub fn random_queries(n: usize, hops: usize, dim: usize, seed: u64) -> Vec<Vec<Vector>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..hops).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()).collect()
}

/// Runs the full hop pipeline over `queries` in sequential batches of `batch`.
///
/// Sequential runs score each batch in one pass over the index. With `parallel`,
/// the queries inside each batch instead run one by one on the rayon pool.
pub fn measure_throughput(
    index: &CombinedIndex,
    queries: &[Vec<Vector>],
    params: &MixParams,
    opts: &HopOptions,
    batch: usize,
    parallel: bool,
) -> Result<BenchReport> {
    if queries.len() < MIN_QUERIES {
        return Err(validation(format!("throughput needs at least {MIN_QUERIES} queries, got {}", queries.len())));
    }
    if batch == 0 {
        return Err(validation("batch size must be positive"));
    }
    let run = |q: &Vec<Vector>| -> Result<StageTimes> {
        let mut t = StageTimes::default();
        run_hops_profiled(QueryState::new(q.clone())?, index, params, opts, &mut t)?;
        Ok(t)
    };
    let mut stages = StageTimes::default();
    let start = Instant::now();
    for chunk in queries.chunks(batch) {
        if parallel {
            let times: Vec<StageTimes> = chunk.par_iter().map(run).collect::<Result<_>>()?;
            for t in times {
                stages.score += t.score;
                stages.mix += t.mix;
                stages.update += t.update;
            }
        } else {
            let states = chunk.iter().map(|q| QueryState::new(q.clone())).collect::<Result<Vec<_>>>()?;
            run_hops_batch(states, index, params, opts, Some(&mut stages))?;
        }
    }
    let total = start.elapsed().max(Duration::from_nanos(1));
    Ok(BenchReport {
        queries: queries.len(),
        batch,
        parallel,
        threads: if parallel { rayon::current_num_threads() } else { 1 },
        entries: index.len(),
        dim: index.dim(),
        hops: opts.hops(),
        total_secs: total.as_secs_f64(),
        qps: queries.len() as f64 / total.as_secs_f64(),
        score_secs: stages.score.as_secs_f64(),
        mix_secs: stages.mix.as_secs_f64(),
        update_secs: stages.update.as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_has_consistent_stages() {
        let idx = random_index(20, 4, 16, 1).unwrap();
        let qs = random_queries(120, 2, 16, 2);
        let r = measure_throughput(&idx, &qs, &MixParams::random(16, 3), &HopOptions::extractive(2), 8, false).unwrap();
        assert_eq!(r.entries, 100);
        assert!(r.qps > 0.0);
        assert!(r.score_secs + r.mix_secs + r.update_secs <= r.total_secs);
        assert!(r.table().contains("qps"));
    }

    #[test]
    fn too_few_queries_is_an_error() {
        let idx = random_index(2, 2, 4, 1).unwrap();
        let qs = random_queries(10, 1, 4, 2);
        assert!(measure_throughput(&idx, &qs, &MixParams::random(4, 3), &HopOptions::unmasked(1), 8, false).is_err());
    }
}
