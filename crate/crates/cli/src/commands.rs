//! Subcommand implementations.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hopmix::doc::{
    linearize_paper, linearize_table, read_documents, write_documents, PaperRecord, QueryKind, StructuredDocument,
    TableRecord,
};
use hopmix::embed::{
    embed_query_units, query_unit_key, query_unit_text, sentence_key, EmbeddingProvider, EmbeddingTable, FileProvider,
    ToyProvider,
};
use hopmix::eval::bench::{measure_throughput, random_index, random_queries};
use hopmix::eval::metrics::{em_f1, evidence_coverage, hits_at_1, retrieved_set, strict_accuracy, MetricReport};
use hopmix::eval::synth::{synth_generate, SynthSpec};
use hopmix::eval::build_train_set_with;
use hopmix::heads::{classify_conversation, fused_sentence_scores, rank, ClassLabel, FusionWeights};
use hopmix::hop::{run_hops, HopOptions, NUM_CLASSES, MixParams, QueryState, RetrievalTrace};
use hopmix::index::{build_index, save_index, CombinedIndex, EntryKind, Regime};
use hopmix::train::{
    fit, load_checkpoint, read_train_records, save_checkpoint, write_train_records, EntryRef, MultiPositiveRule,
    TrainConfig, TrainRecord,
};
use hopmix::Error;

use crate::{
    BenchArgs, EmbedArgs, EvalArgs, HopArgs, IndexArgs, IngestArgs, InputFormat, RankArgs, RegimeArg, RetrieveArgs,
    SynthArgs, TrainArgs, VectorSource,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file not found: {}", path.display())));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Schema(format!("line {}: {e}", n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| Error::Io(e.into()))?;
    println!("{text}");
    Ok(())
}

fn regime(arg: RegimeArg) -> Regime {
    match arg {
        RegimeArg::Agnostic => Regime::Agnostic,
        RegimeArg::Deferred => Regime::QueryDependentDeferred,
    }
}

fn load_documents(path: &Path) -> Result<Vec<StructuredDocument>> {
    Ok(read_documents(open(path)?)?)
}

fn load_records(path: &Path) -> Result<Vec<TrainRecord>> {
    Ok(read_train_records(open(path)?)?)
}

/// The embedding file when given, otherwise the toy encoder.
fn provider(embeddings: Option<&Path>, dim: usize) -> Result<Box<dyn EmbeddingProvider>> {
    match embeddings {
        Some(path) => Ok(Box::new(FileProvider::new(EmbeddingTable::read(open(path)?)?))),
        None => Ok(Box::new(ToyProvider::new(dim)?)),
    }
}

fn parse_masks(spec: &str, hops: usize) -> Result<Vec<Option<EntryKind>>> {
    let masks: Vec<Option<EntryKind>> = spec
        .split(',')
        .map(|m| match m.trim() {
            "any" | "all" | "none" | "" => Ok(None),
            other => EntryKind::parse(other)
                .map(Some)
                .ok_or_else(|| CliError::Usage(format!("unknown mask `{other}`; use paragraph, sentence or any"))),
        })
        .collect::<Result<_>>()?;
    match masks.len() {
        1 => Ok(vec![masks[0]; hops]),
        n if n == hops => Ok(masks),
        n => Err(CliError::Usage(format!("--mask has {n} entries for {hops} hops"))),
    }
}

/// Hop options for a query with `units` units. Multi-hop queries default to a
/// paragraph hop followed by sentence hops, conversational ones to no mask.
fn hop_options(args: &HopArgs, kind: QueryKind, units: usize) -> Result<HopOptions> {
    let hops = args.hops.unwrap_or(units);
    if hops == 0 {
        return Err(CliError::Usage("--hops must be positive".into()));
    }
    if hops > units {
        return Err(CliError::Core(Error::Validation(format!("{hops} hops requested but the query has {units} units"))));
    }
    let mut opts = match (&args.mask, kind) {
        (Some(spec), _) => HopOptions { masks: parse_masks(spec, hops)?, update: true },
        (None, QueryKind::MultiHop) => HopOptions::extractive(hops),
        (None, QueryKind::Conversational) => HopOptions::unmasked(hops),
    };
    if args.no_update {
        opts = opts.without_update();
    }
    Ok(opts)
}

pub fn ingest(args: &IngestArgs) -> Result<()> {
    let docs = match args.format {
        InputFormat::Documents => load_documents(&args.input)?,
        InputFormat::Tables => read_jsonl::<TableRecord>(&args.input)?
            .iter()
            .map(linearize_table)
            .collect::<hopmix::Result<_>>()?,
        InputFormat::Papers => read_jsonl::<PaperRecord>(&args.input)?
            .iter()
            .map(|p| linearize_paper(p.id.clone(), &p.sections))
            .collect::<hopmix::Result<_>>()?,
    };
    let mut w = create(&args.output)?;
    write_documents(&mut w, &docs)?;
    w.flush()?;
    eprintln!("wrote {} documents to {}", docs.len(), args.output.display());
    Ok(())
}

pub fn embed(args: &EmbedArgs) -> Result<()> {
    let docs = load_documents(&args.docs)?;
    let records = args.queries.as_deref().map(load_records).transpose()?.unwrap_or_default();
    let toy = ToyProvider::new(args.dim)?;
    let mut table = EmbeddingTable::new(args.dim);
    for doc in &docs {
        for s in doc.sentences() {
            table.insert(
                sentence_key(&doc.id, s.para_idx, s.sent_idx),
                toy.sentence_vector(&doc.id, s.para_idx, s.sent_idx, &s.text)?,
            )?;
        }
    }
    for rec in &records {
        for t in 0..rec.query.units.len() {
            let text = query_unit_text(&rec.query, t);
            table.insert(query_unit_key(&rec.query_id, t), toy.query_unit_vector(&rec.query_id, t, &text)?)?;
        }
    }
    let mut w = create(&args.output)?;
    table.write(&mut w)?;
    w.flush()?;
    eprintln!("wrote {} vectors of dimension {} to {}", table.len(), args.dim, args.output.display());
    Ok(())
}

fn build_indices(source: &VectorSource) -> Result<(Vec<StructuredDocument>, Box<dyn EmbeddingProvider>, Vec<CombinedIndex>)> {
    let docs = load_documents(&source.docs)?;
    let provider = provider(source.embeddings.as_deref(), source.dim)?;
    let regime = regime(source.regime);
    let indices = docs
        .par_iter()
        .map(|d| build_index(d, provider.as_ref(), regime))
        .collect::<hopmix::Result<Vec<_>>>()?;
    Ok((docs, provider, indices))
}

pub fn index(args: &IndexArgs) -> Result<()> {
    let (_, _, indices) = build_indices(&args.source)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for idx in &indices {
        save_index(idx, &args.out_dir.join(format!("{}.hidx", idx.doc_id())))?;
    }
    eprintln!("wrote {} indices to {}", indices.len(), args.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    examples: usize,
    epoch_losses: Vec<f64>,
    checkpoint: PathBuf,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let docs = load_documents(&args.source.docs)?;
    let records: Vec<TrainRecord> = load_records(&args.train)?.into_iter().filter(|r| !r.drop).collect();
    let Some(first) = records.first() else {
        return Err(CliError::Core(Error::Validation("training set has no usable records".into())));
    };
    let opts = hop_options(&args.hop, first.query.kind, first.query.hops())?;
    for rec in &records {
        if hop_options(&args.hop, rec.query.kind, rec.query.hops())? != opts {
            return Err(CliError::Core(Error::Validation(format!(
                "query {} needs different hop settings from {}; pass --hops and --mask explicitly",
                rec.query_id, first.query_id
            ))));
        }
    }
    let provider = provider(args.source.embeddings.as_deref(), args.source.dim)?;
    let dim = provider.dim();
    let mut set = build_train_set_with(&docs, &records, provider.as_ref(), regime(args.source.regime))?;
    for ex in &mut set.examples {
        ex.queries.truncate(opts.hops());
        ex.positives.truncate(opts.hops());
        ex.positives.resize(opts.hops(), Vec::new());
    }
    let init = match &args.init {
        Some(path) => {
            if !path.is_file() {
                return Err(CliError::Usage(format!("input file not found: {}", path.display())));
            }
            load_checkpoint(path)?
        }
        None => MixParams::random(dim, args.seed),
    };
    let rule = MultiPositiveRule::parse(&args.multi_positive)
        .ok_or_else(|| CliError::Usage(format!("unknown multi-positive rule `{}`", args.multi_positive)))?;
    let mut config = TrainConfig::new(opts);
    config.learning_rate = args.lr;
    config.steps = args.steps;
    config.seed = args.seed;
    config.momentum = args.momentum;
    config.batch_size = Some(args.batch);
    config.multi_positive_rule = rule;
    let report = fit(&mut set, init, &config)?;
    save_checkpoint(&report.params, &args.output)?;
    let summary = TrainSummary { examples: set.examples.len(), epoch_losses: report.epoch_losses, checkpoint: args.output.clone() };
    if let (Some(a), Some(b)) = (summary.epoch_losses.first(), summary.epoch_losses.last()) {
        eprintln!("{} examples, loss {a:.4} -> {b:.4}", summary.examples);
    }
    print_json(&summary)
}

/// One ranked sentence in a prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedRef {
    pub para: usize,
    pub sent: usize,
    pub score: f64,
}

/// One line of `retrieve` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    pub ranked: Vec<RankedRef>,
    /// Text of the top-ranked sentence.
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_probs: Option<[f64; NUM_CLASSES]>,
    /// Entries touched by the hop loop.
    #[serde(default)]
    pub retrieved: Vec<EntryRef>,
}

struct Retriever<'a> {
    docs: &'a [StructuredDocument],
    indices: &'a [CombinedIndex],
    by_id: HashMap<&'a str, usize>,
    provider: &'a dyn EmbeddingProvider,
    params: &'a MixParams,
    hop: &'a HopArgs,
    weights: FusionWeights,
    top_k: usize,
}

impl<'a> Retriever<'a> {
    fn new(
        docs: &'a [StructuredDocument],
        indices: &'a [CombinedIndex],
        provider: &'a dyn EmbeddingProvider,
        params: &'a MixParams,
        hop: &'a HopArgs,
        rank: &RankArgs,
    ) -> Result<Self> {
        let by_id = docs.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        let weights = FusionWeights::new(rank.lambda1, rank.lambda2)
            .map_err(|e| CliError::Usage(format!("invalid fusion weights: {e}")))?;
        Ok(Self { docs, indices, by_id, provider, params, hop, weights, top_k: rank.top_k })
    }

    fn predict(&self, rec: &TrainRecord) -> Result<(Prediction, RetrievalTrace)> {
        let &d = self.by_id.get(rec.doc_id.as_str()).ok_or_else(|| {
            CliError::Core(Error::Validation(format!("query {} refers to unknown document {}", rec.query_id, rec.doc_id)))
        })?;
        let (doc, index) = (&self.docs[d], &self.indices[d]);
        let opts = hop_options(self.hop, rec.query.kind, rec.query.hops())?;
        let mut queries = embed_query_units(self.provider, &rec.query_id, &rec.query)?;
        queries.truncate(opts.hops());
        let trace = run_hops(QueryState::new(queries)?, index, self.params, &opts)?;
        let q0 = &trace.records[0].query;
        let q1 = &trace.records[trace.records.len() - 1].query;
        let texts: Vec<String> = doc.paragraphs.iter().map(|p| p.text()).collect();
        let fused = fused_sentence_scores(q0, q1, index, self.weights, &rec.query.units[0], &texts)?;
        let ranked: Vec<RankedRef> = rank(fused)
            .into_iter()
            .take(self.top_k.max(1))
            .map(|r| RankedRef { para: r.para, sent: r.sent, score: r.score })
            .collect();
        let answer = ranked.first().and_then(|r| doc.sentence(r.para, r.sent)).map(|s| s.text.clone());
        let (class, class_probs) = if rec.query.kind == QueryKind::Conversational {
            let c = classify_conversation(&trace, self.params)?;
            (Some(c.logits.predicted()), Some(c.logits.probs()))
        } else {
            (None, None)
        };
        let retrieved = retrieved_set(&trace, index).into_iter().collect();
        let pred = Prediction { query_id: rec.query_id.clone(), ranked, answer, class, class_probs, retrieved };
        Ok((pred, trace))
    }

    /// Sequential batches, parallel inside each batch, results in input order.
    fn predict_all(&self, records: &[TrainRecord], batch: usize) -> Result<Vec<(Prediction, RetrievalTrace)>> {
        let mut out = Vec::with_capacity(records.len());
        for chunk in records.chunks(batch.max(1)) {
            let part: Vec<_> = chunk.par_iter().map(|r| self.predict(r)).collect::<Result<_>>()?;
            out.extend(part);
        }
        Ok(out)
    }
}

fn load_params(path: &Path, dim: usize) -> Result<MixParams> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file not found: {}", path.display())));
    }
    let params = load_checkpoint(path)?;
    if params.dim != dim {
        return Err(CliError::Core(Error::Validation(format!(
            "checkpoint dimension {} does not match embedding dimension {dim}",
            params.dim
        ))));
    }
    Ok(params)
}

pub fn retrieve(args: &RetrieveArgs) -> Result<()> {
    let (docs, provider, indices) = build_indices(&args.source)?;
    let params = load_params(&args.checkpoint, provider.dim())?;
    let records: Vec<TrainRecord> = load_records(&args.queries)?.into_iter().filter(|r| !r.drop).collect();
    let retriever = Retriever::new(&docs, &indices, provider.as_ref(), &params, &args.hop, &args.rank)?;
    let results = retriever.predict_all(&records, 8)?;
    let preds: Vec<&Prediction> = results.iter().map(|(p, _)| p).collect();
    match &args.output {
        Some(path) => write_jsonl(create(path)?, &preds)?,
        None => write_jsonl(io::stdout().lock(), &preds)?,
    }
    if let Some(path) = &args.trace {
        let lines: Vec<_> = results.iter().flat_map(|(p, t)| t.to_lines(Some(&p.query_id))).collect();
        write_jsonl(create(path)?, &lines)?;
    }
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Scores predictions against gold records, matched by query id.
pub fn score_predictions(preds: &[Prediction], gold: &[TrainRecord], strict: bool) -> Result<MetricReport> {
    let by_id: HashMap<&str, &TrainRecord> = gold.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let golds: Vec<&TrainRecord> = preds
        .iter()
        .map(|p| {
            by_id
                .get(p.query_id.as_str())
                .copied()
                .ok_or_else(|| CliError::Core(Error::Validation(format!("prediction for unknown query {}", p.query_id))))
        })
        .collect::<Result<_>>()?;
    let mut report = MetricReport { n_queries: preds.len(), ..MetricReport::default() };
    if preds.is_empty() {
        return Ok(report);
    }
    let ids: Vec<String> = preds.iter().map(|p| p.query_id.clone()).collect();

    let labeled: Vec<Vec<Vec<EntryRef>>> =
        golds.iter().map(|g| g.step_labels().map(|l| l.hops)).collect::<hopmix::Result<_>>()?;
    if labeled.iter().any(|h| !h.is_empty()) {
        let top: Vec<Option<EntryRef>> =
            preds.iter().map(|p| p.ranked.first().map(|r| EntryRef::sentence(r.para, r.sent))).collect();
        let gold_sents: Vec<Vec<EntryRef>> = labeled
            .iter()
            .map(|h| h.last().map(|l| l.iter().copied().filter(|e| e.kind == EntryKind::Sentence).collect()).unwrap_or_default())
            .collect();
        report.hits_at_1 = Some(hits_at_1(&ids, &top, &ids, &gold_sents)?);
    }

    let retrieved: Vec<BTreeSet<EntryRef>> = preds.iter().map(|p| p.retrieved.iter().copied().collect()).collect();
    let evidence: Vec<Vec<EntryRef>> = golds.iter().map(|g| g.evidence.clone()).collect();
    if evidence.iter().any(|e| !e.is_empty()) {
        report.evidence_coverage = Some(evidence_coverage(&retrieved, &evidence)?);
    }

    let scored: Vec<(f64, f64)> = preds
        .iter()
        .zip(&golds)
        .filter(|(_, g)| !g.answers.is_empty())
        .map(|(p, g)| em_f1(p.answer.as_deref().unwrap_or(""), &g.answers))
        .collect();
    if !scored.is_empty() {
        report.em = Some(mean(&scored.iter().map(|s| s.0).collect::<Vec<_>>()));
        report.f1 = Some(mean(&scored.iter().map(|s| s.1).collect::<Vec<_>>()));
    }

    if strict {
        let mut class_pred = Vec::new();
        let mut class_gold = Vec::new();
        let mut ret = Vec::new();
        let mut ev = Vec::new();
        for (i, (p, g)) in preds.iter().zip(&golds).enumerate() {
            let Some(gc) = g.class else { continue };
            let pc = p.class.ok_or_else(|| {
                CliError::Core(Error::Validation(format!("query {} has a gold class but no predicted class", p.query_id)))
            })?;
            class_pred.push(pc);
            class_gold.push(gc);
            ret.push(retrieved[i].clone());
            ev.push(evidence[i].clone());
        }
        if class_gold.is_empty() {
            return Err(CliError::Core(Error::Validation("--strict needs gold classes".into())));
        }
        let (easy, strict) = strict_accuracy(&class_pred, &class_gold, &ret, &ev)?;
        report.easy_acc = Some(easy);
        report.strict_acc = Some(strict);
    }
    Ok(report)
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let gold: Vec<TrainRecord> = load_records(&args.queries)?.into_iter().filter(|r| !r.drop).collect();
    let report = match (&args.predictions, &args.checkpoint) {
        (Some(path), None) => {
            let preds: Vec<Prediction> = read_jsonl(path)?;
            score_predictions(&preds, &gold, args.strict)?
        }
        (None, Some(ckpt)) => {
            let docs_path = args.docs.as_ref().ok_or_else(|| CliError::Usage("--docs is required with --checkpoint".into()))?;
            let source = VectorSource {
                docs: docs_path.clone(),
                embeddings: args.embeddings.clone(),
                dim: args.dim,
                regime: args.regime,
            };
            let (docs, provider, indices) = build_indices(&source)?;
            let params = load_params(ckpt, provider.dim())?;
            let retriever = Retriever::new(&docs, &indices, provider.as_ref(), &params, &args.hop, &args.rank)?;
            let start = Instant::now();
            let results = retriever.predict_all(&gold, args.batch)?;
            let secs = start.elapsed().as_secs_f64().max(1e-9);
            let preds: Vec<Prediction> = results.into_iter().map(|(p, _)| p).collect();
            let mut report = score_predictions(&preds, &gold, args.strict)?;
            report.throughput_qps = Some(preds.len() as f64 / secs);
            report
        }
        _ => return Err(CliError::Usage("pass exactly one of --predictions or --checkpoint".into())),
    };
    eprint!("{}", report.table());
    print_json(&report)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_docs: args.n_docs,
        paras_per_doc: args.paras,
        sents_per_para: args.sents,
        dim: args.dim,
        hops: args.hops,
        seed: args.seed,
    };
    let data = synth_generate(&spec)?;
    let train_docs: BTreeSet<&str> = data.documents[..spec.n_train_docs()].iter().map(|d| d.id.as_str()).collect();
    let (train, test): (Vec<TrainRecord>, Vec<TrainRecord>) =
        data.records.iter().cloned().partition(|r| train_docs.contains(r.doc_id.as_str()));
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut w = create(&dir.join("docs.jsonl"))?;
    write_documents(&mut w, &data.documents)?;
    w.flush()?;
    for (name, recs) in [("train.jsonl", &train), ("test.jsonl", &test)] {
        let mut w = create(&dir.join(name))?;
        write_train_records(&mut w, recs)?;
        w.flush()?;
    }
    let mut w = create(&dir.join("embeddings.hmix"))?;
    data.embeddings.write(&mut w)?;
    w.flush()?;
    write_jsonl(create(&dir.join("chains.jsonl"))?, &data.chains)?;
    let mut w = create(&dir.join("spec.json"))?;
    serde_json::to_writer_pretty(&mut w, &spec).map_err(|e| Error::Io(e.into()))?;
    w.flush()?;
    eprintln!(
        "wrote {} documents, {} train and {} test queries to {}",
        data.documents.len(),
        train.len(),
        test.len(),
        dir.display()
    );
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let index = random_index(args.paragraphs, args.sents, args.dim, args.seed)?;
    let queries = random_queries(args.queries, args.hops, args.dim, args.seed.wrapping_add(1));
    let params = MixParams::random(args.dim, args.seed.wrapping_add(2));
    let opts = match &args.mask {
        Some(spec) => HopOptions { masks: parse_masks(spec, args.hops)?, update: true },
        None => HopOptions::extractive(args.hops),
    };
    let report = measure_throughput(&index, &queries, &params, &opts, args.batch, args.parallel)?;
    eprint!("{}", report.table());
    print_json(&report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hop_args(hops: Option<usize>, mask: Option<&str>) -> HopArgs {
        HopArgs { hops, mask: mask.map(str::to_owned), no_update: false }
    }

    #[test]
    fn masks_broadcast_or_match_hops() {
        assert_eq!(parse_masks("sentence", 3).unwrap(), vec![Some(EntryKind::Sentence); 3]);
        assert_eq!(
            parse_masks("paragraph,any", 2).unwrap(),
            vec![Some(EntryKind::Paragraph), None]
        );
        assert_eq!(parse_masks("p,s,s", 2).unwrap_err().exit_code(), 1);
        assert_eq!(parse_masks("table", 1).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn default_masks_follow_query_kind() {
        let args = hop_args(None, None);
        assert_eq!(hop_options(&args, QueryKind::MultiHop, 2).unwrap(), HopOptions::extractive(2));
        assert_eq!(hop_options(&args, QueryKind::Conversational, 3).unwrap(), HopOptions::unmasked(3));
        assert_eq!(hop_options(&hop_args(Some(1), None), QueryKind::MultiHop, 2).unwrap(), HopOptions::extractive(1));
        assert_eq!(hop_options(&hop_args(Some(3), None), QueryKind::MultiHop, 2).unwrap_err().exit_code(), 2);
    }
}
