use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use spbwe::align::{estimate, parse_pharaoh, AlignmentModel, ParallelText};
use spbwe::embedding::{
    AssembledEmbeddings, Baseline, CategoryCounts, EmbeddingLayout, InitScheme, LayoutReport, SharingConfig, Side,
    DEFAULT_DIM, DEFAULT_LAMBDA,
};
use spbwe::micronmt::{
    finite_diff_check, toy_model, train, MicroModelConfig, Optimizer, SyntheticTask, TrainReport,
};
use spbwe::pairing::{build_pairing, PairingTable, DEFAULT_THRESHOLD};
use spbwe::pca::pca_project;
use spbwe::vocab::Vocab;

use crate::cli::*;
use crate::config::{pick, FileConfig};
use crate::manifest::{write_atomic, Manifest};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_MAX_VOCAB: usize = 30_000;

/// A flag or config value that is not acceptable; reported with exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T: std::str::FromStr<Err = spbwe::Error>>(what: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|e: spbwe::Error| UsageError(format!("invalid {what}: {e}")).into())
}

pub struct Ctx {
    pub seed: u64,
    pub cfg: FileConfig,
    pub manifest: Option<(PathBuf, Manifest)>,
}

impl Ctx {
    fn check(&self, stage: &str, inputs: &[&Path]) -> Result<()> {
        match &self.manifest {
            Some((_, m)) => m.check_inputs(stage, inputs),
            None => Manifest::default().check_inputs(stage, inputs),
        }
    }

    fn commit(&mut self, stage: &str, inputs: &[&Path], outputs: &[&Path], params: serde_json::Value) -> Result<()> {
        if let Some((path, m)) = &mut self.manifest {
            m.record(stage, inputs, outputs, params)?;
            m.save(path)?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn read_vocab(path: &Path) -> Result<Vocab> {
    Vocab::read_tsv(open(path)?).with_context(|| format!("in vocabulary {}", path.display()))
}

fn read_pairing(inputs: &PairingInputs) -> Result<(Vocab, Vocab, PairingTable)> {
    let src = read_vocab(&inputs.src_vocab)?;
    let tgt = read_vocab(&inputs.tgt_vocab)?;
    let table = PairingTable::read_tsv(open(&inputs.pairs)?, &src, &tgt, DEFAULT_THRESHOLD)
        .with_context(|| format!("in pairing table {}", inputs.pairs.display()))?;
    Ok((src, tgt, table))
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        }),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn sharing(flags: &EmbeddingFlags, cfg: &FileConfig) -> Result<SharingConfig> {
    let e = &cfg.embedding;
    let config = SharingConfig {
        d: pick(flags.d, e.d, DEFAULT_DIM),
        lambda: pick(flags.lambda, e.lambda, DEFAULT_LAMBDA),
        tie_decoder: !(flags.untied || e.untied.unwrap_or(false)),
    };
    config.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(config)
}

fn sharing_json(c: &SharingConfig) -> serde_json::Value {
    json!({ "d": c.d, "lambda": c.lambda, "tie_decoder": c.tie_decoder })
}

pub fn build_vocab(ctx: &mut Ctx, a: &BuildVocabArgs) -> Result<()> {
    ctx.check("build-vocab", &[&a.corpus])?;
    let max_size = pick(a.max_size, ctx.cfg.vocab.max_size, DEFAULT_MAX_VOCAB);
    let min_freq = pick(a.min_freq, ctx.cfg.vocab.min_freq, 1);
    let vocab = Vocab::build(open(&a.corpus)?, max_size, min_freq)
        .with_context(|| format!("in corpus {}", a.corpus.display()))?;
    write_atomic(&a.out, |w| Ok(vocab.write_tsv(w)?))?;
    eprintln!("{} entries", vocab.len());
    ctx.commit(
        "build-vocab",
        &[&a.corpus],
        &[&a.out],
        json!({ "max_size": max_size, "min_freq": min_freq }),
    )
}

pub fn align_stats(ctx: &mut Ctx, a: &AlignStatsArgs) -> Result<()> {
    let inputs: [&Path; 5] = [&a.src, &a.tgt, &a.alignments, &a.src_vocab, &a.tgt_vocab];
    ctx.check("align-stats", &inputs)?;
    let src_vocab = read_vocab(&a.src_vocab)?;
    let tgt_vocab = read_vocab(&a.tgt_vocab)?;
    let corpus = ParallelText::read(open(&a.src)?, open(&a.tgt)?)
        .with_context(|| format!("in {} / {}", a.src.display(), a.tgt.display()))?;
    let links = parse_pharaoh(open(&a.alignments)?, &corpus, a.reverse)
        .with_context(|| format!("in alignments {}", a.alignments.display()))?;
    let model = estimate(&links, &corpus, &src_vocab, &tgt_vocab)?;
    write_atomic(&a.out, |w| Ok(model.write_tsv(&src_vocab, &tgt_vocab, w)?))?;
    ctx.commit("align-stats", &inputs, &[&a.out], json!({ "reverse": a.reverse }))
}

pub fn pair(ctx: &mut Ctx, a: &PairArgs) -> Result<()> {
    let inputs: [&Path; 3] = [&a.probs, &a.src_vocab, &a.tgt_vocab];
    ctx.check("pair", &inputs)?;
    let threshold = pick(a.threshold, ctx.cfg.pairing.threshold, DEFAULT_THRESHOLD);
    if threshold.is_nan() || threshold < 0.0 {
        bail!(UsageError(format!("invalid threshold {threshold}")));
    }
    let src = read_vocab(&a.src_vocab)?;
    let tgt = read_vocab(&a.tgt_vocab)?;
    let model = AlignmentModel::read_tsv(open(&a.probs)?, &src, &tgt)
        .with_context(|| format!("in probability table {}", a.probs.display()))?;
    let table = build_pairing(&model, &src, &tgt, threshold)?;
    write_atomic(&a.out, |w| Ok(table.write_tsv(&src, &tgt, w)?))?;
    let [lm, wf, ur] = table.category_counts();
    eprintln!(
        "lm {lm}, wf {wf}, ur {ur}, surplus {}/{}",
        table.surplus_src.len(),
        table.surplus_tgt.len()
    );
    ctx.commit("pair", &inputs, &[&a.out], json!({ "threshold": threshold }))
}

pub fn layout(ctx: &mut Ctx, a: &LayoutArgs) -> Result<()> {
    let config = sharing(&a.emb, &ctx.cfg)?;
    let baseline: Baseline = usage(
        "baseline",
        &pick(a.baseline.clone(), ctx.cfg.embedding.baseline.clone(), "vanilla".into()),
    )?;
    let mut inputs: Vec<&Path> = Vec::new();
    let report = match (&a.counts, &a.pairs) {
        (Some(pairs), _) => {
            let counts = CategoryCounts {
                pairs: *pairs,
                surplus_src: a.surplus_src,
                surplus_tgt: a.surplus_tgt,
            };
            LayoutReport::from_counts(&counts, &config, baseline)
        }
        (None, Some(pairs)) => {
            let pi = PairingInputs {
                pairs: pairs.clone(),
                src_vocab: a.src_vocab.clone().expect("clap requires it"),
                tgt_vocab: a.tgt_vocab.clone().expect("clap requires it"),
            };
            inputs.extend([pairs.as_path(), a.src_vocab.as_deref().unwrap(), a.tgt_vocab.as_deref().unwrap()]);
            ctx.check("layout", &inputs)?;
            let (_, _, table) = read_pairing(&pi)?;
            EmbeddingLayout::new(&table, config)?.report(baseline)
        }
        (None, None) => unreachable!("clap requires --pairs or --counts"),
    };
    write_json(a.out.as_deref(), &report)?;
    eprintln!(
        "emb_params {} ({:.1}M), reduction {:.1}% vs {} ({:.1}M)",
        report.emb_params,
        report.emb_params as f64 / 1e6,
        100.0 * report.reduction,
        report.baseline,
        report.baseline_params as f64 / 1e6
    );
    if let Some(out) = &a.out {
        ctx.commit("layout", &inputs, &[out], json!({ "sharing": sharing_json(&config), "baseline": baseline }))?;
    }
    Ok(())
}

fn load_layout(inputs: &PairingInputs, config: SharingConfig) -> Result<(Vocab, Vocab, Arc<EmbeddingLayout>)> {
    let (src, tgt, table) = read_pairing(inputs)?;
    let layout = EmbeddingLayout::new(&table, config)?;
    Ok((src, tgt, Arc::new(layout)))
}

fn pairing_paths(p: &PairingInputs) -> [&Path; 3] {
    [&p.pairs, &p.src_vocab, &p.tgt_vocab]
}

pub fn init(ctx: &mut Ctx, a: &InitArgs) -> Result<()> {
    let inputs = pairing_paths(&a.inputs);
    ctx.check("init", &inputs)?;
    let config = sharing(&a.emb, &ctx.cfg)?;
    if !config.tie_decoder {
        bail!(UsageError("the binary dump holds tied layouts only; drop --untied".into()));
    }
    let scheme: InitScheme = usage(
        "init scheme",
        &pick(a.scheme.clone(), ctx.cfg.embedding.scheme.clone(), "uniform_scaled".into()),
    )?;
    let (_, _, layout) = load_layout(&a.inputs, config)?;
    let emb = AssembledEmbeddings::init(layout, ctx.seed, scheme);
    write_atomic(&a.out, |w| Ok(emb.write_binary(w)?))?;
    eprintln!("{} stored scalars", emb.num_scalars());
    let params = json!({ "sharing": sharing_json(&config), "seed": ctx.seed, "scheme": format!("{scheme:?}") });
    ctx.commit("init", &inputs, &[&a.out], params)
}

fn load_embeddings(path: &Path, inputs: &PairingInputs, flags: &EmbeddingFlags, cfg: &FileConfig) -> Result<(Vocab, Vocab, AssembledEmbeddings, SharingConfig)> {
    let config = sharing(flags, cfg)?;
    let (src, tgt, layout) = load_layout(inputs, config)?;
    let emb = AssembledEmbeddings::read_binary(open(path)?, layout)
        .with_context(|| format!("in embedding dump {} (do --d/--lambda match the ones given to init?)", path.display()))?;
    Ok((src, tgt, emb, config))
}

pub fn export(ctx: &mut Ctx, a: &ExportArgs) -> Result<()> {
    let [p, s, t] = pairing_paths(&a.inputs);
    let inputs = [a.embeddings.as_path(), p, s, t];
    ctx.check("export", &inputs)?;
    let (src, tgt, emb, config) = load_embeddings(&a.embeddings, &a.inputs, &a.emb, &ctx.cfg)?;
    write_atomic(&a.out, |w| Ok(emb.write_tsv(&src, &tgt, w)?))?;
    ctx.commit("export", &inputs, &[&a.out], json!({ "sharing": sharing_json(&config) }))
}

struct Toy {
    task: SyntheticTask,
    lambda: [f64; 3],
    config: MicroModelConfig,
}

fn toy(flags: &ToyFlags, ctx: &Ctx) -> Result<Toy> {
    let t = &ctx.cfg.train;
    let defaults = MicroModelConfig::default();
    let task = usage("task", &pick(flags.task.clone(), t.task.clone(), "lexicon".into()))?;
    Ok(Toy {
        task,
        lambda: pick(flags.lambda, t.lambda, DEFAULT_LAMBDA),
        config: MicroModelConfig {
            d: pick(flags.d, t.d, defaults.d),
            seed: ctx.seed,
            ..defaults
        },
    })
}

fn parse_optimizer(s: &str) -> Result<Optimizer> {
    match s {
        "sgd" => Ok(Optimizer::Sgd),
        "adam" => Ok(Optimizer::adam()),
        other => Err(UsageError(format!("invalid optimizer {other:?} (expected sgd or adam)")).into()),
    }
}

#[derive(Serialize)]
struct TrainOutput<'a> {
    task: SyntheticTask,
    lambda: [f64; 3],
    config: &'a MicroModelConfig,
    report: &'a TrainReport,
}

pub fn train_toy(ctx: &mut Ctx, a: &TrainArgs) -> Result<()> {
    let mut toy = toy(&a.toy, ctx)?;
    let t = ctx.cfg.train.clone();
    let c = &mut toy.config;
    c.steps = pick(a.steps, t.steps, c.steps);
    c.lr = pick(a.lr, t.lr, c.lr);
    c.batch_size = pick(a.batch_size, t.batch_size, c.batch_size);
    c.position_scale = pick(a.position_scale, t.position_scale, c.position_scale);
    c.optimizer = parse_optimizer(&pick(a.optimizer.clone(), t.optimizer.clone(), "sgd".into()))?;
    c.validate().map_err(|e| UsageError(e.to_string()))?;
    let samples = pick(a.grad_check_samples, t.grad_check_samples, 50);

    let (mut model, pipeline) = toy_model(toy.task, toy.lambda, &toy.config)?;
    let mut report = train(&mut model, &pipeline.data, &toy.config)?;
    if report.diverged_at.is_none() && samples > 0 {
        let batch = &pipeline.data[..pipeline.data.len().min(8)];
        let check = finite_diff_check(&model, batch, samples, 1e-4, toy.config.seed)?;
        report.grad_check_max_rel_error = Some(check.max_rel_error);
    }
    let out = TrainOutput {
        task: toy.task,
        lambda: toy.lambda,
        config: &toy.config,
        report: &report,
    };
    write_json(a.out.as_deref(), &out)?;
    if let Some(step) = report.diverged_at {
        bail!("training diverged at step {step}; the partial report was written");
    }
    eprintln!(
        "final loss {:.6} after {} steps ({:.1}s)",
        report.final_loss,
        report.losses.len(),
        report.wall_clock_secs
    );
    if let Some(path) = &a.out {
        let params = json!({ "task": toy.task, "lambda": toy.lambda, "config": toy.config });
        ctx.commit("train-toy", &[], &[path], params)?;
    }
    Ok(())
}

pub fn grad_check(ctx: &mut Ctx, a: &GradCheckArgs) -> Result<()> {
    let toy = toy(&a.toy, ctx)?;
    let (model, pipeline) = toy_model(toy.task, toy.lambda, &toy.config)?;
    let batch = &pipeline.data[..pipeline.data.len().min(8)];
    let report = finite_diff_check(&model, batch, a.samples, a.eps, toy.config.seed)?;
    write_json(a.out.as_deref(), &report)?;
    eprintln!("max relative error {:.3e} over {} scalars", report.max_rel_error, report.samples.len());
    if !(report.max_rel_error < a.tolerance) {
        bail!("gradient check failed: {:.3e} >= {:.1e}", report.max_rel_error, a.tolerance);
    }
    if let Some(path) = &a.out {
        let params = json!({ "task": toy.task, "lambda": toy.lambda, "d": toy.config.d, "seed": ctx.seed, "samples": a.samples, "eps": a.eps });
        ctx.commit("grad-check", &[], &[path], params)?;
    }
    Ok(())
}

pub fn pca(ctx: &mut Ctx, a: &PcaArgs) -> Result<()> {
    let [p, s, t] = pairing_paths(&a.inputs);
    let inputs = [a.embeddings.as_path(), p, s, t];
    ctx.check("pca", &inputs)?;
    let (src, tgt, emb, config) = load_embeddings(&a.embeddings, &a.inputs, &a.emb, &ctx.cfg)?;
    let mut items = Vec::new();
    for (side, vocab) in [(Side::Src, &src), (Side::Tgt, &tgt)] {
        let ids = (0..vocab.len()).filter(|&i| !vocab.is_special(i));
        for id in ids.take(a.top.unwrap_or(usize::MAX)) {
            let label = (vocab.token(id).expect("id in range").to_string(), side);
            items.push((label, emb.lookup(side, id)?));
        }
    }
    let projected = pca_project(&items, 2)?;
    write_atomic(&a.out, |w| {
        for ((token, side), xy) in &projected {
            writeln!(w, "{token}\t{}\t{:.6}\t{:.6}", side.as_str(), xy[0], xy[1])?;
        }
        Ok(())
    })?;
    ctx.commit("pca", &inputs, &[&a.out], json!({ "sharing": sharing_json(&config), "top": a.top }))
}

pub fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let Some((path, manifest)) = &ctx.manifest else {
        bail!(UsageError("report needs --manifest".into()));
    };
    if manifest.runs.is_empty() {
        bail!("manifest {} records no stages", path.display());
    }
    let status = manifest.status();
    for (stage, s) in &status {
        println!("{stage}\t{s}");
    }
    if let Some(out) = &a.out {
        let map: serde_json::Map<String, serde_json::Value> = status.into_iter().map(|(k, v)| (k, v.into())).collect();
        write_json(Some(out), &map)?;
    }
    Ok(())
}
