//! A minimal attention encoder-decoder whose only parameters are the
//! shared-private embeddings.
//!
//! For a sentence pair with source ids `s` and target ids `y`:
//!
//! ```text
//! q_t   = E^y[u_t] + p_t                      decoder query, u = <bos> y[..n-1]
//! k_j   = E^x[s_j] + p_j                      encoder key
//! a_tj  = <q_t, k_j> / sqrt(d)                attention logit
//! c_t   = sum_j softmax(a_t)_j E^x[s_j]       context
//! z_t   = O c_t                               logits, O = E^y when tied
//! ```
//!
//! `p` is a fixed sinusoidal position signal scaled by
//! [`MicroModelConfig::position_scale`]. It steers attention only; values
//! and logits see raw embeddings, so an untrained model starts close to
//! the uniform prediction. The context alone feeds the logits: adding the
//! decoder input back in would give the previous token the same
//! self-similarity bonus as the correct one whenever source and target
//! vectors coincide, and a copy task could never get below `ln 2`.
//!
//! The loss is the mean token
//! cross-entropy with teacher forcing. `<pad>` keys get zero attention and
//! `<pad>` targets are left out of the loss.
//!
//! Gradients are derived by hand and accumulated through
//! [`AssembledEmbeddings::grad_scatter`], so a shared row collects the
//! encoder-side, decoder-input-side and output-projection contributions of
//! both words of its pair.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{estimate, parse_pharaoh, ParallelText};
use crate::embedding::{
    AssembledEmbeddings, BlockKind, EmbeddingLayout, InitScheme, SharingConfig, Side,
};
use crate::error::{Error, Result};
use crate::pairing::{build_pairing, PairingTable, DEFAULT_THRESHOLD};
use crate::vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    /// Adam with `beta1 = 0.9`, `beta2 = 0.98`, `eps = 1e-8`.
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroModelConfig {
    pub d: usize,
    pub lr: f64,
    pub steps: usize,
    /// Examples per step; anything at or above the dataset size means full batch in dataset order.
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Amplitude of the sinusoidal position signal.
    pub position_scale: f64,
}

impl Default for MicroModelConfig {
    fn default() -> Self {
        MicroModelConfig {
            d: 32,
            lr: 1.0,
            steps: 2000,
            batch_size: 64,
            seed: 1,
            optimizer: Optimizer::Sgd,
            position_scale: 6.0,
        }
    }
}

impl MicroModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.batch_size == 0 {
            return Err(Error::Config("d and batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.position_scale.is_finite() {
            return Err(Error::Config("lr must be non-negative and position_scale finite".into()));
        }
        Ok(())
    }
}

/// One parallel sentence pair as vocabulary ids, `<eos>` included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Sinusoidal position signal of width `d`.
pub fn position_signal(pos: usize, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let i = (k / 2) * 2;
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            scale * if k % 2 == 0 { angle.sin() } else { angle.cos() }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

/// Softmax over the unmasked entries; masked entries get exactly 0.
fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Attention-logit split into the shared-slice and remaining coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitDecomposition {
    pub shared_term: f64,
    pub private_term: f64,
}

impl LogitDecomposition {
    pub fn dot(&self) -> f64 {
        self.shared_term + self.private_term
    }
}

#[derive(Debug, Clone)]
struct StepCache {
    input: usize,
    target: usize,
    query: Vec<f64>,
    attention: Vec<f64>,
    context: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct ExampleCache {
    src: Vec<usize>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    steps: Vec<StepCache>,
}

/// Activations kept from [`MicroModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    examples: Vec<ExampleCache>,
    tokens: usize,
}

impl ForwardCache {
    /// Attention rows of every scored target position, per example.
    pub fn attention_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.examples
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.attention.as_slice()))
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }
}

#[derive(Debug, Clone)]
pub struct MicroModel {
    pub emb: AssembledEmbeddings,
    pub position_scale: f64,
}

impl MicroModel {
    pub fn new(emb: AssembledEmbeddings, position_scale: f64) -> Self {
        MicroModel {
            emb,
            position_scale,
        }
    }

    pub fn d(&self) -> usize {
        self.emb.d()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.d() as f64).sqrt()
    }

    fn check_ids(&self, ex: &Example) -> Result<()> {
        for (side, ids) in [(Side::Src, &ex.src), (Side::Tgt, &ex.tgt)] {
            let len = self.emb.layout().vocab_len(side);
            if let Some(&bad) = ids.iter().find(|&&i| i >= len) {
                return Err(Error::Bounds {
                    what: match side {
                        Side::Src => "source vocabulary",
                        Side::Tgt => "target vocabulary",
                    },
                    index: bad,
                    len,
                });
            }
        }
        Ok(())
    }

    fn output_rows(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.emb.layout().vocab_len(Side::Tgt))
            .map(|v| Ok(self.emb.output_view(v)?.to_vec()))
            .collect()
    }

    /// Mean token cross-entropy over `batch`, with everything needed for [`Self::backward`].
    pub fn forward(&self, batch: &[Example]) -> Result<(f64, ForwardCache)> {
        let d = self.d();
        let scale = self.scale();
        let max_len = batch
            .iter()
            .map(|e| e.src.len().max(e.tgt.len()))
            .max()
            .unwrap_or(0);
        let positions: Vec<Vec<f64>> = (0..max_len)
            .map(|p| position_signal(p, d, self.position_scale))
            .collect();
        let output_rows = self.output_rows()?;
        let mut total = 0.0;
        let mut tokens = 0;
        let mut examples = Vec::with_capacity(batch.len());
        for ex in batch {
            self.check_ids(ex)?;
            let values: Vec<Vec<f64>> = ex
                .src
                .iter()
                .map(|&s| self.emb.lookup(Side::Src, s))
                .collect::<Result<_>>()?;
            let keys: Vec<Vec<f64>> = values
                .iter()
                .zip(&positions)
                .map(|(v, p)| {
                    let mut k = v.clone();
                    axpy(1.0, p, &mut k);
                    k
                })
                .collect();
            let mask: Vec<bool> = ex.src.iter().map(|&s| s != PAD_ID).collect();
            let mut steps = Vec::new();
            for (t, &target) in ex.tgt.iter().enumerate() {
                if target == PAD_ID {
                    continue;
                }
                let input = if t == 0 { BOS_ID } else { ex.tgt[t - 1] };
                let mut query = self.emb.lookup(Side::Tgt, input)?;
                axpy(1.0, &positions[t], &mut query);
                let logits: Vec<f64> = keys.iter().map(|k| scale * dot(&query, k)).collect();
                let attention = masked_softmax(&logits, &mask);
                let mut context = vec![0.0; d];
                for (a, v) in attention.iter().zip(&values) {
                    axpy(*a, v, &mut context);
                }
                let z: Vec<f64> = output_rows.iter().map(|o| dot(o, &context)).collect();
                let probs = masked_softmax(&z, &vec![true; z.len()]);
                total -= probs[target].ln();
                tokens += 1;
                steps.push(StepCache {
                    input,
                    target,
                    query,
                    attention,
                    context,
                    probs,
                });
            }
            examples.push(ExampleCache {
                src: ex.src.clone(),
                keys,
                values,
                steps,
            });
        }
        let loss = if tokens == 0 { 0.0 } else { total / tokens as f64 };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss}")));
        }
        Ok((loss, ForwardCache { examples, tokens }))
    }

    /// Exact gradient of the forward loss with respect to every stored scalar.
    pub fn backward(&self, cache: &ForwardCache) -> Result<AssembledEmbeddings> {
        let mut grad = self.emb.zeros_like();
        if cache.tokens == 0 {
            return Ok(grad);
        }
        let d = self.d();
        let scale = self.scale();
        let vx = self.emb.layout().vocab_len(Side::Src);
        let vy = self.emb.layout().vocab_len(Side::Tgt);
        let norm = 1.0 / cache.tokens as f64;
        let output_rows = self.output_rows()?;

        // Dense accumulators, scattered into the blocks once at the end.
        let mut g_src = vec![vec![0.0; d]; vx];
        let mut g_in = vec![vec![0.0; d]; vy];
        let mut g_out = vec![vec![0.0; d]; vy];
        for ex in &cache.examples {
            let mut g_enc = vec![vec![0.0; d]; ex.keys.len()];
            for st in &ex.steps {
                let mut g_context = vec![0.0; d];
                for v in 0..vy {
                    let gz = norm * (st.probs[v] - if v == st.target { 1.0 } else { 0.0 });
                    axpy(gz, &st.context, &mut g_out[v]);
                    axpy(gz, &output_rows[v], &mut g_context);
                }
                let mut g_query = vec![0.0; d];
                let g_att: Vec<f64> = ex.values.iter().map(|v| dot(&g_context, v)).collect();
                let mean: f64 = st.attention.iter().zip(&g_att).map(|(a, g)| a * g).sum();
                for (j, k) in ex.keys.iter().enumerate() {
                    let a = st.attention[j];
                    axpy(a, &g_context, &mut g_enc[j]);
                    let g_logit = a * (g_att[j] - mean) * scale;
                    axpy(g_logit, k, &mut g_query);
                    axpy(g_logit, &st.query, &mut g_enc[j]);
                }
                axpy(1.0, &g_query, &mut g_in[st.input]);
            }
            for (&s, g) in ex.src.iter().zip(&g_enc) {
                axpy(1.0, g, &mut g_src[s]);
            }
        }
        for (id, g) in g_src.iter().enumerate() {
            grad.grad_scatter(Side::Src, id, g)?;
        }
        for (id, g) in g_in.iter().enumerate() {
            grad.grad_scatter(Side::Tgt, id, g)?;
        }
        for (id, g) in g_out.iter().enumerate() {
            grad.output_grad_scatter(id, g)?;
        }
        Ok(grad)
    }

    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, AssembledEmbeddings)> {
        let (loss, cache) = self.forward(batch)?;
        Ok((loss, self.backward(&cache)?))
    }

    /// Splits the raw dot product of source `x` and target `y` (no position
    /// signal) into the leading shared-width coordinates and the rest. For a
    /// paired `(x, y)` the shared term is the squared norm of their common slice.
    pub fn attention_logit_decomposition(&self, x: usize, y: usize) -> Result<LogitDecomposition> {
        let vx = self.emb.view(Side::Src, x)?;
        let vy = self.emb.view(Side::Tgt, y)?;
        let w = vx.shared.len().min(vy.shared.len());
        let d = self.d();
        let shared_term = (0..w).map(|k| vx.get(k) * vy.get(k)).sum();
        let private_term = (w..d).map(|k| vx.get(k) * vy.get(k)).sum();
        Ok(LogitDecomposition {
            shared_term,
            private_term,
        })
    }

    /// The attention logit between source `x` and target `y` without position signal.
    pub fn attention_logit(&self, x: usize, y: usize) -> Result<f64> {
        let a = self.emb.lookup(Side::Src, x)?;
        let b = self.emb.lookup(Side::Tgt, y)?;
        Ok(self.scale() * dot(&b, &a))
    }

    /// Greedy decoding, for smoke tests.
    pub fn greedy_decode(&self, src: &[usize], max_len: usize) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::new();
        while out.len() < max_len {
            let mut tgt = out.clone();
            tgt.push(EOS_ID);
            let (_, cache) = self.forward(&[Example {
                src: src.to_vec(),
                tgt,
            }])?;
            let probs = &cache.examples[0].steps.last().expect("one step").probs;
            let next = probs
                .iter()
                .enumerate()
                .fold(0, |b, (i, &p)| if p > probs[b] { i } else { b });
            out.push(next);
            if next == EOS_ID {
                break;
            }
        }
        Ok(out)
    }
}

/// One sampled scalar of a gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradSample {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradSample>,
}

/// Denominator floor for the relative error, so that two gradients that
/// are both at round-off level compare as equal.
pub const REL_ERROR_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients with central differences on `n_samples`
/// stored scalars, cycling through every non-empty block.
pub fn finite_diff_check(
    model: &MicroModel,
    batch: &[Example],
    n_samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    finite_diff_check_with(model, batch, n_samples, eps, seed, |m, b| {
        Ok(m.loss_and_grad(b)?.1)
    })
}

/// [`finite_diff_check`] against an arbitrary gradient routine.
pub fn finite_diff_check_with<F>(
    model: &MicroModel,
    batch: &[Example],
    n_samples: usize,
    eps: f64,
    seed: u64,
    gradient: F,
) -> Result<GradCheckReport>
where
    F: Fn(&MicroModel, &[Example]) -> Result<AssembledEmbeddings>,
{
    let analytic = gradient(model, batch)?;
    let kinds: Vec<BlockKind> = model
        .emb
        .block_kinds()
        .into_iter()
        .filter(|&k| model.emb.block(k).is_some_and(|m| !m.as_slice().is_empty()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        if kinds.is_empty() {
            break;
        }
        let kind = kinds[i % kinds.len()];
        let len = model.emb.block(kind).expect("listed").as_slice().len();
        let index = rng.gen_range(0..len);
        let set = |m: &mut MicroModel, value: f64| {
            m.emb.block_mut(kind).expect("listed").as_mut_slice()[index] = value;
        };
        let original = model.emb.block(kind).expect("listed").as_slice()[index];
        set(&mut probe, original + eps);
        let (plus, _) = probe.forward(batch)?;
        set(&mut probe, original - eps);
        let (minus, _) = probe.forward(batch)?;
        set(&mut probe, original);
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.block(kind).expect("listed").as_slice()[index];
        samples.push(GradSample {
            block: kind.to_string(),
            index,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Full-dataset loss after the last update.
    pub final_loss: f64,
    pub grad_check_max_rel_error: Option<f64>,
    /// Excluded from the serialized report so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    /// Set when training stopped on a non-finite loss.
    pub diverged_at: Option<usize>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

fn apply_update(
    emb: &mut AssembledEmbeddings,
    grad: &AssembledEmbeddings,
    lr: f64,
    optimizer: Optimizer,
    state: &mut Option<AdamState>,
) {
    let grads = grad.params();
    match optimizer {
        Optimizer::Sgd => {
            for (p, g) in emb.params_mut().into_iter().zip(grads) {
                axpy(-lr, g, p);
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let st = state.get_or_insert_with(|| AdamState {
                m: grads.iter().map(|g| vec![0.0; g.len()]).collect(),
                v: grads.iter().map(|g| vec![0.0; g.len()]).collect(),
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            for (((p, g), m), v) in emb
                .params_mut()
                .into_iter()
                .zip(grads)
                .zip(st.m.iter_mut())
                .zip(st.v.iter_mut())
            {
                for k in 0..p.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                    p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Trains in place. A non-finite loss stops training and returns the
/// partial report with `diverged_at` set.
pub fn train(model: &mut MicroModel, data: &[Example], config: &MicroModelConfig) -> Result<TrainReport> {
    config.validate()?;
    if config.d != model.d() {
        return Err(Error::Config(format!(
            "model width {} does not match configured d {}",
            model.d(),
            config.d
        )));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = None;
    let mut losses = Vec::with_capacity(config.steps);
    let mut diverged_at = None;
    let full_batch = config.batch_size >= data.len();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for step in 0..config.steps {
        let batch: Vec<Example> = if full_batch {
            data.to_vec()
        } else {
            order.shuffle(&mut rng);
            order[..config.batch_size].iter().map(|&i| data[i].clone()).collect()
        };
        let (loss, grad) = match model.loss_and_grad(&batch) {
            Ok(r) => r,
            Err(Error::Numeric(_)) => {
                diverged_at = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        apply_update(&mut model.emb, &grad, config.lr, config.optimizer, &mut adam);
    }
    let final_loss = if diverged_at.is_some() {
        f64::NAN
    } else {
        model.forward(data)?.0
    };
    Ok(TrainReport {
        losses,
        final_loss,
        grad_check_max_rel_error: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        diverged_at,
    })
}

/// Built-in synthetic parallel tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    /// Target equals source over a shared alphabet.
    Copy,
    /// Word-by-word translation through a random bijective lexicon.
    Lexicon,
}

impl std::str::FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(SyntheticTask::Copy),
            "lexicon" => Ok(SyntheticTask::Lexicon),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub task: SyntheticTask,
    pub words: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(task: SyntheticTask, seed: u64) -> Self {
        TaskSpec {
            task,
            words: 10,
            sentences: 64,
            min_len: 3,
            max_len: 6,
            seed,
        }
    }
}

/// A generated corpus with its diagonal alignments.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub text: ParallelText,
    pub alignments: Vec<String>,
}

pub fn generate(spec: &TaskSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lexicon: Vec<usize> = (0..spec.words).collect();
    let (src_prefix, tgt_prefix) = match spec.task {
        SyntheticTask::Copy => ("w", "w"),
        SyntheticTask::Lexicon => {
            lexicon.shuffle(&mut rng);
            ("s", "t")
        }
    };
    let mut text = ParallelText::default();
    let mut alignments = Vec::with_capacity(spec.sentences);
    for _ in 0..spec.sentences {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let words: Vec<usize> = (0..len).map(|_| rng.gen_range(0..spec.words)).collect();
        let src: Vec<String> = words.iter().map(|w| format!("{src_prefix}{w}")).collect();
        let tgt: Vec<String> = words
            .iter()
            .map(|&w| format!("{tgt_prefix}{}", lexicon[w]))
            .collect();
        text.src.push(src.join(" "));
        text.tgt.push(tgt.join(" "));
        alignments.push((0..len).map(|i| format!("{i}-{i}")).collect::<Vec<_>>().join(" "));
    }
    SyntheticCorpus { text, alignments }
}

/// Everything built on the way from a parallel corpus to a trainable model.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub pairing: PairingTable,
    pub layout: Arc<EmbeddingLayout>,
    pub data: Vec<Example>,
}

/// Encodes each line pair with `<eos>` appended on both sides.
pub fn encode_corpus(text: &ParallelText, src: &Vocab, tgt: &Vocab) -> Vec<Example> {
    text.src
        .iter()
        .zip(&text.tgt)
        .map(|(s, t)| {
            let mut src_ids = src.encode_line(s);
            src_ids.push(EOS_ID);
            let mut tgt_ids = tgt.encode_line(t);
            tgt_ids.push(EOS_ID);
            Example {
                src: src_ids,
                tgt: tgt_ids,
            }
        })
        .collect()
}

/// Vocabularies, alignment statistics, pairing and layout for a corpus.
pub fn build_pipeline(
    corpus: &SyntheticCorpus,
    sharing: SharingConfig,
    threshold: f64,
) -> Result<Pipeline> {
    let src_vocab = Vocab::build(corpus.text.src.join("\n").as_bytes(), usize::MAX, 1)?;
    let tgt_vocab = Vocab::build(corpus.text.tgt.join("\n").as_bytes(), usize::MAX, 1)?;
    let alignments = parse_pharaoh(corpus.alignments.join("\n").as_bytes(), &corpus.text, false)?;
    let model = estimate(&alignments, &corpus.text, &src_vocab, &tgt_vocab)?;
    let pairing = build_pairing(&model, &src_vocab, &tgt_vocab, threshold)?;
    let layout = Arc::new(EmbeddingLayout::new(&pairing, sharing)?);
    let data = encode_corpus(&corpus.text, &src_vocab, &tgt_vocab);
    Ok(Pipeline {
        src_vocab,
        tgt_vocab,
        pairing,
        layout,
        data,
    })
}

/// Generates a task, builds the pipeline and initializes a model.
pub fn toy_model(
    task: SyntheticTask,
    lambda: [f64; 3],
    config: &MicroModelConfig,
) -> Result<(MicroModel, Pipeline)> {
    let corpus = generate(&TaskSpec::new(task, config.seed));
    let pipeline = build_pipeline(&corpus, SharingConfig::new(config.d, lambda), DEFAULT_THRESHOLD)?;
    let emb = AssembledEmbeddings::init(pipeline.layout.clone(), config.seed, InitScheme::UniformScaled);
    Ok((MicroModel::new(emb, config.position_scale), pipeline))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairing::RelationCategory;

    fn small(task: SyntheticTask, words: usize, lambda: [f64; 3], d: usize) -> (MicroModel, Pipeline) {
        let spec = TaskSpec {
            words,
            sentences: 8,
            ..TaskSpec::new(task, 3)
        };
        let p = build_pipeline(&generate(&spec), SharingConfig::new(d, lambda), DEFAULT_THRESHOLD).unwrap();
        let emb = AssembledEmbeddings::init(p.layout.clone(), 11, InitScheme::UniformScaled);
        (MicroModel::new(emb, 1.0), p)
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let (m, p) = small(SyntheticTask::Lexicon, 2, [0.9, 0.7, 0.5], 32);
        let (loss, _) = m.forward(&p.data).unwrap();
        let uniform = (p.tgt_vocab.len() as f64).ln();
        assert!((loss - uniform).abs() < 0.1, "{loss} vs {uniform}");
    }

    #[test]
    fn all_padding_target_has_zero_loss_and_gradient() {
        let (m, _) = small(SyntheticTask::Copy, 3, [1.0; 3], 8);
        let batch = [Example {
            src: vec![4, 5, EOS_ID],
            tgt: vec![PAD_ID; 3],
        }];
        let (loss, grad) = m.loss_and_grad(&batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.params().iter().all(|b| b.iter().all(|&g| g == 0.0)));
        let report = finite_diff_check(&m, &batch, 12, 1e-4, 0).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn attention_rows_are_distributions_and_padding_is_masked() {
        let (m, _) = small(SyntheticTask::Copy, 3, [0.5; 3], 8);
        let batch = [Example {
            src: vec![4, PAD_ID, 5, EOS_ID, PAD_ID],
            tgt: vec![5, 4, EOS_ID],
        }];
        let (_, cache) = m.forward(&batch).unwrap();
        let mut rows = 0;
        for row in cache.attention_rows() {
            rows += 1;
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(row[1], 0.0);
            assert_eq!(row[4], 0.0);
        }
        assert_eq!(rows, 3);
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let (m, p) = small(SyntheticTask::Copy, 3, [0.5; 3], 8);
        let batch = [Example {
            src: vec![p.src_vocab.len()],
            tgt: vec![EOS_ID],
        }];
        assert!(matches!(m.forward(&batch), Err(Error::Bounds { .. })));
    }

    #[test]
    fn gradients_match_central_differences() {
        for lambda in [[0.0; 3], [0.5; 3], [1.0; 3], [0.9, 0.7, 0.5]] {
            let (m, p) = small(SyntheticTask::Lexicon, 4, lambda, 8);
            let report = finite_diff_check(&m, &p.data[..3], 60, 1e-4, 5).unwrap();
            assert!(report.max_rel_error < 1e-4, "{lambda:?}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (m, p) = small(SyntheticTask::Lexicon, 4, [0.9, 0.7, 0.5], 8);
        let report = finite_diff_check_with(&m, &p.data[..3], 30, 1e-4, 5, |m, b| {
            let mut g = m.loss_and_grad(b)?.1;
            for block in g.params_mut() {
                block.iter_mut().for_each(|x| *x = 1.5 * *x + 1e-3);
            }
            Ok(g)
        })
        .unwrap();
        assert!(report.max_rel_error > 1e-2, "{}", report.max_rel_error);
    }

    #[test]
    fn shared_row_perturbation_reaches_both_sides() {
        let (mut m, _) = small(SyntheticTask::Copy, 3, [1.0; 3], 8);
        let batch = [Example {
            src: vec![4, 5, EOS_ID],
            tgt: vec![4, 5, EOS_ID],
        }];
        let (loss0, c0) = m.forward(&batch).unwrap();
        let att0: Vec<Vec<f64>> = c0.attention_rows().map(|r| r.to_vec()).collect();
        m.emb.shared_row_mut(Side::Src, 4).unwrap()[0] += 0.5;
        assert_eq!(m.emb.lookup(Side::Src, 4).unwrap(), m.emb.lookup(Side::Tgt, 4).unwrap());
        let (loss1, c1) = m.forward(&batch).unwrap();
        let att1: Vec<Vec<f64>> = c1.attention_rows().map(|r| r.to_vec()).collect();
        assert_ne!(att0, att1);
        assert_ne!(loss0, loss1);
    }

    #[test]
    fn untied_storage_keeps_output_gradient_off_the_source() {
        let (m, p) = small(SyntheticTask::Lexicon, 4, [0.0; 3], 8);
        let mut grad = m.emb.zeros_like();
        for id in 0..p.tgt_vocab.len() {
            grad.output_grad_scatter(id, &vec![1.0; 8]).unwrap();
        }
        for c in RelationCategory::ALL {
            let px = grad.block(BlockKind::PrivateSrc(c)).unwrap();
            assert!(px.as_slice().iter().all(|&g| g == 0.0));
            assert!(grad.block(BlockKind::Shared(c)).unwrap().as_slice().is_empty());
        }
    }

    #[test]
    fn decomposition_splits_the_dot_product() {
        let (m, p) = small(SyntheticTask::Lexicon, 5, [0.9, 0.7, 0.5], 16);
        let sqrt_d = 4.0;
        for x in 0..p.src_vocab.len() {
            for y in 0..p.tgt_vocab.len() {
                let dec = m.attention_logit_decomposition(x, y).unwrap();
                let full = m.attention_logit(x, y).unwrap() * sqrt_d;
                assert!((dec.dot() - full).abs() < 1e-12);
            }
        }
        for pair in &p.pairing.pairs {
            let dec = m.attention_logit_decomposition(pair.src_id, pair.tgt_id).unwrap();
            let shared = m.emb.view(Side::Src, pair.src_id).unwrap().shared;
            let sq: f64 = shared.iter().map(|v| v * v).sum();
            assert_eq!(dec.shared_term, sq);
        }
    }

    #[test]
    fn decomposition_without_sharing_has_no_shared_term() {
        let (m, p) = small(SyntheticTask::Lexicon, 5, [0.0; 3], 16);
        for pair in &p.pairing.pairs {
            let dec = m.attention_logit_decomposition(pair.src_id, pair.tgt_id).unwrap();
            assert_eq!(dec.shared_term, 0.0);
        }
    }

    #[test]
    fn full_sharing_logit_carries_the_self_term() {
        let (m, p) = small(SyntheticTask::Copy, 4, [1.0; 3], 16);
        let pair = &p.pairing.pairs[p.pairing.pairs.len() - 1];
        let dec = m.attention_logit_decomposition(pair.src_id, pair.tgt_id).unwrap();
        let v = m.emb.lookup(Side::Src, pair.src_id).unwrap();
        assert_eq!(dec.shared_term, dot(&v, &v));
        assert_eq!(dec.private_term, 0.0);
    }

    #[test]
    fn zero_learning_rate_keeps_the_curve_flat() {
        let config = MicroModelConfig {
            d: 8,
            lr: 0.0,
            steps: 5,
            ..MicroModelConfig::default()
        };
        let (mut m, p) = toy_model(SyntheticTask::Lexicon, [0.9, 0.7, 0.5], &config).unwrap();
        let report = train(&mut m, &p.data, &config).unwrap();
        assert_eq!(report.losses.len(), 5);
        assert!(report.losses.iter().all(|&l| l == report.losses[0]));
        assert_eq!(report.final_loss, report.losses[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let config = MicroModelConfig {
            d: 8,
            steps: 20,
            batch_size: 16,
            optimizer: Optimizer::adam(),
            lr: 0.01,
            ..MicroModelConfig::default()
        };
        let run = || {
            let (mut m, p) = toy_model(SyntheticTask::Lexicon, [0.9, 0.7, 0.5], &config).unwrap();
            let r = train(&mut m, &p.data, &config).unwrap();
            (r.losses, m.emb.params().concat())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(pa, pb);
        assert!(a.last() < a.first());
    }

    #[test]
    fn divergence_returns_a_partial_report() {
        let config = MicroModelConfig {
            d: 8,
            lr: 1e200,
            steps: 10,
            ..MicroModelConfig::default()
        };
        let (mut m, p) = toy_model(SyntheticTask::Lexicon, [0.5; 3], &config).unwrap();
        let report = train(&mut m, &p.data, &config).unwrap();
        assert!(report.diverged_at.is_some());
        assert!(report.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn width_mismatch_is_a_config_error() {
        let config = MicroModelConfig { d: 8, ..MicroModelConfig::default() };
        let (mut m, p) = toy_model(SyntheticTask::Copy, [1.0; 3], &config).unwrap();
        let wrong = MicroModelConfig { d: 16, ..config };
        assert!(matches!(train(&mut m, &p.data, &wrong), Err(Error::Config(_))));
    }

    #[test]
    fn report_serializes_without_wall_clock() {
        let r = TrainReport {
            losses: vec![1.0],
            final_loss: 1.0,
            grad_check_max_rel_error: Some(0.0),
            wall_clock_secs: 3.5,
            diverged_at: None,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_clock"));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1e-12, -1e-12), 2e-12 / REL_ERROR_FLOOR);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
