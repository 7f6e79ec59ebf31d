//! Shared-private embedding storage.
//!
//! Each relationship category `c` owns three blocks:
//!
//! * `S_c`, one row per pair, `w_c` columns, read by both languages;
//! * `P^x_c`, the source-side private remainder, `d - w_c` columns;
//! * `P^y_c`, the target-side private remainder.
//!
//! A word's embedding is its shared row followed by its private row. The
//! full source matrix is the row-wise stack of the lm, wf and ur parts, each
//! of which is the column-wise join of `S_c` and `P^x_c`. Nothing is
//! materialized on lookup: both words of a pair read and write the same
//! `S_c` row.
//!
//! Surplus words (left over when the vocabularies differ in size) live at
//! the end of the ur blocks. Their shared row belongs to them alone.
//!
//! The target input embedding doubles as the output projection unless the
//! configuration unties them, in which case a separate `|V^y| x d` output
//! block is stored.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairing::{PairingTable, RelationCategory};
use crate::vocab::Vocab;

pub const DEFAULT_DIM: usize = 512;
pub const DEFAULT_LAMBDA: [f64; 3] = [0.9, 0.7, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharingConfig {
    pub d: usize,
    /// Shared fraction per category, in `RelationCategory` order.
    pub lambda: [f64; 3],
    pub tie_decoder: bool,
}

impl Default for SharingConfig {
    fn default() -> Self {
        SharingConfig {
            d: DEFAULT_DIM,
            lambda: DEFAULT_LAMBDA,
            tie_decoder: true,
        }
    }
}

impl SharingConfig {
    pub fn new(d: usize, lambda: [f64; 3]) -> Self {
        SharingConfig {
            d,
            lambda,
            tie_decoder: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("embedding width must be positive".into()));
        }
        if let Some(l) = self.lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::Config(format!("sharing coefficient {l} outside [0, 1]")));
        }
        Ok(())
    }

    /// Shared width `floor(lambda_c * d)`. The small epsilon absorbs products
    /// such as `0.29 * 100 = 28.999999999999996`.
    pub fn shared_width(&self, c: RelationCategory) -> usize {
        let w = (self.lambda[c.index()] * self.d as f64 + 1e-9).floor() as usize;
        w.min(self.d)
    }

    pub fn widths(&self) -> [usize; 3] {
        RelationCategory::ALL.map(|c| self.shared_width(c))
    }
}

/// Pair and surplus counts, all that parameter accounting needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub pairs: [usize; 3],
    pub surplus_src: usize,
    pub surplus_tgt: usize,
}

impl CategoryCounts {
    pub fn new(pairs: [usize; 3]) -> Self {
        CategoryCounts {
            pairs,
            surplus_src: 0,
            surplus_tgt: 0,
        }
    }

    pub fn src_vocab(&self) -> usize {
        self.pairs.iter().sum::<usize>() + self.surplus_src
    }

    pub fn tgt_vocab(&self) -> usize {
        self.pairs.iter().sum::<usize>() + self.surplus_tgt
    }
}

/// Shapes `(rows, cols)` of the shared, source-private and target-private blocks of `c`.
fn block_shapes(counts: &CategoryCounts, config: &SharingConfig, c: RelationCategory) -> [(usize, usize); 3] {
    let n = counts.pairs[c.index()];
    let w = config.shared_width(c);
    let (ss, st) = if c == RelationCategory::Ur {
        (counts.surplus_src, counts.surplus_tgt)
    } else {
        (0, 0)
    };
    [(n + ss + st, w), (n + ss, config.d - w), (n + st, config.d - w)]
}

/// Number of stored embedding scalars for the given counts and configuration.
pub fn count_params(counts: &CategoryCounts, config: &SharingConfig) -> usize {
    let blocks: usize = RelationCategory::ALL
        .iter()
        .flat_map(|&c| block_shapes(counts, config, c))
        .map(|(r, k)| r * k)
        .sum();
    let output = if config.tie_decoder {
        0
    } else {
        counts.tgt_vocab() * config.d
    };
    blocks + output
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Separate source, target-input and target-output matrices.
    Vanilla,
    /// Target input and output tied.
    DecoderWt,
}

impl Baseline {
    pub fn params(self, src_vocab: usize, tgt_vocab: usize, d: usize) -> usize {
        match self {
            Baseline::Vanilla => src_vocab * d + 2 * tgt_vocab * d,
            Baseline::DecoderWt => src_vocab * d + tgt_vocab * d,
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Baseline::Vanilla),
            "decoder_wt" | "decoder-wt" => Ok(Baseline::DecoderWt),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?} (expected vanilla or decoder_wt)"
            ))),
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Vanilla => "vanilla",
            Baseline::DecoderWt => "decoder_wt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Src,
    Tgt,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Src => "src",
            Side::Tgt => "tgt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowRef {
    pub category: RelationCategory,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLayout {
    config: SharingConfig,
    counts: CategoryCounts,
    src_rows: Vec<RowRef>,
    tgt_rows: Vec<RowRef>,
}

impl EmbeddingLayout {
    /// Lays out the pairing. Within a category, rows follow source id order
    /// (frequency descending); surplus words come last in ur.
    pub fn new(pairing: &PairingTable, config: SharingConfig) -> Result<Self> {
        config.validate()?;
        let src_len = pairing.pairs.len() + pairing.surplus_src.len();
        let tgt_len = pairing.pairs.len() + pairing.surplus_tgt.len();
        pairing.validate(src_len, tgt_len)?;

        let unset = RowRef {
            category: RelationCategory::Ur,
            row: usize::MAX,
        };
        let mut src_rows = vec![unset; src_len];
        let mut tgt_rows = vec![unset; tgt_len];
        let mut pairs: [usize; 3] = [0; 3];
        for c in RelationCategory::ALL {
            let mut members: Vec<_> = pairing.pairs.iter().filter(|p| p.category == c).collect();
            members.sort_by_key(|p| p.src_id);
            for (row, p) in members.iter().enumerate() {
                let r = RowRef { category: c, row };
                src_rows[p.src_id] = r;
                tgt_rows[p.tgt_id] = r;
            }
            pairs[c.index()] = members.len();
        }
        let n_ur = pairs[RelationCategory::Ur.index()];
        for (side_rows, surplus) in [
            (&mut src_rows, &pairing.surplus_src),
            (&mut tgt_rows, &pairing.surplus_tgt),
        ] {
            let mut ids = surplus.clone();
            ids.sort_unstable();
            for (k, id) in ids.into_iter().enumerate() {
                side_rows[id] = RowRef {
                    category: RelationCategory::Ur,
                    row: n_ur + k,
                };
            }
        }
        Ok(EmbeddingLayout {
            config,
            counts: CategoryCounts {
                pairs,
                surplus_src: pairing.surplus_src.len(),
                surplus_tgt: pairing.surplus_tgt.len(),
            },
            src_rows,
            tgt_rows,
        })
    }

    pub fn config(&self) -> &SharingConfig {
        &self.config
    }

    pub fn counts(&self) -> &CategoryCounts {
        &self.counts
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn vocab_len(&self, side: Side) -> usize {
        self.rows(side).len()
    }

    fn rows(&self, side: Side) -> &[RowRef] {
        match side {
            Side::Src => &self.src_rows,
            Side::Tgt => &self.tgt_rows,
        }
    }

    pub fn row_of(&self, side: Side, id: usize) -> Result<RowRef> {
        let rows = self.rows(side);
        rows.get(id).copied().ok_or(Error::Bounds {
            what: match side {
                Side::Src => "source vocabulary",
                Side::Tgt => "target vocabulary",
            },
            index: id,
            len: rows.len(),
        })
    }

    pub fn shared_width(&self, c: RelationCategory) -> usize {
        self.config.shared_width(c)
    }

    pub fn param_total(&self) -> usize {
        count_params(&self.counts, &self.config)
    }

    pub fn param_count(&self, baseline: Baseline) -> (usize, f64) {
        let emb = self.param_total();
        let base = baseline.params(self.counts.src_vocab(), self.counts.tgt_vocab(), self.config.d);
        (emb, 1.0 - emb as f64 / base as f64)
    }

    pub fn report(&self, baseline: Baseline) -> LayoutReport {
        LayoutReport::from_counts(&self.counts, &self.config, baseline)
    }
}

/// JSON summary of a layout's parameter budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub d: usize,
    pub lambda: [f64; 3],
    pub tie_decoder: bool,
    pub widths: [usize; 3],
    pub counts: [usize; 3],
    pub surplus_src: usize,
    pub surplus_tgt: usize,
    pub emb_params: usize,
    pub baseline: Baseline,
    pub baseline_params: usize,
    pub reduction: f64,
}

impl LayoutReport {
    pub fn from_counts(counts: &CategoryCounts, config: &SharingConfig, baseline: Baseline) -> Self {
        let emb = count_params(counts, config);
        let base = baseline.params(counts.src_vocab(), counts.tgt_vocab(), config.d);
        LayoutReport {
            d: config.d,
            lambda: config.lambda,
            tie_decoder: config.tie_decoder,
            widths: config.widths(),
            counts: counts.pairs,
            surplus_src: counts.surplus_src,
            surplus_tgt: counts.surplus_tgt,
            emb_params: emb,
            baseline,
            baseline_params: base,
            reduction: 1.0 - emb as f64 / base as f64,
        }
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Shared(RelationCategory),
    PrivateSrc(RelationCategory),
    PrivateTgt(RelationCategory),
    Output,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Shared(c) => write!(f, "S_{c}"),
            BlockKind::PrivateSrc(c) => write!(f, "Px_{c}"),
            BlockKind::PrivateTgt(c) => write!(f, "Py_{c}"),
            BlockKind::Output => f.write_str("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on `[-1/sqrt(d), 1/sqrt(d)]`.
    UniformScaled,
    /// Normal with standard deviation `1/sqrt(d)`.
    NormalScaled,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_scaled" | "uniform" => Ok(InitScheme::UniformScaled),
            "normal_scaled" | "normal" => Ok(InitScheme::NormalScaled),
            other => Err(Error::Config(format!("unknown init scheme {other:?}"))),
        }
    }
}

/// A word's embedding as two borrowed pieces; `shared` may be aliased by the paired word.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingView<'a> {
    pub shared: &'a [f64],
    pub private: &'a [f64],
}

impl EmbeddingView<'_> {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.shared.len() + self.private.len());
        v.extend_from_slice(self.shared);
        v.extend_from_slice(self.private);
        v
    }

    pub fn get(&self, k: usize) -> f64 {
        if k < self.shared.len() {
            self.shared[k]
        } else {
            self.private[k - self.shared.len()]
        }
    }

    /// Dot product with a dense `d`-vector.
    pub fn dot_dense(&self, other: &[f64]) -> f64 {
        let w = self.shared.len();
        let head: f64 = self.shared.iter().zip(&other[..w]).map(|(a, b)| a * b).sum();
        let tail: f64 = self.private.iter().zip(&other[w..]).map(|(a, b)| a * b).sum();
        head + tail
    }

    pub fn dot(&self, other: &EmbeddingView<'_>) -> f64 {
        (0..self.shared.len() + self.private.len())
            .map(|k| self.get(k) * other.get(k))
            .sum()
    }
}

/// The blocks of one category, in dump order.
#[derive(Debug, Clone, PartialEq)]
struct CategoryBlocks {
    shared: Matrix,
    private_src: Matrix,
    private_tgt: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledEmbeddings {
    layout: Arc<EmbeddingLayout>,
    blocks: [CategoryBlocks; 3],
    output: Option<Matrix>,
    seed: u64,
}

const MAGIC: &[u8; 4] = b"SPBE";
const FORMAT_VERSION: u32 = 1;

impl AssembledEmbeddings {
    pub fn zeros(layout: Arc<EmbeddingLayout>) -> Self {
        let blocks = RelationCategory::ALL.map(|c| {
            let [s, px, py] = block_shapes(&layout.counts, &layout.config, c);
            CategoryBlocks {
                shared: Matrix::zeros(s.0, s.1),
                private_src: Matrix::zeros(px.0, px.1),
                private_tgt: Matrix::zeros(py.0, py.1),
            }
        });
        let output = (!layout.config.tie_decoder)
            .then(|| Matrix::zeros(layout.counts.tgt_vocab(), layout.config.d));
        AssembledEmbeddings {
            layout,
            blocks,
            output,
            seed: 0,
        }
    }

    /// Random initialization; every stored cell is drawn exactly once.
    pub fn init(layout: Arc<EmbeddingLayout>, seed: u64, scheme: InitScheme) -> Self {
        let mut emb = Self::zeros(layout);
        emb.seed = seed;
        let scale = 1.0 / (emb.layout.config.d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match scheme {
            InitScheme::UniformScaled => {
                let dist = Uniform::new_inclusive(-scale, scale);
                emb.for_each_block_mut(|_, m| m.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng)));
            }
            InitScheme::NormalScaled => {
                let dist = Normal::new(0.0, scale).expect("positive scale");
                emb.for_each_block_mut(|_, m| m.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng)));
            }
        }
        emb
    }

    /// A zeroed buffer with the same layout, used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &EmbeddingLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<EmbeddingLayout> {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn d(&self) -> usize {
        self.layout.config.d
    }

    pub fn block(&self, kind: BlockKind) -> Option<&Matrix> {
        match kind {
            BlockKind::Shared(c) => Some(&self.blocks[c.index()].shared),
            BlockKind::PrivateSrc(c) => Some(&self.blocks[c.index()].private_src),
            BlockKind::PrivateTgt(c) => Some(&self.blocks[c.index()].private_tgt),
            BlockKind::Output => self.output.as_ref(),
        }
    }

    pub fn block_mut(&mut self, kind: BlockKind) -> Option<&mut Matrix> {
        match kind {
            BlockKind::Shared(c) => Some(&mut self.blocks[c.index()].shared),
            BlockKind::PrivateSrc(c) => Some(&mut self.blocks[c.index()].private_src),
            BlockKind::PrivateTgt(c) => Some(&mut self.blocks[c.index()].private_tgt),
            BlockKind::Output => self.output.as_mut(),
        }
    }

    /// Every stored block in canonical (dump) order.
    pub fn block_kinds(&self) -> Vec<BlockKind> {
        let mut kinds: Vec<BlockKind> = RelationCategory::ALL
            .iter()
            .flat_map(|&c| [BlockKind::Shared(c), BlockKind::PrivateSrc(c), BlockKind::PrivateTgt(c)])
            .collect();
        if self.output.is_some() {
            kinds.push(BlockKind::Output);
        }
        kinds
    }

    fn for_each_block_mut(&mut self, mut f: impl FnMut(BlockKind, &mut Matrix)) {
        for c in RelationCategory::ALL {
            let b = &mut self.blocks[c.index()];
            f(BlockKind::Shared(c), &mut b.shared);
            f(BlockKind::PrivateSrc(c), &mut b.private_src);
            f(BlockKind::PrivateTgt(c), &mut b.private_tgt);
        }
        if let Some(out) = self.output.as_mut() {
            f(BlockKind::Output, out);
        }
    }

    /// Mutable slices over all storage in canonical order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for b in self.blocks.iter_mut() {
            out.push(b.shared.data.as_mut_slice());
            out.push(b.private_src.data.as_mut_slice());
            out.push(b.private_tgt.data.as_mut_slice());
        }
        if let Some(o) = self.output.as_mut() {
            out.push(o.data.as_mut_slice());
        }
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.block_kinds()
            .into_iter()
            .map(|k| self.block(k).expect("listed block").as_slice())
            .collect()
    }

    /// Total stored scalars.
    pub fn num_scalars(&self) -> usize {
        self.params().iter().map(|s| s.len()).sum()
    }

    pub fn view(&self, side: Side, id: usize) -> Result<EmbeddingView<'_>> {
        let r = self.layout.row_of(side, id)?;
        let b = &self.blocks[r.category.index()];
        let private = match side {
            Side::Src => b.private_src.row(r.row),
            Side::Tgt => b.private_tgt.row(r.row),
        };
        Ok(EmbeddingView {
            shared: b.shared.row(r.row),
            private,
        })
    }

    /// The concatenation `[shared | private]`, always `d` long.
    pub fn lookup(&self, side: Side, id: usize) -> Result<Vec<f64>> {
        Ok(self.view(side, id)?.to_vec())
    }

    pub fn shared_row_mut(&mut self, side: Side, id: usize) -> Result<&mut [f64]> {
        let r = self.layout.row_of(side, id)?;
        Ok(self.blocks[r.category.index()].shared.row_mut(r.row))
    }

    pub fn private_row_mut(&mut self, side: Side, id: usize) -> Result<&mut [f64]> {
        let r = self.layout.row_of(side, id)?;
        let b = &mut self.blocks[r.category.index()];
        Ok(match side {
            Side::Src => b.private_src.row_mut(r.row),
            Side::Tgt => b.private_tgt.row_mut(r.row),
        })
    }

    /// Row `id` of the output projection: the separate output block when
    /// untied, otherwise the target embedding.
    pub fn output_view(&self, id: usize) -> Result<EmbeddingView<'_>> {
        match &self.output {
            Some(out) => {
                if id >= out.rows {
                    return Err(Error::Bounds {
                        what: "output projection",
                        index: id,
                        len: out.rows,
                    });
                }
                Ok(EmbeddingView {
                    shared: &[],
                    private: out.row(id),
                })
            }
            None => self.view(Side::Tgt, id),
        }
    }

    /// The `|V| x d` matrix whose row `i` is `lookup(side, i)`.
    pub fn assemble_matrix(&self, side: Side) -> Matrix {
        let n = self.layout.vocab_len(side);
        let d = self.d();
        let mut m = Matrix::zeros(n, d);
        for id in 0..n {
            let v = self.view(side, id).expect("id in range");
            let row = m.row_mut(id);
            row[..v.shared.len()].copy_from_slice(v.shared);
            row[v.shared.len()..].copy_from_slice(v.private);
        }
        m
    }

    fn check_grad(&self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.d() {
            return Err(Error::Config(format!(
                "gradient has {} entries, expected {}",
                grad.len(),
                self.d()
            )));
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient entry at {k}")));
        }
        Ok(())
    }

    /// Adds `grad` into the word's storage: the first `w_c` entries into the
    /// shared row, the rest into the side's private row.
    pub fn grad_scatter(&mut self, side: Side, id: usize, grad: &[f64]) -> Result<()> {
        self.check_grad(grad)?;
        let r = self.layout.row_of(side, id)?;
        let b = &mut self.blocks[r.category.index()];
        let w = b.shared.cols;
        for (s, g) in b.shared.row_mut(r.row).iter_mut().zip(&grad[..w]) {
            *s += g;
        }
        let private = match side {
            Side::Src => b.private_src.row_mut(r.row),
            Side::Tgt => b.private_tgt.row_mut(r.row),
        };
        for (p, g) in private.iter_mut().zip(&grad[w..]) {
            *p += g;
        }
        Ok(())
    }

    /// Accumulates into the output projection row `id`.
    pub fn output_grad_scatter(&mut self, id: usize, grad: &[f64]) -> Result<()> {
        self.check_grad(grad)?;
        match self.output.as_mut() {
            Some(out) => {
                if id >= out.rows {
                    return Err(Error::Bounds {
                        what: "output projection",
                        index: id,
                        len: out.rows,
                    });
                }
                for (o, g) in out.row_mut(id).iter_mut().zip(grad) {
                    *o += g;
                }
                Ok(())
            }
            None => self.grad_scatter(Side::Tgt, id, grad),
        }
    }

    /// Binary dump: `SPBE`, version, `d`, `(N_c, w_c)` for lm/wf/ur, surplus
    /// counts (source, target), then each block as little-endian `f32` in the
    /// order `S_lm, Px_lm, Py_lm, S_wf, ...`. Only tied layouts can be dumped.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        if self.output.is_some() {
            return Err(Error::Format(
                "the binary dump covers tied decoder layouts only".into(),
            ));
        }
        let u32_of = |v: usize| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
        };
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&u32_of(self.d())?.to_le_bytes())?;
        for c in RelationCategory::ALL {
            out.write_all(&u32_of(self.layout.counts.pairs[c.index()])?.to_le_bytes())?;
            out.write_all(&u32_of(self.layout.shared_width(c))?.to_le_bytes())?;
        }
        out.write_all(&u32_of(self.layout.counts.surplus_src)?.to_le_bytes())?;
        out.write_all(&u32_of(self.layout.counts.surplus_tgt)?.to_le_bytes())?;
        for block in self.params() {
            for &v in block {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a dump produced for `layout`; the header must agree with it.
    pub fn read_binary<R: Read>(mut input: R, layout: Arc<EmbeddingLayout>) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an SPBE embedding dump".into()));
        }
        let mut read_u32 = || -> Result<usize> {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let version = read_u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let d = read_u32()?;
        let mut header = Vec::new();
        for _ in 0..3 {
            header.push((read_u32()?, read_u32()?));
        }
        let surplus = (read_u32()?, read_u32()?);
        let expect: Vec<(usize, usize)> = RelationCategory::ALL
            .iter()
            .map(|&c| (layout.counts.pairs[c.index()], layout.shared_width(c)))
            .collect();
        if d != layout.d()
            || header != expect
            || surplus != (layout.counts.surplus_src, layout.counts.surplus_tgt)
        {
            return Err(Error::Format(format!(
                "dump header (d={d}, blocks={header:?}, surplus={surplus:?}) does not match the layout"
            )));
        }
        if !layout.config.tie_decoder {
            return Err(Error::Format(
                "the binary dump covers tied decoder layouts only".into(),
            ));
        }
        let mut emb = Self::zeros(layout);
        for block in emb.params_mut() {
            for v in block.iter_mut() {
                let mut b = [0u8; 4];
                input.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b) as f64;
            }
        }
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last block".into()));
        }
        Ok(emb)
    }

    /// Text export: `token<TAB>side<TAB>v1<TAB>...<TAB>vd`, source words then target words.
    pub fn write_tsv<W: Write>(&self, src: &Vocab, tgt: &Vocab, mut out: W) -> Result<()> {
        for (side, vocab) in [(Side::Src, src), (Side::Tgt, tgt)] {
            if vocab.len() != self.layout.vocab_len(side) {
                return Err(Error::Structure(format!(
                    "{} vocabulary has {} entries but the layout has {}",
                    side.as_str(),
                    vocab.len(),
                    self.layout.vocab_len(side)
                )));
            }
            for id in 0..vocab.len() {
                let v = self.lookup(side, id)?;
                write!(out, "{}\t{}", vocab.token(id).unwrap_or_default(), side.as_str())?;
                for x in v {
                    write!(out, "\t{}", x as f32)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}
