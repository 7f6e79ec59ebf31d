//! Word-alignment ingestion and lexical alignment probabilities.
//!
//! Alignments arrive in Pharaoh format: one line per sentence pair, each
//! link written as `i-j` with 0-based source index `i` and target index `j`.
//! `A(y|x)` is the maximum-likelihood estimate over link counts, computed
//! after both sides are mapped onto their vocabularies (out-of-vocabulary
//! tokens fold into `<unk>`).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::vocab::Vocab;

/// Line-aligned source and target text.
#[derive(Debug, Clone, Default)]
pub struct ParallelText {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

impl ParallelText {
    pub fn read<R1: BufRead, R2: BufRead>(src: R1, tgt: R2) -> Result<Self> {
        let src = src.lines().collect::<std::io::Result<Vec<_>>>()?;
        let tgt = tgt.lines().collect::<std::io::Result<Vec<_>>>()?;
        if src.len() != tgt.len() {
            return Err(Error::Structure(format!(
                "source has {} lines but target has {}",
                src.len(),
                tgt.len()
            )));
        }
        Ok(ParallelText { src, tgt })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentenceAlignment {
    pub links: BTreeSet<(usize, usize)>,
}

fn parse_link(tok: &str, line: usize) -> Result<(usize, usize)> {
    let bad = || Error::Parse {
        line,
        msg: format!("malformed link {tok:?}, expected i-j"),
    };
    let (i, j) = tok.split_once('-').ok_or_else(bad)?;
    Ok((i.parse().map_err(|_| bad())?, j.parse().map_err(|_| bad())?))
}

/// Parses Pharaoh alignments and validates every index against the corpus.
///
/// With `reverse`, each `i-j` is read as target-source.
pub fn parse_pharaoh<R: BufRead>(
    lines: R,
    corpus: &ParallelText,
    reverse: bool,
) -> Result<Vec<SentenceAlignment>> {
    let mut out = Vec::with_capacity(corpus.len());
    for (n, line) in lines.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if n >= corpus.len() {
            return Err(Error::Structure(format!(
                "alignment file has more lines than the {}-line corpus",
                corpus.len()
            )));
        }
        let src_len = corpus.src[n].split_whitespace().count();
        let tgt_len = corpus.tgt[n].split_whitespace().count();
        let mut links = BTreeSet::new();
        for tok in line.split_whitespace() {
            let (a, b) = parse_link(tok, lineno)?;
            let (i, j) = if reverse { (b, a) } else { (a, b) };
            if i >= src_len || j >= tgt_len {
                return Err(Error::Validation {
                    line: lineno,
                    msg: format!(
                        "link {tok} out of range for sentence lengths {src_len}/{tgt_len}"
                    ),
                });
            }
            links.insert((i, j));
        }
        out.push(SentenceAlignment { links });
    }
    if out.len() != corpus.len() {
        return Err(Error::Structure(format!(
            "alignment file has {} lines but the corpus has {}",
            out.len(),
            corpus.len()
        )));
    }
    Ok(out)
}

/// Link co-occurrence counts and the normalized `A(y|x)` derived from them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentModel {
    counts: BTreeMap<usize, BTreeMap<usize, u64>>,
}

impl AlignmentModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_count(&mut self, x: usize, y: usize, n: u64) {
        if n > 0 {
            *self.counts.entry(x).or_default().entry(y).or_insert(0) += n;
        }
    }

    /// Builds a model directly from `(x, y, count)` triples.
    pub fn from_counts(entries: impl IntoIterator<Item = (usize, usize, u64)>) -> Self {
        let mut m = Self::new();
        for (x, y, n) in entries {
            m.add_count(x, y, n);
        }
        m
    }

    pub fn count(&self, x: usize, y: usize) -> u64 {
        self.counts
            .get(&x)
            .and_then(|row| row.get(&y))
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self, x: usize) -> u64 {
        self.counts.get(&x).map_or(0, |row| row.values().sum())
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        let total = self.total(x);
        if total == 0 {
            0.0
        } else {
            self.count(x, y) as f64 / total as f64
        }
    }

    /// The candidate set `a(x)` with each candidate's probability, in target-id order.
    pub fn candidates(&self, x: usize) -> Vec<(usize, f64)> {
        let Some(row) = self.counts.get(&x) else {
            return Vec::new();
        };
        let total: u64 = row.values().sum();
        row.iter()
            .map(|(&y, &c)| (y, c as f64 / total as f64))
            .collect()
    }

    pub fn sources(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Writes `x<TAB>y<TAB>count<TAB>prob`, grouped by source id, probability descending.
    pub fn write_tsv<W: Write>(&self, src: &Vocab, tgt: &Vocab, mut out: W) -> Result<()> {
        for (&x, row) in &self.counts {
            let total: u64 = row.values().sum();
            let mut entries: Vec<(usize, u64)> = row.iter().map(|(&y, &c)| (y, c)).collect();
            entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (y, c) in entries {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    src.token(x).unwrap_or("<unk>"),
                    tgt.token(y).unwrap_or("<unk>"),
                    c,
                    c as f64 / total as f64
                )?;
            }
        }
        Ok(())
    }

    /// Reads a probability table. Only the count column is used; the
    /// probabilities are recomputed so that tokens folding into `<unk>` stay normalized.
    pub fn read_tsv<R: BufRead>(input: R, src: &Vocab, tgt: &Vocab) -> Result<Self> {
        let mut m = Self::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: "expected 4 tab-separated columns".into(),
                });
            }
            let count: u64 = cols[2].parse().map_err(|_| Error::Parse {
                line: n + 1,
                msg: format!("bad count {:?}", cols[2]),
            })?;
            m.add_count(src.id_or_unk(cols[0]), tgt.id_or_unk(cols[1]), count);
        }
        Ok(m)
    }
}

/// Counts links over the corpus after mapping tokens to vocabulary ids.
pub fn estimate(
    alignments: &[SentenceAlignment],
    corpus: &ParallelText,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Result<AlignmentModel> {
    if alignments.len() != corpus.len() {
        return Err(Error::Structure(format!(
            "{} alignment lines for {} sentence pairs",
            alignments.len(),
            corpus.len()
        )));
    }
    let mut model = AlignmentModel::new();
    for ((al, s), t) in alignments.iter().zip(&corpus.src).zip(&corpus.tgt) {
        let s = src_vocab.encode_line(s);
        let t = tgt_vocab.encode_line(t);
        for &(i, j) in &al.links {
            let (Some(&x), Some(&y)) = (s.get(i), t.get(j)) else {
                return Err(Error::Structure(format!(
                    "link {i}-{j} does not fit its sentence pair"
                )));
            };
            model.add_count(x, y, 1);
        }
    }
    Ok(model)
}
