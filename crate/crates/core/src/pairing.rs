//! Exclusive source/target word pairing in three relationship categories.
//!
//! Pairing runs in priority order:
//!
//! 1. **lm** (similar lexical meaning): source words are visited from most
//!    to least frequent and each takes its most probable still-unpaired
//!    aligned target, provided `A(y|x)` reaches the threshold. Ties go to the
//!    more frequent target, then to the smaller token string.
//! 2. **wf** (same word form): among the leftovers, words with byte-identical
//!    surface strings pair up. Reserved tokens pair with each other here.
//! 3. **ur** (unrelated): the remaining words of each side, in frequency
//!    order, pair by rank. The tail of the longer side is surplus.
//!
//! Every word ends up in exactly one pair or in surplus.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::align::AlignmentModel;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

/// Alignment-probability cutoff for lm pairs.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationCategory {
    /// Similar lexical meaning.
    Lm,
    /// Same word form.
    Wf,
    /// Unrelated.
    Ur,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 3] = [Self::Lm, Self::Wf, Self::Ur];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lm => "lm",
            Self::Wf => "wf",
            Self::Ur => "ur",
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" => Ok(Self::Lm),
            "wf" => Ok(Self::Wf),
            "ur" => Ok(Self::Ur),
            other => Err(Error::Config(format!("unknown category {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordPair {
    pub src_id: usize,
    pub tgt_id: usize,
    pub category: RelationCategory,
    /// Present exactly for lm pairs.
    pub align_prob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairingTable {
    pub pairs: Vec<WordPair>,
    pub surplus_src: Vec<usize>,
    pub surplus_tgt: Vec<usize>,
    pub threshold: f64,
}

/// Greedy lm stage. Returns pairs in the order they were made.
pub fn pair_lexical(
    model: &AlignmentModel,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    threshold: f64,
) -> Vec<WordPair> {
    let mut tgt_taken = vec![false; tgt_vocab.len()];
    let mut pairs = Vec::new();
    for x in src_vocab.num_specials()..src_vocab.len() {
        let total = model.total(x);
        if total == 0 {
            continue;
        }
        let mut best: Option<(usize, u64)> = None;
        for (y, p) in model.candidates(x) {
            if y >= tgt_vocab.len() || tgt_vocab.is_special(y) || tgt_taken[y] || p < threshold {
                continue;
            }
            let c = model.count(x, y);
            let better = match best {
                None => true,
                Some((by, bc)) => c
                    .cmp(&bc)
                    .then_with(|| tgt_vocab.freq(y).cmp(&tgt_vocab.freq(by)))
                    .then_with(|| tgt_vocab.token(by).cmp(&tgt_vocab.token(y)))
                    == Ordering::Greater,
            };
            if better {
                best = Some((y, c));
            }
        }
        if let Some((y, _)) = best {
            tgt_taken[y] = true;
            pairs.push(WordPair {
                src_id: x,
                tgt_id: y,
                category: RelationCategory::Lm,
                align_prob: Some(model.prob(x, y)),
            });
        }
    }
    pairs
}

/// Pairs leftover words whose surface strings are identical.
pub fn pair_word_form(
    remaining_src: &[usize],
    remaining_tgt: &[usize],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> Vec<WordPair> {
    let tgt_by_form: HashMap<&str, usize> = remaining_tgt
        .iter()
        .filter_map(|&y| tgt_vocab.token(y).map(|t| (t, y)))
        .collect();
    remaining_src
        .iter()
        .filter_map(|&x| {
            let form = src_vocab.token(x)?;
            tgt_by_form.get(form).map(|&y| WordPair {
                src_id: x,
                tgt_id: y,
                category: RelationCategory::Wf,
                align_prob: None,
            })
        })
        .collect()
}

/// Frequency-rank pairing of the final residues. Returns the pairs and the
/// surplus of each side.
pub fn pair_unrelated(
    remaining_src: &[usize],
    remaining_tgt: &[usize],
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
) -> (Vec<WordPair>, Vec<usize>, Vec<usize>) {
    let by_freq = |v: &Vocab, ids: &[usize]| {
        let mut ids = ids.to_vec();
        ids.sort_by(|&a, &b| v.freq(b).cmp(&v.freq(a)).then(a.cmp(&b)));
        ids
    };
    let src = by_freq(src_vocab, remaining_src);
    let tgt = by_freq(tgt_vocab, remaining_tgt);
    let n = src.len().min(tgt.len());
    let pairs = src
        .iter()
        .zip(&tgt)
        .map(|(&x, &y)| WordPair {
            src_id: x,
            tgt_id: y,
            category: RelationCategory::Ur,
            align_prob: None,
        })
        .collect();
    (pairs, src[n..].to_vec(), tgt[n..].to_vec())
}

fn residue(len: usize, used: &[bool]) -> Vec<usize> {
    (0..len).filter(|&i| !used[i]).collect()
}

/// Runs the three stages in priority order.
pub fn build_pairing(
    model: &AlignmentModel,
    src_vocab: &Vocab,
    tgt_vocab: &Vocab,
    threshold: f64,
) -> Result<PairingTable> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!("invalid threshold {threshold}")));
    }
    let mut src_used = vec![false; src_vocab.len()];
    let mut tgt_used = vec![false; tgt_vocab.len()];
    let mut pairs = pair_lexical(model, src_vocab, tgt_vocab, threshold);
    let mark = |pairs: &[WordPair], su: &mut [bool], tu: &mut [bool]| {
        for p in pairs {
            su[p.src_id] = true;
            tu[p.tgt_id] = true;
        }
    };
    mark(&pairs, &mut src_used, &mut tgt_used);

    let wf = pair_word_form(
        &residue(src_vocab.len(), &src_used),
        &residue(tgt_vocab.len(), &tgt_used),
        src_vocab,
        tgt_vocab,
    );
    mark(&wf, &mut src_used, &mut tgt_used);
    pairs.extend(wf);

    let (ur, surplus_src, surplus_tgt) = pair_unrelated(
        &residue(src_vocab.len(), &src_used),
        &residue(tgt_vocab.len(), &tgt_used),
        src_vocab,
        tgt_vocab,
    );
    pairs.extend(ur);

    let table = PairingTable {
        pairs,
        surplus_src,
        surplus_tgt,
        threshold,
    };
    table.validate(src_vocab.len(), tgt_vocab.len())?;
    Ok(table)
}

impl PairingTable {
    /// Number of pairs per category, indexed by [`RelationCategory::index`].
    pub fn category_counts(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for p in &self.pairs {
            n[p.category.index()] += 1;
        }
        n
    }

    /// Checks that pairs plus surplus partition both vocabularies.
    pub fn validate(&self, src_len: usize, tgt_len: usize) -> Result<()> {
        let mut src_seen = vec![false; src_len];
        let mut tgt_seen = vec![false; tgt_len];
        let claim = |seen: &mut Vec<bool>, id: usize, side: &str| -> Result<()> {
            match seen.get_mut(id) {
                None => Err(Error::Structure(format!("{side} id {id} outside vocabulary"))),
                Some(true) => Err(Error::Structure(format!("{side} id {id} used twice"))),
                Some(s) => {
                    *s = true;
                    Ok(())
                }
            }
        };
        for p in &self.pairs {
            if (p.category == RelationCategory::Lm) != p.align_prob.is_some() {
                return Err(Error::Structure(format!(
                    "pair {}-{}: probability must be present exactly for lm pairs",
                    p.src_id, p.tgt_id
                )));
            }
            claim(&mut src_seen, p.src_id, "source")?;
            claim(&mut tgt_seen, p.tgt_id, "target")?;
        }
        for &x in &self.surplus_src {
            claim(&mut src_seen, x, "source")?;
        }
        for &y in &self.surplus_tgt {
            claim(&mut tgt_seen, y, "target")?;
        }
        if !self.surplus_src.is_empty() && !self.surplus_tgt.is_empty() {
            return Err(Error::Structure("both sides have surplus words".into()));
        }
        if src_seen.iter().chain(&tgt_seen).any(|s| !s) {
            return Err(Error::Structure("pairing does not cover every word".into()));
        }
        Ok(())
    }

    /// `src<TAB>tgt<TAB>category<TAB>prob<TAB>src_freq<TAB>tgt_freq`; the
    /// missing side of a surplus row is `NA`.
    pub fn write_tsv<W: Write>(&self, src: &Vocab, tgt: &Vocab, mut out: W) -> Result<()> {
        let tok = |v: &Vocab, id| v.token(id).unwrap_or("<unk>").to_owned();
        for p in &self.pairs {
            let prob = p.align_prob.map_or_else(|| "NA".to_owned(), |v| v.to_string());
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                tok(src, p.src_id),
                tok(tgt, p.tgt_id),
                p.category,
                prob,
                src.freq(p.src_id),
                tgt.freq(p.tgt_id)
            )?;
        }
        for &x in &self.surplus_src {
            writeln!(out, "{}\tNA\tur\tNA\t{}\tNA", tok(src, x), src.freq(x))?;
        }
        for &y in &self.surplus_tgt {
            writeln!(out, "NA\t{}\tur\tNA\tNA\t{}", tok(tgt, y), tgt.freq(y))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R, src: &Vocab, tgt: &Vocab, threshold: f64) -> Result<Self> {
        let mut table = PairingTable {
            pairs: Vec::new(),
            surplus_src: Vec::new(),
            surplus_tgt: Vec::new(),
            threshold,
        };
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 6 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "expected 6 tab-separated columns".into(),
                });
            }
            let lookup = |v: &Vocab, t: &str| {
                v.id(t).ok_or_else(|| Error::Validation {
                    line: lineno,
                    msg: format!("token {t:?} is not in the vocabulary"),
                })
            };
            let category: RelationCategory = cols[2].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad category {:?}", cols[2]),
            })?;
            match (cols[4] == "NA", cols[5] == "NA") {
                (false, true) => table.surplus_src.push(lookup(src, cols[0])?),
                (true, false) => table.surplus_tgt.push(lookup(tgt, cols[1])?),
                (false, false) => {
                    let align_prob = if cols[3] == "NA" {
                        None
                    } else {
                        Some(cols[3].parse().map_err(|_| Error::Parse {
                            line: lineno,
                            msg: format!("bad probability {:?}", cols[3]),
                        })?)
                    };
                    table.pairs.push(WordPair {
                        src_id: lookup(src, cols[0])?,
                        tgt_id: lookup(tgt, cols[1])?,
                        category,
                        align_prob,
                    });
                }
                (true, true) => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "row has neither side".into(),
                    })
                }
            }
        }
        table.validate(src.len(), tgt.len())?;
        Ok(table)
    }
}
