//! Frequency-ordered vocabularies.
//!
//! Ids `0..4` are always the reserved tokens `<pad>`, `<unk>`, `<bos>` and
//! `<eos>`, in that order. Every other token follows in order of descending
//! corpus frequency, with ties broken by ascending byte order of the token
//! string. Input text is expected to be tokenized already (BPE pieces such
//! as `Ju@@` are ordinary tokens here).

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Reserved tokens in id order.
pub const SPECIALS: [&str; 4] = [PAD, UNK, BOS, EOS];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
    lang_tag: String,
}

/// Counts whitespace-delimited tokens over every line of `corpus`.
pub fn count_tokens<R: BufRead>(corpus: R) -> Result<HashMap<String, u64>> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for line in corpus.lines() {
        let line = line?;
        for tok in line.split_whitespace() {
            *counts.entry(tok.to_owned()).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

impl Vocab {
    /// Builds a vocabulary holding at most `max_size` entries, specials included.
    pub fn build<R: BufRead>(corpus: R, max_size: usize, min_freq: u64) -> Result<Self> {
        if max_size < SPECIALS.len() {
            return Err(Error::Config(format!(
                "max_size {max_size} is smaller than the {} reserved tokens",
                SPECIALS.len()
            )));
        }
        if min_freq == 0 {
            return Err(Error::Config("min_freq must be positive".into()));
        }
        let counts = count_tokens(corpus)?;
        Ok(Self::from_counts(&counts, max_size, min_freq))
    }

    /// Builds from precomputed counts. Specials in `counts` keep their ids and
    /// pick up their counts; they never compete for a regular slot.
    pub fn from_counts(counts: &HashMap<String, u64>, max_size: usize, min_freq: u64) -> Self {
        let mut regular: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_freq && !SPECIALS.contains(&t.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        regular.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        regular.truncate(max_size.saturating_sub(SPECIALS.len()));

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut freqs: Vec<u64> = SPECIALS
            .iter()
            .map(|s| counts.get(*s).copied().unwrap_or(0))
            .collect();
        for (t, c) in regular {
            tokens.push(t.clone());
            freqs.push(c);
        }
        Self::from_parts(tokens, freqs)
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<u64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens,
            freqs,
            index,
            lang_tag: String::new(),
        }
    }

    pub fn with_lang_tag(mut self, tag: impl Into<String>) -> Self {
        self.lang_tag = tag.into();
        self
    }

    pub fn lang_tag(&self) -> &str {
        &self.lang_tag
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_specials(&self) -> usize {
        SPECIALS.len()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn freq(&self, id: usize) -> u64 {
        self.freqs.get(id).copied().unwrap_or(0)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unknown-token id.
    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn encode_line(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.id_or_unk(t)).collect()
    }

    /// Writes `id<TAB>token<TAB>freq` rows, specials first.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            writeln!(out, "{i}\t{t}\t{f}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(id), Some(tok), Some(freq), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "expected 3 tab-separated columns".into(),
                });
            };
            let id: usize = id.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad id {id:?}"),
            })?;
            if id != tokens.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("ids must be contiguous, expected {} got {id}", tokens.len()),
                });
            }
            let freq: u64 = freq.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad frequency {freq:?}"),
            })?;
            tokens.push(tok.to_owned());
            freqs.push(freq);
        }
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Format(format!(
                "vocabulary must start with the reserved tokens {SPECIALS:?}"
            )));
        }
        let vocab = Self::from_parts(tokens, freqs);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Format("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }
}

/// Fraction of corpus tokens present in `vocab`. An empty corpus counts as fully covered.
pub fn coverage<R: BufRead>(vocab: &Vocab, corpus: R) -> Result<f64> {
    let mut total = 0u64;
    let mut hit = 0u64;
    for line in corpus.lines() {
        let line = line?;
        for tok in line.split_whitespace() {
            total += 1;
            if vocab.id(tok).is_some() {
                hit += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}
