//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spbwe::align::AlignmentModel;
use spbwe::embedding::{
    AssembledEmbeddings, BlockKind, EmbeddingLayout, InitScheme, SharingConfig, Side,
};
use spbwe::micronmt::{build_pipeline, generate, MicroModel, Pipeline, SyntheticTask, TaskSpec};
use spbwe::pairing::{PairingTable, RelationCategory, DEFAULT_THRESHOLD};
use spbwe::vocab::Vocab;

pub struct Instance {
    pub src: Vocab,
    pub tgt: Vocab,
    pub model: AlignmentModel,
}

const FORMS: [&str; 10] = ["a", "b", "c", "d", "e", "f", "a@@", "b@@", "gg", "hh"];

fn random_vocab(rng: &mut ChaCha8Rng, max_words: usize) -> Vocab {
    let n = rng.gen_range(0..=max_words);
    let mut counts = HashMap::new();
    while counts.len() < n {
        let form = FORMS[rng.gen_range(0..FORMS.len())];
        counts.insert(form.to_string(), rng.gen_range(1..=4));
    }
    Vocab::from_counts(&counts, usize::MAX, 1)
}

/// Random vocabularies of at most `max_len` entries (specials included) and
/// a sparse random link table, `<unk>` rows and columns included.
pub fn random_instance(rng: &mut ChaCha8Rng, max_len: usize) -> Instance {
    let src = random_vocab(rng, max_len - 4);
    let tgt = random_vocab(rng, max_len - 4);
    let density = rng.gen_range(0.1..0.6);
    let mut entries = Vec::new();
    for x in 1..src.len() {
        for y in 1..tgt.len() {
            if rng.gen_bool(density) {
                entries.push((x, y, rng.gen_range(1..=5u64)));
            }
        }
    }
    Instance {
        src,
        tgt,
        model: AlignmentModel::from_counts(entries),
    }
}

pub fn instances(seed: u64, n: usize, max_len: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_instance(&mut rng, max_len)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePairing {
    /// `(src, tgt, category)` sorted.
    pub pairs: Vec<(usize, usize, RelationCategory)>,
    pub surplus_src: Vec<usize>,
    pub surplus_tgt: Vec<usize>,
}

fn is_special(v: &Vocab, id: usize) -> bool {
    spbwe::vocab::SPECIALS.contains(&v.token(id).unwrap())
}

/// Ordering key of one source's lm outcome; larger is better.
#[derive(Clone, PartialEq)]
struct Key(Option<(f64, u64, u64, String)>);

impl Key {
    fn cmp(&self, other: &Key) -> Ordering {
        match (&self.0, &other.0) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Less,
            (Some(_), None) => Ordering::Greater,
            (Some(a), Some(b)) => a
                .0
                .partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                // smaller token wins
                .then(b.3.cmp(&a.3)),
        }
    }
}

fn cmp_keys(a: &[Key], b: &[Key]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// The lm stage as an exhaustive search: among every one-to-one assignment
/// of eligible links, the one whose per-source outcomes, listed from the
/// most frequent source down, are lexicographically best.
pub fn oracle_lm(inst: &Instance, threshold: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..inst.src.len()).filter(|&x| !is_special(&inst.src, x)).collect();
    order.sort_by(|&a, &b| {
        inst.src
            .freq(b)
            .cmp(&inst.src.freq(a))
            .then_with(|| inst.src.token(a).cmp(&inst.src.token(b)))
    });
    let total = |x: usize| -> u64 { (0..inst.tgt.len()).map(|y| inst.model.count(x, y)).sum() };
    let options: Vec<Vec<(usize, Key)>> = order
        .iter()
        .map(|&x| {
            let t = total(x);
            (0..inst.tgt.len())
                .filter(|&y| !is_special(&inst.tgt, y) && inst.model.count(x, y) > 0)
                .map(|y| {
                    let c = inst.model.count(x, y);
                    (y, c as f64 / t as f64, c)
                })
                .filter(|&(_, p, _)| p >= threshold)
                .map(|(y, p, c)| {
                    let key = Key(Some((p, c, inst.tgt.freq(y), inst.tgt.token(y).unwrap().to_string())));
                    (y, key)
                })
                .collect()
        })
        .collect();

    struct Search<'a> {
        options: &'a [Vec<(usize, Key)>],
        used: Vec<bool>,
        keys: Vec<Key>,
        choice: Vec<Option<usize>>,
        best: Option<(Vec<Key>, Vec<Option<usize>>)>,
    }
    fn go(s: &mut Search<'_>, i: usize) {
        if i == s.options.len() {
            let better = match &s.best {
                None => true,
                Some((k, _)) => cmp_keys(&s.keys, k) == Ordering::Greater,
            };
            if better {
                s.best = Some((s.keys.clone(), s.choice.clone()));
            }
            return;
        }
        s.keys.push(Key(None));
        s.choice.push(None);
        go(s, i + 1);
        s.keys.pop();
        s.choice.pop();
        for (y, key) in &s.options[i] {
            if s.used[*y] {
                continue;
            }
            s.used[*y] = true;
            s.keys.push(key.clone());
            s.choice.push(Some(*y));
            go(s, i + 1);
            s.keys.pop();
            s.choice.pop();
            s.used[*y] = false;
        }
    }
    let mut search = Search {
        options: &options,
        used: vec![false; inst.tgt.len()],
        keys: Vec::new(),
        choice: Vec::new(),
        best: None,
    };
    go(&mut search, 0);
    let (_, choice) = search.best.unwrap();
    order
        .iter()
        .zip(choice)
        .filter_map(|(&x, c)| c.map(|y| (x, y)))
        .collect()
}

/// Full three-stage pairing computed from first principles.
pub fn oracle_pairing(inst: &Instance, threshold: f64) -> OraclePairing {
    let mut pairs: Vec<(usize, usize, RelationCategory)> = oracle_lm(inst, threshold)
        .into_iter()
        .map(|(x, y)| (x, y, RelationCategory::Lm))
        .collect();
    let taken_src = |p: &[(usize, usize, RelationCategory)], x| p.iter().any(|q| q.0 == x);
    let taken_tgt = |p: &[(usize, usize, RelationCategory)], y| p.iter().any(|q| q.1 == y);

    for x in 0..inst.src.len() {
        if taken_src(&pairs, x) {
            continue;
        }
        let form = inst.src.token(x).unwrap();
        if let Some(y) = (0..inst.tgt.len()).find(|&y| !taken_tgt(&pairs, y) && inst.tgt.token(y) == Some(form)) {
            pairs.push((x, y, RelationCategory::Wf));
        }
    }

    let rank = |v: &Vocab, free: Vec<usize>| {
        let mut free = free;
        free.sort_by(|&a, &b| v.freq(b).cmp(&v.freq(a)).then_with(|| v.token(a).cmp(&v.token(b))));
        free
    };
    let src_left = rank(&inst.src, (0..inst.src.len()).filter(|&x| !taken_src(&pairs, x)).collect());
    let tgt_left = rank(&inst.tgt, (0..inst.tgt.len()).filter(|&y| !taken_tgt(&pairs, y)).collect());
    let n = src_left.len().min(tgt_left.len());
    for k in 0..n {
        pairs.push((src_left[k], tgt_left[k], RelationCategory::Ur));
    }
    pairs.sort_by_key(|p| (p.0, p.1));
    OraclePairing {
        pairs,
        surplus_src: src_left[n..].to_vec(),
        surplus_tgt: tgt_left[n..].to_vec(),
    }
}

pub fn table_as_oracle(t: &PairingTable) -> OraclePairing {
    let mut pairs: Vec<_> = t.pairs.iter().map(|p| (p.src_id, p.tgt_id, p.category)).collect();
    pairs.sort_by_key(|p| (p.0, p.1));
    OraclePairing {
        pairs,
        surplus_src: t.surplus_src.clone(),
        surplus_tgt: t.surplus_tgt.clone(),
    }
}

/// Replays the greedy visit: every source that still had an eligible,
/// unclaimed target on its turn must have become an lm pair.
pub fn priority_holds(t: &PairingTable, inst: &Instance) -> bool {
    let lm: HashMap<usize, usize> = t
        .pairs
        .iter()
        .filter(|p| p.category == RelationCategory::Lm)
        .map(|p| (p.src_id, p.tgt_id))
        .collect();
    let mut claimed = vec![false; inst.tgt.len()];
    for x in 0..inst.src.len() {
        if is_special(&inst.src, x) {
            continue;
        }
        let eligible = (0..inst.tgt.len()).any(|y| {
            !claimed[y] && !is_special(&inst.tgt, y) && inst.model.count(x, y) > 0 && inst.model.prob(x, y) >= t.threshold
        });
        match lm.get(&x) {
            Some(&y) => claimed[y] = true,
            None if eligible => return false,
            None => {}
        }
    }
    true
}

/// Every id of each side exactly once across pairs and surplus.
pub fn is_partition(t: &PairingTable, src_len: usize, tgt_len: usize) -> bool {
    let mut s: Vec<usize> = t.pairs.iter().map(|p| p.src_id).chain(t.surplus_src.iter().copied()).collect();
    let mut g: Vec<usize> = t.pairs.iter().map(|p| p.tgt_id).chain(t.surplus_tgt.iter().copied()).collect();
    s.sort_unstable();
    g.sort_unstable();
    s == (0..src_len).collect::<Vec<_>>() && g == (0..tgt_len).collect::<Vec<_>>()
}

/// Stored scalars implied by the block shapes, counted independently of the library.
pub fn oracle_params(pairs: [usize; 3], surplus: usize, d: usize, lambda: [f64; 3], tied: bool, tgt_vocab: usize) -> usize {
    let mut total = 0;
    for c in 0..3 {
        let w = (lambda[c] * d as f64 + 1e-9).floor() as usize;
        let shared = pairs[c] * w;
        let private_src = pairs[c] * (d - w);
        let private_tgt = pairs[c] * (d - w);
        total += shared + private_src + private_tgt;
    }
    // Surplus rows own a full shared row and one private row.
    total += surplus * d;
    if !tied {
        total += tgt_vocab * d;
    }
    total
}

/// A 4-word bijective-lexicon toy at the given sharing.
pub fn lexicon_toy(lambda: [f64; 3], d: usize, seed: u64) -> (MicroModel, Pipeline) {
    let spec = TaskSpec {
        words: 4,
        sentences: 6,
        ..TaskSpec::new(SyntheticTask::Lexicon, seed)
    };
    let p = build_pipeline(&generate(&spec), SharingConfig::new(d, lambda), DEFAULT_THRESHOLD).unwrap();
    let emb = AssembledEmbeddings::init(p.layout.clone(), seed, InitScheme::NormalScaled);
    (MicroModel::new(emb, 1.0), p)
}

/// An unshared model whose every lookup equals `tied`'s.
pub fn untie(tied: &MicroModel, pairing: &PairingTable) -> MicroModel {
    let layout = tied.emb.layout();
    let mut config = *layout.config();
    config.lambda = [0.0; 3];
    let untied_layout = Arc::new(EmbeddingLayout::new(pairing, config).unwrap());
    let mut emb = AssembledEmbeddings::zeros(untied_layout);
    for side in [Side::Src, Side::Tgt] {
        for id in 0..layout.vocab_len(side) {
            let v = tied.emb.lookup(side, id).unwrap();
            emb.private_row_mut(side, id).unwrap().copy_from_slice(&v);
        }
    }
    assert!(emb.block(BlockKind::Shared(RelationCategory::Lm)).unwrap().as_slice().is_empty());
    MicroModel::new(emb, tied.position_scale)
}

/// Final losses of the reference runs under `MicroModelConfig::default()`
/// (d=32, SGD lr 1.0, 2000 full-batch steps, seed 1).
pub const COPY_REFERENCE: f64 = 3.1295096926477775e-4;
pub const LEXICON_REFERENCE: f64 = 4.4750732716897256e-4;
pub const LEXICON_UNSHARED_REFERENCE: f64 = 6.132447695977786e-4;

/// Regression slack on the pinned losses.
pub const REFERENCE_SLACK: f64 = 1.25;

pub fn default_run(task: SyntheticTask, lambda: [f64; 3]) -> spbwe::micronmt::TrainReport {
    let config = spbwe::micronmt::MicroModelConfig::default();
    let (mut model, pipeline) = spbwe::micronmt::toy_model(task, lambda, &config).unwrap();
    spbwe::micronmt::train(&mut model, &pipeline.data, &config).unwrap()
}
