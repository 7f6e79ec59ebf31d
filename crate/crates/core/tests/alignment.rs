use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spbwe::align::{estimate, parse_pharaoh, ParallelText};
use spbwe::micronmt::{generate, SyntheticTask, TaskSpec};
use spbwe::vocab::Vocab;

#[test]
fn estimates_ignore_sentence_order() {
    let corpus = generate(&TaskSpec::new(SyntheticTask::Lexicon, 5));
    let src = Vocab::build(corpus.text.src.join("\n").as_bytes(), 8, 1).unwrap();
    let tgt = Vocab::build(corpus.text.tgt.join("\n").as_bytes(), 8, 1).unwrap();
    let model_of = |order: &[usize]| {
        let text = ParallelText {
            src: order.iter().map(|&i| corpus.text.src[i].clone()).collect(),
            tgt: order.iter().map(|&i| corpus.text.tgt[i].clone()).collect(),
        };
        let lines: Vec<&str> = order.iter().map(|&i| corpus.alignments[i].as_str()).collect();
        let links = parse_pharaoh(lines.join("\n").as_bytes(), &text, false).unwrap();
        estimate(&links, &text, &src, &tgt).unwrap()
    };
    let mut order: Vec<usize> = (0..corpus.text.len()).collect();
    let base = model_of(&order);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        order.shuffle(&mut rng);
        assert_eq!(model_of(&order), base);
    }
}

#[test]
fn truncated_vocab_folds_into_unk() {
    let corpus = generate(&TaskSpec::new(SyntheticTask::Copy, 2));
    let src = Vocab::build(corpus.text.src.join("\n").as_bytes(), 6, 1).unwrap();
    let tgt = Vocab::build(corpus.text.tgt.join("\n").as_bytes(), 6, 1).unwrap();
    let links = parse_pharaoh(corpus.alignments.join("\n").as_bytes(), &corpus.text, false).unwrap();
    let model = estimate(&links, &corpus.text, &src, &tgt).unwrap();
    let total: u64 = model.sources().map(|x| model.total(x)).sum();
    let tokens: usize = corpus.text.src.iter().map(|l| l.split_whitespace().count()).sum();
    assert_eq!(total as usize, tokens);
    // Eight of ten words are out of vocabulary.
    assert!(model.total(spbwe::vocab::UNK_ID) > 0);
    assert!(model.prob(spbwe::vocab::UNK_ID, spbwe::vocab::UNK_ID) > 0.5);
}
