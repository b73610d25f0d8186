use atst_core::lm::{
    finalize_log_prob, perplexity, sequence_log_prob, CharLm, LmSymbol, NGramLm, Stage,
};
use atst_core::simulator::{generate_texts, MarkovSource, TextSource};
use atst_core::Alphabet;
use proptest::prelude::*;

fn alphabet() -> Alphabet {
    Alphabet::with_blank('∅', "abc ").unwrap()
}

fn line() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[abc ]{0,12}").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn distributions_normalize(
        corpus in proptest::collection::vec(line(), 1..20),
        extra in proptest::collection::vec(line(), 0..10),
        history in line(),
        order in 1usize..7,
    ) {
        let mut lm = NGramLm::new(&alphabet(), order).unwrap();
        lm.train_stage(&corpus, Stage::Related).unwrap();
        if !extra.is_empty() {
            lm.train_stage(&extra, Stage::Target).unwrap();
        }
        let h: Vec<char> = history.chars().collect();
        let total: f64 = lm.distribution(&h).iter().map(|l| l.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chain_rule(corpus in proptest::collection::vec(line(), 1..20), probe in line()) {
        let mut lm = NGramLm::new(&alphabet(), 3).unwrap();
        lm.train_stage(&corpus, Stage::Target).unwrap();
        let chars: Vec<char> = probe.chars().collect();
        let mut manual = 0.0;
        for i in 0..chars.len() {
            manual += lm.log_prob(&chars[..i], LmSymbol::Char(chars[i]));
        }
        prop_assert!((sequence_log_prob(&lm, &probe) - manual).abs() < 1e-9);
        let eol = lm.log_prob(&chars, LmSymbol::Eol);
        prop_assert!((finalize_log_prob(&lm, &probe) - eol).abs() < 1e-12);
        prop_assert!(sequence_log_prob(&lm, &probe) <= 0.0);
    }

    #[test]
    fn serialization_round_trip(corpus in proptest::collection::vec(line(), 1..10), probe in line()) {
        let mut lm = NGramLm::new(&alphabet(), 4).unwrap();
        lm.train_stage(&corpus, Stage::Related).unwrap();
        let back = NGramLm::from_bytes(&lm.to_bytes()).unwrap();
        prop_assert_eq!(sequence_log_prob(&back, &probe), sequence_log_prob(&lm, &probe));
        prop_assert_eq!(back.stage_weights(), lm.stage_weights());
    }
}

fn chain(letters: &str, seed: u64) -> TextSource {
    let chars: Vec<char> = letters.chars().collect();
    TextSource::Markov(MarkovSource::random(&chars, 2, 12, seed).unwrap())
}

#[test]
fn each_source_prefers_its_own_lm() {
    let a = Alphabet::with_blank('∅', "abcdefgh").unwrap();
    let (s1, s2) = (chain("abcd", 1), chain("efgh", 2));
    let train = |src: &TextSource, seed| {
        let mut lm = NGramLm::new(&a, 3).unwrap();
        lm.train_stage(&generate_texts(src, 300, seed).unwrap(), Stage::Target)
            .unwrap();
        lm
    };
    let (lm1, lm2) = (train(&s1, 10), train(&s2, 11));
    let (t1, t2) = (
        generate_texts(&s1, 100, 20).unwrap(),
        generate_texts(&s2, 100, 21).unwrap(),
    );
    assert!(perplexity(&lm1, &t1) < perplexity(&lm2, &t1));
    assert!(perplexity(&lm2, &t2) < perplexity(&lm1, &t2));
}

#[test]
fn stage_tuning_favours_matching_stage() {
    let a = Alphabet::with_blank('∅', "abcdefgh").unwrap();
    let (s1, s2) = (chain("abcd", 1), chain("efgh", 2));
    let mut lm = NGramLm::new(&a, 3).unwrap();
    lm.train_stage(&generate_texts(&s1, 300, 3).unwrap(), Stage::Related)
        .unwrap();
    lm.train_stage(&generate_texts(&s2, 300, 4).unwrap(), Stage::Target)
        .unwrap();
    let w = lm
        .tune_stage_weights(&generate_texts(&s2, 50, 5).unwrap())
        .unwrap();
    assert!(w[2] > w[0], "{w:?}");
    assert_eq!(w[1], 0.0);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
