//! Exhaustive reference implementations used to check the fast code paths,
//! plus random instance generators. Everything here works in the linear
//! probability domain by plain enumeration and shares no code with the
//! library under test.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use atst_core::frames::write_manifest;
use atst_core::simulator::{
    default_alphabet, generate_texts, simulate_corpus, standard_params, standard_source,
};
use atst_core::{seed, Alphabet, Execution, FrameMatrix, Origin};
use rand::Rng;

/// Every label path of length `t` over `v` symbols, in lexicographic order.
pub fn all_paths(t: usize, v: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..t {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..v).map(move |k| {
                    let mut q = p.clone();
                    q.push(k);
                    q
                })
            })
            .collect();
    }
    paths
}

/// Merge repeated labels, then drop blanks.
pub fn naive_collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut merged: Vec<usize> = Vec::new();
    for &k in path {
        if merged.last() != Some(&k) {
            merged.push(k);
        }
    }
    merged.into_iter().filter(|&k| k != blank).collect()
}

pub fn path_prob(m: &FrameMatrix, path: &[usize]) -> f64 {
    path.iter()
        .enumerate()
        .map(|(t, &k)| m.log_prob(t, k).exp())
        .product()
}

/// Sum of the probabilities of all paths collapsing to `labels`.
pub fn brute_force_forward(m: &FrameMatrix, labels: &[usize], blank: usize) -> f64 {
    all_paths(m.frames(), m.num_symbols())
        .iter()
        .filter(|p| naive_collapse(p, blank) == labels)
        .map(|p| path_prob(m, p))
        .sum()
}

/// Largest single path probability among paths collapsing to `labels`.
pub fn brute_force_viterbi(m: &FrameMatrix, labels: &[usize], blank: usize) -> f64 {
    all_paths(m.frames(), m.num_symbols())
        .iter()
        .filter(|p| naive_collapse(p, blank) == labels)
        .map(|p| path_prob(m, p))
        .fold(0.0, f64::max)
}

/// Probability mass of every reachable transcript.
pub fn transcript_masses(m: &FrameMatrix, blank: usize) -> BTreeMap<Vec<usize>, f64> {
    let mut out = BTreeMap::new();
    for p in all_paths(m.frames(), m.num_symbols()) {
        *out.entry(naive_collapse(&p, blank)).or_insert(0.0) += path_prob(m, &p);
    }
    out
}

/// Total mass of the stored matrix, `prod_t sum_k p_tk`.
pub fn matrix_mass(m: &FrameMatrix) -> f64 {
    (0..m.frames())
        .map(|t| {
            (0..m.num_symbols())
                .map(|k| m.log_prob(t, k).exp())
                .sum::<f64>()
        })
        .product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleHypothesis {
    pub text: String,
    /// `ln` of the transcript mass plus `beta * length`.
    pub score: f64,
}

/// All transcripts ranked by `ln mass + beta * len`, higher first, equal
/// scores by text.
pub fn oracle_ranking(m: &FrameMatrix, alphabet: &Alphabet, beta: f64) -> Vec<OracleHypothesis> {
    let mut out: Vec<OracleHypothesis> = transcript_masses(m, alphabet.blank())
        .into_iter()
        .map(|(labels, mass)| OracleHypothesis {
            score: mass.ln() + beta * labels.len() as f64,
            text: labels.iter().map(|&k| alphabet.symbol(k)).collect(),
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.text.cmp(&b.text))
    });
    out
}

/// Unit-cost Levenshtein distance by unmemoized recursion.
pub fn naive_edit_distance(a: &[char], b: &[char]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = naive_edit_distance(ra, rb) + usize::from(x != y);
            let del = naive_edit_distance(ra, b) + 1;
            let ins = naive_edit_distance(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every string over `letters` with length at most `max_len`.
pub fn all_strings(letters: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut layer = vec![String::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| {
                letters.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

/// Alphabet of `v` symbols `∅, a, b, ...` with the blank at `blank_index`.
pub fn small_alphabet(v: usize, blank_index: usize) -> Alphabet {
    let mut symbols: Vec<char> = "abcdefgh".chars().take(v - 1).collect();
    symbols.insert(blank_index, '∅');
    Alphabet::new(symbols, blank_index).expect("valid alphabet")
}

/// Random `t x v` matrix with rows drawn uniformly from the simplex interior.
pub fn random_matrix<R: Rng>(rng: &mut R, t: usize, v: usize) -> FrameMatrix {
    let rows: Vec<Vec<f64>> = (0..t)
        .map(|_| {
            let w: Vec<f64> = (0..v)
                .map(|_| -rng.random_range(1e-3..1.0f64).ln())
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    FrameMatrix::from_probs("random", &rows).expect("valid rows")
}

/// Random instance: alphabet with 2 or 3 symbols, blank anywhere, `1..=max_t`
/// frames.
pub fn random_instance<R: Rng>(rng: &mut R, max_t: usize) -> (Alphabet, FrameMatrix) {
    let v = rng.random_range(2..=3);
    let alphabet = small_alphabet(v, rng.random_range(0..v));
    let t = rng.random_range(1..=max_t);
    (alphabet, random_matrix(rng, t, v))
}

/// Simulated corpora on disk, laid out like a real run.
pub struct Corpora {
    pub root: PathBuf,
    pub alphabet: PathBuf,
    pub unannotated: PathBuf,
    pub validation: PathBuf,
    pub seed: PathBuf,
}

#[derive(Debug, Clone, Copy)]
pub struct CorporaSpec {
    pub unannotated: usize,
    pub validation: usize,
    pub seed: usize,
    pub seed_value: u64,
}

/// Writes unannotated, validation and annotated seed corpora drawn from the
/// standard source with standard noise. Every line keeps its true transcript.
pub fn write_standard_corpora(root: &Path, spec: CorporaSpec) -> Corpora {
    let alphabet = default_alphabet();
    let source = standard_source();
    let params = standard_params();
    let part = |name: &str, n: usize, origin: Origin, salt: u64| {
        let dir = root.join(name);
        let texts =
            generate_texts(&source, n, seed::index_seed(spec.seed_value, salt)).expect("texts");
        let manifest = simulate_corpus(
            &texts,
            &alphabet,
            &params,
            seed::index_seed(spec.seed_value, salt + 100),
            &dir,
            name,
            origin,
            Execution::Parallel,
        )
        .expect("simulated corpus");
        let path = dir.join("manifest.jsonl");
        write_manifest(&manifest, &path).expect("manifest written");
        path
    };
    let unannotated = part(
        "unannotated",
        spec.unannotated,
        Origin::TargetUnannotated,
        1,
    );
    let validation = part("validation", spec.validation, Origin::TargetAnnotated, 2);
    let seed = part("seed", spec.seed, Origin::TargetAnnotated, 3);
    Corpora {
        root: root.to_path_buf(),
        alphabet: root.join("unannotated").join("alphabet.json"),
        unannotated,
        validation,
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_rule() {
        assert_eq!(naive_collapse(&[1, 1, 0, 2], 0), vec![1, 2]);
        assert_eq!(naive_collapse(&[1, 0, 1], 0), vec![1, 1]);
        assert_eq!(naive_collapse(&[0, 0], 0), Vec::<usize>::new());
    }

    #[test]
    fn counts() {
        assert_eq!(all_paths(3, 2).len(), 8);
        assert_eq!(all_strings(&['a', 'b', 'c'], 2).len(), 1 + 3 + 9);
    }

    #[test]
    fn edit_distance_basics() {
        let c = |s: &str| s.chars().collect::<Vec<_>>();
        assert_eq!(naive_edit_distance(&c("kitten"), &c("sitting")), 3);
        assert_eq!(naive_edit_distance(&c(""), &c("ab")), 2);
    }
}
