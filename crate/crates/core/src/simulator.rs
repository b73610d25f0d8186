//! Synthetic optical model: turns text into frame matrices with controllable,
//! per-line graded noise, plus small text sources to feed it.
//!
//! Each character occupies a random number of identical frames. Blank gets
//! `blank_floor`; of the noise mass `eps`, a random share goes to a look-alike
//! symbol and the rest is spread over the other non-blank symbols. The shown
//! pair is calibrated: the truth holds the larger mass `1 - eps - blank_floor`
//! with probability proportional to it, otherwise the look-alike does.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{
    frames_path_for, write_alphabet, write_frame_matrix, Alphabet, CorpusManifest, FrameMatrix,
    LineRecord, Origin,
};
use crate::par::Execution;
use crate::seed;

/// Mass mixed uniformly into every frame so all log-probabilities stay finite.
const FLOOR: f64 = 1e-9;
const MAX_EPSILON: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Noise mass moved off the true character.
    pub epsilon: f64,
    /// Half-width of the range each line's own noise level is drawn from.
    pub jitter: f64,
    pub min_frames_per_char: usize,
    pub max_frames_per_char: usize,
    /// Probability of a blank frame between two different characters.
    pub blank_gap_prob: f64,
    /// Blank mass inside character frames.
    pub blank_floor: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            jitter: 0.0,
            min_frames_per_char: 2,
            max_frames_per_char: 3,
            blank_gap_prob: 0.5,
            blank_floor: 0.05,
        }
    }
}

impl SimParams {
    pub fn noiseless() -> Self {
        Self {
            epsilon: 0.0,
            blank_floor: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name} = {v} outside [0, 1)")))
            }
        };
        prob("epsilon", self.epsilon)?;
        prob("blank_gap_prob", self.blank_gap_prob)?;
        prob("blank_floor", self.blank_floor)?;
        if self.jitter.is_nan() || self.jitter < 0.0 {
            return Err(Error::InvalidParam("jitter must be non-negative".into()));
        }
        if self.min_frames_per_char == 0 || self.min_frames_per_char > self.max_frames_per_char {
            return Err(Error::InvalidParam(format!(
                "frames per character range [{}, {}] is invalid",
                self.min_frames_per_char, self.max_frames_per_char
            )));
        }
        if self.epsilon + self.blank_floor >= 1.0 {
            return Err(Error::InvalidParam(
                "epsilon + blank_floor must stay below 1".into(),
            ));
        }
        Ok(())
    }

    fn line_epsilon(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.jitter == 0.0 {
            return self.epsilon;
        }
        let cap = (1.0 - self.blank_floor - 1e-3).min(MAX_EPSILON);
        let lo = (self.epsilon - self.jitter).max(0.0);
        let hi = (self.epsilon + self.jitter).min(cap);
        if hi <= lo {
            lo.min(cap)
        } else {
            rng.random_range(lo..hi)
        }
    }
}

fn finish_row(mut row: Vec<f64>) -> Vec<f64> {
    let v = row.len() as f64;
    let sum: f64 = row.iter().sum();
    for p in &mut row {
        *p = (1.0 - FLOOR) * (*p / sum) + FLOOR / v;
    }
    row
}

/// Frame matrix for `text`, deterministic in `seed`.
pub fn simulate_line(
    line_id: &str,
    text: &str,
    alphabet: &Alphabet,
    params: &SimParams,
    seed: u64,
) -> Result<FrameMatrix> {
    params.validate()?;
    let labels = alphabet.encode(text)?;
    let mut rng = seed::rng(seed);
    let eps = params.line_epsilon(&mut rng);
    let v = alphabet.len();
    let blank = alphabet.blank();
    let others: Vec<usize> = (0..v).filter(|&k| k != blank).collect();

    let blank_row = || {
        let noise = eps / 2.0;
        let mut row = vec![noise / others.len() as f64; v];
        row[blank] = 1.0 - noise;
        finish_row(row)
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        if i > 0 {
            let repeat = labels[i - 1] == label;
            if repeat || rng.random_bool(params.blank_gap_prob) {
                rows.push(blank_row());
            }
        }
        let rivals: Vec<usize> = others.iter().copied().filter(|&k| k != label).collect();
        let row = match rivals.choose(&mut rng).copied() {
            Some(confuser) => {
                let top = 1.0 - eps - params.blank_floor;
                let rival = eps * rng.random::<f64>();
                // The pair (top, rival) is shown; the truth is the top symbol
                // with probability top / (top + rival).
                let truth_on_top = rng.random::<f64>() * (top + rival) < top;
                let (shown, hidden) = if truth_on_top {
                    (label, confuser)
                } else {
                    (confuser, label)
                };
                let mut row = vec![0.0; v];
                row[shown] = top;
                row[hidden] = rival;
                row[blank] = params.blank_floor;
                let rest: Vec<usize> = rivals.iter().copied().filter(|&k| k != confuser).collect();
                if rest.is_empty() {
                    row[blank] += eps - rival;
                } else {
                    for &k in &rest {
                        row[k] += (eps - rival) / rest.len() as f64;
                    }
                }
                finish_row(row)
            }
            None => {
                let mut row = vec![0.0; v];
                row[label] = 1.0 - params.blank_floor;
                row[blank] = params.blank_floor;
                finish_row(row)
            }
        };
        let frames = rng.random_range(params.min_frames_per_char..=params.max_frames_per_char);
        rows.extend(std::iter::repeat_n(row, frames));
    }
    if rows.is_empty() {
        rows.push(blank_row());
    }
    FrameMatrix::from_probs(line_id, &rows)
}

/// Line ids are `{prefix}{index:06}`.
pub fn line_id(prefix: &str, index: usize) -> String {
    format!("{prefix}{index:06}")
}

/// Simulates every text, writing `frames/<id>.fpm` and `alphabet.json` under
/// `out_dir`. The returned manifest uses paths relative to `out_dir` and keeps
/// the true transcripts.
#[allow(clippy::too_many_arguments)]
pub fn simulate_corpus(
    texts: &[String],
    alphabet: &Alphabet,
    params: &SimParams,
    seed: u64,
    out_dir: &Path,
    prefix: &str,
    origin: Origin,
    exec: Execution,
) -> Result<CorpusManifest> {
    params.validate()?;
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    write_alphabet(alphabet, out_dir.join("alphabet.json"))?;
    let records = exec.map_indexed(texts.len(), |i| -> Result<LineRecord> {
        let id = line_id(prefix, i);
        let m = simulate_line(
            &id,
            &texts[i],
            alphabet,
            params,
            seed::index_seed(seed, i as u64),
        )?;
        write_frame_matrix(&m, frames_path_for(&frames_dir, &id))?;
        let mut r = LineRecord::new(&id, frames_path_for(Path::new("frames"), &id), origin);
        r.transcript = Some(texts[i].clone());
        Ok(r)
    });
    let mut manifest = CorpusManifest::new("alphabet.json", 0);
    manifest.records = records.into_iter().collect::<Result<_>>()?;
    Ok(manifest)
}

/// First-order character Markov chain with an end-of-line event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSource {
    /// Successor weights per context; `None` is begin-of-line as context and
    /// end-of-line as successor.
    transitions: BTreeMap<Option<char>, Vec<(Option<char>, f64)>>,
    max_len: usize,
}

impl MarkovSource {
    pub fn new(
        transitions: BTreeMap<Option<char>, Vec<(Option<char>, f64)>>,
        max_len: usize,
    ) -> Result<Self> {
        if !transitions.contains_key(&None) {
            return Err(Error::InvalidParam(
                "Markov source needs a begin-of-line row".into(),
            ));
        }
        for (ctx, succ) in &transitions {
            if succ.is_empty() || succ.iter().any(|(_, w)| w.is_nan() || *w <= 0.0) {
                return Err(Error::InvalidParam(format!(
                    "successors of {ctx:?} need positive weights"
                )));
            }
        }
        Ok(Self {
            transitions,
            max_len,
        })
    }

    /// Sparse random chain: each character has `branching` successors and
    /// lines end with probability `1 / mean_len` after each character.
    pub fn random(chars: &[char], branching: usize, mean_len: usize, seed: u64) -> Result<Self> {
        if chars.is_empty() || branching == 0 || mean_len == 0 {
            return Err(Error::InvalidParam("empty Markov source".into()));
        }
        let mut rng = seed::rng(seed);
        let p_end = 1.0 / mean_len as f64;
        let mut transitions = BTreeMap::new();
        let pick = |rng: &mut ChaCha8Rng, with_end: bool| {
            let mut succ: Vec<(Option<char>, f64)> = chars
                .choose_multiple(rng, branching.min(chars.len()))
                .map(|&c| (Some(c), rng.random_range(0.2..1.0)))
                .collect();
            let total: f64 = succ.iter().map(|(_, w)| w).sum();
            let keep = if with_end { 1.0 - p_end } else { 1.0 };
            for (_, w) in &mut succ {
                *w *= keep / total;
            }
            if with_end {
                succ.push((None, p_end));
            }
            succ
        };
        transitions.insert(None, pick(&mut rng, false));
        for &c in chars {
            transitions.insert(Some(c), pick(&mut rng, true));
        }
        Self::new(transitions, mean_len * 4)
    }

    fn sample_line(&self, rng: &mut ChaCha8Rng) -> String {
        let mut out = String::new();
        let mut ctx = None;
        while out.chars().count() < self.max_len {
            let succ = &self.transitions[&ctx];
            let next = succ
                .choose_weighted(rng, |(_, w)| *w)
                .map(|(c, _)| *c)
                .expect("weights validated");
            match next {
                None => break,
                Some(c) => {
                    out.push(c);
                    // Contexts without a row end the line.
                    if !self.transitions.contains_key(&Some(c)) {
                        break;
                    }
                    ctx = Some(c);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Markov(MarkovSource),
    /// Lines of space-separated words drawn uniformly from a list.
    Words {
        words: Vec<String>,
        min_words: usize,
        max_words: usize,
    },
}

pub fn generate_texts(source: &TextSource, count: usize, seed: u64) -> Result<Vec<String>> {
    let mut rng = seed::rng(seed);
    match source {
        TextSource::Markov(chain) => Ok((0..count).map(|_| chain.sample_line(&mut rng)).collect()),
        TextSource::Words {
            words,
            min_words,
            max_words,
        } => {
            if words.is_empty() || *min_words == 0 || min_words > max_words {
                return Err(Error::InvalidParam("invalid word source".into()));
            }
            Ok((0..count)
                .map(|_| {
                    let n = rng.random_range(*min_words..=*max_words);
                    (0..n)
                        .map(|_| words.choose(&mut rng).expect("non-empty").as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect())
        }
    }
}

/// Seed of the Markov chain behind the standard fixture.
pub const STANDARD_SOURCE_SEED: u64 = 1;

/// Text source of the standard fixture: a sparse first-order chain over the
/// default alphabet, three successors per character, lines of about 30
/// characters.
pub fn standard_source() -> TextSource {
    let chars: Vec<char> = default_alphabet().chars().collect();
    TextSource::Markov(
        MarkovSource::random(&chars, 3, 30, STANDARD_SOURCE_SEED).expect("valid source"),
    )
}

/// Noise of the standard fixture: each line's noise level is drawn from
/// `[0.05, 0.65]`.
pub fn standard_params() -> SimParams {
    SimParams {
        epsilon: 0.35,
        jitter: 0.3,
        ..SimParams::default()
    }
}

/// Blank `∅`, lowercase ASCII letters and space.
pub fn default_alphabet() -> Alphabet {
    Alphabet::with_blank('∅', "abcdefghijklmnopqrstuvwxyz ").expect("valid alphabet")
}

const WORDS: &str = "the of and to in is was for that with as on by at from his her which \
    this be are were had not but have or one all their they been has an who would there when \
    more will its time only into other some could than them these two may then first any new \
    like our over such after years most where made many before must through back much great \
    well also should between each those people state under never same another while last \
    might house world still small found every place again court letter paper hand public \
    order power should being against country without present during general ought shall \
    written letters reason design others nothing himself whole business certain matter";

/// A fixed English word list for demo corpora.
pub fn default_words() -> Vec<String> {
    WORDS.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::greedy_decode;

    #[test]
    fn noiseless_round_trip() {
        let a = default_alphabet();
        let p = SimParams {
            min_frames_per_char: 1,
            max_frames_per_char: 1,
            blank_gap_prob: 0.0,
            ..SimParams::noiseless()
        };
        for (i, text) in ["hello world", "aa", "letter", "", "zz zz"]
            .iter()
            .enumerate()
        {
            let m = simulate_line("x", text, &a, &p, i as u64).unwrap();
            assert_eq!(greedy_decode(&m, &a), *text);
        }
    }

    #[test]
    fn repeats_get_a_blank_gap() {
        let a = default_alphabet();
        let p = SimParams {
            min_frames_per_char: 1,
            max_frames_per_char: 1,
            blank_gap_prob: 0.0,
            ..SimParams::noiseless()
        };
        let m = simulate_line("x", "aa", &a, &p, 0).unwrap();
        assert_eq!(m.frames(), 3);
        assert_eq!(m.argmax(1).0, a.blank());
    }

    #[test]
    fn deterministic_in_seed() {
        let a = default_alphabet();
        let p = SimParams {
            jitter: 0.2,
            ..SimParams::default()
        };
        let m1 = simulate_line("x", "same text", &a, &p, 5).unwrap();
        let m2 = simulate_line("x", "same text", &a, &p, 5).unwrap();
        assert_eq!(m1.to_fpm1_bytes(), m2.to_fpm1_bytes());
    }

    #[test]
    fn out_of_alphabet_text_rejected() {
        let a = default_alphabet();
        assert!(matches!(
            simulate_line("x", "Hello", &a, &SimParams::default(), 0),
            Err(Error::UnknownChar('H'))
        ));
    }

    #[test]
    fn deterministic_markov_source_stays_in_support() {
        let mut t = BTreeMap::new();
        t.insert(None, vec![(Some('a'), 1.0)]);
        t.insert(Some('a'), vec![(Some('b'), 1.0)]);
        t.insert(Some('b'), vec![(None, 1.0)]);
        let src = TextSource::Markov(MarkovSource::new(t, 10).unwrap());
        let texts = generate_texts(&src, 20, 3).unwrap();
        assert!(texts.iter().all(|t| t == "ab"));
    }

    #[test]
    fn generation_is_seeded() {
        let src = TextSource::Words {
            words: default_words(),
            min_words: 2,
            max_words: 6,
        };
        assert_eq!(
            generate_texts(&src, 30, 9).unwrap(),
            generate_texts(&src, 30, 9).unwrap()
        );
        assert_ne!(
            generate_texts(&src, 30, 9).unwrap(),
            generate_texts(&src, 30, 10).unwrap()
        );
        let a = default_alphabet();
        for line in generate_texts(&src, 30, 9).unwrap() {
            assert!(a.encode(&line).is_ok());
        }
    }
}
