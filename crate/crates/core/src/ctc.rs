//! CTC probability computations: forward marginal, greedy decoding and
//! Viterbi forced alignment.
//!
//! All recursions run over the blank-interleaved label sequence
//! `blank, l1, blank, l2, ..., lU, blank` in the natural-log domain.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::frames::{Alphabet, FrameMatrix};
use crate::logmath::log_add;

fn expand(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// Minimum number of frames a CTC path for `labels` needs.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

#[inline]
fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// `ln P(transcript | frames)` summed over every alignment; `-inf` when the
/// transcript cannot fit in the available frames.
pub fn ctc_forward_logprob(m: &FrameMatrix, transcript: &str, alphabet: &Alphabet) -> Result<f64> {
    m.check_alphabet(alphabet)?;
    let labels = alphabet.encode(transcript)?;
    Ok(forward_labels(m, &labels, alphabet.blank()))
}

pub(crate) fn forward_labels(m: &FrameMatrix, labels: &[usize], blank: usize) -> f64 {
    if min_frames(labels) > m.frames() {
        return f64::NEG_INFINITY;
    }
    let ext = expand(labels, blank);
    let n = ext.len();
    let mut prev = vec![f64::NEG_INFINITY; n];
    let mut cur = vec![f64::NEG_INFINITY; n];
    prev[0] = m.log_prob(0, ext[0]);
    if n > 1 {
        prev[1] = m.log_prob(0, ext[1]);
    }
    for t in 1..m.frames() {
        for s in 0..n {
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(&ext, s, blank) {
                acc = log_add(acc, prev[s - 2]);
            }
            cur[s] = if acc == f64::NEG_INFINITY {
                acc
            } else {
                acc + m.log_prob(t, ext[s])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    if n > 1 {
        log_add(prev[n - 1], prev[n - 2])
    } else {
        prev[0]
    }
}

/// Collapses a frame-level label path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = None;
    for &k in path {
        if Some(k) != last && k != blank {
            out.push(k);
        }
        last = Some(k);
    }
    out
}

pub fn greedy_labels(m: &FrameMatrix, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = (0..m.frames()).map(|t| m.argmax(t).0).collect();
    collapse(&path, blank)
}

/// Per-frame argmax followed by the CTC collapse.
pub fn greedy_decode(m: &FrameMatrix, alphabet: &Alphabet) -> String {
    alphabet.decode(&greedy_labels(m, alphabet.blank()))
}

/// Frames owned by each character of a hypothesis under the best CTC path.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub char_to_frames: Vec<Range<usize>>,
    /// Log-probability of the single best path.
    pub log_prob: f64,
}

/// Most probable CTC path collapsing to `hypothesis`. Among equally probable
/// paths the one that leaves each label latest wins.
pub fn viterbi_align(m: &FrameMatrix, hypothesis: &str, alphabet: &Alphabet) -> Result<Alignment> {
    m.check_alphabet(alphabet)?;
    let labels = alphabet.encode(hypothesis)?;
    viterbi_labels(m, &labels, alphabet.blank())
}

pub(crate) fn viterbi_labels(m: &FrameMatrix, labels: &[usize], blank: usize) -> Result<Alignment> {
    let frames = m.frames();
    if min_frames(labels) > frames {
        return Err(Error::Infeasible {
            chars: labels.len(),
            frames,
        });
    }
    let ext = expand(labels, blank);
    let n = ext.len();
    // back[t * n + s]: predecessor state at t - 1
    let mut back = vec![0usize; frames * n];
    let mut prev = vec![f64::NEG_INFINITY; n];
    let mut cur = vec![f64::NEG_INFINITY; n];
    prev[0] = m.log_prob(0, ext[0]);
    if n > 1 {
        prev[1] = m.log_prob(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..n {
            let mut best = prev[s];
            let mut from = s;
            if s >= 1 && prev[s - 1] > best {
                best = prev[s - 1];
                from = s - 1;
            }
            if can_skip(&ext, s, blank) && prev[s - 2] > best {
                best = prev[s - 2];
                from = s - 2;
            }
            back[t * n + s] = from;
            cur[s] = if best == f64::NEG_INFINITY {
                best
            } else {
                best + m.log_prob(t, ext[s])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut state = n - 1;
    if n > 1 && prev[n - 2] >= prev[n - 1] {
        state = n - 2;
    }
    let log_prob = prev[state];
    if log_prob == f64::NEG_INFINITY {
        return Err(Error::Infeasible {
            chars: labels.len(),
            frames,
        });
    }
    let mut states = vec![0usize; frames];
    for t in (0..frames).rev() {
        states[t] = state;
        if t > 0 {
            state = back[t * n + state];
        }
    }
    let mut spans: Vec<Range<usize>> = vec![0..0; labels.len()];
    for (t, &s) in states.iter().enumerate() {
        if s % 2 == 1 {
            let c = s / 2;
            if spans[c].is_empty() {
                spans[c] = t..t + 1;
            } else {
                spans[c].end = t + 1;
            }
        }
    }
    Ok(Alignment {
        char_to_frames: spans,
        log_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Alphabet {
        Alphabet::with_blank('-', "ab").unwrap()
    }

    fn two_frame() -> (Alphabet, FrameMatrix) {
        let a = Alphabet::with_blank('-', "a").unwrap();
        let m = FrameMatrix::from_probs("t", &[vec![0.4, 0.6], vec![0.4, 0.6]]).unwrap();
        (a, m)
    }

    #[test]
    fn forward_two_frame_examples() {
        let (a, m) = two_frame();
        // aa, a-, -a: 0.36 + 0.24 + 0.24
        let lp = ctc_forward_logprob(&m, "a", &a).unwrap();
        assert!((lp.exp() - 0.84).abs() < 1e-6);
        assert_eq!(
            ctc_forward_logprob(&m, "aa", &a).unwrap(),
            f64::NEG_INFINITY
        );
        let empty = ctc_forward_logprob(&m, "", &a).unwrap();
        assert!((empty.exp() - 0.16).abs() < 1e-6);
    }

    #[test]
    fn forward_rejects_unknown_chars() {
        let (a, m) = two_frame();
        assert!(matches!(
            ctc_forward_logprob(&m, "z", &a),
            Err(Error::UnknownChar('z'))
        ));
    }

    fn one_hot_rows(path: &[usize], v: usize) -> Vec<Vec<f64>> {
        path.iter()
            .map(|&k| {
                let rest = 0.1 / (v - 1) as f64;
                (0..v).map(|j| if j == k { 0.9 } else { rest }).collect()
            })
            .collect()
    }

    #[test]
    fn greedy_collapse_examples() {
        let a = ab();
        let m = FrameMatrix::from_probs("g", &one_hot_rows(&[1, 1, 0, 2], 3)).unwrap();
        assert_eq!(greedy_decode(&m, &a), "ab");
        let m = FrameMatrix::from_probs("g", &one_hot_rows(&[0, 0], 3)).unwrap();
        assert_eq!(greedy_decode(&m, &a), "");
        let m = FrameMatrix::from_probs("g", &one_hot_rows(&[1, 0, 1], 3)).unwrap();
        assert_eq!(greedy_decode(&m, &a), "aa");
    }

    #[test]
    fn viterbi_single_frame() {
        let a = Alphabet::with_blank('-', "a").unwrap();
        let m = FrameMatrix::from_probs("v", &[vec![0.1, 0.9]]).unwrap();
        let al = viterbi_align(&m, "a", &a).unwrap();
        assert_eq!(al.char_to_frames, vec![0..1]);
        assert!((al.log_prob - 0.9f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn viterbi_three_frames() {
        // Brute force over the expanded-label paths of "ab" in 3 frames gives
        // a a b (0.7 * 0.6 * 0.8 = 0.336) as the unique maximum.
        let a = ab();
        let m = FrameMatrix::from_probs(
            "v",
            &[
                vec![0.1, 0.7, 0.2],
                vec![0.3, 0.6, 0.1],
                vec![0.1, 0.1, 0.8],
            ],
        )
        .unwrap();
        let al = viterbi_align(&m, "ab", &a).unwrap();
        assert_eq!(al.char_to_frames, vec![0..2, 2..3]);
        assert!((al.log_prob.exp() - 0.336).abs() < 1e-6);
    }

    #[test]
    fn viterbi_infeasible() {
        let a = ab();
        let m = FrameMatrix::from_probs("v", &[vec![0.2, 0.5, 0.3]]).unwrap();
        assert!(matches!(
            viterbi_align(&m, "ab", &a),
            Err(Error::Infeasible {
                chars: 2,
                frames: 1
            })
        ));
        let m = FrameMatrix::from_probs("v", &[vec![0.2, 0.5, 0.3], vec![0.2, 0.5, 0.3]]).unwrap();
        assert!(viterbi_align(&m, "aa", &a).is_err());
    }

    #[test]
    fn viterbi_ties_leave_label_late() {
        // Uniform frames: every path of "a" over 2 frames is equally likely;
        // the preferred one stays on `a` through the end.
        let a = Alphabet::with_blank('-', "a").unwrap();
        let m = FrameMatrix::from_probs("v", &[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let al = viterbi_align(&m, "a", &a).unwrap();
        assert_eq!(al.char_to_frames, vec![0..2]);
    }

    #[test]
    fn empty_hypothesis_aligns_to_blanks() {
        let (a, m) = two_frame();
        let al = viterbi_align(&m, "", &a).unwrap();
        assert!(al.char_to_frames.is_empty());
        assert!((al.log_prob.exp() - 0.16).abs() < 1e-6);
    }
}
