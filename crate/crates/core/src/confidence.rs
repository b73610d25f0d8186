//! Line-level transcription confidence measures.
//!
//! Every measure maps a frame matrix to a score in `[0, 1]` that predicts how
//! accurate the greedy transcription of the line is. Four of them only look at
//! the per-frame maxima `m_t`; the other two use CTC marginals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ctc::{forward_labels, greedy_labels, viterbi_labels};
use crate::decoder::{prefix_search_decode, DecodeParams};
use crate::error::{Error, Result};
use crate::eval::cer;
use crate::frames::{read_frame_matrix, Alphabet, CorpusManifest, FrameMatrix};
use crate::logmath::log_sum_exp;
use crate::par::Execution;

/// Beam width used by the posterior measure unless configured otherwise.
pub const DEFAULT_POSTERIOR_BEAM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    CtcLoss,
    Posterior,
    ProbsMean,
    CharProbsMean,
    InliersRate,
    WorstBest,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 6] = [
        MeasureKind::CtcLoss,
        MeasureKind::Posterior,
        MeasureKind::ProbsMean,
        MeasureKind::CharProbsMean,
        MeasureKind::InliersRate,
        MeasureKind::WorstBest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::CtcLoss => "ctc-loss",
            MeasureKind::Posterior => "posterior",
            MeasureKind::ProbsMean => "probs-mean",
            MeasureKind::CharProbsMean => "char-probs-mean",
            MeasureKind::InliersRate => "inliers-rate",
            MeasureKind::WorstBest => "worst-best",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown confidence measure {s:?}")))
    }
}

/// Maximum-likelihood Gaussian over pooled frame maxima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceMeasure {
    CtcLoss,
    Posterior { beam_width: usize },
    ProbsMean,
    CharProbsMean,
    InliersRate { fit: Option<Gaussian> },
    WorstBest,
}

impl ConfidenceMeasure {
    /// Measure with default parameters; inliers rate starts unfitted.
    pub fn from_kind(kind: MeasureKind) -> Self {
        match kind {
            MeasureKind::CtcLoss => ConfidenceMeasure::CtcLoss,
            MeasureKind::Posterior => ConfidenceMeasure::Posterior {
                beam_width: DEFAULT_POSTERIOR_BEAM,
            },
            MeasureKind::ProbsMean => ConfidenceMeasure::ProbsMean,
            MeasureKind::CharProbsMean => ConfidenceMeasure::CharProbsMean,
            MeasureKind::InliersRate => ConfidenceMeasure::InliersRate { fit: None },
            MeasureKind::WorstBest => ConfidenceMeasure::WorstBest,
        }
    }

    pub fn kind(&self) -> MeasureKind {
        match self {
            ConfidenceMeasure::CtcLoss => MeasureKind::CtcLoss,
            ConfidenceMeasure::Posterior { .. } => MeasureKind::Posterior,
            ConfidenceMeasure::ProbsMean => MeasureKind::ProbsMean,
            ConfidenceMeasure::CharProbsMean => MeasureKind::CharProbsMean,
            ConfidenceMeasure::InliersRate { .. } => MeasureKind::InliersRate,
            ConfidenceMeasure::WorstBest => MeasureKind::WorstBest,
        }
    }

    /// Whether a corpus-level fit pass must run before scoring.
    pub fn needs_fit(&self) -> bool {
        matches!(self, ConfidenceMeasure::InliersRate { fit: None })
    }

    pub fn score(&self, m: &FrameMatrix, alphabet: &Alphabet) -> Result<f64> {
        m.check_alphabet(alphabet)?;
        Ok(match *self {
            ConfidenceMeasure::CtcLoss => conf_ctc_loss(m, alphabet),
            ConfidenceMeasure::Posterior { beam_width } => conf_posterior(m, alphabet, beam_width)?,
            ConfidenceMeasure::ProbsMean => conf_probs_mean(m),
            ConfidenceMeasure::CharProbsMean => conf_char_probs_mean(m, alphabet),
            ConfidenceMeasure::InliersRate { fit } => {
                conf_inliers_rate(m, fit.ok_or(Error::MissingFit)?)
            }
            ConfidenceMeasure::WorstBest => conf_worst_best(m, alphabet),
        })
    }
}

fn unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Length-normalized CTC probability of the greedy hypothesis.
pub fn conf_ctc_loss(m: &FrameMatrix, alphabet: &Alphabet) -> f64 {
    let labels = greedy_labels(m, alphabet.blank());
    let lp = forward_labels(m, &labels, alphabet.blank());
    unit((lp / labels.len().max(1) as f64).exp())
}

/// Share of the beam's optical mass held by the greedy hypothesis; zero when
/// the greedy hypothesis did not survive the beam.
pub fn conf_posterior(m: &FrameMatrix, alphabet: &Alphabet, beam_width: usize) -> Result<f64> {
    let greedy = alphabet.decode(&greedy_labels(m, alphabet.blank()));
    let hyps = prefix_search_decode(m, alphabet, None, DecodeParams::optical(beam_width))?;
    let Some(own) = hyps.iter().find(|h| h.text == greedy) else {
        return Ok(0.0);
    };
    let scores: Vec<f64> = hyps.iter().map(|h| h.optical_log_score).collect();
    Ok(unit((own.optical_log_score - log_sum_exp(&scores)).exp()))
}

pub fn conf_probs_mean(m: &FrameMatrix) -> f64 {
    let maxima = m.maxima();
    unit(maxima.iter().sum::<f64>() / maxima.len() as f64)
}

/// Mean of `m_t` over frames whose argmax is not blank; zero if there are none.
pub fn conf_char_probs_mean(m: &FrameMatrix, alphabet: &Alphabet) -> f64 {
    let (sum, n) = (0..m.frames())
        .map(|t| m.argmax(t))
        .filter(|(k, _)| *k != alphabet.blank())
        .fold((0.0, 0usize), |(s, n), (_, p)| (s + p, n + 1));
    if n == 0 {
        0.0
    } else {
        unit(sum / n as f64)
    }
}

/// Population mean and standard deviation of all frame maxima in `corpus`.
pub fn fit_inliers_gaussian<'a, I>(corpus: I) -> Result<Gaussian>
where
    I: IntoIterator<Item = &'a FrameMatrix>,
{
    let maxima: Vec<f64> = corpus.into_iter().flat_map(FrameMatrix::maxima).collect();
    gaussian_from_values(&maxima)
}

pub fn gaussian_from_values(values: &[f64]) -> Result<Gaussian> {
    if values.is_empty() {
        return Err(Error::Empty("no frames to fit the inliers Gaussian"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Gaussian {
        mean,
        std_dev: var.sqrt(),
    })
}

/// Fraction of frames whose maximum lies within two standard deviations of
/// the fitted mean. A degenerate fit (σ < 1e-12) accepts every frame.
pub fn conf_inliers_rate(m: &FrameMatrix, fit: Gaussian) -> f64 {
    inliers_rate_of(&m.maxima(), fit)
}

pub(crate) fn inliers_rate_of(maxima: &[f64], fit: Gaussian) -> f64 {
    if fit.std_dev < 1e-12 {
        return 1.0;
    }
    let bound = 2.0 * fit.std_dev;
    let inside = maxima
        .iter()
        .filter(|&&v| (v - fit.mean).abs() <= bound)
        .count();
    inside as f64 / maxima.len() as f64
}

/// Minimum over greedy characters of the best `m_t` among the frames the
/// Viterbi alignment assigns to that character; zero for an empty hypothesis.
pub fn conf_worst_best(m: &FrameMatrix, alphabet: &Alphabet) -> f64 {
    let labels = greedy_labels(m, alphabet.blank());
    if labels.is_empty() {
        return 0.0;
    }
    // The greedy path itself collapses to `labels`, so alignment always succeeds.
    let alignment =
        viterbi_labels(m, &labels, alphabet.blank()).expect("greedy hypothesis is alignable");
    let maxima = m.maxima();
    let worst = alignment
        .char_to_frames
        .iter()
        .map(|span| maxima[span.clone()].iter().copied().fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min);
    unit(worst)
}

/// Loads every record's frame matrix.
pub fn load_frames(
    manifest: &CorpusManifest,
    alphabet: &Alphabet,
    exec: Execution,
) -> Result<Vec<FrameMatrix>> {
    exec.try_map(&manifest.records, |r| {
        let mut m = read_frame_matrix(&r.frames_path, alphabet)?;
        if m.line_id() != r.line_id {
            m = FrameMatrix::new(
                r.line_id.clone(),
                m.frames(),
                m.num_symbols(),
                m.raw().to_vec(),
            )?;
        }
        Ok(m)
    })
}

/// Scores already loaded matrices with one measure. An unfitted inliers-rate
/// measure is an error.
pub fn score_matrices(
    frames: &[FrameMatrix],
    measure: &ConfidenceMeasure,
    alphabet: &Alphabet,
    exec: Execution,
) -> Result<Vec<f64>> {
    if measure.needs_fit() {
        return Err(Error::MissingFit);
    }
    exec.try_map(frames, |m| measure.score(m, alphabet))
}

/// Fills every record's greedy hypothesis and confidence (and its CER when a
/// reference transcript exists). Transcripts are left untouched.
pub fn score_corpus(
    manifest: &CorpusManifest,
    measure: &ConfidenceMeasure,
    alphabet: &Alphabet,
    exec: Execution,
) -> Result<CorpusManifest> {
    if measure.needs_fit() {
        return Err(Error::MissingFit);
    }
    let frames = load_frames(manifest, alphabet, exec)?;
    apply_scores(manifest, &frames, measure, alphabet, exec)
}

pub fn apply_scores(
    manifest: &CorpusManifest,
    frames: &[FrameMatrix],
    measure: &ConfidenceMeasure,
    alphabet: &Alphabet,
    exec: Execution,
) -> Result<CorpusManifest> {
    let scores = score_matrices(frames, measure, alphabet, exec)?;
    let mut out = manifest.clone();
    for ((record, m), score) in out.records.iter_mut().zip(frames).zip(scores) {
        let hyp = alphabet.decode(&greedy_labels(m, alphabet.blank()));
        record.cer = record.transcript.as_deref().map(|t| cer(t, &hyp));
        record.hypothesis = Some(hyp);
        record.confidence = Some(score);
    }
    Ok(out)
}
