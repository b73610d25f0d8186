//! Character error rate, confidence-ranked selection and the evaluation of
//! confidence measures (cumulative CER curves, their AUC, kNN CER estimates).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{CorpusManifest, LineRecord, Origin};

/// Portions of machine-annotated data studied by default (1, 3, 10, 32, 56 and 100 %).
pub const DEFAULT_PORTIONS: [f64; 6] = [0.01, 0.03, 0.10, 0.32, 0.56, 1.0];
pub const DEFAULT_KNN: usize = 10;

/// Unit-cost Levenshtein distance over characters.
pub fn edit_distance(reference: &str, hypothesis: &str) -> usize {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    let mut row: Vec<usize> = (0..=h.len()).collect();
    for (i, rc) in r.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, hc) in h.iter().enumerate() {
            let sub = diag + usize::from(rc != hc);
            diag = row[j + 1];
            row[j + 1] = sub.min(row[j] + 1).min(diag + 1);
        }
    }
    row[h.len()]
}

/// Edit distance divided by `max(1, |reference|)`.
pub fn cer(reference: &str, hypothesis: &str) -> f64 {
    edit_distance(reference, hypothesis) as f64 / reference.chars().count().max(1) as f64
}

/// Corpus-level CER: summed distances over summed reference lengths.
pub fn corpus_cer<'a, I>(pairs: I) -> f64
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let (errors, chars) = pairs.into_iter().fold((0usize, 0usize), |(e, n), (r, h)| {
        (e + edit_distance(r, h), n + r.chars().count())
    });
    errors as f64 / chars.max(1) as f64
}

/// Number of lines a portion selects out of `n`: `ceil(portion * n)`.
pub fn portion_size(portion: f64, n: usize) -> usize {
    // Guard against 0.3 * 10 = 3.0000000000000004.
    let raw = portion * n as f64;
    let size = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    (size as usize).min(n)
}

fn check_portion(portion: f64) -> Result<()> {
    if portion > 0.0 && portion <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!(
            "portion {portion} outside (0, 1]"
        )))
    }
}

/// Most confident first; equal scores by ascending line id.
fn by_confidence(a: &LineRecord, b: &LineRecord) -> Ordering {
    let (ca, cb) = (a.confidence.unwrap_or(0.0), b.confidence.unwrap_or(0.0));
    cb.partial_cmp(&ca)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.line_id.cmp(&b.line_id))
}

fn ranked(manifest: &CorpusManifest) -> Result<Vec<&LineRecord>> {
    if let Some(r) = manifest.records.iter().find(|r| r.confidence.is_none()) {
        return Err(Error::MissingConfidence(r.line_id.clone()));
    }
    let mut records: Vec<&LineRecord> = manifest.records.iter().collect();
    records.sort_by(|a, b| by_confidence(a, b));
    Ok(records)
}

/// The `ceil(portion * N)` most confident records, relabelled as machine
/// annotated with their hypothesis promoted to transcript.
pub fn select_top(manifest: &CorpusManifest, portion: f64) -> Result<CorpusManifest> {
    check_portion(portion)?;
    let records = ranked(manifest)?;
    let n = portion_size(portion, records.len());
    let mut out = CorpusManifest::new(manifest.alphabet_ref.clone(), manifest.iteration);
    for r in records.into_iter().take(n) {
        let hypothesis = r.hypothesis.clone().ok_or_else(|| Error::InvalidRecord {
            line_id: r.line_id.clone(),
            message: "selected record has no hypothesis".into(),
        })?;
        let mut rec = r.clone();
        rec.transcript = Some(hypothesis);
        rec.cer = None;
        rec.origin = Origin::MachineAnnotated;
        out.records.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Fraction of the most confident lines considered.
    pub fraction: f64,
    /// Corpus CER of those lines, in percent.
    pub cer_percent: f64,
}

/// Cumulative CER as a function of the most confident fraction of lines.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub points: Vec<CurvePoint>,
}

impl ConfidenceCurve {
    /// Builds the curve from per-line `(edit errors, reference length)` pairs
    /// already in confidence order.
    pub fn from_ordered_counts(counts: &[(usize, usize)]) -> Self {
        let n = counts.len();
        let mut errors = 0usize;
        let mut chars = 0usize;
        let points = counts
            .iter()
            .enumerate()
            .map(|(k, &(e, c))| {
                errors += e;
                chars += c;
                CurvePoint {
                    fraction: (k + 1) as f64 / n as f64,
                    cer_percent: 100.0 * errors as f64 / chars.max(1) as f64,
                }
            })
            .collect();
        Self { points }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,cer_percent\n");
        for p in &self.points {
            out.push_str(&format!("{:.6},{:.6}\n", p.fraction, p.cer_percent));
        }
        out
    }
}

fn line_counts(r: &LineRecord) -> Result<(usize, usize)> {
    let reference = r
        .transcript
        .as_deref()
        .ok_or_else(|| Error::MissingReference(r.line_id.clone()))?;
    let hyp = r.hypothesis.as_deref().unwrap_or("");
    Ok((edit_distance(reference, hyp), reference.chars().count()))
}

/// Curve over records carrying confidence, reference transcript and hypothesis.
pub fn confidence_curve(manifest: &CorpusManifest) -> Result<ConfidenceCurve> {
    let counts = ranked(manifest)?
        .into_iter()
        .map(line_counts)
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfidenceCurve::from_ordered_counts(&counts))
}

/// Curve for an arbitrary scoring of per-line `(errors, length)` counts:
/// higher score first, ties by input position.
pub fn curve_for_scores(counts: &[(usize, usize)], scores: &[f64]) -> ConfidenceCurve {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let ordered: Vec<(usize, usize)> = order.into_iter().map(|i| counts[i]).collect();
    ConfidenceCurve::from_ordered_counts(&ordered)
}

/// Right-endpoint rectangle rule: mean CER (percent) over all prefix sizes.
pub fn auc(curve: &ConfidenceCurve) -> f64 {
    let n = curve.points.len();
    if n == 0 {
        return 0.0;
    }
    curve.points.iter().map(|p| p.cer_percent).sum::<f64>() / n as f64
}

/// Mean CER of the `k` validation entries nearest to `query` by confidence.
/// Equal distances keep validation order.
pub fn knn_cer_estimate(validation: &[(f64, f64)], query: f64, k: usize) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..validation.len()).collect();
    idx.sort_by(|&a, &b| {
        let da = (validation[a].0 - query).abs();
        let db = (validation[b].0 - query).abs();
        da.partial_cmp(&db)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let k = k.min(validation.len());
    Ok(idx[..k].iter().map(|&i| validation[i].1).sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortionEstimate {
    pub portion: f64,
    pub lines: usize,
    /// Mean kNN-estimated CER of the selected lines.
    pub estimated_cer: f64,
    /// Mean per-line CER against references, when all selected lines have one.
    pub true_cer: Option<f64>,
}

/// Estimated CER of the most confident portions of a scored corpus.
pub fn estimate_portion_cers(
    scored: &CorpusManifest,
    validation: &[(f64, f64)],
    portions: &[f64],
    k: usize,
) -> Result<Vec<PortionEstimate>> {
    let records = ranked(scored)?;
    let estimates = records
        .iter()
        .map(|r| knn_cer_estimate(validation, r.confidence.unwrap_or(0.0), k))
        .collect::<Result<Vec<_>>>()?;
    portions
        .iter()
        .map(|&portion| {
            check_portion(portion)?;
            let n = portion_size(portion, records.len());
            let estimated_cer = estimates[..n].iter().sum::<f64>() / n.max(1) as f64;
            let true_cer = records[..n]
                .iter()
                .map(|r| match (&r.transcript, &r.hypothesis) {
                    (Some(t), Some(h)) => Some(cer(t, h)),
                    _ => None,
                })
                .sum::<Option<f64>>()
                .map(|s| s / n.max(1) as f64);
            Ok(PortionEstimate {
                portion,
                lines: n,
                estimated_cer,
                true_cer,
            })
        })
        .collect()
}

/// `(confidence, cer)` pairs of a scored validation manifest.
pub fn validation_pairs(scored: &CorpusManifest) -> Result<Vec<(f64, f64)>> {
    scored
        .records
        .iter()
        .map(|r| {
            let conf = r
                .confidence
                .ok_or_else(|| Error::MissingConfidence(r.line_id.clone()))?;
            let reference = r
                .transcript
                .as_deref()
                .ok_or_else(|| Error::MissingReference(r.line_id.clone()))?;
            Ok((conf, cer(reference, r.hypothesis.as_deref().unwrap_or(""))))
        })
        .collect()
}
