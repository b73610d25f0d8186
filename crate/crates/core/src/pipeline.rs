//! One self-training iteration: build the staged LM, tune decoding on the
//! validation lines, transcribe and score the unannotated lines, select the
//! most confident portion and merge it with the seed data.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::confidence::{
    apply_scores, fit_inliers_gaussian, load_frames, score_matrices, ConfidenceMeasure, Gaussian,
    MeasureKind, DEFAULT_POSTERIOR_BEAM,
};
use crate::decoder::{DecodeParams, PrefixDecoder};
use crate::error::{Error, Result};
use crate::eval::{
    auc, cer, confidence_curve, corpus_cer, curve_for_scores, edit_distance, estimate_portion_cers,
    select_top, validation_pairs, PortionEstimate, DEFAULT_KNN, DEFAULT_PORTIONS,
};
use crate::frames::{
    load_manifest, read_alphabet, write_manifest, Alphabet, CorpusManifest, FrameMatrix, Origin,
};
use crate::lm::{CharLm, NGramLm, Stage, DEFAULT_ORDER};
use crate::par::Execution;
use crate::seed;

pub const MAX_ALPHA: f64 = 1.5;
pub const MAX_BEAM: usize = 16;

/// `0.0, 0.1, ..., 1.5`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=15).map(|i| i as f64 / 10.0).collect()
}

pub fn default_beam_grid() -> Vec<usize> {
    vec![1, 2, 4, 8, 16]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub alphabet: PathBuf,
    #[serde(default)]
    pub related_manifest: Option<PathBuf>,
    #[serde(default)]
    pub target_manifest: Option<PathBuf>,
    /// Machine-annotated lines selected by an earlier iteration; they feed the
    /// LM's machine-annotated stage only.
    #[serde(default)]
    pub ma_manifest: Option<PathBuf>,
    pub unannotated_manifest: PathBuf,
    /// Annotated lines used for tuning, the AUC table and CER estimation.
    /// Falls back to the target manifest.
    #[serde(default)]
    pub validation_manifest: Option<PathBuf>,
    #[serde(default = "default_measure")]
    pub measure: MeasureKind,
    #[serde(default = "default_portion")]
    pub portion: f64,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_beam_grid")]
    pub beam_grid: Vec<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_posterior_beam")]
    pub posterior_beam: usize,
    #[serde(default = "default_order")]
    pub lm_order: usize,
    /// Plain text, one line per row.
    #[serde(default)]
    pub lm_related_corpus: Option<PathBuf>,
    #[serde(default)]
    pub lm_target_corpus: Option<PathBuf>,
    #[serde(default = "default_iteration")]
    pub iteration: u32,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_knn")]
    pub knn_k: usize,
    #[serde(default = "default_portions")]
    pub portions: Vec<f64>,
    /// Repetition count written on target-annotated lines of the merged
    /// manifest. No default multiplier is assumed.
    #[serde(default)]
    pub target_weight: Option<u32>,
}

fn default_measure() -> MeasureKind {
    MeasureKind::Posterior
}
fn default_portion() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    1.0
}
fn default_posterior_beam() -> usize {
    DEFAULT_POSTERIOR_BEAM
}
fn default_order() -> usize {
    DEFAULT_ORDER
}
fn default_iteration() -> u32 {
    1
}
fn default_knn() -> usize {
    DEFAULT_KNN
}
fn default_portions() -> Vec<f64> {
    DEFAULT_PORTIONS.to_vec()
}

impl PipelineConfig {
    /// Config with every optional field at its default.
    pub fn new(
        alphabet: impl Into<PathBuf>,
        unannotated_manifest: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
    ) -> Self {
        Self {
            alphabet: alphabet.into(),
            related_manifest: None,
            target_manifest: None,
            ma_manifest: None,
            unannotated_manifest: unannotated_manifest.into(),
            validation_manifest: None,
            measure: default_measure(),
            portion: default_portion(),
            alpha_grid: default_alpha_grid(),
            beam_grid: default_beam_grid(),
            beta: default_beta(),
            posterior_beam: default_posterior_beam(),
            lm_order: default_order(),
            lm_related_corpus: None,
            lm_target_corpus: None,
            iteration: default_iteration(),
            seed: 0,
            output_dir: output_dir.into(),
            knn_k: default_knn(),
            portions: default_portions(),
            target_weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.portion > 0.0 && self.portion <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "portion {} outside (0, 1]",
                self.portion
            )));
        }
        if self.alpha_grid.is_empty() || self.beam_grid.is_empty() {
            return Err(Error::InvalidParam("empty decoding grid".into()));
        }
        if let Some(a) = self
            .alpha_grid
            .iter()
            .find(|a| !(0.0..=MAX_ALPHA).contains(*a))
        {
            return Err(Error::InvalidParam(format!(
                "LM weight {a} outside [0, {MAX_ALPHA}]"
            )));
        }
        if let Some(k) = self.beam_grid.iter().find(|k| !(1..=MAX_BEAM).contains(*k)) {
            return Err(Error::InvalidParam(format!(
                "beam width {k} outside [1, {MAX_BEAM}]"
            )));
        }
        if self.iteration == 0 {
            return Err(Error::InvalidParam("iteration counts from 1".into()));
        }
        if self.posterior_beam == 0 || self.knn_k == 0 {
            return Err(Error::InvalidParam(
                "beam width and k must be positive".into(),
            ));
        }
        if self.target_manifest.is_none() && self.validation_manifest.is_none() {
            return Err(Error::InvalidParam(
                "either a target or a validation manifest is required".into(),
            ));
        }
        if self.target_weight == Some(0) {
            return Err(Error::InvalidParam(
                "target weight must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.alphabet);
        fix(&mut self.unannotated_manifest);
        fix(&mut self.output_dir);
        for p in [
            &mut self.related_manifest,
            &mut self.target_manifest,
            &mut self.ma_manifest,
            &mut self.validation_manifest,
            &mut self.lm_related_corpus,
            &mut self.lm_target_corpus,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    fn measure(&self) -> ConfidenceMeasure {
        match self.measure {
            MeasureKind::Posterior => ConfidenceMeasure::Posterior {
                beam_width: self.posterior_beam,
            },
            kind => ConfidenceMeasure::from_kind(kind),
        }
    }
}

/// Reads a plain-text corpus, one line per row, skipping a trailing newline.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn transcripts(manifests: &[&CorpusManifest], origin: Origin) -> Vec<String> {
    manifests
        .iter()
        .flat_map(|m| &m.records)
        .filter(|r| r.origin == origin)
        .filter_map(|r| r.transcript.clone())
        .collect()
}

/// Staged LM from text corpora; `None` when no stage has any text.
pub fn build_lm(
    alphabet: &Alphabet,
    order: usize,
    related: &[String],
    machine_annotated: &[String],
    target: &[String],
    validation: &[String],
) -> Result<Option<NGramLm>> {
    let mut lm = NGramLm::new(alphabet, order)?;
    let mut any = false;
    for (stage, corpus) in [
        (Stage::Related, related),
        (Stage::MachineAnnotated, machine_annotated),
        (Stage::Target, target),
    ] {
        if !corpus.is_empty() {
            lm.train_stage(corpus, stage)?;
            any = true;
        }
    }
    if !any {
        return Ok(None);
    }
    if !validation.is_empty() {
        lm.tune_stage_weights(validation)?;
    }
    Ok(Some(lm))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beam_width: usize,
    pub cer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: GridPoint,
    pub beta: f64,
    pub grid: Vec<GridPoint>,
}

impl TuneResult {
    pub fn params(&self) -> DecodeParams {
        DecodeParams {
            alpha: self.best.alpha,
            beta: self.beta,
            beam_width: self.best.beam_width,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("alpha\tbeam_width\tcer\n");
        for p in &self.grid {
            let _ = writeln!(out, "{:.1}\t{}\t{:.6}", p.alpha, p.beam_width, p.cer);
        }
        out
    }
}

/// Top hypothesis per line; empty text when the beam comes back empty.
pub fn decode_all(
    frames: &[FrameMatrix],
    alphabet: &Alphabet,
    lm: Option<&dyn CharLm>,
    params: DecodeParams,
    exec: Execution,
) -> Result<Vec<String>> {
    let decoder = PrefixDecoder::new(alphabet, lm, params)?;
    exec.try_map(frames, |m| {
        Ok(decoder
            .decode(m)?
            .into_iter()
            .next()
            .map(|h| h.text)
            .unwrap_or_default())
    })
}

/// Grid search minimizing validation corpus CER. Equal CERs prefer the smaller
/// beam, then the smaller LM weight. Without an LM only `alpha = 0` is tried.
#[allow(clippy::too_many_arguments)]
pub fn tune_decode(
    frames: &[FrameMatrix],
    references: &[String],
    alphabet: &Alphabet,
    lm: Option<&dyn CharLm>,
    alpha_grid: &[f64],
    beam_grid: &[usize],
    beta: f64,
    exec: Execution,
) -> Result<TuneResult> {
    if frames.len() != references.len() {
        return Err(Error::InvalidParam(
            "one reference per validation line required".into(),
        ));
    }
    if frames.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut alphas: Vec<f64> = alpha_grid.to_vec();
    if lm.is_none() {
        alphas.retain(|&a| a == 0.0);
        if alphas.is_empty() {
            alphas.push(0.0);
        }
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut beams = beam_grid.to_vec();
    beams.sort_unstable();
    beams.dedup();

    let mut grid = Vec::with_capacity(alphas.len() * beams.len());
    for &beam_width in &beams {
        for &alpha in &alphas {
            let params = DecodeParams {
                alpha,
                beta,
                beam_width,
            };
            let hyps = decode_all(frames, alphabet, lm, params, exec)?;
            let cer = corpus_cer(
                references
                    .iter()
                    .map(String::as_str)
                    .zip(hyps.iter().map(String::as_str)),
            );
            grid.push(GridPoint {
                alpha,
                beam_width,
                cer,
            });
        }
    }
    // Iteration order already encodes the tie-break, so keep the first minimum.
    let best = grid
        .iter()
        .copied()
        .reduce(|best, p| if p.cer < best.cer { p } else { best })
        .expect("grid is non-empty");
    Ok(TuneResult { best, beta, grid })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub name: String,
    pub auc: f64,
}

pub const ORACLE_ROW: &str = "oracle";
pub const RANDOM_ROW: &str = "random";

/// AUC of every confidence measure on lines with references and hypotheses,
/// plus the oracle ordering (true CER) and a seeded random ordering.
pub fn report_auc_table(
    frames: &[FrameMatrix],
    manifest: &CorpusManifest,
    alphabet: &Alphabet,
    inliers_fit: Gaussian,
    posterior_beam: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<AucRow>> {
    let counts = manifest
        .records
        .iter()
        .map(|r| {
            let reference = r
                .transcript
                .as_deref()
                .ok_or_else(|| Error::MissingReference(r.line_id.clone()))?;
            let hyp = r.hypothesis.as_deref().unwrap_or("");
            Ok((edit_distance(reference, hyp), reference.chars().count()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(MeasureKind::ALL.len() + 2);
    for kind in MeasureKind::ALL {
        let measure = match kind {
            MeasureKind::InliersRate => ConfidenceMeasure::InliersRate {
                fit: Some(inliers_fit),
            },
            MeasureKind::Posterior => ConfidenceMeasure::Posterior {
                beam_width: posterior_beam,
            },
            other => ConfidenceMeasure::from_kind(other),
        };
        let scores = score_matrices(frames, &measure, alphabet, exec)?;
        rows.push(AucRow {
            name: kind.name().to_string(),
            auc: auc(&curve_for_scores(&counts, &scores)),
        });
    }
    let oracle: Vec<f64> = counts
        .iter()
        .map(|&(e, n)| -(e as f64 / n.max(1) as f64))
        .collect();
    rows.push(AucRow {
        name: ORACLE_ROW.to_string(),
        auc: auc(&curve_for_scores(&counts, &oracle)),
    });
    rows.push(AucRow {
        name: RANDOM_ROW.to_string(),
        auc: auc(&curve_for_scores(
            &counts,
            &random_scores(counts.len(), seed),
        )),
    });
    Ok(rows)
}

/// A seeded random permutation expressed as scores.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut scores = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        scores[i] = (n - rank) as f64;
    }
    scores
}

pub fn auc_table_tsv(rows: &[AucRow]) -> String {
    let mut out = String::from("measure\tauc\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{:.6}", r.name, r.auc);
    }
    out
}

pub fn portions_tsv(rows: &[PortionEstimate]) -> String {
    let mut out = String::from("portion\tlines\testimated_cer\ttrue_cer\n");
    for r in rows {
        let truth = r
            .true_cer
            .map(|c| format!("{c:.6}"))
            .unwrap_or_else(|| "NA".into());
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{}",
            r.portion, r.lines, r.estimated_cer, truth
        );
    }
    out
}

/// Seed records followed by the selected machine-annotated records. Older
/// machine-annotated seed records are dropped so each iteration's selection
/// replaces the previous one.
pub fn merge(
    seeds: &[&CorpusManifest],
    selected: &CorpusManifest,
    target_weight: Option<u32>,
    iteration: u32,
) -> Result<CorpusManifest> {
    let mut out = CorpusManifest::new(selected.alphabet_ref.clone(), iteration);
    let mut seen = HashSet::new();
    for m in seeds {
        for r in &m.records {
            if r.origin == Origin::MachineAnnotated || !seen.insert(r.line_id.clone()) {
                continue;
            }
            let mut rec = r.clone();
            if rec.origin == Origin::TargetAnnotated && target_weight.is_some() {
                rec.weight = target_weight;
            }
            out.records.push(rec);
        }
    }
    out.records.extend(selected.records.iter().cloned());
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: u32,
    pub measure: MeasureKind,
    pub portion: f64,
    pub alpha: f64,
    pub beta: f64,
    pub beam_width: usize,
    pub lm_stage_weights: Option<[f64; 3]>,
    /// Validation corpus CER of greedy decoding.
    pub validation_cer_greedy: f64,
    /// Validation corpus CER with the tuned decoder.
    pub validation_cer_tuned: f64,
    pub scored_lines: usize,
    pub selected_lines: usize,
    pub merged_lines: usize,
    /// Corpus CER of the selection and the whole scored set, when the
    /// unannotated lines carry references.
    pub selected_true_cer: Option<f64>,
    pub scored_true_cer: Option<f64>,
    pub auc: Vec<AucRow>,
    pub portions: Vec<PortionEstimate>,
}

pub const SCORED_FILE: &str = "scored.jsonl";
pub const SELECTED_FILE: &str = "selected.jsonl";
pub const MERGED_FILE: &str = "merged.jsonl";
pub const GRID_FILE: &str = "decode_grid.tsv";
pub const AUC_FILE: &str = "auc.tsv";
pub const CURVE_FILE: &str = "curve.csv";
pub const PORTIONS_FILE: &str = "portions.tsv";
pub const REPORT_FILE: &str = "report.json";

fn reference_cer(manifest: &CorpusManifest) -> Option<f64> {
    let pairs: Option<Vec<(&str, &str)>> = manifest
        .records
        .iter()
        .map(|r| {
            Some((
                r.transcript.as_deref()?,
                r.hypothesis.as_deref().unwrap_or(""),
            ))
        })
        .collect();
    pairs.map(corpus_cer)
}

fn with_hypotheses(manifest: &CorpusManifest, hyps: Vec<String>) -> CorpusManifest {
    let mut out = manifest.clone();
    for (r, h) in out.records.iter_mut().zip(hyps) {
        r.cer = r.transcript.as_deref().map(|t| cer(t, &h));
        r.hypothesis = Some(h);
    }
    out
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Runs one iteration and writes its artifacts into the configured output
/// directory. Outputs depend only on the config and its inputs.
pub fn run_iteration(config: &PipelineConfig, exec: Execution) -> Result<IterationReport> {
    config.validate()?;
    let alphabet = read_alphabet(&config.alphabet)?;
    let alphabet_ref =
        fs::canonicalize(&config.alphabet).map_err(|e| Error::io(&config.alphabet, e))?;
    let optional = |p: &Option<PathBuf>| p.as_ref().map(load_manifest).transpose();
    let related = optional(&config.related_manifest)?;
    let target = optional(&config.target_manifest)?;
    let previous_ma = optional(&config.ma_manifest)?;
    let validation = match optional(&config.validation_manifest)? {
        Some(v) => v,
        None => target.clone().expect("validated"),
    };
    let unannotated = load_manifest(&config.unannotated_manifest)?;
    if unannotated.is_empty() {
        return Err(Error::Empty("unannotated manifest"));
    }
    let references: Vec<String> = validation
        .records
        .iter()
        .map(|r| {
            r.transcript
                .clone()
                .ok_or_else(|| Error::MissingReference(r.line_id.clone()))
        })
        .collect::<Result<_>>()?;

    let seeds: Vec<&CorpusManifest> = [&related, &target, &previous_ma]
        .into_iter()
        .flatten()
        .collect();
    let mut related_text = transcripts(&seeds, Origin::Related);
    if let Some(p) = &config.lm_related_corpus {
        related_text.extend(read_lines(p)?);
    }
    let mut target_text = transcripts(&seeds, Origin::TargetAnnotated);
    if let Some(p) = &config.lm_target_corpus {
        target_text.extend(read_lines(p)?);
    }
    let ma_text = transcripts(&seeds, Origin::MachineAnnotated);
    let lm = build_lm(
        &alphabet,
        config.lm_order,
        &related_text,
        &ma_text,
        &target_text,
        &references,
    )?;
    if lm.is_none() {
        log::warn!("no LM text available; decoding without LM fusion");
    }
    let lm_ref = lm.as_ref().map(|l| l as &dyn CharLm);

    let val_frames = load_frames(&validation, &alphabet, exec)?;
    let tuned = tune_decode(
        &val_frames,
        &references,
        &alphabet,
        lm_ref,
        &config.alpha_grid,
        &config.beam_grid,
        config.beta,
        exec,
    )?;
    let params = tuned.params();
    log::info!(
        "tuned decoding: alpha {} beam {} validation CER {:.4}",
        params.alpha,
        params.beam_width,
        tuned.best.cer
    );
    let greedy_val = decode_all(&val_frames, &alphabet, None, DecodeParams::optical(1), exec)?;
    let validation_cer_greedy = corpus_cer(
        references
            .iter()
            .map(String::as_str)
            .zip(greedy_val.iter().map(String::as_str)),
    );

    let frames = load_frames(&unannotated, &alphabet, exec)?;
    let fit = fit_inliers_gaussian(&frames)?;
    let measure = match config.measure() {
        ConfidenceMeasure::InliersRate { .. } => ConfidenceMeasure::InliersRate { fit: Some(fit) },
        m => m,
    };
    let hyps = decode_all(&frames, &alphabet, lm_ref, params, exec)?;
    let mut scored = with_hypotheses(
        &apply_scores(&unannotated, &frames, &measure, &alphabet, exec)?,
        hyps,
    );
    scored.iteration = config.iteration;
    scored.alphabet_ref = alphabet_ref.clone();

    let val_hyps = decode_all(&val_frames, &alphabet, lm_ref, params, exec)?;
    let val_scored = with_hypotheses(
        &apply_scores(&validation, &val_frames, &measure, &alphabet, exec)?,
        val_hyps,
    );
    let auc_rows = report_auc_table(
        &val_frames,
        &val_scored,
        &alphabet,
        fit,
        config.posterior_beam,
        seed::line_seed(config.seed, "random-ordering"),
        exec,
    )?;
    let curve = confidence_curve(&val_scored)?;
    let pairs = validation_pairs(&val_scored)?;
    let portions = estimate_portion_cers(&scored, &pairs, &config.portions, config.knn_k)?;

    let selected = select_top(&scored, config.portion)?;
    let seed_manifests: Vec<&CorpusManifest> = [&related, &target].into_iter().flatten().collect();
    let merged = merge(
        &seed_manifests,
        &selected,
        config.target_weight,
        config.iteration,
    )?;

    let selected_true_cer = {
        let mut check = selected.clone();
        for r in &mut check.records {
            r.hypothesis = r.transcript.clone();
            r.transcript = unannotated
                .records
                .iter()
                .find(|u| u.line_id == r.line_id)
                .and_then(|u| u.transcript.clone());
        }
        reference_cer(&check)
    };

    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_manifest(&scored, out.join(SCORED_FILE))?;
    write_manifest(&selected, out.join(SELECTED_FILE))?;
    write_manifest(&merged, out.join(MERGED_FILE))?;
    write_text(out, GRID_FILE, &tuned.to_tsv())?;
    write_text(out, AUC_FILE, &auc_table_tsv(&auc_rows))?;
    write_text(out, CURVE_FILE, &curve.to_csv())?;
    write_text(out, PORTIONS_FILE, &portions_tsv(&portions))?;

    let report = IterationReport {
        iteration: config.iteration,
        measure: config.measure,
        portion: config.portion,
        alpha: params.alpha,
        beta: params.beta,
        beam_width: params.beam_width,
        lm_stage_weights: lm.as_ref().map(NGramLm::stage_weights),
        validation_cer_greedy,
        validation_cer_tuned: tuned.best.cer,
        scored_lines: scored.len(),
        selected_lines: selected.len(),
        merged_lines: merged.len(),
        selected_true_cer,
        scored_true_cer: reference_cer(&scored),
        auc: auc_rows,
        portions,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_text(out, REPORT_FILE, &json)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::LineRecord;

    fn record(id: &str, origin: Origin) -> LineRecord {
        let mut r = LineRecord::new(id, format!("{id}.fpm"), origin);
        r.transcript = Some("ab".into());
        r
    }

    #[test]
    fn default_grid_matches_ranges() {
        let g = default_alpha_grid();
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[15], 1.5);
        assert_eq!(default_beam_grid(), vec![1, 2, 4, 8, 16]);
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::new("a.json", "u.jsonl", "out");
        c.target_manifest = Some("t.jsonl".into());
        assert!(c.validate().is_ok());
        c.portion = 0.0;
        assert!(c.validate().is_err());
        c.portion = 0.5;
        c.alpha_grid = vec![0.0, 1.6];
        assert!(c.validate().is_err());
        c.alpha_grid = vec![0.0];
        c.beam_grid = vec![32];
        assert!(c.validate().is_err());
        c.beam_grid = vec![4];
        c.iteration = 0;
        assert!(c.validate().is_err());
        c.iteration = 2;
        c.target_manifest = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn merge_keeps_origins_and_sizes() {
        let mut seed = CorpusManifest::new("a.json", 1);
        seed.records = vec![
            record("r1", Origin::Related),
            record("t1", Origin::TargetAnnotated),
            record("old", Origin::MachineAnnotated),
        ];
        let mut sel = CorpusManifest::new("a.json", 1);
        let mut m = record("u1", Origin::MachineAnnotated);
        m.hypothesis = Some("ab".into());
        m.confidence = Some(0.9);
        sel.records = vec![m];
        let merged = merge(&[&seed], &sel, Some(3), 2).unwrap();
        let origins: Vec<Origin> = merged.records.iter().map(|r| r.origin).collect();
        assert_eq!(
            origins,
            vec![
                Origin::Related,
                Origin::TargetAnnotated,
                Origin::MachineAnnotated
            ]
        );
        assert_eq!(merged.records[1].weight, Some(3));
        assert_eq!(merged.records[0].weight, None);
        assert_eq!(merged.iteration, 2);
    }

    #[test]
    fn random_scores_are_a_seeded_permutation() {
        let s = random_scores(50, 7);
        assert_eq!(s, random_scores(50, 7));
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, (1..=50).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = PipelineConfig::new("a.json", "u.jsonl", "out");
        let text = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let minimal: PipelineConfig = serde_json::from_str(
            r#"{"alphabet":"a","unannotated_manifest":"u","output_dir":"o","measure":"worst-best"}"#,
        )
        .unwrap();
        assert_eq!(minimal.measure, MeasureKind::WorstBest);
        assert_eq!(minimal.beta, 1.0);
    }
}
