use atst_core::confidence::load_frames;
use atst_core::decoder::{prefix_search_decode, DecodeParams};
use atst_core::frames::{load_manifest, read_alphabet, Origin};
use atst_core::lm::UniformLm;
use atst_core::pipeline::{
    build_lm, default_alpha_grid, default_beam_grid, run_iteration, tune_decode, PipelineConfig,
    MERGED_FILE, SELECTED_FILE,
};
use atst_core::simulator::{generate_texts, standard_source};
use atst_core::{Execution, MeasureKind};
use atst_testkit::{write_standard_corpora, Corpora, CorporaSpec};

fn corpora(dir: &std::path::Path, unannotated: usize) -> Corpora {
    write_standard_corpora(
        dir,
        CorporaSpec {
            unannotated,
            validation: 40,
            seed: 200,
            seed_value: 17,
        },
    )
}

fn config(c: &Corpora, out: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(&c.alphabet, &c.unannotated, c.root.join(out));
    cfg.target_manifest = Some(c.seed.clone());
    cfg.validation_manifest = Some(c.validation.clone());
    cfg.alpha_grid = vec![0.0, 0.5];
    cfg.beam_grid = vec![1, 4];
    cfg.measure = MeasureKind::ProbsMean;
    cfg
}

fn read_dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn selection_merge_and_second_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpora(dir.path(), 1000);
    let cfg = config(&c, "it1");
    let report = run_iteration(&cfg, Execution::Parallel).unwrap();
    assert_eq!(report.scored_lines, 1000);
    assert_eq!(report.selected_lines, 100);
    assert_eq!(report.merged_lines, 200 + 100);
    assert_eq!(report.auc.len(), 8);

    let merged = load_manifest(cfg.output_dir.join(MERGED_FILE)).unwrap();
    let seed = load_manifest(&c.seed).unwrap();
    assert!(merged.records[..200]
        .iter()
        .zip(&seed.records)
        .all(|(m, s)| m.line_id == s.line_id && m.origin == Origin::TargetAnnotated));
    assert!(merged.records[200..]
        .iter()
        .all(|r| r.origin == Origin::MachineAnnotated));

    let mut second = config(&c, "it2");
    second.iteration = 2;
    second.ma_manifest = Some(cfg.output_dir.join(SELECTED_FILE));
    second.portion = 0.32;
    let report2 = run_iteration(&second, Execution::Parallel).unwrap();
    assert_eq!(report2.iteration, 2);
    assert_eq!(report2.selected_lines, 320);
    let merged2 = load_manifest(second.output_dir.join(MERGED_FILE)).unwrap();
    assert_eq!(merged2.iteration, 2);
    assert_eq!(merged2.len(), 200 + 320);
    let weights = report2.lm_stage_weights.unwrap();
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn rerun_is_byte_identical_across_execution_modes() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpora(dir.path(), 80);
    let a = config(&c, "a");
    let mut b = config(&c, "b");
    b.output_dir = c.root.join("b");
    run_iteration(&a, Execution::Parallel).unwrap();
    run_iteration(&b, Execution::Sequential).unwrap();
    assert_eq!(read_dir_bytes(&a.output_dir), read_dir_bytes(&b.output_dir));
}

#[test]
fn missing_inputs_and_bad_portion_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpora(dir.path(), 10);
    let mut cfg = config(&c, "x");
    cfg.portion = 1.5;
    assert!(run_iteration(&cfg, Execution::Parallel).is_err());
    let mut cfg = config(&c, "x");
    cfg.unannotated_manifest = c.root.join("nope.jsonl");
    assert!(run_iteration(&cfg, Execution::Parallel).is_err());
}

#[test]
fn tuning_picks_lm_weight_only_when_it_helps() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpora(dir.path(), 1);
    let alphabet = read_alphabet(&c.alphabet).unwrap();
    let validation = load_manifest(&c.validation).unwrap();
    let frames = load_frames(&validation, &alphabet, Execution::Parallel).unwrap();
    let refs: Vec<String> = validation
        .records
        .iter()
        .map(|r| r.transcript.clone().unwrap())
        .collect();

    let uniform = UniformLm::new(&alphabet);
    // A uniform LM is an insertion-bonus shift of alpha * ln(|V| + 1) per
    // character, so it can still move the grid optimum away from zero.
    let shift = (alphabet.len() as f64).ln();
    for (i, m) in frames.iter().enumerate().take(10) {
        for alpha in [0.3, 1.0] {
            let fused = prefix_search_decode(
                m,
                &alphabet,
                Some(&uniform),
                DecodeParams {
                    alpha,
                    beta: 1.0,
                    beam_width: 8,
                },
            )
            .unwrap();
            let plain = prefix_search_decode(
                m,
                &alphabet,
                None,
                DecodeParams {
                    alpha: 0.0,
                    beta: 1.0 - alpha * shift,
                    beam_width: 8,
                },
            )
            .unwrap();
            let texts =
                |h: &[atst_core::Hypothesis]| h.iter().map(|h| h.text.clone()).collect::<Vec<_>>();
            assert_eq!(texts(&fused), texts(&plain), "line {i}, alpha {alpha}");
        }
    }
    let flat = tune_decode(
        &frames,
        &refs,
        &alphabet,
        Some(&uniform),
        &default_alpha_grid(),
        &[1, 4],
        1.0,
        Execution::Parallel,
    )
    .unwrap();
    assert!(flat.best.alpha <= 1.5 && flat.best.beam_width <= 16);

    let texts = generate_texts(&standard_source(), 2000, 99).unwrap();
    let lm = build_lm(&alphabet, 6, &[], &[], &texts, &[])
        .unwrap()
        .unwrap();
    let tuned = tune_decode(
        &frames,
        &refs,
        &alphabet,
        Some(&lm),
        &default_alpha_grid(),
        &default_beam_grid(),
        1.0,
        Execution::Parallel,
    )
    .unwrap();
    assert!(tuned.best.alpha > 0.0);
    assert!(tuned.best.alpha <= 1.5 && tuned.best.beam_width <= 16);
    assert_eq!(tuned.grid.len(), 16 * 5);
}
