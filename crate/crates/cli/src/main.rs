use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atst_core::augment::{
    mask_line, masking_setting, read_pgm, write_pgm, MaskingParams, MaskingSetting,
};
use atst_core::confidence::{
    apply_scores, fit_inliers_gaussian, load_frames, ConfidenceMeasure, MeasureKind,
    DEFAULT_POSTERIOR_BEAM,
};
use atst_core::eval::{
    estimate_portion_cers, select_top, validation_pairs, DEFAULT_KNN, DEFAULT_PORTIONS,
};
use atst_core::frames::{load_manifest, read_alphabet, write_manifest, CorpusManifest, Origin};
use atst_core::lm::{perplexity, CharLm, NGramLm, DEFAULT_ORDER};
use atst_core::pipeline::{
    auc_table_tsv, build_lm, decode_all, default_alpha_grid, default_beam_grid, merge,
    portions_tsv, read_lines, report_auc_table, run_iteration, tune_decode, PipelineConfig,
};
use atst_core::simulator::{
    default_alphabet, generate_texts, simulate_corpus, standard_params, standard_source, SimParams,
};
use atst_core::{seed, Alphabet, DecodeParams, Execution};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "atst",
    version,
    about = "CTC decoding and self-training data selection"
)]
struct Cli {
    /// Global seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate frame matrices for a text corpus.
    Simulate(SimulateArgs),
    /// Prefix-search decode every line of a manifest.
    Decode(DecodeArgs),
    /// Attach greedy hypotheses and confidences to a manifest.
    Score(ScoreArgs),
    /// Keep the most confident portion as machine-annotated lines.
    Select(SelectArgs),
    /// Merge seed manifests with selected machine-annotated lines.
    Merge(MergeArgs),
    /// AUC of every confidence measure on annotated lines.
    EvalAuc(EvalAucArgs),
    /// kNN estimate of the CER of confident portions.
    EstimateCer(EstimateCerArgs),
    /// Mask PGM line images with noise bands.
    Augment(AugmentArgs),
    /// Train a staged character n-gram LM.
    LmTrain(LmTrainArgs),
    /// Grid-search LM weight and beam width on annotated lines.
    Tune(TuneArgs),
    /// Run one full self-training iteration from the configuration.
    RunIteration(RunIterationArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OriginArg {
    Related,
    TargetAnnotated,
    TargetUnannotated,
}

impl From<OriginArg> for Origin {
    fn from(o: OriginArg) -> Self {
        match o {
            OriginArg::Related => Origin::Related,
            OriginArg::TargetAnnotated => Origin::TargetAnnotated,
            OriginArg::TargetUnannotated => Origin::TargetUnannotated,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Text file, one line per row.
    #[arg(
        long,
        conflicts_with = "generate",
        required_unless_present = "generate"
    )]
    texts: Option<PathBuf>,
    /// Generate this many lines from the standard Markov source instead.
    #[arg(long)]
    generate: Option<usize>,
    /// Use the noise settings of the standard fixture.
    #[arg(long)]
    standard: bool,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    frames_min: Option<usize>,
    #[arg(long)]
    frames_max: Option<usize>,
    #[arg(long)]
    blank_gap: Option<f64>,
    #[arg(long)]
    blank_floor: Option<f64>,
    /// Alphabet JSON (default: blank `∅`, a-z and space).
    #[arg(long)]
    alphabet: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "target-unannotated")]
    origin: OriginArg,
    /// Line id prefix (default: the output directory name).
    #[arg(long)]
    prefix: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestInput {
    #[arg(long)]
    manifest: PathBuf,
    /// Alphabet JSON (default: the manifest's alphabet reference).
    #[arg(long)]
    alphabet: Option<PathBuf>,
}

impl ManifestInput {
    fn load(&self) -> Result<(CorpusManifest, Alphabet)> {
        let manifest = load_manifest(&self.manifest)
            .with_context(|| format!("reading manifest {}", self.manifest.display()))?;
        let path = self
            .alphabet
            .clone()
            .unwrap_or_else(|| manifest.alphabet_ref.clone());
        let alphabet =
            read_alphabet(&path).with_context(|| format!("reading alphabet {}", path.display()))?;
        Ok((manifest, alphabet))
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    input: ManifestInput,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 16)]
    beam: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: ManifestInput,
    #[arg(long, default_value = "posterior")]
    measure: MeasureKind,
    #[arg(long, default_value_t = DEFAULT_POSTERIOR_BEAM)]
    posterior_beam: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    portion: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    /// Seed manifests (related and target annotated).
    #[arg(long = "seed-manifest", required = true)]
    seeds: Vec<PathBuf>,
    #[arg(long)]
    selected: PathBuf,
    #[arg(long)]
    target_weight: Option<u32>,
    #[arg(long, default_value_t = 1)]
    iteration: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalAucArgs {
    #[command(flatten)]
    input: ManifestInput,
    #[arg(long, default_value_t = DEFAULT_POSTERIOR_BEAM)]
    posterior_beam: usize,
    /// Also write the confidence curve of this measure.
    #[arg(long, requires = "curve")]
    curve_measure: Option<MeasureKind>,
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateCerArgs {
    /// Scored unannotated manifest.
    #[arg(long)]
    scored: PathBuf,
    /// Scored validation manifest with references.
    #[arg(long)]
    validation: PathBuf,
    #[arg(long, value_delimiter = ',')]
    portions: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_KNN)]
    k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Half,
    Base,
    Double,
}

#[derive(Args)]
struct AugmentArgs {
    /// PGM image or directory of PGM images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, conflicts_with_all = ["mask_p", "mask_wmin", "mask_wmax"])]
    setting: Option<SettingArg>,
    #[arg(long)]
    mask_p: Option<f64>,
    #[arg(long)]
    mask_wmin: Option<usize>,
    #[arg(long)]
    mask_wmax: Option<usize>,
    /// Masked copies per image.
    #[arg(long, default_value_t = 1)]
    copies: usize,
}

#[derive(Args)]
struct LmTrainArgs {
    #[arg(long)]
    alphabet: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    order: usize,
    #[arg(long)]
    related: Option<PathBuf>,
    #[arg(long)]
    machine_annotated: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    /// Held-out text used to tune the stage weights.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    input: ManifestInput,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    alpha_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    beam_grid: Option<Vec<usize>>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunIterationArgs {
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the configured iteration number.
    #[arg(long)]
    iteration: Option<u32>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| run(&cli))
}

fn run(cli: &Cli) -> Result<()> {
    let exec = Execution::Parallel;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Simulate(a) => simulate(a, seed, exec),
        Command::Decode(a) => decode(a, exec),
        Command::Score(a) => score(a, exec),
        Command::Select(a) => {
            let m = load_manifest(&a.manifest)?;
            let selected = select_top(&m, a.portion)?;
            write_manifest(&selected, &a.out)?;
            Ok(())
        }
        Command::Merge(a) => {
            let seeds = a
                .seeds
                .iter()
                .map(load_manifest)
                .collect::<Result<Vec<_>, _>>()?;
            let selected = load_manifest(&a.selected)?;
            let refs: Vec<&CorpusManifest> = seeds.iter().collect();
            write_manifest(
                &merge(&refs, &selected, a.target_weight, a.iteration)?,
                &a.out,
            )?;
            Ok(())
        }
        Command::EvalAuc(a) => eval_auc(a, seed, exec),
        Command::EstimateCer(a) => {
            let scored = load_manifest(&a.scored)?;
            let validation = load_manifest(&a.validation)?;
            let portions = a
                .portions
                .clone()
                .unwrap_or_else(|| DEFAULT_PORTIONS.to_vec());
            let rows =
                estimate_portion_cers(&scored, &validation_pairs(&validation)?, &portions, a.k)?;
            emit(a.out.as_deref(), &portions_tsv(&rows))
        }
        Command::Augment(a) => augment(a, seed),
        Command::LmTrain(a) => lm_train(a),
        Command::Tune(a) => tune(a, cli.config.as_deref(), exec),
        Command::RunIteration(a) => {
            let path = cli
                .config
                .as_deref()
                .context("run-iteration needs --config <file>")?;
            let mut config = load_config(path)?;
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            if let Some(dir) = &a.output_dir {
                config.output_dir = dir.clone();
            }
            if let Some(i) = a.iteration {
                config.iteration = i;
            }
            let report = run_iteration(&config, exec)?;
            println!(
                "iteration {}: alpha {} beam {} validation CER {:.4} -> {:.4}, selected {} of {} lines",
                report.iteration,
                report.alpha,
                report.beam_width,
                report.validation_cer_greedy,
                report.validation_cer_tuned,
                report.selected_lines,
                report.scored_lines
            );
            Ok(())
        }
    }
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut config: PipelineConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    config.resolve_paths(base);
    Ok(config)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs, seed: u64, exec: Execution) -> Result<()> {
    let alphabet = match &a.alphabet {
        Some(p) => read_alphabet(p)?,
        None => default_alphabet(),
    };
    let texts = match (&a.texts, a.generate) {
        (Some(p), _) => read_lines(p)?,
        (None, Some(n)) => generate_texts(&standard_source(), n, seed::line_seed(seed, "texts"))?,
        (None, None) => unreachable!("clap requires one"),
    };
    let mut p = if a.standard {
        standard_params()
    } else {
        SimParams::default()
    };
    p.epsilon = a.epsilon.unwrap_or(p.epsilon);
    p.jitter = a.jitter.unwrap_or(p.jitter);
    p.min_frames_per_char = a.frames_min.unwrap_or(p.min_frames_per_char);
    p.max_frames_per_char = a.frames_max.unwrap_or(p.max_frames_per_char);
    p.blank_gap_prob = a.blank_gap.unwrap_or(p.blank_gap_prob);
    p.blank_floor = a.blank_floor.unwrap_or(p.blank_floor);
    let prefix = match &a.prefix {
        Some(prefix) => prefix.clone(),
        None => a
            .out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "line".into()),
    };
    let manifest = simulate_corpus(
        &texts,
        &alphabet,
        &p,
        seed,
        &a.out,
        &prefix,
        a.origin.into(),
        exec,
    )?;
    write_manifest(&manifest, a.out.join("manifest.jsonl"))?;
    if a.generate.is_some() {
        fs::write(a.out.join("texts.txt"), texts.join("\n") + "\n")?;
    }
    Ok(())
}

fn load_lm(path: Option<&Path>, alphabet: &Alphabet) -> Result<Option<NGramLm>> {
    path.map(|p| -> Result<NGramLm> {
        let lm = NGramLm::load(p).with_context(|| format!("reading LM {}", p.display()))?;
        lm.check_alphabet(alphabet)?;
        Ok(lm)
    })
    .transpose()
}

fn decode(a: &DecodeArgs, exec: Execution) -> Result<()> {
    let (manifest, alphabet) = a.input.load()?;
    let lm = load_lm(a.lm.as_deref(), &alphabet)?;
    let params = DecodeParams {
        alpha: a.alpha,
        beta: a.beta,
        beam_width: a.beam,
    };
    let frames = load_frames(&manifest, &alphabet, exec)?;
    let hyps = decode_all(
        &frames,
        &alphabet,
        lm.as_ref().map(|l| l as &dyn CharLm),
        params,
        exec,
    )?;
    let mut out = manifest;
    for (r, h) in out.records.iter_mut().zip(hyps) {
        r.cer = r.transcript.as_deref().map(|t| atst_core::eval::cer(t, &h));
        r.hypothesis = Some(h);
    }
    write_manifest(&out, &a.out)?;
    Ok(())
}

fn measure_for(
    kind: MeasureKind,
    posterior_beam: usize,
    frames: &[atst_core::FrameMatrix],
) -> Result<ConfidenceMeasure> {
    Ok(match kind {
        MeasureKind::Posterior => ConfidenceMeasure::Posterior {
            beam_width: posterior_beam,
        },
        MeasureKind::InliersRate => ConfidenceMeasure::InliersRate {
            fit: Some(fit_inliers_gaussian(frames)?),
        },
        other => ConfidenceMeasure::from_kind(other),
    })
}

fn score(a: &ScoreArgs, exec: Execution) -> Result<()> {
    let (manifest, alphabet) = a.input.load()?;
    let frames = load_frames(&manifest, &alphabet, exec)?;
    let measure = measure_for(a.measure, a.posterior_beam, &frames)?;
    write_manifest(
        &apply_scores(&manifest, &frames, &measure, &alphabet, exec)?,
        &a.out,
    )?;
    Ok(())
}

fn eval_auc(a: &EvalAucArgs, seed: u64, exec: Execution) -> Result<()> {
    let (manifest, alphabet) = a.input.load()?;
    let frames = load_frames(&manifest, &alphabet, exec)?;
    let fit = fit_inliers_gaussian(&frames)?;
    // Lines without a hypothesis are judged on their greedy transcription.
    let mut scored = apply_scores(
        &manifest,
        &frames,
        &ConfidenceMeasure::ProbsMean,
        &alphabet,
        exec,
    )?;
    for (s, r) in scored.records.iter_mut().zip(&manifest.records) {
        if r.hypothesis.is_some() {
            s.hypothesis = r.hypothesis.clone();
        }
    }
    let rows = report_auc_table(
        &frames,
        &scored,
        &alphabet,
        fit,
        a.posterior_beam,
        seed::line_seed(seed, "random-ordering"),
        exec,
    )?;
    if let (Some(kind), Some(path)) = (a.curve_measure, &a.curve) {
        let measure = measure_for(kind, a.posterior_beam, &frames)?;
        let scores = atst_core::confidence::score_matrices(&frames, &measure, &alphabet, exec)?;
        let mut curve_manifest = scored.clone();
        for (r, s) in curve_manifest.records.iter_mut().zip(scores) {
            r.confidence = Some(s);
        }
        fs::write(
            path,
            atst_core::eval::confidence_curve(&curve_manifest)?.to_csv(),
        )?;
    }
    emit(a.out.as_deref(), &auc_table_tsv(&rows))
}

fn augment(a: &AugmentArgs, seed: u64) -> Result<()> {
    let params = match a.setting {
        Some(SettingArg::Half) => masking_setting(MaskingSetting::Half),
        Some(SettingArg::Base) => masking_setting(MaskingSetting::Base),
        Some(SettingArg::Double) => masking_setting(MaskingSetting::Double),
        None => {
            let base = MaskingParams::default();
            MaskingParams::new(
                a.mask_p.unwrap_or(base.probability),
                a.mask_wmin.unwrap_or(base.min_width),
                a.mask_wmax.unwrap_or(base.max_width),
            )?
        }
    };
    let inputs: Vec<PathBuf> = if a.input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&a.input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
        files.sort();
        files
    } else {
        vec![a.input.clone()]
    };
    fs::create_dir_all(&a.out)?;
    for path in inputs {
        let img = read_pgm(&path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .context("image file name is not valid UTF-8")?;
        for copy in 0..a.copies {
            let id = format!("{stem}-{copy}");
            let masked = mask_line(&img, &params, seed::line_seed(seed, &id));
            write_pgm(&masked, a.out.join(format!("{id}.pgm")))?;
        }
    }
    Ok(())
}

fn lm_train(a: &LmTrainArgs) -> Result<()> {
    let alphabet = read_alphabet(&a.alphabet)?;
    let read = |p: &Option<PathBuf>| -> Result<Vec<String>> {
        Ok(match p {
            Some(p) => read_lines(p)?,
            None => Vec::new(),
        })
    };
    let validation = read(&a.validation)?;
    let lm = build_lm(
        &alphabet,
        a.order,
        &read(&a.related)?,
        &read(&a.machine_annotated)?,
        &read(&a.target)?,
        &validation,
    )?
    .context("no training text given")?;
    lm.save(&a.out)?;
    let w = lm.stage_weights();
    println!(
        "stage weights related {:.1} machine-annotated {:.1} target {:.1}",
        w[0], w[1], w[2]
    );
    if !validation.is_empty() {
        println!("validation perplexity {:.4}", perplexity(&lm, &validation));
    }
    Ok(())
}

fn tune(a: &TuneArgs, config: Option<&Path>, exec: Execution) -> Result<()> {
    let config = config.map(load_config).transpose()?;
    let (manifest, alphabet) = a.input.load()?;
    let lm = load_lm(a.lm.as_deref(), &alphabet)?;
    let references = manifest
        .records
        .iter()
        .map(|r| {
            r.transcript
                .clone()
                .with_context(|| format!("line {} has no reference", r.line_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let alpha_grid = a
        .alpha_grid
        .clone()
        .or_else(|| config.as_ref().map(|c| c.alpha_grid.clone()))
        .unwrap_or_else(default_alpha_grid);
    let beam_grid = a
        .beam_grid
        .clone()
        .or_else(|| config.as_ref().map(|c| c.beam_grid.clone()))
        .unwrap_or_else(default_beam_grid);
    let beta = a.beta.or(config.as_ref().map(|c| c.beta)).unwrap_or(1.0);
    let frames = load_frames(&manifest, &alphabet, exec)?;
    let result = tune_decode(
        &frames,
        &references,
        &alphabet,
        lm.as_ref().map(|l| l as &dyn CharLm),
        &alpha_grid,
        &beam_grid,
        beta,
        exec,
    )?;
    println!(
        "best alpha {} beam {} CER {:.6}",
        result.best.alpha, result.best.beam_width, result.best.cer
    );
    if let Some(out) = &a.out {
        fs::write(out, result.to_tsv())?;
    }
    Ok(())
}
