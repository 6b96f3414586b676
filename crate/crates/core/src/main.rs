//! `moat` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use moat::association::{LogBase, PreparedStudy, ScoreKind, StudyData, Threshold};
use moat::cca::{cca_on_subnetwork, CcaResult};
use moat::error::{ErrorClass, MoatError};
use moat::extraction::{extract_all, ExtractionReport, ExtractionResult};
use moat::inference::{permutation_test, PermutationReport, ScanSettings};
use moat::io::{load_study, read_scores, write_matrix, write_scores};
use moat::pipeline::{
    run_analysis, run_benchmark, search_lambdas, AnalysisSettings, BenchConfig, BenchmarkSettings,
    LambdaSearch, StageArtifact, StageError, DEFAULT_BENCH_CONFIGS, LOW_SIGNAL_BENCH_CONFIG,
};
use moat::simulation::{generate, PlantedDesign};

#[derive(Parser)]
#[command(
    name = "moat",
    version,
    about = "Dense multi-level subnetwork extraction and inference"
)]
struct Cli {
    /// Worker threads for parallel stages. Defaults to available parallelism.
    #[arg(long, global = true, env = "MOAT_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted-subnetwork dataset.
    Simulate(SimulateArgs),
    /// Fit every predictor-edge regression and write thresholded scores.
    Associate(AssociateArgs),
    /// Extract subnetworks from a score matrix.
    Extract(ExtractArgs),
    /// Permutation test for extracted subnetworks.
    Infer(InferArgs),
    /// Canonical correlations within extracted subnetworks.
    Cca(CcaArgs),
    /// Full pipeline: associate, threshold, tune, extract, test, CCA.
    Run(RunArgs),
    /// Planted-design recovery benchmark.
    Benchmark(BenchmarkArgs),
}

/// Everything a run can be configured with. Loaded from TOML, then
/// overridden by flags, and embedded in every report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct PipelineConfig {
    predictors: Option<PathBuf>,
    outcomes: Option<PathBuf>,
    confounders: Option<PathBuf>,
    scores: Option<PathBuf>,
    extraction: Option<PathBuf>,
    inference: Option<PathBuf>,
    output: Option<PathBuf>,
    analysis: AnalysisSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    design: Option<PlantedDesign>,
    #[serde(skip_serializing_if = "Option::is_none")]
    benchmark: Option<BenchmarkSettings>,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArgs {
    /// Subjects x predictors matrix (.csv with header, or .bin).
    #[arg(long)]
    predictors: Option<PathBuf>,
    /// Subjects x edges matrix in lexicographic pair order.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Subjects x confounders matrix.
    #[arg(long)]
    confounders: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, value_enum)]
    score_kind: Option<ScoreKind>,
    #[arg(long, value_enum)]
    log_base: Option<LogBase>,
    /// Keep pairs with p below this value.
    #[arg(long, group = "threshold")]
    threshold_p: Option<f64>,
    /// Keep pairs with p below alpha divided by the number of pairs.
    #[arg(long, group = "threshold")]
    bonferroni: Option<f64>,
    /// Threshold on the score scale.
    #[arg(long, group = "threshold")]
    epsilon: Option<f64>,
}

#[derive(Args)]
struct ExtractFlags {
    /// Skip the grid search and use these values.
    #[arg(long, num_args = 2, value_names = ["LAMBDA1", "LAMBDA2"])]
    fixed_lambdas: Option<Vec<f64>>,
    /// Upper bound on the number of subnetworks.
    #[arg(long)]
    max_subnetworks: Option<usize>,
    /// Scores above this value are bipartite edges.
    #[arg(long)]
    binarize_cutoff: Option<f64>,
}

#[derive(Args)]
struct InferFlags {
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct CcaFlags {
    /// Number of canonical pairs.
    #[arg(long)]
    cca_k: Option<usize>,
    /// Ridge as a fraction of the mean within-set variance.
    #[arg(long)]
    cca_ridge: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Bin,
    Csv,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    rho1: Option<f64>,
    #[arg(long)]
    rho2: Option<f64>,
    #[arg(long)]
    subjects: Option<usize>,
    /// No planted blocks: background correlation only.
    #[arg(long)]
    noise: bool,
    #[arg(long, value_enum, default_value = "bin")]
    format: MatrixFormat,
}

#[derive(Args)]
struct AssociateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    common: Common,
    /// Score matrix written by `associate`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[command(flatten)]
    extract: ExtractFlags,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    /// `extraction.json` written by `extract`.
    #[arg(long)]
    extraction: Option<PathBuf>,
    #[command(flatten)]
    infer: InferFlags,
}

#[derive(Args)]
struct CcaArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    extraction: Option<PathBuf>,
    /// `inference.json`; when given, only significant subnetworks are used.
    #[arg(long)]
    inference: Option<PathBuf>,
    /// 1-based subnetwork number; repeatable. Defaults to all.
    #[arg(long)]
    subnetwork: Vec<usize>,
    #[command(flatten)]
    cca: CcaFlags,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    extract: ExtractFlags,
    #[command(flatten)]
    infer: InferFlags,
    #[command(flatten)]
    cca: CcaFlags,
    /// Skip CCA.
    #[arg(long)]
    no_cca: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchPreset {
    /// The three standard configurations.
    Default,
    /// The lower-correlation configuration only.
    LowSignal,
    /// Standard plus low-signal.
    All,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<BenchPreset>,
    /// One configuration as `rho0,rho1,rho2,subjects`; repeatable, replaces the preset.
    #[arg(long, value_parser = parse_bench_config)]
    configuration: Vec<BenchConfig>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Keep every replicate's scores in benchmark.json.
    #[arg(long)]
    keep_replicates: bool,
}

fn parse_bench_config(s: &str) -> Result<BenchConfig, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected rho0,rho1,rho2,subjects, got {s:?}"));
    }
    let f = |i: usize| {
        parts[i]
            .parse::<f64>()
            .map_err(|e| format!("{}: {e}", parts[i]))
    };
    let d = parts[3]
        .parse::<usize>()
        .map_err(|e| format!("{}: {e}", parts[3]))?;
    Ok(BenchConfig::new(f(0)?, f(1)?, f(2)?, d))
}

/// A failure with the exit code it maps to and, when known, the stage.
struct Failure {
    stage: Option<String>,
    error: MoatError,
}

impl From<MoatError> for Failure {
    fn from(error: MoatError) -> Self {
        Self { stage: None, error }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        MoatError::from(e).into()
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Self {
            stage: Some(e.stage.to_string()),
            error: e.source,
        }
    }
}

fn at(stage: &str) -> impl FnOnce(MoatError) -> Failure + '_ {
    move |error| Failure {
        stage: Some(stage.to_string()),
        error,
    }
}

type CliResult<T> = Result<T, Failure>;

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: worker count must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    let mut out_dir = None;
    let result = dispatch(cli.command, &mut out_dir);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let stage = f
                .stage
                .as_deref()
                .map_or(String::new(), |s| format!("stage {s}: "));
            eprintln!("error: {stage}{}", f.error);
            if let Some(dir) = out_dir.filter(|d: &PathBuf| d.is_dir()) {
                let marker = json!({
                    "stage": f.stage,
                    "error": f.error.to_string(),
                    "exit_code": exit_code(f.error.class()),
                });
                let _ = fs::write(dir.join("FAILED"), format!("{marker:#}\n"));
            }
            ExitCode::from(exit_code(f.error.class()))
        }
    }
}

fn dispatch(command: Command, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    match command {
        Command::Simulate(a) => cmd_simulate(a, out_dir),
        Command::Associate(a) => cmd_associate(a, out_dir),
        Command::Extract(a) => cmd_extract(a, out_dir),
        Command::Infer(a) => cmd_infer(a, out_dir),
        Command::Cca(a) => cmd_cca(a, out_dir),
        Command::Run(a) => cmd_run(a, out_dir),
        Command::Benchmark(a) => cmd_benchmark(a, out_dir),
    }
}

fn load_config(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                MoatError::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            toml::from_str(&text)
                .map_err(|e| MoatError::Config(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.output = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.analysis.seed = s;
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if flag.is_some() {
        slot.clone_from(flag);
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set_path(&mut cfg.predictors, &self.predictors);
        set_path(&mut cfg.outcomes, &self.outcomes);
        set_path(&mut cfg.confounders, &self.confounders);
    }
}

impl ScoreArgs {
    fn apply(&self, a: &mut AnalysisSettings) {
        set(&mut a.score_kind, self.score_kind);
        set(&mut a.log_base, self.log_base);
        set(&mut a.threshold, self.threshold_p.map(Threshold::PValue));
        set(&mut a.threshold, self.bonferroni.map(Threshold::Bonferroni));
        set(&mut a.threshold, self.epsilon.map(Threshold::Score));
    }
}

impl ExtractFlags {
    fn apply(&self, a: &mut AnalysisSettings) {
        if let Some(l) = &self.fixed_lambdas {
            a.fixed_lambdas = Some((l[0], l[1]));
        }
        set(&mut a.extraction.max_subnetworks, self.max_subnetworks);
        set(&mut a.extraction.binarize_cutoff, self.binarize_cutoff);
    }
}

impl InferFlags {
    fn apply(&self, a: &mut AnalysisSettings) {
        set(&mut a.permutations, self.permutations);
        set(&mut a.alpha, self.alpha);
    }
}

impl CcaFlags {
    fn apply(&self, a: &mut AnalysisSettings) {
        set(&mut a.cca_k, self.cca_k);
        set(&mut a.cca_ridge, self.cca_ridge);
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| MoatError::Config(format!("missing {what} path")))?;
    if !p.exists() {
        return Err(
            MoatError::Config(format!("{what} file {} does not exist", p.display())).into(),
        );
    }
    Ok(p)
}

/// Creates the output directory and clears any stale failure marker.
fn prepare_output(cfg: &PipelineConfig, out_dir: &mut Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = cfg
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from("moat-out"));
    fs::create_dir_all(&dir)?;
    let marker = dir.join("FAILED");
    if marker.exists() {
        fs::remove_file(marker)?;
    }
    *out_dir = Some(dir.clone());
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(
        path,
        serde_json::to_string_pretty(value).map_err(MoatError::from)? + "\n",
    )?;
    Ok(())
}

fn load_data(cfg: &PipelineConfig) -> CliResult<StudyData> {
    let x = require(&cfg.predictors, "predictors")?;
    let y = require(&cfg.outcomes, "outcomes")?;
    let eta = match &cfg.confounders {
        Some(_) => Some(require(&cfg.confounders, "confounders")?),
        None => None,
    };
    load_study(x, y, eta).map_err(at("load"))
}

/// Writes `report.json`, plus the resolved configuration as `config.toml`
/// so that `--config <dir>/config.toml` repeats the run.
fn finish(
    dir: &Path,
    command: &str,
    cfg: &PipelineConfig,
    results: serde_json::Value,
) -> CliResult<()> {
    let text = toml::to_string(cfg)
        .map_err(|e| MoatError::Config(format!("cannot serialize configuration: {e}")))?;
    fs::write(dir.join("config.toml"), text)?;
    write_json(&dir.join("report.json"), &report(command, cfg, results))
}

fn report(command: &str, cfg: &PipelineConfig, results: serde_json::Value) -> serde_json::Value {
    json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "status": "completed",
        "seed": cfg.analysis.seed,
        "config": cfg,
        "results": results,
    })
}

fn cmd_simulate(args: SimulateArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    let mut design = cfg
        .design
        .clone()
        .unwrap_or_else(|| PlantedDesign::two_block(0.15, 0.55, 0.60, 200));
    set(&mut design.rho0, args.rho0);
    set(&mut design.subjects, args.subjects);
    for (i, rho) in [args.rho1, args.rho2].into_iter().enumerate() {
        if let Some(r) = rho {
            let block = design.blocks.get_mut(i).ok_or_else(|| {
                MoatError::Config(format!(
                    "design has no block {} to set rho{} on",
                    i + 1,
                    i + 1
                ))
            })?;
            block.rho = r;
        }
    }
    if args.noise {
        design.blocks.clear();
    }
    design.validate()?;
    moat::simulation::build_covariance(&design)?;
    cfg.design = Some(design.clone());
    let dir = prepare_output(&cfg, out_dir)?;
    let data = generate(&design, cfg.analysis.seed)?;
    let ext = match args.format {
        MatrixFormat::Bin => "bin",
        MatrixFormat::Csv => "csv",
    };
    let edge_names: Vec<String> = (1..=data.n_edges())
        .map(|e| {
            let (i, j) = data.index().flat_to_pair(e).expect("valid edge");
            format!("r{i}_r{j}")
        })
        .collect();
    let x_path = dir.join(format!("predictors.{ext}"));
    let y_path = dir.join(format!("outcomes.{ext}"));
    write_matrix(&x_path, &data.predictor_names, data.predictors())?;
    write_matrix(&y_path, &edge_names, data.outcomes())?;
    let planted: Vec<_> = design
        .planted_sets()
        .into_iter()
        .map(|(s, e)| {
            json!({
                "predictors": s.iter().map(|k| k + 1).collect::<Vec<_>>(),
                "edges": e.iter().map(|e| e + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(
        &dir.join("design.json"),
        &json!({ "design": design, "seed": cfg.analysis.seed, "planted": planted }),
    )?;
    cfg.predictors = Some(x_path);
    cfg.outcomes = Some(y_path);
    let results = json!({
        "predictors_shape": [data.n_subjects(), data.n_predictors()],
        "outcomes_shape": [data.n_subjects(), data.n_edges()],
    });
    finish(&dir, "simulate", &cfg, results)
}

fn cmd_associate(args: AssociateArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    args.data.apply(&mut cfg);
    args.score.apply(&mut cfg.analysis);
    cfg.analysis.epsilon(1, 1)?;
    let dir = prepare_output(&cfg, out_dir)?;
    let data = load_data(&cfg)?;
    let a = &cfg.analysis;
    let prepared = PreparedStudy::new(&data).map_err(at("associate"))?;
    let eps = a
        .epsilon(prepared.df(), data.n_predictors() * data.n_edges())
        .map_err(at("associate"))?;
    let mut scores = prepared
        .scan(data.predictors(), a.score_kind, a.log_base, Some(eps))
        .map_err(at("associate"))?;
    scores.predictor_names = data.predictor_names.clone();
    let path = dir.join("scores.bin");
    write_scores(&path, &scores)?;
    cfg.scores = Some(path);
    let kept = scores.as_slice().iter().filter(|&&v| v > 0.0).count();
    let results = json!({ "epsilon": eps, "df": prepared.df(), "retained_pairs": kept });
    finish(&dir, "associate", &cfg, results)
}

/// What `extract` hands to `infer` and `cca`.
#[derive(Serialize, Deserialize)]
struct ExtractionArtifact {
    scan: ScanSettings,
    lambda_search: Option<LambdaSearch>,
    result: ExtractionResult,
    report: ExtractionReport,
}

fn cmd_extract(args: ExtractArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    set_path(&mut cfg.scores, &args.scores);
    args.extract.apply(&mut cfg.analysis);
    cfg.analysis.validate()?;
    let scores = read_scores(require(&cfg.scores, "scores")?)?;
    let epsilon = scores.epsilon.ok_or_else(|| {
        MoatError::Config(
            "score matrix is not thresholded; produce it with `moat associate`".into(),
        )
    })?;
    let dir = prepare_output(&cfg, out_dir)?;
    let a = &cfg.analysis;
    let (lambdas, lambda_search) = match a.fixed_lambdas {
        Some(l) => (l, None),
        None => {
            let s = search_lambdas(&scores, &a.extraction).map_err(at("select_lambdas"))?;
            (s.selected, Some(s))
        }
    };
    let ecfg = a.extraction.with_lambdas(lambdas.0, lambdas.1);
    let result = extract_all(&scores, &ecfg).map_err(at("extract"))?;
    let artifact = ExtractionArtifact {
        scan: ScanSettings {
            score_kind: scores.kind(),
            log_base: scores.log_base(),
            epsilon,
            extraction: ecfg,
        },
        lambda_search,
        report: ExtractionReport::new(&result, &scores),
        result,
    };
    let path = dir.join("extraction.json");
    write_json(&path, &artifact)?;
    cfg.extraction = Some(path);
    let results = json!({
        "selected_lambdas": lambdas,
        "subnetworks": artifact.result.subnetworks.len(),
    });
    finish(&dir, "extract", &cfg, results)
}

fn read_artifact<T: for<'de> Deserialize<'de>>(p: &Option<PathBuf>, what: &str) -> CliResult<T> {
    let text = fs::read_to_string(require(p, what)?)?;
    Ok(serde_json::from_str(&text).map_err(MoatError::from)?)
}

fn check_shapes(data: &StudyData, result: &ExtractionResult) -> CliResult<()> {
    for (c, s) in result.subnetworks.iter().enumerate() {
        if s.s_nodes.iter().any(|&k| k >= data.n_predictors())
            || s.f_nodes.iter().any(|&e| e >= data.n_edges())
        {
            return Err(MoatError::DimensionMismatch(format!(
                "subnetwork {} indexes outside the {} x {} study",
                c + 1,
                data.n_predictors(),
                data.n_edges()
            ))
            .into());
        }
    }
    Ok(())
}

/// Observed results plus the decisions made at `alpha`.
#[derive(Serialize, Deserialize)]
struct InferenceArtifact {
    alpha: f64,
    significant: Vec<usize>,
    report: PermutationReport,
}

fn cmd_infer(args: InferArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    args.data.apply(&mut cfg);
    set_path(&mut cfg.extraction, &args.extraction);
    args.infer.apply(&mut cfg.analysis);
    cfg.analysis.validate()?;
    let artifact: ExtractionArtifact = read_artifact(&cfg.extraction, "extraction")?;
    let dir = prepare_output(&cfg, out_dir)?;
    let data = load_data(&cfg)?;
    check_shapes(&data, &artifact.result)?;
    let a = &cfg.analysis;
    let report_ = permutation_test(
        &data,
        &artifact.result,
        &artifact.scan,
        a.permutations,
        a.seed,
    )
    .map_err(at("infer"))?;
    let inf = InferenceArtifact {
        alpha: a.alpha,
        significant: report_.significant(a.alpha).iter().map(|c| c + 1).collect(),
        report: report_,
    };
    let path = dir.join("inference.json");
    write_json(&path, &inf)?;
    cfg.inference = Some(path);
    let results = json!({ "q_values": inf.report.q_values, "significant": inf.significant });
    finish(&dir, "infer", &cfg, results)
}

fn cmd_cca(args: CcaArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    args.data.apply(&mut cfg);
    set_path(&mut cfg.extraction, &args.extraction);
    set_path(&mut cfg.inference, &args.inference);
    args.cca.apply(&mut cfg.analysis);
    cfg.analysis.validate()?;
    let artifact: ExtractionArtifact = read_artifact(&cfg.extraction, "extraction")?;
    let n_sub = artifact.result.subnetworks.len();
    let mut chosen: Vec<usize> = if !args.subnetwork.is_empty() {
        args.subnetwork.clone()
    } else if cfg.inference.is_some() {
        read_artifact::<InferenceArtifact>(&cfg.inference, "inference")?.significant
    } else {
        (1..=n_sub).collect()
    };
    chosen.sort_unstable();
    chosen.dedup();
    if let Some(&bad) = chosen.iter().find(|&&c| c == 0 || c > n_sub) {
        return Err(MoatError::Config(format!("subnetwork {bad} is not in 1..={n_sub}")).into());
    }
    let dir = prepare_output(&cfg, out_dir)?;
    let data = load_data(&cfg)?;
    check_shapes(&data, &artifact.result)?;
    let results = run_cca(&data, &artifact.result, &chosen, &cfg.analysis)?;
    write_json(&dir.join("cca.json"), &results)?;
    finish(&dir, "cca", &cfg, json!({ "cca": results }))
}

#[derive(Serialize)]
struct CcaEntry {
    subnetwork: usize,
    #[serde(flatten)]
    result: CcaResult,
}

fn cca_entries(results: &[(usize, CcaResult)]) -> Vec<CcaEntry> {
    results
        .iter()
        .map(|(c, r)| CcaEntry {
            subnetwork: c + 1,
            result: r.clone(),
        })
        .collect()
}

/// CCA on 1-based subnetwork numbers.
fn run_cca(
    data: &StudyData,
    result: &ExtractionResult,
    chosen: &[usize],
    a: &AnalysisSettings,
) -> CliResult<Vec<CcaEntry>> {
    chosen
        .iter()
        .map(|&c| {
            let sub = &result.subnetworks[c - 1];
            let k = a.cca_k.min(sub.s_nodes.len()).min(sub.f_nodes.len());
            let r = cca_on_subnetwork(data, sub, k, a.cca_ridge).map_err(at("cca"))?;
            Ok(CcaEntry {
                subnetwork: c,
                result: r,
            })
        })
        .collect()
}

fn cmd_run(args: RunArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    args.data.apply(&mut cfg);
    args.score.apply(&mut cfg.analysis);
    args.extract.apply(&mut cfg.analysis);
    args.infer.apply(&mut cfg.analysis);
    args.cca.apply(&mut cfg.analysis);
    if args.no_cca {
        cfg.analysis.run_cca = false;
    }
    cfg.analysis.validate()?;
    let dir = prepare_output(&cfg, out_dir)?;
    let data = load_data(&cfg)?;

    let mut io_error = None;
    let mut keep = |r: CliResult<()>| {
        if let Err(f) = r {
            io_error.get_or_insert(f);
        }
    };
    // Stage artifacts use the same formats as the standalone commands, so
    // `infer` and `cca` can pick up from a `run` directory.
    let mut lambda_search = None;
    let a = &cfg.analysis;
    let outcome = run_analysis(&data, a, |artifact| match artifact {
        StageArtifact::Scores(s) => {
            keep(write_scores(&dir.join("scores.bin"), s).map_err(Failure::from))
        }
        StageArtifact::Lambdas(s) => {
            lambda_search = Some(s.clone());
            keep(write_json(&dir.join("lambdas.json"), s))
        }
        StageArtifact::Extraction(r, s) => {
            let (l1, l2) = r.selected_lambdas;
            let mut scan = a.scan_settings(s.epsilon.unwrap_or(0.0));
            scan.extraction = a.extraction.with_lambdas(l1, l2);
            let artifact = ExtractionArtifact {
                scan,
                lambda_search: lambda_search.take(),
                result: r.clone(),
                report: ExtractionReport::new(r, s),
            };
            keep(write_json(&dir.join("extraction.json"), &artifact))
        }
        StageArtifact::Inference(r) => {
            let artifact = InferenceArtifact {
                alpha: a.alpha,
                significant: r.significant(a.alpha).iter().map(|c| c + 1).collect(),
                report: r.clone(),
            };
            keep(write_json(&dir.join("inference.json"), &artifact))
        }
        StageArtifact::Cca(c) => keep(write_json(&dir.join("cca.json"), &cca_entries(c))),
    });
    if let Some(f) = io_error {
        return Err(f);
    }
    let out = outcome?;

    let extraction = ExtractionReport::new(&out.extraction, &out.scores);
    let subnetworks: Vec<_> = extraction
        .subnetworks
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let inf = out.inference.as_ref();
            json!({
                "subnetwork": c + 1,
                "q_value": inf.map(|r| r.q_values[c]),
                "log_t": inf.map(|r| r.observed_log_t[c]),
                "significant": out.significant.contains(&c),
                "details": s,
            })
        })
        .collect();
    let results = json!({
        "epsilon": out.scores.epsilon,
        "selected_lambdas": out.extraction.selected_lambdas,
        "lambda_search_fell_back": out.lambda_search.as_ref().map(|s| s.fell_back),
        "background_p1": out.extraction.background_p1,
        "background_p2": out.extraction.background_p2,
        "subnetworks": subnetworks,
        "significant": out.significant.iter().map(|c| c + 1).collect::<Vec<_>>(),
        "cca": cca_entries(&out.cca),
    });
    finish(&dir, "run", &cfg, results)
}

fn cmd_benchmark(args: BenchmarkArgs, out_dir: &mut Option<PathBuf>) -> CliResult<()> {
    let mut cfg = load_config(&args.common)?;
    let mut b = cfg.benchmark.clone().unwrap_or_default();
    if let Some(s) = args.common.seed {
        b.seed = s;
    }
    set(&mut b.replicates, args.replicates);
    set(&mut b.analysis.permutations, args.permutations);
    if let Some(p) = args.preset {
        b.configs = match p {
            BenchPreset::Default => DEFAULT_BENCH_CONFIGS.to_vec(),
            BenchPreset::LowSignal => vec![LOW_SIGNAL_BENCH_CONFIG],
            BenchPreset::All => {
                let mut v = DEFAULT_BENCH_CONFIGS.to_vec();
                v.push(LOW_SIGNAL_BENCH_CONFIG);
                v
            }
        };
    }
    if !args.configuration.is_empty() {
        b.configs = args.configuration.clone();
    }
    b.keep_replicates |= args.keep_replicates;
    b.validate()?;
    cfg.analysis.seed = b.seed;
    cfg.benchmark = Some(b.clone());
    let dir = prepare_output(&cfg, out_dir)?;
    let table = run_benchmark(&b)?;
    fs::write(dir.join("benchmark.csv"), table.to_csv())?;
    write_json(&dir.join("benchmark.json"), &table)?;
    finish(&dir, "benchmark", &cfg, json!({ "rows": table.rows.len() }))
}
