//! End-to-end analysis: associate, threshold, tune, extract, test, CCA.
//! Also the planted-design benchmark built on top of it.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{
    AssociationMatrix, LogBase, PreparedStudy, ScoreKind, StudyData, Threshold,
};
use crate::cca::{cca_on_subnetwork, CcaResult, DEFAULT_RIDGE};
use crate::error::{MoatError, Result};
use crate::extraction::{extract_all, lambda_scores, ExtractionConfig, ExtractionResult};
use crate::inference::{
    permutation_test_prepared, PermutationReport, ScanSettings, MIN_PERMUTATIONS,
};
use crate::simulation::{generate, score_recovery, PlantedBlock, PlantedDesign, RecoveryScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    pub score_kind: ScoreKind,
    pub log_base: LogBase,
    /// Hard threshold on scores; defaults to p < 0.001 per pair.
    pub threshold: Threshold,
    pub extraction: ExtractionConfig,
    /// Skip the grid search and use these values.
    pub fixed_lambdas: Option<(f64, f64)>,
    pub permutations: usize,
    pub alpha: f64,
    pub cca_k: usize,
    pub cca_ridge: f64,
    /// Run CCA on significant subnetworks.
    pub run_cca: bool,
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            score_kind: ScoreKind::NegLogP,
            log_base: LogBase::Natural,
            threshold: Threshold::default(),
            extraction: ExtractionConfig::default(),
            fixed_lambdas: None,
            permutations: 200,
            alpha: 0.05,
            cca_k: 3,
            cca_ridge: DEFAULT_RIDGE,
            run_cca: true,
            seed: 0,
        }
    }
}

impl AnalysisSettings {
    /// Threshold on the score scale for a study with `df` residual degrees
    /// of freedom and `n_tests` predictor-edge pairs.
    pub fn epsilon(&self, df: usize, n_tests: usize) -> Result<f64> {
        self.threshold
            .resolve(self.score_kind, self.log_base, df, n_tests)
    }

    pub fn validate(&self) -> Result<()> {
        self.extraction.validate()?;
        self.epsilon(1, 1)?;
        if let Some((l1, l2)) = self.fixed_lambdas {
            self.extraction.with_lambdas(l1, l2).validate()?;
        } else if self.extraction.lambda_grid.is_empty() {
            return Err(MoatError::Config(
                "lambda grid is empty and no fixed lambdas given".into(),
            ));
        }
        if self.permutations < MIN_PERMUTATIONS {
            return Err(MoatError::Config(format!(
                "permutations = {} must be at least {MIN_PERMUTATIONS}",
                self.permutations
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MoatError::Config(format!(
                "alpha = {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if self.cca_k == 0 || !(self.cca_ridge >= 0.0) {
            return Err(MoatError::Config(
                "cca_k must be >= 1 and cca_ridge >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn scan_settings(&self, epsilon: f64) -> ScanSettings {
        ScanSettings {
            score_kind: self.score_kind,
            log_base: self.log_base,
            epsilon,
            extraction: self.extraction.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Associate,
    SelectLambdas,
    Extract,
    Infer,
    Cca,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Associate => "associate",
            Stage::SelectLambdas => "select_lambdas",
            Stage::Extract => "extract",
            Stage::Infer => "infer",
            Stage::Cca => "cca",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: MoatError,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub grid: Vec<(f64, f64)>,
    /// Divergence per grid point; `None` for degenerate points.
    pub scores: Vec<Option<f64>>,
    pub selected: (f64, f64),
    /// True when every grid point was degenerate and the configured
    /// `(lambda1, lambda2)` was used instead.
    pub fell_back: bool,
}

/// Grid search over `cfg.lambda_grid`, keeping the earliest best point and
/// falling back to `(cfg.lambda1, cfg.lambda2)` when every point is
/// degenerate.
pub fn search_lambdas(scores: &AssociationMatrix, cfg: &ExtractionConfig) -> Result<LambdaSearch> {
    let raw = lambda_scores(scores, cfg)?;
    let mut best: Option<(f64, usize)> = None;
    for (i, &s) in raw.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|(b, _)| s > b) {
            best = Some((s, i));
        }
    }
    Ok(LambdaSearch {
        selected: best.map_or((cfg.lambda1, cfg.lambda2), |(_, i)| cfg.lambda_grid[i]),
        fell_back: best.is_none(),
        scores: raw.iter().map(|&s| s.is_finite().then_some(s)).collect(),
        grid: cfg.lambda_grid.clone(),
    })
}

/// Intermediate results handed to the observer as each stage finishes.
pub enum StageArtifact<'a> {
    Scores(&'a AssociationMatrix),
    Lambdas(&'a LambdaSearch),
    Extraction(&'a ExtractionResult, &'a AssociationMatrix),
    Inference(&'a PermutationReport),
    Cca(&'a [(usize, CcaResult)]),
}

#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    /// Thresholded scores.
    pub scores: AssociationMatrix,
    pub lambda_search: Option<LambdaSearch>,
    pub extraction: ExtractionResult,
    /// `None` when nothing was extracted.
    pub inference: Option<PermutationReport>,
    /// Indices of subnetworks with `q < alpha`.
    pub significant: Vec<usize>,
    pub cca: Vec<(usize, CcaResult)>,
}

pub fn run_analysis(
    data: &StudyData,
    settings: &AnalysisSettings,
    mut observe: impl FnMut(StageArtifact<'_>),
) -> std::result::Result<AnalysisOutcome, StageError> {
    settings.validate().at(Stage::Associate)?;
    let prepared = PreparedStudy::new(data).at(Stage::Associate)?;
    let epsilon = settings
        .epsilon(prepared.df(), data.n_predictors() * data.n_edges())
        .at(Stage::Associate)?;
    let mut scores = prepared
        .scan(
            data.predictors(),
            settings.score_kind,
            settings.log_base,
            Some(epsilon),
        )
        .at(Stage::Associate)?;
    scores.predictor_names = data.predictor_names.clone();
    observe(StageArtifact::Scores(&scores));

    let (lambdas, lambda_search) = match settings.fixed_lambdas {
        Some(l) => (l, None),
        None => {
            let search = search_lambdas(&scores, &settings.extraction).at(Stage::SelectLambdas)?;
            observe(StageArtifact::Lambdas(&search));
            (search.selected, Some(search))
        }
    };

    let cfg = settings.extraction.with_lambdas(lambdas.0, lambdas.1);
    let extraction = extract_all(&scores, &cfg).at(Stage::Extract)?;
    observe(StageArtifact::Extraction(&extraction, &scores));

    let inference = if extraction.subnetworks.is_empty() {
        None
    } else {
        let report = permutation_test_prepared(
            data,
            &prepared,
            &extraction,
            &settings.scan_settings(epsilon),
            settings.permutations,
            settings.seed,
        )
        .at(Stage::Infer)?;
        observe(StageArtifact::Inference(&report));
        Some(report)
    };
    let significant = inference
        .as_ref()
        .map_or_else(Vec::new, |r| r.significant(settings.alpha));

    let mut cca = Vec::new();
    if settings.run_cca {
        for &c in &significant {
            let sub = &extraction.subnetworks[c];
            let k = settings.cca_k.min(sub.s_nodes.len()).min(sub.f_nodes.len());
            let r = cca_on_subnetwork(data, sub, k, settings.cca_ridge).at(Stage::Cca)?;
            cca.push((c, r));
        }
        observe(StageArtifact::Cca(&cca));
    }
    Ok(AnalysisOutcome {
        scores,
        lambda_search,
        extraction,
        inference,
        significant,
        cca,
    })
}

/// One `(rho0, rho1, rho2; D)` benchmark configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub subjects: usize,
}

impl BenchConfig {
    pub const fn new(rho0: f64, rho1: f64, rho2: f64, subjects: usize) -> Self {
        Self {
            rho0,
            rho1,
            rho2,
            subjects,
        }
    }
}

pub const DEFAULT_BENCH_CONFIGS: [BenchConfig; 3] = [
    BenchConfig::new(0.15, 0.55, 0.60, 200),
    BenchConfig::new(0.15, 0.60, 0.45, 300),
    BenchConfig::new(0.15, 0.70, 0.40, 400),
];

/// Optional extra configuration with the lower block correlations.
pub const LOW_SIGNAL_BENCH_CONFIG: BenchConfig = BenchConfig::new(0.15, 0.40, 0.35, 200);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSettings {
    pub configs: Vec<BenchConfig>,
    pub replicates: usize,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    /// `(predictors, regions)` of the two planted blocks.
    pub block_sizes: [(usize, usize); 2],
    pub analysis: AnalysisSettings,
    /// Keep every replicate's scores in the output.
    pub keep_replicates: bool,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            configs: DEFAULT_BENCH_CONFIGS.to_vec(),
            replicates: 25,
            seed: 0,
            m: 500,
            n: 100,
            block_sizes: [(40, 30), (60, 20)],
            analysis: AnalysisSettings {
                threshold: Threshold::Bonferroni(0.05),
                run_cca: false,
                permutations: 100,
                ..AnalysisSettings::default()
            },
            keep_replicates: false,
        }
    }
}

impl BenchmarkSettings {
    pub fn design(&self, c: &BenchConfig) -> PlantedDesign {
        let [(s1, v1), (s2, v2)] = self.block_sizes;
        PlantedDesign {
            m: self.m,
            n: self.n,
            blocks: vec![
                PlantedBlock {
                    s_size: s1,
                    v_size: v1,
                    rho: c.rho1,
                },
                PlantedBlock {
                    s_size: s2,
                    v_size: v2,
                    rho: c.rho2,
                },
            ],
            rho0: c.rho0,
            subjects: c.subjects,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(MoatError::Config("replicates must be >= 1".into()));
        }
        if self.configs.is_empty() {
            return Err(MoatError::Config("no benchmark configurations".into()));
        }
        for c in &self.configs {
            crate::simulation::build_covariance(&self.design(c))?;
        }
        self.analysis.validate()
    }
}

/// Seed of replicate `r` of configuration `c`, from its own stream.
pub fn replicate_seed(seed: u64, c: usize, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((c as u64) << 32) | r as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub config: BenchConfig,
    pub replicates: usize,
    /// Mean per field, in [`RecoveryScore::FIELDS`] order.
    pub mean: [f64; 6],
    /// Sample standard deviation per field; zero for a single replicate.
    pub sd: [f64; 6],
    pub mean_significant: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<RecoveryScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
    pub seed: u64,
}

impl BenchmarkTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho0,rho1,rho2,subjects,replicates");
        for f in RecoveryScore::FIELDS {
            out.push_str(&format!(",{f}_mean,{f}_sd"));
        }
        out.push_str(",mean_significant\n");
        for r in &self.rows {
            let c = r.config;
            out.push_str(&format!(
                "{},{},{},{},{}",
                c.rho0, c.rho1, c.rho2, c.subjects, r.replicates
            ));
            for i in 0..6 {
                out.push_str(&format!(",{:.6},{:.6}", r.mean[i], r.sd[i]));
            }
            out.push_str(&format!(",{:.4}\n", r.mean_significant));
        }
        out
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Recovery of one replicate: generate, analyse, score the significant
/// subnetworks.
pub fn run_replicate(
    settings: &BenchmarkSettings,
    config: &BenchConfig,
    seed: u64,
) -> std::result::Result<(RecoveryScore, usize), StageError> {
    let design = settings.design(config);
    let data = generate(&design, seed).at(Stage::Associate)?;
    let analysis = AnalysisSettings {
        seed,
        ..settings.analysis.clone()
    };
    let out = run_analysis(&data, &analysis, |_| {})?;
    let found: Vec<_> = out
        .significant
        .iter()
        .map(|&c| out.extraction.subnetworks[c].clone())
        .collect();
    Ok((score_recovery(&found, &design), found.len()))
}

pub fn run_benchmark(
    settings: &BenchmarkSettings,
) -> std::result::Result<BenchmarkTable, StageError> {
    settings.validate().at(Stage::Associate)?;
    let mut rows = Vec::new();
    for (c, config) in settings.configs.iter().enumerate() {
        let results = (0..settings.replicates)
            .into_par_iter()
            .map(|r| run_replicate(settings, config, replicate_seed(settings.seed, c, r)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut mean = [0.0; 6];
        let mut sd = [0.0; 6];
        for (i, (m, s)) in mean.iter_mut().zip(sd.iter_mut()).enumerate() {
            let v: Vec<f64> = results.iter().map(|(r, _)| r.values()[i]).collect();
            (*m, *s) = mean_sd(&v);
        }
        let sig: Vec<f64> = results.iter().map(|&(_, n)| n as f64).collect();
        rows.push(BenchmarkRow {
            config: *config,
            replicates: settings.replicates,
            mean,
            sd,
            mean_significant: mean_sd(&sig).0,
            raw: settings
                .keep_replicates
                .then(|| results.iter().map(|(r, _)| *r).collect()),
        });
    }
    Ok(BenchmarkTable {
        rows,
        seed: settings.seed,
    })
}
