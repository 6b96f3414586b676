//! Doubly-dense multi-level subnetwork extraction for predictor-to-connectome
//! association studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod cca;
pub mod error;
pub mod extraction;
pub mod graph;
pub mod inference;
pub mod io;
pub mod pipeline;
pub mod simulation;

pub use association::{
    build_association_matrix, fit_single, threshold_scores, AssociationMatrix, LogBase,
    PreparedStudy, ScoreKind, StudyData, Threshold,
};
pub use cca::{cca_on_subnetwork, CcaResult};
pub use error::{ErrorClass, MoatError, Result};
pub use extraction::{
    extract_all, greedy_peel, objective, select_lambdas, ExtractionConfig, ExtractionResult,
};
pub use graph::{
    flat_to_pair, induced_clique, pair_to_flat, BipartiteGraph, ConnectomeGraph, MultiLevelGraph,
    RegionPairIndex, Subnetwork,
};
pub use inference::{
    lemma1_bound, permutation_test, test_statistic, zeta, PermutationReport, TestStatistic,
};
pub use pipeline::{
    run_analysis, run_benchmark, search_lambdas, AnalysisSettings, BenchmarkSettings,
};
pub use simulation::{build_covariance, generate, score_recovery, PlantedDesign, RecoveryScore};
