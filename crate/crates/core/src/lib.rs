//! Detection of approximately replicate features and pure variables in
//! latent factor models.

pub mod cli;
pub mod corr;
pub mod error;
pub mod linalg;
pub mod loadings;
pub mod parallel;
pub mod prune;
pub mod rank;
pub mod score;
pub mod simgen;
pub mod tuning;

pub use corr::{sample_correlation, CorrelationModel, DataMatrix};
pub use error::{Error, Result};
pub use score::{score_s2, score_sq, score_table, PairScore, QNorm, ScoreTable};
pub use loadings::{align_signed_permutation, Alignment, FactorEstimate};
pub use parallel::{find_parallel, GroupPartition};
pub use prune::{pvs, pvs_from_model, select_pure, PruneTrace, PvsFit, PvsOptions, RankRule};
pub use rank::{DiagonalRule, LowRankEstimate, RepresentativeSet};
pub use tuning::{fit, CvConfig, DeltaChoice, FitOutcome, FitSettings, MuChoice, RankMethod};
pub use simgen::{evaluate, generate, run_replicates, MetricReport, SimScenario, Truth};
