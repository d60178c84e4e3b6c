//! Pruning parallel groups down to pure-variable groups, and the full
//! selection pipeline built on top of it.
//!
//! Pruning greedily picks the variable with the largest conditional variance
//! of its denoised part given the variables already picked,
//! `Theta_jj - Theta_jS Theta_SS^+ Theta_Sj`, and keeps the groups that were hit.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::{sample_correlation, CorrelationModel, DataMatrix};
use crate::error::{Error, Result};
use crate::linalg::{pinv_symmetric, submatrix};
use crate::loadings::{estimate_factor, FactorEstimate};
use crate::parallel::{find_parallel, GroupPartition};
use crate::rank::{estimate_k, estimate_m, select_representatives, DiagonalRule, LowRankEstimate, RankEstimate, RepresentativeSet};
use crate::score::{score_table, QNorm, ScoreTable};

/// Denoised covariance on an index set.
#[derive(Debug, Clone)]
pub struct ThetaEstimate {
    pub theta_hat: DMatrix<f64>,
    pub index_set: Vec<usize>,
}

/// Record of the greedy selection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub r: usize,
    pub selected: Vec<usize>,
    pub schur_values: Vec<f64>,
    /// Pseudo-inverse cutoff used for `Theta_SS` at each step (0 for `S` empty).
    pub pinv_cutoffs: Vec<f64>,
}

/// `Theta_ij = Sigma_ij` off the diagonal and `Sigma_ii (1 - Gamma_ii)` on it.
pub fn estimate_theta(sigma: &DMatrix<f64>, index_set: &[usize], gamma: &DVector<f64>) -> Result<ThetaEstimate> {
    if gamma.len() != index_set.len() {
        return Err(Error::InvalidArgument("gamma length must match the index set".into()));
    }
    let mut theta = submatrix(sigma, index_set, index_set);
    for k in 0..index_set.len() {
        theta[(k, k)] *= 1.0 - gamma[k];
    }
    Ok(ThetaEstimate { theta_hat: theta, index_set: index_set.to_vec() })
}

fn positions(theta: &ThetaEstimate, idx: &[usize]) -> Result<Vec<usize>> {
    idx.iter()
        .map(|&i| {
            theta
                .index_set
                .iter()
                .position(|&x| x == i)
                .ok_or(Error::IndexOutOfRange { index: i, dim: theta.index_set.len() })
        })
        .collect()
}

fn schur_with(theta: &DMatrix<f64>, s_pos: &[usize], pinv_ss: &DMatrix<f64>, j: usize) -> f64 {
    if s_pos.is_empty() {
        return theta[(j, j)];
    }
    let v = DVector::from_iterator(s_pos.len(), s_pos.iter().map(|&s| theta[(j, s)]));
    theta[(j, j)] - (v.transpose() * pinv_ss * &v)[(0, 0)]
}

/// `Theta_jj - Theta_jS Theta_SS^+ Theta_Sj` for variable labels `s` and `j`.
pub fn schur_complement_diag(theta: &ThetaEstimate, s: &[usize], j: usize) -> Result<f64> {
    let s_pos = positions(theta, s)?;
    let j_pos = positions(theta, &[j])?[0];
    let pinv_ss = pinv_symmetric(&submatrix(&theta.theta_hat, &s_pos, &s_pos)).matrix;
    Ok(schur_with(&theta.theta_hat, &s_pos, &pinv_ss, j_pos))
}

/// Greedy selection of `r` indices; returns the groups they fall in.
///
/// `r` equal to the number of groups returns the partition unchanged.
pub fn prune_greedy(theta: &ThetaEstimate, r: usize, partition: &GroupPartition) -> Result<(GroupPartition, PruneTrace)> {
    let g = partition.g();
    if r < 1 || r > g {
        return Err(Error::InvalidR { r, groups: g });
    }
    if r == g {
        return Ok((partition.clone(), PruneTrace { r, ..Default::default() }));
    }
    let candidates = positions(theta, &partition.universe)?;
    let mut trace = PruneTrace { r, ..Default::default() };
    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    let mut hit_groups: Vec<usize> = Vec::with_capacity(r);
    for _ in 0..r {
        let (pinv_ss, cutoff) = if chosen.is_empty() {
            (DMatrix::zeros(0, 0), 0.0)
        } else {
            let pi = pinv_symmetric(&submatrix(&theta.theta_hat, &chosen, &chosen));
            (pi.matrix, pi.cutoff)
        };
        let values: Vec<(usize, f64)> = candidates
            .par_iter()
            // a noisy Theta can favor a sibling of a chosen index; one pick per group
            .filter(|&&c| !hit_groups.contains(&partition.group_of(theta.index_set[c]).expect("candidate in universe")))
            .map(|&c| (c, schur_with(&theta.theta_hat, &chosen, &pinv_ss, c)))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (c, v) in values {
            let label = theta.index_set[c];
            match best {
                None => best = Some((c, v)),
                Some((bc, bv)) => {
                    if v > bv || (v == bv && label < theta.index_set[bc]) {
                        best = Some((c, v));
                    }
                }
            }
        }
        let (c, v) = best.expect("r < number of groups leaves candidates");
        chosen.push(c);
        hit_groups.push(partition.group_of(theta.index_set[c]).expect("candidate in universe"));
        trace.selected.push(theta.index_set[c]);
        trace.schur_values.push(v);
        trace.pinv_cutoffs.push(cutoff);
    }
    hit_groups.sort_unstable();
    let pure = GroupPartition::new(hit_groups.into_iter().map(|k| partition.groups[k].clone()).collect())?;
    Ok((pure, trace))
}

/// How the latent dimension is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankRule {
    /// Count eigenvalues of `M_LL` at or above `mu`.
    Mu(f64),
    /// Use a given dimension, capped at the number of groups.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PvsOptions {
    pub diagonal_rule: DiagonalRule,
}

/// Everything the selection stage produces before loadings are estimated.
#[derive(Debug, Clone)]
pub struct PvsFit {
    pub q: QNorm,
    pub delta: f64,
    pub parallel: GroupPartition,
    pub representatives: RepresentativeSet,
    pub low_rank: LowRankEstimate,
    pub rank: RankEstimate,
    pub pure: GroupPartition,
    pub trace: PruneTrace,
}

impl PvsFit {
    pub fn k_hat(&self) -> usize {
        self.rank.k_hat
    }
}

/// Parallel groups at `delta`; errors if none are found.
pub fn parallel_groups(scores: &ScoreTable, delta: f64) -> Result<GroupPartition> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("delta must be finite and nonnegative, got {delta}")));
    }
    let part = find_parallel(scores, delta);
    if part.is_empty() {
        return Err(Error::NoParallelPairs);
    }
    Ok(part)
}

/// Selection of the pure partition from a correlation model and its score table.
pub fn select_pure(
    model: &CorrelationModel,
    scores: &ScoreTable,
    delta: f64,
    rank_rule: RankRule,
    options: &PvsOptions,
) -> Result<PvsFit> {
    let q = scores.q;
    let parallel = parallel_groups(scores, delta)?;
    let representatives = select_representatives(&model.r_hat, &parallel, q)?;
    let low_rank = estimate_m(&model.r_hat, &parallel, scores, q, options.diagonal_rule)?;
    let m_ll = low_rank.restrict(&representatives.indices)?;
    let rank = match rank_rule {
        RankRule::Mu(mu) => estimate_k(&m_ll, mu)?,
        RankRule::Fixed(k) => {
            let mut est = estimate_k(&m_ll, f64::MIN_POSITIVE)?;
            est.k_hat = k.min(parallel.g());
            est.mu = f64::NAN;
            est
        }
    };
    if rank.k_hat == 0 {
        return Err(Error::RankZero);
    }
    let (pure, trace) = if rank.k_hat < parallel.g() {
        let theta = estimate_theta(&model.sigma_hat, &low_rank.index_set, &low_rank.gamma_hat)?;
        prune_greedy(&theta, rank.k_hat, &parallel)?
    } else {
        (parallel.clone(), PruneTrace { r: parallel.g(), ..Default::default() })
    };
    Ok(PvsFit { q, delta, parallel, representatives, low_rank, rank, pure, trace })
}

/// Full pipeline on a correlation model: selection followed by loadings.
pub fn pvs_from_model(model: &CorrelationModel, q: QNorm, delta: f64, rank_rule: RankRule, options: &PvsOptions) -> Result<FactorEstimate> {
    let scores = score_table(&model.r_hat, q)?;
    let fit = select_pure(model, &scores, delta, rank_rule, options)?;
    estimate_factor(model, &fit)
}

/// Full pipeline on a data matrix (centered sample correlation).
pub fn pvs(x: &DataMatrix, q: QNorm, delta: f64, mu: f64, options: &PvsOptions) -> Result<FactorEstimate> {
    let model = sample_correlation(x, true)?;
    pvs_from_model(&model, q, delta, RankRule::Mu(mu), options)
}
