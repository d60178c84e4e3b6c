//! Loadings, factor correlation and noise levels from a pure partition.
//!
//! On pure rows the scaled loading matrix `B` has a single nonzero per row,
//! so `B^T B` is diagonal and its left inverse is `B^+ = (B^T B)^{-1} B^T`
//! column by column. That keeps the factor-correlation sandwich a sum over
//! group pairs instead of a dense pseudo-inverse.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::corr::CorrelationModel;
use crate::error::{Error, Result};
use crate::linalg::{pinv, pinv_cutoff, to_rows};
use crate::parallel::GroupPartition;
use crate::prune::{PruneTrace, PvsFit};
use crate::rank::LowRankEstimate;
use crate::score::QNorm;

/// Output of the full pipeline.
#[derive(Debug, Clone)]
pub struct FactorEstimate {
    pub k_hat: usize,
    pub q: QNorm,
    pub delta: f64,
    pub parallel_partition: GroupPartition,
    pub representatives: Vec<usize>,
    pub pure_partition: GroupPartition,
    /// `p x K` scaled loadings.
    pub b_hat: DMatrix<f64>,
    /// `p x K` loadings on the original scale.
    pub a_hat: DMatrix<f64>,
    pub sigma_z_hat: DMatrix<f64>,
    pub gamma_hat: DVector<f64>,
    pub trace: PruneTrace,
    pub mu: f64,
    pub eigenvalues: Vec<f64>,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    q: QNorm,
    delta: f64,
    mu: Option<f64>,
    eigenvalues: &'a [f64],
    parallel_groups: &'a [Vec<usize>],
    representatives: &'a [usize],
}

#[derive(Serialize)]
struct FactorJson<'a> {
    k_hat: usize,
    groups: &'a [Vec<usize>],
    b_hat: Vec<Vec<f64>>,
    a_hat: Vec<Vec<f64>>,
    sigma_z: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    trace: &'a PruneTrace,
    diagnostics: Diagnostics<'a>,
}

impl FactorEstimate {
    pub fn pure_indices(&self) -> &[usize] {
        &self.pure_partition.universe
    }

    pub fn to_json(&self) -> serde_json::Value {
        let json = FactorJson {
            k_hat: self.k_hat,
            groups: &self.pure_partition.groups,
            b_hat: to_rows(&self.b_hat),
            a_hat: to_rows(&self.a_hat),
            sigma_z: to_rows(&self.sigma_z_hat),
            gamma: self.gamma_hat.iter().copied().collect(),
            trace: &self.trace,
            diagnostics: Diagnostics {
                q: self.q,
                delta: self.delta,
                mu: self.mu.is_finite().then_some(self.mu),
                eigenvalues: &self.eigenvalues,
                parallel_groups: &self.parallel_partition.groups,
                representatives: &self.representatives,
            },
        };
        serde_json::to_value(json).expect("plain data serializes")
    }
}

/// Pure rows of `B`: magnitude `sqrt(clip(M_ii))`, anchor (smallest index)
/// positive, other signs from the anchor's correlation with each member.
pub fn estimate_pure_loadings(r: &DMatrix<f64>, pure: &GroupPartition, m: &LowRankEstimate) -> Result<DMatrix<f64>> {
    let p = r.nrows();
    let mut b = DMatrix::zeros(p, pure.g());
    for (k, group) in pure.groups.iter().enumerate() {
        let Some(&anchor) = group.first() else {
            return Err(Error::EmptyGroup(k));
        };
        for &i in group {
            let mag = (1.0 - m.gamma_of(i)?).clamp(0.0, 1.0).sqrt();
            let sign = if i == anchor || r[(anchor, i)] >= 0.0 { 1.0 } else { -1.0 };
            b[(i, k)] = sign * mag;
        }
    }
    Ok(b)
}

/// Squared column norms of `B` on pure rows, checked against the rank cutoff.
fn column_norms(b: &DMatrix<f64>, pure: &GroupPartition) -> Result<Vec<f64>> {
    let norms: Vec<f64> = pure
        .groups
        .iter()
        .enumerate()
        .map(|(k, g)| g.iter().map(|&i| b[(i, k)] * b[(i, k)]).sum())
        .collect();
    let largest = norms.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = pinv_cutoff(pure.universe.len().max(pure.g()), largest);
    if largest == 0.0 || norms.iter().any(|&nrm| nrm <= cutoff) {
        return Err(Error::RankDeficientLoadings);
    }
    Ok(norms)
}

/// `B^+ (R - Gamma) B^+T` on pure rows with the diagonal set to 1.
///
/// Distinct groups are disjoint, so `Gamma` never enters the off-diagonal entries.
pub fn estimate_sigma_z(r: &DMatrix<f64>, b: &DMatrix<f64>, pure: &GroupPartition) -> Result<DMatrix<f64>> {
    let k = pure.g();
    let norms = column_norms(b, pure)?;
    let mut s = DMatrix::identity(k, k);
    for a in 0..k {
        for c in (a + 1)..k {
            let mut acc = 0.0;
            for &i in &pure.groups[a] {
                for &j in &pure.groups[c] {
                    acc += b[(i, a)] * r[(i, j)] * b[(j, c)];
                }
            }
            let v = acc / (norms[a] * norms[c]);
            s[(a, c)] = v;
            s[(c, a)] = v;
        }
    }
    Ok(s)
}

/// `A = D^{1/2} B` with `D` the variances.
pub fn estimate_a(b: &DMatrix<f64>, variances: &DVector<f64>) -> Result<DMatrix<f64>> {
    if variances.len() != b.nrows() || variances.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("variances must be positive, one per row".into()));
    }
    let mut a = b.clone();
    for i in 0..a.nrows() {
        let s = variances[i].sqrt();
        a.row_mut(i).scale_mut(s);
    }
    Ok(a)
}

/// Rows of `B` outside the pure set: `B_J^T = Sigma_Z^{-1} (B_I^T B_I)^{-1} B_I^T R_IJ`.
pub fn estimate_bj_plugin(
    sigma_z: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    pure: &GroupPartition,
    rows: &[usize],
) -> Result<DMatrix<f64>> {
    let k = pure.g();
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, k));
    }
    let inv = pinv(sigma_z);
    if inv.rank < k {
        return Err(Error::SingularSigmaZ);
    }
    let norms = column_norms(b, pure)?;
    // (B^T B)^{-1} B^T R_IJ, K x |J|
    let proj = DMatrix::from_fn(k, rows.len(), |a, jj| {
        pure.groups[a].iter().map(|&i| b[(i, a)] * r[(i, rows[jj])]).sum::<f64>() / norms[a]
    });
    Ok((inv.matrix * proj).transpose())
}

/// Loadings, factor correlation and noise levels for a selection result.
pub fn estimate_factor(model: &CorrelationModel, fit: &PvsFit) -> Result<FactorEstimate> {
    let r = &model.r_hat;
    let p = r.nrows();
    let pure = &fit.pure;
    let mut b = estimate_pure_loadings(r, pure, &fit.low_rank)?;
    let sigma_z = estimate_sigma_z(r, &b, pure)?;
    let rest: Vec<usize> = (0..p).filter(|i| pure.universe.binary_search(i).is_err()).collect();
    let bj = estimate_bj_plugin(&sigma_z, &b, r, pure, &rest)?;
    for (jj, &j) in rest.iter().enumerate() {
        b.set_row(j, &bj.row(jj));
    }
    let mut gamma = DVector::zeros(p);
    for i in 0..p {
        gamma[i] = if pure.universe.binary_search(&i).is_ok() {
            fit.low_rank.gamma_of(i)?
        } else {
            let bi = b.row(i);
            let explained = (bi * &sigma_z * bi.transpose())[(0, 0)];
            (1.0 - explained).clamp(0.0, 1.0)
        };
    }
    let a = estimate_a(&b, &model.diag)?;
    Ok(FactorEstimate {
        k_hat: pure.g(),
        q: fit.q,
        delta: fit.delta,
        parallel_partition: fit.parallel.clone(),
        representatives: fit.representatives.indices.clone(),
        pure_partition: pure.clone(),
        b_hat: b,
        a_hat: a,
        sigma_z_hat: sigma_z,
        gamma_hat: gamma,
        trace: fit.trace.clone(),
        mu: fit.rank.mu,
        eigenvalues: fit.rank.eigenvalues.clone(),
    })
}

/// Signed column permutation matching an estimate to a reference.
///
/// Column `m` of the reference corresponds to `signs[m] * est[:, perm[m]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub perm: Vec<usize>,
    pub signs: Vec<f64>,
    /// Largest absolute entrywise difference after alignment.
    pub cost: f64,
}

impl Alignment {
    pub fn apply_columns(&self, est: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(est.nrows(), self.perm.len(), |i, m| self.signs[m] * est[(i, self.perm[m])])
    }

    /// `P^T S P` for a symmetric `K x K` matrix in estimate coordinates.
    pub fn apply_symmetric(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.perm.len();
        DMatrix::from_fn(k, k, |a, c| self.signs[a] * self.signs[c] * s[(self.perm[a], self.perm[c])])
    }
}

/// Exhaustive search is used up to this many columns.
pub const EXHAUSTIVE_ALIGNMENT_MAX: usize = 8;

fn column_cost(est: &DMatrix<f64>, truth: &DMatrix<f64>, k: usize, m: usize) -> (f64, f64) {
    let mut plus = 0.0_f64;
    let mut minus = 0.0_f64;
    for i in 0..est.nrows() {
        plus = plus.max((est[(i, k)] - truth[(i, m)]).abs());
        minus = minus.max((-est[(i, k)] - truth[(i, m)]).abs());
    }
    if plus <= minus {
        (plus, 1.0)
    } else {
        (minus, -1.0)
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                prefix.push(c);
                rec(prefix, used, out);
                prefix.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Signed permutation minimizing `max |est P - truth|`.
///
/// Signs decouple per column, so the search is over permutations only;
/// it is exhaustive for up to [`EXHAUSTIVE_ALIGNMENT_MAX`] columns and
/// falls back to greedy matching on absolute column correlation above that.
pub fn align_signed_permutation(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Alignment> {
    if est.shape() != truth.shape() {
        return Err(Error::InvalidArgument(format!(
            "alignment needs equal shapes, got {:?} and {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    let k = est.ncols();
    let cost: Vec<Vec<(f64, f64)>> = (0..k).map(|m| (0..k).map(|c| column_cost(est, truth, c, m)).collect()).collect();
    let perm = if k <= EXHAUSTIVE_ALIGNMENT_MAX {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for perm in permutations(k) {
            let c = (0..k).map(|m| cost[m][perm[m]].0).fold(0.0_f64, f64::max);
            if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                best = Some((c, perm));
            }
        }
        best.map(|b| b.1).unwrap_or_default()
    } else {
        greedy_by_correlation(est, truth)
    };
    let signs: Vec<f64> = (0..k).map(|m| cost[m][perm[m]].1).collect();
    let total = (0..k).map(|m| cost[m][perm[m]].0).fold(0.0_f64, f64::max);
    Ok(Alignment { perm, signs, cost: total })
}

fn greedy_by_correlation(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<usize> {
    let k = est.ncols();
    let mut pairs = Vec::with_capacity(k * k);
    for m in 0..k {
        for c in 0..k {
            let (x, y) = (est.column(c), truth.column(m));
            let denom = x.norm() * y.norm();
            let corr = if denom > 0.0 { (x.dot(&y) / denom).abs() } else { 0.0 };
            pairs.push((corr, m, c));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    for (_, m, c) in pairs {
        if perm[m] == usize::MAX && !used[c] {
            perm[m] = c;
            used[c] = true;
        }
    }
    perm
}
