//! Representatives, the low-rank part `M` on parallel rows, and the latent dimension.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::parallel::GroupPartition;
use crate::score::{QNorm, ScoreTable};

/// One representative index per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub indices: Vec<usize>,
    pub source_groups: Vec<usize>,
}

/// How the diagonal of `M` is estimated from a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalRule {
    /// Use the group partner with the smallest score.
    #[default]
    BestPartner,
    /// Average the ratio over every partner in the group.
    GroupMean,
}

/// `M` on an index set, with `gamma[k] = 1 - m_hat[(k, k)]`.
#[derive(Debug, Clone)]
pub struct LowRankEstimate {
    pub m_hat: DMatrix<f64>,
    pub index_set: Vec<usize>,
    pub gamma_hat: DVector<f64>,
}

impl LowRankEstimate {
    fn position(&self, i: usize) -> Result<usize> {
        self.index_set
            .iter()
            .position(|&x| x == i)
            .ok_or(Error::IndexOutOfRange { index: i, dim: self.index_set.len() })
    }

    /// `M` restricted to `indices` (variable labels, not positions).
    pub fn restrict(&self, indices: &[usize]) -> Result<DMatrix<f64>> {
        let pos: Vec<usize> = indices.iter().map(|&i| self.position(i)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(pos.len(), pos.len(), |a, b| self.m_hat[(pos[a], pos[b])]))
    }

    pub fn gamma_of(&self, i: usize) -> Result<f64> {
        Ok(self.gamma_hat[self.position(i)?])
    }
}

fn row_norm_excluding(r: &DMatrix<f64>, i: usize, skip: &[usize], q: QNorm) -> f64 {
    let p = r.nrows();
    let v: Vec<f64> = (0..p).filter(|k| !skip.contains(k)).map(|k| r[(i, k)]).collect();
    q.norm(&v)
}

/// Per group, the member with the largest leave-one-out row norm (ties: smallest index).
pub fn select_representatives(r: &DMatrix<f64>, partition: &GroupPartition, q: QNorm) -> Result<RepresentativeSet> {
    if partition.is_empty() {
        return Err(Error::InvalidArgument("cannot select representatives of an empty partition".into()));
    }
    let mut indices = Vec::with_capacity(partition.g());
    for group in &partition.groups {
        let mut best = group[0];
        let mut best_norm = row_norm_excluding(r, best, &[best], q);
        for &i in &group[1..] {
            let nrm = row_norm_excluding(r, i, &[i], q);
            if nrm > best_norm {
                best = i;
                best_norm = nrm;
            }
        }
        indices.push(best);
    }
    Ok(RepresentativeSet { indices, source_groups: (0..partition.g()).collect() })
}

fn diagonal_ratio(r: &DMatrix<f64>, i: usize, j: usize, q: QNorm) -> Result<f64> {
    let num = row_norm_excluding(r, i, &[i, j], q);
    let den = row_norm_excluding(r, j, &[i, j], q);
    if den <= f64::EPSILON {
        return Err(Error::DegenerateRow(j));
    }
    Ok(r[(i, j)].abs() * num / den)
}

/// `M` on the universe of `partition`: off-diagonals are copied from `r`,
/// each diagonal entry comes from a within-group ratio and is clipped to `[0, 1]`.
pub fn estimate_m(
    r: &DMatrix<f64>,
    partition: &GroupPartition,
    scores: &ScoreTable,
    q: QNorm,
    rule: DiagonalRule,
) -> Result<LowRankEstimate> {
    for (k, g) in partition.groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::GroupTooSmall(k));
        }
    }
    let idx = partition.universe.clone();
    let h = idx.len();
    let mut m = DMatrix::from_fn(h, h, |a, b| r[(idx[a], idx[b])]);
    for (pos, &i) in idx.iter().enumerate() {
        let group = &partition.groups[partition.group_of(i).expect("universe member")];
        let diag = match rule {
            DiagonalRule::BestPartner => {
                let mut j_best = usize::MAX;
                let mut s_best = f64::INFINITY;
                for &l in group.iter().filter(|&&l| l != i) {
                    let s = scores.get(i, l);
                    if s < s_best {
                        s_best = s;
                        j_best = l;
                    }
                }
                diagonal_ratio(r, i, j_best, q)?
            }
            DiagonalRule::GroupMean => {
                let partners: Vec<usize> = group.iter().copied().filter(|&l| l != i).collect();
                let mut acc = 0.0;
                for &l in &partners {
                    acc += diagonal_ratio(r, i, l, q)?;
                }
                acc / partners.len() as f64
            }
        };
        m[(pos, pos)] = diag.clamp(0.0, 1.0);
    }
    let gamma_hat = DVector::from_fn(h, |k, _| 1.0 - m[(k, k)]);
    Ok(LowRankEstimate { m_hat: m, index_set: idx, gamma_hat })
}

/// Eigenvalues of the representative block together with the resulting rank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankEstimate {
    pub k_hat: usize,
    pub mu: f64,
    pub eigenvalues: Vec<f64>,
}

/// Number of eigenvalues of `(M + M^T)/2` that reach `mu`.
pub fn estimate_k(m_ll: &DMatrix<f64>, mu: f64) -> Result<RankEstimate> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::InvalidArgument(format!("mu must be positive and finite, got {mu}")));
    }
    if m_ll.nrows() != m_ll.ncols() {
        return Err(Error::InvalidArgument("M block must be square".into()));
    }
    let (eigenvalues, _) = sym_eigen_desc(m_ll);
    let k_hat = eigenvalues.iter().take_while(|&&l| l >= mu).count();
    Ok(RankEstimate { k_hat, mu, eigenvalues })
}
