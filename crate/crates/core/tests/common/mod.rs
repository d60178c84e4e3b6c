#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use replicadetect::CorrelationModel;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Correlation matrix of `p + extra` random Gaussian rows.
pub fn random_correlation(rng: &mut ChaCha8Rng, p: usize, extra: usize) -> DMatrix<f64> {
    let x = DMatrix::from_fn(p + extra, p, |_, _| normal(rng));
    let s = x.transpose() * &x;
    let mut r = DMatrix::from_fn(p, p, |i, j| s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt());
    for i in 0..p {
        r[(i, i)] = 1.0;
        for j in 0..i {
            r[(i, j)] = r[(j, i)];
        }
    }
    r
}

/// Leave-two-out rows `(u, v)` of a pair, gathered directly.
pub fn pair_rows(r: &DMatrix<f64>, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let p = r.nrows();
    let keep: Vec<usize> = (0..p).filter(|&k| k != i && k != j).collect();
    (keep.iter().map(|&k| r[(i, k)]).collect(), keep.iter().map(|&k| r[(j, k)]).collect())
}

/// `q = 2` score by scanning each slice on a uniform grid of `points` values.
pub fn grid_score_l2(r: &DMatrix<f64>, i: usize, j: usize, points: usize) -> f64 {
    let (u, v) = pair_rows(r, i, j);
    let slice = |base: &[f64], dir: &[f64]| {
        let mut best = f64::INFINITY;
        for k in 0..points {
            let t = -1.0 + 2.0 * k as f64 / (points - 1) as f64;
            let s: f64 = base.iter().zip(dir).map(|(b, d)| (b + t * d).powi(2)).sum();
            best = best.min(s);
        }
        best
    };
    (slice(&u, &v).min(slice(&v, &u)) / u.len() as f64).sqrt()
}

/// `q = inf` score by evaluating every breakpoint of the piecewise-linear slices.
pub fn breakpoint_score_inf(r: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let (u, v) = pair_rows(r, i, j);
    let slice = |base: &[f64], dir: &[f64]| {
        let f = |t: f64| base.iter().zip(dir).map(|(b, d)| (b + t * d).abs()).fold(0.0_f64, f64::max);
        let mut cands = vec![-1.0, 1.0];
        let m = base.len();
        for a in 0..m {
            if dir[a] != 0.0 {
                cands.push(-base[a] / dir[a]);
            }
            for b in 0..m {
                if a != b {
                    let den = dir[a] - dir[b];
                    if den != 0.0 {
                        cands.push((base[b] - base[a]) / den);
                    }
                    let den = dir[a] + dir[b];
                    if den != 0.0 {
                        cands.push(-(base[a] + base[b]) / den);
                    }
                }
            }
        }
        cands.into_iter().filter(|t| (-1.0..=1.0).contains(t)).map(f).fold(f64::INFINITY, f64::min)
    };
    slice(&u, &v).min(slice(&v, &u))
}

/// A factor model with known structure.
#[derive(Debug, Clone)]
pub struct ModelFixture {
    pub a: DMatrix<f64>,
    pub sigma_z: DMatrix<f64>,
    pub noise: DVector<f64>,
    /// True parallel groups (pure and non-pure), sorted.
    pub parallel: Vec<Vec<usize>>,
    /// True pure groups, indexed by factor.
    pub pure: Vec<Vec<usize>>,
}

impl ModelFixture {
    pub fn k(&self) -> usize {
        self.a.ncols()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = &self.a * &self.sigma_z * self.a.transpose();
        for i in 0..s.nrows() {
            s[(i, i)] += self.noise[i];
        }
        s
    }

    pub fn model(&self) -> CorrelationModel {
        CorrelationModel::from_covariance(self.covariance(), None).unwrap()
    }

    /// Scaled loadings `D^{-1/2} A`.
    pub fn b(&self) -> DMatrix<f64> {
        let s = self.covariance();
        DMatrix::from_fn(self.a.nrows(), self.k(), |i, k| self.a[(i, k)] / s[(i, i)].sqrt())
    }

    pub fn parallel_universe(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.parallel.iter().flatten().copied().collect();
        u.sort_unstable();
        u
    }
}

fn random_factor_correlation(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let w = DMatrix::from_fn(k + 3, k, |_, _| normal(rng));
    let s = w.transpose() * &w + DMatrix::identity(k, k) * (k as f64);
    DMatrix::from_fn(k, k, |a, b| s[(a, b)] / (s[(a, a)] * s[(b, b)]).sqrt())
}

fn random_sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Rows in a random order: `parallel` groups follow the row permutation.
fn shuffle_rows(rng: &mut ChaCha8Rng, rows: Vec<Vec<f64>>, groups: Vec<Vec<usize>>, pure: Vec<Vec<usize>>, k: usize)
    -> (DMatrix<f64>, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let p = rows.len();
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    // row `old` moves to position `perm[old]`
    let mut a = DMatrix::zeros(p, k);
    for (old, row) in rows.iter().enumerate() {
        for c in 0..k {
            a[(perm[old], c)] = row[c];
        }
    }
    let remap = |gs: Vec<Vec<usize>>| {
        let mut out: Vec<Vec<usize>> = gs
            .into_iter()
            .map(|g| {
                let mut g: Vec<usize> = g.into_iter().map(|i| perm[i]).collect();
                g.sort_unstable();
                g
            })
            .collect();
        out.sort_by_key(|g| g[0]);
        out
    };
    let pure_mapped: Vec<Vec<usize>> = pure
        .into_iter()
        .map(|g| {
            let mut g: Vec<usize> = g.into_iter().map(|i| perm[i]).collect();
            g.sort_unstable();
            g
        })
        .collect();
    (a, remap(groups), pure_mapped)
}

/// Model with `g >= k` groups of parallel rows spanning rank `k`, plus
/// generic rows; no pure-variable structure is imposed.
pub fn random_parallel_model(rng: &mut ChaCha8Rng, max_p: usize, max_k: usize) -> ModelFixture {
    let k = rng.random_range(1..=max_k);
    loop {
        let g = rng.random_range(k..=k + 3);
        let sizes: Vec<usize> = (0..g).map(|_| rng.random_range(2..=4)).collect();
        let h: usize = sizes.iter().sum();
        if h + 2 > max_p {
            continue;
        }
        let extra = rng.random_range(2..=(max_p - h).max(2).min(8));
        let mut rows = Vec::new();
        let mut groups = Vec::new();
        for (gi, &sz) in sizes.iter().enumerate() {
            // the first k directions are generic; more groups reuse random directions
            let dir: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
            let _ = gi;
            let mut grp = Vec::new();
            for _ in 0..sz {
                let scale = random_sign(rng) * rng.random_range(0.4..1.5);
                grp.push(rows.len());
                rows.push(dir.iter().map(|d| d * scale).collect::<Vec<f64>>());
            }
            groups.push(grp);
        }
        for _ in 0..extra {
            rows.push((0..k).map(|_| normal(rng)).collect());
        }
        let (a, parallel, _) = shuffle_rows(rng, rows, groups, Vec::new(), k);
        let p = a.nrows();
        let noise = DVector::from_fn(p, |_, _| rng.random_range(0.3..1.5));
        let fx = ModelFixture { a, sigma_z: random_factor_correlation(rng, k), noise, parallel, pure: Vec::new() };
        if k == 1 && extra > 0 {
            // with one factor every row is parallel to every other
            let all: Vec<usize> = (0..p).collect();
            return ModelFixture { parallel: vec![all], ..fx };
        }
        return fx;
    }
}

/// Model with two or more pure variables per factor (arbitrary loadings),
/// groups of parallel non-pure rows scaled below every pure group's largest
/// loading, and generic rows.
pub fn random_pure_model(rng: &mut ChaCha8Rng, max_k: usize) -> ModelFixture {
    let k = rng.random_range(2..=max_k);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut groups = Vec::new();
    let mut pure = Vec::new();
    let mut xi = vec![0.0_f64; k];
    for f in 0..k {
        let sz = rng.random_range(2..=4);
        let mut grp = Vec::new();
        for _ in 0..sz {
            let mag = rng.random_range(0.5..1.5);
            xi[f] = xi[f].max(mag);
            let mut row = vec![0.0; k];
            row[f] = random_sign(rng) * mag;
            grp.push(rows.len());
            rows.push(row);
        }
        pure.push(grp.clone());
        groups.push(grp);
    }
    let n_nonpure_groups = rng.random_range(1..=2);
    for _ in 0..n_nonpure_groups {
        let dir: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
        let weight: f64 = dir.iter().zip(&xi).map(|(d, x)| d.abs() / x).sum();
        let sz = rng.random_range(2..=3);
        let mut grp = Vec::new();
        for _ in 0..sz {
            // sum_k |A_jk| / xi_k stays in [0.2, 0.8]
            let target = rng.random_range(0.2..0.8);
            let s = random_sign(rng) * target / weight;
            grp.push(rows.len());
            rows.push(dir.iter().map(|d| d * s).collect());
        }
        groups.push(grp);
    }
    let generic = rng.random_range(2..=5);
    for _ in 0..generic {
        let v: Vec<f64> = (0..k).map(|_| normal(rng)).collect();
        let weight: f64 = v.iter().zip(&xi).map(|(d, x)| d.abs() / x).sum();
        let target = rng.random_range(0.2..0.9);
        rows.push(v.iter().map(|d| d * target / weight).collect());
    }
    let (a, parallel, pure) = shuffle_rows(rng, rows, groups, pure, k);
    let p = a.nrows();
    let noise = DVector::from_fn(p, |_, _| rng.random_range(0.3..1.5));
    ModelFixture { a, sigma_z: random_factor_correlation(rng, k), noise, parallel, pure }
}

/// Smallest score among pairs that are not in a common true parallel group.
pub fn min_nonparallel_score(scores: &DMatrix<f64>, parallel: &[Vec<usize>]) -> f64 {
    let p = scores.nrows();
    let mut label = vec![usize::MAX; p];
    for (g, grp) in parallel.iter().enumerate() {
        for &i in grp {
            label[i] = g;
        }
    }
    let mut best = f64::INFINITY;
    for i in 0..p {
        for j in (i + 1)..p {
            if label[i] == usize::MAX || label[i] != label[j] {
                best = best.min(scores[(i, j)]);
            }
        }
    }
    best
}

/// `lambda_K(M_LL) / 2` with representatives picked from the true groups
/// and `M = B Sigma_Z B^T` computed from the truth.
pub fn half_kth_eigenvalue(fx: &ModelFixture) -> f64 {
    let b = fx.b();
    let m = &b * &fx.sigma_z * b.transpose();
    let r = fx.model().r_hat;
    let reps: Vec<usize> = fx
        .parallel
        .iter()
        .map(|g| {
            let norm = |i: usize| (0..r.nrows()).filter(|&k| k != i).map(|k| r[(i, k)].powi(2)).sum::<f64>();
            let mut best = g[0];
            for &i in &g[1..] {
                if norm(i) > norm(best) {
                    best = i;
                }
            }
            best
        })
        .collect();
    let mll = DMatrix::from_fn(reps.len(), reps.len(), |a, c| m[(reps[a], reps[c])]);
    let mut eig: Vec<f64> = mll.symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig[fx.k() - 1] / 2.0
}

/// Example with W1 = 1.1 Z1, W2 = 0.8 Z1, W3 = Z2, W4 = 0.5 Z2,
/// W5 = 0.2 Z1 + 0.4 Z2, W6 = -0.3 Z1 - 0.6 Z2 and independent unit factors.
pub fn example_loadings() -> DMatrix<f64> {
    DMatrix::from_row_slice(6, 2, &[1.1, 0.0, 0.8, 0.0, 0.0, 1.0, 0.0, 0.5, 0.2, 0.4, -0.3, -0.6])
}
