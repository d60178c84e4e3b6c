//! Data-driven choice of the grouping threshold, the latent dimension and
//! the pre-screening constant by sample splitting.
//!
//! Every routine fits on one part of the rows and scores the fit against the
//! correlation matrix of the held-out part. Thresholds are carried between
//! sample sizes through their constant `c` in `delta = c * sqrt(log(p ∨ n) / n)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::{rate_unit, sample_correlation, CorrelationModel, DataMatrix};
use crate::error::{Error, Result};
use crate::linalg::{pinv_symmetric, sym_eigen_desc};
use crate::loadings::{estimate_factor, estimate_pure_loadings, estimate_sigma_z, FactorEstimate};
use crate::parallel::{find_parallel, GroupPartition};
use crate::prune::{parallel_groups, select_pure, PvsOptions, RankRule};
use crate::rank::{estimate_m, select_representatives, DiagonalRule, RepresentativeSet};
use crate::score::{score_sq, score_table, QNorm, ScoreTable};

/// Method for choosing the latent dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMethod {
    /// Truncate the training `M` to `k` terms and pick the best `k` directly.
    #[default]
    DirectK,
    /// Pick the eigenvalue threshold constant from a grid.
    MuGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub n_grid: usize,
    pub seed: u64,
    /// 2 (split-half) or 10.
    pub folds: usize,
    /// `(low, high, step)` for the rank-threshold constant.
    pub mu_grid: (f64, f64, f64),
    pub rank_method: RankMethod,
    /// Use the same row split for every CV routine in one fit.
    pub reuse_split: bool,
    pub diagonal_rule: DiagonalRule,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_grid: 50,
            seed: 0,
            folds: 2,
            mu_grid: (0.1, 0.5, 0.02),
            rank_method: RankMethod::DirectK,
            reuse_split: true,
            diagonal_rule: DiagonalRule::BestPartner,
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid == 0 {
            return Err(Error::InvalidArgument("n_grid must be positive".into()));
        }
        if self.folds != 2 && self.folds != 10 {
            return Err(Error::InvalidArgument(format!("folds must be 2 or 10, got {}", self.folds)));
        }
        let (lo, hi, step) = self.mu_grid;
        if !(lo > 0.0 && hi >= lo && step > 0.0) {
            return Err(Error::InvalidArgument("mu grid needs 0 < low <= high and step > 0".into()));
        }
        Ok(())
    }

    /// Constants of the rank-threshold grid, ascending.
    pub fn mu_constants(&self) -> Vec<f64> {
        let (lo, hi, step) = self.mu_grid;
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| lo + k as f64 * step).collect()
    }
}

/// Training and validation rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded row splits: two halves (odd `n` puts the extra row in training),
/// or ten folds each held out once.
pub fn make_splits(n: usize, folds: usize, seed: u64) -> Result<Vec<Split>> {
    if n < 4 || (folds == 10 && n < 20) {
        return Err(Error::DegenerateSplit(format!("n = {n} rows is too few for {folds}-fold splitting")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    if folds == 2 {
        let cut = n.div_ceil(2);
        return Ok(vec![Split { train: sorted(order[..cut].to_vec()), test: sorted(order[cut..].to_vec()) }]);
    }
    Ok((0..folds)
        .map(|f| {
            let (test, train): (Vec<(usize, usize)>, Vec<(usize, usize)>) =
                order.iter().copied().enumerate().partition(|(pos, _)| pos % folds == f);
            Split { train: sorted(train.into_iter().map(|x| x.1).collect()), test: sorted(test.into_iter().map(|x| x.1).collect()) }
        })
        .collect())
}

fn split_model(x: &DataMatrix, rows: &[usize]) -> Result<CorrelationModel> {
    let part = x.select_rows(rows)?;
    sample_correlation(&part, true).map_err(|e| match e {
        Error::ZeroVarianceColumn(j) => Error::DegenerateSplit(format!("column {j} has zero variance within a split")),
        other => other,
    })
}

struct FoldData {
    r1: DMatrix<f64>,
    r2: DMatrix<f64>,
    n1: usize,
}

fn fold_data(x: &DataMatrix, splits: &[Split]) -> Result<Vec<FoldData>> {
    splits
        .iter()
        .map(|s| Ok(FoldData { r1: split_model(x, &s.train)?.r_hat, r2: split_model(x, &s.test)?.r_hat, n1: s.train.len() }))
        .collect()
}

fn lexicographic_argmin(losses: &[f64]) -> usize {
    let mut best = 0;
    for (k, &l) in losses.iter().enumerate() {
        if l < losses[best] || (losses[best].is_nan() && !l.is_nan()) {
            best = k;
        }
    }
    best
}

/// `log`-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 || lo == hi {
        return vec![lo; n.max(1)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Off-diagonal Frobenius distance between `target` and the reconstruction
/// implied by treating each group as one factor.
///
/// Grouped rows use `B Sigma_Z B^T`, rows crossing in and out of the groups use
/// `r1`, and the ungrouped block uses `R_cH M^+ R_Hc` with `M = B Sigma_Z B^T`.
pub fn reconstruction_loss(
    r1: &DMatrix<f64>,
    target: &DMatrix<f64>,
    groups: &GroupPartition,
    b: &DMatrix<f64>,
    sigma_z: &DMatrix<f64>,
) -> f64 {
    let p = r1.nrows();
    let g = groups.g();
    let labels = groups.labels(p);
    let rest: Vec<usize> = (0..p).filter(|&i| labels[i].is_none()).collect();
    let d: Vec<f64> = groups
        .groups
        .iter()
        .enumerate()
        .map(|(k, grp)| grp.iter().map(|&i| b[(i, k)] * b[(i, k)]).sum::<f64>().sqrt())
        .collect();
    // M = Q (D C D) Q^T with orthonormal block columns Q = B D^{-1}
    let dcd = DMatrix::from_fn(g, g, |a, c| d[a] * sigma_z[(a, c)] * d[c]);
    let core = pinv_symmetric(&dcd).matrix;
    let w = DMatrix::from_fn(rest.len(), g, |ci, a| {
        groups.groups[a].iter().map(|&i| r1[(rest[ci], i)] * b[(i, a)]).sum::<f64>() / d[a]
    });
    let wc = &w * &core;
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let fitted = match (labels[i], labels[j]) {
                (Some(a), Some(c)) => b[(i, a)] * sigma_z[(a, c)] * b[(j, c)],
                (None, None) => {
                    let (ci, cj) = (rest.binary_search(&i).unwrap(), rest.binary_search(&j).unwrap());
                    wc.row(ci).dot(&w.row(cj))
                }
                _ => r1[(i, j)],
            };
            let diff = target[(i, j)] - fitted;
            acc += diff * diff;
        }
    }
    acc.sqrt()
}

fn grid_point_loss(fold: &FoldData, scores: &ScoreTable, delta: f64, rule: DiagonalRule) -> f64 {
    let groups = find_parallel(scores, delta);
    if groups.is_empty() {
        return f64::INFINITY;
    }
    let attempt = || -> Result<f64> {
        let low = estimate_m(&fold.r1, &groups, scores, scores.q, rule)?;
        let b = estimate_pure_loadings(&fold.r1, &groups, &low)?;
        let sz = estimate_sigma_z(&fold.r1, &b, &groups)?;
        Ok(reconstruction_loss(&fold.r1, &fold.r2, &groups, &b, &sz))
    };
    attempt().ok().filter(|l| l.is_finite()).unwrap_or(f64::INFINITY)
}

/// Outcome of threshold selection.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaCv {
    /// Threshold for the full sample.
    pub delta: f64,
    pub c_star: f64,
    /// Grid constants `c`, ascending.
    pub c_grid: Vec<f64>,
    /// Thresholds on the (first) training split.
    pub delta_grid: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Threshold chosen by held-out reconstruction loss over a log grid that
/// spans half the observed score range on the training split.
pub fn cv_delta(x: &DataMatrix, q: QNorm, config: &CvConfig) -> Result<DeltaCv> {
    config.validate()?;
    let (n, p) = (x.n(), x.p());
    let splits = make_splits(n, config.folds, config.seed)?;
    let folds = fold_data(x, &splits)?;
    let tables: Vec<ScoreTable> = folds.iter().map(|f| score_table(&f.r1, q)).collect::<Result<_>>()?;
    let first = &tables[0];
    let lo = first.min_positive().unwrap_or(f64::MIN_POSITIVE) / 2.0;
    let hi = first.max_off_diagonal().max(lo) / 2.0;
    let hi = hi.max(lo);
    let delta_grid = log_grid(lo, hi, config.n_grid);
    let unit1 = rate_unit(folds[0].n1, p);
    let c_grid: Vec<f64> = delta_grid.iter().map(|d| d / unit1).collect();
    let mut losses = vec![0.0; c_grid.len()];
    for (fold, table) in folds.iter().zip(&tables) {
        let unit = rate_unit(fold.n1, p);
        let fold_losses: Vec<f64> =
            c_grid.par_iter().map(|&c| grid_point_loss(fold, table, c * unit, config.diagonal_rule)).collect();
        for (acc, l) in losses.iter_mut().zip(fold_losses) {
            *acc += l / folds.len() as f64;
        }
    }
    let best = lexicographic_argmin(&losses);
    let c_star = c_grid[best];
    Ok(DeltaCv { delta: c_star * rate_unit(n, p), c_star, c_grid, delta_grid, losses })
}

/// Scores only for pairs inside the same group; other entries are `+inf`.
fn within_group_scores(r: &DMatrix<f64>, groups: &GroupPartition, q: QNorm) -> Result<ScoreTable> {
    let p = r.nrows();
    let mut values = DMatrix::from_element(p, p, f64::INFINITY);
    for g in &groups.groups {
        for (a, &i) in g.iter().enumerate() {
            for &j in &g[a + 1..] {
                let s = score_sq(r, i, j, q)?.value;
                values[(i, j)] = s;
                values[(j, i)] = s;
            }
        }
    }
    for i in 0..p {
        values[(i, i)] = 0.0;
    }
    Ok(ScoreTable { q, values, minimizers: None })
}

fn m_on_representatives(
    r: &DMatrix<f64>,
    groups: &GroupPartition,
    reps: &RepresentativeSet,
    q: QNorm,
    rule: DiagonalRule,
) -> Result<DMatrix<f64>> {
    let scores = within_group_scores(r, groups, q)?;
    estimate_m(r, groups, &scores, q, rule)?.restrict(&reps.indices)
}

/// Smallest `k` whose loss is within round-off of the minimum; exact low
/// rank makes every `k >= K` tie at zero.
fn smallest_near_min(losses: &[f64], scale: f64) -> usize {
    let best = losses[lexicographic_argmin(losses)];
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    losses.iter().position(|&l| l <= best + tol).unwrap_or(0)
}

fn truncation_losses(m1: &DMatrix<f64>, m2: &DMatrix<f64>) -> Vec<f64> {
    let (vals, vecs) = sym_eigen_desc(m1);
    let g = vals.len();
    let mut approx = DMatrix::zeros(g, g);
    let mut out = Vec::with_capacity(g);
    for k in 0..g {
        let u = vecs.column(k);
        approx += (&u * u.transpose()) * vals[k];
        out.push((&approx - m2).norm_squared());
    }
    out
}

/// Outcome of rank selection.
#[derive(Debug, Clone, Serialize)]
pub struct RankCv {
    pub method: RankMethod,
    pub k_hat: usize,
    /// Full-sample threshold when the grid method is used.
    pub mu: Option<f64>,
    /// Grid of `k` (direct) or of threshold constants (grid method).
    pub grid: Vec<f64>,
    pub losses: Vec<f64>,
}

/// Latent dimension chosen on held-out rows for a fixed grouping.
///
/// `delta` is the full-sample threshold that produced `groups`; the grid
/// method scales it to the training size.
pub fn cv_rank(
    x: &DataMatrix,
    groups: &GroupPartition,
    reps: &RepresentativeSet,
    q: QNorm,
    delta: f64,
    config: &CvConfig,
) -> Result<RankCv> {
    config.validate()?;
    let g = groups.g();
    if g == 0 {
        return Err(Error::NoParallelPairs);
    }
    if g == 1 {
        return Ok(RankCv { method: config.rank_method, k_hat: 1, mu: None, grid: vec![1.0], losses: vec![0.0] });
    }
    let seed = if config.reuse_split { config.seed } else { config.seed.wrapping_add(1) };
    let splits = make_splits(x.n(), config.folds, seed)?;
    let folds = fold_data(x, &splits)?;
    let pairs: Vec<(DMatrix<f64>, DMatrix<f64>, usize)> = folds
        .iter()
        .map(|f| {
            Ok((
                m_on_representatives(&f.r1, groups, reps, q, config.diagonal_rule)?,
                m_on_representatives(&f.r2, groups, reps, q, config.diagonal_rule)?,
                f.n1,
            ))
        })
        .collect::<Result<_>>()?;
    let trunc: Vec<Vec<f64>> = pairs.iter().map(|(m1, m2, _)| truncation_losses(m1, m2)).collect();
    let (n, p) = (x.n(), x.p());
    match config.rank_method {
        RankMethod::DirectK => {
            let losses: Vec<f64> = (0..g).map(|k| trunc.iter().map(|t| t[k]).sum::<f64>() / trunc.len() as f64).collect();
            let scale = pairs.iter().map(|(_, m2, _)| m2.norm_squared()).sum::<f64>() / pairs.len() as f64;
            let best = smallest_near_min(&losses, scale);
            Ok(RankCv {
                method: RankMethod::DirectK,
                k_hat: best + 1,
                mu: None,
                grid: (1..=g).map(|k| k as f64).collect(),
                losses,
            })
        }
        RankMethod::MuGrid => {
            let consts = config.mu_constants();
            let gf = g as f64;
            let threshold = |c: f64, d: f64| c * d * (gf.sqrt() + gf * d);
            let c_delta = delta / rate_unit(n, p);
            let mut losses = vec![0.0; consts.len()];
            for ((m1, _, n1), t) in pairs.iter().zip(&trunc) {
                let d1 = c_delta * rate_unit(*n1, p);
                let (vals, _) = sym_eigen_desc(m1);
                for (slot, &c) in losses.iter_mut().zip(&consts) {
                    let mu = threshold(c, d1);
                    let k = vals.iter().take_while(|&&l| l >= mu).count();
                    *slot += if k == 0 { f64::INFINITY } else { t[k - 1] } / trunc.len() as f64;
                }
            }
            let best = lexicographic_argmin(&losses);
            let mu = threshold(consts[best], delta);
            let m_full = {
                let model = sample_correlation(x, true)?;
                m_on_representatives(&model.r_hat, groups, reps, q, config.diagonal_rule)?
            };
            let (vals, _) = sym_eigen_desc(&m_full);
            let k_hat = vals.iter().take_while(|&&l| l >= mu).count();
            Ok(RankCv { method: RankMethod::MuGrid, k_hat, mu: Some(mu), grid: consts, losses })
        }
    }
}

/// Outcome of pre-screening.
#[derive(Debug, Clone, Serialize)]
pub struct Prescreen {
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub c_star: f64,
    pub c_grid: Vec<f64>,
    pub losses: Vec<f64>,
}

/// `||R_{j,-j}||_q / ((p - 1)^{1/q} sqrt(log(p ∨ n) / n))` per variable.
pub fn screening_statistics(r: &DMatrix<f64>, n: usize, q: QNorm) -> Vec<f64> {
    let p = r.nrows();
    let scale = rate_unit(n, p) / q.normalizer(p - 1);
    (0..p)
        .map(|j| {
            let row: Vec<f64> = (0..p).filter(|&k| k != j).map(|k| r[(j, k)]).collect();
            q.norm(&row) / scale
        })
        .collect()
}

/// Variables whose statistic is at or below `c`; nothing is removed for `c <= 0`.
pub fn screen_with_constant(stats: &[f64], c: f64) -> Vec<usize> {
    if c <= 0.0 {
        return Vec::new();
    }
    stats.iter().enumerate().filter(|(_, &t)| t <= c).map(|(j, _)| j).collect()
}

fn zeroed_loss(r1: &DMatrix<f64>, r2: &DMatrix<f64>, removed: &[usize]) -> f64 {
    let p = r1.nrows();
    let mut mask = vec![false; p];
    for &j in removed {
        mask[j] = true;
    }
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i != j {
                let fitted = if mask[i] || mask[j] { 0.0 } else { r1[(i, j)] };
                let d = r2[(i, j)] - fitted;
                acc += d * d;
            }
        }
    }
    acc.sqrt()
}

fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Removal of variables with near-zero correlation rows. The constant is
/// chosen on a uniform grid between the 0% and 50% quantiles of the training
/// statistics, scoring each candidate by zeroing the removed rows.
pub fn prescreen(x: &DataMatrix, q: QNorm, config: &CvConfig) -> Result<Prescreen> {
    config.validate()?;
    let p = x.p();
    if p < 3 {
        return Err(Error::DimensionTooSmall { p, min: 3 });
    }
    let splits = make_splits(x.n(), config.folds, config.seed)?;
    let folds = fold_data(x, &splits)?;
    let stats1 = screening_statistics(&folds[0].r1, folds[0].n1, q);
    let mut sorted = stats1.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = (quantile(&sorted, 0.0), quantile(&sorted, 0.5));
    let m = config.n_grid;
    let c_grid: Vec<f64> =
        (0..m).map(|k| if m == 1 { lo } else { lo + (hi - lo) * k as f64 / (m - 1) as f64 }).collect();
    let mut losses = vec![0.0; m];
    for fold in &folds {
        let stats = screening_statistics(&fold.r1, fold.n1, q);
        let fold_losses: Vec<f64> =
            c_grid.par_iter().map(|&c| zeroed_loss(&fold.r1, &fold.r2, &screen_with_constant(&stats, c))).collect();
        for (acc, l) in losses.iter_mut().zip(fold_losses) {
            *acc += l / folds.len() as f64;
        }
    }
    let best = lexicographic_argmin(&losses);
    let c_star = c_grid[best];
    let full = sample_correlation(x, true)?;
    let removed = screen_with_constant(&screening_statistics(&full.r_hat, x.n(), q), c_star);
    if removed.len() == p {
        return Err(Error::AllRemoved);
    }
    let kept = (0..p).filter(|j| removed.binary_search(j).is_err()).collect();
    Ok(Prescreen { kept, removed, c_star, c_grid, losses })
}

/// Threshold source for a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaChoice {
    Fixed(f64),
    Cv,
}

/// Rank source for a fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuChoice {
    Fixed(f64),
    Cv(RankMethod),
}

/// Fully resolved settings for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub q: QNorm,
    pub delta: DeltaChoice,
    pub mu: MuChoice,
    pub prescreen: bool,
    pub cv: CvConfig,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { q: QNorm::TWO, delta: DeltaChoice::Cv, mu: MuChoice::Cv(RankMethod::DirectK), prescreen: false, cv: CvConfig::default() }
    }
}

/// A fit together with its tuning diagnostics.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub estimate: FactorEstimate,
    pub delta_cv: Option<DeltaCv>,
    pub rank_cv: Option<RankCv>,
    pub prescreen: Option<Prescreen>,
}

impl FitOutcome {
    pub fn to_json(&self, settings: &FitSettings) -> serde_json::Value {
        let mut v = self.estimate.to_json();
        let obj = v.as_object_mut().expect("estimate serializes to an object");
        obj.insert("settings".into(), serde_json::to_value(settings).expect("settings serialize"));
        let mut tuning = serde_json::Map::new();
        if let Some(d) = &self.delta_cv {
            tuning.insert("delta".into(), serde_json::to_value(d).expect("serialize"));
        }
        if let Some(r) = &self.rank_cv {
            tuning.insert("rank".into(), serde_json::to_value(r).expect("serialize"));
        }
        if let Some(s) = &self.prescreen {
            tuning.insert("prescreen".into(), serde_json::to_value(s).expect("serialize"));
        }
        obj.insert("tuning".into(), serde_json::Value::Object(tuning));
        v
    }
}

/// Lifts an estimate on `kept` columns back to all `p` columns; removed
/// variables get zero loadings and unit noise.
fn expand_estimate(est: FactorEstimate, kept: &[usize], p: usize) -> Result<FactorEstimate> {
    let k = est.k_hat;
    let mut b = DMatrix::zeros(p, k);
    let mut a = DMatrix::zeros(p, k);
    let mut gamma = DVector::from_element(p, 1.0);
    for (local, &orig) in kept.iter().enumerate() {
        b.set_row(orig, &est.b_hat.row(local));
        a.set_row(orig, &est.a_hat.row(local));
        gamma[orig] = est.gamma_hat[local];
    }
    let mut trace = est.trace.clone();
    trace.selected = trace.selected.iter().map(|&i| kept[i]).collect();
    Ok(FactorEstimate {
        parallel_partition: est.parallel_partition.remap(kept)?,
        representatives: est.representatives.iter().map(|&i| kept[i]).collect(),
        pure_partition: est.pure_partition.remap(kept)?,
        b_hat: b,
        a_hat: a,
        gamma_hat: gamma,
        trace,
        ..est
    })
}

/// Screening (optional), threshold and rank selection, then the full pipeline.
pub fn fit(x: &DataMatrix, settings: &FitSettings) -> Result<FitOutcome> {
    settings.cv.validate()?;
    let q = settings.q;
    let p_total = x.p();
    let (screen, work) = if settings.prescreen {
        let s = prescreen(x, QNorm::TWO, &settings.cv)?;
        let sub = x.select_columns(&s.kept)?;
        (Some(s), sub)
    } else {
        (None, x.clone())
    };
    let delta_cv = match settings.delta {
        DeltaChoice::Fixed(_) => None,
        DeltaChoice::Cv => Some(cv_delta(&work, q, &settings.cv)?),
    };
    let delta = match settings.delta {
        DeltaChoice::Fixed(d) => d,
        DeltaChoice::Cv => delta_cv.as_ref().expect("computed above").delta,
    };
    let model = sample_correlation(&work, true)?;
    let scores = score_table(&model.r_hat, q)?;
    let options = PvsOptions { diagonal_rule: settings.cv.diagonal_rule };
    let (rank_rule, rank_cv) = match settings.mu {
        MuChoice::Fixed(mu) => (RankRule::Mu(mu), None),
        MuChoice::Cv(method) => {
            let groups = parallel_groups(&scores, delta)?;
            let reps = select_representatives(&model.r_hat, &groups, q)?;
            let cfg = CvConfig { rank_method: method, ..settings.cv.clone() };
            let rc = cv_rank(&work, &groups, &reps, q, delta, &cfg)?;
            let rule = match (method, rc.mu) {
                (RankMethod::MuGrid, Some(mu)) => RankRule::Mu(mu),
                _ => RankRule::Fixed(rc.k_hat),
            };
            (rule, Some(rc))
        }
    };
    let selected = select_pure(&model, &scores, delta, rank_rule, &options)?;
    let mut estimate = estimate_factor(&model, &selected)?;
    if let Some(s) = &screen {
        estimate = expand_estimate(estimate, &s.kept, p_total)?;
    }
    Ok(FitOutcome { estimate, delta_cv, rank_cv, prescreen: screen })
}
