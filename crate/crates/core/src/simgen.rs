//! Synthetic factor-model data and recovery metrics.
//!
//! Pure rows come first, laid out group by group; within a group the
//! positive members precede the negative ones. Non-pure rows follow, then
//! any appended pure-noise columns (zero loading rows).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corr::DataMatrix;
use crate::error::{Error, Result};
use crate::loadings::{align_signed_permutation, FactorEstimate};
use crate::parallel::GroupPartition;
use crate::tuning::{fit, FitSettings};

/// Sign patterns `(positive, negative)` cycled over groups by default.
pub const DEFAULT_SIGN_PATTERNS: [(usize, usize); 5] = [(3, 2), (4, 1), (2, 3), (1, 4), (5, 0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    pub n: usize,
    /// Number of signal columns (pure and non-pure).
    pub p: usize,
    pub k: usize,
    pub alpha: f64,
    pub rho_z: f64,
    pub eta: f64,
    /// Per-group `(positive, negative)` pure counts; empty cycles the defaults.
    pub sign_patterns: Vec<(usize, usize)>,
    pub noise_lo: f64,
    pub noise_hi: f64,
    /// Appended columns with no factor loading.
    pub n0: usize,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            n: 300,
            p: 500,
            k: 10,
            alpha: 2.5,
            rho_z: 0.3,
            eta: 1.0,
            sign_patterns: Vec::new(),
            noise_lo: 1.0,
            noise_hi: 3.0,
            n0: 0,
            seed: 0,
        }
    }
}

impl SimScenario {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let sc: SimScenario = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn patterns(&self) -> Vec<(usize, usize)> {
        let base: &[(usize, usize)] = if self.sign_patterns.is_empty() { &DEFAULT_SIGN_PATTERNS } else { &self.sign_patterns };
        (0..self.k).map(|a| base[a % base.len()]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.n < 2 {
            return bad(format!("n must be at least 2, got {}", self.n));
        }
        let pats = self.patterns();
        if let Some(a) = pats.iter().position(|(pos, neg)| pos + neg < 2) {
            return bad(format!("group {a} needs at least two pure variables"));
        }
        let pure: usize = pats.iter().map(|(a, b)| a + b).sum();
        if pure > self.p {
            return bad(format!("pure variables ({pure}) exceed p ({})", self.p));
        }
        if !(0.0..1.0).contains(&self.rho_z) {
            return bad(format!("rho_z must lie in [0, 1), got {}", self.rho_z));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.eta >= 0.0) {
            return bad(format!("eta must be nonnegative, got {}", self.eta));
        }
        if !(self.noise_lo > 0.0 && self.noise_hi >= self.noise_lo) {
            return bad("noise range must satisfy 0 < noise_lo <= noise_hi".into());
        }
        Ok(())
    }
}

/// Ground truth behind a generated data set.
#[derive(Debug, Clone)]
pub struct Truth {
    /// `(p + n0) x K` loadings.
    pub a: DMatrix<f64>,
    pub sigma_z: DMatrix<f64>,
    /// Noise variances, one per column.
    pub sigma_e: DVector<f64>,
    pub pure: GroupPartition,
    /// Indices of appended pure-noise columns.
    pub noise_columns: Vec<usize>,
}

impl Truth {
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    /// `A Sigma_Z A^T + Sigma_E`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut s = &self.a * &self.sigma_z * self.a.transpose();
        for i in 0..s.nrows() {
            s[(i, i)] += self.sigma_e[i];
        }
        s
    }
}

/// `[Sigma_Z]_ab = (-1)^(a+b) rho^|a-b|`.
pub fn factor_correlation(k: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |a, b| {
        let sign = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
        sign * rho.powi(a.abs_diff(b) as i32)
    })
}

fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Data and truth for replicate `rep` of a scenario.
pub fn generate_replicate(sc: &SimScenario, rep: u64) -> Result<(DataMatrix, Truth)> {
    sc.validate()?;
    let mut rng = replicate_rng(sc.seed, rep);
    let (p, k, n) = (sc.p, sc.k, sc.n);
    let total = p + sc.n0;
    let sigma_z = factor_correlation(k, sc.rho_z);

    let mut a_tilde = DMatrix::zeros(total, k);
    let mut groups = Vec::with_capacity(k);
    let mut row = 0;
    for (a, (pos, neg)) in sc.patterns().into_iter().enumerate() {
        let mut g = Vec::with_capacity(pos + neg);
        for m in 0..pos + neg {
            a_tilde[(row, a)] = if m < pos { 1.0 } else { -1.0 };
            g.push(row);
            row += 1;
        }
        groups.push(g);
    }
    for j in row..p {
        let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let l1: f64 = draws.iter().map(|x| x.abs()).sum();
        for (c, v) in draws.into_iter().enumerate() {
            a_tilde[(j, c)] = v / l1;
        }
    }
    let unif12 = Uniform::new(1.0_f64, 2.0).expect("valid range");
    let v: Vec<f64> = (0..p).map(|_| unif12.sample(&mut rng).powf(sc.eta)).collect();
    let v_sum: f64 = v.iter().sum();
    let mut a = a_tilde;
    for j in 0..p {
        let d = sc.alpha * p as f64 * v[j] / v_sum;
        a.row_mut(j).scale_mut(d);
    }
    let noise = Uniform::<f64>::new_inclusive(sc.noise_lo, sc.noise_hi).expect("validated range");
    let sigma_e = DVector::from_fn(total, |_, _| noise.sample(&mut rng));

    let chol = sigma_z.clone().cholesky().ok_or_else(|| Error::InvalidScenario("factor correlation is not positive definite".into()))?;
    let l = chol.l();
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let z = g * l.transpose();
    let e = DMatrix::from_fn(n, total, |_, j| rng.sample::<f64, _>(StandardNormal) * sigma_e[j].sqrt());
    let x = z * a.transpose() + e;

    let truth = Truth {
        a,
        sigma_z,
        sigma_e,
        pure: GroupPartition::new(groups)?,
        noise_columns: (p..total).collect(),
    };
    Ok((DataMatrix::new(x, None)?, truth))
}

pub fn generate(sc: &SimScenario) -> Result<(DataMatrix, Truth)> {
    generate_replicate(sc, 0)
}

/// Recovery and estimation metrics for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tpr: f64,
    pub tnr: f64,
    pub sp: f64,
    pub sn: f64,
    pub fdr: f64,
    pub err_a: f64,
    /// Only defined when the estimated dimension equals the true one.
    pub err_sigma_z: Option<f64>,
    pub k_hat: usize,
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Pairwise agreement counts `(tp, tn, fp, fn)` over the union of both universes.
pub fn pair_counts(est: &GroupPartition, truth: &GroupPartition, p: usize) -> (usize, usize, usize, usize) {
    let (le, lt) = (est.labels(p), truth.labels(p));
    let mut union: Vec<usize> = est.universe.iter().chain(&truth.universe).copied().collect();
    union.sort_unstable();
    union.dedup();
    let (mut tp, mut tn, mut fp, mut fnn) = (0, 0, 0, 0);
    for (x, &i) in union.iter().enumerate() {
        for &j in &union[x + 1..] {
            let same_t = lt[i].is_some() && lt[i] == lt[j];
            let same_e = le[i].is_some() && le[i] == le[j];
            match (same_t, same_e) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
            }
        }
    }
    (tp, tn, fp, fnn)
}

/// Metrics of `est` against `truth`. Rates with an empty denominator are 1,
/// except the false discovery rate, which is 0 when nothing is selected.
pub fn evaluate(est: &FactorEstimate, truth: &Truth) -> Result<MetricReport> {
    let p = truth.p();
    if est.a_hat.nrows() != p {
        return Err(Error::UniverseMismatch { estimate: est.a_hat.nrows(), truth: p });
    }
    let i_hat = &est.pure_partition.universe;
    let i_true = &truth.pure.universe;
    let in_true = |i: &usize| i_true.binary_search(i).is_ok();
    let hits = i_hat.iter().filter(|i| in_true(i)).count();
    let j_count = p - i_true.len();
    let j_hat_hits = (0..p).filter(|i| !in_true(i) && i_hat.binary_search(i).is_err()).count();
    let (tp, tn, fp, fnn) = pair_counts(&est.pure_partition, &truth.pure, p);

    let err_a = if i_hat.is_empty() {
        0.0
    } else {
        let ah = DMatrix::from_fn(i_hat.len(), est.a_hat.ncols(), |r, c| est.a_hat[(i_hat[r], c)]);
        let at = DMatrix::from_fn(i_hat.len(), truth.a.ncols(), |r, c| truth.a[(i_hat[r], c)]);
        (&ah * ah.transpose() - &at * at.transpose()).norm() / i_hat.len() as f64
    };
    let k = truth.sigma_z.nrows();
    let err_sigma_z = if est.k_hat == k && !i_hat.is_empty() {
        let ah = DMatrix::from_fn(i_hat.len(), k, |r, c| est.a_hat[(i_hat[r], c)]);
        let at = DMatrix::from_fn(i_hat.len(), k, |r, c| truth.a[(i_hat[r], c)]);
        let al = align_signed_permutation(&ah, &at)?;
        Some((al.apply_symmetric(&est.sigma_z_hat) - &truth.sigma_z).norm() / k as f64)
    } else {
        None
    };
    Ok(MetricReport {
        tpr: ratio_or(hits, i_true.len(), 1.0),
        tnr: ratio_or(j_hat_hits, j_count, 1.0),
        sp: ratio_or(tn, tn + fp, 1.0),
        sn: ratio_or(tp, tp + fnn, 1.0),
        fdr: ratio_or(i_hat.len() - hits, i_hat.len(), 0.0),
        err_a,
        err_sigma_z,
        k_hat: est.k_hat,
    })
}

/// One replicate's outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub rep: u64,
    pub metrics: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl Aggregate {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let count = values.len();
        if count == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        };
        Some(Self { mean, sd, count })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateSummary {
    pub scenario: SimScenario,
    pub reps: usize,
    pub failures: usize,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub rows: Vec<ReplicateRow>,
}

pub const METRIC_NAMES: [&str; 8] = ["tpr", "tnr", "sp", "sn", "fdr", "err_a", "err_sigma_z", "k_hat"];

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "tpr" => Some(self.tpr),
            "tnr" => Some(self.tnr),
            "sp" => Some(self.sp),
            "sn" => Some(self.sn),
            "fdr" => Some(self.fdr),
            "err_a" => Some(self.err_a),
            "err_sigma_z" => self.err_sigma_z,
            "k_hat" => Some(self.k_hat as f64),
            _ => None,
        }
    }
}

/// Runs the pipeline on `reps` independent replicates. A failing replicate
/// is recorded and left out of the aggregates. The CV seed of replicate `r`
/// is the configured seed plus `r`.
pub fn run_replicates(sc: &SimScenario, reps: usize, settings: &FitSettings) -> Result<ReplicateSummary> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    sc.validate()?;
    let rows: Vec<ReplicateRow> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let run = || -> Result<MetricReport> {
                let (x, truth) = generate_replicate(sc, rep)?;
                let mut s = settings.clone();
                s.cv.seed = settings.cv.seed.wrapping_add(rep);
                let out = fit(&x, &s)?;
                evaluate(&out.estimate, &truth)
            };
            match run() {
                Ok(m) => ReplicateRow { rep, metrics: Some(m), error: None },
                Err(e) => ReplicateRow { rep, metrics: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    let failures = rows.iter().filter(|r| r.metrics.is_none()).count();
    let mut aggregates = BTreeMap::new();
    for name in METRIC_NAMES {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.metrics.as_ref().and_then(|m| m.get(name))).collect();
        if let Some(agg) = Aggregate::from_values(&vals) {
            aggregates.insert(name.to_string(), agg);
        }
    }
    Ok(ReplicateSummary { scenario: sc.clone(), reps, failures, aggregates, rows })
}

/// Per-replicate metrics as CSV (`rep, metric columns..., error`).
pub fn write_replicates_csv<W: std::io::Write>(summary: &ReplicateSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["rep".to_string()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    header.push("error".into());
    w.write_record(&header)?;
    for row in &summary.rows {
        let mut rec = vec![row.rep.to_string()];
        for name in METRIC_NAMES {
            rec.push(row.metrics.as_ref().and_then(|m| m.get(name)).map(|v| v.to_string()).unwrap_or_default());
        }
        rec.push(row.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
