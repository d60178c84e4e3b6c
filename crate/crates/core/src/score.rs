//! Pairwise parallel-row scores on a correlation matrix.
//!
//! For a pair `(i, j)` the score is
//!
//! ```text
//! S_q(i, j) = (p - 2)^(-1/q) * min_{||(a, b)||_inf = 1} || a R[i, -{i,j}] + b R[j, -{i,j}] ||_q
//! ```
//!
//! which splits into two one-dimensional convex problems: `a = 1` with
//! `b in [-1, 1]`, and `b = 1` with `a in [-1, 1]`. Both slices are always
//! evaluated through the same routine with the roles of the two rows
//! swapped, which makes every score exactly symmetric in `(i, j)`.
//!
//! * `q = 2` has a closed form (projection of the shorter row on the longer).
//! * `q = inf` is piecewise linear in the free coefficient and is minimized
//!   exactly on the upper envelope of the `2(p - 2)` absolute-value lines.
//! * Any other `q` uses golden-section search on each slice.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Norm index `q` in `[1, inf]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QNorm(f64);

impl QNorm {
    pub const ONE: QNorm = QNorm(1.0);
    pub const TWO: QNorm = QNorm(2.0);
    pub const INF: QNorm = QNorm(f64::INFINITY);

    pub fn new(q: f64) -> Result<Self> {
        if q.is_nan() || q < 1.0 {
            return Err(Error::InvalidArgument(format!("q must lie in [1, inf], got {q}")));
        }
        Ok(QNorm(q))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_inf(self) -> bool {
        self.0.is_infinite()
    }

    /// `len^(-1/q)`, with the `q = inf` limit equal to 1.
    pub fn normalizer(self, len: usize) -> f64 {
        if self.is_inf() {
            1.0
        } else {
            (len as f64).powf(-1.0 / self.0)
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        if self.is_inf() {
            v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
        } else if self.0 == 1.0 {
            v.iter().map(|x| x.abs()).sum()
        } else if self.0 == 2.0 {
            v.iter().map(|x| x * x).sum::<f64>().sqrt()
        } else {
            let scale = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
            if scale == 0.0 {
                return 0.0;
            }
            scale * v.iter().map(|x| (x.abs() / scale).powf(self.0)).sum::<f64>().powf(1.0 / self.0)
        }
    }
}

impl fmt::Display for QNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_inf() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for QNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(QNorm::INF),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse q from '{s}'")))
                .and_then(QNorm::new),
        }
    }
}

impl Serialize for QNorm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_inf() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for QNorm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(q) => QNorm::new(q).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// A score with the coefficients `(a, b)`, `max(|a|, |b|) = 1`, attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub value: f64,
    pub a: f64,
    pub b: f64,
}

fn check_pair(r: &DMatrix<f64>, i: usize, j: usize) -> Result<usize> {
    let p = r.nrows();
    if r.ncols() != p {
        return Err(Error::InvalidArgument("correlation matrix must be square".into()));
    }
    if p < 3 {
        return Err(Error::DimensionTooSmall { p, min: 3 });
    }
    for idx in [i, j] {
        if idx >= p {
            return Err(Error::IndexOutOfRange { index: idx, dim: p });
        }
    }
    if i == j {
        return Err(Error::InvalidArgument(format!("pair needs two distinct indices, got ({i}, {i})")));
    }
    Ok(p)
}

/// Row `i` of `r` with the entries in columns `i` and `j` removed.
pub fn row_leave_two_out(r: &DMatrix<f64>, i: usize, j: usize) -> Result<Vec<f64>> {
    let p = check_pair(r, i, j)?;
    Ok((0..p).filter(|&k| k != i && k != j).map(|k| r[(i, k)]).collect())
}

/// Both leave-two-out rows of a pair. Column `i` is read as row `i`, which
/// is the same thing for the symmetric matrices this module expects.
fn pair_rows(r: &DMatrix<f64>, i: usize, j: usize) -> (Vec<f64>, Vec<f64>) {
    let p = r.nrows();
    let data = r.as_slice();
    let (ci, cj) = (&data[i * p..(i + 1) * p], &data[j * p..(j + 1) * p]);
    let mut u = Vec::with_capacity(p - 2);
    let mut v = Vec::with_capacity(p - 2);
    for k in 0..p {
        if k != i && k != j {
            u.push(ci[k]);
            v.push(cj[k]);
        }
    }
    (u, v)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn degenerate(v: &[f64]) -> bool {
    dot(v, v).sqrt() <= f64::EPSILON * (v.len() as f64).sqrt()
}

/// Result of minimizing `||base + t * dir||_q` over `t in [-1, 1]`.
#[derive(Debug, Clone, Copy)]
struct SliceMin {
    t: f64,
    value: f64,
}

fn eval_slice(base: &[f64], dir: &[f64], t: f64, q: QNorm) -> f64 {
    let w: Vec<f64> = base.iter().zip(dir).map(|(b, d)| b + t * d).collect();
    q.norm(&w)
}

fn slice_min_l2(base: &[f64], dir: &[f64]) -> SliceMin {
    let vv = dot(dir, dir);
    let t = (-dot(base, dir) / vv).clamp(-1.0, 1.0);
    SliceMin { t, value: eval_slice(base, dir, t, QNorm::TWO) }
}

/// Golden-section search on the convex map `t -> ||base + t dir||_q`.
fn slice_min_golden(base: &[f64], dir: &[f64], q: QNorm) -> SliceMin {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 200;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |t: f64| eval_slice(base, dir, t, q);
    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iter = 0;
    while hi - lo > TOL && iter < MAX_ITER {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
        iter += 1;
    }
    let mid = 0.5 * (lo + hi);
    let mut best = SliceMin { t: mid, value: f(mid) };
    for (t, v) in [(x1, f1), (x2, f2), (-1.0, f(-1.0)), (1.0, f(1.0))] {
        if v < best.value {
            best = SliceMin { t, value: v };
        }
    }
    best
}

/// Exact minimum of `max_k |base_k + t dir_k|` over `t in [-1, 1]`.
///
/// The objective is the upper envelope of the lines `±(base_k + t dir_k)`.
/// The envelope is built with the monotone-slope hull, and the minimum sits
/// at the envelope vertex where the slope changes sign (or at an endpoint).
fn slice_min_inf(base: &[f64], dir: &[f64]) -> SliceMin {
    let mut lines: Vec<(f64, f64)> = Vec::with_capacity(2 * base.len());
    for (&c, &m) in base.iter().zip(dir) {
        lines.push((m, c));
        lines.push((-m, -c));
    }
    lines.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.partial_cmp(&y.1).unwrap()));
    // equal slopes: keep the largest intercept (last after sorting)
    let mut dedup: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    for l in lines {
        if let Some(last) = dedup.last_mut() {
            if last.0 == l.0 {
                *last = l;
                continue;
            }
        }
        dedup.push(l);
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(dedup.len());
    for l in dedup {
        while hull.len() >= 2 {
            let (m1, c1) = hull[hull.len() - 2];
            let (m2, c2) = hull[hull.len() - 1];
            let (m3, c3) = l;
            // middle line is dominated when x12 >= x23
            if (c1 - c2) * (m3 - m2) >= (c2 - c3) * (m2 - m1) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(l);
    }
    let f = |t: f64| eval_slice(base, dir, t, QNorm::INF);
    let mut candidates = vec![-1.0, 1.0];
    // first hull line with nonnegative slope; the optimum is its left vertex
    if let Some(k) = hull.iter().position(|l| l.0 >= 0.0) {
        if k > 0 {
            let (m1, c1) = hull[k - 1];
            let (m2, c2) = hull[k];
            let x = (c1 - c2) / (m2 - m1);
            if x.is_finite() {
                candidates.push(x.clamp(-1.0, 1.0));
            }
        }
    }
    let mut best = SliceMin { t: candidates[0], value: f(candidates[0]) };
    for &t in &candidates[1..] {
        let v = f(t);
        if v < best.value {
            best = SliceMin { t, value: v };
        }
    }
    best
}

fn slice_min(base: &[f64], dir: &[f64], q: QNorm, numeric: bool) -> SliceMin {
    if numeric {
        slice_min_golden(base, dir, q)
    } else if q.0 == 2.0 {
        slice_min_l2(base, dir)
    } else if q.is_inf() {
        slice_min_inf(base, dir)
    } else {
        slice_min_golden(base, dir, q)
    }
}

/// Combines the two slices. Ties go to the `a = 1` slice.
fn pair_score(u: &[f64], v: &[f64], q: QNorm, numeric: bool) -> PairScore {
    let fixed_a = slice_min(u, v, q, numeric);
    let fixed_b = slice_min(v, u, q, numeric);
    let scale = q.normalizer(u.len());
    if fixed_a.value <= fixed_b.value {
        PairScore { value: scale * fixed_a.value, a: 1.0, b: fixed_a.t }
    } else {
        PairScore { value: scale * fixed_b.value, a: fixed_b.t, b: 1.0 }
    }
}

fn score_pair_checked(r: &DMatrix<f64>, i: usize, j: usize, q: QNorm, numeric: bool) -> Result<PairScore> {
    check_pair(r, i, j)?;
    let (u, v) = pair_rows(r, i, j);
    if degenerate(&u) {
        return Err(Error::DegenerateRow(i));
    }
    if degenerate(&v) {
        return Err(Error::DegenerateRow(j));
    }
    Ok(pair_score(&u, &v, q, numeric))
}

/// The `q = 2` score. The value is the explicit residual norm of the optimal
/// slice, which equals
/// `[(V_ii ∧ V_jj)/(p-2) * (1 - V_ij^2/(V_ii V_jj))]^(1/2)` and stays accurate
/// down to zero for parallel rows.
pub fn score_s2(r: &DMatrix<f64>, i: usize, j: usize) -> Result<PairScore> {
    score_pair_checked(r, i, j, QNorm::TWO, false)
}

/// Closed form of the squared `q = 2` score from the leave-two-out inner products.
pub fn s2_closed_form_squared(v_ii: f64, v_jj: f64, v_ij: f64, p: usize) -> f64 {
    v_ii.min(v_jj) / (p as f64 - 2.0) * (1.0 - v_ij * v_ij / (v_ii * v_jj))
}

/// The score for any `q in [1, inf]`.
pub fn score_sq(r: &DMatrix<f64>, i: usize, j: usize, q: QNorm) -> Result<PairScore> {
    score_pair_checked(r, i, j, q, false)
}

/// Golden-section evaluation for any `q`, bypassing the closed form and
/// the exact `q = inf` path.
pub fn score_sq_numeric(r: &DMatrix<f64>, i: usize, j: usize, q: QNorm) -> Result<PairScore> {
    score_pair_checked(r, i, j, q, true)
}

/// Symmetric `p x p` table of pairwise scores for one `q`.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub q: QNorm,
    pub values: DMatrix<f64>,
    /// Row-major `(a, b)` minimizers when requested.
    pub minimizers: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct ScoreTableJson {
    q: QNorm,
    p: usize,
    upper: Vec<f64>,
}

impl ScoreTable {
    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn minimizer(&self, i: usize, j: usize) -> Option<[f64; 2]> {
        self.minimizers.as_ref().map(|m| m[i * self.p() + j])
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let p = self.p();
        (0..p).flat_map(move |i| ((i + 1)..p).map(move |j| self.values[(i, j)]))
    }

    pub fn min_off_diagonal(&self) -> f64 {
        self.off_diagonal().fold(f64::INFINITY, f64::min)
    }

    pub fn max_off_diagonal(&self) -> f64 {
        self.off_diagonal().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest positive off-diagonal score.
    pub fn min_positive(&self) -> Option<f64> {
        self.off_diagonal().filter(|v| *v > 0.0).fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }

    /// The `k` smallest pairs `(i, j, score)` with `i < j`, ties by index.
    pub fn smallest(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let p = self.p();
        let mut all: Vec<(usize, usize, f64)> =
            (0..p).flat_map(|i| ((i + 1)..p).map(move |j| (i, j))).map(|(i, j)| (i, j, self.values[(i, j)])).collect();
        all.sort_by(|x, y| x.2.partial_cmp(&y.2).unwrap().then((x.0, x.1).cmp(&(y.0, y.1))));
        all.truncate(k);
        all
    }

    /// `{q, p, upper}` with the strict upper triangle in row-major order.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(ScoreTableJson { q: self.q, p: self.p(), upper: self.off_diagonal().collect() })
            .expect("plain data serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: ScoreTableJson = serde_json::from_value(value.clone())?;
        let p = raw.p;
        if raw.upper.len() != p * p.saturating_sub(1) / 2 {
            return Err(Error::InvalidArgument("upper-triangle length does not match p".into()));
        }
        let mut values = DMatrix::zeros(p, p);
        let mut it = raw.upper.into_iter();
        for i in 0..p {
            for j in (i + 1)..p {
                let v = it.next().expect("length checked");
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        Ok(Self { q: raw.q, values, minimizers: None })
    }
}

fn build_table(r: &DMatrix<f64>, q: QNorm, keep_minimizers: bool) -> Result<ScoreTable> {
    let p = r.nrows();
    if r.ncols() != p {
        return Err(Error::InvalidArgument("correlation matrix must be square".into()));
    }
    if p < 3 {
        return Err(Error::DimensionTooSmall { p, min: 3 });
    }
    let rows: Vec<Vec<Result<PairScore>>> = (0..p)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..p)
                .map(|j| {
                    let (u, v) = pair_rows(r, i, j);
                    if degenerate(&u) {
                        Err(Error::DegenerateRow(i))
                    } else if degenerate(&v) {
                        Err(Error::DegenerateRow(j))
                    } else {
                        Ok(pair_score(&u, &v, q, false))
                    }
                })
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(p, p);
    let mut mins = if keep_minimizers { Some(vec![[0.0, 0.0]; p * p]) } else { None };
    for (i, row) in rows.into_iter().enumerate() {
        for (off, s) in row.into_iter().enumerate() {
            let j = i + 1 + off;
            let s = s?;
            values[(i, j)] = s.value;
            values[(j, i)] = s.value;
            if let Some(m) = mins.as_mut() {
                m[i * p + j] = [s.a, s.b];
                m[j * p + i] = [s.b, s.a];
            }
        }
    }
    Ok(ScoreTable { q, values, minimizers: mins })
}

/// All `p(p-1)/2` scores; the first degenerate row (in pair order) is reported.
pub fn score_table(r: &DMatrix<f64>, q: QNorm) -> Result<ScoreTable> {
    build_table(r, q, false)
}

pub fn score_table_with_minimizers(r: &DMatrix<f64>, q: QNorm) -> Result<ScoreTable> {
    build_table(r, q, true)
}

/// Reference evaluators that are too slow for production use.
pub mod reference {
    use super::*;

    /// `S_{q,r}(i, j)` by a grid over the direction angle of `(a, b)`,
    /// normalized to `||(a, b)||_r = 1`. Any `r in (0, inf]`.
    pub fn score_qr_grid(rm: &DMatrix<f64>, i: usize, j: usize, q: QNorm, r: f64, points: usize) -> Result<f64> {
        check_pair(rm, i, j)?;
        let (u, v) = pair_rows(rm, i, j);
        let scale = q.normalizer(u.len());
        let mut best = f64::INFINITY;
        for k in 0..points {
            let theta = std::f64::consts::PI * k as f64 / points as f64;
            let (c, s) = (theta.cos(), theta.sin());
            let rn = if r.is_infinite() {
                c.abs().max(s.abs())
            } else {
                (c.abs().powf(r) + s.abs().powf(r)).powf(1.0 / r)
            };
            let (a, b) = (c / rn, s / rn);
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            best = best.min(q.norm(&w));
        }
        Ok(scale * best)
    }
}
