//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use replicadetect::parallel::partition_sizes_monotone_check;
use replicadetect::prune::{estimate_theta, prune_greedy, schur_complement_diag, ThetaEstimate};
use replicadetect::rank::{estimate_k, estimate_m, select_representatives};
use replicadetect::simgen::generate_replicate;
use replicadetect::tuning::prescreen;
use replicadetect::{
    find_parallel, fit, pvs_from_model, run_replicates, sample_correlation, score_s2, score_sq, score_table,
    select_pure, CvConfig, DataMatrix, DiagonalRule, FitSettings, GroupPartition, PvsOptions, QNorm, RankRule,
    ScoreTable, SimScenario,
};

use common::*;

// Tolerances and budgets.
const S2_GRID_TOL: f64 = 1e-6;
const SINF_TOL: f64 = 1e-10;
const ORACLE_SECONDS: f64 = 60.0;
const POPULATION_SECONDS: f64 = 30.0;
const LOADING_TOL: f64 = 1e-7;
const ERR_A_300: (f64, f64) = (0.046, 0.02);
const ERR_A_900: (f64, f64) = (0.014, 0.01);
const ERR_SIGMA_Z_MAX: f64 = 0.02;
const RATE_MIN: f64 = 0.90;
const K_HAT_RANGE: (f64, f64) = (9.5, 10.5);
const NOISE_REMOVED_MIN: f64 = 0.90;
const SIGNAL_REMOVED_MAX: f64 = 0.02;
const PROPERTY_CASES: usize = 1000;
const REPLICATES: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, out: &Outcome) {
    let tag = if out.pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{tag}] {name}: {}", out.detail);
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst2, mut worst_inf) = (0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let p = rng.random_range(5..=20);
        let extra = rng.random_range(0..p);
        let r = random_correlation(&mut rng, p, extra);
        let i = rng.random_range(0..p);
        let mut j = rng.random_range(0..p - 1);
        if j >= i {
            j += 1;
        }
        let s2 = score_s2(&r, i, j).unwrap().value;
        worst2 = worst2.max((s2 - grid_score_l2(&r, i, j, 100_000)).abs());
        let sinf = score_sq(&r, i, j, QNorm::INF).unwrap().value;
        worst_inf = worst_inf.max((sinf - breakpoint_score_inf(&r, i, j)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: worst2 <= S2_GRID_TOL && worst_inf <= SINF_TOL && secs <= ORACLE_SECONDS,
        detail: format!("max |s2 - grid| = {worst2:.2e}, max |sinf - breakpoints| = {worst_inf:.2e}, {secs:.1} s"),
    }
}

fn population_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut failures = Vec::new();
    for case in 0..100 {
        let fx = random_parallel_model(&mut rng, 30, 5);
        let model = fx.model();
        let table = score_table(&model.r_hat, QNorm::TWO).unwrap();
        let min_np = min_nonparallel_score(&table.values, &fx.parallel);
        let delta = if min_np.is_finite() { min_np / 4.0 } else { 1e-6 };
        let part = find_parallel(&table, delta);
        let mu = half_kth_eigenvalue(&fx);
        let k_hat = select_representatives(&model.r_hat, &part, QNorm::TWO)
            .and_then(|reps| {
                let m = estimate_m(&model.r_hat, &part, &table, QNorm::TWO, DiagonalRule::BestPartner)?;
                estimate_k(&m.restrict(&reps.indices)?, mu)
            })
            .map(|r| r.k_hat)
            .ok();
        if part.groups != fx.parallel || part.universe != fx.parallel_universe() || k_hat != Some(fx.k()) {
            failures.push(case);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: failures.is_empty() && secs <= POPULATION_SECONDS,
        detail: format!("{} / 100 models recovered exactly, {secs:.1} s, failing cases {failures:?}", 100 - failures.len()),
    }
}

fn pruning_example() -> Outcome {
    let a = example_loadings();
    let theta = ThetaEstimate { theta_hat: &a * a.transpose(), index_set: (0..6).collect() };
    let part = GroupPartition::new(vec![vec![0, 1], vec![2, 3], vec![4, 5]]).unwrap();
    match prune_greedy(&theta, 2, &part) {
        Ok((pure, trace)) => {
            let first_ok = trace.selected.first() == Some(&0) && trace.schur_values.first() == Some(&(1.1_f64 * 1.1));
            let second_ok = matches!(trace.selected.get(1), Some(2) | Some(3));
            let groups_ok = pure.groups == vec![vec![0, 1], vec![2, 3]];
            Outcome {
                pass: first_ok && second_ok && groups_ok && trace.selected.len() == 2,
                detail: format!(
                    "selected {:?} (0-based) with conditional variances {:?}, pure groups {:?}",
                    trace.selected, trace.schur_values, pure.groups
                ),
            }
        }
        Err(e) => Outcome { pass: false, detail: format!("error: {e}") },
    }
}

/// `min over signed permutations P of max |est P - truth|`, exhaustively.
fn signed_permutation_distance(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    let k = truth.ncols();
    if est.shape() != truth.shape() {
        return f64::INFINITY;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm
    let mut c = vec![0usize; k];
    let eval = |perm: &[usize]| {
        (0..k)
            .map(|m| {
                let col = |s: f64| (0..truth.nrows()).map(|i| (s * est[(i, perm[m])] - truth[(i, m)]).abs()).fold(0.0, f64::max);
                col(1.0).min(col(-1.0))
            })
            .fold(0.0, f64::max)
    };
    best = best.min(eval(&perm));
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best
}

fn population_identifiability() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    let mut errors = Vec::new();
    for case in 0..50 {
        let fx = random_pure_model(&mut rng, 5);
        let model = fx.model();
        let table = score_table(&model.r_hat, QNorm::TWO).unwrap();
        let delta = min_nonparallel_score(&table.values, &fx.parallel) / 4.0;
        let mu = half_kth_eigenvalue(&fx);
        match pvs_from_model(&model, QNorm::TWO, delta, RankRule::Mu(mu), &PvsOptions::default()) {
            Ok(est) => worst = worst.max(signed_permutation_distance(&est.a_hat, &fx.a)),
            Err(e) => errors.push(format!("case {case}: {e}")),
        }
    }
    Outcome {
        pass: errors.is_empty() && worst <= LOADING_TOL,
        detail: format!("max signed-permutation |A_hat - A|_inf = {worst:.2e} over 50 models; errors {errors:?}"),
    }
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn table_reproduction() -> Outcome {
    let settings = FitSettings::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for (n, (target, tol)) in [(300usize, ERR_A_300), (900, ERR_A_900)] {
        let sc = SimScenario { n, p: 300, ..SimScenario::default() };
        let summary = run_replicates(&sc, REPLICATES, &settings).unwrap();
        let metrics: Vec<_> = summary.rows.iter().filter_map(|r| r.metrics.clone()).collect();
        let err_a: Vec<f64> = metrics.iter().map(|m| m.err_a).collect();
        let err_sz: Vec<f64> = metrics.iter().filter_map(|m| m.err_sigma_z).collect();
        let mean_a = mean_of(&err_a);
        let sq_a = mean_of(&err_a.iter().map(|v| v * v).collect::<Vec<_>>());
        let ok_a = (mean_a - target).abs() <= tol;
        pass &= ok_a && summary.failures == 0;
        let mut line = format!(
            "n={n}: mean Err(A) = {mean_a:.4} (target {target} +/- {tol}), squared {sq_a:.4}; {} fits, {} failed",
            metrics.len(),
            summary.failures
        );
        if n == 300 {
            let mean_sz = mean_of(&err_sz);
            let sq_sz = mean_of(&err_sz.iter().map(|v| v * v).collect::<Vec<_>>());
            pass &= mean_sz <= ERR_SIGMA_Z_MAX;
            line.push_str(&format!(
                "; mean Err(Sigma_Z) = {mean_sz:.4} (max {ERR_SIGMA_Z_MAX}), squared {sq_sz:.4}, over {} fits with K_hat = K",
                err_sz.len()
            ));
        }
        lines.push(line);
    }
    Outcome { pass, detail: lines.join(" | ") }
}

fn baseline_recovery() -> Outcome {
    let summary = run_replicates(&SimScenario::default(), REPLICATES, &FitSettings::default()).unwrap();
    let get = |name: &str| summary.aggregates.get(name).map(|a| a.mean).unwrap_or(f64::NAN);
    let rates: Vec<(&str, f64)> = ["tpr", "tnr", "sp", "sn"].iter().map(|&m| (m, get(m))).collect();
    let k_hat = get("k_hat");
    let pass = summary.failures == 0
        && rates.iter().all(|(_, v)| *v >= RATE_MIN)
        && (K_HAT_RANGE.0..=K_HAT_RANGE.1).contains(&k_hat);
    let shown: Vec<String> = rates.iter().map(|(m, v)| format!("{m} {v:.3}")).collect();
    Outcome {
        pass,
        detail: format!("{}, mean K_hat {k_hat:.2}, {} failed of {REPLICATES}", shown.join(", "), summary.failures),
    }
}

fn random_score_table(rng: &mut ChaCha8Rng) -> ScoreTable {
    let p = rng.random_range(3..=25);
    let mut v = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let s: f64 = rng.random_range(0.0..1.0);
            v[(i, j)] = s;
            v[(j, i)] = s;
        }
    }
    ScoreTable { q: QNorm::TWO, values: v, minimizers: None }
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut violations = 0;
    for _ in 0..100 {
        let t = random_score_table(&mut rng);
        let mut deltas: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let sizes = partition_sizes_monotone_check(&t, &deltas);
        violations += sizes.windows(2).filter(|w| w[1] < w[0]).count();
        // recount directly from the partitions
        let direct: Vec<usize> = deltas.iter().map(|&d| find_parallel(&t, d).universe.len()).collect();
        violations += usize::from(direct != sizes);
    }
    Outcome { pass: violations == 0, detail: format!("{violations} violations over 100 tables x 50 thresholds") }
}

fn prescreening() -> Outcome {
    let sc = SimScenario { n: 300, p: 100, k: 5, n0: 20, ..SimScenario::default() };
    let mut noise_frac = Vec::new();
    let mut signal_frac = Vec::new();
    let mut errors = 0;
    for rep in 0..REPLICATES as u64 {
        let (x, truth) = generate_replicate(&sc, rep).unwrap();
        let cfg = CvConfig { seed: sc.seed + rep, ..CvConfig::default() };
        match prescreen(&x, QNorm::TWO, &cfg) {
            Ok(ps) => {
                let noise_removed = ps.removed.iter().filter(|j| truth.noise_columns.contains(j)).count();
                let signal_removed = ps.removed.len() - noise_removed;
                noise_frac.push(noise_removed as f64 / truth.noise_columns.len() as f64);
                signal_frac.push(signal_removed as f64 / (truth.p() - truth.noise_columns.len()) as f64);
            }
            Err(_) => errors += 1,
        }
    }
    let (noise, signal) = (mean_of(&noise_frac), mean_of(&signal_frac));
    Outcome {
        pass: errors == 0 && noise >= NOISE_REMOVED_MIN && signal <= SIGNAL_REMOVED_MAX,
        detail: format!("mean noise removed {noise:.3} (min {NOISE_REMOVED_MIN}), mean signal removed {signal:.4} (max {SIGNAL_REMOVED_MAX}), {errors} errors"),
    }
}

fn random_pair(rng: &mut ChaCha8Rng, p: usize) -> (usize, usize) {
    let i = rng.random_range(0..p);
    let mut j = rng.random_range(0..p - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Sample data from a random factor model, with `n` rows.
fn sample_from(rng: &mut ChaCha8Rng, fx: &ModelFixture, n: usize) -> DataMatrix {
    let chol = fx.covariance().cholesky().expect("positive definite");
    let g = DMatrix::from_fn(fx.a.nrows(), n, |_, _| normal(rng));
    DataMatrix::new((chol.l() * g).transpose(), None).unwrap()
}

fn property_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut failed: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok && !failed.iter().any(|f| f == name) {
            failed.push(name.to_string());
        }
    };
    let mut schur_min = f64::INFINITY;
    for _ in 0..PROPERTY_CASES {
        // score symmetry and monotonicity in q
        let p = rng.random_range(5..=15);
        let r = random_correlation(&mut rng, p, 3);
        let (i, j) = random_pair(&mut rng, p);
        let s = |q: QNorm, a: usize, b: usize| score_sq(&r, a, b, q).unwrap().value;
        for q in [QNorm::ONE, QNorm::TWO, QNorm::INF, QNorm::new(3.5).unwrap()] {
            check("score symmetry", s(q, i, j) == s(q, j, i));
        }
        let (s1, s2, s35, sinf) = (s(QNorm::ONE, i, j), s(QNorm::TWO, i, j), s(QNorm::new(3.5).unwrap(), i, j), s(QNorm::INF, i, j));
        check("q-monotonicity", s1 <= s2 + 1e-9 && s2 <= s35 + 1e-9 && s35 <= sinf + 1e-9);

        // scale invariance: positive column rescaling leaves correlations and scores unchanged
        let x = DMatrix::from_fn(20, 6, |_, _| normal(&mut rng));
        let scales = DVector::from_fn(6, |_, _| rng.random_range(0.01..100.0));
        let xs = DMatrix::from_fn(20, 6, |a, b| x[(a, b)] * scales[b]);
        let t1 = score_table(&sample_correlation(&DataMatrix::new(x, None).unwrap(), true).unwrap().r_hat, QNorm::TWO).unwrap();
        let t2 = score_table(&sample_correlation(&DataMatrix::new(xs, None).unwrap(), true).unwrap().r_hat, QNorm::TWO).unwrap();
        check("scale invariance", (t1.values - t2.values).abs().max() <= 1e-10);

        // partition validity: connected components of the threshold graph
        let t = random_score_table(&mut rng);
        let delta = rng.random_range(0.0..0.3);
        let part = find_parallel(&t, delta);
        let pp = t.p();
        let mut label = vec![usize::MAX; pp];
        let mut valid = true;
        for (g, grp) in part.groups.iter().enumerate() {
            valid &= grp.len() >= 2 && grp.windows(2).all(|w| w[0] < w[1]);
            for &m in grp {
                valid &= label[m] == usize::MAX;
                label[m] = g;
            }
        }
        valid &= part.groups.windows(2).all(|w| w[0][0] < w[1][0]);
        for a in 0..pp {
            for b in (a + 1)..pp {
                if t.get(a, b) <= 2.0 * delta {
                    valid &= label[a] != usize::MAX && label[a] == label[b];
                }
            }
        }
        for grp in &part.groups {
            // each group is connected through edges inside it
            let mut seen = vec![grp[0]];
            let mut frontier = vec![grp[0]];
            while let Some(u) = frontier.pop() {
                for &v in grp {
                    if !seen.contains(&v) && t.get(u, v) <= 2.0 * delta {
                        seen.push(v);
                        frontier.push(v);
                    }
                }
            }
            valid &= seen.len() == grp.len();
        }
        check("partition validity", valid);

        // Schur complements of PSD matrices are nonnegative
        let n = rng.random_range(2..=10);
        let rank = rng.random_range(1..=n);
        let w = DMatrix::from_fn(n, rank, |_, _| normal(&mut rng));
        let theta = ThetaEstimate { theta_hat: &w * w.transpose(), index_set: (0..n).collect() };
        let scale = theta.theta_hat.diagonal().max();
        let sset: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        let jj = rng.random_range(0..n);
        let v = schur_complement_diag(&theta, &sset, jj).unwrap();
        schur_min = schur_min.min(v / scale);
        check("Schur nonnegativity", v >= -1e-9 * scale);
    }

    // K_hat <= G_hat and unit diagonal of Sigma_Z, on sampled data
    for _ in 0..PROPERTY_CASES {
        let fx = random_pure_model(&mut rng, 4);
        let x = sample_from(&mut rng, &fx, 400);
        let model = sample_correlation(&x, true).unwrap();
        let table = score_table(&model.r_hat, QNorm::TWO).unwrap();
        let mut sorted: Vec<f64> = table.smallest(usize::MAX).into_iter().map(|e| e.2).collect();
        sorted.dedup();
        let delta = sorted[rng.random_range(0..sorted.len().min(20))];
        let mu = rng.random_range(0.01..0.5);
        if let Ok(fit) = select_pure(&model, &table, delta, RankRule::Mu(mu), &PvsOptions::default()) {
            check("K_hat <= G_hat", fit.k_hat() <= fit.parallel.g());
            if let Ok(est) = replicadetect::loadings::estimate_factor(&model, &fit) {
                check("Sigma_Z unit diagonal", est.sigma_z_hat.diagonal().iter().all(|d| *d == 1.0));
            }
        }
    }

    // determinism under fixed seeds
    let mut fitted = 0;
    for case in 0..PROPERTY_CASES as u64 {
        let sc = SimScenario { n: 60, p: 12, k: 2, sign_patterns: vec![(2, 1), (1, 2)], seed: case, ..SimScenario::default() };
        let (x1, _) = generate_replicate(&sc, case % 7).unwrap();
        let (x2, _) = generate_replicate(&sc, case % 7).unwrap();
        check("determinism", x1 == x2);
        let settings = FitSettings { cv: CvConfig { seed: case, n_grid: 10, ..CvConfig::default() }, ..FitSettings::default() };
        let a = fit(&x1, &settings).map(|o| o.to_json(&settings).to_string()).map_err(|e| e.to_string());
        let b = fit(&x2, &settings).map(|o| o.to_json(&settings).to_string()).map_err(|e| e.to_string());
        fitted += usize::from(a.is_ok());
        check("determinism", a == b);
    }

    let _ = estimate_theta; // exercised through the pipeline
    Outcome {
        pass: failed.is_empty(),
        detail: format!(
            "{PROPERTY_CASES} cases per property ({fitted} successful seeded fits); smallest scaled Schur value {schur_min:.2e}; failing {failed:?}"
        ),
    }
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("score oracle equivalence", oracle_equivalence),
        ("population exact recovery of parallel groups and rank", population_recovery),
        ("greedy pruning on the two-factor example", pruning_example),
        ("population loading identifiability", population_identifiability),
        ("loading and factor correlation error levels", table_reproduction),
        ("baseline recovery rates", baseline_recovery),
        ("threshold monotonicity", monotonicity),
        ("pre-screening of noise columns", prescreening),
        ("property suite", property_suite),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (k, (name, run)) in criteria.into_iter().enumerate() {
        let id = k + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        report(id, name, &out);
        println!("    ({:.1} s)", start.elapsed().as_secs_f64());
        failures += usize::from(!out.pass);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
