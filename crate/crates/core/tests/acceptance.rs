//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so every line is printed whether or not it passes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ecoinf::data::split_indices;
use ecoinf::diagnostics::{self, CurvatureInstance, SeparationOutcome};
use ecoinf::evaluate::evaluate_run;
use ecoinf::likelihood::{self, combinatorial, GaussianApprox};
use ecoinf::neuralnet::{self, fit_neural, NeuralModel};
use ecoinf::optimize::{self, FitConfig, Method, ObjectiveKind, Phase};
use ecoinf::poibin::{self, ProbVector};
use ecoinf::simulate::{self, BetaSpec, CovariateScheme, SimConfig, VoterCount};
use ecoinf::{Dataset, LogitModel, PrecinctData};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let t = start.elapsed();
    if t > limit {
        Err(format!("took {:.1}s, limit {}s", t.as_secs_f64(), limit.as_secs()))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------- 1

fn enumerate_pmf(p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let mut out = vec![0.0; n + 1];
    for mask in 0u32..(1 << n) {
        let mut w = 1.0;
        for (j, &pj) in p.iter().enumerate() {
            w *= if mask >> j & 1 == 1 { pj } else { 1.0 - pj };
        }
        out[mask.count_ones() as usize] += w;
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(0..=12);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let pv = ProbVector::new(p.clone()).map_err(|e| e.to_string())?;
        let oracle = enumerate_pmf(&p);
        let dp = poibin::pmf_vector(&pv);
        for k in 0..=n {
            let direct = poibin::log_pmf(&pv, k).map_err(|e| e.to_string())?.exp();
            let err = (dp[k] - oracle[k]).abs().max((direct - oracle[k]).abs());
            worst = worst.max(err);
            ensure!(err <= 1e-12, "case {case}, n={n}, k={k}: error {err:e}");
        }
    }
    let mut worst_norm: f64 = 0.0;
    for n in [1usize, 10, 100, 500, 1000] {
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=1.0)).collect();
        let total: f64 = poibin::pmf_vector(&ProbVector::new(p).unwrap()).iter().sum();
        worst_norm = worst_norm.max((total - 1.0).abs());
        ensure!((total - 1.0).abs() <= 1e-12, "len {n}: pmf sums to {total}");
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("max pmf error {worst:.1e}, max normalization error {worst_norm:.1e}"))
}

// ---------------------------------------------------------------- 2

fn small_dataset(seed: u64, n: usize, voters: VoterCount, p: usize) -> Dataset {
    let cfg = SimConfig {
        n_precincts: n,
        voters_per_precinct: voters,
        p,
        beta_true: BetaSpec::Random,
        covariate_scheme: CovariateScheme::PrecinctShiftedNormal,
        precinct_shift_scale: vec![0.5],
        seed,
    };
    simulate::simulate(&cfg).unwrap().data.into_parts().0
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let data = small_dataset(2, 5, VoterCount::Range { min: 3, max: 10 }, 3);
    let approx = GaussianApprox::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_exact, mut worst_approx, mut worst_hess): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for point in 0..10 {
        let beta: Vec<f64> = (0..data.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = LogitModel::from_slice(&beta).unwrap();
        let exact = |b: &[f64]| likelihood::exact_loglik(&LogitModel::from_slice(b).unwrap(), &data).unwrap();
        let appr = |b: &[f64]| approx.loglik(&LogitModel::from_slice(b).unwrap(), &data).unwrap();
        let g = likelihood::exact_grad(&m, &data).unwrap();
        let e = rel_err(g.as_slice(), &central_diff(exact, &beta, 1e-5));
        ensure!(e < 1e-6, "point {point}: exact gradient relative error {e:e}");
        let g = approx.grad(&m, &data).unwrap();
        let a = rel_err(g.as_slice(), &central_diff(appr, &beta, 1e-5));
        ensure!(a < 1e-6, "point {point}: approximate gradient relative error {a:e}");
        let h = likelihood::exact_hessian(&m, &data, 10).unwrap();
        for k in 0..data.dim() {
            let col = central_diff(
                |b: &[f64]| likelihood::exact_grad(&LogitModel::from_slice(b).unwrap(), &data).unwrap()[k],
                &beta,
                1e-5,
            );
            let diff = (0..data.dim()).map(|l| (h[(k, l)] - col[l]).abs()).fold(0.0, f64::max);
            ensure!(diff < 1e-6, "point {point}: Hessian row {k} off by {diff:e}");
            worst_hess = worst_hess.max(diff);
        }
        worst_exact = worst_exact.max(e);
        worst_approx = worst_approx.max(a);
    }
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "exact {worst_exact:.1e}, approx {worst_approx:.1e}, Hessian {worst_hess:.1e}"
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let data = small_dataset(300 + seed, 6, VoterCount::Range { min: 1, max: 10 }, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let beta: Vec<f64> = (0..data.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let m = LogitModel::from_slice(&beta).unwrap();
        let loo = likelihood::exact_grad(&m, &data).unwrap();
        let comb = combinatorial::grad(&m, &data, 10).unwrap();
        let d = (&loo - &comb).amax();
        ensure!(d <= 1e-10, "seed {seed}: gradients differ by {d:e}");
        worst = worst.max(d);
    }
    Ok(format!("20 instances, max difference {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn random_network(hidden: usize, p: usize, rng: &mut ChaCha8Rng) -> NeuralModel {
    let mut u = || rng.random_range(-1.0..1.0);
    let w1 = DMatrix::from_fn(hidden, p, |_, _| u());
    let b1 = DVector::from_fn(hidden, |_, _| u());
    let w2 = DVector::from_fn(hidden, |_, _| u());
    let b2 = u();
    NeuralModel::new(w1, b1, w2, b2).unwrap()
}

/// Flattens as (W1 row-major, b1, W2, b2).
fn flatten(m: &NeuralModel) -> Vec<f64> {
    let mut v: Vec<f64> = m.w1.transpose().iter().copied().collect();
    v.extend(m.b1.iter());
    v.extend(m.w2.iter());
    v.push(m.b2);
    v
}

fn unflatten(v: &[f64], hidden: usize, p: usize) -> NeuralModel {
    let w1 = DMatrix::from_row_slice(hidden, p, &v[..hidden * p]);
    let b1 = DVector::from_column_slice(&v[hidden * p..hidden * (p + 1)]);
    let w2 = DVector::from_column_slice(&v[hidden * (p + 1)..hidden * (p + 2)]);
    NeuralModel::new(w1, b1, w2, v[hidden * (p + 2)]).unwrap()
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    let (hidden, p) = (4, 4);
    for seed in 0..5 {
        let data = small_dataset(400 + seed, 5, VoterCount::Fixed(20), p - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_network(hidden, p, &mut rng);
        let g = neuralnet::nn_grad(&m, &data).unwrap();
        let x = flatten(&m);
        let fd = central_diff(
            |v: &[f64]| neuralnet::nn_loglik(&unflatten(v, hidden, p), &data).unwrap(),
            &x,
            1e-6,
        );
        let blocks = [
            ("W1", g.w1.transpose().iter().copied().collect::<Vec<_>>(), 0..hidden * p),
            ("b1", g.b1.iter().copied().collect(), hidden * p..hidden * (p + 1)),
            ("W2", g.w2.iter().copied().collect(), hidden * (p + 1)..hidden * (p + 2)),
            ("b2", vec![g.b2], hidden * (p + 2)..hidden * (p + 2) + 1),
        ];
        for (name, analytic, range) in blocks {
            let e = rel_err(&analytic, &fd[range]);
            ensure!(e < 1e-5, "seed {seed}: {name} relative error {e:e}");
            worst = worst.max(e);
        }
        // derivative of a precinct's objective in one voter's probability
        let pr = &data.precincts()[0];
        let probs = neuralnet::nn_forward(&m, pr).unwrap().into_inner();
        let d = pr.count() as f64;
        let obj = |ps: &[f64]| {
            let mom = likelihood::GaussianMoments {
                mu: ps.iter().sum(),
                phi2: ps.iter().map(|q| q * (1.0 - q)).sum(),
            };
            likelihood::gaussian_term(d, mom)
        };
        let mom = likelihood::GaussianMoments {
            mu: probs.iter().sum(),
            phi2: probs.iter().map(|q| q * (1.0 - q)).sum(),
        };
        let analytic: Vec<f64> = probs.iter().map(|&q| neuralnet::dl_dp(q, d, mom)).collect();
        let e = rel_err(&analytic, &central_diff(obj, &probs, 1e-7));
        ensure!(e < 1e-5, "seed {seed}: dℓ/dp relative error {e:e}");
        worst = worst.max(e);
    }
    Ok(format!("5 seeds, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 5 and 7

/// 95th percentile (linear interpolation) of the max-abs coefficient error
/// of fit_gauss over simulation seeds 0..20, each fit on 360 of 400
/// precincts. Reproduced by `calibrate_recovery_threshold` in
/// tests/calibration.rs.
pub const RECOVERY_THRESHOLD: f64 = 0.20034;

/// Simulation seed of the acceptance run; outside the calibration seeds.
const RECOVERY_SEED: u64 = 100;

fn recovery_split() -> (ecoinf::LabeledDataset, ecoinf::LabeledDataset, Vec<f64>) {
    let cfg = SimConfig {
        seed: RECOVERY_SEED,
        ..SimConfig::default()
    };
    let sim = simulate::simulate(&cfg).unwrap();
    let (train, hold) = split_indices(sim.data.data().len(), 40, RECOVERY_SEED).unwrap();
    (sim.data.subset(&train), sim.data.subset(&hold), sim.beta_true)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (train, hold, truth) = recovery_split();
    let (m, report) = optimize::fit_gauss(train.data(), &FitConfig::default()).map_err(|e| e.to_string())?;
    ensure!(!report.diverged, "fit_gauss diverged");
    let err = m.beta().iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(err < RECOVERY_THRESHOLD, "‖β̂−β*‖∞ = {err:.4} ≥ {RECOVERY_THRESHOLD}");
    let (lr, _) = optimize::fit_individual_lr(&train, &FitConfig::default()).map_err(|e| e.to_string())?;
    let auc_gauss = evaluate_run(&m, &hold).unwrap().auc;
    let auc_lr = evaluate_run(&lr, &hold).unwrap().auc;
    let gap = 100.0 * (auc_gauss - auc_lr).abs();
    ensure!(gap <= 3.0, "holdout AUC gap {gap:.2} points");
    within(Duration::from_secs(300), start)?;
    Ok(format!(
        "‖β̂−β*‖∞ {err:.4} < {RECOVERY_THRESHOLD}; holdout AUC {:.2}% vs individual LR {:.2}%",
        100.0 * auc_gauss,
        100.0 * auc_lr
    ))
}

fn criterion_7() -> Outcome {
    let (train, _, _) = recovery_split();
    let mut checked = 0;
    for method in [Method::GaussBt, Method::GaussBtExact] {
        let (_, report) =
            optimize::fit(train.data(), &FitConfig::with_method(method)).map_err(|e| e.to_string())?;
        ensure!(!report.diverged, "{} diverged", method.name());
        let bt: Vec<_> = report
            .records
            .iter()
            .filter(|r| matches!(r.phase, Phase::Backtracking | Phase::ExactBacktracking))
            .collect();
        ensure!(!bt.is_empty(), "{} recorded no backtracking iterations", method.name());
        for (i, r) in bt.iter().enumerate() {
            ensure!(r.objective_kind == ObjectiveKind::Exact, "iteration {} is not exact", r.iteration);
            let after = r.objective_after.ok_or("missing objective_after")?;
            ensure!(
                after >= r.objective,
                "{} iteration {}: exact log-likelihood fell from {} to {after}",
                method.name(),
                r.iteration,
                r.objective
            );
            if let Some(next) = bt.get(i + 1) {
                ensure!(next.objective == after, "records are not contiguous at {}", r.iteration);
            }
            checked += 1;
        }
        let last = bt.last().unwrap().objective_after.unwrap();
        ensure!(
            report.final_exact_loglik == Some(last),
            "{} final exact log-likelihood does not match its last record",
            method.name()
        );
    }
    Ok(format!("{checked} backtracking iterations, none decreasing"))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let text = std::fs::read_to_string(fixtures().join("ordering_sim.json")).unwrap();
    let cfg: SimConfig = serde_json::from_str(&text).unwrap();
    let sim = simulate::simulate(&cfg).unwrap();
    let data = sim.data.data();
    let auc = |m: &dyn ecoinf::evaluate::ProbabilityModel| -> f64 { evaluate_run(m, &sim.data).unwrap().auc };
    let mut logit = Vec::new();
    for method in [Method::Gauss, Method::GaussBt, Method::GaussBtExact] {
        let (m, _) = optimize::fit(data, &FitConfig::with_method(method)).map_err(|e| e.to_string())?;
        logit.push(auc(&m));
    }
    let (agg, _) = optimize::fit_aggregate_lr(data, &FitConfig::with_method(Method::AggregateLr)).map_err(|e| e.to_string())?;
    let auc_agg = auc(&agg);
    let (train, dev) = ecoinf::data::split_dev(data, 40, cfg.seed + 1).unwrap();
    let ncfg = ecoinf::NeuralFitConfig {
        seed: cfg.seed,
        ..Default::default()
    };
    let (nn, _) = fit_neural(&train, &dev, &ncfg).map_err(|e| e.to_string())?;
    let auc_nn = auc(&nn);
    let g = logit[0];
    ensure!(g > auc_agg, "gauss {g:.4} ≤ aggregate-lr {auc_agg:.4}");
    ensure!(g > auc_nn, "gauss {g:.4} ≤ neural {auc_nn:.4}");
    let spread = 100.0 * (logit.iter().cloned().fold(f64::MIN, f64::max) - logit.iter().cloned().fold(f64::MAX, f64::min));
    ensure!(spread <= 0.5, "logit variants spread {spread:.3} points");
    within(Duration::from_secs(600), start)?;
    Ok(format!(
        "AUC gauss {:.2}%, gauss-bt {:.2}%, gauss-bt-exact {:.2}%, aggregate-lr {:.2}%, neural {:.2}%",
        100.0 * logit[0],
        100.0 * logit[1],
        100.0 * logit[2],
        100.0 * auc_agg,
        100.0 * auc_nn
    ))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let text = std::fs::read_to_string(fixtures().join("curvature_witness.json")).unwrap();
    let inst: CurvatureInstance = serde_json::from_str(&text).unwrap();
    ensure!(inst.precincts.len() <= 3, "fixture has {} precincts", inst.precincts.len());
    let data = inst.dataset().map_err(|e| e.to_string())?;
    let probe = diagnostics::hessian_probe(&data, &inst.beta, 15).map_err(|e| e.to_string())?;
    ensure!(probe.max_eig > 1e-6, "largest eigenvalue {:e}", probe.max_eig);
    ensure!(probe.min_eig < -1e-6, "smallest eigenvalue {:e}", probe.min_eig);
    Ok(format!("eigenvalues {:?}", probe.eigenvalues))
}

// ---------------------------------------------------------------- 9

pub fn concavity_base() -> SimConfig {
    SimConfig {
        n_precincts: 1,
        voters_per_precinct: VoterCount::Range { min: 4, max: 10 },
        p: 2,
        beta_true: BetaSpec::Random,
        covariate_scheme: CovariateScheme::PrecinctShiftedNormal,
        precinct_shift_scale: vec![1.0],
        seed: 0,
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let rows = diagnostics::asymptotic_concavity_experiment(&concavity_base(), &[10, 50, 200, 500], 15)
        .map_err(|e| e.to_string())?;
    let first = rows[0].max_eig;
    let last = rows[3].max_eig;
    ensure!(last <= 1e-3, "max eigenvalue at n=500 is {last:e}");
    ensure!(last <= first, "max eigenvalue at n=500 ({last:e}) exceeds n=10 ({first:e})");
    within(Duration::from_secs(180), start)?;
    let table: Vec<String> = rows.iter().map(|r| format!("n={} {:.4}", r.n, r.max_eig)).collect();
    Ok(table.join(", "))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let a = PrecinctData::from_rows("a", &[vec![1.0, 0.0], vec![-1.0, 0.0]], 1).unwrap();
    let b = PrecinctData::from_rows("b", &[vec![0.0, 1.0], vec![0.0, -1.0]], 1).unwrap();
    let data = Dataset::from_precincts(vec![a, b]).unwrap();
    let outcome = diagnostics::detect_separation(&data, 1e6, false, 0).map_err(|e| e.to_string())?;
    let SeparationOutcome::Certificate { certificate, .. } = outcome else {
        return Err("no certificate found".into());
    };
    ensure!(certificate.verify(&data), "certificate does not verify");
    // β = 0 is a stationary point of this fixture, and the default variance
    // floor would stop the run near |β| ≈ 19, so both are relaxed here.
    let cfg = |iters| FitConfig {
        iters_total: iters,
        lr: 0.05,
        phi2_floor: 0.0,
        init: Some(vec![0.01, 0.01]),
        ..FitConfig::default()
    };
    let mut norms = Vec::new();
    for iters in (500..=10_000).step_by(500) {
        let (m, report) = optimize::fit_gauss(&data, &cfg(iters)).map_err(|e| e.to_string())?;
        ensure!(!report.diverged, "run of {iters} iterations stopped early: {:?}", report.notes);
        norms.push((m.beta().amax(), likelihood::exact_loglik(&m, &data).unwrap()));
    }
    ensure!(norms.windows(2).all(|w| w[1].0 > w[0].0), "‖β‖∞ is not increasing: {norms:?}");
    ensure!(norms.windows(2).all(|w| w[1].1 >= w[0].1), "exact log-likelihood is not increasing");
    let (norm, ll) = *norms.last().unwrap();
    ensure!(norm > 1e2, "‖β‖∞ reached only {norm}");
    ensure!(ll > -1e-3 && ll <= 0.0, "exact log-likelihood {ll}");
    Ok(format!(
        "certificate {:?} margin {}; ‖β‖∞ {norm:.1}, exact log-likelihood {ll:.1e}",
        certificate.direction, certificate.margin
    ))
}

// ---------------------------------------------------------------- 11

fn ecoinf(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ecoinf"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.code() != Some(0) {
        return Err(format!(
            "`ecoinf {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn cli_session(dir: &Path) -> Result<(), String> {
    let fx = fixtures();
    let sep_v = fx.join("separable/voters.csv");
    let sep_c = fx.join("separable/counts.csv");
    let (sep_v, sep_c) = (sep_v.to_str().unwrap(), sep_c.to_str().unwrap());
    ecoinf(dir, &["simulate", "--precincts", "60", "--voters", "20-30", "--covariates", "3", "--seed", "5", "--out", "sim"])?;
    let data = ["--voters", "sim/voters.csv", "--counts", "sim/counts.csv"];
    for method in ["gauss", "gauss-bt", "gauss-bt-exact", "aggregate-lr"] {
        let out = format!("{method}.json");
        let mut args = vec!["fit", "--method", method, "--seed", "5", "--out", &out];
        args.extend(data);
        ecoinf(dir, &args)?;
    }
    let mut args = vec![
        "fit", "--method", "neural", "--seed", "5", "--restarts", "3", "--checkpoints", "5,10",
        "--dev-precincts", "10", "--lr", "1e-4", "--out", "neural.json",
    ];
    args.extend(data);
    ecoinf(dir, &args)?;
    for model in ["gauss", "neural"] {
        let m = format!("{model}.json");
        let p = format!("{model}.probs.csv");
        ecoinf(dir, &["predict", "--model", &m, "--voters", "sim/voters.csv", "--out", &p, "--seed", "5"])?;
        let e = format!("{model}.eval.json");
        let mut args = vec!["evaluate", "--model", &m, "--labels", "sim/labels.csv", "--out", &e, "--seed", "5"];
        args.extend(data);
        ecoinf(dir, &args)?;
    }
    ecoinf(dir, &["diagnose", "concavity", "--ns", "10,30", "--seed", "5", "--out", "concavity.csv"])?;
    let run = |args: &[&str], file: &str| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_ecoinf"))
            .current_dir(dir)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`ecoinf {}` failed", args.join(" ")));
        }
        std::fs::write(dir.join(file), out.stdout).map_err(|e| e.to_string())
    };
    run(&["diagnose", "separation", "--voters", sep_v, "--counts", sep_c, "--json"], "separation.json")?;
    let mut args = vec!["diagnose", "separation", "--heuristic", "--cap", "10", "--seed", "5"];
    args.extend(data);
    run(&args, "separation_heuristic.txt")?;
    run(&["diagnose", "hessian", "--voters", sep_v, "--counts", sep_c, "--beta", "0.1,-0.2,0.3", "--json"], "hessian.json")?;
    Ok(())
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(files(&path));
        } else {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn criterion_11() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cli_session(a.path())?;
    cli_session(b.path())?;
    let fa = files(a.path());
    let fb = files(b.path());
    ensure!(fa.len() == fb.len(), "runs produced {} and {} files", fa.len(), fb.len());
    for (x, y) in fa.iter().zip(&fb) {
        let rel = x.strip_prefix(a.path()).unwrap();
        ensure!(rel == y.strip_prefix(b.path()).unwrap(), "file lists differ at {}", rel.display());
        let (bx, by) = (std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        ensure!(!bx.is_empty(), "{} is empty", rel.display());
        ensure!(bx == by, "{} differs between runs", rel.display());
    }
    Ok(format!("{} output files byte-identical across reruns", fa.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("Poisson binomial oracle equivalence", criterion_1),
        ("gradient and Hessian finite differences", criterion_2),
        ("combinatorial and leave-one-out gradients agree", criterion_3),
        ("neural backpropagation finite differences", criterion_4),
        ("parameter recovery and holdout AUC", criterion_5),
        ("method ordering on synthetic data", criterion_6),
        ("monotone exact ascent under backtracking", criterion_7),
        ("mixed-sign Hessian witness", criterion_8),
        ("curvature at the truth as precincts grow", criterion_9),
        ("escape to infinity under separation", criterion_10),
        ("CLI determinism", criterion_11),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
