//! End-to-end acceptance checks. Each test prints one `criterion N PASS|FAIL` line.
//!
//! Criteria 1-4 and 9 check correctness and always fail the test on FAIL.
//! Criteria 5-8 compare Monte-Carlo curves with published numbers; they print
//! their verdict and only fail the test when `ACCEPTANCE_STRICT` is set.

use std::io::Write;
use std::time::Instant;

use lensbeam::cosparse::{build_difference_operator, AugmentedSystem};
use lensbeam::estimators::{bernoulli_gaussian_moments, snipe_moments, uniform_moments, SnipePrior, SparseGaussianPrior};
use lensbeam::harness::{bundled_config, run_experiment, ExperimentConfig, ResultTable, RunOptions};
use lensbeam::lens::vectorize;
use lensbeam::operator::LinearOperator;
use lensbeam::rng::stream;
use lensbeam::scampi::{bethe_noise_variance, run_em_scampi, NoisePooling, ScampiOptions};
use lensbeam::selection::{build_hadamard_selection, measure};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(id: u32, pass: bool, gated: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {id} {} ({:.1} s): {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    // written past the test harness's output capture so the verdict always shows
    let _ = std::io::stderr().write_all(line.as_bytes());
    let strict = std::env::var_os("ACCEPTANCE_STRICT").is_some();
    if !pass && (gated || strict) {
        panic!("criterion {id} failed: {detail}");
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(bundled_config(name).expect("bundled")).expect("valid bundled config")
}

fn run(cfg: &ExperimentConfig) -> ResultTable {
    run_experiment(cfg, &RunOptions::default()).expect("experiment runs")
}

fn nmse(t: &ResultTable, alg: &str, size: usize, snr: f64, p: f64) -> f64 {
    t.get(alg, [size, size], snr, p).unwrap_or_else(|| panic!("row {alg} {size} {snr} {p}")).nmse_mean
}

// ---------------------------------------------------------------------------
// quadrature oracle

/// Gauss-Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

struct Moments {
    log_mass: f64,
    mean: f64,
    var: f64,
}

/// Mass, mean and variance of the unnormalized log-concave density `exp(logf)`,
/// by composite Gauss-Legendre around its numerically located mode.
fn quad_moments(logf: &dyn Fn(f64) -> f64, start: f64, scale: f64, gl: &[(f64, f64)]) -> Moments {
    let mut x = start;
    let mut h = scale * 1e-2;
    let mut curv = 0.0;
    for _ in 0..6 {
        let (fm, f0, fp) = (logf(x - h), logf(x), logf(x + h));
        let d1 = (fp - fm) / (2.0 * h);
        curv = (fp - 2.0 * f0 + fm) / (h * h);
        assert!(curv < 0.0, "log density must be concave");
        x -= d1 / curv;
        h = 1e-2 / (-curv).sqrt();
    }
    let w = 1.0 / (-curv).sqrt();
    let (lo, hi, panels) = (x - 30.0 * w, x + 30.0 * w, 60);
    let width = (hi - lo) / panels as f64;
    let mut pts = Vec::with_capacity(panels * gl.len());
    for k in 0..panels {
        let c = lo + (k as f64 + 0.5) * width;
        for &(t, wt) in gl {
            let xi = c + 0.5 * width * t;
            pts.push((xi, 0.5 * width * wt, logf(xi)));
        }
    }
    let peak = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = pts.iter().map(|p| p.1 * (p.2 - peak).exp()).sum();
    let mean = pts.iter().map(|p| p.1 * (p.2 - peak).exp() * p.0).sum::<f64>() / z;
    let var = pts.iter().map(|p| p.1 * (p.2 - peak).exp() * (p.0 - mean).powi(2)).sum::<f64>() / z;
    Moments { log_mass: peak + z.ln(), mean, var }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// Two-component posterior from a spike at zero and a quadrature slab.
fn spike_slab(log_spike: f64, slab: &Moments) -> (f64, f64) {
    let pi = 1.0 / (1.0 + (log_spike - slab.log_mass).exp());
    let one_minus = 1.0 / (1.0 + (slab.log_mass - log_spike).exp());
    (pi * slab.mean, pi * slab.var + pi * one_minus * slab.mean * slab.mean)
}

fn oracle_bg(sigma: f64, r: f64, p: &SparseGaussianPrior, gl: &[(f64, f64)]) -> (f64, f64) {
    let logf = |x: f64| p.lambda.ln() + log_normal(x, p.mean, p.var) + log_normal(x, r, sigma);
    let slab = quad_moments(&logf, r, sigma.sqrt().min(p.var.sqrt()), gl);
    spike_slab((1.0 - p.lambda).ln() + log_normal(0.0, r, sigma), &slab)
}

/// Spike plus a Gaussian slab of width `s` whose mass grows like `s`, so that
/// its density near the data tends to the flat limit; Richardson-extrapolated in `1/s^2`.
fn oracle_snipe(sigma: f64, r: f64, omega: f64, gl: &[(f64, f64)]) -> (f64, f64) {
    let at = |s: f64| {
        let log_c = s.ln() - omega - 0.5 * sigma.ln();
        let logf = |x: f64| log_c + log_normal(x, 0.0, s * s) + log_normal(x, r, sigma);
        let slab = quad_moments(&logf, r, sigma.sqrt(), gl);
        spike_slab(log_normal(0.0, r, sigma), &slab)
    };
    let s1 = 1e3 * (sigma.sqrt() + r.abs());
    let (m1, v1) = at(s1);
    let (m2, v2) = at(2.0 * s1);
    ((4.0 * m2 - m1) / 3.0, (4.0 * v2 - v1) / 3.0)
}

/// Error relative to the posterior's own scale: the mean is compared against
/// `max(|mean|, sd)`, so means that vanish by symmetry are not divided by zero.
fn rel_errors(got: (f64, f64), want: (f64, f64)) -> f64 {
    let scale = want.0.abs().max(want.1.sqrt()).max(f64::MIN_POSITIVE);
    ((got.0 - want.0).abs() / scale).max((got.1 - want.1).abs() / want.1.max(f64::MIN_POSITIVE))
}

#[test]
fn criterion_1_scalar_estimators_match_quadrature() {
    let started = Instant::now();
    let gl = gauss_legendre(20);
    let mut rng = stream(101);
    let mut worst = [0.0f64; 3];
    let draws = 10_000;
    for _ in 0..draws {
        let sigma = 10f64.powf(rng.random_range(-3.0..3.0));
        let r = sigma.sqrt() * rng.random_range(-8.0..8.0);
        let v = 10f64.powf(rng.random_range(-3.0..3.0));
        let prior = SparseGaussianPrior::new(rng.random_range(0.001..0.999), v.sqrt() * rng.random_range(-3.0..3.0), v).unwrap();
        let omega = rng.random_range(-5.0..5.0);

        let u = uniform_moments(sigma, r).unwrap();
        let want = quad_moments(&|x| log_normal(x, r, sigma), r, sigma.sqrt(), &gl);
        worst[0] = worst[0].max(rel_errors((u.mean, u.var), (want.mean, want.var)));

        let bg = bernoulli_gaussian_moments(sigma, r, &prior).unwrap();
        worst[1] = worst[1].max(rel_errors((bg.mean, bg.var), oracle_bg(sigma, r, &prior, &gl)));

        let sn = snipe_moments(sigma, r, SnipePrior { omega }).unwrap();
        worst[2] = worst[2].max(rel_errors((sn.mean, sn.var), oracle_snipe(sigma, r, omega, &gl)));
    }
    let pass = worst.iter().all(|&e| e < 1e-6);
    report(
        1,
        pass,
        true,
        &format!("{draws} draws, max rel error uniform {:.2e}, sparse Gaussian {:.2e}, SNIPE {:.2e} (< 1e-6)", worst[0], worst[1], worst[2]),
        started,
    );
}

#[test]
fn criterion_2_difference_operator_brute_force() {
    let started = Instant::now();
    let mut rng = stream(202);
    let mut pass = true;
    let mut grids = 0;
    while grids < 50 {
        let m = rng.random_range(1..=40usize);
        let n = rng.random_range(1..=40usize);
        if m * n > 400 {
            continue;
        }
        grids += 1;
        let h = DMatrix::from_fn(m, n, |_, _| rng.random_range(-100i32..100) as f64 / 8.0);
        let d = build_difference_operator(m, n).unwrap();
        let mut got = vec![0.0; d.nrows()];
        d.apply(&vectorize(&h), &mut got);
        let mut want = Vec::new();
        for i in 0..m {
            for j in 0..n.saturating_sub(1) {
                want.push(h[(i, j)] - h[(i, j + 1)]);
            }
        }
        for i in 0..m.saturating_sub(1) {
            for j in 0..n {
                want.push(h[(i, j)] - h[(i + 1, j)]);
            }
        }
        pass &= got == want && d.edge_count() == m * (n - 1) + n * (m - 1);
    }
    report(2, pass, true, "50 grids with MN <= 400, exact match and |E| = M(N-1) + N(M-1)", started);
}

#[test]
fn criterion_3_bethe_update_solves_stationarity() {
    let started = Instant::now();
    let mut rng = stream(303);
    let mut worst = 0.0f64;
    for state in 0..1000 {
        let (m, n) = (rng.random_range(2..6usize), rng.random_range(2..6usize));
        let q = rng.random_range(1..=m * n);
        let w = DMatrix::from_fn(q, m * n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 } / ((m * n) as f64).sqrt());
        let d = build_difference_operator(m, n).unwrap().to_dense();
        let mut big = DMatrix::zeros(q + d.nrows(), m * n + d.nrows());
        big.view_mut((0, 0), (q, m * n)).copy_from(&w);
        big.view_mut((q, 0), (d.nrows(), m * n)).copy_from(&d);
        for k in 0..d.nrows() {
            big[(q + k, m * n + k)] = -1.0;
        }
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let mut rhat = vec![0.0; big.nrows()];
        for x in rhat.iter_mut().take(q) {
            *x = scale * rng.random_range(-1.0..1.0);
        }
        let a: Vec<f64> = (0..big.ncols()).map(|_| scale * normal(&mut rng)).collect();
        let v: Vec<f64> = (0..big.ncols()).map(|_| scale * scale * rng.random_range(0.0..2.0)).collect();
        for mu in 0..big.nrows() {
            let delta = rhat[mu] - (0..big.ncols()).map(|i| big[(mu, i)] * a[i]).sum::<f64>();
            let spread: f64 = (0..big.ncols()).map(|i| big[(mu, i)].powi(2) * v[i]).sum();
            let noise = bethe_noise_variance(delta, spread);
            // the quadratic written out directly
            let residual = noise * noise - delta * delta * noise - delta * delta * spread;
            let tol = 1e-10 * 1f64.max(noise * noise);
            worst = worst.max(residual.abs() / tol);
            assert!(noise >= 0.0, "state {state} row {mu}: negative variance");
        }
    }
    report(3, worst < 1.0, true, &format!("1000 random states, worst residual {:.2e} of tolerance", worst), started);
}

#[test]
fn criterion_4_em_recovers_sparse_gaussian_prior() {
    let started = Instant::now();
    let (lambda, var, trials): (f64, f64, u64) = (0.05, 25.0, 20);
    let mn = 32 * 32;
    let opts = ScampiOptions {
        noise_pooling: NoisePooling::Blocks,
        relative_init: true,
        noise_init: Some(0.1),
        upsilon_init: Some(1.0),
        ..Default::default()
    };
    let (mut lam_sum, mut var_sum) = (0.0, 0.0);
    for t in 0..trials {
        let mut rng = stream(4000 + t);
        let h: Vec<f64> = (0..mn)
            .map(|_| if rng.random::<f64>() < lambda { var.sqrt() * normal(&mut rng) } else { 0.0 })
            .collect();
        let net = build_hadamard_selection(mn / 2, mn, 4100 + t).unwrap();
        let meas = measure(&net, &h, 30.0, &mut rng).unwrap();
        let sys = AugmentedSystem::new(net, build_difference_operator(32, 32).unwrap(), &meas.r).unwrap();
        let rep = run_em_scampi(&sys, &opts, Some(&h)).unwrap();
        let prior = rep.learned_prior.expect("EM prior");
        lam_sum += prior.lambda;
        var_sum += prior.var;
    }
    let (lam, v) = (lam_sum / trials as f64, var_sum / trials as f64);
    let pass = (lam / lambda - 1.0).abs() <= 0.1 && (v / var - 1.0).abs() <= 0.1;
    report(4, pass, true, &format!("mean learned lambda {lam:.4} (truth 0.05), v {v:.2} (truth 25), {trials} trials"), started);
}

fn trials_for(default: usize) -> usize {
    std::env::var("ACCEPTANCE_TRIALS").ok().and_then(|s| s.parse().ok()).unwrap_or(default)
}

#[test]
fn criterion_5_em_and_uniform_curves_at_32() {
    let started = Instant::now();
    let mut cfg = config("fig7");
    cfg.sizes = vec![[32, 32]];
    cfg.trials = trials_for(100);
    cfg.out_dir = None;
    let t = run(&cfg);
    let (em, uni) = ("EM-Gaussian-SCAMPI", "Uniform-SCAMPI");
    let em30 = nmse(&t, em, 32, 30.0, 0.0);
    let uni30 = nmse(&t, uni, 32, 30.0, 0.0);
    let em_ok = (5e-3 / 3.0..=5e-3 * 3.0).contains(&em30);
    let uni_ok = (1e-2 / 3.0..=1e-2 * 3.0).contains(&uni30);
    let worse: Vec<String> = cfg
        .snr_db
        .iter()
        .filter(|&&s| nmse(&t, em, 32, s, 0.0) > nmse(&t, uni, 32, s, 0.0))
        .map(|s| format!("{s}"))
        .collect();
    let curve: Vec<String> =
        cfg.snr_db.iter().map(|&s| format!("{s}dB {:.2e}/{:.2e}", nmse(&t, em, 32, s, 0.0), nmse(&t, uni, 32, s, 0.0))).collect();
    report(
        5,
        em_ok && uni_ok && worse.is_empty(),
        false,
        &format!(
            "{} trials; EM at 30 dB {em30:.2e} (target 5e-3 x/3: {}), Uniform {uni30:.2e} (target 1e-2 x/3: {}), EM > Uniform at [{}] dB; EM/Uniform {}",
            cfg.trials,
            if em_ok { "ok" } else { "miss" },
            if uni_ok { "ok" } else { "miss" },
            worse.join(", "),
            curve.join(", ")
        ),
        started,
    );
}

#[test]
fn criterion_6_sd_plateau_and_ordering() {
    let started = Instant::now();
    let mut cfg = config("fig6");
    cfg.sizes = vec![[32, 32]];
    cfg.trials = trials_for(100);
    cfg.out_dir = None;
    let t = run(&cfg);
    let sd20 = nmse(&t, "SD", 32, 20.0, 0.0);
    let sd30 = nmse(&t, "SD", 32, 30.0, 0.0);
    let sc30 = nmse(&t, "Uniform-SCAMPI", 32, 30.0, 0.0);
    let band = |x: f64| (5e-3..=8e-2).contains(&x);
    report(
        6,
        band(sd20) && band(sd30) && sc30 < sd30,
        false,
        &format!("{} trials; SD at 20/30 dB {sd20:.2e}/{sd30:.2e} (band [5e-3, 8e-2]), Uniform-SCAMPI at 30 dB {sc30:.2e}", cfg.trials),
        started,
    );
}

#[test]
fn criterion_7_phase_shifter_reduction() {
    let started = Instant::now();
    let mut cfg = config("fig8");
    cfg.snr_db = vec![30.0];
    cfg.trials = trials_for(100);
    cfg.out_dir = None;
    let t = run(&cfg);
    let full = nmse(&t, "EM-Gaussian-SCAMPI", 32, 30.0, 0.0);
    let reduced = nmse(&t, "EM-Gaussian-SCAMPI", 32, 30.0, 0.1);
    report(
        7,
        reduced - full < 1e-2,
        false,
        &format!("{} trials; EM-SCAMPI at 30 dB p=0 {full:.2e}, p=0.1 {reduced:.2e}, increase {:.2e} (< 1e-2)", cfg.trials, reduced - full),
        started,
    );
}

#[test]
fn criterion_8_larger_array_improves() {
    let started = Instant::now();
    let mut cfg = config("fig7");
    cfg.sizes = vec![[32, 32], [64, 64]];
    cfg.snr_db = vec![30.0];
    cfg.trials = trials_for(100);
    cfg.algorithms.retain(|a| a.name() == "EM-Gaussian-SCAMPI");
    cfg.out_dir = None;
    let t = run(&cfg);
    let small = nmse(&t, "EM-Gaussian-SCAMPI", 32, 30.0, 0.0);
    let large = nmse(&t, "EM-Gaussian-SCAMPI", 64, 30.0, 0.0);
    report(8, large < small, false, &format!("{} trials; EM-SCAMPI at 30 dB 32x32 {small:.2e}, 64x64 {large:.2e}", cfg.trials), started);
}

#[test]
fn criterion_9_rerun_is_byte_identical() {
    let started = Instant::now();
    let mut cfg = config("fig7");
    cfg.sizes = vec![[32, 32]];
    cfg.snr_db = vec![0.0, 30.0];
    cfg.trials = 2;
    let mut bytes = Vec::new();
    for jobs in [1, 2] {
        let dir = tempfile::tempdir().unwrap();
        cfg.out_dir = Some(dir.path().to_path_buf());
        run_experiment(&cfg, &RunOptions { jobs: Some(jobs), ..Default::default() }).unwrap();
        bytes.push(std::fs::read(dir.path().join("results.csv")).unwrap());
    }
    report(9, bytes[0] == bytes[1] && !bytes[0].is_empty(), true, "same seed, 1 and 2 worker threads, identical results.csv", started);
}
