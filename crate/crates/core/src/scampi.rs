//! Cosparse AMP over the augmented system, with per-row noise learning and
//! optional EM learning of the channel prior.
//!
//! The state stores `W a` and `|W|^2 v` for the current `a`, `v`, so a sweep
//! costs two forward and two transposed operator products.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cosparse::AugmentedSystem;
use crate::error::{Error, Result};
use crate::estimators::{bg_unchecked, em_posterior_unchecked, em_update, snipe_unchecked, EmPosterior, SparseGaussianPrior};
use crate::operator::LinearOperator;
use crate::report::{EstimationReport, NoiseSummary};

/// Lower bound on `Delta + Theta` in the message denominators.
const DENOMINATOR_FLOOR: f64 = 1e-100;
/// Pseudo-measurement variance used for a column with no connected rows.
const UNOBSERVED_SIGMA: f64 = 1e100;
/// Damping used after a non-finite sweep.
const RETRY_DAMPING: f64 = 0.9;

/// Prior placed on the channel entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    Uniform,
    /// Sparse Gaussian prior learned by EM.
    BernoulliGaussian,
    /// Sparse Gaussian prior held fixed.
    FixedBg(SparseGaussianPrior),
}

/// How the learned noise variances are shared across rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePooling {
    /// Every row keeps its own variance.
    PerRow,
    /// Measurement rows share their mean; difference rows stay per row.
    Measurement,
    /// Each of the two row blocks shares its mean.
    Blocks,
}

/// Starting point of the EM prior. A missing `var` is set from the
/// measurement energy: `mean(r^2) / lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmInit {
    pub lambda: f64,
    pub mean: f64,
    pub var: Option<f64>,
}

impl Default for EmInit {
    fn default() -> Self {
        EmInit { lambda: 0.1, mean: 0.0, var: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScampiOptions {
    pub t_max: usize,
    pub eps: f64,
    pub alpha_damp: f64,
    pub beta_damp: f64,
    pub prior_kind: PriorKind,
    pub omega: f64,
    pub learn_noise: bool,
    pub noise_pooling: NoisePooling,
    /// Initial noise variance on every row. With `learn_noise` off it stays fixed.
    pub noise_init: Option<f64>,
    /// Initial variance on the difference rows when it should differ from `noise_init`.
    pub upsilon_init: Option<f64>,
    /// Read `noise_init` and `upsilon_init` as multiples of the measurement energy `mean(r^2)`.
    pub relative_init: bool,
    pub em_init: EmInit,
    /// Carried for bookkeeping; the iteration itself is deterministic.
    pub seed: u64,
    /// Record one trace row per sweep.
    pub trace: bool,
}

impl Default for ScampiOptions {
    fn default() -> Self {
        ScampiOptions {
            t_max: 300,
            eps: 1e-20,
            alpha_damp: 0.5,
            beta_damp: 0.5,
            prior_kind: PriorKind::BernoulliGaussian,
            omega: 0.0,
            learn_noise: true,
            noise_pooling: NoisePooling::PerRow,
            noise_init: None,
            upsilon_init: None,
            relative_init: false,
            em_init: EmInit::default(),
            seed: 0,
            trace: false,
        }
    }
}

impl ScampiOptions {
    pub fn uniform() -> Self {
        ScampiOptions { prior_kind: PriorKind::Uniform, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::InvalidParameter("t_max must be at least 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!("eps {} must be positive", self.eps)));
        }
        for (name, d) in [("alpha_damp", self.alpha_damp), ("beta_damp", self.beta_damp)] {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidParameter(format!("{name} {d} outside [0, 1)")));
            }
        }
        if !self.omega.is_finite() {
            return Err(Error::InvalidParameter("omega must be finite".into()));
        }
        for n in [self.noise_init, self.upsilon_init].into_iter().flatten() {
            if !(n >= 0.0 && n.is_finite()) {
                return Err(Error::InvalidParameter(format!("initial noise variance {n} must be finite and non-negative")));
            }
        }
        if let PriorKind::FixedBg(p) = self.prior_kind {
            p.validate()?;
        }
        if !(self.em_init.lambda > 0.0 && self.em_init.lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!("EM initial rate {} outside (0, 1]", self.em_init.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScampiState {
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    /// Pseudo-measurements of the last sweep; empty before the first.
    pub r: Vec<f64>,
    pub sigma: Vec<f64>,
    pub delta_check: Vec<f64>,
    pub prior: Option<SparseGaussianPrior>,
    pub t: usize,
    pub tau_trace: Vec<f64>,
    wa: Vec<f64>,
    wv: Vec<f64>,
}

impl ScampiState {
    /// Recomputes the cached `W a` and `|W|^2 v` after `a` or `v` were edited.
    pub fn refresh<Op: LinearOperator>(&mut self, sys: &AugmentedSystem<Op>) {
        sys.apply(&self.a, &mut self.wa);
        sys.apply_squared(&self.v, &mut self.wv);
    }

    /// `r - W a` for the current means.
    pub fn residual<Op: LinearOperator>(&self, sys: &AugmentedSystem<Op>) -> Vec<f64> {
        sys.observation().iter().zip(&self.wa).map(|(y, w)| y - w).collect()
    }

    /// `|W|^2 v` for the current variances.
    pub fn spread(&self) -> &[f64] {
        &self.wv
    }

    pub fn noise_summary(&self, q: usize) -> NoiseSummary {
        let mean = |s: &[f64]| if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 };
        NoiseSummary { delta_mean: mean(&self.delta_check[..q]), upsilon_mean: mean(&self.delta_check[q..]) }
    }
}

/// Initial EM prior for a measurement.
fn measurement_energy(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum::<f64>() / r.len().max(1) as f64
}

pub fn initial_em_prior(r: &[f64], init: &EmInit) -> SparseGaussianPrior {
    let var = init.var.unwrap_or_else(|| {
        let energy = measurement_energy(r);
        if energy > 0.0 {
            energy / init.lambda
        } else {
            1.0
        }
    });
    SparseGaussianPrior { lambda: init.lambda, mean: init.mean, var: var.max(crate::estimators::VARIANCE_FLOOR) }
}

pub fn init_state<Op: LinearOperator>(sys: &AugmentedSystem<Op>, opts: &ScampiOptions) -> ScampiState {
    let dims = sys.dims();
    let prior = match opts.prior_kind {
        PriorKind::Uniform => None,
        PriorKind::BernoulliGaussian => Some(initial_em_prior(sys.measurement(), &opts.em_init)),
        PriorKind::FixedBg(p) => Some(p),
    };
    let mut state = ScampiState {
        a: vec![0.0; dims.cols()],
        v: vec![0.1; dims.cols()],
        theta: vec![dims.mn as f64 / (10.0 * dims.q as f64); dims.rows()],
        phi: vec![0.0; dims.rows()],
        r: Vec::new(),
        sigma: Vec::new(),
        delta_check: {
            let energy = measurement_energy(sys.measurement());
            let unit = if opts.relative_init && energy > 0.0 { energy } else { 1.0 };
            let top = opts.noise_init.unwrap_or(0.1) * unit;
            let mut d = vec![top; dims.rows()];
            d[dims.q..].fill(opts.upsilon_init.map_or(top, |u| u * unit));
            d
        },
        prior,
        t: 0,
        tau_trace: Vec::new(),
        wa: vec![0.0; dims.rows()],
        wv: vec![0.0; dims.rows()],
    };
    state.refresh(sys);
    state
}

/// Positive root of `x^2 - delta^2 x - delta^2 spread = 0`.
pub fn bethe_noise_variance(delta: f64, spread: f64) -> f64 {
    let d2 = delta * delta;
    0.5 * (d2 + delta.abs() * (d2 + 4.0 * spread).sqrt())
}

/// Left side of the stationarity condition the learned noise variance solves.
pub fn bethe_residual(noise: f64, delta: f64, spread: f64) -> f64 {
    noise * noise - delta * delta * noise - delta * delta * spread
}

fn check_finite(values: &[f64], iteration: usize, line: u8, what: &str) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(k) => Err(Error::NonFinite { iteration, line, detail: format!("{what}[{k}] = {}", values[k]) }),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// One sweep of the message-passing update.
pub fn scampi_iterate<Op: LinearOperator>(
    state: &ScampiState,
    sys: &AugmentedSystem<Op>,
    opts: &ScampiOptions,
) -> Result<ScampiState> {
    let dims = sys.dims();
    let (rows, cols, mn) = (dims.rows(), dims.cols(), dims.mn);
    let y = sys.observation();
    let t = state.t;
    let (alpha, beta) = (opts.alpha_damp, opts.beta_damp);

    // Onsager-corrected output means from the old variances and messages
    let theta_tilde = &state.wv;
    let mut phi = vec![0.0; rows];
    for mu in 0..rows {
        let den = (state.delta_check[mu] + state.theta[mu]).max(DENOMINATOR_FLOOR);
        phi[mu] = state.wa[mu] - theta_tilde[mu] * (y[mu] - state.phi[mu]) / den;
    }
    check_finite(&phi, t, 4, "phi")?;

    let mut theta = vec![0.0; rows];
    for mu in 0..rows {
        phi[mu] = beta * state.phi[mu] + (1.0 - beta) * phi[mu];
        theta[mu] = beta * state.theta[mu] + (1.0 - beta) * theta_tilde[mu];
    }

    let mut g = vec![0.0; rows];
    let mut s = vec![0.0; rows];
    for mu in 0..rows {
        let den = (state.delta_check[mu] + theta[mu]).max(DENOMINATOR_FLOOR);
        g[mu] = (y[mu] - phi[mu]) / den;
        s[mu] = 1.0 / den;
    }
    let mut num = vec![0.0; cols];
    let mut prec = vec![0.0; cols];
    sys.apply_transpose(&g, &mut num);
    sys.apply_squared_transpose(&s, &mut prec);
    let mut r = vec![0.0; cols];
    let mut sigma = vec![0.0; cols];
    for i in 0..cols {
        if prec[i] > 0.0 && prec[i].is_finite() {
            sigma[i] = 1.0 / prec[i];
            r[i] = num[i] / prec[i] + state.a[i];
        } else {
            sigma[i] = UNOBSERVED_SIGMA;
            r[i] = state.a[i];
        }
    }
    check_finite(&r, t, 7, "R")?;
    check_finite(&sigma, t, 8, "Sigma")?;

    let mut a = vec![0.0; cols];
    let mut v = vec![0.0; cols];
    for i in 0..cols {
        let m = if i >= mn {
            snipe_unchecked(sigma[i], r[i], opts.omega)
        } else {
            match &state.prior {
                Some(p) => bg_unchecked(sigma[i], r[i], p),
                None => crate::estimators::PosteriorMoments { mean: r[i], var: sigma[i] },
            }
        };
        a[i] = m.mean;
        v[i] = m.var;
    }
    check_finite(&a, t, 9, "a")?;
    check_finite(&v, t, 10, "v")?;

    let mut wa = vec![0.0; rows];
    let mut wv = vec![0.0; rows];
    sys.apply(&a, &mut wa);
    sys.apply_squared(&v, &mut wv);
    let residual: Vec<f64> = y.iter().zip(&wa).map(|(y, w)| y - w).collect();
    check_finite(&residual, t, 11, "delta")?;

    let delta_check = if opts.learn_noise {
        let mut fresh: Vec<f64> = residual.iter().zip(&wv).map(|(&d, &w)| bethe_noise_variance(d, w)).collect();
        check_finite(&fresh, t, 12, "Delta")?;
        let (top, bottom) = fresh.split_at_mut(dims.q);
        if opts.noise_pooling != NoisePooling::PerRow {
            let m = mean(top);
            top.iter_mut().for_each(|x| *x = m);
        }
        if opts.noise_pooling == NoisePooling::Blocks {
            let m = mean(bottom);
            bottom.iter_mut().for_each(|x| *x = m);
        }
        state.delta_check.iter().zip(&fresh).map(|(old, new)| alpha * old + (1.0 - alpha) * new).collect()
    } else {
        state.delta_check.clone()
    };

    let tau = a[..mn].iter().zip(&state.a[..mn]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / mn as f64;
    if !tau.is_finite() {
        return Err(Error::NonFinite { iteration: t, line: 14, detail: format!("tau = {tau}") });
    }
    let mut tau_trace = state.tau_trace.clone();
    tau_trace.push(tau);

    Ok(ScampiState {
        a,
        v,
        theta,
        phi,
        r,
        sigma,
        delta_check,
        prior: state.prior,
        t: t + 1,
        tau_trace,
        wa,
        wv,
    })
}

/// Re-estimates the sparse Gaussian prior from the last sweep's pseudo-measurements.
pub fn em_step(state: &mut ScampiState, mn: usize) -> bool {
    let Some(prior) = state.prior else { return false };
    if state.r.len() < mn {
        return false;
    }
    let posts: Vec<EmPosterior> =
        (0..mn).map(|i| em_posterior_unchecked(state.sigma[i], state.r[i], &prior)).collect();
    let update = em_update(&posts, &prior);
    state.prior = Some(update.prior);
    !update.degenerate
}

/// One row of the convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub tau: f64,
    pub noise: NoiseSummary,
    pub prior: Option<SparseGaussianPrior>,
}

/// Writes `t,tau,delta_mean,upsilon_mean,lambda,a,v`; prior columns are empty without a prior.
pub fn write_trace_csv<W: Write>(mut out: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(out, "t,tau,delta_mean,upsilon_mean,lambda,a,v")?;
    for row in rows {
        write!(out, "{},{:e},{:e},{:e}", row.t, row.tau, row.noise.delta_mean, row.noise.upsilon_mean)?;
        match row.prior {
            Some(p) => writeln!(out, ",{:e},{:e},{:e}", p.lambda, p.mean, p.var)?,
            None => writeln!(out, ",,,")?,
        }
    }
    Ok(())
}

/// Report plus the per-sweep trace when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct ScampiRun {
    pub report: EstimationReport,
    pub trace: Vec<TraceRow>,
}

fn drive<Op: LinearOperator>(
    sys: &AugmentedSystem<Op>,
    opts: &ScampiOptions,
    truth: Option<&[f64]>,
    learn_prior: bool,
) -> Result<ScampiRun> {
    opts.validate()?;
    let dims = sys.dims();
    let mut state = init_state(sys, opts);
    let mut current = opts.clone();
    let mut raised = false;
    let mut converged = false;
    let mut trajectory = Vec::new();
    let mut trace = Vec::new();

    while state.t < opts.t_max {
        // no pseudo-measurements exist before the first sweep
        if learn_prior && state.t > 0 {
            em_step(&mut state, dims.mn);
            if let Some(p) = state.prior {
                trajectory.push(p);
            }
        }
        state = match scampi_iterate(&state, sys, &current) {
            Ok(next) => next,
            Err(err @ Error::NonFinite { .. }) if !raised => {
                log::warn!("{err}; retrying with damping {RETRY_DAMPING}");
                raised = true;
                current.alpha_damp = current.alpha_damp.max(RETRY_DAMPING);
                current.beta_damp = current.beta_damp.max(RETRY_DAMPING);
                scampi_iterate(&state, sys, &current)?
            }
            Err(err) => return Err(err),
        };
        let tau = *state.tau_trace.last().expect("sweep records tau");
        if opts.trace {
            trace.push(TraceRow { t: state.t, tau, noise: state.noise_summary(dims.q), prior: state.prior });
        }
        if tau <= opts.eps {
            converged = true;
            break;
        }
    }

    let noise = state.noise_summary(dims.q);
    let mut a = state.a;
    let d_est = a.split_off(dims.mn);
    let report = EstimationReport {
        h_est: a,
        d_est,
        iterations: state.t,
        converged,
        nmse: None,
        tau_trace: state.tau_trace,
        learned_prior: if learn_prior { state.prior } else { None },
        prior_trajectory: trajectory,
        noise: Some(noise),
        regularized: raised,
    }
    .with_truth(truth)?;
    Ok(ScampiRun { report, trace })
}

/// Runs the sweep to convergence with the channel prior held at its initial value.
pub fn run_scampi<Op: LinearOperator>(
    sys: &AugmentedSystem<Op>,
    opts: &ScampiOptions,
    truth: Option<&[f64]>,
) -> Result<EstimationReport> {
    drive(sys, opts, truth, false).map(|r| r.report)
}

/// Runs the sweep with an EM refresh of the sparse Gaussian prior before each sweep.
pub fn run_em_scampi<Op: LinearOperator>(
    sys: &AugmentedSystem<Op>,
    opts: &ScampiOptions,
    truth: Option<&[f64]>,
) -> Result<EstimationReport> {
    run_em_scampi_traced(sys, opts, truth).map(|r| r.report)
}

pub fn run_em_scampi_traced<Op: LinearOperator>(
    sys: &AugmentedSystem<Op>,
    opts: &ScampiOptions,
    truth: Option<&[f64]>,
) -> Result<ScampiRun> {
    if opts.prior_kind != PriorKind::BernoulliGaussian {
        return Err(Error::InvalidParameter("EM learning needs the bernoulli_gaussian prior kind".into()));
    }
    drive(sys, opts, truth, true)
}

/// Picks the EM variant for a learned prior and the plain sweep otherwise.
pub fn estimate<Op: LinearOperator>(
    sys: &AugmentedSystem<Op>,
    opts: &ScampiOptions,
    truth: Option<&[f64]>,
) -> Result<ScampiRun> {
    drive(sys, opts, truth, opts.prior_kind == PriorKind::BernoulliGaussian)
}
