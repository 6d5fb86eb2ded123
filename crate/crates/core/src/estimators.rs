//! Scalar posterior estimators and EM updates for the sparse Gaussian prior.
//!
//! Every estimator takes an AMP pseudo-measurement `R` with variance `Sigma`
//! and returns the posterior mean and variance of `x` under
//! `N(x; R, Sigma) * prior(x)`.
//!
//! Mixing weights between the point mass and the Gaussian slab are formed
//! in the log domain; the exponents overflow long before the ratios do.

use crate::error::{Error, Result};

/// Smallest slab variance EM will return.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// EM keeps the sparsity rate inside `[LAMBDA_MIN, 1 - LAMBDA_MIN]`.
pub const LAMBDA_MIN: f64 = 1e-6;

/// Posterior mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub var: f64,
}

/// Gate parameter of the sparse non-informative prior on the differences.
///
/// The prior is the limit of `rho/s * N(x/s; 0, s^2) + (1 - rho) delta(x)` as the
/// slab width `s` grows, with `rho` chosen so the slab-to-spike odds stay
/// finite: a flat slab of density `exp(-omega) / sqrt(2 pi Sigma)` against a
/// unit point mass at zero. Larger `omega` shrinks harder toward zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SnipePrior {
    pub omega: f64,
}

impl Default for SnipePrior {
    fn default() -> Self {
        SnipePrior { omega: 0.0 }
    }
}

/// `lambda * N(a, v) + (1 - lambda) * delta`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SparseGaussianPrior {
    pub lambda: f64,
    pub mean: f64,
    pub var: f64,
}

impl SparseGaussianPrior {
    pub fn new(lambda: f64, mean: f64, var: f64) -> Result<Self> {
        let p = SparseGaussianPrior { lambda, mean, var };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Domain(format!("sparsity rate {} outside [0, 1]", self.lambda)));
        }
        if !(self.var > 0.0 && self.var.is_finite()) {
            return Err(Error::Domain(format!("slab variance {} must be positive", self.var)));
        }
        if !self.mean.is_finite() {
            return Err(Error::Domain("slab mean must be finite".into()));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("pseudo-measurement variance {sigma} must be positive and finite")))
    }
}

/// Logistic function, stable for large |x|.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Posterior moments under the sparse non-informative prior.
pub fn snipe_moments(sigma: f64, r: f64, prior: SnipePrior) -> Result<PosteriorMoments> {
    check_sigma(sigma)?;
    Ok(snipe_unchecked(sigma, r, prior.omega))
}

#[inline]
pub(crate) fn snipe_unchecked(sigma: f64, r: f64, omega: f64) -> PosteriorMoments {
    // probability the slab is active: 1 / (1 + exp(omega - R^2 / 2 Sigma))
    let active = sigmoid(r * r / (2.0 * sigma) - omega);
    PosteriorMoments { mean: active * r, var: active * (sigma + r * r * (1.0 - active)) }
}

/// Flat prior: the pseudo-measurement is the posterior.
pub fn uniform_moments(sigma: f64, r: f64) -> Result<PosteriorMoments> {
    check_sigma(sigma)?;
    Ok(PosteriorMoments { mean: r, var: sigma })
}

/// Per-index posterior under the sparse Gaussian prior: `P(h != 0)`, and the
/// mean and variance of the slab component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmPosterior {
    pub pi: f64,
    pub gamma: f64,
    pub nu: f64,
}

/// `(pi, gamma, nu)` with the AMP pair `(R, Sigma)` standing in for the scalar channel.
pub fn em_posterior_quantities(sigma: f64, r: f64, prior: &SparseGaussianPrior) -> Result<EmPosterior> {
    check_sigma(sigma)?;
    prior.validate()?;
    Ok(em_posterior_unchecked(sigma, r, prior))
}

#[inline]
pub(crate) fn em_posterior_unchecked(sigma: f64, r: f64, prior: &SparseGaussianPrior) -> EmPosterior {
    let SparseGaussianPrior { lambda, mean: a, var: v } = *prior;
    let nu = 1.0 / (1.0 / v + 1.0 / sigma);
    let gamma = nu * (a / v + r / sigma);
    let pi = if lambda >= 1.0 {
        1.0
    } else if lambda <= 0.0 {
        0.0
    } else {
        // log of eta = P(zero) / P(slab)
        let log_eta = (1.0 - lambda).ln() - lambda.ln() + 0.5 * ((v + sigma) / sigma).ln()
            + (a - r) * (a - r) / (2.0 * (v + sigma))
            - r * r / (2.0 * sigma);
        sigmoid(-log_eta)
    };
    EmPosterior { pi, gamma, nu }
}

/// Posterior moments under `lambda * N(a, v) + (1 - lambda) * delta`.
///
/// `lambda = 0` is the all-mass-at-zero prior and returns `(0, 0)`.
pub fn bernoulli_gaussian_moments(sigma: f64, r: f64, prior: &SparseGaussianPrior) -> Result<PosteriorMoments> {
    check_sigma(sigma)?;
    prior.validate()?;
    Ok(bg_unchecked(sigma, r, prior))
}

#[inline]
pub(crate) fn bg_unchecked(sigma: f64, r: f64, prior: &SparseGaussianPrior) -> PosteriorMoments {
    let EmPosterior { pi, gamma, nu } = em_posterior_unchecked(sigma, r, prior);
    PosteriorMoments { mean: pi * gamma, var: pi * nu + pi * (1.0 - pi) * gamma * gamma }
}

/// Outcome of an EM parameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmUpdate {
    pub prior: SparseGaussianPrior,
    /// Set when no index carried posterior support and the prior was kept.
    pub degenerate: bool,
}

/// Closed-form M step over the channel indices.
///
/// The new mean is computed first and reused inside the variance update.
/// The result is clamped to `lambda in [LAMBDA_MIN, 1 - LAMBDA_MIN]` and
/// `v >= VARIANCE_FLOOR`.
pub fn em_update(posteriors: &[EmPosterior], previous: &SparseGaussianPrior) -> EmUpdate {
    let n = posteriors.len() as f64;
    let mass: f64 = posteriors.iter().map(|p| p.pi).sum();
    if !(mass > 0.0) || posteriors.is_empty() {
        log::warn!("EM update without posterior support; keeping prior");
        return EmUpdate { prior: *previous, degenerate: true };
    }
    let lambda = mass / n;
    let mean = posteriors.iter().map(|p| p.pi * p.gamma).sum::<f64>() / mass;
    let var = posteriors
        .iter()
        .map(|p| p.pi * (p.nu + (p.gamma - mean) * (p.gamma - mean)))
        .sum::<f64>()
        / mass;
    EmUpdate {
        prior: SparseGaussianPrior {
            lambda: lambda.clamp(LAMBDA_MIN, 1.0 - LAMBDA_MIN),
            mean,
            var: var.max(VARIANCE_FLOOR),
        },
        degenerate: false,
    }
}

/// Same as [`em_update`] from separate per-index vectors.
pub fn em_update_from_vectors(
    pis: &[f64],
    gammas: &[f64],
    nus: &[f64],
    previous: &SparseGaussianPrior,
) -> Result<EmUpdate> {
    if pis.len() != gammas.len() || pis.len() != nus.len() {
        return Err(Error::Dimension(format!(
            "EM inputs differ in length: {} / {} / {}",
            pis.len(),
            gammas.len(),
            nus.len()
        )));
    }
    let posts: Vec<EmPosterior> = pis
        .iter()
        .zip(gammas)
        .zip(nus)
        .map(|((&pi, &gamma), &nu)| EmPosterior { pi, gamma, nu })
        .collect();
    Ok(em_update(&posts, previous))
}

/// Evaluates `(R, mean, var)` of the non-informative estimator over a grid of `R`,
/// one row per value, for comparison against external references.
pub fn snipe_sweep(sigma: f64, omega: f64, rs: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    check_sigma(sigma)?;
    Ok(rs
        .iter()
        .map(|&r| {
            let m = snipe_unchecked(sigma, r, omega);
            (r, m.mean, m.var)
        })
        .collect())
}

/// Writes a sweep as CSV with header `r,mean,var`.
pub fn write_sweep_csv<W: std::io::Write>(mut out: W, rows: &[(f64, f64, f64)]) -> Result<()> {
    writeln!(out, "r,mean,var")?;
    for (r, m, v) in rows {
        writeln!(out, "{r},{m},{v}")?;
    }
    Ok(())
}
