//! Estimator output shared by SCAMPI and the baselines.

use crate::error::{Error, Result};
use crate::estimators::SparseGaussianPrior;

/// `||h_est - h||^2 / ||h||^2`.
pub fn compute_nmse(h_est: &[f64], h_true: &[f64]) -> Result<f64> {
    if h_est.len() != h_true.len() {
        return Err(Error::Dimension(format!("estimate has {} entries, truth {}", h_est.len(), h_true.len())));
    }
    let energy: f64 = h_true.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let err: f64 = h_est.iter().zip(h_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(err / energy)
}

/// Mean learned noise variance over the measurement rows and over the difference rows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseSummary {
    pub delta_mean: f64,
    pub upsilon_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimationReport {
    pub h_est: Vec<f64>,
    /// Estimated neighbour differences; empty for estimators that do not produce them.
    pub d_est: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub nmse: Option<f64>,
    pub tau_trace: Vec<f64>,
    pub learned_prior: Option<SparseGaussianPrior>,
    /// Prior after each EM step.
    pub prior_trajectory: Vec<SparseGaussianPrior>,
    pub noise: Option<NoiseSummary>,
    /// Set when a least-squares solve fell back to a ridge, or AMP had to raise its damping.
    pub regularized: bool,
}

impl EstimationReport {
    /// Fills `nmse` from the truth when one is given.
    pub fn with_truth(mut self, truth: Option<&[f64]>) -> Result<Self> {
        if let Some(h) = truth {
            self.nmse = Some(compute_nmse(&self.h_est, h)?);
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmse_examples() {
        let h = [1.0, -2.0, 0.5];
        assert_eq!(compute_nmse(&h, &h).unwrap(), 0.0);
        assert_eq!(compute_nmse(&[0.0; 3], &h).unwrap(), 1.0);
        let twice: Vec<f64> = h.iter().map(|x| 2.0 * x).collect();
        assert_eq!(compute_nmse(&twice, &h).unwrap(), 1.0);
        assert!(matches!(compute_nmse(&h, &[0.0; 3]), Err(Error::ZeroSignal)));
        assert!(compute_nmse(&h, &[1.0]).is_err());
    }
}
