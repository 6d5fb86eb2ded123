use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lens::LensConfig;
use crate::scampi::ScampiOptions;

/// Number of measurements as a function of the array size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QRule {
    /// `Q = MN / 2`.
    #[default]
    Half,
    /// `Q = round(fraction * MN)`.
    Fraction(f64),
    Count(usize),
}

impl QRule {
    pub fn resolve(&self, mn: usize) -> Result<usize> {
        let q = match *self {
            QRule::Half => mn / 2,
            QRule::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!("Q fraction must be in (0, 1], got {f}")));
                }
                (f * mn as f64).round() as usize
            }
            QRule::Count(q) => q,
        };
        if q == 0 || q > mn {
            return Err(Error::Config(format!("Q = {q} is outside 1..={mn}")));
        }
        Ok(q)
    }
}

/// One estimator in an experiment; `name` labels its rows and plot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    Scampi {
        name: String,
        #[serde(default)]
        options: ScampiOptions,
    },
    /// Support detection with `square x square` blocks per path.
    Sd {
        name: String,
        #[serde(default = "default_square")]
        square: usize,
    },
    Omp { name: String, sparsity: usize },
    /// Least squares over the whole channel (minimum norm when `Q < MN`).
    Ls { name: String },
}

fn default_square() -> usize {
    8
}

impl AlgorithmSpec {
    pub fn name(&self) -> &str {
        match self {
            AlgorithmSpec::Scampi { name, .. }
            | AlgorithmSpec::Sd { name, .. }
            | AlgorithmSpec::Omp { name, .. }
            | AlgorithmSpec::Ls { name } => name,
        }
    }
}

/// A Monte-Carlo NMSE sweep, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// `[rows, cols]` per array size.
    pub sizes: Vec<[usize; 2]>,
    /// Number of paths minus one.
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_lens")]
    pub dy: f64,
    #[serde(default = "default_lens")]
    pub dz: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength: f64,
    #[serde(default)]
    pub q_rule: QRule,
    pub snr_db: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Fractions of switched-off phase shifters.
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    pub algorithms: Vec<AlgorithmSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_paths() -> usize {
    3
}

fn default_lens() -> f64 {
    12.0
}

fn default_wavelength() -> f64 {
    1.0
}

fn default_trials() -> usize {
    100
}

fn default_p() -> Vec<f64> {
    vec![0.0]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn lens(&self, size: [usize; 2]) -> Result<LensConfig> {
        LensConfig::with_wavelength(size[0], size[1], self.dy, self.dz, self.wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return bad(format!("experiment name {:?} must be non-empty ASCII letters, digits, '-' or '_'", self.name));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| s.is_nan()) {
            return bad("SNR grid must be non-empty and free of NaN".into());
        }
        if self.sizes.is_empty() {
            return bad("at least one array size is required".into());
        }
        if self.p.is_empty() || self.p.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("every p must lie in [0, 1)".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        let mut names = HashSet::new();
        for alg in &self.algorithms {
            if alg.name().is_empty() || !names.insert(alg.name()) {
                return bad(format!("algorithm names must be non-empty and unique, got {:?}", alg.name()));
            }
        }
        for &size in &self.sizes {
            let lens = self.lens(size)?;
            let q = self.q_rule.resolve(lens.len())?;
            for alg in &self.algorithms {
                match alg {
                    AlgorithmSpec::Scampi { options, .. } => options.validate()?,
                    AlgorithmSpec::Sd { square, .. } if *square == 0 => return bad("SD square side must be at least 1".into()),
                    AlgorithmSpec::Omp { sparsity, .. } if *sparsity > q => {
                        return bad(format!("OMP sparsity {sparsity} exceeds Q = {q}"));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}
