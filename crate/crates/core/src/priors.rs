//! Logit-normal priors elicited from seven-level risk assessments.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::supply_model::{Network, RateVector};

/// Prior medians for risk levels 1 (very low) through 7 (high).
pub const RISK_MEDIANS: [f64; 7] = [0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.25];

/// Logit-space spread used when none is configured.
pub const DEFAULT_NU: f64 = 2.0;

/// Assessed SFP risk, level 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RiskCategory(u8);

impl RiskCategory {
    pub fn new(level: u8) -> Result<Self> {
        if (1..=7).contains(&level) {
            Ok(Self(level))
        } else {
            Err(Error::Config(format!("risk level {level} outside 1..=7")))
        }
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn median(self) -> f64 {
        RISK_MEDIANS[usize::from(self.0 - 1)]
    }
}

/// Median SFP rate for a risk category.
pub fn risk_to_median(category: RiskCategory) -> f64 {
    category.median()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Independent normal priors on the logit of every node's rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    medians: Vec<f64>,
    logit_medians: Vec<f64>,
    nu: f64,
}

impl PriorSpec {
    /// `medians` follow the network's node order (test nodes, then supply nodes).
    pub fn new(medians: Vec<f64>, nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 0.0) {
            return Err(Error::Config(format!(
                "prior spread nu must be positive, got {nu}"
            )));
        }
        if let Some(m) = medians.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(Error::Config(format!("prior median {m} outside (0, 1)")));
        }
        let logit_medians = medians.iter().map(|&m| logit(m)).collect();
        Ok(Self {
            medians,
            logit_medians,
            nu,
        })
    }

    /// Same median for every node.
    pub fn uniform(nodes: usize, median: f64, nu: f64) -> Result<Self> {
        Self::new(vec![median; nodes], nu)
    }

    /// Medians from the network's risk categories.
    pub fn from_network(network: &Network, nu: f64) -> Result<Self> {
        let risk = network
            .risk()
            .ok_or_else(|| Error::Config("network carries no risk assessments".into()))?;
        Self::new(risk.iter().map(|r| r.median()).collect(), nu)
    }

    pub fn medians(&self) -> &[f64] {
        &self.medians
    }

    pub fn logit_medians(&self) -> &[f64] {
        &self.logit_medians
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn len(&self) -> usize {
        self.medians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.medians.is_empty()
    }

    /// Unnormalized log density of one node's logit value.
    #[inline]
    pub fn node_log_density(&self, g: usize, logit_rate: f64) -> f64 {
        let z = (logit_rate - self.logit_medians[g]) / self.nu;
        -0.5 * z * z
    }

    /// One iid draw of the full rate vector, in logit space.
    pub fn sample_logits<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.logit_medians
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                m + self.nu * z
            })
            .collect()
    }
}

/// Unnormalized log prior density, `-1/2 * sum((logit(rate) - logit(median)) / nu)^2`.
pub fn log_prior_density(rates: &RateVector, spec: &PriorSpec) -> f64 {
    rates
        .as_slice()
        .iter()
        .enumerate()
        .map(|(g, &p)| spec.node_log_density(g, logit(p)))
        .sum()
}
