//! Flat `key = value` configuration files.

use std::path::Path;

use pmsutil_core::loss::node_prioritization;
use pmsutil_core::priors::DEFAULT_NU;
use pmsutil_core::supply_model::sourcing_with_bootstrap;
use pmsutil_core::utility::EstimatorSettings;
use pmsutil_core::{
    Dataset, Error, LossSpec, Network, PriorSpec, Result, RiskCategory, SamplingPlan, ScoreKind,
    SourcingMatrix,
};

/// Run configuration. Every key is optional; see [`Config::default`].
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub threshold_l: f64,
    pub underestimation_v: f64,
    pub weight_slope_m: f64,
    pub prior_variance_nu: f64,
    pub score: ScoreKind,
    pub use_prioritization: bool,
    pub sensitivity: f64,
    pub specificity: f64,
    pub budget: u32,
    pub interval: u32,
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
    pub confidence_level: f64,
    /// Test node ids in order; inferred from the records when absent.
    pub test_nodes: Option<Vec<String>>,
    /// Supply node ids in order; inferred from the records when absent.
    pub supply_nodes: Option<Vec<String>>,
    pub risk: Vec<(String, u8)>,
    pub default_risk: u8,
    pub catchment: Vec<(String, f64)>,
    /// Proportions for the fixed policy; defaults to existing tests per node.
    pub fixed_reference: Option<Vec<u32>>,
    /// Budget at which savings are reported; defaults to `budget`.
    pub savings_at: Option<u32>,
    pub bootstrap_draws: usize,
    /// Seed for bootstrapped sourcing rows; defaults to `seed`.
    pub sourcing_seed: Option<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            threshold_l: 0.2,
            underestimation_v: 1.0,
            weight_slope_m: 0.6,
            prior_variance_nu: DEFAULT_NU,
            score: ScoreKind::Assessment,
            use_prioritization: false,
            sensitivity: 1.0,
            specificity: 1.0,
            budget: 40,
            interval: 10,
            h1: 5_000,
            h2: 300,
            seed: 0,
            confidence_level: 0.95,
            test_nodes: None,
            supply_nodes: None,
            risk: Vec::new(),
            default_risk: 4,
            catchment: Vec::new(),
            fixed_reference: None,
            savings_at: None,
            bootstrap_draws: 44,
            sourcing_seed: None,
        }
    }
}

fn value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::Parse {
        line,
        message: format!("bad value `{raw}` for `{key}`: {e}"),
    })
}

fn list(raw: &str) -> Vec<&str> {
    raw.split([',', ' ', '\t'])
        .filter(|s| !s.is_empty())
        .collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            match key {
                "threshold_l" => cfg.threshold_l = value(line, key, raw)?,
                "underestimation_v" => cfg.underestimation_v = value(line, key, raw)?,
                "weight_slope_m" => cfg.weight_slope_m = value(line, key, raw)?,
                "prior_variance_nu" => cfg.prior_variance_nu = value(line, key, raw)?,
                "score" => {
                    cfg.score = raw.parse().map_err(|e: Error| Error::Parse {
                        line,
                        message: e.to_string(),
                    })?
                }
                "use_prioritization" => cfg.use_prioritization = value(line, key, raw)?,
                "sensitivity" => cfg.sensitivity = value(line, key, raw)?,
                "specificity" => cfg.specificity = value(line, key, raw)?,
                "budget" => cfg.budget = value(line, key, raw)?,
                "interval" => cfg.interval = value(line, key, raw)?,
                "h1" => cfg.h1 = value(line, key, raw)?,
                "h2" => cfg.h2 = value(line, key, raw)?,
                "seed" => cfg.seed = value(line, key, raw)?,
                "confidence_level" => cfg.confidence_level = value(line, key, raw)?,
                "test_nodes" => {
                    cfg.test_nodes = Some(list(raw).into_iter().map(String::from).collect())
                }
                "supply_nodes" => {
                    cfg.supply_nodes = Some(list(raw).into_iter().map(String::from).collect())
                }
                "default_risk" => cfg.default_risk = value(line, key, raw)?,
                "fixed_reference" => {
                    cfg.fixed_reference = Some(
                        list(raw)
                            .into_iter()
                            .map(|x| value(line, key, x))
                            .collect::<Result<_>>()?,
                    )
                }
                "savings_at" => cfg.savings_at = Some(value(line, key, raw)?),
                "bootstrap_draws" => cfg.bootstrap_draws = value(line, key, raw)?,
                "sourcing_seed" => cfg.sourcing_seed = Some(value(line, key, raw)?),
                _ => {
                    if let Some(id) = key.strip_prefix("risk.") {
                        cfg.risk.push((id.to_string(), value(line, key, raw)?));
                    } else if let Some(id) = key.strip_prefix("catchment.") {
                        cfg.catchment.push((id.to_string(), value(line, key, raw)?));
                    } else {
                        return Err(Error::Parse {
                            line,
                            message: format!("unknown key `{key}`"),
                        });
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Network from the declared node lists, or from the records in order of
    /// first appearance, with risk levels and catchments attached.
    pub fn network(&self, data: &Dataset) -> Result<Network> {
        let first_seen = |pick: fn(&pmsutil_core::TestRecord) -> &String| {
            let mut ids: Vec<String> = Vec::new();
            for rec in &data.records {
                let id = pick(rec);
                if !ids.contains(id) {
                    ids.push(id.clone());
                }
            }
            ids
        };
        let test = self
            .test_nodes
            .clone()
            .unwrap_or_else(|| first_seen(|r| &r.test_node));
        let supply = self
            .supply_nodes
            .clone()
            .unwrap_or_else(|| first_seen(|r| &r.supply_node));
        if test.is_empty() || supply.is_empty() {
            return Err(Error::Config(
                "no nodes found; declare `test_nodes` and `supply_nodes` when the dataset is empty"
                    .into(),
            ));
        }
        let mut network = Network::new(test, supply)?;
        let ids: Vec<String> = (0..network.node_count())
            .map(|g| network.node_id(g).to_string())
            .collect();
        for (id, _) in &self.risk {
            if !ids.contains(id) {
                return Err(Error::Config(format!("risk given for unknown node `{id}`")));
            }
        }
        let default = RiskCategory::new(self.default_risk)?;
        let risk = ids
            .iter()
            .map(|id| {
                self.risk
                    .iter()
                    .rev()
                    .find(|(k, _)| k == id)
                    .map_or(Ok(default), |(_, level)| RiskCategory::new(*level))
            })
            .collect::<Result<_>>()?;
        network = network.with_risk(risk)?;
        if !self.catchment.is_empty() {
            let pops = network
                .test_nodes()
                .iter()
                .map(|id| {
                    self.catchment
                        .iter()
                        .rev()
                        .find(|(k, _)| k == id)
                        .map(|(_, p)| *p)
                        .ok_or_else(|| {
                            Error::Config(format!("missing catchment for test node `{id}`"))
                        })
                })
                .collect::<Result<_>>()?;
            network = network.with_catchments(pops)?;
        }
        Ok(network)
    }

    pub fn prior(&self, network: &Network) -> Result<PriorSpec> {
        PriorSpec::from_network(network, self.prior_variance_nu)
    }

    /// Observed sourcing frequencies, bootstrapping rows of untested nodes.
    /// With no records at all every row is uniform.
    pub fn sourcing(&self, data: &Dataset, network: &Network) -> Result<SourcingMatrix> {
        if data.is_empty() {
            log::warn!("no existing records; assuming uniform sourcing");
            let row = vec![1.0 / network.n_supply() as f64; network.n_supply()];
            return SourcingMatrix::from_rows(vec![row; network.n_test()]);
        }
        sourcing_with_bootstrap(
            data,
            network,
            self.bootstrap_draws,
            self.sourcing_seed.unwrap_or(self.seed),
        )
    }

    pub fn loss_spec(&self, network: &Network, sourcing: &SourcingMatrix) -> Result<LossSpec> {
        let spec = LossSpec::new(
            self.score,
            self.threshold_l,
            self.underestimation_v,
            self.weight_slope_m,
        )?;
        if self.use_prioritization {
            Ok(spec.with_prioritization(node_prioritization(network, sourcing)?))
        } else {
            Ok(spec)
        }
    }

    pub fn settings(&self) -> EstimatorSettings {
        EstimatorSettings {
            h1: self.h1,
            h2: self.h2,
            seed: self.seed,
            confidence_level: self.confidence_level,
            sensitivity: self.sensitivity,
            specificity: self.specificity,
            ..EstimatorSettings::default()
        }
    }

    /// Reference plan for the fixed policy.
    pub fn fixed_reference(&self, data: &Dataset, network: &Network) -> Result<SamplingPlan> {
        match &self.fixed_reference {
            Some(r) if r.len() != network.n_test() => Err(Error::Config(format!(
                "fixed_reference has {} entries for {} test nodes",
                r.len(),
                network.n_test()
            ))),
            Some(r) => Ok(SamplingPlan::new(r.clone())),
            None => Ok(SamplingPlan::new(data.tests_per_node(network)?)),
        }
    }

    /// Budgets `0, interval, 2 * interval, ...` up to and including `budget`.
    pub fn budget_grid(&self) -> Result<Vec<u32>> {
        if self.interval == 0 {
            return Err(Error::Config("interval must be at least 1".into()));
        }
        let mut grid: Vec<u32> = (0..=self.budget).step_by(self.interval as usize).collect();
        if grid.last() != Some(&self.budget) {
            grid.push(self.budget);
        }
        Ok(grid)
    }
}
