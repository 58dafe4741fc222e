//! Expected loss and utility of sampling plans.
//!
//! [`FastUtility`] scores plans by reweighting a single posterior draw set with
//! the likelihood of simulated data. [`expected_loss_mcmc`] is the slow
//! reference that re-samples the posterior for every simulated dataset.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{bayes_member_index, SortedNodes};
use crate::inference::{sample_posterior_with, DrawSet, SamplerConfig};
use crate::loss::{total_loss, LossSpec};
use crate::priors::PriorSpec;
use crate::rng::{derive_seed, stream_rng};
use crate::supply_model::{
    detection_probability, CountMatrices, Dataset, Network, RateVector, SourcingMatrix, TestRecord,
};

/// Number of tests allocated to each test node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SamplingPlan {
    alloc: Vec<u32>,
}

impl SamplingPlan {
    pub fn new(alloc: Vec<u32>) -> Self {
        Self { alloc }
    }

    pub fn zeros(n_test: usize) -> Self {
        Self {
            alloc: vec![0; n_test],
        }
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.alloc
    }

    pub fn len(&self) -> usize {
        self.alloc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alloc.is_empty()
    }

    pub fn get(&self, a: usize) -> u32 {
        self.alloc[a]
    }

    pub fn total(&self) -> u32 {
        self.alloc.iter().sum()
    }

    /// This plan with `extra` more tests at node `a`.
    pub fn plus(&self, a: usize, extra: u32) -> Self {
        let mut alloc = self.alloc.clone();
        alloc[a] += extra;
        Self { alloc }
    }

    pub fn conforms_to(&self, network: &Network) -> bool {
        self.alloc.len() == network.n_test()
    }
}

/// Mean with a normal-approximation confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Interval {
    fn from_samples(samples: &[f64], z: f64) -> Self {
        let m = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / m;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        let std_error = (var / m).sqrt();
        Self {
            mean,
            std_error,
            ci_low: mean - z * std_error,
            ci_high: mean + z * std_error,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

/// Estimated expected loss of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEstimate {
    pub interval: Interval,
    /// Per-simulation losses.
    pub samples: Vec<f64>,
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
}

/// Estimated utility of a plan: baseline expected loss minus plan expected loss.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub h1: usize,
    pub h2: usize,
    pub seed: u64,
    pub baseline_expected_loss: f64,
}

impl UtilityEstimate {
    pub fn interval(&self) -> Interval {
        Interval {
            mean: self.mean,
            std_error: self.std_error,
            ci_low: self.ci_low,
            ci_high: self.ci_high,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Two-sided normal quantile for a confidence level.
pub fn z_value(confidence_level: f64) -> Result<f64> {
    if !(confidence_level > 0.0 && confidence_level < 1.0) {
        return Err(Error::Config(format!(
            "confidence_level must lie in (0, 1), got {confidence_level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(normal.inverse_cdf(1.0 - (1.0 - confidence_level) / 2.0))
}

/// Monte Carlo sizes, seeds and diagnostic accuracy for utility estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSettings {
    /// Posterior draws used as truth candidates.
    pub h1: usize,
    /// Simulated datasets.
    pub h2: usize,
    pub seed: u64,
    pub confidence_level: f64,
    /// Diagnostic sensitivity assumed for simulated tests.
    pub sensitivity: f64,
    /// Diagnostic specificity assumed for simulated tests.
    pub specificity: f64,
    pub sampler: SamplerConfig,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            h1: 5_000,
            h2: 300,
            seed: 0,
            confidence_level: 0.95,
            sensitivity: 1.0,
            specificity: 1.0,
            sampler: SamplerConfig::default(),
        }
    }
}

/// Everything fixed across the plans being compared.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub existing: &'a Dataset,
    pub network: &'a Network,
    pub prior: &'a PriorSpec,
    pub sourcing: &'a SourcingMatrix,
    pub spec: &'a LossSpec,
}

impl Scenario<'_> {
    fn check(&self) -> Result<()> {
        if !self.sourcing.conforms_to(self.network) {
            return Err(Error::InvalidArgument(
                "sourcing matrix does not match the network".into(),
            ));
        }
        if let Some(p) = &self.spec.prioritization {
            if p.as_slice().len() != self.network.node_count()
                || p.test().len() != self.network.n_test()
            {
                return Err(Error::InvalidArgument(
                    "prioritization does not match the network".into(),
                ));
            }
        }
        Ok(())
    }
}

fn seed_truth(seed: u64) -> u64 {
    derive_seed(seed, 0)
}

fn seed_subset(seed: u64) -> u64 {
    derive_seed(seed, 1)
}

fn seed_columns(seed: u64) -> u64 {
    derive_seed(seed, 2)
}

fn seed_resample(seed: u64) -> u64 {
    derive_seed(seed, 3)
}

/// Draws tests for `plan` node by node. Each test consumes two uniforms from the
/// node's own stream: one picks the supply node, one decides the result.
fn simulate_with(
    plan: &SamplingPlan,
    sourcing: &SourcingMatrix,
    truth: &[f64],
    s: f64,
    r: f64,
    rng_seed: u64,
    mut emit: impl FnMut(usize, usize, bool),
) {
    let n_test = sourcing.n_test();
    for a in 0..n_test {
        let count = plan.get(a);
        if count == 0 {
            continue;
        }
        let row = sourcing.row(a);
        let last = row.iter().rposition(|&q| q > 0.0).unwrap_or(row.len() - 1);
        let mut rng = stream_rng(rng_seed, a as u64);
        for _ in 0..count {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut b = last;
            for (k, &q) in row.iter().enumerate() {
                cum += q;
                if u < cum {
                    b = k;
                    break;
                }
            }
            let p = detection_probability(truth[a], truth[n_test + b], s, r);
            let positive = rng.random::<f64>() < p;
            emit(a, b, positive);
        }
    }
}

/// Simulated test records for `plan` under `truth`.
pub fn simulate_dataset(
    plan: &SamplingPlan,
    network: &Network,
    sourcing: &SourcingMatrix,
    truth: &RateVector,
    s: f64,
    r: f64,
    rng_seed: u64,
) -> Result<Dataset> {
    if !plan.conforms_to(network) || !sourcing.conforms_to(network) || !truth.conforms_to(network) {
        return Err(Error::InvalidArgument(
            "plan, sourcing and truth must match the network".into(),
        ));
    }
    let mut records = Vec::with_capacity(plan.total() as usize);
    let mut failure = None;
    simulate_with(
        plan,
        sourcing,
        truth.as_slice(),
        s,
        r,
        rng_seed,
        |a, b, y| match TestRecord::new(
            network.test_nodes()[a].clone(),
            network.supply_nodes()[b].clone(),
            y,
            s,
            r,
        ) {
            Ok(rec) => records.push(rec),
            Err(e) => failure = Some(e),
        },
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(Dataset::new(records)),
    }
}

/// Trace counts of the dataset [`simulate_dataset`] would produce.
pub fn simulate_counts(
    plan: &SamplingPlan,
    sourcing: &SourcingMatrix,
    truth: &[f64],
    s: f64,
    r: f64,
    rng_seed: u64,
) -> CountMatrices {
    let mut counts = CountMatrices::zeros(sourcing.n_test(), sourcing.n_supply());
    simulate_with(plan, sourcing, truth, s, r, rng_seed, |a, b, y| {
        counts.add(a, b, y)
    });
    counts
}

/// Cached per-draw log detection probabilities for every trace.
#[derive(Debug, Clone)]
struct LogTerms {
    traces: usize,
    n_supply: usize,
    log_pos: Vec<f64>,
    log_neg: Vec<f64>,
}

impl LogTerms {
    fn new(draws: &DrawSet, n_supply: usize, s: f64, r: f64) -> Self {
        let n_test = draws.n_test();
        let traces = n_test * n_supply;
        let mut log_pos = Vec::with_capacity(draws.len() * traces);
        let mut log_neg = Vec::with_capacity(draws.len() * traces);
        for i in 0..draws.len() {
            let row = draws.row(i);
            for a in 0..n_test {
                for b in 0..n_supply {
                    let p = detection_probability(row[a], row[n_test + b], s, r);
                    log_pos.push(p.ln());
                    log_neg.push((-p).ln_1p());
                }
            }
        }
        Self {
            traces,
            n_supply,
            log_pos,
            log_neg,
        }
    }

    fn len(&self) -> usize {
        self.log_pos.len() / self.traces
    }

    /// Normalized likelihood weights of every draw given `counts`, written to `out`.
    fn column(&self, counts: &CountMatrices, column: usize, out: &mut Vec<f64>) -> Result<()> {
        let active: Vec<(usize, f64, f64)> = counts
            .nonzero_traces()
            .map(|(a, b, n, y)| (a * self.n_supply + b, f64::from(y), f64::from(n - y)))
            .collect();
        let h = self.len();
        out.clear();
        out.extend((0..h).map(|i| {
            let base = i * self.traces;
            active
                .iter()
                .map(|&(t, y, miss)| {
                    let mut l = 0.0;
                    if y > 0.0 {
                        l += y * self.log_pos[base + t];
                    }
                    if miss > 0.0 {
                        l += miss * self.log_neg[base + t];
                    }
                    l
                })
                .sum::<f64>()
        }));
        normalize_log_weights(out, column)
    }
}

fn normalize_log_weights(w: &mut [f64], column: usize) -> Result<()> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateColumn { column });
    }
    let mut sum = 0.0;
    for x in w.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(Error::DegenerateColumn { column });
    }
    for x in w.iter_mut() {
        *x /= sum;
    }
    Ok(())
}

/// Column-major `h1 × h2` matrix of normalized data likelihoods.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.rows + i]
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }
}

/// Likelihood matrix whose column `j` weights every draw in `truth_draws` by the
/// probability of a dataset simulated under `data_draws[j]`.
pub fn build_data_matrix(
    truth_draws: &DrawSet,
    data_draws: &DrawSet,
    plan: &SamplingPlan,
    sourcing: &SourcingMatrix,
    s: f64,
    r: f64,
    rng_seed: u64,
) -> Result<DataMatrix> {
    check_shapes(truth_draws, plan, sourcing)?;
    check_shapes(data_draws, plan, sourcing)?;
    let terms = LogTerms::new(truth_draws, sourcing.n_supply(), s, r);
    let cols: Vec<Vec<f64>> = (0..data_draws.len())
        .into_par_iter()
        .map(|j| {
            let counts = simulate_counts(
                plan,
                sourcing,
                data_draws.row(j),
                s,
                r,
                derive_seed(rng_seed, j as u64),
            );
            let mut w = Vec::new();
            terms.column(&counts, j, &mut w)?;
            Ok(w)
        })
        .collect::<Result<_>>()?;
    Ok(DataMatrix {
        rows: truth_draws.len(),
        cols: cols.len(),
        values: cols.concat(),
    })
}

fn check_shapes(draws: &DrawSet, plan: &SamplingPlan, sourcing: &SourcingMatrix) -> Result<()> {
    if plan.len() != sourcing.n_test()
        || draws.n_test() != sourcing.n_test()
        || draws.node_count() != sourcing.n_test() + sourcing.n_supply()
    {
        return Err(Error::InvalidArgument(
            "plan, draws and sourcing disagree on node counts".into(),
        ));
    }
    Ok(())
}

/// Fast plan evaluator built once per scenario.
///
/// Holds the truth draw set, the simulated-truth subset, pre-sorted node values
/// and the likelihood cache, so every plan is scored with the same random
/// numbers. Datasets for a plan with more tests extend those of a smaller plan.
#[derive(Debug, Clone)]
pub struct FastUtility {
    draws: DrawSet,
    subset: Vec<usize>,
    sorted: SortedNodes,
    terms: LogTerms,
    sourcing: SourcingMatrix,
    spec: LossSpec,
    settings: EstimatorSettings,
    z: f64,
    baseline: f64,
}

impl FastUtility {
    /// Samples the truth draw set from the posterior under existing data and
    /// prepares the evaluator.
    pub fn prepare(scenario: &Scenario<'_>, settings: &EstimatorSettings) -> Result<Self> {
        scenario.check()?;
        let draws = sample_posterior_with(
            scenario.existing,
            scenario.network,
            scenario.prior,
            settings.h1,
            seed_truth(settings.seed),
            &settings.sampler,
        )?;
        Self::from_draws(draws, scenario.sourcing, scenario.spec, settings)
    }

    /// Prepares the evaluator on a given truth draw set.
    pub fn from_draws(
        draws: DrawSet,
        sourcing: &SourcingMatrix,
        spec: &LossSpec,
        settings: &EstimatorSettings,
    ) -> Result<Self> {
        let h1 = draws.len();
        if settings.h2 == 0 || settings.h2 > h1 {
            return Err(Error::InvalidArgument(format!(
                "h2 must lie in 1..={h1}, got {}",
                settings.h2
            )));
        }
        check_shapes(&draws, &SamplingPlan::zeros(sourcing.n_test()), sourcing)?;
        crate::supply_model::check_diagnostic(settings.sensitivity, "sensitivity")?;
        crate::supply_model::check_diagnostic(settings.specificity, "specificity")?;
        let z = z_value(settings.confidence_level)?;
        let mut rng = stream_rng(seed_subset(settings.seed), 0);
        let subset = sample_indices(&mut rng, h1, settings.h2).into_vec();
        let sorted = SortedNodes::new(&draws, spec);
        let terms = LogTerms::new(
            &draws,
            sourcing.n_supply(),
            settings.sensitivity,
            settings.specificity,
        );
        let mut uniform = vec![0.0; h1];
        normalize_log_weights(&mut uniform, 0)?;
        let baseline = sorted.min_loss(&uniform, spec);
        Ok(Self {
            draws,
            subset,
            sorted,
            terms,
            sourcing: sourcing.clone(),
            spec: spec.clone(),
            settings: settings.clone(),
            z,
            baseline,
        })
    }

    /// Expected loss with no new data.
    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn draws(&self) -> &DrawSet {
        &self.draws
    }

    pub fn n_test(&self) -> usize {
        self.sourcing.n_test()
    }

    pub fn settings(&self) -> &EstimatorSettings {
        &self.settings
    }

    fn check_plan(&self, plan: &SamplingPlan) -> Result<()> {
        if plan.len() != self.n_test() {
            return Err(Error::InvalidArgument(format!(
                "plan covers {} test nodes, network has {}",
                plan.len(),
                self.n_test()
            )));
        }
        Ok(())
    }

    fn column_counts(&self, plan: &SamplingPlan, j: usize) -> CountMatrices {
        simulate_counts(
            plan,
            &self.sourcing,
            self.draws.row(self.subset[j]),
            self.settings.sensitivity,
            self.settings.specificity,
            derive_seed(seed_columns(self.settings.seed), j as u64),
        )
    }

    /// Likelihood matrix for `plan`.
    pub fn data_matrix(&self, plan: &SamplingPlan) -> Result<DataMatrix> {
        self.check_plan(plan)?;
        let cols: Vec<Vec<f64>> = (0..self.subset.len())
            .into_par_iter()
            .map(|j| {
                let mut w = Vec::new();
                self.terms.column(&self.column_counts(plan, j), j, &mut w)?;
                Ok(w)
            })
            .collect::<Result<_>>()?;
        Ok(DataMatrix {
            rows: self.draws.len(),
            cols: cols.len(),
            values: cols.concat(),
        })
    }

    /// Minimum weighted expected loss for each simulated dataset.
    pub fn column_losses(&self, plan: &SamplingPlan) -> Result<Vec<f64>> {
        self.check_plan(plan)?;
        if plan.total() == 0 {
            return Ok(vec![self.baseline; self.subset.len()]);
        }
        (0..self.subset.len())
            .into_par_iter()
            .map_init(Vec::new, |w, j| {
                self.terms.column(&self.column_counts(plan, j), j, w)?;
                Ok(self.sorted.min_loss(w, &self.spec))
            })
            .collect()
    }

    pub fn expected_loss(&self, plan: &SamplingPlan) -> Result<LossEstimate> {
        let samples = self.column_losses(plan)?;
        Ok(LossEstimate {
            interval: Interval::from_samples(&samples, self.z),
            samples,
            h1: self.draws.len(),
            h2: self.subset.len(),
            seed: self.settings.seed,
        })
    }

    pub fn utility(&self, plan: &SamplingPlan) -> Result<UtilityEstimate> {
        let gains: Vec<f64> = self
            .column_losses(plan)?
            .into_iter()
            .map(|u| self.baseline - u)
            .collect();
        let iv = Interval::from_samples(&gains, self.z);
        Ok(UtilityEstimate {
            mean: iv.mean,
            std_error: iv.std_error,
            ci_low: iv.ci_low,
            ci_high: iv.ci_high,
            h1: self.draws.len(),
            h2: self.subset.len(),
            seed: self.settings.seed,
            baseline_expected_loss: self.baseline,
        })
    }
}

/// Expected loss of `plan` by likelihood reweighting of one draw set.
pub fn expected_loss_fast(
    scenario: &Scenario<'_>,
    plan: &SamplingPlan,
    settings: &EstimatorSettings,
) -> Result<LossEstimate> {
    FastUtility::prepare(scenario, settings)?.expected_loss(plan)
}

/// Utility of `plan` by likelihood reweighting of one draw set.
pub fn plan_utility(
    scenario: &Scenario<'_>,
    plan: &SamplingPlan,
    settings: &EstimatorSettings,
) -> Result<UtilityEstimate> {
    FastUtility::prepare(scenario, settings)?.utility(plan)
}

/// Per-simulation reference losses: each simulated dataset triggers a fresh
/// posterior run of `h1` draws, and the estimate is the member of that draw set
/// with the smallest summed loss.
fn mcmc_losses(
    scenario: &Scenario<'_>,
    plan: &SamplingPlan,
    settings: &EstimatorSettings,
) -> Result<Vec<f64>> {
    scenario.check()?;
    if !plan.conforms_to(scenario.network) {
        return Err(Error::InvalidArgument(
            "plan does not match the network".into(),
        ));
    }
    let truth = sample_posterior_with(
        scenario.existing,
        scenario.network,
        scenario.prior,
        settings.h1,
        seed_truth(settings.seed),
        &settings.sampler,
    )?;
    if settings.h2 == 0 || settings.h2 > truth.len() {
        return Err(Error::InvalidArgument(format!(
            "h2 must lie in 1..={}",
            truth.len()
        )));
    }
    let mut rng = stream_rng(seed_subset(settings.seed), 0);
    let subset = sample_indices(&mut rng, truth.len(), settings.h2).into_vec();
    subset
        .par_iter()
        .enumerate()
        .map(|(j, &i)| {
            let simulated = simulate_dataset(
                plan,
                scenario.network,
                scenario.sourcing,
                &truth.draw(i),
                settings.sensitivity,
                settings.specificity,
                derive_seed(seed_columns(settings.seed), j as u64),
            )?;
            let combined = scenario.existing.concat(&simulated);
            let posterior = sample_posterior_with(
                &combined,
                scenario.network,
                scenario.prior,
                settings.h1,
                derive_seed(seed_resample(settings.seed), j as u64),
                &settings.sampler,
            )?;
            let best = posterior.draw(bayes_member_index(&posterior, scenario.spec)?);
            let total: f64 = (0..posterior.len())
                .map(|k| total_loss(&best, &posterior.draw(k), scenario.spec))
                .sum();
            Ok(total / posterior.len() as f64)
        })
        .collect()
}

/// Reference expected loss by repeated posterior sampling.
pub fn expected_loss_mcmc(
    scenario: &Scenario<'_>,
    plan: &SamplingPlan,
    settings: &EstimatorSettings,
) -> Result<LossEstimate> {
    let z = z_value(settings.confidence_level)?;
    let samples = mcmc_losses(scenario, plan, settings)?;
    Ok(LossEstimate {
        interval: Interval::from_samples(&samples, z),
        samples,
        h1: settings.h1,
        h2: settings.h2,
        seed: settings.seed,
    })
}

/// Reference utility: paired differences between the reference losses of the
/// empty plan and of `plan` under the same seeds.
pub fn plan_utility_mcmc(
    scenario: &Scenario<'_>,
    plan: &SamplingPlan,
    settings: &EstimatorSettings,
) -> Result<UtilityEstimate> {
    let z = z_value(settings.confidence_level)?;
    let base = mcmc_losses(scenario, &SamplingPlan::zeros(plan.len()), settings)?;
    let with_plan = if plan.total() == 0 {
        base.clone()
    } else {
        mcmc_losses(scenario, plan, settings)?
    };
    let gains: Vec<f64> = base.iter().zip(&with_plan).map(|(b, l)| b - l).collect();
    let iv = Interval::from_samples(&gains, z);
    Ok(UtilityEstimate {
        mean: iv.mean,
        std_error: iv.std_error,
        ci_low: iv.ci_low,
        ci_high: iv.ci_high,
        h1: settings.h1,
        h2: settings.h2,
        seed: settings.seed,
        baseline_expected_loss: base.iter().sum::<f64>() / base.len() as f64,
    })
}
