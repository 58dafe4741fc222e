//! Two-echelon supply-chain model: nodes, test records, sourcing, and the
//! binomial likelihood of pass/fail test results.
//!
//! Node indices follow one convention throughout the crate: test nodes occupy
//! `0..|A|` and supply nodes occupy `|A|..|A|+|B|`.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::priors::RiskCategory;
use crate::rng::stream_rng;

/// Rates are kept this far away from 0 and 1 so that logits stay finite.
pub const RATE_CLAMP: f64 = 1e-10;

/// Tolerance used when checking that probability rows sum to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Test nodes (consumer-facing locations) and supply nodes (one upstream echelon).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    test_nodes: Vec<String>,
    supply_nodes: Vec<String>,
    catchments: Option<Vec<f64>>,
    risk: Option<Vec<RiskCategory>>,
    test_index: HashMap<String, usize>,
    supply_index: HashMap<String, usize>,
}

fn index_unique(ids: &[String], echelon: &str) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if id.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "empty {echelon} node identifier"
            )));
        }
        if index.insert(id.clone(), i).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate {echelon} node identifier `{id}`"
            )));
        }
    }
    Ok(index)
}

impl Network {
    pub fn new<S: Into<String>>(
        test_nodes: impl IntoIterator<Item = S>,
        supply_nodes: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let test_nodes: Vec<String> = test_nodes.into_iter().map(Into::into).collect();
        let supply_nodes: Vec<String> = supply_nodes.into_iter().map(Into::into).collect();
        if test_nodes.is_empty() || supply_nodes.is_empty() {
            return Err(Error::InvalidArgument(
                "a network needs at least one test node and one supply node".into(),
            ));
        }
        let test_index = index_unique(&test_nodes, "test")?;
        let supply_index = index_unique(&supply_nodes, "supply")?;
        Ok(Self {
            test_nodes,
            supply_nodes,
            catchments: None,
            risk: None,
            test_index,
            supply_index,
        })
    }

    /// Attaches catchment populations, one per test node.
    pub fn with_catchments(mut self, catchments: Vec<f64>) -> Result<Self> {
        if catchments.len() != self.test_nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} catchments, got {}",
                self.test_nodes.len(),
                catchments.len()
            )));
        }
        if catchments.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument(
                "catchments must be finite and nonnegative".into(),
            ));
        }
        if catchments.iter().all(|c| *c == 0.0) {
            return Err(Error::InvalidArgument("catchments are all zero".into()));
        }
        self.catchments = Some(catchments);
        Ok(self)
    }

    /// Attaches a risk category to every node (test nodes first).
    pub fn with_risk(mut self, risk: Vec<RiskCategory>) -> Result<Self> {
        if risk.len() != self.node_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} risk categories, got {}",
                self.node_count(),
                risk.len()
            )));
        }
        self.risk = Some(risk);
        Ok(self)
    }

    pub fn test_nodes(&self) -> &[String] {
        &self.test_nodes
    }

    pub fn supply_nodes(&self) -> &[String] {
        &self.supply_nodes
    }

    pub fn n_test(&self) -> usize {
        self.test_nodes.len()
    }

    pub fn n_supply(&self) -> usize {
        self.supply_nodes.len()
    }

    /// |A| + |B|.
    pub fn node_count(&self) -> usize {
        self.test_nodes.len() + self.supply_nodes.len()
    }

    pub fn catchments(&self) -> Option<&[f64]> {
        self.catchments.as_deref()
    }

    pub fn risk(&self) -> Option<&[RiskCategory]> {
        self.risk.as_deref()
    }

    pub fn test_index(&self, id: &str) -> Option<usize> {
        self.test_index.get(id).copied()
    }

    pub fn supply_index(&self, id: &str) -> Option<usize> {
        self.supply_index.get(id).copied()
    }

    /// Identifier of node `g` under the concatenated indexing.
    pub fn node_id(&self, g: usize) -> &str {
        if g < self.n_test() {
            &self.test_nodes[g]
        } else {
            &self.supply_nodes[g - self.n_test()]
        }
    }
}

/// One binary test result with its (test node, supply node) trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub test_node: String,
    pub supply_node: String,
    /// `true` when an SFP was detected.
    pub result: bool,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl TestRecord {
    pub fn new(
        test_node: impl Into<String>,
        supply_node: impl Into<String>,
        result: bool,
        sensitivity: f64,
        specificity: f64,
    ) -> Result<Self> {
        check_diagnostic(sensitivity, "sensitivity")?;
        check_diagnostic(specificity, "specificity")?;
        Ok(Self {
            test_node: test_node.into(),
            supply_node: supply_node.into(),
            result,
            sensitivity,
            specificity,
        })
    }
}

pub(crate) fn check_diagnostic(p: f64, what: &str) -> Result<()> {
    if p.is_finite() && p > 0.5 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{what} must lie in (0.5, 1], got {p}"
        )))
    }
}

/// Ordered list of test records. Empty datasets are legal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<TestRecord>,
}

impl Dataset {
    pub fn new(records: Vec<TestRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends the records of `other`.
    pub fn concat(&self, other: &Dataset) -> Dataset {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset { records }
    }

    /// Resolves every record against `network`, returning (test, supply) indices.
    pub fn resolve(&self, network: &Network) -> Result<Vec<(usize, usize)>> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let a = network
                    .test_index(&rec.test_node)
                    .ok_or_else(|| Error::UnknownNode {
                        record: i,
                        echelon: "test",
                        node: rec.test_node.clone(),
                    })?;
                let b =
                    network
                        .supply_index(&rec.supply_node)
                        .ok_or_else(|| Error::UnknownNode {
                            record: i,
                            echelon: "supply",
                            node: rec.supply_node.clone(),
                        })?;
                Ok((a, b))
            })
            .collect()
    }

    /// Number of records per test node.
    pub fn tests_per_node(&self, network: &Network) -> Result<Vec<u32>> {
        let mut counts = vec![0u32; network.n_test()];
        for (a, _) in self.resolve(network)? {
            counts[a] += 1;
        }
        Ok(counts)
    }
}

/// Row-stochastic |A| x |B| matrix of sourcing probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcingMatrix {
    n_test: usize,
    n_supply: usize,
    probs: Vec<f64>,
}

impl SourcingMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_test = rows.len();
        let n_supply = rows.first().map_or(0, Vec::len);
        if n_test == 0 || n_supply == 0 {
            return Err(Error::InvalidArgument("sourcing matrix is empty".into()));
        }
        let mut probs = Vec::with_capacity(n_test * n_supply);
        for (a, row) in rows.into_iter().enumerate() {
            if row.len() != n_supply {
                return Err(Error::InvalidArgument(format!(
                    "sourcing row {a} has {} entries, expected {n_supply}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "sourcing row {a} has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "sourcing row {a} sums to {sum}, not 1"
                )));
            }
            probs.extend(row);
        }
        Ok(Self {
            n_test,
            n_supply,
            probs,
        })
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    pub fn n_supply(&self) -> usize {
        self.n_supply
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.probs[a * self.n_supply..(a + 1) * self.n_supply]
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.probs[a * self.n_supply + b]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.n_supply)
    }

    pub fn conforms_to(&self, network: &Network) -> bool {
        self.n_test == network.n_test() && self.n_supply == network.n_supply()
    }

    /// Replaces row `a`.
    pub fn with_row(mut self, a: usize, row: &[f64]) -> Result<Self> {
        if a >= self.n_test || row.len() != self.n_supply {
            return Err(Error::InvalidArgument(
                "sourcing row does not conform".into(),
            ));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "sourcing row {a} is not a distribution"
            )));
        }
        self.probs[a * self.n_supply..(a + 1) * self.n_supply].copy_from_slice(row);
        Ok(self)
    }
}

/// SFP rates for every test node (`theta`) and supply node (`delta`).
#[derive(Debug, Clone, PartialEq)]
pub struct RateVector {
    rates: Vec<f64>,
    n_test: usize,
}

fn clamp_rate(p: f64) -> f64 {
    p.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP)
}

impl RateVector {
    /// Builds a rate vector. Values outside `[0, 1]` are rejected; values at or
    /// within `RATE_CLAMP` of the boundary are pulled inside.
    pub fn new(theta: Vec<f64>, delta: Vec<f64>) -> Result<Self> {
        let n_test = theta.len();
        let mut rates = theta;
        rates.extend(delta);
        Self::from_concat(rates, n_test)
    }

    /// Builds from a concatenated `[theta..., delta...]` slice.
    pub fn from_concat(mut rates: Vec<f64>, n_test: usize) -> Result<Self> {
        if n_test > rates.len() {
            return Err(Error::InvalidArgument(
                "test-node count exceeds rate count".into(),
            ));
        }
        for r in rates.iter_mut() {
            if !r.is_finite() || *r < 0.0 || *r > 1.0 {
                return Err(Error::InvalidArgument(format!("rate {r} outside [0, 1]")));
            }
            *r = clamp_rate(*r);
        }
        Ok(Self { rates, n_test })
    }

    pub fn theta(&self) -> &[f64] {
        &self.rates[..self.n_test]
    }

    pub fn delta(&self) -> &[f64] {
        &self.rates[self.n_test..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rates
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    pub fn get(&self, g: usize) -> f64 {
        self.rates[g]
    }

    pub fn conforms_to(&self, network: &Network) -> bool {
        self.n_test == network.n_test() && self.rates.len() == network.node_count()
    }
}

/// Per-trace test counts `n_ab` and positive counts `y_ab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrices {
    n_test: usize,
    n_supply: usize,
    n: Vec<u32>,
    y: Vec<u32>,
}

impl CountMatrices {
    pub fn zeros(n_test: usize, n_supply: usize) -> Self {
        Self {
            n_test,
            n_supply,
            n: vec![0; n_test * n_supply],
            y: vec![0; n_test * n_supply],
        }
    }

    /// Builds from row-major `n` and `y` matrices.
    pub fn from_rows(n: &[Vec<u32>], y: &[Vec<u32>]) -> Result<Self> {
        let n_test = n.len();
        let n_supply = n.first().map_or(0, Vec::len);
        if y.len() != n_test {
            return Err(Error::InvalidArgument("n and y row counts differ".into()));
        }
        let mut out = Self::zeros(n_test, n_supply);
        for a in 0..n_test {
            if n[a].len() != n_supply || y[a].len() != n_supply {
                return Err(Error::InvalidArgument("ragged count matrix".into()));
            }
            for b in 0..n_supply {
                if y[a][b] > n[a][b] {
                    return Err(Error::InvalidArgument(format!(
                        "positives exceed tests on trace ({a}, {b})"
                    )));
                }
                out.n[a * n_supply + b] = n[a][b];
                out.y[a * n_supply + b] = y[a][b];
            }
        }
        Ok(out)
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    pub fn n_supply(&self) -> usize {
        self.n_supply
    }

    pub fn n(&self, a: usize, b: usize) -> u32 {
        self.n[a * self.n_supply + b]
    }

    pub fn y(&self, a: usize, b: usize) -> u32 {
        self.y[a * self.n_supply + b]
    }

    pub fn n_row(&self, a: usize) -> &[u32] {
        &self.n[a * self.n_supply..(a + 1) * self.n_supply]
    }

    pub fn y_row(&self, a: usize) -> &[u32] {
        &self.y[a * self.n_supply..(a + 1) * self.n_supply]
    }

    pub fn add(&mut self, a: usize, b: usize, positive: bool) {
        let k = a * self.n_supply + b;
        self.n[k] += 1;
        if positive {
            self.y[k] += 1;
        }
    }

    pub fn total(&self) -> u32 {
        self.n.iter().sum()
    }

    /// Traces with at least one test, as `(a, b, n, y)`.
    pub fn nonzero_traces(&self) -> impl Iterator<Item = (usize, usize, u32, u32)> + '_ {
        (0..self.n.len())
            .filter(|&k| self.n[k] > 0)
            .map(move |k| (k / self.n_supply, k % self.n_supply, self.n[k], self.y[k]))
    }
}

/// Records sharing one (sensitivity, specificity) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub sensitivity: f64,
    pub specificity: f64,
    pub counts: CountMatrices,
}

/// Consolidated SFP rate of a trace: `theta + (1 - theta) * delta`.
pub fn consolidated_sfp_rate(theta_a: f64, delta_b: f64) -> f64 {
    theta_a + (1.0 - theta_a) * delta_b
}

/// Probability that a test on trace (a, b) reads positive.
pub fn detection_probability(theta_a: f64, delta_b: f64, s: f64, r: f64) -> f64 {
    let z = consolidated_sfp_rate(theta_a, delta_b);
    s * z + (1.0 - r) * (1.0 - z)
}

/// Materializes `n_ab` and `y_ab` over all records, ignoring diagnostic accuracy.
pub fn aggregate_traces(dataset: &Dataset, network: &Network) -> Result<CountMatrices> {
    let mut counts = CountMatrices::zeros(network.n_test(), network.n_supply());
    for ((a, b), rec) in dataset.resolve(network)?.into_iter().zip(&dataset.records) {
        counts.add(a, b, rec.result);
    }
    Ok(counts)
}

/// Partitions records by (sensitivity, specificity), in order of first appearance.
pub fn aggregate_strata(dataset: &Dataset, network: &Network) -> Result<Vec<Stratum>> {
    let mut strata: Vec<Stratum> = Vec::new();
    for ((a, b), rec) in dataset.resolve(network)?.into_iter().zip(&dataset.records) {
        let pos = strata
            .iter()
            .position(|s| s.sensitivity == rec.sensitivity && s.specificity == rec.specificity);
        let stratum = match pos {
            Some(i) => &mut strata[i],
            None => {
                strata.push(Stratum {
                    sensitivity: rec.sensitivity,
                    specificity: rec.specificity,
                    counts: CountMatrices::zeros(network.n_test(), network.n_supply()),
                });
                strata.last_mut().expect("just pushed")
            }
        };
        stratum.counts.add(a, b, rec.result);
    }
    Ok(strata)
}

/// Binomial log-likelihood of one trace, skipping zero-count terms.
#[inline]
pub(crate) fn trace_log_likelihood(n: u32, y: u32, p: f64) -> f64 {
    let mut ll = 0.0;
    if y > 0 {
        ll += f64::from(y) * p.ln();
    }
    if n > y {
        ll += f64::from(n - y) * (1.0 - p).ln();
    }
    ll
}

/// Log-likelihood of rates under homogeneous-diagnostic counts.
pub fn log_likelihood(rates: &RateVector, counts: &CountMatrices, s: f64, r: f64) -> f64 {
    let theta = rates.theta();
    let delta = rates.delta();
    counts
        .nonzero_traces()
        .map(|(a, b, n, y)| {
            trace_log_likelihood(n, y, detection_probability(theta[a], delta[b], s, r))
        })
        .sum()
}

/// Log-likelihood summed across diagnostic strata.
pub fn strata_log_likelihood(rates: &RateVector, strata: &[Stratum]) -> f64 {
    strata
        .iter()
        .map(|st| log_likelihood(rates, &st.counts, st.sensitivity, st.specificity))
        .sum()
}

/// Empirical sourcing frequencies per test node.
pub fn estimate_sourcing(dataset: &Dataset, network: &Network) -> Result<SourcingMatrix> {
    let counts = aggregate_traces(dataset, network)?;
    let mut rows = Vec::with_capacity(network.n_test());
    for a in 0..network.n_test() {
        let row = counts.n_row(a);
        let total: u32 = row.iter().sum();
        if total == 0 {
            return Err(Error::NoRecordsForNode {
                node: network.test_nodes()[a].clone(),
            });
        }
        rows.push(
            row.iter()
                .map(|&n| f64::from(n) / f64::from(total))
                .collect(),
        );
    }
    SourcingMatrix::from_rows(rows)
}

/// Sourcing rows for untested nodes, each built from `draws_per_node` supply
/// labels resampled uniformly with replacement from the pooled records.
///
/// Node `k` of `untested` draws from its own stream of `rng_seed`, so rows do
/// not depend on the order or number of other untested nodes.
pub fn bootstrap_sourcing(
    dataset: &Dataset,
    network: &Network,
    draws_per_node: usize,
    untested: &[usize],
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset(
            "nothing to resample for bootstrap sourcing",
        ));
    }
    if draws_per_node == 0 {
        return Err(Error::InvalidArgument(
            "draws_per_node must be at least 1".into(),
        ));
    }
    let pool: Vec<usize> = dataset
        .resolve(network)?
        .into_iter()
        .map(|(_, b)| b)
        .collect();
    untested
        .iter()
        .map(|&a| {
            if a >= network.n_test() {
                return Err(Error::InvalidArgument(format!(
                    "test node index {a} out of range"
                )));
            }
            let mut rng = stream_rng(rng_seed, a as u64);
            let mut counts = vec![0usize; network.n_supply()];
            for _ in 0..draws_per_node {
                counts[pool[rng.random_range(0..pool.len())]] += 1;
            }
            Ok(counts
                .into_iter()
                .map(|c| c as f64 / draws_per_node as f64)
                .collect())
        })
        .collect()
}

/// Sourcing matrix from observed traces, bootstrapping rows of untested nodes.
pub fn sourcing_with_bootstrap(
    dataset: &Dataset,
    network: &Network,
    draws_per_node: usize,
    rng_seed: u64,
) -> Result<SourcingMatrix> {
    let counts = aggregate_traces(dataset, network)?;
    let untested: Vec<usize> = (0..network.n_test())
        .filter(|&a| counts.n_row(a).iter().all(|&n| n == 0))
        .collect();
    let boot = if untested.is_empty() {
        Vec::new()
    } else {
        bootstrap_sourcing(dataset, network, draws_per_node, &untested, rng_seed)?
    };
    let mut rows = Vec::with_capacity(network.n_test());
    let mut boot_iter = boot.into_iter();
    for a in 0..network.n_test() {
        let row = counts.n_row(a);
        let total: u32 = row.iter().sum();
        if total == 0 {
            rows.push(
                boot_iter
                    .next()
                    .expect("one bootstrap row per untested node"),
            );
        } else {
            rows.push(
                row.iter()
                    .map(|&n| f64::from(n) / f64::from(total))
                    .collect(),
            );
        }
    }
    SourcingMatrix::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worked_example;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn consolidated_rate_examples() {
        assert_eq!(consolidated_sfp_rate(0.0, 0.0), 0.0);
        assert_eq!(consolidated_sfp_rate(1.0, 0.5), 1.0);
        assert_abs_diff_eq!(consolidated_sfp_rate(0.1, 0.2), 0.28, epsilon = 1e-12);
    }

    #[test]
    fn detection_probability_examples() {
        assert_abs_diff_eq!(
            detection_probability(0.1, 0.2, 1.0, 1.0),
            0.28,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            detection_probability(0.0, 0.0, 0.9, 0.95),
            0.05,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            detection_probability(1.0, 0.3, 0.9, 0.95),
            0.9,
            epsilon = 1e-12
        );
    }

    #[test]
    fn aggregate_worked_example() {
        let net = worked_example::network();
        let counts = aggregate_traces(&worked_example::dataset(), &net).unwrap();
        assert_eq!(counts.n_row(0), &[7, 5]);
        assert_eq!(counts.y_row(0), &[3, 1]);
        assert_eq!(counts.n_row(3), &[8, 3]);
        assert_eq!(counts.y_row(3), &[2, 1]);
        assert_eq!(counts.total(), 33);

        let empty = aggregate_traces(&Dataset::default(), &net).unwrap();
        assert_eq!(empty, CountMatrices::zeros(4, 2));
    }

    #[test]
    fn unknown_node_names_the_record() {
        let net = worked_example::network();
        let mut data = worked_example::dataset();
        data.records[5].supply_node = "Nowhere".into();
        match aggregate_traces(&data, &net) {
            Err(Error::UnknownNode { record, node, .. }) => {
                assert_eq!(record, 5);
                assert_eq!(node, "Nowhere");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn log_likelihood_examples() {
        let zero = CountMatrices::zeros(1, 1);
        let rates = RateVector::new(vec![0.3], vec![0.4]).unwrap();
        assert_eq!(log_likelihood(&rates, &zero, 0.9, 0.9), 0.0);

        // theta = 0.5, delta ~ 0 gives z~ = 0.5 under a perfect test.
        let rates = RateVector::new(vec![0.5], vec![0.0]).unwrap();
        let two = CountMatrices::from_rows(&[vec![2]], &[vec![1]]).unwrap();
        assert_abs_diff_eq!(
            log_likelihood(&rates, &two, 1.0, 1.0),
            2.0 * 0.5f64.ln(),
            epsilon = 1e-9
        );
        let one = CountMatrices::from_rows(&[vec![1]], &[vec![1]]).unwrap();
        assert_abs_diff_eq!(
            log_likelihood(&rates, &one, 1.0, 1.0),
            0.5f64.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn sourcing_from_worked_example() {
        let net = worked_example::network();
        let q = estimate_sourcing(&worked_example::dataset(), &net).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 7.0 / 12.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.get(0, 1), 5.0 / 12.0, epsilon = 1e-15);
        assert_eq!(q.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn sourcing_five_of_thirty_nine() {
        let net = Network::new(["P39"], ["M1", "M2"]).unwrap();
        let records = (0..39)
            .map(|i| {
                TestRecord::new("P39", if i < 5 { "M1" } else { "M2" }, false, 1.0, 1.0).unwrap()
            })
            .collect();
        let q = estimate_sourcing(&Dataset::new(records), &net).unwrap();
        assert_abs_diff_eq!(q.get(0, 0), 5.0 / 39.0, epsilon = 1e-15);
        assert_eq!((q.get(0, 0) * 100.0).round(), 13.0);
    }

    #[test]
    fn sourcing_requires_records() {
        let net = Network::new(["A1", "A2"], ["B1"]).unwrap();
        let data = Dataset::new(vec![TestRecord::new("A1", "B1", true, 1.0, 1.0).unwrap()]);
        assert!(matches!(
            estimate_sourcing(&data, &net),
            Err(Error::NoRecordsForNode { node }) if node == "A2"
        ));
    }

    #[test]
    fn bootstrap_degenerate_pool_and_determinism() {
        let net = Network::new(["A1", "A2", "A3"], ["B1", "B2"]).unwrap();
        let data = Dataset::new(vec![
            TestRecord::new("A1", "B2", true, 1.0, 1.0).unwrap(),
            TestRecord::new("A1", "B2", false, 1.0, 1.0).unwrap(),
        ]);
        let rows = bootstrap_sourcing(&data, &net, 44, &[1, 2], 9).unwrap();
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![0.0, 1.0]]);

        let data = worked_example::dataset();
        let net = worked_example::network();
        let r1 = bootstrap_sourcing(&data, &net, 44, &[0, 2], 17).unwrap();
        let r2 = bootstrap_sourcing(&data, &net, 44, &[0, 2], 17).unwrap();
        assert_eq!(r1, r2);
        for row in &r1 {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = ROW_SUM_TOLERANCE);
            // 44 draws give multiples of 1/44.
            for p in row {
                assert_abs_diff_eq!((p * 44.0).round(), p * 44.0, epsilon = 1e-9);
            }
        }
        let r3 = bootstrap_sourcing(&data, &net, 44, &[0, 2], 18).unwrap();
        assert_ne!(r1, r3);
        assert!(bootstrap_sourcing(&Dataset::default(), &net, 44, &[0], 1).is_err());
    }

    #[test]
    fn rate_vector_clamps_and_rejects() {
        let v = RateVector::new(vec![0.0, 1.0], vec![0.5]).unwrap();
        assert_eq!(v.theta(), &[RATE_CLAMP, 1.0 - RATE_CLAMP]);
        assert!(RateVector::new(vec![1.5], vec![0.5]).is_err());
        assert!(RateVector::new(vec![f64::NAN], vec![0.5]).is_err());
    }

    #[test]
    fn strata_partition_by_diagnostic() {
        let net = Network::new(["A"], ["B"]).unwrap();
        let data = Dataset::new(vec![
            TestRecord::new("A", "B", true, 0.9, 0.95).unwrap(),
            TestRecord::new("A", "B", false, 1.0, 1.0).unwrap(),
            TestRecord::new("A", "B", false, 0.9, 0.95).unwrap(),
        ]);
        let strata = aggregate_strata(&data, &net).unwrap();
        assert_eq!(strata.len(), 2);
        assert_eq!(strata[0].counts.n(0, 0), 2);
        assert_eq!(strata[1].counts.n(0, 0), 1);
    }

    proptest! {
        #[test]
        fn consolidated_rate_dominates_inputs(t in 0.0f64..=1.0, d in 0.0f64..=1.0, dt in 0.0f64..0.5) {
            let z = consolidated_sfp_rate(t, d);
            prop_assert!(z >= t.max(d) - 1e-15);
            prop_assert!(z <= 1.0 + 1e-15);
            let t2 = (t + dt).min(1.0);
            prop_assert!(consolidated_sfp_rate(t2, d) >= z - 1e-15);
            prop_assert!(consolidated_sfp_rate(d, t2) >= consolidated_sfp_rate(d, t) - 1e-15);
        }

        #[test]
        fn detection_probability_bounded(t in 0.0f64..=1.0, d in 0.0f64..=1.0, s in 0.5001f64..=1.0, r in 0.5001f64..=1.0) {
            let p = detection_probability(t, d, s, r);
            prop_assert!(p >= 1.0 - r - 1e-12 && p <= s + 1e-12);
        }

        #[test]
        fn likelihood_invariant_to_order_and_splitting(
            results in proptest::collection::vec((0usize..3, 0usize..2, any::<bool>()), 0..40),
            seed in any::<u64>(),
        ) {
            let net = Network::new(["A1", "A2", "A3"], ["B1", "B2"]).unwrap();
            let records: Vec<TestRecord> = results.iter().map(|&(a, b, y)| {
                TestRecord::new(net.test_nodes()[a].clone(), net.supply_nodes()[b].clone(), y, 0.9, 0.97).unwrap()
            }).collect();
            let rates = RateVector::new(vec![0.1, 0.2, 0.05], vec![0.3, 0.15]).unwrap();
            let data = Dataset::new(records.clone());
            let ll = strata_log_likelihood(&rates, &aggregate_strata(&data, &net).unwrap());

            let mut shuffled = records.clone();
            let mut rng = stream_rng(seed, 0);
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            let ll_shuffled = strata_log_likelihood(&rates, &aggregate_strata(&Dataset::new(shuffled), &net).unwrap());
            prop_assert!((ll - ll_shuffled).abs() < 1e-9);

            let half = records.len() / 2;
            let left = aggregate_traces(&Dataset::new(records[..half].to_vec()), &net).unwrap();
            let right = aggregate_traces(&Dataset::new(records[half..].to_vec()), &net).unwrap();
            let split = log_likelihood(&rates, &left, 0.9, 0.97) + log_likelihood(&rates, &right, 0.9, 0.97);
            prop_assert!((ll - split).abs() < 1e-9);
        }
    }
}
