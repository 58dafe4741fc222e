//! Posterior sampling of SFP rates and a quadrature oracle for tiny networks.
//!
//! The sampler is a component-wise random-walk Metropolis scheme in logit
//! space. Proposal scales adapt per node during burn-in and are frozen after.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::priors::{logit, sigmoid, PriorSpec};
use crate::rng::stream_rng;
use crate::supply_model::{
    aggregate_strata, detection_probability, trace_log_likelihood, Dataset, Network, RateVector,
    Stratum, RATE_CLAMP,
};

/// Smallest draw count accepted by [`sample_posterior`].
pub const MIN_DRAWS: usize = 100;

/// Split potential scale reduction above which a warning is logged.
pub const RHAT_WARN: f64 = 1.1;

/// Where a draw set came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub dataset_fingerprint: u64,
    pub chains: usize,
    /// Burn-in sweeps per chain.
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

/// Convergence diagnostics gathered while sampling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Split-chain potential scale reduction per node (logit scale).
    pub rhat: Vec<f64>,
    /// Post-burn-in acceptance rate per node, averaged over chains.
    pub acceptance: Vec<f64>,
}

/// An ordered collection of rate vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawSet {
    values: Vec<f64>,
    n_test: usize,
    n_nodes: usize,
    provenance: Option<Provenance>,
    diagnostics: Diagnostics,
}

impl DrawSet {
    /// Builds a draw set from concatenated `[theta..., delta...]` rows.
    pub fn from_rows(rows: &[Vec<f64>], n_test: usize) -> Result<Self> {
        let n_nodes = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("a draw set cannot be empty".into()))?;
        let mut values = Vec::with_capacity(rows.len() * n_nodes);
        for row in rows {
            if row.len() != n_nodes {
                return Err(Error::InvalidArgument("ragged draw rows".into()));
            }
            values.extend(RateVector::from_concat(row.clone(), n_test)?.as_slice());
        }
        Ok(Self {
            values,
            n_test,
            n_nodes,
            provenance: None,
            diagnostics: Diagnostics::default(),
        })
    }

    /// `count` independent draws from the prior.
    pub fn from_prior(prior: &PriorSpec, n_test: usize, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("a draw set cannot be empty".into()));
        }
        if n_test > prior.len() {
            return Err(Error::InvalidArgument(
                "prior has fewer nodes than test nodes".into(),
            ));
        }
        let mut rng = stream_rng(seed, 0);
        let mut values = Vec::with_capacity(count * prior.len());
        for _ in 0..count {
            values.extend(prior.sample_logits(&mut rng).into_iter().map(to_rate));
        }
        Ok(Self {
            values,
            n_test,
            n_nodes: prior.len(),
            provenance: None,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n_nodes
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    pub fn n_test(&self) -> usize {
        self.n_test
    }

    /// Rate of node `g` in draw `i`.
    #[inline]
    pub fn rate(&self, i: usize, g: usize) -> f64 {
        self.values[i * self.n_nodes + g]
    }

    /// Draw `i` as a concatenated slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    pub fn draw(&self, i: usize) -> RateVector {
        RateVector::from_concat(self.row(i).to_vec(), self.n_test).expect("draws are interior")
    }

    /// All values of node `g`, in draw order.
    pub fn node_values(&self, g: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.rate(i, g)).collect()
    }

    /// The draws at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DrawSet {
        let mut values = Vec::with_capacity(indices.len() * self.n_nodes);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DrawSet {
            values,
            n_test: self.n_test,
            n_nodes: self.n_nodes,
            provenance: self.provenance.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn conforms_to(&self, network: &Network) -> bool {
        self.n_test == network.n_test() && self.n_nodes == network.node_count()
    }
}

#[inline]
fn to_rate(x: f64) -> f64 {
    sigmoid(x).clamp(RATE_CLAMP, 1.0 - RATE_CLAMP)
}

/// Tuning knobs for the Metropolis sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Fraction of each chain's sweeps discarded as burn-in.
    pub burn_in_fraction: f64,
    /// Sweeps between retained draws.
    pub thin: usize,
    /// Sweeps per adaptation batch during burn-in.
    pub adapt_batch: usize,
    /// Standard deviation of the logit-space jitter around prior medians at start.
    pub init_jitter: f64,
    pub initial_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            burn_in_fraction: 0.5,
            thin: 4,
            adapt_batch: 50,
            init_jitter: 0.1,
            initial_scale: 1.0,
        }
    }
}

struct Target<'a> {
    strata: &'a [Stratum],
    prior: &'a PriorSpec,
    n_test: usize,
    n_supply: usize,
}

impl Target<'_> {
    /// Log-likelihood of every trace touching node `g`.
    fn node_log_likelihood(&self, rates: &[f64], g: usize) -> f64 {
        let mut ll = 0.0;
        for st in self.strata {
            let (s, r) = (st.sensitivity, st.specificity);
            if g < self.n_test {
                let a = g;
                for b in 0..self.n_supply {
                    let n = st.counts.n(a, b);
                    if n > 0 {
                        let p = detection_probability(rates[a], rates[self.n_test + b], s, r);
                        ll += trace_log_likelihood(n, st.counts.y(a, b), p);
                    }
                }
            } else {
                let b = g - self.n_test;
                for a in 0..self.n_test {
                    let n = st.counts.n(a, b);
                    if n > 0 {
                        let p = detection_probability(rates[a], rates[g], s, r);
                        ll += trace_log_likelihood(n, st.counts.y(a, b), p);
                    }
                }
            }
        }
        ll
    }

    fn node_count(&self) -> usize {
        self.n_test + self.n_supply
    }
}

struct ChainOutput {
    /// Retained draws, probability scale, draw-major.
    draws: Vec<f64>,
    accepted: Vec<u64>,
    proposals: u64,
}

fn run_chain(
    target: &Target<'_>,
    config: &SamplerConfig,
    keep: usize,
    burn_in: usize,
    seed: u64,
    chain: usize,
    network: &Network,
) -> Result<ChainOutput> {
    let g_count = target.node_count();
    let mut rng = stream_rng(seed, chain as u64);
    let mut x: Vec<f64> = target
        .prior
        .logit_medians()
        .iter()
        .map(|&m| {
            let z: f64 = rng.sample(StandardNormal);
            m + config.init_jitter * z
        })
        .collect();
    let mut p: Vec<f64> = x.iter().map(|&v| to_rate(v)).collect();
    for (g, &xg) in x.iter().enumerate() {
        let lt = target.node_log_likelihood(&p, g) + target.prior.node_log_density(g, xg);
        if !lt.is_finite() {
            return Err(Error::NonFiniteTarget {
                node: network.node_id(g).to_string(),
            });
        }
    }

    let mut log_scale = vec![config.initial_scale.ln(); g_count];
    let mut batch_accepts = vec![0u32; g_count];
    let mut batches = 0usize;
    let mut accepted = vec![0u64; g_count];
    let mut draws = Vec::with_capacity(keep * g_count);
    let total = burn_in + keep * config.thin;

    for sweep in 0..total {
        let burning = sweep < burn_in;
        for g in 0..g_count {
            let current =
                target.node_log_likelihood(&p, g) + target.prior.node_log_density(g, x[g]);
            let z: f64 = rng.sample(StandardNormal);
            let x_new = x[g] + log_scale[g].exp() * z;
            let p_old = p[g];
            p[g] = to_rate(x_new);
            let proposed =
                target.node_log_likelihood(&p, g) + target.prior.node_log_density(g, x_new);
            let u: f64 = rng.random();
            let accept =
                proposed.is_finite() && (proposed >= current || u.ln() < proposed - current);
            if accept {
                x[g] = x_new;
                if burning {
                    batch_accepts[g] += 1;
                } else {
                    accepted[g] += 1;
                }
            } else {
                p[g] = p_old;
            }
        }
        if burning && (sweep + 1) % config.adapt_batch == 0 {
            batches += 1;
            let step = (1.0 / (batches as f64).sqrt()).min(0.5);
            for g in 0..g_count {
                let rate = f64::from(batch_accepts[g]) / config.adapt_batch as f64;
                if rate > 0.4 {
                    log_scale[g] += step;
                } else if rate < 0.2 {
                    log_scale[g] -= step;
                }
                batch_accepts[g] = 0;
            }
        }
        if !burning && (sweep - burn_in + 1).is_multiple_of(config.thin) {
            draws.extend_from_slice(&p);
        }
    }
    Ok(ChainOutput {
        draws,
        accepted,
        proposals: (keep * config.thin) as u64,
    })
}

fn fingerprint(dataset: &Dataset) -> u64 {
    let mut h = DefaultHasher::new();
    for rec in &dataset.records {
        rec.test_node.hash(&mut h);
        rec.supply_node.hash(&mut h);
        rec.result.hash(&mut h);
        rec.sensitivity.to_bits().hash(&mut h);
        rec.specificity.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Split-chain potential scale reduction for one node, on the logit scale.
fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let half = chains.iter().map(Vec::len).min().unwrap_or(0) / 2;
    if half < 2 {
        return f64::NAN;
    }
    let seqs: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    let n = half as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Draws `count` rate vectors from the posterior with default sampler settings.
pub fn sample_posterior(
    dataset: &Dataset,
    network: &Network,
    prior: &PriorSpec,
    count: usize,
    rng_seed: u64,
) -> Result<DrawSet> {
    sample_posterior_with(
        dataset,
        network,
        prior,
        count,
        rng_seed,
        &SamplerConfig::default(),
    )
}

/// Draws `count` rate vectors from the posterior.
///
/// Chains run in parallel; the merged set concatenates chains in index order and
/// is truncated to `count`, so output depends only on `(rng_seed, config)`.
pub fn sample_posterior_with(
    dataset: &Dataset,
    network: &Network,
    prior: &PriorSpec,
    count: usize,
    rng_seed: u64,
    config: &SamplerConfig,
) -> Result<DrawSet> {
    if count < MIN_DRAWS {
        return Err(Error::InvalidArgument(format!(
            "posterior sampling needs at least {MIN_DRAWS} draws, got {count}"
        )));
    }
    if prior.len() != network.node_count() {
        return Err(Error::InvalidArgument(format!(
            "prior covers {} nodes, network has {}",
            prior.len(),
            network.node_count()
        )));
    }
    if config.chains == 0 || config.thin == 0 || config.adapt_batch == 0 {
        return Err(Error::InvalidArgument(
            "sampler chains, thin and adapt_batch must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&config.burn_in_fraction) {
        return Err(Error::InvalidArgument(
            "burn-in fraction must lie in [0, 1)".into(),
        ));
    }
    let strata = aggregate_strata(dataset, network)?;
    let target = Target {
        strata: &strata,
        prior,
        n_test: network.n_test(),
        n_supply: network.n_supply(),
    };
    let keep = count.div_ceil(config.chains);
    let post_sweeps = keep * config.thin;
    let burn_in = ((post_sweeps as f64) * config.burn_in_fraction / (1.0 - config.burn_in_fraction))
        .round() as usize;

    let outputs: Vec<ChainOutput> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&target, config, keep, burn_in, rng_seed, c, network))
        .collect::<Result<_>>()?;

    let g_count = network.node_count();
    let rhat: Vec<f64> = (0..g_count)
        .map(|g| {
            let per_chain: Vec<Vec<f64>> = outputs
                .iter()
                .map(|o| o.draws.chunks(g_count).map(|row| logit(row[g])).collect())
                .collect();
            split_rhat(&per_chain)
        })
        .collect();
    for (g, r) in rhat.iter().enumerate() {
        if *r > RHAT_WARN {
            log::warn!(
                "node `{}`: split R-hat {:.3} exceeds {RHAT_WARN}; consider more draws",
                network.node_id(g),
                r
            );
        }
    }
    let acceptance = (0..g_count)
        .map(|g| {
            outputs
                .iter()
                .map(|o| o.accepted[g] as f64 / o.proposals as f64)
                .sum::<f64>()
                / outputs.len() as f64
        })
        .collect();

    let mut values = Vec::with_capacity(count * g_count);
    for o in &outputs {
        values.extend_from_slice(&o.draws);
    }
    values.truncate(count * g_count);
    Ok(DrawSet {
        values,
        n_test: network.n_test(),
        n_nodes: g_count,
        provenance: Some(Provenance {
            dataset_fingerprint: fingerprint(dataset),
            chains: config.chains,
            burn_in,
            thin: config.thin,
            seed: rng_seed,
        }),
        diagnostics: Diagnostics { rhat, acceptance },
    })
}

/// Posterior moments computed by numeric integration.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureMoments {
    /// Posterior means of `[theta, delta]`.
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// Posterior mean of the consolidated rate.
    pub consolidated_mean: f64,
}

/// Half-width of the logit-space integration window, in units of `nu`.
const QUADRATURE_SPAN: f64 = 10.0;

/// Trapezoid-rule posterior moments on a logit grid. Only 1x1 networks are
/// supported, so the integrand is two-dimensional.
pub fn quadrature_posterior_moments(
    dataset: &Dataset,
    network: &Network,
    prior: &PriorSpec,
    grid_points: usize,
) -> Result<QuadratureMoments> {
    if network.n_test() != 1 || network.n_supply() != 1 {
        return Err(Error::UnsupportedDimension {
            test_nodes: network.n_test(),
            supply_nodes: network.n_supply(),
        });
    }
    if grid_points < 200 {
        return Err(Error::InvalidArgument(
            "quadrature needs at least 200 grid points per axis".into(),
        ));
    }
    if prior.len() != 2 {
        return Err(Error::InvalidArgument("prior must cover both nodes".into()));
    }
    let strata = aggregate_strata(dataset, network)?;
    let axis = |g: usize| -> Vec<f64> {
        let centre = prior.logit_medians()[g];
        let half = QUADRATURE_SPAN * prior.nu();
        let step = 2.0 * half / (grid_points - 1) as f64;
        (0..grid_points)
            .map(|k| centre - half + step * k as f64)
            .collect()
    };
    let xs = axis(0);
    let ws = axis(1);
    let trap = |k: usize| {
        if k == 0 || k == grid_points - 1 {
            0.5
        } else {
            1.0
        }
    };

    let mut log_target = Vec::with_capacity(grid_points * grid_points);
    for &x in &xs {
        let theta = to_rate(x);
        for &w in &ws {
            let delta = to_rate(w);
            let mut lt = prior.node_log_density(0, x) + prior.node_log_density(1, w);
            for st in &strata {
                let n = st.counts.n(0, 0);
                if n > 0 {
                    let p = detection_probability(theta, delta, st.sensitivity, st.specificity);
                    lt += trace_log_likelihood(n, st.counts.y(0, 0), p);
                }
            }
            log_target.push(lt);
        }
    }
    let max = log_target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(
            "posterior vanishes on the quadrature grid".into(),
        ));
    }
    let (mut mass, mut m_t, mut m_d, mut s_t, mut s_d, mut m_z) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &x) in xs.iter().enumerate() {
        let theta = to_rate(x);
        for (j, &w) in ws.iter().enumerate() {
            let delta = to_rate(w);
            let weight = trap(i) * trap(j) * (log_target[i * grid_points + j] - max).exp();
            mass += weight;
            m_t += weight * theta;
            m_d += weight * delta;
            s_t += weight * theta * theta;
            s_d += weight * delta * delta;
            m_z += weight * (theta + (1.0 - theta) * delta);
        }
    }
    let (mean_t, mean_d) = (m_t / mass, m_d / mass);
    Ok(QuadratureMoments {
        means: vec![mean_t, mean_d],
        variances: vec![s_t / mass - mean_t * mean_t, s_d / mass - mean_d * mean_d],
        consolidated_mean: m_z / mass,
    })
}

/// Per-node posterior summary.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSummary {
    pub mean: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

/// Empirical quantile with the smallest-value-reaching-q convention.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Mean, median and 90% interval of every node.
pub fn summarize(draws: &DrawSet) -> Vec<NodeSummary> {
    (0..draws.node_count())
        .map(|g| {
            let mut v = draws.node_values(g);
            v.sort_by(f64::total_cmp);
            NodeSummary {
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q05: sorted_quantile(&v, 0.05),
                median: sorted_quantile(&v, 0.5),
                q95: sorted_quantile(&v, 0.95),
            }
        })
        .collect()
}
