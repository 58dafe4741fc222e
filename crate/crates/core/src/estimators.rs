//! Bayes estimates over weighted draw sets.

use crate::error::{Error, Result};
use crate::inference::DrawSet;
use crate::loss::{class_score, classify, LossSpec, ScoreKind};
use crate::supply_model::{RateVector, RATE_CLAMP};

fn check_weights(weights: &[f64], what: &'static str) -> Result<f64> {
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::DegenerateWeights(what));
        }
        total += w;
    }
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::DegenerateWeights(what))
    }
}

/// Smallest value whose normalized cumulative weight reaches `q`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset("weighted quantile of no values"));
    }
    if values.len() != weights.len() {
        return Err(Error::InvalidArgument(
            "values and weights differ in length".into(),
        ));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    let total = check_weights(weights, "weighted quantile weights are all zero")?;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    Ok(quantile_sorted(values, weights, &order, q * total))
}

/// Walks `order` and returns the first value, at the end of its tie group,
/// whose cumulative weight reaches `target`.
fn quantile_sorted(values: &[f64], weights: &[f64], order: &[usize], target: f64) -> f64 {
    let slack = target.abs() * 1e-12;
    let mut cum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        cum += weights[i];
        let group_end = order
            .get(k + 1)
            .is_none_or(|&next| values[next] != values[i]);
        if group_end && cum >= target - slack {
            return values[i];
        }
    }
    values[*order.last().expect("nonempty")]
}

fn check_draw_weights(draws: &DrawSet, column_weights: &[f64]) -> Result<()> {
    if draws.is_empty() {
        return Err(Error::EmptyDataset("draw set is empty"));
    }
    if column_weights.len() != draws.len() {
        return Err(Error::InvalidArgument(format!(
            "{} column weights for {} draws",
            column_weights.len(),
            draws.len()
        )));
    }
    check_weights(column_weights, "column weights are all zero").map(|_| ())
}

/// Per-node weighted quantile at `v / (1 + v)`, each draw weighted by its
/// column weight times the assessment weight of its own rate.
pub fn bayes_estimate_assessment(
    draws: &DrawSet,
    column_weights: &[f64],
    spec: &LossSpec,
) -> Result<RateVector> {
    check_draw_weights(draws, column_weights)?;
    let q = spec.quantile_level();
    let mut est = Vec::with_capacity(draws.node_count());
    for g in 0..draws.node_count() {
        let values = draws.node_values(g);
        let w: Vec<f64> = values
            .iter()
            .zip(column_weights)
            .map(|(&x, &c)| c * spec.weight(x))
            .collect();
        est.push(weighted_quantile(&values, &w, q)?);
    }
    RateVector::from_concat(est, draws.n_test())
}

/// Per-node class: one iff the weighted probability of lying below the
/// threshold is at most `v / (1 + v)`.
pub fn bayes_estimate_classification(
    draws: &DrawSet,
    column_weights: &[f64],
    spec: &LossSpec,
) -> Result<Vec<bool>> {
    check_draw_weights(draws, column_weights)?;
    let q = spec.quantile_level();
    let l = spec.threshold_l;
    Ok((0..draws.node_count())
        .map(|g| {
            let (mut below, mut total) = (0.0, 0.0);
            for (i, &c) in column_weights.iter().enumerate() {
                let x = draws.rate(i, g);
                let w = c * spec.weight(x);
                total += w;
                if !classify(x, l) {
                    below += w;
                }
            }
            below / total <= q
        })
        .collect())
}

/// Weighted expected score of every candidate in `candidates` (sorted ascending)
/// for one node, evaluated by a single sweep over the node's sorted values.
fn sweep_objective(
    sorted_values: &[f64],
    sorted_weights: &[f64],
    candidates: &[f64],
    spec: &LossSpec,
) -> Vec<f64> {
    let v = spec.underestimation_v;
    let n = sorted_values.len();
    match spec.score {
        ScoreKind::Assessment => {
            let a_tot: f64 = sorted_weights.iter().sum();
            let b_tot: f64 = sorted_values
                .iter()
                .zip(sorted_weights)
                .map(|(x, w)| x * w)
                .sum();
            let (mut a_le, mut b_le, mut k) = (0.0, 0.0, 0);
            candidates
                .iter()
                .map(|&c| {
                    while k < n && sorted_values[k] <= c {
                        a_le += sorted_weights[k];
                        b_le += sorted_weights[k] * sorted_values[k];
                        k += 1;
                    }
                    (c * a_le - b_le) + v * ((b_tot - b_le) - c * (a_tot - a_le))
                })
                .collect()
        }
        ScoreKind::Classification => {
            let l = spec.threshold_l;
            let below: f64 = sorted_values
                .iter()
                .zip(sorted_weights)
                .filter(|(x, _)| !classify(**x, l))
                .map(|(_, w)| w)
                .sum();
            let above: f64 = sorted_weights.iter().sum::<f64>() - below;
            candidates
                .iter()
                .map(|&c| if classify(c, l) { below } else { v * above })
                .collect()
        }
    }
}

/// Candidate-grid minimizer of the weighted expected loss, node by node.
///
/// The grid is every draw value of the node together with the threshold and the
/// lower rate clamp; ties go to the smallest candidate.
pub fn bayes_estimate_numeric(
    draws: &DrawSet,
    column_weights: &[f64],
    spec: &LossSpec,
) -> Result<RateVector> {
    check_draw_weights(draws, column_weights)?;
    let mut est = Vec::with_capacity(draws.node_count());
    for g in 0..draws.node_count() {
        let values = draws.node_values(g);
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sv: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let sw: Vec<f64> = order
            .iter()
            .map(|&i| column_weights[i] * spec.weight(values[i]))
            .collect();
        let mut candidates = sv.clone();
        candidates.push(spec.threshold_l);
        candidates.push(RATE_CLAMP);
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        let obj = sweep_objective(&sv, &sw, &candidates, spec);
        let mut best = 0;
        for k in 1..candidates.len() {
            if obj[k] < obj[best] {
                best = k;
            }
        }
        est.push(candidates[best]);
    }
    RateVector::from_concat(est, draws.n_test())
}

/// Index of the draw whose rate vector, used as the estimate, minimizes the
/// summed loss against every draw in the set.
pub fn bayes_member_index(draws: &DrawSet, spec: &LossSpec) -> Result<usize> {
    if draws.is_empty() {
        return Err(Error::EmptyDataset("draw set is empty"));
    }
    let h = draws.len();
    let mut totals = vec![0.0; h];
    for g in 0..draws.node_count() {
        let values = draws.node_values(g);
        let mut order: Vec<usize> = (0..h).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sv: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        let sw: Vec<f64> = sv.iter().map(|&x| spec.weight(x)).collect();
        let obj = sweep_objective(&sv, &sw, &sv, spec);
        let r = spec.priority(g);
        for (k, &i) in order.iter().enumerate() {
            totals[i] += r * obj[k];
        }
    }
    let mut best = 0;
    for i in 1..h {
        if totals[i] < totals[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Draw values of each node pre-sorted together with their truth weights, for
/// repeated minimization under changing column weights.
#[derive(Debug, Clone)]
pub(crate) struct SortedNodes {
    order: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
    truth_weights: Vec<Vec<f64>>,
}

impl SortedNodes {
    pub(crate) fn new(draws: &DrawSet, spec: &LossSpec) -> Self {
        let mut order = Vec::with_capacity(draws.node_count());
        let mut values = Vec::with_capacity(draws.node_count());
        let mut truth_weights = Vec::with_capacity(draws.node_count());
        for g in 0..draws.node_count() {
            let raw = draws.node_values(g);
            let mut idx: Vec<u32> = (0..raw.len() as u32).collect();
            idx.sort_by(|&a, &b| raw[a as usize].total_cmp(&raw[b as usize]));
            let sv: Vec<f64> = idx.iter().map(|&i| raw[i as usize]).collect();
            truth_weights.push(sv.iter().map(|&x| spec.weight(x)).collect());
            values.push(sv);
            order.push(idx);
        }
        Self {
            order,
            values,
            truth_weights,
        }
    }

    pub(crate) fn node_count(&self) -> usize {
        self.values.len()
    }

    /// `min_c Σ_i w_i W(γ_ig) S(c, γ_ig)` for node `g` under column weights `w`.
    pub(crate) fn min_node_loss(&self, g: usize, w: &[f64], spec: &LossSpec) -> f64 {
        let order = &self.order[g];
        let sv = &self.values[g];
        let tw = &self.truth_weights[g];
        let v = spec.underestimation_v;
        match spec.score {
            ScoreKind::Assessment => {
                let (mut a_tot, mut b_tot) = (0.0, 0.0);
                for (k, &i) in order.iter().enumerate() {
                    let e = w[i as usize] * tw[k];
                    a_tot += e;
                    b_tot += e * sv[k];
                }
                let target = spec.quantile_level() * a_tot;
                let slack = target * 1e-12;
                let (mut a_le, mut b_le) = (0.0, 0.0);
                let n = sv.len();
                for (k, &i) in order.iter().enumerate() {
                    let e = w[i as usize] * tw[k];
                    a_le += e;
                    b_le += e * sv[k];
                    let group_end = k + 1 == n || sv[k + 1] != sv[k];
                    if group_end && a_le >= target - slack {
                        let c = sv[k];
                        return ((c * a_le - b_le) + v * ((b_tot - b_le) - c * (a_tot - a_le)))
                            .max(0.0);
                    }
                }
                0.0
            }
            ScoreKind::Classification => {
                let l = spec.threshold_l;
                let (mut below, mut above) = (0.0, 0.0);
                for (k, &i) in order.iter().enumerate() {
                    let e = w[i as usize] * tw[k];
                    if classify(sv[k], l) {
                        above += e;
                    } else {
                        below += e;
                    }
                }
                // Class one costs the mass below the threshold; class zero costs v times the mass above.
                let total = below + above;
                if below <= spec.quantile_level() * total {
                    below * class_score(true, false, v)
                } else {
                    above * class_score(false, true, v)
                }
            }
        }
    }

    /// Prioritized sum over nodes of [`Self::min_node_loss`].
    pub(crate) fn min_loss(&self, w: &[f64], spec: &LossSpec) -> f64 {
        (0..self.node_count())
            .map(|g| spec.priority(g) * self.min_node_loss(g, w, spec))
            .sum()
    }
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::priors::PriorSpec;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn quantile_examples() {
        let v = [1.0, 2.0, 3.0];
        let eq = [1.0, 1.0, 1.0];
        assert_eq!(weighted_quantile(&v, &eq, 0.5).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&v, &eq, 5.0 / 6.0).unwrap(), 3.0);
        assert_eq!(weighted_quantile(&v, &[0.9, 0.05, 0.05], 0.5).unwrap(), 1.0);
        assert!(matches!(
            weighted_quantile(&v, &[0.0; 3], 0.5),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn quantile_handles_ties_and_order() {
        let v = [3.0, 1.0, 2.0, 2.0];
        assert_eq!(weighted_quantile(&v, &[1.0; 4], 0.5).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&v, &[1.0; 4], 0.25).unwrap(), 1.0);
    }

    fn prior_draws(n: usize, seed: u64) -> DrawSet {
        let prior = PriorSpec::new(vec![0.05, 0.1, 0.2], 1.5).unwrap();
        DrawSet::from_prior(&prior, 2, n, seed).unwrap()
    }

    #[test]
    fn median_with_neutral_weight() {
        let d = prior_draws(1001, 1);
        let spec = LossSpec::classification(0.2, 1.0).unwrap();
        // The neutral classification weight exposes the plain weighted quantile.
        let mut vals = d.node_values(0);
        vals.sort_by(f64::total_cmp);
        let q =
            weighted_quantile(&d.node_values(0), &vec![1.0; 1001], spec.quantile_level()).unwrap();
        assert_eq!(q, vals[500]);
    }

    #[test]
    fn assessment_matches_brute_force() {
        let d = prior_draws(300, 2);
        let mut rng = stream_rng(3, 0);
        let w: Vec<f64> = (0..300).map(|_| rng.random::<f64>() + 0.01).collect();
        for v in [1.0, 5.0, 10.0] {
            let spec = LossSpec::assessment(0.2, v, 0.6).unwrap();
            let analytic = bayes_estimate_assessment(&d, &w, &spec).unwrap();
            let numeric = bayes_estimate_numeric(&d, &w, &spec).unwrap();
            for g in 0..3 {
                let (c, best) = brute_min(&d, &w, g, &spec);
                assert!(node_objective(&d, &w, g, analytic.get(g), &spec) <= best + 1e-12);
                assert_abs_diff_eq!(numeric.get(g), c, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn classification_matches_brute_force() {
        let d = prior_draws(300, 4);
        let mut rng = stream_rng(5, 0);
        let w: Vec<f64> = (0..300).map(|_| rng.random::<f64>() + 0.01).collect();
        for v in [1.0, 5.0, 10.0] {
            let spec = LossSpec::classification(0.1, v).unwrap();
            let classes = bayes_estimate_classification(&d, &w, &spec).unwrap();
            for (g, &cls) in classes.iter().enumerate() {
                let one = node_objective(&d, &w, g, spec.threshold_l, &spec);
                let zero = node_objective(&d, &w, g, RATE_CLAMP, &spec);
                assert_eq!(cls, one <= zero, "node {g}, v {v}");
            }
        }
    }

    #[test]
    fn classification_examples() {
        let spec1 = LossSpec::classification(0.5, 1.0).unwrap();
        let spec5 = LossSpec::classification(0.5, 5.0).unwrap();
        let d = DrawSet::from_rows(&[vec![0.1, 0.6], vec![0.7, 0.8]], 1).unwrap();
        // node 1 never falls below the threshold
        assert!(bayes_estimate_classification(&d, &[1.0, 1.0], &spec1).unwrap()[1]);
        // P(below) = 0.5 with v = 1 sits on the inclusive boundary
        assert!(bayes_estimate_classification(&d, &[1.0, 1.0], &spec1).unwrap()[0]);
        // P(below) = 0.9 exceeds 5/6
        assert!(!bayes_estimate_classification(&d, &[0.9, 0.1], &spec5).unwrap()[0]);
    }

    #[test]
    fn single_draw_numeric_is_that_draw() {
        let d = DrawSet::from_rows(&[vec![0.13, 0.27]], 1).unwrap();
        let spec = LossSpec::assessment(0.2, 3.0, 0.5).unwrap();
        let est = bayes_estimate_numeric(&d, &[1.0], &spec).unwrap();
        assert_eq!(est.as_slice(), d.row(0));
    }

    #[test]
    fn sorted_nodes_minimum_matches_brute_force() {
        let d = prior_draws(200, 6);
        let mut rng = stream_rng(7, 0);
        let w: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        for spec in [
            LossSpec::assessment(0.2, 4.0, 0.6).unwrap(),
            LossSpec::classification(0.1, 3.0).unwrap(),
        ] {
            let sorted = SortedNodes::new(&d, &spec);
            for g in 0..3 {
                let (_, best) = brute_min(&d, &w, g, &spec);
                assert_abs_diff_eq!(sorted.min_node_loss(g, &w, &spec), best, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn member_index_matches_brute_force() {
        let d = prior_draws(80, 8);
        let spec = LossSpec::assessment(0.15, 2.0, 0.4).unwrap();
        let brute = (0..d.len())
            .map(|k| {
                let est = d.draw(k);
                let sum: f64 = (0..d.len())
                    .map(|i| crate::loss::total_loss(&est, &d.draw(i), &spec))
                    .sum();
                (k, sum)
            })
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        assert_eq!(bayes_member_index(&d, &spec).unwrap(), brute.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn estimates_invariant_to_weight_scale(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let d = prior_draws(120, seed);
            let mut rng = stream_rng(seed, 1);
            let w: Vec<f64> = (0..120).map(|_| rng.random::<f64>() + 0.001).collect();
            let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
            let spec = LossSpec::assessment(0.2, 5.0, 0.6).unwrap();
            prop_assert_eq!(
                bayes_estimate_assessment(&d, &w, &spec).unwrap(),
                bayes_estimate_assessment(&d, &ws, &spec).unwrap()
            );
            let cspec = LossSpec::classification(0.1, 5.0).unwrap();
            prop_assert_eq!(
                bayes_estimate_classification(&d, &w, &cspec).unwrap(),
                bayes_estimate_classification(&d, &ws, &cspec).unwrap()
            );
        }

        #[test]
        fn estimates_monotone_in_v(seed in 0u64..1000, v1 in 0.5f64..5.0, dv in 0.0f64..10.0) {
            let d = prior_draws(120, seed);
            let w = vec![1.0; 120];
            let lo = bayes_estimate_assessment(&d, &w, &LossSpec::assessment(0.2, v1, 0.6).unwrap()).unwrap();
            let hi = bayes_estimate_assessment(&d, &w, &LossSpec::assessment(0.2, v1 + dv, 0.6).unwrap()).unwrap();
            for g in 0..3 {
                prop_assert!(hi.get(g) >= lo.get(g));
            }
        }

        #[test]
        fn quantile_is_minimizer(seed in 0u64..1000, v in 0.5f64..10.0) {
            let d = prior_draws(60, seed);
            let mut rng = stream_rng(seed, 2);
            let w: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
            let spec = LossSpec::assessment(0.2, v, 0.3).unwrap();
            let est = bayes_estimate_assessment(&d, &w, &spec).unwrap();
            for g in 0..3 {
                let (_, best) = brute_min(&d, &w, g, &spec);
                prop_assert!(node_objective(&d, &w, g, est.get(g), &spec) <= best + 1e-12);
            }
        }
    }
}
