//! Scores, weights, prioritization and the total loss of an estimate.

use crate::error::{Error, Result};
use crate::supply_model::{Network, RateVector, SourcingMatrix, ROW_SUM_TOLERANCE};

/// Which score the loss is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    /// Penalizes misclassification against the threshold; the weight is neutral.
    Classification,
    /// Penalizes the gap between estimate and truth, weighted near the threshold.
    Assessment,
}

impl std::str::FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "classification" => Ok(Self::Classification),
            "assessment" => Ok(Self::Assessment),
            other => Err(Error::Config(format!(
                "unknown score `{other}` (expected `classification` or `assessment`)"
            ))),
        }
    }
}

/// Per-node importance weights, each echelon summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Prioritization {
    weights: Vec<f64>,
    n_test: usize,
}

impl Prioritization {
    pub fn new(test: Vec<f64>, supply: Vec<f64>) -> Result<Self> {
        for (name, w) in [("test", &test), ("supply", &supply)] {
            if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(format!(
                    "{name}-node prioritization must be nonempty and nonnegative"
                )));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::Config(format!(
                    "{name}-node prioritization sums to {sum}, expected 1"
                )));
            }
        }
        let n_test = test.len();
        let mut weights = test;
        weights.extend(supply);
        Ok(Self { weights, n_test })
    }

    pub fn test(&self) -> &[f64] {
        &self.weights[..self.n_test]
    }

    pub fn supply(&self) -> &[f64] {
        &self.weights[self.n_test..]
    }

    /// Weight of node `g` in concatenated order.
    pub fn get(&self, g: usize) -> f64 {
        self.weights[g]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// The regulator's loss configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub score: ScoreKind,
    pub threshold_l: f64,
    pub underestimation_v: f64,
    pub weight_slope_m: f64,
    pub prioritization: Option<Prioritization>,
}

impl LossSpec {
    pub fn new(
        score: ScoreKind,
        threshold_l: f64,
        underestimation_v: f64,
        weight_slope_m: f64,
    ) -> Result<Self> {
        if !(threshold_l > 0.0 && threshold_l < 1.0) {
            return Err(Error::Config(format!(
                "threshold_l must lie in (0, 1), got {threshold_l}"
            )));
        }
        if !(underestimation_v > 0.0 && underestimation_v.is_finite()) {
            return Err(Error::Config(format!(
                "underestimation_v must be positive, got {underestimation_v}"
            )));
        }
        if !(0.0..=1.0).contains(&weight_slope_m) {
            return Err(Error::Config(format!(
                "weight_slope_m must lie in [0, 1], got {weight_slope_m}"
            )));
        }
        Ok(Self {
            score,
            threshold_l,
            underestimation_v,
            weight_slope_m,
            prioritization: None,
        })
    }

    pub fn assessment(
        threshold_l: f64,
        underestimation_v: f64,
        weight_slope_m: f64,
    ) -> Result<Self> {
        Self::new(
            ScoreKind::Assessment,
            threshold_l,
            underestimation_v,
            weight_slope_m,
        )
    }

    pub fn classification(threshold_l: f64, underestimation_v: f64) -> Result<Self> {
        Self::new(
            ScoreKind::Classification,
            threshold_l,
            underestimation_v,
            0.0,
        )
    }

    pub fn with_prioritization(mut self, prioritization: Prioritization) -> Self {
        self.prioritization = Some(prioritization);
        self
    }

    /// Quantile level `v / (1 + v)` of the Bayes estimate.
    pub fn quantile_level(&self) -> f64 {
        self.underestimation_v / (1.0 + self.underestimation_v)
    }

    /// Score of `est` against `truth` under this spec's score kind.
    #[inline]
    pub fn score(&self, est: f64, truth: f64) -> f64 {
        match self.score {
            ScoreKind::Classification => classification_score(est, truth, self),
            ScoreKind::Assessment => assessment_score(est, truth, self),
        }
    }

    /// Weight of a true rate; identically one for classification.
    #[inline]
    pub fn weight(&self, truth: f64) -> f64 {
        match self.score {
            ScoreKind::Classification => 1.0,
            ScoreKind::Assessment => {
                assessment_weight(truth, self.threshold_l, self.weight_slope_m)
            }
        }
    }

    /// Prioritization of node `g`, or one when none is configured.
    #[inline]
    pub fn priority(&self, g: usize) -> f64 {
        self.prioritization.as_ref().map_or(1.0, |p| p.get(g))
    }

    /// Loss contributed by a single node.
    #[inline]
    pub fn node_loss(&self, g: usize, est: f64, truth: f64) -> f64 {
        self.score(est, truth) * self.weight(truth) * self.priority(g)
    }
}

/// One if `rate` is at or above the threshold.
#[inline]
pub fn classify(rate: f64, l: f64) -> bool {
    rate >= l
}

#[inline]
pub fn classification_score(est: f64, truth: f64, spec: &LossSpec) -> f64 {
    class_score(
        classify(est, spec.threshold_l),
        classify(truth, spec.threshold_l),
        spec.underestimation_v,
    )
}

/// Classification score from already-classified values.
#[inline]
pub fn class_score(est: bool, truth: bool, v: f64) -> f64 {
    match (est, truth) {
        (true, false) => 1.0,
        (false, true) => v,
        _ => 0.0,
    }
}

#[inline]
pub fn assessment_score(est: f64, truth: f64, spec: &LossSpec) -> f64 {
    (est - truth).max(0.0) + spec.underestimation_v * (truth - est).max(0.0)
}

/// Weight peaking at the threshold and falling off linearly on each side.
#[inline]
pub fn assessment_weight(truth: f64, l: f64, m: f64) -> f64 {
    if truth < l {
        1.0 - truth * (m - (1.0 - l / truth))
    } else {
        1.0 - truth * m
    }
}

/// Population-based weights: catchment share for test nodes and sourced share
/// for supply nodes.
pub fn node_prioritization(network: &Network, sourcing: &SourcingMatrix) -> Result<Prioritization> {
    let pop = network.catchments().ok_or_else(|| {
        Error::Config("prioritization requires a catchment for every test node".into())
    })?;
    if !sourcing.conforms_to(network) {
        return Err(Error::InvalidArgument(
            "sourcing matrix does not match the network".into(),
        ));
    }
    let total: f64 = pop.iter().sum();
    if total <= 0.0 {
        return Err(Error::Config("catchments must not all be zero".into()));
    }
    let r_a: Vec<f64> = pop.iter().map(|p| p / total).collect();
    let r_b: Vec<f64> = (0..network.n_supply())
        .map(|b| {
            r_a.iter()
                .enumerate()
                .map(|(a, w)| sourcing.get(a, b) * w)
                .sum()
        })
        .collect();
    Prioritization::new(r_a, r_b)
}

/// Sum of score times weight times priority over all nodes.
pub fn total_loss(est: &RateVector, truth: &RateVector, spec: &LossSpec) -> f64 {
    est.as_slice()
        .iter()
        .zip(truth.as_slice())
        .enumerate()
        .map(|(g, (&e, &t))| spec.node_loss(g, e, t))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn assess(l: f64, v: f64, m: f64) -> LossSpec {
        LossSpec::assessment(l, v, m).unwrap()
    }

    #[test]
    fn classify_is_inclusive() {
        assert!(classify(0.3, 0.2));
        assert!(!classify(0.1, 0.2));
        assert!(classify(0.2, 0.2));
    }

    #[test]
    fn classification_scores() {
        let spec = LossSpec::classification(0.2, 5.0).unwrap();
        assert_eq!(classification_score(0.3, 0.1, &spec), 1.0);
        assert_eq!(classification_score(0.1, 0.3, &spec), 5.0);
        assert_eq!(classification_score(0.25, 0.30, &spec), 0.0);
        assert_eq!(spec.weight(0.7), 1.0);
    }

    #[test]
    fn assessment_scores() {
        assert_abs_diff_eq!(
            assessment_score(0.3, 0.1, &assess(0.2, 1.0, 0.0)),
            0.2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            assessment_score(0.1, 0.3, &assess(0.2, 5.0, 0.0)),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(assessment_score(0.4, 0.4, &assess(0.2, 5.0, 0.0)), 0.0);
    }

    #[test]
    fn weight_values() {
        assert_abs_diff_eq!(assessment_weight(0.3, 0.3, 0.6), 0.82, epsilon = 1e-12);
        assert_abs_diff_eq!(assessment_weight(0.1, 0.3, 0.6), 0.74, epsilon = 1e-12);
        assert_abs_diff_eq!(assessment_weight(0.5, 0.3, 0.6), 0.70, epsilon = 1e-12);
    }

    #[test]
    fn weight_branch_forms() {
        let (l, m) = (0.3, 0.6);
        for t in [0.05, 0.1, 0.2, 0.29] {
            assert_abs_diff_eq!(
                assessment_weight(t, l, m),
                1.0 - (m - 1.0) * t - l,
                epsilon = 1e-12
            );
        }
        for t in [0.3, 0.5, 0.9] {
            assert_abs_diff_eq!(assessment_weight(t, l, m), 1.0 - m * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn prioritization_values() {
        let net = Network::new(["a1", "a2"], ["b1", "b2"])
            .unwrap()
            .with_catchments(vec![3.0, 1.0])
            .unwrap();
        let q = SourcingMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let p = node_prioritization(&net, &q).unwrap();
        assert_abs_diff_eq!(p.test()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p.test()[1], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(p.supply()[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.supply()[1], 0.5, epsilon = 1e-12);

        let eq = net.clone().with_catchments(vec![2.0, 2.0]).unwrap();
        let ident = SourcingMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let p = node_prioritization(&eq, &ident).unwrap();
        assert_eq!(p.test(), &[0.5, 0.5]);
        assert_eq!(p.supply(), p.test());

        let bare = Network::new(["a1", "a2"], ["b1", "b2"]).unwrap();
        assert!(matches!(
            node_prioritization(&bare, &q),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn total_loss_example() {
        let spec = assess(0.3, 1.0, 0.0);
        let truth = RateVector::new(vec![0.1], vec![0.5]).unwrap();
        let est = RateVector::new(vec![0.2], vec![0.4]).unwrap();
        assert_abs_diff_eq!(total_loss(&est, &truth, &spec), 0.18, epsilon = 1e-12);
        assert_eq!(total_loss(&truth, &truth, &spec), 0.0);
    }

    #[test]
    fn degenerate_prioritization_isolates_node() {
        let truth = RateVector::new(vec![0.1], vec![0.5]).unwrap();
        let est = RateVector::new(vec![0.2], vec![0.4]).unwrap();
        let spec = assess(0.3, 1.0, 0.0)
            .with_prioritization(Prioritization::new(vec![1.0], vec![1.0]).unwrap());
        let only_test = assess(0.3, 1.0, 0.0);
        let expected = only_test.score(0.2, 0.1) * only_test.weight(0.1)
            + only_test.score(0.4, 0.5) * only_test.weight(0.5);
        assert_abs_diff_eq!(total_loss(&est, &truth, &spec), expected, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(LossSpec::assessment(0.0, 1.0, 0.5).is_err());
        assert!(LossSpec::assessment(0.2, 0.0, 0.5).is_err());
        assert!(LossSpec::assessment(0.2, 1.0, 1.5).is_err());
        assert!(Prioritization::new(vec![0.5, 0.4], vec![1.0]).is_err());
        assert!("bogus".parse::<ScoreKind>().is_err());
        assert_eq!(
            "Assessment".parse::<ScoreKind>().unwrap(),
            ScoreKind::Assessment
        );
    }

    proptest! {
        #[test]
        fn scores_nonnegative_and_linear_in_v(est in 0.0f64..1.0, truth in 0.0f64..1.0, v in 0.1f64..20.0) {
            let s1 = assess(0.2, 1.0, 0.5);
            let sv = assess(0.2, v, 0.5);
            prop_assert!(sv.score(est, truth) >= 0.0);
            if truth > est {
                prop_assert!((sv.score(est, truth) - v * s1.score(est, truth)).abs() < 1e-12);
            }
            let c = LossSpec::classification(0.2, v).unwrap();
            let cs = c.score(est, truth);
            prop_assert!(cs == 0.0 || cs == 1.0 || cs == v);
        }

        #[test]
        fn weight_peaks_at_threshold(l in 0.05f64..0.95, m in 0.0f64..1.0, t in 0.001f64..0.999) {
            let peak = assessment_weight(l, l, m);
            prop_assert!(assessment_weight(t, l, m) <= peak + 1e-12);
            let below = assessment_weight(l - 1e-9, l, m);
            prop_assert!((below - peak).abs() < 1e-6);
        }

        #[test]
        fn loss_is_permutation_invariant(pairs in proptest::collection::vec((0.01f64..0.99, 0.01f64..0.99), 2..8)) {
            let spec = assess(0.2, 3.0, 0.6);
            let est: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let fwd = total_loss(
                &RateVector::from_concat(est.clone(), 1).unwrap(),
                &RateVector::from_concat(truth.clone(), 1).unwrap(),
                &spec,
            );
            let rev = total_loss(
                &RateVector::from_concat(est.into_iter().rev().collect(), 1).unwrap(),
                &RateVector::from_concat(truth.into_iter().rev().collect(), 1).unwrap(),
                &spec,
            );
            prop_assert!((fwd - rev).abs() < 1e-12);
        }

        #[test]
        fn supply_priorities_sum_to_one(rows in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 3), 1..5),
                                        pops in proptest::collection::vec(0.1f64..100.0, 5)) {
            let q_rows: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| { let s: f64 = r.iter().sum(); r.iter().map(|x| x / s).collect() })
                .collect();
            let n = q_rows.len();
            let ids: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
            let net = Network::new(ids, vec!["b0".to_string(), "b1".into(), "b2".into()])
                .unwrap()
                .with_catchments(pops[..n].to_vec())
                .unwrap();
            let p = node_prioritization(&net, &SourcingMatrix::from_rows(q_rows).unwrap()).unwrap();
            prop_assert!((p.supply().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
