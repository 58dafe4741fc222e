use pmsutil_core::estimators::{bayes_estimate_assessment, bayes_estimate_classification};
use pmsutil_core::inference::{quadrature_posterior_moments, sample_posterior, DrawSet};
use pmsutil_core::planner::{greedy_allocations, uniform_plan};
use pmsutil_core::supply_model::{bootstrap_sourcing, estimate_sourcing, sourcing_with_bootstrap};
use pmsutil_core::utility::{EstimatorSettings, FastUtility, Scenario};
use pmsutil_core::{worked_example, Dataset, LossSpec, Network, PriorSpec, TestRecord};

#[test]
fn greedy_sweep_on_worked_example() {
    let network = worked_example::network();
    let data = worked_example::dataset();
    let prior = worked_example::prior();
    let sourcing = estimate_sourcing(&data, &network).unwrap();
    let spec = LossSpec::assessment(0.2, 1.0, 0.6).unwrap();
    let scenario = Scenario {
        existing: &data,
        network: &network,
        prior: &prior,
        sourcing: &sourcing,
        spec: &spec,
    };
    let settings = EstimatorSettings {
        h1: 2_000,
        h2: 150,
        seed: 21,
        ..EstimatorSettings::default()
    };
    let fast = FastUtility::prepare(&scenario, &settings).unwrap();
    let steps = greedy_allocations(20, 5, &fast).unwrap();
    assert_eq!(steps.len(), 4);
    let mut prev = 0.0;
    for s in &steps {
        assert_eq!(s.plan.total(), s.budget);
        assert!(s.utility.mean >= prev - 2.0 * s.utility.half_width());
        prev = s.utility.mean;
    }
    // greedy never does worse than the uniform plan by more than the noise
    let uni = fast.utility(&uniform_plan(20, 4).unwrap()).unwrap();
    let last = &steps.last().unwrap().utility;
    assert!(last.mean >= uni.mean - (last.half_width() + uni.half_width()));
}

#[test]
fn mcmc_means_within_three_standard_errors_of_quadrature() {
    let network = Network::new(["A"], ["B"]).unwrap();
    let data = Dataset::new(
        (0..30)
            .map(|k| TestRecord::new("A", "B", k < 6, 0.95, 0.98).unwrap())
            .collect(),
    );
    let prior = PriorSpec::new(vec![0.1, 0.05], 1.0).unwrap();
    let quad = quadrature_posterior_moments(&data, &network, &prior, 500).unwrap();
    let draws = sample_posterior(&data, &network, &prior, 20_000, 99).unwrap();
    for g in 0..2 {
        let v = draws.node_values(g);
        let batches: Vec<f64> = v
            .chunks(500)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect();
        let m = batches.len() as f64;
        let mean = batches.iter().sum::<f64>() / m;
        let se = (batches.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt();
        assert!(
            (mean - quad.means[g]).abs() <= 3.0 * se + 1e-3,
            "node {g}: {mean} vs {}",
            quad.means[g]
        );
    }
    assert!(draws.diagnostics().rhat.iter().all(|r| *r < 1.1));
}

#[test]
fn estimates_ignore_draw_order() {
    let prior = PriorSpec::new(vec![0.05, 0.2, 0.1], 2.0).unwrap();
    let draws = DrawSet::from_prior(&prior, 2, 2_001, 4).unwrap();
    let reversed: Vec<usize> = (0..draws.len()).rev().collect();
    let shuffled = draws.subset(&reversed);
    let w = vec![1.0; draws.len()];
    let spec = LossSpec::assessment(0.15, 4.0, 0.5).unwrap();
    assert_eq!(
        bayes_estimate_assessment(&draws, &w, &spec).unwrap(),
        bayes_estimate_assessment(&shuffled, &w, &spec).unwrap()
    );
    let cspec = LossSpec::classification(0.15, 4.0).unwrap();
    assert_eq!(
        bayes_estimate_classification(&draws, &w, &cspec).unwrap(),
        bayes_estimate_classification(&shuffled, &w, &cspec).unwrap()
    );
}

#[test]
fn bootstrap_rows_are_seeded() {
    let network = Network::new(["T1", "T2", "T3"], ["S1", "S2", "S3"]).unwrap();
    let data = Dataset::new(
        ["S1", "S1", "S2", "S3", "S3", "S3"]
            .iter()
            .map(|s| TestRecord::new("T1", *s, false, 1.0, 1.0).unwrap())
            .collect(),
    );
    let a = bootstrap_sourcing(&data, &network, 44, &[1, 2], 7).unwrap();
    let b = bootstrap_sourcing(&data, &network, 44, &[1, 2], 7).unwrap();
    let c = bootstrap_sourcing(&data, &network, 44, &[1, 2], 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for row in &a {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let q = sourcing_with_bootstrap(&data, &network, 44, 7).unwrap();
    assert_eq!(q.row(0), &[2.0 / 6.0, 1.0 / 6.0, 3.0 / 6.0]);
    assert_eq!(q.row(1), &a[0][..]);
}
