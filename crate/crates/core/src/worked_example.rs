//! The four-test-node, two-supply-node example network with 33 existing tests.
//!
//! Used by tests, the acceptance suite and the CLI fixtures.

use crate::priors::{PriorSpec, DEFAULT_NU};
use crate::supply_model::{Dataset, Network, TestRecord};

/// Tests per trace; row = test node, column = supply node.
pub const TESTS: [[u32; 2]; 4] = [[7, 5], [0, 3], [3, 4], [8, 3]];
/// Positives per trace.
pub const POSITIVES: [[u32; 2]; 4] = [[3, 1], [0, 0], [0, 0], [2, 1]];

/// Prior median shared by every node in the example.
pub const PRIOR_MEDIAN: f64 = 0.10;

pub fn network() -> Network {
    Network::new(["TN1", "TN2", "TN3", "TN4"], ["SN1", "SN2"]).expect("static network is valid")
}

/// Records in trace order, positives first within each trace, perfect diagnostics.
pub fn dataset() -> Dataset {
    let net = network();
    let mut records = Vec::new();
    for (a, row) in TESTS.iter().enumerate() {
        for (b, &n) in row.iter().enumerate() {
            for k in 0..n {
                records.push(
                    TestRecord::new(
                        net.test_nodes()[a].clone(),
                        net.supply_nodes()[b].clone(),
                        k < POSITIVES[a][b],
                        1.0,
                        1.0,
                    )
                    .expect("perfect diagnostics are valid"),
                );
            }
        }
    }
    Dataset::new(records)
}

pub fn prior() -> PriorSpec {
    PriorSpec::uniform(6, PRIOR_MEDIAN, DEFAULT_NU).expect("static prior is valid")
}

/// All tests at the least-tested node (TN2).
pub const LEAST_TESTED: [f64; 4] = [0.0, 1.0, 0.0, 0.0];
/// Equal shares.
pub const UNIFORM: [f64; 4] = [0.25, 0.25, 0.25, 0.25];
/// Half each to the two nodes with detected SFPs (TN1, TN4).
pub const HIGHEST_SFPS: [f64; 4] = [0.5, 0.0, 0.0, 0.5];

/// The three named plan shapes compared in the example.
pub fn named_plans() -> Vec<(&'static str, [f64; 4])> {
    vec![
        ("least_tested", LEAST_TESTED),
        ("uniform", UNIFORM),
        ("highest_sfps", HIGHEST_SFPS),
    ]
}
