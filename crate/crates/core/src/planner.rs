//! Allocation policies: greedy budget sweep, uniform and fixed baselines, and
//! exhaustive search on small instances.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::utility::{FastUtility, SamplingPlan, UtilityEstimate};

/// Default limit on the number of plans [`exhaustive_best`] will enumerate.
pub const DEFAULT_PLAN_CAP: u128 = 10_000;

/// Default number of tests added per greedy step.
pub const DEFAULT_INTERVAL: u32 = 10;

/// A plan evaluator with fixed randomness.
pub trait UtilityOracle: Sync {
    fn n_test(&self) -> usize;
    fn utility(&self, plan: &SamplingPlan) -> Result<UtilityEstimate>;
}

impl UtilityOracle for FastUtility {
    fn n_test(&self) -> usize {
        FastUtility::n_test(self)
    }

    fn utility(&self, plan: &SamplingPlan) -> Result<UtilityEstimate> {
        FastUtility::utility(self, plan)
    }
}

/// One step of a greedy sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyStep {
    pub budget: u32,
    pub plan: SamplingPlan,
    pub utility: UtilityEstimate,
}

/// Index of the largest mean, ties to the lowest index.
fn argmax(estimates: &[UtilityEstimate]) -> usize {
    let mut best = 0;
    for (k, e) in estimates.iter().enumerate().skip(1) {
        if e.mean > estimates[best].mean {
            best = k;
        }
    }
    best
}

/// Greedy allocation sweep.
///
/// Starting from the empty plan, each step adds `interval` tests to the node
/// whose addition yields the highest utility. A final partial step spends any
/// remainder of `budget`.
pub fn greedy_allocations(
    budget: u32,
    interval: u32,
    oracle: &dyn UtilityOracle,
) -> Result<Vec<GreedyStep>> {
    if interval == 0 {
        return Err(Error::InvalidArgument("interval must be at least 1".into()));
    }
    if budget < interval {
        return Err(Error::InvalidArgument(format!(
            "budget {budget} is smaller than the interval {interval}"
        )));
    }
    let n_test = oracle.n_test();
    let mut plan = SamplingPlan::zeros(n_test);
    let mut steps = Vec::new();
    let mut spent = 0;
    while spent < budget {
        let add = interval.min(budget - spent);
        let candidates: Vec<UtilityEstimate> = (0..n_test)
            .into_par_iter()
            .map(|a| oracle.utility(&plan.plus(a, add)))
            .collect::<Result<_>>()?;
        let best = argmax(&candidates);
        plan = plan.plus(best, add);
        spent += add;
        log::debug!("greedy: budget {spent} adds {add} to node {best}");
        steps.push(GreedyStep {
            budget: spent,
            plan: plan.clone(),
            utility: candidates[best].clone(),
        });
    }
    Ok(steps)
}

/// Equal split with the remainder going to the lowest-indexed nodes.
pub fn uniform_plan(budget: u32, n_test: usize) -> Result<SamplingPlan> {
    if n_test == 0 {
        return Err(Error::InvalidArgument(
            "a plan needs at least one test node".into(),
        ));
    }
    let n = n_test as u32;
    let (share, rem) = (budget / n, budget % n);
    Ok(SamplingPlan::new(
        (0..n).map(|a| share + u32::from(a < rem)).collect(),
    ))
}

/// Allocation proportional to `reference`, rounded by largest remainders.
pub fn fixed_plan(budget: u32, reference: &SamplingPlan) -> Result<SamplingPlan> {
    let total = u64::from(reference.total());
    if reference.is_empty() || total == 0 {
        return Err(Error::InvalidArgument(
            "fixed plan needs a nonzero reference plan".into(),
        ));
    }
    let budget64 = u64::from(budget);
    let mut alloc: Vec<u32> = Vec::with_capacity(reference.len());
    let mut remainders: Vec<(u64, usize)> = Vec::with_capacity(reference.len());
    for (a, &r) in reference.as_slice().iter().enumerate() {
        let exact = budget64 * u64::from(r);
        alloc.push((exact / total) as u32);
        remainders.push((exact % total, a));
    }
    let left = budget - alloc.iter().sum::<u32>();
    remainders.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    for &(_, a) in remainders.iter().take(left as usize) {
        alloc[a] += 1;
    }
    Ok(SamplingPlan::new(alloc))
}

/// Allocation of `budget` by nonnegative `shares`, rounded by largest
/// remainders with ties to the lowest index.
pub fn share_plan(budget: u32, shares: &[f64]) -> Result<SamplingPlan> {
    if shares.is_empty() || shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument(
            "plan shares must be nonnegative and finite".into(),
        ));
    }
    let total: f64 = shares.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(
            "plan shares must not all be zero".into(),
        ));
    }
    let exact: Vec<f64> = shares
        .iter()
        .map(|s| f64::from(budget) * s / total)
        .collect();
    let mut alloc: Vec<u32> = exact.iter().map(|x| x.floor() as u32).collect();
    let left = budget.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&x, &y| {
        let (rx, ry) = (exact[x] - exact[x].floor(), exact[y] - exact[y].floor());
        ry.total_cmp(&rx).then(x.cmp(&y))
    });
    for &a in order.iter().take(left as usize) {
        alloc[a] += 1;
    }
    Ok(SamplingPlan::new(alloc))
}

/// Extra samples another policy needs to match a target policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Savings {
    Samples(i64),
    /// The other policy never reaches the target utility on the grid.
    NotAttained,
}

impl std::fmt::Display for Savings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Savings::Samples(n) => write!(f, "{n}"),
            Savings::NotAttained => f.write_str("not_attained"),
        }
    }
}

/// Smallest grid budget at which `other` reaches `target`'s utility at
/// `at_budget`, minus `at_budget`. Curves are `(budget, utility)` pairs on a
/// common grid.
pub fn budget_savings(
    target: &[(u32, f64)],
    other: &[(u32, f64)],
    at_budget: u32,
) -> Result<Savings> {
    if target.len() != other.len() || target.iter().zip(other).any(|(t, o)| t.0 != o.0) {
        return Err(Error::InvalidArgument(
            "curves must share one budget grid".into(),
        ));
    }
    let level = target
        .iter()
        .find(|(b, _)| *b == at_budget)
        .map(|p| p.1)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("budget {at_budget} is not on the curve grid"))
        })?;
    let mut grid: Vec<&(u32, f64)> = other.iter().collect();
    grid.sort_by_key(|p| p.0);
    Ok(grid
        .into_iter()
        .find(|(_, u)| *u >= level)
        .map_or(Savings::NotAttained, |(b, _)| {
            Savings::Samples(i64::from(*b) - i64::from(at_budget))
        }))
}

fn choose(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of plans spending exactly `budget` tests over `n_test` nodes:
/// the sum over `i` nonempty nodes of `C(n_test, i) * C(budget - 1, i - 1)`.
pub fn plan_count(n_test: usize, budget: u32) -> u128 {
    if budget == 0 {
        return 1;
    }
    let (a, n) = (n_test as u128, u128::from(budget));
    (1..=a.min(n))
        .map(|i| choose(a, i) * choose(n - 1, i - 1))
        .sum()
}

fn compositions(budget: u32, parts: usize, prefix: &mut Vec<u32>, out: &mut Vec<SamplingPlan>) {
    if parts == 1 {
        prefix.push(budget);
        out.push(SamplingPlan::new(prefix.clone()));
        prefix.pop();
        return;
    }
    for k in (0..=budget).rev() {
        prefix.push(k);
        compositions(budget - k, parts - 1, prefix, out);
        prefix.pop();
    }
}

/// Every plan spending exactly `budget` over `n_test` nodes.
pub fn enumerate_plans(n_test: usize, budget: u32, cap: u128) -> Result<Vec<SamplingPlan>> {
    if n_test == 0 {
        return Err(Error::InvalidArgument(
            "a plan needs at least one test node".into(),
        ));
    }
    let count = plan_count(n_test, budget);
    if count > cap {
        return Err(Error::PlanCountExceeded { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    compositions(budget, n_test, &mut Vec::with_capacity(n_test), &mut out);
    Ok(out)
}

/// Best plan spending exactly `budget`, by enumeration.
pub fn exhaustive_best(
    budget: u32,
    oracle: &dyn UtilityOracle,
    cap: u128,
) -> Result<(SamplingPlan, UtilityEstimate)> {
    let plans = enumerate_plans(oracle.n_test(), budget, cap)?;
    let estimates: Vec<UtilityEstimate> = plans
        .par_iter()
        .map(|p| oracle.utility(p))
        .collect::<Result<_>>()?;
    let best = argmax(&estimates);
    Ok((plans[best].clone(), estimates[best].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Concave separable utility for exercising the search logic.
    struct Concave {
        scale: Vec<f64>,
    }

    impl UtilityOracle for Concave {
        fn n_test(&self) -> usize {
            self.scale.len()
        }

        fn utility(&self, plan: &SamplingPlan) -> Result<UtilityEstimate> {
            let mean = plan
                .as_slice()
                .iter()
                .zip(&self.scale)
                .map(|(&n, s)| s * (1.0 + f64::from(n)).ln())
                .sum();
            Ok(UtilityEstimate {
                mean,
                std_error: 0.0,
                ci_low: mean,
                ci_high: mean,
                h1: 0,
                h2: 0,
                seed: 0,
                baseline_expected_loss: 0.0,
            })
        }
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_plan(8, 4).unwrap().as_slice(), &[2, 2, 2, 2]);
        assert_eq!(uniform_plan(9, 4).unwrap().as_slice(), &[3, 2, 2, 2]);
        assert_eq!(uniform_plan(0, 4).unwrap().as_slice(), &[0, 0, 0, 0]);
    }

    #[test]
    fn fixed_examples() {
        let r = SamplingPlan::new(vec![39, 17, 95, 26]);
        assert_eq!(fixed_plan(177, &r).unwrap(), r);
        assert_eq!(fixed_plan(0, &r).unwrap().total(), 0);
        assert_eq!(
            fixed_plan(3, &SamplingPlan::new(vec![1, 1]))
                .unwrap()
                .as_slice(),
            &[2, 1]
        );
        assert!(fixed_plan(3, &SamplingPlan::zeros(2)).is_err());
    }

    #[test]
    fn share_examples() {
        assert_eq!(
            share_plan(8, &[0.5, 0.0, 0.0, 0.5]).unwrap().as_slice(),
            &[4, 0, 0, 4]
        );
        assert_eq!(share_plan(6, &[0.25; 4]).unwrap().as_slice(), &[2, 2, 1, 1]);
        assert_eq!(share_plan(3, &[1.0, 1.0]).unwrap().as_slice(), &[2, 1]);
        assert!(share_plan(3, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn plan_counts() {
        assert_eq!(plan_count(4, 40), 12_341);
        assert_eq!(plan_count(3, 6), 28);
        assert_eq!(plan_count(1, 17), 1);
        assert_eq!(enumerate_plans(3, 6, DEFAULT_PLAN_CAP).unwrap().len(), 28);
        assert_eq!(enumerate_plans(1, 5, DEFAULT_PLAN_CAP).unwrap().len(), 1);
        assert!(matches!(
            enumerate_plans(4, 40, DEFAULT_PLAN_CAP),
            Err(Error::PlanCountExceeded { count: 12_341, .. })
        ));
    }

    #[test]
    fn plan_count_matches_stars_and_bars() {
        for a in 1..6usize {
            for n in 0..15u32 {
                let stars = choose(u128::from(n) + a as u128 - 1, a as u128 - 1);
                assert_eq!(plan_count(a, n), stars, "a={a} n={n}");
                let plans = enumerate_plans(a, n, u128::MAX).unwrap();
                assert_eq!(plans.len() as u128, stars);
                assert!(plans.iter().all(|p| p.total() == n));
            }
        }
    }

    #[test]
    fn savings_examples() {
        let grid: Vec<u32> = (0..=20).map(|k| k * 10).collect();
        let target: Vec<(u32, f64)> = grid.iter().map(|&b| (b, f64::from(b) / 200.0)).collect();
        assert_eq!(
            budget_savings(&target, &target, 100).unwrap(),
            Savings::Samples(0)
        );
        let other: Vec<(u32, f64)> = grid.iter().map(|&b| (b, f64::from(b) / 260.0)).collect();
        assert_eq!(
            budget_savings(&target, &other, 100).unwrap(),
            Savings::Samples(30)
        );
        let capped: Vec<(u32, f64)> = grid
            .iter()
            .map(|&b| (b, (f64::from(b) / 200.0).min(0.4)))
            .collect();
        assert_eq!(
            budget_savings(&target, &capped, 100).unwrap(),
            Savings::NotAttained
        );
        assert!(budget_savings(&target, &other[..5], 100).is_err());
    }

    #[test]
    fn greedy_single_node() {
        let steps = greedy_allocations(30, 10, &Concave { scale: vec![1.0] }).unwrap();
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[2].plan.as_slice(), &[30]);
    }

    #[test]
    fn greedy_nests_and_spends_budget() {
        let oracle = Concave {
            scale: vec![1.0, 2.0, 0.5],
        };
        let steps = greedy_allocations(25, 4, &oracle).unwrap();
        assert_eq!(steps.last().unwrap().budget, 25);
        let mut prev = SamplingPlan::zeros(3);
        for s in &steps {
            assert_eq!(s.plan.total(), s.budget);
            let diffs: Vec<u32> = s
                .plan
                .as_slice()
                .iter()
                .zip(prev.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            assert_eq!(diffs.iter().filter(|&&d| d > 0).count(), 1);
            prev = s.plan.clone();
        }
    }

    #[test]
    fn greedy_ties_go_low() {
        let steps = greedy_allocations(
            1,
            1,
            &Concave {
                scale: vec![1.0, 1.0],
            },
        )
        .unwrap();
        assert_eq!(steps[0].plan.as_slice(), &[1, 0]);
    }

    #[test]
    fn greedy_near_exhaustive_on_concave() {
        let oracle = Concave {
            scale: vec![1.0, 2.0, 0.7],
        };
        let greedy = greedy_allocations(6, 1, &oracle).unwrap();
        let (_, best) = exhaustive_best(6, &oracle, DEFAULT_PLAN_CAP).unwrap();
        let g = greedy.last().unwrap().utility.mean;
        assert!(g >= (1.0 - (-1.0f64).exp()) * best.mean);
        // separable concave objectives are solved exactly by the greedy sweep
        assert!((g - best.mean).abs() < 1e-12);
    }
}
