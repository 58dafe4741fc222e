//! Subcommand implementations.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use pmsutil_core::inference::summarize;
use pmsutil_core::planner::{
    budget_savings, fixed_plan, greedy_allocations, share_plan, uniform_plan, GreedyStep, Savings,
};
use pmsutil_core::rng::derive_seed;
use pmsutil_core::utility::{plan_utility_mcmc, FastUtility, Scenario};
use pmsutil_core::{
    sample_posterior, Dataset, Error, Network, Result, SamplingPlan, UtilityEstimate,
};

use crate::config::Config;
use crate::io;

/// Configuration, records and network of one run.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub config: Config,
    pub data: Dataset,
    pub network: Network,
}

impl Inputs {
    pub fn load(data_path: &Path, config_path: &Path) -> Result<Self> {
        let config = Config::load(config_path)?;
        let data = io::read_records(data_path, config.sensitivity, config.specificity)?;
        let network = config.network(&data)?;
        data.resolve(&network)?;
        Ok(Self {
            config,
            data,
            network,
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Posterior draws and per-node summaries written to `out_dir`.
pub fn cmd_infer(data_path: &Path, config_path: &Path, out_dir: &Path) -> Result<()> {
    let inp = Inputs::load(data_path, config_path)?;
    let prior = inp.config.prior(&inp.network)?;
    let draws = sample_posterior(
        &inp.data,
        &inp.network,
        &prior,
        inp.config.h1,
        inp.config.seed,
    )?;
    fs::create_dir_all(out_dir)?;
    io::write_draws(create(&out_dir.join("draws.csv"))?, &draws, &inp.network)?;
    io::write_summary(
        create(&out_dir.join("summary.csv"))?,
        &summarize(&draws),
        &inp.network,
    )?;
    log::info!("wrote {} draws to {}", draws.len(), out_dir.display());
    Ok(())
}

fn fmt_estimate(u: &UtilityEstimate) -> [String; 3] {
    [
        u.mean.to_string(),
        u.ci_low.to_string(),
        u.ci_high.to_string(),
    ]
}

/// Utility of every named plan over the configured budget grid.
pub fn cmd_utility(
    data_path: &Path,
    config_path: &Path,
    plans_path: &Path,
    out: &Path,
    oracle: bool,
) -> Result<()> {
    let inp = Inputs::load(data_path, config_path)?;
    let cfg = &inp.config;
    let plans = io::read_plans(plans_path, &inp.network)?;
    let prior = cfg.prior(&inp.network)?;
    let sourcing = cfg.sourcing(&inp.data, &inp.network)?;
    let spec = cfg.loss_spec(&inp.network, &sourcing)?;
    let settings = cfg.settings();
    let scenario = Scenario {
        existing: &inp.data,
        network: &inp.network,
        prior: &prior,
        sourcing: &sourcing,
        spec: &spec,
    };
    let fast = if oracle {
        None
    } else {
        Some(FastUtility::prepare(&scenario, &settings)?)
    };
    let mut rows = Vec::new();
    for named in &plans {
        for &budget in &cfg.budget_grid()? {
            let plan = share_plan(budget, &named.shares)
                .map_err(|e| Error::Config(format!("plan `{}`: {e}", named.name)))?;
            let u = match &fast {
                Some(f) => f.utility(&plan)?,
                None => plan_utility_mcmc(&scenario, &plan, &settings)?,
            };
            let mut row = vec![named.name.clone(), budget.to_string()];
            row.extend(fmt_estimate(&u));
            rows.push(row);
        }
    }
    let header: Vec<String> = ["plan", "budget", "mean", "ci_low", "ci_high"]
        .map(String::from)
        .into();
    io::write_table(create(out)?, &header, &rows)
}

/// Greedy allocations with uniform and fixed baselines on one budget grid.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub greedy: Vec<GreedyStep>,
    pub greedy_curve: Vec<(u32, UtilityEstimate)>,
    pub uniform_curve: Vec<(u32, UtilityEstimate)>,
    pub fixed_curve: Vec<(u32, UtilityEstimate)>,
    pub savings_at: u32,
    pub savings_uniform: Savings,
    pub savings_fixed: Savings,
}

impl PolicyRun {
    pub fn final_step(&self) -> &GreedyStep {
        self.greedy
            .last()
            .expect("greedy sweep has at least one step")
    }
}

fn means(curve: &[(u32, UtilityEstimate)]) -> Vec<(u32, f64)> {
    curve.iter().map(|(b, u)| (*b, u.mean)).collect()
}

pub fn run_policies(cfg: &Config, data: &Dataset, network: &Network) -> Result<PolicyRun> {
    let prior = cfg.prior(network)?;
    let sourcing = cfg.sourcing(data, network)?;
    let spec = cfg.loss_spec(network, &sourcing)?;
    let scenario = Scenario {
        existing: data,
        network,
        prior: &prior,
        sourcing: &sourcing,
        spec: &spec,
    };
    let fast = FastUtility::prepare(&scenario, &cfg.settings())?;
    let greedy = greedy_allocations(cfg.budget, cfg.interval, &fast)?;
    let zero = fast.utility(&SamplingPlan::zeros(network.n_test()))?;
    let mut greedy_curve = vec![(0, zero)];
    greedy_curve.extend(greedy.iter().map(|s| (s.budget, s.utility.clone())));
    let reference = cfg.fixed_reference(data, network)?;
    let curve =
        |make: &dyn Fn(u32) -> Result<SamplingPlan>| -> Result<Vec<(u32, UtilityEstimate)>> {
            greedy_curve
                .iter()
                .map(|(b, _)| Ok((*b, fast.utility(&make(*b)?)?)))
                .collect()
        };
    let uniform_curve = curve(&|b| uniform_plan(b, network.n_test()))?;
    let fixed_curve = curve(&|b| fixed_plan(b, &reference))?;
    let savings_at = cfg.savings_at.unwrap_or(cfg.budget);
    let target = means(&greedy_curve);
    Ok(PolicyRun {
        savings_uniform: budget_savings(&target, &means(&uniform_curve), savings_at)?,
        savings_fixed: budget_savings(&target, &means(&fixed_curve), savings_at)?,
        greedy,
        greedy_curve,
        uniform_curve,
        fixed_curve,
        savings_at,
    })
}

fn write_run(dir: &Path, run: &PolicyRun, network: &Network) -> Result<()> {
    fs::create_dir_all(dir)?;
    let plans: Vec<(u32, SamplingPlan)> = run
        .greedy
        .iter()
        .map(|s| (s.budget, s.plan.clone()))
        .collect();
    io::write_plan_table(
        create(&dir.join("allocations_greedy.csv"))?,
        &plans,
        network,
    )?;
    io::write_curve(create(&dir.join("curve_greedy.csv"))?, &run.greedy_curve)?;
    io::write_curve(create(&dir.join("curve_uniform.csv"))?, &run.uniform_curve)?;
    io::write_curve(create(&dir.join("curve_fixed.csv"))?, &run.fixed_curve)?;
    let header: Vec<String> = ["policy", "at_budget", "extra_samples"]
        .map(String::from)
        .into();
    let rows = vec![
        vec![
            "uniform".into(),
            run.savings_at.to_string(),
            run.savings_uniform.to_string(),
        ],
        vec![
            "fixed".into(),
            run.savings_at.to_string(),
            run.savings_fixed.to_string(),
        ],
    ];
    io::write_table(create(&dir.join("savings.csv"))?, &header, &rows)
}

fn alloc_header(network: &Network) -> Vec<String> {
    network
        .test_nodes()
        .iter()
        .map(|id| format!("alloc_{id}"))
        .collect()
}

/// Greedy plan, baseline curves and savings; with `replications > 1` each
/// replication gets its own seed and subdirectory plus a summary table.
pub fn cmd_plan(
    data_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    replications: usize,
) -> Result<()> {
    let inp = Inputs::load(data_path, config_path)?;
    if replications <= 1 {
        let run = run_policies(&inp.config, &inp.data, &inp.network)?;
        return write_run(out_dir, &run, &inp.network);
    }
    let mut header: Vec<String> = ["replication", "seed", "budget", "mean", "ci_low", "ci_high"]
        .map(String::from)
        .into();
    header.extend(alloc_header(&inp.network));
    let mut rows = Vec::new();
    for r in 0..replications {
        let mut cfg = inp.config.clone();
        cfg.seed = derive_seed(inp.config.seed, r as u64);
        let run = run_policies(&cfg, &inp.data, &inp.network)?;
        write_run(
            &out_dir.join(format!("replication_{r}")),
            &run,
            &inp.network,
        )?;
        let last = run.final_step();
        let mut row = vec![r.to_string(), cfg.seed.to_string(), last.budget.to_string()];
        row.extend(fmt_estimate(&last.utility));
        row.extend(last.plan.as_slice().iter().map(u32::to_string));
        rows.push(row);
    }
    io::write_table(create(&out_dir.join("replications.csv"))?, &header, &rows)
}

/// One row of final allocations and savings per grid scenario.
pub fn cmd_sensitivity(
    data_path: &Path,
    config_path: &Path,
    grid_path: &Path,
    out: &Path,
) -> Result<()> {
    let inp = Inputs::load(data_path, config_path)?;
    let grid = io::read_grid(grid_path)?;
    let mut header: Vec<String> = std::iter::once("scenario")
        .chain(io::GRID_COLUMNS)
        .map(String::from)
        .collect();
    header.extend(alloc_header(&inp.network));
    header.extend(
        [
            "budget",
            "utility",
            "savings_at",
            "savings_uniform",
            "savings_fixed",
        ]
        .map(String::from),
    );
    let mut rows = Vec::new();
    for (k, scenario) in grid.iter().enumerate() {
        let mut cfg = inp.config.clone();
        if let Some(v) = scenario.underestimation_v {
            cfg.underestimation_v = v;
        }
        if let Some(m) = scenario.weight_slope_m {
            cfg.weight_slope_m = m;
        }
        if let Some(nu) = scenario.prior_variance_nu {
            cfg.prior_variance_nu = nu;
        }
        if let Some(s) = scenario.sourcing_seed {
            cfg.sourcing_seed = Some(s);
        }
        let run = run_policies(&cfg, &inp.data, &inp.network)?;
        let last = run.final_step();
        let mut row = vec![
            k.to_string(),
            cfg.underestimation_v.to_string(),
            cfg.weight_slope_m.to_string(),
            cfg.prior_variance_nu.to_string(),
            cfg.sourcing_seed.unwrap_or(cfg.seed).to_string(),
        ];
        row.extend(last.plan.as_slice().iter().map(u32::to_string));
        row.extend([
            last.budget.to_string(),
            last.utility.mean.to_string(),
            run.savings_at.to_string(),
            run.savings_uniform.to_string(),
            run.savings_fixed.to_string(),
        ]);
        rows.push(row);
    }
    io::write_table(create(out)?, &header, &rows)
}
