//! Delimited text input and output.

use std::io::{Read, Write};
use std::path::Path;

use pmsutil_core::inference::NodeSummary;
use pmsutil_core::{
    Dataset, DrawSet, Error, Network, Result, SamplingPlan, TestRecord, UtilityEstimate,
};

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "positive" => Some(true),
        "0" | "false" | "negative" => Some(false),
        _ => None,
    }
}

/// Reads test records. Sensitivity and specificity columns are optional; blank
/// or missing values take the given defaults.
pub fn parse_records<R: Read>(input: R, default_s: f64, default_r: f64) -> Result<Dataset> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let need = |name: &str| {
        column(&headers, name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (ti, si, ri) = (need("test_node")?, need("supply_node")?, need("result")?);
    let (sens_i, spec_i) = (
        column(&headers, "sensitivity"),
        column(&headers, "specificity"),
    );
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        let field = |i: usize, name: &str| {
            row.get(i)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| bad(format!("missing `{name}`")))
        };
        let result = field(ri, "result")?;
        let result = parse_bool(result)
            .ok_or_else(|| bad(format!("result must be 0 or 1, got `{result}`")))?;
        let prob = |idx: Option<usize>, name: &str, default: f64| -> Result<f64> {
            match idx.and_then(|i| row.get(i)).filter(|s| !s.is_empty()) {
                None => Ok(default),
                Some(raw) => raw.parse().map_err(|_| bad(format!("bad {name} `{raw}`"))),
            }
        };
        let s = prob(sens_i, "sensitivity", default_s)?;
        let r = prob(spec_i, "specificity", default_r)?;
        let rec = TestRecord::new(
            field(ti, "test_node")?,
            field(si, "supply_node")?,
            result,
            s,
            r,
        )
        .map_err(|e| bad(e.to_string()))?;
        records.push(rec);
    }
    Ok(Dataset::new(records))
}

pub fn read_records(path: &Path, default_s: f64, default_r: f64) -> Result<Dataset> {
    parse_records(std::fs::File::open(path)?, default_s, default_r)
}

pub fn write_records<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "test_node",
        "supply_node",
        "result",
        "sensitivity",
        "specificity",
    ])
    .map_err(csv_error)?;
    for r in &data.records {
        w.write_record([
            r.test_node.clone(),
            r.supply_node.clone(),
            u8::from(r.result).to_string(),
            r.sensitivity.to_string(),
            r.specificity.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn node_ids(network: &Network) -> Vec<String> {
    (0..network.node_count())
        .map(|g| network.node_id(g).to_string())
        .collect()
}

/// One row per draw, one column per node.
pub fn write_draws<W: Write>(out: W, draws: &DrawSet, network: &Network) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(node_ids(network)).map_err(csv_error)?;
    for i in 0..draws.len() {
        w.write_record(draws.row(i).iter().map(|x| x.to_string()))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, summaries: &[NodeSummary], network: &Network) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "echelon", "mean", "q05", "median", "q95"])
        .map_err(csv_error)?;
    for (g, s) in summaries.iter().enumerate() {
        let echelon = if g < network.n_test() {
            "test"
        } else {
            "supply"
        };
        w.write_record([
            network.node_id(g).to_string(),
            echelon.to_string(),
            s.mean.to_string(),
            s.q05.to_string(),
            s.median.to_string(),
            s.q95.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// A named plan shape: one nonnegative share per test node.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedShares {
    pub name: String,
    pub shares: Vec<f64>,
}

/// Reads a plans file with header `plan,<test node ids>`, reordering columns
/// to the network's test-node order.
pub fn parse_plans<R: Read>(input: R, network: &Network) -> Result<Vec<NamedShares>> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.get(0).map(str::to_ascii_lowercase).as_deref() != Some("plan") {
        return Err(Error::Parse {
            line: 1,
            message: "plans file must start with a `plan` column".into(),
        });
    }
    let ids: Vec<&str> = headers.iter().skip(1).collect();
    let mut index = Vec::with_capacity(network.n_test());
    for id in network.test_nodes() {
        index.push(
            ids.iter()
                .position(|h| h == id)
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("plans file has no column for test node `{id}`"),
                })?,
        );
    }
    if let Some(extra) = ids.iter().find(|h| network.test_index(h).is_none()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("plans file names unknown test node `{extra}`"),
        });
    }
    let mut plans = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let name = row.get(0).unwrap_or("").to_string();
        if row.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!(
                    "plan `{name}` has {} values for {} test nodes",
                    row.len() - 1,
                    ids.len()
                ),
            });
        }
        let raw: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Parse {
                line,
                message: format!("plan `{name}` has a negative or non-numeric share"),
            })?;
        plans.push(NamedShares {
            name,
            shares: index.iter().map(|&k| raw[k]).collect(),
        });
    }
    Ok(plans)
}

pub fn read_plans(path: &Path, network: &Network) -> Result<Vec<NamedShares>> {
    parse_plans(std::fs::File::open(path)?, network)
}

/// One sensitivity scenario; `None` keeps the configured value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridRow {
    pub underestimation_v: Option<f64>,
    pub weight_slope_m: Option<f64>,
    pub prior_variance_nu: Option<f64>,
    pub sourcing_seed: Option<u64>,
}

pub const GRID_COLUMNS: [&str; 4] = [
    "underestimation_v",
    "weight_slope_m",
    "prior_variance_nu",
    "sourcing_seed",
];

pub fn parse_grid<R: Read>(input: R) -> Result<Vec<GridRow>> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    for h in headers.iter() {
        if !GRID_COLUMNS.contains(&h) {
            return Err(Error::Parse {
                line: 1,
                message: format!("unknown grid column `{h}`"),
            });
        }
    }
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let cell = |name: &str| {
            column(&headers, name)
                .and_then(|i| row.get(i))
                .filter(|s| !s.is_empty())
        };
        fn num<T: std::str::FromStr>(
            raw: Option<&str>,
            name: &str,
            line: usize,
        ) -> Result<Option<T>> {
            raw.map(|x| {
                x.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad {name} `{x}`"),
                })
            })
            .transpose()
        }
        rows.push(GridRow {
            underestimation_v: num(cell("underestimation_v"), "underestimation_v", line)?,
            weight_slope_m: num(cell("weight_slope_m"), "weight_slope_m", line)?,
            prior_variance_nu: num(cell("prior_variance_nu"), "prior_variance_nu", line)?,
            sourcing_seed: num(cell("sourcing_seed"), "sourcing_seed", line)?,
        });
    }
    Ok(rows)
}

pub fn read_grid(path: &Path) -> Result<Vec<GridRow>> {
    parse_grid(std::fs::File::open(path)?)
}

/// Plan table with rows `budget,node,allocation`.
pub fn write_plan_table<W: Write>(
    out: W,
    plans: &[(u32, SamplingPlan)],
    network: &Network,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["budget", "node", "allocation"])
        .map_err(csv_error)?;
    for (budget, plan) in plans {
        for (a, id) in network.test_nodes().iter().enumerate() {
            w.write_record([budget.to_string(), id.clone(), plan.get(a).to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_plan_table`]; budgets keep file order.
pub fn parse_plan_table<R: Read>(input: R, network: &Network) -> Result<Vec<(u32, SamplingPlan)>> {
    let mut rdr = reader(input);
    rdr.headers().map_err(csv_error)?;
    let mut out: Vec<(u32, Vec<u32>)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        if row.len() != 3 {
            return Err(bad("expected `budget,node,allocation`".into()));
        }
        let budget: u32 = row[0]
            .parse()
            .map_err(|_| bad(format!("bad budget `{}`", &row[0])))?;
        let a = network
            .test_index(&row[1])
            .ok_or_else(|| bad(format!("unknown test node `{}`", &row[1])))?;
        let alloc: u32 = row[2]
            .parse()
            .map_err(|_| bad(format!("bad allocation `{}`", &row[2])))?;
        let pos = match out.iter().position(|(b, _)| *b == budget) {
            Some(p) => p,
            None => {
                out.push((budget, vec![0; network.n_test()]));
                out.len() - 1
            }
        };
        out[pos].1[a] = alloc;
    }
    Ok(out
        .into_iter()
        .map(|(b, v)| (b, SamplingPlan::new(v)))
        .collect())
}

/// Utility curve with rows `budget,mean,ci_low,ci_high`.
pub fn write_curve<W: Write>(out: W, curve: &[(u32, UtilityEstimate)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["budget", "mean", "ci_low", "ci_high"])
        .map_err(csv_error)?;
    for (b, u) in curve {
        w.write_record([
            b.to_string(),
            u.mean.to_string(),
            u.ci_low.to_string(),
            u.ci_high.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes rows of already-formatted cells under `header`.
pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
