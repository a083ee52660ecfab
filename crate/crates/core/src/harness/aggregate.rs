//! Replication records, pooled statistics and table emission.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scenario::PolicyValue;

pub const REPLICATION_HEADER: [&str; 8] = [
    "method", "gamma", "n", "link", "rep", "seed", "tau_hat", "tau_true",
];
pub const AGGREGATE_HEADER: [&str; 9] = [
    "method", "gamma", "n", "link", "reps", "rmse", "rmse_se", "bias", "bias_se",
];

const NA: &str = "NA";

/// One estimate from one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub method: String,
    pub gamma: Option<f64>,
    pub n: usize,
    pub link: String,
    pub rep: usize,
    pub seed: u64,
    pub tau_hat: f64,
    pub tau_true: f64,
}

/// Pooled error statistics of one `(method, γ, n, link)` cell.
/// Standard errors are `None` with a single replication.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub gamma: Option<f64>,
    pub n: usize,
    pub link: String,
    pub reps: usize,
    pub rmse: f64,
    pub rmse_se: Option<f64>,
    pub bias: f64,
    pub bias_se: Option<f64>,
}

fn rmse_of(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// `bias = mean(e)`, `bias_se = sd(e)/√R`, `rmse = √mean(e²)` and the
/// delete-one jackknife standard error of the RMSE, for errors
/// `e = τ̂ − τ`.
pub fn error_stats(errors: &[f64]) -> (f64, Option<f64>, f64, Option<f64>) {
    let r = errors.len();
    let bias = errors.iter().sum::<f64>() / r as f64;
    let rmse = rmse_of(errors);
    if r < 2 {
        return (rmse, None, bias, None);
    }
    let var = errors.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / (r - 1) as f64;
    let bias_se = (var / r as f64).sqrt();
    let total_sq: f64 = errors.iter().map(|e| e * e).sum();
    let leave_out: Vec<f64> = errors
        .iter()
        .map(|e| ((total_sq - e * e).max(0.0) / (r - 1) as f64).sqrt())
        .collect();
    let mean_lo = leave_out.iter().sum::<f64>() / r as f64;
    let jack = leave_out
        .iter()
        .map(|v| (v - mean_lo) * (v - mean_lo))
        .sum::<f64>();
    let rmse_se = ((r - 1) as f64 / r as f64 * jack).sqrt();
    (rmse, Some(rmse_se), bias, Some(bias_se))
}

/// Groups rows by `(method, γ, n, link)`. Methods and links keep their order
/// of first appearance; γ and `n` ascend. Within a cell rows are taken in
/// replication order, so the result does not depend on row order.
pub fn aggregate(rows: &[ReplicationRow]) -> Vec<AggregateRow> {
    let mut method_order: HashMap<&str, usize> = HashMap::new();
    let mut link_order: HashMap<&str, usize> = HashMap::new();
    type Key<'a> = (&'a str, Option<u64>, usize, &'a str);
    let mut groups: HashMap<Key<'_>, Vec<&ReplicationRow>> = HashMap::new();
    for row in rows {
        let next = method_order.len();
        method_order.entry(&row.method).or_insert(next);
        let next = link_order.len();
        link_order.entry(&row.link).or_insert(next);
        groups
            .entry((&row.method, row.gamma.map(f64::to_bits), row.n, &row.link))
            .or_default()
            .push(row);
    }
    let mut keys: Vec<Key<'_>> = groups.keys().copied().collect();
    keys.sort_by(|a, b| {
        method_order[a.0]
            .cmp(&method_order[b.0])
            .then(link_order[a.3].cmp(&link_order[b.3]))
            .then(match (a.1, b.1) {
                (Some(x), Some(y)) => f64::from_bits(x).total_cmp(&f64::from_bits(y)),
                (x, y) => x.is_some().cmp(&y.is_some()),
            })
            .then(a.2.cmp(&b.2))
    });
    keys.into_iter()
        .map(|key| {
            let mut cell = groups[&key].clone();
            cell.sort_by_key(|r| (r.rep, r.seed));
            let errors: Vec<f64> = cell.iter().map(|r| r.tau_hat - r.tau_true).collect();
            let (rmse, rmse_se, bias, bias_se) = error_stats(&errors);
            AggregateRow {
                method: key.0.to_string(),
                gamma: key.1.map(f64::from_bits),
                n: key.2,
                link: key.3.to_string(),
                reps: cell.len(),
                rmse,
                rmse_se,
                bias,
                bias_se,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn parse_opt(field: &str, what: &str) -> Result<Option<f64>> {
    if field == NA {
        Ok(None)
    } else {
        parse_field(field, what).map(Some)
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::config(what, format!("cannot parse `{field}`")))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::config(
            "header",
            format!(
                "expected `{}`, found `{}`",
                expected.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

/// Floats are written in Rust's shortest round-trip form, so reading the
/// file back reproduces every value exactly.
pub fn write_replications<W: Write>(rows: &[ReplicationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPLICATION_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            fmt_opt(r.gamma),
            r.n.to_string(),
            r.link.clone(),
            r.rep.to_string(),
            r.seed.to_string(),
            r.tau_hat.to_string(),
            r.tau_true.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_replications<R: Read>(input: R) -> Result<Vec<ReplicationRow>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &REPLICATION_HEADER)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(ReplicationRow {
                method: rec[0].to_string(),
                gamma: parse_opt(&rec[1], "gamma")?,
                n: parse_field(&rec[2], "n")?,
                link: rec[3].to_string(),
                rep: parse_field(&rec[4], "rep")?,
                seed: parse_field(&rec[5], "seed")?,
                tau_hat: parse_field(&rec[6], "tau_hat")?,
                tau_true: parse_field(&rec[7], "tau_true")?,
            })
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            fmt_opt(r.gamma),
            r.n.to_string(),
            r.link.clone(),
            r.reps.to_string(),
            r.rmse.to_string(),
            fmt_opt(r.rmse_se),
            r.bias.to_string(),
            fmt_opt(r.bias_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_aggregate<R: Read>(input: R) -> Result<Vec<AggregateRow>> {
    let mut reader = csv::Reader::from_reader(input);
    check_header(&mut reader, &AGGREGATE_HEADER)?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(AggregateRow {
                method: rec[0].to_string(),
                gamma: parse_opt(&rec[1], "gamma")?,
                n: parse_field(&rec[2], "n")?,
                link: rec[3].to_string(),
                reps: parse_field(&rec[4], "reps")?,
                rmse: parse_field(&rec[5], "rmse")?,
                rmse_se: parse_opt(&rec[6], "rmse_se")?,
                bias: parse_field(&rec[7], "bias")?,
                bias_se: parse_opt(&rec[8], "bias_se")?,
            })
        })
        .collect()
}

fn label(row: &AggregateRow, multiple_links: bool) -> String {
    let mut s = match row.gamma {
        Some(g) => format!("{} (γ = {g})", row.method),
        None => row.method.clone(),
    };
    if multiple_links {
        let _ = write!(s, " [{}]", row.link);
    }
    s
}

fn cell(value: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!("{value:.3} ± {se:.3}"),
        None => format!("{value:.3}"),
    }
}

/// Markdown tables of RMSE and bias: one row per method and γ, one column
/// per sample size.
pub fn markdown_tables(
    rows: &[AggregateRow],
    truth: Option<&PolicyValue>,
    config: Option<&str>,
) -> String {
    let mut out = String::from("# Policy evaluation results\n\n");
    if let Some(t) = truth {
        let _ = writeln!(
            out,
            "True policy value: {:.4} ± {:.4} ({} oracle draws).\n",
            t.tau, t.se, t.samples
        );
    }
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.n).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let multiple_links = rows.iter().any(|r| r.link != rows[0].link);
    let mut labels: Vec<String> = Vec::new();
    for r in rows {
        let l = label(r, multiple_links);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let lookup: HashMap<(String, usize), &AggregateRow> = rows
        .iter()
        .map(|r| ((label(r, multiple_links), r.n), r))
        .collect();
    let reps = rows.first().map_or(0, |r| r.reps);
    for (title, pick) in [
        (
            "RMSE",
            (|r: &AggregateRow| (r.rmse, r.rmse_se)) as fn(&AggregateRow) -> (f64, Option<f64>),
        ),
        ("Bias", |r: &AggregateRow| (r.bias, r.bias_se)),
    ] {
        let _ = writeln!(out, "## {title} ({reps} replications, ± standard error)\n");
        out.push_str("| Method |");
        for n in &sizes {
            let _ = write!(out, " n = {n} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(sizes.len()));
        out.push('\n');
        for l in &labels {
            let _ = write!(out, "| {l} |");
            for n in &sizes {
                match lookup.get(&(l.clone(), *n)) {
                    Some(r) => {
                        let (v, se) = pick(r);
                        let _ = write!(out, " {} |", cell(v, se));
                    }
                    None => out.push_str(" |"),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    if let Some(cfg) = config {
        out.push_str("## Configuration\n\n```text\n");
        out.push_str(cfg);
        if !cfg.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("```\n");
    }
    out
}
