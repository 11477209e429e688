//! Trace and summary writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use erdispatch_core::SimulationTrace;
use serde::Serialize;

/// Column names of `trace.csv` for `n` ICUs, in file order.
pub fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["round".to_string()];
    for prefix in ["lambda", "p", "mismatch_est"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(
        [
            "p_mg",
            "mode",
            "total_supply",
            "total_demand",
            "total_loss",
            "est_total_mismatch",
            "real_total_mismatch",
        ]
        .map(String::from),
    );
    h
}

/// One row per round. Floats use the shortest representation that parses back exactly.
pub fn write_trace_csv_to<W: Write>(trace: &SimulationTrace, out: W) -> Result<()> {
    let n = trace.n_icus();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(n))?;
    let mut row: Vec<String> = Vec::with_capacity(3 * n + 8);
    for rec in &trace.records {
        row.clear();
        row.push(rec.round.to_string());
        row.extend(rec.agents.iter().map(|a| a.lambda.to_string()));
        row.extend(rec.agents.iter().map(|a| a.power.to_string()));
        row.extend(rec.agents.iter().map(|a| a.mismatch_est.to_string()));
        row.push(rec.er.p_mg.to_string());
        row.push((rec.er.mode.g() as u8).to_string());
        let ag = &rec.aggregates;
        for x in [
            ag.total_supply,
            ag.total_demand,
            ag.total_loss,
            ag.est_total_mismatch,
            ag.real_total_mismatch,
        ] {
            row.push(x.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(trace: &SimulationTrace, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trace_csv_to(trace, BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))
}

/// Long format for plotting tools: `round, quantity, bus, value`; `bus` is empty for
/// network-wide quantities.
pub fn write_trace_long_csv(trace: &SimulationTrace, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(["round", "quantity", "bus", "value"])?;
    for rec in &trace.records {
        let k = rec.round.to_string();
        for (i, a) in rec.agents.iter().enumerate() {
            let bus = (i + 1).to_string();
            for (q, v) in [("lambda", a.lambda), ("p", a.power), ("mismatch_est", a.mismatch_est)] {
                w.write_record([k.as_str(), q, bus.as_str(), v.to_string().as_str()])?;
            }
        }
        let ag = &rec.aggregates;
        for (q, v) in [
            ("p_mg", rec.er.p_mg),
            ("total_supply", ag.total_supply),
            ("total_demand", ag.total_demand),
            ("total_loss", ag.total_loss),
            ("est_total_mismatch", ag.est_total_mismatch),
            ("real_total_mismatch", ag.real_total_mismatch),
        ] {
            w.write_record([k.as_str(), q, "", v.to_string().as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).with_context(|| format!("writing {}", path.display()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
