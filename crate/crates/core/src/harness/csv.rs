use std::path::Path;

use super::run::BenchRow;
use crate::error::{LcdError, Result};

pub const CSV_HEADER: &str = "q,method,replicate,err_F,err_lambda,dag_err,runtime_ms";

/// Rows in order; failures write `NaN` errors and an empty DAG error.
/// Floats use `{:?}`: the shortest string that parses back to the same value, with an exponent
/// for very small or large magnitudes.
pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let dag = r.dag_err.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:?},{:?},{},{:?}\n",
            r.q, r.method, r.replicate, r.err_f, r.err_lambda, dag, r.runtime_ms
        ));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(LcdError::Parse(format!("expected header `{CSV_HEADER}`"))),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |what: &str| LcdError::Parse(format!("line {}: bad {what}", n + 2));
            if fields.len() != 7 {
                return Err(bad("field count"));
            }
            let float = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            Ok(BenchRow {
                q: fields[0].parse().map_err(|_| bad("q"))?,
                method: fields[1].parse().map_err(|_| bad("method"))?,
                replicate: fields[2].parse().map_err(|_| bad("replicate"))?,
                err_f: float(fields[3], "err_F")?,
                err_lambda: float(fields[4], "err_lambda")?,
                dag_err: if fields[5].is_empty() { None } else { Some(fields[5].parse().map_err(|_| bad("dag_err"))?) },
                runtime_ms: float(fields[6], "runtime_ms")?,
            })
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    std::fs::write(path, to_csv(rows))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRow>> {
    parse_csv(&std::fs::read_to_string(path)?)
}
