//! Trajectory CSVs.
//!
//! Dense: header `t,l_1,...,l_N`, one row per step `t = 1..T`.
//! Sparse: header `t,process,loss`, one row per positive loss; the horizon is
//! the largest `t` unless given.

use std::io::{Read, Write};

use super::fmt_num;
use crate::error::{Error, Result};
use crate::model::Trajectory;

pub fn write_trajectory_dense<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = traj.n_processes();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("l_{i}")))
        .collect();
    w.write_record(&header)?;
    for t in 0..traj.horizon() {
        let row: Vec<String> = std::iter::once((t + 1).to_string())
            .chain((0..n).map(|i| fmt_num(traj.get(i, t))))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_sparse<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "process", "loss"])?;
    for t in 0..traj.horizon() {
        for i in 0..traj.n_processes() {
            let l = traj.get(i, t);
            if l > 0.0 {
                w.write_record([(t + 1).to_string(), (i + 1).to_string(), fmt_num(l)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads either layout, chosen by the header. `n_processes` and `horizon`
/// fix the shape of a sparse file; they are checked against a dense one.
pub fn read_trajectory<R: Read>(
    input: R,
    n_processes: Option<usize>,
    horizon: Option<usize>,
) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let traj = if header == ["t", "process", "loss"] {
        read_sparse(r, n_processes, horizon)?
    } else {
        read_dense(r, &header)?
    };
    if let Some(n) = n_processes {
        if traj.n_processes() != n {
            return Err(Error::Dimension(format!(
                "trajectory has {} processes, expected {n}",
                traj.n_processes()
            )));
        }
    }
    if let Some(h) = horizon {
        if traj.horizon() != h {
            return Err(Error::Dimension(format!(
                "trajectory has {} steps, expected {h}",
                traj.horizon()
            )));
        }
    }
    Ok(traj)
}

fn parse_err(line: u64, message: String) -> Error {
    Error::Parse {
        line: line as usize,
        message,
    }
}

fn read_dense<R: Read>(mut r: csv::Reader<R>, header: &[String]) -> Result<Trajectory> {
    let n = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("l_{i}")))
        .collect();
    if n == 0 || header != expected.as_slice() {
        return Err(parse_err(
            1,
            format!("expected header 't,l_1,...,l_N' or 't,process,loss', got '{}'", header.join(",")),
        ));
    }
    let mut columns = vec![Vec::new(); n];
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k as u64 + 2, |p| p.line());
        let t: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("'{}' is not a step index", &rec[0])))?;
        if t != k + 1 {
            return Err(parse_err(line, format!("expected step {}, found {t}", k + 1)));
        }
        for i in 0..n {
            columns[i].push(parse_loss(&rec[i + 1], line)?);
        }
    }
    Trajectory::from_rows(columns)
}

fn parse_loss(tok: &str, line: u64) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| parse_err(line, format!("'{tok}' is not a nonnegative loss")))
}

fn read_sparse<R: Read>(
    mut r: csv::Reader<R>,
    n_processes: Option<usize>,
    horizon: Option<usize>,
) -> Result<Trajectory> {
    let mut entries = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k as u64 + 2, |p| p.line());
        let index = |tok: &str, what: &str| -> Result<usize> {
            tok.parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| parse_err(line, format!("'{tok}' is not a {what} (1-based)")))
        };
        let t = index(&rec[0], "step")?;
        let i = index(&rec[1], "process")?;
        entries.push((line, t, i, parse_loss(&rec[2], line)?));
    }
    let n = n_processes.unwrap_or_else(|| entries.iter().map(|e| e.2).max().unwrap_or(0));
    let horizon = horizon.unwrap_or_else(|| entries.iter().map(|e| e.1).max().unwrap_or(0));
    let mut losses = vec![0.0; n * horizon];
    let mut seen = vec![false; n * horizon];
    for (line, t, i, l) in entries {
        if i > n || t > horizon {
            return Err(parse_err(line, format!("entry (t={t}, process={i}) outside {n}x{horizon}")));
        }
        let k = (i - 1) * horizon + (t - 1);
        if seen[k] {
            return Err(parse_err(line, format!("duplicate entry for t={t}, process={i}")));
        }
        seen[k] = true;
        losses[k] = l;
    }
    Trajectory::new(n, horizon, losses)
}
