//! Loss-database ingestion: timestamped records binned into model steps.
//!
//! Records are CSV with the mandatory header `timestamp,process_id,amount`.
//! Step `t` (1-based) covers `[origin + (t-1) step, origin + t step)`; all
//! amounts of one process falling in one step are summed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, TimeDelta, Utc};

use super::fmt_num;
use crate::error::{Error, Result};
use crate::model::Trajectory;

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub timestamp: DateTime<Utc>,
    pub process_id: String,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningSpec {
    pub step: TimeDelta,
    pub origin: DateTime<Utc>,
}

impl BinningSpec {
    pub fn new(step: TimeDelta, origin: DateTime<Utc>) -> Result<Self> {
        if step <= TimeDelta::zero() {
            return Err(Error::InvalidValue("step length must be positive".into()));
        }
        Ok(Self { step, origin })
    }

    /// Zero-based bin of `ts`, or `None` before the origin.
    pub fn bin(&self, ts: DateTime<Utc>) -> Option<usize> {
        let offset = nanos(ts - self.origin);
        (offset >= 0).then(|| (offset / nanos(self.step)) as usize)
    }

    /// Start of zero-based bin `t`.
    pub fn bin_start(&self, t: usize) -> DateTime<Utc> {
        self.origin + self.step * t as i32
    }
}

fn nanos(d: TimeDelta) -> i128 {
    d.num_seconds() as i128 * 1_000_000_000 + d.subsec_nanos() as i128
}

/// Maps external process identifiers to rows `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessTable {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl ProcessTable {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidValue("process table is empty".into()));
        }
        let mut index = HashMap::new();
        for (k, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::InvalidValue(format!("process id '{id}' listed twice")));
            }
        }
        Ok(Self { ids, index })
    }

    /// Sorted distinct identifiers of `records`.
    pub fn from_records(records: &[LossRecord]) -> Result<Self> {
        let ids: BTreeSet<&str> = records.iter().map(|r| r.process_id.as_str()).collect();
        Self::new(ids.into_iter().map(str::to_string).collect())
    }

    /// `1..=n` as identifiers.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::new((1..=n).map(|i| i.to_string()).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

/// Step lengths like `1d`, `12h`, `30m`, `3600s`, `2w`.
pub fn parse_step(text: &str) -> Result<TimeDelta> {
    let text = text.trim();
    let split = text
        .find(|c: char| !c.is_ascii_digit())
        .ok_or_else(|| Error::InvalidValue(format!("step '{text}' needs a unit (s, m, h, d, w)")))?;
    let (num, unit) = text.split_at(split);
    let n: i64 = num
        .parse()
        .map_err(|_| Error::InvalidValue(format!("step '{text}' has no count")))?;
    let step = match unit {
        "s" => TimeDelta::try_seconds(n),
        "m" => TimeDelta::try_minutes(n),
        "h" => TimeDelta::try_hours(n),
        "d" => TimeDelta::try_days(n),
        "w" => TimeDelta::try_weeks(n),
        _ => None,
    }
    .ok_or_else(|| Error::InvalidValue(format!("step '{text}' is not a valid duration")))?;
    if step <= TimeDelta::zero() {
        return Err(Error::InvalidValue("step length must be positive".into()));
    }
    Ok(step)
}

/// RFC 3339, or a naive date / date-time taken as UTC.
pub fn parse_timestamp(text: &str) -> Result<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(text) {
        return Ok(ts.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(ts.and_utc());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc());
    }
    Err(Error::InvalidValue(format!("'{text}' is not an ISO-8601 timestamp")))
}

pub fn read_loss_records<R: Read>(input: R) -> Result<Vec<LossRecord>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["timestamp", "process_id", "amount"] {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header 'timestamp,process_id,amount', got '{}'", header.join(",")),
        });
    }
    let mut records = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(k + 2, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        let timestamp = parse_timestamp(&rec[0]).map_err(|e| bad(e.to_string()))?;
        let amount: f64 = rec[2]
            .parse()
            .ok()
            .filter(|a: &f64| a.is_finite())
            .ok_or_else(|| bad(format!("amount '{}' is not a number", &rec[2])))?;
        records.push(LossRecord {
            timestamp,
            process_id: rec[1].to_string(),
            amount,
        });
    }
    Ok(records)
}

pub fn write_loss_records<W: Write>(out: W, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "process_id", "amount"])?;
    for r in records {
        w.write_record([
            r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
            r.process_id.clone(),
            fmt_num(r.amount),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Bins `records` into a trajectory whose horizon is the last nonempty bin.
/// The result does not depend on record order.
pub fn ingest(records: &[LossRecord], spec: &BinningSpec, table: &ProcessTable) -> Result<Trajectory> {
    if records.is_empty() {
        return Err(Error::Ingest("empty database".into()));
    }
    let unknown: BTreeSet<&str> = records
        .iter()
        .filter(|r| table.get(&r.process_id).is_none())
        .map(|r| r.process_id.as_str())
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Ingest(format!(
            "unknown process ids: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in records {
        if !(r.amount > 0.0) {
            return Err(Error::Ingest(format!(
                "non-positive amount {} for process '{}' at {}",
                r.amount, r.process_id, r.timestamp
            )));
        }
        let bin = spec.bin(r.timestamp).ok_or_else(|| {
            Error::Ingest(format!("record at {} precedes the origin {}", r.timestamp, spec.origin))
        })?;
        let i = table.get(&r.process_id).expect("checked above");
        cells.entry((i, bin)).or_default().push(r.amount);
    }
    let horizon = cells.keys().map(|&(_, t)| t + 1).max().expect("nonempty");
    let n = table.len();
    let mut losses = vec![0.0; n * horizon];
    for ((i, t), mut amounts) in cells {
        amounts.sort_by(f64::total_cmp);
        losses[i * horizon + t] = amounts.iter().sum();
    }
    Trajectory::new(n, horizon, losses)
}

/// One record per positive loss, stamped at the start of its bin.
pub fn export_records(traj: &Trajectory, spec: &BinningSpec, table: &ProcessTable) -> Result<Vec<LossRecord>> {
    if table.len() != traj.n_processes() {
        return Err(Error::Dimension(format!(
            "process table has {} ids for {} processes",
            table.len(),
            traj.n_processes()
        )));
    }
    let mut out = Vec::new();
    for t in 0..traj.horizon() {
        for i in 0..traj.n_processes() {
            let amount = traj.get(i, t);
            if amount > 0.0 {
                out.push(LossRecord {
                    timestamp: spec.bin_start(t),
                    process_id: table.ids()[i].clone(),
                    amount,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> DateTime<Utc> {
        parse_timestamp(s).unwrap()
    }

    fn record(t: &str, id: &str, amount: f64) -> LossRecord {
        LossRecord {
            timestamp: ts(t),
            process_id: id.into(),
            amount,
        }
    }

    fn daily() -> BinningSpec {
        BinningSpec::new(TimeDelta::days(1), ts("2020-01-01")).unwrap()
    }

    #[test]
    fn same_bin_amounts_are_summed() {
        let records = [
            record("2020-01-02T03:00:00Z", "a", 1.5),
            record("2020-01-02T23:59:59Z", "a", 2.0),
        ];
        let table = ProcessTable::from_records(&records).unwrap();
        let t = ingest(&records, &daily(), &table).unwrap();
        assert_eq!(t.horizon(), 2);
        assert_eq!(t.row(0), &[0.0, 3.5]);
    }

    #[test]
    fn bins_are_half_open() {
        let records = [record("2020-01-01T00:00:00Z", "a", 1.0), record("2020-01-02T00:00:00Z", "a", 2.0)];
        let t = ingest(&records, &daily(), &ProcessTable::new(vec!["a".into()]).unwrap()).unwrap();
        assert_eq!(t.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn ingestion_errors() {
        let table = ProcessTable::new(vec!["a".into()]).unwrap();
        let err = ingest(&[], &daily(), &table).unwrap_err();
        assert!(err.to_string().contains("empty database"));
        let err = ingest(
            &[record("2020-01-01", "b", 1.0), record("2020-01-01", "c", 1.0), record("2020-01-01", "b", 1.0)],
            &daily(),
            &table,
        )
        .unwrap_err();
        assert!(err.to_string().contains("b, c"), "{err}");
        assert!(ingest(&[record("2020-01-01", "a", 0.0)], &daily(), &table).is_err());
        assert!(ingest(&[record("2020-01-01", "a", -1.0)], &daily(), &table).is_err());
        assert!(ingest(&[record("2019-12-31", "a", 1.0)], &daily(), &table).is_err());
    }

    #[test]
    fn one_record_per_bin_is_identity() {
        let spec = BinningSpec::new(TimeDelta::hours(6), ts("2021-03-01T00:00:00Z")).unwrap();
        let traj = Trajectory::from_rows(vec![vec![1.0, 0.0, 2.5], vec![0.0, 0.25, 4.0]]).unwrap();
        let table = ProcessTable::numbered(2).unwrap();
        let records = export_records(&traj, &spec, &table).unwrap();
        assert_eq!(ingest(&records, &spec, &table).unwrap(), traj);
        let mut buf = Vec::new();
        write_loss_records(&mut buf, &records).unwrap();
        assert_eq!(read_loss_records(&buf[..]).unwrap(), records);
    }

    #[test]
    fn parses_steps_and_timestamps() {
        assert_eq!(parse_step("1d").unwrap(), TimeDelta::days(1));
        assert_eq!(parse_step("90m").unwrap(), TimeDelta::minutes(90));
        for bad in ["", "d", "0h", "5y", "-1d"] {
            assert!(parse_step(bad).is_err(), "{bad}");
        }
        assert_eq!(ts("2020-01-01T01:00:00+01:00"), ts("2020-01-01T00:00:00Z"));
        assert_eq!(ts("2020-01-01 00:00:00"), ts("2020-01-01"));
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn header_is_mandatory() {
        assert!(read_loss_records("2020-01-01,a,1\n".as_bytes()).is_err());
    }
}
