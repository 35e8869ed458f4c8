//! Per-step training metrics and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "step,train_loss,val_loss,lr,events";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
    /// `site:action` for every event applied before this step's update.
    pub events: Vec<String>,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(s, "{},{},", self.step, self.train_loss).unwrap();
        if let Some(v) = self.val_loss {
            write!(s, "{v}").unwrap();
        }
        write!(s, ",{},{}", self.lr, self.events.join(";")).unwrap();
        s
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("bad metrics row `{line}`"));
        let f: Vec<&str> = line.splitn(5, ',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(MetricsRecord {
            step: f[0].parse().map_err(|_| bad())?,
            train_loss: num(f[1])?,
            val_loss: if f[2].is_empty() { None } else { Some(num(f[2])?) },
            lr: num(f[3])?,
            events: if f[4].is_empty() {
                Vec::new()
            } else {
                f[4].split(';').map(str::to_string).collect()
            },
        })
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Argument(format!("metrics file must start with `{CSV_HEADER}`"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::parse_row)
        .collect()
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            MetricsRecord {
                step: 0,
                train_loss: 5.5,
                val_loss: None,
                lr: 0.0,
                events: vec![],
            },
            MetricsRecord {
                step: 1,
                train_loss: 0.1 + 0.2,
                val_loss: Some(1.0 / 3.0),
                lr: 6e-4,
                events: vec!["0.ln2:freeze".into(), "lnf:drop_bos".into()],
            },
        ];
        let text = metrics_csv(&recs);
        assert!(text.contains("1,0.30000000000000004,0.3333333333333333,0.0006,0.ln2:freeze;lnf:drop_bos"));
        assert_eq!(parse_metrics_csv(&text).unwrap(), recs);
    }
}
