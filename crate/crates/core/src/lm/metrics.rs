//! Per-epoch metrics log.
//!
//! Tab-separated, version line first, then a column line, then one line per
//! epoch. Floats use the shortest representation that parses back to the
//! same value, so logs of identical runs are byte-identical. `wall_seconds`
//! is `NA` unless wall-time logging is enabled.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const VERSION_LINE: &str = "# ranlab-metrics v1";
pub const COLUMNS: [&str; 7] = [
    "epoch",
    "lr",
    "train_nats",
    "valid_nats",
    "valid_ppl",
    "valid_bpc",
    "wall_seconds",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_nats: f64,
    pub valid_nats: f64,
    pub valid_ppl: f64,
    pub valid_bpc: f64,
    pub wall_seconds: Option<f64>,
}

impl EpochMetrics {
    pub fn to_line(&self) -> String {
        let wall = self.wall_seconds.map_or_else(|| "NA".to_string(), |w| format!("{w:?}"));
        format!(
            "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{wall}",
            self.epoch, self.lr, self.train_nats, self.valid_nats, self.valid_ppl, self.valid_bpc
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() != COLUMNS.len() {
            return Err(Error::Ingestion(format!(
                "metrics line has {} fields, expected {}",
                fields.len(),
                COLUMNS.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| Error::Ingestion(format!("metrics column `{}`: bad value `{}`", COLUMNS[i], fields[i])))
        };
        Ok(EpochMetrics {
            epoch: fields[0]
                .parse()
                .map_err(|_| Error::Ingestion(format!("metrics column `epoch`: bad value `{}`", fields[0])))?,
            lr: num(1)?,
            train_nats: num(2)?,
            valid_nats: num(3)?,
            valid_ppl: num(4)?,
            valid_bpc: num(5)?,
            wall_seconds: if fields[6] == "NA" { None } else { Some(num(6)?) },
        })
    }
}

pub fn header() -> String {
    format!("{VERSION_LINE}\n{}\n", COLUMNS.join("\t"))
}

pub fn format_log(rows: &[EpochMetrics]) -> String {
    let mut out = header();
    for r in rows {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

/// Data rows of a log, skipping the header lines.
pub fn parse_log(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch\t") && !l.trim().is_empty())
        .map(EpochMetrics::parse_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_roundtrip_is_exact() {
        let m = EpochMetrics {
            epoch: 3,
            lr: 0.7 * 0.8,
            train_nats: std::f64::consts::LN_2 / 3.0,
            valid_nats: 1.234_567_890_123_456_7,
            valid_ppl: 1.234_567_890_123_456_7_f64.exp(),
            valid_bpc: 1.234_567_890_123_456_7 / std::f64::consts::LN_2,
            wall_seconds: None,
        };
        let log = format_log(&[m]);
        assert_eq!(parse_log(&log).unwrap(), vec![m]);
        assert!(m.to_line().ends_with("\tNA"));
        assert_eq!(m.to_line().split('\t').count(), COLUMNS.len());
    }
}
