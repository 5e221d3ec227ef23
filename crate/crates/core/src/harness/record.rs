use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory::TracePoint;

/// First line of every records file.
pub const RECORDS_HEADER: &str = "# diaggeo records v1";

pub const RECORD_COLUMNS: [&str; 16] = [
    "step",
    "loss_bar",
    "E_norm",
    "E_min",
    "E_max",
    "rmed_l1_hess",
    "rmed_l1_closed",
    "rmed_l2_hess",
    "rmed_l2_closed",
    "r_diag_mean",
    "rank1_delta1",
    "rank1_delta2",
    "ru",
    "rv",
    "stable_rank",
    "segment",
];

/// Snapshot of a run at one step. Optional columns are empty in the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: u64,
    pub loss_bar: f64,
    #[serde(rename = "E_norm")]
    pub e_norm: f64,
    #[serde(rename = "E_min")]
    pub e_min: f64,
    #[serde(rename = "E_max")]
    pub e_max: f64,
    pub rmed_l1_hess: Option<f64>,
    pub rmed_l1_closed: Option<f64>,
    pub rmed_l2_hess: Option<f64>,
    pub rmed_l2_closed: Option<f64>,
    pub r_diag_mean: Option<f64>,
    pub rank1_delta1: Option<f64>,
    pub rank1_delta2: Option<f64>,
    pub ru: Option<f64>,
    pub rv: Option<f64>,
    pub stable_rank: Option<f64>,
    pub segment: usize,
}

impl TrajectoryRecord {
    /// Hessian-route value when present, else the closed form.
    pub fn rmed(&self) -> [Option<f64>; 2] {
        [
            self.rmed_l1_hess.or(self.rmed_l1_closed),
            self.rmed_l2_hess.or(self.rmed_l2_closed),
        ]
    }

    pub fn trace_point(&self) -> Option<TracePoint> {
        let [a, b] = self.rmed();
        Some(TracePoint {
            step: self.step,
            loss: self.loss_bar,
            rmed: [a?, b?],
        })
    }
}

pub fn trace(records: &[TrajectoryRecord]) -> Vec<TracePoint> {
    records.iter().filter_map(TrajectoryRecord::trace_point).collect()
}

pub fn write_records<W: Write>(mut out: W, records: &[TrajectoryRecord]) -> Result<()> {
    writeln!(out, "{RECORDS_HEADER}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: BufRead>(mut input: R) -> Result<Vec<TrajectoryRecord>> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != RECORDS_HEADER {
        return Err(Error::InvalidConfig(format!(
            "unsupported records file header {:?}",
            first.trim_end()
        )));
    }
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != RECORD_COLUMNS {
        return Err(Error::InvalidConfig("records file has unexpected columns".into()));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub step: u64,
    pub layer: usize,
    pub rho_g: f64,
    pub rho_adapt: f64,
    pub cv_g: f64,
    pub cv_adapt: f64,
}

pub fn write_alignment<W: Write>(out: W, rows: &[AlignmentRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: u64) -> TrajectoryRecord {
        TrajectoryRecord {
            step,
            loss_bar: 1.5,
            e_norm: 0.25,
            e_min: -0.5,
            e_max: 0.125,
            rmed_l1_hess: Some(1.0 / 3.0),
            rmed_l1_closed: Some(1.0 / 3.0),
            rmed_l2_hess: None,
            rmed_l2_closed: Some(2.0),
            r_diag_mean: None,
            rank1_delta1: None,
            rank1_delta2: None,
            ru: None,
            rv: None,
            stable_rank: None,
            segment: 0,
        }
    }

    #[test]
    fn csv_roundtrip() {
        let recs = vec![rec(0), rec(5)];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(RECORDS_HEADER));
        assert_eq!(lines.next().unwrap(), RECORD_COLUMNS.join(","));
        assert!(lines.next().unwrap().starts_with("0,1.5,0.25,-0.5,0.125,"));
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        assert_eq!(back[0].rmed(), [Some(1.0 / 3.0), Some(2.0)]);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(read_records("step,loss\n1,2\n".as_bytes()).is_err());
    }
}
