use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::{read_records, trace, TrajectoryRecord};
use crate::theory::equal_loss_pairs;

/// A finished run loaded back from its directory.
#[derive(Debug, Clone)]
pub struct RunData {
    pub config: ExperimentConfig,
    pub records: Vec<TrajectoryRecord>,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    let records = read_records(BufReader::new(fs::File::open(dir.join("records.csv"))?))?;
    Ok(RunData { config, records })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub level: f64,
    pub t_a: u64,
    pub t_b: u64,
    pub rmed_a: [f64; 2],
    pub rmed_b: [f64; 2],
    /// `rmed_a / rmed_b` per layer.
    pub ratio: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub d: usize,
    pub rows: Vec<ComparisonRow>,
    pub notes: Vec<String>,
}

/// `{d/2, d/10, d/100}`.
pub fn default_levels(d: usize) -> Vec<f64> {
    let d = d as f64;
    vec![d / 2.0, d / 10.0, d / 100.0]
}

/// Matches the runs at each loss level and reports the `R_med` ratios.
pub fn compare_runs(a: &RunData, b: &RunData, levels: &[f64]) -> Result<ComparisonTable> {
    let (da, db) = (a.config.problem.d, b.config.problem.d);
    if da != db || a.config.network.depth != b.config.network.depth {
        return Err(Error::IncompatibleRuns(format!(
            "d = {da} (depth {}) vs d = {db} (depth {})",
            a.config.network.depth, b.config.network.depth
        )));
    }
    let table = equal_loss_pairs(&trace(&a.records), &trace(&b.records), levels);
    let rows: Vec<ComparisonRow> = table
        .pairs
        .iter()
        .map(|p| ComparisonRow {
            level: p.level,
            t_a: p.t_a,
            t_b: p.t_b,
            rmed_a: p.rmed_a,
            rmed_b: p.rmed_b,
            ratio: [p.rmed_a[0] / p.rmed_b[0], p.rmed_a[1] / p.rmed_b[1]],
        })
        .collect();
    let mut notes = table.notes;
    if rows.is_empty() {
        notes.push("no loss level was reached by both runs".into());
    }
    Ok(ComparisonTable { d: da, rows, notes })
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12} {:>8} {:>8} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9}",
            "level", "t_a", "t_b", "a_l1", "a_l2", "b_l1", "b_l2", "ratio_l1", "ratio_l2"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>12.4} {:>8} {:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9.3} {:>9.3}",
                r.level, r.t_a, r.t_b, r.rmed_a[0], r.rmed_a[1], r.rmed_b[0], r.rmed_b[1], r.ratio[0], r.ratio[1]
            )?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Preset;
    use crate::harness::run::run_experiment;
    use crate::optim::OptimizerKind;

    fn data(cfg: &ExperimentConfig) -> RunData {
        let out = run_experiment(cfg).unwrap();
        RunData {
            config: out.config,
            records: out.records,
        }
    }

    #[test]
    fn self_comparison_has_unit_ratios() {
        let mut cfg = ExperimentConfig::preset(Preset::Experiment, 8, OptimizerKind::Adam, 1e-2, 1);
        cfg.steps = 3000;
        let run = data(&cfg);
        let table = compare_runs(&run, &run, &default_levels(8)).unwrap();
        assert!(!table.rows.is_empty());
        for r in &table.rows {
            assert_eq!(r.ratio, [1.0, 1.0]);
            assert_eq!(r.t_a, r.t_b);
        }
        assert!(table.to_string().contains("ratio_l1"));
    }

    #[test]
    fn disjoint_ranges_give_empty_table() {
        let mut cfg = ExperimentConfig::preset(Preset::Experiment, 8, OptimizerKind::Adam, 1e-2, 1);
        cfg.steps = 2;
        let run = data(&cfg);
        let table = compare_runs(&run, &run, &[1e-9]).unwrap();
        assert!(table.rows.is_empty());
        assert!(table.notes.iter().any(|n| n.contains("no loss level")));
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let mut cfg = ExperimentConfig::preset(Preset::Experiment, 8, OptimizerKind::Adam, 1e-2, 1);
        cfg.steps = 1;
        let a = data(&cfg);
        cfg.problem.d = 4;
        let b = data(&cfg);
        assert!(matches!(compare_runs(&a, &b, &[1.0]), Err(Error::IncompatibleRuns(_))));
    }
}
