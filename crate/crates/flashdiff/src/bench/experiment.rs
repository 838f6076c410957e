//! Desk-scale analogues of the seven comparison experiments.
//!
//! Every experiment sweeps one knob, runs each driver in its own cell
//! (private chip, deterministic workload), and emits one result row per
//! (driver, sweep point).

use std::collections::BTreeMap;

use crate::bench::harness::{run_cell, CellConfig, DriverKind, WarmupSpec};
use crate::bench::report::ResultRow;
use crate::bench::tpcc::{run_tpcc_cell, TpccConfig};
use crate::bench::workload::WorkloadParams;
use crate::chip::TimingProfile;
use crate::driver::Result;

/// Shared experiment knobs; each experiment derives its sweep from these.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n_blocks: u32,
    pub db_bytes: u64,
    pub seed: u64,
    pub measure_ops: u64,
    pub warmup: WarmupSpec,
    pub timing: TimingProfile,
    pub audit: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_blocks: 256,
            db_bytes: 12 * 1024 * 1024,
            seed: 42,
            measure_ops: 6_000,
            warmup: WarmupSpec::default(),
            timing: TimingProfile::standard(),
            audit: true,
        }
    }
}

impl ExperimentConfig {
    fn workload(&self) -> WorkloadParams {
        WorkloadParams {
            n_updates_till_write: 1,
            pct_changed: 2.0,
            pct_update_ops: 100.0,
            db_bytes: self.db_bytes,
            page_bytes: 2048,
            seed: self.seed,
        }
    }

    fn cell(&self, workload: WorkloadParams) -> CellConfig {
        CellConfig {
            n_blocks: self.n_blocks,
            timing: self.timing,
            workload,
            warmup: self.warmup,
            measure_ops: self.measure_ops,
            audit: self.audit,
            warmup_workload: None,
        }
    }
}

/// The in-place updater needs no warm-up (it never collects garbage) and a
/// short sample is exact, since every update costs the same.
fn tune_for_driver(kind: DriverKind, cell: &mut CellConfig) {
    if kind == DriverKind::Ipu {
        cell.warmup.max_ops = 0;
        cell.measure_ops = cell.measure_ops.min(300);
    }
}

fn row(
    experiment: &str,
    kind: DriverKind,
    variant: &str,
    x_name: &str,
    x_value: f64,
    outcome: &crate::bench::harness::CellOutcome,
) -> ResultRow {
    ResultRow {
        experiment: experiment.to_string(),
        driver: kind.label().to_string(),
        variant: variant.to_string(),
        x_name: x_name.to_string(),
        x_value,
        ops: outcome.ops,
        read_us_per_op: outcome.read_us_per_op(),
        write_us_per_op: outcome.write_us_per_op(),
        gc_us_per_op: outcome.gc_us_per_op(),
        overall_us_per_op: outcome.overall_us_per_op(),
        erases_per_op: outcome.erases_per_op(),
    }
}

fn sweep_cell(
    experiment: &str,
    kind: DriverKind,
    variant: &str,
    x_name: &str,
    x_value: f64,
    cell: CellConfig,
) -> Result<ResultRow> {
    let mut cell = cell;
    tune_for_driver(kind, &mut cell);
    let outcome = run_cell(kind, &cell)?;
    Ok(row(experiment, kind, variant, x_name, x_value, &outcome))
}

/// Read, write, and overall time per update operation.
pub fn exp1(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &kind in drivers {
        rows.push(sweep_cell("exp1", kind, "", "n_updates_till_write", 1.0, cfg.cell(cfg.workload()))?);
    }
    Ok(rows)
}

/// Overall time per update operation as updates-till-write varies.
pub fn exp2(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &kind in drivers {
        for k in 1..=8u32 {
            let workload = WorkloadParams { n_updates_till_write: k, ..cfg.workload() };
            rows.push(sweep_cell("exp2", kind, "", "n_updates_till_write", k as f64, cfg.cell(workload))?);
        }
    }
    Ok(rows)
}

/// Overall time per update operation as the changed fraction varies.
pub fn exp3(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &kind in drivers {
        for &k in &[1u32, 5] {
            for &pct in &[0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
                let workload = WorkloadParams {
                    n_updates_till_write: k,
                    pct_changed: pct,
                    ..cfg.workload()
                };
                let variant = format!("k={k}");
                rows.push(sweep_cell("exp3", kind, &variant, "pct_changed", pct, cfg.cell(workload))?);
            }
        }
    }
    Ok(rows)
}

/// Overall time per operation for mixes of read-only and update operations.
/// Pages are warmed with an update-only stream first, so the read-only
/// points run against previously updated pages.
pub fn exp4(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &kind in drivers {
        for &pct_up in &[0.0, 20.0, 40.0, 60.0, 80.0, 100.0] {
            let workload = WorkloadParams { pct_update_ops: pct_up, ..cfg.workload() };
            let mut cell = cfg.cell(workload);
            cell.warmup_workload = Some(cfg.workload()); // 100% updates
            rows.push(sweep_cell("exp4", kind, "", "pct_update_ops", pct_up, cell)?);
        }
    }
    Ok(rows)
}

/// Overall time per update operation as the flash timing parameters vary.
pub fn exp5(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &kind in drivers {
        for &t_write in &[500u64, 1000] {
            for &t_read in &[10u64, 50, 110, 250, 500, 1000, 1500] {
                let mut sub = cfg.clone();
                sub.timing = TimingProfile { t_read_us: t_read, t_write_us: t_write, t_erase_us: 1500 };
                let variant = format!("t_write={t_write}");
                rows.push(sweep_cell("exp5", kind, &variant, "t_read_us", t_read as f64, sub.cell(sub.workload()))?);
            }
        }
    }
    Ok(rows)
}

/// Erase operations per update operation as updates-till-write varies.
pub fn exp6(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &kind in drivers {
        for k in 1..=8u32 {
            let workload = WorkloadParams { n_updates_till_write: k, ..cfg.workload() };
            rows.push(sweep_cell("exp6", kind, "", "n_updates_till_write", k as f64, cfg.cell(workload))?);
        }
    }
    Ok(rows)
}

/// I/O time per transaction for the TPC-C-like mix as the buffer size varies.
pub fn exp7(drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let tpcc = TpccConfig::from_experiment(cfg);
    let mut rows = Vec::new();
    for &kind in drivers {
        for &buffer_pct in &[0.1, 0.5, 1.0, 5.0, 10.0] {
            let outcome = run_tpcc_cell(kind, &tpcc, buffer_pct)?;
            rows.push(ResultRow {
                experiment: "exp7".to_string(),
                driver: kind.label().to_string(),
                variant: String::new(),
                x_name: "buffer_pct_of_db".to_string(),
                x_value: buffer_pct,
                ops: outcome.txns,
                read_us_per_op: 0.0,
                write_us_per_op: 0.0,
                gc_us_per_op: outcome.gc_us as f64 / outcome.txns as f64,
                overall_us_per_op: outcome.io_us as f64 / outcome.txns as f64,
                erases_per_op: outcome.erases as f64 / outcome.txns as f64,
            });
        }
    }
    Ok(rows)
}

/// Speedup of PDL(256B) over the other drivers at each sweep point of a
/// mixed-workload result set: (x, driver label, overall-time ratio).
pub fn pdl256_speedups(rows: &[ResultRow]) -> Vec<(f64, String, f64)> {
    let mut by_x: BTreeMap<u64, Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        by_x.entry(row.x_value.to_bits()).or_default().push(row);
    }
    let mut out = Vec::new();
    for group in by_x.values() {
        let Some(pdl) = group.iter().find(|r| r.driver == "PDL(256B)") else { continue };
        for row in group {
            if row.driver != "PDL(256B)" {
                out.push((
                    row.x_value,
                    row.driver.clone(),
                    row.overall_us_per_op / pdl.overall_us_per_op,
                ));
            }
        }
    }
    out
}

/// Default driver set per experiment: the in-place updater only appears
/// where its cost model is the point of the comparison.
pub fn default_drivers(exp: u8) -> Vec<DriverKind> {
    match exp {
        1..=3 => DriverKind::all().to_vec(),
        _ => DriverKind::comparison_set().to_vec(),
    }
}

pub fn run_experiment(exp: u8, drivers: &[DriverKind], cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match exp {
        1 => exp1(drivers, cfg),
        2 => exp2(drivers, cfg),
        3 => exp3(drivers, cfg),
        4 => exp4(drivers, cfg),
        5 => exp5(drivers, cfg),
        6 => exp6(drivers, cfg),
        7 => exp7(drivers, cfg),
        _ => panic!("experiment id must be 1..=7"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(driver: &str, x: f64, overall: f64) -> ResultRow {
        ResultRow {
            experiment: "exp4".into(),
            driver: driver.into(),
            variant: String::new(),
            x_name: "pct_update_ops".into(),
            x_value: x,
            ops: 100,
            read_us_per_op: 0.0,
            write_us_per_op: 0.0,
            gc_us_per_op: 0.0,
            overall_us_per_op: overall,
            erases_per_op: 0.0,
        }
    }

    #[test]
    fn speedups_are_ratios_against_pdl256_per_point() {
        let rows = vec![
            row("PDL(256B)", 0.0, 200.0),
            row("OPU", 0.0, 100.0),
            row("PDL(256B)", 100.0, 500.0),
            row("OPU", 100.0, 2000.0),
            row("IPL(18KB)", 100.0, 1500.0),
        ];
        let speedups = pdl256_speedups(&rows);
        assert_eq!(speedups.len(), 3);
        assert_eq!(speedups[0], (0.0, "OPU".to_string(), 0.5));
        assert_eq!(speedups[1], (100.0, "OPU".to_string(), 4.0));
        assert_eq!(speedups[2], (100.0, "IPL(18KB)".to_string(), 3.0));
    }
}
