//! Execution engine: drives one (driver, workload) cell, attributing
//! simulated time to read and write phases and auditing driver behavior
//! against an in-memory shadow of every logical page.

use crate::baseline::{IplDriver, IplLayout, IpuDriver, OpuDriver};
use crate::bench::workload::{apply_changes, Workload, WorkloadOp, WorkloadParams};
use crate::chip::{FlashChip, FlashGeometry, TimingProfile};
use crate::driver::{DriverError, PageDriver, Result};
use crate::pdl::{PdlConfig, PdlDriver};

/// The six page-update methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverKind {
    Pdl256,
    Pdl2k,
    Opu,
    Ipu,
    Ipl18,
    Ipl64,
}

impl DriverKind {
    pub fn all() -> [DriverKind; 6] {
        [
            DriverKind::Ipl64,
            DriverKind::Ipl18,
            DriverKind::Pdl2k,
            DriverKind::Pdl256,
            DriverKind::Opu,
            DriverKind::Ipu,
        ]
    }

    /// Everyone except the intentionally pathological in-place updater.
    pub fn comparison_set() -> [DriverKind; 5] {
        [
            DriverKind::Ipl64,
            DriverKind::Ipl18,
            DriverKind::Opu,
            DriverKind::Pdl2k,
            DriverKind::Pdl256,
        ]
    }

    pub fn parse(s: &str) -> Option<DriverKind> {
        match s.to_ascii_lowercase().as_str() {
            "pdl256" | "pdl(256b)" => Some(DriverKind::Pdl256),
            "pdl2k" | "pdl(2kb)" => Some(DriverKind::Pdl2k),
            "opu" => Some(DriverKind::Opu),
            "ipu" => Some(DriverKind::Ipu),
            "ipl18" | "ipl(18kb)" => Some(DriverKind::Ipl18),
            "ipl64" | "ipl(64kb)" => Some(DriverKind::Ipl64),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DriverKind::Pdl256 => "PDL(256B)",
            DriverKind::Pdl2k => "PDL(2KB)",
            DriverKind::Opu => "OPU",
            DriverKind::Ipu => "IPU",
            DriverKind::Ipl18 => "IPL(18KB)",
            DriverKind::Ipl64 => "IPL(64KB)",
        }
    }

    pub fn cli_name(&self) -> &'static str {
        match self {
            DriverKind::Pdl256 => "pdl256",
            DriverKind::Pdl2k => "pdl2k",
            DriverKind::Opu => "opu",
            DriverKind::Ipu => "ipu",
            DriverKind::Ipl18 => "ipl18",
            DriverKind::Ipl64 => "ipl64",
        }
    }

    pub fn build(&self, chip: FlashChip) -> Box<dyn PageDriver> {
        match self {
            DriverKind::Pdl256 => Box::new(PdlDriver::new(chip, PdlConfig::small())),
            DriverKind::Pdl2k => Box::new(PdlDriver::new(chip, PdlConfig::whole_page())),
            DriverKind::Opu => Box::new(OpuDriver::new(chip)),
            DriverKind::Ipu => Box::new(IpuDriver::new(chip)),
            DriverKind::Ipl18 => Box::new(IplDriver::new(chip, IplLayout::with_log_kib(18))),
            DriverKind::Ipl64 => Box::new(IplDriver::new(chip, IplLayout::with_log_kib(64))),
        }
    }

    /// PDL reads are bounded by the at-most-two-page principle.
    pub fn read_bound(&self) -> Option<u64> {
        match self {
            DriverKind::Pdl256 | DriverKind::Pdl2k => Some(2),
            DriverKind::Opu | DriverKind::Ipu => Some(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WarmupSpec {
    /// Run until garbage collection fired this often per block on average...
    pub gc_per_block: f64,
    /// ...or this many operations, whichever comes first.
    pub max_ops: u64,
}

impl Default for WarmupSpec {
    fn default() -> Self {
        WarmupSpec { gc_per_block: 2.0, max_ops: 150_000 }
    }
}

#[derive(Debug, Clone)]
pub struct CellConfig {
    pub n_blocks: u32,
    pub timing: TimingProfile,
    pub workload: WorkloadParams,
    pub warmup: WarmupSpec,
    pub measure_ops: u64,
    /// Verify reads against the shadow map and the per-method read bounds.
    pub audit: bool,
    /// Warm up with a different stream (e.g. update-only before a read mix).
    pub warmup_workload: Option<WorkloadParams>,
}

/// Measured totals over the measurement window of one cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub label: &'static str,
    pub ops: u64,
    pub read_us: u64,
    pub write_us: u64,
    pub gc_us: u64,
    pub reads: u64,
    pub writes: u64,
    pub erases: u64,
    pub gc_invocations: u64,
    pub warmup_ops: u64,
}

impl CellOutcome {
    pub fn read_us_per_op(&self) -> f64 {
        self.read_us as f64 / self.ops as f64
    }

    pub fn write_us_per_op(&self) -> f64 {
        self.write_us as f64 / self.ops as f64
    }

    pub fn gc_us_per_op(&self) -> f64 {
        self.gc_us as f64 / self.ops as f64
    }

    pub fn overall_us_per_op(&self) -> f64 {
        (self.read_us + self.write_us) as f64 / self.ops as f64
    }

    pub fn erases_per_op(&self) -> f64 {
        self.erases as f64 / self.ops as f64
    }
}

/// A loaded driver plus the shadow copy of every logical page.
pub struct LoadedCell {
    pub driver: Box<dyn PageDriver>,
    pub shadow: Vec<Vec<u8>>,
    pub workload: Workload,
}

/// Build a chip, load the database, and hand back the driver with its
/// shadow oracle.
pub fn load_cell(kind: DriverKind, cfg: &CellConfig) -> Result<LoadedCell> {
    let chip = FlashChip::new(FlashGeometry::desk(cfg.n_blocks), cfg.timing)
        .expect("valid desk geometry");
    let mut driver = kind.build(chip);
    let params = cfg.workload.clone();
    let n_pids = params.n_pids();
    let mut shadow = Vec::with_capacity(n_pids as usize);
    for pid in 0..n_pids {
        let page = Workload::initial_page(params.seed, pid, params.page_bytes);
        driver.write_logical(pid, &page)?;
        shadow.push(page);
    }
    Ok(LoadedCell { driver, shadow, workload: Workload::new(params) })
}

/// Execute one operation against the driver, keeping the shadow in sync.
/// Returns simulated (read_us, write_us) for the op. With `audit` set, the
/// read is checked against the shadow and the per-method read bound, and
/// `write_bound` additionally enforces the at-most-one-data-write rule of
/// the differential-logging reflection path (collection work and
/// obsolescence marks excluded).
pub fn run_op(
    cell: &mut LoadedCell,
    op: &WorkloadOp,
    audit: bool,
    read_bound: Option<u64>,
    write_bound: bool,
) -> Result<(u64, u64)> {
    let pid = op.pid();
    let t0 = cell.driver.stats().sim_time_us;
    let r0 = cell.driver.stats().reads;
    let mut page = cell.driver.read_logical(pid)?;
    let read_us = cell.driver.stats().sim_time_us - t0;
    if audit {
        if page != cell.shadow[pid as usize] {
            return Err(DriverError::Corruption(format!(
                "driver {} returned stale content for pid {pid}",
                cell.driver.label()
            )));
        }
        if let Some(bound) = read_bound {
            let reads = cell.driver.stats().reads - r0;
            if reads > bound {
                return Err(DriverError::Corruption(format!(
                    "driver {} used {reads} reads for one logical read (bound {bound})",
                    cell.driver.label()
                )));
            }
        }
    }
    let WorkloadOp::Update { change_sets, .. } = op else {
        return Ok((read_us, 0));
    };
    let before = cell.driver.stats();
    for set in change_sets {
        apply_changes(&mut page, set);
        cell.driver.log_update(pid, set)?;
    }
    cell.driver.write_logical(pid, &page)?;
    let after = cell.driver.stats();
    if write_bound {
        let data_writes = (after.writes - before.writes)
            - (after.gc_writes - before.gc_writes)
            - (after.obsolete_marks - before.obsolete_marks);
        if data_writes > 1 {
            return Err(DriverError::Corruption(format!(
                "driver {} issued {data_writes} data writes for one reflection",
                cell.driver.label()
            )));
        }
    }
    cell.shadow[pid as usize] = page;
    Ok((read_us, after.sim_time_us - before.sim_time_us))
}

/// Load, warm up until the garbage-collection target, then measure.
pub fn run_cell(kind: DriverKind, cfg: &CellConfig) -> Result<CellOutcome> {
    let mut cell = load_cell(kind, cfg)?;
    let read_bound = if cfg.audit { kind.read_bound() } else { None };
    let write_bound =
        cfg.audit && matches!(kind, DriverKind::Pdl256 | DriverKind::Pdl2k);

    // warm-up: reach steady state before measuring
    let gc_target = (cfg.warmup.gc_per_block * cfg.n_blocks as f64).ceil() as u64;
    let mut warmup_ops = 0u64;
    let mut warmup_stream = cfg.warmup_workload.clone().map(Workload::new);
    while warmup_ops < cfg.warmup.max_ops && cell.driver.stats().gc_invocations < gc_target {
        let op = match &mut warmup_stream {
            Some(stream) => stream.next_op(),
            None => cell.workload.next_op(),
        };
        run_op(&mut cell, &op, cfg.audit, read_bound, write_bound)?;
        warmup_ops += 1;
    }

    let before = cell.driver.stats();
    let mut read_us = 0u64;
    let mut write_us = 0u64;
    for _ in 0..cfg.measure_ops {
        let op = cell.workload.next_op();
        let (r, w) = run_op(&mut cell, &op, cfg.audit, read_bound, write_bound)?;
        read_us += r;
        write_us += w;
    }
    let after = cell.driver.stats();

    if cfg.audit {
        for pid in 0..cell.shadow.len() as u32 {
            let got = cell.driver.read_logical(pid)?;
            if got != cell.shadow[pid as usize] {
                return Err(DriverError::Corruption(format!(
                    "driver {} diverged from the shadow map at pid {pid}",
                    cell.driver.label()
                )));
            }
        }
    }

    Ok(CellOutcome {
        label: kind.label(),
        ops: cfg.measure_ops,
        read_us,
        write_us,
        gc_us: after.gc_time_us - before.gc_time_us,
        reads: after.reads - before.reads,
        writes: after.writes - before.writes,
        erases: after.erases - before.erases,
        gc_invocations: after.gc_invocations - before.gc_invocations,
        warmup_ops,
    })
}
