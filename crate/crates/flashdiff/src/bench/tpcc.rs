//! TPC-C-like transaction mix: skewed page access through an LRU buffer.
//!
//! Each transaction works on a small set of pages (the same rows are hit
//! repeatedly, as in the real benchmark), issuing ten touches on them: nine
//! updates and one read-only. 80% of the page picks land on the hot 20% of
//! the database. Updates dirty the buffered copy; a dirty page reaches the
//! driver only when the LRU buffer evicts it, so larger buffers mean fewer
//! driver operations for every method.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::bench::experiment::ExperimentConfig;
use crate::bench::harness::DriverKind;
use crate::bench::workload::{apply_changes, gen_change_set, Workload};
use crate::chip::{FlashChip, FlashGeometry, PageId, TimingProfile};
use crate::driver::{DriverError, Result};

#[derive(Debug, Clone)]
pub struct TpccConfig {
    pub n_blocks: u32,
    pub timing: TimingProfile,
    pub db_bytes: u64,
    pub page_bytes: usize,
    pub seed: u64,
    pub txns: u64,
    pub warmup_txns: u64,
    pub touches_per_txn: u32,
    pub update_touches: u32,
    /// Distinct pages a transaction works on.
    pub pages_per_txn: u32,
    pub hot_page_frac: f64,
    pub hot_access_frac: f64,
    pub pct_changed: f64,
    pub audit: bool,
}

impl TpccConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        let n_pids = (cfg.db_bytes / 2048) as u32;
        let hot_pids = ((0.2 * n_pids as f64) as u64).max(1);
        TpccConfig {
            n_blocks: cfg.n_blocks,
            timing: cfg.timing,
            db_bytes: cfg.db_bytes,
            page_bytes: 2048,
            seed: cfg.seed,
            txns: (cfg.measure_ops / 10).max(500),
            // long enough for the hot pages to reach their steady
            // differential / log state
            warmup_txns: hot_pids * 18,
            touches_per_txn: 10,
            update_touches: 9,
            pages_per_txn: 3,
            hot_page_frac: 0.2,
            hot_access_frac: 0.8,
            pct_changed: 2.0,
            audit: cfg.audit,
        }
    }

    fn n_pids(&self) -> u32 {
        (self.db_bytes / self.page_bytes as u64) as u32
    }
}

#[derive(Debug, Clone)]
pub struct TpccOutcome {
    pub label: &'static str,
    pub txns: u64,
    pub io_us: u64,
    pub gc_us: u64,
    pub erases: u64,
    pub driver_reads: u64,
    pub driver_writes: u64,
}

struct BufEntry {
    page: Vec<u8>,
    dirty: bool,
    last_used: u64,
}

struct LruBuffer {
    capacity: usize,
    entries: HashMap<PageId, BufEntry>,
    tick: u64,
}

impl LruBuffer {
    fn new(capacity: usize) -> Self {
        LruBuffer { capacity: capacity.max(1), entries: HashMap::new(), tick: 0 }
    }

    fn evict_lru(&mut self) -> (PageId, BufEntry) {
        let (&pid, _) = self
            .entries
            .iter()
            .min_by_key(|(&pid, e)| (e.last_used, pid))
            .expect("evicting from a non-empty buffer");
        (pid, self.entries.remove(&pid).unwrap())
    }
}

/// Run the transaction mix for one driver at one buffer size (given as a
/// percentage of the database size).
pub fn run_tpcc_cell(kind: DriverKind, cfg: &TpccConfig, buffer_pct: f64) -> Result<TpccOutcome> {
    let chip = FlashChip::new(FlashGeometry::desk(cfg.n_blocks), cfg.timing)
        .expect("valid desk geometry");
    let mut driver = kind.build(chip);
    let n_pids = cfg.n_pids();
    let mut shadow: Vec<Vec<u8>> = Vec::with_capacity(n_pids as usize);
    for pid in 0..n_pids {
        let page = Workload::initial_page(cfg.seed, pid, cfg.page_bytes);
        driver.write_logical(pid, &page)?;
        shadow.push(page);
    }

    // the buffer must at least hold one transaction's working set
    let capacity = (((buffer_pct / 100.0) * n_pids as f64).round() as usize)
        .max(cfg.pages_per_txn as usize + 1);
    let mut buffer = LruBuffer::new(capacity);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x7bcc_5eed);
    let hot_pids = ((cfg.hot_page_frac * n_pids as f64) as u32).max(1);
    let changed_bytes =
        ((cfg.pct_changed / 100.0) * cfg.page_bytes as f64).round().max(1.0) as usize;

    let run_txn = |driver: &mut Box<dyn crate::driver::PageDriver>,
                       buffer: &mut LruBuffer,
                       shadow: &mut Vec<Vec<u8>>,
                       rng: &mut ChaCha12Rng|
     -> Result<()> {
        let touch_page = |driver: &mut Box<dyn crate::driver::PageDriver>,
                              buffer: &mut LruBuffer,
                              shadow: &mut Vec<Vec<u8>>,
                              rng: &mut ChaCha12Rng,
                              pid: PageId,
                              update: bool|
         -> Result<()> {
            buffer.tick += 1;
            let tick = buffer.tick;
            if !buffer.entries.contains_key(&pid) {
                if buffer.entries.len() >= buffer.capacity {
                    let (victim_pid, victim) = buffer.evict_lru();
                    if victim.dirty {
                        driver.write_logical(victim_pid, &victim.page)?;
                    }
                }
                let page = driver.read_logical(pid)?;
                if cfg.audit && page != shadow[pid as usize] {
                    return Err(DriverError::Corruption(format!(
                        "driver {} returned stale content for pid {pid}",
                        driver.label()
                    )));
                }
                buffer.entries.insert(pid, BufEntry { page, dirty: false, last_used: tick });
            }
            let entry = buffer.entries.get_mut(&pid).unwrap();
            entry.last_used = tick;
            if update {
                let changes = gen_change_set(rng, cfg.page_bytes, changed_bytes);
                apply_changes(&mut entry.page, &changes);
                entry.dirty = true;
                shadow[pid as usize] = entry.page.clone();
                driver.log_update(pid, &changes)?;
            }
            Ok(())
        };

        // update touches hammer a small skewed working set, like the
        // repeated row updates of the real benchmark
        let txn_pages: Vec<PageId> = (0..cfg.pages_per_txn)
            .map(|_| {
                if rng.gen_bool(cfg.hot_access_frac) {
                    rng.gen_range(0..hot_pids)
                } else {
                    rng.gen_range(0..n_pids)
                }
            })
            .collect();
        for touch in 0..cfg.update_touches {
            let pid = txn_pages[(touch % cfg.pages_per_txn) as usize];
            touch_page(driver, buffer, shadow, rng, pid, true)?;
        }
        // the read-only touches scan widely across the database
        for _ in cfg.update_touches..cfg.touches_per_txn {
            let pid = rng.gen_range(0..n_pids);
            touch_page(driver, buffer, shadow, rng, pid, false)?;
        }
        Ok(())
    };

    for _ in 0..cfg.warmup_txns {
        run_txn(&mut driver, &mut buffer, &mut shadow, &mut rng)?;
    }
    let before = driver.stats();
    for _ in 0..cfg.txns {
        run_txn(&mut driver, &mut buffer, &mut shadow, &mut rng)?;
    }
    let after = driver.stats();

    Ok(TpccOutcome {
        label: kind.label(),
        txns: cfg.txns,
        io_us: after.sim_time_us - before.sim_time_us,
        gc_us: after.gc_time_us - before.gc_time_us,
        erases: after.erases - before.erases,
        driver_reads: after.reads - before.reads,
        driver_writes: after.writes - before.writes,
    })
}
