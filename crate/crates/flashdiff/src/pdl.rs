//! Page-differential logging driver.
//!
//! A logical page is stored as a base page (a full, possibly stale copy)
//! plus at most one differential that upgrades the base to the newest
//! content. Differentials are collected in a single page-sized write buffer
//! and written out together when the buffer fills, so reflecting a page
//! costs at most one data-area write and recreating one costs at most two
//! reads.
//!
//! In-memory state is the page mapping table (pid -> base page address,
//! differential page address), the valid-differential count table, and the
//! write buffer. Everything is reconstructable from the chip by
//! [`crate::maintenance::recovery::recover`].

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::chip::{ChipError, FlashChip, PageId, PageType, PhysPageAddr, SpareInit};
use crate::diff::{decode_page, DiffBudget, Differential};
use crate::driver::{DriverError, DriverStats, PageDriver, Result};
use crate::maintenance::gc::pick_victim;
use crate::maintenance::recovery::RecoveredState;

/// Driver tuning: differentials whose encoding exceeds the budget are
/// discarded and the page is rewritten as a fresh base instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdlConfig {
    pub budget: DiffBudget,
}

impl PdlConfig {
    pub fn new(max_diff_bytes: usize) -> Self {
        PdlConfig { budget: DiffBudget::new(max_diff_bytes) }
    }

    /// Differentials up to a whole page.
    pub fn whole_page() -> Self {
        PdlConfig::new(2048)
    }

    /// Differentials up to 256 bytes.
    pub fn small() -> Self {
        PdlConfig::new(256)
    }
}

/// Snapshot of the two in-memory tables, in the shape the recovery scan
/// rebuilds them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdlTables {
    /// pid -> (base page address, differential page address).
    pub mapping: BTreeMap<PageId, (PhysPageAddr, Option<PhysPageAddr>)>,
    /// differential page address -> number of valid differentials in it.
    pub vdct: BTreeMap<PhysPageAddr, u32>,
}

/// Round-robin page allocator over erased blocks, with one block held back
/// for the garbage collector.
pub(crate) struct Allocator {
    active: Option<(u32, u32)>,
    partial: VecDeque<(u32, u32)>,
    free_blocks: VecDeque<u32>,
    reserved: u32,
    pages_per_block: u32,
}

impl Allocator {
    pub(crate) fn new(n_blocks: u32, pages_per_block: u32) -> Self {
        assert!(n_blocks >= 2, "need at least one allocatable and one reserved block");
        Allocator {
            active: None,
            partial: VecDeque::new(),
            free_blocks: (0..n_blocks - 1).collect(),
            reserved: n_blocks - 1,
            pages_per_block,
        }
    }

    pub(crate) fn alloc(&mut self) -> Option<PhysPageAddr> {
        loop {
            if let Some((block, next)) = self.active {
                if next < self.pages_per_block {
                    self.active = Some((block, next + 1));
                    return Some(PhysPageAddr::new(block, next));
                }
                self.active = None;
            }
            if let Some(resume) = self.partial.pop_front() {
                self.active = Some(resume);
                continue;
            }
            {
                let block = self.free_blocks.pop_front()?;
                self.active = Some((block, 0))
            }
        }
    }

    pub(crate) fn reserved(&self) -> u32 {
        self.reserved
    }

    /// After garbage collection: the erased victim becomes the new reserved
    /// block and the remainder of the old one joins the allocatable pool.
    pub(crate) fn rotate_reserved(&mut self, erased_victim: u32, used_pages: u32) {
        let old = self.reserved;
        self.reserved = erased_victim;
        if used_pages < self.pages_per_block {
            self.partial.push_back((old, used_pages));
        }
    }

    /// Rebuild allocator state from per-block programmed-page counts.
    pub(crate) fn from_fill(fill: &[u32], pages_per_block: u32) -> Self {
        let mut free: Vec<u32> = Vec::new();
        let mut partial: VecDeque<(u32, u32)> = VecDeque::new();
        for (b, &used) in fill.iter().enumerate() {
            if used == 0 {
                free.push(b as u32);
            } else if used < pages_per_block {
                partial.push_back((b as u32, used));
            }
        }
        // prefer a fully erased block as the reserve; fall back to the
        // emptiest partial block if a crash left none erased
        let reserved = match free.pop() {
            Some(b) => b,
            None => {
                let (i, _) = partial
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, (_, used))| *used)
                    .expect("chip has no free pages at all");
                partial.remove(i).unwrap().0
            }
        };
        Allocator {
            active: None,
            partial,
            free_blocks: free.into(),
            reserved,
            pages_per_block,
        }
    }
}

struct MapEntry {
    base: PhysPageAddr,
    diff: Option<PhysPageAddr>,
}

#[derive(Default)]
struct WriteBuffer {
    entries: Vec<Differential>,
    used: usize,
}

impl WriteBuffer {
    fn remove(&mut self, pid: PageId) {
        if let Some(i) = self.entries.iter().position(|d| d.pid == pid) {
            let d = self.entries.remove(i);
            self.used -= d.encoded_size();
        }
    }

    fn find(&self, pid: PageId) -> Option<&Differential> {
        self.entries.iter().find(|d| d.pid == pid)
    }

    fn push(&mut self, d: Differential) {
        self.used += d.encoded_size();
        self.entries.push(d);
    }

    fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub struct PdlDriver {
    chip: FlashChip,
    cfg: PdlConfig,
    mapping: BTreeMap<PageId, MapEntry>,
    vdct: BTreeMap<PhysPageAddr, u32>,
    buffer: WriteBuffer,
    alloc: Allocator,
    reverse_base: HashMap<PhysPageAddr, PageId>,
    obsolete_per_block: Vec<u32>,
    clock: u64,
    gc_invocations: u64,
    gc_time_us: u64,
    gc_writes: u64,
    obsolete_marks: u64,
    label: &'static str,
}

impl PdlDriver {
    pub fn new(chip: FlashChip, cfg: PdlConfig) -> Self {
        assert!(
            cfg.budget.max_bytes > 0 && cfg.budget.max_bytes <= chip.geometry().data_bytes,
            "max differential size must be within one page"
        );
        let n_blocks = chip.geometry().n_blocks;
        let ppb = chip.geometry().pages_per_block;
        let label = if cfg.budget.max_bytes <= 256 { "PDL(256B)" } else { "PDL(2KB)" };
        PdlDriver {
            chip,
            cfg,
            mapping: BTreeMap::new(),
            vdct: BTreeMap::new(),
            buffer: WriteBuffer::default(),
            alloc: Allocator::new(n_blocks, ppb),
            reverse_base: HashMap::new(),
            obsolete_per_block: vec![0; n_blocks as usize],
            clock: 1,
            gc_invocations: 0,
            gc_time_us: 0,
            gc_writes: 0,
            obsolete_marks: 0,
            label,
        }
    }

    /// Rebuild a driver around a chip whose tables were reconstructed by the
    /// recovery scan. Data that only lived in the write buffer is gone; the
    /// timestamp clock resumes past everything seen on flash.
    pub fn resume(chip: FlashChip, state: &RecoveredState, cfg: PdlConfig) -> Self {
        let ppb = chip.geometry().pages_per_block;
        let mut driver = PdlDriver::new(chip, cfg);
        driver.alloc = Allocator::from_fill(&state.block_fill, ppb);
        driver.obsolete_per_block = state.obsolete_per_block.clone();
        driver.clock = state.next_timestamp;
        driver.vdct = state.tables.vdct.clone();
        for (&pid, &(base, diff)) in &state.tables.mapping {
            driver.mapping.insert(pid, MapEntry { base, diff });
            driver.reverse_base.insert(base, pid);
        }
        driver
    }

    pub fn config(&self) -> PdlConfig {
        self.cfg
    }

    pub fn into_chip(self) -> FlashChip {
        self.chip
    }

    /// Pids whose newest differential still sits in the write buffer.
    pub fn buffered_pids(&self) -> Vec<PageId> {
        self.buffer.entries.iter().map(|d| d.pid).collect()
    }

    pub fn tables(&self) -> PdlTables {
        PdlTables {
            mapping: self.mapping.iter().map(|(&p, e)| (p, (e.base, e.diff))).collect(),
            vdct: self.vdct.clone(),
        }
    }

    /// Cross-check the in-memory tables against each other. Test support.
    pub fn verify_tables(&self) {
        let mut counts: BTreeMap<PhysPageAddr, u32> = BTreeMap::new();
        for entry in self.mapping.values() {
            if let Some(dp) = entry.diff {
                *counts.entry(dp).or_default() += 1;
            }
        }
        assert_eq!(counts, self.vdct, "valid differential counts out of sync with mapping");
        assert!(self.buffer.used <= self.chip.geometry().data_bytes);
        for (addr, &pid) in &self.reverse_base {
            assert_eq!(self.mapping.get(&pid).map(|e| e.base), Some(*addr));
        }
    }

    fn take_clock(&mut self) -> u64 {
        let t = self.clock;
        self.clock += 1;
        t
    }

    fn mark_obsolete(&mut self, addr: PhysPageAddr) -> Result<()> {
        self.chip.set_obsolete(addr)?;
        self.obsolete_per_block[addr.block as usize] += 1;
        self.obsolete_marks += 1;
        Ok(())
    }

    fn alloc_page(&mut self) -> Result<PhysPageAddr> {
        if let Some(addr) = self.alloc.alloc() {
            return Ok(addr);
        }
        self.collect_garbage()?;
        self.alloc.alloc().ok_or(DriverError::CapacityExhausted)
    }

    fn decrease_valid_count(&mut self, dp: PhysPageAddr) -> Result<()> {
        let count = self
            .vdct
            .get_mut(&dp)
            .unwrap_or_else(|| panic!("valid differential count underflow at {dp}"));
        *count -= 1;
        if *count == 0 {
            self.vdct.remove(&dp);
            self.mark_obsolete(dp)?;
        }
        Ok(())
    }

    /// Write the buffered differentials into a freshly allocated
    /// differential page and repoint the tables at it.
    pub fn flush_buffer(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let q = self.alloc_page()?;
        let data_bytes = self.chip.geometry().data_bytes;
        let mut image = vec![0xFF; data_bytes];
        let mut off = 0;
        for d in &self.buffer.entries {
            let enc = d.encode();
            image[off..off + enc.len()].copy_from_slice(&enc);
            off += enc.len();
        }
        self.chip
            .program_page(q, &image, SpareInit::new(PageType::Differential, None, None))?;
        self.clock += 1;
        let entries = std::mem::take(&mut self.buffer.entries);
        self.buffer.used = 0;
        let count = entries.len() as u32;
        for d in entries {
            let entry = self.mapping.get_mut(&d.pid).expect("buffered pid is mapped");
            let old = entry.diff.replace(q);
            if let Some(dp) = old {
                self.decrease_valid_count(dp)?;
            }
        }
        self.vdct.insert(q, count);
        Ok(())
    }

    /// Write the page itself as a new base page, obsolete the old base, and
    /// invalidate any differential the page still had.
    pub fn write_new_base(&mut self, pid: PageId, page: &[u8]) -> Result<()> {
        let q = self.alloc_page()?;
        let ts = self.take_clock();
        self.chip.program_page(q, page, SpareInit::new(PageType::Base, Some(pid), Some(ts)))?;
        let old = self.mapping.insert(pid, MapEntry { base: q, diff: None });
        self.reverse_base.insert(q, pid);
        if let Some(old) = old {
            self.reverse_base.remove(&old.base);
            self.mark_obsolete(old.base)?;
            self.buffer.remove(pid);
            if let Some(dp) = old.diff {
                self.decrease_valid_count(dp)?;
            }
        }
        Ok(())
    }

    /// Reclaim the block with the most obsolete pages: valid base pages move
    /// to the reserved block, valid differentials are compacted into fresh
    /// differential pages, then the victim is erased and becomes the new
    /// reserved block.
    pub fn collect_garbage(&mut self) -> Result<()> {
        let t0 = self.chip.ledger().sim_time_us;
        let w0 = self.chip.ledger().writes;
        let victim = pick_victim(&self.obsolete_per_block, self.alloc.reserved())
            .ok_or(DriverError::CapacityExhausted)?;
        self.gc_invocations += 1;
        let target = self.alloc.reserved();
        let ppb = self.chip.geometry().pages_per_block;
        let data_bytes = self.chip.geometry().data_bytes;
        let mut cursor: u32 = 0;
        let mut staged: Vec<Differential> = Vec::new();
        let mut staged_bytes = 0usize;
        for p in 0..ppb {
            let addr = PhysPageAddr::new(victim, p);
            if let Some(&pid) = self.reverse_base.get(&addr) {
                let (data, spare) = self.chip.read_page(addr)?;
                debug_assert_eq!(spare.pid, Some(pid));
                let dst = PhysPageAddr::new(target, cursor);
                cursor += 1;
                self.chip.program_page(
                    dst,
                    &data,
                    SpareInit::new(PageType::Base, spare.pid, spare.timestamp),
                )?;
                self.reverse_base.remove(&addr);
                self.reverse_base.insert(dst, pid);
                self.mapping.get_mut(&pid).expect("reverse-mapped base").base = dst;
            } else if self.vdct.contains_key(&addr) {
                let (data, _) = self.chip.read_page(addr)?;
                let records = decode_page(&data)
                    .map_err(|e| DriverError::Corruption(format!("differential page {addr}: {e}")))?;
                for d in records {
                    let live = self.mapping.get(&d.pid).is_some_and(|e| e.diff == Some(addr));
                    if !live {
                        continue;
                    }
                    if staged_bytes + d.encoded_size() > data_bytes {
                        let dst = PhysPageAddr::new(target, cursor);
                        cursor += 1;
                        self.write_compacted(dst, &mut staged, &mut staged_bytes)?;
                    }
                    staged_bytes += d.encoded_size();
                    staged.push(d);
                }
                self.vdct.remove(&addr);
            }
        }
        if !staged.is_empty() {
            let dst = PhysPageAddr::new(target, cursor);
            cursor += 1;
            self.write_compacted(dst, &mut staged, &mut staged_bytes)?;
        }
        debug_assert!(cursor <= ppb, "garbage collection moved more pages than a block holds");
        self.chip.erase_block(victim)?;
        self.obsolete_per_block[victim as usize] = 0;
        self.alloc.rotate_reserved(victim, cursor);
        self.gc_time_us += self.chip.ledger().sim_time_us - t0;
        self.gc_writes += self.chip.ledger().writes - w0;
        Ok(())
    }

    fn write_compacted(
        &mut self,
        dst: PhysPageAddr,
        staged: &mut Vec<Differential>,
        staged_bytes: &mut usize,
    ) -> Result<()> {
        let data_bytes = self.chip.geometry().data_bytes;
        let mut image = vec![0xFF; data_bytes];
        let mut off = 0;
        for d in staged.iter() {
            let enc = d.encode();
            image[off..off + enc.len()].copy_from_slice(&enc);
            off += enc.len();
        }
        self.chip
            .program_page(dst, &image, SpareInit::new(PageType::Differential, None, None))?;
        let count = staged.len() as u32;
        for d in staged.drain(..) {
            self.mapping.get_mut(&d.pid).expect("compacted pid is mapped").diff = Some(dst);
        }
        self.vdct.insert(dst, count);
        *staged_bytes = 0;
        Ok(())
    }
}

impl PageDriver for PdlDriver {
    fn read_logical(&mut self, pid: PageId) -> Result<Vec<u8>> {
        let entry = self.mapping.get(&pid).ok_or(DriverError::NotFound(pid))?;
        let base_addr = entry.base;
        let diff_addr = entry.diff;
        let (base, _) = self.chip.read_page(base_addr)?;
        if let Some(d) = self.buffer.find(pid) {
            return Ok(d.apply_to(&base)?);
        }
        if let Some(dp) = diff_addr {
            let (data, _) = self.chip.read_page(dp)?;
            let records = decode_page(&data)
                .map_err(|e| DriverError::Corruption(format!("differential page {dp}: {e}")))?;
            let record = records
                .into_iter()
                .filter(|d| d.pid == pid)
                .max_by_key(|d| d.timestamp)
                .ok_or_else(|| {
                    DriverError::Corruption(format!("no differential for pid {pid} in page {dp}"))
                })?;
            return Ok(record.apply_to(&base)?);
        }
        Ok(base)
    }

    fn write_logical(&mut self, pid: PageId, page: &[u8]) -> Result<()> {
        let data_bytes = self.chip.geometry().data_bytes;
        if page.len() != data_bytes {
            return Err(ChipError::DataLength { expected: data_bytes, got: page.len() }.into());
        }
        let Some(entry) = self.mapping.get(&pid) else {
            // fresh allocation: nothing to diff against
            return self.write_new_base(pid, page);
        };
        let base_addr = entry.base;
        let (base, _) = self.chip.read_page(base_addr)?;
        let d = Differential::compute(&base, page, pid, self.clock);
        self.buffer.remove(pid);
        if !self.cfg.budget.admits(&d) {
            // differential larger than allowed: the page itself becomes a
            // new base page
            self.write_new_base(pid, page)
        } else if d.encoded_size() <= data_bytes - self.buffer.used {
            self.buffer.push(d);
            Ok(())
        } else {
            self.flush_buffer()?;
            self.buffer.push(d);
            Ok(())
        }
    }

    fn write_through(&mut self) -> Result<()> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        self.flush_buffer()
    }

    fn stats(&self) -> DriverStats {
        let ledger = self.chip.ledger();
        DriverStats {
            reads: ledger.reads,
            writes: ledger.writes,
            erases: ledger.erases,
            sim_time_us: ledger.sim_time_us,
            gc_invocations: self.gc_invocations,
            gc_time_us: self.gc_time_us,
            gc_writes: self.gc_writes,
            obsolete_marks: self.obsolete_marks,
        }
    }

    fn chip(&self) -> &FlashChip {
        &self.chip
    }

    fn label(&self) -> &'static str {
        self.label
    }
}
