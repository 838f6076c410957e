//! In-page logging: each block keeps a fixed region of log pages, and the
//! update logs of a logical page go only into the log pages of the block
//! holding its original. When a block's log region fills up, the originals
//! are merged with their logs into a fresh block and the old block is
//! erased.
//!
//! The driver is tightly coupled: callers hand it every in-memory change
//! through `log_update`. Changes accumulate in a small per-page memory
//! buffer (1/16 of a page) and are written out when the buffer fills or the
//! page is reflected. Log pages accept a limited number of partial-page
//! appends before the next log page is opened.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::chip::{ChipError, FlashChip, PageId, PageType, PhysPageAddr, SpareInit};
use crate::diff::{decode_page, Differential, Run, RECORD_HEADER_BYTES, RUN_HEADER_BYTES};
use crate::driver::{DriverError, DriverStats, PageDriver, Result};

/// Split of each block into original pages and log pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IplLayout {
    pub originals_per_block: u32,
    pub log_pages_per_block: u32,
    /// Partial-page appends a log page accepts before the next one opens.
    pub writes_per_log_page: u32,
}

impl IplLayout {
    /// Layout with `log_kib` KiB of log pages per 128 KiB block (2 KiB pages).
    pub fn with_log_kib(log_kib: u32) -> Self {
        let log_pages = log_kib * 1024 / 2048;
        assert!((1..64).contains(&log_pages), "log region must fit the block");
        IplLayout {
            originals_per_block: 64 - log_pages,
            log_pages_per_block: log_pages,
            writes_per_log_page: 16,
        }
    }

    fn label(&self) -> &'static str {
        match self.log_pages_per_block {
            9 => "IPL(18KB)",
            32 => "IPL(64KB)",
            _ => "IPL",
        }
    }
}

/// In-memory log buffer of one logical page.
#[derive(Default)]
struct PidBuffer {
    records: Vec<Differential>,
    used: usize,
}

/// Log-region cursor of one block.
struct BlockLog {
    /// Index of the currently open log page within the log region.
    open_page: u32,
    writes_in_page: u32,
    bytes_in_page: usize,
    open_image: Vec<u8>,
}

impl BlockLog {
    fn new(data_bytes: usize) -> Self {
        BlockLog { open_page: 0, writes_in_page: 0, bytes_in_page: 0, open_image: vec![0xFF; data_bytes] }
    }

    fn written_pages(&self) -> u32 {
        self.open_page + u32::from(self.writes_in_page > 0)
    }
}

pub struct IplDriver {
    chip: FlashChip,
    layout: IplLayout,
    buffer_bytes: usize,
    /// group (pid / originals_per_block) -> block currently holding it.
    group_block: HashMap<u32, u32>,
    mapped: BTreeSet<PageId>,
    buffers: HashMap<PageId, PidBuffer>,
    block_logs: HashMap<u32, BlockLog>,
    free_blocks: VecDeque<u32>,
    reserved: u32,
    clock: u64,
    merges: u64,
    merge_time_us: u64,
    merge_writes: u64,
}

impl IplDriver {
    pub fn new(chip: FlashChip, layout: IplLayout) -> Self {
        let g = chip.geometry();
        assert_eq!(
            layout.originals_per_block + layout.log_pages_per_block,
            g.pages_per_block,
            "originals and log pages must partition the block"
        );
        let buffer_bytes = g.data_bytes / 16;
        assert!(buffer_bytes > RECORD_HEADER_BYTES + RUN_HEADER_BYTES);
        let n_blocks = g.n_blocks;
        IplDriver {
            chip,
            layout,
            buffer_bytes,
            group_block: HashMap::new(),
            mapped: BTreeSet::new(),
            buffers: HashMap::new(),
            block_logs: HashMap::new(),
            free_blocks: (0..n_blocks - 1).collect(),
            reserved: n_blocks - 1,
            clock: 1,
            merges: 0,
            merge_time_us: 0,
            merge_writes: 0,
        }
    }

    pub fn into_chip(self) -> FlashChip {
        self.chip
    }

    pub fn layout(&self) -> IplLayout {
        self.layout
    }

    fn group_of(&self, pid: PageId) -> u32 {
        pid / self.layout.originals_per_block
    }

    fn slot_of(&self, pid: PageId) -> u32 {
        pid % self.layout.originals_per_block
    }

    fn log_page_addr(&self, block: u32, log_idx: u32) -> PhysPageAddr {
        PhysPageAddr::new(block, self.layout.originals_per_block + log_idx)
    }

    /// Cut a record into pieces that each fit an empty log buffer.
    fn split_for_buffer(&self, d: Differential) -> Vec<Differential> {
        if d.encoded_size() <= self.buffer_bytes {
            return vec![d];
        }
        let cap = self.buffer_bytes;
        let mut pieces = Vec::new();
        let mut cur: Vec<Run> = Vec::new();
        let mut size = RECORD_HEADER_BYTES;
        for run in d.runs() {
            let mut offset = run.offset;
            let mut bytes = &run.bytes[..];
            while !bytes.is_empty() {
                if size + RUN_HEADER_BYTES + 1 > cap {
                    pieces.push(Differential::new(d.pid, d.timestamp, std::mem::take(&mut cur)));
                    size = RECORD_HEADER_BYTES;
                    continue;
                }
                let take = bytes.len().min(cap - size - RUN_HEADER_BYTES);
                cur.push(Run::new(offset, bytes[..take].to_vec()));
                size += RUN_HEADER_BYTES + take;
                offset += take;
                bytes = &bytes[take..];
            }
        }
        if !cur.is_empty() {
            pieces.push(Differential::new(d.pid, d.timestamp, cur));
        }
        pieces
    }

    /// Write one pid's buffered records into its block's log region.
    fn flush_pid_buffer(&mut self, pid: PageId) -> Result<()> {
        let buf = match self.buffers.remove(&pid) {
            Some(b) if !b.records.is_empty() => b,
            _ => return Ok(()),
        };
        let mut chunk = Vec::with_capacity(buf.used);
        for d in &buf.records {
            d.encode_into(&mut chunk);
        }
        let group = self.group_of(pid);
        let originals = self.layout.originals_per_block;
        let max_writes = self.layout.writes_per_log_page;
        let log_pages = self.layout.log_pages_per_block;
        loop {
            let block = *self.group_block.get(&group).expect("flushed pid is mapped");
            let log = self.block_logs.get_mut(&block).expect("mapped block has log state");
            let fits_writes = log.writes_in_page < max_writes;
            let fits_bytes = log.bytes_in_page + chunk.len() <= log.open_image.len();
            if fits_writes && fits_bytes {
                let at = log.bytes_in_page;
                log.open_image[at..at + chunk.len()].copy_from_slice(&chunk);
                log.bytes_in_page += chunk.len();
                log.writes_in_page += 1;
                let addr = PhysPageAddr::new(block, originals + log.open_page);
                let image = log.open_image.clone();
                self.chip
                    .program_page(addr, &image, SpareInit::new(PageType::Log, None, None))?;
                return Ok(());
            }
            if log.open_page + 1 < log_pages {
                log.open_page += 1;
                log.writes_in_page = 0;
                log.bytes_in_page = 0;
                log.open_image.fill(0xFF);
                continue;
            }
            // no free log page left in this block
            self.merge_block(group)?;
        }
    }

    /// Merge a group's originals with its logs into a fresh block, erase the
    /// old block, and leave the new log region empty.
    pub fn merge_block(&mut self, group: u32) -> Result<()> {
        let t0 = self.chip.ledger().sim_time_us;
        let w0 = self.chip.ledger().writes;
        self.merges += 1;
        let old_block = *self.group_block.get(&group).expect("merging an unmapped group");
        let target = self.reserved;
        let log = self.block_logs.remove(&old_block).expect("merged block has log state");
        // one read per written log page, records bucketed per pid
        let mut per_pid: BTreeMap<PageId, Vec<Differential>> = BTreeMap::new();
        for idx in 0..log.written_pages() {
            let addr = self.log_page_addr(old_block, idx);
            let (data, _) = self.chip.read_page(addr)?;
            let records = decode_page(&data)
                .map_err(|e| DriverError::Corruption(format!("log page {addr}: {e}")))?;
            for d in records {
                per_pid.entry(d.pid).or_default().push(d);
            }
        }
        let first_pid = group * self.layout.originals_per_block;
        for slot in 0..self.layout.originals_per_block {
            let pid = first_pid + slot;
            if !self.mapped.contains(&pid) {
                continue;
            }
            let src = PhysPageAddr::new(old_block, slot);
            let (mut page, _) = self.chip.read_page(src)?;
            if let Some(mut records) = per_pid.remove(&pid) {
                records.sort_by_key(|d| d.timestamp);
                for d in records {
                    page = d.apply_to(&page)?;
                }
            }
            let ts = self.clock;
            self.clock += 1;
            let dst = PhysPageAddr::new(target, slot);
            self.chip
                .program_page(dst, &page, SpareInit::new(PageType::Original, Some(pid), Some(ts)))?;
        }
        self.chip.erase_block(old_block)?;
        self.group_block.insert(group, target);
        self.block_logs.insert(target, BlockLog::new(self.chip.geometry().data_bytes));
        self.reserved = old_block;
        self.merge_time_us += self.chip.ledger().sim_time_us - t0;
        self.merge_writes += self.chip.ledger().writes - w0;
        Ok(())
    }
}

impl PageDriver for IplDriver {
    fn read_logical(&mut self, pid: PageId) -> Result<Vec<u8>> {
        if !self.mapped.contains(&pid) {
            return Err(DriverError::NotFound(pid));
        }
        let group = self.group_of(pid);
        let block = self.group_block[&group];
        let (mut page, _) = self.chip.read_page(PhysPageAddr::new(block, self.slot_of(pid)))?;
        // the driver keeps no index of which log page holds whose records,
        // so every written log page of the block is read and scanned
        let written = self.block_logs[&block].written_pages();
        let mut records: Vec<Differential> = Vec::new();
        for idx in 0..written {
            let addr = self.log_page_addr(block, idx);
            let (data, _) = self.chip.read_page(addr)?;
            let decoded = decode_page(&data)
                .map_err(|e| DriverError::Corruption(format!("log page {addr}: {e}")))?;
            records.extend(decoded.into_iter().filter(|d| d.pid == pid));
        }
        if let Some(buf) = self.buffers.get(&pid) {
            records.extend(buf.records.iter().cloned());
        }
        records.sort_by_key(|d| d.timestamp);
        for d in records {
            page = d.apply_to(&page)?;
        }
        Ok(page)
    }

    fn log_update(&mut self, pid: PageId, changes: &[Run]) -> Result<()> {
        if !self.mapped.contains(&pid) {
            return Err(DriverError::NotFound(pid));
        }
        let ts = self.clock;
        self.clock += 1;
        let record = Differential::new(pid, ts, changes.to_vec());
        for piece in self.split_for_buffer(record) {
            let size = piece.encoded_size();
            let used = self.buffers.get(&pid).map_or(0, |b| b.used);
            if used + size > self.buffer_bytes {
                self.flush_pid_buffer(pid)?;
            }
            let buf = self.buffers.entry(pid).or_default();
            buf.used += size;
            buf.records.push(piece);
        }
        Ok(())
    }

    fn write_logical(&mut self, pid: PageId, page: &[u8]) -> Result<()> {
        let g = *self.chip.geometry();
        if page.len() != g.data_bytes {
            return Err(ChipError::DataLength { expected: g.data_bytes, got: page.len() }.into());
        }
        if self.mapped.contains(&pid) {
            // reflection: push the pending update logs out to the log region
            return self.flush_pid_buffer(pid);
        }
        // initial load: claim the group's block if this is its first page
        let group = self.group_of(pid);
        let block = match self.group_block.get(&group) {
            Some(&b) => b,
            None => {
                let b = self.free_blocks.pop_front().ok_or(DriverError::CapacityExhausted)?;
                self.group_block.insert(group, b);
                self.block_logs.insert(b, BlockLog::new(g.data_bytes));
                b
            }
        };
        let ts = self.clock;
        self.clock += 1;
        let addr = PhysPageAddr::new(block, self.slot_of(pid));
        self.chip.program_page(addr, page, SpareInit::new(PageType::Original, Some(pid), Some(ts)))?;
        self.mapped.insert(pid);
        Ok(())
    }

    fn write_through(&mut self) -> Result<()> {
        let pending: Vec<PageId> = self
            .buffers
            .iter()
            .filter(|(_, b)| !b.records.is_empty())
            .map(|(&pid, _)| pid)
            .collect();
        for pid in pending {
            self.flush_pid_buffer(pid)?;
        }
        Ok(())
    }

    fn stats(&self) -> DriverStats {
        let ledger = self.chip.ledger();
        DriverStats {
            reads: ledger.reads,
            writes: ledger.writes,
            erases: ledger.erases,
            sim_time_us: ledger.sim_time_us,
            gc_invocations: self.merges,
            gc_time_us: self.merge_time_us,
            gc_writes: self.merge_writes,
            obsolete_marks: 0,
        }
    }

    fn chip(&self) -> &FlashChip {
        &self.chip
    }

    fn label(&self) -> &'static str {
        self.layout.label()
    }
}
