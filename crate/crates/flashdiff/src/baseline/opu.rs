//! Out-place update: reflecting a logical page writes it to a new physical
//! page and marks the old one obsolete. Reads go straight to the single
//! mapped page.

use std::collections::{BTreeMap, HashMap};

use crate::chip::{ChipError, FlashChip, PageId, PageType, PhysPageAddr, SpareInit};
use crate::driver::{DriverError, DriverStats, PageDriver, Result};
use crate::maintenance::gc::pick_victim;
use crate::pdl::Allocator;

pub struct OpuDriver {
    chip: FlashChip,
    mapping: BTreeMap<PageId, PhysPageAddr>,
    reverse: HashMap<PhysPageAddr, PageId>,
    alloc: Allocator,
    obsolete_per_block: Vec<u32>,
    clock: u64,
    gc_invocations: u64,
    gc_time_us: u64,
    gc_writes: u64,
    obsolete_marks: u64,
}

impl OpuDriver {
    pub fn new(chip: FlashChip) -> Self {
        let n_blocks = chip.geometry().n_blocks;
        let ppb = chip.geometry().pages_per_block;
        OpuDriver {
            chip,
            mapping: BTreeMap::new(),
            reverse: HashMap::new(),
            alloc: Allocator::new(n_blocks, ppb),
            obsolete_per_block: vec![0; n_blocks as usize],
            clock: 1,
            gc_invocations: 0,
            gc_time_us: 0,
            gc_writes: 0,
            obsolete_marks: 0,
        }
    }

    pub fn into_chip(self) -> FlashChip {
        self.chip
    }

    fn alloc_page(&mut self) -> Result<PhysPageAddr> {
        if let Some(addr) = self.alloc.alloc() {
            return Ok(addr);
        }
        self.collect_garbage()?;
        self.alloc.alloc().ok_or(DriverError::CapacityExhausted)
    }

    /// Reclaim the block with the most obsolete pages: live data pages move
    /// to the reserved block, then the victim is erased and takes over as
    /// the reserve.
    pub fn collect_garbage(&mut self) -> Result<()> {
        let t0 = self.chip.ledger().sim_time_us;
        let w0 = self.chip.ledger().writes;
        let victim = pick_victim(&self.obsolete_per_block, self.alloc.reserved())
            .ok_or(DriverError::CapacityExhausted)?;
        self.gc_invocations += 1;
        let target = self.alloc.reserved();
        let ppb = self.chip.geometry().pages_per_block;
        let mut cursor = 0u32;
        for p in 0..ppb {
            let addr = PhysPageAddr::new(victim, p);
            let Some(&pid) = self.reverse.get(&addr) else { continue };
            let (data, spare) = self.chip.read_page(addr)?;
            let dst = PhysPageAddr::new(target, cursor);
            cursor += 1;
            self.chip
                .program_page(dst, &data, SpareInit::new(PageType::Data, spare.pid, spare.timestamp))?;
            self.reverse.remove(&addr);
            self.reverse.insert(dst, pid);
            self.mapping.insert(pid, dst);
        }
        self.chip.erase_block(victim)?;
        self.obsolete_per_block[victim as usize] = 0;
        self.alloc.rotate_reserved(victim, cursor);
        self.gc_time_us += self.chip.ledger().sim_time_us - t0;
        self.gc_writes += self.chip.ledger().writes - w0;
        Ok(())
    }
}

impl PageDriver for OpuDriver {
    fn read_logical(&mut self, pid: PageId) -> Result<Vec<u8>> {
        let addr = *self.mapping.get(&pid).ok_or(DriverError::NotFound(pid))?;
        let (data, _) = self.chip.read_page(addr)?;
        Ok(data)
    }

    fn write_logical(&mut self, pid: PageId, page: &[u8]) -> Result<()> {
        let data_bytes = self.chip.geometry().data_bytes;
        if page.len() != data_bytes {
            return Err(ChipError::DataLength { expected: data_bytes, got: page.len() }.into());
        }
        let q = self.alloc_page()?;
        let ts = self.clock;
        self.clock += 1;
        self.chip.program_page(q, page, SpareInit::new(PageType::Data, Some(pid), Some(ts)))?;
        let old = self.mapping.insert(pid, q);
        self.reverse.insert(q, pid);
        if let Some(old) = old {
            self.reverse.remove(&old);
            self.chip.set_obsolete(old)?;
            self.obsolete_per_block[old.block as usize] += 1;
            self.obsolete_marks += 1;
        }
        Ok(())
    }

    fn write_through(&mut self) -> Result<()> {
        Ok(()) // nothing is buffered
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
        "OPU"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::{FlashGeometry, TimingProfile};

    fn driver(n_blocks: u32) -> OpuDriver {
        OpuDriver::new(FlashChip::new(FlashGeometry::desk(n_blocks), TimingProfile::standard()).unwrap())
    }

    fn page(b: u8) -> Vec<u8> {
        vec![b; 2048]
    }

    #[test]
    fn fresh_write_is_one_chip_write() {
        let mut d = driver(4);
        d.write_logical(1, &page(0x01)).unwrap();
        assert_eq!(d.stats().writes, 1);
        assert_eq!(d.stats().obsolete_marks, 0);
    }

    #[test]
    fn update_is_exactly_two_chip_writes() {
        let mut d = driver(4);
        d.write_logical(1, &page(0x01)).unwrap();
        let w0 = d.stats().writes;
        d.write_logical(1, &page(0x02)).unwrap();
        assert_eq!(d.stats().writes - w0, 2, "new page plus obsolete mark");
        assert_eq!(d.read_logical(1).unwrap(), page(0x02));
    }

    #[test]
    fn read_is_exactly_one_chip_read() {
        let mut d = driver(4);
        d.write_logical(1, &page(0x01)).unwrap();
        let r0 = d.stats().reads;
        let t0 = d.stats().sim_time_us;
        d.read_logical(1).unwrap();
        assert_eq!(d.stats().reads - r0, 1);
        assert_eq!(d.stats().sim_time_us - t0, 110);
    }

    #[test]
    fn missing_pid_is_not_found() {
        let mut d = driver(4);
        assert!(matches!(d.read_logical(9).unwrap_err(), DriverError::NotFound(9)));
    }

    #[test]
    fn collection_relocates_live_pages() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut d = driver(4);
        let n_pids = 96u32; // half the allocatable pages stay live
        let mut shadow: Vec<Vec<u8>> = Vec::new();
        for pid in 0..n_pids {
            let p = page(pid as u8);
            d.write_logical(pid, &p).unwrap();
            shadow.push(p);
        }
        for _ in 0..600 {
            let pid = rng.gen_range(0..n_pids);
            let p = page(rng.gen());
            d.write_logical(pid, &p).unwrap();
            shadow[pid as usize] = p;
        }
        assert!(d.stats().gc_invocations > 0);
        for pid in 0..n_pids {
            assert_eq!(d.read_logical(pid).unwrap(), shadow[pid as usize]);
        }
    }
}
