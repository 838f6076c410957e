//! In-place update: every logical page lives at a fixed physical page, so
//! overwriting it means reading the rest of the block, erasing the block,
//! and rewriting everything. Kept for cost-model comparisons; nobody would
//! ship this.

use std::collections::BTreeMap;

use crate::chip::{ChipError, FlashChip, PageId, PageType, PhysPageAddr, SpareInit};
use crate::driver::{DriverError, DriverStats, PageDriver, Result};

pub struct IpuDriver {
    chip: FlashChip,
    mapped: BTreeMap<PageId, PhysPageAddr>,
    clock: u64,
}

impl IpuDriver {
    pub fn new(chip: FlashChip) -> Self {
        IpuDriver { chip, mapped: BTreeMap::new(), clock: 1 }
    }

    pub fn into_chip(self) -> FlashChip {
        self.chip
    }

    fn static_addr(&self, pid: PageId) -> Result<PhysPageAddr> {
        let g = self.chip.geometry();
        let addr = PhysPageAddr::new(pid / g.pages_per_block, pid % g.pages_per_block);
        if g.contains(addr) {
            Ok(addr)
        } else {
            Err(DriverError::CapacityExhausted)
        }
    }
}

impl PageDriver for IpuDriver {
    fn read_logical(&mut self, pid: PageId) -> Result<Vec<u8>> {
        let addr = *self.mapped.get(&pid).ok_or(DriverError::NotFound(pid))?;
        let (data, _) = self.chip.read_page(addr)?;
        Ok(data)
    }

    fn write_logical(&mut self, pid: PageId, page: &[u8]) -> Result<()> {
        let g = *self.chip.geometry();
        if page.len() != g.data_bytes {
            return Err(ChipError::DataLength { expected: g.data_bytes, got: page.len() }.into());
        }
        let addr = self.static_addr(pid)?;
        let fresh = !self.mapped.contains_key(&pid);
        if fresh && self.chip.peek_spare(addr).page_type == PageType::Free {
            // initial load into an erased slot: a plain write suffices
            let ts = self.clock;
            self.clock += 1;
            self.chip.program_page(addr, page, SpareInit::new(PageType::Data, Some(pid), Some(ts)))?;
            self.mapped.insert(pid, addr);
            return Ok(());
        }
        // the literal four-step overwrite: read the co-resident pages,
        // erase the block, write the target, write everything back
        let mut saved: Vec<(PhysPageAddr, Vec<u8>, SpareInit)> = Vec::new();
        for p in 0..g.pages_per_block {
            if p == addr.page {
                continue;
            }
            let other = PhysPageAddr::new(addr.block, p);
            let (data, spare) = self.chip.read_page(other)?;
            saved.push((other, data, SpareInit::new(spare.page_type, spare.pid, spare.timestamp)));
        }
        self.chip.erase_block(addr.block)?;
        let ts = self.clock;
        self.clock += 1;
        self.chip.program_page(addr, page, SpareInit::new(PageType::Data, Some(pid), Some(ts)))?;
        for (other, data, spare) in saved {
            self.chip.program_page(other, &data, spare)?;
        }
        self.mapped.insert(pid, addr);
        Ok(())
    }

    fn write_through(&mut self) -> Result<()> {
        Ok(())
    }

    fn stats(&self) -> DriverStats {
        let ledger = self.chip.ledger();
        DriverStats {
            reads: ledger.reads,
            writes: ledger.writes,
            erases: ledger.erases,
            sim_time_us: ledger.sim_time_us,
            ..DriverStats::default()
        }
    }

    fn chip(&self) -> &FlashChip {
        &self.chip
    }

    fn label(&self) -> &'static str {
        "IPU"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::{FlashGeometry, TimingProfile};

    fn driver() -> IpuDriver {
        IpuDriver::new(FlashChip::new(FlashGeometry::desk(4), TimingProfile::standard()).unwrap())
    }

    fn page(b: u8) -> Vec<u8> {
        vec![b; 2048]
    }

    #[test]
    fn update_runs_the_four_step_procedure() {
        let mut d = driver();
        for pid in 0..8 {
            d.write_logical(pid, &page(pid as u8)).unwrap();
        }
        let before = d.stats();
        d.write_logical(3, &page(0x99)).unwrap();
        let after = d.stats();
        assert_eq!(after.reads - before.reads, 63);
        assert_eq!(after.writes - before.writes, 64);
        assert_eq!(after.erases - before.erases, 1);
        // 63 reads + 1 erase + 64 writes on the datasheet profile
        assert_eq!(after.sim_time_us - before.sim_time_us, 63 * 110 + 1500 + 64 * 1010);
    }

    #[test]
    fn co_resident_pages_survive_an_update() {
        let mut d = driver();
        for pid in 0..8 {
            d.write_logical(pid, &page(pid as u8)).unwrap();
        }
        d.write_logical(3, &page(0x99)).unwrap();
        for pid in 0..8 {
            let expected = if pid == 3 { page(0x99) } else { page(pid as u8) };
            assert_eq!(d.read_logical(pid).unwrap(), expected, "pid {pid}");
        }
    }

    #[test]
    fn read_is_one_chip_read() {
        let mut d = driver();
        d.write_logical(0, &page(1)).unwrap();
        let r0 = d.stats().reads;
        assert_eq!(d.read_logical(0).unwrap(), page(1));
        assert_eq!(d.stats().reads - r0, 1);
    }
}
