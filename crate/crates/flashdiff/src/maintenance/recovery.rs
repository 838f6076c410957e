//! Rebuilding the page mapping table and the valid-differential count table
//! from a bare chip, after the in-memory state has been lost.
//!
//! One ordered scan (blocks ascending, pages ascending) reads every page's
//! spare area, plus the data area of differential pages. For duplicate base
//! pages the newer creation timestamp wins and the loser is marked obsolete;
//! a differential is adopted only when it is newer than both the winning
//! base and any differential adopted so far. Differential pages left with no
//! adopted records are marked obsolete too. Marking useless pages obsolete
//! is the only way the scan mutates the chip, so running it again changes
//! nothing.

use std::collections::BTreeMap;

use crate::chip::{FlashChip, FlashGeometry, PageId, PageType, PhysPageAddr, TimingProfile};
use crate::diff::decode_page_lossy;
use crate::driver::{DriverError, Result};
use crate::pdl::PdlTables;

/// Everything the scan learned, enough to resume a driver afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredState {
    pub tables: PdlTables,
    /// One past the newest creation timestamp seen on flash.
    pub next_timestamp: u64,
    /// Programmed (non-free) pages per block.
    pub block_fill: Vec<u32>,
    /// Obsolete pages per block, including ones this scan marked.
    pub obsolete_per_block: Vec<u32>,
    /// Chip writes this run performed (obsoleting useless pages).
    pub mutations: u64,
    /// Skipped records or pages that did not decode cleanly.
    pub warnings: u64,
}

struct Scan<'a> {
    chip: &'a mut FlashChip,
    bases: BTreeMap<PageId, (PhysPageAddr, u64)>,
    diffs: BTreeMap<PageId, (PhysPageAddr, u64)>,
    vdct: BTreeMap<PhysPageAddr, u32>,
    obsolete_per_block: Vec<u32>,
    mutations: u64,
    warnings: u64,
    max_ts: u64,
}

impl Scan<'_> {
    fn mark_obsolete(&mut self, addr: PhysPageAddr) -> Result<()> {
        self.chip.set_obsolete(addr)?;
        self.obsolete_per_block[addr.block as usize] += 1;
        self.mutations += 1;
        Ok(())
    }

    fn drop_diff(&mut self, dp: PhysPageAddr) -> Result<()> {
        let count = self.vdct.get_mut(&dp).expect("dropped differential was counted");
        *count -= 1;
        if *count == 0 {
            self.vdct.remove(&dp);
            self.mark_obsolete(dp)?;
        }
        Ok(())
    }

    fn saw_base(&mut self, addr: PhysPageAddr, pid: PageId, ts: u64) -> Result<()> {
        self.max_ts = self.max_ts.max(ts);
        match self.bases.get(&pid).copied() {
            None => {
                self.bases.insert(pid, (addr, ts));
                self.drop_diff_older_than(pid, ts)?;
            }
            Some((old_addr, old_ts)) => {
                if ts > old_ts {
                    self.mark_obsolete(old_addr)?;
                    self.bases.insert(pid, (addr, ts));
                    self.drop_diff_older_than(pid, ts)?;
                } else {
                    // the scanned page is the stale duplicate
                    self.mark_obsolete(addr)?;
                }
            }
        }
        Ok(())
    }

    /// A base with timestamp `ts` supersedes any older differential.
    fn drop_diff_older_than(&mut self, pid: PageId, ts: u64) -> Result<()> {
        if let Some(&(dp, diff_ts)) = self.diffs.get(&pid) {
            if diff_ts < ts {
                self.diffs.remove(&pid);
                self.drop_diff(dp)?;
            }
        }
        Ok(())
    }

    fn saw_record(&mut self, page: PhysPageAddr, pid: PageId, ts: u64) -> Result<()> {
        self.max_ts = self.max_ts.max(ts);
        let newer_than_base = self.bases.get(&pid).is_none_or(|&(_, base_ts)| ts > base_ts);
        let newer_than_diff = self.diffs.get(&pid).is_none_or(|&(_, diff_ts)| ts > diff_ts);
        if !(newer_than_base && newer_than_diff) {
            return Ok(());
        }
        match self.diffs.insert(pid, (page, ts)) {
            Some((old_dp, _)) if old_dp != page => {
                self.drop_diff(old_dp)?;
                *self.vdct.entry(page).or_default() += 1;
            }
            Some(_) => {} // superseded within the same page; count unchanged
            None => *self.vdct.entry(page).or_default() += 1,
        }
        Ok(())
    }
}

/// Scan the chip and rebuild the tables. Costs one page read per physical
/// page plus one spare write per useless page found.
pub fn recover(chip: &mut FlashChip) -> Result<RecoveredState> {
    let geometry = *chip.geometry();
    let n_blocks = geometry.n_blocks as usize;
    let mut block_fill = vec![0u32; n_blocks];
    let mut scan = Scan {
        chip,
        bases: BTreeMap::new(),
        diffs: BTreeMap::new(),
        vdct: BTreeMap::new(),
        obsolete_per_block: vec![0; n_blocks],
        mutations: 0,
        warnings: 0,
        max_ts: 0,
    };
    for block in 0..geometry.n_blocks {
        for page in 0..geometry.pages_per_block {
            let addr = PhysPageAddr::new(block, page);
            let (data, spare) = scan.chip.read_page(addr)?;
            if spare.page_type == PageType::Free {
                continue;
            }
            block_fill[block as usize] += 1;
            if !spare.valid {
                scan.obsolete_per_block[block as usize] += 1;
                continue;
            }
            match spare.page_type {
                PageType::Base => match (spare.pid, spare.timestamp) {
                    (Some(pid), Some(ts)) => scan.saw_base(addr, pid, ts)?,
                    _ => scan.warnings += 1,
                },
                PageType::Differential => {
                    let (records, err) = decode_page_lossy(&data);
                    if err.is_some() {
                        scan.warnings += 1;
                    }
                    for d in records {
                        scan.saw_record(addr, d.pid, d.timestamp)?;
                    }
                    if scan.vdct.get(&addr).copied().unwrap_or(0) == 0 {
                        scan.mark_obsolete(addr)?;
                    }
                }
                // not a page-differential image; nothing to rebuild from it
                _ => scan.warnings += 1,
            }
        }
    }
    // a differential without any base cannot be materialized; drop it
    let orphans: Vec<PageId> =
        scan.diffs.keys().filter(|pid| !scan.bases.contains_key(pid)).copied().collect();
    for pid in orphans {
        scan.warnings += 1;
        let (dp, _) = scan.diffs.remove(&pid).unwrap();
        scan.drop_diff(dp)?;
    }
    let mut mapping = BTreeMap::new();
    for (&pid, &(base, _)) in &scan.bases {
        let diff = scan.diffs.get(&pid).map(|&(dp, _)| dp);
        mapping.insert(pid, (base, diff));
    }
    Ok(RecoveredState {
        tables: PdlTables { mapping, vdct: scan.vdct },
        next_timestamp: scan.max_ts + 1,
        block_fill,
        obsolete_per_block: scan.obsolete_per_block,
        mutations: scan.mutations,
        warnings: scan.warnings,
    })
}

/// Materialize one logical page from recovered tables, without a driver.
pub fn materialize(
    chip: &mut FlashChip,
    tables: &PdlTables,
    pid: PageId,
) -> Result<Vec<u8>> {
    let &(base_addr, diff_addr) = tables.mapping.get(&pid).ok_or(DriverError::NotFound(pid))?;
    let (base, _) = chip.read_page(base_addr)?;
    let Some(dp) = diff_addr else { return Ok(base) };
    let (data, _) = chip.read_page(dp)?;
    let (records, _) = decode_page_lossy(&data);
    let record = records
        .into_iter()
        .filter(|d| d.pid == pid)
        .max_by_key(|d| d.timestamp)
        .ok_or_else(|| DriverError::Corruption(format!("no differential for pid {pid} in {dp}")))?;
    Ok(record.apply_to(&base)?)
}

/// Simulated time for the recovery scan: every page is read once, spare and
/// data together in a single page read.
pub fn scan_cost(geometry: &FlashGeometry, timing: &TimingProfile) -> u64 {
    geometry.total_pages() * timing.t_read_us
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::{SpareInit, TimingProfile};
    use crate::diff::{Differential, Run};
    use crate::driver::PageDriver;
    use crate::pdl::{PdlConfig, PdlDriver};

    fn chip() -> FlashChip {
        FlashChip::new(FlashGeometry::desk(4), TimingProfile::standard()).unwrap()
    }

    fn base_page(chip: &mut FlashChip, addr: PhysPageAddr, pid: PageId, ts: u64, fill: u8) {
        let page = vec![fill; chip.geometry().data_bytes];
        chip.program_page(addr, &page, SpareInit::new(PageType::Base, Some(pid), Some(ts)))
            .unwrap();
    }

    fn diff_page(chip: &mut FlashChip, addr: PhysPageAddr, records: &[Differential]) {
        let mut image = vec![0xFF; chip.geometry().data_bytes];
        let mut off = 0;
        for d in records {
            let enc = d.encode();
            image[off..off + enc.len()].copy_from_slice(&enc);
            off += enc.len();
        }
        chip.program_page(addr, &image, SpareInit::new(PageType::Differential, None, None))
            .unwrap();
    }

    #[test]
    fn newer_duplicate_base_wins() {
        let mut c = chip();
        let old = PhysPageAddr::new(0, 0);
        let new = PhysPageAddr::new(0, 1);
        base_page(&mut c, old, 1, 5, 0xAA);
        base_page(&mut c, new, 1, 9, 0xBB);
        let state = recover(&mut c).unwrap();
        assert_eq!(state.tables.mapping[&1], (new, None));
        assert!(!c.peek_spare(old).valid, "stale base must be obsoleted");
        assert!(c.peek_spare(new).valid);
        assert_eq!(state.mutations, 1);
        assert_eq!(state.next_timestamp, 10);
    }

    #[test]
    fn scan_order_does_not_matter_for_duplicates() {
        // newer base first in scan order
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(0, 0), 1, 9, 0xBB);
        base_page(&mut c, PhysPageAddr::new(0, 1), 1, 5, 0xAA);
        let state = recover(&mut c).unwrap();
        assert_eq!(state.tables.mapping[&1], (PhysPageAddr::new(0, 0), None));
        assert!(!c.peek_spare(PhysPageAddr::new(0, 1)).valid);
    }

    #[test]
    fn differential_older_than_base_is_ignored() {
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(0, 0), 1, 10, 0xAA);
        let stale = Differential::new(1, 5, vec![Run::new(0, vec![1, 2, 3])]);
        let dp = PhysPageAddr::new(0, 1);
        diff_page(&mut c, dp, &[stale]);
        let state = recover(&mut c).unwrap();
        assert_eq!(state.tables.mapping[&1], (PhysPageAddr::new(0, 0), None));
        assert!(state.tables.vdct.is_empty());
        assert!(!c.peek_spare(dp).valid, "page without adopted records is obsoleted");
    }

    #[test]
    fn newer_differential_is_adopted() {
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(0, 0), 1, 10, 0xAA);
        let live = Differential::new(1, 12, vec![Run::new(4, vec![9, 9])]);
        let dp = PhysPageAddr::new(0, 1);
        diff_page(&mut c, dp, &[live]);
        let state = recover(&mut c).unwrap();
        assert_eq!(state.tables.mapping[&1], (PhysPageAddr::new(0, 0), Some(dp)));
        assert_eq!(state.tables.vdct[&dp], 1);
        let page = materialize(&mut c, &state.tables, 1).unwrap();
        assert_eq!(&page[..8], &[0xAA, 0xAA, 0xAA, 0xAA, 9, 9, 0xAA, 0xAA]);
    }

    #[test]
    fn newest_differential_steals_from_older_page() {
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(0, 0), 1, 1, 0xAA);
        base_page(&mut c, PhysPageAddr::new(0, 1), 2, 2, 0xCC);
        let dp_old = PhysPageAddr::new(0, 2);
        let dp_new = PhysPageAddr::new(0, 3);
        diff_page(
            &mut c,
            dp_old,
            &[
                Differential::new(1, 5, vec![Run::new(0, vec![1])]),
                Differential::new(2, 6, vec![Run::new(0, vec![2])]),
            ],
        );
        diff_page(&mut c, dp_new, &[Differential::new(1, 8, vec![Run::new(0, vec![3])])]);
        let state = recover(&mut c).unwrap();
        assert_eq!(state.tables.mapping[&1].1, Some(dp_new));
        assert_eq!(state.tables.mapping[&2].1, Some(dp_old));
        assert_eq!(state.tables.vdct[&dp_old], 1);
        assert_eq!(state.tables.vdct[&dp_new], 1);
        assert!(c.peek_spare(dp_old).valid, "page still holds pid 2's differential");
        assert_eq!(materialize(&mut c, &state.tables, 1).unwrap()[0], 3);
    }

    #[test]
    fn recovery_is_idempotent() {
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(0, 0), 1, 5, 0xAA);
        base_page(&mut c, PhysPageAddr::new(0, 1), 1, 9, 0xBB);
        diff_page(&mut c, PhysPageAddr::new(0, 2), &[Differential::new(1, 7, vec![Run::new(0, vec![1])])]);
        let first = recover(&mut c).unwrap();
        assert!(first.mutations > 0);
        let image_after_first = c.to_image();
        let second = recover(&mut c).unwrap();
        assert_eq!(second.mutations, 0, "second run must be a fixpoint");
        assert_eq!(second.tables, first.tables);
        assert_eq!(c.to_image(), image_after_first);
    }

    #[test]
    fn recovered_tables_match_live_driver_after_write_through() {
        let mut driver = PdlDriver::new(chip(), PdlConfig::whole_page());
        let page = |b: u8| vec![b; 2048];
        for pid in 0..40u32 {
            driver.write_logical(pid, &page(pid as u8)).unwrap();
        }
        for pid in (0..40u32).step_by(3) {
            let mut p = page(pid as u8);
            p[100..140].fill(0x5A);
            driver.write_logical(pid, &p).unwrap();
        }
        driver.write_through().unwrap();
        let expected = driver.tables();
        let mut c = FlashChip::from_image(&driver.into_chip().to_image(), TimingProfile::standard())
            .unwrap();
        let state = recover(&mut c).unwrap();
        assert_eq!(state.tables, expected);
        assert_eq!(state.mutations, 0, "a clean image needs no repairs");

        // and the resumed driver keeps working
        let mut resumed = PdlDriver::resume(c, &state, PdlConfig::whole_page());
        for pid in 0..40u32 {
            resumed.read_logical(pid).unwrap();
        }
        let mut p = page(7);
        p[0..64].fill(0x11);
        resumed.write_logical(7, &p).unwrap();
        assert_eq!(resumed.read_logical(7).unwrap(), p);
        resumed.verify_tables();
    }

    #[test]
    fn corrupt_differential_records_are_skipped_with_warnings() {
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(0, 0), 1, 1, 0xAA);
        let good = Differential::new(1, 5, vec![Run::new(0, vec![7, 7])]);
        let mut image = vec![0xFF; c.geometry().data_bytes];
        let enc = good.encode();
        image[..enc.len()].copy_from_slice(&enc);
        // an impossible second record: claims two runs, provides none
        let mut bad = Differential::new(2, 6, vec![Run::new(4, vec![1])]).encode();
        bad[12..14].copy_from_slice(&2u16.to_le_bytes());
        image[enc.len()..enc.len() + bad.len()].copy_from_slice(&bad);
        c.program_page(
            PhysPageAddr::new(0, 1),
            &image,
            SpareInit::new(PageType::Differential, None, None),
        )
        .unwrap();
        let state = recover(&mut c).unwrap();
        assert!(state.warnings > 0, "the malformed record must be reported");
        // the record decoded before the corruption is still adopted
        assert_eq!(state.tables.mapping[&1].1, Some(PhysPageAddr::new(0, 1)));
        assert_eq!(materialize(&mut c, &state.tables, 1).unwrap()[..2], [7, 7]);
    }

    #[test]
    fn scan_reads_every_page_once() {
        let mut c = chip();
        base_page(&mut c, PhysPageAddr::new(1, 0), 3, 1, 0x00);
        let reads_before = c.ledger().reads;
        recover(&mut c).unwrap();
        let pages = c.geometry().total_pages();
        assert_eq!(c.ledger().reads - reads_before, pages);
    }

    #[test]
    fn scan_cost_examples() {
        let timing = TimingProfile::standard();
        // 1 GiB of data: 8192 blocks of 64 pages -> within 10% of 60 s
        let gib = FlashGeometry::desk(8192);
        let cost = scan_cost(&gib, &timing);
        assert_eq!(cost, 524_288 * 110);
        let sixty_s = 60_000_000u64;
        assert!(cost.abs_diff(sixty_s) <= sixty_s / 10);
        // desk scale: 16,384 pages at 110 us
        let desk = FlashGeometry::desk(256);
        assert_eq!(scan_cost(&desk, &timing), 16_384 * 110);
        // monotone in page count
        assert!(scan_cost(&desk, &timing) < scan_cost(&gib, &timing));
    }
}
