//! Crash injection at chip-operation granularity.
//!
//! Page writes are atomic at the chip level, so a crash can only land
//! between chip operations, never inside one: the post-crash image is the
//! journal prefix replayed onto a fresh chip. In-memory driver state (tables
//! and the differential write buffer) is simply gone.

use crate::chip::{ChipError, ChipOp, FlashChip, FlashGeometry, TimingProfile};

/// A crash scenario: cut the recorded operation sequence at `crash_point`
/// completed operations.
#[derive(Debug, Clone, Copy)]
pub struct CrashPlan {
    pub crash_point: usize,
}

impl CrashPlan {
    pub fn new(crash_point: usize) -> Self {
        CrashPlan { crash_point }
    }
}

/// Materialize the chip image as of the last completed chip operation
/// before the crash point.
pub fn inject_crash(
    geometry: FlashGeometry,
    timing: TimingProfile,
    ops: &[ChipOp],
    plan: CrashPlan,
) -> Result<FlashChip, ChipError> {
    let cut = plan.crash_point.min(ops.len());
    FlashChip::replay(geometry, timing, &ops[..cut])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chip::{PageType, PhysPageAddr, SpareInit};

    #[test]
    fn crash_before_first_op_is_pristine() {
        let geometry = FlashGeometry::desk(2);
        let timing = TimingProfile::standard();
        let mut chip = FlashChip::new(geometry, timing).unwrap();
        chip.enable_journal();
        let page = vec![0u8; geometry.data_bytes];
        chip.program_page(PhysPageAddr::new(0, 0), &page, SpareInit::new(PageType::Data, None, None))
            .unwrap();
        let crashed = inject_crash(geometry, timing, chip.journal(), CrashPlan::new(0)).unwrap();
        let pristine = FlashChip::new(geometry, timing).unwrap();
        assert_eq!(crashed.to_image(), pristine.to_image());
    }

    #[test]
    fn crash_between_ops_keeps_the_prefix() {
        let geometry = FlashGeometry::desk(2);
        let timing = TimingProfile::standard();
        let mut chip = FlashChip::new(geometry, timing).unwrap();
        chip.enable_journal();
        let page = vec![0x5Au8; geometry.data_bytes];
        let a = PhysPageAddr::new(0, 0);
        chip.program_page(a, &page, SpareInit::new(PageType::Data, Some(1), Some(1))).unwrap();
        chip.set_obsolete(a).unwrap();
        let crashed = inject_crash(geometry, timing, chip.journal(), CrashPlan::new(1)).unwrap();
        assert_eq!(crashed.peek_data(a), &page[..]);
        assert!(crashed.peek_spare(a).valid, "crash landed before the obsolete mark");
    }
}
