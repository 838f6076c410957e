//! The driver contract shared by every page-update method.
//!
//! A driver owns a [`FlashChip`] and exposes logical-page reads and writes.
//! Whole-page methods (PDL, OPU, IPU) only need `read_logical` and
//! `write_logical`; the tightly-coupled in-page logging driver additionally
//! receives each in-memory change through `log_update` before the page is
//! reflected.

use thiserror::Error;

use crate::chip::{ChipError, FlashChip, PageId};
use crate::diff::{CodecError, Run};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error(transparent)]
    Chip(#[from] ChipError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("logical page {0} is not mapped")]
    NotFound(PageId),
    #[error("flash capacity exhausted: no block with obsolete pages to reclaim")]
    CapacityExhausted,
    #[error("corrupted on-flash state: {0}")]
    Corruption(String),
}

pub type Result<T> = std::result::Result<T, DriverError>;

/// Flat statistics record exported by every driver for the harness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DriverStats {
    pub reads: u64,
    pub writes: u64,
    pub erases: u64,
    pub sim_time_us: u64,
    /// Garbage-collection (or block-merge) invocations.
    pub gc_invocations: u64,
    /// Simulated time spent inside garbage collection / merging.
    pub gc_time_us: u64,
    /// Chip writes issued inside garbage collection / merging.
    pub gc_writes: u64,
    /// Spare-only writes that marked pages obsolete.
    pub obsolete_marks: u64,
}

/// Drivers serialize their own operations; the object may move freely
/// between threads in between.
pub trait PageDriver: Send {
    /// Recreate a logical page from flash.
    fn read_logical(&mut self, pid: PageId) -> Result<Vec<u8>>;

    /// Hand the driver one in-memory change of a page. Only log-based
    /// drivers act on this; everyone else sees the final image in
    /// [`PageDriver::write_logical`].
    fn log_update(&mut self, _pid: PageId, _changes: &[Run]) -> Result<()> {
        Ok(())
    }

    /// Reflect a logical page into flash memory.
    fn write_logical(&mut self, pid: PageId, page: &[u8]) -> Result<()>;

    /// Force buffered data out to flash so it survives a crash.
    fn write_through(&mut self) -> Result<()>;

    fn stats(&self) -> DriverStats;

    fn chip(&self) -> &FlashChip;

    fn label(&self) -> &'static str;
}
