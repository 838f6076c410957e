//! Flash-storage workbench: page-differential logging over an emulated NAND chip.
//!
//! The crate is organized in layers:
//!
//! - [`chip`]: a bit-accurate NAND flash emulator with simulated timing,
//!   obsolescence marking, erase-count accounting and a binary image format.
//! - [`diff`]: computing, encoding and applying page differentials (the
//!   byte-level difference between a base page and an up-to-date page).
//! - [`driver`]: the common driver contract every page-update method
//!   implements.
//! - [`pdl`]: the page-differential logging driver: differentials are
//!   buffered in a single page-sized write buffer and flushed to shared
//!   differential pages, so reflecting a logical page costs at most one
//!   data write and recreating one costs at most two reads.
//! - [`baseline`]: reference drivers: out-place update (OPU), in-place
//!   update (IPU) and in-page logging (IPL).
//! - [`maintenance`]: garbage collection policy, crash injection and the
//!   recovery scan that rebuilds the PDL tables from a chip image.
//! - [`bench`]: deterministic workload generation, the experiment runner,
//!   a TPC-C-like transaction mix and CSV/text reporting.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `flashdiff` binary for the experiment/recovery/selftest CLI.

pub mod baseline;
pub mod bench;
pub mod chip;
pub mod cli;
pub mod diff;
pub mod driver;
pub mod maintenance;
pub mod pdl;

pub use chip::{ChipError, ChipLedger, FlashChip, FlashGeometry, PageId, PhysPageAddr, TimingProfile};
pub use diff::{Differential, Run};
pub use driver::{DriverError, DriverStats, PageDriver};
pub use pdl::{PdlConfig, PdlDriver};
