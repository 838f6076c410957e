//! Shared maintenance machinery: garbage-collection policy, crash
//! injection over the chip-operation journal, and the recovery scan that
//! rebuilds the page-differential tables from a bare chip image.

pub mod crash;
pub mod gc;
pub mod recovery;
