//! Reference page-update methods behind the same driver contract:
//! out-place update, in-place update, and in-page logging.

mod ipl;
mod ipu;
mod opu;

pub use ipl::{IplDriver, IplLayout};
pub use ipu::IpuDriver;
pub use opu::OpuDriver;
