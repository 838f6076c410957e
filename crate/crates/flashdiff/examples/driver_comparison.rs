//! Head-to-head of the page-update methods on the same update workload:
//! read, write and overall simulated time per operation, plus erases.
//!
//! ```sh
//! cargo run --release --example driver_comparison
//! ```

use flashdiff::bench::harness::{run_cell, CellConfig, DriverKind, WarmupSpec};
use flashdiff::bench::workload::WorkloadParams;
use flashdiff::chip::TimingProfile;

fn main() {
    let workload = WorkloadParams {
        n_updates_till_write: 1,
        pct_changed: 2.0,
        pct_update_ops: 100.0,
        db_bytes: 4 * 1024 * 1024,
        page_bytes: 2048,
        seed: 42,
    };
    println!(
        "{:<10} {:>9} {:>9} {:>9} {:>9} {:>11}",
        "driver", "read", "write", "gc", "overall", "erases/op"
    );
    for kind in [
        DriverKind::Ipl64,
        DriverKind::Ipl18,
        DriverKind::Opu,
        DriverKind::Pdl2k,
        DriverKind::Pdl256,
    ] {
        let cfg = CellConfig {
            n_blocks: 256,
            timing: TimingProfile::standard(),
            workload: workload.clone(),
            warmup: WarmupSpec { gc_per_block: 1.0, max_ops: 30_000 },
            measure_ops: 8_000,
            audit: true,
            warmup_workload: None,
        };
        let outcome = run_cell(kind, &cfg).unwrap();
        println!(
            "{:<10} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>11.5}",
            outcome.label,
            outcome.read_us_per_op(),
            outcome.write_us_per_op(),
            outcome.gc_us_per_op(),
            outcome.overall_us_per_op(),
            outcome.erases_per_op(),
        );
    }
    println!("\n(all times are simulated microseconds per update operation)");
}
