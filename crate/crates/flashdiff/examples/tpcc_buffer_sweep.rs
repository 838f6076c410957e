//! The TPC-C-like transaction mix through an LRU buffer: per-transaction
//! I/O time for each page-update method as the buffer grows.
//!
//! ```sh
//! cargo run --release --example tpcc_buffer_sweep
//! ```

use flashdiff::bench::harness::DriverKind;
use flashdiff::bench::tpcc::{run_tpcc_cell, TpccConfig};
use flashdiff::chip::TimingProfile;

fn main() {
    let cfg = TpccConfig {
        n_blocks: 256,
        timing: TimingProfile::standard(),
        db_bytes: 2 * 1024 * 1024,
        page_bytes: 2048,
        seed: 42,
        txns: 1_000,
        warmup_txns: 3_700,
        touches_per_txn: 10,
        update_touches: 9,
        pages_per_txn: 3,
        hot_page_frac: 0.2,
        hot_access_frac: 0.8,
        pct_changed: 2.0,
        audit: true,
    };
    let drivers = [
        DriverKind::Ipl64,
        DriverKind::Ipl18,
        DriverKind::Opu,
        DriverKind::Pdl2k,
        DriverKind::Pdl256,
    ];
    print!("{:<12}", "buffer %");
    for kind in drivers {
        print!("{:>12}", kind.label());
    }
    println!();
    for buffer_pct in [0.5, 1.0, 5.0, 10.0] {
        print!("{buffer_pct:<12}");
        for kind in drivers {
            let outcome = run_tpcc_cell(kind, &cfg, buffer_pct).unwrap();
            print!("{:>12.0}", outcome.io_us as f64 / outcome.txns as f64);
        }
        println!();
    }
    println!("\n(simulated microseconds of flash I/O per transaction)");
}
