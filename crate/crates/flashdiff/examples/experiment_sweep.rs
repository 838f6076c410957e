//! Run a desk-scale experiment sweep programmatically and emit the CSV.
//! This is the library route to what `flashdiff run --exp 2` does.
//!
//! ```sh
//! cargo run --release --example experiment_sweep
//! ```

use flashdiff::bench::experiment::{run_experiment, ExperimentConfig};
use flashdiff::bench::harness::{DriverKind, WarmupSpec};
use flashdiff::bench::report::{emit_report, parse_csv, to_csv};

fn main() {
    let cfg = ExperimentConfig {
        db_bytes: 1024 * 1024,
        measure_ops: 2_000,
        warmup: WarmupSpec { gc_per_block: f64::MAX, max_ops: 12_000 },
        ..ExperimentConfig::default()
    };
    let drivers = [DriverKind::Ipl18, DriverKind::Opu, DriverKind::Pdl2k];
    let rows = run_experiment(2, &drivers, &cfg).unwrap();

    let csv_path = std::env::temp_dir().join("flashdiff_exp2.csv");
    let table = emit_report(&rows, Some(&csv_path)).unwrap();
    print!("{table}");
    println!("\ncsv written to {}", csv_path.display());

    // the CSV round-trips through the crate's own parser byte-for-byte
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let parsed = parse_csv(&text).unwrap();
    assert_eq!(to_csv(&parsed), text);
    println!("csv round-trip verified ({} rows)", parsed.len());
}
