//! Crash a page-differential driver mid-run and rebuild its tables from
//! the bare chip, then resume driving on the recovered state.
//!
//! ```sh
//! cargo run --example crash_and_recover
//! ```

use flashdiff::chip::{FlashChip, FlashGeometry, TimingProfile};
use flashdiff::driver::PageDriver;
use flashdiff::maintenance::crash::{inject_crash, CrashPlan};
use flashdiff::maintenance::recovery::{materialize, recover, scan_cost};
use flashdiff::pdl::{PdlConfig, PdlDriver};

fn main() {
    let geometry = FlashGeometry::desk(8);
    let timing = TimingProfile::standard();
    let mut chip = FlashChip::new(geometry, timing).unwrap();
    chip.enable_journal(); // record every mutation for crash injection
    let mut driver = PdlDriver::new(chip, PdlConfig::whole_page());

    for pid in 0..20u32 {
        driver.write_logical(pid, &vec![pid as u8; 2048]).unwrap();
    }
    // a durable checkpoint: everything buffered goes to flash
    let mut p7 = vec![7u8; 2048];
    p7[0..64].fill(0xAA);
    driver.write_logical(7, &p7).unwrap();
    driver.write_through().unwrap();
    let checkpoint_ops = driver.chip().journal().len();

    // more work after the checkpoint, some of it still volatile
    let mut p3 = vec![3u8; 2048];
    p3[100..164].fill(0xBB);
    driver.write_logical(3, &p3).unwrap(); // buffered only
    driver.write_logical(9, &vec![0x99; 2048]).unwrap(); // new base, durable

    let journal = driver.into_chip();
    let journal = journal.journal();
    println!("journal holds {} chip mutations; checkpoint at {}", journal.len(), checkpoint_ops);

    // power fails right after the last completed chip operation
    let mut crashed = inject_crash(geometry, timing, journal, CrashPlan::new(journal.len())).unwrap();
    println!(
        "scan of this chip costs {:.3} s simulated",
        scan_cost(&geometry, &timing) as f64 / 1e6
    );
    let state = recover(&mut crashed).unwrap();
    println!(
        "recovered {} logical pages, {} differential pages, {} repairs, next timestamp {}",
        state.tables.mapping.len(),
        state.tables.vdct.len(),
        state.mutations,
        state.next_timestamp,
    );

    // pid 7 was write-through-visible; pid 9's new base was durable by
    // itself; pid 3's differential only lived in the buffer and is gone
    assert_eq!(materialize(&mut crashed, &state.tables, 7).unwrap(), p7);
    assert_eq!(materialize(&mut crashed, &state.tables, 9).unwrap(), vec![0x99; 2048]);
    assert_eq!(materialize(&mut crashed, &state.tables, 3).unwrap(), vec![3u8; 2048]);
    println!("write-through data survived; buffered-only data rolled back, as designed");

    // a second scan is a fixpoint
    let again = recover(&mut crashed).unwrap();
    println!("second scan mutates {} pages (idempotent)", again.mutations);

    // resume a live driver on the recovered state
    let mut resumed = PdlDriver::resume(crashed, &state, PdlConfig::whole_page());
    resumed.write_logical(3, &p3).unwrap();
    assert_eq!(resumed.read_logical(3).unwrap(), p3);
    resumed.verify_tables();
    println!("resumed driver accepts new work");
}
