//! A page-differential logging session: buffered differentials, the
//! one-page write buffer, flushing, and the two in-memory tables.
//!
//! ```sh
//! cargo run --example pdl_session
//! ```

use flashdiff::chip::{FlashChip, FlashGeometry, TimingProfile};
use flashdiff::driver::PageDriver;
use flashdiff::pdl::{PdlConfig, PdlDriver};

fn main() {
    let chip = FlashChip::new(FlashGeometry::desk(8), TimingProfile::standard()).unwrap();
    let mut driver = PdlDriver::new(chip, PdlConfig::whole_page());

    // load two logical pages (fresh allocations become base pages)
    driver.write_logical(1, &vec![0x11; 2048]).unwrap();
    driver.write_logical(2, &vec![0x22; 2048]).unwrap();
    println!("after load:       {:?}", stats_line(&driver));

    // small updates only read the base and buffer a differential
    let mut p1 = vec![0x11; 2048];
    p1[40..80].fill(0xAB);
    driver.write_logical(1, &p1).unwrap();
    let mut p2 = vec![0x22; 2048];
    p2[1000..1041].fill(0xCD);
    driver.write_logical(2, &p2).unwrap();
    println!("after 2 updates:  {:?} buffered pids {:?}", stats_line(&driver), driver.buffered_pids());

    // reads see buffered differentials (one chip read)
    assert_eq!(driver.read_logical(1).unwrap(), p1);

    // write-through makes them durable: both land in one differential page
    driver.write_through().unwrap();
    let tables = driver.tables();
    let (base1, diff1) = tables.mapping[&1];
    let (_, diff2) = tables.mapping[&2];
    println!("after flush:      {:?}", stats_line(&driver));
    println!("pid 1 -> base {base1}, differential page {}", diff1.unwrap());
    println!("pid 2 shares the differential page: {}", diff1 == diff2);
    println!("valid differentials in {}: {}", diff1.unwrap(), tables.vdct[&diff1.unwrap()]);

    // a whole-page change exceeds the budget: the page itself becomes a
    // new base page and the old state is obsoleted
    driver.write_logical(1, &vec![0x99; 2048]).unwrap();
    let tables = driver.tables();
    println!("after big update: pid 1 -> {:?}", tables.mapping[&1]);
    assert_eq!(driver.read_logical(1).unwrap(), vec![0x99; 2048]);
    assert_eq!(driver.read_logical(2).unwrap(), p2);
    driver.verify_tables();
    println!("final:            {:?}", stats_line(&driver));
}

fn stats_line(driver: &PdlDriver) -> (u64, u64, u64) {
    let s = driver.stats();
    (s.reads, s.writes, s.sim_time_us)
}
