//! Raw chip semantics: program/read/erase, bit monotonicity, the
//! simulated-time ledger, and the flat image format.
//!
//! ```sh
//! cargo run --example chip_basics
//! ```

use flashdiff::chip::{FlashChip, FlashGeometry, PageType, PhysPageAddr, SpareInit, TimingProfile};

fn main() {
    let geometry = FlashGeometry::desk(4); // 4 blocks x 64 pages x 2048+64 bytes
    let timing = TimingProfile::standard(); // 110 / 1010 / 1500 us
    let mut chip = FlashChip::new(geometry, timing).unwrap();

    let addr = PhysPageAddr::new(0, 0);
    let (fresh, spare) = chip.read_page(addr).unwrap();
    println!("erased page reads {:#04x}, type {:?}", fresh[0], spare.page_type);

    // writes can only clear bits (1 -> 0)
    let page = vec![0xF0u8; geometry.data_bytes];
    chip.program_page(addr, &page, SpareInit::new(PageType::Data, Some(7), Some(1))).unwrap();
    println!("programmed 0xF0 over 0xFF: stored {:#04x}", chip.peek_data(addr)[0]);

    let back_to_ones = vec![0xFFu8; geometry.data_bytes];
    let err = chip.program_page(addr, &back_to_ones, SpareInit::new(PageType::Data, None, None));
    println!("writing 0xFF over 0xF0 fails: {}", err.unwrap_err());

    // marking a page obsolete is a spare-only write and costs a write op
    chip.set_obsolete(addr).unwrap();
    println!("obsolete bit set, page valid = {}", chip.peek_spare(addr).valid);

    // only an erase brings the bits back
    chip.erase_block(0).unwrap();
    println!("after erase, page reads {:#04x} again", chip.peek_data(addr)[0]);

    let ledger = chip.ledger();
    println!(
        "ledger: {} reads, {} writes, {} erases -> {} us simulated ({} expected)",
        ledger.reads,
        ledger.writes,
        ledger.erases,
        ledger.sim_time_us,
        ledger.expected_time(chip.timing()),
    );
    println!("erase count for block 0: {}", ledger.erase_count_per_block[0]);

    // the whole chip serializes to a flat image and back, verbatim
    let image = chip.to_image();
    let restored = FlashChip::from_image(&image, timing).unwrap();
    println!(
        "image round-trip: {} bytes, identical = {}",
        image.len(),
        restored.to_image() == image
    );
}
