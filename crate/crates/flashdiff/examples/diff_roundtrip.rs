//! Computing, encoding and applying page differentials.
//!
//! ```sh
//! cargo run --example diff_roundtrip
//! ```

use flashdiff::diff::{decode_page, Differential};

fn main() {
    let mut base = vec![b'a'; 2048];
    base[0..16].copy_from_slice(b"hello flash page");

    // update the page twice in memory
    let mut current = base.clone();
    current[100..105].copy_from_slice(b"bbbbb");
    current[101..104].copy_from_slice(b"ccc");

    // the differential compares against the base only: one run "bcccb",
    // not the two-change history a log-based method would keep
    let d = Differential::compute(&base, &current, 42, 1);
    println!("runs: {}", d.runs().len());
    for run in d.runs() {
        println!(
            "  offset {} length {}: {:?}",
            run.offset,
            run.len(),
            String::from_utf8_lossy(&run.bytes)
        );
    }
    println!("encoded size: {} bytes (14-byte header + 4 bytes per run + payload)", d.encoded_size());

    // applying the differential to the base reproduces the current page
    assert_eq!(d.apply_to(&base).unwrap(), current);
    println!("apply(compute(base, current)) == current");

    // records pack back to back into a differential page; the erased tail
    // is the terminator
    let other = Differential::compute(&base, &{
        let mut p = base.clone();
        p[500] ^= 0xFF;
        p
    }, 43, 2);
    let mut page = vec![0xFF; 2048];
    let mut at = 0;
    for record in [&d, &other] {
        let bytes = record.encode();
        page[at..at + bytes.len()].copy_from_slice(&bytes);
        at += bytes.len();
    }
    let decoded = decode_page(&page).unwrap();
    println!(
        "one differential page holds {} records (pids {:?})",
        decoded.len(),
        decoded.iter().map(|r| r.pid).collect::<Vec<_>>()
    );
}
