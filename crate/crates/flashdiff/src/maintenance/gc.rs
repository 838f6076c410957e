//! Garbage-collection policy.
//!
//! Collection is triggered when no free erased page remains. The victim is
//! the block with the most obsolete pages (greedy), ties broken by lowest
//! block index; the block reserved for the collector itself is never a
//! candidate. A victim with zero obsolete pages would free nothing, so its
//! absence means the database is genuinely full.

/// Pick the collection victim, or `None` when no block has anything to
/// reclaim.
pub fn pick_victim(obsolete_per_block: &[u32], reserved: u32) -> Option<u32> {
    let mut best: Option<(u32, u32)> = None;
    for (block, &count) in obsolete_per_block.iter().enumerate() {
        let block = block as u32;
        if block == reserved || count == 0 {
            continue;
        }
        match best {
            Some((_, best_count)) if best_count >= count => {}
            _ => best = Some((block, count)),
        }
    }
    best.map(|(block, _)| block)
}
