//! Deterministic workload generation.
//!
//! One update operation models: read the addressed page, change it in
//! memory `n_updates_till_write` times, then reflect it back into flash.
//! Each change touches `pct_changed` percent of the page's bytes, split
//! into one to four randomly placed disjoint runs. Read-only operations
//! just recreate the page. A fixed seed reproduces the stream exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::chip::PageId;
use crate::diff::Run;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadParams {
    /// In-memory changes applied to a page between recreation and reflection.
    pub n_updates_till_write: u32,
    /// Percent of page bytes changed by one in-memory update.
    pub pct_changed: f64,
    /// Percent of operations that are updates (the rest are read-only).
    pub pct_update_ops: f64,
    /// Database size in bytes; determines the logical page count.
    pub db_bytes: u64,
    /// Logical page size in bytes (equals the physical data area).
    pub page_bytes: usize,
    /// RNG seed; identical seeds give identical op streams.
    pub seed: u64,
}

impl WorkloadParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=100.0).contains(&self.pct_changed) {
            return Err("pct_changed must be within [0, 100]".into());
        }
        if !(0.0..=100.0).contains(&self.pct_update_ops) {
            return Err("pct_update_ops must be within [0, 100]".into());
        }
        if self.page_bytes == 0 || !self.db_bytes.is_multiple_of(self.page_bytes as u64) {
            return Err("db_bytes must be a multiple of page_bytes".into());
        }
        if self.n_updates_till_write == 0 {
            return Err("n_updates_till_write must be at least 1".into());
        }
        Ok(())
    }

    pub fn n_pids(&self) -> u32 {
        (self.db_bytes / self.page_bytes as u64) as u32
    }

    /// Bytes changed by one in-memory update.
    pub fn changed_bytes(&self) -> usize {
        (self.pct_changed / 100.0 * self.page_bytes as f64).round() as usize
    }
}

/// One operation of the stream.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadOp {
    Read { pid: PageId },
    /// `change_sets[i]` is the i-th in-memory update before reflection.
    Update { pid: PageId, change_sets: Vec<Vec<Run>> },
}

impl WorkloadOp {
    pub fn pid(&self) -> PageId {
        match self {
            WorkloadOp::Read { pid } | WorkloadOp::Update { pid, .. } => *pid,
        }
    }
}

/// Infinite deterministic op stream.
pub struct Workload {
    params: WorkloadParams,
    rng: ChaCha12Rng,
}

impl Workload {
    pub fn new(params: WorkloadParams) -> Self {
        params.validate().expect("invalid workload parameters");
        let rng = ChaCha12Rng::seed_from_u64(params.seed);
        Workload { params, rng }
    }

    pub fn params(&self) -> &WorkloadParams {
        &self.params
    }

    /// Deterministic initial content for loading the database.
    pub fn initial_page(seed: u64, pid: PageId, page_bytes: usize) -> Vec<u8> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(pid as u64 + 1)));
        (0..page_bytes).map(|_| rng.gen()).collect()
    }

    fn change_set(&mut self) -> Vec<Run> {
        let total = self.params.changed_bytes().max(1).min(self.params.page_bytes);
        gen_change_set(&mut self.rng, self.params.page_bytes, total)
    }

    pub fn next_op(&mut self) -> WorkloadOp {
        let pid = self.rng.gen_range(0..self.params.n_pids());
        let is_update = self.rng.gen_range(0.0..100.0) < self.params.pct_update_ops;
        if !is_update {
            return WorkloadOp::Read { pid };
        }
        let change_sets =
            (0..self.params.n_updates_till_write).map(|_| self.change_set()).collect();
        WorkloadOp::Update { pid, change_sets }
    }
}

impl Iterator for Workload {
    type Item = WorkloadOp;

    fn next(&mut self) -> Option<WorkloadOp> {
        Some(self.next_op())
    }
}

/// One in-memory update: `total` randomly placed changed bytes, split into
/// one to four disjoint runs of fresh random content.
pub fn gen_change_set(rng: &mut impl Rng, page_bytes: usize, total: usize) -> Vec<Run> {
    let total = total.clamp(1, page_bytes);
    let max_runs = total.min(4);
    let n_runs = rng.gen_range(1..=max_runs);
    // split `total` into n_runs positive parts
    let mut lens = vec![1usize; n_runs];
    for _ in 0..total - n_runs {
        lens[rng.gen_range(0..n_runs)] += 1;
    }
    // place the runs without overlap; retry on collision, fall back to one
    // contiguous run
    'attempt: for _ in 0..16 {
        let mut placed: Vec<(usize, usize)> = Vec::with_capacity(n_runs);
        for &len in &lens {
            let offset = rng.gen_range(0..=page_bytes - len);
            placed.push((offset, len));
        }
        placed.sort_unstable();
        for window in placed.windows(2) {
            if window[0].0 + window[0].1 > window[1].0 {
                continue 'attempt;
            }
        }
        return placed
            .into_iter()
            .map(|(offset, len)| Run::new(offset, (0..len).map(|_| rng.gen()).collect()))
            .collect();
    }
    let offset = rng.gen_range(0..=page_bytes - total);
    vec![Run::new(offset, (0..total).map(|_| rng.gen()).collect())]
}

/// Apply one change set to an in-memory page image.
pub fn apply_changes(page: &mut [u8], changes: &[Run]) {
    for run in changes {
        page[run.offset..run.end()].copy_from_slice(&run.bytes);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> WorkloadParams {
        WorkloadParams {
            n_updates_till_write: 1,
            pct_changed: 2.0,
            pct_update_ops: 100.0,
            db_bytes: 64 * 2048,
            page_bytes: 2048,
            seed: 7,
        }
    }

    #[test]
    fn two_percent_of_a_page_is_41_bytes() {
        assert_eq!(params().changed_bytes(), 41);
    }

    #[test]
    fn zero_update_ratio_gives_pure_reads() {
        let mut w = Workload::new(WorkloadParams { pct_update_ops: 0.0, ..params() });
        for _ in 0..200 {
            assert!(matches!(w.next_op(), WorkloadOp::Read { .. }));
        }
    }

    #[test]
    fn update_changes_exactly_the_requested_bytes() {
        let mut w = Workload::new(params());
        for _ in 0..100 {
            if let WorkloadOp::Update { change_sets, .. } = w.next_op() {
                for set in change_sets {
                    assert!((1..=4).contains(&set.len()));
                    let total: usize = set.iter().map(Run::len).sum();
                    assert_eq!(total, 41);
                    // runs are disjoint and in order
                    for pair in set.windows(2) {
                        assert!(pair[0].end() <= pair[1].offset);
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_seed_replays_identically() {
        let a: Vec<WorkloadOp> = Workload::new(params()).take(500).collect();
        let b: Vec<WorkloadOp> = Workload::new(params()).take(500).collect();
        assert_eq!(a, b);
        let c: Vec<WorkloadOp> =
            Workload::new(WorkloadParams { seed: 8, ..params() }).take(500).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn initial_pages_are_deterministic_per_pid() {
        let p1 = Workload::initial_page(1, 0, 2048);
        let p2 = Workload::initial_page(1, 0, 2048);
        assert_eq!(p1, p2);
        assert_ne!(p1, Workload::initial_page(1, 1, 2048));
    }
}
