//! Page differentials: compute, encode, decode, apply.
//!
//! A differential is the byte-level difference between a base page and the
//! up-to-date logical page, tagged with the page id and a creation
//! timestamp. On flash it is encoded as:
//!
//! ```text
//! record  := pid:u32le  ts:u64le  run_count:u16le  run*
//! run     := offset:u16le  length:u16le  payload
//! ```
//!
//! Records are packed back to back in a differential page; the unused tail
//! of the page stays erased (all 0xFF) and a `run_count` of 0xFFFF marks the
//! start of that padding. Runs are the maximal differing byte ranges, each
//! paying its own four-byte header: that per-run metadata is what lets a
//! heavily updated page outgrow the differential budget and fall back to a
//! fresh base page.

use thiserror::Error;

use crate::chip::PageId;

/// Record header: pid (4) + timestamp (8) + run count (2).
pub const RECORD_HEADER_BYTES: usize = 14;
/// Run header: offset (2) + length (2).
pub const RUN_HEADER_BYTES: usize = 4;

const PADDING_RUN_COUNT: u16 = 0xFFFF;

/// One contiguous range of replacement bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub offset: usize,
    pub bytes: Vec<u8>,
}

impl Run {
    pub fn new(offset: usize, bytes: Vec<u8>) -> Self {
        Run { offset, bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn end(&self) -> usize {
        self.offset + self.bytes.len()
    }
}

/// Upper bound on the encoded size of a differential a driver will store;
/// anything larger is written as a fresh base page instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiffBudget {
    pub max_bytes: usize,
}

impl DiffBudget {
    pub fn new(max_bytes: usize) -> Self {
        DiffBudget { max_bytes }
    }

    pub fn admits(&self, d: &Differential) -> bool {
        d.encoded_size() <= self.max_bytes
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("run [{offset}, {end}) exceeds page of {page} bytes")]
    RunOutOfBounds { offset: usize, end: usize, page: usize },
    #[error("malformed differential at byte {at}: {reason}")]
    Malformed { at: usize, reason: &'static str },
}

/// A normalized differential: runs sorted by offset, non-overlapping,
/// non-adjacent, every run non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Differential {
    pub pid: PageId,
    pub timestamp: u64,
    runs: Vec<Run>,
}

impl Differential {
    /// Build from caller-supplied runs, normalizing order and splicing
    /// overlapping or touching ranges (later bytes win on overlap).
    pub fn new(pid: PageId, timestamp: u64, mut runs: Vec<Run>) -> Self {
        runs.retain(|r| !r.is_empty());
        runs.sort_by_key(|r| r.offset);
        let mut merged: Vec<Run> = Vec::with_capacity(runs.len());
        for run in runs {
            match merged.last_mut() {
                Some(prev) if run.offset <= prev.end() => {
                    let tail = if run.end() < prev.end() {
                        prev.bytes[run.end() - prev.offset..].to_vec()
                    } else {
                        Vec::new()
                    };
                    prev.bytes.truncate(run.offset - prev.offset);
                    prev.bytes.extend_from_slice(&run.bytes);
                    prev.bytes.extend_from_slice(&tail);
                }
                _ => merged.push(run),
            }
        }
        Differential { pid, timestamp, runs: merged }
    }

    /// Compare two page images and collect the maximal differing byte
    /// ranges.
    pub fn compute(base: &[u8], current: &[u8], pid: PageId, timestamp: u64) -> Self {
        assert_eq!(base.len(), current.len(), "page images must match in size");
        let mut runs = Vec::new();
        let mut i = 0;
        while i < base.len() {
            if base[i] == current[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < base.len() && base[i] != current[i] {
                i += 1;
            }
            runs.push(Run::new(start, current[start..i].to_vec()));
        }
        Differential { pid, timestamp, runs }
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn is_identity(&self) -> bool {
        self.runs.is_empty()
    }

    /// Replace each run's range in `base`, yielding the patched page.
    pub fn apply_to(&self, base: &[u8]) -> Result<Vec<u8>, CodecError> {
        let mut page = base.to_vec();
        for run in &self.runs {
            if run.end() > page.len() {
                return Err(CodecError::RunOutOfBounds {
                    offset: run.offset,
                    end: run.end(),
                    page: page.len(),
                });
            }
            page[run.offset..run.end()].copy_from_slice(&run.bytes);
        }
        Ok(page)
    }

    /// Exact byte count of the encoded record.
    pub fn encoded_size(&self) -> usize {
        RECORD_HEADER_BYTES
            + self.runs.iter().map(|r| RUN_HEADER_BYTES + r.len()).sum::<usize>()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.pid.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&(self.runs.len() as u16).to_le_bytes());
        for run in &self.runs {
            out.extend_from_slice(&(run.offset as u16).to_le_bytes());
            out.extend_from_slice(&(run.len() as u16).to_le_bytes());
            out.extend_from_slice(&run.bytes);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_size());
        self.encode_into(&mut out);
        out
    }
}

/// Decode every record packed in a differential page's data area. The
/// all-0xFF tail is treated as padding and skipped.
pub fn decode_page(data: &[u8]) -> Result<Vec<Differential>, CodecError> {
    let (records, err) = decode_page_lossy(data);
    match err {
        Some(e) => Err(e),
        None => Ok(records),
    }
}

/// Like [`decode_page`], but returns the records decoded before the first
/// malformed byte together with the error, instead of failing outright.
/// Recovery uses this to salvage what it can from a corrupted page.
pub fn decode_page_lossy(data: &[u8]) -> (Vec<Differential>, Option<CodecError>) {
    let mut records = Vec::new();
    let mut at = 0;
    while at < data.len() {
        let rest = &data[at..];
        if rest.len() < RECORD_HEADER_BYTES {
            if rest.iter().all(|&b| b == 0xFF) {
                break;
            }
            return (records, Some(CodecError::Malformed { at, reason: "truncated record header" }));
        }
        let run_count = u16::from_le_bytes(rest[12..14].try_into().unwrap());
        if run_count == PADDING_RUN_COUNT {
            break;
        }
        let pid = u32::from_le_bytes(rest[0..4].try_into().unwrap());
        let ts = u64::from_le_bytes(rest[4..12].try_into().unwrap());
        if pid == u32::MAX {
            return (records, Some(CodecError::Malformed { at, reason: "reserved pid" }));
        }
        let mut pos = RECORD_HEADER_BYTES;
        let mut runs = Vec::with_capacity(run_count as usize);
        let mut prev_end = 0usize;
        for _ in 0..run_count {
            if rest.len() < pos + RUN_HEADER_BYTES {
                return (records, Some(CodecError::Malformed { at: at + pos, reason: "truncated run header" }));
            }
            let offset = u16::from_le_bytes(rest[pos..pos + 2].try_into().unwrap()) as usize;
            let len = u16::from_le_bytes(rest[pos + 2..pos + 4].try_into().unwrap()) as usize;
            pos += RUN_HEADER_BYTES;
            if len == 0 {
                return (records, Some(CodecError::Malformed { at: at + pos, reason: "empty run" }));
            }
            if rest.len() < pos + len {
                return (records, Some(CodecError::Malformed { at: at + pos, reason: "truncated run payload" }));
            }
            if !runs.is_empty() && offset < prev_end {
                return (records, Some(CodecError::Malformed { at: at + pos, reason: "runs out of order" }));
            }
            runs.push(Run::new(offset, rest[pos..pos + len].to_vec()));
            prev_end = offset + len;
            pos += len;
        }
        records.push(Differential { pid, timestamp: ts, runs });
        at += pos;
    }
    (records, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PAGE: usize = 2048;

    fn page(byte: u8) -> Vec<u8> {
        vec![byte; PAGE]
    }

    #[test]
    fn equal_pages_give_empty_differential() {
        let base = page(0xAA);
        let d = Differential::compute(&base, &base, 1, 1);
        assert!(d.is_identity());
        assert_eq!(d.runs().len(), 0);
        assert_eq!(d.apply_to(&base).unwrap(), base);
    }

    #[test]
    fn overlapping_updates_collapse_to_one_run() {
        // base ...aaaaaa... updated twice to ...bcccba...: the differential
        // carries the single range "bcccb", not two update logs.
        let base = page(b'a');
        let mut current = base.clone();
        current[100..105].copy_from_slice(b"bcccb");
        let d = Differential::compute(&base, &current, 1, 1);
        assert_eq!(d.runs().len(), 1);
        assert_eq!(d.runs()[0].offset, 100);
        assert_eq!(d.runs()[0].bytes, b"bcccb");
        assert_eq!(d.apply_to(&base).unwrap(), current);
    }

    #[test]
    fn separated_changes_stay_separate_runs() {
        let base = page(0);
        let mut current = base.clone();
        current[10] = 1;
        current[12] = 1; // one unchanged byte in between: two runs
        let d = Differential::compute(&base, &current, 1, 1);
        assert_eq!(d.runs().len(), 2);
        assert_eq!(d.runs()[0].offset, 10);
        assert_eq!(d.runs()[0].len(), 1);
        assert_eq!(d.runs()[1].offset, 12);
        assert_eq!(d.encoded_size(), 14 + (4 + 1) + (4 + 1));
        assert_eq!(d.apply_to(&base).unwrap(), current);
    }

    #[test]
    fn empty_differential_leaves_base_unchanged() {
        let base = page(0x42);
        let d = Differential::new(9, 3, vec![]);
        assert_eq!(d.apply_to(&base).unwrap(), base);
    }

    #[test]
    fn full_page_run_replaces_everything() {
        let base = page(0x00);
        let replacement = page(0x99);
        let d = Differential::new(9, 3, vec![Run::new(0, replacement.clone())]);
        assert_eq!(d.apply_to(&base).unwrap(), replacement);
    }

    #[test]
    fn run_outside_page_is_a_corruption_error() {
        let d = Differential::new(1, 1, vec![Run::new(PAGE - 2, vec![0, 0, 0, 0])]);
        assert!(matches!(d.apply_to(&page(0)), Err(CodecError::RunOutOfBounds { .. })));
    }

    #[test]
    fn encoded_size_examples() {
        let empty = Differential::new(1, 1, vec![]);
        assert_eq!(empty.encoded_size(), 14);
        let one = Differential::new(1, 1, vec![Run::new(10, vec![0; 5])]);
        assert_eq!(one.encoded_size(), 14 + 4 + 5);
        let two = Differential::new(1, 1, vec![Run::new(10, vec![0; 5]), Run::new(100, vec![0; 3])]);
        assert!(two.encoded_size() > one.encoded_size());
        assert_eq!(one.encode().len(), one.encoded_size());
    }

    #[test]
    fn erased_page_decodes_to_nothing() {
        assert_eq!(decode_page(&page(0xFF)).unwrap(), vec![]);
    }

    #[test]
    fn two_records_pack_into_one_page() {
        let d1 = Differential::new(3, 10, vec![Run::new(0, vec![1, 2, 3])]);
        let d2 = Differential::new(4, 11, vec![Run::new(500, vec![9; 40])]);
        let mut data = page(0xFF);
        let mut buf = Vec::new();
        d1.encode_into(&mut buf);
        d2.encode_into(&mut buf);
        data[..buf.len()].copy_from_slice(&buf);
        let decoded = decode_page(&data).unwrap();
        assert_eq!(decoded, vec![d1, d2]);
    }

    #[test]
    fn truncated_record_is_rejected() {
        let d = Differential::new(3, 10, vec![Run::new(0, vec![1, 2, 3])]);
        let enc = d.encode();
        // a record cut short by the end of the buffer
        assert!(decode_page(&enc[..enc.len() - 2]).is_err());
        let (recovered, err) = decode_page_lossy(&enc[..enc.len() - 2]);
        assert!(recovered.is_empty());
        assert!(err.is_some());
    }

    #[test]
    fn overlong_run_count_is_rejected() {
        // header claims two runs but only one follows; the second "run
        // header" is erased padding claiming a 65535-byte payload
        let d = Differential::new(3, 10, vec![Run::new(0, vec![1, 2, 3])]);
        let mut enc = d.encode();
        enc[12..14].copy_from_slice(&2u16.to_le_bytes());
        let mut data = page(0xFF);
        data[..enc.len()].copy_from_slice(&enc);
        assert!(decode_page(&data).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn compute_apply_round_trip(seed in any::<u64>(), edits in 1usize..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<u8> = (0..PAGE).map(|_| rng.gen()).collect();
            let mut current = base.clone();
            for _ in 0..edits {
                let at = rng.gen_range(0..PAGE);
                let len = rng.gen_range(1..=64.min(PAGE - at));
                for b in &mut current[at..at + len] {
                    *b = rng.gen();
                }
            }
            let d = Differential::compute(&base, &current, 7, 1);
            prop_assert_eq!(d.apply_to(&base).unwrap(), current.clone());
            // applying twice changes nothing further
            let once = d.apply_to(&base).unwrap();
            prop_assert_eq!(d.apply_to(&once).unwrap(), current);
        }

        #[test]
        fn encode_decode_round_trip(seed in any::<u64>(), n in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut data = vec![0xFFu8; PAGE];
            let mut written = 0;
            let mut records = Vec::new();
            for i in 0..n {
                let base: Vec<u8> = (0..256).map(|_| rng.gen()).collect();
                let mut cur = base.clone();
                let at = rng.gen_range(0..200);
                cur[at] ^= 0x5A;
                let d = Differential::compute(&base, &cur, i as u32, rng.gen());
                if written + d.encoded_size() > PAGE {
                    break;
                }
                let enc = d.encode();
                data[written..written + enc.len()].copy_from_slice(&enc);
                written += enc.len();
                records.push(d);
            }
            prop_assert_eq!(decode_page(&data).unwrap(), records);
        }

        #[test]
        fn changed_bytes_are_covered_by_runs(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<u8> = (0..PAGE).map(|_| rng.gen()).collect();
            let mut current = base.clone();
            for _ in 0..10 {
                let at = rng.gen_range(0..PAGE);
                current[at] = current[at].wrapping_add(1);
            }
            let d = Differential::compute(&base, &current, 7, 1);
            // runs cover exactly the differing bytes
            for (i, (b, c)) in base.iter().zip(&current).enumerate() {
                let covered = d.runs().iter().any(|r| i >= r.offset && i < r.end());
                prop_assert_eq!(b != c, covered, "byte {} miscovered", i);
            }
            // and every run is maximal: its neighbors are equal bytes
            for r in d.runs() {
                if r.offset > 0 {
                    prop_assert_eq!(base[r.offset - 1], current[r.offset - 1]);
                }
                if r.end() < PAGE {
                    prop_assert_eq!(base[r.end()], current[r.end()]);
                }
            }
        }
    }
}
