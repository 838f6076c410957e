//! Bit-accurate NAND flash emulator.
//!
//! The chip is an array of blocks, each a fixed number of pages. A page has
//! a data area and a spare area. Reads return whole pages, writes can only
//! clear bits (1 -> 0), and erases set every bit of a block back to 1. Every
//! operation advances a simulated-time ledger; no wall-clock time is spent.

use std::fmt;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use thiserror::Error;

/// Logical page identifier as stored in spare areas and differentials.
pub type PageId = u32;

/// Spare-area byte layout: type tag, page id, timestamp, obsolete marker.
const SPARE_TYPE_OFF: usize = 0;
const SPARE_PID_OFF: usize = 1;
const SPARE_TS_OFF: usize = 5;
const SPARE_OBSOLETE_OFF: usize = 13;
/// Minimum spare size able to hold the layout above.
pub const SPARE_MIN_BYTES: usize = 14;

/// A spare-only write can be repeated only this many times between erases.
pub const MAX_SPARE_WRITES: u8 = 4;

const IMAGE_MAGIC: &[u8; 4] = b"FDIF";
const IMAGE_VERSION: u16 = 1;
const IMAGE_HEADER_BYTES: usize = 16;

/// Chip shape: blocks, pages per block, and per-page data/spare sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashGeometry {
    pub n_blocks: u32,
    pub pages_per_block: u32,
    pub data_bytes: usize,
    pub spare_bytes: usize,
}

impl FlashGeometry {
    /// Full-size MLC profile: 32,768 blocks of 64 pages, 2048+64 bytes each.
    pub fn standard() -> Self {
        FlashGeometry { n_blocks: 32_768, pages_per_block: 64, data_bytes: 2048, spare_bytes: 64 }
    }

    /// Desk-scale profile: same block/page shape, fewer blocks.
    pub fn desk(n_blocks: u32) -> Self {
        FlashGeometry { n_blocks, ..Self::standard() }
    }

    pub fn validate(&self) -> Result<(), ChipError> {
        if self.n_blocks == 0 || self.pages_per_block == 0 || self.data_bytes == 0 {
            return Err(ChipError::BadGeometry("all geometry fields must be positive".into()));
        }
        if self.spare_bytes < SPARE_MIN_BYTES {
            return Err(ChipError::BadGeometry(format!(
                "spare area must be at least {SPARE_MIN_BYTES} bytes"
            )));
        }
        if self.data_bytes > u16::MAX as usize {
            return Err(ChipError::BadGeometry("data area must fit 16-bit offsets".into()));
        }
        Ok(())
    }

    pub fn total_pages(&self) -> u64 {
        self.n_blocks as u64 * self.pages_per_block as u64
    }

    pub fn total_data_bytes(&self) -> u64 {
        self.total_pages() * self.data_bytes as u64
    }

    pub fn contains(&self, addr: PhysPageAddr) -> bool {
        addr.block < self.n_blocks && addr.page < self.pages_per_block
    }

    fn page_index(&self, addr: PhysPageAddr) -> usize {
        (addr.block as usize * self.pages_per_block as usize) + addr.page as usize
    }
}

/// Per-operation simulated latencies in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingProfile {
    pub t_read_us: u64,
    pub t_write_us: u64,
    pub t_erase_us: u64,
}

impl TimingProfile {
    /// Datasheet profile: 110 us read, 1010 us write, 1500 us erase.
    pub fn standard() -> Self {
        TimingProfile { t_read_us: 110, t_write_us: 1010, t_erase_us: 1500 }
    }
}

/// Physical page location: block index plus page index within the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysPageAddr {
    pub block: u32,
    pub page: u32,
}

impl PhysPageAddr {
    pub fn new(block: u32, page: u32) -> Self {
        PhysPageAddr { block, page }
    }
}

impl fmt::Display for PhysPageAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.page)
    }
}

/// Role of a physical page, recorded as a tag byte in the spare area.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageType {
    /// Erased, never written since the last block erase.
    Free,
    /// Full copy of a logical page (page-differential logging).
    Base,
    /// Packed encoded differentials of one or more logical pages.
    Differential,
    /// Original page of a logical page (in-page logging).
    Original,
    /// Log page holding update-log records (in-page logging).
    Log,
    /// Plain data page (out-place / in-place update).
    Data,
}

impl PageType {
    fn tag(self) -> u8 {
        match self {
            PageType::Free => 0xFF,
            PageType::Base => 0xF0,
            PageType::Differential => 0xE1,
            PageType::Original => 0xD2,
            PageType::Log => 0xC3,
            PageType::Data => 0xB4,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0xFF => Some(PageType::Free),
            0xF0 => Some(PageType::Base),
            0xE1 => Some(PageType::Differential),
            0xD2 => Some(PageType::Original),
            0xC3 => Some(PageType::Log),
            0xB4 => Some(PageType::Data),
            _ => None,
        }
    }
}

/// Decoded view of a page's spare area plus the emulator's spare-write count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpareArea {
    pub page_type: PageType,
    pub pid: Option<PageId>,
    pub timestamp: Option<u64>,
    /// True until the obsolete marker has been programmed (1 = valid, 0 = obsolete).
    pub valid: bool,
    /// Spare-only writes since the last erase of the containing block.
    pub spare_writes: u8,
}

/// Spare fields programmed together with a page's data area.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpareInit {
    pub page_type: PageType,
    pub pid: Option<PageId>,
    pub timestamp: Option<u64>,
}

impl SpareInit {
    pub fn new(page_type: PageType, pid: Option<PageId>, timestamp: Option<u64>) -> Self {
        SpareInit { page_type, pid, timestamp }
    }
}

/// Operation counters and the simulated clock they determine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChipLedger {
    pub reads: u64,
    pub writes: u64,
    pub erases: u64,
    pub sim_time_us: u64,
    pub erase_count_per_block: Vec<u32>,
}

impl ChipLedger {
    fn new(n_blocks: u32) -> Self {
        ChipLedger {
            reads: 0,
            writes: 0,
            erases: 0,
            sim_time_us: 0,
            erase_count_per_block: vec![0; n_blocks as usize],
        }
    }

    /// The ledger invariant: simulated time is a pure linear function of the
    /// operation counters.
    pub fn expected_time(&self, timing: &TimingProfile) -> u64 {
        self.reads * timing.t_read_us + self.writes * timing.t_write_us + self.erases * timing.t_erase_us
    }
}

#[derive(Debug, Error)]
pub enum ChipError {
    #[error("address {addr} outside chip geometry")]
    OutOfRange { addr: PhysPageAddr },
    #[error("block {block} outside chip geometry")]
    BlockOutOfRange { block: u32 },
    #[error("write to {addr} requires a 0->1 bit transition")]
    OverwriteViolation { addr: PhysPageAddr },
    #[error("spare area of {addr} already written {MAX_SPARE_WRITES} times since erase")]
    SpareExhausted { addr: PhysPageAddr },
    #[error("data length {got} does not match page data area {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("invalid geometry: {0}")]
    BadGeometry(String),
    #[error("bad chip image: {0}")]
    BadImage(String),
    #[error("image i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One recorded chip mutation. Reads are not journaled: a crash between
/// reads leaves the same image as a crash before them.
#[derive(Debug, Clone)]
pub enum ChipOp {
    Program { addr: PhysPageAddr, data: Box<[u8]>, spare: SpareInit },
    MarkObsolete { addr: PhysPageAddr },
    Erase { block: u32 },
}

/// The emulated chip: page cells, spare cells, and the ledger.
pub struct FlashChip {
    geometry: FlashGeometry,
    timing: TimingProfile,
    data: Vec<u8>,
    spare: Vec<u8>,
    spare_writes: Vec<u8>,
    ledger: ChipLedger,
    journal: Option<Vec<ChipOp>>,
}

impl FlashChip {
    pub fn new(geometry: FlashGeometry, timing: TimingProfile) -> Result<Self, ChipError> {
        geometry.validate()?;
        let pages = geometry.total_pages() as usize;
        Ok(FlashChip {
            geometry,
            timing,
            data: vec![0xFF; pages * geometry.data_bytes],
            spare: vec![0xFF; pages * geometry.spare_bytes],
            spare_writes: vec![0; pages],
            ledger: ChipLedger::new(geometry.n_blocks),
            journal: None,
        })
    }

    pub fn geometry(&self) -> &FlashGeometry {
        &self.geometry
    }

    pub fn timing(&self) -> &TimingProfile {
        &self.timing
    }

    pub fn ledger(&self) -> &ChipLedger {
        &self.ledger
    }

    /// Record every mutation from now on so a crash image can be replayed
    /// at any operation boundary.
    pub fn enable_journal(&mut self) {
        self.journal = Some(Vec::new());
    }

    pub fn journal(&self) -> &[ChipOp] {
        self.journal.as_deref().unwrap_or(&[])
    }

    fn check_addr(&self, addr: PhysPageAddr) -> Result<(), ChipError> {
        if self.geometry.contains(addr) {
            Ok(())
        } else {
            Err(ChipError::OutOfRange { addr })
        }
    }

    fn data_range(&self, addr: PhysPageAddr) -> std::ops::Range<usize> {
        let idx = self.geometry.page_index(addr);
        let start = idx * self.geometry.data_bytes;
        start..start + self.geometry.data_bytes
    }

    fn spare_range(&self, addr: PhysPageAddr) -> std::ops::Range<usize> {
        let idx = self.geometry.page_index(addr);
        let start = idx * self.geometry.spare_bytes;
        start..start + self.geometry.spare_bytes
    }

    /// Read one page: data area plus decoded spare. Charges one read.
    pub fn read_page(&mut self, addr: PhysPageAddr) -> Result<(Vec<u8>, SpareArea), ChipError> {
        self.check_addr(addr)?;
        self.ledger.reads += 1;
        self.ledger.sim_time_us += self.timing.t_read_us;
        let data = self.data[self.data_range(addr)].to_vec();
        let spare = self.decode_spare(addr);
        Ok((data, spare))
    }

    /// Program a page: full data image plus spare fields, in one write.
    ///
    /// Every requested bit must be reachable by clearing (the stored value
    /// becomes `old AND new`, and any requested 0->1 transition is refused).
    pub fn program_page(
        &mut self,
        addr: PhysPageAddr,
        data: &[u8],
        spare: SpareInit,
    ) -> Result<(), ChipError> {
        self.check_addr(addr)?;
        if data.len() != self.geometry.data_bytes {
            return Err(ChipError::DataLength { expected: self.geometry.data_bytes, got: data.len() });
        }
        let spare_img = self.spare_image(addr, spare);
        {
            let cells = &self.data[self.data_range(addr)];
            if data.iter().zip(cells).any(|(new, old)| new & !old != 0) {
                return Err(ChipError::OverwriteViolation { addr });
            }
            let spare_cells = &self.spare[self.spare_range(addr)];
            if spare_img.iter().zip(spare_cells).any(|(new, old)| new & !old != 0) {
                return Err(ChipError::OverwriteViolation { addr });
            }
        }
        let range = self.data_range(addr);
        self.data[range].copy_from_slice(data);
        let range = self.spare_range(addr);
        self.spare[range].copy_from_slice(&spare_img);
        self.ledger.writes += 1;
        self.ledger.sim_time_us += self.timing.t_write_us;
        if let Some(journal) = &mut self.journal {
            journal.push(ChipOp::Program { addr, data: data.into(), spare });
        }
        Ok(())
    }

    /// Mark a page obsolete with a spare-only write (one write operation,
    /// counted against the spare-write limit).
    pub fn set_obsolete(&mut self, addr: PhysPageAddr) -> Result<(), ChipError> {
        self.check_addr(addr)?;
        let idx = self.geometry.page_index(addr);
        if self.spare_writes[idx] >= MAX_SPARE_WRITES {
            return Err(ChipError::SpareExhausted { addr });
        }
        self.spare_writes[idx] += 1;
        let range = self.spare_range(addr);
        self.spare[range.start + SPARE_OBSOLETE_OFF] = 0x00;
        self.ledger.writes += 1;
        self.ledger.sim_time_us += self.timing.t_write_us;
        if let Some(journal) = &mut self.journal {
            journal.push(ChipOp::MarkObsolete { addr });
        }
        Ok(())
    }

    /// Erase a block: every cell back to 1, spare-write counters reset.
    pub fn erase_block(&mut self, block: u32) -> Result<(), ChipError> {
        if block >= self.geometry.n_blocks {
            return Err(ChipError::BlockOutOfRange { block });
        }
        let ppb = self.geometry.pages_per_block as usize;
        let first = block as usize * ppb;
        let data_start = first * self.geometry.data_bytes;
        let data_end = (first + ppb) * self.geometry.data_bytes;
        self.data[data_start..data_end].fill(0xFF);
        let spare_start = first * self.geometry.spare_bytes;
        let spare_end = (first + ppb) * self.geometry.spare_bytes;
        self.spare[spare_start..spare_end].fill(0xFF);
        self.spare_writes[first..first + ppb].fill(0);
        self.ledger.erases += 1;
        self.ledger.erase_count_per_block[block as usize] += 1;
        self.ledger.sim_time_us += self.timing.t_erase_us;
        if let Some(journal) = &mut self.journal {
            journal.push(ChipOp::Erase { block });
        }
        Ok(())
    }

    fn spare_image(&self, addr: PhysPageAddr, spare: SpareInit) -> Vec<u8> {
        let mut img = self.spare[self.spare_range(addr)].to_vec();
        img[SPARE_TYPE_OFF] = spare.page_type.tag();
        img[SPARE_PID_OFF..SPARE_PID_OFF + 4]
            .copy_from_slice(&spare.pid.unwrap_or(u32::MAX).to_le_bytes());
        img[SPARE_TS_OFF..SPARE_TS_OFF + 8]
            .copy_from_slice(&spare.timestamp.unwrap_or(u64::MAX).to_le_bytes());
        img
    }

    fn decode_spare(&self, addr: PhysPageAddr) -> SpareArea {
        let idx = self.geometry.page_index(addr);
        let raw = &self.spare[self.spare_range(addr)];
        let tag = raw[SPARE_TYPE_OFF];
        let page_type = PageType::from_tag(tag).unwrap_or(PageType::Data);
        let pid = u32::from_le_bytes(raw[SPARE_PID_OFF..SPARE_PID_OFF + 4].try_into().unwrap());
        let ts = u64::from_le_bytes(raw[SPARE_TS_OFF..SPARE_TS_OFF + 8].try_into().unwrap());
        SpareArea {
            page_type,
            pid: (pid != u32::MAX).then_some(pid),
            timestamp: (ts != u64::MAX).then_some(ts),
            valid: raw[SPARE_OBSOLETE_OFF] == 0xFF,
            spare_writes: self.spare_writes[idx],
        }
    }

    /// Inspect a page's data area without charging a read. Oracle/test use.
    pub fn peek_data(&self, addr: PhysPageAddr) -> &[u8] {
        &self.data[self.data_range(addr)]
    }

    /// Inspect a page's spare area without charging a read. Oracle/test use.
    pub fn peek_spare(&self, addr: PhysPageAddr) -> SpareArea {
        self.decode_spare(addr)
    }

    /// Serialize the chip to the flat image format: 16-byte header, then
    /// every page in block order as data bytes followed by spare bytes.
    pub fn to_image(&self) -> Vec<u8> {
        let g = &self.geometry;
        let mut out = Vec::with_capacity(
            IMAGE_HEADER_BYTES + self.data.len() + self.spare.len(),
        );
        out.extend_from_slice(IMAGE_MAGIC);
        out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&(g.pages_per_block as u16).to_le_bytes());
        out.extend_from_slice(&g.n_blocks.to_le_bytes());
        out.extend_from_slice(&(g.data_bytes as u16).to_le_bytes());
        out.extend_from_slice(&(g.spare_bytes as u16).to_le_bytes());
        for idx in 0..g.total_pages() as usize {
            out.extend_from_slice(&self.data[idx * g.data_bytes..(idx + 1) * g.data_bytes]);
            out.extend_from_slice(&self.spare[idx * g.spare_bytes..(idx + 1) * g.spare_bytes]);
        }
        out
    }

    /// Rebuild a chip from an image. The ledger and spare-write counters
    /// start fresh: the image captures cell contents, not history.
    pub fn from_image(image: &[u8], timing: TimingProfile) -> Result<Self, ChipError> {
        if image.len() < IMAGE_HEADER_BYTES {
            return Err(ChipError::BadImage("truncated header".into()));
        }
        if &image[0..4] != IMAGE_MAGIC {
            return Err(ChipError::BadImage("bad magic".into()));
        }
        let version = u16::from_le_bytes(image[4..6].try_into().unwrap());
        if version != IMAGE_VERSION {
            return Err(ChipError::BadImage(format!("unsupported version {version}")));
        }
        let geometry = FlashGeometry {
            pages_per_block: u16::from_le_bytes(image[6..8].try_into().unwrap()) as u32,
            n_blocks: u32::from_le_bytes(image[8..12].try_into().unwrap()),
            data_bytes: u16::from_le_bytes(image[12..14].try_into().unwrap()) as usize,
            spare_bytes: u16::from_le_bytes(image[14..16].try_into().unwrap()) as usize,
        };
        geometry.validate()?;
        let pages = geometry.total_pages() as usize;
        let page_bytes = geometry.data_bytes + geometry.spare_bytes;
        let expected = IMAGE_HEADER_BYTES + pages * page_bytes;
        if image.len() != expected {
            return Err(ChipError::BadImage(format!(
                "image is {} bytes, geometry requires {expected}",
                image.len()
            )));
        }
        let mut chip = FlashChip::new(geometry, timing)?;
        for idx in 0..pages {
            let src = IMAGE_HEADER_BYTES + idx * page_bytes;
            chip.data[idx * geometry.data_bytes..(idx + 1) * geometry.data_bytes]
                .copy_from_slice(&image[src..src + geometry.data_bytes]);
            chip.spare[idx * geometry.spare_bytes..(idx + 1) * geometry.spare_bytes]
                .copy_from_slice(&image[src + geometry.data_bytes..src + page_bytes]);
        }
        Ok(chip)
    }

    pub fn save_image(&self, path: &Path) -> Result<(), ChipError> {
        let mut file = fs::File::create(path)?;
        file.write_all(&self.to_image())?;
        Ok(())
    }

    pub fn load_image(path: &Path, timing: TimingProfile) -> Result<Self, ChipError> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_image(&buf, timing)
    }

    /// Replay a journal prefix onto a fresh chip of the same shape.
    pub fn replay(
        geometry: FlashGeometry,
        timing: TimingProfile,
        ops: &[ChipOp],
    ) -> Result<Self, ChipError> {
        let mut chip = FlashChip::new(geometry, timing)?;
        for op in ops {
            match op {
                ChipOp::Program { addr, data, spare } => chip.program_page(*addr, data, *spare)?,
                ChipOp::MarkObsolete { addr } => chip.set_obsolete(*addr)?,
                ChipOp::Erase { block } => chip.erase_block(*block)?,
            }
        }
        Ok(chip)
    }
}
