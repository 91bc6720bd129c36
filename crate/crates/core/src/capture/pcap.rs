use std::fs::File;
use std::io::{self, BufReader, Cursor, Read};
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::parse::{PacketParser, SkipReason};
use super::PacketRecord;
use crate::Timestamp;

pub const PCAP_MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const PCAP_MAGIC_NANOS: u32 = 0xa1b2_3c4d;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
/// Larger captured lengths mean the record header is garbage.
const MAX_RECORD_LEN: u32 = 256 * 1024;

const LINKTYPE_ETHERNET: u32 = 1;
const LINKTYPE_RAW: u32 = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkType {
    Ethernet,
    RawIp,
}

impl LinkType {
    pub fn from_pcap(code: u32) -> Option<LinkType> {
        match code {
            LINKTYPE_ETHERNET => Some(LinkType::Ethernet),
            LINKTYPE_RAW => Some(LinkType::RawIp),
            _ => None,
        }
    }

    pub fn pcap_code(self) -> u32 {
        match self {
            LinkType::Ethernet => LINKTYPE_ETHERNET,
            LinkType::RawIp => LINKTYPE_RAW,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TsResolution {
    Micro,
    Nano,
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("malformed capture header: {0}")]
    MalformedHeader(String),
    #[error("unsupported link type {0} (expected Ethernet or raw IP)")]
    UnsupportedLinkType(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where capture bytes come from.
pub enum CaptureSource {
    File(PathBuf),
    Bytes(Vec<u8>),
    Stream(Box<dyn Read + Send>),
}

impl CaptureSource {
    pub fn file(path: impl AsRef<Path>) -> Self {
        CaptureSource::File(path.as_ref().to_path_buf())
    }
}

/// Counters of what the reader did not yield.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CaptureStats {
    pub frames: u64,
    pub records: u64,
    pub skipped: u64,
    pub truncated: u64,
    pub skip_reasons: std::collections::BTreeMap<SkipReason, u64>,
}

impl CaptureStats {
    fn skip(&mut self, reason: SkipReason) {
        self.skipped += 1;
        if reason == SkipReason::Truncated {
            self.truncated += 1;
        }
        *self.skip_reasons.entry(reason).or_default() += 1;
    }
}

/// Opens a capture source and validates its global header.
pub fn read_capture(source: CaptureSource) -> Result<CaptureReader<Box<dyn Read + Send>>, CaptureError> {
    let inner: Box<dyn Read + Send> = match source {
        CaptureSource::File(path) => Box::new(BufReader::with_capacity(1 << 20, File::open(path)?)),
        CaptureSource::Bytes(bytes) => Box::new(Cursor::new(bytes)),
        CaptureSource::Stream(r) => r,
    };
    CaptureReader::new(inner)
}

/// Streaming reader over a classic PCAP file yielding parsed TCP/UDP records
/// in capture order. Frames that are not TCP/UDP over IP are counted and
/// skipped; a cut-off final record counts as truncated and ends the stream.
pub struct CaptureReader<R> {
    inner: R,
    big_endian: bool,
    resolution: TsResolution,
    link_type: LinkType,
    parser: PacketParser,
    stats: CaptureStats,
    buf: Vec<u8>,
    done: bool,
}

impl CaptureReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        CaptureReader::new(BufReader::with_capacity(1 << 20, File::open(path)?))
    }
}

impl<R: Read> CaptureReader<R> {
    pub fn new(mut inner: R) -> Result<Self, CaptureError> {
        let mut hdr = [0u8; GLOBAL_HEADER_LEN];
        let n = read_full(&mut inner, &mut hdr)?;
        if n < GLOBAL_HEADER_LEN {
            return Err(CaptureError::MalformedHeader(format!("global header is {n} bytes, need 24")));
        }
        let magic_le = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
        let (big_endian, resolution) = match magic_le {
            PCAP_MAGIC_MICROS => (false, TsResolution::Micro),
            PCAP_MAGIC_NANOS => (false, TsResolution::Nano),
            m if m.swap_bytes() == PCAP_MAGIC_MICROS => (true, TsResolution::Micro),
            m if m.swap_bytes() == PCAP_MAGIC_NANOS => (true, TsResolution::Nano),
            m => return Err(CaptureError::MalformedHeader(format!("bad magic {m:#010x}"))),
        };
        let rd16 = |b: &[u8]| {
            let a = [b[0], b[1]];
            if big_endian { u16::from_be_bytes(a) } else { u16::from_le_bytes(a) }
        };
        let major = rd16(&hdr[4..6]);
        if major != 2 {
            return Err(CaptureError::MalformedHeader(format!("unsupported version {major}")));
        }
        let link_code = read_u32(&hdr[20..24], big_endian) & 0x0fff_ffff;
        let link_type = LinkType::from_pcap(link_code).ok_or(CaptureError::UnsupportedLinkType(link_code))?;
        Ok(CaptureReader {
            inner,
            big_endian,
            resolution,
            link_type,
            parser: PacketParser::new(),
            stats: CaptureStats::default(),
            buf: Vec::with_capacity(2048),
            done: false,
        })
    }

    pub fn link_type(&self) -> LinkType {
        self.link_type
    }

    pub fn ts_resolution(&self) -> TsResolution {
        self.resolution
    }

    pub fn stats(&self) -> &CaptureStats {
        &self.stats
    }

    /// Next TCP/UDP record, `Ok(None)` at end of capture.
    pub fn next_record(&mut self) -> Result<Option<PacketRecord>, CaptureError> {
        while !self.done {
            let mut hdr = [0u8; RECORD_HEADER_LEN];
            let n = read_full(&mut self.inner, &mut hdr)?;
            if n == 0 {
                self.done = true;
                break;
            }
            if n < RECORD_HEADER_LEN {
                self.stats.skip(SkipReason::Truncated);
                self.done = true;
                break;
            }
            let sec = read_u32(&hdr[0..4], self.big_endian) as i64;
            let frac = read_u32(&hdr[4..8], self.big_endian) as i64;
            let incl = read_u32(&hdr[8..12], self.big_endian);
            if incl > MAX_RECORD_LEN {
                return Err(CaptureError::MalformedHeader(format!(
                    "record {} claims {incl} captured bytes",
                    self.stats.frames + 1
                )));
            }
            let micros = match self.resolution {
                TsResolution::Micro => frac,
                TsResolution::Nano => frac / 1000,
            };
            let ts = Timestamp::from_micros(sec * 1_000_000 + micros);
            self.buf.resize(incl as usize, 0);
            let got = read_full(&mut self.inner, &mut self.buf)?;
            self.stats.frames += 1;
            if got < incl as usize {
                self.stats.skip(SkipReason::Truncated);
                self.done = true;
                break;
            }
            match self.parser.parse(&self.buf, self.link_type, ts) {
                Ok(rec) => {
                    self.stats.records += 1;
                    return Ok(Some(rec));
                }
                Err(reason) => self.stats.skip(reason),
            }
        }
        Ok(None)
    }
}

impl<R: Read> Iterator for CaptureReader<R> {
    type Item = Result<PacketRecord, CaptureError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_u32(b: &[u8], big_endian: bool) -> u32 {
    let a = [b[0], b[1], b[2], b[3]];
    if big_endian {
        u32::from_be_bytes(a)
    } else {
        u32::from_le_bytes(a)
    }
}

/// Like `read_exact` but reports a short read instead of failing on EOF.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
