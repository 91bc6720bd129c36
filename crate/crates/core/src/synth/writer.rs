use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::capture::{LinkType, PCAP_MAGIC_MICROS};
use crate::Timestamp;

pub const SNAPLEN: u32 = 65535;

/// Classic little-endian PCAP with microsecond timestamps.
pub struct PcapWriter<W: Write> {
    inner: W,
    records: u64,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, link: LinkType) -> io::Result<Self> {
        let mut h = Vec::with_capacity(24);
        h.extend_from_slice(&PCAP_MAGIC_MICROS.to_le_bytes());
        h.extend_from_slice(&2u16.to_le_bytes());
        h.extend_from_slice(&4u16.to_le_bytes());
        h.extend_from_slice(&0i32.to_le_bytes());
        h.extend_from_slice(&0u32.to_le_bytes());
        h.extend_from_slice(&SNAPLEN.to_le_bytes());
        h.extend_from_slice(&link.pcap_code().to_le_bytes());
        inner.write_all(&h)?;
        Ok(PcapWriter { inner, records: 0 })
    }

    pub fn write_packet(&mut self, ts: Timestamp, frame: &[u8]) -> io::Result<()> {
        let us = ts.as_micros();
        let orig = frame.len() as u32;
        let incl = orig.min(SNAPLEN);
        let mut h = [0u8; 16];
        h[0..4].copy_from_slice(&(us.div_euclid(1_000_000) as u32).to_le_bytes());
        h[4..8].copy_from_slice(&(us.rem_euclid(1_000_000) as u32).to_le_bytes());
        h[8..12].copy_from_slice(&incl.to_le_bytes());
        h[12..16].copy_from_slice(&orig.to_le_bytes());
        self.inner.write_all(&h)?;
        self.inner.write_all(&frame[..incl as usize])?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Writes time-ordered `(timestamp, frame)` pairs to `path`.
pub fn write_capture(packets: &[(Timestamp, Vec<u8>)], path: &Path, link: LinkType) -> io::Result<()> {
    let mut w = PcapWriter::new(BufWriter::new(File::create(path)?), link)?;
    for (ts, frame) in packets {
        w.write_packet(*ts, frame)?;
    }
    w.finish()?;
    Ok(())
}
