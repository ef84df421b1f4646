//! `BSTROBE1` tag files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header, 40 bytes
//!   0..8    magic "BSTROBE1"
//!   8..10   version u16 (= 1)
//!   10      station u8 (0 = A, 1 = B)
//!   11      zero
//!   12..16  clock resolution u32, ps
//!   16..24  record count u64
//!   24..40  zero
//! record, 16 bytes
//!   0       channel u8 (1, 2, 3)
//!   1..8    zero
//!   8..16   timestamp u64, ps
//! ```
//!
//! Records are ordered by `(timestamp, channel)`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::{Channel, Station, TimeTag};

pub const MAGIC: [u8; 8] = *b"BSTROBE1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 40;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum TagFormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 8]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown station id {0}")]
    BadStation(u8),
    #[error("non-zero reserved header bytes")]
    DirtyHeader,
    #[error("file shorter than the 40-byte header")]
    TruncatedHeader,
    #[error("record {index}: channel {channel} out of range")]
    BadChannel { index: u64, channel: u8 },
    #[error("record {index}: non-zero padding")]
    DirtyRecord { index: u64 },
    #[error("record {index}: timestamp order violated")]
    NotMonotonic { index: u64 },
    #[error("record {index}: truncated ({got} of 16 bytes)")]
    TruncatedRecord { index: u64, got: usize },
    #[error("header announces {header} records, file holds {actual}")]
    CountMismatch { header: u64, actual: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFileHeader {
    pub version: u16,
    pub station: Station,
    pub clock_resolution: u32,
    pub record_count: u64,
}

impl TagFileHeader {
    pub fn new(station: Station, record_count: u64) -> Self {
        Self {
            version: VERSION,
            station,
            clock_resolution: 1,
            record_count,
        }
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..8].copy_from_slice(&MAGIC);
        b[8..10].copy_from_slice(&self.version.to_le_bytes());
        b[10] = self.station.id();
        b[12..16].copy_from_slice(&self.clock_resolution.to_le_bytes());
        b[16..24].copy_from_slice(&self.record_count.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8; HEADER_LEN]) -> Result<Self, TagFormatError> {
        let magic: [u8; 8] = b[0..8].try_into().unwrap();
        if magic != MAGIC {
            return Err(TagFormatError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([b[8], b[9]]);
        if version != VERSION {
            return Err(TagFormatError::UnsupportedVersion(version));
        }
        let station = Station::from_id(b[10]).ok_or(TagFormatError::BadStation(b[10]))?;
        if b[11] != 0 || b[24..40].iter().any(|&x| x != 0) {
            return Err(TagFormatError::DirtyHeader);
        }
        Ok(Self {
            version,
            station,
            clock_resolution: u32::from_le_bytes(b[12..16].try_into().unwrap()),
            record_count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        })
    }
}

pub fn encode_record(tag: &TimeTag) -> [u8; RECORD_LEN] {
    let mut b = [0u8; RECORD_LEN];
    b[0] = tag.channel as u8;
    b[8..16].copy_from_slice(&tag.timestamp.to_le_bytes());
    b
}

/// File size for `n` records.
pub fn file_len(n: u64) -> u64 {
    HEADER_LEN as u64 + RECORD_LEN as u64 * n
}

/// Writes header and records; returns the number of bytes written.
///
/// `header.record_count` must equal `records.len()` and records must be
/// in file order.
pub fn write_tags<W: Write>(header: &TagFileHeader, records: &[TimeTag], mut sink: W) -> Result<u64, TagFormatError> {
    if header.record_count != records.len() as u64 {
        return Err(TagFormatError::CountMismatch {
            header: header.record_count,
            actual: records.len() as u64,
        });
    }
    if let Some(i) = records.windows(2).position(|w| w[1] < w[0]) {
        return Err(TagFormatError::NotMonotonic { index: i as u64 + 1 });
    }
    sink.write_all(&header.encode())?;
    for r in records {
        sink.write_all(&encode_record(r))?;
    }
    sink.flush()?;
    Ok(file_len(records.len() as u64))
}

pub fn write_file(path: &Path, station: Station, records: &[TimeTag]) -> Result<u64, TagFormatError> {
    let f = File::create(path)?;
    write_tags(&TagFileHeader::new(station, records.len() as u64), records, BufWriter::new(f))
}

/// Streaming record reader returned by [`read_tags`].
///
/// Holds one record of state; errors are yielded once, after which the
/// iterator is exhausted.
pub struct TagReader<R> {
    src: R,
    expected: u64,
    index: u64,
    prev: Option<TimeTag>,
    done: bool,
}

/// Parses the header and returns an iterator over the records.
pub fn read_tags<R: Read>(mut src: R) -> Result<(TagFileHeader, TagReader<R>), TagFormatError> {
    let mut hb = [0u8; HEADER_LEN];
    let got = read_full(&mut src, &mut hb)?;
    if got < HEADER_LEN {
        return Err(TagFormatError::TruncatedHeader);
    }
    let header = TagFileHeader::decode(&hb)?;
    Ok((
        header,
        TagReader {
            src,
            expected: header.record_count,
            index: 0,
            prev: None,
            done: false,
        },
    ))
}

/// Reads a whole file into memory.
pub fn read_file(path: &Path) -> Result<(TagFileHeader, Vec<TimeTag>), TagFormatError> {
    let (header, reader) = read_tags(BufReader::with_capacity(1 << 16, File::open(path)?))?;
    let mut tags = Vec::with_capacity(header.record_count.min(1 << 26) as usize);
    for t in reader {
        tags.push(t?);
    }
    Ok((header, tags))
}

fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match src.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> TagReader<R> {
    fn next_record(&mut self) -> Result<Option<TimeTag>, TagFormatError> {
        let mut b = [0u8; RECORD_LEN];
        let got = read_full(&mut self.src, &mut b)?;
        if self.index == self.expected {
            return if got == 0 {
                Ok(None)
            } else {
                // count the trailing bytes so the error is informative
                let mut rest = Vec::new();
                self.src.read_to_end(&mut rest)?;
                let extra = (got + rest.len()) as u64;
                if extra % RECORD_LEN as u64 != 0 {
                    Err(TagFormatError::TruncatedRecord {
                        index: self.index + extra / RECORD_LEN as u64,
                        got: (extra % RECORD_LEN as u64) as usize,
                    })
                } else {
                    Err(TagFormatError::CountMismatch {
                        header: self.expected,
                        actual: self.expected + extra / RECORD_LEN as u64,
                    })
                }
            };
        }
        match got {
            0 => {
                return Err(TagFormatError::CountMismatch {
                    header: self.expected,
                    actual: self.index,
                })
            }
            n if n < RECORD_LEN => return Err(TagFormatError::TruncatedRecord { index: self.index, got: n }),
            _ => {}
        }
        let index = self.index;
        let channel = Channel::from_u8(b[0]).ok_or(TagFormatError::BadChannel { index, channel: b[0] })?;
        if b[1..8].iter().any(|&x| x != 0) {
            return Err(TagFormatError::DirtyRecord { index });
        }
        let tag = TimeTag::new(channel, u64::from_le_bytes(b[8..16].try_into().unwrap()));
        if matches!(self.prev, Some(p) if tag < p) {
            return Err(TagFormatError::NotMonotonic { index });
        }
        self.prev = Some(tag);
        self.index += 1;
        Ok(Some(tag))
    }
}

impl<R: Read> Iterator for TagReader<R> {
    type Item = Result<TimeTag, TagFormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(t)) => Some(Ok(t)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
