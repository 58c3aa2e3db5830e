//! Little-endian helpers for the versioned index files.
//!
//! Every file starts with an 8-byte magic and a `u32` format version.
//! Readers treat the input as untrusted: lengths are checked against hard
//! caps and allocations grow with the bytes actually read.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

pub const MAX_STRING_BYTES: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
}

pub fn write_header<W: Write>(w: &mut W, magic: &[u8; 8], version: u32) -> io::Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(version)
}

pub fn read_header<R: Read>(r: &mut R, magic: &'static [u8; 8], version: u32) -> Result<(), FormatError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(FormatError::BadMagic {
            expected: std::str::from_utf8(magic).unwrap_or("?"),
        });
    }
    let found = r.read_u32::<LittleEndian>()?;
    if found != version {
        return Err(FormatError::Version {
            found,
            expected: version,
        });
    }
    Ok(())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_u32::<LittleEndian>(v)
}

pub fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    r.read_u32::<LittleEndian>()
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_u64::<LittleEndian>(v)
}

pub fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    r.read_u64::<LittleEndian>()
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_f64::<LittleEndian>(v)
}

pub fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    r.read_f64::<LittleEndian>()
}

pub fn write_len<W: Write>(w: &mut W, n: usize) -> io::Result<()> {
    let n = u32::try_from(n).map_err(|_| io::Error::other("length exceeds u32"))?;
    write_u32(w, n)
}

/// Reads a `u32` length and rejects values above `cap`.
pub fn read_len<R: Read>(r: &mut R, cap: u32, what: &str) -> Result<usize, FormatError> {
    let n = read_u32(r)?;
    if n > cap {
        return Err(FormatError::Corrupt(format!("{what} length {n} exceeds {cap}")));
    }
    Ok(n as usize)
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write_len(w, s.len())?;
    w.write_all(s.as_bytes())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String, FormatError> {
    let n = read_len(r, MAX_STRING_BYTES, "string")?;
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(FormatError::Io(io::ErrorKind::UnexpectedEof.into()));
    }
    String::from_utf8(buf).map_err(|_| FormatError::Corrupt("string is not utf-8".into()))
}

/// Capacity to reserve for `n` declared items before any of them are read.
pub fn initial_capacity(n: usize) -> usize {
    n.min(4096)
}
