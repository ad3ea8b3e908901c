//! File formats: AGF1 feature dumps, AGR1 RDM stacks (both little-endian
//! binary) and text checkpoints.
//!
//! Readers load the whole file and decode from memory; every declared length
//! is checked against the bytes remaining before anything is allocated.

pub mod checkpoint;
pub mod features;
pub mod rdms;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use features::{decode_features, encode_features, read_features, write_features};
pub use rdms::{decode_rdms, encode_rdms, read_rdms, write_rdms};

use crate::error::{Error, FormatError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 over the contents of the files, each prefixed by its byte length.
pub fn fingerprint_files<P: AsRef<Path>>(paths: &[P]) -> Result<String> {
    let mut hasher = Sha256::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn tag_path(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Decode(source) => Error::Format {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        if n > self.remaining() {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> std::result::Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().unwrap();
        if &found != expected {
            return Err(FormatError::BadMagic {
                expected: *expected,
                found,
            });
        }
        Ok(())
    }

    pub fn version(&mut self) -> std::result::Result<(), FormatError> {
        match self.u32()? {
            FORMAT_VERSION => Ok(()),
            v => Err(FormatError::UnsupportedVersion(v)),
        }
    }

    pub fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> std::result::Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> std::result::Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn string(&mut self, what: &'static str) -> std::result::Result<String, FormatError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::InvalidUtf8(what))
    }

    /// `count` length-prefixed strings; each needs at least 2 bytes, checked up front.
    pub fn strings(
        &mut self,
        count: usize,
        what: &'static str,
    ) -> std::result::Result<Vec<String>, FormatError> {
        let min = count
            .checked_mul(2)
            .ok_or(FormatError::SizeOverflow(what))?;
        if min > self.remaining() {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: min,
                available: self.remaining(),
            });
        }
        (0..count).map(|_| self.string(what)).collect()
    }

    /// `count` f32 values; the first non-finite one is reported at `base + index`.
    pub fn f32s(
        &mut self,
        count: usize,
        base: usize,
    ) -> std::result::Result<Vec<f32>, FormatError> {
        let len = count
            .checked_mul(4)
            .ok_or(FormatError::SizeOverflow("payload"))?;
        let bytes = self.take(len)?;
        let mut out = Vec::with_capacity(count);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite(base + k));
            }
            out.push(v);
        }
        Ok(out)
    }

    pub fn finish(&self) -> std::result::Result<(), FormatError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| {
        Error::Config(format!(
            "string of {} bytes exceeds u16 length prefix",
            s.len()
        ))
    })?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        std::fs::write(&a, [1u8, 2, 3, 4]).unwrap();
        let before = fingerprint_files(&[&a]).unwrap();
        assert_eq!(before.len(), 64);
        assert_eq!(before, fingerprint_files(&[&a]).unwrap());
        std::fs::write(&a, [1u8, 2, 3, 5]).unwrap();
        assert_ne!(before, fingerprint_files(&[&a]).unwrap());
    }

    #[test]
    fn reader_bounds() {
        let bytes = [0xffu8, 0xff, 1, 0];
        let mut r = Reader::new(&bytes);
        assert!(matches!(
            r.strings(3, "ids"),
            Err(FormatError::Truncated { .. })
        ));
        let mut r = Reader::new(&bytes);
        assert!(matches!(
            r.string("ids"),
            Err(FormatError::Truncated { .. })
        ));
        let mut r = Reader::new(&bytes);
        assert!(matches!(
            r.f32s(usize::MAX, 0),
            Err(FormatError::SizeOverflow(_))
        ));
    }
}
