//! Little-endian binary containers.
//!
//! Spectrograms are stored in the `AMAT` matrix format:
//!
//! | bytes | content |
//! | ----- | ------- |
//! | 4 | magic `AMAT` |
//! | 4 | u32 version = 1 |
//! | 4 | u32 rows (frames) |
//! | 4 | u32 cols (mel bins) |
//! | 8 | f64 frame rate |
//! | 8 | f64 log floor |
//! | rows × cols × 8 | f64 values, row-major |
//! | 4 + n | u32 byte length, then the UTF-8 clip id |
//!
//! The helpers here are shared by the embedding (`AEMB`) and model (`APRB`)
//! containers.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::dsp::LogMelSpectrogram;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"AMAT";
pub const MATRIX_VERSION: u32 = 1;

/// Bounds-checked reader over a byte buffer.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn seek(&mut self, pos: usize) -> Result<()> {
        if pos > self.buf.len() {
            return Err(Error::TruncatedFile(format!(
                "offset {pos} beyond end of {}-byte file",
                self.buf.len()
            )));
        }
        self.pos = pos;
        Ok(())
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::TruncatedFile(format!(
                "need {n} bytes at offset {}, only {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4).map_err(|_| Error::FormatError("file shorter than magic".into()))?;
        if found != magic {
            return Err(Error::FormatError(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self, version: u32) -> Result<()> {
        let found = self.u32()?;
        if found != version {
            return Err(Error::FormatError(format!("unsupported version {found}")));
        }
        Ok(())
    }
}

/// Serializes a spectrogram into the `AMAT` layout.
pub fn encode_spectrogram(spec: &LogMelSpectrogram) -> Vec<u8> {
    let (rows, cols) = spec.values.dim();
    let mut out = Vec::with_capacity(32 + rows * cols * 8 + 4 + spec.clip_id.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&spec.frame_rate.to_le_bytes());
    out.extend_from_slice(&spec.log_floor.to_le_bytes());
    for v in spec.values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(spec.clip_id.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.clip_id.as_bytes());
    out
}

pub fn decode_spectrogram(bytes: &[u8]) -> Result<LogMelSpectrogram> {
    let mut cur = Cursor::new(bytes);
    cur.expect_magic(MATRIX_MAGIC)?;
    cur.expect_version(MATRIX_VERSION)?;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let frame_rate = cur.f64()?;
    let log_floor = cur.f64()?;
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::FormatError("matrix size overflows".into()))?;
    let payload = cur.take(n)?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let id_len = cur.u32()? as usize;
    let clip_id = String::from_utf8(cur.take(id_len)?.to_vec())
        .map_err(|e| Error::FormatError(format!("clip id is not UTF-8: {e}")))?;
    let values = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::FormatError(e.to_string()))?;
    Ok(LogMelSpectrogram {
        values,
        frame_rate,
        log_floor,
        clip_id,
    })
}

pub fn write_spectrogram(spec: &LogMelSpectrogram, path: &Path) -> Result<()> {
    fs::write(path, encode_spectrogram(spec))?;
    Ok(())
}

pub fn read_spectrogram(path: &Path) -> Result<LogMelSpectrogram> {
    decode_spectrogram(&fs::read(path)?)
}
