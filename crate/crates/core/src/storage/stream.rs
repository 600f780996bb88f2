//! `.stream` files: one header line followed by little-endian f32 rows.
//!
//! ```text
//! sample_rate=25 dim=1 dtype=f32 frame_count=3\n
//! <3 * 1 * 4 bytes>
//! ```

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::SampleRate;

pub const DTYPE_F32: &str = "f32";

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("malformed stream header: {0}")]
    MalformedHeader(String),
    #[error("unknown dtype {0:?}")]
    UnknownDtype(String),
    #[error("truncated: header declares {expected} payload bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("length mismatch: header declares {expected} payload bytes, found {actual}")]
    LengthMismatch { expected: u64, actual: u64 },
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    Shape { expected: u64, actual: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub sample_rate: SampleRate,
    pub dim: u32,
    pub dtype: String,
    pub frame_count: u64,
}

impl StreamHeader {
    pub fn f32(sample_rate: SampleRate, dim: u32, frame_count: u64) -> Self {
        Self {
            sample_rate,
            dim,
            dtype: DTYPE_F32.into(),
            frame_count,
        }
    }

    pub fn value_count(&self) -> u64 {
        self.frame_count * self.dim as u64
    }

    pub fn payload_len(&self) -> u64 {
        self.value_count() * 4
    }

    pub fn to_line(&self) -> String {
        format!(
            "sample_rate={} dim={} dtype={} frame_count={}\n",
            self.sample_rate, self.dim, self.dtype, self.frame_count
        )
    }

    fn parse_line(line: &str) -> Result<Self, StreamError> {
        let bad = |why: &str| StreamError::MalformedHeader(format!("{why}: {line:?}"));
        let fields: Vec<(&str, &str)> = line
            .split(' ')
            .map(|kv| kv.split_once('=').ok_or_else(|| bad("expected key=value")))
            .collect::<Result<_, _>>()?;
        let names: Vec<&str> = fields.iter().map(|(k, _)| *k).collect();
        if names != ["sample_rate", "dim", "dtype", "frame_count"] {
            return Err(bad("fields must be sample_rate dim dtype frame_count"));
        }
        let sample_rate = fields[0].1.parse().map_err(|_| bad("sample_rate"))?;
        let dim: u32 = fields[1].1.parse().map_err(|_| bad("dim"))?;
        if dim == 0 {
            return Err(bad("dim must be >= 1"));
        }
        if fields[2].1 != DTYPE_F32 {
            return Err(StreamError::UnknownDtype(fields[2].1.to_string()));
        }
        let frame_count = fields[3].1.parse().map_err(|_| bad("frame_count"))?;
        Ok(Self::f32(sample_rate, dim, frame_count))
    }
}

/// Encodes a stream; `frames` is row-major `frame_count x dim`.
pub fn encode_stream(header: &StreamHeader, frames: &[f32]) -> Result<Vec<u8>, StreamError> {
    if header.dtype != DTYPE_F32 {
        return Err(StreamError::UnknownDtype(header.dtype.clone()));
    }
    if header.dim == 0 {
        return Err(StreamError::MalformedHeader("dim must be >= 1".into()));
    }
    if frames.len() as u64 != header.value_count() {
        return Err(StreamError::Shape {
            expected: header.value_count(),
            actual: frames.len() as u64,
        });
    }
    let line = header.to_line();
    let mut out = Vec::with_capacity(line.len() + frames.len() * 4);
    out.extend_from_slice(line.as_bytes());
    for v in frames {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<f32>), StreamError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| StreamError::MalformedHeader("missing newline".into()))?;
    let line = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| StreamError::MalformedHeader("header is not UTF-8".into()))?;
    let header = StreamHeader::parse_line(line)?;
    let payload = &bytes[nl + 1..];
    let expected = header.payload_len();
    let actual = payload.len() as u64;
    if actual < expected {
        return Err(StreamError::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(StreamError::LengthMismatch { expected, actual });
    }
    let frames = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, frames))
}

pub fn write_stream(path: impl AsRef<Path>, header: &StreamHeader, frames: &[f32]) -> Result<(), StreamError> {
    fs::write(path, encode_stream(header, frames)?)?;
    Ok(())
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<(StreamHeader, Vec<f32>), StreamError> {
    decode_stream(&fs::read(path)?)
}
