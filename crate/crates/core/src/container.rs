//! Binary container used by trace files, feature files and checkpoints.
//!
//! Layout: a little-endian `u32` header length, the UTF-8 JSON header, then a
//! payload of little-endian `f64` values. The header carries whatever typed
//! metadata the caller serializes; the payload is one flat array the caller
//! slices by convention (or by explicit offsets stored in the header).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Serialize `header` + `payload` into the container byte layout.
pub fn to_bytes<H: Serialize>(header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let header_bytes = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(4 + header_bytes.len() + payload.len() * 8);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parse a container from bytes.
pub fn from_bytes<H: DeserializeOwned>(bytes: &[u8], what: &str) -> Result<(H, Vec<f64>)> {
    let malformed = |reason: &str| Error::MalformedFile {
        path: what.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 4 {
        return Err(malformed("shorter than header length field"));
    }
    let header_len = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let payload_start = 4 + header_len;
    if bytes.len() < payload_start {
        return Err(malformed("truncated header"));
    }
    let header: H = serde_json::from_slice(&bytes[4..payload_start])?;
    let payload_bytes = &bytes[payload_start..];
    if payload_bytes.len() % 8 != 0 {
        return Err(malformed("payload is not a whole number of f64 values"));
    }
    let mut payload = Vec::with_capacity(payload_bytes.len() / 8);
    for chunk in payload_bytes.chunks_exact(8) {
        payload.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((header, payload))
}

pub fn write_file<H: Serialize>(path: &Path, header: &H, payload: &[f64]) -> Result<()> {
    let bytes = to_bytes(header, payload)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    from_bytes(&bytes, &path.display().to_string())
}
