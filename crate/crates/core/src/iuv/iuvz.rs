//! IUVZ: compact binary IUV maps.
//!
//! Layout (little-endian): magic `IUVZ`, version `u16 = 1`, height `u32`,
//! width `u32`, then `H*W` part bytes, `H*W` `u16` u values, `H*W` `u16` v
//! values. UV are quantized as `round(x * 65535)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::IuvMap;

const MAGIC: &[u8; 4] = b"IUVZ";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;
const QUANT: f32 = 65535.0;
/// Upper bound on `H * W`; protects readers from hostile headers.
const MAX_PIXELS: u64 = 1 << 28;

pub fn encode_iuvz(m: &IuvMap) -> Vec<u8> {
    let n = m.height() * m.width();
    let mut out = Vec::with_capacity(HEADER_LEN + 5 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.height() as u32).to_le_bytes());
    out.extend_from_slice(&(m.width() as u32).to_le_bytes());
    out.extend_from_slice(m.parts());
    for channel in [m.u(), m.v()] {
        for &x in channel {
            out.extend_from_slice(&((x * QUANT).round() as u16).to_le_bytes());
        }
    }
    out
}

pub fn decode_iuvz(bytes: &[u8]) -> Result<IuvMap> {
    let fail = |offset: usize, msg: String| Error::Format { offset: offset as u64, msg };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}, expected \"IUVZ\"", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let height = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let width = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes"));
    if height == 0 || width == 0 {
        return Err(fail(6, format!("dimensions must be >= 1, got {height}x{width}")));
    }
    let pixels = height as u64 * width as u64;
    if pixels > MAX_PIXELS {
        return Err(fail(6, format!("dimensions {height}x{width} overflow the {MAX_PIXELS}-pixel limit")));
    }
    let n = pixels as usize;
    let expected = HEADER_LEN + 5 * n;
    if bytes.len() < expected {
        return Err(fail(bytes.len(), format!("truncated payload: expected {expected} bytes, got {}", bytes.len())));
    }
    if bytes.len() > expected {
        return Err(fail(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let part = bytes[HEADER_LEN..HEADER_LEN + n].to_vec();
    if let Some(i) = part.iter().position(|&p| p > 24) {
        return Err(fail(HEADER_LEN + i, format!("part index {} out of range", part[i])));
    }
    let read_channel = |start: usize| -> Vec<f32> {
        bytes[start..start + 2 * n].chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 / QUANT).collect()
    };
    let u = read_channel(HEADER_LEN + n);
    let v = read_channel(HEADER_LEN + 3 * n);
    IuvMap::new(height as usize, width as usize, part, u, v)
        .map_err(|e| fail(HEADER_LEN, format!("invalid map content: {e}")))
}

pub fn write_iuvz(m: &IuvMap, path: &Path) -> Result<()> {
    fs::write(path, encode_iuvz(m)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_iuvz(path: &Path) -> Result<IuvMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_iuvz(&bytes)
}
