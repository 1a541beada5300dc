//! Binary PGM (P5, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use super::{IoError, ThermalFrame};

/// Encodes a frame as binary PGM.
pub fn encode_pgm(frame: &ThermalFrame) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn write_pgm(path: &Path, frame: &ThermalFrame) -> Result<(), IoError> {
    fs::write(path, encode_pgm(frame))?;
    Ok(())
}

/// Reads a P5 file. The returned frame carries `timestamp`; PGM has no clock.
pub fn read_pgm(path: &Path, timestamp: f64, frame_index: usize) -> Result<ThermalFrame, IoError> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IoError::MissingFile(path.to_path_buf()),
        _ => IoError::Io(e),
    })?;
    let malformed =
        |reason: String| IoError::MalformedRecord { path: path.to_path_buf(), location: frame_index, reason };
    let (width, height, data) = decode_pgm(&bytes).map_err(malformed)?;
    ThermalFrame::new(timestamp, width, height, data.to_vec()).map_err(malformed)
}

fn decode_pgm(bytes: &[u8]) -> Result<(u32, u32, &[u8]), String> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or("empty file")?;
    if magic != b"P5" {
        return Err(format!("unsupported magic {:?}", String::from_utf8_lossy(magic)));
    }
    let mut field = |name: &str| -> Result<u32, String> {
        let tok = next_token(bytes, &mut pos).ok_or(format!("missing {name}"))?;
        std::str::from_utf8(tok).ok().and_then(|s| s.parse::<u32>().ok()).ok_or(format!("bad {name}"))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width as usize * height as usize;
    let data = bytes.get(pos..pos + n).ok_or("truncated raster")?;
    Ok((width, height, data))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}
