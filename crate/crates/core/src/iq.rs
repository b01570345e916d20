//! Raw I/Q sample files: interleaved little-endian `f32` pairs.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn encode_iq_f32(samples: &[Complex64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        bytes.extend_from_slice(&(s.re as f32).to_le_bytes());
        bytes.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_iq_f32(bytes: &[u8]) -> Option<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect(),
    )
}

pub fn write_iq_f32(path: &Path, samples: &[Complex64]) -> Result<()> {
    fs::write(path, encode_iq_f32(samples)).map_err(|e| Error::io(path, e))
}

pub fn read_iq_f32(path: &Path) -> Result<Vec<Complex64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_iq_f32(&bytes).ok_or_else(|| {
        Error::format(
            path,
            format!("length {} is not a multiple of 8", bytes.len()),
        )
    })
}

/// Rounds every component to `f32`, i.e. what a write/read cycle yields.
pub fn quantize_f32(samples: &mut [Complex64]) {
    for s in samples {
        *s = Complex64::new(s.re as f32 as f64, s.im as f32 as f64);
    }
}
