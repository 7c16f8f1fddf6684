//! IRTB v1 template files.
//!
//! ```text
//! "IRTB"  0x01  rows:u16le  cols:u16le  bits_per_cell:u8
//! code plane, row-major, LSB-first, padded to a whole byte
//! mask plane, same layout
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{bits, Geometry, Template, TemplateError};

pub const MAGIC: &[u8; 4] = b"IRTB";
pub const VERSION: u8 = 0x01;
const HEADER_LEN: usize = 10;

#[derive(Debug, Error)]
pub enum IrtbError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an IRTB file")]
    BadMagic,
    #[error("unsupported IRTB version {0}")]
    UnsupportedVersion(u8),
    #[error("IRTB payload is {got} bytes, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

fn plane_bytes(g: Geometry) -> usize {
    g.bit_len().div_ceil(8)
}

fn encode_plane(g: Geometry, words: &[u64], out: &mut Vec<u8>) {
    let mut buf = vec![0u8; plane_bytes(g)];
    for row in 0..g.rows() as usize {
        for col in 0..g.cols() as usize {
            for bit in 0..g.bits_per_cell() as usize {
                if bits::get(words, g.storage_index(row, col, bit)) {
                    let i = g.row_major_index(row, col, bit);
                    buf[i / 8] |= 1 << (i % 8);
                }
            }
        }
    }
    out.extend_from_slice(&buf);
}

fn decode_plane(g: Geometry, bytes: &[u8]) -> Vec<u64> {
    let mut words = vec![0u64; g.words()];
    for row in 0..g.rows() as usize {
        for col in 0..g.cols() as usize {
            for bit in 0..g.bits_per_cell() as usize {
                let i = g.row_major_index(row, col, bit);
                if (bytes[i / 8] >> (i % 8)) & 1 == 1 {
                    bits::set(&mut words, g.storage_index(row, col, bit), true);
                }
            }
        }
    }
    words
}

pub fn encode(t: &Template) -> Vec<u8> {
    let g = t.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + 2 * plane_bytes(g));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&g.rows().to_le_bytes());
    out.extend_from_slice(&g.cols().to_le_bytes());
    out.push(g.bits_per_cell());
    encode_plane(g, t.code_words(), &mut out);
    encode_plane(g, t.mask_words(), &mut out);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Template, IrtbError> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(IrtbError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(IrtbError::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < HEADER_LEN {
        return Err(IrtbError::Length { expected: HEADER_LEN, got: bytes.len() });
    }
    let rows = u16::from_le_bytes([bytes[5], bytes[6]]);
    let cols = u16::from_le_bytes([bytes[7], bytes[8]]);
    let g = Geometry::new(rows, cols, bytes[9])?;
    let n = plane_bytes(g);
    let body = &bytes[HEADER_LEN..];
    if body.len() != 2 * n {
        return Err(IrtbError::Length { expected: HEADER_LEN + 2 * n, got: bytes.len() });
    }
    let code = decode_plane(g, &body[..n]);
    let mask = decode_plane(g, &body[n..]);
    Ok(Template::new(g, code, mask)?)
}

pub fn write_file(path: &Path, t: &Template) -> Result<(), IrtbError> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Template, IrtbError> {
    decode(&fs::read(path)?)
}
