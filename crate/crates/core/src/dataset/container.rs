//! Canonical binary container.
//!
//! Layout (all integers little-endian):
//!
//! | field       | size                    |
//! |-------------|-------------------------|
//! | magic       | 4 bytes, `b"DPAD"`      |
//! | version     | u32                     |
//! | dim         | u32                     |
//! | num_classes | u32                     |
//! | m           | u64                     |
//! | items       | m × (dim bytes + u32)   |
//!
//! Items are written in canonical order, so the encoding (and its SHA-256) is
//! a function of the item set alone.

use super::{canonical_sort, Dataset, LabeledSample};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: [u8; 4] = *b"DPAD";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let sorted = canonical_sort(d);
    let mut out = Vec::with_capacity(HEADER_LEN + sorted.len() * (d.dim() + 4));
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.dim() as u32).to_le_bytes());
    out.extend_from_slice(&d.num_classes().to_le_bytes());
    out.extend_from_slice(&(sorted.len() as u64).to_le_bytes());
    for t in &sorted {
        out.extend_from_slice(t.sample.features());
        out.extend_from_slice(&t.label.to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse("container", format!("byte {}", bytes.len()), "truncated header"));
    }
    if bytes[0..4] != CONTAINER_MAGIC {
        return Err(Error::parse("container", "byte 0", "bad magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CONTAINER_VERSION {
        return Err(Error::parse("container", "byte 4", format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let num_classes = u32_at(12);
    let m = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let stride = dim + 4;
    let expected = HEADER_LEN + m * stride;
    if bytes.len() != expected {
        return Err(Error::parse(
            "container",
            format!("byte {}", bytes.len().min(expected)),
            format!("payload holds {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let items = bytes[HEADER_LEN..]
        .chunks_exact(stride)
        .map(|rec| {
            let label = u32::from_le_bytes(rec[dim..].try_into().unwrap());
            LabeledSample::new(rec[..dim].to_vec(), label)
        })
        .collect();
    Dataset::new(dim, num_classes, items)
}
