//! CIFAR-10 binary batches: each record is one label byte followed by a
//! 32x32 image stored as three colour planes.

use super::{resolve_num_classes, Dataset, LabeledSample};
use crate::error::{Error, Result};

pub const CIFAR_DIM: usize = 3 * 32 * 32;
const RECORD: usize = 1 + CIFAR_DIM;

/// Concatenates the records of several batch files, in order.
pub fn parse_cifar(batches: &[&[u8]], num_classes: Option<u32>) -> Result<Dataset> {
    for (b, bytes) in batches.iter().enumerate() {
        if bytes.len() % RECORD != 0 {
            return Err(Error::parse(
                format!("batch {b}"),
                format!("byte {}", bytes.len() - bytes.len() % RECORD),
                format!("{} bytes is not a whole number of {RECORD}-byte records", bytes.len()),
            ));
        }
    }
    let records = || batches.iter().flat_map(|bytes| bytes.chunks_exact(RECORD));
    let classes = resolve_num_classes(records().map(|r| u32::from(r[0])), num_classes);
    for (b, bytes) in batches.iter().enumerate() {
        if let Some(pos) = bytes.chunks_exact(RECORD).position(|r| u32::from(r[0]) >= classes) {
            return Err(Error::parse(
                format!("batch {b}"),
                format!("byte {}", pos * RECORD),
                format!("label {} outside [0, {classes})", bytes[pos * RECORD]),
            ));
        }
    }
    let items = records()
        .map(|r| LabeledSample::new(r[1..].to_vec(), u32::from(r[0])))
        .collect();
    Dataset::new(CIFAR_DIM, classes, items)
}
