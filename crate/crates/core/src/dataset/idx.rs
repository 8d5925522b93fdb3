//! IDX files as published for MNIST: big-endian header, then raw u8 payload.

use super::{resolve_num_classes, Dataset, LabeledSample};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, name: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(name, format!("byte {offset}"), "truncated header"))
}

/// Parses an IDX image file and its companion label file.
pub fn parse_idx(images: &[u8], labels: &[u8], num_classes: Option<u32>) -> Result<Dataset> {
    let magic = read_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            "images",
            "byte 0",
            format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::parse("images", "byte 8", "zero image dimension"));
    }
    let expected = 16 + count * dim;
    if images.len() != expected {
        return Err(Error::parse(
            "images",
            format!("byte {}", images.len().min(expected)),
            format!("payload holds {} bytes, header implies {expected}", images.len()),
        ));
    }

    let magic = read_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            "labels",
            "byte 0",
            format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = read_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::parse(
            "labels",
            "byte 4",
            format!("{label_count} labels for {count} images"),
        ));
    }
    if labels.len() != 8 + count {
        return Err(Error::parse(
            "labels",
            format!("byte {}", labels.len().min(8 + count)),
            format!("payload holds {} bytes, header implies {}", labels.len(), 8 + count),
        ));
    }
    let label_bytes = &labels[8..];
    let classes = resolve_num_classes(label_bytes.iter().map(|&l| u32::from(l)), num_classes);
    if let Some(pos) = label_bytes.iter().position(|&l| u32::from(l) >= classes) {
        return Err(Error::parse(
            "labels",
            format!("byte {}", 8 + pos),
            format!("label {} outside [0, {classes})", label_bytes[pos]),
        ));
    }

    let items = images[16..]
        .chunks_exact(dim)
        .zip(label_bytes)
        .map(|(px, &l)| LabeledSample::new(px.to_vec(), u32::from(l)))
        .collect();
    Dataset::new(dim, classes, items)
}

/// Writes a dataset (in its current item order) as an IDX pair. Used by tests
/// and tooling that need MNIST-shaped fixtures.
pub fn write_idx(d: &Dataset, rows: u32, cols: u32) -> Result<(Vec<u8>, Vec<u8>)> {
    if (rows * cols) as usize != d.dim() {
        return Err(Error::DimensionMismatch {
            expected: d.dim(),
            actual: (rows * cols) as usize,
        });
    }
    let mut images = Vec::with_capacity(16 + d.len() * d.dim());
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(d.len() as u32).to_be_bytes());
    images.extend_from_slice(&rows.to_be_bytes());
    images.extend_from_slice(&cols.to_be_bytes());
    let mut labels = Vec::with_capacity(8 + d.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(d.len() as u32).to_be_bytes());
    for t in d.items() {
        images.extend_from_slice(t.sample.features());
        let l = u8::try_from(t.label)
            .map_err(|_| Error::InvalidArgument(format!("label {} does not fit IDX", t.label)))?;
        labels.push(l);
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Dataset {
        Dataset::new(
            4,
            3,
            vec![
                LabeledSample::new(vec![0, 1, 2, 3], 2),
                LabeledSample::new(vec![9, 9, 9, 9], 0),
                LabeledSample::new(vec![255, 0, 0, 1], 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let d = fixture();
        let (img, lab) = write_idx(&d, 2, 2).unwrap();
        let back = parse_idx(&img, &lab, None).unwrap();
        assert_eq!(back.items(), d.items());
        assert_eq!(back.dim(), 4);
        assert_eq!(back.num_classes(), 3);
    }

    #[test]
    fn bad_magic_names_offset() {
        let (mut img, lab) = write_idx(&fixture(), 2, 2).unwrap();
        img[3] = 0x01;
        let err = parse_idx(&img, &lab, None).unwrap_err().to_string();
        assert!(err.contains("byte 0"), "{err}");
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn count_mismatch() {
        let (img, mut lab) = write_idx(&fixture(), 2, 2).unwrap();
        lab[7] = 2;
        lab.pop();
        let err = parse_idx(&img, &lab, None).unwrap_err().to_string();
        assert!(err.contains("2 labels for 3 images"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let (mut img, lab) = write_idx(&fixture(), 2, 2).unwrap();
        img.truncate(img.len() - 1);
        let err = parse_idx(&img, &lab, None).unwrap_err().to_string();
        assert!(err.contains("byte 27"), "{err}");
    }

    #[test]
    fn label_out_of_declared_range() {
        let (img, lab) = write_idx(&fixture(), 2, 2).unwrap();
        let err = parse_idx(&img, &lab, Some(2)).unwrap_err().to_string();
        assert!(err.contains("byte 8"), "{err}");
    }
}
