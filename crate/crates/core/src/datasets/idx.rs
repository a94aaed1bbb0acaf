//! IDX container: a big-endian header (two zero bytes, a type code, the
//! number of dimensions, then one `u32` per dimension) followed by the
//! payload. Only unsigned-byte payloads (type code `0x08`) are supported.
//! Files ending in `.gz` are transparently (de)compressed.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array4;

use super::{ImageDataset, ImageSet, Labels};
use crate::{Error, Result};

const UBYTE: u8 = 0x08;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    if is_gz(path) {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(bytes)
}

/// Parses the header; returns the dimension sizes and the payload.
fn parse<'a>(bytes: &'a [u8], path: &Path) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(Error::Length(format!(
            "{}: {} bytes is too short for an IDX header",
            path.display(),
            bytes.len()
        )));
    }
    if bytes[0] != 0 || bytes[1] != 0 || bytes[2] != UBYTE || bytes[3] == 0 {
        return Err(Error::Format(format!(
            "{}: bad IDX magic number 0x{:02x}{:02x}{:02x}{:02x}",
            path.display(),
            bytes[0],
            bytes[1],
            bytes[2],
            bytes[3]
        )));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Length(format!(
            "{}: header declares {ndim} dimensions but the file ends after {} bytes",
            path.display(),
            bytes.len()
        )));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(Error::Length(format!(
            "{}: expected {expected} payload bytes for dimensions {dims:?}, found {}",
            path.display(),
            payload.len()
        )));
    }
    Ok((dims, &payload[..expected]))
}

/// Reads a 3-D (`0x00000803`, single channel) or 4-D (`0x00000804`,
/// channels last) image tensor, scaling bytes to `[0, 1]`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (dims, payload) = parse(&bytes, path)?;
    let shape = match dims.as_slice() {
        &[n, h, w] => (n, h, w, 1),
        &[n, h, w, c] => (n, h, w, c),
        other => {
            return Err(Error::Format(format!(
                "{}: image files need 3 or 4 dimensions, found {}",
                path.display(),
                other.len()
            )))
        }
    };
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    let images = Array4::from_shape_vec(shape, data).expect("shape checked against payload");
    ImageSet::new(images)
}

/// Reads a label vector (`0x00000801`).
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (dims, payload) = parse(&bytes, path)?;
    if dims.len() != 1 {
        return Err(Error::Format(format!(
            "{}: label files need 1 dimension, found {}",
            path.display(),
            dims.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads an image file plus optional labels. The class count is
/// `max(label) + 1`, or 1 without labels.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: Option<&Path>) -> Result<ImageDataset> {
    let images_path = images_path.as_ref();
    let images = read_idx_images(images_path)?;
    let labels = match labels_path {
        Some(p) => {
            let values = read_idx_labels(p)?;
            if values.len() != images.len() {
                return Err(Error::Consistency(format!(
                    "{} holds {} labels but {} holds {} images",
                    p.display(),
                    values.len(),
                    images_path.display(),
                    images.len()
                )));
            }
            let k = values.iter().max().map_or(1, |m| m + 1);
            Some(Labels::new(values, k)?)
        }
        None => None,
    };
    let num_classes = labels.as_ref().map_or(1, Labels::num_classes);
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImageDataset::new(name, images, labels, num_classes)
}

fn write_bytes(path: &Path, header: &[u8], payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(header)
            .and_then(|_| enc.write_all(payload))
            .and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(header)
            .and_then(|_| w.write_all(payload))
            .and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

fn header(dims: &[usize]) -> Vec<u8> {
    let mut h = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        h.extend_from_slice(&(d as u32).to_be_bytes());
    }
    h
}

/// Writes images quantised to bytes; single-channel sets use the 3-D layout.
pub fn write_idx_images(path: impl AsRef<Path>, images: &ImageSet) -> Result<()> {
    let (n, h, w, c) = images.view().dim();
    let dims: Vec<usize> = if c == 1 { vec![n, h, w] } else { vec![n, h, w, c] };
    let payload: Vec<u8> = images
        .view()
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write_bytes(path.as_ref(), &header(&dims), &payload)
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&l| l > 255) {
        return Err(Error::Format(format!("label {bad} does not fit in a byte")));
    }
    let payload: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    write_bytes(path.as_ref(), &header(&[labels.len()]), &payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ImageSet {
        ImageSet::new(Array4::from_shape_fn((3, 4, 5, 1), |(a, b, c, _)| {
            ((a * 20 + b * 5 + c) % 17) as f32 / 16.0
        }))
        .unwrap()
    }

    #[test]
    fn round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["img.idx", "img.idx.gz"] {
            let p = dir.path().join(name);
            let set = tiny();
            write_idx_images(&p, &set).unwrap();
            let back = read_idx_images(&p).unwrap();
            assert_eq!(back.view().dim(), set.view().dim());
            for (a, b) in back.view().iter().zip(set.view().iter()) {
                assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
            }
        }
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.idx");
        let mut bytes = header(&[10, 28, 28]);
        bytes.extend(std::iter::repeat_n(0u8, 100));
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Length(_))));
        // header only
        std::fs::write(&p, header(&[10, 28, 28])).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Length(_))));
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.idx");
        std::fs::write(&p, [0x12, 0x34, 0x56, 0x78, 0, 0, 0, 1, 0]).unwrap();
        assert!(matches!(read_idx_images(&p), Err(Error::Format(_))));
    }

    #[test]
    fn label_count_mismatch_is_a_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lab.idx");
        write_idx_images(&ip, &tiny()).unwrap();
        write_idx_labels(&lp, &[0, 1]).unwrap();
        assert!(matches!(
            load_idx(&ip, Some(lp.as_path())),
            Err(Error::Consistency(_))
        ));
        write_idx_labels(&lp, &[0, 1, 1]).unwrap();
        let ds = load_idx(&ip, Some(lp.as_path())).unwrap();
        assert_eq!(ds.num_classes, 2);
    }
}
