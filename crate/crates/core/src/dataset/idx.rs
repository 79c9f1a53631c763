//! IDX reader and writer (the MNIST distribution format). Files ending in
//! `.gz` are transparently (de)compressed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;

use super::LabeledDataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        if end > self.bytes.len() {
            return Err(self.truncated());
        }
        let v = BigEndian::read_u32(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| self.truncated())?;
        if end > self.bytes.len() {
            return Err(self.truncated());
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn truncated(&self) -> Error {
        Error::TruncatedFile {
            path: self.path.to_path_buf(),
            offset: self.bytes.len() as u64,
        }
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                offset: 0,
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Loads an IDX image file and its label file. Pixels are scaled to [0, 1]
/// and the class count is fixed at 10.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();

    let image_bytes = read_bytes(images_path)?;
    let mut img = Cursor {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    img.magic(IMAGE_MAGIC)?;
    let n_images = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let dim = rows * cols;

    let label_bytes = read_bytes(labels_path)?;
    let mut lab = Cursor {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    lab.magic(LABEL_MAGIC)?;
    let n_labels = lab.u32()? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
            image_count: n_images,
            label_count: n_labels,
        });
    }

    let pixels = img.take(n_images * dim)?;
    let features = Array2::from_shape_fn((n_images, dim), |(i, j)| f64::from(pixels[i * dim + j]) / 255.0);
    let labels: Vec<usize> = lab.take(n_labels)?.iter().map(|&b| b as usize).collect();
    if let Some(pos) = labels.iter().position(|&l| l >= 10) {
        return Err(Error::InvalidArgument(format!(
            "{}: label {} at offset {} outside [0, 10)",
            labels_path.display(),
            labels[pos],
            8 + pos
        )));
    }
    LabeledDataset::new(features, labels, 10)
}

/// Writes `dataset` as an IDX pair. Feature values are quantised back to bytes
/// (`round(v * 255)`), and `rows * cols` must equal the feature dimension.
pub fn write_idx(
    dataset: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != dataset.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{rows}x{cols} images cannot hold {} features",
            dataset.dim()
        )));
    }
    if dataset.labels.iter().any(|&l| l > u8::MAX as usize) {
        return Err(Error::InvalidArgument("labels must fit in a byte".into()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.features.len());
    images.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
    images.write_u32::<BigEndian>(n).unwrap();
    images.write_u32::<BigEndian>(rows as u32).unwrap();
    images.write_u32::<BigEndian>(cols as u32).unwrap();
    images.extend(dataset.features.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
    labels.write_u32::<BigEndian>(n).unwrap();
    labels.extend(dataset.labels.iter().map(|&l| l as u8));

    write_bytes(images_path.as_ref(), &images)?;
    write_bytes(labels_path.as_ref(), &labels)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?;
        Ok(())
    } else {
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = Vec::new();
        v.write_u32::<BigEndian>(magic).unwrap();
        for &d in dims {
            v.write_u32::<BigEndian>(d).unwrap();
        }
        v
    }

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let mut images = header(IMAGE_MAGIC, &[2, 28, 28]);
        images.extend(std::iter::repeat_n(0u8, 784));
        images.extend(std::iter::repeat_n(255u8, 784));
        let mut labels = header(LABEL_MAGIC, &[2]);
        labels.extend([3u8, 7]);
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn two_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.labels, vec![3, 7]);
        assert!(ds.features.row(0).iter().all(|&v| v == 0.0));
        assert!(ds.features.row(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn label_file_with_image_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = fixture(dir.path());
        let bad = dir.path().join("bad.idx");
        let mut bytes = header(IMAGE_MAGIC, &[2]);
        bytes.extend([0u8, 1]);
        fs::write(&bad, bytes).unwrap();
        match load_idx(&ip, &bad) {
            Err(Error::BadMagic { path, found, expected, .. }) => {
                assert_eq!(path, bad);
                assert_eq!(found, IMAGE_MAGIC);
                assert_eq!(expected, LABEL_MAGIC);
            }
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let short = dir.path().join("short.idx");
        let full = fs::read(&ip).unwrap();
        fs::write(&short, &full[..full.len() - 10]).unwrap();
        assert!(matches!(load_idx(&short, &lp), Err(Error::TruncatedFile { .. })));

        let three = dir.path().join("three.idx");
        let mut bytes = header(LABEL_MAGIC, &[3]);
        bytes.extend([0u8, 1, 2]);
        fs::write(&three, bytes).unwrap();
        assert!(matches!(load_idx(&ip, &three), Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn gz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path());
        let ds = load_idx(&ip, &lp).unwrap();
        let gi = dir.path().join("i.idx.gz");
        let gl = dir.path().join("l.idx.gz");
        write_idx(&ds, 28, 28, &gi, &gl).unwrap();
        assert_eq!(load_idx(&gi, &gl).unwrap(), ds);
    }
}
