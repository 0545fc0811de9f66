//! Reader and writer for the IDX files MNIST is distributed in.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{PltmError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Raw images and labels as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxData {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, row-major.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl IdxData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(out)
            }
            None => Err(PltmError::TruncatedFile {
                path: self.path.to_path_buf(),
                offset: self.offset,
                needed: n,
            }),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32_be()?;
        if found != expected {
            return Err(PltmError::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        PltmError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Reads an image file and a label file and checks that they agree.
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<IdxData> {
    let image_bytes = read(images_path)?;
    let mut cur = Cursor {
        path: images_path,
        bytes: &image_bytes,
        offset: 0,
    };
    cur.magic(IMAGE_MAGIC)?;
    let count = cur.u32_be()? as usize;
    let rows = cur.u32_be()? as usize;
    let cols = cur.u32_be()? as usize;
    let pixels = cur.take(count * rows * cols)?.to_vec();

    let label_bytes = read(labels_path)?;
    let mut cur = Cursor {
        path: labels_path,
        bytes: &label_bytes,
        offset: 0,
    };
    cur.magic(LABEL_MAGIC)?;
    let label_count = cur.u32_be()? as usize;
    if label_count != count {
        return Err(PltmError::CountMismatch {
            images_path: images_path.to_path_buf(),
            labels_path: labels_path.to_path_buf(),
            images: count,
            labels: label_count,
        });
    }
    let label_offset = cur.offset;
    let labels = cur.take(count)?.to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(PltmError::InvalidData {
            path: labels_path.to_path_buf(),
            offset: label_offset + pos,
            reason: format!("label {} is not a digit", labels[pos]),
        });
    }
    Ok(IdxData {
        rows,
        cols,
        pixels,
        labels,
    })
}

/// Writes `data` as an image file and a label file.
pub fn write_idx(data: &IdxData, images_path: &Path, labels_path: &Path) -> Result<()> {
    let n = data.len();
    if data.pixels.len() != n * data.rows * data.cols {
        return Err(PltmError::ShapeMismatch {
            expected: n * data.rows * data.cols,
            actual: data.pixels.len(),
        });
    }
    let mut f = fs::File::create(images_path)?;
    for v in [IMAGE_MAGIC, n as u32, data.rows as u32, data.cols as u32] {
        f.write_all(&v.to_be_bytes())?;
    }
    f.write_all(&data.pixels)?;
    let mut f = fs::File::create(labels_path)?;
    f.write_all(&LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(n as u32).to_be_bytes())?;
    f.write_all(&data.labels)?;
    Ok(())
}

/// Standard MNIST file names inside `dir`, for `"train"` or `"t10k"`.
pub fn mnist_paths(dir: &Path, prefix: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IdxData {
        IdxData {
            rows: 2,
            cols: 3,
            pixels: (0..18).map(|v| (v * 13) as u8).collect(),
            labels: vec![7, 0, 9],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&sample(), &i, &l).unwrap();
        assert_eq!(read_idx(&i, &l).unwrap(), sample());
    }

    #[test]
    fn header_errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&sample(), &i, &l).unwrap();

        match read_idx(&l, &l) {
            Err(PltmError::BadMagic { path, found, expected }) => {
                assert_eq!(path, l);
                assert_eq!((found, expected), (LABEL_MAGIC, IMAGE_MAGIC));
            }
            other => panic!("{other:?}"),
        }

        let bytes = fs::read(&i).unwrap();
        fs::write(&i, &bytes[..bytes.len() - 1]).unwrap();
        match read_idx(&i, &l) {
            Err(PltmError::TruncatedFile { path, offset, needed }) => {
                assert_eq!(path, i);
                assert_eq!((offset, needed), (16, 18));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn count_mismatch_and_bad_labels() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&sample(), &i, &l).unwrap();
        let mut short = sample();
        short.labels.pop();
        short.pixels.truncate(12);
        let (i2, l2) = (dir.path().join("i2"), dir.path().join("l2"));
        write_idx(&short, &i2, &l2).unwrap();
        assert!(matches!(
            read_idx(&i, &l2),
            Err(PltmError::CountMismatch { images: 3, labels: 2, .. })
        ));

        let mut bad = sample();
        bad.labels[2] = 10;
        write_idx(&bad, &i, &l).unwrap();
        assert!(matches!(
            read_idx(&i, &l),
            Err(PltmError::InvalidData { offset: 10, .. })
        ));
    }
}
