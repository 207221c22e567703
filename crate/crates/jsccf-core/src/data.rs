//! Dataset ingestion: CIFAR10 binary batches, binary PPM (P6), and seeded
//! synthetic images. Pixels are ingested as 8-bit values and stored
//! normalized to `[0, 1]`; class labels are read and discarded.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::seeds::data_rng;
use rand::Rng;

/// One image is an `H x W x C` tensor with values in `[0, 1]`.
pub type Image = Tensor<f32>;

const CIFAR_DIM: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_DIM * CIFAR_DIM;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: truncated, {size} bytes is not a multiple of the {record}-byte record")]
    Truncated {
        path: String,
        size: usize,
        record: usize,
    },
    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: String, expected: String },
    #[error("{path}: unsupported maxval {maxval}, only 255 is accepted")]
    UnsupportedMaxval { path: String, maxval: u64 },
    #[error("image dimensions {height}x{width} must be positive and divisible by 4")]
    BadDims { height: usize, width: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("images have inconsistent dimensions: {first:?} vs {other:?}")]
    Inconsistent { first: Vec<usize>, other: Vec<usize> },
    #[error("{path}: malformed header: {what}")]
    MalformedHeader { path: String, what: String },
}

/// An ordered image collection with stable string ids.
pub struct Dataset {
    images: Vec<Image>,
    ids: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, ids: Vec<String>) -> Result<Self, DataError> {
        if images.is_empty() {
            return Err(DataError::Empty);
        }
        assert_eq!(images.len(), ids.len(), "one id per image");
        let first = images[0].shape().to_vec();
        for img in &images {
            if img.shape() != first {
                return Err(DataError::Inconsistent {
                    first,
                    other: img.shape().to_vec(),
                });
            }
        }
        let (h, w) = (first[0], first[1]);
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(DataError::BadDims {
                height: h,
                width: w,
            });
        }
        Ok(Self { images, ids })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// (height, width, channels)
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.images[0].shape();
        (s[0], s[1], s[2])
    }

    /// New dataset holding the given images (by index, order kept).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    /// Stacks the indexed images into one `N x H x W x C` batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let (h, w, c) = self.dims();
        let per = h * w * c;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images[i].data());
        }
        Tensor::new(vec![indices.len(), h, w, c], data).expect("stacked batch shape")
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads a CIFAR10 binary batch: 3073-byte records of one label byte
/// followed by 1024-byte R/G/B planes of a 32x32 image.
pub fn load_cifar10_bin(path: &Path) -> Result<Dataset, DataError> {
    let bytes = read_file(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(DataError::Truncated {
            path: path.display().to_string(),
            size: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut images = Vec::with_capacity(count);
    let mut ids = Vec::with_capacity(count);
    for (n, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        // record[0] is the class label; the coding pipeline ignores it.
        let planes = &record[1..];
        let mut data = vec![0f32; CIFAR_DIM * CIFAR_DIM * 3];
        for c in 0..3 {
            let plane = &planes[c * CIFAR_DIM * CIFAR_DIM..(c + 1) * CIFAR_DIM * CIFAR_DIM];
            for (i, &v) in plane.iter().enumerate() {
                data[i * 3 + c] = v as f32 / 255.0;
            }
        }
        images.push(Tensor::new(vec![CIFAR_DIM, CIFAR_DIM, 3], data).expect("record size fixed"));
        ids.push(format!("img{n:05}"));
    }
    Dataset::new(images, ids)
}

fn parse_ppm(path: &Path, bytes: &[u8]) -> Result<Image, DataError> {
    let path_s = path.display().to_string();
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(DataError::BadMagic {
            path: path_s,
            expected: "P6".into(),
        });
    }
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // '#' starts a comment running to end of line.
    let mut pos = 2usize;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::MalformedHeader {
                path: path_s,
                what: "expected a decimal field".into(),
            });
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| DataError::MalformedHeader {
                path: path.display().to_string(),
                what: "field overflows".into(),
            })?;
    }
    let (w, h, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval != 255 {
        return Err(DataError::UnsupportedMaxval {
            path: path_s,
            maxval,
        });
    }
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(DataError::BadDims {
            height: h,
            width: w,
        });
    }
    // exactly one whitespace byte separates the header from pixel data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(DataError::MalformedHeader {
            path: path_s,
            what: "missing separator before pixel data".into(),
        });
    }
    pos += 1;
    let want = w * h * 3;
    let pixels = &bytes[pos..];
    if pixels.len() != want {
        return Err(DataError::Truncated {
            path: path_s,
            size: pixels.len(),
            record: want,
        });
    }
    let data: Vec<f32> = pixels.iter().map(|&v| v as f32 / 255.0).collect();
    Ok(Tensor::new(vec![h, w, 3], data).expect("pixel count checked"))
}

/// Loads a single binary PPM (P6) file, or every `.ppm` file of a directory
/// in sorted filename order.
pub fn load_ppm(path: &Path) -> Result<Dataset, DataError> {
    let mut files = Vec::new();
    if path.is_dir() {
        let entries = std::fs::read_dir(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| DataError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let p = entry.path();
            if p.extension().is_some_and(|e| e == "ppm") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    if files.is_empty() {
        return Err(DataError::Empty);
    }
    let mut images = Vec::with_capacity(files.len());
    let mut ids = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = read_file(f)?;
        images.push(parse_ppm(f, &bytes)?);
        ids.push(
            f.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| f.display().to_string()),
        );
    }
    Dataset::new(images, ids)
}

/// Deterministic synthetic images: a smooth low-frequency gradient plus a
/// mid-frequency texture and a light noise floor, quantized to 8 bits like
/// ingested data.
pub fn synthetic_dataset(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Dataset, DataError> {
    if count == 0 {
        return Err(DataError::Empty);
    }
    if height == 0 || width == 0 || height % 4 != 0 || width % 4 != 0 {
        return Err(DataError::BadDims { height, width });
    }
    let tau = std::f64::consts::TAU;
    let mut images = Vec::with_capacity(count);
    let mut ids = Vec::with_capacity(count);
    for n in 0..count {
        let mut rng = data_rng(seed, n as u64);
        let mut data = vec![0f32; height * width * channels];
        for c in 0..channels {
            let (fx, fy) = (rng.random_range(0.3..1.5), rng.random_range(0.3..1.5));
            let (gx, gy) = (rng.random_range(2.0..5.0), rng.random_range(2.0..5.0));
            let (p1, p2) = (rng.random_range(0.0..tau), rng.random_range(0.0..tau));
            let amp2 = rng.random_range(0.05..0.2);
            for y in 0..height {
                for x in 0..width {
                    let u = x as f64 / width as f64;
                    let v = y as f64 / height as f64;
                    let smooth = 0.5 + 0.3 * (tau * (fx * u + fy * v) + p1).sin();
                    let texture = amp2 * (tau * (gx * u + gy * v) + p2).sin();
                    let noise = 0.02 * (rng.random::<f64>() - 0.5);
                    let val = (smooth + texture + noise).clamp(0.0, 1.0);
                    let quantized = (val * 255.0).round() / 255.0;
                    data[(y * width + x) * channels + c] = quantized as f32;
                }
            }
        }
        images.push(Tensor::new(vec![height, width, channels], data).expect("sized above"));
        ids.push(format!("synth{n:04}"));
    }
    Dataset::new(images, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_record_arithmetic() {
        // 10_000 records of 3073 bytes = 30_730_000 bytes -> 10_000 images.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        std::fs::write(&path, vec![0u8; 10_000 * CIFAR_RECORD]).unwrap();
        let ds = load_cifar10_bin(&path).unwrap();
        assert_eq!(ds.len(), 10_000);
        assert_eq!(ds.dims(), (32, 32, 3));
        assert_eq!(ds.id(0), "img00000");
        assert_eq!(ds.id(9999), "img09999");
    }

    #[test]
    fn cifar_truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; CIFAR_RECORD + 7]).unwrap();
        assert!(matches!(
            load_cifar10_bin(&path),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn cifar_planes_unpack_interleaved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.bin");
        let mut record = vec![0u8; CIFAR_RECORD];
        record[0] = 7; // label, discarded
        record[1] = 255; // R of pixel (0,0)
        record[1 + 1024] = 128; // G of pixel (0,0)
        record[1 + 2048] = 0; // B of pixel (0,0)
        std::fs::write(&path, &record).unwrap();
        let ds = load_cifar10_bin(&path).unwrap();
        let img = ds.image(0);
        assert_eq!(img.data()[0], 1.0);
        assert!((img.data()[1] - 128.0 / 255.0).abs() < 1e-6);
        assert_eq!(img.data()[2], 0.0);
    }

    #[test]
    fn ppm_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.ppm");
        let mut bytes = b"P6\n# comment\n4 8\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(100u8, 4 * 8 * 3));
        std::fs::write(&good, &bytes).unwrap();
        let ds = load_ppm(&good).unwrap();
        assert_eq!(ds.dims(), (8, 4, 3));
        assert!((ds.image(0).data()[0] - 100.0 / 255.0).abs() < 1e-6);

        let bad_maxval = dir.path().join("b.ppm");
        std::fs::write(&bad_maxval, b"P6\n4 4\n65535\n").unwrap();
        assert!(matches!(
            load_ppm(&bad_maxval),
            Err(DataError::UnsupportedMaxval { maxval: 65535, .. })
        ));

        let bad_magic = dir.path().join("c.ppm");
        std::fs::write(&bad_magic, b"P5\n4 4\n255\n").unwrap();
        assert!(matches!(load_ppm(&bad_magic), Err(DataError::BadMagic { .. })));

        let bad_dims = dir.path().join("d.ppm");
        let mut bytes = b"P6\n5 4\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(0u8, 5 * 4 * 3));
        std::fs::write(&bad_dims, &bytes).unwrap();
        assert!(matches!(load_ppm(&bad_dims), Err(DataError::BadDims { .. })));
    }

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let a = synthetic_dataset(9, 8, 16, 16, 3).unwrap();
        let b = synthetic_dataset(9, 8, 16, 16, 3).unwrap();
        assert_eq!(a.len(), 8);
        for i in 0..8 {
            assert_eq!(a.image(i).data(), b.image(i).data());
            assert!(a.image(i).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // different seeds differ
        let c = synthetic_dataset(10, 8, 16, 16, 3).unwrap();
        assert_ne!(a.image(0).data(), c.image(0).data());
    }

    #[test]
    fn synthetic_rejects_bad_dims() {
        assert!(matches!(
            synthetic_dataset(1, 4, 15, 16, 3),
            Err(DataError::BadDims { .. })
        ));
    }

    #[test]
    fn batch_stacks_row_major() {
        let ds = synthetic_dataset(3, 4, 8, 8, 1).unwrap();
        let b = ds.batch(&[2, 0]);
        assert_eq!(b.shape(), &[2, 8, 8, 1]);
        assert_eq!(&b.data()[..64], ds.image(2).data());
        assert_eq!(&b.data()[64..], ds.image(0).data());
    }
}
