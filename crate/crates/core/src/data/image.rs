//! Grayscale images in [0, 1] and binary PGM (P5) I/O.
//!
//! 8- and 16-bit files are supported; intensities normalize to [0, 1] by the
//! file's max sample value. 16-bit samples are big-endian per the format.

use std::path::Path;

use crate::error::{format_err, io_err, Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Sample width for PGM export.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmDepth {
    Eight,
    Sixteen,
}

impl PgmDepth {
    fn max_value(self) -> u32 {
        match self {
            PgmDepth::Eight => 255,
            PgmDepth::Sixteen => 65535,
        }
    }
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DataLength { expected: height * width, got: data.len() });
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GrayImage { height, width, data: vec![0.0; height * width] }
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        GrayImage { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        GrayImage { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: f32) {
        self.data[y * self.width + x] = value;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// A (1, 1, height, width) tensor view of this image.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(Shape::new(1, 1, self.height, self.width), self.data.clone())
            .expect("image data matches shape")
    }

    /// Extracts batch item `b` of a single-channel tensor.
    pub fn from_tensor(t: &Tensor<f32>, b: usize) -> GrayImage {
        let s = t.shape();
        assert_eq!(s.channels, 1, "from_tensor expects a single-channel tensor");
        let plane = s.plane();
        GrayImage {
            height: s.height,
            width: s.width,
            data: t.data()[b * plane..][..plane].to_vec(),
        }
    }

    pub fn write_pgm(&self, path: &Path, depth: PgmDepth) -> Result<()> {
        let max = depth.max_value();
        let mut bytes = format!("P5\n{} {}\n{}\n", self.width, self.height, max).into_bytes();
        match depth {
            PgmDepth::Eight => {
                for &v in &self.data {
                    bytes.push((f64::from(v.clamp(0.0, 1.0)) * 255.0).round() as u8);
                }
            }
            PgmDepth::Sixteen => {
                for &v in &self.data {
                    let q = (f64::from(v.clamp(0.0, 1.0)) * 65535.0).round() as u16;
                    bytes.extend_from_slice(&q.to_be_bytes());
                }
            }
        }
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    pub fn read_pgm(path: &Path) -> Result<GrayImage> {
        let raw = RawPgm::read(path)?;
        let max = f32::from(raw.max_value);
        let data = raw.samples.iter().map(|&s| f32::from(s) / max).collect();
        GrayImage::new(raw.height, raw.width, data)
    }
}

/// A decoded P5 file before normalization; also used for label masks where
/// the sample value is a region label rather than an intensity.
pub struct RawPgm {
    pub width: usize,
    pub height: usize,
    pub max_value: u16,
    pub samples: Vec<u16>,
}

impl RawPgm {
    pub fn read(path: &Path) -> Result<RawPgm> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(format_err(path, "not a binary PGM (missing P5 magic)"));
        }
        let mut pos = 2;
        let width = read_header_int(&bytes, &mut pos, path, "width")?;
        let height = read_header_int(&bytes, &mut pos, path, "height")?;
        let max_value = read_header_int(&bytes, &mut pos, path, "max value")?;
        if max_value == 0 || max_value > 65535 {
            return Err(format_err(path, format!("max sample value {max_value} out of range")));
        }
        if width == 0 || height == 0 {
            return Err(format_err(path, "zero image dimension"));
        }
        // exactly one whitespace byte separates the header from the payload
        pos += 1;
        let count = width * height;
        let samples = if max_value < 256 {
            if bytes.len() - pos < count {
                return Err(format_err(path, "truncated 8-bit payload"));
            }
            bytes[pos..pos + count].iter().map(|&b| u16::from(b)).collect()
        } else {
            if bytes.len() - pos < count * 2 {
                return Err(format_err(path, "truncated 16-bit payload"));
            }
            bytes[pos..pos + count * 2]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect()
        };
        Ok(RawPgm { width, height, max_value: max_value as u16, samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes =
            format!("P5\n{} {}\n{}\n", self.width, self.height, self.max_value).into_bytes();
        if self.max_value < 256 {
            bytes.extend(self.samples.iter().map(|&s| s as u8));
        } else {
            for &s in &self.samples {
                bytes.extend_from_slice(&s.to_be_bytes());
            }
        }
        std::fs::write(path, bytes).map_err(io_err(path))
    }
}

fn read_header_int(bytes: &[u8], pos: &mut usize, path: &Path, what: &str) -> Result<usize> {
    // skip whitespace and `#` comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(path, format!("malformed header: expected {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, format!("malformed header: bad {what}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_8bit_round_trip_is_exact_on_quantized_values() {
        let img = GrayImage::from_fn(5, 7, |y, x| ((y * 7 + x) as f32) / 255.0 * 6.0 % 1.0);
        let quantized = GrayImage::from_fn(5, 7, |y, x| {
            (f64::from(img.get(y, x)) * 255.0).round() as f32 / 255.0
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        img.write_pgm(&path, PgmDepth::Eight).unwrap();
        let back = GrayImage::read_pgm(&path).unwrap();
        assert_eq!(back, quantized);
    }

    #[test]
    fn pgm_16bit_round_trip() {
        let img = GrayImage::from_fn(4, 4, |y, x| ((y * 4 + x) as f32) / 15.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img16.pgm");
        img.write_pgm(&path, PgmDepth::Sixteen).unwrap();
        let back = GrayImage::read_pgm(&path).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1.0 / 65534.0);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 2\n255\n\x00\x7f\x80\xff").unwrap();
        let img = GrayImage::read_pgm(&path).unwrap();
        assert_eq!(img.get(0, 0), 0.0);
        assert_eq!(img.get(1, 1), 1.0);
    }

    #[test]
    fn corrupt_headers_are_structured_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, content) in [
            ("magic.pgm", b"P6\n2 2\n255\n\x00\x00\x00\x00".to_vec()),
            ("trunc.pgm", b"P5\n2 2\n255\n\x00\x00".to_vec()),
            ("nohdr.pgm", b"P5\nxx".to_vec()),
            ("zerodim.pgm", b"P5\n0 2\n255\n".to_vec()),
        ] {
            let path = dir.path().join(name);
            std::fs::write(&path, content).unwrap();
            let err = GrayImage::read_pgm(&path).unwrap_err();
            assert!(matches!(err, Error::Format { .. }), "{name}: {err}");
        }
    }

    #[test]
    fn tensor_round_trip() {
        let img = GrayImage::from_fn(3, 4, |y, x| (y + x) as f32 * 0.1);
        let t = img.to_tensor();
        assert_eq!(t.shape(), Shape::new(1, 1, 3, 4));
        assert_eq!(GrayImage::from_tensor(&t, 0), img);
    }
}
