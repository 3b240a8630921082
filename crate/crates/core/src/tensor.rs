//! Dense feature maps and their on-disk form.
//!
//! TXK1 layout (little-endian):
//! - magic: `b"TXK1"`
//! - ndim: u32, always 3
//! - dims: 3 * u64 (channels, height, width)
//! - data: f32 * channels * height * width, row-major

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"TXK1";

/// A C×H×W map of 32-bit reals stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::DimOverflow(format!("{channels}x{height}x{width}")))?;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0, "dimensions must be positive");
        assert!(value.is_finite());
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Builds a map by evaluating `f(c, y, x)` at every element.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Builds a map from f64 values, rounding each to f32.
    pub fn from_f64(channels: usize, height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::new(channels, height, width, data.iter().map(|&v| v as f32).collect())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_f64(&self, c: usize) -> Vec<f64> {
        self.channel(c).iter().map(|&v| f64::from(v)).collect()
    }

    /// Element-wise map. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        let data: Vec<f32> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced a non-finite value");
        Self { data, ..*self }
    }

    pub fn scale(&self, factor: f32) -> Self {
        self.map(|v| v * factor)
    }

    pub fn same_dims(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f32> {
        if !self.same_dims(other) {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Extracts the rectangle `(top, left, height, width)` from every channel.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "crop ({top},{left},{height},{width}) outside {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(self.channels, height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        })
    }

    /// Horizontal mirror (column j becomes column W-1-j).
    pub fn mirror_horizontal(&self) -> Self {
        let data = (0..self.data.len())
            .map(|i| {
                let x = i % self.width;
                self.data[i - x + (self.width - 1 - x)]
            })
            .collect();
        Self { data, ..*self }
    }

    /// Bilinear resampling to `height`×`width` with half-pixel centers.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch("target dims must be positive".into()));
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let coord = |out: usize, scale: f64, len: usize| -> (usize, usize, f64) {
            let src = ((out as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, src - lo as f64)
        };
        Self::from_fn(self.channels, height, width, |c, y, x| {
            let (y0, y1, fy) = coord(y, sy, self.height);
            let (x0, x1, fx) = coord(x, sx, self.width);
            let v = |yy, xx| f64::from(self.get(c, yy, xx));
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            (top * (1.0 - fy) + bottom * fy) as f32
        })
    }

    /// Serializes to TXK1 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + 4 * self.data.len());
        out.extend_from_slice(&TENSOR_MAGIC);
        out.extend_from_slice(&3u32.to_le_bytes());
        for d in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses TXK1 bytes; the whole slice must be consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor::new(bytes);
        let map = read_tensor_from(&mut cursor)?;
        if (cursor.position() as usize) != bytes.len() {
            return Err(Error::Truncated(format!(
                "{} trailing bytes after tensor payload",
                bytes.len() - cursor.position() as usize
            )));
        }
        Ok(map)
    }
}

pub(crate) fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Truncated(format!("unexpected end of data reading {what}")))
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads one TXK1 tensor from a stream positioned at its magic.
pub(crate) fn read_tensor_from(r: &mut impl Read) -> Result<FeatureMap> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: TENSOR_MAGIC,
            found: magic,
        });
    }
    let ndim = read_u32(r, "ndim")?;
    if ndim != 3 {
        return Err(Error::BadRank(ndim));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let raw = read_u64(r, "dims")?;
        *d = usize::try_from(raw).map_err(|_| Error::DimOverflow(format!("dim {raw}")))?;
    }
    let bytes = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimOverflow(format!("{dims:?}")))?;
    // Read in bounded chunks so a corrupt header cannot force a huge allocation.
    let mut payload = Vec::new();
    let got = r
        .take(bytes as u64)
        .read_to_end(&mut payload)
        .map_err(|e| Error::Truncated(e.to_string()))?;
    if got != bytes {
        return Err(Error::Truncated(format!(
            "payload has {got} of {bytes} bytes"
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    FeatureMap::new(dims[0], dims[1], dims[2], data)
}

pub fn write_tensor(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map.to_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    FeatureMap::from_bytes(&bytes)
}

/// Loads an 8-bit grayscale or RGB PGM/PNG, scaling pixels to [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<FeatureMap> {
    use image::{ColorType, DynamicImage};

    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|e| Error::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match (img.color(), img) {
        (ColorType::L8, DynamicImage::ImageLuma8(buf)) => (1, buf.into_raw()),
        (ColorType::Rgb8, DynamicImage::ImageRgb8(buf)) => (3, buf.into_raw()),
        (color, _) => {
            return Err(Error::UnsupportedBitDepth {
                path: path.to_path_buf(),
                color: format!("{color:?}"),
            })
        }
    };
    // Interleaved HWC -> planar CHW.
    let mut data = vec![0f32; channels * h * w];
    for (i, &byte) in raw.iter().enumerate() {
        let c = i % channels;
        let p = i / channels;
        data[c * h * w + p] = f32::from(byte) / 255.0;
    }
    FeatureMap::new(channels, h, w, data)
}
