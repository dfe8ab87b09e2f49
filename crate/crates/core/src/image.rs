//! Grayscale intensity images and raster decoding.
//!
//! Binary PGM (`P5`) and PPM (`P6`) are parsed directly; JPEG, PNG, BMP and TIFF go
//! through the `image` crate. Colour is reduced to luminance with
//! `0.299 R + 0.587 G + 0.114 B` and all values are scaled to `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image from a function of `(row, col)`, clamping values into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                let v = f(r, c);
                pixels.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Bilinear downscale so the longer side is at most `max_side`. Smaller images
    /// are returned unchanged.
    pub fn resize_max_side(&self, max_side: usize) -> Self {
        let longest = self.width.max(self.height);
        if max_side == 0 || longest <= max_side {
            return self.clone();
        }
        let scale = max_side as f64 / longest as f64;
        let w = ((self.width as f64 * scale).round() as usize).max(1);
        let h = ((self.height as f64 * scale).round() as usize).max(1);
        let sx = self.width as f64 / w as f64;
        let sy = self.height as f64 / h as f64;
        Self::from_fn(w, h, |r, c| {
            // sample at pixel centres
            let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let (y0, x0) = (y.floor() as usize, x.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
            let (fy, fx) = (y - y0 as f64, x - x0 as f64);
            let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
            let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }

    /// Encodes as an 8-bit binary PGM.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|p| (p * 255.0).round() as u8));
        out
    }
}

pub fn luminance(r: f64, g: f64, b: f64) -> f64 {
    (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
}

/// Decodes a raster file into an [`IntensityImage`].
pub fn load_image(path: impl AsRef<Path>) -> Result<IntensityImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_image(&bytes, path)
}

/// Decodes in-memory file contents; `path` is used for error messages only.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<IntensityImage> {
    match bytes {
        [b'P', b'5', ..] | [b'P', b'6', ..] => decode_pnm(bytes).map_err(|reason| Error::Decode {
            path: path.to_path_buf(),
            reason,
        }),
        [b'P', b'1'..=b'4', ..] => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "only binary P5/P6 netpbm files are supported".into(),
        }),
        _ => decode_with_image_crate(bytes, path),
    }
}

fn decode_with_image_crate(bytes: &[u8], path: &Path) -> Result<IntensityImage> {
    let format = ::image::guess_format(bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let img = ::image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        ::image::ImageError::Unsupported(u) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        other => Error::Decode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let pixels = rgb
        .pixels()
        .map(|p| luminance(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0))
        .collect();
    IntensityImage::new(w as usize, h as usize, pixels)
}

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8]) -> std::result::Result<PnmHeader, String> {
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err("not a P5/P6 file".into()),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("header value out of range")?;
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("truncated header".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    Ok(PnmHeader {
        channels,
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<IntensityImage, String> {
    let h = parse_pnm_header(bytes)?;
    let sample_bytes = if h.maxval > 255 { 2 } else { 1 };
    let count = h
        .width
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(h.channels))
        .ok_or("image dimensions overflow")?;
    let raster = &bytes[h.data_offset..];
    if raster.len() < count * sample_bytes {
        return Err(format!(
            "raster has {} bytes, expected {}",
            raster.len(),
            count * sample_bytes
        ));
    }
    let maxval = h.maxval as f64;
    let samples: Vec<f64> = (0..count)
        .map(|i| {
            let v = if sample_bytes == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            } else {
                raster[i] as f64
            };
            (v / maxval).min(1.0)
        })
        .collect();
    let pixels = if h.channels == 1 {
        samples
    } else {
        samples.chunks(3).map(|p| luminance(p[0], p[1], p[2])).collect()
    };
    IntensityImage::new(h.width, h.height, pixels).map_err(|e| e.to_string())
}
