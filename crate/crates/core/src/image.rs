//! Linear RGB image buffers and PNG/PFM I/O.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Interleaved RGB image in linear color, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height * 3),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                found: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(())
    }

    /// Reads an 8- or 16-bit PNG. With `srgb` set the sRGB transfer curve is
    /// removed, otherwise code values are taken as linear.
    pub fn load_png(path: &Path, srgb: bool) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb16();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .into_raw()
            .into_iter()
            .map(|v| {
                let c = v as f64 / 65535.0;
                if srgb {
                    srgb_to_linear(c)
                } else {
                    c
                }
            })
            .collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    /// Writes an 8-bit PNG, clamping to `[0, 1]`; with `srgb` set the values
    /// are gamma-encoded first.
    pub fn save_png8(&self, path: &Path, srgb: bool) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data
                .iter()
                .map(|&v| (encode(v, srgb) * 255.0).round() as u8)
                .collect(),
        )
        .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes a 16-bit linear PNG.
    pub fn save_png16(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect(),
        )
        .expect("buffer size matches dimensions");
        buf.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Places images side by side.
    pub fn hstack(images: &[&Image]) -> Result<Image> {
        let first = images.first().ok_or_else(|| Error::invalid("hstack of zero images"))?;
        let height = first.height;
        for img in images {
            if img.height != height {
                return Err(Error::invalid("hstack requires equal heights"));
            }
        }
        let width: usize = images.iter().map(|i| i.width).sum();
        let mut out = Image::new(width, height);
        let mut x0 = 0;
        for img in images {
            for y in 0..height {
                for x in 0..img.width {
                    out.set_pixel(x0 + x, y, img.pixel(x, y));
                }
            }
            x0 += img.width;
        }
        Ok(out)
    }
}

fn encode(v: f64, srgb: bool) -> f64 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    if srgb {
        linear_to_srgb(v)
    } else {
        v
    }
}

pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// Writes a single-channel little-endian PFM (rows stored bottom to top).
pub fn save_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: format!("{} values", width * height),
            found: format!("{} values", values.len()),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        write!(w, "Pf\n{} {}\n-1.0\n", width, height)?;
        for y in (0..height).rev() {
            for x in 0..width {
                w.write_all(&(values[y * width + x] as f32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Maps a `[-1, 1]` vector field to an RGB image for inspection.
pub fn normals_to_image(width: usize, height: usize, normals: &[f64]) -> Image {
    Image {
        width,
        height,
        data: normals.iter().map(|&n| 0.5 * (n + 1.0)).collect(),
    }
}
