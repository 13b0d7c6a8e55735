//! Schematic 8-bit RGB rasters and their PPM container.
//!
//! These images exist so the context encoder has a second channel group
//! (object silhouette plus hand-vertex splats); they make no attempt at
//! photorealism.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use super::DatasetError;

/// Interleaved RGB, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity((width * height * 3) as usize);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn set(&mut self, u: u32, v: u32, color: [u8; 3]) {
        let i = ((v * self.width + u) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn get(&self, u: u32, v: u32) -> [u8; 3] {
        let i = ((v * self.width + u) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Mean intensity of one pixel in `[0, 1]`.
    pub fn intensity(&self, u: u32, v: u32) -> f64 {
        let [r, g, b] = self.get(u, v);
        (r as f64 + g as f64 + b as f64) / (3.0 * 255.0)
    }

    /// Writes a binary PPM (P6).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
        let mut header = String::new();
        for _ in 0..3 {
            let mut line = String::new();
            if r.read_line(&mut line)? == 0 {
                return Err(DatasetError::CorruptPayload {
                    detail: format!("truncated PPM header in {}", path.as_ref().display()),
                });
            }
            header.push_str(&line);
        }
        let mut parts = header.split_ascii_whitespace();
        if parts.next() != Some("P6") {
            return Err(DatasetError::CorruptPayload {
                detail: format!("{} is not a P6 PPM", path.as_ref().display()),
            });
        }
        let parse = |s: Option<&str>| -> Result<u32, DatasetError> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| DatasetError::CorruptPayload {
                detail: format!("bad PPM dimensions in {}", path.as_ref().display()),
            })
        };
        let width = parse(parts.next())?;
        let height = parse(parts.next())?;
        let maxval = parse(parts.next())?;
        if maxval != 255 {
            return Err(DatasetError::CorruptPayload {
                detail: format!("unsupported PPM maxval {maxval}"),
            });
        }
        let mut data = vec![0u8; (width * height * 3) as usize];
        r.read_exact(&mut data).map_err(|_| DatasetError::CorruptPayload {
            detail: format!("truncated PPM payload in {}", path.as_ref().display()),
        })?;
        Ok(RgbImage { width, height, data })
    }
}
