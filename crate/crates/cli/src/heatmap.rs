//! Grayscale heatmaps of phase matrices as binary PGM (P5) images.

use std::path::Path;

use kbae_core::io::write_atomic;
use kbae_core::{PhaseShiftMatrix, Result};

/// Width of the white bar between the two halves of a paired image.
pub const DIVIDER: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeatmapImage {
    pub width: usize,
    pub height: usize,
    /// Row-major 8-bit gray levels.
    pub pixels: Vec<u8>,
}

/// `floor(v·256)` clamped to `[0, 255]`.
pub fn pixel(normalized: f64) -> u8 {
    (normalized * 256.0).floor().clamp(0.0, 255.0) as u8
}

impl HeatmapImage {
    /// One pixel per element; raw matrices are normalized first.
    pub fn from_matrix(m: &PhaseShiftMatrix) -> Self {
        let n = m.to_normalized();
        HeatmapImage {
            width: n.side(),
            height: n.side(),
            pixels: n.values().iter().map(|&v| pixel(v)).collect(),
        }
    }

    /// `left | white divider | right`, both halves at the same height.
    pub fn paired(left: &PhaseShiftMatrix, right: &PhaseShiftMatrix) -> Self {
        let (a, b) = (Self::from_matrix(left), Self::from_matrix(right));
        let height = a.height.max(b.height);
        let width = a.width + DIVIDER + b.width;
        let mut pixels = vec![0u8; width * height];
        for y in 0..height {
            let row = &mut pixels[y * width..(y + 1) * width];
            if y < a.height {
                row[..a.width].copy_from_slice(&a.pixels[y * a.width..(y + 1) * a.width]);
            }
            row[a.width..a.width + DIVIDER].fill(255);
            if y < b.height {
                row[a.width + DIVIDER..].copy_from_slice(&b.pixels[y * b.width..(y + 1) * b.width]);
            }
        }
        HeatmapImage { width, height, pixels }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_pgm())
    }
}

pub fn export_heatmap(m: &PhaseShiftMatrix, path: &Path) -> Result<HeatmapImage> {
    let img = HeatmapImage::from_matrix(m);
    img.write(path)?;
    Ok(img)
}
