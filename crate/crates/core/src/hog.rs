//! Histogram-of-oriented-gradients descriptors for edge images.
//!
//! Pipeline: central-difference gradients with replicated borders,
//! magnitude-weighted soft assignment into unsigned orientation bins,
//! per-cell histograms, L2-hys block normalization (clip 0.2), and a final
//! global L2 normalization so descriptor distance is monotone in cosine
//! similarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::GrayRaster;

/// Hys clipping level applied after the first block normalization.
const L2_HYS_CLIP: f64 = 0.2;

/// Fixed-length image descriptor. Globally L2-normalized, or all-zero for
/// blank images.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

/// HOG layout. Defaults: 20x20 px cells, 2x2-cell blocks with 1-cell stride,
/// 9 unsigned orientation bins over [0°, 180°), 320x180 input — a 4320-d
/// descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogConfig {
    pub cell: [u32; 2],
    pub block_cells: [u32; 2],
    pub block_stride_cells: u32,
    pub bins: u32,
    pub input_size: [u32; 2],
}

impl Default for HogConfig {
    fn default() -> Self {
        HogConfig {
            cell: [20, 20],
            block_cells: [2, 2],
            block_stride_cells: 1,
            bins: 9,
            input_size: [320, 180],
        }
    }
}

impl HogConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell[0] == 0 || self.cell[1] == 0 || self.bins == 0 || self.block_stride_cells == 0
        {
            return Err(Error::Config("HOG cell, bin and stride sizes must be positive".into()));
        }
        if self.input_size[0] % self.cell[0] != 0 || self.input_size[1] % self.cell[1] != 0 {
            return Err(Error::Config(format!(
                "HOG input {}x{} not divisible by cell {}x{}",
                self.input_size[0], self.input_size[1], self.cell[0], self.cell[1]
            )));
        }
        let (cx, cy) = self.cell_grid();
        if cx < self.block_cells[0] as usize || cy < self.block_cells[1] as usize {
            return Err(Error::Config("HOG block larger than cell grid".into()));
        }
        Ok(())
    }

    /// Cell grid dimensions (columns, rows).
    pub fn cell_grid(&self) -> (usize, usize) {
        (
            (self.input_size[0] / self.cell[0]) as usize,
            (self.input_size[1] / self.cell[1]) as usize,
        )
    }

    /// Block grid dimensions (columns, rows).
    pub fn block_grid(&self) -> (usize, usize) {
        let (cx, cy) = self.cell_grid();
        let stride = self.block_stride_cells as usize;
        (
            (cx - self.block_cells[0] as usize) / stride + 1,
            (cy - self.block_cells[1] as usize) / stride + 1,
        )
    }

    pub fn descriptor_len(&self) -> usize {
        let (bx, by) = self.block_grid();
        bx * by
            * self.block_cells[0] as usize
            * self.block_cells[1] as usize
            * self.bins as usize
    }
}

/// Per-cell orientation histograms before any block normalization, laid out
/// row-major `[cell_y][cell_x][bin]`. Exposed for translation/rotation
/// property checks.
pub fn cell_histograms(img: &GrayRaster, cfg: &HogConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if img.width != cfg.input_size[0] || img.height != cfg.input_size[1] {
        return Err(Error::SizeMismatch {
            expected_w: cfg.input_size[0],
            expected_h: cfg.input_size[1],
            got_w: img.width,
            got_h: img.height,
        });
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let (cells_x, cells_y) = cfg.cell_grid();
    let bins = cfg.bins as usize;
    let bin_width = 180.0 / bins as f64;
    let mut hist = vec![0.0f64; cells_x * cells_y * bins];

    let sample = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w - 1) as u32;
        let y = y.clamp(0, h - 1) as u32;
        img.get(x, y) as f64
    };
    for y in 0..h {
        for x in 0..w {
            let gx = (sample(x + 1, y) - sample(x - 1, y)) * 0.5;
            let gy = (sample(x, y + 1) - sample(x, y - 1)) * 0.5;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // Unsigned orientation in [0, 180).
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            if angle >= 180.0 {
                angle -= 180.0;
            }
            // Linear interpolation between the two nearest bin centers
            // (centers at (k + 0.5) * bin_width, wrapping at 180°).
            let t = angle / bin_width - 0.5;
            let k0 = t.floor();
            let frac = t - k0;
            let b0 = (k0 as i64).rem_euclid(bins as i64) as usize;
            let b1 = (b0 + 1) % bins;
            let cell = ((y as u32 / cfg.cell[1]) as usize) * cells_x
                + (x as u32 / cfg.cell[0]) as usize;
            hist[cell * bins + b0] += mag * (1.0 - frac);
            hist[cell * bins + b1] += mag * frac;
        }
    }
    Ok(hist)
}

/// Extract the full HOG descriptor from a feature-scale raster.
pub fn hog_features(img: &GrayRaster, cfg: &HogConfig) -> Result<FeatureVector> {
    let hist = cell_histograms(img, cfg)?;
    let (cells_x, _) = cfg.cell_grid();
    let (blocks_x, blocks_y) = cfg.block_grid();
    let bins = cfg.bins as usize;
    let stride = cfg.block_stride_cells as usize;
    let (bw, bh) = (cfg.block_cells[0] as usize, cfg.block_cells[1] as usize);

    let mut out = Vec::with_capacity(cfg.descriptor_len());
    let mut block = vec![0.0f64; bw * bh * bins];
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            block.clear();
            for cy in 0..bh {
                for cx in 0..bw {
                    let cell = (by * stride + cy) * cells_x + bx * stride + cx;
                    block.extend_from_slice(&hist[cell * bins..(cell + 1) * bins]);
                }
            }
            l2_hys(&mut block);
            out.extend(block.iter().map(|&v| v as f32));
        }
    }

    // Global L2 normalization; blank images stay at the zero vector.
    let norm = out.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in &mut out {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Ok(FeatureVector { values: out })
}

fn l2_hys(block: &mut [f64]) {
    let norm = block.iter().map(|&v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return;
    }
    for v in block.iter_mut() {
        *v = (*v / norm).min(L2_HYS_CLIP);
    }
    let norm = block.iter().map(|&v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in block.iter_mut() {
            *v /= norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster_from_fn(f: impl Fn(u32, u32) -> u8) -> GrayRaster {
        let mut img = GrayRaster::new(320, 180);
        for y in 0..180 {
            for x in 0..320 {
                img.pixels[(y * 320 + x) as usize] = f(x, y);
            }
        }
        img
    }

    #[test]
    fn default_descriptor_dimension() {
        let cfg = HogConfig::default();
        assert_eq!(cfg.cell_grid(), (16, 9));
        assert_eq!(cfg.block_grid(), (15, 8));
        assert_eq!(cfg.descriptor_len(), 4320);
    }

    #[test]
    fn blank_image_yields_zero_vector() {
        let img = GrayRaster::new(320, 180);
        let f = hog_features(&img, &HogConfig::default()).unwrap();
        assert_eq!(f.dim(), 4320);
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn nonblank_descriptor_is_unit_norm() {
        let img = raster_from_fn(|x, y| ((x * 7 + y * 13) % 256) as u8);
        let f = hog_features(&img, &HogConfig::default()).unwrap();
        assert!((f.norm() - 1.0).abs() < 1e-4, "norm = {}", f.norm());
    }

    #[test]
    fn rotated_image_has_mirrored_cell_histograms() {
        let cfg = HogConfig::default();
        let img = raster_from_fn(|x, y| ((x * 31 + y * 17 + (x * y) % 29) % 256) as u8);
        let mut rot = GrayRaster::new(320, 180);
        for y in 0..180u32 {
            for x in 0..320u32 {
                rot.pixels[((179 - y) * 320 + (319 - x)) as usize] = img.get(x, y);
            }
        }
        let a = cell_histograms(&img, &cfg).unwrap();
        let b = cell_histograms(&rot, &cfg).unwrap();
        let (cx, cy) = cfg.cell_grid();
        let bins = cfg.bins as usize;
        for row in 0..cy {
            for col in 0..cx {
                let src = (row * cx + col) * bins;
                let dst = ((cy - 1 - row) * cx + (cx - 1 - col)) * bins;
                for bin in 0..bins {
                    let d = (a[src + bin] - b[dst + bin]).abs();
                    assert!(d < 1e-6, "cell ({col},{row}) bin {bin}: {d}");
                }
            }
        }
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let img = GrayRaster::new(100, 100);
        assert!(matches!(
            hog_features(&img, &HogConfig::default()),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn indivisible_cell_size_is_rejected() {
        let cfg = HogConfig { cell: [19, 20], ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
