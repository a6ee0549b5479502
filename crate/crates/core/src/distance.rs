//! Exact truncated Euclidean distance images.
//!
//! Two-pass separable squared-distance transform (lower envelope of
//! parabolas per row, then per column), followed by a square root and a
//! clamp at the truncation threshold. Linear time, no chamfer
//! approximation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::EdgeImage;

const INF: f64 = 1e20;

/// Per-pixel distance to the nearest edge pixel, truncated.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub truncation: f32,
}

impl DistanceImage {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }
}

/// 1D squared-distance transform of `f` into `d` (lower envelope of the
/// parabolas q -> f[q] + (p - q)^2).
fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    k = 0;
    for p in 0..n {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let diff = p as f64 - q as f64;
        d[p] = diff * diff + f[q];
    }
}

/// Exact Euclidean distance transform of an edge image, truncated at
/// `truncate_px`. All-background images fill with the truncation value.
pub fn distance_transform(edge: &EdgeImage, truncate_px: f64) -> Result<DistanceImage> {
    if !(truncate_px > 0.0) {
        return Err(Error::Config(format!(
            "truncation must be positive, got {truncate_px}"
        )));
    }
    let (w, h) = (edge.width as usize, edge.height as usize);
    let mut grid = vec![0.0f64; w * h];
    for (g, &p) in grid.iter_mut().zip(&edge.pixels) {
        *g = if p != 0 { 0.0 } else { INF };
    }

    let max_dim = w.max(h);
    let mut f = vec![0.0f64; max_dim];
    let mut d = vec![0.0f64; max_dim];
    let mut v = vec![0usize; max_dim];
    let mut z = vec![0.0f64; max_dim + 1];

    // Rows first, then columns; the squared metric is separable.
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        dt_1d(&f[..w], &mut d[..w], &mut v[..w], &mut z[..w + 1]);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        dt_1d(&f[..h], &mut d[..h], &mut v[..h], &mut z[..h + 1]);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }

    let values = grid.iter().map(|&sq| (sq.sqrt().min(truncate_px)) as f32).collect();
    Ok(DistanceImage {
        width: edge.width,
        height: edge.height,
        values,
        truncation: truncate_px as f32,
    })
}

/// Debug dump: `"DIST" | u32 width | u32 height | f32 truncation` then the
/// raw row-major f32 values, little-endian.
pub fn write_distance_dump(img: &DistanceImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_distance_dump(img))?;
    Ok(())
}

pub fn encode_distance_dump(img: &DistanceImage) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(16 + img.values.len() * 4);
    bytes.extend_from_slice(b"DIST");
    bytes.extend_from_slice(&img.width.to_le_bytes());
    bytes.extend_from_slice(&img.height.to_le_bytes());
    bytes.extend_from_slice(&img.truncation.to_le_bytes());
    for v in &img.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_distance_dump(bytes: &[u8]) -> Result<DistanceImage> {
    if bytes.len() < 16 || &bytes[0..4] != b"DIST" {
        return Err(Error::ImageFormat("not a distance dump".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let truncation = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let expect = 16 + (width as usize) * (height as usize) * 4;
    if bytes.len() != expect {
        return Err(Error::ImageFormat(format!(
            "distance dump length {} != expected {expect}",
            bytes.len()
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DistanceImage { width, height, values, truncation })
}
