//! HOG descriptor against an independently written naive oracle, plus the
//! cell-granular translation covariance property.

use fieldcal::hog::{HogConfig, cell_histograms, hog_features};
use fieldcal::render::GrayRaster;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Naive per-pixel reference: recomputes every cell histogram and block
/// from scratch with plain loops and no shared intermediates.
fn naive_hog(img: &GrayRaster, cfg: &HogConfig) -> Vec<f64> {
    let (w, h) = (img.width as i64, img.height as i64);
    let px = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w - 1) as u32;
        let y = y.clamp(0, h - 1) as u32;
        img.get(x, y) as f64
    };
    let bins = cfg.bins as usize;
    let bin_width = 180.0 / bins as f64;
    let cells_x = (cfg.input_size[0] / cfg.cell[0]) as usize;
    let cells_y = (cfg.input_size[1] / cfg.cell[1]) as usize;

    let cell_hist = |cx: usize, cy: usize| -> Vec<f64> {
        let mut hist = vec![0.0; bins];
        for y in 0..cfg.cell[1] as i64 {
            for x in 0..cfg.cell[0] as i64 {
                let ix = cx as i64 * cfg.cell[0] as i64 + x;
                let iy = cy as i64 * cfg.cell[1] as i64 + y;
                let gx = (px(ix + 1, iy) - px(ix - 1, iy)) / 2.0;
                let gy = (px(ix, iy + 1) - px(ix, iy - 1)) / 2.0;
                let mag = gx.hypot(gy);
                if mag == 0.0 {
                    continue;
                }
                let mut angle = gy.atan2(gx).to_degrees();
                while angle < 0.0 {
                    angle += 180.0;
                }
                while angle >= 180.0 {
                    angle -= 180.0;
                }
                let t = angle / bin_width - 0.5;
                let lower = t.floor();
                let frac = t - lower;
                let b0 = ((lower as i64).rem_euclid(bins as i64)) as usize;
                hist[b0] += mag * (1.0 - frac);
                hist[(b0 + 1) % bins] += mag * frac;
            }
        }
        hist
    };

    let stride = cfg.block_stride_cells as usize;
    let (bw, bh) = (cfg.block_cells[0] as usize, cfg.block_cells[1] as usize);
    let blocks_x = (cells_x - bw) / stride + 1;
    let blocks_y = (cells_y - bh) / stride + 1;
    let mut out = Vec::new();
    for by in 0..blocks_y {
        for bx in 0..blocks_x {
            let mut block = Vec::new();
            for cy in 0..bh {
                for cx in 0..bw {
                    block.extend(cell_hist(bx * stride + cx, by * stride + cy));
                }
            }
            let n1 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n1 > 1e-12 {
                for v in block.iter_mut() {
                    *v = (*v / n1).min(0.2);
                }
                let n2 = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n2 > 1e-12 {
                    for v in block.iter_mut() {
                        *v /= n2;
                    }
                }
            }
            out.extend(block);
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in out.iter_mut() {
            *v /= norm;
        }
    }
    out
}

fn random_raster(seed: u64) -> GrayRaster {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut img = GrayRaster::new(320, 180);
    for p in img.pixels.iter_mut() {
        *p = rng.random_range(0..=255u32) as u8;
    }
    img
}

#[test]
fn matches_naive_oracle_elementwise() {
    let cfg = HogConfig::default();
    for seed in [1u64, 2, 3] {
        let img = random_raster(seed);
        let fast = hog_features(&img, &cfg).unwrap();
        let slow = naive_hog(&img, &cfg);
        assert_eq!(fast.dim(), slow.len());
        for (i, (a, b)) in fast.values.iter().zip(&slow).enumerate() {
            assert!(
                (*a as f64 - b).abs() < 1e-5,
                "seed {seed} element {i}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn matches_oracle_on_rendered_edges() {
    let cfg = HogConfig::default();
    let pose = fieldcal::CameraPose::new(
        2600.0,
        -7.0,
        -10.0,
        nalgebra::Vector3::new(52.0, -45.0, 17.0),
        1280,
        720,
    );
    let edge =
        fieldcal::render_edge_image(&fieldcal::template::builtin_soccer(), &pose, 4.0).unwrap();
    let img = fieldcal::resize_to_feature_scale(&edge);
    let fast = hog_features(&img, &cfg).unwrap();
    let slow = naive_hog(&img, &cfg);
    for (a, b) in fast.values.iter().zip(&slow) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

/// Shifting the image by exactly one cell shifts cell histograms by one
/// cell (cells touching the replicated border excluded).
#[test]
fn translation_covariant_at_cell_granularity() {
    let cfg = HogConfig::default();
    let img = random_raster(7);
    let cell = cfg.cell[0];
    let mut shifted = GrayRaster::new(img.width, img.height);
    for y in 0..img.height {
        for x in 0..img.width {
            let sx = if x >= cell { x - cell } else { 0 };
            shifted.pixels[(y * img.width + x) as usize] = img.get(sx, y);
        }
    }
    let a = cell_histograms(&img, &cfg).unwrap();
    let b = cell_histograms(&shifted, &cfg).unwrap();
    let (cells_x, cells_y) = cfg.cell_grid();
    let bins = cfg.bins as usize;
    // Interior cells only: the first and last columns touch replicated
    // borders whose gradients differ between the two images.
    for cy in 0..cells_y {
        for cx in 1..cells_x - 2 {
            let src = (cy * cells_x + cx) * bins;
            let dst = (cy * cells_x + cx + 1) * bins;
            for k in 0..bins {
                let d = (a[src + k] - b[dst + k]).abs();
                assert!(d < 1e-9, "cell ({cx},{cy}) bin {k}: {d}");
            }
        }
    }
}
