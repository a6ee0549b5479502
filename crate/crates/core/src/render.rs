//! Rasterize field templates under camera poses into binary edge images —
//! the synthetic counterpart of detected field markings.
//!
//! Primitives are clipped against the positive-depth half space in world
//! coordinates, projected with adaptive subdivision, clipped to the viewport
//! and stamped as fixed-width strokes. No anti-aliasing: pixel values are
//! exactly 0 or 255 so rendering is bit-deterministic.

use nalgebra::{Vector2, Vector3};

use crate::camera::{CameraPose, projection_from_pose, project_point, rotation_from_pose};
use crate::error::{Error, Result};
use crate::template::FieldTemplate;

/// Default stroke width in pixels at 1280x720; survives 4x downsampling to
/// the 320x180 feature scale as roughly one-pixel lines.
pub const DEFAULT_LINE_WIDTH: f64 = 4.0;

/// Feature-scale raster dimensions.
pub const FEATURE_WIDTH: u32 = 320;
pub const FEATURE_HEIGHT: u32 = 180;

/// Maximum chord deviation before a projected span is subdivided.
const MAX_CHORD_ERROR_PX: f64 = 0.5;

/// Arc discretization step in degrees.
const ARC_STEP_DEG: f64 = 2.0;

/// Depth at which primitives crossing behind the camera are clipped.
const CLIP_DEPTH: f64 = 1e-6;

/// Binary edge raster: 0 background, 255 edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl EdgeImage {
    pub fn new(width: u32, height: u32) -> Self {
        EdgeImage { width, height, pixels: vec![0; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        self.pixels[(y * self.width + x) as usize] = 255;
    }

    pub fn edge_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 255).count()
    }

    pub fn as_gray(&self) -> GrayRaster {
        GrayRaster { width: self.width, height: self.height, pixels: self.pixels.clone() }
    }

    /// Block-OR downsample by an integer factor; any edge pixel in a block
    /// marks the output pixel. Preserves thin-line connectivity.
    pub fn downsample_binary(&self, factor: u32) -> EdgeImage {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = EdgeImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                'block: for by in 0..factor {
                    for bx in 0..factor {
                        let sx = x * factor + bx;
                        let sy = y * factor + by;
                        if sx < self.width && sy < self.height && self.get(sx, sy) != 0 {
                            out.set(x, y);
                            break 'block;
                        }
                    }
                }
            }
        }
        out
    }
}

/// 8-bit grayscale raster (intermediate values allowed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayRaster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayRaster {
    pub fn new(width: u32, height: u32) -> Self {
        GrayRaster { width, height, pixels: vec![0; (width * height) as usize] }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }
}

/// Render the template under a pose as a binary edge image.
pub fn render_edge_image(
    template: &FieldTemplate,
    pose: &CameraPose,
    line_width_px: f64,
) -> Result<EdgeImage> {
    if line_width_px < 1.0 {
        return Err(Error::Config(format!(
            "line width must be >= 1 px, got {line_width_px}"
        )));
    }
    pose.validate()?;
    let proj = projection_from_pose(pose);
    // Depth of a world point is linear: depth(p) = r3 . (p - C).
    let r3 = rotation_from_pose(pose).row(2).transpose();
    let depth = move |p: Vector3<f64>| r3.dot(&(p - pose.center));

    let mut img = EdgeImage::new(pose.image_width, pose.image_height);
    let mut polyline: Vec<Vector2<f64>> = Vec::new();

    let mut draw_world_segment = |img: &mut EdgeImage, a: Vector3<f64>, b: Vector3<f64>| {
        let (da, db) = (depth(a), depth(b));
        if da < CLIP_DEPTH && db < CLIP_DEPTH {
            return;
        }
        // Clip to the positive-depth half space; depth is linear along the segment.
        let (mut wa, mut wb) = (a, b);
        if da < CLIP_DEPTH {
            let t = (CLIP_DEPTH - da) / (db - da);
            wa = a + (b - a) * t;
        } else if db < CLIP_DEPTH {
            let t = (CLIP_DEPTH - db) / (da - db);
            wb = b + (a - b) * t;
        }
        let (pa, pb) = match (project_point(&proj, wa), project_point(&proj, wb)) {
            (Some(pa), Some(pb)) => (pa, pb),
            _ => return,
        };
        polyline.clear();
        polyline.push(pa);
        subdivide(&proj, wa, wb, pa, pb, 0, &mut polyline);
        polyline.push(pb);
        for pair in polyline.windows(2) {
            stamp_thick_segment(img, pair[0], pair[1], line_width_px);
        }
    };

    for s in &template.segments {
        draw_world_segment(
            &mut img,
            Vector3::new(s.a[0], s.a[1], 0.0),
            Vector3::new(s.b[0], s.b[1], 0.0),
        );
    }
    for a in &template.arcs {
        let steps = ((a.end_deg - a.start_deg) / ARC_STEP_DEG).ceil().max(1.0) as usize;
        let mut prev = arc_point(a, a.start_deg);
        for i in 1..=steps {
            let deg = a.start_deg + (a.end_deg - a.start_deg) * i as f64 / steps as f64;
            let next = arc_point(a, deg);
            draw_world_segment(&mut img, prev, next);
            prev = next;
        }
    }
    Ok(img)
}

fn arc_point(a: &crate::template::Arc, deg: f64) -> Vector3<f64> {
    let r = deg.to_radians();
    Vector3::new(a.center[0] + a.radius * r.cos(), a.center[1] + a.radius * r.sin(), 0.0)
}

/// Split a projected span until the world midpoint reprojects within
/// [`MAX_CHORD_ERROR_PX`] of the image chord.
fn subdivide(
    proj: &crate::camera::ProjectionMatrix,
    wa: Vector3<f64>,
    wb: Vector3<f64>,
    pa: Vector2<f64>,
    pb: Vector2<f64>,
    level: u32,
    out: &mut Vec<Vector2<f64>>,
) {
    if level >= 16 {
        return;
    }
    let wm = (wa + wb) / 2.0;
    let pm = match project_point(proj, wm) {
        Some(p) => p,
        None => return,
    };
    if point_line_distance(pm, pa, pb) < MAX_CHORD_ERROR_PX {
        return;
    }
    subdivide(proj, wa, wm, pa, pm, level + 1, out);
    out.push(pm);
    subdivide(proj, wm, wb, pm, pb, level + 1, out);
}

fn point_line_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len = ab.norm();
    if len < 1e-12 {
        return (p - a).norm();
    }
    ((p - a).x * ab.y - (p - a).y * ab.x).abs() / len
}

/// Stamp a stroke: every pixel whose center lies within `width/2` of the
/// segment is set. Idempotent, so draw order never matters.
fn stamp_thick_segment(img: &mut EdgeImage, a: Vector2<f64>, b: Vector2<f64>, width: f64) {
    let r = width / 2.0;
    let (w, h) = (img.width as f64, img.height as f64);
    // Reject strokes entirely outside the padded viewport.
    let pad = r + 1.0;
    let (min_x, max_x) = (a.x.min(b.x) - pad, a.x.max(b.x) + pad);
    let (min_y, max_y) = (a.y.min(b.y) - pad, a.y.max(b.y) + pad);
    if max_x < 0.0 || min_x > w || max_y < 0.0 || min_y > h {
        return;
    }
    let x0 = min_x.floor().max(0.0) as u32;
    let x1 = (max_x.ceil().min(w - 1.0)) as u32;
    let y0 = min_y.floor().max(0.0) as u32;
    let y1 = (max_y.ceil().min(h - 1.0)) as u32;
    let ab = b - a;
    let len2 = ab.norm_squared();
    let r2 = r * r;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let p = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let d2 = if len2 < 1e-24 {
                (p - a).norm_squared()
            } else {
                let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
                (p - (a + ab * t)).norm_squared()
            };
            if d2 <= r2 {
                img.set(x, y);
            }
        }
    }
}

/// Area-average resample to the 320x180 feature scale.
pub fn resize_to_feature_scale(img: &EdgeImage) -> GrayRaster {
    resize_area(img, FEATURE_WIDTH, FEATURE_HEIGHT)
}

/// General box-filter downsampling: each output pixel is the exact area
/// average of the source region it covers.
pub fn resize_area(img: &EdgeImage, out_w: u32, out_h: u32) -> GrayRaster {
    assert!(out_w > 0 && out_h > 0);
    let mut out = GrayRaster::new(out_w, out_h);
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    for oy in 0..out_h {
        let y_lo = oy as f64 * sy;
        let y_hi = (oy + 1) as f64 * sy;
        for ox in 0..out_w {
            let x_lo = ox as f64 * sx;
            let x_hi = (ox + 1) as f64 * sx;
            let mut acc = 0.0;
            let mut area = 0.0;
            let mut y = y_lo.floor() as u32;
            while (y as f64) < y_hi && y < img.height {
                let wy = (y_hi.min((y + 1) as f64) - y_lo.max(y as f64)).max(0.0);
                if wy > 0.0 {
                    let mut x = x_lo.floor() as u32;
                    while (x as f64) < x_hi && x < img.width {
                        let wx = (x_hi.min((x + 1) as f64) - x_lo.max(x as f64)).max(0.0);
                        if wx > 0.0 {
                            acc += wx * wy * img.get(x, y) as f64;
                            area += wx * wy;
                        }
                        x += 1;
                    }
                }
                y += 1;
            }
            out.pixels[(oy * out_w + ox) as usize] =
                if area > 0.0 { (acc / area).round() as u8 } else { 0 };
        }
    }
    out
}

/// Threshold a grayscale raster into a binary edge image (>= threshold is edge).
pub fn binarize(raster: &GrayRaster, threshold: u8) -> EdgeImage {
    EdgeImage {
        width: raster.width,
        height: raster.height,
        pixels: raster.pixels.iter().map(|&p| if p >= threshold { 255 } else { 0 }).collect(),
    }
}

/// Keep a pose's view identical while scaling the image raster: focal length
/// and image dimensions divide by `factor`.
pub fn scale_pose(pose: &CameraPose, factor: u32) -> CameraPose {
    let mut p = pose.clone();
    p.focal_length /= factor as f64;
    p.image_width /= factor;
    p.image_height /= factor;
    p
}
