//! Lucas-Kanade alignment over truncated distance images and the chain
//! back from the estimated warp to a refined camera pose.
//!
//! Distance images give wide, smooth basins where raw edge images have
//! near-zero gradient support, so a plain forward-additive Gauss-Newton
//! over the 8 homography parameters converges from retrieval-grade
//! initializations. Coordinates are centered and scaled internally
//! (Hartley normalization) to keep the normal equations well conditioned;
//! the reported warp is always in pixel coordinates.

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, Homography, homography_from_pose, pose_from_homography};
use crate::distance::{DistanceImage, distance_transform};
use crate::error::{Error, Result};
use crate::render::{DEFAULT_LINE_WIDTH, EdgeImage, render_edge_image};
use crate::template::FieldTemplate;

/// Residual growth ratio that raises the divergence signal.
const DIVERGENCE_RATIO: f64 = 1.05;

/// Minimum overlapping pixels for a meaningful update.
const MIN_VALID_PIXELS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LkSettings {
    pub max_iterations: u32,
    pub convergence_tol: f64,
    pub pyramid_levels: u32,
    /// Truncation threshold in pixels at 1280-wide resolution; scaled
    /// proportionally at the working resolution.
    pub truncate_px: f64,
    pub working_resolution: [u32; 2],
}

impl Default for LkSettings {
    fn default() -> Self {
        LkSettings {
            max_iterations: 50,
            convergence_tol: 1e-4,
            pyramid_levels: 2,
            truncate_px: 40.0,
            working_resolution: [640, 360],
        }
    }
}

impl LkSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence_tol must be positive".into()));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::Config("pyramid_levels must be >= 1".into()));
        }
        if !(self.truncate_px > 0.0) {
            return Err(Error::Config("truncate_px must be positive".into()));
        }
        if self.working_resolution[0] == 0 || self.working_resolution[1] == 0 {
            return Err(Error::Config("working_resolution must be positive".into()));
        }
        Ok(())
    }

    fn truncation_at(&self, working_width: u32) -> f64 {
        (self.truncate_px * working_width as f64 / 1280.0).max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LkDiagnostics {
    pub converged: bool,
    pub iterations: u32,
    pub residual_before: f64,
    pub residual_after: f64,
}

/// Result of refining a retrieved pose against an observed edge image.
#[derive(Debug, Clone)]
pub struct RefinementResult {
    pub pose: CameraPose,
    /// Estimated warp from the retrieved (rendered) image to the query
    /// image, in query pixel coordinates.
    pub warp: Homography,
    pub converged: bool,
    pub iterations: u32,
    pub residual_before: f64,
    pub residual_after: f64,
    /// Present when refinement fell back to the retrieved pose.
    pub fallback: Option<String>,
}

struct Level {
    width: usize,
    height: usize,
    values: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

impl Level {
    fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let mut grad_x = vec![0.0; width * height];
        let mut grad_y = vec![0.0; width * height];
        let at = |x: isize, y: isize| {
            let x = x.clamp(0, width as isize - 1) as usize;
            let y = y.clamp(0, height as isize - 1) as usize;
            values[y * width + x]
        };
        for y in 0..height as isize {
            for x in 0..width as isize {
                let i = y as usize * width + x as usize;
                grad_x[i] = (at(x + 1, y) - at(x - 1, y)) * 0.5;
                grad_y[i] = (at(x, y + 1) - at(x, y - 1)) * 0.5;
            }
        }
        Level { width, height, values, grad_x, grad_y }
    }

    /// Halve resolution; distance values halve with the pixel pitch.
    fn downsample(&self) -> Level {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut values = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (x2, y2) = (2 * x, 2 * y);
                let mut acc = 0.0;
                let mut n = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let sx = (x2 + dx).min(self.width - 1);
                        let sy = (y2 + dy).min(self.height - 1);
                        acc += self.values[sy * self.width + sx];
                        n += 1.0;
                    }
                }
                values[y * w + x] = acc / n / 2.0;
            }
        }
        Level::from_values(w, h, values)
    }

    #[inline]
    fn bilinear(&self, x: f64, y: f64) -> Option<(f64, f64, f64)> {
        if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let idx = |xx: usize, yy: usize| yy * self.width + xx;
        let lerp2 = |v: &[f64]| {
            let v00 = v[idx(x0, y0)];
            let v10 = v[idx(x0 + 1, y0)];
            let v01 = v[idx(x0, y0 + 1)];
            let v11 = v[idx(x0 + 1, y0 + 1)];
            v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy
                + v11 * fx * fy
        };
        Some((lerp2(&self.values), lerp2(&self.grad_x), lerp2(&self.grad_y)))
    }
}

fn build_pyramid(img: &DistanceImage, levels: u32) -> Vec<Level> {
    let base = Level::from_values(
        img.width as usize,
        img.height as usize,
        img.values.iter().map(|&v| v as f64).collect(),
    );
    let mut pyr = vec![base];
    for _ in 1..levels {
        if pyr.last().unwrap().width < 16 || pyr.last().unwrap().height < 16 {
            break;
        }
        pyr.push(pyr.last().unwrap().downsample());
    }
    pyr
}

/// Mean squared difference between `query` warped by `h` and `reference`,
/// over reference pixels landing inside the query frame. Warps that throw
/// most pixels out of frame are rejected by the in-frame fraction and fold
/// guards during optimization, not by the residual itself.
fn eval_residual(reference: &Level, query: &Level, h: &Matrix3<f64>) -> (f64, f64) {
    let mut acc = 0.0;
    let mut n = 0usize;
    for y in 0..reference.height {
        for x in 0..reference.width {
            let p = h * nalgebra::Vector3::new(x as f64, y as f64, 1.0);
            if p.z.abs() < 1e-12 {
                continue;
            }
            if let Some((q, _, _)) = query.bilinear(p.x / p.z, p.y / p.z) {
                let r = q - reference.values[y * reference.width + x];
                acc += r * r;
                n += 1;
            }
        }
    }
    let total = reference.width * reference.height;
    (if n > 0 { acc / n as f64 } else { 0.0 }, n as f64 / total as f64)
}

/// Gauss-Newton refinement of `h` (index coordinates) at one pyramid level,
/// with backtracking so the level residual never increases. Leaves `h`
/// untouched when no acceptable step exists. Returns (iterations, converged).
fn refine_level(
    reference: &Level,
    query: &Level,
    h: &mut Matrix3<f64>,
    settings: &LkSettings,
) -> (u32, bool) {
    let w = reference.width as f64;
    let hh = reference.height as f64;
    let cx = (w - 1.0) / 2.0;
    let cy = (hh - 1.0) / 2.0;
    let scale = w.max(hh) / 2.0;
    let n_mat = Matrix3::new(1.0 / scale, 0.0, -cx / scale, 0.0, 1.0 / scale, -cy / scale, 0.0, 0.0, 1.0);
    let n_inv = Matrix3::new(scale, 0.0, cx, 0.0, scale, cy, 0.0, 0.0, 1.0);

    let entry = *h;
    let mut hn = n_mat * *h * n_inv;
    if hn[(2, 2)].abs() < 1e-12 {
        return (0, false);
    }
    hn /= hn[(2, 2)];

    // Homographies that fold the frame through infinity are never valid
    // warps between two views of the same scene.
    let folds = |m: &Matrix3<f64>| -> bool {
        let corners = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, hh - 1.0), (0.0, hh - 1.0)];
        corners.iter().any(|&(x, y)| {
            let xn = (x - cx) / scale;
            let yn = (y - cy) / scale;
            m[(2, 0)] * xn + m[(2, 1)] * yn + 1.0 < 0.1
        })
    };
    let residual_of = |hn: &Matrix3<f64>| -> (f64, f64) {
        eval_residual(reference, query, &(n_inv * hn * n_mat))
    };

    let (mut current, entry_in_frame) = residual_of(&hn);
    if entry_in_frame < 0.3 {
        return (0, false);
    }

    let mut iterations = 0;
    let mut converged = false;
    'outer: for _ in 0..settings.max_iterations {
        iterations += 1;
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut g = SVector::<f64, 8>::zeros();
        let mut n_inside = 0usize;
        let n_total = reference.width * reference.height;

        for py in 0..reference.height {
            let yn = (py as f64 - cy) / scale;
            for px in 0..reference.width {
                let xn = (px as f64 - cx) / scale;
                let u = hn[(0, 0)] * xn + hn[(0, 1)] * yn + hn[(0, 2)];
                let v = hn[(1, 0)] * xn + hn[(1, 1)] * yn + hn[(1, 2)];
                let z = hn[(2, 0)] * xn + hn[(2, 1)] * yn + 1.0;
                if z.abs() < 1e-9 {
                    continue;
                }
                let y1 = u / z;
                let y2 = v / z;
                let qx = y1 * scale + cx;
                let qy = y2 * scale + cy;
                // Pixels warped outside the query are excluded from the sum.
                let Some((qval, gx, gy)) = query.bilinear(qx, qy) else {
                    continue;
                };
                let r = qval - reference.values[py * reference.width + px];
                // Gradient with respect to normalized warp output.
                let gxn = gx * scale;
                let gyn = gy * scale;
                let zi = 1.0 / z;
                let j = SVector::<f64, 8>::from([
                    gxn * xn * zi,
                    gxn * yn * zi,
                    gxn * zi,
                    gyn * xn * zi,
                    gyn * yn * zi,
                    gyn * zi,
                    -(gxn * y1 + gyn * y2) * xn * zi,
                    -(gxn * y1 + gyn * y2) * yn * zi,
                ]);
                a.ger(1.0, &j, &j, 1.0);
                g += j * r;
                n_inside += 1;
            }
        }

        if n_inside < MIN_VALID_PIXELS || (n_inside as f64) < 0.3 * n_total as f64 {
            break;
        }
        let Some(delta) = a.lu().solve(&(-g)) else {
            break;
        };
        if !delta.iter().all(|d| d.is_finite()) {
            break;
        }

        // Backtracking: shrink the step until the level residual does not
        // increase; give up on this level when even a tiny step fails.
        let mut step = 1.0;
        for _ in 0..5 {
            let mut candidate = hn;
            candidate[(0, 0)] += step * delta[0];
            candidate[(0, 1)] += step * delta[1];
            candidate[(0, 2)] += step * delta[2];
            candidate[(1, 0)] += step * delta[3];
            candidate[(1, 1)] += step * delta[4];
            candidate[(1, 2)] += step * delta[5];
            candidate[(2, 0)] += step * delta[6];
            candidate[(2, 1)] += step * delta[7];
            if !folds(&candidate) {
                let (cand_resid, cand_frac) = residual_of(&candidate);
                if cand_resid <= current + 1e-12 && cand_frac >= 0.3 {
                    hn = candidate;
                    current = cand_resid;
                    if (step * delta.norm()) < settings.convergence_tol {
                        converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            step *= 0.5;
        }
        // No acceptable step: the level is at its residual floor. A small
        // pending step certifies stationarity; a large one means the
        // optimizer is stuck on a ridge.
        converged = delta.norm() < 10.0 * settings.convergence_tol;
        break;
    }
    let out = n_inv * hn * n_mat;
    if out[(2, 2)].abs() > 1e-12 {
        *h = out / out[(2, 2)];
    } else {
        *h = entry;
    }
    (iterations, converged)
}

/// Align `query` to `reference` by minimizing the sum of squared distance
/// differences over the 8 homography parameters, coarse to fine.
///
/// The returned warp maps reference pixel coordinates to query pixel
/// coordinates (pixel index convention). Raises [`Error::LkDiverged`] when
/// the final residual exceeds the initial one by more than 5%; the caller
/// should fall back to `init`.
pub fn lk_align(
    reference: &DistanceImage,
    query: &DistanceImage,
    init: &Homography,
    settings: &LkSettings,
) -> Result<(Homography, LkDiagnostics)> {
    settings.validate()?;
    if reference.width != query.width || reference.height != query.height {
        return Err(Error::SizeMismatch {
            expected_w: reference.width,
            expected_h: reference.height,
            got_w: query.width,
            got_h: query.height,
        });
    }
    let ref_pyr = build_pyramid(reference, settings.pyramid_levels);
    let query_pyr = build_pyramid(query, settings.pyramid_levels);
    let levels = ref_pyr.len().min(query_pyr.len());

    let (residual_before, _) = eval_residual(&ref_pyr[0], &query_pyr[0], init.matrix());

    // One pyramid step maps full-res x to half-res (x - 0.5) / 2.
    let down = Matrix3::new(0.5, 0.0, -0.25, 0.0, 0.5, -0.25, 0.0, 0.0, 1.0);
    let up = Matrix3::new(2.0, 0.0, 0.5, 0.0, 2.0, 0.5, 0.0, 0.0, 1.0);

    let mut h = *init.matrix();
    for _ in 1..levels {
        h = down * h * up;
    }
    let mut total_iterations = 0;
    let mut converged = false;
    for lvl in (0..levels).rev() {
        let (iters, conv) = refine_level(&ref_pyr[lvl], &query_pyr[lvl], &mut h, settings);
        total_iterations += iters;
        converged = conv;
        if lvl > 0 {
            h = up * h * down;
        }
    }

    let (residual_after, in_frame) = eval_residual(&ref_pyr[0], &query_pyr[0], &h);
    if residual_after > residual_before * DIVERGENCE_RATIO && residual_after > 1e-12 {
        return Err(Error::LkDiverged { before: residual_before, after: residual_after });
    }
    if in_frame < 0.3 {
        return Err(Error::LkDiverged { before: residual_before, after: f64::INFINITY });
    }
    let warp = Homography::new(h).map_err(|_| Error::LkDiverged {
        before: residual_before,
        after: f64::INFINITY,
    })?;
    let diagnostics = LkDiagnostics {
        converged: converged && (residual_after <= residual_before || residual_after < 1e-12),
        iterations: total_iterations,
        residual_before,
        residual_after,
    };
    Ok((warp, diagnostics))
}

/// Refine a retrieved pose against an observed edge image.
///
/// Each round renders the current pose estimate, computes truncated
/// distance images at the working resolution, aligns them with
/// [`lk_align`] starting from the identity, chains the estimated warp into
/// the current plane-to-image homography and decomposes the product back
/// into a pose. Re-rendering from the improved pose and aligning again
/// drives the residual warp toward the identity, where the distance-image
/// objective is unbiased. Falls back to the retrieved pose (with
/// `converged = false` and the cause in `fallback`) when the first round
/// diverges, decomposes non-physically, or fails to reduce the masked
/// distance residual.
pub fn refine_pose(
    query_edge: &EdgeImage,
    retrieved_pose: &CameraPose,
    template: &FieldTemplate,
    settings: &LkSettings,
) -> RefinementResult {
    const MAX_ROUNDS: usize = 3;
    let mut best: Option<RefinementResult> = None;
    let mut current = retrieved_pose.clone();
    for _ in 0..MAX_ROUNDS {
        match try_refine(query_edge, &current, template, settings) {
            Ok(round) => {
                let done = round.residual_after > round.residual_before * 0.9;
                current = round.pose.clone();
                best = Some(match best.take() {
                    None => round,
                    Some(prev) => RefinementResult {
                        pose: round.pose,
                        warp: compose_total_warp(retrieved_pose, &current, query_edge)
                            .unwrap_or(round.warp),
                        converged: round.converged,
                        iterations: prev.iterations + round.iterations,
                        residual_before: prev.residual_before,
                        residual_after: round.residual_after,
                        fallback: None,
                    },
                });
                if done {
                    break;
                }
            }
            Err((reason, residual)) => {
                if best.is_none() {
                    return RefinementResult {
                        pose: retrieved_pose.clone(),
                        warp: Homography::identity(),
                        converged: false,
                        iterations: 0,
                        residual_before: residual,
                        residual_after: residual,
                        fallback: Some(reason),
                    };
                }
                break;
            }
        }
    }
    best.expect("loop always produces a result")
}

/// Total warp from the originally retrieved render to the query, in query
/// pixel coordinates: H(final) * H(retrieved)^-1.
fn compose_total_warp(
    retrieved: &CameraPose,
    final_pose: &CameraPose,
    _query: &EdgeImage,
) -> Result<Homography> {
    let h_ret = homography_from_pose(retrieved)?;
    let h_fin = homography_from_pose(final_pose)?;
    h_fin.compose(&h_ret.inverse()?)
}

fn mean_sq_diff(a: &DistanceImage, b: &DistanceImage, mask: &[bool]) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for ((x, y), &m) in a.values.iter().zip(&b.values).zip(mask) {
        if m {
            let d = (*x - *y) as f64;
            acc += d * d;
            n += 1;
        }
    }
    if n == 0 { 0.0 } else { acc / n as f64 }
}

/// Acceptance residuals are restricted to the query's distance ramps — the
/// neighborhood of observed field markings. This support is identical for
/// every retrieval candidate, so their residuals are comparable, and it
/// ignores regions where nothing was detected.
fn observation_support_mask(query_dist: &DistanceImage) -> Vec<bool> {
    let limit = query_dist.truncation * 0.999;
    let mut mask: Vec<bool> = query_dist.values.iter().map(|&v| v < limit).collect();
    // A degenerate mask would make residuals meaningless.
    if mask.iter().filter(|&&m| m).count() < 256 {
        mask.fill(true);
    }
    mask
}

fn try_refine(
    query_edge: &EdgeImage,
    retrieved_pose: &CameraPose,
    template: &FieldTemplate,
    settings: &LkSettings,
) -> std::result::Result<RefinementResult, (String, f64)> {
    let fail = |msg: String| (msg, 0.0);
    settings.validate().map_err(|e| fail(e.to_string()))?;
    if retrieved_pose.image_width != query_edge.width
        || retrieved_pose.image_height != query_edge.height
    {
        return Err(fail(format!(
            "pose raster {}x{} does not match query {}x{}",
            retrieved_pose.image_width,
            retrieved_pose.image_height,
            query_edge.width,
            query_edge.height
        )));
    }

    let h_retrieved =
        homography_from_pose(retrieved_pose).map_err(|e| fail(e.to_string()))?;

    // Work at reduced resolution when the query is an integer multiple of it.
    let [ww, wh] = settings.working_resolution;
    let factor = if query_edge.width == ww && query_edge.height == wh {
        1
    } else if ww > 0
        && query_edge.width % ww == 0
        && query_edge.width / ww >= 1
        && query_edge.height == (query_edge.width / ww) * wh
    {
        query_edge.width / ww
    } else {
        1
    };
    let work_w = query_edge.width / factor;
    let query_work =
        if factor == 1 { query_edge.clone() } else { query_edge.downsample_binary(factor) };

    // Render the reference through the same full-resolution + downsample
    // pipeline as the observed query so rasterization bias cancels.
    let line_width = (DEFAULT_LINE_WIDTH * query_edge.width as f64 / 1280.0).max(1.0);
    let ref_edge = render_edge_image(template, retrieved_pose, line_width)
        .map_err(|e| fail(e.to_string()))?
        .downsample_binary(factor);

    let truncate = settings.truncation_at(work_w);
    let ref_dist = distance_transform(&ref_edge, truncate).map_err(|e| fail(e.to_string()))?;
    let query_dist =
        distance_transform(&query_work, truncate).map_err(|e| fail(e.to_string()))?;
    let mask = observation_support_mask(&query_dist);
    let residual_retrieved = mean_sq_diff(&ref_dist, &query_dist, &mask);
    let fail_at = |msg: String| (msg, residual_retrieved);

    let (warp_work, diag) =
        lk_align(&ref_dist, &query_dist, &Homography::identity(), settings)
            .map_err(|e| fail_at(e.to_string()))?;

    // A warp stuck at the identity without convergence means alignment
    // found no signal (e.g. a blank query); keep the retrieved pose as is.
    if !diag.converged
        && (warp_work.matrix() - nalgebra::Matrix3::identity()).norm() < 1e-9
    {
        return Err(fail_at("alignment made no progress".into()));
    }

    // Index-space warp -> continuous pixel coordinates at working scale.
    let to_center = Matrix3::new(1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0);
    let from_center = Matrix3::new(1.0, 0.0, -0.5, 0.0, 1.0, -0.5, 0.0, 0.0, 1.0);
    let warp_cont = to_center * warp_work.matrix() * from_center;

    let s = factor as f64;
    let upscale = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
    let downscale = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
    let warp_full = Homography::new(upscale * warp_cont * downscale)
        .map_err(|e| fail_at(e.to_string()))?;

    let h_refined = warp_full.compose(&h_retrieved).map_err(|e| fail_at(e.to_string()))?;
    // Self-calibration can collapse on a sloppy warp (f^2 solves
    // non-positive); the zoom barely moves within one refinement round, so
    // retry with the retrieved focal length as a prior before giving up.
    let mut refined_pose =
        match pose_from_homography(&h_refined, query_edge.width, query_edge.height) {
            Ok(pose) => pose,
            Err(Error::NonPhysicalHomography(_)) => {
                crate::camera::pose_from_homography_with_focal(
                    &h_refined,
                    retrieved_pose.focal_length,
                    query_edge.width,
                    query_edge.height,
                )
                .map_err(|e| fail_at(e.to_string()))?
            }
            Err(e) => return Err(fail_at(e.to_string())),
        };
    // Line-sparse views leave the in-plane rotation of the warp nearly
    // unobservable, so the decomposition can come back with a roll no
    // tripod-mounted camera could have. Zero it and let the re-render
    // residual test below decide whether the rest of the pose stands.
    if refined_pose.roll_deg.abs() > crate::camera::MAX_ROLL_DEG {
        refined_pose.roll_deg = 0.0;
    }
    refined_pose.validate().map_err(|e| fail_at(e.to_string()))?;
    if refined_pose.center.z <= 1.0 {
        return Err(fail_at("refined camera sank to the ground plane".into()));
    }
    if !(-85.0..=-0.1).contains(&refined_pose.tilt_deg) {
        return Err(fail_at(format!(
            "refined tilt {:.2}° is not a downward sports-camera view",
            refined_pose.tilt_deg
        )));
    }
    if !(100.0..=50_000.0).contains(&refined_pose.focal_length) {
        return Err(fail_at(format!(
            "refined focal length {:.0} px is implausible",
            refined_pose.focal_length
        )));
    }
    // Refinement corrects retrieval-scale errors; a jump far beyond that
    // means the warp slid along a content-ambiguous direction.
    let dpan = (refined_pose.pan_deg - retrieved_pose.pan_deg).abs();
    let dtilt = (refined_pose.tilt_deg - retrieved_pose.tilt_deg).abs();
    let f_ratio = refined_pose.focal_length / retrieved_pose.focal_length;
    let dcenter = (refined_pose.center - retrieved_pose.center).norm();
    if dpan > 5.0 || dtilt > 3.0 || !(0.65..=1.5).contains(&f_ratio) || dcenter > 12.0 {
        return Err(fail_at(format!(
            "refined pose jumped too far from retrieval (Δpan {dpan:.1}°, Δtilt {dtilt:.1}°, f ×{f_ratio:.2}, ΔC {dcenter:.1} m)"
        )));
    }

    // Accept only if the re-rendered refined pose matches the observation
    // at least as well as the retrieved pose did.
    let refined_edge = render_edge_image(template, &refined_pose, line_width)
        .map_err(|e| fail_at(e.to_string()))?
        .downsample_binary(factor);
    let refined_dist =
        distance_transform(&refined_edge, truncate).map_err(|e| fail_at(e.to_string()))?;
    let residual_refined = mean_sq_diff(&refined_dist, &query_dist, &mask);
    if residual_refined > residual_retrieved {
        return Err(fail_at(format!(
            "refined residual {residual_refined:.4} exceeds retrieved {residual_retrieved:.4}"
        )));
    }

    Ok(RefinementResult {
        pose: refined_pose,
        warp: warp_full,
        converged: diag.converged,
        iterations: diag.iterations,
        residual_before: residual_retrieved,
        residual_after: residual_refined,
        fallback: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use crate::template::builtin_soccer;

    fn test_pose() -> CameraPose {
        CameraPose::new(1400.0, 6.0, -11.0, Vector3::new(52.0, -45.0, 17.0), 640, 360)
    }

    fn test_distance() -> DistanceImage {
        let edge = render_edge_image(&builtin_soccer(), &test_pose(), 2.0).unwrap();
        distance_transform(&edge, 20.0).unwrap()
    }

    #[test]
    fn identity_converges_immediately() {
        let d = test_distance();
        let settings = LkSettings::default();
        let (warp, diag) = lk_align(&d, &d, &Homography::identity(), &settings).unwrap();
        assert!(diag.converged);
        assert!(diag.iterations <= 2, "iterations = {}", diag.iterations);
        assert!(diag.residual_after <= 1e-12);
        let err = (warp.matrix() - Matrix3::identity()).norm();
        assert!(err < 1e-9, "warp error {err}");
    }

    #[test]
    fn recovers_pixel_translation() {
        let reference = test_distance();
        // Query = reference shifted by (3, 2): query(x) = reference(x - t).
        let (w, h) = (reference.width, reference.height);
        let mut values = vec![reference.truncation; (w * h) as usize];
        for y in 2..h {
            for x in 3..w {
                values[(y * w + x) as usize] = reference.get(x - 3, y - 2);
            }
        }
        let query = DistanceImage { width: w, height: h, values, truncation: reference.truncation };
        let (warp, diag) =
            lk_align(&reference, &query, &Homography::identity(), &LkSettings::default()).unwrap();
        assert!(diag.converged);
        let m = warp.matrix();
        assert!((m[(0, 2)] - 3.0).abs() < 0.1, "tx = {}", m[(0, 2)]);
        assert!((m[(1, 2)] - 2.0).abs() < 0.1, "ty = {}", m[(1, 2)]);
    }

    #[test]
    fn all_zero_query_falls_back() {
        let query = EdgeImage::new(1280, 720);
        let pose = CameraPose::new(2800.0, 6.0, -11.0, Vector3::new(52.0, -45.0, 17.0), 1280, 720);
        let result = refine_pose(&query, &pose, &builtin_soccer(), &LkSettings::default());
        assert!(!result.converged);
        assert_eq!(result.pose, pose);
        assert!(result.fallback.is_some());
        assert_eq!(result.residual_before, result.residual_after);
    }

    #[test]
    fn self_render_refines_to_itself() {
        let pose = CameraPose::new(2800.0, -9.0, -12.0, Vector3::new(51.0, -44.0, 16.0), 1280, 720);
        let query = render_edge_image(&builtin_soccer(), &pose, 4.0).unwrap();
        let result = refine_pose(&query, &pose, &builtin_soccer(), &LkSettings::default());
        assert!(result.converged, "fallback: {:?}", result.fallback);
        assert!((result.pose.pan_deg - pose.pan_deg).abs() < 1e-3);
        assert!((result.pose.tilt_deg - pose.tilt_deg).abs() < 1e-3);
        assert!((result.pose.focal_length - pose.focal_length).abs() < 0.5);
    }
}
