//! IoU metrics against an independent rasterization oracle, plus the
//! perturbation-sweep and invariance properties.

use fieldcal::template::builtin_soccer;
use fieldcal::*;
use nalgebra::{Matrix3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn wc_pose(f: f64, pan: f64, tilt: f64) -> CameraPose {
    CameraPose::new(f, pan, tilt, Vector3::new(52.0, -45.0, 17.0), 1280, 720)
}

/// Membership-count oracle on the template plane for the clipped
/// visible-footprint IoU.
fn raster_part(h_gt: &Homography, h_est: &Homography, cell: f64) -> f64 {
    let t = builtin_soccer();
    let inside = |h: &Homography, p: [f64; 2]| -> bool {
        let v = h.matrix() * Vector3::new(p[0], p[1], 1.0);
        v.z > 1e-12 && {
            let (x, y) = (v.x / v.z, v.y / v.z);
            x >= 0.0 && x <= 1280.0 && y >= 0.0 && y <= 720.0
        }
    };
    let (mut inter, mut union) = (0u64, 0u64);
    let nx = (t.length_m / cell).ceil() as usize;
    let ny = (t.width_m / cell).ceil() as usize;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [(ix as f64 + 0.5) * cell, (iy as f64 + 0.5) * cell];
            let a = inside(h_gt, p);
            let b = inside(h_est, p);
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
    }
    if union == 0 { 0.0 } else { inter as f64 / union as f64 }
}

/// Same counting oracle for the whole-model IoU (field rectangle against
/// its mapped copy).
fn raster_whole(h_gt: &Homography, h_est: &Homography, cell: f64) -> f64 {
    let t = builtin_soccer();
    let m_inv = h_est.inverse().unwrap().compose(h_gt).unwrap();
    let in_field = |p: [f64; 2]| p[0] >= 0.0 && p[0] <= t.length_m && p[1] >= 0.0 && p[1] <= t.width_m;
    let (mut inter, mut union) = (0u64, 0u64);
    // The mapped footprint can spill outside the field; pad the grid.
    let pad = 40.0;
    let nx = ((t.length_m + 2.0 * pad) / cell).ceil() as usize;
    let ny = ((t.width_m + 2.0 * pad) / cell).ceil() as usize;
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [(ix as f64 + 0.5) * cell - pad, (iy as f64 + 0.5) * cell - pad];
            let a = in_field(p);
            let v = m_inv.matrix() * Vector3::new(p[0], p[1], 1.0);
            let b = v.z.abs() > 1e-12 && in_field([v.x / v.z, v.y / v.z]);
            inter += (a && b) as u64;
            union += (a || b) as u64;
        }
    }
    if union == 0 { 0.0 } else { inter as f64 / union as f64 }
}

#[test]
fn random_pose_pairs_match_rasterization() {
    let t = builtin_soccer();
    let mut rng = ChaCha12Rng::seed_from_u64(2718);
    for case in 0..10 {
        let gt = wc_pose(
            rng.random_range(1200.0..5000.0),
            rng.random_range(-25.0..25.0),
            rng.random_range(-14.0..-6.5),
        );
        let mut est = gt.clone();
        est.pan_deg += rng.random_range(-1.5..1.5);
        est.tilt_deg += rng.random_range(-0.5..0.5);
        est.focal_length *= rng.random_range(0.93..1.07);
        est.center += Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(-1.0..1.0),
        );
        let h_gt = homography_from_pose(&gt).unwrap();
        let h_est = homography_from_pose(&est).unwrap();

        let poly = iou_part(&h_gt, &h_est, &t, (1280, 720)).unwrap();
        let oracle = raster_part(&h_gt, &h_est, 0.02);
        assert!(
            (poly - oracle).abs() < 0.005,
            "case {case} part: polygon {poly:.4} vs raster {oracle:.4}"
        );

        let whole = iou_whole(&h_gt, &h_est, &t).unwrap();
        let oracle_whole = raster_whole(&h_gt, &h_est, 0.02);
        assert!(
            (whole - oracle_whole).abs() < 0.005,
            "case {case} whole: polygon {whole:.4} vs raster {oracle_whole:.4}"
        );
    }
}

#[test]
fn pan_sweep_degrades_monotonically() {
    let t = builtin_soccer();
    let gt = wc_pose(3000.0, 0.0, -10.0);
    let h_gt = homography_from_pose(&gt).unwrap();
    let mut last = f64::INFINITY;
    for step in 0..10 {
        let mut est = gt.clone();
        est.pan_deg += 0.5 * step as f64;
        let h_est = homography_from_pose(&est).unwrap();
        let v = iou_part(&h_gt, &h_est, &t, (1280, 720)).unwrap();
        assert!((0.0..=1.0).contains(&v));
        assert!(v <= last + 1e-9, "IoU rose at step {step}: {v:.4} > {last:.4}");
        last = v;
    }
}

#[test]
fn values_bounded_and_scale_invariant() {
    let t = builtin_soccer();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    for _ in 0..25 {
        let gt = wc_pose(
            rng.random_range(1000.0..6000.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-15.0..-5.0),
        );
        let mut est = gt.clone();
        est.pan_deg += rng.random_range(-3.0..3.0);
        est.focal_length *= rng.random_range(0.8..1.25);
        let h_gt = homography_from_pose(&gt).unwrap();
        let h_est = homography_from_pose(&est).unwrap();
        let part = iou_part(&h_gt, &h_est, &t, (1280, 720)).unwrap();
        let whole = iou_whole(&h_gt, &h_est, &t).unwrap();
        assert!((0.0..=1.0).contains(&part));
        assert!((0.0..=1.0).contains(&whole));

        let scaled = Homography::new(h_est.matrix() * -7.25).unwrap();
        assert!((iou_part(&h_gt, &scaled, &t, (1280, 720)).unwrap() - part).abs() < 1e-12);
        assert!((iou_whole(&h_gt, &scaled, &t).unwrap() - whole).abs() < 1e-12);
    }
}

#[test]
fn exact_translation_is_symmetric() {
    let t = builtin_soccer();
    let h = homography_from_pose(&wc_pose(2500.0, 3.0, -9.0)).unwrap();
    let tr = Matrix3::new(1.0, 0.0, 0.8, 0.0, 1.0, -0.6, 0.0, 0.0, 1.0);
    let shifted = Homography::new(h.matrix() * tr).unwrap();
    let ab = iou_whole(&h, &shifted, &t).unwrap();
    let ba = iou_whole(&shifted, &h, &t).unwrap();
    assert!((ab - ba).abs() < 1e-9, "{ab} vs {ba}");
}

#[test]
fn degenerate_region_is_an_error() {
    let t = builtin_soccer();
    let h = homography_from_pose(&wc_pose(2500.0, 3.0, -9.0)).unwrap();
    // A collapsing map flattens footprints to (near) zero area.
    let crushed = Homography::new(Matrix3::new(
        1e-9, 0.0, 0.0, 0.0, 1e-9, 0.0, 1e-4, 1e-4, 1.0,
    ));
    if let Ok(c) = crushed {
        assert!(iou_whole(&h, &c, &t).is_err() || iou_whole(&h, &c, &t).unwrap() < 0.01);
    }
}
