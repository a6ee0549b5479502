//! Random camera poses from the configured prior: Gaussian location,
//! uniform pan/tilt/focal/roll, fixed base tilt.
//!
//! Each sample draws from its own counter-based substream keyed by
//! (seed, index), so batches are reproducible regardless of iteration
//! order or how generation is spread across workers.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraPose, DEFAULT_BASE_TILT_DEG};
use crate::error::{Error, Result};

/// Cameras below this height are rejected and resampled.
pub const MIN_CENTER_Z: f64 = 1.0;

/// Prior over camera poses. Defaults reproduce the World Cup broadcast
/// statistics: location N([52, -45, 17], [2, 9, 3]^2) meters, pan
/// [-35, 35]°, tilt [-15, -5]°, focal [1000, 6000] px at 1280x720.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseDistribution {
    pub center_mean: [f64; 3],
    pub center_stddev: [f64; 3],
    pub pan_range_deg: [f64; 2],
    pub tilt_range_deg: [f64; 2],
    pub focal_range_px: [f64; 2],
    pub roll_range_deg: [f64; 2],
    pub base_tilt_deg: f64,
    pub image_size: [u32; 2],
    pub seed: u64,
}

impl Default for PoseDistribution {
    fn default() -> Self {
        PoseDistribution {
            center_mean: [52.0, -45.0, 17.0],
            center_stddev: [2.0, 9.0, 3.0],
            pan_range_deg: [-35.0, 35.0],
            tilt_range_deg: [-15.0, -5.0],
            focal_range_px: [1000.0, 6000.0],
            roll_range_deg: [-0.1, 0.1],
            base_tilt_deg: DEFAULT_BASE_TILT_DEG,
            image_size: [1280, 720],
            seed: 7,
        }
    }
}

impl PoseDistribution {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("pan_range_deg", self.pan_range_deg),
            ("tilt_range_deg", self.tilt_range_deg),
            ("focal_range_px", self.focal_range_px),
            ("roll_range_deg", self.roll_range_deg),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi) {
                return Err(Error::InvalidDistribution(format!(
                    "{name}: lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        if self.center_stddev.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "center_stddev components must be >= 0, got {:?}",
                self.center_stddev
            )));
        }
        if !(self.focal_range_px[0] > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "focal range must be positive, got {:?}",
                self.focal_range_px
            )));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::InvalidDistribution("image_size must be positive".into()));
        }
        if self.center_mean[2] <= MIN_CENTER_Z && self.center_stddev[2] == 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "camera height is pinned at {} m but must exceed {MIN_CENTER_Z} m",
                self.center_mean[2]
            )));
        }
        Ok(())
    }
}

/// Substream generator for sample `index` under `seed`.
pub(crate) fn substream_rng(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

fn uniform_in(rng: &mut ChaCha12Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] { range[0] } else { rng.random_range(range[0]..=range[1]) }
}

fn normal_at(rng: &mut ChaCha12Rng, mean: f64, stddev: f64) -> f64 {
    if stddev == 0.0 {
        mean
    } else {
        Normal::new(mean, stddev).expect("validated stddev").sample(rng)
    }
}

fn sample_one(dist: &PoseDistribution, index: u64) -> (CameraPose, u64) {
    let mut rng = substream_rng(dist.seed, index);
    let mut rejected = 0;
    let center = loop {
        let c = nalgebra::Vector3::new(
            normal_at(&mut rng, dist.center_mean[0], dist.center_stddev[0]),
            normal_at(&mut rng, dist.center_mean[1], dist.center_stddev[1]),
            normal_at(&mut rng, dist.center_mean[2], dist.center_stddev[2]),
        );
        if c.z > MIN_CENTER_Z {
            break c;
        }
        rejected += 1;
    };
    let pose = CameraPose {
        focal_length: uniform_in(&mut rng, dist.focal_range_px),
        pan_deg: uniform_in(&mut rng, dist.pan_range_deg),
        tilt_deg: uniform_in(&mut rng, dist.tilt_range_deg),
        roll_deg: uniform_in(&mut rng, dist.roll_range_deg),
        base_tilt_deg: dist.base_tilt_deg,
        center,
        image_width: dist.image_size[0],
        image_height: dist.image_size[1],
        reserved: 0.0,
    };
    (pose, rejected)
}

/// Draw `n` poses. Deterministic given `(dist, n)`; sample `i` of a batch
/// equals sample `i` of any other batch with the same distribution.
pub fn sample_poses(dist: &PoseDistribution, n: usize) -> Result<Vec<CameraPose>> {
    sample_poses_with_stats(dist, n).map(|(poses, _)| poses)
}

/// As [`sample_poses`], also reporting how many below-ground centers were
/// rejected and redrawn.
pub fn sample_poses_with_stats(
    dist: &PoseDistribution,
    n: usize,
) -> Result<(Vec<CameraPose>, u64)> {
    dist.validate()?;
    if n == 0 {
        return Err(Error::InvalidDistribution("sample count must be >= 1".into()));
    }
    let mut poses = Vec::with_capacity(n);
    let mut rejected = 0;
    for i in 0..n {
        let (pose, r) = sample_one(dist, i as u64);
        rejected += r;
        poses.push(pose);
    }
    Ok((poses, rejected))
}
