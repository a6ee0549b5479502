//! Feature-pose database: packed (descriptor, pose) records with exact
//! nearest-neighbor queries.
//!
//! The reference query semantics is the naive full scan; the parallel
//! chunked path must return bit-identical results (same scalar distance
//! kernel, ties broken by lower record index).
//!
//! File format (little-endian):
//! `"FPDB" | u32 version=1 | u32 record_count | u32 feature_dim |
//! u32 pose_dim=9 | u64 config_hash`, then per record 9xf64 pose followed
//! by feature_dim x f32, then CRC32 of the record bytes.

use std::path::Path;

use rayon::prelude::*;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::hog::{FeatureVector, HogConfig, hog_features};
use crate::render::{render_edge_image, resize_area};
use crate::template::FieldTemplate;

const MAGIC: &[u8; 4] = b"FPDB";
const VERSION: u32 = 1;
const POSE_DIM: usize = 9;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 8;

/// Fixed 9-scalar pose record: focal, pan, tilt, roll, base tilt, center
/// x/y/z, reserved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVec(pub [f64; 9]);

impl PoseVec {
    pub fn to_pose(&self, image_width: u32, image_height: u32) -> CameraPose {
        CameraPose::from_pose_vector(&self.0, image_width, image_height)
    }
}

/// Database metadata. Only the hash of the build configuration survives a
/// save/load round trip; the full snapshot is available on freshly built
/// databases.
#[derive(Debug, Clone, PartialEq)]
pub struct DbMetadata {
    pub config_hash: u64,
    pub snapshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoseDatabase {
    feature_dim: usize,
    features: Vec<f32>,
    poses: Vec<PoseVec>,
    pub metadata: DbMetadata,
}

/// One nearest-neighbor result.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryHit {
    pub index: usize,
    pub pose: PoseVec,
    pub distance: f32,
}

impl FeaturePoseDatabase {
    pub fn from_records(
        feature_dim: usize,
        records: Vec<(FeatureVector, PoseVec)>,
        metadata: DbMetadata,
    ) -> Result<Self> {
        let mut features = Vec::with_capacity(feature_dim * records.len());
        let mut poses = Vec::with_capacity(records.len());
        for (i, (f, p)) in records.into_iter().enumerate() {
            if f.dim() != feature_dim {
                return Err(Error::DimMismatch { expected: feature_dim, got: f.dim() });
            }
            if !f.values.iter().all(|v| v.is_finite()) {
                return Err(Error::DbFormat(format!("non-finite feature in record {i}")));
            }
            features.extend_from_slice(&f.values);
            poses.push(p);
        }
        Ok(FeaturePoseDatabase { feature_dim, features, poses, metadata })
    }

    pub fn record_count(&self) -> usize {
        self.poses.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn feature(&self, index: usize) -> &[f32] {
        &self.features[index * self.feature_dim..(index + 1) * self.feature_dim]
    }

    pub fn pose(&self, index: usize) -> &PoseVec {
        &self.poses[index]
    }
}

/// FNV-1a hash of the canonical build-config serialization.
pub fn config_hash(canonical: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in canonical.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Render, resize and describe every pose, in order. Parallel but
/// deterministic: record `i` always comes from pose `i`.
pub fn build_database(
    poses: &[CameraPose],
    template: &FieldTemplate,
    line_width_px: f64,
    hog_cfg: &HogConfig,
    snapshot: Option<String>,
) -> Result<FeaturePoseDatabase> {
    if poses.is_empty() {
        return Err(Error::EmptyDatabase);
    }
    hog_cfg.validate()?;
    let records: Vec<(FeatureVector, PoseVec)> = poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let edge = render_edge_image(template, pose, line_width_px)
                .map_err(|e| Error::Config(format!("pose {i}: {e}")))?;
            let small = resize_area(&edge, hog_cfg.input_size[0], hog_cfg.input_size[1]);
            let feature = hog_features(&small, hog_cfg)
                .map_err(|e| Error::Config(format!("pose {i}: {e}")))?;
            Ok((feature, PoseVec(pose.pose_vector())))
        })
        .collect::<Result<_>>()?;
    let hash = config_hash(snapshot.as_deref().unwrap_or(""));
    FeaturePoseDatabase::from_records(
        hog_cfg.descriptor_len(),
        records,
        DbMetadata { config_hash: hash, snapshot },
    )
}

/// Shared scalar distance kernel; both query paths use exactly this.
#[inline]
fn squared_l2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

fn top_k_merge(mut hits: Vec<(f32, usize)>, k: usize) -> Vec<(f32, usize)> {
    hits.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(k);
    hits
}

/// Exact k-nearest records by squared L2, ascending; ties broken by lower
/// record index. Parallel scan.
pub fn query_nearest(
    db: &FeaturePoseDatabase,
    feature: &FeatureVector,
    k: usize,
) -> Result<Vec<QueryHit>> {
    query_checked(db, feature)?;
    let k = k.max(1).min(db.record_count());
    const CHUNK: usize = 1024;
    let n = db.record_count();
    let hits = (0..n)
        .into_par_iter()
        .chunks(CHUNK)
        .map(|chunk| {
            let local: Vec<(f32, usize)> = chunk
                .into_iter()
                .map(|i| (squared_l2(db.feature(i), &feature.values), i))
                .collect();
            top_k_merge(local, k)
        })
        .reduce(Vec::new, |a, mut b| {
            let mut merged = a;
            merged.append(&mut b);
            top_k_merge(merged, k)
        });
    Ok(hits
        .into_iter()
        .map(|(distance, index)| QueryHit { index, pose: *db.pose(index), distance })
        .collect())
}

/// Reference implementation: serial full scan and sort.
pub fn query_nearest_full_scan(
    db: &FeaturePoseDatabase,
    feature: &FeatureVector,
    k: usize,
) -> Result<Vec<QueryHit>> {
    query_checked(db, feature)?;
    let k = k.max(1).min(db.record_count());
    let all: Vec<(f32, usize)> = (0..db.record_count())
        .map(|i| (squared_l2(db.feature(i), &feature.values), i))
        .collect();
    Ok(top_k_merge(all, k)
        .into_iter()
        .map(|(distance, index)| QueryHit { index, pose: *db.pose(index), distance })
        .collect())
}

fn query_checked(db: &FeaturePoseDatabase, feature: &FeatureVector) -> Result<()> {
    if db.record_count() == 0 {
        return Err(Error::EmptyDatabase);
    }
    if feature.dim() != db.feature_dim {
        return Err(Error::DimMismatch { expected: db.feature_dim, got: feature.dim() });
    }
    Ok(())
}

pub fn save_database(db: &FeaturePoseDatabase, path: &Path) -> Result<()> {
    std::fs::write(path, encode_database(db))?;
    Ok(())
}

pub fn encode_database(db: &FeaturePoseDatabase) -> Vec<u8> {
    let n = db.record_count();
    let body_len = n * (POSE_DIM * 8 + db.feature_dim * 4);
    let mut bytes = Vec::with_capacity(HEADER_LEN + body_len + 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(db.feature_dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(POSE_DIM as u32).to_le_bytes());
    bytes.extend_from_slice(&db.metadata.config_hash.to_le_bytes());
    for i in 0..n {
        for v in db.pose(i).0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in db.feature(i) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes[HEADER_LEN..]);
    bytes.extend_from_slice(&crc.to_le_bytes());
    bytes
}

pub fn load_database(path: &Path) -> Result<FeaturePoseDatabase> {
    decode_database(&std::fs::read(path)?)
}

pub fn decode_database(bytes: &[u8]) -> Result<FeaturePoseDatabase> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::DbFormat("file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::DbFormat(format!(
            "bad magic {:02x?}, not a feature-pose database (version check failed)",
            &bytes[0..4]
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::DbFormat(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = u32_at(8) as usize;
    let feature_dim = u32_at(12) as usize;
    let pose_dim = u32_at(16) as usize;
    if pose_dim != POSE_DIM {
        return Err(Error::DbFormat(format!("unsupported pose dim {pose_dim}")));
    }
    let hash = u64::from_le_bytes(bytes[20..28].try_into().unwrap());

    let record_len = POSE_DIM * 8 + feature_dim * 4;
    let body_len = count * record_len;
    if bytes.len() < HEADER_LEN + body_len {
        let record = (bytes.len() - HEADER_LEN) / record_len.max(1);
        return Err(Error::DbTruncated { record });
    }
    if bytes.len() < HEADER_LEN + body_len + 4 {
        return Err(Error::DbFormat("missing trailing checksum".into()));
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + body_len];
    let stored_crc =
        u32::from_le_bytes(bytes[HEADER_LEN + body_len..HEADER_LEN + body_len + 4].try_into().unwrap());
    if crc32fast::hash(body) != stored_crc {
        return Err(Error::DbChecksum);
    }

    let mut features = Vec::with_capacity(count * feature_dim);
    let mut poses = Vec::with_capacity(count);
    for r in 0..count {
        let base = r * record_len;
        let mut pose = [0.0f64; POSE_DIM];
        for (i, v) in pose.iter_mut().enumerate() {
            *v = f64::from_le_bytes(body[base + i * 8..base + (i + 1) * 8].try_into().unwrap());
        }
        poses.push(PoseVec(pose));
        let fbase = base + POSE_DIM * 8;
        for i in 0..feature_dim {
            features.push(f32::from_le_bytes(
                body[fbase + i * 4..fbase + (i + 1) * 4].try_into().unwrap(),
            ));
        }
    }
    Ok(FeaturePoseDatabase {
        feature_dim,
        features,
        poses,
        metadata: DbMetadata { config_hash: hash, snapshot: None },
    })
}
