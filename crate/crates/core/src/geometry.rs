//! Back-projection, voxelization and frustum-overlap queries.
//!
//! Frustum overlap is the geometric core of view-level association: a scene
//! point belongs to a frame when the center of its voxel lies within
//! `nn_radius` of the center of some voxel occupied by the frame's
//! back-projected depth map. The implementation dilates the query voxel set
//! by the integer offsets that can possibly satisfy the radius predicate and
//! then applies the exact center-distance test per candidate pair, so the
//! result matches a brute-force scan over all voxel-center pairs exactly.

use std::collections::{BTreeSet, HashSet};

use crate::math::{add, dist, mat_t_vec, mat_vec, sub, Mat3, Vec3};
use crate::scene::{CameraFrame, PipelineConfig, ScenePointCloud};

/// Integer voxel coordinates of a point: componentwise `floor(c / voxel_size)`.
pub fn voxel_key(p: Vec3, voxel_size: f64) -> [i64; 3] {
    [
        (p[0] / voxel_size).floor() as i64,
        (p[1] / voxel_size).floor() as i64,
        (p[2] / voxel_size).floor() as i64,
    ]
}

/// World coordinates of the center of a voxel.
pub fn voxel_center(key: [i64; 3], voxel_size: f64) -> Vec3 {
    [
        (key[0] as f64 + 0.5) * voxel_size,
        (key[1] as f64 + 0.5) * voxel_size,
        (key[2] as f64 + 0.5) * voxel_size,
    ]
}

/// Map a world point into camera coordinates given a camera-to-world pose.
pub fn world_to_camera(rotation: &Mat3, translation: Vec3, p: Vec3) -> Vec3 {
    mat_t_vec(rotation, sub(p, translation))
}

/// Map a camera point into world coordinates given a camera-to-world pose.
pub fn camera_to_world(rotation: &Mat3, translation: Vec3, p: Vec3) -> Vec3 {
    add(mat_vec(rotation, p), translation)
}

/// The set of voxels occupied by a point set, with deterministic iteration
/// order (lexicographic by key).
#[derive(Debug, Clone)]
pub struct VoxelSet {
    voxel_size: f64,
    keys: BTreeSet<[i64; 3]>,
}

impl VoxelSet {
    pub fn from_points(points: &[Vec3], voxel_size: f64) -> Self {
        let keys = points.iter().map(|&p| voxel_key(p, voxel_size)).collect();
        Self { voxel_size, keys }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: [i64; 3]) -> bool {
        self.keys.contains(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = [i64; 3]> + '_ {
        self.keys.iter().copied()
    }
}

/// Back-project a frame's depth map to world-space points.
///
/// Pixels are visited row-major with the given stride; zero-depth pixels
/// (no measurement) are skipped. For pixel `(u, v)` with depth `d` the camera
/// point is `((u - cx) d / fx, (v - cy) d / fy, d)`, then mapped through the
/// camera-to-world pose.
pub fn backproject(frame: &CameraFrame, stride: usize) -> Vec<Vec3> {
    assert!(stride >= 1, "stride must be >= 1");
    let (fx, fy, cx, cy) = frame.intrinsics();
    let mut out = Vec::new();
    for v in (0..frame.height()).step_by(stride) {
        for u in (0..frame.width()).step_by(stride) {
            let d = frame.depth_at(u, v) as f64;
            if d == 0.0 {
                continue;
            }
            let cam = [(u as f64 - cx) * d / fx, (v as f64 - cy) * d / fy, d];
            out.push(camera_to_world(frame.rotation(), frame.translation(), cam));
        }
    }
    out
}

/// Integer offsets `o` such that two voxels whose keys differ by `o` can have
/// centers within `radius` of each other. Slightly conservative: candidates
/// on the boundary are admitted and decided by the exact per-pair test.
fn candidate_offsets(voxel_size: f64, radius: f64) -> Vec<[i64; 3]> {
    let slack = 1e-9 * radius.max(voxel_size);
    let reach = radius / voxel_size + slack / voxel_size;
    let k = reach.floor() as i64 + 1;
    let mut offsets = Vec::new();
    for dx in -k..=k {
        for dy in -k..=k {
            for dz in -k..=k {
                let norm = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                if norm * voxel_size <= radius + slack {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
    }
    offsets
}

/// Indices of scene points whose voxel center lies within `nn_radius` of the
/// center of any voxel occupied by `queries`. Result is sorted ascending.
///
/// Distances are evaluated on the actual voxel centers, so the output is a
/// pure function of the two voxel sets: point order, duplicate points and the
/// scan strategy cannot change it.
pub fn overlap_with_queries(
    scene: &ScenePointCloud,
    queries: &[Vec3],
    voxel_size: f64,
    nn_radius: f64,
) -> Vec<usize> {
    assert!(voxel_size > 0.0 && nn_radius > 0.0);
    let query_voxels = VoxelSet::from_points(queries, voxel_size);
    let offsets = candidate_offsets(voxel_size, nn_radius);

    let mut reachable: HashSet<[i64; 3]> = HashSet::new();
    for q in query_voxels.keys() {
        let qc = voxel_center(q, voxel_size);
        for o in &offsets {
            let s = [q[0] + o[0], q[1] + o[1], q[2] + o[2]];
            if dist(voxel_center(s, voxel_size), qc) <= nn_radius {
                reachable.insert(s);
            }
        }
    }

    scene
        .points()
        .iter()
        .enumerate()
        .filter(|&(_, &p)| reachable.contains(&voxel_key(p, voxel_size)))
        .map(|(i, _)| i)
        .collect()
}

/// Indices of scene points covered by a frame: back-project the depth map
/// with `config.stride` and evaluate [`overlap_with_queries`] at
/// `config.voxel_size` / `config.nn_radius`.
pub fn frustum_overlap(
    scene: &ScenePointCloud,
    frame: &CameraFrame,
    config: &PipelineConfig,
) -> Vec<usize> {
    let queries = backproject(frame, config.stride);
    overlap_with_queries(scene, &queries, config.voxel_size, config.nn_radius)
}
