//! Synthetic indoor scenes with exact ground truth.
//!
//! A scene is a set of axis-aligned box instances packed into a room with a
//! minimum center separation, observed by a ring of inward-looking pinhole
//! cameras. Depth maps are rendered by z-buffered point splatting, captions
//! are templated from the classes visible in each frame, and every point
//! carries an exact offset to its instance centroid (plus an optionally
//! noised copy standing in for a predicted offset field). Coordinates are
//! quantized to f32 at generation time so bundles round-trip bit-identically.
//! Everything is driven by one seed; equal seeds give equal scenes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::instance::{OffsetField, Proposal, ProposalSet};
use crate::math::{centroid, dist, norm, scale, sub, Mat3, Vec3};
use crate::scene::{CameraFrame, ScenePointCloud, IGNORE_LABEL, NONE_INSTANCE};

/// Parameters of the generator. Class lists are split into annotated base
/// classes and unannotated novel classes; novel points are stored with
/// ignored semantic labels and no instance id in the bundle, while the full
/// ground truth is kept separately.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub room_extent: Vec3,
    pub base_names: Vec<String>,
    pub novel_names: Vec<String>,
    pub instances_per_class: usize,
    pub points_per_instance: usize,
    /// Full box extent range per axis, meters.
    pub extent_range: (f64, f64),
    pub min_center_separation: f64,
    pub num_frames: usize,
    pub image_width: usize,
    pub image_height: usize,
    /// Standard deviation of the per-component Gaussian noise applied to the
    /// exact offsets to obtain `noisy_offsets`.
    pub offset_noise_sigma: f64,
    /// A class is mentioned in a frame caption when at least this many of
    /// its points win the z-buffer in that frame.
    pub min_visible_points: usize,
    /// Caption template; `{objects}` is replaced by the visible-class list.
    pub caption_template: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            room_extent: [6.0, 6.0, 3.0],
            base_names: ["chair", "table", "sofa", "bed", "desk", "shelf"]
                .map(String::from)
                .to_vec(),
            novel_names: ["lamp", "plant", "monitor", "basket"]
                .map(String::from)
                .to_vec(),
            instances_per_class: 2,
            points_per_instance: 200,
            extent_range: (0.3, 0.8),
            min_center_separation: 1.0,
            num_frames: 8,
            image_width: 128,
            image_height: 96,
            offset_noise_sigma: 0.01,
            min_visible_points: 50,
            caption_template: "a room with {objects}".to_string(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.room_extent.iter().all(|&e| e > 0.0) {
            return Err(Error::validation("room_extent", "must be positive"));
        }
        if self.base_names.is_empty() && self.novel_names.is_empty() {
            return Err(Error::validation("class names", "no classes"));
        }
        if self.instances_per_class < 1 || self.points_per_instance < 1 {
            return Err(Error::validation(
                "instances_per_class / points_per_instance",
                "must be >= 1",
            ));
        }
        if !(self.extent_range.0 > 0.0 && self.extent_range.0 <= self.extent_range.1) {
            return Err(Error::validation("extent_range", "must be 0 < lo <= hi"));
        }
        if !(self.min_center_separation > 0.0) {
            return Err(Error::validation("min_center_separation", "must be > 0"));
        }
        if self.num_frames < 1 {
            return Err(Error::validation("num_frames", "must be >= 1"));
        }
        if self.image_width < 8 || self.image_height < 8 {
            return Err(Error::validation("image size", "must be at least 8x8"));
        }
        if !(self.offset_noise_sigma >= 0.0) {
            return Err(Error::validation("offset_noise_sigma", "must be >= 0"));
        }
        if !self.caption_template.contains("{objects}") {
            return Err(Error::validation(
                "caption_template",
                "missing the {objects} placeholder",
            ));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.base_names.len() + self.novel_names.len()
    }

    pub fn num_instances(&self) -> usize {
        self.num_classes() * self.instances_per_class
    }

    fn class_name(&self, class: usize) -> &str {
        if class < self.base_names.len() {
            &self.base_names[class]
        } else {
            &self.novel_names[class - self.base_names.len()]
        }
    }
}

/// A generated scene bundle plus the ground truth the bundle withholds.
#[derive(Debug, Clone)]
pub struct SynthScene {
    /// Point cloud as a training consumer sees it: novel points carry
    /// [`IGNORE_LABEL`] semantics and [`NONE_INSTANCE`] instance ids.
    pub cloud: ScenePointCloud,
    pub frames: Vec<CameraFrame>,
    /// Full semantic labels, novel classes included.
    pub gt_sem: Vec<u32>,
    /// Every instance with its class, base and novel alike.
    pub gt_instances: ProposalSet,
    /// Exact offsets from each point to its instance centroid.
    pub gt_offsets: OffsetField,
    /// `gt_offsets` plus Gaussian noise; stands in for predicted offsets.
    pub noisy_offsets: OffsetField,
}

impl SynthScene {
    pub fn num_points(&self) -> usize {
        self.cloud.len()
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Camera-to-world rotation looking from `eye` toward `target`, world z up.
/// Columns are the camera's x (image right), y (image down) and z (forward)
/// axes in world coordinates.
fn look_at(eye: Vec3, target: Vec3) -> Mat3 {
    let forward = {
        let d = sub(target, eye);
        scale(d, 1.0 / norm(d))
    };
    // right = up x forward, normalized; valid while forward is not vertical.
    let up = [0.0, 0.0, 1.0];
    let right_raw = [
        up[1] * forward[2] - up[2] * forward[1],
        up[2] * forward[0] - up[0] * forward[2],
        up[0] * forward[1] - up[1] * forward[0],
    ];
    let right = scale(right_raw, 1.0 / norm(right_raw));
    let down = [
        forward[1] * right[2] - forward[2] * right[1],
        forward[2] * right[0] - forward[0] * right[2],
        forward[0] * right[1] - forward[1] * right[0],
    ];
    // Column-major assembly: rotation maps camera axes to world axes.
    [
        [right[0], down[0], forward[0]],
        [right[1], down[1], forward[1]],
        [right[2], down[2], forward[2]],
    ]
}

const NEAR_CLIP: f64 = 0.05;

/// Z-buffered point splatting. Returns the depth map and, per pixel, the
/// index of the winning point (`usize::MAX` when empty).
fn render_depth(
    points: &[Vec3],
    rotation: &Mat3,
    translation: Vec3,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
) -> (Vec<f32>, Vec<usize>) {
    let mut depth = vec![0.0f32; width * height];
    let mut winner = vec![usize::MAX; width * height];
    for (i, &p) in points.iter().enumerate() {
        let cam = crate::geometry::world_to_camera(rotation, translation, p);
        if cam[2] <= NEAR_CLIP {
            continue;
        }
        let u = (cam[0] / cam[2] * fx + cx).round();
        let v = (cam[1] / cam[2] * fy + cy).round();
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            continue;
        }
        let pixel = v as usize * width + u as usize;
        let z = cam[2] as f32;
        if depth[pixel] == 0.0 || z < depth[pixel] {
            depth[pixel] = z;
            winner[pixel] = i;
        }
    }
    (depth, winner)
}

fn caption_for(names: &[&str], template: &str) -> String {
    let list = match names.len() {
        0 => "nothing in view".to_string(),
        1 => format!("a {}", names[0]),
        _ => {
            let head = names[..names.len() - 1]
                .iter()
                .map(|n| format!("a {n}"))
                .collect::<Vec<_>>()
                .join(", ");
            format!("{head} and a {}", names[names.len() - 1])
        }
    };
    template.replace("{objects}", &list)
}

/// Generate a scene. Fails when instance centers cannot be packed at the
/// requested separation within 1000 rejection-sampling attempts per instance.
pub fn gen_scene(spec: &SynthSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let base_count = spec.base_names.len();

    // Pack instance centers by rejection sampling. Centers stay clear of the
    // walls by half the maximum box extent.
    let margin = spec.extent_range.1 * 0.5;
    let mut centers: Vec<Vec3> = Vec::with_capacity(spec.num_instances());
    for instance in 0..spec.num_instances() {
        let mut placed = false;
        for _ in 0..1000 {
            let candidate = [
                rng.gen_range(margin..spec.room_extent[0] - margin),
                rng.gen_range(margin..spec.room_extent[1] - margin),
                rng.gen_range(margin..spec.room_extent[2] - margin),
            ];
            if centers
                .iter()
                .all(|&c| dist(c, candidate) >= spec.min_center_separation)
            {
                centers.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::validation(
                "min_center_separation",
                format!(
                    "could not place instance {instance} of {} after 1000 attempts",
                    spec.num_instances()
                ),
            ));
        }
    }

    // Sample box points, quantized to f32 so the on-disk bundle reproduces
    // the in-memory coordinates exactly.
    let n = spec.num_instances() * spec.points_per_instance;
    let mut points: Vec<Vec3> = Vec::with_capacity(n);
    let mut gt_sem: Vec<u32> = Vec::with_capacity(n);
    let mut gt_inst: Vec<u32> = Vec::with_capacity(n);
    let mut proposals: Vec<Proposal> = Vec::with_capacity(spec.num_instances());
    for (instance, center) in centers.iter().enumerate() {
        let class = instance / spec.instances_per_class;
        let half = [
            rng.gen_range(spec.extent_range.0..=spec.extent_range.1) * 0.5,
            rng.gen_range(spec.extent_range.0..=spec.extent_range.1) * 0.5,
            rng.gen_range(spec.extent_range.0..=spec.extent_range.1) * 0.5,
        ];
        let start = points.len();
        for _ in 0..spec.points_per_instance {
            points.push([
                quantize(center[0] + rng.gen_range(-half[0]..half[0])),
                quantize(center[1] + rng.gen_range(-half[1]..half[1])),
                quantize(center[2] + rng.gen_range(-half[2]..half[2])),
            ]);
            gt_sem.push(class as u32);
            gt_inst.push(instance as u32);
        }
        proposals.push(Proposal {
            members: (start..points.len()).collect(),
            class: Some(class),
            confidence: None,
        });
    }
    let gt_instances = ProposalSet::new(n, proposals)?;

    // Exact offsets to the instance centroid, then a noised copy.
    let mut gt_offsets = vec![[0.0; 3]; n];
    for proposal in gt_instances.proposals() {
        let c = centroid(&points, &proposal.members);
        for &i in &proposal.members {
            gt_offsets[i] = sub(c, points[i]);
        }
    }
    let noisy: Vec<Vec3> = if spec.offset_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.offset_noise_sigma)
            .map_err(|e| Error::validation("offset_noise_sigma", e.to_string()))?;
        gt_offsets
            .iter()
            .map(|o| {
                [
                    o[0] + normal.sample(&mut rng),
                    o[1] + normal.sample(&mut rng),
                    o[2] + normal.sample(&mut rng),
                ]
            })
            .collect()
    } else {
        gt_offsets.clone()
    };

    // Cameras on a ring, looking inward and slightly down.
    let room_center = scale(spec.room_extent, 0.5);
    let ring_radius = 0.4 * spec.room_extent[0].min(spec.room_extent[1]);
    let eye_height = 0.8 * spec.room_extent[2];
    let target = [room_center[0], room_center[1], 0.4 * spec.room_extent[2]];
    let fx = 0.866 * spec.image_width as f64;
    let fy = fx;
    let cx = spec.image_width as f64 * 0.5 - 0.5;
    let cy = spec.image_height as f64 * 0.5 - 0.5;

    let mut frames = Vec::with_capacity(spec.num_frames);
    for k in 0..spec.num_frames {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / spec.num_frames as f64;
        let eye = [
            room_center[0] + ring_radius * angle.cos(),
            room_center[1] + ring_radius * angle.sin(),
            eye_height,
        ];
        let rotation = look_at(eye, target);
        let (depth, winners) = render_depth(
            &points,
            &rotation,
            eye,
            fx,
            fy,
            cx,
            cy,
            spec.image_width,
            spec.image_height,
        );

        let mut visible_per_class = vec![0usize; spec.num_classes()];
        for &w in &winners {
            if w != usize::MAX {
                visible_per_class[gt_sem[w] as usize] += 1;
            }
        }
        let names: Vec<&str> = (0..spec.num_classes())
            .filter(|&c| visible_per_class[c] >= spec.min_visible_points)
            .map(|c| spec.class_name(c))
            .collect();
        let caption = caption_for(&names, &spec.caption_template);

        frames.push(CameraFrame::new(
            k as u32,
            spec.image_width,
            spec.image_height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            eye,
            depth,
            caption,
        )?);
    }

    // The bundle view of the labels hides everything about novel classes.
    let sem_labels: Vec<u32> = gt_sem
        .iter()
        .map(|&c| {
            if (c as usize) < base_count {
                c
            } else {
                IGNORE_LABEL
            }
        })
        .collect();
    let inst_labels: Vec<u32> = gt_sem
        .iter()
        .zip(&gt_inst)
        .map(|(&c, &i)| {
            if (c as usize) < base_count {
                i
            } else {
                NONE_INSTANCE
            }
        })
        .collect();
    let cloud = ScenePointCloud::new(points, None, Some(sem_labels), Some(inst_labels))?;

    Ok(SynthScene {
        cloud,
        frames,
        gt_sem,
        gt_instances,
        gt_offsets: OffsetField::new(gt_offsets)?,
        noisy_offsets: OffsetField::new(noisy)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::add;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            seed,
            instances_per_class: 1,
            points_per_instance: 120,
            base_names: vec!["chair".into(), "table".into()],
            novel_names: vec!["lamp".into()],
            ..SynthSpec::default()
        }
    }

    #[test]
    fn same_seed_reproduces_the_scene() {
        let a = gen_scene(&small_spec(7)).unwrap();
        let b = gen_scene(&small_spec(7)).unwrap();
        assert_eq!(a.cloud.points(), b.cloud.points());
        assert_eq!(a.gt_sem, b.gt_sem);
        assert_eq!(a.noisy_offsets, b.noisy_offsets);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.depth(), fb.depth());
            assert_eq!(fa.caption(), fb.caption());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_scene(&small_spec(1)).unwrap();
        let b = gen_scene(&small_spec(2)).unwrap();
        assert_ne!(a.cloud.points(), b.cloud.points());
    }

    #[test]
    fn coordinates_are_f32_exact() {
        let scene = gen_scene(&small_spec(3)).unwrap();
        for p in scene.cloud.points() {
            for &c in p {
                assert_eq!(c, c as f32 as f64);
            }
        }
    }

    #[test]
    fn ground_truth_is_consistent() {
        let spec = small_spec(11);
        let scene = gen_scene(&spec).unwrap();
        let n = scene.num_points();
        assert_eq!(n, spec.num_instances() * spec.points_per_instance);
        assert_eq!(scene.gt_instances.len(), spec.num_instances());

        // Offsets land on the member centroid.
        for proposal in scene.gt_instances.proposals() {
            let c = centroid(scene.cloud.points(), &proposal.members);
            for &i in &proposal.members {
                let reached = add(scene.cloud.points()[i], scene.gt_offsets.as_slice()[i]);
                assert!(dist(reached, c) < 1e-12);
            }
        }

        // Novel points are hidden in the bundle labels but present in gt.
        let base_count = spec.base_names.len() as u32;
        let sem = scene.cloud.sem_labels().unwrap();
        let inst = scene.cloud.inst_labels().unwrap();
        for i in 0..n {
            if scene.gt_sem[i] < base_count {
                assert_eq!(sem[i], scene.gt_sem[i]);
                assert_ne!(inst[i], NONE_INSTANCE);
                assert!(!scene.cloud.unlabeled_mask()[i]);
            } else {
                assert_eq!(sem[i], IGNORE_LABEL);
                assert_eq!(inst[i], NONE_INSTANCE);
                assert!(scene.cloud.unlabeled_mask()[i]);
            }
        }
    }

    #[test]
    fn centers_respect_separation() {
        let spec = SynthSpec::default();
        let scene = gen_scene(&spec).unwrap();
        let centers: Vec<Vec3> = scene
            .gt_instances
            .proposals()
            .iter()
            .map(|p| centroid(scene.cloud.points(), &p.members))
            .collect();
        for i in 0..centers.len() {
            for j in (i + 1)..centers.len() {
                // Centroids sit close to the sampled centers, so allow the
                // box half-extent of slack on each side.
                assert!(
                    dist(centers[i], centers[j])
                        > spec.min_center_separation - spec.extent_range.1
                );
            }
        }
    }

    #[test]
    fn impossible_packing_is_reported() {
        let spec = SynthSpec {
            min_center_separation: 50.0, // cannot fit twice in a 6m room
            ..SynthSpec::default()
        };
        let err = gen_scene(&spec).unwrap_err();
        assert!(err.to_string().contains("min_center_separation"));
    }

    #[test]
    fn frames_see_the_scene_and_mention_classes() {
        let scene = gen_scene(&SynthSpec::default()).unwrap();
        let mut any_caption_with_object = false;
        for frame in &scene.frames {
            let nonzero = frame.depth().iter().filter(|&&d| d > 0.0).count();
            assert!(nonzero > 0, "frame {} renders nothing", frame.id());
            if frame.caption().contains("a ") {
                any_caption_with_object = true;
            }
        }
        assert!(any_caption_with_object);
    }

    #[test]
    fn rendered_depth_backprojects_near_scene_points() {
        // Every rendered pixel, back-projected, must land within a voxel
        // diagonal plus the pixel-rounding bound of some scene point.
        let scene = gen_scene(&small_spec(5)).unwrap();
        let frame = &scene.frames[0];
        let (fx, _, _, _) = frame.intrinsics();
        let pts = crate::geometry::backproject(frame, 1);
        assert!(!pts.is_empty());
        let max_depth = frame
            .depth()
            .iter()
            .copied()
            .fold(0.0f32, f32::max) as f64;
        // Half-pixel error in u and v at the farthest depth, plus f32 depth
        // quantization slack.
        let bound = (0.5 * max_depth / fx) * 2.0_f64.sqrt() + 1e-3;
        for &q in pts.iter().take(50) {
            let nearest = scene
                .cloud
                .points()
                .iter()
                .map(|&p| dist(p, q))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= bound, "nearest {nearest} > bound {bound}");
        }
    }
}
