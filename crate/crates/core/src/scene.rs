//! Canonical in-memory and on-disk representation of scenes, frames,
//! captions, vocabularies and pipeline configuration.
//!
//! A scene bundle on disk is a directory holding `manifest.json` plus raw
//! little-endian binary arrays (`points.f32`, optional `colors.f32`,
//! `sem_labels.u32`, `inst_labels.u32`, one `depth_<id>.f32` per frame).
//! Caption records are stored as line-delimited JSON. Loading validates every
//! invariant and aborts with the offending field named.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{orthonormality_error, Mat3, Vec3};

/// Sentinel for "no semantic annotation": the maximum representable class id.
pub const IGNORE_LABEL: u32 = u32::MAX;
/// Sentinel for "no instance id": the maximum representable instance id.
pub const NONE_INSTANCE: u32 = u32::MAX;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Per-point geometry with optional colors and base-class annotations.
///
/// Immutable after construction; all invariants are checked by [`ScenePointCloud::new`].
#[derive(Debug, Clone)]
pub struct ScenePointCloud {
    points: Vec<Vec3>,
    colors: Option<Vec<[f32; 3]>>,
    sem_labels: Option<Vec<u32>>,
    inst_labels: Option<Vec<u32>>,
    unlabeled_mask: Vec<bool>,
}

impl ScenePointCloud {
    /// Build a validated point cloud. The unlabeled mask is derived from the
    /// semantic labels: a point is unlabeled when no labels are present or
    /// its label is [`IGNORE_LABEL`].
    pub fn new(
        points: Vec<Vec3>,
        colors: Option<Vec<[f32; 3]>>,
        sem_labels: Option<Vec<u32>>,
        inst_labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = points.len();
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::validation(
                    "points",
                    format!("non-finite coordinate at point {i}"),
                ));
            }
        }
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::length_mismatch("colors", n, c.len()));
            }
            for (i, rgb) in c.iter().enumerate() {
                if !rgb.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
                    return Err(Error::validation(
                        "colors",
                        format!("component out of [0,1] at point {i}"),
                    ));
                }
            }
        }
        if let Some(l) = &sem_labels {
            if l.len() != n {
                return Err(Error::length_mismatch("sem_labels", n, l.len()));
            }
        }
        if let Some(l) = &inst_labels {
            if l.len() != n {
                return Err(Error::length_mismatch("inst_labels", n, l.len()));
            }
        }
        let unlabeled_mask = match &sem_labels {
            Some(l) => l.iter().map(|&c| c == IGNORE_LABEL).collect(),
            None => vec![true; n],
        };
        Ok(Self {
            points,
            colors,
            sem_labels,
            inst_labels,
            unlabeled_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn colors(&self) -> Option<&[[f32; 3]]> {
        self.colors.as_deref()
    }

    pub fn sem_labels(&self) -> Option<&[u32]> {
        self.sem_labels.as_deref()
    }

    pub fn inst_labels(&self) -> Option<&[u32]> {
        self.inst_labels.as_deref()
    }

    /// True where the point carries no base-class annotation.
    pub fn unlabeled_mask(&self) -> &[bool] {
        &self.unlabeled_mask
    }

    /// Indices of all points, in order. The scene-level caption covers these.
    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// A posed pinhole camera with its depth map and generated caption.
///
/// `rotation` and `translation` map camera coordinates to world coordinates.
/// Depth value 0 means "no measurement" and is skipped by back-projection.
#[derive(Debug, Clone)]
pub struct CameraFrame {
    id: u32,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rotation: Mat3,
    translation: Vec3,
    depth: Vec<f32>,
    caption: String,
}

impl CameraFrame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u32,
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: Vec3,
        depth: Vec<f32>,
        caption: String,
    ) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::validation(
                format!("frame {id} intrinsics"),
                format!("fx and fy must be positive, got fx={fx}, fy={fy}"),
            ));
        }
        if !(fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::validation(
                format!("frame {id} intrinsics"),
                "non-finite intrinsic",
            ));
        }
        let ortho = orthonormality_error(&rotation);
        if !(ortho < 1e-6) {
            return Err(Error::validation(
                format!("frame {id} rotation"),
                format!("not orthonormal (deviation {ortho:.2e})"),
            ));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::validation(
                format!("frame {id} translation"),
                "non-finite component",
            ));
        }
        if depth.len() != width * height {
            return Err(Error::length_mismatch(
                format!("frame {id} depth"),
                width * height,
                depth.len(),
            ));
        }
        for (i, &d) in depth.iter().enumerate() {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::validation(
                    format!("frame {id} depth"),
                    format!("value {d} at pixel {i} (must be finite and >= 0)"),
                ));
            }
        }
        Ok(Self {
            id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            depth,
            caption,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intrinsics(&self) -> (f64, f64, f64, f64) {
        (self.fx, self.fy, self.cx, self.cy)
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// Row-major depth map, `height * width` values in meters.
    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[v * self.width + u]
    }

    pub fn caption(&self) -> &str {
        &self.caption
    }
}

/// Association granularity of a caption record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionLevel {
    Scene,
    View,
    Entity,
}

impl std::fmt::Display for CaptionLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaptionLevel::Scene => write!(f, "scene"),
            CaptionLevel::View => write!(f, "view"),
            CaptionLevel::Entity => write!(f, "entity"),
        }
    }
}

/// A caption string together with the scene point indices it supervises.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub level: CaptionLevel,
    pub text: String,
    /// Strictly increasing indices into the owning scene's points.
    pub point_indices: Vec<usize>,
    pub source_frames: Vec<u32>,
}

impl CaptionRecord {
    pub fn validate(&self, scene_len: Option<usize>) -> Result<()> {
        if self.text.is_empty() {
            return Err(Error::validation("text", "caption text is empty"));
        }
        for w in self.point_indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::validation(
                    "point_indices",
                    format!("not strictly increasing at {} >= {}", w[0], w[1]),
                ));
            }
        }
        if let (Some(n), Some(&last)) = (scene_len, self.point_indices.last()) {
            if last >= n {
                return Err(Error::validation(
                    "point_indices",
                    format!("index {last} out of bounds for scene of {n} points"),
                ));
            }
        }
        Ok(())
    }
}

/// Class names for base and novel categories plus their unit-norm text
/// embeddings, base classes first.
#[derive(Debug, Clone)]
pub struct CategoryVocabulary {
    base_names: Vec<String>,
    novel_names: Vec<String>,
    embeddings: Vec<Vec<f64>>,
}

impl CategoryVocabulary {
    pub fn new(
        base_names: Vec<String>,
        novel_names: Vec<String>,
        embeddings: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for name in base_names.iter().chain(novel_names.iter()) {
            if !seen.insert(name.as_str()) {
                return Err(Error::validation(
                    "names",
                    format!("duplicate class name `{name}`"),
                ));
            }
        }
        let k = base_names.len() + novel_names.len();
        if embeddings.len() != k {
            return Err(Error::length_mismatch("embeddings", k, embeddings.len()));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        for (i, e) in embeddings.iter().enumerate() {
            if e.len() != dim {
                return Err(Error::length_mismatch(
                    format!("embeddings[{i}]"),
                    dim,
                    e.len(),
                ));
            }
            let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::validation(
                    format!("embeddings[{i}]"),
                    format!("L2 norm {norm} is not 1 within 1e-6"),
                ));
            }
        }
        Ok(Self {
            base_names,
            novel_names,
            embeddings,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.base_names.len() + self.novel_names.len()
    }

    pub fn base_count(&self) -> usize {
        self.base_names.len()
    }

    pub fn name(&self, class: usize) -> &str {
        if class < self.base_names.len() {
            &self.base_names[class]
        } else {
            &self.novel_names[class - self.base_names.len()]
        }
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn base_indices(&self) -> Vec<usize> {
        (0..self.base_count()).collect()
    }

    pub fn novel_indices(&self) -> Vec<usize> {
        (self.base_count()..self.num_classes()).collect()
    }
}

/// Tunables shared across the pipeline. All distances are meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Voxel edge length for overlap computation.
    pub voxel_size: f64,
    /// Radius for the voxel-center neighbor search in frustum overlap.
    pub nn_radius: f64,
    /// Minimal entity point count (exclusive bound).
    pub gamma: usize,
    /// Maximal entity point ratio against the smaller parent view.
    pub delta: f64,
    /// Scene-level caption loss weight.
    pub alpha1: f64,
    /// View-level caption loss weight.
    pub alpha2: f64,
    /// Entity-level caption loss weight.
    pub alpha3: f64,
    /// Proposal confidence threshold for pseudo-label refinement.
    pub eta: f64,
    /// Connected-component edge radius for grouping.
    pub grouping_radius: f64,
    /// Semantic score threshold for soft base-class grouping.
    pub tau_soft: f64,
    /// Minimum member count for a proposal to survive.
    pub min_proposal_points: usize,
    /// Pixel sampling stride for back-projection.
    pub stride: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.02,
            nn_radius: 0.04,
            gamma: 100,
            delta: 0.3,
            alpha1: 0.0,
            alpha2: 0.05,
            alpha3: 0.05,
            eta: 0.5,
            grouping_radius: 0.04,
            tau_soft: 0.2,
            min_proposal_points: 50,
            stride: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) {
            return Err(Error::validation("voxel_size", "must be > 0"));
        }
        if !(self.nn_radius > 0.0) {
            return Err(Error::validation("nn_radius", "must be > 0"));
        }
        if self.gamma < 1 {
            return Err(Error::validation("gamma", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::validation("delta", "must be in (0, 1]"));
        }
        for (name, w) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
        ] {
            if !(w >= 0.0) {
                return Err(Error::validation(name, "must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::validation("eta", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.tau_soft) {
            return Err(Error::validation("tau_soft", "must be in [0, 1]"));
        }
        if !(self.grouping_radius > 0.0) {
            return Err(Error::validation("grouping_radius", "must be > 0"));
        }
        if self.stride < 1 {
            return Err(Error::validation("stride", "must be >= 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Raw binary arrays
// ---------------------------------------------------------------------------

/// Read a little-endian f32 array file.
pub fn read_f32_array(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() % 4 != 0 {
        return Err(Error::validation(
            path.display().to_string(),
            format!("file size {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Read a little-endian u32 array file.
pub fn read_u32_array(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() % 4 != 0 {
        return Err(Error::validation(
            path.display().to_string(),
            format!("file size {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_f32_array(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_u32_array(path: &Path, values: &[u32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Scene bundle manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ArrayRef {
    file: String,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameMeta {
    id: u32,
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major camera-to-world rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    depth: ArrayRef,
    caption: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    point_count: usize,
    points: ArrayRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colors: Option<ArrayRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sem_labels: Option<ArrayRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inst_labels: Option<ArrayRef>,
    frames: Vec<FrameMeta>,
}

fn check_dtype(field: &str, array: &ArrayRef, expected: &str) -> Result<()> {
    if array.dtype != expected {
        return Err(Error::validation(
            format!("{field}.dtype"),
            format!("expected `{expected}`, got `{}`", array.dtype),
        ));
    }
    Ok(())
}

/// Load and validate a scene bundle. Frames come back sorted by frame id.
pub fn load_scene(bundle_dir: &Path) -> Result<(ScenePointCloud, Vec<CameraFrame>)> {
    let manifest_path = bundle_dir.join("manifest.json");
    let manifest_bytes = fs::read(&manifest_path).map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|source| Error::Json {
            path: manifest_path,
            source,
        })?;

    let n = manifest.point_count;
    check_dtype("points", &manifest.points, "f32")?;
    let raw_points = read_f32_array(&bundle_dir.join(&manifest.points.file))?;
    if raw_points.len() != 3 * n {
        return Err(Error::length_mismatch("points", 3 * n, raw_points.len()));
    }
    let points: Vec<Vec3> = raw_points
        .chunks_exact(3)
        .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
        .collect();

    let colors = match &manifest.colors {
        Some(array) => {
            check_dtype("colors", array, "f32")?;
            let raw = read_f32_array(&bundle_dir.join(&array.file))?;
            if raw.len() != 3 * n {
                return Err(Error::length_mismatch("colors", 3 * n, raw.len()));
            }
            Some(raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        }
        None => None,
    };

    let read_labels = |field: &str, array: &Option<ArrayRef>| -> Result<Option<Vec<u32>>> {
        match array {
            Some(array) => {
                check_dtype(field, array, "u32")?;
                let raw = read_u32_array(&bundle_dir.join(&array.file))?;
                if raw.len() != n {
                    return Err(Error::length_mismatch(field, n, raw.len()));
                }
                Ok(Some(raw))
            }
            None => Ok(None),
        }
    };
    let sem_labels = read_labels("sem_labels", &manifest.sem_labels)?;
    let inst_labels = read_labels("inst_labels", &manifest.inst_labels)?;

    let cloud = ScenePointCloud::new(points, colors, sem_labels, inst_labels)?;

    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut seen_ids = BTreeSet::new();
    for meta in &manifest.frames {
        if !seen_ids.insert(meta.id) {
            return Err(Error::validation(
                "frames",
                format!("duplicate frame id {}", meta.id),
            ));
        }
        check_dtype(&format!("frame {} depth", meta.id), &meta.depth, "f32")?;
        let depth = read_f32_array(&bundle_dir.join(&meta.depth.file))?;
        frames.push(CameraFrame::new(
            meta.id,
            meta.width,
            meta.height,
            meta.fx,
            meta.fy,
            meta.cx,
            meta.cy,
            meta.rotation,
            meta.translation,
            depth,
            meta.caption.clone(),
        )?);
    }
    frames.sort_by_key(CameraFrame::id);

    Ok((cloud, frames))
}

/// Write a scene bundle. Coordinates are stored as little-endian f32, so a
/// bundle round-trips bit-identically when coordinates are f32-representable
/// (always true for loaded or synthesized scenes).
pub fn save_scene(bundle_dir: &Path, cloud: &ScenePointCloud, frames: &[CameraFrame]) -> Result<()> {
    fs::create_dir_all(bundle_dir).map_err(|source| Error::Io {
        path: bundle_dir.to_path_buf(),
        source,
    })?;

    let mut raw_points = Vec::with_capacity(cloud.len() * 3);
    for p in cloud.points() {
        raw_points.extend(p.iter().map(|&c| c as f32));
    }
    write_f32_array(&bundle_dir.join("points.f32"), &raw_points)?;

    let colors = match cloud.colors() {
        Some(colors) => {
            let flat: Vec<f32> = colors.iter().flatten().copied().collect();
            write_f32_array(&bundle_dir.join("colors.f32"), &flat)?;
            Some(ArrayRef {
                file: "colors.f32".into(),
                dtype: "f32".into(),
            })
        }
        None => None,
    };
    let sem_labels = match cloud.sem_labels() {
        Some(labels) => {
            write_u32_array(&bundle_dir.join("sem_labels.u32"), labels)?;
            Some(ArrayRef {
                file: "sem_labels.u32".into(),
                dtype: "u32".into(),
            })
        }
        None => None,
    };
    let inst_labels = match cloud.inst_labels() {
        Some(labels) => {
            write_u32_array(&bundle_dir.join("inst_labels.u32"), labels)?;
            Some(ArrayRef {
                file: "inst_labels.u32".into(),
                dtype: "u32".into(),
            })
        }
        None => None,
    };

    let mut metas = Vec::with_capacity(frames.len());
    for frame in frames {
        let depth_file = format!("depth_{}.f32", frame.id());
        write_f32_array(&bundle_dir.join(&depth_file), frame.depth())?;
        let (fx, fy, cx, cy) = frame.intrinsics();
        metas.push(FrameMeta {
            id: frame.id(),
            width: frame.width(),
            height: frame.height(),
            fx,
            fy,
            cx,
            cy,
            rotation: *frame.rotation(),
            translation: frame.translation(),
            depth: ArrayRef {
                file: depth_file,
                dtype: "f32".into(),
            },
            caption: frame.caption().to_string(),
        });
    }
    metas.sort_by_key(|m| m.id);

    let manifest = Manifest {
        point_count: cloud.len(),
        points: ArrayRef {
            file: "points.f32".into(),
            dtype: "f32".into(),
        },
        colors,
        sem_labels,
        inst_labels,
        frames: metas,
    };
    let manifest_path = bundle_dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialization");
    fs::write(&manifest_path, json).map_err(|source| Error::Io {
        path: manifest_path,
        source,
    })
}

// ---------------------------------------------------------------------------
// Caption record files
// ---------------------------------------------------------------------------

/// Write caption records as line-delimited JSON. Every record is validated
/// before anything is written.
pub fn save_caption_records(records: &[CaptionRecord], path: &Path) -> Result<()> {
    for record in records {
        record.validate(None)?;
    }
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record).expect("record serialization");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load caption records from a line-delimited JSON file.
pub fn load_caption_records(path: &Path) -> Result<Vec<CaptionRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record: CaptionRecord =
            serde_json::from_str(line).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
        record.validate(None)?;
        records.push(record);
    }
    Ok(records)
}

/// Convenience that returns the path of the manifest inside a bundle dir.
pub fn manifest_path(bundle_dir: &Path) -> PathBuf {
    bundle_dir.join("manifest.json")
}
