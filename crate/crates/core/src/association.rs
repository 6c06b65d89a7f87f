//! Hierarchical point-caption association.
//!
//! Captions supervise points at three granularities: one scene-level record
//! covering every point, one view-level record per frame covering the points
//! its frustum sees, and entity-level records carved out of adjacent view
//! pairs by set differences and intersection. Entity candidates are filtered
//! by a minimum point count and a maximum size ratio against the smaller
//! parent view before they become records.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::frustum_overlap;
use crate::scene::{CameraFrame, CaptionLevel, CaptionRecord, PipelineConfig, ScenePointCloud};

/// Filler words removed from captions before entity extraction.
pub const STOPWORDS: [&str; 13] = [
    "a", "an", "the", "to", "of", "and", "with", "in", "on", "is", "are", "there", "next",
];

/// Minimum Jaccard similarity between consecutive views' point sets for the
/// pair to be considered adjacent.
pub const MIN_VIEW_JACCARD: f64 = 0.1;

/// An entity record before filtering, carrying the sizes of the two parent
/// view point sets the size-ratio filter needs.
#[derive(Debug, Clone)]
pub struct EntityCandidate {
    pub record: CaptionRecord,
    pub parent_sizes: (usize, usize),
}

/// Per-level corpus statistics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LevelStats {
    pub count: usize,
    pub mean_caption_words: f64,
    pub mean_point_count: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AssociationStats {
    pub scene: LevelStats,
    pub view: LevelStats,
    pub entity: LevelStats,
}

fn normalize_tokens(caption: &str) -> Vec<String> {
    let lowered = caption.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Extract the set of entity words from a caption.
///
/// The caption is lowercased, punctuation is dropped, multi-word category
/// names from `lexicon` are fused into single underscore-joined tokens
/// (longest match wins), and stopwords are removed. No stemming is applied.
pub fn extract_entities(caption: &str, lexicon: &[String]) -> BTreeSet<String> {
    let tokens = normalize_tokens(caption);

    // Longest-match first so "coffee table" beats "coffee".
    let mut entries: Vec<Vec<String>> = lexicon
        .iter()
        .map(|e| normalize_tokens(e))
        .filter(|e| !e.is_empty())
        .collect();
    entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));

    let mut fused: Vec<String> = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let hit = entries
            .iter()
            .find(|entry| tokens[i..].starts_with(entry.as_slice()));
        match hit {
            Some(entry) => {
                fused.push(entry.join("_"));
                i += entry.len();
            }
            None => {
                fused.push(tokens[i].clone());
                i += 1;
            }
        }
    }

    fused
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Join a word set into deterministic caption text: ascending, space-joined.
fn join_words(words: &BTreeSet<String>) -> String {
    words.iter().cloned().collect::<Vec<_>>().join(" ")
}

/// The scene-level record: all points, captioned by the sorted union of
/// entity words across every frame caption.
pub fn associate_scene(
    scene: &ScenePointCloud,
    frames: &[CameraFrame],
    lexicon: &[String],
) -> CaptionRecord {
    let mut words = BTreeSet::new();
    for frame in frames {
        words.extend(extract_entities(frame.caption(), lexicon));
    }
    CaptionRecord {
        level: CaptionLevel::Scene,
        text: join_words(&words),
        point_indices: scene.all_indices(),
        source_frames: frames.iter().map(CameraFrame::id).collect(),
    }
}

/// One view-level record per frame whose frustum covers at least one point,
/// in frame order. The caption is the frame caption verbatim.
pub fn associate_view(
    scene: &ScenePointCloud,
    frames: &[CameraFrame],
    config: &PipelineConfig,
) -> Vec<CaptionRecord> {
    frames
        .par_iter()
        .map(|frame| {
            let indices = frustum_overlap(scene, frame, config);
            CaptionRecord {
                level: CaptionLevel::View,
                text: frame.caption().to_string(),
                point_indices: indices,
                source_frames: vec![frame.id()],
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|r| !r.point_indices.is_empty())
        .collect()
}

fn sorted_difference(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() {
        if j >= b.len() || a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else if a[i] == b[j] {
            i += 1;
            j += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let inter = sorted_intersection(a, b).len();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn entity_candidates_for_pair(
    v: &CaptionRecord,
    w: &CaptionRecord,
    lexicon: &[String],
) -> Vec<EntityCandidate> {
    let ev = extract_entities(&v.text, lexicon);
    let ew = extract_entities(&w.text, lexicon);
    let parents = (v.point_indices.len(), w.point_indices.len());
    let mut sources: Vec<u32> = v
        .source_frames
        .iter()
        .chain(w.source_frames.iter())
        .copied()
        .collect();
    sources.sort_unstable();
    sources.dedup();

    let splits: [(Vec<usize>, BTreeSet<String>); 3] = [
        (
            sorted_difference(&v.point_indices, &w.point_indices),
            ev.difference(&ew).cloned().collect(),
        ),
        (
            sorted_difference(&w.point_indices, &v.point_indices),
            ew.difference(&ev).cloned().collect(),
        ),
        (
            sorted_intersection(&v.point_indices, &w.point_indices),
            ev.intersection(&ew).cloned().collect(),
        ),
    ];

    splits
        .into_iter()
        .map(|(indices, words)| EntityCandidate {
            record: CaptionRecord {
                level: CaptionLevel::Entity,
                text: join_words(&words),
                point_indices: indices,
                source_frames: sources.clone(),
            },
            parent_sizes: parents,
        })
        .collect()
}

/// Carve entity candidates out of view pairs.
///
/// With `all_pairs` false, pairs are consecutive views (in the given order)
/// whose point sets overlap with Jaccard similarity of at least
/// [`MIN_VIEW_JACCARD`]; with `all_pairs` true, every unordered pair is used
/// regardless of overlap. Each pair yields three candidates: points seen only
/// by the first view paired with words unique to its caption, the symmetric
/// split, and the intersection of both paired with the shared words.
pub fn entity_pairs(
    scene_len: usize,
    views: &[CaptionRecord],
    lexicon: &[String],
    all_pairs: bool,
) -> Result<Vec<EntityCandidate>> {
    for view in views {
        if view.level != CaptionLevel::View {
            return Err(Error::validation(
                "views",
                format!("expected view-level records, got {}", view.level),
            ));
        }
        view.validate(Some(scene_len))?;
    }

    let mut candidates = Vec::new();
    if all_pairs {
        for i in 0..views.len() {
            for j in (i + 1)..views.len() {
                candidates.extend(entity_candidates_for_pair(&views[i], &views[j], lexicon));
            }
        }
    } else {
        for pair in views.windows(2) {
            if jaccard(&pair[0].point_indices, &pair[1].point_indices) >= MIN_VIEW_JACCARD {
                candidates.extend(entity_candidates_for_pair(&pair[0], &pair[1], lexicon));
            }
        }
    }
    Ok(candidates)
}

/// Keep candidates that caption at least one word, contain strictly more
/// than `gamma` points, and stay strictly below `delta` times the smaller
/// parent view's point count.
pub fn filter_entity_pairs(
    candidates: &[EntityCandidate],
    config: &PipelineConfig,
) -> Vec<CaptionRecord> {
    candidates
        .iter()
        .filter(|c| {
            let n = c.record.point_indices.len();
            let min_parent = c.parent_sizes.0.min(c.parent_sizes.1);
            !c.record.text.is_empty()
                && n > config.gamma
                && (n as f64) < config.delta * min_parent as f64
        })
        .map(|c| c.record.clone())
        .collect()
}

fn level_stats(records: &[&CaptionRecord]) -> LevelStats {
    let count = records.len();
    if count == 0 {
        return LevelStats {
            count: 0,
            mean_caption_words: 0.0,
            mean_point_count: 0.0,
        };
    }
    let words: usize = records
        .iter()
        .map(|r| r.text.split_whitespace().count())
        .sum();
    let points: usize = records.iter().map(|r| r.point_indices.len()).sum();
    LevelStats {
        count,
        mean_caption_words: words as f64 / count as f64,
        mean_point_count: points as f64 / count as f64,
    }
}

/// Corpus statistics split by association level.
pub fn association_stats(records: &[CaptionRecord]) -> AssociationStats {
    let by_level = |level: CaptionLevel| -> Vec<&CaptionRecord> {
        records.iter().filter(|r| r.level == level).collect()
    };
    AssociationStats {
        scene: level_stats(&by_level(CaptionLevel::Scene)),
        view: level_stats(&by_level(CaptionLevel::View)),
        entity: level_stats(&by_level(CaptionLevel::Entity)),
    }
}
