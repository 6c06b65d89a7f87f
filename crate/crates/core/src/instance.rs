//! Instance grouping and debiased pseudo-label generation.
//!
//! Points vote for their instance center through predicted offsets; shifted
//! points are grouped into proposals by connected components of the
//! "within grouping radius" graph. Base classes group per semantic class,
//! unannotated points group class-agnostically. Proposals are refined by a
//! per-point confidence threshold, and surviving proposals mint offset
//! pseudo-labels pointing at the centroid of their member points.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ScoreMatrix;
use crate::error::{Error, Result};
use crate::math::{add, centroid, dist_sq, l1_norm, sub, Vec3};

/// Per-point 3D offset vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField {
    data: Vec<Vec3>,
}

impl OffsetField {
    pub fn new(data: Vec<Vec3>) -> Result<Self> {
        for (i, o) in data.iter().enumerate() {
            if !o.iter().all(|c| c.is_finite()) {
                return Err(Error::validation(
                    "offsets",
                    format!("non-finite component at point {i}"),
                ));
            }
        }
        Ok(Self { data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: vec![[0.0; 3]; n],
        }
    }

    /// Interpret a flat little-endian-file payload as xyz triples.
    pub fn from_flat_f32(raw: &[f32]) -> Result<Self> {
        if raw.len() % 3 != 0 {
            return Err(Error::validation(
                "offsets",
                format!("flat length {} is not a multiple of 3", raw.len()),
            ));
        }
        Self::new(
            raw.chunks_exact(3)
                .map(|c| [c[0] as f64, c[1] as f64, c[2] as f64])
                .collect(),
        )
    }

    pub fn to_flat_f32(&self) -> Vec<f32> {
        self.data
            .iter()
            .flat_map(|o| o.iter().map(|&c| c as f32))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[Vec3] {
        &self.data
    }
}

/// One instance proposal: a sorted member set, optionally classified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub members: Vec<usize>,
    pub class: Option<usize>,
    pub confidence: Option<f64>,
}

impl Proposal {
    pub fn unclassified(members: Vec<usize>) -> Self {
        Self {
            members,
            class: None,
            confidence: None,
        }
    }
}

/// A set of proposals over a scene of `num_points` points. Members may
/// overlap across proposals in general; consumers that need disjointness
/// (panoptic matching, pseudo-labels) check it themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    num_points: usize,
    proposals: Vec<Proposal>,
}

impl ProposalSet {
    pub fn new(num_points: usize, proposals: Vec<Proposal>) -> Result<Self> {
        for (k, proposal) in proposals.iter().enumerate() {
            if proposal.members.is_empty() {
                return Err(Error::EmptyIndexSet {
                    operation: "proposal members",
                });
            }
            for w in proposal.members.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::validation(
                        format!("proposals[{k}].members"),
                        format!("not strictly increasing at {} >= {}", w[0], w[1]),
                    ));
                }
            }
            if let Some(&last) = proposal.members.last() {
                if last >= num_points {
                    return Err(Error::validation(
                        format!("proposals[{k}].members"),
                        format!("index {last} out of bounds for {num_points} points"),
                    ));
                }
            }
            if let Some(c) = proposal.confidence {
                if !c.is_finite() {
                    return Err(Error::validation(
                        format!("proposals[{k}].confidence"),
                        "non-finite",
                    ));
                }
            }
        }
        Ok(Self {
            num_points,
            proposals,
        })
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }

    pub fn into_proposals(self) -> Vec<Proposal> {
        self.proposals
    }
}

/// Write proposals as line-delimited JSON, one proposal per line.
pub fn save_proposals(set: &ProposalSet, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for proposal in set.proposals() {
        serde_json::to_writer(&mut out, proposal).expect("proposal serialization");
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&out).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load proposals from a line-delimited JSON file and validate them against
/// a scene of `num_points` points.
pub fn load_proposals(path: &Path, num_points: usize) -> Result<ProposalSet> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut proposals = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let proposal: Proposal = serde_json::from_str(line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        proposals.push(proposal);
    }
    ProposalSet::new(num_points, proposals)
}

/// Move every point by its predicted offset.
pub fn shift_points(points: &[Vec3], offsets: &OffsetField) -> Result<Vec<Vec3>> {
    if offsets.len() != points.len() {
        return Err(Error::length_mismatch(
            "offsets",
            points.len(),
            offsets.len(),
        ));
    }
    Ok(points
        .iter()
        .zip(offsets.as_slice())
        .map(|(&p, &o)| add(p, o))
        .collect())
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components of the masked points under the "distance at most
/// `radius`" relation. Components come back ordered by their smallest member,
/// members ascending — a deterministic partition of the mask.
pub fn connected_components(points: &[Vec3], mask: &[bool], radius: f64) -> Vec<Vec<usize>> {
    assert_eq!(points.len(), mask.len(), "mask length");
    assert!(radius > 0.0, "radius must be positive");

    let active: Vec<usize> = (0..points.len()).filter(|&i| mask[i]).collect();
    let mut uf = UnionFind::new(active.len());

    // Hash grid with cell edge equal to the radius: any pair within the
    // radius lands in the same or an adjacent cell.
    let cell_of = |p: Vec3| -> [i64; 3] {
        [
            (p[0] / radius).floor() as i64,
            (p[1] / radius).floor() as i64,
            (p[2] / radius).floor() as i64,
        ]
    };
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (slot, &i) in active.iter().enumerate() {
        grid.entry(cell_of(points[i])).or_default().push(slot);
    }

    let r2 = radius * radius;
    for (slot, &i) in active.iter().enumerate() {
        let c = cell_of(points[i]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) else {
                        continue;
                    };
                    for &other in bucket {
                        if other > slot && dist_sq(points[i], points[active[other]]) <= r2 {
                            uf.union(slot, other);
                        }
                    }
                }
            }
        }
    }

    let mut component_of_root: HashMap<usize, usize> = HashMap::new();
    let mut components: Vec<Vec<usize>> = Vec::new();
    for (slot, &i) in active.iter().enumerate() {
        let root = uf.find(slot);
        let id = *component_of_root.entry(root).or_insert_with(|| {
            components.push(Vec::new());
            components.len() - 1
        });
        components[id].push(i);
    }
    components
}

/// Group the unannotated points class-agnostically on the shifted cloud.
pub fn group_novel(shifted: &[Vec3], unlabeled_mask: &[bool], radius: f64) -> Result<ProposalSet> {
    if unlabeled_mask.len() != shifted.len() {
        return Err(Error::length_mismatch(
            "unlabeled_mask",
            shifted.len(),
            unlabeled_mask.len(),
        ));
    }
    let proposals = connected_components(shifted, unlabeled_mask, radius)
        .into_iter()
        .map(Proposal::unclassified)
        .collect();
    ProposalSet::new(shifted.len(), proposals)
}

/// Group points per base class on the shifted cloud. A point participates in
/// class `c` when its calibrated score for `c` strictly exceeds `tau_soft`,
/// so ambiguous points may vote in several classes. Proposals carry their
/// class and are ordered by class, then smallest member.
pub fn group_base(
    shifted: &[Vec3],
    scores: &ScoreMatrix,
    base_classes: &[usize],
    tau_soft: f64,
    radius: f64,
) -> Result<ProposalSet> {
    if scores.rows() != shifted.len() {
        return Err(Error::length_mismatch(
            "scores rows",
            shifted.len(),
            scores.rows(),
        ));
    }
    for &c in base_classes {
        if c >= scores.classes() {
            return Err(Error::validation(
                "base_classes",
                format!("class {c} out of bounds for {} classes", scores.classes()),
            ));
        }
    }

    let per_class: Vec<Vec<Proposal>> = base_classes
        .par_iter()
        .map(|&c| {
            let mask: Vec<bool> = (0..shifted.len())
                .map(|i| scores.at(i, c) > tau_soft)
                .collect();
            connected_components(shifted, &mask, radius)
                .into_iter()
                .map(|members| Proposal {
                    members,
                    class: Some(c),
                    confidence: None,
                })
                .collect()
        })
        .collect();

    ProposalSet::new(shifted.len(), per_class.into_iter().flatten().collect())
}

/// Refine proposals by a per-point confidence: members with score strictly
/// above `eta` survive; proposals left with fewer than `min_points` members
/// are dropped entirely.
pub fn score_filter(
    set: &ProposalSet,
    point_scores: &[f64],
    eta: f64,
    min_points: usize,
) -> Result<ProposalSet> {
    if point_scores.len() != set.num_points() {
        return Err(Error::length_mismatch(
            "point_scores",
            set.num_points(),
            point_scores.len(),
        ));
    }
    if let Some(i) = point_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::validation(
            "point_scores",
            format!("non-finite score at point {i}"),
        ));
    }
    let refined = set
        .proposals()
        .iter()
        .filter_map(|p| {
            let members: Vec<usize> = p
                .members
                .iter()
                .copied()
                .filter(|&i| point_scores[i] > eta)
                .collect();
            (members.len() >= min_points.max(1)).then_some(Proposal {
                members,
                class: p.class,
                confidence: p.confidence,
            })
        })
        .collect();
    ProposalSet::new(set.num_points(), refined)
}

/// Offset pseudo-labels minted from refined proposals.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    /// Per-point offset targets; zero outside the mask.
    pub offsets: OffsetField,
    /// True where a proposal produced a target.
    pub mask: Vec<bool>,
}

/// For every member point of every proposal, the pseudo offset points at the
/// centroid of the proposal's members in the ORIGINAL coordinates:
/// `target[p] = centroid - points[p]`. Proposals must be disjoint.
pub fn pseudo_offsets(points: &[Vec3], proposals: &ProposalSet) -> Result<PseudoLabels> {
    if proposals.num_points() != points.len() {
        return Err(Error::length_mismatch(
            "proposals",
            points.len(),
            proposals.num_points(),
        ));
    }
    let mut offsets = vec![[0.0; 3]; points.len()];
    let mut mask = vec![false; points.len()];
    for proposal in proposals.proposals() {
        let center = centroid(points, &proposal.members);
        for &i in &proposal.members {
            if mask[i] {
                return Err(Error::OverlappingProposals { point: i });
            }
            offsets[i] = sub(center, points[i]);
            mask[i] = true;
        }
    }
    Ok(PseudoLabels {
        offsets: OffsetField::new(offsets)?,
        mask,
    })
}

/// Offset regression losses: per-point L1 over the xyz components, averaged
/// separately over the base and novel masks. An empty mask contributes zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetLoss {
    pub base: f64,
    pub novel: f64,
    pub total: f64,
}

pub fn offset_loss(
    predicted: &OffsetField,
    target: &OffsetField,
    base_mask: &[bool],
    novel_mask: &[bool],
) -> Result<OffsetLoss> {
    let n = predicted.len();
    if target.len() != n {
        return Err(Error::length_mismatch("target", n, target.len()));
    }
    if base_mask.len() != n {
        return Err(Error::length_mismatch("base_mask", n, base_mask.len()));
    }
    if novel_mask.len() != n {
        return Err(Error::length_mismatch("novel_mask", n, novel_mask.len()));
    }
    let mean_over = |mask: &[bool]| -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if mask[i] {
                total += l1_norm(sub(predicted.as_slice()[i], target.as_slice()[i]));
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    };
    let base = mean_over(base_mask);
    let novel = mean_over(novel_mask);
    Ok(OffsetLoss {
        base,
        novel,
        total: base + novel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{dist, mat_vec, rot_z};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force components: BFS over the full pairwise distance graph.
    fn brute_components(points: &[Vec3], mask: &[bool], radius: f64) -> Vec<Vec<usize>> {
        let active: Vec<usize> = (0..points.len()).filter(|&i| mask[i]).collect();
        let mut seen = vec![false; points.len()];
        let mut out = Vec::new();
        for &start in &active {
            if seen[start] {
                continue;
            }
            let mut queue = vec![start];
            seen[start] = true;
            let mut component = Vec::new();
            while let Some(i) = queue.pop() {
                component.push(i);
                for &j in &active {
                    if !seen[j] && dist(points[i], points[j]) <= radius {
                        seen[j] = true;
                        queue.push(j);
                    }
                }
            }
            component.sort_unstable();
            out.push(component);
        }
        out.sort_by_key(|c| c[0]);
        out
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                    rng.gen_range(-extent..extent),
                ]
            })
            .collect()
    }

    #[test]
    fn components_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let points = random_points(&mut rng, 150, 0.3);
            let mask: Vec<bool> = (0..points.len()).map(|_| rng.gen_bool(0.8)).collect();
            let radius = rng.gen_range(0.02..0.1);
            assert_eq!(
                connected_components(&points, &mask, radius),
                brute_components(&points, &mask, radius)
            );
        }
    }

    #[test]
    fn components_partition_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let points = random_points(&mut rng, 200, 0.2);
        let mask: Vec<bool> = (0..points.len()).map(|i| i % 3 != 0).collect();
        let components = connected_components(&points, &mask, 0.05);
        let mut covered = vec![0usize; points.len()];
        for c in &components {
            for &i in c {
                covered[i] += 1;
            }
        }
        for (i, (&m, &count)) in mask.iter().zip(&covered).enumerate() {
            assert_eq!(count, usize::from(m), "point {i}");
        }
    }

    #[test]
    fn boundary_distance_joins_a_component() {
        let points = vec![[0.0, 0.0, 0.0], [0.25, 0.0, 0.0], [0.6, 0.0, 0.0]];
        let components = connected_components(&points, &[true; 3], 0.25);
        assert_eq!(components, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn components_are_rigid_motion_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points = random_points(&mut rng, 120, 0.25);
        let mask = vec![true; points.len()];
        let base = connected_components(&points, &mask, 0.06);

        let rot = rot_z(0.7);
        let moved: Vec<Vec3> = points
            .iter()
            .map(|&p| add(mat_vec(&rot, p), [3.0, -2.0, 0.5]))
            .collect();
        let transformed = connected_components(&moved, &mask, 0.06 + 1e-12);
        // Rotation perturbs distances by round-off only; a hair of slack on
        // the radius keeps boundary pairs together.
        assert_eq!(base, transformed);
    }

    #[test]
    fn novel_grouping_masks_out_labeled_points() {
        let points = vec![
            [0.0, 0.0, 0.0],
            [0.01, 0.0, 0.0],
            [0.02, 0.0, 0.0],
            [1.0, 0.0, 0.0],
        ];
        let mask = vec![true, false, true, true];
        let set = group_novel(&points, &mask, 0.05).unwrap();
        let members: Vec<&[usize]> = set.proposals().iter().map(|p| &p.members[..]).collect();
        assert_eq!(members, vec![&[0, 2][..], &[3][..]]);
    }

    #[test]
    fn base_grouping_splits_by_class_and_space() {
        // Two spatial blobs; class scores put points 0-2 in class 0 and
        // points 3-5 in class 1.
        let points = vec![
            [0.0, 0.0, 0.0],
            [0.02, 0.0, 0.0],
            [0.04, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.02, 0.0, 0.0],
            [1.04, 0.0, 0.0],
        ];
        let mut data = Vec::new();
        for i in 0..6 {
            if i < 3 {
                data.extend([0.9, 0.1]);
            } else {
                data.extend([0.1, 0.9]);
            }
        }
        let scores = ScoreMatrix::new(6, 2, data).unwrap();
        let set = group_base(&points, &scores, &[0, 1], 0.5, 0.05).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.proposals()[0].class, Some(0));
        assert_eq!(set.proposals()[0].members, vec![0, 1, 2]);
        assert_eq!(set.proposals()[1].class, Some(1));
        assert_eq!(set.proposals()[1].members, vec![3, 4, 5]);
    }

    #[test]
    fn score_filter_is_strict_and_drops_small_proposals() {
        let set = ProposalSet::new(
            6,
            vec![
                Proposal::unclassified(vec![0, 1, 2]),
                Proposal::unclassified(vec![3, 4, 5]),
            ],
        )
        .unwrap();
        let z = [0.9, 0.5, 0.8, 0.4, 0.5, 0.45];
        // eta = 0.5: point 1 sits exactly on the threshold and is dropped.
        let refined = score_filter(&set, &z, 0.5, 2).unwrap();
        assert_eq!(refined.len(), 1);
        assert_eq!(refined.proposals()[0].members, vec![0, 2]);
    }

    #[test]
    fn pseudo_offsets_point_at_member_centroids() {
        let points = vec![
            [0.0, 0.0, 0.0],
            [0.1, 0.0, 0.0],
            [0.2, 0.0, 0.0],
            [5.0, 5.0, 5.0],
        ];
        let set = ProposalSet::new(4, vec![Proposal::unclassified(vec![0, 1, 2])]).unwrap();
        let labels = pseudo_offsets(&points, &set).unwrap();
        assert_eq!(labels.mask, vec![true, true, true, false]);
        assert_eq!(labels.offsets.as_slice()[3], [0.0; 3]);
        let center = centroid(&points, &[0, 1, 2]);
        for i in 0..3 {
            let reached = add(points[i], labels.offsets.as_slice()[i]);
            assert!(dist(reached, center) < 1e-12);
        }
    }

    #[test]
    fn overlapping_proposals_are_rejected() {
        let points = vec![[0.0; 3], [1.0; 3]];
        let set = ProposalSet::new(
            2,
            vec![
                Proposal::unclassified(vec![0, 1]),
                Proposal::unclassified(vec![1]),
            ],
        )
        .unwrap();
        let err = pseudo_offsets(&points, &set).unwrap_err();
        assert!(matches!(err, Error::OverlappingProposals { point: 1 }));
    }

    #[test]
    fn offset_loss_on_constant_error_is_three() {
        let n = 8;
        let predicted = OffsetField::new(vec![[1.0, 2.0, 3.0]; n]).unwrap();
        let target = OffsetField::new(vec![[0.0, 1.0, 2.0]; n]).unwrap();
        let base_mask: Vec<bool> = (0..n).map(|i| i < 4).collect();
        let novel_mask: Vec<bool> = (0..n).map(|i| i >= 4).collect();
        let loss = offset_loss(&predicted, &target, &base_mask, &novel_mask).unwrap();
        assert_eq!(loss.base, 3.0);
        assert_eq!(loss.novel, 3.0);
        assert_eq!(loss.total, 6.0);

        let empty = vec![false; n];
        let only_base = offset_loss(&predicted, &target, &base_mask, &empty).unwrap();
        assert_eq!(only_base.novel, 0.0);
        assert_eq!(only_base.total, only_base.base);
    }

    #[test]
    fn shift_then_group_recovers_separated_instances() {
        // Two instances whose raw extents touch; perfect offsets collapse
        // each to its centroid, separating the shifted clusters.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut points = Vec::new();
        let mut offsets = Vec::new();
        for center in [[0.0, 0.0, 0.0], [0.3, 0.0, 0.0]] {
            let mut members = Vec::new();
            for _ in 0..40 {
                let p = [
                    center[0] + rng.gen_range(-0.16..0.16),
                    center[1] + rng.gen_range(-0.16..0.16),
                    center[2] + rng.gen_range(-0.16..0.16),
                ];
                members.push(p);
            }
            let idx: Vec<usize> = (0..members.len()).collect();
            let c = centroid(&members, &idx);
            for p in members {
                points.push(p);
                offsets.push(sub(c, p));
            }
        }
        let shifted = shift_points(&points, &OffsetField::new(offsets).unwrap()).unwrap();
        let set = group_novel(&shifted, &vec![true; points.len()], 0.05).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.proposals()[0].members, (0..40).collect::<Vec<_>>());
        assert_eq!(set.proposals()[1].members, (40..80).collect::<Vec<_>>());
    }

    #[test]
    fn proposals_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("proposals.jsonl");
        let set = ProposalSet::new(
            10,
            vec![
                Proposal {
                    members: vec![0, 2, 4],
                    class: Some(3),
                    confidence: Some(0.75),
                },
                Proposal::unclassified(vec![5, 6]),
            ],
        )
        .unwrap();
        save_proposals(&set, &path).unwrap();
        let loaded = load_proposals(&path, 10).unwrap();
        assert_eq!(loaded, set);

        // Loading against a smaller scene trips the bounds check.
        assert!(load_proposals(&path, 5).is_err());
    }
}
