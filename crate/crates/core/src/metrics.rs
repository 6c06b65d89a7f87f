//! Open-world segmentation metrics.
//!
//! Semantic quality is mean IoU with the usual exclusions (ignored ground
//! truth points, classes absent on both sides); base/novel splits combine
//! through the harmonic mean. Instance quality is average precision and
//! recall at an IoU threshold with greedy confidence-ranked matching, and
//! panoptic quality follows the strict IoU > 0.5 matching rule, reported
//! with its segmentation/recognition factors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{offset_loss, OffsetField, ProposalSet};
use crate::scene::IGNORE_LABEL;

fn intersection_len(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

fn set_iou(a: &[usize], b: &[usize]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Predictions and ground truth are class-compatible when either side is
/// unclassified or both carry the same class.
fn class_compatible(a: Option<usize>, b: Option<usize>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

// ---------------------------------------------------------------------------
// Semantic segmentation
// ---------------------------------------------------------------------------

/// Per-class intersection-over-union. `None` marks a class absent from both
/// prediction and ground truth; such classes do not enter any mean.
#[derive(Debug, Clone)]
pub struct SemanticIou {
    pub per_class: Vec<Option<f64>>,
}

impl SemanticIou {
    /// Mean over all classes present on at least one side.
    pub fn mean(&self) -> f64 {
        let present: Vec<f64> = self.per_class.iter().filter_map(|v| *v).collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    /// Mean over the given class subset, skipping absent classes.
    pub fn mean_over(&self, classes: &[usize]) -> f64 {
        let present: Vec<f64> = classes
            .iter()
            .filter_map(|&c| self.per_class.get(c).copied().flatten())
            .collect();
        if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }
}

/// Per-class IoU of a predicted labeling against ground truth. Points whose
/// ground truth is [`IGNORE_LABEL`] are excluded entirely; predictions must
/// commit to a real class for every point.
pub fn semantic_miou(pred: &[u32], gt: &[u32], num_classes: usize) -> Result<SemanticIou> {
    if pred.len() != gt.len() {
        return Err(Error::length_mismatch("gt labels", pred.len(), gt.len()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if g == IGNORE_LABEL {
            continue;
        }
        if p as usize >= num_classes {
            return Err(Error::validation(
                "pred labels",
                format!("class {p} at point {i} out of bounds for {num_classes} classes"),
            ));
        }
        if g as usize >= num_classes {
            return Err(Error::validation(
                "gt labels",
                format!("class {g} at point {i} out of bounds for {num_classes} classes"),
            ));
        }
        if p == g {
            tp[p as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fn_[g as usize] += 1;
        }
    }
    let per_class = (0..num_classes)
        .map(|c| {
            let union = tp[c] + fp[c] + fn_[c];
            (union > 0).then(|| tp[c] as f64 / union as f64)
        })
        .collect();
    Ok(SemanticIou { per_class })
}

/// Harmonic mean `2ab / (a + b)`, zero when both inputs vanish.
pub fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

// ---------------------------------------------------------------------------
// Instance segmentation
// ---------------------------------------------------------------------------

/// Average precision / recall at one IoU threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ApResult {
    pub ap: f64,
    pub ar: f64,
    pub matched: usize,
    pub num_predictions: usize,
    pub num_ground_truth: usize,
}

/// Greedy matching in descending confidence order (ties keep insertion
/// order): each prediction claims the still-unmatched, class-compatible
/// ground-truth instance of highest IoU, and counts as a true positive when
/// that IoU reaches `iou_threshold`. AP integrates the all-point
/// interpolated precision-recall curve; AR is the matched ground-truth
/// fraction. Every prediction must carry a confidence.
pub fn instance_ap(
    predictions: &ProposalSet,
    ground_truth: &ProposalSet,
    iou_threshold: f64,
) -> Result<ApResult> {
    if ground_truth.is_empty() {
        return Err(Error::EmptyIndexSet {
            operation: "instance_ap ground truth",
        });
    }
    if predictions
        .proposals()
        .iter()
        .any(|p| p.confidence.is_none())
    {
        return Err(Error::MissingConfidences);
    }

    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        let ca = predictions.proposals()[a].confidence.unwrap();
        let cb = predictions.proposals()[b].confidence.unwrap();
        cb.partial_cmp(&ca).unwrap().then(a.cmp(&b))
    });

    let gt = ground_truth.proposals();
    let mut gt_matched = vec![false; gt.len()];
    let mut tp_flags = Vec::with_capacity(order.len());
    for &pi in &order {
        let pred = &predictions.proposals()[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if gt_matched[gi] || !class_compatible(pred.class, g.class) {
                continue;
            }
            let iou = set_iou(&pred.members, &g.members);
            if best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        match best {
            Some((gi, iou)) if iou >= iou_threshold => {
                gt_matched[gi] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    let matched = tp_flags.iter().filter(|&&t| t).count();
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut running_tp = 0usize;
    for (k, &tp) in tp_flags.iter().enumerate() {
        running_tp += usize::from(tp);
        precision.push(running_tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let ap = tp_flags
        .iter()
        .zip(&precision)
        .filter(|(&tp, _)| tp)
        .map(|(_, &p)| p)
        .sum::<f64>()
        / gt.len() as f64;

    Ok(ApResult {
        ap,
        ar: matched as f64 / gt.len() as f64,
        matched,
        num_predictions: predictions.len(),
        num_ground_truth: gt.len(),
    })
}

// ---------------------------------------------------------------------------
// Panoptic quality
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PanopticResult {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub matched: usize,
    pub unmatched_predictions: usize,
    pub unmatched_ground_truth: usize,
}

fn check_disjoint(set: &ProposalSet, what: &str) -> Result<()> {
    let mut seen = vec![false; set.num_points()];
    for proposal in set.proposals() {
        for &i in &proposal.members {
            if seen[i] {
                return Err(Error::OverlappingProposals { point: i });
            }
            seen[i] = true;
        }
    }
    let _ = what;
    Ok(())
}

/// Panoptic quality with strict matching: a prediction and a ground-truth
/// segment match when they are class-compatible and their IoU strictly
/// exceeds 0.5 — which makes every match unique on both sides. Both segment
/// sets must be internally disjoint. `pq` factors into `sq * rq` where `sq`
/// is the mean matched IoU and `rq` the recognition F-score.
pub fn panoptic_quality(
    predictions: &ProposalSet,
    ground_truth: &ProposalSet,
) -> Result<PanopticResult> {
    check_disjoint(predictions, "predictions")?;
    check_disjoint(ground_truth, "ground truth")?;

    let mut iou_sum = 0.0;
    let mut matched = 0usize;
    let mut gt_matched = vec![false; ground_truth.len()];
    for pred in predictions.proposals() {
        for (gi, g) in ground_truth.proposals().iter().enumerate() {
            if gt_matched[gi] || !class_compatible(pred.class, g.class) {
                continue;
            }
            let iou = set_iou(&pred.members, &g.members);
            if iou > 0.5 {
                gt_matched[gi] = true;
                matched += 1;
                iou_sum += iou;
                break; // IoU > 0.5 matches are unique per prediction too
            }
        }
    }

    let fp = predictions.len() - matched;
    let fn_ = ground_truth.len() - matched;
    let denom = matched as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
    let (pq, sq, rq) = if matched == 0 {
        (0.0, 0.0, 0.0)
    } else {
        (
            iou_sum / denom,
            iou_sum / matched as f64,
            matched as f64 / denom,
        )
    };
    Ok(PanopticResult {
        pq,
        sq,
        rq,
        matched,
        unmatched_predictions: fp,
        unmatched_ground_truth: fn_,
    })
}

// ---------------------------------------------------------------------------
// Offset error
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OffsetMae {
    pub base: f64,
    pub novel: f64,
}

/// Mean absolute offset error, split by the ground-truth class of each
/// point. The per-point error is the L1 norm over xyz. Points whose class is
/// ignored or in neither subset are excluded; an empty side reports zero.
pub fn offset_mae(
    predicted: &OffsetField,
    target: &OffsetField,
    point_labels: &[u32],
    base_classes: &[usize],
    novel_classes: &[usize],
) -> Result<OffsetMae> {
    if point_labels.len() != predicted.len() {
        return Err(Error::length_mismatch(
            "point_labels",
            predicted.len(),
            point_labels.len(),
        ));
    }
    let in_set = |label: u32, set: &[usize]| {
        label != IGNORE_LABEL && set.contains(&(label as usize))
    };
    let base_mask: Vec<bool> = point_labels
        .iter()
        .map(|&l| in_set(l, base_classes))
        .collect();
    let novel_mask: Vec<bool> = point_labels
        .iter()
        .map(|&l| in_set(l, novel_classes))
        .collect();
    let loss = offset_loss(predicted, target, &base_mask, &novel_mask)?;
    Ok(OffsetMae {
        base: loss.base,
        novel: loss.novel,
    })
}

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SemanticSummary {
    pub miou: f64,
    pub base_miou: f64,
    pub novel_miou: f64,
    pub harmonic_miou: f64,
}

/// Everything one evaluation run produced; sections are present when the
/// corresponding inputs were given.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub semantic: Option<SemanticSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<ApResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panoptic: Option<PanopticResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offsets: Option<OffsetMae>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::Proposal;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn proposals(sets: &[(&[usize], Option<usize>, Option<f64>)], n: usize) -> ProposalSet {
        ProposalSet::new(
            n,
            sets.iter()
                .map(|(members, class, confidence)| Proposal {
                    members: members.to_vec(),
                    class: *class,
                    confidence: *confidence,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn harmonic_mean_properties() {
        assert_eq!(harmonic(0.0, 0.0), 0.0);
        assert_eq!(harmonic(0.0, 10.0), 0.0);
        assert!((harmonic(40.0, 40.0) - 40.0).abs() < 1e-12);
        assert!((harmonic(30.0, 60.0) - 40.0).abs() < 1e-12);
        assert_eq!(harmonic(25.0, 75.0), harmonic(75.0, 25.0));
    }

    #[test]
    fn miou_hand_computed_case() {
        //           point: 0  1  2  3  4  5
        let gt = [0u32, 0, 1, 1, IGNORE_LABEL, 2];
        let pred = [0u32, 1, 1, 1, 0, 0];
        let iou = semantic_miou(&pred, &gt, 4).unwrap();
        // class 0: tp=1 fp=1 fn=1 -> 1/3; class 1: tp=2 fp=1 fn=0 -> 2/3;
        // class 2: tp=0 fn=1 -> 0; class 3 absent -> None.
        assert!((iou.per_class[0].unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou.per_class[1].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou.per_class[2], Some(0.0));
        assert_eq!(iou.per_class[3], None);
        assert!((iou.mean() - (1.0 / 3.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((iou.mean_over(&[0, 1]) - 0.5).abs() < 1e-12);
        assert_eq!(iou.mean_over(&[3]), 0.0);
    }

    #[test]
    fn miou_ignores_ignored_points_completely() {
        let gt = [IGNORE_LABEL; 4];
        let pred = [0u32, 1, 2, 0];
        let iou = semantic_miou(&pred, &gt, 3).unwrap();
        assert!(iou.per_class.iter().all(Option::is_none));
        assert_eq!(iou.mean(), 0.0);
    }

    #[test]
    fn perfect_predictions_score_full_ap_and_ar() {
        let gt = proposals(
            &[(&[0, 1, 2], None, None), (&[3, 4], None, None)],
            6,
        );
        let pred = proposals(
            &[(&[0, 1, 2], None, Some(0.9)), (&[3, 4], None, Some(0.8))],
            6,
        );
        let result = instance_ap(&pred, &gt, 0.5).unwrap();
        assert_eq!(result.ap, 1.0);
        assert_eq!(result.ar, 1.0);
        assert_eq!(result.matched, 2);
    }

    #[test]
    fn ap_matches_hand_computed_curve() {
        // Three ground-truth instances; ranked detections: TP, FP, TP.
        // Precisions (1, 1/2, 2/3) interpolate to (1, 2/3, 2/3), so
        // AP = (1 + 2/3) / 3 = 5/9 and AR = 2/3.
        let gt = proposals(
            &[
                (&[0, 1], None, None),
                (&[2, 3], None, None),
                (&[4, 5], None, None),
            ],
            8,
        );
        let pred = proposals(
            &[
                (&[0, 1], None, Some(0.9)),
                (&[6, 7], None, Some(0.8)),
                (&[2, 3], None, Some(0.7)),
            ],
            8,
        );
        let result = instance_ap(&pred, &gt, 0.5).unwrap();
        assert!((result.ap - 5.0 / 9.0).abs() < 1e-12);
        assert!((result.ar - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_detections_count_once() {
        let gt = proposals(&[(&[0, 1, 2, 3], None, None)], 4);
        let pred = proposals(
            &[
                (&[0, 1, 2, 3], None, Some(0.9)),
                (&[0, 1, 2, 3], None, Some(0.8)),
            ],
            4,
        );
        let result = instance_ap(&pred, &gt, 0.5).unwrap();
        assert_eq!(result.matched, 1);
        assert_eq!(result.ap, 1.0); // the TP ranks first
        assert_eq!(result.ar, 1.0);
    }

    #[test]
    fn ranking_quality_affects_ap() {
        let gt = proposals(&[(&[0, 1], None, None), (&[2, 3], None, None)], 6);
        let good_first = proposals(
            &[
                (&[0, 1], None, Some(0.9)),
                (&[4, 5], None, Some(0.5)),
                (&[2, 3], None, Some(0.4)),
            ],
            6,
        );
        let bad_first = proposals(
            &[
                (&[0, 1], None, Some(0.5)),
                (&[4, 5], None, Some(0.9)),
                (&[2, 3], None, Some(0.4)),
            ],
            6,
        );
        let hi = instance_ap(&good_first, &gt, 0.5).unwrap().ap;
        let lo = instance_ap(&bad_first, &gt, 0.5).unwrap().ap;
        assert!(hi > lo);
        // AR ignores ranking.
        assert_eq!(
            instance_ap(&good_first, &gt, 0.5).unwrap().ar,
            instance_ap(&bad_first, &gt, 0.5).unwrap().ar
        );
    }

    #[test]
    fn class_mismatch_blocks_matching() {
        let gt = proposals(&[(&[0, 1], Some(0), None)], 4);
        let pred = proposals(&[(&[0, 1], Some(1), Some(0.9))], 4);
        let result = instance_ap(&pred, &gt, 0.5).unwrap();
        assert_eq!(result.matched, 0);
        assert_eq!(result.ap, 0.0);
    }

    #[test]
    fn missing_confidence_is_an_error() {
        let gt = proposals(&[(&[0, 1], None, None)], 4);
        let pred = proposals(&[(&[0, 1], None, None)], 4);
        assert!(matches!(
            instance_ap(&pred, &gt, 0.5),
            Err(Error::MissingConfidences)
        ));
    }

    #[test]
    fn panoptic_perfect_case_is_all_ones() {
        let gt = proposals(
            &[(&[0, 1, 2], Some(0), None), (&[3, 4], Some(1), None)],
            6,
        );
        let result = panoptic_quality(&gt, &gt).unwrap();
        assert_eq!(result.pq, 1.0);
        assert_eq!(result.sq, 1.0);
        assert_eq!(result.rq, 1.0);
    }

    #[test]
    fn panoptic_factorization_holds_on_random_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let n = 120;
            let gt_labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6)).collect();
            let mut pred_labels = gt_labels.clone();
            for p in pred_labels.iter_mut() {
                if rng.gen_bool(0.2) {
                    *p = rng.gen_range(0..6);
                }
            }
            let to_set = |labels: &[usize]| {
                let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 6];
                for (i, &l) in labels.iter().enumerate() {
                    groups[l].push(i);
                }
                ProposalSet::new(
                    n,
                    groups
                        .into_iter()
                        .enumerate()
                        .filter(|(_, g)| !g.is_empty())
                        .map(|(class, members)| Proposal {
                            members,
                            class: Some(class),
                            confidence: None,
                        })
                        .collect(),
                )
                .unwrap()
            };
            let result = panoptic_quality(&to_set(&pred_labels), &to_set(&gt_labels)).unwrap();
            assert!((result.pq - result.sq * result.rq).abs() < 1e-12);
            assert!(result.pq <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn panoptic_requires_strict_majority_overlap() {
        // IoU exactly 0.5 must not match.
        let gt = proposals(&[(&[0, 1, 2, 3], None, None)], 6);
        let pred = proposals(&[(&[2, 3, 4, 5], None, None)], 6);
        let result = panoptic_quality(&pred, &gt).unwrap();
        assert_eq!(result.matched, 0);
        assert_eq!(result.pq, 0.0);
    }

    #[test]
    fn panoptic_rejects_overlapping_segments() {
        let gt = proposals(&[(&[0, 1], None, None)], 4);
        let pred = proposals(&[(&[0, 1], None, None), (&[1, 2], None, None)], 4);
        assert!(matches!(
            panoptic_quality(&pred, &gt),
            Err(Error::OverlappingProposals { point: 1 })
        ));
    }

    #[test]
    fn offset_mae_splits_by_class_sets() {
        let predicted = OffsetField::new(vec![[1.0, 0.0, 0.0]; 6]).unwrap();
        let target = OffsetField::zeros(6);
        let labels = [0u32, 0, 1, 1, IGNORE_LABEL, 2];
        let mae = offset_mae(&predicted, &target, &labels, &[0], &[1, 2]).unwrap();
        assert_eq!(mae.base, 1.0);
        assert_eq!(mae.novel, 1.0);

        let none = offset_mae(&predicted, &target, &labels, &[3], &[1]).unwrap();
        assert_eq!(none.base, 0.0);
    }
}
