//! Semantic score calibration.
//!
//! Per-point class scores come from a softmax over cosine similarities
//! between point features and class text embeddings, restricted to a class
//! subset (excluded classes score exactly zero). A per-point probability of
//! belonging to a novel category blends the base-subset and novel-subset
//! score rows into one calibrated distribution; proposals are classified by
//! averaging their members' calibrated rows.

use crate::error::{Error, Result};
use crate::objective::EmbeddingMatrix;
use crate::scene::CategoryVocabulary;

/// Predicted probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the
/// binary cross-entropy so a confident miss stays finite.
pub const BCE_CLAMP: f64 = 1e-7;

/// Row-major matrix of per-point class scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * classes {
            return Err(Error::length_mismatch("score data", rows * classes, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation(
                "score data",
                format!("value {} at flat index {i} outside [0, 1]", data[i]),
            ));
        }
        Ok(Self {
            rows,
            classes,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn at(&self, row: usize, class: usize) -> f64 {
        self.data[row * self.classes + class]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

fn check_subset(subset: &[usize], classes: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::EmptyIndexSet {
            operation: "class subset",
        });
    }
    for w in subset.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::validation(
                "subset",
                format!("not strictly increasing at {} >= {}", w[0], w[1]),
            ));
        }
    }
    if let Some(&last) = subset.last() {
        if last >= classes {
            return Err(Error::validation(
                "subset",
                format!("class {last} out of bounds for {classes} classes"),
            ));
        }
    }
    Ok(())
}

/// Softmax over cosine similarities between each feature row and the
/// vocabulary embeddings of `subset`. Classes outside the subset score
/// exactly zero, so every row sums to one over the subset. Feature scale
/// does not matter: similarities are cosine, not dot products.
pub fn semantic_scores(
    features: &EmbeddingMatrix,
    vocab: &CategoryVocabulary,
    subset: &[usize],
) -> Result<ScoreMatrix> {
    let classes = vocab.num_classes();
    check_subset(subset, classes)?;
    let dim = vocab.embeddings().first().map_or(0, Vec::len);
    if features.dim() != dim {
        return Err(Error::length_mismatch("feature dim", dim, features.dim()));
    }

    let mut data = vec![0.0; features.rows() * classes];
    for i in 0..features.rows() {
        let f = features.row(i);
        let f_norm: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if f_norm == 0.0 {
            return Err(Error::validation(
                "features",
                format!("zero-norm feature row {i}"),
            ));
        }
        let cosines: Vec<f64> = subset
            .iter()
            .map(|&c| {
                let e = &vocab.embeddings()[c];
                let e_norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = f.iter().zip(e).map(|(a, b)| a * b).sum();
                dot / (f_norm * e_norm)
            })
            .collect();
        let m = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = cosines.iter().map(|&c| (c - m).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (&c, w) in subset.iter().zip(&weights) {
            data[i * classes + c] = w / total;
        }
    }
    ScoreMatrix::new(features.rows(), classes, data)
}

/// Mean binary cross-entropy between predicted probabilities and targets.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::length_mismatch(
            "targets",
            predictions.len(),
            targets.len(),
        ));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyIndexSet {
            operation: "bce_loss",
        });
    }
    let mut total = 0.0;
    for (i, (&p, &t)) in predictions.iter().zip(targets).enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(Error::validation(
                "bce inputs",
                format!("prediction {p} / target {t} at index {i}"),
            ));
        }
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(total / predictions.len() as f64)
}

fn check_row_stochastic(m: &ScoreMatrix, operation: &'static str) -> Result<()> {
    for i in 0..m.rows() {
        let sum: f64 = m.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::NotNormalized { operation, row: i });
        }
    }
    Ok(())
}

/// Blend base-subset and novel-subset score rows with a per-point novel
/// probability: `out = base * (1 - p) + novel * p`.
///
/// Both inputs must be row-stochastic; the blend then sums to one by
/// construction. At `p = 0` a row equals the base row bit-for-bit, at
/// `p = 1` the novel row.
pub fn calibrate(
    base: &ScoreMatrix,
    novel: &ScoreMatrix,
    novel_prob: &[f64],
) -> Result<ScoreMatrix> {
    if novel.rows() != base.rows() {
        return Err(Error::length_mismatch("novel rows", base.rows(), novel.rows()));
    }
    if novel.classes() != base.classes() {
        return Err(Error::length_mismatch(
            "novel classes",
            base.classes(),
            novel.classes(),
        ));
    }
    if novel_prob.len() != base.rows() {
        return Err(Error::length_mismatch(
            "novel_prob",
            base.rows(),
            novel_prob.len(),
        ));
    }
    if let Some(i) = novel_prob.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::validation(
            "novel_prob",
            format!("value {} at row {i} outside [0, 1]", novel_prob[i]),
        ));
    }
    check_row_stochastic(base, "calibrate base scores")?;
    check_row_stochastic(novel, "calibrate novel scores")?;

    let classes = base.classes();
    let mut data = vec![0.0; base.rows() * classes];
    for i in 0..base.rows() {
        let p = novel_prob[i];
        for c in 0..classes {
            data[i * classes + c] = base.at(i, c) * (1.0 - p) + novel.at(i, c) * p;
        }
    }
    ScoreMatrix::new(base.rows(), classes, data)
}

/// Classify a proposal: average the calibrated rows of its members and take
/// the argmax (ties resolve to the lower class index). Returns the class and
/// its averaged score.
pub fn calibrate_proposal(scores: &ScoreMatrix, members: &[usize]) -> Result<(usize, f64)> {
    if members.is_empty() {
        return Err(Error::EmptyIndexSet {
            operation: "calibrate_proposal",
        });
    }
    let classes = scores.classes();
    let mut mean = vec![0.0; classes];
    for &i in members {
        if i >= scores.rows() {
            return Err(Error::validation(
                "members",
                format!("row {i} out of bounds for {} rows", scores.rows()),
            ));
        }
        for (m, v) in mean.iter_mut().zip(scores.row(i)) {
            *m += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let mut best = 0;
    for c in 1..classes {
        if mean[c] > mean[best] {
            best = c;
        }
    }
    Ok((best, mean[best]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthogonal_vocab() -> CategoryVocabulary {
        CategoryVocabulary::new(
            vec!["chair".into()],
            vec!["lamp".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn semantic_scores_match_closed_form_on_orthogonal_classes() {
        let vocab = orthogonal_vocab();
        let features = EmbeddingMatrix::new(1, 2, vec![2.0, 0.0]).unwrap();
        let scores = semantic_scores(&features, &vocab, &[0, 1]).unwrap();
        // Cosines are (1, 0): softmax gives e / (e + 1).
        let expected = std::f64::consts::E / (std::f64::consts::E + 1.0);
        assert!((scores.at(0, 0) - expected).abs() < 1e-12);
        assert!((scores.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn semantic_scores_are_scale_invariant() {
        let vocab = orthogonal_vocab();
        let a = EmbeddingMatrix::new(1, 2, vec![0.3, -0.4]).unwrap();
        let b = EmbeddingMatrix::new(1, 2, vec![3.0, -4.0]).unwrap();
        let sa = semantic_scores(&a, &vocab, &[0, 1]).unwrap();
        let sb = semantic_scores(&b, &vocab, &[0, 1]).unwrap();
        assert_eq!(sa.data(), sb.data());
    }

    #[test]
    fn excluded_classes_score_exactly_zero() {
        let vocab = orthogonal_vocab();
        let features = EmbeddingMatrix::new(2, 2, vec![0.5, 0.5, -0.2, 0.9]).unwrap();
        let scores = semantic_scores(&features, &vocab, &[1]).unwrap();
        for i in 0..2 {
            assert_eq!(scores.at(i, 0), 0.0);
            assert_eq!(scores.at(i, 1), 1.0); // singleton softmax
        }
    }

    #[test]
    fn bce_of_uniform_prediction_is_ln_two() {
        let loss = bce_loss(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_clamps_confident_misses() {
        let loss = bce_loss(&[0.0], &[1.0]).unwrap();
        assert!((loss - (-(BCE_CLAMP.ln()))).abs() < 1e-9);
    }

    #[test]
    fn calibrate_blends_rows() {
        let base = ScoreMatrix::new(1, 4, vec![0.7, 0.3, 0.0, 0.0]).unwrap();
        let novel = ScoreMatrix::new(1, 4, vec![0.0, 0.0, 0.6, 0.4]).unwrap();
        let out = calibrate(&base, &novel, &[0.25]).unwrap();
        let expected = [0.525, 0.225, 0.15, 0.10];
        for (got, want) in out.row(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((out.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn calibrate_endpoints_are_exact() {
        let base = ScoreMatrix::new(1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        let novel = ScoreMatrix::new(1, 3, vec![0.1, 0.1, 0.8]).unwrap();
        let at_zero = calibrate(&base, &novel, &[0.0]).unwrap();
        assert_eq!(at_zero.row(0), base.row(0));
        let at_one = calibrate(&base, &novel, &[1.0]).unwrap();
        assert_eq!(at_one.row(0), novel.row(0));
    }

    #[test]
    fn calibrate_rejects_unnormalized_rows() {
        let base = ScoreMatrix::new(1, 2, vec![0.9, 0.9]).unwrap();
        let novel = ScoreMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        let err = calibrate(&base, &novel, &[0.5]).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { row: 0, .. }));
    }

    #[test]
    fn calibrated_score_is_monotone_in_novel_probability() {
        let base = ScoreMatrix::new(1, 2, vec![0.9, 0.1]).unwrap();
        let novel = ScoreMatrix::new(1, 2, vec![0.2, 0.8]).unwrap();
        let mut last = -1.0;
        for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let out = calibrate(&base, &novel, &[p]).unwrap();
            assert!(out.at(0, 1) > last);
            last = out.at(0, 1);
        }
    }

    #[test]
    fn proposal_classification_averages_then_argmaxes() {
        let scores = ScoreMatrix::new(
            3,
            2,
            vec![
                0.9, 0.1, // strong class 0
                0.2, 0.8, // strong class 1
                0.4, 0.6,
            ],
        )
        .unwrap();
        let (class, confidence) = calibrate_proposal(&scores, &[0, 1, 2]).unwrap();
        assert_eq!(class, 0);
        assert!((confidence - 0.5).abs() < 1e-12);

        // Exact tie resolves to the lower class index.
        let tied = ScoreMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert_eq!(calibrate_proposal(&tied, &[0]).unwrap().0, 0);
    }
}
