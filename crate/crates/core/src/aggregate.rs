//! Feature aggregation: the robust-masking secure aggregator and the three
//! comparison baselines (plain mean, saturating-clip sum, majority vote).
//!
//! Robust masking works per class: clip the class slice, slide a window to
//! find the region with the highest class evidence, mask that region if it
//! holds more than a threshold fraction of the slice's total evidence, and
//! sum the remainder. The final prediction is the argmax of the per-class
//! remainders, ties toward the lowest class index.

use crate::error::{Error, Result};
use crate::tensor::{
    argmax_lowest, ClipBounds, FeatureKind, FeatureTensor, Window,
};

/// The clipping stage, selectable per configuration: an interval clip or the
/// saturating `tanh(0.05 u - 1)` used by the clipped-sum baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClipFunction {
    Interval(ClipBounds),
    SaturatingTanh,
}

impl ClipFunction {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            ClipFunction::Interval(b) => b.apply(v),
            ClipFunction::SaturatingTanh => saturating_tanh(v),
        }
    }
}

/// The clipped-sum baseline's clip: tanh(0.05 u - 1).
pub fn saturating_tanh(v: f64) -> f64 {
    (0.05 * v - 1.0).tanh()
}

/// Parameters of robust masking: clip bounds, detection threshold in [0, 1],
/// and the mask window shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskingConfig {
    pub bounds: ClipBounds,
    pub threshold: f64,
    pub mask_rows: usize,
    pub mask_cols: usize,
}

impl MaskingConfig {
    pub fn new(bounds: ClipBounds, threshold: f64, mask_shape: (usize, usize)) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::contract(format!("threshold {threshold} outside [0, 1]")));
        }
        if mask_shape.0 == 0 || mask_shape.1 == 0 {
            return Err(Error::contract("mask shape must be positive"));
        }
        Ok(MaskingConfig {
            bounds,
            threshold,
            mask_rows: mask_shape.0,
            mask_cols: mask_shape.1,
        })
    }

    /// Default setting: clip to [0, inf), threshold 0.
    pub fn with_defaults(mask_shape: (usize, usize)) -> Result<Self> {
        MaskingConfig::new(ClipBounds::default(), 0.0, mask_shape)
    }

    pub fn mask_shape(&self) -> (usize, usize) {
        (self.mask_rows, self.mask_cols)
    }
}

/// Result of robust masking over one feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskingOutcome {
    /// Argmax of `per_class_evidence`, ties toward the lowest class index.
    pub predicted: usize,
    /// Masked class evidence s for every class.
    pub per_class_evidence: Vec<f64>,
    /// The window masked for each class, when detection fired.
    pub detected_windows: Vec<Option<Window>>,
}

/// Window detection over one pre-clipped class slice (`rows` x `cols`,
/// row-major). Returns the window with the highest in-window sum, first in
/// row-major order among ties, or None when the slice's total is zero or the
/// normalized maximum does not exceed the threshold. Values are expected to
/// be non-negative (clipped with a zero lower bound).
pub fn detect(
    slice: &[f64],
    rows: usize,
    cols: usize,
    threshold: f64,
    mask_shape: (usize, usize),
) -> Result<Option<Window>> {
    if slice.len() != rows * cols {
        return Err(Error::contract("slice length does not match grid shape"));
    }
    if mask_shape.0 > rows || mask_shape.1 > cols {
        return Err(Error::contract(format!(
            "mask {}x{} larger than {rows}x{cols} grid",
            mask_shape.0, mask_shape.1
        )));
    }
    let total: f64 = slice.iter().sum();
    if total == 0.0 {
        // A zero slice carries no attackable evidence; the normalized
        // statistic is defined as 0 here.
        return Ok(None);
    }
    let (best, best_sum) = max_window(slice, rows, cols, mask_shape);
    if best_sum / total <= threshold {
        return Ok(None);
    }
    Ok(Some(best))
}

/// First window (row-major) attaining the maximal in-window sum.
pub(crate) fn max_window_sum(
    slice: &[f64],
    rows: usize,
    cols: usize,
    shape: (usize, usize),
) -> (Window, f64) {
    max_window(slice, rows, cols, shape)
}

fn max_window(slice: &[f64], rows: usize, cols: usize, shape: (usize, usize)) -> (Window, f64) {
    let (wr, wc) = shape;
    let mut best = Window { row0: 0, col0: 0, rows: wr, cols: wc };
    let mut best_sum = f64::NEG_INFINITY;
    for row0 in 0..=rows - wr {
        for col0 in 0..=cols - wc {
            let mut sum = 0.0;
            for r in row0..row0 + wr {
                for c in col0..col0 + wc {
                    sum += slice[r * cols + c];
                }
            }
            if sum > best_sum {
                best_sum = sum;
                best = Window { row0, col0, rows: wr, cols: wc };
            }
        }
    }
    (best, best_sum)
}

/// Robust masking with interval clipping taken from the config.
pub fn robust_masking(tensor: &FeatureTensor, config: &MaskingConfig) -> Result<MaskingOutcome> {
    robust_masking_with_clip(
        tensor,
        &ClipFunction::Interval(config.bounds),
        config.threshold,
        config.mask_shape(),
    )
}

/// Robust masking with an explicit clip function. A threshold of 1 means no
/// detection ever fires and the result is the clipped-sum argmax; this is
/// also the only threshold permitted with the saturating clip, whose negative
/// outputs would invalidate the detection statistic.
pub fn robust_masking_with_clip(
    tensor: &FeatureTensor,
    clip_fn: &ClipFunction,
    threshold: f64,
    mask_shape: (usize, usize),
) -> Result<MaskingOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::contract(format!("threshold {threshold} outside [0, 1]")));
    }
    if mask_shape.0 > tensor.rows() || mask_shape.1 > tensor.cols() {
        return Err(Error::contract(format!(
            "mask {}x{} larger than {}x{} feature grid",
            mask_shape.0,
            mask_shape.1,
            tensor.rows(),
            tensor.cols()
        )));
    }
    if matches!(clip_fn, ClipFunction::SaturatingTanh) && threshold < 1.0 {
        return Err(Error::contract(
            "the saturating clip requires threshold 1 (detection disabled)",
        ));
    }
    let cells = tensor.rows() * tensor.cols();
    let mut evidence = Vec::with_capacity(tensor.classes());
    let mut windows = Vec::with_capacity(tensor.classes());
    for class in 0..tensor.classes() {
        let mut slice = tensor.class_slice(class)?;
        for v in slice.iter_mut() {
            *v = clip_fn.apply(*v);
        }
        let detected = if threshold >= 1.0 {
            None
        } else {
            detect(&slice, tensor.rows(), tensor.cols(), threshold, mask_shape)?
        };
        if let Some(w) = detected {
            for r in w.row0..w.row0 + w.rows {
                for c in w.col0..w.col0 + w.cols {
                    slice[r * tensor.cols() + c] = 0.0;
                }
            }
        }
        let s: f64 = slice[..cells].iter().sum();
        evidence.push(s);
        windows.push(detected);
    }
    Ok(MaskingOutcome {
        predicted: argmax_lowest(&evidence),
        per_class_evidence: evidence,
        detected_windows: windows,
    })
}

/// Clipped-sum baseline: saturating tanh clip, per-class sum, argmax.
pub fn cbn_aggregate(tensor: &FeatureTensor) -> Result<usize> {
    if tensor.kind() != FeatureKind::Logits {
        return Err(Error::contract("clipped-sum aggregation requires logits features"));
    }
    let clipped = tensor
        .values()
        .iter()
        .map(|v| saturating_tanh(*v))
        .collect::<Vec<_>>();
    let mut sums = vec![0.0; tensor.classes()];
    for cell in clipped.chunks_exact(tensor.classes()) {
        for (s, v) in sums.iter_mut().zip(cell) {
            *s += v;
        }
    }
    Ok(argmax_lowest(&sums))
}

/// Majority vote over local predictions. With confidence features and an
/// abstention threshold, cells whose top confidence falls below the threshold
/// do not vote. Returns the winning class (ties toward the lowest index) and
/// the vote counts.
pub fn ds_majority(
    tensor: &FeatureTensor,
    abstain_threshold: Option<f64>,
) -> Result<(usize, Vec<usize>)> {
    match tensor.kind() {
        FeatureKind::Prediction => {
            if abstain_threshold.is_some() {
                return Err(Error::contract(
                    "abstention threshold requires confidence features",
                ));
            }
        }
        FeatureKind::Confidence => {}
        FeatureKind::Logits => {
            return Err(Error::contract(
                "majority vote requires prediction or confidence features",
            ));
        }
    }
    let mut counts = vec![0usize; tensor.classes()];
    for row in 0..tensor.rows() {
        for col in 0..tensor.cols() {
            let cell = tensor.cell(row, col);
            let vote = argmax_lowest(cell);
            if let Some(t) = abstain_threshold {
                if cell[vote] < t {
                    continue;
                }
            }
            counts[vote] += 1;
        }
    }
    let winner = {
        let as_f: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        argmax_lowest(&as_f)
    };
    Ok((winner, counts))
}

/// Insecure baseline: argmax of the per-class mean of local logits.
pub fn mean_aggregate(tensor: &FeatureTensor) -> Result<usize> {
    if tensor.kind() != FeatureKind::Logits {
        return Err(Error::contract("mean aggregation requires logits features"));
    }
    let cells = (tensor.rows() * tensor.cols()) as f64;
    let mut sums = vec![0.0; tensor.classes()];
    for cell in tensor.values().chunks_exact(tensor.classes()) {
        for (s, v) in sums.iter_mut().zip(cell) {
            *s += v;
        }
    }
    for s in sums.iter_mut() {
        *s /= cells;
    }
    Ok(argmax_lowest(&sums))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FeatureTensor;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn prediction_tensor(rows: usize, cols: usize, classes: usize, votes: &[usize]) -> FeatureTensor {
        assert_eq!(votes.len(), rows * cols);
        let mut values = vec![0.0; rows * cols * classes];
        for (cell, &v) in votes.iter().enumerate() {
            values[cell * classes + v] = 1.0;
        }
        FeatureTensor::new(rows, cols, classes, FeatureKind::Prediction, values).unwrap()
    }

    #[test]
    fn detect_returns_none_on_zero_slice() {
        let slice = vec![0.0; 16];
        assert_eq!(detect(&slice, 4, 4, 0.0, (2, 2)).unwrap(), None);
    }

    #[test]
    fn detect_finds_single_spike() {
        let mut slice = vec![0.0; 16];
        slice[9] = 10.0; // row 2, col 1
        let w = detect(&slice, 4, 4, 0.0, (2, 2)).unwrap().unwrap();
        // First window in row-major order containing the spike.
        assert_eq!((w.row0, w.col0), (1, 0));
        assert!(w.contains_cell(2, 1));
    }

    #[test]
    fn detect_respects_threshold_on_uniform_slice() {
        let slice = vec![1.0; 16];
        // max window sum 4, total 16: 0.25 <= 0.9 means no detection.
        assert_eq!(detect(&slice, 4, 4, 0.9, (2, 2)).unwrap(), None);
        assert!(detect(&slice, 4, 4, 0.2, (2, 2)).unwrap().is_some());
    }

    #[test]
    fn masking_on_unanimous_tensor() {
        let votes = vec![2; 9];
        let t = prediction_tensor(3, 3, 4, &votes);
        let config = MaskingConfig::with_defaults((2, 2)).unwrap();
        let out = robust_masking(&t, &config).unwrap();
        assert_eq!(out.predicted, 2);
        // Each class's detected window removes at most mask-many evidence.
        for (class, s) in out.per_class_evidence.iter().enumerate() {
            let total = t.class_total(class).unwrap();
            assert!(*s >= total - 4.0);
        }
    }

    #[test]
    fn masking_hand_enumerated_three_by_three() {
        // 5 cells vote class 0; the bottom-right 2x2 block votes class 1.
        let votes = vec![0, 0, 0, 0, 1, 1, 0, 1, 1];
        let t = prediction_tensor(3, 3, 2, &votes);
        let config = MaskingConfig::with_defaults((2, 2)).unwrap();
        let out = robust_masking(&t, &config).unwrap();
        // Class 1: its 2x2 block is fully masked, so s_1 = 0.
        assert_eq!(out.per_class_evidence[1], 0.0);
        // Class 0: windows hold sums {3,2,2,0}; the top-left window (sum 3)
        // is masked, leaving s_0 = 2.
        assert_eq!(out.per_class_evidence[0], 2.0);
        assert_eq!(out.predicted, 0);
        let w = out.detected_windows[0].unwrap();
        assert_eq!((w.row0, w.col0), (0, 0));
    }

    #[test]
    fn threshold_one_skips_detection() {
        let votes = vec![1, 1, 1, 0, 0, 0, 0, 0, 0];
        let t = prediction_tensor(3, 3, 2, &votes);
        let config = MaskingConfig::new(ClipBounds::default(), 1.0, (2, 2)).unwrap();
        let out = robust_masking(&t, &config).unwrap();
        assert_eq!(out.detected_windows, vec![None, None]);
        assert_eq!(out.per_class_evidence, vec![6.0, 3.0]);
        assert_eq!(out.predicted, 0);
    }

    #[test]
    fn cbn_clip_fixed_point() {
        assert_eq!(saturating_tanh(20.0), 0.0);
    }

    #[test]
    fn cbn_all_equal_ties_to_class_zero() {
        let t = FeatureTensor::new(2, 2, 3, FeatureKind::Logits, vec![1.5; 12]).unwrap();
        assert_eq!(cbn_aggregate(&t).unwrap(), 0);
    }

    #[test]
    fn cbn_matches_scalar_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let values: Vec<f64> = (0..3 * 3 * 3).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let t = FeatureTensor::new(3, 3, 3, FeatureKind::Logits, values.clone()).unwrap();
        let mut sums = [0.0f64; 3];
        for cell in values.chunks_exact(3) {
            for k in 0..3 {
                sums[k] += (0.05 * cell[k] - 1.0).tanh();
            }
        }
        let want = argmax_lowest(&sums);
        assert_eq!(cbn_aggregate(&t).unwrap(), want);
    }

    #[test]
    fn cbn_rejects_non_logits() {
        let t = prediction_tensor(2, 2, 2, &[0, 1, 0, 1]);
        assert!(cbn_aggregate(&t).is_err());
    }

    #[test]
    fn majority_vote_unanimous() {
        let t = prediction_tensor(2, 3, 3, &[1; 6]);
        let (winner, counts) = ds_majority(&t, None).unwrap();
        assert_eq!(winner, 1);
        assert_eq!(counts, vec![0, 6, 0]);
    }

    #[test]
    fn majority_vote_all_abstain_on_uniform_confidence() {
        let n = 6;
        let values = vec![1.0 / n as f64; 4 * n];
        let t = FeatureTensor::new(2, 2, n, FeatureKind::Confidence, values).unwrap();
        let (winner, counts) = ds_majority(&t, Some(0.2)).unwrap();
        assert_eq!(counts, vec![0; n]);
        assert_eq!(winner, 0);
    }

    #[test]
    fn majority_vote_tie_to_lowest() {
        let t = prediction_tensor(1, 4, 2, &[0, 1, 0, 1]);
        let (winner, counts) = ds_majority(&t, None).unwrap();
        assert_eq!(counts, vec![2, 2]);
        assert_eq!(winner, 0);
    }

    fn random_prediction_tensor(rng: &mut StdRng, rows: usize, cols: usize, classes: usize) -> FeatureTensor {
        let votes: Vec<usize> = (0..rows * cols).map(|_| rng.gen_range(0..classes)).collect();
        prediction_tensor(rows, cols, classes, &votes)
    }

    #[test]
    fn masking_with_threshold_one_reduces_to_majority_vote() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let classes = rng.gen_range(2..5);
            let t = random_prediction_tensor(&mut rng, 4, 4, classes);
            let config = MaskingConfig::new(ClipBounds::default(), 1.0, (2, 2)).unwrap();
            let masked = robust_masking(&t, &config).unwrap();
            let (vote, _) = ds_majority(&t, None).unwrap();
            assert_eq!(masked.predicted, vote);
        }
    }

    #[test]
    fn masking_with_tanh_clip_reduces_to_clipped_sum() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let classes = rng.gen_range(2..5);
            let values: Vec<f64> = (0..4 * 4 * classes).map(|_| rng.gen_range(-40.0..40.0)).collect();
            let t = FeatureTensor::new(4, 4, classes, FeatureKind::Logits, values).unwrap();
            let masked =
                robust_masking_with_clip(&t, &ClipFunction::SaturatingTanh, 1.0, (2, 2)).unwrap();
            assert_eq!(masked.predicted, cbn_aggregate(&t).unwrap());
        }
    }

    #[test]
    fn tanh_clip_with_detection_rejected() {
        let t = FeatureTensor::new(2, 2, 2, FeatureKind::Logits, vec![1.0; 8]).unwrap();
        assert!(robust_masking_with_clip(&t, &ClipFunction::SaturatingTanh, 0.5, (1, 1)).is_err());
    }

    proptest! {
        /// Masking never increases a class's evidence beyond its clipped total.
        #[test]
        fn masking_never_exceeds_clipped_total(
            values in proptest::collection::vec(-3.0f64..5.0, 4 * 4 * 2),
            threshold in 0.0f64..=1.0,
        ) {
            let t = FeatureTensor::new(4, 4, 2, FeatureKind::Logits, values).unwrap();
            let config = MaskingConfig::new(ClipBounds::default(), threshold, (2, 2)).unwrap();
            let out = robust_masking(&t, &config).unwrap();
            let clipped = crate::tensor::clip(&t, config.bounds);
            for class in 0..2 {
                let total = clipped.class_total(class).unwrap();
                prop_assert!(out.per_class_evidence[class] <= total + 1e-12);
            }
        }

        /// Detection is deterministic and always fires at threshold 0 on a
        /// nonzero slice.
        #[test]
        fn detect_deterministic_and_total_at_zero_threshold(
            values in proptest::collection::vec(0.0f64..4.0, 16),
        ) {
            let first = detect(&values, 4, 4, 0.0, (2, 2)).unwrap();
            let second = detect(&values, 4, 4, 0.0, (2, 2)).unwrap();
            prop_assert_eq!(first, second);
            let total: f64 = values.iter().sum();
            if total > 0.0 {
                prop_assert!(first.is_some());
            }
        }
    }
}
