//! Dense tensor primitives: images, per-location class features, rectangular
//! feature-space windows, clipping bounds, and windowed evidence sums.
//!
//! All types are immutable after construction and all operations are pure.
//! Feature values are stored dense in row-major (row, column, class) order;
//! image pixels in row-major (row, column, channel) order.

use crate::error::{Error, Result};

/// What the per-cell class vectors of a [`FeatureTensor`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Raw per-location classifier outputs; any finite reals.
    Logits,
    /// Per-location softmax outputs; each cell sums to 1.
    Confidence,
    /// Per-location one-hot argmax outputs.
    Prediction,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FeatureKind::Logits => "logits",
            FeatureKind::Confidence => "confidence",
            FeatureKind::Prediction => "prediction",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(FeatureKind::Logits),
            "confidence" => Ok(FeatureKind::Confidence),
            "prediction" => Ok(FeatureKind::Prediction),
            other => Err(Error::Config(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// An H x W x C image with pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    rows: usize,
    cols: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(rows: usize, cols: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::contract("image dimensions must be positive"));
        }
        if pixels.len() != rows * cols * channels {
            return Err(Error::contract(format!(
                "pixel count {} does not match {}x{}x{}",
                pixels.len(),
                rows,
                cols,
                channels
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(ImageTensor { rows, cols, channels, pixels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[(row * self.cols + col) * self.channels + channel]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Clamped replacement of a single pixel; only used by attack code, which
    /// owns its working copy.
    pub(crate) fn set_pixel(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.pixels[(row * self.cols + col) * self.channels + channel] = value.clamp(0.0, 1.0);
    }

    /// Unclamped replacement, for finite-difference probes that step slightly
    /// outside [0, 1].
    pub(crate) fn set_pixel_raw(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        self.pixels[(row * self.cols + col) * self.channels + channel] = value;
    }
}

/// A W' x H' grid of per-location class vectors (the local feature tensor).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    rows: usize,
    cols: usize,
    classes: usize,
    kind: FeatureKind,
    values: Vec<f64>,
}

impl FeatureTensor {
    /// Validates the kind-specific cell invariants:
    /// confidence cells sum to 1 within 1e-6 with values in [0, 1],
    /// prediction cells are exactly one-hot, logits are finite.
    pub fn new(
        rows: usize,
        cols: usize,
        classes: usize,
        kind: FeatureKind,
        values: Vec<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || classes == 0 {
            return Err(Error::contract("feature dimensions must be positive"));
        }
        if values.len() != rows * cols * classes {
            return Err(Error::contract(format!(
                "value count {} does not match {}x{}x{}",
                values.len(),
                rows,
                cols,
                classes
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite feature value {bad}")));
        }
        match kind {
            FeatureKind::Logits => {}
            FeatureKind::Confidence => {
                for cell in values.chunks_exact(classes) {
                    if cell.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::contract("confidence value outside [0, 1]"));
                    }
                    let sum: f64 = cell.iter().sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::contract(format!(
                            "confidence cell sums to {sum}, expected 1"
                        )));
                    }
                }
            }
            FeatureKind::Prediction => {
                for cell in values.chunks_exact(classes) {
                    let ones = cell.iter().filter(|v| **v == 1.0).count();
                    let zeros = cell.iter().filter(|v| **v == 0.0).count();
                    if ones != 1 || ones + zeros != classes {
                        return Err(Error::contract("prediction cell is not one-hot"));
                    }
                }
            }
        }
        Ok(FeatureTensor { rows, cols, classes, kind, values })
    }

    /// Constructor for derived tensors (clipped, masked, enumerated) whose
    /// values are valid by construction. Finiteness is still the caller's
    /// obligation; the kind tag is carried through even when a transformation
    /// no longer satisfies the kind's cell-level invariant.
    pub(crate) fn from_raw(
        rows: usize,
        cols: usize,
        classes: usize,
        kind: FeatureKind,
        values: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(values.len(), rows * cols * classes);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureTensor { rows, cols, classes, kind, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn value(&self, row: usize, col: usize, class: usize) -> f64 {
        self.values[(row * self.cols + col) * self.classes + class]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The length-N class vector of one cell (contiguous in storage).
    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let base = (row * self.cols + col) * self.classes;
        &self.values[base..base + self.classes]
    }

    /// Copies one class's 2-D slice into a rows*cols buffer.
    pub fn class_slice(&self, class: usize) -> Result<Vec<f64>> {
        if class >= self.classes {
            return Err(Error::contract(format!(
                "class {} out of range ({} classes)",
                class, self.classes
            )));
        }
        Ok((0..self.rows * self.cols)
            .map(|i| self.values[i * self.classes + class])
            .collect())
    }

    /// Full evidence of one class, summed in row-major cell order.
    pub fn class_total(&self, class: usize) -> Result<f64> {
        Ok(self.class_slice(class)?.iter().sum())
    }
}

/// A rectangular region of feature cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Window {
    pub fn new(row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("window dimensions must be positive"));
        }
        Ok(Window { row0, col0, rows, cols })
    }

    /// Whether the window lies fully inside a grid of the given shape.
    pub fn fits(&self, grid_rows: usize, grid_cols: usize) -> bool {
        self.row0 + self.rows <= grid_rows && self.col0 + self.cols <= grid_cols
    }

    pub fn contains_cell(&self, row: usize, col: usize) -> bool {
        row >= self.row0 && row < self.row0 + self.rows && col >= self.col0 && col < self.col0 + self.cols
    }

    /// Whether `other` lies fully inside this window.
    pub fn covers(&self, other: &Window) -> bool {
        self.row0 <= other.row0
            && self.col0 <= other.col0
            && self.row0 + self.rows >= other.row0 + other.rows
            && self.col0 + self.cols >= other.col0 + other.cols
    }

    pub fn overlap_cells(&self, other: &Window) -> usize {
        let r0 = self.row0.max(other.row0);
        let r1 = (self.row0 + self.rows).min(other.row0 + other.rows);
        let c0 = self.col0.max(other.col0);
        let c1 = (self.col0 + self.cols).min(other.col0 + other.cols);
        r1.saturating_sub(r0) * c1.saturating_sub(c0)
    }

    pub fn cell_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Elementwise clipping interval. `hi` may be `f64::INFINITY`, which is the
/// genuine "no upper bound" state rather than a finite surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBounds {
    lo: f64,
    hi: f64,
}

impl ClipBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() {
            return Err(Error::contract("lower clip bound must be finite"));
        }
        if hi.is_nan() || hi < lo {
            return Err(Error::contract(format!("invalid clip bounds [{lo}, {hi}]")));
        }
        Ok(ClipBounds { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn apply(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

impl Default for ClipBounds {
    /// The default setting: lower bound 0, no upper bound.
    fn default() -> Self {
        ClipBounds { lo: 0.0, hi: f64::INFINITY }
    }
}

/// Elementwise interval clipping; the kind tag is preserved.
pub fn clip(tensor: &FeatureTensor, bounds: ClipBounds) -> FeatureTensor {
    let values = tensor.values().iter().map(|v| bounds.apply(*v)).collect();
    FeatureTensor::from_raw(tensor.rows, tensor.cols, tensor.classes, tensor.kind, values)
}

fn check_window_and_class(tensor: &FeatureTensor, class: usize, window: &Window) -> Result<()> {
    if class >= tensor.classes {
        return Err(Error::contract(format!(
            "class {} out of range ({} classes)",
            class, tensor.classes
        )));
    }
    if !window.fits(tensor.rows, tensor.cols) {
        return Err(Error::contract(format!(
            "window {:?} does not fit {}x{} grid",
            window, tensor.rows, tensor.cols
        )));
    }
    Ok(())
}

/// Sum of one class's evidence restricted to a window, in row-major order.
pub fn sum_in_window(tensor: &FeatureTensor, class: usize, window: &Window) -> Result<f64> {
    check_window_and_class(tensor, class, window)?;
    let mut sum = 0.0;
    for r in window.row0..window.row0 + window.rows {
        for c in window.col0..window.col0 + window.cols {
            sum += tensor.value(r, c, class);
        }
    }
    Ok(sum)
}

/// Sum of one class's evidence over the complement of a window, in row-major
/// order. Summed directly over the complement cells rather than as
/// `total - in_window` so the result has a fixed rounding behaviour.
pub fn sum_outside_window(tensor: &FeatureTensor, class: usize, window: &Window) -> Result<f64> {
    check_window_and_class(tensor, class, window)?;
    let mut sum = 0.0;
    for r in 0..tensor.rows {
        for c in 0..tensor.cols {
            if !window.contains_cell(r, c) {
                sum += tensor.value(r, c, class);
            }
        }
    }
    Ok(sum)
}

/// All fully contained windows of the given shape, in row-major order of
/// their top-left cell. Partial edge windows are never produced.
pub fn enumerate_windows(
    grid_rows: usize,
    grid_cols: usize,
    wrows: usize,
    wcols: usize,
) -> Result<Vec<Window>> {
    if wrows == 0 || wcols == 0 {
        return Err(Error::contract("window dimensions must be positive"));
    }
    if wrows > grid_rows || wcols > grid_cols {
        return Err(Error::contract(format!(
            "window {wrows}x{wcols} larger than {grid_rows}x{grid_cols} grid"
        )));
    }
    let mut out = Vec::with_capacity((grid_rows - wrows + 1) * (grid_cols - wcols + 1));
    for row0 in 0..=grid_rows - wrows {
        for col0 in 0..=grid_cols - wcols {
            out.push(Window { row0, col0, rows: wrows, cols: wcols });
        }
    }
    Ok(out)
}

/// Index of the largest value, ties broken toward the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_tensor(rows: usize, cols: usize, classes: usize, v: f64) -> FeatureTensor {
        FeatureTensor::from_raw(rows, cols, classes, FeatureKind::Logits, vec![v; rows * cols * classes])
    }

    #[test]
    fn clip_negative_logit_to_lower_bound() {
        let t = uniform_tensor(1, 1, 1, -3.2);
        let c = clip(&t, ClipBounds::default());
        assert_eq!(c.value(0, 0, 0), 0.0);
        assert_eq!(c.kind(), FeatureKind::Logits);
    }

    #[test]
    fn clip_leaves_confidence_unchanged() {
        let t = FeatureTensor::new(2, 2, 2, FeatureKind::Confidence, vec![[0.25, 0.75]; 4].concat())
            .unwrap();
        let c = clip(&t, ClipBounds::default());
        assert_eq!(c.values(), t.values());
    }

    #[test]
    fn clip_saturates_both_ends() {
        let t = FeatureTensor::new(1, 3, 1, FeatureKind::Logits, vec![-1.0, 2.0, 7.0]).unwrap();
        let c = clip(&t, ClipBounds::new(0.0, 5.0).unwrap());
        assert_eq!(c.values(), &[0.0, 2.0, 5.0]);
    }

    #[test]
    fn window_sums_on_uniform_slice() {
        let t = uniform_tensor(3, 3, 1, 1.0);
        let w = Window::new(0, 0, 2, 2).unwrap();
        assert_eq!(sum_in_window(&t, 0, &w).unwrap(), 4.0);
        assert_eq!(sum_outside_window(&t, 0, &w).unwrap(), 5.0);
    }

    #[test]
    fn window_covering_grid_has_empty_complement() {
        let t = uniform_tensor(4, 4, 2, 0.5);
        let w = Window::new(0, 0, 4, 4).unwrap();
        assert_eq!(sum_outside_window(&t, 1, &w).unwrap(), 0.0);
    }

    #[test]
    fn zero_slice_sums_to_zero() {
        let t = uniform_tensor(4, 4, 1, 0.0);
        let w = Window::new(1, 2, 2, 2).unwrap();
        assert_eq!(sum_in_window(&t, 0, &w).unwrap(), 0.0);
    }

    #[test]
    fn in_window_sum_matches_direct_addition() {
        // 4x4 slice with distinct values; oracle is the literal four-term sum.
        let values: Vec<f64> = (0..16).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let t = FeatureTensor::new(4, 4, 1, FeatureKind::Logits, values.clone()).unwrap();
        let w = Window::new(1, 1, 2, 2).unwrap();
        let direct = values[5] + values[6] + values[9] + values[10];
        assert_eq!(sum_in_window(&t, 0, &w).unwrap(), direct);
    }

    #[test]
    fn window_count_examples() {
        assert_eq!(enumerate_windows(3, 3, 2, 2).unwrap().len(), 4);
        assert_eq!(enumerate_windows(5, 5, 5, 5).unwrap().len(), 1);
        // 6x4 grid, 2x3 window: count by double loop.
        let mut count = 0;
        for _ in 0..=6 - 2 {
            for _ in 0..=4 - 3 {
                count += 1;
            }
        }
        assert_eq!(enumerate_windows(6, 4, 2, 3).unwrap().len(), count);
        assert_eq!(count, 10);
    }

    #[test]
    fn oversized_window_rejected() {
        assert!(enumerate_windows(3, 3, 4, 1).is_err());
    }

    #[test]
    fn out_of_range_class_rejected() {
        let t = uniform_tensor(3, 3, 2, 1.0);
        let w = Window::new(0, 0, 1, 1).unwrap();
        assert!(sum_in_window(&t, 2, &w).is_err());
    }

    #[test]
    fn prediction_kind_must_be_one_hot() {
        assert!(FeatureTensor::new(1, 1, 2, FeatureKind::Prediction, vec![0.5, 0.5]).is_err());
        assert!(FeatureTensor::new(1, 1, 2, FeatureKind::Prediction, vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn confidence_kind_must_sum_to_one() {
        assert!(FeatureTensor::new(1, 1, 2, FeatureKind::Confidence, vec![0.6, 0.6]).is_err());
    }

    #[test]
    fn infinite_upper_bound_is_identity_above_lo() {
        let b = ClipBounds::default();
        assert_eq!(b.apply(1e300), 1e300);
        assert_eq!(b.apply(-1.0), 0.0);
    }

    #[test]
    fn argmax_ties_toward_lowest_index() {
        assert_eq!(argmax_lowest(&[1.0, 1.0]), 0);
        assert_eq!(argmax_lowest(&[0.0, 2.0, 2.0]), 1);
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(values in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let t = FeatureTensor::new(2, 2, 3, FeatureKind::Logits, values).unwrap();
            let b = ClipBounds::new(0.0, 4.0).unwrap();
            let once = clip(&t, b);
            let twice = clip(&once, b);
            prop_assert_eq!(once.values(), twice.values());
        }

        #[test]
        fn in_plus_out_equals_total(
            values in proptest::collection::vec(-5.0f64..5.0, 24),
            row0 in 0usize..3,
            col0 in 0usize..2,
        ) {
            let t = FeatureTensor::new(4, 3, 2, FeatureKind::Logits, values).unwrap();
            let w = Window::new(row0, col0, 2, 2).unwrap();
            for class in 0..2 {
                let total = t.class_total(class).unwrap();
                let sum = sum_in_window(&t, class, &w).unwrap()
                    + sum_outside_window(&t, class, &w).unwrap();
                let tol = 1e-9 * total.abs().max(1.0);
                prop_assert!((sum - total).abs() <= tol);
            }
        }

        #[test]
        fn enumerated_windows_unique_and_contained(
            rows in 1usize..7, cols in 1usize..7, wr in 1usize..4, wc in 1usize..4,
        ) {
            prop_assume!(wr <= rows && wc <= cols);
            let ws = enumerate_windows(rows, cols, wr, wc).unwrap();
            prop_assert_eq!(ws.len(), (rows - wr + 1) * (cols - wc + 1));
            for (i, a) in ws.iter().enumerate() {
                prop_assert!(a.fits(rows, cols));
                for b in &ws[i + 1..] {
                    prop_assert!(a != b);
                }
            }
        }
    }
}
