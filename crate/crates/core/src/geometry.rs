//! Receptive-field arithmetic: the mask-window size implied by a patch bound,
//! per axis, and the exact map from an image-space patch placement to the
//! feature cells it can corrupt.
//!
//! The feature grid uses valid-placement tiling: receptive fields start at
//! pixel 0 and step by the stride, with no padding, so a feature grid axis has
//! `(image - rf) / stride + 1` cells.

use crate::error::{Error, Result};
use crate::tensor::Window;

/// Receptive-field size and stride per axis, plus the image and feature grid
/// dimensions they tie together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RFGeometry {
    rf_rows: usize,
    rf_cols: usize,
    stride_rows: usize,
    stride_cols: usize,
    image_rows: usize,
    image_cols: usize,
    feature_rows: usize,
    feature_cols: usize,
}

impl RFGeometry {
    pub fn new(
        rf_rows: usize,
        rf_cols: usize,
        stride_rows: usize,
        stride_cols: usize,
        image_rows: usize,
        image_cols: usize,
    ) -> Result<Self> {
        for (name, v) in [
            ("rf_rows", rf_rows),
            ("rf_cols", rf_cols),
            ("stride_rows", stride_rows),
            ("stride_cols", stride_cols),
            ("image_rows", image_rows),
            ("image_cols", image_cols),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be positive")));
            }
        }
        if rf_rows > image_rows || rf_cols > image_cols {
            return Err(Error::contract(format!(
                "receptive field {rf_rows}x{rf_cols} larger than image {image_rows}x{image_cols}"
            )));
        }
        Ok(RFGeometry {
            rf_rows,
            rf_cols,
            stride_rows,
            stride_cols,
            image_rows,
            image_cols,
            feature_rows: (image_rows - rf_rows) / stride_rows + 1,
            feature_cols: (image_cols - rf_cols) / stride_cols + 1,
        })
    }

    /// Square receptive field and isotropic stride.
    pub fn square(rf: usize, stride: usize, image_rows: usize, image_cols: usize) -> Result<Self> {
        RFGeometry::new(rf, rf, stride, stride, image_rows, image_cols)
    }

    pub fn rf_rows(&self) -> usize {
        self.rf_rows
    }

    pub fn rf_cols(&self) -> usize {
        self.rf_cols
    }

    pub fn stride_rows(&self) -> usize {
        self.stride_rows
    }

    pub fn stride_cols(&self) -> usize {
        self.stride_cols
    }

    pub fn image_rows(&self) -> usize {
        self.image_rows
    }

    pub fn image_cols(&self) -> usize {
        self.image_cols
    }

    pub fn feature_rows(&self) -> usize {
        self.feature_rows
    }

    pub fn feature_cols(&self) -> usize {
        self.feature_cols
    }
}

/// An upper bound on the adversarial patch, in pixels per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchSpec {
    pub rows: usize,
    pub cols: usize,
}

impl PatchSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("patch dimensions must be positive"));
        }
        Ok(PatchSpec { rows, cols })
    }

    pub fn square(side: usize) -> Result<Self> {
        PatchSpec::new(side, side)
    }

    pub fn fits(&self, geom: &RFGeometry) -> bool {
        self.rows <= geom.image_rows && self.cols <= geom.image_cols
    }
}

/// Worst-case number of feature cells a patch of size `p` can intersect on
/// one axis: ceil((p + r - 1) / s).
pub fn window_size(p: usize, r: usize, s: usize) -> usize {
    debug_assert!(p >= 1 && r >= 1 && s >= 1);
    (p + r - 1).div_ceil(s)
}

/// Mask window shape for a rectangular patch, applied independently per axis
/// and clamped to the feature grid. The clamp, rather than an error, keeps
/// patches larger than the defended regime well defined.
pub fn mask_shape(patch: &PatchSpec, geom: &RFGeometry) -> (usize, usize) {
    let wr = window_size(patch.rows, geom.rf_rows, geom.stride_rows).min(geom.feature_rows);
    let wc = window_size(patch.cols, geom.rf_cols, geom.stride_cols).min(geom.feature_cols);
    (wr, wc)
}

/// Feature-cell index range [first, last] hit by a pixel interval
/// [anchor, anchor + extent) on one axis, or None when the interval lies
/// entirely between or beyond receptive-field placements.
fn affected_axis(
    anchor: usize,
    extent: usize,
    rf: usize,
    stride: usize,
    cells: usize,
) -> Option<(usize, usize)> {
    // Placement i covers pixels [i*stride, i*stride + rf); it intersects the
    // patch iff i*stride < anchor + extent and anchor < i*stride + rf.
    let first = if anchor < rf {
        0
    } else {
        (anchor - rf) / stride + 1
    };
    let last_unclamped = (anchor + extent - 1) / stride;
    let last = last_unclamped.min(cells - 1);
    if first > last {
        return None;
    }
    Some((first, last))
}

/// The minimal feature-space window containing every cell whose receptive
/// field intersects the anchored patch. Returns None when no receptive field
/// reaches the patch (possible in the unswept margin left by the stride).
pub fn affected_cells(
    patch_anchor: (usize, usize),
    patch: &PatchSpec,
    geom: &RFGeometry,
) -> Result<Option<Window>> {
    let (ar, ac) = patch_anchor;
    if ar + patch.rows > geom.image_rows || ac + patch.cols > geom.image_cols {
        return Err(Error::contract(format!(
            "patch {}x{} at ({ar}, {ac}) extends outside {}x{} image",
            patch.rows, patch.cols, geom.image_rows, geom.image_cols
        )));
    }
    let rows = affected_axis(ar, patch.rows, geom.rf_rows, geom.stride_rows, geom.feature_rows);
    let cols = affected_axis(ac, patch.cols, geom.rf_cols, geom.stride_cols, geom.feature_cols);
    match (rows, cols) {
        (Some((r0, r1)), Some((c0, c1))) => Ok(Some(Window {
            row0: r0,
            col0: c0,
            rows: r1 - r0 + 1,
            cols: c1 - c0 + 1,
        })),
        _ => Ok(None),
    }
}
