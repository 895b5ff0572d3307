//! Ground-truth masks and detection scoring.
//!
//! Masks use a 1-inch grid. In the serialized [`GroundTruthMask`], 0 marks a
//! seeded defect and 1 marks intact concrete; [`BinaryMask`] is the plain
//! boolean form (`true` = defect) used for predicted rasters and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::PeakReading;
use crate::synthlab::DefectRect;

/// Row-major boolean grid, `true` = defect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<bool>,
}

impl BinaryMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        BinaryMask {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let cells = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        BinaryMask { rows, cols, cells }
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.cols + c] = v;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&v| v).count()
    }

    /// Columns `c0..c1` of every row.
    pub fn crop_cols(&self, c0: usize, c1: usize) -> BinaryMask {
        let c1 = c1.min(self.cols);
        let c0 = c0.min(c1);
        BinaryMask::from_fn(self.rows, c1 - c0, |r, c| self.get(r, c0 + c))
    }

    fn check_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", other.rows, other.cols),
                actual: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMask {
    pub width_in: f64,
    pub height_in: f64,
    pub resolution_in: f64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, 0 = defect, 1 = intact.
    pub cells: Vec<u8>,
    pub rects: Vec<DefectRect>,
}

/// Rasterizes defect rectangles: a cell is 0 iff its center lies in a rect.
pub fn build_mask(
    rects: &[DefectRect],
    width_in: f64,
    height_in: f64,
    resolution_in: f64,
) -> Result<GroundTruthMask> {
    if !(resolution_in > 0.0 && width_in > 0.0 && height_in > 0.0) {
        return Err(Error::InvalidInput(
            "mask dimensions must be positive".into(),
        ));
    }
    if let Some(r) = rects.iter().find(|r| !r.inside(width_in, height_in)) {
        return Err(Error::InvalidInput(format!(
            "defect rect at ({}, {}) size {}x{} is outside the {width_in}x{height_in} mask",
            r.x_in, r.y_in, r.w_in, r.h_in
        )));
    }
    let rows = (height_in / resolution_in).round() as usize;
    let cols = (width_in / resolution_in).round() as usize;
    let mut cells = vec![1u8; rows * cols];
    for r in 0..rows {
        let cy = (r as f64 + 0.5) * resolution_in;
        for c in 0..cols {
            let cx = (c as f64 + 0.5) * resolution_in;
            if rects.iter().any(|d| d.contains(cx, cy)) {
                cells[r * cols + c] = 0;
            }
        }
    }
    Ok(GroundTruthMask {
        width_in,
        height_in,
        resolution_in,
        rows,
        cols,
        cells,
        rects: rects.to_vec(),
    })
}

impl GroundTruthMask {
    pub fn is_defect(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.cols + c] == 0
    }

    pub fn defect_cells(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 0).count()
    }

    pub fn defect_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.rows, self.cols, |r, c| self.is_defect(r, c))
    }

    /// Cell (row, col) containing a point, or `None` outside the extent.
    /// Points on the far edges belong to the last row/column.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= 0.0 && x <= self.width_in && y >= 0.0 && y <= self.height_in) {
            return None;
        }
        let c = ((x / self.resolution_in).floor() as usize).min(self.cols - 1);
        let r = ((y / self.resolution_in).floor() as usize).min(self.rows - 1);
        Some((r, c))
    }

    pub fn cell_center_of(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        self.cell_of(x, y).map(|(r, c)| {
            (
                (c as f64 + 0.5) * self.resolution_in,
                (r as f64 + 0.5) * self.resolution_in,
            )
        })
    }

    /// Defect test for an in-extent point; out-of-extent points read as intact.
    pub fn is_defect_at(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y)
            .is_some_and(|(r, c)| self.is_defect(r, c))
    }

    /// True iff the cell containing the point is a defect cell.
    pub fn point_in_defect(&self, x: f64, y: f64) -> Result<bool> {
        self.cell_of(x, y)
            .map(|(r, c)| self.is_defect(r, c))
            .ok_or(Error::OutOfExtent { x, y })
    }

    /// Column range whose cell centers fall in `[x_lo, x_hi)`.
    pub fn column_range(&self, x_lo: f64, x_hi: f64) -> (usize, usize) {
        let first = (x_lo / self.resolution_in - 0.5).ceil().max(0.0) as usize;
        let end = (x_hi / self.resolution_in - 0.5).ceil().max(0.0) as usize;
        (first.min(self.cols), end.min(self.cols))
    }

    /// Marks every cell whose center lies within `radius_in` of a point.
    pub fn rasterize_points(&self, points: &[(f64, f64)], radius_in: f64) -> BinaryMask {
        let mut out = BinaryMask::new(self.rows, self.cols);
        let res = self.resolution_in;
        let r2 = radius_in * radius_in;
        for &(px, py) in points {
            let c_lo = ((px - radius_in) / res - 0.5).ceil().max(0.0) as usize;
            let c_hi = (((px + radius_in) / res - 0.5).floor().max(-1.0) + 1.0) as usize;
            let r_lo = ((py - radius_in) / res - 0.5).ceil().max(0.0) as usize;
            let r_hi = (((py + radius_in) / res - 0.5).floor().max(-1.0) + 1.0) as usize;
            for r in r_lo..r_hi.min(self.rows) {
                let cy = (r as f64 + 0.5) * res;
                for c in c_lo..c_hi.min(self.cols) {
                    let cx = (c as f64 + 0.5) * res;
                    if (cx - px).powi(2) + (cy - py).powi(2) <= r2 {
                        out.set(r, c, true);
                    }
                }
            }
        }
        out
    }
}

/// |A ∩ B| / |A ∪ B| over defect cells; 0 when the union is empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.check_shape(gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.cells.iter().zip(&gt.cells) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Cell-level precision, recall and F1. Empty denominators give 0.
pub fn precision_recall_f1(pred: &BinaryMask, gt: &BinaryMask) -> Result<Prf> {
    pred.check_shape(gt)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.cells.iter().zip(&gt.cells) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(Prf {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1: f1_score(precision, recall),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlayMetrics {
    pub defective_points: usize,
    pub valid_points: usize,
    pub overlap_pct: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayConfig {
    /// Disc radius used to rasterize detected points before IoU.
    pub dilation_radius_in: f64,
    /// Restricts IoU and recall to cells with center x in `[lo, hi)`.
    pub region_x: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub valid: Vec<PeakReading>,
    pub metrics: OverlayMetrics,
    pub raster: BinaryMask,
}

/// Scores clustered defective points against the mask.
///
/// Valid points are defective points inside a defect cell. Point precision is
/// the valid fraction; recall counts defect cells holding a valid point over
/// defect cells holding any scan point; IoU compares the dilated point raster
/// with the mask.
pub fn overlay(
    defective: &[PeakReading],
    mask: &GroundTruthMask,
    scan_points: &[(f64, f64)],
    config: &OverlayConfig,
) -> Result<Overlay> {
    let mut valid = Vec::new();
    for p in defective {
        if mask.point_in_defect(p.x_in, p.y_in)? {
            valid.push(p.clone());
        }
    }

    let (c0, c1) = match config.region_x {
        Some((lo, hi)) => mask.column_range(lo, hi),
        None => (0, mask.cols),
    };
    let in_region = |cell: (usize, usize)| cell.1 >= c0 && cell.1 < c1;

    let defect_cells_of =
        |pts: &mut dyn Iterator<Item = (f64, f64)>| -> Result<Vec<(usize, usize)>> {
            let mut cells = Vec::new();
            for (x, y) in pts {
                let cell = mask.cell_of(x, y).ok_or(Error::OutOfExtent { x, y })?;
                if mask.is_defect(cell.0, cell.1) && in_region(cell) {
                    cells.push(cell);
                }
            }
            cells.sort_unstable();
            cells.dedup();
            Ok(cells)
        };
    let reachable = defect_cells_of(&mut scan_points.iter().copied())?;
    let hit = defect_cells_of(&mut valid.iter().map(|p| (p.x_in, p.y_in)))?;

    let points: Vec<(f64, f64)> = defective.iter().map(|p| (p.x_in, p.y_in)).collect();
    let raster = mask.rasterize_points(&points, config.dilation_radius_in);

    if defective.is_empty() {
        return Ok(Overlay {
            valid,
            metrics: OverlayMetrics::default(),
            raster,
        });
    }

    let overlap_pct = valid.len() as f64 / defective.len() as f64;
    let recall = ratio(hit.len(), reachable.len());
    let iou = iou(
        &raster.crop_cols(c0, c1),
        &mask.defect_mask().crop_cols(c0, c1),
    )?;
    let metrics = OverlayMetrics {
        defective_points: defective.len(),
        valid_points: valid.len(),
        overlap_pct,
        iou,
        precision: overlap_pct,
        recall,
        f1: f1_score(overlap_pct, recall),
    };
    Ok(Overlay {
        valid,
        metrics,
        raster,
    })
}
