//! Lane-following regularization: intent masks, nearest-neighbor matching,
//! the intent loss, and the centerline distance loss.
//!
//! Centerline distances are answered by [`CenterlineField`], a structure
//! precomputed once per grid. It stores, per row, the nearest
//! centerline-pixel column to the left and right of every column (the
//! row-wise half of an exact Euclidean distance transform). A query for a
//! continuous point scans the row bands and combines them, which returns
//! the exact nearest centerline pixel with deterministic ties: lowest row,
//! then lowest column.

use crate::error::{Error, Result};
use crate::grid::{ClassTaxonomy, GridSpec, SemanticGrid};
use crate::planner::{LossGrad, Trajectory};

/// Per-point lane-following flags. Length matches its trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentMask {
    values: Vec<bool>,
}

impl IntentMask {
    pub fn new(values: Vec<bool>) -> Self {
        IntentMask { values }
    }

    pub fn all_zero(len: usize) -> Self {
        IntentMask {
            values: vec![false; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: usize) -> bool {
        self.values[idx]
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    /// Numeric view (0/1) for serialization and soft-loss inputs.
    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Nearest-expert assignment: `assignment[t]` is the expert index matched
/// to predicted point `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    assignment: Vec<usize>,
}

impl Matching {
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn get(&self, idx: usize) -> usize {
        self.assignment[idx]
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Match every predicted point to its nearest expert point by Euclidean
/// distance, ties broken by lowest expert index.
pub fn match_nearest(pred: &Trajectory, expert: &Trajectory) -> Matching {
    let assignment = pred
        .points()
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, q) in expert.points().iter().enumerate() {
                let d = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect();
    Matching { assignment }
}

/// The nearest centerline pixel to a query point and the pixel-space
/// distance to its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestCenterline {
    pub row: usize,
    pub col: usize,
    pub dist_pixels: f64,
}

/// Exact nearest-centerline-pixel lookup, precomputed once per grid and
/// shared read-only afterwards.
#[derive(Debug, Clone)]
pub struct CenterlineField {
    spec: GridSpec,
    /// Per row: nearest seed column at or left of j, usize::MAX if none.
    left: Vec<Vec<usize>>,
    /// Per row: nearest seed column at or right of j, usize::MAX if none.
    right: Vec<Vec<usize>>,
    /// Rows that contain at least one centerline pixel, ascending.
    seeded_rows: Vec<usize>,
}

const NO_SEED: usize = usize::MAX;

impl CenterlineField {
    pub fn new(grid: &SemanticGrid, taxonomy: &ClassTaxonomy) -> Self {
        let spec = *grid.spec();
        let (h, w) = (spec.height, spec.width);
        let target = taxonomy.centerline_class as u8;
        let mut left = vec![vec![NO_SEED; w]; h];
        let mut right = vec![vec![NO_SEED; w]; h];
        let mut seeded_rows = Vec::new();
        for i in 0..h {
            let mut any = false;
            let mut last = NO_SEED;
            for (j, slot) in left[i].iter_mut().enumerate() {
                if grid.label(i, j) == target {
                    last = j;
                    any = true;
                }
                *slot = last;
            }
            let mut next = NO_SEED;
            for (j, slot) in right[i].iter_mut().enumerate().rev() {
                if grid.label(i, j) == target {
                    next = j;
                }
                *slot = next;
            }
            if any {
                seeded_rows.push(i);
            }
        }
        CenterlineField {
            spec,
            left,
            right,
            seeded_rows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.seeded_rows.is_empty()
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Nearest seed column in a row for a continuous column coordinate.
    /// In 1D the nearest integer seed to a continuous x is the nearest
    /// seed of floor(x) on the left or of ceil(x) on the right; ties go to
    /// the lower column.
    fn nearest_in_row(&self, row: usize, col: f64) -> Option<(usize, f64)> {
        let w = self.spec.width as f64;
        let jf = col.clamp(0.0, w - 1.0).floor() as usize;
        let jc = col.clamp(0.0, w - 1.0).ceil() as usize;
        let l = self.left[row][jf];
        let r = self.right[row][jc];
        // Clamping can place a seed on the wrong side; re-check both raw
        // candidates against the unclamped coordinate.
        let mut best: Option<(usize, f64)> = None;
        for cand in [l, r] {
            if cand == NO_SEED {
                continue;
            }
            let d = (col - cand as f64).abs();
            best = match best {
                None => Some((cand, d)),
                Some((bj, bd)) => {
                    if d < bd || (d == bd && cand < bj) {
                        Some((cand, d))
                    } else {
                        Some((bj, bd))
                    }
                }
            };
        }
        best
    }

    /// Exact nearest centerline pixel to a continuous pixel coordinate
    /// (which may lie outside the grid). Ties resolve to the lowest
    /// (row, col). Returns `None` when the grid has no centerline pixels.
    pub fn nearest(&self, row: f64, col: f64) -> Option<NearestCenterline> {
        let mut best: Option<(usize, usize, f64)> = None;
        for &i in &self.seeded_rows {
            let dr = row - i as f64;
            let dr2 = dr * dr;
            if let Some((_, _, bd2)) = best {
                // Rows are ascending; once the row gap alone exceeds the
                // best distance and we are past the query row, stop.
                if dr < 0.0 && dr2 > bd2 {
                    break;
                }
                if dr2 > bd2 {
                    continue;
                }
            }
            if let Some((j, dcol)) = self.nearest_in_row(i, col) {
                let d2 = dr2 + dcol * dcol;
                best = match best {
                    None => Some((i, j, d2)),
                    Some((bi, bj, bd2)) => {
                        if d2 < bd2 || (d2 == bd2 && (i, j) < (bi, bj)) {
                            Some((i, j, d2))
                        } else {
                            Some((bi, bj, bd2))
                        }
                    }
                };
            }
        }
        best.map(|(row, col, d2)| NearestCenterline {
            row,
            col,
            dist_pixels: d2.sqrt(),
        })
    }

    /// Metric distance (meters) from an ego-frame point to the nearest
    /// centerline pixel center.
    pub fn metric_distance(&self, x: f64, y: f64) -> Option<f64> {
        let p = self.spec.project(x, y);
        self.nearest(p.row, p.col)
            .map(|n| n.dist_pixels * self.spec.resolution)
    }
}

/// Flag each expert point that sits within `d_follow` meters of the nearest
/// centerline pixel center. With no centerline pixels the mask is all
/// zeros.
pub fn build_gt_intent_mask(
    expert: &Trajectory,
    grid: &SemanticGrid,
    taxonomy: &ClassTaxonomy,
    d_follow: f64,
) -> IntentMask {
    let field = CenterlineField::new(grid, taxonomy);
    intent_mask_from_field(expert, &field, d_follow)
}

/// Same rule against a prebuilt field.
pub fn intent_mask_from_field(
    traj: &Trajectory,
    field: &CenterlineField,
    d_follow: f64,
) -> IntentMask {
    IntentMask::new(
        traj.points()
            .iter()
            .map(|p| {
                field
                    .metric_distance(p.x, p.y)
                    .map(|d| d <= d_follow)
                    .unwrap_or(false)
            })
            .collect(),
    )
}

/// L1 difference between the predicted intent scores and the matched
/// expert intent, mean over predicted points. `m_pred` may be soft values
/// in [0, 1]; the gradient is the L1 sign, zero at exact agreement.
pub fn intent_loss(m_pred: &[f64], m_gt: &IntentMask, matching: &Matching) -> Result<LossGrad> {
    if m_pred.len() != matching.len() {
        return Err(Error::data("intent prediction length does not match matching"));
    }
    if let Some(&bad) = matching.assignment().iter().find(|&&j| j >= m_gt.len()) {
        return Err(Error::data(format!(
            "matching index {bad} out of range for expert mask of length {}",
            m_gt.len()
        )));
    }
    let n = m_pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(m_pred.len());
    for (t, &p) in m_pred.iter().enumerate() {
        let gt = if m_gt.get(matching.get(t)) { 1.0 } else { 0.0 };
        let d = p - gt;
        value += d.abs();
        grad.push(
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            } / n,
        );
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Centerline loss with per-point metric-space gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineLoss {
    pub value: f64,
    /// d(loss)/d(x, y) in 1/meters for every predicted point (zero at
    /// inactive points).
    pub grad: Vec<(f64, f64)>,
    pub active_points: usize,
}

/// Mean pixel-space distance from the projection of each active predicted
/// point to the nearest centerline pixel center. Inactive points contribute
/// nothing, and an empty active set yields zero by convention. The gradient
/// follows the direction field of the distance transform, with the
/// equidistant subgradient fixed to the lowest-(row, col) pixel and zero at
/// distance zero.
pub fn centerline_loss(
    pred: &Trajectory,
    active: &IntentMask,
    field: &CenterlineField,
) -> Result<CenterlineLoss> {
    if active.len() != pred.len() {
        return Err(Error::data("active mask length does not match trajectory"));
    }
    let n_active = pred
        .points()
        .iter()
        .enumerate()
        .filter(|(t, _)| active.get(*t))
        .count();
    let mut grad = vec![(0.0, 0.0); pred.len()];
    if n_active == 0 || field.is_empty() {
        return Ok(CenterlineLoss {
            value: 0.0,
            grad,
            active_points: 0,
        });
    }
    let res = field.spec().resolution;
    let mut sum = 0.0;
    for (t, p) in pred.points().iter().enumerate() {
        if !active.get(t) {
            continue;
        }
        let proj = field.spec().project(p.x, p.y);
        let nearest = field.nearest(proj.row, proj.col).expect("non-empty field");
        sum += nearest.dist_pixels;
        if nearest.dist_pixels > 0.0 {
            let dr = proj.row - nearest.row as f64;
            let dc = proj.col - nearest.col as f64;
            // d(dist)/d(row) = dr / dist; row = x / res.
            let scale = 1.0 / (nearest.dist_pixels * res * n_active as f64);
            grad[t] = (dr * scale, dc * scale);
        }
    }
    Ok(CenterlineLoss {
        value: sum / n_active as f64,
        grad,
        active_points: n_active,
    })
}

/// Weighted lane regularization: intent plus centerline terms.
pub fn lane_loss(
    intent_value: f64,
    centerline_value: f64,
    lambda_intent: f64,
    lambda_center: f64,
) -> Result<crate::losses::LossReport> {
    for l in [lambda_intent, lambda_center] {
        if l.is_nan() || l < 0.0 || !l.is_finite() {
            return Err(Error::config("lane-loss weights must be >= 0"));
        }
    }
    Ok(crate::losses::LossReport::from_terms(vec![
        crate::losses::LossTerm::new("intent", intent_value, lambda_intent),
        crate::losses::LossTerm::new("center", centerline_value, lambda_center),
    ]))
}
