//! Candidate-trajectory projection, safety scoring, weighting, selection,
//! and the planning losses.
//!
//! A candidate is rasterized onto the drivable score map, scored by the
//! minimum bilinearly interpolated safety value along its path, and
//! discarded outright if any sample leaves the grid or lands on a pixel of
//! the hard non-drivable mask (interpolation keeps scores smooth for
//! ranking; the mask test is nearest-pixel so hard discards stay
//! conservative). Surviving candidates are reweighted by an exponential
//! tilt of their minimum safety and the plan is the posterior argmax.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::losses::{LossReport, LossTerm};
use crate::uncertainty::DrivableScoreMap;

/// Default sharpness of the exponential safety tilt.
pub const DEFAULT_BETA: f64 = 4.0;
/// Default margin of the pairwise ranking hinge.
pub const DEFAULT_RANK_MARGIN: f64 = 0.1;

/// One timestamped waypoint in the ego metric frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Timestamped 2D waypoints in the ego frame. Timestamps are strictly
/// increasing; a trajectory is never empty. Operations that need at least
/// two points (rasterization) check that themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<TrajectoryPoint>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::data("trajectory must have at least one point"));
        }
        for p in &points {
            if !p.t.is_finite() || !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::data("non-finite trajectory point"));
            }
        }
        for pair in points.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::data("trajectory timestamps must strictly increase"));
            }
        }
        Ok(Trajectory { points })
    }

    pub fn from_xy(timestamps: &[f64], xy: &[(f64, f64)]) -> Result<Self> {
        if timestamps.len() != xy.len() {
            return Err(Error::data("timestamp/point count mismatch"));
        }
        Trajectory::new(
            timestamps
                .iter()
                .zip(xy)
                .map(|(&t, &(x, y))| TrajectoryPoint { t, x, y })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> TrajectoryPoint {
        self.points[idx]
    }

    /// Linear resample at the given timestamps (clamped at the ends).
    pub fn resample_at(&self, timestamps: &[f64]) -> Result<Trajectory> {
        let pts = timestamps
            .iter()
            .map(|&t| {
                let (x, y) = self.position_at(t);
                TrajectoryPoint { t, x, y }
            })
            .collect();
        Trajectory::new(pts)
    }

    fn position_at(&self, t: f64) -> (f64, f64) {
        let pts = &self.points;
        if t <= pts[0].t {
            return (pts[0].x, pts[0].y);
        }
        if t >= pts[pts.len() - 1].t {
            let p = pts[pts.len() - 1];
            return (p.x, p.y);
        }
        let idx = pts.partition_point(|p| p.t <= t);
        let a = pts[idx - 1];
        let b = pts[idx];
        let f = (t - a.t) / (b.t - a.t);
        (a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
    }

    /// CSV with header `t,x,y` (and optionally a trailing `intent` column),
    /// six decimal places, meters and seconds.
    pub fn to_csv(&self, intent: Option<&[f64]>) -> Result<String> {
        if let Some(m) = intent {
            if m.len() != self.points.len() {
                return Err(Error::data("intent column length mismatch"));
            }
        }
        let mut out = String::new();
        match intent {
            Some(_) => out.push_str("t,x,y,intent\n"),
            None => out.push_str("t,x,y\n"),
        }
        for (i, p) in self.points.iter().enumerate() {
            let _ = write!(out, "{:.6},{:.6},{:.6}", p.t, p.x, p.y);
            if let Some(m) = intent {
                let _ = write!(out, ",{:.6}", m[i]);
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Parse the CSV format; returns the trajectory and the intent column
    /// when present.
    pub fn from_csv(text: &str) -> Result<(Trajectory, Option<Vec<f64>>)> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::data("empty trajectory CSV"))?;
        let has_intent = match header.trim() {
            "t,x,y" => false,
            "t,x,y,intent" => true,
            other => return Err(Error::data(format!("unexpected CSV header {other:?}"))),
        };
        let mut points = Vec::new();
        let mut intent = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.trim().split(',').collect();
            let want = if has_intent { 4 } else { 3 };
            if fields.len() != want {
                return Err(Error::data(format!(
                    "CSV line {} has {} fields, expected {want}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("bad number {s:?} in trajectory CSV")))
            };
            points.push(TrajectoryPoint {
                t: parse(fields[0])?,
                x: parse(fields[1])?,
                y: parse(fields[2])?,
            });
            if has_intent {
                intent.push(parse(fields[3])?);
            }
        }
        Ok((Trajectory::new(points)?, has_intent.then_some(intent)))
    }

    pub fn write_csv(&self, path: &Path, intent: Option<&[f64]>) -> Result<()> {
        fs::write(path, self.to_csv(intent)?)?;
        Ok(())
    }
}

/// One resampled point along a rasterized path, in continuous pixel
/// coordinates with its bounds flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub row: f64,
    pub col: f64,
    pub in_bounds: bool,
}

/// Connect the waypoints with straight segments and resample them at
/// `step` meters or finer. Both endpoints of every segment are included;
/// the shared waypoint between consecutive segments is emitted once.
pub fn rasterize_path(traj: &Trajectory, spec: &GridSpec, step: f64) -> Result<Vec<PathSample>> {
    if traj.len() < 2 {
        return Err(Error::data("rasterization needs at least 2 points"));
    }
    if step.is_nan() || step <= 0.0 {
        return Err(Error::config("rasterization step must be positive"));
    }
    let pts = traj.points();
    let mut out = Vec::new();
    for (si, pair) in pts.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        let subdivisions = ((len / step).ceil() as usize).max(1);
        let start = if si == 0 { 0 } else { 1 };
        for s in start..=subdivisions {
            let f = s as f64 / subdivisions as f64;
            let x = a.x + f * (b.x - a.x);
            let y = a.y + f * (b.y - a.y);
            let p = spec.project(x, y);
            out.push(PathSample {
                row: p.row,
                col: p.col,
                in_bounds: p.in_bounds,
            });
        }
    }
    Ok(out)
}

/// Bilinear interpolation on a plane at a continuous pixel coordinate,
/// clamped at the raster edges.
pub fn bilinear(plane: ndarray::ArrayView2<'_, f64>, row: f64, col: f64) -> f64 {
    let (h, w) = plane.dim();
    let r = row.clamp(0.0, (h - 1) as f64);
    let c = col.clamp(0.0, (w - 1) as f64);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let v00 = plane[[r0, c0]];
    let v01 = plane[[r0, c1]];
    let v10 = plane[[r1, c0]];
    let v11 = plane[[r1, c1]];
    v00 * (1.0 - fr) * (1.0 - fc)
        + v01 * (1.0 - fr) * fc
        + v10 * fr * (1.0 - fc)
        + v11 * fr * fc
}

/// Minimum-safety score of a candidate plus its discard flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinSafety {
    pub score: f64,
    pub discarded: bool,
}

/// Minimum of the bilinear interpolant along a straight sub-segment with
/// both endpoints in bounds. Subdivides at integer row/col crossings; within
/// each cell the interpolant is quadratic in the path parameter, so the
/// exact minimum is attained at a subdivision point or an interior
/// stationary point. Endpoint values are assumed already counted.
fn segment_interior_min(
    plane: ndarray::ArrayView2<'_, f64>,
    a: (f64, f64),
    b: (f64, f64),
) -> f64 {
    let (h, w) = plane.dim();
    let (r0, c0) = a;
    let dr = b.0 - r0;
    let dc = b.1 - c0;
    let mut ts = vec![0.0, 1.0];
    let mut crossings = |x0: f64, dx: f64| {
        if dx == 0.0 {
            return;
        }
        let (lo, hi) = if dx > 0.0 { (x0, x0 + dx) } else { (x0 + dx, x0) };
        let mut n = lo.floor() + 1.0;
        while n < hi {
            if n > lo {
                ts.push((n - x0) / dx);
            }
            n += 1.0;
        }
    };
    crossings(r0, dr);
    crossings(c0, dc);
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    let mut best = f64::INFINITY;
    for pair in ts.windows(2) {
        let (ta, tb) = (pair[0], pair[1]);
        if tb <= ta {
            continue;
        }
        // Subdivision points.
        best = best.min(bilinear(plane, r0 + ta * dr, c0 + ta * dc));
        // Stationary point of the per-cell quadratic, if interior.
        let tm = 0.5 * (ta + tb);
        let rm = (r0 + tm * dr).clamp(0.0, (h - 1) as f64);
        let cm = (c0 + tm * dc).clamp(0.0, (w - 1) as f64);
        let i0 = (rm.floor() as usize).min(h - 1);
        let j0 = (cm.floor() as usize).min(w - 1);
        let i1 = (i0 + 1).min(h - 1);
        let j1 = (j0 + 1).min(w - 1);
        let v00 = plane[[i0, j0]];
        let v01 = plane[[i0, j1]];
        let v10 = plane[[i1, j0]];
        let v11 = plane[[i1, j1]];
        let k1 = v10 - v00;
        let k2 = v01 - v00;
        let k3 = v00 + v11 - v01 - v10;
        let u0 = r0 - i0 as f64;
        let v0 = c0 - j0 as f64;
        let quad_a = k3 * dr * dc;
        let lin_b = k1 * dr + k2 * dc + k3 * (u0 * dc + v0 * dr);
        if quad_a > 0.0 {
            let t_star = -lin_b / (2.0 * quad_a);
            if t_star > ta && t_star < tb {
                best = best.min(bilinear(plane, r0 + t_star * dr, c0 + t_star * dc));
            }
        }
    }
    best.min(bilinear(plane, b.0, b.1))
}

/// Minimum bilinearly interpolated safety along the rasterized path. The
/// minimum is exact for the interpolated surface: between consecutive
/// in-bounds samples the interpolant is piecewise quadratic, and its
/// interior minima are included, so the score does not depend on the
/// rasterization step. The candidate is discarded when any sample falls out
/// of bounds (conservative reading: beyond the map is non-drivable) or its
/// nearest pixel is masked non-drivable.
pub fn min_safety(traj: &Trajectory, map: &DrivableScoreMap) -> MinSafety {
    min_safety_with_step(traj, map, map.spec.resolution / 2.0)
}

pub fn min_safety_with_step(traj: &Trajectory, map: &DrivableScoreMap, step: f64) -> MinSafety {
    let samples = match rasterize_path(traj, &map.spec, step) {
        Ok(s) => s,
        Err(_) => {
            return MinSafety {
                score: 0.0,
                discarded: true,
            }
        }
    };
    let mut score = f64::INFINITY;
    let mut discarded = false;
    for s in &samples {
        if !s.in_bounds {
            discarded = true;
            continue;
        }
        let (pi, pj) = map.spec.nearest_pixel(s.row, s.col);
        if map.nondrivable[[pi, pj]] {
            discarded = true;
        }
        score = score.min(bilinear(map.safety.view(), s.row, s.col));
    }
    for pair in samples.windows(2) {
        if pair[0].in_bounds && pair[1].in_bounds {
            score = score.min(segment_interior_min(
                map.safety.view(),
                (pair[0].row, pair[0].col),
                (pair[1].row, pair[1].col),
            ));
        }
    }
    if !score.is_finite() {
        score = 0.0;
    }
    MinSafety { score, discarded }
}

/// A set of candidate trajectories with prior weights and, once scored,
/// min-safety values, posterior weights, and discard flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Trajectory>,
    pub prior_weights: Vec<f64>,
    pub min_safety: Vec<f64>,
    /// Pre-normalization weighting logits (`ln prior + beta * min_safety`),
    /// populated by [`weight_candidates`]. These are the candidate scores
    /// the ranking loss orders.
    pub scores: Vec<f64>,
    pub posterior_weights: Vec<f64>,
    pub discarded: Vec<bool>,
    /// Set when every candidate is discarded; posterior weights are then
    /// all zero and the priors are left untouched.
    pub no_safe_plan: bool,
}

impl CandidateSet {
    pub fn new(candidates: Vec<Trajectory>, prior_weights: Vec<f64>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::data("candidate set must not be empty"));
        }
        if prior_weights.len() != candidates.len() {
            return Err(Error::data("one prior weight per candidate required"));
        }
        if prior_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::data("prior weights must be non-negative and finite"));
        }
        let sum: f64 = prior_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::data(format!("prior weights must sum to 1, got {sum}")));
        }
        let n = candidates.len();
        Ok(CandidateSet {
            candidates,
            prior_weights,
            min_safety: vec![0.0; n],
            scores: vec![0.0; n],
            posterior_weights: vec![0.0; n],
            discarded: vec![false; n],
            no_safe_plan: false,
        })
    }

    pub fn uniform(candidates: Vec<Trajectory>) -> Result<Self> {
        let n = candidates.len();
        CandidateSet::new(candidates, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Score every candidate against the map and reweight: posterior weight is
/// proportional to `prior * exp(beta * min_safety)` over non-discarded
/// candidates. When everything is discarded the set keeps zero posteriors,
/// untouched priors, and raises the no-safe-plan flag.
pub fn weight_candidates(mut set: CandidateSet, map: &DrivableScoreMap, beta: f64) -> CandidateSet {
    let n = set.len();
    for i in 0..n {
        let ms = min_safety(&set.candidates[i], map);
        set.min_safety[i] = ms.score;
        set.discarded[i] = ms.discarded;
        set.scores[i] = set.prior_weights[i].max(1e-300).ln() + beta * ms.score;
    }
    let max_score = set
        .scores
        .iter()
        .zip(&set.discarded)
        .filter(|(_, &d)| !d)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_score.is_finite() {
        set.no_safe_plan = true;
        set.posterior_weights.iter_mut().for_each(|w| *w = 0.0);
        return set;
    }
    let mut z = 0.0;
    for i in 0..n {
        if !set.discarded[i] {
            z += (set.scores[i] - max_score).exp();
        }
    }
    for i in 0..n {
        set.posterior_weights[i] = if set.discarded[i] {
            0.0
        } else {
            (set.scores[i] - max_score).exp() / z
        };
    }
    set.no_safe_plan = false;
    set
}

/// The selected plan: posterior argmax with ties broken by lowest index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPlan {
    pub chosen_index: usize,
    pub score: f64,
    pub per_candidate_scores: Vec<f64>,
}

pub fn select_plan(set: &CandidateSet) -> Result<ScoredPlan> {
    if set.no_safe_plan || set.discarded.iter().all(|&d| d) {
        return Err(Error::NoSafePlan);
    }
    let mut best = None;
    for (i, (&w, &d)) in set.posterior_weights.iter().zip(&set.discarded).enumerate() {
        if d {
            continue;
        }
        match best {
            None => best = Some((i, w)),
            Some((_, bw)) if w > bw => best = Some((i, w)),
            _ => {}
        }
    }
    let (chosen_index, score) = best.ok_or(Error::NoSafePlan)?;
    Ok(ScoredPlan {
        chosen_index,
        score,
        per_candidate_scores: set.posterior_weights.clone(),
    })
}

/// A scalar loss with a flat gradient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean pointwise L2 distance from each candidate to the expert, the
/// matching metric for the expert-consistent candidate.
pub fn expert_distances(set: &CandidateSet, expert: &Trajectory) -> Vec<f64> {
    set.candidates
        .iter()
        .map(|c| mean_l2_distance(c, expert))
        .collect()
}

fn mean_l2_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let b = if a.len() == b.len() {
        b.clone()
    } else {
        let ts: Vec<f64> = a.points().iter().map(|p| p.t).collect();
        b.resample_at(&ts).expect("resample of non-empty trajectory")
    };
    let n = a.len() as f64;
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt())
        .sum::<f64>()
        / n
}

/// Index of the expert-consistent candidate: minimum mean pointwise L2
/// distance, ties broken by lowest index. Discarded candidates are skipped
/// unless everything is discarded.
pub fn expert_target_index(set: &CandidateSet, expert: &Trajectory) -> usize {
    let dists = expert_distances(set, expert);
    let pick = |skip_discarded: bool| {
        let mut best: Option<(usize, f64)> = None;
        for (i, &d) in dists.iter().enumerate() {
            if skip_discarded && set.discarded[i] {
                continue;
            }
            match best {
                None => best = Some((i, d)),
                Some((_, bd)) if d < bd => best = Some((i, d)),
                _ => {}
            }
        }
        best
    };
    pick(true).or_else(|| pick(false)).map(|(i, _)| i).unwrap()
}

/// Cross-entropy of a softmax distribution over score logits against a
/// one-hot target. Returns the loss and its gradient w.r.t. the logits
/// (`softmax - one_hot`).
pub fn cross_entropy_one_hot(logits: &[f64], target: usize) -> LossGrad {
    let q = crate::uncertainty::softmax(logits);
    let value = -q[target].max(1e-300).ln();
    let grad = q
        .iter()
        .enumerate()
        .map(|(i, &qi)| qi - if i == target { 1.0 } else { 0.0 })
        .collect();
    LossGrad { value, grad }
}

/// Classification term: cross-entropy between the posterior-weight
/// distribution (softmax over the weighting logits of non-discarded
/// candidates) and a one-hot target at the expert-consistent candidate.
/// Gradients of discarded candidates are zero: they sit outside the
/// softmax.
pub fn classification_loss(set: &CandidateSet, expert: &Trajectory) -> LossGrad {
    let n = set.len();
    let target = expert_target_index(set, expert);
    let alive: Vec<usize> = (0..n).filter(|&i| !set.discarded[i]).collect();
    if alive.is_empty() {
        // Degenerate all-discarded set: fall back to the full set so the
        // loss stays finite.
        return cross_entropy_one_hot(&set.scores, target);
    }
    let logits: Vec<f64> = alive.iter().map(|&i| set.scores[i]).collect();
    let tpos = alive.iter().position(|&i| i == target).unwrap_or(0);
    let inner = cross_entropy_one_hot(&logits, tpos);
    let mut grad = vec![0.0; n];
    for (k, &i) in alive.iter().enumerate() {
        grad[i] = inner.grad[k];
    }
    LossGrad {
        value: inner.value,
        grad,
    }
}

/// A trajectory-space loss with per-point (x, y) gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLoss {
    pub value: f64,
    pub grad: Vec<(f64, f64)>,
}

/// Regression term: mean per-point L1 distance (|dx| + |dy|) between the
/// selected trajectory and the expert over aligned timestamps. The expert
/// is resampled when lengths differ. Gradient is sign-based and zero at
/// exact equality.
pub fn trajectory_loss(chosen: &Trajectory, expert: &Trajectory) -> TrajectoryLoss {
    let expert = if chosen.len() == expert.len() {
        expert.clone()
    } else {
        let ts: Vec<f64> = chosen.points().iter().map(|p| p.t).collect();
        expert.resample_at(&ts).expect("resample of non-empty trajectory")
    };
    let n = chosen.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(chosen.len());
    for (p, q) in chosen.points().iter().zip(expert.points()) {
        let dx = p.x - q.x;
        let dy = p.y - q.y;
        value += dx.abs() + dy.abs();
        grad.push((sign(dx) / n, sign(dy) / n));
    }
    TrajectoryLoss {
        value: value / n,
        grad,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pairwise hinge on candidate scores: for every ordered pair where `i` is
/// strictly closer to the expert than `j`, penalize
/// `max(0, margin - (score_i - score_j))`; mean over counted pairs.
pub fn hinge_ranking(scores: &[f64], expert_dist: &[f64], margin: f64) -> LossGrad {
    let n = scores.len();
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if expert_dist[i] < expert_dist[j] {
                pairs += 1;
                let term = margin - (scores[i] - scores[j]);
                if term > 0.0 {
                    value += term;
                    grad[i] -= 1.0;
                    grad[j] += 1.0;
                }
            }
        }
    }
    if pairs == 0 {
        return LossGrad {
            value: 0.0,
            grad,
        };
    }
    let scale = 1.0 / pairs as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    LossGrad {
        value: value * scale,
        grad,
    }
}

/// Ranking term over the pre-normalization weighting logits.
pub fn ranking_loss(set: &CandidateSet, expert: &Trajectory, margin: f64) -> LossGrad {
    let dists = expert_distances(set, expert);
    hinge_ranking(&set.scores, &dists, margin)
}

/// Weighted planning objective. The regression term uses the selected
/// candidate; with no selectable plan it contributes zero.
pub fn planning_loss(
    set: &CandidateSet,
    expert: &Trajectory,
    lambda_cls: f64,
    lambda_traj: f64,
    lambda_rank: f64,
) -> Result<LossReport> {
    for l in [lambda_cls, lambda_traj, lambda_rank] {
        if l.is_nan() || l < 0.0 || !l.is_finite() {
            return Err(Error::config("planning-loss weights must be >= 0"));
        }
    }
    let cls = classification_loss(set, expert).value;
    let traj = match select_plan(set) {
        Ok(plan) => trajectory_loss(&set.candidates[plan.chosen_index], expert).value,
        Err(Error::NoSafePlan) => 0.0,
        Err(e) => return Err(e),
    };
    let rank = if set.len() >= 2 {
        ranking_loss(set, expert, DEFAULT_RANK_MARGIN).value
    } else {
        0.0
    };
    Ok(LossReport::from_terms(vec![
        LossTerm::new("cls", cls, lambda_cls),
        LossTerm::new("traj", traj, lambda_traj),
        LossTerm::new("rank", rank, lambda_rank),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use ndarray::Array2;

    fn traj(xy: &[(f64, f64)]) -> Trajectory {
        let ts: Vec<f64> = (0..xy.len()).map(|i| i as f64 * 0.5).collect();
        Trajectory::from_xy(&ts, xy).unwrap()
    }

    fn flat_map(h: usize, w: usize, safety: f64, tau: f64) -> DrivableScoreMap {
        let spec = GridSpec::new(h, w, 1.0, (0.0, 0.0)).unwrap();
        DrivableScoreMap::from_planes(
            spec,
            Array2::from_elem((h, w), safety),
            Array2::zeros((h, w)),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn trajectory_rejects_bad_timestamps() {
        assert!(Trajectory::from_xy(&[0.0, 0.0], &[(0.0, 0.0), (1.0, 0.0)]).is_err());
        assert!(Trajectory::from_xy(&[0.0], &[(0.0, 0.0)]).is_ok());
    }

    #[test]
    fn rasterize_coincident_pair() {
        // Timestamps must increase but points may coincide: both endpoints
        // only.
        let spec = GridSpec::new(8, 8, 1.0, (0.0, 0.0)).unwrap();
        let t = traj(&[(2.0, 2.0), (2.0, 2.0)]);
        let samples = rasterize_path(&t, &spec, 0.5).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0], samples[1]);
    }

    #[test]
    fn rasterize_straight_segment() {
        // 4 m at step 0.25 m: 16 subdivisions, 17 evenly spaced samples.
        let spec = GridSpec::new(16, 16, 1.0, (0.0, 0.0)).unwrap();
        let t = traj(&[(1.0, 1.0), (5.0, 1.0)]);
        let samples = rasterize_path(&t, &spec, 0.25).unwrap();
        assert_eq!(samples.len(), 17);
        for (i, s) in samples.iter().enumerate() {
            assert!((s.row - (1.0 + i as f64 * 0.25)).abs() < 1e-12);
            assert!((s.col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rasterize_spacing_contract() {
        let spec = GridSpec::new(32, 32, 1.0, (0.0, 0.0)).unwrap();
        let t = traj(&[(1.0, 1.0), (7.3, 4.1), (2.2, 9.9)]);
        let step = 0.4;
        let samples = rasterize_path(&t, &spec, step).unwrap();
        for pair in samples.windows(2) {
            let d = ((pair[1].row - pair[0].row).powi(2) + (pair[1].col - pair[0].col).powi(2))
                .sqrt();
            // Metric spacing equals pixel spacing at resolution 1.
            assert!(d <= step + 1e-12);
        }
        assert!(rasterize_path(&traj(&[(0.0, 0.0)]), &spec, step).is_err());
    }

    #[test]
    fn min_safety_flat_map() {
        let map = flat_map(8, 8, 1.0, 0.3);
        let ms = min_safety(&traj(&[(1.0, 1.0), (6.0, 6.0)]), &map);
        assert_eq!(ms.score, 1.0);
        assert!(!ms.discarded);
    }

    #[test]
    fn min_safety_discards_masked_pixel() {
        let spec = GridSpec::new(8, 8, 1.0, (0.0, 0.0)).unwrap();
        let mut drivable = Array2::from_elem((8, 8), 1.0);
        drivable[[3, 3]] = 0.1; // below tau -> masked
        let map =
            DrivableScoreMap::from_planes(spec, drivable, Array2::zeros((8, 8)), 0.3).unwrap();
        let ms = min_safety(&traj(&[(3.0, 1.0), (3.0, 6.0)]), &map);
        assert!(ms.discarded);
    }

    #[test]
    fn min_safety_out_of_bounds_discards() {
        let map = flat_map(8, 8, 1.0, 0.3);
        let ms = min_safety(&traj(&[(1.0, 1.0), (1.0, 20.0)]), &map);
        assert!(ms.discarded);
    }

    #[test]
    fn min_safety_matches_dense_oracle_on_low_pixel() {
        // Single low-safety pixel on an axis-aligned path through its
        // center: an independent dense-sampling oracle at step/10 finds the
        // same minimum.
        let spec = GridSpec::new(8, 8, 1.0, (0.0, 0.0)).unwrap();
        let mut drivable = Array2::from_elem((8, 8), 1.0);
        drivable[[4, 3]] = 0.45;
        let map =
            DrivableScoreMap::from_planes(spec, drivable, Array2::zeros((8, 8)), 0.3).unwrap();
        let t = traj(&[(4.0, 1.0), (4.0, 6.0)]);
        let got = min_safety_with_step(&t, &map, 0.5);
        let oracle = rasterize_path(&t, &spec, 0.05)
            .unwrap()
            .iter()
            .map(|s| bilinear(map.safety.view(), s.row, s.col))
            .fold(f64::INFINITY, f64::min);
        assert!(!got.discarded);
        assert!((got.score - oracle).abs() < 1e-6);
        assert!((got.score - 0.45).abs() < 1e-9);
    }

    #[test]
    fn min_safety_is_step_independent() {
        // The interior-minimum refinement makes the score exact for the
        // interpolated surface, so refining the step does not move it.
        let spec = GridSpec::new(8, 8, 1.0, (0.0, 0.0)).unwrap();
        let drivable = Array2::from_shape_fn((8, 8), |(i, j)| {
            0.3 + 0.7 * crate::noise::uniform(5, crate::noise::Stream::McSample, (i * 8 + j) as u64, 0, 0)
        });
        let map =
            DrivableScoreMap::from_planes(spec, drivable, Array2::zeros((8, 8)), 0.0).unwrap();
        let t = traj(&[(1.2, 0.7), (5.9, 3.3), (2.4, 6.6)]);
        let a = min_safety_with_step(&t, &map, 0.5).score;
        let b = min_safety_with_step(&t, &map, 0.03).score;
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");

        // And it is never above any sampled value.
        let dense = rasterize_path(&t, &spec, 0.01)
            .unwrap()
            .iter()
            .map(|s| bilinear(map.safety.view(), s.row, s.col))
            .fold(f64::INFINITY, f64::min);
        assert!(a <= dense + 1e-12);
        assert!(dense - a < 5e-3, "dense sampling converges to the exact min");
    }

    #[test]
    fn weighting_symmetry_and_survivors() {
        let map = flat_map(8, 8, 0.9, 0.3);
        let set = CandidateSet::uniform(vec![
            traj(&[(1.0, 2.0), (6.0, 2.0)]),
            traj(&[(1.0, 5.0), (6.0, 5.0)]),
        ])
        .unwrap();
        let set = weight_candidates(set, &map, 4.0);
        assert!((set.posterior_weights[0] - 0.5).abs() < 1e-12);
        assert!((set.posterior_weights[1] - 0.5).abs() < 1e-12);

        // One candidate leaves the grid: the survivor takes posterior 1.
        let set = CandidateSet::uniform(vec![
            traj(&[(1.0, 2.0), (6.0, 2.0)]),
            traj(&[(1.0, 5.0), (6.0, 40.0)]),
        ])
        .unwrap();
        let set = weight_candidates(set, &map, 4.0);
        assert!(set.discarded[1]);
        assert_eq!(set.posterior_weights[1], 0.0);
        assert!((set.posterior_weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighting_formula_oracle() {
        // priors (0.5, 0.5), min_safety (0.9, 0.4), beta 4: one-line
        // re-evaluation of the exponential tilt.
        let spec = GridSpec::new(8, 8, 1.0, (0.0, 0.0)).unwrap();
        let mut drivable = Array2::from_elem((8, 8), 0.9);
        for j in 0..8 {
            drivable[[5, j]] = 0.4;
        }
        let map =
            DrivableScoreMap::from_planes(spec, drivable, Array2::zeros((8, 8)), 0.3).unwrap();
        let set = CandidateSet::new(
            vec![
                traj(&[(1.0, 1.0), (1.0, 6.0)]),
                traj(&[(5.0, 1.0), (5.0, 6.0)]),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let set = weight_candidates(set, &map, 4.0);
        assert!((set.min_safety[0] - 0.9).abs() < 1e-12);
        assert!((set.min_safety[1] - 0.4).abs() < 1e-12);
        let w0 = 0.5 * (4.0f64 * 0.9).exp();
        let w1 = 0.5 * (4.0f64 * 0.4).exp();
        assert!((set.posterior_weights[0] - w0 / (w0 + w1)).abs() < 1e-12);
        assert!((set.posterior_weights[1] - w1 / (w0 + w1)).abs() < 1e-12);
    }

    #[test]
    fn all_discarded_returns_flag_and_priors() {
        let spec = GridSpec::new(4, 4, 1.0, (0.0, 0.0)).unwrap();
        let drivable = Array2::from_elem((4, 4), 0.1);
        let map =
            DrivableScoreMap::from_planes(spec, drivable, Array2::zeros((4, 4)), 0.3).unwrap();
        let set = CandidateSet::new(
            vec![traj(&[(1.0, 1.0), (2.0, 2.0)]), traj(&[(1.0, 2.0), (2.0, 3.0)])],
            vec![0.7, 0.3],
        )
        .unwrap();
        let set = weight_candidates(set, &map, 4.0);
        assert!(set.no_safe_plan);
        assert_eq!(set.posterior_weights, vec![0.0, 0.0]);
        assert_eq!(set.prior_weights, vec![0.7, 0.3]);
        assert!(matches!(select_plan(&set), Err(Error::NoSafePlan)));
    }

    #[test]
    fn select_plan_argmax_and_ties() {
        let mut set = CandidateSet::uniform(vec![
            traj(&[(0.0, 0.0), (1.0, 0.0)]),
            traj(&[(0.0, 1.0), (1.0, 1.0)]),
            traj(&[(0.0, 2.0), (1.0, 2.0)]),
        ])
        .unwrap();
        set.posterior_weights = vec![0.2, 0.5, 0.3];
        assert_eq!(select_plan(&set).unwrap().chosen_index, 1);
        set.posterior_weights = vec![0.5, 0.5, 0.0];
        assert_eq!(select_plan(&set).unwrap().chosen_index, 0);

        let single = CandidateSet::uniform(vec![traj(&[(0.0, 0.0), (1.0, 0.0)])]).unwrap();
        let single = weight_candidates(single, &flat_map(8, 8, 1.0, 0.3), 4.0);
        assert_eq!(select_plan(&single).unwrap().chosen_index, 0);
    }

    #[test]
    fn classification_loss_examples() {
        let map = flat_map(8, 8, 0.9, 0.3);
        let expert = traj(&[(1.0, 2.0), (6.0, 2.0)]);

        // Uniform posteriors over N candidates -> ln N.
        let set = CandidateSet::uniform(vec![
            traj(&[(1.0, 2.0), (6.0, 2.0)]),
            traj(&[(1.0, 4.0), (6.0, 4.0)]),
            traj(&[(1.0, 6.0), (6.0, 6.0)]),
        ])
        .unwrap();
        let set = weight_candidates(set, &map, 4.0);
        let cls = classification_loss(&set, &expert);
        assert!((cls.value - 3.0f64.ln()).abs() < 1e-9);

        // Single candidate: posterior 1, loss 0.
        let set = CandidateSet::uniform(vec![expert.clone()]).unwrap();
        let set = weight_candidates(set, &map, 4.0);
        assert!(classification_loss(&set, &expert).value.abs() < 1e-12);
    }

    #[test]
    fn trajectory_loss_examples() {
        let expert = traj(&[(0.0, 0.0), (2.0, 0.0), (4.0, 0.0)]);
        assert_eq!(trajectory_loss(&expert, &expert).value, 0.0);

        // Constant (1, 0) m offset on every point: mean of |dx|+|dy| = 1.
        let shifted = traj(&[(1.0, 0.0), (3.0, 0.0), (5.0, 0.0)]);
        let out = trajectory_loss(&shifted, &expert);
        assert!((out.value - 1.0).abs() < 1e-12);
        for (gx, gy) in out.grad {
            assert!((gx - 1.0 / 3.0).abs() < 1e-12);
            assert_eq!(gy, 0.0);
        }
    }

    #[test]
    fn ranking_loss_examples() {
        // Order already respected with gaps > margin -> 0.
        let out = hinge_ranking(&[2.0, 1.0, 0.0], &[0.1, 0.5, 0.9], 0.1);
        assert_eq!(out.value, 0.0);

        // Two equal scores, distinct distances, margin 0.1 -> single hinge.
        let out = hinge_ranking(&[1.0, 1.0], &[0.2, 0.8], 0.1);
        assert!((out.value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn planning_loss_composition() {
        let map = flat_map(8, 8, 0.9, 0.3);
        let expert = traj(&[(1.0, 2.0), (6.0, 2.0)]);
        let set = CandidateSet::uniform(vec![
            traj(&[(1.0, 2.2), (6.0, 2.1)]),
            traj(&[(1.0, 4.0), (6.0, 4.5)]),
        ])
        .unwrap();
        let set = weight_candidates(set, &map, 4.0);

        let zero = planning_loss(&set, &expert, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(zero.total, 0.0);

        let only_cls = planning_loss(&set, &expert, 1.0, 0.0, 0.0).unwrap();
        assert!((only_cls.total - classification_loss(&set, &expert).value).abs() < 1e-12);

        let all = planning_loss(&set, &expert, 1.0, 1.0, 1.0).unwrap();
        let chosen = select_plan(&set).unwrap().chosen_index;
        let expect = classification_loss(&set, &expert).value
            + trajectory_loss(&set.candidates[chosen], &expert).value
            + ranking_loss(&set, &expert, DEFAULT_RANK_MARGIN).value;
        assert!((all.total - expect).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let t = traj(&[(1.25, -3.5), (2.0, 0.125)]);
        let csv = t.to_csv(Some(&[1.0, 0.0])).unwrap();
        assert!(csv.starts_with("t,x,y,intent\n"));
        let (back, intent) = Trajectory::from_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(intent, Some(vec![1.0, 0.0]));
        assert!((back.point(0).x - 1.25).abs() < 1e-6);
        assert!((back.point(1).y - 0.125).abs() < 1e-6);
    }
}
