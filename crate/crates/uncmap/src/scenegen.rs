//! Deterministic synthetic BEV scenes: semantic truth, logit fields with
//! injected ambiguity, expert trajectories, and candidate sets.
//!
//! Every output is a pure function of `(ScenarioSpec, GridSpec, taxonomy)`.
//! Scenes paint a drivable corridor from a road template, a one-pixel-wide
//! centerline along each lane center, and optional static obstacle boxes.
//! The logit means carry a fixed margin on the true class; ambiguity
//! regions raise the per-class sigma and optionally perturb or overwrite
//! the means, which is how overconfident failure cases are staged.

use serde::{Deserialize, Serialize};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::grid::{
    ClassTaxonomy, GridSpec, SemanticGrid, BACKGROUND_CLASS, CENTERLINE_CLASS, OBSTACLE_CLASS,
    ROAD_CLASS,
};
use crate::lane::{intent_mask_from_field, CenterlineField, IntentMask};
use crate::noise::{standard_normal, uniform, Stream};
use crate::planner::{CandidateSet, Trajectory, TrajectoryPoint};
use crate::uncertainty::LogitField;

/// Road layout painted into the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadTemplate {
    Straight,
    Curve,
    Fork,
    LaneChange,
}

/// A disk where perception quality degrades. `sigma_boost` raises the
/// per-class sigma inside the disk. `mu_noise` is the standard deviation of
/// the mean perturbation inside the disk; when omitted it defaults to
/// `sigma_boost` for plain regions (the sigma head is calibrated to the
/// actual error) and to zero for phantom regions. A phantom region paints
/// the logit means as if the area were road regardless of the truth: a
/// coherent, confidently wrong prediction that only the sigma channel
/// flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityRegion {
    pub center: (f64, f64),
    pub radius: f64,
    pub sigma_boost: f64,
    #[serde(default)]
    pub mu_noise: Option<f64>,
    #[serde(default)]
    pub phantom_drivable: bool,
}

impl AmbiguityRegion {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        dx * dx + dy * dy <= self.radius * self.radius
    }

    fn resolved_mu_noise(&self) -> f64 {
        self.mu_noise
            .unwrap_or(if self.phantom_drivable { 0.0 } else { self.sigma_boost })
    }
}

/// Static rectangle marking a non-drivable obstacle, ego-frame meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl AgentBox {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Full description of a synthetic scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub template: RoadTemplate,
    /// Lane width in meters.
    pub lane_width: f64,
    /// Logit margin of the true class in clean areas.
    pub logit_margin: f64,
    /// Global standard deviation of mean perturbations.
    pub noise_level: f64,
    pub ambiguity_regions: Vec<AmbiguityRegion>,
    pub agent_boxes: Vec<AgentBox>,
    /// Number of candidate trajectories (>= 1; the first is the expert).
    pub candidate_count: usize,
    /// Peak lateral offset of the outermost candidates, meters.
    pub offset_amplitude: f64,
    /// Lane-following distance threshold used to derive the expert intent
    /// mask, meters.
    pub d_follow: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            seed: 0,
            template: RoadTemplate::Straight,
            lane_width: 3.0,
            logit_margin: 7.0,
            noise_level: 0.0,
            ambiguity_regions: Vec::new(),
            agent_boxes: Vec::new(),
            candidate_count: 7,
            offset_amplitude: 3.0,
            d_follow: 0.5,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lane_width.is_nan() || self.lane_width <= 0.0 {
            return Err(Error::config("lane width must be positive"));
        }
        if self.candidate_count < 1 {
            return Err(Error::config("need at least one candidate"));
        }
        if self.logit_margin.is_nan() || self.logit_margin <= 0.0 {
            return Err(Error::config("logit margin must be positive"));
        }
        if self.noise_level < 0.0 || self.offset_amplitude < 0.0 || self.d_follow < 0.0 {
            return Err(Error::config("noise, amplitude, and d_follow must be >= 0"));
        }
        for r in &self.ambiguity_regions {
            if r.radius.is_nan() || r.radius <= 0.0 {
                return Err(Error::config("ambiguity radius must be positive"));
            }
            if r.sigma_boost < 0.0 || r.resolved_mu_noise() < 0.0 {
                return Err(Error::config("ambiguity boosts must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Smoothstep on [0, 1] (clamped outside).
fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Route geometry shared by truth painting, experts, and presets.
#[derive(Debug, Clone, Copy)]
pub struct RouteGeometry {
    /// Longitudinal extent of the painted corridor.
    pub x_lo: f64,
    pub x_hi: f64,
    /// Longitudinal extent of the expert route (inset from the corridor).
    pub route_start: f64,
    pub route_end: f64,
    start_row: usize,
    spacing_rows: usize,
    resolution: f64,
    template: RoadTemplate,
    lane_width: f64,
    fork_split_x: f64,
    fork_spread: f64,
    change_start_x: f64,
    change_end_x: f64,
    curve_coeff: f64,
}

/// Expert waypoint count and spacing in time.
pub const ROUTE_POINTS: usize = 31;
pub const ROUTE_DT: f64 = 0.5;

impl RouteGeometry {
    pub fn new(template: RoadTemplate, lane_width: f64, grid: &GridSpec) -> Self {
        let x_lo = grid.origin.0;
        let x_hi = grid.origin.0 + (grid.height - 1) as f64 * grid.resolution;
        let span = x_hi - x_lo;
        // Waypoints sit on pixel rows so a straight expert rides painted
        // centerline pixel centers exactly.
        let legs = ROUTE_POINTS - 1;
        let start_row = (grid.height / 32).clamp(1, 4);
        let usable = grid.height.saturating_sub(1 + 2 * start_row).max(legs);
        let spacing_rows = ((usable as f64 / legs as f64).round() as usize)
            .clamp(1, ((grid.height - 1 - start_row) / legs).max(1));
        let route_start = x_lo + (start_row as f64) * grid.resolution;
        let route_end = x_lo + ((start_row + legs * spacing_rows) as f64) * grid.resolution;
        RouteGeometry {
            x_lo,
            x_hi,
            route_start,
            route_end,
            start_row,
            spacing_rows,
            resolution: grid.resolution,
            template,
            lane_width,
            fork_split_x: x_lo + 0.38 * span,
            fork_spread: 10.0,
            change_start_x: x_lo + 0.31 * span,
            change_end_x: x_lo + 0.56 * span,
            curve_coeff: 10.0 / (span * span),
        }
    }

    /// Longitudinal position of route waypoint `k`, exactly on a pixel row.
    pub fn waypoint_x(&self, k: usize) -> f64 {
        self.x_lo + ((self.start_row + k * self.spacing_rows) as f64) * self.resolution
    }

    /// Lateral position of the expert lane center at longitudinal x.
    pub fn route_y(&self, x: f64) -> f64 {
        match self.template {
            RoadTemplate::Straight => 0.0,
            RoadTemplate::Curve => self.curve_coeff * (x - self.x_lo).powi(2),
            RoadTemplate::Fork => {
                if x <= self.fork_split_x {
                    0.0
                } else {
                    self.fork_spread
                        * smoothstep((x - self.fork_split_x) / (self.x_hi - self.fork_split_x))
                }
            }
            RoadTemplate::LaneChange => {
                self.lane_width
                    * smoothstep(
                        (x - self.change_start_x) / (self.change_end_x - self.change_start_x),
                    )
            }
        }
    }

    /// All lane-center curves of the template, each sampled as y(x). Used
    /// for corridor and centerline painting.
    fn lane_centers(&self) -> Vec<Box<dyn Fn(f64) -> Option<f64> + '_>> {
        match self.template {
            RoadTemplate::Straight => vec![Box::new(|_| Some(0.0))],
            RoadTemplate::Curve => {
                vec![Box::new(move |x| Some(self.curve_coeff * (x - self.x_lo).powi(2)))]
            }
            RoadTemplate::Fork => vec![
                Box::new(move |x| (x <= self.fork_split_x).then_some(0.0)),
                Box::new(move |x| {
                    (x > self.fork_split_x).then(|| {
                        self.fork_spread
                            * smoothstep((x - self.fork_split_x) / (self.x_hi - self.fork_split_x))
                    })
                }),
                Box::new(move |x| {
                    (x > self.fork_split_x).then(|| {
                        -self.fork_spread
                            * smoothstep((x - self.fork_split_x) / (self.x_hi - self.fork_split_x))
                    })
                }),
            ],
            RoadTemplate::LaneChange => vec![
                Box::new(|_| Some(0.0)),
                Box::new(move |_| Some(self.lane_width)),
            ],
        }
    }

    /// Fraction of the route covered at longitudinal x.
    pub fn route_fraction(&self, x: f64) -> f64 {
        ((x - self.route_start) / (self.route_end - self.route_start)).clamp(0.0, 1.0)
    }
}

/// Paint the ground-truth labels of a scenario.
pub fn paint_truth(
    spec: &ScenarioSpec,
    grid: &GridSpec,
    taxonomy: &ClassTaxonomy,
) -> Result<SemanticGrid> {
    spec.validate()?;
    grid.validate()?;
    taxonomy.validate()?;
    if taxonomy.num_classes <= OBSTACLE_CLASS {
        return Err(Error::config(
            "scene generation expects the desk taxonomy classes (background/road/centerline/obstacle)",
        ));
    }
    let geom = RouteGeometry::new(spec.template, spec.lane_width, grid);
    let (h, w) = (grid.height, grid.width);
    let mut labels = vec![BACKGROUND_CLASS as u8; h * w];
    let step = grid.resolution / 4.0;
    let half = spec.lane_width / 2.0;
    let radius_px = (half / grid.resolution).ceil() as i64 + 1;

    // Road corridor: union of disks of radius lane_width/2 along each lane
    // center.
    let mut centerline_pixels = Vec::new();
    for lane in geom.lane_centers() {
        let mut x = geom.x_lo;
        while x <= geom.x_hi + 1e-9 {
            if let Some(y) = lane(x) {
                let p = grid.project(x, y);
                if !p.in_bounds {
                    return Err(Error::config(format!(
                        "corridor center ({x:.2}, {y:.2}) falls outside the grid"
                    )));
                }
                let (ci, cj) = (p.row.round() as i64, p.col.round() as i64);
                for di in -radius_px..=radius_px {
                    for dj in -radius_px..=radius_px {
                        let (i, j) = (ci + di, cj + dj);
                        if i < 0 || j < 0 || i >= h as i64 || j >= w as i64 {
                            continue;
                        }
                        let (px, py) = grid.to_world(i as f64, j as f64);
                        if (px - x).powi(2) + (py - y).powi(2) <= half * half {
                            labels[i as usize * w + j as usize] = ROAD_CLASS as u8;
                        }
                    }
                }
                centerline_pixels.push(grid.nearest_pixel(p.row, p.col));
            }
            x += step;
        }
    }
    for (i, j) in centerline_pixels {
        labels[i * w + j] = CENTERLINE_CLASS as u8;
    }
    // Obstacles override everything underneath.
    for (idx, l) in labels.iter_mut().enumerate() {
        let (i, j) = (idx / w, idx % w);
        let (x, y) = grid.to_world(i as f64, j as f64);
        if spec.agent_boxes.iter().any(|b| b.contains(x, y)) {
            *l = OBSTACLE_CLASS as u8;
        }
    }
    SemanticGrid::new(*grid, taxonomy.num_classes, labels)
}

/// Generate the ground-truth grid and the logit field of a scenario.
pub fn generate_scene(
    spec: &ScenarioSpec,
    grid: &GridSpec,
    taxonomy: &ClassTaxonomy,
) -> Result<(SemanticGrid, LogitField)> {
    let truth = paint_truth(spec, grid, taxonomy)?;
    let (h, w, k) = (grid.height, grid.width, taxonomy.num_classes);
    let mut mu = Array3::zeros((h, w, k));
    let mut sigma = Array3::zeros((h, w, k));
    for i in 0..h {
        for j in 0..w {
            let (x, y) = grid.to_world(i as f64, j as f64);
            let mut sigma_here = 0.0f64;
            let mut extra_noise = 0.0f64;
            let mut phantom = false;
            for r in &spec.ambiguity_regions {
                if r.contains(x, y) {
                    sigma_here = sigma_here.max(r.sigma_boost);
                    extra_noise = extra_noise.max(r.resolved_mu_noise());
                    phantom |= r.phantom_drivable;
                }
            }
            let painted = if phantom {
                ROAD_CLASS
            } else {
                truth.label(i, j) as usize
            };
            let noise_std = spec.noise_level + extra_noise;
            let pix = (i * w + j) as u64;
            for c in 0..k {
                let base = if c == painted { spec.logit_margin } else { 0.0 };
                let n = if noise_std > 0.0 {
                    noise_std * standard_normal(spec.seed, Stream::MuNoise, pix, c as u64, 0)
                } else {
                    0.0
                };
                mu[[i, j, c]] = base + n;
                sigma[[i, j, c]] = sigma_here;
            }
        }
    }
    let field = LogitField::new(*grid, mu, sigma)?;
    Ok((truth, field))
}

/// Generate the expert trajectory and its lane-following intent mask. The
/// mask is derived with the same distance rule as `build_gt_intent_mask`
/// against the painted grid, so the two derivations agree by construction.
pub fn generate_expert(
    spec: &ScenarioSpec,
    grid: &GridSpec,
    taxonomy: &ClassTaxonomy,
) -> Result<(Trajectory, IntentMask)> {
    let truth = paint_truth(spec, grid, taxonomy)?;
    let geom = RouteGeometry::new(spec.template, spec.lane_width, grid);
    let mut points = Vec::with_capacity(ROUTE_POINTS);
    for t in 0..ROUTE_POINTS {
        let x = geom.waypoint_x(t);
        points.push(TrajectoryPoint {
            t: t as f64 * ROUTE_DT,
            x,
            y: geom.route_y(x),
        });
    }
    let expert = Trajectory::new(points)?;
    let field = CenterlineField::new(&truth, taxonomy);
    let mask = intent_mask_from_field(&expert, &field, spec.d_follow);
    Ok((expert, mask))
}

/// Generate the candidate set: the expert plus smooth lateral bump offsets
/// with seeded amplitudes and shapes, uniform prior weights. Candidate
/// amplitudes follow a symmetric ladder scaled by `offset_amplitude`, so
/// the outer candidates deliberately leave the corridor.
pub fn generate_candidates(spec: &ScenarioSpec, expert: &Trajectory) -> Result<CandidateSet> {
    spec.validate()?;
    let n = spec.candidate_count;
    let pts = expert.points();
    let len = pts.len();
    let mut candidates = Vec::with_capacity(n);
    candidates.push(expert.clone());
    let max_level = ((n - 1) as f64 / 2.0).ceil().max(1.0);
    for i in 1..n {
        let level = (i as f64 / 2.0).ceil();
        let side = if i % 2 == 1 { 1.0 } else { -1.0 };
        let jitter = 1.0 + 0.08 * (2.0 * uniform(spec.seed, Stream::CandidateShape, i as u64, 0, 0) - 1.0);
        let amplitude = spec.offset_amplitude * (level / max_level) * side * jitter;
        // Cubic bump s(1-s)(1+g*s): vanishes at the first and last waypoint,
        // peak position steered by the seeded shape parameter.
        let gamma = 0.8 * (2.0 * uniform(spec.seed, Stream::CandidateShape, i as u64, 1, 0) - 1.0);
        let bump = |s: f64| s * (1.0 - s) * (1.0 + gamma * s);
        let peak = (0..len)
            .map(|t| bump(t as f64 / (len - 1) as f64).abs())
            .fold(0.0, f64::max)
            .max(1e-12);
        let mut cand = Vec::with_capacity(len);
        for (t, p) in pts.iter().enumerate() {
            let s = t as f64 / (len - 1).max(1) as f64;
            cand.push(TrajectoryPoint {
                t: p.t,
                x: p.x,
                y: p.y + amplitude * bump(s) / peak,
            });
        }
        candidates.push(Trajectory::new(cand)?);
    }
    CandidateSet::uniform(candidates)
}

/// Canned scenario families used by the evaluation sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioPreset {
    /// No noise, no ambiguity.
    Clean,
    /// A calibrated fog patch on the route plus a coherent phantom-drivable
    /// strip beside it; candidates bulge into the phantom.
    Ambiguous,
    /// Mild global noise and in-lane drifting candidates.
    Drift,
}

impl ScenarioSpec {
    /// Build a preset scenario on the given grid geometry.
    pub fn preset(
        preset: ScenarioPreset,
        template: RoadTemplate,
        seed: u64,
        grid: &GridSpec,
    ) -> ScenarioSpec {
        let mut spec = ScenarioSpec {
            seed,
            template,
            ..ScenarioSpec::default()
        };
        let geom = RouteGeometry::new(template, spec.lane_width, grid);
        match preset {
            ScenarioPreset::Clean => {}
            ScenarioPreset::Ambiguous => {
                spec.offset_amplitude = 4.5;
                let span = geom.route_end - geom.route_start;
                // Fog on the route near the end: calibrated noise, moderate
                // sigma. Every candidate crosses it.
                let fog_x = geom.route_start + 0.88 * span;
                spec.ambiguity_regions.push(AmbiguityRegion {
                    center: (fog_x, geom.route_y(fog_x)),
                    radius: 3.0,
                    sigma_boost: 1.5,
                    mu_noise: None,
                    phantom_drivable: false,
                });
                // Phantom strip beside the corridor: coherent drivable-
                // looking means, high sigma. Covers the lateral band the
                // bulging candidates cross.
                let mut f = 0.06;
                while f <= 0.88 {
                    let x = geom.route_start + f * span;
                    spec.ambiguity_regions.push(AmbiguityRegion {
                        center: (x, geom.route_y(x) + 7.3),
                        radius: 6.0,
                        sigma_boost: 5.0,
                        mu_noise: None,
                        phantom_drivable: true,
                    });
                    f += 0.033;
                }
            }
            ScenarioPreset::Drift => {
                spec.offset_amplitude = 1.2;
                spec.noise_level = 0.3;
            }
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ClassTaxonomy, GridSpec};
    use crate::lane::build_gt_intent_mask;
    use crate::planner::{min_safety, weight_candidates};
    use crate::uncertainty::{build_score_map, group_entropy, McConfig};

    fn desk() -> (GridSpec, ClassTaxonomy) {
        (GridSpec::desk_default(), ClassTaxonomy::desk_default())
    }

    #[test]
    fn clean_scene_argmax_reproduces_truth() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec::default();
        let (truth, field) = generate_scene(&spec, &grid, &tax).unwrap();
        for i in 0..grid.height {
            for j in 0..grid.width {
                let mut argmax = 0;
                let mut best = f64::NEG_INFINITY;
                for c in 0..tax.num_classes {
                    if field.mu()[[i, j, c]] > best {
                        best = field.mu()[[i, j, c]];
                        argmax = c;
                    }
                }
                assert_eq!(argmax, truth.label(i, j) as usize);
            }
        }
    }

    #[test]
    fn generation_is_bit_identical() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec {
            noise_level: 0.8,
            ambiguity_regions: vec![AmbiguityRegion {
                center: (20.0, 0.0),
                radius: 5.0,
                sigma_boost: 2.0,
                mu_noise: None,
                phantom_drivable: false,
            }],
            ..ScenarioSpec::default()
        };
        let (t1, f1) = generate_scene(&spec, &grid, &tax).unwrap();
        let (t2, f2) = generate_scene(&spec, &grid, &tax).unwrap();
        assert_eq!(t1.to_bytes(), t2.to_bytes());
        assert_eq!(f1.to_bytes(), f2.to_bytes());
    }

    #[test]
    fn ambiguity_region_raises_group_entropy() {
        // Mean ambiguity strictly higher inside the boosted disk than
        // outside, over 20 seeds.
        let (grid, tax) = desk();
        let region = AmbiguityRegion {
            center: (24.0, 0.0),
            radius: 6.0,
            sigma_boost: 2.0,
            mu_noise: Some(0.0),
            phantom_drivable: false,
        };
        for seed in 0..20u64 {
            let spec = ScenarioSpec {
                seed,
                ambiguity_regions: vec![region],
                ..ScenarioSpec::default()
            };
            let (_, field) = generate_scene(&spec, &grid, &tax).unwrap();
            let map = build_score_map(&field, &tax, &McConfig::new(64, seed).unwrap(), 0.3).unwrap();
            let h = group_entropy(map.drivable.view());
            let mut inside = (0.0, 0usize);
            let mut outside = (0.0, 0usize);
            for i in 0..grid.height {
                for j in 0..grid.width {
                    let (x, y) = grid.to_world(i as f64, j as f64);
                    if region.contains(x, y) {
                        inside = (inside.0 + h[[i, j]], inside.1 + 1);
                    } else {
                        outside = (outside.0 + h[[i, j]], outside.1 + 1);
                    }
                }
            }
            let mean_in = inside.0 / inside.1 as f64;
            let mean_out = outside.0 / outside.1 as f64;
            assert!(mean_in > mean_out, "seed {seed}: {mean_in} <= {mean_out}");
        }
    }

    #[test]
    fn expert_rides_the_centerline_on_straight() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec::default();
        let (expert, mask) = generate_expert(&spec, &grid, &tax).unwrap();
        for p in expert.points() {
            assert!(p.y.abs() < 1e-6);
        }
        assert_eq!(mask.count_ones(), expert.len());
    }

    #[test]
    fn lane_change_mask_has_contiguous_zero_run() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec {
            template: RoadTemplate::LaneChange,
            ..ScenarioSpec::default()
        };
        let (_, mask) = generate_expert(&spec, &grid, &tax).unwrap();
        let v = mask.values();
        let first_zero = v.iter().position(|&b| !b).expect("transition zeros");
        let last_zero = v.iter().rposition(|&b| !b).unwrap();
        assert!(last_zero > first_zero);
        assert!(v[first_zero..=last_zero].iter().all(|&b| !b), "zero run must be contiguous");
        assert!(v[0], "start of route follows lane 0");
        assert!(v[v.len() - 1], "end of route follows lane 1");
    }

    #[test]
    fn constructed_mask_agrees_with_distance_rule() {
        let (grid, tax) = desk();
        for template in [RoadTemplate::Straight, RoadTemplate::LaneChange, RoadTemplate::Fork] {
            let spec = ScenarioSpec {
                template,
                ..ScenarioSpec::default()
            };
            let (expert, mask) = generate_expert(&spec, &grid, &tax).unwrap();
            let truth = paint_truth(&spec, &grid, &tax).unwrap();
            let rule = build_gt_intent_mask(&expert, &truth, &tax, spec.d_follow);
            assert_eq!(mask, rule);
        }
    }

    #[test]
    fn single_candidate_is_the_expert() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec {
            candidate_count: 1,
            ..ScenarioSpec::default()
        };
        let (expert, _) = generate_expert(&spec, &grid, &tax).unwrap();
        let set = generate_candidates(&spec, &expert).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.candidates[0], expert);
    }

    #[test]
    fn zero_amplitude_candidates_equal_expert() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec {
            offset_amplitude: 0.0,
            ..ScenarioSpec::default()
        };
        let (expert, _) = generate_expert(&spec, &grid, &tax).unwrap();
        let set = generate_candidates(&spec, &expert).unwrap();
        for c in &set.candidates {
            for (p, q) in c.points().iter().zip(expert.points()) {
                assert!((p.y - q.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn violating_candidate_is_discarded() {
        // Outer ladder candidates leave the corridor on a clean scene and
        // the planner discards them through the non-drivable mask.
        let (grid, tax) = desk();
        let spec = ScenarioSpec::default(); // amplitude 3.0 > half-width 1.5
        let (truth, field) = generate_scene(&spec, &grid, &tax).unwrap();
        let (expert, _) = generate_expert(&spec, &grid, &tax).unwrap();
        let map = build_score_map(&field, &tax, &McConfig::new(32, 5).unwrap(), 0.3).unwrap();
        let set = generate_candidates(&spec, &expert).unwrap();
        let outer = set.len() - 2; // one of the +/- full-amplitude pair
        let ms = min_safety(&set.candidates[outer], &map);
        assert!(ms.discarded, "outer candidate should cross non-drivable");
        let set = weight_candidates(set, &map, 4.0);
        assert!(!set.discarded[0], "expert survives");
        assert!(set.posterior_weights[outer] == 0.0);
        drop(truth);
    }

    #[test]
    fn fork_paints_both_branches() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec {
            template: RoadTemplate::Fork,
            ..ScenarioSpec::default()
        };
        let truth = paint_truth(&spec, &grid, &tax).unwrap();
        // Probe a point on each branch near the end of the grid.
        let geom = RouteGeometry::new(spec.template, spec.lane_width, &grid);
        let x = geom.x_hi - 2.0;
        for sign in [1.0, -1.0] {
            let y = sign * geom.route_y(x).abs();
            let p = grid.project(x, y);
            let (i, j) = grid.nearest_pixel(p.row, p.col);
            let l = truth.label(i, j) as usize;
            assert!(
                l == ROAD_CLASS || l == CENTERLINE_CLASS,
                "branch {sign} not painted at ({x}, {y}): label {l}"
            );
        }
    }

    #[test]
    fn agent_box_paints_obstacle() {
        let (grid, tax) = desk();
        let spec = ScenarioSpec {
            agent_boxes: vec![AgentBox {
                x_min: 30.0,
                y_min: -1.0,
                x_max: 34.0,
                y_max: 1.0,
            }],
            ..ScenarioSpec::default()
        };
        let truth = paint_truth(&spec, &grid, &tax).unwrap();
        let p = grid.project(32.0, 0.0);
        let (i, j) = grid.nearest_pixel(p.row, p.col);
        assert_eq!(truth.label(i, j) as usize, OBSTACLE_CLASS);
    }

    #[test]
    fn scenario_json_round_trip() {
        let spec = ScenarioSpec::preset(
            ScenarioPreset::Ambiguous,
            RoadTemplate::Fork,
            9,
            &GridSpec::desk_default(),
        );
        let json = spec.to_json().unwrap();
        let back = ScenarioSpec::from_json(&json).unwrap();
        assert_eq!(spec, back);
    }
}
