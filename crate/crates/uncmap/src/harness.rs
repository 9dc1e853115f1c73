//! Experiment harness: run configuration, the scenario pipeline, compliance
//! metrics, paired sweeps, and the artifact-writing commands behind the
//! CLI verbs.
//!
//! Every command is a pure function of its [`RunConfig`] (seeds included),
//! so artifacts are byte-identical across runs and thread counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_from_plane, CalibrationReport};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::grid::{ClassTaxonomy, GridSpec, SemanticGrid};
use crate::lane::{
    centerline_loss, intent_loss, intent_mask_from_field, lane_loss, match_nearest,
    CenterlineField, IntentMask,
};
use crate::losses::{bev_loss, dice_loss, focal_loss, total_loss, LossReport, LossWeights};
use crate::planner::{
    bilinear, planning_loss, rasterize_path, select_plan, weight_candidates, CandidateSet,
    ScoredPlan, Trajectory,
};
use crate::scenegen::{
    generate_candidates, generate_expert, generate_scene, RoadTemplate, ScenarioPreset,
    ScenarioSpec,
};
use crate::uncertainty::{
    build_score_map, build_score_map_no_uncertainty, expected_probabilities, perception_loss,
    DrivableScoreMap, LogitField, McConfig,
};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const DICE_EPS: f64 = 1.0;
pub const DEFAULT_TAU_DRIVE: f64 = 0.3;
pub const DEFAULT_D_FOLLOW: f64 = 0.5;
pub const DEFAULT_CALIBRATION_BINS: usize = 10;

/// Sweep description for the eval command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub count: usize,
    pub base_seed: u64,
    pub preset: ScenarioPreset,
    pub templates: Vec<RoadTemplate>,
}

/// Full run configuration. Loaded from JSON; CLI flags override fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Path of a scenario JSON; a default straight scenario when absent.
    pub scenario: Option<PathBuf>,
    pub grid: GridSpec,
    pub taxonomy: ClassTaxonomy,
    pub mc: McConfig,
    pub tau_drive: f64,
    pub beta: f64,
    pub d_follow: f64,
    pub loss_weights: LossWeights,
    /// Blend group entropy into the planner's map; off reproduces the
    /// uncertainty-blind baseline (plain softmax of the means, zero
    /// entropy).
    pub uncertainty: bool,
    /// Augment plan selection with the lane-regularization penalty.
    pub lane_reg: bool,
    pub calibration_bins: usize,
    pub out_dir: PathBuf,
    pub sweep: Option<SweepConfig>,
    /// Seed override applied to both the Monte-Carlo stream and the
    /// scenario (set by the CLI).
    #[serde(skip)]
    pub seed_override: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: None,
            grid: GridSpec::desk_default(),
            taxonomy: ClassTaxonomy::desk_default(),
            mc: McConfig::default(),
            tau_drive: DEFAULT_TAU_DRIVE,
            beta: crate::planner::DEFAULT_BETA,
            d_follow: DEFAULT_D_FOLLOW,
            loss_weights: LossWeights::default(),
            uncertainty: true,
            lane_reg: true,
            calibration_bins: DEFAULT_CALIBRATION_BINS,
            out_dir: PathBuf::from("out"),
            sweep: None,
            seed_override: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.taxonomy.validate()?;
        if self.mc.num_samples < 1 {
            return Err(Error::config("mc.num_samples must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.tau_drive) {
            return Err(Error::config("tau_drive must be in [0, 1]"));
        }
        if !self.beta.is_finite() {
            return Err(Error::config("beta must be finite"));
        }
        if self.d_follow < 0.0 {
            return Err(Error::config("d_follow must be >= 0"));
        }
        if self.calibration_bins < 1 {
            return Err(Error::config("calibration_bins must be >= 1"));
        }
        self.loss_weights.validate()?;
        if let Some(s) = &self.sweep {
            if s.count == 0 || s.templates.is_empty() {
                return Err(Error::config("sweep needs count >= 1 and templates"));
            }
        }
        Ok(())
    }

    /// Resolve the scenario: the referenced file, or a default straight
    /// scenario. The seed override applies in both cases.
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        let mut spec = match &self.scenario {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read scenario {}: {e}", path.display()))
                })?;
                ScenarioSpec::from_json(&text)?
            }
            None => ScenarioSpec::default(),
        };
        if let Some(seed) = self.seed_override {
            spec.seed = seed;
        }
        Ok(spec)
    }

    fn mc(&self) -> McConfig {
        McConfig {
            num_samples: self.mc.num_samples,
            seed: self.seed_override.unwrap_or(self.mc.seed),
        }
    }
}

/// Everything derived from one scenario that the commands share.
pub struct SceneBundle {
    pub scenario: ScenarioSpec,
    pub truth: SemanticGrid,
    pub field: LogitField,
    pub expert: Trajectory,
    pub expert_intent: IntentMask,
    pub centerline: CenterlineField,
    /// Map the planner scores against (honors the uncertainty toggle).
    pub planning_map: DrivableScoreMap,
    /// Full Monte-Carlo map used for measurement regardless of the toggle.
    pub measured_map: DrivableScoreMap,
}

pub fn build_scene(cfg: &RunConfig, scenario: &ScenarioSpec) -> Result<SceneBundle> {
    let (truth, field) = generate_scene(scenario, &cfg.grid, &cfg.taxonomy)?;
    let (expert, expert_intent) = generate_expert(scenario, &cfg.grid, &cfg.taxonomy)?;
    let centerline = CenterlineField::new(&truth, &cfg.taxonomy);
    let measured_map = build_score_map(&field, &cfg.taxonomy, &cfg.mc(), cfg.tau_drive)?;
    let planning_map = if cfg.uncertainty {
        measured_map.clone()
    } else {
        build_score_map_no_uncertainty(&field, &cfg.taxonomy, cfg.tau_drive)?
    };
    Ok(SceneBundle {
        scenario: scenario.clone(),
        truth,
        field,
        expert,
        expert_intent,
        centerline,
        planning_map,
        measured_map,
    })
}

/// Lane-regularization terms of one candidate: raw intent disagreement and
/// raw centerline distance at the points whose matched expert intent
/// requires lane following.
pub fn lane_penalty(
    candidate: &Trajectory,
    expert: &Trajectory,
    expert_intent: &IntentMask,
    field: &CenterlineField,
    d_follow: f64,
) -> Result<(f64, f64)> {
    let matching = match_nearest(candidate, expert);
    let m_pred = intent_mask_from_field(candidate, field, d_follow).as_f64();
    let intent = intent_loss(&m_pred, expert_intent, &matching)?.value;
    let active = IntentMask::new(
        (0..candidate.len())
            .map(|t| expert_intent.get(matching.get(t)))
            .collect(),
    );
    let center = centerline_loss(candidate, &active, field)?.value;
    Ok((intent, center))
}

/// Posterior argmax augmented with the lane penalty: the selection score of
/// a surviving candidate is `ln(posterior) - lane_penalty`.
pub fn select_with_lane_penalty(
    set: &CandidateSet,
    expert: &Trajectory,
    expert_intent: &IntentMask,
    field: &CenterlineField,
    d_follow: f64,
    weights: &LossWeights,
) -> Result<ScoredPlan> {
    if set.no_safe_plan || set.discarded.iter().all(|&d| d) {
        return Err(Error::NoSafePlan);
    }
    let mut scores = vec![f64::NEG_INFINITY; set.len()];
    for (i, score) in scores.iter_mut().enumerate() {
        if set.discarded[i] {
            continue;
        }
        let (intent, center) =
            lane_penalty(&set.candidates[i], expert, expert_intent, field, d_follow)?;
        *score = set.posterior_weights[i].max(1e-300).ln()
            - (weights.intent * intent + weights.center * center);
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if set.discarded[i] {
            continue;
        }
        match best {
            None => best = Some((i, s)),
            Some((_, bs)) if s > bs => best = Some((i, s)),
            _ => {}
        }
    }
    let (chosen_index, score) = best.ok_or(Error::NoSafePlan)?;
    Ok(ScoredPlan {
        chosen_index,
        score,
        per_candidate_scores: scores,
    })
}

fn choose(cfg: &RunConfig, bundle: &SceneBundle, set: &CandidateSet) -> Result<Option<usize>> {
    let plan = if cfg.lane_reg {
        select_with_lane_penalty(
            set,
            &bundle.expert,
            &bundle.expert_intent,
            &bundle.centerline,
            cfg.d_follow,
            &cfg.loss_weights,
        )
    } else {
        select_plan(set)
    };
    match plan {
        Ok(p) => Ok(Some(p.chosen_index)),
        Err(Error::NoSafePlan) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Fraction of rasterized samples of a trajectory that land on
/// truth-drivable pixels; out-of-bounds samples count as non-compliant.
pub fn dac_like(traj: &Trajectory, truth: &SemanticGrid, taxonomy: &ClassTaxonomy) -> Result<f64> {
    let samples = rasterize_path(traj, truth.spec(), truth.spec().resolution / 2.0)?;
    let total = samples.len();
    let mut ok = 0usize;
    for s in samples {
        if !s.in_bounds {
            continue;
        }
        let (i, j) = truth.spec().nearest_pixel(s.row, s.col);
        if taxonomy.is_drivable(truth.label(i, j) as usize) {
            ok += 1;
        }
    }
    Ok(ok as f64 / total as f64)
}

/// Fraction of intent-active waypoints within `d_follow` meters of the
/// truth centerline. Active flags come from the matched expert intent.
/// Vacuously 1 when no point is active.
pub fn lk_like(
    traj: &Trajectory,
    expert: &Trajectory,
    expert_intent: &IntentMask,
    field: &CenterlineField,
    d_follow: f64,
) -> f64 {
    let matching = match_nearest(traj, expert);
    let mut active = 0usize;
    let mut ok = 0usize;
    for (t, p) in traj.points().iter().enumerate() {
        if !expert_intent.get(matching.get(t)) {
            continue;
        }
        active += 1;
        if let Some(d) = field.metric_distance(p.x, p.y) {
            if d <= d_follow {
                ok += 1;
            }
        }
    }
    if active == 0 {
        1.0
    } else {
        ok as f64 / active as f64
    }
}

/// Ambiguity encountered along a path: min, mean, and max of the bilinear
/// group entropy over in-bounds samples.
pub fn path_ambiguity_stats(traj: &Trajectory, map: &DrivableScoreMap) -> Result<(f64, f64, f64)> {
    let samples = rasterize_path(traj, &map.spec, map.spec.resolution / 2.0)?;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in samples {
        if !s.in_bounds {
            continue;
        }
        let h = bilinear(map.ambiguity.view(), s.row, s.col);
        min = min.min(h);
        max = max.max(h);
        sum += h;
        n += 1;
    }
    if n == 0 {
        return Ok((0.0, 0.0, 0.0));
    }
    Ok((min, sum / n as f64, max))
}

/// Per-scenario evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMetrics {
    pub index: usize,
    pub seed: u64,
    pub template: RoadTemplate,
    pub no_safe_plan: bool,
    pub chosen_index: Option<usize>,
    pub dac_like: Option<f64>,
    pub lk_like: Option<f64>,
    pub chosen_min_safety: Option<f64>,
    pub path_h_min: Option<f64>,
    pub path_h_mean: Option<f64>,
    pub path_h_max: Option<f64>,
    pub ece_p_pos: f64,
    pub ece_s_safe: f64,
}

pub fn truth_drivable(truth: &SemanticGrid, taxonomy: &ClassTaxonomy) -> ndarray::Array2<bool> {
    ndarray::Array2::from_shape_fn((truth.spec().height, truth.spec().width), |(i, j)| {
        taxonomy.is_drivable(truth.label(i, j) as usize)
    })
}

/// Run the full pipeline on one scenario and measure it.
pub fn run_scenario(cfg: &RunConfig, scenario: &ScenarioSpec, index: usize) -> Result<ScenarioMetrics> {
    let bundle = build_scene(cfg, scenario)?;
    let set = generate_candidates(scenario, &bundle.expert)?;
    let set = weight_candidates(set, &bundle.planning_map, cfg.beta);
    let chosen = choose(cfg, &bundle, &set)?;

    let drivable_truth = truth_drivable(&bundle.truth, &cfg.taxonomy);
    let ece_p = calibration_from_plane(
        bundle.measured_map.drivable.view(),
        drivable_truth.view(),
        cfg.calibration_bins,
    )?
    .ece;
    let ece_s = calibration_from_plane(
        bundle.measured_map.safety.view(),
        drivable_truth.view(),
        cfg.calibration_bins,
    )?
    .ece;

    let (mut dac, mut lk, mut ms, mut h_stats) = (None, None, None, None);
    if let Some(idx) = chosen {
        let traj = &set.candidates[idx];
        dac = Some(dac_like(traj, &bundle.truth, &cfg.taxonomy)?);
        lk = Some(lk_like(
            traj,
            &bundle.expert,
            &bundle.expert_intent,
            &bundle.centerline,
            cfg.d_follow,
        ));
        ms = Some(set.min_safety[idx]);
        h_stats = Some(path_ambiguity_stats(traj, &bundle.measured_map)?);
    }
    Ok(ScenarioMetrics {
        index,
        seed: scenario.seed,
        template: scenario.template,
        no_safe_plan: chosen.is_none(),
        chosen_index: chosen,
        dac_like: dac,
        lk_like: lk,
        chosen_min_safety: ms,
        path_h_min: h_stats.map(|s| s.0),
        path_h_mean: h_stats.map(|s| s.1),
        path_h_max: h_stats.map(|s| s.2),
        ece_p_pos: ece_p,
        ece_s_safe: ece_s,
    })
}

/// Expand the sweep into concrete scenarios.
pub fn sweep_scenarios(cfg: &RunConfig) -> Result<Vec<ScenarioSpec>> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("eval requires a sweep section in the config"))?;
    Ok((0..sweep.count)
        .map(|i| {
            let template = sweep.templates[i % sweep.templates.len()];
            ScenarioSpec::preset(sweep.preset, template, sweep.base_seed + i as u64, &cfg.grid)
        })
        .collect())
}

/// Run every scenario of the sweep (scenario-parallel, deterministic).
pub fn run_sweep(cfg: &RunConfig) -> Result<Vec<ScenarioMetrics>> {
    let scenarios = sweep_scenarios(cfg)?;
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_scenario(cfg, s, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn mean_std(values: impl Iterator<Item = f64>) -> MeanStd {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    if n == 0 {
        return MeanStd {
            mean: 0.0,
            std: 0.0,
            count: 0,
        };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    MeanStd {
        mean,
        std: var.sqrt(),
        count: n,
    }
}

/// Result of an exact one-sided paired sign test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// P(at least `wins` successes in `wins + losses` fair coin flips).
    pub p_value: f64,
}

/// One-sided sign test that `a` tends to exceed `b` over paired samples.
/// Ties are dropped, the usual convention.
pub fn paired_sign_test(a: &[f64], b: &[f64]) -> SignTest {
    assert_eq!(a.len(), b.len());
    let mut wins = 0usize;
    let mut losses = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x > y {
            wins += 1;
        } else if y > x {
            losses += 1;
        }
    }
    let n = wins + losses;
    let ties = a.len() - n;
    let p_value = binomial_upper_tail(n, wins);
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

/// P(X >= k) for X ~ Binomial(n, 1/2), exact.
fn binomial_upper_tail(n: usize, k: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut tail = 0.0;
    for i in k..=n {
        let mut c = 1.0;
        for j in 0..i {
            c *= (n - j) as f64 / (j + 1) as f64;
        }
        tail += c;
    }
    tail * 0.5f64.powi(n as i32)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg.out_dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Artifacts produced by a command, for logging.
#[derive(Debug, Clone, Serialize)]
pub struct CommandSummary {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// `gen`: write the scenario artifacts for replay — truth grid, logit
/// field, expert (with intent column), and candidate files.
pub fn cmd_gen(cfg: &RunConfig) -> Result<CommandSummary> {
    cfg.validate()?;
    let scenario = cfg.scenario_spec()?;
    let out = ensure_out_dir(cfg)?;
    let (truth, field) = generate_scene(&scenario, &cfg.grid, &cfg.taxonomy)?;
    let (expert, intent) = generate_expert(&scenario, &cfg.grid, &cfg.taxonomy)?;
    let set = generate_candidates(&scenario, &expert)?;
    let mut files = Vec::new();

    let p = out.join("scenario.json");
    fs::write(&p, scenario.to_json()?)?;
    files.push(p);
    let p = out.join("truth.bevg");
    truth.write(&p)?;
    files.push(p);
    let p = out.join("logits.lgtf");
    field.write(&p)?;
    files.push(p);
    let p = out.join("expert.csv");
    expert.write_csv(&p, Some(&intent.as_f64()))?;
    files.push(p);
    for (i, cand) in set.candidates.iter().enumerate() {
        let p = out.join(format!("candidate_{i:02}.csv"));
        cand.write_csv(&p, None)?;
        files.push(p);
    }
    #[derive(Serialize)]
    struct CandidateManifest {
        count: usize,
        prior_weights: Vec<f64>,
    }
    let p = out.join("candidates.json");
    write_json(
        &p,
        &CandidateManifest {
            count: set.len(),
            prior_weights: set.prior_weights.clone(),
        },
    )?;
    files.push(p);
    Ok(CommandSummary {
        files,
        warnings: Vec::new(),
    })
}

/// `scoremap`: write the score-map binary, a PGM render of the safety
/// plane, and a per-pixel CSV summary.
pub fn cmd_scoremap(cfg: &RunConfig) -> Result<CommandSummary> {
    cfg.validate()?;
    let scenario = cfg.scenario_spec()?;
    let bundle = build_scene(cfg, &scenario)?;
    let out = ensure_out_dir(cfg)?;
    let map = &bundle.planning_map;
    let mut files = Vec::new();

    let p = out.join("score_map.dsmp");
    map.write(&p)?;
    files.push(p);
    let p = out.join("score_map.pgm");
    map.write_pgm(&p)?;
    files.push(p);

    let mut csv = String::from("row,col,drivable_prob,group_entropy,safety,nondrivable\n");
    for i in 0..map.spec.height {
        for j in 0..map.spec.width {
            use std::fmt::Write as _;
            let _ = writeln!(
                csv,
                "{i},{j},{:.6},{:.6},{:.6},{}",
                map.drivable[[i, j]],
                map.ambiguity[[i, j]],
                map.safety[[i, j]],
                u8::from(map.nondrivable[[i, j]])
            );
        }
    }
    let p = out.join("score_map.csv");
    fs::write(&p, csv)?;
    files.push(p);
    Ok(CommandSummary {
        files,
        warnings: Vec::new(),
    })
}

/// Per-candidate entry of the plan report.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateReport {
    pub index: usize,
    pub min_safety: f64,
    pub posterior_weight: f64,
    pub discarded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanReport {
    pub no_safe_plan: bool,
    pub chosen_index: Option<usize>,
    pub candidates: Vec<CandidateReport>,
}

/// `plan`: score and weight the candidates, pick a plan, and write the
/// candidate report plus the chosen trajectory. An all-discarded set is a
/// warning, not an error.
pub fn cmd_plan(cfg: &RunConfig) -> Result<(PlanReport, CommandSummary)> {
    cfg.validate()?;
    let scenario = cfg.scenario_spec()?;
    let bundle = build_scene(cfg, &scenario)?;
    let set = generate_candidates(&scenario, &bundle.expert)?;
    let set = weight_candidates(set, &bundle.planning_map, cfg.beta);
    let chosen = choose(cfg, &bundle, &set)?;

    let report = PlanReport {
        no_safe_plan: chosen.is_none(),
        chosen_index: chosen,
        candidates: (0..set.len())
            .map(|i| CandidateReport {
                index: i,
                min_safety: set.min_safety[i],
                posterior_weight: set.posterior_weights[i],
                discarded: set.discarded[i],
            })
            .collect(),
    };
    let out = ensure_out_dir(cfg)?;
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let p = out.join("plan_report.json");
    write_json(&p, &report)?;
    files.push(p);
    if let Some(idx) = chosen {
        let p = out.join("chosen.csv");
        set.candidates[idx].write_csv(&p, None)?;
        files.push(p);
    } else {
        warnings.push("no safe plan: every candidate was discarded".to_string());
    }
    Ok((report, CommandSummary { files, warnings }))
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalAggregate {
    pub dac_like: MeanStd,
    pub lk_like: MeanStd,
    pub chosen_min_safety: MeanStd,
    pub path_h_mean: MeanStd,
    pub path_h_max: MeanStd,
    pub ece_p_pos: MeanStd,
    pub ece_s_safe: MeanStd,
    pub no_safe_plan_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub scenarios: Vec<ScenarioMetrics>,
    pub aggregate: EvalAggregate,
}

pub fn aggregate_metrics(metrics: &[ScenarioMetrics]) -> EvalAggregate {
    EvalAggregate {
        dac_like: mean_std(metrics.iter().filter_map(|m| m.dac_like)),
        lk_like: mean_std(metrics.iter().filter_map(|m| m.lk_like)),
        chosen_min_safety: mean_std(metrics.iter().filter_map(|m| m.chosen_min_safety)),
        path_h_mean: mean_std(metrics.iter().filter_map(|m| m.path_h_mean)),
        path_h_max: mean_std(metrics.iter().filter_map(|m| m.path_h_max)),
        ece_p_pos: mean_std(metrics.iter().map(|m| m.ece_p_pos)),
        ece_s_safe: mean_std(metrics.iter().map(|m| m.ece_s_safe)),
        no_safe_plan_count: metrics.iter().filter(|m| m.no_safe_plan).count(),
    }
}

/// `eval`: run the configured scenario sweep and write per-scenario metrics
/// plus aggregates.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(EvalReport, CommandSummary)> {
    cfg.validate()?;
    let metrics = run_sweep(cfg)?;
    let report = EvalReport {
        aggregate: aggregate_metrics(&metrics),
        scenarios: metrics,
    };
    let out = ensure_out_dir(cfg)?;
    let p = out.join("metrics.json");
    write_json(&p, &report)?;
    Ok((
        report,
        CommandSummary {
            files: vec![p],
            warnings: Vec::new(),
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub max_relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossesReport {
    pub report: LossReport,
    pub calibration: CalibrationReport,
    pub gradient_checks: BTreeMap<String, GradCheckEntry>,
}

/// `losses`: evaluate the full objective on the scenario and run the
/// finite-difference self-checks.
pub fn cmd_losses(cfg: &RunConfig) -> Result<(LossesReport, CommandSummary)> {
    cfg.validate()?;
    let scenario = cfg.scenario_spec()?;
    let bundle = build_scene(cfg, &scenario)?;
    let set = generate_candidates(&scenario, &bundle.expert)?;
    let set = weight_candidates(set, &bundle.planning_map, cfg.beta);
    let chosen = choose(cfg, &bundle, &set)?;
    let w = &cfg.loss_weights;

    let mc_loss = McConfig {
        num_samples: McConfig::LOSS_SAMPLES,
        seed: cfg.mc().seed,
    };
    let perc = perception_loss(&bundle.field, &bundle.truth, &mc_loss)?.value;
    let pbar = expected_probabilities(&bundle.field, &mc_loss);
    let focal = focal_loss(pbar.view(), &bundle.truth, FOCAL_GAMMA, FOCAL_ALPHA)?.value;
    let dice = dice_loss(pbar.view(), &bundle.truth, DICE_EPS)?.value;
    let bev = bev_loss(perc, focal, dice, w)?;

    let planning = planning_loss(&set, &bundle.expert, w.cls, w.traj, w.rank)?;

    let lane_traj = chosen.map(|i| &set.candidates[i]).unwrap_or(&bundle.expert);
    let (intent, center) = lane_penalty(
        lane_traj,
        &bundle.expert,
        &bundle.expert_intent,
        &bundle.centerline,
        cfg.d_follow,
    )?;
    let lane = lane_loss(intent, center, w.intent, w.center)?;

    let report = total_loss(bev, lane, planning);
    let calibration = calibration_from_plane(
        bundle.measured_map.safety.view(),
        truth_drivable(&bundle.truth, &cfg.taxonomy).view(),
        cfg.calibration_bins,
    )?;

    let seed = cfg.mc().seed;
    let mut gradient_checks = BTreeMap::new();
    for (name, err, tol) in [
        ("perception", check_perception_gradient(seed), 1e-5),
        ("classification", check_classification_gradient(seed), 1e-5),
        ("trajectory", check_trajectory_gradient(seed), 1e-5),
        ("ranking", check_ranking_gradient(seed), 1e-5),
        ("intent", check_intent_gradient(seed), 1e-6),
        ("centerline", check_centerline_gradient(seed), 1e-5),
        ("focal", check_focal_gradient(seed), 1e-5),
        ("dice", check_dice_gradient(seed), 1e-5),
    ] {
        gradient_checks.insert(
            name.to_string(),
            GradCheckEntry {
                max_relative_error: err,
                pass: err <= tol,
            },
        );
    }

    let losses = LossesReport {
        report,
        calibration,
        gradient_checks,
    };
    let out = ensure_out_dir(cfg)?;
    let p = out.join("losses.json");
    write_json(&p, &losses)?;
    let csv = out.join("reliability.csv");
    fs::write(&csv, losses.calibration.to_csv())?;
    Ok((
        losses,
        CommandSummary {
            files: vec![p, csv],
            warnings: Vec::new(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Finite-difference self-checks, shared by cmd_losses and the test suites.
// Each returns the worst relative error between the analytic gradient and
// central differences (step 1e-4) on a small seeded instance.
// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-4;

fn seeded_uniform(seed: u64, tag: u64, i: u64) -> f64 {
    crate::noise::uniform(seed, crate::noise::Stream::CandidateShape, tag, i, 0)
}

pub fn check_perception_gradient(seed: u64) -> f64 {
    use ndarray::Array3;
    let (h, w, k) = (2usize, 2usize, 3usize);
    let spec = GridSpec::new(h, w, 1.0, (0.0, 0.0)).unwrap();
    let n = h * w * k;
    let mu: Vec<f64> = (0..n).map(|i| 2.0 * seeded_uniform(seed, 1, i as u64) - 1.0).collect();
    let ls: Vec<f64> = (0..n).map(|i| -2.0 + 1.5 * seeded_uniform(seed, 2, i as u64)).collect();
    let labels: Vec<u8> = (0..h * w)
        .map(|i| (seeded_uniform(seed, 3, i as u64) * k as f64) as u8 % k as u8)
        .collect();
    let target = SemanticGrid::new(spec, k, labels).unwrap();
    let cfg = McConfig::new(8, seed).unwrap();

    let build = |params: &[f64]| {
        let mu = Array3::from_shape_vec((h, w, k), params[..n].to_vec()).unwrap();
        let ls = Array3::from_shape_vec((h, w, k), params[n..].to_vec()).unwrap();
        LogitField::from_log_sigma(spec, mu, ls).unwrap()
    };
    let params: Vec<f64> = mu.iter().chain(ls.iter()).cloned().collect();
    let field = build(&params);
    let out = perception_loss(&field, &target, &cfg).unwrap();
    let analytic: Vec<f64> = out
        .grad_mu
        .iter()
        .chain(out.grad_log_sigma.iter())
        .cloned()
        .collect();
    let numeric = gradcheck::finite_diff_grad(
        |p| perception_loss(&build(p), &target, &cfg).unwrap().value,
        &params,
        FD_STEP,
    );
    gradcheck::max_relative_error(&analytic, &numeric)
}

fn random_probs(seed: u64, h: usize, w: usize, k: usize) -> ndarray::Array3<f64> {
    let mut pbar = ndarray::Array3::zeros((h, w, k));
    for i in 0..h {
        for j in 0..w {
            let logits: Vec<f64> = (0..k)
                .map(|c| 2.0 * seeded_uniform(seed, 7, (i * w * k + j * k + c) as u64) - 1.0)
                .collect();
            let sm = crate::uncertainty::softmax(&logits);
            for c in 0..k {
                pbar[[i, j, c]] = sm[c];
            }
        }
    }
    pbar
}

fn random_target(seed: u64, h: usize, w: usize, k: usize) -> SemanticGrid {
    let spec = GridSpec::new(h, w, 1.0, (0.0, 0.0)).unwrap();
    let labels: Vec<u8> = (0..h * w)
        .map(|i| (seeded_uniform(seed, 8, i as u64) * k as f64) as u8 % k as u8)
        .collect();
    SemanticGrid::new(spec, k, labels).unwrap()
}

pub fn check_focal_gradient(seed: u64) -> f64 {
    let (h, w, k) = (3usize, 3usize, 3usize);
    let pbar = random_probs(seed, h, w, k);
    let target = random_target(seed, h, w, k);
    let out = focal_loss(pbar.view(), &target, FOCAL_GAMMA, FOCAL_ALPHA).unwrap();
    let params: Vec<f64> = pbar.iter().cloned().collect();
    let analytic: Vec<f64> = out.grad.iter().cloned().collect();
    let numeric = gradcheck::finite_diff_grad(
        |p| {
            let pb = ndarray::Array3::from_shape_vec((h, w, k), p.to_vec()).unwrap();
            focal_loss(pb.view(), &target, FOCAL_GAMMA, FOCAL_ALPHA).unwrap().value
        },
        &params,
        FD_STEP,
    );
    gradcheck::max_relative_error(&analytic, &numeric)
}

pub fn check_dice_gradient(seed: u64) -> f64 {
    let (h, w, k) = (3usize, 3usize, 3usize);
    let pbar = random_probs(seed, h, w, k);
    let target = random_target(seed, h, w, k);
    let out = dice_loss(pbar.view(), &target, DICE_EPS).unwrap();
    let params: Vec<f64> = pbar.iter().cloned().collect();
    let analytic: Vec<f64> = out.grad.iter().cloned().collect();
    let numeric = gradcheck::finite_diff_grad(
        |p| {
            let pb = ndarray::Array3::from_shape_vec((h, w, k), p.to_vec()).unwrap();
            dice_loss(pb.view(), &target, DICE_EPS).unwrap().value
        },
        &params,
        FD_STEP,
    );
    gradcheck::max_relative_error(&analytic, &numeric)
}

pub fn check_classification_gradient(seed: u64) -> f64 {
    let logits: Vec<f64> = (0..4).map(|i| 2.0 * seeded_uniform(seed, 9, i) - 1.0).collect();
    let target = (seeded_uniform(seed, 10, 0) * 4.0) as usize % 4;
    let out = crate::planner::cross_entropy_one_hot(&logits, target);
    let numeric = gradcheck::finite_diff_grad(
        |p| crate::planner::cross_entropy_one_hot(p, target).value,
        &logits,
        FD_STEP,
    );
    gradcheck::max_relative_error(&out.grad, &numeric)
}

pub fn check_ranking_gradient(seed: u64) -> f64 {
    let scores: Vec<f64> = (0..4).map(|i| seeded_uniform(seed, 11, i)).collect();
    let dists: Vec<f64> = (0..4).map(|i| seeded_uniform(seed, 12, i) + 0.01 * i as f64).collect();
    let out = crate::planner::hinge_ranking(&scores, &dists, crate::planner::DEFAULT_RANK_MARGIN);
    let numeric = gradcheck::finite_diff_grad(
        |p| crate::planner::hinge_ranking(p, &dists, crate::planner::DEFAULT_RANK_MARGIN).value,
        &scores,
        FD_STEP,
    );
    gradcheck::max_relative_error(&out.grad, &numeric)
}

pub fn check_trajectory_gradient(seed: u64) -> f64 {
    let n = 5usize;
    let ts: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
    let expert_xy: Vec<(f64, f64)> = (0..n)
        .map(|i| (i as f64 + seeded_uniform(seed, 13, i as u64), seeded_uniform(seed, 14, i as u64)))
        .collect();
    let chosen_xy: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            (
                i as f64 + seeded_uniform(seed, 15, i as u64),
                seeded_uniform(seed, 16, i as u64) + 0.5,
            )
        })
        .collect();
    let expert = Trajectory::from_xy(&ts, &expert_xy).unwrap();
    let build = |params: &[f64]| {
        let xy: Vec<(f64, f64)> = params.chunks(2).map(|c| (c[0], c[1])).collect();
        Trajectory::from_xy(&ts, &xy).unwrap()
    };
    let params: Vec<f64> = chosen_xy.iter().flat_map(|&(x, y)| [x, y]).collect();
    let out = crate::planner::trajectory_loss(&build(&params), &expert);
    let analytic: Vec<f64> = out.grad.iter().flat_map(|&(gx, gy)| [gx, gy]).collect();
    let numeric = gradcheck::finite_diff_grad(
        |p| crate::planner::trajectory_loss(&build(p), &expert).value,
        &params,
        FD_STEP,
    );
    gradcheck::max_relative_error(&analytic, &numeric)
}

pub fn check_intent_gradient(seed: u64) -> f64 {
    let n = 6usize;
    let m_pred: Vec<f64> = (0..n)
        .map(|i| 0.1 + 0.8 * seeded_uniform(seed, 17, i as u64))
        .collect();
    let gt = IntentMask::new((0..n).map(|i| seeded_uniform(seed, 18, i as u64) > 0.5).collect());
    let ts: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let xy: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, 0.0)).collect();
    let t = Trajectory::from_xy(&ts, &xy).unwrap();
    let matching = match_nearest(&t, &t);
    let out = intent_loss(&m_pred, &gt, &matching).unwrap();
    let numeric = gradcheck::finite_diff_grad(
        |p| intent_loss(p, &gt, &matching).unwrap().value,
        &m_pred,
        FD_STEP,
    );
    gradcheck::max_relative_error(&out.grad, &numeric)
}

pub fn check_centerline_gradient(seed: u64) -> f64 {
    use crate::grid::CENTERLINE_CLASS;
    let spec = GridSpec::new(12, 12, 0.5, (0.0, 0.0)).unwrap();
    let mut labels = vec![0u8; 144];
    for i in 0..12 {
        for j in 0..12 {
            if seeded_uniform(seed, 19, (i * 12 + j) as u64) < 0.1 {
                labels[i * 12 + j] = CENTERLINE_CLASS as u8;
            }
        }
    }
    labels[5 * 12 + 7] = CENTERLINE_CLASS as u8;
    let grid = SemanticGrid::new(spec, 4, labels).unwrap();
    let field = CenterlineField::new(&grid, &ClassTaxonomy::desk_default());
    let n = 4usize;
    let ts: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
    let xy: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            (
                0.5 + 5.0 * seeded_uniform(seed, 20, i as u64),
                0.5 + 5.0 * seeded_uniform(seed, 21, i as u64),
            )
        })
        .collect();
    let active = IntentMask::new(vec![true; n]);
    let build = |params: &[f64]| {
        let xy: Vec<(f64, f64)> = params.chunks(2).map(|c| (c[0], c[1])).collect();
        Trajectory::from_xy(&ts, &xy).unwrap()
    };
    let params: Vec<f64> = xy.iter().flat_map(|&(x, y)| [x, y]).collect();
    let out = centerline_loss(&build(&params), &active, &field).unwrap();
    let analytic: Vec<f64> = out.grad.iter().flat_map(|&(gx, gy)| [gx, gy]).collect();
    let numeric = gradcheck::finite_diff_grad(
        |p| centerline_loss(&build(p), &active, &field).unwrap().value,
        &params,
        FD_STEP,
    );
    gradcheck::max_relative_error(&analytic, &numeric)
}
