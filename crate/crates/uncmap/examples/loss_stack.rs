//! Evaluate the full objective on a scene: perception, focal, and dice
//! terms on the BEV side, classification/regression/ranking on the
//! planning side, the lane regularization, and the combined total, plus a
//! finite-difference check of the perception gradient.
//!
//! ```bash
//! cargo run --release --example loss_stack
//! ```

use uncmap::gradcheck;
use uncmap::harness::{check_perception_gradient, lane_penalty, FOCAL_ALPHA, FOCAL_GAMMA, DICE_EPS};
use uncmap::grid::{ClassTaxonomy, GridSpec};
use uncmap::lane::{lane_loss, CenterlineField};
use uncmap::losses::{bev_loss, dice_loss, focal_loss, total_loss, LossWeights};
use uncmap::planner::{planning_loss, weight_candidates};
use uncmap::scenegen::{generate_candidates, generate_expert, generate_scene, ScenarioSpec};
use uncmap::uncertainty::{build_score_map, expected_probabilities, perception_loss, McConfig};

fn main() -> uncmap::Result<()> {
    let grid = GridSpec::desk_default();
    let taxonomy = ClassTaxonomy::desk_default();
    let scenario = ScenarioSpec {
        seed: 11,
        noise_level: 0.4,
        ..ScenarioSpec::default()
    };
    let weights = LossWeights::default();

    let (truth, field) = generate_scene(&scenario, &grid, &taxonomy)?;
    let (expert, expert_intent) = generate_expert(&scenario, &grid, &taxonomy)?;
    let centerline = CenterlineField::new(&truth, &taxonomy);
    let mc = McConfig::new(McConfig::LOSS_SAMPLES, scenario.seed)?;

    let perc = perception_loss(&field, &truth, &mc)?;
    let pbar = expected_probabilities(&field, &mc);
    let focal = focal_loss(pbar.view(), &truth, FOCAL_GAMMA, FOCAL_ALPHA)?;
    let dice = dice_loss(pbar.view(), &truth, DICE_EPS)?;
    let bev = bev_loss(perc.value, focal.value, dice.value, &weights)?;

    let map = build_score_map(&field, &taxonomy, &McConfig::new(128, scenario.seed)?, 0.3)?;
    let set = generate_candidates(&scenario, &expert)?;
    let set = weight_candidates(set, &map, 4.0);
    let planning = planning_loss(&set, &expert, weights.cls, weights.traj, weights.rank)?;

    let chosen = uncmap::planner::select_plan(&set)?;
    let (intent, center) = lane_penalty(
        &set.candidates[chosen.chosen_index],
        &expert,
        &expert_intent,
        &centerline,
        scenario.d_follow,
    )?;
    let lane = lane_loss(intent, center, weights.intent, weights.center)?;

    let report = total_loss(bev, lane, planning);
    for term in &report.terms {
        println!("{:<16} raw {:>9.5}  weighted {:>9.5}", term.name, term.raw, term.weighted);
    }
    println!("{:<16} {:>24.5}", "total", report.total);

    let err = check_perception_gradient(scenario.seed);
    println!(
        "\nperception gradient vs central differences: max relative error {err:.2e} ({})",
        if err < 1e-5 { "pass" } else { "FAIL" }
    );
    let fd = gradcheck::finite_diff_grad(|v| v[0] * v[0], &[3.0], 1e-4);
    debug_assert!((fd[0] - 6.0).abs() < 1e-6);
    Ok(())
}
