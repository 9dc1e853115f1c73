//! Intent masks, nearest-neighbor matching, and the centerline distance
//! loss on a lane-change scene, including the legitimate-deviation
//! behavior: points transitioning between lanes carry no centerline
//! penalty.
//!
//! ```bash
//! cargo run --release --example lane_regularization
//! ```

use uncmap::grid::{ClassTaxonomy, GridSpec};
use uncmap::lane::{
    centerline_loss, intent_loss, intent_mask_from_field, lane_loss, match_nearest,
    CenterlineField, IntentMask,
};
use uncmap::scenegen::{
    generate_candidates, generate_expert, paint_truth, RoadTemplate, ScenarioSpec,
};

fn main() -> uncmap::Result<()> {
    let grid = GridSpec::desk_default();
    let taxonomy = ClassTaxonomy::desk_default();
    let scenario = ScenarioSpec {
        seed: 5,
        template: RoadTemplate::LaneChange,
        offset_amplitude: 1.4,
        ..ScenarioSpec::default()
    };

    let truth = paint_truth(&scenario, &grid, &taxonomy)?;
    let field = CenterlineField::new(&truth, &taxonomy);
    let (expert, expert_intent) = generate_expert(&scenario, &grid, &taxonomy)?;

    let ones = expert_intent.count_ones();
    println!(
        "expert intent mask: {ones}/{} lane-following points (zeros mark the lane change)",
        expert_intent.len()
    );

    // Evaluate a drifting candidate against the expert.
    let set = generate_candidates(&scenario, &expert)?;
    let drifter = &set.candidates[set.len() - 1];
    let matching = match_nearest(drifter, &expert);
    let m_pred = intent_mask_from_field(drifter, &field, scenario.d_follow).as_f64();
    let intent = intent_loss(&m_pred, &expert_intent, &matching)?;

    let active = IntentMask::new(
        (0..drifter.len())
            .map(|t| expert_intent.get(matching.get(t)))
            .collect(),
    );
    let center = centerline_loss(drifter, &active, &field)?;
    let combined = lane_loss(intent.value, center.value, 1.0, 1.0)?;
    println!(
        "drifting candidate: intent loss {:.4}, centerline loss {:.4} px over {} active points, lane loss {:.4}",
        intent.value, center.value, center.active_points, combined.total
    );

    // Perturbing an intent-0 point (mid lane change) moves nothing.
    let zero_idx = expert_intent.values().iter().position(|&b| !b).unwrap();
    let mut moved = expert.points().to_vec();
    moved[zero_idx].y += 1.5;
    let moved = uncmap::planner::Trajectory::new(moved)?;
    let active_expert = IntentMask::new(expert_intent.values().to_vec());
    let base = centerline_loss(&expert, &active_expert, &field)?.value;
    let after = centerline_loss(&moved, &active_expert, &field)?.value;
    println!("centerline loss before/after moving an intent-0 point: {base:.6} / {after:.6}");
    Ok(())
}
