//! Score, weight, discard, and select among candidate trajectories on a
//! fork scene with an ambiguous patch.
//!
//! ```bash
//! cargo run --release --example plan_candidates
//! ```

use uncmap::grid::{ClassTaxonomy, GridSpec};
use uncmap::planner::{select_plan, weight_candidates};
use uncmap::scenegen::{
    generate_candidates, generate_expert, generate_scene, RoadTemplate, ScenarioPreset,
    ScenarioSpec,
};
use uncmap::uncertainty::{build_score_map, McConfig};

fn main() -> uncmap::Result<()> {
    let grid = GridSpec::desk_default();
    let taxonomy = ClassTaxonomy::desk_default();
    let scenario = ScenarioSpec::preset(ScenarioPreset::Ambiguous, RoadTemplate::Fork, 3, &grid);

    let (_truth, field) = generate_scene(&scenario, &grid, &taxonomy)?;
    let (expert, _intent) = generate_expert(&scenario, &grid, &taxonomy)?;
    let map = build_score_map(&field, &taxonomy, &McConfig::new(128, scenario.seed)?, 0.3)?;

    let set = generate_candidates(&scenario, &expert)?;
    let set = weight_candidates(set, &map, 4.0);

    println!("candidate  min_safety  posterior  discarded");
    for i in 0..set.len() {
        println!(
            "{i:>9}  {:>10.4}  {:>9.4}  {}",
            set.min_safety[i], set.posterior_weights[i], set.discarded[i]
        );
    }
    match select_plan(&set) {
        Ok(plan) => println!("\nselected candidate {} (expert is 0)", plan.chosen_index),
        Err(uncmap::Error::NoSafePlan) => println!("\nno safe plan: everything discarded"),
        Err(e) => return Err(e),
    }
    Ok(())
}
