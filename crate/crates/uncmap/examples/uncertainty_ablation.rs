//! Paired ablation at desk scale: plan the same ambiguous scenes with and
//! without uncertainty in the planner's map, and compare drivable-area
//! compliance and ambiguity exposure of the chosen trajectories.
//!
//! The blind baseline scores candidates on the plain softmax of the logit
//! means with zero group entropy, so coherent high-sigma hallucinations
//! look as good as real road.
//!
//! ```bash
//! cargo run --release --example uncertainty_ablation
//! ```

use uncmap::harness::{paired_sign_test, run_sweep, RunConfig, SweepConfig};
use uncmap::scenegen::{RoadTemplate, ScenarioPreset};

fn main() -> uncmap::Result<()> {
    let sweep = SweepConfig {
        count: 24,
        base_seed: 500,
        preset: ScenarioPreset::Ambiguous,
        templates: vec![RoadTemplate::Fork, RoadTemplate::LaneChange],
    };
    let mut with = RunConfig {
        lane_reg: false,
        sweep: Some(sweep),
        ..RunConfig::default()
    };
    let mut without = with.clone();
    with.uncertainty = true;
    without.uncertainty = false;

    let on = run_sweep(&with)?;
    let off = run_sweep(&without)?;

    println!("seed   template     DAC on  DAC off   h-max on  h-max off");
    for (a, b) in on.iter().zip(&off) {
        println!(
            "{:<6} {:<12} {:>6.3} {:>8.3} {:>10.3} {:>10.3}",
            a.seed,
            format!("{:?}", a.template),
            a.dac_like.unwrap_or(f64::NAN),
            b.dac_like.unwrap_or(f64::NAN),
            a.path_h_max.unwrap_or(f64::NAN),
            b.path_h_max.unwrap_or(f64::NAN),
        );
    }

    let dac_on: Vec<f64> = on.iter().filter_map(|m| m.dac_like).collect();
    let dac_off: Vec<f64> = off.iter().filter_map(|m| m.dac_like).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let test = paired_sign_test(&dac_on, &dac_off);
    println!(
        "\nmean DAC-like: {:.4} with uncertainty vs {:.4} without",
        mean(&dac_on),
        mean(&dac_off)
    );
    println!(
        "paired sign test: {} wins, {} losses, {} ties, p = {:.2e}",
        test.wins, test.losses, test.ties, test.p_value
    );
    Ok(())
}
