//! Generate a synthetic scene end to end and write every replay artifact:
//! scenario JSON, ground-truth grid, logit field, expert trajectory with
//! its intent column, and the candidate set.
//!
//! ```bash
//! cargo run --release --example scene_generation
//! ```

use std::fs;
use std::path::Path;

use uncmap::grid::{ClassTaxonomy, GridSpec, SemanticGrid};
use uncmap::scenegen::{
    generate_candidates, generate_expert, generate_scene, RoadTemplate, ScenarioSpec,
};
use uncmap::uncertainty::LogitField;

fn main() -> uncmap::Result<()> {
    let grid = GridSpec::desk_default();
    let taxonomy = ClassTaxonomy::desk_default();
    let scenario = ScenarioSpec {
        seed: 99,
        template: RoadTemplate::Fork,
        noise_level: 0.5,
        ..ScenarioSpec::default()
    };

    let (truth, field) = generate_scene(&scenario, &grid, &taxonomy)?;
    let (expert, intent) = generate_expert(&scenario, &grid, &taxonomy)?;
    let candidates = generate_candidates(&scenario, &expert)?;

    let out = Path::new("out/scene_generation");
    fs::create_dir_all(out)?;
    fs::write(out.join("scenario.json"), scenario.to_json()?)?;
    truth.write(&out.join("truth.bevg"))?;
    field.write(&out.join("logits.lgtf"))?;
    expert.write_csv(&out.join("expert.csv"), Some(&intent.as_f64()))?;
    for (i, cand) in candidates.candidates.iter().enumerate() {
        cand.write_csv(&out.join(format!("candidate_{i:02}.csv")), None)?;
    }

    // The generator is a pure function of the spec: regenerating produces
    // bit-identical artifacts, and the binary formats round-trip.
    let (truth2, field2) = generate_scene(&scenario, &grid, &taxonomy)?;
    assert_eq!(truth.to_bytes(), truth2.to_bytes());
    assert_eq!(field.to_bytes(), field2.to_bytes());
    let reloaded = SemanticGrid::read(&out.join("truth.bevg"), grid.resolution, grid.origin)?;
    assert_eq!(reloaded.labels(), truth.labels());
    let logits = LogitField::from_bytes(
        &fs::read(out.join("logits.lgtf"))?,
        grid.resolution,
        grid.origin,
    )?;
    assert_eq!(logits.num_classes(), taxonomy.num_classes);

    let drivable = truth
        .labels()
        .iter()
        .filter(|&&l| taxonomy.is_drivable(l as usize))
        .count();
    println!(
        "scene: {} drivable of {} pixels, {} candidates, expert {} points",
        drivable,
        grid.num_pixels(),
        candidates.len(),
        expert.len()
    );
    println!("artifacts under {}", out.display());
    Ok(())
}
