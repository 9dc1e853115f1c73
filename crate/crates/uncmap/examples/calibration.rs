//! Measure the expected calibration error of the drivable decision on a
//! clean scene and on the same scene with an injected ambiguity region,
//! reading confidence from the raw drivable probability and from the
//! entropy-blended safety score.
//!
//! ```bash
//! cargo run --release --example calibration
//! ```

use std::fs;

use uncmap::calibration::{expected_calibration_error, ConfidenceSource};
use uncmap::grid::{ClassTaxonomy, GridSpec};
use uncmap::harness::truth_drivable;
use uncmap::scenegen::{generate_scene, AmbiguityRegion, ScenarioSpec};
use uncmap::uncertainty::{build_score_map, McConfig};

fn main() -> uncmap::Result<()> {
    let grid = GridSpec::desk_default();
    let taxonomy = ClassTaxonomy::desk_default();
    let mc = McConfig::new(128, 17)?;

    let clean = ScenarioSpec::default();
    let boosted = ScenarioSpec {
        ambiguity_regions: vec![AmbiguityRegion {
            center: (30.0, 0.0),
            radius: 6.0,
            sigma_boost: 2.0,
            mu_noise: None,
            phantom_drivable: false,
        }],
        ..ScenarioSpec::default()
    };

    let out = std::path::Path::new("out/calibration");
    fs::create_dir_all(out)?;
    for (name, scenario) in [("clean", &clean), ("boosted", &boosted)] {
        let (truth, field) = generate_scene(scenario, &grid, &taxonomy)?;
        let map = build_score_map(&field, &taxonomy, &mc, 0.3)?;
        let labels = truth_drivable(&truth, &taxonomy);
        let from_p = expected_calibration_error(
            &map,
            labels.view(),
            10,
            ConfidenceSource::DrivableProbability,
        )?;
        let from_s =
            expected_calibration_error(&map, labels.view(), 10, ConfidenceSource::Safety)?;
        println!(
            "{name:>8}: ECE from drivable probability {:.4}, from safety score {:.4}",
            from_p.ece, from_s.ece
        );
        fs::write(out.join(format!("reliability_{name}.csv")), from_s.to_csv())?;
    }
    println!("wrote reliability CSVs under {}", out.display());
    Ok(())
}
