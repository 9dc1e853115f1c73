//! Build an uncertainty-aware drivable score map for a synthetic scene and
//! export it (binary planes, PGM render, per-pixel stats).
//!
//! ```bash
//! cargo run --release --example score_map
//! ```

use std::fs;

use uncmap::grid::{ClassTaxonomy, GridSpec};
use uncmap::scenegen::{generate_scene, AmbiguityRegion, ScenarioSpec};
use uncmap::uncertainty::{build_score_map, McConfig};

fn main() -> uncmap::Result<()> {
    let grid = GridSpec::desk_default();
    let taxonomy = ClassTaxonomy::desk_default();

    // A straight road with a foggy patch: calibrated mean noise plus a
    // raised sigma inside the disk.
    let scenario = ScenarioSpec {
        seed: 42,
        ambiguity_regions: vec![AmbiguityRegion {
            center: (30.0, 0.0),
            radius: 7.0,
            sigma_boost: 2.5,
            mu_noise: None,
            phantom_drivable: false,
        }],
        ..ScenarioSpec::default()
    };

    let (_truth, field) = generate_scene(&scenario, &grid, &taxonomy)?;
    let mc = McConfig::new(128, scenario.seed)?;
    let map = build_score_map(&field, &taxonomy, &mc, 0.3)?;

    // Probe three points: clean road, fog, open background.
    for (label, x, y) in [("clean road", 10.0, 0.0), ("foggy road", 30.0, 0.0), ("off-road", 10.0, -20.0)] {
        let p = grid.project(x, y);
        let (i, j) = grid.nearest_pixel(p.row, p.col);
        println!(
            "{label:>10}: p_drivable {:.3}  ambiguity {:.3}  safety {:.3}  masked {}",
            map.drivable[[i, j]],
            map.ambiguity[[i, j]],
            map.safety[[i, j]],
            map.nondrivable[[i, j]]
        );
    }

    let out = std::path::Path::new("out/score_map");
    fs::create_dir_all(out)?;
    map.write(&out.join("score_map.dsmp"))?;
    map.write_pgm(&out.join("score_map.pgm"))?;
    println!("wrote {}", out.join("score_map.pgm").display());
    Ok(())
}
