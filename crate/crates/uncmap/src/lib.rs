//! Uncertainty-aware drivable score maps and trajectory evaluation on
//! synthetic BEV scenes.
//!
//! The library turns per-pixel Gaussian logit distributions on a bird's-eye
//! grid into an uncertainty-aware drivable score map, scores and reweights
//! candidate trajectories against it, computes a lane-following
//! regularization, and evaluates the full training objective with
//! verifiable analytic gradients. A deterministic scene generator stands in
//! for the camera pipeline so every formula can be exercised end to end.
//!
//! Start with the runnable examples:
//!
//! ```bash
//! cargo run --release --example score_map
//! cargo run --release --example plan_candidates
//! cargo run --release --example lane_regularization
//! cargo run --release --example loss_stack
//! cargo run --release --example calibration
//! cargo run --release --example scene_generation
//! cargo run --release --example uncertainty_ablation
//! ```
//!
//! A thin `uncmap` binary wraps the same pipelines behind the verbs `gen`,
//! `scoremap`, `plan`, `eval`, and `losses` for reproducible experiment
//! runs driven by a JSON config.
//!
//! ```
//! use ndarray::Array3;
//! use uncmap::grid::{ClassTaxonomy, GridSpec};
//! use uncmap::uncertainty::{build_score_map, LogitField, McConfig};
//!
//! let spec = GridSpec::new(4, 4, 0.5, (0.0, -1.0)).unwrap();
//! let mut mu = Array3::zeros((4, 4, 4));
//! mu.slice_mut(ndarray::s![.., .., 1]).fill(7.0);
//! let sigma = Array3::from_elem((4, 4, 4), 0.5);
//! let field = LogitField::new(spec, mu, sigma).unwrap();
//! let map = build_score_map(
//!     &field,
//!     &ClassTaxonomy::desk_default(),
//!     &McConfig::new(64, 7).unwrap(),
//!     0.3,
//! )
//! .unwrap();
//! assert!(map.safety[[0, 0]] > 0.9);
//! ```

pub mod calibration;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod harness;
pub mod lane;
pub mod losses;
pub mod noise;
pub mod planner;
pub mod scenegen;
pub mod uncertainty;

pub use error::{Error, Result};

/// Cap the global worker pool from the `UNCMAP_THREADS` environment
/// variable. No-op when the variable is unset, invalid, or the pool was
/// already built. Results never depend on the thread count; this only
/// bounds parallelism.
pub fn configure_threads_from_env() {
    if let Ok(value) = std::env::var("UNCMAP_THREADS") {
        if let Ok(n) = value.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
