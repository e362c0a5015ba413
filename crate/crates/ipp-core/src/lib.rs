//! Grid-world simulator and planner library for novelty-driven informative
//! path planning experiments.
//!
//! The pipeline: labeled raster worlds ([`terrain`]) are sliced into cell
//! images, per-subpatch embeddings feed a kNN cosine novelty model
//! ([`novelty`]), a potential-field planner steers missions toward novel
//! regions ([`planner`]), lawnmower baselines provide comparisons
//! ([`baselines`]), a nearest-neighbor proxy classifier is retrained on the
//! gathered pool ([`learner`]), and the experiment loop ties it all together
//! ([`harness`]).

pub mod baselines;
pub mod grid;
pub mod harness;
pub mod learner;
pub mod novelty;
pub mod planner;
pub mod pnm;
pub mod rng;
pub mod terrain;

pub use grid::{Direction, Grid, GridCoord, GridDims};
pub use novelty::{EmbeddingDatabase, NoveltyHeatmap, Thresholds};
pub use planner::{Action, MissionRecord, PlannerParams};
pub use terrain::LabeledMap;
