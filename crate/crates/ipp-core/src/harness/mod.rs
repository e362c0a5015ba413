//! Experiment orchestration: the multi-mission collect/retrain loop over a
//! configured planner, with metrics, traces, and renderings.
//!
//! After every mission the observed cells are annotated and pooled, the
//! proxy classifier retrains, the embedding database rebuilds, and the map
//! is re-evaluated in mIoU. The novelty-seeking planner runs its first
//! mission (or any mission with an empty pool) as a small lawnmower because
//! no database exists to estimate novelty against; its thresholds are
//! re-calibrated before each mission from the novelty scores of all
//! previously observed subpatches under the current database.

mod config;
mod metrics;
mod render;

pub use config::{
    parse_config, parse_synthetic_spec, serialize_config, ConfigError, ExperimentConfig, MapSource,
    PlannerKind,
};
pub use metrics::{metrics_from_csv, metrics_to_csv, trace_to_csv, MetricsError, MetricsRow};
pub use render::{render_heatmap, render_label_grid, render_path_overlay};

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::baselines::{big_lawnmower_mission, small_lawnmower_mission, LawnmowerCursor};
use crate::learner::{
    add_observations, map_subpatch_features, mean_iou_against, train_classifier,
    IncrementalPredictor, LearnerError, PatchClassifier, TrainingPool,
};
use crate::novelty::{
    calibrate_thresholds, novelty_grid, novelty_heatmap, subpatch_novelty, write_database_dump,
    EmbeddingDatabase, NoveltyError, Thresholds, HEATMAP_CELL_PX, SUBPATCH_PX,
};
use crate::planner::{run_ipp_mission, MissionRecord, PlannerError};
use crate::terrain::{
    cell_patch, generate_synthetic_map, load_map_bundle, majority_label_grid, LabeledMap, MapError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("planner pipeline requires {HEATMAP_CELL_PX} px cells, map has {0} px")]
    CellSize(usize),
    #[error("mission {mission} start {start} out of bounds for {rows}x{cols} grid")]
    StartOutOfBounds {
        mission: usize,
        start: crate::grid::GridCoord,
        rows: usize,
        cols: usize,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Novelty(#[from] NoveltyError),
}

/// Coarse failure class, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    Io,
    Internal,
}

impl HarnessError {
    pub fn kind(&self) -> FailureKind {
        match self {
            HarnessError::Config(_)
            | HarnessError::CellSize(_)
            | HarnessError::StartOutOfBounds { .. } => FailureKind::Config,
            HarnessError::Io { .. } => FailureKind::Io,
            // Unreadable user inputs are I/O problems; malformed ones are
            // configuration problems; anything else is a broken invariant.
            HarnessError::Map(e) => match e {
                MapError::Io { .. } | MapError::MissingFile(_) => FailureKind::Io,
                MapError::CellOutOfBounds(..) | MapError::EmptyRect | MapError::RectOutOfBounds => {
                    FailureKind::Internal
                }
                _ => FailureKind::Config,
            },
            HarnessError::Novelty(e) => match e {
                NoveltyError::Io(_) => FailureKind::Io,
                NoveltyError::KExceedsDatabase { .. }
                | NoveltyError::NotEnoughScores(_)
                | NoveltyError::DumpFormat(_) => FailureKind::Config,
                _ => FailureKind::Internal,
            },
            HarnessError::Learner(e) => match e {
                LearnerError::Map(MapError::Io { .. } | MapError::MissingFile(_)) => {
                    FailureKind::Io
                }
                LearnerError::Novelty(NoveltyError::Io(_)) => FailureKind::Io,
                LearnerError::SubpatchGranularity | LearnerError::DimensionMismatch(..) => {
                    FailureKind::Config
                }
                _ => FailureKind::Internal,
            },
            HarnessError::Planner(e) => match e {
                PlannerError::HomeOutOfBounds(_) => FailureKind::Config,
                PlannerError::Novelty(NoveltyError::Io(_)) => FailureKind::Io,
                PlannerError::Novelty(NoveltyError::KExceedsDatabase { .. }) => FailureKind::Config,
                _ => FailureKind::Internal,
            },
        }
    }
}

/// Everything one experiment produced, in mission order.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<MissionRecord>,
    pub class_ids: Vec<u8>,
}

/// Load or synthesize the configured world.
pub fn load_world(source: &MapSource) -> Result<LabeledMap, HarnessError> {
    match source {
        MapSource::Bundle(path) => Ok(load_map_bundle(path)?),
        MapSource::Synthetic { spec_path, seed } => {
            let text = fs::read_to_string(spec_path).map_err(|source| HarnessError::Io {
                path: spec_path.clone(),
                source,
            })?;
            let spec = parse_synthetic_spec(&text)?;
            Ok(generate_synthetic_map(&spec, *seed)?)
        }
    }
}

/// Quartile thresholds from the novelty scores of every pooled subpatch
/// under the given database.
pub fn calibrate_from_pool(
    pool: &TrainingPool,
    db: &EmbeddingDatabase,
    k: usize,
) -> Result<Thresholds, NoveltyError> {
    let mut scores = Vec::with_capacity(pool.len());
    for record in pool.records() {
        scores.push(subpatch_novelty(db, &record.embedding, k)?);
    }
    calibrate_thresholds(&scores)
}

/// Incremental form of [`calibrate_from_pool`] for the experiment loop:
/// per pooled record the top-k neighbor set is carried across missions and
/// merged with the entries appended since, which is exact for the
/// append-only pool and produces bit-identical thresholds.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    scanned: usize,
    /// Per pool record; `None` marks a zero-norm embedding (novelty 0).
    topk: Vec<Option<Vec<(f64, usize)>>>,
}

impl CalibrationCache {
    pub fn new() -> Self {
        CalibrationCache::default()
    }

    pub fn thresholds(
        &mut self,
        pool: &TrainingPool,
        db: &EmbeddingDatabase,
        k: usize,
    ) -> Result<Thresholds, NoveltyError> {
        if k > db.len() {
            return Err(NoveltyError::KExceedsDatabase { k, size: db.len() });
        }
        let records = pool.records();
        let mut scores = Vec::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            if i >= self.topk.len() {
                self.topk.push(if record.embedding.norm() == 0.0 {
                    None
                } else {
                    Some(Vec::new())
                });
            }
            match &mut self.topk[i] {
                None => scores.push(0.0),
                Some(stored) => {
                    let from = if stored.is_empty() { 0 } else { self.scanned };
                    let merged =
                        db.top_k_seeded(&record.embedding, k, from, std::mem::take(stored))?;
                    let sum: f64 = merged.iter().map(|(sim, _)| 1.0 - sim).sum();
                    scores.push(sum / k as f64);
                    *stored = merged;
                }
            }
        }
        self.scanned = db.len();
        calibrate_thresholds(&scores)
    }
}

/// Quartile thresholds from the database entries scored against the
/// database itself; used when only a dump is available.
pub fn calibrate_from_database(
    db: &EmbeddingDatabase,
    k: usize,
) -> Result<Thresholds, NoveltyError> {
    let mut scores = Vec::with_capacity(db.len());
    for i in 0..db.len() {
        scores.push(subpatch_novelty(db, db.entry(i).0, k)?);
    }
    calibrate_thresholds(&scores)
}

/// Recompute the observed-cell novelty of a baseline mission against the
/// pre-mission database.
fn fill_observed_novelty(
    record: &mut MissionRecord,
    map: &LabeledMap,
    db: &EmbeddingDatabase,
    k: usize,
) -> Result<(), HarnessError> {
    for (cell, value) in record.observed.iter_mut() {
        *value = novelty_heatmap(db, &cell_patch(map, *cell)?, k)?.mean_score;
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| HarnessError::Io { path, source })
}

/// Run the configured multi-mission experiment. When an output directory is
/// configured, per-mission artifacts (path trace, prediction PGM, path
/// overlay PPM, database dump, and for the novelty planner a whole-map
/// novelty PGM) plus the final `metrics.csv` are written there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let map = load_world(&config.map_source)?;
    run_experiment_on(config, &map)
}

/// A world with its experiment-invariant precomputations: the subpatch
/// ground truth and the whole-map feature grid. Preparing once and running
/// several configurations against it avoids repeating both passes.
pub struct PreparedWorld<'a> {
    map: &'a LabeledMap,
    ground_truth: crate::grid::Grid<u8>,
    features: crate::grid::Grid<crate::novelty::FeatureVector>,
}

impl<'a> PreparedWorld<'a> {
    pub fn new(map: &'a LabeledMap) -> Result<Self, HarnessError> {
        if map.cell_size_px() != HEATMAP_CELL_PX {
            return Err(HarnessError::CellSize(map.cell_size_px()));
        }
        Ok(PreparedWorld {
            map,
            ground_truth: majority_label_grid(map, SUBPATCH_PX)?,
            features: map_subpatch_features(map)?,
        })
    }

    pub fn map(&self) -> &LabeledMap {
        self.map
    }
}

/// [`run_experiment`] against an already-loaded world.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    map: &LabeledMap,
) -> Result<ExperimentResult, HarnessError> {
    run_experiment_prepared(config, &PreparedWorld::new(map)?)
}

/// [`run_experiment`] against a prepared world.
pub fn run_experiment_prepared(
    config: &ExperimentConfig,
    world: &PreparedWorld<'_>,
) -> Result<ExperimentResult, HarnessError> {
    let map = world.map;
    let dims = map.grid_dims();
    for mission in 1..=config.missions {
        let start = config.start_for_mission(mission);
        if !dims.contains(start) {
            return Err(HarnessError::StartOutOfBounds {
                mission,
                start,
                rows: dims.rows,
                cols: dims.cols,
            });
        }
    }
    let out_dir = config.out_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }

    let ground_truth = &world.ground_truth;
    let map_features = &world.features;
    let class_ids: Vec<u8> = map.class_table().iter().map(|c| c.id).collect();

    let mut pool = TrainingPool::new();
    let mut classifier: Option<PatchClassifier> = None;
    let mut predictor = IncrementalPredictor::new();
    let mut calibration = CalibrationCache::new();
    let mut cursor = LawnmowerCursor::start();
    let mut rows: Vec<MetricsRow> = Vec::with_capacity(config.missions);
    let mut records: Vec<MissionRecord> = Vec::with_capacity(config.missions);

    for mission in 1..=config.missions {
        let start = config.start_for_mission(mission);
        let thresholds = match &classifier {
            Some(c) => Some(calibration.thresholds(&pool, c.database(), config.k)?),
            None => None,
        };

        let mut record = match config.planner {
            PlannerKind::Ipp => match (&classifier, thresholds) {
                (Some(c), Some(t)) if !pool.is_empty() => run_ipp_mission(
                    map,
                    c.database(),
                    start,
                    config.budget,
                    t,
                    config.params,
                    config.k,
                )?,
                // No data to estimate novelty against yet.
                _ => small_lawnmower_mission(start, config.budget, dims),
            },
            PlannerKind::BigLawnmower => {
                let (record, advanced) = big_lawnmower_mission(cursor, config.budget, dims);
                cursor = advanced;
                record
            }
            PlannerKind::SmallLawnmower => small_lawnmower_mission(start, config.budget, dims),
        };

        // Baseline planners never look at novelty; score their observations
        // against the pre-mission database for reporting.
        if record.planner_name != "ipp" {
            if let Some(c) = &classifier {
                fill_observed_novelty(&mut record, map, c.database(), config.k)?;
            }
        }
        let high_novelty_cells = thresholds
            .map(|t| record.observed.values().filter(|v| **v > t.beta).count())
            .unwrap_or(0);

        add_observations(&mut pool, map, record.observed.keys().copied(), mission)?;
        let retrained = train_classifier(&mut pool)?;
        let prediction = predictor.predict(&retrained, map_features)?;
        let quality = mean_iou_against(&prediction, ground_truth, map)?;

        if let Some(dir) = out_dir {
            write_file(
                dir,
                &format!("trace_m{mission:02}_{}.csv", record.planner_name),
                trace_to_csv(&record).as_bytes(),
            )?;
            write_file(
                dir,
                &format!("prediction_m{mission:02}.pgm"),
                &render_label_grid(&prediction),
            )?;
            write_file(
                dir,
                &format!("overlay_m{mission:02}.ppm"),
                &render_path_overlay(map, &record.trajectory, record.home),
            )?;
            let dump_path = dir.join(format!("db_m{mission:02}.nippdb"));
            write_database_dump(retrained.database(), &dump_path)?;
            if config.planner == PlannerKind::Ipp {
                let novelty = novelty_grid(retrained.database(), map_features, config.k)?;
                write_file(
                    dir,
                    &format!("novelty_m{mission:02}.pgm"),
                    &render_heatmap(&novelty, 0.0, 2.0),
                )?;
            }
        }

        rows.push(MetricsRow {
            mission,
            planner: config.planner.name().into(),
            pool_cells: pool.cell_count(),
            miou: quality.mean,
            per_class: quality.per_class,
            high_novelty_cells,
        });
        records.push(record);
        classifier = Some(retrained);
    }

    if let Some(dir) = out_dir {
        write_file(
            dir,
            "metrics.csv",
            metrics_to_csv(&rows, &class_ids).as_bytes(),
        )?;
    }
    Ok(ExperimentResult {
        rows,
        records,
        class_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridCoord;
    use crate::terrain::{save_map_bundle, SyntheticClass, SyntheticMapSpec};

    fn small_world_spec() -> SyntheticMapSpec {
        SyntheticMapSpec {
            grid_rows: 4,
            grid_cols: 4,
            cell_size_px: HEATMAP_CELL_PX,
            classes: vec![
                SyntheticClass {
                    name: "grass".into(),
                    mean_rgb: [60, 170, 60],
                },
                SyntheticClass {
                    name: "beach".into(),
                    mean_rgb: [210, 180, 90],
                },
            ],
            noise_amplitude: 6,
            region_seeds: 5,
            rare_fraction: None,
        }
    }

    fn config_for(
        map_dir: &Path,
        planner: PlannerKind,
        missions: usize,
        budget: usize,
    ) -> ExperimentConfig {
        ExperimentConfig {
            map_source: MapSource::Bundle(map_dir.to_path_buf()),
            planner,
            missions,
            budget,
            starts: vec![GridCoord::new(1, 1)],
            k: 4,
            params: Default::default(),
            out_dir: None,
        }
    }

    fn saved_world(dir: &Path) -> LabeledMap {
        let map = generate_synthetic_map(&small_world_spec(), 7).unwrap();
        save_map_bundle(&map, dir).unwrap();
        map
    }

    #[test]
    fn single_mission_produces_one_row() {
        let dir = tempfile::tempdir().unwrap();
        saved_world(dir.path());
        for planner in [
            PlannerKind::Ipp,
            PlannerKind::BigLawnmower,
            PlannerKind::SmallLawnmower,
        ] {
            let result = run_experiment(&config_for(dir.path(), planner, 1, 5)).unwrap();
            assert_eq!(result.rows.len(), 1, "{planner:?}");
            assert_eq!(result.rows[0].pool_cells, result.records[0].observed.len());
        }
    }

    #[test]
    fn ipp_first_mission_matches_small_lawnmower_trajectory() {
        let dir = tempfile::tempdir().unwrap();
        let map = saved_world(dir.path());
        let config = config_for(dir.path(), PlannerKind::Ipp, 2, 8);
        let result = run_experiment(&config).unwrap();
        let fallback = small_lawnmower_mission(GridCoord::new(1, 1), 8, map.grid_dims());
        assert_eq!(result.records[0].trajectory, fallback.trajectory);
        assert_eq!(result.records[0].planner_name, "small_lawnmower");
        assert_eq!(result.records[1].planner_name, "ipp");
    }

    #[test]
    fn pool_cells_are_cumulative_and_nondecreasing() {
        let dir = tempfile::tempdir().unwrap();
        saved_world(dir.path());
        let result =
            run_experiment(&config_for(dir.path(), PlannerKind::BigLawnmower, 3, 5)).unwrap();
        let counts: Vec<usize> = result.rows.iter().map(|r| r.pool_cells).collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{counts:?}");
        let distinct: std::collections::BTreeSet<GridCoord> = result
            .records
            .iter()
            .flat_map(|r| r.observed.keys().copied())
            .collect();
        assert_eq!(*counts.last().unwrap(), distinct.len());
    }

    #[test]
    fn full_coverage_big_lawnmower_reaches_perfect_miou() {
        let dir = tempfile::tempdir().unwrap();
        saved_world(dir.path());
        // 16 cells, budget 15: the whole map in one mission.
        let result =
            run_experiment(&config_for(dir.path(), PlannerKind::BigLawnmower, 1, 15)).unwrap();
        assert_eq!(result.rows[0].miou, 1.0);
    }

    #[test]
    fn identical_configs_give_byte_identical_outputs() {
        let dir = tempfile::tempdir().unwrap();
        saved_world(dir.path());
        let out_a = tempfile::tempdir().unwrap();
        let out_b = tempfile::tempdir().unwrap();
        let mut config = config_for(dir.path(), PlannerKind::Ipp, 2, 6);
        config.out_dir = Some(out_a.path().to_path_buf());
        run_experiment(&config).unwrap();
        config.out_dir = Some(out_b.path().to_path_buf());
        run_experiment(&config).unwrap();

        let mut names: Vec<String> = fs::read_dir(out_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert!(names.contains(&"metrics.csv".to_string()));
        assert!(names.iter().any(|n| n.starts_with("trace_m01")));
        assert!(names.iter().any(|n| n.starts_with("novelty_m02")));
        for name in names {
            let a = fs::read(out_a.path().join(&name)).unwrap();
            let b = fs::read(out_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn calibration_cache_matches_direct_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let map = saved_world(dir.path());
        let cells: Vec<GridCoord> = map.grid_dims().iter().collect();
        let mut pool = TrainingPool::new();
        let mut cache = CalibrationCache::new();
        for (mission, chunk) in cells.chunks(5).enumerate() {
            add_observations(&mut pool, &map, chunk.iter().copied(), mission + 1).unwrap();
            let classifier = train_classifier(&mut pool).unwrap();
            let direct = calibrate_from_pool(&pool, classifier.database(), 4).unwrap();
            let cached = cache.thresholds(&pool, classifier.database(), 4).unwrap();
            assert_eq!(direct, cached, "mission {}", mission + 1);
        }
    }

    #[test]
    fn start_out_of_bounds_is_a_config_failure() {
        let dir = tempfile::tempdir().unwrap();
        saved_world(dir.path());
        let mut config = config_for(dir.path(), PlannerKind::Ipp, 1, 5);
        config.starts = vec![GridCoord::new(9, 9)];
        let err = run_experiment(&config).unwrap_err();
        assert!(matches!(err, HarnessError::StartOutOfBounds { .. }));
        assert_eq!(err.kind(), FailureKind::Config);
    }

    #[test]
    fn missing_bundle_is_an_io_failure() {
        let config = config_for(Path::new("/nonexistent/hopefully"), PlannerKind::Ipp, 1, 5);
        let err = run_experiment(&config).unwrap_err();
        assert_eq!(err.kind(), FailureKind::Io);
    }

    #[test]
    fn wrong_cell_size_is_a_config_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = small_world_spec();
        spec.cell_size_px = 64;
        let map = generate_synthetic_map(&spec, 7).unwrap();
        save_map_bundle(&map, dir.path()).unwrap();
        let err = run_experiment(&config_for(dir.path(), PlannerKind::Ipp, 1, 5)).unwrap_err();
        assert!(matches!(err, HarnessError::CellSize(64)));
        assert_eq!(err.kind(), FailureKind::Config);
    }
}
