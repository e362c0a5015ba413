//! Proxy for the retrained segmenter: a 1-nearest-neighbor patch classifier
//! over the training pool, whole-map prediction, and mIoU evaluation.
//!
//! The classifier shares the embedding space of the novelty model, so cells
//! that look novel are exactly the cells the classifier is likely to get
//! wrong. Predictions and ground truth are evaluated at 16x16 px subpatch
//! granularity.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::grid::{Grid, GridCoord, GridDims};
use crate::novelty::{
    extract_features, EmbeddingDatabase, FeatureVector, NoveltyError, SUBPATCH_PX,
};
use crate::terrain::{
    cell_patch, majority_label, majority_label_grid, LabeledMap, MapError, PixelRect,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("training pool is empty")]
    EmptyPool,
    #[error("embedding database has no entries")]
    EmptyDatabase,
    #[error("prediction grid is {0}x{1}, ground truth is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("map dimensions are not divisible by the {SUBPATCH_PX} px subpatch size")]
    SubpatchGranularity,
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Novelty(#[from] NoveltyError),
}

/// One pooled training record.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolRecord {
    pub embedding: FeatureVector,
    pub label: u8,
    pub mission: usize,
}

/// Accumulated (subpatch embedding, label) records across missions.
/// Append-only; a cell contributes records at most once.
#[derive(Debug, Clone, Default)]
pub struct TrainingPool {
    records: Vec<PoolRecord>,
    pooled_cells: BTreeSet<GridCoord>,
    rebuilds: u64,
}

impl TrainingPool {
    pub fn new() -> Self {
        TrainingPool::default()
    }

    pub fn records(&self) -> &[PoolRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn cell_count(&self) -> usize {
        self.pooled_cells.len()
    }

    pub fn contains_cell(&self, cell: GridCoord) -> bool {
        self.pooled_cells.contains(&cell)
    }

    /// Monotonically increasing database build counter.
    pub(crate) fn next_generation(&mut self) -> u64 {
        self.rebuilds += 1;
        self.rebuilds
    }
}

/// Pool every subpatch of the given cells with its ground-truth majority
/// label. Cells already pooled are skipped, so re-observing never duplicates
/// records.
pub fn add_observations(
    pool: &mut TrainingPool,
    map: &LabeledMap,
    cells: impl IntoIterator<Item = GridCoord>,
    mission: usize,
) -> Result<(), LearnerError> {
    for cell in cells {
        if !pool.pooled_cells.insert(cell) {
            continue;
        }
        let patch = cell_patch(map, cell)?;
        let (origin_row, origin_col) = patch.origin();
        let features = extract_features(&patch);
        for (sub, embedding) in features.iter() {
            let rect = PixelRect {
                row: origin_row + sub.row * SUBPATCH_PX,
                col: origin_col + sub.col * SUBPATCH_PX,
                rows: SUBPATCH_PX,
                cols: SUBPATCH_PX,
            };
            let label = majority_label(map, rect)?;
            pool.records.push(PoolRecord {
                embedding: embedding.clone(),
                label,
                mission,
            });
        }
    }
    Ok(())
}

/// Rebuild the kNN database from the whole pool; the generation counter
/// advances on every rebuild.
pub fn build_database(pool: &mut TrainingPool) -> Result<EmbeddingDatabase, LearnerError> {
    if pool.is_empty() {
        return Err(LearnerError::EmptyPool);
    }
    let generation = pool.next_generation();
    Ok(EmbeddingDatabase::from_records(
        pool.records.iter().map(|r| (r.embedding.clone(), r.label)),
        generation,
    ))
}

/// Nearest-neighbor classifier bound to one database generation.
#[derive(Debug, Clone)]
pub struct PatchClassifier {
    db: EmbeddingDatabase,
}

impl PatchClassifier {
    pub fn database(&self) -> &EmbeddingDatabase {
        &self.db
    }

    pub fn generation(&self) -> u64 {
        self.db.generation()
    }

    /// Label of the single nearest database entry under the cosine ranking;
    /// zero-norm queries tie everywhere and take the first entry's label.
    pub fn classify(&self, query: &FeatureVector) -> Result<u8, LearnerError> {
        if self.db.is_empty() {
            return Err(LearnerError::EmptyDatabase);
        }
        if query.norm() == 0.0 {
            return Ok(self.db.entry(0).1);
        }
        let (_, index) = self
            .db
            .nearest_from(query, 0, None)?
            .expect("non-empty database");
        Ok(self.db.entry(index).1)
    }
}

/// Retrain the proxy segmenter: rebuild the database and bind a classifier
/// to it.
pub fn train_classifier(pool: &mut TrainingPool) -> Result<PatchClassifier, LearnerError> {
    Ok(PatchClassifier {
        db: build_database(pool)?,
    })
}

/// Predicted class ids at subpatch granularity over the whole map.
pub type LabelGrid = Grid<u8>;

/// Embeddings of every subpatch of the map, in subpatch-grid order.
pub fn map_subpatch_features(map: &LabeledMap) -> Result<Grid<FeatureVector>, LearnerError> {
    if !map.cell_size_px().is_multiple_of(SUBPATCH_PX) {
        return Err(LearnerError::SubpatchGranularity);
    }
    let per_cell = map.cell_size_px() / SUBPATCH_PX;
    let cell_dims = map.grid_dims();
    let dims = GridDims::new(cell_dims.rows * per_cell, cell_dims.cols * per_cell);
    let mut features: Vec<Option<FeatureVector>> = vec![None; dims.cell_count()];
    for cell in cell_dims.iter() {
        let patch = cell_patch(map, cell)?;
        for (sub, feature) in extract_features(&patch).iter() {
            let row = cell.row * per_cell + sub.row;
            let col = cell.col * per_cell + sub.col;
            features[row * dims.cols + col] = Some(feature.clone());
        }
    }
    Ok(Grid::from_vec(
        dims,
        features
            .into_iter()
            .map(|f| f.expect("all subpatches filled"))
            .collect(),
    ))
}

/// Classify every subpatch of the map.
pub fn predict_map(
    classifier: &PatchClassifier,
    map: &LabeledMap,
) -> Result<LabelGrid, LearnerError> {
    let features = map_subpatch_features(map)?;
    let dims = features.dims();
    let mut labels = Vec::with_capacity(dims.cell_count());
    for (_, feature) in features.iter() {
        labels.push(classifier.classify(feature)?);
    }
    Ok(Grid::from_vec(dims, labels))
}

/// Incremental whole-map 1-NN prediction over an append-only database.
///
/// Each update scans only the database entries added since the previous
/// call and merges them with the carried per-subpatch best match, which is
/// exact because entries are never removed or reordered between rebuilds of
/// a growing pool.
#[derive(Debug, Clone)]
pub struct IncrementalPredictor {
    scanned: usize,
    best: Vec<Option<(f64, usize)>>,
}

impl IncrementalPredictor {
    pub fn new() -> Self {
        IncrementalPredictor {
            scanned: 0,
            best: Vec::new(),
        }
    }

    pub fn predict(
        &mut self,
        classifier: &PatchClassifier,
        features: &Grid<FeatureVector>,
    ) -> Result<LabelGrid, LearnerError> {
        let db = classifier.database();
        if db.is_empty() {
            return Err(LearnerError::EmptyDatabase);
        }
        debug_assert!(db.len() >= self.scanned, "database shrank between updates");
        let dims = features.dims();
        if self.best.is_empty() {
            self.best = vec![None; dims.cell_count()];
        }
        let mut labels = Vec::with_capacity(dims.cell_count());
        for (i, (_, feature)) in features.iter().enumerate() {
            if feature.norm() == 0.0 {
                labels.push(db.entry(0).1);
                continue;
            }
            // A carried best at exactly 1.0 cannot be beaten, and later
            // entries lose any tie to it, so the scan can be skipped.
            let merged = match self.best[i] {
                Some(hit) if hit.0 >= 1.0 => Some(hit),
                carried => db.nearest_from(feature, self.scanned, carried)?,
            };
            self.best[i] = merged;
            labels.push(db.entry(merged.expect("non-empty database").1).1);
        }
        self.scanned = db.len();
        Ok(Grid::from_vec(dims, labels))
    }
}

impl Default for IncrementalPredictor {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-class intersection-over-union; `None` when the class appears in
/// neither prediction nor ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassIou {
    pub class_id: u8,
    pub iou: Option<f64>,
}

/// mIoU of a prediction against the map's subpatch-granularity ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanIou {
    pub per_class: Vec<ClassIou>,
    pub mean: f64,
}

pub fn mean_iou(pred: &LabelGrid, map: &LabeledMap) -> Result<MeanIou, LearnerError> {
    let gt =
        majority_label_grid(map, SUBPATCH_PX).map_err(|_| LearnerError::SubpatchGranularity)?;
    mean_iou_against(pred, &gt, map)
}

/// mIoU against a precomputed ground-truth grid (the experiment loop reuses
/// one ground truth across missions).
pub fn mean_iou_against(
    pred: &LabelGrid,
    gt: &Grid<u8>,
    map: &LabeledMap,
) -> Result<MeanIou, LearnerError> {
    let (pd, gd) = (pred.dims(), gt.dims());
    if pd != gd {
        return Err(LearnerError::DimensionMismatch(
            pd.rows, pd.cols, gd.rows, gd.cols,
        ));
    }
    let mut intersection = [0u64; 256];
    let mut union = [0u64; 256];
    for (p, g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if p == g {
            intersection[*p as usize] += 1;
            union[*p as usize] += 1;
        } else {
            union[*p as usize] += 1;
            union[*g as usize] += 1;
        }
    }
    let mut per_class = Vec::with_capacity(map.class_table().len());
    let mut sum = 0.0;
    let mut included = 0usize;
    for entry in map.class_table() {
        let c = entry.id as usize;
        let iou = if union[c] == 0 {
            None
        } else {
            let v = intersection[c] as f64 / union[c] as f64;
            sum += v;
            included += 1;
            Some(v)
        };
        per_class.push(ClassIou {
            class_id: entry.id,
            iou,
        });
    }
    let mean = if included == 0 {
        0.0
    } else {
        sum / included as f64
    };
    Ok(MeanIou { per_class, mean })
}
