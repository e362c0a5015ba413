//! Per-subpatch feature embeddings, the kNN embedding database, and cosine
//! novelty heatmaps with gradients and quartile thresholds.
//!
//! Novelty of a query embedding is the mean cosine distance `1 - cos` to its
//! k nearest neighbors in the training distribution, so scores live in
//! `[0, 2]` and exact duplicates score 0. Neighbor ranking is similarity
//! descending with ties broken by insertion index ascending; the same rule is
//! used everywhere a nearest entry is needed so that results are reproducible
//! bit for bit.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::grid::{Grid, GridCoord, GridDims};
use crate::terrain::Patch;

/// Embedding dimension: mean RGB, std RGB, mean/std of gradient magnitude.
pub const FEATURE_DIM: usize = 8;
/// Side of one subpatch in pixels.
pub const SUBPATCH_PX: usize = 16;
/// Heatmap resolution per cell (8x8 subpatches of a 128 px cell).
pub const HEATMAP_SIDE: usize = 8;
/// Cell side required by the heatmap pipeline.
pub const HEATMAP_CELL_PX: usize = HEATMAP_SIDE * SUBPATCH_PX;

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Error)]
pub enum NoveltyError {
    #[error("training pool is empty")]
    EmptyPool,
    #[error("k = {k} exceeds database size {size}")]
    KExceedsDatabase { k: usize, size: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query embedding has zero norm")]
    ZeroNormQuery,
    #[error("heatmap requires a {HEATMAP_CELL_PX} px cell, got {side} px")]
    PatchSize { side: usize },
    #[error("threshold calibration needs at least 4 scores, got {0}")]
    NotEnoughScores(usize),
    #[error("database dump: {0}")]
    DumpFormat(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Where an embedding came from: grid cell plus subpatch indices within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SubpatchSource {
    pub cell: GridCoord,
    pub sub_row: u8,
    pub sub_col: u8,
}

/// Fixed-length embedding of one 16x16 px subpatch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub source: SubpatchSource,
}

impl FeatureVector {
    pub fn new(values: [f64; FEATURE_DIM], source: SubpatchSource) -> Self {
        FeatureVector { values, source }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn unit(&self) -> Option<[f64; FEATURE_DIM]> {
        let norm = self.norm();
        if norm == 0.0 {
            return None;
        }
        let mut unit = self.values;
        for v in &mut unit {
            *v /= norm;
        }
        Some(unit)
    }
}

/// Extract the per-subpatch embedding grid of a cell image.
///
/// For every 16x16 px block: mean R, G, B; population standard deviation of
/// R, G, B; mean and population standard deviation of the luminance gradient
/// magnitude `|dx| + |dy|` (forward differences over the whole patch, last
/// row/column clamped to zero difference).
pub fn extract_features(patch: &Patch) -> Grid<FeatureVector> {
    let side = patch.side_px();
    assert!(
        side > 0 && side.is_multiple_of(SUBPATCH_PX),
        "patch side {side} not divisible by subpatch size"
    );
    let blocks = side / SUBPATCH_PX;
    let cell = GridCoord::new(patch.origin().0 / side, patch.origin().1 / side);

    // Gradient magnitude raster over the whole patch.
    let mut lum = vec![0.0f64; side * side];
    for (i, px) in patch.pixels().chunks_exact(3).enumerate() {
        lum[i] = LUMA_WEIGHTS[0] * px[0] as f64
            + LUMA_WEIGHTS[1] * px[1] as f64
            + LUMA_WEIGHTS[2] * px[2] as f64;
    }
    let mut grad = vec![0.0f64; side * side];
    for r in 0..side {
        for c in 0..side {
            let here = lum[r * side + c];
            let dx = if c + 1 < side {
                lum[r * side + c + 1] - here
            } else {
                0.0
            };
            let dy = if r + 1 < side {
                lum[(r + 1) * side + c] - here
            } else {
                0.0
            };
            grad[r * side + c] = dx.abs() + dy.abs();
        }
    }

    let n = (SUBPATCH_PX * SUBPATCH_PX) as f64;
    let mut out = Vec::with_capacity(blocks * blocks);
    for block_row in 0..blocks {
        for block_col in 0..blocks {
            // Integer channel sums keep the color statistics exact.
            let mut sum = [0u64; 3];
            let mut sum_sq = [0u64; 3];
            let mut grad_sum = 0.0f64;
            let mut grad_sum_sq = 0.0f64;
            for r in block_row * SUBPATCH_PX..(block_row + 1) * SUBPATCH_PX {
                for c in block_col * SUBPATCH_PX..(block_col + 1) * SUBPATCH_PX {
                    let rgb = patch.rgb_at(r, c);
                    for ch in 0..3 {
                        sum[ch] += rgb[ch] as u64;
                        sum_sq[ch] += (rgb[ch] as u64) * (rgb[ch] as u64);
                    }
                    let g = grad[r * side + c];
                    grad_sum += g;
                    grad_sum_sq += g * g;
                }
            }
            let mut values = [0.0f64; FEATURE_DIM];
            for ch in 0..3 {
                let mean = sum[ch] as f64 / n;
                let var = (sum_sq[ch] as f64 / n - mean * mean).max(0.0);
                values[ch] = mean;
                values[3 + ch] = var.sqrt();
            }
            let grad_mean = grad_sum / n;
            let grad_var = (grad_sum_sq / n - grad_mean * grad_mean).max(0.0);
            values[6] = grad_mean;
            values[7] = grad_var.sqrt();
            out.push(FeatureVector::new(
                values,
                SubpatchSource {
                    cell,
                    sub_row: block_row as u8,
                    sub_col: block_col as u8,
                },
            ));
        }
    }
    Grid::from_vec(GridDims::new(blocks, blocks), out)
}

/// Immutable store of training-pool embeddings, target of kNN queries.
///
/// Zero-norm embeddings (pure black subpatches) are excluded at build time:
/// cosine similarity is undefined for them, and as queries they are treated
/// as novelty 0.
#[derive(Debug, Clone)]
pub struct EmbeddingDatabase {
    entries: Vec<(FeatureVector, u8)>,
    /// Euclidean norms of `entries`, all positive.
    norms: Vec<f64>,
    /// Precomputed unit vectors, row-major.
    units: Vec<[f64; FEATURE_DIM]>,
    /// The same unit vectors column-major, for the blocked scans.
    columns: Vec<Vec<f64>>,
    /// Per 256-entry block: centroid of the unit vectors and the largest
    /// distance of a member to it, for exact scan pruning.
    blocks: Vec<BlockStats>,
    generation: u64,
}

#[derive(Debug, Clone)]
struct BlockStats {
    centroid: [f64; FEATURE_DIM],
    radius: f64,
}

const SCAN_BLOCK: usize = 256;

impl EmbeddingDatabase {
    /// Build from (embedding, class label) records, preserving insertion
    /// order and skipping zero-norm embeddings.
    pub fn from_records(
        records: impl IntoIterator<Item = (FeatureVector, u8)>,
        generation: u64,
    ) -> Self {
        let mut entries = Vec::new();
        let mut norms = Vec::new();
        let mut units = Vec::new();
        let mut columns = vec![Vec::new(); FEATURE_DIM];
        for (vector, label) in records {
            if let Some(unit) = vector.unit() {
                norms.push(vector.norm());
                for (column, value) in columns.iter_mut().zip(unit) {
                    column.push(value);
                }
                units.push(unit);
                entries.push((vector, label));
            }
        }
        let blocks = units
            .chunks(SCAN_BLOCK)
            .map(|chunk| {
                let mut centroid = [0.0f64; FEATURE_DIM];
                for unit in chunk {
                    for (c, v) in centroid.iter_mut().zip(unit) {
                        *c += v;
                    }
                }
                for c in &mut centroid {
                    *c /= chunk.len() as f64;
                }
                let radius = chunk
                    .iter()
                    .map(|unit| {
                        unit.iter()
                            .zip(&centroid)
                            .map(|(v, c)| (v - c) * (v - c))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(0.0f64, f64::max);
                // Slack far above the rounding error of the 8-term dot
                // products keeps the pruning bound sound in floating point.
                BlockStats {
                    centroid,
                    radius: radius + 1e-12,
                }
            })
            .collect();
        EmbeddingDatabase {
            entries,
            norms,
            units,
            columns,
            blocks,
            generation,
        }
    }

    /// Visit `(index, raw dot)` for entries in `[from, len)`, ascending.
    /// Blocked column-major accumulation; per entry the summation order is
    /// identical to [`dot8`], so both paths agree bitwise.
    ///
    /// Whole blocks are skipped when `dot(q, centroid) + radius <= cutoff()`:
    /// by Cauchy-Schwarz no member can then exceed the cutoff, and a member
    /// exactly at the cutoff would lose its tie to the incumbent smaller
    /// index anyway. The pruning is therefore exact.
    fn scan_dots(
        &self,
        q_unit: &[f64; FEATURE_DIM],
        from: usize,
        mut cutoff: impl FnMut() -> f64,
        mut visit: impl FnMut(usize, f64),
    ) {
        let n = self.len();
        let mut buf = [0.0f64; SCAN_BLOCK];
        let mut start = from;
        while start < n {
            let block = &self.blocks[start / SCAN_BLOCK];
            let block_end = ((start / SCAN_BLOCK) + 1) * SCAN_BLOCK;
            let len = n.min(block_end) - start;
            let bound = dot8(q_unit, &block.centroid) + block.radius;
            if bound <= cutoff() {
                start += len;
                continue;
            }
            let col = &self.columns[0][start..start + len];
            for (acc, c) in buf[..len].iter_mut().zip(col) {
                *acc = q_unit[0] * c;
            }
            for (q, column) in q_unit.iter().zip(&self.columns).skip(1) {
                let col = &column[start..start + len];
                for (acc, c) in buf[..len].iter_mut().zip(col) {
                    *acc += q * c;
                }
            }
            for (i, dot) in buf[..len].iter().enumerate() {
                visit(start + i, *dot);
            }
            start += len;
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn entry(&self, index: usize) -> (&FeatureVector, u8) {
        let (v, l) = &self.entries[index];
        (v, *l)
    }

    pub fn norm(&self, index: usize) -> f64 {
        self.norms[index]
    }

    /// Cosine similarity between a query and entry `index`, clamped to
    /// `[-1, 1]`; bitwise-identical value arrays compare as exactly 1.
    pub fn similarity(&self, query: &FeatureVector, index: usize) -> Result<f64, NoveltyError> {
        let q_unit = query.unit().ok_or(NoveltyError::ZeroNormQuery)?;
        Ok(self.similarity_unit(query, &q_unit, index))
    }

    fn similarity_unit(
        &self,
        query: &FeatureVector,
        q_unit: &[f64; FEATURE_DIM],
        index: usize,
    ) -> f64 {
        self.refine_sim(query, index, dot8(q_unit, &self.units[index]))
    }

    // Shared slow path for near-1 dots: bitwise-equal raw values pin the
    // similarity to exactly 1 before clamping.
    #[inline]
    fn refine_sim(&self, query: &FeatureVector, index: usize, dot: f64) -> f64 {
        if dot > 1.0 - 1e-9 && query.values == self.entries[index].0.values {
            return 1.0;
        }
        dot.clamp(-1.0, 1.0)
    }

    /// The k most similar entries: `(similarity, index)` ordered by
    /// similarity descending, insertion index ascending on ties.
    pub fn top_k(
        &self,
        query: &FeatureVector,
        k: usize,
    ) -> Result<Vec<(f64, usize)>, NoveltyError> {
        if k > self.len() {
            return Err(NoveltyError::KExceedsDatabase {
                k,
                size: self.len(),
            });
        }
        self.top_k_seeded(query, k, 0, Vec::new())
    }

    /// Top-k over `seed ∪ entries[from..]`, where `seed` must be the top-k
    /// of `entries[..from]` (sorted, indices below `from`). Because the
    /// selection decomposes over a partition of the entries, this merges an
    /// append-only database exactly.
    pub fn top_k_seeded(
        &self,
        query: &FeatureVector,
        k: usize,
        from: usize,
        seed: Vec<(f64, usize)>,
    ) -> Result<Vec<(f64, usize)>, NoveltyError> {
        if k == 0 {
            return Err(NoveltyError::ZeroK);
        }
        debug_assert!(seed.len() <= k);
        debug_assert!(seed.iter().all(|(_, i)| *i < from));
        debug_assert!(seed.windows(2).all(|w| w[0].0 >= w[1].0));
        let q_unit = query.unit().ok_or(NoveltyError::ZeroNormQuery)?;
        let mut best: Vec<(f64, usize)> = seed;
        best.reserve(k + 1 - best.len());
        // Prune threshold shared between block pruning and entry visits;
        // stays at -inf until k entries are held.
        let cutoff = std::cell::Cell::new(if best.len() == k {
            best[k - 1].0
        } else {
            f64::NEG_INFINITY
        });
        self.scan_dots(
            &q_unit,
            from,
            || cutoff.get(),
            |index, dot| {
                // The scan runs in index order, so an equal similarity never
                // displaces an incumbent (its index is necessarily smaller).
                if dot <= cutoff.get() && dot <= 1.0 - 1e-9 {
                    return;
                }
                let sim = self.refine_sim(query, index, dot);
                if sim <= cutoff.get() {
                    return;
                }
                let pos = best.partition_point(|(s, _)| *s >= sim);
                best.insert(pos, (sim, index));
                if best.len() > k {
                    best.pop();
                }
                if best.len() == k {
                    cutoff.set(best[k - 1].0);
                }
            },
        );
        Ok(best)
    }

    /// Best match in `entries[from..]`, merged with a carried-over best.
    /// Supports incremental 1-NN over append-only databases.
    pub fn nearest_from(
        &self,
        query: &FeatureVector,
        from: usize,
        carried: Option<(f64, usize)>,
    ) -> Result<Option<(f64, usize)>, NoveltyError> {
        let q_unit = query.unit().ok_or(NoveltyError::ZeroNormQuery)?;
        let (best_sim, mut best_index) = match carried {
            Some((s, i)) => (s, i as isize),
            None => (f64::NEG_INFINITY, -1),
        };
        let best_sim = std::cell::Cell::new(best_sim);
        self.scan_dots(
            &q_unit,
            from,
            || best_sim.get(),
            |index, dot| {
                if dot <= best_sim.get() && dot <= 1.0 - 1e-9 {
                    return;
                }
                let sim = self.refine_sim(query, index, dot);
                if sim > best_sim.get() {
                    best_sim.set(sim);
                    best_index = index as isize;
                }
            },
        );
        Ok((best_index >= 0).then_some((best_sim.get(), best_index as usize)))
    }
}

// Serial accumulation, matching the per-entry order of the blocked
// column-major scan so both routes produce identical floats.
fn dot8(a: &[f64; FEATURE_DIM], b: &[f64; FEATURE_DIM]) -> f64 {
    let mut acc = 0.0;
    for j in 0..FEATURE_DIM {
        acc += a[j] * b[j];
    }
    acc
}

pub use crate::learner::build_database;

/// One neighbor returned by [`k_nearest`].
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub similarity: f64,
    pub label: u8,
}

/// The k entries with largest cosine similarity to `query`, ordered by
/// similarity descending; ties break to the smaller insertion index.
pub fn k_nearest(
    db: &EmbeddingDatabase,
    query: &FeatureVector,
    k: usize,
) -> Result<Vec<Neighbor>, NoveltyError> {
    let top = db.top_k(query, k)?;
    Ok(top
        .into_iter()
        .map(|(similarity, index)| Neighbor {
            index,
            similarity,
            label: db.entry(index).1,
        })
        .collect())
}

/// Mean cosine distance of `query` to its k nearest neighbors; in `[0, 2]`.
pub fn novelty_score(
    db: &EmbeddingDatabase,
    query: &FeatureVector,
    k: usize,
) -> Result<f64, NoveltyError> {
    let top = db.top_k(query, k)?;
    let sum: f64 = top.iter().map(|(sim, _)| 1.0 - sim).sum();
    Ok(sum / k as f64)
}

/// Novelty of one subpatch embedding; zero-norm queries are degenerate
/// (pure black), not novel, and score 0.
pub fn subpatch_novelty(
    db: &EmbeddingDatabase,
    query: &FeatureVector,
    k: usize,
) -> Result<f64, NoveltyError> {
    if query.norm() == 0.0 {
        return Ok(0.0);
    }
    novelty_score(db, query, k)
}

/// 8x8 grid of per-subpatch novelty scores for one observed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyHeatmap {
    pub scores: [[f64; HEATMAP_SIDE]; HEATMAP_SIDE],
    pub mean_score: f64,
    /// Mean heatmap gradient as (d/dcol, d/drow); +row points South.
    pub gradient: (f64, f64),
}

impl NoveltyHeatmap {
    pub fn from_scores(scores: [[f64; HEATMAP_SIDE]; HEATMAP_SIDE]) -> Self {
        let sum: f64 = scores.iter().flatten().sum();
        NoveltyHeatmap {
            scores,
            mean_score: sum / (HEATMAP_SIDE * HEATMAP_SIDE) as f64,
            gradient: heatmap_gradient(&scores),
        }
    }
}

/// Patchwise novelty of a full cell image: one kNN search per subpatch.
pub fn novelty_heatmap(
    db: &EmbeddingDatabase,
    patch: &Patch,
    k: usize,
) -> Result<NoveltyHeatmap, NoveltyError> {
    if patch.side_px() != HEATMAP_CELL_PX {
        return Err(NoveltyError::PatchSize {
            side: patch.side_px(),
        });
    }
    let features = extract_features(patch);
    let mut scores = [[0.0f64; HEATMAP_SIDE]; HEATMAP_SIDE];
    for (coord, feature) in features.iter() {
        scores[coord.row][coord.col] = subpatch_novelty(db, feature, k)?;
    }
    Ok(NoveltyHeatmap::from_scores(scores))
}

/// Per-subpatch novelty over an arbitrary feature grid, e.g. the whole map.
pub fn novelty_grid(
    db: &EmbeddingDatabase,
    features: &Grid<FeatureVector>,
    k: usize,
) -> Result<Grid<f64>, NoveltyError> {
    let mut scores = Vec::with_capacity(features.dims().cell_count());
    for (_, feature) in features.iter() {
        scores.push(subpatch_novelty(db, feature, k)?);
    }
    Ok(Grid::from_vec(features.dims(), scores))
}

/// Mean central-difference gradient over a score grid, forward/backward
/// differences at the edges; exact on affine fields.
pub fn heatmap_gradient(scores: &[[f64; HEATMAP_SIDE]; HEATMAP_SIDE]) -> (f64, f64) {
    let n = HEATMAP_SIDE;
    let mut sum_dcol = 0.0;
    let mut sum_drow = 0.0;
    for r in 0..n {
        for c in 0..n {
            sum_dcol += if c == 0 {
                scores[r][1] - scores[r][0]
            } else if c == n - 1 {
                scores[r][n - 1] - scores[r][n - 2]
            } else {
                (scores[r][c + 1] - scores[r][c - 1]) / 2.0
            };
            sum_drow += if r == 0 {
                scores[1][c] - scores[0][c]
            } else if r == n - 1 {
                scores[n - 1][c] - scores[n - 2][c]
            } else {
                (scores[r + 1][c] - scores[r - 1][c]) / 2.0
            };
        }
    }
    let count = (n * n) as f64;
    (sum_dcol / count, sum_drow / count)
}

/// Low/high novelty regime boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub alpha: f64,
    pub beta: f64,
}

impl Thresholds {
    pub fn new(alpha: f64, beta: f64) -> Self {
        debug_assert!(alpha <= beta, "thresholds out of order");
        Thresholds { alpha, beta }
    }
}

/// Lower and upper quartiles of a score sample, with linear interpolation
/// between order statistics at position `q * (n - 1)`.
pub fn calibrate_thresholds(scores: &[f64]) -> Result<Thresholds, NoveltyError> {
    if scores.len() < 4 {
        return Err(NoveltyError::NotEnoughScores(scores.len()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Thresholds::new(
        quantile(&sorted, 0.25),
        quantile(&sorted, 0.75),
    ))
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

const DUMP_MAGIC: &[u8; 7] = b"NIPPDB1";

/// Write the binary database dump: `NIPPDB1`, u32 LE count, u32 LE dimension,
/// then per entry the f64 LE embedding followed by its u8 label, in
/// insertion order.
pub fn write_database_dump(db: &EmbeddingDatabase, path: &Path) -> Result<(), NoveltyError> {
    let mut out = Vec::with_capacity(DUMP_MAGIC.len() + 8 + db.len() * (FEATURE_DIM * 8 + 1));
    out.extend_from_slice(DUMP_MAGIC);
    out.extend_from_slice(&(db.len() as u32).to_le_bytes());
    out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
    for i in 0..db.len() {
        let (vector, label) = db.entry(i);
        for v in vector.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(label);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Read a database dump written by [`write_database_dump`]. Subpatch sources
/// are not stored in the format; loaded entries carry a default source.
pub fn read_database_dump(path: &Path) -> Result<EmbeddingDatabase, NoveltyError> {
    let bytes = fs::read(path)?;
    if bytes.len() < DUMP_MAGIC.len() + 8 || &bytes[..DUMP_MAGIC.len()] != DUMP_MAGIC {
        return Err(NoveltyError::DumpFormat("bad magic".into()));
    }
    let mut pos = DUMP_MAGIC.len();
    let count = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    let dim = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if dim != FEATURE_DIM {
        return Err(NoveltyError::DumpFormat(format!(
            "dimension {dim} != {FEATURE_DIM}"
        )));
    }
    let entry_size = FEATURE_DIM * 8 + 1;
    if bytes.len() - pos != count * entry_size {
        return Err(NoveltyError::DumpFormat(format!(
            "expected {} entry bytes, found {}",
            count * entry_size,
            bytes.len() - pos
        )));
    }
    let default_source = SubpatchSource {
        cell: GridCoord::new(0, 0),
        sub_row: 0,
        sub_col: 0,
    };
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let mut values = [0.0f64; FEATURE_DIM];
        for v in &mut values {
            *v = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
            pos += 8;
        }
        let label = bytes[pos];
        pos += 1;
        records.push((FeatureVector::new(values, default_source), label));
    }
    Ok(EmbeddingDatabase::from_records(records, 0))
}
