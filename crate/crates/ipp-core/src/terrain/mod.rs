//! Labeled raster worlds: bundle I/O, grid slicing, and ground-truth lookups.
//!
//! A world is an RGB imagery raster plus a per-pixel class-label raster of
//! identical dimensions, discretized into square grid cells. Maps whose
//! dimensions are not exact multiples of the cell size are rejected so that
//! grid bookkeeping stays unambiguous.

mod synthetic;

pub use synthetic::{generate_synthetic_map, SyntheticClass, SyntheticMapSpec};

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::grid::{Grid, GridCoord, GridDims};
use crate::pnm::{self, PnmError};

/// Default grid cell side in pixels.
pub const DEFAULT_CELL_SIZE_PX: usize = 128;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("missing bundle file: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Pnm {
        file: &'static str,
        #[source]
        source: PnmError,
    },
    #[error("imagery is {0}x{1} px but labels are {2}x{3} px")]
    RasterDimensionMismatch(usize, usize, usize, usize),
    #[error("map {width_px}x{height_px} px is not divisible by cell size {cell_size_px}")]
    NotDivisible {
        width_px: usize,
        height_px: usize,
        cell_size_px: usize,
    },
    #[error("label {0} appears in the raster but not in the class table")]
    UnknownLabel(u8),
    #[error("duplicate class id {0} in class table")]
    DuplicateClass(u8),
    #[error("meta.txt line {line}: {message}")]
    Meta { line: usize, message: String },
    #[error("cell {0} out of bounds for {1}x{2} grid")]
    CellOutOfBounds(GridCoord, usize, usize),
    #[error("empty pixel rectangle")]
    EmptyRect,
    #[error("pixel rectangle exceeds raster bounds")]
    RectOutOfBounds,
    #[error("invalid synthetic map spec: {0}")]
    InvalidSpec(String),
}

/// One class table entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
}

/// An axis-aligned pixel rectangle: `rows x cols` starting at (row, col).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

/// RGB imagery raster + per-pixel class labels + class table; the simulated
/// world. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMap {
    width_px: usize,
    height_px: usize,
    cell_size_px: usize,
    /// Row-major RGB triplets, `3 * width * height` bytes.
    imagery: Vec<u8>,
    /// Row-major class ids, `width * height` bytes.
    labels: Vec<u8>,
    class_table: Vec<ClassEntry>,
}

impl LabeledMap {
    /// Validates all invariants: raster sizes, divisibility, known labels.
    pub fn new(
        width_px: usize,
        height_px: usize,
        cell_size_px: usize,
        imagery: Vec<u8>,
        labels: Vec<u8>,
        class_table: Vec<ClassEntry>,
    ) -> Result<Self, MapError> {
        if imagery.len() != width_px * height_px * 3 || labels.len() != width_px * height_px {
            let w = width_px.max(1);
            return Err(MapError::RasterDimensionMismatch(
                width_px,
                imagery.len() / (3 * w),
                width_px,
                labels.len() / w,
            ));
        }
        if cell_size_px == 0
            || width_px == 0
            || height_px == 0
            || !width_px.is_multiple_of(cell_size_px)
            || !height_px.is_multiple_of(cell_size_px)
        {
            return Err(MapError::NotDivisible {
                width_px,
                height_px,
                cell_size_px,
            });
        }
        let mut seen = [false; 256];
        for entry in &class_table {
            if seen[entry.id as usize] {
                return Err(MapError::DuplicateClass(entry.id));
            }
            seen[entry.id as usize] = true;
        }
        if let Some(&bad) = labels.iter().find(|l| !seen[**l as usize]) {
            return Err(MapError::UnknownLabel(bad));
        }
        Ok(LabeledMap {
            width_px,
            height_px,
            cell_size_px,
            imagery,
            labels,
            class_table,
        })
    }

    pub fn width_px(&self) -> usize {
        self.width_px
    }

    pub fn height_px(&self) -> usize {
        self.height_px
    }

    pub fn cell_size_px(&self) -> usize {
        self.cell_size_px
    }

    pub fn imagery(&self) -> &[u8] {
        &self.imagery
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_table(&self) -> &[ClassEntry] {
        &self.class_table
    }

    /// Grid extent in cells.
    pub fn grid_dims(&self) -> GridDims {
        GridDims::new(
            self.height_px / self.cell_size_px,
            self.width_px / self.cell_size_px,
        )
    }

    pub fn label_at(&self, row_px: usize, col_px: usize) -> u8 {
        self.labels[row_px * self.width_px + col_px]
    }

    pub fn rgb_at(&self, row_px: usize, col_px: usize) -> [u8; 3] {
        let i = (row_px * self.width_px + col_px) * 3;
        [self.imagery[i], self.imagery[i + 1], self.imagery[i + 2]]
    }
}

/// One grid cell's image as seen by the simulated sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    side_px: usize,
    /// Pixel origin (row_px, col_px) in the source map.
    origin: (usize, usize),
    /// Row-major RGB, `3 * side^2` bytes.
    pixels: Vec<u8>,
}

impl Patch {
    pub fn new(side_px: usize, origin: (usize, usize), pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), side_px * side_px * 3, "patch pixel count");
        Patch {
            side_px,
            origin,
            pixels,
        }
    }

    pub fn side_px(&self) -> usize {
        self.side_px
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn rgb_at(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.side_px + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Extract the cell-sized square patch at a grid cell.
pub fn cell_patch(map: &LabeledMap, cell: GridCoord) -> Result<Patch, MapError> {
    let dims = map.grid_dims();
    if !dims.contains(cell) {
        return Err(MapError::CellOutOfBounds(cell, dims.rows, dims.cols));
    }
    let side = map.cell_size_px;
    let origin = (cell.row * side, cell.col * side);
    let mut pixels = Vec::with_capacity(side * side * 3);
    for r in 0..side {
        let start = ((origin.0 + r) * map.width_px + origin.1) * 3;
        pixels.extend_from_slice(&map.imagery[start..start + side * 3]);
    }
    Ok(Patch::new(side, origin, pixels))
}

/// Most frequent ground-truth label within a pixel rectangle; ties break to
/// the smallest class id.
pub fn majority_label(map: &LabeledMap, rect: PixelRect) -> Result<u8, MapError> {
    if rect.rows == 0 || rect.cols == 0 {
        return Err(MapError::EmptyRect);
    }
    if rect.row + rect.rows > map.height_px || rect.col + rect.cols > map.width_px {
        return Err(MapError::RectOutOfBounds);
    }
    let mut counts = [0u32; 256];
    for r in rect.row..rect.row + rect.rows {
        let base = r * map.width_px;
        for c in rect.col..rect.col + rect.cols {
            counts[map.labels[base + c] as usize] += 1;
        }
    }
    let mut best = 0usize;
    for id in 1..256 {
        if counts[id] > counts[best] {
            best = id;
        }
    }
    Ok(best as u8)
}

/// Majority label of every `block_px`-sized square, over the whole map.
/// Requires the map dimensions to be multiples of `block_px`.
pub fn majority_label_grid(map: &LabeledMap, block_px: usize) -> Result<Grid<u8>, MapError> {
    if block_px == 0
        || !map.width_px.is_multiple_of(block_px)
        || !map.height_px.is_multiple_of(block_px)
    {
        return Err(MapError::RectOutOfBounds);
    }
    let dims = GridDims::new(map.height_px / block_px, map.width_px / block_px);
    let mut out = Vec::with_capacity(dims.cell_count());
    for block_row in 0..dims.rows {
        for block_col in 0..dims.cols {
            let rect = PixelRect {
                row: block_row * block_px,
                col: block_col * block_px,
                rows: block_px,
                cols: block_px,
            };
            out.push(majority_label(map, rect)?);
        }
    }
    Ok(Grid::from_vec(dims, out))
}

/// Load a map bundle directory: `imagery.ppm` (P6), `labels.pgm` (P5),
/// `meta.txt`.
pub fn load_map_bundle(dir: &Path) -> Result<LabeledMap, MapError> {
    let imagery_bytes = read_bundle_file(dir, "imagery.ppm")?;
    let labels_bytes = read_bundle_file(dir, "labels.pgm")?;
    let meta_bytes = read_bundle_file(dir, "meta.txt")?;

    let imagery = pnm::decode_p6(&imagery_bytes).map_err(|source| MapError::Pnm {
        file: "imagery.ppm",
        source,
    })?;
    let labels = pnm::decode_p5(&labels_bytes).map_err(|source| MapError::Pnm {
        file: "labels.pgm",
        source,
    })?;
    if (imagery.width, imagery.height) != (labels.width, labels.height) {
        return Err(MapError::RasterDimensionMismatch(
            imagery.width,
            imagery.height,
            labels.width,
            labels.height,
        ));
    }

    let meta = parse_meta(&meta_bytes)?;
    LabeledMap::new(
        imagery.width,
        imagery.height,
        meta.cell_size_px,
        imagery.data,
        labels.data,
        meta.class_table,
    )
}

/// Write a map bundle; reloading yields an equal map and byte-identical
/// rasters.
pub fn save_map_bundle(map: &LabeledMap, dir: &Path) -> Result<(), MapError> {
    fs::create_dir_all(dir).map_err(|source| MapError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_bundle_file(
        dir,
        "imagery.ppm",
        &pnm::encode_p6(map.width_px, map.height_px, &map.imagery),
    )?;
    write_bundle_file(
        dir,
        "labels.pgm",
        &pnm::encode_p5(map.width_px, map.height_px, &map.labels),
    )?;
    let mut meta = format!("cell_size={}\n", map.cell_size_px);
    for entry in &map.class_table {
        meta.push_str(&format!("class={}:{}\n", entry.id, entry.name));
    }
    write_bundle_file(dir, "meta.txt", meta.as_bytes())
}

struct Meta {
    cell_size_px: usize,
    class_table: Vec<ClassEntry>,
}

fn parse_meta(bytes: &[u8]) -> Result<Meta, MapError> {
    let text = std::str::from_utf8(bytes).map_err(|_| MapError::Meta {
        line: 0,
        message: "meta.txt is not valid utf-8".into(),
    })?;
    let mut cell_size_px = None;
    let mut class_table = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| MapError::Meta {
            line: line_no,
            message: format!("expected key=value, got {raw:?}"),
        })?;
        match key {
            "cell_size" => {
                let v: usize = value.parse().map_err(|_| MapError::Meta {
                    line: line_no,
                    message: format!("invalid cell_size {value:?}"),
                })?;
                cell_size_px = Some(v);
            }
            "class" => {
                let (id, name) = value.split_once(':').ok_or_else(|| MapError::Meta {
                    line: line_no,
                    message: format!("expected class=<id>:<name>, got {raw:?}"),
                })?;
                let id: u8 = id.parse().map_err(|_| MapError::Meta {
                    line: line_no,
                    message: format!("invalid class id {id:?}"),
                })?;
                class_table.push(ClassEntry {
                    id,
                    name: name.to_string(),
                });
            }
            other => {
                return Err(MapError::Meta {
                    line: line_no,
                    message: format!("unknown key {other:?}"),
                })
            }
        }
    }
    let cell_size_px = cell_size_px.ok_or(MapError::Meta {
        line: 0,
        message: "missing cell_size".into(),
    })?;
    if class_table.is_empty() {
        return Err(MapError::Meta {
            line: 0,
            message: "no class entries".into(),
        });
    }
    Ok(Meta {
        cell_size_px,
        class_table,
    })
}

fn read_bundle_file(dir: &Path, name: &str) -> Result<Vec<u8>, MapError> {
    let path = dir.join(name);
    match fs::read(&path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(MapError::MissingFile(path)),
        Err(source) => Err(MapError::Io { path, source }),
    }
}

fn write_bundle_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), MapError> {
    let path = dir.join(name);
    let mut file = fs::File::create(&path).map_err(|source| MapError::Io {
        path: path.clone(),
        source,
    })?;
    file.write_all(bytes)
        .map_err(|source| MapError::Io { path, source })
}
