//! Grayscale and overlay renderings of heatmaps, predictions, and paths.

use crate::grid::{Grid, GridCoord};
use crate::pnm;
use crate::terrain::LabeledMap;

/// Render a real-valued grid as a P5 PGM: `v` maps to
/// `clamp(round(255 * (v - lo) / (hi - lo)), 0, 255)` with round half away
/// from zero. Novelty grids use `lo = 0, hi = 2`.
pub fn render_heatmap(values: &Grid<f64>, lo: f64, hi: f64) -> Vec<u8> {
    assert!(lo < hi, "render_heatmap requires lo < hi");
    let dims = values.dims();
    let gray: Vec<u8> = values
        .as_slice()
        .iter()
        .map(|v| (255.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 255.0) as u8)
        .collect();
    pnm::encode_p5(dims.cols, dims.rows, &gray)
}

/// Render a label grid as a P5 PGM with the class id as gray value.
pub fn render_label_grid(labels: &Grid<u8>) -> Vec<u8> {
    let dims = labels.dims();
    pnm::encode_p5(dims.cols, dims.rows, labels.as_slice())
}

/// Imagery copy with trajectory cells blended halfway toward blue and the
/// home cell halfway toward red; `blend = floor((a + b) / 2)` per channel.
pub fn render_path_overlay(map: &LabeledMap, trajectory: &[GridCoord], home: GridCoord) -> Vec<u8> {
    let mut rgb = map.imagery().to_vec();
    let cell = map.cell_size_px();
    let mut tint = |cell_coord: GridCoord, color: [u8; 3]| {
        for r in cell_coord.row * cell..(cell_coord.row + 1) * cell {
            for c in cell_coord.col * cell..(cell_coord.col + 1) * cell {
                let i = (r * map.width_px() + c) * 3;
                for ch in 0..3 {
                    rgb[i + ch] = ((rgb[i + ch] as u16 + color[ch] as u16) / 2) as u8;
                }
            }
        }
    };
    let mut path_cells: Vec<GridCoord> =
        trajectory.iter().copied().filter(|c| *c != home).collect();
    path_cells.sort();
    path_cells.dedup();
    for cell_coord in path_cells {
        tint(cell_coord, [0, 0, 255]);
    }
    tint(home, [255, 0, 0]);
    pnm::encode_p6(map.width_px(), map.height_px(), &rgb)
}
