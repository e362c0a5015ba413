//! Seeded synthetic worlds: Manhattan-metric Voronoi class regions plus
//! per-pixel noise, with an optional rare class confined to a small block of
//! cells.

use std::collections::VecDeque;

use crate::rng::SplitMix64;

use super::{ClassEntry, LabeledMap, MapError};

/// One synthesized class: implicit id = position in `SyntheticMapSpec::classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticClass {
    pub name: String,
    pub mean_rgb: [u8; 3],
}

/// Parameters of a synthetic world.
///
/// When `rare_fraction` is set, the last class is the rare one: it receives a
/// single Voronoi site fenced in by four guard sites so that its cells form a
/// `k x k` block with `k^2 <= max(1, floor(fraction * cell_count))`. Other
/// sites are kept away from the block, so the block survives intact in all
/// but pathologically crowded grids.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMapSpec {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cell_size_px: usize,
    pub classes: Vec<SyntheticClass>,
    /// Uniform per-channel pixel noise in `[-amplitude, +amplitude]`.
    pub noise_amplitude: u8,
    /// Number of random Voronoi sites (the rare site and its guards are extra).
    pub region_seeds: usize,
    pub rare_fraction: Option<f64>,
}

struct Site {
    row_px: usize,
    col_px: usize,
    class_id: u8,
}

/// Deterministically synthesize a labeled world from (spec, seed).
pub fn generate_synthetic_map(spec: &SyntheticMapSpec, seed: u64) -> Result<LabeledMap, MapError> {
    validate(spec)?;
    let width_px = spec.grid_cols * spec.cell_size_px;
    let height_px = spec.grid_rows * spec.cell_size_px;
    let mut rng = SplitMix64::new(seed);

    let sites = place_sites(spec, width_px, height_px, &mut rng)?;
    let owners = voronoi_owners(width_px, height_px, &sites);

    let mut labels = Vec::with_capacity(width_px * height_px);
    for owner in &owners {
        labels.push(sites[*owner as usize].class_id);
    }

    let mut imagery = Vec::with_capacity(width_px * height_px * 3);
    let amp = spec.noise_amplitude as i64;
    for label in &labels {
        let mean = spec.classes[*label as usize].mean_rgb;
        for channel in mean {
            let value = if amp == 0 {
                channel as i64
            } else {
                channel as i64 + rng.next_range_i64(-amp, amp)
            };
            imagery.push(value.clamp(0, 255) as u8);
        }
    }

    let class_table = spec
        .classes
        .iter()
        .enumerate()
        .map(|(id, c)| ClassEntry {
            id: id as u8,
            name: c.name.clone(),
        })
        .collect();
    LabeledMap::new(
        width_px,
        height_px,
        spec.cell_size_px,
        imagery,
        labels,
        class_table,
    )
}

fn validate(spec: &SyntheticMapSpec) -> Result<(), MapError> {
    if spec.classes.is_empty() {
        return Err(MapError::InvalidSpec("at least one class required".into()));
    }
    if spec.classes.len() > 255 {
        return Err(MapError::InvalidSpec(format!(
            "class count {} exceeds 255",
            spec.classes.len()
        )));
    }
    if spec.grid_rows == 0 || spec.grid_cols == 0 || spec.cell_size_px == 0 {
        return Err(MapError::InvalidSpec(
            "grid dimensions must be positive".into(),
        ));
    }
    if let Some(f) = spec.rare_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(MapError::InvalidSpec(format!(
                "rare_fraction {f} outside (0,1)"
            )));
        }
        if spec.classes.len() < 2 {
            return Err(MapError::InvalidSpec(
                "rare_fraction requires at least two classes".into(),
            ));
        }
    } else if spec.region_seeds == 0 {
        return Err(MapError::InvalidSpec(
            "region_seeds must be positive".into(),
        ));
    }
    Ok(())
}

fn place_sites(
    spec: &SyntheticMapSpec,
    width_px: usize,
    height_px: usize,
    rng: &mut SplitMix64,
) -> Result<Vec<Site>, MapError> {
    let mut sites = Vec::new();
    let non_rare = if spec.rare_fraction.is_some() {
        spec.classes.len() - 1
    } else {
        spec.classes.len()
    };
    let mut round_robin = 0usize;
    let mut exclusion: Option<(usize, usize, usize)> = None; // (row_px, col_px, radius_px)

    if let Some(fraction) = spec.rare_fraction {
        let cell = spec.cell_size_px;
        let total_cells = spec.grid_rows * spec.grid_cols;
        let target = ((fraction * total_cells as f64).floor() as usize).max(1);
        // Largest odd k with k^2 <= target whose block plus guards fits.
        let fit_limit = (spec.grid_rows.min(spec.grid_cols).saturating_sub(1)) / 2;
        let mut k = target.isqrt().min(fit_limit);
        if k.is_multiple_of(2) {
            k = k.saturating_sub(1);
        }
        if k == 0 {
            return Err(MapError::InvalidSpec(
                "grid too small for a rare region".into(),
            ));
        }
        let center_row_cell = k + rng.next_below((spec.grid_rows - 2 * k) as u64) as usize;
        let center_col_cell = k + rng.next_below((spec.grid_cols - 2 * k) as u64) as usize;
        let row_px = center_row_cell * cell + cell / 2;
        let col_px = center_col_cell * cell + cell / 2;
        let guard_dist = k * cell;
        let rare_id = (spec.classes.len() - 1) as u8;
        sites.push(Site {
            row_px,
            col_px,
            class_id: rare_id,
        });
        let guard_offsets = [
            (-(guard_dist as isize), 0),
            (guard_dist as isize, 0),
            (0, -(guard_dist as isize)),
            (0, guard_dist as isize),
        ];
        for (dr, dc) in guard_offsets {
            let class_id = (round_robin % non_rare) as u8;
            round_robin += 1;
            sites.push(Site {
                row_px: (row_px as isize + dr) as usize,
                col_px: (col_px as isize + dc) as usize,
                class_id,
            });
        }
        exclusion = Some((row_px, col_px, 2 * guard_dist));
    }

    for _ in 0..spec.region_seeds {
        let class_id = (round_robin % non_rare) as u8;
        round_robin += 1;
        let mut attempts = 0;
        let (row_px, col_px) = loop {
            let r = rng.next_below(height_px as u64) as usize;
            let c = rng.next_below(width_px as u64) as usize;
            let too_close =
                exclusion.is_some_and(|(er, ec, radius)| r.abs_diff(er) + c.abs_diff(ec) <= radius);
            attempts += 1;
            if !too_close || attempts > 1000 {
                break (r, c);
            }
        };
        sites.push(Site {
            row_px,
            col_px,
            class_id,
        });
    }

    if sites.len() > u16::MAX as usize - 1 {
        return Err(MapError::InvalidSpec("too many region seeds".into()));
    }
    Ok(sites)
}

const UNCLAIMED: u16 = u16::MAX;

/// Multi-source BFS flood fill. Because the grid is obstacle-free, BFS layer
/// distance equals Manhattan distance, and seeding the queue in site order
/// makes every tie resolve to the lowest site index.
fn voronoi_owners(width_px: usize, height_px: usize, sites: &[Site]) -> Vec<u16> {
    let mut owner = vec![UNCLAIMED; width_px * height_px];
    let mut queue = VecDeque::new();
    for (index, site) in sites.iter().enumerate() {
        let p = site.row_px * width_px + site.col_px;
        if owner[p] == UNCLAIMED {
            owner[p] = index as u16;
            queue.push_back(p as u32);
        }
    }
    while let Some(p) = queue.pop_front() {
        let p = p as usize;
        let site = owner[p];
        let row = p / width_px;
        let col = p % width_px;
        let mut neighbors = [usize::MAX; 4];
        if row > 0 {
            neighbors[0] = p - width_px;
        }
        if row + 1 < height_px {
            neighbors[1] = p + width_px;
        }
        if col > 0 {
            neighbors[2] = p - 1;
        }
        if col + 1 < width_px {
            neighbors[3] = p + 1;
        }
        for q in neighbors {
            if q != usize::MAX && owner[q] == UNCLAIMED {
                owner[q] = site;
                queue.push_back(q as u32);
            }
        }
    }
    owner
}
