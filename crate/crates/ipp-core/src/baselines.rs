//! Deterministic lawnmower coverage planners: the whole-map serpentine
//! baseline and the small per-start rectangle baseline, which doubles as the
//! first-mission fallback of the novelty-seeking planner.
//!
//! Baselines do not model return-to-home energy; a mission may spend its
//! whole budget moving forward.

use std::collections::BTreeMap;

use crate::grid::{Direction, GridCoord, GridDims};
use crate::planner::{MissionRecord, StepKind};

/// Resumable position in the whole-map serpentine sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LawnmowerCursor {
    pub next_cell: GridCoord,
    /// Sweep direction within the current row.
    pub direction: Direction,
    pub exhausted: bool,
}

impl LawnmowerCursor {
    /// Fresh cursor at the top-left corner, sweeping East.
    pub fn start() -> Self {
        LawnmowerCursor {
            next_cell: GridCoord::new(0, 0),
            direction: Direction::East,
            exhausted: false,
        }
    }

    fn advanced(self, dims: GridDims) -> Self {
        let GridCoord { row, col } = self.next_cell;
        let (next, direction) = match self.direction {
            Direction::East if col + 1 < dims.cols => {
                (GridCoord::new(row, col + 1), Direction::East)
            }
            Direction::West if col > 0 => (GridCoord::new(row, col - 1), Direction::West),
            dir if row + 1 < dims.rows => {
                let flipped = if dir == Direction::East {
                    Direction::West
                } else {
                    Direction::East
                };
                (GridCoord::new(row + 1, col), flipped)
            }
            _ => {
                return LawnmowerCursor {
                    exhausted: true,
                    ..self
                }
            }
        };
        LawnmowerCursor {
            next_cell: next,
            direction,
            exhausted: false,
        }
    }
}

/// One whole-map lawnmower mission: up to `budget + 1` cells serpentine from
/// the cursor, which persists across missions until the map is covered.
/// Observed novelty is left at zero; the caller fills it in when a database
/// exists.
pub fn big_lawnmower_mission(
    cursor: LawnmowerCursor,
    budget: usize,
    dims: GridDims,
) -> (MissionRecord, LawnmowerCursor) {
    let mut trajectory = Vec::new();
    let mut observed = BTreeMap::new();
    let mut cur = cursor;
    for _ in 0..=budget {
        if cur.exhausted {
            break;
        }
        trajectory.push(cur.next_cell);
        observed.insert(cur.next_cell, 0.0);
        cur = cur.advanced(dims);
    }
    let home = trajectory.first().copied().unwrap_or(cursor.next_cell);
    let steps = serpentine_steps(trajectory.len());
    (
        MissionRecord {
            planner_name: "big_lawnmower".into(),
            home,
            budget,
            trajectory,
            steps,
            observed,
        },
        cur,
    )
}

/// One small-rectangle lawnmower mission around a start position.
///
/// The rectangle is `w x h` cells with `w = floor(sqrt(budget + 1))` and
/// `h = ceil((budget + 1) / w)`, anchored at the start cell and shifted (not
/// clipped) back into the map when it would cross the border. The serpentine
/// is truncated to `budget` moves.
pub fn small_lawnmower_mission(start: GridCoord, budget: usize, dims: GridDims) -> MissionRecord {
    let cells = budget + 1;
    let mut width = (cells.isqrt()).max(1);
    width = width.min(dims.cols);
    let mut height = cells.div_ceil(width);
    height = height.min(dims.rows);

    let top = start.row.min(dims.rows - height);
    let left = start.col.min(dims.cols - width);

    let mut trajectory = Vec::with_capacity(cells.min(width * height));
    let mut observed = BTreeMap::new();
    'rows: for r in 0..height {
        for i in 0..width {
            let col = if r % 2 == 0 {
                left + i
            } else {
                left + width - 1 - i
            };
            let cell = GridCoord::new(top + r, col);
            trajectory.push(cell);
            observed.insert(cell, 0.0);
            if trajectory.len() == cells {
                break 'rows;
            }
        }
    }
    let steps = serpentine_steps(trajectory.len());
    MissionRecord {
        planner_name: "small_lawnmower".into(),
        home: trajectory[0],
        budget,
        trajectory,
        steps,
        observed,
    }
}

fn serpentine_steps(len: usize) -> Vec<StepKind> {
    (0..len)
        .map(|i| {
            if i == 0 {
                StepKind::Start
            } else {
                StepKind::Move
            }
        })
        .collect()
}
