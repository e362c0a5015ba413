//! Potential-field mission planner.
//!
//! Each grid cell carries a potential: low potential attracts the planner.
//! The stored base potential of a cell is its familiarity `1 - N/2` (unknown
//! cells start at the configurable prior) plus a border penalty and, once
//! entered, a constant visited penalty. Every step the planner derives a
//! temporary copy of the field from the most recent observation — no change
//! in the low-novelty regime, a gradient bonus for neighbors in the
//! medium regime, 3x3 box smoothing in the high regime, plus a forward
//! penalty when leaving a high-novelty region — and moves to the adjacent
//! cell with the lowest value. Missions start and end at the home cell and
//! never overdraw the move budget.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::grid::{Direction, Grid, GridCoord, GridDims};
use crate::novelty::{
    novelty_heatmap, EmbeddingDatabase, NoveltyError, NoveltyHeatmap, Thresholds,
};
use crate::terrain::{cell_patch, LabeledMap, MapError};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("home cell {0} out of bounds")]
    HomeOutOfBounds(GridCoord),
    #[error("observation for cell {got} but planner is at {expected}")]
    CellMismatch { expected: GridCoord, got: GridCoord },
    #[error("no observation recorded yet")]
    NoObservation,
    #[error("cell {0} is not reachable in one move from {1}")]
    NotAdjacent(GridCoord, GridCoord),
    #[error("no energy left to move")]
    OutOfEnergy,
    #[error(transparent)]
    Novelty(#[from] NoveltyError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Potential-field weights. Defaults: neutral unknown prior, visited penalty
/// dominating any familiarity difference, order-of-magnitude border/gradient
/// weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    /// F0: base potential of never-observed cells.
    pub prior_familiarity: f64,
    /// c_v: constant penalty added to visited cells.
    pub visited_penalty: f64,
    /// c_b: weight of the border penalty.
    pub border_penalty: f64,
    /// r0: border penalty radius in cells.
    pub border_radius: usize,
    /// w_g: weight of the medium-novelty gradient bonus.
    pub gradient_weight: f64,
    /// c_f: forward penalty when leaving a high-novelty region.
    pub forward_penalty: f64,
    /// Gradient magnitudes at or below this are treated as directionless.
    pub gradient_floor: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            prior_familiarity: 0.5,
            visited_penalty: 2.0,
            border_penalty: 1.0,
            border_radius: 2,
            gradient_weight: 0.5,
            forward_penalty: 0.5,
            gradient_floor: 1e-9,
        }
    }
}

/// Per-cell potential and visited bookkeeping, persistent across one mission.
#[derive(Debug, Clone)]
pub struct PotentialField {
    phi: Grid<f64>,
    visited: Grid<bool>,
    params: PlannerParams,
}

impl PotentialField {
    pub fn phi(&self) -> &Grid<f64> {
        &self.phi
    }

    pub fn visited(&self) -> &Grid<bool> {
        &self.visited
    }

    pub fn dims(&self) -> GridDims {
        self.phi.dims()
    }

    /// Penalty raising the potential near the map border:
    /// `c_b * max_axes(max(0, r0 - dist_to_border)) / max(r0, 1)`.
    pub fn border_penalty(&self, cell: GridCoord) -> f64 {
        let dims = self.dims();
        let r0 = self.params.border_radius;
        let row_dist = cell.row.min(dims.rows - 1 - cell.row);
        let col_dist = cell.col.min(dims.cols - 1 - cell.col);
        let axis = |dist: usize| (r0.saturating_sub(dist)) as f64;
        let worst = axis(row_dist).max(axis(col_dist));
        self.params.border_penalty * worst / r0.max(1) as f64
    }
}

/// Mutable planner state for one mission.
#[derive(Debug, Clone)]
pub struct PlannerState {
    x_t: GridCoord,
    x_prev: GridCoord,
    heading: Option<Direction>,
    energy_remaining: usize,
    home: GridCoord,
    budget: usize,
    last_heatmap: Option<NoveltyHeatmap>,
    /// Mean novelty observed at x_prev, for the informative-region edge rule.
    prev_mean: Option<f64>,
    thresholds: Thresholds,
    params: PlannerParams,
}

impl PlannerState {
    pub fn position(&self) -> GridCoord {
        self.x_t
    }

    pub fn previous_position(&self) -> GridCoord {
        self.x_prev
    }

    pub fn heading(&self) -> Option<Direction> {
        self.heading
    }

    pub fn energy_remaining(&self) -> usize {
        self.energy_remaining
    }

    pub fn home(&self) -> GridCoord {
        self.home
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn last_heatmap(&self) -> Option<&NoveltyHeatmap> {
        self.last_heatmap.as_ref()
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    /// Move one step to a 4-adjacent cell, spending one unit of energy.
    pub fn advance_to(&mut self, next: GridCoord) -> Result<(), PlannerError> {
        let dir =
            Direction::between(self.x_t, next).ok_or(PlannerError::NotAdjacent(next, self.x_t))?;
        if self.energy_remaining == 0 {
            return Err(PlannerError::OutOfEnergy);
        }
        self.energy_remaining -= 1;
        self.heading = Some(dir);
        self.x_prev = self.x_t;
        self.x_t = next;
        Ok(())
    }
}

/// One planner decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Move(Direction),
    /// Shortest path out of a fully-visited neighborhood; cells in move order.
    FollowPath(Vec<GridCoord>),
    /// Deterministic row-first path back to home; cells in move order.
    ReturnHome(Vec<GridCoord>),
    EndMission,
}

/// How a trajectory entry was entered; drives the path-trace output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Start,
    Move,
    Follow,
    Return,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Start => "start",
            StepKind::Move => "move",
            StepKind::Follow => "follow",
            StepKind::Return => "return",
        }
    }
}

/// Trajectory and per-cell observations of one mission.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionRecord {
    pub planner_name: String,
    pub home: GridCoord,
    pub budget: usize,
    /// Every cell in visit order, starting at home.
    pub trajectory: Vec<GridCoord>,
    /// How each trajectory entry was entered; same length as `trajectory`.
    pub steps: Vec<StepKind>,
    /// Deduplicated observed cells with the mean novelty of their first
    /// observation.
    pub observed: BTreeMap<GridCoord, f64>,
}

impl MissionRecord {
    pub fn moves_used(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }
}

/// Uniform field at the prior (plus border penalties), planner at home with
/// a full energy budget.
pub fn init_mission(
    dims: GridDims,
    home: GridCoord,
    budget: usize,
    thresholds: Thresholds,
    params: PlannerParams,
) -> Result<(PlannerState, PotentialField), PlannerError> {
    if !dims.contains(home) {
        return Err(PlannerError::HomeOutOfBounds(home));
    }
    let mut field = PotentialField {
        phi: Grid::filled(dims, 0.0),
        visited: Grid::filled(dims, false),
        params,
    };
    for cell in dims.iter() {
        *field.phi.get_mut(cell) = params.prior_familiarity + field.border_penalty(cell);
    }
    let state = PlannerState {
        x_t: home,
        x_prev: home,
        heading: None,
        energy_remaining: budget,
        home,
        budget,
        last_heatmap: None,
        prev_mean: None,
        thresholds,
        params,
    };
    Ok((state, field))
}

/// Fold an observation into the persistent field: the cell's base potential
/// becomes its familiarity `1 - N/2` plus border penalty plus the visited
/// penalty, and the cell is marked visited.
pub fn apply_observation(
    state: &mut PlannerState,
    field: &mut PotentialField,
    cell: GridCoord,
    heatmap: NoveltyHeatmap,
) -> Result<(), PlannerError> {
    if cell != state.x_t {
        return Err(PlannerError::CellMismatch {
            expected: state.x_t,
            got: cell,
        });
    }
    *field.visited.get_mut(cell) = true;
    let familiarity = 1.0 - heatmap.mean_score / 2.0;
    *field.phi.get_mut(cell) =
        familiarity + field.border_penalty(cell) + field.params.visited_penalty;
    state.prev_mean = state.last_heatmap.as_ref().map(|h| h.mean_score);
    state.last_heatmap = Some(heatmap);
    Ok(())
}

/// Temporary copy of the field with the novelty-regime updates applied.
pub fn effective_field(
    state: &PlannerState,
    field: &PotentialField,
) -> Result<Grid<f64>, PlannerError> {
    let heatmap = state
        .last_heatmap
        .as_ref()
        .ok_or(PlannerError::NoObservation)?;
    let mut phi_hat = field.phi.clone();
    let n = heatmap.mean_score;
    let Thresholds { alpha, beta } = state.thresholds;
    let dims = field.dims();

    if n > alpha && n <= beta {
        // Medium novelty: propagate the heatmap gradient to the neighbors it
        // points at.
        let (g_col, g_row) = heatmap.gradient;
        let magnitude = (g_col * g_col + g_row * g_row).sqrt();
        if magnitude > state.params.gradient_floor {
            for dir in Direction::ALL {
                if let Some(neighbor) = state.x_t.step(dir, dims) {
                    let (u_col, u_row) = dir.unit_col_row();
                    let along = (u_col * g_col + u_row * g_row) / magnitude;
                    *phi_hat.get_mut(neighbor) -= state.params.gradient_weight * along.max(0.0);
                }
            }
        }
    } else if n > beta {
        // High novelty: smooth out local fluctuation to favor area coverage.
        phi_hat = box_filter_3x3(&phi_hat);
    }

    // Edge of an informative region: discourage continuing straight ahead,
    // away from the high-novelty cells behind.
    if state.prev_mean.is_some_and(|prev| prev > beta) && n <= beta {
        if let Some(dir) = state.heading {
            if let Some(straight) = state.x_t.step(dir, dims) {
                *phi_hat.get_mut(straight) += state.params.forward_penalty;
            }
        }
    }
    Ok(phi_hat)
}

/// Uniform 3x3 box convolution with replicate padding.
///
/// Computed as `center + mean(neighbor - center)` so that constant fields
/// are exact fixed points, which `sum / 9` would miss by an ulp.
pub fn box_filter_3x3(grid: &Grid<f64>) -> Grid<f64> {
    let dims = grid.dims();
    let mut out = Grid::filled(dims, 0.0);
    for cell in dims.iter() {
        let center = *grid.get(cell);
        let mut diff_sum = 0.0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let r = (cell.row as i64 + dr).clamp(0, dims.rows as i64 - 1) as usize;
                let c = (cell.col as i64 + dc).clamp(0, dims.cols as i64 - 1) as usize;
                diff_sum += *grid.get(GridCoord::new(r, c)) - center;
            }
        }
        *out.get_mut(cell) = center + diff_sum / 9.0;
    }
    out
}

/// Deterministic Manhattan path: rows first, then columns; `from` exclusive,
/// `to` inclusive.
pub fn manhattan_path(from: GridCoord, to: GridCoord) -> Vec<GridCoord> {
    let mut path = Vec::with_capacity(from.manhattan(to));
    let mut cur = from;
    while cur.row != to.row {
        cur.row = if to.row > cur.row {
            cur.row + 1
        } else {
            cur.row - 1
        };
        path.push(cur);
    }
    while cur.col != to.col {
        cur.col = if to.col > cur.col {
            cur.col + 1
        } else {
            cur.col - 1
        };
        path.push(cur);
    }
    path
}

/// Shortest 4-adjacent path from `from` to the nearest unvisited cell; among
/// equal-distance targets the smallest (row, col) wins. Intermediate cells
/// may be visited; only the final cell is unvisited. `None` when every cell
/// is visited.
pub fn shortest_escape_path(visited: &Grid<bool>, from: GridCoord) -> Option<Vec<GridCoord>> {
    let dims = visited.dims();
    let mut dist: Grid<u32> = Grid::filled(dims, u32::MAX);
    let mut parent: Grid<GridCoord> = Grid::filled(dims, from);
    let mut queue = VecDeque::new();
    *dist.get_mut(from) = 0;
    queue.push_back(from);
    let mut best: Option<(u32, GridCoord)> = None;
    while let Some(cell) = queue.pop_front() {
        let d = *dist.get(cell);
        if best.is_some_and(|(bd, _)| d >= bd) {
            // Every remaining queue entry is at least this deep.
            break;
        }
        for dir in Direction::ALL {
            let Some(next) = cell.step(dir, dims) else {
                continue;
            };
            if *dist.get(next) != u32::MAX {
                continue;
            }
            *dist.get_mut(next) = d + 1;
            *parent.get_mut(next) = cell;
            if *visited.get(next) {
                queue.push_back(next);
            } else {
                // Candidate target; unvisited cells are not expanded through.
                match best {
                    Some((bd, bc)) if (bd, (bc.row, bc.col)) <= (d + 1, (next.row, next.col)) => {}
                    _ => best = Some((d + 1, next)),
                }
            }
        }
    }
    let (_, target) = best?;
    let mut path = Vec::new();
    let mut cur = target;
    while cur != from {
        path.push(cur);
        cur = *parent.get(cur);
    }
    path.reverse();
    Some(path)
}

/// Pick the next action from the effective field.
///
/// In order: return home when the remaining energy only just covers the
/// distance; escape along the shortest path to an unvisited cell when all
/// neighbors are visited (truncated so the return trip stays affordable);
/// otherwise move to the in-bounds neighbor with the lowest effective
/// potential, ties resolved N, E, S, W. A move whose target would strand the
/// planner (possible when budget parity works against it) becomes an early
/// return home instead.
pub fn choose_next(state: &PlannerState, field: &PotentialField, phi_hat: &Grid<f64>) -> Action {
    let dims = field.dims();
    let here = state.x_t;
    let energy = state.energy_remaining;
    let dist_home = here.manhattan(state.home);

    if energy <= dist_home {
        return if here == state.home {
            Action::EndMission
        } else {
            Action::ReturnHome(manhattan_path(here, state.home))
        };
    }

    let neighbors: Vec<(Direction, GridCoord)> = Direction::ALL
        .into_iter()
        .filter_map(|d| here.step(d, dims).map(|c| (d, c)))
        .collect();

    if neighbors.iter().all(|(_, c)| *field.visited.get(*c)) {
        match shortest_escape_path(&field.visited, here) {
            Some(path) => {
                let mut keep = 0;
                for (i, cell) in path.iter().enumerate() {
                    let steps = i + 1;
                    if steps <= energy && energy - steps >= cell.manhattan(state.home) {
                        keep = steps;
                    } else {
                        break;
                    }
                }
                if keep == 0 {
                    return Action::ReturnHome(manhattan_path(here, state.home));
                }
                return Action::FollowPath(path[..keep].to_vec());
            }
            None => {
                return if here == state.home {
                    Action::EndMission
                } else {
                    Action::ReturnHome(manhattan_path(here, state.home))
                };
            }
        }
    }

    let (dir, target) = neighbors
        .iter()
        .copied()
        .reduce(|best, cand| {
            if phi_hat.get(cand.1) < phi_hat.get(best.1) {
                cand
            } else {
                best
            }
        })
        .expect("at least one in-bounds neighbor");
    if target.manhattan(state.home) > energy - 1 {
        return Action::ReturnHome(manhattan_path(here, state.home));
    }
    Action::Move(dir)
}

/// Run one full novelty-seeking mission: observe, update the field, choose,
/// repeat until the energy budget forces the return home. Cells crossed
/// while escaping or returning are observed too, but do not trigger
/// re-planning mid-path.
pub fn run_ipp_mission(
    map: &LabeledMap,
    db: &EmbeddingDatabase,
    home: GridCoord,
    budget: usize,
    thresholds: Thresholds,
    params: PlannerParams,
    k: usize,
) -> Result<MissionRecord, PlannerError> {
    let (mut state, mut field) = init_mission(map.grid_dims(), home, budget, thresholds, params)?;
    let mut trajectory = vec![home];
    let mut steps = vec![StepKind::Start];
    let mut observed = BTreeMap::new();

    let observe = |state: &mut PlannerState,
                   field: &mut PotentialField,
                   observed: &mut BTreeMap<GridCoord, f64>,
                   cell: GridCoord|
     -> Result<(), PlannerError> {
        let heatmap = novelty_heatmap(db, &cell_patch(map, cell)?, k)?;
        observed.entry(cell).or_insert(heatmap.mean_score);
        apply_observation(state, field, cell, heatmap)
    };

    observe(&mut state, &mut field, &mut observed, home)?;

    loop {
        let phi_hat = effective_field(&state, &field)?;
        match choose_next(&state, &field, &phi_hat) {
            Action::EndMission => break,
            Action::Move(dir) => {
                let next = state
                    .position()
                    .step(dir, field.dims())
                    .expect("chosen move stays in bounds");
                state.advance_to(next)?;
                observe(&mut state, &mut field, &mut observed, next)?;
                trajectory.push(next);
                steps.push(StepKind::Move);
            }
            Action::FollowPath(cells) => {
                for cell in cells {
                    state.advance_to(cell)?;
                    observe(&mut state, &mut field, &mut observed, cell)?;
                    trajectory.push(cell);
                    steps.push(StepKind::Follow);
                }
            }
            Action::ReturnHome(cells) => {
                for cell in cells {
                    state.advance_to(cell)?;
                    observe(&mut state, &mut field, &mut observed, cell)?;
                    trajectory.push(cell);
                    steps.push(StepKind::Return);
                }
                break;
            }
        }
    }

    Ok(MissionRecord {
        planner_name: "ipp".into(),
        home,
        budget,
        trajectory,
        steps,
        observed,
    })
}
