//! Grid coordinates and a row-major 2D container shared by all modules.
//!
//! Image conventions apply throughout: row 0 is the top of the map and +row
//! points South, +col points East.

use std::fmt;

/// Position of a cell in grid units (not pixels).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Self {
        GridCoord { row, col }
    }

    /// L1 distance in moves between two cells.
    pub fn manhattan(self, other: GridCoord) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Cell one step in `dir`, or `None` at the grid edge.
    pub fn step(self, dir: Direction, dims: GridDims) -> Option<GridCoord> {
        let (dr, dc) = dir.delta();
        let row = self.row.checked_add_signed(dr as isize)?;
        let col = self.col.checked_add_signed(dc as isize)?;
        if row < dims.rows && col < dims.cols {
            Some(GridCoord { row, col })
        } else {
            None
        }
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Grid extent in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl GridDims {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridDims { rows, cols }
    }

    pub fn contains(self, cell: GridCoord) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn cell_count(self) -> usize {
        self.rows * self.cols
    }

    /// All cells in row-major order.
    pub fn iter(self) -> impl Iterator<Item = GridCoord> {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| GridCoord::new(r, c)))
    }
}

/// The four cell-to-cell moves, in the planner's fixed tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::East,
        Direction::South,
        Direction::West,
    ];

    /// (d_row, d_col) of one step; +row is South.
    pub fn delta(self) -> (i8, i8) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }

    /// Unit vector in (d_col, d_row) order, matching heatmap gradients.
    pub fn unit_col_row(self) -> (f64, f64) {
        let (dr, dc) = self.delta();
        (dc as f64, dr as f64)
    }

    /// Direction of the single step from `a` to `b`, if they are 4-adjacent.
    pub fn between(a: GridCoord, b: GridCoord) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| {
            let (dr, dc) = d.delta();
            b.row as isize == a.row as isize + dr as isize
                && b.col as isize == a.col as isize + dc as isize
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::North => "N",
            Direction::East => "E",
            Direction::South => "S",
            Direction::West => "W",
        }
    }
}

/// Dense row-major 2D array.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: GridDims,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(dims: GridDims, value: T) -> Self {
        Grid {
            dims,
            data: vec![value; dims.cell_count()],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(dims: GridDims, data: Vec<T>) -> Self {
        assert_eq!(data.len(), dims.cell_count(), "grid data length mismatch");
        Grid { dims, data }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn get(&self, cell: GridCoord) -> &T {
        &self.data[cell.row * self.dims.cols + cell.col]
    }

    pub fn get_mut(&mut self, cell: GridCoord) -> &mut T {
        &mut self.data[cell.row * self.dims.cols + cell.col]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = (GridCoord, &T)> {
        self.dims.iter().zip(self.data.iter())
    }
}
