//! Road geometry: continuous positions to grid cells, transition-zone
//! membership and next-cell prediction.
//!
//! Rows grow with `y` (the longitudinal road axis), columns grow with `x`.
//! Cells are half-open `[low, high)` on both axes. The "north" edge of a
//! cell is its high-`y` edge, "east" its high-`x` edge.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_zero(self) -> bool {
        self.x == 0.0 && self.y == 0.0
    }
}

/// Velocities share the point representation (m/s per axis).
pub type Vec2 = Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub const fn new(row: usize, col: usize) -> Self {
        GridCoord { row, col }
    }
}

impl fmt::Display for GridCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Edge {
    North,
    South,
    East,
    West,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzStatus {
    NotInTz,
    InTz { next_cell: GridCoord, exit_edge: Edge },
}

impl TzStatus {
    pub fn is_in_tz(&self) -> bool {
        matches!(self, TzStatus::InTz { .. })
    }
}

/// Distance from a position to the inner boundary of each TZ band of its
/// cell. Negative means the position lies inside that band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TzDistances {
    pub north: f64,
    pub south: f64,
    pub east: f64,
    pub west: f64,
}

impl TzDistances {
    pub fn get(&self, edge: Edge) -> f64 {
        match edge {
            Edge::North => self.north,
            Edge::South => self.south,
            Edge::East => self.east,
            Edge::West => self.west,
        }
    }
}

/// How neighbours are resolved across the outer rows of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Topology {
    /// Positions past the footprint map to the nearest edge cell and the
    /// next cell across an outer edge is the current one.
    #[default]
    Bounded,
    /// Rows wrap around: the road is a ring of length `rows * cell_height`.
    /// Columns are still clamped.
    RowTorus,
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid must have at least one row and one column (got {rows}x{cols})")]
    EmptyGrid { rows: usize, cols: usize },
    #[error("cell dimensions must be finite and positive (got {width} x {height})")]
    BadCellSize { width: f64, height: f64 },
    #[error("origin must be finite")]
    BadOrigin,
    #[error("tz_depth {tz_depth} m must be >= 0 and < half the larger cell side ({limit} m)")]
    TzTooDeep { tz_depth: f64, limit: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cell_width: f64,
    cell_height: f64,
    origin: Point,
    tz_depth: f64,
    topology: Topology,
}

impl GridMap {
    pub fn new(
        rows: usize,
        cols: usize,
        cell_width: f64,
        cell_height: f64,
        origin: Point,
        tz_depth: f64,
    ) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::EmptyGrid { rows, cols });
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(cell_width) || !positive(cell_height) {
            return Err(GridError::BadCellSize {
                width: cell_width,
                height: cell_height,
            });
        }
        if !origin.x.is_finite() || !origin.y.is_finite() {
            return Err(GridError::BadOrigin);
        }
        let limit = cell_width.max(cell_height) / 2.0;
        if !tz_depth.is_finite() || tz_depth < 0.0 || tz_depth >= limit {
            return Err(GridError::TzTooDeep { tz_depth, limit });
        }
        Ok(GridMap {
            rows,
            cols,
            cell_width,
            cell_height,
            origin,
            tz_depth,
            topology: Topology::Bounded,
        })
    }

    pub fn with_topology(mut self, topology: Topology) -> Self {
        self.topology = topology;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn cell_height(&self) -> f64 {
        self.cell_height
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn tz_depth(&self) -> f64 {
        self.tz_depth
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// TZ band depth on the `x` edges. Bands never exceed half the cell
    /// side, so opposite bands cannot overlap on a narrow lane cell.
    pub fn tz_depth_x(&self) -> f64 {
        self.tz_depth.min(self.cell_width / 2.0)
    }

    /// TZ band depth on the `y` edges.
    pub fn tz_depth_y(&self) -> f64 {
        self.tz_depth.min(self.cell_height / 2.0)
    }

    /// Footprint width along `x` (across the road).
    pub fn width(&self) -> f64 {
        self.cols as f64 * self.cell_width
    }

    /// Footprint length along `y` (the road length).
    pub fn length(&self) -> f64 {
        self.rows as f64 * self.cell_height
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.origin.x + self.width() / 2.0,
            self.origin.y + self.length() / 2.0,
        )
    }

    fn wrap_y(&self, y: f64) -> f64 {
        let len = self.length();
        let off = (y - self.origin.y).rem_euclid(len);
        // rem_euclid can round up to exactly `len`
        if off >= len {
            0.0
        } else {
            off
        }
    }

    /// Offset of `position` from the origin, after torus wrapping if enabled.
    fn offset(&self, position: Point) -> Point {
        let x = position.x - self.origin.x;
        let y = match self.topology {
            Topology::Bounded => position.y - self.origin.y,
            Topology::RowTorus => self.wrap_y(position.y),
        };
        Point::new(x, y)
    }

    fn axis_index(offset: f64, size: f64, count: usize) -> usize {
        let idx = (offset / size).floor();
        if idx < 0.0 || idx.is_nan() {
            0
        } else if idx >= count as f64 {
            count - 1
        } else {
            idx as usize
        }
    }

    /// Cell containing `position`. Positions outside the footprint are
    /// clamped to the nearest edge cell (lane extension).
    pub fn locate(&self, position: Point) -> GridCoord {
        let off = self.offset(position);
        GridCoord {
            row: Self::axis_index(off.y, self.cell_height, self.rows),
            col: Self::axis_index(off.x, self.cell_width, self.cols),
        }
    }

    /// Position relative to the low corner of its cell, clamped into the
    /// closed cell rectangle.
    pub fn local_offset(&self, position: Point) -> (GridCoord, Point) {
        let cell = self.locate(position);
        let off = self.offset(position);
        let lx = (off.x - cell.col as f64 * self.cell_width).clamp(0.0, self.cell_width);
        let ly = (off.y - cell.row as f64 * self.cell_height).clamp(0.0, self.cell_height);
        (cell, Point::new(lx, ly))
    }

    pub fn distances_to_tz(&self, position: Point) -> TzDistances {
        let (_, local) = self.local_offset(position);
        let (dx, dy) = (self.tz_depth_x(), self.tz_depth_y());
        TzDistances {
            north: (self.cell_height - dy) - local.y,
            south: local.y - dy,
            east: (self.cell_width - dx) - local.x,
            west: local.x - dx,
        }
    }

    /// The edge a vehicle with this velocity is approaching, judged by the
    /// dominant velocity component (ties go to the x axis).
    pub fn approached_edge(velocity: Vec2) -> Option<Edge> {
        if velocity.is_zero() {
            return None;
        }
        if velocity.x.abs() >= velocity.y.abs() {
            Some(if velocity.x > 0.0 { Edge::East } else { Edge::West })
        } else {
            Some(if velocity.y > 0.0 { Edge::North } else { Edge::South })
        }
    }

    /// Cell across `edge` from `cell`. Columns always clamp; rows clamp or
    /// wrap depending on the topology.
    pub fn neighbor(&self, cell: GridCoord, edge: Edge) -> GridCoord {
        let GridCoord { row, col } = cell;
        match edge {
            Edge::East => GridCoord::new(row, (col + 1).min(self.cols - 1)),
            Edge::West => GridCoord::new(row, col.saturating_sub(1)),
            Edge::North => match self.topology {
                Topology::Bounded => GridCoord::new((row + 1).min(self.rows - 1), col),
                Topology::RowTorus => GridCoord::new((row + 1) % self.rows, col),
            },
            Edge::South => match self.topology {
                Topology::Bounded => GridCoord::new(row.saturating_sub(1), col),
                Topology::RowTorus => GridCoord::new((row + self.rows - 1) % self.rows, col),
            },
        }
    }

    pub fn transition_state(&self, position: Point, velocity: Vec2) -> TzStatus {
        let Some(edge) = Self::approached_edge(velocity) else {
            return TzStatus::NotInTz;
        };
        if self.distances_to_tz(position).get(edge) < 0.0 {
            let cell = self.locate(position);
            TzStatus::InTz {
                next_cell: self.neighbor(cell, edge),
                exit_edge: edge,
            }
        } else {
            TzStatus::NotInTz
        }
    }

    /// Time until `locate` or `transition_state` may change for a vehicle
    /// moving at constant `velocity`. `None` for a stationary vehicle.
    pub fn time_to_next_boundary(&self, position: Point, velocity: Vec2) -> Option<f64> {
        let (_, local) = self.local_offset(position);
        let axis = |pos: f64, vel: f64, size: f64, d: f64| -> Option<f64> {
            if vel > 0.0 {
                let inner = size - d;
                let target = if pos < inner { inner } else { size };
                Some((target - pos) / vel)
            } else if vel < 0.0 {
                let target = if pos >= d { d } else { 0.0 };
                Some((pos - target) / -vel)
            } else {
                None
            }
        };
        let tx = axis(local.x, velocity.x, self.cell_width, self.tz_depth_x());
        let ty = axis(local.y, velocity.y, self.cell_height, self.tz_depth_y());
        match (tx, ty) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn cell_rect(&self, cell: GridCoord) -> (Point, Point) {
        let lo = Point::new(
            self.origin.x + cell.col as f64 * self.cell_width,
            self.origin.y + cell.row as f64 * self.cell_height,
        );
        let hi = Point::new(lo.x + self.cell_width, lo.y + self.cell_height);
        (lo, hi)
    }
}
