//! Axis-aligned occupancy grids centred on an agent.
//!
//! The neighbourhood of an agent is a square of side `span` split into
//! `cells × cells` equal cells. Cell `(a, b)` (1-based, `a` along x, `b`
//! along y) covers the half-open box
//! `[-span/2 + (a-1)·w, -span/2 + a·w) × [-span/2 + (b-1)·w, -span/2 + b·w)`
//! with `w = span / cells`. The grid is stored flat in the order
//! `a + cells·(b - 1)`, shifted to 0-based indexing.

use std::fmt;

use crate::error::{Error, Result};
use crate::geom::Position2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub cells: usize,
    pub span: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cells: 4,
            span: 80.0,
        }
    }
}

impl GridConfig {
    pub fn new(cells: usize, span: f64) -> Result<Self> {
        let cfg = GridConfig { cells, span };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::validation("grid must have at least one cell per side"));
        }
        if !(self.span.is_finite() && self.span > 0.0) {
            return Err(Error::validation(format!(
                "grid span must be positive and finite, got {}",
                self.span
            )));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> f64 {
        self.span / self.cells as f64
    }

    /// Number of entries in a grid vector (`cells²`).
    pub fn dim(&self) -> usize {
        self.cells * self.cells
    }

    /// Lower edge of the 1-based cell `k` along one axis; `edge(cells + 1)`
    /// is the upper edge of the grid.
    fn edge(&self, k: usize) -> f64 {
        -0.5 * self.span + (k as f64 - 1.0) * self.cell_size()
    }

    fn axis_cell(&self, d: f64) -> Option<usize> {
        if !d.is_finite() {
            return None;
        }
        let raw = ((d + 0.5 * self.span) / self.cell_size()).floor();
        if raw < -1.0 || raw > self.cells as f64 {
            return None;
        }
        let mut k = raw as i64 + 1;
        // The floor can land one cell off when `d` sits within rounding of an
        // edge; settle it against the edges themselves.
        while k >= 1 && (k as usize) <= self.cells + 1 && d < self.edge(k as usize) {
            k -= 1;
        }
        while k >= 0 && (k as usize) <= self.cells && d >= self.edge(k as usize + 1) {
            k += 1;
        }
        (k >= 1 && k as usize <= self.cells).then_some(k as usize)
    }

    /// 1-based `(a, b)` cell containing the relative offset, or `None` when
    /// the offset lies outside the grid.
    pub fn cell_index(&self, dx: f64, dy: f64) -> Option<(usize, usize)> {
        Some((self.axis_cell(dx)?, self.axis_cell(dy)?))
    }

    /// 0-based storage index of the 1-based cell `(a, b)`.
    pub fn flat_index(&self, a: usize, b: usize) -> usize {
        (a - 1) + self.cells * (b - 1)
    }
}

/// Neighbour counts around an agent. Entries are integral when built from
/// positions and may become fractional once grids are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid(Vec<f64>);

impl OccupancyGrid {
    pub fn zeros(dim: usize) -> Self {
        OccupancyGrid(vec![0.0; dim])
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::validation(format!(
                "occupancy entries must be finite and non-negative, got {v}"
            )));
        }
        Ok(OccupancyGrid(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Per-cell mean of a non-empty set of equally sized grids.
    pub fn mean<'a>(grids: impl IntoIterator<Item = &'a OccupancyGrid>) -> Option<OccupancyGrid> {
        let mut iter = grids.into_iter();
        let first = iter.next()?;
        let mut acc = first.0.clone();
        let mut count = 1usize;
        for g in iter {
            debug_assert_eq!(g.len(), acc.len());
            for (a, v) in acc.iter_mut().zip(&g.0) {
                *a += v;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Some(OccupancyGrid(acc))
    }
}

impl fmt::Display for OccupancyGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Counts the neighbours falling in each cell of the grid centred on
/// `agent`. The caller excludes the agent itself from `neighbors`.
pub fn occupancy_grid<'a>(
    agent: Position2,
    neighbors: impl IntoIterator<Item = &'a Position2>,
    cfg: &GridConfig,
) -> OccupancyGrid {
    let mut grid = OccupancyGrid::zeros(cfg.dim());
    for n in neighbors {
        if let Some((a, b)) = cfg.cell_index(n.x - agent.x, n.y - agent.y) {
            grid.0[cfg.flat_index(a, b)] += 1.0;
        }
    }
    grid
}
