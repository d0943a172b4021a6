use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar point in meters.
pub type Point = [f64; 2];

/// Cell centers of the localization grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    cells: BTreeMap<u32, Point>,
    pitch: f64,
}

impl GridGeometry {
    pub fn new(cells: BTreeMap<u32, Point>, pitch: f64) -> Result<Self> {
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!("pitch {pitch} must be > 0")));
        }
        if cells.is_empty() {
            return Err(Error::InvalidParameter("grid has no cells".into()));
        }
        if cells.contains_key(&0) {
            return Err(Error::InvalidParameter("cell ids are 1-based".into()));
        }
        if cells.values().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("cell centers must be finite".into()));
        }
        Ok(Self { cells, pitch })
    }

    /// `n_cells` cells filled row by row into a grid `columns` wide. Cell 1
    /// is centered at `(pitch/2, pitch/2)`.
    pub fn rectangular(n_cells: usize, columns: usize, pitch: f64) -> Result<Self> {
        if columns == 0 {
            return Err(Error::InvalidParameter("grid needs at least one column".into()));
        }
        let cells = (0..n_cells)
            .map(|k| {
                let (row, col) = (k / columns, k % columns);
                (
                    k as u32 + 1,
                    [(col as f64 + 0.5) * pitch, (row as f64 + 0.5) * pitch],
                )
            })
            .collect();
        Self::new(cells, pitch)
    }

    /// The reference layout: rows of five cells at 0.5 m pitch.
    pub fn reference(n_cells: usize) -> Result<Self> {
        Self::rectangular(n_cells, 5, 0.5)
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Ascending cell ids.
    pub fn cell_ids(&self) -> Vec<u32> {
        self.cells.keys().copied().collect()
    }

    pub fn contains(&self, cell: u32) -> bool {
        self.cells.contains_key(&cell)
    }

    pub fn center(&self, cell: u32) -> Result<Point> {
        self.cells.get(&cell).copied().ok_or(Error::UnknownCell(cell))
    }

    /// Distance between two cell centers.
    pub fn distance(&self, a: u32, b: u32) -> Result<f64> {
        let (p, q) = (self.center(a)?, self.center(b)?);
        Ok((p[0] - q[0]).hypot(p[1] - q[1]))
    }

    /// Bounding box `(min, max)` of the cell centers.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in self.cells.values() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}
