//! Rectangular windows, regular lattices over them and per-cell surfaces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Location;

/// Axis-aligned observation window `[s1_min, s1_max] × [s2_min, s2_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub s1_min: f64,
    pub s1_max: f64,
    pub s2_min: f64,
    pub s2_max: f64,
}

impl Window {
    pub fn new(s1_min: f64, s1_max: f64, s2_min: f64, s2_max: f64) -> Result<Self> {
        let w = Self {
            s1_min,
            s1_max,
            s2_min,
            s2_max,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn unit() -> Self {
        Self {
            s1_min: 0.0,
            s1_max: 1.0,
            s2_min: 0.0,
            s2_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.s1_min, self.s1_max, self.s2_min, self.s2_max]
            .iter()
            .all(|v| v.is_finite())
            && self.s1_max > self.s1_min
            && self.s2_max > self.s2_min;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("degenerate window {self:?}")))
        }
    }

    pub fn width(&self) -> f64 {
        self.s1_max - self.s1_min
    }

    pub fn height(&self) -> f64 {
        self.s2_max - self.s2_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed-rectangle membership.
    pub fn contains(&self, s: &Location) -> bool {
        (self.s1_min..=self.s1_max).contains(&s.s1()) && (self.s2_min..=self.s2_max).contains(&s.s2())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s1_min, self.s1_max, self.s2_min, self.s2_max]
    }
}

/// `nx × ny` equal cells tiling a window. Cell `(i, j)` has index `j·nx + i`,
/// with `i` running along `s1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub window: Window,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(window: Window, nx: usize, ny: usize) -> Result<Self> {
        window.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::Domain(format!("grid needs at least one cell, got {nx}×{ny}")));
        }
        Ok(Self { window, nx, ny })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> [f64; 2] {
        [self.window.s1_min, self.window.s2_min]
    }

    pub fn cell_size(&self) -> [f64; 2] {
        [
            self.window.width() / self.nx as f64,
            self.window.height() / self.ny as f64,
        ]
    }

    pub fn cell_area(&self) -> f64 {
        let [a, b] = self.cell_size();
        a * b
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn centroid(&self, cell: usize) -> Location {
        let (i, j) = self.coords(cell);
        let [dx, dy] = self.cell_size();
        Location::new(
            self.window.s1_min + (i as f64 + 0.5) * dx,
            self.window.s2_min + (j as f64 + 0.5) * dy,
        )
        .expect("centroid of a finite window is finite")
    }

    pub fn centroids(&self) -> Vec<Location> {
        (0..self.len()).map(|c| self.centroid(c)).collect()
    }

    /// Cell containing `s`; points on the upper edges go to the last cell.
    pub fn cell_of(&self, s: &Location) -> Option<usize> {
        if !self.window.contains(s) {
            return None;
        }
        let [dx, dy] = self.cell_size();
        let i = (((s.s1() - self.window.s1_min) / dx).floor() as usize).min(self.nx - 1);
        let j = (((s.s2() - self.window.s2_min) / dy).floor() as usize).min(self.ny - 1);
        Some(self.index(i, j))
    }
}

/// One value per grid cell (`None` marks a missing cell), with a label
/// naming the statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub grid: GridSpec,
    pub values: Vec<Option<f64>>,
    pub label: String,
    /// Per-cell count of inputs excluded as missing when the surface was built.
    pub excluded: Vec<usize>,
}

impl SurfaceGrid {
    pub fn new(grid: GridSpec, values: Vec<Option<f64>>, label: impl Into<String>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "surface has {} values for {} cells",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Domain("surface value is NaN; flag it missing instead".into()));
        }
        let excluded = vec![0; values.len()];
        Ok(Self {
            grid,
            values,
            label: label.into(),
            excluded,
        })
    }

    pub fn from_fn(grid: GridSpec, label: impl Into<String>, f: impl Fn(&Location) -> f64) -> Result<Self> {
        let values = grid.centroids().iter().map(|c| Some(f(c))).collect();
        Self::new(grid, values, label)
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[self.grid.index(i, j)]
    }

    /// Finite values only.
    pub fn finite_values(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().filter(|v| v.is_finite()).collect()
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        let v = self.finite_values();
        if v.is_empty() {
            return None;
        }
        Some(v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_tile_window() {
        let g = GridSpec::new(Window::new(0.0, 2.0, -1.0, 1.0).unwrap(), 4, 2).unwrap();
        assert_eq!(g.len(), 8);
        let total: f64 = (0..g.len()).map(|_| g.cell_area()).sum();
        assert!((total - g.window.area()).abs() < 1e-15);
        for c in 0..g.len() {
            assert_eq!(g.cell_of(&g.centroid(c)), Some(c));
        }
        let corner = Location::new(2.0, 1.0).unwrap();
        assert_eq!(g.cell_of(&corner), Some(7));
        assert_eq!(g.cell_of(&Location::new(2.1, 0.0).unwrap()), None);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Window::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(GridSpec::new(Window::unit(), 0, 3).is_err());
        let g = GridSpec::new(Window::unit(), 2, 2).unwrap();
        assert!(SurfaceGrid::new(g, vec![Some(1.0); 3], "x").is_err());
        assert!(SurfaceGrid::new(g, vec![Some(f64::NAN); 4], "x").is_err());
    }
}
