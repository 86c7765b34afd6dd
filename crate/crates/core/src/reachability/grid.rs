use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis order used everywhere: x, y, θ.
pub const AXIS_X: usize = 0;
pub const AXIS_Y: usize = 1;
pub const AXIS_THETA: usize = 2;

/// Regular 3-D grid over `(x, y, θ)`.
///
/// x and y include both endpoints. θ is periodic over `[-π, π)` with spacing
/// `2π / dims[2]` and no duplicated endpoint. Values are stored with θ
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub mins: [f64; 3],
    pub maxs: [f64; 3],
    pub dims: [usize; 3],
    pub periodic: [bool; 3],
}

impl Grid3 {
    /// Grid over `[-half_width, half_width]²` in position and the full circle in heading.
    pub fn square(half_width: f64, nxy: usize, ntheta: usize) -> Result<Self> {
        Self::new([-half_width, -half_width], [half_width, half_width], [nxy, nxy, ntheta])
    }

    pub fn new(xy_mins: [f64; 2], xy_maxs: [f64; 2], dims: [usize; 3]) -> Result<Self> {
        let grid = Self {
            mins: [xy_mins[0], xy_mins[1], -PI],
            maxs: [xy_maxs[0], xy_maxs[1], PI],
            dims,
            periodic: [false, false, true],
        };
        grid.validate()?;
        Ok(grid)
    }

    /// 121 × 121 × 60 nodes over x, y ∈ [-15, 15].
    pub fn default_dubins() -> Self {
        Self::square(15.0, 121, 60).expect("default grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            if self.dims[axis] < 3 {
                return Err(Error::InvalidArgument(format!(
                    "grid axis {axis} needs at least 3 nodes, got {}",
                    self.dims[axis]
                )));
            }
            if !(self.maxs[axis] > self.mins[axis]) || !self.mins[axis].is_finite() || !self.maxs[axis].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "grid axis {axis} bounds [{}, {}] are empty",
                    self.mins[axis], self.maxs[axis]
                )));
            }
        }
        if self.periodic != [false, false, true] {
            return Err(Error::InvalidArgument("only the heading axis may be periodic".into()));
        }
        if (self.mins[AXIS_THETA] + PI).abs() > 1e-9 || (self.maxs[AXIS_THETA] - PI).abs() > 1e-9 {
            return Err(Error::InvalidArgument("heading axis must span [-π, π)".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let span = self.maxs[axis] - self.mins[axis];
        if self.periodic[axis] {
            span / self.dims[axis] as f64
        } else {
            span / (self.dims[axis] - 1) as f64
        }
    }

    pub fn spacings(&self) -> [f64; 3] {
        [self.spacing(0), self.spacing(1), self.spacing(2)]
    }

    /// Largest of the three spacings.
    pub fn max_spacing(&self) -> f64 {
        self.spacings().into_iter().fold(0.0, f64::max)
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.mins[axis] + i as f64 * self.spacing(axis)
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (ix * self.dims[1] + iy) * self.dims[2] + it
    }

    /// Inverse of [`Grid3::index`].
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let it = idx % self.dims[2];
        let rest = idx / self.dims[2];
        (rest / self.dims[1], rest % self.dims[1], it)
    }

    /// Whether `(x, y)` lies inside the position bounds.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.mins[0] && x <= self.maxs[0] && y >= self.mins[1] && y <= self.maxs[1]
    }

    /// Distance across the position bounds.
    pub fn diameter(&self) -> f64 {
        let dx = self.maxs[0] - self.mins[0];
        let dy = self.maxs[1] - self.mins[1];
        (dx * dx + dy * dy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_spacing() {
        let g = Grid3::default_dubins();
        assert_eq!(g.len(), 121 * 121 * 60);
        assert!((g.spacing(0) - 0.25).abs() < 1e-12);
        assert!((g.spacing(2) - 2.0 * PI / 60.0).abs() < 1e-12);
        // No duplicated endpoint on the periodic axis.
        assert!(g.coord(2, 59) < PI);
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid3::square(5.0, 7, 5).unwrap();
        for idx in 0..g.len() {
            let (ix, iy, it) = g.unravel(idx);
            assert_eq!(g.index(ix, iy, it), idx);
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid3::square(5.0, 2, 10).is_err());
        assert!(Grid3::square(5.0, 10, 2).is_err());
        assert!(Grid3::new([1.0, 0.0], [1.0, 3.0], [5, 5, 5]).is_err());
    }
}
