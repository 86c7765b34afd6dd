use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{Grid3, AXIS_THETA, AXIS_X, AXIS_Y};
use crate::dynamics::{wrap_angle, Costate, State};
use crate::error::{Error, Result};

pub const VALUE_SCHEMA: &str = "vf-1";

/// Circular keep-out region in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepOutDisk {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl KeepOutDisk {
    pub fn new(cx: f64, cy: f64, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(format!("obstacle radius must be positive, got {r}")));
        }
        Ok(Self { cx, cy, r })
    }

    pub fn at_origin(r: f64) -> Result<Self> {
        Self::new(0.0, 0.0, r)
    }

    /// Signed distance from `(x, y)` to the disk boundary, negative inside.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt() - self.r
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.signed_distance(x, y) < 0.0
    }
}

/// Result of evaluating a value function off-grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub value: T,
    /// The query's position was outside the grid and was clamped to the boundary.
    pub out_of_domain: bool,
}

/// A value function sampled on a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub grid: Grid3,
    /// Flat node values, θ fastest.
    pub values: Vec<f64>,
    /// Turn-rate bound of the dynamics that generated the values.
    pub omega_max: f64,
    pub obstacle_radius: f64,
    pub converged: bool,
    pub residual: f64,
    /// Pseudo-time steps taken by the solver. Not persisted.
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct ValueFunctionFile {
    schema: String,
    grid: Grid3,
    omega_max: f64,
    obstacle_radius: f64,
    converged: bool,
    residual: f64,
    values: Vec<f64>,
}

struct AxisWeights {
    lo: usize,
    hi: usize,
    frac: f64,
}

impl ValueFunction {
    pub fn new(grid: Grid3, values: Vec<f64>, omega_max: f64, obstacle_radius: f64) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("value at node {i} is not finite")));
        }
        Ok(Self {
            grid,
            values,
            omega_max,
            obstacle_radius,
            converged: true,
            residual: 0.0,
            iterations: 0,
        })
    }

    /// Builds a field by evaluating `f(x, y, θ)` at every node.
    pub fn from_fn(
        grid: Grid3,
        omega_max: f64,
        obstacle_radius: f64,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        for ix in 0..grid.dims[0] {
            let x = grid.coord(AXIS_X, ix);
            for iy in 0..grid.dims[1] {
                let y = grid.coord(AXIS_Y, iy);
                for it in 0..grid.dims[2] {
                    values.push(f(x, y, grid.coord(AXIS_THETA, it)));
                }
            }
        }
        Self::new(grid, values, omega_max, obstacle_radius)
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize, it: usize) -> f64 {
        self.values[self.grid.index(ix, iy, it)]
    }

    /// Keep-out payoff `l` at every node: signed distance to the canonical disk.
    pub fn payoff_values(&self) -> Vec<f64> {
        let disk = KeepOutDisk { cx: 0.0, cy: 0.0, r: self.obstacle_radius };
        let g = &self.grid;
        let mut out = Vec::with_capacity(g.len());
        for ix in 0..g.dims[0] {
            let x = g.coord(AXIS_X, ix);
            for iy in 0..g.dims[1] {
                let d = disk.signed_distance(x, g.coord(AXIS_Y, iy));
                out.extend(std::iter::repeat(d).take(g.dims[2]));
            }
        }
        out
    }

    fn weights(&self, axis: usize, coord: f64) -> (AxisWeights, bool) {
        let g = &self.grid;
        let n = g.dims[axis];
        let h = g.spacing(axis);
        if g.periodic[axis] {
            let u = (wrap_angle(coord) - g.mins[axis]) / h;
            let lo = (u.floor() as isize).rem_euclid(n as isize) as usize;
            let frac = (u - u.floor()).clamp(0.0, 1.0);
            (AxisWeights { lo, hi: (lo + 1) % n, frac }, false)
        } else {
            let out = coord < g.mins[axis] || coord > g.maxs[axis] || !coord.is_finite();
            let u = ((coord - g.mins[axis]) / h).clamp(0.0, (n - 1) as f64);
            let lo = (u.floor() as usize).min(n - 2);
            (AxisWeights { lo, hi: lo + 1, frac: u - lo as f64 }, out)
        }
    }

    /// Trilinear interpolation with periodic heading and clamped position.
    pub fn sample(&self, s: &State) -> Sample<f64> {
        let (wx, ox) = self.weights(AXIS_X, s.x);
        let (wy, oy) = self.weights(AXIS_Y, s.y);
        let (wt, _) = self.weights(AXIS_THETA, s.theta);
        let mut acc = 0.0;
        for (ix, fx) in [(wx.lo, 1.0 - wx.frac), (wx.hi, wx.frac)] {
            if fx == 0.0 {
                continue;
            }
            for (iy, fy) in [(wy.lo, 1.0 - wy.frac), (wy.hi, wy.frac)] {
                if fy == 0.0 {
                    continue;
                }
                for (it, ft) in [(wt.lo, 1.0 - wt.frac), (wt.hi, wt.frac)] {
                    if ft == 0.0 {
                        continue;
                    }
                    acc += fx * fy * ft * self.at(ix, iy, it);
                }
            }
        }
        Sample { value: acc, out_of_domain: ox || oy }
    }

    pub fn interpolate_value(&self, s: &State) -> f64 {
        self.sample(s).value
    }

    /// Central differences of the interpolant with half-cell steps.
    ///
    /// Near the position boundary the stencil is shortened to stay inside.
    pub fn sample_gradient(&self, s: &State) -> Sample<Costate> {
        let g = &self.grid;
        let out_of_domain = !g.contains_xy(s.x, s.y);
        let x = s.x.clamp(g.mins[0], g.maxs[0]);
        let y = s.y.clamp(g.mins[1], g.maxs[1]);
        let at = |x: f64, y: f64, t: f64| self.interpolate_value(&State { x, y, theta: t });

        let hx = g.spacing(AXIS_X) / 2.0;
        let (xl, xh) = ((x - hx).max(g.mins[0]), (x + hx).min(g.maxs[0]));
        let p1 = (at(xh, y, s.theta) - at(xl, y, s.theta)) / (xh - xl);

        let hy = g.spacing(AXIS_Y) / 2.0;
        let (yl, yh) = ((y - hy).max(g.mins[1]), (y + hy).min(g.maxs[1]));
        let p2 = (at(x, yh, s.theta) - at(x, yl, s.theta)) / (yh - yl);

        let ht = g.spacing(AXIS_THETA) / 2.0;
        let p3 = (at(x, y, s.theta + ht) - at(x, y, s.theta - ht)) / (2.0 * ht);

        Sample { value: Costate::new(p1, p2, p3), out_of_domain }
    }

    pub fn interpolate_gradient(&self, s: &State) -> Costate {
        self.sample_gradient(s).value
    }

    /// Strictly above `level` counts as safe; the boundary itself does not.
    pub fn is_safe(&self, s: &State, level: f64) -> bool {
        self.interpolate_value(s) > level
    }

    /// Value of the canonical (origin-centred) function for a state near `disk`.
    pub fn value_in_frame(&self, s: &State, disk: &KeepOutDisk) -> Sample<f64> {
        self.sample(&s.relative_to(disk.cx, disk.cy))
    }

    /// Largest positional gradient norm `‖(∂V/∂x, ∂V/∂y)‖` and largest one-cell
    /// value change `Σ h_i |∂V/∂x_i|` over the nodes.
    fn gradient_bounds(&self) -> (f64, f64) {
        let g = &self.grid;
        let h = g.spacings();
        let [nx, ny, nt] = g.dims;
        let diff = |lo: f64, hi: f64, span: f64| (hi - lo) / span;
        let mut max_norm: f64 = 0.0;
        let mut max_cell: f64 = 0.0;
        for ix in 0..nx {
            let (xl, xh) = (ix.saturating_sub(1), (ix + 1).min(nx - 1));
            for iy in 0..ny {
                let (yl, yh) = (iy.saturating_sub(1), (iy + 1).min(ny - 1));
                for it in 0..nt {
                    let (tl, th) = ((it + nt - 1) % nt, (it + 1) % nt);
                    let p1 = diff(self.at(xl, iy, it), self.at(xh, iy, it), (xh - xl) as f64 * h[0]);
                    let p2 = diff(self.at(ix, yl, it), self.at(ix, yh, it), (yh - yl) as f64 * h[1]);
                    let p3 = diff(self.at(ix, iy, tl), self.at(ix, iy, th), 2.0 * h[2]);
                    max_norm = max_norm.max((p1 * p1 + p2 * p2).sqrt());
                    max_cell = max_cell.max(h[0] * p1.abs() + h[1] * p2.abs() + h[2] * p3.abs());
                }
            }
        }
        (max_norm, max_cell)
    }

    /// Value change across one grid cell, the resolution limit of the field.
    pub fn cell_tolerance(&self) -> f64 {
        self.gradient_bounds().1
    }

    /// `2 · max(h) · max‖∇ₓᵧV‖`, the slack used by the sampled safety oracles.
    ///
    /// Only the positional gradient enters: heading derivatives are in value
    /// per radian and would inflate the bound past the depth of the unsafe set.
    pub fn epsilon_grid(&self) -> f64 {
        2.0 * self.grid.max_spacing() * self.gradient_bounds().0
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Returns a copy with every node shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += delta);
        out
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let file = ValueFunctionFile {
            schema: VALUE_SCHEMA.to_string(),
            grid: self.grid.clone(),
            omega_max: self.omega_max,
            obstacle_radius: self.obstacle_radius,
            converged: self.converged,
            residual: self.residual,
            values: self.values.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_json(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let file: ValueFunctionFile = serde_json::from_reader(reader)?;
        if file.schema != VALUE_SCHEMA {
            return Err(Error::Schema(format!(
                "expected schema {VALUE_SCHEMA:?}, found {:?}",
                file.schema
            )));
        }
        file.grid.validate().map_err(|e| Error::Schema(e.to_string()))?;
        let mut vf = Self::new(file.grid, file.values, file.omega_max, file.obstacle_radius)
            .map_err(|e| Error::Schema(e.to_string()))?;
        vf.converged = file.converged;
        vf.residual = file.residual;
        Ok(vf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_json(BufReader::new(File::open(path)?))
    }

    /// Writes `x,y,V` rows for the slice at heading `theta`, one row per position node.
    pub fn export_slice<W: Write>(&self, theta: f64, mut writer: W) -> Result<()> {
        writeln!(writer, "x,y,V")?;
        let g = &self.grid;
        for ix in 0..g.dims[0] {
            let x = g.coord(AXIS_X, ix);
            for iy in 0..g.dims[1] {
                let y = g.coord(AXIS_Y, iy);
                let v = self.interpolate_value(&State { x, y, theta });
                writeln!(writer, "{x},{y},{v}")?;
            }
        }
        Ok(())
    }
}

/// Signed distance to a disk of radius `radius` at the origin, constant in heading.
pub fn signed_distance_payoff(obstacle: &KeepOutDisk, grid: &Grid3) -> Result<ValueFunction> {
    grid.validate()?;
    if !grid.contains_xy(obstacle.cx, obstacle.cy) {
        return Err(Error::InvalidArgument("obstacle centre lies outside the grid".into()));
    }
    ValueFunction::from_fn(grid.clone(), 0.0, obstacle.r, |x, y, _| obstacle.signed_distance(x, y))
}
