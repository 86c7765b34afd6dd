use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::grid::Grid3;
use super::solver::{solve_hji, SolverSettings};
use super::value::{signed_distance_payoff, KeepOutDisk, ValueFunction};
use crate::dynamics::DubinsParams;
use crate::error::{Error, Result};

/// Parses `start:stop:step` into an inclusive, evenly spaced list.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidArgument(format!("bad number {s:?} in range {spec:?}")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![parse(single)?]),
        [start, stop, step] => {
            let (start, stop, step) = (parse(start)?, parse(stop)?, parse(step)?);
            if !(step > 0.0) || stop < start {
                return Err(Error::InvalidArgument(format!("empty range {spec:?}")));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(Error::InvalidArgument(format!("range {spec:?} is not start:stop:step"))),
    }
}

/// Solves one value function per turn-rate bound on a shared grid and payoff.
///
/// Entries come back in the order of `omega_values`. Any entry that fails to
/// converge fails the whole build.
pub fn build_library(
    omega_values: &[f64],
    obstacle_radius: f64,
    grid: &Grid3,
    settings: &SolverSettings,
) -> Result<Vec<ValueFunction>> {
    if omega_values.is_empty() {
        return Err(Error::InvalidArgument("library needs at least one omega_max".into()));
    }
    if let Some(w) = omega_values.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("omega_max must be non-negative, got {w}")));
    }
    let payoff = signed_distance_payoff(&KeepOutDisk::at_origin(obstacle_radius)?, grid)?;
    omega_values
        .par_iter()
        .map(|&omega| {
            let vf = solve_hji(&payoff, &DubinsParams::with_omega(omega), settings)?;
            if !vf.converged {
                return Err(Error::NonConvergence { omega_max: omega, residual: vf.residual, t: settings.t_max });
            }
            Ok(vf)
        })
        .collect()
}

/// File name used for a library member.
pub fn library_file_name(omega_max: f64) -> String {
    format!("vf_omega_{omega_max:.4}.json")
}

pub fn save_library(dir: impl AsRef<Path>, library: &[ValueFunction]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    library
        .iter()
        .map(|vf| {
            let path = dir.join(library_file_name(vf.omega_max));
            vf.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `*.json` value function in `dir`, sorted by `omega_max`.
pub fn load_library(dir: impl AsRef<Path>) -> Result<Vec<ValueFunction>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut library = paths.iter().map(ValueFunction::load).collect::<Result<Vec<_>>>()?;
    if library.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no value functions found in {}",
            dir.as_ref().display()
        )));
    }
    library.sort_by(|a, b| a.omega_max.total_cmp(&b.omega_max));
    Ok(library)
}

/// Whether `candidate`'s unsafe region covers `reference`'s: every node with
/// `reference ≤ 0` has `candidate ≤ margin`.
///
/// `margin` defaults to the reference's one-cell value tolerance.
pub fn is_superset_reachable(
    candidate: &ValueFunction,
    reference: &ValueFunction,
    margin: Option<f64>,
) -> Result<bool> {
    if candidate.grid != reference.grid {
        return Err(Error::GridMismatch);
    }
    let margin = margin.unwrap_or_else(|| reference.cell_tolerance());
    Ok(candidate
        .values
        .iter()
        .zip(&reference.values)
        .all(|(c, r)| *r > 0.0 || *c <= margin))
}
