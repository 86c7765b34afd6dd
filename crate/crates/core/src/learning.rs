//! Maximum-likelihood fit of a supervisor's value function and trigger level.
//!
//! Each intervention's value under a candidate `V` is modelled as
//! `N(mu, sigma²)`. For a fixed candidate the optimum is closed form (sample
//! mean and biased sample variance), so choosing among a library of
//! candidates reduces to comparing the maximised log-likelihoods.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reachability::{is_superset_reachable, ValueFunction};
use crate::supervisor::InterventionRecord;

/// Lower bound on fitted variances, value units squared.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Fraction of out-of-domain records tolerated before a candidate is rejected.
const MAX_EXCLUDED_FRACTION: f64 = 0.10;

pub const FIT_SCHEMA: &str = "fit-1";

/// Closed-form `(mean, max(variance, floor))` of the observations.
pub fn fit_mu_sigma(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 observations, got {}",
            values.len()
        )));
    }
    let mu = mean(values);
    Ok((mu, variance_about(values, mu)))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn variance_about(values: &[f64], mu: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    (ss / values.len() as f64).max(VARIANCE_FLOOR)
}

/// Gaussian log-likelihood of independent observations.
pub fn log_likelihood(values: &[f64], mu: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {sigma2}")));
    }
    let p = values.len() as f64;
    let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    Ok(-0.5 * p * (2.0 * std::f64::consts::PI * sigma2).ln() - ss / (2.0 * sigma2))
}

/// Candidate values at the records' obstacle-relative states, plus the number
/// of records excluded for falling outside the grid.
pub fn record_values(vf: &ValueFunction, records: &[InterventionRecord]) -> Result<(Vec<f64>, usize)> {
    let mut values = Vec::with_capacity(records.len());
    let mut excluded = 0;
    for rec in records {
        let sample = vf.sample(&rec.relative_state);
        if sample.out_of_domain {
            excluded += 1;
        } else {
            values.push(sample.value);
        }
    }
    if excluded as f64 > MAX_EXCLUDED_FRACTION * records.len() as f64 {
        return Err(Error::TooManyExcluded { excluded, total: records.len() });
    }
    Ok((values, excluded))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateLikelihood {
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub log_likelihood: f64,
    pub n_used: usize,
    pub n_excluded: usize,
}

/// Maximised likelihood of one candidate value function.
pub fn candidate_likelihood(vf: &ValueFunction, records: &[InterventionRecord]) -> Result<CandidateLikelihood> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 records, got {}", records.len())));
    }
    let (values, n_excluded) = record_values(vf, records)?;
    let (mu_hat, sigma2_hat) = fit_mu_sigma(&values)?;
    Ok(CandidateLikelihood {
        mu_hat,
        sigma2_hat,
        log_likelihood: log_likelihood(&values, mu_hat, sigma2_hat)?,
        n_used: values.len(),
        n_excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub omega_max: f64,
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub log_likelihood: f64,
    pub conservative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFit {
    pub library_index: usize,
    pub omega_max: f64,
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub log_likelihood: f64,
}

/// Library argmax with the non-negative trigger-level prior applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorFit {
    pub schema: String,
    pub selected: SelectedFit,
    pub candidates: Vec<CandidateScore>,
    pub n_records: usize,
    pub n_excluded: usize,
}

impl SupervisorFit {
    pub fn library_index(&self) -> usize {
        self.selected.library_index
    }

    pub fn omega_max(&self) -> f64 {
        self.selected.omega_max
    }

    pub fn mu_hat(&self) -> f64 {
        self.selected.mu_hat
    }

    pub fn sigma_hat(&self) -> f64 {
        self.selected.sigma2_hat.sqrt()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let fit: Self = serde_json::from_reader(reader)?;
        if fit.schema != FIT_SCHEMA {
            return Err(Error::Schema(format!("expected schema {FIT_SCHEMA:?}, found {:?}", fit.schema)));
        }
        Ok(fit)
    }
}

/// Picks the most likely library member for the records.
///
/// With `enforce_conservative`, candidates whose unsafe region does not cover
/// `true_vf`'s are discarded first. The trigger level is clamped at zero and
/// the variance re-fitted about the clamped level. Ties go to the smaller
/// `omega_max`.
pub fn select_value_function(
    library: &[ValueFunction],
    records: &[InterventionRecord],
    true_vf: Option<&ValueFunction>,
    enforce_conservative: bool,
) -> Result<SupervisorFit> {
    if library.is_empty() {
        return Err(Error::InvalidArgument("library is empty".into()));
    }
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 records, got {}", records.len())));
    }
    if enforce_conservative && true_vf.is_none() {
        return Err(Error::InvalidArgument("conservative prior needs the true value function".into()));
    }

    let mut candidates = Vec::with_capacity(library.len());
    let mut n_excluded = 0;
    for vf in library {
        let (values, excluded) = record_values(vf, records)?;
        n_excluded = n_excluded.max(excluded);
        let (mean_value, _) = fit_mu_sigma(&values)?;
        let mu_hat = mean_value.max(0.0);
        let sigma2_hat = variance_about(&values, mu_hat);
        let conservative = match true_vf {
            Some(reference) => is_superset_reachable(vf, reference, None)?,
            None => true,
        };
        candidates.push(CandidateScore {
            omega_max: vf.omega_max,
            mu_hat,
            sigma2_hat,
            log_likelihood: log_likelihood(&values, mu_hat, sigma2_hat)?,
            conservative,
        });
    }

    let best = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| !enforce_conservative || c.conservative)
        .max_by(|(_, a), (_, b)| {
            a.log_likelihood
                .total_cmp(&b.log_likelihood)
                .then(b.omega_max.total_cmp(&a.omega_max))
        })
        .map(|(i, _)| i)
        .ok_or(Error::EmptyFeasibleSet)?;

    let c = &candidates[best];
    Ok(SupervisorFit {
        schema: FIT_SCHEMA.to_string(),
        selected: SelectedFit {
            library_index: best,
            omega_max: c.omega_max,
            mu_hat: c.mu_hat,
            sigma2_hat: c.sigma2_hat,
            log_likelihood: c.log_likelihood,
        },
        candidates,
        n_records: records.len(),
        n_excluded,
    })
}

/// Share of records whose states a controller activating at `level` would not
/// avoid, i.e. `V > level`.
pub fn predicted_fp_fraction(vf: &ValueFunction, level: f64, records: &[InterventionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records".into()));
    }
    let above = records
        .iter()
        .filter(|r| vf.interpolate_value(&r.relative_state) > level)
        .count();
    Ok(above as f64 / records.len() as f64)
}
