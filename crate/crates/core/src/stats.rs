//! Run records, κ samples per (τ, repetition), per-τ aggregation and the
//! inverse-variance weighted sample mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::{interference_record, PathProbabilities, SlitConfig, KAPPA_FLOOR};

/// One detection experiment: reference and final probe magnetization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub gamma: SlitConfig,
    pub tau_s: f64,
    pub repetition: usize,
    pub m_i: f64,
    pub m_f: f64,
    pub probability: f64,
    /// False when the reference magnetization is not positive.
    pub valid: bool,
}

impl RunRecord {
    pub fn new(gamma: SlitConfig, tau_s: f64, repetition: usize, m_i: f64, m_f: f64) -> Self {
        RunRecord {
            gamma,
            tau_s,
            repetition,
            m_i,
            m_f,
            probability: m_f / m_i,
            valid: m_i > 0.0,
        }
    }
}

/// Inverse-variance weighted mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wsm {
    pub mean: f64,
    pub standard_error: f64,
}

/// Weighted mean of `(value, σ)` pairs with weights `1/σ²`.
///
/// Samples with `σ = 0` carry infinite weight; when any are present the
/// result is their plain mean with zero standard error.
pub fn weighted_sample_mean(samples: &[(f64, f64)]) -> Result<Wsm> {
    if samples.is_empty() {
        return Err(Error::NoResult);
    }
    if let Some(&(_, s)) = samples.iter().find(|(v, s)| !(v.is_finite() && s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidConfig(format!("bad sample uncertainty {s}")));
    }
    let exact: Vec<f64> = samples.iter().filter(|(_, s)| *s == 0.0).map(|(v, _)| *v).collect();
    if !exact.is_empty() {
        return Ok(Wsm {
            mean: exact.iter().sum::<f64>() / exact.len() as f64,
            standard_error: 0.0,
        });
    }
    let (mut sw, mut swx) = (0.0, 0.0);
    for &(v, s) in samples {
        let w = 1.0 / (s * s);
        sw += w;
        swx += w * v;
    }
    Ok(Wsm {
        mean: swx / sw,
        standard_error: (1.0 / sw).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaSample {
    pub tau_s: f64,
    pub repetition: usize,
    pub i123: f64,
    pub i_pairs: [f64; 3],
    pub kappa: Option<f64>,
}

/// Statistics of the defined κ samples at one delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub tau_s: f64,
    pub n_defined: usize,
    pub n_undefined: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation across repetitions (zero for one sample).
    pub std: Option<f64>,
    /// `std/√n`, the uncertainty of `mean` used as the WSM weight.
    pub sem: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KappaDataset {
    pub samples: Vec<KappaSample>,
    pub per_tau: Vec<TauSummary>,
    /// `None` when no delay has a defined κ.
    pub wsm: Option<Wsm>,
    /// Delays where no repetition produced a defined κ.
    pub undefined_tau: Vec<f64>,
    pub invalid_records: usize,
    /// (τ, repetition) groups dropped for an invalid or missing record.
    pub incomplete_groups: usize,
}

impl KappaDataset {
    pub fn from_records(records: &[RunRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidConfig("no run records".into()));
        }
        let mut groups: BTreeMap<(u64, usize), (f64, PathProbabilities, bool)> = BTreeMap::new();
        let mut invalid_records = 0;
        for r in records {
            if !(r.tau_s >= 0.0) {
                return Err(Error::InvalidConfig(format!("negative delay {}", r.tau_s)));
            }
            let entry = groups
                .entry((r.tau_s.to_bits(), r.repetition))
                .or_insert_with(|| (r.tau_s, PathProbabilities::empty(r.tau_s), true));
            if r.valid {
                entry.1.set(r.gamma, r.probability);
            } else {
                invalid_records += 1;
                entry.2 = false;
            }
        }
        let mut samples = Vec::new();
        let mut incomplete_groups = 0;
        for (&(_, rep), (tau, probs, ok)) in &groups {
            if !ok || !probs.is_complete() {
                incomplete_groups += 1;
                continue;
            }
            let rec = interference_record(probs, KAPPA_FLOOR)?;
            samples.push(KappaSample {
                tau_s: *tau,
                repetition: rep,
                i123: rec.i123,
                i_pairs: rec.i_pairs,
                kappa: rec.kappa,
            });
        }

        let mut by_tau: BTreeMap<u64, (f64, Vec<f64>, usize)> = BTreeMap::new();
        for (&(bits, _), (tau, _, _)) in &groups {
            by_tau.entry(bits).or_insert_with(|| (*tau, Vec::new(), 0));
        }
        for s in &samples {
            let e = by_tau.get_mut(&s.tau_s.to_bits()).expect("grouped above");
            match s.kappa {
                Some(k) => e.1.push(k),
                None => e.2 += 1,
            }
        }
        let mut per_tau = Vec::with_capacity(by_tau.len());
        let mut undefined_tau = Vec::new();
        let mut weighted = Vec::new();
        for (tau, values, n_undefined) in by_tau.into_values() {
            let n = values.len();
            let (mean, std, sem) = if n == 0 {
                undefined_tau.push(tau);
                (None, None, None)
            } else {
                let mean = values.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                let sem = std / (n as f64).sqrt();
                weighted.push((mean, sem));
                (Some(mean), Some(std), Some(sem))
            };
            per_tau.push(TauSummary {
                tau_s: tau,
                n_defined: n,
                n_undefined,
                mean,
                std,
                sem,
            });
        }
        let wsm = match weighted_sample_mean(&weighted) {
            Ok(w) => Some(w),
            Err(Error::NoResult) => None,
            Err(e) => return Err(e),
        };
        Ok(KappaDataset {
            samples,
            per_tau,
            wsm,
            undefined_tau,
            invalid_records,
            incomplete_groups,
        })
    }

    pub fn defined_samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().filter_map(|s| s.kappa)
    }
}
