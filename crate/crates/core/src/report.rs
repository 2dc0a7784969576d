//! Report files: run records (CSV), per-τ κ series (CSV and whitespace
//! columns for plotting) and a JSON summary.

use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::stats::{KappaDataset, RunRecord, TauSummary};

pub const RUNS_FILE: &str = "runs.csv";
pub const KAPPA_FILE: &str = "kappa.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SERIES_FILE: &str = "kappa_series.dat";

/// Settings that produced a dataset, copied into the summary.
#[derive(Clone, Debug, Serialize)]
pub struct RunMetadata {
    pub mode: crate::config::Mode,
    pub protocol: crate::config::Protocol,
    pub reference: crate::config::ReferenceMode,
    pub coupling: crate::spin_system::CouplingModel,
    pub include_probe: bool,
    pub refocusing: crate::config::Refocusing,
    pub relaxation: bool,
    pub gate_source: crate::config::GateSource,
    pub repetitions: usize,
    pub seed: u64,
    /// Wait between experiments; not simulated.
    pub rethermalization_s: f64,
}

impl RunMetadata {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        let e = &cfg.experiment;
        RunMetadata {
            mode: e.mode,
            protocol: e.protocol,
            reference: e.reference,
            coupling: e.coupling,
            include_probe: e.include_probe,
            refocusing: e.refocusing,
            relaxation: e.relaxation,
            gate_source: e.gate_source,
            repetitions: e.repetitions,
            seed: e.seed,
            rethermalization_s: crate::harness::RETHERMALIZATION_S,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<RunMetadata>,
    pub records: usize,
    pub invalid_records: usize,
    pub incomplete_groups: usize,
    pub kappa_samples: usize,
    pub defined_kappa_samples: usize,
    pub kappa_bar: Option<f64>,
    pub standard_error: Option<f64>,
    pub undefined_tau_s: Vec<f64>,
}

impl Summary {
    pub fn new(records: &[RunRecord], data: &KappaDataset, metadata: Option<RunMetadata>) -> Self {
        Summary {
            metadata,
            records: records.len(),
            invalid_records: data.invalid_records,
            incomplete_groups: data.incomplete_groups,
            kappa_samples: data.samples.len(),
            defined_kappa_samples: data.defined_samples().count(),
            kappa_bar: data.wsm.map(|w| w.mean),
            standard_error: data.wsm.map(|w| w.standard_error),
            undefined_tau_s: data.undefined_tau.clone(),
        }
    }
}

#[derive(Serialize)]
struct KappaRow {
    tau_s: f64,
    n_defined: usize,
    n_undefined: usize,
    kappa_mean: Option<f64>,
    kappa_std: Option<f64>,
    kappa_sem: Option<f64>,
}

impl From<&TauSummary> for KappaRow {
    fn from(t: &TauSummary) -> Self {
        KappaRow {
            tau_s: t.tau_s,
            n_defined: t.n_defined,
            n_undefined: t.n_undefined,
            kappa_mean: t.mean,
            kappa_std: t.std,
            kappa_sem: t.sem,
        }
    }
}

pub fn records_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io("runs.csv", e.into_error()))
}

fn kappa_csv(data: &KappaDataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in &data.per_tau {
        w.serialize(KappaRow::from(t))?;
    }
    w.into_inner().map_err(|e| Error::io("kappa.csv", e.into_error()))
}

fn series_dat(data: &KappaDataset) -> String {
    let mut out = String::from("# tau_us kappa_mean kappa_std kappa_sem (undefined points omitted)\n");
    for t in &data.per_tau {
        if let (Some(m), Some(s), Some(e)) = (t.mean, t.std, t.sem) {
            out.push_str(&format!("{} {} {} {}\n", t.tau_s * 1e6, m, s, e));
        }
    }
    out
}

/// Writes all four report files into `dir`. Everything is rendered before the
/// first file is created, so a failure leaves no partial report.
pub fn emit_report(
    records: &[RunRecord],
    data: &KappaDataset,
    metadata: Option<RunMetadata>,
    dir: &Path,
) -> Result<Summary> {
    if records.is_empty() || data.per_tau.is_empty() {
        return Err(Error::InvalidConfig("nothing to report: the dataset is empty".into()));
    }
    let summary = Summary::new(records, data, metadata);
    let files = [
        (RUNS_FILE, records_csv(records)?),
        (KAPPA_FILE, kappa_csv(data)?),
        (SUMMARY_FILE, serde_json::to_vec_pretty(&summary)?),
        (SERIES_FILE, series_dat(data).into_bytes()),
    ];
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}
