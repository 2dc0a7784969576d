//! Experiment configuration file: spin system, sweep, error models and GRAPE
//! settings in one JSON document. Every section and field has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grape::{OptimizerConfig, DEFAULT_GATE_DURATION, DEFAULT_GATE_SLICES};
use crate::noise::{DistortionSpec, FluctuationSpec, GateErrorSpec};
use crate::spin_system::{validate_system, CouplingModel, Issue, Severity, SpinSystem, SpinSystemConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Closed-form Born probabilities, no engine.
    Analytic,
    /// Engine with synthesized gates and relaxation.
    #[default]
    #[serde(alias = "ideal-pulse")]
    Ideal,
    /// `Ideal` plus the error models.
    Noisy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Reference and final magnetization from separate experiments.
    #[default]
    #[serde(alias = "two-experiment")]
    TwoExp,
    /// Reference read within the same shot as the final magnetization.
    #[serde(alias = "inline-reference")]
    Inline,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refocusing {
    Off,
    /// Ideal instantaneous probe π at τ/2.
    #[default]
    Instantaneous,
    /// Square probe π pulse centered at τ/2, propagated under the full Hamiltonian.
    Hard,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateSource {
    /// The target unitaries themselves, applied instantaneously.
    Exact,
    /// Propagators of GRAPE pulses.
    #[default]
    Grape,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Every slit pattern gets its own reference experiment.
    #[default]
    PerGamma,
    /// One reference per (τ, repetition) serves all eight patterns.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub mode: Mode,
    pub coupling: CouplingModel,
    pub protocol: Protocol,
    pub tau_start_us: f64,
    pub tau_stop_us: f64,
    pub tau_step_us: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Simulate the probe spin (third slot) and read it out; otherwise read the
    /// |00⟩ population of the two computation spins.
    pub include_probe: bool,
    pub refocusing: Refocusing,
    pub refocus_pulse_us: f64,
    pub relaxation: bool,
    pub gate_source: GateSource,
    pub reference: ReferenceMode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            mode: Mode::Ideal,
            coupling: CouplingModel::Weak,
            protocol: Protocol::TwoExp,
            tau_start_us: 0.0,
            tau_stop_us: 1900.0,
            tau_step_us: 100.0,
            repetitions: 10,
            seed: 0,
            include_probe: false,
            refocusing: Refocusing::Instantaneous,
            refocus_pulse_us: 20.0,
            relaxation: true,
            gate_source: GateSource::Grape,
            reference: ReferenceMode::PerGamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorSection {
    pub fluctuations: FluctuationSpec,
    pub distortion: DistortionSpec,
    pub gate_error: GateErrorSpec,
    /// Relative width of the static RF inhomogeneity left after RF selection;
    /// zero disables ensemble averaging.
    pub rf_inhomogeneity_sigma: f64,
    pub rf_ensemble_points: usize,
}

impl Default for ErrorSection {
    fn default() -> Self {
        ErrorSection {
            fluctuations: FluctuationSpec::default(),
            distortion: DistortionSpec::default(),
            gate_error: GateErrorSpec::default(),
            rf_inhomogeneity_sigma: 0.0,
            rf_ensemble_points: 5,
        }
    }
}

impl ErrorSection {
    /// Every error model switched off.
    pub fn none() -> Self {
        ErrorSection {
            fluctuations: FluctuationSpec::none(),
            distortion: DistortionSpec::identity(),
            gate_error: GateErrorSpec::none(),
            rf_inhomogeneity_sigma: 0.0,
            rf_ensemble_points: 1,
        }
    }
}

/// Fidelity target for the experiment's gate library. Residual gate error
/// feeds straight into κ, so the library is held well above the 0.9995 floor.
pub const DEFAULT_LIBRARY_FIDELITY: f64 = 0.99999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrapeSection {
    pub duration_s: f64,
    pub n_slices: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for GrapeSection {
    fn default() -> Self {
        GrapeSection {
            duration_s: DEFAULT_GATE_DURATION,
            n_slices: DEFAULT_GATE_SLICES,
            optimizer: OptimizerConfig {
                fidelity_target: DEFAULT_LIBRARY_FIDELITY,
                ..OptimizerConfig::default()
            },
        }
    }
}

fn default_system() -> SpinSystemConfig {
    SpinSystem::ttmsa_synthetic().to_config()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// The first two spins are the computation qubits; a third spin, if
    /// present, is the probe.
    pub system: SpinSystemConfig,
    pub experiment: ExperimentSection,
    pub errors: ErrorSection,
    pub grape: GrapeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: default_system(),
            experiment: ExperimentSection::default(),
            errors: ErrorSection::default(),
            grape: GrapeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn spin_system(&self) -> Result<SpinSystem> {
        SpinSystem::from_config(&self.system)
    }

    /// The two computation spins on their own.
    pub fn computation_system(&self) -> Result<SpinSystem> {
        self.spin_system()?.subsystem(&[0, 1])
    }

    /// The register that is actually propagated.
    pub fn simulated_system(&self) -> Result<SpinSystem> {
        let full = self.spin_system()?;
        if self.experiment.include_probe {
            full.subsystem(&[0, 1, 2])
        } else {
            full.subsystem(&[0, 1])
        }
    }

    /// Delays in seconds, `start, start+step, …` up to and including `stop`.
    pub fn tau_grid(&self) -> Result<Vec<f64>> {
        let e = &self.experiment;
        let (start, stop, step) = (e.tau_start_us, e.tau_stop_us, e.tau_step_us);
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidConfig(format!("tau step {step} µs must be positive")));
        }
        if !(start.is_finite() && stop.is_finite() && start >= 0.0) {
            return Err(Error::InvalidConfig(format!("tau range {start}..{stop} µs")));
        }
        if stop < start {
            return Ok(Vec::new());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| (start + i as f64 * step) / 1e6).collect())
    }

    /// All problems with the configuration; `Violation`s make it unusable.
    pub fn lint(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let mut violation = |message: String| {
            issues.push(Issue {
                severity: Severity::Violation,
                message,
            })
        };
        let e = &self.experiment;
        if e.repetitions == 0 {
            violation("repetitions must be at least 1".into());
        }
        if let Err(err) = self.tau_grid() {
            violation(err.to_string());
        }
        if !(e.refocus_pulse_us.is_finite() && e.refocus_pulse_us > 0.0) {
            violation(format!("refocus_pulse_us {} must be positive", e.refocus_pulse_us));
        }
        if let Err(err) = self.errors.fluctuations.validate() {
            violation(err.to_string());
        }
        if let Err(err) = self.errors.distortion.validate() {
            violation(err.to_string());
        }
        if let Err(err) = self.errors.gate_error.validate() {
            violation(err.to_string());
        }
        let ens = &self.errors;
        if !(ens.rf_inhomogeneity_sigma.is_finite() && ens.rf_inhomogeneity_sigma >= 0.0) || ens.rf_ensemble_points == 0 {
            violation(format!(
                "RF ensemble sigma {} with {} points",
                ens.rf_inhomogeneity_sigma, ens.rf_ensemble_points
            ));
        }
        if let Err(err) = self.grape.optimizer.validate() {
            violation(err.to_string());
        }
        if self.grape.n_slices == 0 || !(self.grape.duration_s.is_finite() && self.grape.duration_s > 0.0) {
            violation(format!(
                "GRAPE template {} s / {} slices",
                self.grape.duration_s, self.grape.n_slices
            ));
        }
        match self.spin_system() {
            Err(err) => violation(err.to_string()),
            Ok(sys) => {
                let needed = if e.include_probe { 3 } else { 2 };
                if sys.len() < needed {
                    violation(format!("{} spins given, {needed} needed", sys.len()));
                }
                issues.extend(validate_system(&sys));
            }
        }
        issues
    }

    pub fn validate(&self) -> Result<()> {
        let bad: Vec<String> = self
            .lint()
            .into_iter()
            .filter(|i| i.severity == Severity::Violation)
            .map(|i| i.message)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad.join("; ")))
        }
    }
}
