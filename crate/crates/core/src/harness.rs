//! The detection circuit: pseudo-pure state → Û → delay τ (optionally with a
//! probe π at τ/2) → V̂^γ → readout, swept over τ, repetitions and the eight
//! slit patterns.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, GateSource, Mode, Protocol, ReferenceMode, Refocusing};
use crate::engine::{
    apply_relaxation, apply_unitary, free_propagator, measure_magnetization, pps_deviation, zero_population,
    DensityMatrix, OpenPropagator, UnitaryOp,
};
use crate::error::{Error, Result};
use crate::grape::{hard_pulse, propagator_from_pulse, synthesize, ControlPulse, OptimizerConfig};
use crate::linalg;
use crate::noise::{
    apply_rf_draw, apply_rf_scale, distort, inject_gate_error, sample_fluctuations, FluctuationDraw, RfEnsemble,
};
use crate::paths::{born_probability, target_unitaries, SlitConfig};
use crate::spin_system::{build_hamiltonian, level_gaps, LevelGaps, SpinSystem};
use crate::stats::RunRecord;

/// Time between consecutive experiments; not simulated, reported as metadata.
pub const RETHERMALIZATION_S: f64 = 25.0;

const STREAM_SHOT: u64 = 1;
const STREAM_REFERENCE: u64 = 2;
const STREAM_GATE_U: u64 = 3;
const STREAM_GATE_V: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one random stream of one shot, independent of execution order.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ p))
}

/// Pulse file names, in the order Û, V̂^000 … V̂^111.
pub fn pulse_file_names() -> Vec<String> {
    std::iter::once("u_hat.json".to_string())
        .chain(SlitConfig::all().map(|g| format!("v_hat_{g}.json")))
        .collect()
}

/// GRAPE pulses for the preparation gate and the eight analysis gates.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseLibrary {
    pub u_hat: ControlPulse,
    /// Indexed by [`SlitConfig::index`].
    pub v_hat: Vec<ControlPulse>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisReport {
    pub name: String,
    pub fidelity: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl PulseLibrary {
    /// Runs GRAPE for all nine targets on the computation spins, in parallel.
    pub fn synthesize(cfg: &ExperimentConfig) -> Result<(Self, Vec<SynthesisReport>)> {
        let sys = cfg.computation_system()?;
        let model = cfg.experiment.coupling;
        let targets = target_unitaries();
        let mut goals = vec![targets.u_hat.clone()];
        goals.extend(targets.v_hat.iter().cloned());
        let species = sys.species();
        let species: Vec<&str> = species.iter().map(String::as_str).collect();
        let template = ControlPulse::zeros(cfg.grape.duration_s, cfg.grape.n_slices, &species)?;
        let names = pulse_file_names();
        let results: Vec<_> = goals
            .par_iter()
            .enumerate()
            .map(|(i, goal)| {
                let opt = OptimizerConfig {
                    seed: derive_seed(cfg.grape.optimizer.seed, &[i as u64]),
                    ..cfg.grape.optimizer.clone()
                };
                synthesize(goal, &template, &opt, &sys, model)
            })
            .collect::<Result<_>>()?;
        let reports = results
            .iter()
            .zip(&names)
            .map(|(r, n)| SynthesisReport {
                name: n.trim_end_matches(".json").to_string(),
                fidelity: r.fidelity,
                iterations: r.iterations,
                converged: r.converged,
            })
            .collect();
        let mut pulses = results.into_iter().map(|r| r.pulse);
        let u_hat = pulses.next().expect("nine targets");
        Ok((
            PulseLibrary {
                u_hat,
                v_hat: pulses.collect(),
            },
            reports,
        ))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names = pulse_file_names();
        self.u_hat.save(&dir.join(&names[0]))?;
        for (p, name) in self.v_hat.iter().zip(&names[1..]) {
            p.save(&dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let load = |name: &str| {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingPulse(path.display().to_string()));
            }
            ControlPulse::load(&path)
        };
        let names = pulse_file_names();
        let u_hat = load(&names[0])?;
        let v_hat = names[1..].iter().map(|n| load(n)).collect::<Result<_>>()?;
        Ok(PulseLibrary { u_hat, v_hat })
    }

    fn get(&self, gate: GateId) -> &ControlPulse {
        match gate {
            GateId::U => &self.u_hat,
            GateId::V(g) => &self.v_hat[g.index()],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum GateId {
    U,
    V(SlitConfig),
}

/// Free evolution over one interval, with or without relaxation.
enum Evolution {
    Closed(UnitaryOp),
    Open(OpenPropagator),
}

impl Evolution {
    fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        match self {
            Evolution::Closed(u) => apply_unitary(rho, u),
            Evolution::Open(p) => p.apply(rho),
        }
    }
}

/// Free-evolution pieces of one delay.
struct Delay {
    first: Evolution,
    /// Present when a probe π pulse splits the delay.
    second: Option<Evolution>,
}

/// Everything that does not change from shot to shot.
pub struct Simulator {
    cfg: ExperimentConfig,
    system: SpinSystem,
    computation: SpinSystem,
    gaps: LevelGaps,
    hamiltonian: linalg::CMat,
    /// Gate pulses after distortion (noisy mode) or as synthesized.
    pulses: Option<PulseLibrary>,
    /// Nominal two-qubit gates for Û and V̂^γ (index 0 is Û).
    gates: Vec<UnitaryOp>,
    gate_duration: f64,
    refocus: Option<UnitaryOp>,
    refocus_pulse: Option<ControlPulse>,
    delays: HashMap<u64, Delay>,
    ensemble: RfEnsemble,
}

impl Simulator {
    /// Prepares a simulator. GRAPE modes use `pulses` when given and
    /// synthesize them otherwise.
    pub fn new(cfg: &ExperimentConfig, pulses: Option<PulseLibrary>) -> Result<Self> {
        cfg.validate()?;
        let exp = &cfg.experiment;
        let system = cfg.simulated_system()?;
        let computation = cfg.computation_system()?;
        let gaps = level_gaps(&computation)?;
        let hamiltonian = build_hamiltonian(&system, exp.coupling)?;
        let noisy = exp.mode == Mode::Noisy;

        let uses_engine = exp.mode != Mode::Analytic;
        let (pulses, gates, gate_duration) = match (uses_engine, exp.gate_source) {
            (false, _) | (true, GateSource::Exact) => {
                let t = target_unitaries();
                let mut gates = vec![t.u_hat];
                gates.extend(t.v_hat);
                (None, gates, 0.0)
            }
            (true, GateSource::Grape) => {
                let lib = match pulses {
                    Some(lib) => lib,
                    None => {
                        let (lib, reports) = PulseLibrary::synthesize(cfg)?;
                        if let Some(bad) = reports.iter().find(|r| !r.converged) {
                            return Err(Error::MissingPulse(format!(
                                "{} reached fidelity {:.6} below target",
                                bad.name, bad.fidelity
                            )));
                        }
                        lib
                    }
                };
                let lib = if noisy {
                    let d = &cfg.errors.distortion;
                    PulseLibrary {
                        u_hat: distort(&lib.u_hat, d)?,
                        v_hat: lib.v_hat.iter().map(|p| distort(p, d)).collect::<Result<_>>()?,
                    }
                } else {
                    lib
                };
                let mut gates = vec![propagator_from_pulse(&lib.u_hat, &computation, exp.coupling)?];
                for p in &lib.v_hat {
                    gates.push(propagator_from_pulse(p, &computation, exp.coupling)?);
                }
                let duration = lib.u_hat.duration_s;
                (Some(lib), gates, duration)
            }
        };

        let split = exp.include_probe && exp.refocusing != Refocusing::Off;
        let (refocus, refocus_pulse) = if !split {
            (None, None)
        } else {
            let probe_slot = system.len() - 1;
            match exp.refocusing {
                Refocusing::Instantaneous => {
                    let x = linalg::embed(&linalg::pauli_x(), probe_slot, system.len());
                    (Some(UnitaryOp::new(x)?), None)
                }
                _ => {
                    let species = system.spin(probe_slot).species.clone();
                    let len = exp.refocus_pulse_us * 1e-6;
                    let pulse = hard_pulse(&species, std::f64::consts::PI, 0.0, len)?;
                    let u = propagator_from_pulse(&pulse, &system, exp.coupling)?;
                    (Some(u), Some(pulse))
                }
            }
        };

        let ensemble = if noisy {
            RfEnsemble::gaussian(cfg.errors.rf_inhomogeneity_sigma, cfg.errors.rf_ensemble_points)?
        } else {
            RfEnsemble::single(1.0)?
        };

        let mut sim = Simulator {
            cfg: cfg.clone(),
            system,
            computation,
            gaps,
            hamiltonian,
            pulses,
            gates,
            gate_duration,
            refocus,
            refocus_pulse,
            delays: HashMap::new(),
            ensemble,
        };
        if uses_engine {
            for tau in cfg.tau_grid()? {
                let delay = sim.build_delay(tau)?;
                sim.delays.insert(tau.to_bits(), delay);
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn gaps(&self) -> &LevelGaps {
        &self.gaps
    }

    pub fn pulses(&self) -> Option<&PulseLibrary> {
        self.pulses.as_ref()
    }

    fn initial_state(&self) -> Result<DensityMatrix> {
        if self.cfg.experiment.include_probe {
            pps_deviation(self.system.len())
        } else {
            let mut psi = vec![linalg::ZERO; self.system.dim()];
            psi[0] = linalg::ONE;
            DensityMatrix::pure(&psi)
        }
    }

    fn readout(&self, rho: &DensityMatrix) -> Result<f64> {
        if self.cfg.experiment.include_probe {
            measure_magnetization(rho)
        } else {
            Ok(zero_population(rho))
        }
    }

    fn lift(&self, u: UnitaryOp) -> UnitaryOp {
        let extra = self.system.len() - 2;
        if extra == 0 {
            u
        } else {
            u.extend(extra)
        }
    }

    fn gate_unitary(&self, gate: GateId, rf: Option<(&FluctuationDraw, f64)>) -> Result<UnitaryOp> {
        let index = match gate {
            GateId::U => 0,
            GateId::V(g) => 1 + g.index(),
        };
        let u = match (&self.pulses, rf) {
            (Some(lib), Some((draw, member))) => {
                let pulse = apply_rf_scale(&apply_rf_draw(lib.get(gate), draw)?, member)?;
                propagator_from_pulse(&pulse, &self.computation, self.cfg.experiment.coupling)?
            }
            _ => self.gates[index].clone(),
        };
        Ok(self.lift(u))
    }

    fn refocus_unitary(&self, rf: Option<(&FluctuationDraw, f64)>) -> Result<Option<UnitaryOp>> {
        match (&self.refocus_pulse, rf) {
            (Some(pulse), Some((draw, member))) => {
                let p = apply_rf_scale(&apply_rf_draw(pulse, draw)?, member)?;
                Ok(Some(propagator_from_pulse(&p, &self.system, self.cfg.experiment.coupling)?))
            }
            _ => Ok(self.refocus.clone()),
        }
    }

    fn apply_gate(
        &self,
        rho: &DensityMatrix,
        gate: &UnitaryOp,
        error_seed: Option<u64>,
    ) -> Result<DensityMatrix> {
        let half = 0.5 * self.gate_duration;
        let relax = self.cfg.experiment.relaxation && half > 0.0;
        let mut rho = if relax {
            apply_relaxation(rho, half, &self.system)?
        } else {
            rho.clone()
        };
        rho = apply_unitary(&rho, gate)?;
        if let Some(seed) = error_seed {
            rho = inject_gate_error(&rho, &self.cfg.errors.gate_error, seed)?;
        }
        if relax {
            rho = apply_relaxation(&rho, half, &self.system)?;
        }
        Ok(rho)
    }

    /// Final readout for one slit pattern, one delay and one RF realization.
    fn final_signal(
        &self,
        gamma: SlitConfig,
        tau: f64,
        rf: Option<(&FluctuationDraw, f64)>,
        gate_seeds: Option<(u64, u64)>,
    ) -> Result<f64> {
        let fresh;
        let delay = match self.delays.get(&tau.to_bits()) {
            Some(d) => d,
            None => {
                fresh = self.build_delay(tau)?;
                &fresh
            }
        };
        let mut rho = self.initial_state()?;
        let u = self.gate_unitary(GateId::U, rf)?;
        rho = self.apply_gate(&rho, &u, gate_seeds.map(|s| s.0))?;
        rho = delay.first.apply(&rho)?;
        if let Some(second) = &delay.second {
            let flip = self.refocus_unitary(rf)?.expect("split delay has a refocusing pulse");
            rho = apply_unitary(&rho, &flip)?;
            rho = second.apply(&rho)?;
        }
        let v = self.gate_unitary(GateId::V(gamma), rf)?;
        rho = self.apply_gate(&rho, &v, gate_seeds.map(|s| s.1))?;
        self.readout(&rho)
    }

    fn build_delay(&self, tau: f64) -> Result<Delay> {
        let exp = &self.cfg.experiment;
        let evolution = |t: f64| -> Result<Evolution> {
            if exp.relaxation {
                Ok(Evolution::Open(OpenPropagator::new(&self.hamiltonian, t, &self.system)?))
            } else {
                Ok(Evolution::Closed(free_propagator(&self.hamiltonian, t)?))
            }
        };
        if self.refocus.is_some() {
            let len = self.refocus_pulse.as_ref().map_or(0.0, |p| p.duration_s);
            let piece = (0.5 * tau - 0.5 * len).max(0.0);
            Ok(Delay {
                first: evolution(piece)?,
                second: Some(evolution(piece)?),
            })
        } else {
            Ok(Delay {
                first: evolution(tau)?,
                second: None,
            })
        }
    }

    /// One detection experiment for pattern `gamma` at delay `tau`, repetition `rep`.
    pub fn run_single(&self, gamma: SlitConfig, tau: f64, rep: usize) -> Result<RunRecord> {
        if !(tau >= 0.0) {
            return Err(Error::InvalidConfig(format!("negative delay {tau}")));
        }
        let exp = &self.cfg.experiment;
        if exp.mode == Mode::Analytic {
            return Ok(RunRecord::new(gamma, tau, rep, 1.0, born_probability(gamma, &self.gaps, tau)));
        }
        let reference = self.readout(&self.initial_state()?)?;
        if exp.mode == Mode::Ideal {
            let m_f = self.final_signal(gamma, tau, None, None)?;
            return Ok(RunRecord::new(gamma, tau, rep, reference, m_f));
        }

        let seed = exp.seed;
        let key = [tau.to_bits(), rep as u64];
        let shot = derive_seed(seed, &[key[0], key[1], gamma.bits() as u64, STREAM_SHOT]);
        let draw = sample_fluctuations(&self.cfg.errors.fluctuations, shot);
        let gate_seeds = (
            derive_seed(seed, &[key[0], key[1], gamma.bits() as u64, STREAM_GATE_U]),
            derive_seed(seed, &[key[0], key[1], gamma.bits() as u64, STREAM_GATE_V]),
        );
        let signal = crate::noise::ensemble_average(&self.ensemble, |member| {
            self.final_signal(gamma, tau, Some((&draw, member)), Some(gate_seeds))
        })?;

        let (m_i, m_f) = match exp.protocol {
            Protocol::TwoExp => {
                let ref_draw = match exp.reference {
                    ReferenceMode::PerGamma => draw.clone(),
                    ReferenceMode::Shared => sample_fluctuations(
                        &self.cfg.errors.fluctuations,
                        derive_seed(seed, &[key[0], key[1], STREAM_REFERENCE]),
                    ),
                };
                (
                    reference * ref_draw.pps_factor + ref_draw.acquisition[0],
                    signal + draw.acquisition[1],
                )
            }
            Protocol::Inline => (
                reference * draw.pps_factor + draw.acquisition[0],
                signal * draw.pps_factor + draw.acquisition[1],
            ),
        };
        Ok(RunRecord::new(gamma, tau, rep, m_i, m_f))
    }

    /// All records, ordered by τ, then repetition, then slit pattern.
    pub fn run_sweep(&self) -> Result<Vec<RunRecord>> {
        let taus = self.cfg.tau_grid()?;
        if taus.is_empty() {
            return Err(Error::InvalidConfig("empty tau grid".into()));
        }
        let reps = self.cfg.experiment.repetitions;
        let shots: Vec<(f64, usize)> = taus
            .iter()
            .flat_map(|&t| (0..reps).map(move |r| (t, r)))
            .collect();
        let chunks: Vec<Vec<RunRecord>> = shots
            .par_iter()
            .map(|&(tau, rep)| {
                SlitConfig::all()
                    .map(|g| self.run_single(g, tau, rep))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Sweep with the reference read inside each shot.
pub fn measurement_protocol_inline(cfg: &ExperimentConfig, pulses: Option<PulseLibrary>) -> Result<Vec<RunRecord>> {
    if cfg.experiment.mode != Mode::Noisy {
        return Err(Error::InvalidConfig("the inline protocol applies to noisy mode".into()));
    }
    let mut cfg = cfg.clone();
    cfg.experiment.protocol = Protocol::Inline;
    Simulator::new(&cfg, pulses)?.run_sweep()
}

/// Convenience wrapper: build a simulator and run the configured sweep.
pub fn run_sweep(cfg: &ExperimentConfig, pulses: Option<PulseLibrary>) -> Result<Vec<RunRecord>> {
    Simulator::new(cfg, pulses)?.run_sweep()
}
