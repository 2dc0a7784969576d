use tripath::config::{ErrorSection, ExperimentConfig, GateSource, Mode, Protocol, ReferenceMode, Refocusing};
use tripath::harness::{measurement_protocol_inline, run_sweep, PulseLibrary, Simulator};
use tripath::noise::FluctuationSpec;
use tripath::paths::{born_probability, SlitConfig};
use tripath::spin_system::level_gaps;
use tripath::stats::{KappaDataset, RunRecord};
use tripath::Error;

fn exact_gates() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.gate_source = GateSource::Exact;
    cfg.experiment.relaxation = false;
    cfg.experiment.repetitions = 1;
    cfg
}

fn noisy(errors: ErrorSection) -> ExperimentConfig {
    let mut cfg = exact_gates();
    cfg.experiment.mode = Mode::Noisy;
    cfg.experiment.repetitions = 3;
    cfg.experiment.tau_stop_us = 500.0;
    cfg.errors = errors;
    cfg
}

fn pps_only() -> ErrorSection {
    ErrorSection {
        fluctuations: FluctuationSpec::pps_only(0.0095, 0.02),
        ..ErrorSection::none()
    }
}

fn max_kappa(records: &[RunRecord]) -> f64 {
    KappaDataset::from_records(records)
        .unwrap()
        .defined_samples()
        .fold(0.0, |m, k| m.max(k.abs()))
}

fn max_born_deviation(cfg: &ExperimentConfig, records: &[RunRecord]) -> f64 {
    let gaps = level_gaps(&cfg.computation_system().unwrap()).unwrap();
    records
        .iter()
        .map(|r| (r.probability - born_probability(r.gamma, &gaps, r.tau_s)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn all_open_at_zero_delay_is_certain() {
    let mut cfg = exact_gates();
    cfg.experiment.mode = Mode::Analytic;
    let sim = Simulator::new(&cfg, None).unwrap();
    let r = sim.run_single(SlitConfig::ALL_OPEN, 0.0, 0).unwrap();
    assert!((r.probability - 1.0).abs() < 1e-15);
    assert_eq!(sim.run_single(SlitConfig::BLOCKED, 3e-4, 0).unwrap().probability, 0.0);
    assert!(matches!(sim.run_single(SlitConfig::ALL_OPEN, -1e-6, 0), Err(Error::InvalidConfig(_))));
}

#[test]
fn default_sweep_shape() {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.mode = Mode::Analytic;
    let recs = run_sweep(&cfg, None).unwrap();
    assert_eq!(recs.len(), 1600);
    let data = KappaDataset::from_records(&recs).unwrap();
    assert_eq!(data.samples.len(), 200);
    assert_eq!(data.per_tau.len(), 20);
    // ordered by τ, then repetition, then pattern
    assert_eq!(recs[8].repetition, 1);
    assert_eq!(recs[80].tau_s, 1e-4);
    assert!(recs[..8].iter().zip(SlitConfig::all()).all(|(r, g)| r.gamma == g));
}

#[test]
fn single_delay_single_repetition() {
    let mut cfg = exact_gates();
    cfg.experiment.tau_start_us = 300.0;
    cfg.experiment.tau_stop_us = 300.0;
    let recs = run_sweep(&cfg, None).unwrap();
    assert_eq!(recs.len(), 8);
    let data = KappaDataset::from_records(&recs).unwrap();
    assert_eq!(data.per_tau[0].std, Some(0.0));
    assert!(data.wsm.unwrap().mean.abs() < 1e-12);
}

#[test]
fn empty_grid_is_rejected() {
    let mut cfg = exact_gates();
    cfg.experiment.tau_stop_us = -1.0;
    assert!(run_sweep(&cfg, None).is_err());
}

#[test]
fn ideal_grape_pulses_stay_within_the_fidelity_bound() {
    let cfg = {
        let mut c = exact_gates();
        c.experiment.gate_source = GateSource::Grape;
        c.experiment.tau_stop_us = 900.0;
        c
    };
    let (lib, reports) = PulseLibrary::synthesize(&cfg).unwrap();
    let target = cfg.grape.optimizer.fidelity_target;
    assert!(reports.iter().all(|r| r.converged && r.fidelity >= target));
    // |ΔP| ≤ 2(ε_U + ε_V) with ε = √(2N(1 − √F)) the operator-norm distance
    // to the nearest phase-equivalent target, N = 4
    let eps = (8.0 * (1.0 - target.sqrt())).sqrt();
    let recs = run_sweep(&cfg, Some(lib)).unwrap();
    let dev = max_born_deviation(&cfg, &recs);
    assert!(dev <= 4.0 * eps, "{dev} > {}", 4.0 * eps);
    assert!(dev > 1e-10);
}

#[test]
fn hard_refocusing_pulse_approximates_the_instantaneous_one() {
    let mut cfg = exact_gates();
    cfg.experiment.include_probe = true;
    cfg.experiment.refocusing = Refocusing::Hard;
    let hard = max_born_deviation(&cfg, &run_sweep(&cfg, None).unwrap());
    cfg.experiment.refocusing = Refocusing::Instantaneous;
    let ideal = max_born_deviation(&cfg, &run_sweep(&cfg, None).unwrap());
    cfg.experiment.refocusing = Refocusing::Off;
    let off = max_born_deviation(&cfg, &run_sweep(&cfg, None).unwrap());
    assert!(ideal < 1e-12);
    assert!(hard > ideal && hard < 0.05 && hard < off, "hard {hard}, off {off}");
}

#[test]
fn relaxation_moves_probabilities_off_the_born_values() {
    let mut cfg = exact_gates();
    cfg.experiment.tau_stop_us = 1900.0;
    let closed = max_born_deviation(&cfg, &run_sweep(&cfg, None).unwrap());
    cfg.experiment.relaxation = true;
    let open = max_born_deviation(&cfg, &run_sweep(&cfg, None).unwrap());
    assert!(closed < 1e-12 && open > 1e-4);
}

#[test]
fn noisy_sweeps_are_reproducible() {
    let mut cfg = noisy(ErrorSection::default());
    cfg.experiment.seed = 7;
    let a = run_sweep(&cfg, None).unwrap();
    assert_eq!(a, run_sweep(&cfg, None).unwrap());
    cfg.experiment.seed = 8;
    assert_ne!(a, run_sweep(&cfg, None).unwrap());
}

#[test]
fn without_errors_both_protocols_agree() {
    let cfg = noisy(ErrorSection::none());
    let two = run_sweep(&cfg, None).unwrap();
    let inline = measurement_protocol_inline(&cfg, None).unwrap();
    assert_eq!(two, inline);
    assert!(max_kappa(&two) < 1e-12);
}

#[test]
fn inline_reference_cancels_pps_fluctuations() {
    let cfg = noisy(pps_only());
    assert!(max_kappa(&run_sweep(&cfg, None).unwrap()) > 1e-3);
    assert!(max_kappa(&measurement_protocol_inline(&cfg, None).unwrap()) < 1e-12);
    let mut ideal = cfg.clone();
    ideal.experiment.mode = Mode::Ideal;
    assert!(measurement_protocol_inline(&ideal, None).is_err());
}

#[test]
fn shared_reference_leaves_kappa_scale_invariant() {
    let mut cfg = noisy(pps_only());
    cfg.experiment.reference = ReferenceMode::Shared;
    assert_eq!(cfg.experiment.protocol, Protocol::TwoExp);
    let recs = run_sweep(&cfg, None).unwrap();
    assert!(max_kappa(&recs) < 1e-12);
    // the probabilities themselves are still off by the common factor
    assert!(max_born_deviation(&cfg, &recs) > 1e-4);
}

#[test]
fn missing_pulse_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(PulseLibrary::load(dir.path()), Err(Error::MissingPulse(_))));
}
