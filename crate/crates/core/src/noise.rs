//! Error models: RF amplitude inhomogeneity and drift, reference-signal
//! fluctuation of the pseudo-pure state, pulse-shape distortion, and gate
//! error injection. Every random draw is a pure function of its seed.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::engine::DensityMatrix;
use crate::error::{Error, Result};
use crate::grape::ControlPulse;
use crate::linalg::{self, CMat};

/// Number of leading register slots that hold the computation qubits.
pub const COMPUTATION_QUBITS: usize = 2;

/// Discrete distribution of multiplicative RF amplitude factors.
#[derive(Clone, Debug, PartialEq)]
pub struct RfEnsemble {
    scale_factors: Vec<f64>,
    weights: Vec<f64>,
}

impl RfEnsemble {
    pub fn new(scale_factors: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if scale_factors.is_empty() || scale_factors.len() != weights.len() {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs matching non-empty factors and weights ({} vs {})",
                scale_factors.len(),
                weights.len()
            )));
        }
        if scale_factors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig("ensemble scale factors must be positive".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("ensemble weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!("ensemble weights sum to {total}")));
        }
        Ok(RfEnsemble {
            scale_factors,
            weights,
        })
    }

    pub fn single(scale: f64) -> Result<Self> {
        Self::new(vec![scale], vec![1.0])
    }

    /// Gauss–Hermite quadrature of `1 + σ·N(0,1)` with `points` nodes, from the
    /// eigen-decomposition of the Hermite Jacobi matrix.
    pub fn gaussian(sigma: f64, points: usize) -> Result<Self> {
        if points == 0 || !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gaussian ensemble with sigma {sigma} and {points} points"
            )));
        }
        if sigma == 0.0 || points == 1 {
            return Self::single(1.0);
        }
        let jacobi = DMatrix::from_fn(points, points, |i, j| {
            if i.abs_diff(j) == 1 {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut nodes: Vec<(f64, f64)> = (0..points)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        let (scales, weights) = nodes.iter().map(|&(x, w)| (1.0 + sigma * x, w / total)).unzip();
        Self::new(scales, weights)
    }

    pub fn scale_factors(&self) -> &[f64] {
        &self.scale_factors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Weighted average of `run(scale)` over the ensemble members.
pub fn ensemble_average<F>(ensemble: &RfEnsemble, mut run: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut acc = 0.0;
    for (&s, &w) in ensemble.scale_factors.iter().zip(&ensemble.weights) {
        acc += w * run(s)?;
    }
    Ok(acc)
}

fn default_rf_sigma() -> BTreeMap<String, f64> {
    BTreeMap::from([("13C".to_string(), 0.002), ("1H".to_string(), 0.007)])
}

/// Standard deviations of the per-shot fluctuations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctuationSpec {
    /// Relative RF amplitude drift per species.
    pub rf_sigma: BTreeMap<String, f64>,
    /// Relative fluctuation of the reference magnetization, as realized after clamping.
    pub pps_signal_sigma: f64,
    /// Clamp bound on the reference fluctuation.
    pub pps_signal_worst: f64,
    /// Additive receiver noise on each acquisition, relative to the full reference signal.
    pub acquisition_sigma: f64,
}

impl Default for FluctuationSpec {
    fn default() -> Self {
        FluctuationSpec {
            rf_sigma: default_rf_sigma(),
            pps_signal_sigma: 0.0095,
            pps_signal_worst: 0.02,
            acquisition_sigma: 0.002,
        }
    }
}

impl FluctuationSpec {
    pub fn none() -> Self {
        FluctuationSpec {
            rf_sigma: BTreeMap::new(),
            pps_signal_sigma: 0.0,
            pps_signal_worst: 0.0,
            acquisition_sigma: 0.0,
        }
    }

    /// Reference fluctuation only, at the given realized σ and clamp.
    pub fn pps_only(sigma: f64, worst: f64) -> Self {
        FluctuationSpec {
            pps_signal_sigma: sigma,
            pps_signal_worst: worst,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::InvalidConfig(format!("{name} = {v} must be finite and ≥ 0"));
        for (species, &s) in &self.rf_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(bad(&format!("rf_sigma[{species}]"), s));
            }
        }
        for (name, v) in [
            ("pps_signal_sigma", self.pps_signal_sigma),
            ("pps_signal_worst", self.pps_signal_worst),
            ("acquisition_sigma", self.acquisition_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(name, v));
            }
        }
        if self.pps_signal_worst < self.pps_signal_sigma {
            return Err(Error::InvalidConfig(format!(
                "pps_signal_worst {} is below pps_signal_sigma {}",
                self.pps_signal_worst, self.pps_signal_sigma
            )));
        }
        Ok(())
    }

    /// Width of the Gaussian that, once clamped to `±pps_signal_worst`, has
    /// standard deviation `pps_signal_sigma`. Infinite when the two coincide.
    pub fn underlying_pps_sigma(&self) -> f64 {
        let (target, w) = (self.pps_signal_sigma, self.pps_signal_worst);
        if target == 0.0 {
            return 0.0;
        }
        if target >= w {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (target, target);
        while clamped_normal_std(hi, w) < target {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clamped_normal_std(mid, w) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Standard deviation of `clamp(N(0, s²), -w, w)`.
pub fn clamped_normal_std(s: f64, w: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let z = StdNormal::standard();
    let a = w / s;
    let inside = 2.0 * z.cdf(a) - 1.0;
    let tail = 2.0 * (1.0 - z.cdf(a));
    (s * s * (inside - 2.0 * a * z.pdf(a)) + w * w * tail).sqrt()
}

/// Fluctuations realized for one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct FluctuationDraw {
    pub rf_scale: BTreeMap<String, f64>,
    /// Multiplies the reference magnetization.
    pub pps_factor: f64,
    /// Additive noise on the reference and final acquisitions.
    pub acquisition: [f64; 2],
}

impl FluctuationDraw {
    pub fn rf_scale_for(&self, species: &str) -> f64 {
        self.rf_scale.get(species).copied().unwrap_or(1.0)
    }
}

pub fn sample_fluctuations(spec: &FluctuationSpec, seed: u64) -> FluctuationDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |sigma: f64| -> f64 {
        if sigma == 0.0 {
            0.0
        } else {
            Normal::new(0.0, sigma).expect("finite sigma").sample(&mut rng)
        }
    };
    let rf_scale = spec
        .rf_sigma
        .iter()
        .map(|(species, &s)| (species.clone(), 1.0 + gauss(s)))
        .collect();
    let w = spec.pps_signal_worst;
    let under = spec.underlying_pps_sigma();
    let pps_offset = if under.is_infinite() {
        if gauss(1.0) < 0.0 {
            -w
        } else {
            w
        }
    } else {
        gauss(under).clamp(-w, w)
    };
    let acquisition = [gauss(spec.acquisition_sigma), gauss(spec.acquisition_sigma)];
    FluctuationDraw {
        rf_scale,
        pps_factor: 1.0 + pps_offset,
        acquisition,
    }
}

pub fn apply_rf_scale(pulse: &ControlPulse, scale: f64) -> Result<ControlPulse> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidConfig(format!("RF scale {scale} must be positive")));
    }
    let mut out = pulse.clone();
    for ch in &mut out.channels {
        ch.x.iter_mut().chain(ch.y.iter_mut()).for_each(|v| *v *= scale);
    }
    Ok(out)
}

/// Scales each channel by the factor drawn for its species.
pub fn apply_rf_draw(pulse: &ControlPulse, draw: &FluctuationDraw) -> Result<ControlPulse> {
    let mut out = pulse.clone();
    for ch in &mut out.channels {
        let s = draw.rf_scale_for(&ch.species);
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidConfig(format!("RF scale {s} must be positive")));
        }
        ch.x.iter_mut().chain(ch.y.iter_mut()).for_each(|v| *v *= s);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionSpec {
    /// Impulse response; normalized to unit sum before use.
    pub kernel: Vec<f64>,
    pub residual_gain_error: f64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        DistortionSpec {
            kernel: vec![0.1, 0.8, 0.1],
            residual_gain_error: 0.002,
        }
    }
}

impl DistortionSpec {
    pub fn identity() -> Self {
        DistortionSpec {
            kernel: vec![1.0],
            residual_gain_error: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_empty() || self.kernel.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidConfig("distortion kernel must be non-empty and finite".into()));
        }
        let dc: f64 = self.kernel.iter().sum();
        if dc.abs() < 1e-12 {
            return Err(Error::InvalidConfig("distortion kernel has zero DC gain".into()));
        }
        if !self.residual_gain_error.is_finite() || self.residual_gain_error <= -1.0 {
            return Err(Error::InvalidConfig(format!(
                "residual_gain_error {}",
                self.residual_gain_error
            )));
        }
        Ok(())
    }
}

/// Same-length centered convolution. Samples pushed past either end are
/// folded back onto the edge samples, so a unit-DC kernel keeps the area.
fn convolve_folded(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len() as isize;
    let center = ((kernel.len() - 1) / 2) as isize;
    let mut out = vec![0.0; signal.len()];
    for (i, &x) in signal.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (k, &h) in kernel.iter().enumerate() {
            let mut j = i as isize + k as isize - center;
            // mirror about the half-sample boundary until inside
            while j < 0 || j >= n {
                j = if j < 0 { -1 - j } else { 2 * n - 1 - j };
            }
            out[j as usize] += h * x;
        }
    }
    out
}

pub fn distort(pulse: &ControlPulse, spec: &DistortionSpec) -> Result<ControlPulse> {
    spec.validate()?;
    if spec.kernel.len() == 1 && spec.residual_gain_error == 0.0 {
        return Ok(pulse.clone());
    }
    let dc: f64 = spec.kernel.iter().sum();
    let gain = 1.0 + spec.residual_gain_error;
    let kernel: Vec<f64> = spec.kernel.iter().map(|k| k / dc * gain).collect();
    let mut out = pulse.clone();
    for ch in &mut out.channels {
        ch.x = convolve_folded(&ch.x, &kernel);
        ch.y = convolve_folded(&ch.y, &kernel);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateChannel {
    /// `ρ → (1-p)ρ + p·(1/4 ⊗ Tr_c ρ)` on the computation qubits.
    #[default]
    GlobalDepolarizing,
    /// With probability `p`, a uniformly chosen non-identity two-qubit Pauli.
    RandomPauli,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateErrorSpec {
    pub error_per_gate: f64,
    pub channel: GateChannel,
}

impl Default for GateErrorSpec {
    fn default() -> Self {
        GateErrorSpec {
            error_per_gate: 1e-3,
            channel: GateChannel::GlobalDepolarizing,
        }
    }
}

impl GateErrorSpec {
    pub fn none() -> Self {
        GateErrorSpec {
            error_per_gate: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_per_gate) {
            return Err(Error::InvalidConfig(format!(
                "error_per_gate {} outside [0, 1]",
                self.error_per_gate
            )));
        }
        Ok(())
    }
}

/// Applies the gate-error channel to the computation qubits (the leading
/// register slots). The seed only matters for [`GateChannel::RandomPauli`].
pub fn inject_gate_error(rho: &DensityMatrix, spec: &GateErrorSpec, seed: u64) -> Result<DensityMatrix> {
    spec.validate()?;
    let p = spec.error_per_gate;
    if p == 0.0 {
        return Ok(rho.clone());
    }
    let n = rho.n_qubits();
    let nc = COMPUTATION_QUBITS.min(n);
    let m = rho.matrix();
    let out = match spec.channel {
        GateChannel::GlobalDepolarizing => {
            let dc = 1usize << nc;
            let rest = m.nrows() / dc;
            let mut reduced = CMat::zeros(rest, rest);
            for c in 0..dc {
                reduced += m.view((c * rest, c * rest), (rest, rest));
            }
            let mixed = linalg::kron(&linalg::identity(dc), &reduced).scale(1.0 / dc as f64);
            m.scale(1.0 - p) + mixed.scale(p)
        }
        GateChannel::RandomPauli => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if rng.random::<f64>() >= p {
                return Ok(rho.clone());
            }
            let label = rng.random_range(1..(1usize << (2 * nc)));
            let singles = [linalg::identity(2), linalg::pauli_x(), linalg::pauli_y(), linalg::pauli_z()];
            let mut op = linalg::identity(1);
            for q in 0..nc {
                op = linalg::kron(&op, &singles[(label >> (2 * q)) & 3]);
            }
            op = linalg::kron(&op, &linalg::identity(1 << (n - nc)));
            &op * m * &op
        }
    };
    Ok(rho.with_matrix(out))
}
