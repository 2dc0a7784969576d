//! Slit-pattern encoding in a four-level system, Born-rule detection
//! probabilities and the two- and three-path interference terms.
//!
//! Level `|j⟩` (j = 1, 2, 3) stands for path j; `|0⟩` collects the amplitude
//! lost on blocked paths. On the two-qubit register `|0⟩..|3⟩` are
//! `|00⟩, |01⟩, |10⟩, |11⟩`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::UnitaryOp;
use crate::error::{Error, Result};
use crate::linalg::{self, ZERO};
use crate::spin_system::LevelGaps;

/// Denominator below which κ is reported as undefined.
pub const KAPPA_FLOOR: f64 = 1e-9;

const INV_SQRT3: f64 = 0.577_350_269_189_625_8;

/// Slit pattern `γ₁γ₂γ₃`; bit k is 1 when path k is open. The numeric value
/// reads the label as a binary number, so `SlitConfig(0b110)` is "110".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlitConfig(u8);

impl SlitConfig {
    pub const BLOCKED: SlitConfig = SlitConfig(0b000);
    pub const ALL_OPEN: SlitConfig = SlitConfig(0b111);
    /// The two-path configurations entering the κ denominator.
    pub const PAIRS: [SlitConfig; 3] = [SlitConfig(0b110), SlitConfig(0b101), SlitConfig(0b011)];

    pub fn new(bits: u8) -> Result<Self> {
        if bits > 0b111 {
            return Err(Error::InvalidConfig(format!("slit pattern {bits} has more than 3 bits")));
        }
        Ok(SlitConfig(bits))
    }

    /// All eight patterns in canonical order 000, 001, …, 111.
    pub fn all() -> impl Iterator<Item = SlitConfig> {
        (0u8..8).map(SlitConfig)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Whether path `k` (1-based) is open.
    pub fn is_open(self, k: usize) -> bool {
        debug_assert!((1..=3).contains(&k));
        (self.0 >> (3 - k)) & 1 == 1
    }

    pub fn open_count(self) -> u32 {
        self.0.count_ones()
    }

    /// Sign of this configuration in the three-path sum.
    pub fn sorkin_sign(self) -> f64 {
        if (3 - self.open_count()) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for SlitConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03b}", self.0)
    }
}

impl FromStr for SlitConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 3 || !s.chars().all(|c| c == '0' || c == '1') {
            return Err(Error::InvalidConfig(format!("bad slit pattern {s:?}")));
        }
        Ok(SlitConfig(u8::from_str_radix(s, 2).expect("checked binary digits")))
    }
}

impl Serialize for SlitConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SlitConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `β|0⟩ + Σ_k γ_k/√3 |k⟩` with real `β ≥ 0` fixed by normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlitState {
    pub beta: f64,
    pub amps: [f64; 3],
}

impl SlitState {
    pub fn amplitudes(&self) -> [Complex64; 4] {
        [
            linalg::c(self.beta, 0.0),
            linalg::c(self.amps[0], 0.0),
            linalg::c(self.amps[1], 0.0),
            linalg::c(self.amps[2], 0.0),
        ]
    }

    pub fn norm(&self) -> f64 {
        (self.beta * self.beta + self.amps.iter().map(|a| a * a).sum::<f64>()).sqrt()
    }
}

pub fn slit_state(gamma: SlitConfig) -> SlitState {
    let amps = [1, 2, 3].map(|k| if gamma.is_open(k) { INV_SQRT3 } else { 0.0 });
    let beta = (1.0 - f64::from(gamma.open_count()) / 3.0).max(0.0).sqrt();
    SlitState { beta, amps }
}

/// `Σ_j exp(-iΔ_j τ)/√3 |j⟩`, the all-open state after free evolution.
pub fn evolved_three_path(gaps: &LevelGaps, tau: f64) -> [Complex64; 4] {
    let mut out = [ZERO; 4];
    for j in 0..3 {
        out[j + 1] = Complex64::from_polar(INV_SQRT3, -gaps.delta[j] * tau);
    }
    out
}

pub fn born_probability(gamma: SlitConfig, gaps: &LevelGaps, tau: f64) -> f64 {
    let bra = slit_state(gamma).amplitudes();
    let ket = evolved_three_path(gaps, tau);
    let overlap: Complex64 = bra.iter().zip(&ket).map(|(b, k)| b.conj() * k).sum();
    overlap.norm_sqr()
}

/// Detection probabilities of the eight slit patterns at one delay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathProbabilities {
    pub tau: f64,
    p: [Option<f64>; 8],
}

impl PathProbabilities {
    pub fn empty(tau: f64) -> Self {
        PathProbabilities { tau, p: [None; 8] }
    }

    pub fn from_array(tau: f64, p: [f64; 8]) -> Self {
        PathProbabilities {
            tau,
            p: p.map(Some),
        }
    }

    pub fn analytic(gaps: &LevelGaps, tau: f64) -> Self {
        let mut out = Self::empty(tau);
        for g in SlitConfig::all() {
            out.set(g, born_probability(g, gaps, tau));
        }
        out
    }

    pub fn set(&mut self, gamma: SlitConfig, p: f64) {
        self.p[gamma.index()] = Some(p);
    }

    pub fn get(&self, gamma: SlitConfig) -> Result<f64> {
        self.p[gamma.index()].ok_or_else(|| Error::MissingConfiguration(gamma.to_string()))
    }

    pub fn is_complete(&self) -> bool {
        self.p.iter().all(Option::is_some)
    }

    /// Every present probability multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        PathProbabilities {
            tau: self.tau,
            p: self.p.map(|v| v.map(|x| x * c)),
        }
    }

    /// Presentation-only copy with every probability clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        PathProbabilities {
            tau: self.tau,
            p: self.p.map(|v| v.map(|x| x.clamp(0.0, 1.0))),
        }
    }
}

/// `P₁₁₁ − P₁₁₀ − P₁₀₁ − P₀₁₁ + P₁₀₀ + P₀₁₀ + P₀₀₁ − P₀₀₀`.
pub fn three_path_interference(p: &PathProbabilities) -> Result<f64> {
    SlitConfig::all().try_fold(0.0, |acc, g| Ok(acc + g.sorkin_sign() * p.get(g)?))
}

/// `P_pair − P_a − P_b + P₀₀₀` where `a`, `b` are the single paths in `pair`.
pub fn two_path_interference(pair: SlitConfig, p: &PathProbabilities) -> Result<f64> {
    if pair.open_count() != 2 {
        return Err(Error::InvalidConfig(format!("{pair} is not a two-path pattern")));
    }
    let bits = pair.bits();
    let low = bits & bits.wrapping_neg();
    let high = bits ^ low;
    Ok(p.get(pair)? - p.get(SlitConfig(high))? - p.get(SlitConfig(low))?
        + p.get(SlitConfig::BLOCKED)?)
}

/// Interference terms and κ at one delay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterferenceRecord {
    pub tau: f64,
    pub i123: f64,
    /// Two-path terms for 110, 101, 011.
    pub i_pairs: [f64; 3],
    /// `None` when the denominator is below the floor.
    pub kappa: Option<f64>,
}

pub fn interference_record(p: &PathProbabilities, floor: f64) -> Result<InterferenceRecord> {
    let i123 = three_path_interference(p)?;
    let mut i_pairs = [0.0; 3];
    for (slot, pair) in i_pairs.iter_mut().zip(SlitConfig::PAIRS) {
        *slot = two_path_interference(pair, p)?;
    }
    let denom: f64 = i_pairs.iter().map(|v| v.abs()).sum();
    let kappa = (denom > floor).then(|| i123 / denom);
    Ok(InterferenceRecord {
        tau: p.tau,
        i123,
        i_pairs,
        kappa,
    })
}

/// `I(τ) / Σ|I_pair(τ)|`, or `None` when the denominator is below [`KAPPA_FLOOR`].
pub fn kappa(p: &PathProbabilities) -> Result<Option<f64>> {
    Ok(interference_record(p, KAPPA_FLOOR)?.kappa)
}

/// Ideal gates on the two computation qubits.
#[derive(Clone, Debug)]
pub struct TargetUnitaries {
    /// First column is `|ψ¹¹¹⟩`.
    pub u_hat: UnitaryOp,
    /// Indexed by [`SlitConfig::index`]; first row of each is `⟨ψ^γ|`.
    pub v_hat: Vec<UnitaryOp>,
}

impl TargetUnitaries {
    pub fn v(&self, gamma: SlitConfig) -> &UnitaryOp {
        &self.v_hat[gamma.index()]
    }
}

/// The preparation gate `Û` and the eight analysis gates `V̂^γ`, completed to
/// full unitaries by Gram–Schmidt against the standard basis in index order.
///
/// The targets do not depend on the level gaps.
pub fn target_unitaries() -> TargetUnitaries {
    let u_hat = UnitaryOp::new_unchecked(linalg::complete_to_unitary(
        &slit_state(SlitConfig::ALL_OPEN).amplitudes(),
    ));
    let v_hat = SlitConfig::all()
        .map(|g| {
            let w = linalg::complete_to_unitary(&slit_state(g).amplitudes());
            UnitaryOp::new_unchecked(w.adjoint())
        })
        .collect();
    TargetUnitaries { u_hat, v_hat }
}
