//! Spin register description and laboratory-frame Hamiltonians.
//!
//! Configuration values are in Hz; every Hamiltonian returned here is in rad/s.
//! The `2π` conversion happens in [`build_hamiltonian`] and nowhere else.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, ZERO};

/// Largest register the dense simulator accepts.
pub const MAX_DENSE_SPINS: usize = 10;

/// A weak-coupling warning is raised when `|ν_i - ν_j| / J_ij` drops below this.
pub const WEAK_COUPLING_RATIO: f64 = 10.0;

fn default_species() -> String {
    "13C".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spin {
    pub label: String,
    /// Nuclear species; spins of one species share an RF channel.
    #[serde(default = "default_species")]
    pub species: String,
    /// Offset from the transmitter frequency.
    pub offset_hz: f64,
    pub t1_s: f64,
    pub t2_s: f64,
}

impl Spin {
    pub fn new(label: &str, species: &str, offset_hz: f64, t1_s: f64, t2_s: f64) -> Self {
        Spin {
            label: label.to_string(),
            species: species.to_string(),
            offset_hz,
            t1_s,
            t2_s,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CouplingModel {
    /// Secular `Z_i Z_j` coupling only.
    #[default]
    Weak,
    /// Adds the `X_i X_j + Y_i Y_j` exchange terms between like spins.
    Strong,
}

/// On-disk form: `spins[{label, offset_hz, t1_s, t2_s}]`, `j_hz[[i, j, value]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystemConfig {
    pub spins: Vec<Spin>,
    #[serde(default)]
    pub j_hz: Vec<(usize, usize, f64)>,
}

/// Ordered spin register with a symmetric table of J couplings in Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinSystem {
    spins: Vec<Spin>,
    j: Vec<Vec<f64>>,
}

impl SpinSystem {
    pub fn new(spins: Vec<Spin>, couplings: &[(usize, usize, f64)]) -> Result<Self> {
        if spins.is_empty() {
            return Err(Error::InvalidSystem("no spins".into()));
        }
        let n = spins.len();
        let mut j = vec![vec![0.0; n]; n];
        for &(a, b, value) in couplings {
            if a >= n || b >= n {
                return Err(Error::InvalidSystem(format!(
                    "coupling ({a}, {b}) refers to a missing spin"
                )));
            }
            if a == b {
                return Err(Error::InvalidSystem(format!("self-coupling on spin {a}")));
            }
            if !value.is_finite() {
                return Err(Error::InvalidSystem(format!("coupling ({a}, {b}) is not finite")));
            }
            j[a][b] = value;
            j[b][a] = value;
        }
        Ok(SpinSystem { spins, j })
    }

    pub fn from_config(cfg: &SpinSystemConfig) -> Result<Self> {
        Self::new(cfg.spins.clone(), &cfg.j_hz)
    }

    pub fn to_config(&self) -> SpinSystemConfig {
        let mut j_hz = Vec::new();
        for a in 0..self.len() {
            for b in a + 1..self.len() {
                if self.j[a][b] != 0.0 {
                    j_hz.push((a, b, self.j[a][b]));
                }
            }
        }
        SpinSystemConfig {
            spins: self.spins.clone(),
            j_hz,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SpinSystemConfig = serde_json::from_str(&text)?;
        Self::from_config(&cfg)
    }

    /// Representative three-spin register shaped like the TTMSA molecule
    /// (two ¹³C computation spins, one ¹H probe as the last slot).
    ///
    /// The numbers are synthetic: only their orders of magnitude follow the
    /// real molecule (carbon offset difference ≈ 20 J).
    pub fn ttmsa_synthetic() -> Self {
        SpinSystem::new(
            vec![
                Spin::new("C1", "13C", 500.0, 5.0, 0.8),
                Spin::new("C2", "13C", -500.0, 4.5, 0.7),
                Spin::new("H", "1H", 0.0, 3.0, 1.2),
            ],
            &[(0, 1, 50.0), (0, 2, 230.0), (1, 2, 45.0)],
        )
        .expect("built-in system is well formed")
    }

    /// The two carbons of [`SpinSystem::ttmsa_synthetic`].
    pub fn two_spin_default() -> Self {
        Self::ttmsa_synthetic()
            .subsystem(&[0, 1])
            .expect("indices exist")
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }

    pub fn spins(&self) -> &[Spin] {
        &self.spins
    }

    pub fn spin(&self, i: usize) -> &Spin {
        &self.spins[i]
    }

    pub fn j_hz(&self, a: usize, b: usize) -> f64 {
        self.j[a][b]
    }

    /// Returns a copy with J between `a` and `b` replaced.
    pub fn with_coupling(&self, a: usize, b: usize, value: f64) -> Self {
        let mut out = self.clone();
        out.j[a][b] = value;
        out.j[b][a] = value;
        out
    }

    /// Returns a copy with every offset and coupling multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.spins {
            s.offset_hz *= factor;
        }
        for row in &mut out.j {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out
    }

    /// Restriction to the listed spins, in the listed order.
    pub fn subsystem(&self, indices: &[usize]) -> Result<Self> {
        let mut couplings = Vec::new();
        for (na, &a) in indices.iter().enumerate() {
            if a >= self.len() {
                return Err(Error::InvalidSystem(format!("no spin {a}")));
            }
            for (nb, &b) in indices.iter().enumerate().skip(na + 1) {
                if b >= self.len() {
                    return Err(Error::InvalidSystem(format!("no spin {b}")));
                }
                couplings.push((na, nb, self.j[a][b]));
            }
        }
        let spins = indices.iter().map(|&i| self.spins[i].clone()).collect();
        SpinSystem::new(spins, &couplings)
    }

    /// Distinct species in first-appearance order.
    pub fn species(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.spins {
            if !out.contains(&s.species) {
                out.push(s.species.clone());
            }
        }
        out
    }

    pub fn spins_of_species<'a>(&'a self, species: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.spins
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.species == species)
            .map(|(i, _)| i)
    }
}

/// Laboratory Hamiltonian in rad/s.
///
/// Weak model: `Σ π ν_i Z_i + Σ_{i<j} (π/2) J_ij Z_i Z_j`. The strong model adds
/// `(π/2) J_ij (X_i X_j + Y_i Y_j)` for pairs of the same species; heteronuclear
/// flip-flop terms are removed by the separate rotating frames.
pub fn build_hamiltonian(system: &SpinSystem, model: CouplingModel) -> Result<CMat> {
    let n = system.len();
    if n > MAX_DENSE_SPINS {
        return Err(Error::TooManySpins {
            spins: n,
            max: MAX_DENSE_SPINS,
        });
    }
    let dim = 1usize << n;
    let mut diag = vec![0.0; dim];
    let z: Vec<Vec<f64>> = (0..n).map(|s| linalg::z_diagonal(s, n)).collect();
    for (i, spin) in system.spins.iter().enumerate() {
        let w = PI * spin.offset_hz;
        for (d, zi) in diag.iter_mut().zip(&z[i]) {
            *d += w * zi;
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            let w = 0.5 * PI * system.j[a][b];
            if w == 0.0 {
                continue;
            }
            for k in 0..dim {
                diag[k] += w * z[a][k] * z[b][k];
            }
        }
    }
    let mut h = CMat::from_fn(dim, dim, |r, c| {
        if r == c {
            linalg::c(diag[r], 0.0)
        } else {
            ZERO
        }
    });
    if model == CouplingModel::Strong {
        let x = linalg::pauli_x();
        let y = linalg::pauli_y();
        for a in 0..n {
            for b in a + 1..n {
                let w = 0.5 * PI * system.j[a][b];
                if w == 0.0 || system.spins[a].species != system.spins[b].species {
                    continue;
                }
                let xx = linalg::embed(&x, a, n) * linalg::embed(&x, b, n);
                let yy = linalg::embed(&y, a, n) * linalg::embed(&y, b, n);
                h += (xx + yy).scale(w);
            }
        }
    }
    Ok(h)
}

/// Energy gaps `Δ_j = E_j - E_0` (rad/s) of the four-level encoding with
/// `|1⟩ ≡ |01⟩`, `|2⟩ ≡ |10⟩`, `|3⟩ ≡ |11⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelGaps {
    pub delta: [f64; 3],
}

impl LevelGaps {
    pub fn new(delta: [f64; 3]) -> Self {
        LevelGaps { delta }
    }

    pub fn from_hz(hz: [f64; 3]) -> Self {
        LevelGaps {
            delta: hz.map(|v| 2.0 * PI * v),
        }
    }

    pub fn hz(&self) -> [f64; 3] {
        self.delta.map(|v| v / (2.0 * PI))
    }
}

/// Weak-coupling level gaps of a two-spin system.
pub fn level_gaps(system: &SpinSystem) -> Result<LevelGaps> {
    if system.len() != 2 {
        return Err(Error::InvalidSystem(format!(
            "level gaps need exactly 2 spins, got {}",
            system.len()
        )));
    }
    let nu1 = system.spins[0].offset_hz;
    let nu2 = system.spins[1].offset_hz;
    let j = system.j[0][1];
    let sign = |bit: u32| if bit == 0 { 1.0 } else { -1.0 };
    let energy = |a: u32, b: u32| 0.5 * nu1 * sign(a) + 0.5 * nu2 * sign(b) + 0.25 * j * sign(a ^ b);
    let e0 = energy(0, 0);
    Ok(LevelGaps::from_hz([
        energy(0, 1) - e0,
        energy(1, 0) - e0,
        energy(1, 1) - e0,
    ]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Violation,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Violation => "violation",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

/// Lists violated invariants and weak-coupling warnings; empty when the system is sound.
pub fn validate_system(system: &SpinSystem) -> Vec<Issue> {
    let mut issues = Vec::new();
    let violation = |m: String| Issue {
        severity: Severity::Violation,
        message: m,
    };
    if system.len() < 2 {
        issues.push(violation(format!(
            "at least 2 spins required, got {}",
            system.len()
        )));
    }
    if system.len() > MAX_DENSE_SPINS {
        issues.push(violation(format!(
            "{} spins exceeds dense limit {}",
            system.len(),
            MAX_DENSE_SPINS
        )));
    }
    for s in &system.spins {
        if !s.offset_hz.is_finite() {
            issues.push(violation(format!("{}: offset is not finite", s.label)));
        }
        if !(s.t1_s > 0.0) {
            issues.push(violation(format!("{}: t1 > 0", s.label)));
        }
        if !(s.t2_s > 0.0) {
            issues.push(violation(format!("{}: t2 > 0", s.label)));
        }
        if s.t2_s > 2.0 * s.t1_s {
            issues.push(violation(format!("{}: t2 ≤ 2·t1", s.label)));
        }
    }
    let n = system.len();
    for a in 0..n {
        for b in a + 1..n {
            let j = system.j[a][b];
            let (sa, sb) = (&system.spins[a], &system.spins[b]);
            if j == 0.0 || sa.species != sb.species {
                continue;
            }
            let ratio = (sa.offset_hz - sb.offset_hz).abs() / j.abs();
            if ratio < WEAK_COUPLING_RATIO {
                issues.push(Issue {
                    severity: Severity::Warning,
                    message: format!(
                        "{}-{}: |Δν|/J = {ratio:.3} < {WEAK_COUPLING_RATIO}, weak-coupling approximation doubtful",
                        sa.label, sb.label
                    ),
                });
            }
        }
    }
    issues
}
