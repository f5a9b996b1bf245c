// SPDX-License-Identifier: Apache-2.0

//! System description: energy-basis Hamiltonian, dipole coupling, target
//! gate on the relevant subspace, time grid, control field and the two
//! initial-state families used by the state-to-state objective.
//!
//! Units are reduced with ħ = 1. The basis `|k⟩` is the eigenbasis of the
//! free Hamiltonian, so `H₀ = diag(E)`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Tolerance for the Hermiticity, zero-diagonal and unitarity invariants.
pub const STRUCTURE_TOL: f64 = 1e-12;

/// An M-level system driven through a single dipole coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    energies: Vec<f64>,
    dipole: CMatrix,
    relevant_dim: usize,
}

impl SystemModel {
    /// Builds a model after checking shapes. Physical invariants are left to
    /// [`validate_model`] so a caller can see every violation at once.
    pub fn new(energies: Vec<f64>, dipole: CMatrix, relevant_dim: usize) -> Result<Self> {
        let m = energies.len();
        if m == 0 {
            return Err(Error::Dimension("model needs at least one level".into()));
        }
        if dipole.nrows() != m || dipole.ncols() != m {
            return Err(Error::Dimension(format!(
                "dipole is {}x{}, expected {m}x{m}",
                dipole.nrows(),
                dipole.ncols()
            )));
        }
        Ok(Self {
            energies,
            dipole,
            relevant_dim,
        })
    }

    /// M
    pub fn level_count(&self) -> usize {
        self.energies.len()
    }

    /// N
    pub fn relevant_dim(&self) -> usize {
        self.relevant_dim
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn dipole(&self) -> &CMatrix {
        &self.dipole
    }
}

/// One failed invariant, with enough context to find the offending entry.
/// Indices are 1-based to match the level labels `|1⟩..|M⟩`.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    RelevantDimZero,
    RelevantDimExceedsLevels { n: usize, m: usize },
    NonFiniteEnergy { k: usize },
    NonHermitianDipole { j: usize, k: usize, deviation: f64 },
    NonzeroDipoleDiagonal { k: usize, magnitude: f64 },
    NonFiniteDipole { j: usize, k: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RelevantDimZero => write!(f, "N must be at least 1"),
            Violation::RelevantDimExceedsLevels { n, m } => write!(f, "N exceeds M ({n} > {m})"),
            Violation::NonFiniteEnergy { k } => write!(f, "non-finite energy at k={k}"),
            Violation::NonHermitianDipole { j, k, deviation } => write!(
                f,
                "non-Hermitian dipole at ({j},{k}): |mu_jk - conj(mu_kj)| = {deviation:e}"
            ),
            Violation::NonzeroDipoleDiagonal { k, magnitude } => {
                write!(f, "nonzero diagonal at k={k} (|mu_kk| = {magnitude:e})")
            }
            Violation::NonFiniteDipole { j, k } => write!(f, "non-finite dipole entry at ({j},{k})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Non-fatal findings, e.g. energies not supplied in ascending order.
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }

    /// True if any violation message contains `needle`.
    pub fn mentions(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.to_string().contains(needle))
    }
}

/// Checks every model invariant and returns all violations found.
pub fn validate_model(model: &SystemModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let m = model.level_count();
    let n = model.relevant_dim;
    if n == 0 {
        report.violations.push(Violation::RelevantDimZero);
    }
    if n > m {
        report
            .violations
            .push(Violation::RelevantDimExceedsLevels { n, m });
    }
    for (k, e) in model.energies.iter().enumerate() {
        if !e.is_finite() {
            report.violations.push(Violation::NonFiniteEnergy { k: k + 1 });
        }
    }
    if model.energies.windows(2).any(|w| w[0] > w[1]) {
        report
            .warnings
            .push("energies are not sorted ascending".to_string());
    }

    let mu = &model.dipole;
    for j in 0..m {
        for k in 0..m {
            let v = mu[(j, k)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                report
                    .violations
                    .push(Violation::NonFiniteDipole { j: j + 1, k: k + 1 });
            }
        }
    }
    for j in 0..m {
        let d = mu[(j, j)].norm();
        if d > STRUCTURE_TOL {
            report.violations.push(Violation::NonzeroDipoleDiagonal {
                k: j + 1,
                magnitude: d,
            });
        }
        for k in (j + 1)..m {
            let dev = (mu[(j, k)] - mu[(k, j)].conj()).norm();
            if dev > STRUCTURE_TOL {
                report.violations.push(Violation::NonHermitianDipole {
                    j: j + 1,
                    k: k + 1,
                    deviation: dev,
                });
            }
        }
    }
    report
}

/// The N×N block of the target gate in the energy basis. The complement
/// block of the full-space operator is arbitrary and never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGate {
    block: CMatrix,
}

impl TargetGate {
    pub fn new(block: CMatrix) -> Result<Self> {
        if block.nrows() != block.ncols() || block.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "target block must be square and non-empty, got {}x{}",
                block.nrows(),
                block.ncols()
            )));
        }
        let target = Self { block };
        let err = target.unitarity_error();
        if !(err <= STRUCTURE_TOL) {
            return Err(Error::InvalidModel(vec![format!(
                "target is not unitary: max|O^dag O - I| = {err:e}"
            )]));
        }
        Ok(target)
    }

    /// `max |O†O − I|` over entries.
    pub fn unitarity_error(&self) -> f64 {
        let n = self.block.nrows();
        let gram = self.block.adjoint() * &self.block;
        max_abs_diff(&gram, &CMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.block.nrows()
    }

    pub fn block(&self) -> &CMatrix {
        &self.block
    }

    /// Right-multiplies by a diagonal unitary, giving the target `Ô·D`.
    pub fn times_diagonal(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} phases for a {}-dimensional target",
                phases.len(),
                self.dim()
            )));
        }
        let mut block = self.block.clone();
        for (l, theta) in phases.iter().enumerate() {
            let phase = C64::from_polar(1.0, *theta);
            for z in block.column_mut(l).iter_mut() {
                *z *= phase;
            }
        }
        Ok(Self { block })
    }

    /// Columns `Ô|k⟩`, k = 1..N, zero-padded to length `m` (M×N matrix).
    pub fn padded_columns(&self, m: usize) -> CMatrix {
        let n = self.dim();
        let mut out = CMatrix::zeros(m, n);
        out.view_mut((0, 0), (n, n)).copy_from(&self.block);
        out
    }

    /// Applies `Ô` to vectors supported on the relevant subspace
    /// (the columns of `states`, each of length M).
    pub fn apply_padded(&self, states: &CMatrix) -> CMatrix {
        let n = self.dim();
        let m = states.nrows();
        let rel = states.rows(0, n);
        let mut out = CMatrix::zeros(m, states.ncols());
        out.rows_mut(0, n).copy_from(&(&self.block * rel));
        out
    }
}

/// Uniform grid on `[0, T]` with `steps` intervals; field samples live at
/// interval midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    #[serde(rename = "T")]
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Config(format!("horizon T must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Config("step count must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Midpoint of interval `j` (0-based), i.e. `(j + 1/2)·dt`.
    pub fn midpoint(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dt()
    }

    /// Node time `j·dt`, j = 0..=steps.
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn midpoints(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.steps).map(move |j| self.midpoint(j))
    }
}

/// Real piecewise-constant field; `samples[j]` is the value on interval `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlField {
    samples: Vec<f64>,
}

impl ControlField {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(j) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("field sample {j} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(steps: usize) -> Self {
        Self {
            samples: vec![0.0; steps],
        }
    }

    /// Samples `f` at every interval midpoint of `grid`.
    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.midpoints().map(f).collect())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `Σ_j ε_j²·dt`
    pub fn fluence(&self, dt: f64) -> f64 {
        self.samples.iter().map(|e| e * e).sum::<f64>() * dt
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|e| e * factor).collect(),
        }
    }

    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if self.samples.len() != grid.steps() {
            return Err(Error::Dimension(format!(
                "field has {} samples but grid has {} steps",
                self.samples.len(),
                grid.steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BasisMode {
    /// `|1⟩..|N⟩`
    Orthonormal,
    /// `|1⟩..|N−1⟩` plus the uniform superposition `Σ_k |k⟩/√N`.
    PhaseCorrected,
}

impl fmt::Display for BasisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisMode::Orthonormal => f.write_str("orthonormal"),
            BasisMode::PhaseCorrected => f.write_str("phase_corrected"),
        }
    }
}

/// Initial states `φ_il` for the state-to-state objective, stored as the
/// columns of an M×N matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialBasis {
    mode: BasisMode,
    states: CMatrix,
}

impl InitialBasis {
    pub fn build(mode: BasisMode, n: usize, m: usize) -> Result<Self> {
        if n == 0 || n > m {
            return Err(Error::Dimension(format!(
                "basis needs 1 <= N <= M, got N={n}, M={m}"
            )));
        }
        let mut states = CMatrix::zeros(m, n);
        for l in 0..n {
            states[(l, l)] = C64::new(1.0, 0.0);
        }
        if mode == BasisMode::PhaseCorrected {
            let amp = C64::new(1.0 / (n as f64).sqrt(), 0.0);
            for k in 0..n {
                states[(k, n - 1)] = amp;
            }
        }
        Ok(Self { mode, states })
    }

    pub fn mode(&self) -> BasisMode {
        self.mode
    }

    pub fn states(&self) -> &CMatrix {
        &self.states
    }

    pub fn state(&self, l: usize) -> CVector {
        self.states.column(l).into_owned()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    /// The N×N coefficient block of the states on `|1⟩..|N⟩`.
    pub fn relevant_block(&self) -> CMatrix {
        let n = self.states.ncols();
        self.states.rows(0, n).into_owned()
    }

    /// Final states `φ_fl = Ô·φ_il` (M×N).
    pub fn final_states(&self, target: &TargetGate) -> CMatrix {
        target.apply_padded(&self.states)
    }
}

/// Spectrum-average phase `(Σ_k E_k)·T / M` before range reduction.
pub fn global_phase_phi1_unreduced(model: &SystemModel, horizon: f64) -> f64 {
    model.energies.iter().sum::<f64>() * horizon / model.level_count() as f64
}

/// Spectrum-average phase `(Σ_k E_k)·T / M`, reduced to `(−π, π]`.
pub fn global_phase_phi1(model: &SystemModel, horizon: f64) -> f64 {
    wrap_angle(global_phase_phi1_unreduced(model, horizon))
}

/// Reduces an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = theta.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    r
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
