// SPDX-License-Identifier: Apache-2.0

//! Shipped desk-scale systems and target gates.

use std::f64::consts::FRAC_1_SQRT_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{CMatrix, ControlField, SystemModel, TargetGate, TimeGrid, C64};

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Two levels, `E = (0, ω)`, `μ = σ_x`, `N = M = 2`.
pub fn two_level(omega: f64) -> SystemModel {
    let mu = CMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(1.0), re(0.0)]);
    SystemModel::new(vec![0.0, omega], mu, 2).expect("static shape")
}

/// A qubit in the two lowest levels of an 8-level anharmonic ladder.
///
/// `E_k = k − 0.05·k(k−1)` and nearest-neighbour couplings `μ_{k,k+1} = √(k+1)`,
/// so the 1→2 transition sits only 0.1 below the qubit frequency.
pub fn embedded_qubit() -> SystemModel {
    let m = 8;
    let energies = (0..m)
        .map(|k| {
            let k = k as f64;
            k - 0.05 * k * (k - 1.0)
        })
        .collect();
    let mut mu = CMatrix::zeros(m, m);
    for k in 0..m - 1 {
        let v = re(((k + 1) as f64).sqrt());
        mu[(k, k + 1)] = v;
        mu[(k + 1, k)] = v;
    }
    SystemModel::new(energies, mu, 2).expect("static shape")
}

/// Random ladder with sorted energies and a complex tridiagonal dipole.
pub fn random_tridiagonal(m: usize, n: usize, seed: u64) -> SystemModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut energies: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..(m as f64))).collect();
    energies.sort_by(f64::total_cmp);
    let mut mu = CMatrix::zeros(m, m);
    for k in 0..m.saturating_sub(1) {
        let v = C64::new(rng.random_range(0.2..1.5), rng.random_range(-0.5..0.5));
        mu[(k, k + 1)] = v;
        mu[(k + 1, k)] = v.conj();
    }
    SystemModel::new(energies, mu, n).expect("static shape")
}

/// Random dense Hermitian dipole with zero diagonal.
pub fn random_dense(m: usize, n: usize, seed: u64) -> SystemModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut energies: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
    energies.sort_by(f64::total_cmp);
    let mut mu = CMatrix::zeros(m, m);
    for j in 0..m {
        for k in (j + 1)..m {
            let v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            mu[(j, k)] = v;
            mu[(k, j)] = v.conj();
        }
    }
    SystemModel::new(energies, mu, n).expect("static shape")
}

/// Seeded field with independent uniform samples in `[−amplitude, amplitude]`.
pub fn random_field(grid: &TimeGrid, amplitude: f64, seed: u64) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ControlField::new((0..grid.steps()).map(|_| rng.random_range(-amplitude..amplitude)).collect())
        .expect("finite samples")
}

/// Seeded random unitary, the Q factor of a random complex matrix.
pub fn random_unitary(n: usize, seed: u64) -> TargetGate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let q = a.qr().q();
    TargetGate::new(q).expect("Q factor is unitary")
}

pub fn not_gate() -> TargetGate {
    TargetGate::new(CMatrix::from_row_slice(2, 2, &[re(0.0), re(1.0), re(1.0), re(0.0)])).expect("unitary")
}

pub fn hadamard() -> TargetGate {
    let s = FRAC_1_SQRT_2;
    TargetGate::new(CMatrix::from_row_slice(2, 2, &[re(s), re(s), re(s), re(-s)])).expect("unitary")
}

/// `diag(1, −1)`
pub fn phase_flip() -> TargetGate {
    TargetGate::new(CMatrix::from_row_slice(2, 2, &[re(1.0), re(0.0), re(0.0), re(-1.0)])).expect("unitary")
}

pub fn identity(n: usize) -> TargetGate {
    TargetGate::new(CMatrix::identity(n, n)).expect("unitary")
}

/// `diag(+1, −1, +1, …)` of size `n`.
pub fn alternating_diagonal(n: usize) -> TargetGate {
    let d = (0..n).map(|k| re(if k % 2 == 0 { 1.0 } else { -1.0 }));
    TargetGate::new(CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, d))).expect("unitary")
}

/// Looks up a shipped gate by name.
pub fn gate_by_name(name: &str) -> Option<TargetGate> {
    match name {
        "not" => Some(not_gate()),
        "hadamard" => Some(hadamard()),
        "phase_flip" => Some(phase_flip()),
        "identity" => Some(identity(2)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    #[test]
    fn shipped_models_are_valid() {
        for model in [
            two_level(1.0),
            embedded_qubit(),
            random_tridiagonal(32, 2, 5),
            random_dense(6, 3, 9),
        ] {
            let report = validate_model(&model);
            assert!(report.is_valid(), "{:?}", report.messages());
            assert!(report.warnings.is_empty());
        }
    }

    #[test]
    fn embedded_ladder_energies() {
        let e = embedded_qubit().energies().to_vec();
        let want = [0.0, 1.0, 1.9, 2.7, 3.4, 4.0, 4.5, 4.9];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gates_lookup() {
        for name in ["not", "hadamard", "phase_flip", "identity"] {
            assert!(gate_by_name(name).is_some());
        }
        assert!(gate_by_name("cnot").is_none());
        assert_eq!(alternating_diagonal(3).block()[(1, 1)], re(-1.0));
        assert!(random_unitary(5, 3).unitarity_error() < 1e-13);
    }
}
