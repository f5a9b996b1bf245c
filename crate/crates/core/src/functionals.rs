// SPDX-License-Identifier: Apache-2.0

//! Objectives, field corrections and stationarity residuals.
//!
//! Forward blocks hold `ψ_k(t)` (columns of `U(t,0)` or evolved basis
//! states) and backward blocks hold `χ_k(t)` (`U(t,T)·Ô|k⟩` or evolved final
//! states). The time-local quantities here only read stored blocks.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{CMatrix, ControlField, InitialBasis, SystemModel, TargetGate, TimeGrid, C64};
use crate::propagation::{backward_rows, build_propagators, forward_rows, identity_rows, RowTrajectory};

/// The complex overlap `τ = Σ_k ⟨k|Ô†U(T,0)|k⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauValue {
    pub value: C64,
    pub dim: usize,
}

impl TauValue {
    pub fn fidelity(&self) -> f64 {
        gate_fidelity(self)
    }

    /// The global phase `φ` realized by `U ≈ e^{−iφ}·Ô`, i.e. `−arg τ`.
    pub fn realized_phase(&self) -> f64 {
        -self.value.arg()
    }
}

fn check_same_shape(a: &CMatrix, b: &CMatrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `τ` from the forward columns `U(T)|k⟩`, k = 1..N (an M×N block).
pub fn tau(target: &TargetGate, forward_final: &CMatrix) -> Result<TauValue> {
    let n = target.dim();
    if forward_final.ncols() != n || forward_final.nrows() < n {
        return Err(Error::Dimension(format!(
            "tau needs an Mx{n} block with M >= {n}, got {:?}",
            forward_final.shape()
        )));
    }
    let o = target.block();
    let mut value = C64::new(0.0, 0.0);
    for k in 0..n {
        for j in 0..n {
            value += o[(j, k)].conj() * forward_final[(j, k)];
        }
    }
    Ok(TauValue { value, dim: n })
}

/// `|τ|/N`
pub fn gate_fidelity(tau: &TauValue) -> f64 {
    tau.value.norm() / tau.dim as f64
}

/// `c_l = ⟨ψ_il(T)|φ_fl⟩`
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapFactors(pub Vec<C64>);

impl OverlapFactors {
    pub fn ones(n: usize) -> Self {
        Self(vec![C64::new(1.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn overlap_factors(evolved_final: &CMatrix, final_targets: &CMatrix) -> Result<OverlapFactors> {
    check_same_shape(evolved_final, final_targets, "overlap factors")?;
    Ok(OverlapFactors(
        evolved_final
            .column_iter()
            .zip(final_targets.column_iter())
            .map(|(psi, phi)| psi.dotc(&phi))
            .collect(),
    ))
}

/// `η = Σ_l |⟨ψ_il(T)|φ_fl⟩|²`
pub fn eta(final_targets: &CMatrix, evolved_final: &CMatrix) -> Result<f64> {
    Ok(overlap_factors(evolved_final, final_targets)?
        .0
        .iter()
        .map(|c| c.norm_sqr())
        .sum())
}

/// `Σ_k ⟨χ_k|ψ_k⟩`, conserved along any field and equal to `τ` at `T`.
pub fn overlap_sum(backward: &CMatrix, forward: &CMatrix) -> Result<C64> {
    check_same_shape(backward, forward, "overlap sum")?;
    Ok(backward
        .column_iter()
        .zip(forward.column_iter())
        .map(|(chi, psi)| chi.dotc(&psi))
        .sum())
}

/// `⟨χ_k|μ|ψ_k⟩` for each column pair.
pub fn dipole_pairings(forward: &CMatrix, backward: &CMatrix, dipole: &CMatrix) -> Result<Vec<C64>> {
    check_same_shape(backward, forward, "dipole pairing")?;
    if dipole.ncols() != forward.nrows() {
        return Err(Error::Dimension(format!(
            "dipole is {:?} but states have length {}",
            dipole.shape(),
            forward.nrows()
        )));
    }
    let mu_psi = dipole * forward;
    Ok(backward
        .column_iter()
        .zip(mu_psi.column_iter())
        .map(|(chi, mp)| chi.dotc(&mp))
        .collect())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// `Im Σ_k ⟨k|B(t,T)·μ·U(t,0)|k⟩`
pub fn evolution_integrand(forward: &CMatrix, backward: &CMatrix, dipole: &CMatrix) -> Result<f64> {
    Ok(dipole_pairings(forward, backward, dipole)?
        .iter()
        .map(|z| z.im)
        .sum())
}

/// `Im Σ_l c_l·⟨ψ_fl(t)|μ|ψ_il(t)⟩`
pub fn s2s_integrand(
    forward: &CMatrix,
    backward: &CMatrix,
    overlaps: &OverlapFactors,
    dipole: &CMatrix,
) -> Result<f64> {
    let pairs = dipole_pairings(forward, backward, dipole)?;
    if overlaps.len() != pairs.len() {
        return Err(Error::Dimension(format!(
            "{} overlap factors for {} state pairs",
            overlaps.len(),
            pairs.len()
        )));
    }
    Ok(overlaps
        .0
        .iter()
        .zip(&pairs)
        .map(|(c, m)| (c * m).im)
        .sum())
}

/// Operator-objective correction `Δε(t) = −(1/2λ)·Im Σ_k ⟨k|B(t,T)μU(t,0)|k⟩`.
pub fn delta_eps_evolution(forward: &CMatrix, backward: &CMatrix, dipole: &CMatrix, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(-evolution_integrand(forward, backward, dipole)? / (2.0 * lambda))
}

/// State-to-state correction `Δε_ss(t) = −(1/λ)·Im Σ_l c_l·⟨ψ_fl(t)|μ|ψ_il(t)⟩`.
pub fn delta_eps_s2s(
    forward: &CMatrix,
    backward: &CMatrix,
    overlaps: &OverlapFactors,
    dipole: &CMatrix,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(-s2s_integrand(forward, backward, overlaps, dipole)? / lambda)
}

/// Forward and backward trajectories for one objective on a fixed field.
#[derive(Debug, Clone)]
pub struct SweepPair {
    pub forward: RowTrajectory,
    pub backward: RowTrajectory,
}

/// Trajectories for the operator objective: `U(t,0)|k⟩` and `U(t,T)Ô|k⟩`.
pub fn evolution_sweeps(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
) -> Result<SweepPair> {
    check_target(model, target)?;
    let props = build_propagators(model, field, grid)?;
    let m = model.level_count();
    Ok(SweepPair {
        forward: forward_rows(&props, identity_rows(m, target.dim())),
        backward: backward_rows(&props, target.padded_columns(m)),
    })
}

/// Trajectories for the state-to-state objective: `U(t,0)φ_il` and `U(t,T)φ_fl`.
pub fn s2s_sweeps(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
    basis: &InitialBasis,
) -> Result<SweepPair> {
    check_target(model, target)?;
    check_basis(model, target, basis)?;
    let props = build_propagators(model, field, grid)?;
    Ok(SweepPair {
        forward: forward_rows(&props, basis.states().clone()),
        backward: backward_rows(&props, basis.final_states(target)),
    })
}

pub(crate) fn check_target(model: &SystemModel, target: &TargetGate) -> Result<()> {
    if target.dim() != model.relevant_dim() || target.dim() > model.level_count() {
        return Err(Error::Dimension(format!(
            "target is {n}x{n} but the model has N={}, M={}",
            model.relevant_dim(),
            model.level_count(),
            n = target.dim()
        )));
    }
    Ok(())
}

pub(crate) fn check_basis(model: &SystemModel, target: &TargetGate, basis: &InitialBasis) -> Result<()> {
    if basis.len() != target.dim() || basis.states().nrows() != model.level_count() {
        return Err(Error::Dimension(format!(
            "basis has {} states of length {}, expected {} of length {}",
            basis.len(),
            basis.states().nrows(),
            target.dim(),
            model.level_count()
        )));
    }
    Ok(())
}

/// Residual of both stationarity conditions at every grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProfile {
    pub times: Vec<f64>,
    pub evolution: Vec<f64>,
    pub s2s: Vec<f64>,
}

impl ResidualProfile {
    pub fn max_evolution(&self) -> f64 {
        self.evolution.iter().cloned().fold(0.0, f64::max)
    }

    pub fn max_s2s(&self) -> f64 {
        self.s2s.iter().cloned().fold(0.0, f64::max)
    }

    /// Writes `time,residual_evolution,residual_s2s`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "residual_evolution", "residual_s2s"])?;
        for ((t, e), s) in self.times.iter().zip(&self.evolution).zip(&self.s2s) {
            w.serialize((t, e, s))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn evolution_residuals(model: &SystemModel, sweeps: &SweepPair) -> Result<Vec<f64>> {
    (0..sweeps.forward.node_count())
        .map(|j| {
            evolution_integrand(sweeps.forward.at(j), sweeps.backward.at(j), model.dipole()).map(f64::abs)
        })
        .collect()
}

fn s2s_residuals(model: &SystemModel, sweeps: &SweepPair) -> Result<Vec<f64>> {
    let c = overlap_factors(sweeps.forward.terminal(), sweeps.backward.terminal())?;
    (0..sweeps.forward.node_count())
        .map(|j| s2s_integrand(sweeps.forward.at(j), sweeps.backward.at(j), &c, model.dipole()).map(f64::abs))
        .collect()
}

/// `|Im Σ_k ⟨k|Ô†U†(t,T)μU(t,0)|k⟩|` and
/// `|Im Σ_l ⟨l|U†(T,0)Ô|l⟩·⟨l|Ô†U†(t,T)μU(t,0)|l⟩|` at every node.
pub fn residual_profiles(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
    basis: &InitialBasis,
) -> Result<ResidualProfile> {
    let evo = evolution_sweeps(model, field, grid, target)?;
    let ss = s2s_sweeps(model, field, grid, target, basis)?;
    Ok(ResidualProfile {
        times: (0..=grid.steps()).map(|j| grid.node(j)).collect(),
        evolution: evolution_residuals(model, &evo)?,
        s2s: s2s_residuals(model, &ss)?,
    })
}

/// Max-over-grid residual of the operator-objective stationarity condition.
pub fn residual_evolution(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
) -> Result<f64> {
    let sweeps = evolution_sweeps(model, field, grid, target)?;
    Ok(evolution_residuals(model, &sweeps)?
        .into_iter()
        .fold(0.0, f64::max))
}

/// Max-over-grid residual of the state-to-state stationarity condition.
pub fn residual_s2s(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
    basis: &InitialBasis,
) -> Result<f64> {
    let sweeps = s2s_sweeps(model, field, grid, target, basis)?;
    Ok(s2s_residuals(model, &sweeps)?.into_iter().fold(0.0, f64::max))
}

/// Recovers the columns `U(T)|k⟩`, k = 1..N, from evolved basis states
/// `U(T)φ_l` by inverting the basis coefficient block.
pub fn relevant_columns_from_basis(evolved_basis: &CMatrix, basis: &InitialBasis) -> Result<CMatrix> {
    let inv = basis
        .relevant_block()
        .try_inverse()
        .ok_or_else(|| Error::Precondition("initial basis does not span the relevant subspace".into()))?;
    Ok(evolved_basis * inv)
}

/// Both objectives at the final time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub tau: TauValue,
    pub eta: f64,
}

impl Objectives {
    /// From the relevant columns of `U(T)` (M×N).
    pub fn from_unitary_columns(u_cols: &CMatrix, target: &TargetGate, basis: &InitialBasis) -> Result<Self> {
        let evolved = u_cols * basis.relevant_block();
        Ok(Self {
            tau: tau(target, u_cols)?,
            eta: eta(&basis.final_states(target), &evolved)?,
        })
    }
}

pub fn evaluate_objectives(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
    basis: &InitialBasis,
) -> Result<Objectives> {
    check_target(model, target)?;
    check_basis(model, target, basis)?;
    let props = build_propagators(model, field, grid)?;
    let u_cols = props
        .iter()
        .fold(identity_rows(model.level_count(), target.dim()), |s, p| p.apply(&s));
    Objectives::from_unitary_columns(&u_cols, target, basis)
}

/// Exact gradient `∂Re τ/∂ε_j` of the discretized objective.
///
/// Per interval this is `Re Σ_k ⟨χ_k(t_{j+1})|∂P_j/∂ε|ψ_k(t_j)⟩`, which for
/// small `dt` equals `−dt·Im Σ_k ⟨k|B(t_j)μU(t_j)|k⟩`.
pub fn re_tau_gradient(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
) -> Result<Vec<f64>> {
    check_target(model, target)?;
    let props = build_propagators(model, field, grid)?;
    let m = model.level_count();
    let fwd = forward_rows(&props, identity_rows(m, target.dim()));
    let bwd = backward_rows(&props, target.padded_columns(m));
    Ok(props
        .iter()
        .enumerate()
        .map(|(j, p)| {
            p.field_derivative_overlaps(model.dipole(), bwd.at(j + 1), fwd.at(j))
                .iter()
                .map(|w| w.re)
                .sum()
        })
        .collect())
}

/// Exact gradient `∂η/∂ε_j` of the discretized objective,
/// `Σ_l 2·Re(c_l·⟨χ_l(t_{j+1})|∂P_j/∂ε|ψ_l(t_j)⟩)`.
pub fn eta_gradient(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    target: &TargetGate,
    basis: &InitialBasis,
) -> Result<Vec<f64>> {
    check_target(model, target)?;
    check_basis(model, target, basis)?;
    let props = build_propagators(model, field, grid)?;
    let fwd = forward_rows(&props, basis.states().clone());
    let bwd = backward_rows(&props, basis.final_states(target));
    let c = overlap_factors(fwd.terminal(), bwd.terminal())?;
    Ok(props
        .iter()
        .enumerate()
        .map(|(j, p)| {
            p.field_derivative_overlaps(model.dipole(), bwd.at(j + 1), fwd.at(j))
                .iter()
                .zip(&c.0)
                .map(|(w, cl)| 2.0 * (cl * w).re)
                .sum()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BasisMode;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn two_level() -> SystemModel {
        let mu = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        SystemModel::new(vec![0.0, 1.0], mu, 2).unwrap()
    }

    fn not_gate() -> TargetGate {
        TargetGate::new(CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])).unwrap()
    }

    #[test]
    fn tau_of_target_itself_is_n() {
        let o = not_gate();
        let t = tau(&o, &o.padded_columns(3)).unwrap();
        assert!((t.value - c(2.0)).norm() < 1e-15);
        assert_eq!(gate_fidelity(&t), 1.0);
    }

    #[test]
    fn tau_tracks_global_phase() {
        let o = not_gate();
        let phi = 0.7;
        let u = o.padded_columns(2) * C64::from_polar(1.0, -phi);
        let t = tau(&o, &u).unwrap();
        assert!((t.value - C64::from_polar(2.0, -phi)).norm() < 1e-15);
        assert!((t.realized_phase() - phi).abs() < 1e-15);
    }

    #[test]
    fn tau_direct_sum() {
        let o = TargetGate::new(CMatrix::identity(2, 2)).unwrap();
        let u = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), C64::from_polar(1.0, PI / 2.0)]);
        let t = tau(&o, &u).unwrap();
        assert!((t.value - C64::new(1.0, 1.0)).norm() < 1e-15);
        assert!((gate_fidelity(&t) - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn fidelity_of_zero() {
        let t = TauValue { value: c(0.0), dim: 3 };
        assert_eq!(gate_fidelity(&t), 0.0);
    }

    #[test]
    fn eta_extremes() {
        let phi = CMatrix::identity(3, 2);
        assert!((eta(&phi, &phi).unwrap() - 2.0).abs() < 1e-15);
        let perp = CMatrix::from_row_slice(3, 2, &[c(0.0), c(0.0), c(0.0), c(0.0), c(1.0), c(1.0)]);
        assert_eq!(eta(&phi, &perp).unwrap(), 0.0);
        assert!(eta(&phi, &CMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn lambda_must_be_positive() {
        let a = CMatrix::identity(2, 2);
        assert!(matches!(
            delta_eps_evolution(&a, &a, &a, 0.0),
            Err(Error::Config(_))
        ));
        assert!(delta_eps_s2s(&a, &a, &OverlapFactors::ones(2), &a, -1.0).is_err());
    }

    #[test]
    fn s2s_with_unit_factors_is_twice_evolution() {
        let model = two_level();
        let grid = TimeGrid::new(4.0, 40).unwrap();
        let field = ControlField::from_fn(&grid, |t| 0.3 * (1.1 * t).sin()).unwrap();
        let sweeps = evolution_sweeps(&model, &field, &grid, &not_gate()).unwrap();
        let ones = OverlapFactors::ones(2);
        for j in 0..=40 {
            let (f, b) = (sweeps.forward.at(j), sweeps.backward.at(j));
            let e = delta_eps_evolution(f, b, model.dipole(), 0.8).unwrap();
            let s = delta_eps_s2s(f, b, &ones, model.dipole(), 0.8).unwrap();
            assert!((s - 2.0 * e).abs() <= 1e-14 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn vanishing_overlaps_give_zero_s2s_update() {
        let f = CMatrix::identity(2, 2);
        let b = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)]);
        let zero = OverlapFactors(vec![c(0.0), c(0.0)]);
        assert_eq!(delta_eps_s2s(&f, &b, &zero, two_level().dipole(), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_target_zero_field_is_stationary() {
        let model = two_level();
        let grid = TimeGrid::new(2.0 * PI, 64).unwrap();
        let zd = TargetGate::new(CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])).unwrap();
        let field = ControlField::zeros(64);
        let sweeps = evolution_sweeps(&model, &field, &grid, &zd).unwrap();
        for j in 0..=64 {
            let d = delta_eps_evolution(sweeps.forward.at(j), sweeps.backward.at(j), model.dipole(), 1.0).unwrap();
            assert_eq!(d, 0.0);
        }
        // U(2π) = I, so τ = 1 + (−1) = 0.
        let t = tau(&zd, sweeps.forward.terminal()).unwrap();
        assert!(t.value.norm() < 1e-12);
        assert!(residual_evolution(&model, &field, &grid, &zd).unwrap() <= 1e-12);
        let basis = InitialBasis::build(BasisMode::PhaseCorrected, 2, 2).unwrap();
        assert!(residual_s2s(&model, &field, &grid, &zd, &basis).unwrap() <= 1e-12);
    }

    #[test]
    fn relevant_columns_round_trip() {
        let basis = InitialBasis::build(BasisMode::PhaseCorrected, 3, 4).unwrap();
        let u = CMatrix::from_fn(4, 3, |i, j| C64::new((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.2));
        let evolved = &u * basis.relevant_block();
        let back = relevant_columns_from_basis(&evolved, &basis).unwrap();
        assert!(crate::model::max_abs_diff(&back, &u) < 1e-14);
    }

    #[test]
    fn overlap_sum_at_t_is_tau() {
        let model = two_level();
        let grid = TimeGrid::new(3.0, 30).unwrap();
        let field = ControlField::from_fn(&grid, |t| 0.4 * t.cos()).unwrap();
        let target = not_gate();
        let sweeps = evolution_sweeps(&model, &field, &grid, &target).unwrap();
        let t = tau(&target, sweeps.forward.terminal()).unwrap();
        let c_t = overlap_sum(sweeps.backward.terminal(), sweeps.forward.terminal()).unwrap();
        assert!((t.value - c_t).norm() < 1e-14);
        let c0 = overlap_sum(sweeps.backward.initial(), sweeps.forward.initial()).unwrap();
        assert!((c0 - c_t).norm() < 1e-12);
    }

    #[test]
    fn exact_gradient_approaches_midpoint_integrand() {
        // At small dt, ∂Re τ/∂ε_j ≈ −dt·Im Σ⟨χ|μ|ψ⟩ evaluated at the interval midpoint.
        let model = two_level();
        let target = not_gate();
        let grid = TimeGrid::new(2.0, 400).unwrap();
        let field = ControlField::from_fn(&grid, |t| 0.5 * (0.9 * t).cos()).unwrap();
        let grad = re_tau_gradient(&model, &field, &grid, &target).unwrap();
        let sweeps = evolution_sweeps(&model, &field, &grid, &target).unwrap();
        let dt = grid.dt();
        for j in [0, 57, 200, 399] {
            let half = crate::propagation::StepPropagator::new(&model, field.samples()[j], dt / 2.0);
            let psi_mid = half.apply(sweeps.forward.at(j));
            let chi_mid = half.apply(sweeps.backward.at(j));
            let integrand = evolution_integrand(&psi_mid, &chi_mid, model.dipole()).unwrap();
            assert!((grad[j] + dt * integrand).abs() < 1e-4 * dt, "j={j}: {} vs {}", grad[j], -dt * integrand);
        }
    }

    #[test]
    fn pairings_use_conjugate_on_backward() {
        let mu = two_level().dipole().clone();
        let psi = CMatrix::from_column_slice(2, 1, &[c(1.0), c(0.0)]);
        let chi = CMatrix::from_column_slice(2, 1, &[c(0.0), C64::new(0.0, 1.0)]);
        let p = dipole_pairings(&psi, &chi, &mu).unwrap();
        // ⟨χ|μ|ψ⟩ = conj(i)·1 = −i
        assert!((p[0] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }
}
