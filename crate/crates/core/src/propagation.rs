// SPDX-License-Identifier: Apache-2.0

//! Piecewise-constant field propagation.
//!
//! On interval `j` the Hamiltonian `H_j = diag(E) − μ·ε_j` is constant and
//! the step is the exact exponential `exp(−i·H_j·dt)`, built from the
//! Hermitian eigendecomposition of `H_j`. Forward objects (`U(t,0)|k⟩`) and
//! backward objects (`B†(t,T)|k⟩ = U(t,T)·Ô|k⟩`) are stored as the columns of
//! an M×N matrix at every grid node; column `k` is the propagated "row" `k`
//! of the operator in the `|k⟩` basis.

use std::io::Write;

use nalgebra::{DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CMatrix, CVector, ControlField, SystemModel, TimeGrid, C64};

/// `diag(E) − μ·ε`
pub fn step_hamiltonian(model: &SystemModel, eps: f64) -> CMatrix {
    let mut h = model.dipole().map(|z| -z * eps);
    for (k, e) in model.energies().iter().enumerate() {
        h[(k, k)] += C64::new(*e, 0.0);
    }
    debug_assert!(
        crate::model::max_abs_diff(&h, &h.adjoint()) <= 1e-12 * (1.0 + eps.abs()),
        "step Hamiltonian is not Hermitian"
    );
    h
}

/// The exact one-interval propagator `exp(−i·H(ε)·dt)` in spectral form.
#[derive(Debug, Clone)]
pub struct StepPropagator {
    field: f64,
    dt: f64,
    eigenvalues: DVector<f64>,
    /// `None` for the free (ε = 0) propagator, whose eigenbasis is `|k⟩`.
    eigenvectors: Option<CMatrix>,
    phases: CVector,
}

impl StepPropagator {
    pub fn new(model: &SystemModel, eps: f64, dt: f64) -> Self {
        if eps == 0.0 {
            return Self::free(model, dt);
        }
        let eig = SymmetricEigen::new(step_hamiltonian(model, eps));
        let phases = eig.eigenvalues.map(|l| C64::from_polar(1.0, -l * dt));
        Self {
            field: eps,
            dt,
            eigenvalues: eig.eigenvalues,
            eigenvectors: Some(eig.eigenvectors),
            phases,
        }
    }

    /// `diag(exp(−i·E_k·dt))`, built without a decomposition.
    pub fn free(model: &SystemModel, dt: f64) -> Self {
        let eigenvalues = DVector::from_column_slice(model.energies());
        let phases = eigenvalues.map(|l| C64::from_polar(1.0, -l * dt));
        Self {
            field: 0.0,
            dt,
            eigenvalues,
            eigenvectors: None,
            phases,
        }
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn scale_rows(phases: &CVector, mut coeffs: CMatrix, conjugate: bool) -> CMatrix {
        for (i, mut row) in coeffs.row_iter_mut().enumerate() {
            let p = if conjugate { phases[i].conj() } else { phases[i] };
            row *= p;
        }
        coeffs
    }

    fn apply_inner(&self, states: &CMatrix, conjugate: bool) -> CMatrix {
        match &self.eigenvectors {
            None => Self::scale_rows(&self.phases, states.clone(), conjugate),
            Some(v) => {
                let coeffs = v.ad_mul(states);
                v * Self::scale_rows(&self.phases, coeffs, conjugate)
            }
        }
    }

    /// `P·S` for the columns of `states`.
    pub fn apply(&self, states: &CMatrix) -> CMatrix {
        self.apply_inner(states, false)
    }

    /// `P†·S`, one step backwards in time.
    pub fn apply_adjoint(&self, states: &CMatrix) -> CMatrix {
        self.apply_inner(states, true)
    }

    /// The dense M×M unitary.
    pub fn matrix(&self) -> CMatrix {
        match &self.eigenvectors {
            None => CMatrix::from_diagonal(&self.phases),
            Some(v) => v * Self::scale_rows(&self.phases, v.adjoint(), false),
        }
    }

    /// `max |P†P − I|`
    pub fn unitarity_error(&self) -> f64 {
        let p = self.matrix();
        let m = self.dim();
        crate::model::max_abs_diff(&(p.adjoint() * &p), &CMatrix::identity(m, m))
    }

    /// `⟨χ_k| ∂P/∂ε |ψ_k⟩` for each column pair, at this step's field value.
    ///
    /// In the eigenbasis of `H`, `∂P/∂ε = V·(Γ ∘ V†(−μ)V)·V†` with the divided
    /// differences `Γ_ab = −i·dt·e^{−i(λ_a+λ_b)dt/2}·sinc((λ_a−λ_b)dt/2)` of
    /// `x ↦ e^{−ix·dt}`. As `dt → 0` this tends to `i·dt·⟨χ|μ|ψ⟩`.
    pub fn field_derivative_overlaps(&self, dipole: &CMatrix, chi: &CMatrix, psi: &CMatrix) -> Vec<C64> {
        let m = self.dim();
        let (mu_eig, a, b) = match &self.eigenvectors {
            None => (dipole.clone(), chi.clone(), psi.clone()),
            Some(v) => (v.ad_mul(&(dipole * v)), v.ad_mul(chi), v.ad_mul(psi)),
        };
        let mut g = CMatrix::zeros(m, m);
        for q in 0..m {
            for p in 0..m {
                let (lp, lq) = (self.eigenvalues[p], self.eigenvalues[q]);
                let half = 0.5 * (lp - lq) * self.dt;
                let sinc = if half == 0.0 { 1.0 } else { half.sin() / half };
                let gamma = C64::new(0.0, -self.dt) * C64::from_polar(sinc, -0.5 * (lp + lq) * self.dt);
                g[(p, q)] = -gamma * mu_eig[(p, q)];
            }
        }
        let gb = g * b;
        (0..chi.ncols())
            .map(|k| a.column(k).dotc(&gb.column(k)))
            .collect()
    }
}

/// Builds one propagator per interval. Only the ε = 0 propagator is shared.
pub fn build_propagators(model: &SystemModel, field: &ControlField, grid: &TimeGrid) -> Result<Vec<StepPropagator>> {
    field.check_grid(grid)?;
    let dt = grid.dt();
    let mut free: Option<StepPropagator> = None;
    Ok(field
        .samples()
        .iter()
        .map(|&eps| {
            if eps == 0.0 {
                free.get_or_insert_with(|| StepPropagator::free(model, dt)).clone()
            } else {
                StepPropagator::new(model, eps, dt)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// N propagated vectors at every grid node `0..=n`.
#[derive(Debug, Clone)]
pub struct RowTrajectory {
    direction: Direction,
    nodes: Vec<CMatrix>,
}

impl RowTrajectory {
    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// M×N block at node `j`.
    pub fn at(&self, j: usize) -> &CMatrix {
        &self.nodes[j]
    }

    pub fn initial(&self) -> &CMatrix {
        &self.nodes[0]
    }

    pub fn terminal(&self) -> &CMatrix {
        self.nodes.last().expect("trajectory has at least one node")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn row_count(&self) -> usize {
        self.nodes[0].ncols()
    }

    pub fn nodes(&self) -> &[CMatrix] {
        &self.nodes
    }

    /// Largest deviation of any stored vector's norm from `reference`.
    pub fn max_norm_drift(&self, reference: &[f64]) -> f64 {
        self.nodes
            .iter()
            .flat_map(|block| {
                block
                    .column_iter()
                    .zip(reference)
                    .map(|(c, r)| (c.norm() - r).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Writes `step,time,row_index,component_index,re,im`.
    pub fn write_csv<W: Write>(&self, grid: &TimeGrid, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "time", "row_index", "component_index", "re", "im"])?;
        for (j, block) in self.nodes.iter().enumerate() {
            for (k, col) in block.column_iter().enumerate() {
                for (i, z) in col.iter().enumerate() {
                    w.serialize((j, grid.node(j), k + 1, i + 1, z.re, z.im))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_rows(model: &SystemModel, rows: &CMatrix, what: &str) -> Result<()> {
    if rows.nrows() != model.level_count() {
        return Err(Error::Dimension(format!(
            "{what} rows have length {}, expected M={}",
            rows.nrows(),
            model.level_count()
        )));
    }
    Ok(())
}

/// Forward sweep with prebuilt propagators.
pub fn forward_rows(props: &[StepPropagator], init: CMatrix) -> RowTrajectory {
    let mut nodes = Vec::with_capacity(props.len() + 1);
    nodes.push(init);
    for p in props {
        let next = p.apply(nodes.last().unwrap());
        nodes.push(next);
    }
    RowTrajectory {
        direction: Direction::Forward,
        nodes,
    }
}

/// Backward sweep with prebuilt propagators; node `j` is `P_j†·(node j+1)`.
pub fn backward_rows(props: &[StepPropagator], terminal: CMatrix) -> RowTrajectory {
    let mut rev = Vec::with_capacity(props.len() + 1);
    rev.push(terminal);
    for p in props.iter().rev() {
        let prev = p.apply_adjoint(rev.last().unwrap());
        rev.push(prev);
    }
    rev.reverse();
    RowTrajectory {
        direction: Direction::Backward,
        nodes: rev,
    }
}

/// Propagates `init` (M×N, columns are the initial vectors) from `t = 0` to `T`.
pub fn propagate_rows_forward(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    init: &CMatrix,
) -> Result<RowTrajectory> {
    check_rows(model, init, "initial")?;
    let props = build_propagators(model, field, grid)?;
    Ok(forward_rows(&props, init.clone()))
}

/// Propagates `terminal` (M×N) from `t = T` back to `0`.
pub fn propagate_rows_backward(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    terminal: &CMatrix,
) -> Result<RowTrajectory> {
    check_rows(model, terminal, "terminal")?;
    let props = build_propagators(model, field, grid)?;
    Ok(backward_rows(&props, terminal.clone()))
}

/// The first N identity columns `|1⟩..|N⟩` as an M×N block.
pub fn identity_rows(m: usize, n: usize) -> CMatrix {
    CMatrix::identity(m, n)
}

/// `U(T,0)` as a dense M×M matrix.
pub fn propagate_full_unitary(model: &SystemModel, field: &ControlField, grid: &TimeGrid) -> Result<CMatrix> {
    let props = build_propagators(model, field, grid)?;
    let m = model.level_count();
    Ok(props
        .iter()
        .fold(CMatrix::identity(m, m), |u, p| p.apply(&u)))
}

/// Evolves a single normalized state; returns `ψ(t_j)` for every node.
pub fn evolve_state(
    model: &SystemModel,
    field: &ControlField,
    grid: &TimeGrid,
    psi0: &CVector,
) -> Result<Vec<CVector>> {
    let norm = psi0.norm();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!("initial state has norm {norm}, expected 1")));
    }
    let init = CMatrix::from_column_slice(psi0.len(), 1, psi0.as_slice());
    check_rows(model, &init, "state")?;
    let traj = propagate_rows_forward(model, field, grid, &init)?;
    Ok(traj
        .nodes
        .into_iter()
        .map(|b| b.column(0).into_owned())
        .collect())
}
