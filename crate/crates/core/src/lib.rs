// SPDX-License-Identifier: Apache-2.0

//! Optimal-control synthesis of driving fields that implement a target
//! unitary on the first N levels of an M-level system.
//!
//! Two objectives are supported side by side: the operator overlap
//! `τ = Σ_k ⟨k|Ô†U(T)|k⟩` and the state-to-state sum
//! `η = Σ_l |⟨ψ_l(T)|Ô φ_l⟩|²`. Both are optimized with immediate-feedback
//! (Krotov-style) sweeps or plain gradient ascent.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod functionals;
pub mod instances;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod propagation;

pub use error::{Error, Result};
