// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its verdict line; exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use gateforge::experiments::{exp_gradient_fd, run_named, ExperimentReport};
use gateforge::functionals::{overlap_sum, tau};
use gateforge::instances::{embedded_qubit, hadamard, not_gate, random_dense, random_field, random_unitary, two_level};
use gateforge::model::{BasisMode, TimeGrid};
use gateforge::optimizer::{default_initial_guess, optimize, Approach, OptimizationResult, OptimizerConfig};
use gateforge::propagation::{backward_rows, build_propagators, forward_rows, identity_rows};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn from_report(r: &ExperimentReport) -> Verdict {
    let failures: Vec<String> = r
        .failures()
        .iter()
        .map(|a| format!("{}={:.3e}", a.name, a.measured))
        .collect();
    let detail = if failures.is_empty() {
        format!("{} assertions passed", r.assertions.iter().filter(|a| !a.informational).count())
    } else {
        format!("failed: {}", failures.join(", "))
    };
    verdict(r.passed(), detail)
}

fn unitarity_and_conservation() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_unit, mut worst_norm, mut worst_overlap) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..100u64 {
        let m = rng.random_range(2..=8usize);
        let n = rng.random_range(1..=m);
        let grid = TimeGrid::new(rng.random_range(1.0..10.0), rng.random_range(50..150)).unwrap();
        let model = random_dense(m, n, i);
        let target = random_unitary(n, i + 1000);
        let field = random_field(&grid, rng.random_range(0.1..2.0), i + 2000);
        let props = build_propagators(&model, &field, &grid).unwrap();
        for p in &props {
            worst_unit = worst_unit.max(p.unitarity_error());
        }
        let fwd = forward_rows(&props, identity_rows(m, n));
        let bwd = backward_rows(&props, target.padded_columns(m));
        worst_norm = worst_norm.max(fwd.max_norm_drift(&vec![1.0; n]));
        let norms: Vec<f64> = target.padded_columns(m).column_iter().map(|c| c.norm()).collect();
        worst_norm = worst_norm.max(bwd.max_norm_drift(&norms));
        let t = tau(&target, fwd.terminal()).unwrap().value;
        for j in 0..=grid.steps() {
            let c = overlap_sum(bwd.at(j), fwd.at(j)).unwrap();
            worst_overlap = worst_overlap.max((c - t).norm());
        }
    }
    verdict(
        worst_unit <= 1e-12 && worst_norm <= 1e-10 && worst_overlap <= 1e-9,
        format!(
            "100 instances: unitarity {worst_unit:.2e} (<=1e-12), norm drift {worst_norm:.2e} (<=1e-10), |c(t)-tau| {worst_overlap:.2e} (<=1e-9)"
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let grid = TimeGrid::new(20.0, 100).unwrap();
    let r = exp_gradient_fd(&two_level(1.0), &not_gate(), &grid, 11).unwrap();
    let worst = r
        .assertions
        .iter()
        .filter(|a| a.name.contains("rel_error"))
        .map(|a| a.measured)
        .fold(0.0, f64::max);
    let v = from_report(&r);
    verdict(v.passed, format!("max relative error {worst:.2e} (<=1e-4); {}", v.detail))
}

struct SynthesisRuns {
    not_runs: Vec<OptimizationResult>,
    embedded: OptimizationResult,
    s2s_runs: Vec<OptimizationResult>,
}

fn synthesis_runs() -> SynthesisRuns {
    let grid = TimeGrid::new(20.0, 400).unwrap();
    let model = two_level(1.0);
    let not_runs = (0..3)
        .map(|seed| {
            let mut cfg = OptimizerConfig::new(default_initial_guess(&model, &grid, seed));
            cfg.lambda = 1.0;
            cfg.max_iters = 200;
            cfg.stop_fidelity = 0.999;
            optimize(&model, &not_gate(), &grid, &cfg).unwrap()
        })
        .collect();
    let s2s_runs = [BasisMode::Orthonormal, BasisMode::PhaseCorrected]
        .into_iter()
        .map(|mode| {
            let mut cfg = OptimizerConfig::new(default_initial_guess(&model, &grid, 0));
            cfg.approach = Approach::StateToState;
            cfg.basis_mode = mode;
            cfg.max_iters = 200;
            optimize(&model, &hadamard(), &grid, &cfg).unwrap()
        })
        .collect();

    let big = embedded_qubit();
    let grid = TimeGrid::new(60.0, 1200).unwrap();
    let mut cfg = OptimizerConfig::new(default_initial_guess(&big, &grid, 0));
    cfg.max_iters = 2000;
    cfg.stop_fidelity = 0.99;
    let embedded = optimize(&big, &not_gate(), &grid, &cfg).unwrap();
    SynthesisRuns {
        not_runs,
        embedded,
        s2s_runs,
    }
}

fn gate_synthesis(runs: &SynthesisRuns) -> Verdict {
    let not_ok = runs
        .not_runs
        .iter()
        .all(|r| r.trace.last().unwrap().fidelity >= 0.999 && r.trace.iterations() <= 200);
    let not_iters: Vec<usize> = runs.not_runs.iter().map(|r| r.trace.iterations()).collect();
    let e = runs.embedded.trace.last().unwrap();
    let emb_ok = e.fidelity >= 0.99 && runs.embedded.trace.iterations() <= 2000;
    verdict(
        not_ok && emb_ok,
        format!(
            "NOT reached 0.999 in {not_iters:?} iterations; embedded qubit fidelity {:.5} after {} iterations",
            e.fidelity,
            runs.embedded.trace.iterations()
        ),
    )
}

fn monotonicity(runs: &SynthesisRuns) -> Verdict {
    let tau_drop = runs
        .not_runs
        .iter()
        .chain(std::iter::once(&runs.embedded))
        .map(|r| r.trace.max_decrease(|x| x.re_tau))
        .fold(0.0, f64::max);
    let eta_drop = runs
        .s2s_runs
        .iter()
        .map(|r| r.trace.max_decrease(|x| x.eta))
        .fold(0.0, f64::max);
    verdict(
        tau_drop <= 1e-6 && eta_drop <= 1e-6,
        format!("largest per-iteration drop: Re tau {tau_drop:.2e}, eta {eta_drop:.2e} (<=1e-6)"),
    )
}

/// Verdict of a named experiment, quoting the listed assertions.
fn named(name: &str, quoted: &[&str]) -> Verdict {
    let r = run_named(name, 0).unwrap();
    let v = from_report(&r);
    let quotes: Vec<String> = quoted
        .iter()
        .filter_map(|q| r.assertion(q))
        .map(|a| format!("{} {:.3e}", a.name, a.measured))
        .collect();
    verdict(v.passed, format!("{}; {}", quotes.join(", "), v.detail))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut all = true;
    let mut report = |id: usize, title: &str, v: Verdict| {
        all &= v.passed;
        println!(
            "criterion {id} [{}] {title}: {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.detail
        );
    };
    report(1, "unitarity and conservation", unitarity_and_conservation());
    report(2, "gradient correctness", gradient_correctness());
    let runs = synthesis_runs();
    report(3, "gate synthesis", gate_synthesis(&runs));
    report(4, "monotonicity", monotonicity(&runs));
    report(
        5,
        "spurious stationary point",
        named(
            "spurious_diagonal",
            &["zero_field.fidelity", "zero_field.residual_s2s", "escape.fidelity"],
        ),
    );
    report(
        6,
        "phase ambiguity",
        named(
            "phase_ambiguity",
            &[
                "seed0.orthonormal.eta_invariance.optimized",
                "seed0.phase_corrected.fidelity",
                "orthonormal.max_best_fit_relative_phase",
            ],
        ),
    );
    report(
        7,
        "cross-objective equivalence",
        named(
            "equivalence",
            &["seed0.unit_factor_update_mismatch", "seed0.converged.residual_s2s_phase_corrected"],
        ),
    );
    report(
        8,
        "relevant-column propagation",
        named("row_vs_full", &["max_entry_difference", "wall_time_ratio_full_over_rows"]),
    );
    println!("acceptance finished in {:.1} s", start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
