//! Machine- and human-readable renderings of solver and verifier outputs.

use serde_json::{json, Value};

use crate::feedback::FeedbackSolution;
use crate::fixtures::FixtureOutcome;
use crate::linalg::Matrix;
use crate::open_loop::{InconsistencyReport, OpenLoopSolution, StandardLqSolution};
use crate::problem::matrix_to_json;
use crate::verify::VerificationReport;

fn family_to_json(rows: &[Vec<Matrix>]) -> Value {
    Value::Array(
        rows.iter()
            .map(|row| Value::Array(row.iter().map(matrix_to_json).collect()))
            .collect(),
    )
}

fn matrices_to_json(mats: &[Matrix]) -> Value {
    Value::Array(mats.iter().map(matrix_to_json).collect())
}

pub fn open_loop_to_json(sol: &OpenLoopSolution) -> Value {
    json!({
        "feasible": sol.feasible,
        "P": family_to_json(&sol.p),
        "S": family_to_json(&sol.s),
        "W_diag": matrices_to_json(&sol.w_diag),
        "H_diag": matrices_to_json(&sol.h_diag),
        "gains": matrices_to_json(&sol.gains),
        "convexity": matrices_to_json(&sol.convexity),
        "diagnostics": sol.diagnostics.iter().map(|d| json!({
            "t": d.t,
            "consistency_residual": d.consistency_residual,
            "consistency_scale": d.consistency_scale,
            "convexity_min_eigenvalue": d.convexity_min_eigenvalue,
            "consistency_ok": d.consistency_ok,
            "convexity_ok": d.convexity_ok,
        })).collect::<Vec<_>>(),
    })
}

pub fn feedback_to_json(sol: &FeedbackSolution) -> Value {
    json!({
        "feasible": sol.feasible,
        "first_infeasible_t": sol.first_infeasible_t,
        "P_tilde": family_to_json(&sol.p_tilde),
        "W_tilde": family_to_json(&sol.w_tilde),
        "H_tilde": family_to_json(&sol.h_tilde),
        "Phi": matrices_to_json(&sol.phi),
        "diagnostics": sol.diagnostics.iter().map(|d| json!({
            "t": d.t,
            "consistency_residual": d.consistency_residual,
            "w_min_eigenvalue": d.w_min_eigenvalue,
            "w_eigenvalues": d.w_eigenvalues,
            "consistency_ok": d.consistency_ok,
            "psd_ok": d.psd_ok,
        })).collect::<Vec<_>>(),
    })
}

pub fn standard_to_json(sol: &StandardLqSolution) -> Value {
    json!({
        "feasible": sol.feasible,
        "t_start": sol.t_start,
        "P": matrices_to_json(&sol.p),
        "W": matrices_to_json(&sol.w),
        "gains": matrices_to_json(&sol.gains),
        "diagnostics": sol.diagnostics.iter().map(|(res, eig)| json!({
            "consistency_residual": res,
            "w_min_eigenvalue": eig,
        })).collect::<Vec<_>>(),
    })
}

pub fn inconsistency_to_json(rep: &InconsistencyReport) -> Value {
    json!({
        "t0": rep.t0,
        "t1": rep.t1,
        "gain_from_t0": matrix_to_json(&rep.gain_from_t0),
        "gain_from_t1": matrix_to_json(&rep.gain_from_t1),
        "difference_norm": rep.difference_norm,
        "gains_anchored_t0": matrices_to_json(&rep.gains_t0),
        "gains_anchored_t1": matrices_to_json(&rep.gains_t1),
    })
}

pub fn verification_to_json(rep: &VerificationReport) -> Value {
    json!({
        "start_t": rep.start_t,
        "pass": rep.pass,
        "failing_steps": rep.failing_steps,
        "per_step": rep.per_step.iter().map(|s| json!({
            "k": s.k,
            "stationarity_residual": s.stationarity_residual,
            "stationarity_scale": s.stationarity_scale,
            "convexity_margin": s.convexity_margin,
            "convexity_scale": s.convexity_scale,
            "inequality_slack": s.inequality_slack,
            "inequality_scale": s.inequality_scale,
            "equilibrium_cost": s.equilibrium_cost,
            "pass": s.pass,
        })).collect::<Vec<_>>(),
    })
}

pub fn fixture_outcomes_to_json(outcomes: &[FixtureOutcome]) -> Value {
    Value::Array(
        outcomes
            .iter()
            .map(|o| {
                json!({
                    "name": o.name,
                    "pass": o.pass,
                    "checks": o.checks.iter().map(|c| json!({
                        "label": c.label,
                        "max_error": c.max_error,
                        "tolerance": c.tolerance,
                        "pass": c.pass,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

/// Renders a matrix at four decimals, one bracketed row per line.
pub fn format_matrix(m: &Matrix) -> String {
    (0..m.nrows())
        .map(|i| {
            let row = (0..m.ncols())
                .map(|j| format!("{:>10.4}", m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ");
            format!("[{row} ]")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
