//! Solver for the symmetric generalized difference Riccati equations that
//! characterize linear feedback equilibrium strategies, valid for fully
//! general (t, k)-dependent coefficients.

use crate::error::{Error, Result};
use crate::linalg::{is_psd, pinv, sym_part, Matrix, Tolerances};
use crate::open_loop::solve_standard_for_anchor;
use crate::problem::ProblemData;

/// Per-initial-time feasibility diagnostics of a feedback solve.
#[derive(Debug, Clone)]
pub struct FeedbackStepDiag {
    pub t: usize,
    /// `||W~_{t,t} W~_{t,t}^+ H~_{t,t} - H~_{t,t}||`.
    pub consistency_residual: f64,
    pub consistency_scale: f64,
    pub w_min_eigenvalue: f64,
    /// Eigenvalues of `W~_{t,t}`, sorted ascending.
    pub w_eigenvalues: Vec<f64>,
    pub consistency_ok: bool,
    pub psd_ok: bool,
}

/// Solution of the strategy equations.
///
/// `p_tilde[t][k - t]` holds the symmetric `P~_{t,k}` for `k` in `t..=N`;
/// `w_tilde` and `h_tilde` hold the aggregates
/// `W~_{t,k} = R_{t,k} + B'P~B + D'P~D` and `H~_{t,k} = B'P~A + D'P~C`
/// for `k` in `t..N`.
#[derive(Debug, Clone)]
pub struct FeedbackSolution {
    pub horizon: usize,
    pub p_tilde: Vec<Vec<Matrix>>,
    pub w_tilde: Vec<Vec<Matrix>>,
    pub h_tilde: Vec<Vec<Matrix>>,
    /// Strategy matrices `Phi_t = -W~_{t,t}^+ H~_{t,t}`.
    pub phi: Vec<Matrix>,
    pub feasible: bool,
    /// Smallest initial time at which a constrained condition fails.
    pub first_infeasible_t: Option<usize>,
    pub diagnostics: Vec<FeedbackStepDiag>,
}

impl FeedbackSolution {
    pub fn p(&self, t: usize, k: usize) -> &Matrix {
        &self.p_tilde[t][k - t]
    }
    pub fn w(&self, t: usize, k: usize) -> &Matrix {
        &self.w_tilde[t][k - t]
    }
    pub fn h(&self, t: usize, k: usize) -> &Matrix {
        &self.h_tilde[t][k - t]
    }
}

/// Solves the strategy equations for any coefficient structure.
///
/// The outer loop runs the initial time t downward. Each pass propagates the
/// closed-loop quadratic recursion using the strategies already fixed by the
/// passes anchored at later times, then determines `Phi_t` from the diagonal
/// aggregates. On a constraint failure the solve continues with the computed
/// gain so the full diagnostic picture is reported; `feasible` carries the
/// verdict.
pub fn solve_feedback(p: &ProblemData, tol: &Tolerances) -> Result<FeedbackSolution> {
    let violations = p.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    tol.validate()?;

    let horizon = p.horizon;
    let n = p.state_dim;
    let m = p.control_dim;

    let mut p_rows: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut w_rows: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut h_rows: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut phi: Vec<Matrix> = vec![Matrix::zeros(m, n); horizon];
    let mut diagnostics: Vec<Option<FeedbackStepDiag>> = vec![None; horizon];

    for t in (0..horizon).rev() {
        let mut row: Vec<Matrix> = vec![Matrix::zeros(n, n); horizon - t + 1];
        let mut w_row: Vec<Matrix> = vec![Matrix::zeros(m, m); horizon - t];
        let mut h_row: Vec<Matrix> = vec![Matrix::zeros(m, n); horizon - t];
        row[horizon - t] = p.g(t).clone();
        for k in (t..horizon).rev() {
            let a = p.a(t, k);
            let b = p.b(t, k);
            let c = p.c(t, k);
            let d = p.d(t, k);
            let r = p.r(t, k);
            let p_next = row[k + 1 - t].clone();
            let w_tk = r + b.transpose() * &p_next * b + d.transpose() * &p_next * d;
            let h_tk = b.transpose() * &p_next * a + d.transpose() * &p_next * c;
            if k == t {
                let w_pinv = pinv(&w_tk, tol)?;
                phi[t] = -(&w_pinv * &h_tk);
                let residual = (&w_tk * &w_pinv * &h_tk - &h_tk).norm();
                let scale = 1.0f64.max(w_tk.norm()).max(h_tk.norm());
                let psd = is_psd(&w_tk, tol)?;
                diagnostics[t] = Some(FeedbackStepDiag {
                    t,
                    consistency_residual: residual,
                    consistency_scale: scale,
                    w_min_eigenvalue: psd.min_eigenvalue,
                    w_eigenvalues: crate::linalg::symmetric_eigenvalues(&w_tk),
                    consistency_ok: residual <= tol.residual_tol * scale,
                    psd_ok: psd.is_psd,
                });
            }
            let gain = &phi[k];
            let a_cl = a + b * gain;
            let c_cl = c + d * gain;
            let stepped = p.q(t, k)
                + gain.transpose() * r * gain
                + a_cl.transpose() * &p_next * &a_cl
                + c_cl.transpose() * &p_next * &c_cl;
            row[k - t] = sym_part(&stepped);
            w_row[k - t] = w_tk;
            h_row[k - t] = h_tk;
        }
        p_rows[t] = row;
        w_rows[t] = w_row;
        h_rows[t] = h_row;
    }

    let diagnostics: Vec<FeedbackStepDiag> =
        diagnostics.into_iter().map(|d| d.expect("every t visited")).collect();
    let first_infeasible_t = diagnostics
        .iter()
        .find(|d| !(d.consistency_ok && d.psd_ok))
        .map(|d| d.t);
    Ok(FeedbackSolution {
        horizon,
        p_tilde: p_rows,
        w_tilde: w_rows,
        h_tilde: h_rows,
        phi,
        feasible: first_infeasible_t.is_none(),
        first_infeasible_t,
        diagnostics,
    })
}

/// Alternative propagation through the expanded cross-term form; used as an
/// independent cross-check of [`solve_feedback`].
///
/// `P~_{t,k} = Q + A'P~A + C'P~C - H~_{k,k}' W~_{k,k}^+ H~_{t,k}
///  - H~_{t,k}' W~_{k,k}^+ H~_{k,k} + H~_{k,k}' W~_{k,k}^+ W~_{t,k} W~_{k,k}^+ H~_{k,k}`.
pub fn solve_feedback_expanded(p: &ProblemData, tol: &Tolerances) -> Result<Vec<Vec<Matrix>>> {
    let violations = p.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let horizon = p.horizon;
    let n = p.state_dim;
    let m = p.control_dim;
    let mut p_rows: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut diag_w: Vec<Matrix> = vec![Matrix::zeros(m, m); horizon];
    let mut diag_w_pinv: Vec<Matrix> = vec![Matrix::zeros(m, m); horizon];
    let mut diag_h: Vec<Matrix> = vec![Matrix::zeros(m, n); horizon];

    for t in (0..horizon).rev() {
        let mut row: Vec<Matrix> = vec![Matrix::zeros(n, n); horizon - t + 1];
        row[horizon - t] = p.g(t).clone();
        for k in (t..horizon).rev() {
            let a = p.a(t, k);
            let b = p.b(t, k);
            let c = p.c(t, k);
            let d = p.d(t, k);
            let p_next = row[k + 1 - t].clone();
            let w_tk = p.r(t, k) + b.transpose() * &p_next * b + d.transpose() * &p_next * d;
            let h_tk = b.transpose() * &p_next * a + d.transpose() * &p_next * c;
            if k == t {
                diag_w_pinv[t] = pinv(&w_tk, tol)?;
                diag_w[t] = w_tk.clone();
                diag_h[t] = h_tk.clone();
            }
            let wp = &diag_w_pinv[k];
            let hk = &diag_h[k];
            let stepped = p.q(t, k) + a.transpose() * &p_next * a + c.transpose() * &p_next * c
                - hk.transpose() * wp * &h_tk
                - h_tk.transpose() * wp * hk
                + hk.transpose() * wp * &w_tk * wp * hk;
            row[k - t] = sym_part(&stepped);
        }
        p_rows[t] = row;
    }
    Ok(p_rows)
}

/// Checks the definite-case chain: with `Q >= 0`, `R > 0`, `G >= 0`
/// (a checked precondition), a feasible solve must have every
/// `W~_{t,k}` positive definite and every `P~_{t,k}` positive semidefinite.
pub fn assert_definite_case(
    p: &ProblemData,
    sol: &FeedbackSolution,
    tol: &Tolerances,
) -> Result<bool> {
    for t in 0..p.horizon {
        for k in t..p.horizon {
            if !is_psd(p.q(t, k), tol)?.is_psd {
                return Err(Error::invalid(format!("Q[{t},{k}] is not PSD")));
            }
            let r_report = is_psd(p.r(t, k), tol)?;
            if r_report.min_eigenvalue <= 0.0 {
                return Err(Error::invalid(format!("R[{t},{k}] is not positive definite")));
            }
        }
        if !is_psd(p.g(t), tol)?.is_psd {
            return Err(Error::invalid(format!("G[{t}] is not PSD")));
        }
    }
    if !sol.feasible {
        return Ok(false);
    }
    for t in 0..p.horizon {
        for k in t..p.horizon {
            if is_psd(sol.w(t, k), tol)?.min_eigenvalue <= 0.0 {
                return Ok(false);
            }
            if !is_psd(sol.p(t, k), tol)?.is_psd {
                return Ok(false);
            }
        }
        if !is_psd(sol.p(t, p.horizon), tol)?.is_psd {
            return Ok(false);
        }
    }
    Ok(true)
}

/// For fully t-independent data (a checked precondition), the strategy
/// recursion collapses: `P~_{t,k}` must agree across t and coincide with the
/// standard pre-commitment recursion.
pub fn reduce_to_standard(
    p: &ProblemData,
    sol: &FeedbackSolution,
    tol: &Tolerances,
) -> Result<bool> {
    let close = |x: &Matrix, y: &Matrix| -> bool {
        (x - y).norm() <= tol.residual_tol * 1.0f64.max(x.norm()).max(y.norm())
    };
    for fam in [&p.a, &p.b, &p.c, &p.d, &p.q, &p.r] {
        for k in 0..p.horizon {
            for t in 1..=k {
                if !close(fam.get(t, k), fam.get(0, k)) {
                    return Err(Error::invalid(
                        "reduction requires every coefficient family to be independent of the initial time",
                    ));
                }
            }
        }
    }
    for t in 1..p.horizon {
        if !close(p.g(t), p.g(0)) {
            return Err(Error::invalid(
                "reduction requires a t-independent terminal weight",
            ));
        }
    }

    for k in 0..=p.horizon {
        for t in 0..=k.min(p.horizon - 1) {
            if !close(sol.p(t, k), sol.p(0, k)) {
                return Ok(false);
            }
        }
    }
    let standard = solve_standard_for_anchor(p, 0, tol)?;
    for k in 0..=p.horizon {
        if !close(sol.p(0, k), &standard.p[k]) {
            return Ok(false);
        }
    }
    Ok(true)
}
