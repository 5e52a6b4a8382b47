//! Backward solvers for the open-loop equilibrium characterization: the
//! coupled set of nonsymmetric generalized difference Riccati equations with
//! its companion set of linear difference equations, the equilibrium feedback
//! representation, and the standard pre-commitment recursion used to
//! demonstrate time inconsistency.

#![allow(clippy::needless_range_loop)] // index loops mirror the recursions

use crate::error::{Error, Result};
use crate::linalg::{is_psd, pinv, Matrix, Tolerances};
use crate::problem::{Mode, ProblemData};

/// Per-initial-time feasibility diagnostics of an open-loop solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopStepDiag {
    pub t: usize,
    /// `||W_{t,t} W_{t,t}^+ H_{t,t} - H_{t,t}||`.
    pub consistency_residual: f64,
    pub consistency_scale: f64,
    /// Smallest eigenvalue of `R_{t,t} + B' S_{t,t+1} B + D' S_{t,t+1} D`.
    pub convexity_min_eigenvalue: f64,
    pub consistency_ok: bool,
    pub convexity_ok: bool,
}

/// Solution families of the open-loop equilibrium equations.
///
/// `p[t][k - t]` holds the generally nonsymmetric `P_{t,k}` for `k` in
/// `t..=N`; `s` holds the symmetric companion family on the same index range.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopSolution {
    pub horizon: usize,
    pub p: Vec<Vec<Matrix>>,
    pub s: Vec<Vec<Matrix>>,
    pub w_diag: Vec<Matrix>,
    pub h_diag: Vec<Matrix>,
    /// `H_{t,k}` for `k` in `t..N`.
    pub h_cross: Vec<Vec<Matrix>>,
    /// `K_k = -W_{k,k}^+ H_{k,k}`.
    pub gains: Vec<Matrix>,
    /// Convexity test matrices `R_{t,t} + B' S_{t,t+1} B + D' S_{t,t+1} D`.
    pub convexity: Vec<Matrix>,
    pub feasible: bool,
    pub diagnostics: Vec<OpenLoopStepDiag>,
}

impl OpenLoopSolution {
    pub fn p(&self, t: usize, k: usize) -> &Matrix {
        &self.p[t][k - t]
    }
    pub fn s(&self, t: usize, k: usize) -> &Matrix {
        &self.s[t][k - t]
    }
    pub fn h(&self, t: usize, k: usize) -> &Matrix {
        &self.h_cross[t][k - t]
    }
}

/// Solves the coupled equation sets for problems whose dynamics do not
/// depend on the initial time.
///
/// The sweep runs the initial time t downward; the inner recursion reuses the
/// diagonal gains `-W_{k,k}^+ H_{k,k}` produced when the pass anchored at k
/// was processed. Both constrained conditions are tested for every t;
/// infeasibility is reported as a verdict with full diagnostics, never as an
/// error, because the recursions themselves always complete.
pub fn solve_open_loop(p: &ProblemData, tol: &Tolerances) -> Result<OpenLoopSolution> {
    if p.mode == Mode::General {
        return Err(Error::UnsupportedStructure(
            "open-loop solve requires dynamics independent of the initial time; \
             use the verifier's forward-backward machinery for general coefficients"
                .into(),
        ));
    }
    let violations = p.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    tol.validate()?;

    let horizon = p.horizon;
    let n = p.state_dim;
    let m = p.control_dim;

    let mut p_rows: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut h_cross: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut w_diag: Vec<Matrix> = vec![Matrix::zeros(m, m); horizon];
    let mut h_diag: Vec<Matrix> = vec![Matrix::zeros(m, n); horizon];
    let mut gains: Vec<Matrix> = vec![Matrix::zeros(m, n); horizon];
    let mut consistency: Vec<(f64, f64)> = vec![(0.0, 1.0); horizon];

    for t in (0..horizon).rev() {
        let mut row: Vec<Matrix> = vec![Matrix::zeros(n, n); horizon - t + 1];
        let mut cross: Vec<Matrix> = vec![Matrix::zeros(m, n); horizon - t];
        row[horizon - t] = p.g(t).clone();
        for k in (t..horizon).rev() {
            let a = p.a(t, k);
            let b = p.b(t, k);
            let c = p.c(t, k);
            let d = p.d(t, k);
            let p_next = &row[k + 1 - t];
            let h_tk = b.transpose() * p_next * a + d.transpose() * p_next * c;
            if k == t {
                let w = p.r(t, t) + b.transpose() * p_next * b + d.transpose() * p_next * d;
                let w_pinv = pinv(&w, tol)?;
                gains[t] = -(&w_pinv * &h_tk);
                let residual = (&w * &w_pinv * &h_tk - &h_tk).norm();
                let scale = 1.0f64.max(w.norm()).max(h_tk.norm());
                consistency[t] = (residual, scale);
                w_diag[t] = w;
                h_diag[t] = h_tk.clone();
            }
            // Cross term in the form produced by decoupling the adjoint:
            // (A'PB + C'PD) K_k. When P_{t,k+1} is nonsymmetric (Q varying
            // with the initial time) this differs from H_{t,k}' K_k, and only
            // this form keeps Z = P X along the equilibrium.
            let coupling = a.transpose() * p_next * b + c.transpose() * p_next * d;
            row[k - t] = p.q(t, k)
                + a.transpose() * p_next * a
                + c.transpose() * p_next * c
                + coupling * &gains[k];
            cross[k - t] = h_tk;
        }
        p_rows[t] = row;
        h_cross[t] = cross;
    }

    // Companion linear difference equations; decoupled from the family above.
    let mut s_rows: Vec<Vec<Matrix>> = vec![Vec::new(); horizon];
    let mut convexity: Vec<Matrix> = Vec::with_capacity(horizon);
    for t in (0..horizon).rev() {
        let mut row: Vec<Matrix> = vec![Matrix::zeros(n, n); horizon - t + 1];
        row[horizon - t] = p.g(t).clone();
        for k in (t..horizon).rev() {
            let a = p.a(t, k);
            let c = p.c(t, k);
            let s_next = &row[k + 1 - t];
            row[k - t] = p.q(t, k) + a.transpose() * s_next * a + c.transpose() * s_next * c;
        }
        s_rows[t] = row;
    }
    for t in 0..horizon {
        let b = p.b(t, t);
        let d = p.d(t, t);
        let s_next = &s_rows[t][1];
        convexity.push(p.r(t, t) + b.transpose() * s_next * b + d.transpose() * s_next * d);
    }

    let mut diagnostics = Vec::with_capacity(horizon);
    let mut feasible = true;
    for t in 0..horizon {
        let (residual, scale) = consistency[t];
        let consistency_ok = residual <= tol.residual_tol * scale;
        let psd = is_psd(&convexity[t], tol)?;
        let diag = OpenLoopStepDiag {
            t,
            consistency_residual: residual,
            consistency_scale: scale,
            convexity_min_eigenvalue: psd.min_eigenvalue,
            consistency_ok,
            convexity_ok: psd.is_psd,
        };
        feasible &= consistency_ok && psd.is_psd;
        diagnostics.push(diag);
    }

    Ok(OpenLoopSolution {
        horizon,
        p: p_rows,
        s: s_rows,
        w_diag,
        h_diag,
        h_cross,
        gains,
        convexity,
        feasible,
        diagnostics,
    })
}

/// The equilibrium gain sequence `K_k = -W_{k,k}^+ H_{k,k}`.
///
/// The open-loop equilibrium control for any admissible initial pair is
/// `u_k = K_k X_k` along the closed-loop equilibrium state.
pub fn open_loop_gains(sol: &OpenLoopSolution) -> Result<Vec<Matrix>> {
    if !sol.feasible {
        let failing: Vec<usize> = sol
            .diagnostics
            .iter()
            .filter(|d| !(d.consistency_ok && d.convexity_ok))
            .map(|d| d.t)
            .collect();
        return Err(Error::Infeasible(format!(
            "constrained conditions fail at t in {failing:?}"
        )));
    }
    Ok(sol.gains.clone())
}

/// Standard pre-commitment generalized difference Riccati solution.
#[derive(Debug, Clone)]
pub struct StandardLqSolution {
    pub t_start: usize,
    /// `P_k` for `k` in `t_start..=N`, all symmetric.
    pub p: Vec<Matrix>,
    pub w: Vec<Matrix>,
    pub gains: Vec<Matrix>,
    pub feasible: bool,
    /// Per step: (consistency residual, smallest eigenvalue of `W_k`).
    pub diagnostics: Vec<(f64, f64)>,
}

impl StandardLqSolution {
    pub fn gain_at(&self, k: usize) -> &Matrix {
        &self.gains[k - self.t_start]
    }
}

/// Solves the standard (time-consistent) pre-commitment recursion
/// `P_k = Q_k + A'PA + C'PC - H' W^+ H` backward from the terminal weight,
/// feasible iff every `W_k` is PSD and every consistency constraint holds.
#[allow(clippy::too_many_arguments)]
pub fn solve_standard_lq(
    a: &[Matrix],
    b: &[Matrix],
    c: &[Matrix],
    d: &[Matrix],
    q: &[Matrix],
    r: &[Matrix],
    g: &Matrix,
    t_start: usize,
    tol: &Tolerances,
) -> Result<StandardLqSolution> {
    let steps = a.len();
    for (name, fam) in [("B", b), ("C", c), ("D", d), ("Q", q), ("R", r)] {
        if fam.len() != steps {
            return Err(Error::invalid(format!(
                "family {name} has {} entries, expected {steps}",
                fam.len()
            )));
        }
    }
    let n = g.nrows();
    if !g.is_square() {
        return Err(Error::invalid("terminal weight must be square"));
    }
    for k in 0..steps {
        if a[k].shape() != (n, n) || c[k].shape() != (n, n) {
            return Err(Error::invalid(format!("A/C at step {k} must be {n}x{n}")));
        }
        let m = b[k].ncols();
        if b[k].nrows() != n || d[k].shape() != (n, m) || r[k].shape() != (m, m) {
            return Err(Error::invalid(format!("B/D/R dimensions mismatch at step {k}")));
        }
        if q[k].shape() != (n, n) {
            return Err(Error::invalid(format!("Q at step {k} must be {n}x{n}")));
        }
    }

    let mut p_seq = vec![g.clone(); steps + 1];
    let mut w_seq = Vec::with_capacity(steps);
    let mut gains = Vec::with_capacity(steps);
    let mut diagnostics = Vec::with_capacity(steps);
    let mut feasible = true;
    for k in (0..steps).rev() {
        let p_next = p_seq[k + 1].clone();
        let w = &r[k] + b[k].transpose() * &p_next * &b[k] + d[k].transpose() * &p_next * &d[k];
        let h = b[k].transpose() * &p_next * &a[k] + d[k].transpose() * &p_next * &c[k];
        let w_pinv = pinv(&w, tol)?;
        let gain = -(&w_pinv * &h);
        let residual = (&w * &w_pinv * &h - &h).norm();
        let scale = 1.0f64.max(w.norm()).max(h.norm());
        let psd = is_psd(&w, tol)?;
        feasible &= psd.is_psd && residual <= tol.residual_tol * scale;
        let p_k = &q[k]
            + a[k].transpose() * &p_next * &a[k]
            + c[k].transpose() * &p_next * &c[k]
            + h.transpose() * &gain;
        p_seq[k] = crate::linalg::sym_part(&p_k);
        w_seq.push(w);
        gains.push(gain);
        diagnostics.push((residual, psd.min_eigenvalue));
    }
    w_seq.reverse();
    gains.reverse();
    diagnostics.reverse();
    Ok(StandardLqSolution {
        t_start,
        p: p_seq,
        w: w_seq,
        gains,
        feasible,
        diagnostics,
    })
}

/// Pre-commitment solve of the row anchored at initial time `t`.
pub fn solve_standard_for_anchor(
    p: &ProblemData,
    t: usize,
    tol: &Tolerances,
) -> Result<StandardLqSolution> {
    if t >= p.horizon {
        return Err(Error::invalid(format!(
            "anchor {t} out of range for horizon {}",
            p.horizon
        )));
    }
    let slice = |fam: &crate::problem::Family| -> Vec<Matrix> {
        (t..p.horizon).map(|k| fam.get(t, k).clone()).collect()
    };
    solve_standard_lq(
        &slice(&p.a),
        &slice(&p.b),
        &slice(&p.c),
        &slice(&p.d),
        &slice(&p.q),
        &slice(&p.r),
        p.g(t),
        t,
        tol,
    )
}

/// Gain disagreement between two pre-commitment solves anchored at different
/// initial times, evaluated at the later time. A nonzero difference
/// certifies time inconsistency of the pre-commitment solution.
#[derive(Debug, Clone)]
pub struct InconsistencyReport {
    pub t0: usize,
    pub t1: usize,
    pub gain_from_t0: Matrix,
    pub gain_from_t1: Matrix,
    pub difference_norm: f64,
    pub gains_t0: Vec<Matrix>,
    pub gains_t1: Vec<Matrix>,
}

pub fn demonstrate_inconsistency(
    p: &ProblemData,
    t0: usize,
    t1: usize,
    tol: &Tolerances,
) -> Result<InconsistencyReport> {
    if !(t0 < t1 && t1 < p.horizon) {
        return Err(Error::invalid(format!(
            "need t0 < t1 < N, got t0={t0}, t1={t1}, N={}",
            p.horizon
        )));
    }
    let sol0 = solve_standard_for_anchor(p, t0, tol)?;
    let sol1 = solve_standard_for_anchor(p, t1, tol)?;
    let gain_from_t0 = sol0.gain_at(t1).clone();
    let gain_from_t1 = sol1.gain_at(t1).clone();
    let difference_norm = (&gain_from_t0 - &gain_from_t1).norm();
    Ok(InconsistencyReport {
        t0,
        t1,
        gain_from_t0,
        gain_from_t1,
        difference_norm,
        gains_t0: sol0.gains.clone(),
        gains_t1: sol1.gains.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::{is_symmetric, mat};
    use crate::problem::{Family, ProblemData};
    use approx::assert_abs_diff_eq;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn assert_mat_close(actual: &Matrix, expect: &[f64], eps: f64, what: &str) {
        let e = mat(actual.nrows(), actual.ncols(), expect);
        let err = (actual - &e).abs().max();
        assert!(err <= eps, "{what}: max entry error {err:.3e} > {eps:.1e}\nactual {actual}");
    }

    #[test]
    fn single_step_terminal_only_problem() {
        let one = |v: f64| mat(1, 1, &[v]);
        let p = ProblemData::new(
            1,
            1,
            Family::constant(1, one(1.0)),
            Family::constant(1, one(1.0)),
            Family::constant(1, one(0.0)),
            Family::constant(1, one(0.0)),
            Family::constant(1, one(0.0)),
            Family::constant(1, one(1.0)),
            vec![one(0.0)],
        )
        .unwrap();
        let sol = solve_open_loop(&p, &tols()).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.p(0, 0)[(0, 0)], 0.0);
        assert_eq!(sol.w_diag[0][(0, 0)], 1.0);
        assert_eq!(sol.h_diag[0][(0, 0)], 0.0);
        assert_eq!(sol.gains[0][(0, 0)], 0.0);
    }

    #[test]
    fn zero_input_channels_give_zero_gains() {
        let p = crate::test_support::random_problem(7, 4, 2, 2, false);
        let mut p = p;
        p.b = Family::constant(p.horizon, Matrix::zeros(2, 2));
        p.d = Family::constant(p.horizon, Matrix::zeros(2, 2));
        // Keep R positive definite so the pseudoinverse is plain inversion.
        p.r = Family::constant(p.horizon, Matrix::identity(2, 2));
        let p = ProblemData::new(2, 2, p.a, p.b, p.c, p.d, p.q, p.r, p.g).unwrap();
        let sol = solve_open_loop(&p, &tols()).unwrap();
        for k in 0..p.horizon {
            assert_eq!(sol.gains[k].norm(), 0.0, "H vanishes so gains must too");
        }
    }

    #[test]
    fn example_5_1_families_and_gains() {
        let p = fixtures::example_5_1();
        let sol = solve_open_loop(&p, &tols()).unwrap();
        assert!(sol.feasible);

        assert_mat_close(sol.p(2, 2), &[16.6571, 5.8520, 5.8520, 11.5436], 5e-4, "P_2");
        assert_mat_close(
            sol.p(1, 1),
            &[38.002852, -10.901042, -10.901042, 12.864794],
            5e-4,
            "P_1",
        );
        assert_mat_close(
            sol.p(0, 0),
            &[27.740109, 15.612880, 15.612880, 10.162198],
            5e-4,
            "P_0",
        );
        assert_mat_close(sol.s(2, 2), &[43.0612, -12.3922, -12.3922, 87.49], 5e-4, "S_2");
        assert_mat_close(
            sol.s(1, 1),
            &[362.269523, -539.063227, -539.063227, 4234.039336],
            5e-4,
            "S_1",
        );
        assert_mat_close(
            sol.s(0, 0),
            &[1038.326735, 600.770819, 600.770819, 40970.518072],
            5e-4,
            "S_0",
        );
        assert_mat_close(
            &sol.w_diag[0],
            &[1138.3, -410.9, -410.9, 915.8],
            5e-2,
            "W_0",
        );
        assert_mat_close(
            &sol.gains[0],
            &[-0.2183, 0.0031, 0.0023, -0.3286],
            5e-4,
            "K_0",
        );
        assert_mat_close(
            &sol.gains[1],
            &[-0.5138, 0.1973, 0.0026, -1.1339],
            5e-4,
            "K_1",
        );
        assert_mat_close(
            &sol.gains[2],
            &[0.4889, -0.2601, 0.1605, -0.7474],
            5e-4,
            "K_2",
        );
    }

    #[test]
    fn r_off_diagonal_entries_do_not_enter_the_solve() {
        let p1 = fixtures::example_5_1();
        let p2 = fixtures::example_5_2();
        let s1 = solve_open_loop(&p1, &tols()).unwrap();
        let s2 = solve_open_loop(&p2, &tols()).unwrap();
        assert_eq!(s1, s2, "open-loop solutions must be bit-identical");

        // Mutating any R entry above the diagonal leaves the solve unchanged.
        let mut p3 = fixtures::example_5_1();
        p3.r.rows[0][2] = mat(2, 2, &[123.0, 4.0, 4.0, -9.0]);
        let s3 = solve_open_loop(&p3, &tols()).unwrap();
        assert_eq!(s1, s3);
    }

    #[test]
    fn terminal_conditions_and_diag_consistency_hold_exactly() {
        let p = fixtures::example_5_2();
        let sol = solve_open_loop(&p, &tols()).unwrap();
        for t in 0..p.horizon {
            assert_eq!(sol.p(t, p.horizon), p.g(t));
            assert_eq!(sol.s(t, p.horizon), p.g(t));
            // W_{t,t} was built from the family's own entry at (t, t+1).
            let b = p.b(t, t);
            let d = p.d(t, t);
            let w = p.r(t, t)
                + b.transpose() * sol.p(t, t + 1) * b
                + d.transpose() * sol.p(t, t + 1) * d;
            assert_abs_diff_eq!(w, sol.w_diag[t].clone(), epsilon = 1e-12);
        }
    }

    #[test]
    fn stationary_mode_collapses_rows_and_symmetrizes() {
        let p = fixtures::example_5_1();
        let sol = solve_open_loop(&p, &tols()).unwrap();
        for k in 0..=p.horizon {
            for t in 0..=k.min(p.horizon - 1) {
                let diff = (sol.p(t, k) - sol.p(0, k)).norm();
                assert!(diff <= 1e-9, "P rows must agree in stationary mode");
            }
        }
        for t in 0..p.horizon {
            for k in t..=p.horizon {
                assert!(
                    is_symmetric(sol.p(t, k), &tols()),
                    "stationary P_{{{t},{k}}} must be symmetric"
                );
                assert!(is_symmetric(sol.s(t, k), &tols()));
            }
        }
    }

    #[test]
    fn stationarity_residual_of_gains_is_tiny() {
        let p = fixtures::example_5_1();
        let sol = solve_open_loop(&p, &tols()).unwrap();
        for k in 0..p.horizon {
            let res = (&sol.w_diag[k] * &sol.gains[k] + &sol.h_diag[k]).norm();
            let scale = 1.0f64.max(sol.w_diag[k].norm()).max(sol.h_diag[k].norm());
            assert!(res <= tols().residual_tol * scale, "k={k}: {res:.3e}");
        }
    }

    #[test]
    fn general_mode_is_rejected() {
        let p = fixtures::example_5_3();
        assert!(matches!(
            solve_open_loop(&p, &tols()),
            Err(Error::UnsupportedStructure(_))
        ));
    }

    #[test]
    fn gains_require_feasibility() {
        let p = fixtures::example_5_1();
        let mut sol = solve_open_loop(&p, &tols()).unwrap();
        assert!(open_loop_gains(&sol).is_ok());
        sol.feasible = false;
        assert!(matches!(open_loop_gains(&sol), Err(Error::Infeasible(_))));
    }

    #[test]
    fn standard_solve_zero_weights_gives_zero() {
        let one = |v: f64| mat(1, 1, &[v]);
        let a = vec![one(1.5); 3];
        let b = vec![one(1.0); 3];
        let c = vec![one(0.3); 3];
        let d = vec![one(0.0); 3];
        let q = vec![one(0.0); 3];
        let r = vec![one(1.0); 3];
        let sol = solve_standard_lq(&a, &b, &c, &d, &q, &r, &one(0.0), 0, &tols()).unwrap();
        assert!(sol.feasible);
        for pk in &sol.p {
            assert_eq!(pk[(0, 0)], 0.0);
        }
        for gk in &sol.gains {
            assert_eq!(gk[(0, 0)], 0.0);
        }
    }

    #[test]
    fn example_1_1_per_anchor_gains() {
        let p = fixtures::example_1_1();
        let s0 = solve_standard_for_anchor(&p, 0, &tols()).unwrap();
        let s1 = solve_standard_for_anchor(&p, 1, &tols()).unwrap();
        assert!(s0.feasible && s1.feasible);
        assert_abs_diff_eq!(s0.gain_at(1)[(0, 0)], -0.6038, epsilon = 5e-4);
        assert_abs_diff_eq!(s1.gain_at(1)[(0, 0)], -0.4979, epsilon = 5e-4);

        let report = demonstrate_inconsistency(&p, 0, 1, &tols()).unwrap();
        assert_abs_diff_eq!(report.difference_norm, 0.1059, epsilon = 5e-4);
    }

    #[test]
    fn exponential_discounting_is_time_consistent() {
        use crate::problem::{from_discounting, DiscountKind, DiscountSpec, SharedDynamics};
        for (seed, rate) in [(11u64, 0.0), (12, 0.3), (13, 1.1)] {
            let base = crate::test_support::random_problem(seed, 4, 2, 1, false);
            let dynamics = SharedDynamics {
                a: (0..4).map(|k| base.a(0, k).clone()).collect(),
                b: (0..4).map(|k| base.b(0, k).clone()).collect(),
                c: (0..4).map(|k| base.c(0, k).clone()).collect(),
                d: (0..4).map(|k| base.d(0, k).clone()).collect(),
            };
            let spec = DiscountSpec {
                kind: DiscountKind::Exponential { rate },
                base_q: mat(2, 2, &[1.0, 0.2, 0.2, 0.8]),
                base_r: mat(1, 1, &[1.0]),
                base_g: mat(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            };
            let p = from_discounting(&spec, &dynamics, 4).unwrap();
            let report = demonstrate_inconsistency(&p, 0, 1, &tols()).unwrap();
            assert!(
                report.difference_norm <= tols().residual_tol,
                "rate {rate}: difference {:.3e}",
                report.difference_norm
            );
        }
    }

    #[test]
    fn stationary_definite_instances_are_solvable_and_certified() {
        // Claimed solvability for Q_k >= 0, G >= 0, R_kk >= 0, checked
        // empirically: solve, then certify via the enumeration oracle.
        use crate::problem::InitialPair;
        use crate::simulation::{NoiseModel, PolicySpec};
        use crate::verify::{verify_open_loop, VerifyOptions};
        for seed in 40..48u64 {
            let p = crate::test_support::random_definite_problem(seed, 3, 2, 2);
            let sol = solve_open_loop(&p, &tols()).unwrap();
            assert!(sol.feasible, "seed {seed}");
            for k in 0..p.horizon {
                let res = (&sol.w_diag[k] * &sol.gains[k] + &sol.h_diag[k]).norm();
                let scale = 1.0f64.max(sol.w_diag[k].norm()).max(sol.h_diag[k].norm());
                assert!(res <= tols().residual_tol * scale, "seed {seed} k={k}");
            }
            let report = verify_open_loop(
                &p,
                &InitialPair::new(0, crate::linalg::vec2(&[1.0, -0.5])),
                &PolicySpec::GainSequence(sol.gains.clone()),
                &NoiseModel::Rademacher,
                &VerifyOptions::default(),
            )
            .unwrap();
            assert!(report.pass, "seed {seed}: {:?}", report.failing_steps);
        }
    }

    #[test]
    fn invalid_anchor_pairs_are_rejected() {
        let p = fixtures::example_1_1();
        assert!(demonstrate_inconsistency(&p, 1, 1, &tols()).is_err());
        assert!(demonstrate_inconsistency(&p, 0, 4, &tols()).is_err());
    }
}
