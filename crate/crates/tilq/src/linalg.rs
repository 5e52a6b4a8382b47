//! Dense linear-algebra kernels the solvers depend on: the Moore-Penrose
//! pseudoinverse, positive-semidefiniteness tests and the pseudoinverse
//! solvability test for linear matrix equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Numerical tolerances threaded through the solvers and verifiers.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Relative singular-value cutoff for [`pinv`]. `None` selects
    /// `max(rows, cols) * f64::EPSILON`, resolved per matrix.
    pub pinv_rcond: Option<f64>,
    /// Allowed negative-eigenvalue magnitude relative to the spectral scale.
    pub psd_margin: f64,
    /// Allowed norm of constraint residuals relative to the problem scale.
    pub residual_tol: f64,
    /// Allowed asymmetry norm relative to the matrix scale.
    pub symmetry_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            pinv_rcond: None,
            psd_margin: 1e-9,
            residual_tol: 1e-8,
            symmetry_tol: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.pinv_rcond {
            if r.is_nan() || r <= 0.0 {
                return Err(Error::invalid("pinv_rcond must be strictly positive"));
            }
        }
        for (name, v) in [
            ("psd_margin", self.psd_margin),
            ("residual_tol", self.residual_tol),
            ("symmetry_tol", self.symmetry_tol),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be strictly positive")));
            }
        }
        Ok(())
    }

    fn rcond_for(&self, rows: usize, cols: usize) -> f64 {
        self.pinv_rcond
            .unwrap_or_else(|| rows.max(cols) as f64 * f64::EPSILON)
    }
}

pub fn require_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} contains a non-finite entry")))
    }
}

/// Moore-Penrose pseudoinverse via SVD.
///
/// Singular values below `rcond * (largest singular value)` are treated as
/// zero, with `rcond` taken from [`Tolerances::pinv_rcond`]. The SVD result
/// is refined by a few hyperpower iterations `X <- X (2I - M X)`, which
/// preserve the truncated row and column spaces and repair the limited
/// accuracy of the decomposition on clustered spectra.
pub fn pinv(m: &Matrix, tol: &Tolerances) -> Result<Matrix> {
    require_finite(m, "pinv input")?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros(cols, rows));
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::invalid("SVD did not produce U"))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::invalid("SVD did not produce V^T"))?;
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = tol.rcond_for(rows, cols) * sigma_max;

    // M^+ = V diag(1/sigma_i) U^T over the retained singular values.
    let mut scaled_ut = u.transpose();
    for (i, s) in svd.singular_values.iter().enumerate() {
        let inv = if *s > cutoff { 1.0 / s } else { 0.0 };
        scaled_ut.row_mut(i).scale_mut(inv);
    }
    let mut x = v_t.transpose() * scaled_ut;

    let residual = |x: &Matrix| -> f64 { (m * x * m - m).norm() };
    let mut best = x.clone();
    let mut best_res = residual(&x);
    let eye = Matrix::identity(rows, rows);
    for _ in 0..4 {
        if best_res <= f64::EPSILON * sigma_max * rows.max(cols) as f64 {
            break;
        }
        x = &x * (&eye * 2.0 - m * &x);
        let res = residual(&x);
        if res < best_res {
            best_res = res;
            best = x.clone();
        } else {
            break;
        }
    }
    Ok(best)
}

/// Smallest/largest eigenvalue report of a PSD test.
#[derive(Debug, Clone, Copy)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

/// Tests positive semidefiniteness of the symmetrized matrix `(m + m^T)/2`.
///
/// `true` iff the smallest eigenvalue is at least `-psd_margin * scale`, where
/// the scale is the largest eigenvalue magnitude floored at one.
pub fn is_psd(m: &Matrix, tol: &Tolerances) -> Result<PsdReport> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "PSD test requires a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    require_finite(m, "PSD test input")?;
    let eigs = symmetric_eigenvalues(m);
    let min = eigs[0];
    let max = eigs[eigs.len() - 1];
    let scale = 1.0f64.max(min.abs()).max(max.abs());
    Ok(PsdReport {
        is_psd: min >= -tol.psd_margin * scale,
        min_eigenvalue: min,
        max_eigenvalue: max,
    })
}

/// Strict positive definiteness of the symmetrized matrix.
pub fn is_pd(m: &Matrix, tol: &Tolerances) -> Result<bool> {
    let report = is_psd(m, tol)?;
    Ok(report.min_eigenvalue > 0.0)
}

/// Eigenvalues of the symmetrized matrix, sorted ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let sym = sym_part(m);
    let mut eigs: Vec<f64> = sym.symmetric_eigenvalues().iter().cloned().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Solvability test for `L X = N`: true iff `L L^+ N = N` within tolerance.
pub fn solve_consistency(l: &Matrix, n: &Matrix, tol: &Tolerances) -> Result<bool> {
    if l.nrows() != n.nrows() {
        return Err(Error::invalid(format!(
            "L ({}x{}) and N ({}x{}) are not conformable for L X = N",
            l.nrows(),
            l.ncols(),
            n.nrows(),
            n.ncols()
        )));
    }
    require_finite(l, "L")?;
    require_finite(n, "N")?;
    let residual = l * pinv(l, tol)? * n - n;
    let scale = 1.0f64.max(l.norm()).max(n.norm());
    Ok(residual.norm() <= tol.residual_tol * scale)
}

/// Residual norm of the consistency constraint `L L^+ N - N = 0`.
pub fn consistency_residual(l: &Matrix, n: &Matrix, tol: &Tolerances) -> Result<f64> {
    Ok((l * pinv(l, tol)? * n - n).norm())
}

pub fn sym_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).norm()
}

/// Symmetry within `symmetry_tol` relative to the matrix norm (floored at 1).
pub fn is_symmetric(m: &Matrix, tol: &Tolerances) -> bool {
    m.is_square() && asymmetry(m) <= tol.symmetry_tol * 1.0f64.max(m.norm())
}

/// Row-major construction helper.
pub fn mat(rows: usize, cols: usize, entries: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, entries)
}

pub fn vec2(entries: &[f64]) -> Vector {
    Vector::from_column_slice(entries)
}

/// Canonical basis vector `e_i` of the given dimension.
pub fn basis_vector(dim: usize, i: usize) -> Vector {
    let mut v = Vector::zeros(dim);
    v[i] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn pinv_identity() {
        let m = Matrix::identity(2, 2);
        let p = pinv(&m, &tols()).unwrap();
        assert_abs_diff_eq!(p, Matrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn pinv_zero_is_transposed_zero() {
        let m = Matrix::zeros(2, 3);
        let p = pinv(&m, &tols()).unwrap();
        assert_eq!(p.shape(), (3, 2));
        assert_eq!(p.norm(), 0.0);
    }

    #[test]
    fn pinv_rank_deficient_diagonal() {
        let m = mat(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pinv(&m, &tols()).unwrap();
        assert_abs_diff_eq!(p, mat(2, 2, &[0.5, 0.0, 0.0, 0.0]), epsilon = 1e-14);
    }

    #[test]
    fn pinv_rejects_non_finite() {
        let m = mat(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(pinv(&m, &tols()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn psd_report_diagonal() {
        let r = is_psd(&mat(2, 2, &[1.0, 0.0, 0.0, 2.0]), &tols()).unwrap();
        assert!(r.is_psd);
        assert_abs_diff_eq!(r.min_eigenvalue, 1.0, epsilon = 1e-12);

        let r = is_psd(&mat(2, 2, &[-1.0, 0.0, 0.0, 1.0]), &tols()).unwrap();
        assert!(!r.is_psd);
        assert_abs_diff_eq!(r.min_eigenvalue, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn psd_report_on_an_indefinite_aggregate() {
        // Indefinite 2x2 arising in the bundled example-5-1 feedback solve.
        let w = mat(2, 2, &[239.0218, 247.7565, 247.7565, 224.5117]);
        let r = is_psd(&w, &tols()).unwrap();
        assert!(!r.is_psd);
        assert_abs_diff_eq!(r.min_eigenvalue, -16.096, epsilon = 5e-2);
        assert_abs_diff_eq!(r.max_eigenvalue, 479.6294, epsilon = 5e-2);
    }

    #[test]
    fn psd_rejects_non_square() {
        assert!(matches!(
            is_psd(&Matrix::zeros(2, 3), &tols()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn consistency_basic_cases() {
        let id = Matrix::identity(2, 2);
        let any = mat(2, 2, &[3.0, -1.0, 2.0, 0.5]);
        assert!(solve_consistency(&id, &any, &tols()).unwrap());

        let zero = Matrix::zeros(2, 2);
        assert!(!solve_consistency(&zero, &any, &tols()).unwrap());

        let l = mat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let n = mat(2, 2, &[3.0, 0.0, 0.0, 0.0]);
        assert!(solve_consistency(&l, &n, &tols()).unwrap());
    }

    #[test]
    fn consistency_rejects_mismatched_rows() {
        let l = Matrix::zeros(2, 2);
        let n = Matrix::zeros(3, 2);
        assert!(matches!(
            solve_consistency(&l, &n, &tols()),
            Err(Error::InvalidInput(_))
        ));
    }

    fn entries(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, len)
    }

    proptest! {
        #[test]
        fn penrose_conditions_hold(rows in 1usize..=6, cols in 1usize..=6,
                                   seedling in entries(36)) {
            let m = mat(rows, cols, &seedling[..rows * cols]);
            let p = pinv(&m, &tols()).unwrap();
            let tol = 1e-10 * 1.0f64.max(m.norm());
            prop_assert!(((&m * &p * &m) - &m).norm() <= tol);
            prop_assert!(((&p * &m * &p) - &p).norm() <= tol);
            let mp = &m * &p;
            prop_assert!((&mp - mp.transpose()).norm() <= tol);
            let pm = &p * &m;
            prop_assert!((&pm - pm.transpose()).norm() <= tol);
        }

        #[test]
        fn pinv_is_involutive_on_full_rank(diag in proptest::collection::vec(0.5f64..5.0, 4),
                                           offd in -0.2f64..0.2) {
            // Diagonally dominant, hence full rank.
            let n = diag.len();
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = diag[i];
                if i + 1 < n {
                    m[(i, i + 1)] = offd;
                }
            }
            let back = pinv(&pinv(&m, &tols()).unwrap(), &tols()).unwrap();
            prop_assert!((&back - &m).norm() <= 1e-10 * m.norm());
        }

        #[test]
        fn psd_agrees_with_shifted_cholesky(vals in entries(16)) {
            // 200 random symmetric matrices are exercised across proptest cases.
            let raw = mat(4, 4, &vals);
            let sym = sym_part(&raw);
            let report = is_psd(&sym, &tols()).unwrap();
            let scale = 1.0f64
                .max(report.min_eigenvalue.abs())
                .max(report.max_eigenvalue.abs());
            // Independent check: m + margin*scale*I admits a Cholesky
            // factorization iff m is PSD up to the margin.
            let shift = 2.0 * tols().psd_margin * scale + 1e-12;
            let shifted = &sym + Matrix::identity(4, 4) * shift;
            let chol_ok = nalgebra::Cholesky::new(shifted).is_some();
            if report.is_psd {
                prop_assert!(chol_ok);
            }
            if report.min_eigenvalue < -1e-6 * scale {
                prop_assert!(!nalgebra::Cholesky::new(sym.clone()).is_some());
            }
        }

        #[test]
        fn consistency_accepts_constructive_witness(lvals in entries(9), xvals in entries(9)) {
            let l = mat(3, 3, &lvals);
            let x = mat(3, 3, &xvals);
            let n = &l * &x;
            prop_assert!(solve_consistency(&l, &n, &tols()).unwrap());
        }
    }
}
