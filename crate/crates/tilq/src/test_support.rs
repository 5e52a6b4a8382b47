//! Deterministic random-instance generators shared by unit, property and
//! acceptance tests.
#![doc(hidden)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::problem::{Family, ProblemData};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let m = random_matrix(rng, n, n, scale);
    crate::linalg::sym_part(&m)
}

/// Random PSD matrix `M M' / n`, scaled.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let m = random_matrix(rng, n, n, 1.0);
    &m * m.transpose() * (scale / n as f64)
}

pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    random_psd(rng, n, scale) + Matrix::identity(n, n) * (0.1 * scale)
}

/// Random instance with dynamics independent of the initial time; `Q` varies
/// with (t, k) and `R` with t, so the detected mode is
/// `t_independent_dynamics`. With `definite` the weights are made PSD/PD.
pub fn random_problem(seed: u64, horizon: usize, n: usize, m: usize, definite: bool) -> ProblemData {
    let mut r = rng(seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1));
    let a: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, n, 0.8)).collect();
    let b: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, m, 0.8)).collect();
    let c: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, n, 0.6)).collect();
    let d: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, m, 0.6)).collect();
    let mut q_rows = Vec::new();
    for t in 0..horizon {
        let mut row = Vec::new();
        for _k in t..horizon {
            row.push(if definite {
                random_psd(&mut r, n, 1.0)
            } else {
                random_symmetric(&mut r, n, 1.0)
            });
        }
        q_rows.push(row);
    }
    let mut r_rows = Vec::new();
    for t in 0..horizon {
        let mut row = Vec::new();
        for _k in t..horizon {
            row.push(if definite {
                random_pd(&mut r, m, 1.0)
            } else {
                random_symmetric(&mut r, m, 1.0)
            });
        }
        r_rows.push(row);
    }
    let g: Vec<Matrix> = (0..horizon)
        .map(|_| {
            if definite {
                random_psd(&mut r, n, 1.0)
            } else {
                random_symmetric(&mut r, n, 1.0)
            }
        })
        .collect();
    ProblemData::new(
        n,
        m,
        Family::per_k(&a),
        Family::per_k(&b),
        Family::per_k(&c),
        Family::per_k(&d),
        Family { rows: q_rows },
        Family { rows: r_rows },
        g,
    )
    .expect("generated data is structurally valid")
}

/// Fully general instance: every coefficient family varies with (t, k).
pub fn random_general_problem(
    seed: u64,
    horizon: usize,
    n: usize,
    m: usize,
    definite: bool,
) -> ProblemData {
    let mut r = rng(seed.wrapping_mul(0xD1B54A32D192ED03).wrapping_add(7));
    let mut fam = |rows: usize, cols: usize, scale: f64| -> Family {
        let mut out = Vec::new();
        for t in 0..horizon {
            let mut row = Vec::new();
            for _k in t..horizon {
                row.push(random_matrix(&mut r, rows, cols, scale));
            }
            out.push(row);
        }
        Family { rows: out }
    };
    let a = fam(n, n, 0.8);
    let b = fam(n, m, 0.8);
    let c = fam(n, n, 0.6);
    let d = fam(n, m, 0.6);
    let mut weight_fam = |dim: usize, pd: bool| -> Family {
        let mut out = Vec::new();
        for t in 0..horizon {
            let mut row = Vec::new();
            for _k in t..horizon {
                row.push(match (definite, pd) {
                    (true, true) => random_pd(&mut r, dim, 1.0),
                    (true, false) => random_psd(&mut r, dim, 1.0),
                    (false, _) => random_symmetric(&mut r, dim, 1.0),
                });
            }
            out.push(row);
        }
        Family { rows: out }
    };
    let q = weight_fam(n, false);
    let rr = weight_fam(m, true);
    let g: Vec<Matrix> = (0..horizon)
        .map(|_| {
            if definite {
                random_psd(&mut r, n, 1.0)
            } else {
                random_symmetric(&mut r, n, 1.0)
            }
        })
        .collect();
    ProblemData::new(n, m, a, b, c, d, q, rr, g).expect("generated data is structurally valid")
}

/// Instance where every family, including `R` and `Q`, is independent of the
/// initial time (the fully time-consistent shape).
pub fn random_t_independent_problem(
    seed: u64,
    horizon: usize,
    n: usize,
    m: usize,
    definite: bool,
) -> ProblemData {
    let mut r = rng(seed.wrapping_mul(0xA0761D6478BD642F).wrapping_add(3));
    let a: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, n, 0.8)).collect();
    let b: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, m, 0.8)).collect();
    let c: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, n, 0.6)).collect();
    let d: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, m, 0.6)).collect();
    let q: Vec<Matrix> = (0..horizon)
        .map(|_| {
            if definite {
                random_psd(&mut r, n, 1.0)
            } else {
                random_symmetric(&mut r, n, 1.0)
            }
        })
        .collect();
    let rr: Vec<Matrix> = (0..horizon)
        .map(|_| {
            if definite {
                random_pd(&mut r, m, 1.0)
            } else {
                random_symmetric(&mut r, m, 1.0)
            }
        })
        .collect();
    let g = if definite {
        random_psd(&mut r, n, 1.0)
    } else {
        random_symmetric(&mut r, n, 1.0)
    };
    ProblemData::new(
        n,
        m,
        Family::per_k(&a),
        Family::per_k(&b),
        Family::per_k(&c),
        Family::per_k(&d),
        Family::per_k(&q),
        Family::per_k(&rr),
        vec![g; horizon],
    )
    .expect("generated data is structurally valid")
}

/// Stationary definite instance: PSD `Q_k` and `G` shared across initial
/// times, positive definite `R_{t,k}`; both solution concepts exist.
pub fn random_definite_problem(seed: u64, horizon: usize, n: usize, m: usize) -> ProblemData {
    let mut r = rng(seed.wrapping_mul(0xE7037ED1A0B428DB).wrapping_add(11));
    let a: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, n, 0.8)).collect();
    let b: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, m, 0.8)).collect();
    let c: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, n, 0.6)).collect();
    let d: Vec<Matrix> = (0..horizon).map(|_| random_matrix(&mut r, n, m, 0.6)).collect();
    let q: Vec<Matrix> = (0..horizon).map(|_| random_psd(&mut r, n, 1.0)).collect();
    let g = random_psd(&mut r, n, 1.0);
    let mut r_rows = Vec::new();
    for t in 0..horizon {
        let mut row = Vec::new();
        for _k in t..horizon {
            row.push(random_pd(&mut r, m, 1.0));
        }
        r_rows.push(row);
    }
    ProblemData::new(
        n,
        m,
        Family::per_k(&a),
        Family::per_k(&b),
        Family::per_k(&c),
        Family::per_k(&d),
        Family::per_k(&q),
        Family { rows: r_rows },
        vec![g; horizon],
    )
    .expect("generated data is structurally valid")
}
