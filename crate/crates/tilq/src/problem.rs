//! Data model for a time-inconsistent LQ problem instance: the full
//! (t, k)-indexed coefficient family, structural-mode detection, validation,
//! discounting-based constructors and JSON file ingestion.

use std::fmt;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, is_symmetric, Matrix, Tolerances, Vector};

/// Structural mode of the coefficient family, ordered by specificity.
///
/// `TIndependentDynamics` means `A, B, C, D` do not depend on the initial
/// time; `Stationary` additionally requires `Q` and `G` to be independent of
/// the initial time. The control weights `R` may vary with the initial time
/// in every mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    General,
    TIndependentDynamics,
    Stationary,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::General => "general",
            Mode::TIndependentDynamics => "t_independent_dynamics",
            Mode::Stationary => "stationary",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "general" => Ok(Mode::General),
            "t_independent_dynamics" => Ok(Mode::TIndependentDynamics),
            "stationary" => Ok(Mode::Stationary),
            other => Err(Error::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A (t, k)-indexed family of matrices with t in `0..N` and k in `t..N`,
/// stored as one row per initial time.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub rows: Vec<Vec<Matrix>>,
}

impl Family {
    /// Builds a complete family from a closure over (t, k).
    pub fn from_fn(horizon: usize, f: impl Fn(usize, usize) -> Matrix) -> Family {
        let rows = (0..horizon)
            .map(|t| (t..horizon).map(|k| f(t, k)).collect())
            .collect();
        Family { rows }
    }

    /// t-independent family from per-k matrices (`mats[k]` used for every t).
    pub fn per_k(mats: &[Matrix]) -> Family {
        Family::from_fn(mats.len(), |_, k| mats[k].clone())
    }

    /// Fully constant family.
    pub fn constant(horizon: usize, m: Matrix) -> Family {
        Family::from_fn(horizon, |_, _| m.clone())
    }

    pub fn get(&self, t: usize, k: usize) -> &Matrix {
        self.try_get(t, k)
            .unwrap_or_else(|| panic!("family entry ({t},{k}) missing"))
    }

    pub fn try_get(&self, t: usize, k: usize) -> Option<&Matrix> {
        self.rows.get(t).and_then(|row| k.checked_sub(t).and_then(|o| row.get(o)))
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }
}

/// A single reported invariant violation, with index coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl Violation {
    fn new(location: impl Into<String>, message: impl Into<String>) -> Violation {
        Violation {
            location: location.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Admissible initial time-state pair `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPair {
    pub t: usize,
    pub x: Vector,
}

impl InitialPair {
    pub fn new(t: usize, x: Vector) -> InitialPair {
        InitialPair { t, x }
    }
}

/// A time-inconsistent LQ problem instance.
///
/// Dynamics step k anchored at initial time t:
/// `X_{k+1} = A_{t,k} X_k + B_{t,k} u_k + (C_{t,k} X_k + D_{t,k} u_k) w_k`,
/// with cost `sum_k E[X_k' Q_{t,k} X_k + u_k' R_{t,k} u_k] + E[X_N' G_t X_N]`.
/// The noise is any martingale difference sequence with unit conditional
/// second moment; the problem data carries no distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    pub horizon: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub a: Family,
    pub b: Family,
    pub c: Family,
    pub d: Family,
    pub q: Family,
    pub r: Family,
    pub g: Vec<Matrix>,
    pub mode: Mode,
}

impl ProblemData {
    /// Assembles and validates a problem; the mode is detected from the data.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        a: Family,
        b: Family,
        c: Family,
        d: Family,
        q: Family,
        r: Family,
        g: Vec<Matrix>,
    ) -> Result<ProblemData> {
        let horizon = a.horizon();
        let mut p = ProblemData {
            horizon,
            state_dim,
            control_dim,
            a,
            b,
            c,
            d,
            q,
            r,
            g,
            mode: Mode::General,
        };
        let violations = p.validate();
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        p.mode = p.detect_mode(&Tolerances::default());
        Ok(p)
    }

    pub fn a(&self, t: usize, k: usize) -> &Matrix {
        self.a.get(t, k)
    }
    pub fn b(&self, t: usize, k: usize) -> &Matrix {
        self.b.get(t, k)
    }
    pub fn c(&self, t: usize, k: usize) -> &Matrix {
        self.c.get(t, k)
    }
    pub fn d(&self, t: usize, k: usize) -> &Matrix {
        self.d.get(t, k)
    }
    pub fn q(&self, t: usize, k: usize) -> &Matrix {
        self.q.get(t, k)
    }
    pub fn r(&self, t: usize, k: usize) -> &Matrix {
        self.r.get(t, k)
    }
    pub fn g(&self, t: usize) -> &Matrix {
        &self.g[t]
    }

    /// Reports every invariant violation; an empty list means valid.
    /// Read-only: nothing is repaired.
    pub fn validate(&self) -> Vec<Violation> {
        self.validate_with(&Tolerances::default())
    }

    pub fn validate_with(&self, tol: &Tolerances) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.state_dim;
        let m = self.control_dim;
        if self.horizon == 0 {
            out.push(Violation::new("N", "horizon must be at least 1"));
        }
        if n == 0 {
            out.push(Violation::new("n", "state dimension must be at least 1"));
        }
        if m == 0 {
            out.push(Violation::new("m", "control dimension must be at least 1"));
        }
        if self.horizon == 0 || n == 0 || m == 0 {
            return out;
        }

        let families: [(&str, &Family, (usize, usize)); 6] = [
            ("A", &self.a, (n, n)),
            ("B", &self.b, (n, m)),
            ("C", &self.c, (n, n)),
            ("D", &self.d, (n, m)),
            ("Q", &self.q, (n, n)),
            ("R", &self.r, (m, m)),
        ];
        for (name, fam, shape) in families {
            if fam.rows.len() != self.horizon {
                out.push(Violation::new(
                    name,
                    format!("expected {} rows, found {}", self.horizon, fam.rows.len()),
                ));
            }
            for t in 0..self.horizon.min(fam.rows.len()) {
                let expect = self.horizon - t;
                if fam.rows[t].len() != expect {
                    out.push(Violation::new(
                        format!("{name}[t={t}]"),
                        format!("expected entries for k={t}..{}, found {}", self.horizon - 1, fam.rows[t].len()),
                    ));
                }
                for (off, mat) in fam.rows[t].iter().enumerate() {
                    let k = t + off;
                    let loc = format!("{name}[{t},{k}]");
                    if mat.shape() != shape {
                        out.push(Violation::new(
                            &loc,
                            format!("expected {}x{}, found {}x{}", shape.0, shape.1, mat.nrows(), mat.ncols()),
                        ));
                        continue;
                    }
                    if !mat.iter().all(|v| v.is_finite()) {
                        out.push(Violation::new(&loc, "non-finite entry"));
                    }
                }
            }
        }
        if self.g.len() != self.horizon {
            out.push(Violation::new(
                "G",
                format!("expected {} terminal weights, found {}", self.horizon, self.g.len()),
            ));
        }
        for (t, mat) in self.g.iter().enumerate() {
            let loc = format!("G[{t}]");
            if mat.shape() != (n, n) {
                out.push(Violation::new(
                    &loc,
                    format!("expected {n}x{n}, found {}x{}", mat.nrows(), mat.ncols()),
                ));
                continue;
            }
            if !mat.iter().all(|v| v.is_finite()) {
                out.push(Violation::new(&loc, "non-finite entry"));
            }
            if !is_symmetric(mat, tol) {
                out.push(Violation::new(
                    &loc,
                    format!("not symmetric (asymmetry {:.3e})", asymmetry(mat)),
                ));
            }
        }
        // Symmetry of the weight families.
        for (name, fam) in [("Q", &self.q), ("R", &self.r)] {
            for t in 0..fam.rows.len() {
                for (off, mat) in fam.rows[t].iter().enumerate() {
                    if mat.is_square() && !is_symmetric(mat, tol) {
                        out.push(Violation::new(
                            format!("{name}[{t},{}]", t + off),
                            format!("not symmetric (asymmetry {:.3e})", asymmetry(mat)),
                        ));
                    }
                }
            }
        }
        // A declared mode must be implied by the data.
        if out.is_empty() {
            let detected = self.detect_mode(tol);
            if self.mode > detected {
                out.push(Violation::new(
                    "mode",
                    format!("declared {} but data only supports {detected}", self.mode),
                ));
            }
        }
        out
    }

    /// Returns the most specific mode whose defining equalities hold within
    /// `residual_tol` relative to the matrix scale.
    pub fn detect_mode(&self, tol: &Tolerances) -> Mode {
        let close = |x: &Matrix, y: &Matrix| -> bool {
            (x - y).norm() <= tol.residual_tol * 1.0f64.max(x.norm()).max(y.norm())
        };
        let t_indep = |fam: &Family| -> bool {
            for k in 0..self.horizon {
                for t in 1..=k {
                    if !close(fam.get(t, k), fam.get(0, k)) {
                        return false;
                    }
                }
            }
            true
        };
        let dynamics_indep =
            t_indep(&self.a) && t_indep(&self.b) && t_indep(&self.c) && t_indep(&self.d);
        if !dynamics_indep {
            return Mode::General;
        }
        let g_indep = self.g.iter().all(|g| close(g, &self.g[0]));
        if t_indep(&self.q) && g_indep {
            Mode::Stationary
        } else {
            Mode::TIndependentDynamics
        }
    }

    /// Sub-problem on the horizon `{t, .., N}`, reindexed to start at zero.
    pub fn restrict(&self, t: usize) -> Result<ProblemData> {
        if t >= self.horizon {
            return Err(Error::invalid(format!(
                "restriction start {t} out of range for horizon {}",
                self.horizon
            )));
        }
        let sub = self.horizon - t;
        let slice = |fam: &Family| Family::from_fn(sub, |tt, kk| fam.get(t + tt, t + kk).clone());
        ProblemData::new(
            self.state_dim,
            self.control_dim,
            slice(&self.a),
            slice(&self.b),
            slice(&self.c),
            slice(&self.d),
            slice(&self.q),
            slice(&self.r),
            self.g[t..].to_vec(),
        )
    }

    /// Canonical JSON encoding in the fully explicit (t, k)-indexed layout.
    pub fn to_json(&self) -> Value {
        let fam = |f: &Family| -> Value {
            Value::Array(
                f.rows
                    .iter()
                    .map(|row| Value::Array(row.iter().map(matrix_to_json).collect()))
                    .collect(),
            )
        };
        json!({
            "N": self.horizon,
            "n": self.state_dim,
            "m": self.control_dim,
            "mode": self.mode.as_str(),
            "A": fam(&self.a),
            "B": fam(&self.b),
            "C": fam(&self.c),
            "D": fam(&self.d),
            "Q": fam(&self.q),
            "R": fam(&self.r),
            "G": Value::Array(self.g.iter().map(matrix_to_json).collect()),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("JSON encoding cannot fail")
    }
}

pub fn matrix_to_json(m: &Matrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Explicit symmetrization utility; validation never repairs silently.
pub fn symmetrize(m: &Matrix) -> Matrix {
    crate::linalg::sym_part(m)
}

// ---------------------------------------------------------------------------
// Discounting-based construction
// ---------------------------------------------------------------------------

/// Discount weight profile applied to base weight matrices by lag `k - t`.
#[derive(Debug, Clone, PartialEq)]
pub enum DiscountKind {
    /// `w(lag) = exp(-rate * lag)`.
    Exponential { rate: f64 },
    /// `w(lag) = 1 / (1 + lag)`.
    Hyperbolic,
    /// Explicit weights per lag; `weights[0]` must equal 1.
    Custom { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountSpec {
    pub kind: DiscountKind,
    pub base_q: Matrix,
    pub base_r: Matrix,
    pub base_g: Matrix,
}

impl DiscountSpec {
    pub fn weight(&self, lag: usize) -> Result<f64> {
        let w = match &self.kind {
            DiscountKind::Exponential { rate } => (-rate * lag as f64).exp(),
            DiscountKind::Hyperbolic => 1.0 / (1.0 + lag as f64),
            DiscountKind::Custom { weights } => *weights.get(lag).ok_or_else(|| {
                Error::invalid(format!("custom discount weights missing lag {lag}"))
            })?,
        };
        if w.is_nan() || w <= 0.0 || !w.is_finite() {
            return Err(Error::invalid(format!(
                "discount weight at lag {lag} must be strictly positive, got {w}"
            )));
        }
        Ok(w)
    }
}

/// t-independent dynamics given per step k.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedDynamics {
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub c: Vec<Matrix>,
    pub d: Vec<Matrix>,
}

/// Builds a problem whose weights are `weight(k - t) * base` per the discount
/// profile, with `G_t = weight(N - t) * base_G`.
pub fn from_discounting(
    spec: &DiscountSpec,
    dynamics: &SharedDynamics,
    horizon: usize,
) -> Result<ProblemData> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    for (name, fam) in [
        ("A", &dynamics.a),
        ("B", &dynamics.b),
        ("C", &dynamics.c),
        ("D", &dynamics.d),
    ] {
        if fam.len() != horizon {
            return Err(Error::invalid(format!(
                "dynamics family {name} must have {horizon} entries, found {}",
                fam.len()
            )));
        }
    }
    if let DiscountKind::Custom { weights } = &spec.kind {
        if weights.len() < horizon + 1 {
            return Err(Error::invalid(format!(
                "custom discount needs weights for lags 0..={horizon}, found {}",
                weights.len()
            )));
        }
        if (weights[0] - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("discount weight at lag 0 must equal 1"));
        }
    }
    // Fail fast on any non-positive weight over the used lag range.
    for lag in 0..=horizon {
        spec.weight(lag)?;
    }
    let q = Family::from_fn(horizon, |t, k| &spec.base_q * spec.weight(k - t).unwrap());
    let r = Family::from_fn(horizon, |t, k| &spec.base_r * spec.weight(k - t).unwrap());
    let g = (0..horizon)
        .map(|t| &spec.base_g * spec.weight(horizon - t).unwrap())
        .collect();
    let n = spec.base_q.nrows();
    let m = spec.base_r.nrows();
    ProblemData::new(
        n,
        m,
        Family::per_k(&dynamics.a),
        Family::per_k(&dynamics.b),
        Family::per_k(&dynamics.c),
        Family::per_k(&dynamics.d),
        q,
        r,
        g,
    )
}

// ---------------------------------------------------------------------------
// Problem-file ingestion
// ---------------------------------------------------------------------------

type MatrixRows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FamilyDoc {
    Single(MatrixRows),
    PerK(Vec<MatrixRows>),
    Full(Vec<Vec<MatrixRows>>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TerminalDoc {
    Single(MatrixRows),
    PerT(Vec<MatrixRows>),
}

#[derive(Debug, Deserialize)]
struct ProblemDoc {
    #[serde(rename = "N")]
    horizon: usize,
    n: usize,
    m: usize,
    mode: Option<String>,
    #[serde(rename = "A")]
    a: FamilyDoc,
    #[serde(rename = "B")]
    b: FamilyDoc,
    #[serde(rename = "C")]
    c: FamilyDoc,
    #[serde(rename = "D")]
    d: FamilyDoc,
    #[serde(rename = "Q")]
    q: FamilyDoc,
    #[serde(rename = "R")]
    r: FamilyDoc,
    #[serde(rename = "G")]
    g: TerminalDoc,
}

#[derive(Debug, Deserialize)]
struct DiscountDoc {
    kind: String,
    rate: Option<f64>,
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct DynamicsDoc {
    #[serde(rename = "A")]
    a: FamilyDoc,
    #[serde(rename = "B")]
    b: FamilyDoc,
    #[serde(rename = "C")]
    c: FamilyDoc,
    #[serde(rename = "D")]
    d: FamilyDoc,
}

#[derive(Debug, Deserialize)]
struct DiscountedProblemDoc {
    #[serde(rename = "N")]
    horizon: usize,
    discount: DiscountDoc,
    #[serde(rename = "base_Q", alias = "base_q")]
    base_q: MatrixRows,
    #[serde(rename = "base_R", alias = "base_r")]
    base_r: MatrixRows,
    #[serde(rename = "base_G", alias = "base_g")]
    base_g: MatrixRows,
    dynamics: DynamicsDoc,
}

fn rows_to_matrix(rows: &MatrixRows, loc: &str) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::Parse {
            path: loc.to_string(),
            message: "matrix has no rows".into(),
        });
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse {
            path: loc.to_string(),
            message: "matrix rows are empty or ragged".into(),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(Matrix::from_row_slice(rows.len(), cols, &flat))
}

fn expand_family(doc: &FamilyDoc, horizon: usize, name: &str) -> Result<Family> {
    match doc {
        FamilyDoc::Single(m) => Ok(Family::constant(horizon, rows_to_matrix(m, name)?)),
        FamilyDoc::PerK(per_k) => {
            if per_k.len() != horizon {
                return Err(Error::Parse {
                    path: name.to_string(),
                    message: format!("per-k layout needs {horizon} matrices, found {}", per_k.len()),
                });
            }
            let mats = per_k
                .iter()
                .enumerate()
                .map(|(k, m)| rows_to_matrix(m, &format!("{name}[{k}]")))
                .collect::<Result<Vec<_>>>()?;
            Ok(Family::per_k(&mats))
        }
        FamilyDoc::Full(rows) => {
            if rows.len() != horizon {
                return Err(Error::Parse {
                    path: name.to_string(),
                    message: format!("full layout needs {horizon} rows, found {}", rows.len()),
                });
            }
            let parsed = rows
                .iter()
                .enumerate()
                .map(|(t, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(off, m)| rows_to_matrix(m, &format!("{name}[{t},{}]", t + off)))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Family { rows: parsed })
        }
    }
}

/// Parses a problem document (either explicit families or the discounted
/// form) and returns validated `ProblemData`.
pub fn load_problem(document: &str) -> Result<ProblemData> {
    let value: Value = serde_json::from_str(document).map_err(|e| Error::Parse {
        path: "<document>".into(),
        message: e.to_string(),
    })?;
    if value.get("discount").is_some() {
        let doc: DiscountedProblemDoc = deserialize_at(&value)?;
        load_discounted(doc)
    } else {
        let doc: ProblemDoc = deserialize_at(&value)?;
        load_direct(doc)
    }
}

fn deserialize_at<T: serde::de::DeserializeOwned>(value: &Value) -> Result<T> {
    let deserializer = value.clone();
    serde_path_to_error::deserialize(deserializer).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn load_direct(doc: ProblemDoc) -> Result<ProblemData> {
    let horizon = doc.horizon;
    if horizon == 0 {
        return Err(Error::Validation(vec![Violation::new(
            "N",
            "horizon must be at least 1",
        )]));
    }
    let a = expand_family(&doc.a, horizon, "A")?;
    let b = expand_family(&doc.b, horizon, "B")?;
    let c = expand_family(&doc.c, horizon, "C")?;
    let d = expand_family(&doc.d, horizon, "D")?;
    let q = expand_family(&doc.q, horizon, "Q")?;
    let r = expand_family(&doc.r, horizon, "R")?;
    let g = match &doc.g {
        TerminalDoc::Single(m) => vec![rows_to_matrix(m, "G")?; horizon],
        TerminalDoc::PerT(mats) => {
            if mats.len() != horizon {
                return Err(Error::Parse {
                    path: "G".into(),
                    message: format!("per-t layout needs {horizon} matrices, found {}", mats.len()),
                });
            }
            mats.iter()
                .enumerate()
                .map(|(t, m)| rows_to_matrix(m, &format!("G[{t}]")))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut p = ProblemData::new(doc.n, doc.m, a, b, c, d, q, r, g)?;
    if let Some(mode) = &doc.mode {
        let declared = Mode::parse(mode)?;
        if declared > p.mode {
            return Err(Error::Validation(vec![Violation::new(
                "mode",
                format!("declared {declared} but data only supports {}", p.mode),
            )]));
        }
        p.mode = declared;
    }
    Ok(p)
}

fn load_discounted(doc: DiscountedProblemDoc) -> Result<ProblemData> {
    let horizon = doc.horizon;
    let kind = match doc.discount.kind.as_str() {
        "exponential" => DiscountKind::Exponential {
            rate: doc.discount.rate.ok_or_else(|| Error::Parse {
                path: "discount.rate".into(),
                message: "exponential discounting requires a rate".into(),
            })?,
        },
        "hyperbolic" => DiscountKind::Hyperbolic,
        "custom" => DiscountKind::Custom {
            weights: doc.discount.weights.ok_or_else(|| Error::Parse {
                path: "discount.weights".into(),
                message: "custom discounting requires explicit weights".into(),
            })?,
        },
        other => {
            return Err(Error::Parse {
                path: "discount.kind".into(),
                message: format!("unknown discount kind {other:?}"),
            })
        }
    };
    let spec = DiscountSpec {
        kind,
        base_q: rows_to_matrix(&doc.base_q, "base_Q")?,
        base_r: rows_to_matrix(&doc.base_r, "base_R")?,
        base_g: rows_to_matrix(&doc.base_g, "base_G")?,
    };
    let expand_dyn = |fdoc: &FamilyDoc, name: &str| -> Result<Vec<Matrix>> {
        let fam = expand_family(fdoc, horizon, name)?;
        Ok((0..horizon).map(|k| fam.get(0, k).clone()).collect())
    };
    let dynamics = SharedDynamics {
        a: expand_dyn(&doc.dynamics.a, "dynamics.A")?,
        b: expand_dyn(&doc.dynamics.b, "dynamics.B")?,
        c: expand_dyn(&doc.dynamics.c, "dynamics.C")?,
        d: expand_dyn(&doc.dynamics.d, "dynamics.D")?,
    };
    from_discounting(&spec, &dynamics, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::mat;
    use proptest::prelude::*;

    #[test]
    fn example_5_1_validates_clean() {
        let p = fixtures::example_5_1();
        assert!(p.validate().is_empty());
        assert_eq!(p.mode, Mode::Stationary);
    }

    #[test]
    fn asymmetric_r_entry_is_reported_once() {
        let mut p = fixtures::example_5_1();
        p.r.rows[0][0][(0, 1)] += 0.1;
        let violations = p.validate();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].location, "R[0,0]");
    }

    #[test]
    fn missing_q_entry_is_a_completeness_violation() {
        let mut p = fixtures::example_5_1();
        p.q.rows[1].pop(); // drops Q[1,2] for N=3
        let violations = p.validate();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].location.starts_with("Q[t=1]"));
    }

    #[test]
    fn mode_detection_matches_examples() {
        let tol = Tolerances::default();
        assert_eq!(fixtures::example_5_1().detect_mode(&tol), Mode::Stationary);
        assert_eq!(fixtures::example_5_3().detect_mode(&tol), Mode::General);

        // Any single-period problem is stationary.
        let one = ProblemData::new(
            1,
            1,
            Family::constant(1, mat(1, 1, &[1.0])),
            Family::constant(1, mat(1, 1, &[1.0])),
            Family::constant(1, mat(1, 1, &[0.0])),
            Family::constant(1, mat(1, 1, &[0.0])),
            Family::constant(1, mat(1, 1, &[1.0])),
            Family::constant(1, mat(1, 1, &[1.0])),
            vec![mat(1, 1, &[1.0])],
        )
        .unwrap();
        assert_eq!(one.mode, Mode::Stationary);
    }

    #[test]
    fn mode_detection_demotes_on_perturbation() {
        let mut p = fixtures::example_5_1();
        assert_eq!(p.detect_mode(&Tolerances::default()), Mode::Stationary);
        p.q.rows[0][1][(0, 0)] += 1e-3; // Q[0,1] no longer matches Q[1,1]
        assert_eq!(
            p.detect_mode(&Tolerances::default()),
            Mode::TIndependentDynamics
        );
    }

    #[test]
    fn hyperbolic_discounting_reproduces_scalar_cost_family() {
        let p = fixtures::example_1_1();
        assert_eq!(p.horizon, 4);
        for t in 0..4 {
            for k in t..4 {
                let expect = 1.0 / (1.0 + (k - t) as f64);
                assert_eq!(p.r(t, k)[(0, 0)], expect, "R[{t},{k}]");
                assert_eq!(p.q(t, k)[(0, 0)], 0.0);
            }
            let expect_g = 2.0 / (1.0 + (4 - t) as f64);
            assert_eq!(p.g(t)[(0, 0)], expect_g, "G[{t}]");
        }
        assert_eq!(p.mode, Mode::TIndependentDynamics);
    }

    #[test]
    fn zero_rate_exponential_is_fully_stationary() {
        let spec = DiscountSpec {
            kind: DiscountKind::Exponential { rate: 0.0 },
            base_q: mat(1, 1, &[1.0]),
            base_r: mat(1, 1, &[2.0]),
            base_g: mat(1, 1, &[3.0]),
        };
        let dynamics = SharedDynamics {
            a: vec![mat(1, 1, &[1.0]); 3],
            b: vec![mat(1, 1, &[1.0]); 3],
            c: vec![mat(1, 1, &[0.5]); 3],
            d: vec![mat(1, 1, &[0.0]); 3],
        };
        let p = from_discounting(&spec, &dynamics, 3).unwrap();
        assert_eq!(p.mode, Mode::Stationary);

        let custom = DiscountSpec {
            kind: DiscountKind::Custom {
                weights: vec![1.0; 4],
            },
            ..spec
        };
        let p2 = from_discounting(&custom, &dynamics, 3).unwrap();
        assert_eq!(p2, p);
    }

    #[test]
    fn negative_custom_weight_is_rejected() {
        let spec = DiscountSpec {
            kind: DiscountKind::Custom {
                weights: vec![1.0, -0.5, 0.2, 0.1],
            },
            base_q: mat(1, 1, &[1.0]),
            base_r: mat(1, 1, &[1.0]),
            base_g: mat(1, 1, &[1.0]),
        };
        let dynamics = SharedDynamics {
            a: vec![mat(1, 1, &[1.0]); 3],
            b: vec![mat(1, 1, &[1.0]); 3],
            c: vec![mat(1, 1, &[0.0]); 3],
            d: vec![mat(1, 1, &[0.0]); 3],
        };
        assert!(matches!(
            from_discounting(&spec, &dynamics, 3),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn load_rejects_empty_and_zero_horizon_documents() {
        assert!(matches!(load_problem(""), Err(Error::Parse { .. })));
        let doc = r#"{"N":0,"n":1,"m":1,"A":[[1]],"B":[[1]],"C":[[0]],"D":[[0]],"Q":[[1]],"R":[[1]],"G":[[1]]}"#;
        assert!(matches!(load_problem(doc), Err(Error::Validation(_))));
    }

    #[test]
    fn load_example_5_2_matches_hand_built() {
        let p = fixtures::example_5_2();
        let loaded = load_problem(&p.to_json_string()).unwrap();
        assert_eq!(loaded, p);
    }

    #[test]
    fn compact_layouts_expand() {
        let doc = r#"{
            "N": 2, "n": 1, "m": 1,
            "A": [[2.0]],
            "B": [[[1.0]], [[0.5]]],
            "C": [[0.0]], "D": [[0.0]],
            "Q": [[1.0]], "R": [[1.0]], "G": [[3.0]]
        }"#;
        let p = load_problem(doc).unwrap();
        assert_eq!(p.a(0, 1)[(0, 0)], 2.0);
        assert_eq!(p.b(0, 0)[(0, 0)], 1.0);
        assert_eq!(p.b(1, 1)[(0, 0)], 0.5);
        assert_eq!(p.b(0, 1)[(0, 0)], 0.5);
        assert_eq!(p.g(1)[(0, 0)], 3.0);
    }

    #[test]
    fn discounted_document_round_trips_through_expansion() {
        let doc = r#"{
            "N": 4,
            "discount": {"kind": "hyperbolic"},
            "base_Q": [[0.0]], "base_R": [[1.0]], "base_G": [[2.0]],
            "dynamics": {"A": [[1.0]], "B": [[1.0]], "C": [[1.0]], "D": [[0.0]]}
        }"#;
        let p = load_problem(doc).unwrap();
        assert_eq!(p, fixtures::example_1_1());
    }

    #[test]
    fn declared_mode_must_be_supported() {
        let p = fixtures::example_5_3(); // general data
        let mut v = p.to_json();
        v["mode"] = serde_json::json!("stationary");
        let err = load_problem(&serde_json::to_string(&v).unwrap());
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    proptest! {
        // Round-trip: serialize then load returns the identical problem.
        #[test]
        fn json_round_trip_is_identity(seed in 0u64..256) {
            let p = crate::test_support::random_problem(seed, 3, 2, 2, false);
            let loaded = load_problem(&p.to_json_string()).unwrap();
            prop_assert_eq!(loaded, p);
        }
    }
}
