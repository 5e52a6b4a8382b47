//! Trajectory propagation for the controlled stochastic difference equation,
//! cost evaluation, exact expectations by exhaustive enumeration of finitely
//! supported noise paths, backward adjoint processes, and seeded Monte Carlo.

#![allow(clippy::needless_range_loop)] // index loops mirror the recursions

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::problem::{InitialPair, ProblemData};

/// Hard cap on exhaustive enumeration depth (paths grow as support^steps).
pub const MAX_ENUMERATION_STEPS: usize = 20;

/// One-step noise distribution; every variant has conditional mean 0 and
/// conditional second moment 1.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Values +1 and -1, equiprobable.
    Rademacher,
    /// Standard normal.
    Gaussian,
    /// Values `a` (probability `p`) and `b` (probability `1 - p`).
    TwoPoint { p: f64, a: f64, b: f64 },
}

impl NoiseModel {
    /// Two-point model with prescribed success probability; the support is
    /// derived so both moment conditions hold exactly.
    pub fn two_point_from_prob(p: f64) -> Result<NoiseModel> {
        if !(0.0 < p && p < 1.0) {
            return Err(Error::invalid("two-point probability must lie in (0, 1)"));
        }
        let a = ((1.0 - p) / p).sqrt();
        let b = -(p / (1.0 - p)).sqrt();
        Ok(NoiseModel::TwoPoint { p, a, b })
    }

    /// Checks the martingale-difference moment conditions.
    pub fn validate(&self) -> Result<()> {
        if let NoiseModel::TwoPoint { p, a, b } = self {
            if !(0.0 < *p && *p < 1.0) {
                return Err(Error::invalid("two-point probability must lie in (0, 1)"));
            }
            let mean = p * a + (1.0 - p) * b;
            let second = p * a * a + (1.0 - p) * b * b;
            if mean.abs() > 1e-12 || (second - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "two-point noise must have mean 0 and second moment 1, got {mean:.3e} and {second}"
                )));
            }
        }
        Ok(())
    }

    /// Support as (value, probability) pairs; `None` for continuous models.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            NoiseModel::Rademacher => Some(vec![(1.0, 0.5), (-1.0, 0.5)]),
            NoiseModel::TwoPoint { p, a, b } => Some(vec![(*a, *p), (*b, 1.0 - *p)]),
            NoiseModel::Gaussian => None,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> (f64, Option<u8>) {
        match self {
            NoiseModel::Rademacher => {
                if rng.random::<bool>() {
                    (1.0, Some(0))
                } else {
                    (-1.0, Some(1))
                }
            }
            NoiseModel::TwoPoint { p, a, b } => {
                if rng.random::<f64>() < *p {
                    (*a, Some(0))
                } else {
                    (*b, Some(1))
                }
            }
            NoiseModel::Gaussian => {
                // Box-Muller; one draw per call keeps the stream reproducible.
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random::<f64>();
                (
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos(),
                    None,
                )
            }
        }
    }
}

/// A realized noise sequence with its probability (0 for continuous models)
/// and, for finitely supported models, the support-branch indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub values: Vec<f64>,
    pub probability: f64,
    pub branches: Option<Vec<u8>>,
}

impl NoisePath {
    pub fn deterministic(values: Vec<f64>) -> NoisePath {
        NoisePath {
            values,
            probability: 0.0,
            branches: None,
        }
    }
}

/// A simulated state/control record along one noise path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: InitialPair,
    /// `X_t, .., X_N`.
    pub states: Vec<Vector>,
    /// `u_t, .., u_{N-1}`.
    pub controls: Vec<Vector>,
    pub path: NoisePath,
}

/// Per-node controls over the enumeration tree: entry `[k - start][node]`
/// where a node at level L is identified by its branch-index prefix in
/// big-endian order.
#[derive(Debug, Clone, PartialEq)]
pub struct PathControls {
    pub start: usize,
    pub branch_count: usize,
    pub per_step: Vec<Vec<Vector>>,
}

impl PathControls {
    pub fn node_index(prefix: &[u8], branch_count: usize) -> usize {
        prefix
            .iter()
            .fold(0usize, |acc, b| acc * branch_count + *b as usize)
    }

    pub fn control(&self, k: usize, prefix: &[u8]) -> Result<&Vector> {
        let step = k
            .checked_sub(self.start)
            .ok_or_else(|| Error::invalid("control requested before the policy start"))?;
        let level = self
            .per_step
            .get(step)
            .ok_or_else(|| Error::invalid(format!("no controls recorded for step {k}")))?;
        level
            .get(Self::node_index(prefix, self.branch_count))
            .ok_or_else(|| Error::invalid(format!("control node out of range at step {k}")))
    }
}

/// How controls are produced along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    /// `u_k = K_k X_k` along the equilibrium state; indexed by absolute k.
    GainSequence(Vec<Matrix>),
    /// Linear feedback strategy `u_k = Phi_k X_k`; identical propagation to a
    /// gain sequence, but verified under the responding-continuation notion.
    Strategy(Vec<Matrix>),
    /// Controls given per step and enumeration-tree node (measurable with
    /// respect to the noise history up to the previous step).
    FixedPathControls(PathControls),
}

impl PolicySpec {
    fn control_at(&self, k: usize, state: &Vector, prefix: &[u8]) -> Result<Vector> {
        match self {
            PolicySpec::GainSequence(gains) | PolicySpec::Strategy(gains) => gains
                .get(k)
                .map(|g| g * state)
                .ok_or_else(|| Error::invalid(format!("no gain for step {k}"))),
            PolicySpec::FixedPathControls(table) => Ok(table.control(k, prefix)?.clone()),
        }
    }
}

/// Propagates the equilibrium-state recursion: step k uses the diagonal
/// coefficients `A_{k,k}, B_{k,k}, C_{k,k}, D_{k,k}`.
pub fn simulate(
    p: &ProblemData,
    start: &InitialPair,
    policy: &PolicySpec,
    path: &NoisePath,
) -> Result<Trajectory> {
    let steps = p
        .horizon
        .checked_sub(start.t)
        .ok_or_else(|| Error::invalid("start time beyond the horizon"))?;
    if path.values.len() != steps {
        return Err(Error::invalid(format!(
            "path length {} does not match remaining horizon {steps}",
            path.values.len()
        )));
    }
    if start.x.len() != p.state_dim {
        return Err(Error::invalid("initial state dimension mismatch"));
    }
    if matches!(policy, PolicySpec::FixedPathControls(_)) && path.branches.is_none() {
        return Err(Error::invalid(
            "fixed-path controls need branch indices on the noise path",
        ));
    }
    let empty: Vec<u8> = Vec::new();
    let branches = path.branches.as_ref().unwrap_or(&empty);
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(start.x.clone());
    for (j, k) in (start.t..p.horizon).enumerate() {
        let x = &states[j];
        let prefix = if branches.is_empty() { &[][..] } else { &branches[..j] };
        let u = policy.control_at(k, x, prefix)?;
        let w = path.values[j];
        let next = p.a(k, k) * x
            + p.b(k, k) * &u
            + (p.c(k, k) * x + p.d(k, k) * &u) * w;
        controls.push(u);
        states.push(next);
    }
    Ok(Trajectory {
        start: start.clone(),
        states,
        controls,
        path: path.clone(),
    })
}

/// Pathwise cost with the weight row anchored at `anchor_t` (no expectation):
/// `sum_k X' Q_{anchor,k} X + u' R_{anchor,k} u  +  X_N' G_anchor X_N`.
pub fn evaluate_cost(p: &ProblemData, anchor_t: usize, traj: &Trajectory) -> Result<f64> {
    if anchor_t < traj.start.t || anchor_t >= p.horizon {
        return Err(Error::invalid(format!(
            "trajectory starting at {} does not cover anchor {anchor_t}",
            traj.start.t
        )));
    }
    if traj.states.len() != p.horizon - traj.start.t + 1 {
        return Err(Error::invalid("trajectory does not reach the horizon"));
    }
    let mut total = 0.0;
    for k in anchor_t..p.horizon {
        let x = &traj.states[k - traj.start.t];
        let u = &traj.controls[k - traj.start.t];
        total += (x.transpose() * p.q(anchor_t, k) * x)[(0, 0)];
        total += (u.transpose() * p.r(anchor_t, k) * u)[(0, 0)];
    }
    let xn = &traj.states[p.horizon - traj.start.t];
    total += (xn.transpose() * p.g(anchor_t) * xn)[(0, 0)];
    Ok(total)
}

/// All noise paths of the given length for a finitely supported model, in
/// big-endian branch order (the first step varies slowest).
pub fn enumerate_paths(noise: &NoiseModel, steps: usize) -> Result<Vec<NoisePath>> {
    noise.validate()?;
    let support = noise
        .support()
        .ok_or_else(|| Error::UnsupportedNoise("exact enumeration needs finite support".into()))?;
    if steps > MAX_ENUMERATION_STEPS {
        return Err(Error::ResourceLimit(format!(
            "enumerating {steps} steps exceeds the cap of {MAX_ENUMERATION_STEPS}"
        )));
    }
    let s = support.len();
    let total = s.checked_pow(steps as u32).ok_or_else(|| {
        Error::ResourceLimit("path count overflows".into())
    })?;
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut values = Vec::with_capacity(steps);
        let mut branches = Vec::with_capacity(steps);
        let mut prob = 1.0;
        for j in 0..steps {
            let divisor = s.pow((steps - 1 - j) as u32);
            let b = (idx / divisor) % s;
            let (v, pb) = support[b];
            values.push(v);
            branches.push(b as u8);
            prob *= pb;
        }
        out.push(NoisePath {
            values,
            probability: prob,
            branches: Some(branches),
        });
    }
    Ok(out)
}

/// Exact expected cost by exhaustive enumeration; deterministic summation in
/// enumeration order.
pub fn exact_expected_cost(
    p: &ProblemData,
    anchor_t: usize,
    start: &InitialPair,
    policy: &PolicySpec,
    noise: &NoiseModel,
) -> Result<f64> {
    let steps = p.horizon - start.t;
    let paths = enumerate_paths(noise, steps)?;
    let mut total = 0.0;
    for path in &paths {
        let traj = simulate(p, start, policy, path)?;
        total += path.probability * evaluate_cost(p, anchor_t, &traj)?;
    }
    Ok(total)
}

/// Samples one noise path from a seeded stream (no ambient randomness).
pub fn sample_path(noise: &NoiseModel, steps: usize, seed: u64) -> Result<NoisePath> {
    noise.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(steps);
    let mut branches = Vec::with_capacity(steps);
    let mut prob = 1.0;
    let mut have_branches = true;
    let support = noise.support();
    for _ in 0..steps {
        let (v, b) = noise.sample(&mut rng);
        values.push(v);
        match (b, &support) {
            (Some(b), Some(sup)) => {
                prob *= sup[b as usize].1;
                branches.push(b);
            }
            _ => have_branches = false,
        }
    }
    Ok(NoisePath {
        values,
        probability: if have_branches { prob } else { 0.0 },
        branches: have_branches.then_some(branches),
    })
}

/// Monte Carlo estimate of the expected cost; returns (mean, standard error).
pub fn mc_expected_cost(
    p: &ProblemData,
    anchor_t: usize,
    start: &InitialPair,
    policy: &PolicySpec,
    noise: &NoiseModel,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    noise.validate()?;
    if samples == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let steps = p.horizon - start.t;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let mut values = Vec::with_capacity(steps);
        let mut branches = Vec::with_capacity(steps);
        let mut have_branches = true;
        for _ in 0..steps {
            let (v, b) = noise.sample(rng);
            values.push(v);
            match b {
                Some(b) => branches.push(b),
                None => have_branches = false,
            }
        }
        let path = NoisePath {
            values,
            probability: 0.0,
            branches: have_branches.then_some(branches),
        };
        let traj = simulate(p, start, policy, &path)?;
        let cost = evaluate_cost(p, anchor_t, &traj)?;
        sum += cost;
        sum_sq += cost * cost;
    }
    let mean = sum / samples as f64;
    let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
    let stderr = (var / samples as f64).sqrt();
    Ok((mean, stderr))
}

// ---------------------------------------------------------------------------
// Enumerated processes and the backward adjoint recursion
// ---------------------------------------------------------------------------

/// A process defined on every enumerated path, `values[path][time - start]`.
///
/// `tree_start` is the time of the first enumerated step (paths have
/// `N - tree_start` entries); `start` is the time of the first stored value.
#[derive(Debug, Clone)]
pub struct EnumeratedProcess {
    pub tree_start: usize,
    pub start: usize,
    pub values: Vec<Vec<Vector>>,
}

impl EnumeratedProcess {
    pub fn at(&self, path: usize, time: usize) -> &Vector {
        &self.values[path][time - self.start]
    }
}

/// Which backward recursion to run.
#[derive(Debug, Clone, Copy)]
pub enum AdjointKind<'a> {
    /// Coefficients `A_{k,l}, C_{k,l}` with source weight `Q_{k,l}`.
    OpenLoop,
    /// Closed-loop coefficients `A+B Phi, C+D Phi` with source weight
    /// `Phi' R Phi + Q`.
    Feedback { strategy: &'a [Matrix] },
}

/// Conditional-expectation helper on the enumeration tree.
///
/// Values constant on prefix blocks are read at block representatives; the
/// expectation over the branch at step `level` weights each child block by
/// its branch probability.
pub(crate) struct TreeShape {
    pub support: Vec<(f64, f64)>,
    pub steps: usize,
}

impl TreeShape {
    pub fn new(noise: &NoiseModel, steps: usize) -> Result<TreeShape> {
        let support = noise.support().ok_or_else(|| {
            Error::UnsupportedNoise("conditional expectations need finite support".into())
        })?;
        Ok(TreeShape { support, steps })
    }

    pub fn branch_count(&self) -> usize {
        self.support.len()
    }

    pub fn path_count(&self) -> usize {
        self.branch_count().pow(self.steps as u32)
    }

    /// Size of a block of paths sharing a prefix of the given length.
    pub fn block_size(&self, prefix_len: usize) -> usize {
        self.branch_count().pow((self.steps - prefix_len) as u32)
    }
}

/// Solves the backward adjoint recursion anchored at `anchor_k` over an
/// enumerated forward process, computing every conditional expectation
/// exactly by weighting sibling branches.
///
/// Terminal condition `Z_N = G_anchor X_N` per path, then
/// `Z_l = A' E(Z_{l+1} | F_{l-1}) + C' E(Z_{l+1} w_l | F_{l-1}) + weight X_l`.
pub fn solve_adjoint(
    p: &ProblemData,
    anchor_k: usize,
    forward: &EnumeratedProcess,
    noise: &NoiseModel,
    kind: AdjointKind,
) -> Result<EnumeratedProcess> {
    let tree_start = forward.tree_start;
    let shape = TreeShape::new(noise, p.horizon - tree_start)?;
    let npaths = shape.path_count();
    if forward.values.len() != npaths {
        return Err(Error::invalid(format!(
            "forward process has {} paths, enumeration expects {npaths}",
            forward.values.len()
        )));
    }
    let span = p.horizon - anchor_k + 1;
    let mut z: Vec<Vec<Vector>> = vec![vec![Vector::zeros(p.state_dim); span]; npaths];
    for i in 0..npaths {
        z[i][span - 1] = p.g(anchor_k) * forward.at(i, p.horizon);
    }
    for l in (anchor_k..p.horizon).rev() {
        let (a_l, c_l, weight) = match kind {
            AdjointKind::OpenLoop => (
                p.a(anchor_k, l).clone(),
                p.c(anchor_k, l).clone(),
                p.q(anchor_k, l).clone(),
            ),
            AdjointKind::Feedback { strategy } => {
                let phi = &strategy[l];
                (
                    p.a(anchor_k, l) + p.b(anchor_k, l) * phi,
                    p.c(anchor_k, l) + p.d(anchor_k, l) * phi,
                    phi.transpose() * p.r(anchor_k, l) * phi + p.q(anchor_k, l),
                )
            }
        };
        // Z_l is measurable with respect to the prefix up to step l-1.
        let node_len = l - tree_start;
        let node_block = shape.block_size(node_len);
        let child_block = shape.block_size(node_len + 1);
        let mut base = 0;
        while base < npaths {
            let mut ez = Vector::zeros(p.state_dim);
            let mut ezw = Vector::zeros(p.state_dim);
            for (j, (value, prob)) in shape.support.iter().enumerate() {
                let child = &z[base + j * child_block][l + 1 - anchor_k];
                ez += child * *prob;
                ezw += child * (*prob * *value);
            }
            let common = a_l.transpose() * &ez + c_l.transpose() * &ezw;
            for i in base..base + node_block {
                z[i][l - anchor_k] = &common + &weight * forward.at(i, l);
            }
            base += node_block;
        }
    }
    Ok(EnumeratedProcess {
        tree_start,
        start: anchor_k,
        values: z,
    })
}

/// Equilibrium-state tree: states and controls of a linear policy on every
/// enumerated path (diagonal coefficients).
pub fn enumerate_policy_tree(
    p: &ProblemData,
    start: &InitialPair,
    policy: &PolicySpec,
    noise: &NoiseModel,
) -> Result<(Vec<NoisePath>, EnumeratedProcess, EnumeratedProcess)> {
    let steps = p.horizon - start.t;
    let paths = enumerate_paths(noise, steps)?;
    let mut states = Vec::with_capacity(paths.len());
    let mut controls = Vec::with_capacity(paths.len());
    for path in &paths {
        let traj = simulate(p, start, policy, path)?;
        states.push(traj.states);
        controls.push(traj.controls);
    }
    Ok((
        paths,
        EnumeratedProcess {
            tree_start: start.t,
            start: start.t,
            values: states,
        },
        EnumeratedProcess {
            tree_start: start.t,
            start: start.t,
            values: controls,
        },
    ))
}

/// CSV dump of one trajectory: step, state components, control components,
/// noise value and path probability.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let n = traj.states[0].len();
    let m = traj.controls.first().map_or(0, |u| u.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("w".into());
    header.push("probability".into());
    let mut out = header.join(",") + "\n";
    for (j, x) in traj.states.iter().enumerate() {
        let k = traj.start.t + j;
        let mut row = vec![k.to_string()];
        row.extend((0..n).map(|i| format!("{}", x[i])));
        if j < traj.controls.len() {
            row.extend((0..m).map(|i| format!("{}", traj.controls[j][i])));
            row.push(format!("{}", traj.path.values[j]));
        } else {
            row.extend((0..m).map(|_| String::new()));
            row.push(String::new());
        }
        row.push(format!("{}", traj.path.probability));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::{mat, vec2, Tolerances};
    use crate::open_loop::solve_open_loop;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_constructor_satisfies_moments() {
        for p in [0.1, 0.25, 0.5, 0.9] {
            let m = NoiseModel::two_point_from_prob(p).unwrap();
            m.validate().unwrap();
        }
        assert!(NoiseModel::two_point_from_prob(0.0).is_err());
        assert!(NoiseModel::TwoPoint { p: 0.5, a: 2.0, b: -1.0 }.validate().is_err());
    }

    #[test]
    fn enumeration_probabilities_sum_to_one() {
        for noise in [
            NoiseModel::Rademacher,
            NoiseModel::two_point_from_prob(0.3).unwrap(),
        ] {
            let paths = enumerate_paths(&noise, 6).unwrap();
            let total: f64 = paths.iter().map(|p| p.probability).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn enumeration_rejects_continuous_noise_and_deep_trees() {
        assert!(matches!(
            enumerate_paths(&NoiseModel::Gaussian, 3),
            Err(Error::UnsupportedNoise(_))
        ));
        assert!(matches!(
            enumerate_paths(&NoiseModel::Rademacher, 21),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn zero_initial_state_stays_zero_under_linear_policy() {
        let p = fixtures::example_5_1();
        let start = InitialPair::new(0, vec2(&[0.0, 0.0]));
        let gains = vec![mat(2, 2, &[0.5, 0.0, 0.0, 0.5]); 3];
        let path = NoisePath::deterministic(vec![1.0, -1.0, 1.0]);
        let traj = simulate(&p, &start, &PolicySpec::GainSequence(gains), &path).unwrap();
        for x in &traj.states {
            assert_eq!(x.norm(), 0.0);
        }
    }

    #[test]
    fn scalar_uncontrolled_doubling() {
        // X_{k+1} = (X + 0) + X * 1 = 2X along the all-ones path.
        let p = fixtures::example_1_1();
        let start = InitialPair::new(0, vec2(&[1.5]));
        let zero_gains = vec![mat(1, 1, &[0.0]); 4];
        let path = NoisePath::deterministic(vec![1.0; 4]);
        let traj = simulate(&p, &start, &PolicySpec::GainSequence(zero_gains), &path).unwrap();
        assert_abs_diff_eq!(traj.states[4][(0, 0)], 16.0 * 1.5, epsilon = 1e-12);
    }

    #[test]
    fn simulate_agrees_with_independent_step_function() {
        let p = fixtures::example_5_1();
        let sol = solve_open_loop(&p, &Tolerances::default()).unwrap();
        let start = InitialPair::new(0, vec2(&[1.0, 0.0]));
        let path = NoisePath::deterministic(vec![1.0, 1.0, 1.0]);
        let traj = simulate(
            &p,
            &start,
            &PolicySpec::GainSequence(sol.gains.clone()),
            &path,
        )
        .unwrap();
        // Hand-rolled propagation, written against the raw fixture matrices.
        let mut x = vec2(&[1.0, 0.0]);
        for k in 0..3 {
            let u = &sol.gains[k] * &x;
            let next = p.a(k, k) * &x + p.b(k, k) * &u + (p.c(k, k) * &x + p.d(k, k) * &u) * 1.0;
            assert!((&traj.controls[k] - &u).norm() <= 1e-12);
            x = next;
            assert!((&traj.states[k + 1] - &x).norm() <= 1e-12);
        }
    }

    #[test]
    fn pathwise_cost_basics() {
        let p = fixtures::example_1_1();
        let start = InitialPair::new(0, vec2(&[0.0]));
        let zero = vec![mat(1, 1, &[0.0]); 4];
        let path = NoisePath::deterministic(vec![1.0; 4]);
        let traj = simulate(&p, &start, &PolicySpec::GainSequence(zero), &path).unwrap();
        assert_eq!(evaluate_cost(&p, 0, &traj).unwrap(), 0.0);
    }

    #[test]
    fn scalar_cost_with_unit_controls() {
        // Q = 0, R = 1, G = 0, two unit controls: pathwise cost 2.
        use crate::problem::{Family, ProblemData};
        let one = |v: f64| mat(1, 1, &[v]);
        let p = ProblemData::new(
            1,
            1,
            Family::constant(2, one(1.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(1.0)),
            vec![one(0.0); 2],
        )
        .unwrap();
        let table = PathControls {
            start: 0,
            branch_count: 2,
            per_step: vec![vec![vec2(&[1.0]); 1], vec![vec2(&[1.0]); 2]],
        };
        let path = NoisePath {
            values: vec![1.0, -1.0],
            probability: 0.25,
            branches: Some(vec![0, 1]),
        };
        let traj = simulate(
            &p,
            &InitialPair::new(0, vec2(&[0.0])),
            &PolicySpec::FixedPathControls(table),
            &path,
        )
        .unwrap();
        assert_eq!(evaluate_cost(&p, 0, &traj).unwrap(), 2.0);
    }

    #[test]
    fn anchored_cost_matches_symbolic_expansion() {
        // One step of Example 5.3 from a fixed state and control, expanded by
        // hand: x'Q x + u'R u + X_1' G X_1 with X_1 = A x + B u + (Cx + Du) w.
        let p = fixtures::example_5_3();
        let x = vec2(&[0.3, -0.2]);
        let u = vec2(&[0.1, 0.4]);
        let w = -1.0;
        let table = PathControls {
            start: 1,
            branch_count: 2,
            per_step: vec![vec![u.clone()]],
        };
        let path = NoisePath {
            values: vec![w],
            probability: 0.5,
            branches: Some(vec![1]),
        };
        let traj = simulate(
            &p,
            &InitialPair::new(1, x.clone()),
            &PolicySpec::FixedPathControls(table),
            &path,
        )
        .unwrap();
        let got = evaluate_cost(&p, 1, &traj).unwrap();
        let x1 = p.a(1, 1) * &x + p.b(1, 1) * &u + (p.c(1, 1) * &x + p.d(1, 1) * &u) * w;
        let expect = (x.transpose() * p.q(1, 1) * &x)[(0, 0)]
            + (u.transpose() * p.r(1, 1) * &u)[(0, 0)]
            + (x1.transpose() * p.g(1) * &x1)[(0, 0)];
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn deterministic_problem_expectation_equals_single_path_cost() {
        use crate::problem::{Family, ProblemData};
        let p = ProblemData::new(
            2,
            1,
            Family::constant(3, mat(2, 2, &[1.0, 0.2, -0.1, 0.9])),
            Family::constant(3, mat(2, 1, &[1.0, 0.5])),
            Family::constant(3, Matrix::zeros(2, 2)),
            Family::constant(3, Matrix::zeros(2, 1)),
            Family::constant(3, Matrix::identity(2, 2)),
            Family::constant(3, mat(1, 1, &[1.0])),
            vec![Matrix::identity(2, 2); 3],
        )
        .unwrap();
        let start = InitialPair::new(0, vec2(&[1.0, -1.0]));
        let gains = vec![mat(1, 2, &[-0.3, 0.1]); 3];
        let policy = PolicySpec::GainSequence(gains);
        let exact =
            exact_expected_cost(&p, 0, &start, &policy, &NoiseModel::Rademacher).unwrap();
        let single = simulate(
            &p,
            &start,
            &policy,
            &NoisePath::deterministic(vec![1.0; 3]),
        )
        .unwrap();
        assert_abs_diff_eq!(exact, evaluate_cost(&p, 0, &single).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn pure_noise_square_has_unit_expectation() {
        // X_{k+1} = X_k w_k, x = 1, G = 1: E[X_2^2] = E[w_0^2 w_1^2] = 1.
        use crate::problem::{Family, ProblemData};
        let one = |v: f64| mat(1, 1, &[v]);
        let p = ProblemData::new(
            1,
            1,
            Family::constant(2, one(0.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(1.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(0.0)),
            Family::constant(2, one(0.0)),
            vec![one(1.0); 2],
        )
        .unwrap();
        let start = InitialPair::new(0, vec2(&[1.0]));
        let policy = PolicySpec::GainSequence(vec![one(0.0); 2]);
        for noise in [
            NoiseModel::Rademacher,
            NoiseModel::two_point_from_prob(0.25).unwrap(),
        ] {
            let expect = exact_expected_cost(&p, 0, &start, &policy, &noise).unwrap();
            assert_abs_diff_eq!(expect, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn expectation_is_invariant_under_path_reordering() {
        let p = fixtures::example_5_1();
        let sol = solve_open_loop(&p, &Tolerances::default()).unwrap();
        let start = InitialPair::new(0, vec2(&[1.0, 1.0]));
        let policy = PolicySpec::GainSequence(sol.gains.clone());
        let paths = enumerate_paths(&NoiseModel::Rademacher, 3).unwrap();
        let mut costs: Vec<f64> = paths
            .iter()
            .map(|path| {
                let traj = simulate(&p, &start, &policy, path).unwrap();
                path.probability * evaluate_cost(&p, 0, &traj).unwrap()
            })
            .collect();
        let forward: f64 = costs.iter().sum();
        costs.reverse();
        let reversed: f64 = costs.iter().sum();
        assert_abs_diff_eq!(forward, reversed, epsilon = 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_exact_enumeration() {
        let p = crate::test_support::random_problem(42, 3, 1, 1, true);
        let start = InitialPair::new(0, vec2(&[1.0]));
        let gains = vec![mat(1, 1, &[-0.4]); 3];
        let policy = PolicySpec::GainSequence(gains);
        let noise = NoiseModel::Rademacher;
        let exact = exact_expected_cost(&p, 0, &start, &policy, &noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = if cfg!(debug_assertions) { 100_000 } else { 1_000_000 };
        let (mean, stderr) =
            mc_expected_cost(&p, 0, &start, &policy, &noise, samples, &mut rng).unwrap();
        assert!(
            (mean - exact).abs() <= 3.0 * stderr.max(1e-12),
            "MC mean {mean} vs exact {exact} (stderr {stderr})"
        );
    }

    #[test]
    fn adjoint_vanishes_without_weights() {
        use crate::problem::{Family, ProblemData};
        let p = ProblemData::new(
            1,
            1,
            Family::constant(3, mat(1, 1, &[1.1])),
            Family::constant(3, mat(1, 1, &[1.0])),
            Family::constant(3, mat(1, 1, &[0.4])),
            Family::constant(3, mat(1, 1, &[0.2])),
            Family::constant(3, mat(1, 1, &[0.0])),
            Family::constant(3, mat(1, 1, &[1.0])),
            vec![mat(1, 1, &[0.0]); 3],
        )
        .unwrap();
        let start = InitialPair::new(0, vec2(&[1.0]));
        let policy = PolicySpec::GainSequence(vec![mat(1, 1, &[-0.5]); 3]);
        let (_, states, _) =
            enumerate_policy_tree(&p, &start, &policy, &NoiseModel::Rademacher).unwrap();
        let z = solve_adjoint(&p, 0, &states, &NoiseModel::Rademacher, AdjointKind::OpenLoop)
            .unwrap();
        for path in &z.values {
            for v in path {
                assert_eq!(v.norm(), 0.0);
            }
        }
    }

    #[test]
    fn open_loop_adjoint_decouples_through_p() {
        // Z^k_l = P_{k,l} X_l on the solver's equilibrium tree.
        let p = fixtures::example_5_1();
        let sol = solve_open_loop(&p, &Tolerances::default()).unwrap();
        let start = InitialPair::new(0, vec2(&[1.0, 1.0]));
        let policy = PolicySpec::GainSequence(sol.gains.clone());
        let noise = NoiseModel::Rademacher;
        let (_, states, _) = enumerate_policy_tree(&p, &start, &policy, &noise).unwrap();
        for k in 0..p.horizon {
            let z = solve_adjoint(&p, k, &states, &noise, AdjointKind::OpenLoop).unwrap();
            for i in 0..states.values.len() {
                for l in k..=p.horizon {
                    let expect = sol.p(k, l) * states.at(i, l);
                    let err = (z.at(i, l) - &expect).norm();
                    let scale = 1.0f64.max(expect.norm());
                    assert!(err <= 1e-8 * scale, "k={k} l={l} path={i}: {err:.3e}");
                }
            }
        }
    }

    #[test]
    fn feedback_adjoint_decouples_through_p_tilde() {
        let p = fixtures::example_5_2();
        let sol = crate::feedback::solve_feedback(&p, &Tolerances::default()).unwrap();
        let start = InitialPair::new(0, vec2(&[1.0, -0.5]));
        let policy = PolicySpec::Strategy(sol.phi.clone());
        let noise = NoiseModel::Rademacher;
        let (paths, states, _) = enumerate_policy_tree(&p, &start, &policy, &noise).unwrap();
        for t in 0..p.horizon {
            // The anchored forward process restarts from the equilibrium
            // state at t with row-t closed-loop coefficients.
            let npaths = paths.len();
            let mut fwd = vec![Vec::new(); npaths];
            for i in 0..npaths {
                let mut xs = vec![states.at(i, t).clone()];
                for l in t..p.horizon {
                    let x = xs.last().unwrap();
                    let u = &sol.phi[l] * x;
                    let w = paths[i].values[l - start.t];
                    let next = p.a(t, l) * x + p.b(t, l) * &u + (p.c(t, l) * x + p.d(t, l) * &u) * w;
                    xs.push(next);
                }
                fwd[i] = xs;
            }
            let forward = EnumeratedProcess {
                tree_start: start.t,
                start: t,
                values: fwd,
            };
            let z = solve_adjoint(
                &p,
                t,
                &forward,
                &noise,
                AdjointKind::Feedback {
                    strategy: &sol.phi,
                },
            )
            .unwrap();
            for i in 0..npaths {
                for l in t..=p.horizon {
                    let expect = sol.p(t, l) * forward.at(i, l);
                    let err = (z.at(i, l) - &expect).norm();
                    assert!(
                        err <= 1e-8 * 1.0f64.max(expect.norm()),
                        "t={t} l={l}: {err:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let p = fixtures::example_1_1();
        let start = InitialPair::new(0, vec2(&[1.0]));
        let policy = PolicySpec::GainSequence(vec![mat(1, 1, &[-0.5]); 4]);
        let path = NoisePath {
            values: vec![1.0, -1.0, 1.0, -1.0],
            probability: 1.0 / 16.0,
            branches: Some(vec![0, 1, 0, 1]),
        };
        let traj = simulate(&p, &start, &policy, &path).unwrap();
        let csv = trajectory_to_csv(&traj);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,x0,u0,w,probability");
        assert_eq!(lines.len(), 1 + 5);
    }
}
