//! The backward solver: existence/uniqueness by one backward sweep,
//! g-expectations, the conditional-expectation formulas, the linear
//! closed form, translation, and the comparison harness.
//!
//! At every depth-(n−1) node the child values y = (y₀,…,y_d) decompose
//! uniquely as y = a·1 + vᵀz; the solver sets Zₙ = z and
//! Yₙ₋₁ = a + gₙ(Zₙ). No global system is ever assembled.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drivers::{Driver, ShiftedDriver};
use crate::error::{Error, Result};
use crate::lattice::CONTAINMENT_TOL;
use crate::scenario::{AdaptedField, Measure, PredictableField, ScenarioTree};

/// Node count above which a depth slice is processed in parallel.
const PAR_THRESHOLD: usize = 4096;

/// Residual the solution must satisfy at every node and time.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// The paired adapted value process Y and predictable slope process Z.
#[derive(Debug, Clone)]
pub struct Solution {
    pub y: AdaptedField,
    pub z: PredictableField<Vec<f64>>,
}

impl Solution {
    /// Time-0 value Y₀.
    pub fn value(&self) -> f64 {
        self.y.at(0, 0)
    }

    /// Largest violation of ΔYₙ + gₙ(Zₙ) − Zₙᵀ ΔXₙ = 0 over all nodes.
    pub fn max_residual(&self, tree: &ScenarioTree, driver: &dyn Driver) -> f64 {
        let mut worst = 0.0_f64;
        for n in 1..=tree.horizon() {
            for node in 0..tree.num_nodes(n - 1) {
                let z = self.z.get(n, node);
                let g = driver.evaluate(n, node, z);
                for j in 0..tree.arity() {
                    let child = self.y.at(n, tree.child(node, j));
                    let res = child - self.y.at(n - 1, node) + g - tree.basis().vertex_dot(j, z);
                    worst = worst.max(res.abs());
                }
            }
        }
        worst
    }
}

fn backward_step(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    n: usize,
    child_values: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let arity = tree.arity();
    let nodes = tree.num_nodes(n - 1);
    let step = |node: usize| -> Result<(f64, Vec<f64>)> {
        let y = &child_values[node * arity..(node + 1) * arity];
        let (a, z) = tree.basis().affine_decompose(y);
        let g = driver.evaluate(n, node, &z);
        if !g.is_finite() {
            return Err(Error::DriverEvaluationFailed { time: n, node });
        }
        Ok((a + g, z))
    };
    let pairs: Result<Vec<(f64, Vec<f64>)>> = if nodes >= PAR_THRESHOLD {
        (0..nodes).into_par_iter().map(step).collect()
    } else {
        (0..nodes).map(step).collect()
    };
    Ok(pairs?.into_iter().unzip())
}

/// Solves ΔYₙ = −gₙ(Zₙ) + Zₙᵀ ΔXₙ backward from the terminal slice.
pub fn solve(tree: &ScenarioTree, driver: &dyn Driver, terminal: &[f64]) -> Result<Solution> {
    if terminal.len() != tree.num_leaves() {
        return Err(Error::DepthMismatch {
            depth: tree.horizon(),
            expected: tree.num_leaves(),
            got: terminal.len(),
        });
    }
    let n_steps = tree.horizon();
    let mut y_slices: Vec<Vec<f64>> = vec![Vec::new(); n_steps + 1];
    let mut z_slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_steps];
    y_slices[n_steps] = terminal.to_vec();
    for n in (1..=n_steps).rev() {
        let (y_prev, z_n) = backward_step(tree, driver, n, &y_slices[n])?;
        y_slices[n - 1] = y_prev;
        z_slices[n - 1] = z_n;
    }
    Ok(Solution {
        y: AdaptedField::from_slices(tree, y_slices)?,
        z: PredictableField::from_slices(tree, z_slices)?,
    })
}

/// The depth-n slice of the g-expectation of a terminal payoff.
pub fn g_expectation(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    terminal: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    if n == tree.horizon() {
        return Ok(terminal.to_vec());
    }
    Ok(solve(tree, driver, terminal)?.y.slice(n).to_vec())
}

/// Diagnostic re-derivation of a solution slice from the conditional
/// formulas: Yₙ₋₁ = E_Q[Yₙ|ℱₙ₋₁] + gₙ(Zₙ), Zₙ = (vvᵀ)⁻¹v Ȳₙ, and the
/// equivalent moment form Zₙ = (d+1)(vvᵀ)⁻¹ E_Q[Yₙ ΔXₙ|ℱₙ₋₁].
#[derive(Debug, Clone)]
pub struct ConditionalCheck {
    /// Child-value vectors Ȳₙ per depth-(n−1) node.
    pub ybar: Vec<Vec<f64>>,
    pub max_residual: f64,
}

pub fn conditional_formulas(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    solution: &Solution,
    n: usize,
) -> ConditionalCheck {
    let basis = tree.basis();
    let arity = tree.arity();
    let mut worst = 0.0_f64;
    let mut ybar = Vec::with_capacity(tree.num_nodes(n - 1));
    for node in 0..tree.num_nodes(n - 1) {
        let y: Vec<f64> = (0..arity)
            .map(|j| solution.y.at(n, tree.child(node, j)))
            .collect();
        let z = solution.z.get(n, node);
        // Value recursion under the uniform kernel.
        let mean = y.iter().sum::<f64>() / arity as f64;
        let lhs = solution.y.at(n - 1, node);
        worst = worst.max((lhs - mean - driver.evaluate(n, node, z)).abs());
        // Slope from child values.
        let z_direct = basis.z_of(&y);
        // Slope from the moment form (d+1)(vvᵀ)⁻¹ E_Q[Y ΔX].
        let d = basis.dim();
        let mut moment = vec![0.0; d];
        for (j, yj) in y.iter().enumerate() {
            let v = basis.vertex(j);
            for i in 0..d {
                moment[i] += yj * v[i] / arity as f64;
            }
        }
        let z_moment = basis.apply_gram_inv(&moment);
        for i in 0..d {
            worst = worst.max((z[i] - z_direct[i]).abs());
            worst = worst.max((z[i] - arity as f64 * z_moment[i]).abs());
        }
        ybar.push(y);
    }
    ConditionalCheck {
        ybar,
        max_residual: worst,
    }
}

/// Measure-change closed form for affine drivers with hull-valued
/// slopes: the value process is Ê[Y + Σ_{i>n} Bᵢ | ℱₙ] under the kernel
/// solving vP̂ₙ = Aₙ.
pub fn solve_linear(
    tree: &ScenarioTree,
    slope: &PredictableField<Vec<f64>>,
    intercept: &PredictableField<f64>,
    terminal: &[f64],
) -> Result<Solution> {
    let basis = tree.basis();
    let arity = tree.arity();
    let n_steps = tree.horizon();
    // Containment solve per node; rejects slopes off the hull.
    let mut kernels: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_steps);
    for n in 1..=n_steps {
        let mut slice = Vec::with_capacity(tree.num_nodes(n - 1));
        for node in 0..tree.num_nodes(n - 1) {
            let a = slope.get(n, node);
            let p = basis.simplex_coordinates(a);
            if p.iter().any(|w| *w < -CONTAINMENT_TOL) {
                return Err(Error::SlopeOutsideTheta { time: n, node });
            }
            // Clamp containment-solve noise so the weights form a kernel.
            let clamped: Vec<f64> = p.iter().map(|w| w.max(0.0)).collect();
            let total: f64 = clamped.iter().sum();
            slice.push(clamped.iter().map(|w| w / total).collect());
        }
        kernels.push(slice);
    }
    let mut y_slices: Vec<Vec<f64>> = vec![Vec::new(); n_steps + 1];
    let mut z_slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_steps];
    y_slices[n_steps] = terminal.to_vec();
    for n in (1..=n_steps).rev() {
        let nodes = tree.num_nodes(n - 1);
        let mut y_prev = Vec::with_capacity(nodes);
        let mut z_n = Vec::with_capacity(nodes);
        for node in 0..nodes {
            let y: Vec<f64> = (0..arity)
                .map(|j| y_slices[n][tree.child(node, j)])
                .collect();
            let kernel = &kernels[n - 1][node];
            let expected: f64 = kernel.iter().zip(&y).map(|(k, v)| k * v).sum();
            y_prev.push(expected + intercept.get(n, node));
            z_n.push(basis.z_of(&y));
        }
        y_slices[n - 1] = y_prev;
        z_slices[n - 1] = z_n;
    }
    Ok(Solution {
        y: AdaptedField::from_slices(tree, y_slices)?,
        z: PredictableField::from_slices(tree, z_slices)?,
    })
}

/// Solution for the shifted driver hₙ = gₙ + Bₙ; its value process
/// matches the g-expectation of Y + Σ_{i>ℓ} Bᵢ and Z is unchanged.
pub fn translate(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    shift: &PredictableField<f64>,
    terminal: &[f64],
) -> Result<Solution> {
    let shifted = ShiftedDriver::new(driver, shift.clone());
    solve(tree, &shifted, terminal)
}

/// Solves the reparametrized equation ΔYₙ = −ĝₙ(Zₙ) + Zₙᵀ(ΔXₙ − Aₙ)
/// driven by compensated increments.
pub fn solve_compensated(
    tree: &ScenarioTree,
    driver_hat: &dyn Driver,
    compensator: &PredictableField<Vec<f64>>,
    terminal: &[f64],
) -> Result<Solution> {
    let basis = tree.basis();
    let arity = tree.arity();
    let n_steps = tree.horizon();
    let mut y_slices: Vec<Vec<f64>> = vec![Vec::new(); n_steps + 1];
    let mut z_slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_steps];
    y_slices[n_steps] = terminal.to_vec();
    for n in (1..=n_steps).rev() {
        let nodes = tree.num_nodes(n - 1);
        let mut y_prev = Vec::with_capacity(nodes);
        let mut z_n = Vec::with_capacity(nodes);
        for node in 0..nodes {
            let y: Vec<f64> = (0..arity)
                .map(|j| y_slices[n][tree.child(node, j)])
                .collect();
            let (a, z) = basis.affine_decompose(&y);
            let g = driver_hat.evaluate(n, node, &z);
            if !g.is_finite() {
                return Err(Error::DriverEvaluationFailed { time: n, node });
            }
            let drift: f64 = z
                .iter()
                .zip(compensator.get(n, node))
                .map(|(zi, ai)| zi * ai)
                .sum();
            y_prev.push(a + g + drift);
            z_n.push(z);
        }
        y_slices[n - 1] = y_prev;
        z_slices[n - 1] = z_n;
    }
    Ok(Solution {
        y: AdaptedField::from_slices(tree, y_slices)?,
        z: PredictableField::from_slices(tree, z_slices)?,
    })
}

#[derive(Debug, Clone)]
pub struct ComparisonOptions {
    /// Slopes sampled per time step for the driver-dominance pre-check.
    pub dominance_samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for ComparisonOptions {
    fn default() -> Self {
        ComparisonOptions {
            dominance_samples: 50,
            seed: 0,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// min over nodes of ℰ⁽¹⁾ₙ − ℰ⁽²⁾ₙ, per depth.
    pub per_depth_min_margin: Vec<f64>,
    pub min_margin: f64,
    pub passed: bool,
}

/// Comparison harness: verifies ℰ⁽¹⁾ₙ ≥ ℰ⁽²⁾ₙ under the theorem's
/// hypotheses (ordered terminals, driver dominance spot-checked on
/// samples, at least one balanced driver).
pub fn compare(
    tree: &ScenarioTree,
    driver1: &dyn Driver,
    driver2: &dyn Driver,
    terminal1: &[f64],
    terminal2: &[f64],
    opts: &ComparisonOptions,
) -> Result<ComparisonReport> {
    if terminal1.iter().zip(terminal2).any(|(a, b)| a < b) {
        return Err(Error::PreconditionUnverifiable(
            "terminal payoffs are not ordered".into(),
        ));
    }
    if !driver1.is_balanced() && !driver2.is_balanced() {
        return Err(Error::PreconditionUnverifiable(
            "neither driver is balanced".into(),
        ));
    }
    // Pointwise dominance cannot be decided from finitely many
    // evaluations; sampling is the pre-check.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let d = tree.dim();
    let scales = [0.1, 1.0, 10.0];
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            for k in 0..opts.dominance_samples {
                let z: Vec<f64> = (0..d)
                    .map(|_| scales[k % 3] * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let g1 = driver1.evaluate(n, node, &z);
                let g2 = driver2.evaluate(n, node, &z);
                if g1 < g2 - 1e-12 {
                    return Err(Error::PreconditionUnverifiable(format!(
                        "driver dominance fails at time {n}, node {node}: {g1} < {g2}"
                    )));
                }
            }
        }
    }
    let s1 = solve(tree, driver1, terminal1)?;
    let s2 = solve(tree, driver2, terminal2)?;
    let mut per_depth = Vec::with_capacity(tree.horizon() + 1);
    let mut min_margin = f64::INFINITY;
    for n in 0..=tree.horizon() {
        let m =
            s1.y.slice(n)
                .iter()
                .zip(s2.y.slice(n))
                .map(|(a, b)| a - b)
                .fold(f64::INFINITY, f64::min);
        min_margin = min_margin.min(m);
        per_depth.push(m);
    }
    Ok(ComparisonReport {
        per_depth_min_margin: per_depth,
        min_margin,
        passed: min_margin >= -opts.tolerance,
    })
}

/// E_Q-expectation of a terminal payoff, the zero-driver value.
pub fn martingale_value(tree: &ScenarioTree, terminal: &[f64]) -> f64 {
    Measure::martingale(tree).expect_terminal(tree, terminal)
}
