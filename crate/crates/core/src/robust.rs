//! Robust representation of concave g-expectations: the value is the
//! minimum over measures of expectation plus penalty, and the minimizer
//! is constructed from the solution slopes.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bsde::{solve, Solution};
use crate::drivers::{legendre_b_with, Driver, LegendreOptions};
use crate::error::{Error, Result};
use crate::scenario::{Measure, PredictableField, ScenarioTree};

#[derive(Debug, Clone)]
pub struct RobustOptions {
    pub legendre: LegendreOptions,
    /// Random alternative measures checked against the minimum.
    pub alternatives: usize,
    pub seed: u64,
    /// Gap above which the certificate is flagged (numeric Legendre
    /// values inherit optimizer error; the gap is reported, not fatal).
    pub gap_threshold: f64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            legendre: LegendreOptions::default(),
            alternatives: 5,
            seed: 0,
            gap_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustRepresentation {
    /// ℰᵍ₀(Y), the robust value.
    pub value: f64,
    /// The measure attaining the minimum.
    pub minimizer: Measure,
    /// Penalty c^g₀ of the minimizer.
    pub penalty: f64,
    /// |value − (Ê[Y] + penalty)| at the constructed minimizer.
    pub certificate_gap: f64,
    pub gap_within_threshold: bool,
    pub alternatives_checked: usize,
    /// min over alternatives of Ẽ[Y] + c^g₀(P̃) − value; the theorem
    /// requires this to be nonnegative up to solver noise.
    pub min_alternative_slack: f64,
    pub solution: Solution,
}

/// Penalty c^g₀(P̂) = Ê[Σᵢ bᵢ(vP̂ᵢ)] of a kernel measure, with optional
/// warm-start slopes for the Legendre maximizations.
fn penalty_of_measure(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    measure: &Measure,
    warm: Option<&PredictableField<Vec<f64>>>,
    opts: &RobustOptions,
) -> Result<f64> {
    let basis = tree.basis();
    // bᵢ per (time, node), then one pass of path-weighted accumulation.
    let mut b_values: Vec<Vec<f64>> = Vec::with_capacity(tree.horizon());
    for n in 1..=tree.horizon() {
        let mut slice = Vec::with_capacity(tree.num_nodes(n - 1));
        for node in 0..tree.num_nodes(n - 1) {
            let theta = basis.hull_point(measure.kernel(n, node));
            let mut lopts = opts.legendre.clone();
            lopts.seed_hint = warm.map(|w| w.get(n, node).clone());
            let b = legendre_b_with(driver, n, node, &theta, &lopts)?;
            if b.is_infinite() {
                return Err(Error::PenaltyDiverged { time: n, node });
            }
            slice.push(b);
        }
        b_values.push(slice);
    }
    // Ê[Σ bᵢ] by accumulating along paths under the measure weights.
    let weights = measure.path_weights(tree);
    let mut total = 0.0;
    for (leaf, w) in weights.iter().enumerate() {
        let mut path_sum = 0.0;
        for n in 1..=tree.horizon() {
            path_sum += b_values[n - 1][tree.ancestor(leaf, tree.horizon(), n - 1)];
        }
        total += w * path_sum;
    }
    Ok(total)
}

/// Constructs the minimizing measure from the solution slopes, computes
/// its penalty, and certifies the representation: equality at the
/// minimizer, and ≥ for randomly drawn alternative measures.
pub fn robust_representation(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    terminal: &[f64],
    opts: &RobustOptions,
) -> Result<RobustRepresentation> {
    if !driver.is_concave() {
        return Err(Error::NotConcave);
    }
    let solution = solve(tree, driver, terminal)?;
    let value = solution.value();

    // Kernel selection p(Zₙ) per node from the driver.
    let mut kernel_slices: Vec<Vec<Vec<f64>>> = Vec::with_capacity(tree.horizon());
    for n in 1..=tree.horizon() {
        let mut slice = Vec::with_capacity(tree.num_nodes(n - 1));
        for node in 0..tree.num_nodes(n - 1) {
            let z = solution.z.get(n, node);
            let p = driver.minimizing_kernel(n, node, z).ok_or_else(|| {
                Error::InvalidInput(
                    "robust representation needs a gradient or kernel selection".into(),
                )
            })?;
            if p.iter().any(|w| *w < -1e-9) {
                return Err(Error::PenaltyDiverged { time: n, node });
            }
            let clamped: Vec<f64> = p.iter().map(|w| w.max(0.0)).collect();
            let total: f64 = clamped.iter().sum();
            slice.push(clamped.iter().map(|w| w / total).collect());
        }
        kernel_slices.push(slice);
    }
    let minimizer =
        Measure::from_kernel_field(tree, PredictableField::from_slices(tree, kernel_slices)?)?;

    let penalty = penalty_of_measure(tree, driver, &minimizer, Some(&solution.z), opts)?;
    let expected = minimizer.expect_terminal(tree, terminal);
    let certificate_gap = (value - (expected + penalty)).abs();

    // Alternative measures: value must stay below expectation + penalty.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut min_slack = f64::INFINITY;
    let mut checked = 0;
    for _ in 0..opts.alternatives {
        let kernels = PredictableField::from_fn(tree, |_, _| {
            let raw: Vec<f64> = (0..tree.arity())
                .map(|_| rng.random_range(0.1..1.0))
                .collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total).collect::<Vec<f64>>()
        });
        let alt = Measure::from_kernel_field(tree, kernels)?;
        let alt_penalty = match penalty_of_measure(tree, driver, &alt, None, opts) {
            Ok(p) => p,
            Err(Error::PenaltyDiverged { .. }) => continue,
            Err(e) => return Err(e),
        };
        let slack = alt.expect_terminal(tree, terminal) + alt_penalty - value;
        min_slack = min_slack.min(slack);
        checked += 1;
    }

    Ok(RobustRepresentation {
        value,
        minimizer,
        penalty,
        certificate_gap,
        gap_within_threshold: certificate_gap <= opts.gap_threshold,
        alternatives_checked: checked,
        min_alternative_slack: min_slack,
        solution,
    })
}
