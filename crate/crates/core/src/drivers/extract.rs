//! Driver extraction from a black-box filtration-consistent nonlinear
//! expectation: gₙ(z) = ℰₙ₋₁(zᵀΔXₙ). Solving with the extracted driver
//! reproduces the black box.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lattice::Basis;
use crate::scenario::ScenarioTree;

use super::Driver;

/// A map from terminal payoffs (leaf slices) to their conditional
/// values at earlier depths.
pub trait NonlinearExpectation: Send + Sync {
    /// Depth-n slice of the expectation of the terminal payoff.
    fn condition(&self, terminal: &[f64], n: usize) -> Vec<f64>;
}

impl<F> NonlinearExpectation for F
where
    F: Fn(&[f64], usize) -> Vec<f64> + Send + Sync,
{
    fn condition(&self, terminal: &[f64], n: usize) -> Vec<f64> {
        self(terminal, n)
    }
}

/// Driver recovered from a black-box expectation.
pub struct ExtractedDriver<E> {
    tree: ScenarioTree,
    expectation: E,
}

const SPOT_CHECK_TOL: f64 = 1e-9;

/// Wraps the black box after spot-checking tower and locality on random
/// payoffs, plus normalization and translation invariance. The caller
/// remains responsible for the properties holding globally.
pub fn extract_driver<E: NonlinearExpectation>(
    tree: &ScenarioTree,
    expectation: E,
    seed: u64,
) -> Result<ExtractedDriver<E>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_steps = tree.horizon();
    let leaves = tree.num_leaves();

    // Normalization on constants.
    let c = 1.375;
    let val = expectation.condition(&vec![c; leaves], 0);
    if (val[0] - c).abs() > SPOT_CHECK_TOL {
        return Err(Error::InconsistentExpectation(format!(
            "constant {c} maps to {}",
            val[0]
        )));
    }

    for _ in 0..3 {
        let y: Vec<f64> = (0..leaves).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = (n_steps + 1) / 2;
        let inner = expectation.condition(&y, m);
        // Extend the depth-m slice back to the leaves via ancestors.
        let extended: Vec<f64> = (0..leaves)
            .map(|leaf| inner[tree.ancestor(leaf, n_steps, m)])
            .collect();
        for n in 0..m {
            let lhs = expectation.condition(&extended, n);
            let rhs = expectation.condition(&y, n);
            for (a, b) in lhs.iter().zip(&rhs) {
                if (a - b).abs() > SPOT_CHECK_TOL {
                    return Err(Error::InconsistentExpectation(format!(
                        "tower property off by {:.3e}",
                        (a - b).abs()
                    )));
                }
            }
        }

        // Locality on the first depth-1 subtree.
        if n_steps >= 1 {
            let masked: Vec<f64> = (0..leaves)
                .map(|leaf| {
                    if tree.ancestor(leaf, n_steps, 1) == 0 {
                        y[leaf]
                    } else {
                        0.0
                    }
                })
                .collect();
            let lhs = expectation.condition(&masked, 1);
            let rhs = expectation.condition(&y, 1);
            if (lhs[0] - rhs[0]).abs() > SPOT_CHECK_TOL {
                return Err(Error::InconsistentExpectation(format!(
                    "locality off by {:.3e}",
                    (lhs[0] - rhs[0]).abs()
                )));
            }
        }

        // Translation invariance against a depth-m measurable shift.
        let eta: Vec<f64> = (0..tree.num_nodes(m))
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let shifted: Vec<f64> = (0..leaves)
            .map(|leaf| y[leaf] + eta[tree.ancestor(leaf, n_steps, m)])
            .collect();
        let lhs = expectation.condition(&shifted, m);
        let rhs = expectation.condition(&y, m);
        for ((a, b), e) in lhs.iter().zip(&rhs).zip(&eta) {
            if (a - (b + e)).abs() > SPOT_CHECK_TOL {
                return Err(Error::InconsistentExpectation(format!(
                    "translation invariance off by {:.3e}",
                    (a - (b + e)).abs()
                )));
            }
        }
    }

    Ok(ExtractedDriver {
        tree: tree.clone(),
        expectation,
    })
}

impl<E: NonlinearExpectation> Driver for ExtractedDriver<E> {
    fn basis(&self) -> &Basis {
        self.tree.basis()
    }

    fn horizon(&self) -> usize {
        self.tree.horizon()
    }

    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        // The payoff zᵀΔXₙ as a terminal variable: each leaf reads the
        // n-th letter of its word.
        let dots: Vec<f64> = (0..self.tree.arity())
            .map(|j| self.tree.basis().vertex_dot(j, z))
            .collect();
        let n_steps = self.tree.horizon();
        let span = self.tree.num_nodes(n_steps - n);
        let payoff: Vec<f64> = (0..self.tree.num_leaves())
            .map(|leaf| dots[(leaf / span) % self.tree.arity()])
            .collect();
        self.expectation.condition(&payoff, n - 1)[node]
    }

    fn is_concave(&self) -> bool {
        false
    }

    fn is_balanced(&self) -> bool {
        // Strict balance is part of the consistency assumptions.
        true
    }
}
