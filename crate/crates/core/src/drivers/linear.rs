//! Affine drivers gₙ(z) = Aₙᵀz + Bₙ. The g-expectation reduces to a
//! measure-change expectation exactly when every slope lies in the
//! increment hull.

use crate::lattice::{Basis, CONTAINMENT_TOL};
use crate::scenario::{PredictableField, ScenarioTree};

use super::Driver;

pub struct LinearDriver {
    basis: Basis,
    horizon: usize,
    slope: PredictableField<Vec<f64>>,
    intercept: PredictableField<f64>,
    balanced: bool,
    zero_slope: bool,
}

/// Builds the affine driver; the balanced flag is set iff every slope
/// passes the hull-containment solve.
pub fn linear_driver(
    tree: &ScenarioTree,
    slope: PredictableField<Vec<f64>>,
    intercept: PredictableField<f64>,
) -> LinearDriver {
    let basis = tree.basis().clone();
    let mut balanced = true;
    let mut zero_slope = true;
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            let a = slope.get(n, node);
            if !basis.hull_contains(a, CONTAINMENT_TOL) {
                balanced = false;
            }
            if a.iter().any(|x| *x != 0.0) {
                zero_slope = false;
            }
        }
    }
    LinearDriver {
        basis,
        horizon: tree.horizon(),
        slope,
        intercept,
        balanced,
        zero_slope,
    }
}

impl LinearDriver {
    /// The zero driver: g ≡ 0, whose g-expectation is the martingale
    /// measure expectation.
    pub fn zero(tree: &ScenarioTree) -> Self {
        linear_driver(
            tree,
            PredictableField::constant(tree, vec![0.0; tree.dim()]),
            PredictableField::constant(tree, 0.0),
        )
    }

    pub fn slope(&self) -> &PredictableField<Vec<f64>> {
        &self.slope
    }

    pub fn intercept(&self) -> &PredictableField<f64> {
        &self.intercept
    }
}

impl Driver for LinearDriver {
    fn basis(&self) -> &Basis {
        &self.basis
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        let a = self.slope.get(n, node);
        a.iter().zip(z).map(|(ai, zi)| ai * zi).sum::<f64>() + self.intercept.get(n, node)
    }

    fn gradient(&self, n: usize, node: usize, _z: &[f64]) -> Option<Vec<f64>> {
        Some(self.slope.get(n, node).clone())
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn is_balanced(&self) -> bool {
        self.balanced
    }

    fn has_argmax(&self) -> bool {
        // An affine map is maximized only when it is constant.
        self.zero_slope
    }

    fn argmax(&self, _n: usize, _node: usize) -> Option<Vec<f64>> {
        if self.zero_slope {
            Some(vec![0.0; self.basis.dim()])
        } else {
            None
        }
    }

    fn legendre_closed_form(&self, n: usize, node: usize, theta: &[f64]) -> Option<f64> {
        // Legendre of an affine map: the intercept at θ = A, +∞ elsewhere.
        let a = self.slope.get(n, node);
        let hit = a.iter().zip(theta).all(|(ai, ti)| (ai - ti).abs() <= 1e-9);
        Some(if hit {
            *self.intercept.get(n, node)
        } else {
            f64::INFINITY
        })
    }
}
