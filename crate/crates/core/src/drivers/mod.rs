//! The driver library: concrete gₙ families, balance and gradient
//! validation, Legendre transforms, sup-convolution, and driver
//! extraction from black-box nonlinear expectations.
//!
//! A driver is a time-indexed family of functions gₙ(ω, z) of the
//! predictable slope z, measurable at time n−1 (so `node` indexes
//! depth-(n−1) nodes). Drivers must be pure in (n, node, z); they are
//! evaluated concurrently during backward sweeps.

mod entropic;
mod extract;
mod legendre;
mod linear;
mod supconv;
mod worstcase;

pub use entropic::{
    entropic_driver, entropic_sup_convolution, EntropicAggregate, EntropicDriver, EntropicSpec,
};
pub use extract::{extract_driver, ExtractedDriver, NonlinearExpectation};
pub use legendre::{legendre_b, legendre_b_with, LegendreOptions};
pub use linear::{linear_driver, LinearDriver};
pub use supconv::{sup_convolution, SupConvolutionDriver};
pub use worstcase::{worstcase_from_kernels, worstcase_full_hull, WorstCaseDriver};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::lattice::{Basis, CONTAINMENT_TOL};
use crate::scenario::{PredictableField, ScenarioTree};

/// Slack allowed on the balance inequality before a sample counts as a
/// violation.
pub const BALANCE_TOL: f64 = 1e-9;

/// A BSΔE generator gₙ(ω, z) with capability flags.
pub trait Driver: Send + Sync {
    fn basis(&self) -> &Basis;

    /// Number of time steps 1..=N the driver is defined for.
    fn horizon(&self) -> usize;

    /// gₙ(z) at the depth-(n−1) node.
    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64;

    /// ∇gₙ(z) when the driver is differentiable.
    fn gradient(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        let _ = (n, node, z);
        None
    }

    /// Concave in z at every (n, node).
    fn is_concave(&self) -> bool;

    /// Satisfies gₙ(z₂) − gₙ(z₁) ≥ min over the hull of θᵀ(z₂−z₁).
    fn is_balanced(&self) -> bool;

    fn has_argmax(&self) -> bool {
        false
    }

    /// A maximizer of z ↦ gₙ(z) when one exists.
    fn argmax(&self, n: usize, node: usize) -> Option<Vec<f64>> {
        let _ = (n, node);
        None
    }

    /// Simplex weights p with gₙ(z) = zᵀvp + bₙ(vp): the kernel the
    /// robust representation selects at slope z. Defaults to the hull
    /// coordinates of the gradient.
    fn minimizing_kernel(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        let grad = self.gradient(n, node, z)?;
        Some(self.basis().simplex_coordinates(&grad))
    }

    /// bₙ(θ) in closed form where the numeric sup would be degenerate
    /// (piecewise-linear or affine drivers).
    fn legendre_closed_form(&self, n: usize, node: usize, theta: &[f64]) -> Option<f64> {
        let _ = (n, node, theta);
        None
    }

    fn as_entropic(&self) -> Option<&EntropicDriver> {
        None
    }
}

impl<D: Driver + ?Sized> Driver for &D {
    fn basis(&self) -> &Basis {
        (**self).basis()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        (**self).evaluate(n, node, z)
    }
    fn gradient(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        (**self).gradient(n, node, z)
    }
    fn is_concave(&self) -> bool {
        (**self).is_concave()
    }
    fn is_balanced(&self) -> bool {
        (**self).is_balanced()
    }
    fn has_argmax(&self) -> bool {
        (**self).has_argmax()
    }
    fn argmax(&self, n: usize, node: usize) -> Option<Vec<f64>> {
        (**self).argmax(n, node)
    }
    fn minimizing_kernel(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        (**self).minimizing_kernel(n, node, z)
    }
    fn legendre_closed_form(&self, n: usize, node: usize, theta: &[f64]) -> Option<f64> {
        (**self).legendre_closed_form(n, node, theta)
    }
    fn as_entropic(&self) -> Option<&EntropicDriver> {
        (**self).as_entropic()
    }
}

/// A driver plus a predictable shift: hₙ(z) = gₙ(z) + Bₙ.
pub struct ShiftedDriver<D> {
    inner: D,
    shift: PredictableField<f64>,
}

impl<D: Driver> ShiftedDriver<D> {
    pub fn new(inner: D, shift: PredictableField<f64>) -> Self {
        ShiftedDriver { inner, shift }
    }
}

impl<D: Driver> Driver for ShiftedDriver<D> {
    fn basis(&self) -> &Basis {
        self.inner.basis()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        self.inner.evaluate(n, node, z) + self.shift.get(n, node)
    }
    fn gradient(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        self.inner.gradient(n, node, z)
    }
    fn is_concave(&self) -> bool {
        self.inner.is_concave()
    }
    fn is_balanced(&self) -> bool {
        self.inner.is_balanced()
    }
    fn has_argmax(&self) -> bool {
        self.inner.has_argmax()
    }
    fn argmax(&self, n: usize, node: usize) -> Option<Vec<f64>> {
        self.inner.argmax(n, node)
    }
    fn legendre_closed_form(&self, n: usize, node: usize, theta: &[f64]) -> Option<f64> {
        self.inner
            .legendre_closed_form(n, node, theta)
            .map(|b| b + self.shift.get(n, node))
    }
}

/// Outcome of sampling the balance inequality and the gradient-hull
/// containment across the tree.
#[derive(Debug, Clone)]
pub struct BalanceReport {
    pub pairs_tested: usize,
    /// Most negative sampled value of g(z₂) − g(z₁) − minθ θᵀ(z₂−z₁).
    pub worst_margin: f64,
    /// Samples below −[`BALANCE_TOL`].
    pub violations: usize,
    pub gradient_checked: bool,
    /// Gradient samples whose hull coordinates dip below the slack.
    pub gradient_outside_hull: usize,
    /// Most negative hull coordinate seen across gradient samples.
    pub worst_hull_coordinate: f64,
}

impl BalanceReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.gradient_outside_hull == 0
    }
}

/// Samples random slope pairs per (time, node) and reports the worst
/// violation of the balance inequality. Balance is a global condition,
/// so sampling is the only generic test; scales cycle through
/// {0.1, 1, 10} times a standard normal.
pub fn check_balance(
    driver: &dyn Driver,
    tree: &ScenarioTree,
    pairs_per_node: usize,
    seed: u64,
) -> BalanceReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = driver.basis();
    let d = basis.dim();
    let scales = [0.1, 1.0, 10.0];
    let mut report = BalanceReport {
        pairs_tested: 0,
        worst_margin: f64::INFINITY,
        violations: 0,
        gradient_checked: false,
        gradient_outside_hull: 0,
        worst_hull_coordinate: f64::INFINITY,
    };
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            for k in 0..pairs_per_node {
                let scale = scales[k % scales.len()];
                let z1: Vec<f64> = (0..d)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let z2: Vec<f64> = (0..d)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let dz: Vec<f64> = z2.iter().zip(&z1).map(|(a, b)| a - b).collect();
                let margin = driver.evaluate(n, node, &z2)
                    - driver.evaluate(n, node, &z1)
                    - basis.theta_min(&dz).0;
                report.pairs_tested += 1;
                report.worst_margin = report.worst_margin.min(margin);
                if margin < -BALANCE_TOL {
                    report.violations += 1;
                }
                if let Some(grad) = driver.gradient(n, node, &z1) {
                    report.gradient_checked = true;
                    let coords = basis.simplex_coordinates(&grad);
                    let min_coord = coords.iter().cloned().fold(f64::INFINITY, f64::min);
                    report.worst_hull_coordinate = report.worst_hull_coordinate.min(min_coord);
                    if min_coord < -CONTAINMENT_TOL {
                        report.gradient_outside_hull += 1;
                    }
                }
            }
        }
    }
    report
}

/// Outcome of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub samples: usize,
    pub worst_relative_error: f64,
}

impl GradientReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.samples == 0 || self.worst_relative_error <= tol
    }
}

/// Checks the driver gradient against central finite differences
/// (h = 1e-5) on random slopes.
pub fn check_gradient(
    driver: &dyn Driver,
    tree: &ScenarioTree,
    samples: usize,
    seed: u64,
) -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = driver.basis().dim();
    let h = 1e-5;
    let mut report = GradientReport {
        samples: 0,
        worst_relative_error: 0.0,
    };
    for _ in 0..samples {
        let n = rng.random_range(1..=tree.horizon());
        let node = rng.random_range(0..tree.num_nodes(n - 1));
        let z: Vec<f64> = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let Some(grad) = driver.gradient(n, node, &z) else {
            continue;
        };
        report.samples += 1;
        for i in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let numeric =
                (driver.evaluate(n, node, &zp) - driver.evaluate(n, node, &zm)) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / grad[i].abs().max(1.0);
            report.worst_relative_error = report.worst_relative_error.max(rel);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Basis;
    use crate::scenario::build_tree;

    fn binomial_tree(n: usize) -> ScenarioTree {
        build_tree(Basis::from_vectors(&[vec![1.0]]).unwrap(), n).unwrap()
    }

    #[test]
    fn zero_driver_balance_clean() {
        let tree = binomial_tree(3);
        let zero = LinearDriver::zero(&tree);
        let report = check_balance(&zero, &tree, 50, 1);
        assert_eq!(report.violations, 0);
        assert!(report.worst_margin >= -BALANCE_TOL);
        assert_eq!(report.gradient_outside_hull, 0);
    }

    #[test]
    fn unbalanced_linear_detected() {
        let tree = binomial_tree(2);
        let slope = PredictableField::constant(&tree, vec![2.0]);
        let intercept = PredictableField::constant(&tree, 0.0);
        let driver = linear_driver(&tree, slope, intercept);
        assert!(!driver.is_balanced());
        let report = check_balance(&driver, &tree, 50, 2);
        assert!(report.violations > 0);
        assert!(report.gradient_outside_hull > 0);
    }

    #[test]
    fn entropic_balance_clean() {
        let tree = binomial_tree(2);
        let spec = EntropicSpec::constant(&tree, &[0.2, 0.8], 1.5).unwrap();
        let driver = entropic_driver(&tree, spec).unwrap();
        let report = check_balance(&driver, &tree, 100, 4);
        assert_eq!(report.violations, 0);
        assert_eq!(report.gradient_outside_hull, 0);
        assert!(report.gradient_checked);
        assert!(report.passed());
    }

    #[test]
    fn shifted_driver_adds_intercept() {
        let tree = binomial_tree(2);
        let zero = LinearDriver::zero(&tree);
        let shift = PredictableField::from_fn(&tree, |n, _| n as f64);
        let shifted = ShiftedDriver::new(&zero as &dyn Driver, shift);
        assert_eq!(shifted.evaluate(1, 0, &[0.3]), 1.0);
        assert_eq!(shifted.evaluate(2, 1, &[0.3]), 2.0);
        assert!(shifted.is_balanced());
    }

    #[test]
    fn gradient_check_on_entropic() {
        let tree = binomial_tree(3);
        let spec = EntropicSpec::constant(&tree, &[0.25, 0.75], 1.5).unwrap();
        let driver = entropic_driver(&tree, spec).unwrap();
        let report = check_gradient(&driver, &tree, 100, 3);
        assert!(report.samples > 0);
        assert!(report.passed(1e-5), "worst {}", report.worst_relative_error);
    }
}
