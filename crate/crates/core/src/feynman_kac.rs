//! Markovian fast path: the recombining-lattice recursion computing
//! uₙ on reachable lattice points, polynomial in the horizon instead of
//! exponential.
//!
//! Lattice points are keyed by the letter-multiplicity vector
//! (n₀,…,n_d) with Σnⱼ = n, never by floating-point coordinates, so
//! recombination is exact. At fixed time the key determines the point
//! uniquely because (1, vᵀ) is invertible.

use std::collections::BTreeMap;

use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::lattice::Basis;
use crate::scenario::ScenarioTree;

/// Multiplicity key (n₀,…,n_d); the sum equals the time index.
pub type LatticeKey = Vec<u32>;

/// Per-time maps from reachable lattice points to uₙ values.
#[derive(Debug, Clone)]
pub struct LatticeFunction {
    basis: Basis,
    levels: Vec<BTreeMap<LatticeKey, f64>>,
    /// Total number of (time, point) evaluations performed.
    evaluated_points: usize,
}

impl LatticeFunction {
    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    /// uₙ at a reachable point.
    pub fn value(&self, time: usize, key: &LatticeKey) -> Result<f64> {
        self.levels[time]
            .get(key)
            .copied()
            .ok_or(Error::UnreachablePoint { time })
    }

    pub fn value_at_origin(&self) -> f64 {
        self.levels[0][&vec![0u32; self.basis.num_vertices()]]
    }

    pub fn level(&self, time: usize) -> &BTreeMap<LatticeKey, f64> {
        &self.levels[time]
    }

    pub fn evaluated_points(&self) -> usize {
        self.evaluated_points
    }

    /// Slope Zₙ at a depth-(n−1) point, from the children at time n.
    pub fn slope(&self, n: usize, key: &LatticeKey) -> Result<Vec<f64>> {
        let children = self.child_values(n, key)?;
        Ok(self.basis.z_of(&children))
    }

    /// Child values (uₙ(x+v₀),…,uₙ(x+v_d)) of a time-(n−1) point.
    pub fn child_values(&self, n: usize, key: &LatticeKey) -> Result<Vec<f64>> {
        (0..self.basis.num_vertices())
            .map(|j| {
                let mut child = key.clone();
                child[j] += 1;
                self.value(n, &child)
            })
            .collect()
    }

    /// Coordinates Σ nⱼvⱼ of a key.
    pub fn coordinates(&self, key: &LatticeKey) -> Vec<f64> {
        coordinates_of(&self.basis, key)
    }
}

fn coordinates_of(basis: &Basis, key: &LatticeKey) -> Vec<f64> {
    let d = basis.dim();
    let mut x = vec![0.0; d];
    for (j, count) in key.iter().enumerate() {
        let v = basis.vertex(j);
        for i in 0..d {
            x[i] += *count as f64 * v[i];
        }
    }
    x
}

/// All multiplicity vectors of length `parts` summing to `total`,
/// in lexicographic order.
fn compositions(parts: usize, total: u32) -> Vec<LatticeKey> {
    let mut out = Vec::new();
    let mut current = vec![0u32; parts];
    fn rec(out: &mut Vec<LatticeKey>, current: &mut LatticeKey, idx: usize, remaining: u32) {
        if idx == current.len() - 1 {
            current[idx] = remaining;
            out.push(current.clone());
            return;
        }
        for k in 0..=remaining {
            current[idx] = k;
            rec(out, current, idx + 1, remaining - k);
        }
        current[idx] = 0;
    }
    rec(&mut out, &mut current, 0, total);
    out
}

/// Forward-difference generators at a point: the averaged difference
/// 𝓛u(x) and the difference vector 𝓝u(x).
pub fn discrete_generators(basis: &Basis, u: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> (f64, Vec<f64>) {
    let ux = u(x);
    let diffs: Vec<f64> = (0..basis.num_vertices())
        .map(|j| {
            let v = basis.vertex(j);
            let shifted: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
            u(&shifted) - ux
        })
        .collect();
    let l = diffs.iter().sum::<f64>() / basis.num_vertices() as f64;
    (l, diffs)
}

/// Backward recursion u_{n−1}(x) = uₙ(x) + 𝓛uₙ(x) + fₙ(x, (vvᵀ)⁻¹v 𝓝uₙ(x))
/// on reachable points only; uₙ(x) cancels against the average, so only
/// child values enter.
pub fn markov_solve(
    basis: &Basis,
    horizon: usize,
    terminal: &dyn Fn(&[f64]) -> f64,
    generator: &dyn Fn(usize, &[f64], &[f64]) -> f64,
) -> Result<LatticeFunction> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let parts = basis.num_vertices();
    let mut levels: Vec<BTreeMap<LatticeKey, f64>> = vec![BTreeMap::new(); horizon + 1];
    let mut evaluated = 0usize;

    for key in compositions(parts, horizon as u32) {
        let x = coordinates_of(basis, &key);
        levels[horizon].insert(key, terminal(&x));
        evaluated += 1;
    }
    for n in (1..=horizon).rev() {
        for key in compositions(parts, (n - 1) as u32) {
            let children: Vec<f64> = (0..parts)
                .map(|j| {
                    let mut c = key.clone();
                    c[j] += 1;
                    levels[n][&c]
                })
                .collect();
            let mean = children.iter().sum::<f64>() / parts as f64;
            let z = basis.z_of(&children);
            let x = coordinates_of(basis, &key);
            let f = generator(n, &x, &z);
            if !f.is_finite() {
                return Err(Error::DriverEvaluationFailed { time: n, node: 0 });
            }
            levels[n - 1].insert(key, mean + f);
            evaluated += 1;
        }
    }
    Ok(LatticeFunction {
        basis: basis.clone(),
        levels,
        evaluated_points: evaluated,
    })
}

/// Driver built from a Markov generator fₙ(x, z) evaluated at node
/// positions; lets the path-tree solver consume Markov data.
pub struct MarkovDriver<F> {
    basis: Basis,
    horizon: usize,
    /// Node positions per depth 0..N−1.
    positions: Vec<Vec<Vec<f64>>>,
    generator: F,
    concave: bool,
    balanced: bool,
}

impl<F> MarkovDriver<F>
where
    F: Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync,
{
    /// The concavity/balance flags are the caller's claim about f.
    pub fn new(tree: &ScenarioTree, generator: F, concave: bool, balanced: bool) -> Self {
        let positions = (0..tree.horizon())
            .map(|depth| {
                (0..tree.num_nodes(depth))
                    .map(|node| tree.position(depth, node))
                    .collect()
            })
            .collect();
        MarkovDriver {
            basis: tree.basis().clone(),
            horizon: tree.horizon(),
            positions,
            generator,
            concave,
            balanced,
        }
    }
}

impl<F> Driver for MarkovDriver<F>
where
    F: Fn(usize, &[f64], &[f64]) -> f64 + Send + Sync,
{
    fn basis(&self) -> &Basis {
        &self.basis
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        (self.generator)(n, &self.positions[n - 1][node], z)
    }

    fn is_concave(&self) -> bool {
        self.concave
    }

    fn is_balanced(&self) -> bool {
        self.balanced
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::solve;
    use crate::drivers::LinearDriver;
    use crate::scenario::build_tree;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn triangular() -> Basis {
        let s = 6.0_f64.sqrt();
        Basis::from_vectors(&[vec![0.0, -2.0 / s], vec![3.0_f64.sqrt() / s, 1.0 / s]]).unwrap()
    }

    fn binomial() -> Basis {
        Basis::from_vectors(&[vec![1.0]]).unwrap()
    }

    fn binomial_coeff(n: usize, k: usize) -> usize {
        let mut r = 1usize;
        for i in 0..k {
            r = r * (n - i) / (i + 1);
        }
        r
    }

    #[test]
    fn generators_on_constant_and_linear() {
        let basis = triangular();
        let (l, n) = discrete_generators(&basis, &|_| 7.0, &[0.3, -0.2]);
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-14);
        for x in &n {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-14);
        }
        let w = [2.0, -1.0];
        let lin = move |x: &[f64]| w[0] * x[0] + w[1] * x[1];
        let (l, n) = discrete_generators(&basis, &lin, &[1.0, 1.0]);
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-12);
        for (j, nj) in n.iter().enumerate() {
            assert_abs_diff_eq!(*nj, basis.vertex_dot(j, &w), epsilon = 1e-12);
        }
    }

    #[test]
    fn generators_on_squared_norm() {
        // 𝓛|x|² = (Σⱼ|vⱼ|²)/(d+1): the cross terms cancel by v1 = 0.
        let basis = triangular();
        let sq = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
        let expected: f64 = (0..3)
            .map(|j| basis.vertex(j).iter().map(|a| a * a).sum::<f64>())
            .sum::<f64>()
            / 3.0;
        for x in [[0.0, 0.0], [1.3, -0.4]] {
            let (l, _) = discrete_generators(&basis, &sq, &x);
            assert_abs_diff_eq!(l, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_generator_linear_terminal_is_martingale() {
        let basis = triangular();
        let w = [1.5, -0.7];
        let u = markov_solve(&basis, 5, &|x| w[0] * x[0] + w[1] * x[1], &|_, _, _| 0.0).unwrap();
        for n in 0..=5 {
            for (key, value) in u.level(n) {
                let x = u.coordinates(key);
                assert_abs_diff_eq!(*value, w[0] * x[0] + w[1] * x[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matches_tree_solve_zero_driver() {
        let basis = binomial();
        let tree = build_tree(basis.clone(), 4).unwrap();
        let h = |x: &[f64]| (x[0] * 0.7).sin() + x[0] * x[0] * 0.1;
        let u = markov_solve(&basis, 4, &h, &|_, _, _| 0.0).unwrap();
        let terminal: Vec<f64> = (0..tree.num_leaves())
            .map(|leaf| h(&tree.position(4, leaf)))
            .collect();
        let sol = solve(&tree, &LinearDriver::zero(&tree), &terminal).unwrap();
        for n in 0..=4 {
            for node in 0..tree.num_nodes(n) {
                let key = tree.letter_counts(n, node);
                assert_abs_diff_eq!(
                    sol.y.at(n, node),
                    u.value(n, &key).unwrap(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn entropic_markov_matches_tree_and_point_count() {
        let basis = triangular();
        let horizon = 6;
        let tree = build_tree(basis.clone(), horizon).unwrap();
        let gamma = 1.2;
        // State-dependent belief tilt keeps the instance genuinely Markov.
        let f = move |_n: usize, x: &[f64], z: &[f64]| {
            let shift = 0.1 * (x[0].tanh());
            let b = Basis::from_vectors(&[
                vec![0.0, -2.0 / 6.0_f64.sqrt()],
                vec![3.0_f64.sqrt() / 6.0_f64.sqrt(), 1.0 / 6.0_f64.sqrt()],
            ])
            .unwrap();
            let kernel = [1.0 / 3.0 + shift, 1.0 / 3.0 - shift, 1.0 / 3.0];
            let total: f64 = kernel.iter().sum();
            let exps: Vec<f64> = (0..3)
                .map(|j| (-gamma * b.vertex_dot(j, z)).exp() * kernel[j] / total)
                .collect();
            -(exps.iter().sum::<f64>()).ln() / gamma
        };
        let h = |x: &[f64]| x[0].max(0.0) + 0.3 * x[1];
        let u = markov_solve(&basis, horizon, &h, &f).unwrap();
        let terminal: Vec<f64> = (0..tree.num_leaves())
            .map(|leaf| h(&tree.position(horizon, leaf)))
            .collect();
        let driver = MarkovDriver::new(&tree, f, true, true);
        let sol = solve(&tree, &driver, &terminal).unwrap();
        for n in 0..=horizon {
            for node in 0..tree.num_nodes(n) {
                let key = tree.letter_counts(n, node);
                assert_abs_diff_eq!(
                    sol.y.at(n, node),
                    u.value(n, &key).unwrap(),
                    epsilon = 1e-10
                );
            }
        }
        // Slopes agree as well.
        for n in 1..=horizon {
            for node in 0..tree.num_nodes(n - 1) {
                let key = tree.letter_counts(n - 1, node);
                let zs = u.slope(n, &key).unwrap();
                for i in 0..2 {
                    assert_abs_diff_eq!(sol.z.get(n, node)[i], zs[i], epsilon = 1e-10);
                }
            }
        }
        // C(n+d, d) points per level; far fewer than 3^n tree nodes.
        let expected: usize = (0..=horizon).map(|n| binomial_coeff(n + 2, 2)).sum();
        assert_eq!(u.evaluated_points(), expected);
        assert_eq!(u.level(horizon).len(), binomial_coeff(horizon + 2, 2));
        assert!(u.level(horizon).len() < tree.num_leaves());
    }

    #[test]
    fn recombination_same_multiset_same_point() {
        let basis = triangular();
        let tree = build_tree(basis, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut word: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let node1 = tree.node_of_word(&word);
            word.reverse();
            let node2 = tree.node_of_word(&word);
            assert_eq!(tree.letter_counts(4, node1), tree.letter_counts(4, node2));
            let x1 = tree.position(4, node1);
            let x2 = tree.position(4, node2);
            for (a, b) in x1.iter().zip(&x2) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_point_rejected() {
        let basis = binomial();
        let u = markov_solve(&basis, 2, &|x| x[0], &|_, _, _| 0.0).unwrap();
        assert!(matches!(
            u.value(1, &vec![5, 5]),
            Err(Error::UnreachablePoint { time: 1 })
        ));
    }
}
