//! The filtered sample space: a full (d+1)-ary path tree of depth N
//! with adapted and predictable fields, measure changes, and the
//! unique martingale measure.
//!
//! Nodes are addressed arithmetically. A node at depth n is the word
//! (j₁,…,jₙ) over the alphabet {0,…,d}; its index is the base-(d+1)
//! encoding of the word, so child/parent lookups are one multiply or
//! divide and backward sweeps walk contiguous slices. Trees and fields
//! are immutable values; nothing here mutates shared state.

use crate::error::{Error, Result};
use crate::lattice::{Basis, Simplex};

/// Default cap on the number of paths (d+1)^N.
pub const DEFAULT_TREE_CAP: usize = 1_000_000;
/// Interiority floor for reference measures.
pub const INTERIOR_EPS: f64 = 1e-12;

/// Full (d+1)-ary path tree of depth N over an increment basis.
#[derive(Debug, Clone)]
pub struct ScenarioTree {
    basis: Basis,
    horizon: usize,
    /// (d+1)^n for n = 0..=N, precomputed.
    level_sizes: Vec<usize>,
}

/// Builds the path tree, enforcing the path-count cap.
pub fn build_tree(basis: Basis, horizon: usize) -> Result<ScenarioTree> {
    build_tree_with_cap(basis, horizon, DEFAULT_TREE_CAP)
}

pub fn build_tree_with_cap(basis: Basis, horizon: usize, cap: usize) -> Result<ScenarioTree> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let arity = basis.num_vertices();
    let mut level_sizes = Vec::with_capacity(horizon + 1);
    let mut size: usize = 1;
    level_sizes.push(1);
    for _ in 0..horizon {
        size = size.checked_mul(arity).ok_or(Error::TreeTooLarge {
            paths: usize::MAX,
            cap,
        })?;
        if size > cap {
            return Err(Error::TreeTooLarge { paths: size, cap });
        }
        level_sizes.push(size);
    }
    Ok(ScenarioTree {
        basis,
        horizon,
        level_sizes,
    })
}

impl ScenarioTree {
    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Branching factor d+1.
    pub fn arity(&self) -> usize {
        self.basis.num_vertices()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of nodes at a depth 0 ≤ n ≤ N.
    pub fn num_nodes(&self, depth: usize) -> usize {
        self.level_sizes[depth]
    }

    pub fn num_leaves(&self) -> usize {
        self.level_sizes[self.horizon]
    }

    pub fn child(&self, node: usize, letter: usize) -> usize {
        node * self.arity() + letter
    }

    pub fn parent(&self, node: usize) -> usize {
        node / self.arity()
    }

    /// Last letter of the word, i.e. which increment led into the node.
    pub fn last_letter(&self, node: usize) -> usize {
        node % self.arity()
    }

    /// Ancestor of a depth-`from` node at depth `to` ≤ `from`.
    pub fn ancestor(&self, node: usize, from: usize, to: usize) -> usize {
        debug_assert!(to <= from);
        node / self.level_sizes[from - to]
    }

    /// The word (j₁,…,jₙ) of a node at the given depth.
    pub fn word(&self, depth: usize, node: usize) -> Vec<usize> {
        let mut w = vec![0; depth];
        let mut n = node;
        for k in (0..depth).rev() {
            w[k] = n % self.arity();
            n /= self.arity();
        }
        w
    }

    /// Index of the node with the given word.
    pub fn node_of_word(&self, word: &[usize]) -> usize {
        word.iter().fold(0, |acc, j| acc * self.arity() + j)
    }

    /// Position X(w) = Σₖ v_{jₖ} of a node.
    pub fn position(&self, depth: usize, node: usize) -> Vec<f64> {
        let d = self.dim();
        let mut x = vec![0.0; d];
        for j in self.word(depth, node) {
            let v = self.basis.vertex(j);
            for i in 0..d {
                x[i] += v[i];
            }
        }
        x
    }

    /// Letter multiplicities (n₀,…,n_d) of a node's word.
    pub fn letter_counts(&self, depth: usize, node: usize) -> Vec<u32> {
        let mut counts = vec![0u32; self.arity()];
        for j in self.word(depth, node) {
            counts[j] += 1;
        }
        counts
    }
}

/// Values attached to every node of every depth 0..=N.
///
/// The depth-n slice is an ℱₙ-measurable random variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField {
    slices: Vec<Vec<f64>>,
}

impl AdaptedField {
    pub fn from_slices(tree: &ScenarioTree, slices: Vec<Vec<f64>>) -> Result<Self> {
        if slices.len() != tree.horizon() + 1 {
            return Err(Error::DepthMismatch {
                depth: tree.horizon(),
                expected: tree.horizon() + 1,
                got: slices.len(),
            });
        }
        for (n, s) in slices.iter().enumerate() {
            if s.len() != tree.num_nodes(n) {
                return Err(Error::DepthMismatch {
                    depth: n,
                    expected: tree.num_nodes(n),
                    got: s.len(),
                });
            }
        }
        Ok(AdaptedField { slices })
    }

    pub fn constant(tree: &ScenarioTree, value: f64) -> Self {
        AdaptedField {
            slices: (0..=tree.horizon())
                .map(|n| vec![value; tree.num_nodes(n)])
                .collect(),
        }
    }

    pub fn from_fn(tree: &ScenarioTree, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        AdaptedField {
            slices: (0..=tree.horizon())
                .map(|n| {
                    (0..tree.num_nodes(n))
                        .map(|i| f(n, i))
                        .collect::<Vec<f64>>()
                })
                .collect(),
        }
    }

    pub fn max_depth(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn slice(&self, depth: usize) -> &[f64] {
        &self.slices[depth]
    }

    pub fn at(&self, depth: usize, node: usize) -> f64 {
        self.slices[depth][node]
    }
}

/// Values attached to time coordinates n = 1..=N, each known one step
/// ahead: the time-n slice lives on depth-(n−1) nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictableField<T> {
    slices: Vec<Vec<T>>,
}

impl<T: Clone> PredictableField<T> {
    pub fn from_slices(tree: &ScenarioTree, slices: Vec<Vec<T>>) -> Result<Self> {
        if slices.len() != tree.horizon() {
            return Err(Error::DepthMismatch {
                depth: tree.horizon(),
                expected: tree.horizon(),
                got: slices.len(),
            });
        }
        for (k, s) in slices.iter().enumerate() {
            if s.len() != tree.num_nodes(k) {
                return Err(Error::DepthMismatch {
                    depth: k,
                    expected: tree.num_nodes(k),
                    got: s.len(),
                });
            }
        }
        Ok(PredictableField { slices })
    }

    pub fn constant(tree: &ScenarioTree, value: T) -> Self {
        PredictableField {
            slices: (0..tree.horizon())
                .map(|k| vec![value.clone(); tree.num_nodes(k)])
                .collect(),
        }
    }

    pub fn from_fn(tree: &ScenarioTree, mut f: impl FnMut(usize, usize) -> T) -> Self {
        PredictableField {
            slices: (1..=tree.horizon())
                .map(|n| (0..tree.num_nodes(n - 1)).map(|i| f(n, i)).collect())
                .collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.slices.len()
    }

    /// Slice for time n (indexed by depth-(n−1) nodes).
    pub fn time_slice(&self, n: usize) -> &[T] {
        &self.slices[n - 1]
    }

    pub fn get(&self, n: usize, node: usize) -> &T {
        &self.slices[n - 1][node]
    }
}

/// A probability measure given by its one-step conditional kernels.
///
/// The kernel at time n and depth-(n−1) node is a simplex point over
/// the d+1 increments; path weights are the products along prefixes.
#[derive(Debug, Clone)]
pub struct Measure {
    kernels: PredictableField<Vec<f64>>,
    /// Every node and time shares one kernel (so increments are iid).
    constant: bool,
}

impl Measure {
    /// The unique martingale measure: uniform kernel 1/(d+1) everywhere.
    pub fn martingale(tree: &ScenarioTree) -> Self {
        let kernel = Simplex::uniform(tree.arity()).into_weights();
        Measure {
            kernels: PredictableField::constant(tree, kernel),
            constant: true,
        }
    }

    /// iid measure with one kernel shared by all times and nodes.
    pub fn from_constant_kernel(tree: &ScenarioTree, kernel: &[f64]) -> Result<Self> {
        let s = Simplex::new(kernel.to_vec())?;
        Ok(Measure {
            kernels: PredictableField::constant(tree, s.into_weights()),
            constant: true,
        })
    }

    /// Time-dependent deterministic kernels (one per time step).
    pub fn from_time_kernels(tree: &ScenarioTree, kernels: &[Vec<f64>]) -> Result<Self> {
        if kernels.len() != tree.horizon() {
            return Err(Error::DepthMismatch {
                depth: tree.horizon(),
                expected: tree.horizon(),
                got: kernels.len(),
            });
        }
        let mut slices = Vec::with_capacity(kernels.len());
        for (k, kernel) in kernels.iter().enumerate() {
            let s = Simplex::new(kernel.clone())?;
            slices.push(vec![s.into_weights(); tree.num_nodes(k)]);
        }
        let constant = kernels.windows(2).all(|w| w[0] == w[1]);
        Ok(Measure {
            kernels: PredictableField { slices },
            constant,
        })
    }

    /// Fully general predictable kernel field.
    pub fn from_kernel_field(
        tree: &ScenarioTree,
        kernels: PredictableField<Vec<f64>>,
    ) -> Result<Self> {
        if kernels.horizon() != tree.horizon() {
            return Err(Error::DepthMismatch {
                depth: tree.horizon(),
                expected: tree.horizon(),
                got: kernels.horizon(),
            });
        }
        for n in 1..=tree.horizon() {
            for node in 0..tree.num_nodes(n - 1) {
                Simplex::new(kernels.get(n, node).clone())?;
            }
        }
        Ok(Measure {
            kernels,
            constant: false,
        })
    }

    pub fn kernels(&self) -> &PredictableField<Vec<f64>> {
        &self.kernels
    }

    pub fn kernel(&self, n: usize, node: usize) -> &[f64] {
        self.kernels.get(n, node)
    }

    /// True when one kernel is shared by every time and node.
    pub fn has_constant_kernel(&self) -> bool {
        self.constant
    }

    pub fn is_interior(&self, eps: f64) -> bool {
        self.kernels
            .slices
            .iter()
            .flatten()
            .all(|k| k.iter().all(|p| *p >= eps))
    }

    /// Weight of every full path (leaf), a probability vector.
    pub fn path_weights(&self, tree: &ScenarioTree) -> Vec<f64> {
        let mut weights = vec![1.0];
        for n in 1..=tree.horizon() {
            let mut next = vec![0.0; tree.num_nodes(n)];
            for (node, w) in weights.iter().enumerate() {
                let kernel = self.kernel(n, node);
                for (j, k) in kernel.iter().enumerate() {
                    next[tree.child(node, j)] = w * k;
                }
            }
            weights = next;
        }
        weights
    }

    /// Expectation of a terminal (leaf) payoff.
    pub fn expect_terminal(&self, tree: &ScenarioTree, leaf_values: &[f64]) -> f64 {
        self.path_weights(tree)
            .iter()
            .zip(leaf_values)
            .map(|(w, y)| w * y)
            .sum()
    }

    /// One-step backward averaging of a depth-m slice down to depth n.
    ///
    /// Implements conditional expectation under this measure; the tower
    /// property holds by construction.
    pub fn condition(
        &self,
        tree: &ScenarioTree,
        slice: &[f64],
        to_depth: usize,
    ) -> Result<Vec<f64>> {
        let from_depth = (0..=tree.horizon())
            .find(|n| tree.num_nodes(*n) == slice.len())
            .ok_or(Error::DepthMismatch {
                depth: tree.horizon(),
                expected: tree.num_leaves(),
                got: slice.len(),
            })?;
        if to_depth > from_depth {
            return Err(Error::DepthMismatch {
                depth: to_depth,
                expected: from_depth,
                got: to_depth,
            });
        }
        let mut current = slice.to_vec();
        for n in (to_depth + 1..=from_depth).rev() {
            let mut prev = vec![0.0; tree.num_nodes(n - 1)];
            for (node, out) in prev.iter_mut().enumerate() {
                let kernel = self.kernel(n, node);
                *out = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * current[tree.child(node, j)])
                    .sum();
            }
            current = prev;
        }
        Ok(current)
    }

    /// The density martingale Lₙ of this measure against `reference`,
    /// as an adapted field with L₀ = 1.
    ///
    /// Requires the reference kernel to be strictly interior wherever
    /// this measure puts mass.
    pub fn density(&self, tree: &ScenarioTree, reference: &Measure) -> Result<AdaptedField> {
        let mut slices = vec![vec![1.0]];
        for n in 1..=tree.horizon() {
            let mut slice = vec![0.0; tree.num_nodes(n)];
            for node in 0..tree.num_nodes(n - 1) {
                let target = self.kernel(n, node);
                let refk = reference.kernel(n, node);
                let parent_value = slices[n - 1][node];
                for j in 0..tree.arity() {
                    if refk[j] < INTERIOR_EPS {
                        if target[j] > INTERIOR_EPS {
                            return Err(Error::NonEquivalent);
                        }
                        slice[tree.child(node, j)] = 0.0;
                    } else {
                        slice[tree.child(node, j)] = parent_value * target[j] / refk[j];
                    }
                }
            }
            slices.push(slice);
        }
        Ok(AdaptedField { slices })
    }
}
