//! Linear-algebraic substrate: the increment basis, the invertible
//! (1, vᵀ) system, affine decomposition of child-value vectors, and
//! minimization of linear functionals over the increment hull.
//!
//! A basis holds d independent vectors v₁,…,v_d together with the
//! derived vertex v₀ = −v₁−…−v_d, so the d×(d+1) matrix `v` has
//! columns summing to zero. The convex hull of the columns is the set
//! of admissible driver slopes; it is never materialized as a polytope —
//! every query reduces to the d+1 vertices or to one linear solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Column-sum-zero check for constructed bases.
pub const COLUMN_SUM_TOL: f64 = 1e-12;
/// Relative eigenvalue floor below which the Gram matrix counts as singular.
pub const SINGULARITY_RATIO: f64 = 1e-10;
/// Reconstruction accuracy guaranteed by `affine_decompose`.
pub const RECONSTRUCT_TOL: f64 = 1e-10;
/// Default slack when testing hull membership (weights ≥ −tol).
pub const CONTAINMENT_TOL: f64 = 1e-10;
/// Simplex weight validation tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A point of the probability simplex on d+1 outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    weights: Vec<f64>,
}

impl Simplex {
    /// Validates nonnegativity and unit sum (tolerance 1e-12).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSimplex("empty weight vector".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidSimplex(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if let Some(w) = weights.iter().find(|w| **w < -SIMPLEX_TOL) {
            return Err(Error::InvalidSimplex(format!("negative weight {w}")));
        }
        Ok(Simplex { weights })
    }

    /// Uniform point 1/(d+1) on d+1 outcomes.
    pub fn uniform(len: usize) -> Self {
        Simplex {
            weights: vec![1.0 / len as f64; len],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every weight stays at least `eps` away from zero.
    pub fn is_interior(&self, eps: f64) -> bool {
        self.weights.iter().all(|w| *w >= eps)
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

/// The d×(d+1) increment basis with cached Gram data.
///
/// Immutable after construction; all methods are read-only, so shared
/// references may be used concurrently without synchronization.
#[derive(Debug, Clone)]
pub struct Basis {
    dim: usize,
    /// Columns v₀,…,v_d.
    vectors: DMatrix<f64>,
    gram: DMatrix<f64>,
    gram_inv: DMatrix<f64>,
    /// (vvᵀ)⁻¹v, the map y ↦ z(y).
    zmap: DMatrix<f64>,
    /// Inverse of the (d+1)×(d+1) system with rows [1ᵀ; v].
    system_inv: DMatrix<f64>,
    /// Ratio of the largest to the smallest Gram eigenvalue.
    conditioning: f64,
}

impl Basis {
    /// Builds a basis from d independent d-vectors; v₀ is derived as
    /// the negated sum so the columns sum to zero.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let d = vectors.len();
        if d == 0 {
            return Err(Error::InvalidInput("dimension d must be at least 1".into()));
        }
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != d {
                return Err(Error::InvalidInput(format!(
                    "vector {i} has length {}, expected {d}",
                    v.len()
                )));
            }
        }
        let mut m = DMatrix::zeros(d, d + 1);
        for (j, v) in vectors.iter().enumerate() {
            for i in 0..d {
                m[(i, j + 1)] = v[i];
                m[(i, 0)] -= v[i];
            }
        }
        Self::from_matrix(m)
    }

    /// Builds a basis whose Gram matrix vvᵀ equals `sigma`.
    ///
    /// Starts from the standard construction v̄ⱼ = eⱼ, v̄₀ = −Σeⱼ and maps
    /// it through the Cholesky factors of `sigma` and of v̄v̄ᵀ.
    pub fn from_covariance(sigma: &[Vec<f64>]) -> Result<Self> {
        let d = sigma.len();
        if d == 0 {
            return Err(Error::InvalidInput("dimension d must be at least 1".into()));
        }
        let mut s = DMatrix::zeros(d, d);
        for (i, row) in sigma.iter().enumerate() {
            if row.len() != d {
                return Err(Error::InvalidInput(
                    "covariance matrix must be square".into(),
                ));
            }
            for (j, x) in row.iter().enumerate() {
                s[(i, j)] = *x;
            }
        }
        if (&s - s.transpose()).amax() > 1e-10 * (1.0 + s.amax()) {
            return Err(Error::InvalidInput(
                "covariance matrix must be symmetric".into(),
            ));
        }
        let chol = s.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let c = chol.l();

        // Standard basis: v̄ = [−1, I], Gram v̄v̄ᵀ = I + 11ᵀ.
        let mut vbar = DMatrix::zeros(d, d + 1);
        for i in 0..d {
            vbar[(i, 0)] = -1.0;
            vbar[(i, i + 1)] = 1.0;
        }
        let gbar = &vbar * vbar.transpose();
        let cbar = gbar
            .cholesky()
            .expect("standard-basis Gram is positive definite")
            .l();
        let cbar_inv = cbar.try_inverse().expect("Cholesky factor is invertible");
        let v = c * cbar_inv * vbar;
        Self::from_matrix(v)
    }

    fn from_matrix(vectors: DMatrix<f64>) -> Result<Self> {
        let d = vectors.nrows();
        // Column sums must vanish by construction.
        for i in 0..d {
            let s: f64 = (0..=d).map(|j| vectors[(i, j)]).sum();
            debug_assert!(s.abs() <= COLUMN_SUM_TOL * (1.0 + vectors.amax()));
        }
        let gram = &vectors * vectors.transpose();
        let eig = gram.clone().symmetric_eigen();
        let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        if !(max_ev > 0.0) || min_ev <= SINGULARITY_RATIO * max_ev {
            return Err(Error::SingularBasis(format!(
                "Gram eigenvalue range [{min_ev:.3e}, {max_ev:.3e}]"
            )));
        }
        let conditioning = max_ev / min_ev;
        let gram_inv = gram
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularBasis("Gram matrix not invertible".into()))?;
        let zmap = &gram_inv * &vectors;

        let mut system = DMatrix::zeros(d + 1, d + 1);
        for j in 0..=d {
            system[(0, j)] = 1.0;
            for i in 0..d {
                system[(i + 1, j)] = vectors[(i, j)];
            }
        }
        let system_inv = system
            .try_inverse()
            .ok_or_else(|| Error::SingularBasis("(1, vᵀ) system not invertible".into()))?;

        Ok(Basis {
            dim: d,
            vectors,
            gram,
            gram_inv,
            zmap,
            system_inv,
            conditioning,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of increment vertices, d+1.
    pub fn num_vertices(&self) -> usize {
        self.dim + 1
    }

    /// Column vⱼ as a fresh vector.
    pub fn vertex(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.vectors[(i, j)]).collect()
    }

    /// zᵀvⱼ without allocating.
    pub fn vertex_dot(&self, j: usize, z: &[f64]) -> f64 {
        (0..self.dim).map(|i| self.vectors[(i, j)] * z[i]).sum()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    /// Largest over smallest Gram eigenvalue; governs how much floating
    /// point noise the decomposition maps amplify.
    pub fn gram_condition(&self) -> f64 {
        self.conditioning
    }

    /// vp for a weight vector p of length d+1.
    pub fn hull_point(&self, p: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..=self.dim).map(|j| self.vectors[(i, j)] * p[j]).sum())
            .collect()
    }

    /// (vvᵀ)⁻¹x for a d-vector x.
    pub fn apply_gram_inv(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.gram_inv[(i, j)] * x[j]).sum())
            .collect()
    }

    /// (vvᵀ)⁻¹v y for a child-value vector y of length d+1.
    pub fn z_of(&self, y: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        for i in 0..self.dim {
            z[i] = (0..=self.dim).map(|j| self.zmap[(i, j)] * y[j]).sum();
        }
        z
    }

    /// Unique (a, z) with a·1 + vᵀz = y.
    pub fn affine_decompose(&self, y: &[f64]) -> (f64, Vec<f64>) {
        debug_assert_eq!(y.len(), self.num_vertices());
        let a = y.iter().sum::<f64>() / (self.dim + 1) as f64;
        (a, self.z_of(y))
    }

    /// a·1 + vᵀz, the inverse of `affine_decompose`.
    pub fn reconstruct(&self, a: f64, z: &[f64]) -> Vec<f64> {
        (0..=self.dim).map(|j| a + self.vertex_dot(j, z)).collect()
    }

    /// Minimum of z ↦ zᵀθ over the increment hull together with the
    /// attaining vertex (lowest index on ties). Valid because a linear
    /// functional over a polytope attains its minimum at a vertex.
    pub fn theta_min(&self, z: &[f64]) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for j in 0..=self.dim {
            let v = self.vertex_dot(j, z);
            if v < best {
                best = v;
                arg = j;
            }
        }
        (best, arg)
    }

    /// Unique weights p solving 1ᵀp = 1, vp = θ.
    ///
    /// The result lies in the simplex iff θ lies in the increment hull;
    /// use [`Basis::hull_contains`] for the membership test.
    pub fn simplex_coordinates(&self, theta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(theta.len(), self.dim);
        let mut rhs = DVector::zeros(self.dim + 1);
        rhs[0] = 1.0;
        for i in 0..self.dim {
            rhs[i + 1] = theta[i];
        }
        let p = &self.system_inv * rhs;
        p.iter().cloned().collect()
    }

    /// Hull membership via the containment solve with slack `tol`.
    pub fn hull_contains(&self, theta: &[f64], tol: f64) -> bool {
        self.simplex_coordinates(theta).iter().all(|w| *w >= -tol)
    }
}
