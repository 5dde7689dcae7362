//! Worst-case drivers gₙ(z) = inf over a slope set of zᵀθ, with the
//! set given either as the full increment hull or as finitely many
//! kernel-induced points per time step.

use crate::error::{Error, Result};
use crate::lattice::{Basis, Simplex, CONTAINMENT_TOL};
use crate::numeric::nearest_in_hull;
use crate::scenario::ScenarioTree;

use super::Driver;

enum SlopeSets {
    /// Θₙ = Θ; the minimum reduces to the d+1 vertices.
    FullHull,
    /// Per-time finite sets of simplex kernels (deterministic in ω).
    PerTime(Vec<Vec<Vec<f64>>>),
}

pub struct WorstCaseDriver {
    basis: Basis,
    horizon: usize,
    sets: SlopeSets,
    /// θ-points vP per time (cached for the finite case).
    points: Vec<Vec<Vec<f64>>>,
    /// Zero lies in conv(Θₙ) for every n, so z = 0 maximizes g.
    zero_in_hull: bool,
}

/// gₙ(z) = min over the whole hull = minⱼ zᵀvⱼ.
pub fn worstcase_full_hull(tree: &ScenarioTree) -> WorstCaseDriver {
    WorstCaseDriver {
        basis: tree.basis().clone(),
        horizon: tree.horizon(),
        sets: SlopeSets::FullHull,
        points: Vec::new(),
        zero_in_hull: true,
    }
}

/// gₙ(z) = minᵢ zᵀ(vPₙ⁽ⁱ⁾) for per-time kernel lists.
pub fn worstcase_from_kernels(
    tree: &ScenarioTree,
    per_time: Vec<Vec<Vec<f64>>>,
) -> Result<WorstCaseDriver> {
    if per_time.len() != tree.horizon() {
        return Err(Error::DepthMismatch {
            depth: tree.horizon(),
            expected: tree.horizon(),
            got: per_time.len(),
        });
    }
    let basis = tree.basis().clone();
    let mut points = Vec::with_capacity(per_time.len());
    let mut zero_in_hull = true;
    for kernels in &per_time {
        if kernels.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut thetas = Vec::with_capacity(kernels.len());
        for k in kernels {
            let s = Simplex::new(k.clone())?;
            thetas.push(basis.hull_point(s.weights()));
        }
        let (_, dist) = nearest_in_hull(&thetas, &vec![0.0; basis.dim()]);
        if dist > 1e-9 {
            zero_in_hull = false;
        }
        points.push(thetas);
    }
    Ok(WorstCaseDriver {
        basis,
        horizon: tree.horizon(),
        sets: SlopeSets::PerTime(per_time),
        points,
        zero_in_hull,
    })
}

impl WorstCaseDriver {
    /// Kernel attaining the minimum at slope z (lowest index on ties);
    /// for the full hull this is the vertex indicator.
    pub fn minimizing_member(&self, n: usize, _node: usize, z: &[f64]) -> Vec<f64> {
        match &self.sets {
            SlopeSets::FullHull => {
                let (_, j) = self.basis.theta_min(z);
                let mut e = vec![0.0; self.basis.num_vertices()];
                e[j] = 1.0;
                e
            }
            SlopeSets::PerTime(kernels) => {
                let thetas = &self.points[n - 1];
                let mut best = f64::INFINITY;
                let mut arg = 0;
                for (i, theta) in thetas.iter().enumerate() {
                    let val: f64 = theta.iter().zip(z).map(|(a, b)| a * b).sum();
                    if val < best {
                        best = val;
                        arg = i;
                    }
                }
                kernels[n - 1][arg].clone()
            }
        }
    }
}

impl Driver for WorstCaseDriver {
    fn basis(&self) -> &Basis {
        &self.basis
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn evaluate(&self, n: usize, _node: usize, z: &[f64]) -> f64 {
        match &self.sets {
            SlopeSets::FullHull => self.basis.theta_min(z).0,
            SlopeSets::PerTime(_) => self.points[n - 1]
                .iter()
                .map(|theta| theta.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::INFINITY, f64::min),
        }
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn is_balanced(&self) -> bool {
        true
    }

    fn has_argmax(&self) -> bool {
        self.zero_in_hull
    }

    fn argmax(&self, _n: usize, _node: usize) -> Option<Vec<f64>> {
        if self.zero_in_hull {
            Some(vec![0.0; self.basis.dim()])
        } else {
            None
        }
    }

    fn minimizing_kernel(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        Some(self.minimizing_member(n, node, z))
    }

    fn legendre_closed_form(&self, n: usize, _node: usize, theta: &[f64]) -> Option<f64> {
        // bₙ vanishes on the convex hull of the slope set and diverges
        // off it.
        let inside = match &self.sets {
            SlopeSets::FullHull => self.basis.hull_contains(theta, CONTAINMENT_TOL),
            SlopeSets::PerTime(_) => {
                let (_, dist) = nearest_in_hull(&self.points[n - 1], theta);
                dist <= 1e-8
            }
        };
        Some(if inside { 0.0 } else { f64::INFINITY })
    }
}
