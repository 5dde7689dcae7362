//! Locally entropic monetary utility drivers: log-sum-exp generators
//! with per-step risk aversion Gₙ, belief kernel P̂ₙ, and shift Bₙ,
//! together with their closed-form sup-convolution.

use crate::error::{Error, Result};
use crate::lattice::Basis;
use crate::scenario::{Measure, PredictableField, ScenarioTree};

use super::Driver;

/// Parameters of a locally entropic driver.
///
/// gₙ(z) = −(1/Gₙ) log Σⱼ e^{−Gₙ zᵀvⱼ} P̂ₙⱼ − (1/Gₙ) log Bₙ.
#[derive(Debug, Clone)]
pub struct EntropicSpec {
    pub belief: Measure,
    pub risk_aversion: PredictableField<f64>,
    pub shift: PredictableField<f64>,
}

impl EntropicSpec {
    pub fn new(
        belief: Measure,
        risk_aversion: PredictableField<f64>,
        shift: PredictableField<f64>,
    ) -> Self {
        EntropicSpec {
            belief,
            risk_aversion,
            shift,
        }
    }

    /// Unit shift B ≡ 1.
    pub fn with_unit_shift(
        tree: &ScenarioTree,
        belief: Measure,
        risk_aversion: PredictableField<f64>,
    ) -> Self {
        EntropicSpec {
            belief,
            risk_aversion,
            shift: PredictableField::constant(tree, 1.0),
        }
    }

    /// Constant belief kernel, constant risk aversion γ, unit shift.
    pub fn constant(tree: &ScenarioTree, kernel: &[f64], gamma: f64) -> Result<Self> {
        Ok(EntropicSpec {
            belief: Measure::from_constant_kernel(tree, kernel)?,
            risk_aversion: PredictableField::constant(tree, gamma),
            shift: PredictableField::constant(tree, 1.0),
        })
    }
}

/// The driver induced by an [`EntropicSpec`]. Concave, balanced, and
/// maximized in closed form.
pub struct EntropicDriver {
    basis: Basis,
    horizon: usize,
    spec: EntropicSpec,
}

/// Validates the spec (interior belief, positive G and B) and wraps it
/// as a driver.
pub fn entropic_driver(tree: &ScenarioTree, spec: EntropicSpec) -> Result<EntropicDriver> {
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            let kernel = spec.belief.kernel(n, node);
            if let Some(p) = kernel.iter().find(|p| **p <= 0.0) {
                return Err(Error::BeliefNotInterior {
                    time: n,
                    node,
                    value: *p,
                });
            }
            let g = *spec.risk_aversion.get(n, node);
            let b = *spec.shift.get(n, node);
            if !(g > 0.0) || !(b > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "risk aversion and shift must be positive (G={g}, B={b} at time {n}, node {node})"
                )));
            }
        }
    }
    Ok(EntropicDriver {
        basis: tree.basis().clone(),
        horizon: tree.horizon(),
        spec,
    })
}

impl EntropicDriver {
    pub fn spec(&self) -> &EntropicSpec {
        &self.spec
    }

    /// Tilted one-step weights P̂ₙⱼ(z) ∝ e^{−Gₙ zᵀvⱼ} P̂ₙⱼ.
    pub fn tilted_kernel(&self, n: usize, node: usize, z: &[f64]) -> Vec<f64> {
        let g = *self.spec.risk_aversion.get(n, node);
        let kernel = self.spec.belief.kernel(n, node);
        let exponents: Vec<f64> = (0..self.basis.num_vertices())
            .map(|j| -g * self.basis.vertex_dot(j, z))
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = exponents
            .iter()
            .zip(kernel)
            .map(|(t, p)| (t - m).exp() * p)
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter().map(|w| w / total).collect()
    }
}

impl Driver for EntropicDriver {
    fn basis(&self) -> &Basis {
        &self.basis
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        let g = *self.spec.risk_aversion.get(n, node);
        let b = *self.spec.shift.get(n, node);
        let kernel = self.spec.belief.kernel(n, node);
        // Max-shifted log-sum-exp keeps large G z stable.
        let exponents: Vec<f64> = (0..self.basis.num_vertices())
            .map(|j| -g * self.basis.vertex_dot(j, z))
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = exponents
            .iter()
            .zip(kernel)
            .map(|(t, p)| (t - m).exp() * p)
            .sum();
        -(m + s.ln()) / g - b.ln() / g
    }

    fn gradient(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        // ∇gₙ(z) = v P̂ₙ(z) with the tilted weights.
        Some(self.basis.hull_point(&self.tilted_kernel(n, node, z)))
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn is_balanced(&self) -> bool {
        true
    }

    fn has_argmax(&self) -> bool {
        true
    }

    fn argmax(&self, n: usize, node: usize) -> Option<Vec<f64>> {
        // Z†ₙ = (1/Gₙ)(vvᵀ)⁻¹v log P̂ₙ.
        let g = *self.spec.risk_aversion.get(n, node);
        let log_kernel: Vec<f64> = self
            .spec
            .belief
            .kernel(n, node)
            .iter()
            .map(|p| p.ln())
            .collect();
        Some(self.basis.z_of(&log_kernel).iter().map(|x| x / g).collect())
    }

    fn minimizing_kernel(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        Some(self.tilted_kernel(n, node, z))
    }

    fn as_entropic(&self) -> Option<&EntropicDriver> {
        Some(self)
    }
}

/// Closed-form sup-convolution of entropic specs together with the
/// per-node normalizer Cₙ of the geometric belief mixture.
#[derive(Debug, Clone)]
pub struct EntropicAggregate {
    pub spec: EntropicSpec,
    /// Cₙ = Σⱼ Πᵢ (P̂ⱼ⁽ⁱ⁾)^{Gₙ/Gₙ⁽ⁱ⁾}; at most 1, with equality iff the
    /// beliefs coincide.
    pub normalizer: PredictableField<f64>,
}

/// Aggregates entropic specs: harmonic risk aversion, geometric belief
/// mixture normalized by Cₙ, shift absorbing −(1/Gₙ) log Cₙ.
pub fn entropic_sup_convolution(
    tree: &ScenarioTree,
    specs: &[EntropicSpec],
) -> Result<EntropicAggregate> {
    if specs.is_empty() {
        return Err(Error::EmptySet);
    }
    let arity = tree.arity();
    let mut g_slices = Vec::with_capacity(tree.horizon());
    let mut b_slices = Vec::with_capacity(tree.horizon());
    let mut k_slices = Vec::with_capacity(tree.horizon());
    let mut c_slices = Vec::with_capacity(tree.horizon());
    for n in 1..=tree.horizon() {
        let nodes = tree.num_nodes(n - 1);
        let mut gs = Vec::with_capacity(nodes);
        let mut bs = Vec::with_capacity(nodes);
        let mut ks = Vec::with_capacity(nodes);
        let mut cs = Vec::with_capacity(nodes);
        for node in 0..nodes {
            let g_total = 1.0
                / specs
                    .iter()
                    .map(|s| 1.0 / *s.risk_aversion.get(n, node))
                    .sum::<f64>();
            let raw: Vec<f64> = (0..arity)
                .map(|j| {
                    specs
                        .iter()
                        .map(|s| {
                            let gi = *s.risk_aversion.get(n, node);
                            (g_total / gi) * s.belief.kernel(n, node)[j].ln()
                        })
                        .sum::<f64>()
                        .exp()
                })
                .collect();
            let c: f64 = raw.iter().sum();
            let kernel: Vec<f64> = raw.iter().map(|x| x / c).collect();
            let b_total = c * specs
                .iter()
                .map(|s| {
                    let gi = *s.risk_aversion.get(n, node);
                    ((g_total / gi) * s.shift.get(n, node).ln()).exp()
                })
                .product::<f64>();
            gs.push(g_total);
            bs.push(b_total);
            ks.push(kernel);
            cs.push(c);
        }
        g_slices.push(gs);
        b_slices.push(bs);
        k_slices.push(ks);
        c_slices.push(cs);
    }
    let belief = Measure::from_kernel_field(tree, PredictableField::from_slices(tree, k_slices)?)?;
    Ok(EntropicAggregate {
        spec: EntropicSpec {
            belief,
            risk_aversion: PredictableField::from_slices(tree, g_slices)?,
            shift: PredictableField::from_slices(tree, b_slices)?,
        },
        normalizer: PredictableField::from_slices(tree, c_slices)?,
    })
}
