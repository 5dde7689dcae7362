//! Market equilibrium: clearing checks, supply normalization, the
//! single-agent belief recursion, representative-agent aggregation, and
//! the heterogeneous-belief betting construction.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::bsde::solve;
use crate::drivers::{
    entropic_driver, entropic_sup_convolution, sup_convolution, Driver, EntropicSpec,
};
use crate::error::{Error, Result};
use crate::feynman_kac::{markov_solve, LatticeFunction, LatticeKey};
use crate::lattice::Basis;
use crate::portfolio::{optimal_invest, InvestOptions, InvestmentResult};
use crate::scenario::{Measure, PredictableField, ScenarioTree};

/// Default tolerance on the market-clearing residual.
pub const CLEARING_TOL: f64 = 1e-8;

/// A utility-maximizing market participant: a concave balanced driver
/// plus a terminal endowment.
#[derive(Clone)]
pub struct Agent {
    pub driver: Arc<dyn Driver>,
    pub endowment: Vec<f64>,
}

impl Agent {
    pub fn new(tree: &ScenarioTree, driver: Arc<dyn Driver>, endowment: Vec<f64>) -> Result<Self> {
        if !driver.is_concave() {
            return Err(Error::NotConcave);
        }
        if !driver.is_balanced() {
            return Err(Error::NotBalanced);
        }
        if endowment.len() != tree.num_leaves() {
            return Err(Error::DepthMismatch {
                depth: tree.horizon(),
                expected: tree.num_leaves(),
                got: endowment.len(),
            });
        }
        Ok(Agent { driver, endowment })
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub clearing_tol: f64,
    pub invest: InvestOptions,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            clearing_tol: CLEARING_TOL,
            // Clearing is the question here; certificates are opt-in.
            invest: InvestOptions {
                certificate_samples: 0,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub per_agent: Vec<InvestmentResult>,
    /// Σᵢ π⁽ⁱ⁾ₙ − Hₙ per (time, node).
    pub net_demand: PredictableField<Vec<f64>>,
    pub max_clearing_residual: f64,
    pub is_equilibrium: bool,
    pub tolerance: f64,
}

/// Runs each agent's optimal investment and reports the clearing
/// residual against the supplied (or zero) total supply.
pub fn check_equilibrium(
    tree: &ScenarioTree,
    agents: &[Agent],
    supply: Option<&PredictableField<Vec<f64>>>,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumReport> {
    if agents.is_empty() {
        return Err(Error::InvalidInput("no agents".into()));
    }
    let d = tree.dim();
    let per_agent: Vec<InvestmentResult> = agents
        .iter()
        .map(|a| optimal_invest(tree, a.driver.as_ref(), &a.endowment, &opts.invest))
        .collect::<Result<_>>()?;
    let mut worst = 0.0_f64;
    let net_slices: Vec<Vec<Vec<f64>>> = (1..=tree.horizon())
        .map(|n| {
            (0..tree.num_nodes(n - 1))
                .map(|node| {
                    let mut net = vec![0.0; d];
                    for r in &per_agent {
                        for (i, x) in r.pi_star.get(n, node).iter().enumerate() {
                            net[i] += x;
                        }
                    }
                    if let Some(h) = supply {
                        for (i, x) in h.get(n, node).iter().enumerate() {
                            net[i] -= x;
                        }
                    }
                    for x in &net {
                        worst = worst.max(x.abs());
                    }
                    net
                })
                .collect()
        })
        .collect();
    Ok(EquilibriumReport {
        per_agent,
        net_demand: PredictableField::from_slices(tree, net_slices)?,
        max_clearing_residual: worst,
        is_equilibrium: worst < opts.clearing_tol,
        tolerance: opts.clearing_tol,
    })
}

/// The supply leg Σₙ Hₙᵀ ΔXₙ as a terminal payoff.
pub fn supply_terminal(tree: &ScenarioTree, supply: &PredictableField<Vec<f64>>) -> Vec<f64> {
    crate::portfolio::wealth_terminal(tree, supply)
}

/// Rewrites the market with all endowments and the supply leg assigned
/// to the first agent and zero supply; equilibrium status is invariant
/// because clearing depends on the data only through the aggregate.
pub fn normalize_supply(
    tree: &ScenarioTree,
    agents: &[Agent],
    supply: &PredictableField<Vec<f64>>,
) -> Result<(Vec<Agent>, PredictableField<Vec<f64>>)> {
    if agents.is_empty() {
        return Err(Error::InvalidInput("no agents".into()));
    }
    let leg = supply_terminal(tree, supply);
    let mut aggregate = leg;
    for a in agents {
        for (acc, h) in aggregate.iter_mut().zip(&a.endowment) {
            *acc += h;
        }
    }
    let mut normalized = Vec::with_capacity(agents.len());
    for (i, a) in agents.iter().enumerate() {
        let endowment = if i == 0 {
            aggregate.clone()
        } else {
            vec![0.0; tree.num_leaves()]
        };
        normalized.push(Agent {
            driver: a.driver.clone(),
            endowment,
        });
    }
    let zero = PredictableField::constant(tree, vec![0.0; tree.dim()]);
    Ok((normalized, zero))
}

/// Single-agent equilibrium belief for a locally entropic utility with
/// given risk aversion G and shift B: one backward sweep that fixes the
/// time-n kernel from the already-determined later value slices,
/// P̂ₙⱼ ∝ exp(Gₙ Ȳₙⱼ). The recursion is exact and finite; no fixed-point
/// iteration is involved.
pub fn single_agent_equilibrium_belief(
    tree: &ScenarioTree,
    risk_aversion: &PredictableField<f64>,
    shift: &PredictableField<f64>,
    endowment: &[f64],
) -> Result<EntropicSpec> {
    if endowment.len() != tree.num_leaves() {
        return Err(Error::DepthMismatch {
            depth: tree.horizon(),
            expected: tree.num_leaves(),
            got: endowment.len(),
        });
    }
    let arity = tree.arity();
    let mut values = endowment.to_vec();
    let mut kernel_slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); tree.horizon()];
    for n in (1..=tree.horizon()).rev() {
        let nodes = tree.num_nodes(n - 1);
        let mut prev = vec![0.0; nodes];
        let mut kernels = Vec::with_capacity(nodes);
        for node in 0..nodes {
            let g = *risk_aversion.get(n, node);
            let b = *shift.get(n, node);
            if !(g > 0.0) || !(b > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "risk aversion and shift must be positive at time {n}, node {node}"
                )));
            }
            let children: Vec<f64> = (0..arity).map(|j| values[tree.child(node, j)]).collect();
            let m = children
                .iter()
                .map(|y| g * y)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = children.iter().map(|y| (g * y - m).exp()).collect();
            let total: f64 = weights.iter().sum();
            kernels.push(weights.iter().map(|w| w / total).collect());
            // Yₙ₋₁ = (1/G)(log Σ e^{G Ȳⱼ} − log(d+1) − log B).
            prev[node] = (m + total.ln() - (arity as f64).ln() - b.ln()) / g;
        }
        values = prev;
        kernel_slices[n - 1] = kernels;
    }
    let belief =
        Measure::from_kernel_field(tree, PredictableField::from_slices(tree, kernel_slices)?)?;
    Ok(EntropicSpec {
        belief,
        risk_aversion: risk_aversion.clone(),
        shift: shift.clone(),
    })
}

/// A time-indexed utility family fₙ(ω, z, p) whose gradient in z can be
/// driven to zero by a simplex point, the hypothesis of the general
/// single-agent construction.
pub trait UtilityFamily: Send + Sync {
    fn evaluate(&self, n: usize, node: usize, z: &[f64], p: &[f64]) -> f64;
    fn gradient_z(&self, n: usize, node: usize, z: &[f64], p: &[f64]) -> Vec<f64>;
    /// A simplex point p with ∇f(z, p) = 0, if the caller's solver
    /// finds one.
    fn solve_root(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>>;
}

#[derive(Debug, Clone)]
pub struct GeneralEquilibrium {
    pub belief: PredictableField<Vec<f64>>,
    /// The maximizer slopes fixed by the recursion.
    pub z_dagger: PredictableField<Vec<f64>>,
    /// Largest gradient norm at the solved roots.
    pub worst_root_residual: f64,
}

/// Backward construction of equilibrium beliefs for a general utility
/// family: at each node the slope is forced by the later values, and
/// the caller's solver supplies a kernel nulling the gradient there.
/// Roots need not be unique; the one found is reported.
pub fn general_single_agent_equilibrium(
    tree: &ScenarioTree,
    family: &dyn UtilityFamily,
    endowment: &[f64],
) -> Result<GeneralEquilibrium> {
    let arity = tree.arity();
    let basis = tree.basis();
    let mut values = endowment.to_vec();
    let mut kernel_slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); tree.horizon()];
    let mut dagger_slices: Vec<Vec<Vec<f64>>> = vec![Vec::new(); tree.horizon()];
    let mut worst_residual = 0.0_f64;
    for n in (1..=tree.horizon()).rev() {
        let nodes = tree.num_nodes(n - 1);
        let mut prev = vec![0.0; nodes];
        let mut kernels = Vec::with_capacity(nodes);
        let mut daggers = Vec::with_capacity(nodes);
        for node in 0..nodes {
            let children: Vec<f64> = (0..arity).map(|j| values[tree.child(node, j)]).collect();
            let (mean, z) = basis.affine_decompose(&children);
            let p = family
                .solve_root(n, node, &z)
                .ok_or(Error::NoRoot { time: n, node })?;
            let grad = family.gradient_z(n, node, &z, &p);
            let gnorm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gnorm > 1e-8 {
                return Err(Error::NoRoot { time: n, node });
            }
            worst_residual = worst_residual.max(gnorm);
            prev[node] = mean + family.evaluate(n, node, &z, &p);
            kernels.push(p);
            daggers.push(z);
        }
        values = prev;
        kernel_slices[n - 1] = kernels;
        dagger_slices[n - 1] = daggers;
    }
    Ok(GeneralEquilibrium {
        belief: PredictableField::from_slices(tree, kernel_slices)?,
        z_dagger: PredictableField::from_slices(tree, dagger_slices)?,
        worst_root_residual: worst_residual,
    })
}

#[derive(Debug, Clone)]
pub struct RepresentativeReport {
    /// max |Z†(rep) − Σᵢ Z†⁽ⁱ⁾| over (time, node, coordinate).
    pub z_dagger_gap: f64,
    /// max |π*(rep) − Σᵢ π⁽ⁱ⁾| over (time, node, coordinate).
    pub strategy_gap: f64,
    pub representative: InvestmentResult,
    pub per_agent: Vec<InvestmentResult>,
}

/// Builds the representative agent (sup-convolution driver, aggregate
/// endowment) and verifies the aggregation identities Z† = ΣᵢZ†⁽ⁱ⁾ and
/// π* = Σᵢπ⁽ⁱ⁾. Entropic agents aggregate in closed form; anything else
/// falls back to the numeric convolution.
pub fn representative_agent(
    tree: &ScenarioTree,
    agents: &[Agent],
    opts: &InvestOptions,
) -> Result<(Agent, RepresentativeReport)> {
    if agents.is_empty() {
        return Err(Error::InvalidInput("no agents".into()));
    }
    let mut aggregate = vec![0.0; tree.num_leaves()];
    for a in agents {
        for (acc, h) in aggregate.iter_mut().zip(&a.endowment) {
            *acc += h;
        }
    }
    let entropic_specs: Option<Vec<EntropicSpec>> = agents
        .iter()
        .map(|a| a.driver.as_entropic().map(|e| e.spec().clone()))
        .collect();
    let rep_driver: Arc<dyn Driver> = match entropic_specs {
        Some(specs) => {
            let agg = entropic_sup_convolution(tree, &specs)?;
            Arc::new(entropic_driver(tree, agg.spec)?)
        }
        None => Arc::new(sup_convolution(
            agents.iter().map(|a| a.driver.clone()).collect(),
        )?),
    };
    let representative = Agent::new(tree, rep_driver, aggregate)?;

    let rep_result = optimal_invest(
        tree,
        representative.driver.as_ref(),
        &representative.endowment,
        opts,
    )?;
    let per_agent: Vec<InvestmentResult> = agents
        .iter()
        .map(|a| optimal_invest(tree, a.driver.as_ref(), &a.endowment, opts))
        .collect::<Result<_>>()?;

    let mut z_gap = 0.0_f64;
    let mut pi_gap = 0.0_f64;
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            for i in 0..tree.dim() {
                let z_sum: f64 = per_agent.iter().map(|r| r.z_dagger.get(n, node)[i]).sum();
                let pi_sum: f64 = per_agent.iter().map(|r| r.pi_star.get(n, node)[i]).sum();
                z_gap = z_gap.max((rep_result.z_dagger.get(n, node)[i] - z_sum).abs());
                pi_gap = pi_gap.max((rep_result.pi_star.get(n, node)[i] - pi_sum).abs());
            }
        }
    }
    Ok((
        representative,
        RepresentativeReport {
            z_dagger_gap: z_gap,
            strategy_gap: pi_gap,
            representative: rep_result,
            per_agent,
        },
    ))
}

/// The belief that makes a second entropic agent bet against the first:
/// P̂⁽²⁾ₙⱼ ∝ (P̂⁽¹⁾ₙⱼ)^{−γ₂/γ₁}, so the geometric aggregate is the
/// uniform martingale kernel and the zero-endowment market clears.
pub fn betting_counterparty(
    kernels_per_time: &[Vec<f64>],
    gamma1: f64,
    gamma2: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(gamma1 > 0.0) || !(gamma2 > 0.0) {
        return Err(Error::InvalidInput(
            "risk aversions must be positive".into(),
        ));
    }
    let mut out = Vec::with_capacity(kernels_per_time.len());
    for kernel in kernels_per_time {
        if kernel.iter().any(|p| *p <= 0.0) {
            return Err(Error::InvalidInput(
                "betting belief must be interior".into(),
            ));
        }
        let raw: Vec<f64> = kernel
            .iter()
            .map(|p| ((-gamma2 / gamma1) * p.ln()).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        out.push(raw.iter().map(|x| x / total).collect());
    }
    Ok(out)
}

/// Pathwise check of the equilibrium density identity
/// dQ/dP̂ = exp{Σₙ −Gₙ ΔℰᵍₙH} Πₙ Bₙ; returns the largest violation.
/// Meaningful only for beliefs produced by the equilibrium recursion.
pub fn equilibrium_density_identity(
    tree: &ScenarioTree,
    spec: &EntropicSpec,
    endowment: &[f64],
) -> Result<f64> {
    let driver = entropic_driver(tree, spec.clone())?;
    let sol = solve(tree, &driver, endowment)?;
    let q = Measure::martingale(tree);
    let density = q.density(tree, &spec.belief)?;
    let horizon = tree.horizon();
    let mut worst = 0.0_f64;
    for leaf in 0..tree.num_leaves() {
        let mut exponent = 0.0;
        let mut b_product = 1.0;
        for n in 1..=horizon {
            let here = tree.ancestor(leaf, horizon, n);
            let parent = tree.ancestor(leaf, horizon, n - 1);
            let g = *spec.risk_aversion.get(n, parent);
            exponent += -g * (sol.y.at(n, here) - sol.y.at(n - 1, parent));
            b_product *= *spec.shift.get(n, parent);
        }
        let rhs = exponent.exp() * b_product;
        worst = worst.max((density.at(horizon, leaf) - rhs).abs());
    }
    Ok(worst)
}

/// Equilibrium beliefs and values on the recombining lattice for Markov
/// data H = h(X_N), G = γₙ(Xₙ₋₁) with unit shift. The value recursion
/// is the Markov solve with the equilibrium generator
/// f(x, z) = (1/γ) log((1/(d+1)) Σⱼ e^{γ vⱼᵀ z}); kernels follow as
/// softmax of the child values.
pub struct MarkovEquilibrium {
    pub values: LatticeFunction,
    /// kernels[n−1]: time-n kernels on time-(n−1) lattice points.
    pub kernels: Vec<BTreeMap<LatticeKey, Vec<f64>>>,
}

pub fn markov_single_agent_equilibrium(
    basis: &Basis,
    horizon: usize,
    terminal: &dyn Fn(&[f64]) -> f64,
    gamma: &dyn Fn(usize, &[f64]) -> f64,
) -> Result<MarkovEquilibrium> {
    let arity = basis.num_vertices();
    let b2 = basis.clone();
    let generator = move |n: usize, x: &[f64], z: &[f64]| {
        let g = gamma(n, x);
        let m = (0..arity)
            .map(|j| g * b2.vertex_dot(j, z))
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..arity)
            .map(|j| (g * b2.vertex_dot(j, z) - m).exp())
            .sum();
        (m + s.ln() - (arity as f64).ln()) / g
    };
    let values = markov_solve(basis, horizon, terminal, &generator)?;
    let mut kernels = Vec::with_capacity(horizon);
    for n in 1..=horizon {
        let mut level = BTreeMap::new();
        for key in values.level(n - 1).keys() {
            let x = values.coordinates(key);
            let g = gamma(n, &x);
            let children = values.child_values(n, key)?;
            let m = children
                .iter()
                .map(|y| g * y)
                .fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = children.iter().map(|y| (g * y - m).exp()).collect();
            let total: f64 = weights.iter().sum();
            level.insert(
                key.clone(),
                weights.iter().map(|w| w / total).collect::<Vec<f64>>(),
            );
        }
        kernels.push(level);
    }
    Ok(MarkovEquilibrium { values, kernels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Basis;
    use crate::scenario::build_tree;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn binomial_tree(n: usize) -> ScenarioTree {
        build_tree(Basis::from_vectors(&[vec![1.0]]).unwrap(), n).unwrap()
    }

    fn entropic_agent(tree: &ScenarioTree, kernel: &[f64], gamma: f64, h: Vec<f64>) -> Agent {
        let spec = EntropicSpec::constant(tree, kernel, gamma).unwrap();
        Agent::new(tree, Arc::new(entropic_driver(tree, spec).unwrap()), h).unwrap()
    }

    fn random_endowment(tree: &ScenarioTree, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..tree.num_leaves())
            .map(|_| rng.random_range(-1.5..1.5))
            .collect()
    }

    #[test]
    fn uniform_belief_zero_endowment_clears() {
        let tree = binomial_tree(3);
        let agent = entropic_agent(&tree, &[0.5, 0.5], 1.0, vec![0.0; tree.num_leaves()]);
        let report = check_equilibrium(&tree, &[agent], None, &Default::default()).unwrap();
        assert!(report.is_equilibrium);
        assert!(report.max_clearing_residual < 1e-12);
    }

    #[test]
    fn tilted_belief_zero_endowment_does_not_clear() {
        let tree = binomial_tree(3);
        let agent = entropic_agent(&tree, &[0.25, 0.75], 1.0, vec![0.0; tree.num_leaves()]);
        let report = check_equilibrium(&tree, &[agent], None, &Default::default()).unwrap();
        assert!(!report.is_equilibrium);
        // π* = Z† = log(3)/(2γ) per step.
        assert_abs_diff_eq!(
            report.max_clearing_residual,
            3.0_f64.ln() / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn equilibrium_belief_recursion_sufficiency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let tree = binomial_tree(3);
            let g_field = PredictableField::from_fn(&tree, |_, _| rng.random_range(0.4..2.5));
            let b_field = PredictableField::constant(&tree, 1.0);
            let endowment = random_endowment(&tree, &mut rng);
            let spec =
                single_agent_equilibrium_belief(&tree, &g_field, &b_field, &endowment).unwrap();
            let driver = entropic_driver(&tree, spec).unwrap();
            let agent = Agent::new(&tree, Arc::new(driver), endowment).unwrap();
            let report = check_equilibrium(&tree, &[agent], None, &Default::default()).unwrap();
            assert!(
                report.is_equilibrium,
                "residual {}",
                report.max_clearing_residual
            );
        }
    }

    #[test]
    fn zero_endowment_belief_is_uniform() {
        let tree = binomial_tree(3);
        let g_field = PredictableField::constant(&tree, 1.7);
        let b_field = PredictableField::constant(&tree, 1.0);
        let spec = single_agent_equilibrium_belief(
            &tree,
            &g_field,
            &b_field,
            &vec![0.0; tree.num_leaves()],
        )
        .unwrap();
        for n in 1..=3 {
            for node in 0..tree.num_nodes(n - 1) {
                for p in spec.belief.kernel(n, node) {
                    assert_abs_diff_eq!(*p, 0.5, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn perturbed_belief_breaks_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = binomial_tree(3);
        let g_field = PredictableField::constant(&tree, 1.2);
        let b_field = PredictableField::constant(&tree, 1.0);
        let endowment = random_endowment(&tree, &mut rng);
        let spec = single_agent_equilibrium_belief(&tree, &g_field, &b_field, &endowment).unwrap();
        // Shift one kernel entry by 0.05 and renormalize.
        let kernels = PredictableField::from_fn(&tree, |n, node| {
            let mut k = spec.belief.kernel(n, node).to_vec();
            if n == 2 && node == 1 {
                k[0] += 0.05;
                let total: f64 = k.iter().sum();
                for x in &mut k {
                    *x /= total;
                }
            }
            k
        });
        let perturbed = EntropicSpec {
            belief: Measure::from_kernel_field(&tree, kernels).unwrap(),
            risk_aversion: g_field,
            shift: b_field,
        };
        let agent = Agent::new(
            &tree,
            Arc::new(entropic_driver(&tree, perturbed).unwrap()),
            endowment,
        )
        .unwrap();
        let report = check_equilibrium(&tree, &[agent], None, &Default::default()).unwrap();
        assert!(report.max_clearing_residual > 1e-4);
        assert!(!report.is_equilibrium);
    }

    #[test]
    fn density_identity_at_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = binomial_tree(4);
        let g_field = PredictableField::from_fn(&tree, |_, _| rng.random_range(0.5..2.0));
        let b_field = PredictableField::from_fn(&tree, |_, _| rng.random_range(0.8..1.2));
        let endowment = random_endowment(&tree, &mut rng);
        let spec = single_agent_equilibrium_belief(&tree, &g_field, &b_field, &endowment).unwrap();
        let gap = equilibrium_density_identity(&tree, &spec, &endowment).unwrap();
        assert!(gap < 1e-9, "pathwise gap {gap}");
    }

    #[test]
    fn constant_gamma_measure_characterization() {
        // dQ/dP̂ = e^{−γH} / Ê[e^{−γH}] for constant γ and unit shift.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = binomial_tree(4);
        let gamma = 1.4;
        let g_field = PredictableField::constant(&tree, gamma);
        let b_field = PredictableField::constant(&tree, 1.0);
        let endowment = random_endowment(&tree, &mut rng);
        let spec = single_agent_equilibrium_belief(&tree, &g_field, &b_field, &endowment).unwrap();
        let q = Measure::martingale(&tree);
        let density = q.density(&tree, &spec.belief).unwrap();
        let exp_h: Vec<f64> = endowment.iter().map(|h| (-gamma * h).exp()).collect();
        let normalizer = spec.belief.expect_terminal(&tree, &exp_h);
        for leaf in 0..tree.num_leaves() {
            assert_abs_diff_eq!(
                density.at(4, leaf),
                exp_h[leaf] / normalizer,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn general_family_reduces_to_entropic() {
        struct EntropicFamily {
            basis: Basis,
            gamma: f64,
        }
        impl UtilityFamily for EntropicFamily {
            fn evaluate(&self, _n: usize, _node: usize, z: &[f64], p: &[f64]) -> f64 {
                let exps: Vec<f64> = (0..self.basis.num_vertices())
                    .map(|j| (-self.gamma * self.basis.vertex_dot(j, z)).exp() * p[j])
                    .collect();
                -(exps.iter().sum::<f64>()).ln() / self.gamma
            }
            fn gradient_z(&self, _n: usize, _node: usize, z: &[f64], p: &[f64]) -> Vec<f64> {
                let weights: Vec<f64> = (0..self.basis.num_vertices())
                    .map(|j| (-self.gamma * self.basis.vertex_dot(j, z)).exp() * p[j])
                    .collect();
                let total: f64 = weights.iter().sum();
                let tilted: Vec<f64> = weights.iter().map(|w| w / total).collect();
                self.basis.hull_point(&tilted)
            }
            fn solve_root(&self, _n: usize, _node: usize, z: &[f64]) -> Option<Vec<f64>> {
                // p ∝ e^{γ zᵀvⱼ} nulls the tilted mean.
                let raw: Vec<f64> = (0..self.basis.num_vertices())
                    .map(|j| (self.gamma * self.basis.vertex_dot(j, z)).exp())
                    .collect();
                let total: f64 = raw.iter().sum();
                Some(raw.iter().map(|x| x / total).collect())
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = binomial_tree(3);
        let gamma = 1.1;
        let endowment = random_endowment(&tree, &mut rng);
        let family = EntropicFamily {
            basis: tree.basis().clone(),
            gamma,
        };
        let general = general_single_agent_equilibrium(&tree, &family, &endowment).unwrap();
        let g_field = PredictableField::constant(&tree, gamma);
        let b_field = PredictableField::constant(&tree, 1.0);
        let entropic =
            single_agent_equilibrium_belief(&tree, &g_field, &b_field, &endowment).unwrap();
        for n in 1..=3 {
            for node in 0..tree.num_nodes(n - 1) {
                let p1 = general.belief.get(n, node);
                let p2 = entropic.belief.kernel(n, node);
                for (a, b) in p1.iter().zip(p2) {
                    assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
                }
            }
        }
        assert!(general.worst_root_residual < 1e-10);
    }

    #[test]
    fn supply_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tree = binomial_tree(3);
        let agents = vec![
            entropic_agent(&tree, &[0.3, 0.7], 1.0, random_endowment(&tree, &mut rng)),
            entropic_agent(&tree, &[0.6, 0.4], 2.0, random_endowment(&tree, &mut rng)),
        ];
        let supply = PredictableField::from_fn(&tree, |_, _| vec![rng.random_range(-1.0..1.0)]);
        let before = check_equilibrium(&tree, &agents, Some(&supply), &Default::default()).unwrap();
        let (normalized, zero_supply) = normalize_supply(&tree, &agents, &supply).unwrap();
        let after =
            check_equilibrium(&tree, &normalized, Some(&zero_supply), &Default::default()).unwrap();
        assert_eq!(before.is_equilibrium, after.is_equilibrium);
        // The net-demand field itself is invariant, not just the flag.
        for n in 1..=3 {
            for node in 0..tree.num_nodes(n - 1) {
                assert_abs_diff_eq!(
                    before.net_demand.get(n, node)[0],
                    after.net_demand.get(n, node)[0],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn normalize_already_normalized_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let tree = binomial_tree(2);
        let endowment = random_endowment(&tree, &mut rng);
        let agents = vec![
            entropic_agent(&tree, &[0.4, 0.6], 1.0, endowment.clone()),
            entropic_agent(&tree, &[0.5, 0.5], 2.0, vec![0.0; tree.num_leaves()]),
        ];
        let zero_supply = PredictableField::constant(&tree, vec![0.0]);
        let (normalized, _) = normalize_supply(&tree, &agents, &zero_supply).unwrap();
        for (a, b) in normalized[0].endowment.iter().zip(&endowment) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
        assert!(normalized[1].endowment.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn general_family_zero_endowment_uses_root_at_zero() {
        // With H = 0 every forced slope vanishes, so the constructed
        // kernel is the solver's root at z = 0 at every node.
        struct Family {
            basis: Basis,
        }
        impl UtilityFamily for Family {
            fn evaluate(&self, _n: usize, _node: usize, z: &[f64], p: &[f64]) -> f64 {
                let exps: Vec<f64> = (0..self.basis.num_vertices())
                    .map(|j| (-self.basis.vertex_dot(j, z)).exp() * p[j])
                    .collect();
                -(exps.iter().sum::<f64>()).ln()
            }
            fn gradient_z(&self, _n: usize, _node: usize, z: &[f64], p: &[f64]) -> Vec<f64> {
                let weights: Vec<f64> = (0..self.basis.num_vertices())
                    .map(|j| (-self.basis.vertex_dot(j, z)).exp() * p[j])
                    .collect();
                let total: f64 = weights.iter().sum();
                let tilted: Vec<f64> = weights.iter().map(|w| w / total).collect();
                self.basis.hull_point(&tilted)
            }
            fn solve_root(&self, _n: usize, _node: usize, z: &[f64]) -> Option<Vec<f64>> {
                let raw: Vec<f64> = (0..self.basis.num_vertices())
                    .map(|j| (self.basis.vertex_dot(j, z)).exp())
                    .collect();
                let total: f64 = raw.iter().sum();
                Some(raw.iter().map(|x| x / total).collect())
            }
        }
        let tree = binomial_tree(3);
        let family = Family {
            basis: tree.basis().clone(),
        };
        let root_at_zero = family.solve_root(1, 0, &[0.0]).unwrap();
        let result =
            general_single_agent_equilibrium(&tree, &family, &vec![0.0; tree.num_leaves()])
                .unwrap();
        for n in 1..=3 {
            for node in 0..tree.num_nodes(n - 1) {
                assert_abs_diff_eq!(result.z_dagger.get(n, node)[0], 0.0, epsilon = 1e-12);
                for (a, b) in result.belief.get(n, node).iter().zip(&root_at_zero) {
                    assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn representative_of_single_agent_is_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tree = binomial_tree(2);
        let endowment = random_endowment(&tree, &mut rng);
        let agent = entropic_agent(&tree, &[0.3, 0.7], 1.4, endowment.clone());
        let (rep, report) =
            representative_agent(&tree, std::slice::from_ref(&agent), &Default::default()).unwrap();
        assert!(report.z_dagger_gap < 1e-12);
        assert!(report.strategy_gap < 1e-12);
        let e = rep.driver.as_entropic().unwrap();
        assert_abs_diff_eq!(*e.spec().risk_aversion.get(1, 0), 1.4, epsilon = 1e-12);
        assert_abs_diff_eq!(e.spec().belief.kernel(1, 0)[0], 0.3, epsilon = 1e-12);
        for (a, b) in rep.endowment.iter().zip(&endowment) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn unit_supply_aggregates_to_linear_endowment() {
        let tree = binomial_tree(3);
        let agents = vec![entropic_agent(
            &tree,
            &[0.5, 0.5],
            1.0,
            vec![0.0; tree.num_leaves()],
        )];
        let supply = PredictableField::constant(&tree, vec![1.0]);
        let (normalized, _) = normalize_supply(&tree, &agents, &supply).unwrap();
        for leaf in 0..tree.num_leaves() {
            let x = tree.position(3, leaf);
            assert_abs_diff_eq!(normalized[0].endowment[leaf], x[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn supplied_market_clears_with_recursion_belief() {
        // Build the belief for the aggregate payoff, then check the
        // original market with nonzero supply clears.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tree = binomial_tree(3);
        let supply = PredictableField::from_fn(&tree, |_, _| vec![rng.random_range(0.2..1.0)]);
        let own_endowment = random_endowment(&tree, &mut rng);
        let leg = supply_terminal(&tree, &supply);
        let aggregate: Vec<f64> = own_endowment.iter().zip(&leg).map(|(a, b)| a + b).collect();
        let g_field = PredictableField::constant(&tree, 1.3);
        let b_field = PredictableField::constant(&tree, 1.0);
        let spec = single_agent_equilibrium_belief(&tree, &g_field, &b_field, &aggregate).unwrap();
        let agent = Agent::new(
            &tree,
            Arc::new(entropic_driver(&tree, spec).unwrap()),
            own_endowment,
        )
        .unwrap();
        let report =
            check_equilibrium(&tree, &[agent], Some(&supply), &Default::default()).unwrap();
        assert!(
            report.is_equilibrium,
            "residual {}",
            report.max_clearing_residual
        );
    }

    #[test]
    fn representative_agent_common_belief() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tree = binomial_tree(3);
        let kernel = [0.35, 0.65];
        let agents = vec![
            entropic_agent(&tree, &kernel, 1.0, random_endowment(&tree, &mut rng)),
            entropic_agent(&tree, &kernel, 3.0, random_endowment(&tree, &mut rng)),
        ];
        let (rep, report) =
            representative_agent(&tree, &agents, &EquilibriumOptions::default().invest).unwrap();
        assert!(report.z_dagger_gap < 1e-8, "gap {}", report.z_dagger_gap);
        assert!(report.strategy_gap < 1e-8, "gap {}", report.strategy_gap);
        let e = rep.driver.as_entropic().unwrap();
        assert_abs_diff_eq!(*e.spec().risk_aversion.get(1, 0), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn betting_market_clears_with_opposite_positions() {
        let tree = binomial_tree(3);
        let gamma1 = 1.0;
        let gamma2 = 2.0;
        let p1 = vec![vec![0.25, 0.75]; 3];
        let p2 = betting_counterparty(&p1, gamma1, gamma2).unwrap();
        // γ₂/γ₁ = 2: p2 ∝ (16, 16/9) = (9/10, 1/10).
        assert_abs_diff_eq!(p2[0][0], 0.9, epsilon = 1e-12);
        let spec1 = EntropicSpec::new(
            Measure::from_time_kernels(&tree, &p1).unwrap(),
            PredictableField::constant(&tree, gamma1),
            PredictableField::constant(&tree, 1.0),
        );
        let spec2 = EntropicSpec::new(
            Measure::from_time_kernels(&tree, &p2).unwrap(),
            PredictableField::constant(&tree, gamma2),
            PredictableField::constant(&tree, 1.0),
        );
        // The geometric aggregate collapses to the uniform kernel.
        let agg = entropic_sup_convolution(&tree, &[spec1.clone(), spec2.clone()]).unwrap();
        for n in 1..=3 {
            for p in agg.spec.belief.kernel(n, 0) {
                assert_abs_diff_eq!(*p, 0.5, epsilon = 1e-12);
            }
        }
        let zero = vec![0.0; tree.num_leaves()];
        let agents = vec![
            Agent::new(
                &tree,
                Arc::new(entropic_driver(&tree, spec1).unwrap()),
                zero.clone(),
            )
            .unwrap(),
            Agent::new(
                &tree,
                Arc::new(entropic_driver(&tree, spec2).unwrap()),
                zero,
            )
            .unwrap(),
        ];
        let report = check_equilibrium(&tree, &agents, None, &Default::default()).unwrap();
        assert!(
            report.is_equilibrium,
            "residual {}",
            report.max_clearing_residual
        );
        // Positions are opposite and nonzero: the agents bet.
        for n in 1..=3 {
            for node in 0..tree.num_nodes(n - 1) {
                let pi1 = report.per_agent[0].pi_star.get(n, node)[0];
                let pi2 = report.per_agent[1].pi_star.get(n, node)[0];
                assert_abs_diff_eq!(pi1, -pi2, epsilon = 1e-10);
                assert!(pi1.abs() > 1e-3);
            }
        }
    }

    #[test]
    fn betting_uniform_belief_stays_uniform() {
        let p1 = vec![vec![0.5, 0.5]; 2];
        let p2 = betting_counterparty(&p1, 1.0, 3.0).unwrap();
        for k in &p2 {
            assert_abs_diff_eq!(k[0], 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn least_risk_averse_dominates_aggregate() {
        // As γ₂/γ₁ grows the aggregate belief approaches agent 1's.
        let tree = binomial_tree(1);
        let p1 = [0.3, 0.7];
        let mut last_gap = f64::INFINITY;
        for gamma2 in [2.0, 8.0, 32.0, 128.0] {
            let s1 = EntropicSpec::constant(&tree, &p1, 1.0).unwrap();
            let s2 = EntropicSpec::constant(&tree, &[0.8, 0.2], gamma2).unwrap();
            let agg = entropic_sup_convolution(&tree, &[s1, s2]).unwrap();
            let k = agg.spec.belief.kernel(1, 0);
            let gap = (k[0] - p1[0]).abs().max((k[1] - p1[1]).abs());
            assert!(gap < last_gap, "gap should shrink: {gap} vs {last_gap}");
            last_gap = gap;
        }
        assert!(last_gap < 5e-3);
    }

    #[test]
    fn markov_equilibrium_matches_tree_recursion() {
        let basis = Basis::from_vectors(&[vec![1.0]]).unwrap();
        let horizon = 4;
        let tree = build_tree(basis.clone(), horizon).unwrap();
        let h = |x: &[f64]| x[0].max(-1.0).min(2.0) + 0.1 * x[0] * x[0];
        let gamma = |_n: usize, x: &[f64]| 1.0 + 0.5 / (1.0 + x[0] * x[0]);
        let markov = markov_single_agent_equilibrium(&basis, horizon, &h, &gamma).unwrap();

        let endowment: Vec<f64> = (0..tree.num_leaves())
            .map(|leaf| h(&tree.position(horizon, leaf)))
            .collect();
        let g_field =
            PredictableField::from_fn(&tree, |n, node| gamma(n, &tree.position(n - 1, node)));
        let b_field = PredictableField::constant(&tree, 1.0);
        let spec = single_agent_equilibrium_belief(&tree, &g_field, &b_field, &endowment).unwrap();

        // Kernels agree on every reachable (time, point) pair, and the
        // lattice equation v log p = γ v𝓝u holds.
        for n in 1..=horizon {
            for node in 0..tree.num_nodes(n - 1) {
                let key = tree.letter_counts(n - 1, node);
                let lattice_kernel = &markov.kernels[n - 1][&key];
                let tree_kernel = spec.belief.kernel(n, node);
                for (a, b) in lattice_kernel.iter().zip(tree_kernel) {
                    assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
                }
                let x = tree.position(n - 1, node);
                let children = markov.values.child_values(n, &key).unwrap();
                let g = gamma(n, &x);
                // v log p − γ v𝓝u = 0 (log-kernel differences match value
                // differences scaled by γ).
                let log_p: Vec<f64> = lattice_kernel.iter().map(|p| p.ln()).collect();
                let z_from_p = basis.z_of(&log_p);
                let z_from_u = basis.z_of(&children);
                assert_abs_diff_eq!(z_from_p[0], g * z_from_u[0], epsilon = 1e-10);
            }
        }
    }
}
