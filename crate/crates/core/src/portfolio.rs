//! Monetary utility maximization: replication hedging in the complete
//! market, the optimal strategy π* = Z† − Z*, entropic closed forms,
//! and the variance-swap market instance.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bsde::{solve, Solution};
use crate::drivers::{Driver, EntropicSpec, LinearDriver};
use crate::error::{Error, Result};
use crate::lattice::Basis;
use crate::scenario::{build_tree_with_cap, AdaptedField, PredictableField, ScenarioTree};

/// Freezes the slope argument of a driver at a given predictable field,
/// turning it into a constant-in-z (hence concave, balanced) driver.
struct FrozenDriver<'a> {
    inner: &'a dyn Driver,
    at: &'a PredictableField<Vec<f64>>,
}

impl Driver for FrozenDriver<'_> {
    fn basis(&self) -> &Basis {
        self.inner.basis()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn evaluate(&self, n: usize, node: usize, _z: &[f64]) -> f64 {
        self.inner.evaluate(n, node, self.at.get(n, node))
    }
    fn is_concave(&self) -> bool {
        true
    }
    fn is_balanced(&self) -> bool {
        true
    }
}

/// Replication of a terminal claim in the complete market: the claim
/// decomposes as H = E_Q[H] + Σ Zₙᵀ ΔXₙ pathwise.
pub fn hedge(tree: &ScenarioTree, claim: &[f64]) -> Result<(f64, PredictableField<Vec<f64>>)> {
    let sol = solve(tree, &LinearDriver::zero(tree), claim)?;
    Ok((sol.value(), sol.z))
}

/// Terminal wealth Σₙ πₙᵀ ΔXₙ of a self-financing strategy started at 0.
pub fn wealth_terminal(tree: &ScenarioTree, strategy: &PredictableField<Vec<f64>>) -> Vec<f64> {
    let mut wealth = vec![0.0];
    for n in 1..=tree.horizon() {
        let mut next = vec![0.0; tree.num_nodes(n)];
        for node in 0..tree.num_nodes(n - 1) {
            let pi = strategy.get(n, node);
            for j in 0..tree.arity() {
                next[tree.child(node, j)] = wealth[node] + tree.basis().vertex_dot(j, pi);
            }
        }
        wealth = next;
    }
    wealth
}

#[derive(Debug, Clone)]
pub struct InvestOptions {
    /// Random strategies sampled for the optimality certificate.
    pub certificate_samples: usize,
    pub seed: u64,
    /// Sampled strategies may beat the optimum by at most this much.
    pub certificate_tol: f64,
}

impl Default for InvestOptions {
    fn default() -> Self {
        InvestOptions {
            certificate_samples: 200,
            seed: 0,
            certificate_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimalityCertificate {
    pub samples: usize,
    /// max over sampled strategies of their value minus the optimum.
    pub max_excess: f64,
    /// |ℰᵍ₀(H + W(π*)) − value| recomputed through the generic solver.
    pub identity_gap: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct InvestmentResult {
    /// ℰᵍ₀(H + W_N(0, π*)).
    pub value: f64,
    pub pi_star: PredictableField<Vec<f64>>,
    pub z_dagger: PredictableField<Vec<f64>>,
    pub z_hedge: PredictableField<Vec<f64>>,
    pub z_g: PredictableField<Vec<f64>>,
    pub y_star: AdaptedField,
    pub certificate: OptimalityCertificate,
}

/// Optimal monetary-utility investment: π*ₙ = Z†ₙ − Z^Hₙ − Z^gₙ with Z†
/// the driver maximizer, Z^H the hedge of the endowment, and Z^g the
/// hedge of the accumulated maxima.
pub fn optimal_invest(
    tree: &ScenarioTree,
    driver: &dyn Driver,
    endowment: &[f64],
    opts: &InvestOptions,
) -> Result<InvestmentResult> {
    if !driver.has_argmax() {
        return Err(Error::NoArgmax);
    }
    let mut dagger_slices = Vec::with_capacity(tree.horizon());
    for n in 1..=tree.horizon() {
        let mut slice = Vec::with_capacity(tree.num_nodes(n - 1));
        for node in 0..tree.num_nodes(n - 1) {
            slice.push(driver.argmax(n, node).ok_or(Error::NoArgmax)?);
        }
        dagger_slices.push(slice);
    }
    let z_dagger = PredictableField::from_slices(tree, dagger_slices)?;

    let (_, z_hedge) = hedge(tree, endowment)?;
    let frozen = FrozenDriver {
        inner: driver,
        at: &z_dagger,
    };
    // Y* solves the frozen equation with terminal H; the zero-terminal
    // run isolates Z^g of the accumulated-maximum leg.
    let star: Solution = solve(tree, &frozen, endowment)?;
    let util: Solution = solve(tree, &frozen, &vec![0.0; tree.num_leaves()])?;
    let z_g = util.z.clone();

    let d = tree.dim();
    let pi_slices: Vec<Vec<Vec<f64>>> = (1..=tree.horizon())
        .map(|n| {
            (0..tree.num_nodes(n - 1))
                .map(|node| {
                    let zd = z_dagger.get(n, node);
                    let zs = star.z.get(n, node);
                    (0..d).map(|i| zd[i] - zs[i]).collect()
                })
                .collect()
        })
        .collect();
    let pi_star = PredictableField::from_slices(tree, pi_slices)?;
    let value = star.value();

    // Certificate: recompute the value through the generic solver and
    // sample random strategies, none of which may beat it.
    let pi_wealth = wealth_terminal(tree, &pi_star);
    let achieved: Vec<f64> = endowment
        .iter()
        .zip(&pi_wealth)
        .map(|(h, w)| h + w)
        .collect();
    let identity_gap = (solve(tree, driver, &achieved)?.value() - value).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scales = [0.5, 1.0, 2.0];
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..opts.certificate_samples {
        let scale = scales[k % scales.len()];
        let candidate = PredictableField::from_fn(tree, |_, _| {
            (0..d)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        });
        let w = wealth_terminal(tree, &candidate);
        let terminal: Vec<f64> = endowment.iter().zip(&w).map(|(h, x)| h + x).collect();
        let v = solve(tree, driver, &terminal)?.value();
        max_excess = max_excess.max(v - value);
    }
    if opts.certificate_samples == 0 {
        max_excess = 0.0;
    }
    let passed = identity_gap <= 1e-9 && max_excess <= opts.certificate_tol;

    Ok(InvestmentResult {
        value,
        pi_star,
        z_dagger,
        z_hedge,
        z_g,
        y_star: star.y,
        certificate: OptimalityCertificate {
            samples: opts.certificate_samples,
            max_excess,
            identity_gap,
            passed,
        },
    })
}

/// The closed-form entropic maximizer next to its small-return
/// approximation (1/Gₙ)(vvᵀ)⁻¹Ê[ΔXₙ|ℱₙ₋₁].
#[derive(Debug, Clone)]
pub struct MertonTerm {
    pub exact: PredictableField<Vec<f64>>,
    pub approximate: PredictableField<Vec<f64>>,
    pub max_gap: f64,
}

pub fn merton_term(tree: &ScenarioTree, spec: &EntropicSpec) -> Result<MertonTerm> {
    let basis = tree.basis();
    let d = basis.dim();
    let mut exact_slices = Vec::with_capacity(tree.horizon());
    let mut approx_slices = Vec::with_capacity(tree.horizon());
    let mut max_gap = 0.0_f64;
    for n in 1..=tree.horizon() {
        let mut es = Vec::with_capacity(tree.num_nodes(n - 1));
        let mut aps = Vec::with_capacity(tree.num_nodes(n - 1));
        for node in 0..tree.num_nodes(n - 1) {
            let g = *spec.risk_aversion.get(n, node);
            let kernel = spec.belief.kernel(n, node);
            let log_kernel: Vec<f64> = kernel.iter().map(|p| p.ln()).collect();
            let exact: Vec<f64> = basis.z_of(&log_kernel).iter().map(|x| x / g).collect();
            let mean_return = basis.hull_point(kernel);
            let approx: Vec<f64> = basis
                .apply_gram_inv(&mean_return)
                .iter()
                .map(|x| x / g)
                .collect();
            for i in 0..d {
                max_gap = max_gap.max((exact[i] - approx[i]).abs());
            }
            es.push(exact);
            aps.push(approx);
        }
        exact_slices.push(es);
        approx_slices.push(aps);
    }
    Ok(MertonTerm {
        exact: PredictableField::from_slices(tree, exact_slices)?,
        approximate: PredictableField::from_slices(tree, approx_slices)?,
        max_gap,
    })
}

/// The two-dimensional market completed by a variance swap: basis
/// columns (0, −2c), (1, c), (−1, c), under which the second coordinate
/// tracks the realized variance of the first.
#[derive(Debug, Clone)]
pub struct VarianceSwapMarket {
    pub tree: ScenarioTree,
    /// Largest pathwise violation of X_{n,2} = c(3 Σₖ|ΔX_{k,1}|² − 2n).
    pub max_identity_error: f64,
}

pub fn variance_swap_market(c: f64, horizon: usize) -> Result<VarianceSwapMarket> {
    if c == 0.0 {
        return Err(Error::InvalidInput(
            "variance swap scale c must be nonzero".into(),
        ));
    }
    let basis = Basis::from_vectors(&[vec![1.0, c], vec![-1.0, c]])?;
    let cap = 3usize
        .checked_pow(horizon as u32)
        .ok_or(Error::TreeTooLarge {
            paths: usize::MAX,
            cap: usize::MAX,
        })?;
    let tree = build_tree_with_cap(basis, horizon, cap)?;
    let mut max_err = 0.0_f64;
    for leaf in 0..tree.num_leaves() {
        let word = tree.word(horizon, leaf);
        let mut sum_sq = 0u32; // Σ |ΔX_{k,1}|², integer by construction
        for (k, j) in word.iter().enumerate() {
            let n = k + 1;
            sum_sq += if *j == 0 { 0 } else { 1 };
            let node = tree.ancestor(leaf, horizon, n);
            let x2 = tree.position(n, node)[1];
            let rhs = c * (3.0 * sum_sq as f64 - 2.0 * n as f64);
            max_err = max_err.max((x2 - rhs).abs());
        }
    }
    Ok(VarianceSwapMarket {
        tree,
        max_identity_error: max_err,
    })
}
