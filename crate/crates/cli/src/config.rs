//! Run configuration: a single JSON document describing the basis, the
//! horizon, drivers, payoffs, agents, and command parameters, plus the
//! builders that turn it into solver objects.

use std::sync::Arc;

use serde::Deserialize;

use lattice_bsde::drivers::{
    entropic_driver, linear_driver, sup_convolution, worstcase_from_kernels, worstcase_full_hull,
    Driver, EntropicSpec,
};
use lattice_bsde::equilibrium::Agent;
use lattice_bsde::scenario::build_tree_with_cap;
use lattice_bsde::{Basis, Measure, PredictableField, ScenarioTree};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub basis: BasisSpec,
    pub horizon: usize,
    #[serde(default)]
    pub tree_cap: Option<usize>,
    /// Reference-measure kernel P (one-step, constant); defaults to the
    /// uniform kernel. Results past the measure-change layer do not
    /// depend on it beyond positivity.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default)]
    pub driver: Option<DriverSpec>,
    #[serde(default)]
    pub payoff: Option<PayoffSpec>,
    #[serde(default)]
    pub agents: Option<Vec<AgentSpec>>,
    /// Per-time total supply vectors (deterministic).
    #[serde(default)]
    pub supply: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub markov: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Random strategies sampled by optimality certificates.
    #[serde(default)]
    pub certificate_samples: Option<usize>,
    /// Alternative measures checked by the robust representation.
    #[serde(default)]
    pub robust_alternatives: Option<usize>,
    /// Slope-pair samples per node for balance checks.
    #[serde(default)]
    pub balance_samples: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct Tolerances {
    #[serde(default = "default_clearing")]
    pub clearing: f64,
    #[serde(default = "default_certificate")]
    pub certificate: f64,
    #[serde(default = "default_residual")]
    pub residual: f64,
}

fn default_clearing() -> f64 {
    1e-8
}
fn default_certificate() -> f64 {
    1e-9
}
fn default_residual() -> f64 {
    1e-10
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            clearing: default_clearing(),
            certificate: default_certificate(),
            residual: default_residual(),
        }
    }
}

/// Either explicit basis vectors v₁,…,v_d (v₀ is derived) or a
/// covariance matrix for the Gram construction. The optional `d` is
/// checked against the data when present.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub vectors: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub covariance: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrPerTime {
    Scalar(f64),
    PerTime(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum KernelOrPerTime {
    One(Vec<f64>),
    PerTime(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Entropic {
        belief: KernelOrPerTime,
        risk_aversion: ScalarOrPerTime,
        #[serde(default)]
        shift: Option<ScalarOrPerTime>,
    },
    Linear {
        slope: KernelOrPerTime,
        #[serde(default)]
        intercept: Option<ScalarOrPerTime>,
    },
    Worstcase {
        /// Kernel list shared by every time step; omitted means the
        /// full increment hull.
        #[serde(default)]
        kernels: Option<Vec<Vec<f64>>>,
    },
    Supconv {
        children: Vec<DriverSpec>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffSpec {
    /// wᵀX_N.
    Linear { weights: Vec<f64> },
    /// max(wᵀX_N − strike, 0).
    Call { weights: Vec<f64>, strike: f64 },
    /// 1{wᵀX_N ≥ threshold}.
    Indicator { weights: Vec<f64>, threshold: f64 },
    /// scale·(3 Σₖ |ΔX_{k,asset}|² − 2N), the variance swap leg.
    VarianceSwap {
        scale: f64,
        #[serde(default)]
        asset: usize,
    },
    /// Explicit per-leaf values in node order.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub driver: DriverSpec,
    pub endowment: PayoffSpec,
}

/// Configuration problems surfaced before any solving starts.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type BuildResult<T> = std::result::Result<T, ConfigError>;

fn invalid<T>(msg: impl Into<String>) -> BuildResult<T> {
    Err(ConfigError(msg.into()))
}

impl RunConfig {
    pub fn parse(text: &str) -> BuildResult<RunConfig> {
        serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn build_basis(&self) -> BuildResult<Basis> {
        let basis = match (&self.basis.vectors, &self.basis.covariance) {
            (Some(v), None) => {
                Basis::from_vectors(v).map_err(|e| ConfigError(format!("basis.vectors: {e}")))?
            }
            (None, Some(c)) => Basis::from_covariance(c)
                .map_err(|e| ConfigError(format!("basis.covariance: {e}")))?,
            _ => return invalid("basis: exactly one of `vectors` or `covariance` is required"),
        };
        if let Some(d) = self.basis.d {
            if d != basis.dim() {
                return invalid(format!(
                    "basis.d: declared {d}, data implies {}",
                    basis.dim()
                ));
            }
        }
        Ok(basis)
    }

    pub fn build_tree(&self) -> BuildResult<ScenarioTree> {
        let basis = self.build_basis()?;
        let cap = self
            .tree_cap
            .unwrap_or(lattice_bsde::scenario::DEFAULT_TREE_CAP);
        build_tree_with_cap(basis, self.horizon, cap)
            .map_err(|e| ConfigError(format!("horizon: {e}")))
    }

    pub fn build_reference(&self, tree: &ScenarioTree) -> BuildResult<Measure> {
        match &self.reference {
            None => Ok(Measure::martingale(tree)),
            Some(kernel) => {
                let m = Measure::from_constant_kernel(tree, kernel)
                    .map_err(|e| ConfigError(format!("reference: {e}")))?;
                // The reference measure must charge every branch.
                if !m.is_interior(lattice_bsde::scenario::INTERIOR_EPS) {
                    return invalid("reference: kernel must be strictly positive");
                }
                Ok(m)
            }
        }
    }

    pub fn require_driver(&self, tree: &ScenarioTree) -> BuildResult<Arc<dyn Driver>> {
        match &self.driver {
            Some(spec) => build_driver(spec, tree),
            None => invalid("this command requires a `driver`"),
        }
    }

    pub fn require_payoff(&self, tree: &ScenarioTree) -> BuildResult<Vec<f64>> {
        match &self.payoff {
            Some(spec) => build_payoff(spec, tree),
            None => invalid("this command requires a `payoff`"),
        }
    }

    pub fn build_agents(&self, tree: &ScenarioTree) -> BuildResult<Vec<Agent>> {
        let Some(specs) = &self.agents else {
            return invalid("this command requires `agents`");
        };
        if specs.is_empty() {
            return invalid("`agents` must not be empty");
        }
        specs
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let driver = build_driver(&spec.driver, tree)
                    .map_err(|e| ConfigError(format!("agents[{i}].{}", e.0)))?;
                let endowment = build_payoff(&spec.endowment, tree)
                    .map_err(|e| ConfigError(format!("agents[{i}].{}", e.0)))?;
                Agent::new(tree, driver, endowment)
                    .map_err(|e| ConfigError(format!("agents[{i}]: {e}")))
            })
            .collect()
    }

    pub fn build_supply(
        &self,
        tree: &ScenarioTree,
    ) -> BuildResult<Option<PredictableField<Vec<f64>>>> {
        let Some(rows) = &self.supply else {
            return Ok(None);
        };
        if rows.len() != tree.horizon() {
            return invalid(format!(
                "supply: expected {} per-time vectors, got {}",
                tree.horizon(),
                rows.len()
            ));
        }
        for (n, row) in rows.iter().enumerate() {
            if row.len() != tree.dim() {
                return invalid(format!("supply[{n}]: expected {} components", tree.dim()));
            }
        }
        Ok(Some(PredictableField::from_fn(tree, |n, _| {
            rows[n - 1].clone()
        })))
    }

    /// True when the configured driver and payoff admit the
    /// recombining-lattice route (per-time data, terminal a function of
    /// the final position).
    pub fn markov_capable(&self) -> bool {
        let driver_ok = matches!(
            &self.driver,
            Some(DriverSpec::Entropic { .. }) | Some(DriverSpec::Linear { .. })
        );
        let payoff_ok = matches!(
            &self.payoff,
            Some(PayoffSpec::Linear { .. })
                | Some(PayoffSpec::Call { .. })
                | Some(PayoffSpec::Indicator { .. })
        );
        driver_ok && payoff_ok
    }
}

fn per_time_scalar(
    spec: &Option<ScalarOrPerTime>,
    default: f64,
    tree: &ScenarioTree,
    what: &str,
) -> BuildResult<PredictableField<f64>> {
    match spec {
        None => Ok(PredictableField::constant(tree, default)),
        Some(ScalarOrPerTime::Scalar(x)) => Ok(PredictableField::constant(tree, *x)),
        Some(ScalarOrPerTime::PerTime(xs)) => {
            if xs.len() != tree.horizon() {
                return invalid(format!(
                    "{what}: expected {} per-time values, got {}",
                    tree.horizon(),
                    xs.len()
                ));
            }
            Ok(PredictableField::from_fn(tree, |n, _| xs[n - 1]))
        }
    }
}

fn per_time_kernels(
    spec: &KernelOrPerTime,
    tree: &ScenarioTree,
    len: usize,
    what: &str,
) -> BuildResult<Vec<Vec<f64>>> {
    let rows = match spec {
        KernelOrPerTime::One(k) => vec![k.clone(); tree.horizon()],
        KernelOrPerTime::PerTime(ks) => ks.clone(),
    };
    if rows.len() != tree.horizon() {
        return invalid(format!(
            "{what}: expected {} per-time entries, got {}",
            tree.horizon(),
            rows.len()
        ));
    }
    for (n, row) in rows.iter().enumerate() {
        if row.len() != len {
            return invalid(format!("{what}[{n}]: expected {len} components"));
        }
    }
    Ok(rows)
}

pub fn build_driver(spec: &DriverSpec, tree: &ScenarioTree) -> BuildResult<Arc<dyn Driver>> {
    match spec {
        DriverSpec::Entropic {
            belief,
            risk_aversion,
            shift,
        } => {
            let kernels = per_time_kernels(belief, tree, tree.arity(), "driver.belief")?;
            let belief = Measure::from_time_kernels(tree, &kernels)
                .map_err(|e| ConfigError(format!("driver.belief: {e}")))?;
            let g = per_time_scalar(
                &Some(risk_aversion.clone()),
                1.0,
                tree,
                "driver.risk_aversion",
            )?;
            let b = per_time_scalar(shift, 1.0, tree, "driver.shift")?;
            let driver = entropic_driver(tree, EntropicSpec::new(belief, g, b))
                .map_err(|e| ConfigError(format!("driver: {e}")))?;
            Ok(Arc::new(driver))
        }
        DriverSpec::Linear { slope, intercept } => {
            let rows = per_time_kernels(slope, tree, tree.dim(), "driver.slope")?;
            let slope_field = PredictableField::from_fn(tree, |n, _| rows[n - 1].clone());
            let b = per_time_scalar(intercept, 0.0, tree, "driver.intercept")?;
            Ok(Arc::new(linear_driver(tree, slope_field, b)))
        }
        DriverSpec::Worstcase { kernels } => match kernels {
            None => Ok(Arc::new(worstcase_full_hull(tree))),
            Some(set) => {
                let per_time = vec![set.clone(); tree.horizon()];
                let driver = worstcase_from_kernels(tree, per_time)
                    .map_err(|e| ConfigError(format!("driver.kernels: {e}")))?;
                Ok(Arc::new(driver))
            }
        },
        DriverSpec::Supconv { children } => {
            let built: Vec<Arc<dyn Driver>> = children
                .iter()
                .map(|c| build_driver(c, tree))
                .collect::<BuildResult<_>>()?;
            let driver =
                sup_convolution(built).map_err(|e| ConfigError(format!("driver.children: {e}")))?;
            Ok(Arc::new(driver))
        }
    }
}

pub fn build_payoff(spec: &PayoffSpec, tree: &ScenarioTree) -> BuildResult<Vec<f64>> {
    let horizon = tree.horizon();
    match spec {
        PayoffSpec::Linear { weights } => {
            check_weights(weights, tree)?;
            Ok(terminal_positions(tree).map(|x| dot(weights, &x)).collect())
        }
        PayoffSpec::Call { weights, strike } => {
            check_weights(weights, tree)?;
            Ok(terminal_positions(tree)
                .map(|x| (dot(weights, &x) - strike).max(0.0))
                .collect())
        }
        PayoffSpec::Indicator { weights, threshold } => {
            check_weights(weights, tree)?;
            Ok(terminal_positions(tree)
                .map(|x| {
                    if dot(weights, &x) >= *threshold {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect())
        }
        PayoffSpec::VarianceSwap { scale, asset } => {
            if *asset >= tree.dim() {
                return invalid(format!("payoff.asset: no coordinate {asset}"));
            }
            Ok((0..tree.num_leaves())
                .map(|leaf| {
                    let word = tree.word(horizon, leaf);
                    let mut sum_sq = 0.0;
                    for j in word {
                        let v = tree.basis().vertex(j);
                        sum_sq += v[*asset] * v[*asset];
                    }
                    scale * (3.0 * sum_sq - 2.0 * horizon as f64)
                })
                .collect())
        }
        PayoffSpec::Table { values } => {
            if values.len() != tree.num_leaves() {
                return invalid(format!(
                    "payoff.values: expected {} leaf entries, got {}",
                    tree.num_leaves(),
                    values.len()
                ));
            }
            Ok(values.clone())
        }
    }
}

fn check_weights(weights: &[f64], tree: &ScenarioTree) -> BuildResult<()> {
    if weights.len() != tree.dim() {
        return invalid(format!(
            "payoff.weights: expected {} components, got {}",
            tree.dim(),
            weights.len()
        ));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn terminal_positions(tree: &ScenarioTree) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..tree.num_leaves()).map(move |leaf| tree.position(tree.horizon(), leaf))
}
