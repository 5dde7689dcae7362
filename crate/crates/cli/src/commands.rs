//! Subcommand implementations: build objects from the config, run the
//! core routines, and emit deterministic artifacts.

use std::path::Path;

use lattice_bsde::bsde::{solve, RESIDUAL_TOL};
use lattice_bsde::drivers::{check_balance, check_gradient};
use lattice_bsde::equilibrium::{check_equilibrium, EquilibriumOptions};
use lattice_bsde::feynman_kac::markov_solve;
use lattice_bsde::portfolio::{optimal_invest, InvestOptions};
use lattice_bsde::robust::{robust_representation, RobustOptions};
use lattice_bsde::Error as CoreError;

use crate::config::{ConfigError, DriverSpec, PayoffSpec, RunConfig};
use crate::output::{
    float_array, fmt_f64, measure_csv, solution_csv, strategies_csv, word_string, write_file, Json,
};

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: the configuration or inputs are invalid.
    Validation(String),
    /// Exit 3: a numerical routine failed.
    Numerical(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::TreeTooLarge { .. } | CoreError::InvalidInput(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("io: {e}"))
    }
}

pub struct CommandContext {
    pub config: RunConfig,
    pub seed: u64,
    pub tol: Option<f64>,
}

impl CommandContext {
    fn summary_header(&self, command: &str) -> Json {
        let mut j = Json::object();
        j.push("command", Json::Str(command.to_string()));
        j.push("seed", Json::UInt(self.seed));
        j
    }
}

pub fn run_solve(ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    let tree = ctx.config.build_tree()?;
    if ctx.config.markov {
        return run_solve_markov(ctx, out_dir);
    }
    let driver = ctx.config.require_driver(&tree)?;
    let terminal = ctx.config.require_payoff(&tree)?;
    let reference = ctx.config.build_reference(&tree)?;
    let solution = solve(&tree, driver.as_ref(), &terminal)?;
    let residual = solution.max_residual(&tree, driver.as_ref());
    let residual_tol = ctx.tol.unwrap_or(ctx.config.tolerances.residual);

    let mut summary = ctx.summary_header("solve");
    summary.push("dimension", Json::UInt(tree.dim() as u64));
    summary.push("horizon", Json::UInt(tree.horizon() as u64));
    summary.push("leaves", Json::UInt(tree.num_leaves() as u64));
    summary.push("y0", Json::Float(solution.value()));
    // The solved value is reference-independent; the plain averages are
    // reported for contrast.
    summary.push(
        "terminal_mean_reference",
        Json::Float(reference.expect_terminal(&tree, &terminal)),
    );
    summary.push(
        "terminal_mean_martingale",
        Json::Float(lattice_bsde::Measure::martingale(&tree).expect_terminal(&tree, &terminal)),
    );
    summary.push("max_residual", Json::Float(residual));
    summary.push(
        "residual_ok",
        Json::Bool(residual <= residual_tol.max(RESIDUAL_TOL)),
    );
    write_file(out_dir, "summary.json", &summary.render())?;
    write_file(out_dir, "solution.csv", &solution_csv(&tree, &solution))?;
    Ok(())
}

fn run_solve_markov(ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    if !ctx.config.markov_capable() {
        return Err(CliError::Validation(
            "markov: true requires an entropic or linear driver with per-time data \
             and a linear/call/indicator payoff"
                .into(),
        ));
    }
    let tree = ctx.config.build_tree()?;
    let driver = ctx.config.require_driver(&tree)?;
    let basis = tree.basis().clone();

    // Per-time data makes the driver node-independent; evaluate at the
    // first node of each slice.
    let generator = |n: usize, _x: &[f64], z: &[f64]| driver.evaluate(n, 0, z);
    let payoff_spec = ctx
        .config
        .payoff
        .clone()
        .expect("checked by markov_capable");
    let terminal = move |x: &[f64]| match &payoff_spec {
        PayoffSpec::Linear { weights } => weights.iter().zip(x).map(|(w, xi)| w * xi).sum(),
        PayoffSpec::Call { weights, strike } => {
            (weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() - strike).max(0.0)
        }
        PayoffSpec::Indicator { weights, threshold } => {
            if weights.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() >= *threshold {
                1.0
            } else {
                0.0
            }
        }
        _ => unreachable!("checked by markov_capable"),
    };
    let u = markov_solve(&basis, tree.horizon(), &terminal, &generator)?;

    let mut summary = ctx.summary_header("solve");
    summary.push("dimension", Json::UInt(tree.dim() as u64));
    summary.push("horizon", Json::UInt(tree.horizon() as u64));
    summary.push("markov", Json::Bool(true));
    summary.push("y0", Json::Float(u.value_at_origin()));
    summary.push("evaluated_points", Json::UInt(u.evaluated_points() as u64));
    write_file(out_dir, "summary.json", &summary.render())?;

    let mut csv = String::from("time,counts");
    for i in 1..=tree.dim() {
        csv.push_str(&format!(",x_{i}"));
    }
    csv.push_str(",y\n");
    for n in 0..=tree.horizon() {
        for (key, value) in u.level(n) {
            let counts: Vec<String> = key.iter().map(|c| c.to_string()).collect();
            csv.push_str(&format!("{n},{}", counts.join("|")));
            for xi in u.coordinates(key) {
                csv.push_str(&format!(",{}", fmt_f64(xi)));
            }
            csv.push_str(&format!(",{}\n", fmt_f64(*value)));
        }
    }
    write_file(out_dir, "lattice_solution.csv", &csv)?;
    Ok(())
}

pub fn run_robust(ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    let tree = ctx.config.build_tree()?;
    let driver = ctx.config.require_driver(&tree)?;
    let terminal = ctx.config.require_payoff(&tree)?;
    let opts = RobustOptions {
        alternatives: ctx.config.robust_alternatives.unwrap_or(5),
        seed: ctx.seed,
        gap_threshold: ctx.tol.unwrap_or(1e-6),
        ..Default::default()
    };
    let rep = robust_representation(&tree, driver.as_ref(), &terminal, &opts)?;

    let mut summary = ctx.summary_header("robust");
    summary.push("value", Json::Float(rep.value));
    summary.push("penalty", Json::Float(rep.penalty));
    summary.push("certificate_gap", Json::Float(rep.certificate_gap));
    summary.push("gap_within_threshold", Json::Bool(rep.gap_within_threshold));
    summary.push(
        "alternatives_checked",
        Json::UInt(rep.alternatives_checked as u64),
    );
    if rep.alternatives_checked > 0 {
        summary.push(
            "min_alternative_slack",
            Json::Float(rep.min_alternative_slack),
        );
    }
    write_file(out_dir, "summary.json", &summary.render())?;
    write_file(out_dir, "measure.csv", &measure_csv(&tree, &rep.minimizer))?;
    write_file(out_dir, "solution.csv", &solution_csv(&tree, &rep.solution))?;
    Ok(())
}

pub fn run_invest(ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    let tree = ctx.config.build_tree()?;
    let driver = ctx.config.require_driver(&tree)?;
    let endowment = ctx.config.require_payoff(&tree)?;
    let opts = InvestOptions {
        certificate_samples: ctx.config.certificate_samples.unwrap_or(200),
        seed: ctx.seed,
        certificate_tol: ctx.tol.unwrap_or(ctx.config.tolerances.certificate),
    };
    let result = optimal_invest(&tree, driver.as_ref(), &endowment, &opts)?;

    let mut summary = ctx.summary_header("invest");
    summary.push("value", Json::Float(result.value));
    summary.push(
        "certificate_samples",
        Json::UInt(result.certificate.samples as u64),
    );
    summary.push("max_excess", Json::Float(result.certificate.max_excess));
    summary.push("identity_gap", Json::Float(result.certificate.identity_gap));
    summary.push("certificate_passed", Json::Bool(result.certificate.passed));
    write_file(out_dir, "summary.json", &summary.render())?;
    write_file(
        out_dir,
        "strategies.csv",
        &strategies_csv(
            &tree,
            &result.pi_star,
            &result.z_dagger,
            &result.z_hedge,
            &result.z_g,
        ),
    )?;
    Ok(())
}

pub fn run_equilibrium(ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    let tree = ctx.config.build_tree()?;
    let agents = ctx.config.build_agents(&tree)?;
    let supply = ctx.config.build_supply(&tree)?;
    let opts = EquilibriumOptions {
        clearing_tol: ctx.tol.unwrap_or(ctx.config.tolerances.clearing),
        invest: InvestOptions {
            certificate_samples: ctx.config.certificate_samples.unwrap_or(0),
            seed: ctx.seed,
            certificate_tol: ctx.config.tolerances.certificate,
        },
    };
    let report = check_equilibrium(&tree, &agents, supply.as_ref(), &opts)?;

    let mut summary = ctx.summary_header("equilibrium");
    summary.push("agents", Json::UInt(agents.len() as u64));
    summary.push("is_equilibrium", Json::Bool(report.is_equilibrium));
    summary.push(
        "max_clearing_residual",
        Json::Float(report.max_clearing_residual),
    );
    summary.push("tolerance", Json::Float(report.tolerance));
    summary.push(
        "values",
        float_array(report.per_agent.iter().map(|r| r.value)),
    );
    write_file(out_dir, "summary.json", &summary.render())?;

    let mut eq = ctx.summary_header("equilibrium");
    eq.push("is_equilibrium", Json::Bool(report.is_equilibrium));
    eq.push(
        "max_clearing_residual",
        Json::Float(report.max_clearing_residual),
    );
    let mut net = Vec::new();
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            let mut row = Json::object();
            row.push("time", Json::UInt(n as u64));
            row.push("node", Json::Str(word_string(&tree, n - 1, node)));
            row.push(
                "net_demand",
                float_array(report.net_demand.get(n, node).iter().copied()),
            );
            net.push(row);
        }
    }
    eq.push("net", Json::Array(net));
    write_file(out_dir, "equilibrium.json", &eq.render())?;

    for (i, r) in report.per_agent.iter().enumerate() {
        write_file(
            out_dir,
            &format!("strategies_agent_{}.csv", i + 1),
            &strategies_csv(&tree, &r.pi_star, &r.z_dagger, &r.z_hedge, &r.z_g),
        )?;
    }
    Ok(())
}

pub fn run_check(ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    let tree = ctx.config.build_tree()?;
    let driver = ctx.config.require_driver(&tree)?;
    let pairs = ctx.config.balance_samples.unwrap_or(200);
    let balance = check_balance(driver.as_ref(), &tree, pairs, ctx.seed);
    let gradient = check_gradient(driver.as_ref(), &tree, 100, ctx.seed.wrapping_add(1));

    // Basis sanity: column sums and decomposition round trips.
    let basis = tree.basis();
    let mut column_sum = 0.0_f64;
    for i in 0..basis.dim() {
        let s: f64 = (0..basis.num_vertices()).map(|j| basis.vertex(j)[i]).sum();
        column_sum = column_sum.max(s.abs());
    }
    let mut reconstruct = 0.0_f64;
    for k in 0..50 {
        let y: Vec<f64> = (0..basis.num_vertices())
            .map(|j| ((k * 7 + j * 13) % 23) as f64 * 0.37 - 4.0)
            .collect();
        let (a, z) = basis.affine_decompose(&y);
        for (orig, back) in y.iter().zip(basis.reconstruct(a, &z)) {
            reconstruct = reconstruct.max((orig - back).abs());
        }
    }

    let mut summary = ctx.summary_header("check");
    summary.push("dimension", Json::UInt(tree.dim() as u64));
    summary.push("horizon", Json::UInt(tree.horizon() as u64));
    let mut bal = Json::object();
    bal.push("pairs_tested", Json::UInt(balance.pairs_tested as u64));
    let worst_margin = if balance.pairs_tested == 0 {
        0.0
    } else {
        balance.worst_margin
    };
    bal.push("worst_margin", Json::Float(worst_margin));
    bal.push("violations", Json::UInt(balance.violations as u64));
    bal.push("gradient_checked", Json::Bool(balance.gradient_checked));
    bal.push(
        "gradient_outside_hull",
        Json::UInt(balance.gradient_outside_hull as u64),
    );
    bal.push("passed", Json::Bool(balance.passed()));
    summary.push("balance", bal);
    let mut grad = Json::object();
    grad.push("samples", Json::UInt(gradient.samples as u64));
    grad.push(
        "worst_relative_error",
        Json::Float(gradient.worst_relative_error),
    );
    grad.push("passed", Json::Bool(gradient.passed(1e-5)));
    summary.push("gradient", grad);
    let mut inv = Json::object();
    inv.push("max_column_sum", Json::Float(column_sum));
    inv.push("max_reconstruction_error", Json::Float(reconstruct));
    inv.push(
        "passed",
        Json::Bool(column_sum <= 1e-12 && reconstruct <= 1e-10),
    );
    summary.push("basis", inv);
    write_file(out_dir, "summary.json", &summary.render())?;
    Ok(())
}

/// Dispatch used by `main`; `command` is the subcommand name.
pub fn run(command: &str, ctx: &CommandContext, out_dir: &Path) -> Result<(), CliError> {
    match command {
        "solve" => run_solve(ctx, out_dir),
        "robust" => run_robust(ctx, out_dir),
        "invest" => run_invest(ctx, out_dir),
        "equilibrium" => run_equilibrium(ctx, out_dir),
        "check" => run_check(ctx, out_dir),
        other => Err(CliError::Validation(format!("unknown command {other}"))),
    }
}

/// Ensures the driver spec references match the tree dimensions before
/// heavy work starts; currently schema building performs the checks.
pub fn validate(config: &RunConfig) -> Result<(), CliError> {
    if config.horizon == 0 {
        return Err(CliError::Validation("horizon must be at least 1".into()));
    }
    if let Some(DriverSpec::Supconv { children }) = &config.driver {
        if children.is_empty() {
            return Err(CliError::Validation(
                "driver.children must not be empty".into(),
            ));
        }
    }
    Ok(())
}
