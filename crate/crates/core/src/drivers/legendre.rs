//! Numeric Legendre transform bₙ(θ) = sup_z {gₙ(z) − zᵀθ} of concave
//! drivers. The sup diverges for θ outside the increment hull, which is
//! reported through an explicit +∞ sentinel, never by overflow.

use crate::error::{Error, Result};
use crate::lattice::CONTAINMENT_TOL;
use crate::numeric::{coarse_to_fine_grid, gradient_ascent, AscentOptions};

use super::Driver;

#[derive(Debug, Clone)]
pub struct LegendreOptions {
    pub ascent: AscentOptions,
    /// Warm-start seed, typically the slope at which the kernel was
    /// constructed (there the ascent starts at the maximizer).
    pub seed_hint: Option<Vec<f64>>,
    pub grid_points: usize,
    pub grid_levels: usize,
}

impl Default for LegendreOptions {
    fn default() -> Self {
        LegendreOptions {
            ascent: AscentOptions::default(),
            seed_hint: None,
            grid_points: 9,
            grid_levels: 40,
        }
    }
}

/// bₙ(θ) with default optimizer settings.
pub fn legendre_b(driver: &dyn Driver, n: usize, node: usize, theta: &[f64]) -> Result<f64> {
    legendre_b_with(driver, n, node, theta, &LegendreOptions::default())
}

/// bₙ(θ) = sup_z {gₙ(z) − zᵀθ}.
///
/// Requires a concave driver. Outside the hull the sentinel +∞ is
/// returned immediately; a driver-provided closed form wins otherwise;
/// the generic path is damped multi-start ascent (grid refinement when
/// no gradient is available).
pub fn legendre_b_with(
    driver: &dyn Driver,
    n: usize,
    node: usize,
    theta: &[f64],
    opts: &LegendreOptions,
) -> Result<f64> {
    if !driver.is_concave() {
        return Err(Error::NotConcave);
    }
    let basis = driver.basis();
    if !basis.hull_contains(theta, CONTAINMENT_TOL) {
        return Ok(f64::INFINITY);
    }
    if let Some(b) = driver.legendre_closed_form(n, node, theta) {
        return Ok(b);
    }

    let objective = |z: &[f64]| {
        driver.evaluate(n, node, z) - z.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    };
    let d = basis.dim();
    let theta_norm = theta.iter().map(|x| x * x).sum::<f64>().sqrt();

    let has_gradient = driver.gradient(n, node, &vec![0.0; d]).is_some();
    let value = if has_gradient {
        let gradient = |z: &[f64]| {
            let mut g = driver.gradient(n, node, z).expect("gradient probed above");
            for (gi, ti) in g.iter_mut().zip(theta) {
                *gi -= ti;
            }
            g
        };
        let mut seeds: Vec<Vec<f64>> = vec![vec![0.0; d]];
        if let Some(hint) = &opts.seed_hint {
            seeds.push(hint.clone());
        }
        if let Some(zmax) = driver.argmax(n, node) {
            seeds.push(zmax);
        }
        // Hull-vertex-adapted directions (vvᵀ)⁻¹vⱼ, both signs.
        for j in 0..basis.num_vertices() {
            let dir = basis.z_of(
                &(0..basis.num_vertices())
                    .map(|k| if k == j { 1.0 } else { 0.0 })
                    .collect::<Vec<_>>(),
            );
            seeds.push(dir.clone());
            seeds.push(dir.iter().map(|x| -x).collect());
        }
        let result = gradient_ascent(&objective, &gradient, &seeds, &opts.ascent);
        if result.converged {
            result.value
        } else {
            // Grid polish around the ascent incumbent.
            let (_, refined) = coarse_to_fine_grid(
                &objective,
                &result.point,
                1.0 + theta_norm,
                opts.grid_points,
                opts.grid_levels,
            );
            refined.max(result.value)
        }
    } else {
        if d > 4 {
            return Err(Error::OptimizerFailed(
                "grid fallback limited to small dimension".into(),
            ));
        }
        let (_, v) = coarse_to_fine_grid(
            &objective,
            &vec![0.0; d],
            10.0 * theta_norm + 10.0,
            opts.grid_points,
            opts.grid_levels,
        );
        v
    };
    if value.is_nan() {
        return Err(Error::OptimizerFailed("objective produced NaN".into()));
    }
    Ok(value)
}
