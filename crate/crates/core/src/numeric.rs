//! Small numeric routines shared by the driver library: damped gradient
//! ascent with multi-start, coarse-to-fine grid search, and simplex
//! projections for hull-membership tests.

/// Options for the damped ascent used in Legendre transforms and
/// sup-convolutions.
#[derive(Debug, Clone)]
pub struct AscentOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            max_iter: 500,
            grad_tol: 1e-8,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximizes a smooth concave objective by damped gradient ascent from
/// several seeds, keeping the best run. Steps are halved until the
/// Armijo condition holds.
pub fn gradient_ascent(
    objective: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> Vec<f64>,
    seeds: &[Vec<f64>],
    opts: &AscentOptions,
) -> AscentResult {
    let mut best: Option<AscentResult> = None;
    for seed in seeds {
        let mut x = seed.clone();
        let mut fx = objective(&x);
        if !fx.is_finite() {
            continue;
        }
        let mut gnorm = f64::INFINITY;
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let g = gradient(&x);
            gnorm = norm(&g);
            if !gnorm.is_finite() {
                break;
            }
            if gnorm <= opts.grad_tol {
                converged = true;
                break;
            }
            let mut step = opts.initial_step;
            let mut advanced = false;
            while step > 1e-18 {
                let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + step * gi).collect();
                let fc = objective(&cand);
                if fc.is_finite() && fc > fx + 1e-4 * step * gnorm * gnorm {
                    x = cand;
                    fx = fc;
                    advanced = true;
                    break;
                }
                step *= 0.5;
            }
            if !advanced {
                // No strictly improving step exists: the value is at
                // floating-point resolution. A small gradient then means
                // the maximizer itself is resolved.
                converged = gnorm <= 1e-6;
                break;
            }
        }
        let candidate = AscentResult {
            point: x,
            value: fx,
            grad_norm: gnorm,
            converged,
        };
        match &best {
            Some(b) if b.value >= candidate.value => {}
            _ => best = Some(candidate),
        }
    }
    best.unwrap_or(AscentResult {
        point: seeds.first().cloned().unwrap_or_default(),
        value: f64::NEG_INFINITY,
        grad_norm: f64::INFINITY,
        converged: false,
    })
}

/// Maximizes a (possibly non-smooth) objective by repeatedly gridding a
/// box around the incumbent and shrinking. Suitable only for a handful
/// of dimensions.
pub fn coarse_to_fine_grid(
    objective: &dyn Fn(&[f64]) -> f64,
    center: &[f64],
    half_width: f64,
    points_per_axis: usize,
    levels: usize,
) -> (Vec<f64>, f64) {
    let dim = center.len();
    let mut center = center.to_vec();
    let mut half = half_width;
    let mut best_x = center.clone();
    let mut best_v = objective(&center);
    for _ in 0..levels {
        let mut idx = vec![0usize; dim];
        loop {
            let x: Vec<f64> = (0..dim)
                .map(|i| {
                    center[i] - half + 2.0 * half * idx[i] as f64 / (points_per_axis - 1) as f64
                })
                .collect();
            let v = objective(&x);
            if v > best_v {
                best_v = v;
                best_x = x;
            }
            // Odometer increment over the grid.
            let mut k = 0;
            loop {
                idx[k] += 1;
                if idx[k] < points_per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
                if k == dim {
                    break;
                }
            }
            if k == dim {
                break;
            }
        }
        center = best_x.clone();
        half *= 0.55;
    }
    (best_x, best_v)
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Distance from `target` to the convex hull of `points`, found by
/// projected gradient on the simplex of mixture weights. Returns the
/// optimal weights and the distance.
pub fn nearest_in_hull(points: &[Vec<f64>], target: &[f64]) -> (Vec<f64>, f64) {
    let m = points.len();
    let dim = target.len();
    let residual = |lambda: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| {
                points
                    .iter()
                    .zip(lambda)
                    .map(|(p, l)| p[i] * l)
                    .sum::<f64>()
                    - target[i]
            })
            .collect()
    };
    // Lipschitz bound for the gradient of ‖Pλ − t‖².
    let lip: f64 = 2.0
        * points
            .iter()
            .map(|p| p.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .max(1e-12);
    let step = 1.0 / lip;
    let mut lambda = vec![1.0 / m as f64; m];
    for _ in 0..2000 {
        let r = residual(&lambda);
        let grad: Vec<f64> = points
            .iter()
            .map(|p| 2.0 * p.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let moved: Vec<f64> = lambda
            .iter()
            .zip(&grad)
            .map(|(l, g)| l - step * g)
            .collect();
        let next = project_to_simplex(&moved);
        let delta: f64 = next.iter().zip(&lambda).map(|(a, b)| (a - b).abs()).sum();
        lambda = next;
        if delta < 1e-14 {
            break;
        }
    }
    let dist = norm(&residual(&lambda));
    (lambda, dist)
}
