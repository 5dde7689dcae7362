//! Numeric sup-convolution of concave drivers:
//! (g⁽¹⁾ □ … □ g⁽ᵐ⁾)(z) = sup { Σᵢ g⁽ⁱ⁾(xᵢ) : Σᵢ xᵢ = z }, the driver of
//! the representative agent.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::Basis;
use crate::numeric::{coarse_to_fine_grid, gradient_ascent, AscentOptions};

use super::Driver;

pub struct SupConvolutionDriver {
    children: Vec<Arc<dyn Driver>>,
    opts: AscentOptions,
    balanced: bool,
}

/// Joint maximization over allocations; every child must be concave.
pub fn sup_convolution(children: Vec<Arc<dyn Driver>>) -> Result<SupConvolutionDriver> {
    if children.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(_bad) = children.iter().find(|c| !c.is_concave()) {
        return Err(Error::NotConcave);
    }
    // Shifting the allocation of one balanced child proves balance of
    // the convolution.
    let balanced = children.iter().any(|c| c.is_balanced());
    Ok(SupConvolutionDriver {
        children,
        opts: AscentOptions::default(),
        balanced,
    })
}

impl SupConvolutionDriver {
    pub fn children(&self) -> &[Arc<dyn Driver>] {
        &self.children
    }

    /// Best allocation (x₁,…,x_m) with Σxᵢ = z and the attained value.
    pub fn allocate(&self, n: usize, node: usize, z: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
        let m = self.children.len();
        let d = self.basis().dim();
        if m == 1 {
            return Ok((vec![z.to_vec()], self.children[0].evaluate(n, node, z)));
        }
        let free = (m - 1) * d;
        let unpack = |u: &[f64]| -> Vec<Vec<f64>> {
            let mut xs: Vec<Vec<f64>> =
                (0..m - 1).map(|i| u[i * d..(i + 1) * d].to_vec()).collect();
            let mut last = z.to_vec();
            for x in &xs {
                for (l, xi) in last.iter_mut().zip(x) {
                    *l -= xi;
                }
            }
            xs.push(last);
            xs
        };
        let objective = |u: &[f64]| -> f64 {
            unpack(u)
                .iter()
                .enumerate()
                .map(|(i, x)| self.children[i].evaluate(n, node, x))
                .sum()
        };

        let mut seeds: Vec<Vec<f64>> = Vec::new();
        // Equal split.
        let mut equal = Vec::with_capacity(free);
        for _ in 0..m - 1 {
            equal.extend(z.iter().map(|x| x / m as f64));
        }
        seeds.push(equal);
        // Everything allocated to the last child.
        seeds.push(vec![0.0; free]);
        // Maximizer-adapted split when available.
        let argmaxes: Option<Vec<Vec<f64>>> =
            self.children.iter().map(|c| c.argmax(n, node)).collect();
        if let Some(zs) = &argmaxes {
            let mut total = vec![0.0; d];
            for x in zs {
                for (t, xi) in total.iter_mut().zip(x) {
                    *t += xi;
                }
            }
            let mut seed = Vec::with_capacity(free);
            for x in zs.iter().take(m - 1) {
                for (i, xi) in x.iter().enumerate() {
                    seed.push(xi + (z[i] - total[i]) / m as f64);
                }
            }
            seeds.push(seed);
        }

        let all_smooth = self
            .children
            .iter()
            .all(|c| c.gradient(n, node, &vec![0.0; d]).is_some());
        let (best_u, value) = if all_smooth {
            let gradient = |u: &[f64]| -> Vec<f64> {
                let xs = unpack(u);
                let g_last = self.children[m - 1]
                    .gradient(n, node, &xs[m - 1])
                    .expect("smooth child");
                let mut g = Vec::with_capacity(free);
                for (i, x) in xs.iter().take(m - 1).enumerate() {
                    let gi = self.children[i].gradient(n, node, x).expect("smooth child");
                    for k in 0..d {
                        g.push(gi[k] - g_last[k]);
                    }
                }
                g
            };
            let r = gradient_ascent(&objective, &gradient, &seeds, &self.opts);
            if !r.value.is_finite() {
                return Err(Error::OptimizerFailed("sup-convolution diverged".into()));
            }
            (r.point, r.value)
        } else {
            if free > 4 {
                return Err(Error::OptimizerFailed(
                    "grid fallback limited to small dimension".into(),
                ));
            }
            let znorm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            coarse_to_fine_grid(&objective, &seeds[0], 10.0 * znorm + 10.0, 9, 40)
        };
        if value.is_nan() {
            return Err(Error::OptimizerFailed(
                "sup-convolution produced NaN".into(),
            ));
        }
        Ok((unpack(&best_u), value))
    }
}

impl Driver for SupConvolutionDriver {
    fn basis(&self) -> &Basis {
        self.children[0].basis()
    }

    fn horizon(&self) -> usize {
        self.children[0].horizon()
    }

    fn evaluate(&self, n: usize, node: usize, z: &[f64]) -> f64 {
        match self.allocate(n, node, z) {
            Ok((_, v)) => v,
            Err(_) => f64::NAN,
        }
    }

    fn gradient(&self, n: usize, node: usize, z: &[f64]) -> Option<Vec<f64>> {
        // Envelope: at an optimal allocation all child gradients agree.
        let (xs, _) = self.allocate(n, node, z).ok()?;
        self.children
            .last()
            .and_then(|c| c.gradient(n, node, xs.last().unwrap()))
    }

    fn is_concave(&self) -> bool {
        true
    }

    fn is_balanced(&self) -> bool {
        self.balanced
    }

    fn has_argmax(&self) -> bool {
        self.children.iter().all(|c| c.has_argmax())
    }

    fn argmax(&self, n: usize, node: usize) -> Option<Vec<f64>> {
        // The maximizers add up, matching the sup-sum identity.
        let d = self.basis().dim();
        let mut total = vec![0.0; d];
        for c in &self.children {
            let x = c.argmax(n, node)?;
            for (t, xi) in total.iter_mut().zip(&x) {
                *t += xi;
            }
        }
        Some(total)
    }
}
