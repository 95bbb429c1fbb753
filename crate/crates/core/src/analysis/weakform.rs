//! Weak-form residual of a grid solution against smooth compactly supported bumps.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::stencil::interior_derivatives;
use crate::calculus::{GridFunction, LogGrid};
use crate::error::{ConeError, Result};
use crate::operators::PDEProblem;

/// `ψ(y) = Π_k cos⁴(π(y_k − c_k)/(2w))` on `|y_k − c_k| < w`, zero elsewhere.
///
/// The fourth power makes `ψ` of class `C³`, so the trapezoid rule keeps its
/// second order across the edge of the support.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CosineBump {
    pub center: Vec<f64>,
    /// Half width of the support along every axis.
    pub width: f64,
}

impl CosineBump {
    pub fn new(center: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) || center.iter().any(|c| !c.is_finite()) {
            return Err(ConeError::Domain(format!("bad bump width {width} or center")));
        }
        Ok(Self { center, width })
    }

    fn factor(&self, k: usize, y: f64) -> (f64, f64) {
        let s = (y - self.center[k]) / self.width;
        if s.abs() >= 1.0 {
            (0.0, 0.0)
        } else {
            let c = 0.5 * (1.0 + (PI * s).cos());
            let dc = -0.5 * PI / self.width * (PI * s).sin();
            (c * c, 2.0 * c * dc)
        }
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        (0..y.len()).map(|k| self.factor(k, y[k]).0).product()
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let f: Vec<(f64, f64)> = (0..y.len()).map(|k| self.factor(k, y[k])).collect();
        (0..y.len())
            .map(|k| {
                f.iter()
                    .enumerate()
                    .map(|(l, &(v, d))| if l == k { d } else { v })
                    .product()
            })
            .collect()
    }

    /// Closed support lies in the open grid box, so every node it touches is interior.
    fn inside(&self, grid: &LogGrid) -> bool {
        (0..grid.ndim()).all(|k| {
            self.center[k] - self.width > grid.lower()[k] && self.center[k] + self.width < grid.upper()[k]
        })
    }
}

/// `count` bumps with half width in `[0.15, 0.3]` of the shortest box side,
/// centered so that their supports stay a spacing away from the faces.
pub fn bump_family(grid: &LogGrid, count: usize, seed: u64) -> Result<Vec<CosineBump>> {
    let nd = grid.ndim();
    let side = (0..nd)
        .map(|k| grid.upper()[k] - grid.lower()[k])
        .fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let w = side * rng.gen_range(0.15..0.3);
            let center = (0..nd)
                .map(|k| {
                    let m = w + grid.h(k);
                    rng.gen_range(grid.lower()[k] + m..grid.upper()[k] - m)
                })
                .collect();
            CosineBump::new(center, w)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakFormReport {
    /// Residual of the `ψ`-form with weight `da dx` per test.
    pub residuals: Vec<f64>,
    /// The same tests through the `t^{−p}`-weighted form with `φ = t^p ψ`.
    pub residuals_t_weighted: Vec<f64>,
    pub max_residual: f64,
    /// Largest difference between the two forms.
    pub max_form_difference: f64,
}

/// Per test `ψ`,
/// `∫ |∇u|^{p−2}∇u·∇ψ − ∫ (−t^p f + (n−p)|∇u|^{p−2} ∂ₐu) ψ` with central
/// differences for `∇u` and the trapezoid rule in `(a, x)`. The second form
/// uses `∫ t^{−p}|∇u|^{p−2}∇u·∇φ − ∫ (−f + n t^{−p}|∇u|^{p−2} ∂ₐu) φ`.
pub fn weak_form_residual(u: &GridFunction, prob: &PDEProblem, tests: &[CosineBump]) -> Result<WeakFormReport> {
    let g = &u.grid;
    let nd = g.ndim();
    if nd != prob.n {
        return Err(ConeError::Domain("problem and grid dimensions differ".into()));
    }
    if tests.is_empty() {
        return Err(ConeError::Precondition("empty test family".into()));
    }
    if let Some(b) = tests.iter().find(|b| b.center.len() != nd || !b.inside(g)) {
        return Err(ConeError::Precondition(format!(
            "test bump at {:?} with width {} is not supported inside the interior",
            b.center, b.width
        )));
    }
    let (p, n) = (prob.p, nd as f64);
    let mut grad = vec![0.0; nd];
    let mut hess = vec![0.0; nd * nd];
    let mut r5 = vec![0.0; tests.len()];
    let mut r4 = vec![0.0; tests.len()];
    for i in g.interior_nodes() {
        let y = g.node_coords(i);
        let live: Vec<usize> = (0..tests.len()).filter(|&k| tests[k].value(&y) > 0.0).collect();
        if live.is_empty() {
            continue;
        }
        interior_derivatives(u, i, &mut grad, &mut hess);
        let w = g.quadrature_weight(i);
        let norm2: f64 = grad.iter().map(|x| x * x).sum();
        let weight = if p == 2.0 { 1.0 } else { norm2.powf(0.5 * (p - 2.0)) };
        let f = prob.f.eval(&y);
        let tp = (p * y[0]).exp();
        for k in live {
            let psi = tests[k].value(&y);
            let dpsi = tests[k].gradient(&y);
            let flux: f64 = grad.iter().zip(&dpsi).map(|(a, b)| a * b).sum();
            r5[k] += w * (weight * flux - (-tp * f + (n - p) * weight * grad[0]) * psi);

            let phi = tp * psi;
            let flux_phi: f64 = (0..nd)
                .map(|l| grad[l] * tp * (dpsi[l] + if l == 0 { p * psi } else { 0.0 }))
                .sum();
            r4[k] += w * (weight * flux_phi / tp - (-f + n * weight * grad[0] / tp) * phi);
        }
    }
    let max_residual = r5.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let max_form_difference = r5.iter().zip(&r4).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(WeakFormReport {
        residuals: r5,
        residuals_t_weighted: r4,
        max_residual,
        max_form_difference,
    })
}
