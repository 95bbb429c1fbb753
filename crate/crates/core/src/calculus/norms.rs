//! Quadrature for `dt/t dx` and the weighted Lebesgue, Sobolev and Hölder norms.

use serde::{Deserialize, Serialize};

use super::grid::GridFunction;
use super::stencil::{b_hessian, first_difference};
use crate::error::{domain, ConeError, Result};
use crate::geometry::log_distance;

/// Node cap for the pairwise Hölder sweep; larger grids are stride-subsampled.
pub const HOELDER_PAIR_CAP: usize = 5000;

/// Parameters of the weighted norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub m: usize,
    pub gamma: f64,
    pub p: f64,
    pub rho: f64,
}

impl NormParams {
    pub fn new(m: usize, gamma: f64, p: f64, rho: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return domain(format!("norm exponent p must be >= 1, got {p}"));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return domain(format!("Hölder exponent must lie in (0,1], got {rho}"));
        }
        Ok(Self { m, gamma, p, rho })
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Trapezoidal `∫ g dt/t dx = ∫ ḡ da dx` over the grid box.
pub fn cone_integral(g: &GridFunction) -> f64 {
    let grid = &g.grid;
    let mut acc = KahanSum::default();
    for (i, v) in g.values.iter().enumerate() {
        acc.add(grid.quadrature_weight(i) * v);
    }
    acc.value()
}

/// Weighted norm value together with the data needed to interpret it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub value: f64,
    /// Exponent `n/p − γ` of the weight `t(1−t)·dist(x, ∂X)`.
    pub weight_exponent: f64,
    pub t_min: f64,
    /// Set when the untruncated integral is infinite.
    pub divergent: bool,
}

fn weight_base(c: &[f64], g: &GridFunction) -> f64 {
    let t = c[0].exp();
    t * (1.0 - t) * g.grid.domain().base.boundary_distance(&c[1..])
}

/// p-th power of the weighted Lp norm and the divergence flag.
fn weighted_lp_power(u: &GridFunction, gamma: f64, p: f64) -> (f64, f64, bool) {
    let grid = &u.grid;
    let n = grid.domain().n as f64;
    let e = n / p - gamma;
    let mut acc = KahanSum::default();
    let mut singular_nonzero = false;
    for i in 0..grid.len() {
        let c = grid.node_coords(i);
        let w = weight_base(&c, u);
        let val = u.values[i];
        if w == 0.0 && e < 0.0 {
            // weight blows up on this face; it has zero measure on the grid
            singular_nonzero |= val != 0.0;
            continue;
        }
        let term = (w.powf(e) * val).abs().powf(p);
        acc.add(grid.quadrature_weight(i) * term);
    }
    // near t = 0 the integrand behaves like t^{e p} |u|^p dt/t
    let bottom_nonzero = (0..grid.len())
        .filter(|&i| grid.axis_index(i, 0) == 0)
        .any(|i| u.values[i] != 0.0);
    let divergent = (e * p <= 0.0 && bottom_nonzero) || (e * p <= -1.0 && singular_nonzero);
    (acc.value(), e, divergent)
}

/// `(∫ |(t(1−t)dist(x,∂X))^{n/p−γ} u|^p dt/t dx)^{1/p}` on the truncated grid.
pub fn weighted_lp_norm(u: &GridFunction, params: &NormParams) -> NormReport {
    let (s, e, divergent) = weighted_lp_power(u, params.gamma, params.p);
    NormReport {
        value: s.powf(1.0 / params.p),
        weight_exponent: e,
        t_min: u.grid.domain().t_min,
        divergent,
    }
}

/// Field of the log-coordinate partial `∂^α` (α a multi-index over all axes, `|α| ≤ 2`).
pub fn derivative_field(u: &GridFunction, alpha: &[usize]) -> Result<GridFunction> {
    let order: usize = alpha.iter().sum();
    let grid = &u.grid;
    let values: Vec<f64> = match order {
        0 => u.values.clone(),
        1 => {
            let k = alpha.iter().position(|&a| a == 1).unwrap();
            (0..grid.len()).map(|i| first_difference(u, i, k).0).collect()
        }
        2 => {
            let mut axes = Vec::new();
            for (k, &a) in alpha.iter().enumerate() {
                for _ in 0..a {
                    axes.push(k);
                }
            }
            (0..grid.len())
                .map(|i| b_hessian(u, i).value[(axes[0], axes[1])])
                .collect()
        }
        _ => return Err(ConeError::Unsupported(format!("derivative order {order} > 2"))),
    };
    GridFunction::new(grid.clone(), values)
}

/// All multi-indices over `nd` axes with total order `≤ m`.
fn multi_indices(nd: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; nd]];
    if m >= 1 {
        for k in 0..nd {
            let mut a = vec![0; nd];
            a[k] = 1;
            out.push(a);
        }
    }
    if m >= 2 {
        for k in 0..nd {
            for l in k..nd {
                let mut a = vec![0; nd];
                a[k] += 1;
                a[l] += 1;
                out.push(a);
            }
        }
    }
    out
}

/// Weighted Sobolev norm: p-th root of the sum over `(t∂_t)^α ∂_x^β u`, `α + |β| ≤ m`.
pub fn weighted_sobolev_norm(u: &GridFunction, params: &NormParams) -> Result<NormReport> {
    if params.m > 2 {
        return Err(ConeError::Unsupported(format!(
            "Sobolev order m = {} (only m <= 2)",
            params.m
        )));
    }
    let mut total = 0.0;
    let mut divergent = false;
    let mut e = 0.0;
    for alpha in multi_indices(u.grid.ndim(), params.m) {
        let d = derivative_field(u, &alpha)?;
        let (s, ex, div) = weighted_lp_power(&d, params.gamma, params.p);
        total += s;
        e = ex;
        divergent |= div;
    }
    Ok(NormReport {
        value: total.powf(1.0 / params.p),
        weight_exponent: e,
        t_min: u.grid.domain().t_min,
        divergent,
    })
}

/// Hölder norm in the cone metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoelderReport {
    pub value: f64,
    pub sup: f64,
    pub seminorm: f64,
    pub rho: f64,
    pub stride: usize,
    pub pairs: u64,
}

/// `sup|u| + sup_{z≠w} |u(z) − u(w)| / d(z, w)^ρ` over grid nodes.
pub fn hoelder_norm(u: &GridFunction, rho: f64) -> Result<HoelderReport> {
    if !(rho > 0.0 && rho <= 1.0) {
        return domain(format!("Hölder exponent must lie in (0,1], got {rho}"));
    }
    let grid = &u.grid;
    let n = grid.len();
    let stride = n.div_ceil(HOELDER_PAIR_CAP).max(1);
    let nodes: Vec<usize> = (0..n).step_by(stride).collect();
    let coords: Vec<Vec<f64>> = nodes.iter().map(|&i| grid.node_coords(i)).collect();
    let mut semi: f64 = 0.0;
    let mut pairs = 0u64;
    for (ii, &i) in nodes.iter().enumerate() {
        for (jj, &j) in nodes.iter().enumerate().skip(ii + 1) {
            let d = log_distance(&coords[ii], &coords[jj]);
            let q = (u.values[i] - u.values[j]).abs() / d.powf(rho);
            semi = semi.max(q);
            pairs += 1;
        }
    }
    let sup = u.sup_abs();
    Ok(HoelderReport {
        value: sup + semi,
        sup,
        seminorm: semi,
        rho,
        stride,
        pairs,
    })
}
