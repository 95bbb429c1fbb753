//! Infimal convolution and upper ε-envelope of grid functions.
//!
//! Both are brute-force searches over grid nodes. Distances are Euclidean in
//! log coordinates `(a, x)` by default; [`DistanceMode::Literal`] measures
//! `|(e^t, x) − (e^s, y)|` instead.

use serde::Serialize;

use crate::calculus::stencil::interior_derivatives;
use crate::calculus::{GridFunction, LogGrid};
use crate::error::{ConeError, Result};
use crate::operators::PDEProblem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    #[default]
    Log,
    Literal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConvolutionOptions {
    pub distance: DistanceMode,
    /// Search every node instead of the `r(ε)` window.
    pub full_window: bool,
}

/// `r(ε) = 2·sqrt(sup|u|·ε)`: minimisers of the inf-convolution lie this close.
pub fn support_radius(sup_abs: f64, eps: f64) -> f64 {
    2.0 * (sup_abs * eps).sqrt()
}

struct Metric {
    coords: Vec<f64>,
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    mode: DistanceMode,
}

impl Metric {
    fn new(grid: &LogGrid, mode: DistanceMode) -> Self {
        let dim = grid.ndim();
        let map = |c: &mut Vec<f64>| {
            if mode == DistanceMode::Literal {
                c[0] = c[0].exp().exp();
            }
        };
        let mut coords = Vec::with_capacity(grid.len() * dim);
        for i in 0..grid.len() {
            let mut c = grid.node_coords(i);
            map(&mut c);
            coords.extend_from_slice(&c);
        }
        let mut lo = grid.lower().to_vec();
        let mut hi = grid.upper().to_vec();
        map(&mut lo);
        map(&mut hi);
        Self {
            coords,
            dim,
            lo,
            hi,
            mode,
        }
    }

    fn at(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn dist2(&self, i: usize, j: usize) -> f64 {
        self.at(i).iter().zip(self.at(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn face_distance(&self, i: usize) -> f64 {
        self.at(i)
            .iter()
            .enumerate()
            .map(|(k, &c)| (c - self.lo[k]).min(self.hi[k] - c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Calls `f(j)` for every node `j` possibly within `radius` of node `i`.
    fn for_window(&self, grid: &LogGrid, i: usize, radius: f64, full: bool, mut f: impl FnMut(usize)) {
        if full || self.mode == DistanceMode::Literal {
            (0..grid.len()).for_each(f);
            return;
        }
        let m = grid.multi_index(i);
        let d = grid.ndim();
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for k in 0..d {
            let w = (radius / grid.h(k) + 1e-9).floor() as usize;
            lo[k] = m[k].saturating_sub(w);
            hi[k] = (m[k] + w).min(grid.dims()[k] - 1);
        }
        let mut cur = lo.clone();
        loop {
            f(grid.index_of(&cur));
            let mut k = d;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                if cur[k] < hi[k] {
                    cur[k] += 1;
                    break;
                }
                cur[k] = lo[k];
            }
        }
    }
}

fn check_finite(u: &GridFunction, eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(ConeError::Domain(format!("eps must be positive, got {eps}")));
    }
    if u.values.iter().any(|v| !v.is_finite()) {
        return Err(ConeError::NonFinite("convolution input".into()));
    }
    Ok(())
}

/// `u_ε(z) = min_w u(w) + d(z,w)²/(2ε)` with the search restricted to `d ≤ r(ε)`.
pub fn inf_convolution(u: &GridFunction, eps: f64) -> Result<GridFunction> {
    inf_convolution_with(u, eps, ConvolutionOptions::default())
}

pub fn inf_convolution_with(u: &GridFunction, eps: f64, opts: ConvolutionOptions) -> Result<GridFunction> {
    check_finite(u, eps)?;
    let grid = &u.grid;
    let metric = Metric::new(grid, opts.distance);
    let r = support_radius(u.sup_abs(), eps);
    let r2 = r * r * (1.0 + 1e-12);
    let values = (0..grid.len())
        .map(|i| {
            let mut best = u.values[i];
            metric.for_window(grid, i, r, opts.full_window, |j| {
                let d2 = metric.dist2(i, j);
                if opts.full_window || d2 <= r2 {
                    let v = u.values[j] + d2 / (2.0 * eps);
                    if v < best {
                        best = v;
                    }
                }
            });
            best
        })
        .collect();
    GridFunction::new(grid.clone(), values)
}

/// Upper ε-envelope with its validity mask and maximisers.
#[derive(Clone, Debug)]
pub struct Envelope {
    pub eps: f64,
    pub distance: DistanceMode,
    /// `u^ε` at every node; only masked nodes see the full `ε`-ball.
    pub values: GridFunction,
    /// Nodes farther than `ε` from every face of the grid box.
    pub mask: Vec<bool>,
    pub argmax: Vec<usize>,
    /// `d(z, w*)` for the maximiser `w*`.
    pub offset: Vec<f64>,
}

impl Envelope {
    pub fn masked_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mask.len()).filter(move |&i| self.mask[i])
    }

    /// Largest maximiser offset over masked nodes.
    pub fn max_offset(&self) -> f64 {
        self.masked_nodes().map(|i| self.offset[i]).fold(0.0, f64::max)
    }

    /// Maximiser minus node, in log coordinates.
    pub fn offset_vector(&self, i: usize) -> Vec<f64> {
        let g = &self.values.grid;
        let z = g.node_coords(i);
        let w = g.node_coords(self.argmax[i]);
        w.iter().zip(&z).map(|(a, b)| a - b).collect()
    }
}

/// `u^ε(z) = max_{d(z,w) ≤ ε} u(w) + sqrt(ε² − d(z,w)²)`.
pub fn upper_envelope(u: &GridFunction, eps: f64) -> Result<Envelope> {
    upper_envelope_with(u, eps, DistanceMode::Log)
}

pub fn upper_envelope_with(u: &GridFunction, eps: f64, distance: DistanceMode) -> Result<Envelope> {
    check_finite(u, eps)?;
    let grid = &u.grid;
    let metric = Metric::new(grid, distance);
    let e2 = eps * eps;
    let n = grid.len();
    let mut values = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    let mut offset = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = u.values[i] + eps;
        let mut arg = i;
        let mut off = 0.0;
        metric.for_window(grid, i, eps, false, |j| {
            let d2 = metric.dist2(i, j);
            if d2 <= e2 {
                let v = u.values[j] + (e2 - d2).sqrt();
                if v > best {
                    best = v;
                    arg = j;
                    off = d2.sqrt();
                }
            }
        });
        values.push(best);
        argmax.push(arg);
        offset.push(off);
        mask.push(metric.face_distance(i) > eps);
    }
    Ok(Envelope {
        eps,
        distance,
        values: GridFunction::new(grid.clone(), values)?,
        mask,
        argmax,
        offset,
    })
}

/// `ε`, `δ` and `γ` of the semiconvexity bound `C = −ε²(ε² − (δ+2γ)²)^{−3/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeParams {
    pub eps: f64,
    pub delta: f64,
    pub gamma_env: f64,
}

impl EnvelopeParams {
    pub fn new(eps: f64, delta: f64, gamma_env: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(ConeError::Domain(format!("eps must be positive, got {eps}")));
        }
        if !(delta > 0.0 && delta < eps) {
            return Err(ConeError::Domain(format!("delta must lie in (0, eps), got {delta}")));
        }
        if !(gamma_env > 0.0 && gamma_env < (eps - delta) / 3.0) {
            return Err(ConeError::Domain(format!(
                "gamma must lie in (0, (eps - delta)/3), got {gamma_env}"
            )));
        }
        Ok(Self { eps, delta, gamma_env })
    }

    pub fn bound(&self) -> f64 {
        let e2 = self.eps * self.eps;
        let s = self.delta + 2.0 * self.gamma_env;
        -e2 * (e2 - s * s).powf(-1.5)
    }

    /// `δ` just above the realised maximiser offsets (plus `margin`), `γ` a sixth of the rest.
    pub fn for_envelope(env: &Envelope, margin: f64) -> Result<Self> {
        let delta = env.max_offset() + margin;
        if !(delta < env.eps) {
            return Err(ConeError::Precondition(format!(
                "maximiser offsets {} reach eps = {}",
                env.max_offset(),
                env.eps
            )));
        }
        Self::new(env.eps, delta.max(f64::MIN_POSITIVE), (env.eps - delta) / 6.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SemiconvexityReport {
    pub min_eigenvalue: f64,
    pub bound: f64,
    pub slack: f64,
    pub nodes: usize,
    pub pass: bool,
}

/// Smallest Hessian eigenvalue of `u^ε` over masked nodes whose stencil is masked too.
pub fn semiconvexity_check(env: &Envelope, params: EnvelopeParams, slack: f64) -> Result<SemiconvexityReport> {
    let u = &env.values;
    let g = &u.grid;
    let d = g.ndim();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut min_eig = f64::INFINITY;
    let mut nodes = 0;
    for i in g.interior_nodes() {
        if !stencil_masked(g, &env.mask, i) {
            continue;
        }
        interior_derivatives(u, i, &mut grad, &mut hess);
        let m = nalgebra::DMatrix::from_row_slice(d, d, &hess);
        let e = nalgebra::SymmetricEigen::new(m).eigenvalues.min();
        min_eig = min_eig.min(e);
        nodes += 1;
    }
    if nodes == 0 {
        return Err(ConeError::Precondition("no masked interior nodes".into()));
    }
    let bound = params.bound();
    Ok(SemiconvexityReport {
        min_eigenvalue: min_eig,
        bound,
        slack,
        nodes,
        pass: min_eig >= bound - slack,
    })
}

fn stencil_masked(g: &LogGrid, mask: &[bool], i: usize) -> bool {
    if !mask[i] {
        return false;
    }
    let d = g.ndim();
    let m = g.multi_index(i);
    // the 3^d neighbourhood
    let mut off = vec![-1isize; d];
    loop {
        let idx: Vec<usize> = m.iter().zip(&off).map(|(&a, &o)| (a as isize + o) as usize).collect();
        if !mask[g.index_of(&idx)] {
            return false;
        }
        let mut k = d;
        loop {
            if k == 0 {
                return true;
            }
            k -= 1;
            if off[k] < 1 {
                off[k] += 1;
                break;
            }
            off[k] = -1;
        }
    }
}

/// Divergence-form `div(|∇ū|_δ^{p−2}∇ū) + (n−p)|∇ū|_δ^{p−2}∂ₐū` at an interior node,
/// with fluxes on the half-integer faces.
pub fn divergence_operator(u: &GridFunction, i: usize, p: f64, n: f64, eps_reg: f64) -> f64 {
    let g = &u.grid;
    let d = g.ndim();
    let v = &u.values;
    let weight = |s: f64| {
        if p == 2.0 {
            1.0
        } else if s == 0.0 {
            0.0
        } else {
            s.powf(0.5 * (p - 2.0))
        }
    };
    let face_flux = |from: usize, k: usize| {
        // flux through the face between `from` and `from + s_k`
        let s = g.stride(k);
        let mut s2 = 0.0;
        let dk = (v[from + s] - v[from]) / g.h(k);
        s2 += dk * dk;
        for l in 0..d {
            if l == k {
                continue;
            }
            let t = g.stride(l);
            let dl = (v[from + t] - v[from - t] + v[from + s + t] - v[from + s - t]) / (4.0 * g.h(l));
            s2 += dl * dl;
        }
        weight(s2 + eps_reg * eps_reg) * dk
    };
    let mut div = 0.0;
    for k in 0..d {
        let s = g.stride(k);
        div += (face_flux(i, k) - face_flux(i - s, k)) / g.h(k);
    }
    let mut s2 = 0.0;
    let mut ga = 0.0;
    for k in 0..d {
        let s = g.stride(k);
        let dk = (v[i + s] - v[i - s]) / (2.0 * g.h(k));
        if k == 0 {
            ga = dk;
        }
        s2 += dk * dk;
    }
    div + (n - p) * weight(s2 + eps_reg * eps_reg) * ga
}

#[derive(Clone, Debug, Serialize)]
pub struct SupersolutionCheck {
    pub eps: f64,
    pub radius: f64,
    pub checked: usize,
    pub violations: usize,
    pub max_excess: f64,
    pub tol: f64,
}

/// Counts nodes where the divergence-form operator of `u_ε` exceeds
/// `(t^p f)_ε(z) = max_{d(z,w) ≤ r(ε)} t^p f(w)` by more than `tol`.
/// Only nodes whose stencil stays `r(ε)` away from the grid faces are checked.
pub fn convolution_supersolution_check(u: &GridFunction, prob: &PDEProblem, eps: f64, tol: f64) -> Result<SupersolutionCheck> {
    if u.grid.ndim() != prob.n {
        return Err(ConeError::Domain("problem and grid dimensions differ".into()));
    }
    let ue = inf_convolution(u, eps)?;
    let g = &u.grid;
    let r = support_radius(u.sup_abs(), eps);
    let metric = Metric::new(g, DistanceMode::Log);
    let tpf: Vec<f64> = (0..g.len()).map(|i| prob.forcing_log(&g.node_coords(i))).collect();
    let h = g.h_max();
    let mut checked = 0;
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    for i in g.interior_nodes() {
        if metric.face_distance(i) <= r + h {
            continue;
        }
        let mut fmax = f64::NEG_INFINITY;
        metric.for_window(g, i, r, false, |j| {
            if metric.dist2(i, j) <= r * r * (1.0 + 1e-12) {
                fmax = fmax.max(tpf[j]);
            }
        });
        let op = divergence_operator(&ue, i, prob.p, prob.n as f64, 0.0);
        let excess = op - fmax;
        max_excess = max_excess.max(excess);
        checked += 1;
        if excess > tol {
            violations += 1;
        }
    }
    Ok(SupersolutionCheck {
        eps,
        radius: r,
        checked,
        violations,
        max_excess,
        tol,
    })
}
