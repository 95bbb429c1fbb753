//! Pointwise residuals of the cone p-Laplace operator, Pucci extremal
//! operators and the exponential change of unknown `v = ψ(z)`.
//!
//! In log coordinates `y = (a, x)` the operator reads
//! `|∇ū|^{p−2} tr(Q ∇²ū) + (n−p)|∇ū|^{p−2} ∂ₐū − t^p f`, and the `(t, x)`
//! form is that expression times `t^{−p}`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::calculus::stencil::interior_derivatives;
use crate::calculus::{GridFunction, LogGrid};
use crate::error::{ConeError, Result};
use crate::field::Field;

/// The Dirichlet problem data. `f` and `dirichlet` are functions of `(a, x)`.
#[derive(Clone, Debug)]
pub struct PDEProblem {
    pub p: f64,
    pub n: usize,
    pub f: Field,
    pub dirichlet: Field,
    /// Asserted lower bound for `t^p f`, used by the comparison harness.
    pub omega: f64,
}

impl PDEProblem {
    pub fn new(p: f64, n: usize, f: Field, dirichlet: Field, omega: f64) -> Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(ConeError::Domain(format!("p must be at least 2, got {p}")));
        }
        if n < 2 {
            return Err(ConeError::Domain(format!("n must be at least 2, got {n}")));
        }
        if !(omega >= 0.0) {
            return Err(ConeError::Domain(format!("omega must be non-negative, got {omega}")));
        }
        Ok(Self {
            p,
            n,
            f,
            dirichlet,
            omega,
        })
    }

    /// Homogeneous problem `f ≡ 0` with the given boundary data.
    pub fn homogeneous(p: f64, n: usize, dirichlet: Field) -> Result<Self> {
        Self::new(p, n, Field::zero(n), dirichlet, 0.0)
    }

    /// `t^p f` at `y`, the forcing of the log form.
    pub fn forcing_log(&self, y: &[f64]) -> f64 {
        let f = self.f.eval(y);
        if f == 0.0 {
            0.0
        } else {
            f * (self.p * y[0]).exp()
        }
    }

    /// Checks `t^p f ≥ omega` at every node of `grid`.
    pub fn validate_omega(&self, grid: &LogGrid) -> Result<()> {
        if self.omega <= 0.0 {
            return Ok(());
        }
        for idx in 0..grid.len() {
            let y = grid.node_coords(idx);
            let v = self.forcing_log(&y);
            if !(v >= self.omega * (1.0 - 1e-12)) {
                return Err(ConeError::Precondition(format!(
                    "t^p f = {v} below omega = {} at {y:?}",
                    self.omega
                )));
            }
        }
        Ok(())
    }

    fn check_grid(&self, grid: &LogGrid) -> Result<()> {
        if grid.ndim() != self.n {
            return Err(ConeError::Domain(format!(
                "problem has n = {} but the grid has dimension {}",
                self.n,
                grid.ndim()
            )));
        }
        Ok(())
    }
}

/// Ellipticity constants of the Pucci operators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PucciParams {
    pub lambda: f64,
    pub big_lambda: f64,
}

impl PucciParams {
    pub fn new(lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= big_lambda) {
            return Err(ConeError::Domain(format!(
                "need 0 < lambda <= Lambda, got {lambda}, {big_lambda}"
            )));
        }
        Ok(Self { lambda, big_lambda })
    }

    /// `λ = 1`, `Λ = p − 1`.
    pub fn for_p(p: f64) -> Result<Self> {
        if !(p >= 2.0) {
            return Err(ConeError::Domain(format!("p must be at least 2, got {p}")));
        }
        Self::new(1.0, p - 1.0)
    }
}

/// Scale of `ψ(s) = K(1 − e^{−s})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformParams {
    pub k: f64,
    pub m: f64,
}

impl TransformParams {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(ConeError::Domain(format!("K must be positive, got {k}")));
        }
        Ok(Self { k, m: k / 2.0 })
    }

    /// `K = 2M` for a field bounded by `M`.
    pub fn from_bound(m: f64) -> Result<Self> {
        Self::new(2.0 * m)
    }

    /// `K = 2·sup|u|`.
    pub fn for_field(u: &GridFunction) -> Result<Self> {
        Self::from_bound(u.sup_abs())
    }
}

/// `Q = I + (p−2) g gᵀ/|g|²`.
pub fn q_matrix(grad: &[f64], p: f64) -> Result<DMatrix<f64>> {
    let s: f64 = grad.iter().map(|g| g * g).sum();
    if s == 0.0 {
        return Err(ConeError::Singular("Q is undefined at a zero gradient".into()));
    }
    let d = grad.len();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id + (p - 2.0) * grad[i] * grad[j] / s
    }))
}

fn symmetric_eigenvalues(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !x.is_square() {
        return Err(ConeError::Domain("Pucci operator needs a square matrix".into()));
    }
    let scale = x.amax().max(1.0);
    let asym = (x - x.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(ConeError::Domain(format!("matrix is not symmetric (defect {asym:e})")));
    }
    let sym = (x + x.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.iter().copied().collect())
}

/// `M⁺(X) = Λ Σ_{e>0} e + λ Σ_{e<0} e`.
pub fn pucci_plus(x: &DMatrix<f64>, params: PucciParams) -> Result<f64> {
    Ok(symmetric_eigenvalues(x)?
        .iter()
        .map(|&e| if e > 0.0 { params.big_lambda * e } else { params.lambda * e })
        .sum())
}

/// `M⁻(X) = λ Σ_{e>0} e + Λ Σ_{e<0} e`.
pub fn pucci_minus(x: &DMatrix<f64>, params: PucciParams) -> Result<f64> {
    Ok(symmetric_eigenvalues(x)?
        .iter()
        .map(|&e| if e > 0.0 { params.lambda * e } else { params.big_lambda * e })
        .sum())
}

/// Weight `|g|_δ^{p−2}`; zero at a degenerate point when `p > 2`.
fn weight(s: f64, p: f64) -> f64 {
    if p == 2.0 {
        1.0
    } else if s == 0.0 {
        0.0
    } else {
        s.powf(0.5 * (p - 2.0))
    }
}

fn quad_form(g: &[f64], h: &[f64]) -> f64 {
    let d = g.len();
    let mut q = 0.0;
    for k in 0..d {
        for l in 0..d {
            q += g[k] * h[k * d + l] * g[l];
        }
    }
    q
}

fn trace(h: &[f64], d: usize) -> f64 {
    (0..d).map(|k| h[k * d + k]).sum()
}

/// `|g|_δ^{p−2} tr(Q_δ H) + (n−p)|g|_δ^{p−2} g_a` with `H` row-major.
pub fn log_operator(g: &[f64], h: &[f64], p: f64, n: f64, eps_reg: f64) -> f64 {
    operator_with_drift(g, h, g[0], p, n, eps_reg)
}

/// As [`log_operator`] but with an explicitly supplied drift derivative `∂ₐū`.
pub fn operator_with_drift(g: &[f64], h: &[f64], drift: f64, p: f64, n: f64, eps_reg: f64) -> f64 {
    spaced_operator(g, h, drift, p, n, eps_reg, &[])
}

/// Squared gradient seen by the weight. With `spacing` non-empty this is the
/// mean of the squared one-sided differences, `|g|² + Σ_k (h_k H_kk / 2)²`,
/// so a node standing above its neighbours cannot hide behind a vanishing
/// central gradient.
fn weight_norm(g: &[f64], h: &[f64], spacing: &[f64], eps_reg: f64) -> f64 {
    let d = g.len();
    let mut s: f64 = g.iter().map(|v| v * v).sum::<f64>() + eps_reg * eps_reg;
    for (k, hk) in spacing.iter().enumerate() {
        let v = 0.5 * hk * h[k * d + k];
        s += v * v;
    }
    s
}

/// [`operator_with_drift`] with the weight norm of [`weight_norm`]; an empty
/// `spacing` gives the plain operator.
pub fn spaced_operator(g: &[f64], h: &[f64], drift: f64, p: f64, n: f64, eps_reg: f64, spacing: &[f64]) -> f64 {
    let d = g.len();
    let s = weight_norm(g, h, spacing, eps_reg);
    let w = weight(s, p);
    if w == 0.0 {
        return 0.0;
    }
    let mut a = trace(h, d);
    if p != 2.0 {
        a += (p - 2.0) * quad_form(g, h) / s;
    }
    w * (a + (n - p) * drift)
}

/// Value of [`operator_with_drift`] together with its partial derivatives in
/// `g` (into `dg`), in `H` (row-major into `dh`); returns `(value, ∂/∂drift)`.
#[allow(clippy::too_many_arguments)]
pub fn operator_linearization(
    g: &[f64],
    h: &[f64],
    drift: f64,
    p: f64,
    n: f64,
    eps_reg: f64,
    dg: &mut [f64],
    dh: &mut [f64],
) -> (f64, f64) {
    spaced_linearization(g, h, drift, p, n, eps_reg, &[], dg, dh)
}

/// Linearization of [`spaced_operator`].
#[allow(clippy::too_many_arguments)]
pub fn spaced_linearization(
    g: &[f64],
    h: &[f64],
    drift: f64,
    p: f64,
    n: f64,
    eps_reg: f64,
    spacing: &[f64],
    dg: &mut [f64],
    dh: &mut [f64],
) -> (f64, f64) {
    let d = g.len();
    let s = weight_norm(g, h, spacing, eps_reg);
    let w = weight(s, p);
    dg.iter_mut().for_each(|v| *v = 0.0);
    dh.iter_mut().for_each(|v| *v = 0.0);
    if w == 0.0 {
        return (0.0, 0.0);
    }
    let ghg = if p != 2.0 { quad_form(g, h) } else { 0.0 };
    let a = trace(h, d) + if p != 2.0 { (p - 2.0) * ghg / s } else { 0.0 };
    let c = n - p;
    let value = w * (a + c * drift);
    for k in 0..d {
        for l in 0..d {
            let id = if k == l { 1.0 } else { 0.0 };
            dh[k * d + l] = w * (id + if p != 2.0 { (p - 2.0) * g[k] * g[l] / s } else { 0.0 });
        }
    }
    if p != 2.0 {
        // everything that moves with s
        let dvds = 0.5 * (p - 2.0) * w / s * (a + c * drift) - w * (p - 2.0) * ghg / (s * s);
        for k in 0..d {
            let hg: f64 = (0..d).map(|l| h[k * d + l] * g[l]).sum();
            dg[k] = dvds * 2.0 * g[k] + w * (p - 2.0) * 2.0 * hg / s;
        }
        for (k, hk) in spacing.iter().enumerate() {
            dh[k * d + k] += dvds * 0.5 * hk * hk * h[k * d + k];
        }
    }
    (value, w * c)
}

/// Pointwise `(t, x)`-form residual from a jet `(∇ū, ∇²ū)` at log point `y`.
pub fn full_residual_at(prob: &PDEProblem, y: &[f64], g: &[f64], h: &[f64], eps_reg: f64) -> f64 {
    let op = log_operator(g, h, prob.p, prob.n as f64, eps_reg);
    (-prob.p * y[0]).exp() * op - prob.f.eval(y)
}

/// Pointwise log-form residual from a jet.
pub fn log_residual_at(prob: &PDEProblem, y: &[f64], g: &[f64], h: &[f64], eps_reg: f64) -> f64 {
    log_operator(g, h, prob.p, prob.n as f64, eps_reg) - prob.forcing_log(y)
}

/// Pointwise transformed residual for `v = ψ(z)` from a jet of `z`.
pub fn transformed_residual_at(
    prob: &PDEProblem,
    params: TransformParams,
    y: &[f64],
    z: f64,
    g: &[f64],
    h: &[f64],
    eps_reg: f64,
) -> f64 {
    let p = prob.p;
    let s: f64 = g.iter().map(|v| v * v).sum::<f64>() + eps_reg * eps_reg;
    let op = log_operator(g, h, p, prob.n as f64, eps_reg);
    let grad_p = if s == 0.0 { 0.0 } else { s.powf(0.5 * p) };
    let forcing = prob.forcing_log(y);
    let source = if forcing == 0.0 {
        0.0
    } else {
        forcing * (z * (p - 1.0)).exp() / params.k.powf(p - 1.0)
    };
    op - (p - 1.0) * grad_p - source
}

fn jet(u: &GridFunction, node: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let grid = &u.grid;
    if node >= grid.len() || grid.is_boundary(node) {
        return Err(ConeError::Precondition(format!("node {node} is not an interior node")));
    }
    let d = grid.ndim();
    let mut g = vec![0.0; d];
    let mut h = vec![0.0; d * d];
    interior_derivatives(u, node, &mut g, &mut h);
    Ok((grid.node_coords(node), g, h))
}

/// Node spacings, which the solver folds into the weight norm.
fn spacing(u: &GridFunction) -> Vec<f64> {
    (0..u.grid.ndim()).map(|k| u.grid.h(k)).collect()
}

/// `t^{−p}|∇_𝔹u|_δ^{p−2}(tr(Q_δ∇²_𝔹u) + (n−p) t∂_t u) − f` at an interior node.
pub fn residual_full(u: &GridFunction, node: usize, prob: &PDEProblem, eps_reg: f64) -> Result<f64> {
    prob.check_grid(&u.grid)?;
    let (y, g, h) = jet(u, node)?;
    let op = spaced_operator(&g, &h, g[0], prob.p, prob.n as f64, eps_reg, &spacing(u));
    Ok((-prob.p * y[0]).exp() * op - prob.f.eval(&y))
}

/// `|∇ū|_δ^{p−2}(tr(Q_δ∇²ū) + (n−p)∂ₐū) − t^p f` at an interior node.
pub fn residual_log(u: &GridFunction, node: usize, prob: &PDEProblem, eps_reg: f64) -> Result<f64> {
    prob.check_grid(&u.grid)?;
    let (y, g, h) = jet(u, node)?;
    let op = spaced_operator(&g, &h, g[0], prob.p, prob.n as f64, eps_reg, &spacing(u));
    Ok(op - prob.forcing_log(&y))
}

fn pucci_residual(u: &GridFunction, node: usize, prob: &PDEProblem, eps_reg: f64, upper: bool) -> Result<f64> {
    prob.check_grid(&u.grid)?;
    let (y, g, h) = jet(u, node)?;
    let d = g.len();
    let w = weight(weight_norm(&g, &h, &spacing(u), eps_reg), prob.p);
    let params = PucciParams::for_p(prob.p)?;
    let hm = DMatrix::from_row_slice(d, d, &h);
    let m = if upper {
        pucci_plus(&hm, params)?
    } else {
        pucci_minus(&hm, params)?
    };
    let op = w * (m + (prob.n as f64 - prob.p) * g[0]);
    Ok((-prob.p * y[0]).exp() * op - prob.f.eval(&y))
}

/// [`residual_full`] with `tr(Q∇²u)` replaced by `M⁻(∇²u)`.
pub fn pucci_lower_residual(u: &GridFunction, node: usize, prob: &PDEProblem, eps_reg: f64) -> Result<f64> {
    pucci_residual(u, node, prob, eps_reg, false)
}

/// [`residual_full`] with `tr(Q∇²u)` replaced by `M⁺(∇²u)`.
pub fn pucci_upper_residual(u: &GridFunction, node: usize, prob: &PDEProblem, eps_reg: f64) -> Result<f64> {
    pucci_residual(u, node, prob, eps_reg, true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointClass {
    SubsolutionConsistent,
    SupersolutionConsistent,
    SolutionConsistent,
    Inconsistent,
}

/// Smooth-point test of the necessary conditions for sub/supersolutions.
pub fn classify_point(u: &GridFunction, node: usize, prob: &PDEProblem, eps_reg: f64, tol: f64) -> Result<PointClass> {
    let super_ok = pucci_lower_residual(u, node, prob, eps_reg)? <= tol;
    let sub_ok = pucci_upper_residual(u, node, prob, eps_reg)? >= -tol;
    Ok(match (sub_ok, super_ok) {
        (true, true) => PointClass::SolutionConsistent,
        (true, false) => PointClass::SubsolutionConsistent,
        (false, true) => PointClass::SupersolutionConsistent,
        (false, false) => PointClass::Inconsistent,
    })
}

/// `ψ(s) = K(1 − e^{−s})`.
pub fn psi(s: f64, params: TransformParams) -> f64 {
    -params.k * (-s).exp_m1()
}

/// `ψ′(s) = K e^{−s}`.
pub fn psi_prime(s: f64, params: TransformParams) -> f64 {
    params.k * (-s).exp()
}

/// `ψ⁻¹(v) = −ln(1 − v/K)` for `v < K`.
pub fn psi_inverse(v: f64, params: TransformParams) -> Result<f64> {
    if !(v < params.k) {
        return Err(ConeError::Domain(format!("psi_inverse needs v < K = {}, got {v}", params.k)));
    }
    Ok(-(-v / params.k).ln_1p())
}

/// `|∇z|_δ^{p−2}(tr(Q_δ∇²z) + (n−p)∂ₐz) − (p−1)|∇z|_δ^p − t^p f e^{z(p−1)}/K^{p−1}`.
pub fn transformed_residual(
    z: &GridFunction,
    node: usize,
    prob: &PDEProblem,
    params: TransformParams,
    eps_reg: f64,
) -> Result<f64> {
    prob.check_grid(&z.grid)?;
    let (y, g, h) = jet(z, node)?;
    Ok(transformed_residual_at(prob, params, &y, z.values[node], &g, &h, eps_reg))
}
