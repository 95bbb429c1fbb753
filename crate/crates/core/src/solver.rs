//! Damped Newton for the Dirichlet problem in log coordinates, with
//! continuation in the gradient regularisation `δ` and in `p`.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::calculus::{GridFunction, LogGrid};
use crate::error::{ConeError, Result};
use crate::field::{Field, FieldExpr};
use crate::geometry::{exhaustion, ConeDomain};
use crate::operators::{spaced_linearization, spaced_operator, PDEProblem};
use crate::sparse::{self, CsrBuilder, CsrMatrix};

/// When the drift `(n−p)∂ₐū` is discretised one-sided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UpwindMode {
    /// Upwind when `|n−p|·h_a > upwind_factor·(p−1)`.
    Auto,
    Always,
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverConfig {
    pub eps_reg_schedule: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub upwind_factor: f64,
    pub upwind: UpwindMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let mut schedule = Vec::new();
        let mut e = 0.1;
        while e > 1e-6 {
            schedule.push(e);
            e *= 0.5;
        }
        schedule.push(1e-6);
        Self {
            eps_reg_schedule: schedule,
            tol: 1e-9,
            max_iter: 200,
            damping: 0.5,
            upwind_factor: 2.0,
            upwind: UpwindMode::Auto,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.eps_reg_schedule;
        if s.is_empty() || s.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
            return Err(ConeError::Domain("eps_reg schedule must be non-empty and non-negative".into()));
        }
        if s.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(ConeError::Domain("eps_reg schedule must be strictly decreasing".into()));
        }
        if !(self.tol > 0.0) {
            return Err(ConeError::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(ConeError::Domain(format!("damping must lie in (0,1), got {}", self.damping)));
        }
        if self.max_iter == 0 {
            return Err(ConeError::Domain("max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn final_eps_reg(&self) -> f64 {
        *self.eps_reg_schedule.last().expect("validated schedule")
    }

    fn upwinds(&self, prob: &PDEProblem, h_a: f64) -> bool {
        let c = (prob.n as f64 - prob.p).abs();
        match self.upwind {
            UpwindMode::Always => c > 0.0,
            UpwindMode::Never => false,
            UpwindMode::Auto => c * h_a > self.upwind_factor * (prob.p - 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageReport {
    pub p: f64,
    pub eps_reg: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub stages: Vec<StageReport>,
    pub converged: bool,
    pub final_residual: f64,
    pub upwinded: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

struct Scheme<'a> {
    grid: &'a LogGrid,
    nodes: Vec<usize>,
    unknown: Vec<usize>,
    f_bar: Vec<f64>,
    a: Vec<f64>,
    n: f64,
    drift_sign: f64,
    upwind: bool,
    spacing: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl<'a> Scheme<'a> {
    fn new(grid: &'a LogGrid, prob: &PDEProblem, cfg: &SolverConfig) -> Self {
        let nodes: Vec<usize> = grid.interior_nodes().collect();
        let mut unknown = vec![NONE; grid.len()];
        for (k, &i) in nodes.iter().enumerate() {
            unknown[i] = k;
        }
        let mut f_bar = Vec::with_capacity(nodes.len());
        let mut a = Vec::with_capacity(nodes.len());
        for &i in &nodes {
            let y = grid.node_coords(i);
            f_bar.push(prob.f.eval(&y));
            a.push(y[0]);
        }
        Self {
            grid,
            nodes,
            unknown,
            f_bar,
            a,
            n: prob.n as f64,
            drift_sign: (prob.n as f64 - prob.p).signum(),
            upwind: cfg.upwinds(prob, grid.h(0)),
            spacing: (0..grid.ndim()).map(|k| grid.h(k)).collect(),
        }
    }

    fn forcing(&self, k: usize, p: f64) -> f64 {
        let f = self.f_bar[k];
        if f == 0.0 {
            0.0
        } else {
            f * (p * self.a[k]).exp()
        }
    }

    fn jet(&self, u: &[f64], i: usize, g: &mut [f64], h: &mut [f64]) -> f64 {
        let grid = self.grid;
        let d = grid.ndim();
        let c = u[i];
        for k in 0..d {
            let s = grid.stride(k);
            let hk = grid.h(k);
            g[k] = (u[i + s] - u[i - s]) / (2.0 * hk);
            h[k * d + k] = (u[i + s] - 2.0 * c + u[i - s]) / (hk * hk);
            for l in (k + 1)..d {
                let t = grid.stride(l);
                let v = (u[i + s + t] - u[i + s - t] - u[i - s + t] + u[i - s - t]) / (4.0 * hk * grid.h(l));
                h[k * d + l] = v;
                h[l * d + k] = v;
            }
        }
        if self.upwind {
            let s = grid.stride(0);
            let ha = grid.h(0);
            if self.drift_forward() {
                (u[i + s] - c) / ha
            } else {
                (c - u[i - s]) / ha
            }
        } else {
            g[0]
        }
    }

    fn drift_forward(&self) -> bool {
        // coefficient (n−p) > 0 looks forward
        self.drift_sign > 0.0
    }

    fn residual(&self, u: &[f64], p: f64, eps: f64, out: &mut [f64]) {
        let d = self.grid.ndim();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        for (k, &i) in self.nodes.iter().enumerate() {
            let drift = self.jet(u, i, &mut g, &mut h);
            out[k] = spaced_operator(&g, &h, drift, p, self.n, eps, &self.spacing) - self.forcing(k, p);
        }
    }

    fn jacobian(&self, u: &[f64], p: f64, eps: f64) -> CsrMatrix {
        let grid = self.grid;
        let d = grid.ndim();
        let mut g = vec![0.0; d];
        let mut h = vec![0.0; d * d];
        let mut dg = vec![0.0; d];
        let mut dh = vec![0.0; d * d];
        let mut b = CsrBuilder::new(self.nodes.len());
        for &i in &self.nodes {
            let drift = self.jet(u, i, &mut g, &mut h);
            let (_, dd) = spaced_linearization(&g, &h, drift, p, self.n, eps, &self.spacing, &mut dg, &mut dh);
            let mut push = |node: usize, v: f64| {
                let j = self.unknown[node];
                if j != NONE && v != 0.0 {
                    b.push(j, v);
                }
            };
            if self.upwind {
                let s = grid.stride(0);
                let ha = grid.h(0);
                if self.drift_forward() {
                    push(i + s, dd / ha);
                    push(i, -dd / ha);
                } else {
                    push(i, dd / ha);
                    push(i - s, -dd / ha);
                }
            } else {
                dg[0] += dd;
            }
            for k in 0..d {
                let s = grid.stride(k);
                let hk = grid.h(k);
                push(i + s, dg[k] / (2.0 * hk));
                push(i - s, -dg[k] / (2.0 * hk));
                let c = dh[k * d + k] / (hk * hk);
                push(i + s, c);
                push(i - s, c);
                push(i, -2.0 * c);
                for l in (k + 1)..d {
                    let t = grid.stride(l);
                    let c = (dh[k * d + l] + dh[l * d + k]) / (4.0 * hk * grid.h(l));
                    push(i + s + t, c);
                    push(i + s - t, -c);
                    push(i - s + t, -c);
                    push(i - s - t, c);
                }
            }
            b.finish_row();
        }
        b.build()
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

struct Newton<'a> {
    scheme: Scheme<'a>,
    cfg: &'a SolverConfig,
}

impl Newton<'_> {
    fn run(&self, u: &mut [f64], p: f64, eps: f64, tol: f64) -> Result<StageReport> {
        let s = &self.scheme;
        let m = s.nodes.len();
        let mut r = vec![0.0; m];
        s.residual(u, p, eps, &mut r);
        let mut rn = max_abs(&r);
        if !rn.is_finite() {
            return Err(ConeError::NonFinite(format!("residual at p = {p}, eps_reg = {eps}")));
        }
        let mut trial = u.to_vec();
        let mut rt = vec![0.0; m];
        let mut iterations = 0;
        while rn > tol && iterations < self.cfg.max_iter {
            let jac = s.jacobian(u, p, eps);
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let dx = match sparse::solve(&jac, &rhs) {
                Ok(dx) => dx,
                Err(ConeError::Singular(_)) => break,
                Err(e) => return Err(e),
            };
            iterations += 1;
            let mut lam = 1.0;
            let mut accepted = false;
            while lam >= 1e-8 {
                trial.copy_from_slice(u);
                for (k, &i) in s.nodes.iter().enumerate() {
                    trial[i] += lam * dx[k];
                }
                s.residual(&trial, p, eps, &mut rt);
                let rtn = max_abs(&rt);
                if rtn.is_finite() && rtn < (1.0 - 1e-4 * lam) * rn {
                    u.copy_from_slice(&trial);
                    std::mem::swap(&mut r, &mut rt);
                    rn = rtn;
                    accepted = true;
                    break;
                }
                lam *= self.cfg.damping;
            }
            if !accepted {
                break;
            }
        }
        Ok(StageReport {
            p,
            eps_reg: eps,
            iterations,
            residual: rn,
        })
    }
}

/// Boundary data on the boundary nodes and zero inside.
fn initial_values(prob: &PDEProblem, grid: &LogGrid) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            if grid.is_boundary(i) {
                prob.dirichlet.eval(&grid.node_coords(i))
            } else {
                0.0
            }
        })
        .collect()
}

fn check_problem(prob: &PDEProblem, grid: &LogGrid) -> Result<()> {
    if grid.ndim() != prob.n {
        return Err(ConeError::Domain(format!(
            "problem has n = {} but the grid has dimension {}",
            prob.n,
            grid.ndim()
        )));
    }
    Ok(())
}

/// Solves the Dirichlet problem on every interior node of `grid`; boundary
/// nodes carry `prob.dirichlet`, including the artificial `t_min` face.
pub fn solve_dirichlet(prob: &PDEProblem, grid: Arc<LogGrid>, cfg: &SolverConfig) -> Result<(GridFunction, SolveReport)> {
    let start = Instant::now();
    cfg.validate()?;
    check_problem(prob, &grid)?;
    let mut u = initial_values(prob, &grid);
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(ConeError::NonFinite(format!("boundary data at node {i}")));
    }
    let newton = Newton {
        scheme: Scheme::new(&grid, prob, cfg),
        cfg,
    };
    let mut stages = Vec::new();
    let last = cfg.final_eps_reg();
    let loose = (1e3 * cfg.tol).max(1e-8);
    if prob.p != 2.0 {
        // warm start from the linear problem, then continuation in p
        stages.push(newton.run(&mut u, 2.0, last, loose)?);
        let mut q = 2.5;
        while prob.p > 3.0 && q < prob.p - 1e-12 {
            stages.push(newton.run(&mut u, q, cfg.eps_reg_schedule[0], loose)?);
            q += 0.5;
        }
        let k = cfg.eps_reg_schedule.len();
        for (j, &eps) in cfg.eps_reg_schedule.iter().enumerate() {
            let tol = if j + 1 == k { cfg.tol } else { loose };
            stages.push(newton.run(&mut u, prob.p, eps, tol)?);
        }
    } else {
        // the weight |g|_δ^{p−2} is identically 1, so only the last δ matters
        stages.push(newton.run(&mut u, 2.0, last, cfg.tol)?);
    }
    let final_residual = stages.last().map(|s| s.residual).unwrap_or(0.0);
    let report = SolveReport {
        converged: final_residual <= cfg.tol,
        final_residual,
        upwinded: newton.scheme.upwind,
        stages,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((GridFunction::new(grid, u)?, report))
}

/// Max-norm of the scheme residual the solver drives to zero.
pub fn discrete_residual(u: &GridFunction, prob: &PDEProblem, eps_reg: f64, cfg: &SolverConfig) -> Result<f64> {
    check_problem(prob, &u.grid)?;
    let s = Scheme::new(&u.grid, prob, cfg);
    let mut r = vec![0.0; s.nodes.len()];
    s.residual(&u.values, prob.p, eps_reg, &mut r);
    Ok(max_abs(&r))
}

/// The problem whose exact solution is `u_star`: `f` is its residual, the data is `u_star` itself.
pub fn manufactured_problem(u_star: &FieldExpr, p: f64, n: usize, grid: &LogGrid) -> Result<PDEProblem> {
    if u_star.dim != n || grid.ndim() != n {
        return Err(ConeError::Domain("manufactured solution, n and grid disagree in dimension".into()));
    }
    let f = if u_star.terms.is_empty() {
        Field::zero(n)
    } else {
        Field::Manufactured {
            u_star: u_star.clone(),
            p,
        }
    };
    PDEProblem::new(p, n, f, Field::Expr(u_star.clone()), 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub nodes: usize,
    pub max_error: f64,
    /// `log₂(e_{2h}/e_h)`; absent on the first row or when either error vanishes.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,nodes,max_error,order\n");
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:.6}")).unwrap_or_default();
            let _ = writeln!(s, "{:.10e},{},{:.10e},{}", r.h, r.nodes, r.max_error, order);
        }
        s
    }

    pub fn last_order(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.order)
    }
}

/// Max-norm errors against `exact` on each grid; grids are expected to halve `h`.
pub fn convergence_study(
    prob: &PDEProblem,
    exact: &Field,
    grids: &[Arc<LogGrid>],
    cfg: &SolverConfig,
) -> Result<ConvergenceTable> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for g in grids {
        let (u, rep) = solve_dirichlet(prob, g.clone(), cfg)?;
        if !rep.converged {
            return Err(ConeError::NonConvergence(format!(
                "convergence study grid {:?}: residual {:e}",
                g.dims(),
                rep.final_residual
            )));
        }
        let err = (0..g.len())
            .map(|i| (u.values[i] - exact.eval(&g.node_coords(i))).abs())
            .fold(0.0, f64::max);
        let order = rows.last().and_then(|prev| {
            let tiny = 1e-13;
            (prev.max_error > tiny && err > tiny).then(|| (prev.max_error / err).log2() / (prev.h / g.h_max()).log2())
        });
        rows.push(ConvergenceRow {
            h: g.h_max(),
            nodes: g.len(),
            max_error: err,
            order,
        });
    }
    Ok(ConvergenceTable { rows })
}

#[derive(Clone, Debug)]
pub struct ExhaustionStage {
    pub j: usize,
    pub domain: ConeDomain,
    pub solution: GridFunction,
    pub report: SolveReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustionDifference {
    pub j: usize,
    /// `sup_{H_{j−1}} |u_j − u_{j−1}|` over the nodes of the `H_{j−1}` grid.
    pub sup_difference: f64,
}

#[derive(Clone, Debug)]
pub struct ExhaustionReport {
    pub stages: Vec<ExhaustionStage>,
    pub differences: Vec<ExhaustionDifference>,
    pub monotone: bool,
}

/// Grid on a domain with spacing close to `1/nodes_per_unit` on every axis.
pub fn grid_with_density(domain: ConeDomain, nodes_per_unit: usize) -> Result<LogGrid> {
    let count = |len: f64| ((len * nodes_per_unit as f64).ceil() as usize + 1).max(3);
    let a = count(domain.a_max() - domain.a_min());
    let xs: Vec<usize> = domain.base.sides().iter().map(|&l| count(l)).collect();
    LogGrid::new(domain, a, &xs)
}

/// Solves the zero-data problem on `H_1, …, H_{j_max}` and compares
/// consecutive solutions on the smaller set.
pub fn solve_by_exhaustion(
    prob: &PDEProblem,
    domain: &ConeDomain,
    j_max: usize,
    nodes_per_unit: usize,
    cfg: &SolverConfig,
) -> Result<ExhaustionReport> {
    if j_max < 2 {
        return Err(ConeError::Domain(format!("exhaustion needs j_max >= 2, got {j_max}")));
    }
    let zero_data = PDEProblem {
        dirichlet: Field::zero(prob.n),
        ..prob.clone()
    };
    let mut stages: Vec<ExhaustionStage> = Vec::new();
    let mut differences = Vec::new();
    for j in 1..=j_max {
        let wrap = |e: ConeError| ConeError::Stage {
            stage: j,
            source: Box::new(e),
        };
        let hj = exhaustion(domain, j).map_err(wrap)?;
        let grid = Arc::new(grid_with_density(hj.clone(), nodes_per_unit).map_err(wrap)?);
        let (u, report) = solve_dirichlet(&zero_data, grid, cfg).map_err(wrap)?;
        if !report.converged {
            return Err(wrap(ConeError::NonConvergence(format!(
                "residual {:e} above tol {:e}",
                report.final_residual, cfg.tol
            ))));
        }
        if let Some(prev) = stages.last() {
            let pg = &prev.solution.grid;
            let mut sup = 0.0f64;
            for i in 0..pg.len() {
                let y = pg.node_coords(i);
                let v = u.interpolate(&y).ok_or_else(|| wrap(ConeError::Domain("H_{j-1} is not inside H_j".into())))?;
                sup = sup.max((v - prev.solution.values[i]).abs());
            }
            differences.push(ExhaustionDifference { j, sup_difference: sup });
        }
        stages.push(ExhaustionStage {
            j,
            domain: hj,
            solution: u,
            report,
        });
    }
    let monotone = differences.windows(2).all(|w| w[1].sup_difference <= w[0].sup_difference);
    Ok(ExhaustionReport {
        stages,
        differences,
        monotone,
    })
}
