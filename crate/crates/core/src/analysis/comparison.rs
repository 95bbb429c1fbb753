//! Comparison of sub/supersolution pairs and the doubling-of-variables diagnostic.

use std::sync::Arc;

use serde::Serialize;

use crate::calculus::{GridFunction, LogGrid};
use crate::error::{ConeError, Result};
use crate::field::{Field, FieldExpr};
use crate::geometry::log_distance;
use crate::operators::PDEProblem;
use crate::solver::{solve_dirichlet, SolverConfig};

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub tol: f64,
    pub checked: usize,
    /// Interior nodes with `u > v + tol`.
    pub violations: usize,
    /// Largest `u − v` over interior nodes.
    pub worst_gap: f64,
    pub worst_node: Option<usize>,
    pub worst_coords: Option<Vec<f64>>,
}

/// Counts interior nodes where `u > v + tol`, after checking `t^p f ≥ ω > 0`
/// and `u ≤ v + tol` on every boundary node, the artificial face included.
pub fn comparison_check(u: &GridFunction, v: &GridFunction, prob: &PDEProblem, tol: f64) -> Result<ComparisonReport> {
    if u.grid != v.grid {
        return Err(ConeError::Precondition("u and v live on different grids".into()));
    }
    if !(prob.omega > 0.0) {
        return Err(ConeError::Precondition("comparison needs a positive lower bound omega for t^p f".into()));
    }
    let g = &u.grid;
    prob.validate_omega(g)?;
    let bad: Vec<usize> = g.boundary_nodes().filter(|&i| u.values[i] > v.values[i] + tol).collect();
    if !bad.is_empty() {
        let shown: Vec<String> = bad.iter().take(10).map(|i| i.to_string()).collect();
        return Err(ConeError::Precondition(format!(
            "u > v + tol on {} boundary nodes: {}{}",
            bad.len(),
            shown.join(", "),
            if bad.len() > 10 { ", …" } else { "" }
        )));
    }
    let mut violations = 0;
    let mut checked = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_node = None;
    for i in g.interior_nodes() {
        checked += 1;
        let gap = u.values[i] - v.values[i];
        if gap > tol {
            violations += 1;
        }
        if gap > worst_gap {
            worst_gap = gap;
            worst_node = Some(i);
        }
    }
    Ok(ComparisonReport {
        tol,
        checked,
        violations,
        worst_gap: if checked > 0 { worst_gap } else { 0.0 },
        worst_node,
        worst_coords: worst_node.map(|i| g.node_coords(i)),
    })
}

/// How the discrete solution responds to increasing the forcing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingOrder {
    LargerForcingSmallerSolution,
    LargerForcingLargerSolution,
}

impl ForcingOrder {
    /// Orders two solutions as `(lower, upper)` given `f_a ≥ f_b`.
    pub fn order<T>(self, sol_a: T, sol_b: T) -> (T, T) {
        match self {
            ForcingOrder::LargerForcingSmallerSolution => (sol_a, sol_b),
            ForcingOrder::LargerForcingLargerSolution => (sol_b, sol_a),
        }
    }
}

/// Solves `t^p f = ω` and `t^p f = 2ω` with zero data and compares the results.
pub fn calibrate_forcing_order(p: f64, grid: Arc<LogGrid>, omega: f64, cfg: &SolverConfig) -> Result<ForcingOrder> {
    if !(omega > 0.0) {
        return Err(ConeError::Domain("calibration needs omega > 0".into()));
    }
    let n = grid.ndim();
    let mut rates = vec![0.0; n];
    rates[0] = -p;
    let solve = |c: f64| -> Result<GridFunction> {
        let f = Field::Expr(FieldExpr::exponential(n, c, &rates));
        let prob = PDEProblem::new(p, n, f, Field::zero(n), 0.0)?;
        let (u, rep) = solve_dirichlet(&prob, grid.clone(), cfg)?;
        if !rep.converged {
            return Err(ConeError::NonConvergence(format!("calibration solve at t^p f = {c}")));
        }
        Ok(u)
    };
    let lo = solve(omega)?;
    let hi = solve(2.0 * omega)?;
    let diff: f64 = grid.interior_nodes().map(|i| hi.values[i] - lo.values[i]).sum();
    if diff == 0.0 {
        return Err(ConeError::Singular("solutions do not depend on the forcing".into()));
    }
    Ok(if diff < 0.0 {
        ForcingOrder::LargerForcingSmallerSolution
    } else {
        ForcingOrder::LargerForcingLargerSolution
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoublingMode {
    /// Only pairs within `2 sqrt(2·range/α)` of each other, which contains every maximiser.
    Windowed,
    /// Every node pair.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingDiagnostic {
    pub alpha: f64,
    /// `max z1(z) − z2(w) − (α/2) d(z, w)²`.
    pub m_alpha: f64,
    pub argmax: (usize, usize),
    pub penalty: f64,
    /// `d(z, w)` at the maximiser.
    pub diagonal_gap: f64,
}

fn diagonal_sup(z1: &GridFunction, z2: &GridFunction) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..z1.values.len() {
        let d = z1.values[i] - z2.values[i];
        if d > best.0 {
            best = (d, i);
        }
    }
    best
}

/// Ties go to the lexicographically smallest `(z, w)` node pair.
pub fn doubling_diagnostic(
    z1: &GridFunction,
    z2: &GridFunction,
    alphas: &[f64],
    mode: DoublingMode,
) -> Result<Vec<DoublingDiagnostic>> {
    if z1.grid != z2.grid {
        return Err(ConeError::Precondition("z1 and z2 live on different grids".into()));
    }
    if let Some(a) = alphas.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(ConeError::Domain(format!("alpha must be positive, got {a}")));
    }
    let g = &z1.grid;
    let nd = g.ndim();
    let coords: Vec<Vec<f64>> = (0..g.len()).map(|i| g.node_coords(i)).collect();
    let (diag, _) = diagonal_sup(z1, z2);
    let range = (z1.max() - z2.min() - diag).max(0.0);
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut best = (f64::NEG_INFINITY, (0, 0));
        let mut consider = |i: usize, j: usize| {
            let d2: f64 = (0..nd).map(|k| (coords[i][k] - coords[j][k]).powi(2)).sum();
            let m = z1.values[i] - z2.values[j] - 0.5 * alpha * d2;
            if m > best.0 {
                best = (m, (i, j));
            }
        };
        match mode {
            DoublingMode::Full => {
                for i in 0..g.len() {
                    for j in 0..g.len() {
                        consider(i, j);
                    }
                }
            }
            DoublingMode::Windowed => {
                let r = 2.0 * (2.0 * range / alpha).sqrt();
                let reach: Vec<usize> = (0..nd).map(|k| (r / g.h(k) + 1e-9).floor() as usize).collect();
                let mut lo = vec![0; nd];
                let mut hi = vec![0; nd];
                let mut m = vec![0; nd];
                for i in 0..g.len() {
                    let mi = g.multi_index(i);
                    for k in 0..nd {
                        lo[k] = mi[k].saturating_sub(reach[k]);
                        hi[k] = (mi[k] + reach[k]).min(g.dims()[k] - 1);
                    }
                    m.copy_from_slice(&lo);
                    // row-major odometer, so j increases monotonically
                    'pairs: loop {
                        consider(i, g.index_of(&m));
                        for k in (0..nd).rev() {
                            if m[k] < hi[k] {
                                m[k] += 1;
                                continue 'pairs;
                            }
                            m[k] = lo[k];
                        }
                        break;
                    }
                }
            }
        }
        let (m_alpha, (i, j)) = best;
        let gap = log_distance(&coords[i], &coords[j]);
        out.push(DoublingDiagnostic {
            alpha,
            m_alpha,
            argmax: (i, j),
            penalty: 0.5 * alpha * gap * gap,
            diagonal_gap: gap,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct DoublingReport {
    pub rows: Vec<DoublingDiagnostic>,
    /// `sup (z1 − z2)` over nodes.
    pub diagonal_sup: f64,
    pub diagonal_node: usize,
    /// `M_α` nonincreasing and `≥` the diagonal sup along the sweep.
    pub monotone: bool,
    /// Richardson extrapolation `(α₂M₂ − α₁M₁)/(α₂ − α₁)` from the last two `α`.
    pub m_infinity: Option<f64>,
    /// `|M_∞ − diagonal sup| / max(|diagonal sup|, 1e-300)`.
    pub relative_error: Option<f64>,
}

pub fn doubling_report(
    z1: &GridFunction,
    z2: &GridFunction,
    alphas: &[f64],
    mode: DoublingMode,
) -> Result<DoublingReport> {
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = doubling_diagnostic(z1, z2, &sorted, mode)?;
    let (diag, node) = diagonal_sup(z1, z2);
    let slack = 1e-12 * (1.0 + diag.abs());
    let monotone = rows.windows(2).all(|w| w[1].m_alpha <= w[0].m_alpha + slack)
        && rows.iter().all(|r| r.m_alpha >= diag - slack);
    let m_infinity = match rows.as_slice() {
        [.., a, b] if b.alpha > a.alpha => Some((b.alpha * b.m_alpha - a.alpha * a.m_alpha) / (b.alpha - a.alpha)),
        _ => None,
    };
    Ok(DoublingReport {
        rows,
        diagonal_sup: diag,
        diagonal_node: node,
        monotone,
        relative_error: m_infinity.map(|m| (m - diag).abs() / diag.abs().max(1e-300)),
        m_infinity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConeDomain;

    fn grid(m: usize) -> Arc<LogGrid> {
        Arc::new(LogGrid::uniform(ConeDomain::unit(2, (-1f64).exp()).unwrap(), m).unwrap())
    }

    fn omega_problem(p: f64, c: f64) -> PDEProblem {
        let f = Field::Expr(FieldExpr::exponential(2, c, &[-p]));
        PDEProblem::new(p, 2, f, Field::zero(2), 0.1).unwrap()
    }

    #[test]
    fn identical_fields_have_no_violations() {
        let g = grid(9);
        let u = g.sample(|y| y[0] * y[1]);
        let r = comparison_check(&u, &u, &omega_problem(2.0, 0.2), 1e-12).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.worst_gap, 0.0);
    }

    #[test]
    fn preconditions() {
        let g = grid(9);
        let u = GridFunction::zeros(g.clone());
        let no_omega = PDEProblem::new(2.0, 2, Field::constant(2, 1.0), Field::zero(2), 0.0).unwrap();
        assert!(comparison_check(&u, &u, &no_omega, 0.0).is_err());
        // t^2 f = t^2 drops below 0.1 near t_min = e^{-1}
        let weak = PDEProblem::new(2.0, 2, Field::constant(2, 0.1), Field::zero(2), 0.1).unwrap();
        assert!(comparison_check(&u, &u, &weak, 0.0).is_err());
        let lifted = GridFunction::constant(g, 1.0);
        let e = comparison_check(&lifted, &u, &omega_problem(2.0, 0.2), 0.0).unwrap_err();
        assert!(e.to_string().contains("boundary"));
    }

    #[test]
    fn bump_is_detected() {
        let g = grid(17);
        let v = g.sample(|y| y[1]);
        let mut u = v.clone();
        let mut support = 0;
        for i in g.interior_nodes() {
            let y = g.node_coords(i);
            let b = (0.04 - (y[0] + 0.5).powi(2) - (y[1] - 0.5).powi(2)).max(0.0);
            if b > 0.0 {
                support += 1;
            }
            u.values[i] += b;
        }
        let r = comparison_check(&u, &v, &omega_problem(2.0, 0.2), 0.0).unwrap();
        assert_eq!(r.violations, support);
        assert!((r.worst_gap - 0.04).abs() < 1e-12);
    }

    #[test]
    fn calibrated_solve_pair_is_ordered() {
        let g = grid(17);
        let cfg = SolverConfig::default();
        for p in [2.0, 3.0] {
            let order = calibrate_forcing_order(p, g.clone(), 0.1, &cfg).unwrap();
            assert_eq!(order, ForcingOrder::LargerForcingSmallerSolution);
            let big = omega_problem(p, 0.3);
            let small = omega_problem(p, 0.15);
            let ua = solve_dirichlet(&big, g.clone(), &cfg).unwrap().0;
            let ub = solve_dirichlet(&small, g.clone(), &cfg).unwrap().0;
            let (u, v) = order.order(ua, ub);
            let h = g.h_max();
            let r = comparison_check(&u, &v, &small, 10.0 * h * h).unwrap();
            assert_eq!(r.violations, 0);
        }
    }

    #[test]
    fn doubling_trivial_cases() {
        let g = grid(9);
        let z = GridFunction::zeros(g.clone());
        let rows = doubling_diagnostic(&z, &z, &[1.0, 10.0], DoublingMode::Windowed).unwrap();
        for r in &rows {
            assert_eq!(r.m_alpha, 0.0);
            assert_eq!(r.argmax, (0, 0));
            assert_eq!(r.penalty, 0.0);
        }
        let c = GridFunction::constant(g, 0.7);
        for r in doubling_diagnostic(&c, &z, &[1.0, 100.0], DoublingMode::Windowed).unwrap() {
            assert_eq!(r.m_alpha, 0.7);
            assert_eq!(r.diagonal_gap, 0.0);
        }
    }

    #[test]
    fn windowed_matches_brute_force_and_converges() {
        let g = Arc::new(LogGrid::new(ConeDomain::unit(2, (-1f64).exp()).unwrap(), 20, &[20]).unwrap());
        let z1 = g.sample(|y| (2.0 * y[0]).sin() + y[1] * y[1]);
        let z2 = g.sample(|y| 0.5 * (3.0 * y[1]).cos() - y[0]);
        let alphas = [1.0, 10.0, 100.0, 1000.0];
        let w = doubling_diagnostic(&z1, &z2, &alphas, DoublingMode::Windowed).unwrap();
        let f = doubling_diagnostic(&z1, &z2, &alphas, DoublingMode::Full).unwrap();
        assert_eq!(w, f);
        let rep = doubling_report(&z1, &z2, &alphas, DoublingMode::Windowed).unwrap();
        assert!(rep.monotone);
        let last = rep.rows.last().unwrap();
        assert!(last.penalty < rep.rows[0].penalty.max(1e-3));
        assert!(rep.relative_error.unwrap() < 0.02, "{rep:?}");
    }
}
