use std::sync::Arc;

use serde::Serialize;

use super::config::RunConfig;
use super::{Check, Outcome, Output};
use crate::analysis::{
    abp_check, bump_family, box_distance, calibrate_forcing_order, comparison_check, doubling_report, harnack_batch,
    harnack_ratio, hoelder_check, oscillation_decay, weak_form_residual, weak_harnack_check, DoublingMode,
    WeakHarnackConfig,
};
use crate::calculus::grid::fmt17;
use crate::calculus::{GridFunction, LogGrid};
use crate::error::{ConeError, Result};
use crate::field::Field;
use crate::geometry::estimate_g_condition;
use crate::operators::{psi_inverse, PDEProblem, TransformParams};
use crate::regularization::{
    convolution_supersolution_check, inf_convolution, semiconvexity_check, upper_envelope, EnvelopeParams,
};
use crate::solver::{
    convergence_study as study, manufactured_problem, solve_by_exhaustion, solve_dirichlet, SolveReport,
};

fn opt(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

fn grid(cfg: &RunConfig) -> Result<Arc<LogGrid>> {
    Ok(Arc::new(LogGrid::new(cfg.domain.clone(), cfg.grid.a_count, &cfg.grid.x_counts)?))
}

fn problem(cfg: &RunConfig, f: Field) -> Result<PDEProblem> {
    PDEProblem::new(cfg.problem.p, cfg.domain.n, f, cfg.problem.dirichlet.clone(), cfg.problem.omega)
}

fn tol(cfg: &RunConfig, g: &LogGrid) -> f64 {
    cfg.verify.tol.unwrap_or(10.0 * g.h_max() * g.h_max())
}

fn solve_checked(prob: &PDEProblem, g: Arc<LogGrid>, cfg: &RunConfig) -> Result<(GridFunction, SolveReport)> {
    let (u, rep) = solve_dirichlet(prob, g, &cfg.solver)?;
    if !rep.converged {
        return Err(ConeError::NonConvergence(format!(
            "final residual {:e} above tol {:e}",
            rep.final_residual, cfg.solver.tol
        )));
    }
    Ok((u, rep))
}

/// The stored solution named by `verify.solution`, or a fresh solve written as `solution.txt`.
fn subject(cfg: &RunConfig, prob: &PDEProblem, out: &mut Output) -> Result<GridFunction> {
    match &cfg.verify.solution {
        Some(p) => GridFunction::read(p, cfg.domain.g_params),
        None => {
            let (u, rep) = solve_checked(prob, grid(cfg)?, cfg)?;
            out.grid("solution", &u)?;
            out.json("solve", &rep)?;
            Ok(u)
        }
    }
}

pub(crate) fn solve(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let prob = problem(cfg, cfg.problem.f.clone())?;
    let (u, rep) = solve_dirichlet(&prob, grid(cfg)?, &cfg.solver)?;
    out.grid("solution", &u)?;
    out.json("solve", &rep)?;
    let rows: Vec<String> = rep
        .stages
        .iter()
        .map(|s| format!("{},{},{},{}", fmt17(s.p), fmt17(s.eps_reg), s.iterations, fmt17(s.residual)))
        .collect();
    out.csv("solve_stages", "p,eps_reg,iterations,residual", &rows)?;
    if !rep.converged {
        return Err(ConeError::NonConvergence(format!("final residual {:e}", rep.final_residual)));
    }
    Ok(Outcome::Pass)
}

fn exact_expr(cfg: &RunConfig) -> Result<&crate::field::FieldExpr> {
    cfg.problem
        .exact
        .as_ref()
        .ok_or_else(|| ConeError::Precondition("problem.exact is required for this subcommand".into()))
}

pub(crate) fn manufacture(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let exact = exact_expr(cfg)?;
    let g = grid(cfg)?;
    let prob = manufactured_problem(exact, cfg.problem.p, cfg.domain.n, &g)?;
    let (u, rep) = solve_checked(&prob, g.clone(), cfg)?;
    let max_error = (0..g.len())
        .map(|i| (u.values[i] - exact.value(&g.node_coords(i))).abs())
        .fold(0.0, f64::max);
    let h = g.h_max();
    #[derive(Serialize)]
    struct Report<'a> {
        exact: String,
        h: f64,
        max_error: f64,
        error_over_h2: f64,
        solve: &'a SolveReport,
    }
    out.grid("solution", &u)?;
    out.json(
        "manufacture",
        &Report {
            exact: exact.to_string(),
            h,
            max_error,
            error_over_h2: max_error / (h * h),
            solve: &rep,
        },
    )?;
    Ok(Outcome::Pass)
}

pub(crate) fn exhaust(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let prob = PDEProblem::new(cfg.problem.p, cfg.domain.n, cfg.problem.f.clone(), Field::zero(cfg.domain.n), 0.0)?;
    let rep = solve_by_exhaustion(&prob, &cfg.domain, cfg.grid.j_max, cfg.grid.nodes_per_unit, &cfg.solver)?;
    #[derive(Serialize)]
    struct Stage<'a> {
        j: usize,
        t_min: f64,
        t_max: f64,
        dims: Vec<usize>,
        solve: &'a SolveReport,
    }
    #[derive(Serialize)]
    struct Report<'a> {
        stages: Vec<Stage<'a>>,
        differences: &'a [crate::solver::ExhaustionDifference],
        monotone: bool,
    }
    let stages = rep
        .stages
        .iter()
        .map(|s| Stage {
            j: s.j,
            t_min: s.domain.t_min,
            t_max: s.domain.t_max,
            dims: s.solution.grid.dims().to_vec(),
            solve: &s.report,
        })
        .collect();
    out.json(
        "exhaust",
        &Report {
            stages,
            differences: &rep.differences,
            monotone: rep.monotone,
        },
    )?;
    let rows: Vec<String> = rep
        .differences
        .iter()
        .map(|d| format!("{},{}", d.j, fmt17(d.sup_difference)))
        .collect();
    out.csv("exhaust", "j,sup_difference", &rows)?;
    if let Some(last) = rep.stages.last() {
        out.grid("exhaust_final", &last.solution)?;
    }
    Ok(Outcome::Pass)
}

pub(crate) fn convolve(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let prob = problem(cfg, cfg.problem.f.clone())?;
    let u = subject(cfg, &prob, out)?;
    let g = u.grid.clone();
    let eps = cfg.verify.eps.unwrap_or(0.05);
    let lower = inf_convolution(&u, eps)?;
    let env = upper_envelope(&u, eps)?;
    let ordered = (0..g.len()).all(|i| {
        let slack = 1e-12 * (1.0 + u.values[i].abs());
        lower.values[i] <= u.values[i] && u.values[i] <= env.values.values[i] - eps + slack
    });
    let h = g.h_max();
    let margin = (0.5 * (eps - env.max_offset())).min(h);
    let semi = EnvelopeParams::for_envelope(&env, margin).and_then(|p| semiconvexity_check(&env, p, 10.0 * h))?;
    let tol = tol(cfg, &g);
    let sup = convolution_supersolution_check(&u, &prob, eps, tol)?;
    #[derive(Serialize)]
    struct Report<'a> {
        eps: f64,
        ordered: bool,
        inf_convolution_gap: f64,
        semiconvexity: &'a crate::regularization::SemiconvexityReport,
        supersolution: &'a crate::regularization::SupersolutionCheck,
    }
    let gap = (0..g.len()).map(|i| u.values[i] - lower.values[i]).fold(0.0, f64::max);
    out.grid("inf_convolution", &lower)?;
    out.grid("upper_envelope", &env.values)?;
    out.json(
        "convolve",
        &Report {
            eps,
            ordered,
            inf_convolution_gap: gap,
            semiconvexity: &semi,
            supersolution: &sup,
        },
    )?;
    Ok(if !ordered {
        Outcome::Fail("u_eps <= u <= u^eps - eps is violated".into())
    } else if !semi.pass {
        Outcome::Fail(format!("semiconvexity: min eigenvalue {} below {}", semi.min_eigenvalue, semi.bound))
    } else if sup.violations > 0 {
        Outcome::Fail(format!("{} supersolution violations", sup.violations))
    } else {
        Outcome::Pass
    })
}

pub(crate) fn convergence_study(cfg: &RunConfig, out: &mut Output) -> Result<Outcome> {
    let exact = exact_expr(cfg)?;
    let mut grids = vec![grid(cfg)?];
    for _ in 1..cfg.grid.refinements {
        let next = grids.last().expect("non-empty").refined()?;
        grids.push(Arc::new(next));
    }
    let prob = manufactured_problem(exact, cfg.problem.p, cfg.domain.n, &grids[0])?;
    let table = study(&prob, &Field::Expr(exact.clone()), &grids, &cfg.solver)?;
    out.json("convergence", &table)?;
    if out.csv {
        let csv = table.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default().to_string();
        let rows: Vec<String> = lines.map(str::to_string).collect();
        out.csv("convergence", &header, &rows)?;
    }
    Ok(match (cfg.verify.min_order, table.last_order()) {
        (Some(min), Some(o)) if o < min => Outcome::Fail(format!("observed order {o} below {min}")),
        (Some(min), None) => Outcome::Fail(format!("no observed order to compare with {min}")),
        _ => Outcome::Pass,
    })
}

pub(crate) fn gcondition(cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome> {
    let est = estimate_g_condition(&cfg.domain, cfg.verify.samples, seed)?;
    out.json("gcondition", &est)?;
    Ok(Outcome::Pass)
}

fn box_center(g: &LogGrid) -> Vec<f64> {
    (0..g.ndim()).map(|k| 0.5 * (g.lower()[k] + g.upper()[k])).collect()
}

/// `(lower, upper)` pair: stored files as given, or solves for `problem.f` and
/// `verify.f_other` ordered by the calibrated response to the forcing.
fn ordered_pair(cfg: &RunConfig, out: &mut Output) -> Result<(GridFunction, GridFunction, PDEProblem)> {
    let prob = problem(cfg, cfg.problem.f.clone())?;
    if let (Some(a), Some(b)) = (&cfg.verify.solution, &cfg.verify.other) {
        let u = GridFunction::read(a, cfg.domain.g_params)?;
        let v = GridFunction::read(b, cfg.domain.g_params)?;
        return Ok((u, v, prob));
    }
    let f_other = cfg.verify.f_other.clone().ok_or_else(|| {
        ConeError::Precondition("verify.f_other (or verify.solution and verify.other) is required".into())
    })?;
    let other = problem(cfg, f_other)?;
    let g = grid(cfg)?;
    let (mut ge, mut le) = (true, true);
    for i in 0..g.len() {
        let y = g.node_coords(i);
        let (fa, fb) = (prob.f.eval(&y), other.f.eval(&y));
        ge &= fa >= fb;
        le &= fa <= fb;
    }
    let (big, small) = match (ge, le) {
        (true, _) => (&prob, &other),
        (false, true) => (&other, &prob),
        _ => {
            return Err(ConeError::Precondition(
                "problem.f and verify.f_other are not ordered on the grid".into(),
            ))
        }
    };
    let omega = if cfg.problem.omega > 0.0 { cfg.problem.omega } else { 0.1 };
    let order = calibrate_forcing_order(cfg.problem.p, g.clone(), omega, &cfg.solver)?;
    let (ub, rb) = solve_checked(big, g.clone(), cfg)?;
    let (us, rs) = solve_checked(small, g, cfg)?;
    out.grid("solution_larger_forcing", &ub)?;
    out.grid("solution_smaller_forcing", &us)?;
    out.json("solve_pair", &[&rb, &rs])?;
    let (u, v) = order.order(ub, us);
    other.validate_omega(&u.grid)?;
    Ok((u, v, prob))
}

pub(crate) fn verify(check: Check, cfg: &RunConfig, seed: u64, out: &mut Output) -> Result<Outcome> {
    let v = &cfg.verify;
    match check {
        Check::Abp => {
            let prob = problem(cfg, cfg.problem.f.clone())?;
            let u = subject(cfg, &prob, out)?;
            let rep = abp_check(&u, &prob)?;
            out.json("abp", &rep)?;
            let rows: Vec<String> = [("sub", &rep.subsolution), ("super", &rep.supersolution), ("two_sided", &rep.two_sided)]
                .iter()
                .map(|(name, s)| {
                    format!(
                        "{name},{},{},{},{},{},{}",
                        fmt17(s.interior_sup),
                        fmt17(s.boundary_sup),
                        fmt17(s.artificial_sup),
                        fmt17(s.forcing),
                        fmt17(s.geometry_factor),
                        opt(s.c_emp)
                    )
                })
                .collect();
            out.csv("abp", "side,interior_sup,boundary_sup,artificial_sup,forcing,geometry_factor,c_emp", &rows)?;
            let slack = tol(cfg, &u.grid);
            Ok(if rep.subsolution.holds_with(v.c_ref, slack) {
                Outcome::Pass
            } else {
                Outcome::Fail(format!(
                    "interior sup exceeds the bound with C = {} by {}",
                    v.c_ref,
                    rep.subsolution.excess(v.c_ref)
                ))
            })
        }
        Check::Hoelder => {
            let prob = problem(cfg, cfg.problem.f.clone())?;
            let u = subject(cfg, &prob, out)?;
            let checks = v.rhos.iter().map(|&r| hoelder_check(&u, &prob, r)).collect::<Result<Vec<_>>>()?;
            out.json("hoelder", &checks)?;
            let rows: Vec<String> = checks
                .iter()
                .map(|c| {
                    format!(
                        "{},{},{},{},{}",
                        fmt17(c.norm.rho),
                        fmt17(c.norm.value),
                        fmt17(c.forcing),
                        opt(c.ratio),
                        c.vacuous
                    )
                })
                .collect();
            out.csv("hoelder", "rho,norm,forcing,ratio,vacuous", &rows)?;
            Ok(match checks.iter().find(|c| c.inconsistent || c.ratio.is_some_and(|r| !r.is_finite())) {
                Some(c) => Outcome::Fail(format!("rho = {}: nonzero solution with vanishing forcing", c.norm.rho)),
                None => Outcome::Pass,
            })
        }
        Check::Harnack => {
            let prob = problem(cfg, cfg.problem.f.clone())?;
            let u = subject(cfg, &prob, out)?;
            let batch = harnack_batch(&u, &prob, v.balls, v.d_range, seed)?;
            let single = match (&v.center, v.d) {
                (Some(c), Some(d)) => Some(harnack_ratio(&u, &prob, c, d)?),
                _ => None,
            };
            #[derive(Serialize)]
            struct Report<'a> {
                batch: &'a crate::analysis::HarnackBatch,
                ball: Option<crate::analysis::HarnackReport>,
            }
            out.json(
                "harnack",
                &Report {
                    batch: &batch,
                    ball: single,
                },
            )?;
            let rows: Vec<String> = batch
                .reports
                .iter()
                .map(|r| {
                    let c: Vec<String> = r.center.iter().map(|x| fmt17(*x)).collect();
                    format!(
                        "{},{},{},{},{},{}",
                        c.join(";"),
                        fmt17(r.d),
                        fmt17(r.sup),
                        fmt17(r.inf),
                        fmt17(r.forcing),
                        opt(r.c_emp)
                    )
                })
                .collect();
            out.csv("harnack", "center,d,sup,inf,forcing,c_emp", &rows)?;
            Ok(match batch.max_c {
                Some(c) if v.c_ref > 0.0 && c > v.c_ref => Outcome::Fail(format!("C_emp {c} exceeds {}", v.c_ref)),
                _ => Outcome::Pass,
            })
        }
        Check::Weakharnack => {
            let prob = problem(cfg, cfg.problem.f.clone())?;
            let u = subject(cfg, &prob, out)?;
            let center = v.center.clone().unwrap_or_else(|| box_center(&u.grid));
            let d = v.d.unwrap_or_else(|| 0.45 * box_distance(&u.grid, &center));
            let table = weak_harnack_check(
                &u,
                &prob,
                &WeakHarnackConfig {
                    p0_sweep: v.p0.clone(),
                    center,
                    d,
                },
            )?;
            out.json("weakharnack", &table)?;
            let rows: Vec<String> = table
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{},{}",
                        fmt17(r.p0),
                        fmt17(r.mean),
                        fmt17(r.inf),
                        fmt17(r.forcing_minus),
                        fmt17(r.forcing_plus),
                        opt(r.c_minus),
                        opt(r.c_plus)
                    )
                })
                .collect();
            out.csv("weakharnack", "p0,mean,inf,forcing_minus,forcing_plus,c_minus,c_plus", &rows)?;
            Ok(Outcome::Pass)
        }
        Check::Oscillation => {
            let prob = problem(cfg, cfg.problem.f.clone())?;
            let u = subject(cfg, &prob, out)?;
            let center = v.center.clone().unwrap_or_else(|| box_center(&u.grid));
            let radii = v.radii.clone().unwrap_or_else(|| {
                let r0 = 0.8 * box_distance(&u.grid, &center);
                (0..4).map(|k| r0 / f64::from(1u32 << k)).collect()
            });
            let rep = oscillation_decay(&u, &center, &radii)?;
            out.json("oscillation", &rep)?;
            let rows: Vec<String> = rep
                .radii
                .iter()
                .zip(&rep.omegas)
                .map(|(r, w)| format!("{},{}", fmt17(*r), fmt17(*w)))
                .collect();
            out.csv("oscillation", "radius,omega", &rows)?;
            Ok(match rep.exponent {
                Some(e) if e <= 0.0 => Outcome::Fail(format!("fitted exponent {e} is not positive")),
                _ => Outcome::Pass,
            })
        }
        Check::Comparison => {
            let (u, w, prob) = ordered_pair(cfg, out)?;
            let rep = comparison_check(&u, &w, &prob, tol(cfg, &u.grid))?;
            out.json("comparison", &rep)?;
            Ok(if rep.violations == 0 {
                Outcome::Pass
            } else {
                Outcome::Fail(format!("{} interior violations, worst gap {}", rep.violations, rep.worst_gap))
            })
        }
        Check::Doubling => {
            let (u, w, _) = ordered_pair(cfg, out)?;
            let params = TransformParams::from_bound(u.sup_abs().max(w.sup_abs()).max(1e-300))?;
            let z = |f: &GridFunction| -> Result<GridFunction> {
                let vals = f.values.iter().map(|&x| psi_inverse(x, params)).collect::<Result<Vec<_>>>()?;
                GridFunction::new(f.grid.clone(), vals)
            };
            let mode = if v.full_doubling { DoublingMode::Full } else { DoublingMode::Windowed };
            let rep = doubling_report(&z(&u)?, &z(&w)?, &v.alphas, mode)?;
            out.json("doubling", &rep)?;
            let rows: Vec<String> = rep
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{}",
                        fmt17(r.alpha),
                        fmt17(r.m_alpha),
                        r.argmax.0,
                        r.argmax.1,
                        fmt17(r.penalty),
                        fmt17(r.diagonal_gap)
                    )
                })
                .collect();
            out.csv("doubling", "alpha,m_alpha,argmax_z,argmax_w,penalty,diagonal_gap", &rows)?;
            Ok(if rep.monotone {
                Outcome::Pass
            } else {
                Outcome::Fail("M_alpha is not nonincreasing in alpha".into())
            })
        }
        Check::Weakform => {
            let prob = problem(cfg, cfg.problem.f.clone())?;
            let u = subject(cfg, &prob, out)?;
            let tests = bump_family(&u.grid, v.bumps, seed)?;
            let rep = weak_form_residual(&u, &prob, &tests)?;
            #[derive(Serialize)]
            struct Report<'a> {
                tests: &'a [crate::analysis::CosineBump],
                residuals: &'a crate::analysis::WeakFormReport,
            }
            out.json(
                "weakform",
                &Report {
                    tests: &tests,
                    residuals: &rep,
                },
            )?;
            let rows: Vec<String> = rep
                .residuals
                .iter()
                .zip(&rep.residuals_t_weighted)
                .enumerate()
                .map(|(k, (a, b))| format!("{k},{},{}", fmt17(*a), fmt17(*b)))
                .collect();
            out.csv("weakform", "test,residual,residual_t_weighted", &rows)?;
            let scale = 1.0 + rep.max_residual;
            Ok(if rep.max_form_difference > 1e-10 * scale {
                Outcome::Fail(format!("the two weak forms differ by {}", rep.max_form_difference))
            } else if v.weak_tol.is_some_and(|t| rep.max_residual > t) {
                Outcome::Fail(format!("max residual {} above tolerance", rep.max_residual))
            } else {
                Outcome::Pass
            })
        }
    }
}
