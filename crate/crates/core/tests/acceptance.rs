//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use conelab::analysis::{
    abp_check, bump_family, calibrate_forcing_order, comparison_check, doubling_diagnostic, doubling_report,
    harnack_batch, harnack_ratio, hoelder_check, hoelder_sweep, stable_p0, weak_form_residual, weak_harnack_check,
    DoublingMode, ForcingOrder, WeakHarnackConfig,
};
use conelab::calculus::{GridFunction, LogGrid};
use conelab::field::{Field, FieldExpr};
use conelab::geometry::{exhaustion, ConeDomain};
use conelab::operators::{
    classify_point, full_residual_at, psi, psi_inverse, psi_prime, pucci_minus, pucci_plus, q_matrix, residual_full,
    transformed_residual, transformed_residual_at, PDEProblem, PointClass, PucciParams, TransformParams,
};
use conelab::regularization::{
    convolution_supersolution_check, inf_convolution, inf_convolution_with, semiconvexity_check, upper_envelope,
    ConvolutionOptions, EnvelopeParams,
};
use conelab::solver::{
    convergence_study, manufactured_problem, solve_by_exhaustion, solve_dirichlet, SolverConfig,
};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: conelab::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn unit_grid(n: usize, m: usize) -> Arc<LogGrid> {
    Arc::new(LogGrid::uniform(ConeDomain::unit(n, (-1f64).exp()).unwrap(), m).unwrap())
}

fn solve(prob: &PDEProblem, g: Arc<LogGrid>) -> Result<GridFunction, String> {
    let (u, rep) = ok(solve_dirichlet(prob, g, &SolverConfig::default()))?;
    ensure(rep.converged, || format!("solve did not converge: residual {:e}", rep.final_residual))?;
    Ok(u)
}

fn minus_one(p: f64, n: usize) -> PDEProblem {
    PDEProblem::new(p, n, Field::constant(n, -1.0), Field::zero(n), 0.0).unwrap()
}

fn spread(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

fn exact_recovery() -> Verdict {
    let cases: Vec<(&str, f64, usize, FieldExpr, bool)> = vec![
        ("p=2 n=3 t^-1", 2.0, 3, FieldExpr::p_harmonic_profile(3, 2.0), false),
        ("p=3 n=2 t^1/2", 3.0, 2, FieldExpr::p_harmonic_profile(2, 3.0), false),
        ("p=2 n=2 t^2+x^2", 2.0, 2, FieldExpr::parse("exp(1,2,0) + monomial(1,0,2)", 2).unwrap(), true),
    ];
    let mut details = vec![];
    for (label, p, n, exact, manufactured) in cases {
        let grids: Vec<Arc<LogGrid>> = [9, 17, 33, 65].iter().map(|&m| unit_grid(n, m)).collect();
        let prob = if manufactured {
            ok(manufactured_problem(&exact, p, n, &grids[0]))?
        } else {
            PDEProblem::homogeneous(p, n, Field::Expr(exact.clone())).unwrap()
        };
        let table = ok(convergence_study(&prob, &Field::Expr(exact), &grids, &SolverConfig::default()))?;
        let worst_ratio = table
            .rows
            .iter()
            .map(|r| r.max_error / (r.h * r.h))
            .fold(0.0, f64::max);
        let min_order = table.rows.iter().filter_map(|r| r.order).fold(f64::INFINITY, f64::min);
        ensure(worst_ratio <= 5.0, || format!("{label}: error/h^2 = {worst_ratio:.3}"))?;
        ensure(min_order >= 1.9, || format!("{label}: order {min_order:.3}"))?;
        details.push(format!("{label} err/h^2<={worst_ratio:.2e} order>={min_order:.2}"));
    }
    Ok(details.join("; "))
}

fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-2.0..2.0));
    (&a + a.transpose()) * 0.5
}

fn pucci_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let d = 2 + k % 2;
        let x = random_symmetric(&mut rng, d);
        let params = PucciParams::for_p(rng.gen_range(2.0..5.0)).unwrap();
        let eig = x.clone().symmetric_eigen();
        let (mut sup, mut inf) = (f64::NEG_INFINITY, f64::INFINITY);
        // extreme points of {λI ≤ A ≤ ΛI} that commute with X
        for mask in 0..(1u32 << d) {
            let diag: Vec<f64> = (0..d)
                .map(|i| if mask >> i & 1 == 1 { params.big_lambda } else { params.lambda })
                .collect();
            let a = &eig.eigenvectors * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag)) * eig.eigenvectors.transpose();
            let tr = (&a * &x).trace();
            sup = sup.max(tr);
            inf = inf.min(tr);
        }
        worst = worst.max((ok(pucci_plus(&x, params))? - sup).abs());
        worst = worst.max((ok(pucci_minus(&x, params))? - inf).abs());
    }
    ensure(worst <= 1e-10, || format!("eigenvalue formula differs from brute force by {worst:e}"))?;
    let mut brackets = 0;
    for k in 0..1000 {
        let d = 2 + k % 2;
        let p = rng.gen_range(2.0..5.0);
        let params = PucciParams::for_p(p).unwrap();
        let x = random_symmetric(&mut rng, d);
        let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tr = (ok(q_matrix(&g, p))? * &x).trace();
        let slack = 1e-12 * (1.0 + x.norm());
        ensure(
            ok(pucci_minus(&x, params))? <= tr + slack && tr <= ok(pucci_plus(&x, params))? + slack,
            || format!("bracketing fails for pair {k}"),
        )?;
        brackets += 1;
    }
    Ok(format!("100 matrices max deviation {worst:.1e}; {brackets} bracketing pairs"))
}

fn comparison_principle() -> Verdict {
    let g = unit_grid(2, 17);
    let cfg = SolverConfig::default();
    let h = g.h_max();
    let tol = 10.0 * h * h;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut orders = std::collections::BTreeMap::new();
    let mut worst = f64::NEG_INFINITY;
    for k in 0..50 {
        let p = [2.0, 2.5, 3.0][k % 3];
        let order = match orders.get(&k.rem_euclid(3)) {
            Some(o) => *o,
            None => {
                let o = ok(calibrate_forcing_order(p, g.clone(), 0.1, &cfg))?;
                orders.insert(k % 3, o);
                o
            }
        };
        // t^p f = 0.1 + c0 + c1 x² + c2 e^a, and the larger forcing adds a non-negative bump
        let (c0, c1, c2) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5));
        let (m0, m1) = (rng.gen_range(0.05..0.5), rng.gen_range(0.0..1.0));
        let (b0, b1, b2) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let small = move |y: &[f64]| (0.1 + c0 + c1 * y[1] * y[1] + c2 * y[0].exp()) * (-p * y[0]).exp();
        let big = move |y: &[f64]| small(y) + (m0 + m1 * y[1]) * (-p * y[0]).exp();
        let data = Field::custom(move |y: &[f64]| b0 + b1 * y[0] + b2 * y[1]);
        let ps = PDEProblem::new(p, 2, Field::custom(small), data.clone(), 0.1).unwrap();
        let pb = PDEProblem::new(p, 2, Field::custom(big), data, 0.1).unwrap();
        ok(pb.validate_omega(&g))?;
        let (u, v) = order.order(solve(&pb, g.clone())?, solve(&ps, g.clone())?);
        let r = ok(comparison_check(&u, &v, &ps, tol))?;
        ensure(r.violations == 0, || format!("pair {k} (p = {p}): {} violations, gap {:e}", r.violations, r.worst_gap))?;
        worst = worst.max(r.worst_gap);
    }
    let order = orders[&0];
    ensure(order == ForcingOrder::LargerForcingSmallerSolution, || format!("unexpected order {order:?}"))?;

    let v = g.sample(|y| y[0] + y[1]);
    let mut u = v.clone();
    let mut support = 0;
    for i in g.interior_nodes() {
        let y = g.node_coords(i);
        let b = (0.05 - (y[0] + 0.5).powi(2) - (y[1] - 0.5).powi(2)).max(0.0);
        if b > tol {
            support += 1;
        }
        u.values[i] += b;
    }
    let ps = PDEProblem::new(2.0, 2, Field::Expr(FieldExpr::exponential(2, 0.2, &[-2.0])), Field::zero(2), 0.1).unwrap();
    let r = ok(comparison_check(&u, &v, &ps, tol))?;
    ensure(r.violations > 0 && r.violations == support, || format!("bump control: {} violations", r.violations))?;
    Ok(format!(
        "50 pairs, 0 violations (largest u-v {worst:.1e}, tol {tol:.1e}); bump control {} violations",
        r.violations
    ))
}

fn abp_stability() -> Verdict {
    let prob = minus_one(2.0, 2);
    let mut cs = vec![];
    let mut reports = vec![];
    for m in [9, 17, 33, 65] {
        let u = solve(&prob, unit_grid(2, m))?;
        let r = ok(abp_check(&u, &prob))?;
        cs.push(r.subsolution.c_emp.ok_or("forcing vanished")?);
        reports.push((u.grid.h_max(), r));
    }
    let c_ref = cs[0];
    let var = spread(&cs[1..]);
    ensure(var <= 0.2, || format!("C_emp {cs:?} varies by {var:.3}"))?;
    for (h, r) in &reports[1..] {
        ensure(r.subsolution.holds_with(c_ref, 10.0 * h * h), || {
            format!("bound with C_ref = {c_ref} fails by {:e} at h = {h}", r.subsolution.excess(c_ref))
        })?;
        ensure(r.two_sided.c_emp.is_some_and(f64::is_finite), || "two-sided constant missing".into())?;
    }
    let mut mp = vec![];
    for (p, f) in [(2.0, 1.0), (3.0, 2.0)] {
        let prob = PDEProblem::new(p, 2, Field::constant(2, f), Field::zero(2), 0.0).unwrap();
        for m in [17, 33] {
            let g = unit_grid(2, m);
            let h = g.h_max();
            let u = solve(&prob, g)?;
            let r = ok(abp_check(&u, &prob))?;
            ensure(r.subsolution.forcing == 0.0, || "f >= 0 yet f^- is nonzero".into())?;
            ensure(r.subsolution.holds_with(0.0, 10.0 * h * h), || {
                format!("maximum principle fails for p = {p}: {}", r.subsolution.interior_sup)
            })?;
            mp.push(r.subsolution.interior_sup);
        }
    }
    Ok(format!(
        "C_emp {} (C_ref {c_ref:.4}, spread {var:.3}); f>=0 interior sup max {:.1e}",
        cs.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>().join("/"),
        mp.iter().copied().fold(0.0, f64::max)
    ))
}

fn hoelder_estimate() -> Verdict {
    let prob = minus_one(2.0, 2);
    let sols = [17, 33, 65]
        .iter()
        .map(|&m| solve(&prob, unit_grid(2, m)))
        .collect::<Result<Vec<_>, _>>()?;
    let ratios = sols
        .iter()
        .map(|u| ok(hoelder_check(u, &prob, 0.25)).map(|c| c.ratio))
        .collect::<Result<Vec<_>, _>>()?;
    let ratios: Vec<f64> = ratios.into_iter().map(|r| r.ok_or("no ratio")).collect::<Result<_, _>>()?;
    ensure(ratios.iter().all(|r| r.is_finite()), || format!("ratios {ratios:?}"))?;
    let var = spread(&ratios);
    ensure(var <= 0.2, || format!("ratios {ratios:?} vary by {var:.3}"))?;
    let sweep = ok(hoelder_sweep(&sols, &prob, &[0.1, 0.2, 0.3], 0.2))?;
    let a1 = sweep.alpha1.ok_or_else(|| format!("no stable exponent: {:?}", sweep.variation))?;
    ensure(a1 > 0.0, || "alpha_1 not positive".into())?;
    Ok(format!("ratio at rho=0.25 {:.4}/{:.4}/{:.4} (spread {var:.3}); alpha_1 = {a1}", ratios[0], ratios[1], ratios[2]))
}

fn harnack() -> Verdict {
    // closed form: e^{-a} on a log-metric ball of radius d/2 has sup/inf = e^{d}
    let g = Arc::new(LogGrid::uniform(ConeDomain::unit(3, (-2f64).exp()).unwrap(), 41).unwrap());
    let prob = PDEProblem::homogeneous(2.0, 3, Field::zero(3)).unwrap();
    let u = g.sample(|y| (-y[0]).exp());
    let mut worst: f64 = 0.0;
    for (idx, k) in [([20, 20, 20], 4), ([12, 18, 22], 3), ([28, 20, 14], 2)] {
        let c = g.node_coords(g.index_of(&idx));
        let d = 2.0 * k as f64 * g.h(0);
        let r = ok(harnack_ratio(&u, &prob, &c, d))?;
        worst = worst.max((r.c_emp.unwrap() / d.exp() - 1.0).abs());
    }
    ensure(worst <= 0.01, || format!("closed-form mismatch {worst:e}"))?;

    let mut batch = vec![];
    for (p, n, m) in [(2.0, 2, 33), (3.0, 2, 33), (2.0, 3, 17)] {
        let prob = minus_one(p, n);
        let mut maxes = vec![];
        for mm in [m, 2 * m - 1] {
            let u = solve(&prob, unit_grid(n, mm))?;
            let b = ok(harnack_batch(&u, &prob, 20, (0.1, 0.3), 17))?;
            ensure(b.reports.iter().all(|r| r.c_emp.is_some_and(f64::is_finite)), || "infinite C_emp".into())?;
            maxes.push(b.max_c.unwrap());
        }
        ensure(maxes[1] <= 1.2 * maxes[0], || format!("p={p} n={n}: C_emp grows {maxes:?}"))?;
        batch.push(format!("p={p},n={n}: {:.3}/{:.3}", maxes[0], maxes[1]));
    }

    let prob = minus_one(2.0, 2);
    let mut tables = vec![];
    for m in [17, 33, 65] {
        let u = solve(&prob, unit_grid(2, m))?;
        let cfg = WeakHarnackConfig {
            p0_sweep: vec![0.1, 0.25, 0.5, 1.0],
            center: vec![-0.5, 0.5],
            d: 0.2,
        };
        tables.push(ok(weak_harnack_check(&u, &prob, &cfg))?);
    }
    let p0 = stable_p0(&tables, 0.2).ok_or("no p0 with stable C_emp")?;
    Ok(format!(
        "closed form within {worst:.1e}; batch max C {}; stable p0 = {p0}",
        batch.join(", ")
    ))
}

fn convolutions() -> Verdict {
    let g = unit_grid(2, 33);
    let h = g.h_max();
    let lip = (1.0f64 + 0.25).sqrt();
    let u = g.sample(|y| y[0].sin() + 0.5 * (y[1] - 0.5).abs());
    let mut conv_worst: f64 = 0.0;
    let mut prev: Option<GridFunction> = None;
    for eps in [0.2, 0.1, 0.05, 0.02] {
        let ue = ok(inf_convolution(&u, eps))?;
        let full = ok(inf_convolution_with(&u, eps, ConvolutionOptions { full_window: true, ..Default::default() }))?;
        ensure(ue.values == full.values, || format!("window and full search differ at eps = {eps}"))?;
        let env = ok(upper_envelope(&u, eps))?;
        for i in 0..g.len() {
            ensure(ue.values[i] <= u.values[i] && u.values[i] <= env.values.values[i] - eps + 1e-15, || {
                format!("ordering fails at node {i}, eps = {eps}")
            })?;
        }
        if let Some(p) = &prev {
            ensure(p.values.iter().zip(&ue.values).all(|(a, b)| a <= b), || "not monotone in eps".into())?;
        }
        let gap = u.values.iter().zip(&ue.values).map(|(a, b)| a - b).fold(0.0, f64::max);
        let bound = 2.0 * (u.sup_abs() * eps).sqrt() * lip;
        ensure(gap <= bound, || format!("gap {gap} above {bound} at eps = {eps}"))?;
        conv_worst = conv_worst.max(gap / bound);
        let margin = (0.5 * (eps - env.max_offset())).min(h);
        let semi = ok(EnvelopeParams::for_envelope(&env, margin).and_then(|p| semiconvexity_check(&env, p, 10.0 * h)))?;
        ensure(semi.pass, || format!("semiconvexity {} < {} at eps = {eps}", semi.min_eigenvalue, semi.bound))?;
        prev = Some(ue);
    }

    // smooth solutions: the two constant-forcing p = 2 problems and the p = 3 profile
    let profile = Field::Expr(FieldExpr::p_harmonic_profile(2, 3.0));
    let cases = [
        ("p=2 f=-1", PDEProblem::new(2.0, 2, Field::constant(2, -1.0), Field::zero(2), 0.0).unwrap()),
        ("p=2 f=1", PDEProblem::new(2.0, 2, Field::constant(2, 1.0), Field::zero(2), 0.0).unwrap()),
        ("p=3 t^1/2", PDEProblem::homogeneous(3.0, 2, profile).unwrap()),
    ];
    let mut sup_checks = vec![];
    for (label, prob) in &cases {
        let s = solve(prob, g.clone())?;
        for eps in [0.05, 0.02, 0.01] {
            let c = ok(convolution_supersolution_check(&s, prob, eps, 10.0 * h * h))?;
            ensure(c.checked > 0 && c.violations == 0, || {
                format!("{label} eps={eps}: {} of {} nodes violate, max excess {:e}", c.violations, c.checked, c.max_excess)
            })?;
        }
        sup_checks.push(label.to_string());
    }
    // recorded only: the p = 3 solution with f = -1 is C^{1,1/2} at its maximum
    let prob = PDEProblem::new(3.0, 2, Field::constant(2, -1.0), Field::zero(2), 0.0).unwrap();
    let c = ok(convolution_supersolution_check(&solve(&prob, g.clone())?, &prob, 0.02, 10.0 * h * h))?;
    Ok(format!(
        "orderings, eps-monotonicity and windows exact; gap/bound <= {conv_worst:.2}; 0 violations for {}; \
         degenerate p=3 f=-1 (not asserted): {} of {} nodes",
        sup_checks.join(", "),
        c.violations,
        c.checked
    ))
}

fn psi_transform() -> Verdict {
    let cases = [(3.0, 2, 0.7), (2.5, 3, -0.4), (2.0, 2, 1.3)];
    let mut worst_id: f64 = 0.0;
    let mut orders = vec![];
    for (p, n, fval) in cases {
        let prob = PDEProblem::new(p, n, Field::constant(n, fval), Field::zero(n), 0.0).unwrap();
        let params = TransformParams::new(3.0).unwrap();
        let mut z = FieldExpr::constant(n, 0.2)
            .plus(FieldExpr::monomial(n, 0.3, &[1]))
            .plus(FieldExpr::exponential(n, 0.1, &vec![1.0; n]));
        let mut pows = vec![0; n];
        pows[1] = 2;
        z = z.plus(FieldExpr::monomial(n, 0.4, &pows));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let y: Vec<f64> = (0..n).map(|k| if k == 0 { rng.gen_range(-1.0..0.0) } else { rng.gen_range(0.0..1.0) }).collect();
            let (zv, gz, hz) = (z.value(&y), z.gradient(&y), z.hessian(&y));
            let d1 = psi_prime(zv, params);
            let gv: Vec<f64> = gz.iter().map(|x| d1 * x).collect();
            let hv: Vec<f64> = (0..n * n).map(|k| d1 * (hz[k] - gz[k / n] * gz[k % n])).collect();
            let lhs = full_residual_at(&prob, &y, &gv, &hv, 0.0);
            let rhs = (-p * y[0]).exp() * d1.powf(p - 1.0) * transformed_residual_at(&prob, params, &y, zv, &gz, &hz, 0.0);
            worst_id = worst_id.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        let mut diffs = vec![];
        for m in [9, 17, 33] {
            let g = unit_grid(n, m);
            let zg = g.sample(|y| z.value(y));
            let vg = zg.map(|s| psi(s, params));
            let mut worst: f64 = 0.0;
            for i in g.interior_nodes() {
                let a = ok(residual_full(&vg, i, &prob, 0.0))?;
                let y0 = g.node_a(i);
                let b = (-p * y0).exp() * psi_prime(zg.values[i], params).powf(p - 1.0)
                    * ok(transformed_residual(&zg, i, &prob, params, 0.0))?;
                worst = worst.max((a - b).abs());
            }
            diffs.push(worst);
        }
        let order = (diffs[1] / diffs[2]).log2();
        ensure(order >= 1.8, || format!("p={p} n={n}: grid discrepancy {diffs:?}"))?;
        orders.push(order);
    }
    ensure(worst_id <= 1e-8, || format!("chain-rule identity off by {worst_id:e}"))?;

    let params = TransformParams::from_bound(5.0).unwrap();
    let mut rt: f64 = 0.0;
    for k in 0..=2000 {
        let v = -5.0 + 10.0 * k as f64 / 2000.0;
        let back = psi(ok(psi_inverse(v, params))?, params);
        rt = rt.max((back - v).abs() / v.abs().max(1.0));
    }
    ensure(rt <= 1e-14, || format!("round trip error {rt:e}"))?;
    Ok(format!(
        "identity {worst_id:.1e}; grid orders {}; round trip {rt:.1e}",
        orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join("/")
    ))
}

fn doubling() -> Verdict {
    let g = Arc::new(LogGrid::new(ConeDomain::unit(2, (-1f64).exp()).unwrap(), 20, &[20]).unwrap());
    let alphas = [1.0, 10.0, 100.0, 1000.0];
    // shifted trigonometric pairs: off-diagonal maximisers for small alpha
    let mut fields = vec![];
    for (label, fa, fx) in [("trig 3/2", 3.0, 2.0), ("trig 4/3", 4.0, 3.0)] {
        fields.push((
            label,
            g.sample(move |y| f64::sin(fa * y[0]) + f64::cos(fx * y[1])),
            g.sample(move |y| f64::sin(fa * y[0] + 0.7) + f64::cos(fx * y[1] - 0.6)),
        ));
    }
    // transformed solve pair
    let cfg = SolverConfig::default();
    let data = Field::Expr(FieldExpr::parse("monomial(0.5,0,1)", 2).unwrap());
    let small = PDEProblem::new(2.0, 2, Field::Expr(FieldExpr::exponential(2, 0.2, &[-2.0])), data.clone(), 0.1).unwrap();
    let big = PDEProblem::new(2.0, 2, Field::Expr(FieldExpr::exponential(2, 0.6, &[-2.0])), data, 0.1).unwrap();
    let u = ok(solve_dirichlet(&big, g.clone(), &cfg))?.0;
    let v = ok(solve_dirichlet(&small, g.clone(), &cfg))?.0;
    let params = TransformParams::from_bound(u.sup_abs().max(v.sup_abs())).unwrap();
    let z = |f: &GridFunction| f.map(|x| psi_inverse(x, params).unwrap());
    fields.push(("transformed solutions", z(&v), z(&u)));

    let mut details = vec![];
    for (label, z1, z2) in &fields {
        let full = ok(doubling_diagnostic(z1, z2, &alphas, DoublingMode::Full))?;
        let rep = ok(doubling_report(z1, z2, &alphas, DoublingMode::Windowed))?;
        ensure(rep.rows == full, || format!("{label}: windowed and brute-force maximisers differ"))?;
        ensure(rep.monotone, || format!("{label}: M_alpha not nonincreasing"))?;
        let (first, last) = (&rep.rows[0], &rep.rows[3]);
        ensure(last.penalty <= first.penalty && last.diagonal_gap <= first.diagonal_gap, || {
            format!("{label}: gap/penalty do not shrink")
        })?;
        ensure(first.diagonal_gap > 0.0 || label.starts_with("transformed"), || format!("{label}: no off-diagonal maximiser"))?;
        ensure(last.diagonal_gap <= 2.0 * g.h_max(), || format!("{label}: final gap {}", last.diagonal_gap))?;
        let rel = rep.relative_error.unwrap();
        ensure(rel <= 0.02, || format!("{label}: M_inf off by {rel:.3}"))?;
        details.push(format!("{label}: gap {:.2}->{:.2}, M_inf rel err {rel:.1e}", first.diagonal_gap, last.diagonal_gap));
    }
    Ok(details.join("; "))
}

fn viscosity_to_weak() -> Verdict {
    let mut details = vec![];
    for (p, n, ms) in [(2.0, 2, vec![17, 33, 65]), (3.0, 2, vec![17, 33, 65]), (2.0, 3, vec![9, 17, 33])] {
        let prob = minus_one(p, n);
        let tests = ok(bump_family(&unit_grid(n, ms[0]), 10, 5))?;
        let mut res = vec![];
        for &m in &ms {
            let u = solve(&prob, unit_grid(n, m))?;
            let r = ok(weak_form_residual(&u, &prob, &tests))?;
            let scale = 1.0 + r.residuals.iter().map(|x| x.abs()).fold(0.0, f64::max);
            ensure(r.max_form_difference <= 1e-12 * scale, || {
                format!("forms differ by {:e}", r.max_form_difference)
            })?;
            res.push(r.max_residual);
        }
        let orders: Vec<f64> = res.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        ensure(orders.iter().all(|&o| o >= 1.0), || format!("p={p} n={n}: residuals {res:?}"))?;
        details.push(format!(
            "p={p},n={n} orders {}",
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join("/")
        ));
    }
    Ok(details.join("; "))
}

fn exhaustion_existence() -> Verdict {
    let d = ConeDomain::unit(2, 1e-4).unwrap();
    let cfg = SolverConfig::default();
    let core = ok(exhaustion(&d, 1))?;
    let mut details = vec![];
    for p in [2.0, 3.0] {
        let prob = PDEProblem::new(p, 2, Field::constant(2, 1.0), Field::zero(2), 0.0).unwrap();
        let rep = ok(solve_by_exhaustion(&prob, &d, 6, 32, &cfg))?;
        let diffs: Vec<f64> = rep.differences.iter().map(|x| x.sup_difference).collect();
        ensure(rep.monotone && diffs.windows(2).all(|w| w[1] < w[0]), || format!("p={p}: differences {diffs:?}"))?;
        let u = &rep.stages.last().ok_or("no stages")?.solution;
        let g = &u.grid;
        let h = g.h_max();
        let mut checked = 0;
        for i in g.interior_nodes() {
            if !core.contains_closed(&g.point(i)) {
                continue;
            }
            let c = ok(classify_point(u, i, &prob, cfg.final_eps_reg(), 10.0 * h * h))?;
            ensure(c == PointClass::SolutionConsistent, || format!("p={p}: node {i} classified {c:?}"))?;
            checked += 1;
        }
        ensure(checked > 0, || "empty core".into())?;
        details.push(format!(
            "p={p}: differences {}, {checked} core nodes solution-consistent",
            diffs.iter().map(|x| format!("{x:.1e}")).collect::<Vec<_>>().join(" > ")
        ));
    }
    Ok(details.join("; "))
}

const DETERMINISM_CONFIG: &str = "\
domain.n = 2
domain.t_min = 0.36787944117144233
problem.p = 2
problem.f = exp(0.1,-2)
problem.omega = 0.05
problem.exact = exp(1,2,0) + monomial(1,0,2)
grid.a_count = 9
grid.refinements = 3
grid.j_max = 3
grid.nodes_per_unit = 8
verify.f_other = exp(0.3,-2)
verify.eps = 0.1
verify.samples = 200
";

// Harnack checks need a nonnegative solution.
const HARNACK_CONFIG: &str = "\
domain.n = 2
problem.p = 3
problem.f = constant(-1)
grid.a_count = 17
verify.balls = 5
verify.d_min = 0.05
verify.d_max = 0.15
";

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".meta.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run_cfg = tmp.path().join("run.cfg");
    let harnack_cfg = tmp.path().join("harnack.cfg");
    std::fs::write(&run_cfg, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    std::fs::write(&harnack_cfg, HARNACK_CONFIG).map_err(|e| e.to_string())?;
    let commands: Vec<Vec<&str>> = vec![
        vec!["solve"],
        vec!["manufacture"],
        vec!["exhaust"],
        vec!["convolve"],
        vec!["convergence-study"],
        vec!["gcondition"],
        vec!["verify", "abp"],
        vec!["verify", "hoelder"],
        vec!["verify", "harnack"],
        vec!["verify", "weakharnack"],
        vec!["verify", "oscillation"],
        vec!["verify", "comparison"],
        vec!["verify", "doubling"],
        vec!["verify", "weakform"],
    ];
    let mut files = 0;
    for cmd in &commands {
        let cfg = if cmd.last().is_some_and(|c| c.contains("harnack")) { &harnack_cfg } else { &run_cfg };
        let label = cmd.join("-");
        let mut snaps = vec![];
        for run in 0..2 {
            let out = tmp.path().join(format!("{label}-{run}"));
            let mut argv = vec!["conelab".to_string()];
            argv.extend(cmd.iter().map(|s| s.to_string()));
            argv.extend(["--config".into(), cfg.display().to_string(), "--seed".into(), "7".into()]);
            argv.extend(["--out".into(), out.display().to_string()]);
            let code = conelab::cli::run(argv);
            ensure(code == 0, || format!("{label} exited with {code}"))?;
            snaps.push(snapshot(&out));
        }
        ensure(!snaps[0].is_empty() && snaps[0] == snaps[1], || format!("{label}: outputs differ"))?;
        files += snaps[0].len();
    }
    Ok(format!("{} subcommands, {files} files byte-identical across two runs", commands.len()))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("exact-solution recovery", exact_recovery),
        ("Pucci oracle equivalence", pucci_oracle),
        ("comparison principle", comparison_principle),
        ("ABP stability", abp_stability),
        ("Hoelder estimate", hoelder_estimate),
        ("Harnack inequalities", harnack),
        ("convolutions", convolutions),
        ("psi-transform consistency", psi_transform),
        ("doubling diagnostic", doubling),
        ("viscosity to weak", viscosity_to_weak),
        ("exhaustion existence", exhaustion_existence),
        ("determinism", determinism),
    ];
    let results: Vec<(Verdict, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|(_, f)| {
                let f = *f;
                s.spawn(move || {
                    let t = Instant::now();
                    (f(), t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| (Err("panicked".into()), 0.0)))
            .collect()
    });
    let mut failed = 0;
    for (k, ((name, _), (verdict, secs))) in criteria.iter().zip(&results).enumerate() {
        match verdict {
            Ok(d) => println!("criterion {:2} PASS {name} ({secs:.1} s): {d}", k + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:2} FAIL {name} ({secs:.1} s): {d}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
