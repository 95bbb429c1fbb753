//! Local Harnack inequality and the weak Harnack inequality on metric balls `Ω_d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ball_nodes, box_distance, root};
use crate::calculus::GridFunction;
use crate::error::{ConeError, Result};
use crate::operators::PDEProblem;

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    pub center: Vec<f64>,
    pub d: f64,
    /// Sup and inf over `Ω_{d/2}`.
    pub sup: f64,
    pub inf: f64,
    /// `d^{p/(p−1)} sup_{Ω_d} |t^p f|^{1/(p−1)}`.
    pub forcing: f64,
    /// `sup / (inf + forcing)`; absent when the denominator vanishes.
    pub c_emp: Option<f64>,
}

fn check_ball(u: &GridFunction, prob: &PDEProblem, center: &[f64], d: f64) -> Result<Vec<usize>> {
    let g = &u.grid;
    if center.len() != g.ndim() || g.ndim() != prob.n {
        return Err(ConeError::Domain("center, grid and problem dimensions differ".into()));
    }
    if !(d > 0.0) {
        return Err(ConeError::Domain(format!("ball radius must be positive, got {d}")));
    }
    let gp = g.domain().g_params;
    if d > gp.k0 * gp.d0 + 1.0 {
        return Err(ConeError::Precondition(format!(
            "radius {d} exceeds K0·d0 + 1 = {}",
            gp.k0 * gp.d0 + 1.0
        )));
    }
    if box_distance(g, center) <= d {
        return Err(ConeError::Precondition(format!("ball of radius {d} is not compactly inside the domain")));
    }
    let nodes = ball_nodes(g, center, d);
    if let Some(&i) = nodes.iter().find(|&&i| u.values[i] < 0.0) {
        return Err(ConeError::Precondition(format!(
            "u is negative ({}) at node {i} inside the ball",
            u.values[i]
        )));
    }
    Ok(nodes)
}

fn forcing_sup(u: &GridFunction, prob: &PDEProblem, nodes: &[usize], part: impl Fn(f64) -> f64) -> f64 {
    nodes
        .iter()
        .map(|&i| root(part(prob.forcing_log(&u.grid.node_coords(i))), prob.p))
        .fold(0.0, f64::max)
}

pub fn harnack_ratio(u: &GridFunction, prob: &PDEProblem, center: &[f64], d: f64) -> Result<HarnackReport> {
    let outer = check_ball(u, prob, center, d)?;
    let inner = ball_nodes(&u.grid, center, 0.5 * d);
    if inner.is_empty() {
        return Err(ConeError::Precondition("no grid nodes in the half ball".into()));
    }
    let sup = inner.iter().map(|&i| u.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let inf = inner.iter().map(|&i| u.values[i]).fold(f64::INFINITY, f64::min);
    let forcing = d.powf(prob.p / (prob.p - 1.0)) * forcing_sup(u, prob, &outer, f64::abs);
    let den = inf + forcing;
    Ok(HarnackReport {
        center: center.to_vec(),
        d,
        sup,
        inf,
        forcing,
        c_emp: (den > 0.0).then(|| sup / den),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnackBatch {
    pub seed: u64,
    pub reports: Vec<HarnackReport>,
    /// Largest `C_emp` over the batch.
    pub max_c: Option<f64>,
}

/// Random balls with radius uniform in `d_range` and centers uniform over the
/// admissible region of the grid box.
pub fn harnack_batch(
    u: &GridFunction,
    prob: &PDEProblem,
    count: usize,
    d_range: (f64, f64),
    seed: u64,
) -> Result<HarnackBatch> {
    let (d_lo, d_hi) = d_range;
    if !(d_lo > 0.0 && d_hi >= d_lo) {
        return Err(ConeError::Domain(format!("bad radius range [{d_lo}, {d_hi}]")));
    }
    let g = &u.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(count);
    for _ in 0..count {
        let d = if d_hi > d_lo { rng.gen_range(d_lo..d_hi) } else { d_lo };
        let margin = d * (1.0 + 1e-9);
        let center: Vec<f64> = (0..g.ndim())
            .map(|k| {
                let (lo, hi) = (g.lower()[k] + margin, g.upper()[k] - margin);
                if hi > lo {
                    Ok(rng.gen_range(lo..hi))
                } else {
                    Err(ConeError::Precondition(format!("radius {d} does not fit in the domain")))
                }
            })
            .collect::<Result<_>>()?;
        reports.push(harnack_ratio(u, prob, &center, d)?);
    }
    let max_c = reports.iter().filter_map(|r| r.c_emp).reduce(f64::max);
    Ok(HarnackBatch { seed, reports, max_c })
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakHarnackConfig {
    /// Exponents in `(0, 1]`.
    pub p0_sweep: Vec<f64>,
    pub center: Vec<f64>,
    pub d: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakHarnackRow {
    pub p0: f64,
    /// `((1/|Ω_d|) ∫_{Ω_d} u^{p0})^{1/p0}`.
    pub mean: f64,
    /// Inf over `Ω_d`.
    pub inf: f64,
    /// `d^{p/(p−1)} sup_{Ω_{2d}} (t^p f^∓)^{1/(p−1)}`.
    pub forcing_minus: f64,
    pub forcing_plus: f64,
    pub c_minus: Option<f64>,
    pub c_plus: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakHarnackTable {
    pub center: Vec<f64>,
    pub d: f64,
    pub rows: Vec<WeakHarnackRow>,
}

/// Both forcing signs are reported: the inequality is stated with `f⁻` and
/// proved with `f⁺`.
pub fn weak_harnack_check(u: &GridFunction, prob: &PDEProblem, cfg: &WeakHarnackConfig) -> Result<WeakHarnackTable> {
    if cfg.p0_sweep.is_empty() || cfg.p0_sweep.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
        return Err(ConeError::Domain("p0 values must lie in (0, 1]".into()));
    }
    let nodes = check_ball(u, prob, &cfg.center, cfg.d)?;
    if nodes.is_empty() {
        return Err(ConeError::Precondition("no grid nodes in the ball".into()));
    }
    let g = &u.grid;
    let outer = ball_nodes(g, &cfg.center, 2.0 * cfg.d);
    let scale = cfg.d.powf(prob.p / (prob.p - 1.0));
    let forcing_minus = scale * forcing_sup(u, prob, &outer, |x| (-x).max(0.0));
    let forcing_plus = scale * forcing_sup(u, prob, &outer, |x| x.max(0.0));
    let inf = nodes.iter().map(|&i| u.values[i]).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = nodes.iter().map(|&i| g.quadrature_weight(i)).collect();
    let volume: f64 = weights.iter().sum();
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    let rows = cfg
        .p0_sweep
        .iter()
        .map(|&p0| {
            let integral: f64 = nodes.iter().zip(&weights).map(|(&i, w)| w * u.values[i].powf(p0)).sum();
            let mean = (integral / volume).powf(1.0 / p0);
            WeakHarnackRow {
                p0,
                mean,
                inf,
                forcing_minus,
                forcing_plus,
                c_minus: ratio(mean, inf + forcing_minus),
                c_plus: ratio(mean, inf + forcing_plus),
            }
        })
        .collect();
    Ok(WeakHarnackTable {
        center: cfg.center.clone(),
        d: cfg.d,
        rows,
    })
}

/// Largest `p0` whose `C_emp` (the `f⁻` column, falling back to `f⁺`) varies
/// by at most `tol` relative across the given refinements.
pub fn stable_p0(tables: &[WeakHarnackTable], tol: f64) -> Option<f64> {
    let first = tables.first()?;
    let mut best = None;
    for (r, row) in first.rows.iter().enumerate() {
        let cs: Option<Vec<f64>> = tables
            .iter()
            .map(|t| t.rows.get(r).filter(|x| x.p0 == row.p0).and_then(|x| x.c_minus.or(x.c_plus)))
            .collect();
        let Some(cs) = cs else { continue };
        let lo = cs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo > 0.0 && (hi - lo) / lo <= tol && best.is_none_or(|b| row.p0 > b) {
            best = Some(row.p0);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::LogGrid;
    use crate::field::Field;
    use crate::geometry::ConeDomain;
    use crate::solver::{solve_dirichlet, SolverConfig};
    use std::sync::Arc;

    fn grid(n: usize, t_min: f64, m: usize) -> Arc<LogGrid> {
        Arc::new(LogGrid::uniform(ConeDomain::unit(n, t_min).unwrap(), m).unwrap())
    }

    #[test]
    fn constant_has_unit_constant() {
        let g = grid(2, (-1f64).exp(), 21);
        let prob = PDEProblem::homogeneous(2.0, 2, Field::zero(2)).unwrap();
        let u = GridFunction::constant(g.clone(), 2.5);
        let c = g.node_coords(g.index_of(&[10, 10]));
        let r = harnack_ratio(&u, &prob, &c, 0.3).unwrap();
        assert_eq!(r.c_emp, Some(1.0));
        let cfg = WeakHarnackConfig {
            p0_sweep: vec![0.1, 0.5, 1.0],
            center: c,
            d: 0.2,
        };
        for row in weak_harnack_check(&u, &prob, &cfg).unwrap().rows {
            assert!((row.mean - 2.5).abs() < 1e-12);
            assert!((row.c_minus.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_t_matches_closed_form() {
        let g = grid(3, (-2f64).exp(), 21);
        let prob = PDEProblem::homogeneous(2.0, 3, Field::zero(3)).unwrap();
        let u = g.sample(|y| (-y[0]).exp());
        let c = g.node_coords(g.index_of(&[10, 10, 10]));
        let d = 4.0 * g.h(0);
        let r = harnack_ratio(&u, &prob, &c, d).unwrap();
        assert!((r.c_emp.unwrap() / d.exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let g = grid(2, (-1f64).exp(), 21);
        let prob = PDEProblem::homogeneous(2.0, 2, Field::zero(2)).unwrap();
        let c = g.node_coords(g.index_of(&[10, 10]));
        let neg = g.sample(|y| y[1] - 0.5);
        assert!(matches!(harnack_ratio(&neg, &prob, &c, 0.2), Err(ConeError::Precondition(_))));
        let u = GridFunction::constant(g.clone(), 1.0);
        assert!(harnack_ratio(&u, &prob, &c, 0.6).is_err());
        assert!(harnack_ratio(&u, &prob, &c, -0.1).is_err());
    }

    #[test]
    fn scale_invariance() {
        let g = grid(2, (-1f64).exp(), 21);
        let u = g.sample(|y| 1.0 + y[1] * y[1] - 0.3 * y[0]);
        let c = g.node_coords(g.index_of(&[9, 11]));
        for p in [2.0, 3.0] {
            let prob = PDEProblem::new(p, 2, Field::constant(2, -0.7), Field::zero(2), 0.0).unwrap();
            let base = harnack_ratio(&u, &prob, &c, 0.3).unwrap().c_emp.unwrap();
            let s: f64 = 3.7;
            let scaled_prob =
                PDEProblem::new(p, 2, Field::constant(2, -0.7 * s.powf(p - 1.0)), Field::zero(2), 0.0).unwrap();
            let scaled = harnack_ratio(&u.map(|x| s * x), &scaled_prob, &c, 0.3).unwrap().c_emp.unwrap();
            assert!((scaled / base - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn batch_is_deterministic_and_bounded() {
        let g = grid(2, (-1f64).exp(), 17);
        let prob = PDEProblem::new(2.0, 2, Field::constant(2, -1.0), Field::zero(2), 0.0).unwrap();
        let (u, _) = solve_dirichlet(&prob, g, &SolverConfig::default()).unwrap();
        let a = harnack_batch(&u, &prob, 20, (0.1, 0.3), 5).unwrap();
        let b = harnack_batch(&u, &prob, 20, (0.1, 0.3), 5).unwrap();
        assert_eq!(a.reports.len(), 20);
        assert_eq!(a.max_c, b.max_c);
        assert!(a.max_c.unwrap().is_finite());
    }

    #[test]
    fn weak_harnack_is_monotone_in_p0_and_survives_truncation() {
        let g = grid(2, (-1f64).exp(), 21);
        let prob = PDEProblem::new(2.0, 2, Field::constant(2, -1.0), Field::zero(2), 0.0).unwrap();
        let (u, _) = solve_dirichlet(&prob, g.clone(), &SolverConfig::default()).unwrap();
        let cfg = WeakHarnackConfig {
            p0_sweep: vec![0.05, 0.25, 0.5, 1.0],
            center: g.node_coords(g.index_of(&[10, 10])),
            d: 0.2,
        };
        let t = weak_harnack_check(&u, &prob, &cfg).unwrap();
        for w in t.rows.windows(2) {
            assert!(w[0].mean <= w[1].mean + 1e-14);
        }
        let sup = u.max();
        assert!(t.rows.iter().all(|r| r.mean <= sup && r.forcing_plus == 0.0));

        // truncation at the level m lowers the mean but not the constant family
        let m = 0.5 * sup;
        let um = u.map(|x| x.min(m));
        let tm = weak_harnack_check(&um, &prob, &cfg).unwrap();
        for (a, b) in t.rows.iter().zip(&tm.rows) {
            assert!(b.mean <= a.mean + 1e-14);
            assert!(b.c_minus.unwrap() <= 2.0 * a.c_minus.unwrap());
        }
        assert_eq!(stable_p0(&[t.clone(), t], 0.0), Some(1.0));
    }
}
