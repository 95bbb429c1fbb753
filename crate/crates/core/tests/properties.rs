use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use conelab::analysis::{comparison_check, doubling_diagnostic, doubling_report, harnack_ratio, DoublingMode};
use conelab::calculus::LogGrid;
use conelab::field::Field;
use conelab::geometry::ConeDomain;
use conelab::operators::{psi, psi_inverse, pucci_minus, pucci_plus, q_matrix, PDEProblem, PucciParams, TransformParams};
use conelab::regularization::inf_convolution;

fn grid(m: usize) -> Arc<LogGrid> {
    Arc::new(LogGrid::uniform(ConeDomain::unit(2, (-1f64).exp()).unwrap(), m).unwrap())
}

fn trig(g: &Arc<LogGrid>, c: [f64; 4]) -> conelab::calculus::GridFunction {
    g.sample(move |y| c[0] * (c[1] * y[0]).sin() + c[2] * (c[3] * y[1]).cos())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_round_trip(k in 0.1f64..10.0, s in -3.0f64..20.0) {
        let params = TransformParams::new(k).unwrap();
        let v = psi(s, params);
        prop_assert!(v < k);
        let back = psi_inverse(v, params).unwrap();
        prop_assert!((psi(back, params) - v).abs() <= 1e-14 * k.max(v.abs()));
    }

    #[test]
    fn pucci_brackets_the_p_laplace_trace(
        p in 2.0f64..6.0,
        a in prop::collection::vec(-3.0f64..3.0, 9),
        g in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let m = DMatrix::from_row_slice(3, 3, &a);
        let x = (&m + m.transpose()) * 0.5;
        let params = PucciParams::for_p(p).unwrap();
        prop_assume!(g.iter().any(|v| v.abs() > 1e-6));
        let tr = (q_matrix(&g, p).unwrap() * &x).trace();
        let slack = 1e-12 * (1.0 + x.norm());
        prop_assert!(pucci_minus(&x, params).unwrap() <= tr + slack);
        prop_assert!(tr <= pucci_plus(&x, params).unwrap() + slack);
        // M⁻(X) = −M⁺(−X)
        prop_assert!((pucci_minus(&x, params).unwrap() + pucci_plus(&(-&x), params).unwrap()).abs() <= slack);
    }

    #[test]
    fn doubling_is_monotone_and_window_exact(
        c1 in prop::array::uniform4(0.1f64..2.0),
        c2 in prop::array::uniform4(0.1f64..2.0),
    ) {
        let g = grid(9);
        let (z1, z2) = (trig(&g, c1), trig(&g, c2));
        let alphas = [0.5, 5.0, 50.0, 500.0];
        let rep = doubling_report(&z1, &z2, &alphas, DoublingMode::Windowed).unwrap();
        prop_assert!(rep.monotone);
        prop_assert!(rep.rows.iter().all(|r| r.m_alpha >= rep.diagonal_sup - 1e-12));
        prop_assert_eq!(rep.rows, doubling_diagnostic(&z1, &z2, &alphas, DoublingMode::Full).unwrap());
    }

    #[test]
    fn harnack_ratio_is_scale_invariant(scale in 0.01f64..100.0, shift in 0.5f64..3.0) {
        let g = grid(17);
        let prob = PDEProblem::homogeneous(2.0, 2, Field::zero(2)).unwrap();
        let u = g.sample(move |y| shift + y[0] * y[1] + (y[0] - y[1]).exp());
        let v = u.map(|x| scale * x);
        let c = [-0.5, 0.5];
        let a = harnack_ratio(&u, &prob, &c, 0.3).unwrap().c_emp.unwrap();
        let b = harnack_ratio(&v, &prob, &c, 0.3).unwrap().c_emp.unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn inf_convolution_orders_and_commutes_with_constants(
        c in prop::array::uniform4(0.1f64..2.0),
        shift in -2.0f64..2.0,
        eps in 0.01f64..0.2,
    ) {
        let g = grid(9);
        let u = trig(&g, c);
        let ue = inf_convolution(&u, eps).unwrap();
        let coarser = inf_convolution(&u, 2.0 * eps).unwrap();
        let shifted = inf_convolution(&u.map(|x| x + shift), eps).unwrap();
        for i in 0..g.len() {
            prop_assert!(coarser.values[i] <= ue.values[i] && ue.values[i] <= u.values[i]);
            prop_assert!((shifted.values[i] - ue.values[i] - shift).abs() <= 1e-12 * (1.0 + shift.abs() + u.values[i].abs()));
        }
    }

    #[test]
    fn comparison_accepts_ordered_pairs(c in prop::array::uniform4(0.1f64..2.0), lift in 0.0f64..1.0) {
        let g = grid(9);
        let prob = PDEProblem::new(2.0, 2, Field::custom(|y: &[f64]| (-2.0 * y[0]).exp()), Field::zero(2), 1.0).unwrap();
        let u = trig(&g, c);
        let v = u.map(|x| x + lift);
        let r = comparison_check(&u, &v, &prob, 0.0).unwrap();
        prop_assert_eq!(r.violations, 0);
        prop_assert!(r.worst_gap <= -lift + 1e-12);
    }
}
