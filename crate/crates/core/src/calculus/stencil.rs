//! Second-order finite differences in log coordinates. By the flattening
//! `t = eᵃ`, `∇_𝔹 u` and `∇²_𝔹 u` are the plain gradient and Hessian of `ū`.

use nalgebra::DMatrix;

use super::grid::GridFunction;

/// A stencil evaluation and whether any one-sided stencil was needed.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil<T> {
    pub value: T,
    pub one_sided: bool,
}

/// First derivative along `axis` at `idx`; central inside, second-order one-sided at faces.
pub fn first_difference(u: &GridFunction, idx: usize, axis: usize) -> (f64, bool) {
    let g = &u.grid;
    let h = g.h(axis);
    let v = &u.values;
    match (g.neighbor(idx, axis, -1), g.neighbor(idx, axis, 1)) {
        (Some(m), Some(p)) => ((v[p] - v[m]) / (2.0 * h), false),
        (None, Some(p)) => {
            let p2 = g.neighbor(idx, axis, 2).expect("axis has at least 3 nodes");
            ((-3.0 * v[idx] + 4.0 * v[p] - v[p2]) / (2.0 * h), true)
        }
        (Some(m), None) => {
            let m2 = g.neighbor(idx, axis, -2).expect("axis has at least 3 nodes");
            ((3.0 * v[idx] - 4.0 * v[m] + v[m2]) / (2.0 * h), true)
        }
        (None, None) => unreachable!("axis with a single node"),
    }
}

fn second_difference(u: &GridFunction, idx: usize, axis: usize) -> (f64, bool) {
    let g = &u.grid;
    let h2 = g.h(axis).powi(2);
    let v = &u.values;
    match (g.neighbor(idx, axis, -1), g.neighbor(idx, axis, 1)) {
        (Some(m), Some(p)) => ((v[p] - 2.0 * v[idx] + v[m]) / h2, false),
        (None, Some(_)) | (Some(_), None) => {
            let dir: isize = if g.neighbor(idx, axis, 1).is_some() { 1 } else { -1 };
            let at = |k: isize| g.neighbor(idx, axis, dir * k);
            match (at(1), at(2), at(3)) {
                (Some(a1), Some(a2), Some(a3)) => {
                    ((2.0 * v[idx] - 5.0 * v[a1] + 4.0 * v[a2] - v[a3]) / h2, true)
                }
                (Some(a1), Some(a2), None) => ((v[idx] - 2.0 * v[a1] + v[a2]) / h2, true),
                _ => unreachable!("axis has at least 3 nodes"),
            }
        }
        (None, None) => unreachable!("axis with a single node"),
    }
}

/// `D_k D_l u` at `idx`: the difference along `k` of first differences along `l`.
fn mixed_difference(u: &GridFunction, idx: usize, k: usize, l: usize) -> (f64, bool) {
    let g = &u.grid;
    let h = g.h(k);
    let dl = |j: usize| first_difference(u, j, l);
    match (g.neighbor(idx, k, -1), g.neighbor(idx, k, 1)) {
        (Some(m), Some(p)) => {
            let (a, sa) = dl(p);
            let (b, sb) = dl(m);
            ((a - b) / (2.0 * h), sa || sb)
        }
        (None, Some(p)) => {
            let p2 = g.neighbor(idx, k, 2).unwrap();
            let (a0, _) = dl(idx);
            let (a1, _) = dl(p);
            let (a2, _) = dl(p2);
            ((-3.0 * a0 + 4.0 * a1 - a2) / (2.0 * h), true)
        }
        (Some(m), None) => {
            let m2 = g.neighbor(idx, k, -2).unwrap();
            let (a0, _) = dl(idx);
            let (a1, _) = dl(m);
            let (a2, _) = dl(m2);
            ((3.0 * a0 - 4.0 * a1 + a2) / (2.0 * h), true)
        }
        (None, None) => unreachable!(),
    }
}

/// Discrete cone gradient `(∂ₐū, ∂_{x₁}ū, …)` at a node.
pub fn b_gradient(u: &GridFunction, idx: usize) -> Stencil<Vec<f64>> {
    let nd = u.grid.ndim();
    let mut one_sided = false;
    let value = (0..nd)
        .map(|k| {
            let (d, s) = first_difference(u, idx, k);
            one_sided |= s;
            d
        })
        .collect();
    Stencil { value, one_sided }
}

/// Discrete cone Hessian at a node, symmetrised.
pub fn b_hessian(u: &GridFunction, idx: usize) -> Stencil<DMatrix<f64>> {
    let nd = u.grid.ndim();
    let mut one_sided = false;
    let mut m = DMatrix::zeros(nd, nd);
    for k in 0..nd {
        let (d, s) = second_difference(u, idx, k);
        one_sided |= s;
        m[(k, k)] = d;
        for l in (k + 1)..nd {
            let (a, sa) = mixed_difference(u, idx, k, l);
            let (b, sb) = mixed_difference(u, idx, l, k);
            one_sided |= sa || sb;
            let c = 0.5 * (a + b);
            m[(k, l)] = c;
            m[(l, k)] = c;
        }
    }
    Stencil {
        value: m,
        one_sided,
    }
}

/// Central gradient and Hessian at an interior node, written into caller buffers.
/// `hess` is row-major `nd × nd`.
pub fn interior_derivatives(u: &GridFunction, idx: usize, grad: &mut [f64], hess: &mut [f64]) {
    let g = &u.grid;
    let nd = g.ndim();
    let v = &u.values;
    let c = v[idx];
    for k in 0..nd {
        let s = g.stride(k);
        let h = g.h(k);
        let p = v[idx + s];
        let m = v[idx - s];
        grad[k] = (p - m) / (2.0 * h);
        hess[k * nd + k] = (p - 2.0 * c + m) / (h * h);
        for l in (k + 1)..nd {
            let t = g.stride(l);
            let hl = g.h(l);
            let val = (v[idx + s + t] - v[idx + s - t] - v[idx - s + t] + v[idx - s - t]) / (4.0 * h * hl);
            hess[k * nd + l] = val;
            hess[l * nd + k] = val;
        }
    }
}
