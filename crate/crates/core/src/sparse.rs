//! Small sparse linear algebra for the Newton solves: CSR storage, a banded
//! LU with partial pivoting, and ILU(0)-preconditioned BiCGSTAB.

use crate::error::{ConeError, Result};

/// Compressed sparse row matrix with sorted, duplicate-free columns.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

/// Row-by-row builder; duplicate entries in a row are summed.
#[derive(Debug, Default)]
pub struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    pending: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            row_ptr: vec![0],
            ..Default::default()
        }
    }

    pub fn push(&mut self, col: usize, v: f64) {
        self.pending.push((col, v));
    }

    pub fn finish_row(&mut self) {
        self.pending.sort_by_key(|e| e.0);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.pending {
            if last == Some(c) {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = Some(c);
            }
        }
        self.pending.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> CsrMatrix {
        assert_eq!(self.row_ptr.len(), self.n + 1, "every row must be finished");
        CsrMatrix {
            n: self.n,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

impl CsrMatrix {
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            let (c, _) = self.row(i);
            if let (Some(&f), Some(&l)) = (c.first(), c.last()) {
                kl = kl.max(i.saturating_sub(f));
                ku = ku.max(l.saturating_sub(i));
            }
        }
        (kl, ku)
    }
}

/// Banded LU factors with partial pivoting.
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    // row i stores columns i−kl ..= i+kl+ku
    band: Vec<f64>,
    mult: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            let (c, v) = a.row(i);
            for (&j, &x) in c.iter().zip(v) {
                band[i * width + j + kl - i] += x;
            }
        }
        let at = |i: usize, j: usize| i * width + j + kl - i;
        let mut mult = vec![0.0; n * kl.max(1)];
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = band[at(k, k)].abs();
            for r in (k + 1)..=last {
                let v = band[at(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(ConeError::Singular(format!("zero pivot at row {k}")));
            }
            piv[k] = p;
            let cmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=cmax {
                    band.swap(at(k, j), at(p, j));
                }
            }
            let d = band[at(k, k)];
            for r in (k + 1)..=last {
                let l = band[at(r, k)] / d;
                mult[k * kl.max(1) + (r - k - 1)] = l;
                if l != 0.0 {
                    band[at(r, k)] = 0.0;
                    for j in (k + 1)..=cmax {
                        let u = band[at(k, j)];
                        if u != 0.0 {
                            band[at(r, j)] -= l * u;
                        }
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            width,
            band,
            mult,
            piv,
        })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, w) = (self.n, self.kl, self.width);
        let at = |i: usize, j: usize| i * w + j + kl - i;
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            if bk != 0.0 {
                for r in (k + 1)..=(k + kl).min(n - 1) {
                    b[r] -= self.mult[k * kl.max(1) + (r - k - 1)] * bk;
                }
            }
        }
        let ku_all = w - kl - 1;
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in (k + 1)..=(k + ku_all).min(n - 1) {
                s -= self.band[at(k, j)] * b[j];
            }
            b[k] = s / self.band[at(k, k)];
        }
    }
}

/// ILU(0) on the sparsity pattern of `a`.
pub struct Ilu0 {
    m: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let mut m = a.clone();
        let n = m.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.cols[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(ConeError::Singular(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for k in s..e {
                pos[m.cols[k]] = k;
            }
            for k in s..e {
                let j = m.cols[k];
                if j >= i {
                    break;
                }
                let d = m.vals[diag[j]];
                if d == 0.0 {
                    return Err(ConeError::Singular(format!("zero ILU pivot at row {j}")));
                }
                let l = m.vals[k] / d;
                m.vals[k] = l;
                for kk in (diag[j] + 1)..m.row_ptr[j + 1] {
                    let c = m.cols[kk];
                    if pos[c] != usize::MAX {
                        m.vals[pos[c]] -= l * m.vals[kk];
                    }
                }
            }
            for k in s..e {
                pos[m.cols[k]] = usize::MAX;
            }
        }
        Ok(Self { m, diag })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.m.n;
        for i in 0..n {
            let mut s = r[i];
            for k in self.m.row_ptr[i]..self.diag[i] {
                s -= self.m.vals[k] * z[self.m.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (self.diag[i] + 1)..self.m.row_ptr[i + 1] {
                s -= self.m.vals[k] * z[self.m.cols[k]];
            }
            z[i] = s / self.m.vals[self.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB; `x` holds the initial guess and the result.
pub fn bicgstab(a: &CsrMatrix, pre: &Ilu0, b: &[f64], x: &mut [f64], rtol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let mut r = vec![0.0; n];
    a.mul_vec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bn = norm(b).max(f64::MIN_POSITIVE);
    if norm(&r) <= rtol * bn {
        return Ok(0);
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ph = vec![0.0; n];
    let mut sh = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            return Err(ConeError::Singular("BiCGSTAB breakdown".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.apply(&p, &mut ph);
        a.mul_vec(&ph, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= rtol * bn {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(it);
        }
        pre.apply(&s, &mut sh);
        a.mul_vec(&sh, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if !r.iter().all(|v| v.is_finite()) {
            return Err(ConeError::NonFinite("BiCGSTAB produced a non-finite residual".into()));
        }
        if norm(&r) <= rtol * bn {
            return Ok(it);
        }
        if omega == 0.0 {
            return Err(ConeError::Singular("BiCGSTAB stagnated".into()));
        }
    }
    Err(ConeError::Singular(format!("BiCGSTAB did not converge in {max_iter} iterations")))
}

/// Solves `a x = b`: banded LU when the band storage is modest, otherwise
/// ILU(0)-BiCGSTAB.
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let (kl, ku) = a.bandwidths();
    let band_cost = a.n as f64 * (2 * kl + ku + 1) as f64;
    if band_cost <= 3.0e7 {
        let lu = BandedLu::factor(a)?;
        let mut x = b.to_vec();
        lu.solve(&mut x);
        Ok(x)
    } else {
        let pre = Ilu0::factor(a)?;
        let mut x = vec![0.0; a.n];
        bicgstab(a, &pre, b, &mut x, 1e-13, 5000)?;
        Ok(x)
    }
}
