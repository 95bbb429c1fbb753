use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{domain, ConeError, Result};
use crate::geometry::{BaseBox, BottomFace, ConeDomain, ConePoint, GConditionParams};

/// Where a node sits relative to the boundary of the computational box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    /// On `{t_max}×X`, on the lateral faces, or on an analytic bottom face.
    AnalyticBoundary,
    /// Only on the numerical `t = t_min` cut.
    ArtificialBoundary,
}

/// Tensor grid on `[ln t_min, ln t_max] × base`, uniform per axis.
///
/// Axis 0 is the log coordinate `a`; axes `1..n` are the base coordinates.
/// Storage is row-major with the `a` axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct LogGrid {
    domain: ConeDomain,
    dims: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    h: Vec<f64>,
    strides: Vec<usize>,
}

impl LogGrid {
    pub fn new(domain: ConeDomain, a_count: usize, x_counts: &[usize]) -> Result<Self> {
        if x_counts.len() != domain.n - 1 {
            return domain_err(format!(
                "grid needs {} base node counts, got {}",
                domain.n - 1,
                x_counts.len()
            ));
        }
        let mut dims = vec![a_count];
        dims.extend_from_slice(x_counts);
        if dims.iter().any(|&c| c < 3) {
            return domain_err("every grid axis needs at least 3 nodes".to_string());
        }
        let mut lo = vec![domain.a_min()];
        let mut hi = vec![domain.a_max()];
        lo.extend_from_slice(&domain.base.min);
        hi.extend_from_slice(&domain.base.max);
        let h: Vec<f64> = (0..dims.len())
            .map(|k| (hi[k] - lo[k]) / (dims[k] - 1) as f64)
            .collect();
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len() - 1).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Self {
            domain,
            dims,
            lo,
            hi,
            h,
            strides,
        })
    }

    /// Same node count `m` on every axis.
    pub fn uniform(domain: ConeDomain, m: usize) -> Result<Self> {
        let xs = vec![m; domain.n - 1];
        Self::new(domain, m, &xs)
    }

    pub fn domain(&self) -> &ConeDomain {
        &self.domain
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self, axis: usize) -> f64 {
        self.h[axis]
    }

    pub fn spacings(&self) -> &[f64] {
        &self.h
    }

    /// Largest spacing over all axes.
    pub fn h_max(&self) -> f64 {
        self.h.iter().cloned().fold(0.0, f64::max)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo
    }

    pub fn upper(&self) -> &[f64] {
        &self.hi
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.dims[axis] {
            self.hi[axis]
        } else {
            self.lo[axis] + i as f64 * self.h[axis]
        }
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut m = vec![0; self.dims.len()];
        for k in 0..self.dims.len() {
            m[k] = idx / self.strides[k];
            idx %= self.strides[k];
        }
        m
    }

    pub fn index_of(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Index along one axis of a flat node index.
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.dims[axis]
    }

    /// Log coordinates `(a, x…)` of a node.
    pub fn node_coords(&self, idx: usize) -> Vec<f64> {
        (0..self.dims.len())
            .map(|k| self.coord(k, self.axis_index(idx, k)))
            .collect()
    }

    pub fn node_a(&self, idx: usize) -> f64 {
        self.coord(0, self.axis_index(idx, 0))
    }

    pub fn point(&self, idx: usize) -> ConePoint {
        let c = self.node_coords(idx);
        ConePoint::from_log(c[0], c[1..].to_vec())
    }

    /// Neighbour `offset` steps along `axis`, if it exists.
    pub fn neighbor(&self, idx: usize, axis: usize, offset: isize) -> Option<usize> {
        let i = self.axis_index(idx, axis) as isize + offset;
        if i < 0 || i >= self.dims[axis] as isize {
            None
        } else {
            Some((idx as isize + offset * self.strides[axis] as isize) as usize)
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        (0..self.dims.len()).any(|k| {
            let i = self.axis_index(idx, k);
            i == 0 || i + 1 == self.dims[k]
        })
    }

    /// Nodes at least `ring` steps away from every face.
    pub fn is_deep_interior(&self, idx: usize, ring: usize) -> bool {
        (0..self.dims.len()).all(|k| {
            let i = self.axis_index(idx, k);
            i >= ring && i + ring < self.dims[k]
        })
    }

    pub fn node_kind(&self, idx: usize) -> NodeKind {
        let mut artificial = false;
        for k in 0..self.dims.len() {
            let i = self.axis_index(idx, k);
            let last = i + 1 == self.dims[k];
            if k == 0 && i == 0 {
                match self.domain.bottom {
                    BottomFace::Analytic => return NodeKind::AnalyticBoundary,
                    BottomFace::Artificial => artificial = true,
                }
            } else if i == 0 || last {
                return NodeKind::AnalyticBoundary;
            }
        }
        if artificial {
            NodeKind::ArtificialBoundary
        } else {
            NodeKind::Interior
        }
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| !self.is_boundary(i))
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.is_boundary(i))
    }

    /// Trapezoidal weight of a node for `∫ · da dx`.
    pub fn quadrature_weight(&self, idx: usize) -> f64 {
        (0..self.dims.len())
            .map(|k| {
                let i = self.axis_index(idx, k);
                if i == 0 || i + 1 == self.dims[k] {
                    0.5 * self.h[k]
                } else {
                    self.h[k]
                }
            })
            .product()
    }

    /// The same domain with every spacing halved.
    pub fn refined(&self) -> Result<Self> {
        let a = 2 * self.dims[0] - 1;
        let xs: Vec<usize> = self.dims[1..].iter().map(|&c| 2 * c - 1).collect();
        Self::new(self.domain.clone(), a, &xs)
    }

    /// Samples a function of log coordinates at every node.
    pub fn sample(self: &Arc<Self>, mut f: impl FnMut(&[f64]) -> f64) -> GridFunction {
        let values = (0..self.len()).map(|i| f(&self.node_coords(i))).collect();
        GridFunction {
            grid: Arc::clone(self),
            values,
        }
    }
}

fn domain_err<T>(msg: String) -> Result<T> {
    domain(msg)
}

/// Scalar field on a [`LogGrid`], i.e. `ū(a, x) = u(eᵃ, x)` at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Arc<LogGrid>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<LogGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!(
                "grid function has {} values for {} nodes",
                values.len(),
                grid.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ConeError::NonFinite(format!("grid value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<LogGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn constant(grid: Arc<LogGrid>, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Multilinear interpolation at log coordinates inside the grid box.
    pub fn interpolate(&self, c: &[f64]) -> Option<f64> {
        let g = &self.grid;
        let nd = g.ndim();
        let mut base = vec![0usize; nd];
        let mut frac = vec![0.0; nd];
        for k in 0..nd {
            let tol = 1e-12 * (g.hi[k] - g.lo[k]).abs().max(1.0);
            if c[k] < g.lo[k] - tol || c[k] > g.hi[k] + tol {
                return None;
            }
            let s = ((c[k] - g.lo[k]) / g.h[k]).clamp(0.0, (g.dims[k] - 1) as f64);
            let i = (s.floor() as usize).min(g.dims[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << nd) {
            let mut w = 1.0;
            let mut idx = 0;
            for k in 0..nd {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx += (base[k] + bit) * g.strides[k];
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        Some(acc)
    }

    /// Text form: a header line followed by one value per line, 17 significant digits.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let d = g.domain();
        let mut head: Vec<String> = vec![d.n.to_string(), g.dims[0].to_string()];
        head.extend(g.dims[1..].iter().map(|c| c.to_string()));
        head.push(fmt17(d.a_min()));
        head.push(fmt17(d.t_min));
        for (lo, hi) in d.base.min.iter().zip(&d.base.max) {
            head.push(fmt17(*lo));
            head.push(fmt17(*hi));
        }
        if d.t_max != 1.0 || d.bottom == BottomFace::Analytic {
            // subdomains (exhaustion sets) carry their top face and bottom kind
            head.push(fmt17(d.a_max()));
            head.push(if d.bottom == BottomFace::Analytic { "1" } else { "0" }.to_string());
        }
        let mut out = head.join(",");
        out.push('\n');
        for v in &self.values {
            let _ = writeln!(out, "{}", fmt17(*v));
        }
        out
    }

    /// Lines starting with `#` are comments.
    pub fn from_text(text: &str, g_params: GConditionParams) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| ConeError::Parse("empty grid function file".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        let int = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|e| ConeError::Parse(format!("bad integer '{s}' in header: {e}")))
        };
        let float = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| ConeError::Parse(format!("bad number '{s}' in header: {e}")))
        };
        let n = int(fields.first().copied().unwrap_or(""))?;
        if n < 2 {
            return Err(ConeError::Parse("header dimension must be at least 2".into()));
        }
        let standard = 3 * n + 1;
        if fields.len() != standard && fields.len() != standard + 2 {
            return Err(ConeError::Parse(format!(
                "header has {} fields, expected {standard} for n = {n}",
                fields.len()
            )));
        }
        let a_count = int(fields[1])?;
        let x_counts: Vec<usize> = fields[2..n + 1].iter().map(|s| int(s)).collect::<Result<_>>()?;
        let _a_min = float(fields[n + 1])?;
        let t_min = float(fields[n + 2])?;
        let mut min = Vec::with_capacity(n - 1);
        let mut max = Vec::with_capacity(n - 1);
        for k in 0..n - 1 {
            min.push(float(fields[n + 3 + 2 * k])?);
            max.push(float(fields[n + 4 + 2 * k])?);
        }
        let base = BaseBox::new(min, max)?;
        let mut dom = ConeDomain {
            n,
            base,
            t_min,
            t_max: 1.0,
            bottom: BottomFace::Artificial,
            g_params,
        };
        if fields.len() == standard + 2 {
            dom.t_max = float(fields[standard])?.exp();
            dom.bottom = if fields[standard + 1] == "1" {
                BottomFace::Analytic
            } else {
                BottomFace::Artificial
            };
        }
        let grid = Arc::new(LogGrid::new(dom, a_count, &x_counts)?);
        let values: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| ConeError::Parse(format!("bad value '{l}': {e}")))
            })
            .collect::<Result<_>>()?;
        GridFunction::new(grid, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path, g_params: GConditionParams) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, g_params)
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
