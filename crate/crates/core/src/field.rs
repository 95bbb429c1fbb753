//! Scalar fields over the cone, evaluated in log coordinates `(a, x)`.
//!
//! [`FieldExpr`] is a closed-form sum of separable terms
//! `c · Π_k y_k^{e_k} e^{r_k y_k}` (with `y = (a, x₁, …)`) that carries exact
//! first and second derivatives; [`Field`] adds sampled and manufactured data.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use crate::calculus::GridFunction;
use crate::error::{ConeError, Result};
use crate::geometry::GConditionParams;

/// One separable term `coef · Π_k y_k^{pows[k]} · exp(rates[k]·y_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub pows: Vec<u32>,
    pub rates: Vec<f64>,
}

impl Term {
    fn factor(&self, k: usize, y: f64) -> [f64; 3] {
        let e = self.pows[k] as i32;
        let r = self.rates[k];
        let ex = (r * y).exp();
        let pw = |j: i32| if j < 0 { 0.0 } else { y.powi(j) };
        let ef = e as f64;
        let v = pw(e) * ex;
        let d1 = (ef * pw(e - 1) + r * pw(e)) * ex;
        let d2 = (ef * (ef - 1.0) * pw(e - 2) + 2.0 * r * ef * pw(e - 1) + r * r * pw(e)) * ex;
        [v, d1, d2]
    }
}

/// Closed-form field with analytic derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldExpr {
    pub dim: usize,
    pub terms: Vec<Term>,
}

impl FieldExpr {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: vec![] }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(dim, c, &[])
    }

    /// `c · a^{pows[0]} x₁^{pows[1]} …` (missing powers are 0).
    pub fn monomial(dim: usize, c: f64, pows: &[u32]) -> Self {
        let mut p = vec![0; dim];
        p[..pows.len()].copy_from_slice(pows);
        Self {
            dim,
            terms: vec![Term {
                coef: c,
                pows: p,
                rates: vec![0.0; dim],
            }],
        }
    }

    /// `c · exp(rates · y)`; `exponential(dim, c, &[k])` is `c·t^k`.
    pub fn exponential(dim: usize, c: f64, rates: &[f64]) -> Self {
        let mut r = vec![0.0; dim];
        r[..rates.len()].copy_from_slice(rates);
        Self {
            dim,
            terms: vec![Term {
                coef: c,
                pows: vec![0; dim],
                rates: r,
            }],
        }
    }

    /// `ū = a`, i.e. `u = ln t`.
    pub fn log_t(dim: usize) -> Self {
        Self::monomial(dim, 1.0, &[1])
    }

    /// The p-harmonic profile `t^{(p−n)/(p−1)}` (or `ln t` when `n = p`).
    pub fn p_harmonic_profile(dim: usize, p: f64) -> Self {
        let n = dim as f64;
        if (n - p).abs() < 1e-14 {
            Self::log_t(dim)
        } else {
            Self::exponential(dim, 1.0, &[(p - n) / (p - 1.0)])
        }
    }

    pub fn plus(mut self, other: FieldExpr) -> Self {
        assert_eq!(self.dim, other.dim, "adding fields of different dimension");
        self.terms.extend(other.terms);
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.coef *= s;
        }
        self
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * (0..self.dim).map(|k| t.factor(k, y[k])[0]).product::<f64>())
            .sum()
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for t in &self.terms {
            let f: Vec<[f64; 3]> = (0..self.dim).map(|k| t.factor(k, y[k])).collect();
            for (k, gk) in g.iter_mut().enumerate() {
                let mut prod = t.coef;
                for (l, fl) in f.iter().enumerate() {
                    prod *= if l == k { fl[1] } else { fl[0] };
                }
                *gk += prod;
            }
        }
        g
    }

    /// Row-major `dim × dim` Hessian.
    pub fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        for t in &self.terms {
            let f: Vec<[f64; 3]> = (0..d).map(|k| t.factor(k, y[k])).collect();
            for k in 0..d {
                for l in k..d {
                    let mut prod = t.coef;
                    for (m, fm) in f.iter().enumerate() {
                        prod *= if k == l && m == k {
                            fm[2]
                        } else if m == k || m == l {
                            fm[1]
                        } else {
                            fm[0]
                        };
                    }
                    h[k * d + l] += prod;
                    if k != l {
                        h[l * d + k] += prod;
                    }
                }
            }
        }
        h
    }

    /// Parses `zero`, `constant(c)`, `log`, `power(c,k)`, `exp(c,r_a,r_x1,…)`,
    /// `monomial(c,e_a,e_x1,…)` and sums of these joined by `+`.
    pub fn parse(s: &str, dim: usize) -> Result<Self> {
        let mut out = FieldExpr::zero(dim);
        for part in split_top_level(s) {
            let part = part.trim();
            if part.is_empty() {
                return Err(ConeError::Parse(format!("empty term in field '{s}'")));
            }
            let (name, args) = match part.find('(') {
                Some(i) => {
                    if !part.ends_with(')') {
                        return Err(ConeError::Parse(format!("unbalanced parentheses in '{part}'")));
                    }
                    (part[..i].trim(), parse_args(&part[i + 1..part.len() - 1])?)
                }
                None => (part, vec![]),
            };
            let need = |k: usize| -> Result<()> {
                if args.len() < k || (name != "term" && args.len() > dim + 1) {
                    Err(ConeError::Parse(format!("wrong argument count in '{part}'")))
                } else {
                    Ok(())
                }
            };
            let term = match name {
                "zero" => FieldExpr::zero(dim),
                "constant" => {
                    need(1)?;
                    FieldExpr::constant(dim, args[0])
                }
                "log" => FieldExpr::log_t(dim).scaled(args.first().copied().unwrap_or(1.0)),
                "power" => {
                    need(2)?;
                    FieldExpr::exponential(dim, args[0], &[args[1]])
                }
                "exp" => {
                    need(1)?;
                    FieldExpr::exponential(dim, args[0], &args[1..])
                }
                "monomial" => {
                    need(1)?;
                    let pows = parse_pows(&args[1..], part)?;
                    FieldExpr::monomial(dim, args[0], &pows)
                }
                "term" => {
                    if args.len() != 1 + 2 * dim {
                        return Err(ConeError::Parse(format!("term needs {} arguments in '{part}'", 1 + 2 * dim)));
                    }
                    let pows = parse_pows(&args[1..=dim], part)?;
                    FieldExpr {
                        dim,
                        terms: vec![Term {
                            coef: args[0],
                            pows,
                            rates: args[dim + 1..].to_vec(),
                        }],
                    }
                }
                other => return Err(ConeError::Parse(format!("unknown field kind '{other}'"))),
            };
            out = out.plus(term);
        }
        Ok(out)
    }
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "zero");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            let has_pow = t.pows.iter().any(|&e| e > 0);
            let has_rate = t.rates.iter().any(|&r| r != 0.0);
            if has_pow && has_rate {
                write!(f, "term({:?}", t.coef)?;
                for e in &t.pows {
                    write!(f, ",{e}")?;
                }
                for r in &t.rates {
                    write!(f, ",{r:?}")?;
                }
                write!(f, ")")?;
            } else if has_rate {
                write!(f, "exp({:?}", t.coef)?;
                for r in &t.rates {
                    write!(f, ",{r:?}")?;
                }
                write!(f, ")")?;
            } else {
                write!(f, "monomial({:?}", t.coef)?;
                for e in &t.pows {
                    write!(f, ",{e}")?;
                }
                write!(f, ")")?;
            }
        }
        Ok(())
    }
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    let chars: Vec<char> = s.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        // a '+' directly after 'e'/'E' belongs to a number's exponent
        let exponent_sign = i > 0 && matches!(chars[i - 1], 'e' | 'E') && depth > 0;
        if c == '+' && depth == 0 && !exponent_sign {
            parts.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    parts.push(cur);
    parts
}

fn parse_pows(args: &[f64], part: &str) -> Result<Vec<u32>> {
    args.iter()
        .map(|&e| {
            if e < 0.0 || e.fract() != 0.0 || e > 16.0 {
                Err(ConeError::Parse(format!("bad power {e} in '{part}'")))
            } else {
                Ok(e as u32)
            }
        })
        .collect()
}

fn parse_args(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(vec![]);
    }
    s.split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|e| ConeError::Parse(format!("bad number '{}': {e}", a.trim())))
        })
        .collect()
}

type Sampler = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar data over the cone (forcing `f` or Dirichlet data), as a function of `(a, x)`.
#[derive(Clone)]
pub enum Field {
    Expr(FieldExpr),
    /// Multilinear interpolation of stored grid values.
    Sampled(Arc<GridFunction>),
    /// Forcing that makes `u_star` an exact solution for exponent `p`.
    Manufactured { u_star: FieldExpr, p: f64 },
    Custom(Sampler),
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Expr(e) => write!(f, "Expr({e})"),
            Field::Sampled(g) => write!(f, "Sampled({:?})", g.grid.dims()),
            Field::Manufactured { u_star, p } => write!(f, "Manufactured({u_star}, p = {p})"),
            Field::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Field {
    pub fn zero(dim: usize) -> Self {
        Field::Expr(FieldExpr::zero(dim))
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Field::Expr(FieldExpr::constant(dim, c))
    }

    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Field::Custom(Arc::new(f))
    }

    /// Value at log coordinates `(a, x…)`.
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Field::Expr(e) => e.value(y),
            Field::Sampled(g) => g.interpolate(y).unwrap_or(f64::NAN),
            Field::Manufactured { u_star, p } => {
                let n = y.len() as f64;
                let g = u_star.gradient(y);
                let h = u_star.hessian(y);
                let r = crate::operators::log_operator(&g, &h, *p, n, 0.0);
                r * (-p * y[0]).exp()
            }
            Field::Custom(f) => f(y),
        }
    }

    pub fn is_identically_zero(&self) -> bool {
        matches!(self, Field::Expr(e) if e.terms.iter().all(|t| t.coef == 0.0))
    }

    /// Config syntax: the [`FieldExpr`] grammar or `file(path)`.
    pub fn parse(s: &str, dim: usize, g_params: GConditionParams) -> Result<Self> {
        let t = s.trim();
        if let Some(rest) = t.strip_prefix("file(") {
            let path = rest
                .strip_suffix(')')
                .ok_or_else(|| ConeError::Parse(format!("unbalanced parentheses in '{t}'")))?;
            let g = GridFunction::read(&PathBuf::from(path.trim()), g_params)?;
            if g.grid.ndim() != dim {
                return Err(ConeError::Parse(format!("field file '{path}' has the wrong dimension")));
            }
            return Ok(Field::Sampled(Arc::new(g)));
        }
        Ok(Field::Expr(FieldExpr::parse(t, dim)?))
    }
}
