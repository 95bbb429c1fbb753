//! Stretched-cone geometry: points, the cone metric, metric balls, distance to
//! the analytic boundary, the exterior-mass (G) condition, the exhaustion
//! sequence and the ball-stretching map.
//!
//! Everything here works in log coordinates `(a, x)` with `a = ln t`, where the
//! cone metric `dt²/t² + dx²` becomes the Euclidean metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, ConeError, Result};

/// A point `(t, x)` of the stretched cone, `t > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl ConePoint {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Self { t, x }
    }

    /// Builds the point with log coordinate `a = ln t`.
    pub fn from_log(a: f64, x: Vec<f64>) -> Self {
        Self { t: a.exp(), x }
    }

    pub fn a(&self) -> f64 {
        self.t.ln()
    }

    /// `(ln t, x₁, …)`.
    pub fn log_coords(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.x.len() + 1);
        c.push(self.t.ln());
        c.extend_from_slice(&self.x);
        c
    }

    fn check(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return domain(format!("cone point needs t > 0, got t = {}", self.t));
        }
        Ok(())
    }
}

/// Axis-aligned box used as the cone base `X ⊂ ℝ^{n−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl BaseBox {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return domain("base box needs matching, non-empty min/max vectors");
        }
        if min.iter().zip(&max).any(|(lo, hi)| !(hi > lo)) {
            return domain("base box needs positive side lengths");
        }
        Ok(Self { min, max })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn sides(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| hi - lo).collect()
    }

    /// Euclidean distance from an interior point to `∂X` (0 outside or on it).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.min
            .iter()
            .zip(&self.max)
            .zip(x)
            .map(|((lo, hi), xi)| (xi - lo).min(hi - xi))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }

    pub fn contains_open(&self, x: &[f64]) -> bool {
        self.min
            .iter()
            .zip(&self.max)
            .zip(x)
            .all(|((lo, hi), xi)| xi > lo && xi < hi)
    }

    pub fn contains_closed(&self, x: &[f64]) -> bool {
        self.min
            .iter()
            .zip(&self.max)
            .zip(x)
            .all(|((lo, hi), xi)| xi >= lo && xi <= hi)
    }

    pub fn shrink(&self, margin: f64) -> Result<Self> {
        let min: Vec<f64> = self.min.iter().map(|v| v + margin).collect();
        let max: Vec<f64> = self.max.iter().map(|v| v - margin).collect();
        BaseBox::new(min, max)
    }
}

/// Constants of the exterior-mass condition: `R̃ ≤ K0·d`, `d ≤ d0`, mass fraction `≥ σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GConditionParams {
    pub k0: f64,
    pub d0: f64,
    pub sigma: f64,
}

impl GConditionParams {
    pub fn new(k0: f64, d0: f64, sigma: f64) -> Result<Self> {
        if !(k0 > 0.0 && d0 > 0.0 && sigma > 0.0 && sigma <= 1.0) {
            return domain(format!(
                "G-condition parameters need K0 > 0, d0 > 0, 0 < sigma <= 1 (got {k0}, {d0}, {sigma})"
            ));
        }
        Ok(Self { k0, d0, sigma })
    }
}

impl Default for GConditionParams {
    fn default() -> Self {
        Self {
            k0: 2.0,
            d0: 0.5,
            sigma: 0.5,
        }
    }
}

/// Whether the lowest `t`-face of a domain belongs to its boundary or is a
/// numerical cut of the cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BottomFace {
    /// The `t = t_min` cut of the cone; `{0}×X` is not boundary, so this face is artificial.
    Artificial,
    /// A genuine boundary face (compactly contained subdomains such as exhaustion sets).
    Analytic,
}

/// The stretched cone `(0, t_max) × X`, truncated at `t_min` for numerics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeDomain {
    pub n: usize,
    pub base: BaseBox,
    pub t_min: f64,
    pub t_max: f64,
    pub bottom: BottomFace,
    pub g_params: GConditionParams,
}

impl ConeDomain {
    /// The truncated cone `(t_min, 1) × base`, whose `t_min` face is artificial.
    pub fn new(base: BaseBox, t_min: f64, g_params: GConditionParams) -> Result<Self> {
        let n = base.dim() + 1;
        if !(t_min > 0.0 && t_min < 1.0) {
            return domain(format!("t_min must lie in (0,1), got {t_min}"));
        }
        Ok(Self {
            n,
            base,
            t_min,
            t_max: 1.0,
            bottom: BottomFace::Artificial,
            g_params,
        })
    }

    /// Unit-cube base with default G-condition parameters.
    pub fn unit(n: usize, t_min: f64) -> Result<Self> {
        if n < 2 {
            return domain("cone dimension n must be at least 2");
        }
        Self::new(BaseBox::unit(n - 1), t_min, GConditionParams::default())
    }

    pub fn a_min(&self) -> f64 {
        self.t_min.ln()
    }

    pub fn a_max(&self) -> f64 {
        self.t_max.ln()
    }

    /// Whether `z` lies in the closure of the (analytic) domain. With an
    /// artificial bottom the analytic domain extends down to `t → 0`.
    pub fn contains_closed(&self, z: &ConePoint) -> bool {
        let lower_ok = match self.bottom {
            BottomFace::Artificial => z.t > 0.0,
            BottomFace::Analytic => z.t >= self.t_min,
        };
        lower_ok && z.t <= self.t_max && z.x.len() == self.n - 1 && self.base.contains_closed(&z.x)
    }

    /// Open-set membership in log coordinates, used for exterior-mass sampling.
    fn contains_log_open(&self, c: &[f64]) -> bool {
        let a = c[0];
        let lower_ok = match self.bottom {
            BottomFace::Artificial => true,
            BottomFace::Analytic => a > self.a_min(),
        };
        lower_ok && a < self.a_max() && self.base.contains_open(&c[1..])
    }
}

/// Cone distance `sqrt((ln t − ln t₀)² + |x − x₀|²)`.
pub fn cone_distance(z: &ConePoint, z0: &ConePoint) -> Result<f64> {
    z.check()?;
    z0.check()?;
    if z.x.len() != z0.x.len() {
        return domain("cone points of different dimension");
    }
    let da = z.t.ln() - z0.t.ln();
    let dx2: f64 = z.x.iter().zip(&z0.x).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((da * da + dx2).sqrt())
}

/// Euclidean distance between log-coordinate tuples.
pub fn log_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Membership in the open metric ball `Ω_r(center)`.
pub fn cone_ball_contains(center: &ConePoint, r: f64, z: &ConePoint) -> Result<bool> {
    if !(r > 0.0) {
        return domain(format!("ball radius must be positive, got {r}"));
    }
    Ok(cone_distance(z, center)? < r)
}

/// Distance from `z` to the analytic boundary of `domain`.
///
/// Top-face minimizers keep `x`, lateral minimizers keep `t`, so the distance
/// is the smallest of the per-face gaps. `{0}×X` is never boundary; an
/// artificial bottom face does not count either.
pub fn boundary_distance(z: &ConePoint, domain_: &ConeDomain) -> Result<f64> {
    z.check()?;
    if !domain_.contains_closed(z) {
        return domain(format!("point {z:?} outside the domain closure"));
    }
    Ok(boundary_distance_log(&z.log_coords(), domain_))
}

pub(crate) fn boundary_distance_log(c: &[f64], d: &ConeDomain) -> f64 {
    let a = c[0];
    let mut best = (d.a_max() - a).max(0.0);
    if d.bottom == BottomFace::Analytic {
        best = best.min((a - d.a_min()).max(0.0));
    }
    best.min(d.base.boundary_distance(&c[1..]))
}

/// Outcome of the Monte-Carlo exterior-mass estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GConditionEstimate {
    pub k0: f64,
    pub d0: f64,
    /// Empirical infimum of the exterior mass fraction; 0 for degenerate domains.
    pub sigma: f64,
    /// Set when some sampled ball had no exterior mass.
    pub degenerate: bool,
    pub samples: usize,
    pub inner_samples: usize,
}

impl GConditionEstimate {
    pub fn params(&self) -> Result<GConditionParams> {
        GConditionParams::new(self.k0, self.d0, self.sigma)
    }
}

/// Monte-Carlo points per exterior ball.
pub const G_INNER_SAMPLES: usize = 2048;

/// Unit direction (log coordinates) from `c` to its nearest analytic boundary point.
fn nearest_boundary_direction(c: &[f64], d: &ConeDomain) -> Vec<f64> {
    let dim = c.len();
    let mut best = (d.a_max() - c[0], 0usize, 1.0);
    if d.bottom == BottomFace::Analytic {
        let gap = c[0] - d.a_min();
        if gap < best.0 {
            best = (gap, 0, -1.0);
        }
    }
    for i in 0..dim - 1 {
        let lo = c[i + 1] - d.base.min[i];
        let hi = d.base.max[i] - c[i + 1];
        if lo < best.0 {
            best = (lo, i + 1, -1.0);
        }
        if hi < best.0 {
            best = (hi, i + 1, 1.0);
        }
    }
    let mut dir = vec![0.0; dim];
    dir[best.1] = best.2;
    dir
}

/// Exterior ball used for a given interior point: radius `K0·d`, centre pushed
/// along the direction of the nearest boundary point while keeping `z` inside.
pub fn exterior_ball(z: &[f64], d: &ConeDomain) -> (Vec<f64>, f64) {
    let dist = boundary_distance_log(z, d);
    let radius = d.g_params.k0 * dist;
    let shift = (0.5 * (radius + dist)).min(0.999 * radius);
    let dir = nearest_boundary_direction(z, d);
    let center = z.iter().zip(&dir).map(|(zi, di)| zi + shift * di).collect();
    (center, radius)
}

/// Fraction of the `dt/t dx` mass of `Ω_r(center)` that lies outside the domain.
pub fn exterior_fraction(
    center: &[f64],
    radius: f64,
    d: &ConeDomain,
    inner: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dim = center.len();
    let mut outside = 0usize;
    let mut accepted = 0usize;
    let mut p = vec![0.0; dim];
    while accepted < inner {
        let mut r2 = 0.0;
        for pi in p.iter_mut() {
            *pi = rng.gen_range(-1.0..1.0);
            r2 += *pi * *pi;
        }
        if r2 >= 1.0 {
            continue;
        }
        accepted += 1;
        let q: Vec<f64> = center.iter().zip(&p).map(|(c, u)| c + radius * u).collect();
        if !d.contains_log_open(&q) {
            outside += 1;
        }
    }
    outside as f64 / inner as f64
}

/// Empirical exterior-mass constant σ over `samples` interior points drawn
/// uniformly (in log coordinates) from the truncated domain.
pub fn estimate_g_condition(d: &ConeDomain, samples: usize, seed: u64) -> Result<GConditionEstimate> {
    if samples == 0 {
        return domain("estimate_g_condition needs at least one sample");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = d.n;
    let mut sigma = f64::INFINITY;
    let mut z = vec![0.0; dim];
    for _ in 0..samples {
        loop {
            z[0] = rng.gen_range(d.a_min()..d.a_max());
            for i in 0..dim - 1 {
                z[i + 1] = rng.gen_range(d.base.min[i]..d.base.max[i]);
            }
            if boundary_distance_log(&z, d) > 0.0 {
                break;
            }
        }
        let (center, radius) = exterior_ball(&z, d);
        let frac = exterior_fraction(&center, radius, d, G_INNER_SAMPLES, &mut rng);
        sigma = sigma.min(frac);
    }
    Ok(GConditionEstimate {
        k0: d.g_params.k0,
        d0: d.g_params.d0,
        sigma,
        degenerate: sigma <= 0.0,
        samples,
        inner_samples: G_INNER_SAMPLES,
    })
}

/// The `j`-th exhaustion set `H_j`; every face of `H_j` is genuine boundary.
pub fn exhaustion(d: &ConeDomain, j: usize) -> Result<ConeDomain> {
    if j == 0 {
        return domain("exhaustion index starts at 1");
    }
    if d.t_max != 1.0 {
        return domain("exhaustion is defined for the cone with top face t = 1");
    }
    let jf = j as i32;
    let margin = 2f64.powi(-(jf + 2));
    let t_lo = (-(j as f64 + 1.0)).exp().max(d.t_min * (1.0 + 2f64.powi(-jf)));
    let t_hi = 1.0 - margin;
    if !(t_lo < t_hi) {
        return domain(format!("exhaustion set H_{j} is empty in t"));
    }
    let base = d
        .base
        .shrink(margin)
        .map_err(|_| ConeError::Domain(format!("exhaustion set H_{j} has an empty base")))?;
    Ok(ConeDomain {
        n: d.n,
        base,
        t_min: t_lo,
        t_max: t_hi,
        bottom: BottomFace::Analytic,
        g_params: d.g_params,
    })
}

/// Compact box `[t_lo, t_hi] × [x_lo, x_hi]` used to probe the exhaustion.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactBox {
    pub t_lo: f64,
    pub t_hi: f64,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
}

/// Smallest `j` with `K ⊂ H_j` (hence `K ⊂ H_i` for all `i ≥ j`).
pub fn exhaustion_index(d: &ConeDomain, k: &CompactBox) -> Result<usize> {
    for j in 1..=64 {
        let h = exhaustion(d, j)?;
        let inside = k.t_lo > h.t_min
            && k.t_hi < h.t_max
            && k.x_lo.iter().zip(&h.base.min).all(|(a, b)| a > b)
            && k.x_hi.iter().zip(&h.base.max).all(|(a, b)| a < b);
        if inside {
            return Ok(j);
        }
    }
    domain("compact set is not contained in any exhaustion set")
}

/// Stretching `T(s, y) = (s^d · t₀^{1−d}, x₀ + d·(y − x₀))`, mapping `Ω_1(center)` onto `Ω_d(center)`.
pub fn ball_rescale(center: &ConePoint, d: f64, w: &ConePoint) -> Result<ConePoint> {
    if !(d > 0.0) {
        return domain(format!("stretch factor must be positive, got {d}"));
    }
    center.check()?;
    w.check()?;
    // work with logs so that t near 0 does not underflow
    let a = d * w.t.ln() + (1.0 - d) * center.t.ln();
    let x = center
        .x
        .iter()
        .zip(&w.x)
        .map(|(x0, y)| x0 + d * (y - x0))
        .collect();
    Ok(ConePoint::new(a.exp(), x))
}
