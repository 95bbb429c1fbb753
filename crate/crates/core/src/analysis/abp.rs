//! Alexandrov–Bakelman–Pucci type bound `sup v⁺ ≤ sup_∂ v⁺ + C (K₀d₀)^{p/(p−1)} F`.

use serde::Serialize;

use super::root;
use crate::calculus::{GridFunction, NodeKind};
use crate::error::{ConeError, Result};
use crate::operators::PDEProblem;

/// One orientation of the estimate.
#[derive(Clone, Debug, Serialize)]
pub struct AbpSide {
    /// Sup over analytic-interior nodes.
    pub interior_sup: f64,
    /// Sup over analytic boundary nodes.
    pub boundary_sup: f64,
    /// Sup over the artificial `t_min` face, reported separately.
    pub artificial_sup: f64,
    /// `sup (t^p g)^{1/(p−1)}` for the relevant part `g` of `f`.
    pub forcing: f64,
    pub geometry_factor: f64,
    /// `(interior − boundary)/(geometry·forcing)`; absent when the forcing vanishes.
    pub c_emp: Option<f64>,
    /// Interior sup does not exceed the boundary sup, so any `C ≥ 0` works.
    pub vacuous: bool,
    /// The artificial face carries a larger value than the analytic boundary.
    pub artificial_dominates: bool,
}

impl AbpSide {
    fn boundary(&self) -> f64 {
        self.boundary_sup.max(self.artificial_sup)
    }

    /// `interior ≤ boundary + C·geometry·forcing + slack`.
    pub fn holds_with(&self, c: f64, slack: f64) -> bool {
        self.interior_sup <= self.boundary() + c * self.geometry_factor * self.forcing + slack
    }

    /// Amount by which the inequality with constant `c` fails (negative when it holds).
    pub fn excess(&self, c: f64) -> f64 {
        self.interior_sup - self.boundary() - c * self.geometry_factor * self.forcing
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AbpReport {
    /// `v⁺` against `f⁻ = max(−f, 0)`.
    pub subsolution: AbpSide,
    /// `v⁻` against `f⁺ = max(f, 0)`, the mirrored reading.
    pub supersolution: AbpSide,
    /// `|v|` against `|f|`.
    pub two_sided: AbpSide,
}

fn side(v: &GridFunction, prob: &PDEProblem, value: impl Fn(f64) -> f64, forcing: impl Fn(f64) -> f64) -> AbpSide {
    let g = &v.grid;
    let mut interior = 0.0f64;
    let mut boundary = 0.0f64;
    let mut artificial = 0.0f64;
    let mut fsup = 0.0f64;
    for i in 0..g.len() {
        let x = value(v.values[i]);
        match g.node_kind(i) {
            NodeKind::Interior => interior = interior.max(x),
            NodeKind::AnalyticBoundary => boundary = boundary.max(x),
            NodeKind::ArtificialBoundary => artificial = artificial.max(x),
        }
        // every node lies in Ω_{2K₀d_z} of a neighbouring interior node, so the
        // sup over the union of those balls is the sup over all nodes
        fsup = fsup.max(root(forcing(prob.forcing_log(&g.node_coords(i))), prob.p));
    }
    let gp = g.domain().g_params;
    let geometry_factor = (gp.k0 * gp.d0).powf(prob.p / (prob.p - 1.0));
    let c_emp = (fsup > 0.0).then(|| (interior - boundary.max(artificial)) / (geometry_factor * fsup));
    AbpSide {
        interior_sup: interior,
        boundary_sup: boundary,
        artificial_sup: artificial,
        forcing: fsup,
        geometry_factor,
        c_emp,
        vacuous: interior <= boundary.max(artificial) + 1e-13,
        artificial_dominates: artificial > boundary,
    }
}

pub fn abp_check(v: &GridFunction, prob: &PDEProblem) -> Result<AbpReport> {
    let g = &v.grid;
    if g.ndim() != prob.n {
        return Err(ConeError::Domain("problem and grid dimensions differ".into()));
    }
    if !(0..g.len()).any(|i| g.node_kind(i) == NodeKind::AnalyticBoundary) {
        return Err(ConeError::Precondition("grid has no analytic boundary nodes".into()));
    }
    Ok(AbpReport {
        subsolution: side(v, prob, |x| x.max(0.0), |tf| (-tf).max(0.0)),
        supersolution: side(v, prob, |x| (-x).max(0.0), |tf| tf.max(0.0)),
        two_sided: side(v, prob, f64::abs, f64::abs),
    })
}
