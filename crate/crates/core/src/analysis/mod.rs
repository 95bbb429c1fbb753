//! Empirical checks of the estimates: ABP, Hölder, Harnack, comparison,
//! doubling of variables and the weak form.

pub mod abp;
pub mod comparison;
pub mod harnack;
pub mod hoelder;
pub mod weakform;

pub use abp::{abp_check, AbpReport, AbpSide};
pub use comparison::{
    calibrate_forcing_order, comparison_check, doubling_diagnostic, doubling_report, ComparisonReport, DoublingDiagnostic,
    DoublingMode, DoublingReport, ForcingOrder,
};
pub use harnack::{
    harnack_batch, harnack_ratio, stable_p0, weak_harnack_check, HarnackBatch, HarnackReport, WeakHarnackConfig,
    WeakHarnackRow, WeakHarnackTable,
};
pub use hoelder::{hoelder_check, hoelder_sweep, oscillation_decay, HoelderCheck, HoelderSweep, OscillationReport};
pub use weakform::{bump_family, weak_form_residual, CosineBump, WeakFormReport};

use crate::calculus::LogGrid;
use crate::geometry::log_distance;

/// Nodes with log distance `≤ r` from `center` (closed ball, small tolerance).
pub(crate) fn ball_nodes(grid: &LogGrid, center: &[f64], r: f64) -> Vec<usize> {
    let tol = 1e-12 * (1.0 + r);
    (0..grid.len())
        .filter(|&i| log_distance(&grid.node_coords(i), center) <= r + tol)
        .collect()
}

/// Distance from `c` to the faces of the grid box.
pub(crate) fn box_distance(grid: &LogGrid, c: &[f64]) -> f64 {
    (0..grid.ndim())
        .map(|k| (c[k] - grid.lower()[k]).min(grid.upper()[k] - c[k]))
        .fold(f64::INFINITY, f64::min)
}

/// `|x|^{1/(p−1)}`.
pub(crate) fn root(x: f64, p: f64) -> f64 {
    x.abs().powf(1.0 / (p - 1.0))
}
