//! Time-separation by longest paths on a causal grid graph.

mod graph;
mod refine;

use std::sync::Arc;

use serde::Serialize;

use crate::cone::{f_norm, PExponent, TangentVector};
use crate::error::{usage, Result};
use crate::ext::ExtReal;
use crate::grid::Grid;
use crate::spacetime::SeparationOracle;

pub use graph::{build_causal_graph, CausalGraph, Direction, DpTable};
pub use refine::{refine_polyline, RefineOptions, Refined};

#[derive(Clone, Debug, Serialize)]
pub struct PathResult {
    /// Longest-path value between the snapped nodes.
    pub value: ExtReal,
    pub path: Vec<usize>,
    /// q-action of the refined polyline through the exact endpoints.
    pub refined_value: ExtReal,
    pub refined_points: Vec<Vec<f64>>,
    /// False when refinement was not possible and `refined_value` repeats
    /// the grid value.
    pub refined: bool,
    pub q: f64,
}

/// Shifts `p` by whole periods so that it is closest to `anchor`.
pub(crate) fn unwrap_near(grid: &Grid, p: &[f64], anchor: &[f64]) -> Vec<f64> {
    let chart = grid.chart();
    p.iter()
        .enumerate()
        .map(|(a, &v)| {
            if chart.periodic()[a] {
                let per = chart.extent(a);
                v + ((anchor[a] - v) / per).round() * per
            } else {
                v
            }
        })
        .collect()
}

/// Refines a grid path with its endpoints moved onto the exact points.
pub fn refine_path(grid: &Grid, coords: &[Vec<f64>], start: &[f64], end: &[f64], q: f64, opts: &RefineOptions) -> Result<Refined> {
    let mut poly = coords.to_vec();
    let first = unwrap_near(grid, start, &coords[0]);
    let last = unwrap_near(grid, end, &coords[coords.len() - 1]);
    if poly.len() == 1 {
        poly = vec![first, last];
    } else {
        poly[0] = first;
        let k = poly.len() - 1;
        poly[k] = last;
    }
    refine_polyline(grid.chart(), &poly, q, opts)
}

fn direct_separation(grid: &Grid, x: &[f64], y: &[f64]) -> Result<ExtReal> {
    let y = unwrap_near(grid, y, x);
    let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
    let d: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    f_norm(&TangentVector::new(&d), &grid.chart().metric_at(&mid)?)
}

pub fn time_separation(cg: &CausalGraph, x: &[f64], y: &[f64], q: f64) -> Result<PathResult> {
    time_separation_with(cg, x, y, q, &RefineOptions::default())
}

/// `ℓ(x, y)`: longest path between the nearest nodes, then refinement of
/// the q-action with endpoints pinned to `x` and `y`.
pub fn time_separation_with(cg: &CausalGraph, x: &[f64], y: &[f64], q: f64, opts: &RefineOptions) -> Result<PathResult> {
    PExponent::from_conjugate(q)?;
    let grid = cg.grid();
    let (nx, ny) = (grid.nearest(x)?, grid.nearest(y)?);
    let unreachable = PathResult {
        value: ExtReal::NegInf,
        path: Vec::new(),
        refined_value: ExtReal::NegInf,
        refined_points: Vec::new(),
        refined: false,
        q,
    };
    if nx == ny {
        let direct = direct_separation(grid, x, y)?;
        return Ok(PathResult {
            value: ExtReal::Finite(0.0),
            path: vec![nx],
            refined_value: direct,
            refined_points: vec![x.to_vec(), y.to_vec()],
            refined: direct.is_finite(),
            q,
        });
    }
    if grid.slice_of(ny) <= grid.slice_of(nx) {
        return Ok(unreachable);
    }
    let table = cg.forward(&[nx], Some(grid.slice_of(ny)));
    let Some((path, coords)) = cg.path(&table, ny) else { return Ok(unreachable) };
    let value = table.values[ny];
    let (refined_value, refined_points, refined) = match refine_path(grid, &coords, x, y, q, opts) {
        Ok(r) => (r.value, r.points, true),
        Err(_) => (value, coords, false),
    };
    Ok(PathResult { value: ExtReal::Finite(value), path, refined_value: ExtReal::Finite(refined_value), refined_points, refined, q })
}

#[derive(Clone, Debug, Serialize)]
pub struct QIndependence {
    pub qs: Vec<f64>,
    pub values: Vec<ExtReal>,
    /// `max |ℓ_qi - ℓ_qj|`; 0 when every value is `-∞`, `+∞` when only some are.
    pub deviation: ExtReal,
}

pub fn q_independence_check(cg: &CausalGraph, x: &[f64], y: &[f64], qs: &[f64]) -> Result<QIndependence> {
    if qs.is_empty() {
        return usage("q list is empty");
    }
    let values: Vec<ExtReal> = qs.iter().map(|&q| time_separation(cg, x, y, q).map(|r| r.refined_value)).collect::<Result<_>>()?;
    let finite: Vec<f64> = values.iter().filter_map(|v| v.finite()).collect();
    let deviation = if finite.is_empty() {
        ExtReal::Finite(0.0)
    } else if finite.len() < values.len() {
        ExtReal::PosInf
    } else {
        let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        ExtReal::Finite(hi - lo)
    };
    Ok(QIndependence { qs: qs.to_vec(), values, deviation })
}

/// Time-separation provider backed by a causal graph with refinement.
pub struct DpSeparation {
    pub graph: Arc<CausalGraph>,
    pub q: f64,
}

impl SeparationOracle for DpSeparation {
    fn separation(&self, x: &[f64], y: &[f64]) -> Result<ExtReal> {
        Ok(time_separation(&self.graph, x, y, self.q)?.refined_value)
    }
}
