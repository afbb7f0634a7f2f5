//! Covariant Hessians, the p-Bochner residual, Killing checks for `∇b`
//! and the metric-splitting detector.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{hessian_matrix, PExponent};
use crate::error::{domain, usage, Result};
use crate::grid::{Grid, ScalarField};
use crate::spacetime::{assemble_curvature, christoffel, christoffel_from, curvature_pack, curvature_pack_richardson, default_step, MetricChart, MetricJet};

/// Axis-aligned box restricting where diagnostics are evaluated.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Window {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn in_window(window: Option<&Window>, grid: &Grid, i: usize) -> bool {
    window.map_or(true, |w| grid.in_box(i, &w.lo, &w.hi))
}

fn metric_derivatives(chart: &MetricChart, x: &[f64]) -> Vec<DMatrix<f64>> {
    if let Some(j) = chart.analytic_jet(x) {
        return j.dg;
    }
    let h = default_step(chart);
    (0..chart.dim())
        .map(|a| {
            let mut p = x.to_vec();
            p[a] += h;
            let mut m = x.to_vec();
            m[a] -= h;
            (chart.metric_matrix(&p) - chart.metric_matrix(&m)) / (2.0 * h)
        })
        .collect()
}

fn gamma_at(chart: &MetricChart, x: &[f64]) -> Vec<f64> {
    match chart.analytic_jet(x) {
        Some(j) => {
            let n = j.g.nrows();
            let ginv = j.g.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
            christoffel_from(&ginv, &j.dg)
        }
        None => christoffel(chart, x, default_step(chart)),
    }
}

fn ricci_at(chart: &MetricChart, x: &[f64]) -> Option<DMatrix<f64>> {
    if let Some(r) = chart.analytic_curvature(x) {
        return Some(r.ricci_matrix());
    }
    curvature_pack_richardson(chart, x, default_step(chart)).ok().map(|r| r.ricci_matrix())
}

fn nan_array(u: &ScalarField) -> Vec<f64> {
    u.values.iter().zip(&u.mask).map(|(&v, &m)| if m { v } else { f64::NAN }).collect()
}

fn central_grad(grid: &Grid, vals: &[f64], i: usize) -> Option<DVector<f64>> {
    let h = grid.spacing();
    let mut g = DVector::zeros(grid.dim());
    for a in 0..grid.dim() {
        let p = vals[grid.neighbor(i, a, 1)?];
        let m = vals[grid.neighbor(i, a, -1)?];
        if !(p.is_finite() && m.is_finite()) {
            return None;
        }
        g[a] = (p - m) / (2.0 * h[a]);
    }
    Some(g)
}

/// `(1/√|g|) ∂_a(√|g| V^a)` from nodal arrays `sg_v[a] = √|g| V^a`.
fn divergence(grid: &Grid, sg_v: &[Vec<f64>], sqrt_g: f64, i: usize) -> Option<f64> {
    let h = grid.spacing();
    let mut d = 0.0;
    for a in 0..grid.dim() {
        let p = sg_v[a][grid.neighbor(i, a, 1)?];
        let m = sg_v[a][grid.neighbor(i, a, -1)?];
        if !(p.is_finite() && m.is_finite()) {
            return None;
        }
        d += (p - m) / (2.0 * h[a]);
    }
    Some(d / sqrt_g)
}

fn field(grid: &Arc<Grid>, vals: Vec<Option<f64>>) -> Result<ScalarField> {
    let mask = vals.iter().map(|v| v.is_some()).collect();
    ScalarField::new(grid.clone(), vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect(), mask)
}

/// Covariant Hessian `∇²u_ij = ∂_i∂_j u - Γ^k_ij ∂_k u` per node.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub grid: Arc<Grid>,
    pub values: Vec<Option<DMatrix<f64>>>,
    /// Valid nodes lacking a full second-difference stencil.
    pub dropped: usize,
}

impl HessianField {
    /// Largest absolute entry over nodes inside the window.
    pub fn max_abs(&self, window: Option<&Window>) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| in_window(window, &self.grid, *i))
            .filter_map(|(_, m)| m.as_ref())
            .map(|m| m.amax())
            .fold(0.0, f64::max)
    }

    pub fn evaluated(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

pub fn covariant_hessian(u: &ScalarField) -> HessianField {
    let grid = u.grid.clone();
    let n = grid.dim();
    let h = grid.spacing().to_vec();
    let vals = nan_array(u);
    let per: Vec<(Option<DMatrix<f64>>, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !u.mask[i] {
                return (None, false);
            }
            let Some(d) = central_grad(&grid, &vals, i) else { return (None, true) };
            let at = |off: &[i64]| grid.shift(i, off).map(|j| vals[j]).filter(|v| v.is_finite());
            let mut dd = DMatrix::zeros(n, n);
            for a in 0..n {
                let mut e = vec![0i64; n];
                e[a] = 1;
                let p = vals[grid.shift(i, &e).expect("gradient stencil")];
                e[a] = -1;
                let m = vals[grid.shift(i, &e).expect("gradient stencil")];
                dd[(a, a)] = (p - 2.0 * vals[i] + m) / (h[a] * h[a]);
                for b in (a + 1)..n {
                    let mut o = vec![0i64; n];
                    let mut corners = [0.0; 4];
                    for (k, (sa, sb)) in [(1, 1), (1, -1), (-1, 1), (-1, -1)].into_iter().enumerate() {
                        o[a] = sa;
                        o[b] = sb;
                        match at(&o) {
                            Some(v) => corners[k] = v,
                            None => return (None, true),
                        }
                    }
                    let m = (corners[0] - corners[1] - corners[2] + corners[3]) / (4.0 * h[a] * h[b]);
                    dd[(a, b)] = m;
                    dd[(b, a)] = m;
                }
            }
            let gam = gamma_at(grid.chart(), &grid.coords(i));
            for a in 0..n {
                for b in 0..n {
                    dd[(a, b)] -= (0..n).map(|k| gam[(k * n + a) * n + b] * d[k]).sum::<f64>();
                }
            }
            (Some(dd), false)
        })
        .collect();
    let dropped = per.iter().filter(|p| p.1).count();
    HessianField { grid, values: per.into_iter().map(|p| p.0).collect(), dropped }
}

#[derive(Clone, Debug)]
pub struct BochnerOptions {
    pub eikonal_tol: f64,
    /// `residual2` is evaluated where `|□_p b|` is below this.
    pub harmonic_tol: f64,
    pub window: Option<Window>,
}

impl Default for BochnerOptions {
    fn default() -> Self {
        BochnerOptions { eikonal_tol: 0.05, harmonic_tol: 1e-3, window: None }
    }
}

#[derive(Clone, Debug)]
pub struct BochnerReport {
    /// `Tr[(√D²H ∇²b √D²H)²] + Ric(DH, DH)`.
    pub lhs: ScalarField,
    /// `∇_i(H^{ij} ∇_j H) - H^i ∇_i(∇_j H^j)`.
    pub rhs: ScalarField,
    pub residual1: ScalarField,
    /// `max(|lhs|, |rhs|)` where `|□_p b| < harmonic_tol`.
    pub residual2: ScalarField,
    pub max_residual1: f64,
    /// `max |lhs - rhs| / max(|lhs|, |rhs|)`.
    pub max_relative_residual1: f64,
    pub max_residual2: f64,
    pub residual2_nodes: usize,
    pub max_eikonal_deviation: f64,
    pub evaluated: usize,
}

struct NodeStage {
    hs: f64,
    dh: DVector<f64>,
    hm: DMatrix<f64>,
    sqrt_g: f64,
}

/// Both sides of the p-Bochner chain for a (nearly) eikonal `b`, with all
/// derivatives by nested central differences.
pub fn bochner_residual(b: &ScalarField, pq: PExponent, opts: &BochnerOptions) -> Result<BochnerReport> {
    let grid = b.grid.clone();
    let n = grid.dim();
    let p = pq.p();
    let chart = grid.chart().clone();
    let vals = nan_array(b);
    let window = opts.window.as_ref();

    let stage: Vec<Option<NodeStage>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let w = central_grad(&grid, &vals, i)?;
            let g = chart.metric_at(&grid.coords(i)).ok()?;
            let up = g.inverse() * &w;
            let nn = w.dot(&up);
            if !(nn > 0.0 && w.dot(g.time_direction()) > 0.0) {
                return None;
            }
            let norm = nn.sqrt();
            Some(NodeStage {
                hs: -norm.powf(p) / p,
                dh: &up * (-norm.powf(p - 2.0)),
                hm: hessian_matrix(&w, norm, p, g.inverse()),
                sqrt_g: g.volume_density(),
            })
        })
        .collect();

    let mut worst = (0.0f64, None);
    for i in 0..grid.len() {
        if !b.mask[i] || !in_window(window, &grid, i) || central_grad(&grid, &vals, i).is_none() {
            continue;
        }
        let dev = match &stage[i] {
            Some(s) => ((-p * s.hs).powf(1.0 / p) - 1.0).abs(),
            None => f64::INFINITY,
        };
        if dev > worst.0 {
            worst = (dev, Some(i));
        }
    }
    if worst.0 > opts.eikonal_tol {
        let at = worst.1.map(|i| grid.coords(i)).unwrap_or_default();
        return domain(format!("eikonal precondition fails at {at:?}: ||db| - 1| = {}", worst.0));
    }

    let hs: Vec<f64> = stage.iter().map(|s| s.as_ref().map_or(f64::NAN, |s| s.hs)).collect();
    let sg_dh: Vec<Vec<f64>> = (0..n).map(|a| stage.iter().map(|s| s.as_ref().map_or(f64::NAN, |s| s.sqrt_g * s.dh[a])).collect()).collect();
    let second: Vec<(Vec<f64>, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let nanv = (vec![f64::NAN; n], f64::NAN);
            let Some(s) = &stage[i] else { return nanv };
            let Some(dhs) = central_grad(&grid, &hs, i) else { return nanv };
            let v = &s.hm * dhs;
            let div_dh = divergence(&grid, &sg_dh, s.sqrt_g, i).unwrap_or(f64::NAN);
            ((0..n).map(|a| s.sqrt_g * v[a]).collect(), div_dh)
        })
        .collect();
    let sg_v: Vec<Vec<f64>> = (0..n).map(|a| second.iter().map(|s| s.0[a]).collect()).collect();
    let div_dh: Vec<f64> = second.iter().map(|s| s.1).collect();
    let hess = covariant_hessian(b);

    let rows: Vec<Option<(f64, f64, bool)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !in_window(window, &grid, i) {
                return None;
            }
            let s = stage[i].as_ref()?;
            let bh = hess.values[i].as_ref()?;
            let div_v = divergence(&grid, &sg_v, s.sqrt_g, i)?;
            let ddiv = central_grad(&grid, &div_dh, i)?;
            let ric = ricci_at(&chart, &grid.coords(i))?;
            let hb = &s.hm * bh;
            let lhs = (&hb * &hb).trace() + (&ric * &s.dh).dot(&s.dh);
            let rhs = div_v - s.dh.dot(&ddiv);
            Some((lhs, rhs, div_dh[i].abs() < opts.harmonic_tol))
        })
        .collect();
    let lhs = field(&grid, rows.iter().map(|r| r.map(|r| r.0)).collect())?;
    let rhs = field(&grid, rows.iter().map(|r| r.map(|r| r.1)).collect())?;
    let res1: Vec<Option<f64>> = rows.iter().map(|r| r.map(|r| (r.0 - r.1).abs())).collect();
    let res2: Vec<Option<f64>> = rows.iter().map(|r| r.and_then(|r| r.2.then(|| r.0.abs().max(r.1.abs())))).collect();
    let max_residual1 = res1.iter().flatten().cloned().fold(0.0, f64::max);
    let max_relative_residual1 = rows
        .iter()
        .flatten()
        .map(|r| {
            let d = (r.0 - r.1).abs();
            if d == 0.0 {
                0.0
            } else {
                d / r.0.abs().max(r.1.abs())
            }
        })
        .fold(0.0, f64::max);
    let max_residual2 = res2.iter().flatten().cloned().fold(0.0, f64::max);
    let residual2_nodes = res2.iter().flatten().count();
    let evaluated = res1.iter().flatten().count();
    if evaluated == 0 {
        return domain("no node has the stencil needed for the Bochner residual");
    }
    Ok(BochnerReport {
        lhs,
        rhs,
        residual1: field(&grid, res1)?,
        residual2: field(&grid, res2)?,
        max_residual1,
        max_relative_residual1,
        max_residual2,
        residual2_nodes,
        max_eikonal_deviation: worst.0,
        evaluated,
    })
}

#[derive(Clone, Debug)]
pub struct KillingReport {
    /// `max |(L_X g)_ij|` with `X = ∇b`.
    pub max_residual: f64,
    pub field: ScalarField,
    pub evaluated: usize,
}

/// `(L_X g)_ij = X^k ∂_k g_ij + g_kj ∂_i X^k + g_ik ∂_j X^k` for `X = g^{-1} db`.
pub fn killing_check(b: &ScalarField, window: Option<&Window>) -> Result<KillingReport> {
    let grid = b.grid.clone();
    let n = grid.dim();
    let chart = grid.chart().clone();
    let vals = nan_array(b);
    let xs: Vec<Option<DVector<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let w = central_grad(&grid, &vals, i)?;
            Some(chart.metric_at(&grid.coords(i)).ok()?.inverse() * w)
        })
        .collect();
    let comps: Vec<Vec<f64>> = (0..n).map(|k| xs.iter().map(|x| x.as_ref().map_or(f64::NAN, |x| x[k])).collect()).collect();
    let per: Vec<Option<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !in_window(window, &grid, i) {
                return None;
            }
            let x = xs[i].as_ref()?;
            let dx: Vec<DVector<f64>> = (0..n).map(|k| central_grad(&grid, &comps[k], i)).collect::<Option<_>>()?;
            let at = grid.coords(i);
            let g = chart.metric_matrix(&at);
            let dg = metric_derivatives(&chart, &at);
            // dxm[(k, i)] = ∂_i X^k
            let dxm = DMatrix::from_fn(n, n, |k, ii| dx[k][ii]);
            let mut lie = DMatrix::zeros(n, n);
            for k in 0..n {
                lie += &dg[k] * x[k];
            }
            let gd = g.transpose() * &dxm;
            lie += &gd + gd.transpose();
            Some(lie.amax())
        })
        .collect();
    let max_residual = per.iter().flatten().cloned().fold(0.0, f64::max);
    let evaluated = per.iter().flatten().count();
    Ok(KillingReport { max_residual, field: field(&grid, per)?, evaluated })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    #[serde(rename = "splits")]
    Splits,
    #[serde(rename = "no-split")]
    NoSplit,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct SplitOptions {
    /// Box for residuals; its spatial extent selects the level-set columns.
    pub window: Window,
    /// Flow time for the factorization check.
    pub tau: f64,
    /// Fixed tolerance; `None` calibrates against the curvature pack.
    pub tol: Option<f64>,
    /// Lower bound for the calibrated tolerance.
    pub floor: f64,
    pub flow_steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplittingReport {
    pub hess_residual: f64,
    pub killing_residual: f64,
    pub cross_term_residual: f64,
    /// `max |h_τ - h_0| / max |h_0|` after flowing Σ along `∇b / |∇b|²`.
    pub factorization_residual: f64,
    pub level_set_points: Vec<Vec<f64>>,
    /// `h_ab = -g(e_a, e_b)` at each level-set point.
    pub induced_metric: Vec<Vec<Vec<f64>>>,
    pub induced_metric_min_eigenvalue: f64,
    pub induced_ricci_min: f64,
    pub tolerance: f64,
    pub curvature_pack_error: f64,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

struct Lattice {
    /// Grid index ranges per spatial axis.
    ranges: Vec<Vec<usize>>,
    shape: Vec<usize>,
}

impl Lattice {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }

    fn multi(&self, mut k: usize) -> Vec<usize> {
        let mut m = vec![0; self.shape.len()];
        for a in (0..self.shape.len()).rev() {
            m[a] = k % self.shape[a];
            k /= self.shape[a];
        }
        m
    }

    fn index(&self, m: &[usize]) -> usize {
        m.iter().zip(&self.shape).fold(0, |acc, (&mi, &s)| acc * s + mi)
    }

    /// Difference stencil along lattice axis `a`: `(plus, minus, span)`.
    fn diff(&self, k: usize, a: usize) -> (usize, usize, f64) {
        let m = self.multi(k);
        let (mut p, mut q) = (m.clone(), m.clone());
        let span = if m[a] + 1 < self.shape[a] && m[a] > 0 {
            p[a] += 1;
            q[a] -= 1;
            2.0
        } else if m[a] + 1 < self.shape[a] {
            p[a] += 1;
            1.0
        } else {
            q[a] -= 1;
            1.0
        };
        (self.index(&p), self.index(&q), span)
    }
}

fn induced(g: &DMatrix<f64>, tangents: &[DVector<f64>]) -> DMatrix<f64> {
    let m = tangents.len();
    DMatrix::from_fn(m, m, |a, b| -(tangents[a].transpose() * g * &tangents[b])[(0, 0)])
}

fn min_generalized_eigen(h: &DMatrix<f64>, ric: &DMatrix<f64>) -> Option<f64> {
    let l = h.clone().cholesky()?.l();
    let li = l.try_inverse()?;
    let m = &li * ric * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.iter().cloned().reduce(f64::min)
}

fn calibrate(chart: &MetricChart, points: &[Vec<f64>]) -> f64 {
    let step = default_step(chart);
    let stride = (points.len() / 5).max(1);
    points
        .iter()
        .step_by(stride)
        .filter_map(|x| {
            let fd = curvature_pack(chart, x, step).ok()?;
            let reference = match chart.analytic_curvature(x) {
                Some(a) => a,
                None => curvature_pack_richardson(chart, x, step).ok()?,
            };
            Some(fd.max_abs_diff(&reference))
        })
        .fold(0.0, f64::max)
}

/// Extracts `Σ = {b = 0}` column by column (first upward crossing along the
/// time axis) inside the window, and tests whether `b` factors the metric
/// as `dr² - h` there.
pub fn split_metric(b: &ScalarField, opts: &SplitOptions) -> Result<SplittingReport> {
    let grid = b.grid.clone();
    let n = grid.dim();
    if n < 2 {
        return usage("splitting needs at least one spatial axis");
    }
    let chart = grid.chart().clone();
    let w = &opts.window;
    if w.lo.len() != n || w.hi.len() != n {
        return usage("window dimension does not match the grid");
    }
    let ranges: Vec<Vec<usize>> = (1..n)
        .map(|a| (0..grid.shape()[a]).filter(|&m| {
            let x = grid.coord(a, m);
            x >= w.lo[a] - 1e-9 && x <= w.hi[a] + 1e-9
        }).collect())
        .collect();
    if ranges.iter().any(|r| r.len() < 2) {
        return usage("window must contain at least two grid columns per spatial axis");
    }
    let lat = Lattice { shape: ranges.iter().map(|r| r.len()).collect(), ranges };
    let mut notes = Vec::new();
    let nt = grid.shape()[0];
    let ht = grid.spacing()[0];

    // Level set.
    let mut tstar = vec![f64::NAN; lat.len()];
    let mut touches = false;
    for (k, ts) in tstar.iter_mut().enumerate() {
        let m = lat.multi(k);
        let mut full = vec![0usize; n];
        for a in 1..n {
            full[a] = lat.ranges[a - 1][m[a - 1]];
        }
        let mut found = None;
        for it in 0..nt - 1 {
            full[0] = it;
            let i0 = grid.index(&full);
            full[0] = it + 1;
            let i1 = grid.index(&full);
            let (Some(b0), Some(b1)) = (b.get(i0), b.get(i1)) else { continue };
            if b0 <= 0.0 && b1 > 0.0 {
                found = Some((it, b0, b1));
                break;
            }
        }
        match found {
            Some((it, b0, b1)) => {
                if it == 0 || it + 2 >= nt {
                    touches = true;
                }
                *ts = grid.coord(0, it) + ht * (-b0) / (b1 - b0);
            }
            None => touches = true,
        }
    }
    let complete = tstar.iter().all(|t| t.is_finite());
    if touches {
        notes.push("level set missing in some column or touching the grid boundary".into());
    }

    let y_of = |k: usize| -> Vec<f64> {
        let m = lat.multi(k);
        (1..n).map(|a| grid.coord(a, lat.ranges[a - 1][m[a - 1]])).collect()
    };
    let point = |k: usize| -> Vec<f64> {
        let mut x = vec![tstar[k]];
        x.extend(y_of(k));
        x
    };
    let spacing_sigma: Vec<f64> = (1..n).map(|a| grid.spacing()[a]).collect();

    let mut points = Vec::new();
    let mut hs: Vec<Option<DMatrix<f64>>> = vec![None; lat.len()];
    if complete {
        for (k, slot) in hs.iter_mut().enumerate() {
            let tangents: Vec<DVector<f64>> = (0..n - 1)
                .map(|a| {
                    let (p, q, span) = lat.diff(k, a);
                    let mut e = DVector::zeros(n);
                    e[a + 1] = 1.0;
                    e[0] = (tstar[p] - tstar[q]) / (span * spacing_sigma[a]);
                    e
                })
                .collect();
            let x = point(k);
            *slot = Some(induced(&chart.metric_matrix(&x), &tangents));
            points.push(x);
        }
    }
    let induced_metric: Vec<Vec<Vec<f64>>> =
        hs.iter().flatten().map(|h| (0..h.nrows()).map(|i| (0..h.ncols()).map(|j| h[(i, j)]).collect()).collect()).collect();
    let induced_metric_min_eigenvalue = hs
        .iter()
        .flatten()
        .filter_map(|h| SymmetricEigen::new(h.clone()).eigenvalues.iter().cloned().reduce(f64::min))
        .fold(f64::INFINITY, f64::min);

    // Ricci of h on Σ's chart.
    let mut induced_ricci_min = 0.0;
    if complete && n - 1 == 2 {
        let mut best = f64::INFINITY;
        for k in 0..lat.len() {
            let m = lat.multi(k);
            if (0..2).any(|a| m[a] == 0 || m[a] + 1 == lat.shape[a]) {
                continue;
            }
            let hat = |off: [i64; 2]| -> &DMatrix<f64> {
                let mm: Vec<usize> = (0..2).map(|a| (m[a] as i64 + off[a]) as usize).collect();
                hs[lat.index(&mm)].as_ref().expect("complete")
            };
            let h0 = hat([0, 0]);
            let s = &spacing_sigma;
            let dg = vec![(hat([1, 0]) - hat([-1, 0])) / (2.0 * s[0]), (hat([0, 1]) - hat([0, -1])) / (2.0 * s[1])];
            let d00 = (hat([1, 0]) - h0 * 2.0 + hat([-1, 0])) / (s[0] * s[0]);
            let d11 = (hat([0, 1]) - h0 * 2.0 + hat([0, -1])) / (s[1] * s[1]);
            let d01 = (hat([1, 1]) - hat([1, -1]) - hat([-1, 1]) + hat([-1, -1])) / (4.0 * s[0] * s[1]);
            let jet = MetricJet { g: h0.clone(), dg, ddg: vec![vec![d00, d01.clone()], vec![d01, d11]] };
            let ric = assemble_curvature(&jet).ricci_matrix();
            if let Some(e) = min_generalized_eigen(h0, &ric) {
                best = best.min(e);
            }
        }
        if best.is_finite() {
            induced_ricci_min = best;
        } else {
            notes.push("level-set lattice too small for the induced Ricci tensor".into());
        }
    } else if n - 1 > 2 {
        notes.push("induced Ricci only computed for dim Σ <= 2".into());
    }

    let hess = covariant_hessian(b);
    let hess_residual = hess.max_abs(Some(w));
    let killing = killing_check(b, Some(w))?;

    // Flow of Σ along ∇b / |∇b|².
    let vals = nan_array(b);
    let grads: Vec<Option<DVector<f64>>> = (0..grid.len()).into_par_iter().map(|i| central_grad(&grid, &vals, i)).collect();
    let comps: Vec<Vec<f64>> = (0..n).map(|a| grads.iter().map(|g| g.as_ref().map_or(f64::NAN, |g| g[a])).collect()).collect();
    let db_at = |x: &[f64]| -> Option<DVector<f64>> {
        let v: Vec<f64> = (0..n).map(|a| grid.interpolate(&comps[a], x)).collect::<Option<_>>()?;
        Some(DVector::from_vec(v))
    };
    let field_at = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let xs: Vec<f64> = x.iter().cloned().collect();
        let db = db_at(&xs)?;
        let ginv = chart.metric_matrix(&xs).try_inverse()?;
        let up = &ginv * &db;
        let nn = db.dot(&up);
        (nn > 0.0).then(|| up / nn)
    };
    let flow = |x0: &[f64], tau: f64| -> Option<DVector<f64>> {
        let mut x = DVector::from_column_slice(x0);
        let dt = tau / opts.flow_steps.max(1) as f64;
        for _ in 0..opts.flow_steps.max(1) {
            let k1 = field_at(&x)?;
            let k2 = field_at(&(&x + &k1 * (0.5 * dt)))?;
            let k3 = field_at(&(&x + &k2 * (0.5 * dt)))?;
            let k4 = field_at(&(&x + &k3 * dt))?;
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        Some(x)
    };
    let mut cross = 0.0f64;
    let mut factor = 0.0f64;
    let mut flow_ok = complete;
    if complete {
        let h0_max = hs.iter().flatten().map(|h| h.amax()).fold(0.0, f64::max);
        for tau in [0.0, -opts.tau, opts.tau] {
            let moved: Option<Vec<DVector<f64>>> = (0..lat.len()).into_par_iter().map(|k| flow(&point(k), tau)).collect();
            let Some(moved) = moved else {
                flow_ok = false;
                notes.push(format!("flow by τ = {tau} leaves the region where ∇b is available"));
                continue;
            };
            for k in 0..lat.len() {
                let xs: Vec<f64> = moved[k].iter().cloned().collect();
                let tangents: Vec<DVector<f64>> = (0..n - 1)
                    .map(|a| {
                        let (p, q, span) = lat.diff(k, a);
                        (&moved[p] - &moved[q]) / (span * spacing_sigma[a])
                    })
                    .collect();
                let g = chart.metric_matrix(&xs);
                let h_tau = induced(&g, &tangents);
                if let Some(db) = db_at(&xs) {
                    let up = g.clone().try_inverse().map(|gi| gi * &db);
                    let norm = up.map(|u| db.dot(&u).max(0.0).sqrt()).unwrap_or(f64::NAN);
                    for (a, e) in tangents.iter().enumerate() {
                        let c = db.dot(e).abs() / (norm * h_tau[(a, a)].abs().sqrt());
                        cross = cross.max(if c.is_finite() { c } else { f64::INFINITY });
                    }
                }
                if tau != 0.0 {
                    let h0 = hs[k].as_ref().expect("complete");
                    factor = factor.max((&h_tau - h0).amax() / h0_max);
                }
            }
        }
    }

    let curvature_pack_error = calibrate(&chart, &points);
    let tolerance = opts.tol.unwrap_or_else(|| (20.0 * curvature_pack_error).max(opts.floor));
    let verdict = if !complete || touches || !flow_ok || hess.evaluated() == 0 {
        Verdict::Inconclusive
    } else if hess_residual < tolerance
        && killing.max_residual < 2.0 * tolerance
        && cross < tolerance
        && factor < tolerance
        && induced_metric_min_eigenvalue > 0.0
        && induced_ricci_min >= -tolerance
    {
        Verdict::Splits
    } else {
        Verdict::NoSplit
    };
    Ok(SplittingReport {
        hess_residual,
        killing_residual: killing.max_residual,
        cross_term_residual: cross,
        factorization_residual: factor,
        level_set_points: points,
        induced_metric,
        induced_metric_min_eigenvalue,
        induced_ricci_min,
        tolerance,
        curvature_pack_error,
        verdict,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::models::{self, ScaleFactor};

    fn grid_on(chart: MetricChart, lo: &[f64], hi: &[f64], shape: &[usize]) -> Arc<Grid> {
        let chart = chart.with_box(lo.to_vec(), hi.to_vec()).unwrap();
        Arc::new(Grid::over(Arc::new(chart), lo, hi, shape).unwrap())
    }

    #[test]
    fn hessian_of_time_and_busemann_closed_forms() {
        let grid = grid_on(models::minkowski(2), &[0.0, -0.5], &[1.0, 0.5], &[41, 41]);
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        assert!(covariant_hessian(&t).max_abs(None) < 1e-12);
        let r = 3.0;
        let b = ScalarField::from_fn(grid.clone(), |x| r - ((r - x[0]).powi(2) - x[1] * x[1]).sqrt());
        let hb = covariant_hessian(&b);
        let i = grid.nearest(&[0.5, 0.0]).unwrap();
        let rho: f64 = 2.5;
        // ∂_x∂_x of -ρ at x = 0 is (r-t)²/ρ³.
        assert!((hb.values[i].as_ref().unwrap()[(1, 1)] - 1.0 / rho).abs() < 1e-4);

        let grid = grid_on(models::flrw(2, ScaleFactor::Matter), &[0.6, -0.5], &[1.8, 0.5], &[25, 11]);
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        let h = covariant_hessian(&t);
        let i = grid.nearest(&[1.2, 0.0]).unwrap();
        let (a, ad, _) = ScaleFactor::Matter.eval(grid.coords(i)[0]);
        assert!((h.values[i].as_ref().unwrap()[(1, 1)] + a * ad).abs() < 1e-10);
    }

    #[test]
    fn bochner_sides_match_inverse_rho_squared() {
        let grid = grid_on(models::minkowski(2), &[0.0, -0.5], &[1.0, 0.5], &[81, 81]);
        let r = 3.0;
        let rho = |x: &[f64]| ((r - x[0]).powi(2) - x[1] * x[1]).sqrt();
        let b = ScalarField::from_fn(grid.clone(), |x| r - rho(x));
        let rep = bochner_residual(&b, PExponent::new(0.5).unwrap(), &BochnerOptions::default()).unwrap();
        assert!(rep.max_relative_residual1 < 0.01, "{}", rep.max_relative_residual1);
        for i in 0..grid.len() {
            if let Some(l) = rep.lhs.get(i) {
                let x = grid.coords(i);
                assert!((l * rho(&x).powi(2) - 1.0).abs() < 0.01);
            }
        }
        let affine = ScalarField::from_fn(grid, |x| 1.25 * x[0] + 0.75 * x[1]);
        let rep = bochner_residual(&affine, PExponent::new(-1.0).unwrap(), &BochnerOptions::default()).unwrap();
        assert!(rep.max_residual1 < 1e-10 && rep.max_residual2 < 1e-10 && rep.residual2_nodes > 0);
    }

    #[test]
    fn non_eikonal_field_is_rejected() {
        let grid = grid_on(models::minkowski(2), &[0.0, 0.0], &[1.0, 1.0], &[11, 11]);
        let u = ScalarField::from_fn(grid, |x| 2.0 * x[0]);
        assert!(bochner_residual(&u, PExponent::new(0.5).unwrap(), &BochnerOptions::default()).is_err());
    }

    #[test]
    fn killing_of_time_function() {
        let grid = grid_on(models::minkowski(2), &[0.0, 0.0], &[1.0, 1.0], &[11, 11]);
        let t = ScalarField::from_fn(grid, |x| x[0]);
        assert!(killing_check(&t, None).unwrap().max_residual < 1e-12);
        let grid = grid_on(models::flrw(2, ScaleFactor::Matter), &[0.6, -0.5], &[1.8, 0.5], &[25, 11]);
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        let k = killing_check(&t, None).unwrap();
        let i = grid.nearest(&[1.2, 0.0]).unwrap();
        let (a, ad, _) = ScaleFactor::Matter.eval(grid.coords(i)[0]);
        assert!((k.field.values[i] - 2.0 * a * ad).abs() < 1e-9);
    }

    #[test]
    fn circle_product_splits_and_flrw_does_not() {
        let radius = 1.5;
        let grid = Arc::new(Grid::new(Arc::new(models::product_circle(radius)), &[41, 64]).unwrap());
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        let window = Window { lo: vec![-0.5, 2.0], hi: vec![0.5, 4.0] };
        let rep = split_metric(&t, &SplitOptions { window, tau: 0.3, tol: None, floor: 1e-3, flow_steps: 8 }).unwrap();
        assert_eq!(rep.verdict, Verdict::Splits, "{rep:?}");
        for h in &rep.induced_metric {
            assert!((h[0][0] - radius * radius).abs() < 1e-9);
        }

        let grid = grid_on(models::flrw(2, ScaleFactor::Matter), &[0.6, -0.5], &[1.8, 0.5], &[49, 21]);
        let b = ScalarField::from_fn(grid, |x| x[0] - 1.2);
        let window = Window { lo: vec![0.9, -0.3], hi: vec![1.5, 0.3] };
        let rep = split_metric(&b, &SplitOptions { window, tau: 0.2, tol: None, floor: 1e-3, flow_steps: 8 }).unwrap();
        assert_eq!(rep.verdict, Verdict::NoSplit);
        assert!(rep.hess_residual > 0.1 && rep.factorization_residual > 0.1);
    }

    #[test]
    fn torus_level_set_has_flat_induced_metric() {
        let grid = Arc::new(Grid::new(Arc::new(models::product_torus(3)), &[11, 12, 12]).unwrap());
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        let window = Window { lo: vec![-0.5, 0.2, 0.2], hi: vec![0.5, 0.8, 0.8] };
        let rep = split_metric(&t, &SplitOptions { window, tau: 0.2, tol: None, floor: 1e-3, flow_steps: 4 }).unwrap();
        assert_eq!(rep.verdict, Verdict::Splits, "{rep:?}");
        assert!(rep.induced_ricci_min.abs() < 1e-9);
    }
}
