//! Staggered divergence-form p-d'Alembertian, its energy, the weak
//! comparison test and a p-harmonic solver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cone::{MetricValue, PExponent};
use crate::error::{domain, usage, Result};
use crate::ext::ExtReal;
use crate::grid::{Grid, ScalarField};

/// Lower bound on `|du|_{F*}` inside the flux exponent.
pub const FLUX_CLAMP: f64 = 1e-6;

struct Face {
    lo: usize,
    hi: usize,
    axis: usize,
    ginv: DMatrix<f64>,
    time: DVector<f64>,
    sqrt_g: f64,
    /// Dual cell volume used by the energy quadrature.
    volume: f64,
    /// `du_face[comp] = Σ coef * u[node]`.
    stencil: Vec<(usize, usize, f64)>,
}

/// Face geometry of a grid: one face between each pair of axis neighbors.
pub struct FaceGrid {
    grid: Arc<Grid>,
    faces: Vec<Face>,
    /// `face_of[a][i]`: face from node `i` to its `+a` neighbor.
    face_of: Vec<Vec<Option<usize>>>,
    node_sqrt_g: Vec<f64>,
    node_volume: Vec<f64>,
    cell: f64,
}

fn axis_diff(grid: &Grid, i: usize, b: usize) -> Vec<(usize, f64)> {
    let h = grid.spacing()[b];
    match (grid.neighbor(i, b, 1), grid.neighbor(i, b, -1)) {
        (Some(p), Some(m)) => vec![(p, 0.5 / h), (m, -0.5 / h)],
        (Some(p), None) => vec![(p, 1.0 / h), (i, -1.0 / h)],
        (None, Some(m)) => vec![(i, 1.0 / h), (m, -1.0 / h)],
        (None, None) => vec![],
    }
}

impl FaceGrid {
    pub fn new(grid: Arc<Grid>) -> Result<Self> {
        let n = grid.dim();
        let h = grid.spacing().to_vec();
        let cell: f64 = h.iter().product();
        let half = |i: usize, a: usize| {
            let m = grid.multi(i)[a];
            if !grid.periodic(a) && (m == 0 || m + 1 == grid.shape()[a]) {
                0.5
            } else {
                1.0
            }
        };
        let mut pairs = Vec::new();
        let mut face_of = vec![vec![None; grid.len()]; n];
        for a in 0..n {
            for i in 0..grid.len() {
                if let Some(j) = grid.neighbor(i, a, 1) {
                    face_of[a][i] = Some(pairs.len());
                    pairs.push((a, i, j));
                }
            }
        }
        let chart = grid.chart().clone();
        let faces: Vec<Face> = pairs
            .par_iter()
            .map(|&(a, i, j)| {
                let mut x = grid.coords(i);
                x[a] += 0.5 * h[a];
                let g = chart.metric_at(&x)?;
                let mut stencil = vec![(j, a, 1.0 / h[a]), (i, a, -1.0 / h[a])];
                for b in (0..n).filter(|&b| b != a) {
                    for node in [i, j] {
                        for (k, c) in axis_diff(&grid, node, b) {
                            stencil.push((k, b, 0.5 * c));
                        }
                    }
                }
                let volume = cell * (0..n).filter(|&b| b != a).map(|b| half(i, b)).product::<f64>();
                Ok(Face {
                    lo: i,
                    hi: j,
                    axis: a,
                    ginv: g.inverse().clone(),
                    time: g.time_direction().clone(),
                    sqrt_g: g.volume_density(),
                    volume,
                    stencil,
                })
            })
            .collect::<Result<_>>()?;
        let node_sqrt_g = (0..grid.len())
            .into_par_iter()
            .map(|i| chart.metric_at(&grid.coords(i)).map(|g| g.volume_density()))
            .collect::<Result<_>>()?;
        let node_volume = (0..grid.len()).map(|i| cell * (0..n).map(|a| half(i, a)).product::<f64>()).collect();
        Ok(FaceGrid { grid, faces, face_of, node_sqrt_g, node_volume, cell })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Nodes whose every face exists: interior of non-periodic axes.
    fn has_all_faces(&self, i: usize) -> bool {
        (0..self.grid.dim()).all(|a| self.face_of[a][i].is_some() && self.grid.neighbor(i, a, -1).is_some())
    }
}

#[derive(Clone, Copy, Debug)]
enum FaceState {
    /// Some stencil node is masked.
    Masked,
    /// `du` not in the closed future dual cone.
    Outside,
    Valid { norm: f64 },
}

struct FaceEval {
    state: FaceState,
    w: DVector<f64>,
}

fn eval_face(face: &Face, u: &ScalarField, dim: usize) -> FaceEval {
    let mut w = DVector::zeros(dim);
    for &(k, c, coef) in &face.stencil {
        if !u.mask[k] {
            return FaceEval { state: FaceState::Masked, w };
        }
        w[c] += coef * u.values[k];
    }
    let up = &face.ginv * &w;
    let nn = w.dot(&up);
    let scale = w.norm() * w.norm() * face.ginv.norm();
    let future = w.dot(&face.time) > 0.0;
    let state = if future && nn >= -1e-12 * scale {
        FaceState::Valid { norm: nn.max(0.0).sqrt() }
    } else {
        FaceState::Outside
    };
    FaceEval { state, w }
}

#[derive(Clone, Debug)]
pub struct Dalembertian {
    /// `□_p u` at nodes whose adjacent faces are all admissible.
    pub field: ScalarField,
    /// Nodes masked because an adjacent face gradient left the dual cone.
    pub outside_cone: usize,
    pub clamped_faces: usize,
    pub faces: usize,
}

struct Fluxes {
    flux: Vec<Option<f64>>,
    outside: Vec<bool>,
    clamped: Vec<bool>,
}

/// Normal face flux `√|g| |du|^{power} (g^{-1} du)^a`.
fn face_fluxes(fg: &FaceGrid, u: &ScalarField, power: f64) -> Fluxes {
    let n = fg.grid.dim();
    let per: Vec<(Option<f64>, bool, bool)> = fg
        .faces
        .par_iter()
        .map(|f| {
            let e = eval_face(f, u, n);
            match e.state {
                FaceState::Masked => (None, false, false),
                FaceState::Outside => (None, true, false),
                FaceState::Valid { norm } => {
                    let clamped = norm < FLUX_CLAMP;
                    let up = &f.ginv * &e.w;
                    (Some(f.sqrt_g * norm.max(FLUX_CLAMP).powf(power) * up[f.axis]), false, clamped)
                }
            }
        })
        .collect();
    Fluxes {
        clamped: per.iter().map(|p| p.2).collect(),
        outside: per.iter().map(|p| p.1).collect(),
        flux: per.into_iter().map(|p| p.0).collect(),
    }
}

/// `□ u = -(1/√|g|) Σ_a (F_a(i + ½) - F_a(i - ½)) / h_a` with flux power `power`.
pub fn dalembertian_with_power(fg: &FaceGrid, u: &ScalarField, power: f64) -> Result<Dalembertian> {
    if !Arc::ptr_eq(&fg.grid, &u.grid) && fg.grid.shape() != u.grid.shape() {
        return usage("field and face grid differ");
    }
    let grid = &fg.grid;
    let fl = face_fluxes(fg, u, power);
    let h = grid.spacing();
    let per: Vec<(Option<f64>, bool)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !u.mask[i] || !fg.has_all_faces(i) {
                return (None, false);
            }
            let mut div = 0.0;
            for a in 0..grid.dim() {
                let plus = fg.face_of[a][i].expect("interior");
                let minus = fg.face_of[a][grid.neighbor(i, a, -1).expect("interior")].expect("interior");
                if fl.outside[plus] || fl.outside[minus] {
                    return (None, true);
                }
                match (fl.flux[plus], fl.flux[minus]) {
                    (Some(fp), Some(fm)) => div += (fp - fm) / h[a],
                    _ => return (None, false),
                }
            }
            (Some(-div / fg.node_sqrt_g[i]), false)
        })
        .collect();
    let outside_cone = per.iter().filter(|p| p.1).count();
    let mask: Vec<bool> = per.iter().map(|p| p.0.is_some()).collect();
    let values: Vec<f64> = per.iter().map(|p| p.0.unwrap_or(f64::NAN)).collect();
    Ok(Dalembertian { field: ScalarField::new(grid.clone(), values, mask)?, outside_cone, clamped_faces: fl.clamped.iter().filter(|c| **c).count(), faces: fg.faces.len() })
}

/// `□_p u = -∇·(|∇u|_{F*}^{p-2} ∇u)`.
pub fn p_dalembertian(fg: &FaceGrid, u: &ScalarField, pq: PExponent) -> Result<Dalembertian> {
    dalembertian_with_power(fg, u, pq.p() - 2.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct Energy {
    /// `Σ_faces H(du) √|g| V / n`, `+∞` when some face is inadmissible.
    pub value: ExtReal,
    pub inadmissible_faces: usize,
}

fn face_energy(f: &Face, u: &ScalarField, n: usize, p: f64) -> Option<f64> {
    match eval_face(f, u, n).state {
        FaceState::Valid { norm } if norm > 0.0 || p > 0.0 => Some(-norm.powf(p) / p * f.sqrt_g * f.volume / n as f64),
        _ => None,
    }
}

pub fn energy_functional(fg: &FaceGrid, u: &ScalarField, pq: PExponent) -> Energy {
    let n = fg.grid.dim();
    let terms: Vec<Option<f64>> = fg.faces.par_iter().map(|f| face_energy(f, u, n, pq.p())).collect();
    let bad = terms.iter().filter(|t| t.is_none()).count();
    if bad > 0 {
        return Energy { value: ExtReal::PosInf, inadmissible_faces: bad };
    }
    Energy { value: ExtReal::Finite(terms.iter().map(|t| t.unwrap()).sum()), inadmissible_faces: 0 }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityProbe {
    pub lambdas: Vec<f64>,
    /// `E((1-λ)u0 + λu1) - (1-λ)E(u0) - λE(u1)`.
    pub gaps: Vec<f64>,
    pub max_gap: f64,
    pub passed: bool,
}

pub fn convexity_probe(fg: &FaceGrid, u0: &ScalarField, u1: &ScalarField, pq: PExponent, lambdas: &[f64], tol: f64) -> Result<ConvexityProbe> {
    let (Some(e0), Some(e1)) = (energy_functional(fg, u0, pq).value.finite(), energy_functional(fg, u1, pq).value.finite()) else {
        return domain("convexity probe needs two admissible fields");
    };
    let mut gaps = Vec::new();
    for &l in lambdas {
        let mix: Vec<f64> = u0.values.iter().zip(&u1.values).map(|(a, b)| (1.0 - l) * a + l * b).collect();
        let mask: Vec<bool> = u0.mask.iter().zip(&u1.mask).map(|(a, b)| *a && *b).collect();
        let um = ScalarField::new(u0.grid.clone(), mix, mask)?;
        let em = energy_functional(fg, &um, pq).value.to_f64();
        gaps.push(em - (1.0 - l) * e0 - l * e1);
    }
    let max_gap = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ConvexityProbe { lambdas: lambdas.to_vec(), gaps, max_gap, passed: max_gap <= tol })
}

/// Tensor-product bump `Π ψ((x_a - c_a) / r_a)`, `ψ(s) = exp(1 - 1/(1 - s²))`.
#[derive(Clone, Debug, Serialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub radii: Vec<f64>,
}

impl Bump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = 1.0;
        for a in 0..x.len() {
            let s = (x[a] - self.center[a]) / self.radii[a];
            if s.abs() >= 1.0 {
                return 0.0;
            }
            v *= (1.0 - 1.0 / (1.0 - s * s)).exp();
        }
        v
    }
}

/// Five sizes times five centers inside `[lo, hi]`: the middle and the four
/// diagonal points at a quarter of the half extent along axes 0 and 1.
pub fn default_bumps(lo: &[f64], hi: &[f64]) -> Vec<Bump> {
    let n = lo.len();
    let mid: Vec<f64> = (0..n).map(|a| 0.5 * (lo[a] + hi[a])).collect();
    let half: Vec<f64> = (0..n).map(|a| 0.5 * (hi[a] - lo[a])).collect();
    let mut centers = vec![mid.clone()];
    for (s0, s1) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let mut c = mid.clone();
        c[0] += 0.25 * s0 * half[0];
        if n > 1 {
            c[1] += 0.25 * s1 * half[1];
        }
        centers.push(c);
    }
    let mut out = Vec::new();
    for size in [0.2, 0.3, 0.4, 0.5, 0.6] {
        for c in &centers {
            out.push(Bump { center: c.clone(), radii: half.iter().map(|h| size * h).collect() });
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct TestFunctionResult {
    pub bump: Bump,
    pub lhs: f64,
    pub rhs: f64,
    /// Reason the function was not evaluated.
    pub skipped: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub test_function_count: usize,
    pub evaluated: usize,
    pub results: Vec<TestFunctionResult>,
    /// `max (lhs - rhs) / rhs` over evaluated functions.
    pub max_violation: f64,
    /// `max |lhs - rhs| / rhs`.
    pub max_relative_gap: f64,
    pub near_equality: bool,
    /// Share of faces inside the test-function supports where the flux norm hit the clamp.
    pub clamped_fraction: f64,
    pub trusted: bool,
    pub passed: bool,
    pub rel_tol: f64,
}

/// Weak form `∫ g(∇φ, |∇b|^{p-2} ∇b) dvol <= (n-1) ∫ φ / ℓ dvol`, the left
/// side assembled from the same face fluxes as the d'Alembertian so that it
/// equals `Σ φ □_p b √|g| V` exactly.
pub fn weak_comparison_check(
    fg: &FaceGrid,
    b: &ScalarField,
    ell: &ScalarField,
    pq: PExponent,
    bumps: &[Bump],
    rel_tol: f64,
) -> Result<ComparisonReport> {
    let grid = &fg.grid;
    let n = grid.dim();
    let fl = face_fluxes(fg, b, pq.p() - 2.0);
    let phis: Vec<Vec<f64>> = bumps.iter().map(|bm| (0..grid.len()).map(|i| bm.eval(&grid.coords(i))).collect()).collect();
    let results: Vec<TestFunctionResult> = bumps
        .par_iter()
        .zip(&phis)
        .map(|(bm, phi)| {
            let skip = |why: &str| TestFunctionResult { bump: bm.clone(), lhs: f64::NAN, rhs: f64::NAN, skipped: Some(why.into()) };
            let mut rhs = 0.0;
            for i in 0..grid.len() {
                if phi[i] == 0.0 {
                    continue;
                }
                if !fg.has_all_faces(i) {
                    return skip("support touches the grid boundary");
                }
                if !ell.mask[i] || !(ell.values[i] > 0.0) {
                    return skip("support meets nodes without positive separation");
                }
                rhs += (n as f64 - 1.0) * phi[i] / ell.values[i] * fg.node_sqrt_g[i] * fg.cell;
            }
            let mut lhs = 0.0;
            for (k, f) in fg.faces.iter().enumerate() {
                let dphi = phi[f.hi] - phi[f.lo];
                if dphi == 0.0 {
                    continue;
                }
                match fl.flux[k] {
                    Some(flux) => lhs += dphi / grid.spacing()[f.axis] * flux * fg.cell,
                    None => return skip("support meets masked or inadmissible faces"),
                }
            }
            TestFunctionResult { bump: bm.clone(), lhs, rhs, skipped: None }
        })
        .collect();
    let evaluated: Vec<&TestFunctionResult> = results.iter().filter(|r| r.skipped.is_none()).collect();
    let max_violation = evaluated.iter().map(|r| (r.lhs - r.rhs) / r.rhs.abs()).fold(f64::NEG_INFINITY, f64::max);
    let max_relative_gap = evaluated.iter().map(|r| (r.lhs - r.rhs).abs() / r.rhs.abs()).fold(0.0, f64::max);
    let support: Vec<usize> =
        (0..fg.faces.len()).filter(|&k| phis.iter().any(|phi| phi[fg.faces[k].lo] != 0.0 || phi[fg.faces[k].hi] != 0.0)).collect();
    let clamped_fraction = support.iter().filter(|&&k| fl.clamped[k]).count() as f64 / support.len().max(1) as f64;
    let trusted = clamped_fraction < 1e-3;
    Ok(ComparisonReport {
        test_function_count: bumps.len(),
        evaluated: evaluated.len(),
        max_violation,
        max_relative_gap,
        near_equality: !evaluated.is_empty() && max_relative_gap <= rel_tol,
        clamped_fraction,
        trusted,
        passed: !evaluated.is_empty() && max_violation <= rel_tol,
        rel_tol,
        results,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveOptions {
    pub max_iter: usize,
    /// Stop once the energy decrease is below `rel_tol * |J|`.
    pub rel_tol: f64,
    /// Stop once `max |∂J/∂u_i| / (√|g| V_i)` is below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iter: 2000, rel_tol: 1e-15, grad_tol: 1e-10, memory: 8 }
    }
}

#[derive(Clone, Debug)]
pub struct Solved {
    pub field: ScalarField,
    /// `max |□_p u - f|` over interior nodes.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub energy: f64,
}

struct Objective<'a> {
    fg: &'a FaceGrid,
    p: f64,
    source: Option<Vec<f64>>,
    free: Vec<usize>,
}

impl Objective<'_> {
    fn value_grad(&self, u: &ScalarField) -> Option<(f64, Vec<f64>)> {
        let n = self.fg.grid.dim();
        let p = self.p;
        let per: Vec<Option<(f64, Vec<(usize, f64)>)>> = self
            .fg
            .faces
            .par_iter()
            .map(|f| {
                let e = eval_face(f, u, n);
                let FaceState::Valid { norm } = e.state else { return None };
                if norm <= 0.0 {
                    return None;
                }
                let weight = f.sqrt_g * f.volume / n as f64;
                let dh = (&f.ginv * &e.w) * (-norm.powf(p - 2.0) * weight);
                Some((-norm.powf(p) / p * weight, f.stencil.iter().map(|&(k, c, coef)| (k, coef * dh[c])).collect()))
            })
            .collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; u.values.len()];
        for item in per {
            let (v, contrib) = item?;
            value += v;
            for (k, g) in contrib {
                grad[k] += g;
            }
        }
        if let Some(src) = &self.source {
            for &i in &self.free {
                let w = self.fg.node_sqrt_g[i] * self.fg.node_volume[i];
                value += src[i] * u.values[i] * w;
                grad[i] += src[i] * w;
            }
        }
        Some((value, self.free.iter().map(|&i| grad[i]).collect()))
    }
}

/// Solves `□_p u = f` with `u` fixed on the boundary of the grid box by
/// minimizing `E(u) + ∫ f u dvol` with L-BFGS. Trial steps that push any face
/// gradient out of the dual cone are rejected, so the energy decreases
/// monotonically through admissible fields. The starting field interpolates
/// linearly in time between the bottom and top boundary values.
pub fn p_harmonic_solve(
    fg: &FaceGrid,
    boundary: &ScalarField,
    source: Option<&ScalarField>,
    pq: PExponent,
    opts: &SolveOptions,
) -> Result<Solved> {
    let grid = fg.grid.clone();
    let nt = grid.shape()[0];
    let stride = grid.slice_len();
    let mut values = boundary.values.clone();
    for i in 0..grid.len() {
        if grid.on_boundary(i) {
            if !boundary.mask[i] {
                return usage("boundary data is masked on the box boundary");
            }
            continue;
        }
        let k = grid.slice_of(i);
        let col = i % stride;
        let (b0, b1) = (boundary.values[col], boundary.values[(nt - 1) * stride + col]);
        let s = k as f64 / (nt - 1) as f64;
        values[i] = (1.0 - s) * b0 + s * b1;
    }
    let free: Vec<usize> = (0..grid.len()).filter(|&i| !grid.on_boundary(i)).collect();
    let mut u = ScalarField::new(grid.clone(), values, vec![true; grid.len()])?;
    let obj = Objective { fg, p: pq.p(), source: source.map(|s| s.values.clone()), free: free.clone() };
    let Some((mut j, mut g)) = obj.value_grad(&u) else {
        return domain("boundary data admits no future-directed timelike extension of the initial guess");
    };
    let mut hist: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let mut iterations = 0;
    let weights: Vec<f64> = free.iter().map(|&i| fg.node_sqrt_g[i] * fg.node_volume[i]).collect();
    let small = |g: &[f64]| g.iter().zip(&weights).all(|(gi, w)| (gi / w).abs() <= opts.grad_tol);
    let mut converged = free.is_empty() || small(&g);
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y) in hist.iter().rev() {
            let rho = 1.0 / dotv(y, s);
            let a = rho * dotv(s, &d);
            axpy(&mut d, -a, y);
            alphas.push((a, rho));
        }
        if let Some((s, y)) = hist.last() {
            let gamma = dotv(s, y) / dotv(y, y);
            d.iter_mut().for_each(|x| *x *= gamma);
        } else {
            let gn = dotv(&g, &g).sqrt();
            let scale = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min) * 1e-2 / gn.max(1e-300);
            d.iter_mut().for_each(|x| *x *= scale);
        }
        for ((s, y), (a, rho)) in hist.iter().zip(alphas.into_iter().rev()) {
            let bb = rho * dotv(y, &d);
            axpy(&mut d, a - bb, s);
        }
        let mut slope = dotv(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|x| -x).collect();
            slope = dotv(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = u.clone();
            for (k, &i) in free.iter().enumerate() {
                trial.values[i] += t * d[k];
            }
            if let Some((jn, gn)) = obj.value_grad(&trial) {
                if jn <= j + 1e-4 * t * slope {
                    accepted = Some((trial, jn, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, jn, gn)) = accepted else {
            converged = true;
            break;
        };
        let s: Vec<f64> = free.iter().map(|&i| trial.values[i] - u.values[i]).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dotv(&s, &y) > 0.0 {
            hist.push((s, y));
            if hist.len() > opts.memory {
                hist.remove(0);
            }
        }
        let decrease = j - jn;
        u = trial;
        j = jn;
        g = gn;
        if decrease <= opts.rel_tol * j.abs() || small(&g) {
            converged = true;
        }
    }
    let box_op = p_dalembertian(fg, &u, pq)?;
    let mut residual: f64 = 0.0;
    for &i in &free {
        let target = source.map_or(0.0, |s| s.values[i]);
        let r = if box_op.field.mask[i] { (box_op.field.values[i] - target).abs() } else { f64::INFINITY };
        residual = residual.max(r);
    }
    Ok(Solved { field: u, residual, iterations, converged, energy: j })
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Weighted inner product `Σ a b √|g| V` over nodes valid in both fields.
pub fn node_inner(fg: &FaceGrid, a: &ScalarField, b: &ScalarField) -> f64 {
    (0..fg.grid.len())
        .filter(|&i| a.mask[i] && b.mask[i])
        .map(|i| a.values[i] * b.values[i] * fg.node_sqrt_g[i] * fg.node_volume[i])
        .sum()
}

/// Metric at a node; convenience for diagnostics.
pub fn node_metric(grid: &Grid, i: usize) -> Result<MetricValue> {
    grid.chart().metric_at(&grid.coords(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::models;

    fn mink_grid(lo: [f64; 2], hi: [f64; 2], shape: usize) -> Arc<Grid> {
        let chart = Arc::new(models::minkowski(2).with_box(lo.to_vec(), hi.to_vec()).unwrap());
        Arc::new(Grid::over(chart, &lo, &hi, &[shape, shape]).unwrap())
    }

    fn pq(p: f64) -> PExponent {
        PExponent::new(p).unwrap()
    }

    #[test]
    fn time_function_has_zero_dalembertian_and_unit_energy() {
        let grid = mink_grid([0.0, 0.0], [1.0, 1.0], 21);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        for p in [0.5, -1.0] {
            let d = p_dalembertian(&fg, &t, pq(p)).unwrap();
            assert!(d.field.valid_count() > 0);
            for i in 0..grid.len() {
                if let Some(v) = d.field.get(i) {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
        let e = energy_functional(&fg, &t, pq(-1.0)).value.finite().unwrap();
        assert!((e - 1.0).abs() < 1e-12, "{e}");
        let t2 = ScalarField::from_fn(grid, |x| 2.0 * x[0]);
        let e2 = energy_functional(&fg, &t2, pq(-1.0)).value.finite().unwrap();
        assert!((e2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn busemann_closed_form_matches_inverse_rho() {
        let grid = mink_grid([0.0, -0.5], [1.0, 0.5], 81);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let r = 3.0;
        let rho = |x: &[f64]| ((r - x[0]).powi(2) - x[1] * x[1]).sqrt();
        let b = ScalarField::from_fn(grid.clone(), |x| r - rho(x));
        for p in [0.5, -1.0] {
            let d = p_dalembertian(&fg, &b, pq(p)).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..grid.len() {
                if let Some(v) = d.field.get(i) {
                    let x = grid.coords(i);
                    worst = worst.max((v * rho(&x) - 1.0).abs());
                }
            }
            assert!(worst < 1e-3, "p={p}: {worst}");
        }
    }

    #[test]
    fn spacelike_gradient_is_masked() {
        let grid = mink_grid([0.0, 0.0], [1.0, 1.0], 11);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let u = ScalarField::from_fn(grid, |x| 2.0 * x[1]);
        let d = p_dalembertian(&fg, &u, pq(0.5)).unwrap();
        assert_eq!(d.field.valid_count(), 0);
        assert!(d.outside_cone > 0);
        assert_eq!(energy_functional(&fg, &u, pq(0.5)).value, ExtReal::PosInf);
    }

    #[test]
    fn energy_variation_matches_dalembertian() {
        let grid = mink_grid([0.0, 0.0], [1.0, 1.0], 41);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let u = ScalarField::from_fn(grid.clone(), |x| x[0] + 0.1 * x[0] * x[0] + 0.05 * (3.0 * x[1]).sin());
        let bump = Bump { center: vec![0.5, 0.5], radii: vec![0.3, 0.3] };
        let phi = ScalarField::from_fn(grid.clone(), |x| bump.eval(x));
        let pp = pq(0.5);
        let h = 1e-4;
        let shifted = |s: f64| {
            let v = u.values.iter().zip(&phi.values).map(|(a, b)| a + s * b).collect();
            ScalarField::new(grid.clone(), v, vec![true; grid.len()]).unwrap()
        };
        let ep = energy_functional(&fg, &shifted(h), pp).value.to_f64();
        let em = energy_functional(&fg, &shifted(-h), pp).value.to_f64();
        let de = (ep - em) / (2.0 * h);
        let box_u = p_dalembertian(&fg, &u, pp).unwrap();
        let pairing = node_inner(&fg, &box_u.field, &phi);
        assert!((de + pairing).abs() < 2e-2 * pairing.abs().max(1e-3), "{de} vs {}", -pairing);
    }

    #[test]
    fn energy_is_convex_on_sampled_pair() {
        let grid = mink_grid([0.0, 0.0], [1.0, 1.0], 21);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let u0 = ScalarField::from_fn(grid.clone(), |x| x[0]);
        let u1 = ScalarField::from_fn(grid, |x| x[0] + 0.1 * (x[1] * 6.0).sin());
        for p in [0.5, -1.0] {
            let c = convexity_probe(&fg, &u0, &u1, pq(p), &[0.25, 0.5, 0.75], 1e-12).unwrap();
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn weak_form_equals_closed_form_pairing() {
        let grid = mink_grid([0.0, -0.5], [1.0, 0.5], 81);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let r = 3.0;
        let rho = |x: &[f64]| ((r - x[0]).powi(2) - x[1] * x[1]).sqrt();
        let b = ScalarField::from_fn(grid.clone(), |x| r - rho(x));
        let ell = ScalarField::from_fn(grid.clone(), rho);
        let bumps = default_bumps(&[0.0, -0.5], &[1.0, 0.5]);
        let rep = weak_comparison_check(&fg, &b, &ell, pq(0.5), &bumps, 0.02).unwrap();
        assert_eq!(rep.evaluated, 25);
        assert!(rep.near_equality && rep.passed && rep.trusted, "{}", rep.max_relative_gap);
    }

    #[test]
    fn solver_recovers_time_and_busemann() {
        let grid = mink_grid([0.0, -0.5], [1.0, 0.5], 21);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let t = ScalarField::from_fn(grid.clone(), |x| x[0]);
        let s = p_harmonic_solve(&fg, &t, None, pq(0.5), &SolveOptions::default()).unwrap();
        assert!(s.residual < 1e-6 && s.field.max_abs_diff(&t) < 1e-9);

        let r = 3.0;
        let rho = |x: &[f64]| ((r - x[0]).powi(2) - x[1] * x[1]).sqrt();
        let exact = ScalarField::from_fn(grid.clone(), |x| r - rho(x));
        let src = ScalarField::from_fn(grid.clone(), |x| 1.0 / rho(x));
        let s = p_harmonic_solve(&fg, &exact, Some(&src), pq(0.5), &SolveOptions::default()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..grid.len() {
            worst = worst.max((s.field.values[i] - exact.values[i]).abs() / exact.values[i].abs().max(0.1));
        }
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn infeasible_boundary_is_rejected() {
        let grid = mink_grid([0.0, 0.0], [1.0, 1.0], 11);
        let fg = FaceGrid::new(grid.clone()).unwrap();
        let u = ScalarField::from_fn(grid, |x| 3.0 * x[1]);
        assert!(p_harmonic_solve(&fg, &u, None, pq(0.5), &SolveOptions::default()).is_err());
    }
}
