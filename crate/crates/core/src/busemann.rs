//! Busemann functions of a timelike line on a causal grid.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::causal::{refine_path, time_separation_with, CausalGraph, RefineOptions};
use crate::error::{domain, usage, LabError, Result};
use crate::grid::{Grid, ScalarField};

/// Proper-time parameterized timelike curve `r -> γ(r)`.
#[derive(Clone)]
pub struct Line {
    gamma: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl std::fmt::Debug for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Line").field("gamma(0)", &self.at(0.0)).finish()
    }
}

impl Line {
    pub fn new(gamma: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Line { gamma: Arc::new(gamma) }
    }

    /// `γ(r) = origin + r ∂_t`; unit speed whenever `g_00 = 1` along it.
    pub fn comoving(origin: Vec<f64>) -> Self {
        Line::new(move |r| {
            let mut p = origin.clone();
            p[0] += r;
            p
        })
    }

    pub fn at(&self, r: f64) -> Vec<f64> {
        (self.gamma)(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

/// Which nodes get their grid value polished by path refinement.
#[derive(Clone, Debug, Serialize)]
pub enum RefineScope {
    Off,
    All,
    Window { lo: Vec<f64>, hi: Vec<f64> },
}

impl RefineScope {
    fn contains(&self, grid: &Grid, idx: usize) -> bool {
        match self {
            RefineScope::Off => false,
            RefineScope::All => true,
            RefineScope::Window { lo, hi } => grid.in_box(idx, lo, hi),
        }
    }

    fn window_contains(&self, grid: &Grid, idx: usize) -> bool {
        match self {
            RefineScope::Window { lo, hi } => grid.in_box(idx, lo, hi),
            _ => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BusemannOptions {
    pub scope: RefineScope,
    pub q: f64,
    pub refine: RefineOptions,
}

impl Default for BusemannOptions {
    fn default() -> Self {
        BusemannOptions { scope: RefineScope::Off, q: 0.5, refine: RefineOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct BusemannField {
    /// `b_r^±` on nodes causally related to `γ(r)`.
    pub values: ScalarField,
    /// `ℓ(x, γ(r))` for `+`, `ℓ(γ(r), x)` for `-`.
    pub separation: ScalarField,
    pub r: f64,
    pub sign: Sign,
    /// `ℓ(γ(0), γ(r))` (resp. `ℓ(γ(r), γ(0))`) as used for normalization.
    pub anchor: f64,
    pub anchor_node: usize,
    pub refined_nodes: usize,
    pub refine_failures: usize,
}

fn target_node(grid: &Grid, p: &[f64], what: &str) -> Result<usize> {
    if !grid.chart().contains(p) {
        return domain(format!("{what} = {p:?} lies outside the chart"));
    }
    grid.nearest(p).map_err(|_| LabError::Domain(format!("{what} = {p:?} lies outside the grid")))
}

/// `b_r^+(x) = -ℓ(x, γ(r)) + ℓ(γ(0), γ(r))` or
/// `b_r^-(x) = ℓ(γ(r), x) - ℓ(γ(r), γ(0))`. The normalization reuses the
/// value at the node nearest `γ(0)`, so the field vanishes there exactly.
pub fn busemann_field(cg: &CausalGraph, line: &Line, r: f64, sign: Sign, opts: &BusemannOptions) -> Result<BusemannField> {
    let grid = cg.grid().clone();
    let gr = line.at(r);
    let target = target_node(&grid, &gr, "γ(r)")?;
    let anchor_node = target_node(&grid, &line.at(0.0), "γ(0)")?;
    let table = match sign {
        Sign::Plus => cg.backward(&[target], None),
        Sign::Minus => cg.forward(&[target], None),
    };
    let mut sep = table.values.clone();
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&v| sep[v].is_finite() && v != target && (v == anchor_node || opts.scope.contains(&grid, v)))
        .collect();
    let polished: Vec<Option<f64>> = nodes
        .par_iter()
        .map(|&v| {
            let (_, coords) = cg.path(&table, v)?;
            let node = grid.coords(v);
            let (start, end) = match sign {
                Sign::Plus => (&node, &gr),
                Sign::Minus => (&gr, &node),
            };
            refine_path(&grid, &coords, start, end, opts.q, &opts.refine).ok().map(|r| r.value)
        })
        .collect();
    let mut failures = 0;
    for (&v, p) in nodes.iter().zip(&polished) {
        match p {
            Some(val) => sep[v] = *val,
            None => failures += 1,
        }
    }
    let anchor = sep[anchor_node];
    if !anchor.is_finite() {
        return domain(format!("γ(0) is not causally related to γ({r})"));
    }
    let mask: Vec<bool> = sep.iter().map(|v| v.is_finite()).collect();
    let values: Vec<f64> = sep
        .iter()
        .map(|&s| match sign {
            Sign::Plus => anchor - s,
            Sign::Minus => s - anchor,
        })
        .map(|v| if v.is_finite() { v } else { f64::NAN })
        .collect();
    let sep_values: Vec<f64> = sep.iter().map(|&v| if v.is_finite() { v } else { f64::NAN }).collect();
    Ok(BusemannField {
        values: ScalarField::new(grid.clone(), values, mask.clone())?,
        separation: ScalarField::new(grid, sep_values, mask)?,
        r,
        sign,
        anchor,
        anchor_node,
        refined_nodes: nodes.len() - failures,
        refine_failures: failures,
    })
}

#[derive(Clone, Debug)]
pub struct BusemannLimit {
    pub sign: Sign,
    /// Rungs actually computed.
    pub ladder: Vec<f64>,
    pub fields: Vec<BusemannField>,
    /// `max |b_{r_k} - b_{r_{k-1}}|` over the window.
    pub gaps: Vec<f64>,
    pub gaps_decreasing: bool,
    /// Largest violation of `b_{r_k}^+ <= b_{r_{k-1}}^+` (resp. `>=` for `-`).
    pub monotonicity_violation: f64,
    /// Field at the largest `|r|`.
    pub limit: ScalarField,
    /// Polynomial extrapolation in `1/|r|` to `r = ∞` through the last
    /// (up to three) rungs; restricted to the window.
    pub extrapolated: Option<ScalarField>,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

fn in_window(scope: &RefineScope, grid: &Grid) -> Vec<bool> {
    (0..grid.len()).map(|i| scope.window_contains(grid, i)).collect()
}

pub fn busemann_limit(cg: &CausalGraph, line: &Line, sign: Sign, ladder: &[f64], opts: &BusemannOptions) -> Result<BusemannLimit> {
    if ladder.is_empty() {
        return usage("r ladder is empty");
    }
    let ordered = match sign {
        Sign::Plus => ladder[0] > 0.0 && ladder.windows(2).all(|w| w[1] > w[0]),
        Sign::Minus => ladder[0] < 0.0 && ladder.windows(2).all(|w| w[1] < w[0]),
    };
    if !ordered {
        return usage("r ladder must be increasing and positive for b+, decreasing and negative for b-");
    }
    let grid = cg.grid().clone();
    let mut fields: Vec<BusemannField> = Vec::new();
    let mut warnings = Vec::new();
    let mut truncated = false;
    for &r in ladder {
        match busemann_field(cg, line, r, sign, opts) {
            Ok(f) => fields.push(f),
            Err(LabError::Domain(msg)) => {
                truncated = true;
                warnings.push(format!("ladder truncated at r = {r}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if fields.is_empty() {
        return domain(warnings.join("; "));
    }
    let window = in_window(&opts.scope, &grid);
    let mut gaps = Vec::new();
    let mut mono: f64 = 0.0;
    for w in fields.windows(2) {
        let (prev, cur) = (&w[0].values, &w[1].values);
        let mut gap: f64 = 0.0;
        for i in 0..grid.len() {
            if !(window[i] && prev.mask[i] && cur.mask[i]) {
                continue;
            }
            let d = cur.values[i] - prev.values[i];
            gap = gap.max(d.abs());
            mono = mono.max(match sign {
                Sign::Plus => d,
                Sign::Minus => -d,
            });
        }
        gaps.push(gap);
    }
    let gaps_decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let extrapolated = extrapolate(&fields, &window)?;
    Ok(BusemannLimit {
        sign,
        ladder: fields.iter().map(|f| f.r).collect(),
        limit: fields.last().expect("nonempty").values.clone(),
        fields,
        gaps,
        gaps_decreasing,
        monotonicity_violation: mono,
        extrapolated,
        truncated,
        warnings,
    })
}

fn extrapolate(fields: &[BusemannField], window: &[bool]) -> Result<Option<ScalarField>> {
    if fields.len() < 2 {
        return Ok(None);
    }
    let used = &fields[fields.len().saturating_sub(3)..];
    let s: Vec<f64> = used.iter().map(|f| 1.0 / f.r.abs()).collect();
    // Lagrange weights at s = 0.
    let w: Vec<f64> = (0..s.len())
        .map(|i| (0..s.len()).filter(|&j| j != i).map(|j| -s[j] / (s[i] - s[j])).product())
        .collect();
    let grid = used[0].values.grid.clone();
    let mut values = vec![f64::NAN; grid.len()];
    let mut mask = vec![false; grid.len()];
    for i in 0..grid.len() {
        if window[i] && used.iter().all(|f| f.values.mask[i]) {
            values[i] = used.iter().zip(&w).map(|(f, wi)| wi * f.values.values[i]).sum();
            mask[i] = true;
        }
    }
    Ok(Some(ScalarField::new(grid, values, mask)?))
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderingReport {
    pub pairs_checked: usize,
    pub steepness_violations: usize,
    pub max_steepness_violation: f64,
    /// Largest violation of `b_r^+ >= b^+ >= b^- >= b^-_{-r}`.
    pub chain_violation: f64,
    pub chain_nodes: usize,
    /// The four chain members at `γ(0)`.
    pub gamma0_values: [f64; 4],
    pub gamma0_deviation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct OrderingOptions {
    pub sample_pairs: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub q: f64,
}

impl Default for OrderingOptions {
    fn default() -> Self {
        OrderingOptions { sample_pairs: 200, seed: 0, tolerance: 1e-6, q: 0.5 }
    }
}

/// Checks 1-steepness `b(y) - b(x) >= ℓ(x, y)` of the limit fields on
/// sampled causal pairs, the chain `b_r^+ >= b^+ >= b^- >= b^-_{-r}`
/// pointwise over the window (with `r` the first rung and the limits taken
/// at the last), and equality of the chain at `γ(0)`.
pub fn steepness_ordering_check(
    plus: &BusemannLimit,
    minus: &BusemannLimit,
    cg: &CausalGraph,
    scope: &RefineScope,
    opts: &OrderingOptions,
) -> Result<OrderingReport> {
    let grid = cg.grid().clone();
    let chain = [&plus.fields[0].values, &plus.limit, &minus.limit, &minus.fields[0].values];
    let window = in_window(scope, &grid);
    let mut violation: f64 = 0.0;
    let mut nodes = 0;
    for i in 0..grid.len() {
        if !window[i] || !chain.iter().all(|f| f.mask[i]) {
            continue;
        }
        nodes += 1;
        for k in 0..3 {
            violation = violation.max(chain[k + 1].values[i] - chain[k].values[i]);
        }
    }
    let anchor = plus.fields[0].anchor_node;
    let gamma0_values = [chain[0].values[anchor], chain[1].values[anchor], chain[2].values[anchor], chain[3].values[anchor]];
    let gamma0_deviation = gamma0_values.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });

    let candidates: Vec<usize> = (0..grid.len()).filter(|&i| window[i] && plus.limit.mask[i] && minus.limit.mask[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pairs = Vec::new();
    if candidates.len() >= 2 {
        for _ in 0..(20 * opts.sample_pairs) {
            if pairs.len() >= opts.sample_pairs {
                break;
            }
            let x = candidates[rng.gen_range(0..candidates.len())];
            let y = candidates[rng.gen_range(0..candidates.len())];
            if grid.slice_of(y) > grid.slice_of(x) {
                pairs.push((x, y));
            }
        }
    }
    let results: Vec<Result<Option<f64>>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            let r = time_separation_with(cg, &grid.coords(x), &grid.coords(y), opts.q, &RefineOptions::default())?;
            let Some(l) = r.refined_value.finite() else { return Ok(None) };
            let worst = [&plus.limit, &minus.limit]
                .iter()
                .map(|b| l - (b.values[y] - b.values[x]))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(Some(worst))
        })
        .collect();
    let mut checked = 0;
    let mut steep_viol = 0;
    let mut max_steep: f64 = 0.0;
    for r in results {
        if let Some(w) = r? {
            checked += 1;
            max_steep = max_steep.max(w);
            if w > opts.tolerance {
                steep_viol += 1;
            }
        }
    }
    let passed = steep_viol == 0 && violation <= opts.tolerance && gamma0_deviation <= opts.tolerance;
    Ok(OrderingReport {
        pairs_checked: checked,
        steepness_violations: steep_viol,
        max_steepness_violation: max_steep,
        chain_violation: violation,
        chain_nodes: nodes,
        gamma0_values,
        gamma0_deviation,
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    /// `sup |b(x) - b(y)| / d̃(x, y)` over neighbor pairs.
    pub lipschitz: f64,
    /// `sup (b(y) + b(z) - 2 b(x)) / d̃^2` over symmetric neighbor triples.
    pub semiconcavity: f64,
    pub per_field: Vec<(f64, f64)>,
}

fn neighbor_offsets(n: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let o: Vec<i64> = (0..n)
            .map(|_| {
                let d = (c % 3) as i64 - 1;
                c /= 3;
                d
            })
            .collect();
        // One representative of each ±o pair.
        if let Some(first) = o.iter().find(|&&d| d != 0) {
            if *first > 0 {
                out.push(o);
            }
        }
    }
    out
}

/// Difference quotients measured with the Riemannian reference metric
/// `g̃ = V |Λ| V^T` built from the eigendecomposition of `g` at each node.
pub fn regularity_diagnostics(fields: &[&ScalarField], scope: &RefineScope) -> Result<RegularityReport> {
    let mut per_field = Vec::with_capacity(fields.len());
    for f in fields {
        let grid = f.grid.clone();
        let n = grid.dim();
        let offs = neighbor_offsets(n);
        let h = grid.spacing().to_vec();
        let consts: Vec<(f64, f64)> = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let Some(bx) = f.get(i) else { return (0.0, f64::NEG_INFINITY) };
                if !scope.window_contains(&grid, i) {
                    return (0.0, f64::NEG_INFINITY);
                }
                let Ok(g) = grid.chart().metric_at(&grid.coords(i)) else { return (0.0, f64::NEG_INFINITY) };
                let gt = g.riemannian_reference();
                let (mut lip, mut semi) = (0.0f64, f64::NEG_INFINITY);
                for o in &offs {
                    let d = nalgebra::DVector::from_iterator(n, (0..n).map(|a| o[a] as f64 * h[a]));
                    let dist2 = (&gt * &d).dot(&d);
                    let neg: Vec<i64> = o.iter().map(|c| -c).collect();
                    let y = grid.shift(i, o).and_then(|j| f.get(j));
                    let z = grid.shift(i, &neg).and_then(|j| f.get(j));
                    if let Some(by) = y {
                        lip = lip.max((by - bx).abs() / dist2.sqrt());
                    }
                    if let (Some(by), Some(bz)) = (y, z) {
                        semi = semi.max((by + bz - 2.0 * bx) / dist2);
                    }
                }
                (lip, semi)
            })
            .collect();
        let lip = consts.iter().map(|c| c.0).fold(0.0, f64::max);
        let semi = consts.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        per_field.push((lip, if semi.is_finite() { semi.max(0.0) } else { 0.0 }));
    }
    Ok(RegularityReport {
        lipschitz: per_field.iter().map(|p| p.0).fold(0.0, f64::max),
        semiconcavity: per_field.iter().map(|p| p.1).fold(0.0, f64::max),
        per_field,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EikonalStats {
    pub evaluated: usize,
    pub excluded_nonsmooth: usize,
    pub outside_cone: usize,
    pub max_deviation: f64,
    pub mean_deviation: f64,
}

/// Statistics of `| |db|_{F*} - 1 |` over window nodes whose full central
/// stencil lies in the window. Nodes whose one-sided differences disagree by more than
/// `10 * tol` are treated as kinks and excluded.
pub fn eikonal_stats(b: &ScalarField, scope: &RefineScope, tol: f64) -> EikonalStats {
    let grid = b.grid.clone();
    let n = grid.dim();
    let h = grid.spacing().to_vec();
    let per: Vec<Option<Result<f64>>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if !scope.window_contains(&grid, i) {
                return None;
            }
            let bx = b.get(i)?;
            let mut grad = Vec::with_capacity(n);
            for a in 0..n {
                for d in [1, -1] {
                    if !scope.window_contains(&grid, grid.neighbor(i, a, d)?) {
                        return None;
                    }
                }
                let p = b.neighbor(i, a, 1)?;
                let m = b.neighbor(i, a, -1)?;
                let (fwd, bwd) = ((p - bx) / h[a], (bx - m) / h[a]);
                if (fwd - bwd).abs() > 10.0 * tol {
                    return Some(Err(LabError::Domain("kink".into())));
                }
                grad.push(0.5 * (fwd + bwd));
            }
            let g = grid.chart().metric_at(&grid.coords(i)).ok()?;
            let w = crate::cone::Covector::new(&grad);
            Some(Ok(crate::cone::dual_norm(&w, &g).ok()?.to_f64()))
        })
        .collect();
    let mut stats = EikonalStats { evaluated: 0, excluded_nonsmooth: 0, outside_cone: 0, max_deviation: 0.0, mean_deviation: 0.0 };
    let mut sum = 0.0;
    for p in per.into_iter().flatten() {
        match p {
            Err(_) => stats.excluded_nonsmooth += 1,
            Ok(norm) if norm.is_finite() => {
                let d = (norm - 1.0).abs();
                stats.evaluated += 1;
                stats.max_deviation = stats.max_deviation.max(d);
                sum += d;
            }
            Ok(_) => stats.outside_cone += 1,
        }
    }
    if stats.evaluated > 0 {
        stats.mean_deviation = sum / stats.evaluated as f64;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::build_causal_graph;
    use crate::spacetime::models;

    fn setup() -> (CausalGraph, Line) {
        let chart = Arc::new(models::minkowski(2).with_box(vec![-12.0, -2.0], vec![12.0, 2.0]).unwrap());
        let grid = Grid::over(chart, &[-12.0, -2.0], &[12.0, 2.0], &[97, 33]).unwrap();
        (build_causal_graph(Arc::new(grid), 3).unwrap(), Line::comoving(vec![0.0, 0.0]))
    }

    #[test]
    fn closed_form_values_at_r_10() {
        let (cg, line) = setup();
        let opts = BusemannOptions { scope: RefineScope::Window { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] }, ..Default::default() };
        let f = busemann_field(&cg, &line, 10.0, Sign::Plus, &opts).unwrap();
        let grid = cg.grid();
        let at = |p: &[f64]| f.values.values[grid.nearest(p).unwrap()];
        assert!((at(&[0.0, 1.0]) - (10.0 - 99f64.sqrt())).abs() < 1e-8);
        assert_eq!(at(&[0.0, 0.0]), 0.0);
        assert!((at(&[1.0, 0.0]) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ladder_converges_to_time() {
        let (cg, line) = setup();
        let scope = RefineScope::Window { lo: vec![-0.5, -0.5], hi: vec![0.5, 0.5] };
        let opts = BusemannOptions { scope: scope.clone(), ..Default::default() };
        let plus = busemann_limit(&cg, &line, Sign::Plus, &[2.5, 5.0, 10.0], &opts).unwrap();
        let minus = busemann_limit(&cg, &line, Sign::Minus, &[-2.5, -5.0, -10.0], &opts).unwrap();
        assert!(plus.gaps_decreasing && minus.gaps_decreasing);
        assert!(plus.monotonicity_violation < 1e-9 && minus.monotonicity_violation < 1e-9);
        let t = ScalarField::from_fn(cg.grid().clone(), |x| x[0]);
        let ex = plus.extrapolated.as_ref().unwrap();
        assert!(ex.max_abs_diff(&t) < 2e-3);
        let report = steepness_ordering_check(&plus, &minus, &cg, &scope, &OrderingOptions { sample_pairs: 30, ..Default::default() }).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.pairs_checked > 0);
        let e = eikonal_stats(&plus.limit, &scope, 5e-2);
        assert!(e.evaluated > 0 && e.max_deviation < 5e-2, "{e:?}");
    }

    #[test]
    fn gamma_outside_grid_is_a_domain_error() {
        let (cg, line) = setup();
        assert!(matches!(busemann_field(&cg, &line, 30.0, Sign::Plus, &BusemannOptions::default()), Err(LabError::Domain(_))));
        let lim = busemann_limit(&cg, &line, Sign::Plus, &[5.0, 10.0, 30.0], &BusemannOptions::default()).unwrap();
        assert!(lim.truncated);
        assert_eq!(lim.ladder, vec![5.0, 10.0]);
        assert!(busemann_limit(&cg, &line, Sign::Plus, &[10.0, 5.0], &BusemannOptions::default()).is_err());
    }

    #[test]
    fn constant_field_has_zero_constants() {
        let (cg, _) = setup();
        let c = ScalarField::constant(cg.grid().clone(), 3.0);
        let r = regularity_diagnostics(&[&c], &RefineScope::All).unwrap();
        assert_eq!((r.lipschitz, r.semiconcavity), (0.0, 0.0));
        let t = ScalarField::from_fn(cg.grid().clone(), |x| x[0]);
        let r = regularity_diagnostics(&[&t], &RefineScope::All).unwrap();
        assert!((r.lipschitz - 1.0).abs() < 1e-9);
    }
}
