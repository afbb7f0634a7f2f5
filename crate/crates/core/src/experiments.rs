//! Experiment pipelines behind the command-line tool.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::bochner::{bochner_residual, killing_check, split_metric, BochnerOptions, SplitOptions, Verdict, Window};
use crate::busemann::{
    busemann_field, busemann_limit, eikonal_stats, regularity_diagnostics, steepness_ordering_check, BusemannLimit,
    BusemannOptions, Line, OrderingOptions, RefineScope, Sign,
};
use crate::causal::{build_causal_graph, q_independence_check, time_separation, CausalGraph, DpSeparation};
use crate::cone::PExponent;
use crate::config::{Experiment, ExperimentConfig, FieldKind, Oracle};
use crate::error::{usage, Result};
use crate::grid::{Grid, ScalarField};
use crate::pde::{default_bumps, p_dalembertian, weak_comparison_check, FaceGrid};
use crate::report::{Check, ErrorInfo, RunReport};
use crate::spacetime::{
    curvature_pack_richardson, default_step, energy_condition_check, sec_from_timesep, slice_mean_curvature, EnergyCondition,
    EnergyOptions, GeodesicShooting, MetricChart,
};

/// Everything a run produces. Timings are kept out of the report so that
/// reports compare byte for byte.
pub struct Outcome {
    pub report: RunReport,
    pub exit_code: i32,
    pub fields: Vec<(String, ScalarField)>,
    pub timings: Vec<(String, f64)>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    checks: Vec<Check>,
    results: Map<String, Value>,
    warnings: Vec<String>,
    fields: Vec<(String, ScalarField)>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Ctx<'_> {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push((stage.into(), (now - self.clock).as_secs_f64()));
        self.clock = now;
    }

    fn put(&mut self, key: &str, v: Value) {
        self.results.insert(key.into(), v);
    }

    fn tol(&self, name: &str) -> f64 {
        self.cfg.tol(name)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, experiment: Experiment) -> Outcome {
    let mut ctx = Ctx {
        cfg,
        checks: Vec::new(),
        results: Map::new(),
        warnings: Vec::new(),
        fields: Vec::new(),
        timings: Vec::new(),
        clock: Instant::now(),
    };
    let res = match experiment {
        Experiment::Timesep => timesep(&mut ctx),
        Experiment::Busemann => busemann(&mut ctx),
        Experiment::Compare => compare(&mut ctx),
        Experiment::Bochner => bochner(&mut ctx),
        Experiment::Split => split(&mut ctx),
        Experiment::Energycond => energycond(&mut ctx),
        Experiment::Hawking => hawking(&mut ctx),
        Experiment::Seccheck => seccheck(&mut ctx),
    };
    let mut report = RunReport::new(experiment.name(), cfg.echo.clone(), cfg.expect_negative);
    report.checks = ctx.checks;
    report.results = Value::Object(ctx.results);
    report.warnings = ctx.warnings;
    if let Err(e) = res {
        report.error = Some(ErrorInfo::from(&e));
    }
    let exit_code = report.finish();
    Outcome { report, exit_code, fields: ctx.fields, timings: ctx.timings }
}

/// Models where `t` is a splitting time function.
fn static_product(cfg: &ExperimentConfig) -> bool {
    matches!(
        cfg.model.name.as_str(),
        "minkowski" | "circle" | "product-circle" | "sphere" | "product-sphere" | "torus" | "product-torus" | "bump" | "bump-product"
    )
}

fn is_minkowski(cfg: &ExperimentConfig) -> bool {
    cfg.model.name == "minkowski"
}

/// Chart restricted to the grid box, with the time axis extended by
/// `pad` on both ends.
fn chart_for(cfg: &ExperimentConfig, pad: f64) -> Result<Arc<MetricChart>> {
    let base = cfg.model.build()?;
    let mut lo = cfg.grid_lo.clone().unwrap_or_else(|| base.lo().to_vec());
    let mut hi = cfg.grid_hi.clone().unwrap_or_else(|| base.hi().to_vec());
    lo[0] -= pad;
    hi[0] += pad;
    Ok(Arc::new(base.with_box(lo, hi)?))
}

fn grid_for(cfg: &ExperimentConfig, chart: &Arc<MetricChart>) -> Result<Arc<Grid>> {
    if cfg.grid_shape.is_empty() {
        return usage("this experiment needs grid.shape");
    }
    let lo = cfg.grid_lo.clone().unwrap_or_else(|| chart.lo().to_vec());
    let hi = cfg.grid_hi.clone().unwrap_or_else(|| chart.hi().to_vec());
    Ok(Arc::new(Grid::over(chart.clone(), &lo, &hi, &cfg.grid_shape)?))
}

fn graph_for(ctx: &mut Ctx) -> Result<(Arc<MetricChart>, Arc<Grid>, CausalGraph)> {
    let chart = chart_for(ctx.cfg, 0.0)?;
    let grid = grid_for(ctx.cfg, &chart)?;
    let cg = build_causal_graph(grid.clone(), ctx.cfg.stencil)?;
    note_degree(ctx, &cg);
    ctx.put("grid", json!({ "shape": grid.shape(), "lo": grid.lo(), "hi": grid.hi(), "spacing": grid.spacing() }));
    ctx.lap("graph");
    Ok((chart, grid, cg))
}

/// Records the smallest out-degree over interior nodes and warns when
/// some node cannot step sideways along every spatial axis.
fn note_degree(ctx: &mut Ctx, cg: &CausalGraph) {
    let grid = cg.grid();
    let last = grid.shape()[0] - 1;
    let min = (0..grid.len()).filter(|&i| grid.slice_of(i) < last && !grid.on_boundary(i)).map(|i| cg.out_degree(i)).min().unwrap_or(0);
    let needed = 2 * grid.dim() - 1;
    if min < needed {
        ctx.warnings.push(format!(
            "some nodes have only {min} causal stencil offsets (fewer than {needed}); reduce the spatial spacing relative to the time step"
        ));
    }
    ctx.put("min_out_degree", json!(min));
}

fn origin(cfg: &ExperimentConfig, grid: &Grid) -> Vec<f64> {
    cfg.line_origin.clone().unwrap_or_else(|| {
        (0..grid.dim())
            .map(|a| {
                if grid.periodic(a) {
                    grid.lo()[a] + 0.5 * grid.chart().extent(a)
                } else {
                    0.5 * (grid.lo()[a] + grid.hi()[a])
                }
            })
            .collect()
    })
}

/// Configured window, or the unit box around `o` clipped to the grid.
fn window(cfg: &ExperimentConfig, grid: &Grid, o: &[f64]) -> Window {
    match (&cfg.window_lo, &cfg.window_hi) {
        (Some(lo), Some(hi)) => Window { lo: lo.clone(), hi: hi.clone() },
        _ => Window {
            lo: o.iter().zip(grid.lo()).map(|(c, l)| (c - 0.5).max(*l)).collect(),
            hi: o.iter().zip(grid.hi()).map(|(c, h)| (c + 0.5).min(*h)).collect(),
        },
    }
}

fn scope(w: &Window) -> RefineScope {
    RefineScope::Window { lo: w.lo.clone(), hi: w.hi.clone() }
}

/// `w` grown by `cells` grid spacings, clipped to the grid.
fn padded(grid: &Grid, w: &Window, cells: f64) -> Window {
    let n = grid.dim();
    let pad = |a: usize| cells * grid.spacing()[a];
    Window {
        lo: (0..n).map(|a| (w.lo[a] - pad(a)).max(grid.lo()[a])).collect(),
        hi: (0..n).map(|a| (w.hi[a] + pad(a)).min(grid.hi()[a])).collect(),
    }
}

/// Configured ladder, or `{1/8, 1/4, 1/2, 1}` of the room left along the
/// line in both directions.
fn ladder(cfg: &ExperimentConfig, grid: &Grid, o: &[f64]) -> Vec<f64> {
    if !cfg.r.is_empty() {
        return cfg.r.clone();
    }
    let room = (grid.hi()[0] - o[0]).min(o[0] - grid.lo()[0]);
    [0.125, 0.25, 0.5, 1.0].iter().map(|f| f * room).collect()
}

fn max_over_window(grid: &Grid, w: &Window, f: impl Fn(usize) -> Option<f64>) -> f64 {
    (0..grid.len()).filter(|&i| grid.in_box(i, &w.lo, &w.hi)).filter_map(f).fold(0.0, f64::max)
}

fn minkowski_norm(v: &[f64]) -> f64 {
    let s = v[0] * v[0] - v[1..].iter().map(|c| c * c).sum::<f64>();
    if v[0] >= 0.0 && s >= 0.0 {
        s.sqrt()
    } else {
        f64::NEG_INFINITY
    }
}

fn timesep(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (_, grid, cg) = graph_for(ctx)?;
    let (x, y) = match (&cfg.x, &cfg.y) {
        (Some(x), Some(y)) => (x.clone(), y.clone()),
        _ => return usage("timesep needs points.x and points.y"),
    };
    let qi = q_independence_check(&cg, &x, &y, &cfg.q)?;
    let first = time_separation(&cg, &x, &y, cfg.q[0])?;
    ctx.lap("separation");
    let value = first.refined_value.to_f64();
    let deviation = qi.deviation.to_f64();
    let scale = if value.is_finite() { value.abs().max(f64::MIN_POSITIVE) } else { 1.0 };
    ctx.checks.push(Check::at_most("q_independence", deviation / scale, ctx.tol("qdev")));
    let mut res = json!({
        "dp_value": first.value,
        "refined_value": first.refined_value,
        "refined": first.refined,
        "path_nodes": first.path.len(),
        "q_values": qi.qs,
        "q_separations": qi.values,
        "q_deviation": qi.deviation,
    });
    if is_minkowski(cfg) {
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let exact = minkowski_norm(&d);
        res["exact"] = json!(crate::ExtReal::from_f64(exact));
        if exact.is_finite() && exact > 0.0 {
            ctx.checks.push(Check::at_most("closed_form_error", (value - exact).abs() / exact, ctx.tol("timesep")));
        } else {
            let got = if value == f64::NEG_INFINITY { "-inf" } else { "finite" };
            ctx.checks.push(Check::equals("closed_form_unreachable", got, "-inf"));
        }
    }
    ctx.put("separation", res);

    let src = grid.nearest(&x)?;
    let table = cg.forward(&[src], None);
    let mask = table.values.iter().map(|v| v.is_finite()).collect();
    ctx.fields.push(("separation".into(), ScalarField::new(grid.clone(), table.values.clone(), mask)?));

    if cfg.samples > 0 {
        let rti = reverse_triangle(&cg, cfg.samples, cfg.seed, ctx.tol("rti"));
        ctx.lap("reverse_triangle");
        ctx.checks.push(Check::at_most("reverse_triangle_violations", rti.violations as f64, 0.0));
        ctx.checks.push(Check::at_least("reverse_triangle_triples", rti.checked as f64, cfg.samples as f64).diagnostic());
        ctx.put(
            "reverse_triangle",
            json!({ "checked": rti.checked, "violations": rti.violations, "worst_defect": rti.worst }),
        );
    }
    Ok(())
}

pub struct TriangleStats {
    pub checked: usize,
    pub violations: usize,
    /// Largest `ℓ(x,y) + ℓ(y,z) - ℓ(x,z)` seen (`+inf` if `ℓ(x,z) = -∞`).
    pub worst: f64,
}

/// Reverse triangle inequality on grid separations over random chains
/// `x ≤ y ≤ z`: about `√samples` pairs `(x, y)`, each completed by as many
/// `z` in the future of `y`.
pub fn reverse_triangle(cg: &CausalGraph, samples: usize, seed: u64, tol: f64) -> TriangleStats {
    let grid = cg.grid();
    let pairs = (samples as f64).sqrt().ceil() as usize;
    let per_pair = samples.div_ceil(pairs.max(1));
    let partial: Vec<(usize, usize, f64)> = (0..pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut stats = (0, 0, f64::NEG_INFINITY);
            for _ in 0..16 {
                let x = rng.gen_range(0..grid.len());
                let tx = cg.forward(&[x], None);
                let ys: Vec<usize> = (0..grid.len()).filter(|&i| i != x && tx.values[i].is_finite()).collect();
                if ys.is_empty() {
                    continue;
                }
                let y = ys[rng.gen_range(0..ys.len())];
                let ty = cg.forward(&[y], None);
                let zs: Vec<usize> = (0..grid.len()).filter(|&i| ty.values[i].is_finite()).collect();
                for _ in 0..per_pair {
                    let z = zs[rng.gen_range(0..zs.len())];
                    let defect = tx.values[y] + ty.values[z] - tx.values[z];
                    stats.0 += 1;
                    if !(defect <= tol) {
                        stats.1 += 1;
                    }
                    stats.2 = stats.2.max(if defect.is_nan() { f64::INFINITY } else { defect });
                }
                break;
            }
            stats
        })
        .collect();
    let mut out = TriangleStats { checked: 0, violations: 0, worst: f64::NEG_INFINITY };
    for (c, v, w) in partial {
        out.checked += c;
        out.violations += v;
        out.worst = out.worst.max(w);
    }
    out
}

fn limit_json(l: &BusemannLimit) -> Value {
    json!({
        "ladder": l.ladder,
        "gaps": l.gaps,
        "gaps_decreasing": l.gaps_decreasing,
        "monotonicity_violation": l.monotonicity_violation,
        "truncated": l.truncated,
        "refined_nodes": l.fields.iter().map(|f| f.refined_nodes).collect::<Vec<_>>(),
        "refine_failures": l.fields.iter().map(|f| f.refine_failures).collect::<Vec<_>>(),
        "extrapolated": l.extrapolated.is_some(),
    })
}

fn limits(ctx: &mut Ctx, cg: &CausalGraph, line: &Line, rungs: &[f64], w: &Window) -> Result<(BusemannLimit, BusemannLimit)> {
    let opts = BusemannOptions { scope: scope(w), q: ctx.cfg.q[0], ..Default::default() };
    let plus = busemann_limit(cg, line, Sign::Plus, rungs, &opts)?;
    let neg: Vec<f64> = rungs.iter().map(|r| -r).collect();
    let minus = busemann_limit(cg, line, Sign::Minus, &neg, &opts)?;
    ctx.warnings.extend(plus.warnings.iter().cloned());
    ctx.warnings.extend(minus.warnings.iter().cloned());
    ctx.lap("busemann_limits");
    Ok((plus, minus))
}

fn busemann(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (_, grid, cg) = graph_for(ctx)?;
    let o = origin(cfg, &grid);
    let w = window(cfg, &grid, &o);
    let rungs = ladder(cfg, &grid, &o);
    let line = Line::comoving(o.clone());
    let (plus, minus) = limits(ctx, &cg, &line, &rungs, &w)?;
    let sc = scope(&w);
    let ord_tol = ctx.tol("ordering");
    let opts = OrderingOptions { sample_pairs: if cfg.samples > 0 { cfg.samples } else { 200 }, seed: cfg.seed, tolerance: ord_tol, q: cfg.q[0] };
    let ord = steepness_ordering_check(&plus, &minus, &cg, &sc, &opts)?;
    ctx.lap("ordering");

    ctx.checks.push(Check::flag("gaps_decreasing_plus", plus.gaps_decreasing));
    ctx.checks.push(Check::flag("gaps_decreasing_minus", minus.gaps_decreasing));
    ctx.checks.push(Check::at_most("monotonicity_plus", plus.monotonicity_violation, ord_tol));
    ctx.checks.push(Check::at_most("monotonicity_minus", minus.monotonicity_violation, ord_tol));
    ctx.checks.push(Check::at_most("steepness_violations", ord.steepness_violations as f64, 0.0));
    ctx.checks.push(Check::at_most("ordering_chain", ord.chain_violation, ord_tol));
    ctx.checks.push(Check::at_most("gamma0_agreement", ord.gamma0_deviation, ord_tol));

    let eik_tol = ctx.tol("eikonal");
    let eik_p = eikonal_stats(&plus.limit, &sc, eik_tol);
    let eik_m = eikonal_stats(&minus.limit, &sc, eik_tol);
    let product = static_product(cfg);
    let mut c = Check::at_most("eikonal_plus", eik_p.max_deviation, eik_tol);
    if !product {
        c = c.diagnostic();
    }
    ctx.checks.push(c);
    let mut c = Check::at_most("eikonal_minus", eik_m.max_deviation, eik_tol);
    if !product {
        c = c.diagnostic();
    }
    ctx.checks.push(c);

    let bt = ctx.tol("busemann");
    let diff = max_over_window(&grid, &w, |i| Some((plus.limit.get(i)? - minus.limit.get(i)?).abs()));
    let mut c = Check::at_most("plus_minus_gap", diff, bt);
    if !product {
        c = c.diagnostic();
    }
    ctx.checks.push(c);
    if product {
        let t0 = o[0];
        for (name, f) in [("closed_form_error_plus", &plus.limit), ("closed_form_error_minus", &minus.limit)] {
            let err = max_over_window(&grid, &w, |i| Some((f.get(i)? - (grid.coords(i)[0] - t0)).abs()));
            ctx.checks.push(Check::at_most(name, err, bt));
        }
        if let Some(e) = &plus.extrapolated {
            let err = max_over_window(&grid, &w, |i| Some((e.get(i)? - (grid.coords(i)[0] - t0)).abs()));
            ctx.put("extrapolated_error_plus", json!(err));
        }
    }
    let reg = regularity_diagnostics(&[&plus.limit, &minus.limit], &sc)?;
    ctx.put("line_origin", json!(o));
    ctx.put("window", json!({ "lo": w.lo, "hi": w.hi }));
    ctx.put("plus", limit_json(&plus));
    ctx.put("minus", limit_json(&minus));
    ctx.put("ordering", serde_json::to_value(&ord).unwrap_or(Value::Null));
    ctx.put("eikonal", json!({ "plus": eik_p, "minus": eik_m }));
    ctx.put("regularity", serde_json::to_value(&reg).unwrap_or(Value::Null));
    ctx.put("max_plus_minus_gap", json!(diff));

    ctx.fields.push(("bplus".into(), plus.limit.clone()));
    ctx.fields.push(("bminus".into(), minus.limit.clone()));
    if let Some(e) = plus.extrapolated {
        ctx.fields.push(("bplus_extrapolated".into(), e));
    }
    if let Some(e) = minus.extrapolated {
        ctx.fields.push(("bminus_extrapolated".into(), e));
    }
    Ok(())
}

fn compare(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (_, grid, cg) = graph_for(ctx)?;
    let n = grid.dim() as f64;
    let o = origin(cfg, &grid);
    let w = window(cfg, &grid, &o);
    let r = cfg.r.last().copied().unwrap_or(grid.hi()[0] - o[0]);
    let line = Line::comoving(o.clone());
    let opts = BusemannOptions { scope: scope(&padded(&grid, &w, 3.0)), q: cfg.q[0], ..Default::default() };
    let bf = busemann_field(&cg, &line, r, Sign::Plus, &opts)?;
    ctx.lap("busemann_field");
    let pq = PExponent::new(cfg.p)?;
    let fg = FaceGrid::new(grid.clone())?;
    let dal = p_dalembertian(&fg, &bf.values, pq)?;
    let bumps = default_bumps(&w.lo, &w.hi);
    let weak = weak_comparison_check(&fg, &bf.values, &bf.separation, pq, &bumps, ctx.tol("compare"))?;
    ctx.lap("comparison");

    let interior = |i: usize| !grid.on_boundary(i) && grid.in_box(i, &w.lo, &w.hi);
    let mut pointwise: f64 = 0.0;
    let mut pointwise_nodes = 0;
    for i in (0..grid.len()).filter(|&i| interior(i)) {
        if let (Some(d), Some(l)) = (dal.field.get(i), bf.separation.get(i)) {
            if l > 0.0 {
                let model = (n - 1.0) / l;
                pointwise = pointwise.max((d - model).abs() / model);
                pointwise_nodes += 1;
            }
        }
    }

    ctx.checks.push(Check::at_most("weak_comparison", weak.max_violation, weak.rel_tol));
    ctx.checks.push(Check::at_most("clamped_face_fraction", weak.clamped_fraction, 1e-3));
    ctx.checks.push(Check::at_least("test_functions_evaluated", weak.evaluated as f64, weak.test_function_count as f64).diagnostic());
    let mut sat = Check::at_most("saturation", weak.max_relative_gap, ctx.tol("compare"));
    let mut pw = Check::at_most("pointwise", pointwise, ctx.tol("pointwise"));
    if !is_minkowski(cfg) {
        sat = sat.diagnostic();
        pw = pw.diagnostic();
    }
    ctx.checks.push(sat);
    ctx.checks.push(pw);

    ctx.put("r", json!(r));
    ctx.put("line_origin", json!(o));
    ctx.put("window", json!({ "lo": w.lo, "hi": w.hi }));
    ctx.put("p", json!(cfg.p));
    ctx.put("weak", serde_json::to_value(&weak).unwrap_or(Value::Null));
    ctx.put("pointwise", json!({ "max_relative_error": pointwise, "nodes": pointwise_nodes }));
    ctx.put("outside_cone", json!(dal.outside_cone));
    ctx.put("clamped_faces", json!(dal.clamped_faces));
    ctx.fields.push(("busemann".into(), bf.values));
    ctx.fields.push(("separation".into(), bf.separation));
    ctx.fields.push(("dalembertian".into(), dal.field));
    Ok(())
}

/// Test field for the Bochner experiment on `grid`, normalized to vanish at `o`.
fn bochner_field(cfg: &ExperimentConfig, grid: &Arc<Grid>, o: &[f64], r: f64) -> Result<ScalarField> {
    let n = grid.dim();
    match cfg.field {
        FieldKind::Time => Ok(ScalarField::from_fn(grid.clone(), |x| x[0] - o[0])),
        FieldKind::Affine => {
            if !is_minkowski(cfg) {
                return usage("field = affine needs the minkowski model");
            }
            Ok(ScalarField::from_fn(grid.clone(), |x| 1.25 * (x[0] - o[0]) + 0.75 * (x[1] - o[1])))
        }
        FieldKind::MinkowskiBusemann => {
            if !is_minkowski(cfg) {
                return usage("field = minkowski-busemann needs the minkowski model");
            }
            let tip: Vec<f64> = (0..n).map(|a| if a == 0 { o[0] + r } else { o[a] }).collect();
            Ok(ScalarField::from_fn(grid.clone(), |x| {
                let d: Vec<f64> = tip.iter().zip(x).map(|(a, b)| a - b).collect();
                r - minkowski_norm(&d)
            }))
        }
        FieldKind::Busemann => {
            let cg = build_causal_graph(grid.clone(), cfg.stencil)?;
            let line = Line::comoving(o.to_vec());
            let opts = BusemannOptions { scope: RefineScope::All, q: cfg.q[0], ..Default::default() };
            Ok(busemann_field(&cg, &line, r, Sign::Plus, &opts)?.values)
        }
    }
}

fn halved(grid: &Grid) -> Result<Arc<Grid>> {
    let shape: Vec<usize> = (0..grid.dim())
        .map(|a| if grid.periodic(a) { grid.shape()[a] / 2 } else { grid.shape()[a].div_ceil(2) })
        .collect();
    Ok(Arc::new(Grid::over(grid.chart().clone(), grid.lo(), grid.hi(), &shape)?))
}

fn bochner(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let chart = chart_for(cfg, 0.0)?;
    let grid = grid_for(cfg, &chart)?;
    let o = origin(cfg, &grid);
    let r = cfg.r.last().copied().unwrap_or(grid.hi()[0] - o[0]);
    let w = match (&cfg.window_lo, &cfg.window_hi) {
        (Some(lo), Some(hi)) => Some(Window { lo: lo.clone(), hi: hi.clone() }),
        _ => None,
    };
    let pq = PExponent::new(cfg.p)?;
    let opts = BochnerOptions { eikonal_tol: ctx.tol("eikonal"), harmonic_tol: 1e-3, window: w.clone() };
    let b = bochner_field(cfg, &grid, &o, r)?;
    ctx.lap("field");
    let rep = bochner_residual(&b, pq, &opts)?;
    let kill = killing_check(&b, w.as_ref())?;
    ctx.lap("bochner");

    let affine = cfg.field == FieldKind::Affine;
    if affine {
        ctx.checks.push(Check::at_most("residual_absolute", rep.max_residual1, ctx.tol("affine")));
    } else {
        ctx.checks.push(Check::at_most("residual_relative", rep.max_relative_residual1, ctx.tol("bochner")));
    }
    ctx.checks.push(Check::at_most("harmonic_residual", rep.max_residual2, ctx.tol("bochner")).diagnostic());
    ctx.checks.push(Check::at_least("nodes_evaluated", rep.evaluated as f64, 1.0));

    let mut res = json!({
        "field": format!("{:?}", cfg.field).to_lowercase(),
        "max_residual": rep.max_residual1,
        "max_relative_residual": rep.max_relative_residual1,
        "max_harmonic_residual": rep.max_residual2,
        "harmonic_nodes": rep.residual2_nodes,
        "max_eikonal_deviation": rep.max_eikonal_deviation,
        "evaluated": rep.evaluated,
        "killing_residual": kill.max_residual,
    });
    if cfg.field != FieldKind::Busemann {
        let coarse = halved(&grid)?;
        let bc = bochner_field(cfg, &coarse, &o, r)?;
        let rc = bochner_residual(&bc, pq, &opts)?;
        let (fine, crude) = if affine {
            (rep.max_residual1, rc.max_residual1)
        } else {
            (rep.max_relative_residual1, rc.max_relative_residual1)
        };
        let floor = ctx.tol("affine");
        let ratio = if crude <= floor { 0.0 } else { fine / crude };
        ctx.checks.push(Check::at_most("residual_decay_ratio", ratio, 0.6));
        res["coarse_residual"] = json!(crude);
        res["decay_ratio"] = json!(ratio);
        ctx.lap("bochner_coarse");
    }
    ctx.put("bochner", res);
    ctx.fields.push(("field".into(), b));
    ctx.fields.push(("bochner_lhs".into(), rep.lhs));
    ctx.fields.push(("bochner_rhs".into(), rep.rhs));
    ctx.fields.push(("bochner_residual".into(), rep.residual1));
    Ok(())
}

fn split(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (_, grid, cg) = graph_for(ctx)?;
    let o = origin(cfg, &grid);
    let w = window(cfg, &grid, &o);
    let rungs = ladder(cfg, &grid, &o);
    let line = Line::comoving(o.clone());
    let (plus, minus) = limits(ctx, &cg, &line, &rungs, &padded(&grid, &w, 3.0))?;
    let bp = plus.extrapolated.clone().unwrap_or_else(|| plus.limit.clone());
    let bm = minus.extrapolated.clone().unwrap_or_else(|| minus.limit.clone());
    let tau = 0.25 * (w.hi[0] - w.lo[0]);
    let opts = SplitOptions { window: w.clone(), tau, tol: None, floor: ctx.tol("split"), flow_steps: 8 };
    let rep = split_metric(&bp, &opts)?;
    ctx.lap("split");

    let verdict = serde_json::to_value(rep.verdict).unwrap_or(Value::Null);
    ctx.checks.push(Check::equals("verdict", verdict.as_str().unwrap_or(""), "splits"));
    let product = static_product(cfg);
    let diff = max_over_window(&grid, &w, |i| Some((bp.get(i)? - bm.get(i)?).abs()));
    let mut c = Check::at_most("plus_equals_minus", diff, ctx.tol("busemann"));
    if !product {
        c = c.diagnostic();
    }
    ctx.checks.push(c);
    if matches!(cfg.model.name.as_str(), "circle" | "product-circle") && rep.verdict == Verdict::Splits {
        let target = cfg.model.radius * cfg.model.radius;
        let err = rep.induced_metric.iter().map(|h| (h[0][0] - target).abs() / target).fold(0.0, f64::max);
        ctx.checks.push(Check::at_most("induced_metric_error", err, 0.02));
        ctx.put("induced_metric_expected", json!(target));
    }
    ctx.put("line_origin", json!(o));
    ctx.put("window", json!({ "lo": w.lo, "hi": w.hi }));
    ctx.put("plus", limit_json(&plus));
    ctx.put("minus", limit_json(&minus));
    ctx.put("max_plus_minus_gap", json!(diff));
    ctx.put("splitting", serde_json::to_value(&rep).unwrap_or(Value::Null));
    if rep.verdict != Verdict::Splits {
        ctx.warnings.extend(rep.notes.iter().cloned());
    }
    ctx.fields.push(("bplus".into(), bp));
    ctx.fields.push(("bminus".into(), bm));
    Ok(())
}

fn energycond(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let chart = chart_for(cfg, 0.0)?;
    let conds: Vec<EnergyCondition> = match cfg.condition.as_deref() {
        None | Some("all") => vec![EnergyCondition::Nec, EnergyCondition::Wec, EnergyCondition::Sec],
        Some(list) => list
            .split(',')
            .map(|s| EnergyCondition::parse(s.trim()).ok_or_else(|| crate::LabError::Usage(format!("unknown condition '{s}'"))))
            .collect::<Result<_>>()?,
    };
    let samples = if cfg.samples > 0 { cfg.samples } else { 64 };
    let opts = EnergyOptions { tolerance: ctx.tol("energy"), ..Default::default() };
    let mut out = Vec::new();
    for c in conds {
        let rep = energy_condition_check(&chart, c, samples, cfg.seed, &opts)?;
        let name = serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_lowercase)).unwrap_or_default();
        ctx.checks.push(Check::at_least(&name, rep.min_value, -ctx.tol("energy")));
        let cm = &rep.comoving_values;
        let (lo, hi) = cm.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        out.push(json!({
            "condition": c,
            "sample_points": rep.sample_points,
            "vectors_checked": rep.vectors_checked,
            "min_value": rep.min_value,
            "violations": rep.violations.len(),
            "comoving_min": if cm.is_empty() { Value::Null } else { json!(lo) },
            "comoving_max": if cm.is_empty() { Value::Null } else { json!(hi) },
            "first_violation": rep.violations.first().map(|v| json!({ "point": v.point, "vector": v.vector, "value": v.value })),
        }));
    }
    ctx.lap("energy");
    ctx.put("conditions", Value::Array(out));
    Ok(())
}

fn hawking(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let t0 = match cfg.slice_t0 {
        Some(t) => t,
        None => return usage("hawking needs slice.t0"),
    };
    let chart = chart_for(cfg, 0.0)?;
    let grid = grid_for(cfg, &chart)?;
    let pad = 0.05 * (grid.hi()[0] - grid.lo()[0]);
    let wide = chart_for(cfg, pad)?;
    let grid = Arc::new(Grid::over(wide.clone(), grid.lo(), grid.hi(), grid.shape())?);
    let cg = build_causal_graph(grid.clone(), cfg.stencil)?;
    note_degree(ctx, &cg);
    ctx.lap("graph");
    let dt = grid.spacing()[0];
    let k0 = ((t0 - grid.lo()[0]) / dt).round();
    if k0 < 1.0 || k0 as usize >= grid.shape()[0] || (grid.lo()[0] + k0 * dt - t0).abs() > 1e-9 * (1.0 + t0.abs()) {
        return usage(format!("slice.t0 = {t0} must be a grid time level above the first"));
    }
    let k0 = k0 as usize;
    let n = grid.dim();
    let xs: Vec<f64> = (1..n).map(|a| 0.5 * (grid.lo()[a] + grid.hi()[a])).collect();
    let h = slice_mean_curvature(&wide, t0, &xs)?;
    let targets: Vec<usize> = (0..grid.len()).filter(|&i| grid.slice_of(i) == k0).collect();
    let table = cg.backward(&targets, None);
    let (mut sup, mut arg) = (f64::NEG_INFINITY, None);
    for i in (0..grid.len()).filter(|&i| grid.slice_of(i) < k0) {
        if table.values[i] > sup {
            sup = table.values[i];
            arg = Some(i);
        }
    }
    ctx.lap("separation");
    let bound = (n as f64 - 1.0) / h;
    ctx.checks.push(Check::at_least("mean_curvature", h, f64::MIN_POSITIVE));
    ctx.checks.push(Check::at_most("sup_separation", sup, if h > 0.0 { bound + ctx.tol("hawking") } else { f64::INFINITY }));
    ctx.put(
        "hawking",
        json!({
            "slice_t0": t0,
            "mean_curvature": h,
            "bound": bound,
            "sup_separation": crate::ExtReal::from_f64(sup),
            "argmax": arg.map(|i| grid.coords(i)),
        }),
    );
    let mask = table.values.iter().enumerate().map(|(i, v)| v.is_finite() && grid.slice_of(i) <= k0).collect();
    ctx.fields.push(("separation_to_slice".into(), ScalarField::new(grid.clone(), table.values, mask)?));
    Ok(())
}

fn seccheck(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let (x, u, v) = match (&cfg.x, &cfg.sec_u, &cfg.sec_v) {
        (Some(x), Some(u), Some(v)) => (x.clone(), u.clone(), v.clone()),
        _ => return usage("seccheck needs points.x, sec.u and sec.v"),
    };
    let chart = chart_for(cfg, 0.0)?;
    let est = match cfg.oracle {
        Oracle::Shooting => {
            let shooter = GeodesicShooting::new(chart.clone());
            sec_from_timesep(&chart, &x, &u, &v, &cfg.sec_scales, &shooter)?
        }
        Oracle::Dp => {
            let grid = grid_for(cfg, &chart)?;
            let graph = Arc::new(build_causal_graph(grid, cfg.stencil)?);
            let oracle = DpSeparation { graph, q: cfg.q[0] };
            sec_from_timesep(&chart, &x, &u, &v, &cfg.sec_scales, &oracle)?
        }
    };
    ctx.lap("estimate");
    let (exact, source) = match chart.analytic_curvature(&x) {
        Some(c) => (c.sectional_form(&u, &v), "analytic"),
        None => (curvature_pack_richardson(&chart, &x, default_step(&chart))?.sectional_form(&u, &v), "finite-difference"),
    };
    let err = if exact.abs() > 1e-8 { (est.value - exact).abs() / exact.abs() } else { est.value.abs() };
    ctx.checks.push(Check::at_most("sectional_error", err, ctx.tol("sec")));
    ctx.put(
        "sectional",
        json!({
            "estimate": est.value,
            "reference": exact,
            "reference_source": source,
            "fit_residual": est.fit_residual,
            "samples": est.samples,
            "oracle": format!("{:?}", cfg.oracle).to_lowercase(),
        }),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(text: &str) -> Outcome {
        let cfg = ExperimentConfig::parse(text).unwrap();
        run_experiment(&cfg, cfg.experiment.unwrap())
    }

    #[test]
    fn timesep_matches_minkowski() {
        let out = run("experiment = timesep\nmodel.name = minkowski\ngrid.shape = 41, 41\npoints.x = -0.8, 0.1\npoints.y = 0.9, -0.3\nq = 0.5, -1\nsamples = 100\n");
        assert_eq!(out.exit_code, 0, "{}", out.report.to_json());
        assert!(out.report.check("closed_form_error").unwrap().passed);
        assert!(out.report.check("reverse_triangle_violations").unwrap().passed);
    }

    #[test]
    fn usage_errors_exit_two() {
        let cfg = ExperimentConfig::parse("experiment = hawking\nmodel.name = flrw\nmodel.n = 2\ngrid.shape = 11, 5\nslice.t0 = 1.234\n").unwrap();
        let out = run_experiment(&cfg, Experiment::Hawking);
        assert_eq!(out.exit_code, 2);
        assert_eq!(out.report.status, "error");
    }

    #[test]
    fn de_sitter_sec_fails() {
        let out = run("experiment = energycond\nmodel.name = flrw\nmodel.n = 4\nmodel.a = desitter\ncondition = sec\nsamples = 8\nexpect = negative\n");
        assert_eq!(out.exit_code, 0);
        assert_eq!(out.report.status, "expected-negative");
    }
}
