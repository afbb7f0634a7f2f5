use nalgebra::DMatrix;
use serde::Serialize;

use super::MetricChart;
use crate::error::{domain, usage, Result};

/// Metric with its first and second coordinate derivatives at a point.
/// `dg[a] = ∂_a g`, `ddg[a][b] = ∂_a ∂_b g`.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub g: DMatrix<f64>,
    pub dg: Vec<DMatrix<f64>>,
    pub ddg: Vec<Vec<DMatrix<f64>>>,
}

impl MetricJet {
    pub fn flat(g: DMatrix<f64>) -> Self {
        let n = g.nrows();
        let z = DMatrix::zeros(n, n);
        MetricJet { dg: vec![z.clone(); n], ddg: vec![vec![z; n]; n], g }
    }
}

/// Curvature tensors at a point.
///
/// Index conventions: `Γ^i_{jk}`, `R_{abcd}` fully lowered with
/// `Ric_{ik} = g^{jl} R_{ijkl}`. Flat index layout is row-major.
#[derive(Clone, Debug, Serialize)]
pub struct CurvatureRecord {
    pub dim: usize,
    pub christoffel: Vec<f64>,
    pub riemann: Vec<f64>,
    pub ricci: Vec<Vec<f64>>,
    pub scalar: f64,
    pub einstein: Vec<Vec<f64>>,
    pub volume_density: f64,
}

impl CurvatureRecord {
    pub fn gamma(&self, i: usize, j: usize, k: usize) -> f64 {
        let n = self.dim;
        self.christoffel[(i * n + j) * n + k]
    }

    pub fn riemann(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        let n = self.dim;
        self.riemann[((a * n + b) * n + c) * n + d]
    }

    pub fn ricci_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.ricci[i][j])
    }

    pub fn einstein_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.einstein[i][j])
    }

    /// `R(u, v, u, v)` with the lowered Riemann tensor.
    pub fn sectional_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for d in 0..n {
                        s += self.riemann(a, b, c, d) * u[a] * v[b] * u[c] * v[d];
                    }
                }
            }
        }
        s
    }

    /// Largest absolute difference over all stored tensors.
    pub fn max_abs_diff(&self, other: &CurvatureRecord) -> f64 {
        let flat = |r: &CurvatureRecord| {
            let mut v = r.christoffel.clone();
            v.extend(&r.riemann);
            v.extend(r.ricci.iter().flatten());
            v.extend(r.einstein.iter().flatten());
            v.push(r.scalar);
            v.push(r.volume_density);
            v
        };
        flat(self).iter().zip(flat(other)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

pub(crate) fn christoffel_from(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Vec<f64> {
    let n = ginv.nrows();
    let mut out = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]);
                }
                out[(i * n + j) * n + k] = 0.5 * s;
                out[(i * n + k) * n + j] = 0.5 * s;
            }
        }
    }
    out
}

/// Builds every curvature tensor from a metric jet. Works in any signature,
/// so it also serves induced Riemannian metrics.
pub fn assemble_curvature(jet: &MetricJet) -> CurvatureRecord {
    let g = &jet.g;
    let n = g.nrows();
    let ginv = g.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    let gam = christoffel_from(&ginv, &jet.dg);
    let gm = |i: usize, j: usize, k: usize| gam[(i * n + j) * n + k];
    let dd = |a: usize, b: usize, i: usize, j: usize| jet.ddg[a][b][(i, j)];
    let mut riem = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let mut r = 0.5 * (dd(b, c, a, d) + dd(a, d, b, c) - dd(a, c, b, d) - dd(b, d, a, c));
                    for e in 0..n {
                        for f in 0..n {
                            r += g[(e, f)] * (gm(e, b, c) * gm(f, a, d) - gm(e, b, d) * gm(f, a, c));
                        }
                    }
                    riem[((a * n + b) * n + c) * n + d] = r;
                }
            }
        }
    }
    let rm = |a: usize, b: usize, c: usize, d: usize| riem[((a * n + b) * n + c) * n + d];
    let mut ricci = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                for l in 0..n {
                    s += ginv[(j, l)] * rm(i, j, k, l);
                }
            }
            ricci[i][k] = s;
        }
    }
    let mut scalar = 0.0;
    for i in 0..n {
        for k in 0..n {
            scalar += ginv[(i, k)] * ricci[i][k];
        }
    }
    let einstein = (0..n).map(|i| (0..n).map(|k| ricci[i][k] - 0.5 * scalar * g[(i, k)]).collect()).collect();
    CurvatureRecord {
        dim: n,
        christoffel: gam,
        riemann: riem,
        ricci,
        scalar,
        einstein,
        volume_density: g.determinant().abs().sqrt(),
    }
}

/// Default finite-difference step: `1e-3` of the smallest box extent.
pub fn default_step(chart: &MetricChart) -> f64 {
    (0..chart.dim()).map(|a| chart.extent(a)).fold(f64::INFINITY, f64::min) * 1e-3
}

fn check_interior(chart: &MetricChart, x: &[f64], margin: f64) -> Result<()> {
    if x.len() != chart.dim() {
        return usage(format!("point has dimension {}, chart has {}", x.len(), chart.dim()));
    }
    if !(margin > 0.0) {
        return usage("finite-difference step must be positive");
    }
    for a in 0..chart.dim() {
        if chart.periodic()[a] {
            continue;
        }
        if x[a] - margin < chart.lo()[a] || x[a] + margin > chart.hi()[a] {
            return domain(format!("point is within {margin} of the chart boundary on axis {a}"));
        }
    }
    Ok(())
}

fn shifted(x: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut y = x.to_vec();
    for &(a, d) in moves {
        y[a] += d;
    }
    y
}

pub(crate) fn fd_jet(chart: &MetricChart, x: &[f64], h: f64) -> MetricJet {
    let n = chart.dim();
    let g0 = chart.metric_matrix(x);
    let plus: Vec<DMatrix<f64>> = (0..n).map(|a| chart.metric_matrix(&shifted(x, &[(a, h)]))).collect();
    let minus: Vec<DMatrix<f64>> = (0..n).map(|a| chart.metric_matrix(&shifted(x, &[(a, -h)]))).collect();
    let dg: Vec<DMatrix<f64>> = (0..n).map(|a| (&plus[a] - &minus[a]) / (2.0 * h)).collect();
    let mut ddg = vec![vec![DMatrix::zeros(n, n); n]; n];
    for a in 0..n {
        ddg[a][a] = (&plus[a] - &g0 * 2.0 + &minus[a]) / (h * h);
        for b in (a + 1)..n {
            let pp = chart.metric_matrix(&shifted(x, &[(a, h), (b, h)]));
            let pm = chart.metric_matrix(&shifted(x, &[(a, h), (b, -h)]));
            let mp = chart.metric_matrix(&shifted(x, &[(a, -h), (b, h)]));
            let mm = chart.metric_matrix(&shifted(x, &[(a, -h), (b, -h)]));
            let m = (pp - pm - mp + mm) / (4.0 * h * h);
            ddg[a][b] = m.clone();
            ddg[b][a] = m;
        }
    }
    MetricJet { g: g0, dg, ddg }
}

/// Curvature by central finite differences of the metric callback.
pub fn curvature_pack(chart: &MetricChart, x: &[f64], step: f64) -> Result<CurvatureRecord> {
    check_interior(chart, x, 2.0 * step)?;
    Ok(assemble_curvature(&fd_jet(chart, x, step)))
}

/// As [`curvature_pack`], with one Richardson extrapolation of the
/// derivatives (`(4 f(h/2) - f(h)) / 3`).
pub fn curvature_pack_richardson(chart: &MetricChart, x: &[f64], step: f64) -> Result<CurvatureRecord> {
    check_interior(chart, x, 2.0 * step)?;
    let coarse = fd_jet(chart, x, step);
    let fine = fd_jet(chart, x, 0.5 * step);
    let mix = |f: &DMatrix<f64>, c: &DMatrix<f64>| (f * 4.0 - c) / 3.0;
    let n = chart.dim();
    let jet = MetricJet {
        g: fine.g.clone(),
        dg: (0..n).map(|a| mix(&fine.dg[a], &coarse.dg[a])).collect(),
        ddg: (0..n).map(|a| (0..n).map(|b| mix(&fine.ddg[a][b], &coarse.ddg[a][b])).collect()).collect(),
    };
    Ok(assemble_curvature(&jet))
}

/// Christoffel symbols only (first derivatives); no boundary check, so it
/// can be used by integrators that step slightly outside the box.
pub fn christoffel(chart: &MetricChart, x: &[f64], step: f64) -> Vec<f64> {
    let n = chart.dim();
    let g = chart.metric_matrix(x);
    let ginv = g.try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    let dg: Vec<DMatrix<f64>> = (0..n)
        .map(|a| (chart.metric_matrix(&shifted(x, &[(a, step)])) - chart.metric_matrix(&shifted(x, &[(a, -step)]))) / (2.0 * step))
        .collect();
    christoffel_from(&ginv, &dg)
}

#[cfg(test)]
mod tests {
    use super::super::models::{self, ScaleFactor};
    use super::*;

    #[test]
    fn flat_models_have_vanishing_curvature() {
        for chart in [models::minkowski(4), models::product_circle(1.5), models::product_torus(3)] {
            let x: Vec<f64> = (0..chart.dim()).map(|a| 0.5 * (chart.lo()[a] + chart.hi()[a]) + 0.1).collect();
            let r = curvature_pack(&chart, &x, 1e-3).unwrap();
            assert!(r.riemann.iter().all(|v| v.abs() < 1e-9));
            assert!((r.volume_density - chart.metric_matrix(&x).determinant().abs().sqrt()).abs() < 1e-14);
        }
        let r = curvature_pack(&models::minkowski(3), &[0.0, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(r.volume_density, 1.0);
    }

    #[test]
    fn boundary_points_are_rejected() {
        let chart = models::minkowski(2);
        assert!(curvature_pack(&chart, &[chart.lo()[0] + 1e-4, 0.0], 1e-3).is_err());
        assert!(curvature_pack(&chart, &[0.0], 1e-3).is_err());
    }

    #[test]
    fn flrw_matter_ricci_time_component() {
        let chart = models::flrw(4, ScaleFactor::Matter);
        let r = curvature_pack_richardson(&chart, &[1.0, 0.1, 0.2, 0.3], 1e-3).unwrap();
        // Ric_00 = -3 a''/a with a = t^(2/3): a''/a = -2/9.
        assert!((r.ricci[0][0] - 2.0 / 3.0).abs() < 1e-7, "{}", r.ricci[0][0]);
    }

    #[test]
    fn flrw_closed_forms() {
        // Hand-derived for g = dt^2 - a^2 dx^2 in 1+3:
        // R_{t i t j} = a a'' δ_ij, R_{ijkl} = -a^2 a'^2 (δ_ik δ_jl - δ_il δ_jk),
        // R = -(n-1) [2 a''/a + (n-2) a'^2/a^2].
        let chart = models::flrw(4, ScaleFactor::Matter);
        let t: f64 = 1.3;
        let a = t.powf(2.0 / 3.0);
        let ad = 2.0 / 3.0 * t.powf(-1.0 / 3.0);
        let add = -2.0 / 9.0 * t.powf(-4.0 / 3.0);
        let r = chart.analytic_curvature(&[t, 0.0, 0.0, 0.0]).unwrap();
        assert!((r.gamma(0, 1, 1) - a * ad).abs() < 1e-12);
        assert!((r.gamma(1, 0, 1) - ad / a).abs() < 1e-12);
        assert!((r.riemann(0, 1, 0, 1) - a * add).abs() < 1e-12);
        assert!((r.riemann(1, 2, 1, 2) + a * a * ad * ad).abs() < 1e-12);
        assert!((r.ricci[1][1] - (a * add + 2.0 * ad * ad)).abs() < 1e-12);
        assert!((r.scalar + 3.0 * (2.0 * add / a + 2.0 * ad * ad / (a * a))).abs() < 1e-12);
    }

    #[test]
    fn sphere_product_ricci() {
        let chart = models::product_sphere(2.0);
        let theta: f64 = 1.1;
        let r = curvature_pack_richardson(&chart, &[0.0, theta, 0.4], 1e-3).unwrap();
        // Round sphere: Ric_h = h / rho^2; the chart metric is -h.
        assert!((r.ricci[1][1] - 1.0).abs() < 1e-6);
        assert!((r.ricci[2][2] - theta.sin().powi(2)).abs() < 1e-6);
        assert!((r.scalar + 2.0 / 4.0).abs() < 1e-6);
    }

    #[test]
    fn fd_matches_oracle_at_second_order() {
        let charts = [
            models::flrw(4, ScaleFactor::Matter),
            models::flrw(3, ScaleFactor::DeSitter),
            models::product_sphere(1.3),
            models::bump_product(0.3, 0.0, 0.5),
        ];
        for chart in charts {
            let x: Vec<f64> = (0..chart.dim()).map(|a| 0.5 * (chart.lo()[a] + chart.hi()[a]) + 0.05 * a as f64).collect();
            let oracle = chart.analytic_curvature(&x).unwrap();
            let e1 = curvature_pack(&chart, &x, 2e-2).unwrap().max_abs_diff(&oracle);
            let e2 = curvature_pack(&chart, &x, 1e-2).unwrap().max_abs_diff(&oracle);
            let ratio = e1 / e2;
            assert!(ratio > 3.0 && ratio < 5.0, "{}: ratio {ratio}", chart.name());
        }
    }

    #[test]
    fn symmetries_and_traces() {
        let charts = [models::flrw(4, ScaleFactor::Matter), models::product_sphere(1.3), models::flrw(2, ScaleFactor::DeSitter)];
        for chart in charts {
            let n = chart.dim();
            let x: Vec<f64> = (0..n).map(|a| 0.5 * (chart.lo()[a] + chart.hi()[a]) + 0.05).collect();
            let r = curvature_pack(&chart, &x, 1e-3).unwrap();
            let scale = r.riemann.iter().fold(1e-300, |m: f64, v| m.max(v.abs()));
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        for d in 0..n {
                            let v = r.riemann(a, b, c, d);
                            assert!((v + r.riemann(b, a, c, d)).abs() <= 1e-8 * scale);
                            assert!((v - r.riemann(c, d, a, b)).abs() <= 1e-8 * scale);
                        }
                    }
                    assert!((r.ricci[a][b] - r.ricci[b][a]).abs() <= 1e-8 * scale);
                }
            }
        }
    }

    #[test]
    fn einstein_tensor_vanishes_in_two_dimensions() {
        for chart in [models::flrw(2, ScaleFactor::Matter), models::flrw(2, ScaleFactor::DeSitter), models::bump_product(0.4, 0.0, 0.3)] {
            let x: Vec<f64> = (0..2).map(|a| 0.5 * (chart.lo()[a] + chart.hi()[a]) + 0.07).collect();
            let r = curvature_pack(&chart, &x, 1e-3).unwrap();
            for row in &r.einstein {
                for v in row {
                    assert!(v.abs() < 1e-6, "{}: {v}", chart.name());
                }
            }
        }
    }
}
