use super::curvature::{christoffel, default_step};
use super::MetricChart;
use crate::error::{usage, LabError, Result};

/// Future unit normal `N^a = g^{a0} / sqrt(g^{00})` of the slice `{t = const}`.
pub fn mean_curvature_normal(chart: &MetricChart, x: &[f64]) -> Result<Vec<f64>> {
    let g = chart.metric_matrix(x);
    let n = g.nrows();
    let ginv = g.try_inverse().ok_or_else(|| LabError::Internal("metric is degenerate".into()))?;
    let g00 = ginv[(0, 0)];
    if !(g00 > 0.0) {
        return Err(LabError::Internal("slice normal is not timelike".into()));
    }
    Ok((0..n).map(|a| ginv[(a, 0)] / g00.sqrt()).collect())
}

/// Mean curvature `∇_a N^a` of `{t = t0}` at spatial point `xs`, positive
/// for expanding slices.
pub fn slice_mean_curvature(chart: &MetricChart, t0: f64, xs: &[f64]) -> Result<f64> {
    let n = chart.dim();
    if xs.len() + 1 != n {
        return usage(format!("spatial point must have {} coordinates", n - 1));
    }
    let h = 1e-2 * default_step(chart);
    if t0 - h < chart.lo()[0] || t0 + h > chart.hi()[0] {
        return usage(format!("slice t = {t0} is not inside the chart box"));
    }
    let mut x = vec![t0];
    x.extend_from_slice(xs);
    let normal = mean_curvature_normal(chart, &x)?;
    let gam = christoffel(chart, &x, h);
    let mut div = 0.0;
    for a in 0..n {
        let mut xp = x.clone();
        xp[a] += h;
        let mut xm = x.clone();
        xm[a] -= h;
        div += (mean_curvature_normal(chart, &xp)?[a] - mean_curvature_normal(chart, &xm)?[a]) / (2.0 * h);
        for b in 0..n {
            div += gam[(a * n + a) * n + b] * normal[b];
        }
    }
    Ok(div)
}

#[cfg(test)]
mod tests {
    use super::super::models::{self, ScaleFactor};
    use super::*;

    #[test]
    fn minkowski_slices_are_totally_geodesic() {
        assert!(slice_mean_curvature(&models::minkowski(4), 0.2, &[0.0, 0.1, 0.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn flrw_expansion_rate() {
        let m = slice_mean_curvature(&models::flrw(4, ScaleFactor::Matter), 1.0, &[0.0, 0.0, 0.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-6, "{m}");
        let d = slice_mean_curvature(&models::flrw(4, ScaleFactor::DeSitter), 0.0, &[0.3, 0.0, 0.0]).unwrap();
        assert!((d - 3.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn slice_outside_box_is_rejected() {
        assert!(slice_mean_curvature(&models::minkowski(2), 5.0, &[0.0]).is_err());
        assert!(slice_mean_curvature(&models::minkowski(2), 0.0, &[0.0, 1.0]).is_err());
    }
}
