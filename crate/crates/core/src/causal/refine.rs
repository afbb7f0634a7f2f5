//! Continuous polish of grid paths: maximize the discretized q-action over
//! the interior vertices of a polyline with pinned endpoints.

use std::ops::{AddAssign, SubAssign};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{domain, Result};
use crate::spacetime::MetricChart;

#[derive(Clone, Debug, Serialize)]
pub struct RefineOptions {
    /// Final number of segments; levels double from 2 up to this.
    pub max_segments: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub metric_fd_step: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { max_segments: 32, max_iter: 200, rel_tol: 1e-10, metric_fd_step: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Refined {
    /// `(K^{q-1} Σ a_k^q)^{1/q}` for the final polyline.
    pub value: f64,
    pub points: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

struct Segment {
    a: f64,
    delta: DVector<f64>,
    g: DMatrix<f64>,
    mid: Vec<f64>,
}

fn segments(chart: &MetricChart, pts: &[DVector<f64>]) -> Option<Vec<Segment>> {
    pts.windows(2)
        .map(|w| {
            let delta = &w[1] - &w[0];
            let mid: Vec<f64> = ((&w[0] + &w[1]) * 0.5).iter().copied().collect();
            let g = chart.metric_matrix(&mid);
            let gd = &g * &delta;
            let qq = gd.dot(&delta);
            if !(qq > 0.0) || !(gd[0] > 0.0) {
                return None;
            }
            Some(Segment { a: qq.sqrt(), delta, g, mid })
        })
        .collect()
}

fn objective(segs: &[Segment], q: f64) -> f64 {
    segs.iter().map(|s| s.a.powf(q)).sum::<f64>() / q
}

fn action(segs: &[Segment], q: f64) -> f64 {
    let k = segs.len() as f64;
    (k.powf(q - 1.0) * segs.iter().map(|s| s.a.powf(q)).sum::<f64>()).powf(1.0 / q)
}

fn resample(points: &[DVector<f64>], k: usize) -> Vec<DVector<f64>> {
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        cum.push(cum.last().unwrap() + (&w[1] - &w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(k + 1);
    out.push(points[0].clone());
    let mut j = 0;
    for i in 1..k {
        let s = total * i as f64 / k as f64;
        while j + 1 < cum.len() - 1 && cum[j + 1] < s {
            j += 1;
        }
        let span = cum[j + 1] - cum[j];
        let f = if span > 0.0 { (s - cum[j]) / span } else { 0.0 };
        out.push(&points[j] + (&points[j + 1] - &points[j]) * f);
    }
    out.push(points[points.len() - 1].clone());
    out
}

/// One damped Newton solve at a fixed number of segments.
fn newton(chart: &MetricChart, pts: &mut [DVector<f64>], q: f64, opts: &RefineOptions) -> Result<(usize, bool)> {
    let n = pts[0].len();
    let k = pts.len() - 1;
    let m = (k - 1) * n;
    if m == 0 {
        return Ok((0, true));
    }
    let Some(mut segs) = segments(chart, pts) else { return domain("polyline is not future timelike") };
    let mut j_cur = objective(&segs, q);
    let fd = opts.metric_fd_step;
    for it in 0..opts.max_iter {
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for (s, seg) in segs.iter().enumerate() {
            let jp = seg.a.powf(q - 1.0);
            let jpp = (q - 1.0) * seg.a.powf(q - 2.0);
            let gd = &seg.g * &seg.delta;
            let da = &gd / seg.a;
            // Variation of the midpoint metric.
            let mut dm = DVector::zeros(n);
            for c in 0..n {
                let mut p = seg.mid.clone();
                p[c] += fd;
                let mut mm = seg.mid.clone();
                mm[c] -= fd;
                let dg = (chart.metric_matrix(&p) - chart.metric_matrix(&mm)) / (2.0 * fd);
                dm[c] = (&dg * &seg.delta).dot(&seg.delta) / (2.0 * seg.a);
            }
            let end_grad = (&da + &dm * 0.5) * jp;
            let start_grad = (-&da + &dm * 0.5) * jp;
            let block = &da * da.transpose() * jpp + (&seg.g - &gd * gd.transpose() / (seg.a * seg.a)) * (jp / seg.a);
            // Segment s joins vertex s to vertex s+1; interior vertex v has unknowns at (v-1)*n.
            if s + 1 < k {
                let o = s * n;
                grad.rows_mut(o, n).add_assign(&end_grad);
                hess.view_mut((o, o), (n, n)).add_assign(&block);
            }
            if s > 0 {
                let o = (s - 1) * n;
                grad.rows_mut(o, n).add_assign(&start_grad);
                hess.view_mut((o, o), (n, n)).add_assign(&block);
            }
            if s > 0 && s + 1 < k {
                let (a, b) = ((s - 1) * n, s * n);
                hess.view_mut((a, b), (n, n)).sub_assign(&block);
                hess.view_mut((b, a), (n, n)).sub_assign(&block);
            }
        }
        let neg = -hess;
        let dir = match neg.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let slope = grad.dot(&dir);
        if !(slope > 0.0) {
            return Ok((it, true));
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<DVector<f64>> = pts
                .iter()
                .enumerate()
                .map(|(v, p)| if v == 0 || v == k { p.clone() } else { p + dir.rows((v - 1) * n, n) * t })
                .collect();
            if let Some(ts) = segments(chart, &trial) {
                let j_new = objective(&ts, q);
                if j_new >= j_cur + 1e-4 * t * slope {
                    accepted = Some((trial, ts, j_new));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, ts, j_new)) = accepted else { return Ok((it, true)) };
        pts.clone_from_slice(&trial);
        segs = ts;
        let gain = j_new - j_cur;
        j_cur = j_new;
        if gain <= opts.rel_tol * j_cur.abs() {
            return Ok((it + 1, true));
        }
    }
    Ok((opts.max_iter, false))
}

/// Maximizes the q-action over polylines through the given endpoints,
/// starting from `polyline` (typically a grid path, in unwrapped chart
/// coordinates). Levels double the segment count from 2 to
/// `opts.max_segments`.
pub fn refine_polyline(chart: &MetricChart, polyline: &[Vec<f64>], q: f64, opts: &RefineOptions) -> Result<Refined> {
    if polyline.len() < 2 {
        return domain("polyline needs at least two points");
    }
    let pts: Vec<DVector<f64>> = polyline.iter().map(|p| DVector::from_column_slice(p)).collect();
    let target = opts.max_segments.max(1);
    // Start from the coarsest causal resampling.
    let mut k = 1;
    let mut cur = resample(&pts, k);
    while segments(chart, &cur).is_none() {
        if k >= target {
            return domain("no causal resampling of the path");
        }
        k *= 2;
        cur = resample(&pts, k);
    }
    let mut iterations = 0;
    let mut converged = true;
    loop {
        let (it, ok) = newton(chart, &mut cur, q, opts)?;
        iterations += it;
        converged &= ok;
        if k >= target {
            break;
        }
        let mut next = Vec::with_capacity(2 * k + 1);
        for w in cur.windows(2) {
            next.push(w[0].clone());
            next.push((&w[0] + &w[1]) * 0.5);
        }
        next.push(cur[k].clone());
        cur = next;
        k *= 2;
    }
    let segs = segments(chart, &cur).ok_or_else(|| crate::error::LabError::Internal("refined path left the cone".into()))?;
    Ok(Refined { value: action(&segs, q), points: cur.iter().map(|p| p.iter().copied().collect()).collect(), iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::models::{self, ScaleFactor};

    #[test]
    fn zigzag_in_minkowski_straightens() {
        let chart = models::minkowski(2);
        let path = vec![vec![0.0, 0.0], vec![0.5, 0.5], vec![1.0, 0.2], vec![1.5, 0.9], vec![2.0, 1.0]];
        for q in [0.5, -1.0, 0.9] {
            let r = refine_polyline(&chart, &path, q, &RefineOptions::default()).unwrap();
            assert!((r.value - 3f64.sqrt()).abs() < 1e-10, "q={q}: {}", r.value);
        }
    }

    #[test]
    fn comoving_path_in_flrw_is_kept() {
        let chart = models::flrw(2, ScaleFactor::Matter);
        let path = vec![vec![1.0, 0.3], vec![1.4, 0.31], vec![2.0, 0.3]];
        let r = refine_polyline(&chart, &path, 0.5, &RefineOptions::default()).unwrap();
        assert!((r.value - 1.0).abs() < 1e-9, "{}", r.value);
        for p in &r.points {
            assert!((p[1] - 0.3).abs() < 1e-8);
        }
    }

    #[test]
    fn flrw_geodesic_beats_straight_chord() {
        // Between non-comoving points the chord is not a geodesic; refinement
        // must improve on the straight-line action.
        let chart = models::flrw(2, ScaleFactor::Matter);
        let path = vec![vec![0.6, 0.0], vec![1.9, 0.8]];
        let straight = refine_polyline(&chart, &path, 0.5, &RefineOptions { max_segments: 1, ..Default::default() }).unwrap();
        let r = refine_polyline(&chart, &path, 0.5, &RefineOptions::default()).unwrap();
        assert!(r.value > straight.value);
        let r2 = refine_polyline(&chart, &path, -1.0, &RefineOptions::default()).unwrap();
        assert!((r.value - r2.value).abs() < 1e-6 * r.value);
    }

    #[test]
    fn spacelike_endpoints_fail() {
        let chart = models::minkowski(2);
        assert!(refine_polyline(&chart, &[vec![0.0, 0.0], vec![0.1, 1.0]], 0.5, &RefineOptions::default()).is_err());
    }
}
