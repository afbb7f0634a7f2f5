use serde::Serialize;

use super::geodesic::{exponential_map, ShootingOptions};
use super::MetricChart;
use crate::cone::{classify, CausalClass, TangentVector};
use crate::error::{domain, usage, Result};
use crate::ext::ExtReal;

/// Anything that can evaluate the time-separation of two points.
pub trait SeparationOracle: Sync {
    fn separation(&self, x: &[f64], y: &[f64]) -> Result<ExtReal>;
}

#[derive(Clone, Debug, Serialize)]
pub struct SecEstimate {
    /// Estimate of `R(u, v, u, v)`.
    pub value: f64,
    pub fit_residual: f64,
    /// `(λ, D(λ))` with `s = λ/2`, `t = λ` and
    /// `D = |t v - s u|^2 - ℓ(σ_s, τ_t)^2`.
    pub samples: Vec<(f64, f64)>,
}

const S_RATIO: f64 = 0.5;

/// Estimates `R(u,v,u,v)` at `x` from the defect of Pythagoras' theorem,
/// `|t v - s u|^2 - ℓ(σ_s, τ_t)^2 = R(u,v,u,v) s^2 t^2 / 3 + O(λ^5)`,
/// with `σ, τ` the geodesics from `x` with velocities `u, v`. The defect is
/// fitted as `A λ^4 + B λ^5` over the scale ladder.
pub fn sec_from_timesep(
    chart: &MetricChart,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    scales: &[f64],
    oracle: &dyn SeparationOracle,
) -> Result<SecEstimate> {
    let n = chart.dim();
    if x.len() != n || u.len() != n || v.len() != n {
        return usage("point and vectors must match the chart dimension");
    }
    if scales.len() < 2 || scales.iter().any(|s| !(*s > 0.0)) {
        return usage("need at least two positive scales");
    }
    let g = chart.metric_at(x)?;
    let diff: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
    for (name, w) in [("u", u), ("v", v), ("v - u", &diff[..])] {
        if classify(&TangentVector::new(w), &g)? != CausalClass::Timelike {
            return domain(format!("{name} must be future timelike at x"));
        }
    }
    let opts = ShootingOptions::default();
    let mut samples = Vec::with_capacity(scales.len());
    for &lambda in scales {
        let (s, t) = (S_RATIO * lambda, lambda);
        let su: Vec<f64> = u.iter().map(|c| c * s).collect();
        let tv: Vec<f64> = v.iter().map(|c| c * t).collect();
        let sigma = exponential_map(chart, x, &su, &opts);
        let tau = exponential_map(chart, x, &tv, &opts);
        let chord = TangentVector::new(&tv.iter().zip(&su).map(|(a, b)| a - b).collect::<Vec<_>>());
        let pyth = g.dot(&chord.0, &chord.0);
        let l = match oracle.separation(&sigma, &tau)? {
            ExtReal::Finite(l) => l,
            _ => return domain(format!("points at scale {lambda} are not causally related")),
        };
        samples.push((lambda, pyth - l * l));
    }
    // Normal equations for D = A λ^4 + B λ^5.
    let (mut s88, mut s89, mut s99, mut r8, mut r9) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(l, d) in &samples {
        let (p4, p5) = (l.powi(4), l.powi(5));
        s88 += p4 * p4;
        s89 += p4 * p5;
        s99 += p5 * p5;
        r8 += p4 * d;
        r9 += p5 * d;
    }
    let det = s88 * s99 - s89 * s89;
    let (a, b) = if samples.len() >= 2 && det.abs() > 1e-300 {
        ((r8 * s99 - r9 * s89) / det, (s88 * r9 - s89 * r8) / det)
    } else {
        (r8 / s88, 0.0)
    };
    let fit_residual = samples.iter().map(|&(l, d)| (d - a * l.powi(4) - b * l.powi(5)).powi(2)).sum::<f64>().sqrt();
    Ok(SecEstimate { value: 3.0 * a / (S_RATIO * S_RATIO), fit_residual, samples })
}
