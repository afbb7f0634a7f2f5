use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::curvature::{curvature_pack_richardson, default_step};
use super::MetricChart;
use crate::cone::orthonormal_frame;
use crate::error::{usage, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EnergyCondition {
    #[serde(rename = "WEC")]
    Wec,
    #[serde(rename = "SEC")]
    Sec,
    #[serde(rename = "NEC")]
    Nec,
}

impl EnergyCondition {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WEC" => Some(EnergyCondition::Wec),
            "SEC" => Some(EnergyCondition::Sec),
            "NEC" => Some(EnergyCondition::Nec),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnergyOptions {
    /// Vectors sampled per point; the first one is the comoving observer
    /// (for WEC/SEC).
    pub vectors_per_point: usize,
    pub tolerance: f64,
    pub step: Option<f64>,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions { vectors_per_point: 8, tolerance: 1e-5, step: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub point: Vec<f64>,
    pub vector: Vec<f64>,
    pub value: f64,
    pub comoving: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyConditionReport {
    pub condition: EnergyCondition,
    pub sample_points: usize,
    pub vectors_checked: usize,
    pub min_value: f64,
    /// Quadratic form at the comoving vector of each point (WEC/SEC only).
    pub comoving_values: Vec<f64>,
    pub violations: Vec<Violation>,
    pub passed: bool,
}

struct PointSample {
    checked: usize,
    min: f64,
    comoving: Option<f64>,
    violations: Vec<Violation>,
}

fn unit_direction(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = d.iter().map(|x| x * x).sum();
        if r2 > 1e-6 && r2 <= 1.0 {
            let r = r2.sqrt();
            return d.into_iter().map(|x| x / r).collect();
        }
    }
}

/// Samples points uniformly in the chart box and future causal (or null)
/// vectors at each point, and evaluates `T(v,v) = G(v,v)/8π` (WEC) or
/// `Ric(v,v)` (SEC, NEC). Each point draws from its own ChaCha stream, so
/// the result does not depend on scheduling.
pub fn energy_condition_check(
    chart: &MetricChart,
    cond: EnergyCondition,
    sample_count: usize,
    seed: u64,
    opts: &EnergyOptions,
) -> Result<EnergyConditionReport> {
    if sample_count == 0 {
        return usage("sample count must be at least 1");
    }
    let n = chart.dim();
    let step = opts.step.unwrap_or_else(|| default_step(chart));
    let margin = 2.5 * step;
    let per_point = opts.vectors_per_point.max(1);
    let samples: Vec<Result<PointSample>> = (0..sample_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x: Vec<f64> = (0..n)
                .map(|a| {
                    let (lo, hi) = if chart.periodic()[a] { (chart.lo()[a], chart.hi()[a]) } else { (chart.lo()[a] + margin, chart.hi()[a] - margin) };
                    rng.gen_range(lo..hi)
                })
                .collect();
            let curv = curvature_pack_richardson(chart, &x, step)?;
            let form = match cond {
                EnergyCondition::Wec => curv.einstein_matrix() / (8.0 * std::f64::consts::PI),
                EnergyCondition::Sec | EnergyCondition::Nec => curv.ricci_matrix(),
            };
            let g = chart.metric_at(&x)?;
            let frame = orthonormal_frame(&g)?;
            let mut out = PointSample { checked: 0, min: f64::INFINITY, comoving: None, violations: Vec::new() };
            for k in 0..per_point {
                let comoving = k == 0 && cond != EnergyCondition::Nec;
                let beta = match cond {
                    EnergyCondition::Nec => 1.0,
                    _ if comoving => 0.0,
                    _ => rng.gen_range(0.0..0.99),
                };
                let dir = unit_direction(&mut rng, n - 1);
                let mut v: DVector<f64> = frame[0].clone();
                for (a, d) in dir.iter().enumerate() {
                    v += &frame[a + 1] * (beta * d);
                }
                let value = (&form * &v).dot(&v);
                out.checked += 1;
                out.min = out.min.min(value);
                if comoving {
                    out.comoving = Some(value);
                }
                if value < -opts.tolerance {
                    out.violations.push(Violation { point: x.clone(), vector: v.iter().copied().collect(), value, comoving });
                }
            }
            Ok(out)
        })
        .collect();
    let mut report = EnergyConditionReport {
        condition: cond,
        sample_points: sample_count,
        vectors_checked: 0,
        min_value: f64::INFINITY,
        comoving_values: Vec::new(),
        violations: Vec::new(),
        passed: true,
    };
    for s in samples {
        let s = s?;
        report.vectors_checked += s.checked;
        report.min_value = report.min_value.min(s.min);
        report.comoving_values.extend(s.comoving);
        report.violations.extend(s.violations);
    }
    report.passed = report.violations.is_empty();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::models::{self, ScaleFactor};
    use super::*;

    #[test]
    fn minkowski_passes_everything() {
        for cond in [EnergyCondition::Wec, EnergyCondition::Sec, EnergyCondition::Nec] {
            let r = energy_condition_check(&models::minkowski(4), cond, 20, 7, &EnergyOptions::default()).unwrap();
            assert!(r.passed);
            assert_eq!(r.vectors_checked, 160);
        }
    }

    #[test]
    fn matter_flrw_satisfies_sec() {
        let chart = models::flrw(4, ScaleFactor::Matter);
        let r = energy_condition_check(&chart, EnergyCondition::Sec, 30, 1, &EnergyOptions::default()).unwrap();
        assert!(r.passed, "min {}", r.min_value);
    }

    #[test]
    fn de_sitter_violates_sec_at_comoving_vectors() {
        let chart = models::flrw(4, ScaleFactor::DeSitter);
        let r = energy_condition_check(&chart, EnergyCondition::Sec, 16, 3, &EnergyOptions::default()).unwrap();
        assert!(!r.passed);
        let comoving: Vec<&Violation> = r.violations.iter().filter(|v| v.comoving).collect();
        assert_eq!(comoving.len(), 16);
        for v in comoving {
            assert!((v.value + 3.0).abs() < 1e-4);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let chart = models::flrw(3, ScaleFactor::DeSitter);
        let a = energy_condition_check(&chart, EnergyCondition::Sec, 10, 9, &EnergyOptions::default()).unwrap();
        let b = energy_condition_check(&chart, EnergyCondition::Sec, 10, 9, &EnergyOptions::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(energy_condition_check(&chart, EnergyCondition::Sec, 0, 9, &EnergyOptions::default()).is_err());
    }
}
