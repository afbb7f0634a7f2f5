//! Model library. Every model carries closed-form metric derivatives so its
//! curvature can be checked against finite differences.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{MetricChart, MetricJet};
use crate::error::{usage, Result};

fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(entries))
}

fn minkowski_matrix(n: usize) -> DMatrix<f64> {
    let mut d = vec![-1.0; n];
    d[0] = 1.0;
    diag(&d)
}

/// Flat space `dt^2 - |dx|^2` on `[-1, 1]^n`.
pub fn minkowski(n: usize) -> MetricChart {
    let g = minkowski_matrix(n);
    let g2 = g.clone();
    MetricChart::new("minkowski", vec![-1.0; n], vec![1.0; n], vec![false; n], Arc::new(move |_| g.clone()))
        .expect("valid box")
        .with_jet(Arc::new(move |_| MetricJet::flat(g2.clone())))
        .with_param("n", n as f64)
}

/// FLRW scale factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleFactor {
    /// `a = t^(2/3)`
    Matter,
    /// `a = e^t`
    DeSitter,
    /// `a = 1`
    Const,
}

impl ScaleFactor {
    pub fn parse(s: &str) -> Option<Self> {
        match s.replace(' ', "").as_str() {
            "t^(2/3)" | "t^2/3" | "matter" => Some(ScaleFactor::Matter),
            "e^t" | "exp(t)" | "desitter" | "de-sitter" => Some(ScaleFactor::DeSitter),
            "const" | "1" => Some(ScaleFactor::Const),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScaleFactor::Matter => "t^(2/3)",
            ScaleFactor::DeSitter => "e^t",
            ScaleFactor::Const => "const",
        }
    }

    /// `(a, a', a'')` at `t`.
    pub fn eval(self, t: f64) -> (f64, f64, f64) {
        match self {
            ScaleFactor::Matter => {
                let a = t.powf(2.0 / 3.0);
                (a, 2.0 / 3.0 * a / t, -2.0 / 9.0 * a / (t * t))
            }
            ScaleFactor::DeSitter => {
                let a = t.exp();
                (a, a, a)
            }
            ScaleFactor::Const => (1.0, 0.0, 0.0),
        }
    }
}

/// Spatially flat FLRW `dt^2 - a(t)^2 |dx|^2`.
pub fn flrw(n: usize, scale: ScaleFactor) -> MetricChart {
    let (t_lo, t_hi) = match scale {
        ScaleFactor::DeSitter => (-1.0, 1.0),
        _ => (0.5, 2.0),
    };
    let mut lo = vec![-1.0; n];
    let mut hi = vec![1.0; n];
    lo[0] = t_lo;
    hi[0] = t_hi;
    let metric = move |x: &[f64]| {
        let (a, _, _) = scale.eval(x[0]);
        let mut d = vec![-a * a; n];
        d[0] = 1.0;
        diag(&d)
    };
    let jet = move |x: &[f64]| {
        let (a, ad, add) = scale.eval(x[0]);
        let mut jet = MetricJet::flat(metric(x));
        let mut d1 = vec![-2.0 * a * ad; n];
        d1[0] = 0.0;
        let mut d2 = vec![-2.0 * (ad * ad + a * add); n];
        d2[0] = 0.0;
        jet.dg[0] = diag(&d1);
        jet.ddg[0][0] = diag(&d2);
        jet
    };
    let name = format!("flrw[{}]", scale.label());
    MetricChart::new(name, lo, hi, vec![false; n], Arc::new(metric))
        .expect("valid box")
        .with_jet(Arc::new(jet))
        .with_param("n", n as f64)
}

/// `R x S^1` with `dt^2 - rho^2 dθ^2`, θ periodic on `[0, 2π)`.
pub fn product_circle(radius: f64) -> MetricChart {
    let g = diag(&[1.0, -radius * radius]);
    let g2 = g.clone();
    MetricChart::new("product-circle", vec![-1.0, 0.0], vec![1.0, 2.0 * PI], vec![false, true], Arc::new(move |_| g.clone()))
        .expect("valid box")
        .with_jet(Arc::new(move |_| MetricJet::flat(g2.clone())))
        .with_param("radius", radius)
}

/// `R x S^2` with the round metric of radius `rho`; θ is kept away from the
/// poles, φ periodic.
pub fn product_sphere(radius: f64) -> MetricChart {
    let r2 = radius * radius;
    let metric = move |x: &[f64]| diag(&[1.0, -r2, -r2 * x[1].sin().powi(2)]);
    let jet = move |x: &[f64]| {
        let mut jet = MetricJet::flat(metric(x));
        jet.dg[1] = diag(&[0.0, 0.0, -r2 * (2.0 * x[1]).sin()]);
        jet.ddg[1][1] = diag(&[0.0, 0.0, -2.0 * r2 * (2.0 * x[1]).cos()]);
        jet
    };
    MetricChart::new("product-sphere", vec![-1.0, 0.2, 0.0], vec![1.0, PI - 0.2, 2.0 * PI], vec![false, false, true], Arc::new(metric))
        .expect("valid box")
        .with_jet(Arc::new(jet))
        .with_param("radius", radius)
}

/// `R x T^{n-1}`: flat metric, spatial axes periodic with unit period.
pub fn product_torus(n: usize) -> MetricChart {
    let g = minkowski_matrix(n);
    let g2 = g.clone();
    let mut lo = vec![0.0; n];
    let mut hi = vec![1.0; n];
    lo[0] = -1.0;
    hi[0] = 1.0;
    let mut periodic = vec![true; n];
    periodic[0] = false;
    MetricChart::new("product-torus", lo, hi, periodic, Arc::new(move |_| g.clone()))
        .expect("valid box")
        .with_jet(Arc::new(move |_| MetricJet::flat(g2.clone())))
        .with_param("n", n as f64)
}

/// 1+1 product `dt^2 - (1 + eps exp(-(x-c)^2/w^2)) dx^2`.
pub fn bump_product(eps: f64, center: f64, width: f64) -> MetricChart {
    let f = move |x: f64| {
        let s = (x - center) / width;
        let b = (-s * s).exp();
        (1.0 + eps * b, eps * b * (-2.0 * s / width), eps * b * (4.0 * s * s - 2.0) / (width * width))
    };
    let metric = move |x: &[f64]| diag(&[1.0, -f(x[1]).0]);
    let jet = move |x: &[f64]| {
        let (v, d1, d2) = f(x[1]);
        let mut jet = MetricJet::flat(diag(&[1.0, -v]));
        jet.dg[1] = diag(&[0.0, -d1]);
        jet.ddg[1][1] = diag(&[0.0, -d2]);
        jet
    };
    MetricChart::new("bump-product", vec![-1.0, -1.0], vec![1.0, 1.0], vec![false, false], Arc::new(metric))
        .expect("valid box")
        .with_jet(Arc::new(jet))
        .with_param("eps", eps)
        .with_param("center", center)
        .with_param("width", width)
}

/// Named model with its parameters, as written in experiment configs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub n: usize,
    pub scale: Option<ScaleFactor>,
    pub radius: f64,
    pub eps: f64,
    pub center: f64,
    pub width: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { name: "minkowski".into(), n: 2, scale: None, radius: 1.0, eps: 0.1, center: 0.0, width: 0.3 }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<MetricChart> {
        let n = self.n;
        if !(2..=4).contains(&n) {
            return usage(format!("model dimension must be 2, 3 or 4, got {n}"));
        }
        if !(self.radius > 0.0) {
            return usage("model radius must be positive");
        }
        match self.name.as_str() {
            "minkowski" => Ok(minkowski(n)),
            "flrw" => Ok(flrw(n, self.scale.unwrap_or(ScaleFactor::Matter))),
            "circle" | "product-circle" => Ok(product_circle(self.radius)),
            "sphere" | "product-sphere" => Ok(product_sphere(self.radius)),
            "torus" | "product-torus" => Ok(product_torus(n)),
            "bump" | "bump-product" => {
                if !(self.width > 0.0) || self.eps <= -1.0 {
                    return usage("bump model needs width > 0 and eps > -1");
                }
                Ok(bump_product(self.eps, self.center, self.width))
            }
            other => usage(format!("unknown model '{other}'")),
        }
    }

    /// Dimension the built chart will have.
    pub fn dim(&self) -> usize {
        match self.name.as_str() {
            "circle" | "product-circle" | "bump" | "bump-product" => 2,
            "sphere" | "product-sphere" => 3,
            _ => self.n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_model_is_lorentzian_with_future_time_axis() {
        let charts = [
            minkowski(2),
            minkowski(4),
            flrw(4, ScaleFactor::Matter),
            flrw(2, ScaleFactor::DeSitter),
            flrw(3, ScaleFactor::Const),
            product_circle(2.0),
            product_sphere(1.0),
            product_torus(3),
            bump_product(0.5, 0.1, 0.2),
        ];
        for chart in charts {
            let x: Vec<f64> = (0..chart.dim()).map(|a| 0.3 * chart.lo()[a] + 0.7 * chart.hi()[a]).collect();
            let g = chart.metric_at(&x).unwrap();
            assert!(g.matrix()[(0, 0)] > 0.0, "{}", chart.name());
        }
    }

    #[test]
    fn scale_factor_names() {
        assert_eq!(ScaleFactor::parse("t^(2/3)"), Some(ScaleFactor::Matter));
        assert_eq!(ScaleFactor::parse("e^t"), Some(ScaleFactor::DeSitter));
        assert_eq!(ScaleFactor::parse("const"), Some(ScaleFactor::Const));
        assert_eq!(ScaleFactor::parse("t^2"), None);
    }

    #[test]
    fn periodic_wrap() {
        let c = product_circle(1.0);
        let w = c.wrap(&[0.0, -0.5]);
        assert!((w[1] - (2.0 * PI - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn spec_builds_by_name() {
        let spec = ModelSpec { name: "flrw".into(), n: 4, scale: Some(ScaleFactor::DeSitter), ..Default::default() };
        assert_eq!(spec.build().unwrap().name(), "flrw[e^t]");
        assert!(ModelSpec { name: "kerr".into(), ..Default::default() }.build().is_err());
    }
}
