use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::curvature::christoffel;
use super::sectional::SeparationOracle;
use super::MetricChart;
use crate::cone::{classify, CausalClass, TangentVector};
use crate::error::{domain, Result};
use crate::ext::ExtReal;

fn acceleration(chart: &MetricChart, x: &[f64], v: &[f64], step: f64) -> Vec<f64> {
    let n = x.len();
    let gam = christoffel(chart, x, step);
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in 0..n {
                for k in 0..n {
                    s += gam[(i * n + j) * n + k] * v[j] * v[k];
                }
            }
            -s
        })
        .collect()
}

fn axpy(x: &[f64], a: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(p, q)| p + a * q).collect()
}

/// RK4 integration of the geodesic equation over unit parameter time.
/// Christoffel symbols come from central differences with `fd_step`.
pub fn integrate_geodesic(chart: &MetricChart, x0: &[f64], v0: &[f64], steps: usize, fd_step: f64) -> (Vec<f64>, Vec<f64>) {
    let h = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    for _ in 0..steps {
        let k1x = v.clone();
        let k1v = acceleration(chart, &x, &v, fd_step);
        let x2 = axpy(&x, 0.5 * h, &k1x);
        let v2 = axpy(&v, 0.5 * h, &k1v);
        let k2v = acceleration(chart, &x2, &v2, fd_step);
        let x3 = axpy(&x, 0.5 * h, &v2);
        let v3 = axpy(&v, 0.5 * h, &k2v);
        let k3v = acceleration(chart, &x3, &v3, fd_step);
        let x4 = axpy(&x, h, &v3);
        let v4 = axpy(&v, h, &k3v);
        let k4v = acceleration(chart, &x4, &v4, fd_step);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1x[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            v[i] += h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
    }
    (x, v)
}

#[derive(Clone, Debug)]
pub struct ShootingOptions {
    pub steps: usize,
    pub fd_step: f64,
    pub max_newton: usize,
    pub tolerance: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions { steps: 64, fd_step: 1e-4, max_newton: 30, tolerance: 1e-13 }
    }
}

/// `exp_x(v)`.
pub fn exponential_map(chart: &MetricChart, x: &[f64], v: &[f64], opts: &ShootingOptions) -> Vec<f64> {
    integrate_geodesic(chart, x, v, opts.steps, opts.fd_step).0
}

/// Time-separation of nearby points by Newton shooting: finds `V` with
/// `exp_x(V) = y` and returns `|V|_F`. Valid inside a convex normal
/// neighbourhood, where the geodesic is the maximizer.
#[derive(Clone)]
pub struct GeodesicShooting {
    pub chart: Arc<MetricChart>,
    pub options: ShootingOptions,
}

impl GeodesicShooting {
    pub fn new(chart: Arc<MetricChart>) -> Self {
        GeodesicShooting { chart, options: ShootingOptions::default() }
    }

    pub fn shoot(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        let o = &self.options;
        let mut v: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let scale = v.iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1e-300);
        for _ in 0..o.max_newton {
            let end = exponential_map(&self.chart, x, &v, o);
            let r = DVector::from_iterator(n, end.iter().zip(y).map(|(a, b)| a - b));
            if r.amax() <= o.tolerance * (1.0 + scale) {
                return Ok(v);
            }
            let h = 1e-7 * scale;
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut vp = v.clone();
                vp[j] += h;
                let mut vm = v.clone();
                vm[j] -= h;
                let ep = exponential_map(&self.chart, x, &vp, o);
                let em = exponential_map(&self.chart, x, &vm, o);
                for i in 0..n {
                    jac[(i, j)] = (ep[i] - em[i]) / (2.0 * h);
                }
            }
            let delta = jac.lu().solve(&r).ok_or_else(|| crate::error::LabError::Domain("shooting Jacobian is singular".into()))?;
            for i in 0..n {
                v[i] -= delta[i];
            }
        }
        domain("geodesic shooting did not converge")
    }
}

impl SeparationOracle for GeodesicShooting {
    fn separation(&self, x: &[f64], y: &[f64]) -> Result<ExtReal> {
        let v = self.shoot(x, y)?;
        let g = self.chart.metric_at(x)?;
        let tv = TangentVector::new(&v);
        Ok(match classify(&tv, &g)? {
            CausalClass::Timelike | CausalClass::Lightlike | CausalClass::Zero => ExtReal::Finite(g.dot(&tv.0, &tv.0).max(0.0).sqrt()),
            _ => ExtReal::NegInf,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::models::{self, ScaleFactor};
    use super::*;

    #[test]
    fn straight_lines_in_minkowski() {
        let chart = models::minkowski(3);
        let (x, v) = integrate_geodesic(&chart, &[0.0, 0.1, 0.2], &[1.0, 0.3, -0.2], 10, 1e-4);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 0.4).abs() < 1e-12 && (x[2] - 0.0).abs() < 1e-12);
        assert!((v[1] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn comoving_geodesics_in_flrw_stay_comoving() {
        let chart = models::flrw(2, ScaleFactor::Matter);
        let (x, v) = integrate_geodesic(&chart, &[1.0, 0.2], &[0.5, 0.0], 40, 1e-4);
        assert!((x[0] - 1.5).abs() < 1e-10 && (x[1] - 0.2).abs() < 1e-12);
        assert!((v[0] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn shooting_recovers_minkowski_separation() {
        let oracle = GeodesicShooting::new(Arc::new(models::minkowski(2)));
        let l = oracle.separation(&[0.0, 0.0], &[0.5, 0.2]).unwrap().finite().unwrap();
        assert!((l - (0.25f64 - 0.04).sqrt()).abs() < 1e-12);
        assert_eq!(oracle.separation(&[0.0, 0.0], &[0.1, 0.5]).unwrap(), ExtReal::NegInf);
    }

    #[test]
    fn shooting_preserves_norm_along_flrw_geodesic() {
        let chart = Arc::new(models::flrw(2, ScaleFactor::Matter));
        let oracle = GeodesicShooting::new(chart.clone());
        let v0 = [0.3, 0.1];
        let y = exponential_map(&chart, &[1.0, 0.0], &v0, &oracle.options);
        let l = oracle.separation(&[1.0, 0.0], &y).unwrap().finite().unwrap();
        assert!((l - (0.09f64 - 0.01).sqrt()).abs() < 1e-10);
    }
}
