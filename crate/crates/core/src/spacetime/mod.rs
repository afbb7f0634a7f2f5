//! Analytic model spacetimes on coordinate charts.

mod curvature;
mod energy;
mod geodesic;
pub mod models;
mod sectional;
mod slice;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::cone::MetricValue;
use crate::error::{usage, Result};

pub(crate) use curvature::christoffel_from;
pub use curvature::{assemble_curvature, christoffel, curvature_pack, curvature_pack_richardson, default_step, CurvatureRecord, MetricJet};
pub use energy::{energy_condition_check, EnergyCondition, EnergyConditionReport, EnergyOptions, Violation};
pub use geodesic::{exponential_map, integrate_geodesic, GeodesicShooting, ShootingOptions};
pub use sectional::{sec_from_timesep, SecEstimate, SeparationOracle};
pub use slice::{mean_curvature_normal, slice_mean_curvature};

pub type MetricFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
pub type JetFn = Arc<dyn Fn(&[f64]) -> MetricJet + Send + Sync>;

/// A coordinate chart carrying an analytic metric.
///
/// Axis 0 is time and `∂_0` must be future timelike on the whole box.
/// Periodic axes are identified modulo their box extent; the metric callback
/// always receives wrapped coordinates.
#[derive(Clone)]
pub struct MetricChart {
    name: String,
    lo: Vec<f64>,
    hi: Vec<f64>,
    periodic: Vec<bool>,
    metric: MetricFn,
    jet: Option<JetFn>,
    params: BTreeMap<String, f64>,
}

impl fmt::Debug for MetricChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricChart")
            .field("name", &self.name)
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("periodic", &self.periodic)
            .field("params", &self.params)
            .finish()
    }
}

impl MetricChart {
    pub fn new(name: impl Into<String>, lo: Vec<f64>, hi: Vec<f64>, periodic: Vec<bool>, metric: MetricFn) -> Result<Self> {
        let n = lo.len();
        if n < 2 || hi.len() != n || periodic.len() != n {
            return usage("chart box and periodic flags must share a dimension >= 2");
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return usage("chart box must have lo < hi on every axis");
        }
        if periodic[0] {
            return usage("the time axis cannot be periodic");
        }
        Ok(MetricChart { name: name.into(), lo, hi, periodic, metric, jet: None, params: BTreeMap::new() })
    }

    /// Attaches closed-form first and second metric derivatives, used as the
    /// curvature oracle.
    pub fn with_jet(mut self, jet: JetFn) -> Self {
        self.jet = Some(jet);
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    /// Same chart restricted (or extended) to a new box. Periodic axes keep
    /// their period.
    pub fn with_box(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != self.dim() || hi.len() != self.dim() {
            return usage("box dimension does not match chart");
        }
        for a in 0..self.dim() {
            if self.periodic[a] {
                continue;
            }
            if !(lo[a] < hi[a]) {
                return usage(format!("box axis {a} has lo >= hi"));
            }
            self.lo[a] = lo[a];
            self.hi[a] = hi[a];
        }
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn has_analytic_curvature(&self) -> bool {
        self.jet.is_some()
    }

    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(a, &v)| if self.periodic[a] { self.lo[a] + (v - self.lo[a]).rem_euclid(self.extent(a)) } else { v })
            .collect()
    }

    /// Raw metric matrix at `x` (wrapped), no signature check.
    pub fn metric_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        (self.metric)(&self.wrap(x))
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<MetricValue> {
        if x.len() != self.dim() {
            return usage(format!("point has dimension {}, chart has {}", x.len(), self.dim()));
        }
        MetricValue::new(self.metric_matrix(x))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && (0..self.dim()).all(|a| self.periodic[a] || (x[a] >= self.lo[a] && x[a] <= self.hi[a]))
    }

    pub fn analytic_jet(&self, x: &[f64]) -> Option<MetricJet> {
        self.jet.as_ref().map(|j| j(&self.wrap(x)))
    }

    /// Curvature from the closed-form metric derivatives, when available.
    pub fn analytic_curvature(&self, x: &[f64]) -> Option<CurvatureRecord> {
        self.analytic_jet(x).map(|jet| assemble_curvature(&jet))
    }
}
