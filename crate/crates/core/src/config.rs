//! Line-based experiment configs: `key = value`, `#` comments, dotted keys.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{LabError, Result};
use crate::spacetime::models::{ModelSpec, ScaleFactor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Timesep,
    Busemann,
    Compare,
    Bochner,
    Split,
    Energycond,
    Hawking,
    Seccheck,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Timesep,
        Experiment::Busemann,
        Experiment::Compare,
        Experiment::Bochner,
        Experiment::Split,
        Experiment::Energycond,
        Experiment::Hawking,
        Experiment::Seccheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Timesep => "timesep",
            Experiment::Busemann => "busemann",
            Experiment::Compare => "compare",
            Experiment::Bochner => "bochner",
            Experiment::Split => "split",
            Experiment::Energycond => "energycond",
            Experiment::Hawking => "hawking",
            Experiment::Seccheck => "seccheck",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment '{s}' (expected one of timesep, busemann, compare, bochner, split, energycond, hawking, seccheck)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Time,
    Affine,
    MinkowskiBusemann,
    Busemann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Oracle {
    Dp,
    Shooting,
}

/// Tolerance names accepted as `tol.<name>`.
pub const TOLERANCES: &[(&str, f64)] = &[
    ("timesep", 0.01),
    ("qdev", 1e-3),
    ("rti", 1e-6),
    ("busemann", 0.02),
    ("ordering", 1e-6),
    ("eikonal", 5e-2),
    ("compare", 0.02),
    ("pointwise", 0.02),
    ("bochner", 0.05),
    ("affine", 1e-10),
    ("split", 1e-3),
    ("energy", 1e-5),
    ("hawking", 1e-9),
    ("sec", 0.05),
];

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub model: ModelSpec,
    pub grid_shape: Vec<usize>,
    pub grid_lo: Option<Vec<f64>>,
    pub grid_hi: Option<Vec<f64>>,
    pub stencil: usize,
    pub p: f64,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub seed: u64,
    pub tol: BTreeMap<String, f64>,
    pub x: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
    pub line_origin: Option<Vec<f64>>,
    pub window_lo: Option<Vec<f64>>,
    pub window_hi: Option<Vec<f64>>,
    pub slice_t0: Option<f64>,
    pub samples: usize,
    pub condition: Option<String>,
    pub field: FieldKind,
    pub expect_negative: bool,
    pub sec_u: Option<Vec<f64>>,
    pub sec_v: Option<Vec<f64>>,
    pub sec_scales: Vec<f64>,
    pub oracle: Oracle,
    /// Accepted entries with normalized keys, for the report echo.
    pub echo: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            model: ModelSpec::default(),
            grid_shape: Vec::new(),
            grid_lo: None,
            grid_hi: None,
            stencil: 3,
            p: 0.5,
            q: vec![-1.0],
            r: Vec::new(),
            seed: 0,
            tol: TOLERANCES.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            x: None,
            y: None,
            line_origin: None,
            window_lo: None,
            window_hi: None,
            slice_t0: None,
            samples: 0,
            condition: None,
            field: FieldKind::Busemann,
            expect_negative: false,
            sec_u: None,
            sec_v: None,
            sec_scales: vec![0.02, 0.03, 0.04, 0.05],
            oracle: Oracle::Shooting,
            echo: BTreeMap::new(),
        }
    }
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T> {
    Err(LabError::Config { line, message: message.into() })
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().or_else(|_| err(line, format!("'{key}': cannot parse '{v}'")))
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(line, key, s.trim())).collect()
}

fn check_exponent(line: usize, key: &str, v: f64) -> Result<()> {
    if !(v < 1.0) || v == 0.0 || !v.is_finite() {
        return err(line, format!("'{key}' must be < 1 and nonzero, got {v}"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn tol(&self, name: &str) -> f64 {
        self.tol[name]
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut lines: BTreeMap<String, usize> = BTreeMap::new();
        let mut last = 0;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            last = line;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return err(line, format!("expected 'key = value', got '{body}'"));
            };
            let (key, value) = (key.trim(), value.trim());
            if value.is_empty() {
                return err(line, format!("'{key}' has no value"));
            }
            if lines.insert(key.to_string(), line).is_some() {
                return err(line, format!("duplicate key '{key}'"));
            }
            c.set(line, key, value)?;
            c.echo.insert(key.to_string(), value.to_string());
        }
        c.validate(&lines, last + 1)?;
        Ok(c)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = Some(v.parse().or_else(|e: String| err(line, e))?),
            "model.name" => {
                const NAMES: &[&str] =
                    &["minkowski", "flrw", "circle", "product-circle", "sphere", "product-sphere", "torus", "product-torus", "bump", "bump-product"];
                if !NAMES.contains(&v) {
                    return err(line, format!("unknown model '{v}'"));
                }
                self.model.name = v.to_string();
            }
            "model.n" => {
                self.model.n = num(line, key, v)?;
                if !(2..=4).contains(&self.model.n) {
                    return err(line, "model.n must be 2, 3 or 4");
                }
            }
            "model.a" => {
                self.model.scale = Some(ScaleFactor::parse(v).ok_or_else(|| LabError::Config {
                    line,
                    message: format!("unknown scale factor '{v}' (expected t^(2/3), e^t or const)"),
                })?)
            }
            "model.radius" => {
                self.model.radius = num(line, key, v)?;
                if !(self.model.radius > 0.0) {
                    return err(line, "model.radius must be positive");
                }
            }
            "model.eps" => self.model.eps = num(line, key, v)?,
            "model.center" => self.model.center = num(line, key, v)?,
            "model.width" => self.model.width = num(line, key, v)?,
            "grid.shape" => self.grid_shape = list(line, key, v)?,
            "grid.lo" => self.grid_lo = Some(list(line, key, v)?),
            "grid.hi" => self.grid_hi = Some(list(line, key, v)?),
            "grid.stencil" => {
                self.stencil = num(line, key, v)?;
                if self.stencil < 1 {
                    return err(line, "grid.stencil must be at least 1");
                }
            }
            "p" => {
                self.p = num(line, key, v)?;
                check_exponent(line, "p", self.p)?;
            }
            "q" => {
                self.q = list(line, key, v)?;
                for &q in &self.q {
                    check_exponent(line, "q", q)?;
                }
            }
            "r" => self.r = list(line, key, v)?,
            "seed" => self.seed = num(line, key, v)?,
            "points.x" => self.x = Some(list(line, key, v)?),
            "points.y" => self.y = Some(list(line, key, v)?),
            "line.origin" => self.line_origin = Some(list(line, key, v)?),
            "window.lo" => self.window_lo = Some(list(line, key, v)?),
            "window.hi" => self.window_hi = Some(list(line, key, v)?),
            "slice.t0" => self.slice_t0 = Some(num(line, key, v)?),
            "samples" => self.samples = num(line, key, v)?,
            "condition" => {
                let lower = v.to_ascii_lowercase();
                if !["sec", "nec", "wec", "all"].contains(&lower.as_str()) {
                    return err(line, format!("unknown condition '{v}' (expected sec, nec, wec or all)"));
                }
                self.condition = Some(lower);
            }
            "field" => {
                self.field = match v {
                    "time" => FieldKind::Time,
                    "affine" => FieldKind::Affine,
                    "minkowski-busemann" => FieldKind::MinkowskiBusemann,
                    "busemann" => FieldKind::Busemann,
                    _ => return err(line, format!("unknown field '{v}' (expected time, affine, minkowski-busemann or busemann)")),
                }
            }
            "expect" => {
                self.expect_negative = match v {
                    "pass" => false,
                    "negative" => true,
                    _ => return err(line, "expect must be 'pass' or 'negative'"),
                }
            }
            "sec.u" => self.sec_u = Some(list(line, key, v)?),
            "sec.v" => self.sec_v = Some(list(line, key, v)?),
            "sec.scales" => self.sec_scales = list(line, key, v)?,
            "sec.oracle" => {
                self.oracle = match v {
                    "dp" => Oracle::Dp,
                    "shooting" => Oracle::Shooting,
                    _ => return err(line, "sec.oracle must be 'dp' or 'shooting'"),
                }
            }
            _ => {
                if let Some(name) = key.strip_prefix("tol.") {
                    if !self.tol.contains_key(name) {
                        return err(line, format!("unknown tolerance '{key}'"));
                    }
                    let t: f64 = num(line, key, v)?;
                    if !(t >= 0.0) {
                        return err(line, format!("'{key}' must be nonnegative"));
                    }
                    self.tol.insert(name.to_string(), t);
                } else {
                    return err(line, format!("unknown key '{key}'"));
                }
            }
        }
        Ok(())
    }

    fn validate(&self, lines: &BTreeMap<String, usize>, end: usize) -> Result<()> {
        let at = |k: &str| lines.get(k).copied().unwrap_or(end);
        let n = self.model.dim();
        if self.model.name == "flrw" && self.model.scale.is_none() && lines.contains_key("model.a") {
            return err(at("model.a"), "invalid scale factor");
        }
        if !self.grid_shape.is_empty() && self.grid_shape.len() != n {
            return err(at("grid.shape"), format!("grid.shape needs {n} entries for model '{}'", self.model.name));
        }
        for (key, v) in [("grid.lo", &self.grid_lo), ("grid.hi", &self.grid_hi), ("window.lo", &self.window_lo), ("window.hi", &self.window_hi)] {
            if let Some(v) = v {
                if v.len() != n {
                    return err(at(key), format!("{key} needs {n} entries"));
                }
            }
        }
        for (key, v) in [("points.x", &self.x), ("points.y", &self.y), ("line.origin", &self.line_origin), ("sec.u", &self.sec_u), ("sec.v", &self.sec_v)] {
            if let Some(v) = v {
                if v.len() != n {
                    return err(at(key), format!("{key} needs {n} entries"));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (&self.grid_lo, &self.grid_hi) {
            if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                return err(at("grid.hi"), "grid.lo must be below grid.hi on every axis");
            }
        }
        if self.r.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return err(at("r"), "r ladder entries must be finite and positive");
        }
        if self.r.windows(2).any(|w| !(w[1] > w[0])) {
            return err(at("r"), "r ladder must be strictly increasing");
        }
        if self.sec_scales.len() < 2 || self.sec_scales.iter().any(|s| !(*s > 0.0)) {
            return err(at("sec.scales"), "sec.scales needs at least two positive entries");
        }
        if let Some(e) = self.experiment {
            let needs_grid = !matches!(e, Experiment::Energycond) && !(e == Experiment::Seccheck && self.oracle == Oracle::Shooting);
            if needs_grid && self.grid_shape.is_empty() {
                return err(end, format!("experiment '{e}' needs grid.shape"));
            }
            if e == Experiment::Timesep && (self.x.is_none() || self.y.is_none()) {
                return err(end, "timesep needs points.x and points.y");
            }
            if e == Experiment::Hawking && self.slice_t0.is_none() {
                return err(end, "hawking needs slice.t0");
            }
            if e == Experiment::Seccheck && (self.x.is_none() || self.sec_u.is_none() || self.sec_v.is_none()) {
                return err(end, "seccheck needs points.x, sec.u and sec.v");
            }
        }
        Ok(())
    }

    /// Config text that parses back to the same config.
    pub fn to_text(&self) -> String {
        self.echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_timesep() {
        let c = ExperimentConfig::parse("experiment = timesep\nmodel.name = minkowski\ngrid.shape = 200,200\np = 0.5\npoints.x = 0,0\npoints.y = 2,1\n").unwrap();
        assert_eq!(c.experiment, Some(Experiment::Timesep));
        assert_eq!(c.grid_shape, vec![200, 200]);
        assert_eq!(c.p, 0.5);
    }

    #[test]
    fn p_must_be_below_one() {
        match ExperimentConfig::parse("# comment\np = 2") {
            Err(LabError::Config { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("< 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flrw_scale_factor_resolves() {
        let c = ExperimentConfig::parse("model.name = flrw\nmodel.a = t^(2/3)").unwrap();
        assert_eq!(c.model.scale, Some(ScaleFactor::Matter));
        assert!(c.model.build().unwrap().name().starts_with("flrw"));
    }

    #[test]
    fn unknown_and_bad_values_carry_line_numbers() {
        for (text, want) in [
            ("model.name = minkowski\ngrid.shapee = 3,3", 2),
            ("seed = x", 1),
            ("\n\nq = 0.5, 1.5", 3),
            ("model.name = minkowski\ngrid.shape = 3,3,3", 2),
            ("experiment = split\nmodel.name = nowhere", 2),
            ("tol.whatever = 1", 1),
            ("r = 5, 3", 1),
        ] {
            match ExperimentConfig::parse(text) {
                Err(LabError::Config { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn echo_round_trips() {
        let text = "experiment = busemann\nmodel.name = circle\nmodel.radius = 1.5\ngrid.shape = 81, 64\nr = 5,10\n";
        let c = ExperimentConfig::parse(text).unwrap();
        let again = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c.echo, again.echo);
        assert_eq!(again.model.radius, 1.5);
    }
}
