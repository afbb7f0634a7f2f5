//! Rectangular lattices over a chart box and scalar fields living on them.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{usage, LabError, Result};
use crate::spacetime::MetricChart;

/// Lattice with axis 0 (time) slowest. Non-periodic axes include both box
/// ends (`spacing = extent / (shape - 1)`); periodic axes sample the circle
/// once (`spacing = extent / shape`).
#[derive(Clone, Debug)]
pub struct Grid {
    chart: Arc<MetricChart>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(chart: Arc<MetricChart>, shape: &[usize]) -> Result<Self> {
        let lo = chart.lo().to_vec();
        let hi = chart.hi().to_vec();
        Self::over(chart, &lo, &hi, shape)
    }

    /// Grid over a sub-box. Periodic axes always span the full period.
    pub fn over(chart: Arc<MetricChart>, lo: &[f64], hi: &[f64], shape: &[usize]) -> Result<Self> {
        let n = chart.dim();
        if lo.len() != n || hi.len() != n || shape.len() != n {
            return usage(format!("grid needs {n} entries for lo, hi and shape"));
        }
        let mut glo = lo.to_vec();
        let mut ghi = hi.to_vec();
        let mut spacing = vec![0.0; n];
        for a in 0..n {
            if chart.periodic()[a] {
                glo[a] = chart.lo()[a];
                ghi[a] = chart.hi()[a];
                if shape[a] < 3 {
                    return usage(format!("periodic axis {a} needs at least 3 nodes"));
                }
                spacing[a] = (ghi[a] - glo[a]) / shape[a] as f64;
            } else {
                if shape[a] < 2 {
                    return usage(format!("axis {a} needs at least 2 nodes"));
                }
                if !(glo[a] < ghi[a]) {
                    return usage(format!("grid axis {a} has lo >= hi"));
                }
                spacing[a] = (ghi[a] - glo[a]) / (shape[a] - 1) as f64;
            }
        }
        let mut strides = vec![1; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        Ok(Grid { chart, lo: glo, hi: ghi, shape: shape.to_vec(), spacing, strides })
    }

    pub fn chart(&self) -> &Arc<MetricChart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn periodic(&self, axis: usize) -> bool {
        self.chart.periodic()[axis]
    }

    pub fn len(&self) -> usize {
        self.strides[0] * self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of nodes in one time slice.
    pub fn slice_len(&self) -> usize {
        self.strides[0]
    }

    pub fn slice_of(&self, idx: usize) -> usize {
        idx / self.strides[0]
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    pub fn multi(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in 0..self.dim() {
            out[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        out
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.spacing[axis]
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi(idx).iter().enumerate().map(|(a, &i)| self.coord(a, i)).collect()
    }

    /// Node reached by an integer offset, wrapping periodic axes.
    pub fn shift(&self, idx: usize, offset: &[i64]) -> Option<usize> {
        let mut out = 0usize;
        let mut rest = idx;
        for a in 0..self.dim() {
            let m = (rest / self.strides[a]) as i64;
            rest %= self.strides[a];
            let len = self.shape[a] as i64;
            let mut j = m + offset[a];
            if self.periodic(a) {
                j = j.rem_euclid(len);
            } else if j < 0 || j >= len {
                return None;
            }
            out += j as usize * self.strides[a];
        }
        Some(out)
    }

    pub fn neighbor(&self, idx: usize, axis: usize, delta: i64) -> Option<usize> {
        let mut off = vec![0i64; self.dim()];
        off[axis] = delta;
        self.shift(idx, &off)
    }

    /// Nearest node to a point; errors when the point lies outside the grid
    /// box by more than half a spacing.
    pub fn nearest(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return usage(format!("point has dimension {}, grid has {}", x.len(), self.dim()));
        }
        let mut multi = vec![0; self.dim()];
        for a in 0..self.dim() {
            let r = (x[a] - self.lo[a]) / self.spacing[a];
            let k = r.round();
            if self.periodic(a) {
                multi[a] = (k as i64).rem_euclid(self.shape[a] as i64) as usize;
            } else {
                if !(r >= -0.5 - 1e-9 && r <= (self.shape[a] - 1) as f64 + 0.5 + 1e-9) {
                    return usage(format!("point {:?} lies outside the grid on axis {a}", x));
                }
                multi[a] = k.clamp(0.0, (self.shape[a] - 1) as f64) as usize;
            }
        }
        Ok(self.index(&multi))
    }

    /// True when the node lies on the box boundary of a non-periodic axis.
    pub fn on_boundary(&self, idx: usize) -> bool {
        self.multi(idx).iter().enumerate().any(|(a, &m)| !self.periodic(a) && (m == 0 || m + 1 == self.shape[a]))
    }

    /// Whether the node lies inside the closed box `[lo, hi]`.
    pub fn in_box(&self, idx: usize, lo: &[f64], hi: &[f64]) -> bool {
        let x = self.coords(idx);
        (0..self.dim()).all(|a| x[a] >= lo[a] - 1e-9 * self.spacing[a] && x[a] <= hi[a] + 1e-9 * self.spacing[a])
    }

    /// Multilinear interpolation of nodal values; `None` outside the grid or
    /// when a corner is not finite.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        let n = self.dim();
        let mut base = vec![0i64; n];
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let r = (x[a] - self.lo[a]) / self.spacing[a];
            let mut k = r.floor();
            if !self.periodic(a) {
                let last = (self.shape[a] - 1) as f64;
                if r < -1e-9 || r > last + 1e-9 {
                    return None;
                }
                k = k.clamp(0.0, last - 1.0);
            }
            base[a] = k as i64;
            frac[a] = (r - k).clamp(0.0, 1.0);
        }
        let origin = {
            let mut m = vec![0usize; n];
            for a in 0..n {
                m[a] = if self.periodic(a) { base[a].rem_euclid(self.shape[a] as i64) as usize } else { base[a] as usize };
            }
            self.index(&m)
        };
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut off = vec![0i64; n];
            for a in 0..n {
                let bit = (corner >> a) & 1;
                off[a] = bit as i64;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let v = values[self.shift(origin, &off)?];
            if !v.is_finite() {
                return None;
            }
            acc += w * v;
        }
        Some(acc)
    }
}

/// Per-node values with a validity mask.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ScalarField {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return usage("field length does not match grid");
        }
        Ok(ScalarField { grid, values, mask })
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        let mask = values.iter().map(|v| v.is_finite()).collect();
        ScalarField { grid, values, mask }
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let len = grid.len();
        ScalarField { grid, values: vec![c; len], mask: vec![true; len] }
    }

    pub fn valid(&self, idx: usize) -> bool {
        self.mask[idx]
    }

    pub fn get(&self, idx: usize) -> Option<f64> {
        if self.mask[idx] {
            Some(self.values[idx])
        } else {
            None
        }
    }

    /// `value` at the neighbor along `axis`, if present and valid.
    pub fn neighbor(&self, idx: usize, axis: usize, delta: i64) -> Option<f64> {
        self.grid.neighbor(idx, axis, delta).and_then(|j| self.get(j))
    }

    /// Central difference along `axis`; `None` if a neighbor is missing.
    pub fn central_diff(&self, idx: usize, axis: usize) -> Option<f64> {
        let p = self.neighbor(idx, axis, 1)?;
        let m = self.neighbor(idx, axis, -1)?;
        Some((p - m) / (2.0 * self.grid.spacing()[axis]))
    }

    /// Covector `du` by central differences, if all neighbors are valid.
    pub fn gradient(&self, idx: usize) -> Option<Vec<f64>> {
        self.get(idx)?;
        (0..self.grid.dim()).map(|a| self.central_diff(idx, a)).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Largest `|self - other|` over nodes valid in both.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.mask[i] && other.mask[i])
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let n = self.grid.dim();
        let mut out = String::from("# lorlab-field v1\n");
        for a in 0..n {
            let _ = write!(out, "x{a},");
        }
        out.push_str("value,mask\n");
        for i in 0..self.grid.len() {
            for x in self.grid.coords(i) {
                let _ = write!(out, "{x:.16e},");
            }
            let v = if self.mask[i] { self.values[i] } else { f64::NAN };
            let _ = writeln!(out, "{v:.16e},{}", u8::from(self.mask[i]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Parses the CSV format back onto `grid`; rows must follow node order.
    pub fn from_csv(grid: Arc<Grid>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("# lorlab-field v1") {
            return Err(LabError::Config { line: 1, message: "missing '# lorlab-field v1' header".into() });
        }
        lines.next();
        let n = grid.dim();
        let mut values = Vec::with_capacity(grid.len());
        let mut mask = Vec::with_capacity(grid.len());
        for (k, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = |m: &str| LabError::Config { line: k + 3, message: m.to_string() };
            if cols.len() != n + 2 {
                return Err(bad("wrong column count"));
            }
            values.push(cols[n].trim().parse::<f64>().map_err(|_| bad("bad value"))?);
            mask.push(cols[n + 1].trim() == "1");
        }
        let values = values.into_iter().zip(&mask).map(|(v, m)| if *m { v } else { f64::NAN }).collect();
        ScalarField::new(grid, values, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::models;

    fn grid2() -> Arc<Grid> {
        Arc::new(Grid::over(Arc::new(models::minkowski(2)), &[0.0, -1.0], &[2.0, 1.0], &[5, 9]).unwrap())
    }

    #[test]
    fn indexing_round_trip() {
        let g = grid2();
        assert_eq!(g.len(), 45);
        assert_eq!(g.spacing(), &[0.5, 0.25]);
        for i in 0..g.len() {
            assert_eq!(g.index(&g.multi(i)), i);
        }
        assert_eq!(g.coords(g.index(&[2, 4])), vec![1.0, 0.0]);
        assert_eq!(g.nearest(&[1.1, 0.05]).unwrap(), g.index(&[2, 4]));
        assert!(g.nearest(&[3.0, 0.0]).is_err());
        assert_eq!(g.shift(g.index(&[0, 0]), &[0, -1]), None);
    }

    #[test]
    fn periodic_axes_wrap() {
        let g = Grid::new(Arc::new(models::product_circle(1.0)), &[4, 8]).unwrap();
        assert!((g.spacing()[1] - std::f64::consts::PI / 4.0).abs() < 1e-15);
        assert_eq!(g.shift(g.index(&[1, 0]), &[0, -1]), Some(g.index(&[1, 7])));
        assert_eq!(g.nearest(&[-1.0, 2.0 * std::f64::consts::PI - 0.01]).unwrap(), g.index(&[0, 0]));
    }

    #[test]
    fn interpolation_is_exact_for_affine_fields() {
        let g = grid2();
        let f = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0] - 3.0 * x[1] + 1.0);
        let v = g.interpolate(&f.values, &[0.77, 0.31]).unwrap();
        assert!((v - (2.0 * 0.77 - 3.0 * 0.31 + 1.0)).abs() < 1e-12);
        assert!(g.interpolate(&f.values, &[2.5, 0.0]).is_none());
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let g = grid2();
        let mut f = ScalarField::from_fn(g.clone(), |x| (x[0] * 1.234567).sin() / 3.0);
        f.mask[3] = false;
        f.values[3] = f64::NAN;
        let back = ScalarField::from_csv(g, &f.to_csv()).unwrap();
        for i in 0..f.values.len() {
            assert_eq!(back.mask[i], f.mask[i]);
            if f.mask[i] {
                assert_eq!(back.values[i].to_bits(), f.values[i].to_bits());
            }
        }
    }
}
