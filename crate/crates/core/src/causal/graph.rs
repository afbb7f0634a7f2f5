use std::sync::Arc;

use rayon::prelude::*;

use crate::cone::{classify, f_norm, CausalClass, TangentVector};
use crate::error::{usage, Result};
use crate::grid::Grid;

const NO_LINK: u32 = u32::MAX;

/// Causal DAG on a grid. Edges go from `u` to `u + o` for stencil offsets
/// `o = (dt, dx...)` with `1 <= dt <= R` and `|dx_a| <= R`, kept when the
/// displacement is future causal for the metric at the segment midpoint.
/// Edge weights `|Δx|_F` at the midpoint are tabulated once.
#[derive(Debug)]
pub struct CausalGraph {
    grid: Arc<Grid>,
    radius: usize,
    offsets: Vec<Vec<i64>>,
    weights: Vec<f64>,
}

pub fn build_causal_graph(grid: Arc<Grid>, radius: usize) -> Result<CausalGraph> {
    if radius < 1 {
        return usage("stencil radius must be at least 1");
    }
    let n = grid.dim();
    for a in 0..n {
        let limit = if grid.periodic(a) { 2 * radius + 1 } else { radius + 1 };
        if grid.shape()[a] < limit {
            return usage(format!("stencil radius {radius} exceeds grid shape {} on axis {a}", grid.shape()[a]));
        }
    }
    let r = radius as i64;
    let mut offsets = Vec::new();
    for dt in 1..=r {
        let mut spatial = vec![-r; n - 1];
        loop {
            let mut o = vec![dt];
            o.extend_from_slice(&spatial);
            offsets.push(o);
            let mut a = n - 1;
            loop {
                if a == 0 {
                    break;
                }
                if spatial[a - 1] < r {
                    spatial[a - 1] += 1;
                    break;
                }
                spatial[a - 1] = -r;
                a -= 1;
            }
            if a == 0 {
                break;
            }
        }
    }
    let m = offsets.len();
    let chart = grid.chart().clone();
    let h = grid.spacing().to_vec();
    let mut weights = vec![f64::NEG_INFINITY; grid.len() * m];
    weights.par_chunks_mut(m).enumerate().for_each(|(u, row)| {
        let x = grid.coords(u);
        for (k, o) in offsets.iter().enumerate() {
            if grid.shift(u, o).is_none() {
                continue;
            }
            let delta: Vec<f64> = (0..n).map(|a| o[a] as f64 * h[a]).collect();
            let mid: Vec<f64> = (0..n).map(|a| x[a] + 0.5 * delta[a]).collect();
            let Ok(g) = chart.metric_at(&mid) else { continue };
            let v = TangentVector::new(&delta);
            if matches!(classify(&v, &g), Ok(CausalClass::Timelike | CausalClass::Lightlike)) {
                if let Ok(w) = f_norm(&v, &g) {
                    row[k] = w.unwrap_or(f64::NEG_INFINITY);
                }
            }
        }
    });
    Ok(CausalGraph { grid, radius, offsets, weights })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `values[v] = max over sources s of ℓ(s, v)`.
    Forward,
    /// `values[v] = max over targets s of ℓ(v, s)`.
    Backward,
}

/// Result of a longest-path sweep.
#[derive(Clone, Debug)]
pub struct DpTable {
    pub direction: Direction,
    /// `-∞` marks unreachable nodes.
    pub values: Vec<f64>,
    links: Vec<u32>,
}

impl CausalGraph {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> &[Vec<i64>] {
        &self.offsets
    }

    /// Weight of edge `u -> u + offsets[k]`, `None` if absent.
    pub fn weight(&self, u: usize, k: usize) -> Option<f64> {
        let w = self.weights[u * self.offsets.len() + k];
        if w.is_finite() {
            Some(w)
        } else {
            None
        }
    }

    pub fn successors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.offsets.len()).filter_map(move |k| Some((self.grid.shift(u, &self.offsets[k])?, self.weight(u, k)?)))
    }

    pub fn out_degree(&self, u: usize) -> usize {
        self.successors(u).count()
    }

    /// Longest paths from the given sources, sweeping slices up to
    /// `last_slice` (inclusive). Ties go to the smallest predecessor index.
    pub fn forward(&self, sources: &[usize], last_slice: Option<usize>) -> DpTable {
        let grid = &self.grid;
        let mut values = vec![f64::NEG_INFINITY; grid.len()];
        let mut links = vec![NO_LINK; grid.len()];
        for &s in sources {
            values[s] = 0.0;
        }
        let Some(first) = sources.iter().map(|&s| grid.slice_of(s)).min() else {
            return DpTable { direction: Direction::Forward, values, links };
        };
        let last = last_slice.unwrap_or(grid.shape()[0] - 1).min(grid.shape()[0] - 1);
        let sl = grid.slice_len();
        let neg: Vec<Vec<i64>> = self.offsets.iter().map(|o| o.iter().map(|c| -c).collect()).collect();
        for k in (first + 1)..=last {
            let update: Vec<(f64, u32)> = (k * sl..(k + 1) * sl)
                .into_par_iter()
                .map(|v| {
                    let mut best = values[v];
                    let mut best_u = usize::MAX;
                    let mut link = links[v];
                    for (j, o) in neg.iter().enumerate() {
                        let Some(u) = grid.shift(v, o) else { continue };
                        let Some(w) = self.weight(u, j) else { continue };
                        if values[u] == f64::NEG_INFINITY {
                            continue;
                        }
                        let cand = values[u] + w;
                        if cand > best || (cand == best && best_u != usize::MAX && u < best_u) {
                            best = cand;
                            best_u = u;
                            link = j as u32;
                        }
                    }
                    (best, link)
                })
                .collect();
            for (i, (v, l)) in update.into_iter().enumerate() {
                values[k * sl + i] = v;
                links[k * sl + i] = l;
            }
        }
        DpTable { direction: Direction::Forward, values, links }
    }

    /// Longest paths into the given targets, sweeping slices down to
    /// `first_slice`. Ties go to the smallest successor index.
    pub fn backward(&self, targets: &[usize], first_slice: Option<usize>) -> DpTable {
        let grid = &self.grid;
        let mut values = vec![f64::NEG_INFINITY; grid.len()];
        let mut links = vec![NO_LINK; grid.len()];
        for &s in targets {
            values[s] = 0.0;
        }
        let Some(top) = targets.iter().map(|&s| grid.slice_of(s)).max() else {
            return DpTable { direction: Direction::Backward, values, links };
        };
        let first = first_slice.unwrap_or(0);
        let sl = grid.slice_len();
        for k in (first..top).rev() {
            let update: Vec<(f64, u32)> = (k * sl..(k + 1) * sl)
                .into_par_iter()
                .map(|v| {
                    let mut best = values[v];
                    let mut best_s = usize::MAX;
                    let mut link = links[v];
                    for (j, o) in self.offsets.iter().enumerate() {
                        let Some(w) = self.weight(v, j) else { continue };
                        let Some(s) = grid.shift(v, o) else { continue };
                        if values[s] == f64::NEG_INFINITY {
                            continue;
                        }
                        let cand = w + values[s];
                        if cand > best || (cand == best && best_s != usize::MAX && s < best_s) {
                            best = cand;
                            best_s = s;
                            link = j as u32;
                        }
                    }
                    (best, link)
                })
                .collect();
            for (i, (v, l)) in update.into_iter().enumerate() {
                values[k * sl + i] = v;
                links[k * sl + i] = l;
            }
        }
        DpTable { direction: Direction::Backward, values, links }
    }

    /// Optimal path through `node` recorded in `table`, in causal order, with
    /// unwrapped coordinates (periodic axes are not folded back).
    pub fn path(&self, table: &DpTable, node: usize) -> Option<(Vec<usize>, Vec<Vec<f64>>)> {
        if table.values[node] == f64::NEG_INFINITY {
            return None;
        }
        let n = self.grid.dim();
        let h = self.grid.spacing();
        let mut nodes = vec![node];
        let mut steps: Vec<usize> = Vec::new();
        let mut cur = node;
        while table.links[cur] != NO_LINK {
            let k = table.links[cur] as usize;
            let o = &self.offsets[k];
            cur = match table.direction {
                Direction::Forward => self.grid.shift(cur, &o.iter().map(|c| -c).collect::<Vec<_>>())?,
                Direction::Backward => self.grid.shift(cur, o)?,
            };
            nodes.push(cur);
            steps.push(k);
        }
        if table.direction == Direction::Forward {
            nodes.reverse();
            steps.reverse();
        }
        let mut coords = vec![self.grid.coords(nodes[0])];
        for k in steps {
            let prev = coords.last().expect("nonempty");
            coords.push((0..n).map(|a| prev[a] + self.offsets[k][a] as f64 * h[a]).collect());
        }
        Some((nodes, coords))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spacetime::models::{self, ScaleFactor};

    fn mink_graph(shape: [usize; 2], radius: usize) -> CausalGraph {
        let grid = Grid::over(Arc::new(models::minkowski(2)), &[0.0, -1.0], &[2.0, 1.0], &shape).unwrap();
        build_causal_graph(Arc::new(grid), radius).unwrap()
    }

    #[test]
    fn interior_out_degree_counts() {
        let g = mink_graph([100, 100], 2);
        let grid = g.grid().clone();
        let u = grid.index(&[50, 50]);
        // dt = dx: |dx| <= dt leaves 3 + 5 of the 10 stencil offsets.
        assert!(g.out_degree(u) <= 10);
        assert_eq!(g.out_degree(u), 8);
        let g1 = mink_graph([100, 100], 1);
        for (v, _) in g1.successors(u) {
            let (a, b) = (grid.multi(u), grid.multi(v));
            assert!((b[1] as i64 - a[1] as i64).abs() <= (b[0] - a[0]) as i64);
        }
    }

    #[test]
    fn wide_grid_cuts_spacelike_offsets() {
        // dt = 2/99, dx = 2/9: only vertical edges are causal.
        let g = mink_graph([100, 10], 2);
        let u = g.grid().index(&[50, 5]);
        assert_eq!(g.out_degree(u), 2);
    }

    #[test]
    fn flrw_edge_rule_uses_midpoint_scale_factor() {
        let chart = Arc::new(models::flrw(2, ScaleFactor::Matter));
        let grid = Arc::new(Grid::over(chart.clone(), &[0.5, -1.0], &[2.0, 1.0], &[16, 21]).unwrap());
        let g = build_causal_graph(grid.clone(), 3).unwrap();
        let (dt, dx) = (grid.spacing()[0], grid.spacing()[1]);
        for u in [grid.index(&[0, 10]), grid.index(&[10, 10])] {
            for (k, o) in g.offsets().iter().enumerate() {
                let tm = grid.coords(u)[0] + 0.5 * o[0] as f64 * dt;
                let a = tm.powf(2.0 / 3.0);
                let (ddt, ddx) = (o[0] as f64 * dt, o[1] as f64 * dx);
                let causal = ddt * ddt - a * a * ddx * ddx >= -1e-12 * (ddt * ddt + ddx * ddx);
                assert_eq!(g.weight(u, k).is_some(), causal);
            }
        }
    }

    #[test]
    fn oversized_stencil_is_rejected() {
        let grid = Grid::over(Arc::new(models::minkowski(2)), &[0.0, -1.0], &[2.0, 1.0], &[3, 3]).unwrap();
        assert!(build_causal_graph(Arc::new(grid.clone()), 3).is_err());
        assert!(build_causal_graph(Arc::new(grid), 0).is_err());
    }

    #[test]
    fn forward_and_backward_agree() {
        let g = mink_graph([21, 21], 3);
        let grid = g.grid().clone();
        let (x, y) = (grid.index(&[2, 10]), grid.index(&[18, 13]));
        let f = g.forward(&[x], None);
        let b = g.backward(&[y], None);
        assert!((f.values[y] - b.values[x]).abs() < 1e-12);
        let (nodes, coords) = g.path(&f, y).unwrap();
        assert_eq!(nodes.first(), Some(&x));
        assert_eq!(nodes.last(), Some(&y));
        assert_eq!(coords.len(), nodes.len());
        let (nodes_b, _) = g.path(&b, x).unwrap();
        assert_eq!(nodes_b.first(), Some(&x));
        assert_eq!(nodes_b.last(), Some(&y));
    }
}
