//! Equal-sized cube histogram over covariate space and the piecewise-constant
//! CATE function `Δy(x) = ȳ₁(cube(x)) − ȳ₀(cube(x))` built from it.
//!
//! Cubes are stored sparsely, keyed by their linear index, so ten or more
//! dimensions cost memory proportional to the occupied cubes only.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::datasets::{Group, ObservationalDataset};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const DEFAULT_MIN_COUNT: usize = 5;
/// Upper limit of the automatic per-dimension bin count.
pub const MAX_AUTO_BINS: usize = 64;

/// How many bins each dimension gets.
#[derive(Debug, Clone, PartialEq)]
pub enum BinRule {
    /// `⌈N^(1/(q+2))⌉` for `N` pooled rows, capped at [`MAX_AUTO_BINS`].
    Auto,
    Uniform(usize),
    PerDimension(Vec<usize>),
}

/// Where the grid's outer faces lie.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundsPolicy {
    /// Pooled `[min, max]` of both datasets, widened by `expand` of the range on each side.
    PooledRange {
        expand: f64,
    },
    Fixed {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub bins: BinRule,
    pub bounds: BoundsPolicy,
    /// Rows each group needs in a cube before its mean is used.
    pub min_count: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            bins: BinRule::Auto,
            bounds: BoundsPolicy::PooledRange { expand: 0.01 },
            min_count: DEFAULT_MIN_COUNT,
        }
    }
}

pub fn auto_bins(pooled_rows: usize, q: usize) -> usize {
    let b = (pooled_rows.max(1) as f64)
        .powf(1.0 / (q as f64 + 2.0))
        .ceil() as usize;
    b.clamp(1, MAX_AUTO_BINS)
}

/// Geometry of an equal-sized cube partition of a box.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    bins: Vec<usize>,
}

impl CubeGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        let q = lower.len();
        if q == 0 || upper.len() != q || bins.len() != q {
            return Err(Error::shape(format!(
                "grid needs matching non-empty bounds and bins, got {}, {}, {}",
                q,
                upper.len(),
                bins.len()
            )));
        }
        for d in 0..q {
            if !(lower[d].is_finite() && upper[d].is_finite() && lower[d] < upper[d]) {
                return Err(Error::config(format!(
                    "dimension {d}: bounds [{}, {}] must be finite with lower < upper",
                    lower[d], upper[d]
                )));
            }
        }
        if bins.contains(&0) {
            return Err(Error::config("bin counts must be at least 1"));
        }
        if bins
            .iter()
            .try_fold(1u64, |acc, &b| acc.checked_mul(b as u64))
            .is_none()
        {
            return Err(Error::config("too many cubes to index"));
        }
        Ok(CubeGrid { lower, upper, bins })
    }

    pub fn dim(&self) -> usize {
        self.bins.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn cube_width(&self, d: usize) -> f64 {
        (self.upper[d] - self.lower[d]) / self.bins[d] as f64
    }

    /// Bin of `x` along dimension `d`; the upper face belongs to the last bin.
    fn bin_of(&self, d: usize, x: f64) -> Option<usize> {
        if !(x >= self.lower[d] && x <= self.upper[d]) {
            return None;
        }
        let k = ((x - self.lower[d]) / self.cube_width(d)) as usize;
        Some(k.min(self.bins[d] - 1))
    }

    /// Linear index of the cube holding `x` (first dimension varies slowest),
    /// or `None` outside the bounds.
    pub fn cube_index(&self, x: &[f64]) -> Result<Option<u64>> {
        if x.len() != self.dim() {
            return Err(Error::shape(format!(
                "point has {} coordinates, grid has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.index_unchecked(x))
    }

    fn index_unchecked(&self, x: &[f64]) -> Option<u64> {
        let mut idx = 0u64;
        for (d, &v) in x.iter().enumerate() {
            idx = idx * self.bins[d] as u64 + self.bin_of(d, v)? as u64;
        }
        Some(idx)
    }

    /// Per-dimension bin numbers of a linear index.
    pub fn cube_coords(&self, mut index: u64) -> Vec<usize> {
        let mut coords = vec![0; self.dim()];
        for d in (0..self.dim()).rev() {
            let b = self.bins[d] as u64;
            coords[d] = (index % b) as usize;
            index /= b;
        }
        coords
    }

    pub fn cube_center(&self, index: u64) -> Vec<f64> {
        self.cube_coords(index)
            .iter()
            .enumerate()
            .map(|(d, &k)| self.lower[d] + (k as f64 + 0.5) * self.cube_width(d))
            .collect()
    }
}

/// Accumulated outcomes of one cube, indexed by [`Group::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CubeStats {
    pub count: [usize; 2],
    pub sum: [f64; 2],
    pub sum_sq: [f64; 2],
}

impl CubeStats {
    fn add(&mut self, g: usize, y: f64) {
        self.count[g] += 1;
        self.sum[g] += y;
        self.sum_sq[g] += y * y;
    }

    pub fn mean(&self, group: Group) -> Option<f64> {
        let g = group.index();
        (self.count[g] > 0).then(|| self.sum[g] / self.count[g] as f64)
    }

    /// Sample variance of the group's outcomes in the cube.
    pub fn variance(&self, group: Group) -> Option<f64> {
        let g = group.index();
        let n = self.count[g];
        if n < 2 {
            return None;
        }
        let mean = self.sum[g] / n as f64;
        Some(((self.sum_sq[g] - n as f64 * mean * mean) / (n - 1) as f64).max(0.0))
    }

    pub fn supported(&self, min_count: usize) -> bool {
        self.count.iter().all(|&c| c >= min_count.max(1))
    }

    /// `ȳ₁ − ȳ₀` when both groups reach `min_count`.
    pub fn cate(&self, min_count: usize) -> Option<f64> {
        if !self.supported(min_count) {
            return None;
        }
        Some(self.mean(Group::Treated)? - self.mean(Group::Control)?)
    }

    /// Standard error of the cube's `Δy`: `√(s₁²/n₁ + s₀²/n₀)`.
    pub fn cate_std_err(&self) -> Option<f64> {
        let v1 = self.variance(Group::Treated)? / self.count[1] as f64;
        let v0 = self.variance(Group::Control)? / self.count[0] as f64;
        Some((v0 + v1).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CateFunction {
    grid: CubeGrid,
    cells: HashMap<u64, CubeStats>,
    overflow: [usize; 2],
    rows: [usize; 2],
    min_count: usize,
}

/// Bins `control` and `treated` rows (all rows of each, regardless of their
/// flags) on a grid chosen by `config`.
pub fn build_grid(
    control: &ObservationalDataset,
    treated: &ObservationalDataset,
    config: &GridConfig,
) -> Result<CateFunction> {
    let q = control.dim();
    if treated.dim() != q {
        return Err(Error::shape(format!(
            "control rows have {q} covariates, treated rows {}",
            treated.dim()
        )));
    }
    let bins = match &config.bins {
        BinRule::Auto => vec![auto_bins(control.len() + treated.len(), q); q],
        BinRule::Uniform(b) => vec![*b; q],
        BinRule::PerDimension(b) => b.clone(),
    };
    let (lower, upper) = match &config.bounds {
        BoundsPolicy::Fixed { lower, upper } => (lower.clone(), upper.clone()),
        BoundsPolicy::PooledRange { expand } => pooled_bounds(control, treated, *expand)?,
    };
    let grid = CubeGrid::new(lower, upper, bins)?;
    CateFunction::from_grid(grid, control, treated, config.min_count)
}

pub(crate) fn pooled_bounds(
    a: &ObservationalDataset,
    b: &ObservationalDataset,
    expand: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(expand >= 0.0 && expand.is_finite()) {
        return Err(Error::config(
            "bounds expansion must be finite and non-negative",
        ));
    }
    if a.is_empty() && b.is_empty() {
        return Err(Error::data("cannot bound a grid over zero rows"));
    }
    let q = a.dim();
    let mut lo = vec![f64::INFINITY; q];
    let mut hi = vec![f64::NEG_INFINITY; q];
    for m in [a.covariates(), b.covariates()] {
        for row in m.iter_rows() {
            for d in 0..q {
                lo[d] = lo[d].min(row[d]);
                hi[d] = hi[d].max(row[d]);
            }
        }
    }
    for d in 0..q {
        let pad = if hi[d] > lo[d] {
            expand * (hi[d] - lo[d])
        } else {
            // a single value still needs a box of positive width
            0.5 * lo[d].abs().max(1.0) * expand.max(0.01)
        };
        lo[d] -= pad;
        hi[d] += pad;
    }
    Ok((lo, hi))
}

impl CateFunction {
    pub fn from_grid(
        grid: CubeGrid,
        control: &ObservationalDataset,
        treated: &ObservationalDataset,
        min_count: usize,
    ) -> Result<Self> {
        let mut f = CateFunction {
            grid,
            cells: HashMap::new(),
            overflow: [0; 2],
            rows: [0; 2],
            min_count,
        };
        for (group, data) in [(Group::Control, control), (Group::Treated, treated)] {
            if data.dim() != f.grid.dim() {
                return Err(Error::shape(format!(
                    "{} covariates for a {}-dimensional grid",
                    data.dim(),
                    f.grid.dim()
                )));
            }
            let g = group.index();
            f.rows[g] += data.len();
            for (row, &y) in data.covariates().iter_rows().zip(data.outcomes()) {
                match f.grid.index_unchecked(row) {
                    Some(idx) => f.cells.entry(idx).or_default().add(g, y),
                    None => f.overflow[g] += 1,
                }
            }
        }
        Ok(f)
    }

    pub fn grid(&self) -> &CubeGrid {
        &self.grid
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Rows of `group` that fell outside the grid.
    pub fn overflow(&self, group: Group) -> usize {
        self.overflow[group.index()]
    }

    /// Rows of `group` offered to the grid, binned or not.
    pub fn rows(&self, group: Group) -> usize {
        self.rows[group.index()]
    }

    pub fn cube(&self, index: u64) -> Option<&CubeStats> {
        self.cells.get(&index)
    }

    /// Occupied cubes in index order.
    pub fn cubes(&self) -> Vec<(u64, &CubeStats)> {
        let mut v: Vec<_> = self.cells.iter().map(|(&k, s)| (k, s)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }

    pub fn supported_cubes(&self) -> usize {
        self.cells
            .values()
            .filter(|s| s.supported(self.min_count))
            .count()
    }

    /// `Δy(x)`, or `None` when `x` lies outside the grid or its cube lacks support.
    pub fn evaluate(&self, x: &[f64]) -> Result<Option<f64>> {
        Ok(self
            .grid
            .cube_index(x)?
            .and_then(|idx| self.cells.get(&idx))
            .and_then(|s| s.cate(self.min_count)))
    }

    /// `Δy` for every row of `points`.
    pub fn evaluate_rows(&self, points: &Matrix) -> Result<Vec<Option<f64>>> {
        points.iter_rows().map(|r| self.evaluate(r)).collect()
    }

    /// Per-cube CSV: bin numbers, centers, counts, means and `Δy` for every
    /// occupied cube. Means and `Δy` are blank where undefined.
    pub fn surface_csv(&self) -> String {
        let q = self.grid.dim();
        let mut s = String::new();
        let header: Vec<String> = (0..q)
            .map(|d| format!("idx_{}", d + 1))
            .chain((0..q).map(|d| format!("center_{}", d + 1)))
            .chain(["count0", "count1", "mean0", "mean1", "cate"].map(String::from))
            .collect();
        s.push_str(&header.join(","));
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (idx, stats) in self.cubes() {
            let coords = self.grid.cube_coords(idx);
            let center = self.grid.cube_center(idx);
            let fields: Vec<String> = coords
                .iter()
                .map(|k| k.to_string())
                .chain(center.iter().map(|c| c.to_string()))
                .chain([
                    stats.count[0].to_string(),
                    stats.count[1].to_string(),
                    opt(stats.mean(Group::Control)),
                    opt(stats.mean(Group::Treated)),
                    opt(stats.cate(self.min_count)),
                ])
                .collect();
            let _ = writeln!(s, "{}", fields.join(","));
        }
        s
    }
}

pub fn export_cate_surface(cate: &CateFunction, path: &Path) -> Result<()> {
    std::fs::write(path, cate.surface_csv()).map_err(|e| Error::io(path, e))
}
