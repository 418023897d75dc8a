//! Uniform time grids, seeded Brownian increments and sample paths.
//!
//! Every random quantity in the crate is a deterministic function of a
//! [`SeedSpec`]. A seed names a ChaCha8 key (derived from `master_seed`) and a
//! stream (`stream_id`), so path `k` of an ensemble can be generated on any
//! thread, in any order, and come out bit-identical.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform grid `t0 = s_0 < s_1 < ... < s_n = t_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) {
            return invalid("grid endpoints must be finite");
        }
        if t_end <= t0 {
            return invalid(format!("grid span must be positive, got [{t0}, {t_end}]"));
        }
        if n_steps == 0 {
            return invalid("grid needs at least one step");
        }
        Ok(Self { t0, t_end, n_steps })
    }

    /// Grid on `[0, t_end]` whose step does not exceed `max_step`.
    pub fn with_max_step(t_end: f64, max_step: f64) -> Result<Self> {
        if !(max_step > 0.0) {
            return invalid("maximum step must be positive");
        }
        let n = (t_end / max_step - 1e-9).ceil().max(1.0) as usize;
        Self::new(0.0, t_end, n)
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step()
    }

    /// Number of nodes, `n_steps + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.node(k))
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t0
    }

    /// Index of the node closest to `t`, clamped to the grid.
    pub fn nearest_index(&self, t: f64) -> usize {
        let k = ((t - self.t0) / self.step()).round();
        k.clamp(0.0, self.n_steps as f64) as usize
    }

    /// Grid with `stride` times fewer steps. `stride` must divide `n_steps`.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        if stride == 0 || self.n_steps % stride != 0 {
            return invalid(format!(
                "stride {stride} does not divide {} steps",
                self.n_steps
            ));
        }
        Self::new(self.t0, self.t_end, self.n_steps / stride)
    }

    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return invalid("refinement factor must be positive");
        }
        Self::new(self.t0, self.t_end, self.n_steps * factor)
    }
}

/// Alias kept for call sites that read better as a verb.
pub fn make_grid(t0: f64, t_end: f64, n_steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(t0, t_end, n_steps)
}

/// Identifies one reproducible random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// A seed with a different key but the same stream id. Used to give each
    /// independent driver of one path its own stream.
    pub fn child(&self, tag: u64) -> Self {
        Self {
            master_seed: splitmix64(self.master_seed ^ splitmix64(tag.wrapping_add(0x5151))),
            stream_id: self.stream_id,
        }
    }

    pub fn with_stream(&self, stream_id: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id,
        }
    }
}

/// `n_steps * dim` independent `N(0, h)` increments, node-major.
pub fn gaussian_increments(grid: &TimeGrid, dim: usize, seed: SeedSpec) -> Vec<f64> {
    let sqrt_h = grid.step().sqrt();
    let mut rng = seed.rng();
    (0..grid.n_steps * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sqrt_h * z
        })
        .collect()
}

/// A vector-valued trajectory on a [`TimeGrid`], stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub grid: TimeGrid,
    pub dim: usize,
    values: Vec<f64>,
}

impl SamplePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("path dimension must be positive");
        }
        if values.len() != grid.len() * dim {
            return invalid(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                grid.len() * dim,
                grid.len(),
                values.len()
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::Error::BlowUp { index: i / dim });
        }
        Ok(Self { grid, dim, values })
    }

    /// Accumulate increments from `start`: `x_{k+1} = x_k + dx_k`.
    pub fn from_increments(
        grid: TimeGrid,
        dim: usize,
        start: &[f64],
        increments: &[f64],
    ) -> Result<Self> {
        if start.len() != dim || increments.len() != grid.n_steps * dim {
            return invalid("increment layout does not match grid and dimension");
        }
        let mut values = Vec::with_capacity(grid.len() * dim);
        values.extend_from_slice(start);
        for k in 0..grid.n_steps {
            for j in 0..dim {
                let prev = values[k * dim + j];
                values.push(prev + increments[k * dim + j]);
            }
        }
        Self::new(grid, dim, values)
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.len() * dim],
        }
    }

    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.dim + j]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.n_steps)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, j: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|k| self.get(k, j)).collect()
    }

    /// Every `stride`-th node.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        let grid = self.grid.coarsen(stride)?;
        let values = (0..grid.len())
            .flat_map(|k| self.state(k * stride).iter().copied())
            .collect();
        Self::new(grid, self.dim, values)
    }

    /// Largest Euclidean distance between the two paths over the grid.
    pub fn sup_distance(&self, other: &SamplePath) -> Result<f64> {
        if self.grid != other.grid || self.dim != other.dim {
            return invalid("paths live on different grids");
        }
        Ok((0..self.grid.len())
            .map(|k| euclid_dist(self.state(k), other.state(k)))
            .fold(0.0, f64::max))
    }

    /// CSV with header `t,x1,...,xd`, preceded by `# ...` comment lines.
    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        let names: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        let columns: Vec<Vec<f64>> = (0..self.dim).map(|j| self.component(j)).collect();
        write_columns_csv(out, comments, &self.grid, &names, &columns)
    }
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a `t,<names...>` table. Shared by every CSV export in the crate.
pub fn write_columns_csv<W: Write>(
    out: &mut W,
    comments: &[String],
    grid: &TimeGrid,
    names: &[String],
    columns: &[Vec<f64>],
) -> io::Result<()> {
    for c in comments {
        write!(out, "# {c}\r\n")?;
    }
    write!(out, "t")?;
    for n in names {
        write!(out, ",{n}")?;
    }
    out.write_all(b"\r\n")?;
    for k in 0..grid.len() {
        write!(out, "{}", fmt_f64(grid.node(k)))?;
        for col in columns {
            write!(out, ",{}", fmt_f64(col[k]))?;
        }
        out.write_all(b"\r\n")?;
    }
    Ok(())
}

/// Standard Brownian motion started at 0.
pub fn sample_brownian(grid: &TimeGrid, dim: usize, seed: SeedSpec) -> Result<SamplePath> {
    if dim == 0 {
        return invalid("Brownian dimension must be positive");
    }
    let incs = gaussian_increments(grid, dim, seed);
    SamplePath::from_increments(*grid, dim, &vec![0.0; dim], &incs)
}

/// Seeded collection of Brownian paths; path `k` uses stream `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub grid: TimeGrid,
    pub dim: usize,
    pub master_seed: u64,
    pub paths: Vec<SamplePath>,
}

impl TrajectoryEnsemble {
    pub fn seed_of(&self, k: usize) -> SeedSpec {
        SeedSpec::new(self.master_seed, k as u64)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

pub fn sample_ensemble(
    grid: &TimeGrid,
    dim: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<TrajectoryEnsemble> {
    if n_paths == 0 {
        return invalid("ensemble needs at least one path");
    }
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|k| sample_brownian(grid, dim, SeedSpec::new(master_seed, k as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryEnsemble {
        grid: *grid,
        dim,
        master_seed,
        paths,
    })
}

/// Serial twin of [`sample_ensemble`]; exists so order independence can be
/// checked.
pub fn sample_ensemble_serial(
    grid: &TimeGrid,
    dim: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<TrajectoryEnsemble> {
    if n_paths == 0 {
        return invalid("ensemble needs at least one path");
    }
    let paths = (0..n_paths)
        .rev()
        .map(|k| sample_brownian(grid, dim, SeedSpec::new(master_seed, k as u64)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .rev()
        .collect();
    Ok(TrajectoryEnsemble {
        grid: *grid,
        dim,
        master_seed,
        paths,
    })
}
