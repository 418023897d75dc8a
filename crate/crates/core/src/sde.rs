//! Euler-Maruyama simulation of the prelimit systems.
//!
//! Every simulator draws `W1` and `W2` from two child streams of one
//! [`SeedSpec`], so the fast driver of a path is the same Brownian path that
//! [`sample_brownian`] produces for `seed.child(TAG_W1)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::deterministic::OdeSolution;
use crate::error::{invalid, Error, Result};
use crate::paths::{gaussian_increments, write_columns_csv, SamplePath, SeedSpec, TimeGrid};

/// Child-stream tag of the fast driver `W1`.
pub const TAG_W1: u64 = 1;
/// Child-stream tag of the slow driver `W2`.
pub const TAG_W2: u64 = 2;

/// Default `h_ref` in the step rule `h <= h_ref eps^2`.
pub const DEFAULT_H_REF: f64 = 1e-2;

/// Decreasing list of `eps` values with the step rule `h(eps) = h_ref eps^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub values: Vec<f64>,
    pub h_ref: f64,
}

impl EpsilonSchedule {
    pub fn new(values: Vec<f64>, h_ref: f64) -> Result<Self> {
        if values.is_empty() {
            return invalid("epsilon schedule is empty");
        }
        if values.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return invalid("epsilon values must be positive and finite");
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return invalid("epsilon values must be strictly decreasing");
        }
        if !(h_ref > 0.0) {
            return invalid("h_ref must be positive");
        }
        Ok(Self { values, h_ref })
    }

    pub fn with_default_step(values: Vec<f64>) -> Result<Self> {
        Self::new(values, DEFAULT_H_REF)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn smallest(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn step(&self, eps: f64) -> f64 {
        self.h_ref * eps * eps
    }

    /// A fine grid on `[0, t_end]` for the smallest `eps`, and for every
    /// `eps` the largest stride dividing it with `stride h_fine <= h(eps)`.
    /// The node count is a multiple of `align`, so `t_end * i / align` are
    /// nodes of every coarsened grid as long as the strides allow.
    pub fn common_grid(&self, t_end: f64, align: usize) -> Result<(TimeGrid, Vec<usize>)> {
        let h_min = self.step(self.smallest());
        let ideal: Vec<usize> = self
            .values
            .iter()
            .map(|e| ((self.step(*e) / h_min) * (1.0 + 1e-12)).floor().max(1.0) as usize)
            .collect();
        let top = ideal.iter().copied().max().unwrap();
        let pow2 = 1usize << (usize::BITS - 1 - top.leading_zeros());
        let unit = pow2 * align.max(1);
        let raw = (t_end / h_min * (1.0 - 1e-12)).ceil() as usize;
        let n_fine = raw.div_ceil(unit).max(1) * unit;
        let grid = TimeGrid::new(0.0, t_end, n_fine)?;
        let strides = ideal
            .iter()
            .map(|&s| (1..=s).rev().find(|d| n_fine % d == 0).unwrap())
            .collect();
        Ok((grid, strides))
    }
}

pub(crate) fn warn_resolution(grid: &TimeGrid, eps: f64) {
    let limit = DEFAULT_H_REF * eps * eps;
    if grid.step() > limit * (1.0 + 1e-9) {
        log::warn!(
            "step {:e} exceeds h_ref eps^2 = {:e} for eps = {eps}; the fast scale is under-resolved",
            grid.step(),
            limit
        );
    }
}

/// Increments of `W1` (scalar) and `W2` (`noise_dim` components) on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Drivers {
    pub grid: TimeGrid,
    pub noise_dim: usize,
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
}

impl Drivers {
    pub fn sample(grid: &TimeGrid, noise_dim: usize, seed: SeedSpec) -> Self {
        Self {
            grid: *grid,
            noise_dim,
            dw1: gaussian_increments(grid, 1, seed.child(TAG_W1)),
            dw2: gaussian_increments(grid, noise_dim, seed.child(TAG_W2)),
        }
    }

    /// Increments of the same Brownian paths on the grid with `stride`
    /// times the step.
    pub fn coarsen(&self, stride: usize) -> Result<Self> {
        let grid = self.grid.coarsen(stride)?;
        let r = self.noise_dim;
        let mut dw1 = Vec::with_capacity(grid.n_steps);
        let mut dw2 = vec![0.0; grid.n_steps * r];
        for k in 0..grid.n_steps {
            let mut s = 0.0;
            for j in k * stride..(k + 1) * stride {
                s += self.dw1[j];
                for l in 0..r {
                    dw2[k * r + l] += self.dw2[j * r + l];
                }
            }
            dw1.push(s);
        }
        Ok(Self {
            grid,
            noise_dim: r,
            dw1,
            dw2,
        })
    }

    /// `W1` at the grid nodes.
    pub fn w1(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.grid.len());
        w.push(0.0);
        for k in 0..self.grid.n_steps {
            w.push(w[k] + self.dw1[k]);
        }
        w
    }
}

enum Fast {
    /// `x = W1 / eps`.
    Unit,
    /// `dX = eps^{-1} (psi1(Y) + psi2(X, Y)) dW1` from `x0`.
    General(f64),
}

struct Scratch {
    drift: Vec<f64>,
    b2: Vec<f64>,
    sig: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, r: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            b2: vec![0.0; d],
            sig: vec![0.0; d * r],
        }
    }
}

/// One Euler-Maruyama step of the slow equation at fast position `x`.
#[inline]
fn em_step(
    cs: &CoefficientSet,
    x: f64,
    y: &[f64],
    h: f64,
    dw2: &[f64],
    s: &mut Scratch,
    out: &mut [f64],
) {
    let (d, r) = (cs.dim, cs.noise_dim);
    (cs.b1)(y, &mut s.drift);
    (cs.b2)(x, y, &mut s.b2);
    (cs.sigma)(x, y, &mut s.sig);
    for i in 0..d {
        let mut noise = 0.0;
        for l in 0..r {
            noise += s.sig[i * r + l] * dw2[l];
        }
        out[i] = y[i] + (s.drift[i] + s.b2[i]) * h + noise;
    }
}

fn run(
    cs: &CoefficientSet,
    eps: f64,
    y0: &[f64],
    drivers: &Drivers,
    fast: Fast,
) -> Result<(SamplePath, SamplePath)> {
    let (d, r) = (cs.dim, cs.noise_dim);
    if y0.len() != d {
        return invalid(format!(
            "y0 has dimension {}, coefficients have {d}",
            y0.len()
        ));
    }
    if drivers.noise_dim != r {
        return invalid("driver noise dimension does not match sigma");
    }
    if !(eps > 0.0) {
        return invalid("eps must be positive");
    }
    let grid = drivers.grid;
    let h = grid.step();
    warn_resolution(&grid, eps);

    // The fast state is carried as u = eps x so that the unit case adds the
    // raw increments of W1 with no rescaling round-off.
    let mut u = match fast {
        Fast::Unit => 0.0,
        Fast::General(x0) => eps * x0,
    };
    let mut xs = Vec::with_capacity(grid.len());
    let mut ys = Vec::with_capacity(grid.len() * d);
    ys.extend_from_slice(y0);
    let mut s = Scratch::new(d, r);
    let mut next = vec![0.0; d];
    for k in 0..grid.n_steps {
        let x = u / eps;
        xs.push(x);
        let y = &ys[k * d..(k + 1) * d];
        em_step(
            cs,
            x,
            y,
            h,
            &drivers.dw2[k * r..(k + 1) * r],
            &mut s,
            &mut next,
        );
        let phi = match fast {
            Fast::Unit => 1.0,
            Fast::General(_) => cs.psi_sum(x, y),
        };
        u += phi * drivers.dw1[k];
        if next.iter().any(|v| !v.is_finite()) || !u.is_finite() {
            return Err(Error::BlowUp { index: k + 1 });
        }
        ys.extend_from_slice(&next);
    }
    xs.push(u / eps);
    Ok((SamplePath::new(grid, 1, xs)?, SamplePath::new(grid, d, ys)?))
}

/// `Y` of the unit-fast-diffusion system driven by given increments.
pub fn simulate_y_with(
    cs: &CoefficientSet,
    eps: f64,
    y0: &[f64],
    drivers: &Drivers,
) -> Result<SamplePath> {
    run(cs, eps, y0, drivers, Fast::Unit).map(|(_, y)| y)
}

/// Euler-Maruyama for `dY = [b1(Y) + b2(W1/eps, Y)] dt + sigma(W1/eps, Y) dW2`.
pub fn simulate_y_unit_phi(
    cs: &CoefficientSet,
    eps: f64,
    y0: &[f64],
    grid: &TimeGrid,
    seed: SeedSpec,
) -> Result<SamplePath> {
    simulate_y_with(cs, eps, y0, &Drivers::sample(grid, cs.noise_dim, seed))
}

/// Jointly simulated fast and slow components.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledTrajectory {
    pub grid: TimeGrid,
    pub x: SamplePath,
    pub y: SamplePath,
    pub eps: f64,
    pub w1_seed: SeedSpec,
    pub w2_seed: SeedSpec,
}

impl CoupledTrajectory {
    /// Columns `t,x,y1,...,yd`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        let mut names = vec!["x".to_string()];
        let mut cols = vec![self.x.component(0)];
        for j in 0..self.y.dim {
            names.push(format!("y{}", j + 1));
            cols.push(self.y.component(j));
        }
        write_columns_csv(out, comments, &self.grid, &names, &cols)
    }
}

pub fn simulate_pair_with(
    cs: &CoefficientSet,
    eps: f64,
    x0: f64,
    y0: &[f64],
    drivers: &Drivers,
) -> Result<(SamplePath, SamplePath)> {
    if !x0.is_finite() {
        return invalid("x0 must be finite");
    }
    cs.validate()?;
    run(cs, eps, y0, drivers, Fast::General(x0))
}

/// Euler-Maruyama for the general pair
/// `dX = eps^{-1} (psi1(Y) + psi2(X, Y)) dW1`, `dY` as in the unit case with `x = X`.
pub fn simulate_pair_general(
    cs: &CoefficientSet,
    eps: f64,
    x0: f64,
    y0: &[f64],
    grid: &TimeGrid,
    seed: SeedSpec,
) -> Result<CoupledTrajectory> {
    let drivers = Drivers::sample(grid, cs.noise_dim, seed);
    let (x, y) = simulate_pair_with(cs, eps, x0, y0, &drivers)?;
    Ok(CoupledTrajectory {
        grid: *grid,
        x,
        y,
        eps,
        w1_seed: seed.child(TAG_W1),
        w2_seed: seed.child(TAG_W2),
    })
}

/// `sigma(W1_k / eps, y_k)` for every node but the last, row-major `d x r`.
pub fn frozen_sigma(
    cs: &CoefficientSet,
    eps: f64,
    ode: &OdeSolution,
    w1: &[f64],
) -> Result<Vec<f64>> {
    let grid = ode.grid();
    if w1.len() != grid.len() {
        return invalid("W1 and the ODE solution live on different grids");
    }
    let dr = cs.dim * cs.noise_dim;
    let mut out = vec![0.0; grid.n_steps * dr];
    for k in 0..grid.n_steps {
        (cs.sigma)(w1[k] / eps, ode.y(k), &mut out[k * dr..(k + 1) * dr]);
    }
    Ok(out)
}

/// `J_{k+1} = J_k + sigma_k dW2_k` from precomputed `sigma_k`.
pub fn accumulate_j(
    grid: TimeGrid,
    d: usize,
    r: usize,
    sigma: &[f64],
    dw2: &[f64],
) -> Result<SamplePath> {
    if sigma.len() != grid.n_steps * d * r || dw2.len() != grid.n_steps * r {
        return invalid("frozen sigma or increments do not match the grid");
    }
    let mut vals = vec![0.0; grid.len() * d];
    for k in 0..grid.n_steps {
        for i in 0..d {
            let mut dj = 0.0;
            for l in 0..r {
                dj += sigma[(k * d + i) * r + l] * dw2[k * r + l];
            }
            vals[(k + 1) * d + i] = vals[k * d + i] + dj;
        }
    }
    SamplePath::new(grid, d, vals)
}

pub fn simulate_j_with(
    cs: &CoefficientSet,
    eps: f64,
    ode: &OdeSolution,
    drivers: &Drivers,
) -> Result<SamplePath> {
    if drivers.grid != *ode.grid() {
        return invalid("drivers and ODE solution live on different grids");
    }
    warn_resolution(&drivers.grid, eps);
    let sig = frozen_sigma(cs, eps, ode, &drivers.w1())?;
    accumulate_j(drivers.grid, cs.dim, cs.noise_dim, &sig, &drivers.dw2)
}

/// `dJ = sigma(W1/eps, y(t)) dW2`, `J(0) = 0`, with the slow argument frozen
/// on the deterministic flow.
pub fn simulate_j(
    cs: &CoefficientSet,
    eps: f64,
    ode: &OdeSolution,
    grid: &TimeGrid,
    seed: SeedSpec,
) -> Result<SamplePath> {
    if grid != ode.grid() {
        return invalid("ODE solution must be on the simulation grid");
    }
    simulate_j_with(cs, eps, ode, &Drivers::sample(grid, cs.noise_dim, seed))
}

/// `Z_{k+1} = Z_k + b1(Z_k) h + (J_{k+1} - J_k)`, `Z_0 = y0`.
pub fn simulate_z(cs: &CoefficientSet, j: &SamplePath, y0: &[f64]) -> Result<SamplePath> {
    let d = cs.dim;
    if j.dim != d || y0.len() != d {
        return invalid("J, y0 and coefficients disagree in dimension");
    }
    let grid = j.grid;
    let h = grid.step();
    let mut vals = Vec::with_capacity(grid.len() * d);
    vals.extend_from_slice(y0);
    let mut f = vec![0.0; d];
    for k in 0..grid.n_steps {
        (cs.b1)(&vals[k * d..(k + 1) * d], &mut f);
        for i in 0..d {
            let z = vals[k * d + i] + f[i] * h + (j.get(k + 1, i) - j.get(k, i));
            if !z.is_finite() {
                return Err(Error::BlowUp { index: k + 1 });
            }
            vals.push(z);
        }
    }
    SamplePath::new(grid, d, vals)
}

/// Scaling of a deviation from the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationOrder {
    /// `(Y - y) / sqrt(eps)`
    Half,
    /// `(Y - y) / eps`
    One,
}

pub fn deviation(
    y: &SamplePath,
    ode: &OdeSolution,
    eps: f64,
    order: DeviationOrder,
) -> Result<SamplePath> {
    if y.grid != *ode.grid() || y.dim != ode.dim() {
        return invalid("path and ODE solution live on different grids");
    }
    if !(eps > 0.0) {
        return invalid("eps must be positive");
    }
    let scale = match order {
        DeviationOrder::Half => eps.sqrt(),
        DeviationOrder::One => eps,
    };
    let vals = y
        .values()
        .iter()
        .zip(ode.path.values())
        .map(|(a, b)| (a - b) / scale)
        .collect();
    SamplePath::new(y.grid, y.dim, vals)
}
