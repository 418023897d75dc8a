//! Limit objects: the fractional kinetic process `V(t) = W2(L(t, 0))`,
//! integrals against `V` and against `dL`, the limit deviation `zeta0` and
//! its drift-only and time-changed variants.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::coefficients::{l1_norm_envelope, CoefficientSet, EnvelopeKind};
use crate::deterministic::{
    diffusion_kernel, fundamental_matrix, DiffusionKernel, FundamentalMatrix, OdeSolution,
};
use crate::error::{invalid, Result};
use crate::localtime::{local_time_occupation, LocalTimeCurve};
use crate::paths::{sample_brownian, write_columns_csv, SamplePath, SeedSpec, TimeGrid};
use crate::quadrature::{integrate_vec, truncation_radius, QuadratureSpec};
use crate::timechange::transformed_coefficients;

/// Child-stream tag of the local-time driver.
pub const TAG_BAR_W1: u64 = 11;
/// Child-stream tag of the Brownian motion run on the local-time clock.
pub const TAG_BAR_W2: u64 = 12;

const SNAP_TOL: f64 = 1e-6;

/// `V(t_k) = W2(L(c(t_k), 0))` for a deterministic clock `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FractionalKineticPath {
    pub grid: TimeGrid,
    pub v: SamplePath,
    /// `L(c(t_k), 0)` on the outer grid.
    pub local_time: LocalTimeCurve,
    /// The driving path on its fine grid.
    pub w1: SamplePath,
    /// `W1(c(t_k))` on the outer grid.
    pub w1_clocked: SamplePath,
    pub clock: Vec<f64>,
}

impl FractionalKineticPath {
    pub fn dim(&self) -> usize {
        self.v.dim
    }

    /// Columns `t,V1,...,Vd,L`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        let mut names: Vec<String> = (1..=self.dim()).map(|j| format!("V{j}")).collect();
        let mut cols: Vec<Vec<f64>> = (0..self.dim()).map(|j| self.v.component(j)).collect();
        names.push("L".into());
        cols.push(self.local_time.values().to_vec());
        write_columns_csv(out, comments, &self.grid, &names, &cols)
    }

    fn increments(&self) -> Vec<f64> {
        let d = self.dim();
        (0..self.grid.n_steps)
            .flat_map(|k| (0..d).map(move |i| (k, i)))
            .map(|(k, i)| self.v.get(k + 1, i) - self.v.get(k, i))
            .collect()
    }
}

fn interpolate(values: &[f64], step: f64, at: f64) -> f64 {
    let p = at / step;
    let last = values.len() - 1;
    let nearest = p.round();
    if (p - nearest).abs() <= SNAP_TOL {
        return values[(nearest as usize).min(last)];
    }
    let i = (p.floor() as usize).min(last - 1);
    let frac = p - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Fractional kinetic path on a general nondecreasing clock with
/// `clock[0] = 0`. The driver is simulated on `[0, clock_end]` with
/// `n_steps * m` steps of size at most `h_inner`, so that uniform clocks
/// land on inner nodes.
pub fn fractional_kinetic_on_clock(
    grid: &TimeGrid,
    dim: usize,
    seed: SeedSpec,
    h_inner: f64,
    clock: &[f64],
) -> Result<FractionalKineticPath> {
    if dim == 0 {
        return invalid("dimension must be positive");
    }
    if clock.len() != grid.len() || clock[0] != 0.0 || clock.windows(2).any(|w| !(w[1] >= w[0])) {
        return invalid("clock must start at 0, be nondecreasing and match the grid");
    }
    if !(h_inner > 0.0) || h_inner > grid.step() * (1.0 + 1e-12) {
        return invalid("inner step must be positive and at most the grid step");
    }
    let end = *clock.last().unwrap();
    if !(end > 0.0) || !end.is_finite() {
        return invalid("clock must advance");
    }
    let n = grid.n_steps;
    let m = ((end / (n as f64 * h_inner)) - 1e-9).ceil().max(1.0) as usize;
    let inner = TimeGrid::new(0.0, end, n * m)?;
    let w1 = sample_brownian(&inner, 1, seed.child(TAG_BAR_W1))?;
    let occ = local_time_occupation(&w1, 0.0, inner.step().sqrt())?;

    let l: Vec<f64> = clock
        .iter()
        .map(|c| interpolate(occ.values(), inner.step(), *c))
        .collect();
    let fast: Vec<f64> = clock
        .iter()
        .map(|c| interpolate(w1.values(), inner.step(), *c))
        .collect();
    let mut local_time = LocalTimeCurve::from_values(*grid, 0.0, l)?;
    local_time.bandwidth = occ.bandwidth;

    let mut rng = seed.child(TAG_BAR_W2).rng();
    let mut vals = vec![0.0; grid.len() * dim];
    for k in 0..n {
        let dl = local_time.value(k + 1) - local_time.value(k);
        let s = dl.sqrt();
        for i in 0..dim {
            let z: f64 = StandardNormal.sample(&mut rng);
            vals[(k + 1) * dim + i] = vals[k * dim + i] + s * z;
        }
    }
    Ok(FractionalKineticPath {
        grid: *grid,
        v: SamplePath::new(*grid, dim, vals)?,
        local_time,
        w1,
        w1_clocked: SamplePath::new(*grid, 1, fast)?,
        clock: clock.to_vec(),
    })
}

fn identity_clock(grid: &TimeGrid, scale: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|k| scale * (grid.node(k) - grid.t0))
        .collect()
}

/// `V = W2(L^{W1}(t, 0))` with `L` from occupation at bandwidth `sqrt(h_inner)`.
pub fn sample_v(
    grid: &TimeGrid,
    dim: usize,
    seed: SeedSpec,
    h_inner: f64,
) -> Result<FractionalKineticPath> {
    fractional_kinetic_on_clock(grid, dim, seed, h_inner, &identity_clock(grid, 1.0))
}

/// Forward sum `sum_k phi_k (V_{k+1} - V_k)`.
pub fn integrate_against_v(phi: &[DMatrix<f64>], v: &FractionalKineticPath) -> Result<Vec<f64>> {
    let d = v.dim();
    if phi.len() != v.grid.len() {
        return invalid("integrand and V live on different grids");
    }
    let mut acc = DVector::<f64>::zeros(phi.first().map_or(d, |m| m.nrows()));
    for (k, m) in phi.iter().take(v.grid.n_steps).enumerate() {
        if m.ncols() != d {
            return invalid("integrand columns must match the dimension of V");
        }
        let dv = DVector::from_iterator(d, (0..d).map(|i| v.v.get(k + 1, i) - v.v.get(k, i)));
        acc += m * dv;
    }
    Ok(acc.iter().copied().collect())
}

/// Forward Stieltjes sum `sum_k g_k (L_{k+1} - L_k)`.
pub fn integrate_against_dl(g: &SamplePath, l: &LocalTimeCurve) -> Result<Vec<f64>> {
    if g.grid != l.grid {
        return invalid("integrand and local time live on different grids");
    }
    let mut acc = vec![0.0; g.dim];
    for k in 0..g.grid.n_steps {
        let dl = l.value(k + 1) - l.value(k);
        for (i, a) in acc.iter_mut().enumerate() {
            *a += g.get(k, i) * dl;
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    VariationOfParameters,
    IntegralEquation,
}

/// A limit deviation path with the local time that drove it.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitDeviationPath {
    pub zeta: SamplePath,
    pub construction: Construction,
    pub local_time: Vec<f64>,
}

impl LimitDeviationPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.zeta.grid
    }

    /// Columns `t,zeta1,...,zetad,L`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        let d = self.zeta.dim;
        let mut names: Vec<String> = (1..=d).map(|j| format!("zeta{j}")).collect();
        let mut cols: Vec<Vec<f64>> = (0..d).map(|j| self.zeta.component(j)).collect();
        names.push("L".into());
        cols.push(self.local_time.clone());
        write_columns_csv(out, comments, self.grid(), &names, &cols)
    }
}

/// `zeta_k = Phi(t_k, 0) sum_{j<k} w_j`, where `w_j` is the already
/// back-propagated forcing increment.
fn propagate(
    fm: &FundamentalMatrix,
    forcing: impl Fn(usize) -> DVector<f64>,
) -> Result<SamplePath> {
    let grid = fm.grid;
    let d = fm.dim();
    let mut vals = Vec::with_capacity(grid.len() * d);
    let mut acc = DVector::<f64>::zeros(d);
    vals.extend(std::iter::repeat_n(0.0, d));
    for k in 0..grid.n_steps {
        acc += forcing(k);
        let z = &fm.from_origin[k + 1] * &acc;
        vals.extend(z.iter());
    }
    SamplePath::new(grid, d, vals)
}

fn check_shared_grid(
    kernel: &DiffusionKernel,
    fm: &FundamentalMatrix,
    v: &FractionalKineticPath,
) -> Result<()> {
    if kernel.grid != fm.grid || fm.grid != v.grid {
        return invalid("kernel, fundamental matrix and V must share one grid");
    }
    if kernel.dim() != fm.dim() || v.dim() != kernel.dim() {
        return invalid("kernel, fundamental matrix and V disagree in dimension");
    }
    Ok(())
}

/// `zeta0(t) = sum_{t_k < t} Phi(t, t_k) sqrtA(t_k) (V_{k+1} - V_k)`.
pub fn sample_zeta0(
    kernel: &DiffusionKernel,
    fm: &FundamentalMatrix,
    v: &FractionalKineticPath,
) -> Result<LimitDeviationPath> {
    check_shared_grid(kernel, fm, v)?;
    let d = fm.dim();
    let dv = v.increments();
    let zeta = propagate(fm, |k| {
        let inc = DVector::from_column_slice(&dv[k * d..(k + 1) * d]);
        &fm.to_origin[k] * (&kernel.sqrt_a[k] * inc)
    })?;
    Ok(LimitDeviationPath {
        zeta,
        construction: Construction::VariationOfParameters,
        local_time: v.local_time.values().to_vec(),
    })
}

/// Euler stepping of `dzeta = Db1(y) zeta dt + sqrtA dV`, `zeta(0) = 0`.
pub fn sample_zeta0_stepped(
    kernel: &DiffusionKernel,
    fm: &FundamentalMatrix,
    v: &FractionalKineticPath,
) -> Result<LimitDeviationPath> {
    check_shared_grid(kernel, fm, v)?;
    let d = fm.dim();
    let h = fm.grid.step();
    let dv = v.increments();
    let mut z = DVector::<f64>::zeros(d);
    let mut vals = Vec::with_capacity(fm.grid.len() * d);
    vals.extend(z.iter());
    for k in 0..fm.grid.n_steps {
        let inc = DVector::from_column_slice(&dv[k * d..(k + 1) * d]);
        z = &z + &fm.generator[k] * &z * h + &kernel.sqrt_a[k] * inc;
        vals.extend(z.iter());
    }
    Ok(LimitDeviationPath {
        zeta: SamplePath::new(fm.grid, d, vals)?,
        construction: Construction::IntegralEquation,
        local_time: v.local_time.values().to_vec(),
    })
}

/// `E |zeta0(t_k)|^2 = int_0^t Tr(Phi(t,s) A(s) Phi(t,s)^T) dE L(s, 0)` with
/// `dE L(s, 0) = ds / sqrt(2 pi s)`. The trace is interpolated linearly and
/// integrated exactly against `s^{-1/2}`.
pub fn zeta0_second_moment(
    kernel: &DiffusionKernel,
    fm: &FundamentalMatrix,
    k: usize,
) -> Result<f64> {
    if kernel.grid != fm.grid || k >= fm.grid.len() {
        return invalid("kernel and fundamental matrix must share the grid containing node k");
    }
    let grid = fm.grid;
    let g: Vec<f64> = (0..=k)
        .map(|j| {
            let p = fm.between(k, j);
            (&p * &kernel.a[j] * p.transpose()).trace()
        })
        .collect();
    let mut total = 0.0;
    for j in 0..k {
        let a = grid.node(j) - grid.t0;
        let b = grid.node(j + 1) - grid.t0;
        let i0 = 2.0 * (b.sqrt() - a.sqrt());
        let i1 = 2.0 / 3.0 * (b.powf(1.5) - a.powf(1.5));
        total += g[j] * i0 + (g[j + 1] - g[j]) / (b - a) * (i1 - a * i0);
    }
    Ok(total / (2.0 * std::f64::consts::PI).sqrt())
}

/// Precomputed pieces of the limit for repeated sampling: the fundamental
/// matrix, the kernel and the back-propagated kernel `Phi(t_k,0)^{-1} sqrtA(t_k)`.
#[derive(Clone, Debug)]
pub struct LimitPipeline {
    pub fm: FundamentalMatrix,
    pub kernel: DiffusionKernel,
    weights: Vec<DMatrix<f64>>,
}

impl LimitPipeline {
    pub fn new(cs: &CoefficientSet, ode: &OdeSolution, quad: &QuadratureSpec) -> Result<Self> {
        let fm = fundamental_matrix(cs, ode)?;
        let kernel = diffusion_kernel(cs, ode, quad)?;
        Self::from_parts(fm, kernel)
    }

    pub fn from_parts(fm: FundamentalMatrix, kernel: DiffusionKernel) -> Result<Self> {
        if fm.grid != kernel.grid || fm.dim() != kernel.dim() {
            return invalid("kernel and fundamental matrix must share grid and dimension");
        }
        let weights = fm
            .to_origin
            .iter()
            .zip(&kernel.sqrt_a)
            .map(|(p, s)| p * s)
            .collect();
        Ok(Self {
            fm,
            kernel,
            weights,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.fm.grid
    }

    pub fn zeta(&self, v: &FractionalKineticPath) -> Result<LimitDeviationPath> {
        check_shared_grid(&self.kernel, &self.fm, v)?;
        let d = self.fm.dim();
        let dv = v.increments();
        let zeta = propagate(&self.fm, |k| {
            &self.weights[k] * DVector::from_column_slice(&dv[k * d..(k + 1) * d])
        })?;
        Ok(LimitDeviationPath {
            zeta,
            construction: Construction::VariationOfParameters,
            local_time: v.local_time.values().to_vec(),
        })
    }

    pub fn sample(
        &self,
        seed: SeedSpec,
        h_inner: f64,
    ) -> Result<(FractionalKineticPath, LimitDeviationPath)> {
        let v = sample_v(self.grid(), self.fm.dim(), seed, h_inner)?;
        let z = self.zeta(&v)?;
        Ok((v, z))
    }

    pub fn second_moment(&self, k: usize) -> Result<f64> {
        zeta0_second_moment(&self.kernel, &self.fm, k)
    }
}

/// `B(t_k) = int b2(x, y(t_k)) dx`, back-propagated by `Phi(t_k, 0)^{-1}`.
#[derive(Clone, Debug)]
pub struct DriftLimitPipeline {
    pub fm: FundamentalMatrix,
    pub b_integral: Vec<DVector<f64>>,
    weights: Vec<DVector<f64>>,
}

impl DriftLimitPipeline {
    pub fn new(
        cs: &CoefficientSet,
        fm: FundamentalMatrix,
        ode: &OdeSolution,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        if !cs.sigma_vanishes() {
            return invalid("the drift-only limit needs sigma = 0");
        }
        if fm.grid != *ode.grid() {
            return invalid("fundamental matrix and ODE solution live on different grids");
        }
        let d = cs.dim;
        let b_integral: Vec<DVector<f64>> = if l1_norm_envelope(cs, EnvelopeKind::BHat)? == 0.0 {
            vec![DVector::zeros(d); ode.grid().len()]
        } else {
            let radius = truncation_radius(|x| (cs.b_hat)(x), quad)?;
            (0..ode.grid().len())
                .map(|k| {
                    let y = ode.y(k);
                    integrate_vec(|x, out| (cs.b2)(x, y, out), -radius, radius, d, quad)
                        .map(DVector::from_vec)
                })
                .collect::<Result<_>>()?
        };
        let weights = fm
            .to_origin
            .iter()
            .zip(&b_integral)
            .map(|(p, b)| p * b)
            .collect();
        Ok(Self {
            fm,
            b_integral,
            weights,
        })
    }

    pub fn zeta(&self, l: &LocalTimeCurve) -> Result<LimitDeviationPath> {
        if l.grid != self.fm.grid {
            return invalid("local time and fundamental matrix live on different grids");
        }
        let zeta = propagate(&self.fm, |k| {
            &self.weights[k] * (l.value(k + 1) - l.value(k))
        })?;
        Ok(LimitDeviationPath {
            zeta,
            construction: Construction::VariationOfParameters,
            local_time: l.values().to_vec(),
        })
    }
}

/// `zeta~0(t) = sum_{t_k < t} Phi(t, t_k) B(t_k) (L_{k+1} - L_k)`.
pub fn sample_zeta_tilde0(
    cs: &CoefficientSet,
    fm: &FundamentalMatrix,
    ode: &OdeSolution,
    l: &LocalTimeCurve,
) -> Result<LimitDeviationPath> {
    DriftLimitPipeline::new(cs, fm.clone(), ode, &QuadratureSpec::default())?.zeta(l)
}

/// `s0(t_k) = int_0^{t_k} psi1(y(u))^2 du`: exact multiples of `t` when
/// `psi1` is constant along the flow, trapezoid otherwise.
pub fn limit_clock(cs: &CoefficientSet, ode: &OdeSolution) -> Vec<f64> {
    let grid = ode.grid();
    let sq: Vec<f64> = (0..grid.len())
        .map(|k| (cs.psi1)(ode.y(k)).powi(2))
        .collect();
    if sq.iter().all(|v| *v == sq[0]) {
        return identity_clock(grid, sq[0]);
    }
    let h = grid.step();
    let mut s = Vec::with_capacity(grid.len());
    s.push(0.0);
    for k in 0..grid.n_steps {
        s.push(s[k] + 0.5 * h * (sq[k] + sq[k + 1]));
    }
    s
}

/// Pieces of the time-changed limit: the clock `s0`, and the limit pipeline
/// built from the transformed coefficients.
#[derive(Clone, Debug)]
pub struct CorollaryPipeline {
    pub clock: Vec<f64>,
    pub limit: LimitPipeline,
}

impl CorollaryPipeline {
    pub fn new(cs: &CoefficientSet, ode: &OdeSolution, quad: &QuadratureSpec) -> Result<Self> {
        let transformed = transformed_coefficients(cs)?;
        let fm = fundamental_matrix(cs, ode)?;
        let kernel = diffusion_kernel(&transformed, ode, quad)?;
        Ok(Self {
            clock: limit_clock(cs, ode),
            limit: LimitPipeline::from_parts(fm, kernel)?,
        })
    }

    /// `(X0, V, zeta0)` with `X0(t) = W1(s0(t))` and `V = W2(L^{W1}(s0(t), 0))`.
    pub fn sample(
        &self,
        seed: SeedSpec,
        h_inner: f64,
    ) -> Result<(SamplePath, FractionalKineticPath, LimitDeviationPath)> {
        let grid = *self.limit.grid();
        let v =
            fractional_kinetic_on_clock(&grid, self.limit.fm.dim(), seed, h_inner, &self.clock)?;
        let z = self.limit.zeta(&v)?;
        Ok((v.w1_clocked.clone(), v, z))
    }
}

/// The limit pair of the general system: `X0 = W1(s0(t))` and `zeta0` driven
/// by `V^{X0}` with kernel `sqrt(int sigma sigma^T / (psi1 + psi2)^2 dx)` and
/// drift `Db1(y(t)) zeta0(t)`.
pub fn sample_corollary_pair(
    cs: &CoefficientSet,
    ode: &OdeSolution,
    grid: &TimeGrid,
    seed: SeedSpec,
    h_inner: f64,
) -> Result<(SamplePath, LimitDeviationPath)> {
    if grid != ode.grid() {
        return invalid("ODE solution must be on the requested grid");
    }
    let pipe = CorollaryPipeline::new(cs, ode, &QuadratureSpec::default())?;
    let (x0, _, z) = pipe.sample(seed, h_inner)?;
    Ok((x0, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{build_catalog_entry, Params};
    use crate::deterministic::solve_ode;
    use std::sync::Arc;

    fn entry(name: &str, pairs: &[(&str, f64)]) -> CoefficientSet {
        let p: Params = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        build_catalog_entry(name, &p).unwrap()
    }

    #[test]
    fn v_starts_at_zero_and_moves_only_with_l() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let v = sample_v(&g, 2, SeedSpec::new(3, 1), 1e-4).unwrap();
        assert_eq!(v.v.state(0), &[0.0, 0.0]);
        for k in 0..g.n_steps {
            let dl = v.local_time.value(k + 1) - v.local_time.value(k);
            if dl == 0.0 {
                assert_eq!(v.v.state(k + 1), v.v.state(k));
            }
        }
        assert_eq!(v.w1.grid.n_steps, 10_000);
    }

    #[test]
    fn v_is_deterministic_and_streams_differ() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let a = sample_v(&g, 1, SeedSpec::new(1, 0), 1e-3).unwrap();
        assert_eq!(a, sample_v(&g, 1, SeedSpec::new(1, 0), 1e-3).unwrap());
        assert_ne!(a.v, sample_v(&g, 1, SeedSpec::new(1, 1), 1e-3).unwrap().v);
        assert!(sample_v(&g, 1, SeedSpec::new(1, 0), 0.1).is_err());
    }

    #[test]
    fn integrals_against_v_and_l() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let v = sample_v(&g, 2, SeedSpec::new(5, 0), 1e-3).unwrap();
        let zero = vec![DMatrix::zeros(2, 2); g.len()];
        assert_eq!(integrate_against_v(&zero, &v).unwrap(), vec![0.0, 0.0]);
        let id = vec![DMatrix::identity(2, 2); g.len()];
        let r = integrate_against_v(&id, &v).unwrap();
        assert!((r[0] - v.v.terminal()[0]).abs() < 1e-12);
        assert!(integrate_against_v(&id[..10], &v).is_err());

        let ones = SamplePath::new(g, 3, vec![1.0; g.len() * 3]).unwrap();
        let r = integrate_against_dl(&ones, &v.local_time).unwrap();
        assert!(r
            .iter()
            .all(|x| (x - v.local_time.terminal()).abs() < 1e-12));
        let flat = LocalTimeCurve::from_values(g, 0.0, vec![0.0; g.len()]).unwrap();
        assert_eq!(integrate_against_dl(&ones, &flat).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn stieltjes_against_a_single_atom() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let l: Vec<f64> = (0..g.len())
            .map(|k| if k > 5 { 1.0 } else { 0.0 })
            .collect();
        let l = LocalTimeCurve::from_values(g, 0.0, l).unwrap();
        let s = SamplePath::new(g, 1, g.nodes().collect()).unwrap();
        let r = integrate_against_dl(&s, &l).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zeta0_special_cases_and_constructions_agree() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let quad = QuadratureSpec::default();

        let flat = entry("constant_psi", &[("s", 0.0)]);
        let ode = solve_ode(&flat, &[0.0], &g).unwrap();
        let pipe = LimitPipeline::new(&flat, &ode, &quad).unwrap();
        let (_, z) = pipe.sample(SeedSpec::new(1, 0), 1e-4).unwrap();
        assert!(z.zeta.values().iter().all(|v| *v == 0.0));

        // Db1 = 0, A = 1: zeta0 = V
        let mut unit = CoefficientSet::zero("unit", 1, 1);
        unit.sigma =
            Arc::new(|x, _, o| o[0] = (-x * x / 2.0).exp() / std::f64::consts::PI.sqrt().sqrt());
        unit.sigma_hat_sq = Arc::new(|x| (-x * x).exp() / std::f64::consts::PI.sqrt());
        unit.sigma_hat_sq_l1 = Some(1.0);
        let ode = solve_ode(&unit, &[0.0], &g).unwrap();
        let fm = fundamental_matrix(&unit, &ode).unwrap();
        let kernel = diffusion_kernel(&unit, &ode, &quad).unwrap();
        assert!((kernel.a[0][(0, 0)] - 1.0).abs() < 1e-9);
        let v = sample_v(&g, 1, SeedSpec::new(2, 0), 1e-4).unwrap();
        let z = sample_zeta0(&kernel, &fm, &v).unwrap();
        for k in 0..g.len() {
            assert!((z.zeta.get(k, 0) - v.v.get(k, 0)).abs() < 1e-8);
        }

        let osc = entry("oscillator", &[]);
        let ode = solve_ode(&osc, &[1.0, 0.0], &g).unwrap();
        let fm = fundamental_matrix(&osc, &ode).unwrap();
        let kernel = diffusion_kernel(&osc, &ode, &quad).unwrap();
        let v = sample_v(&g, 2, SeedSpec::new(9, 0), 1e-4).unwrap();
        let a = sample_zeta0(&kernel, &fm, &v).unwrap();
        let b = sample_zeta0_stepped(&kernel, &fm, &v).unwrap();
        let max_dv = (0..g.n_steps)
            .map(|k| {
                (0..2)
                    .map(|i| (v.v.get(k + 1, i) - v.v.get(k, i)).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let gap = a.zeta.sup_distance(&b.zeta).unwrap();
        assert!(gap <= 5.0 * (g.step() + max_dv), "{gap}");
        let pipe = LimitPipeline::from_parts(fm, kernel).unwrap();
        let c = pipe.zeta(&v).unwrap();
        assert!(a.zeta.sup_distance(&c.zeta).unwrap() < 1e-12);
    }

    #[test]
    fn oscillator_second_moment_closed_form() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let osc = entry("oscillator", &[]);
        let ode = solve_ode(&osc, &[1.0, 0.0], &g).unwrap();
        let pipe = LimitPipeline::new(&osc, &ode, &QuadratureSpec::default()).unwrap();
        let m = pipe.second_moment(1000).unwrap();
        assert!((m - 2f64.sqrt()).abs() < 1e-8, "{m}");
    }

    #[test]
    fn drift_only_limit() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let cs = entry("drift_only", &[("dim", 2.0), ("amp", 0.5)]);
        let ode = solve_ode(&cs, &[0.0, 0.0], &g).unwrap();
        let fm = fundamental_matrix(&cs, &ode).unwrap();
        let v = sample_v(&g, 1, SeedSpec::new(4, 0), 1e-4).unwrap();
        let z = sample_zeta_tilde0(&cs, &fm, &ode, &v.local_time).unwrap();
        let c = 0.5 * (2.0 * std::f64::consts::PI).sqrt();
        for k in 0..g.len() {
            assert!((z.zeta.get(k, 0) - c * v.local_time.value(k)).abs() < 1e-9);
        }
        let none = entry("drift_only", &[("amp", 0.0)]);
        let ode = solve_ode(&none, &[0.0], &g).unwrap();
        let fm = fundamental_matrix(&none, &ode).unwrap();
        let z = sample_zeta_tilde0(&none, &fm, &ode, &v.local_time).unwrap();
        assert!(z.zeta.values().iter().all(|v| *v == 0.0));
        let noisy = entry("oscillator", &[]);
        let ode = solve_ode(&noisy, &[1.0, 0.0], &g).unwrap();
        let fm = fundamental_matrix(&noisy, &ode).unwrap();
        assert!(sample_zeta_tilde0(&noisy, &fm, &ode, &v.local_time).is_err());
    }

    #[test]
    fn unit_psi_time_change_matches_the_unit_pipeline() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let cs = entry("oscillator", &[]);
        let ode = solve_ode(&cs, &[1.0, 0.0], &g).unwrap();
        let seed = SeedSpec::new(17, 2);
        let (x0, z) = sample_corollary_pair(&cs, &ode, &g, seed, 1e-4).unwrap();
        let pipe = LimitPipeline::new(&cs, &ode, &QuadratureSpec::default()).unwrap();
        let (v, zt) = pipe.sample(seed, 1e-4).unwrap();
        assert_eq!(z.zeta, zt.zeta);
        assert_eq!(z.local_time, zt.local_time);
        assert_eq!(x0.values(), v.w1_clocked.values());
    }

    #[test]
    fn corollary_clock_and_zero_sigma() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let cs = entry("constant_psi", &[("c", 2.0), ("s", 0.0)]);
        let ode = solve_ode(&cs, &[0.0], &g).unwrap();
        let clock = limit_clock(&cs, &ode);
        assert_eq!(clock[100], 4.0);
        let (x0, z) = sample_corollary_pair(&cs, &ode, &g, SeedSpec::new(1, 0), 1e-3).unwrap();
        assert!(z.zeta.values().iter().all(|v| *v == 0.0));
        assert_eq!(x0.get(0, 0), 0.0);
    }
}
