//! The unperturbed flow `dy/dt = b1(y)`, its fundamental matrix and the
//! spatially integrated diffusion kernel `A(s) = int (sigma sigma^T)(x, y(s)) dx`.

use std::io::{self, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::error::{invalid, Error, Result};
use crate::paths::{write_columns_csv, SamplePath, TimeGrid};
use crate::quadrature::{integrate_vec, truncation_radius, QuadratureSpec};

/// RK4 trajectory of the unperturbed ODE.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeSolution {
    pub path: SamplePath,
}

impl OdeSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.path.grid
    }

    pub fn dim(&self) -> usize {
        self.path.dim
    }

    pub fn y(&self, k: usize) -> &[f64] {
        self.path.state(k)
    }

    pub fn y0(&self) -> &[f64] {
        self.path.state(0)
    }

    /// Largest residual of `y(t) - y0 - int_0^t b1(y(s)) ds` over the nodes,
    /// with the integral taken by the end-corrected trapezoidal rule
    /// (`-h^2/12 [f']`), which is fourth order for smooth `b1`.
    pub fn residual(&self, cs: &CoefficientSet) -> f64 {
        let d = self.dim();
        let h = self.grid().step();
        let mut f = vec![vec![0.0; d]; self.grid().len()];
        let mut fdot = vec![vec![0.0; d]; self.grid().len()];
        let mut jac = vec![0.0; d * d];
        for k in 0..self.grid().len() {
            (cs.b1)(self.y(k), &mut f[k]);
            (cs.db1)(self.y(k), &mut jac);
            for i in 0..d {
                fdot[k][i] = (0..d).map(|j| jac[i * d + j] * f[k][j]).sum();
            }
        }
        let mut integral = vec![0.0; d];
        let mut worst = 0.0_f64;
        for k in 1..self.grid().len() {
            for i in 0..d {
                integral[i] += 0.5 * h * (f[k - 1][i] + f[k][i]);
                let corrected = integral[i] - h * h / 12.0 * (fdot[k][i] - fdot[0][i]);
                let r = self.y(k)[i] - self.y0()[i] - corrected;
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

fn rk4_step(cs: &CoefficientSet, y: &[f64], h: f64, out: &mut [f64], ks: &mut [Vec<f64>; 5]) {
    let d = y.len();
    let [k1, k2, k3, k4, tmp] = ks;
    (cs.b1)(y, k1);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    (cs.b1)(tmp, k2);
    for i in 0..d {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    (cs.b1)(tmp, k3);
    for i in 0..d {
        tmp[i] = y[i] + h * k3[i];
    }
    (cs.b1)(tmp, k4);
    for i in 0..d {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Classical RK4 with the grid step.
pub fn solve_ode(cs: &CoefficientSet, y0: &[f64], grid: &TimeGrid) -> Result<OdeSolution> {
    let d = cs.dim;
    if y0.len() != d {
        return invalid(format!(
            "y0 has dimension {}, coefficients have {d}",
            y0.len()
        ));
    }
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.len() * d);
    values.extend_from_slice(y0);
    let mut ks: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; d]);
    let mut next = vec![0.0; d];
    for k in 0..grid.n_steps {
        rk4_step(cs, &values[k * d..(k + 1) * d], h, &mut next, &mut ks);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { index: k + 1 });
        }
        values.extend_from_slice(&next);
    }
    Ok(OdeSolution {
        path: SamplePath::new(*grid, d, values)?,
    })
}

/// `Phi(t_k, 0)` for the linearization `dPhi/dt = Db1(y(t)) Phi`, together
/// with its inverses so that `Phi(t, s) = Phi(t, 0) Phi(s, 0)^{-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalMatrix {
    pub grid: TimeGrid,
    /// `Phi(t_k, 0)`.
    pub from_origin: Vec<DMatrix<f64>>,
    /// `Phi(t_k, 0)^{-1}`.
    pub to_origin: Vec<DMatrix<f64>>,
    /// `Db1(y(t_k))`.
    pub generator: Vec<DMatrix<f64>>,
}

impl FundamentalMatrix {
    pub fn dim(&self) -> usize {
        self.from_origin[0].nrows()
    }

    /// `Phi(t_k, t_j)` for `j <= k`; exactly the identity when `j == k`.
    pub fn between(&self, k: usize, j: usize) -> DMatrix<f64> {
        if k == j {
            return DMatrix::identity(self.dim(), self.dim());
        }
        &self.from_origin[k] * &self.to_origin[j]
    }
}

/// Joint RK4 for `(y, Phi)`; the flow is re-integrated so the stage values
/// of `Db1(y)` are consistent with the trajectory in `ode`.
pub fn fundamental_matrix(cs: &CoefficientSet, ode: &OdeSolution) -> Result<FundamentalMatrix> {
    let d = cs.dim;
    if ode.dim() != d {
        return invalid("ODE solution and coefficients differ in dimension");
    }
    let grid = *ode.grid();
    let h = grid.step();
    let jac_at = |y: &[f64]| {
        let mut buf = vec![0.0; d * d];
        (cs.db1)(y, &mut buf);
        DMatrix::from_row_slice(d, d, &buf)
    };
    let mut from_origin = Vec::with_capacity(grid.len());
    let mut generator = Vec::with_capacity(grid.len());
    let mut y = ode.y0().to_vec();
    let mut phi = DMatrix::<f64>::identity(d, d);
    let mut ks: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; d]);
    let mut y_next = vec![0.0; d];
    let mut mid = vec![0.0; d];
    generator.push(jac_at(&y));
    from_origin.push(phi.clone());
    for k in 0..grid.n_steps {
        // Stage states of the y-integration.
        let mut k1 = vec![0.0; d];
        (cs.b1)(&y, &mut k1);
        let mut k2 = vec![0.0; d];
        for i in 0..d {
            mid[i] = y[i] + 0.5 * h * k1[i];
        }
        let y2 = mid.clone();
        (cs.b1)(&y2, &mut k2);
        for i in 0..d {
            mid[i] = y[i] + 0.5 * h * k2[i];
        }
        let y3 = mid.clone();
        let mut k3 = vec![0.0; d];
        (cs.b1)(&y3, &mut k3);
        for i in 0..d {
            mid[i] = y[i] + h * k3[i];
        }
        let y4 = mid.clone();

        let m1 = jac_at(&y) * &phi;
        let m2 = jac_at(&y2) * (&phi + &m1 * (0.5 * h));
        let m3 = jac_at(&y3) * (&phi + &m2 * (0.5 * h));
        let m4 = jac_at(&y4) * (&phi + &m3 * h);
        phi += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (h / 6.0);

        rk4_step(cs, &y, h, &mut y_next, &mut ks);
        y.copy_from_slice(&y_next);
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { index: k + 1 });
        }
        generator.push(jac_at(ode.y(k + 1)));
        from_origin.push(phi.clone());
    }
    let to_origin = from_origin
        .iter()
        .enumerate()
        .map(|(k, m)| {
            m.clone()
                .try_inverse()
                .ok_or_else(|| Error::NumericalDegeneracy(format!("Phi(t_{k}, 0) is singular")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FundamentalMatrix {
        grid,
        from_origin,
        to_origin,
        generator,
    })
}

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

/// Principal square root of a symmetric positive semidefinite matrix by
/// spectral decomposition. Eigenvalues in `[-1e-10 scale, 0)` are clamped
/// to zero; anything more negative is an error.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return invalid("square root of a non-square matrix");
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NumericalDegeneracy(format!(
            "matrix is not symmetric (defect {asym:e})"
        )));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < -PSD_TOL * scale {
        return Err(Error::NumericalDegeneracy(format!(
            "matrix is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&root + root.transpose()) * 0.5)
}

/// `A(t_k)` and `sqrt(A(t_k))` along the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionKernel {
    pub grid: TimeGrid,
    pub a: Vec<DMatrix<f64>>,
    pub sqrt_a: Vec<DMatrix<f64>>,
}

impl DiffusionKernel {
    pub fn from_matrices(grid: TimeGrid, a: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.len() != grid.len() {
            return invalid("one kernel matrix per grid node required");
        }
        let sqrt_a = a.iter().map(psd_sqrt).collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, a, sqrt_a })
    }

    pub fn dim(&self) -> usize {
        self.a[0].nrows()
    }

    /// Columns: `t`, row-major entries of `A`, row-major entries of `sqrt(A)`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        let d = self.dim();
        let mut names = Vec::new();
        let mut cols = Vec::new();
        for (prefix, mats) in [("A", &self.a), ("sqrtA", &self.sqrt_a)] {
            for i in 0..d {
                for j in 0..d {
                    names.push(format!("{prefix}_{}{}", i + 1, j + 1));
                    cols.push(mats.iter().map(|m| m[(i, j)]).collect());
                }
            }
        }
        write_columns_csv(out, comments, &self.grid, &names, &cols)
    }
}

/// `A(t_k) = int (sigma sigma^T)(x, y(t_k)) dx` by adaptive quadrature over
/// `[-R, R]`, where `R` discards less than `quad.tail_tol` of the mass of
/// `sigma_hat_sq`.
pub fn diffusion_kernel(
    cs: &CoefficientSet,
    ode: &OdeSolution,
    quad: &QuadratureSpec,
) -> Result<DiffusionKernel> {
    let d = cs.dim;
    let r = cs.noise_dim;
    let radius = truncation_radius(|x| (cs.sigma_hat_sq)(x), quad)?;
    let a = (0..ode.grid().len())
        .into_par_iter()
        .map(|k| {
            let y = ode.y(k);
            let mut sig = vec![0.0; d * r];
            let v = integrate_vec(
                |x, out| cs.sigma_outer(x, y, &mut sig, out),
                -radius,
                radius,
                d * d,
                quad,
            )?;
            Ok(DMatrix::from_row_slice(d, d, &v))
        })
        .collect::<Result<Vec<_>>>()?;
    DiffusionKernel::from_matrices(*ode.grid(), a)
}
