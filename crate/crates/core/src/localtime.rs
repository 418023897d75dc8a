//! Brownian local time from discrete paths.
//!
//! Normalization is the occupation density one: `int_0^t f(W(s)) ds =
//! int f(x) L(t, x) dx`, so `L(t, 0)` has the law of `|W(t)|`.

use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::deterministic::OdeSolution;
use crate::error::{invalid, Result};
use crate::paths::{write_columns_csv, SamplePath, TimeGrid};
use crate::quadrature::{truncation_radius, QuadratureSpec};
use crate::verify::{Check, VerificationReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTimeMethod {
    Occupation,
    Tanaka,
}

/// `t -> L(t, x)` at one level on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeCurve {
    pub grid: TimeGrid,
    pub level: f64,
    pub method: LocalTimeMethod,
    /// Occupation bandwidth; `None` for Tanaka curves.
    pub bandwidth: Option<f64>,
    values: Vec<f64>,
    /// Terminal value before the monotone envelope (Tanaka only; equals the
    /// curve's terminal value for occupation curves).
    pub raw_terminal: f64,
}

impl LocalTimeCurve {
    /// A curve from explicit values, which must start at 0 and never decrease.
    pub fn from_values(grid: TimeGrid, level: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid("one local-time value per grid node required");
        }
        if values[0] != 0.0 || values.windows(2).any(|w| !(w[1] >= w[0])) {
            return invalid("local time must start at 0 and be nondecreasing");
        }
        let raw_terminal = *values.last().unwrap();
        Ok(Self {
            grid,
            level,
            method: LocalTimeMethod::Occupation,
            bandwidth: None,
            values,
            raw_terminal,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, extra: &[String]) -> io::Result<()> {
        let mut comments = extra.to_vec();
        let method = match self.method {
            LocalTimeMethod::Occupation => "occupation",
            LocalTimeMethod::Tanaka => "tanaka",
        };
        let mut line = format!("method={method} x={}", self.level);
        if let Some(d) = self.bandwidth {
            line.push_str(&format!(" delta={d}"));
        }
        comments.push(line);
        write_columns_csv(
            out,
            &comments,
            &self.grid,
            &["L".to_string()],
            &[self.values.clone()],
        )
    }
}

fn scalar_path(path: &SamplePath) -> Result<&[f64]> {
    if path.dim != 1 {
        return invalid(format!(
            "local time needs a scalar path, got dimension {}",
            path.dim
        ));
    }
    Ok(path.values())
}

/// `L(t_k, x) = sum_{j<k} h 1{|W_j - x| <= delta} / (2 delta)`.
pub fn local_time_occupation(path: &SamplePath, x: f64, delta: f64) -> Result<LocalTimeCurve> {
    let w = scalar_path(path)?;
    if !(delta > 0.0) {
        return invalid("bandwidth must be positive");
    }
    let grid = path.grid;
    let inc = grid.step() / (2.0 * delta);
    let mut values = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    values.push(0.0);
    for wk in &w[..grid.n_steps] {
        if (wk - x).abs() <= delta {
            acc += inc;
        }
        values.push(acc);
    }
    Ok(LocalTimeCurve {
        grid,
        level: x,
        method: LocalTimeMethod::Occupation,
        bandwidth: Some(delta),
        raw_terminal: acc,
        values,
    })
}

/// Occupation estimate with the default bandwidth `sqrt(h)`.
pub fn local_time_occupation_default(path: &SamplePath, x: f64) -> Result<LocalTimeCurve> {
    local_time_occupation(path, x, path.grid.step().sqrt())
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Raw Tanaka functional `|W(t) - x| - |W(0) - x| - sum sgn(W_j - x) dW_j`
/// at every node.
pub fn tanaka_raw(path: &SamplePath, x: f64) -> Result<Vec<f64>> {
    let w = scalar_path(path)?;
    let start = (w[0] - x).abs();
    let mut stoch = 0.0;
    let mut raw = Vec::with_capacity(w.len());
    raw.push(0.0);
    for k in 0..w.len() - 1 {
        stoch += sgn(w[k] - x) * (w[k + 1] - w[k]);
        raw.push((w[k + 1] - x).abs() - start - stoch);
    }
    Ok(raw)
}

/// Tanaka estimate, made nondecreasing by a running maximum floored at 0.
pub fn local_time_tanaka(path: &SamplePath, x: f64) -> Result<LocalTimeCurve> {
    let raw = tanaka_raw(path, x)?;
    let raw_terminal = *raw.last().unwrap();
    let mut m = 0.0_f64;
    let values = raw
        .into_iter()
        .map(|v| {
            m = m.max(v);
            m
        })
        .collect();
    Ok(LocalTimeCurve {
        grid: path.grid,
        level: x,
        method: LocalTimeMethod::Tanaka,
        bandwidth: None,
        values,
        raw_terminal,
    })
}

/// Both sides of the occupation identity at the terminal time.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupationSides {
    pub lhs: DMatrix<f64>,
    pub rhs: DMatrix<f64>,
}

impl OccupationSides {
    pub fn relative_discrepancy(&self) -> f64 {
        let scale = self.lhs.norm().max(self.rhs.norm());
        if scale == 0.0 {
            0.0
        } else {
            (&self.lhs - &self.rhs).norm() / scale
        }
    }
}

/// Left side `eps^{-1} sum_k h (sigma sigma^T)(W_k / eps, y_k)` and right side
/// `int dx sum_k (sigma sigma^T)(x, y_k) dL_k(eps x)`, the latter with
/// occupation curves of bandwidth `delta` on a trapezoid grid of levels.
pub fn occupation_sides(
    path: &SamplePath,
    cs: &CoefficientSet,
    ode: &OdeSolution,
    eps: f64,
    delta: f64,
) -> Result<OccupationSides> {
    let w = scalar_path(path)?;
    if path.grid != *ode.grid() {
        return invalid("path and ODE solution live on different grids");
    }
    if !(eps > 0.0) || !(delta > 0.0) {
        return invalid("eps and delta must be positive");
    }
    let d = cs.dim;
    let grid = path.grid;
    let h = grid.step();
    let mut sig = vec![0.0; d * cs.noise_dim];
    let mut m = vec![0.0; d * d];

    let mut lhs = vec![0.0; d * d];
    for k in 0..grid.n_steps {
        cs.sigma_outer(w[k] / eps, ode.y(k), &mut sig, &mut m);
        for (a, b) in lhs.iter_mut().zip(&m) {
            *a += h * b / eps;
        }
    }

    // Levels x_j = -R + j dx. The curve at level eps x_j only moves at steps
    // with |W_k - eps x_j| <= delta, so each step touches a short window of
    // levels; this is the Stieltjes sum organised by time instead of level.
    let quad = QuadratureSpec::default();
    let radius = if cs.sigma_vanishes() {
        1.0
    } else {
        truncation_radius(|x| (cs.sigma_hat_sq)(x), &quad)?
    };
    let n_levels = ((2.0 * radius) / (delta / (16.0 * eps))).ceil() as usize;
    let dx = 2.0 * radius / n_levels as f64;
    let jump = h / (2.0 * delta);
    let mut rhs = vec![0.0; d * d];
    for k in 0..grid.n_steps {
        let centre = w[k] / eps;
        let half = delta / eps;
        let lo = (((centre - half) + radius) / dx).ceil().max(0.0) as usize;
        let hi_f = ((centre + half) + radius) / dx;
        if hi_f < 0.0 {
            continue;
        }
        let hi = (hi_f.floor() as usize).min(n_levels);
        for j in lo..=hi {
            let x = -radius + j as f64 * dx;
            if (w[k] - eps * x).abs() > delta {
                continue;
            }
            let weight = if j == 0 || j == n_levels {
                0.5 * dx
            } else {
                dx
            };
            cs.sigma_outer(x, ode.y(k), &mut sig, &mut m);
            for (a, b) in rhs.iter_mut().zip(&m) {
                *a += weight * jump * b;
            }
        }
    }
    Ok(OccupationSides {
        lhs: DMatrix::from_row_slice(d, d, &lhs),
        rhs: DMatrix::from_row_slice(d, d, &rhs),
    })
}

/// Relative Frobenius discrepancy between the two sides of the occupation
/// identity, with bandwidth `sqrt(h)`, plus the change of the right side when
/// the bandwidth is halved.
pub fn occupation_identity_check(
    path: &SamplePath,
    cs: &CoefficientSet,
    ode: &OdeSolution,
    eps: f64,
) -> Result<VerificationReport> {
    occupation_identity_check_with(path, cs, ode, eps, path.grid.step().sqrt(), 0.05)
}

pub fn occupation_identity_check_with(
    path: &SamplePath,
    cs: &CoefficientSet,
    ode: &OdeSolution,
    eps: f64,
    delta: f64,
    tol: f64,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("occupation_identity");
    report.param("eps", eps);
    report.param("delta", delta);
    report.param("h", path.grid.step());
    report.provenance.grid = Some(path.grid);
    let sides = occupation_sides(path, cs, ode, eps, delta)?;
    let halved = occupation_sides(path, cs, ode, eps, 0.5 * delta)?;
    let disc = sides.relative_discrepancy();
    let scale = sides.rhs.norm();
    let shift = if scale == 0.0 {
        0.0
    } else {
        (&halved.rhs - &sides.rhs).norm() / scale
    };
    report.push_estimate("lhs_norm", sides.lhs.norm(), 0.0);
    report.push_estimate("rhs_norm", sides.rhs.norm(), 0.0);
    report.push_estimate("relative_discrepancy", disc, 0.0);
    report.push_estimate("rhs_shift_half_delta", shift, 0.0);
    report
        .checks
        .push(Check::at_most("relative_discrepancy", disc, tol));
    report
        .checks
        .push(Check::at_most("rhs_shift_half_delta", shift, tol));
    report.finish();
    Ok(report)
}
