//! The random clock `s(t) = int_0^t (psi1(Y) + psi2(X, Y))^2 du` and the
//! transformed coefficients that turn the general system into the unit one.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{l1_norm_envelope, CoefficientSet, EnvelopeKind};
use crate::deterministic::{solve_ode, OdeSolution};
use crate::error::{invalid, Result};
use crate::paths::{write_columns_csv, SeedSpec, TimeGrid};
use crate::sde::{simulate_pair_with, CoupledTrajectory, Drivers, EpsilonSchedule};
use crate::stats::mean_se;
use crate::verify::{Check, Provenance, VerificationReport};

const SLOPE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeChange {
    pub grid: TimeGrid,
    pub s_of_t: Vec<f64>,
    /// `[c1^2, c2^2]`.
    pub slope_bounds: [f64; 2],
    /// Steps whose slope left the bounds.
    pub violations: usize,
}

impl TimeChange {
    /// Cumulative trapezoid of a nonnegative integrand given at the nodes.
    pub fn from_integrand(grid: TimeGrid, integrand: &[f64], c1: f64, c2: f64) -> Result<Self> {
        if integrand.len() != grid.len() {
            return invalid("one integrand value per node required");
        }
        let h = grid.step();
        let mut s = Vec::with_capacity(grid.len());
        s.push(0.0);
        let (lo, hi) = (c1 * c1, c2 * c2);
        let mut violations = 0;
        for k in 0..grid.n_steps {
            let ds = 0.5 * h * (integrand[k] + integrand[k + 1]);
            let slope = ds / h;
            if slope < lo * (1.0 - SLOPE_TOL) || slope > hi * (1.0 + SLOPE_TOL) {
                violations += 1;
            }
            s.push(s[k] + ds);
        }
        Ok(Self {
            grid,
            s_of_t: s,
            slope_bounds: [lo, hi],
            violations,
        })
    }

    /// `t(s)` by piecewise-linear inversion; exact at the breakpoints.
    pub fn t_of_s(&self, s: f64) -> f64 {
        let v = &self.s_of_t;
        if s <= v[0] {
            return self.grid.t0;
        }
        let n = self.grid.n_steps;
        if s >= v[n] {
            return self.grid.t_end;
        }
        let i = v.partition_point(|x| *x <= s) - 1;
        if v[i] == s {
            return self.grid.node(i);
        }
        let frac = (s - v[i]) / (v[i + 1] - v[i]);
        self.grid.node(i) + frac * self.grid.step()
    }

    /// Flags steps whose slope left `[c1^2, c2^2]`.
    pub fn report(&self) -> VerificationReport {
        let mut r = VerificationReport::new("time_change_slopes");
        r.provenance.grid = Some(self.grid);
        r.push_estimate("violations", self.violations as f64, 0.0);
        r.checks.push(Check::at_most(
            "slope_violations",
            self.violations as f64,
            0.0,
        ));
        r.finish();
        r
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        write_columns_csv(
            out,
            comments,
            &self.grid,
            &["s".to_string()],
            &[self.s_of_t.clone()],
        )
    }
}

pub fn compute_time_change(traj: &CoupledTrajectory, cs: &CoefficientSet) -> Result<TimeChange> {
    cs.validate()?;
    if traj.y.dim != cs.dim {
        return invalid("trajectory and coefficients disagree in dimension");
    }
    let g: Vec<f64> = (0..traj.grid.len())
        .map(|k| cs.psi_sum(traj.x.get(k, 0), traj.y.state(k)).powi(2))
        .collect();
    TimeChange::from_integrand(traj.grid, &g, cs.c1, cs.c2)
}

/// `b~ = b2 / (psi1 + psi2)^2`, `sigma~ = sigma / (psi1 + psi2)`, `psi ≡ 1`.
/// The envelopes of `|b~|` and `Tr sigma~ sigma~^T` are the old ones divided
/// by `c1^2`. Lipschitz constants are carried over unchanged and are only
/// meaningful for constant `psi`.
pub fn transformed_coefficients(cs: &CoefficientSet) -> Result<CoefficientSet> {
    cs.validate()?;
    l1_norm_envelope(cs, EnvelopeKind::SigmaHatSq)?;
    let c1sq = cs.c1 * cs.c1;
    let mut out = cs.clone();
    out.name = format!("{}~", cs.name);
    let (b2, psi1, psi2) = (cs.b2.clone(), cs.psi1.clone(), cs.psi2.clone());
    out.b2 = Arc::new(move |x, y, o| {
        b2(x, y, o);
        let phi = psi1(y) + psi2(x, y);
        let q = phi * phi;
        for v in o.iter_mut() {
            *v /= q;
        }
    });
    let (sigma, psi1, psi2) = (cs.sigma.clone(), cs.psi1.clone(), cs.psi2.clone());
    out.sigma = Arc::new(move |x, y, o| {
        sigma(x, y, o);
        let phi = psi1(y) + psi2(x, y);
        for v in o.iter_mut() {
            *v /= phi;
        }
    });
    let (bh, sh) = (cs.b_hat.clone(), cs.sigma_hat_sq.clone());
    out.b_hat = Arc::new(move |x| bh(x) / c1sq);
    out.sigma_hat_sq = Arc::new(move |x| sh(x) / c1sq);
    out.b_hat_l1 = cs.b_hat_l1.map(|v| v / c1sq);
    out.sigma_hat_sq_l1 = cs.sigma_hat_sq_l1.map(|v| v / c1sq);
    out.psi1 = Arc::new(|_| 1.0);
    out.psi2 = Arc::new(|_, _| 0.0);
    out.c1 = 1.0;
    out.c2 = 1.0;
    Ok(out)
}

/// Trapezoid of `psi1(y)^2` along the flow.
pub fn deterministic_clock(cs: &CoefficientSet, ode: &OdeSolution) -> Vec<f64> {
    let grid = ode.grid();
    let h = grid.step();
    let g: Vec<f64> = (0..grid.len())
        .map(|k| (cs.psi1)(ode.y(k)).powi(2))
        .collect();
    let mut s = vec![0.0; grid.len()];
    for k in 0..grid.n_steps {
        s[k + 1] = s[k] + 0.5 * h * (g[k] + g[k + 1]);
    }
    s
}

/// `E sup_t |s^eps(t) - s0(t)|^2` per `eps` on common random numbers, with a
/// check that it decreases along the schedule (within two combined standard
/// errors). The flow is re-solved on each `eps` grid from `ode`'s initial
/// state up to its horizon.
pub fn verify_timechange_limit(
    cs: &CoefficientSet,
    ode: &OdeSolution,
    schedule: &EpsilonSchedule,
    n_paths: usize,
    master_seed: u64,
) -> Result<VerificationReport> {
    cs.validate()?;
    if n_paths < 2 {
        return invalid("need at least two paths");
    }
    let t_end = ode.grid().t_end;
    let y0 = ode.y0().to_vec();
    let (fine, strides) = schedule.common_grid(t_end - ode.grid().t0, 1)?;
    let flows = strides
        .iter()
        .map(|s| {
            let g = fine.coarsen(*s)?;
            let o = solve_ode(cs, &y0, &g)?;
            let s0 = deterministic_clock(cs, &o);
            Ok((o, s0))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_path: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let seed = SeedSpec::new(master_seed, p as u64);
            let drivers = Drivers::sample(&fine, cs.noise_dim, seed);
            schedule
                .values
                .iter()
                .zip(&strides)
                .zip(&flows)
                .map(|((eps, stride), (_, s0))| {
                    let dr = drivers.coarsen(*stride)?;
                    let (x, y) = simulate_pair_with(cs, *eps, 0.0, &y0, &dr)?;
                    let traj = CoupledTrajectory {
                        grid: dr.grid,
                        x,
                        y,
                        eps: *eps,
                        w1_seed: seed,
                        w2_seed: seed,
                    };
                    let tc = compute_time_change(&traj, cs)?;
                    Ok(tc
                        .s_of_t
                        .iter()
                        .zip(s0)
                        .map(|(a, b)| (a - b) * (a - b))
                        .fold(0.0, f64::max))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut report = VerificationReport::new("timechange_limit");
    report.param("coefficients", cs.name.clone());
    report.param("eps", schedule.values.clone());
    report.param("n_paths", n_paths);
    report.provenance = Provenance {
        master_seed: Some(master_seed),
        grid: Some(fine),
        n_paths: Some(n_paths),
    };
    let mut stats = Vec::new();
    for (i, eps) in schedule.values.iter().enumerate() {
        let col: Vec<f64> = per_path.iter().map(|r| r[i]).collect();
        let (m, se) = mean_se(&col);
        report.push_estimate(format!("eps={eps}"), m, se);
        stats.push((m, se));
    }
    for w in stats.windows(2) {
        let slack = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt() + 1e-20;
        report
            .checks
            .push(Check::at_most("decreasing", w[1].0, w[0].0 + slack));
    }
    report.finish();
    Ok(report)
}
