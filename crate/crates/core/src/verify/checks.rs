use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::deterministic::{solve_ode, OdeSolution};
use crate::error::{invalid, Result};
use crate::limit::{sample_v, CorollaryPipeline, DriftLimitPipeline, LimitPipeline};
use crate::localtime::{local_time_occupation_default, tanaka_raw};
use crate::paths::{gaussian_increments, sample_brownian, SeedSpec, TimeGrid};
use crate::quadrature::QuadratureSpec;
use crate::sde::{
    accumulate_j, deviation, frozen_sigma, simulate_j_with, simulate_y_with, simulate_z,
    DeviationOrder, Drivers, EpsilonSchedule, TAG_W1, TAG_W2,
};
use crate::stats::{
    ks_critical_value, ks_two_sample, loglog_fit, mean_se, pairwise_sum, EmpiricalLaw,
};

use super::report::{Check, Provenance, VerificationReport};

/// Child-stream tag separating limit samples from prelimit samples.
pub const TAG_LIMIT: u64 = 21;

/// Times used for the `sqrt(t)` scaling regressions.
pub const SCALING_TIMES: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

fn par_paths<T, F>(n_paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..n_paths).into_par_iter().map(f).collect()
}

fn node_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    let k = grid.nearest_index(t);
    if (grid.node(k) - t).abs() > 1e-9 * grid.span().max(1.0) {
        return invalid(format!(
            "time {t} is not a node of the grid with step {}",
            grid.step()
        ));
    }
    Ok(k)
}

fn provenance(master_seed: u64, grid: TimeGrid, n_paths: usize) -> Provenance {
    Provenance {
        master_seed: Some(master_seed),
        grid: Some(grid),
        n_paths: Some(n_paths),
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Flows re-solved on every coarsened grid of the schedule.
fn flows_on(
    cs: &CoefficientSet,
    y0: &[f64],
    fine: &TimeGrid,
    strides: &[usize],
) -> Result<Vec<OdeSolution>> {
    strides
        .iter()
        .map(|s| solve_ode(cs, y0, &fine.coarsen(*s)?))
        .collect()
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

fn decreasing_checks(report: &mut VerificationReport, name: &str, stats: &[(f64, f64)]) {
    for w in stats.windows(2) {
        let slack = 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt() + 1e-24;
        report
            .checks
            .push(Check::at_most(name, w[1].0, w[0].0 + slack));
    }
}

fn abs_moment_of_normal(p: u32) -> f64 {
    // E|Z|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi)
    let pf = p as f64;
    2f64.powf(pf / 2.0) * statrs::function::gamma::gamma((pf + 1.0) / 2.0)
        / std::f64::consts::PI.sqrt()
}

/// Moments of `eps^{-1} int_0^t psi(W(r) / eps) dr` along the schedule.
///
/// The small-`eps` limit is `|psi|_1 L(t, 0)`, whose `p`-th moment is
/// `|psi|_1^p t^{p/2} E|Z|^p`. The bias at finite `eps` is first order, so
/// the limit is estimated by linear extrapolation in `eps` from the two
/// smallest values on common random numbers. Checks: the extrapolated
/// moment at `t` within 5% of the closed form, uniform boundedness along the
/// schedule (largest over smallest at most 2), and `t`-slope `p/2 +- 0.1 p`
/// over [`SCALING_TIMES`].
#[allow(clippy::too_many_arguments)]
pub fn check_lemma_l1_bound(
    psi: &(dyn Fn(f64) -> f64 + Sync),
    psi_l1: f64,
    t: f64,
    p: u32,
    schedule: &EpsilonSchedule,
    n_paths: usize,
    master_seed: u64,
) -> Result<VerificationReport> {
    if !(t > 0.0) || !matches!(p, 1 | 2 | 4) || n_paths < 2 {
        return invalid("need t > 0, p in {1, 2, 4} and at least two paths");
    }
    let mut times: Vec<f64> = SCALING_TIMES.to_vec();
    if !times.contains(&t) {
        times.push(t);
    }
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let (fine, strides) = schedule.common_grid(t_end, 8)?;
    let grids: Vec<TimeGrid> = strides
        .iter()
        .map(|s| fine.coarsen(*s))
        .collect::<Result<_>>()?;
    let idx: Vec<Vec<usize>> = grids
        .iter()
        .map(|g| times.iter().map(|t| node_index(g, *t)).collect())
        .collect::<Result<_>>()?;
    let t_pos = times.iter().position(|x| *x == t).unwrap();

    // per path: [eps][time] -> I
    let samples = par_paths(n_paths, |k| {
        let seed = SeedSpec::new(master_seed, k as u64).child(TAG_W1);
        let dw = gaussian_increments(&fine, 1, seed);
        Ok(schedule
            .values
            .iter()
            .enumerate()
            .map(|(e, eps)| {
                let stride = strides[e];
                let g = &grids[e];
                let h = g.step();
                let mut w = 0.0;
                let mut acc = 0.0;
                let mut at = vec![0.0; g.len()];
                let wanted = &idx[e];
                let mut out = vec![0.0; times.len()];
                let last = *wanted.iter().max().unwrap();
                for j in 0..last {
                    acc += h * psi(w / eps) / eps;
                    at[j + 1] = acc;
                    w += dw[j * stride..(j + 1) * stride].iter().sum::<f64>();
                }
                for (o, i) in out.iter_mut().zip(wanted) {
                    *o = at[*i];
                }
                out
            })
            .collect::<Vec<_>>())
    })?;

    let mut report = VerificationReport::new("lemma_l1_bound");
    report.param("t", t);
    report.param("p", p);
    report.param("psi_l1", psi_l1);
    report.param("eps", schedule.values.clone());
    report.provenance = provenance(master_seed, fine, n_paths);

    let pf = p as i32;
    let n_eps = schedule.len();
    let mut at_t = Vec::new();
    for (e, eps) in schedule.values.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().map(|s| s[e][t_pos].powi(pf)).collect();
        let (m, se) = mean_se(&vals);
        report.push_estimate(format!("eps={eps}"), m, se);
        at_t.push(m);
    }
    // Extrapolation to eps = 0 per time.
    let extrapolated: Vec<(f64, f64)> = (0..times.len())
        .map(|ti| {
            let vals: Vec<f64> = samples
                .iter()
                .map(|s| {
                    if n_eps == 1 {
                        s[0][ti].powi(pf)
                    } else {
                        let (ea, eb) = (schedule.values[n_eps - 2], schedule.values[n_eps - 1]);
                        let (ma, mb) = (s[n_eps - 2][ti].powi(pf), s[n_eps - 1][ti].powi(pf));
                        (ea * mb - eb * ma) / (ea - eb)
                    }
                })
                .collect();
            mean_se(&vals)
        })
        .collect();
    for (ti, tt) in times.iter().enumerate() {
        report.push_estimate(
            format!("limit t={tt}"),
            extrapolated[ti].0,
            extrapolated[ti].1,
        );
    }

    let target = psi_l1.powi(pf) * t.powf(p as f64 / 2.0) * abs_moment_of_normal(p);
    report.push_estimate("target", target, 0.0);
    let lim = extrapolated[t_pos].0;
    report.checks.push(Check::within(
        "limit",
        lim,
        target,
        (0.05 * target).max(1e-12),
    ));

    let hi = at_t.iter().copied().fold(f64::MIN, f64::max);
    let lo = at_t.iter().copied().fold(f64::MAX, f64::min);
    if hi == 0.0 {
        report
            .checks
            .push(Check::flag("bounded (all moments zero)", true));
        report
            .checks
            .push(Check::flag("t_slope (degenerate)", true));
    } else {
        report.checks.push(Check::at_most(
            "bounded (max/min along schedule)",
            hi / lo,
            2.0,
        ));
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|a, b| times[*a].total_cmp(&times[*b]));
        order.dedup_by(|a, b| times[*a] == times[*b]);
        let xs: Vec<f64> = SCALING_TIMES.to_vec();
        let ys: Vec<f64> = SCALING_TIMES
            .iter()
            .map(|st| extrapolated[times.iter().position(|x| x == st).unwrap()].0)
            .collect();
        let fit = loglog_fit(&xs, &ys)?;
        report.slope = Some(fit.slope);
        report.ci = Some(fit.ci);
        report.checks.push(Check::within(
            "t_slope",
            fit.slope,
            p as f64 / 2.0,
            0.1 * p as f64,
        ));
    }
    report.finish();
    Ok(report)
}

/// Monitor nodes (in fine-grid units) shared by every coarsened grid, at
/// most about 1000 of them.
fn monitor_nodes(n_fine: usize, strides: &[usize]) -> Vec<usize> {
    let lcm = strides.iter().fold(1, |a, b| a / gcd(a, *b) * b);
    let blocks = n_fine / lcm;
    let q = (1..=blocks)
        .find(|q| blocks % q == 0 && blocks / q <= 1000)
        .unwrap_or(blocks);
    (0..=blocks / q).map(|i| i * q * lcm).collect()
}

/// Log-log regression of `sup_t E|Y^eps(t) - y(t)|^p` against `eps`; the
/// slope must be `p/2` within `0.15 p/2`. The supremum is taken over up to
/// about 1000 nodes common to every grid. Skipped when neither `sigma` nor
/// `b2` is present.
pub fn check_lemma_rate(
    cs: &CoefficientSet,
    y0: &[f64],
    t_end: f64,
    p: u32,
    schedule: &EpsilonSchedule,
    n_paths: usize,
    master_seed: u64,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("lemma_rate");
    report.param("coefficients", cs.name.clone());
    report.param("p", p);
    report.param("t_end", t_end);
    report.param("eps", schedule.values.clone());
    if cs.sigma_vanishes() && cs.drift_perturbation_vanishes() {
        report.skip("no perturbation: moments sit at the discretization floor");
        return Ok(report);
    }
    if p == 0 || n_paths < 2 || schedule.len() < 2 {
        return invalid("need p >= 1, two paths and two eps values");
    }
    let (fine, strides) = schedule.common_grid(t_end, 1)?;
    report.provenance = provenance(master_seed, fine, n_paths);
    let flows = flows_on(cs, y0, &fine, &strides)?;
    let monitor = monitor_nodes(fine.n_steps, &strides);
    let pf = p as i32;

    let samples = par_paths(n_paths, |k| {
        let drivers = Drivers::sample(&fine, cs.noise_dim, SeedSpec::new(master_seed, k as u64));
        schedule
            .values
            .iter()
            .enumerate()
            .map(|(e, eps)| {
                let dr = drivers.coarsen(strides[e])?;
                let y = simulate_y_with(cs, *eps, y0, &dr)?;
                Ok(monitor
                    .iter()
                    .map(|f| {
                        let i = f / strides[e];
                        crate::paths::euclid_dist(y.state(i), flows[e].y(i)).powi(pf)
                    })
                    .collect::<Vec<f64>>())
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut sups = Vec::new();
    for (e, eps) in schedule.values.iter().enumerate() {
        let (mut best, mut best_se) = (f64::MIN, 0.0);
        for m in 0..monitor.len() {
            let vals: Vec<f64> = samples.iter().map(|s| s[e][m]).collect();
            let (mean, se) = mean_se(&vals);
            if mean > best {
                best = mean;
                best_se = se;
            }
        }
        report.push_estimate(format!("eps={eps}"), best, best_se);
        sups.push(best);
    }
    let fit = loglog_fit(&schedule.values, &sups)?;
    report.slope = Some(fit.slope);
    report.ci = Some(fit.ci);
    let target = p as f64 / 2.0;
    report
        .checks
        .push(Check::within("slope", fit.slope, target, 0.15 * target));
    report.finish();
    Ok(report)
}

/// `eps^{-1} E sup|Y - Z|^2` and `eps^{-1} E sup|Y - y|^2` on shared drivers.
/// Checks that the first decreases along the schedule (within two combined
/// standard errors) and is below the second at the smallest `eps`.
pub fn check_reduction(
    cs: &CoefficientSet,
    y0: &[f64],
    t_end: f64,
    schedule: &EpsilonSchedule,
    n_paths: usize,
    master_seed: u64,
) -> Result<VerificationReport> {
    if n_paths < 2 {
        return invalid("need at least two paths");
    }
    let (fine, strides) = schedule.common_grid(t_end, 1)?;
    let flows = flows_on(cs, y0, &fine, &strides)?;
    let samples = par_paths(n_paths, |k| {
        let drivers = Drivers::sample(&fine, cs.noise_dim, SeedSpec::new(master_seed, k as u64));
        schedule
            .values
            .iter()
            .enumerate()
            .map(|(e, eps)| {
                let dr = drivers.coarsen(strides[e])?;
                let y = simulate_y_with(cs, *eps, y0, &dr)?;
                let j = simulate_j_with(cs, *eps, &flows[e], &dr)?;
                let z = simulate_z(cs, &j, y0)?;
                let yz = y.sup_distance(&z)?.powi(2) / eps;
                let yy = y.sup_distance(&flows[e].path)?.powi(2) / eps;
                Ok([yz, yy])
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut report = VerificationReport::new("reduction");
    report.param("coefficients", cs.name.clone());
    report.param("t_end", t_end);
    report.param("eps", schedule.values.clone());
    report.provenance = provenance(master_seed, fine, n_paths);
    let mut yz_stats = Vec::new();
    let mut last_yy = 0.0;
    for (e, eps) in schedule.values.iter().enumerate() {
        let yz: Vec<f64> = samples.iter().map(|s| s[e][0]).collect();
        let yy: Vec<f64> = samples.iter().map(|s| s[e][1]).collect();
        let (m, se) = mean_se(&yz);
        let (m2, se2) = mean_se(&yy);
        report.push_estimate(format!("Y-Z eps={eps}"), m, se);
        report.push_estimate(format!("Y-y eps={eps}"), m2, se2);
        yz_stats.push((m, se));
        last_yy = m2;
    }
    decreasing_checks(&mut report, "Y-Z decreasing", &yz_stats);
    report.checks.push(Check::at_most(
        "Y-Z below Y-y at smallest eps",
        yz_stats.last().unwrap().0,
        last_yy,
    ));
    report.finish();
    Ok(report)
}

/// For one `W1` path (from `seed`), resample `W2` and compare the empirical
/// characteristic function of `eps^{-1/2} J(t)` with
/// `exp(-(1/2 eps) sum_k h <sigma sigma^T(W1_k/eps, y_k) lambda, lambda>)`.
/// Real and imaginary parts must agree within 3 standard errors.
pub fn check_char_function(
    cs: &CoefficientSet,
    ode: &OdeSolution,
    eps: f64,
    t: f64,
    lambdas: &[Vec<f64>],
    n_resamples: usize,
    seed: SeedSpec,
) -> Result<VerificationReport> {
    let (d, r) = (cs.dim, cs.noise_dim);
    if lambdas.iter().any(|l| l.len() != d) {
        return invalid("every lambda must have the slow dimension");
    }
    if n_resamples < 2 {
        return invalid("need at least two resamples");
    }
    let grid = *ode.grid();
    crate::sde::warn_resolution(&grid, eps);
    let kt = node_index(&grid, t)?;
    let w1 = sample_brownian(&grid, 1, seed.child(TAG_W1))?;
    let sig_all = frozen_sigma(cs, eps, ode, w1.values())?;
    let sub = TimeGrid::new(grid.t0, grid.node(kt), kt.max(1))?;
    let sig = &sig_all[..kt * d * r];
    let h = grid.step();

    let exact: Vec<f64> = lambdas
        .iter()
        .map(|l| {
            let mut q = 0.0;
            for k in 0..kt {
                let s = &sig[k * d * r..(k + 1) * d * r];
                for c in 0..r {
                    let proj: f64 = (0..d).map(|i| s[i * r + c] * l[i]).sum();
                    q += h * proj * proj;
                }
            }
            (-0.5 * q / eps).exp()
        })
        .collect();

    let w2_seed = seed.child(TAG_W2);
    let draws = par_paths(n_resamples, |m| {
        let dw2 = gaussian_increments(&sub, r, w2_seed.with_stream(m as u64));
        let dw2 = if kt == 0 { vec![0.0; r] } else { dw2 };
        let j = if kt == 0 {
            vec![0.0; d]
        } else {
            accumulate_j(sub, d, r, sig, &dw2)?.terminal().to_vec()
        };
        let x: Vec<f64> = j.iter().map(|v| v / eps.sqrt()).collect();
        Ok(lambdas
            .iter()
            .map(|l| {
                let a: f64 = l.iter().zip(&x).map(|(p, q)| p * q).sum();
                (a.cos(), a.sin())
            })
            .collect::<Vec<_>>())
    })?;

    let mut report = VerificationReport::new("char_function");
    report.param("eps", eps);
    report.param("t", t);
    report.param("n_resamples", n_resamples);
    report.param("w1_stream", seed.stream_id);
    report.provenance = provenance(seed.master_seed, grid, n_resamples);
    for (li, l) in lambdas.iter().enumerate() {
        let re: Vec<f64> = draws.iter().map(|v| v[li].0).collect();
        let im: Vec<f64> = draws.iter().map(|v| v[li].1).collect();
        let (mr, sr) = mean_se(&re);
        let (mi, si) = mean_se(&im);
        let tag = format!("lambda={l:?}");
        report.push_estimate(format!("{tag} exact"), exact[li], 0.0);
        report.push_estimate(format!("{tag} re"), mr, sr);
        report.push_estimate(format!("{tag} im"), mi, si);
        report.checks.push(Check::at_most(
            &format!("{tag} re"),
            (mr - exact[li]).abs(),
            3.0 * sr + 1e-12,
        ));
        report.checks.push(Check::at_most(
            &format!("{tag} im"),
            mi.abs(),
            3.0 * si + 1e-12,
        ));
    }
    report.finish();
    Ok(report)
}

/// Resolution and thresholds of the limit-side samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitOptions {
    /// Step of the outer limit grid.
    pub h_lim: f64,
    /// Step of the local-time driver.
    pub h_inner: f64,
    pub ks_threshold: f64,
    /// Relative tolerance of moment checks.
    pub moment_tol: f64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        Self {
            h_lim: 1e-3,
            h_inner: 1e-5,
            ks_threshold: 0.05,
            moment_tol: 0.1,
        }
    }
}

fn ks_section(
    report: &mut VerificationReport,
    schedule: &EpsilonSchedule,
    probe_times: &[f64],
    dim: usize,
    pre: &[Vec<Vec<Vec<f64>>>],
    lim: &[Vec<Vec<f64>>],
    threshold: f64,
) -> Result<()> {
    let n = pre.len();
    let m = lim.len();
    let floor = ks_critical_value(n, m, 0.05);
    for (pi, t) in probe_times.iter().enumerate() {
        for c in 0..dim {
            let limit_law = EmpiricalLaw::new(lim.iter().map(|s| s[pi][c]).collect())?;
            let mut ks = Vec::new();
            for (e, eps) in schedule.values.iter().enumerate() {
                let law = EmpiricalLaw::new(pre.iter().map(|s| s[e][pi][c]).collect())?;
                let d = ks_two_sample(&law, &limit_law);
                report.push_estimate(format!("KS t={t} coord={} eps={eps}", c + 1), d, 0.0);
                ks.push(d);
            }
            for w in ks.windows(2) {
                report.checks.push(Check::at_most(
                    &format!("KS t={t} coord={} monotone", c + 1),
                    w[1],
                    w[0] + floor,
                ));
            }
            report.checks.push(Check::at_most(
                &format!("KS t={t} coord={} at smallest eps", c + 1),
                *ks.last().unwrap(),
                threshold,
            ));
        }
    }
    Ok(())
}

/// Two-sample KS distance, per probe time and coordinate, between
/// `zeta^eps = (Y - y) / sqrt(eps)` and independent samples of `zeta0`.
/// Checks: at the smallest `eps` below the threshold; along the schedule
/// non-increasing up to the 5% KS critical value; and at the last probe time
/// `E|zeta^eps|^2` at the smallest `eps` within `moment_tol` of the exact
/// limit second moment.
#[allow(clippy::too_many_arguments)]
pub fn check_weak_convergence(
    cs: &CoefficientSet,
    y0: &[f64],
    t_end: f64,
    probe_times: &[f64],
    schedule: &EpsilonSchedule,
    n_paths: usize,
    master_seed: u64,
    opts: &LimitOptions,
) -> Result<VerificationReport> {
    let mut report = VerificationReport::new("weak_convergence");
    report.param("coefficients", cs.name.clone());
    report.param("t_end", t_end);
    report.param("probe_times", probe_times.to_vec());
    report.param("eps", schedule.values.clone());
    report.param("h_lim", opts.h_lim);
    report.param("h_inner", opts.h_inner);
    if cs.sigma_vanishes() && cs.drift_perturbation_vanishes() {
        report.skip("no perturbation: both laws are the point mass at 0");
        return Ok(report);
    }
    if probe_times.is_empty() || n_paths < 2 {
        return invalid("need probe times and at least two paths");
    }
    let d = cs.dim;
    let (fine, strides) = schedule.common_grid(t_end, 8)?;
    report.provenance = provenance(master_seed, fine, n_paths);
    let flows = flows_on(cs, y0, &fine, &strides)?;
    let pre_idx: Vec<Vec<usize>> = flows
        .iter()
        .map(|f| {
            probe_times
                .iter()
                .map(|t| node_index(f.grid(), *t))
                .collect()
        })
        .collect::<Result<_>>()?;

    let pre = par_paths(n_paths, |k| {
        let drivers = Drivers::sample(&fine, cs.noise_dim, SeedSpec::new(master_seed, k as u64));
        schedule
            .values
            .iter()
            .enumerate()
            .map(|(e, eps)| {
                let dr = drivers.coarsen(strides[e])?;
                let y = simulate_y_with(cs, *eps, y0, &dr)?;
                let dev = deviation(&y, &flows[e], *eps, DeviationOrder::Half)?;
                Ok(pre_idx[e]
                    .iter()
                    .map(|i| dev.state(*i).to_vec())
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let lim_grid = TimeGrid::with_max_step(t_end, opts.h_lim)?;
    let lim_ode = solve_ode(cs, y0, &lim_grid)?;
    let pipe = LimitPipeline::new(cs, &lim_ode, &QuadratureSpec::default())?;
    let lim_idx: Vec<usize> = probe_times
        .iter()
        .map(|t| node_index(&lim_grid, *t))
        .collect::<Result<_>>()?;
    let lim = par_paths(n_paths, |k| {
        let seed = SeedSpec::new(master_seed, k as u64).child(TAG_LIMIT);
        let (_, z) = pipe.sample(seed, opts.h_inner)?;
        Ok(lim_idx
            .iter()
            .map(|i| z.zeta.state(*i).to_vec())
            .collect::<Vec<_>>())
    })?;

    ks_section(
        &mut report,
        schedule,
        probe_times,
        d,
        &pre,
        &lim,
        opts.ks_threshold,
    )?;

    let last = probe_times.len() - 1;
    let target = pipe.second_moment(*lim_idx.last().unwrap())?;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let pre_m: Vec<f64> = pre
        .iter()
        .map(|s| sq(&s[schedule.len() - 1][last]))
        .collect();
    let lim_m: Vec<f64> = lim.iter().map(|s| sq(&s[last])).collect();
    let (pm, pse) = mean_se(&pre_m);
    let (lm, lse) = mean_se(&lim_m);
    report.push_estimate("second moment prelimit (smallest eps)", pm, pse);
    report.push_estimate("second moment limit samples", lm, lse);
    report.push_estimate("second moment exact limit", target, 0.0);
    report.checks.push(Check::within(
        "second moment",
        pm,
        target,
        (opts.moment_tol * target).max(1e-12),
    ));
    report.finish();
    Ok(report)
}

/// Drift-only regime (`sigma = 0`): `zeta~^eps = (Y - y) / eps` against the
/// limit `zeta~0 = int Phi(t, s) B(s) dL(s, 0)`. Checks the mean of the limit
/// samples at `t_end` against `sum_k Phi(t, t_k) B(t_k) (E L(t_{k+1}) - E L(t_k))`
/// within `moment_tol` (relative, Euclidean), and the KS distance of the
/// terminal marginals at the smallest `eps` against `ks_threshold`.
pub fn check_drift_only(
    cs: &CoefficientSet,
    y0: &[f64],
    t_end: f64,
    schedule: &EpsilonSchedule,
    n_paths: usize,
    master_seed: u64,
    opts: &LimitOptions,
) -> Result<VerificationReport> {
    if !cs.sigma_vanishes() {
        return invalid("the drift-only check needs sigma = 0");
    }
    if n_paths < 2 {
        return invalid("need at least two paths");
    }
    let d = cs.dim;
    let (fine, strides) = schedule.common_grid(t_end, 1)?;
    let flows = flows_on(cs, y0, &fine, &strides)?;
    let pre = par_paths(n_paths, |k| {
        let drivers = Drivers::sample(&fine, cs.noise_dim, SeedSpec::new(master_seed, k as u64));
        schedule
            .values
            .iter()
            .enumerate()
            .map(|(e, eps)| {
                let dr = drivers.coarsen(strides[e])?;
                let y = simulate_y_with(cs, *eps, y0, &dr)?;
                let dev = deviation(&y, &flows[e], *eps, DeviationOrder::One)?;
                Ok(vec![dev.terminal().to_vec()])
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let lim_grid = TimeGrid::with_max_step(t_end, opts.h_lim)?;
    let lim_ode = solve_ode(cs, y0, &lim_grid)?;
    let fm = crate::deterministic::fundamental_matrix(cs, &lim_ode)?;
    let pipe = DriftLimitPipeline::new(cs, fm, &lim_ode, &QuadratureSpec::default())?;
    let lim = par_paths(n_paths, |k| {
        let seed = SeedSpec::new(master_seed, k as u64).child(TAG_LIMIT);
        let v = sample_v(&lim_grid, 1, seed, opts.h_inner)?;
        let z = pipe.zeta(&v.local_time)?;
        Ok(vec![z.zeta.terminal().to_vec()])
    })?;

    let mut report = VerificationReport::new("drift_only");
    report.param("coefficients", cs.name.clone());
    report.param("t_end", t_end);
    report.param("eps", schedule.values.clone());
    report.param("h_lim", opts.h_lim);
    report.param("h_inner", opts.h_inner);
    report.provenance = provenance(master_seed, fine, n_paths);

    // E zeta~0(T) from E L(s, 0) = sqrt(2 s / pi).
    let n = lim_grid.n_steps;
    let el = |k: usize| (2.0 * (lim_grid.node(k) - lim_grid.t0) / std::f64::consts::PI).sqrt();
    let mut target = nalgebra::DVector::<f64>::zeros(d);
    for k in 0..n {
        target += pipe.fm.between(n, k) * &pipe.b_integral[k] * (el(k + 1) - el(k));
    }
    let mut diff = 0.0;
    for c in 0..d {
        let (m, se) = mean_se(&lim.iter().map(|s| s[0][c]).collect::<Vec<_>>());
        report.push_estimate(format!("limit mean coord={}", c + 1), m, se);
        report.push_estimate(format!("exact mean coord={}", c + 1), target[c], 0.0);
        diff += (m - target[c]).powi(2);
    }
    let tn = target.norm();
    report.checks.push(Check::at_most(
        "limit mean (relative)",
        diff.sqrt() / tn.max(1e-300),
        opts.moment_tol,
    ));
    ks_section(
        &mut report,
        schedule,
        &[t_end],
        d,
        &pre,
        &lim,
        opts.ks_threshold,
    )?;
    report.finish();
    Ok(report)
}

/// Local time of the time-changed limit: `E L^{X0}(T, 0)` within `tol` of
/// `sqrt(2 s0(T) / pi)`. With `psi = 1` also checks on the first 16 seeds
/// that the pair reproduces the unit pipeline path for path.
pub fn check_corollary(
    cs: &CoefficientSet,
    y0: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
    h_inner: f64,
    tol: f64,
) -> Result<VerificationReport> {
    if n_paths < 2 {
        return invalid("need at least two paths");
    }
    let ode = solve_ode(cs, y0, grid)?;
    let quad = QuadratureSpec::default();
    let pipe = CorollaryPipeline::new(cs, &ode, &quad)?;
    let lts = par_paths(n_paths, |k| {
        let (_, v, _) = pipe.sample(SeedSpec::new(master_seed, k as u64), h_inner)?;
        Ok(v.local_time.terminal())
    })?;
    let mut report = VerificationReport::new("corollary");
    report.param("coefficients", cs.name.clone());
    report.param("h_inner", h_inner);
    report.provenance = provenance(master_seed, *grid, n_paths);
    let s_end = *pipe.clock.last().unwrap();
    let target = (2.0 * s_end / std::f64::consts::PI).sqrt();
    let (m, se) = mean_se(&lts);
    report.push_estimate("E L^X0(T, 0)", m, se);
    report.push_estimate("target", target, 0.0);
    report
        .checks
        .push(Check::within("local time mean", m, target, tol * target));
    if cs.psi_is_unit() {
        let unit = LimitPipeline::new(cs, &ode, &quad)?;
        let mut same = true;
        for k in 0..n_paths.min(16) {
            let seed = SeedSpec::new(master_seed, k as u64);
            let (x0, _, z) = pipe.sample(seed, h_inner)?;
            let (v, zt) = unit.sample(seed, h_inner)?;
            same &= z.zeta == zt.zeta && z.local_time == zt.local_time && x0 == v.w1_clocked;
        }
        report
            .checks
            .push(Check::flag("unit psi reproduces the unit pipeline", same));
    }
    report.finish();
    Ok(report)
}

/// Terminal mean of both local-time estimators at level 0 over Brownian
/// paths, against `sqrt(2 T / pi)`; plus agreement of the two means.
pub fn check_local_time_mean(
    grid: &TimeGrid,
    n_paths: usize,
    master_seed: u64,
    tol: f64,
) -> Result<VerificationReport> {
    if n_paths < 2 {
        return invalid("need at least two paths");
    }
    let vals = par_paths(n_paths, |k| {
        let w = sample_brownian(grid, 1, SeedSpec::new(master_seed, k as u64))?;
        let occ = local_time_occupation_default(&w, 0.0)?.terminal();
        let tan = *tanaka_raw(&w, 0.0)?.last().unwrap();
        Ok([occ, tan])
    })?;
    let target = (2.0 * grid.span() / std::f64::consts::PI).sqrt();
    let mut report = VerificationReport::new("local_time_mean");
    report.provenance = provenance(master_seed, *grid, n_paths);
    let occ: Vec<f64> = column(&vals.iter().map(|v| v.to_vec()).collect::<Vec<_>>(), 0);
    let tan: Vec<f64> = column(&vals.iter().map(|v| v.to_vec()).collect::<Vec<_>>(), 1);
    let (mo, so) = mean_se(&occ);
    let (mt, st) = mean_se(&tan);
    report.push_estimate("occupation", mo, so);
    report.push_estimate("tanaka", mt, st);
    report.push_estimate("target", target, 0.0);
    report
        .checks
        .push(Check::within("occupation", mo, target, tol * target));
    report
        .checks
        .push(Check::within("tanaka", mt, target, tol * target));
    report.checks.push(Check::at_most(
        "estimators agree (relative)",
        (mo - mt).abs() / mt.abs().max(1e-300),
        0.03,
    ));
    report.finish();
    Ok(report)
}

/// Mean of a sample in index order; re-exported for callers aggregating
/// their own ensembles.
pub fn ensemble_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{build_catalog_entry, Params};

    fn entry(name: &str, pairs: &[(&str, f64)]) -> CoefficientSet {
        let p: Params = pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        build_catalog_entry(name, &p).unwrap()
    }

    #[test]
    fn normal_absolute_moments() {
        assert!((abs_moment_of_normal(1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((abs_moment_of_normal(2) - 1.0).abs() < 1e-12);
        assert!((abs_moment_of_normal(4) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn monitor_nodes_are_common() {
        let m = monitor_nodes(40_960, &[64, 16, 4, 1]);
        assert!(m.len() <= 1001);
        assert!(m.iter().all(|f| f % 64 == 0));
        assert_eq!(*m.last().unwrap(), 40_960);
    }

    #[test]
    fn zero_psi_moments_vanish() {
        let s = EpsilonSchedule::with_default_step(vec![0.4, 0.2]).unwrap();
        let r = check_lemma_l1_bound(&|_| 0.0, 0.0, 1.0, 1, &s, 4, 1).unwrap();
        assert!(r.pass, "{}", r.to_text());
        assert!(r.estimates.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unperturbed_rate_is_skipped() {
        let cs = entry("gaussian_bump", &[("b_amp", 0.0), ("sigma_amp", 0.0)]);
        let s = EpsilonSchedule::with_default_step(vec![0.4, 0.2]).unwrap();
        let r = check_lemma_rate(&cs, &[0.0, 0.0], 1.0, 2, &s, 4, 1).unwrap();
        assert_eq!(r.status, super::super::Status::Skipped);
    }

    #[test]
    fn unperturbed_reduction_is_exact() {
        let cs = entry("gaussian_bump", &[("b_amp", 0.0), ("sigma_amp", 0.0)]);
        let s = EpsilonSchedule::with_default_step(vec![0.4, 0.2]).unwrap();
        let r = check_reduction(&cs, &[0.3, 0.1], 1.0, &s, 4, 1).unwrap();
        assert!(r.pass, "{}", r.to_text());
    }

    #[test]
    fn char_function_trivial_cases() {
        let cs = entry("oscillator", &[]);
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let ode = solve_ode(&cs, &[1.0, 0.0], &g).unwrap();
        let r = check_char_function(
            &cs,
            &ode,
            0.3,
            1.0,
            &[vec![0.0, 0.0]],
            50,
            SeedSpec::new(1, 0),
        )
        .unwrap();
        assert_eq!(r.estimate("lambda=[0.0, 0.0] re"), Some(1.0));
        assert!(r.pass);
        let flat = entry("oscillator", &[("a", 0.0)]);
        let r = check_char_function(
            &flat,
            &ode,
            0.3,
            1.0,
            &[vec![1.0, 2.0]],
            50,
            SeedSpec::new(1, 0),
        )
        .unwrap();
        assert_eq!(r.estimate("lambda=[1.0, 2.0] exact"), Some(1.0));
        assert!(r.pass);
    }

    #[test]
    fn weak_convergence_degenerate_is_skipped() {
        let cs = entry("gaussian_bump", &[("b_amp", 0.0), ("sigma_amp", 0.0)]);
        let s = EpsilonSchedule::with_default_step(vec![0.4, 0.2]).unwrap();
        let r = check_weak_convergence(
            &cs,
            &[0.0, 0.0],
            1.0,
            &[1.0],
            &s,
            4,
            1,
            &LimitOptions::default(),
        )
        .unwrap();
        assert_eq!(r.status, super::super::Status::Skipped);
    }
}
