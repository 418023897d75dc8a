use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nullrec_core::coefficients::{check_assumptions, Catalog, ProbeBox};
use nullrec_core::deterministic::solve_ode;
use nullrec_core::limit::{CorollaryPipeline, LimitPipeline};
use nullrec_core::localtime::{
    local_time_occupation_default, local_time_tanaka, occupation_identity_check_with,
};
use nullrec_core::paths::{sample_brownian, write_columns_csv};
use nullrec_core::quadrature::QuadratureSpec;
use nullrec_core::sde::simulate_pair_general;
use nullrec_core::timechange::verify_timechange_limit;
use nullrec_core::verify::*;
use nullrec_core::{CoefficientSet, EpsilonSchedule, Error, SeedSpec};

use crate::config::{ExperimentConfig, Kind};

/// Failure of a run, mapped onto an exit status by the caller.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Runtime(Error),
    Io(io::Error),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) | Error::NotFound(m) => RunError::Config(m),
            other => RunError::Runtime(other),
        }
    }
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e)
    }
}

pub struct Outcome {
    pub reports: Vec<VerificationReport>,
    pub artifacts: Vec<PathBuf>,
}

struct Writer<'a> {
    dir: &'a Path,
    header: Vec<String>,
    artifacts: Vec<PathBuf>,
}

impl Writer<'_> {
    fn csv(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>, &[String]) -> io::Result<()>,
    ) -> io::Result<()> {
        let path = self.dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        f(&mut out, &self.header)?;
        out.flush()?;
        self.artifacts.push(path);
        Ok(())
    }
}

fn default_y0(cs: &CoefficientSet) -> Vec<f64> {
    if cs.name == "oscillator" {
        vec![1.0, 0.0]
    } else {
        vec![0.0; cs.dim]
    }
}

pub fn run(cfg: &ExperimentConfig, config_hash: &str, out_dir: &Path) -> Result<Outcome, RunError> {
    let cs = Catalog::builtin().build(&cfg.entry, &cfg.params)?;
    let y0 = cfg.y0.clone().unwrap_or_else(|| default_y0(&cs));
    if y0.len() != cs.dim {
        return Err(RunError::Config(format!(
            "y0 has length {}, entry `{}` has dimension {}",
            y0.len(),
            cs.name,
            cs.dim
        )));
    }
    let grid = cfg.grid.build().map_err(RunError::Config)?;
    let seed = cfg.master_seed;
    let n = cfg.n_paths;
    let o = &cfg.options;
    let schedule = EpsilonSchedule::new(cfg.eps.clone(), cfg.h_ref)?;
    let limit_opts = LimitOptions {
        h_lim: o.h_lim,
        h_inner: o.h_inner,
        ks_threshold: o.ks_threshold,
        moment_tol: o.moment_tol,
    };

    fs::create_dir_all(out_dir)?;
    let mut w = Writer {
        dir: out_dir,
        header: vec![
            format!("config_sha256={config_hash}"),
            format!("master_seed={seed}"),
            format!(
                "kind={}",
                serde_json::to_value(cfg.kind).unwrap().as_str().unwrap()
            ),
        ],
        artifacts: Vec::new(),
    };
    let n_csv = n.min(o.max_csv_paths);
    let mut reports = Vec::new();

    match cfg.kind {
        Kind::Simulate => {
            for eps in &schedule.values {
                for k in 0..n_csv {
                    let traj = simulate_pair_general(
                        &cs,
                        *eps,
                        o.x0,
                        &y0,
                        &grid,
                        SeedSpec::new(seed, k as u64),
                    )?;
                    w.csv(&format!("simulate_eps{eps}_path{k}.csv"), |f, h| {
                        traj.write_csv(f, h)
                    })?;
                }
            }
        }
        Kind::Localtime => {
            for k in 0..n_csv {
                let path = sample_brownian(&grid, 1, SeedSpec::new(seed, k as u64))?;
                let occ = local_time_occupation_default(&path, o.level)?;
                let tan = local_time_tanaka(&path, o.level)?;
                let names = ["W", "L_occupation", "L_tanaka"].map(String::from);
                let cols = vec![
                    path.component(0),
                    occ.values().to_vec(),
                    tan.values().to_vec(),
                ];
                w.csv(&format!("localtime_path{k}.csv"), |f, h| {
                    write_columns_csv(f, h, &grid, &names, &cols)
                })?;
            }
        }
        Kind::Limit => {
            let ode = solve_ode(&cs, &y0, &grid)?;
            let quad = QuadratureSpec::default();
            let corollary = if cs.psi_is_unit() {
                None
            } else {
                Some(CorollaryPipeline::new(&cs, &ode, &quad)?)
            };
            let unit = if corollary.is_none() {
                Some(LimitPipeline::new(&cs, &ode, &quad)?)
            } else {
                None
            };
            for k in 0..n_csv {
                let s = SeedSpec::new(seed, k as u64);
                let (v, z) = match (&unit, &corollary) {
                    (Some(p), _) => p.sample(s, o.h_inner)?,
                    (None, Some(p)) => {
                        let (_, v, z) = p.sample(s, o.h_inner)?;
                        (v, z)
                    }
                    (None, None) => unreachable!(),
                };
                w.csv(&format!("limit_path{k}.csv"), |f, h| z.write_csv(f, h))?;
                w.csv(&format!("v_path{k}.csv"), |f, h| v.write_csv(f, h))?;
            }
        }
        Kind::OscillatorDemo => {
            let demo = oscillator_demo(
                o.sqrt_eps,
                o.sigma_l2,
                &grid,
                SeedSpec::new(seed, 0),
                o.h_inner,
            )?;
            w.header
                .push(format!("sqrt_eps={} sigma_l2={}", o.sqrt_eps, o.sigma_l2));
            w.csv("oscillator_demo.csv", |f, h| demo.write_csv(f, h))?;
        }
        Kind::VerifyLocalTime => reports.push(check_local_time_mean(&grid, n, seed, o.tol)?),
        Kind::VerifyOccupation => {
            let ode = solve_ode(&cs, &y0, &grid)?;
            for k in 0..n {
                let path = sample_brownian(&grid, 1, SeedSpec::new(seed, k as u64))?;
                let mut r = occupation_identity_check_with(
                    &path,
                    &cs,
                    &ode,
                    schedule.values[0],
                    grid.step().sqrt(),
                    o.tol,
                )?;
                r.param("path", k);
                reports.push(r);
            }
        }
        Kind::VerifyLemmaBound => {
            let amp = o.psi_amp;
            let psi = move |x: f64| amp * (-0.5 * x * x).exp();
            let l1 = amp.abs() * (2.0 * std::f64::consts::PI).sqrt();
            reports.push(check_lemma_l1_bound(
                &psi, l1, o.t, o.p, &schedule, n, seed,
            )?);
        }
        Kind::VerifyRate => reports.push(check_lemma_rate(
            &cs, &y0, grid.t_end, o.p, &schedule, n, seed,
        )?),
        Kind::VerifyReduction => {
            reports.push(check_reduction(&cs, &y0, grid.t_end, &schedule, n, seed)?)
        }
        Kind::VerifyCharFunction => {
            let ode = solve_ode(&cs, &y0, &grid)?;
            let lambdas = if o.lambdas.is_empty() {
                (0..cs.dim)
                    .map(|i| {
                        (0..cs.dim)
                            .map(|j| if i == j { 1.0 } else { 0.0 })
                            .collect()
                    })
                    .collect()
            } else {
                o.lambdas.clone()
            };
            reports.push(check_char_function(
                &cs,
                &ode,
                schedule.values[0],
                o.t,
                &lambdas,
                n,
                SeedSpec::new(seed, 0),
            )?);
        }
        Kind::VerifyWeakConvergence => reports.push(check_weak_convergence(
            &cs,
            &y0,
            grid.t_end,
            &o.probe_times,
            &schedule,
            n,
            seed,
            &limit_opts,
        )?),
        Kind::VerifyDriftOnly => reports.push(check_drift_only(
            &cs,
            &y0,
            grid.t_end,
            &schedule,
            n,
            seed,
            &limit_opts,
        )?),
        Kind::VerifyCorollary => {
            reports.push(check_corollary(&cs, &y0, &grid, n, seed, o.h_inner, o.tol)?)
        }
        Kind::VerifyTimechange => {
            let ode = solve_ode(&cs, &y0, &grid)?;
            reports.push(verify_timechange_limit(&cs, &ode, &schedule, n, seed)?);
        }
        Kind::VerifyAssumptions => reports.push(check_assumptions(&cs, &ProbeBox::default(), n)?),
    }

    let many = reports.len() > 1;
    for (i, r) in reports.iter_mut().enumerate() {
        r.param("config_sha256", config_hash);
        r.param("master_seed", seed);
        let stem = if many {
            format!("{}_{i}", r.name)
        } else {
            r.name.clone()
        };
        for (ext, body) in [("json", r.to_json()), ("txt", r.to_text())] {
            let path = out_dir.join(format!("{stem}.{ext}"));
            fs::write(&path, body)?;
            w.artifacts.push(path);
        }
    }
    Ok(Outcome {
        reports,
        artifacts: w.artifacts,
    })
}

/// One block per catalog entry: defaults, envelope norms and probed
/// assumptions.
pub fn list_catalog() -> String {
    let mut s = String::new();
    for entry in Catalog::builtin().entries() {
        s.push_str(&format!("{}\n  {}\n", entry.name, entry.description));
        let defaults: Vec<String> = entry
            .defaults
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        s.push_str(&format!("  parameters: {}\n", defaults.join(", ")));
        match entry.build(&entry.defaults) {
            Ok(cs) => {
                s.push_str(&format!(
                    "  dim={} noise_dim={} c1={} c2={}\n",
                    cs.dim, cs.noise_dim, cs.c1, cs.c2
                ));
                match check_assumptions(&cs, &ProbeBox::default(), 200) {
                    Ok(r) => {
                        s.push_str(&format!(
                            "  |b_hat|_1={:.6} |sigma_hat^2|_1={:.6}\n",
                            r.estimate("b_hat_l1").unwrap_or(f64::NAN),
                            r.estimate("sigma_hat_sq_l1").unwrap_or(f64::NAN)
                        ));
                        let group = |pred: &dyn Fn(&str) -> bool| {
                            if r.checks.iter().filter(|c| pred(&c.name)).all(|c| c.pass) {
                                "ok"
                            } else {
                                "violated"
                            }
                        };
                        s.push_str(&format!(
                            "  assumptions: L1 envelopes {}, Lipschitz {}, psi bounds {}\n",
                            group(&|n| n.contains("_l1") || n.contains("dominates")),
                            group(&|n| n.contains("Lipschitz") || n.contains("Db1")),
                            group(&|n| n.contains("psi") || n.contains("c1")),
                        ));
                    }
                    Err(e) => s.push_str(&format!("  assumptions: not probed ({e})\n")),
                }
            }
            Err(e) => s.push_str(&format!("  defaults do not build: {e}\n")),
        }
    }
    s
}
