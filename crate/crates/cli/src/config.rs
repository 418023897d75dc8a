use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use nullrec_core::{Params, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Localtime,
    Limit,
    OscillatorDemo,
    VerifyLocalTime,
    VerifyOccupation,
    VerifyLemmaBound,
    VerifyRate,
    VerifyReduction,
    VerifyCharFunction,
    VerifyWeakConvergence,
    VerifyDriftOnly,
    VerifyCorollary,
    VerifyTimechange,
    VerifyAssumptions,
}

/// Either a step count or a maximal step on `[t0, t_end]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: Option<usize>,
    pub max_step: Option<f64>,
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid, String> {
        let g = match (self.n_steps, self.max_step) {
            (Some(n), None) => TimeGrid::new(self.t0, self.t_end, n),
            (None, Some(h)) if self.t0 == 0.0 => TimeGrid::with_max_step(self.t_end, h),
            (None, Some(h)) => {
                let n = ((self.t_end - self.t0) / h).ceil().max(1.0) as usize;
                TimeGrid::new(self.t0, self.t_end, n)
            }
            _ => return Err("grid: give exactly one of `n_steps` and `max_step`".into()),
        };
        g.map_err(|e| format!("grid: {e}"))
    }
}

/// Knobs of individual experiment kinds. Unused ones are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// Moment order for `verify-lemma-bound` and `verify-rate`.
    pub p: u32,
    /// Probe time for `verify-lemma-bound` and `verify-char-function`.
    pub t: f64,
    pub probe_times: Vec<f64>,
    pub lambdas: Vec<Vec<f64>>,
    pub level: f64,
    pub h_inner: f64,
    pub h_lim: f64,
    pub ks_threshold: f64,
    pub moment_tol: f64,
    /// Relative tolerance for `verify-local-time`, `verify-occupation` and
    /// `verify-corollary`.
    pub tol: f64,
    pub sqrt_eps: f64,
    pub sigma_l2: f64,
    /// Amplitude and width of the Gaussian `psi` in `verify-lemma-bound`:
    /// `psi(x) = psi_amp exp(-x^2 / 2)`.
    pub psi_amp: f64,
    /// Initial fast state for `simulate`.
    pub x0: f64,
    /// Write per-path CSV files for at most this many paths.
    pub max_csv_paths: usize,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            p: 2,
            t: 1.0,
            probe_times: vec![1.0],
            lambdas: Vec::new(),
            level: 0.0,
            h_inner: 1e-5,
            h_lim: 1e-3,
            ks_threshold: 0.05,
            moment_tol: 0.1,
            tol: 0.05,
            sqrt_eps: 0.1,
            sigma_l2: 100.0,
            psi_amp: 1.0,
            x0: 0.0,
            max_csv_paths: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// Catalog entry; defaults to `oscillator`.
    #[serde(default = "default_entry")]
    pub entry: String,
    #[serde(default)]
    pub params: Params,
    pub grid: GridSpec,
    /// Initial slow state; defaults to zeros, or `(1, 0)` for the oscillator.
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    /// Reference step: the grid for `eps` has step at most `h_ref eps^2`.
    #[serde(default = "default_h_ref")]
    pub h_ref: f64,
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub options: Options,
}

fn default_entry() -> String {
    "oscillator".into()
}

fn default_eps() -> Vec<f64> {
    vec![0.4, 0.2, 0.1, 0.05]
}

fn default_h_ref() -> f64 {
    1e-2
}

fn default_n_paths() -> usize {
    100
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let c: ExperimentConfig = serde_json::from_str(
            r#"{"kind": "verify-rate", "grid": {"t_end": 1.0, "n_steps": 10}}"#,
        )
        .unwrap();
        assert_eq!(c.entry, "oscillator");
        assert_eq!(c.eps, vec![0.4, 0.2, 0.1, 0.05]);
        assert_eq!(c.options.p, 2);
        assert_eq!(c.grid.build().unwrap().n_steps, 10);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: Result<ExperimentConfig, _> = serde_json::from_str(
            r#"{"kind": "simulate", "grid": {"t_end": 1.0, "n_steps": 10}, "n_path": 3}"#,
        );
        assert!(r.unwrap_err().to_string().contains("n_path"));
    }

    #[test]
    fn grid_needs_exactly_one_resolution() {
        let g = GridSpec {
            t0: 0.0,
            t_end: 1.0,
            n_steps: Some(4),
            max_step: Some(0.1),
        };
        assert!(g.build().is_err());
        let g = GridSpec {
            t0: 0.0,
            t_end: 1.0,
            n_steps: None,
            max_step: Some(0.3),
        };
        assert_eq!(g.build().unwrap().n_steps, 4);
    }
}
