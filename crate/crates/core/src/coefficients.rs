//! Coefficient sets `(b1, Db1, b2, sigma, psi1, psi2)` and the named catalog.
//!
//! Evaluators write into caller-provided slices so the simulation loops do
//! not allocate. Matrices are row-major: `Db1` is `d x d`, `sigma` is
//! `d x r` where `r` is the dimension of the slow noise `W2`.
//!
//! Every set carries its integrable envelopes
//! `b_hat(x) >= sup_y |b2(x, y)|` and `sigma_hat_sq(x) >= sup_y Tr(sigma sigma^T)(x, y)`,
//! the declared Lipschitz constants, and the bounds `c1 <= psi1 + psi2 <= c2`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::paths::SeedSpec;
use crate::quadrature::{integrate_real_line, QuadratureSpec};
use crate::verify::{Check, VerificationReport};

pub type Params = BTreeMap<String, f64>;

pub type VecField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type MatField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type XVecField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type XMatField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ScalarY = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type ScalarXY = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type Envelope = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Which envelope to integrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    BHat,
    SigmaHatSq,
}

#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    pub dim: usize,
    pub noise_dim: usize,
    pub b1: VecField,
    pub db1: MatField,
    pub b2: XVecField,
    pub sigma: XMatField,
    pub psi1: ScalarY,
    pub psi2: ScalarXY,
    pub b_hat: Envelope,
    pub sigma_hat_sq: Envelope,
    pub lip_b1: f64,
    pub lip_b2: f64,
    pub lip_sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Upper bound on the operator norm of `Db1`.
    pub db1_bound: f64,
    /// `sup |b1|` when finite.
    pub b1_bound: Option<f64>,
    /// Closed-form L1 norms of the envelopes, when known.
    pub b_hat_l1: Option<f64>,
    pub sigma_hat_sq_l1: Option<f64>,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// A set with every coefficient zero and `psi1 = 1`, `psi2 = 0`.
    /// Callers overwrite the fields they need.
    pub fn zero(name: &str, dim: usize, noise_dim: usize) -> Self {
        Self {
            name: name.to_string(),
            dim,
            noise_dim,
            b1: Arc::new(|_, out| out.fill(0.0)),
            db1: Arc::new(|_, out| out.fill(0.0)),
            b2: Arc::new(|_, _, out| out.fill(0.0)),
            sigma: Arc::new(|_, _, out| out.fill(0.0)),
            psi1: Arc::new(|_| 1.0),
            psi2: Arc::new(|_, _| 0.0),
            b_hat: Arc::new(|_| 0.0),
            sigma_hat_sq: Arc::new(|_| 0.0),
            lip_b1: 0.0,
            lip_b2: 0.0,
            lip_sigma: 0.0,
            c1: 1.0,
            c2: 1.0,
            db1_bound: 0.0,
            b1_bound: Some(0.0),
            b_hat_l1: Some(0.0),
            sigma_hat_sq_l1: Some(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.noise_dim == 0 {
            return invalid("dimensions must be positive");
        }
        if !(self.c1 > 0.0) || !(self.c1 <= self.c2) || !self.c2.is_finite() {
            return invalid(format!(
                "need 0 < c1 <= c2 < inf for psi1 + psi2, got c1 = {}, c2 = {}",
                self.c1, self.c2
            ));
        }
        Ok(())
    }

    /// `Tr(sigma sigma^T)(x, y)`, the squared Frobenius norm of `sigma`.
    pub fn sigma_trace(&self, x: f64, y: &[f64], buf: &mut [f64]) -> f64 {
        (self.sigma)(x, y, buf);
        buf.iter().map(|v| v * v).sum()
    }

    /// `(sigma sigma^T)(x, y)` as a row-major `d x d` matrix.
    pub fn sigma_outer(&self, x: f64, y: &[f64], sig: &mut [f64], out: &mut [f64]) {
        let (d, r) = (self.dim, self.noise_dim);
        (self.sigma)(x, y, sig);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..r).map(|l| sig[i * r + l] * sig[j * r + l]).sum();
            }
        }
    }

    pub fn psi_sum(&self, x: f64, y: &[f64]) -> f64 {
        (self.psi1)(y) + (self.psi2)(x, y)
    }

    /// True when the declared envelope of `sigma` integrates to zero.
    pub fn sigma_vanishes(&self) -> bool {
        matches!(l1_norm_envelope(self, EnvelopeKind::SigmaHatSq), Ok(v) if v == 0.0)
    }

    pub fn drift_perturbation_vanishes(&self) -> bool {
        matches!(l1_norm_envelope(self, EnvelopeKind::BHat), Ok(v) if v == 0.0)
    }

    pub fn psi_is_unit(&self) -> bool {
        self.c1 == 1.0 && self.c2 == 1.0
    }
}

/// L1 norm of an envelope: closed form when declared, otherwise adaptive
/// quadrature over the real line at relative tolerance `1e-8`.
pub fn l1_norm_envelope(cs: &CoefficientSet, which: EnvelopeKind) -> Result<f64> {
    let (declared, env) = match which {
        EnvelopeKind::BHat => (cs.b_hat_l1, &cs.b_hat),
        EnvelopeKind::SigmaHatSq => (cs.sigma_hat_sq_l1, &cs.sigma_hat_sq),
    };
    if let Some(v) = declared {
        return Ok(v);
    }
    let spec = QuadratureSpec {
        rel_tol: 1e-8,
        abs_tol: 1e-14,
        max_intervals: 4000,
        tail_tol: 1e-10,
    };
    let v = integrate_real_line(|x| env(x), &spec)?;
    if !v.is_finite() {
        return Err(Error::NonIntegrable(format!("{which:?} of {}", cs.name)));
    }
    Ok(v)
}

fn gauss(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Builder signature for catalog entries.
pub type EntryBuilder = Arc<dyn Fn(&Params) -> Result<CoefficientSet> + Send + Sync>;

#[derive(Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub description: String,
    pub defaults: Params,
    builder: EntryBuilder,
}

impl CatalogEntry {
    pub fn new(
        name: &str,
        description: &str,
        defaults: Params,
        builder: impl Fn(&Params) -> Result<CoefficientSet> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            defaults,
            builder: Arc::new(builder),
        }
    }

    pub fn build(&self, params: &Params) -> Result<CoefficientSet> {
        if let Some(k) = params.keys().find(|k| !self.defaults.contains_key(*k)) {
            return invalid(format!("entry `{}` has no parameter `{k}`", self.name));
        }
        let mut merged = self.defaults.clone();
        merged.extend(params.iter().map(|(k, v)| (k.clone(), *v)));
        if let Some((k, v)) = merged.iter().find(|(_, v)| !v.is_finite()) {
            return invalid(format!("parameter `{k}` = {v} is not finite"));
        }
        let cs = (self.builder)(&merged)?;
        cs.validate()?;
        Ok(cs)
    }
}

/// Named coefficient sets. [`Catalog::builtin`] holds the four shipped
/// entries; programmatic coefficients are added with [`Catalog::register`].
#[derive(Clone)]
pub struct Catalog {
    entries: BTreeMap<String, CatalogEntry>,
}

fn params(pairs: &[(&str, f64)]) -> Params {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn dim_param(p: &Params, key: &str) -> Result<usize> {
    let v = p[key];
    if v < 1.0 || v.fract() != 0.0 || v > 64.0 {
        return invalid(format!("`{key}` must be an integer in [1, 64], got {v}"));
    }
    Ok(v as usize)
}

/// `psi1 = p, psi2(x) = q exp(-x^2/2)`: bounds `c1 = p + min(q, 0)`, `c2 = p + max(q, 0)`.
fn apply_psi(cs: &mut CoefficientSet, psi1: f64, psi2_amp: f64) -> Result<()> {
    let c1 = psi1 + psi2_amp.min(0.0);
    let c2 = psi1 + psi2_amp.max(0.0);
    if !(c1 > 0.0) {
        return invalid(format!(
            "psi1 + psi2 must stay above a positive constant, got lower bound {c1}"
        ));
    }
    cs.psi1 = Arc::new(move |_| psi1);
    cs.psi2 = if psi2_amp == 0.0 {
        Arc::new(|_, _| 0.0)
    } else {
        Arc::new(move |x, _| psi2_amp * gauss(x))
    };
    cs.c1 = c1;
    cs.c2 = c2;
    Ok(())
}

fn oscillator(p: &Params) -> Result<CoefficientSet> {
    let a = p["a"];
    let mut cs = CoefficientSet::zero("oscillator", 2, 1);
    cs.b1 = Arc::new(|y, out| {
        out[0] = -y[1];
        out[1] = y[0];
    });
    cs.db1 = Arc::new(|_, out| out.copy_from_slice(&[0.0, -1.0, 1.0, 0.0]));
    cs.sigma = Arc::new(move |x, _, out| {
        out[0] = a * gauss(x);
        out[1] = 0.0;
    });
    cs.sigma_hat_sq = Arc::new(move |x| a * a * (-x * x).exp());
    cs.sigma_hat_sq_l1 = Some(a * a * PI.sqrt());
    cs.lip_b1 = 1.0;
    cs.lip_sigma = a.abs() * (-0.5f64).exp();
    cs.db1_bound = 1.0;
    cs.b1_bound = None;
    apply_psi(&mut cs, p["psi1"], p["psi2_amp"])?;
    Ok(cs)
}

fn gaussian_bump(p: &Params) -> Result<CoefficientSet> {
    let d = dim_param(p, "dim")?;
    let (amp_b, amp_s, kappa) = (p["b_amp"], p["sigma_amp"], p["kappa"]);
    let mut cs = CoefficientSet::zero("gaussian_bump", d, d);
    cs.b1 = Arc::new(move |y, out| {
        for (o, v) in out.iter_mut().zip(y) {
            *o = -kappa * v.tanh();
        }
    });
    cs.db1 = Arc::new(move |y, out| {
        out.fill(0.0);
        for i in 0..d {
            let c = y[i].cosh();
            out[i * d + i] = -kappa / (c * c);
        }
    });
    cs.b2 = Arc::new(move |x, y, out| {
        let g = amp_b * gauss(x);
        for (o, v) in out.iter_mut().zip(y) {
            *o = g * v.cos();
        }
    });
    cs.sigma = Arc::new(move |x, y, out| {
        out.fill(0.0);
        let g = amp_s * gauss(x);
        for i in 0..d {
            out[i * d + i] = g * (1.0 + 0.5 * y[i].sin());
        }
    });
    let df = d as f64;
    cs.b_hat = Arc::new(move |x| amp_b.abs() * df.sqrt() * gauss(x));
    cs.sigma_hat_sq = Arc::new(move |x| 2.25 * df * amp_s * amp_s * (-x * x).exp());
    cs.b_hat_l1 = Some(amp_b.abs() * df.sqrt() * SQRT_2PI);
    cs.sigma_hat_sq_l1 = Some(2.25 * df * amp_s * amp_s * PI.sqrt());
    cs.lip_b1 = kappa.abs();
    cs.lip_b2 = amp_b.abs() * df.sqrt();
    cs.lip_sigma = amp_s.abs() * df.sqrt();
    cs.db1_bound = kappa.abs();
    cs.b1_bound = Some(kappa.abs() * df.sqrt());
    apply_psi(&mut cs, p["psi1"], p["psi2_amp"])?;
    Ok(cs)
}

fn drift_only(p: &Params) -> Result<CoefficientSet> {
    let d = dim_param(p, "dim")?;
    let amp = p["amp"];
    let mut cs = CoefficientSet::zero("drift_only", d, 1);
    cs.b2 = Arc::new(move |x, _, out| out.fill(amp * gauss(x)));
    let df = d as f64;
    cs.b_hat = Arc::new(move |x| amp.abs() * df.sqrt() * gauss(x));
    cs.b_hat_l1 = Some(amp.abs() * df.sqrt() * SQRT_2PI);
    cs.lip_b2 = amp.abs() * df.sqrt() * (-0.5f64).exp();
    apply_psi(&mut cs, p["psi1"], p["psi2_amp"])?;
    Ok(cs)
}

fn constant_psi(p: &Params) -> Result<CoefficientSet> {
    let (c, s) = (p["c"], p["s"]);
    if !(c > 0.0) {
        return invalid(format!("constant psi1 must be positive, got {c}"));
    }
    let mut cs = CoefficientSet::zero("constant_psi", 1, 1);
    cs.sigma = Arc::new(move |x, _, out| out[0] = s * gauss(x));
    cs.sigma_hat_sq = Arc::new(move |x| s * s * (-x * x).exp());
    cs.sigma_hat_sq_l1 = Some(s * s * PI.sqrt());
    cs.lip_sigma = s.abs() * (-0.5f64).exp();
    apply_psi(&mut cs, c, p["psi2_amp"])?;
    Ok(cs)
}

impl Catalog {
    pub fn builtin() -> Self {
        let mut cat = Self {
            entries: BTreeMap::new(),
        };
        cat.register(CatalogEntry::new(
            "constant_psi",
            "d = 1, b1 = 0, b2 = 0, sigma = s exp(-x^2/2), psi1 = c, psi2 = psi2_amp exp(-x^2/2)",
            params(&[("c", 1.0), ("s", 1.0), ("psi2_amp", 0.0)]),
            constant_psi,
        ));
        cat.register(CatalogEntry::new(
            "drift_only",
            "b1 = 0, b2 = amp exp(-x^2/2) (1, ..., 1), sigma = 0",
            params(&[("dim", 1.0), ("amp", 1.0), ("psi1", 1.0), ("psi2_amp", 0.0)]),
            drift_only,
        ));
        cat.register(CatalogEntry::new(
            "gaussian_bump",
            "b1 = -kappa tanh(y), b2 = b_amp exp(-x^2/2) cos(y), sigma = sigma_amp exp(-x^2/2) diag(1 + sin(y)/2)",
            params(&[
                ("dim", 2.0),
                ("kappa", 1.0),
                ("b_amp", 1.0),
                ("sigma_amp", 1.0),
                ("psi1", 1.0),
                ("psi2_amp", 0.0),
            ]),
            gaussian_bump,
        ));
        cat.register(CatalogEntry::new(
            "oscillator",
            "harmonic oscillator y = (q', q), sigma = (a exp(-x^2/2), 0)^T on a scalar noise",
            params(&[("a", 1.0), ("psi1", 1.0), ("psi2_amp", 0.0)]),
            oscillator,
        ));
        cat
    }

    /// Adds or replaces an entry.
    pub fn register(&mut self, entry: CatalogEntry) {
        self.entries.insert(entry.name.clone(), entry);
    }

    pub fn get(&self, name: &str) -> Result<&CatalogEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("catalog entry `{name}`")))
    }

    pub fn build(&self, name: &str, params: &Params) -> Result<CoefficientSet> {
        self.get(name)?.build(params)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }
}

/// Build an entry from the built-in catalog.
pub fn build_catalog_entry(name: &str, params: &Params) -> Result<CoefficientSet> {
    Catalog::builtin().build(name, params)
}

/// Rectangle `[x_lo, x_hi] x [y_lo, y_hi]^d` to probe assumptions on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self {
            x: (-6.0, 6.0),
            y: (-3.0, 3.0),
        }
    }
}

fn frob_diff(a: &[f64], b: &[f64]) -> f64 {
    crate::paths::euclid_dist(a, b)
}

/// Probe the declared assumptions at `n_probes` seeded random points.
/// Violations are reported, never raised.
pub fn check_assumptions(
    cs: &CoefficientSet,
    probe: &ProbeBox,
    n_probes: usize,
) -> Result<VerificationReport> {
    if n_probes < 2 {
        return invalid("need at least two probes");
    }
    let (d, r) = (cs.dim, cs.noise_dim);
    let mut rng = SeedSpec::new(0x00c0_ffee, 0).rng();
    let point = |rng: &mut rand_chacha::ChaCha8Rng| {
        let x = rng.random_range(probe.x.0..=probe.x.1);
        let y: Vec<f64> = (0..d)
            .map(|_| rng.random_range(probe.y.0..=probe.y.1))
            .collect();
        (x, y)
    };

    let tol = 1e-9;
    let mut b2_env = 0.0_f64; // max |b2| - b_hat
    let mut sig_env = 0.0_f64;
    let mut psi_lo = f64::INFINITY;
    let mut psi_hi = f64::NEG_INFINITY;
    let (mut lip_b1, mut lip_b2, mut lip_sig) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut jac_err = 0.0_f64;
    let mut db1_norm = 0.0_f64;

    let mut v1 = vec![0.0; d];
    let mut v2 = vec![0.0; d];
    let mut s1 = vec![0.0; d * r];
    let mut s2 = vec![0.0; d * r];
    let mut jac = vec![0.0; d * d];
    let mut yp = vec![0.0; d];
    let mut ym = vec![0.0; d];

    for _ in 0..n_probes {
        let (x, y) = point(&mut rng);
        // A nearby partner for Lipschitz ratios.
        let dx = rng.random_range(-0.05..0.05);
        let dy: Vec<f64> = (0..d).map(|_| rng.random_range(-0.05..0.05)).collect();
        let x2 = x + dx;
        let y2: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + b).collect();
        let dist = (dx * dx + dy.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let ydist = dy.iter().map(|v| v * v).sum::<f64>().sqrt();

        (cs.b2)(x, &y, &mut v1);
        let nb2 = v1.iter().map(|v| v * v).sum::<f64>().sqrt();
        b2_env = b2_env.max(nb2 - (cs.b_hat)(x));
        (cs.b2)(x2, &y2, &mut v2);
        lip_b2 = lip_b2.max(frob_diff(&v1, &v2) / dist);

        let tr = cs.sigma_trace(x, &y, &mut s1);
        sig_env = sig_env.max(tr - (cs.sigma_hat_sq)(x));
        (cs.sigma)(x2, &y2, &mut s2);
        lip_sig = lip_sig.max(frob_diff(&s1, &s2) / dist);

        let ps = cs.psi_sum(x, &y);
        psi_lo = psi_lo.min(ps);
        psi_hi = psi_hi.max(ps);

        (cs.b1)(&y, &mut v1);
        (cs.b1)(&y2, &mut v2);
        lip_b1 = lip_b1.max(frob_diff(&v1, &v2) / ydist);

        // Central differences against the declared Jacobian.
        (cs.db1)(&y, &mut jac);
        let fd_h = 1e-5;
        for j in 0..d {
            yp.copy_from_slice(&y);
            ym.copy_from_slice(&y);
            yp[j] += fd_h;
            ym[j] -= fd_h;
            (cs.b1)(&yp, &mut v1);
            (cs.b1)(&ym, &mut v2);
            for i in 0..d {
                let fd = (v1[i] - v2[i]) / (2.0 * fd_h);
                let exact = jac[i * d + j];
                jac_err = jac_err.max((fd - exact).abs() / exact.abs().max(1.0));
            }
        }
        let m = nalgebra::DMatrix::from_row_slice(d, d, &jac);
        db1_norm = db1_norm.max(m.norm());
    }

    let slack = |declared: f64| declared * (1.0 + 1e-6) + tol;
    let checks = vec![
        Check::at_most("b_hat dominates |b2|", b2_env, tol),
        Check::at_most("sigma_hat_sq dominates Tr sigma sigma^T", sig_env, tol),
        Check::at_least("psi1 + psi2 >= c1", psi_lo, cs.c1 - tol),
        Check::at_most("psi1 + psi2 <= c2", psi_hi, cs.c2 + tol),
        Check::at_most("Lipschitz ratio of b1", lip_b1, slack(cs.lip_b1)),
        Check::at_most("Lipschitz ratio of b2", lip_b2, slack(cs.lip_b2)),
        Check::at_most("Lipschitz ratio of sigma", lip_sig, slack(cs.lip_sigma)),
        Check::at_most("Db1 matches finite differences", jac_err, 1e-6),
        Check::at_most(
            "Frobenius norm of Db1 within declared bound",
            db1_norm,
            slack(cs.db1_bound * (d as f64).sqrt()),
        ),
        Check::at_least("c1 positive", cs.c1, f64::MIN_POSITIVE),
    ];
    let mut report = VerificationReport::new("check_assumptions");
    report.param("catalog", cs.name.clone());
    report.param("n_probes", n_probes);
    report.param("probe_box", serde_json::to_value(probe).unwrap());
    for (name, kind) in [
        ("b_hat_l1", EnvelopeKind::BHat),
        ("sigma_hat_sq_l1", EnvelopeKind::SigmaHatSq),
    ] {
        let ok = l1_norm_envelope(cs, kind);
        let v = ok.clone().unwrap_or(f64::INFINITY);
        report.push_estimate(name, v, 0.0);
        report
            .checks
            .push(Check::at_most(&format!("{name} finite"), v, f64::MAX));
    }
    report.checks.extend(checks);
    report.finish();
    Ok(report)
}
