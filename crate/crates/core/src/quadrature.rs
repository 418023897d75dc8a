//! Adaptive Gauss-Kronrod (7/15) quadrature for scalar and vector integrands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the odd Kronrod nodes (1, 3, 5) and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for the adaptive integrator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
    /// Mass of the envelope that may be discarded when truncating the real
    /// line to a finite interval.
    pub tail_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-13,
            max_intervals: 2000,
            tail_tol: 1e-10,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &mut [f64]),
{
    let c = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(c, buf);
    for i in 0..dim {
        kron[i] = WGK[7] * buf[i];
        gauss[i] = WG[3] * buf[i];
    }
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let dx = half * x;
        for s in [-1.0, 1.0] {
            f(c + s * dx, buf);
            for i in 0..dim {
                kron[i] += w * buf[i];
                if j % 2 == 1 {
                    gauss[i] += WG[j / 2] * buf[i];
                }
            }
        }
    }
    let mut err = 0.0_f64;
    for i in 0..dim {
        kron[i] *= half;
        gauss[i] *= half;
        err = err.max((kron[i] - gauss[i]).abs());
    }
    (kron, err)
}

/// Integrate a vector-valued `f` over `[a, b]`. `f(x, out)` fills `out`.
pub fn integrate_vec<F>(
    mut f: F,
    a: f64,
    b: f64,
    dim: usize,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    let mut buf = vec![0.0; dim];
    let (v, e) = gk15(&mut f, a, b, dim, &mut buf);
    let mut segments = vec![Segment {
        a,
        b,
        value: v,
        error: e,
    }];
    loop {
        let mut total = vec![0.0; dim];
        let mut err = 0.0;
        for s in &segments {
            for i in 0..dim {
                total[i] += s.value[i];
            }
            err += s.error;
        }
        if total.iter().any(|v| !v.is_finite()) || !err.is_finite() {
            return Err(Error::Integration(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if err <= spec.abs_tol.max(spec.rel_tol * scale) {
            return Ok(total);
        }
        if segments.len() >= spec.max_intervals {
            return Err(Error::Integration(format!(
                "no convergence on [{a}, {b}] after {} subintervals (error estimate {err:e})",
                segments.len()
            )));
        }
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .unwrap();
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        for (lo, hi) in [(s.a, mid), (mid, s.b)] {
            let (v, e) = gk15(&mut f, lo, hi, dim, &mut buf);
            segments.push(Segment {
                a: lo,
                b: hi,
                value: v,
                error: e,
            });
        }
    }
}

pub fn integrate<F>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x, out| out[0] = f(x), a, b, 1, spec).map(|v| v[0])
}

/// Integral over the whole real line: `[-1, 1]` plus dyadic blocks
/// `[2^k, 2^{k+1}]` on each side until a block pair is negligible. Blocks
/// that stop shrinking mean the tail is not integrable.
pub fn integrate_real_line<F>(mut f: F, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let nonint = |e| match e {
        Error::Integration(msg) => Error::NonIntegrable(msg),
        other => other,
    };
    let mut total = integrate(&mut f, -1.0, 1.0, spec).map_err(nonint)?;
    let mut lo = 1.0_f64;
    for _ in 0..200 {
        let hi = 2.0 * lo;
        let right = integrate_vec(
            |x, o| {
                let v = f(x);
                o[0] = v;
                o[1] = v.abs();
            },
            lo,
            hi,
            2,
            spec,
        )
        .map_err(nonint)?;
        let left = integrate_vec(
            |x, o| {
                let v = f(-x);
                o[0] = v;
                o[1] = v.abs();
            },
            lo,
            hi,
            2,
            spec,
        )
        .map_err(nonint)?;
        total += right[0] + left[0];
        if right[1] + left[1] <= spec.abs_tol.max(0.1 * spec.rel_tol * total.abs()) {
            return Ok(total);
        }
        lo = hi;
    }
    Err(Error::NonIntegrable("tail blocks do not decay".into()))
}

/// Integral of a nonnegative `f` over `[R, inf)`.
pub fn integrate_right_tail<F>(mut f: F, r: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    // x = r + t / (1 - t), t in [0, 1)
    let mapped = |t: f64| {
        let d = 1.0 - t;
        let v = f(r + t / d) / (d * d);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(mapped, 0.0, 1.0, spec)
}

/// Smallest radius `R` from {1, 2, 4, ...} whose two-sided tail mass of the
/// nonnegative envelope is below `spec.tail_tol`.
pub fn truncation_radius<F>(envelope: F, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut r = 1.0;
    while r <= 1.0e6 {
        let right = integrate_right_tail(&envelope, r, spec)?;
        let left = integrate_right_tail(|x| envelope(-x), r, spec)?;
        if right + left < spec.tail_tol {
            return Ok(r);
        }
        r *= 2.0;
    }
    Err(Error::NonIntegrable(
        "envelope tail mass does not vanish".into(),
    ))
}
