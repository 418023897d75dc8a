use std::io::{self, Write};

use crate::error::{invalid, Result};
use crate::limit::{sample_v, FractionalKineticPath};
use crate::paths::{write_columns_csv, SeedSpec, TimeGrid};

/// `q(t) = cos t + sqrt(eps) |sigma| int_0^t cos(t - s) dV(s)` for the
/// oscillator, next to `cos t`.
#[derive(Clone, Debug)]
pub struct OscillatorDemo {
    pub grid: TimeGrid,
    pub sqrt_eps: f64,
    pub sigma_l2: f64,
    pub cos: Vec<f64>,
    pub q: Vec<f64>,
    pub v: FractionalKineticPath,
}

impl OscillatorDemo {
    /// `max_k |q(t_k) - cos(t_k)|`.
    pub fn max_deviation(&self) -> f64 {
        self.q
            .iter()
            .zip(&self.cos)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Columns `t,cos,q,V,L`.
    pub fn write_csv<W: Write>(&self, out: &mut W, comments: &[String]) -> io::Result<()> {
        let names = ["cos", "q", "V", "L"].map(String::from);
        let cols = vec![
            self.cos.clone(),
            self.q.clone(),
            self.v.v.component(0),
            self.v.local_time.values().to_vec(),
        ];
        write_columns_csv(out, comments, &self.grid, &names, &cols)
    }
}

/// The stochastic integral is a left-point sum of
/// `cos t sum cos(s) dV + sin t sum sin(s) dV`, so `q` is linear in
/// `sigma_l2` for a fixed seed and equals `cos` exactly when it is 0.
pub fn oscillator_demo(
    sqrt_eps: f64,
    sigma_l2: f64,
    grid: &TimeGrid,
    seed: SeedSpec,
    h_inner: f64,
) -> Result<OscillatorDemo> {
    if !(sqrt_eps >= 0.0) || !(sigma_l2 >= 0.0) || !sqrt_eps.is_finite() || !sigma_l2.is_finite() {
        return invalid("sqrt_eps and sigma_l2 must be finite and nonnegative");
    }
    let v = sample_v(grid, 1, seed, h_inner)?;
    let scale = sqrt_eps * sigma_l2;
    let n = grid.len();
    let mut cos = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let (mut c, mut s) = (0.0, 0.0);
    for k in 0..n {
        let t = grid.node(k);
        cos.push(t.cos());
        q.push(t.cos() + scale * (t.cos() * c + t.sin() * s));
        if k + 1 < n {
            let dv = v.v.get(k + 1, 0) - v.v.get(k, 0);
            c += t.cos() * dv;
            s += t.sin() * dv;
        }
    }
    Ok(OscillatorDemo {
        grid: *grid,
        sqrt_eps,
        sigma_l2,
        cos,
        q,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::with_max_step(2.0 * std::f64::consts::PI, 1e-2).unwrap()
    }

    #[test]
    fn zero_sigma_is_cosine() {
        let d = oscillator_demo(0.1, 0.0, &grid(), SeedSpec::new(3, 0), 1e-3).unwrap();
        assert_eq!(d.q, d.cos);
        assert_eq!(d.max_deviation(), 0.0);
    }

    #[test]
    fn deviation_is_linear_in_sigma() {
        let a = oscillator_demo(0.1, 10.0, &grid(), SeedSpec::new(3, 0), 1e-3).unwrap();
        let b = oscillator_demo(0.1, 100.0, &grid(), SeedSpec::new(3, 0), 1e-3).unwrap();
        let ratio = b.max_deviation() / a.max_deviation();
        assert!((ratio - 10.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn csv_has_header() {
        let d = oscillator_demo(0.1, 1.0, &grid(), SeedSpec::new(3, 0), 1e-3).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf, &[]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,cos,q,V,L"));
    }
}
