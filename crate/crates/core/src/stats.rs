//! Order-deterministic reductions and the test statistics used by the
//! verification harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{invalid, Result};

/// Pairwise summation in index order. The result depends only on the
/// sequence, never on how it was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let (m, _) = mean_se(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (xs.len().max(2) - 1) as f64
}

/// Sorted finite sample of a scalar statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    sorted: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return invalid("empirical law needs at least one sample");
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return invalid("empirical law samples must be finite");
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// Fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.len() as f64
    }
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &EmpiricalLaw, b: &EmpiricalLaw) -> f64 {
    let (xa, xb) = (a.samples(), b.samples());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS distance against a continuous CDF.
pub fn ks_one_sample(a: &EmpiricalLaw, cdf: impl Fn(f64) -> f64) -> f64 {
    let n = a.len() as f64;
    a.samples()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sample KS critical value `c(alpha) sqrt((n+m)/(n m))`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Anderson-Darling `A^2` against a fully specified `N(mean, sd^2)`.
pub fn anderson_darling_normal(law: &EmpiricalLaw, mean: f64, sd: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("positive standard deviation");
    let n = law.len();
    let xs = law.samples();
    let s: f64 = (0..n)
        .map(|i| {
            let fi = normal.cdf(xs[i]).clamp(1e-300, 1.0 - 1e-16);
            let fr = normal.cdf(xs[n - 1 - i]).clamp(1e-300, 1.0 - 1e-16);
            (2 * i + 1) as f64 * (fi.ln() + (1.0 - fr).ln())
        })
        .sum();
    -(n as f64) - s / n as f64
}

/// 1% critical value of `A^2` for a fully specified null distribution.
pub const AD_CRITICAL_1PCT: f64 = 3.857;

/// Least-squares line `y = intercept + slope x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% confidence interval for the slope.
    pub ci: [f64; 2],
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return invalid("regression needs at least two matching points");
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return invalid("regression abscissae are all equal");
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_se, ci) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .map(|d| d.inverse_cdf(0.975))
            .unwrap_or(1.96);
        (se, [slope - t * se, slope + t * se])
    } else {
        (0.0, [slope, slope])
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        ci,
    })
}

/// Slope of `log y` against `log x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return invalid("log-log regression needs positive data");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_identical_and_disjoint() {
        let a = EmpiricalLaw::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        let b = EmpiricalLaw::new(vec![10.0, 11.0]).unwrap();
        assert_eq!(ks_two_sample(&a, &b), 1.0);
        let c = EmpiricalLaw::new(vec![1.5, 2.5, 3.5, 4.5]).unwrap();
        // F_a(3) = 1, F_c(3) = 0.5
        assert!((ks_two_sample(&a, &c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_handles_ties() {
        let a = EmpiricalLaw::new(vec![0.0; 5]).unwrap();
        let b = EmpiricalLaw::new(vec![0.0; 7]).unwrap();
        assert_eq!(ks_two_sample(&a, &b), 0.0);
    }

    #[test]
    fn critical_value_matches_table() {
        // c(0.05) = 1.358
        let v = ks_critical_value(100, 100, 0.05);
        assert!((v - 1.358 * (0.02f64).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn regression_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 + 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        let f = loglog_fit(
            &[0.25, 0.5, 1.0, 2.0],
            &[0.5, 0.5f64.sqrt(), 1.0, 2f64.sqrt()],
        )
        .unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn anderson_darling_on_quantiles_is_small() {
        let n = 500;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..n)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n as f64))
            .collect();
        let law = EmpiricalLaw::new(xs.clone()).unwrap();
        assert!(anderson_darling_normal(&law, 0.0, 1.0) < 0.1);
        let shifted = EmpiricalLaw::new(xs.iter().map(|v| v + 1.0).collect()).unwrap();
        assert!(anderson_darling_normal(&shifted, 0.0, 1.0) > AD_CRITICAL_1PCT);
    }

    proptest! {
        #[test]
        fn pairwise_sum_close_to_naive(xs in proptest::collection::vec(-1e3f64..1e3, 0..300)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + xs.iter().map(|v| v.abs()).sum::<f64>()));
        }

        #[test]
        fn ks_is_symmetric_and_bounded(a in proptest::collection::vec(-5f64..5.0, 1..60),
                                       b in proptest::collection::vec(-5f64..5.0, 1..60)) {
            let la = EmpiricalLaw::new(a).unwrap();
            let lb = EmpiricalLaw::new(b).unwrap();
            let d = ks_two_sample(&la, &lb);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ks_two_sample(&lb, &la));
        }
    }
}
