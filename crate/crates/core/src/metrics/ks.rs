use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Other("KS sample contains NaN".into()));
    }
    let statistic = ks_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * statistic;
    Ok(KsResult { statistic, p_value: kolmogorov_q(lambda) })
}

/// Largest gap between the two empirical CDFs.
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`, clamped to `[0, 1]`.
///
/// Below `x = 1.18` the alternating series converges slowly, so the
/// equivalent Jacobi theta form is summed instead.
pub fn kolmogorov_q(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let q = if x < 1.18 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut s = 0.0;
        for k in 1..=50 {
            let m = (2 * k - 1) as f64;
            let t = (-m * m * c).exp();
            s += t;
            if t < 1e-300 {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s
    } else {
        let mut s = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let t = (-2.0 * (k * k) as f64 * x * x).exp();
            s += sign * t;
            sign = -sign;
            if t < 1e-300 {
                break;
            }
        }
        2.0 * s
    };
    q.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = ks_two_sample(&a, &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 0.1);
        let big: Vec<f64> = (0..500).map(f64::from).collect();
        let far: Vec<f64> = (1000..1500).map(f64::from).collect();
        assert!(ks_two_sample(&big, &far).unwrap().p_value < 1e-100);
    }

    #[test]
    fn empty_rejected() {
        assert!(matches!(ks_two_sample(&[], &[1.0]), Err(Error::EmptySample)));
    }

    #[test]
    fn branches_agree_at_switch() {
        // both forms evaluate the same function
        for x in [0.9, 1.0, 1.1, 1.18, 1.25, 1.4] {
            let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
            let theta = 1.0
                - (2.0 * std::f64::consts::PI).sqrt() / x * (1..=30).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum::<f64>();
            let series = 2.0 * (1..=100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp()).sum::<f64>();
            assert!((theta - series).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn known_quantiles() {
        // classical critical values of the Kolmogorov distribution
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_q(1.2238) - 0.10).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn symmetric(a in prop::collection::vec(0i32..20, 1..40), b in prop::collection::vec(0i32..20, 1..40)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            prop_assert_eq!(ks_two_sample(&a, &b).unwrap(), ks_two_sample(&b, &a).unwrap());
        }

        #[test]
        fn statistic_matches_exhaustive_cdf(a in prop::collection::vec(0i32..10, 1..30), b in prop::collection::vec(0i32..10, 1..30)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
            let brute = a.iter().chain(&b).map(|&t| (cdf(&a, t) - cdf(&b, t)).abs()).fold(0.0, f64::max);
            prop_assert_eq!(ks_two_sample(&a, &b).unwrap().statistic, brute);
        }
    }
}
