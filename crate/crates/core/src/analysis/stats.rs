//! Special functions and two-sample tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 500;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const C: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail `P(|T| >= |t|)` of Student's t with `nu` degrees of freedom.
pub fn student_t_two_sided(t: f64, nu: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(0.5 * nu, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0)
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_front = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        1.0 - sum * ln_front.exp()
    } else {
        // continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        ln_front.exp() * h
    }
}

/// Complementary error function via `Q(1/2, x^2)`.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else {
        gamma_q(0.5, x * x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    #[default]
    Welch,
    MannWhitney,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    /// Degrees of freedom (Welch only).
    pub df: Option<f64>,
    pub p: f64,
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Welch's unequal-variance t-test, two-sided.
///
/// When both sample variances are zero the statistic is `0` with `p = 1` for
/// equal means and `±inf` with `p = 0` otherwise.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid(format!(
            "welch test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("welch test needs finite values"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = Some(na + nb - 2.0);
        return Ok(if ma == mb {
            TestResult {
                kind: TestKind::Welch,
                statistic: 0.0,
                df,
                p: 1.0,
            }
        } else {
            TestResult {
                kind: TestKind::Welch,
                statistic: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TestResult {
        kind: TestKind::Welch,
        statistic: t,
        df: Some(df),
        p: student_t_two_sided(t, df),
    })
}

/// Mann-Whitney U test with the tie-corrected normal approximation and a
/// continuity correction, two-sided. The statistic is `U` of sample `a`.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("mann-whitney needs non-empty samples"));
    }
    let (na, nb) = (a.len(), b.len());
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    if all.iter().any(|(v, _)| !v.is_finite()) {
        return Err(Error::invalid("mann-whitney needs finite values"));
    }
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += all[i..=j].iter().filter(|x| x.1).count() as f64 * avg;
        i = j + 1;
    }
    let (fa, fb, fnn) = (na as f64, nb as f64, n as f64);
    let u = rank_sum_a - fa * (fa + 1.0) / 2.0;
    let mu = fa * fb / 2.0;
    let sigma2 = fa * fb / 12.0 * ((fnn + 1.0) - tie_term / (fnn * (fnn - 1.0)).max(1.0));
    let p = if sigma2 <= 0.0 {
        if u == mu {
            1.0
        } else {
            0.0
        }
    } else {
        let diff = ((u - mu).abs() - 0.5).max(0.0);
        erfc(diff / sigma2.sqrt() / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(TestResult {
        kind: TestKind::MannWhitney,
        statistic: u,
        df: None,
        p,
    })
}

pub fn two_sample_test(kind: TestKind, a: &[f64], b: &[f64]) -> Result<TestResult> {
    match kind {
        TestKind::Welch => welch_test(a, b),
        TestKind::MannWhitney => mann_whitney(a, b),
    }
}

/// Linear-interpolation quantile of `q` in `[0, 1]` over unsorted data.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn gamma_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
    }

    #[test]
    fn t_closed_forms() {
        // nu = 1 is Cauchy; nu = 2 has P = 1 - t / sqrt(2 + t^2)
        assert_abs_diff_eq!(student_t_two_sided(1.0, 1.0), 0.5, epsilon = 1e-14);
        for t in [0.1, 0.5, 2.0, 7.0] {
            let exact = 1.0 - t / (2.0 + t * t as f64).sqrt();
            assert_abs_diff_eq!(student_t_two_sided(t, 2.0), exact, epsilon = 1e-13);
        }
    }

    #[test]
    fn erfc_values() {
        assert_abs_diff_eq!(erfc(0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(erfc(1.0), 0.157_299_207_050_285_13, epsilon = 1e-14);
        assert_abs_diff_eq!(erfc(-1.0), 1.842_700_792_949_714_9, epsilon = 1e-14);
    }

    #[test]
    fn identical_samples() {
        let x = [1.0, 2.0, 3.5, 4.0];
        let r = welch_test(&x, &x).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_variances() {
        let r = welch_test(&[1.0, 1.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.p, 0.0);
        assert_eq!(r.statistic, f64::NEG_INFINITY);
        let r = welch_test(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.p, 1.0);
        assert!(welch_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mann_whitney_ties_and_extremes() {
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, 4.5);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-12);
        let a: Vec<f64> = (0..20).map(f64::from).collect();
        let b: Vec<f64> = (100..120).map(f64::from).collect();
        let r = mann_whitney(&a, &b).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p < 1e-6);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), Some(2.5));
        assert_eq!(quantile(&[5.0], 0.75), Some(5.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    proptest! {
        #[test]
        fn welch_is_symmetric(
            a in proptest::collection::vec(-10.0f64..10.0, 2..20),
            b in proptest::collection::vec(-10.0f64..10.0, 2..20),
        ) {
            let ab = welch_test(&a, &b).unwrap();
            let ba = welch_test(&b, &a).unwrap();
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!(ab.statistic == -ba.statistic || (ab.statistic.is_nan() && ba.statistic.is_nan()));
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn inc_beta_complement(a in 0.2f64..20.0, b in 0.2f64..20.0, x in 0.001f64..0.999) {
            let lhs = inc_beta(a, b, x) + inc_beta(b, a, 1.0 - x);
            prop_assert!((lhs - 1.0).abs() < 1e-10);
        }
    }
}
