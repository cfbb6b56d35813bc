//! Independent reference computations shared by integration tests.
//!
//! Nothing here calls into the library's numerical routines; each oracle is a
//! direct, slow evaluation of the defining formula.

#![allow(dead_code, clippy::excessive_precision)]

use std::f64::consts::FRAC_PI_2;

/// Tanh-sinh quadrature of `f` over `[a, b]`, refined until successive
/// levels agree to `tol` (relative).
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let r = 0.5 * (b - a);
    let node = |t: f64| -> f64 {
        let s = FRAC_PI_2 * t.sinh();
        let x = s.tanh();
        let w = FRAC_PI_2 * t.cosh() / (s.cosh() * s.cosh());
        // distance to the nearer endpoint, computed without cancellation
        let d = (-s.abs()).exp() / s.cosh();
        let y = if x > 0.0 { b - r * d } else { a + r * d };
        if !(y > a && y < b) {
            return 0.0;
        }
        let v = f(y) * w;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let tmax = 4.0;
    let mut h = 0.5;
    let mut sum = node(0.0);
    let mut k = 1;
    while k as f64 * h <= tmax {
        let t = k as f64 * h;
        sum += node(t) + node(-t);
        k += 1;
    }
    let mut prev = r * h * sum;
    for _ in 0..12 {
        h *= 0.5;
        let mut k = 1;
        while k as f64 * h <= tmax {
            let t = k as f64 * h;
            sum += node(t) + node(-t);
            k += 2;
        }
        let est = r * h * sum;
        if (est - prev).abs() <= tol * est.abs().max(1e-300) {
            return est;
        }
        prev = est;
    }
    prev
}

/// Two-sided Student-t tail probability `P(|T| >= |t|)` with `nu` degrees of
/// freedom, by quadrature of the unnormalized density on `x = tan(theta)`.
/// The normalizing constant is integrated too, so no gamma function is used.
pub fn t_two_sided_oracle(t: f64, nu: f64) -> f64 {
    // (1 + tan^2/nu)^(-(nu+1)/2) sec^2 = (cos^2 + sin^2/nu)^(-(nu+1)/2) cos^(nu-1)
    let g = |th: f64| {
        let (s, c) = th.sin_cos();
        (c * c + s * s / nu).powf(-(nu + 1.0) / 2.0) * c.powf(nu - 1.0)
    };
    let lo = t.abs().atan();
    let tail = tanh_sinh(g, lo, FRAC_PI_2, 1e-15);
    let total = tanh_sinh(g, 0.0, FRAC_PI_2, 1e-15);
    (tail / total).clamp(0.0, 1.0)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch statistic, Welch-Satterthwaite degrees of freedom and the oracle
/// two-sided p-value.
pub fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let t = (ma - mb) / (sa + sb).sqrt();
    let nu = (sa + sb).powi(2) / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    (t, nu, t_two_sided_oracle(t, nu))
}

/// Twenty fixed sample pairs for the Welch fixtures.
pub fn welch_cases() -> Vec<(Vec<f64>, Vec<f64>)> {
    // deterministic pseudo-random values from a linear congruential stream
    let mut state: u64 = 0x5EED_1234;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    };
    let sizes = [
        (2, 2),
        (2, 5),
        (3, 3),
        (3, 8),
        (4, 4),
        (5, 12),
        (6, 6),
        (7, 3),
        (8, 8),
        (10, 4),
        (10, 10),
        (12, 20),
        (15, 15),
        (20, 6),
        (25, 25),
        (30, 12),
        (40, 40),
        (50, 9),
        (60, 60),
        (100, 80),
    ];
    sizes
        .iter()
        .enumerate()
        .map(|(k, &(na, nb))| {
            let shift = 0.15 * (k % 7) as f64;
            let sa = 0.5 + (k % 3) as f64;
            let sb = 0.3 + (k % 5) as f64 * 0.4;
            let a: Vec<f64> = (0..na).map(|_| shift + sa * (next() - 0.5)).collect();
            let b: Vec<f64> = (0..nb).map(|_| sb * (next() - 0.5)).collect();
            (a, b)
        })
        .collect()
}

/// Oracle p-values for [`welch_cases`], computed once with
/// [`t_two_sided_oracle`] and frozen here.
pub const WELCH_FROZEN_P: [f64; 20] = [
    9.53741319990088821e-1,
    2.45568444081801424e-1,
    3.29942664223510873e-1,
    2.50527153410171177e-1,
    1.60409482730957537e-1,
    3.92648993633267010e-2,
    4.35857306515113161e-5,
    9.54329816612601439e-3,
    1.61360600518106440e-1,
    9.60192790180841249e-1,
    3.10614066696906588e-4,
    2.81182952285549464e-3,
    3.28158772013413641e-8,
    1.63002844597069617e-2,
    2.27080550593649656e-2,
    1.13889846399329690e-2,
    1.84344502027722762e-2,
    3.03023156388680399e-3,
    4.02350209306069538e-12,
    1.15430925656568552e-16,
];

/// Brute-force cosine-rule label: 0 = collapse, 1 = conflict, 2 = aligned.
pub fn stage_rule_oracle(err: (f64, f64), reference: (f64, f64), theta: f64) -> u8 {
    let dot = err.0 * reference.0 + err.1 * reference.1;
    let norm = (err.0 * err.0 + err.1 * err.1).sqrt() * (reference.0 * reference.0 + reference.1 * reference.1).sqrt();
    let c = dot / norm;
    if c < -theta {
        0
    } else if c > theta {
        2
    } else {
        1
    }
}

/// Root of `-p ln p = u` on the branch `p in (0, 1/e]`, by plain bisection.
pub fn neg_p_ln_p_root_oracle(u: f64) -> f64 {
    if u == 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0 / std::f64::consts::E);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let h = if mid > 0.0 { -mid * mid.ln() } else { 0.0 };
        if h < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
