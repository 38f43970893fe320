//! Self-contained statistical kernel: Pearson correlation, Fisher z-transform,
//! paired t-test with p-values, and paired Cohen's d.
//!
//! The Student-t CDF is computed via the regularized incomplete beta function
//! (continued-fraction evaluation), so the crate carries no external statistics
//! dependency.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("correlation undefined: {0} input is constant")]
    ConstantInput(&'static str),
    #[error("degenerate paired test: differences have zero variance")]
    ZeroVariance,
    #[error("|r| must be < 1 for the Fisher transform, got {0}")]
    FisherDomain(f64),
}

/// Which tail(s) of the t distribution contribute to the p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sides {
    Two,
    /// One-sided test of whether `after` exceeds `before`.
    Greater,
}

/// Result of a paired t-test together with the paired Cohen's d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatResult {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub d: f64,
    pub n: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 divisor).
pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Population standard deviation (n divisor).
pub fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / xs.len() as f64).sqrt()
}

/// Sample Pearson correlation of two equally long, non-constant sequences.
///
/// Uses Welford-style centered accumulation; the test suite checks it against
/// a plain two-pass covariance oracle.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: x.len(),
        });
    }
    let mut mean_x = 0.0;
    let mut mean_y = 0.0;
    let mut m2_x = 0.0;
    let mut m2_y = 0.0;
    let mut co = 0.0;
    for (i, (&xi, &yi)) in x.iter().zip(y).enumerate() {
        let k = (i + 1) as f64;
        let dx = xi - mean_x;
        mean_x += dx / k;
        let dy = yi - mean_y;
        mean_y += dy / k;
        m2_x += dx * (xi - mean_x);
        m2_y += dy * (yi - mean_y);
        co += dx * (yi - mean_y);
    }
    if m2_x == 0.0 {
        return Err(StatsError::ConstantInput("first"));
    }
    if m2_y == 0.0 {
        return Err(StatsError::ConstantInput("second"));
    }
    Ok(co / (m2_x.sqrt() * m2_y.sqrt()))
}

/// Fisher z-transform, z = atanh(r).
pub fn fisher_z(r: f64) -> Result<f64, StatsError> {
    if !(r > -1.0 && r < 1.0) {
        return Err(StatsError::FisherDomain(r));
    }
    Ok(r.atanh())
}

/// Inverse Fisher transform, r = tanh(z).
pub fn inverse_fisher_z(z: f64) -> f64 {
    z.tanh()
}

/// Paired t-test on `before`/`after` with d_i = after_i − before_i.
///
/// t = mean(d) / (sd(d)/√n) with the sample sd; p from the Student-t CDF with
/// df = n − 1. No multiple-comparison correction is applied. The returned
/// Cohen's d satisfies t = d·√n exactly.
pub fn paired_t_test(before: &[f64], after: &[f64], sides: Sides) -> Result<StatResult, StatsError> {
    let d = cohens_d_paired(before, after)?;
    let n = before.len();
    let t = d * (n as f64).sqrt();
    let df = n - 1;
    let p = match sides {
        Sides::Two => {
            // 2·(1 − F(|t|)) expressed directly through the incomplete beta.
            let nu = df as f64;
            reg_inc_beta(nu / 2.0, 0.5, nu / (nu + t * t))
        }
        Sides::Greater => student_t_sf(t, df as f64),
    };
    Ok(StatResult { t, df, p, d, n })
}

/// Paired Cohen's d: mean of differences divided by their sample sd.
///
/// An identically-zero difference vector is the null identity and yields
/// d = 0; a constant nonzero difference vector is degenerate (sd = 0 with a
/// nonzero mean) and is an error.
pub fn cohens_d_paired(before: &[f64], after: &[f64]) -> Result<f64, StatsError> {
    if before.len() != after.len() {
        return Err(StatsError::LengthMismatch(before.len(), after.len()));
    }
    if before.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: before.len(),
        });
    }
    let diffs: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let sd = sample_std(&diffs);
    if sd == 0.0 {
        if diffs.iter().all(|&d| d == 0.0) {
            return Ok(0.0);
        }
        return Err(StatsError::ZeroVariance);
    }
    Ok(mean(&diffs) / sd)
}

/// CDF of the Student-t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    1.0 - student_t_sf(t, df)
}

/// Survival function 1 − F(t) of the Student-t distribution.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let half = 0.5 * reg_inc_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        half
    } else {
        1.0 - half
    }
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta function I_x(a, b).
fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz method).
fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

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

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, eps: f64) {
        assert!((a - b).abs() < eps, "{a} vs {b} (eps {eps})");
    }

    /// Plain two-pass covariance Pearson, independent of the Welford path.
    fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
        let mx = mean(x);
        let my = mean(y);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx.sqrt() * vy.sqrt())
    }

    #[test]
    fn pearson_identity_is_one() {
        let x = [1.0, 2.0, 3.0, 4.5];
        assert_close(pearson(&x, &x).unwrap(), 1.0, 1e-12);
    }

    #[test]
    fn pearson_reflection_is_minus_one() {
        let x = [1.0, 2.0, 3.0];
        let y = [-1.0, -2.0, -3.0];
        assert_close(pearson(&x, &y).unwrap(), -1.0, 1e-12);
    }

    #[test]
    fn pearson_hand_oracle() {
        // Hand evaluation: both means 2.5, cov sum 4, both var sums 5 -> 0.8.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert_close(pearson(&x, &y).unwrap(), 0.8, 1e-12);
    }

    #[test]
    fn pearson_constant_input_errors() {
        let x = [2.0, 2.0, 2.0];
        let y = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&x, &y), Err(StatsError::ConstantInput("first")));
        assert_eq!(pearson(&y, &x), Err(StatsError::ConstantInput("second")));
    }

    #[test]
    fn fisher_z_fixed_point_and_known_value() {
        assert_eq!(fisher_z(0.0).unwrap(), 0.0);
        // atanh(0.5) evaluated from the series oracle.
        assert_close(fisher_z(0.5).unwrap(), 0.5493061443340549, 1e-12);
        assert!(fisher_z(1.0).is_err());
        assert!(fisher_z(-1.0).is_err());
    }

    #[test]
    fn fisher_round_trip() {
        for r in [-0.9, -0.3, 0.0, 0.3, 0.7, 0.999] {
            assert_close(inverse_fisher_z(fisher_z(r).unwrap()), r, 1e-12);
        }
    }

    #[test]
    fn paired_t_null_identity() {
        // before = after: the null identity, t = 0 and two-sided p = 1.
        let x = [1.0, 2.0, 3.0];
        let r = paired_t_test(&x, &x, Sides::Two).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert_eq!(r.d, 0.0);
        // Balanced nonzero differences also land at t = 0.
        let before = [1.0, 2.0, 3.0];
        let after = [2.0, 2.0, 2.0];
        let r = paired_t_test(&before, &after, Sides::Two).unwrap();
        assert_close(r.t, 0.0, 1e-12);
        assert_close(r.p, 1.0, 1e-12);
    }

    #[test]
    fn paired_t_hand_oracle() {
        // Differences [1,2,3]: mean 2, sample sd 1, t = 2·√3, df = 2.
        // Closed form for df=2: p = 1 − t/√(t²+2) = 1 − √(6/7).
        let before = [0.0, 0.0, 0.0];
        let after = [1.0, 2.0, 3.0];
        let r = paired_t_test(&before, &after, Sides::Two).unwrap();
        assert_close(r.t, 2.0 * 3.0_f64.sqrt(), 1e-12);
        assert_eq!(r.df, 2);
        assert_close(r.p, 0.07417990022744858, 1e-10);
        assert_close(r.d, 2.0, 1e-12);
    }

    #[test]
    fn paired_t_constant_nonzero_differences_degenerate() {
        let before = [1.0, 2.0, 3.0];
        let after = [2.0, 3.0, 4.0];
        assert_eq!(
            paired_t_test(&before, &after, Sides::Two),
            Err(StatsError::ZeroVariance)
        );
    }

    #[test]
    fn cohens_d_hand_oracle_and_antisymmetry() {
        let before = [0.0, 0.0, 0.0];
        let after = [1.0, 2.0, 3.0];
        assert_close(cohens_d_paired(&before, &after).unwrap(), 2.0, 1e-12);
        assert_close(
            cohens_d_paired(&after, &before).unwrap(),
            -2.0,
            1e-12,
        );
    }

    #[test]
    fn cohens_d_null_identity_is_zero() {
        let x = [1.5, 2.0, 4.5];
        assert_eq!(cohens_d_paired(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn one_sided_p_is_half_of_two_sided_for_positive_t() {
        let before = [0.0, 0.0, 0.0, 0.0];
        let after = [1.0, 2.0, 3.0, 2.0];
        let two = paired_t_test(&before, &after, Sides::Two).unwrap();
        let one = paired_t_test(&before, &after, Sides::Greater).unwrap();
        assert!(two.t > 0.0);
        assert_close(one.p, two.p / 2.0, 1e-12);
    }

    #[test]
    fn t_cdf_symmetry() {
        for df in [1.0, 5.0, 30.0] {
            for t in [0.0, 0.5, 2.0, 7.5] {
                let lo = student_t_cdf(-t, df);
                let hi = student_t_cdf(t, df);
                assert_close(lo + hi, 1.0, 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn pearson_matches_two_pass_oracle(
            xs in proptest::collection::vec(-1e3..1e3f64, 2..200),
            ys in proptest::collection::vec(-1e3..1e3f64, 2..200),
        ) {
            let n = xs.len().min(ys.len());
            let x = &xs[..n];
            let y = &ys[..n];
            if let Ok(r) = pearson(x, y) {
                let oracle = pearson_two_pass(x, y);
                prop_assert!((r - oracle).abs() < 1e-12);
            }
        }

        #[test]
        fn t_equals_d_times_sqrt_n(
            pairs in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 2..50),
        ) {
            let before: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let after: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let Ok(res) = paired_t_test(&before, &after, Sides::Two) {
                let d = cohens_d_paired(&before, &after).unwrap();
                // Exact identity by construction, not just approximate.
                prop_assert_eq!(res.t, d * (res.n as f64).sqrt());
            }
        }

        #[test]
        fn reorder_invariance(
            pairs in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 3..40),
            seed in 0u64..1000,
        ) {
            let mut shuffled = pairs.clone();
            // Deterministic Fisher-Yates driven by the seed.
            let mut state = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            let (b1, a1): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let (b2, a2): (Vec<f64>, Vec<f64>) = shuffled.iter().copied().unzip();
            if let (Ok(r1), Ok(r2)) = (pearson(&b1, &a1), pearson(&b2, &a2)) { prop_assert!((r1 - r2).abs() < 1e-9) }
            if let (Ok(s1), Ok(s2)) = (
                paired_t_test(&b1, &a1, Sides::Two),
                paired_t_test(&b2, &a2, Sides::Two),
            ) {
                prop_assert!((s1.t - s2.t).abs() < 1e-9);
                prop_assert!((s1.p - s2.p).abs() < 1e-9);
                prop_assert!((s1.d - s2.d).abs() < 1e-9);
            }
        }
    }
}
