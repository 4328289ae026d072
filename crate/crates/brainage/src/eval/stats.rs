//! One-way ANOVA and supporting special functions, plus the registration
//! comparison metrics (Jacobian relative error, relative volume change).

use ndarray::ArrayD;

use crate::error::{Error, Result};

/// ln Gamma(x) for x > 0 (Lanczos approximation, ~1e-10 accuracy).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma domain");
    const C: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut sum = 1.000000000190015;
    for (i, &c) in C.iter().enumerate() {
        sum += c / (x + i as f64 + 1.0);
    }
    let tmp = x + 5.5;
    (x + 0.5) * tmp.ln() - tmp + (2.5066282746310005 * sum / x).ln()
}

/// Continued fraction for the incomplete beta function (Lentz's method).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
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

/// Regularized incomplete beta function I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "incomplete_beta parameters");
    assert!((0.0..=1.0).contains(&x), "incomplete_beta domain");
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let bt = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + a * x.ln()
        + b * (1.0 - x).ln())
    .exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Survival function of the F distribution: P(F_{d1, d2} > f).
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Classical one-way ANOVA: F statistic and p-value.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<(f64, f64)> {
    if groups.len() < 2 {
        return Err(Error::Argument(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::Argument(format!(
                "ANOVA group {i} has {} samples, need at least 2",
                g.len()
            )));
        }
    }
    let n_total: usize = groups.iter().map(Vec::len).sum();
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n_total as f64;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand) * (mean - grand);
        ss_within += g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    }
    let df_between = (groups.len() - 1) as f64;
    let df_within = (n_total - groups.len()) as f64;
    if ss_within <= 0.0 {
        return Err(Error::Argument(
            "ANOVA is degenerate: zero within-group variance".into(),
        ));
    }
    let f = (ss_between / df_between) / (ss_within / df_within);
    let p = f_survival(f, df_between, df_within);
    Ok((f, p))
}

/// Mean relative error between Jacobian determinant maps:
/// `||j_real - j_syn||_1 / ||j_real||_1`.
pub fn jacobian_relative_error(j_real: &ArrayD<f64>, j_syn: &ArrayD<f64>) -> Result<f64> {
    if j_real.shape() != j_syn.shape() {
        return Err(Error::Shape {
            expected: format!("{:?}", j_real.shape()),
            got: format!("{:?}", j_syn.shape()),
        });
    }
    let denom: f64 = j_real.iter().map(|v| v.abs()).sum();
    if denom <= 0.0 {
        return Err(Error::Argument(
            "reference Jacobian map has zero 1-norm".into(),
        ));
    }
    let num: f64 = j_real
        .iter()
        .zip(j_syn.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(num / denom)
}

/// Relative volume change `(v_x - v_base) / v_base`; negative for atrophy.
pub fn relative_change(v_base: f64, v_x: f64) -> Result<f64> {
    if v_base <= 0.0 {
        return Err(Error::Argument(format!(
            "baseline volume must be positive, got {v_base}"
        )));
    }
    Ok((v_x - v_base) / v_base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use statrs::distribution::{ContinuousCDF, FisherSnedecor};

    #[test]
    fn anova_textbook_example() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]];
        let (f, p) = one_way_anova(&groups).unwrap();
        assert!((f - 3.0).abs() < 1e-12);
        assert!((p - 0.125).abs() < 1e-9);
    }

    #[test]
    fn anova_zero_between_variance() {
        let groups = vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let (f, _) = one_way_anova(&groups).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn anova_degenerate_and_argument_errors() {
        assert!(one_way_anova(&[vec![1.0, 2.0]]).is_err());
        assert!(one_way_anova(&[vec![1.0], vec![2.0, 3.0]]).is_err());
        let constant = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(one_way_anova(&constant).is_err());
    }

    #[test]
    fn anova_matches_reference_oracle_on_random_groups() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        for _ in 0..50 {
            let k = rng.random_range(2..5usize);
            let groups: Vec<Vec<f64>> = (0..k)
                .map(|gi| {
                    let n = rng.random_range(3..12usize);
                    let offset = gi as f64 * rng.random_range(0.0..2.0);
                    (0..n)
                        .map(|_| offset + rng.random_range(-1.0..1.0))
                        .collect()
                })
                .collect();
            let (f, p) = one_way_anova(&groups).unwrap();

            // Reference F from the definition, p from statrs.
            let n_total: usize = groups.iter().map(Vec::len).sum();
            let d1 = (groups.len() - 1) as f64;
            let d2 = (n_total - groups.len()) as f64;
            let dist = FisherSnedecor::new(d1, d2).unwrap();
            let p_ref = 1.0 - dist.cdf(f);
            assert!(
                (p - p_ref).abs() < 1e-6,
                "p {p} vs statrs {p_ref} at F {f}"
            );
        }
    }

    #[test]
    fn incomplete_beta_against_oracle() {
        // statrs exposes the F CDF; invert our survival through it.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..50 {
            let d1 = rng.random_range(1..20) as f64;
            let d2 = rng.random_range(2..30) as f64;
            let f = rng.random_range(0.01..8.0);
            let dist = FisherSnedecor::new(d1, d2).unwrap();
            let ours = f_survival(f, d1, d2);
            let reference = 1.0 - dist.cdf(f);
            assert!(
                (ours - reference).abs() < 1e-9,
                "sf({f}; {d1}, {d2}) = {ours} vs {reference}"
            );
        }
    }

    #[test]
    fn anova_invariances() {
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let groups: Vec<Vec<f64>> = (0..3)
            .map(|gi| {
                (0..6)
                    .map(|_| gi as f64 + rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let (f0, p0) = one_way_anova(&groups).unwrap();

        let shifted: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|x| x + 17.5).collect())
            .collect();
        let (f1, _) = one_way_anova(&shifted).unwrap();
        assert!((f0 - f1).abs() < 1e-9);

        let scaled: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|x| x * -3.25).collect())
            .collect();
        let (f2, p2) = one_way_anova(&scaled).unwrap();
        assert!((f0 - f2).abs() < 1e-9);
        assert!((p0 - p2).abs() < 1e-9);
    }

    #[test]
    fn jacobian_error_analytic_cases() {
        let j = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(jacobian_relative_error(&j, &j).unwrap(), 0.0);

        let scaled = j.mapv(|v| 1.1 * v);
        assert!((jacobian_relative_error(&j, &scaled).unwrap() - 0.1).abs() < 1e-12);

        let dropped = ArrayD::from_shape_vec(IxDyn(&[2, 2]), vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((jacobian_relative_error(&j, &dropped).unwrap() - 0.25).abs() < 1e-12);

        let zero = ArrayD::zeros(IxDyn(&[2, 2]));
        assert!(jacobian_relative_error(&zero, &j).is_err());
    }

    #[test]
    fn jacobian_error_scale_covariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let j = ArrayD::from_shape_fn(IxDyn(&[3, 4]), |_| rng.random_range(0.1..2.0));
        for c in [0.5, 0.9, 1.3, 2.0] {
            let scaled = j.mapv(|v| c * v);
            let err = jacobian_relative_error(&j, &scaled).unwrap();
            assert!((err - (1.0f64 - c).abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_change_conventions() {
        assert_eq!(relative_change(100.0, 100.0).unwrap(), 0.0);
        // Atrophy is negative.
        assert!((relative_change(100.0, 93.0).unwrap() + 0.07).abs() < 1e-12);
        assert!(relative_change(0.0, 5.0).is_err());
        assert!(relative_change(-1.0, 5.0).is_err());
    }
}
