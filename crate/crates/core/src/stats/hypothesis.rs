use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::descriptive::{mean, variance};
use super::{at_least, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p: f64,
}

/// Upper tail of F(d1, d2) at `f`.
fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Two-sided tail of Student's t with `df` degrees of freedom.
fn t_two_sided(t: f64, df: f64) -> f64 {
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Levene's test, mean-centered: one-way ANOVA on `|x − mean(group)|`.
pub fn levene(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    at_least(a, 2)?;
    at_least(b, 2)?;
    let dev = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).abs()).collect::<Vec<_>>()
    };
    let (za, zb) = (dev(a), dev(b));
    let (ma, mb) = (mean(&za), mean(&zb));
    let (na, nb) = (za.len() as f64, zb.len() as f64);
    let grand = (za.iter().sum::<f64>() + zb.iter().sum::<f64>()) / (na + nb);
    let between = na * (ma - grand).powi(2) + nb * (mb - grand).powi(2);
    let within: f64 = za.iter().map(|z| (z - ma).powi(2)).sum::<f64>()
        + zb.iter().map(|z| (z - mb).powi(2)).sum::<f64>();
    if !(within > 0.0) {
        return Err(StatsError::Degenerate("absolute deviations have no spread".into()));
    }
    let df2 = na + nb - 2.0;
    let statistic = df2 * between / within;
    Ok(TestResult {
        statistic,
        p: f_sf(statistic, 1.0, df2),
    })
}

/// Student t-test, two-sided. Independent samples use the pooled variance;
/// `paired` runs a one-sample test on `a − b`.
pub fn t_test(a: &[f64], b: &[f64], paired: bool) -> Result<TestResult, StatsError> {
    at_least(a, 2)?;
    at_least(b, 2)?;
    if paired {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let var = variance(&d);
        if !(var > 0.0) {
            return Err(StatsError::Degenerate("paired differences have zero variance".into()));
        }
        let n = d.len() as f64;
        let t = mean(&d) / (var / n).sqrt();
        return Ok(TestResult {
            statistic: t,
            p: t_two_sided(t, n - 1.0),
        });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / df;
    if !(pooled > 0.0) {
        return Err(StatsError::Degenerate("pooled variance is zero".into()));
    }
    let t = (mean(a) - mean(b)) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TestResult {
        statistic: t,
        p: t_two_sided(t, df),
    })
}

/// `(mean_a − mean_b) / pooled SD`, pooled over `n_a + n_b − 2`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    at_least(a, 2)?;
    at_least(b, 2)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(StatsError::Degenerate("pooled standard deviation is zero".into()));
    }
    Ok((mean(a) - mean(b)) / pooled.sqrt())
}

/// Effect size on the 0.2 / 0.5 / 0.8 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectLabel {
    None,
    Small,
    Medium,
    Large,
}

impl EffectLabel {
    pub fn of(d: f64) -> Self {
        match d.abs() {
            x if x >= 0.8 => EffectLabel::Large,
            x if x >= 0.5 => EffectLabel::Medium,
            x if x >= 0.2 => EffectLabel::Small,
            _ => EffectLabel::None,
        }
    }
}

impl fmt::Display for EffectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectLabel::None => "none (<0.2)",
            EffectLabel::Small => "small (≥0.2)",
            EffectLabel::Medium => "medium (≥0.5)",
            EffectLabel::Large => "large (≥0.8)",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let t = t_test(&a, &a, false).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_abs_diff_eq!(t.p, 1.0);
        assert_eq!(cohens_d(&a, &a).unwrap(), 0.0);
        assert_eq!(EffectLabel::of(0.0), EffectLabel::None);
    }

    #[test]
    fn paired_zero_variance_is_an_error() {
        let a = [1.0, 2.0, 3.0];
        assert!(matches!(t_test(&a, &a, true), Err(StatsError::Degenerate(_))));
        assert!(matches!(t_test(&a, &[1.0, 2.0], true), Err(StatsError::LengthMismatch(3, 2))));
    }

    #[test]
    fn levene_shift_gives_zero_statistic() {
        let a = [1.0, 4.0, 6.0, 9.0];
        let b: Vec<f64> = a.iter().map(|x| x + 50.0).collect();
        let r = levene(&a, &b).unwrap();
        assert_abs_diff_eq!(r.statistic, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-12);
        assert!(levene(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn levene_small_example() {
        // scipy.stats.levene(center="mean")
        let r = levene(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_abs_diff_eq!(r.statistic, 9.623762376237623, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p, 0.021056767112156507, epsilon = 1e-9);
    }

    #[test]
    fn d_of_one_pooled_sd() {
        // both samples have SD 1, means 1 apart
        let a = [1.0, 2.0, 3.0];
        let b = [0.0, 1.0, 2.0];
        assert_abs_diff_eq!(cohens_d(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(EffectLabel::of(1.0), EffectLabel::Large);
        assert!(cohens_d(&[2.0, 2.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn labels_follow_the_scale() {
        assert_eq!(EffectLabel::of(0.61), EffectLabel::Medium);
        assert_eq!(EffectLabel::of(0.61).to_string(), "medium (≥0.5)");
        assert_eq!(EffectLabel::of(-0.2), EffectLabel::Small);
        assert_eq!(EffectLabel::of(0.19), EffectLabel::None);
        assert_eq!(EffectLabel::of(-0.8), EffectLabel::Large);
    }
}
