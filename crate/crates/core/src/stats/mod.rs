//! Two-condition inferential procedure: IQR outlier screening, Shapiro-Wilk
//! normality, Levene homogeneity, Student t-test and Cohen's d.

mod battery;
mod descriptive;
mod hypothesis;
mod shapiro;

pub use battery::{
    render_text, run_battery, BatteryOptions, BatteryReport, Family, Metric, MetricReport,
    MetricSample, PairedMode, StatReport,
};
pub use descriptive::{iqr_fences, iqr_outliers, mean, quantile_type7, variance};
pub use hypothesis::{cohens_d, levene, t_test, EffectLabel, TestResult};
pub use shapiro::shapiro_wilk;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("at most {max} values supported, got {got}")]
    TooMany { max: usize, got: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("paired samples must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub(crate) fn at_least(values: &[f64], needed: usize) -> Result<(), StatsError> {
    if values.len() < needed {
        Err(StatsError::TooFew {
            needed,
            got: values.len(),
        })
    } else {
        check_finite(values)
    }
}
