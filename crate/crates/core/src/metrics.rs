//! Summary statistics: means, sample standard deviation as the fairness
//! measure, 95% normal-approximation confidence intervals and improvement
//! percentages.

use std::fmt::Write as _;
use std::io::Read;

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

pub const SUMMARY_HEADER: &str = "metric,subset,n,mean,sd,ci_low,ci_high";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot summarize an empty sample")]
    Empty,
    #[error("improvement needs a positive baseline, got {0}")]
    NonPositiveBaseline(f64),
    #[error("user {0} is outside the report")]
    UnknownUser(usize),
    #[error("report csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample (n - 1) standard deviation; `None` for a single value.
    pub sd: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl StatSummary {
    pub fn ci_half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

pub fn mean(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn sample_sd(values: &[f64]) -> Result<Option<f64>, MetricsError> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Ok(None);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(Some((ss / (values.len() - 1) as f64).sqrt()))
}

pub fn summarize(values: &[f64]) -> Result<StatSummary, MetricsError> {
    let m = mean(values)?;
    let sd = sample_sd(values)?;
    let half = sd.map_or(0.0, |s| Z_95 * s / (values.len() as f64).sqrt());
    Ok(StatSummary {
        n: values.len(),
        mean: m,
        sd,
        ci_low: m - half,
        ci_high: m + half,
    })
}

pub fn improvement_pct(before: f64, after: f64) -> Result<f64, MetricsError> {
    if !(before > 0.0) {
        return Err(MetricsError::NonPositiveBaseline(before));
    }
    Ok(100.0 * (after - before) / before)
}

/// Sample SD of the per-user mean SINRs over `subset`.
pub fn fairness_sd(per_user_means: &[f64], subset: &[usize]) -> Result<Option<f64>, MetricsError> {
    let picked = subset
        .iter()
        .map(|&k| {
            per_user_means
                .get(k)
                .copied()
                .ok_or(MetricsError::UnknownUser(k))
        })
        .collect::<Result<Vec<_>, _>>()?;
    sample_sd(&picked)
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub subset: String,
    pub stats: StatSummary,
}

impl SummaryRow {
    pub fn new(metric: impl Into<String>, subset: impl Into<String>, stats: StatSummary) -> Self {
        Self {
            metric: metric.into(),
            subset: subset.into(),
            stats,
        }
    }
}

pub(crate) fn fmt_num(x: f64) -> String {
    format!("{x:.15e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let s = &r.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.metric,
            r.subset,
            s.n,
            fmt_num(s.mean),
            fmt_opt(s.sd),
            fmt_num(s.ci_low),
            fmt_num(s.ci_high)
        );
    }
    out
}

/// Per-user row of an averaged report (`user,mean_sinr,sd,ci_low,ci_high`).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub user: usize,
    pub mean_sinr: f64,
    pub sd: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const REPORT_HEADER: &str = "user,mean_sinr,sd,ci_low,ci_high";

/// Writes per-user summaries; users are 1-based in the file.
pub fn report_to_csv(per_user: &[StatSummary]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for (k, s) in per_user.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            k + 1,
            fmt_num(s.mean),
            fmt_opt(s.sd),
            fmt_num(s.ci_low),
            fmt_num(s.ci_high)
        );
    }
    out
}

pub fn read_report<R: Read>(reader: R) -> Result<Vec<ReportRow>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| MetricsError::Csv(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MetricsError::Csv(format!("missing column {name}")))
    };
    let (cu, cm, cs, cl, ch) = (
        col("user")?,
        col("mean_sinr")?,
        col("sd")?,
        col("ci_low")?,
        col("ci_high")?,
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MetricsError::Csv(e.to_string()))?;
        let num = |i: usize| -> Result<f64, MetricsError> {
            rec.get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|_| MetricsError::Csv(format!("bad number in {:?}", rec.get(i))))
        };
        let sd = match rec.get(cs).unwrap_or("").trim() {
            "" => None,
            _ => Some(num(cs)?),
        };
        out.push(ReportRow {
            user: rec
                .get(cu)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| MetricsError::Csv("bad user id".into()))?,
            mean_sinr: num(cm)?,
            sd,
            ci_low: num(cl)?,
            ci_high: num(ch)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_sample() {
        let s = summarize(&[5.0; 4]).unwrap();
        assert_eq!((s.mean, s.sd, s.ci_low, s.ci_high), (5.0, Some(0.0), 5.0, 5.0));
    }

    #[test]
    fn two_values() {
        // sd = sqrt(((4-5)^2 + (6-5)^2) / 1) = sqrt(2); half = 1.96 * sqrt(2)/sqrt(2)
        let s = summarize(&[4.0, 6.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.sd.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((s.ci_low - 3.04).abs() < 1e-12);
        assert!((s.ci_high - 6.96).abs() < 1e-12);
    }

    #[test]
    fn single_and_empty() {
        let s = summarize(&[7.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.ci_low, s.ci_high), (7.0, None, 7.0, 7.0));
        assert_eq!(summarize(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn improvement() {
        assert!((improvement_pct(100.0, 126.6).unwrap() - 26.6).abs() < 1e-12);
        assert_eq!(improvement_pct(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(improvement_pct(4.0, 2.0).unwrap(), -50.0);
        assert!(improvement_pct(0.0, 1.0).is_err());
        assert!(improvement_pct(-1.0, 1.0).is_err());
    }

    #[test]
    fn fairness() {
        assert_eq!(fairness_sd(&[3.0, 3.0, 3.0], &[0, 1, 2]).unwrap(), Some(0.0));
        assert_eq!(fairness_sd(&[3.0, 9.0], &[1]).unwrap(), None);
        assert!((fairness_sd(&[4.0, 6.0, 5.0, 100.0], &[0, 1, 2]).unwrap().unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fairness_sd(&[1.0], &[]), Err(MetricsError::Empty));
        assert_eq!(fairness_sd(&[1.0], &[3]), Err(MetricsError::UnknownUser(3)));
    }

    #[test]
    fn ci_halves_when_n_quadruples() {
        let base = [1.0, 2.0, 4.0, 7.0];
        let quad: Vec<f64> = base.iter().cycle().take(16).cloned().collect();
        let a = summarize(&base).unwrap();
        let b = summarize(&quad).unwrap();
        // Same spread up to the (n-1) correction.
        let corr = (4.0 * 3.0 / 15.0f64).sqrt();
        assert!((b.ci_half_width() / a.ci_half_width() - 0.5 * corr).abs() < 1e-12);
        // Width formula itself: 2 * 1.96 * sd / sqrt(n).
        assert!(((a.ci_high - a.ci_low) - 2.0 * Z_95 * a.sd.unwrap() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn report_round_trip_through_csv() {
        let per_user = vec![summarize(&[1.0, 3.0]).unwrap(), summarize(&[2.0]).unwrap()];
        let text = report_to_csv(&per_user);
        let rows = read_report(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].user, 1);
        assert_eq!(rows[0].mean_sinr, 2.0);
        assert_eq!(rows[1].sd, None);
        let csv = summary_to_csv(&[SummaryRow::new("sinr", "all", per_user[0])]);
        assert!(csv.starts_with(SUMMARY_HEADER));
    }

    proptest! {
        #[test]
        fn summarize_is_permutation_invariant(mut v in prop::collection::vec(-1e3f64..1e3, 1..30), seed in any::<u64>()) {
            let a = summarize(&v).unwrap();
            use rand::seq::SliceRandom;
            v.shuffle(&mut crate::seed::rng(seed));
            let b = summarize(&v).unwrap();
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * (1.0 + a.mean.abs()));
            prop_assert!(a.ci_low <= a.mean && a.mean <= a.ci_high);
            match (a.sd, b.sd) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x)),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn improvement_sign(before in 0.01f64..100.0, after in 0.0f64..100.0) {
            let r = improvement_pct(before, after).unwrap();
            prop_assert_eq!(r.partial_cmp(&0.0), (after - before).partial_cmp(&0.0));
            prop_assert_eq!(improvement_pct(before, before).unwrap(), 0.0);
        }
    }
}
