//! Naive Bayes stroke posterior and the priority weight derived from it.
//!
//! Each outpatient's own history is the training set: the prior is the share
//! of stroke days, and each feature contributes the share of stroke days on
//! which it sat at the level the patient reports now. The posterior PS is the
//! prior times the four conditionals, and the weight is `UP = 1 + alpha * PS`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::medrecords::{CurrentState, Feature, FeatureLevel, MedicalRecord};

pub const RISK_HEADER: &str = "user_id,is_op,ps,up";

/// Tuning factors swept in the experiments.
pub const DEFAULT_ALPHAS: [f64; 5] = [50.0, 100.0, 150.0, 250.0, 500.0];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RiskError {
    #[error("medical record `{0}` has no days")]
    EmptyRecord(String),
    #[error("undefined conditional: record `{0}` has no days in the conditioning class")]
    UndefinedConditional(String),
    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),
    #[error("probability out of range: {0}")]
    InvalidProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    Off,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub alpha: f64,
    #[serde(default)]
    pub smoothing: Smoothing,
}

impl RiskConfig {
    pub fn new(alpha: f64) -> Result<Self, RiskError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(RiskError::InvalidAlpha(alpha));
        }
        Ok(Self {
            alpha,
            smoothing: Smoothing::Off,
        })
    }

    pub fn with_smoothing(mut self, smoothing: Smoothing) -> Self {
        self.smoothing = smoothing;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskProfile {
    pub user_id: usize,
    pub is_outpatient: bool,
    pub ps: f64,
    pub up: f64,
}

pub fn prior_stroke(record: &MedicalRecord) -> Result<f64, RiskError> {
    if record.days.is_empty() {
        return Err(RiskError::EmptyRecord(record.patient_id.clone()));
    }
    Ok(record.stroke_days() as f64 / record.days.len() as f64)
}

/// P(feature = level | stroke = class_value) counted over the record's days.
pub fn conditional_probability(
    record: &MedicalRecord,
    feature: Feature,
    level: FeatureLevel,
    class_value: bool,
    smoothing: Smoothing,
) -> Result<f64, RiskError> {
    let in_class = record.days.iter().filter(|d| d.stroke == class_value);
    let (class_count, joint) = in_class.fold((0usize, 0usize), |(c, j), d| {
        (c + 1, j + usize::from(d.level(feature) == level))
    });
    match smoothing {
        Smoothing::Off if class_count == 0 => {
            Err(RiskError::UndefinedConditional(record.patient_id.clone()))
        }
        Smoothing::Off => Ok(joint as f64 / class_count as f64),
        Smoothing::Laplace => {
            let levels = FeatureLevel::ALL.len();
            Ok((joint + 1) as f64 / (class_count + levels) as f64)
        }
    }
}

/// Stroke posterior PS for an outpatient in the given current state.
///
/// A record without a single stroke day has a zero prior; with smoothing off
/// its conditionals are undefined, so PS is reported as 0 and a warning is
/// logged. Such a patient ends up with the normal-user weight.
pub fn posterior_stroke(
    record: &MedicalRecord,
    state: &CurrentState,
    smoothing: Smoothing,
) -> Result<f64, RiskError> {
    let prior = prior_stroke(record)?;
    if record.stroke_days() == 0 && smoothing == Smoothing::Off {
        log::warn!(
            "record `{}` has no stroke days; stroke posterior set to 0",
            record.patient_id
        );
        return Ok(0.0);
    }
    Feature::ALL.iter().try_fold(prior, |acc, &f| {
        Ok(acc * conditional_probability(record, f, state.level(f), true, smoothing)?)
    })
}

pub fn priority(ps: f64, config: &RiskConfig, is_outpatient: bool) -> f64 {
    if is_outpatient {
        1.0 + config.alpha * ps
    } else {
        1.0
    }
}

/// Profiles for users `0..num_users`; the last `op_ps.len()` users are the
/// outpatients, in order.
pub fn build_profiles(
    num_users: usize,
    op_ps: &[f64],
    config: &RiskConfig,
) -> Result<Vec<RiskProfile>, RiskError> {
    if op_ps.len() > num_users {
        return Err(RiskError::InvalidProbability(f64::NAN));
    }
    if let Some(&bad) = op_ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(RiskError::InvalidProbability(bad));
    }
    let num_normal = num_users - op_ps.len();
    Ok((0..num_users)
        .map(|k| {
            let is_op = k >= num_normal;
            let ps = if is_op { op_ps[k - num_normal] } else { 0.0 };
            RiskProfile {
                user_id: k,
                is_outpatient: is_op,
                ps,
                up: priority(ps, config, is_op),
            }
        })
        .collect())
}

/// Risk CSV with 1-based user ids.
pub fn profiles_to_csv(profiles: &[RiskProfile]) -> String {
    let mut out = format!("{RISK_HEADER}\n");
    for p in profiles {
        let _ = writeln!(
            out,
            "{},{},{:.17e},{:.17e}",
            p.user_id + 1,
            u8::from(p.is_outpatient),
            p.ps,
            p.up
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medrecords::DayEntry;
    use FeatureLevel::*;

    fn record(days: &[([FeatureLevel; 4], bool)]) -> MedicalRecord {
        MedicalRecord {
            patient_id: "t".into(),
            days: days
                .iter()
                .enumerate()
                .map(|(i, (levels, stroke))| DayEntry {
                    day: i as u32 + 1,
                    levels: *levels,
                    stroke: *stroke,
                })
                .collect(),
        }
    }

    fn stroke_on(n: usize, stroke_days: &[usize]) -> MedicalRecord {
        let days: Vec<_> = (0..n)
            .map(|i| ([L1; 4], stroke_days.contains(&i)))
            .collect();
        record(&days)
    }

    #[test]
    fn prior_counts_stroke_days() {
        assert!((prior_stroke(&stroke_on(30, &[4])).unwrap() - 1.0 / 30.0).abs() < 1e-15);
        assert_eq!(prior_stroke(&stroke_on(5, &[])).unwrap(), 0.0);
        assert_eq!(prior_stroke(&stroke_on(4, &[0, 1, 2, 3])).unwrap(), 1.0);
        assert!(matches!(
            prior_stroke(&record(&[])),
            Err(RiskError::EmptyRecord(_))
        ));
    }

    #[test]
    fn conditional_hand_counts() {
        // 10 days, strokes on days 2 and 7.
        let mut days = vec![([L1; 4], false); 10];
        days[2] = ([L1, L1, L3, L1], true);
        days[7] = ([L1, L1, L3, L1], true);
        let both = record(&days);
        let p = conditional_probability(&both, Feature::TotalCholesterol, L3, true, Smoothing::Off);
        assert_eq!(p.unwrap(), 1.0);

        days[7] = ([L1, L1, L2, L1], true);
        let one = record(&days);
        let p = conditional_probability(&one, Feature::TotalCholesterol, L3, true, Smoothing::Off);
        assert_eq!(p.unwrap(), 0.5);

        let none = stroke_on(10, &[]);
        assert!(matches!(
            conditional_probability(&none, Feature::Smoking, L1, true, Smoothing::Off),
            Err(RiskError::UndefinedConditional(_))
        ));
        // Laplace: (0 + 1) / (0 + 3)
        let p = conditional_probability(&none, Feature::Smoking, L1, true, Smoothing::Laplace);
        assert_eq!(p.unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn posterior_single_stroke_day() {
        let severe = [L3, L3, L3, L3];
        let mut days = vec![([L1, L2, L1, L2], false); 5];
        days[2] = (severe, true);
        let rec = record(&days);
        let ps = posterior_stroke(&rec, &CurrentState { levels: severe }, Smoothing::Off).unwrap();
        assert_eq!(ps, 0.2);
        let unseen = CurrentState {
            levels: [L3, L3, L3, L2],
        };
        assert_eq!(posterior_stroke(&rec, &unseen, Smoothing::Off).unwrap(), 0.0);
    }

    #[test]
    fn healthy_history_degrades_to_zero() {
        let rec = stroke_on(12, &[]);
        let cs = CurrentState { levels: [L1; 4] };
        assert_eq!(posterior_stroke(&rec, &cs, Smoothing::Off).unwrap(), 0.0);
    }

    #[test]
    fn priority_arithmetic() {
        let c500 = RiskConfig::new(500.0).unwrap();
        let c50 = RiskConfig::new(50.0).unwrap();
        assert!((priority(0.0064, &c500, true) - 4.2).abs() < 1e-12);
        assert!((priority(0.00208, &c50, true) - 1.104).abs() < 1e-12);
        assert_eq!(priority(0.9, &c500, false), 1.0);
        assert_eq!(priority(0.0, &c500, true), 1.0);
        assert!(RiskConfig::new(0.0).is_err());
        assert!(RiskConfig::new(-3.0).is_err());
    }

    #[test]
    fn profiles_put_outpatients_last() {
        let cfg = RiskConfig::new(100.0).unwrap();
        let p = build_profiles(10, &[0.0032, 0.0064, 0.00208], &cfg).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p[..7].iter().all(|x| !x.is_outpatient && x.up == 1.0));
        assert!(p[7..].iter().all(|x| x.is_outpatient));
        assert!((p[8].up - 1.64).abs() < 1e-12);
        assert!(build_profiles(2, &[1.5], &cfg).is_err());
        let csv = profiles_to_csv(&p);
        assert!(csv.starts_with("user_id,is_op,ps,up\n1,0,"));
        assert_eq!(csv.lines().count(), 11);
    }
}
