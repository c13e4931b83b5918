//! Follow-up pair selection and longitudinal reliability statistics.
//!
//! The ICC is the consistency form of the two-way mixed model with single
//! measurements, ICC(3,1):
//!
//! ```text
//! MS_between = k Σ_i (x̄_i − x̄)² / (n − 1)
//! MS_error   = Σ_ij (x_ij − x̄_i − x̄_j + x̄)² / ((n − 1)(k − 1))
//! ICC        = (MS_between − MS_error) / (MS_between + (k − 1) MS_error)
//! ```
//!
//! which equals `σ²_A / (σ²_A + σ²_w)` with `σ²_A = (MS_between − MS_error)/k`
//! and `σ²_w = MS_error`. Session effects drop out of `MS_error`, so a
//! constant offset between scans does not lower the ICC.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TissueMeasurement;
use crate::model::TissueClass;

/// HU offset added to intensities before computing their CV.
pub const INTENSITY_CV_OFFSET: f64 = 1024.0;
pub const DEFAULT_TARGET_INTERVAL_DAYS: i64 = 730;
pub const DEFAULT_INTERVAL_TOLERANCE_DAYS: i64 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub subject_id: String,
    pub scan_date: NaiveDate,
    pub measurements: Vec<TissueMeasurement>,
}

impl ScanRecord {
    /// The measurement of `class`, if it has pixels in this scan.
    pub fn measurement(&self, class: TissueClass) -> Option<&TissueMeasurement> {
        self.measurements
            .iter()
            .find(|m| m.class == class && m.pixel_count > 0 && m.mean_hu.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupPair {
    pub subject_id: String,
    pub first: ScanRecord,
    pub second: ScanRecord,
    pub interval_days: i64,
}

impl FollowupPair {
    pub fn new(first: ScanRecord, second: ScanRecord) -> Self {
        let interval_days = (second.scan_date - first.scan_date).num_days();
        Self {
            subject_id: first.subject_id.clone(),
            first,
            second,
            interval_days,
        }
    }

    /// Both scans' values of `measure` for `class`, if present in both.
    pub fn values(&self, class: TissueClass, measure: Measure) -> Option<(f64, f64)> {
        let a = measure.value(self.first.measurement(class)?)?;
        let b = measure.value(self.second.measurement(class)?)?;
        Some((a, b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSelection {
    /// Sorted by subject id.
    pub pairs: Vec<FollowupPair>,
    /// Subjects with fewer than two scans or whose first two scans miss the
    /// target interval.
    pub excluded_subjects: usize,
}

/// Takes each subject's two earliest scans and keeps the pair when their gap
/// is within `tolerance_days` of `target_interval_days`.
pub fn select_followup_pairs(
    records: &[ScanRecord],
    target_interval_days: i64,
    tolerance_days: i64,
) -> PairSelection {
    let mut by_subject: BTreeMap<&str, Vec<&ScanRecord>> = BTreeMap::new();
    for r in records {
        by_subject.entry(&r.subject_id).or_default().push(r);
    }
    let mut pairs = Vec::new();
    let mut excluded_subjects = 0;
    for (_, mut scans) in by_subject {
        scans.sort_by_key(|r| r.scan_date);
        let admitted = match scans.as_slice() {
            [first, second, ..] if first.scan_date < second.scan_date => {
                let pair = FollowupPair::new((*first).clone(), (*second).clone());
                ((pair.interval_days - target_interval_days).abs() <= tolerance_days)
                    .then_some(pair)
            }
            _ => None,
        };
        match admitted {
            Some(p) => pairs.push(p),
            None => excluded_subjects += 1,
        }
    }
    PairSelection {
        pairs,
        excluded_subjects,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Area,
    Intensity,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::Area, Measure::Intensity];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Area => "area",
            Measure::Intensity => "intensity",
        }
    }

    /// Offset applied to values before their CV is computed.
    pub fn cv_offset(self) -> f64 {
        match self {
            Measure::Area => 0.0,
            Measure::Intensity => INTENSITY_CV_OFFSET,
        }
    }

    pub fn value(self, m: &TissueMeasurement) -> Option<f64> {
        match self {
            Measure::Area => Some(m.area_mm2),
            Measure::Intensity => m.mean_hu,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaDecomposition {
    pub n: usize,
    pub k: usize,
    /// Subject mean square.
    pub ms_between: f64,
    /// Residual mean square after subject and session effects.
    pub ms_error: f64,
    pub sigma2_a: f64,
    pub sigma2_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccEstimate {
    pub anova: AnovaDecomposition,
    pub raw_icc: f64,
    /// `max(raw_icc, 0)`.
    pub icc: f64,
}

fn check_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<usize> {
    let k = rows.first().map_or(0, |r| r.as_ref().len());
    if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != k) {
        return Err(Error::RaggedRows {
            expected: k,
            found: bad.as_ref().len(),
        });
    }
    Ok(k)
}

/// Two-way mixed, consistency, single-measurement ICC over `n` subjects
/// with `k ≥ 2` sessions each. A zero denominator (no variation left after
/// removing session effects) yields 1.
pub fn icc_two_way_mixed<R: AsRef<[f64]>>(rows: &[R]) -> Result<IccEstimate> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooFewSubjects(n));
    }
    let k = check_rows(rows)?;
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "ICC needs at least 2 sessions per subject, got {k}"
        )));
    }
    let (nf, kf) = (n as f64, k as f64);
    let row_means: Vec<f64> = rows
        .iter()
        .map(|r| r.as_ref().iter().sum::<f64>() / kf)
        .collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| rows.iter().map(|r| r.as_ref()[j]).sum::<f64>() / nf)
        .collect();
    // balanced design: grand mean = mean of session means
    let grand = col_means.iter().sum::<f64>() / kf;

    let ss_between = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_error: f64 = rows
        .iter()
        .zip(&row_means)
        .map(|(r, rm)| {
            r.as_ref()
                .iter()
                .zip(&col_means)
                .map(|(x, cm)| (x - rm - cm + grand).powi(2))
                .sum::<f64>()
        })
        .sum();
    let ms_between = ss_between / (nf - 1.0);
    let ms_error = ss_error / ((nf - 1.0) * (kf - 1.0));
    let denom = ms_between + (kf - 1.0) * ms_error;
    let raw_icc = if denom == 0.0 {
        1.0
    } else {
        (ms_between - ms_error) / denom
    };
    Ok(IccEstimate {
        anova: AnovaDecomposition {
            n,
            k,
            ms_between,
            ms_error,
            sigma2_a: (ms_between - ms_error) / kf,
            sigma2_w: ms_error,
        },
        raw_icc,
        icc: raw_icc.max(0.0),
    })
}

/// How per-subject CVs are combined into one cohort figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvAggregation {
    /// Arithmetic mean of the per-subject CVs.
    #[default]
    Mean,
    /// Root mean square of the per-subject CVs.
    Rms,
}

/// Mean within-subject CV in percent. Each subject's values are shifted by
/// `offset`, then `sd / mean × 100` is taken with the sample (k − 1)
/// standard deviation.
pub fn coefficient_of_variation<R: AsRef<[f64]>>(
    rows: &[R],
    offset: f64,
    aggregation: CvAggregation,
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::TooFewSubjects(0));
    }
    let k = check_rows(rows)?;
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "CV needs at least 2 sessions per subject, got {k}"
        )));
    }
    let mut acc = 0.0;
    for (subject, r) in rows.iter().enumerate() {
        let shifted: Vec<f64> = r.as_ref().iter().map(|v| v + offset).collect();
        let mean = shifted.iter().sum::<f64>() / k as f64;
        if mean.is_nan() || mean <= 0.0 {
            return Err(Error::NonPositiveMean { subject, mean });
        }
        let var = shifted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let cv = var.sqrt() / mean * 100.0;
        acc += match aggregation {
            CvAggregation::Mean => cv,
            CvAggregation::Rms => cv * cv,
        };
    }
    let avg = acc / rows.len() as f64;
    Ok(match aggregation {
        CvAggregation::Mean => avg,
        CvAggregation::Rms => avg.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub class: TissueClass,
    pub measure: Measure,
    pub raw_icc: f64,
    pub icc: f64,
    pub cv_percent: f64,
    pub n_subjects: usize,
}

/// How many subjects contributed to (or were dropped from) a class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCoverage {
    pub class: TissueClass,
    pub included: usize,
    /// Subjects missing the class in at least one scan.
    pub excluded: usize,
    /// False when fewer than two subjects remained.
    pub reported: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortReport {
    /// Ordered by class code, then area before intensity.
    pub rows: Vec<VariabilityReport>,
    pub coverage: Vec<ClassCoverage>,
}

/// Area and intensity ICC/CV for every class measured in both scans of at
/// least two subjects.
pub fn cohort_variability_report(
    pairs: &[FollowupPair],
    aggregation: CvAggregation,
) -> Result<CohortReport> {
    let classes: BTreeSet<TissueClass> = pairs
        .iter()
        .flat_map(|p| p.first.measurements.iter().chain(&p.second.measurements))
        .map(|m| m.class)
        .filter(|c| !c.is_background())
        .collect();

    let mut report = CohortReport::default();
    for class in classes {
        let present: Vec<&FollowupPair> = pairs
            .iter()
            .filter(|p| {
                p.first.measurement(class).is_some() && p.second.measurement(class).is_some()
            })
            .collect();
        let coverage = ClassCoverage {
            class,
            included: present.len(),
            excluded: pairs.len() - present.len(),
            reported: present.len() >= 2,
        };
        if coverage.reported {
            for measure in Measure::ALL {
                let rows: Vec<[f64; 2]> = present
                    .iter()
                    .filter_map(|p| p.values(class, measure))
                    .map(|(a, b)| [a, b])
                    .collect();
                let icc = icc_two_way_mixed(&rows)?;
                let cv = coefficient_of_variation(&rows, measure.cv_offset(), aggregation)?;
                report.rows.push(VariabilityReport {
                    class,
                    measure,
                    raw_icc: icc.raw_icc,
                    icc: icc.icc,
                    cv_percent: cv,
                    n_subjects: rows.len(),
                });
            }
        }
        report.coverage.push(coverage);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaghettiRow {
    pub subject_id: String,
    pub scan1: f64,
    pub scan2: f64,
}

/// Per-subject `(scan 1, scan 2)` values of one class and measure, by
/// subject id; subjects missing the class in either scan are skipped.
pub fn spaghetti_data(
    pairs: &[FollowupPair],
    class: TissueClass,
    measure: Measure,
) -> Vec<SpaghettiRow> {
    let mut rows: Vec<SpaghettiRow> = pairs
        .iter()
        .filter_map(|p| {
            p.values(class, measure).map(|(scan1, scan2)| SpaghettiRow {
                subject_id: p.subject_id.clone(),
                scan1,
                scan2,
            })
        })
        .collect();
    rows.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    rows
}
