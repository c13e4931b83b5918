//! Cohort analysis over a manifest of scans.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::io::{
    read_label_map, read_slice, report_csv, spaghetti_csv, write_atomic, write_label_map,
    write_slice, CohortManifest, ManifestEntry,
};
use crate::model::TissueClass;
use crate::phantom::{draw_cohort, generate_phantom, CohortSpec, Compartment, PhantomSpec, Shape};
use crate::pipeline::{run_slice_pipeline, SliceInputs};
use crate::postprocess::FusionPolicy;
use crate::segmentation::SegmentationConfig;
use crate::stats::{
    cohort_variability_report, select_followup_pairs, spaghetti_data, ClassCoverage, CohortReport,
    CvAggregation, FollowupPair, Measure, ScanRecord, DEFAULT_INTERVAL_TOLERANCE_DAYS,
    DEFAULT_TARGET_INTERVAL_DAYS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    pub target_interval_days: i64,
    pub interval_tolerance_days: i64,
    pub cv_aggregation: CvAggregation,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            target_interval_days: DEFAULT_TARGET_INTERVAL_DAYS,
            interval_tolerance_days: DEFAULT_INTERVAL_TOLERANCE_DAYS,
            cv_aggregation: CvAggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortConfig {
    pub segmentation: SegmentationConfig,
    pub policy: FusionPolicy,
    pub stats: StatsConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub subject_id: String,
    pub scan_date: NaiveDate,
    pub slice_path: PathBuf,
    pub stage: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortAnalysis {
    pub report: CohortReport,
    pub pairs: Vec<FollowupPair>,
    pub excluded_subjects: usize,
    pub scans_total: usize,
    pub failures: Vec<ScanFailure>,
}

fn process_entry(entry: &ManifestEntry, config: &CohortConfig) -> Result<ScanRecord> {
    let slice = read_slice(&entry.slice_path).stage("read_slice")?;
    let read_mask = |p: &Option<PathBuf>| {
        p.as_deref()
            .map(read_label_map)
            .transpose()
            .stage("read_label_map")
    };
    let organ = read_mask(&entry.organ_mask_path)?;
    let muscle = read_mask(&entry.muscle_mask_path)?;
    let wall = read_mask(&entry.wall_mask_path)?;
    let result = run_slice_pipeline(
        SliceInputs {
            slice: &slice,
            organ: organ.as_ref(),
            muscle: muscle.as_ref(),
            wall: wall.as_ref(),
        },
        &config.segmentation,
        &config.policy,
    )?;
    // the manifest identifies the scan
    let measurements = result
        .measurements
        .into_iter()
        .map(|mut m| {
            m.subject_id = entry.subject_id.clone();
            m.scan_date = entry.scan_date;
            m
        })
        .collect();
    Ok(ScanRecord {
        subject_id: entry.subject_id.clone(),
        scan_date: entry.scan_date,
        measurements,
    })
}

/// Runs every scan (in parallel), pairs each subject's scans and reports
/// ICC and CV per class. Failed scans are recorded and left out; the run
/// only fails when no scan succeeds.
pub fn run_cohort_analysis(
    manifest: &CohortManifest,
    config: &CohortConfig,
) -> Result<CohortAnalysis> {
    let mut entries: Vec<&ManifestEntry> = manifest.entries.iter().collect();
    entries.sort_by(|a, b| (&a.subject_id, a.scan_date).cmp(&(&b.subject_id, b.scan_date)));

    let outcomes: Vec<Result<ScanRecord>> = entries
        .par_iter()
        .map(|e| process_entry(e, config))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (entry, outcome) in entries.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!(
                    "excluding scan {} {}: {e}",
                    entry.subject_id,
                    entry.scan_date
                );
                failures.push(ScanFailure {
                    subject_id: entry.subject_id.clone(),
                    scan_date: entry.scan_date,
                    slice_path: entry.slice_path.clone(),
                    stage: e.stage().map(str::to_string),
                    message: e.to_string(),
                });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::NoSuccessfulScans {
            failures: failures.len(),
        });
    }

    let selection = select_followup_pairs(
        &records,
        config.stats.target_interval_days,
        config.stats.interval_tolerance_days,
    );
    let report = cohort_variability_report(&selection.pairs, config.stats.cv_aggregation)?;
    Ok(CohortAnalysis {
        report,
        pairs: selection.pairs,
        excluded_subjects: selection.excluded_subjects,
        scans_total: entries.len(),
        failures,
    })
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    scans_total: usize,
    scans_succeeded: usize,
    pairs: usize,
    excluded_subjects: usize,
    coverage: &'a [ClassCoverage],
    failures: &'a [ScanFailure],
}

/// Writes `report.csv`, one `spaghetti_<class>.csv` per reported class and
/// `summary.json` into `dir`. Returns the written paths.
pub fn write_cohort_outputs(analysis: &CohortAnalysis, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(PathBuf, Vec<u8>)> =
        vec![(dir.join("report.csv"), report_csv(&analysis.report))];
    let reported: Vec<TissueClass> = analysis
        .report
        .coverage
        .iter()
        .filter(|c| c.reported)
        .map(|c| c.class)
        .collect();
    for class in reported {
        let area = spaghetti_data(&analysis.pairs, class, Measure::Area);
        let intensity = spaghetti_data(&analysis.pairs, class, Measure::Intensity);
        files.push((
            dir.join(format!("spaghetti_{class}.csv")),
            spaghetti_csv(&area, &intensity),
        ));
    }
    let summary = Summary {
        scans_total: analysis.scans_total,
        scans_succeeded: analysis.scans_total - analysis.failures.len(),
        pairs: analysis.pairs.len(),
        excluded_subjects: analysis.excluded_subjects,
        coverage: &analysis.report.coverage,
        failures: &analysis.failures,
    };
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    files.push((dir.join("summary.json"), json));

    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

fn default_size() -> usize {
    160
}

fn default_spacing() -> f64 {
    0.9766
}

/// A cohort rendered as phantom slices: each scan's muscle area and mean
/// intensity follow `cohort`, everything else is the fixed abdomen geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    #[serde(flatten)]
    pub cohort: CohortSpec,
    /// Width and height of the square phantom.
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Write the first scan again as the second.
    #[serde(default)]
    pub duplicate_scans: bool,
}

impl SimulationSpec {
    pub fn new(cohort: CohortSpec) -> Self {
        Self {
            cohort,
            size: default_size(),
            spacing: default_spacing(),
            noise_sigma: 0.0,
            duplicate_scans: false,
        }
    }

    /// Abdomen phantom whose only muscle is a block of `pixel_count` pixels
    /// between the anterior body edge and the inner wall. The lateral muscles
    /// stay as unlabelled soft tissue so the fat clustering sees the same
    /// intensity mix as the plain abdomen.
    fn phantom(&self, pixel_count: usize, muscle_hu: f64) -> Result<PhantomSpec> {
        let s = self.size as f64;
        let mut spec = PhantomSpec::abdomen(self.size, self.size);
        spec.spacing = self.spacing;
        let (cx, cy) = (spec.body.cx, spec.body.cy);
        let width = (0.3 * s).round() as usize;
        let rows = (0.05 * s).floor() as usize;
        if pixel_count < 25 || pixel_count > width * rows {
            return Err(Error::InvalidSpec(format!(
                "muscle block of {pixel_count} pixels does not fit a {0}x{0} phantom \
                 (allowed 25..={1})",
                self.size,
                width * rows
            )));
        }
        for c in &mut spec.compartments {
            if c.class == TissueClass::Muscle {
                c.class = TissueClass::BodyMask;
            }
        }
        spec.compartments.insert(
            0,
            Compartment {
                shape: Shape::Block {
                    x0: (cx - 0.15 * s).round() as usize,
                    y0: (cy - 0.37 * s).round() as usize,
                    width,
                    pixel_count,
                },
                class: TissueClass::Muscle,
                mean_hu: muscle_hu,
            },
        );
        Ok(spec)
    }
}

/// Writes every scan (slice plus muscle mask), the shared organ and wall
/// masks and `manifest.csv` into `dir`, and returns the manifest with its
/// paths resolved.
///
/// With noise, scan `j` (0 or 1) of subject `i` uses seed
/// `cohort.seed + 1 + 2i + j`.
pub fn simulate_cohort(spec: &SimulationSpec, dir: &Path) -> Result<CohortManifest> {
    if spec.cohort.class != TissueClass::Muscle {
        return Err(Error::InvalidSpec(
            "simulated cohorts vary the muscle class only".into(),
        ));
    }
    let draws = draw_cohort(&spec.cohort)?;
    let pixel_area = spec.spacing * spec.spacing;

    // every scan is validated before anything is written
    let mut scans = Vec::with_capacity(2 * draws.len());
    for (i, d) in draws.iter().enumerate() {
        for (j, date) in [d.first_date, d.second_date].into_iter().enumerate() {
            // duplicated scans reuse the first scan's draws and seed
            let src = if spec.duplicate_scans { 0 } else { j };
            let count = (d.area[src] / pixel_area).round().max(0.0) as usize;
            let seed = spec.cohort.seed.wrapping_add(1 + 2 * i as u64 + src as u64);
            let phantom_spec = spec
                .phantom(count, d.intensity[src])?
                .with_noise(spec.noise_sigma, seed)
                .with_identity(d.subject_id.clone(), date);
            scans.push((format!("{}_{}", d.subject_id, date), phantom_spec));
        }
    }

    let scans_dir = dir.join("scans");
    std::fs::create_dir_all(&scans_dir).map_err(|e| Error::io(&scans_dir, e))?;
    let mut entries = Vec::with_capacity(scans.len());
    for (k, (stem, phantom_spec)) in scans.iter().enumerate() {
        let phantom = generate_phantom(phantom_spec)?;
        if k == 0 {
            write_label_map(&phantom.organ_map(), &dir.join("organ.pgm"))?;
            write_label_map(&phantom.wall_map(), &dir.join("wall.pgm"))?;
        }
        write_slice(&phantom.slice, &scans_dir.join(format!("{stem}.hu")))?;
        write_label_map(
            &phantom.muscle_map(),
            &scans_dir.join(format!("{stem}_muscle.pgm")),
        )?;
        entries.push(ManifestEntry {
            subject_id: phantom_spec.subject_id.clone(),
            scan_date: phantom_spec.scan_date,
            slice_path: PathBuf::from(format!("scans/{stem}.hu")),
            organ_mask_path: Some("organ.pgm".into()),
            muscle_mask_path: Some(PathBuf::from(format!("scans/{stem}_muscle.pgm"))),
            wall_mask_path: Some("wall.pgm".into()),
        });
    }
    let path = dir.join("manifest.csv");
    CohortManifest::new(entries)?.write(&path)?;
    // paths in the returned manifest are resolved like any manifest read
    CohortManifest::read(&path)
}
