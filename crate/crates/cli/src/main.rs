//! `bodycomp`: segment slices, build phantoms and simulated cohorts, and
//! report longitudinal variability for a cohort manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bodycomp_core::cohort::{
    run_cohort_analysis, simulate_cohort, write_cohort_outputs, CohortConfig, SimulationSpec,
    StatsConfig,
};
use bodycomp_core::error::StageExt;
use bodycomp_core::fcm::FcmConfig;
use bodycomp_core::io::{
    dice_csv, measurements_csv, read_label_map, read_slice, write_atomic, write_label_map,
    write_slice, CohortManifest,
};
use bodycomp_core::metrics::per_class_dice;
use bodycomp_core::phantom::{generate_phantom, CohortSpec, PhantomSpec};
use bodycomp_core::pipeline::{run_slice_pipeline, SliceInputs};
use bodycomp_core::postprocess::{FusionPolicy, DEFAULT_MIN_COMPONENT_SIZE};
use bodycomp_core::segmentation::{
    SegmentationConfig, DEFAULT_BODY_THRESHOLD_HU, DEFAULT_FAT_REFERENCE_HU,
    DEFAULT_MEMBERSHIP_THRESHOLD,
};
use bodycomp_core::stats::{
    CvAggregation, DEFAULT_INTERVAL_TOLERANCE_DAYS, DEFAULT_TARGET_INTERVAL_DAYS,
};
use bodycomp_core::{Error, Result, TissueClass};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

#[derive(Parser)]
#[command(name = "bodycomp", version)]
#[command(about = "Body composition analysis for single-slice abdominal CT")]
struct Cli {
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one slice into a fused label map and per-tissue measurements
    Segment(SegmentArgs),
    /// Run every scan of a manifest and report ICC/CV per tissue
    Cohort(CohortArgs),
    /// Write a synthetic slice with its ground-truth masks
    Phantom(PhantomArgs),
    /// Write a simulated cohort of phantom scans and its manifest
    SimulateCohort(SimulateArgs),
    /// Per-class Dice overlap of two label maps
    Dice(DiceArgs),
}

#[derive(Args)]
struct PipelineFlags {
    /// Body mask threshold
    #[arg(long, default_value_t = DEFAULT_BODY_THRESHOLD_HU, allow_hyphen_values = true)]
    body_threshold_hu: f64,

    /// Membership above which a pixel joins a cluster
    #[arg(long, default_value_t = DEFAULT_MEMBERSHIP_THRESHOLD)]
    membership_threshold: f64,

    /// Intensity used to pick the fat cluster
    #[arg(long, default_value_t = DEFAULT_FAT_REFERENCE_HU, allow_hyphen_values = true)]
    fat_reference_hu: f64,

    /// FCM stop threshold on the largest centroid shift
    #[arg(long, default_value_t = 1e-4)]
    fcm_tolerance: f64,

    #[arg(long, default_value_t = 300)]
    fcm_max_iterations: usize,

    /// Components smaller than this many pixels are removed
    #[arg(long, default_value_t = DEFAULT_MIN_COMPONENT_SIZE)]
    min_component_size: usize,

    /// Fusion precedence, highest first, as comma-separated class names
    #[arg(long, value_delimiter = ',')]
    precedence: Option<Vec<String>>,
}

impl PipelineFlags {
    fn configs(&self) -> Result<(SegmentationConfig, FusionPolicy)> {
        let fcm = FcmConfig {
            tolerance: self.fcm_tolerance,
            max_iterations: self.fcm_max_iterations,
            ..FcmConfig::default()
        };
        fcm.validate()?;
        let seg = SegmentationConfig {
            body_threshold_hu: self.body_threshold_hu,
            membership_threshold: self.membership_threshold,
            fat_reference_hu: self.fat_reference_hu,
            fcm,
        };
        let policy = match &self.precedence {
            None => FusionPolicy::default().with_min_component_size(self.min_component_size)?,
            Some(names) => {
                let mut order = names
                    .iter()
                    .map(|n| {
                        TissueClass::from_name(n.trim())
                            .ok_or_else(|| Error::InvalidConfig(format!("unknown class {n:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if order.last() != Some(&TissueClass::Background) {
                    order.push(TissueClass::Background);
                }
                FusionPolicy::new(order, self.min_component_size)?
            }
        };
        Ok((seg, policy))
    }
}

#[derive(Args)]
struct SegmentArgs {
    /// Slice payload (.hu) or sidecar (.json)
    slice: PathBuf,

    #[arg(long)]
    organ: Option<PathBuf>,

    #[arg(long)]
    muscle: Option<PathBuf>,

    /// Inner/outer abdominal wall contours
    #[arg(long)]
    wall: Option<PathBuf>,

    /// Receives fused.pgm and measurements.csv
    #[arg(long)]
    out_dir: PathBuf,

    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Aggregation {
    Mean,
    Rms,
}

#[derive(Args)]
struct CohortArgs {
    manifest: PathBuf,

    /// Receives report.csv, spaghetti_<class>.csv and summary.json
    #[arg(long)]
    out_dir: PathBuf,

    #[arg(long, default_value_t = DEFAULT_TARGET_INTERVAL_DAYS)]
    target_interval_days: i64,

    #[arg(long, default_value_t = DEFAULT_INTERVAL_TOLERANCE_DAYS)]
    interval_tolerance_days: i64,

    /// How per-subject CVs are combined
    #[arg(long, value_enum, default_value_t = Aggregation::Mean)]
    cv_aggregation: Aggregation,

    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Abdomen,
    FatAnnulus,
}

#[derive(Args)]
struct PhantomArgs {
    /// JSON phantom spec; replaces the preset and size flags
    #[arg(long)]
    spec: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Preset::Abdomen)]
    preset: Preset,

    #[arg(long, default_value_t = 512)]
    width: usize,

    #[arg(long, default_value_t = 512)]
    height: usize,

    #[arg(long, default_value_t = 0.9766)]
    spacing: f64,

    /// Gaussian noise standard deviation in HU
    #[arg(long)]
    noise_sigma: Option<f64>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    subject_id: Option<String>,

    #[arg(long)]
    scan_date: Option<NaiveDate>,

    /// Receives slice.hu/.json, truth.pgm and the organ, muscle and wall masks
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON simulation spec; replaces the model flags
    #[arg(long)]
    spec: Option<PathBuf>,

    #[arg(long, default_value_t = 300)]
    n_subjects: usize,

    /// Mean muscle area in mm²
    #[arg(long, default_value_t = 200.0)]
    true_mean: f64,

    /// Between-subject variance
    #[arg(long, default_value_t = 9.0)]
    sigma2_a: f64,

    /// Within-subject variance
    #[arg(long, default_value_t = 1.0)]
    sigma2_w: f64,

    /// Added to every second scan
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    session_offset: f64,

    /// Mean muscle intensity in HU
    #[arg(long, default_value_t = 50.0, allow_hyphen_values = true)]
    intensity_mean: f64,

    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Width and height of each phantom
    #[arg(long, default_value_t = 160)]
    size: usize,

    #[arg(long, default_value_t = 0.9766)]
    spacing: f64,

    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,

    /// Write each subject's first scan again as the second
    #[arg(long)]
    duplicate_scans: bool,

    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DiceArgs {
    a: PathBuf,
    b: PathBuf,

    /// Write the table here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn segment(args: SegmentArgs) -> Result<()> {
    let (seg, policy) = args.pipeline.configs().stage("configure")?;
    let slice = read_slice(&args.slice).stage("read_slice")?;
    let read = |p: &Option<PathBuf>| p.as_deref().map(read_label_map).transpose();
    let (organ, muscle, wall) =
        (|| Ok((read(&args.organ)?, read(&args.muscle)?, read(&args.wall)?)))()
            .stage("read_label_map")?;
    let result = run_slice_pipeline(
        SliceInputs {
            slice: &slice,
            organ: organ.as_ref(),
            muscle: muscle.as_ref(),
            wall: wall.as_ref(),
        },
        &seg,
        &policy,
    )?;
    create_dir(&args.out_dir).stage("write_outputs")?;
    write_label_map(&result.fused, &args.out_dir.join("fused.pgm")).stage("write_outputs")?;
    write_atomic(
        &args.out_dir.join("measurements.csv"),
        &measurements_csv(&result.measurements),
    )
    .stage("write_outputs")?;
    info!("segmented {} tissues", result.measurements.len());
    Ok(())
}

fn cohort(args: CohortArgs) -> Result<()> {
    let (segmentation, policy) = args.pipeline.configs().stage("configure")?;
    let config = CohortConfig {
        segmentation,
        policy,
        stats: StatsConfig {
            target_interval_days: args.target_interval_days,
            interval_tolerance_days: args.interval_tolerance_days,
            cv_aggregation: match args.cv_aggregation {
                Aggregation::Mean => CvAggregation::Mean,
                Aggregation::Rms => CvAggregation::Rms,
            },
        },
    };
    let manifest = CohortManifest::read(&args.manifest).stage("read_manifest")?;
    let analysis = run_cohort_analysis(&manifest, &config).stage("cohort_analysis")?;
    for f in &analysis.failures {
        log::warn!("excluded {} {}: {}", f.subject_id, f.scan_date, f.message);
    }
    let written = write_cohort_outputs(&analysis, &args.out_dir).stage("write_outputs")?;
    info!(
        "{} of {} scans processed, {} pairs, {} files written",
        analysis.scans_total - analysis.failures.len(),
        analysis.scans_total,
        analysis.pairs.len(),
        written.len()
    );
    Ok(())
}

fn phantom(args: PhantomArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => read_json::<PhantomSpec>(path).stage("read_spec")?,
        None => {
            let mut s = match args.preset {
                Preset::Abdomen => PhantomSpec::abdomen(args.width, args.height),
                Preset::FatAnnulus => PhantomSpec::fat_annulus(args.width.min(args.height)),
            };
            s.spacing = args.spacing;
            s
        }
    };
    if let Some(sigma) = args.noise_sigma {
        spec.noise_sigma = sigma;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(id) = args.subject_id {
        spec.subject_id = id;
    }
    if let Some(date) = args.scan_date {
        spec.scan_date = date;
    }
    let p = generate_phantom(&spec).stage("generate_phantom")?;
    let dir = &args.out_dir;
    (|| {
        create_dir(dir)?;
        write_slice(&p.slice, &dir.join("slice.hu"))?;
        write_label_map(&p.truth, &dir.join("truth.pgm"))?;
        write_label_map(&p.organ_map(), &dir.join("organ.pgm"))?;
        write_label_map(&p.muscle_map(), &dir.join("muscle.pgm"))?;
        write_label_map(&p.wall_map(), &dir.join("wall.pgm"))
    })()
    .stage("write_outputs")
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => read_json::<SimulationSpec>(path).stage("read_spec")?,
        None => {
            let mut cohort = CohortSpec::new(
                args.n_subjects,
                args.true_mean,
                args.sigma2_a,
                args.sigma2_w,
                args.seed,
            );
            cohort.session_offset = args.session_offset;
            cohort.intensity_mean = args.intensity_mean;
            SimulationSpec {
                cohort,
                size: args.size,
                spacing: args.spacing,
                noise_sigma: args.noise_sigma,
                duplicate_scans: args.duplicate_scans,
            }
        }
    };
    let manifest = simulate_cohort(&spec, &args.out_dir).stage("simulate_cohort")?;
    info!("wrote {} scans", manifest.entries.len());
    Ok(())
}

fn dice(args: DiceArgs) -> Result<()> {
    let a = read_label_map(&args.a).stage("read_label_map")?;
    let b = read_label_map(&args.b).stage("read_label_map")?;
    let table = dice_csv(&per_class_dice(&a, &b).stage("dice")?);
    match &args.out {
        Some(path) => write_atomic(path, &table).stage("write_outputs"),
        None => {
            print!("{}", String::from_utf8_lossy(&table));
            Ok(())
        }
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut causes = Vec::new();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        causes.push(s.to_string());
        source = s.source();
    }
    serde_json::json!({
        "error": {
            "stage": e.stage(),
            "message": e.to_string(),
            "causes": causes,
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Segment(a) => segment(a),
        Command::Cohort(a) => cohort(a),
        Command::Phantom(a) => phantom(a),
        Command::SimulateCohort(a) => simulate(a),
        Command::Dice(a) => dice(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
