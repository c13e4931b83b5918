//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode, Output};
use std::time::{Duration, Instant};

use bodycomp_core::fcm::{compute_memberships, fcm_cluster, FcmConfig};
use bodycomp_core::io::{read_label_map, read_slice, write_label_map, write_slice};
use bodycomp_core::metrics::tissue_area;
use bodycomp_core::model::{
    class_mask, dice, BinaryMask, CtSlice, LabelMap, SliceHeader, TissueClass,
};
use bodycomp_core::phantom::{generate_cohort, generate_phantom, CohortSpec, Phantom, PhantomSpec};
use bodycomp_core::postprocess::{nearest_label_fill, remove_small_components};
use bodycomp_core::segmentation::{
    extract_body_mask, segment_body_and_fat, segment_fat, wall_region, SegmentationConfig,
};
use bodycomp_core::stats::{coefficient_of_variation, icc_two_way_mixed, CvAggregation, Measure};
use chrono::NaiveDate;
use rand::Rng;

type Outcome = Result<(), String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bodycomp"))
}

fn run(cmd: &mut Command) -> Result<Output, String> {
    cmd.output()
        .map_err(|e| format!("cannot start bodycomp: {e}"))
}

fn run_ok(cmd: &mut Command) -> Outcome {
    let out = run(cmd)?;
    ensure!(
        out.status.success(),
        "bodycomp failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn fcm_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = support::rng(1);
    let mut checked = 0;
    for case in 0..1200 {
        let n = rng.random_range(2..300);
        let spread: f64 = rng.random_range(1.0..2000.0);
        let xs: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-spread..spread).round())
            .collect();
        let config = FcmConfig::with_clusters(rng.random_range(2..5));
        let Ok(state) = fcm_cluster(&xs, &config) else {
            continue;
        };
        for row in state.memberships.rows() {
            let sum: f64 = row.iter().sum();
            ensure!((sum - 1.0).abs() <= 1e-9, "case {case}: row sum {sum}");
        }
        ensure!(
            state.objective_trace.windows(2).all(|w| w[1] <= w[0]),
            "case {case}: objective rose"
        );
        checked += 1;
    }
    ensure!(checked >= 1000, "only {checked} datasets clustered");
    let m = compute_memberships(&[10.0], &[0.0, 30.0]).map_err(|e| e.to_string())?;
    ensure!(m.row(0)[0] == 0.8, "hand example gave {}", m.row(0)[0]);
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(())
}

fn fcm_oracle() -> Outcome {
    let xs = support::bimodal_sample(10_000, (-100.0, 50.0), 10.0, 2);
    let (k0, k1) = support::kmeans2_exhaustive(&xs);
    let c = fcm_cluster(&xs, &FcmConfig::default())
        .map_err(|e| e.to_string())?
        .centroids;
    ensure!(
        (c[0] - k0).abs() <= 3.0 && (c[1] - k1).abs() <= 3.0,
        "centroids {c:?}, oracle ({k0}, {k1})"
    );
    Ok(())
}

fn fat_truth(p: &Phantom) -> BinaryMask {
    let (w, h) = p.truth.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        matches!(
            p.truth.get(x, y),
            TissueClass::Sft | TissueClass::Vft | TissueClass::Rft
        )
    })
}

fn fat_dice(spec: &PhantomSpec) -> Result<f64, String> {
    let p = generate_phantom(spec).map_err(|e| e.to_string())?;
    let body = extract_body_mask(&p.slice, -200.0).map_err(|e| e.to_string())?;
    let fat = segment_fat(&p.slice, &body, &SegmentationConfig::default())
        .map_err(|e| e.to_string())?
        .fat;
    dice(&fat, &fat_truth(&p)).map_err(|e| e.to_string())
}

fn phantom_segmentation() -> Outcome {
    let clean = fat_dice(&PhantomSpec::fat_annulus(128))?;
    ensure!(clean == 1.0, "noiseless annulus Dice {clean}");
    let noisy = fat_dice(&PhantomSpec::abdomen(160, 128).with_noise(20.0, 11))?;
    ensure!(noisy >= 0.95, "σ=20 Dice {noisy}");

    let p = generate_phantom(&PhantomSpec::abdomen(160, 128)).map_err(|e| e.to_string())?;
    let walls = p.wall_map();
    let inner = wall_region(&walls, TissueClass::InnerWall).map_err(|e| e.to_string())?;
    let outer = wall_region(&walls, TissueClass::OuterWall).map_err(|e| e.to_string())?;
    let r = segment_body_and_fat(&p.slice, &inner, &outer, &SegmentationConfig::default())
        .map_err(|e| e.to_string())?;
    for (got, class) in [
        (&r.sft, TissueClass::Sft),
        (&r.vft, TissueClass::Vft),
        (&r.rft, TissueClass::Rft),
    ] {
        ensure!(
            *got == class_mask(&p.truth, class),
            "{class} partition differs"
        );
    }
    Ok(())
}

fn postprocess_boundary() -> Outcome {
    let mut map = LabelMap::empty(20, 10);
    for i in 0..24 {
        map.set(i % 6, i / 6, TissueClass::Liver);
    }
    for i in 0..25 {
        map.set(10 + i % 5, i / 5, TissueClass::Spleen);
    }
    let (clean, _) = remove_small_components(&map, 25);
    ensure!(
        clean.count(TissueClass::Liver) == 0,
        "24-pixel component kept"
    );
    ensure!(
        clean.count(TissueClass::Spleen) == 25,
        "25-pixel component removed"
    );

    let mut rng = support::rng(2024);
    for case in 0..100 {
        let (map, holes) = support::random_fill_case(32, 32, &mut rng);
        let fast = nearest_label_fill(&map, &holes).map_err(|e| e.to_string())?;
        ensure!(
            fast == support::brute_force_fill(&map, &holes),
            "fill case {case} differs"
        );
    }
    Ok(())
}

fn model_rows(spec: &CohortSpec) -> Result<Vec<[f64; 2]>, String> {
    generate_cohort(spec)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|p| {
            p.values(TissueClass::Muscle, Measure::Area)
                .map(|(a, b)| [a, b])
                .ok_or_else(|| "generated pair lacks muscle".to_string())
        })
        .collect()
}

fn icc_correctness() -> Outcome {
    let icc = |rows: &[[f64; 2]]| icc_two_way_mixed(rows).map_err(|e| e.to_string());
    let perfect = icc(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])?;
    ensure!(
        (perfect.raw_icc - 1.0).abs() < 1e-12,
        "offset pairs gave {}",
        perfect.raw_icc
    );
    let swapped = icc(&[[1.0, 2.0], [2.0, 1.0]])?;
    ensure!(
        (swapped.raw_icc + 1.0).abs() < 1e-12 && swapped.icc == 0.0,
        "swapped pairs gave raw {} clamped {}",
        swapped.raw_icc,
        swapped.icc
    );

    let mut rng = support::rng(9);
    for case in 0..100 {
        let rows = support::random_cohort(&mut rng);
        let offset = rng.random_range(-300.0..300.0);
        let shifted: Vec<[f64; 2]> = rows.iter().map(|r| [r[0], r[1] + offset]).collect();
        let (a, b) = (icc(&rows)?.raw_icc, icc(&shifted)?.raw_icc);
        ensure!((a - b).abs() < 1e-9, "cohort {case}: {a} vs {b}");
    }

    let model = icc(&model_rows(&CohortSpec::new(300, 500.0, 9.0, 1.0, 42))?)?;
    ensure!(
        (model.icc - 0.9).abs() <= 0.05,
        "model cohort ICC {}",
        model.icc
    );
    let flat = icc(&model_rows(&CohortSpec::new(300, 500.0, 0.0, 1.0, 42))?)?;
    ensure!(flat.icc <= 0.1, "zero subject variance ICC {}", flat.icc);
    Ok(())
}

fn cv_correctness() -> Outcome {
    let cv = |rows: &[[f64; 2]], offset| {
        coefficient_of_variation(rows, offset, CvAggregation::Mean).map_err(|e| e.to_string())
    };
    let area = cv(&[[100.0, 102.0]], Measure::Area.cv_offset())?;
    ensure!((area - 1.40014).abs() <= 1e-4, "area pair CV {area}");
    let intensity = cv(&[[0.0, 20.0]], Measure::Intensity.cv_offset())?;
    ensure!(
        (intensity - 1.36772).abs() <= 1e-4,
        "intensity pair CV {intensity}"
    );

    let mut rng = support::rng(10);
    for case in 0..100 {
        let rows = support::random_cohort(&mut rng);
        let (o1, o2) = (rng.random_range(0.0..500.0), rng.random_range(0.0..500.0));
        let moved: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] + o1, r[1] + o1]).collect();
        let (a, b) = (cv(&moved, o2)?, cv(&rows, o1 + o2)?);
        ensure!((a - b).abs() < 1e-9, "cohort {case}: {a} vs {b}");
    }
    Ok(())
}

fn area_exactness() -> Outcome {
    let map = LabelMap::filled(10, 10, TissueClass::Muscle);
    let area = tissue_area(&map, TissueClass::Muscle, 0.9766, 0.9766);
    ensure!(area == 100.0 * 0.9766 * 0.9766, "area {area:?}");
    ensure!((area - 95.374756).abs() <= 1e-12, "area {area:?}");
    Ok(())
}

fn read_dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        files.push((name, fs::read(&path).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

fn end_to_end_determinism(tmp: &Path) -> Outcome {
    let sim = tmp.join("sim");
    run_ok(
        bin()
            .args([
                "simulate-cohort",
                "--n-subjects",
                "12",
                "--size",
                "128",
                "--noise-sigma",
                "10",
                "--seed",
                "7",
                "--out-dir",
            ])
            .arg(&sim),
    )?;
    let manifest = sim.join("manifest.csv");
    let (a, b) = (tmp.join("report_a"), tmp.join("report_b"));
    run_ok(bin().arg("cohort").arg(&manifest).arg("--out-dir").arg(&a))?;
    run_ok(bin().arg("cohort").arg(&manifest).arg("--out-dir").arg(&b))?;
    let (files_a, files_b) = (read_dir_bytes(&a)?, read_dir_bytes(&b)?);
    ensure!(
        files_a.iter().any(|(n, _)| n == "report.csv"),
        "no report.csv written"
    );
    ensure!(files_a == files_b, "repeated cohort runs differ");

    let dup = tmp.join("dup");
    run_ok(
        bin()
            .args([
                "simulate-cohort",
                "--n-subjects",
                "6",
                "--size",
                "128",
                "--noise-sigma",
                "10",
                "--duplicate-scans",
                "--out-dir",
            ])
            .arg(&dup),
    )?;
    let out = tmp.join("report_dup");
    run_ok(
        bin()
            .arg("cohort")
            .arg(dup.join("manifest.csv"))
            .arg("--out-dir")
            .arg(&out),
    )?;
    let report = fs::read_to_string(out.join("report.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    ensure!(
        rows.len() == 26,
        "expected 26 report rows, got {}",
        rows.len()
    );
    for r in rows {
        let icc: f64 = r[4].parse().map_err(|_| format!("bad icc in {r:?}"))?;
        let cv: f64 = r[5].parse().map_err(|_| format!("bad cv in {r:?}"))?;
        ensure!(icc == 1.0 && cv == 0.0, "duplicated scans gave {r:?}");
    }
    Ok(())
}

fn failure_stage(out: &Output) -> Result<String, String> {
    ensure!(!out.status.success(), "malformed input was accepted");
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).map_err(|e| {
        format!(
            "stderr is not a JSON error ({e}): {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    err["error"]["stage"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| format!("error has no stage: {err}"))
}

fn round_trip_fidelity(tmp: &Path) -> Outcome {
    fs::create_dir_all(tmp).map_err(|e| e.to_string())?;
    let mut rng = support::rng(99);
    for case in 0..20 {
        let (w, h) = (rng.random_range(1..64), rng.random_range(1..64));
        let header = SliceHeader {
            width: w,
            height: h,
            spacing_x: rng.random_range(0.3..2.0),
            spacing_y: rng.random_range(0.3..2.0),
            subject_id: format!("s{case}"),
            scan_date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap() + chrono::Days::new(case),
        };
        let hu = (0..w * h).map(|_| rng.random_range(-1024..=3071)).collect();
        let slice = CtSlice::new(header, hu).map_err(|e| e.to_string())?;
        let path = tmp.join(format!("rt{case}.hu"));
        write_slice(&slice, &path).map_err(|e| e.to_string())?;
        ensure!(
            read_slice(&path).map_err(|e| e.to_string())? == slice,
            "slice {case} changed"
        );

        let codes: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..=13)).collect();
        let map = LabelMap::from_codes(w, h, &codes).map_err(|e| e.to_string())?;
        let path = tmp.join(format!("rt{case}.pgm"));
        write_label_map(&map, &path).map_err(|e| e.to_string())?;
        ensure!(
            read_label_map(&path).map_err(|e| e.to_string())? == map,
            "label map {case} changed"
        );
    }

    let ph = tmp.join("phantom");
    run_ok(
        bin()
            .args(["phantom", "--width", "96", "--height", "80", "--out-dir"])
            .arg(&ph),
    )?;

    let short = tmp.join("short.hu");
    fs::copy(ph.join("slice.json"), tmp.join("short.json")).map_err(|e| e.to_string())?;
    fs::write(&short, [0u8; 10]).map_err(|e| e.to_string())?;
    let bad_mask = tmp.join("bad.pgm");
    fs::write(&bad_mask, b"P5\n96 80\n255\n\x01\x02").map_err(|e| e.to_string())?;
    let bad_manifest = tmp.join("bad_manifest.csv");
    fs::write(&bad_manifest, "subject_id,scan_date\nx,not-a-date\n").map_err(|e| e.to_string())?;

    let slice = ph.join("slice.hu");
    let cases: [(Vec<&Path>, &str); 3] = [
        (vec![Path::new("segment"), &short], "read_slice"),
        (
            vec![
                Path::new("segment"),
                &slice,
                Path::new("--organ"),
                &bad_mask,
            ],
            "read_label_map",
        ),
        (vec![Path::new("cohort"), &bad_manifest], "read_manifest"),
    ];
    for (i, (args, stage)) in cases.into_iter().enumerate() {
        let out_dir = tmp.join(format!("malformed{i}"));
        let out = run(bin().args(args).arg("--out-dir").arg(&out_dir))?;
        let got = failure_stage(&out)?;
        ensure!(got == stage, "expected stage {stage}, got {got}");
        ensure!(!out_dir.exists(), "output written for malformed input {i}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Check)> = vec![
        (
            "FCM invariants over 1000+ random datasets",
            Box::new(fcm_invariants),
        ),
        (
            "FCM centroids agree with exhaustive k-means",
            Box::new(fcm_oracle),
        ),
        (
            "phantom fat segmentation and partition",
            Box::new(phantom_segmentation),
        ),
        (
            "small-component boundary and nearest-label fill",
            Box::new(postprocess_boundary),
        ),
        (
            "ICC values, offset invariance and model recovery",
            Box::new(icc_correctness),
        ),
        (
            "CV values and offset associativity",
            Box::new(cv_correctness),
        ),
        ("pixel area at 0.9766 mm spacing", Box::new(area_exactness)),
        (
            "cohort runs are deterministic end to end",
            Box::new(|| end_to_end_determinism(&tmp.path().join("e2e"))),
        ),
        (
            "file round trips and stage-tagged failures",
            Box::new(|| round_trip_fidelity(&tmp.path().join("io"))),
        ),
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(()) => println!("PASS {} {name} ({secs:.2}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
