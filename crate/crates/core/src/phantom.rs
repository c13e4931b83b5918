//! Synthetic test data: abdominal slice phantoms with exact ground truth and
//! measurement cohorts with known variance components.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha) with
//! Gaussian draws from `rand_distr::Normal`, which uses the ziggurat method.
//! Both are platform independent, so a given spec and seed reproduce the
//! same output everywhere. Phantom noise is drawn once per pixel in
//! row-major order; cohort draws are taken subject by subject.
//!
//! The HU constants below are library defaults for synthetic data, not
//! measured tissue values.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TissueMeasurement;
use crate::model::{CtSlice, LabelMap, SliceHeader, TissueClass, HU_MAX, HU_MIN};
use crate::stats::{FollowupPair, ScanRecord};

pub const AIR_HU: f64 = -1000.0;
pub const FAT_HU: f64 = -100.0;
pub const MUSCLE_HU: f64 = 50.0;
pub const ORGAN_HU: f64 = 55.0;
pub const GAS_HU: f64 = -800.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    fn shrunk(&self, by: f64) -> Ellipse {
        Ellipse {
            rx: self.rx - by,
            ry: self.ry - by,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ellipse(Ellipse),
    /// Ring between the ellipse and the same ellipse shrunk by `thickness`.
    Annulus {
        #[serde(flatten)]
        outer: Ellipse,
        thickness: f64,
    },
    /// Exactly `pixel_count` pixels filled row-major in a strip `width`
    /// pixels wide starting at `(x0, y0)`.
    Block {
        x0: usize,
        y0: usize,
        width: usize,
        pixel_count: usize,
    },
}

impl Shape {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Shape::Ellipse(e) => e.contains(x, y),
            Shape::Annulus { outer, thickness } => {
                outer.contains(x, y) && !outer.shrunk(thickness).contains(x, y)
            }
            Shape::Block {
                x0,
                y0,
                width,
                pixel_count,
            } => {
                if width == 0 || x < x0 || y < y0 || x >= x0 + width {
                    return false;
                }
                (y - y0) * width + (x - x0) < pixel_count
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compartment {
    pub shape: Shape,
    pub class: TissueClass,
    pub mean_hu: f64,
}

fn default_spacing() -> f64 {
    0.9766
}

fn default_body_class() -> TissueClass {
    TissueClass::Sft
}

fn default_body_hu() -> f64 {
    FAT_HU
}

fn default_subject() -> String {
    "phantom".into()
}

fn default_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    pub body: Ellipse,
    /// Label and intensity of body pixels no compartment covers.
    #[serde(default = "default_body_class")]
    pub body_class: TissueClass,
    #[serde(default = "default_body_hu")]
    pub body_hu: f64,
    /// Painted in order; later compartments overwrite earlier ones.
    #[serde(default)]
    pub compartments: Vec<Compartment>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_subject")]
    pub subject_id: String,
    #[serde(default = "default_date")]
    pub scan_date: NaiveDate,
}

impl PhantomSpec {
    fn centred_body(width: usize, height: usize, rx: f64, ry: f64) -> Ellipse {
        Ellipse {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            rx: rx * width as f64,
            ry: ry * height as f64,
        }
    }

    fn base(width: usize, height: usize, body: Ellipse) -> Self {
        Self {
            width,
            height,
            spacing: default_spacing(),
            body,
            body_class: TissueClass::Sft,
            body_hu: FAT_HU,
            compartments: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
            subject_id: default_subject(),
            scan_date: default_date(),
        }
    }

    /// A disc of subcutaneous fat around a muscle core.
    pub fn fat_annulus(size: usize) -> Self {
        let body = Self::centred_body(size, size, 0.42, 0.42);
        let core = Ellipse {
            rx: body.rx * 0.6,
            ry: body.ry * 0.6,
            ..body
        };
        let mut spec = Self::base(size, size, body);
        spec.compartments.push(Compartment {
            shape: Shape::Ellipse(core),
            class: TissueClass::Muscle,
            mean_hu: MUSCLE_HU,
        });
        spec
    }

    /// Schematic abdomen: subcutaneous fat, an anterior inner-wall contour
    /// around visceral fat with liver, spleen, stomach and a gas pocket, a
    /// posterior outer-wall contour around retroperitoneal fat with both
    /// kidneys and the aorta, and two lateral muscles.
    pub fn abdomen(width: usize, height: usize) -> Self {
        let (w, h) = (width as f64, height as f64);
        let body = Self::centred_body(width, height, 0.45, 0.42);
        let (cx, cy) = (body.cx, body.cy);
        let wall = (0.016 * w).max(2.0);
        let e = |dx: f64, dy: f64, rx: f64, ry: f64| Ellipse {
            cx: cx + dx * w,
            cy: cy + dy * h,
            rx: rx * w,
            ry: ry * h,
        };
        let inner = e(0.0, -0.08, 0.34, 0.22);
        let outer = e(0.0, 0.26, 0.22, 0.09);
        let c = |shape, class, mean_hu| Compartment {
            shape,
            class,
            mean_hu,
        };
        use TissueClass::*;
        let mut spec = Self::base(width, height, body);
        spec.compartments = vec![
            c(
                Shape::Ellipse(e(-0.38, 0.05, 0.035, 0.10)),
                Muscle,
                MUSCLE_HU,
            ),
            c(
                Shape::Ellipse(e(0.38, 0.05, 0.035, 0.10)),
                Muscle,
                MUSCLE_HU,
            ),
            c(
                Shape::Annulus {
                    outer: inner,
                    thickness: wall,
                },
                InnerWall,
                MUSCLE_HU,
            ),
            c(Shape::Ellipse(inner.shrunk(wall)), Vft, FAT_HU),
            c(Shape::Ellipse(e(-0.17, -0.10, 0.10, 0.09)), Liver, ORGAN_HU),
            c(Shape::Ellipse(e(0.20, -0.12, 0.05, 0.06)), Spleen, ORGAN_HU),
            c(
                Shape::Ellipse(e(0.05, -0.15, 0.06, 0.05)),
                Stomach,
                ORGAN_HU,
            ),
            c(
                Shape::Ellipse(e(0.02, 0.02, 0.018, 0.024)),
                BodyMask,
                GAS_HU,
            ),
            c(
                Shape::Annulus {
                    outer,
                    thickness: wall,
                },
                OuterWall,
                MUSCLE_HU,
            ),
            c(Shape::Ellipse(outer.shrunk(wall)), Rft, FAT_HU),
            c(
                Shape::Ellipse(e(-0.12, 0.26, 0.045, 0.05)),
                RightKidney,
                ORGAN_HU,
            ),
            c(
                Shape::Ellipse(e(0.12, 0.26, 0.045, 0.05)),
                LeftKidney,
                ORGAN_HU,
            ),
            c(Shape::Ellipse(e(0.0, 0.24, 0.03, 0.035)), Aorta, ORGAN_HU),
        ];
        spec
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.seed = seed;
        self
    }

    pub fn with_identity(mut self, subject_id: impl Into<String>, scan_date: NaiveDate) -> Self {
        self.subject_id = subject_id.into();
        self.scan_date = scan_date;
        self
    }
}

/// A synthetic slice and its exact label geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub slice: CtSlice,
    pub truth: LabelMap,
}

impl Phantom {
    pub fn organ_map(&self) -> LabelMap {
        self.truth.restricted_to(&TissueClass::ORGANS)
    }

    pub fn muscle_map(&self) -> LabelMap {
        self.truth.restricted_to(&[TissueClass::Muscle])
    }

    pub fn wall_map(&self) -> LabelMap {
        self.truth
            .restricted_to(&[TissueClass::InnerWall, TissueClass::OuterWall])
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidSpec(
            "phantom dimensions must be positive".into(),
        ));
    }
    if !spec.noise_sigma.is_finite() || spec.noise_sigma < 0.0 {
        return Err(Error::InvalidSpec(format!(
            "noise_sigma must be a non-negative number, got {}",
            spec.noise_sigma
        )));
    }
    if !(spec.body.rx > 0.0 && spec.body.ry > 0.0) {
        return Err(Error::InvalidSpec("body semi-axes must be positive".into()));
    }

    let mut labels = vec![TissueClass::Background; w * h];
    let mut mean = vec![AIR_HU; w * h];
    for y in 0..h {
        for x in 0..w {
            if spec.body.contains(x, y) {
                labels[y * w + x] = spec.body_class;
                mean[y * w + x] = spec.body_hu;
            }
        }
    }
    for (n, comp) in spec.compartments.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                if !comp.shape.contains(x, y) {
                    continue;
                }
                if !spec.body.contains(x, y) {
                    return Err(Error::InvalidSpec(format!(
                        "compartment {n} ({}) reaches outside the body at ({x}, {y})",
                        comp.class
                    )));
                }
                labels[y * w + x] = comp.class;
                mean[y * w + x] = comp.mean_hu;
            }
        }
    }

    let to_hu = |v: f64| v.round().clamp(HU_MIN as f64, HU_MAX as f64) as i16;
    let hu: Vec<i16> = if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise =
            Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        mean.iter()
            .map(|&m| to_hu(m + noise.sample(&mut rng)))
            .collect()
    } else {
        mean.iter().map(|&m| to_hu(m)).collect()
    };

    let header = SliceHeader {
        width: w,
        height: h,
        spacing_x: spec.spacing,
        spacing_y: spec.spacing,
        subject_id: spec.subject_id.clone(),
        scan_date: spec.scan_date,
    };
    Ok(Phantom {
        slice: CtSlice::new(header, hu)?,
        truth: LabelMap::from_labels(w, h, labels)?,
    })
}

fn default_class() -> TissueClass {
    TissueClass::Muscle
}

fn default_intensity_mean() -> f64 {
    MUSCLE_HU
}

fn default_interval() -> i64 {
    730
}

/// Generative model for a two-scan cohort:
/// `x_ij = true_mean + a_i + session_offset·[j = 2] + e_ij` with
/// `a_i ~ N(0, sigma2_a)` and `e_ij ~ N(0, sigma2_w)`. Intensities follow the
/// same model around `intensity_mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub true_mean: f64,
    pub sigma2_a: f64,
    pub sigma2_w: f64,
    #[serde(default)]
    pub session_offset: f64,
    pub seed: u64,
    #[serde(default = "default_class")]
    pub class: TissueClass,
    #[serde(default = "default_intensity_mean")]
    pub intensity_mean: f64,
    #[serde(default = "default_interval")]
    pub interval_days: i64,
}

impl CohortSpec {
    pub fn new(n_subjects: usize, true_mean: f64, sigma2_a: f64, sigma2_w: f64, seed: u64) -> Self {
        Self {
            n_subjects,
            true_mean,
            sigma2_a,
            sigma2_w,
            session_offset: 0.0,
            seed,
            class: default_class(),
            intensity_mean: default_intensity_mean(),
            interval_days: default_interval(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::InvalidSpec(format!(
                "a cohort needs at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(self.sigma2_a >= 0.0 && self.sigma2_w >= 0.0)
            || !self.sigma2_a.is_finite()
            || !self.sigma2_w.is_finite()
        {
            return Err(Error::InvalidSpec("variances must be non-negative".into()));
        }
        if self.class.is_background() {
            return Err(Error::InvalidSpec(
                "cohort class cannot be background".into(),
            ));
        }
        Ok(())
    }
}

/// Raw draws for one subject: `[scan 1, scan 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDraw {
    pub subject_id: String,
    pub first_date: NaiveDate,
    pub second_date: NaiveDate,
    pub area: [f64; 2],
    pub intensity: [f64; 2],
}

pub fn subject_id(index: usize) -> String {
    format!("subj{:04}", index + 1)
}

pub fn draw_cohort(spec: &CohortSpec) -> Result<Vec<SubjectDraw>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let between =
        Normal::new(0.0, spec.sigma2_a.sqrt()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let within =
        Normal::new(0.0, spec.sigma2_w.sqrt()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let base = NaiveDate::from_ymd_opt(2008, 1, 1).expect("valid date");
    let mut draws = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let mut series = |centre: f64| {
            let a = between.sample(&mut rng);
            let x1 = centre + a + within.sample(&mut rng);
            let x2 = centre + a + spec.session_offset + within.sample(&mut rng);
            [x1, x2]
        };
        let area = series(spec.true_mean);
        let intensity = series(spec.intensity_mean);
        let first_date = base + chrono::Duration::days(i as i64);
        draws.push(SubjectDraw {
            subject_id: subject_id(i),
            first_date,
            second_date: first_date + chrono::Duration::days(spec.interval_days),
            area,
            intensity,
        });
    }
    Ok(draws)
}

/// Follow-up pairs carrying one measurement of `spec.class` per scan. The
/// areas are the continuous model values; `pixel_count` is their nominal
/// unit-spacing rounding and only marks the class as present.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<FollowupPair>> {
    let draws = draw_cohort(spec)?;
    Ok(draws
        .into_iter()
        .map(|d| {
            let scan = |j: usize, date: NaiveDate| ScanRecord {
                subject_id: d.subject_id.clone(),
                scan_date: date,
                measurements: vec![TissueMeasurement {
                    subject_id: d.subject_id.clone(),
                    scan_date: date,
                    class: spec.class,
                    area_mm2: d.area[j],
                    mean_hu: Some(d.intensity[j]),
                    pixel_count: d.area[j].abs().round().max(1.0) as u64,
                }],
            };
            FollowupPair::new(scan(0, d.first_date), scan(1, d.second_date))
        })
        .collect())
}
