//! Per-tissue area and mean intensity.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{class_mask, dice, CtSlice, LabelMap, TissueClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueMeasurement {
    pub subject_id: String,
    pub scan_date: NaiveDate,
    pub class: TissueClass,
    pub area_mm2: f64,
    /// Mean raw HU; `None` when the class has no pixels.
    pub mean_hu: Option<f64>,
    pub pixel_count: u64,
}

/// `pixel_count × spacing_x × spacing_y`.
pub fn tissue_area(map: &LabelMap, class: TissueClass, spacing_x: f64, spacing_y: f64) -> f64 {
    map.count(class) as f64 * spacing_x * spacing_y
}

/// Mean raw HU over the pixels of `class`.
pub fn mean_intensity(slice: &CtSlice, map: &LabelMap, class: TissueClass) -> Result<f64> {
    if slice.dims() != map.dims() {
        return Err(Error::DimensionMismatch {
            expected: slice.dims(),
            found: map.dims(),
        });
    }
    let (sum, n) = slice
        .hu()
        .iter()
        .zip(map.labels())
        .filter(|(_, &c)| c == class)
        .fold((0i64, 0u64), |(s, n), (&v, _)| (s + v as i64, n + 1));
    if n == 0 {
        return Err(Error::EmptyTissue(class));
    }
    Ok(sum as f64 / n as f64)
}

/// One record per non-background class present in `map`, by ascending code.
pub fn measure_all(slice: &CtSlice, map: &LabelMap) -> Result<Vec<TissueMeasurement>> {
    if slice.dims() != map.dims() {
        return Err(Error::DimensionMismatch {
            expected: slice.dims(),
            found: map.dims(),
        });
    }
    let mut sums = [0i64; 14];
    let mut counts = [0u64; 14];
    for (&v, &c) in slice.hu().iter().zip(map.labels()) {
        sums[c.code() as usize] += v as i64;
        counts[c.code() as usize] += 1;
    }
    let (sx, sy) = slice.spacing();
    Ok(TissueClass::ALL
        .into_iter()
        .skip(1)
        .filter(|c| counts[c.code() as usize] > 0)
        .map(|class| {
            let n = counts[class.code() as usize];
            TissueMeasurement {
                subject_id: slice.subject_id().to_string(),
                scan_date: slice.scan_date(),
                class,
                area_mm2: n as f64 * sx * sy,
                mean_hu: Some(sums[class.code() as usize] as f64 / n as f64),
                pixel_count: n,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassDice {
    pub class: TissueClass,
    pub dice: f64,
    pub pixels_a: usize,
    pub pixels_b: usize,
}

/// Dice overlap for each non-background class present in either map.
pub fn per_class_dice(a: &LabelMap, b: &LabelMap) -> Result<Vec<ClassDice>> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    TissueClass::ALL
        .into_iter()
        .skip(1)
        .filter(|&c| a.count(c) > 0 || b.count(c) > 0)
        .map(|class| {
            let (ma, mb) = (class_mask(a, class), class_mask(b, class));
            Ok(ClassDice {
                class,
                dice: dice(&ma, &mb)?,
                pixels_a: ma.count(),
                pixels_b: mb.count(),
            })
        })
        .collect()
}
