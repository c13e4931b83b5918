//! Unsupervised body and fat segmentation.
//!
//! The body is the largest thresholded component with its holes filled.
//! Fat is found by two fuzzy c-means runs: the first splits the body into
//! darker and brighter pixels, the second re-clusters the darker pixels and
//! keeps the cluster closest to the fat reference intensity. Fat is then
//! split into subcutaneous, visceral and retroperitoneal compartments using
//! the filled abdominal-wall regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{fcm_cluster, FcmConfig, FcmState};
use crate::model::{class_mask, BinaryMask, CtSlice, LabelMap, TissueClass};
use crate::postprocess::{connected_components, fill_holes, Connectivity};

pub const DEFAULT_BODY_THRESHOLD_HU: f64 = -200.0;
pub const DEFAULT_MEMBERSHIP_THRESHOLD: f64 = 0.5;
/// Typical adipose attenuation; used only to pick the fat cluster.
pub const DEFAULT_FAT_REFERENCE_HU: f64 = -100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub body_threshold_hu: f64,
    pub membership_threshold: f64,
    pub fat_reference_hu: f64,
    /// Stopping rule and iteration cap for both clustering stages; the
    /// cluster count is always 2.
    pub fcm: FcmConfig,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            body_threshold_hu: DEFAULT_BODY_THRESHOLD_HU,
            membership_threshold: DEFAULT_MEMBERSHIP_THRESHOLD,
            fat_reference_hu: DEFAULT_FAT_REFERENCE_HU,
            fcm: FcmConfig::default(),
        }
    }
}

impl SegmentationConfig {
    fn two_cluster_fcm(&self) -> FcmConfig {
        FcmConfig {
            cluster_count: 2,
            initial_centroids: None,
            ..self.fcm.clone()
        }
    }
}

/// Thresholds at `threshold_hu`, keeps the largest 8-connected component and
/// fills its enclosed holes.
pub fn extract_body_mask(slice: &CtSlice, threshold_hu: f64) -> Result<BinaryMask> {
    let (w, h) = slice.dims();
    let bits = slice
        .hu()
        .iter()
        .map(|&v| v as f64 >= threshold_hu)
        .collect();
    let above = BinaryMask::from_bits(w, h, bits)?;
    let comps = connected_components(&above, Connectivity::Eight);
    let largest = comps.largest().ok_or(Error::EmptyBody { threshold_hu })?;
    Ok(fill_holes(&comps.mask_of(largest)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FatClustering {
    pub fat: BinaryMask,
    /// Darker/brighter split of the whole body.
    pub stage_a: FcmState,
    /// Split of the darker pixels; absent when they hold a single intensity,
    /// in which case they are all kept as fat.
    pub stage_b: Option<FcmState>,
}

fn masked_values(slice: &CtSlice, mask: &BinaryMask) -> (Vec<usize>, Vec<f64>) {
    mask.bits()
        .iter()
        .zip(slice.hu())
        .enumerate()
        .filter(|(_, (&b, _))| b)
        .map(|(i, (_, &v))| (i, v as f64))
        .unzip()
}

pub fn segment_fat(
    slice: &CtSlice,
    body: &BinaryMask,
    config: &SegmentationConfig,
) -> Result<FatClustering> {
    if slice.dims() != body.dims() {
        return Err(Error::DimensionMismatch {
            expected: slice.dims(),
            found: body.dims(),
        });
    }
    let fcm = config.two_cluster_fcm();
    let threshold = config.membership_threshold;

    let (body_idx, body_hu) = masked_values(slice, body);
    let stage_a = fcm_cluster(&body_hu, &fcm)?;
    // centroids are ascending, so cluster 0 is the darker one
    let (dark_idx, dark_hu): (Vec<usize>, Vec<f64>) = stage_a
        .memberships
        .column(0)
        .zip(body_idx.iter().zip(&body_hu))
        .filter(|(m, _)| *m > threshold)
        .map(|(_, (&i, &v))| (i, v))
        .unzip();

    let (w, h) = slice.dims();
    let mut fat = BinaryMask::new(w, h);
    let first = dark_hu.first().copied();
    let homogeneous = dark_hu.iter().all(|&v| Some(v) == first);
    if homogeneous {
        for &i in &dark_idx {
            fat.bits_mut()[i] = true;
        }
        return Ok(FatClustering {
            fat,
            stage_a,
            stage_b: None,
        });
    }

    let stage_b = fcm_cluster(&dark_hu, &fcm)?;
    let reference = config.fat_reference_hu;
    let keep =
        if (stage_b.centroids[1] - reference).abs() < (stage_b.centroids[0] - reference).abs() {
            1
        } else {
            0
        };
    for (m, &i) in stage_b.memberships.column(keep).zip(&dark_idx) {
        if m > threshold {
            fat.bits_mut()[i] = true;
        }
    }
    Ok(FatClustering {
        fat,
        stage_a,
        stage_b: Some(stage_b),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FatCompartments {
    pub sft: BinaryMask,
    pub vft: BinaryMask,
    pub rft: BinaryMask,
}

impl FatCompartments {
    /// Paints the three compartments into one map with codes 10, 11, 12.
    pub fn to_label_map(&self) -> LabelMap {
        let (w, h) = self.sft.dims();
        let mut map = LabelMap::empty(w, h);
        for (i, slot) in map.labels_mut().iter_mut().enumerate() {
            if self.sft.bits()[i] {
                *slot = TissueClass::Sft;
            } else if self.vft.bits()[i] {
                *slot = TissueClass::Vft;
            } else if self.rft.bits()[i] {
                *slot = TissueClass::Rft;
            }
        }
        map
    }
}

/// Visceral fat lies in the inner-wall region, retroperitoneal fat in the
/// outer-wall region, and subcutaneous fat is the rest of the body's fat.
pub fn partition_fat(
    fat: &BinaryMask,
    body: &BinaryMask,
    inner_wall_region: &BinaryMask,
    outer_wall_region: &BinaryMask,
) -> Result<FatCompartments> {
    let overlap = inner_wall_region.and(outer_wall_region)?.count();
    if overlap > 0 {
        return Err(Error::OverlappingRegions { pixels: overlap });
    }
    let vft = fat.and(inner_wall_region)?;
    let rft = fat.and(outer_wall_region)?;
    let sft = fat
        .and(body)?
        .and_not(&inner_wall_region.or(outer_wall_region)?)?;
    Ok(FatCompartments { sft, vft, rft })
}

/// Filled region enclosed by the `class` contour of a wall label map,
/// contour pixels included. An absent contour gives an empty region.
pub fn wall_region(wall: &LabelMap, class: TissueClass) -> Result<BinaryMask> {
    let contour = class_mask(wall, class);
    if contour.is_empty() {
        return Ok(contour);
    }
    let filled = fill_holes(&contour);
    if filled.count() == contour.count() {
        return Err(Error::OpenContour { class });
    }
    Ok(filled)
}

/// Everything the unsupervised branch produces for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FatSegmentationResult {
    pub body_mask: BinaryMask,
    pub fat_mask: BinaryMask,
    pub sft: BinaryMask,
    pub vft: BinaryMask,
    pub rft: BinaryMask,
    pub clustering: FatClustering,
}

pub fn segment_body_and_fat(
    slice: &CtSlice,
    inner_wall_region: &BinaryMask,
    outer_wall_region: &BinaryMask,
    config: &SegmentationConfig,
) -> Result<FatSegmentationResult> {
    let body_mask = extract_body_mask(slice, config.body_threshold_hu)?;
    let clustering = segment_fat(slice, &body_mask, config)?;
    let parts = partition_fat(
        &clustering.fat,
        &body_mask,
        inner_wall_region,
        outer_wall_region,
    )?;
    Ok(FatSegmentationResult {
        fat_mask: clustering.fat.clone(),
        body_mask,
        sft: parts.sft,
        vft: parts.vft,
        rft: parts.rft,
        clustering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SliceHeader;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn slice_from(w: usize, h: usize, f: impl Fn(usize, usize) -> i16) -> CtSlice {
        let mut hu = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                hu.push(f(x, y));
            }
        }
        let header = SliceHeader {
            width: w,
            height: h,
            spacing_x: 1.0,
            spacing_y: 1.0,
            subject_id: "t".into(),
            scan_date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        };
        CtSlice::new(header, hu).unwrap()
    }

    fn in_disc(x: usize, y: usize, cx: f64, cy: f64, r: f64) -> bool {
        (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
    }

    #[test]
    fn air_only_slice_has_no_body() {
        let s = slice_from(8, 8, |_, _| -1000);
        assert!(matches!(
            extract_body_mask(&s, -200.0),
            Err(Error::EmptyBody { .. })
        ));
    }

    #[test]
    fn body_keeps_largest_component_and_fills_gas() {
        let s = slice_from(40, 40, |x, y| {
            if in_disc(x, y, 20.0, 20.0, 4.0) {
                -800
            } else if in_disc(x, y, 20.0, 20.0, 12.0) {
                50
            } else if x < 2 && y < 2 {
                60 // stray blob
            } else {
                -1000
            }
        });
        let body = extract_body_mask(&s, -200.0).unwrap();
        let expected = BinaryMask::from_fn(40, 40, |x, y| in_disc(x, y, 20.0, 20.0, 12.0));
        assert_eq!(body, expected);
    }

    #[test]
    fn noiseless_fat_ring_is_recovered_exactly() {
        let s = slice_from(48, 48, |x, y| {
            if in_disc(x, y, 24.0, 24.0, 12.0) {
                50
            } else if in_disc(x, y, 24.0, 24.0, 20.0) {
                -100
            } else {
                -1000
            }
        });
        let body = extract_body_mask(&s, -200.0).unwrap();
        let res = segment_fat(&s, &body, &SegmentationConfig::default()).unwrap();
        let ring = BinaryMask::from_fn(48, 48, |x, y| {
            in_disc(x, y, 24.0, 24.0, 20.0) && !in_disc(x, y, 24.0, 24.0, 12.0)
        });
        assert_eq!(res.fat, ring);
        assert!(res.stage_b.is_none());
    }

    #[test]
    fn stage_b_separates_gas_from_fat() {
        let s = slice_from(48, 48, |x, y| {
            if in_disc(x, y, 24.0, 24.0, 2.0) {
                -800
            } else if in_disc(x, y, 24.0, 24.0, 12.0) {
                50
            } else if in_disc(x, y, 24.0, 24.0, 20.0) {
                -100
            } else {
                -1000
            }
        });
        let body = extract_body_mask(&s, -200.0).unwrap();
        let res = segment_fat(&s, &body, &SegmentationConfig::default()).unwrap();
        let b = res.stage_b.as_ref().expect("two dark populations");
        assert_eq!(b.centroids, vec![-800.0, -100.0]);
        let ring = BinaryMask::from_fn(48, 48, |x, y| {
            in_disc(x, y, 24.0, 24.0, 20.0) && !in_disc(x, y, 24.0, 24.0, 12.0)
        });
        assert_eq!(res.fat, ring);
    }

    #[test]
    fn uniform_body_is_degenerate() {
        let s = slice_from(20, 20, |x, y| {
            if in_disc(x, y, 10.0, 10.0, 6.0) {
                50
            } else {
                -1000
            }
        });
        let body = extract_body_mask(&s, -200.0).unwrap();
        assert!(matches!(
            segment_fat(&s, &body, &SegmentationConfig::default()),
            Err(Error::InsufficientDistinctValues { .. })
        ));
    }

    #[test]
    fn swapping_populations_swaps_selection() {
        // two-valued body: the darker population is always the one kept
        let make = |a: i16, b: i16| {
            slice_from(30, 30, move |x, y| {
                if in_disc(x, y, 15.0, 15.0, 6.0) {
                    a
                } else if in_disc(x, y, 15.0, 15.0, 12.0) {
                    b
                } else {
                    -1000
                }
            })
        };
        let cfg = SegmentationConfig::default();
        let s1 = make(50, -100);
        let s2 = make(-100, 50);
        let body = extract_body_mask(&s1, -200.0).unwrap();
        let f1 = segment_fat(&s1, &body, &cfg).unwrap().fat;
        let f2 = segment_fat(&s2, &body, &cfg).unwrap().fat;
        assert_eq!(f1.and(&f2).unwrap().count(), 0);
        assert_eq!(f1.or(&f2).unwrap(), body);
    }

    #[test]
    fn partition_examples() {
        let body = BinaryMask::from_fn(10, 10, |_, _| true);
        let inner = BinaryMask::from_fn(10, 10, |x, _| x < 4);
        let outer = BinaryMask::from_fn(10, 10, |x, _| x >= 7);
        let fat_in = BinaryMask::from_fn(10, 10, |x, y| x < 3 && y < 3);
        let p = partition_fat(&fat_in, &body, &inner, &outer).unwrap();
        assert!(p.sft.is_empty() && p.rft.is_empty());
        assert_eq!(p.vft, fat_in);

        let fat_out = BinaryMask::from_fn(10, 10, |x, _| x == 5);
        let p = partition_fat(&fat_out, &body, &inner, &outer).unwrap();
        assert_eq!(p.sft, fat_out);
        assert!(p.vft.is_empty() && p.rft.is_empty());

        let overlapping = BinaryMask::from_fn(10, 10, |x, _| x >= 3);
        assert!(matches!(
            partition_fat(&fat_in, &body, &inner, &overlapping),
            Err(Error::OverlappingRegions { pixels: 10 })
        ));
    }

    #[test]
    fn wall_contours_become_regions() {
        let mut wall = LabelMap::empty(9, 9);
        for i in 1..8 {
            for (x, y) in [(i, 1), (i, 7), (1, i), (7, i)] {
                wall.set(x, y, TissueClass::InnerWall);
            }
        }
        let region = wall_region(&wall, TissueClass::InnerWall).unwrap();
        assert_eq!(region.count(), 49);
        assert!(wall_region(&wall, TissueClass::OuterWall)
            .unwrap()
            .is_empty());

        wall.set(7, 4, TissueClass::Background);
        assert!(matches!(
            wall_region(&wall, TissueClass::InnerWall),
            Err(Error::OpenContour { .. })
        ));
    }

    fn arb_region_tiling() -> impl Strategy<Value = (BinaryMask, BinaryMask, BinaryMask, BinaryMask)>
    {
        (1usize..7, 1usize..7).prop_flat_map(|(w, h)| {
            (
                prop::collection::vec(0u8..3, w * h),
                prop::collection::vec(any::<bool>(), w * h),
                prop::collection::vec(any::<bool>(), w * h),
            )
                .prop_map(move |(region, fat, body)| {
                    let body = BinaryMask::from_bits(w, h, body).unwrap();
                    let inner = BinaryMask::from_bits(
                        w,
                        h,
                        region
                            .iter()
                            .zip(body.bits())
                            .map(|(&r, &b)| b && r == 1)
                            .collect(),
                    )
                    .unwrap();
                    let outer = BinaryMask::from_bits(
                        w,
                        h,
                        region
                            .iter()
                            .zip(body.bits())
                            .map(|(&r, &b)| b && r == 2)
                            .collect(),
                    )
                    .unwrap();
                    let fat = BinaryMask::from_bits(w, h, fat)
                        .unwrap()
                        .and(&body)
                        .unwrap();
                    (fat, body, inner, outer)
                })
        })
    }

    proptest! {
        #[test]
        fn compartments_tile_the_fat((fat, body, inner, outer) in arb_region_tiling()) {
            let p = partition_fat(&fat, &body, &inner, &outer).unwrap();
            prop_assert_eq!(p.sft.and(&p.vft).unwrap().count(), 0);
            prop_assert_eq!(p.sft.and(&p.rft).unwrap().count(), 0);
            prop_assert_eq!(p.vft.and(&p.rft).unwrap().count(), 0);
            let union = p.sft.or(&p.vft).unwrap().or(&p.rft).unwrap();
            prop_assert_eq!(union, fat);
        }

        #[test]
        fn body_ignores_sub_threshold_structures(gx in 0usize..6, gy in 0usize..6, v in -1024i16..-200) {
            let base = |x: usize, y: usize| if in_disc(x, y, 20.0, 20.0, 10.0) { 40 } else { -1000 };
            let plain = slice_from(40, 40, base);
            let with_junk = slice_from(40, 40, |x, y| {
                if x >= gx && x < gx + 3 && y >= gy && y < gy + 3 { v } else { base(x, y) }
            });
            prop_assert_eq!(
                extract_body_mask(&plain, -200.0).unwrap(),
                extract_body_mask(&with_junk, -200.0).unwrap()
            );
        }
    }
}
