//! End-to-end processing of one slice.
//!
//! Body and fat come from the unsupervised branch; organ, muscle and wall
//! labels are supplied by the caller. Each source map loses components
//! smaller than the policy minimum, the sources are fused by precedence, and
//! pixels freed by the removal that no other source covers take the label of
//! their nearest labeled neighbour before measurement. Errors carry the name
//! of the stage that raised them.

use crate::error::{Error, Result, StageExt};
use crate::metrics::{measure_all, TissueMeasurement};
use crate::model::{BinaryMask, CtSlice, LabelMap, TissueClass};
use crate::postprocess::{fuse_masks, nearest_label_fill, remove_small_components, FusionPolicy};
use crate::segmentation::{
    extract_body_mask, partition_fat, segment_fat, wall_region, FatSegmentationResult,
    SegmentationConfig,
};

/// Supervised maps for one slice; absent maps count as all background.
#[derive(Debug, Clone, Copy)]
pub struct SliceInputs<'a> {
    pub slice: &'a CtSlice,
    pub organ: Option<&'a LabelMap>,
    pub muscle: Option<&'a LabelMap>,
    pub wall: Option<&'a LabelMap>,
}

impl<'a> SliceInputs<'a> {
    pub fn new(slice: &'a CtSlice) -> Self {
        Self {
            slice,
            organ: None,
            muscle: None,
            wall: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceResult {
    pub fused: LabelMap,
    pub measurements: Vec<TissueMeasurement>,
    pub segmentation: FatSegmentationResult,
}

/// Checks that `map` matches the slice and carries only `allowed` classes.
fn checked_map(
    map: Option<&LabelMap>,
    dims: (usize, usize),
    allowed: &[TissueClass],
    role: &str,
) -> Result<LabelMap> {
    let Some(map) = map else {
        return Ok(LabelMap::empty(dims.0, dims.1));
    };
    if map.dims() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            found: map.dims(),
        });
    }
    if let Some(c) = map
        .labels()
        .iter()
        .find(|c| !c.is_background() && !allowed.contains(c))
    {
        return Err(Error::InvalidConfig(format!(
            "{role} map contains class {c}"
        )));
    }
    Ok(map.clone())
}

pub fn run_slice_pipeline(
    inputs: SliceInputs<'_>,
    config: &SegmentationConfig,
    policy: &FusionPolicy,
) -> Result<SliceResult> {
    let slice = inputs.slice;
    let dims = slice.dims();
    let (organ, muscle, wall) = (|| {
        Ok((
            checked_map(inputs.organ, dims, &TissueClass::ORGANS, "organ")?,
            checked_map(inputs.muscle, dims, &[TissueClass::Muscle], "muscle")?,
            checked_map(
                inputs.wall,
                dims,
                &[TissueClass::InnerWall, TissueClass::OuterWall],
                "wall",
            )?,
        ))
    })()
    .stage("validate_inputs")?;

    let (inner, outer) = wall_region(&wall, TissueClass::InnerWall)
        .and_then(|i| Ok((i, wall_region(&wall, TissueClass::OuterWall)?)))
        .stage("wall_regions")?;

    let body_mask =
        extract_body_mask(slice, config.body_threshold_hu).stage("extract_body_mask")?;
    let clustering = segment_fat(slice, &body_mask, config).stage("segment_fat")?;
    let parts =
        partition_fat(&clustering.fat, &body_mask, &inner, &outer).stage("partition_fat")?;

    let min = policy.min_component_size();
    let sources = [
        organ,
        muscle,
        wall,
        parts.to_label_map(),
        LabelMap::from_mask(&body_mask, TissueClass::BodyMask),
    ];
    let mut removed = BinaryMask::new(dims.0, dims.1);
    let mut cleaned = Vec::with_capacity(sources.len());
    for src in &sources {
        let (map, gone) = remove_small_components(src, min);
        removed = removed.or(&gone).stage("remove_small_components")?;
        cleaned.push(map);
    }

    let fused = fuse_masks(
        &cleaned[0],
        &cleaned[1],
        &cleaned[2],
        &cleaned[3],
        &cleaned[4],
        policy,
    )
    .stage("fuse_masks")?;

    let holes = BinaryMask::from_fn(dims.0, dims.1, |x, y| {
        removed.get(x, y) && fused.get(x, y).is_background()
    });
    let fused = if holes.is_empty() {
        fused
    } else {
        nearest_label_fill(&fused, &holes).stage("nearest_label_fill")?
    };

    let measurements = measure_all(slice, &fused).stage("measure_all")?;
    Ok(SliceResult {
        fused,
        measurements,
        segmentation: FatSegmentationResult {
            fat_mask: clustering.fat.clone(),
            body_mask,
            sft: parts.sft,
            vft: parts.vft,
            rft: parts.rft,
            clustering,
        },
    })
}
