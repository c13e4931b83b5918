//! Body composition analysis for single-slice abdominal CT.
//!
//! Fat is segmented with two-stage fuzzy c-means clustering, combined with
//! externally supplied organ, muscle and wall masks into one label map,
//! measured per tissue, and summarised across a longitudinal cohort with
//! ICC and CV statistics.

pub mod cohort;
pub mod error;
pub mod fcm;
pub mod io;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod segmentation;
pub mod stats;

pub use error::{Error, Result};
pub use fcm::{fcm_cluster, FcmConfig, FcmState, Memberships};
pub use metrics::{measure_all, TissueMeasurement};
pub use model::{BinaryMask, CtSlice, LabelMap, SliceHeader, TissueClass, WindowedImage};
pub use phantom::{generate_cohort, generate_phantom, CohortSpec, Phantom, PhantomSpec};
pub use pipeline::{run_slice_pipeline, SliceInputs, SliceResult};
pub use postprocess::{fuse_masks, FusionPolicy};
pub use segmentation::SegmentationConfig;
pub use stats::{CohortReport, CvAggregation, FollowupPair, Measure, ScanRecord};
