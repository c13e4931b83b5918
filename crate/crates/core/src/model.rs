//! Shared image, label and mask types, soft-tissue windowing and Dice overlap.
//!
//! All grids are row-major: pixel `(x, y)` lives at index `y * width + x`.

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowest representable Hounsfield value of a calibrated slice.
pub const HU_MIN: i16 = -1024;
/// Highest representable Hounsfield value of a calibrated slice.
pub const HU_MAX: i16 = 3071;

/// Soft-tissue display window, in HU.
pub const SOFT_TISSUE_WINDOW: (i32, i32) = (-125, 275);

/// Geometry and identity of a slice; the JSON sidecar of the on-disk format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceHeader {
    pub width: usize,
    pub height: usize,
    /// mm per pixel along x.
    pub spacing_x: f64,
    /// mm per pixel along y.
    pub spacing_y: f64,
    pub subject_id: String,
    pub scan_date: NaiveDate,
}

/// One axial CT slice of calibrated HU values plus physical spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSlice {
    header: SliceHeader,
    hu: Vec<i16>,
}

impl CtSlice {
    pub fn new(header: SliceHeader, hu: Vec<i16>) -> Result<Self> {
        if header.width == 0 || header.height == 0 {
            return Err(Error::InvalidSlice(format!(
                "dimensions must be positive, got {}x{}",
                header.width, header.height
            )));
        }
        let expected = header.width * header.height;
        if hu.len() != expected {
            return Err(Error::InvalidSlice(format!(
                "expected {expected} HU values for {}x{}, got {}",
                header.width,
                header.height,
                hu.len()
            )));
        }
        if !(header.spacing_x > 0.0 && header.spacing_y > 0.0)
            || !header.spacing_x.is_finite()
            || !header.spacing_y.is_finite()
        {
            return Err(Error::InvalidSlice(format!(
                "pixel spacing must be positive, got {} x {}",
                header.spacing_x, header.spacing_y
            )));
        }
        if let Some((i, v)) = hu
            .iter()
            .enumerate()
            .find(|(_, v)| !(HU_MIN..=HU_MAX).contains(*v))
        {
            return Err(Error::InvalidSlice(format!(
                "HU value {v} at index {i} outside [{HU_MIN}, {HU_MAX}]"
            )));
        }
        Ok(Self { header, hu })
    }

    pub fn header(&self) -> &SliceHeader {
        &self.header
    }

    pub fn width(&self) -> usize {
        self.header.width
    }

    pub fn height(&self) -> usize {
        self.header.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.header.width, self.header.height)
    }

    pub fn hu(&self) -> &[i16] {
        &self.hu
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.header.spacing_x, self.header.spacing_y)
    }

    pub fn subject_id(&self) -> &str {
        &self.header.subject_id
    }

    pub fn scan_date(&self) -> NaiveDate {
        self.header.scan_date
    }

    pub fn into_parts(self) -> (SliceHeader, Vec<i16>) {
        (self.header, self.hu)
    }
}

/// The thirteen target structures plus background, with fixed codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum TissueClass {
    #[default]
    Background = 0,
    Spleen = 1,
    RightKidney = 2,
    LeftKidney = 3,
    Liver = 4,
    Stomach = 5,
    Aorta = 6,
    Muscle = 7,
    InnerWall = 8,
    OuterWall = 9,
    /// Subcutaneous fat.
    Sft = 10,
    /// Visceral fat.
    Vft = 11,
    /// Retroperitoneal fat.
    Rft = 12,
    BodyMask = 13,
}

impl TissueClass {
    pub const ALL: [TissueClass; 14] = [
        TissueClass::Background,
        TissueClass::Spleen,
        TissueClass::RightKidney,
        TissueClass::LeftKidney,
        TissueClass::Liver,
        TissueClass::Stomach,
        TissueClass::Aorta,
        TissueClass::Muscle,
        TissueClass::InnerWall,
        TissueClass::OuterWall,
        TissueClass::Sft,
        TissueClass::Vft,
        TissueClass::Rft,
        TissueClass::BodyMask,
    ];

    pub const ORGANS: [TissueClass; 6] = [
        TissueClass::Spleen,
        TissueClass::RightKidney,
        TissueClass::LeftKidney,
        TissueClass::Liver,
        TissueClass::Stomach,
        TissueClass::Aorta,
    ];

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::InvalidClassCode(code as u32))
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Background => "background",
            TissueClass::Spleen => "spleen",
            TissueClass::RightKidney => "right_kidney",
            TissueClass::LeftKidney => "left_kidney",
            TissueClass::Liver => "liver",
            TissueClass::Stomach => "stomach",
            TissueClass::Aorta => "aorta",
            TissueClass::Muscle => "muscle",
            TissueClass::InnerWall => "inner_wall",
            TissueClass::OuterWall => "outer_wall",
            TissueClass::Sft => "sft",
            TissueClass::Vft => "vft",
            TissueClass::Rft => "rft",
            TissueClass::BodyMask => "body_mask",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    pub fn is_background(self) -> bool {
        self == TissueClass::Background
    }
}

impl fmt::Display for TissueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for TissueClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TissueClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        TissueClass::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown tissue class `{name}`")))
    }
}

/// Per-pixel tissue labels aligned to a slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<TissueClass>,
}

impl LabelMap {
    /// An all-background map.
    pub fn empty(width: usize, height: usize) -> Self {
        Self::filled(width, height, TissueClass::Background)
    }

    pub fn filled(width: usize, height: usize, class: TissueClass) -> Self {
        Self {
            width,
            height,
            labels: vec![class; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<TissueClass>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (labels.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    /// Builds a map from raw codes, rejecting any code outside `0..=13`.
    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self> {
        let labels = codes
            .iter()
            .map(|&c| TissueClass::from_code(c))
            .collect::<Result<Vec<_>>>()?;
        Self::from_labels(width, height, labels)
    }

    /// Paints `class` wherever `mask` is set.
    pub fn from_mask(mask: &BinaryMask, class: TissueClass) -> Self {
        let labels = mask
            .bits()
            .iter()
            .map(|&b| if b { class } else { TissueClass::Background })
            .collect();
        Self {
            width: mask.width(),
            height: mask.height(),
            labels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[TissueClass] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> TissueClass {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: TissueClass) {
        self.labels[y * self.width + x] = class;
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|c| c.code()).collect()
    }

    /// Number of pixels carrying `class`.
    pub fn count(&self, class: TissueClass) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Copy of this map with every class not in `keep` set to background.
    pub fn restricted_to(&self, keep: &[TissueClass]) -> LabelMap {
        let labels = self
            .labels
            .iter()
            .map(|c| {
                if keep.contains(c) {
                    *c
                } else {
                    TissueClass::Background
                }
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            labels,
        }
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [TissueClass] {
        &mut self.labels
    }
}

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: (bits.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.check_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Pixels in `self` but not in `other`.
    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Soft-tissue windowed display image, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowedImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Maps one HU value through the `[-125, 275]` window onto `[0, 255]`,
/// rounding half-up.
pub fn window_value(hu: i16) -> u8 {
    let (lo, hi) = SOFT_TISSUE_WINDOW;
    let v = (hu as i32).clamp(lo, hi) - lo;
    let span = hi - lo;
    // floor((v * 255 / span) + 1/2) in exact integer arithmetic
    ((v * 255 * 2 + span) / (2 * span)) as u8
}

pub fn apply_soft_tissue_window(slice: &CtSlice) -> WindowedImage {
    WindowedImage {
        width: slice.width(),
        height: slice.height(),
        pixels: slice.hu().iter().map(|&v| window_value(v)).collect(),
    }
}

/// Dice overlap `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_dims(b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

pub fn class_mask(map: &LabelMap, class: TissueClass) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        bits: map.labels.iter().map(|&c| c == class).collect(),
    }
}
