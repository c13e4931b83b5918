//! File formats.
//!
//! Slices are a raw payload of little-endian `i16` HU values in row-major
//! order (`<stem>.hu`) next to a JSON sidecar (`<stem>.json`) holding the
//! [`SliceHeader`]. Label maps are binary 8-bit PGM (`P5`) files with class
//! codes stored directly. Every write goes to a temporary file in the target
//! directory and is renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ClassDice, TissueMeasurement};
use crate::model::{CtSlice, LabelMap, SliceHeader};
use crate::stats::{CohortReport, SpaghettiRow};

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// The payload path for a slice given either of its two files.
pub fn slice_payload_path(path: &Path) -> PathBuf {
    path.with_extension("hu")
}

pub fn slice_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Reads a slice from its payload or sidecar path.
pub fn read_slice(path: &Path) -> Result<CtSlice> {
    let sidecar = slice_sidecar_path(path);
    let payload = slice_payload_path(path);
    let header: SliceHeader = serde_json::from_slice(&read_bytes(&sidecar)?)
        .map_err(|e| Error::format(&sidecar, format!("malformed header: {e}")))?;
    let bytes = read_bytes(&payload)?;
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::format(&sidecar, "slice dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(
            &payload,
            format!(
                "expected {expected} bytes for a {}x{} slice, found {}",
                header.width,
                header.height,
                bytes.len()
            ),
        ));
    }
    let hu = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    CtSlice::new(header, hu).map_err(|e| Error::format(&payload, e.to_string()))
}

/// Writes `<stem>.hu` and `<stem>.json` for `path`.
pub fn write_slice(slice: &CtSlice, path: &Path) -> Result<()> {
    let payload: Vec<u8> = slice.hu().iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = serde_json::to_vec_pretty(slice.header())
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(&slice_payload_path(path), &payload)?;
    write_atomic(&slice_sidecar_path(path), &header)
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<LabelMap, String> {
    if !bytes.starts_with(b"P5") {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut cur = PgmCursor { bytes, pos: 2 };
    let width = cur.number().ok_or("missing or invalid width")?;
    let height = cur.number().ok_or("missing or invalid height")?;
    let maxval = cur.number().ok_or("missing or invalid maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("invalid dimensions {width}x{height}"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(format!("maxval {maxval} is not an 8-bit value"));
    }
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    let data = &bytes[cur.pos + 1..];
    let expected = width * height;
    if data.len() != expected {
        return Err(format!(
            "expected {expected} bytes of pixel data for a {width}x{height} map, found {}",
            data.len()
        ));
    }
    LabelMap::from_codes(width, height, data).map_err(|e| e.to_string())
}

pub fn encode_pgm(map: &LabelMap) -> Vec<u8> {
    let (w, h) = map.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.codes());
    out
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    parse_pgm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_label_map(map: &LabelMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pgm(map))
}

/// One scan of a cohort manifest; relative paths are resolved against the
/// manifest's directory when read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub scan_date: NaiveDate,
    pub slice_path: PathBuf,
    pub organ_mask_path: Option<PathBuf>,
    pub muscle_mask_path: Option<PathBuf>,
    pub wall_mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CohortManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut keys: Vec<(&str, NaiveDate)> = entries
            .iter()
            .map(|e| (e.subject_id.as_str(), e.scan_date))
            .collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSpec(format!(
                "manifest lists subject {} on {} more than once",
                w[0].0, w[0].1
            )));
        }
        Ok(Self { entries })
    }

    /// CSV with header
    /// `subject_id,scan_date,slice_path,organ_mask_path,muscle_mask_path,wall_mask_path`;
    /// empty mask cells mean "not supplied".
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let mut rdr =
            csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut entries = Vec::new();
        for (row, rec) in rdr.deserialize::<ManifestEntry>().enumerate() {
            let mut e = rec.map_err(|e| Error::format(path, format!("row {}: {e}", row + 1)))?;
            let resolve = |p: &Path| {
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            e.slice_path = resolve(&e.slice_path);
            for p in [
                &mut e.organ_mask_path,
                &mut e.muscle_mask_path,
                &mut e.wall_mask_path,
            ]
            .into_iter()
            .flatten()
            {
                *p = resolve(p);
            }
            entries.push(e);
        }
        Self::new(entries).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for e in &self.entries {
            w.serialize(e)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::format(path, e.to_string()))?;
        write_atomic(path, &bytes)
    }
}

/// Fixed formatting with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit (e.g. 9.999996)
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded != 0.0 && rounded.abs().log10().floor() as i32 > magnitude && decimals > 0 {
        let d = decimals - 1;
        return format!("{x:.d$}");
    }
    s
}

pub fn report_csv(report: &CohortReport) -> Vec<u8> {
    let mut out = String::from("class,measure,n,raw_icc,icc,cv_percent\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.class,
            r.measure,
            r.n_subjects,
            format_sig6(r.raw_icc),
            format_sig6(r.icc),
            format_sig6(r.cv_percent)
        ));
    }
    out.into_bytes()
}

/// Area and intensity per subject and scan for one class.
pub fn spaghetti_csv(area: &[SpaghettiRow], intensity: &[SpaghettiRow]) -> Vec<u8> {
    let mut out = String::from("subject_id,measure,scan1,scan2\n");
    for (name, rows) in [("area", area), ("intensity", intensity)] {
        for r in rows {
            out.push_str(&format!(
                "{},{name},{},{}\n",
                r.subject_id,
                format_sig6(r.scan1),
                format_sig6(r.scan2)
            ));
        }
    }
    out.into_bytes()
}

pub fn measurements_csv(measurements: &[TissueMeasurement]) -> Vec<u8> {
    let mut out = String::from("subject_id,scan_date,class,pixel_count,area_mm2,mean_hu\n");
    for m in measurements {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.subject_id,
            m.scan_date,
            m.class,
            m.pixel_count,
            format_sig6(m.area_mm2),
            m.mean_hu.map(format_sig6).unwrap_or_default()
        ));
    }
    out.into_bytes()
}

pub fn dice_csv(rows: &[ClassDice]) -> Vec<u8> {
    let mut out = String::from("class,dice,pixels_a,pixels_b\n");
    for d in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            d.class,
            format_sig6(d.dice),
            d.pixels_a,
            d.pixels_b
        ));
    }
    out.into_bytes()
}
