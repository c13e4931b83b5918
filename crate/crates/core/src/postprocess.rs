//! Connected components, small-component removal, nearest-label fill and
//! precedence fusion of label maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{class_mask, BinaryMask, LabelMap, TissueClass};

/// Default minimum component size; smaller components are removed.
pub const DEFAULT_MIN_COMPONENT_SIZE: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        // neighbours already visited in a row-major scan
        match self {
            Connectivity::Four => &[(-1, 0), (0, -1)],
            Connectivity::Eight => &[(-1, 0), (-1, -1), (0, -1), (1, -1)],
        }
    }

    fn all_offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (0, -1),
                (1, -1),
                (-1, 0),
                (1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
            ],
        }
    }
}

/// Connected-component labelling of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    /// 0 for background, otherwise `1..=sizes.len()` numbered in order of
    /// first appearance in a row-major scan.
    pub ids: Vec<u32>,
    /// `sizes[i]` is the pixel count of component `i + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of(&self, id: u32) -> usize {
        self.sizes[id as usize - 1]
    }

    /// Id of the largest component; ties go to the lower id. `None` if empty.
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(u32, usize)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i as u32 + 1, s));
            }
        }
        best.map(|(id, _)| id)
    }

    pub fn mask_of(&self, id: u32) -> BinaryMask {
        let bits = self.ids.iter().map(|&i| i == id).collect();
        BinaryMask::from_bits(self.width, self.height, bits).expect("component grid dimensions")
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labelling.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    let mut provisional = vec![0u32; w * h];
    // parent[0] is a dummy so provisional labels index directly
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut label = 0u32;
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize {
                    continue;
                }
                let n = provisional[ny as usize * w + nx as usize];
                if n == 0 {
                    continue;
                }
                if label == 0 {
                    label = n;
                } else {
                    union(&mut parent, label, n);
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[i] = label;
        }
    }

    let mut dense = vec![0u32; parent.len()];
    let mut sizes = Vec::new();
    let mut ids = provisional;
    for id in ids.iter_mut().filter(|id| **id != 0) {
        let root = find(&mut parent, *id) as usize;
        if dense[root] == 0 {
            sizes.push(0);
            dense[root] = sizes.len() as u32;
        }
        *id = dense[root];
        sizes[*id as usize - 1] += 1;
    }

    Components {
        width: w,
        height: h,
        ids,
        sizes,
    }
}

/// Fills every background region that does not reach the image border.
/// Background is traversed with 4-connectivity, the dual of 8-connected
/// foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let bits = mask.bits();
    let mut outside = vec![false; w * h];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x + 1 == w || y + 1 == h) && !bits[y * w + x] {
                outside[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        for &(dx, dy) in Connectivity::Four.all_offsets() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !bits[j] && !outside[j] {
                outside[j] = true;
                stack.push((nx as usize, ny as usize));
            }
        }
    }
    let filled = outside.into_iter().map(|o| !o).collect();
    BinaryMask::from_bits(w, h, filled).expect("same dimensions")
}

/// Clears every 8-connected component smaller than `min_size` pixels of
/// every non-background class. Returns the cleaned map and the cleared
/// pixels.
pub fn remove_small_components(map: &LabelMap, min_size: usize) -> (LabelMap, BinaryMask) {
    let (w, h) = map.dims();
    let mut out = map.clone();
    let mut removed = BinaryMask::new(w, h);
    for class in TissueClass::ALL.into_iter().skip(1) {
        let mask = class_mask(map, class);
        if mask.is_empty() {
            continue;
        }
        let comps = connected_components(&mask, Connectivity::Eight);
        if comps.sizes.iter().all(|&s| s >= min_size) {
            continue;
        }
        for (i, &id) in comps.ids.iter().enumerate() {
            if id != 0 && comps.size_of(id) < min_size {
                out.labels_mut()[i] = TissueClass::Background;
                removed.bits_mut()[i] = true;
            }
        }
    }
    (out, removed)
}

/// Exact squared Euclidean distance of a 1-D sampled function's lower
/// envelope of parabolas. Infinite samples are not sites.
fn lower_envelope_1d(f: &[f64], out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    v.clear();
    z.clear();
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        let qf = q as f64;
        loop {
            let Some(&p) = v.last() else {
                v.push(q);
                z.push(f64::NEG_INFINITY);
                break;
            };
            let pf = p as f64;
            let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= *z.last().unwrap() {
                v.pop();
                z.pop();
                continue;
            }
            v.push(q);
            z.push(s);
            break;
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let pf = p as f64;
        while k + 1 < v.len() && z[k + 1] < pf {
            k += 1;
        }
        let d = pf - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel to the nearest site;
/// infinity where there is no site at all.
fn squared_distance_transform(sites: &[bool], w: usize, h: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let mut v = Vec::new();
    let mut z = Vec::new();
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        lower_envelope_1d(&col, &mut col_out, &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        let row = &mut grid[y * w..(y + 1) * w];
        lower_envelope_1d(row, &mut row_out, &mut v, &mut z);
        row.copy_from_slice(&row_out);
    }
    grid
}

/// Assigns every hole pixel the class of its nearest donor, a labelled
/// (non-background) pixel outside `holes`, by exact Euclidean distance.
/// Ties go to the smallest class code. Non-hole pixels are unchanged.
pub fn nearest_label_fill(map: &LabelMap, holes: &BinaryMask) -> Result<LabelMap> {
    if map.dims() != holes.dims() {
        return Err(Error::DimensionMismatch {
            expected: map.dims(),
            found: holes.dims(),
        });
    }
    let (w, h) = map.dims();
    let labels = map.labels();
    let hole_bits = holes.bits();
    let mut out = map.clone();
    if holes.is_empty() {
        return Ok(out);
    }

    let mut best: Vec<(f64, TissueClass)> = vec![(f64::INFINITY, TissueClass::Background); w * h];
    let mut any_donor = false;
    // ascending class order makes strict improvement implement the tie-break
    for class in TissueClass::ALL.into_iter().skip(1) {
        let sites: Vec<bool> = labels
            .iter()
            .zip(hole_bits)
            .map(|(&c, &hole)| c == class && !hole)
            .collect();
        if !sites.contains(&true) {
            continue;
        }
        any_donor = true;
        let dist = squared_distance_transform(&sites, w, h);
        for (i, &d) in dist.iter().enumerate() {
            if hole_bits[i] && d < best[i].0 {
                best[i] = (d, class);
            }
        }
    }
    if !any_donor {
        return Err(Error::NoDonors);
    }
    for (i, slot) in out.labels_mut().iter_mut().enumerate() {
        if hole_bits[i] {
            *slot = best[i].1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionPolicy {
    /// Highest priority first; background last.
    precedence: Vec<TissueClass>,
    min_component_size: usize,
}

impl Default for FusionPolicy {
    /// Organs > muscle > walls > fat > body mask > background; minimum
    /// component size 25 pixels.
    fn default() -> Self {
        Self {
            precedence: TissueClass::ALL[1..]
                .iter()
                .copied()
                .chain(std::iter::once(TissueClass::Background))
                .collect(),
            min_component_size: DEFAULT_MIN_COMPONENT_SIZE,
        }
    }
}

impl FusionPolicy {
    pub fn new(precedence: Vec<TissueClass>, min_component_size: usize) -> Result<Self> {
        if precedence.last() != Some(&TissueClass::Background) {
            return Err(Error::InvalidConfig(
                "fusion precedence must end with background".into(),
            ));
        }
        for (i, c) in precedence.iter().enumerate() {
            if precedence[..i].contains(c) {
                return Err(Error::InvalidConfig(format!(
                    "class {c} appears more than once in the fusion precedence"
                )));
            }
        }
        if min_component_size == 0 {
            return Err(Error::InvalidConfig(
                "min_component_size must be at least 1".into(),
            ));
        }
        Ok(Self {
            precedence,
            min_component_size,
        })
    }

    pub fn with_min_component_size(mut self, min_component_size: usize) -> Result<Self> {
        if min_component_size == 0 {
            return Err(Error::InvalidConfig(
                "min_component_size must be at least 1".into(),
            ));
        }
        self.min_component_size = min_component_size;
        Ok(self)
    }

    pub fn precedence(&self) -> &[TissueClass] {
        &self.precedence
    }

    pub fn min_component_size(&self) -> usize {
        self.min_component_size
    }

    fn ranks(&self) -> [Option<usize>; 14] {
        let mut ranks = [None; 14];
        for (rank, c) in self.precedence.iter().enumerate() {
            ranks[c.code() as usize] = Some(rank);
        }
        ranks
    }
}

/// Per-pixel highest-precedence non-background label among the five sources.
pub fn fuse_masks(
    organ: &LabelMap,
    muscle: &LabelMap,
    wall: &LabelMap,
    fat: &LabelMap,
    body: &LabelMap,
    policy: &FusionPolicy,
) -> Result<LabelMap> {
    let sources = [organ, muscle, wall, fat, body];
    let dims = organ.dims();
    for s in &sources[1..] {
        if s.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                found: s.dims(),
            });
        }
    }
    let ranks = policy.ranks();
    let mut fused = LabelMap::empty(dims.0, dims.1);
    for (i, slot) in fused.labels_mut().iter_mut().enumerate() {
        let mut winner: Option<(usize, TissueClass)> = None;
        for src in &sources {
            let c = src.labels()[i];
            if c.is_background() {
                continue;
            }
            let rank = ranks[c.code() as usize].ok_or(Error::UnrankedClass(c))?;
            if winner.is_none_or(|(r, _)| rank < r) {
                winner = Some((rank, c));
            }
        }
        if let Some((_, c)) = winner {
            *slot = c;
        }
    }
    Ok(fused)
}
