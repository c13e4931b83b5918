//! Independent reference implementations used as test oracles. Shared with
//! the acceptance target in the cli crate.
#![allow(dead_code)]

use bodycomp_core::model::{BinaryMask, LabelMap, TissueClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Optimal two-cluster 1-D k-means by trying every split of the sorted data.
pub fn kmeans2_exhaustive(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut sum = vec![0.0; n + 1];
    let mut sq = vec![0.0; n + 1];
    for (i, &x) in v.iter().enumerate() {
        sum[i + 1] = sum[i] + x;
        sq[i + 1] = sq[i] + x * x;
    }
    let sse = |a: usize, b: usize| {
        let k = (b - a) as f64;
        let s = sum[b] - sum[a];
        (sq[b] - sq[a]) - s * s / k
    };
    let split = (1..n)
        .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))
        .expect("at least two points");
    (
        sum[split] / split as f64,
        (sum[n] - sum[split]) / (n - split) as f64,
    )
}

pub fn bimodal_sample(n: usize, modes: (f64, f64), sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Normal::new(modes.0, sigma).unwrap();
    let b = Normal::new(modes.1, sigma).unwrap();
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                a.sample(&mut rng)
            } else {
                b.sample(&mut rng)
            }
        })
        .collect()
}

/// Nearest donor for each hole by scanning every donor; ties go to the
/// smallest class code.
pub fn brute_force_fill(map: &LabelMap, holes: &BinaryMask) -> LabelMap {
    let (w, h) = map.dims();
    let donors: Vec<(usize, usize, TissueClass)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| !holes.get(x, y) && !map.get(x, y).is_background())
        .map(|(x, y)| (x, y, map.get(x, y)))
        .collect();
    let mut out = map.clone();
    for y in 0..h {
        for x in 0..w {
            if !holes.get(x, y) {
                continue;
            }
            let best = donors
                .iter()
                .map(|&(dx, dy, c)| {
                    let d = (dx as i64 - x as i64).pow(2) + (dy as i64 - y as i64).pow(2);
                    (d, c.code(), c)
                })
                .min_by_key(|&(d, code, _)| (d, code))
                .expect("donors present");
            out.set(x, y, best.2);
        }
    }
    out
}

/// Random map with blobs of random classes and a random hole mask.
pub fn random_fill_case(w: usize, h: usize, rng: &mut ChaCha8Rng) -> (LabelMap, BinaryMask) {
    let mut map = LabelMap::empty(w, h);
    for _ in 0..rng.random_range(1..6) {
        let class = TissueClass::from_code(rng.random_range(1..14)).unwrap();
        let (cx, cy) = (rng.random_range(0..w), rng.random_range(0..h));
        let r = rng.random_range(1..6) as i64;
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as i64 - cx as i64, y as i64 - cy as i64);
                if dx * dx + dy * dy <= r * r {
                    map.set(x, y, class);
                }
            }
        }
    }
    // scattered single labels produce plenty of ties
    for _ in 0..rng.random_range(0..20) {
        let class = TissueClass::from_code(rng.random_range(1..14)).unwrap();
        map.set(rng.random_range(0..w), rng.random_range(0..h), class);
    }
    let density = rng.random_range(0.05..0.6);
    let mut holes = BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density));
    if (0..h).all(|y| (0..w).all(|x| holes.get(x, y) || map.get(x, y).is_background())) {
        // keep at least one donor
        let (x, y) = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .find(|&(x, y)| !map.get(x, y).is_background())
            .unwrap_or((0, 0));
        map.set(x, y, TissueClass::Liver);
        holes.set(x, y, false);
    }
    (map, holes)
}

/// Best Dice against `truth` achievable by any band `lo <= HU <= hi` inside
/// `body`, over all pairs of observed HU values.
pub fn best_band_dice(hu: &[i16], body: &BinaryMask, truth: &BinaryMask) -> f64 {
    const OFFSET: i32 = 1024;
    let mut inside = vec![0u64; 4096];
    let mut total = vec![0u64; 4096];
    for ((&v, &b), &t) in hu.iter().zip(body.bits()).zip(truth.bits()) {
        if b {
            let i = (v as i32 + OFFSET) as usize;
            total[i] += 1;
            if t {
                inside[i] += 1;
            }
        }
    }
    let truth_n = truth.count() as f64;
    let mut best: f64 = 0.0;
    for lo in 0..4096 {
        if total[lo] == 0 {
            continue;
        }
        let (mut tp, mut sel) = (0u64, 0u64);
        for hi in lo..4096 {
            tp += inside[hi];
            sel += total[hi];
            if total[hi] > 0 {
                best = best.max(2.0 * tp as f64 / (sel as f64 + truth_n));
            }
        }
    }
    best
}

/// Random `(n_subjects × 2)` cohort with positive values.
pub fn random_cohort(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = rng.random_range(3..40);
    let centre = rng.random_range(100.0..1000.0);
    (0..n)
        .map(|_| {
            let a = centre + rng.random_range(-80.0..80.0);
            [
                a + rng.random_range(-20.0..20.0),
                a + rng.random_range(-20.0..20.0),
            ]
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
