//! Shared inputs for the kernel benchmarks.

use bodycomp_core::model::{BinaryMask, LabelMap, TissueClass};
use bodycomp_core::phantom::{generate_phantom, Phantom, PhantomSpec};

/// Noisy abdomen phantom of the given size.
pub fn abdomen(size: usize) -> Phantom {
    generate_phantom(&PhantomSpec::abdomen(size, size).with_noise(20.0, 11))
        .expect("abdomen phantom")
}

/// HU values of every pixel inside the phantom body.
pub fn body_intensities(p: &Phantom) -> Vec<f64> {
    p.slice
        .hu()
        .iter()
        .zip(p.truth.labels())
        .filter(|(_, c)| !c.is_background())
        .map(|(&v, _)| f64::from(v))
        .collect()
}

/// The phantom truth with every `stride`-th labelled pixel punched out.
pub fn fill_case(p: &Phantom, stride: usize) -> (LabelMap, BinaryMask) {
    let (w, h) = p.truth.dims();
    let holes = BinaryMask::from_fn(w, h, |x, y| {
        (x + y * w) % stride == 0 && !p.truth.get(x, y).is_background()
    });
    let mut map = p.truth.clone();
    for y in 0..h {
        for x in 0..w {
            if holes.get(x, y) {
                map.set(x, y, TissueClass::Background);
            }
        }
    }
    (map, holes)
}
