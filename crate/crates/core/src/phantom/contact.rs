use std::f64::consts::PI;

use rand::Rng;

use super::{Heightmap, Orientation, PhantomSpec};
use crate::seed;

/// Width of the transition band of a partial contact, as a fraction of the
/// image width.
pub const PARTIAL_BAND: f64 = 0.2;

/// Per-pixel contact weight in `[0, 1]`.
///
/// Full contact is 1 everywhere. Partial contact is 1 on one side of a
/// seed-chosen line, decays to 0 across a band of [`PARTIAL_BAND`] of the
/// image width, and is 0 beyond it.
pub fn contact_mask(spec: &PhantomSpec, rows: usize, cols: usize) -> Vec<f64> {
    if spec.orientation == Orientation::Full {
        return vec![1.0; rows * cols];
    }
    let mut rng = seed::rng(spec.variation_seed, &[0xc0a7ac7]);
    let angle = rng.gen_range(0.0..2.0 * PI);
    let offset = rng.gen_range(-0.1..0.1);
    let (s, c) = angle.sin_cos();
    let width = cols as f64;
    let (cx, cy) = (cols as f64 / 2.0, rows as f64 / 2.0);
    (0..rows * cols)
        .map(|i| {
            let (y, x) = ((i / cols) as f64 + 0.5 - cy, (i % cols) as f64 + 0.5 - cx);
            let u = (x * c + y * s) / width - offset;
            if u <= 0.0 {
                1.0
            } else if u >= PARTIAL_BAND {
                0.0
            } else {
                0.5 * (1.0 + (PI * u / PARTIAL_BAND).cos())
            }
        })
        .collect()
}

/// Scales the relief by the material's imprint strength and, for partial
/// contact, by [`contact_mask`].
pub fn apply_contact(heightmap: &Heightmap, spec: &PhantomSpec) -> Heightmap {
    let scale = spec.material.profile().imprint_scale;
    let mask = contact_mask(spec, heightmap.height, heightmap.width);
    Heightmap {
        grid: heightmap
            .grid
            .iter()
            .zip(&mask)
            .map(|(&h, &m)| h * scale * m)
            .collect(),
        ..heightmap.clone()
    }
}
