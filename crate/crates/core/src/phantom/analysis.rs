//! Measurements on heightmaps: pit masks, connected components and a
//! hand-crafted shape classifier used to check that the generated classes
//! are geometrically distinct.

use std::f64::consts::PI;

use super::{Geometry, Heightmap, KudoClass};

/// One 4-connected region of a binary mask. Coordinates are in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub area: usize,
    pub centroid: (f64, f64),
    /// Second central moments `(xx, xy, yy)`.
    pub moments: (f64, f64, f64),
    /// Largest distance from the centroid to a member pixel centre.
    pub max_radius: f64,
    pub touches_border: bool,
}

impl Component {
    /// Square root of the ratio of the principal second moments; 2.0 for a
    /// filled 2:1 ellipse.
    pub fn axis_ratio(&self) -> f64 {
        let (xx, xy, yy) = self.moments;
        let tr = xx + yy;
        let det = xx * yy - xy * xy;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let (l1, l2) = (tr / 2.0 + disc, (tr / 2.0 - disc).max(1e-12));
        (l1 / l2).sqrt()
    }

    /// Area over the area of the circumscribing disc; near 1 for discs,
    /// roughly the star's area fraction for star shapes.
    pub fn fill_ratio(&self) -> f64 {
        let r = self.max_radius + 0.5;
        self.area as f64 / (PI * r * r)
    }
}

/// Pixels whose height is below `threshold_um`.
pub fn pit_mask(heightmap: &Heightmap, threshold_um: f64) -> Vec<bool> {
    heightmap.grid.iter().map(|&h| h < threshold_um).collect()
}

pub fn components(mask: &[bool], rows: usize, cols: usize) -> Vec<Component> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut pixels = Vec::new();
        label[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        out.push(describe(&pixels, rows, cols));
    }
    out
}

fn describe(pixels: &[usize], rows: usize, cols: usize) -> Component {
    let n = pixels.len() as f64;
    let coords = || pixels.iter().map(|&i| ((i % cols) as f64, (i / cols) as f64));
    let (sx, sy) = coords().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (mut xx, mut xy, mut yy, mut rmax) = (0.0, 0.0, 0.0, 0.0f64);
    for (x, y) in coords() {
        let (dx, dy) = (x - mx, y - my);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
        rmax = rmax.max(dx.hypot(dy));
    }
    let touches_border = pixels.iter().any(|&i| {
        let (r, c) = (i / cols, i % cols);
        r == 0 || c == 0 || r + 1 == rows || c + 1 == cols
    });
    Component {
        area: pixels.len(),
        centroid: (mx, my),
        moments: (xx / n, xy / n, yy / n),
        max_radius: rmax,
        touches_border,
    }
}

/// Median distance from each centroid to its nearest neighbour inside each
/// of the four axis-aligned 90-degree cones (right, down, left, up); this is
/// the lattice spacing of a jittered square lattice. The median discards
/// diagonal matches of points on the edge of the sample. Returns pixels.
pub fn lattice_spacing(centroids: &[(f64, f64)]) -> Option<f64> {
    let mut found = Vec::new();
    for (i, &(x, y)) in centroids.iter().enumerate() {
        for cone in 0..4 {
            let axis = cone as f64 * PI / 2.0;
            let (ax, ay) = (axis.cos(), axis.sin());
            let nearest = centroids
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .filter_map(|(_, &(u, v))| {
                    let (dx, dy) = (u - x, v - y);
                    let d = dx.hypot(dy);
                    // within 45 degrees of the cone axis
                    (d > 0.0 && (dx * ax + dy * ay) >= d * std::f64::consts::FRAC_1_SQRT_2).then_some(d)
                })
                .fold(f64::INFINITY, f64::min);
            if nearest.is_finite() {
                found.push(nearest);
            }
        }
    }
    median(found)
}

/// Component statistics of the pits of a heightmap, thresholded at half of
/// its deepest point.
#[derive(Clone, Debug)]
pub struct PitStats {
    /// Interior (non-border) components of at least 4 pixels.
    pub pits: Vec<Component>,
    /// Fraction of masked pixels inside components larger than 1.5 spacing².
    pub connected_fraction: f64,
}

pub fn pit_stats(heightmap: &Heightmap, geometry: &Geometry) -> PitStats {
    let threshold = heightmap.min() / 2.0;
    let mask = pit_mask(heightmap, threshold.min(-1e-9));
    let comps = components(&mask, heightmap.height, heightmap.width);
    let cell = (geometry.spacing_um / heightmap.pixel_pitch_um).powi(2);
    let masked: usize = comps.iter().map(|c| c.area).sum();
    let big: usize = comps
        .iter()
        .filter(|c| c.area as f64 > 1.5 * cell)
        .map(|c| c.area)
        .sum();
    PitStats {
        pits: comps
            .into_iter()
            .filter(|c| !c.touches_border && c.area >= 4)
            .collect(),
        connected_fraction: if masked == 0 { 0.0 } else { big as f64 / masked as f64 },
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[v.len() / 2])
}

/// Rule-based class prediction from pit connectivity, elongation and fill.
pub fn classify_by_shape(heightmap: &Heightmap, geometry: &Geometry) -> KudoClass {
    let stats = pit_stats(heightmap, geometry);
    if stats.connected_fraction > 0.5 {
        return KudoClass::G;
    }
    let ratio = median(stats.pits.iter().map(Component::axis_ratio).collect()).unwrap_or(1.0);
    if ratio > 1.45 {
        return KudoClass::O;
    }
    let fill = median(stats.pits.iter().map(Component::fill_ratio).collect()).unwrap_or(1.0);
    if fill < 0.7 {
        KudoClass::A
    } else {
        KudoClass::R
    }
}
