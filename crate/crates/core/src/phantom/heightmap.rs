use std::f64::consts::PI;

use rand::Rng;

use super::{KudoClass, PhantomSpec};
use crate::error::{Error, Result};
use crate::seed;

/// Pixel pitch above which pit walls would alias.
pub const MAX_PIXEL_PITCH_UM: f64 = 100.0;
/// Minimum number of feature spacings the field of view must cover.
pub const MIN_SPACINGS: f64 = 5.0;

const GYRUS_WAVES: usize = 24;

/// Surface relief in micrometres, row-major; 0 is the undeformed gel and
/// pits are negative.
#[derive(Clone, Debug, PartialEq)]
pub struct Heightmap {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_um: f64,
    pub grid: Vec<f64>,
}

impl Heightmap {
    pub fn flat(height: usize, width: usize, pixel_pitch_um: f64) -> Self {
        Self {
            width,
            height,
            pixel_pitch_um,
            grid: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.width + col]
    }

    pub fn min(&self) -> f64 {
        self.grid.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Physical centre of pixel `(row, col)` as `(x, y)`.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.pixel_pitch_um,
            (row as f64 + 0.5) * self.pixel_pitch_um,
        )
    }

    /// Keeps the `size x size` window at the centre.
    pub fn center_crop(&self, rows: usize, cols: usize) -> Result<Self> {
        if rows > self.height || cols > self.width {
            return Err(Error::shape(format!(
                "crop {rows}x{cols} exceeds heightmap {}x{}",
                self.height, self.width
            )));
        }
        let r0 = (self.height - rows) / 2;
        let c0 = (self.width - cols) / 2;
        let mut grid = Vec::with_capacity(rows * cols);
        for r in r0..r0 + rows {
            grid.extend_from_slice(&self.grid[r * self.width + c0..r * self.width + c0 + cols]);
        }
        Ok(Self {
            width: cols,
            height: rows,
            pixel_pitch_um: self.pixel_pitch_um,
            grid,
        })
    }
}

/// Depth profile across a pit wall centred on the pit boundary: full depth
/// for `d <= -wall/2`, zero for `d >= wall/2`, cosine ramp in between.
pub(crate) fn wall_profile(signed_distance: f64, depth: f64, wall: f64) -> f64 {
    let half = wall / 2.0;
    if signed_distance <= -half {
        -depth
    } else if signed_distance >= half {
        0.0
    } else {
        -depth * 0.5 * (1.0 + (PI * (signed_distance + half) / wall).cos())
    }
}

#[derive(Clone, Debug)]
pub(crate) enum PitShape {
    Circle { radius: f64 },
    Ellipse { a: f64, b: f64, angle: f64 },
    Star { vertices: Vec<(f64, f64)> },
}

#[derive(Clone, Debug)]
pub(crate) struct Pit {
    pub cx: f64,
    pub cy: f64,
    pub shape: PitShape,
    pub extent: f64,
}

impl Pit {
    /// Signed distance (negative inside) from `(x, y)` to the pit boundary.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (px, py) = (x - self.cx, y - self.cy);
        match &self.shape {
            PitShape::Circle { radius } => px.hypot(py) - radius,
            PitShape::Ellipse { a, b, angle } => {
                let (s, c) = angle.sin_cos();
                let u = px * c + py * s;
                let v = -px * s + py * c;
                let k0 = (u / a).hypot(v / b);
                if k0 < 1e-12 {
                    return -a.min(*b);
                }
                let k1 = (u / (a * a)).hypot(v / (b * b));
                k0 * (k0 - 1.0) / k1
            }
            PitShape::Star { vertices } => polygon_signed_distance(vertices, px, py),
        }
    }
}

fn polygon_signed_distance(vertices: &[(f64, f64)], x: f64, y: f64) -> f64 {
    let mut best = f64::INFINITY;
    let mut inside = false;
    let n = vertices.len();
    for i in 0..n {
        let (ax, ay) = vertices[i];
        let (bx, by) = vertices[(i + 1) % n];
        let (ex, ey) = (bx - ax, by - ay);
        let t = (((x - ax) * ex + (y - ay) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        best = best.min((x - ax - t * ex).hypot(y - ay - t * ey));
        if (ay > y) != (by > y) && x < ax + (y - ay) / (by - ay) * ex {
            inside = !inside;
        }
    }
    if inside {
        -best
    } else {
        best
    }
}

fn signed_jitter(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let magnitude = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    if rng.gen::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

/// Pits on a jittered square lattice covering `width_um x height_um`.
pub(crate) fn lattice_pits(spec: &PhantomSpec, width_um: f64, height_um: f64) -> Vec<Pit> {
    let g = &spec.geometry;
    let mut rng = seed::rng(spec.variation_seed, &[0x5117e, spec.kudo_class.index() as u64]);
    let (major, minor) = g.class_axes(spec.kudo_class);
    let cols = (width_um / g.spacing_um).ceil() as i64 + 1;
    let rows = (height_um / g.spacing_um).ceil() as i64 + 1;
    let mut pits = Vec::new();
    for r in -1..=rows {
        for c in -1..=cols {
            // Neighbour gaps deviate by up to the jitter range: each site
            // moves by half of it along each axis.
            let dx = signed_jitter(&mut rng, g.jitter_um) / 2.0;
            let dy = signed_jitter(&mut rng, g.jitter_um) / 2.0;
            let dmajor = signed_jitter(&mut rng, g.jitter_um);
            let angle = rng.gen_range(0.0..PI);
            let points = if rng.gen::<bool>() { 5 } else { 6 };
            let scale = ((major + dmajor) / major).max(0.1);
            let (a, b) = (major * scale / 2.0, minor * scale / 2.0);
            let shape = match spec.kudo_class {
                KudoClass::R => PitShape::Circle { radius: a },
                KudoClass::O => PitShape::Ellipse { a, b, angle },
                KudoClass::A => {
                    let inner = a * g.star_inner_ratio;
                    let vertices = (0..2 * points)
                        .map(|i| {
                            let radius = if i % 2 == 0 { a } else { inner };
                            let t = angle + PI * i as f64 / points as f64;
                            (radius * t.cos(), radius * t.sin())
                        })
                        .collect();
                    PitShape::Star { vertices }
                }
                KudoClass::G => unreachable!("gyrus patterns are not lattice based"),
            };
            pits.push(Pit {
                cx: (c as f64 + 0.5) * g.spacing_um + dx,
                cy: (r as f64 + 0.5) * g.spacing_um + dy,
                shape,
                extent: a + g.wall_um,
            });
        }
    }
    pits
}

/// Band-limited noise: a sum of plane waves whose wavelengths lie within
/// 10% of the feature spacing.
struct RidgeField {
    waves: Vec<(f64, f64, f64)>,
}

impl RidgeField {
    fn new(spec: &PhantomSpec) -> Self {
        let mut rng = seed::rng(spec.variation_seed, &[0x6e7a5, spec.kudo_class.index() as u64]);
        let base = 2.0 * PI / spec.geometry.spacing_um;
        let waves = (0..GYRUS_WAVES)
            .map(|_| {
                let k = base * rng.gen_range(0.9..1.1);
                let dir = rng.gen_range(0.0..2.0 * PI);
                let phase = rng.gen_range(0.0..2.0 * PI);
                (k * dir.cos(), k * dir.sin(), phase)
            })
            .collect();
        Self { waves }
    }

    fn value_and_gradient(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for &(kx, ky, phase) in &self.waves {
            let (s, c) = (kx * x + ky * y + phase).sin_cos();
            v += c;
            gx -= s * kx;
            gy -= s * ky;
        }
        (v, gx, gy)
    }
}

/// Class-specific relief for `spec` at `resolution = (rows, cols)`.
pub fn synthesize_heightmap(
    spec: &PhantomSpec,
    resolution: (usize, usize),
    pixel_pitch_um: f64,
) -> Result<Heightmap> {
    let g = &spec.geometry;
    g.validate()?;
    let (rows, cols) = resolution;
    if !(pixel_pitch_um > 0.0) || pixel_pitch_um > MAX_PIXEL_PITCH_UM {
        return Err(Error::Sampling(format!(
            "pixel pitch {pixel_pitch_um} um outside (0, {MAX_PIXEL_PITCH_UM}]: pit walls would alias"
        )));
    }
    let min_extent = MIN_SPACINGS * g.spacing_um;
    if (rows.min(cols) as f64) * pixel_pitch_um < min_extent {
        return Err(Error::Sampling(format!(
            "{rows}x{cols} px at {pixel_pitch_um} um/px covers fewer than {MIN_SPACINGS} spacings"
        )));
    }
    let mut hm = Heightmap::flat(rows, cols, pixel_pitch_um);
    if spec.kudo_class == KudoClass::G {
        let field = RidgeField::new(spec);
        let samples: Vec<(f64, f64, f64)> = (0..rows * cols)
            .map(|i| {
                let (x, y) = hm.pixel_center(i / cols, i % cols);
                field.value_and_gradient(x, y)
            })
            .collect();
        let mut values: Vec<f64> = samples.iter().map(|s| s.0).collect();
        values.sort_by(f64::total_cmp);
        let median = values[values.len() / 2];
        for (h, &(v, gx, gy)) in hm.grid.iter_mut().zip(&samples) {
            let slope = gx.hypot(gy).max(1e-9);
            *h = wall_profile((v - median) / slope, g.pit_depth_um, g.wall_um);
        }
        return Ok(hm);
    }

    let width_um = cols as f64 * pixel_pitch_um;
    let height_um = rows as f64 * pixel_pitch_um;
    for pit in lattice_pits(spec, width_um, height_um) {
        let lo = |centre: f64, n: usize| {
            (((centre - pit.extent) / pixel_pitch_um - 0.5).floor().max(0.0) as usize).min(n)
        };
        let hi = |centre: f64, n: usize| {
            ((((centre + pit.extent) / pixel_pitch_um + 0.5).ceil()).max(0.0) as usize).min(n)
        };
        for r in lo(pit.cy, rows)..hi(pit.cy, rows) {
            for c in lo(pit.cx, cols)..hi(pit.cx, cols) {
                let (x, y) = hm.pixel_center(r, c);
                let h = wall_profile(pit.signed_distance(x, y), g.pit_depth_um, g.wall_um);
                let cell = &mut hm.grid[r * cols + c];
                *cell = cell.min(h);
            }
        }
    }
    Ok(hm)
}
