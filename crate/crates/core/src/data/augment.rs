use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::sample::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the original image.
    pub crop_area_range: [f64; 2],
    pub rotation_range_deg: [f64; 2],
    /// Independent probability of each of the four transforms.
    pub probability: f64,
    /// (height, width) of the output.
    pub target_size: (usize, usize),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_area_range: [0.85, 1.0],
            rotation_range_deg: [-45.0, 45.0],
            probability: 0.5,
            target_size: (224, 224),
        }
    }
}

impl AugmentConfig {
    pub fn with_target(size: usize) -> Self {
        Self {
            target_size: (size, size),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.crop_area_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("crop area range [{lo}, {hi}] must lie in (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("probability {} outside [0, 1]", self.probability)));
        }
        if self.rotation_range_deg[0] > self.rotation_range_deg[1] {
            return Err(Error::Config("rotation range is reversed".into()));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::Config("target size must be at least 1x1".into()));
        }
        Ok(())
    }
}

/// One concrete draw of the random transforms, applied in field order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Augmentation {
    /// (area fraction, horizontal offset in [0,1], vertical offset in [0,1])
    pub crop: Option<(f64, f64, f64)>,
    pub hflip: bool,
    pub vflip: bool,
    pub rotation_deg: Option<f64>,
}

impl Augmentation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn draw<R: Rng + ?Sized>(config: &AugmentConfig, rng: &mut R) -> Self {
        let p = config.probability;
        let crop = rng.gen_bool(p).then(|| {
            let [lo, hi] = config.crop_area_range;
            (rng.gen_range(lo..=hi), rng.gen::<f64>(), rng.gen::<f64>())
        });
        let hflip = rng.gen_bool(p);
        let vflip = rng.gen_bool(p);
        let rotation_deg = rng.gen_bool(p).then(|| {
            let [lo, hi] = config.rotation_range_deg;
            rng.gen_range(lo..=hi)
        });
        Self { crop, hflip, vflip, rotation_deg }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::none()
    }

    /// Applies the transforms to a C×H×W image and resizes to `target` if
    /// the result differs from it.
    pub fn apply(&self, image: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
        let mut img = image.clone();
        if let Some((area, ox, oy)) = self.crop {
            img = crop(&img, area, ox, oy)?;
        }
        if self.hflip {
            img = flip(&img, true);
        }
        if self.vflip {
            img = flip(&img, false);
        }
        if let Some(deg) = self.rotation_deg {
            img = rotate(&img, deg);
        }
        if (img.shape()[1], img.shape()[2]) != target {
            img = resize_bilinear(&img, target)?;
        }
        Ok(img)
    }
}

pub fn augment_sample<R: Rng + ?Sized>(sample: &Sample, config: &AugmentConfig, rng: &mut R) -> Result<Sample> {
    let aug = Augmentation::draw(config, rng);
    Ok(Sample {
        image: aug.apply(&sample.image, config.target_size)?,
        label: sample.label,
        record: sample.record.clone(),
    })
}

fn dims(img: &Tensor<f32>) -> (usize, usize, usize) {
    let s = img.shape();
    (s[0], s[1], s[2])
}

fn crop(img: &Tensor<f32>, area: f64, ox: f64, oy: f64) -> Result<Tensor<f32>> {
    let (c, h, w) = dims(img);
    let side = area.sqrt();
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let y0 = ((h - ch) as f64 * oy).round() as usize;
    let x0 = ((w - cw) as f64 * ox).round() as usize;
    let src = img.data();
    Ok(Tensor::from_fn([c, ch, cw], |i| {
        let (k, r) = (i / (ch * cw), i % (ch * cw));
        let (y, x) = (r / cw, r % cw);
        src[(k * h + y0 + y) * w + x0 + x]
    }))
}

fn flip(img: &Tensor<f32>, horizontal: bool) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let src = img.data();
    Tensor::from_fn([c, h, w], |i| {
        let (k, r) = (i / (h * w), i % (h * w));
        let (y, x) = (r / w, r % w);
        let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
        src[(k * h + sy) * w + sx]
    })
}

/// Bilinear read with coordinates clamped to the border.
fn sample_clamped(plane: &[f32], h: usize, w: usize, y: f64, x: f64) -> f32 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = ((y - y0 as f64) as f32, (x - x0 as f64) as f32);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Counter-clockwise rotation about the image centre by inverse mapping.
fn rotate(img: &Tensor<f32>, deg: f64) -> Tensor<f32> {
    let (c, h, w) = dims(img);
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let src = img.data();
    Tensor::from_fn([c, h, w], |i| {
        let (k, r) = (i / (h * w), i % (h * w));
        let (dy, dx) = ((r / w) as f64 - cy, (r % w) as f64 - cx);
        // image rows grow downwards, so a visual CCW turn negates the angle
        let sx = cos * dx - sin * dy + cx;
        let sy = sin * dx + cos * dy + cy;
        sample_clamped(&src[k * h * w..(k + 1) * h * w], h, w, sy, sx)
    })
}

fn axis_weights(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Separable bilinear resize of a C×H×W image to (height, width), with
/// half-pixel centre alignment.
pub fn resize_bilinear(img: &Tensor<f32>, target: (usize, usize)) -> Result<Tensor<f32>> {
    if img.rank() != 3 {
        return Err(Error::shape(format!("expected a C×H×W image, got {:?}", img.shape())));
    }
    let (c, h, w) = dims(img);
    let (th, tw) = target;
    if th == 0 || tw == 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("cannot resize {:?} to {target:?}", img.shape())));
    }
    let ys = axis_weights(h, th);
    let xs = axis_weights(w, tw);
    let src = img.data();
    Ok(Tensor::from_fn([c, th, tw], |i| {
        let (k, r) = (i / (th * tw), i % (th * tw));
        let (y0, y1, fy) = ys[r / tw];
        let (x0, x1, fx) = xs[r % tw];
        let p = &src[k * h * w..];
        let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
        let bottom = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}
