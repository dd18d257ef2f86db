use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::augment::resize_bilinear;
use super::manifest::{Manifest, ManifestRecord};

/// A 3×H×W image with raw channel values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
    pub record: ManifestRecord,
}

/// All samples of a manifest, decoded once and held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

/// 8-bit RGB to a channel-major tensor scaled by 1/255.
pub fn image_to_tensor(img: &image::RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn([3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
}

impl Dataset {
    /// Decodes every image; images whose size differs from `size` are
    /// resized bilinearly.
    pub fn load(manifest: &Manifest, size: Option<usize>) -> Result<Self> {
        if manifest.is_empty() {
            return Err(Error::Empty("no samples".into()));
        }
        let mut samples = Vec::with_capacity(manifest.len());
        for (i, record) in manifest.records.iter().enumerate() {
            let path = manifest.image_path(i);
            let img = image::open(&path)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(&path, io),
                    other => Error::Image(other),
                })?
                .to_rgb8();
            let mut tensor = image_to_tensor(&img);
            if let Some(s) = size {
                if img.width() as usize != s || img.height() as usize != s {
                    tensor = resize_bilinear(&tensor, (s, s))?;
                }
            }
            samples.push(Sample {
                image: tensor,
                label: record.class.index(),
                record: record.clone(),
            });
        }
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// (height, width) of the first image.
    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.shape()[1], s.image.shape()[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channels_are_scaled_by_one_over_255() {
        let mut img = image::RgbImage::new(2, 1);
        img.put_pixel(0, 0, image::Rgb([255, 0, 51]));
        img.put_pixel(1, 0, image::Rgb([0, 102, 255]));
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.4, 0.2, 1.0]);
    }
}
