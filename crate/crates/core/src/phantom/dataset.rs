use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    apply_contact, render_tactile_image, synthesize_heightmap, Geometry, KudoClass, Material,
    Orientation, PhantomSpec, RenderConfig,
};
use crate::data::{Manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::seed;

/// Composition and framing of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateConfig {
    /// Samples per class in A, G, O, R order.
    pub counts: [usize; 4],
    /// Fraction of samples captured with partial (45 degree) contact.
    pub partial_fraction: f64,
    /// Assigned round-robin within each class.
    pub materials: Vec<Material>,
    /// Side of the saved square image.
    pub image_size: usize,
    /// Side of the rendered canvas, centre-cropped to `image_size`.
    pub canvas_size: usize,
    pub pixel_pitch_um: f64,
    pub geometry: Geometry,
    pub render: RenderConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            counts: [57, 57, 55, 60],
            partial_fraction: 80.0 / 229.0,
            materials: Material::ALL.to_vec(),
            image_size: 224,
            canvas_size: 256,
            pixel_pitch_um: 25.0,
            geometry: Geometry::default(),
            render: RenderConfig::default(),
        }
    }
}

impl GenerateConfig {
    /// Default composition cropped to `size x size`: the pitch stays at the
    /// default and the canvas is 8/7 of the image, but never narrower than
    /// five feature spacings.
    pub fn for_size(size: usize) -> Self {
        let base = Self::default();
        let min_canvas = (5.0 * base.geometry.spacing_um / base.pixel_pitch_um).ceil() as usize;
        let canvas = ((size as f64 * 8.0 / 7.0).round() as usize).max(min_canvas);
        Self {
            image_size: size,
            canvas_size: canvas,
            ..base
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.contains(&0) {
            return Err(Error::Config(format!("every class needs at least one sample, got {:?}", self.counts)));
        }
        if self.materials.is_empty() {
            return Err(Error::Config("material list is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.partial_fraction) {
            return Err(Error::Config("partial_fraction must lie in [0, 1]".into()));
        }
        if self.image_size == 0 || self.canvas_size < self.image_size {
            return Err(Error::Config(format!(
                "canvas {} must be at least the image size {}",
                self.canvas_size, self.image_size
            )));
        }
        self.geometry.validate()
    }

    /// Per-sample phantom specs in manifest order (classes A, G, O, R).
    pub fn specs(&self, master_seed: u64) -> Vec<PhantomSpec> {
        let total = self.total();
        let partial_count = (total as f64 * self.partial_fraction).round() as usize;
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut seed::rng(master_seed, &[0x0a1e]));
        let mut partial = vec![false; total];
        for &i in &order[..partial_count] {
            partial[i] = true;
        }
        let mut specs = Vec::with_capacity(total);
        for (class, &count) in KudoClass::ALL.iter().zip(&self.counts) {
            for j in 0..count {
                let index = specs.len();
                specs.push(PhantomSpec {
                    kudo_class: *class,
                    variation_seed: seed::derive_seed(master_seed, &[index as u64]),
                    material: self.materials[j % self.materials.len()],
                    orientation: if partial[index] {
                        Orientation::Partial
                    } else {
                        Orientation::Full
                    },
                    geometry: self.geometry.clone(),
                });
            }
        }
        specs
    }

    pub fn render_spec(&self, spec: &PhantomSpec) -> Result<image::RgbImage> {
        let hm = synthesize_heightmap(spec, (self.canvas_size, self.canvas_size), self.pixel_pitch_um)?;
        let hm = apply_contact(&hm, spec).center_crop(self.image_size, self.image_size)?;
        Ok(render_tactile_image(&hm, &self.render))
    }
}

/// Renders every sample to `out_dir/images/` and writes `out_dir/manifest.csv`.
pub fn generate_dataset(config: &GenerateConfig, out_dir: &Path, master_seed: u64) -> Result<Manifest> {
    config.validate()?;
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(config.total());
    let mut per_class = [0usize; 4];
    for spec in config.specs(master_seed) {
        let k = spec.kudo_class.index();
        let rel = format!("images/{}_{:04}.png", spec.kudo_class.letter(), per_class[k]);
        per_class[k] += 1;
        let img = config.render_spec(&spec)?;
        let path = out_dir.join(&rel);
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::io(&path, io),
                other => Error::Image(other),
            })?;
        records.push(ManifestRecord {
            path: rel,
            class: spec.kudo_class,
            material: spec.material,
            orientation: spec.orientation,
            seed: spec.variation_seed,
        });
    }
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        records,
    };
    manifest.write()?;
    Ok(manifest)
}
