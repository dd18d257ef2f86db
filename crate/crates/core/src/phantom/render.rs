use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::Heightmap;

/// Three colored directional lights shading a Lambertian surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Azimuths of the red, green and blue lights, counter-clockwise from
    /// the +column axis towards the +row axis.
    pub light_azimuths_deg: [f64; 3],
    pub light_elevation_deg: f64,
    pub ambient: [f64; 3],
    pub diffuse_gain: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            light_azimuths_deg: [0.0, 120.0, 240.0],
            light_elevation_deg: 35.0,
            ambient: [0.2, 0.2, 0.2],
            diffuse_gain: 0.6,
        }
    }
}

impl RenderConfig {
    /// Unit vectors pointing towards each light.
    pub fn light_directions(&self) -> [[f64; 3]; 3] {
        let el = self.light_elevation_deg.to_radians();
        self.light_azimuths_deg.map(|az| {
            let az = az.to_radians();
            [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
        })
    }

    /// Channel values of a flat surface.
    pub fn flat_color(&self) -> [u8; 3] {
        let el = self.light_elevation_deg.to_radians();
        self.ambient
            .map(|a| quantize(a + self.diffuse_gain * el.sin().max(0.0)))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Shades each pixel as `ambient + gain * max(0, n . l)` per channel.
///
/// Normals come from central-difference height gradients (one-sided at the
/// border) with the pixel pitch as the lateral unit.
pub fn render_tactile_image(heightmap: &Heightmap, config: &RenderConfig) -> RgbImage {
    let (w, h) = (heightmap.width, heightmap.height);
    let lights = config.light_directions();
    let pitch = heightmap.pixel_pitch_um;
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let dx = if c1 > c0 {
                (heightmap.at(r, c1) - heightmap.at(r, c0)) / ((c1 - c0) as f64 * pitch)
            } else {
                0.0
            };
            let dy = if r1 > r0 {
                (heightmap.at(r1, c) - heightmap.at(r0, c)) / ((r1 - r0) as f64 * pitch)
            } else {
                0.0
            };
            let norm = (dx * dx + dy * dy + 1.0).sqrt();
            let n = [-dx / norm, -dy / norm, 1.0 / norm];
            let px = [0, 1, 2].map(|ch| {
                let l = lights[ch];
                let lambert = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(0.0);
                quantize(config.ambient[ch] + config.diffuse_gain * lambert)
            });
            img.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_surface_is_uniform() {
        let hm = Heightmap::flat(8, 10, 25.0);
        let cfg = RenderConfig::default();
        let img = render_tactile_image(&hm, &cfg);
        let want = cfg.flat_color();
        let el = 35f64.to_radians();
        assert_eq!(want[0], (255.0 * (0.2 + 0.6 * el.sin())).round() as u8);
        assert!(img.pixels().all(|p| p.0 == want));
    }

    #[test]
    fn three_distinct_lights() {
        let dirs = RenderConfig::default().light_directions();
        for d in dirs {
            assert!(((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - 1.0).abs() < 1e-12);
        }
        assert_ne!(dirs[0], dirs[1]);
        assert_ne!(dirs[1], dirs[2]);
    }
}
