//! Synthetic tactile images of pit-pattern polyp phantoms.
//!
//! A phantom is described by a [`PhantomSpec`]; [`synthesize_heightmap`]
//! turns it into a surface relief, [`apply_contact`] models material
//! stiffness and partial contact, and [`render_tactile_image`] shades the
//! relief under three colored directional lights.

pub mod analysis;
mod contact;
mod dataset;
mod heightmap;
mod render;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use contact::{apply_contact, contact_mask};
pub use dataset::{generate_dataset, GenerateConfig};
pub use heightmap::{synthesize_heightmap, Heightmap};
pub use render::{render_tactile_image, RenderConfig};

/// Kudo pit-pattern class. Index order is alphabetical: A, G, O, R.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KudoClass {
    /// Asteroid (type II): star-shaped pits.
    A,
    /// Gyrus (type IV): labyrinthine ridges.
    G,
    /// Oval (type III): elongated pits.
    O,
    /// Round (type I): circular pits.
    R,
}

impl KudoClass {
    pub const ALL: [KudoClass; 4] = [KudoClass::A, KudoClass::G, KudoClass::O, KudoClass::R];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::Label { label: i, classes: 4 })
    }

    pub fn letter(self) -> &'static str {
        ["A", "G", "O", "R"][self.index()]
    }

    /// Neoplastic classes are O (type III) and G (type IV).
    pub fn is_neoplastic(self) -> bool {
        matches!(self, KudoClass::O | KudoClass::G)
    }
}

impl std::str::FromStr for KudoClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(KudoClass::A),
            "G" => Ok(KudoClass::G),
            "O" => Ok(KudoClass::O),
            "R" => Ok(KudoClass::R),
            other => Err(Error::Data(format!("unknown class {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Material {
    DM400,
    DM600,
    A40,
    A70,
}

impl Material {
    /// Softest to hardest.
    pub const ALL: [Material; 4] = [Material::DM400, Material::DM600, Material::A40, Material::A70];

    pub fn name(self) -> &'static str {
        match self {
            Material::DM400 => "DM400",
            Material::DM600 => "DM600",
            Material::A40 => "A40",
            Material::A70 => "A70",
        }
    }

    pub fn profile(self) -> MaterialProfile {
        let (shore, scale) = match self {
            Material::DM400 => ("A 1-2", 0.55),
            Material::DM600 => ("A 30-40", 0.75),
            Material::A40 => ("A 40", 0.85),
            Material::A70 => ("A 70", 1.0),
        };
        MaterialProfile {
            material: self,
            shore_hardness: shore,
            imprint_scale: scale,
        }
    }
}

impl std::str::FromStr for Material {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown material {s:?}")))
    }
}

/// Hardness label and the fraction of the pit depth a phantom of this
/// material imprints into the gel at the fixed contact force.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialProfile {
    pub material: Material,
    pub shore_hardness: &'static str,
    pub imprint_scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// 0 degrees: the whole texture is in contact.
    Full,
    /// 45 degrees: only part of the texture is captured.
    Partial,
}

impl Orientation {
    pub fn name(self) -> &'static str {
        match self {
            Orientation::Full => "full",
            Orientation::Partial => "partial",
        }
    }
}

impl std::str::FromStr for Orientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Orientation::Full),
            "partial" => Ok(Orientation::Partial),
            other => Err(Error::Data(format!("unknown orientation {other:?}"))),
        }
    }
}

/// Physical pattern parameters in micrometres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub spacing_um: f64,
    pub pit_depth_um: f64,
    /// Magnitude range of the signed per-site deviation.
    pub jitter_um: (f64, f64),
    pub wall_um: f64,
    /// Diameter of round pits.
    pub round_diameter_um: f64,
    /// Outer diameter of star pits.
    pub star_diameter_um: f64,
    pub star_inner_ratio: f64,
    pub oval_axes_um: (f64, f64),
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            spacing_um: 600.0,
            pit_depth_um: 500.0,
            jitter_um: (100.0, 150.0),
            wall_um: 100.0,
            round_diameter_um: 400.0,
            star_diameter_um: 450.0,
            star_inner_ratio: 0.45,
            oval_axes_um: (500.0, 250.0),
        }
    }
}

impl Geometry {
    /// Nominal (major, minor) axes of one pit of `class`; gyrus ridges are
    /// half a spacing wide.
    pub fn class_axes(&self, class: KudoClass) -> (f64, f64) {
        match class {
            KudoClass::R => (self.round_diameter_um, self.round_diameter_um),
            KudoClass::A => (self.star_diameter_um, self.star_diameter_um),
            KudoClass::O => self.oval_axes_um,
            KudoClass::G => (self.spacing_um / 2.0, self.spacing_um / 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.pit_depth_um > 0.0) {
            return fail(format!("pit depth {} must be positive", self.pit_depth_um));
        }
        let (lo, hi) = self.jitter_um;
        if lo < 0.0 || hi < lo || hi >= self.spacing_um / 2.0 {
            return fail(format!("jitter range {:?} must lie in [0, spacing/2)", self.jitter_um));
        }
        if !(self.wall_um > 0.0) {
            return fail("wall width must be positive".into());
        }
        let widest = self
            .round_diameter_um
            .max(self.star_diameter_um)
            .max(self.oval_axes_um.0);
        if self.spacing_um <= widest {
            return fail(format!(
                "spacing {} must exceed the largest pit axis {widest}",
                self.spacing_um
            ));
        }
        if self.oval_axes_um.1 <= 0.0 || self.oval_axes_um.1 > self.oval_axes_um.0 {
            return fail("oval minor axis must be positive and not exceed the major axis".into());
        }
        if !(0.0..1.0).contains(&self.star_inner_ratio) {
            return fail("star inner ratio must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// One synthetic phantom observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kudo_class: KudoClass,
    /// Determines lattice jitter, star point counts, orientations and the
    /// partial-contact boundary.
    pub variation_seed: u64,
    pub material: Material,
    pub orientation: Orientation,
    pub geometry: Geometry,
}

impl PhantomSpec {
    pub fn new(kudo_class: KudoClass, variation_seed: u64) -> Self {
        Self {
            kudo_class,
            variation_seed,
            material: Material::A70,
            orientation: Orientation::Full,
            geometry: Geometry::default(),
        }
    }
}
