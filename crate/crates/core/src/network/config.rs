use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Dilated residual network: three-block stem, three residual modules
    /// (the last one dilated), average pool and 3x3 classifier.
    Proposed,
    /// First three stages of ResNet-18 with the same pooled classifier.
    LightResnet,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Proposed => "proposed",
            ModelKind::LightResnet => "light_resnet",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(ModelKind::Proposed),
            "light_resnet" | "lightresnet" => Ok(ModelKind::LightResnet),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Widths and extents of either architecture.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_size: (usize, usize),
    /// Output widths of the three stem blocks (the light baseline uses
    /// `module_channels[0]` for its single 7x7 stem instead).
    pub stem_channels: [usize; 3],
    pub module_channels: [usize; 3],
    pub blocks_per_module: usize,
    pub module3_dilation: usize,
    pub classifier_pool: (usize, usize),
    pub class_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            input_size: (224, 224),
            stem_channels: [32, 32, 64],
            module_channels: [64, 128, 256],
            blocks_per_module: 2,
            module3_dilation: 2,
            classifier_pool: (3, 3),
            class_count: 4,
        }
    }

    /// Scaled-down profile for laptop-scale experiments.
    pub fn desk() -> Self {
        Self {
            input_size: (64, 64),
            stem_channels: [8, 8, 16],
            module_channels: [16, 32, 64],
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return fail(format!("input size {:?} must be positive", self.input_size));
        }
        if self.stem_channels.contains(&0) || self.module_channels.contains(&0) {
            return fail("channel counts must be positive".into());
        }
        if self.blocks_per_module == 0 {
            return fail("blocks_per_module must be at least 1".into());
        }
        if self.module3_dilation == 0 {
            return fail("module3_dilation must be at least 1".into());
        }
        let (ph, pw) = self.classifier_pool;
        if (ph, pw) != (3, 3) {
            return fail(format!(
                "classifier pool {:?} must be 3x3 so the valid 3x3 classifier yields 1x1 logits",
                self.classifier_pool
            ));
        }
        if self.class_count < 2 {
            return fail(format!("class_count {} must be at least 2", self.class_count));
        }
        Ok(())
    }
}
