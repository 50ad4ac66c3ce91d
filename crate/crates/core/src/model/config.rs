use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LABELS: usize = 15;
pub const META_DIM: usize = 3;

/// Bottleneck depth of the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Depth {
    D38,
    D50,
    D101,
}

impl Depth {
    /// Bottleneck blocks in conv2_x .. conv5_x, including each stage's entry
    /// block.
    pub fn blocks(self) -> [usize; 4] {
        match self {
            Depth::D38 => [2, 2, 3, 3],
            Depth::D50 => [3, 4, 6, 3],
            Depth::D101 => [3, 4, 23, 3],
        }
    }

    pub fn number(self) -> u32 {
        match self {
            Depth::D38 => 38,
            Depth::D50 => 50,
            Depth::D101 => 101,
        }
    }
}

impl TryFrom<u32> for Depth {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        match v {
            38 => Ok(Depth::D38),
            50 => Ok(Depth::D50),
            101 => Ok(Depth::D101),
            other => Err(format!("unsupported depth {other} (expected 38, 50 or 101)")),
        }
    }
}

impl From<Depth> for u32 {
    fn from(d: Depth) -> u32 {
        d.number()
    }
}

impl FromStr for Depth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("invalid depth `{s}`")))?;
        Depth::try_from(v).map_err(Error::Config)
    }
}

/// Which parameters are adapted during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Freeze {
    /// Trained from scratch, everything trainable.
    None,
    /// Frozen feature extractor; only the classifier head trains.
    OffTheShelf,
    /// Pretrained start, every layer retrained.
    FineTune,
}

impl FromStr for Freeze {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "scratch" => Ok(Freeze::None),
            "off_the_shelf" | "ots" => Ok(Freeze::OffTheShelf),
            "fine_tune" | "ft" => Ok(Freeze::FineTune),
            other => Err(Error::Config(format!("unknown freeze policy `{other}`"))),
        }
    }
}

/// The four image-branch setups compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    OffTheShelf,
    FineTune,
    OneChannel,
    Large,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::OffTheShelf,
        Variant::FineTune,
        Variant::OneChannel,
        Variant::Large,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::OffTheShelf => "OTS",
            Variant::FineTune => "FT",
            Variant::OneChannel => "1channel",
            Variant::Large => "large",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ots" | "off_the_shelf" => Ok(Variant::OffTheShelf),
            "ft" | "fine_tune" => Ok(Variant::FineTune),
            "1channel" | "one_channel" => Ok(Variant::OneChannel),
            "large" => Ok(Variant::Large),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub depth: Depth,
    pub input_channels: usize,
    pub input_size: usize,
    pub extra_pool_after_conv2: bool,
    pub use_meta: bool,
    pub num_labels: usize,
    pub freeze: Freeze,
    /// Divides every channel width. 1 reproduces the published widths;
    /// larger values give desk-scale networks of identical topology.
    #[serde(default = "default_width_divisor")]
    pub width_divisor: usize,
}

fn default_width_divisor() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: Depth::D50,
            input_channels: 1,
            input_size: 224,
            extra_pool_after_conv2: false,
            use_meta: false,
            num_labels: NUM_LABELS,
            freeze: Freeze::None,
            width_divisor: 1,
        }
    }
}

impl ModelConfig {
    pub fn variant(variant: Variant, use_meta: bool) -> Self {
        let base = ModelConfig {
            use_meta,
            ..ModelConfig::default()
        };
        match variant {
            Variant::OffTheShelf => ModelConfig {
                input_channels: 3,
                freeze: Freeze::OffTheShelf,
                ..base
            },
            Variant::FineTune => ModelConfig {
                input_channels: 3,
                freeze: Freeze::FineTune,
                ..base
            },
            Variant::OneChannel => base,
            Variant::Large => ModelConfig {
                input_size: 448,
                extra_pool_after_conv2: true,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.num_labels != NUM_LABELS {
            return fail(format!("num_labels must be {NUM_LABELS}, got {}", self.num_labels));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return fail(format!("input_channels must be 1 or 3, got {}", self.input_channels));
        }
        if ![1, 2, 4, 8, 16].contains(&self.width_divisor) {
            return fail(format!(
                "width_divisor must be one of 1, 2, 4, 8, 16, got {}",
                self.width_divisor
            ));
        }
        if self.input_size == 448 && !self.extra_pool_after_conv2 {
            return fail("input_size 448 requires extra_pool_after_conv2".into());
        }
        let reduction = if self.extra_pool_after_conv2 { 64 } else { 32 };
        if self.input_size < reduction || self.input_size % reduction != 0 {
            return fail(format!(
                "input_size {} must be a positive multiple of {reduction} for this pooling layout",
                self.input_size
            ));
        }
        Ok(())
    }

    pub fn stem_width(&self) -> usize {
        64 / self.width_divisor
    }

    /// (bottleneck width, output width) of conv2_x .. conv5_x.
    pub fn stage_widths(&self) -> [(usize, usize); 4] {
        let w = self.width_divisor;
        [(64 / w, 256 / w), (128 / w, 512 / w), (256 / w, 1024 / w), (512 / w, 2048 / w)]
    }

    /// Width of the pooled image feature vector.
    pub fn feature_dim(&self) -> usize {
        2048 / self.width_divisor
    }

    pub fn head_input_dim(&self) -> usize {
        self.feature_dim() + if self.use_meta { META_DIM } else { 0 }
    }

    /// Side length of the final convolutional feature map.
    pub fn final_grid(&self) -> usize {
        let reduction = if self.extra_pool_after_conv2 { 64 } else { 32 };
        self.input_size / reduction
    }

    /// Name in the `ResNet-50-large-meta` style.
    pub fn tag(&self) -> String {
        let mut tag = format!("ResNet-{}", self.depth.number());
        if self.extra_pool_after_conv2 {
            tag.push_str("-large");
        } else if self.input_channels == 1 {
            tag.push_str("-1channel");
        } else {
            match self.freeze {
                Freeze::OffTheShelf => tag.push_str("-OTS"),
                Freeze::FineTune => tag.push_str("-FT"),
                Freeze::None => {}
            }
        }
        if self.use_meta {
            tag.push_str("-meta");
        }
        if self.width_divisor != 1 {
            tag.push_str(&format!("-w{}", self.width_divisor));
        }
        tag
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}
