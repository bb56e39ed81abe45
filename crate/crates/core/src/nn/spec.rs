//! Architecture descriptors for the U-Net generator and the PatchGAN
//! discriminator.

use serde::{Deserialize, Serialize};

use super::ops::conv_output_size;
use crate::error::{Error, Result};

/// Convolution kernel side used throughout both networks.
pub const KERNEL: usize = 4;
/// Spatial side of network inputs and outputs.
pub const NETWORK_RESOLUTION: usize = 256;
pub const LEAKY_SLOPE: f64 = 0.2;

/// U-Net generator. Encoder stage `i` halves the resolution and emits
/// `encoder_widths[i-1]` channels; decoder stage `j` doubles it and, except
/// for the last, is concatenated with encoder stage `n - j` before feeding
/// the next decoder stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_widths: Vec<usize>,
    /// Dropout probability of the stochastic decoder stages.
    pub dropout: f64,
    /// Number of leading decoder stages with dropout.
    pub dropout_stages: usize,
    pub resolution: usize,
}

/// Parameters of one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageLayout {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub norm: bool,
    pub transposed: bool,
}

impl StageLayout {
    /// `(name, shape)` of each parameter tensor. Normalised stages carry
    /// scale/shift instead of a bias.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let weight = if self.transposed {
            vec![self.in_channels, self.out_channels, KERNEL, KERNEL]
        } else {
            vec![self.out_channels, self.in_channels, KERNEL, KERNEL]
        };
        let mut out = vec![(format!("{}.weight", self.name), weight)];
        if self.norm {
            out.push((format!("{}.gamma", self.name), vec![self.out_channels]));
            out.push((format!("{}.beta", self.name), vec![self.out_channels]));
        } else {
            out.push((format!("{}.bias", self.name), vec![self.out_channels]));
        }
        out
    }
}

impl GeneratorSpec {
    /// 8+8 stages, encoder widths 64..512.
    pub fn standard() -> Self {
        Self {
            in_channels: 3,
            out_channels: 1,
            encoder_widths: vec![64, 128, 256, 512, 512, 512, 512, 512],
            dropout: 0.5,
            dropout_stages: 3,
            resolution: NETWORK_RESOLUTION,
        }
    }

    /// Same topology at reduced width for CPU experiments.
    pub fn tiny() -> Self {
        Self {
            encoder_widths: vec![32; 8],
            ..Self::standard()
        }
    }

    pub fn stages(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stages();
        if n > 0 && (self.resolution >> n) << n != self.resolution {
            return Err(Error::BadShape(format!(
                "resolution {} is not divisible by 2^{n}",
                self.resolution
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.encoder_widths.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidInput("zero-width stage".into()));
        }
        Ok(())
    }

    pub fn encoder(&self) -> Vec<StageLayout> {
        let n = self.stages();
        (0..n)
            .map(|i| StageLayout {
                name: format!("enc{}", i + 1),
                in_channels: if i == 0 { self.in_channels } else { self.encoder_widths[i - 1] },
                out_channels: self.encoder_widths[i],
                stride: 2,
                // neither the outermost nor the 1x1 bottleneck is normalised
                norm: i != 0 && i != n - 1,
                transposed: false,
            })
            .collect()
    }

    pub fn decoder(&self) -> Vec<StageLayout> {
        let n = self.stages();
        let w = &self.encoder_widths;
        (0..n)
            .map(|j| {
                let in_channels = if j == 0 { w[n - 1] } else { 2 * w[n - 1 - j] };
                let out_channels = if j == n - 1 { self.out_channels } else { w[n - 2 - j] };
                StageLayout {
                    name: format!("dec{}", j + 1),
                    in_channels,
                    out_channels,
                    stride: 2,
                    norm: j != n - 1,
                    transposed: true,
                }
            })
            .collect()
    }

    /// Encoder stage (1-based) whose activation is concatenated onto the
    /// output of decoder stage `j` (1-based), if any.
    pub fn skip_source(&self, j: usize) -> Option<usize> {
        (j < self.stages()).then(|| self.stages() - j)
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.encoder()
            .iter()
            .chain(self.decoder().iter())
            .flat_map(StageLayout::param_shapes)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub norm: bool,
}

/// PatchGAN discriminator over channel-concatenated (image, mask) pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    pub stages: Vec<DiscStage>,
}

impl DiscriminatorSpec {
    /// Standard kernel, stride and normalisation layout with custom widths.
    pub fn with_widths(widths: [usize; 5]) -> Self {
        let strides = [2, 2, 2, 1, 1];
        let stages = widths
            .iter()
            .zip(strides)
            .enumerate()
            .map(|(i, (&out_channels, stride))| DiscStage {
                out_channels,
                kernel: KERNEL,
                stride,
                padding: 1,
                norm: i != 0 && i != 4,
            })
            .collect();
        Self { in_channels: 4, stages }
    }

    /// Widths 64, 128, 256, 512, 1; strides 2, 2, 2, 1, 1.
    pub fn standard() -> Self {
        Self::with_widths([64, 128, 256, 512, 1])
    }

    pub fn tiny() -> Self {
        Self::with_widths([8, 16, 32, 32, 1])
    }

    pub fn layouts(&self) -> Vec<StageLayout> {
        let mut in_channels = self.in_channels;
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let l = StageLayout {
                    name: format!("disc{}", i + 1),
                    in_channels,
                    out_channels: s.out_channels,
                    stride: s.stride,
                    norm: s.norm,
                    transposed: false,
                };
                in_channels = s.out_channels;
                l
            })
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layouts().iter().flat_map(StageLayout::param_shapes).collect()
    }

    /// Side of the patch-score grid for a square input.
    pub fn grid_size(&self, input: usize) -> usize {
        self.stages
            .iter()
            .fold(input, |side, s| conv_output_size(side, s.kernel, s.stride, s.padding))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.iter().any(|s| s.kernel != KERNEL) {
            return Err(Error::InvalidInput(format!("only kernel {KERNEL} is supported")));
        }
        if self.stages.last().is_some_and(|s| s.out_channels != 1) {
            return Err(Error::InvalidInput("final discriminator stage must emit one channel".into()));
        }
        Ok(())
    }
}

/// Input extent seen by one output element, folded from the output
/// backwards: `r <- r * stride + (kernel - stride)`.
pub fn receptive_field(spec: &DiscriminatorSpec) -> usize {
    spec.stages
        .iter()
        .rev()
        .fold(1, |r, s| r * s.stride + (s.kernel - s.stride))
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Named presets for configs and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Standard,
    Tiny,
}

impl Preset {
    pub fn generator(self) -> GeneratorSpec {
        match self {
            Preset::Standard => GeneratorSpec::standard(),
            Preset::Tiny => GeneratorSpec::tiny(),
        }
    }

    pub fn discriminator(self) -> DiscriminatorSpec {
        match self {
            Preset::Standard => DiscriminatorSpec::standard(),
            Preset::Tiny => DiscriminatorSpec::tiny(),
        }
    }
}
