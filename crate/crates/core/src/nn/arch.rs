use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolution: odd square kernel and output filter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
}

/// Sequential SRCNN layout. LeakyReLU follows every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub preset: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: Vec<ConvSpec>,
    /// LeakyReLU negative slope.
    pub slope: f64,
}

pub const DEFAULT_SLOPE: f64 = 0.1;

pub const PRESETS: [&str; 4] = ["spectral", "spectral-rgb", "spatial", "temporal"];

fn three_stage(preset: &str, in_channels: usize, first_kernel: usize) -> ArchConfig {
    ArchConfig {
        preset: preset.to_string(),
        in_channels,
        out_channels: 8,
        layers: vec![
            ConvSpec { kernel: first_kernel, filters: 64 },
            ConvSpec { kernel: 5, filters: 32 },
            ConvSpec { kernel: 5, filters: 8 },
        ],
        slope: DEFAULT_SLOPE,
    }
}

impl ArchConfig {
    /// Named presets:
    /// - `spectral`: 8 upsampled satellite bands + 3 fine RGB → 8 bands
    /// - `spectral-rgb`: fine RGB only → 8 bands
    /// - `spatial`, `temporal`: 8 upsampled bands → 8 bands, wider first kernel
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "spectral" => Ok(three_stage(name, 11, 9)),
            "spectral-rgb" => Ok(three_stage(name, 3, 9)),
            "spatial" | "temporal" => Ok(three_stage(name, 8, 13)),
            _ => Err(Error::Config(format!("unknown preset '{name}' (expected one of {})", PRESETS.join(", ")))),
        }
    }

    /// Custom sequential layout.
    pub fn custom(in_channels: usize, layers: &[(usize, usize)], slope: f64) -> Result<Self> {
        let arch = ArchConfig {
            preset: "custom".into(),
            in_channels,
            out_channels: layers.last().map_or(0, |l| l.1),
            layers: layers.iter().map(|&(kernel, filters)| ConvSpec { kernel, filters }).collect(),
            slope,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Config("an SRCNN needs at least two conv layers".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("input channel count must be positive".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel % 2 == 0 {
                return Err(Error::Config(format!("layer {i}: kernel {} is not odd", l.kernel)));
            }
            if l.filters == 0 {
                return Err(Error::Config(format!("layer {i}: zero filters")));
            }
        }
        if self.layers.last().unwrap().filters != self.out_channels {
            return Err(Error::Config(format!(
                "last layer has {} filters but out_channels is {}",
                self.layers.last().unwrap().filters,
                self.out_channels
            )));
        }
        if !self.slope.is_finite() {
            return Err(Error::Config("activation slope must be finite".into()));
        }
        Ok(())
    }

    /// `(c_in, c_out, kernel)` for every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut c_in = self.in_channels;
        self.layers
            .iter()
            .map(|l| {
                let s = (c_in, l.filters, l.kernel);
                c_in = l.filters;
                s
            })
            .collect()
    }

    /// Σ (k²·c_in·c_out + c_out) over layers.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(ci, co, k)| k * k * ci * co + co).sum()
    }

    /// Pixels of context each output pixel sees on either side.
    pub fn receptive_radius(&self) -> usize {
        self.layers.iter().map(|l| l.kernel / 2).sum()
    }

    pub fn max_kernel(&self) -> usize {
        self.layers.iter().map(|l| l.kernel).max().unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_parameter_counts() {
        let s = ArchConfig::preset("spectral").unwrap();
        assert_eq!(s.param_count(), 9 * 9 * 11 * 64 + 64 + 5 * 5 * 64 * 32 + 32 + 5 * 5 * 32 * 8 + 8);
        assert_eq!(s.param_count(), 114_728);
        let weights_only: usize = s.layer_shapes().iter().map(|&(ci, co, k)| k * k * ci * co).sum();
        assert_eq!(weights_only, 114_624);
        assert_eq!(ArchConfig::preset("spectral-rgb").unwrap().in_channels, 3);
        assert_eq!(ArchConfig::preset("spatial").unwrap().layers[0].kernel, 13);
        assert_eq!(s.receptive_radius(), 8);
        for p in PRESETS {
            ArchConfig::preset(p).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(ArchConfig::preset("rcan").is_err());
        assert!(ArchConfig::custom(3, &[(3, 8)], 0.1).is_err());
        assert!(ArchConfig::custom(3, &[(4, 8), (3, 2)], 0.1).is_err());
        let mut a = ArchConfig::preset("spectral").unwrap();
        a.out_channels = 4;
        assert!(a.validate().is_err());
    }
}
