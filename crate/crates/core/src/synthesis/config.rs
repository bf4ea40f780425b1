use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::Resample;

/// Generator block architecture, one per generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockVariant {
    /// StyleGAN2 baseline: two 3x3 convs, toRGB on the block output.
    SkipConnection,
    /// Squeeze to `c/r` channels, toRGB on the squeezed feature, excite back
    /// to `c` and blend with the pre-squeeze feature through a 1x1 conv.
    Squeeze,
    /// Squeeze without the blend: the excited feature is the block output.
    SqueezeNoFbp,
    /// toRGB reads the pre-squeeze feature.
    SqueezeRgbBeforeSqueeze,
    /// toRGB reads the excited feature.
    SqueezeRgbAfterExcite,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 5] = [
        BlockVariant::SkipConnection,
        BlockVariant::Squeeze,
        BlockVariant::SqueezeNoFbp,
        BlockVariant::SqueezeRgbBeforeSqueeze,
        BlockVariant::SqueezeRgbAfterExcite,
    ];

    pub fn key(self) -> &'static str {
        match self {
            BlockVariant::SkipConnection => "skip",
            BlockVariant::Squeeze => "squeeze",
            BlockVariant::SqueezeNoFbp => "squeeze_no_fbp",
            BlockVariant::SqueezeRgbBeforeSqueeze => "squeeze_rgb_before_squeeze",
            BlockVariant::SqueezeRgbAfterExcite => "squeeze_rgb_after_excite",
        }
    }

    pub fn is_squeeze(self) -> bool {
        self != BlockVariant::SkipConnection
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockVariant::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of: skip, squeeze, squeeze_no_fbp, \
                     squeeze_rgb_before_squeeze, squeeze_rgb_after_excite)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

impl UpsampleMode {
    pub fn resample(self) -> Resample {
        match self {
            UpsampleMode::Nearest => Resample::NearestUp,
            UpsampleMode::Bilinear => Resample::BilinearUp,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            UpsampleMode::Nearest => "nearest",
            UpsampleMode::Bilinear => "bilinear",
        }
    }
}

impl FromStr for UpsampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpsampleMode::Nearest),
            "bilinear" => Ok(UpsampleMode::Bilinear),
            _ => Err(Error::Config(format!(
                "unknown upsample mode `{s}` (expected nearest or bilinear)"
            ))),
        }
    }
}

pub type ChannelMap = BTreeMap<usize, usize>;

/// Parses `4:512,8:512,...`.
pub fn parse_channel_map(s: &str) -> Result<ChannelMap> {
    let mut map = ChannelMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (res, ch) = part.split_once(':').ok_or_else(|| {
            Error::Config(format!("channel map entry `{part}` is not res:channels"))
        })?;
        let res: usize = res
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad resolution in `{part}`")))?;
        let ch: usize = ch
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad channel count in `{part}`")))?;
        if map.insert(res, ch).is_some() {
            return Err(Error::Config(format!("resolution {res} listed twice")));
        }
    }
    Ok(map)
}

pub fn format_channel_map(map: &ChannelMap) -> String {
    map.iter()
        .map(|(r, c)| format!("{r}:{c}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// The 256x256 channel map whose per-resolution counts sum to 2,496.
pub fn nominal_channel_map() -> ChannelMap {
    [
        (4, 512),
        (8, 512),
        (16, 512),
        (32, 512),
        (64, 256),
        (128, 128),
        (256, 64),
    ]
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub channel_map: ChannelMap,
    pub variant: BlockVariant,
    /// Channel squeeze ratio `r`.
    pub squeeze_ratio: usize,
    pub style_dim: usize,
    pub mapping_depth: usize,
    pub upsample: UpsampleMode,
}

impl GeneratorConfig {
    /// Full-size 256x256 generator: 512-d styles, 8 mapping layers.
    pub fn nominal_256(variant: BlockVariant, squeeze_ratio: usize) -> Self {
        GeneratorConfig {
            resolution: 256,
            channel_map: nominal_channel_map(),
            variant,
            squeeze_ratio,
            style_dim: 512,
            mapping_depth: 8,
            upsample: UpsampleMode::Nearest,
        }
    }

    /// 16x16 generator used for desk-scale training.
    pub fn toy(variant: BlockVariant) -> Self {
        GeneratorConfig {
            resolution: 16,
            channel_map: [(4, 16), (8, 16), (16, 16)].into_iter().collect(),
            variant,
            squeeze_ratio: 4,
            style_dim: 32,
            mapping_depth: 2,
            upsample: UpsampleMode::Nearest,
        }
    }

    /// Small skip-connection generator for equivalence checks at any
    /// resolution from 4 to 64.
    pub fn desk(resolution: usize, upsample: UpsampleMode) -> Self {
        let full: ChannelMap = [(4, 16), (8, 16), (16, 12), (32, 8), (64, 8)]
            .into_iter()
            .collect();
        GeneratorConfig {
            resolution,
            channel_map: full.into_iter().filter(|&(r, _)| r <= resolution).collect(),
            variant: BlockVariant::SkipConnection,
            squeeze_ratio: 1,
            style_dim: 16,
            mapping_depth: 2,
            upsample,
        }
    }

    /// Resolutions 4, 8, ..., `resolution`.
    pub fn resolutions(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut r = 4;
        while r <= self.resolution {
            out.push(r);
            r *= 2;
        }
        out
    }

    pub fn channels(&self, res: usize) -> usize {
        self.channel_map[&res]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if r < 4 || !r.is_power_of_two() || r > 1024 {
            return Err(Error::Config(format!(
                "resolution must be a power of two in 4..=1024, got {r}"
            )));
        }
        for res in self.resolutions() {
            match self.channel_map.get(&res) {
                None => {
                    return Err(Error::Config(format!(
                        "channel map has no entry for resolution {res}"
                    )))
                }
                Some(0) => return Err(Error::Config(format!("zero channels at resolution {res}"))),
                Some(_) => {}
            }
        }
        if self.style_dim == 0 {
            return Err(Error::Config("style_dim must be positive".into()));
        }
        if self.mapping_depth == 0 {
            return Err(Error::Config("mapping_depth must be at least 1".into()));
        }
        if self.squeeze_ratio == 0 {
            return Err(Error::Config("squeeze ratio must be positive".into()));
        }
        if self.variant.is_squeeze() {
            for res in self.resolutions().into_iter().skip(1) {
                let c = self.channels(res);
                if !c.is_multiple_of(self.squeeze_ratio) {
                    return Err(Error::Config(format!(
                        "squeeze ratio {} does not divide {c} channels at resolution {res}",
                        self.squeeze_ratio
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_map_round_trip() {
        let m = nominal_channel_map();
        assert_eq!(parse_channel_map(&format_channel_map(&m)).unwrap(), m);
        assert!(parse_channel_map("4:1,4:2").is_err());
        assert!(parse_channel_map("4-1").is_err());
    }

    #[test]
    fn nominal_map_totals_2496() {
        assert_eq!(nominal_channel_map().values().sum::<usize>(), 2496);
    }

    #[test]
    fn validation() {
        assert!(GeneratorConfig::toy(BlockVariant::Squeeze)
            .validate()
            .is_ok());
        let mut c = GeneratorConfig::toy(BlockVariant::Squeeze);
        c.squeeze_ratio = 3;
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::desk(32, UpsampleMode::Nearest);
        c.channel_map.remove(&16);
        assert!(c.validate().is_err());
        let mut c = GeneratorConfig::desk(8, UpsampleMode::Nearest);
        c.resolution = 12;
        assert!(c.validate().is_err());
        for v in BlockVariant::ALL {
            assert_eq!(v.key().parse::<BlockVariant>().unwrap(), v);
        }
    }
}
