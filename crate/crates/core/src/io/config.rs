use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::synthesis::config::{format_channel_map, parse_channel_map};
use crate::synthesis::{BlockVariant, ChannelMap, GeneratorConfig, UpsampleMode};
use crate::training::{LossConfig, LossKind, ToyDatasetSpec};

/// Element type used for a run's parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn key(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!(
                "unknown precision `{s}` (expected f32 or f64)"
            ))),
        }
    }
}

/// Every recognised key with its default, in canonical order.
pub const KEYS: [(&str, &str); 15] = [
    ("resolution", "16"),
    ("channel_map", "4:16,8:16,16:16"),
    ("variant", "squeeze"),
    ("r", "4"),
    ("style_dim", "32"),
    ("mapping_depth", "2"),
    ("loss", "nonsat_r1"),
    ("gamma", "0.1"),
    ("lr", "0.0025"),
    ("steps", "500"),
    ("seed", "0"),
    ("precision", "f32"),
    ("upsample", "nearest"),
    ("batch", "16"),
    ("ema_halflife", "50"),
];

/// Plain `key = value` run configuration.
///
/// Blank lines and `#` comments are ignored. Unknown or repeated keys are
/// errors; missing keys take the defaults in [`KEYS`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub resolution: usize,
    pub channel_map: ChannelMap,
    pub variant: BlockVariant,
    pub r: usize,
    pub style_dim: usize,
    pub mapping_depth: usize,
    pub loss: LossKind,
    pub gamma: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub precision: Precision,
    pub upsample: UpsampleMode,
    pub batch: usize,
    pub ema_halflife: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse("").expect("defaults parse")
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut given: Vec<(&str, &str)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got `{line}`",
                    lineno + 1
                ))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.iter().any(|(key, _)| *key == k) {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{k}`",
                    lineno + 1
                )));
            }
            if given.iter().any(|(g, _)| *g == k) {
                return Err(Error::Config(format!(
                    "line {}: key `{k}` given twice",
                    lineno + 1
                )));
            }
            given.push((k, v));
        }
        let get = |key: &str| -> &str {
            given
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| KEYS.iter().find(|(k, _)| *k == key).expect("known key").1)
        };
        let cfg = RunConfig {
            resolution: value("resolution", get("resolution"))?,
            channel_map: parse_channel_map(get("channel_map"))?,
            variant: get("variant").parse()?,
            r: value("r", get("r"))?,
            style_dim: value("style_dim", get("style_dim"))?,
            mapping_depth: value("mapping_depth", get("mapping_depth"))?,
            loss: get("loss").parse()?,
            gamma: value("gamma", get("gamma"))?,
            lr: value("lr", get("lr"))?,
            steps: value("steps", get("steps"))?,
            seed: value("seed", get("seed"))?,
            precision: get("precision").parse()?,
            upsample: get("upsample").parse()?,
            batch: value("batch", get("batch"))?,
            ema_halflife: value("ema_halflife", get("ema_halflife"))?,
        };
        cfg.generator().validate()?;
        cfg.loss_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    /// Canonical text: every key, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let values = [
            self.resolution.to_string(),
            format_channel_map(&self.channel_map),
            self.variant.to_string(),
            self.r.to_string(),
            self.style_dim.to_string(),
            self.mapping_depth.to_string(),
            self.loss.to_string(),
            self.gamma.to_string(),
            self.lr.to_string(),
            self.steps.to_string(),
            self.seed.to_string(),
            self.precision.to_string(),
            self.upsample.key().to_string(),
            self.batch.to_string(),
            self.ema_halflife.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|((k, _), v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            resolution: self.resolution,
            channel_map: self
                .channel_map
                .iter()
                .filter(|(&r, _)| r <= self.resolution)
                .map(|(&r, &c)| (r, c))
                .collect(),
            variant: self.variant,
            squeeze_ratio: self.r,
            style_dim: self.style_dim,
            mapping_depth: self.mapping_depth,
            upsample: self.upsample,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            gamma: self.gamma,
            learning_rate: self.lr,
            ema_halflife: self.ema_halflife,
            ..LossConfig::default()
        }
    }

    pub fn dataset(&self) -> ToyDatasetSpec {
        ToyDatasetSpec {
            resolution: self.resolution,
            seed: self.seed,
            batch_size: self.batch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_describe_the_toy_run() {
        let c = RunConfig::default();
        assert_eq!(c.generator(), GeneratorConfig::toy(BlockVariant::Squeeze));
        assert_eq!(c.loss_config(), LossConfig::default());
        assert_eq!(c.dataset(), ToyDatasetSpec::default());
        assert_eq!(c.steps, 500);
    }

    #[test]
    fn canonical_text_round_trips() {
        let c =
            RunConfig::parse("variant = skip\n# comment\n\ngamma = 0.5  # inline\nprecision=f64\n")
                .unwrap();
        assert_eq!(c.variant, BlockVariant::SkipConnection);
        assert_eq!(c.gamma, 0.5);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(RunConfig::parse("learning_rate = 0.1").is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("steps = many").is_err());
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(RunConfig::parse("r = 3").is_err());
        assert!(RunConfig::parse("resolution = 32").is_err());
        assert!(RunConfig::parse("gamma = -1").is_err());
        assert!(RunConfig::parse("lr = 0").is_err());
    }
}
