//! Parameter accounting by enumeration of the declared arrays.
//!
//! Counts come from the same declarations the generator uses, so they are
//! exact. The published closed forms for the squeeze block are reported
//! next to them; where the two disagree the gap is shown rather than
//! absorbed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;
use crate::params::{ParamKind, ParamLayout};
use crate::synthesis::{BlockVariant, Generator, GeneratorConfig, SynthesisBlock};

/// Published closed form for one squeeze block: `(10 + 18/r) c^2`.
pub fn closed_form_squeeze_kernels(c: usize, r: usize) -> f64 {
    let c2 = (c * c) as f64;
    (10.0 + 18.0 / r as f64) * c2
}

/// Kernel reduction of a squeeze block against a skip block under the
/// closed forms, `1 - (10 + 18/r)/18`.
pub fn closed_form_reduction(r: usize) -> f64 {
    1.0 - (10.0 + 18.0 / r as f64) / 18.0
}

/// Smallest `r` above which `(10 + 18/r) c^2 < 18 c^2`.
pub fn closed_form_break_even() -> f64 {
    18.0 / 8.0
}

/// Smallest `r` above which the enumerated `11 c^2 + 18 c^2 / r` drops
/// below `18 c^2`.
pub fn enumerated_break_even() -> f64 {
    18.0 / 7.0
}

/// Relative reduction from `baseline` to `other`.
pub fn reduction(baseline: usize, other: usize) -> f64 {
    1.0 - other as f64 / baseline as f64
}

/// Kernel accounting for one `c -> c` upsampling block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParamEntry {
    pub variant: BlockVariant,
    pub c: usize,
    pub r: usize,
    /// `(layer, kernel scalars)` for every convolution except toRGB.
    pub kernels: Vec<(String, usize)>,
    pub kernel_total: usize,
    /// Symbolic form of `kernel_total`.
    pub enumerated_formula: &'static str,
    pub rgb_kernel: usize,
    /// Conv and toRGB biases.
    pub biases: usize,
    /// Number of style scales the block consumes; each costs
    /// `style_dim + 1` affine parameters.
    pub style_scales: usize,
    /// Published closed form, where one exists for this block.
    pub closed_form: Option<&'static str>,
    pub closed_form_prediction: Option<f64>,
}

impl BlockParamEntry {
    /// `kernel_total - closed_form_prediction`.
    pub fn deviation(&self) -> Option<f64> {
        self.closed_form_prediction.map(|p| self.kernel_total as f64 - p)
    }

    pub fn relative_deviation(&self) -> Option<f64> {
        self.closed_form_prediction
            .map(|p| (self.kernel_total as f64 - p) / p)
    }

    /// Deviation in units of `c^2`.
    pub fn deviation_c2(&self) -> Option<f64> {
        self.deviation().map(|d| d / (self.c * self.c) as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let head = if self.variant.is_squeeze() {
            format!("{} c={} r={}", self.variant, self.c, self.r)
        } else {
            format!("{} c={}", self.variant, self.c)
        };
        let _ = writeln!(
            s,
            "block {head}: {} = {} conv kernel scalars",
            self.enumerated_formula, self.kernel_total
        );
        for (name, n) in &self.kernels {
            let _ = writeln!(s, "  {name}: {n}");
        }
        let _ = writeln!(
            s,
            "  separately: toRGB kernel {}, biases {}, style scales {}",
            self.rgb_kernel, self.biases, self.style_scales
        );
        if let (Some(f), Some(p), Some(d)) =
            (self.closed_form, self.closed_form_prediction, self.deviation())
        {
            let _ = writeln!(s, "  closed form {f} = {p:.0}");
            if d == 0.0 {
                let _ = writeln!(s, "  enumeration matches the closed form");
            } else {
                let _ = writeln!(
                    s,
                    "  DISCREPANCY: enumeration exceeds the closed form by {d:.0} ({:+.2}c², {:+.3}%)",
                    self.deviation_c2().unwrap_or_default(),
                    100.0 * self.relative_deviation().unwrap_or_default()
                );
            }
        }
        s
    }

    pub fn to_kv(&self, prefix: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{prefix}variant={}", self.variant);
        let _ = writeln!(s, "{prefix}c={}", self.c);
        let _ = writeln!(s, "{prefix}r={}", self.r);
        for (name, n) in &self.kernels {
            let _ = writeln!(s, "{prefix}kernel.{name}={n}");
        }
        let _ = writeln!(s, "{prefix}kernel_total={}", self.kernel_total);
        let _ = writeln!(s, "{prefix}enumerated_formula={}", self.enumerated_formula);
        let _ = writeln!(s, "{prefix}rgb_kernel={}", self.rgb_kernel);
        let _ = writeln!(s, "{prefix}biases={}", self.biases);
        let _ = writeln!(s, "{prefix}style_scales={}", self.style_scales);
        if let (Some(f), Some(p)) = (self.closed_form, self.closed_form_prediction) {
            let _ = writeln!(s, "{prefix}closed_form={f}");
            let _ = writeln!(s, "{prefix}closed_form_prediction={p}");
            let _ = writeln!(
                s,
                "{prefix}deviation={}",
                self.deviation().unwrap_or_default()
            );
            let _ = writeln!(
                s,
                "{prefix}deviation_c2={}",
                self.deviation_c2().unwrap_or_default()
            );
        }
        s
    }
}

/// Enumerates the kernels of a `c -> c` block of `variant` by declaring it.
pub fn count_block_params(variant: BlockVariant, c: usize, r: usize) -> Result<BlockParamEntry> {
    let mut layout = ParamLayout::new();
    let block = SynthesisBlock::declare(&mut layout, 8, variant, c, c, r, 1)?;
    let specs = layout.specs();
    let kernels: Vec<(String, usize)> = specs
        .iter()
        .filter(|s| s.kind == ParamKind::ConvKernel)
        .map(|s| {
            let layer = s.name.trim_start_matches("b8.").trim_end_matches(".weight");
            (layer.to_string(), s.numel())
        })
        .collect();
    let sum_kind = |k: ParamKind| -> usize {
        specs
            .iter()
            .filter(|s| s.kind == k)
            .map(|s| s.numel())
            .sum()
    };
    let style_scales = block
        .convs()
        .iter()
        .map(|l| l.in_ch)
        .chain(std::iter::once(block.to_rgb().in_ch))
        .sum();
    let (enumerated_formula, closed_form, closed_form_prediction) = match variant {
        BlockVariant::SkipConnection => ("18c²", Some("18c²"), Some((18 * c * c) as f64)),
        BlockVariant::SqueezeNoFbp => ("9c² + 18c²/r", None, None),
        _ => (
            "11c² + 18c²/r",
            Some("(10+18/r)c²"),
            Some(closed_form_squeeze_kernels(c, r)),
        ),
    };
    Ok(BlockParamEntry {
        variant,
        c,
        r,
        kernel_total: kernels.iter().map(|(_, n)| n).sum(),
        kernels,
        enumerated_formula,
        rgb_kernel: sum_kind(ParamKind::RgbKernel),
        biases: sum_kind(ParamKind::ConvBias) + sum_kind(ParamKind::RgbBias),
        style_scales,
        closed_form,
        closed_form_prediction,
    })
}

/// Per-block row of a [`ParamReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCount {
    pub resolution: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub conv_kernels: usize,
    pub rgb_kernel: usize,
    pub total: usize,
}

/// Whole-generator parameter totals.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub variant: BlockVariant,
    pub resolution: usize,
    pub squeeze_ratio: usize,
    pub total: usize,
    pub by_kind: BTreeMap<&'static str, usize>,
    /// Conv kernels other than toRGB, all blocks including 4x4.
    pub kernel_subtotal: usize,
    pub blocks: Vec<BlockCount>,
}

fn kind_key(k: ParamKind) -> &'static str {
    match k {
        ParamKind::ConvKernel => "conv_kernels",
        ParamKind::RgbKernel => "rgb_kernels",
        ParamKind::ConvBias => "conv_biases",
        ParamKind::RgbBias => "rgb_biases",
        ParamKind::AffineWeight | ParamKind::AffineBias => "style_affine",
        ParamKind::MappingWeight | ParamKind::MappingBias => "mapping",
        ParamKind::ConstInput => "const_input",
        ParamKind::DenseWeight | ParamKind::DenseBias => "dense",
    }
}

/// Totals across the mapping network, style affines, constant input,
/// convolutions and toRGB layers of the generator `config` describes.
pub fn count_generator_params(config: &GeneratorConfig) -> Result<ParamReport> {
    let g = Generator::new(config.clone())?;
    let layout = g.layout();
    let mut by_kind = BTreeMap::new();
    for s in layout.specs() {
        *by_kind.entry(kind_key(s.kind)).or_insert(0) += s.numel();
    }
    let mut blocks = Vec::new();
    let mut in_ch = config.channels(4);
    for res in config.resolutions() {
        let out_ch = config.channels(res);
        let in_block = layout.specs().iter().filter(|s| s.block == Some(res));
        let (mut conv_kernels, mut rgb_kernel, mut total) = (0, 0, 0);
        for s in in_block {
            total += s.numel();
            match s.kind {
                ParamKind::ConvKernel => conv_kernels += s.numel(),
                ParamKind::RgbKernel => rgb_kernel += s.numel(),
                _ => {}
            }
        }
        blocks.push(BlockCount {
            resolution: res,
            in_ch,
            out_ch,
            conv_kernels,
            rgb_kernel,
            total,
        });
        in_ch = out_ch;
    }
    Ok(ParamReport {
        variant: config.variant,
        resolution: config.resolution,
        squeeze_ratio: config.squeeze_ratio,
        total: layout.total(),
        kernel_subtotal: by_kind.get("conv_kernels").copied().unwrap_or(0),
        by_kind,
        blocks,
    })
}

impl ParamReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let ratio = if self.variant.is_squeeze() {
            format!(", r={}", self.squeeze_ratio)
        } else {
            String::new()
        };
        let _ = writeln!(
            s,
            "generator {} at {}x{}{ratio}",
            self.variant, self.resolution, self.resolution
        );
        let _ = writeln!(
            s,
            "  total parameters: {} ({:.2}M)",
            self.total,
            self.total as f64 / 1e6
        );
        for (k, v) in &self.by_kind {
            let _ = writeln!(s, "  {k}: {v}");
        }
        let _ = writeln!(s, "  conv kernel subtotal: {}", self.kernel_subtotal);
        let _ = writeln!(
            s,
            "  per block (resolution, in -> out, conv kernels, toRGB kernel, all params):"
        );
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "    {:>4}: {:>4} -> {:<4} {:>10} {:>6} {:>10}",
                b.resolution, b.in_ch, b.out_ch, b.conv_kernels, b.rgb_kernel, b.total
            );
        }
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant);
        let _ = writeln!(s, "resolution={}", self.resolution);
        let _ = writeln!(s, "squeeze_ratio={}", self.squeeze_ratio);
        let _ = writeln!(s, "total={}", self.total);
        for (k, v) in &self.by_kind {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "kernel_subtotal={}", self.kernel_subtotal);
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "block.{}={},{},{},{},{}",
                b.resolution, b.in_ch, b.out_ch, b.conv_kernels, b.rgb_kernel, b.total
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_block_is_18c2() {
        let e = count_block_params(BlockVariant::SkipConnection, 512, 8).unwrap();
        assert_eq!(e.kernel_total, 4_718_592);
        assert_eq!(e.deviation(), Some(0.0));
        assert!(e.to_text().contains("18c² = 4718592"));
    }

    #[test]
    fn squeeze_block_hand_enumeration() {
        // up_conv 9*64, squeeze and excite 9*64/4 each, blend 2*64
        let e = count_block_params(BlockVariant::Squeeze, 8, 4).unwrap();
        assert_eq!(e.kernel_total, 992);
        let names: Vec<&str> = e.kernels.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["up_conv", "squeeze", "excite", "blend"]);
    }

    #[test]
    fn squeeze_block_reports_closed_form_gap() {
        let e = count_block_params(BlockVariant::Squeeze, 512, 8).unwrap();
        assert_eq!(e.kernel_total, 3_473_408);
        assert_eq!(e.closed_form_prediction, Some(3_211_264.0));
        assert_eq!(e.deviation_c2(), Some(1.0));
        assert!(e.to_text().contains("DISCREPANCY"));
    }

    #[test]
    fn no_fbp_drops_the_blend() {
        let e = count_block_params(BlockVariant::SqueezeNoFbp, 16, 4).unwrap();
        assert_eq!(e.kernel_total, 9 * 256 + 18 * 256 / 4);
        assert!(e.closed_form_prediction.is_none());
    }

    #[test]
    fn rgb_tap_changes_only_the_rgb_kernel() {
        let a = count_block_params(BlockVariant::Squeeze, 16, 4).unwrap();
        let b = count_block_params(BlockVariant::SqueezeRgbBeforeSqueeze, 16, 4).unwrap();
        assert_eq!(a.kernel_total, b.kernel_total);
        assert_eq!(a.rgb_kernel, 3 * 4);
        assert_eq!(b.rgb_kernel, 3 * 16);
    }

    #[test]
    fn closed_form_constants() {
        assert!((closed_form_reduction(8) - 0.319_444_444_444_444_4).abs() < 1e-15);
        assert_eq!(closed_form_break_even(), 2.25);
        assert!((enumerated_break_even() - 2.571_428_571_428_571).abs() < 1e-15);
    }

    #[test]
    fn generator_report_sums_to_layout_total() {
        let c = GeneratorConfig::toy(BlockVariant::Squeeze);
        let r = count_generator_params(&c).unwrap();
        assert_eq!(r.by_kind.values().sum::<usize>(), r.total);
        let mapping = 2 * (32 * 32 + 32);
        assert_eq!(r.by_kind["mapping"], mapping);
        let blocks: usize = r.blocks.iter().map(|b| b.total).sum();
        assert_eq!(blocks + mapping, r.total);
        assert_eq!(r.blocks.len(), 3);
    }
}
