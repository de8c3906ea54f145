use std::fmt;
use std::str::FromStr;

use crate::axial::DEFAULT_HEADS;
use crate::error::{Error, Result};
use crate::kv::{self, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ResNet,
    QuatResNet,
    Axial,
    QuatAxial,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::ResNet, Variant::QuatResNet, Variant::Axial, Variant::QuatAxial];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ResNet => "resnet",
            Variant::QuatResNet => "quat_resnet",
            Variant::Axial => "axial",
            Variant::QuatAxial => "quat_axial",
        }
    }

    pub fn is_axial(self) -> bool {
        matches!(self, Variant::Axial | Variant::QuatAxial)
    }

    pub fn is_quaternion(self) -> bool {
        matches!(self, Variant::QuatResNet | Variant::QuatAxial)
    }

    pub fn default_width_scale(self) -> f64 {
        if self.is_axial() {
            0.5
        } else {
            1.0
        }
    }

    /// Stem width and the four group mid widths before scaling.
    pub(crate) fn base_widths(self) -> (usize, [usize; 4]) {
        match self {
            Variant::ResNet => (64, [64, 128, 256, 512]),
            Variant::QuatResNet => (128, [128, 256, 512, 1024]),
            Variant::Axial | Variant::QuatAxial => (64, [128, 256, 512, 1024]),
        }
    }

    /// Output width of a bottleneck relative to its mid width.
    pub(crate) fn expansion(self) -> usize {
        if self.is_axial() {
            2
        } else {
            4
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown variant `{s}` (expected resnet, quat_resnet, axial, quat_axial)"
            ))
        })
    }
}

/// Block multipliers of the named depths.
pub fn multipliers_for_depth(depth: usize) -> Result<[usize; 4]> {
    match depth {
        26 => Ok([1, 2, 4, 1]),
        35 => Ok([2, 3, 4, 2]),
        50 => Ok([3, 4, 6, 3]),
        _ => Err(Error::config(format!(
            "unsupported depth {depth} (expected 26, 35 or 50)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub multipliers: [usize; 4],
    pub width_scale: f64,
    pub num_classes: usize,
    /// `(channels, height, width)`.
    pub input: [usize; 3],
    pub heads: usize,
    /// Relative positional terms in every axial layer.
    pub positional: bool,
}

const KEYS: [&str; 7] = [
    "variant",
    "multipliers",
    "width_scale",
    "num_classes",
    "input",
    "heads",
    "positional",
];

impl ArchitectureSpec {
    pub fn new(variant: Variant, multipliers: [usize; 4]) -> Self {
        ArchitectureSpec {
            variant,
            multipliers,
            width_scale: variant.default_width_scale(),
            num_classes: 1000,
            input: [3, 224, 224],
            heads: DEFAULT_HEADS,
            positional: true,
        }
    }

    pub fn for_depth(variant: Variant, depth: usize) -> Result<Self> {
        Ok(Self::new(variant, multipliers_for_depth(depth)?))
    }

    /// `base · s`, which must come out integral.
    pub fn scaled(&self, base: usize) -> Result<usize> {
        let c = base as f64 * self.width_scale;
        let r = c.round();
        if (c - r).abs() > 1e-9 || r < 1.0 {
            return Err(Error::config(format!(
                "width scale {} turns {base} channels into {c}",
                self.width_scale
            )));
        }
        Ok(r as usize)
    }

    pub fn stem_channels(&self) -> Result<usize> {
        self.scaled(self.variant.base_widths().0)
    }

    pub fn mid_channels(&self) -> Result<[usize; 4]> {
        let mids = self.variant.base_widths().1;
        Ok([
            self.scaled(mids[0])?,
            self.scaled(mids[1])?,
            self.scaled(mids[2])?,
            self.scaled(mids[3])?,
        ])
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipliers.contains(&0) {
            return Err(Error::config("block multipliers must all be at least 1"));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::config(format!(
                "width scale must be positive, got {}",
                self.width_scale
            )));
        }
        if self.num_classes == 0 || self.input.contains(&0) {
            return Err(Error::config("classes and input dimensions must be positive"));
        }
        let stem = self.stem_channels()?;
        let mids = self.mid_channels()?;
        if self.variant.is_quaternion() {
            if !matches!(self.input[0], 3 | 4) {
                return Err(Error::config(format!(
                    "{} takes 3 (RGB) or 4 input channels, got {}",
                    self.variant, self.input[0]
                )));
            }
            for c in std::iter::once(stem).chain(mids) {
                if c % 4 != 0 {
                    return Err(Error::config(format!(
                        "{}: channel count {c} not divisible by 4",
                        self.variant
                    )));
                }
            }
        }
        if self.variant.is_axial() {
            for m in mids {
                if self.heads == 0 || m % self.heads != 0 {
                    return Err(Error::config(format!(
                        "{m} attention channels not divisible by {} heads",
                        self.heads
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stem plus three per bottleneck plus the classifier; with
    /// `include_quaternion`, one more per quaternion bank.
    pub fn count_layers(&self, include_quaternion: bool) -> usize {
        let blocks: usize = self.multipliers.iter().sum();
        let banks = if include_quaternion && self.variant == Variant::QuatAxial {
            blocks
        } else {
            0
        };
        1 + 3 * blocks + 1 + banks
    }

    pub fn to_kv(&self) -> String {
        kv::render(&[
            ("variant", self.variant.to_string()),
            ("multipliers", kv::join(&self.multipliers)),
            ("width_scale", self.width_scale.to_string()),
            ("num_classes", self.num_classes.to_string()),
            (
                "input",
                format!("{}x{}x{}", self.input[0], self.input[1], self.input[2]),
            ),
            ("heads", self.heads.to_string()),
            ("positional", self.positional.to_string()),
        ])
    }

    /// Missing keys take their defaults; `variant` and `multipliers` are
    /// required.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&KEYS)?;
        let variant: Variant = kv
            .raw("variant")
            .ok_or_else(|| Error::format(kv.origin(), "missing key `variant`"))?
            .parse()?;
        let mult: Vec<usize> = kv
            .get_list("multipliers")?
            .ok_or_else(|| Error::format(kv.origin(), "missing key `multipliers`"))?;
        let multipliers: [usize; 4] = mult
            .try_into()
            .map_err(|_| Error::format(kv.origin(), "`multipliers` needs exactly 4 values"))?;
        let mut spec = ArchitectureSpec::new(variant, multipliers);
        if let Some(s) = kv.get("width_scale")? {
            spec.width_scale = s;
        }
        if let Some(n) = kv.get("num_classes")? {
            spec.num_classes = n;
        }
        if let Some(raw) = kv.raw("input") {
            let dims: Vec<usize> = raw
                .split('x')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(kv.origin(), format!("key `input`: {e}")))?;
            spec.input = dims
                .try_into()
                .map_err(|_| Error::format(kv.origin(), "`input` must look like CxHxW"))?;
        }
        if let Some(h) = kv.get("heads")? {
            spec.heads = h;
        }
        if let Some(p) = kv.get("positional")? {
            spec.positional = p;
        }
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text, "architecture spec")?)
    }
}
