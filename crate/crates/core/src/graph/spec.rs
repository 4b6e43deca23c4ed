use std::fmt;
use std::str::FromStr;

use crate::config::{join, KeyValues};
use crate::error::{Error, Result};

/// Residual unit flavour used by the backbone stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// Two 3×3 convolutions (ResNet-18/34 style).
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand with a 4× expansion (ResNet-50/101 style).
    Bottleneck,
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "basic" => Ok(BlockKind::Basic),
            "bottleneck" => Ok(BlockKind::Bottleneck),
            other => Err(format!("unknown block kind `{other}`")),
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::Basic => "basic",
            BlockKind::Bottleneck => "bottleneck",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputScale {
    Half,
    Full,
}

impl FromStr for OutputScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "half" => Ok(OutputScale::Half),
            "full" => Ok(OutputScale::Full),
            other => Err(format!("unknown output scale `{other}`")),
        }
    }
}

impl fmt::Display for OutputScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputScale::Half => "half",
            OutputScale::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StemSpec {
    pub kernel: usize,
    pub stride: usize,
    /// 3×3 stride-2 max-pool after the stem convolution.
    pub pool: bool,
    pub channels: usize,
}

impl StemSpec {
    pub fn reduction(&self) -> usize {
        self.stride * if self.pool { 2 } else { 1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub blocks: usize,
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub stem: StemSpec,
    pub block: BlockKind,
    /// Shallowest first.
    pub stages: [StageSpec; 4],
}

/// One refinement level; index 0 pairs with the shallowest backbone stage.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineLevelSpec {
    pub rcu_count_in: usize,
    pub fused_channels: usize,
    pub crp_pool_blocks: usize,
    pub rcu_count_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinePathSpec {
    pub levels: [RefineLevelSpec; 4],
}

/// Declarative description of the whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub backbone: BackboneSpec,
    pub path: RefinePathSpec,
    pub extra_image_path_rcus: usize,
    /// Width of the original-image path and of the last fusion.
    pub image_path_channels: usize,
    pub output_scale: OutputScale,
    pub input_mean: [f32; 3],
    pub input_std: [f32; 3],
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::desk(&[16, 32, 64, 128], 32)
    }
}

impl NetworkSpec {
    /// ResNet-18 style 2-2-2-2 backbone with the given stage widths and one
    /// fused width on every refinement level.
    pub fn desk(widths: &[usize; 4], fused: usize) -> Self {
        let stage = |i: usize| StageSpec { blocks: 2, channels: widths[i], stride: 2 };
        let level = || RefineLevelSpec { rcu_count_in: 2, fused_channels: fused, crp_pool_blocks: 2, rcu_count_out: 1 };
        NetworkSpec {
            backbone: BackboneSpec {
                stem: StemSpec { kernel: 3, stride: 2, pool: false, channels: widths[0] },
                block: BlockKind::Basic,
                stages: [stage(0), stage(1), stage(2), stage(3)],
            },
            path: RefinePathSpec { levels: [level(), level(), level(), level()] },
            extra_image_path_rcus: 3,
            image_path_channels: 16,
            output_scale: OutputScale::Half,
            input_mean: [0.5; 3],
            input_std: [0.25; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bb = &self.backbone;
        if bb.stem.kernel == 0 || bb.stem.stride == 0 || bb.stem.channels == 0 {
            return Err(Error::Spec("stem kernel, stride and channels must be positive".into()));
        }
        let mut reduction = bb.stem.reduction();
        let mut prev = bb.stem.channels;
        for (i, st) in bb.stages.iter().enumerate() {
            let lvl = i + 1;
            if st.blocks == 0 || st.channels == 0 || st.stride == 0 {
                return Err(Error::Spec(format!("stage {lvl}: blocks, channels and stride must be positive")));
            }
            if st.channels < prev {
                return Err(Error::Spec(format!(
                    "stage {lvl}: channels {} below previous width {prev}",
                    st.channels
                )));
            }
            if bb.block == BlockKind::Bottleneck && st.channels % 4 != 0 {
                return Err(Error::Spec(format!("stage {lvl}: bottleneck width {} not divisible by 4", st.channels)));
            }
            reduction *= st.stride;
            let want = 4 << i;
            if reduction != want {
                return Err(Error::Spec(format!("stage {lvl} emits 1/{reduction} resolution, expected 1/{want}")));
            }
            prev = st.channels;
        }
        for (i, lv) in self.path.levels.iter().enumerate() {
            if lv.fused_channels == 0 {
                return Err(Error::Spec(format!("refinement level {}: fused width undeclared (0)", i + 1)));
            }
            if lv.crp_pool_blocks == 0 {
                return Err(Error::Spec(format!("refinement level {}: CRP needs at least one pooling block", i + 1)));
            }
        }
        if self.image_path_channels == 0 {
            return Err(Error::Spec("image path width must be positive".into()));
        }
        if self.input_std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Spec("input std must be positive".into()));
        }
        Ok(())
    }

    /// Output resolution factor relative to the input.
    pub fn output_divisor(&self) -> usize {
        match self.output_scale {
            OutputScale::Half => 2,
            OutputScale::Full => 1,
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(KEYS)?;
        let d = NetworkSpec::default();
        let four = |key: &str, fallback: [usize; 4]| -> Result<[usize; 4]> {
            match kv.list::<usize>(key)? {
                None => Ok(fallback),
                Some(v) => v.try_into().map_err(|v: Vec<usize>| {
                    Error::Config(format!("`{key}` needs 4 values (shallowest first), got {}", v.len()))
                }),
            }
        };
        let three = |key: &str, fallback: [f32; 3]| -> Result<[f32; 3]> {
            match kv.list::<f32>(key)? {
                None => Ok(fallback),
                Some(v) => v
                    .try_into()
                    .map_err(|v: Vec<f32>| Error::Config(format!("`{key}` needs 3 values, got {}", v.len()))),
            }
        };
        let stages_d = &d.backbone.stages;
        let blocks = four("backbone.blocks", stages_d.clone().map(|s| s.blocks))?;
        let widths = four("backbone.widths", stages_d.clone().map(|s| s.channels))?;
        let strides = four("backbone.strides", stages_d.clone().map(|s| s.stride))?;
        let lv = &d.path.levels;
        let rcu_in = four("refine.rcu_in", lv.clone().map(|l| l.rcu_count_in))?;
        let fused = four("refine.fused", lv.clone().map(|l| l.fused_channels))?;
        let crp = four("refine.crp_blocks", lv.clone().map(|l| l.crp_pool_blocks))?;
        let rcu_out = four("refine.rcu_out", lv.clone().map(|l| l.rcu_count_out))?;
        let spec = NetworkSpec {
            backbone: BackboneSpec {
                stem: StemSpec {
                    kernel: kv.value_or("stem.kernel", d.backbone.stem.kernel)?,
                    stride: kv.value_or("stem.stride", d.backbone.stem.stride)?,
                    pool: kv.value_or("stem.pool", d.backbone.stem.pool)?,
                    channels: kv.value_or("stem.channels", widths[0])?,
                },
                block: kv.value_or("backbone.block", d.backbone.block)?,
                stages: std::array::from_fn(|i| StageSpec { blocks: blocks[i], channels: widths[i], stride: strides[i] }),
            },
            path: RefinePathSpec {
                levels: std::array::from_fn(|i| RefineLevelSpec {
                    rcu_count_in: rcu_in[i],
                    fused_channels: fused[i],
                    crp_pool_blocks: crp[i],
                    rcu_count_out: rcu_out[i],
                }),
            },
            extra_image_path_rcus: kv.value_or("image_path.rcus", d.extra_image_path_rcus)?,
            image_path_channels: kv.value_or("image_path.channels", d.image_path_channels)?,
            output_scale: kv.value_or("output_scale", d.output_scale)?,
            input_mean: three("input.mean", d.input_mean)?,
            input_std: three("input.std", d.input_std)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let bb = &self.backbone;
        kv.set("stem.kernel", bb.stem.kernel);
        kv.set("stem.stride", bb.stem.stride);
        kv.set("stem.pool", bb.stem.pool);
        kv.set("stem.channels", bb.stem.channels);
        kv.set("backbone.block", bb.block);
        kv.set("backbone.blocks", join(&bb.stages.clone().map(|s| s.blocks)));
        kv.set("backbone.widths", join(&bb.stages.clone().map(|s| s.channels)));
        kv.set("backbone.strides", join(&bb.stages.clone().map(|s| s.stride)));
        let lv = &self.path.levels;
        kv.set("refine.rcu_in", join(&lv.clone().map(|l| l.rcu_count_in)));
        kv.set("refine.fused", join(&lv.clone().map(|l| l.fused_channels)));
        kv.set("refine.crp_blocks", join(&lv.clone().map(|l| l.crp_pool_blocks)));
        kv.set("refine.rcu_out", join(&lv.clone().map(|l| l.rcu_count_out)));
        kv.set("image_path.rcus", self.extra_image_path_rcus);
        kv.set("image_path.channels", self.image_path_channels);
        kv.set("output_scale", self.output_scale);
        kv.set("input.mean", join(&self.input_mean));
        kv.set("input.std", join(&self.input_std));
        kv
    }
}

const KEYS: &[&str] = &[
    "stem.kernel",
    "stem.stride",
    "stem.pool",
    "stem.channels",
    "backbone.block",
    "backbone.blocks",
    "backbone.widths",
    "backbone.strides",
    "refine.rcu_in",
    "refine.fused",
    "refine.crp_blocks",
    "refine.rcu_out",
    "image_path.rcus",
    "image_path.channels",
    "output_scale",
    "input.mean",
    "input.std",
];
