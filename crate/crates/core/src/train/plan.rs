use std::fmt;
use std::str::FromStr;

use super::augment::AugmentConfig;
use super::loss::LossConfig;
use crate::config::KeyValues;
use crate::error::{Error, Result};

/// Which annotator labels become training samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnotatorMode {
    /// One sample per (image, annotator) pair.
    All,
    /// Only the given annotator (index into each image's label list).
    Single(u32),
}

impl FromStr for AnnotatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "all" => Ok(AnnotatorMode::All),
            Some(("single", id)) => id.parse().map(AnnotatorMode::Single).map_err(|e| format!("annotator id: {e}")),
            _ => Err(format!("annotator mode `{s}` is neither `all` nor `single:<id>`")),
        }
    }
}

impl fmt::Display for AnnotatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnnotatorMode::All => f.write_str("all"),
            AnnotatorMode::Single(id) => write!(f, "single:{id}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
    /// Cosine decay from the base rate to `base * floor` over the stage.
    Cosine { floor: f64 },
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.parse::<f64>().map_err(|e| format!("lr schedule `{s}`: {e}"));
        match parts.as_slice() {
            ["constant"] => Ok(LrSchedule::Constant),
            ["step", every, gamma] => Ok(LrSchedule::Step {
                every: every.parse().map_err(|e| format!("lr schedule `{s}`: {e}"))?,
                gamma: num(gamma)?,
            }),
            ["cosine", floor] => Ok(LrSchedule::Cosine { floor: num(floor)? }),
            _ => Err(format!("unknown lr schedule `{s}` (constant | step:<every>:<gamma> | cosine:<floor>)")),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => f.write_str("constant"),
            LrSchedule::Step { every, gamma } => write!(f, "step:{every}:{gamma}"),
            LrSchedule::Cosine { floor } => write!(f, "cosine:{floor}"),
        }
    }
}

/// One training stage: a corpus and how long and how hard to train on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    /// Corpus identifier, resolved by the caller.
    pub corpus: String,
    pub epochs: usize,
    pub images_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub annotators: AnnotatorMode,
    pub augment: AugmentConfig,
}

impl Stage {
    pub fn new(name: &str, corpus: &str) -> Self {
        Stage {
            name: name.to_string(),
            corpus: corpus.to_string(),
            epochs: 40,
            images_per_epoch: 64,
            batch_size: 4,
            lr: 0.02,
            schedule: LrSchedule::Cosine { floor: 0.05 },
            momentum: 0.9,
            weight_decay: 1e-4,
            clip_norm: Some(10.0),
            annotators: AnnotatorMode::All,
            augment: AugmentConfig::default(),
        }
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Step { every, gamma } => self.lr * gamma.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine { floor } => {
                let t = if self.epochs > 1 { epoch as f64 / (self.epochs - 1) as f64 } else { 0.0 };
                let c = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
                self.lr * (floor + (1.0 - floor) * c)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("stage `{}`: {m}", self.name)));
        if self.images_per_epoch == 0 {
            return fail("images_per_epoch must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be finite and non-negative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be non-negative".into());
        }
        if let LrSchedule::Step { every: 0, .. } = self.schedule {
            return fail("step schedule needs a positive period".into());
        }
        if matches!(self.clip_norm, Some(c) if c <= 0.0) {
            return fail("clip_norm must be positive".into());
        }
        self.augment.validate()
    }
}

/// Named training recipes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Trained on the refined object-contour corpus.
    RcnVoc,
    /// Trained on mask-derived, enriched contours.
    RcnCoco,
    /// Pre-trained like `RcnCoco`, then trained like `RcnVoc`.
    Rcn,
    /// `RcnVoc` restricted to one annotator.
    RcnVoc1,
    Custom,
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rcn-voc" => Ok(Variant::RcnVoc),
            "rcn-coco" => Ok(Variant::RcnCoco),
            "rcn" => Ok(Variant::Rcn),
            "rcn-voc-1" => Ok(Variant::RcnVoc1),
            "custom" => Ok(Variant::Custom),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::RcnVoc => "rcn-voc",
            Variant::RcnCoco => "rcn-coco",
            Variant::Rcn => "rcn",
            Variant::RcnVoc1 => "rcn-voc-1",
            Variant::Custom => "custom",
        })
    }
}

/// Ordered training stages sharing one loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub variant: Variant,
    pub loss: LossConfig,
    pub stages: Vec<Stage>,
}

pub const PRESETS: &[&str] = &["overfit1", "desk", "rcn-voc", "rcn-coco", "rcn", "rcn-voc-1"];

impl TrainPlan {
    /// Built-in plans. Corpus ids: `train` for the single-corpus presets,
    /// `voc` (refined contours, possibly several annotators) and `coco`
    /// (mask-derived, enriched contours) for the variants.
    pub fn preset(name: &str) -> Result<Self> {
        let plan = |variant, stages| TrainPlan { variant, loss: LossConfig::default(), stages };
        Ok(match name {
            "overfit1" => {
                let mut s = Stage::new("overfit", "train");
                s.epochs = 200;
                s.images_per_epoch = 4;
                s.batch_size = 1;
                s.lr = 0.01;
                s.schedule = LrSchedule::Constant;
                s.weight_decay = 0.0;
                s.augment = AugmentConfig::identity();
                plan(Variant::Custom, vec![s])
            }
            "desk" => plan(Variant::Custom, vec![Stage::new("main", "train")]),
            "rcn-voc" => plan(Variant::RcnVoc, vec![Stage::new("voc", "voc")]),
            "rcn-coco" => plan(Variant::RcnCoco, vec![Stage::new("coco", "coco")]),
            "rcn" => {
                let pre = Stage::new("pretrain", "coco");
                let mut main = Stage::new("main", "voc");
                main.lr = pre.lr / 2.0;
                plan(Variant::Rcn, vec![pre, main])
            }
            "rcn-voc-1" => {
                let mut s = Stage::new("voc", "voc");
                s.annotators = AnnotatorMode::Single(0);
                plan(Variant::RcnVoc1, vec![s])
            }
            other => return Err(Error::Config(format!("unknown plan preset `{other}` (one of {})", PRESETS.join(", ")))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.stages.is_empty() {
            return Err(Error::Config("plan has no stages".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if self.stages[..i].iter().any(|t| t.name == s.name) {
                return Err(Error::Config(format!("duplicate stage name `{}`", s.name)));
            }
            s.validate()?;
        }
        Ok(())
    }

    /// Parses a plan file. `preset = <name>` supplies defaults that the
    /// remaining keys override; without it stages start from [`Stage::new`].
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut plan = match kv.get("preset") {
            Some(p) => Self::preset(p)?,
            None => TrainPlan { variant: Variant::Custom, loss: LossConfig::default(), stages: Vec::new() },
        };
        if let Some(v) = kv.value("variant")? {
            plan.variant = v;
        }
        plan.loss.beta = kv.value_or("loss.beta", plan.loss.beta)?;
        plan.loss.eps = kv.value_or("loss.eps", plan.loss.eps)?;
        if let Some(names) = kv.list::<String>("stages")? {
            plan.stages = names
                .iter()
                .map(|n| {
                    plan.stages.iter().find(|s| &s.name == n).cloned().unwrap_or_else(|| Stage::new(n, "train"))
                })
                .collect();
        }
        let mut known: Vec<String> = ["preset", "variant", "loss.beta", "loss.eps", "stages"].map(String::from).to_vec();
        for stage in &mut plan.stages {
            let p = format!("stage.{}.", stage.name);
            let key = |k: &str| format!("{p}{k}");
            known.extend(STAGE_KEYS.iter().map(|k| key(k)));
            stage.corpus = kv.value_or(&key("corpus"), stage.corpus.clone())?;
            stage.epochs = kv.value_or(&key("epochs"), stage.epochs)?;
            stage.images_per_epoch = kv.value_or(&key("images_per_epoch"), stage.images_per_epoch)?;
            stage.batch_size = kv.value_or(&key("batch_size"), stage.batch_size)?;
            stage.lr = kv.value_or(&key("lr"), stage.lr)?;
            stage.schedule = kv.value_or(&key("lr_schedule"), stage.schedule)?;
            stage.momentum = kv.value_or(&key("momentum"), stage.momentum)?;
            stage.weight_decay = kv.value_or(&key("weight_decay"), stage.weight_decay)?;
            if let Some(c) = kv.value::<f64>(&key("clip_norm"))? {
                stage.clip_norm = (c > 0.0).then_some(c);
            }
            stage.annotators = kv.value_or(&key("annotators"), stage.annotators)?;
            if let Some(c) = kv.get(&key("crop")) {
                stage.augment.crop = parse_crop(c)?;
            }
            stage.augment.vflip_prob = kv.value_or(&key("vflip"), stage.augment.vflip_prob)?;
            stage.augment.hflip_prob = kv.value_or(&key("hflip"), stage.augment.hflip_prob)?;
            if let Some(v) = kv.list::<f64>(&key("scale"))? {
                match v.as_slice() {
                    [lo, hi] => stage.augment.scale_range = (*lo, *hi),
                    _ => return Err(Error::Config(format!("`{}` needs two values", key("scale")))),
                }
            }
        }
        let known: Vec<&str> = known.iter().map(String::as_str).collect();
        kv.check_known(&known)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("variant", self.variant);
        kv.set("loss.beta", self.loss.beta);
        kv.set("loss.eps", self.loss.eps);
        kv.set("stages", self.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(","));
        for s in &self.stages {
            let key = |k: &str| format!("stage.{}.{k}", s.name);
            kv.set(key("corpus"), &s.corpus);
            kv.set(key("epochs"), s.epochs);
            kv.set(key("images_per_epoch"), s.images_per_epoch);
            kv.set(key("batch_size"), s.batch_size);
            kv.set(key("lr"), s.lr);
            kv.set(key("lr_schedule"), s.schedule);
            kv.set(key("momentum"), s.momentum);
            kv.set(key("weight_decay"), s.weight_decay);
            kv.set(key("clip_norm"), s.clip_norm.unwrap_or(0.0));
            kv.set(key("annotators"), s.annotators);
            kv.set(key("crop"), s.augment.crop.map_or("full".to_string(), |(h, w)| format!("{h}x{w}")));
            kv.set(key("vflip"), s.augment.vflip_prob);
            kv.set(key("hflip"), s.augment.hflip_prob);
            kv.set(key("scale"), format!("{},{}", s.augment.scale_range.0, s.augment.scale_range.1));
        }
        kv
    }
}

const STAGE_KEYS: &[&str] = &[
    "corpus",
    "epochs",
    "images_per_epoch",
    "batch_size",
    "lr",
    "lr_schedule",
    "momentum",
    "weight_decay",
    "clip_norm",
    "annotators",
    "crop",
    "vflip",
    "hflip",
    "scale",
];

/// `HxW` or `full`.
pub fn parse_crop(s: &str) -> Result<Option<(usize, usize)>> {
    if s == "full" {
        return Ok(None);
    }
    parse_extent(s).map(Some)
}

/// `HxW`, e.g. `64x96`.
pub fn parse_extent(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("extent `{s}` is not of the form HxW"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}
