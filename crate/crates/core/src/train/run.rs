use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, Sample};
use super::loss::{weighted_logistic_loss, LossConfig};
use super::plan::{AnnotatorMode, Stage, TrainPlan};
use crate::error::{Error, Result};
use crate::graph::Rcn;
use crate::maps::{LabelMap, Provenance};
use crate::tensor::{ParameterStore, Tape, Tensor};

/// An image with every annotator's label.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub image: Tensor,
    pub labels: Vec<LabelMap>,
}

/// Turns annotated images into training samples.
pub fn expand_annotators(images: &[AnnotatedImage], mode: AnnotatorMode) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        if img.labels.is_empty() {
            return Err(Error::invalid("expand_annotators", format!("image {i} has no labels")));
        }
        match mode {
            AnnotatorMode::All => {
                for (a, label) in img.labels.iter().enumerate() {
                    let label = label.clone().with_provenance(Provenance::Annotator(a as u32));
                    out.push(Sample::new(img.image.clone(), label, Some(a as u32))?);
                }
            }
            AnnotatorMode::Single(a) => {
                let label = img.labels.get(a as usize).ok_or_else(|| {
                    Error::invalid(
                        "expand_annotators",
                        format!("image {i} has {} annotators, annotator {a} requested", img.labels.len()),
                    )
                })?;
                let label = label.clone().with_provenance(Provenance::Annotator(a));
                out.push(Sample::new(img.image.clone(), label, Some(a))?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    /// Seconds since the stage started.
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,mean_loss,lr,wall_time";

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.records {
            s.push_str(&format!("{},{},{},{:.3}\n", r.epoch, r.mean_loss, r.lr, r.wall_time));
        }
        s
    }
}

/// Where a stage writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct StageOutputs {
    /// Rewritten after every completed epoch, so it always holds the last
    /// good parameters.
    pub checkpoint: Option<PathBuf>,
    /// CSV log, rewritten after every epoch.
    pub log_csv: Option<PathBuf>,
}

fn write_atomic(path: &Path, write: impl FnOnce(&mut std::fs::File) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        write(&mut f)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Trains `store` on `corpus` for one stage.
///
/// Each epoch draws `images_per_epoch` samples uniformly with replacement,
/// augments them, and takes one momentum-SGD step per `batch_size` samples
/// on the mean batch gradient. Every random choice comes from a generator
/// seeded with `seed`, so a repeated run reproduces the loss trajectory
/// exactly. A non-finite loss or gradient aborts before the offending
/// update is applied.
pub fn run_stage(
    stage: &Stage,
    loss_cfg: &LossConfig,
    rcn: &Rcn,
    store: &mut ParameterStore,
    corpus: &[Sample],
    seed: u64,
    outputs: &StageOutputs,
) -> Result<TrainLog> {
    stage.validate()?;
    loss_cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("run_stage", format!("stage `{}` has an empty corpus", stage.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = TrainLog::default();
    let start = Instant::now();
    store.zero_grads();
    for epoch in 0..stage.epochs {
        let lr = stage.lr_at(epoch);
        let mut total = 0.0;
        let mut done = 0;
        while done < stage.images_per_epoch {
            let batch = stage.batch_size.min(stage.images_per_epoch - done);
            for _ in 0..batch {
                let sample = &corpus[rng.gen_range(0..corpus.len())];
                let sample = augment(sample, &stage.augment, &mut rng);
                let mut tape = Tape::new();
                let fwd = rcn.forward(&mut tape, store, &sample.image)?;
                let loss = weighted_logistic_loss(&mut tape, fwd.prob_input, &sample.label, loss_cfg)?;
                let value = tape.value(loss).item() as f64;
                if !value.is_finite() {
                    store.zero_grads();
                    return Err(Error::Diverged(format!(
                        "stage `{}` epoch {} sample {}: loss {value}",
                        stage.name,
                        epoch + 1,
                        done + 1
                    )));
                }
                tape.backward(loss)?;
                store.accumulate_grads(&tape)?;
                total += value;
                done += 1;
            }
            store.scale_grads(1.0 / batch as f32);
            let norm = store.grad_norm();
            if !norm.is_finite() {
                store.zero_grads();
                return Err(Error::Diverged(format!(
                    "stage `{}` epoch {}: gradient norm {norm}",
                    stage.name,
                    epoch + 1
                )));
            }
            if let Some(clip) = stage.clip_norm {
                if norm > clip {
                    store.scale_grads((clip / norm) as f32);
                }
            }
            store.sgd_step(lr as f32, stage.momentum as f32, stage.weight_decay as f32)?;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: total / stage.images_per_epoch as f64,
            lr,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "stage {} epoch {}/{}: loss {:.5} lr {:.5}",
            stage.name,
            record.epoch,
            stage.epochs,
            record.mean_loss,
            lr
        );
        log.records.push(record);
        if let Some(path) = &outputs.checkpoint {
            write_atomic(path, |f| store.write_checkpoint(std::io::BufWriter::new(f)))?;
        }
        if let Some(path) = &outputs.log_csv {
            let csv = log.to_csv();
            write_atomic(path, |f| Ok(f.write_all(csv.as_bytes())?))?;
        }
    }
    Ok(log)
}

/// Runs every stage of `plan` in order. Stage `i` is seeded from `seed`
/// and `i`; momentum is reset between stages. `outputs` maps a stage name
/// to its artifacts.
pub fn run_plan(
    plan: &TrainPlan,
    rcn: &Rcn,
    store: &mut ParameterStore,
    corpora: &BTreeMap<String, Vec<AnnotatedImage>>,
    seed: u64,
    outputs: &BTreeMap<String, StageOutputs>,
) -> Result<Vec<TrainLog>> {
    plan.validate()?;
    let mut logs = Vec::with_capacity(plan.stages.len());
    for (i, stage) in plan.stages.iter().enumerate() {
        let images = corpora
            .get(&stage.corpus)
            .ok_or_else(|| Error::Config(format!("stage `{}`: corpus `{}` not provided", stage.name, stage.corpus)))?;
        let samples = expand_annotators(images, stage.annotators)?;
        store.reset_optimizer();
        let stage_seed = seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let out = outputs.get(&stage.name).cloned().unwrap_or_default();
        logs.push(run_stage(stage, &plan.loss, rcn, store, &samples, stage_seed, &out)?);
    }
    Ok(logs)
}
