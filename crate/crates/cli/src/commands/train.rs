//! `rcnkit train`: staged training with per-stage checkpoints and logs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rcnkit::config::KeyValues;
use rcnkit::forge::open_manifest;
use rcnkit::graph::{build_rcn, OutputScale};
use rcnkit::tensor::ParameterStore;
use rcnkit::train::{parse_crop, run_plan, AnnotatedImage, StageOutputs, TrainPlan, Variant};

use super::{at, check_compatible, load_network, NETWORK_FILE};
use crate::args::TrainArgs;
use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const KEYS: &[&str] = &[
    "plan",
    "variant",
    "corpus",
    "corpus_for",
    "split",
    "network",
    "init",
    "epochs",
    "lr",
    "images_per_epoch",
    "batch_size",
    "crop",
    "output_scale",
];

pub const PLAN_FILE: &str = "plan.cfg";
pub const MODEL_FILE: &str = "model.rcnk";

pub fn apply(a: &TrainArgs, s: &mut Settings) {
    s.flag("plan", a.plan.as_ref());
    s.flag("variant", a.variant.as_ref());
    s.flag("corpus", a.corpus.as_ref().map(|p| p.display()));
    if !a.corpus_for.is_empty() {
        s.flag("corpus_for", Some(a.corpus_for.join(",")));
    }
    s.flag("split", a.split.as_ref());
    s.flag("network", a.network.as_ref().map(|p| p.display()));
    s.flag("init", a.init.as_ref().map(|p| p.display()));
    s.flag("epochs", a.epochs);
    s.flag("lr", a.lr);
    s.flag("images_per_epoch", a.images_per_epoch);
    s.flag("batch_size", a.batch_size);
    s.flag("crop", a.crop.as_ref());
    s.flag("output_scale", a.output_scale.as_ref());
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = s.out()?;
    let seed = s.seed()?;
    let plan = resolve_plan(s)?;
    let mut spec = load_network(s.path("network").as_deref())?;
    if let Some(scale) = s.get::<OutputScale>("output_scale")? {
        spec.output_scale = scale;
    }
    let corpora = load_corpora(s, &plan)?;

    let (mut store, rcn) = build_rcn(&spec, seed)?;
    if let Some(init) = s.path("init") {
        let loaded = ParameterStore::load(&init).map_err(at(&init))?;
        check_compatible(&store, &loaded, &init)?;
        store = loaded;
        log::info!("initialized from {}", init.display());
    }

    fs::create_dir_all(&out)?;
    fs::write(out.join(NETWORK_FILE), spec.to_kv().render())?;
    fs::write(out.join(PLAN_FILE), plan.to_kv().render())?;
    let outputs: BTreeMap<String, StageOutputs> = plan
        .stages
        .iter()
        .map(|st| {
            let o = StageOutputs {
                checkpoint: Some(out.join(format!("{}.rcnk", st.name))),
                log_csv: Some(out.join(format!("{}.csv", st.name))),
            };
            (st.name.clone(), o)
        })
        .collect();

    let logs = match run_plan(&plan, &rcn, &mut store, &corpora, seed, &outputs) {
        Ok(logs) => logs,
        Err(rcnkit::Error::Diverged(msg)) => {
            // The offending update was not applied, so the store still
            // holds the last finite parameters.
            let keep = out.join("last-good.rcnk");
            store.save(&keep)?;
            return Err(CliError::runtime(format!(
                "training diverged: {msg}; last good parameters kept in {}",
                keep.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let model = out.join(MODEL_FILE);
    store.save(&model)?;
    for (stage, log) in plan.stages.iter().zip(&logs) {
        if let Some(last) = log.records.last() {
            println!("stage {} epochs {} final_loss {:.6}", stage.name, log.records.len(), last.mean_loss);
        }
    }
    println!("model {}", model.display());
    Ok(())
}

/// `--variant` names a preset; `--plan` is a preset name or a plan file.
fn resolve_plan(s: &Settings) -> CliResult<TrainPlan> {
    let mut plan = match (s.raw("plan"), s.get::<Variant>("variant")?) {
        (Some(_), Some(_)) => return Err(CliError::config("`plan` and `variant` are exclusive")),
        (None, Some(Variant::Custom)) => return Err(CliError::config("variant `custom` needs a plan file")),
        (None, Some(v)) => TrainPlan::preset(&v.to_string())?,
        (Some(p), None) if Path::new(p).is_file() => TrainPlan::from_kv(&KeyValues::load(p)?).map_err(at(p.as_ref()))?,
        (Some(p), None) => TrainPlan::preset(p)?,
        (None, None) => TrainPlan::preset("desk")?,
    };
    let epochs = s.get::<usize>("epochs")?;
    let lr = s.get::<f64>("lr")?;
    let ipe = s.get::<usize>("images_per_epoch")?;
    let batch = s.get::<usize>("batch_size")?;
    let crop = s.raw("crop").map(parse_crop).transpose()?;
    for stage in &mut plan.stages {
        stage.epochs = epochs.unwrap_or(stage.epochs);
        stage.lr = lr.unwrap_or(stage.lr);
        stage.images_per_epoch = ipe.unwrap_or(stage.images_per_epoch);
        stage.batch_size = batch.unwrap_or(stage.batch_size);
        if let Some(c) = crop {
            stage.augment.crop = c;
        }
    }
    plan.validate()?;
    Ok(plan)
}

/// Resolves every corpus id the plan uses to the images of one split.
fn load_corpora(s: &Settings, plan: &TrainPlan) -> CliResult<BTreeMap<String, Vec<AnnotatedImage>>> {
    let mut bound: BTreeMap<String, PathBuf> = BTreeMap::new();
    for item in s.list::<String>("corpus_for")?.unwrap_or_default() {
        let (id, path) =
            item.split_once('=').ok_or_else(|| CliError::config(format!("corpus binding `{item}` is not ID=MANIFEST")))?;
        if !plan.stages.iter().any(|st| st.corpus == id) {
            return Err(CliError::config(format!("plan has no corpus `{id}`")));
        }
        bound.insert(id.to_string(), PathBuf::from(path));
    }
    let default = s.path("corpus");
    let split: String = s.get_or("split", "train".to_string())?;
    let mut corpora = BTreeMap::new();
    for stage in &plan.stages {
        if corpora.contains_key(&stage.corpus) {
            continue;
        }
        let path = bound.get(&stage.corpus).or(default.as_ref()).ok_or_else(|| {
            CliError::config(format!(
                "stage `{}` needs corpus `{}`: pass --corpus or --corpus-for {}=MANIFEST",
                stage.name, stage.corpus, stage.corpus
            ))
        })?;
        let (manifest, base) = open_manifest(path).map_err(at(path))?;
        if !manifest.splits().contains(&split.as_str()) {
            return Err(CliError::config(format!("{}: no split `{split}`", path.display())));
        }
        let images = manifest.load_split(&base, Some(&split)).map_err(at(path))?;
        log::info!("corpus {}: {} images from {}", stage.corpus, images.len(), path.display());
        corpora.insert(stage.corpus.clone(), images);
    }
    Ok(corpora)
}
