use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::artifacts::{read_json, read_probs, write_json, write_probs, RunDir};
use super::config::RunConfig;
use crate::dataset::{
    self, class_weights, read_manifest, stratified_split, write_manifest, ClassWeights, ManifestEntry, SplitName, Task,
};
use crate::ensemble::{
    cross_val_search, fit_and_evaluate, select_base_learners, stack_features, BaseLearner, MetaLearnerSpec, MetaModel,
    StackData, StackMode, StackedFeatures,
};
use crate::error::{Error, Result};
use crate::imaging::{preprocess_image, to_tensor, GrayImage};
use crate::metrics::{read_reports_csv, write_reports_csv, EvalReport};
use crate::nn::{train, LossSpec, Model, TrainData};
use crate::rng;

pub const STAGES: [&str; 7] = ["synth", "prep", "train-base", "extract", "tune-meta", "stack", "report"];

/// Context shared by every stage.
pub struct Ctx {
    pub cfg: RunConfig,
    pub run: RunDir,
}

impl Ctx {
    fn task(&self) -> Task {
        self.cfg.task
    }

    fn n_classes(&self) -> usize {
        self.cfg.task.n_classes()
    }
}

fn rel(parts: &[&str]) -> String {
    parts.join("/")
}

fn probs_name(backbone: &str, split: &str) -> String {
    rel(&["probs", &format!("{backbone}_{split}.csv")])
}

pub fn run_stage(ctx: &Ctx, stage: &str) -> Result<()> {
    if ctx.run.completed(stage)? {
        log::info!("stage {stage}: outputs verified, skipping");
        return Ok(());
    }
    if let Some(prev) = STAGES.iter().position(|s| *s == stage).and_then(|i| i.checked_sub(1)) {
        if !(STAGES[prev] == "synth" && ctx.cfg.data_root.is_some()) {
            ctx.run.require(STAGES[prev])?;
        }
    }
    log::info!("stage {stage}: running");
    let outputs = match stage {
        "synth" => synth(ctx)?,
        "prep" => prep(ctx)?,
        "train-base" => train_base(ctx)?,
        "extract" => extract(ctx)?,
        "tune-meta" => tune_meta(ctx)?,
        "stack" => stack(ctx)?,
        "report" => report(ctx)?,
        other => return Err(Error::Config(format!("unknown stage {other:?}"))),
    };
    ctx.run.finish(stage, &outputs)
}

#[derive(Serialize, Deserialize)]
struct SynthRow {
    source_id: String,
    grade: usize,
}

fn synth(ctx: &Ctx) -> Result<Vec<String>> {
    if ctx.cfg.data_root.is_some() {
        log::info!("stage synth: data_root is set, nothing to generate");
        return Ok(Vec::new());
    }
    let s = &ctx.cfg.synth;
    let samples = dataset::synthesize(&s.counts, s.image_size, RunConfig::seed_of(ctx.cfg.seeds.synth))?;
    let root = ctx.run.ensure_dir("data")?;
    dataset::write_image_tree(&root, &samples)?;
    let manifest = root.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::data(format!("{}: {e}", manifest.display())))?;
    for smp in &samples {
        w.serialize(SynthRow {
            source_id: smp.source_id.clone(),
            grade: smp.grade,
        })?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    let mut out = vec!["data/manifest.csv".to_string()];
    out.extend(samples.iter().map(|s| rel(&["data", &s.source_id])));
    Ok(out)
}

fn prep(ctx: &Ctx) -> Result<Vec<String>> {
    let ingested = dataset::ingest(&ctx.cfg.data_root())?;
    let splits = stratified_split(&ingested.samples, ctx.cfg.split_ratios, RunConfig::seed_of(ctx.cfg.seeds.split))?;
    ctx.run.ensure_dir("prep")?;
    write_manifest(&ctx.run.path("splits.csv"), &splits.manifest())?;
    let mut out = vec!["splits.csv".to_string()];
    let aug_seed = RunConfig::seed_of(ctx.cfg.seeds.augment);
    for split in SplitName::ALL {
        let pipeline = ctx.cfg.preprocess.pipeline(split == SplitName::Train, aug_seed);
        for (i, smp) in splits.get(split).iter().enumerate() {
            let mut r = rng::stream(aug_seed, i as u64);
            let img = preprocess_image(&smp.image, &pipeline, &mut r)?;
            let name = rel(&["prep", split.as_str(), &png_name(&smp.source_id)]);
            let path = ctx.run.path(&name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            img.save_png(&path)?;
            out.push(name);
        }
    }
    Ok(out)
}

/// Preprocessed images are always PNG, whatever the source format.
fn png_name(source_id: &str) -> String {
    Path::new(source_id).with_extension("png").to_string_lossy().replace('\\', "/")
}

/// Preprocessed inputs of one split, with ids and task labels.
pub struct SplitData {
    pub ids: Vec<String>,
    pub data: TrainData,
}

pub fn load_split(run_root: &Path, split: SplitName, task: Task) -> Result<SplitData> {
    let manifest = run_root.join("splits.csv");
    if !manifest.exists() {
        return Err(Error::MissingArtifact {
            path: manifest,
            stage: "prep".into(),
        });
    }
    let entries: Vec<ManifestEntry> = read_manifest(&manifest)?.into_iter().filter(|e| e.split == split).collect();
    let mut ids = Vec::with_capacity(entries.len());
    let mut inputs = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    for e in entries {
        let path = run_root.join("prep").join(split.as_str()).join(png_name(&e.source_id));
        if !path.exists() {
            return Err(Error::MissingArtifact { path, stage: "prep".into() });
        }
        inputs.push(to_tensor(&GrayImage::load(&path)?));
        labels.push(task.label(e.grade)?);
        ids.push(e.source_id);
    }
    Ok(SplitData {
        ids,
        data: TrainData::new(inputs, labels)?,
    })
}

fn loss_for(ctx: &Ctx, model: &Model, labels: &[usize]) -> Result<LossSpec> {
    let weights = if ctx.cfg.train.class_weighting {
        class_weights(labels, ctx.n_classes())?
    } else {
        ClassWeights::uniform(ctx.n_classes())
    };
    LossSpec::for_head(model.config().output, weights)
}

fn train_base(ctx: &Ctx) -> Result<Vec<String>> {
    let tr = load_split(&ctx.run.root, SplitName::Train, ctx.task())?;
    let va = load_split(&ctx.run.root, SplitName::Val, ctx.task())?;
    ctx.run.ensure_dir("models")?;
    ctx.run.ensure_dir("histories")?;
    let mut out = Vec::new();
    for b in &ctx.cfg.backbones {
        let mut model = Model::new(ctx.cfg.model_config(b))?;
        let loss = loss_for(ctx, &model, &tr.data.labels)?;
        log::info!("training {} ({:?}, {} epochs)", b.name, b.channels, b.epochs);
        let history = train(&mut model, &tr.data, Some(&va.data), &ctx.cfg.train_config(b), &loss)?;
        let m = rel(&["models", &format!("{}.json", b.name)]);
        let h = rel(&["histories", &format!("{}.csv", b.name)]);
        model.save(&ctx.run.path(&m), Some(&ctx.run.provenance))?;
        history.write_csv(&ctx.run.path(&h))?;
        out.extend([m, h]);
    }
    Ok(out)
}

fn load_base(ctx: &Ctx, name: &str) -> Result<Model> {
    let path = ctx.run.path(&rel(&["models", &format!("{name}.json")]));
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            stage: "train-base".into(),
        });
    }
    Ok(Model::load(&path)?.0)
}

fn extract(ctx: &Ctx) -> Result<Vec<String>> {
    ctx.run.ensure_dir("probs")?;
    ctx.run.ensure_dir("reports")?;
    let splits: Vec<(SplitName, SplitData)> = SplitName::ALL
        .iter()
        .map(|&s| load_split(&ctx.run.root, s, ctx.task()).map(|d| (s, d)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut reports = Vec::new();
    for (bi, b) in ctx.cfg.backbones.iter().enumerate() {
        let model = load_base(ctx, &b.name)?;
        for (split, d) in &splits {
            let probs = model.predict_proba(&d.data.inputs)?;
            let name = probs_name(&b.name, split.as_str());
            write_probs(&ctx.run.path(&name), &d.ids, &probs)?;
            reports.push(EvalReport::from_probs(&b.name, split.as_str(), &probs, &d.data.labels, ctx.n_classes())?);
            out.push(name);
        }
        if let StackMode::OutOfFold { folds } = ctx.cfg.meta.mode {
            let train = &splits[0].1;
            let base = BaseLearner {
                id: b.name.clone(),
                loss: loss_for(ctx, &model, &train.data.labels)?,
                train: ctx.cfg.train_config(b),
                model,
            };
            log::info!("out-of-fold probabilities for {} ({folds} folds)", b.name);
            let seed = rng::derive_seed(RunConfig::seed_of(ctx.cfg.seeds.meta), bi as u64);
            let probs = base.out_of_fold_proba(&train.data, folds, seed)?;
            let name = probs_name(&b.name, "train_oof");
            write_probs(&ctx.run.path(&name), &train.ids, &probs)?;
            out.push(name);
        }
    }
    write_reports_csv(&ctx.run.path("reports/base.csv"), &reports)?;
    out.push("reports/base.csv".into());
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub threshold: f64,
    /// Test accuracy of every base learner, in config order.
    pub test_accuracy: Vec<(String, f64)>,
    /// Selected base learners, best first.
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TunedSpec {
    pub spec: MetaLearnerSpec,
    pub cv_score: f64,
}

fn read_reports(ctx: &Ctx, name: &str, stage: &str) -> Result<Vec<EvalReport>> {
    let p = ctx.run.path(name);
    if !p.exists() {
        return Err(Error::MissingArtifact {
            path: p,
            stage: stage.into(),
        });
    }
    read_reports_csv(&p)
}

/// Stacked features of `split` from the persisted probability files.
fn stacked(run_root: &Path, order: &[String], split: &str) -> Result<(Vec<String>, StackedFeatures)> {
    let mut ids = None;
    let mut mats = Vec::new();
    for b in order {
        let p = run_root.join(probs_name(b, split));
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p,
                stage: "extract".into(),
            });
        }
        let (i, m) = read_probs(&p)?;
        if ids.as_ref().is_some_and(|prev| prev != &i) {
            return Err(Error::data(format!("{} rows disagree with the other base learners", p.display())));
        }
        ids = Some(i);
        mats.push(m);
    }
    Ok((ids.unwrap_or_default(), stack_features(&mats, order)?))
}

fn split_labels(run_root: &Path, split: SplitName, task: Task, ids: &[String]) -> Result<Vec<usize>> {
    let manifest = read_manifest(&run_root.join("splits.csv"))?;
    let by_id: std::collections::HashMap<&str, usize> = manifest
        .iter()
        .filter(|e| e.split == split)
        .map(|e| (e.source_id.as_str(), e.grade))
        .collect();
    ids.iter()
        .map(|id| {
            let g = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::data(format!("{id} is not in the {} split", split.as_str())))?;
            task.label(*g)
        })
        .collect()
}

fn train_features_name(mode: StackMode) -> &'static str {
    match mode {
        StackMode::InSample => "train",
        StackMode::OutOfFold { .. } => "train_oof",
    }
}

pub fn load_stack_data(run_root: &Path, order: &[String], task: Task, mode: StackMode) -> Result<StackData> {
    let (tr_ids, train) = stacked(run_root, order, train_features_name(mode))?;
    let (va_ids, val) = stacked(run_root, order, "val")?;
    let (te_ids, test) = stacked(run_root, order, "test")?;
    Ok(StackData {
        train_labels: split_labels(run_root, SplitName::Train, task, &tr_ids)?,
        train,
        val_labels: split_labels(run_root, SplitName::Val, task, &va_ids)?,
        val,
        test_labels: split_labels(run_root, SplitName::Test, task, &te_ids)?,
        test,
    })
}

fn tune_meta(ctx: &Ctx) -> Result<Vec<String>> {
    let base = read_reports(ctx, "reports/base.csv", "extract")?;
    let test_accuracy: Vec<(String, f64)> = ctx
        .cfg
        .backbones
        .iter()
        .map(|b| {
            base.iter()
                .find(|r| r.model == b.name && r.split == "test")
                .map(|r| (b.name.clone(), r.accuracy))
                .ok_or_else(|| Error::data(format!("reports/base.csv has no test row for {}", b.name)))
        })
        .collect::<Result<_>>()?;
    let threshold = ctx.cfg.threshold();
    let selected = select_base_learners(&test_accuracy, threshold)?;
    log::info!("selected base learners {selected:?} (threshold {threshold})");
    ctx.run.ensure_dir("search")?;
    let selection = Selection {
        threshold,
        test_accuracy,
        selected,
    };
    write_json(&ctx.run.path("search/selection.json"), &selection)?;
    if ctx.cfg.meta.mode == StackMode::InSample {
        log::warn!("in-sample stacking mode: meta-learners train on probabilities of images the base learners were fit on");
    }
    let data = load_stack_data(&ctx.run.root, &selection.selected, ctx.task(), ctx.cfg.meta.mode)?;
    let mut out = vec!["search/selection.json".to_string()];
    let mut tuned = Vec::new();
    for grid in &ctx.cfg.meta.grids {
        log::info!("tuning {} ({} cells, {} folds)", grid.space.kind(), grid.visited().len(), grid.folds);
        let result = cross_val_search(
            grid,
            &data.train.rows,
            &data.train_labels,
            ctx.n_classes(),
            RunConfig::seed_of(ctx.cfg.seeds.cv),
        )?;
        let name = rel(&["search", &format!("{}.csv", grid.space.kind())]);
        result.write_csv(&ctx.run.path(&name))?;
        out.push(name);
        tuned.push(TunedSpec {
            spec: result.best_spec().clone(),
            cv_score: result.best_score(),
        });
    }
    write_json(&ctx.run.path("search/best.json"), &tuned)?;
    out.push("search/best.json".into());
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalChoice {
    pub kind: String,
    pub metric: String,
    pub val_score: f64,
}

fn stack(ctx: &Ctx) -> Result<Vec<String>> {
    let selection: Selection = read_json(&ctx.run.path("search/selection.json"))?;
    let tuned: Vec<TunedSpec> = read_json(&ctx.run.path("search/best.json"))?;
    let data = load_stack_data(&ctx.run.root, &selection.selected, ctx.task(), ctx.cfg.meta.mode)?;
    ctx.run.ensure_dir("meta")?;
    let seed = RunConfig::seed_of(ctx.cfg.seeds.meta);
    let metric = ctx.cfg.meta.selection_metric;
    let mut out = Vec::new();
    let mut reports = Vec::new();
    let mut best: Option<(f64, String)> = None;
    for t in &tuned {
        let kind = t.spec.kind();
        let (meta, r) = fit_and_evaluate(&t.spec, &data, kind, seed)?;
        let val = &r[1];
        let score = match metric {
            crate::ensemble::SelectionMetric::Accuracy => val.accuracy,
            crate::ensemble::SelectionMetric::BalancedAccuracy => val.balanced_accuracy,
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, kind.to_string()));
        }
        let name = rel(&["meta", &format!("{kind}.json")]);
        meta.save(&ctx.run.path(&name), Some(&ctx.run.provenance))?;
        out.push(name);
        reports.extend(r);
    }
    let (val_score, kind) = best.ok_or_else(|| Error::Config("no meta-learner grids configured".into()))?;
    fs::copy(ctx.run.path(&format!("meta/{kind}.json")), ctx.run.path("meta/final.json"))
        .map_err(|e| Error::io(ctx.run.path("meta/final.json"), e))?;
    write_json(
        &ctx.run.path("meta/final_choice.json"),
        &FinalChoice {
            kind: kind.clone(),
            metric: metric.to_string(),
            val_score,
        },
    )?;
    // Reference head: the strongest base learner's own probabilities.
    let (_, r) = fit_and_evaluate(&MetaLearnerSpec::PassThrough { block: 0 }, &data, "pass_through", seed)?;
    reports.extend(r);
    write_reports_csv(&ctx.run.path("reports/meta.csv"), &reports)?;
    out.extend(["meta/final.json".into(), "meta/final_choice.json".into(), "reports/meta.csv".into()]);
    log::info!("final meta-learner: {kind} (validation {metric} {val_score:.4})");
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub task: Task,
    pub config_hash: String,
    pub seed: u64,
    pub selected_base_learners: Vec<String>,
    pub final_meta_learner: String,
    pub base: Vec<EvalReport>,
    pub meta: Vec<EvalReport>,
}

fn report(ctx: &Ctx) -> Result<Vec<String>> {
    let base = read_reports(ctx, "reports/base.csv", "extract")?;
    let meta = read_reports(ctx, "reports/meta.csv", "stack")?;
    let selection: Selection = read_json(&ctx.run.path("search/selection.json"))?;
    let choice: FinalChoice = read_json(&ctx.run.path("meta/final_choice.json"))?;
    let summary = Summary {
        task: ctx.task(),
        config_hash: ctx.run.provenance.config_hash.clone(),
        seed: ctx.run.provenance.seed,
        selected_base_learners: selection.selected,
        final_meta_learner: choice.kind.clone(),
        base,
        meta,
    };
    write_json(&ctx.run.path("summary.json"), &summary)?;
    println!("{:<14} {:<6} {:>9} {:>9} {:>7}", "model", "split", "accuracy", "balanced", "auc");
    for r in summary.base.iter().chain(&summary.meta).filter(|r| r.split == "test") {
        let mark = if r.model == choice.kind { " *" } else { "" };
        println!(
            "{:<14} {:<6} {:>9.4} {:>9.4} {:>7.4}{mark}",
            r.model, r.split, r.accuracy, r.balanced_accuracy, r.auc
        );
    }
    Ok(vec!["summary.json".into()])
}

/// Evaluates a saved CNN or meta-learner on one split of a run directory.
pub fn eval(model_path: &Path, run_root: &Path, split: SplitName) -> Result<EvalReport> {
    if !model_path.exists() {
        return Err(Error::io(
            model_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "model file not found"),
        ));
    }
    match crate::persist::peek_kind(model_path)?.as_str() {
        "cnn" => {
            let (model, _) = Model::load(model_path)?;
            let n = model.config().output.n_classes();
            let task = if n == 2 { Task::Binary } else { Task::Multiclass };
            let d = load_split(run_root, split, task)?;
            let probs = model.predict_proba(&d.data.inputs)?;
            EvalReport::from_probs(&model.config().name, split.as_str(), &probs, &d.data.labels, n)
        }
        "meta" => {
            let (meta, _) = MetaModel::load(model_path)?;
            let n = meta.n_classes();
            let task = if n == 2 { Task::Binary } else { Task::Multiclass };
            let selection: Selection = read_json(&run_root.join("search/selection.json"))?;
            let d = load_split(run_root, split, task)?;
            let mut mats = Vec::new();
            for b in &selection.selected {
                let p = run_root.join("models").join(format!("{b}.json"));
                mats.push(Model::load(&p)?.0.predict_proba(&d.data.inputs)?);
            }
            let features = stack_features(&mats, &selection.selected)?;
            let probs = meta.predict_proba(&features.rows)?;
            EvalReport::from_probs(meta.spec().kind(), split.as_str(), &probs, &d.data.labels, n)
        }
        other => Err(Error::Format(format!("cannot evaluate a {other:?} model"))),
    }
}
