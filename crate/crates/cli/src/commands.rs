use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ssf_core::io::{load_dataset, manifest_hash, save_dataset_with};
use ssf_core::synth::synth_generate;
use ssf_core::{DataView, Dataset, Split};
use ssf_eval::experiments::{ablation_suite, bootstrap_experiment, BootstrapConfig, Trainer, Variant};
use ssf_eval::heatmap::{export_heatmap, render_pgm};
use ssf_eval::report::{evaluate_model, scored_steps, Detrending};
use ssf_eval::{sign_test, EvalOptions, EvalReport, R2Convention};
use ssf_models::forecaster::{fit_thresholds, truth_land};
use ssf_models::task::pinball;
use ssf_models::{AnyForecaster, Forecaster, ModelKind, ModelSpec, Task};

use crate::args::*;
use crate::failure::{as_config, Failure};
use crate::manifest::sha256_hex;

pub const MODEL_FILE: &str = "model.json";

/// What a finished command reports back for the run manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub dataset_manifest_hash: Option<String>,
    pub audit: Vec<String>,
    /// Short result echoed on stdout.
    pub summary: Value,
}

/// A validated command, ready to write into its output directory.
pub type Job = Box<dyn FnOnce(&Path) -> Result<Outcome, Failure> + Send>;

/// A trained model as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub spec: ModelSpec,
    /// SHA-256 of the serialized spec.
    pub config_hash: String,
    pub dataset_manifest_hash: String,
    pub catalog_hash: Option<String>,
    pub trained_on: String,
    pub model: AnyForecaster,
}

impl ModelRecord {
    pub fn load(dir: &Path, ds: &Dataset) -> Result<Self, Failure> {
        let path = dir.join(MODEL_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Failure::Config(format!("model {}: {e}", path.display())))?;
        let mut record: ModelRecord = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("model {}: {e}", path.display())))?;
        as_config(record.model.prepare(&ds.mask))?;
        Ok(record)
    }
}

/// Validate `command` and return the work to run. Nothing is written here;
/// relative `@file` hyperparameters are inlined into the command so it can
/// be recorded verbatim.
pub fn plan(command: &mut Command) -> Result<Job, Failure> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => {
            a.run.inline_hyper()?;
            train(a)
        }
        Command::Evaluate(a) => evaluate(a),
        Command::Ablate(a) => {
            a.run.inline_hyper()?;
            ablate(a)
        }
        Command::Signtest(a) => signtest(a),
        Command::Bootstrap(a) => {
            a.run.inline_hyper()?;
            bootstrap(a)
        }
        Command::Stack(a) => {
            a.run.inline_hyper()?;
            stack(a)
        }
        Command::Rerun(_) => Err(Failure::Config("a rerun manifest cannot itself describe a rerun".into())),
    }
}

fn open_dataset(dir: &Path) -> Result<(Dataset, String), Failure> {
    let ds = as_config(load_dataset(dir))?;
    let hash = as_config(manifest_hash(dir))?;
    Ok((ds, hash))
}

fn parse_split(s: &str) -> Result<Split, Failure> {
    as_config(s.parse::<Split>())
}

fn eval_options(score: &ScoreArgs) -> EvalOptions {
    EvalOptions {
        r2_convention: match score.r2_convention {
            ConventionArg::TruthMean => R2Convention::TruthMean,
            ConventionArg::PredictionMean => R2Convention::PredictionMean,
        },
        detrending: match score.detrending {
            DetrendArg::Auto => Detrending::Auto,
            DetrendArg::Observed => Detrending::Observed,
            DetrendArg::Model => Detrending::Model,
        },
        oracle_debias: score.oracle_debias,
        ..EvalOptions::default()
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn gen_data(a: &GenDataArgs) -> Result<Job, Failure> {
    let cfg = a.synth_config();
    as_config(cfg.validate())?;
    Ok(Box::new(move |out: &Path| {
        let ds = synth_generate(&cfg)?;
        save_dataset_with(&ds, out, Some(serde_json::to_value(&cfg)?))?;
        let hash = manifest_hash(out)?;
        Ok(Outcome {
            summary: json!({ "dataset": out, "manifest_hash": hash, "n_times": ds.n_times(), "land_cells": ds.n_land() }),
            dataset_manifest_hash: Some(hash),
            audit: Vec::new(),
        })
    }))
}

/// Fit on the training split, checking afterwards that no step at or past
/// the end of training was read.
fn fit_audited(spec: &ModelSpec, ds: &Dataset, audit: &mut Vec<String>) -> Result<AnyForecaster, Failure> {
    let mut model = spec.build()?;
    let train = DataView::of_split(ds, Split::Train)?;
    let times: Vec<usize> = train.times().collect();
    model.fit(&train, &times)?;
    let end = ds.train_range().end;
    match train.max_read() {
        Some(t) if t >= end => return Err(Failure::Runtime(format!("{} read step {t} at or past the training end {end}", spec.model))),
        Some(t) => audit.push(format!("{}: highest step read during fit {t} < training end {end}", spec.model)),
        None => audit.push(format!("{}: no step read during fit", spec.model)),
    }
    Ok(model)
}

/// Write `model.json` plus plain-text checkpoints of any networks inside.
fn save_model(out: &Path, spec: &ModelSpec, model: AnyForecaster, dataset_hash: &str) -> Result<ModelRecord, Failure> {
    fn checkpoints(out: &Path, prefix: &str, model: &AnyForecaster) -> Result<(), Failure> {
        match model {
            AnyForecaster::Convnet(f) => {
                if let Some(net) = f.net() {
                    fs::write(out.join(format!("{prefix}convnet.ckpt")), net.to_checkpoint().to_text())?;
                }
                fs::write(out.join(format!("{prefix}training-log.tsv")), f.log.to_tsv())?;
            }
            AnyForecaster::Stack(f) => {
                if let Some(stacker) = f.stacker() {
                    fs::write(out.join(format!("{prefix}stacker.ckpt")), stacker.to_checkpoint().to_text())?;
                }
                for (i, base) in f.bases().iter().enumerate() {
                    checkpoints(out, &format!("{prefix}base{i}-"), base)?;
                }
            }
            _ => {}
        }
        Ok(())
    }
    checkpoints(out, "", &model)?;
    let record = ModelRecord {
        config_hash: sha256_hex(serde_json::to_string(spec)?.as_bytes()),
        spec: spec.clone(),
        dataset_manifest_hash: dataset_hash.to_string(),
        catalog_hash: model.catalog_hash(),
        trained_on: "train".into(),
        model,
    };
    fs::write(out.join(MODEL_FILE), serde_json::to_string(&record)?)?;
    Ok(record)
}

fn train(a: &TrainArgs) -> Result<Job, Failure> {
    let spec = a.run.spec(&a.model)?;
    let (ds, hash) = open_dataset(&a.run.dataset)?;
    Ok(Box::new(move |out: &Path| {
        let mut audit = Vec::new();
        let model = fit_audited(&spec, &ds, &mut audit)?;
        let record = save_model(out, &spec, model, &hash)?;
        Ok(Outcome {
            summary: json!({ "model": record.model.id(), "config_hash": record.config_hash, "catalog_hash": record.catalog_hash }),
            dataset_manifest_hash: Some(hash),
            audit,
        })
    }))
}

/// File stem per report, unique within one run.
fn unique_stem(taken: &mut BTreeSet<String>, base: String) -> String {
    let base = base
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.'))
        .filter(|part| !part.is_empty())
        .collect::<Vec<_>>()
        .join("-");
    let mut stem = base.clone();
    let mut i = 2;
    while !taken.insert(stem.clone()) {
        stem = format!("{base}-{i}");
        i += 1;
    }
    stem
}

fn write_heatmaps(out: &Path, stem: &str, report: &EvalReport, ds: &Dataset) -> Result<(), Failure> {
    for (name, grid) in &report.metrics {
        export_heatmap(&grid.values, &ds.mask, &out.join(format!("{stem}-{name}.csv")))?;
        render_pgm(&grid.values, &ds.mask, &out.join(format!("{stem}-{name}.pgm")))?;
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<Job, Failure> {
    let (ds, hash) = open_dataset(&a.dataset)?;
    let split = parse_split(&a.split)?;
    let view = as_config(DataView::of_split(&ds, split))?;
    let mut records = Vec::new();
    for dir in &a.model_dirs {
        let record = ModelRecord::load(dir, &ds)?;
        as_config(record.model.check_compatible(&view))?;
        records.push(record);
    }
    let base = eval_options(&a.score);
    let heatmaps = a.heatmaps;
    Ok(Box::new(move |out: &Path| {
        let mut taken = BTreeSet::new();
        let mut summary = Vec::new();
        for record in &records {
            let opts = EvalOptions {
                seed: Some(record.spec.seed),
                manifest_hash: Some(hash.clone()),
                trained_on: Some(record.trained_on.clone()),
                ..base.clone()
            };
            let mut report = evaluate_model(&record.model, &ds, split, &opts)?;
            if record.dataset_manifest_hash != hash {
                report.notes.push(format!("model was trained on dataset {}", record.dataset_manifest_hash));
            }
            let stem = unique_stem(&mut taken, format!("{}-{}", report.model_id, split_name(split)));
            report.write(&out.join(format!("{stem}.json")))?;
            if heatmaps {
                write_heatmaps(out, &stem, &report, &ds)?;
            }
            let metric = report.primary_metric();
            summary.push(json!({ "report": format!("{stem}.json"), "metric": metric, "mean": report.mean(metric).ok() }));
        }
        Ok(Outcome {
            dataset_manifest_hash: Some(hash),
            audit: Vec::new(),
            summary: Value::Array(summary),
        })
    }))
}

fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
        Split::All => "all",
    }
}

fn csv_number(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

const SUMMARY_HEADER: &str = "model,variant,split,metric,mean,se,median,p90,n_locations\n";

fn summary_rows(report: &EvalReport) -> String {
    let mut rows = String::new();
    for (name, grid) in &report.metrics {
        let agg = grid.aggregates.as_ref();
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            report.model_id,
            report.variant.as_deref().unwrap_or(""),
            split_name(report.split),
            name,
            csv_number(agg.map(|a| a.mean)),
            csv_number(agg.map(|a| a.se)),
            csv_number(agg.map(|a| a.median)),
            csv_number(agg.map(|a| a.p90)),
            agg.map_or(0, |a| a.n_locations),
        ));
    }
    rows
}

fn ablate(a: &AblateArgs) -> Result<Job, Failure> {
    let spec = a.run.spec(&a.model)?;
    let variants = a.variants.iter().map(|v| as_config(v.parse::<Variant>())).collect::<Result<Vec<_>, _>>()?;
    for v in &variants {
        as_config(v.spec(&spec))?;
    }
    let splits = a.splits.iter().map(|s| parse_split(s)).collect::<Result<Vec<_>, _>>()?;
    let (ds, hash) = open_dataset(&a.run.dataset)?;
    let base = EvalOptions {
        manifest_hash: Some(hash.clone()),
        ..eval_options(&a.score)
    };
    Ok(Box::new(move |out: &Path| {
        let suite = ablation_suite(&variants, &spec, &ds, &splits, &base)?;
        let mut csv = String::from(SUMMARY_HEADER);
        let mut summary = Vec::new();
        for (variant, reports) in variants.iter().zip(&suite) {
            for report in reports {
                report.write(&out.join(format!("{variant}-{}.json", split_name(report.split))))?;
                csv.push_str(&summary_rows(report));
                let metric = report.primary_metric();
                summary.push(json!({ "variant": variant.to_string(), "split": report.split, "metric": metric, "mean": report.mean(metric).ok() }));
            }
        }
        fs::write(out.join("summary.csv"), csv)?;
        Ok(Outcome {
            dataset_manifest_hash: Some(hash),
            audit: Vec::new(),
            summary: Value::Array(summary),
        })
    }))
}

/// Per step and land location loss of `model` on `times`: absolute error,
/// pinball loss, or 0/1 misclassification.
fn pointwise_losses(model: &AnyForecaster, ds: &Dataset, view: &DataView, times: &[usize]) -> Result<Vec<Vec<f64>>, Failure> {
    let pred = model.predict(view, times)?;
    let task = model.task();
    let thresholds = match task {
        Task::Tercile => {
            let train = DataView::of_split(ds, Split::Train)?;
            let train_times: Vec<usize> = train.times().collect();
            Some(fit_thresholds(&train, &train_times)?)
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(times.len());
    for (&t, row) in times.iter().zip(&pred) {
        let truth = truth_land(view, t)?;
        let month = view.month_of(t);
        out.push(
            row.iter()
                .zip(&truth)
                .enumerate()
                .map(|(loc, (&p, &y))| match (task, &thresholds) {
                    _ if !p.is_finite() || !y.is_finite() => f64::NAN,
                    (Task::Quantile { alpha }, _) => pinball(y - p, alpha),
                    (Task::Tercile, Some(th)) => f64::from(u8::from(p != f64::from(th.label(y, month, loc)))),
                    _ => (p - y).abs(),
                })
                .collect(),
        );
    }
    Ok(out)
}

fn signtest(a: &SigntestArgs) -> Result<Job, Failure> {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Failure::Config(format!("significance level must lie in (0, 1), got {}", a.level)));
    }
    let (ds, hash) = open_dataset(&a.dataset)?;
    let split = parse_split(&a.split)?;
    let model_a = ModelRecord::load(&a.model_a, &ds)?;
    let model_b = ModelRecord::load(&a.model_b, &ds)?;
    {
        let view = as_config(DataView::of_split(&ds, split))?;
        for m in [&model_a, &model_b] {
            as_config(m.model.check_compatible(&view))?;
        }
    }
    if model_a.model.task() != model_b.model.task() {
        return Err(Failure::Config(format!("models solve different tasks: {} vs {}", model_a.model.task(), model_b.model.task())));
    }
    let level = a.level;
    Ok(Box::new(move |out: &Path| {
        let view = DataView::of_split(&ds, split)?;
        let times = scored_steps(&view);
        let errors_a = pointwise_losses(&model_a.model, &ds, &view, &times)?;
        let errors_b = pointwise_losses(&model_b.model, &ds, &view, &times)?;
        let result = sign_test(&errors_a, &errors_b, level)?;
        let doc = json!({
            "model_a": model_a.model.id(),
            "model_b": model_b.model.id(),
            "split": split,
            "task": model_a.model.task().to_string(),
            "land_cells": ds.mask.land_locations(),
            "result": result,
        });
        write_json(&out.join("signtest.json"), &doc)?;
        Ok(Outcome {
            dataset_manifest_hash: Some(hash),
            audit: Vec::new(),
            summary: json!({
                "reject": result.reject,
                "min_p": result.min_p,
                "threshold": result.threshold,
                "n_significant": result.n_significant,
            }),
        })
    }))
}

fn bootstrap(a: &BootstrapArgs) -> Result<Job, Failure> {
    if a.runs == 0 || a.sample_size == 0 {
        return Err(Failure::Config("bootstrap runs and sample size must be positive".into()));
    }
    let specs = a.models.iter().map(|m| a.run.spec(m)).collect::<Result<Vec<_>, _>>()?;
    let (ds, hash) = open_dataset(&a.run.dataset)?;
    let config = BootstrapConfig {
        runs: a.runs,
        sample_size: a.sample_size,
        seed: a.run.seed,
    };
    Ok(Box::new(move |out: &Path| {
        let trainers: Vec<&dyn Trainer> = specs.iter().map(|s| s as &dyn Trainer).collect();
        let result = bootstrap_experiment(&trainers, &ds, &config)?;
        write_json(&out.join("bootstrap.json"), &result)?;
        let mut csv = String::from("model,run,metric,score\n");
        let mut summary = Vec::new();
        for series in &result.models {
            for (run, score) in series.scores.iter().enumerate() {
                csv.push_str(&format!("{},{run},{},{}\n", series.model_id, series.metric, csv_number(*score)));
            }
            let ok: Vec<f64> = series.scores.iter().flatten().copied().collect();
            summary.push(json!({
                "model": series.model_id,
                "metric": series.metric,
                "mean": ssf_core::stats::mean(&ok),
                "sd": (ok.len() > 1).then(|| ssf_core::stats::std_dev(&ok)),
                "failures": series.failures.len(),
            }));
        }
        fs::write(out.join("bootstrap.csv"), csv)?;
        Ok(Outcome {
            dataset_manifest_hash: Some(hash),
            audit: Vec::new(),
            summary: Value::Array(summary),
        })
    }))
}

fn stack(a: &StackArgs) -> Result<Job, Failure> {
    let mut run = a.run.clone();
    if !a.bases.is_empty() {
        let bases = a.bases.iter().map(|b| as_config(b.parse::<ModelKind>())).collect::<Result<Vec<_>, _>>()?;
        let mut hyper: Value = match &run.hyper {
            Some(text) => serde_json::from_str(text).map_err(|e| Failure::Config(format!("hyperparameters: {e}")))?,
            None => json!({}),
        };
        hyper
            .as_object_mut()
            .ok_or_else(|| Failure::Config("hyperparameters must be a JSON object".into()))?
            .insert("bases".into(), serde_json::to_value(&bases)?);
        run.hyper = Some(hyper.to_string());
    }
    let spec = run.spec("stack")?;
    let splits = a.splits.iter().map(|s| parse_split(s)).collect::<Result<Vec<_>, _>>()?;
    let (ds, hash) = open_dataset(&a.run.dataset)?;
    let base_opts = EvalOptions {
        manifest_hash: Some(hash.clone()),
        trained_on: Some("train".into()),
        ..eval_options(&a.score)
    };
    Ok(Box::new(move |out: &Path| {
        let mut audit = Vec::new();
        let model = fit_audited(&spec, &ds, &mut audit)?;
        let record = save_model(out, &spec, model, &hash)?;
        let AnyForecaster::Stack(stacked) = &record.model else {
            unreachable!("stack spec builds a stacked model")
        };
        let mut csv = String::from(SUMMARY_HEADER);
        let mut summary = Vec::new();
        for &split in &splits {
            let opts = EvalOptions {
                seed: Some(spec.seed),
                ..base_opts.clone()
            };
            let stack_report = evaluate_model(&record.model, &ds, split, &opts)?;
            let metric = stack_report.primary_metric();
            let mut taken = BTreeSet::new();
            let stem = unique_stem(&mut taken, format!("stack-{}", split_name(split)));
            stack_report.write(&out.join(format!("{stem}.json")))?;
            csv.push_str(&summary_rows(&stack_report));
            let stack_score = stack_report.mean(metric)?;
            let mut bases = Vec::new();
            for (base, base_spec) in stacked.bases().iter().zip(spec.base_specs()) {
                let opts = EvalOptions {
                    seed: Some(base_spec.seed),
                    ..base_opts.clone()
                };
                let report = evaluate_model(base, &ds, split, &opts)?;
                let stem = unique_stem(&mut taken, format!("{}-{}", report.model_id, split_name(split)));
                report.write(&out.join(format!("{stem}.json")))?;
                csv.push_str(&summary_rows(&report));
                bases.push((report.model_id.clone(), report.mean(metric)?));
            }
            let higher_is_better = metric == "accuracy";
            let best = bases
                .iter()
                .cloned()
                .reduce(|x, y| if (y.1 > x.1) == higher_is_better && y.1 != x.1 { y } else { x })
                .expect("at least two bases");
            summary.push(json!({
                "split": split,
                "metric": metric,
                "stack": stack_score,
                "bases": bases.iter().map(|(id, s)| json!({ "model": id, "score": s })).collect::<Vec<_>>(),
                "best_base": best.0,
                "best_base_score": best.1,
                "ratio_to_best_base": stack_score / best.1,
            }));
        }
        fs::write(out.join("summary.csv"), csv)?;
        let summary = Value::Array(summary);
        write_json(&out.join("stack-summary.json"), &summary)?;
        Ok(Outcome {
            dataset_manifest_hash: Some(hash),
            audit,
            summary,
        })
    }))
}

/// Output directory of a run that must not already hold files.
pub fn fresh_out_dir(dir: Option<&PathBuf>) -> Result<PathBuf, Failure> {
    let dir = dir.ok_or_else(|| Failure::Config("no output directory given (--out-dir or SSF_OUT_DIR)".into()))?;
    if dir.exists() && fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(true) {
        return Err(Failure::Config(format!("output directory {} is not empty", dir.display())));
    }
    Ok(dir.clone())
}
