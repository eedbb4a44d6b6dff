use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use ssf_core::preprocess::encoding::DEFAULT_PE_DIM;
use ssf_core::preprocess::features::{EnsembleMode, FeatureConfig, LocationMode, Paradigm, DEFAULT_SST_PCS};
use ssf_core::TargetKind;
use ssf_models::forecaster::Hyper;
use ssf_models::{ModelKind, ModelSpec, Task};

use crate::failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "ssf", version, about = "Post-process subseasonal ensemble forecasts with statistical learning")]
pub struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true, env = "SSF_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Fit one model on the training split.
    Train(TrainArgs),
    /// Score trained models on a split.
    Evaluate(EvaluateArgs),
    /// Compare feature variants of one model.
    Ablate(AblateArgs),
    /// Paired sign test between two trained models.
    Signtest(SigntestArgs),
    /// Retrain on bootstrap resamples of the training steps.
    Bootstrap(BootstrapArgs),
    /// Fit a stacked model and report it next to its bases.
    Stack(StackArgs),
    /// Re-run the command recorded in a run manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Ablate(_) => "ablate",
            Command::Signtest(_) => "signtest",
            Command::Bootstrap(_) => "bootstrap",
            Command::Stack(_) => "stack",
            Command::Rerun(_) => "rerun",
        }
    }

    pub fn out_dir(&self) -> Option<&PathBuf> {
        match self {
            Command::GenData(a) => a.out.out_dir.as_ref(),
            Command::Train(a) => a.out.out_dir.as_ref(),
            Command::Evaluate(a) => a.out.out_dir.as_ref(),
            Command::Ablate(a) => a.out.out_dir.as_ref(),
            Command::Signtest(a) => a.out.out_dir.as_ref(),
            Command::Bootstrap(a) => a.out.out_dir.as_ref(),
            Command::Stack(a) => a.out.out_dir.as_ref(),
            Command::Rerun(a) => a.out.out_dir.as_ref(),
        }
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        let slot = match self {
            Command::GenData(a) => &mut a.out.out_dir,
            Command::Train(a) => &mut a.out.out_dir,
            Command::Evaluate(a) => &mut a.out.out_dir,
            Command::Ablate(a) => &mut a.out.out_dir,
            Command::Signtest(a) => &mut a.out.out_dir,
            Command::Bootstrap(a) => &mut a.out.out_dir,
            Command::Stack(a) => &mut a.out.out_dir,
            Command::Rerun(a) => &mut a.out.out_dir,
        };
        *slot = Some(dir);
    }
}

/// The output directory is deliberately left out of run manifests.
#[derive(Debug, Clone, PartialEq, Default, Args, Serialize, Deserialize)]
pub struct OutArgs {
    #[arg(long, env = "SSF_OUT_DIR")]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetArg {
    Precipitation,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub n_lat: Option<usize>,
    #[arg(long)]
    pub n_lon: Option<usize>,
    #[arg(long)]
    pub months: Option<usize>,
    #[arg(long)]
    pub train_end: Option<usize>,
    #[arg(long)]
    pub val_end: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Bias added to every member during the test period.
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub sst_points: Option<usize>,
    #[arg(long, value_enum)]
    pub target_kind: Option<TargetArg>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleArg {
    Full,
    Mean,
    Sorted,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationArg {
    Pe,
    Latlon,
    None,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FeatureArgs {
    #[arg(long, value_enum, default_value = "full")]
    pub ensemble: EnsembleArg,
    /// Defaults to `pe`, or `none` under the independent paradigm.
    #[arg(long, value_enum)]
    pub location: Option<LocationArg>,
    #[arg(long, default_value_t = DEFAULT_PE_DIM)]
    pub pe_dim: usize,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub lags: bool,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub covariates: bool,
    #[arg(long, default_value_t = DEFAULT_SST_PCS)]
    pub sst_pcs: usize,
}

impl FeatureArgs {
    pub fn config(&self, paradigm: Paradigm) -> FeatureConfig {
        let location = match self.location {
            Some(LocationArg::Pe) => LocationMode::Pe,
            Some(LocationArg::Latlon) => LocationMode::LatLon,
            Some(LocationArg::None) => LocationMode::None,
            None if paradigm == Paradigm::Independent => LocationMode::None,
            None => LocationMode::Pe,
        };
        FeatureConfig {
            ensemble: match self.ensemble {
                EnsembleArg::Full => EnsembleMode::Full,
                EnsembleArg::Mean => EnsembleMode::Mean,
                EnsembleArg::Sorted => EnsembleMode::Sorted,
                EnsembleArg::None => EnsembleMode::None,
            },
            location,
            pe_dim: self.pe_dim,
            lags: self.lags,
            covariates: self.covariates,
            sst_pcs: self.sst_pcs,
        }
    }
}

/// Model choice shared by training-style commands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// `regression`, `tercile`, `quantile` (0.9) or `quantile:<alpha>`.
    #[arg(long, default_value = "regression")]
    pub task: String,
    /// Defaults to the model's natural paradigm.
    #[arg(long)]
    pub paradigm: Option<String>,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Hyperparameters as JSON, or `@path` to a JSON file; omitted fields
    /// keep their defaults.
    #[arg(long)]
    pub hyper: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

impl RunConfig {
    pub fn task(&self) -> Result<Task, Failure> {
        self.task.parse().map_err(config_err)
    }

    /// Replace an `@path` hyperparameter reference by the file's content so
    /// the manifest is self-contained.
    pub fn inline_hyper(&mut self) -> Result<(), Failure> {
        if let Some(path) = self.hyper.as_deref().and_then(|h| h.strip_prefix('@')) {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("hyperparameter file {path}: {e}")))?;
            self.hyper = Some(text.trim().to_string());
        }
        Ok(())
    }

    pub fn hyper(&self) -> Result<Hyper, Failure> {
        match &self.hyper {
            None => Ok(Hyper::default()),
            Some(text) => serde_json::from_str(text).map_err(|e| Failure::Config(format!("hyperparameters: {e}"))),
        }
    }

    /// Validated spec for `model`.
    pub fn spec(&self, model: &str) -> Result<ModelSpec, Failure> {
        let model: ModelKind = model.parse().map_err(config_err)?;
        let paradigm = match &self.paradigm {
            Some(p) => p.parse().map_err(config_err)?,
            None => model.default_paradigm(),
        };
        let spec = ModelSpec {
            model,
            task: self.task()?,
            paradigm,
            features: self.features.config(paradigm),
            hyper: self.hyper()?,
            seed: self.seed,
        };
        spec.validate().map_err(config_err)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long, default_value = "lr")]
    pub model: String,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionArg {
    TruthMean,
    PredictionMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetrendArg {
    Auto,
    Observed,
    Model,
}

/// Scoring options shared by reporting commands.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    #[arg(long, value_enum, default_value = "truth-mean")]
    pub r2_convention: ConventionArg,
    #[arg(long, value_enum, default_value = "auto")]
    pub detrending: DetrendArg,
    /// Remove per (month, location) bias measured on the scored split's own
    /// truth (diagnostic only).
    #[arg(long)]
    pub oracle_debias: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory written by `train` or `stack`; repeatable.
    #[arg(long = "model-dir", required = true)]
    pub model_dirs: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[command(flatten)]
    pub score: ScoreArgs,
    /// Also write per-location metric maps (CSV and PGM).
    #[arg(long)]
    pub heatmaps: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunConfig,
    #[arg(long, default_value = "rf")]
    pub model: String,
    /// Comma-separated feature variants.
    #[arg(long, value_delimiter = ',', default_value = "full-ensemble,sorted-ensemble,ensemble-mean-only")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "val,test")]
    pub splits: Vec<String>,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SigntestArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub run: RunConfig,
    /// Comma-separated models.
    #[arg(long = "model", value_delimiter = ',', default_value = "lr")]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 50)]
    pub runs: usize,
    #[arg(long, default_value_t = 200)]
    pub sample_size: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct StackArgs {
    #[command(flatten)]
    pub run: RunConfig,
    /// Comma-separated base models; defaults depend on the task.
    #[arg(long, value_delimiter = ',')]
    pub bases: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "val,test")]
    pub splits: Vec<String>,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    /// Run manifest written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArgs,
}

impl GenDataArgs {
    pub fn synth_config(&self) -> ssf_core::synth::SynthConfig {
        let mut cfg = ssf_core::synth::SynthConfig { seed: self.seed, ..Default::default() };
        if let Some(k) = self.k {
            cfg = cfg.with_members(k);
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(n_lat, n_lon, months, train_end, val_end, drift, sst_points);
        if let Some(kind) = self.target_kind {
            cfg.target_kind = match kind {
                TargetArg::Precipitation => TargetKind::Precipitation,
                TargetArg::Temperature => TargetKind::Temperature,
            };
        }
        cfg
    }
}
