//! Experiment configuration and the train / compare pipeline.
//!
//! An experiment is one JSON document naming a dataset, an architecture
//! preset, an activation scheme and the training (and optionally
//! quantisation) settings. Every default is filled in on parse, so writing the
//! parsed config back out records exactly what ran.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    load_cifar10, load_cifar100, normalize, subset, synth_blobs, synth_spirals, DataError, Dataset,
    Normalization,
};
use crate::field::Modulus;
use crate::fieldnn::{auto_modulus, quantize, save_quantized, QModelMeta, QuantConfig, QuantError};
use crate::fsutil::write_atomic;
use crate::nn::{
    lr_search, metrics_csv, save_model, train_with, ActivationKind, EpochMetrics, LayerSpec,
    LrCandidate, Model, NnError, PoolKind, TrainConfig, LR_GRID,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_unit_interval() -> Normalization {
    Normalization::UnitInterval
}

fn default_a() -> i64 {
    1
}

fn default_kernel() -> usize {
    3
}

fn default_gain() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// CIFAR-10 binary batches under `dir` (or the data root). The optional
    /// per-class counts take class-balanced subsets.
    Cifar10 {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
        #[serde(default)]
        subset_seed: u64,
        #[serde(default = "default_unit_interval")]
        normalization: Normalization,
    },
    Cifar100 {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
        #[serde(default)]
        subset_seed: u64,
        #[serde(default = "default_unit_interval")]
        normalization: Normalization,
    },
    Blobs {
        classes: usize,
        dims: usize,
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        seed: u64,
    },
    Spirals {
        n_train: usize,
        n_test: usize,
        turns: f64,
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetConfig {
    /// The full CIFAR-10 or CIFAR-100 set from the data root.
    pub fn cifar(name: &str) -> Result<Self, ExperimentError> {
        let (dir, train_per_class, test_per_class, subset_seed) = (None, None, None, 0);
        let normalization = Normalization::UnitInterval;
        match name {
            "cifar10" => Ok(DatasetConfig::Cifar10 {
                dir,
                train_per_class,
                test_per_class,
                subset_seed,
                normalization,
            }),
            "cifar100" => Ok(DatasetConfig::Cifar100 {
                dir,
                train_per_class,
                test_per_class,
                subset_seed,
                normalization,
            }),
            other => Err(ExperimentError::Config(format!(
                "unknown image dataset {other:?}; expected cifar10 or cifar100"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetConfig::Cifar10 { .. } => "cifar10",
            DatasetConfig::Cifar100 { .. } => "cifar100",
            DatasetConfig::Blobs { .. } => "blobs",
            DatasetConfig::Spirals { .. } => "spirals",
        }
    }

    /// Loads (train, test). CIFAR directories default to `data_root`.
    pub fn load(&self, data_root: Option<&Path>) -> Result<(Dataset, Dataset), ExperimentError> {
        match self {
            DatasetConfig::Cifar10 {
                dir,
                train_per_class,
                test_per_class,
                subset_seed,
                normalization,
            }
            | DatasetConfig::Cifar100 {
                dir,
                train_per_class,
                test_per_class,
                subset_seed,
                normalization,
            } => {
                let dir = dir.as_deref().or(data_root).ok_or_else(|| {
                    ExperimentError::Config(format!(
                        "{}: no dataset directory given and FIELDNET_DATA_DIR is unset",
                        self.name()
                    ))
                })?;
                let (train, test) = match self {
                    DatasetConfig::Cifar10 { .. } => load_cifar10(dir)?,
                    _ => load_cifar100(dir)?,
                };
                let train = match train_per_class {
                    Some(n) => subset(&train, *n, *subset_seed)?,
                    None => train,
                };
                let test = match test_per_class {
                    Some(n) => subset(&test, *n, subset_seed.wrapping_add(1))?,
                    None => test,
                };
                let train_n = normalize(&train, *normalization, None);
                let test_n = normalize(&test, *normalization, Some(&train));
                Ok((train_n, test_n))
            }
            DatasetConfig::Blobs {
                classes,
                dims,
                n_train,
                n_test,
                seed,
            } => Ok((
                synth_blobs(*classes, *dims, *n_train, *seed)?,
                synth_blobs(*classes, *dims, *n_test, seed.wrapping_add(1))?,
            )),
            DatasetConfig::Spirals {
                n_train,
                n_test,
                turns,
                noise,
                seed,
            } => Ok((
                synth_spirals(*n_train, *turns, *noise, *seed)?,
                synth_spirals(*n_test, *turns, *noise, seed.wrapping_add(1))?,
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Seven 3x3/1x1 convolutions with two 2x2 pools and a dense classifier.
    CnnLiu,
    /// Network In Network: nine convolutions, two 3x3/2 pools, global
    /// average pooling.
    Nin,
    /// Dense layers of the given widths, each followed by the activation.
    Mlp { hidden: Vec<usize> },
    /// Per entry of `conv_channels`: same-padded conv, activation, 2x2 pool;
    /// then dense layers of width `dense`, each with an activation.
    CnnSmall {
        conv_channels: Vec<usize>,
        dense: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    Relu,
    Poly {
        #[serde(default = "default_a")]
        a: i64,
    },
    Quad,
}

impl Scheme {
    pub fn activation(self) -> ActivationKind {
        match self {
            Scheme::Relu => ActivationKind::Relu,
            Scheme::Poly { a } => ActivationKind::Poly { a },
            Scheme::Quad => ActivationKind::Square,
        }
    }

    pub fn is_field_compatible(self) -> bool {
        !matches!(self, Scheme::Relu)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Relu => f.write_str("relu"),
            Scheme::Poly { a: 1 } => f.write_str("poly"),
            Scheme::Poly { a } => write!(f, "poly:{a}"),
            Scheme::Quad => f.write_str("quad"),
        }
    }
}

impl FromStr for Scheme {
    type Err = ExperimentError;

    /// `relu`, `quad`, `poly` (a = 1) or `poly:<a>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::Config(format!("unknown scheme {s:?}"));
        match s {
            "relu" => Ok(Scheme::Relu),
            "quad" | "square" => Ok(Scheme::Quad),
            "poly" => Ok(Scheme::Poly { a: 1 }),
            _ => {
                let a = s.strip_prefix("poly:").ok_or_else(bad)?;
                let a: i64 = a.parse().map_err(|_| bad())?;
                if a < 1 {
                    return Err(bad());
                }
                Ok(Scheme::Poly { a })
            }
        }
    }
}

/// Layer list for `arch` on inputs of `input_shape` with `classes` outputs.
///
/// Window pools follow the scheme: sum pooling for the polynomial schemes,
/// max pooling for the ReLU baseline (NIN's average pool stays a mean pool
/// there). `pool_override` replaces every window pool kind.
pub fn build_layers(
    arch: &Architecture,
    scheme: Scheme,
    input_shape: &[usize],
    classes: usize,
    pool_override: Option<PoolKind>,
) -> Result<Vec<LayerSpec>, ExperimentError> {
    let act = LayerSpec::act(scheme.activation());
    let pool_kind = |baseline: PoolKind| match (pool_override, scheme) {
        (Some(k), _) => k,
        (None, Scheme::Relu) => baseline,
        (None, _) => PoolKind::Sum,
    };
    let padded_pool = |baseline, window, stride, padding| LayerSpec::Pool {
        kind: pool_kind(baseline),
        window,
        stride,
        padding,
    };
    let need_image = || {
        if input_shape.len() == 3 {
            Ok(())
        } else {
            Err(ExperimentError::Config(format!(
                "{arch:?} needs (C, H, W) inputs, dataset gives {input_shape:?}"
            )))
        }
    };
    let mut layers = Vec::new();
    match arch {
        Architecture::CnnLiu => {
            need_image()?;
            for (i, (k, c)) in [
                (3, 64),
                (3, 64),
                (3, 64),
                (3, 64),
                (3, 64),
                (1, 64),
                (1, 16),
            ]
            .into_iter()
            .enumerate()
            {
                layers.push(LayerSpec::conv_same(c, k));
                layers.push(act);
                if i == 1 || i == 3 {
                    layers.push(padded_pool(PoolKind::Max, 2, 2, 0));
                }
            }
            layers.push(LayerSpec::Flatten);
            layers.push(LayerSpec::dense(classes));
        }
        Architecture::Nin => {
            need_image()?;
            let block = |layers: &mut Vec<LayerSpec>, k: usize, widths: [usize; 3]| {
                layers.push(LayerSpec::conv_same(widths[0], k));
                layers.push(act);
                for w in &widths[1..] {
                    layers.push(LayerSpec::conv_same(*w, 1));
                    layers.push(act);
                }
            };
            block(&mut layers, 5, [192, 160, 96]);
            layers.push(padded_pool(PoolKind::Max, 3, 2, 1));
            layers.push(LayerSpec::Dropout { rate: 0.5 });
            block(&mut layers, 5, [192, 192, 192]);
            layers.push(padded_pool(PoolKind::Mean, 3, 2, 1));
            layers.push(LayerSpec::Dropout { rate: 0.5 });
            block(&mut layers, 3, [192, 192, classes]);
            layers.push(LayerSpec::GlobalAvgPool);
        }
        Architecture::Mlp { hidden } => {
            if input_shape.len() != 1 {
                layers.push(LayerSpec::Flatten);
            }
            for &h in hidden {
                layers.push(LayerSpec::dense(h));
                layers.push(act);
            }
            layers.push(LayerSpec::dense(classes));
        }
        Architecture::CnnSmall {
            conv_channels,
            dense,
            kernel,
        } => {
            need_image()?;
            for &c in conv_channels {
                layers.push(LayerSpec::conv_same(c, *kernel));
                layers.push(act);
                layers.push(padded_pool(PoolKind::Max, 2, 2, 0));
            }
            layers.push(LayerSpec::Flatten);
            for &d in dense {
                layers.push(LayerSpec::dense(d));
                layers.push(act);
            }
            layers.push(LayerSpec::dense(classes));
        }
    }
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub architecture: Architecture,
    pub scheme: Scheme,
    #[serde(default)]
    pub train: TrainConfig,
    /// Multiplier on the Kaiming-uniform bound.
    #[serde(default = "default_gain")]
    pub init_gain: f64,
    /// Window-pool kind for the ReLU scheme; the preset's (max) when unset.
    #[serde(default)]
    pub relu_pool: Option<PoolKind>,
    /// Window-pool kind for the polynomial schemes; sum when unset. Mean
    /// pooling trains the same function family and quantises to sum pooling.
    #[serde(default)]
    pub field_pool: Option<PoolKind>,
    /// Epochs per candidate when `train.lr_grid` is set; defaults to
    /// `train.epochs`.
    #[serde(default)]
    pub lr_search_epochs: Option<usize>,
    #[serde(default)]
    pub quant: Option<QuantConfig>,
    #[serde(default)]
    pub modulus: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-scale run of a CIFAR preset with the published hyperparameters:
    /// batch 125, the 7-value learning-rate grid, L2 5e-4 and no decay for
    /// cnn_liu, L2 3e-4 and 0.4x decay at epochs 80 and 140 for nin.
    pub fn image_preset(
        architecture: Architecture,
        dataset: DatasetConfig,
    ) -> Result<Self, ExperimentError> {
        let mut train = TrainConfig {
            batch_size: 125,
            learning_rate: 0.01,
            lr_grid: Some(LR_GRID.to_vec()),
            ..TrainConfig::default()
        };
        match architecture {
            Architecture::CnnLiu => {
                train.epochs = 150;
                train.l2_lambda = 5e-4;
            }
            Architecture::Nin => {
                train.epochs = 160;
                train.l2_lambda = 3e-4;
                train.lr_decay_factor = 0.4;
                train.lr_decay_epochs = vec![80, 140];
            }
            _ => {
                return Err(ExperimentError::Config(
                    "presets exist for cnn_liu and nin only".into(),
                ))
            }
        }
        if !matches!(
            dataset,
            DatasetConfig::Cifar10 { .. } | DatasetConfig::Cifar100 { .. }
        ) {
            return Err(ExperimentError::Config(
                "presets run on cifar10 or cifar100".into(),
            ));
        }
        let cfg = Self {
            output_dir: PathBuf::from("out").join(format!(
                "{}_{}",
                dataset.name(),
                match architecture {
                    Architecture::CnnLiu => "cnn_liu",
                    _ => "nin",
                }
            )),
            dataset,
            architecture,
            scheme: Scheme::Poly { a: 1 },
            train,
            init_gain: 0.5,
            relu_pool: None,
            field_pool: Some(PoolKind::Mean),
            lr_search_epochs: Some(5),
            quant: None,
            modulus: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.train.validate()?;
        if !(self.init_gain > 0.0) {
            return Err(ExperimentError::Config("init_gain must be positive".into()));
        }
        if let Scheme::Poly { a } = self.scheme {
            if a < 1 {
                return Err(ExperimentError::Config(format!(
                    "poly a = {a} must be at least 1"
                )));
            }
        }
        if let Some(q) = &self.quant {
            if !self.scheme.is_field_compatible() {
                return Err(ExperimentError::Config(
                    "the relu scheme cannot be quantised; drop the quant section".into(),
                ));
            }
            if self.field_pool == Some(PoolKind::Max) {
                return Err(ExperimentError::Config(
                    "max pooling cannot be quantised; drop the quant section".into(),
                ));
            }
            q.validate()?;
            if let Scheme::Poly { a } = self.scheme {
                if q.activation_a != a {
                    return Err(ExperimentError::Config(format!(
                        "quant.activation_a = {} differs from the scheme's a = {a}",
                        q.activation_a
                    )));
                }
            }
        }
        if let Some(p) = self.modulus {
            if self.quant.is_none() {
                return Err(ExperimentError::Config(
                    "modulus given without a quant section".into(),
                ));
            }
            Modulus::new(p).map_err(QuantError::from)?;
        }
        if let Some(0) = self.lr_search_epochs {
            return Err(ExperimentError::Config(
                "lr_search_epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// The same experiment under another scheme and seed. A quant section is
    /// dropped for ReLU and has its `a` aligned for poly.
    pub fn with_scheme_seed(&self, scheme: Scheme, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.scheme = scheme;
        cfg.train.seed = seed;
        match scheme {
            Scheme::Relu => {
                cfg.quant = None;
                cfg.modulus = None;
            }
            Scheme::Poly { a } => {
                if let Some(q) = &mut cfg.quant {
                    q.activation_a = a;
                }
            }
            Scheme::Quad => {}
        }
        cfg
    }

    /// Pool kind replacing the preset's window pools under `scheme`.
    pub fn pool_for(&self, scheme: Scheme) -> Option<PoolKind> {
        match scheme {
            Scheme::Relu => self.relu_pool,
            _ => self.field_pool,
        }
    }

    pub fn build_model(&self, train: &Dataset) -> Result<Model, ExperimentError> {
        let input_shape = train.sample_shape().to_vec();
        let layers = build_layers(
            &self.architecture,
            self.scheme,
            &input_shape,
            train.num_classes,
            self.pool_for(self.scheme),
        )?;
        Ok(Model::new(
            input_shape,
            layers,
            self.train.seed,
            self.init_gain,
        )?)
    }
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub learning_rate: f64,
    pub lr_candidates: Vec<LrCandidate>,
}

impl RunOutcome {
    pub fn final_test_acc(&self) -> f64 {
        self.history.last().map_or(0.0, |m| m.test_acc)
    }

    /// First epoch reaching the highest test accuracy.
    pub fn best_epoch(&self) -> usize {
        let mut best: Option<&EpochMetrics> = None;
        for m in &self.history {
            if best.is_none_or(|b| m.test_acc > b.test_acc) {
                best = Some(m);
            }
        }
        best.map_or(0, |m| m.epoch)
    }
}

/// Trains the configured model, searching the learning rate first when the
/// config carries a grid.
pub fn run_training(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test: &Dataset,
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let (learning_rate, lr_candidates) = match &cfg.train.lr_grid {
        Some(grid) => {
            let budget = cfg.lr_search_epochs.unwrap_or(cfg.train.epochs);
            lr_search(
                || {
                    cfg.build_model(train_set).map_err(|e| match e {
                        ExperimentError::Nn(e) => e,
                        other => NnError::Config(other.to_string()),
                    })
                },
                train_set,
                test,
                grid,
                budget,
                &cfg.train,
            )?
        }
        None => (cfg.train.learning_rate, Vec::new()),
    };
    let train_cfg = TrainConfig {
        learning_rate,
        ..cfg.train.clone()
    };
    let mut model = cfg.build_model(train_set)?;
    let history = train_with(&mut model, train_set, test, &train_cfg, on_epoch)?;
    Ok(RunOutcome {
        model,
        history,
        learning_rate,
        lr_candidates,
    })
}

/// Files written by [`write_run`].
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub learning_rate: f64,
    pub final_test_acc: f64,
    pub best_epoch: usize,
    pub model: PathBuf,
    pub metrics: PathBuf,
    pub config: PathBuf,
    pub quantized_model: Option<PathBuf>,
    pub required_bound: Option<String>,
    pub modulus: Option<u64>,
}

/// Writes `config.json` (with the chosen learning rate), `model.json`,
/// `metrics.csv` and, with a quant section, `qmodel.json`.
pub fn write_run(cfg: &ExperimentConfig, run: &RunOutcome) -> Result<RunReport, ExperimentError> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut echoed = cfg.clone();
    echoed.train.learning_rate = run.learning_rate;
    let config = dir.join("config.json");
    write_atomic(&config, echoed.to_json().as_bytes())?;
    let model = dir.join("model.json");
    save_model(&run.model, &model)?;
    let metrics = dir.join("metrics.csv");
    write_atomic(&metrics, metrics_csv(&run.history).as_bytes())?;
    let mut report = RunReport {
        output_dir: dir.clone(),
        learning_rate: run.learning_rate,
        final_test_acc: run.final_test_acc(),
        best_epoch: run.best_epoch(),
        model,
        metrics,
        config,
        quantized_model: None,
        required_bound: None,
        modulus: None,
    };
    if let Some(qc) = cfg.quant {
        let qm = quantize(&run.model, qc)?;
        // a bound past 64 bits leaves the modulus unset; the file is still
        // usable with the integer oracle or an explicit modulus
        let modulus = match cfg.modulus {
            Some(p) => Some(Modulus::new(p).map_err(QuantError::from)?),
            None => match auto_modulus(qm.required_bound()) {
                Ok(m) => Some(m),
                Err(QuantError::NoModulus { .. }) => None,
                Err(e) => return Err(e.into()),
            },
        };
        let path = dir.join("qmodel.json");
        let meta = QModelMeta {
            modulus,
            source_model: Some("model.json".into()),
        };
        save_quantized(&qm, &meta, &path)?;
        report.quantized_model = Some(path);
        report.required_bound = Some(qm.required_bound().to_string());
        report.modulus = modulus.map(Modulus::p);
    }
    Ok(report)
}

/// One scheme/seed cell of a comparison.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub scheme: String,
    pub dataset: String,
    pub seed: u64,
    /// `None` when the run diverged.
    pub final_test_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub learning_rate: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub history: Vec<EpochMetrics>,
}

pub const COMPARE_HEADER: &str = "scheme,dataset,seed,final_test_acc,best_epoch";
pub const CURVES_HEADER: &str = "scheme,dataset,seed,epoch,train_loss,train_acc,test_acc,lr";

/// Trains every scheme for every seed on the same data. Each seed fixes the
/// initialisation and batch order, so runs sharing a seed see identical data
/// order. A failing run is recorded in its row and the rest continue.
pub fn run_compare(
    base: &ExperimentConfig,
    schemes: &[Scheme],
    seeds: &[u64],
    train_set: &Dataset,
    test: &Dataset,
) -> Result<Vec<CompareRow>, ExperimentError> {
    if schemes.is_empty() || seeds.is_empty() {
        return Err(ExperimentError::Config(
            "compare needs at least one scheme and seed".into(),
        ));
    }
    let mut rows = Vec::with_capacity(schemes.len() * seeds.len());
    for &scheme in schemes {
        for &seed in seeds {
            let cfg = base.with_scheme_seed(scheme, seed);
            let mut row = CompareRow {
                scheme: scheme.to_string(),
                dataset: base.dataset.name().to_string(),
                seed,
                final_test_acc: None,
                best_epoch: None,
                learning_rate: None,
                error: None,
                history: Vec::new(),
            };
            match run_training(&cfg, train_set, test, |_| {}) {
                Ok(run) => {
                    row.final_test_acc = Some(run.final_test_acc());
                    row.best_epoch = Some(run.best_epoch());
                    row.learning_rate = Some(run.learning_rate);
                    row.history = run.history;
                }
                Err(ExperimentError::Nn(
                    e @ (NnError::Diverged { .. }
                    | NnError::NonFiniteGradient { .. }
                    | NnError::AllDiverged),
                )) => row.error = Some(e.to_string()),
                Err(e) => return Err(e),
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// One line per run; a diverged run leaves the accuracy and epoch empty.
pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{COMPARE_HEADER}\n");
    for r in rows {
        let acc = r.final_test_acc.map(|a| a.to_string()).unwrap_or_default();
        let best = r.best_epoch.map(|e| e.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{acc},{best}", r.scheme, r.dataset, r.seed).unwrap();
    }
    out
}

/// Per-epoch curves of every run, long format.
pub fn curves_csv(rows: &[CompareRow]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in rows {
        for m in &r.history {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.scheme, r.dataset, r.seed, m.epoch, m.train_loss, m.train_acc, m.test_acc, m.lr
            )
            .unwrap();
        }
    }
    out
}

/// Mean final test accuracy of a scheme over the seeds that finished.
pub fn mean_accuracy(rows: &[CompareRow], scheme: Scheme) -> Option<f64> {
    let name = scheme.to_string();
    let accs: Vec<f64> = rows
        .iter()
        .filter(|r| r.scheme == name)
        .filter_map(|r| r.final_test_acc)
        .collect();
    (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
}
