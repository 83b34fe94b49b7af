//! Typed experiment settings built from a [`ConfigFile`].

use std::path::PathBuf;

use serde::Serialize;
use subnetcl_core::data::{
    fewshot_sessions, gaussian_task, load_csv, load_idx, load_mnist_dir, permuted_tasks, split_tasks,
    synth_gaussian_tasks, SessionSpec, TaskStream, TrainTest,
};
use subnetcl_core::fscil::FscilConfig;
use subnetcl_core::nn::{OptimizerKind, OptimizerSpec};
use subnetcl_core::til::{TilMode, TilRunConfig};

use crate::config::ConfigFile;
use crate::error::CliError;

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub capacity: Option<f64>,
    pub mode: Option<TilMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum BaseSource {
    Gaussian {
        classes: usize,
        dim: usize,
        separation: f64,
        samples_per_class: usize,
    },
    Mnist {
        dir: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Gaussian {
        tasks: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        samples_per_class: usize,
    },
    Permuted {
        tasks: usize,
        base: BaseSource,
    },
    Split {
        classes_per_task: usize,
        base: BaseSource,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Limits {
    pub max_train: Option<usize>,
    pub max_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TilExperiment {
    pub seed: u64,
    pub data: DataSpec,
    pub limits: Limits,
    pub run: TilRunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FscilExperiment {
    pub seed: u64,
    pub base: BaseSource,
    pub limits: Limits,
    pub base_classes: usize,
    pub ways: usize,
    pub shots: usize,
    pub sessions: usize,
    pub run: FscilConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeSettings {
    pub scales: Vec<f64>,
    pub pairs: usize,
    pub probe_samples: usize,
}

fn seed(cfg: &mut ConfigFile, ov: &Overrides) -> Result<u64, CliError> {
    let from_file: Option<u64> = cfg.take("", "seed")?;
    ov.seed
        .or(from_file)
        .ok_or_else(|| CliError::config(format!("{}: no seed (set `seed` or pass --seed)", cfg.path().display())))
}

fn existing(cfg: &ConfigFile, path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::config(format!(
            "{}: referenced path {} does not exist",
            cfg.path().display(),
            path.display()
        )))
    }
}

fn need_path(cfg: &mut ConfigFile, key: &str) -> Result<PathBuf, CliError> {
    let p = cfg
        .take_path("data", key)
        .ok_or_else(|| CliError::config(format!("{}: missing `data.{key}`", cfg.path().display())))?;
    existing(cfg, p)
}

fn gaussian_fields(cfg: &mut ConfigFile) -> Result<(usize, usize, f64, usize), CliError> {
    Ok((
        cfg.take_or("data", "classes", 4)?,
        cfg.take_or("data", "dim", 16)?,
        cfg.take_or("data", "separation", 4.0)?,
        cfg.take_or("data", "samples_per_class", 100)?,
    ))
}

fn base_source(cfg: &mut ConfigFile) -> Result<BaseSource, CliError> {
    let kind = cfg.take_str("data", "base").unwrap_or_else(|| "gaussian".into());
    Ok(match kind.as_str() {
        "gaussian" => {
            let (classes, dim, separation, samples_per_class) = gaussian_fields(cfg)?;
            BaseSource::Gaussian {
                classes,
                dim,
                separation,
                samples_per_class,
            }
        }
        "mnist" => {
            let dir = cfg
                .take_path("data", "dir")
                .or_else(|| std::env::var_os("SUBNETCL_MNIST_DIR").map(PathBuf::from))
                .ok_or_else(|| {
                    CliError::config(format!(
                        "{}: missing `data.dir` and SUBNETCL_MNIST_DIR is unset",
                        cfg.path().display()
                    ))
                })?;
            BaseSource::Mnist { dir: existing(cfg, dir)? }
        }
        "csv" => BaseSource::Csv {
            train: need_path(cfg, "train")?,
            test: need_path(cfg, "test")?,
        },
        "idx" => BaseSource::Idx {
            train_images: need_path(cfg, "train_images")?,
            train_labels: need_path(cfg, "train_labels")?,
            test_images: need_path(cfg, "test_images")?,
            test_labels: need_path(cfg, "test_labels")?,
            classes: cfg.take_or("data", "classes", 10)?,
        },
        other => {
            return Err(CliError::config(format!(
                "{}: unknown data.base `{other}` (gaussian, mnist, csv, idx)",
                cfg.path().display()
            )))
        }
    })
}

fn limits(cfg: &mut ConfigFile) -> Result<Limits, CliError> {
    Ok(Limits {
        max_train: cfg.take("data", "max_train")?,
        max_test: cfg.take("data", "max_test")?,
    })
}

fn optimizer(cfg: &mut ConfigFile, section: &str, default_lr: f64) -> Result<OptimizerSpec, CliError> {
    let lr = cfg.take_or(section, "lr", default_lr)?;
    match cfg.take_str(section, "optimizer").as_deref().unwrap_or("adam") {
        "adam" => Ok(OptimizerSpec {
            kind: OptimizerKind::adam(),
            lr,
        }),
        "sgd" => Ok(OptimizerSpec::sgd(lr)),
        other => Err(CliError::config(format!("unknown optimizer `{other}` (adam, sgd)"))),
    }
}

fn hidden(cfg: &mut ConfigFile) -> Result<Vec<usize>, CliError> {
    Ok(cfg.take_list("model", "hidden")?.unwrap_or_else(|| vec![64, 64]))
}

pub fn til_experiment(mut cfg: ConfigFile, ov: &Overrides) -> Result<(TilExperiment, Option<AnalyzeSettings>), CliError> {
    let seed = seed(&mut cfg, ov)?;
    let kind = cfg.take_str("data", "kind").unwrap_or_else(|| "gaussian".into());
    let data = match kind.as_str() {
        "gaussian" => {
            let tasks = cfg.take_or("data", "tasks", 5)?;
            let (classes, dim, separation, samples_per_class) = gaussian_fields(&mut cfg)?;
            DataSpec::Gaussian {
                tasks,
                classes,
                dim,
                separation,
                samples_per_class,
            }
        }
        "permuted" => DataSpec::Permuted {
            tasks: cfg.take_or("data", "tasks", 10)?,
            base: base_source(&mut cfg)?,
        },
        "split" => DataSpec::Split {
            classes_per_task: cfg.require("data", "classes_per_task")?,
            base: base_source(&mut cfg)?,
        },
        other => {
            return Err(CliError::config(format!(
                "{}: unknown data.kind `{other}` (gaussian, permuted, split)",
                cfg.path().display()
            )))
        }
    };
    let limits = limits(&mut cfg)?;
    let hidden = hidden(&mut cfg)?;
    let defaults = TilRunConfig::default();
    let mode = match cfg.take_str("til", "mode") {
        Some(m) => m.parse().map_err(CliError::from)?,
        None => defaults.mode,
    };
    let run = TilRunConfig {
        capacity: ov.capacity.map_or_else(|| cfg.take_or("til", "capacity", defaults.capacity), Ok)?,
        epochs: cfg.take_or("til", "epochs", defaults.epochs)?,
        batch_size: cfg.take_or("til", "batch_size", defaults.batch_size)?,
        optimizer: optimizer(&mut cfg, "til", 1e-3)?,
        seed,
        mode: ov.mode.unwrap_or(mode),
        epsilon: cfg.take_or("til", "epsilon", defaults.epsilon)?,
        hidden,
        forward_transfer: cfg.take_or("til", "forward_transfer", true)?,
    };
    if ov.capacity.is_some() {
        cfg.take_str("til", "capacity");
    }
    run.validate()?;
    let analyze = analyze_settings(&mut cfg)?;
    cfg.finish()?;
    Ok((TilExperiment { seed, data, limits, run }, analyze))
}

fn analyze_settings(cfg: &mut ConfigFile) -> Result<Option<AnalyzeSettings>, CliError> {
    if !cfg.has_section("analyze") {
        return Ok(None);
    }
    let s = AnalyzeSettings {
        scales: cfg.take_list("analyze", "scales")?.unwrap_or_else(|| vec![1e-3, 1e-2, 1e-1]),
        pairs: cfg.take_or("analyze", "pairs", 8)?,
        probe_samples: cfg.take_or("analyze", "probe_samples", 256)?,
    };
    if s.scales.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(CliError::config("analyze.scales must be positive"));
    }
    Ok(Some(s))
}

pub fn fscil_experiment(mut cfg: ConfigFile, ov: &Overrides) -> Result<FscilExperiment, CliError> {
    let seed = seed(&mut cfg, ov)?;
    let base = base_source(&mut cfg)?;
    let limits = limits(&mut cfg)?;
    let hidden = hidden(&mut cfg)?;
    let d = FscilConfig::default();
    let run = FscilConfig {
        capacity: ov.capacity.map_or_else(|| cfg.take_or("fscil", "capacity", d.capacity), Ok)?,
        base_epochs: cfg.take_or("fscil", "base_epochs", d.base_epochs)?,
        base_batch_size: cfg.take_or("fscil", "base_batch_size", d.base_batch_size)?,
        base_optimizer: optimizer(&mut cfg, "fscil", d.base_optimizer.lr)?,
        incremental_epochs: cfg.take_or("fscil", "incremental_epochs", d.incremental_epochs)?,
        incremental_lr: cfg.take_or("fscil", "incremental_lr", d.incremental_lr)?,
        incremental_batch_size: cfg.take_or("fscil", "incremental_batch_size", d.incremental_batch_size)?,
        temperature: cfg.take_or("fscil", "temperature", d.temperature)?,
        seed,
        hidden,
        reference: cfg.take_list("fscil", "reference")?,
    };
    if ov.capacity.is_some() {
        cfg.take_str("fscil", "capacity");
    }
    let exp = FscilExperiment {
        seed,
        base,
        limits,
        base_classes: cfg.require("fscil", "base_classes")?,
        ways: cfg.take_or("fscil", "ways", 5)?,
        shots: cfg.take_or("fscil", "shots", 5)?,
        sessions: cfg.take_or("fscil", "sessions", 1)?,
        run,
    };
    exp.run.validate()?;
    cfg.finish()?;
    Ok(exp)
}

fn truncate(tt: TrainTest, limits: &Limits) -> TrainTest {
    let cut = |ds: subnetcl_core::data::Dataset, n: Option<usize>| match n {
        Some(n) if n < ds.len() => ds.subset(&(0..n).collect::<Vec<_>>()),
        _ => ds,
    };
    TrainTest {
        train: cut(tt.train, limits.max_train),
        test: cut(tt.test, limits.max_test),
    }
}

pub fn load_base(base: &BaseSource, limits: &Limits, seed: u64) -> Result<TrainTest, CliError> {
    let tt = match base {
        BaseSource::Gaussian {
            classes,
            dim,
            separation,
            samples_per_class,
        } => gaussian_task(*classes, *dim, *separation, *samples_per_class, seed, 0)?,
        BaseSource::Mnist { dir } => load_mnist_dir(dir)?,
        BaseSource::Csv { train, test } => {
            let train = load_csv(train, None)?;
            let test = load_csv(test, Some(train.classes))?;
            TrainTest { train, test }
        }
        BaseSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
        } => TrainTest {
            train: load_idx(train_images, train_labels, *classes)?,
            test: load_idx(test_images, test_labels, *classes)?,
        },
    };
    Ok(truncate(tt, limits))
}

pub fn build_stream(exp: &TilExperiment) -> Result<TaskStream, CliError> {
    let mut stream = match &exp.data {
        DataSpec::Gaussian {
            tasks,
            classes,
            dim,
            separation,
            samples_per_class,
        } => synth_gaussian_tasks(*tasks, *classes, *dim, *separation, *samples_per_class, exp.seed)?,
        DataSpec::Permuted { tasks, base } => permuted_tasks(&load_base(base, &exp.limits, exp.seed)?, *tasks, exp.seed)?,
        DataSpec::Split { classes_per_task, base } => {
            split_tasks(&load_base(base, &exp.limits, exp.seed)?, *classes_per_task)?
        }
    };
    if matches!(exp.data, DataSpec::Gaussian { .. }) {
        let lim = &exp.limits;
        for t in stream.tasks.iter_mut() {
            let tt = truncate(
                TrainTest {
                    train: t.train.clone(),
                    test: t.test.clone(),
                },
                lim,
            );
            t.train = tt.train;
            t.test = tt.test;
        }
    }
    Ok(stream)
}

pub fn build_sessions(exp: &FscilExperiment) -> Result<Vec<SessionSpec>, CliError> {
    let base = load_base(&exp.base, &exp.limits, exp.seed)?;
    Ok(fewshot_sessions(
        &base,
        exp.base_classes,
        exp.ways,
        exp.shots,
        exp.sessions,
        exp.seed,
    )?)
}
