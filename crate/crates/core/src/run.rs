//! End-to-end commands: resolve data, build the model, train, and write the
//! run directory (`config.txt`, `metrics.csv`, `manifest.txt`,
//! `checkpoint_init/`, `checkpoint/`, plus images for the autoencoder).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{Command, RunConfig};
use crate::data::image::{load_rgb_square, write_ppm};
use crate::data::{load_cifar10, write_metrics, MetricRow, Split};
use crate::error::{Error, Result};
use crate::experiments::{train_cae, train_classifier, TrainOptions};
use crate::models::{build_cae, build_classifier, cae_pair, cae_rgb, CaeConfig, ClassifierConfig, Variant};
use crate::tensor::SeededRng;
use crate::vmap::save_checkpoint;

pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const INIT_CHECKPOINT_DIR: &str = "checkpoint_init";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.ppm";
pub const GRAY_FILE: &str = "gray.ppm";

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub rows: Vec<MetricRow>,
    /// Ordered `key = value` facts written to the run manifest.
    pub manifest: Vec<(String, String)>,
}

impl RunSummary {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.manifest.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out.join(METRICS_FILE)
    }
}

fn options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions {
        epochs: cfg.epochs,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        timing: cfg.timing,
    }
}

fn write_manifest(dir: &Path, facts: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in facts {
        let _ = writeln!(text, "{k} = {v}");
    }
    let path = dir.join(RUN_MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn fact(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

/// Trains the classifier on the first `subset` training images per class
/// and evaluates on the first `test_subset` test images per class.
pub fn run_train_classify(cfg: &RunConfig) -> Result<RunSummary> {
    if cfg.command != Command::TrainClassify {
        return Err(Error::Config("configuration is not for train-classify".into()));
    }
    let started = Instant::now();
    let train = load_cifar10(&cfg.data, Split::Train)?.first_per_class(cfg.subset);
    let test = load_cifar10(&cfg.data, Split::Test)?.first_per_class(cfg.test_subset);
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    cfg.write(&cfg.out)?;

    let root = SeededRng::new(cfg.seed);
    let mut model_cfg = ClassifierConfig::new(cfg.variant, cfg.d);
    model_cfg.l_mode = cfg.l_mode;
    let mut model = build_classifier(&model_cfg, &mut root.split("model"))?;
    let real = build_classifier(&ClassifierConfig::new(Variant::Real, 1), &mut root.split("reference"))?;
    save_checkpoint(&cfg.out.join(INIT_CHECKPOINT_DIR), &model.to_checkpoint())?;

    let rows = train_classifier(&mut model, &train, &test, &options(cfg), &mut root.split("shuffle"))?;
    write_metrics(&rows, &cfg.out.join(METRICS_FILE))?;
    save_checkpoint(&cfg.out.join(CHECKPOINT_DIR), &model.to_checkpoint())?;

    let final_test = rows.iter().rev().find(|r| r.split == "test").map(|r| r.metric1).unwrap_or(f64::NAN);
    let manifest = vec![
        fact("command", cfg.command.name()),
        fact("variant", cfg.variant.name()),
        fact("d", cfg.d),
        fact("train_images", train.len()),
        fact("test_images", test.len()),
        fact("params_total", model.param_count()),
        fact("params_conv", model.conv_param_count()),
        fact("real_params_total", real.param_count()),
        fact("real_params_conv", real.conv_param_count()),
        fact("final_test_accuracy", final_test),
        fact("wall_seconds", format!("{:.3}", started.elapsed().as_secs_f64())),
    ];
    write_manifest(&cfg.out, &manifest)?;
    Ok(RunSummary {
        out: cfg.out.clone(),
        rows,
        manifest,
    })
}

/// One-image colorization: trains on the gray version of `cfg.image` and
/// writes the reconstruction next to the gray input.
pub fn run_train_cae(cfg: &RunConfig) -> Result<RunSummary> {
    if cfg.command != Command::TrainCae {
        return Err(Error::Config("configuration is not for train-cae".into()));
    }
    let image = cfg
        .image
        .as_ref()
        .ok_or_else(|| Error::Config("train-cae needs an image path".into()))?;
    let started = Instant::now();
    let rgb = load_rgb_square(image, cfg.image_size)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    cfg.write(&cfg.out)?;

    let root = SeededRng::new(cfg.seed);
    let mut model_cfg = CaeConfig::new(cfg.variant, cfg.d);
    model_cfg.l_mode = cfg.l_mode;
    let mut model = build_cae(&model_cfg, &mut root.split("model"))?;
    save_checkpoint(&cfg.out.join(INIT_CHECKPOINT_DIR), &model.to_checkpoint())?;

    let outcome = train_cae(&mut model, &rgb, &options(cfg), cfg.log_every)?;
    write_metrics(&outcome.rows, &cfg.out.join(METRICS_FILE))?;
    save_checkpoint(&cfg.out.join(CHECKPOINT_DIR), &model.to_checkpoint())?;
    write_ppm(&cfg.out.join(RECONSTRUCTION_FILE), &outcome.reconstruction)?;
    let (x, _) = cae_pair(&rgb, model.input_channels())?;
    write_ppm(&cfg.out.join(GRAY_FILE), &cae_rgb(&x)?)?;

    let manifest = vec![
        fact("command", cfg.command.name()),
        fact("variant", cfg.variant.name()),
        fact("d", cfg.d),
        fact("image", image.display()),
        fact("model_channels", model.input_channels()),
        fact("params_total", model.param_count()),
        fact("psnr", outcome.psnr),
        fact("ssim", outcome.ssim),
        fact("gray_psnr", outcome.gray_psnr),
        fact("gray_ssim", outcome.gray_ssim),
        fact("wall_seconds", format!("{:.3}", started.elapsed().as_secs_f64())),
    ];
    write_manifest(&cfg.out, &manifest)?;
    Ok(RunSummary {
        out: cfg.out.clone(),
        rows: outcome.rows,
        manifest,
    })
}
