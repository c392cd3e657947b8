//! Run configuration: `key = value` files plus overrides, where later
//! sources win. Keys accept `-` or `_` interchangeably; `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::models::Variant;
use crate::vmap::LMode;

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    TrainClassify,
    TrainCae,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::TrainClassify => "train-classify",
            Command::TrainCae => "train-cae",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub variant: Variant,
    pub d: usize,
    pub seed: u64,
    pub epochs: u32,
    pub lr: f64,
    pub batch_size: usize,
    /// Directory holding the CIFAR-10 binary batches.
    pub data: PathBuf,
    /// Training images per class.
    pub subset: usize,
    /// Test images per class.
    pub test_subset: usize,
    pub out: PathBuf,
    pub l_mode: LMode,
    pub image: Option<PathBuf>,
    pub image_size: usize,
    pub log_every: u32,
    /// Write wall time into the metrics CSV (breaks byte-identical reruns).
    pub timing: bool,
}

const KEYS: [&str; 16] = [
    "command",
    "variant",
    "d",
    "seed",
    "epochs",
    "lr",
    "batch_size",
    "data",
    "subset",
    "test_subset",
    "out",
    "l_mode",
    "image",
    "image_size",
    "log_every",
    "timing",
];

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let base = RunConfig {
            command,
            variant: Variant::Vmap,
            d: 3,
            seed: 42,
            epochs: 10,
            lr: 2e-3,
            batch_size: 32,
            data: PathBuf::from("data/cifar-10-batches-bin"),
            subset: 500,
            test_subset: 100,
            out: PathBuf::from("runs/classify"),
            l_mode: LMode::Pattern,
            image: None,
            image_size: 64,
            log_every: 100,
            timing: false,
        };
        match command {
            Command::TrainClassify => base,
            Command::TrainCae => RunConfig {
                epochs: 3000,
                lr: 5e-4,
                batch_size: 1,
                out: PathBuf::from("runs/cae"),
                ..base
            },
        }
    }

    /// Defaults, then `file` entries, then `overrides` in order.
    pub fn resolve(command: Command, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::defaults(command);
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (key, value) in parse_pairs(&text)? {
                cfg.set(&key, &value)?;
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("invalid {what} {value:?}"));
        match key.as_str() {
            "command" => {
                if value != self.command.name() {
                    return Err(Error::Config(format!(
                        "config is for {value:?} but the command is {}",
                        self.command.name()
                    )));
                }
            }
            "variant" => self.variant = Variant::parse(value)?,
            "d" => self.d = value.parse().ok().filter(|&d| d >= 1).ok_or_else(|| bad("d"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("epochs"))?,
            "lr" => self.lr = value.parse().ok().filter(|v: &f64| *v > 0.0 && v.is_finite()).ok_or_else(|| bad("lr"))?,
            "batch_size" => self.batch_size = value.parse().ok().filter(|&b| b >= 1).ok_or_else(|| bad("batch size"))?,
            "data" => self.data = PathBuf::from(value),
            "subset" => self.subset = value.parse().ok().filter(|&s| s >= 1).ok_or_else(|| bad("subset"))?,
            "test_subset" => self.test_subset = value.parse().ok().filter(|&s| s >= 1).ok_or_else(|| bad("test subset"))?,
            "out" => self.out = PathBuf::from(value),
            "l_mode" => self.l_mode = LMode::parse(value).map_err(|_| bad("l_mode"))?,
            "image" => self.image = Some(PathBuf::from(value)),
            "image_size" => {
                self.image_size = value
                    .parse()
                    .ok()
                    .filter(|&s: &usize| s >= 4 && s % 4 == 0)
                    .ok_or_else(|| bad("image size (multiple of 4)"))?
            }
            "log_every" => self.log_every = value.parse().ok().filter(|&s| s >= 1).ok_or_else(|| bad("log_every"))?,
            "timing" => self.timing = value.parse().map_err(|_| bad("timing"))?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// The resolved configuration as a parseable `key = value` file.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "command" => self.command.name().to_string(),
                "variant" => self.variant.name().to_string(),
                "d" => self.d.to_string(),
                "seed" => self.seed.to_string(),
                "epochs" => self.epochs.to_string(),
                "lr" => format!("{}", self.lr),
                "batch_size" => self.batch_size.to_string(),
                "data" => self.data.display().to_string(),
                "subset" => self.subset.to_string(),
                "test_subset" => self.test_subset.to_string(),
                "out" => self.out.display().to_string(),
                "l_mode" => self.l_mode.name().to_string(),
                "image" => match &self.image {
                    Some(p) => p.display().to_string(),
                    None => continue,
                },
                "image_size" => self.image_size.to_string(),
                "log_every" => self.log_every.to_string(),
                "timing" => self.timing.to_string(),
                _ => unreachable!(),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.render()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}
