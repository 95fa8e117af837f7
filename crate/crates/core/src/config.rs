//! Flat `key = value` run configuration with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::centroid::CentroidConfig;
use crate::data::{AugmentConfig, GenerateConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::head::ClassifierConfig;
use crate::model::{Architecture, ModelConfig};
use crate::nncore::AdamConfig;
use crate::trainer::{IncrementalSchedule, RunSpec, Selection, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub data_seed: u64,

    pub states: usize,
    pub exemplars: usize,
    pub selection: Selection,
    pub seed: u64,

    pub widths: Vec<usize>,
    pub tap: usize,
    pub structures: usize,
    pub neighbors: usize,
    pub refine_iters: usize,
    pub reduction: usize,
    pub hidden: [usize; 3],

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub augment: bool,

    pub agc: bool,
    pub gaa: bool,
    pub sfc: bool,
    pub joint: bool,
    pub record_wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let enc = EncoderConfig::default();
        let cen = CentroidConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            dataset: None,
            classes: 10,
            train_per_class: 64,
            test_per_class: 50,
            points: 256,
            data_seed: 0,
            states: 5,
            exemplars: 60,
            selection: Selection::Herding,
            seed: 0,
            widths: enc.widths,
            tap: enc.tap,
            structures: cen.structures,
            neighbors: cen.neighbors,
            refine_iters: cen.refine_iters,
            reduction: 4,
            hidden: ClassifierConfig::default().hidden,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: adam.lr,
            weight_decay: adam.weight_decay,
            augment: true,
            agc: true,
            gaa: true,
            sfc: true,
            joint: false,
            record_wall_clock: false,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, found `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|t| parse_num(key, t.trim())).collect()
}

fn list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Small preset that runs a five-state benchmark in well under a minute.
    pub fn desk() -> Self {
        RunConfig {
            points: 128,
            widths: vec![3, 16, 32, 32],
            structures: 32,
            neighbors: 16,
            hidden: [32, 32, 16],
            epochs: 30,
            ..RunConfig::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "classes" => self.classes = parse_num(key, v)?,
            "train_per_class" => self.train_per_class = parse_num(key, v)?,
            "test_per_class" => self.test_per_class = parse_num(key, v)?,
            "points" => self.points = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "states" => self.states = parse_num(key, v)?,
            "exemplars" => self.exemplars = parse_num(key, v)?,
            "selection" => {
                self.selection = match v {
                    "herding" => Selection::Herding,
                    "random" => Selection::Random,
                    _ => {
                        return Err(Error::Config(format!(
                            "selection: expected herding or random, found `{v}`"
                        )))
                    }
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "widths" => self.widths = parse_list(key, v)?,
            "tap" => self.tap = parse_num(key, v)?,
            "structures" => self.structures = parse_num(key, v)?,
            "neighbors" => self.neighbors = parse_num(key, v)?,
            "refine_iters" => self.refine_iters = parse_num(key, v)?,
            "reduction" => self.reduction = parse_num(key, v)?,
            "hidden" => {
                let h = parse_list(key, v)?;
                self.hidden = h
                    .try_into()
                    .map_err(|_| Error::Config("hidden: expected three widths".into()))?;
            }
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "agc" => self.agc = parse_bool(key, v)?,
            "gaa" => self.gaa = parse_bool(key, v)?,
            "sfc" => self.sfc = parse_bool(key, v)?,
            "joint" => self.joint = parse_bool(key, v)?,
            "record_wall_clock" => self.record_wall_clock = parse_bool(key, v)?,
            "preset" => {
                let keep = self.clone();
                *self = match v {
                    "default" => RunConfig::default(),
                    "desk" => RunConfig::desk(),
                    _ => return Err(Error::Config(format!("preset: expected default or desk, found `{v}`"))),
                };
                self.dataset = keep.dataset;
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` or `key = value` text on top of `self`.
    pub fn apply_text(&mut self, text: &str, source_name: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source_name}:{}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{source_name}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text, source_name)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// The full effective configuration, parseable by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let b = |v: bool| if v { "true" } else { "false" };
        let dataset = self
            .dataset
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let selection = match self.selection {
            Selection::Herding => "herding",
            Selection::Random => "random",
        };
        let _ = writeln!(s, "dataset = {dataset}");
        let _ = writeln!(s, "classes = {}", self.classes);
        let _ = writeln!(s, "train_per_class = {}", self.train_per_class);
        let _ = writeln!(s, "test_per_class = {}", self.test_per_class);
        let _ = writeln!(s, "points = {}", self.points);
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "states = {}", self.states);
        let _ = writeln!(s, "exemplars = {}", self.exemplars);
        let _ = writeln!(s, "selection = {selection}");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "widths = {}", list(&self.widths));
        let _ = writeln!(s, "tap = {}", self.tap);
        let _ = writeln!(s, "structures = {}", self.structures);
        let _ = writeln!(s, "neighbors = {}", self.neighbors);
        let _ = writeln!(s, "refine_iters = {}", self.refine_iters);
        let _ = writeln!(s, "reduction = {}", self.reduction);
        let _ = writeln!(s, "hidden = {}", list(&self.hidden));
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "weight_decay = {:?}", self.weight_decay);
        let _ = writeln!(s, "augment = {}", b(self.augment));
        let _ = writeln!(s, "agc = {}", b(self.agc));
        let _ = writeln!(s, "gaa = {}", b(self.gaa));
        let _ = writeln!(s, "sfc = {}", b(self.sfc));
        let _ = writeln!(s, "joint = {}", b(self.joint));
        let _ = writeln!(s, "record_wall_clock = {}", b(self.record_wall_clock));
        s
    }

    pub fn generate_config(&self) -> GenerateConfig {
        GenerateConfig {
            num_classes: self.classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            points: self.points,
            seed: self.data_seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                widths: self.widths.clone(),
                tap: self.tap,
            },
            centroid: CentroidConfig {
                structures: self.structures,
                neighbors: self.neighbors,
                refine_iters: self.refine_iters,
            },
            reduction: self.reduction,
            classifier: ClassifierConfig { hidden: self.hidden },
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            adaptive_centroids: self.agc,
            attention: self.gaa,
        }
    }

    /// Run description for a dataset with `classes` classes.
    pub fn run_spec(&self, classes: usize) -> Result<RunSpec> {
        let model = self.model_config();
        model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(
                "lr must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(RunSpec {
            model,
            arch: self.architecture(),
            train: TrainConfig {
                epochs: self.epochs,
                batch_size: self.batch_size,
                adam: AdamConfig {
                    lr: self.lr,
                    weight_decay: self.weight_decay,
                    ..AdamConfig::default()
                },
                augment: self.augment.then(AugmentConfig::default),
            },
            schedule: IncrementalSchedule::uniform(classes, self.states, self.exemplars, self.seed)?,
            selection: self.selection,
            compensation: self.sfc,
            joint: self.joint,
        })
    }
}
