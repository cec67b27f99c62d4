use std::path::{Path, PathBuf};

use crate::data::{gen_teacher_student, load_text_corpus, TaskData};
use crate::error::{Error, Result};
use crate::model::{Activation, LossKind};
use crate::optim::HyperParams;
use crate::scaling::{OptimizerKind, ParamScheme};

#[derive(Clone, Debug, PartialEq)]
pub enum TaskSpec {
    TeacherStudent {
        input_dim: usize,
        output_dim: usize,
        n_train: usize,
        n_val: usize,
        teacher_width: usize,
        data_seed: u64,
    },
    CharLm {
        path: PathBuf,
        context_len: usize,
        val_fraction: f64,
    },
}

impl TaskSpec {
    pub fn load(&self) -> Result<TaskData> {
        match self {
            TaskSpec::TeacherStudent {
                input_dim,
                output_dim,
                n_train,
                n_val,
                teacher_width,
                data_seed,
            } => Ok(gen_teacher_student(*data_seed, *input_dim, *output_dim, *n_train, *n_val, *teacher_width)?.0),
            TaskSpec::CharLm {
                path,
                context_len,
                val_fraction,
            } => load_text_corpus(path, *context_len, *val_fraction),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub optimizer: OptimizerKind,
    pub scheme: ParamScheme,
    pub widths: Vec<usize>,
    pub depth: usize,
    pub lr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    /// Shared by every width.
    pub batch_size: usize,
    pub activation: Activation,
    /// Defaults to the task's natural loss.
    pub loss: Option<LossKind>,
    /// `hp.eta` is the base rate for coordinate checks and probes; sweeps
    /// replace it with each grid value.
    pub hp: HyperParams,
    pub probe_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::TeacherStudent {
                input_dim: 16,
                output_dim: 4,
                n_train: 512,
                n_val: 128,
                teacher_width: 64,
                data_seed: 0,
            },
            optimizer: OptimizerKind::AdamW,
            scheme: ParamScheme::MuP,
            widths: vec![64, 128, 256, 512],
            depth: 3,
            lr_grid: (1..=7).map(|k| 2f64.powi(-k)).collect(),
            seeds: vec![0, 1, 2],
            steps: 500,
            batch_size: 32,
            activation: Activation::Tanh,
            loss: None,
            hp: HyperParams::default(),
            probe_size: 64,
        }
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip(e))))
    }

    /// Sets one key. Dashes and underscores in keys are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim();
        match key.as_str() {
            "task" => self.set_task(value)?,
            "input_dim" | "output_dim" | "n_train" | "n_val" | "teacher_width" | "data_seed" => {
                let TaskSpec::TeacherStudent {
                    input_dim,
                    output_dim,
                    n_train,
                    n_val,
                    teacher_width,
                    data_seed,
                } = &mut self.task
                else {
                    return Err(Error::Config(format!("`{key}` only applies to the teacher_student task")));
                };
                match key.as_str() {
                    "input_dim" => *input_dim = parse_num(&key, value)?,
                    "output_dim" => *output_dim = parse_num(&key, value)?,
                    "n_train" => *n_train = parse_num(&key, value)?,
                    "n_val" => *n_val = parse_num(&key, value)?,
                    "teacher_width" => *teacher_width = parse_num(&key, value)?,
                    _ => *data_seed = parse_num(&key, value)?,
                }
            }
            "corpus" | "context_len" | "val_fraction" => {
                let TaskSpec::CharLm {
                    path,
                    context_len,
                    val_fraction,
                } = &mut self.task
                else {
                    return Err(Error::Config(format!("`{key}` only applies to the char_lm task")));
                };
                match key.as_str() {
                    "corpus" => *path = PathBuf::from(value),
                    "context_len" => *context_len = parse_num(&key, value)?,
                    _ => *val_fraction = parse_float(&key, value)?,
                }
            }
            "optimizer" => self.optimizer = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "widths" => self.widths = parse_list(&key, value, parse_num)?,
            "depth" => self.depth = parse_num(&key, value)?,
            "lr_grid" => self.lr_grid = parse_list(&key, value, parse_float)?,
            "seeds" => self.seeds = parse_list(&key, value, parse_num)?,
            "steps" => self.steps = parse_num(&key, value)?,
            "batch_size" => self.batch_size = parse_num(&key, value)?,
            "activation" => self.activation = value.parse()?,
            "loss" => self.loss = Some(value.parse()?),
            "probe_size" => self.probe_size = parse_num(&key, value)?,
            "eta" => self.hp.eta = parse_float(&key, value)?,
            "beta1" => self.hp.beta1 = parse_float(&key, value)?,
            "beta2" => self.hp.beta2 = parse_float(&key, value)?,
            "eps" => self.hp.eps = parse_float(&key, value)?,
            "lambda" | "weight_decay" => self.hp.lambda = parse_float(&key, value)?,
            "gamma" => self.hp.gamma = parse_float(&key, value)?,
            "delta" => self.hp.delta = parse_float(&key, value)?,
            "mu" => self.hp.mu = parse_float(&key, value)?,
            "ns_iters" => self.hp.ns_iters = parse_num(&key, value)?,
            "hess_interval" => self.hp.hess_interval = parse_num(&key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn set_task(&mut self, value: &str) -> Result<()> {
        match value.to_ascii_lowercase().replace('-', "_").as_str() {
            "teacher_student" => {
                if !matches!(self.task, TaskSpec::TeacherStudent { .. }) {
                    self.task = Self::default().task;
                }
            }
            "char_lm" => {
                if !matches!(self.task, TaskSpec::CharLm { .. }) {
                    self.task = TaskSpec::CharLm {
                        path: PathBuf::new(),
                        context_len: 8,
                        val_fraction: 0.1,
                    };
                }
            }
            other => return Err(Error::Config(format!("unknown task `{other}`"))),
        }
        Ok(())
    }

    pub fn loss_for(&self, data: &TaskData) -> LossKind {
        self.loss.unwrap_or_else(|| data.natural_loss())
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.lr_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("widths, lr_grid and seeds must all be nonempty".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("widths must be positive".into()));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("widths must be strictly ascending".into()));
        }
        if let Some(lr) = self.lr_grid.iter().find(|lr| !(**lr >= 0.0 && lr.is_finite())) {
            return Err(Error::Config(format!("learning rates must be finite and nonnegative, got {lr}")));
        }
        if self.depth < 2 {
            return Err(Error::Config(format!("depth must be at least 2, got {}", self.depth)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.probe_size == 0 {
            return Err(Error::Config("probe_size must be at least 1".into()));
        }
        if let TaskSpec::TeacherStudent {
            input_dim,
            output_dim,
            n_train,
            n_val,
            teacher_width,
            ..
        } = &self.task
        {
            if [*input_dim, *output_dim, *n_train, *n_val, *teacher_width].contains(&0) {
                return Err(Error::Config("teacher_student dimensions must be positive".into()));
            }
            if self.batch_size > *n_train {
                return Err(Error::Config(format!(
                    "batch_size {} exceeds n_train {n_train}",
                    self.batch_size
                )));
            }
        }
        if let TaskSpec::CharLm { path, .. } = &self.task {
            if path.as_os_str().is_empty() {
                return Err(Error::Config("char_lm needs a `corpus` path".into()));
            }
        }
        self.hp
            .validate()
            .map_err(|e| Error::Config(strip(e)))
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}` expects a nonnegative integer, got `{value}`")))
}

/// Plain decimals or powers of two written as `2^k`.
fn parse_float(key: &str, value: &str) -> Result<f64> {
    let v = value.trim();
    let parsed = match v.strip_prefix("2^") {
        Some(exp) => exp.trim().parse::<i32>().ok().map(|k| 2f64.powi(k)),
        None => v.parse::<f64>().ok(),
    };
    parsed
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("`{key}` expects a number, got `{value}`")))
}

fn parse_list<T>(key: &str, value: &str, f: fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(key, s))
        .collect()
}
