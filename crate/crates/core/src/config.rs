//! Flat key-value run configuration with `#` comments. CLI flags override
//! file values; the resolved config is echoed into every output directory
//! as `effective-config`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // model
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub window_len: usize,
    // training
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_lr: f64,
    pub grad_clip: f64,
    pub eval_patience: usize,
    pub eval_fraction: f64,
    // bootstrap
    pub bootstrap_b: usize,
    pub bootstrap_level: f64,
    // data / misc
    pub test_regions: Vec<String>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hidden_dim: 100,
            num_layers: 3,
            window_len: 5,
            lr0: 1e-4,
            plateau_factor: 0.3,
            plateau_patience: 20,
            batch_size: 32,
            max_epochs: 500,
            min_lr: 1e-7,
            grad_clip: 5.0,
            eval_patience: 50,
            eval_fraction: 0.2,
            bootstrap_b: 30,
            bootstrap_level: 0.95,
            test_regions: Vec::new(),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("bad value '{value}' for config key {key}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "num_layers" => self.num_layers = parse(key, value)?,
            "window_len" => self.window_len = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "plateau_factor" => self.plateau_factor = parse(key, value)?,
            "plateau_patience" => self.plateau_patience = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "min_lr" => self.min_lr = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "eval_patience" => self.eval_patience = parse(key, value)?,
            "eval_fraction" => self.eval_fraction = parse(key, value)?,
            "bootstrap_b" => self.bootstrap_b = parse(key, value)?,
            "bootstrap_level" => self.bootstrap_level = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "test_regions" => {
                self.test_regions = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
            }
            _ => return Err(Error::Usage(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Usage(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    line_no + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Canonical echo written as `effective-config`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "num_layers = {}", self.num_layers);
        let _ = writeln!(s, "window_len = {}", self.window_len);
        let _ = writeln!(s, "lr0 = {}", self.lr0);
        let _ = writeln!(s, "plateau_factor = {}", self.plateau_factor);
        let _ = writeln!(s, "plateau_patience = {}", self.plateau_patience);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "min_lr = {}", self.min_lr);
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip);
        let _ = writeln!(s, "eval_patience = {}", self.eval_patience);
        let _ = writeln!(s, "eval_fraction = {}", self.eval_fraction);
        let _ = writeln!(s, "bootstrap_b = {}", self.bootstrap_b);
        let _ = writeln!(s, "bootstrap_level = {}", self.bootstrap_level);
        let _ = writeln!(s, "test_regions = {}", self.test_regions.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn train_config(&self) -> crate::train::TrainConfig {
        crate::train::TrainConfig {
            lr0: self.lr0,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            min_lr: self.min_lr,
            seed: self.seed,
            grad_clip: if self.grad_clip > 0.0 {
                Some(self.grad_clip)
            } else {
                None
            },
            eval_patience: self.eval_patience,
            eval_min_delta: 1e-6,
        }
    }
}
