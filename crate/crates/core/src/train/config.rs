//! Optimizer and fine-tuning hyper-parameters, plus the `key = value` config format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_every: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to biases as well as weights.
    pub decay_biases: bool,
    pub batch_size: usize,
    pub max_iterations: u64,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            base_lr: 0.01,
            lr_drop_factor: 10.0,
            lr_drop_every: 100_000,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_biases: true,
            batch_size: 64,
            max_iterations: 250_000,
            seed: 0,
        }
    }
}

impl SgdConfig {
    /// Fine-tuning schedule: lr 0.001 dropping ×10 every 10k iterations.
    pub fn finetune() -> Self {
        SgdConfig {
            base_lr: 0.001,
            lr_drop_every: 10_000,
            max_iterations: 20_000,
            ..SgdConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.lr_drop_factor >= 1.0 && self.lr_drop_factor.is_finite()) {
            return Err(Error::config(format!("lr_drop_factor must be ≥ 1, got {}", self.lr_drop_factor)));
        }
        if self.lr_drop_every == 0 {
            return Err(Error::config("lr_drop_every must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting; returns false for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "base_lr" => self.base_lr = parse(key, value)?,
            "lr_drop_factor" => self.lr_drop_factor = parse(key, value)?,
            "lr_drop_every" => self.lr_drop_every = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "decay_biases" => self.decay_biases = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_iterations" => self.max_iterations = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcnConfig {
    /// Branches per ensemble sample.
    pub n: usize,
    pub sgd: SgdConfig,
    /// Share of the attainable patch accuracy a warm checkpoint must reach.
    pub warm_fraction: f64,
}

impl Default for EcnConfig {
    fn default() -> Self {
        EcnConfig {
            n: 10,
            sgd: SgdConfig::finetune(),
            warm_fraction: 0.925,
        }
    }
}

impl EcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("N must be at least 1"));
        }
        if !(self.warm_fraction > 0.0 && self.warm_fraction <= 1.0) {
            return Err(Error::config(format!(
                "warm_fraction must lie in (0,1], got {}",
                self.warm_fraction
            )));
        }
        self.sgd.validate()
    }

    /// `n` and `warm_fraction` are owned here; everything else goes to the fine-tune schedule.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "n" => self.n = parse(key, value)?,
            "warm_fraction" => self.warm_fraction = parse(key, value)?,
            _ => return self.sgd.set(key, value),
        }
        Ok(true)
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for {key}")))
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_key_values(text: &str, context: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(context, format!("line {}: expected key = value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::format(context, format!("line {}: empty key", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = SgdConfig::default();
        assert_eq!((s.base_lr, s.lr_drop_every, s.momentum, s.weight_decay, s.batch_size), (0.01, 100_000, 0.9, 5e-4, 64));
        let e = EcnConfig::default();
        assert_eq!((e.n, e.sgd.base_lr, e.sgd.lr_drop_every, e.warm_fraction), (10, 0.001, 10_000, 0.925));
        s.validate().unwrap();
        e.validate().unwrap();
    }

    #[test]
    fn invalid_values() {
        for cfg in [
            SgdConfig { base_lr: 0.0, ..SgdConfig::default() },
            SgdConfig { momentum: 1.0, ..SgdConfig::default() },
            SgdConfig { weight_decay: -1.0, ..SgdConfig::default() },
            SgdConfig { batch_size: 0, ..SgdConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        assert!(EcnConfig { n: 0, ..EcnConfig::default() }.validate().is_err());
        assert!(EcnConfig { warm_fraction: 1.5, ..EcnConfig::default() }.validate().is_err());
    }

    #[test]
    fn key_value_file() {
        let text = "# run\nbase_lr = 0.05\n\nn=4 # branches\nbatch_size = 32\nprofile = mini\n";
        let kv = parse_key_values(text, "cfg").unwrap();
        let mut e = EcnConfig::default();
        let mut unknown = vec![];
        for (k, v) in &kv {
            if !e.set(k, v).unwrap() {
                unknown.push(k.clone());
            }
        }
        assert_eq!((e.n, e.sgd.base_lr, e.sgd.batch_size), (4, 0.05, 32));
        assert_eq!(unknown, ["profile"]);
        assert!(parse_key_values("oops\n", "cfg").unwrap_err().to_string().contains("line 1"));
        assert!(e.set("momentum", "abc").is_err());
    }
}
