//! Plain-text `key = value` configuration.
//!
//! One setting per line; `#` starts a comment; blank lines are ignored. Keys:
//!
//! | key | meaning |
//! |-----|---------|
//! | `preset` | loss preset (`base`, `base+f`, `base+fkl`, `base+vgg`, `base+vggkl`, `full`) |
//! | `weight.<column>` | overrides one preset weight, e.g. `weight.l_fkl = 0.05` |
//! | `steps`, `lr`, `batch_size`, `crop`, `seed` | training loop |
//! | `width`, `heads`, `leaky_slope`, `se_reduction`, `dance_reduction`, `iel_expansion`, `residual`, `network_seed` | network |
//! | `output` | output directory |
//! | `train_count`, `test_count`, `image_size`, `data_seed` | synthetic data |
//! | `data` | directory of paired `low/` and `high/` PNGs, used instead of synthetic data |
//! | `fkl_weights` | comma-separated Fourier-KL weights for the sweep |
//!
//! Command-line flags map onto the same keys and take precedence over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::train::{TrainConfig, SWEEP_WEIGHTS};
use crate::error::{Error, Result};
use crate::losses::{LossTerm, Preset};

const TRAIN_KEYS: &[&str] = &[
    "preset",
    "steps",
    "lr",
    "batch_size",
    "crop",
    "seed",
    "width",
    "heads",
    "leaky_slope",
    "se_reduction",
    "dance_reduction",
    "iel_expansion",
    "residual",
    "network_seed",
    "output",
];
const DATA_KEYS: &[&str] = &["train_count", "test_count", "image_size", "data_seed", "data", "fkl_weights"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    TRAIN_KEYS.contains(&key)
        || DATA_KEYS.contains(&key)
        || key
            .strip_prefix("weight.")
            .is_some_and(|c| LossTerm::ALL.iter().any(|t| t.column() == c))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Invalid(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if !known(key) {
            return Err(Error::Invalid(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    /// Applies every entry of `other` on top of `self`.
    pub fn merged(mut self, other: &Config) -> Self {
        self.values.extend(other.values.clone());
        self
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get_str(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Invalid(format!("{key} = {v:?}: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get_str(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Invalid(format!("{key}: {x:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn fkl_weights(&self) -> Result<Vec<f64>> {
        Ok(self.get_list("fkl_weights")?.unwrap_or_else(|| SWEEP_WEIGHTS.to_vec()))
    }

    /// Builds a training configuration, starting from [`TrainConfig::default`].
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut t = TrainConfig::default();
        if let Some(p) = self.get::<Preset>("preset")? {
            t.preset = p;
        }
        t.steps = self.get_or("steps", t.steps)?;
        t.learning_rate = self.get_or("lr", t.learning_rate)?;
        t.batch_size = self.get_or("batch_size", t.batch_size)?;
        t.crop = self.get_or("crop", t.crop)?;
        t.seed = self.get_or("seed", t.seed)?;

        let n = &mut t.network;
        n.base_width = self.get_or("width", n.base_width)?;
        if let Some(h) = self.get_str("heads") {
            let parsed: Vec<usize> = h
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Invalid(format!("heads = {h:?}: {e}")))?;
            n.heads = parsed
                .try_into()
                .map_err(|_| Error::Invalid(format!("heads = {h:?}: expected three values")))?;
        }
        n.leaky_slope = self.get_or("leaky_slope", n.leaky_slope)?;
        n.se_reduction = self.get_or("se_reduction", n.se_reduction)?;
        n.dance_reduction = self.get_or("dance_reduction", n.dance_reduction)?;
        n.iel_expansion = self.get_or("iel_expansion", n.iel_expansion)?;
        n.global_residual = self.get_or("residual", n.global_residual)?;
        n.seed = self.get_or("network_seed", n.seed)?;

        let mut w = t.loss_weights();
        let mut overridden = false;
        for term in LossTerm::ALL {
            if let Some(v) = self.get::<f64>(&format!("weight.{}", term.column()))? {
                w.set(term, v);
                overridden = true;
            }
        }
        if overridden {
            t.weights = Some(w);
        }
        t.output_dir = self.get_str("output").map(PathBuf::from);
        t.validate()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = Config::parse("# toy run\npreset = base+fkl\n\nsteps=20  # short\n weight.l_fkl = 0.5\nheads = 1, 1, 2\n")
            .unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(t.preset, Preset::BaseFkl);
        assert_eq!(t.steps, 20);
        assert_eq!(t.network.heads, [1, 1, 2]);
        let w = t.weights.unwrap();
        assert_eq!(w.fourier_kl, 0.5);
        assert_eq!(w.smooth_l1, 1.0);
    }

    #[test]
    fn later_values_win() {
        let file = Config::parse("steps = 10\nlr = 0.01\n").unwrap();
        let mut flags = Config::default();
        flags.set("steps", "3").unwrap();
        let t = file.merged(&flags).train_config().unwrap();
        assert_eq!((t.steps, t.learning_rate), (3, 0.01));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("stepz = 3").is_err());
        assert!(Config::parse("steps").is_err());
        assert!(Config::parse("weight.l_nope = 1").is_err());
        assert!(Config::parse("steps = three").unwrap().train_config().is_err());
        assert!(Config::parse("crop = 30").unwrap().train_config().is_err());
        assert!(Config::parse("heads = 1,2").unwrap().train_config().is_err());
        assert_eq!(
            Config::parse("fkl_weights = 0, 0.5").unwrap().fkl_weights().unwrap(),
            vec![0.0, 0.5]
        );
        assert_eq!(Config::default().fkl_weights().unwrap(), SWEEP_WEIGHTS.to_vec());
    }
}
