//! Run settings: defaults, then a flat TOML file, then flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use deband_core::exec::ExecMode;
use deband_core::metrics::ExternalMetric;
use deband_core::trainer::{LrSchedule, TrainConfig};
use deband_core::{Error, NetConfig, Result, Variant};
use serde::{Deserialize, Serialize};

/// Name of the resolved settings written into every output directory.
pub const ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub images: usize,
    pub image_size: usize,
    pub bits: Vec<u32>,
    pub patch_size: usize,
    pub stride: usize,

    pub base_channels: usize,
    pub depth: usize,
    pub state_dim: usize,
    pub ffn_expansion: usize,
    pub attention_heads: usize,

    pub variant: Variant,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub warmup_steps: usize,
    pub eval_every: usize,
    pub val_samples: usize,

    /// `name=command` entries for the external metric hook.
    pub external_metrics: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            images: 60,
            image_size: 256,
            bits: vec![3, 4, 5],
            patch_size: 64,
            stride: 32,
            base_channels: net.base_channels,
            depth: net.depth,
            state_dim: net.state_dim,
            ffn_expansion: net.ffn_expansion,
            attention_heads: net.attention_heads,
            variant: train.variant,
            steps: train.steps,
            batch: train.batch,
            learning_rate: train.learning_rate,
            lr_schedule: train.lr_schedule,
            warmup_steps: train.warmup_steps,
            eval_every: train.eval_every,
            val_samples: train.val_samples,
            external_metrics: Vec::new(),
        }
    }
}

/// Flag values layered over the file, keyed like the file.
#[derive(Default)]
pub struct Overrides(toml::Table);

impl Overrides {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value.and_then(|v| toml::Value::try_from(v).ok()) {
            self.0.insert(key.to_string(), v);
        }
    }

    /// Parses `key=value`, reading the value as TOML and falling back to a
    /// bare string.
    pub fn parse_assignment(&mut self, s: &str) -> Result<()> {
        let Some((key, raw)) = s.split_once('=') else {
            return Err(Error::Argument(format!("expected KEY=VALUE, got {s:?}")));
        };
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        self.0.insert(key.trim().to_string(), value);
        Ok(())
    }
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Argument(format!("{}: {}", path.display(), e.message())))?
            }
            None => toml::Table::new(),
        };
        table.extend(overrides.0);
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Argument(format!("config: {}", e.message())))?;
        cfg.net_config().validate()?;
        Ok(cfg)
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            base_channels: self.base_channels,
            depth: self.depth,
            state_dim: self.state_dim,
            ffn_expansion: self.ffn_expansion,
            attention_heads: self.attention_heads,
            variant: self.variant.checkpoint_variant(),
        }
    }

    pub fn train_config(&self, checkpoint_path: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch: self.batch,
            learning_rate: self.learning_rate,
            lr_schedule: self.lr_schedule,
            warmup_steps: self.warmup_steps,
            seed: self.seed,
            variant: self.variant,
            eval_every: self.eval_every,
            checkpoint_path,
            val_samples: self.val_samples,
            exec: ExecMode::default(),
        }
    }

    pub fn external_metrics(&self) -> Result<Vec<ExternalMetric>> {
        self.external_metrics
            .iter()
            .map(|entry| match entry.split_once('=') {
                Some((name, command)) if !name.trim().is_empty() => Ok(ExternalMetric {
                    name: name.trim().to_string(),
                    command: command.to_string(),
                }),
                _ => Err(Error::Argument(format!("external metric {entry:?} is not name=command"))),
            })
            .collect()
    }

    /// Writes the resolved settings to `<dir>/config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Argument(format!("config: {e}")))?;
        let path = dir.join(ECHO_FILE);
        fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "steps = 40\nbatch = 3\nvariant = \"map\"\n").unwrap();
        let mut ov = Overrides::default();
        ov.set("steps", Some(7usize));
        ov.parse_assignment("learning_rate=5e-4").unwrap();
        ov.parse_assignment("bits=[2, 6]").unwrap();
        let cfg = RunConfig::resolve(Some(&path), ov).unwrap();
        assert_eq!((cfg.steps, cfg.batch, cfg.variant), (7, 3, Variant::Map));
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.bits, [2, 6]);
    }

    #[test]
    fn echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { external_metrics: vec!["lpips=run {restored}".into()], ..Default::default() };
        cfg.echo(dir.path()).unwrap();
        let back = RunConfig::resolve(Some(&dir.path().join(ECHO_FILE)), Overrides::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_argument_errors() {
        let mut ov = Overrides::default();
        ov.parse_assignment("stepz=3").unwrap();
        assert_eq!(RunConfig::resolve(None, ov).unwrap_err().code(), "E_ARG");
        let mut ov = Overrides::default();
        ov.parse_assignment("variant=fancy").unwrap();
        assert_eq!(RunConfig::resolve(None, ov).unwrap_err().code(), "E_ARG");
        assert!(Overrides::default().parse_assignment("novalue").is_err());
    }
}
