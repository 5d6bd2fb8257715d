//! Pipeline configuration: one TOML file plus dotted `--set key=value`
//! overrides. Every field has a default, so an empty config is valid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bps::BpsConfig;
use crate::dataset::DatasetConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SegmentPlan};
use crate::rps::{RpsConfig, TrajectoryConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DatasetConfig,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub ablate: AblateFlags,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data: DatasetConfig::default(),
            model: ModelSection::default(),
            loss: LossSection::default(),
            train: TrainSection::default(),
            ablate: AblateFlags::default(),
        }
    }
}

/// Model width preset: the paper-scale dimensions or the desk-scale
/// reduced widths used for smoke training and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub scale: ModelScale,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { scale: ModelScale::Full }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelScale {
    Full,
    Reduced,
}

impl ModelSection {
    pub fn bps(&self) -> BpsConfig {
        match self.scale {
            ModelScale::Full => BpsConfig::default(),
            ModelScale::Reduced => BpsConfig::reduced(),
        }
    }

    pub fn rps(&self) -> RpsConfig {
        match self.scale {
            ModelScale::Full => RpsConfig::default(),
            ModelScale::Reduced => RpsConfig::reduced(),
        }
    }

    pub fn traj(&self) -> TrajectoryConfig {
        match self.scale {
            ModelScale::Full => TrajectoryConfig::default(),
            ModelScale::Reduced => TrajectoryConfig::reduced(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub lambda_pose: f64,
    pub lambda_vel: f64,
    pub lambda_pm: f64,
    pub lambda_lm: f64,
    pub lambda_gen: f64,
    pub lambda_rtc: f64,
    /// Contrastive segment length (frames).
    pub segment_len: usize,
    /// Contrastive segment slide (frames).
    pub segment_slide: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda_pose: w.lambda_pose,
            lambda_vel: w.lambda_vel,
            lambda_pm: w.lambda_pm,
            lambda_lm: w.lambda_lm,
            lambda_gen: w.lambda_gen,
            lambda_rtc: w.lambda_rtc,
            segment_len: 25,
            segment_slide: 5,
        }
    }
}

impl LossSection {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_pose: self.lambda_pose,
            lambda_vel: self.lambda_vel,
            lambda_pm: self.lambda_pm,
            lambda_lm: self.lambda_lm,
            lambda_gen: self.lambda_gen,
            lambda_rtc: self.lambda_rtc,
        }
    }

    pub fn plan(&self) -> Result<SegmentPlan> {
        SegmentPlan::new(self.segment_len, self.segment_slide)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub bps: StageConfig,
    pub rps: StageConfig,
    pub traj: StageConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            bps: StageConfig { epochs: 500, batch_size: 8, lr: 1e-4, beta1: 0.5, beta2: 0.99, checkpoint_every: 0 },
            rps: StageConfig { epochs: 250, batch_size: 8, lr: 1e-4, beta1: 0.5, beta2: 0.99, checkpoint_every: 0 },
            traj: StageConfig { epochs: 700, batch_size: 8, lr: 1e-5, beta1: 0.8, beta2: 0.99, checkpoint_every: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default = "StageConfig::fallback")]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Save an intermediate checkpoint every N epochs (0 = final only).
    /// Saving rounds the live state to checkpoint precision, so resumed
    /// runs continue bit-identically to uninterrupted ones.
    pub checkpoint_every: usize,
}

impl StageConfig {
    fn fallback() -> Self {
        Self { epochs: 1, batch_size: 8, lr: 1e-4, beta1: 0.5, beta2: 0.99, checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AblateFlags {
    /// Withhold beat poses: the generator sees only seed conditioning.
    pub disable_bps: bool,
    /// Drop the contrastive term from the generator loss.
    pub disable_rtc: bool,
    /// Pin the contrast anchor to segment 0 instead of sampling it.
    pub fixed_reference_rtc: bool,
    /// Probability of feeding ground-truth beat poses instead of generated
    /// ones during repletion training.
    pub teacher_forcing_ratio: f64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.loss.weights().validate()?;
        self.loss.plan()?;
        for (name, st) in [
            ("bps", &self.train.bps),
            ("rps", &self.train.rps),
            ("traj", &self.train.traj),
        ] {
            if st.epochs == 0 || st.batch_size == 0 {
                return Err(Error::Config(format!("train.{name}: epochs and batch_size must be >= 1")));
            }
            if !(st.lr > 0.0) || !(0.0..1.0).contains(&st.beta1) || !(0.0..1.0).contains(&st.beta2) {
                return Err(Error::Config(format!("train.{name}: bad optimizer settings")));
            }
        }
        if !(0.0..=1.0).contains(&self.ablate.teacher_forcing_ratio) {
            return Err(Error::Config("teacher_forcing_ratio must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Loads the config file (if any) and applies `--set` overrides, then
    /// the `GROOVESYNTH_CACHE` environment variable for the cache dir.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for kv in overrides {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set {kv}: expected key=value")))?;
            apply_override(&mut table, key.trim(), value.trim())?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        if cfg.data.cache_dir.is_none() {
            if let Ok(dir) = std::env::var("GROOVESYNTH_CACHE") {
                if !dir.is_empty() {
                    cfg.data.cache_dir = Some(dir.into());
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses an override literal: bool, integer, float, then bare string.
fn parse_value(raw: &str) -> toml::Value {
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    toml::Value::String(raw.to_string())
}

fn apply_override(table: &mut toml::Table, dotted: &str, raw: &str) -> Result<()> {
    let mut parts = dotted.split('.').collect::<Vec<_>>();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("--set {dotted}: empty path component")));
    }
    let last = parts.pop().expect("nonempty path");
    let mut cur = table;
    for part in parts {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("--set {dotted}: {part} is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_stage_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.train.bps.epochs, 500);
        assert_eq!(cfg.train.rps.epochs, 250);
        assert_eq!(cfg.train.traj.epochs, 700);
        assert_eq!(cfg.train.bps.beta1, 0.5);
        assert_eq!(cfg.train.traj.beta1, 0.8);
        assert_eq!(cfg.train.traj.lr, 1e-5);
        assert_eq!(cfg.loss.segment_len, 25);
        assert_eq!(cfg.loss.segment_slide, 5);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_apply_and_validate() {
        let cfg = PipelineConfig::load(
            None,
            &[
                "train.bps.epochs=3".to_string(),
                "model.scale=reduced".to_string(),
                "ablate.disable_rtc=true".to_string(),
                "loss.lambda_rtc=0.5".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.bps.epochs, 3);
        assert_eq!(cfg.model.scale, ModelScale::Reduced);
        assert!(cfg.ablate.disable_rtc);
        assert_eq!(cfg.loss.lambda_rtc, 0.5);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        assert!(matches!(
            PipelineConfig::load(None, &["no_equals_sign".to_string()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::load(None, &["train.bps.epochs=0".to_string()]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            PipelineConfig::load(None, &["model.scale=enormous".to_string()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(
            &path,
            "seed = 11\n[train.rps]\nepochs = 2\nbatch_size = 4\nlr = 1e-3\nbeta1 = 0.5\nbeta2 = 0.99\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(Some(&path), &[]).unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.train.rps.epochs, 2);
        assert_eq!(cfg.train.rps.batch_size, 4);
        // Untouched sections keep defaults.
        assert_eq!(cfg.train.bps.epochs, 500);
    }
}
