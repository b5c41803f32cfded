//! `key=value` run configuration covering scene generation, the model and training.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contextdesc::model::ModelConfig;
use contextdesc::synthetic::SceneSpec;
use contextdesc::trainer::TrainConfig;

/// Scenes written by `gen` unless `count` says otherwise.
pub const DEFAULT_SCENE_COUNT: usize = 16;

/// Every key is `scene.*`, `model.*`, `train.*`, `count`, `scenes_dir` or `model_path`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Scenes written by `gen`; scene `i` uses seed `scene.seed + i`.
    pub count: usize,
    pub scenes_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            count: DEFAULT_SCENE_COUNT,
            scenes_dir: None,
            model_path: None,
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.split_once('.') {
            Some(("scene", k)) => self.scene.set(k, value)?,
            Some(("model", k)) => self.model.set(k, value)?,
            Some(("train", k)) => self.train.set(k, value)?,
            None if key == "count" => {
                self.count = value.parse().with_context(|| format!("bad value `{value}` for key `count`"))?
            }
            None if key == "scenes_dir" => self.scenes_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            None if key == "model_path" => self.model_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => bail!("unknown key `{key}`"),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key=value, got `{line}`", n + 1);
            };
            let k = k.trim();
            cfg.set(k, v).with_context(|| format!("line {}: key `{k}`", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("config {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.count == 0 {
            bail!("`count` must be positive");
        }
        if self.model.desc_dim != self.scene.desc_dim {
            bail!("`model.desc_dim` ({}) differs from `scene.desc_dim` ({})", self.model.desc_dim, self.scene.desc_dim);
        }
        if self.model.regional_depth != self.scene.regional_depth {
            bail!(
                "`model.regional_depth` ({}) differs from `scene.regional_depth` ({})",
                self.model.regional_depth,
                self.scene.regional_depth
            );
        }
        Ok(())
    }

    /// All keys including defaulted ones, in a form [`RunConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut put = |k: &str, v: &str| writeln!(s, "{k}={v}").expect("writing to a string");
        put("count", &self.count.to_string());
        put("scenes_dir", &path(&self.scenes_dir));
        put("model_path", &path(&self.model_path));
        for (k, v) in self.scene.entries() {
            put(&format!("scene.{k}"), &v);
        }
        for (k, v) in self.model.entries() {
            put(&format!("model.{k}"), &v);
        }
        for (k, v) in self.train.entries() {
            put(&format!("train.{k}"), &v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_config_round_trips() {
        let mut c = RunConfig::default();
        c.set("scene.keypoints", "64").unwrap();
        c.set("train.max_steps", "7").unwrap();
        c.set("model_path", "m.ctxp").unwrap();
        let text = c.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.scene.keypoints, 64);
        assert_eq!(back.train.max_steps, 7);
        assert_eq!(back.model_path, Some(PathBuf::from("m.ctxp")));
    }

    #[test]
    fn unknown_keys_are_named() {
        for key in ["scene.bogus", "bogus", "train.lr"] {
            let err = RunConfig::parse(&format!("{key}=1")).unwrap_err();
            assert!(format!("{err:#}").contains(&format!("`{key}`")), "{err:#}");
        }
    }

    #[test]
    fn mismatched_widths_rejected() {
        assert!(RunConfig::parse("scene.desc_dim=64").is_err());
        assert!(RunConfig::parse("scene.desc_dim=64\nmodel.desc_dim=64").is_ok());
    }
}
