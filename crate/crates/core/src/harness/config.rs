use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::AutoencoderConfig;
use crate::env::{Cell, GridSpec};
use crate::error::{Error, Result};
use crate::mastery::EvaluatorConfig;
use crate::ppo::{PolicyConfig, PpoConfig};
use crate::reward::AlphaSource;

/// Which reward path the run uses. All three build and train the same
/// networks; only the source of alpha changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Alpha from the mastery evaluator.
    Adazero,
    /// Alpha forced to 0: full intrinsic bonus.
    NoAdaptive,
    /// Alpha forced to 1: extrinsic reward only.
    NoIntrinsic,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Adazero, Variant::NoAdaptive, Variant::NoIntrinsic];

    pub fn alpha_source(self) -> AlphaSource {
        match self {
            Variant::Adazero => AlphaSource::Evaluator,
            Variant::NoAdaptive => AlphaSource::Forced(0.0),
            Variant::NoIntrinsic => AlphaSource::Forced(1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Adazero => "adazero",
            Variant::NoAdaptive => "no_adaptive",
            Variant::NoIntrinsic => "no_intrinsic",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    DarkChamber,
    FourRooms,
    OpenRoom,
    /// Built from `layout`.
    Custom,
}

/// A named environment plus optional overrides of its spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    /// ASCII rows, `#` wall, `S` start, `G` goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_episode_steps: Option<u32>,
}

impl EnvConfig {
    pub fn named(name: EnvName) -> Self {
        EnvConfig {
            name,
            height: None,
            width: None,
            layout: None,
            start: None,
            goal: None,
            goal_reward: None,
            max_episode_steps: None,
        }
    }

    pub fn build(&self) -> Result<GridSpec> {
        let sized = self.height.is_some() || self.width.is_some();
        let mut spec = match self.name {
            EnvName::DarkChamber | EnvName::FourRooms if sized => {
                return Err(Error::Config("height/width only apply to open_room".into()));
            }
            EnvName::DarkChamber => GridSpec::dark_chamber(),
            EnvName::FourRooms => GridSpec::four_rooms(),
            EnvName::OpenRoom => {
                let (h, w) = self
                    .height
                    .zip(self.width)
                    .ok_or_else(|| Error::Config("open_room needs height and width".into()))?;
                GridSpec::open_room(h, w)
            }
            EnvName::Custom => {
                let rows = self
                    .layout
                    .as_ref()
                    .ok_or_else(|| Error::Config("custom env needs a layout".into()))?;
                GridSpec::from_layout(rows)?
            }
        };
        if self.layout.is_some() && self.name != EnvName::Custom {
            return Err(Error::Config("layout only applies to the custom env".into()));
        }
        if let Some(start) = self.start {
            spec.start = start;
        }
        if let Some(goal) = self.goal {
            spec.goal = Some(goal);
        }
        if let Some(r) = self.goal_reward {
            spec.goal_reward = r;
        }
        if let Some(cap) = self.max_episode_steps {
            spec.max_episode_steps = cap;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn default_checkpoint_every() -> u64 {
    50
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Policy updates between checkpoints; 0 disables them.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    /// Write one row per environment step to `rewards.csv`.
    #[serde(default)]
    pub log_rewards: bool,
    pub env: EnvConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub evaluator: EvaluatorConfig,
}

impl RunConfig {
    /// Defaults for `env`, with the budget the experiments use.
    pub fn for_env(name: EnvName, variant: Variant) -> Self {
        let total_steps = match name {
            EnvName::FourRooms => 500_000,
            _ => 50_000,
        };
        RunConfig {
            variant,
            seeds: vec![0, 1, 2],
            total_steps,
            output_dir: default_output_dir(),
            checkpoint_every: default_checkpoint_every(),
            log_rewards: false,
            env: EnvConfig::named(name),
            ppo: PpoConfig::default(),
            policy: PolicyConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            evaluator: EvaluatorConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.ppo.validate()?;
        let ae = &self.autoencoder;
        if ae.batch_size == 0 {
            return Err(Error::Config("autoencoder batch_size must be >= 1".into()));
        }
        if !(ae.lr >= 0.0 && self.evaluator.lr >= 0.0) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        self.env.build()?;
        Ok(())
    }

    /// A copy that runs exactly one seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        RunConfig {
            seeds: vec![seed],
            ..self.clone()
        }
    }

    /// Where the run for `seed` writes its artifacts.
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_dir.join(format!("{}-seed{seed}", self.variant.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
variant = "adazero"
seeds = [3]
total_steps = 100

[env]
name = "four_rooms"
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.variant, Variant::Adazero);
        assert_eq!(cfg.ppo, PpoConfig::default());
        assert_eq!(cfg.checkpoint_every, 50);
        assert_eq!(cfg.env.build().unwrap(), GridSpec::four_rooms());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::for_env(EnvName::DarkChamber, Variant::NoAdaptive);
        cfg.ppo.horizon = 128;
        cfg.env.max_episode_steps = Some(77);
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_fatal() {
        assert!(RunConfig::from_toml_str(&format!("{MINIMAL}\nlearning_rate = 1.0\n")).is_err());
        let nested = MINIMAL.replace("name = \"four_rooms\"", "name = \"four_rooms\"\nwidht = 3");
        assert!(RunConfig::from_toml_str(&nested).is_err());
        let ppo = format!("{MINIMAL}\n[ppo]\nclip = 0.1\n");
        assert!(RunConfig::from_toml_str(&ppo).is_err());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml_str(&MINIMAL.replace("100", "0")).is_err());
        assert!(RunConfig::from_toml_str(&MINIMAL.replace("adazero", "curious")).is_err());
        assert!(RunConfig::from_toml_str(&MINIMAL.replace("[3]", "[]")).is_err());
        assert!(RunConfig::from_toml_str(&MINIMAL.replace("four_rooms", "open_room")).is_err());
    }

    #[test]
    fn env_overrides() {
        let mut env = EnvConfig::named(EnvName::OpenRoom);
        env.height = Some(5);
        env.width = Some(7);
        env.max_episode_steps = Some(20);
        let spec = env.build().unwrap();
        assert_eq!((spec.height, spec.width, spec.max_episode_steps), (5, 7, 20));

        let mut custom = EnvConfig::named(EnvName::Custom);
        custom.layout = Some(vec!["#####".into(), "#S G#".into(), "#####".into()]);
        let spec = custom.build().unwrap();
        assert_eq!(spec.goal, Some(Cell::new(1, 3)));
        assert_eq!(spec.shortest_path_len(spec.start, Cell::new(1, 3)), Some(2));

        let mut walled = EnvConfig::named(EnvName::FourRooms);
        walled.start = Some(Cell::new(0, 0));
        assert!(walled.build().is_err());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::NoIntrinsic.alpha_source(), AlphaSource::Forced(1.0));
    }
}
