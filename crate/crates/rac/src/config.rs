//! Run configuration: one file with `[game]`, `[nets]`, `[loss]` and
//! `[train]` sections, loadable from TOML or JSON. Every field has a default,
//! so partial files work.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{hex_string, GameSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Training variant. `Rac` is the full algorithm; the others remove parts of
/// it for baselines and ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Roles, opponent-role prediction, and all three role losses.
    #[serde(rename = "rac")]
    Rac,
    /// Attention actor-critic baseline: no role networks at all.
    #[serde(rename = "maac")]
    Maac,
    /// Roles without opponent modeling: no opponent-role predictor, no
    /// opponent loss, and critics restricted to same-team information.
    #[serde(rename = "rac_team")]
    RacTeam,
    /// Full architecture, role networks trained on the diversity loss only.
    #[serde(rename = "ld")]
    AblationD,
    /// Full architecture, mutual-information loss only.
    #[serde(rename = "lmi")]
    AblationMi,
    /// Full architecture, diversity plus mutual-information losses.
    #[serde(rename = "ld_lmi")]
    AblationDMi,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Rac,
        Variant::Maac,
        Variant::RacTeam,
        Variant::AblationD,
        Variant::AblationMi,
        Variant::AblationDMi,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Rac => "rac",
            Variant::Maac => "maac",
            Variant::RacTeam => "rac_team",
            Variant::AblationD => "ld",
            Variant::AblationMi => "lmi",
            Variant::AblationDMi => "ld_lmi",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.iter().copied().find(|v| v.name() == s)
    }

    /// Whether role networks exist at all.
    pub fn uses_roles(&self) -> bool {
        !matches!(self, Variant::Maac)
    }

    /// Whether the opponent-role predictor exists and feeds policies/critics.
    pub fn uses_opponent_roles(&self) -> bool {
        matches!(
            self,
            Variant::Rac | Variant::AblationD | Variant::AblationMi | Variant::AblationDMi
        )
    }

    /// Whether critics may read observations and actions across team lines.
    pub fn critic_sees_opponents(&self) -> bool {
        !matches!(self, Variant::RacTeam)
    }

    /// Which role losses this variant minimizes.
    pub fn default_role_losses(&self) -> LossMask {
        match self {
            Variant::Rac => LossMask {
                diversity: true,
                mutual_info: true,
                opponent: true,
            },
            Variant::Maac => LossMask {
                diversity: false,
                mutual_info: false,
                opponent: false,
            },
            Variant::RacTeam | Variant::AblationDMi => LossMask {
                diversity: true,
                mutual_info: true,
                opponent: false,
            },
            Variant::AblationD => LossMask {
                diversity: true,
                mutual_info: false,
                opponent: false,
            },
            Variant::AblationMi => LossMask {
                diversity: false,
                mutual_info: true,
                opponent: false,
            },
        }
    }
}

/// Which of the three role objectives contribute to the role-network update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossMask {
    pub diversity: bool,
    pub mutual_info: bool,
    pub opponent: bool,
}

/// Sizes and sharing scheme of the learnable components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub role_dim: usize,
    pub gru_hidden: usize,
    pub mlp_hidden: usize,
    pub attn_dim: usize,
    pub attn_heads: usize,
    /// Role encoders, opponent predictor, posterior and trajectory encoder
    /// are shared per team (one parameter set per team) when true.
    pub share_role_nets_per_team: bool,
    /// Policies and critics are per-agent when false, per-team when true.
    pub share_actor_critic_per_team: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            role_dim: 8,
            gru_hidden: 64,
            mlp_hidden: 128,
            attn_dim: 128,
            attn_heads: 4,
            share_role_nets_per_team: true,
            share_actor_critic_per_team: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.role_dim == 0
            || self.gru_hidden == 0
            || self.mlp_hidden == 0
            || self.attn_dim == 0
            || self.attn_heads == 0
        {
            return Err(ConfigError::Invalid("net sizes must be positive".into()));
        }
        if self.attn_dim % self.attn_heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "attn_dim {} must be divisible by attn_heads {}",
                self.attn_dim, self.attn_heads
            )));
        }
        Ok(())
    }
}

/// Objective constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Discount factor.
    pub gamma: f64,
    /// Entropy regularization coefficient.
    pub alpha: f64,
    /// Role-loss decay factor; the role weight is `lambda^(u / decay_episodes)`
    /// after `u` training episodes.
    pub lambda: f64,
    pub decay_episodes: f64,
    /// Additive floor under every learned standard deviation.
    pub std_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.99,
            alpha: 0.01,
            lambda: 0.5,
            decay_episodes: 5000.0,
            std_floor: 1e-3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ConfigError::Invalid(format!(
                "gamma must lie in [0,1), got {}",
                self.gamma
            )));
        }
        if self.alpha < 0.0 {
            return Err(ConfigError::Invalid("alpha must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(ConfigError::Invalid(format!(
                "lambda must lie in [0,1], got {}",
                self.lambda
            )));
        }
        if !(self.decay_episodes > 0.0) {
            return Err(ConfigError::Invalid(
                "decay_episodes must be positive".into(),
            ));
        }
        if !(self.std_floor > 0.0) {
            return Err(ConfigError::Invalid("std_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Training loop shape and optimization constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub seed: u64,
    pub max_episodes: usize,
    /// Episodes accumulated before an update round fires.
    pub min_steps_per_update: usize,
    pub updates_per_round: usize,
    /// Episodes per sampled batch.
    pub batch_episodes: usize,
    /// Update window length in steps; 0 means the full episode.
    pub window: usize,
    /// Replay capacity in episodes.
    pub buffer_capacity: usize,
    pub lr_policy: f64,
    /// Shared by critics and role networks.
    pub lr_critic: f64,
    pub target_tau: f64,
    /// Parallel environment instances per rollout round.
    pub parallel_envs: usize,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub out_dir: String,
    /// Explicit override of the role-loss subset; `None` follows the variant.
    pub role_losses: Option<LossMask>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Rac,
            seed: 0,
            max_episodes: 10_000,
            min_steps_per_update: 4,
            updates_per_round: 1,
            batch_episodes: 32,
            window: 0,
            buffer_capacity: 1000,
            lr_policy: 3e-4,
            lr_critic: 1e-3,
            target_tau: 0.01,
            parallel_envs: 1,
            checkpoint_interval: 0,
            out_dir: "runs".into(),
            role_losses: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_episodes == 0 {
            return Err(ConfigError::Invalid("batch_episodes must be >= 1".into()));
        }
        if self.buffer_capacity < self.batch_episodes {
            return Err(ConfigError::Invalid(format!(
                "buffer_capacity {} must be >= batch_episodes {}",
                self.buffer_capacity, self.batch_episodes
            )));
        }
        if self.min_steps_per_update == 0 || self.parallel_envs == 0 {
            return Err(ConfigError::Invalid(
                "min_steps_per_update and parallel_envs must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.target_tau) {
            return Err(ConfigError::Invalid(format!(
                "target_tau must lie in [0,1], got {}",
                self.target_tau
            )));
        }
        Ok(())
    }

    pub fn role_loss_mask(&self) -> LossMask {
        self.role_losses
            .unwrap_or_else(|| self.variant.default_role_losses())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub game: GameSpec,
    pub nets: NetConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.game
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.nets.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let cfg: Config = if is_json {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Stable digest over the whole configuration.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_string(&Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
        assert_eq!(Variant::parse("bogus"), None);
    }

    #[test]
    fn toml_and_json_sections_load() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("cfg.toml");
        std::fs::write(
            &toml_path,
            r#"
[game]
game = "market"
episode_limit = 50

[nets]
role_dim = 4

[loss]
lambda = 0.5

[train]
variant = "rac_team"
max_episodes = 100
"#,
        )
        .unwrap();
        let cfg = Config::load(&toml_path).unwrap();
        assert_eq!(cfg.game.game, crate::env::Game::Market);
        assert_eq!(cfg.nets.role_dim, 4);
        assert_eq!(cfg.train.variant, Variant::RacTeam);
        assert_eq!(cfg.train.max_episodes, 100);

        let json_path = dir.path().join("cfg.json");
        std::fs::write(
            &json_path,
            r#"{"train": {"variant": "maac", "batch_episodes": 8, "buffer_capacity": 16}}"#,
        )
        .unwrap();
        let cfg = Config::load(&json_path).unwrap();
        assert_eq!(cfg.train.variant, Variant::Maac);
        assert_eq!(cfg.train.batch_episodes, 8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = Config::default();
        cfg.nets.attn_dim = 10;
        cfg.nets.attn_heads = 4;
        assert!(cfg.validate().is_err());

        let mut cfg = Config::default();
        cfg.loss.lambda = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = Config::default();
        cfg.train.buffer_capacity = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = Config::default();
        let b = Config::default();
        assert_eq!(a.hash_hex(), b.hash_hex());
        let mut c = Config::default();
        c.loss.alpha = 0.02;
        assert_ne!(a.hash_hex(), c.hash_hex());
    }

    #[test]
    fn role_loss_mask_follows_variant_unless_overridden() {
        let mut cfg = TrainConfig::default();
        cfg.variant = Variant::AblationMi;
        let m = cfg.role_loss_mask();
        assert!(!m.diversity && m.mutual_info && !m.opponent);
        cfg.role_losses = Some(LossMask {
            diversity: false,
            mutual_info: true,
            opponent: true,
        });
        let m = cfg.role_loss_mask();
        assert!(!m.diversity && m.mutual_info && m.opponent);
    }
}
