use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{TrainCfg, Variant};
use crate::demo::{PretrainConfig, TierMix};
use crate::env::{EnvOverrides, EnvSpec, CORRIDOR_WALKER};
use crate::error::{Error, Result};
use crate::explore::OuParams;
use crate::sched::ScheduleSet;

/// Seed of the stock demonstration set shared by every preset.
pub const STOCK_DEMO_SEED: u64 = 20_240_601;

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &[
    "td3",
    "td3fg",
    "bcft",
    "ddpgfd_like",
    "td3fg_qfilter",
    "td3fg_noise",
    "td3fg_noise_only",
    "td3fg_buffer",
    "paper",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCfg {
    /// OU process used by the scheduled variants.
    pub ou: OuParams,
    /// Constant Gaussian action noise for the TD3-style variants.
    pub gaussian_sigma: f64,
}

impl Default for NoiseCfg {
    fn default() -> Self {
        Self {
            ou: OuParams::default(),
            gaussian_sigma: 0.1,
        }
    }
}

/// Demonstrations come from a file when `file` is set, otherwise they are
/// generated from `mix` with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub mix: TierMix,
    pub seed: u64,
}

impl Default for DemoSource {
    fn default() -> Self {
        Self {
            file: None,
            mix: TierMix::default(),
            seed: STOCK_DEMO_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreloadCfg {
    pub best_k: usize,
    pub n_transitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: String,
    pub total_steps: u64,
    /// Uniform random actions, no updates.
    pub warmup_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    /// Hidden widths shared by actor, critics and generator.
    pub hidden: Vec<usize>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub env_overrides: EnvOverrides,
    pub schedules: ScheduleSet,
    pub train: TrainCfg,
    pub noise: NoiseCfg,
    pub demos: DemoSource,
    pub pretrain: PretrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preload: Option<PreloadCfg>,
}

impl ExperimentConfig {
    pub fn variant(&self) -> Variant {
        self.train.variant
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let spec = EnvSpec::by_name(&self.env)?.with_overrides(&self.env_overrides);
        spec.validate()?;
        Ok(spec)
    }

    /// Whether a run needs the demonstration set at all.
    pub fn needs_demos(&self) -> bool {
        self.variant().needs_generator() || self.preload.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.noise.gaussian_sigma < 0.0 {
            return bad("gaussian_sigma must be non-negative");
        }
        if self.variant().requires_preload() && self.preload.is_none() {
            return bad("this variant needs a [preload] section");
        }
        if self.variant().needs_generator() && self.pretrain.iters == 0 {
            return bad("pretrain.iters must be positive when a generator is used");
        }
        if let Some(p) = self.preload {
            if p.best_k == 0 || p.n_transitions == 0 {
                return bad("preload.best_k and preload.n_transitions must be positive");
            }
        }
        if self.demos.file.is_none() && self.demos.mix.total() == 0 && self.needs_demos() {
            return bad("demo mix is empty");
        }
        self.env_spec()?;
        self.schedules.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

fn desk(name: &str, variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        env: CORRIDOR_WALKER.to_string(),
        total_steps: 50_000,
        warmup_steps: 1_000,
        eval_every: 1_000,
        eval_episodes: 5,
        buffer_capacity: 100_000,
        hidden: vec![32, 64, 32],
        seeds: (0..5).collect(),
        out_dir: PathBuf::from("runs").join(name),
        env_overrides: EnvOverrides::default(),
        schedules: ScheduleSet::from_ou_horizon(10_000),
        train: TrainCfg {
            variant,
            ..TrainCfg::default()
        },
        noise: NoiseCfg::default(),
        demos: DemoSource::default(),
        pretrain: PretrainConfig::default(),
        preload: None,
    }
}

/// Stock configurations for the baselines and ablations.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "td3" => desk(name, Variant::Td3),
        "td3fg" => desk(name, Variant::Td3fg),
        "bcft" => desk(name, Variant::Bcft),
        "td3fg_qfilter" => desk(name, Variant::Td3fgQfilter),
        "td3fg_noise" => desk(name, Variant::Td3fgNoise),
        "td3fg_noise_only" => desk(name, Variant::Td3fgNoiseOnly),
        "ddpgfd_like" => ExperimentConfig {
            preload: Some(PreloadCfg {
                best_k: 10,
                n_transitions: 2_000,
            }),
            ..desk(name, Variant::PreloadBuffer)
        },
        "td3fg_buffer" => ExperimentConfig {
            preload: Some(PreloadCfg {
                best_k: TierMix::default().total(),
                n_transitions: 1_000,
            }),
            ..desk(name, Variant::Td3fg)
        },
        "paper" => {
            let mut cfg = desk(name, Variant::Td3fg);
            cfg.total_steps = 750_000;
            cfg.schedules = ScheduleSet::from_ou_horizon(600_000);
            cfg.hidden = vec![256, 512, 256];
            cfg.buffer_capacity = 1_000_000;
            cfg.eval_every = 5_000;
            cfg.pretrain.iters = 50_000;
            cfg.pretrain.n_trans = 640;
            cfg
        }
        _ => return Err(Error::UnknownPreset(name.to_string())),
    };
    Ok(cfg)
}
