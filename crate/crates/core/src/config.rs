//! Flat `key=value` run configuration shared by every command.

use std::fmt::Display;
use std::str::FromStr;

use crate::data::{GeneratorConfig, GridSpec};
use crate::decoder::ModelConfig;
use crate::encoders::{EncoderConfig, EncoderKind};
use crate::error::Error;
use crate::eval::AblationConfig;
use crate::training::TrainConfig;
use crate::Result;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

macro_rules! run_config {
    ($($(#[$doc:meta])* $field:ident: $ty:ty = $default:expr,)*) => {
        /// Every tunable of a run. `seed` has no default; the other keys do.
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            pub seed: Option<u64>,
            $($(#[$doc])* pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { seed: None, $($field: $default,)* }
            }
        }

        impl RunConfig {
            /// Accepted keys in echo order.
            pub const KEYS: &'static [&'static str] = &["seed", $(stringify!($field),)*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    "seed" => self.seed = Some(parse(key, value)?),
                    $(stringify!($field) => self.$field = parse(key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            fn values(&self) -> Vec<(&'static str, String)> {
                let mut out = Vec::new();
                if let Some(s) = self.seed {
                    out.push(("seed", s.to_string()));
                }
                $(out.push((stringify!($field), show(&self.$field)));)*
                out
            }
        }
    };
}

fn show<T: Display>(v: &T) -> String {
    v.to_string()
}

run_config! {
    /// Seed of the synthetic dataset, independent of the training seed.
    data_seed: u64 = 0,
    grid_height: usize = 8,
    grid_width: usize = 8,
    num_classes: usize = 8,
    trajectories: usize = 200,
    trajectory_length: usize = 12,
    noise_std: f64 = GeneratorConfig::default().noise_std,
    /// Temporal sequence length `T`.
    steps: usize = 4,
    test_fraction: f64 = 0.1,
    /// Encoder architecture trained by `pretrain`.
    encoder_kind: EncoderKind = EncoderKind::Lstm,
    feature_dim: usize = EncoderConfig::default().feature_dim,
    frame_hidden: usize = EncoderConfig::default().frame_hidden,
    lstm_hidden: usize = EncoderConfig::default().lstm_hidden,
    lstm_layers: usize = EncoderConfig::default().lstm_layers,
    hidden_dim: usize = EncoderConfig::default().output_dim,
    temperature: f64 = EncoderConfig::default().temperature,
    contrastive_weight: f64 = EncoderConfig::default().contrastive_weight,
    n_layers: usize = ModelConfig::default().n_layers,
    width: usize = ModelConfig::default().width,
    heads: usize = ModelConfig::default().heads,
    ffn_hidden: usize = ModelConfig::default().ffn_hidden,
    max_positions: usize = ModelConfig::default().max_positions,
    batch_size: usize = TrainConfig::pretrain().batch_size,
    clip_norm: f64 = TrainConfig::pretrain().clip_norm,
    pretrain_epochs: usize = TrainConfig::pretrain().epochs,
    pretrain_lr: f64 = TrainConfig::pretrain().learning_rate,
    finetune_epochs: usize = TrainConfig::finetune().epochs,
    finetune_lr: f64 = TrainConfig::finetune().learning_rate,
    train_encoder: bool = false,
    freeze_gates: bool = false,
}

impl RunConfig {
    /// Applies a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}: line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}: line {}: {}", i + 1, config_reason(e))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, origin)?;
        Ok(c)
    }

    /// The effective configuration, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.values().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("`seed` is required for this command".into()))
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.grid_height, self.grid_width)
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig { grid: self.grid(), noise_std: self.noise_std }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            grid: self.grid(),
            feature_dim: self.feature_dim,
            frame_hidden: self.frame_hidden,
            lstm_hidden: self.lstm_hidden,
            lstm_layers: self.lstm_layers,
            output_dim: self.hidden_dim,
            num_classes: self.num_classes,
            temperature: self.temperature,
            contrastive_weight: self.contrastive_weight,
        }
    }

    /// `vocab_size` is fixed by the dataset when finetuning.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            width: self.width,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            max_positions: self.max_positions,
            hidden_dim: self.hidden_dim,
            ..ModelConfig::default()
        }
    }

    pub fn pretrain_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            learning_rate: self.pretrain_lr,
            seed,
            clip_norm: self.clip_norm,
            ..TrainConfig::pretrain()
        }
    }

    pub fn finetune_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.finetune_epochs,
            batch_size: self.batch_size,
            learning_rate: self.finetune_lr,
            seed,
            clip_norm: self.clip_norm,
            train_encoder: self.train_encoder,
            freeze_gates: self.freeze_gates,
            ..TrainConfig::finetune()
        }
    }

    pub fn ablation_config(&self, jobs: usize) -> AblationConfig {
        AblationConfig {
            encoder: self.encoder_config(),
            model: self.model_config(),
            pretrain: self.pretrain_config(0),
            finetune: self.finetune_config(0),
            steps: self.steps,
            test_fraction: self.test_fraction,
            jobs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_height == 0 || self.grid_width == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.steps == 0 || self.steps > self.trajectory_length {
            return Err(Error::Config(format!("steps {} must lie in 1..={}", self.steps, self.trajectory_length)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} must be finite and non-negative", self.noise_std)));
        }
        self.encoder_config().validate()?;
        self.model_config().validate()?;
        self.pretrain_config(0).validate()?;
        self.finetune_config(0).validate()
    }
}

fn config_reason(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        e => e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_module_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.encoder_config(), EncoderConfig::default());
        assert_eq!(c.model_config(), ModelConfig::default());
        assert_eq!(c.pretrain_config(0), TrainConfig::pretrain());
        assert_eq!(c.finetune_config(0), TrainConfig::finetune());
        assert_eq!(c.ablation_config(1), AblationConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn echo_round_trips_every_key() {
        let mut c = RunConfig::default();
        c.set("seed", "7").unwrap();
        c.set("pretrain_lr", "0.00025").unwrap();
        c.set("encoder_kind", "single_frame").unwrap();
        c.set("freeze_gates", "true").unwrap();
        let text = c.to_text();
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        let keys: Vec<&str> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
        assert_eq!(keys, RunConfig::KEYS);
        assert_eq!(RunConfig::from_text(&text, "echo").unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_located() {
        let e = RunConfig::from_text("# comment\n\nsteps=3\nlearning_rate=1\n", "run.cfg").unwrap_err();
        assert_eq!(e.to_string(), "invalid configuration: run.cfg: line 4: unknown key `learning_rate`");
        let e = RunConfig::from_text("steps=three", "f").unwrap_err();
        assert!(e.to_string().contains("line 1: invalid value `three` for `steps`"), "{e}");
        assert!(RunConfig::from_text("steps", "f").is_err());
    }

    #[test]
    fn seed_is_only_required_on_demand() {
        let c = RunConfig::default();
        assert!(!c.to_text().lines().any(|l| l.starts_with("seed=")));
        assert_eq!(c.require_seed().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn validation_rejects_inconsistent_values() {
        for (k, v) in
            [("steps", "13"), ("test_fraction", "1"), ("heads", "3"), ("batch_size", "0"), ("noise_std", "-1")]
        {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
    }
}
