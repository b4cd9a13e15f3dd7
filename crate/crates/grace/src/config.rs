//! Effective run configuration: two built-in profiles (`test` for fast
//! iteration, `paper` for full fidelity) overridable by a flat TOML
//! key-value file or individual key=value assignments. The full effective
//! config is snapshotted into every run manifest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caresim::SimConfig;
use crate::datagen::DatagenConfig;
use crate::kinematics::ArmGeometry;
use crate::model::{ClassifierConfig, EncoderConfig};
use crate::ocsvm::OcsvmParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown profile {0:?}; valid profiles: test, paper")]
    UnknownProfile(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key}: {message}")]
    BadValue { key: String, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("config file is not flat key-value TOML: {0}")]
    NotFlat(String),
    #[error("cannot parse config file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub profile: String,
    pub datagen: DatagenConfig,
    /// Grid resolution per joint dimension for cross-validation runs.
    pub samples_per_dim: usize,
    /// Grid resolution for trained bundles. Coarser grids starve the
    /// fixed 10-epoch classifier budget of optimization steps and leave the
    /// sigmoid unsaturated, which collapses the conservative operating
    /// point; 16 is the smallest resolution that trains to confident
    /// probabilities at the fast profile.
    pub bundle_samples_per_dim: usize,
    pub rows_per_shard: usize,
    pub ocsvm: OcsvmParams,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
    pub eval_seeds: Vec<u64>,
    pub sim: SimConfig,
    pub sim_seeds: Vec<u64>,
    /// Users excluded from bundle training and evaluated by the simulators.
    pub holdout_users: Vec<(u32, u32)>,
}

impl Config {
    /// The fast profile: coarse grid, fewer samples per user.
    pub fn test_profile() -> Self {
        Self {
            profile: "test".into(),
            datagen: DatagenConfig {
                samples_per_user: 500,
                ..DatagenConfig::default()
            },
            samples_per_dim: 12,
            bundle_samples_per_dim: 16,
            rows_per_shard: 250_000,
            ocsvm: OcsvmParams::default(),
            encoder: EncoderConfig::default(),
            classifier: ClassifierConfig::default(),
            eval_seeds: vec![1, 2, 3, 4, 5],
            sim: SimConfig::default(),
            sim_seeds: vec![1, 2, 3, 4, 5],
            holdout_users: vec![(2, 1), (4, 2), (6, 3), (8, 4), (10, 2)],
        }
    }

    /// The full-resolution profile: 40 grid samples per dimension and 2000
    /// range-of-motion samples per user.
    pub fn paper_profile() -> Self {
        Self {
            profile: "paper".into(),
            datagen: DatagenConfig::default(),
            samples_per_dim: 40,
            bundle_samples_per_dim: 40,
            ..Self::test_profile()
        }
    }

    pub fn profile(name: &str) -> Result<Self, ConfigError> {
        match name {
            "test" => Ok(Self::test_profile()),
            "paper" => Ok(Self::paper_profile()),
            other => Err(ConfigError::UnknownProfile(other.to_string())),
        }
    }

    /// Applies a flat TOML key-value document on top of this config.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (key, value) in table {
            let rendered = match &value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => return Err(ConfigError::NotFlat(format!("key {key:?} is {other}"))),
            };
            self.set(&key, &rendered)?;
        }
        Ok(())
    }

    /// Sets one configuration key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
            value
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| parse::<u64>(key, t.trim()))
                .collect()
        }
        fn parse_users(key: &str, value: &str) -> Result<Vec<(u32, u32)>, ConfigError> {
            if value.trim().is_empty() || value.trim() == "none" {
                return Ok(Vec::new());
            }
            value
                .split(',')
                .map(|tok| {
                    let mut it = tok.trim().split('_');
                    let pid = it.next().unwrap_or_default();
                    let cid = it.next().unwrap_or_default();
                    if it.next().is_some() {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            message: format!("expected pid_cid, got {tok:?}"),
                        });
                    }
                    Ok((parse::<u32>(key, pid)?, parse::<u32>(key, cid)?))
                })
                .collect()
        }

        match key {
            "n_participants" => self.datagen.n_participants = parse(key, value)?,
            "samples_per_user" => self.datagen.samples_per_user = parse(key, value)?,
            "interval_noise_deg" => self.datagen.interval_noise_deg = parse(key, value)?,
            "coupling_noise" => self.datagen.coupling_noise = parse(key, value)?,
            "score_noise" => self.datagen.score_noise = parse(key, value)?,
            "boundary_fraction" => self.datagen.boundary_fraction = parse(key, value)?,
            "boundary_band_deg" => self.datagen.boundary_band_deg = parse(key, value)?,
            "drop_cell" => {
                self.datagen.drop_cell = match value.trim() {
                    "none" | "" => None,
                    v => {
                        let users = parse_users(key, v)?;
                        if users.len() != 1 {
                            return Err(ConfigError::BadValue {
                                key: key.to_string(),
                                message: "expected a single pid_cid or none".into(),
                            });
                        }
                        Some(users[0])
                    }
                }
            }
            "samples_per_dim" => self.samples_per_dim = parse(key, value)?,
            "bundle_samples_per_dim" => self.bundle_samples_per_dim = parse(key, value)?,
            "rows_per_shard" => self.rows_per_shard = parse(key, value)?,
            "ocsvm_gamma" => self.ocsvm.gamma = parse(key, value)?,
            "ocsvm_nu" => self.ocsvm.nu = parse(key, value)?,
            "ocsvm_tol" => self.ocsvm.tol = parse(key, value)?,
            "ocsvm_max_iter" => self.ocsvm.max_iter = parse(key, value)?,
            "ocsvm_angle_scale" => self.ocsvm.angle_scale = parse(key, value)?,
            "encoder_hidden" => self.encoder.hidden = parse(key, value)?,
            "encoder_latent" => self.encoder.latent = parse(key, value)?,
            "encoder_lr" => self.encoder.lr = parse(key, value)?,
            "encoder_epochs" => self.encoder.epochs = parse(key, value)?,
            "lambda_contrastive" => self.encoder.lambda_contrastive = parse(key, value)?,
            "contrastive_margin" => self.encoder.margin = parse(key, value)?,
            "classifier_hidden" => self.classifier.hidden = parse(key, value)?,
            "classifier_lr" => self.classifier.lr = parse(key, value)?,
            "classifier_batch_size" => self.classifier.batch_size = parse(key, value)?,
            "classifier_epochs" => self.classifier.epochs = parse(key, value)?,
            "eval_seeds" => self.eval_seeds = parse_seeds(key, value)?,
            "sim_seeds" => self.sim_seeds = parse_seeds(key, value)?,
            "n_tasks" => self.sim.n_tasks = parse(key, value)?,
            "candidates_per_task" => self.sim.candidates_per_task = parse(key, value)?,
            "position_tolerance" => self.sim.position_tolerance = parse(key, value)?,
            "annulus_min" => self.sim.annulus_min = parse(key, value)?,
            "annulus_max" => self.sim.annulus_max = parse(key, value)?,
            "heur_opt_radius" => self.sim.heuristic_optimistic_radius = parse(key, value)?,
            "heur_cons_radius" => self.sim.heuristic_conservative_radius = parse(key, value)?,
            "bathing_min_excursion" => self.sim.bathing_min_excursion = parse(key, value)?,
            "bathing_max_excursion" => self.sim.bathing_max_excursion = parse(key, value)?,
            "upper_arm_length" => {
                let l: f64 = parse(key, value)?;
                self.sim.geometry = ArmGeometry::new(
                    l,
                    self.sim.geometry.forearm_length,
                    self.sim.geometry.shoulder_origin,
                )
                .map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    message: e.to_string(),
                })?;
            }
            "forearm_length" => {
                let l: f64 = parse(key, value)?;
                self.sim.geometry = ArmGeometry::new(
                    self.sim.geometry.upper_arm_length,
                    l,
                    self.sim.geometry.shoulder_origin,
                )
                .map_err(|e| ConfigError::BadValue {
                    key: key.to_string(),
                    message: e.to_string(),
                })?;
            }
            "holdout_users" => self.holdout_users = parse_users(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Field-level sanity checks, reported by field name.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, field: &'static str, message: String) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid { field, message })
            }
        }
        check(
            self.datagen.n_participants > 0,
            "n_participants",
            format!("must be positive, got {}", self.datagen.n_participants),
        )?;
        check(
            self.datagen.samples_per_user >= 2,
            "samples_per_user",
            format!("must be at least 2, got {}", self.datagen.samples_per_user),
        )?;
        check(
            (0.0..=1.0).contains(&self.datagen.boundary_fraction),
            "boundary_fraction",
            format!("must be in [0, 1], got {}", self.datagen.boundary_fraction),
        )?;
        check(
            self.samples_per_dim >= 2,
            "samples_per_dim",
            format!("must be at least 2, got {}", self.samples_per_dim),
        )?;
        check(
            self.bundle_samples_per_dim >= 2,
            "bundle_samples_per_dim",
            format!("must be at least 2, got {}", self.bundle_samples_per_dim),
        )?;
        check(
            self.rows_per_shard > 0,
            "rows_per_shard",
            "must be positive".into(),
        )?;
        check(
            self.ocsvm.gamma > 0.0,
            "ocsvm_gamma",
            format!("must be positive, got {}", self.ocsvm.gamma),
        )?;
        check(
            self.ocsvm.nu > 0.0 && self.ocsvm.nu <= 1.0,
            "ocsvm_nu",
            format!("must be in (0, 1], got {}", self.ocsvm.nu),
        )?;
        check(
            self.encoder.latent > 0,
            "encoder_latent",
            "must be positive".into(),
        )?;
        check(
            self.classifier.batch_size > 0,
            "classifier_batch_size",
            "must be positive".into(),
        )?;
        check(!self.eval_seeds.is_empty(), "eval_seeds", "must not be empty".into())?;
        check(!self.sim_seeds.is_empty(), "sim_seeds", "must not be empty".into())?;
        check(self.sim.n_tasks > 0, "n_tasks", "must be positive".into())?;
        check(
            self.sim.candidates_per_task >= 2,
            "candidates_per_task",
            "need at least 2 candidates".into(),
        )?;
        check(
            self.sim.position_tolerance > 0.0,
            "position_tolerance",
            "must be positive".into(),
        )?;
        check(
            self.sim.annulus_min > 0.0 && self.sim.annulus_min < self.sim.annulus_max,
            "annulus_min",
            "need 0 < annulus_min < annulus_max".into(),
        )?;
        Ok(())
    }
}

impl Default for Config {
    fn default() -> Self {
        Self::test_profile()
    }
}
