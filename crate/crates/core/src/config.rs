//! Run configuration shared by the command line and the experiment harness.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attack::{LeaderConfig, PgdConfig, Scheduler};
use crate::dataset::TibbersConfig;
use crate::error::{Error, Result};
use crate::metrics::DEFAULT_RIDGE;
use crate::policy::BcConfig;
use crate::scene::{ExpertConfig, SimConfig};
use crate::types::SafetyThresholds;

/// Sizes and seeds of the generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Demonstrations per archetype.
    pub n_demos: u64,
    /// Uniform noise added to executed demo displacements (m).
    pub demo_noise: f64,
    /// Scenario seeds of the demos start here.
    pub demo_seed: u64,
    /// Adversarial episodes per archetype.
    pub n_tibbers: u64,
    pub tibbers_seed: u64,
    /// Test episodes per archetype.
    pub n_eval: u64,
    /// Scenario seeds of the test episodes start here.
    pub eval_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_demos: 30,
            demo_noise: 0.006,
            demo_seed: 1000,
            n_tibbers: 40,
            tibbers_seed: 7,
            n_eval: 20,
            eval_seed: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub pgd: PgdConfig,
    /// Fixed scale of the fixed-human and random baselines (m/frame). When
    /// absent they borrow the leader's predicted scale.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_scale: Option<f64>,
    /// The adaptive threshold is this quantile of the leader's training scale labels.
    pub adaptive_quantile: f64,
    pub hot_stride: usize,
    pub cold_stride: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            pgd: PgdConfig::default(),
            baseline_scale: None,
            adaptive_quantile: 0.6,
            hot_stride: 2,
            cold_stride: 4,
            seed: 11,
        }
    }
}

impl AttackConfig {
    /// Adaptive scheduler with the given threshold.
    pub fn adaptive(&self, threshold: f64) -> Scheduler {
        Scheduler::Adaptive {
            threshold,
            hot_stride: self.hot_stride,
            cold_stride: self.cold_stride,
        }
    }
}

/// Every tunable of the pipeline. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub expert: ExpertConfig,
    pub safety: SafetyThresholds,
    pub data: DataConfig,
    pub bc: BcConfig,
    pub leader: LeaderConfig,
    pub tibbers: TibbersConfig,
    pub attack: AttackConfig,
    /// Ridge added to the action covariance before inversion.
    pub stats_ridge: f64,
    /// Policies scoring below this clean success rate are rejected.
    pub min_clean_success: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            expert: ExpertConfig::default(),
            safety: SafetyThresholds::default(),
            data: DataConfig::default(),
            bc: BcConfig::default(),
            leader: LeaderConfig::default(),
            tibbers: TibbersConfig::default(),
            attack: AttackConfig::default(),
            stats_ridge: DEFAULT_RIDGE,
            min_clean_success: 0.7,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.safety.validate()?;
        self.bc.validate()?;
        self.leader.validate()?;
        self.attack.pgd.validate()?;
        self.attack.adaptive(0.0).validate()?;
        if self.data.n_demos == 0 || self.data.n_eval == 0 || self.data.n_tibbers == 0 {
            return Err(Error::Config("episode counts must be positive".into()));
        }
        if !(self.data.demo_noise >= 0.0) || self.attack.baseline_scale.is_some_and(|v| !(v >= 0.0))
        {
            return Err(Error::Config(
                "noise and baseline scale must be non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.attack.adaptive_quantile)
            || !(0.0..=1.0).contains(&self.min_clean_success)
        {
            return Err(Error::Config(
                "quantile and success gate must lie in [0, 1]".into(),
            ));
        }
        if !(self.stats_ridge > 0.0) {
            return Err(Error::Config("stats_ridge must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fully resolved config as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }
}
