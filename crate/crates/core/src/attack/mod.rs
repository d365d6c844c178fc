//! Task-aware adversarial attack pipeline.
//!
//! Per attacked frame: the leader (or an ablation baseline) proposes a
//! direction and scale, the clean action is shifted into a target action, and
//! PGD searches the pixel budget for an observation that makes the policy
//! emit that target. Schedulers decide which frames are attacked.

mod leader;
mod pgd;
mod run;
mod schedule;

pub use leader::{leader_infer, train_leader, AttackLeader, LeaderConfig, DIRECTION_CLASSES};
pub use pgd::{action_loss, loss_weights, pgd_perturb, sign, PgdConfig, PgdOutcome};
pub use run::{run_attack, transfer_attack, AttackHook, AttackRun, AttackSetup};
pub use schedule::{replay_schedule, should_attack, Scheduler, SchedulerState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::SceneState;
use crate::types::{clamp_action, ActionDelta, GuidanceLabel, Vec3};

/// Source of per-frame guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    Leader,
    FixedHuman,
    Random,
    /// All-zero direction; PGD then only has to preserve the clean action.
    Null,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Leader => "leader",
            GuidanceMode::FixedHuman => "fixed-human",
            GuidanceMode::Random => "random",
            GuidanceMode::Null => "null",
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leader" => Ok(GuidanceMode::Leader),
            "fixed-human" => Ok(GuidanceMode::FixedHuman),
            "random" => Ok(GuidanceMode::Random),
            "null" => Ok(GuidanceMode::Null),
            _ => Err(Error::InvalidArgument(format!(
                "unknown guidance `{s}` (leader, fixed-human, random, null)"
            ))),
        }
    }
}

/// Shifts `a_orig` by `scale · direction` on the displacement and overrides
/// the gripper when the gripper direction is non-zero.
pub fn compose_target(a_orig: &ActionDelta, g: &GuidanceLabel, max_step: f64) -> ActionDelta {
    let d = g.direction;
    let shift = Vec3::new(d[0] as f64, d[1] as f64, d[2] as f64) * g.scale;
    let gripper = match d[3] {
        1 => 1.0,
        -1 => 0.0,
        _ => a_orig.gripper,
    };
    clamp_action(ActionDelta::new(a_orig.dp + shift, gripper), max_step)
}

fn sign_i8(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Sign of the offset from the end-effector to the human-zone center, gripper untouched.
pub fn fixed_human_guidance(s: &SceneState, scale: f64) -> GuidanceLabel {
    let d = s.human_zone.center() - s.ee_pos;
    GuidanceLabel {
        direction: [sign_i8(d.x), sign_i8(d.y), sign_i8(d.z), 0],
        scale,
    }
}

/// Uniform direction over `{-1, 0, 1}^4`.
pub fn random_guidance(rng: &mut impl Rng, scale: f64) -> GuidanceLabel {
    GuidanceLabel {
        direction: std::array::from_fn(|_| rng.gen_range(-1i8..=1)),
        scale,
    }
}

/// Guidance for the two ablation baselines.
pub fn baseline_guidance(
    mode: GuidanceMode,
    s: &SceneState,
    rng: &mut impl Rng,
    scale: f64,
) -> Result<GuidanceLabel> {
    match mode {
        GuidanceMode::FixedHuman => Ok(fixed_human_guidance(s, scale)),
        GuidanceMode::Random => Ok(random_guidance(rng, scale)),
        GuidanceMode::Null => Ok(GuidanceLabel::null()),
        GuidanceMode::Leader => Err(Error::InvalidArgument(
            "leader guidance is not a baseline".into(),
        )),
    }
}
