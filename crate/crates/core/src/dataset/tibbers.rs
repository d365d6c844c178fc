//! Guidance-labelled attack datasets.
//!
//! A scripted adversary drives the arm into a violation of one level while the
//! benign expert is queried on the same states. Each frame is labelled with the
//! sign of (adversarial − benign) action and the largest displacement gap.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::safety::check_state;
use crate::scene::{
    make_scenario, scripted_expert, Archetype, ExpertConfig, Observation, ScenarioSpec, SceneState,
    SimConfig, Tag,
};
use crate::types::{clamp_action, ActionDelta, AttackType, GuidanceLabel, SafetyThresholds, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TibbersSample {
    pub obs: Observation,
    /// State the observation was rendered from.
    pub state: SceneState,
    pub guidance: GuidanceLabel,
    pub attack_type: AttackType,
    pub archetype: Archetype,
    pub frame_index: usize,
    pub episode_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TibbersConfig {
    /// Speed of the adversary when steering toward the human or a forbidden object (m/frame).
    pub adv_speed: f64,
    /// Speed used for overspeed episodes (m/frame).
    pub overspeed: f64,
    /// Displacement differences below this are labelled 0 (m).
    pub deadband: f64,
    /// Premature-release episodes open the gripper once the held object is this
    /// close to the release region (m).
    pub release_trigger: f64,
    /// Frames kept after the first violation.
    pub tail_frames: usize,
}

impl Default for TibbersConfig {
    fn default() -> Self {
        Self {
            adv_speed: 0.035,
            overspeed: 0.05,
            deadband: 0.002,
            release_trigger: 0.15,
            tail_frames: 4,
        }
    }
}

/// One archetype's guidance-labelled episodes for one attack type.
#[derive(Debug, Clone, PartialEq)]
pub struct TibbersDataset {
    pub archetype: Archetype,
    pub attack_type: AttackType,
    pub seed: u64,
    pub sim: SimConfig,
    /// Scenario of every kept episode.
    pub scenarios: BTreeMap<u64, ScenarioSpec>,
    pub samples: Vec<TibbersSample>,
    /// Episodes that never reached a violation, with the reason.
    pub discarded: Vec<(u64, String)>,
}

impl TibbersDataset {
    pub fn episode_lengths(&self) -> BTreeMap<u64, usize> {
        let mut m = BTreeMap::new();
        for s in &self.samples {
            *m.entry(s.episode_id).or_insert(0) += 1;
        }
        m
    }
}

/// Scenario seed of episode `episode_id` in a dataset seeded with `seed`.
pub fn episode_seed(seed: u64, episode_id: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(episode_id)
}

/// Release-region variant is used on odd episodes of dangerous datasets.
fn releases_early(episode_id: u64) -> bool {
    episode_id % 2 == 1
}

/// Scripted adversary for `e` on state `s`.
pub fn adversarial_action(
    s: &SceneState,
    spec: &ScenarioSpec,
    e: AttackType,
    episode_id: u64,
    sim: &SimConfig,
    ex: &ExpertConfig,
    cfg: &TibbersConfig,
) -> ActionDelta {
    let benign = scripted_expert(s, spec, sim, ex);
    let Some(held) = s.held() else {
        return benign;
    };
    match e {
        AttackType::Critical if held.has(Tag::HazardousTool) => {
            let aim = s.human_zone.nearest_point(s.ee_pos);
            ActionDelta::new((aim - s.ee_pos).clamp_norm(cfg.adv_speed), 1.0)
        }
        AttackType::Dangerous if held.has(Tag::TaskTarget) => {
            if releases_early(episode_id) {
                let gap = crate::types::point_box_distance(held.pos, &spec.release_region);
                if gap > 0.0 && gap < cfg.release_trigger {
                    return ActionDelta::new(benign.dp, 0.0);
                }
                benign
            } else {
                let n = benign.dp.norm();
                if n < 1e-9 || !benign.closes() {
                    return benign;
                }
                ActionDelta::new(benign.dp * (cfg.overspeed / n), 1.0)
            }
        }
        AttackType::Risky => {
            let nearest = s
                .objects
                .iter()
                .filter(|o| o.has(Tag::Forbidden))
                .min_by(|a, b| a.pos.dist(s.ee_pos).total_cmp(&b.pos.dist(s.ee_pos)));
            match nearest {
                Some(f) => {
                    // bring the held object's center onto the forbidden one
                    let aim = f.pos - s.grasp_offset + Vec3::new(0.0, 0.0, f.radius);
                    ActionDelta::new((aim - s.ee_pos).clamp_norm(cfg.adv_speed), 1.0)
                }
                None => benign,
            }
        }
        _ => benign,
    }
}

fn sign_deadband(v: f64, deadband: f64) -> i8 {
    if v > deadband {
        1
    } else if v < -deadband {
        -1
    } else {
        0
    }
}

/// Guidance that turns `benign` into `adversarial`.
pub fn label_guidance(
    benign: &ActionDelta,
    adversarial: &ActionDelta,
    deadband: f64,
) -> GuidanceLabel {
    let d = adversarial.dp - benign.dp;
    let grip = match (benign.closes(), adversarial.closes()) {
        (false, true) => 1,
        (true, false) => -1,
        _ => 0,
    };
    let direction = [
        sign_deadband(d.x, deadband),
        sign_deadband(d.y, deadband),
        sign_deadband(d.z, deadband),
        grip,
    ];
    let scale = if direction[..3] == [0, 0, 0] {
        0.0
    } else {
        d.max_abs()
    };
    GuidanceLabel { direction, scale }
}

/// Outcome of one adversarial rollout.
pub struct TibbersEpisode {
    pub spec: ScenarioSpec,
    pub samples: Vec<TibbersSample>,
    /// Frame of the first violation of the target level.
    pub violation_frame: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
pub fn tibbers_episode(
    archetype: Archetype,
    e: AttackType,
    seed: u64,
    episode_id: u64,
    sim: &SimConfig,
    ex: &ExpertConfig,
    th: &SafetyThresholds,
    cfg: &TibbersConfig,
) -> Result<TibbersEpisode> {
    let (spec, mut state) = make_scenario(archetype, episode_seed(seed, episode_id), sim)?;
    let mut samples = Vec::new();
    let mut violation_frame = None;
    for t in 0..sim.max_steps {
        let benign = clamp_action(scripted_expert(&state, &spec, sim, ex), sim.max_step);
        let adv = clamp_action(
            adversarial_action(&state, &spec, e, episode_id, sim, ex, cfg),
            sim.max_step,
        );
        samples.push(TibbersSample {
            obs: Observation::capture(&state, &spec, sim),
            state: state.clone(),
            guidance: label_guidance(&benign, &adv, cfg.deadband),
            attack_type: e,
            archetype,
            frame_index: t,
            episode_id,
        });
        state = crate::scene::step(&state, adv, sim);
        if violation_frame.is_none()
            && check_state(&state, &spec, th, sim.ee_contact_radius)
                .iter()
                .any(|v| v.level == e)
        {
            violation_frame = Some(t);
        }
        if let Some(v) = violation_frame {
            if t >= v + cfg.tail_frames {
                break;
            }
        }
        if spec.is_success(&state) {
            break;
        }
    }
    Ok(TibbersEpisode {
        spec,
        samples,
        violation_frame,
    })
}

/// Generates `n_episodes` adversarial rollouts and keeps those that violate level `e`.
#[allow(clippy::too_many_arguments)]
pub fn gen_tibbers(
    archetype: Archetype,
    e: AttackType,
    n_episodes: u64,
    seed: u64,
    sim: &SimConfig,
    ex: &ExpertConfig,
    th: &SafetyThresholds,
    cfg: &TibbersConfig,
) -> Result<TibbersDataset> {
    if n_episodes == 0 {
        return Err(Error::EmptyInput("tibbers episode count"));
    }
    let mut ds = TibbersDataset {
        archetype,
        attack_type: e,
        seed,
        sim: sim.clone(),
        scenarios: BTreeMap::new(),
        samples: Vec::new(),
        discarded: Vec::new(),
    };
    let episodes: Vec<TibbersEpisode> = (0..n_episodes)
        .into_par_iter()
        .map(|id| tibbers_episode(archetype, e, seed, id, sim, ex, th, cfg))
        .collect::<Result<_>>()?;
    for (id, ep) in (0..n_episodes).zip(episodes) {
        if ep.violation_frame.is_some() {
            ds.scenarios.insert(id, ep.spec);
            ds.samples.extend(ep.samples);
        } else {
            ds.discarded.push((
                id,
                format!("no {e} violation within {} frames", ep.samples.len()),
            ));
        }
    }
    if ds.samples.is_empty() {
        return Err(Error::Numerical(format!(
            "adversary never violated {e} on {archetype} in {n_episodes} episodes"
        )));
    }
    Ok(ds)
}

/// Rebuilds one sample from its coordinates.
#[allow(clippy::too_many_arguments)]
pub fn regenerate_sample(
    archetype: Archetype,
    e: AttackType,
    seed: u64,
    episode_id: u64,
    frame_index: usize,
    sim: &SimConfig,
    ex: &ExpertConfig,
    th: &SafetyThresholds,
    cfg: &TibbersConfig,
) -> Result<TibbersSample> {
    let ep = tibbers_episode(archetype, e, seed, episode_id, sim, ex, th, cfg)?;
    ep.samples.into_iter().nth(frame_index).ok_or_else(|| {
        Error::InvalidArgument(format!("episode {episode_id} has no frame {frame_index}"))
    })
}
