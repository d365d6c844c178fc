//! Discrete-time kinematic tabletop world.
//!
//! The end-effector moves by per-frame Cartesian deltas, objects are spheres,
//! and the human is a static box. Everything is deterministic: the same state
//! and action always produce the same next state, bit for bit.

mod expert;
mod render;
mod rollout;
mod scenario;
mod step;

pub use expert::{scripted_expert, ExpertConfig};
pub use render::{render, Observation, View, PROPRIO_DIM};
pub use rollout::{
    collect_demo, replay, run_episode, ExpertPolicy, Frame, ObservationHook, PolicyFn, StepControl,
    Trajectory,
};
pub use scenario::{make_scenario, Archetype, ScenarioSpec};
pub(crate) use step::contact_ids;
pub use step::step;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AxisBox, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    HazardousTool,
    Forbidden,
    TaskTarget,
    Graspable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: String,
    pub pos: Vec3,
    pub vel: Vec3,
    /// Bounding-sphere radius (m).
    pub radius: f64,
    pub tags: BTreeSet<Tag>,
}

impl ObjectState {
    pub fn new(id: &str, pos: Vec3, radius: f64, tags: &[Tag]) -> Self {
        Self {
            id: id.to_string(),
            pos,
            vel: Vec3::ZERO,
            radius,
            tags: tags.iter().copied().collect(),
        }
    }

    pub fn has(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }
}

/// Full world snapshot at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub ee_pos: Vec3,
    /// Displacement over the last frame.
    pub ee_vel: Vec3,
    pub gripper_closed: bool,
    /// Some end-effector or held-object sphere touches a non-graspable object.
    pub collision_flag: bool,
    pub objects: Vec<ObjectState>,
    pub human_zone: AxisBox,
    pub held_object: Option<String>,
    /// Offset of the held object's center from the end-effector, fixed at grasp time.
    pub grasp_offset: Vec3,
    /// Object released by the transition that produced this state, if any.
    pub released: Option<String>,
    pub frame_index: usize,
}

impl SceneState {
    pub fn object(&self, id: &str) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn held(&self) -> Option<&ObjectState> {
        self.held_object.as_deref().and_then(|id| self.object(id))
    }

    pub fn task_target(&self) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.has(Tag::TaskTarget))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(id) = &self.held_object {
            if self.object(id).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "held object `{id}` does not exist"
                )));
            }
            if !self.gripper_closed {
                return Err(Error::InvalidArgument(
                    "held object with open gripper".into(),
                ));
            }
        }
        for o in &self.objects {
            if !(o.radius > 0.0) || !o.pos.is_finite() || !o.vel.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "object `{}` is malformed",
                    o.id
                )));
            }
        }
        if !self.ee_pos.is_finite() || !self.ee_vel.is_finite() {
            return Err(Error::InvalidArgument(
                "end-effector state is not finite".into(),
            ));
        }
        Ok(())
    }
}

/// Simulator geometry and rendering parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Per-component displacement limit applied to every action (m/frame).
    pub max_step: f64,
    /// Closing the gripper within this distance of a graspable object attaches it (m).
    pub grasp_radius: f64,
    /// Radius of the end-effector contact sphere (m).
    pub ee_contact_radius: f64,
    /// Raster side length in pixels.
    pub image_size: usize,
    /// Side length of the square area covered by the gripper camera (m).
    pub ego_window: f64,
    /// Episode length cap.
    pub max_steps: usize,
    /// Uniform jitter applied to nominal object, goal and human positions (m).
    pub jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            max_step: 0.05,
            grasp_radius: 0.04,
            ee_contact_radius: 0.03,
            image_size: 32,
            ego_window: 0.5,
            max_steps: 120,
            jitter: 0.02,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_step > 0.0 && self.grasp_radius > 0.0 && self.ee_contact_radius > 0.0) {
            return Err(Error::Config("sim distances must be positive".into()));
        }
        if self.image_size < 4 || self.max_steps == 0 || !(self.ego_window > 0.0) {
            return Err(Error::Config(
                "image_size >= 4, max_steps >= 1, ego_window > 0".into(),
            ));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// Table extent reachable by the end-effector.
    pub fn workspace(&self) -> AxisBox {
        AxisBox {
            min: Vec3::new(0.0, -0.5, 0.0),
            max: Vec3::new(1.0, 0.5, 0.4),
        }
    }
}
