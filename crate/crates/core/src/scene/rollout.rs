use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    scripted_expert, step, ExpertConfig, Observation, ScenarioSpec, SceneState, SimConfig,
};
use crate::error::{Error, Result};
use crate::types::{clamp_action, ActionDelta, GuidanceLabel, Vec3};

/// Anything that maps an observation to an action.
///
/// Learned policies only look at `obs`; the scripted expert reads the
/// privileged `state` instead.
pub trait PolicyFn: Sync {
    fn act(&self, obs: &Observation, state: &SceneState) -> Result<ActionDelta>;
}

/// Scripted expert bound to one scenario.
pub struct ExpertPolicy<'a> {
    pub spec: &'a ScenarioSpec,
    pub sim: &'a SimConfig,
    pub cfg: &'a ExpertConfig,
}

impl PolicyFn for ExpertPolicy<'_> {
    fn act(&self, _obs: &Observation, state: &SceneState) -> Result<ActionDelta> {
        Ok(scripted_expert(state, self.spec, self.sim, self.cfg))
    }
}

/// What an observation hook wants the policy to see instead of the clean frame.
#[derive(Debug, Clone)]
pub struct StepControl {
    pub obs: Observation,
    pub guidance: Option<GuidanceLabel>,
}

/// Interception point between the camera and the policy.
pub trait ObservationHook {
    /// Called once per frame with the clean observation and the action the
    /// policy takes on it. `Some` replaces what the policy sees this frame.
    fn intercept(
        &mut self,
        frame: usize,
        obs: &Observation,
        state: &SceneState,
        clean_action: &ActionDelta,
    ) -> Result<Option<StepControl>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Clean observation of `state`.
    pub obs: Observation,
    pub state: SceneState,
    /// Action actually applied (clamped).
    pub action: ActionDelta,
    /// Clamped action the acting policy takes on the clean observation. For
    /// demonstrations this is the noise-free expert label.
    pub reference: ActionDelta,
    /// Observation fed to the policy when the frame was attacked.
    pub perturbed: Option<Observation>,
    pub guidance: Option<GuidanceLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: ScenarioSpec,
    pub frames: Vec<Frame>,
    /// State after the last action.
    pub final_state: SceneState,
    pub success: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn initial_state(&self) -> &SceneState {
        &self.frames[0].state
    }

    pub fn actions(&self) -> Vec<ActionDelta> {
        self.frames.iter().map(|f| f.action).collect()
    }

    pub fn reference_actions(&self) -> Vec<ActionDelta> {
        self.frames.iter().map(|f| f.reference).collect()
    }

    /// Every visited state, including the final one.
    pub fn states(&self) -> Vec<SceneState> {
        let mut v: Vec<_> = self.frames.iter().map(|f| f.state.clone()).collect();
        v.push(self.final_state.clone());
        v
    }

    pub fn attacked_frames(&self) -> Vec<usize> {
        self.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| f.perturbed.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Perturbed frames over all frames.
    pub fn attack_frequency(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.attacked_frames().len() as f64 / self.frames.len() as f64
    }

    /// True when re-simulating the recorded actions reproduces every recorded state bit for bit.
    pub fn replays_exactly(&self, sim: &SimConfig) -> bool {
        let replayed = replay(self.initial_state(), &self.actions(), sim);
        replayed == self.states()
    }
}

/// States visited when applying `actions` from `initial`, starting with `initial`.
pub fn replay(initial: &SceneState, actions: &[ActionDelta], sim: &SimConfig) -> Vec<SceneState> {
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(initial.clone());
    for a in actions {
        let next = step(out.last().unwrap(), *a, sim);
        out.push(next);
    }
    out
}

/// Closed-loop rollout: observe, let the hook intercept, act, clamp, step.
/// Stops on task success or after `max_steps` frames.
pub fn run_episode(
    policy: &dyn PolicyFn,
    spec: &ScenarioSpec,
    initial: SceneState,
    max_steps: usize,
    mut hook: Option<&mut dyn ObservationHook>,
    sim: &SimConfig,
) -> Result<Trajectory> {
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be >= 1".into()));
    }
    let mut frames = Vec::new();
    let mut state = initial;
    let mut success = false;
    for t in 0..max_steps {
        let obs = Observation::capture(&state, spec, sim);
        let reference = clamp_action(policy.act(&obs, &state)?, sim.max_step);
        let control = match hook.as_deref_mut() {
            Some(h) => h.intercept(t, &obs, &state, &reference)?,
            None => None,
        };
        let (action, perturbed, guidance) = match control {
            Some(c) => {
                let a = clamp_action(policy.act(&c.obs, &state)?, sim.max_step);
                (a, Some(c.obs), c.guidance)
            }
            None => (reference, None, None),
        };
        let next = step(&state, action, sim);
        frames.push(Frame {
            obs,
            state,
            action,
            reference,
            perturbed,
            guidance,
        });
        state = next;
        if spec.is_success(&state) {
            success = true;
            break;
        }
    }
    Ok(Trajectory {
        scenario: spec.clone(),
        frames,
        final_state: state,
        success,
    })
}

/// Expert demonstration with uniform noise injected into the
/// executed displacement; the recorded reference stays the clean expert label,
/// so the demos cover states slightly off the nominal path.
pub fn collect_demo(
    spec: &ScenarioSpec,
    initial: SceneState,
    sim: &SimConfig,
    expert: &ExpertConfig,
    noise: f64,
    seed: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::new();
    let mut state = initial;
    let mut success = false;
    for _ in 0..sim.max_steps {
        let obs = Observation::capture(&state, spec, sim);
        let reference = clamp_action(scripted_expert(&state, spec, sim, expert), sim.max_step);
        let mut action = reference;
        if noise > 0.0 && action.dp != Vec3::ZERO {
            let n = Vec3::new(
                rng.gen_range(-noise..=noise),
                rng.gen_range(-noise..=noise),
                rng.gen_range(-noise..=noise),
            );
            action.dp = action.dp + n;
            action = clamp_action(action, sim.max_step);
        }
        let next = step(&state, action, sim);
        frames.push(Frame {
            obs,
            state,
            action,
            reference,
            perturbed: None,
            guidance: None,
        });
        state = next;
        if spec.is_success(&state) {
            success = true;
            break;
        }
    }
    Trajectory {
        scenario: spec.clone(),
        frames,
        final_state: state,
        success,
    }
}
