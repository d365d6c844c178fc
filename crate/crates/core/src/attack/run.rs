use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    baseline_guidance, compose_target, leader_infer, pgd_perturb, should_attack, AttackLeader,
    GuidanceMode, PgdConfig, Scheduler, SchedulerState,
};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scene::{
    run_episode, Observation, ObservationHook, ScenarioSpec, SceneState, SimConfig, StepControl,
    Trajectory,
};
use crate::types::{ActionDelta, AttackType, GuidanceLabel};

/// Everything that defines one attack configuration.
#[derive(Clone, Copy)]
pub struct AttackSetup<'a> {
    /// Policy that controls the robot.
    pub victim: &'a Policy,
    /// Policy whose gradients drive PGD; the victim itself for a white-box attack.
    pub source: &'a Policy,
    pub leader: Option<&'a AttackLeader>,
    pub guidance: GuidanceMode,
    pub attack_type: AttackType,
    pub pgd: PgdConfig,
    pub scheduler: Scheduler,
    /// Scale of the fixed-human and random baselines (m/frame). `None` takes
    /// the leader's predicted scale, so only the direction is ablated.
    pub baseline_scale: Option<f64>,
}

impl AttackSetup<'_> {
    pub fn validate(&self) -> Result<()> {
        self.pgd.validate()?;
        self.scheduler.validate()?;
        if let Some(v) = self.baseline_scale {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "baseline scale must be non-negative, got {v}"
                )));
            }
        }
        if self.guidance == GuidanceMode::Leader {
            let leader = self
                .leader
                .ok_or_else(|| Error::InvalidArgument("leader guidance needs a leader".into()))?;
            if !leader.attack_types.contains(&self.attack_type) {
                return Err(Error::Config(format!(
                    "leader for {} was not trained on {} attacks",
                    leader.archetype, self.attack_type
                )));
            }
        }
        Ok(())
    }

    fn white_box(&self) -> bool {
        std::ptr::eq(self.victim, self.source)
    }
}

/// Per-frame PGD diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdRecord {
    pub frame: usize,
    pub loss_trace: Vec<f64>,
    pub best_iter: usize,
}

/// Observation hook that perturbs scheduled frames.
pub struct AttackHook<'a> {
    pub setup: AttackSetup<'a>,
    pub state: SchedulerState,
    rng: ChaCha8Rng,
    pub records: Vec<PgdRecord>,
}

impl<'a> AttackHook<'a> {
    pub fn new(setup: AttackSetup<'a>, seed: u64) -> Self {
        Self {
            setup,
            state: SchedulerState::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            records: Vec::new(),
        }
    }

    fn guidance(&mut self, obs: &Observation, s: &SceneState) -> Result<GuidanceLabel> {
        match self.setup.guidance {
            GuidanceMode::Leader => {
                let leader = self.setup.leader.ok_or_else(|| {
                    Error::InvalidArgument("leader guidance needs a leader".into())
                })?;
                if leader.archetype.index() != obs.task_id {
                    return Err(Error::Config(format!(
                        "leader trained for {} used on task {}",
                        leader.archetype, obs.task_id
                    )));
                }
                leader_infer(leader, obs, self.setup.attack_type)
            }
            mode => {
                let scale = match (self.setup.baseline_scale, self.setup.leader) {
                    (Some(v), _) => v,
                    (None, Some(l)) if mode != GuidanceMode::Null => {
                        leader_infer(l, obs, self.setup.attack_type)?.scale
                    }
                    (None, None) if mode != GuidanceMode::Null => {
                        return Err(Error::InvalidArgument(format!(
                            "{mode} guidance needs a leader or a fixed scale"
                        )))
                    }
                    _ => 0.0,
                };
                baseline_guidance(mode, s, &mut self.rng, scale)
            }
        }
    }
}

impl ObservationHook for AttackHook<'_> {
    fn intercept(
        &mut self,
        frame: usize,
        obs: &Observation,
        state: &SceneState,
        clean_action: &ActionDelta,
    ) -> Result<Option<StepControl>> {
        if !should_attack(&self.setup.scheduler, frame, &self.state) {
            return Ok(None);
        }
        let g = self.guidance(obs, state)?;
        // a null direction leaves the action alone whatever its scale
        self.state
            .record(frame, if g.is_null() { 0.0 } else { g.scale });
        // the attacker only knows the action of the model it differentiates
        let a_orig = if self.setup.white_box() {
            *clean_action
        } else {
            self.setup.source.infer(obs)?
        };
        let target = compose_target(&a_orig, &g, self.setup.source.max_step);
        let out = pgd_perturb(self.setup.source, obs, &target, &self.setup.pgd)?;
        self.records.push(PgdRecord {
            frame,
            loss_trace: out.loss_trace,
            best_iter: out.best_iter,
        });
        Ok(Some(StepControl {
            obs: out.obs,
            guidance: Some(g),
        }))
    }
}

/// Clean reference run and attacked run from the same initial state.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub clean: Trajectory,
    pub attacked: Trajectory,
    pub attack_frequency: f64,
    pub pgd: Vec<PgdRecord>,
}

pub fn run_attack(
    setup: &AttackSetup,
    spec: &ScenarioSpec,
    initial: &SceneState,
    sim: &SimConfig,
    seed: u64,
) -> Result<AttackRun> {
    setup.validate()?;
    let clean = run_episode(
        setup.victim,
        spec,
        initial.clone(),
        sim.max_steps,
        None,
        sim,
    )?;
    let mut hook = AttackHook::new(*setup, seed);
    let attacked = run_episode(
        setup.victim,
        spec,
        initial.clone(),
        sim.max_steps,
        Some(&mut hook),
        sim,
    )?;
    Ok(AttackRun {
        attack_frequency: attacked.attack_frequency(),
        clean,
        attacked,
        pgd: hook.records,
    })
}

/// Black-box variant: gradients come from `substitute`, the victim only sees the result.
pub fn transfer_attack(
    setup: &AttackSetup,
    substitute: &Policy,
    spec: &ScenarioSpec,
    initial: &SceneState,
    sim: &SimConfig,
    seed: u64,
) -> Result<AttackRun> {
    let s = AttackSetup {
        source: substitute,
        ..*setup
    };
    run_attack(&s, spec, initial, sim, seed)
}
