use std::sync::OnceLock;

use eai_attack::attack::*;
use eai_attack::config::RunConfig;
use eai_attack::experiment as ex;
use eai_attack::policy::{NormKind, Policy};
use eai_attack::scene::{Archetype, ScenarioSpec, SceneState};

struct Fixture {
    cfg: RunConfig,
    victim: Policy,
    leader: AttackLeader,
    scenarios: Vec<(ScenarioSpec, SceneState)>,
}

const ARCH: Archetype = Archetype::CutAppleKnife;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = RunConfig::default();
        cfg.sim.image_size = 8;
        cfg.sim.max_steps = 60;
        cfg.data.n_demos = 8;
        cfg.data.n_tibbers = 8;
        cfg.data.n_eval = 4;
        cfg.bc.hidden = vec![16];
        cfg.bc.epochs = 15;
        cfg.leader.hidden = vec![16];
        cfg.leader.epochs = 10;
        let demos = ex::demos(&cfg, ARCH).unwrap();
        let victim = ex::policy(&cfg, &demos, NormKind::MinMax, None, None).unwrap();
        let leader = ex::leader(&cfg, &ex::tibbers(&cfg, ARCH).unwrap()).unwrap();
        let scenarios = ex::eval_scenarios(&cfg, ARCH).unwrap();
        Fixture {
            cfg,
            victim,
            leader,
            scenarios,
        }
    })
}

fn setup<'a>(f: &'a Fixture, guidance: GuidanceMode, scheduler: Scheduler) -> AttackSetup<'a> {
    AttackSetup {
        victim: &f.victim,
        source: &f.victim,
        leader: Some(&f.leader),
        guidance,
        attack_type: ARCH.level(),
        pgd: f.cfg.attack.pgd,
        scheduler,
        baseline_scale: None,
    }
}

#[test]
fn null_guidance_leaves_the_episode_clean() {
    let f = fixture();
    let runs = ex::attack_suite(
        &f.cfg,
        &setup(f, GuidanceMode::Null, Scheduler::Dense),
        &f.scenarios,
    )
    .unwrap();
    for r in &runs {
        assert_eq!(r.clean.len(), r.attacked.len());
        for (a, c) in r.attacked.frames.iter().zip(&r.clean.frames) {
            let (x, y) = (a.action.to_array(), c.action.to_array());
            assert!((0..4).all(|i| (x[i] - y[i]).abs() < 1e-3));
        }
        assert!(r.pgd.iter().all(|p| p.loss_trace[0] == 0.0));
    }
}

#[test]
fn dense_attacks_every_frame_within_budget() {
    let f = fixture();
    let runs = ex::attack_suite(
        &f.cfg,
        &setup(f, GuidanceMode::Leader, Scheduler::Dense),
        &f.scenarios,
    )
    .unwrap();
    let eps = f.cfg.attack.pgd.epsilon;
    for r in &runs {
        assert_eq!(r.attack_frequency, 1.0);
        assert_eq!(r.pgd.len(), r.attacked.len());
        for fr in &r.attacked.frames {
            let p = fr.perturbed.as_ref().unwrap();
            assert!(p.linf_distance(&fr.obs) <= eps + 1e-12);
            assert!(p.pixels_in_unit_range());
            assert_eq!((p.proprio, p.task_id), (fr.obs.proprio, fr.obs.task_id));
        }
        for rec in &r.pgd {
            assert_eq!(rec.loss_trace.len(), f.cfg.attack.pgd.n_iters + 1);
        }
        assert!(r.attacked.replays_exactly(&f.cfg.sim));
    }
}

#[test]
fn realized_schedule_matches_replay() {
    let f = fixture();
    let adaptive = ex::adaptive_for(&f.cfg, &f.leader);
    for sched in [
        Scheduler::Stride { every: 2 },
        Scheduler::Stride { every: 3 },
        adaptive,
    ] {
        let runs =
            ex::attack_suite(&f.cfg, &setup(f, GuidanceMode::Leader, sched), &f.scenarios).unwrap();
        for r in &runs {
            let frames = &r.attacked.frames;
            let predicted = replay_schedule(&sched, frames.len(), |t| {
                frames[t]
                    .guidance
                    .map_or(0.0, |g| if g.is_null() { 0.0 } else { g.scale })
            });
            assert_eq!(predicted, r.attacked.attacked_frames(), "{}", sched.label());
        }
    }
}

#[test]
fn transfer_from_an_identical_copy_equals_white_box() {
    let f = fixture();
    let copy = f.victim.clone();
    let s = setup(f, GuidanceMode::Leader, Scheduler::Stride { every: 2 });
    for (i, (spec, init)) in f.scenarios.iter().enumerate().take(2) {
        let w = run_attack(&s, spec, init, &f.cfg.sim, i as u64).unwrap();
        let t = transfer_attack(&s, &copy, spec, init, &f.cfg.sim, i as u64).unwrap();
        assert_eq!(w.attacked, t.attacked);
    }
}

#[test]
fn zero_budget_transfer_equals_clean() {
    let f = fixture();
    let demos = ex::demos(&f.cfg, ARCH).unwrap();
    let sub = ex::policy(&f.cfg, &demos, NormKind::MinMax, Some(3), Some(vec![8])).unwrap();
    let mut s = setup(f, GuidanceMode::Leader, Scheduler::Dense);
    s.pgd = PgdConfig {
        epsilon: 0.0,
        alpha: 0.0,
        n_iters: 3,
    };
    for (i, (spec, init)) in f.scenarios.iter().enumerate() {
        let r = transfer_attack(&s, &sub, spec, init, &f.cfg.sim, i as u64).unwrap();
        assert_eq!(r.attacked.actions(), r.clean.actions());
        let vc = ex::verdict(&f.cfg, &r.clean).unwrap();
        let va = ex::verdict(&f.cfg, &r.attacked).unwrap();
        assert_eq!(vc.events, va.events);
    }
}

#[test]
fn suites_are_deterministic() {
    let f = fixture();
    let s = setup(f, GuidanceMode::Random, Scheduler::Stride { every: 3 });
    let a = ex::attack_suite(&f.cfg, &s, &f.scenarios).unwrap();
    let b = ex::attack_suite(&f.cfg, &s, &f.scenarios).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.attacked, y.attacked);
    }
}

#[test]
fn misconfigured_setups_are_rejected() {
    let f = fixture();
    let (spec, init) = &f.scenarios[0];
    let mut s = setup(f, GuidanceMode::Leader, Scheduler::Dense);
    s.leader = None;
    assert!(run_attack(&s, spec, init, &f.cfg.sim, 0).is_err());
    let mut s = setup(f, GuidanceMode::FixedHuman, Scheduler::Dense);
    s.baseline_scale = Some(-1.0);
    assert!(run_attack(&s, spec, init, &f.cfg.sim, 0).is_err());
    let s = setup(f, GuidanceMode::Leader, Scheduler::Stride { every: 0 });
    assert!(run_attack(&s, spec, init, &f.cfg.sim, 0).is_err());
    // leader of another task
    let (other, oinit) =
        eai_attack::scene::make_scenario(Archetype::TakeCoffee, 0, &f.cfg.sim).unwrap();
    let s = setup(f, GuidanceMode::Leader, Scheduler::Dense);
    assert!(run_attack(&s, &other, &oinit, &f.cfg.sim, 0).is_err());
}
