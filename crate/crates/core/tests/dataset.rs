use std::fs;

use eai_attack::attack::{train_leader, LeaderConfig};
use eai_attack::dataset::format::{encode_records, FORMAT_VERSION};
use eai_attack::dataset::*;
use eai_attack::metrics::{dataset_stats, ReportRow};
use eai_attack::policy::{train_bc, BcConfig, NormKind};
use eai_attack::safety::judge_episode;
use eai_attack::scene::{
    collect_demo, make_scenario, Archetype, ExpertConfig, SimConfig, Trajectory,
};
use eai_attack::types::{AttackType, GuidanceLabel, SafetyThresholds};
use eai_attack::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_sim() -> SimConfig {
    SimConfig {
        image_size: 8,
        ..SimConfig::default()
    }
}

fn demo(arch: Archetype, seed: u64, sim: &SimConfig) -> Trajectory {
    let (spec, init) = make_scenario(arch, seed, sim).unwrap();
    collect_demo(&spec, init, sim, &ExpertConfig::default(), 0.01, seed)
}

/// Demo with a few frames marked as attacked.
fn random_trajectory(rng: &mut ChaCha8Rng, sim: &SimConfig) -> Trajectory {
    let arch = Archetype::ALL[rng.gen_range(0..9)];
    let mut t = demo(arch, rng.gen(), sim);
    for f in t.frames.iter_mut() {
        if rng.gen_bool(0.3) {
            let mut o = f.obs.clone();
            let px: Vec<f64> = o
                .pixels()
                .map(|p| (p + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                .collect();
            o.set_pixels(&px);
            f.perturbed = Some(o);
            f.guidance = Some(GuidanceLabel::new([1, 0, -1, 0], rng.gen_range(0.0..0.05)).unwrap());
        }
    }
    t
}

fn tibbers(arch: Archetype, n: u64, seed: u64) -> TibbersDataset {
    gen_tibbers(
        arch,
        arch.level(),
        n,
        seed,
        &small_sim(),
        &ExpertConfig::default(),
        &SafetyThresholds::default(),
        &TibbersConfig::default(),
    )
    .unwrap()
}

#[test]
fn trajectories_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let sim = small_sim();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for k in 0..10 {
        let t = random_trajectory(&mut rng, &sim);
        let path = dir.path().join(format!("{k}.{EXT_TRAJECTORY}"));
        save_trajectory(&path, &t, &sim).unwrap();
        let (back, sim_back) = load_trajectory(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(sim_back, sim);
    }
}

#[test]
fn every_artifact_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let sim = small_sim();
    let demos: Vec<_> = (0..3)
        .map(|s| demo(Archetype::PutForkNearPlate, s, &sim))
        .collect();

    let bc = BcConfig {
        hidden: vec![6],
        epochs: 2,
        ..BcConfig::default()
    };
    let (p, _) = train_bc(&demos, NormKind::MeanStd, &bc, sim.max_step).unwrap();
    let pp = dir.path().join("p.pol");
    save_policy(&pp, &p).unwrap();
    assert_eq!(load_policy(&pp).unwrap(), p);

    let ds = tibbers(Archetype::PutForkNearPlate, 3, 1);
    let tp = dir.path().join("d.tib");
    save_tibbers(&tp, &ds).unwrap();
    assert_eq!(load_tibbers(&tp).unwrap(), ds);

    let lc = LeaderConfig {
        hidden: vec![5],
        epochs: 2,
        ..LeaderConfig::default()
    };
    let (l, _) = train_leader(&ds.samples, &lc, sim.max_step).unwrap();
    let lp = dir.path().join("l.ldr");
    save_leader(&lp, &l).unwrap();
    assert_eq!(load_leader(&lp).unwrap(), l);

    let acts: Vec<_> = demos.iter().flat_map(|d| d.reference_actions()).collect();
    let st = dataset_stats(&acts, 1e-6).unwrap();
    let sp = dir.path().join("s.stats");
    save_stats(&sp, &st).unwrap();
    assert_eq!(load_stats(&sp).unwrap(), st);

    let rows = vec![
        ReportRow {
            level: AttackType::Risky,
            task: "put-fork-near-plate".into(),
            model: "minmax".into(),
            scheduler: "dense".into(),
            asr: 0.35,
            ac: 0.123456789,
            ad: 1.0 / 3.0,
            tsrc: None,
            attack_freq: 1.0,
            n: 20,
        },
        ReportRow {
            level: AttackType::Critical,
            task: "cut-apple-knife".into(),
            model: "meanstd".into(),
            scheduler: "stride3".into(),
            asr: 0.1,
            ac: 0.0,
            ad: 2.5e-7,
            tsrc: Some(0.95),
            attack_freq: 0.3333333333333333,
            n: 20,
        },
    ];
    let rp = dir.path().join("r.csv");
    save_report(&rp, &rows).unwrap();
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| (a.level, &a.task).cmp(&(b.level, &b.task)));
    assert_eq!(load_report(&rp).unwrap(), sorted);
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sim = small_sim();
    let t = demo(Archetype::TakeCoffee, 3, &sim);
    let path = dir.path().join("t.traj");
    save_trajectory(&path, &t, &sim).unwrap();
    let bytes = fs::read(&path).unwrap();

    for cut in [bytes.len() / 2, bytes.len() - 2, 10] {
        fs::write(&path, &bytes[..cut]).unwrap();
        assert!(
            matches!(load_trajectory(&path), Err(Error::Format(_))),
            "cut at {cut}"
        );
    }

    // a file of the wrong kind
    let pol = dir.path().join("x.pol");
    fs::write(&pol, &bytes).unwrap();
    assert!(matches!(load_policy(&pol), Err(Error::Format(_))));

    let v0 = String::from_utf8(bytes.clone()).unwrap().replacen(
        &format!(" v{FORMAT_VERSION} "),
        " v0 ",
        1,
    );
    fs::write(&path, v0).unwrap();
    assert!(matches!(
        load_trajectory(&path),
        Err(Error::Version { found: 0, .. })
    ));

    let missing = dir.path().join("nope.traj");
    assert!(load_trajectory(&missing).is_err());
}

#[test]
fn well_formed_file_with_bad_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.traj");
    let bytes = encode_records("trajectory", 1, &serde_json::json!({"nope": 1}), &[0u8]).unwrap();
    fs::write(&path, bytes).unwrap();
    assert!(matches!(load_trajectory(&path), Err(Error::Format(_))));
}

#[test]
fn emitted_episodes_violate_their_level() {
    let sim = small_sim();
    let th = SafetyThresholds::default();
    for arch in Archetype::ALL {
        let ds = tibbers(arch, 6, 9);
        let lengths = ds.episode_lengths();
        assert!(!lengths.is_empty());
        for (id, n) in &lengths {
            let spec = &ds.scenarios[id];
            let mut states: Vec<_> = ds
                .samples
                .iter()
                .filter(|s| s.episode_id == *id)
                .map(|s| s.state.clone())
                .collect();
            assert_eq!(states.len(), *n);
            // the state after the last labelled action
            let last = ds
                .samples
                .iter()
                .rev()
                .find(|s| s.episode_id == *id)
                .unwrap();
            let adv = adversarial_action(
                &last.state,
                spec,
                ds.attack_type,
                *id,
                &sim,
                &ExpertConfig::default(),
                &TibbersConfig::default(),
            );
            states.push(eai_attack::scene::step(&last.state, adv, &sim));
            let v = judge_episode(&states, spec, &th, sim.ee_contact_radius).unwrap();
            assert!(
                v.has_level(arch.level()),
                "{arch} episode {id}: {:?}",
                v.events
            );
        }
        for s in &ds.samples {
            assert!(s.guidance.direction.iter().all(|d| (-1..=1).contains(d)));
            assert!(s.guidance.scale >= 0.0);
            assert_eq!((s.archetype, s.attack_type), (arch, arch.level()));
        }
    }
}

#[test]
fn size_is_sum_of_episode_lengths() {
    for arch in [
        Archetype::CutAppleKnife,
        Archetype::PourWineToCup,
        Archetype::PutSpongeToSink,
    ] {
        let ds = tibbers(arch, 5, 4);
        let total: usize = ds.episode_lengths().values().sum();
        assert_eq!(ds.samples.len(), total);
        assert_eq!(ds.scenarios.len() + ds.discarded.len(), 5);
        // frames of an episode are contiguous and start at 0
        for id in ds.scenarios.keys() {
            let frames: Vec<usize> = ds
                .samples
                .iter()
                .filter(|s| s.episode_id == *id)
                .map(|s| s.frame_index)
                .collect();
            assert_eq!(frames, (0..frames.len()).collect::<Vec<_>>());
        }
    }
}

#[test]
fn samples_regenerate_from_coordinates() {
    let sim = small_sim();
    let ds = tibbers(Archetype::OpenBoxScissor, 4, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..15 {
        let s = &ds.samples[rng.gen_range(0..ds.samples.len())];
        let r = regenerate_sample(
            ds.archetype,
            ds.attack_type,
            ds.seed,
            s.episode_id,
            s.frame_index,
            &sim,
            &ExpertConfig::default(),
            &SafetyThresholds::default(),
            &TibbersConfig::default(),
        )
        .unwrap();
        assert_eq!(&r, s);
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(
        tibbers(Archetype::TakeCoffee, 3, 5),
        tibbers(Archetype::TakeCoffee, 3, 5)
    );
}

#[test]
fn coinciding_actions_label_null() {
    let sim = small_sim();
    let ds = tibbers(Archetype::PlaceCupOnPlate, 1, 2);
    let a = eai_attack::scene::scripted_expert(
        &ds.samples[0].state,
        &ds.scenarios[&0],
        &sim,
        &ExpertConfig::default(),
    );
    let g = label_guidance(&a, &a, 0.0);
    assert_eq!(g.direction, [0; 4]);
    assert_eq!(g.scale, 0.0);
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.manifest");
    let entries = vec![
        ("policy".to_string(), "out/p.pol".to_string()),
        ("seed".to_string(), "7".to_string()),
    ];
    format::write_manifest(&p, &entries).unwrap();
    assert_eq!(format::read_manifest(&p).unwrap(), entries);
    assert!(format::write_manifest(&p, &[("a=b".into(), "c".into())]).is_err());
}
