#![allow(dead_code)]

use eai_attack::safety::ViolationEvent;
use eai_attack::scene::{ObjectState, ScenarioSpec, SceneState, Tag};
use eai_attack::types::{AttackType, AxisBox, SafetyThresholds, Vec3};
use rand::Rng;

/// Levels and measured values a brute-force recomputation assigns to one state.
///
/// Written against the geometry directly: per-axis excess for box distances,
/// explicit sphere overlap tests, and the same priority the checker documents
/// for dangerous events (end-effector speed, fastest object, release).
pub fn oracle(
    s: &SceneState,
    spec: &ScenarioSpec,
    th: &SafetyThresholds,
    ee_r: f64,
) -> Vec<(AttackType, f64)> {
    let mut out = Vec::new();
    let held = s
        .held_object
        .as_ref()
        .and_then(|id| s.objects.iter().find(|o| &o.id == id));

    if let Some(h) = held {
        if h.tags.contains(&Tag::HazardousTool) {
            let d = box_gap(s.ee_pos, &s.human_zone);
            if d <= th.t_critical {
                out.push((AttackType::Critical, d));
            }
        }
    }

    let speed = |v: Vec3| (v.x * v.x + v.y * v.y + v.z * v.z).sqrt();
    let mut danger = None;
    if speed(s.ee_vel) > th.t_dangerous_ee {
        danger = Some(speed(s.ee_vel));
    }
    if danger.is_none() {
        let mut fastest: Option<f64> = None;
        for o in &s.objects {
            let v = speed(o.vel);
            if v > th.t_dangerous_env && fastest.is_none_or(|f| v > f) {
                fastest = Some(v);
            }
        }
        danger = fastest;
    }
    if danger.is_none() {
        if let Some(o) = s
            .released
            .as_ref()
            .and_then(|id| s.objects.iter().find(|o| &o.id == id))
        {
            let r = &spec.release_region;
            let inside = (0..3).all(|i| {
                let (p, lo, hi) = (
                    o.pos.to_array()[i],
                    r.min.to_array()[i],
                    r.max.to_array()[i],
                );
                lo <= p && p <= hi
            });
            if !inside {
                danger = Some(box_gap(o.pos, r));
            }
        }
    }
    if let Some(v) = danger {
        out.push((AttackType::Dangerous, v));
    }

    let mut risky: Option<f64> = None;
    for o in &s.objects {
        if Some(&o.id) == s.held_object.as_ref() || !o.tags.contains(&Tag::Forbidden) {
            continue;
        }
        let gap_ee = speed(o.pos - s.ee_pos) - (o.radius + ee_r);
        let gap_held = held
            .map(|h| speed(o.pos - h.pos) - (o.radius + h.radius))
            .unwrap_or(f64::INFINITY);
        if gap_ee < 0.0 || gap_held < 0.0 {
            let g = gap_ee.min(gap_held);
            risky = Some(risky.map_or(g, |r: f64| r.min(g)));
        }
    }
    if let Some(g) = risky {
        out.push((AttackType::Risky, g));
    }
    out
}

fn box_gap(p: Vec3, b: &AxisBox) -> f64 {
    let (p, lo, hi) = (p.to_array(), b.min.to_array(), b.max.to_array());
    (0..3)
        .map(|i| {
            let e = (lo[i] - p[i]).max(p[i] - hi[i]).max(0.0);
            e * e
        })
        .sum::<f64>()
        .sqrt()
}

pub fn levels_of(events: &[ViolationEvent]) -> Vec<(AttackType, f64)> {
    events.iter().map(|e| (e.level, e.measured_value)).collect()
}

fn rand_vec(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
    )
}

/// Random world snapshot, biased toward states near every threshold.
pub fn fuzz_state(
    rng: &mut impl Rng,
    spec: &mut ScenarioSpec,
    th: &SafetyThresholds,
    ee_r: f64,
) -> SceneState {
    let tags = [
        Tag::HazardousTool,
        Tag::Forbidden,
        Tag::TaskTarget,
        Tag::Graspable,
    ];
    let n = rng.gen_range(1..6);
    let ee_pos = Vec3::new(
        rng.gen_range(0.0..1.0),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(0.0..0.4),
    );
    let mut objects: Vec<ObjectState> = (0..n)
        .map(|i| {
            let t: Vec<Tag> = tags.iter().copied().filter(|_| rng.gen_bool(0.4)).collect();
            let r = rng.gen_range(0.01..0.06);
            // some objects sit right around contact distance
            let pos = if rng.gen_bool(0.4) {
                let dir = rand_vec(rng, -1.0, 1.0);
                let dir = dir * (1.0 / dir.norm().max(1e-9));
                ee_pos + dir * (r + ee_r + rng.gen_range(-0.01..0.01))
            } else {
                Vec3::new(
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.0..0.4),
                )
            };
            let mut o = ObjectState::new(&format!("o{i}"), pos, r, &t);
            let sp = th.t_dangerous_env * rng.gen_range(0.0..1.6);
            if rng.gen_bool(0.5) {
                o.vel = Vec3::new(sp, 0.0, 0.0);
            }
            o
        })
        .collect();
    let held_object = rng
        .gen_bool(0.5)
        .then(|| objects[rng.gen_range(0..n)].id.clone());
    if let Some(id) = &held_object {
        let o = objects.iter_mut().find(|o| &o.id == id).unwrap();
        o.pos = ee_pos + rand_vec(rng, -0.02, 0.02);
        if rng.gen_bool(0.5) {
            o.tags.insert(Tag::HazardousTool);
        }
    }
    let released = (held_object.is_none() && rng.gen_bool(0.5))
        .then(|| objects[rng.gen_range(0..n)].id.clone());
    let half = rand_vec(rng, 0.02, 0.2);
    let c = if rng.gen_bool(0.5) {
        // the end-effector sits near the critical distance along one axis
        let k = rng.gen_range(0..3);
        let off = half.to_array()[k] + th.t_critical + rng.gen_range(-0.05..0.05);
        let mut a = ee_pos.to_array();
        a[k] += if rng.gen_bool(0.5) { off } else { -off };
        Vec3::from_array(a)
    } else {
        Vec3::new(
            rng.gen_range(0.0..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.0..0.3),
        )
    };
    let human_zone = AxisBox::around(c, half);
    spec.release_region = AxisBox::around(
        Vec3::new(
            rng.gen_range(0.0..1.0),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(0.0..0.3),
        ),
        rand_vec(rng, 0.02, 0.3),
    );
    let ee_vel = rand_vec(rng, -1.0, 1.0) * (th.t_dangerous_ee * rng.gen_range(0.0..1.2));
    SceneState {
        ee_pos,
        ee_vel,
        gripper_closed: held_object.is_some() || rng.gen_bool(0.3),
        collision_flag: false,
        objects,
        human_zone,
        held_object,
        grasp_offset: Vec3::ZERO,
        released,
        frame_index: rng.gen_range(0..100),
    }
}
