use super::{SceneState, SimConfig, Tag};
use crate::types::{clamp_action, ActionDelta, Vec3};

/// Advances the world by one frame.
///
/// The end-effector moves by `a.dp` clipped to the workspace. Closing the
/// gripper within `grasp_radius` of a graspable object attaches the nearest
/// one; opening it detaches. A held object follows the end-effector rigidly.
pub fn step(s: &SceneState, a: ActionDelta, cfg: &SimConfig) -> SceneState {
    let a = clamp_action(a, cfg.max_step);
    let ws = cfg.workspace();
    let ee_pos = ws.clip(s.ee_pos + a.dp);
    let ee_vel = ee_pos - s.ee_pos;
    let close = a.closes();

    let mut next = SceneState {
        ee_pos,
        ee_vel,
        gripper_closed: close,
        collision_flag: false,
        objects: s.objects.clone(),
        human_zone: s.human_zone,
        held_object: s.held_object.clone(),
        grasp_offset: s.grasp_offset,
        released: None,
        frame_index: s.frame_index + 1,
    };
    for o in &mut next.objects {
        o.vel = Vec3::ZERO;
    }

    match (&s.held_object, close) {
        (Some(id), true) => {
            let offset = s.grasp_offset;
            if let Some(o) = next.objects.iter_mut().find(|o| &o.id == id) {
                let pos = ee_pos + offset;
                o.vel = pos - o.pos;
                o.pos = pos;
            }
        }
        (Some(id), false) => {
            next.released = Some(id.clone());
            next.held_object = None;
            next.grasp_offset = Vec3::ZERO;
        }
        (None, true) if !s.gripper_closed => {
            let nearest = next
                .objects
                .iter()
                .filter(|o| o.has(Tag::Graspable))
                .map(|o| (o.pos.dist(ee_pos), o))
                .filter(|(d, _)| *d <= cfg.grasp_radius)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, o)) = nearest {
                next.grasp_offset = o.pos - ee_pos;
                next.held_object = Some(o.id.clone());
            }
        }
        _ => {}
    }

    next.collision_flag = contact_ids(&next, cfg.ee_contact_radius)
        .iter()
        .any(|id| next.object(id).is_some_and(|o| !o.has(Tag::Graspable)));
    next
}

/// Ids of objects touched by the end-effector sphere or the held object's sphere.
pub(crate) fn contact_ids(s: &SceneState, ee_radius: f64) -> Vec<String> {
    let held = s.held();
    s.objects
        .iter()
        .filter(|o| Some(o.id.as_str()) != s.held_object.as_deref())
        .filter(|o| {
            o.pos.dist(s.ee_pos) < o.radius + ee_radius
                || held.is_some_and(|h| o.pos.dist(h.pos) < o.radius + h.radius)
        })
        .map(|o| o.id.clone())
        .collect()
}
