use serde::{Deserialize, Serialize};

use super::{ScenarioSpec, SceneState, SimConfig, Tag};
use crate::types::{ActionDelta, Vec3};

/// Tuning of the scripted demonstrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    /// Cruise speed (m/frame); kept well below the end-effector speed limit.
    pub speed: f64,
    /// End-effector height while carrying an object (m).
    pub carry_height: f64,
    /// Close the gripper once this near the grasp point (m).
    pub grasp_tol: f64,
    /// Open the gripper once the held object is this near its placement point (m).
    pub place_tol: f64,
    /// Extra xy clearance kept around forbidden objects (m).
    pub clearance: f64,
    /// Descend to the placement height inside this xy distance (m).
    pub descend_radius: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            speed: 0.024,
            carry_height: 0.08,
            grasp_tol: 0.008,
            place_tol: 0.008,
            clearance: 0.04,
            descend_radius: 0.04,
        }
    }
}

fn open(dp: Vec3) -> ActionDelta {
    ActionDelta::new(dp, 0.0)
}

fn closed(dp: Vec3) -> ActionDelta {
    ActionDelta::new(dp, 1.0)
}

/// Stateless pick-and-place controller: approach the task target, grasp it,
/// carry it over the goal, lower it and release. Paths bend around forbidden
/// objects by aiming at tangent points of their inflated footprints.
pub fn scripted_expert(
    s: &SceneState,
    spec: &ScenarioSpec,
    sim: &SimConfig,
    cfg: &ExpertConfig,
) -> ActionDelta {
    let Some(target) = s.task_target() else {
        return open(Vec3::ZERO);
    };

    match s.held() {
        Some(held) if held.id == target.id => {
            let place = spec.place_point(held.radius);
            if held.pos.dist(place) <= cfg.place_tol && spec.release_region.contains(held.pos) {
                return open(Vec3::ZERO);
            }
            let ee_goal = place - s.grasp_offset;
            let waypoint = if s.ee_pos.dist_xy(ee_goal) > cfg.descend_radius {
                Vec3::new(ee_goal.x, ee_goal.y, cfg.carry_height.max(ee_goal.z))
            } else {
                ee_goal
            };
            let reach = sim.ee_contact_radius.max(held.radius);
            closed(move_toward(s, waypoint, reach, cfg))
        }
        // holding something else: put it down where it is
        Some(_) => open(Vec3::ZERO),
        None => {
            if s.gripper_closed || spec.goal_region.contains(target.pos) {
                return open(Vec3::ZERO);
            }
            if s.ee_pos.dist(target.pos) <= cfg.grasp_tol {
                return closed(Vec3::ZERO);
            }
            open(move_toward(s, target.pos, sim.ee_contact_radius, cfg))
        }
    }
}

/// Capped step toward `goal`, detouring around forbidden objects in the xy plane.
fn move_toward(s: &SceneState, goal: Vec3, reach: f64, cfg: &ExpertConfig) -> Vec3 {
    let p = s.ee_pos;
    let mut aim = goal;
    let blocking = s
        .objects
        .iter()
        .filter(|o| o.has(Tag::Forbidden))
        .map(|o| (o.pos, o.radius + reach + cfg.clearance))
        .filter(|(c, r)| segment_point_dist_xy(p, goal, *c) < *r)
        .min_by(|a, b| p.dist_xy(a.0).total_cmp(&p.dist_xy(b.0)));
    if let Some((c, r)) = blocking {
        let (x, y) = detour_xy(p, goal, c, r);
        aim = Vec3::new(x, y, goal.z);
    }
    (aim - p).clamp_norm(cfg.speed)
}

fn segment_point_dist_xy(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((c.x - a.x) * abx + (c.y - a.y) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a.x + t * abx - c.x).hypot(a.y + t * aby - c.y)
}

/// Point to head for when the straight path `p -> goal` crosses the disc `(c, r)`.
fn detour_xy(p: Vec3, goal: Vec3, c: Vec3, r: f64) -> (f64, f64) {
    // tangent circle slightly larger than the keep-out disc so the path clears it
    let rt = r * 1.1;
    let (dx, dy) = (p.x - c.x, p.y - c.y);
    let d = dx.hypot(dy);
    let base = dy.atan2(dx);
    let pick = |cands: [(f64, f64); 2]| {
        let dist = |q: &(f64, f64)| (q.0 - goal.x).hypot(q.1 - goal.y);
        if dist(&cands[0]) <= dist(&cands[1]) {
            cands[0]
        } else {
            cands[1]
        }
    };
    if d > rt {
        let half = (rt / d).acos();
        let at = |ang: f64| (c.x + rt * ang.cos(), c.y + rt * ang.sin());
        pick([at(base + half), at(base - half)])
    } else {
        // inside the tangent circle: slide around it while drifting outward
        let (ux, uy) = if d > 1e-12 {
            (dx / d, dy / d)
        } else {
            (1.0, 0.0)
        };
        let step = 0.05;
        let a = (p.x + (-uy + 0.5 * ux) * step, p.y + (ux + 0.5 * uy) * step);
        let b = (p.x + (uy + 0.5 * ux) * step, p.y + (-ux + 0.5 * uy) * step);
        pick([a, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{make_scenario, step, Archetype};

    #[test]
    fn opens_at_goal_when_holding_inside_release_region() {
        let sim = SimConfig::default();
        let cfg = ExpertConfig::default();
        let (spec, mut s) = make_scenario(Archetype::PlaceCupOnPlate, 0, &sim).unwrap();
        let idx = s.objects.iter().position(|o| o.id == "cup").unwrap();
        let place = spec.place_point(s.objects[idx].radius);
        s.objects[idx].pos = place;
        s.ee_pos = place;
        s.gripper_closed = true;
        s.held_object = Some("cup".into());
        let a = scripted_expert(&s, &spec, &sim, &cfg);
        assert_eq!(a, ActionDelta::new(Vec3::ZERO, 0.0));
    }

    #[test]
    fn detour_clears_keepout_disc() {
        let sim = SimConfig::default();
        let cfg = ExpertConfig::default();
        let (spec, mut s) = make_scenario(Archetype::TakeCoffee, 4, &sim).unwrap();
        let monitor = s.object("monitor").unwrap().clone();
        let keepout = monitor.radius + sim.ee_contact_radius + cfg.clearance;
        let mut min_gap = f64::INFINITY;
        for _ in 0..200 {
            let a = scripted_expert(&s, &spec, &sim, &cfg);
            s = step(&s, a, &sim);
            min_gap = min_gap.min(s.ee_pos.dist_xy(monitor.pos));
            if s.held_object.is_some() {
                break;
            }
        }
        assert!(s.held_object.is_some(), "expert never reached the coffee");
        assert!(
            min_gap > keepout * 0.9,
            "gap {min_gap} vs keep-out {keepout}"
        );
    }
}
