use serde::{Deserialize, Serialize};

use super::{ScenarioSpec, SceneState, SimConfig, Tag};
use crate::types::{AxisBox, Vec3};

pub const PROPRIO_DIM: usize = 7;

const SUPERSAMPLE: usize = 4;

const BACKGROUND: [f64; 3] = [0.15, 0.15, 0.15];
const GOAL: [f64; 3] = [0.10, 0.35, 0.10];
const HUMAN: [f64; 3] = [0.20, 0.30, 0.90];
const PLAIN: [f64; 3] = [0.60, 0.60, 0.60];
const GRASPABLE: [f64; 3] = [0.90, 0.60, 0.10];
const TARGET: [f64; 3] = [0.10, 0.90, 0.20];
const HAZARD: [f64; 3] = [0.95, 0.10, 0.10];
const FORBIDDEN: [f64; 3] = [0.90, 0.10, 0.90];
const EE_OPEN: [f64; 3] = [1.00, 1.00, 1.00];
const EE_CLOSED: [f64; 3] = [0.10, 0.90, 0.90];
const EE_MARKER_RADIUS: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Gripper-mounted camera, centered on the end-effector.
    Ego,
    /// Fixed camera covering the whole table.
    Third,
}

/// What the policy sees at one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Side length of both square rasters.
    pub size: usize,
    /// `size * size * 3` intensities in `[0, 1]`, row-major, channel last.
    pub view_ego: Vec<f64>,
    pub view_third: Vec<f64>,
    /// End-effector position, velocity and gripper flag.
    pub proprio: [f64; PROPRIO_DIM],
    pub task_id: usize,
}

impl Observation {
    pub fn capture(s: &SceneState, spec: &ScenarioSpec, cfg: &SimConfig) -> Self {
        let p = s.ee_pos;
        let v = s.ee_vel;
        Self {
            size: cfg.image_size,
            view_ego: render(s, spec, View::Ego, cfg),
            view_third: render(s, spec, View::Third, cfg),
            proprio: [
                p.x,
                p.y,
                p.z,
                v.x,
                v.y,
                v.z,
                if s.gripper_closed { 1.0 } else { 0.0 },
            ],
            task_id: spec.task_id(),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.view_ego.len() + self.view_third.len()
    }

    /// Both views concatenated (ego first).
    pub fn pixels(&self) -> impl Iterator<Item = f64> + '_ {
        self.view_ego.iter().chain(self.view_third.iter()).copied()
    }

    pub fn set_pixels(&mut self, px: &[f64]) {
        let n = self.view_ego.len();
        self.view_ego.copy_from_slice(&px[..n]);
        let m = self.view_third.len();
        self.view_third.copy_from_slice(&px[n..n + m]);
    }

    /// Largest absolute per-pixel difference between two observations.
    pub fn linf_distance(&self, other: &Observation) -> f64 {
        self.pixels()
            .zip(other.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn pixels_in_unit_range(&self) -> bool {
        self.pixels().all(|v| (0.0..=1.0).contains(&v))
    }
}

struct Camera {
    size: usize,
    /// World xy at the center of the raster.
    center: (f64, f64),
    /// Meters covered by the raster side.
    extent: f64,
}

impl Camera {
    fn for_view(view: View, s: &SceneState, cfg: &SimConfig) -> Self {
        match view {
            View::Third => {
                let ws = cfg.workspace();
                let c = ws.center();
                Camera {
                    size: cfg.image_size,
                    center: (c.x, c.y),
                    extent: (ws.max.x - ws.min.x).max(ws.max.y - ws.min.y),
                }
            }
            View::Ego => Camera {
                size: cfg.image_size,
                center: (s.ee_pos.x, s.ee_pos.y),
                extent: cfg.ego_window,
            },
        }
    }

    fn px(&self) -> f64 {
        self.extent / self.size as f64
    }

    /// World xy of a fractional raster coordinate (column, row); +y points up.
    fn world(&self, col: f64, row: f64) -> (f64, f64) {
        let px = self.px();
        (
            self.center.0 + (col - self.size as f64 / 2.0) * px,
            self.center.1 - (row - self.size as f64 / 2.0) * px,
        )
    }

    /// Fractional raster coordinate (column, row) of a world point.
    pub(crate) fn raster(&self, x: f64, y: f64) -> (f64, f64) {
        let px = self.px();
        (
            (x - self.center.0) / px + self.size as f64 / 2.0,
            (self.center.1 - y) / px + self.size as f64 / 2.0,
        )
    }

    /// Pixel index ranges overlapping a world-space xy bounding box.
    fn pixel_range(&self, lo: (f64, f64), hi: (f64, f64)) -> Option<(usize, usize, usize, usize)> {
        let (c0, r1) = self.raster(lo.0, lo.1);
        let (c1, r0) = self.raster(hi.0, hi.1);
        let n = self.size as f64;
        if c1 < 0.0 || r1 < 0.0 || c0 >= n || r0 >= n {
            return None;
        }
        let clampi = |v: f64| v.clamp(0.0, n - 1.0) as usize;
        Some((
            clampi(c0.floor()),
            clampi(c1.floor()),
            clampi(r0.floor()),
            clampi(r1.floor()),
        ))
    }

    fn paint(
        &self,
        img: &mut [f64],
        lo: (f64, f64),
        hi: (f64, f64),
        color: [f64; 3],
        inside: impl Fn(f64, f64) -> bool,
    ) {
        let Some((c0, c1, r0, r1)) = self.pixel_range(lo, hi) else {
            return;
        };
        let step = 1.0 / SUPERSAMPLE as f64;
        let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let (x, y) = self.world(
                            col as f64 + (sx as f64 + 0.5) * step,
                            row as f64 + (sy as f64 + 0.5) * step,
                        );
                        if inside(x, y) {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let cov = hits as f64 / total;
                let base = (row * self.size + col) * 3;
                for ch in 0..3 {
                    let v = &mut img[base + ch];
                    *v = *v * (1.0 - cov) + color[ch] * cov;
                }
            }
        }
    }

    fn paint_box(&self, img: &mut [f64], b: &AxisBox, color: [f64; 3]) {
        self.paint(
            img,
            (b.min.x, b.min.y),
            (b.max.x, b.max.y),
            color,
            |x, y| x >= b.min.x && x <= b.max.x && y >= b.min.y && y <= b.max.y,
        );
    }

    fn paint_disc(&self, img: &mut [f64], c: Vec3, r: f64, color: [f64; 3]) {
        self.paint(
            img,
            (c.x - r, c.y - r),
            (c.x + r, c.y + r),
            color,
            |x, y| (x - c.x).powi(2) + (y - c.y).powi(2) <= r * r,
        );
    }
}

fn object_color(tags: &std::collections::BTreeSet<Tag>) -> [f64; 3] {
    if tags.contains(&Tag::HazardousTool) {
        HAZARD
    } else if tags.contains(&Tag::Forbidden) {
        FORBIDDEN
    } else if tags.contains(&Tag::TaskTarget) {
        TARGET
    } else if tags.contains(&Tag::Graspable) {
        GRASPABLE
    } else {
        PLAIN
    }
}

/// Orthographic top-down raster of the scene.
///
/// Paint order: goal region, human zone, objects (lowest first), end-effector
/// marker. Edges are anti-aliased by supersampling so blob centroids move
/// smoothly with the underlying geometry.
pub fn render(s: &SceneState, spec: &ScenarioSpec, view: View, cfg: &SimConfig) -> Vec<f64> {
    let cam = Camera::for_view(view, s, cfg);
    let n = cfg.image_size;
    let mut img: Vec<f64> = BACKGROUND.iter().copied().cycle().take(n * n * 3).collect();

    cam.paint_box(&mut img, &spec.goal_region, GOAL);
    cam.paint_box(&mut img, &s.human_zone, HUMAN);

    let mut order: Vec<_> = s.objects.iter().collect();
    order.sort_by(|a, b| a.pos.z.total_cmp(&b.pos.z).then_with(|| a.id.cmp(&b.id)));
    for o in order {
        cam.paint_disc(&mut img, o.pos, o.radius, object_color(&o.tags));
    }

    let ee_color = if s.gripper_closed { EE_CLOSED } else { EE_OPEN };
    cam.paint_disc(&mut img, s.ee_pos, EE_MARKER_RADIUS, ee_color);
    img
}
