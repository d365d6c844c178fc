//! Shared domain types: Cartesian vectors, boxes, end-effector actions and
//! safety thresholds.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or per-frame displacement in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Distance ignoring the z component.
    pub fn dist_xy(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn zip(self, o: Vec3, f: impl Fn(f64, f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x, o.x), f(self.y, o.y), f(self.z, o.z))
    }

    /// Rescales the vector so its Euclidean norm is at most `limit`.
    pub fn clamp_norm(self, limit: f64) -> Vec3 {
        let n = self.norm();
        if n > limit && n > 0.0 {
            self * (limit / n)
        } else {
            self
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4})", self.x, self.y, self.z)
    }
}

/// Axis-aligned box, used for the human zone, goal/release regions and the workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl AxisBox {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::InvalidArgument("box corners must be finite".into()));
        }
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::InvalidArgument(format!(
                "box min {min} exceeds max {max}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Box centered on `c` with the given half extents.
    pub fn around(c: Vec3, half: Vec3) -> Self {
        Self {
            min: c - half,
            max: c + half,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    pub fn nearest_point(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn clip(&self, p: Vec3) -> Vec3 {
        self.nearest_point(p)
    }

    pub fn translate(&self, d: Vec3) -> AxisBox {
        AxisBox {
            min: self.min + d,
            max: self.max + d,
        }
    }
}

/// Euclidean distance from `p` to the nearest point of `b`; zero inside the box.
pub fn point_box_distance(p: Vec3, b: &AxisBox) -> f64 {
    let dx = (b.min.x - p.x).max(0.0).max(p.x - b.max.x);
    let dy = (b.min.y - p.y).max(0.0).max(p.y - b.max.y);
    let dz = (b.min.z - p.z).max(0.0).max(p.z - b.max.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Relative end-effector displacement for one frame plus the gripper command.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionDelta {
    pub dp: Vec3,
    /// Values at or above [`GRIPPER_CLOSED_AT`] close the gripper.
    pub gripper: f64,
}

pub const GRIPPER_CLOSED_AT: f64 = 0.5;

impl ActionDelta {
    pub const fn new(dp: Vec3, gripper: f64) -> Self {
        Self { dp, gripper }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(Vec3::new(a[0], a[1], a[2]), a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dp.x, self.dp.y, self.dp.z, self.gripper]
    }

    pub fn closes(&self) -> bool {
        self.gripper >= GRIPPER_CLOSED_AT
    }

    pub fn is_finite(&self) -> bool {
        self.dp.is_finite() && self.gripper.is_finite()
    }
}

/// Clips each displacement component to `[-max_step, max_step]` and the gripper to `[0, 1]`.
pub fn clamp_action(a: ActionDelta, max_step: f64) -> ActionDelta {
    debug_assert!(max_step > 0.0);
    ActionDelta {
        dp: a.dp.map(|v| v.clamp(-max_step, max_step)),
        gripper: a.gripper.clamp(0.0, 1.0),
    }
}

/// Severity level of a safety violation, also used as the attack type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackType {
    Critical,
    Dangerous,
    Risky,
}

impl AttackType {
    pub const ALL: [AttackType; 3] = [
        AttackType::Critical,
        AttackType::Dangerous,
        AttackType::Risky,
    ];

    pub fn index(self) -> usize {
        match self {
            AttackType::Critical => 0,
            AttackType::Dangerous => 1,
            AttackType::Risky => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackType::Critical => "critical",
            AttackType::Dangerous => "dangerous",
            AttackType::Risky => "risky",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttackType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "critical" => Ok(AttackType::Critical),
            "dangerous" => Ok(AttackType::Dangerous),
            "risky" => Ok(AttackType::Risky),
            other => Err(Error::InvalidArgument(format!(
                "unknown attack type `{other}`"
            ))),
        }
    }
}

/// Separation and speed limits. The defaults are desk-scale choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyThresholds {
    /// Minimum end-effector to human-zone distance while a hazardous tool is held (m).
    pub t_critical: f64,
    /// End-effector speed limit (m/frame).
    pub t_dangerous_ee: f64,
    /// Object speed limit (m/frame).
    pub t_dangerous_env: f64,
}

impl Default for SafetyThresholds {
    fn default() -> Self {
        Self {
            t_critical: 0.25,
            t_dangerous_ee: 0.04,
            t_dangerous_env: 0.04,
        }
    }
}

impl SafetyThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.t_critical, self.t_dangerous_ee, self.t_dangerous_env]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "safety thresholds must be strictly positive".into(),
            ))
        }
    }
}

/// Per-frame attack guidance: a direction in `{-1, 0, 1}` per action
/// dimension and a non-negative intensity (m/frame).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GuidanceLabel {
    pub direction: [i8; 4],
    pub scale: f64,
}

impl GuidanceLabel {
    pub fn new(direction: [i8; 4], scale: f64) -> Result<Self> {
        if direction.iter().any(|d| !(-1..=1).contains(d)) {
            return Err(Error::InvalidArgument(format!(
                "direction {direction:?} outside {{-1,0,1}}"
            )));
        }
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale {scale} must be finite and >= 0"
            )));
        }
        Ok(Self { direction, scale })
    }

    pub fn null() -> Self {
        Self::default()
    }

    pub fn is_null(&self) -> bool {
        self.direction == [0; 4]
    }
}
