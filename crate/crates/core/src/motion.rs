//! Rotation math, pose and motion containers, skeleton forward kinematics and
//! the SLERP interpolation baseline.
//!
//! Poses are stored as per-joint axis-angle vectors. Quaternions are only
//! used transiently, for interpolation and kinematics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SarError};

/// Below this angle the axis-angle map uses its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-6;

/// Dot products at or above `1 - NLERP_THRESHOLD` fall back to normalized lerp.
const NLERP_THRESHOLD: f64 = 1e-8;

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = norm3(axis);
        let (s, c) = (angle / 2.0).sin_cos();
        Quat::new(c, axis[0] / n * s, axis[1] / n * s, axis[2] / n * s)
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Quat {
        self.scale(1.0 / self.norm())
    }

    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(self, o: Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Quat) -> Quat {
        self.add(o.scale(-1.0))
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * o`.
    pub fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let p = Quat::new(0.0, v[0], v[1], v[2]);
        let r = self.mul(p).mul(self.conjugate());
        [r.x, r.y, r.z]
    }

    /// Rotation angle in `[0, pi]` between two unit quaternions, treating
    /// `q` and `-q` as the same rotation.
    pub fn angle_to(self, o: Quat) -> f64 {
        let (d, s) = (self.sub(o).norm(), self.add(o).norm());
        4.0 * d.atan2(s).min(s.atan2(d))
    }

    pub fn to_axis_angle(self) -> Rotation {
        let q = if self.w < 0.0 { self.scale(-1.0) } else { self };
        let q = q.normalized();
        let vn = norm3([q.x, q.y, q.z]);
        let angle = 2.0 * vn.atan2(q.w);
        let k = if vn < SMALL_ANGLE {
            // series of 2 atan(vn / w) / vn
            2.0 / q.w * (1.0 - vn * vn / (3.0 * q.w * q.w))
        } else {
            angle / vn
        };
        Rotation([q.x * k, q.y * k, q.z * k])
    }

    fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A joint rotation as an axis-angle vector (unit axis scaled by the angle in radians).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rotation(pub [f64; 3]);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation([0.0; 3]);

    pub fn angle(&self) -> f64 {
        norm3(self.0)
    }

    pub fn to_quat(&self) -> Result<Quat> {
        axis_angle_to_quaternion(*self)
    }
}

/// Converts an axis-angle vector to a unit quaternion. The zero vector maps to
/// the identity.
pub fn axis_angle_to_quaternion(r: Rotation) -> Result<Quat> {
    if !r.0.iter().all(|c| c.is_finite()) {
        return Err(SarError::invalid(format!("non-finite axis-angle {:?}", r.0)));
    }
    let angle = r.angle();
    let half = angle / 2.0;
    // sin(angle/2) / angle
    let k = if angle < SMALL_ANGLE {
        0.5 - angle * angle / 48.0
    } else {
        half.sin() / angle
    };
    let q = Quat::new(half.cos(), r.0[0] * k, r.0[1] * k, r.0[2] * k);
    Ok(q.normalized())
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q0: Quat, q1: Quat, u: f64) -> Quat {
    let mut q1 = q1;
    let mut dot = q0.dot(q1);
    if dot < 0.0 {
        q1 = q1.scale(-1.0);
        dot = -dot;
    }
    if dot >= 1.0 - NLERP_THRESHOLD {
        return q0.scale(1.0 - u).add(q1.scale(u)).normalized();
    }
    // angle between q0 and q1 on S^3
    let theta = 2.0 * q1.sub(q0).norm().atan2(q1.add(q0).norm());
    let sin_theta = theta.sin();
    let a = ((1.0 - u) * theta).sin() / sin_theta;
    let b = (u * theta).sin() / sin_theta;
    q0.scale(a).add(q1.scale(b)).normalized()
}

/// One frame: `J` joint rotations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose(pub Vec<Rotation>);

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Pose(vec![Rotation::IDENTITY; joints])
    }

    pub fn joints(&self) -> usize {
        self.0.len()
    }

    /// Flattened `[x0, y0, z0, x1, ...]` view.
    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|r| r.0).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        assert_eq!(values.len() % 3, 0, "flat pose length must be a multiple of 3");
        Pose(
            values
                .chunks_exact(3)
                .map(|c| Rotation([c[0], c[1], c[2]]))
                .collect(),
        )
    }
}

/// Poses sampled at a fixed framerate.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub frames: Vec<Pose>,
    pub fps: f64,
}

impl Motion {
    pub fn new(frames: Vec<Pose>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(SarError::invalid(format!("fps must be positive, got {fps}")));
        }
        if let Some(first) = frames.first() {
            let j = first.joints();
            if let Some((i, p)) = frames.iter().enumerate().find(|(_, p)| p.joints() != j) {
                return Err(SarError::invalid(format!(
                    "frame {i} has {} joints, expected {j}",
                    p.joints()
                )));
            }
        }
        Ok(Motion { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Joint count, or 0 for an empty motion.
    pub fn joints(&self) -> usize {
        self.frames.first().map_or(0, Pose::joints)
    }
}

/// Joint hierarchy with bone offsets in meters. Joints are topologically
/// ordered: every non-root joint's parent has a smaller index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parents: Vec<i64>,
    pub offsets: Vec<[f64; 3]>,
}

const BODY22_JSON: &str = include_str!("../assets/skeleton_body22.json");

impl Skeleton {
    pub fn new(joint_names: Vec<String>, parents: Vec<i64>, offsets: Vec<[f64; 3]>) -> Result<Self> {
        let s = Skeleton {
            joint_names,
            parents,
            offsets,
        };
        s.validate()?;
        Ok(s)
    }

    /// The shipped 22-joint body hierarchy (pelvis root).
    pub fn body22() -> Self {
        serde_json::from_str::<Skeleton>(BODY22_JSON)
            .ok()
            .filter(|s| s.validate().is_ok())
            .expect("bundled skeleton is valid")
    }

    /// A straight chain along +x with equal bone lengths.
    pub fn chain(joints: usize, bone_length: f64) -> Result<Self> {
        if joints == 0 {
            return Err(SarError::invalid("skeleton needs at least one joint"));
        }
        let parents = (0..joints as i64).map(|i| i - 1).collect();
        let offsets = (0..joints)
            .map(|i| if i == 0 { [0.0; 3] } else { [bone_length, 0.0, 0.0] })
            .collect();
        let names = (0..joints).map(|i| format!("joint{i}")).collect();
        Skeleton::new(names, parents, offsets)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SarError::io(path, e))?;
        let s: Skeleton = serde_json::from_str(&text).map_err(|e| SarError::Parse {
            context: path.display().to_string(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        if j == 0 {
            return Err(SarError::invalid("skeleton has no joints"));
        }
        if self.joint_names.len() != j || self.offsets.len() != j {
            return Err(SarError::invalid(format!(
                "skeleton arity mismatch: {} names, {} parents, {} offsets",
                self.joint_names.len(),
                j,
                self.offsets.len()
            )));
        }
        if self.parents[0] != -1 {
            return Err(SarError::invalid("joint 0 must be the root (parent -1)"));
        }
        for (i, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= i {
                return Err(SarError::invalid(format!(
                    "joint {i} has parent {p}; parents must precede their children"
                )));
            }
        }
        Ok(())
    }
}

/// World-space joint positions with the root pinned at the origin.
pub fn forward_kinematics(pose: &Pose, skeleton: &Skeleton) -> Result<Vec<[f64; 3]>> {
    let j = skeleton.joints();
    if pose.joints() != j {
        return Err(SarError::invalid(format!(
            "pose has {} joints, skeleton has {j}",
            pose.joints()
        )));
    }
    let mut world: Vec<Quat> = Vec::with_capacity(j);
    let mut pos: Vec<[f64; 3]> = Vec::with_capacity(j);
    for i in 0..j {
        let local = pose.0[i].to_quat()?;
        if i == 0 {
            world.push(local);
            pos.push([0.0; 3]);
            continue;
        }
        let parent = skeleton.parents[i] as usize;
        let off = world[parent].rotate(skeleton.offsets[i]);
        let pp = pos[parent];
        pos.push([pp[0] + off[0], pp[1] + off[1], pp[2] + off[2]]);
        world.push(world[parent].mul(local).normalized());
    }
    debug_assert!(world.iter().all(|q| q.is_finite()));
    Ok(pos)
}

/// SLERP between two poses: `frames` in-between frames, frame `t` (1-based)
/// at `u = t / (frames + 1)`.
pub fn slerp_motion(start: &Pose, end: &Pose, frames: usize, fps: f64) -> Result<Motion> {
    if start.joints() != end.joints() {
        return Err(SarError::invalid(format!(
            "start has {} joints, end has {}",
            start.joints(),
            end.joints()
        )));
    }
    let q0: Vec<Quat> = start.0.iter().map(Rotation::to_quat).collect::<Result<_>>()?;
    let q1: Vec<Quat> = end.0.iter().map(Rotation::to_quat).collect::<Result<_>>()?;
    let out = (1..=frames)
        .map(|t| {
            let u = t as f64 / (frames + 1) as f64;
            Pose(
                q0.iter()
                    .zip(&q1)
                    .map(|(&a, &b)| slerp(a, b, u).to_axis_angle())
                    .collect(),
            )
        })
        .collect();
    Motion::new(out, fps)
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
