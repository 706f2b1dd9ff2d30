//! Planar five-bar linkage: two servos on a common base line drive proximal
//! links, two distal links meet at the end-effector.
//!
//! Frame: left servo axis at the origin, right servo axis at
//! `(base_separation, 0)`, `y` normal to the base and positive toward the palm.
//! Servo angles are measured counter-clockwise from the positive `x` axis.

use thiserror::Error;

/// Rated servo speed: 60 degrees in this many seconds.
pub const SERVO_SECONDS_PER_60_DEG: f64 = 0.07;

/// Angular rate corresponding to [`SERVO_SECONDS_PER_60_DEG`], rad/s.
pub const SERVO_RATE_LIMIT: f64 = (std::f64::consts::PI / 3.0) / SERVO_SECONDS_PER_60_DEG;

/// IK candidates must reproduce the target this closely (mm).
const IK_RESIDUAL_MM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid linkage geometry: {0}")]
    InvalidGeometry(String),
    #[error("joint angles ({left:.6}, {right:.6}) rad outside servo limits")]
    AngleOutOfRange { left: f64, right: f64 },
    #[error("distal links cannot close for joint angles ({left:.6}, {right:.6}) rad")]
    NoIntersection { left: f64, right: f64 },
    #[error("target ({x:.4}, {y:.4}) mm is outside the workspace")]
    Unreachable { x: f64, y: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub x: f64,
    pub y: f64,
}

impl ContactPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &ContactPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointAngles {
    pub left: f64,
    pub right: f64,
}

impl JointAngles {
    pub const fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn from_degrees(left: f64, right: f64) -> Self {
        Self::new(left.to_radians(), right.to_radians())
    }

    pub fn max_abs_delta(&self, other: &JointAngles) -> f64 {
        (self.left - other.left)
            .abs()
            .max((self.right - other.right).abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageGeometry {
    base_separation: f64,
    proximal_length: f64,
    distal_length: f64,
    servo_min: f64,
    servo_max: f64,
}

impl Default for LinkageGeometry {
    /// 40 mm base, 30 mm proximal, 35 mm distal links, servos over 30°..150°.
    fn default() -> Self {
        Self {
            base_separation: 40.0,
            proximal_length: 30.0,
            distal_length: 35.0,
            servo_min: 30f64.to_radians(),
            servo_max: 150f64.to_radians(),
        }
    }
}

impl LinkageGeometry {
    /// Lengths in millimetres, limits in radians.
    pub fn new(
        base_separation: f64,
        proximal_length: f64,
        distal_length: f64,
        servo_min: f64,
        servo_max: f64,
    ) -> Result<Self, KinematicsError> {
        for (name, v) in [
            ("base_separation", base_separation),
            ("proximal_length", proximal_length),
            ("distal_length", distal_length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(servo_min.is_finite() && servo_max.is_finite() && servo_min < servo_max) {
            return Err(KinematicsError::InvalidGeometry(format!(
                "servo limits must satisfy min < max, got [{servo_min}, {servo_max}]"
            )));
        }
        let geom = Self {
            base_separation,
            proximal_length,
            distal_length,
            servo_min,
            servo_max,
        };
        if !geom.has_nonempty_workspace() {
            return Err(KinematicsError::InvalidGeometry(
                "no servo angle pair closes the mechanism".into(),
            ));
        }
        Ok(geom)
    }

    pub fn base_separation(&self) -> f64 {
        self.base_separation
    }

    pub fn proximal_length(&self) -> f64 {
        self.proximal_length
    }

    pub fn distal_length(&self) -> f64 {
        self.distal_length
    }

    pub fn servo_min(&self) -> f64 {
        self.servo_min
    }

    pub fn servo_max(&self) -> f64 {
        self.servo_max
    }

    /// `x` of the symmetry line between the two servo axes.
    pub fn midline(&self) -> f64 {
        self.base_separation / 2.0
    }

    pub fn in_limits(&self, angles: &JointAngles) -> bool {
        let ok = |a: f64| a >= self.servo_min && a <= self.servo_max;
        ok(angles.left) && ok(angles.right)
    }

    fn has_nonempty_workspace(&self) -> bool {
        const N: usize = 64;
        let span = self.servo_max - self.servo_min;
        (0..=N).any(|i| {
            (0..=N).any(|j| {
                let a = JointAngles::new(
                    self.servo_min + span * i as f64 / N as f64,
                    self.servo_min + span * j as f64 / N as f64,
                );
                forward_kinematics(self, &a).is_ok()
            })
        })
    }

    /// Walks from a reachable `from` toward `to` and returns `to` if it is
    /// reachable, otherwise the farthest reachable point found by bisection on
    /// the segment.
    pub fn clamp_toward(&self, from: ContactPoint, to: ContactPoint) -> ContactPoint {
        if workspace_contains(self, &to) {
            return to;
        }
        let lerp =
            |s: f64| ContactPoint::new(from.x + (to.x - from.x) * s, from.y + (to.y - from.y) * s);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if workspace_contains(self, &lerp(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lerp(lo)
    }
}

/// `sqrt(r^2 - (d/2)^2)` style terms written as a product to stay accurate near
/// the fully stretched configuration.
fn half_chord(radius: f64, half_distance: f64) -> Option<f64> {
    let prod = (radius - half_distance) * (radius + half_distance);
    if prod < 0.0 {
        None
    } else {
        Some(prod.sqrt())
    }
}

fn proximal_tips(geom: &LinkageGeometry, angles: &JointAngles) -> (ContactPoint, ContactPoint) {
    let p = geom.proximal_length;
    (
        ContactPoint::new(p * angles.left.cos(), p * angles.left.sin()),
        ContactPoint::new(
            geom.base_separation + p * angles.right.cos(),
            p * angles.right.sin(),
        ),
    )
}

/// End-effector position for a servo pair. Of the two closures the one farther
/// from the base (larger `y`) is returned.
pub fn forward_kinematics(
    geom: &LinkageGeometry,
    angles: &JointAngles,
) -> Result<ContactPoint, KinematicsError> {
    if !geom.in_limits(angles) {
        return Err(KinematicsError::AngleOutOfRange {
            left: angles.left,
            right: angles.right,
        });
    }
    let no_closure = || KinematicsError::NoIntersection {
        left: angles.left,
        right: angles.right,
    };
    let (l, r) = proximal_tips(geom, angles);
    let (dx, dy) = (r.x - l.x, r.y - l.y);
    let d = dx.hypot(dy);
    if d == 0.0 {
        return Err(no_closure());
    }
    let h = half_chord(geom.distal_length, d / 2.0).ok_or_else(no_closure)?;
    let mid = ContactPoint::new((l.x + r.x) / 2.0, (l.y + r.y) / 2.0);
    // Unit normal to the tip-to-tip chord, oriented toward +y.
    let (mut nx, mut ny) = (-dy / d, dx / d);
    if ny < 0.0 || (ny == 0.0 && nx < 0.0) {
        nx = -nx;
        ny = -ny;
    }
    Ok(ContactPoint::new(mid.x + h * nx, mid.y + h * ny))
}

/// The two proximal angles that put a link tip at distal length from `target`,
/// as (counter-clockwise, clockwise) offsets from the axis-to-target bearing.
fn servo_solutions(
    axis_x: f64,
    proximal: f64,
    distal: f64,
    target: &ContactPoint,
) -> Option<(f64, f64)> {
    let (vx, vy) = (target.x - axis_x, target.y);
    let r = vx.hypot(vy);
    if r == 0.0 {
        return None;
    }
    // Heron-style product for 4 p^2 r^2 - (p^2 + r^2 - L^2)^2.
    let area4 = (r + proximal + distal)
        * (-r + proximal + distal)
        * (r - proximal + distal)
        * (r + proximal - distal);
    if area4 < 0.0 {
        return None;
    }
    let bearing = vy.atan2(vx);
    let alpha = area4
        .sqrt()
        .atan2(proximal * proximal + r * r - distal * distal);
    Some((wrap(bearing + alpha), wrap(bearing - alpha)))
}

fn wrap(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut a = a % TAU;
    if a > PI {
        a -= TAU;
    } else if a <= -PI {
        a += TAU;
    }
    a
}

/// Servo angles placing the end-effector at `target`.
///
/// Candidates are tried in the order (left outward, right outward), then the
/// mixed modes, then both inward; the first that is within limits and whose
/// forward solution is `target` wins.
pub fn inverse_kinematics(
    geom: &LinkageGeometry,
    target: &ContactPoint,
) -> Result<JointAngles, KinematicsError> {
    let unreachable = || KinematicsError::Unreachable {
        x: target.x,
        y: target.y,
    };
    if !target.is_finite() {
        return Err(unreachable());
    }
    let (p, l) = (geom.proximal_length, geom.distal_length);
    let (left_out, left_in) = servo_solutions(0.0, p, l, target).ok_or_else(unreachable)?;
    let (right_in, right_out) =
        servo_solutions(geom.base_separation, p, l, target).ok_or_else(unreachable)?;

    [
        (left_out, right_out),
        (left_out, right_in),
        (left_in, right_out),
        (left_in, right_in),
    ]
    .into_iter()
    .map(|(left, right)| JointAngles::new(left, right))
    .find(|a| {
        geom.in_limits(a)
            && forward_kinematics(geom, a)
                .map(|c| c.distance(target) < IK_RESIDUAL_MM)
                .unwrap_or(false)
    })
    .ok_or_else(unreachable)
}

pub fn workspace_contains(geom: &LinkageGeometry, target: &ContactPoint) -> bool {
    inverse_kinematics(geom, target).is_ok()
}

/// Time for both servos, moving simultaneously at rated speed, to go from
/// `from` to `to`.
pub fn travel_time(from: &JointAngles, to: &JointAngles) -> f64 {
    from.max_abs_delta(to).to_degrees() * SERVO_SECONDS_PER_60_DEG / 60.0
}
