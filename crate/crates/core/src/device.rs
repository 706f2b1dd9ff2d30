//! Fixed-tick simulation of the three-unit device: rate-limited servos, a
//! compliant palm under each contact point and one noisy force sensor per unit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::config::SimConfig;
use crate::kinematics::{
    forward_kinematics, inverse_kinematics, ContactPoint, JointAngles, KinematicsError,
    LinkageGeometry, SERVO_RATE_LIMIT,
};

pub const UNITS: usize = 3;

/// Raw readings averaged by [`Device::calibrate`].
pub const CALIBRATION_SAMPLES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("unit {unit}: {source}")]
    Kinematics {
        unit: usize,
        #[source]
        source: KinematicsError,
    },
    #[error("tick period must be positive and finite, got {0}")]
    InvalidTick(f64),
    #[error("unit {unit} touches the palm; calibration needs a non-touch pose")]
    NotInNonTouchPose { unit: usize },
    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),
}

impl DeviceError {
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            DeviceError::Kinematics {
                source: KinematicsError::Unreachable { .. },
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServoModel {
    pub angle: f64,
    /// rad/s
    pub rate_limit: f64,
}

impl ServoModel {
    /// Moves toward `target` by at most `rate_limit * dt`.
    fn advanced(&self, target: f64, dt: f64) -> f64 {
        let max_step = self.rate_limit * dt;
        let delta = target - self.angle;
        if delta.abs() <= max_step {
            target
        } else {
            self.angle + max_step.copysign(delta)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalmModel {
    /// Palm surface `y` in each unit's plane, mm.
    pub surface_y: [f64; UNITS],
    /// Skin stiffness, N/m.
    pub compliance: f64,
}

impl PalmModel {
    pub fn penetration_mm(&self, unit: usize, y: f64) -> f64 {
        (y - self.surface_y[unit]).max(0.0)
    }

    pub fn contact_force(&self, unit: usize, y: f64) -> f64 {
        (self.compliance * self.penetration_mm(unit, y) / 1000.0).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsrSensor {
    pub noise_sigma: f64,
    /// Constant reading added by the sensor itself; removed by calibration.
    pub bias: f64,
    pub calibration_offset: f64,
    pub saturation: f64,
}

impl FsrSensor {
    fn raw_reading(&self, force: f64, rng: &mut ChaCha8Rng) -> f64 {
        let noise = if self.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            self.noise_sigma * z
        } else {
            0.0
        };
        force + self.bias + noise
    }

    fn sense(&self, force: f64, rng: &mut ChaCha8Rng) -> f64 {
        (self.raw_reading(force, rng) - self.calibration_offset).clamp(0.0, self.saturation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitState {
    pub servos: [ServoModel; 2],
    pub end_effector: ContactPoint,
    /// Last commanded target.
    pub command: ContactPoint,
    pub raw_force: f64,
    pub sensed_force: f64,
}

impl UnitState {
    pub fn angles(&self) -> JointAngles {
        JointAngles::new(self.servos[0].angle, self.servos[1].angle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceState {
    pub units: [UnitState; UNITS],
    pub clock: f64,
}

impl DeviceState {
    pub fn positions(&self) -> [ContactPoint; UNITS] {
        self.units.map(|u| u.end_effector)
    }

    pub fn sensed_forces(&self) -> [f64; UNITS] {
        self.units.map(|u| u.sensed_force)
    }

    pub fn raw_forces(&self) -> [f64; UNITS] {
        self.units.map(|u| u.raw_force)
    }
}

/// Everything needed to build a [`Device`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub geometry: LinkageGeometry,
    pub palm: PalmModel,
    pub sensor: FsrSensor,
    pub rate_limit: f64,
    pub initial: [ContactPoint; UNITS],
}

impl DeviceConfig {
    /// Units start at the home height on their midlines.
    pub fn from_sim(geometry: LinkageGeometry, sim: &SimConfig) -> Self {
        Self {
            geometry,
            palm: PalmModel {
                surface_y: sim.surface_y_mm.values(),
                compliance: sim.palm_compliance_n_per_m,
            },
            sensor: FsrSensor {
                noise_sigma: sim.noise_sigma_n,
                bias: sim.sensor_bias_n,
                calibration_offset: 0.0,
                saturation: sim.saturation_n,
            },
            rate_limit: SERVO_RATE_LIMIT,
            initial: [ContactPoint::new(geometry.midline(), sim.home_y_mm); UNITS],
        }
    }
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self::from_sim(LinkageGeometry::default(), &SimConfig::default())
    }
}

/// Simulated device. Owns its state; a single loop drives it.
#[derive(Debug, Clone)]
pub struct Device {
    geometry: LinkageGeometry,
    palm: PalmModel,
    sensors: [FsrSensor; UNITS],
    state: DeviceState,
    rng: ChaCha8Rng,
}

impl Device {
    pub fn new(config: &DeviceConfig, seed: u64) -> Result<Self, DeviceError> {
        if !(config.palm.compliance > 0.0) {
            return Err(DeviceError::InvalidConfig(
                "palm compliance must be positive".into(),
            ));
        }
        if !(config.sensor.noise_sigma >= 0.0 && config.sensor.saturation > 0.0) {
            return Err(DeviceError::InvalidConfig(
                "sensor noise must be non-negative and saturation positive".into(),
            ));
        }
        if !(config.rate_limit > 0.0) {
            return Err(DeviceError::InvalidConfig(
                "servo rate limit must be positive".into(),
            ));
        }
        let mut units = Vec::with_capacity(UNITS);
        for (unit, point) in config.initial.iter().enumerate() {
            let angles = inverse_kinematics(&config.geometry, point)
                .map_err(|source| DeviceError::Kinematics { unit, source })?;
            let end_effector = forward_kinematics(&config.geometry, &angles)
                .map_err(|source| DeviceError::Kinematics { unit, source })?;
            let raw_force = config.palm.contact_force(unit, end_effector.y);
            units.push(UnitState {
                servos: [
                    ServoModel {
                        angle: angles.left,
                        rate_limit: config.rate_limit,
                    },
                    ServoModel {
                        angle: angles.right,
                        rate_limit: config.rate_limit,
                    },
                ],
                end_effector,
                command: end_effector,
                raw_force,
                sensed_force: 0.0,
            });
        }
        let mut device = Self {
            geometry: config.geometry,
            palm: config.palm,
            sensors: [config.sensor; UNITS],
            state: DeviceState {
                units: [units[0], units[1], units[2]],
                clock: 0.0,
            },
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let sensed = device.read_forces();
        for (u, f) in device.state.units.iter_mut().zip(sensed) {
            u.sensed_force = f;
        }
        Ok(device)
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn geometry(&self) -> &LinkageGeometry {
        &self.geometry
    }

    pub fn palm(&self) -> &PalmModel {
        &self.palm
    }

    pub fn sensors(&self) -> &[FsrSensor; UNITS] {
        &self.sensors
    }

    /// Advances every servo toward the inverse solution of its command, limited
    /// by the rated speed, then recomputes contact and sensed forces. On error
    /// the state is left untouched.
    pub fn tick(
        &mut self,
        commands: &[ContactPoint; UNITS],
        dt: f64,
    ) -> Result<&DeviceState, DeviceError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DeviceError::InvalidTick(dt));
        }
        let mut next = self.state;
        for (unit, (state, command)) in next.units.iter_mut().zip(commands).enumerate() {
            if *command == state.end_effector {
                state.command = *command;
                continue;
            }
            let goal = inverse_kinematics(&self.geometry, command)
                .map_err(|source| DeviceError::Kinematics { unit, source })?;
            let left = state.servos[0].advanced(goal.left, dt);
            let right = state.servos[1].advanced(goal.right, dt);
            let angles = JointAngles::new(left, right);
            let end_effector = forward_kinematics(&self.geometry, &angles)
                .map_err(|source| DeviceError::Kinematics { unit, source })?;
            state.servos[0].angle = left;
            state.servos[1].angle = right;
            state.end_effector = end_effector;
            state.command = *command;
            state.raw_force = self.palm.contact_force(unit, end_effector.y);
        }
        for (unit, state) in next.units.iter_mut().enumerate() {
            state.sensed_force = self.sensors[unit].sense(state.raw_force, &mut self.rng);
        }
        next.clock += dt;
        self.state = next;
        Ok(&self.state)
    }

    /// Fresh sensor sample for each unit at the current pose.
    pub fn read_forces(&mut self) -> [f64; UNITS] {
        let mut out = [0.0; UNITS];
        for (unit, f) in out.iter_mut().enumerate() {
            *f = self.sensors[unit].sense(self.state.units[unit].raw_force, &mut self.rng);
        }
        out
    }

    /// Zeroes each sensor against the mean of [`CALIBRATION_SAMPLES`] readings.
    /// Requires every unit to be off the palm.
    pub fn calibrate(&mut self) -> Result<(), DeviceError> {
        for (unit, state) in self.state.units.iter().enumerate() {
            if self.palm.penetration_mm(unit, state.end_effector.y) > 0.0 {
                return Err(DeviceError::NotInNonTouchPose { unit });
            }
        }
        for unit in 0..UNITS {
            let sensor = self.sensors[unit];
            let raw = self.state.units[unit].raw_force;
            let sum: f64 = (0..CALIBRATION_SAMPLES)
                .map(|_| sensor.raw_reading(raw, &mut self.rng))
                .sum();
            self.sensors[unit].calibration_offset = sum / CALIBRATION_SAMPLES as f64;
        }
        let sensed = self.read_forces();
        for (u, f) in self.state.units.iter_mut().zip(sensed) {
            u.sensed_force = f;
        }
        Ok(())
    }

    /// Whether a point is reachable by unit's linkage.
    pub fn reachable(&self, point: &ContactPoint) -> bool {
        crate::kinematics::workspace_contains(&self.geometry, point)
    }
}
