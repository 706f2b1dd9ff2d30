//! Force-limit control and per-contact impedance control over the simulated
//! device's `y` axis.
//!
//! Sign convention: sensed forces are magnitudes of the palm pushing back on
//! the end-effector, i.e. acting along −y. The impedance model is driven with
//! that reaction, `F_ext = −sensed`, so a harder press moves the commanded point
//! away from the palm and the law behaves as a virtual spring.

use crate::config::SimConfig;
use crate::device::{Device, DeviceError, UNITS};
use crate::impedance::{self, DiscreteModel, ImpedanceError, ImpedanceParams, ImpedanceState};
use crate::kinematics::{inverse_kinematics, travel_time, ContactPoint, LinkageGeometry};
use crate::trace::{tick_time, TraceRow};

/// Target arrival tolerance for retraction and device moves, mm.
pub const ARRIVAL_TOLERANCE_MM: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceControlConfig {
    /// N
    pub limit_force: f64,
    /// mm/s
    pub approach_speed: f64,
    /// mm, below the palm surface.
    pub home_y: f64,
}

/// The six stiffness renderings: three impedance laws, three force limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StiffnessPreset {
    P1,
    P2,
    P3,
    P4,
    P5,
    P6,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PresetLaw {
    Impedance(ImpedanceParams),
    ForceLimit(f64),
}

impl StiffnessPreset {
    pub const ALL: [StiffnessPreset; 6] = [
        StiffnessPreset::P1,
        StiffnessPreset::P2,
        StiffnessPreset::P3,
        StiffnessPreset::P4,
        StiffnessPreset::P5,
        StiffnessPreset::P6,
    ];

    pub fn law(self) -> PresetLaw {
        // (mass kg, damping N·s/m, stiffness N/m)
        let imp = |m, d, k| {
            PresetLaw::Impedance(ImpedanceParams::new(m, d, k).expect("preset constants are valid"))
        };
        match self {
            StiffnessPreset::P1 => imp(1.2, 1.0, 20.0),
            StiffnessPreset::P2 => imp(0.6, 1.0, 3.0),
            StiffnessPreset::P3 => imp(0.6, 1.0, 1.0),
            StiffnessPreset::P4 => PresetLaw::ForceLimit(4.0),
            StiffnessPreset::P5 => PresetLaw::ForceLimit(2.5),
            StiffnessPreset::P6 => PresetLaw::ForceLimit(1.0),
        }
    }

    pub fn impedance_params(self) -> Option<ImpedanceParams> {
        match self.law() {
            PresetLaw::Impedance(p) => Some(p),
            PresetLaw::ForceLimit(_) => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StiffnessPreset::P1 => "P1",
            StiffnessPreset::P2 => "P2",
            StiffnessPreset::P3 => "P3",
            StiffnessPreset::P4 => "P4",
            StiffnessPreset::P5 => "P5",
            StiffnessPreset::P6 => "P6",
        }
    }
}

impl std::str::FromStr for StiffnessPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StiffnessPreset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown preset `{s}` (expected P1..P6)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    pub target_y: [f64; UNITS],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceControlPhase {
    Approaching,
    Retracting,
    Home,
}

/// One period of the limit-force state machine.
///
/// While approaching, every target is one step of `approach_speed * dt` deeper
/// than the current position. The step on which any sensed force reaches the
/// limit already retracts, so no target ever goes deeper than the detection
/// pose.
pub fn force_control_step(
    config: &ForceControlConfig,
    phase: ForceControlPhase,
    sensed: &[f64; UNITS],
    current_y: &[f64; UNITS],
    dt: f64,
) -> (ControllerOutput, ForceControlPhase) {
    let step = config.approach_speed * dt;
    let retract = |y: f64| (y - step).max(config.home_y);
    let peak = sensed.iter().copied().fold(f64::MIN, f64::max);

    let phase = match phase {
        ForceControlPhase::Approaching if peak >= config.limit_force => {
            ForceControlPhase::Retracting
        }
        other => other,
    };
    match phase {
        ForceControlPhase::Approaching => (
            ControllerOutput {
                target_y: current_y.map(|y| y + step),
            },
            phase,
        ),
        ForceControlPhase::Retracting => {
            let home = current_y
                .iter()
                .all(|y| (y - config.home_y).abs() <= ARRIVAL_TOLERANCE_MM);
            if home {
                (
                    ControllerOutput {
                        target_y: [config.home_y; UNITS],
                    },
                    ForceControlPhase::Home,
                )
            } else {
                (
                    ControllerOutput {
                        target_y: current_y.map(retract),
                    },
                    phase,
                )
            }
        }
        ForceControlPhase::Home => (
            ControllerOutput {
                target_y: [config.home_y; UNITS],
            },
            phase,
        ),
    }
}

/// Advances each contact's impedance state with its own sensed force and
/// offsets the nominal heights by the resulting displacement.
pub fn impedance_control_step(
    models: &[DiscreteModel; UNITS],
    states: &[ImpedanceState; UNITS],
    sensed: &[f64; UNITS],
    nominal_y: &[f64; UNITS],
) -> (ControllerOutput, [ImpedanceState; UNITS]) {
    let mut next = *states;
    let mut target_y = *nominal_y;
    for i in 0..UNITS {
        next[i] = impedance::step(&models[i], &states[i], -sensed[i]);
        target_y[i] = nominal_y[i] + next[i].displacement * 1000.0;
    }
    (ControllerOutput { target_y }, next)
}

/// Where the closed loop places each contact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopSettings {
    pub contact_x: [f64; UNITS],
    pub home_y: f64,
    pub approach_speed: f64,
    /// Virtual surface height per unit for impedance control, mm.
    pub nominal_y: [f64; UNITS],
}

impl LoopSettings {
    /// Contacts on their midlines; the virtual surface sits
    /// `nominal_depth_mm` past each palm surface.
    pub fn from_sim(geometry: &LinkageGeometry, sim: &SimConfig) -> Self {
        Self {
            contact_x: [geometry.midline(); UNITS],
            home_y: sim.home_y_mm,
            approach_speed: sim.approach_speed_mm_s,
            nominal_y: sim.surface_y_mm.values().map(|s| s + sim.nominal_depth_mm),
        }
    }
}

// One per loop; boxing buys nothing.
#[allow(clippy::large_enum_variant)]
enum Law {
    Force {
        config: ForceControlConfig,
        phase: ForceControlPhase,
    },
    Impedance {
        models: [DiscreteModel; UNITS],
        states: [ImpedanceState; UNITS],
    },
}

#[derive(Debug, thiserror::Error)]
pub enum LoopError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Impedance(#[from] ImpedanceError),
}

/// Runs controller and device together for `duration` seconds. The trace has
/// one row per unit per tick; the commanded columns are the targets sent to
/// the device after workspace clamping.
pub fn closed_loop(
    preset: StiffnessPreset,
    device: &mut Device,
    settings: &LoopSettings,
    duration: f64,
    tick: f64,
) -> Result<Vec<TraceRow>, LoopError> {
    closed_loop_with(preset.law(), device, settings, duration, tick)
}

/// [`closed_loop`] for an arbitrary law.
pub fn closed_loop_with(
    law: PresetLaw,
    device: &mut Device,
    settings: &LoopSettings,
    duration: f64,
    tick: f64,
) -> Result<Vec<TraceRow>, LoopError> {
    if !(tick.is_finite() && tick > 0.0) {
        return Err(DeviceError::InvalidTick(tick).into());
    }
    let ticks = (duration.max(0.0) / tick).round() as usize;
    let mut law = match law {
        PresetLaw::ForceLimit(limit_force) => Law::Force {
            config: ForceControlConfig {
                limit_force,
                approach_speed: settings.approach_speed,
                home_y: settings.home_y,
            },
            phase: ForceControlPhase::Approaching,
        },
        PresetLaw::Impedance(params) => {
            let model = impedance::discretize(&params, tick)?;
            Law::Impedance {
                models: [model; UNITS],
                states: [ImpedanceState::ZERO; UNITS],
            }
        }
    };

    let mut rows = Vec::with_capacity(ticks * UNITS);
    for k in 1..=ticks {
        let state = *device.state();
        let sensed = state.sensed_forces();
        let current = state.positions();
        let output = match &mut law {
            Law::Force { config, phase } => {
                let (out, next) =
                    force_control_step(config, *phase, &sensed, &current.map(|p| p.y), tick);
                *phase = next;
                out
            }
            Law::Impedance { models, states } => {
                let (out, next) =
                    impedance_control_step(models, states, &sensed, &settings.nominal_y);
                *states = next;
                out
            }
        };
        let mut commands = current;
        for i in 0..UNITS {
            let wanted = ContactPoint::new(settings.contact_x[i], output.target_y[i]);
            commands[i] = device.geometry().clamp_toward(current[i], wanted);
        }
        let after = *device.tick(&commands, tick)?;
        let time_s = tick_time(k, tick);
        for (i, unit) in after.units.iter().enumerate() {
            rows.push(TraceRow {
                time_s,
                unit: i,
                cmd_x_mm: commands[i].x,
                cmd_y_mm: commands[i].y,
                act_x_mm: unit.end_effector.x,
                act_y_mm: unit.end_effector.y,
                palm_y_mm: device.palm().surface_y[i],
                force_n: unit.sensed_force,
            });
        }
    }
    Ok(rows)
}

/// Worst-case ticks for the device to reach `targets`: servo travel time at
/// rated speed plus two ticks of slack.
pub fn arrival_budget(
    device: &Device,
    targets: &[ContactPoint; UNITS],
    tick: f64,
) -> Result<usize, DeviceError> {
    let geometry = *device.geometry();
    let mut worst = 0.0_f64;
    for (unit, (target, now)) in targets.iter().zip(device.state().units).enumerate() {
        let goal = inverse_kinematics(&geometry, target)
            .map_err(|source| DeviceError::Kinematics { unit, source })?;
        worst = worst.max(travel_time(&now.angles(), &goal));
    }
    Ok((worst / tick).ceil() as usize + 2)
}

pub fn arrived(device: &Device, targets: &[ContactPoint; UNITS]) -> bool {
    device
        .state()
        .positions()
        .iter()
        .zip(targets)
        .all(|(p, t)| p.distance(t) <= ARRIVAL_TOLERANCE_MM)
}

/// Drives the device to `targets` until every unit is within
/// [`ARRIVAL_TOLERANCE_MM`] or the arrival budget runs out. Returns the number
/// of ticks used.
pub fn move_to(
    device: &mut Device,
    targets: &[ContactPoint; UNITS],
    tick: f64,
) -> Result<usize, DeviceError> {
    let budget = arrival_budget(device, targets, tick)?;
    for k in 0..budget {
        if arrived(device, targets) {
            return Ok(k);
        }
        device.tick(targets, tick)?;
    }
    Ok(budget)
}
