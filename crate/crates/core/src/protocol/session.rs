//! Sans-IO session state machine. Feed it lines, get replies; the caller owns
//! the transport and the clock.

use thiserror::Error;

use super::{decode, ErrorCode, Message, UnitId, PROTOCOL_VERSION};
use crate::device::{DeviceError, UNITS};
use crate::kinematics::ContactPoint;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("device loop is gone")]
    Disconnected,
}

/// What a session needs from the device.
pub trait DeviceLink {
    /// Rejects targets outside the workspace, keeping the previous one.
    fn set_target(&mut self, unit: UnitId, target: ContactPoint) -> Result<(), LinkError>;
    fn calibrate(&mut self) -> Result<(), LinkError>;
    /// Advances one telemetry period and returns the sensed forces.
    fn tick(&mut self) -> Result<[f64; UNITS], LinkError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    AwaitingHello,
    Active,
    Closed,
}

/// Result of one inbound line: either exactly one reply, or a command handed
/// to the device with nothing to send back.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Reply(Message),
    Forwarded,
}

#[derive(Debug)]
pub struct Session {
    state: SessionState,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

fn link_error(err: LinkError) -> Message {
    match err {
        LinkError::Device(DeviceError::NotInNonTouchPose { unit }) => Message::error(
            ErrorCode::NotInNonTouchPose,
            format!("unit {unit} touches the palm"),
        ),
        LinkError::Device(e) => Message::error(ErrorCode::Unreachable, e.to_string()),
        LinkError::Disconnected => Message::error(ErrorCode::Malformed, "device unavailable"),
    }
}

impl Session {
    pub fn new() -> Self {
        Self {
            state: SessionState::AwaitingHello,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn close(&mut self) {
        self.state = SessionState::Closed;
    }

    pub fn handle_line(&mut self, line: &[u8], link: &mut dyn DeviceLink) -> Outcome {
        let msg = match decode(line) {
            Ok(m) => m,
            Err(e) => return Outcome::Reply(Message::error(ErrorCode::Malformed, e.to_string())),
        };
        if self.state == SessionState::Closed {
            return Outcome::Reply(Message::error(ErrorCode::Malformed, "session closed"));
        }
        match msg {
            Message::Hello { version } if version == PROTOCOL_VERSION => {
                self.state = SessionState::Active;
                Outcome::Reply(Message::Hello {
                    version: PROTOCOL_VERSION,
                })
            }
            Message::Hello { version } => Outcome::Reply(Message::error(
                ErrorCode::Malformed,
                format!("unsupported version {version}"),
            )),
            _ if self.state == SessionState::AwaitingHello => {
                Outcome::Reply(Message::error(ErrorCode::Malformed, "expected HELLO"))
            }
            Message::SetTarget { unit, x, y } => {
                match link.set_target(unit, ContactPoint::new(x, y)) {
                    Ok(()) => Outcome::Forwarded,
                    Err(e) => Outcome::Reply(link_error(e)),
                }
            }
            Message::Calibrate => match link.calibrate() {
                Ok(()) => Outcome::Reply(Message::Calibrate),
                Err(e) => Outcome::Reply(link_error(e)),
            },
            Message::ForceReport { .. } | Message::Error { .. } => Outcome::Reply(Message::error(
                ErrorCode::Malformed,
                "device-to-server message sent by client",
            )),
        }
    }

    /// Advances the device one period. Reports go out only once the session is
    /// active: three `FRC` lines, or one `ERR` if the device step failed.
    pub fn tick(&mut self, link: &mut dyn DeviceLink) -> Vec<Message> {
        let result = link.tick();
        if self.state != SessionState::Active {
            return Vec::new();
        }
        match result {
            Ok(forces) => forces
                .iter()
                .enumerate()
                .map(|(i, &force)| Message::ForceReport {
                    unit: UnitId::new(i).expect("unit index in range"),
                    force,
                })
                .collect(),
            Err(e) => vec![link_error(e)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::KinematicsError;

    #[derive(Default)]
    struct Fake {
        targets: Vec<(usize, ContactPoint)>,
        touching: bool,
        ticks: usize,
    }

    impl DeviceLink for Fake {
        fn set_target(&mut self, unit: UnitId, t: ContactPoint) -> Result<(), LinkError> {
            if t.y > 100.0 {
                return Err(DeviceError::Kinematics {
                    unit: unit.index(),
                    source: KinematicsError::Unreachable { x: t.x, y: t.y },
                }
                .into());
            }
            self.targets.push((unit.index(), t));
            Ok(())
        }
        fn calibrate(&mut self) -> Result<(), LinkError> {
            if self.touching {
                Err(DeviceError::NotInNonTouchPose { unit: 1 }.into())
            } else {
                Ok(())
            }
        }
        fn tick(&mut self) -> Result<[f64; UNITS], LinkError> {
            self.ticks += 1;
            Ok([0.0, 0.5, 1.0])
        }
    }

    fn err_code(o: &Outcome) -> Option<u32> {
        match o {
            Outcome::Reply(Message::Error { code, .. }) => Some(*code),
            _ => None,
        }
    }

    #[test]
    fn handshake_gates_commands() {
        let mut s = Session::new();
        let mut dev = Fake::default();
        assert_eq!(
            err_code(&s.handle_line(b"SET 0 20 40\n", &mut dev)),
            Some(1)
        );
        assert!(dev.targets.is_empty());
        assert!(s.tick(&mut dev).is_empty());
        assert_eq!(
            s.handle_line(b"HELLO 1\n", &mut dev),
            Outcome::Reply(Message::Hello { version: 1 })
        );
        assert_eq!(s.state(), SessionState::Active);
        assert_eq!(
            s.handle_line(b"SET 0 20 40\n", &mut dev),
            Outcome::Forwarded
        );
        assert_eq!(s.tick(&mut dev).len(), 3);
    }

    #[test]
    fn wrong_version_stays_awaiting() {
        let mut s = Session::new();
        let mut dev = Fake::default();
        assert_eq!(err_code(&s.handle_line(b"HELLO 2\n", &mut dev)), Some(1));
        assert_eq!(s.state(), SessionState::AwaitingHello);
    }

    #[test]
    fn error_codes() {
        let mut s = Session::new();
        let mut dev = Fake::default();
        s.handle_line(b"HELLO 1\n", &mut dev);
        assert_eq!(
            err_code(&s.handle_line(b"SET 0 20 400\n", &mut dev)),
            Some(2)
        );
        assert!(dev.targets.is_empty());
        assert_eq!(
            s.handle_line(b"CAL\n", &mut dev),
            Outcome::Reply(Message::Calibrate)
        );
        dev.touching = true;
        assert_eq!(err_code(&s.handle_line(b"CAL\n", &mut dev)), Some(3));
        assert_eq!(err_code(&s.handle_line(b"FRC 0 1\n", &mut dev)), Some(1));
        assert_eq!(err_code(&s.handle_line(b"ERR 5 x\n", &mut dev)), Some(1));
        assert_eq!(err_code(&s.handle_line(b"garbage\n", &mut dev)), Some(1));
        s.close();
        assert_eq!(err_code(&s.handle_line(b"CAL\n", &mut dev)), Some(1));
    }
}
