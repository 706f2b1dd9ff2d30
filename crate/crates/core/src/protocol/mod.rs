//! Line-based server/device wire protocol.
//!
//! Every message is one ASCII line ending in a single `\n`:
//!
//! | message      | line                    |
//! |--------------|-------------------------|
//! | Hello        | `HELLO <version>`       |
//! | SetTarget    | `SET <unit> <x> <y>`    |
//! | ForceReport  | `FRC <unit> <force>`    |
//! | Calibrate    | `CAL`                   |
//! | Error        | `ERR <code> <text>`     |
//!
//! Fields are separated by exactly one space. Numbers use the shortest decimal
//! that parses back to the same `f64`. Coordinates are millimetres, forces
//! newtons. Error codes are listed in [`ErrorCode`].

mod server;
mod session;

pub use server::{run_scripted, serve, DeviceHandle, DeviceLoop, ServeOptions, SimLink};
pub use session::{DeviceLink, LinkError, Outcome, Session, SessionState};

use std::fmt;

use thiserror::Error;

use crate::device::UNITS;

pub const PROTOCOL_VERSION: u32 = 1;

/// Telemetry period, s.
pub const DEFAULT_TICK_PERIOD: f64 = 0.01;

/// Longest accepted line including the terminator.
pub const MAX_LINE_BYTES: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed line: {reason}")]
    MalformedLine { reason: String },
}

fn malformed(reason: impl Into<String>) -> ProtocolError {
    ProtocolError::MalformedLine {
        reason: reason.into(),
    }
}

/// Codes carried by `ERR` replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCode {
    /// Unparseable line, message not valid in the current session state, or
    /// session busy.
    Malformed = 1,
    /// Target outside the linkage workspace; the previous target is kept.
    Unreachable = 2,
    /// Calibration requested while a contact touches the palm.
    NotInNonTouchPose = 3,
}

impl ErrorCode {
    pub fn code(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId(u8);

impl UnitId {
    pub fn new(unit: usize) -> Option<Self> {
        (unit < UNITS).then_some(Self(unit as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello { version: u32 },
    SetTarget { unit: UnitId, x: f64, y: f64 },
    ForceReport { unit: UnitId, force: f64 },
    Calibrate,
    Error { code: u32, text: String },
}

impl Message {
    pub fn error(code: ErrorCode, text: impl Into<String>) -> Self {
        let text: String = text.into();
        Message::Error {
            code: code.code(),
            text: text.replace(['\n', '\r'], " "),
        }
    }

    /// Checks the invariants `encode` relies on.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match self {
            Message::SetTarget { x, y, .. } if !(x.is_finite() && y.is_finite()) => {
                Err(malformed("coordinates must be finite"))
            }
            Message::ForceReport { force, .. } if !force.is_finite() => {
                Err(malformed("force must be finite"))
            }
            Message::Error { text, .. } if text.contains(['\n', '\r']) => {
                Err(malformed("error text contains a line terminator"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Message {
    /// The line without its terminator.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Message::Hello { version } => write!(f, "HELLO {version}"),
            Message::SetTarget { unit, x, y } => write!(f, "SET {unit} {x} {y}"),
            Message::ForceReport { unit, force } => write!(f, "FRC {unit} {force}"),
            Message::Calibrate => f.write_str("CAL"),
            Message::Error { code, text } if text.is_empty() => write!(f, "ERR {code}"),
            Message::Error { code, text } => write!(f, "ERR {code} {text}"),
        }
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    debug_assert!(msg.validate().is_ok(), "encoding invalid message {msg:?}");
    let mut line = msg.to_string().into_bytes();
    line.push(b'\n');
    line
}

fn parse_unit(tok: &str) -> Result<UnitId, ProtocolError> {
    let n: usize = tok
        .parse()
        .map_err(|_| malformed(format!("unit `{tok}` is not an integer")))?;
    UnitId::new(n).ok_or_else(|| malformed(format!("unit {n} out of range 0..{}", UNITS - 1)))
}

fn parse_number(tok: &str) -> Result<f64, ProtocolError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| malformed(format!("`{tok}` is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(malformed(format!("`{tok}` is not finite")))
    }
}

fn arity(verb: &str, args: &[&str], n: usize) -> Result<(), ProtocolError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(malformed(format!(
            "{verb} takes {n} argument(s), got {}",
            args.len()
        )))
    }
}

/// Parses one line. A trailing `\n` (optionally preceded by `\r`) is accepted.
pub fn decode(line: &[u8]) -> Result<Message, ProtocolError> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    if line.contains(&b'\n') || line.contains(&b'\r') {
        return Err(malformed("embedded line terminator"));
    }
    let text = std::str::from_utf8(line).map_err(|_| malformed("not valid UTF-8"))?;
    if text.is_empty() {
        return Err(malformed("empty line"));
    }
    let (verb, rest) = match text.split_once(' ') {
        Some((v, r)) => (v, Some(r)),
        None => (text, None),
    };

    if verb == "ERR" {
        let rest = rest.ok_or_else(|| malformed("ERR needs a code"))?;
        let (code, text) = match rest.split_once(' ') {
            Some((c, t)) => (c, t),
            None => (rest, ""),
        };
        let code = code
            .parse()
            .map_err(|_| malformed(format!("error code `{code}` is not an integer")))?;
        return Ok(Message::Error {
            code,
            text: text.to_string(),
        });
    }

    let args: Vec<&str> = match rest {
        Some(r) => r.split(' ').collect(),
        None => Vec::new(),
    };
    if args.iter().any(|a| a.is_empty()) {
        return Err(malformed("fields must be separated by single spaces"));
    }
    match verb {
        "HELLO" => {
            arity(verb, &args, 1)?;
            let version = args[0]
                .parse()
                .map_err(|_| malformed(format!("version `{}` is not an integer", args[0])))?;
            Ok(Message::Hello { version })
        }
        "SET" => {
            arity(verb, &args, 3)?;
            Ok(Message::SetTarget {
                unit: parse_unit(args[0])?,
                x: parse_number(args[1])?,
                y: parse_number(args[2])?,
            })
        }
        "FRC" => {
            arity(verb, &args, 2)?;
            Ok(Message::ForceReport {
                unit: parse_unit(args[0])?,
                force: parse_number(args[1])?,
            })
        }
        "CAL" => {
            arity(verb, &args, 0)?;
            Ok(Message::Calibrate)
        }
        other => Err(malformed(format!(
            "unknown verb `{}`",
            other.escape_debug()
        ))),
    }
}
