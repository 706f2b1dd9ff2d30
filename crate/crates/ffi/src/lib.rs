//! C ABI over `palmsim`.
//!
//! Objects are opaque handles created by `psim_*_new` and released by the
//! matching `psim_*_free`. Every fallible call returns a [`PsimStatus`]; on
//! failure `psim_last_error` describes the problem for the calling thread.
//! Panics never cross the boundary.

// Entry points null-check their pointers and otherwise trust the C caller,
// as any C API must; marking them `unsafe` would not change the contract.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::str::FromStr;

use palmsim::config::{GeometryConfig, SimConfig};
use palmsim::device::{Device, DeviceConfig, DeviceError, UNITS};
use palmsim::impedance::{self, DiscreteModel, ImpedanceParams, ImpedanceState};
use palmsim::kinematics::{
    forward_kinematics, inverse_kinematics, ContactPoint, JointAngles, KinematicsError,
    LinkageGeometry,
};
use palmsim::protocol::{self, Message, ProtocolError, UnitId, MAX_LINE_BYTES};

/// Capacity of [`PsimMessage::text`] including the terminating NUL.
pub const PSIM_TEXT_CAPACITY: usize = 1024;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Unreachable = 3,
    NotInNonTouchPose = 4,
    Malformed = 5,
    BufferTooSmall = 6,
    Config = 7,
    Panic = 8,
}

struct Failure(PsimStatus, String);

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure(PsimStatus::InvalidArgument, msg.into())
    }
}

impl From<KinematicsError> for Failure {
    fn from(e: KinematicsError) -> Self {
        let status = match e {
            KinematicsError::InvalidGeometry(_) => PsimStatus::InvalidArgument,
            _ => PsimStatus::Unreachable,
        };
        Failure(status, e.to_string())
    }
}

impl From<DeviceError> for Failure {
    fn from(e: DeviceError) -> Self {
        let status = match &e {
            DeviceError::Kinematics { .. } => PsimStatus::Unreachable,
            DeviceError::NotInNonTouchPose { .. } => PsimStatus::NotInNonTouchPose,
            DeviceError::InvalidTick(_) | DeviceError::InvalidConfig(_) => {
                PsimStatus::InvalidArgument
            }
        };
        Failure(status, e.to_string())
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        Failure(PsimStatus::Malformed, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PsimStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            PsimStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass pointers obtained from this library or valid
    // out-parameters, per the header contract.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(PsimStatus::NullPointer, format!("{what} is null")))
}

fn non_null_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: as for `non_null`.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(PsimStatus::NullPointer, format!("{what} is null")))
}

fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    let slot = non_null(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free_handle<T>(h: *mut T) {
    if !h.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(h))));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn psim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn psim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Impedance model

/// Discrete impedance model plus its state.
pub struct PsimImpedance {
    model: DiscreteModel,
    state: ImpedanceState,
}

/// Mass (kg), damping (N s/m), stiffness (N/m), sample time (s).
#[no_mangle]
pub extern "C" fn psim_impedance_new(
    mass: f64,
    damping: f64,
    stiffness: f64,
    sample_time: f64,
    out: *mut *mut PsimImpedance,
) -> PsimStatus {
    guard(|| {
        let params = ImpedanceParams::new(mass, damping, stiffness)
            .map_err(|e| Failure::invalid(e.to_string()))?;
        let model = impedance::discretize(&params, sample_time)
            .map_err(|e| Failure::invalid(e.to_string()))?;
        write_handle(
            out,
            PsimImpedance {
                model,
                state: ImpedanceState::ZERO,
            },
        )
    })
}

/// # Safety
/// `h` must come from `psim_impedance_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn psim_impedance_free(h: *mut PsimImpedance) {
    free_handle(h)
}

#[no_mangle]
pub extern "C" fn psim_impedance_reset(h: *mut PsimImpedance) -> PsimStatus {
    guard(|| {
        non_null(h, "handle")?.state = ImpedanceState::ZERO;
        Ok(())
    })
}

/// One step under external force `force` (N). Displacement in m, velocity in
/// m/s; either output may be null.
#[no_mangle]
pub extern "C" fn psim_impedance_step(
    h: *mut PsimImpedance,
    force: f64,
    displacement: *mut f64,
    velocity: *mut f64,
) -> PsimStatus {
    guard(|| {
        let h = non_null(h, "handle")?;
        if !force.is_finite() {
            return Err(Failure::invalid("force must be finite"));
        }
        h.state = impedance::step(&h.model, &h.state, force);
        if let Some(d) = unsafe { displacement.as_mut() } {
            *d = h.state.displacement;
        }
        if let Some(v) = unsafe { velocity.as_mut() } {
            *v = h.state.velocity;
        }
        Ok(())
    })
}

/// Row-major transition matrix (4 values) and input gain (2 values).
#[no_mangle]
pub extern "C" fn psim_impedance_matrices(
    h: *const PsimImpedance,
    transition: *mut f64,
    input_gain: *mut f64,
) -> PsimStatus {
    guard(|| {
        let h = non_null_ref(h, "handle")?;
        non_null(transition, "transition")?;
        non_null(input_gain, "input_gain")?;
        let t = h.model.transition;
        let g = h.model.input_gain;
        // SAFETY: the caller provides 4 and 2 writable doubles.
        unsafe {
            ptr::copy_nonoverlapping([t[0][0], t[0][1], t[1][0], t[1][1]].as_ptr(), transition, 4);
            ptr::copy_nonoverlapping(g.as_ptr(), input_gain, 2);
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Linkage

pub struct PsimLinkage {
    geometry: LinkageGeometry,
}

/// Lengths in mm, servo limits in degrees.
#[no_mangle]
pub extern "C" fn psim_linkage_new(
    base_separation: f64,
    proximal: f64,
    distal: f64,
    servo_min_deg: f64,
    servo_max_deg: f64,
    out: *mut *mut PsimLinkage,
) -> PsimStatus {
    guard(|| {
        let geometry = LinkageGeometry::new(
            base_separation,
            proximal,
            distal,
            servo_min_deg.to_radians(),
            servo_max_deg.to_radians(),
        )?;
        write_handle(out, PsimLinkage { geometry })
    })
}

#[no_mangle]
pub extern "C" fn psim_linkage_default(out: *mut *mut PsimLinkage) -> PsimStatus {
    guard(|| {
        write_handle(
            out,
            PsimLinkage {
                geometry: LinkageGeometry::default(),
            },
        )
    })
}

/// # Safety
/// `h` must come from `psim_linkage_new`/`psim_linkage_default`.
#[no_mangle]
pub unsafe extern "C" fn psim_linkage_free(h: *mut PsimLinkage) {
    free_handle(h)
}

/// Servo angles in radians to contact point in mm.
#[no_mangle]
pub extern "C" fn psim_linkage_forward(
    h: *const PsimLinkage,
    left_rad: f64,
    right_rad: f64,
    x: *mut f64,
    y: *mut f64,
) -> PsimStatus {
    guard(|| {
        let h = non_null_ref(h, "handle")?;
        let (x, y) = (non_null(x, "x")?, non_null(y, "y")?);
        let p = forward_kinematics(&h.geometry, &JointAngles::new(left_rad, right_rad))?;
        (*x, *y) = (p.x, p.y);
        Ok(())
    })
}

/// Contact point in mm to servo angles in radians.
#[no_mangle]
pub extern "C" fn psim_linkage_inverse(
    h: *const PsimLinkage,
    x: f64,
    y: f64,
    left_rad: *mut f64,
    right_rad: *mut f64,
) -> PsimStatus {
    guard(|| {
        let h = non_null_ref(h, "handle")?;
        let (l, r) = (
            non_null(left_rad, "left_rad")?,
            non_null(right_rad, "right_rad")?,
        );
        let a = inverse_kinematics(&h.geometry, &ContactPoint::new(x, y))?;
        (*l, *r) = (a.left, a.right);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Device

pub struct PsimDevice {
    device: Device,
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))
}

/// Builds a device from TOML texts; a null text selects the defaults.
///
/// # Safety
/// Non-null strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn psim_device_new(
    geometry_toml: *const c_char,
    sim_toml: *const c_char,
    seed: u64,
    out: *mut *mut PsimDevice,
) -> PsimStatus {
    guard(|| {
        let config_failure =
            |e: palmsim::config::ConfigError| Failure(PsimStatus::Config, e.to_string());
        let geometry = match opt_str(geometry_toml, "geometry_toml")? {
            Some(t) => GeometryConfig::from_str(t)
                .and_then(|g| g.to_geometry())
                .map_err(config_failure)?,
            None => LinkageGeometry::default(),
        };
        let sim = match opt_str(sim_toml, "sim_toml")? {
            Some(t) => SimConfig::from_str(t).map_err(config_failure)?,
            None => SimConfig::default(),
        };
        let device = Device::new(&DeviceConfig::from_sim(geometry, &sim), seed)?;
        write_handle(out, PsimDevice { device })
    })
}

/// # Safety
/// `h` must come from `psim_device_new`.
#[no_mangle]
pub unsafe extern "C" fn psim_device_free(h: *mut PsimDevice) {
    free_handle(h)
}

/// Advances `dt` seconds toward `targets` (x0, y0, x1, y1, x2, y2 in mm) and
/// writes three sensed forces (N). `forces` may be null.
#[no_mangle]
pub extern "C" fn psim_device_tick(
    h: *mut PsimDevice,
    targets: *const f64,
    dt: f64,
    forces: *mut f64,
) -> PsimStatus {
    guard(|| {
        let h = non_null(h, "handle")?;
        non_null_ref(targets, "targets")?;
        // SAFETY: the caller provides 2 * UNITS readable doubles.
        let xy = unsafe { std::slice::from_raw_parts(targets, 2 * UNITS) };
        let mut commands = [ContactPoint::new(0.0, 0.0); UNITS];
        for (i, c) in commands.iter_mut().enumerate() {
            *c = ContactPoint::new(xy[2 * i], xy[2 * i + 1]);
            if !c.is_finite() {
                return Err(Failure::invalid(format!("target {i} is not finite")));
            }
        }
        let sensed = h.device.tick(&commands, dt)?.sensed_forces();
        if !forces.is_null() {
            // SAFETY: the caller provides UNITS writable doubles.
            unsafe { ptr::copy_nonoverlapping(sensed.as_ptr(), forces, UNITS) };
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn psim_device_calibrate(h: *mut PsimDevice) -> PsimStatus {
    guard(|| Ok(non_null(h, "handle")?.device.calibrate()?))
}

/// Current contact point of `unit` (0..2), mm.
#[no_mangle]
pub extern "C" fn psim_device_position(
    h: *const PsimDevice,
    unit: u32,
    x: *mut f64,
    y: *mut f64,
) -> PsimStatus {
    guard(|| {
        let h = non_null_ref(h, "handle")?;
        let (x, y) = (non_null(x, "x")?, non_null(y, "y")?);
        let u = h
            .device
            .state()
            .units
            .get(unit as usize)
            .ok_or_else(|| Failure::invalid(format!("unit {unit} out of range")))?;
        (*x, *y) = (u.end_effector.x, u.end_effector.y);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Protocol

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsimMessageKind {
    Hello = 0,
    SetTarget = 1,
    ForceReport = 2,
    Calibrate = 3,
    Error = 4,
}

/// Flat view of a protocol message; fields not used by `kind` are zero.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct PsimMessage {
    /// A [`PsimMessageKind`] value.
    pub kind: u32,
    pub version: u32,
    pub unit: u32,
    pub code: u32,
    pub x: f64,
    pub y: f64,
    pub force: f64,
    /// NUL-terminated UTF-8, `Error` only.
    pub text: [c_char; PSIM_TEXT_CAPACITY],
}

fn to_c(msg: &Message) -> PsimMessage {
    let mut out = PsimMessage {
        kind: PsimMessageKind::Calibrate as u32,
        version: 0,
        unit: 0,
        code: 0,
        x: 0.0,
        y: 0.0,
        force: 0.0,
        text: [0; PSIM_TEXT_CAPACITY],
    };
    match msg {
        Message::Hello { version } => {
            out.kind = PsimMessageKind::Hello as u32;
            out.version = *version;
        }
        Message::SetTarget { unit, x, y } => {
            out.kind = PsimMessageKind::SetTarget as u32;
            out.unit = unit.index() as u32;
            (out.x, out.y) = (*x, *y);
        }
        Message::ForceReport { unit, force } => {
            out.kind = PsimMessageKind::ForceReport as u32;
            out.unit = unit.index() as u32;
            out.force = *force;
        }
        Message::Calibrate => {}
        Message::Error { code, text } => {
            out.kind = PsimMessageKind::Error as u32;
            out.code = *code;
            // Decoded lines are capped below the capacity, so this never truncates.
            for (dst, &b) in out
                .text
                .iter_mut()
                .zip(text.as_bytes().iter().take(PSIM_TEXT_CAPACITY - 1))
            {
                *dst = b as c_char;
            }
        }
    }
    out
}

fn from_c(m: &PsimMessage) -> Result<Message, Failure> {
    let unit = || {
        UnitId::new(m.unit as usize)
            .ok_or_else(|| Failure::invalid(format!("unit {} out of range", m.unit)))
    };
    const HELLO: u32 = PsimMessageKind::Hello as u32;
    const SET_TARGET: u32 = PsimMessageKind::SetTarget as u32;
    const FORCE_REPORT: u32 = PsimMessageKind::ForceReport as u32;
    const CALIBRATE: u32 = PsimMessageKind::Calibrate as u32;
    const ERROR: u32 = PsimMessageKind::Error as u32;
    let msg = match m.kind {
        HELLO => Message::Hello { version: m.version },
        SET_TARGET => Message::SetTarget {
            unit: unit()?,
            x: m.x,
            y: m.y,
        },
        FORCE_REPORT => Message::ForceReport {
            unit: unit()?,
            force: m.force,
        },
        CALIBRATE => Message::Calibrate,
        ERROR => {
            let bytes: Vec<u8> = m
                .text
                .iter()
                .take_while(|&&c| c != 0)
                .map(|&c| c as u8)
                .collect();
            if bytes.len() == PSIM_TEXT_CAPACITY {
                return Err(Failure::invalid("text is not NUL-terminated"));
            }
            let text =
                String::from_utf8(bytes).map_err(|_| Failure::invalid("text is not UTF-8"))?;
            Message::Error { code: m.code, text }
        }
        other => return Err(Failure::invalid(format!("unknown message kind {other}"))),
    };
    msg.validate()
        .map_err(|e| Failure::invalid(e.to_string()))?;
    Ok(msg)
}

/// Encodes `msg` into `buf` (not NUL-terminated). `written` receives the
/// line length, or the required capacity on `BufferTooSmall`.
#[no_mangle]
pub extern "C" fn psim_encode(
    msg: *const PsimMessage,
    buf: *mut u8,
    capacity: usize,
    written: *mut usize,
) -> PsimStatus {
    guard(|| {
        let m = from_c(non_null_ref(msg, "msg")?)?;
        let written = non_null(written, "written")?;
        let line = protocol::encode(&m);
        *written = line.len();
        if line.len() > capacity {
            return Err(Failure(
                PsimStatus::BufferTooSmall,
                format!("need {} bytes", line.len()),
            ));
        }
        non_null(buf, "buf")?;
        // SAFETY: `buf` has `capacity` writable bytes.
        unsafe { ptr::copy_nonoverlapping(line.as_ptr(), buf, line.len()) };
        Ok(())
    })
}

/// Decodes one line of `len` bytes (terminator optional).
#[no_mangle]
pub extern "C" fn psim_decode(line: *const u8, len: usize, out: *mut PsimMessage) -> PsimStatus {
    guard(|| {
        let out = non_null(out, "out")?;
        if len > MAX_LINE_BYTES {
            return Err(Failure(PsimStatus::Malformed, "line too long".into()));
        }
        let bytes = if len == 0 {
            &[][..]
        } else {
            non_null_ref(line, "line")?;
            // SAFETY: the caller provides `len` readable bytes.
            unsafe { std::slice::from_raw_parts(line, len) }
        };
        *out = to_c(&protocol::decode(bytes)?);
        Ok(())
    })
}
