//! Device loop thread, simulated-time script driver and the TCP server.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::session::{DeviceLink, LinkError, Outcome, Session};
use super::{encode, ErrorCode, Message, UnitId, MAX_LINE_BYTES};
use crate::device::{Device, DeviceError, UNITS};
use crate::kinematics::{ContactPoint, KinematicsError};
use crate::trace::{tick_time, TraceRow};

/// A device plus the targets it is chasing. Implements [`DeviceLink`]
/// in-process; [`DeviceLoop`] runs one on its own thread.
#[derive(Debug)]
pub struct SimLink {
    device: Device,
    targets: [ContactPoint; UNITS],
    period: f64,
    ticks: usize,
    trace: Option<Vec<TraceRow>>,
}

impl SimLink {
    /// Targets start at the current pose. With `record`, every tick appends
    /// one [`TraceRow`] per unit.
    pub fn new(device: Device, period: f64, record: bool) -> Result<Self, DeviceError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(DeviceError::InvalidTick(period));
        }
        Ok(Self {
            targets: device.state().positions(),
            device,
            period,
            ticks: 0,
            trace: record.then(Vec::new),
        })
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn targets(&self) -> &[ContactPoint; UNITS] {
        &self.targets
    }

    pub fn into_parts(self) -> (Device, Vec<TraceRow>) {
        (self.device, self.trace.unwrap_or_default())
    }
}

impl DeviceLink for SimLink {
    fn set_target(&mut self, unit: UnitId, target: ContactPoint) -> Result<(), LinkError> {
        if !self.device.reachable(&target) {
            return Err(DeviceError::Kinematics {
                unit: unit.index(),
                source: KinematicsError::Unreachable {
                    x: target.x,
                    y: target.y,
                },
            }
            .into());
        }
        self.targets[unit.index()] = target;
        Ok(())
    }

    fn calibrate(&mut self) -> Result<(), LinkError> {
        Ok(self.device.calibrate()?)
    }

    fn tick(&mut self) -> Result<[f64; UNITS], LinkError> {
        let state = *self.device.tick(&self.targets, self.period)?;
        self.ticks += 1;
        if let Some(trace) = &mut self.trace {
            let time_s = tick_time(self.ticks, self.period);
            for (i, unit) in state.units.iter().enumerate() {
                trace.push(TraceRow {
                    time_s,
                    unit: i,
                    cmd_x_mm: unit.command.x,
                    cmd_y_mm: unit.command.y,
                    act_x_mm: unit.end_effector.x,
                    act_y_mm: unit.end_effector.y,
                    palm_y_mm: self.device.palm().surface_y[i],
                    force_n: unit.sensed_force,
                });
            }
        }
        Ok(state.sensed_forces())
    }
}

enum Request {
    SetTarget(UnitId, ContactPoint, mpsc::Sender<Result<(), LinkError>>),
    Calibrate(mpsc::Sender<Result<(), LinkError>>),
    Tick(mpsc::Sender<Result<[f64; UNITS], LinkError>>),
}

/// Thread that owns the simulated device. Everything else talks to it through
/// [`DeviceHandle`]s.
pub struct DeviceLoop {
    tx: Option<mpsc::Sender<Request>>,
    join: Option<JoinHandle<SimLink>>,
}

#[derive(Clone)]
pub struct DeviceHandle {
    tx: mpsc::Sender<Request>,
}

impl DeviceLoop {
    pub fn spawn(mut link: SimLink) -> Self {
        let (tx, rx) = mpsc::channel::<Request>();
        let join = thread::spawn(move || {
            // Ends once every handle and the loop's own sender are dropped.
            for req in rx {
                match req {
                    Request::SetTarget(unit, p, reply) => {
                        let _ = reply.send(link.set_target(unit, p));
                    }
                    Request::Calibrate(reply) => {
                        let _ = reply.send(link.calibrate());
                    }
                    Request::Tick(reply) => {
                        let _ = reply.send(link.tick());
                    }
                }
            }
            link
        });
        Self {
            tx: Some(tx),
            join: Some(join),
        }
    }

    pub fn handle(&self) -> DeviceHandle {
        DeviceHandle {
            tx: self.tx.clone().expect("loop running"),
        }
    }

    /// Stops the loop once outstanding handles are dropped and returns the
    /// device with its recorded trace.
    pub fn shutdown(mut self) -> (Device, Vec<TraceRow>) {
        self.tx.take();
        let link = self
            .join
            .take()
            .expect("loop running")
            .join()
            .expect("device loop panicked");
        link.into_parts()
    }
}

impl DeviceHandle {
    fn call<T>(
        &self,
        make: impl FnOnce(mpsc::Sender<Result<T, LinkError>>) -> Request,
    ) -> Result<T, LinkError> {
        let (tx, rx) = mpsc::channel();
        self.tx
            .send(make(tx))
            .map_err(|_| LinkError::Disconnected)?;
        rx.recv().map_err(|_| LinkError::Disconnected)?
    }
}

impl DeviceLink for DeviceHandle {
    fn set_target(&mut self, unit: UnitId, target: ContactPoint) -> Result<(), LinkError> {
        self.call(|r| Request::SetTarget(unit, target, r))
    }

    fn calibrate(&mut self) -> Result<(), LinkError> {
        self.call(Request::Calibrate)
    }

    fn tick(&mut self) -> Result<[f64; UNITS], LinkError> {
        self.call(Request::Tick)
    }
}

/// Splits a byte stream into lines, capping line length.
#[derive(Debug, Default)]
pub(crate) struct LineBuffer {
    buf: Vec<u8>,
    discarding: bool,
}

pub(crate) enum Chunk {
    Line(Vec<u8>),
    TooLong,
}

impl LineBuffer {
    pub(crate) fn push(&mut self, bytes: &[u8], out: &mut Vec<Chunk>) {
        for &b in bytes {
            if self.discarding {
                self.discarding = b != b'\n';
                continue;
            }
            self.buf.push(b);
            if b == b'\n' {
                out.push(Chunk::Line(std::mem::take(&mut self.buf)));
            } else if self.buf.len() >= MAX_LINE_BYTES {
                self.buf.clear();
                self.discarding = true;
                out.push(Chunk::TooLong);
            }
        }
    }
}

fn respond(session: &mut Session, chunk: Chunk, link: &mut dyn DeviceLink, out: &mut Vec<u8>) {
    let outcome = match chunk {
        Chunk::Line(line) => session.handle_line(&line, link),
        Chunk::TooLong => Outcome::Reply(Message::error(ErrorCode::Malformed, "line too long")),
    };
    if let Outcome::Reply(msg) = outcome {
        out.extend(encode(&msg));
    }
}

/// Replays `script` in simulated time and returns everything the device side
/// sent. Each entry is `(time_s, bytes)`; bytes arriving at or before tick
/// `k`'s time are handled before that tick runs. Runs `ticks` ticks of
/// `period` seconds.
pub fn run_scripted(
    session: &mut Session,
    link: &mut dyn DeviceLink,
    script: &[(f64, Vec<u8>)],
    ticks: usize,
    period: f64,
) -> Vec<u8> {
    let mut out = Vec::new();
    let mut lines = LineBuffer::default();
    let mut chunks = Vec::new();
    let mut pending = script.iter().peekable();
    for k in 0..=ticks {
        let now = tick_time(k, period);
        while let Some((_, bytes)) = pending.next_if(|(t, _)| *t <= now) {
            lines.push(bytes, &mut chunks);
            for chunk in chunks.drain(..) {
                respond(session, chunk, link, &mut out);
            }
        }
        if k < ticks {
            for msg in session.tick(link) {
                out.extend(encode(&msg));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    pub tick_period: Duration,
    /// How often the accept loop checks for shutdown.
    pub poll_interval: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            tick_period: Duration::from_millis(10),
            poll_interval: Duration::from_millis(20),
        }
    }
}

fn run_connection(
    stream: TcpStream,
    mut link: DeviceHandle,
    period: Duration,
    shutdown: &AtomicBool,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let _ = stream.set_nodelay(true);
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    let mut session = Session::new();
    let mut lines = LineBuffer::default();
    let mut chunks = Vec::new();
    let mut out = Vec::new();
    let mut buf = [0u8; 512];
    let mut next = Instant::now() + period;

    while !shutdown.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= next {
            for msg in session.tick(&mut link) {
                out.extend(encode(&msg));
            }
            next += period;
            if next <= now {
                // Fell behind; drop the missed ticks instead of bursting.
                next = now + period;
            }
        } else {
            reader.set_read_timeout(Some((next - now).max(Duration::from_micros(50))))?;
            match reader.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    lines.push(&buf[..n], &mut chunks);
                    for chunk in chunks.drain(..) {
                        respond(&mut session, chunk, &mut link, &mut out);
                    }
                }
                Err(e)
                    if matches!(
                        e.kind(),
                        ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted
                    ) => {}
                Err(e) => return Err(e),
            }
        }
        if !out.is_empty() {
            writer.write_all(&out)?;
            out.clear();
        }
    }
    session.close();
    Ok(())
}

/// Accepts one session at a time until `shutdown` is set. Further connections
/// get `ERR 1 busy` and are closed.
pub fn serve(
    listener: TcpListener,
    device: DeviceHandle,
    options: ServeOptions,
    shutdown: Arc<AtomicBool>,
) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let busy = Arc::new(AtomicBool::new(false));
    let mut current: Option<JoinHandle<()>> = None;
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((mut stream, peer)) => {
                if busy.load(Ordering::SeqCst) {
                    debug!("rejecting {peer}: session busy");
                    let _ =
                        stream.write_all(&encode(&Message::error(ErrorCode::Malformed, "busy")));
                    continue;
                }
                if let Some(done) = current.take() {
                    let _ = done.join();
                }
                info!("session from {peer}");
                busy.store(true, Ordering::SeqCst);
                let (link, busy, shutdown) = (device.clone(), busy.clone(), shutdown.clone());
                let period = options.tick_period;
                current = Some(thread::spawn(move || {
                    if let Err(e) = run_connection(stream, link, period, &shutdown) {
                        warn!("session from {peer} ended: {e}");
                    }
                    busy.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(options.poll_interval),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    if let Some(done) = current {
        let _ = done.join();
    }
    Ok(())
}
