//! Command-line front end. `main.rs` only parses and maps errors to exit codes.

use std::fs::{self, File};
use std::io::{self, BufRead, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::config::{GeometryConfig, SimConfig};
use crate::control::{closed_loop_with, move_to, LoopSettings, PresetLaw, StiffnessPreset};
use crate::device::{Device, DeviceConfig, UNITS};
use crate::impedance::{self, ImpedanceParams};
use crate::kinematics::{ContactPoint, LinkageGeometry};
use crate::patterns::{
    build_schedule, home_device, render_pattern, ConfusionMatrix, PatternLayout, PatternLibrary,
    DEFAULT_PATTERNS_CSV, DEFAULT_REPETITIONS,
};
use crate::protocol::{serve, DeviceLoop, ServeOptions, SimLink};
use crate::trace::{read_csv, tick_time, write_csv, ImpedanceRow, TraceRow, TrialRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 usage, 2 configuration or input file, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "palmsim", version, about = "Palm tactile display simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Impedance response of one contact, open loop or closed on the device.
    Impedance(ImpedanceArgs),
    /// Render a randomized pattern-recognition session.
    Experiment(ExperimentArgs),
    /// Run the device behind the line protocol over TCP.
    Serve(ServeArgs),
    /// Confusion matrix and recognition rate of a trial log.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct DeviceArgs {
    /// Linkage geometry (TOML). Built-in default if omitted.
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Palm, sensor and controller settings (TOML).
    #[arg(long)]
    pub sim: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Control/telemetry period, s.
    #[arg(long, default_value_t = 0.01)]
    pub tick: f64,
}

#[derive(Debug, Args)]
pub struct ImpedanceArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    /// P1..P6. P4..P6 (force limit) need --closed-loop.
    #[arg(
        long,
        required_unless_present = "stiffness",
        conflicts_with = "stiffness"
    )]
    pub preset: Option<StiffnessPreset>,
    /// Explicit virtual mass, kg (with --damping and --stiffness).
    #[arg(long, requires_all = ["damping", "stiffness"])]
    pub mass: Option<f64>,
    /// N·s/m
    #[arg(long, requires_all = ["mass", "stiffness"])]
    pub damping: Option<f64>,
    /// N/m
    #[arg(long, requires_all = ["mass", "damping"])]
    pub stiffness: Option<f64>,
    /// Length of the run, s.
    #[arg(long, default_value_t = 2.0, conflicts_with = "force_file")]
    pub duration: f64,
    /// Constant external force along +y, N (open loop).
    #[arg(long, default_value_t = 1.0, conflicts_with_all = ["force_file", "closed_loop"])]
    pub force: f64,
    /// One force sample per tick, N; sets the run length.
    #[arg(long, conflicts_with = "closed_loop")]
    pub force_file: Option<PathBuf>,
    /// Close the loop through the simulated palm and write the per-unit trace.
    #[arg(long)]
    pub closed_loop: bool,
    /// Output CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Pattern table (CSV). Built-in eleven patterns if omitted.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_REPETITIONS)]
    pub repetitions: usize,
    /// Overrides every pattern's duration, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Participant answers, one pattern id per trial in schedule order.
    /// `-` reads one line per trial from standard input after each pattern.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Trial log CSV; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Device trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub device: DeviceArgs,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Device trace written on shutdown.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trial log written by `experiment`.
    pub log: PathBuf,
    /// Pattern table defining the labels. Built-in if omitted.
    #[arg(long)]
    pub patterns: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Impedance(a) => cmd_impedance(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

struct Setup {
    geometry: LinkageGeometry,
    sim: SimConfig,
    device: Device,
    tick: f64,
}

fn setup(args: &DeviceArgs) -> Result<Setup, CliError> {
    if !(args.tick.is_finite() && args.tick > 0.0) {
        return Err(CliError::Usage(format!(
            "--tick must be positive, got {}",
            args.tick
        )));
    }
    let geometry = match &args.geometry {
        Some(p) => GeometryConfig::load(p)
            .and_then(|g| g.to_geometry())
            .map_err(config_err)?,
        None => LinkageGeometry::default(),
    };
    let sim = match &args.sim {
        Some(p) => SimConfig::load(p).map_err(config_err)?,
        None => SimConfig::default(),
    };
    let device =
        Device::new(&DeviceConfig::from_sim(geometry, &sim), args.seed).map_err(config_err)?;
    Ok(Setup {
        geometry,
        sim,
        device,
        tick: args.tick,
    })
}

fn check_duration(d: f64) -> Result<f64, CliError> {
    if d.is_finite() && d >= 0.0 {
        Ok(d)
    } else {
        Err(CliError::Usage(format!(
            "--duration must be non-negative, got {d}"
        )))
    }
}

fn write_rows<T: Serialize>(
    out: Option<&Path>,
    header: &[&str],
    rows: &[T],
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let file =
                File::create(path).map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
            write_csv(BufWriter::new(file), header, rows).map_err(runtime_err)
        }
        None => write_csv(io::stdout().lock(), header, rows).map_err(runtime_err),
    }
}

/// Numbers separated by whitespace or newlines; `#` starts a comment.
fn read_numbers<T: std::str::FromStr>(path: &Path) -> Result<Vec<T>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split_whitespace() {
            let v = tok.parse().map_err(|_| {
                config_err(format!(
                    "{}:{}: `{tok}` is not a valid value",
                    path.display(),
                    n + 1
                ))
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

fn cmd_impedance(a: ImpedanceArgs) -> Result<(), CliError> {
    let Setup {
        geometry,
        sim,
        mut device,
        tick,
    } = setup(&a.device)?;

    let law = match (a.preset, a.mass, a.damping, a.stiffness) {
        (Some(p), ..) => p.law(),
        (None, Some(m), Some(d), Some(k)) => PresetLaw::Impedance(
            ImpedanceParams::new(m, d, k).map_err(|e| CliError::Usage(e.to_string()))?,
        ),
        _ => {
            return Err(CliError::Usage(
                "give --preset or --mass/--damping/--stiffness".into(),
            ))
        }
    };

    if a.closed_loop {
        let duration = check_duration(a.duration)?;
        let settings = LoopSettings::from_sim(&geometry, &sim);
        let rows =
            closed_loop_with(law, &mut device, &settings, duration, tick).map_err(runtime_err)?;
        return write_rows(a.out.as_deref(), &TraceRow::HEADER, &rows);
    }

    let params = match law {
        PresetLaw::Impedance(p) => p,
        PresetLaw::ForceLimit(_) => {
            return Err(CliError::Usage(
                "force-limit presets need --closed-loop".into(),
            ));
        }
    };
    let forces: Vec<f64> = match &a.force_file {
        Some(p) => read_numbers(p)?,
        None => {
            if !a.force.is_finite() {
                return Err(CliError::Usage("--force must be finite".into()));
            }
            let n = (check_duration(a.duration)? / tick).round() as usize;
            vec![a.force; n]
        }
    };
    if forces.iter().any(|f| !f.is_finite()) {
        return Err(config_err("force samples must be finite"));
    }
    if forces.is_empty() {
        return write_rows::<ImpedanceRow>(a.out.as_deref(), &ImpedanceRow::HEADER, &[]);
    }
    let states = impedance::simulate(&params, tick, &forces).map_err(config_err)?;

    // The middle unit follows the commanded height, clamped to its workspace.
    const UNIT: usize = 1;
    let nominal = sim.home_y_mm;
    let x = geometry.midline();
    let surface = device.palm().surface_y[UNIT];
    let mut rows = Vec::with_capacity(states.len());
    for (k, s) in states.iter().enumerate() {
        let commanded_y = nominal + s.displacement * 1000.0;
        if k > 0 {
            let mut commands = device.state().positions();
            commands[UNIT] =
                geometry.clamp_toward(commands[UNIT], ContactPoint::new(x, commanded_y));
            device.tick(&commands, tick).map_err(runtime_err)?;
        }
        rows.push(ImpedanceRow {
            time_s: tick_time(k, tick),
            commanded_y_mm: commanded_y,
            actual_y_mm: device.state().units[UNIT].end_effector.y,
            palm_y_mm: surface,
            force_n: forces[k.min(forces.len() - 1)],
        });
    }
    write_rows(a.out.as_deref(), &ImpedanceRow::HEADER, &rows)
}

fn load_library(
    path: Option<&Path>,
    geometry: &LinkageGeometry,
    sim: &SimConfig,
) -> Result<PatternLibrary, CliError> {
    let text = match path {
        Some(p) => {
            fs::read_to_string(p).map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => DEFAULT_PATTERNS_CSV.to_string(),
    };
    PatternLibrary::from_csv(&text, &PatternLayout::from_sim(geometry, sim), geometry)
        .map_err(config_err)
}

/// Next non-blank, non-comment line as a pattern id; `None` at end of input.
fn read_answer(input: &mut impl BufRead) -> io::Result<Option<Result<u32, String>>> {
    let mut line = String::new();
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        let text = line.split('#').next().unwrap_or("").trim();
        if !text.is_empty() {
            return Ok(Some(
                text.parse()
                    .map_err(|_| format!("`{text}` is not a pattern id")),
            ));
        }
    }
}

fn cmd_experiment(a: ExperimentArgs) -> Result<(), CliError> {
    let Setup {
        geometry,
        sim,
        mut device,
        tick,
    } = setup(&a.device)?;
    let library = load_library(a.patterns.as_deref(), &geometry, &sim)?;
    let schedule = build_schedule(&library.ids(), a.repetitions, a.device.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let duration = a.duration.map(check_duration).transpose()?;

    let interactive = a.responses.as_deref() == Some(Path::new("-"));
    let mut responses: Option<Vec<u32>> = match &a.responses {
        Some(_) if interactive => Some(Vec::with_capacity(schedule.trials.len())),
        Some(p) => Some(read_numbers(p)?),
        None => None,
    };
    if let Some(r) = responses.as_ref().filter(|_| !interactive) {
        if r.len() != schedule.trials.len() {
            return Err(config_err(format!(
                "{} responses for {} trials",
                r.len(),
                schedule.trials.len()
            )));
        }
    }
    let mut stdin = io::stdin().lock();

    let home = [ContactPoint::new(geometry.midline(), sim.home_y_mm); UNITS];
    move_to(&mut device, &home, tick).map_err(runtime_err)?;
    device.calibrate().map_err(runtime_err)?;

    let mut trace = Vec::new();
    let mut log = Vec::with_capacity(schedule.trials.len());
    for (i, &id) in schedule.trials.iter().enumerate() {
        let mut pattern = library.get(id).expect("scheduled id in library").clone();
        if let Some(d) = duration {
            pattern.duration = d;
        }
        trace.extend(home_device(&mut device, &home, tick).map_err(runtime_err)?);
        trace.extend(render_pattern(&pattern, &mut device, &home, tick).map_err(runtime_err)?);
        if interactive {
            eprint!("trial {}/{}: pattern? ", i + 1, schedule.trials.len());
            let answer = read_answer(&mut stdin)
                .map_err(runtime_err)?
                .ok_or_else(|| {
                    config_err(format!(
                        "{} responses for {} trials",
                        i,
                        schedule.trials.len()
                    ))
                })?;
            responses
                .as_mut()
                .expect("interactive responses")
                .push(answer.map_err(config_err)?);
        }
        log.push(TrialRow {
            trial: i + 1,
            actual_id: id,
            predicted_id: responses.as_ref().map(|r| r[i]),
        });
    }
    info!("{} trials, {} trace rows", log.len(), trace.len());

    write_rows(a.out.as_deref(), &TrialRow::HEADER, &log)?;
    if let Some(p) = &a.trace {
        write_rows(Some(p), &TraceRow::HEADER, &trace)?;
    }
    if let Some(r) = &responses {
        let pairs: Vec<(u32, u32)> = schedule
            .trials
            .iter()
            .copied()
            .zip(r.iter().copied())
            .collect();
        let matrix = ConfusionMatrix::from_log(&library.ids(), &pairs).map_err(config_err)?;
        // Keep stdout clean when it carries the log.
        if a.out.is_some() {
            print!("{}", matrix.report());
        } else {
            eprint!("{}", matrix.report());
        }
    }
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let geometry = LinkageGeometry::default();
    let library = load_library(a.patterns.as_deref(), &geometry, &SimConfig::default())?;
    let file = File::open(&a.log).map_err(|e| config_err(format!("{}: {e}", a.log.display())))?;
    let rows: Vec<TrialRow> = read_csv(file).map_err(config_err)?;
    let mut pairs = Vec::with_capacity(rows.len());
    for r in &rows {
        let predicted = r
            .predicted_id
            .ok_or_else(|| config_err(format!("trial {} has no response", r.trial)))?;
        pairs.push((r.actual_id, predicted));
    }
    let matrix = ConfusionMatrix::from_log(&library.ids(), &pairs).map_err(config_err)?;
    print!("{}", matrix.report());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), CliError> {
    let Setup { device, tick, .. } = setup(&a.device)?;
    let listener =
        TcpListener::bind(&a.listen).map_err(|e| runtime_err(format!("{}: {e}", a.listen)))?;
    let shutdown = Arc::new(AtomicBool::new(false));
    {
        let flag = shutdown.clone();
        ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).map_err(runtime_err)?;
    }
    let link = SimLink::new(device, tick, a.out.is_some()).map_err(runtime_err)?;
    let device_loop = DeviceLoop::spawn(link);
    eprintln!(
        "listening on {}",
        listener.local_addr().map_err(runtime_err)?
    );
    let options = ServeOptions {
        tick_period: Duration::from_secs_f64(tick),
        ..ServeOptions::default()
    };
    let result = serve(listener, device_loop.handle(), options, shutdown);
    let (_, trace) = device_loop.shutdown();
    result.map_err(runtime_err)?;
    if let Some(p) = &a.out {
        write_rows(Some(p), &TraceRow::HEADER, &trace)?;
    }
    io::stdout().flush().map_err(runtime_err)?;
    Ok(())
}
