//! Static tactile patterns, randomized trial schedules and confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::config::SimConfig;
use crate::control::{arrival_budget, arrived};
use crate::device::{Device, DeviceError, UNITS};
use crate::kinematics::{workspace_contains, ContactPoint, LinkageGeometry};
use crate::trace::{tick_time, TraceRow};

pub const DEFAULT_PATTERNS_CSV: &str = include_str!("../data/patterns.csv");

/// Delivery time of one static pattern, s.
pub const DEFAULT_DURATION_S: f64 = 2.0;

pub const DEFAULT_REPETITIONS: usize = 5;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("pattern table: {0}")]
    Csv(#[from] csv::Error),
    #[error("pattern {id}: {message}")]
    Invalid { id: u32, message: String },
    #[error("pattern id list is empty")]
    EmptyIds,
    #[error("repetitions must be at least 1")]
    ZeroRepetitions,
    #[error("unknown pattern id {0}")]
    UnknownId(u32),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    Inactive,
    Active(ContactPoint),
}

impl Placement {
    pub fn point(&self) -> Option<ContactPoint> {
        match self {
            Placement::Inactive => None,
            Placement::Active(p) => Some(*p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TactilePattern {
    pub id: u32,
    pub placements: [Placement; UNITS],
    pub duration: f64,
}

impl TactilePattern {
    pub fn new(
        id: u32,
        placements: [Placement; UNITS],
        duration: f64,
        geometry: &LinkageGeometry,
    ) -> Result<Self, PatternError> {
        let invalid = |message: String| PatternError::Invalid { id, message };
        if placements.iter().all(|p| p.point().is_none()) {
            return Err(invalid("needs at least one active placement".into()));
        }
        if !(duration.is_finite() && duration > 0.0) {
            return Err(invalid(format!(
                "duration must be positive, got {duration}"
            )));
        }
        for (unit, p) in placements.iter().enumerate() {
            if let Some(point) = p.point() {
                if !workspace_contains(geometry, &point) {
                    return Err(invalid(format!(
                        "unit {unit} placement ({}, {}) is outside the workspace",
                        point.x, point.y
                    )));
                }
            }
        }
        Ok(Self {
            id,
            placements,
            duration,
        })
    }
}

/// Maps grid offsets to absolute contact points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternLayout {
    pub midline_x: [f64; UNITS],
    /// Contact height for active placements (palm surface + contact depth), mm.
    pub contact_y: [f64; UNITS],
}

impl PatternLayout {
    /// Active contacts press `contact_depth_mm` past each palm surface.
    pub fn from_sim(geometry: &LinkageGeometry, sim: &SimConfig) -> Self {
        Self {
            midline_x: [geometry.midline(); UNITS],
            contact_y: sim.surface_y_mm.values().map(|s| s + sim.contact_depth_mm),
        }
    }
}

#[derive(Debug, Deserialize)]
struct PatternRecord {
    pattern: u32,
    unit0: String,
    unit1: String,
    unit2: String,
    #[serde(default)]
    duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternLibrary {
    patterns: Vec<TactilePattern>,
}

impl PatternLibrary {
    /// Parses a `pattern,unit0,unit1,unit2[,duration_s]` table where each unit
    /// cell is an x offset in mm from the unit midline or `-` for inactive.
    pub fn from_csv(
        text: &str,
        layout: &PatternLayout,
        geometry: &LinkageGeometry,
    ) -> Result<Self, PatternError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut patterns: Vec<TactilePattern> = Vec::new();
        for record in reader.deserialize::<PatternRecord>() {
            let rec = record?;
            let id = rec.pattern;
            if patterns.iter().any(|p| p.id == id) {
                return Err(PatternError::Invalid {
                    id,
                    message: "duplicate id".into(),
                });
            }
            let mut placements = [Placement::Inactive; UNITS];
            for (unit, cell) in [&rec.unit0, &rec.unit1, &rec.unit2].into_iter().enumerate() {
                placements[unit] = match cell.as_str() {
                    "-" | "" => Placement::Inactive,
                    s => {
                        let offset: f64 = s.parse().map_err(|_| PatternError::Invalid {
                            id,
                            message: format!("unit{unit} cell `{s}` is not a number or `-`"),
                        })?;
                        Placement::Active(ContactPoint::new(
                            layout.midline_x[unit] + offset,
                            layout.contact_y[unit],
                        ))
                    }
                };
            }
            let duration = rec.duration_s.unwrap_or(DEFAULT_DURATION_S);
            patterns.push(TactilePattern::new(id, placements, duration, geometry)?);
        }
        Ok(Self { patterns })
    }

    /// The built-in 11-pattern table.
    pub fn builtin(
        layout: &PatternLayout,
        geometry: &LinkageGeometry,
    ) -> Result<Self, PatternError> {
        Self::from_csv(DEFAULT_PATTERNS_CSV, layout, geometry)
    }

    pub fn patterns(&self) -> &[TactilePattern] {
        &self.patterns
    }

    pub fn ids(&self) -> Vec<u32> {
        self.patterns.iter().map(|p| p.id).collect()
    }

    pub fn get(&self, id: u32) -> Option<&TactilePattern> {
        self.patterns.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialSchedule {
    pub trials: Vec<u32>,
    pub repetitions: usize,
    pub seed: u64,
}

/// Every id `repetitions` times, in a seeded Fisher–Yates order.
pub fn build_schedule(
    ids: &[u32],
    repetitions: usize,
    seed: u64,
) -> Result<TrialSchedule, PatternError> {
    if ids.is_empty() {
        return Err(PatternError::EmptyIds);
    }
    if repetitions == 0 {
        return Err(PatternError::ZeroRepetitions);
    }
    let mut trials: Vec<u32> = ids
        .iter()
        .flat_map(|&id| std::iter::repeat_n(id, repetitions))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    trials.shuffle(&mut rng);
    Ok(TrialSchedule {
        trials,
        repetitions,
        seed,
    })
}

/// Holds the pattern for its duration: active units go to their placement,
/// inactive ones to `home`. Returns one row per unit per tick.
pub fn render_pattern(
    pattern: &TactilePattern,
    device: &mut Device,
    home: &[ContactPoint; UNITS],
    tick: f64,
) -> Result<Vec<TraceRow>, PatternError> {
    if !(tick.is_finite() && tick > 0.0) {
        return Err(DeviceError::InvalidTick(tick).into());
    }
    let mut commands = *home;
    for (cmd, placement) in commands.iter_mut().zip(&pattern.placements) {
        if let Some(p) = placement.point() {
            *cmd = p;
        }
    }
    let ticks = (pattern.duration / tick).round() as usize;
    let mut rows = Vec::with_capacity(ticks * UNITS);
    let t0 = device.state().clock;
    for k in 1..=ticks {
        let state = *device.tick(&commands, tick)?;
        push_rows(
            &mut rows,
            t0 + tick_time(k, tick),
            &commands,
            &state.units,
            device,
        );
    }
    Ok(rows)
}

/// Returns every unit to `home`; the trace covers the ticks spent moving.
pub fn home_device(
    device: &mut Device,
    home: &[ContactPoint; UNITS],
    tick: f64,
) -> Result<Vec<TraceRow>, PatternError> {
    let t0 = device.state().clock;
    let mut rows = Vec::new();
    let budget = arrival_budget(device, home, tick)?;
    for k in 1..=budget {
        if arrived(device, home) {
            break;
        }
        let state = *device.tick(home, tick)?;
        push_rows(
            &mut rows,
            t0 + tick_time(k, tick),
            home,
            &state.units,
            device,
        );
    }
    Ok(rows)
}

fn push_rows(
    rows: &mut Vec<TraceRow>,
    time_s: f64,
    commands: &[ContactPoint; UNITS],
    units: &[crate::device::UnitState; UNITS],
    device: &Device,
) {
    let time_s = (time_s * 1e9).round() / 1e9;
    for (i, unit) in units.iter().enumerate() {
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

/// Actual (rows) × predicted (columns) counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<u32>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: &[u32]) -> Self {
        let mut labels = labels.to_vec();
        labels.sort_unstable();
        labels.dedup();
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_log(labels: &[u32], log: &[(u32, u32)]) -> Result<Self, PatternError> {
        let mut m = Self::new(labels);
        for &(actual, predicted) in log {
            m.record(actual, predicted)?;
        }
        Ok(m)
    }

    fn index(&self, id: u32) -> Result<usize, PatternError> {
        self.labels
            .binary_search(&id)
            .map_err(|_| PatternError::UnknownId(id))
    }

    pub fn record(&mut self, actual: u32, predicted: u32) -> Result<(), PatternError> {
        let (i, j) = (self.index(actual)?, self.index(predicted)?);
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn count(&self, actual: u32, predicted: u32) -> Option<u64> {
        Some(self.counts[self.index(actual).ok()?][self.index(predicted).ok()?])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Row-normalised percentages; empty rows are all zero.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if total == 0 {
                            0.0
                        } else {
                            100.0 * c as f64 / total as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Diagonal over total, in `[0, 1]`; zero for an empty matrix.
    pub fn recognition_rate(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / total as f64
    }

    /// Plain-text table of row percentages plus the overall rate.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>8}", "actual");
        for l in &self.labels {
            let _ = write!(out, "{l:>7}");
        }
        let _ = writeln!(out, "{:>7}", "n");
        for (i, row) in self.row_percentages().iter().enumerate() {
            let _ = write!(out, "{:>8}", self.labels[i]);
            for pct in row {
                let _ = write!(out, "{pct:>7.1}");
            }
            let _ = writeln!(out, "{:>7}", self.row_totals()[i]);
        }
        let _ = writeln!(
            out,
            "recognition rate: {:.1}% ({} trials)",
            100.0 * self.recognition_rate(),
            self.total()
        );
        out
    }
}

/// Count of each id in a schedule.
pub fn schedule_histogram(schedule: &TrialSchedule) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for &id in &schedule.trials {
        *h.entry(id).or_insert(0) += 1;
    }
    h
}
