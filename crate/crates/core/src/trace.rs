//! CSV trace schemas shared by the simulator, the controllers and the CLI.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

/// One row per unit per tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub unit: usize,
    pub cmd_x_mm: f64,
    pub cmd_y_mm: f64,
    pub act_x_mm: f64,
    pub act_y_mm: f64,
    pub palm_y_mm: f64,
    pub force_n: f64,
}

impl TraceRow {
    pub const HEADER: [&'static str; 8] = [
        "time_s",
        "unit",
        "cmd_x_mm",
        "cmd_y_mm",
        "act_x_mm",
        "act_y_mm",
        "palm_y_mm",
        "force_n",
    ];
}

/// Single-contact impedance response, one row per sample including `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpedanceRow {
    pub time_s: f64,
    pub commanded_y_mm: f64,
    pub actual_y_mm: f64,
    pub palm_y_mm: f64,
    pub force_n: f64,
}

impl ImpedanceRow {
    pub const HEADER: [&'static str; 5] = [
        "time_s",
        "commanded_y_mm",
        "actual_y_mm",
        "palm_y_mm",
        "force_n",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub actual_id: u32,
    /// Empty until a participant response is attached.
    pub predicted_id: Option<u32>,
}

impl TrialRow {
    pub const HEADER: [&'static str; 3] = ["trial", "actual_id", "predicted_id"];
}

/// Time stamp of tick `k`, rounded to the nanosecond so that `k * 0.01` prints
/// as a short decimal.
pub fn tick_time(k: usize, tick: f64) -> f64 {
    (k as f64 * tick * 1e9).round() / 1e9
}

/// Writes the header even when `rows` is empty.
pub fn write_csv<W: Write, T: Serialize>(
    writer: W,
    header: &[&str],
    rows: &[T],
) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>, csv::Error> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .deserialize()
        .collect()
}
